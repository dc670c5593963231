"""One-layer softmax-attention predictor.

f(X) = V X softmax(Xt^T W xt_N), where Xt = [X; P] stacks tokens on
positional columns and the query column xt_N carries positions only.
The softmax has no temperature scaling.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .posembed import PositionalMatrix, augment, normalize_columns

__all__ = ["Params", "AttentionOutput", "softmax", "attention_logits",
           "forward", "predict", "loss_value"]


@dataclass(frozen=True)
class Params:
    """Value matrix V (K x K) and the four blocks of the attention matrix
    W = [[W11, W12], [W21, W22]] acting on stacked [token; position] vectors."""

    V: np.ndarray
    W11: np.ndarray  # K x K
    W12: np.ndarray  # K x M
    W21: np.ndarray  # M x K
    W22: np.ndarray  # M x M
    init: str = "zero"
    sigma: float = 0.0

    def __post_init__(self):
        K = self.V.shape[0]
        M = self.W22.shape[0]
        expected = {"V": (K, K), "W11": (K, K), "W12": (K, M),
                    "W21": (M, K), "W22": (M, M)}
        for name, shape in expected.items():
            got = getattr(self, name).shape
            if got != shape:
                raise ValueError(f"{name} has shape {got}, expected {shape}")

    @property
    def K(self) -> int:
        return self.V.shape[0]

    @property
    def M(self) -> int:
        return self.W22.shape[0]

    @staticmethod
    def zeros(K: int, M: int) -> "Params":
        return Params(
            V=np.zeros((K, K)), W11=np.zeros((K, K)), W12=np.zeros((K, M)),
            W21=np.zeros((M, K)), W22=np.zeros((M, M)), init="zero", sigma=0.0,
        )

    @staticmethod
    def gaussian(K: int, M: int, sigma: float, rng: np.random.Generator) -> "Params":
        return Params(
            V=sigma * rng.standard_normal((K, K)),
            W11=sigma * rng.standard_normal((K, K)),
            W12=sigma * rng.standard_normal((K, M)),
            W21=sigma * rng.standard_normal((M, K)),
            W22=sigma * rng.standard_normal((M, M)),
            init="gaussian", sigma=sigma,
        )

    def with_updates(self, **kwargs) -> "Params":
        return replace(self, **kwargs)


@dataclass(frozen=True)
class AttentionOutput:
    """Forward-pass internals for one episode."""

    z: np.ndarray  # attention logits, length N
    S: np.ndarray  # attention weights, length N
    f: np.ndarray  # output vector, length K
    pred: int  # 1-based predicted node


def softmax(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    if not np.all(np.isfinite(z)):
        raise FloatingPointError("non-finite attention logits")
    e = np.exp(z - np.max(z))
    return e / e.sum()


def attention_logits(params: Params, X: np.ndarray, pos: PositionalMatrix,
                     normalize: bool = False) -> np.ndarray:
    """z = Xt^T W xt_N computed blockwise; x_N = 0 so the query side only
    sees W12/W22 acting on p_N."""
    Xt = augment(X, pos)
    if normalize:
        Xt = normalize_columns(Xt)
    K = params.K
    xq, pq = Xt[:K, -1], Xt[K:, -1]
    w_query = np.concatenate([
        params.W11 @ xq + params.W12 @ pq,
        params.W21 @ xq + params.W22 @ pq,
    ])
    return Xt.T @ w_query


def forward(params: Params, X: np.ndarray, pos: PositionalMatrix,
            normalize: bool = False) -> AttentionOutput:
    z = attention_logits(params, X, pos, normalize=normalize)
    S = softmax(z)
    f = params.V @ (X @ S)
    return AttentionOutput(z=z, S=S, f=f, pred=int(np.argmax(f)) + 1)


def predict(params: Params, X: np.ndarray, pos: PositionalMatrix,
            normalize: bool = False) -> int:
    """Predicted node: smallest index attaining the max of f."""
    return forward(params, X, pos, normalize=normalize).pred


def loss_value(f: np.ndarray, y: int, eps: float) -> float:
    """-log(f_y + eps); raises if the shifted score is outside the log domain."""
    arg = float(f[y - 1]) + eps
    if arg <= 0.0:
        raise ValueError(f"log-loss argument must be positive, got {arg}")
    return -float(np.log(arg))
