"""Synthetic regression testbeds with closed-form population losses.

Both problems live in the eigenbasis of a power-law input covariance
(eigenvalue_i = 1 / i^alpha, normalized so the first equals 1), so population
losses, gradients, and Hessian diagonals are available exactly and no
minibatch noise enters the benchmark numbers.  A sampling mode is still
provided for realism.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .quant import QuantFormat
from .rounding import RoundingMode, apply_rounding
from .tensorcore import NS_INIT, NS_TASK, RngStream, stream_id

__all__ = [
    "PowerLawTask",
    "TwoLayerTask",
    "quadratic_loss_grad",
    "twolayer_loss_grads",
    "gt_rounded_loss",
]


def _power_law_eigenvalues(d: int, alpha: float) -> np.ndarray:
    return 1.0 / np.arange(1, d + 1, dtype=np.float64) ** alpha


@dataclass
class PowerLawTask:
    """Linear regression in the eigenbasis of a power-law covariance.

    Targets are noiseless: y = w_star . x, so the population loss is
    0.5 * (w - w_star)^T H (w - w_star) with diagonal H.
    """

    d: int
    alpha: float
    eigenvalues: np.ndarray
    w_star: np.ndarray

    @classmethod
    def build(cls, d: int, alpha: float = 1.1, seed: int = 0, w_star=None) -> "PowerLawTask":
        lam = _power_law_eigenvalues(d, alpha)
        if w_star is None:
            w_star = RngStream(seed, stream_id(NS_TASK)).normal(d)
        else:
            w_star = np.asarray(w_star, dtype=np.float64).reshape(d)
        return cls(d=d, alpha=alpha, eigenvalues=lam, w_star=w_star)

    def loss(self, w: np.ndarray) -> float:
        r = np.asarray(w, dtype=np.float64) - self.w_star
        return float(0.5 * r @ (self.eigenvalues * r))

    def loss_grad(self, w: np.ndarray) -> tuple[float, np.ndarray]:
        r = np.asarray(w, dtype=np.float64) - self.w_star
        if r.shape != self.w_star.shape:
            raise ValueError(f"weight shape {r.shape} does not match task dim {self.w_star.shape}")
        g = self.eigenvalues * r
        return float(0.5 * r @ g), g

    def hessian_diag(self) -> np.ndarray:
        return self.eigenvalues.copy()

    # -- sampling mode (excluded from benchmark thresholds) -----------------

    def sample_batch(self, rng: RngStream, batch: int) -> tuple[np.ndarray, np.ndarray]:
        x = rng.normal(batch * self.d).reshape(batch, self.d) * np.sqrt(self.eigenvalues)
        return x, x @ self.w_star

    def batch_loss_grad(self, w: np.ndarray, x: np.ndarray, y: np.ndarray) -> tuple[float, np.ndarray]:
        err = x @ w - y
        return float(0.5 * np.mean(err * err)), x.T @ err / x.shape[0]

    # -- trainer interface ---------------------------------------------------

    def init_weights(self, seed: int) -> list[np.ndarray]:
        # deterministic zero start; the optimum is set by w_star
        return [np.zeros(self.d)]

    def loss_of(self, weights: list[np.ndarray]) -> float:
        return self.loss(weights[0])

    def loss_and_grads(self, weights: list[np.ndarray]) -> tuple[float, list[np.ndarray]]:
        loss, g = self.loss_grad(weights[0])
        return loss, [g]

    def curvature_diags(self, weights: list[np.ndarray]) -> list[np.ndarray]:
        return [self.hessian_diag()]


def quadratic_loss_grad(w, task: PowerLawTask) -> tuple[float, np.ndarray]:
    return task.loss_grad(np.asarray(w, dtype=np.float64))


@dataclass
class TwoLayerTask:
    """Two-layer linear network f(x) = (1/k) W2 W1 x on the power-law input.

    The population loss depends on the weights only through the effective
    vector v = (1/k) (W2 W1)^T, so it is a quadratic in v and exact
    gradients for W1 (k x d) and W2 (1 x k) follow by the chain rule.
    """

    d: int
    k: int
    alpha: float
    eigenvalues: np.ndarray
    w_star: np.ndarray

    @classmethod
    def build(cls, d: int, k: int, alpha: float = 1.1, seed: int = 0, w_star=None) -> "TwoLayerTask":
        lam = _power_law_eigenvalues(d, alpha)
        if w_star is None:
            w_star = RngStream(seed, stream_id(NS_TASK)).normal(d)
        else:
            w_star = np.asarray(w_star, dtype=np.float64).reshape(d)
        return cls(d=d, k=k, alpha=alpha, eigenvalues=lam, w_star=w_star)

    def effective_vector(self, w1: np.ndarray, w2: np.ndarray) -> np.ndarray:
        return (w2 @ w1).reshape(self.d) / self.k

    def loss(self, w1: np.ndarray, w2: np.ndarray) -> float:
        r = self.effective_vector(w1, w2) - self.w_star
        return float(0.5 * r @ (self.eigenvalues * r))

    def loss_grads(self, w1, w2) -> tuple[float, np.ndarray, np.ndarray]:
        w1 = np.asarray(w1, dtype=np.float64)
        w2 = np.asarray(w2, dtype=np.float64)
        if w1.shape != (self.k, self.d) or w2.shape != (1, self.k):
            raise ValueError(
                f"expected W1 {(self.k, self.d)} and W2 {(1, self.k)}, got {w1.shape} and {w2.shape}"
            )
        r = self.effective_vector(w1, w2) - self.w_star
        rh = self.eigenvalues * r
        loss = float(0.5 * r @ rh)
        g1 = (w2.T @ rh[None, :]) / self.k
        g2 = (w1 @ rh)[None, :] / self.k
        return loss, g1, g2

    def curvature_diags(self, weights: list[np.ndarray]) -> list[np.ndarray]:
        """Exact Hessian diagonal of the population loss for each weight tensor."""
        w1, w2 = weights
        c1 = (w2.reshape(self.k, 1) ** 2 / self.k**2) * self.eigenvalues[None, :]
        c2 = ((w1 * w1) @ self.eigenvalues / self.k**2)[None, :]
        return [c1, c2]

    def gt_weights(self) -> tuple[np.ndarray, np.ndarray]:
        """Width-k construction whose effective vector is exactly w_star."""
        return np.tile(self.w_star, (self.k, 1)), np.ones((1, self.k))

    # -- trainer interface ---------------------------------------------------

    def init_weights(self, seed: int) -> list[np.ndarray]:
        w1 = RngStream(seed, stream_id(NS_INIT, index=0)).normal(self.k * self.d).reshape(self.k, self.d)
        w2 = RngStream(seed, stream_id(NS_INIT, index=1)).normal(self.k).reshape(1, self.k)
        return [w1, w2]

    def loss_of(self, weights: list[np.ndarray]) -> float:
        return self.loss(weights[0], weights[1])

    def loss_and_grads(self, weights: list[np.ndarray]) -> tuple[float, list[np.ndarray]]:
        loss, g1, g2 = self.loss_grads(weights[0], weights[1])
        return loss, [g1, g2]


def twolayer_loss_grads(w1, w2, task: TwoLayerTask) -> tuple[float, np.ndarray, np.ndarray]:
    return task.loss_grads(w1, w2)


def gt_rounded_loss(task: TwoLayerTask, fmt: QuantFormat, mode: RoundingMode) -> float:
    """Population loss of the rounded ground-truth construction."""
    w1, w2 = task.gt_weights()
    return task.loss(apply_rounding(w1, fmt, mode), apply_rounding(w2, fmt, mode))
