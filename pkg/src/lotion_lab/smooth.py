"""Smoothed objectives under randomized-rounding noise.

Two evaluators of the expected loss E[L(w + noise)]:

* an exact closed form for quadratic losses, L(w) + 0.5 * tr(H Sigma), where
  Sigma is the diagonal rounding-noise covariance;
* a curvature-weighted surrogate for general losses,
  L(w) + (lam / 2) * sum_i curvature_i * sigma_i^2(w), whose gradient treats
  the curvature diagonal (and the block scales) as constants.

A Monte-Carlo reference evaluator is included so either form can be checked
against brute-force sampling.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .quant import QuantFormat
from .rounding import rr_sample_many, rr_variance, weighted_variance_grad
from .tensorcore import RngStream, ensure_finite

__all__ = [
    "FisherDiag",
    "fisher_update",
    "smoothed_quadratic_exact",
    "lotion_gn_loss",
    "lotion_gn_grad",
    "McEstimate",
    "mc_smoothed_loss",
]


@dataclass
class FisherDiag:
    """EMA of squared gradients approximating the Gauss-Newton diagonal.

    Reads are bias-corrected by 1 / (1 - beta^step_count), as in Adam's
    second-moment accumulator.
    """

    v: np.ndarray
    beta: float = 0.999
    step_count: int = 0

    @classmethod
    def zeros(cls, shape, beta: float = 0.999) -> "FisherDiag":
        return cls(v=np.zeros(shape, dtype=np.float64), beta=beta)

    def update(self, grad) -> None:
        g = np.asarray(grad, dtype=np.float64)
        ensure_finite(g, "gradient")
        self.v = self.beta * self.v + (1.0 - self.beta) * g * g
        self.step_count += 1

    def read(self) -> np.ndarray:
        if self.step_count == 0:
            return self.v.copy()
        return self.v / (1.0 - self.beta**self.step_count)


def fisher_update(f: FisherDiag, grad) -> FisherDiag:
    f.update(grad)
    return f


def _quadratic_terms(w, hess, w_star):
    w = np.asarray(w, dtype=np.float64)
    w_star = np.asarray(w_star, dtype=np.float64)
    hess = np.asarray(hess, dtype=np.float64)
    if w.shape != w_star.shape:
        raise ValueError(f"shape mismatch: w {w.shape} vs w_star {w_star.shape}")
    r = w - w_star
    if hess.ndim == 1:
        if hess.shape[0] != w.shape[0]:
            raise ValueError(f"shape mismatch: hess {hess.shape} vs w {w.shape}")
        return float(0.5 * r @ (hess * r)), hess
    if hess.shape != (w.shape[0], w.shape[0]):
        raise ValueError(f"shape mismatch: hess {hess.shape} vs w {w.shape}")
    return float(0.5 * r @ hess @ r), np.diag(hess)


def smoothed_quadratic_exact(w, hess, w_star, fmt: QuantFormat) -> float:
    """Exact expected quadratic loss under rounding noise.

    `hess` may be a full symmetric PSD matrix or its diagonal; only the
    diagonal enters the noise term because distinct coordinates round
    independently.
    """
    base, diag = _quadratic_terms(w, hess, w_star)
    sigma2 = rr_variance(w, fmt).sigma2
    return base + 0.5 * float(diag @ sigma2)


def _check_curvature(curvature_diag, w) -> np.ndarray:
    c = np.asarray(curvature_diag, dtype=np.float64)
    if c.shape != np.asarray(w).shape:
        raise ValueError(f"curvature shape {c.shape} does not match weights {np.asarray(w).shape}")
    if np.any(c < 0):
        raise ValueError(f"curvature diagonal must be nonnegative, min = {c.min()}")
    return c


def lotion_gn_loss(w, base_loss: float, curvature_diag, fmt: QuantFormat, lam: float) -> float:
    """base_loss + (lam / 2) * sum_i curvature_i * sigma_i^2(w)."""
    if lam < 0:
        raise ValueError(f"lam must be >= 0, got {lam}")
    c = _check_curvature(curvature_diag, w)
    if lam == 0.0:
        return float(base_loss)
    sigma2 = rr_variance(w, fmt).sigma2
    return float(base_loss) + 0.5 * lam * float(c.reshape(-1) @ sigma2.reshape(-1))


def lotion_gn_grad(
    w,
    base_grad,
    curvature_diag,
    fmt: QuantFormat,
    lam: float,
    differentiate_scale: bool = False,
) -> np.ndarray:
    """Gradient of the curvature-weighted objective; curvature held constant.

    Block scales are likewise treated as constants unless
    `differentiate_scale` is set, which propagates each scale through its
    block's largest-magnitude coordinate.
    """
    if lam < 0:
        raise ValueError(f"lam must be >= 0, got {lam}")
    base_grad = np.asarray(base_grad, dtype=np.float64)
    c = _check_curvature(curvature_diag, w)
    if lam == 0.0:
        return base_grad.copy()
    reg = weighted_variance_grad(w, fmt, c, differentiate_scale=differentiate_scale)
    return base_grad + 0.5 * lam * reg


@dataclass(frozen=True)
class McEstimate:
    mean: float
    stderr: float
    n: int


def mc_smoothed_loss(
    loss_fn,
    w,
    fmt: QuantFormat,
    rng: RngStream,
    n_draws: int,
    chunk: int = 20000,
    batched: bool = False,
) -> McEstimate:
    """Monte-Carlo estimate of E[loss_fn(RR(w))] with its standard error.

    Brute-force reference path: draws go through rr_sample_many and the loss
    is evaluated per sample, independent of any closed form.  With
    `batched=True`, loss_fn receives a (m, ...) stack of samples and must
    return m losses.
    """
    w = np.asarray(w, dtype=np.float64)
    total = 0.0
    total_sq = 0.0
    done = 0
    while done < n_draws:
        m = min(chunk, n_draws - done)
        samples = rr_sample_many(w, fmt, rng, m)
        if batched:
            vals = np.asarray(loss_fn(samples), dtype=np.float64)
            if vals.shape != (m,):
                raise ValueError(f"batched loss_fn returned shape {vals.shape}, expected ({m},)")
        else:
            vals = np.array([loss_fn(samples[i]) for i in range(m)])
        total += float(vals.sum())
        total_sq += float((vals * vals).sum())
        done += m
    mean = total / n_draws
    var = max(total_sq / n_draws - mean * mean, 0.0)
    return McEstimate(mean=mean, stderr=float(np.sqrt(var / n_draws)), n=n_draws)
