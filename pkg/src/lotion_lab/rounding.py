"""Unbiased randomized rounding and its per-coordinate noise statistics.

Randomized rounding (RR) sends each coordinate independently to one of its
two adjacent representable values: up with probability equal to the
fractional position frac, down otherwise.  That makes the rounded value an
unbiased estimate of the input, leaves representable inputs untouched, and
gives per-coordinate noise variance (w - lo) * (hi - w), which for uniform
lattices equals scale^2 * frac * (1 - frac).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .quant import QuantFormat, cast_rtn, quant_view
from .tensorcore import RngStream

__all__ = [
    "Rtn",
    "Rr",
    "RTN",
    "NoiseStats",
    "apply_rounding",
    "rr_sample",
    "rr_sample_many",
    "rr_variance",
    "rr_variance_grad",
    "weighted_variance_grad",
]


@dataclass(frozen=True)
class Rtn:
    """Deterministic round-to-nearest."""


@dataclass
class Rr:
    """Randomized rounding driven by a private stream."""

    rng: RngStream


RTN = Rtn()
RoundingMode = Rtn | Rr


def apply_rounding(w, fmt: QuantFormat, mode: RoundingMode) -> np.ndarray:
    if isinstance(mode, Rtn):
        return cast_rtn(w, fmt)
    if isinstance(mode, Rr):
        return rr_sample(w, fmt, mode.rng)
    raise TypeError(f"unknown rounding mode: {mode!r}")


def rr_sample(w, fmt: QuantFormat, rng: RngStream) -> np.ndarray:
    """One randomized rounding of `w`; representable coordinates pass through exactly."""
    arr = np.asarray(w, dtype=np.float64)
    view = quant_view(arr, fmt)
    u = rng.uniform01(arr.size)
    out = np.where(u < view.frac, view.hi, view.lo)
    return out.reshape(arr.shape)


def rr_sample_many(w, fmt: QuantFormat, rng: RngStream, n: int) -> np.ndarray:
    """n independent roundings stacked on a leading axis (shares one view)."""
    arr = np.asarray(w, dtype=np.float64)
    view = quant_view(arr, fmt)
    u = rng.uniform01(n * arr.size).reshape(n, arr.size)
    out = np.where(u < view.frac, view.hi, view.lo)
    return out.reshape((n,) + arr.shape)


@dataclass(frozen=True)
class NoiseStats:
    """Per-coordinate variance of the randomized-rounding noise."""

    sigma2: np.ndarray


def rr_variance(w, fmt: QuantFormat) -> NoiseStats:
    """Noise variance (w - lo) * (hi - w) per coordinate; exactly 0 on the lattice."""
    arr = np.asarray(w, dtype=np.float64)
    view = quant_view(arr, fmt)
    flat = arr.reshape(-1)
    sigma2 = (flat - view.lo) * (view.hi - flat)
    return NoiseStats(sigma2=sigma2.reshape(arr.shape))


def _right_brackets(arr: np.ndarray, fmt: QuantFormat):
    """Bracket used for variance derivatives.

    Off-lattice coordinates keep their view bracket.  Lattice coordinates
    take the right-limit bracket [w, next level up]; the top codebook level,
    which has nothing above it, falls back to [previous level, w].  All of
    these choices only matter on the measure-zero lattice itself.
    """
    view = quant_view(arr, fmt)
    flat = arr.reshape(-1)
    lo = view.lo.copy()
    hi = view.hi.copy()
    on = view.lattice_mask
    if np.any(on):
        scale = view.scale
        if fmt.is_uniform:
            hi = np.where(on, flat + scale, hi)
        else:
            lv = np.asarray(fmt.levels)
            safe = np.where(scale > 0, scale, 1.0)
            u = flat / safe
            idx = np.abs(lv[None, :] - u[:, None]).argmin(axis=1)
            at_top = idx == lv.size - 1
            up = np.where(at_top, lv[idx], lv[np.minimum(idx + 1, lv.size - 1)])
            dn = lv[np.maximum(idx - 1, 0)]
            hi = np.where(on & ~at_top, scale * up, hi)
            lo = np.where(on & at_top, scale * dn, lo)
    return view, lo, hi


def rr_variance_grad(w, fmt: QuantFormat) -> np.ndarray:
    """d sigma_i^2 / d w_i with the block scale (and codebook levels) held fixed.

    Equals lo + hi - 2w, i.e. scale * (1 - 2 frac) on uniform lattices.  On
    lattice points the subgradient from the right is used, so the value at
    frac == 0 is the full gap to the next level.
    """
    arr = np.asarray(w, dtype=np.float64)
    _, lo, hi = _right_brackets(arr, fmt)
    flat = arr.reshape(-1)
    grad = (lo - flat) + (hi - flat)
    return grad.reshape(arr.shape)


def weighted_variance_grad(w, fmt: QuantFormat, weights, differentiate_scale: bool = False) -> np.ndarray:
    """Gradient of sum_i weights_i * sigma_i^2(w).

    With `differentiate_scale=False` (the default) this is just
    weights * rr_variance_grad(w).  With the flag on, the dependence of each
    block scale on its largest-magnitude coordinate (ties to the lowest
    index) is propagated, and that coordinate's own direct term drops out
    because its variance is identically zero while it stays the argmax.
    """
    arr = np.asarray(w, dtype=np.float64)
    wts = np.broadcast_to(np.asarray(weights, dtype=np.float64), arr.shape).reshape(-1)
    view, lo, hi = _right_brackets(arr, fmt)
    flat = arr.reshape(-1)
    grad = wts * ((lo - flat) + (hi - flat))
    if not differentiate_scale:
        return grad.reshape(arr.shape)

    bs = fmt.block_size if fmt.block_size is not None else flat.size
    blocks = flat.reshape(-1, bs)
    nb = blocks.shape[0]
    argmax_flat = np.argmax(np.abs(blocks), axis=1) + np.arange(nb) * bs

    scale = view.scale
    safe = np.where(scale > 0, scale, 1.0)
    # d sigma^2 / d scale with the bracket's integer levels held fixed
    dsig_ds = -(lo / safe) * (hi - flat) + (hi / safe) * (flat - lo)
    dsig_ds[argmax_flat] = 0.0
    grad[argmax_flat] = 0.0  # variance of the pinned coordinate is identically zero

    ds_dw = np.sign(flat[argmax_flat]) / fmt.max_level
    coupling = (wts * dsig_ds).reshape(-1, bs).sum(axis=1) * ds_dw
    grad[argmax_flat] += np.where(scale[argmax_flat] > 0, coupling, 0.0)
    return grad.reshape(arr.shape)
