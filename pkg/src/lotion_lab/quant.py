"""Number formats, shared absmax scales, and round-to-nearest casting.

A format is either a uniform signed-integer lattice (INT-n) or an explicit
symmetric codebook of levels (e.g. the FP4 E2M1 level set).  Coordinates are
grouped into blocks that share one scale s = absmax(block) / max_level, so
every block value lands inside the representable range with no clipping.

Floating-point contract: the block's largest-magnitude coordinate maps to
exactly +-absmax (mathematically s * max_level, but computing that product
would round).  Pinning the top level makes cast_rtn exactly idempotent and
makes every cast output a detectable lattice point of its own view.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensorcore import ensure_finite

__all__ = [
    "QuantFormat",
    "QuantView",
    "FP4_E2M1_LEVELS",
    "partition",
    "compute_scale",
    "cast_rtn",
    "quant_view",
]

# Standard 4-bit float (1 sign, 2 exponent, 1 mantissa) level magnitudes.
_FP4_POS = (0.5, 1.0, 1.5, 2.0, 3.0, 4.0, 6.0)
FP4_E2M1_LEVELS = tuple(-x for x in reversed(_FP4_POS)) + (0.0,) + _FP4_POS


@dataclass(frozen=True)
class QuantFormat:
    """A codebook plus block-partition policy.

    Exactly one of `bits` (uniform INT-n, levels -(2^(n-1)-1) .. 2^(n-1)-1)
    or `levels` (strictly increasing, symmetric about 0, containing 0) is
    set.  `block_size=None` means one shared scale for the whole tensor.
    """

    bits: int | None = None
    levels: tuple[float, ...] | None = None
    block_size: int | None = None

    def __post_init__(self):
        if (self.bits is None) == (self.levels is None):
            raise ValueError("exactly one of bits / levels must be given")
        if self.bits is not None and self.bits < 2:
            raise ValueError(f"uniform format needs bits >= 2, got {self.bits}")
        if self.levels is not None:
            lv = np.asarray(self.levels, dtype=np.float64)
            if lv.size < 3 or np.any(np.diff(lv) <= 0):
                raise ValueError("codebook levels must be strictly increasing with >= 3 entries")
            if 0.0 not in self.levels:
                raise ValueError("codebook must contain 0")
            if not np.allclose(lv, -lv[::-1]):
                raise ValueError("codebook must be symmetric about 0")
            if lv[-1] <= 0:
                raise ValueError("codebook max level must be positive")
        if self.block_size is not None and self.block_size < 1:
            raise ValueError(f"block_size must be positive, got {self.block_size}")

    # -- constructors ------------------------------------------------------

    @classmethod
    def uniform_int(cls, bits: int, block_size: int | None = None) -> "QuantFormat":
        return cls(bits=bits, block_size=block_size)

    @classmethod
    def codebook(cls, levels, block_size: int | None = None) -> "QuantFormat":
        return cls(levels=tuple(float(x) for x in levels), block_size=block_size)

    @classmethod
    def fp4_e2m1(cls, block_size: int | None = None) -> "QuantFormat":
        return cls(levels=FP4_E2M1_LEVELS, block_size=block_size)

    @classmethod
    def from_name(cls, name: str) -> "QuantFormat":
        """Parse names like 'int4', 'int8/b64', 'fp4', 'fp4/b32'."""
        base, _, blk = name.lower().partition("/")
        block_size = None
        if blk:
            if not blk.startswith("b") or not blk[1:].isdigit():
                raise ValueError(f"bad block suffix in format name {name!r}")
            block_size = int(blk[1:])
        if base == "fp4":
            return cls.fp4_e2m1(block_size)
        if base.startswith("int") and base[3:].isdigit():
            return cls.uniform_int(int(base[3:]), block_size)
        raise ValueError(f"unknown format name {name!r}")

    # -- properties --------------------------------------------------------

    @property
    def is_uniform(self) -> bool:
        return self.bits is not None

    @property
    def max_level(self) -> float:
        if self.bits is not None:
            return float(2 ** (self.bits - 1) - 1)
        return float(self.levels[-1])

    @property
    def name(self) -> str:
        blk = "" if self.block_size is None else f"/b{self.block_size}"
        if self.bits is not None:
            return f"int{self.bits}{blk}"
        if self.levels == FP4_E2M1_LEVELS:
            return f"fp4{blk}"
        return f"codebook{len(self.levels)}{blk}"


@dataclass(frozen=True)
class QuantView:
    """Per-coordinate decomposition of a tensor against its quantization lattice.

    For every coordinate: the block it belongs to, the shared block scale,
    the adjacent representable values lo <= w <= hi, and the fractional
    position frac = (w - lo) / (hi - lo).  Lattice coordinates have
    lo == hi == w and frac == 0.  All arrays are flat; `shape` restores the
    original layout.
    """

    shape: tuple[int, ...]
    block_index: np.ndarray
    scale: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    frac: np.ndarray

    @property
    def gap(self) -> np.ndarray:
        return self.hi - self.lo

    @property
    def lattice_mask(self) -> np.ndarray:
        return self.lo == self.hi


# ---------------------------------------------------------------------------
# Block plumbing


def partition(w, fmt: QuantFormat) -> list[slice]:
    """Contiguous blocks of the flattened tensor, per the format's block policy."""
    n = int(np.asarray(w).size)
    if n == 0:
        raise ValueError("cannot partition an empty tensor")
    bs = fmt.block_size
    if bs is None:
        return [slice(0, n)]
    if n % bs != 0:
        raise ValueError(f"block_size {bs} does not divide tensor length {n}")
    return [slice(i, i + bs) for i in range(0, n, bs)]


def _as_blocks(w, fmt: QuantFormat) -> np.ndarray:
    """Flatten and reshape to (n_blocks, block_len); validates divisibility."""
    arr = np.asarray(w, dtype=np.float64)
    ensure_finite(arr, "weights")
    flat = arr.reshape(-1)
    bs = fmt.block_size if fmt.block_size is not None else flat.size
    if flat.size % bs != 0:
        raise ValueError(f"block_size {bs} does not divide tensor length {flat.size}")
    return flat.reshape(-1, bs)


def _block_scales(blocks: np.ndarray, fmt: QuantFormat) -> np.ndarray:
    """Shared scale per block: absmax / max_level (0 for an all-zero block)."""
    absmax = np.max(np.abs(blocks), axis=1, keepdims=True)
    return absmax / fmt.max_level


def compute_scale(block, fmt: QuantFormat) -> float:
    """Scale of a single block of values."""
    arr = np.asarray(block, dtype=np.float64).reshape(-1)
    if arr.size == 0:
        raise ValueError("empty block")
    ensure_finite(arr, "block")
    return float(np.max(np.abs(arr)) / fmt.max_level)


# ---------------------------------------------------------------------------
# Casting and views


def _round_half_away(x: np.ndarray) -> np.ndarray:
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def cast_rtn(w, fmt: QuantFormat) -> np.ndarray:
    """Deterministic round-to-nearest cast onto the format's lattice.

    Idempotent: casting a cast output reproduces it bit for bit.  Every
    output magnitude stays within the block absmax, so no clipping occurs.
    """
    arr = np.asarray(w, dtype=np.float64)
    blocks = _as_blocks(arr, fmt)
    absmax = np.max(np.abs(blocks), axis=1, keepdims=True)
    scale = absmax / fmt.max_level
    safe = np.where(scale > 0, scale, 1.0)

    if fmt.is_uniform:
        top = fmt.max_level
        z = np.clip(_round_half_away(blocks / safe), -top, top)
        out = np.where(np.abs(z) >= top, np.sign(z) * absmax, scale * z)
    else:
        lv = np.asarray(fmt.levels)
        u = blocks / safe
        idx = np.clip(np.searchsorted(lv, u, side="right") - 1, 0, lv.size - 2)
        lo_lv, hi_lv = lv[idx], lv[idx + 1]
        lo = _codebook_values(lo_lv, scale, absmax, lv)
        hi = _codebook_values(hi_lv, scale, absmax, lv)
        d_lo = blocks - lo
        d_hi = hi - blocks
        # nearest level; ties round away from zero
        take_hi = (d_hi < d_lo) | ((d_hi == d_lo) & (np.abs(hi) > np.abs(lo)))
        out = np.where(take_hi, hi, lo)

    out = np.where(scale > 0, out, 0.0)
    return out.reshape(arr.shape)


def _codebook_values(level: np.ndarray, scale: np.ndarray, absmax: np.ndarray, lv: np.ndarray) -> np.ndarray:
    """Level -> value, pinning the outermost levels to the exact block absmax."""
    vals = scale * level
    vals = np.where(level >= lv[-1], absmax, vals)
    vals = np.where(level <= lv[0], -absmax, vals)
    return vals


def quant_view(w, fmt: QuantFormat) -> QuantView:
    """Decompose each coordinate into (block, scale, lo, hi, frac).

    Guarantees lo <= w <= hi exactly, and detects lattice coordinates
    (including every coordinate of a cast_rtn output) with lo == hi == w.
    """
    arr = np.asarray(w, dtype=np.float64)
    blocks = _as_blocks(arr, fmt)
    nb, bs = blocks.shape
    absmax = np.max(np.abs(blocks), axis=1, keepdims=True)
    scale = absmax / fmt.max_level
    safe = np.where(scale > 0, scale, 1.0)

    if fmt.is_uniform:
        top = fmt.max_level
        zp = blocks / safe
        z_lo = np.clip(np.floor(zp), -top, top)
        z_hi = np.clip(np.ceil(zp), -top, top)

        def values(z):
            v = scale * z
            np.copyto(v, np.sign(z) * absmax, where=np.abs(z) >= top)
            return v

        degenerate = z_lo == z_hi
        lo, hi = values(z_lo), values(z_hi)
        # one-ulp bracket repair: division rounding can land zp on the wrong
        # side of an integer, putting w outside [lo, hi]
        shift_dn = (lo > blocks) & (z_lo > -top) & ~degenerate
        if np.any(shift_dn):
            z_lo = np.where(shift_dn, z_lo - 1, z_lo)
            z_hi = np.where(shift_dn, z_hi - 1, z_hi)
            lo, hi = values(z_lo), values(z_hi)
        shift_up = (hi < blocks) & (z_hi < top) & ~degenerate
        if np.any(shift_up):
            z_lo = np.where(shift_up, z_lo + 1, z_lo)
            z_hi = np.where(shift_up, z_hi + 1, z_hi)
            lo, hi = values(z_lo), values(z_hi)
    else:
        lv = np.asarray(fmt.levels)
        u = blocks / safe
        idx = np.clip(np.searchsorted(lv, u, side="right") - 1, 0, lv.size - 2)

        def values_cb(i):
            return _codebook_values(lv[i], scale, absmax, lv)

        lo, hi = values_cb(idx), values_cb(idx + 1)
        shift_dn = (lo > blocks) & (idx > 0)
        if np.any(shift_dn):
            idx = np.where(shift_dn, idx - 1, idx)
            lo, hi = values_cb(idx), values_cb(idx + 1)
        shift_up = (hi < blocks) & (idx < lv.size - 2)
        if np.any(shift_up):
            idx = np.where(shift_up, idx + 1, idx)
            lo, hi = values_cb(idx), values_cb(idx + 1)
        degenerate = np.zeros_like(blocks, dtype=bool)

    on_lattice = degenerate | (blocks == lo) | (blocks == hi) | (scale == 0)
    lo = np.where(on_lattice, blocks, lo)
    hi = np.where(on_lattice, blocks, hi)
    gap = hi - lo
    frac = np.where(on_lattice, 0.0, np.clip((blocks - lo) / np.where(gap == 0, 1.0, gap), 0.0, 1.0))

    n = arr.size
    block_index = np.repeat(np.arange(nb), bs)
    return QuantView(
        shape=arr.shape,
        block_index=block_index,
        scale=np.broadcast_to(scale, (nb, bs)).reshape(n).copy(),
        lo=lo.reshape(n),
        hi=hi.reshape(n),
        frac=frac.reshape(n),
    )
