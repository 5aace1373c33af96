"""Dense float64 tensors and reproducible keyed random streams.

Tensors throughout the library are plain numpy float64 arrays.  The helpers
here add the shape checks and finiteness guarantees the rest of the code
relies on, and `RngStream` wraps a counter-based generator so that every
(seed, stream_id) pair yields the same draw sequence on every run, every
platform, and under any worker count.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "as_tensor",
    "ensure_finite",
    "matmul",
    "tensor_sum",
    "max_abs",
    "RngStream",
    "stream_id",
    "NS_TASK",
    "NS_INIT",
    "NS_TRAIN_NOISE",
    "NS_EVAL",
]

_U64 = 1 << 64


def as_tensor(data, shape=None) -> np.ndarray:
    """Coerce `data` to a float64 array, optionally reshaped, and reject non-finite entries."""
    arr = np.array(data, dtype=np.float64)
    if shape is not None:
        arr = arr.reshape(shape)
    return ensure_finite(arr, "tensor")


def ensure_finite(x: np.ndarray, name: str = "tensor") -> np.ndarray:
    if not np.all(np.isfinite(x)):
        raise ValueError(f"{name} contains non-finite entries")
    return x


def matmul(a, b) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim == 0 or b.ndim == 0:
        raise ValueError(f"matmul requires arrays, got shapes {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    return a @ b


def tensor_sum(x) -> float:
    return float(np.sum(np.asarray(x, dtype=np.float64)))


def max_abs(x) -> float:
    x = np.asarray(x, dtype=np.float64)
    if x.size == 0:
        raise ValueError("max_abs of an empty tensor")
    return float(np.max(np.abs(x)))


# Stream-id namespaces.  Different purposes get disjoint 64-bit stream ids so
# that e.g. evaluation rounding never consumes the same draws as training
# noise.  Layout: [8-bit namespace | 40-bit step | 16-bit index].
NS_TASK = 1
NS_INIT = 2
NS_TRAIN_NOISE = 3
NS_EVAL = 4


def stream_id(namespace: int, step: int = 0, index: int = 0) -> int:
    """Pack (namespace, step, index) into a 64-bit stream id."""
    if not 0 <= namespace < 256:
        raise ValueError(f"namespace out of range: {namespace}")
    if not 0 <= step < (1 << 40):
        raise ValueError(f"step out of range: {step}")
    if not 0 <= index < (1 << 16):
        raise ValueError(f"index out of range: {index}")
    return (namespace << 56) | (step << 16) | index


class RngStream:
    """Counter-based random stream keyed by (seed, stream_id).

    Built on Philox, so identical keys replay identical sequences regardless
    of platform or how many other streams exist.  A stream is single-owner:
    hand each worker or purpose its own instance.
    """

    def __init__(self, seed: int, stream: int = 0):
        seed = int(seed)
        stream = int(stream)
        if not 0 <= seed < _U64 or not 0 <= stream < _U64:
            raise ValueError("seed and stream must fit in 64 bits")
        self.seed = seed
        self.stream = stream
        self._gen = np.random.Generator(np.random.Philox(key=(seed << 64) | stream))

    def uniform01(self, n: int) -> np.ndarray:
        """n i.i.d. draws in [0, 1)."""
        if n < 1:
            raise ValueError(f"need n >= 1 draws, got {n}")
        return self._gen.random(int(n))

    def normal(self, n: int) -> np.ndarray:
        """n i.i.d. standard-normal draws."""
        if n < 1:
            raise ValueError(f"need n >= 1 draws, got {n}")
        return self._gen.normal(size=int(n))

    def __repr__(self) -> str:
        return f"RngStream(seed={self.seed}, stream={self.stream})"
