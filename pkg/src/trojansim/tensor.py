"""Numeric foundation: tensors, layer arithmetic, fixed-point quantization.

Arithmetic contract (shared by every op here and by the naive oracles the
tests compare against):

  * Operands are converted to float64, accumulation runs in float64 in a
    fixed order (row-major over input channel, kernel row, kernel column for
    convolution; ascending input index for dense), starting from the bias.
  * float32 results are rounded once, at the end, per output element.
  * Fixed-point results are rounded half-to-even to the format's resolution
    and saturated to its representable range; saturation events are counted
    on the result tensor, never silently wrapped.

This makes outputs bitwise reproducible across runs and bitwise comparable
with an independent scalar-loop implementation of the same contract.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from .errors import DimensionError

FLOAT32 = "float32"


@dataclass(frozen=True)
class FixedFormat:
    """Signed fixed-point format with int_bits.frac_bits split (e.g. Q16.16)."""

    int_bits: int
    frac_bits: int

    def __post_init__(self):
        if self.int_bits < 1 or self.frac_bits < 0:
            raise ValueError(f"bad fixed-point format Q{self.int_bits}.{self.frac_bits}")

    @property
    def resolution(self) -> float:
        return 2.0 ** -self.frac_bits

    @property
    def min_value(self) -> float:
        return -(2.0 ** (self.int_bits - 1))

    @property
    def max_value(self) -> float:
        return 2.0 ** (self.int_bits - 1) - self.resolution

    def __str__(self) -> str:
        return f"Q{self.int_bits}.{self.frac_bits}"


Q16_16 = FixedFormat(16, 16)

DType = Union[str, FixedFormat]


@dataclass(frozen=True, eq=False)
class Tensor:
    """Immutable n-dimensional array with a flat row-major payload.

    float32 tensors store float32 data; fixed-point tensors store float64
    data whose values are exact multiples of the format resolution (exact
    for int_bits + frac_bits <= 53). `saturations` counts how many elements
    saturated while producing this tensor.
    """

    shape: tuple[int, ...]
    dtype: DType
    data: np.ndarray
    saturations: int = 0

    def __post_init__(self):
        if any(d < 1 for d in self.shape):
            raise DimensionError(f"non-positive dimension in shape {self.shape}")
        n = int(np.prod(self.shape, dtype=np.int64)) if self.shape else 1
        if self.data.ndim != 1 or self.data.size != n:
            raise DimensionError(
                f"data length {self.data.size} does not match shape {self.shape} (expect {n})"
            )
        if isinstance(self.dtype, FixedFormat):
            fmt = self.dtype
            scaled = self.data * (2.0 ** fmt.frac_bits)
            if not np.array_equal(scaled, np.rint(scaled)):
                raise ValueError(f"values not representable in {fmt}")
            if self.data.size and (self.data.min() < fmt.min_value or self.data.max() > fmt.max_value):
                raise ValueError(f"values outside {fmt} range [{fmt.min_value}, {fmt.max_value}]")
        self.data.flags.writeable = False

    @classmethod
    def from_array(cls, values, dtype: DType = FLOAT32, saturations: int = 0) -> "Tensor":
        arr = np.asarray(values)
        shape = arr.shape if arr.shape else (1,)
        store = np.float32 if dtype == FLOAT32 else np.float64
        flat = np.ascontiguousarray(arr, dtype=store).reshape(-1).copy()
        return cls(tuple(shape), dtype, flat, saturations)

    @classmethod
    def zeros(cls, shape: Sequence[int], dtype: DType = FLOAT32) -> "Tensor":
        n = int(np.prod(shape, dtype=np.int64))
        store = np.float32 if dtype == FLOAT32 else np.float64
        return cls(tuple(shape), dtype, np.zeros(n, dtype=store))

    @property
    def array(self) -> np.ndarray:
        """Read-only view of the data in this tensor's shape."""
        return self.data.reshape(self.shape)

    @property
    def size(self) -> int:
        return self.data.size

    def reshaped(self, shape: Sequence[int]) -> "Tensor":
        n = int(np.prod(shape, dtype=np.int64))
        if n != self.size:
            raise DimensionError(f"cannot reshape {self.shape} to {tuple(shape)}")
        return Tensor(tuple(shape), self.dtype, self.data, self.saturations)


def bitwise_equal(a: Tensor, b: Tensor) -> bool:
    return a.shape == b.shape and a.dtype == b.dtype and np.array_equal(a.data, b.data)


@dataclass(frozen=True, eq=False)
class Kernel:
    """Layer parameters: 4-D weights for conv (out, in, kh, kw) or 2-D for
    dense (out, in), plus a 1-D bias of length out."""

    weights: Tensor
    bias: Tensor

    def __post_init__(self):
        if len(self.weights.shape) not in (2, 4):
            raise DimensionError(f"kernel weights must be 2-D or 4-D, got {self.weights.shape}")
        if len(self.bias.shape) != 1:
            raise DimensionError(f"kernel bias must be 1-D, got {self.bias.shape}")
        if self.bias.shape[0] != self.weights.shape[0]:
            raise DimensionError(
                f"bias length {self.bias.shape[0]} does not match output count {self.weights.shape[0]}"
            )
        if self.weights.dtype != self.bias.dtype:
            raise ValueError("kernel weights and bias must share one dtype")

    @property
    def dtype(self) -> DType:
        return self.weights.dtype


def _finish(acc: np.ndarray, dtype: DType) -> Tensor:
    """Round a float64 accumulator into the target dtype, counting saturation."""
    if dtype == FLOAT32:
        return Tensor.from_array(acc.astype(np.float32), FLOAT32)
    fmt = dtype
    raw = np.rint(acc * (2.0 ** fmt.frac_bits))
    lo = np.rint(fmt.min_value * (2.0 ** fmt.frac_bits))
    hi = np.rint(fmt.max_value * (2.0 ** fmt.frac_bits))
    saturated = int(np.count_nonzero((raw < lo) | (raw > hi)))
    raw = np.clip(raw, lo, hi)
    values = raw * fmt.resolution
    return Tensor(tuple(acc.shape), fmt, values.reshape(-1), saturated)


def _check_same_dtype(a: DType, b: DType, what: str) -> None:
    if a != b:
        raise ValueError(f"{what}: dtype mismatch ({a} vs {b})")


def conv2d(input: Tensor, kernel: Kernel, stride: int = 1) -> Tensor:
    """Valid (unpadded) 2-D convolution of a (C, H, W) tensor."""
    if len(input.shape) != 3:
        raise DimensionError(f"conv2d input must be (C, H, W), got {input.shape}")
    if len(kernel.weights.shape) != 4:
        raise DimensionError(f"conv2d kernel must be 4-D, got {kernel.weights.shape}")
    if stride < 1:
        raise ValueError(f"stride must be positive, got {stride}")
    c, h, w = input.shape
    out_ch, in_ch, kh, kw = kernel.weights.shape
    if in_ch != c:
        raise DimensionError(
            f"input channels {input.shape} do not match kernel {kernel.weights.shape}"
        )
    if kh > h or kw > w:
        raise DimensionError(
            f"kernel {kernel.weights.shape} larger than input {input.shape}"
        )
    _check_same_dtype(input.dtype, kernel.dtype, "conv2d")

    oh = (h - kh) // stride + 1
    ow = (w - kw) // stride + 1
    x = input.array.astype(np.float64)
    wts = kernel.weights.array.astype(np.float64)
    acc = np.empty((out_ch, oh, ow), dtype=np.float64)
    acc[:] = kernel.bias.array.astype(np.float64)[:, None, None]
    for ci in range(in_ch):
        for u in range(kh):
            for v in range(kw):
                win = x[ci, u:u + stride * oh:stride, v:v + stride * ow:stride]
                acc += wts[:, ci, u, v][:, None, None] * win[None, :, :]
    return _finish(acc, input.dtype)


def maxpool2d(input: Tensor, window: int, stride: int) -> Tensor:
    """Max pooling over square windows of a (C, H, W) tensor."""
    if len(input.shape) != 3:
        raise DimensionError(f"maxpool2d input must be (C, H, W), got {input.shape}")
    if window < 1 or stride < 1:
        raise ValueError(f"window and stride must be positive, got {window}, {stride}")
    c, h, w = input.shape
    if window > h or window > w:
        raise DimensionError(f"window {window} larger than input {input.shape}")
    oh = (h - window) // stride + 1
    ow = (w - window) // stride + 1
    x = input.array
    acc = None
    for u in range(window):
        for v in range(window):
            win = x[:, u:u + stride * oh:stride, v:v + stride * ow:stride]
            acc = win.copy() if acc is None else np.maximum(acc, win)
    # max never rounds or leaves the representable set, so dtype carries over
    return Tensor(tuple(acc.shape), input.dtype, acc.reshape(-1).copy())


def dense(input: Tensor, kernel: Kernel) -> Tensor:
    """Fully connected layer: out[i] = sum_j W[i][j] * in[j] + bias[i]."""
    if len(input.shape) != 1:
        raise DimensionError(f"dense input must be 1-D, got {input.shape}")
    if len(kernel.weights.shape) != 2:
        raise DimensionError(f"dense kernel must be 2-D, got {kernel.weights.shape}")
    m, n = kernel.weights.shape
    if input.shape[0] != n:
        raise DimensionError(
            f"input length {input.shape[0]} does not match kernel columns {kernel.weights.shape}"
        )
    _check_same_dtype(input.dtype, kernel.dtype, "dense")
    x = input.data.astype(np.float64)
    wts = kernel.weights.array.astype(np.float64)
    acc = kernel.bias.array.astype(np.float64).copy()
    for j in range(n):
        acc += wts[:, j] * x[j]
    return _finish(acc, input.dtype)


def relu(input: Tensor) -> Tensor:
    """Elementwise max(0, x); exact in every dtype."""
    arr = np.maximum(input.array, np.zeros((), dtype=input.array.dtype))
    return Tensor(input.shape, input.dtype, arr.reshape(-1).copy())


def argmax(input: Tensor) -> int:
    """Index of the maximum element; ties resolve to the lowest index."""
    if len(input.shape) != 1:
        raise DimensionError(f"argmax input must be 1-D, got {input.shape}")
    if input.size == 0:
        raise DimensionError("argmax of an empty tensor")
    return int(np.argmax(input.data))


def quantize(input: Tensor, fmt: FixedFormat) -> Tensor:
    """Round to the nearest representable fixed-point value (half to even),
    saturating out-of-range values and counting them on the result."""
    return _finish(input.array.astype(np.float64), fmt)


def to_float32(input: Tensor) -> Tensor:
    """Reinterpret any tensor as float32 (fixed-point values convert exactly
    only when they fit in a float32 significand; used for reporting)."""
    return Tensor.from_array(input.array.astype(np.float32), FLOAT32)
