"""Memory-bound element-wise operators and their fused forms.

Fused forms execute the same scalar operations in the same order as their
unfused compositions, so equality between the two is exact, not approximate.
The canonical accumulation order for the layernorm input is
``(x + residual) + bias``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ShapeError
from .tensor import Tensor

_SQRT_2_OVER_PI = math.sqrt(2.0 / math.pi)
_GELU_CUBIC = 0.044715


def gelu(x):
    """tanh-approximation GELU; accepts a float or an ndarray."""
    x = np.asarray(x, dtype=np.float32) if not np.isscalar(x) else x
    inner = _SQRT_2_OVER_PI * (x + _GELU_CUBIC * x * x * x)
    return 0.5 * x * (1.0 + np.tanh(inner))


def bias_gelu_epilogue(tile: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """gelu(tile + bias[col]) for one GEMM output tile, before write-back."""
    bias = np.asarray(bias, dtype=np.float32)
    if bias.shape != (tile.shape[1],):
        raise ShapeError(f"bias must have length {tile.shape[1]}, got {bias.shape}")
    return gelu(tile + bias)


@dataclass(frozen=True)
class LayernormParams:
    gamma: np.ndarray
    beta: np.ndarray
    eps: float = 1e-12

    def __post_init__(self):
        if self.eps <= 0:
            raise ShapeError(f"layernorm eps must be > 0, got {self.eps}")
        if np.asarray(self.gamma).shape != np.asarray(self.beta).shape:
            raise ShapeError("gamma and beta must have the same shape")


def _normalize_rows(z: np.ndarray, params: LayernormParams) -> np.ndarray:
    # Population variance as mean of squared deviations: never negative, so a
    # constant row normalizes to exactly beta instead of NaN.
    mean = z.mean(axis=1, keepdims=True)
    centered = z - mean
    var = (centered * centered).mean(axis=1, keepdims=True)
    return params.gamma * (centered / np.sqrt(var + np.float32(params.eps))) + params.beta


def layernorm(x: Tensor, params: LayernormParams) -> Tensor:
    if np.asarray(params.gamma).shape != (x.cols,):
        raise ShapeError(f"layernorm params sized {np.asarray(params.gamma).shape}, tensor has {x.cols} cols")
    return Tensor(_normalize_rows(x.array, params))


def add(x: Tensor, y: Tensor) -> Tensor:
    if (x.rows, x.cols) != (y.rows, y.cols):
        raise ShapeError(f"shape mismatch: ({x.rows}x{x.cols}) + ({y.rows}x{y.cols})")
    return Tensor(x.array + y.array)


def add_rowvec(x: Tensor, vec: np.ndarray) -> Tensor:
    vec = np.asarray(vec, dtype=np.float32)
    if vec.shape != (x.cols,):
        raise ShapeError(f"row vector must have length {x.cols}, got {vec.shape}")
    return Tensor(x.array + vec)


def add_bias_residual_layernorm(
    x: Tensor,
    residual: Tensor,
    bias: np.ndarray,
    params: LayernormParams,
) -> Tensor:
    """One-pass add-bias + residual + layernorm over each row.

    Exactly equal to the three-pass pipeline add(x, residual), add bias,
    layernorm, because the scalar order is identical.
    """
    if (x.rows, x.cols) != (residual.rows, residual.cols):
        raise ShapeError(
            f"shape mismatch: ({x.rows}x{x.cols}) vs residual ({residual.rows}x{residual.cols})"
        )
    bias = np.asarray(bias, dtype=np.float32)
    if bias.shape != (x.cols,):
        raise ShapeError(f"bias must have length {x.cols}, got {bias.shape}")
    z = (x.array + residual.array) + bias
    return Tensor(_normalize_rows(z, params))
