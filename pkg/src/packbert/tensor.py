"""Dense float32 tensors and a deterministic GEMM primitive with epilogue hooks.

Every GEMM problem is evaluated with a single BLAS call. Splitting one
product over several differently-shaped BLAS calls changes the internal
reduction order and breaks bitwise reproducibility across tile sizes, so
tiles partition only the epilogue work and the scheduler accounting, never
the product itself. Epilogue hooks are element-wise (or per-column-tile
reductions), which keeps every output bit independent of the tile grid and
of the number of workers executing it.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from enum import Enum
from typing import Sequence

import numpy as np

from .errors import ShapeError

DEFAULT_TILE_M = 64
DEFAULT_TILE_N = 64


class Tensor:
    """A 2-D row-major float32 matrix."""

    __slots__ = ("array",)

    def __init__(self, array):
        arr = np.asarray(array, dtype=np.float32)
        if arr.ndim != 2:
            raise ShapeError(f"tensor must be 2-D, got shape {arr.shape}")
        self.array = np.ascontiguousarray(arr)

    @classmethod
    def zeros(cls, rows: int, cols: int) -> "Tensor":
        return cls(np.zeros((rows, cols), dtype=np.float32))

    @classmethod
    def random(cls, rows: int, cols: int, seed: int = 0, scale: float = 1.0) -> "Tensor":
        rng = np.random.default_rng(seed)
        return cls((rng.standard_normal((rows, cols)) * scale).astype(np.float32))

    @property
    def rows(self) -> int:
        return self.array.shape[0]

    @property
    def cols(self) -> int:
        return self.array.shape[1]

    @property
    def data(self) -> np.ndarray:
        """Flat row-major view of the elements."""
        return self.array.reshape(-1)

    def copy(self) -> "Tensor":
        return Tensor(self.array.copy())

    def __repr__(self) -> str:
        return f"Tensor({self.rows}x{self.cols})"


class EpilogueKind(str, Enum):
    NONE = "none"
    ADD_BIAS = "add_bias"
    ADD_BIAS_GELU = "add_bias_gelu"
    SCALE = "scale"
    SOFTMAX_PARTIAL_REDUCE = "softmax_partial_reduce"


@dataclass(frozen=True)
class EpilogueHook:
    """Element-wise / reduction work applied to the GEMM output before write-back.

    ``sink`` receives per-column-tile softmax partials; for grouped runs it may
    be a sequence with one store per sub-problem. ``scale`` composes with the
    partial-reduce kind (logits are scaled, then reduced, then stored raw).
    """

    kind: EpilogueKind = EpilogueKind.NONE
    bias: np.ndarray | None = None
    scale: float | None = None
    sink: object | None = None

    @classmethod
    def none(cls) -> "EpilogueHook":
        return cls()

    @classmethod
    def add_bias(cls, bias: np.ndarray) -> "EpilogueHook":
        return cls(kind=EpilogueKind.ADD_BIAS, bias=np.asarray(bias, dtype=np.float32))

    @classmethod
    def add_bias_gelu(cls, bias: np.ndarray) -> "EpilogueHook":
        return cls(kind=EpilogueKind.ADD_BIAS_GELU, bias=np.asarray(bias, dtype=np.float32))

    @classmethod
    def scale_by(cls, scale: float) -> "EpilogueHook":
        return cls(kind=EpilogueKind.SCALE, scale=float(scale))

    @classmethod
    def partial_reduce(cls, sink, scale: float | None = None) -> "EpilogueHook":
        return cls(kind=EpilogueKind.SOFTMAX_PARTIAL_REDUCE, sink=sink, scale=scale)


class FlopCounter:
    """Multiply-add accounting: 2 FLOPs per MAC, element-wise epilogues excluded."""

    def __init__(self):
        self.counts: dict[str, int] = {}

    def add(self, key: str, flops: int) -> None:
        self.counts[key] = self.counts.get(key, 0) + int(flops)

    def get(self, key: str) -> int:
        return self.counts.get(key, 0)

    def total(self) -> int:
        return sum(self.counts.values())

    def as_dict(self) -> dict[str, int]:
        return dict(self.counts)


def partial_max_sum(block: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-row (max, sum of exp(x - max)) over the columns of one tile.

    Computed in float64: the pairs are scheduler-side metadata, tiny next to
    the logits they summarize, and the extra precision keeps the two-phase
    softmax within per-element tolerance of a single-pass reference.
    """
    block64 = block.astype(np.float64)
    row_max = block64.max(axis=1)
    row_sum = np.exp(block64 - row_max[:, None]).sum(axis=1)
    return row_max, row_sum


def _apply_epilogue(out: np.ndarray, hook: EpilogueHook | None, tile_n: int) -> None:
    """Apply ``hook`` to the full output in place.

    Element-wise kinds touch each element independently, so applying them to
    the whole matrix is bit-identical to any per-tile traversal. The partial
    reduce walks column tiles of width ``tile_n`` because the partials are
    defined at that granularity.
    """
    if hook is None or hook.kind == EpilogueKind.NONE:
        return
    if hook.kind == EpilogueKind.SCALE:
        out *= np.float32(hook.scale)
        return
    if hook.kind in (EpilogueKind.ADD_BIAS, EpilogueKind.ADD_BIAS_GELU):
        bias = hook.bias
        if bias is None or bias.shape != (out.shape[1],):
            got = None if bias is None else bias.shape
            raise ShapeError(f"epilogue bias must have length {out.shape[1]}, got {got}")
        if hook.kind == EpilogueKind.ADD_BIAS:
            out += bias
        else:
            from .fusion import bias_gelu_epilogue

            out[:] = bias_gelu_epilogue(out, bias)
        return
    if hook.kind == EpilogueKind.SOFTMAX_PARTIAL_REDUCE:
        if hook.scale is not None:
            out *= np.float32(hook.scale)
        n = out.shape[1]
        for tile_col, col0 in enumerate(range(0, n, tile_n)):
            row_max, row_sum = partial_max_sum(out[:, col0:col0 + tile_n])
            hook.sink.record(0, tile_col, row_max, row_sum)
        return
    raise ShapeError(f"unknown epilogue kind: {hook.kind}")


def gemm(
    a: Tensor,
    b: Tensor,
    epilogue: EpilogueHook | None = None,
    tile_m: int = DEFAULT_TILE_M,
    tile_n: int = DEFAULT_TILE_N,
    *,
    counter: FlopCounter | None = None,
    key: str = "gemm",
) -> Tensor:
    """Blocked GEMM: ``epilogue(a @ b)``.

    The result is bit-identical for any tile sizes and any worker count: the
    product is one BLAS call and the epilogue is position-independent.
    """
    if tile_m < 1 or tile_n < 1:
        raise ShapeError(f"tile sizes must be >= 1, got ({tile_m}, {tile_n})")
    if a.cols != b.rows:
        raise ShapeError(f"gemm dimension mismatch: ({a.rows}x{a.cols}) @ ({b.rows}x{b.cols})")
    out = a.array @ b.array
    _apply_epilogue(out, epilogue, tile_n)
    if counter is not None:
        counter.add(key, 2 * a.rows * a.cols * b.cols)
    return Tensor(out)


def batched_gemm(
    a_batch: Sequence[Tensor],
    b_batch: Sequence[Tensor],
    epilogue: EpilogueHook | None = None,
    *,
    counter: FlopCounter | None = None,
    key: str = "gemm",
) -> list[Tensor]:
    """Batched GEMM over identically shaped problems.

    Shapes must match across the batch; lifting that restriction is exactly
    what grouped GEMM is for.
    """
    if len(a_batch) != len(b_batch):
        raise ShapeError(f"batch counts differ: {len(a_batch)} vs {len(b_batch)}")
    if not a_batch:
        return []
    a_shape = (a_batch[0].rows, a_batch[0].cols)
    b_shape = (b_batch[0].rows, b_batch[0].cols)
    for i, (a, b) in enumerate(zip(a_batch, b_batch)):
        if (a.rows, a.cols) != a_shape or (b.rows, b.cols) != b_shape:
            raise ShapeError(
                f"batched GEMM requires identical shapes; batch {i} has "
                f"({a.rows}x{a.cols}) @ ({b.rows}x{b.cols}), expected "
                f"({a_shape[0]}x{a_shape[1]}) @ ({b_shape[0]}x{b_shape[1]})"
            )
    hook = epilogue
    if hook is not None and isinstance(hook.sink, (list, tuple)):
        return [
            gemm(a, b, replace(hook, sink=hook.sink[i]), counter=counter, key=key)
            for i, (a, b) in enumerate(zip(a_batch, b_batch))
        ]
    return [gemm(a, b, hook, counter=counter, key=key) for a, b in zip(a_batch, b_batch)]
