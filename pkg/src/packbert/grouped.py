"""Grouped GEMM over variable-shape sub-problems with a round-robin tile scheduler.

Unlike batched GEMM, every sub-problem may have its own (m, n, k). A static
scheduler enumerates fixed-size output tiles problem by problem (row-major
within a problem) and deals them round-robin to workers; waves and idle slots
are the deterministic accounting of that walk. The prefetch mode computes 32
upcoming tile assignments per scheduler visit instead of one, which only
changes the visit count, never the assignments.

Execution distributes whole sub-problems round-robin over the worker pool:
each problem's product is a single BLAS call, so results are bit-identical
across worker counts and tile sizes and match the per-problem ``gemm``
exactly. Tiles remain the unit of scheduler accounting and of the softmax
partial reduction.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .errors import ShapeError
from .tensor import EpilogueHook, FlopCounter, Tensor, _apply_epilogue, partial_max_sum

DEFAULT_GROUP_TILE_M = 128
DEFAULT_GROUP_TILE_N = 128
PREFETCH_WIDTH = 32


@dataclass(frozen=True)
class GroupedProblem:
    """One (m, k) @ (k, n) sub-problem."""

    a: np.ndarray
    b: np.ndarray

    @property
    def m(self) -> int:
        return self.a.shape[0]

    @property
    def k(self) -> int:
        return self.a.shape[1]

    @property
    def n(self) -> int:
        return self.b.shape[1]


class GroupedProblemSet:
    """Sub-problems plus the tile geometry the scheduler walks."""

    def __init__(
        self,
        problems: Sequence[GroupedProblem],
        tile_m: int = DEFAULT_GROUP_TILE_M,
        tile_n: int = DEFAULT_GROUP_TILE_N,
    ):
        if tile_m < 1 or tile_n < 1:
            raise ShapeError(f"tile sizes must be >= 1, got ({tile_m}, {tile_n})")
        self.problems = list(problems)
        self.tile_m = tile_m
        self.tile_n = tile_n
        for i, p in enumerate(self.problems):
            if p.a.ndim != 2 or p.b.ndim != 2:
                raise ShapeError(f"problem {i}: operands must be 2-D")
            if p.a.shape[1] != p.b.shape[0]:
                raise ShapeError(
                    f"problem {i}: dimension mismatch "
                    f"({p.a.shape[0]}x{p.a.shape[1]}) @ ({p.b.shape[0]}x{p.b.shape[1]})"
                )
            if p.m < 1 or p.n < 1 or p.k < 1:
                raise ShapeError(f"problem {i}: m, n, k must all be >= 1")

    def __len__(self) -> int:
        return len(self.problems)

    def tiles_for(self, index: int) -> tuple[int, int]:
        p = self.problems[index]
        return (math.ceil(p.m / self.tile_m), math.ceil(p.n / self.tile_n))

    @property
    def total_tiles(self) -> int:
        return sum(tr * tc for tr, tc in (self.tiles_for(i) for i in range(len(self))))


@dataclass(frozen=True)
class TileAssignment:
    problem_index: int
    tile_row: int
    tile_col: int
    global_tile_index: int


@dataclass(frozen=True)
class SchedulerStats:
    """visits: scheduler metadata computations; waves/idle: logical rounds."""

    visits: int
    waves: int
    idle_slots: int


def schedule(
    problem_set: GroupedProblemSet,
    workers: int,
    mode: str = "baseline",
    prefetch_width: int = PREFETCH_WIDTH,
) -> tuple[list[list[TileAssignment]], SchedulerStats]:
    """Assign every tile exactly once, round-robin: worker w takes global tiles
    {w, w + workers, w + 2*workers, ...}.

    Both modes produce identical assignments; prefetch mode computes
    ``prefetch_width`` assignments per visit, so only the visit count differs.
    """
    if workers < 1:
        raise ShapeError(f"workers must be >= 1, got {workers}")
    if mode not in ("baseline", "prefetch32"):
        raise ShapeError(f"unknown scheduler mode: {mode!r}")

    tiles: list[TileAssignment] = []
    for pi in range(len(problem_set)):
        tiles_m, tiles_n = problem_set.tiles_for(pi)
        for tr in range(tiles_m):
            for tc in range(tiles_n):
                tiles.append(TileAssignment(pi, tr, tc, len(tiles)))

    per_worker = [tiles[w::workers] for w in range(workers)]
    total = len(tiles)
    waves = math.ceil(total / workers) if total else 0
    idle = waves * workers - total
    visits = total if mode == "baseline" else math.ceil(total / prefetch_width)
    return per_worker, SchedulerStats(visits=visits, waves=waves, idle_slots=idle)


@dataclass(frozen=True)
class PartialFragment:
    """Per-row (max, sum of exp(x - max)) of one output tile."""

    row_start: int
    tile_col: int
    row_max: np.ndarray
    row_sum: np.ndarray


def epilogue_partial_reduce(tile_output: np.ndarray, row_start: int = 0, tile_col: int = 0) -> PartialFragment:
    """Reduce one logits tile to its per-row (max, sum) pair.

    The raw logits stay in the problem's output buffer; the element-wise
    exp(x - max)/sum transform is deferred to the second GEMM's mainloop.
    """
    row_max, row_sum = partial_max_sum(np.asarray(tile_output))
    return PartialFragment(row_start=row_start, tile_col=tile_col, row_max=row_max, row_sum=row_sum)


class SoftmaxPartialStore:
    """Per-(row, column-tile) softmax partials for one sub-problem.

    Slots start as NaN so a missing fragment is detectable before the full
    reduction runs.
    """

    def __init__(self, rows: int, n_col_tiles: int):
        self.partial_max = np.full((rows, n_col_tiles), np.nan)
        self.partial_sum = np.full((rows, n_col_tiles), np.nan)
        self.row_max: np.ndarray | None = None
        self.row_sum: np.ndarray | None = None

    def record(self, row_start: int, tile_col: int, row_max: np.ndarray, row_sum: np.ndarray) -> None:
        stop = row_start + len(row_max)
        self.partial_max[row_start:stop, tile_col] = row_max
        self.partial_sum[row_start:stop, tile_col] = row_sum

    def record_fragment(self, frag: PartialFragment) -> None:
        self.record(frag.row_start, frag.tile_col, frag.row_max, frag.row_sum)

    @property
    def is_complete(self) -> bool:
        return not (np.isnan(self.partial_max).any() or np.isnan(self.partial_sum).any())

    @property
    def is_reduced(self) -> bool:
        return self.row_max is not None and self.row_sum is not None


class SoftmaxTransform:
    """exp(x - row_max) / row_sum, applied to operand-A blocks as they load."""

    def __init__(self, row_max: Sequence[np.ndarray], row_sum: Sequence[np.ndarray]):
        self.row_max = list(row_max)
        self.row_sum = list(row_sum)

    @classmethod
    def identity(cls, row_counts: Sequence[int]) -> "SoftmaxTransform":
        """max = 0, sum = 1: the transform degenerates to plain exp."""
        return cls([np.zeros(r) for r in row_counts], [np.ones(r) for r in row_counts])

    def apply(self, problem_index: int, block: np.ndarray, row_start: int = 0) -> np.ndarray:
        stop = row_start + block.shape[0]
        mx = self.row_max[problem_index][row_start:stop].astype(np.float32)[:, None]
        sm = self.row_sum[problem_index][row_start:stop].astype(np.float32)[:, None]
        return np.exp(block - mx) / sm


def grouped_gemm_run(
    problem_set: GroupedProblemSet,
    workers: int = 1,
    epilogue: EpilogueHook | None = None,
    mainloop_transform: SoftmaxTransform | None = None,
    *,
    counter: FlopCounter | None = None,
    key: str = "grouped",
) -> list[Tensor]:
    """Run every sub-problem; output i equals gemm over problem i.

    ``epilogue.sink`` may be a sequence holding one partial store per problem.
    Results are bit-identical for any worker count.
    """
    n_problems = len(problem_set)
    outputs: list[Tensor | None] = [None] * n_problems

    def run_problem(i: int) -> None:
        p = problem_set.problems[i]
        a = p.a
        if mainloop_transform is not None:
            a = mainloop_transform.apply(i, a)
        out = a @ p.b
        hook = epilogue
        if hook is not None and isinstance(hook.sink, (list, tuple)):
            hook = replace(hook, sink=hook.sink[i])
        _apply_epilogue(out, hook, problem_set.tile_n)
        outputs[i] = Tensor(out)

    if workers <= 1 or n_problems <= 1:
        for i in range(n_problems):
            run_problem(i)
    else:
        def run_worker(w: int) -> None:
            for i in range(w, n_problems, workers):
                run_problem(i)

        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(run_worker, range(workers)))

    if counter is not None:
        counter.add(key, sum(2 * p.m * p.n * p.k for p in problem_set.problems))
    return outputs
