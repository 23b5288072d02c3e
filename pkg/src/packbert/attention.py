"""Multi-head attention: padded baseline, tile-resident short path, and
grouped-GEMM long path with two-phase softmax reduction.

All variants compute ``softmax(Q K^T / sqrt(head_size)) V`` per attention
unit (one batch element times one head) with the Q/K/V biases added on
operand load. The padded baseline is the reference the fused paths are
verified against: it masks padded key columns with a large negative constant
before the softmax and zeroes padded query rows in the output, so no padded
token influences a valid one. The fused paths index the packed layout through
the packing plan and never touch padded tokens at all.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import PackbertError, ShapeError
from .grouped import (
    GroupedProblem,
    GroupedProblemSet,
    SoftmaxPartialStore,
    SoftmaxTransform,
    grouped_gemm_run,
)
from .packing import PackingPlan
from .tensor import EpilogueHook, FlopCounter, Tensor

DEFAULT_CUTOFF = 384
DEFAULT_SPLIT_SEQ_LEN = 32
MASK_VALUE = np.float32(-1e9)


@dataclass
class AttentionInput:
    """Q, K, V with their biases, the packing plan, and the head geometry.

    The tensors are either packed (valid_word_cnt rows) or padded
    (batch_size * max_seq_len rows); each operation states which layout it
    expects.
    """

    q: Tensor
    k: Tensor
    v: Tensor
    q_bias: np.ndarray
    k_bias: np.ndarray
    v_bias: np.ndarray
    plan: PackingPlan
    head_num: int
    head_size: int

    def __post_init__(self):
        hidden = self.head_num * self.head_size
        for name, t in (("q", self.q), ("k", self.k), ("v", self.v)):
            if t.cols != hidden:
                raise ShapeError(
                    f"{name} has {t.cols} columns, expected head_num * head_size = {hidden}"
                )
        for name, b in (("q_bias", self.q_bias), ("k_bias", self.k_bias), ("v_bias", self.v_bias)):
            if np.asarray(b).shape != (hidden,):
                raise ShapeError(f"{name} must have length {hidden}")
        if not (self.q.rows == self.k.rows == self.v.rows):
            raise ShapeError("q, k, v must have the same number of rows")

    @property
    def hidden_dim(self) -> int:
        return self.head_num * self.head_size

    @property
    def scale(self) -> float:
        return 1.0 / math.sqrt(self.head_size)

    def head_cols(self, head: int) -> slice:
        return slice(head * self.head_size, (head + 1) * self.head_size)

    def require_packed(self, op: str) -> None:
        if self.q.rows != self.plan.valid_word_cnt:
            raise ShapeError(
                f"{op} expects packed layout ({self.plan.valid_word_cnt} rows), got {self.q.rows}"
            )

    def require_padded(self, op: str) -> None:
        if self.q.rows != self.plan.padded_rows:
            raise ShapeError(
                f"{op} expects padded layout ({self.plan.padded_rows} rows), got {self.q.rows}"
            )


class SoftmaxPartials:
    """Per-unit tile partials plus, after full reduction, per-row (max, sum)."""

    def __init__(self, stores: list[SoftmaxPartialStore]):
        self.stores = stores

    @property
    def is_reduced(self) -> bool:
        return all(s.is_reduced for s in self.stores)


def full_reduce(partials: SoftmaxPartials) -> SoftmaxPartials:
    """Combine per-tile (max, sum) pairs into global per-row statistics.

    global_max = max_j partial_max_j
    global_sum = sum_j partial_sum_j * exp(partial_max_j - global_max)

    This is the separated lightweight pass between the two grouped GEMMs; its
    workload is a factor tile_n smaller than the partial reduction.
    """
    for i, store in enumerate(partials.stores):
        if not store.is_complete:
            raise PackbertError(f"unit {i}: missing softmax partials before full reduction")
        gmax = store.partial_max.max(axis=1)
        gsum = (store.partial_sum * np.exp(store.partial_max - gmax[:, None])).sum(axis=1)
        if not (np.isfinite(gmax).all() and (gsum > 0).all()):
            raise PackbertError(f"unit {i}: degenerate softmax statistics after full reduction")
        store.row_max = gmax
        store.row_sum = gsum
    return partials


def _padded_heads(inp: AttentionInput) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(batch, head, seq, head_size) views of padded Q/K/V with biases added."""
    bs, mx = inp.plan.batch_size, inp.plan.max_seq_len
    shaped = []
    for t, bias in ((inp.q, inp.q_bias), (inp.k, inp.k_bias), (inp.v, inp.v_bias)):
        arr = t.array.reshape(bs, mx, inp.head_num, inp.head_size).transpose(0, 2, 1, 3)
        shaped.append(arr + np.asarray(bias, dtype=np.float32).reshape(inp.head_num, 1, inp.head_size))
    return shaped[0], shaped[1], shaped[2]


def mha_baseline(
    inp: AttentionInput,
    *,
    zero_pad_softmax: bool = False,
    counter: FlopCounter | None = None,
) -> Tensor:
    """Unfused padded attention over the full rectangle (the oracle variant).

    ``zero_pad_softmax`` skips the softmax on padded rows and columns by
    indexing the plan instead of masking; the GEMMs still run padded, so the
    result is identical and only the memory-bound work shrinks.
    """
    inp.require_padded("mha_baseline")
    bs, mx = inp.plan.batch_size, inp.plan.max_seq_len
    lengths = np.asarray(inp.plan.seqs.lengths)
    q3, k3, v3 = _padded_heads(inp)

    logits = (q3 @ k3.swapaxes(-1, -2)) * np.float32(inp.scale)  # (bs, heads, mx, mx)
    if zero_pad_softmax:
        probs = np.zeros_like(logits)
        for b in range(bs):
            n = int(lengths[b])
            valid = logits[b, :, :n, :n]
            m = valid.max(axis=-1, keepdims=True)
            e = np.exp(valid - m)
            probs[b, :, :n, :n] = e / e.sum(axis=-1, keepdims=True)
    else:
        key_pad = np.arange(mx)[None, :] >= lengths[:, None]  # (bs, mx)
        logits = np.where(key_pad[:, None, None, :], MASK_VALUE, logits)
        m = logits.max(axis=-1, keepdims=True)
        e = np.exp(logits - m)
        probs = e / e.sum(axis=-1, keepdims=True)

    out3 = probs @ v3  # (bs, heads, mx, head_size)
    out = np.ascontiguousarray(out3.transpose(0, 2, 1, 3)).reshape(bs * mx, inp.hidden_dim)
    query_pad = (np.arange(mx)[None, :] >= lengths[:, None]).reshape(-1)
    out[query_pad] = 0.0
    if counter is not None:
        counter.add("mha", 4 * bs * mx * mx * inp.hidden_dim)
    return Tensor(out)


def mha_fused_short(
    inp: AttentionInput,
    split_seq_len: int = DEFAULT_SPLIT_SEQ_LEN,
    *,
    cutoff: int = DEFAULT_CUTOFF,
    workers: int = 1,
    counter: FlopCounter | None = None,
) -> Tensor:
    """Unpadded fused attention for short sequences.

    Per unit, K and V slabs are loaded once with their biases fused into the
    load; query tiles of ``split_seq_len`` rows each compute a logits tile
    whose softmax row lives entirely in a tile-local buffer. Tiling is over
    query rows only, so the per-row math does not depend on the split.
    """
    inp.require_packed("mha_fused_short")
    mx = inp.plan.max_seq_len
    if mx > cutoff:
        raise ShapeError(f"max_seq_len {mx} exceeds the short-path cutoff {cutoff}")
    if split_seq_len < 1:
        raise ShapeError(f"split_seq_len must be >= 1, got {split_seq_len}")

    q_bias = np.asarray(inp.q_bias, dtype=np.float32)
    k_bias = np.asarray(inp.k_bias, dtype=np.float32)
    v_bias = np.asarray(inp.v_bias, dtype=np.float32)
    scale = np.float32(inp.scale)
    out = np.zeros((inp.plan.valid_word_cnt, inp.hidden_dim), dtype=np.float32)
    units = [(b, h) for b in range(inp.plan.batch_size) for h in range(inp.head_num)]

    def run_unit(b: int, h: int) -> None:
        rows = inp.plan.rows_of(b)
        cols = inp.head_cols(h)
        keys = inp.k.array[rows, cols] + k_bias[cols]
        values = inp.v.array[rows, cols] + v_bias[cols]
        n = keys.shape[0]
        for t0 in range(0, n, split_seq_len):
            tile = slice(rows.start + t0, rows.start + min(t0 + split_seq_len, n))
            q_tile = inp.q.array[tile, cols] + q_bias[cols]
            logits = (q_tile @ keys.T) * scale
            m = logits.max(axis=1, keepdims=True)
            p = np.exp(logits - m)
            p /= p.sum(axis=1, keepdims=True)
            out[tile, cols] = p @ values

    if workers <= 1 or len(units) <= 1:
        for b, h in units:
            run_unit(b, h)
    else:
        def run_worker(w: int) -> None:
            for b, h in units[w::workers]:
                run_unit(b, h)

        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(run_worker, range(workers)))

    if counter is not None:
        counter.add(
            "mha",
            sum(4 * n * n * inp.head_size for n in inp.plan.seqs.lengths) * inp.head_num,
        )
    return Tensor(out)


def mha_fused_long(
    inp: AttentionInput,
    workers: int = 1,
    *,
    tile_m: int = 128,
    tile_n: int = 128,
    counter: FlopCounter | None = None,
) -> Tensor:
    """Grouped-GEMM fused attention for long sequences.

    Three barrier-separated phases over batch_size * head_num sub-problems,
    each shaped by its sequence's true length:

      1. grouped GEMM computes the scaled logits, with per-tile (max, sum)
         softmax partials reduced in the epilogue;
      2. a lightweight full reduction combines the partials per row;
      3. grouped GEMM multiplies by V, with exp(x - max)/sum fused into the
         operand-A load.
    """
    inp.require_packed("mha_fused_long")
    q_bias = np.asarray(inp.q_bias, dtype=np.float32)
    k_bias = np.asarray(inp.k_bias, dtype=np.float32)
    v_bias = np.asarray(inp.v_bias, dtype=np.float32)

    units = [(b, h) for b in range(inp.plan.batch_size) for h in range(inp.head_num)]
    logits_problems = []
    value_slabs = []
    stores = []
    for b, h in units:
        rows = inp.plan.rows_of(b)
        cols = inp.head_cols(h)
        q_u = inp.q.array[rows, cols] + q_bias[cols]
        k_u = inp.k.array[rows, cols] + k_bias[cols]
        value_slabs.append(inp.v.array[rows, cols] + v_bias[cols])
        logits_problems.append(GroupedProblem(a=q_u, b=np.ascontiguousarray(k_u.T)))
        n = q_u.shape[0]
        stores.append(SoftmaxPartialStore(n, math.ceil(n / tile_n)))

    phase1 = GroupedProblemSet(logits_problems, tile_m=tile_m, tile_n=tile_n)
    hook = EpilogueHook.partial_reduce(sink=stores, scale=inp.scale)
    logits = grouped_gemm_run(phase1, workers, hook, counter=counter, key="mha")

    partials = full_reduce(SoftmaxPartials(stores))

    phase2_problems = [
        GroupedProblem(a=logit.array, b=value_slabs[u]) for u, logit in enumerate(logits)
    ]
    phase2 = GroupedProblemSet(phase2_problems, tile_m=tile_m, tile_n=tile_n)
    transform = SoftmaxTransform(
        [s.row_max for s in partials.stores], [s.row_sum for s in partials.stores]
    )
    outs = grouped_gemm_run(phase2, workers, mainloop_transform=transform, counter=counter, key="mha")

    out = np.zeros((inp.plan.valid_word_cnt, inp.hidden_dim), dtype=np.float32)
    for u, (b, h) in enumerate(units):
        out[inp.plan.rows_of(b), inp.head_cols(h)] = outs[u].array
    return Tensor(out)


def dispatch_mha(
    inp: AttentionInput,
    *,
    cutoff: int = DEFAULT_CUTOFF,
    split_seq_len: int = DEFAULT_SPLIT_SEQ_LEN,
    workers: int = 1,
    tile_m: int = 128,
    tile_n: int = 128,
    counter: FlopCounter | None = None,
) -> Tensor:
    """Route to the tile-resident path iff max_seq_len <= cutoff, else grouped."""
    if inp.plan.max_seq_len <= cutoff:
        return mha_fused_short(
            inp, split_seq_len, cutoff=cutoff, workers=workers, counter=counter
        )
    return mha_fused_long(inp, workers, tile_m=tile_m, tile_n=tile_n, counter=counter)
