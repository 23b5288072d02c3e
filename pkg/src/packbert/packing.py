"""Padding-free batching: mask, prefix-sum offsets, pack and unpack.

A variable-length batch is stored either padded (``batch_size * max_seq_len``
rows with zero rows past each sequence's end) or packed (only the valid token
rows, contiguous). The plan maps packed row ``j`` to flat padded row
``offsets[j]`` and is the positioning information every other module indexes
through.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError
from .tensor import Tensor


@dataclass(frozen=True)
class SeqLengths:
    """Token counts per sequence in a batch."""

    lengths: tuple[int, ...]
    max_seq_len: int

    def __post_init__(self):
        if not self.lengths:
            raise ShapeError("batch must contain at least one sequence")
        if self.max_seq_len < 1:
            raise ShapeError(f"max_seq_len must be >= 1, got {self.max_seq_len}")
        for i, n in enumerate(self.lengths):
            if not 1 <= n <= self.max_seq_len:
                raise ShapeError(
                    f"sequence {i} has length {n}, expected 1..{self.max_seq_len}"
                )

    @classmethod
    def of(cls, lengths, max_seq_len: int) -> "SeqLengths":
        return cls(tuple(int(n) for n in lengths), int(max_seq_len))

    @property
    def batch_size(self) -> int:
        return len(self.lengths)

    @property
    def total(self) -> int:
        return sum(self.lengths)

    @property
    def alpha(self) -> float:
        """Average-to-maximum length ratio."""
        return self.total / (self.batch_size * self.max_seq_len)


def build_mask(seqs: SeqLengths) -> np.ndarray:
    """Token validity mask: row i is lengths[i] ones followed by zeros."""
    cols = np.arange(seqs.max_seq_len)
    lengths = np.asarray(seqs.lengths)
    return (cols[None, :] < lengths[:, None]).astype(np.uint8)


@dataclass(frozen=True)
class PackingPlan:
    """Packed-row -> flat-padded-row mapping plus per-sequence starts."""

    offsets: np.ndarray
    seq_starts: np.ndarray
    seqs: SeqLengths

    @property
    def valid_word_cnt(self) -> int:
        return len(self.offsets)

    @property
    def batch_size(self) -> int:
        return self.seqs.batch_size

    @property
    def max_seq_len(self) -> int:
        return self.seqs.max_seq_len

    @property
    def padded_rows(self) -> int:
        return self.batch_size * self.max_seq_len

    @property
    def alpha(self) -> float:
        return self.valid_word_cnt / self.padded_rows

    def rows_of(self, batch_index: int) -> slice:
        """Packed row range of one sequence."""
        return slice(int(self.seq_starts[batch_index]), int(self.seq_starts[batch_index + 1]))


def compute_plan(mask: np.ndarray) -> PackingPlan:
    """Derive the packing plan from a validity mask via its prefix sum.

    Rows must be a prefix of ones followed by zeros (padding at the end);
    arbitrary hole patterns are rejected.
    """
    mask = np.asarray(mask)
    if mask.ndim != 2:
        raise ShapeError(f"mask must be 2-D, got shape {mask.shape}")
    if not np.isin(mask, (0, 1)).all():
        raise ShapeError("mask entries must be 0 or 1")
    lengths = mask.sum(axis=1, dtype=np.int64)
    if (np.diff(mask.astype(np.int8), axis=1) > 0).any():
        raise ShapeError("mask rows must be a prefix of ones followed by zeros")
    seqs = SeqLengths.of(lengths.tolist(), mask.shape[1])

    # The inclusive prefix sum over the flattened mask assigns each valid
    # token its packed index; inverting it yields the offset vector.
    flat = mask.reshape(-1).astype(np.int64)
    offsets = np.flatnonzero(flat).astype(np.int64)
    seq_starts = np.concatenate([[0], np.cumsum(lengths)]).astype(np.int64)
    offsets.setflags(write=False)
    seq_starts.setflags(write=False)
    return PackingPlan(offsets=offsets, seq_starts=seq_starts, seqs=seqs)


def plan_for_lengths(seqs: SeqLengths) -> PackingPlan:
    return compute_plan(build_mask(seqs))


@dataclass(frozen=True)
class PackedBatch:
    """Valid token rows in contiguous order plus the plan that placed them."""

    tokens: Tensor
    plan: PackingPlan

    def __post_init__(self):
        if self.tokens.rows != self.plan.valid_word_cnt:
            raise ShapeError(
                f"packed batch has {self.tokens.rows} rows, plan expects "
                f"{self.plan.valid_word_cnt}"
            )


def pack(padded: Tensor, plan: PackingPlan) -> PackedBatch:
    """Gather the valid rows of a padded tensor into contiguous memory."""
    if padded.rows != plan.padded_rows:
        raise ShapeError(
            f"padded tensor has {padded.rows} rows, plan expects "
            f"{plan.batch_size} x {plan.max_seq_len} = {plan.padded_rows}"
        )
    return PackedBatch(tokens=Tensor(padded.array[plan.offsets]), plan=plan)


def unpack(packed: PackedBatch, max_seq_len: int) -> Tensor:
    """Scatter valid rows back to their padded positions; padded rows are zero."""
    plan = packed.plan
    if max_seq_len != plan.max_seq_len:
        raise ShapeError(
            f"unpack max_seq_len {max_seq_len} does not match plan's {plan.max_seq_len}"
        )
    out = np.zeros((plan.padded_rows, packed.tokens.cols), dtype=np.float32)
    out[plan.offsets] = packed.tokens.array
    return Tensor(out)


def unpack_add_bias(packed: PackedBatch, max_seq_len: int, bias: np.ndarray) -> Tensor:
    """Unpack with the bias addition fused into the scatter pass.

    Equal, bit for bit, to ``unpack`` followed by adding ``bias`` to the valid
    rows; padded rows stay exactly zero.
    """
    plan = packed.plan
    if max_seq_len != plan.max_seq_len:
        raise ShapeError(
            f"unpack max_seq_len {max_seq_len} does not match plan's {plan.max_seq_len}"
        )
    bias = np.asarray(bias, dtype=np.float32)
    if bias.shape != (packed.tokens.cols,):
        raise ShapeError(f"bias must have length {packed.tokens.cols}, got {bias.shape}")
    out = np.zeros((plan.padded_rows, packed.tokens.cols), dtype=np.float32)
    out[plan.offsets] = packed.tokens.array + bias
    return Tensor(out)
