"""Benchmark harness: seeded length generation, the step-wise optimization
ladder, timing, FLOP reports, and CSV/JSON emission.

Each ladder variant adds one optimization on top of the previous ones:
baseline, +layernorm fusion, +bias&GELU fusion, +zero padding, +fused MHA.
Timing is wall clock around the forward call only (packing happens inside the
forward pass and is part of the variant); weight init and I/O are excluded.
Reported times are medians over the configured repeats.
"""

from __future__ import annotations

import csv
import io
import json
import statistics
import time
from dataclasses import dataclass, field

import numpy as np

from . import flops
from .encoder import (
    EncoderWeights,
    ModelConfig,
    OptFlags,
    forward,
    init_weights,
    preset_config,
)
from .errors import ConfigError
from .packing import SeqLengths, build_mask
from .tensor import FlopCounter, Tensor

LADDER: list[tuple[str, OptFlags]] = [
    ("baseline", OptFlags()),
    ("layernorm_fusion", OptFlags(fuse_layernorm=True)),
    ("bias_gelu_fusion", OptFlags(fuse_layernorm=True, fuse_bias_gelu=True)),
    ("rm_padding", OptFlags(fuse_layernorm=True, fuse_bias_gelu=True, zero_padding=True)),
    ("fused_mha", OptFlags(fuse_layernorm=True, fuse_bias_gelu=True, zero_padding=True, fused_mha=True)),
]
LADDER_NAMES = [name for name, _ in LADDER]

CSV_COLUMNS = (
    "preset",
    "variant",
    "batch",
    "max_len",
    "alpha_actual",
    "workers",
    "median_ms",
    "flops_exact",
    "flops_analytic",
    "max_rel_dev",
)


def gen_lengths(
    batch_size: int,
    max_seq_len: int,
    mode: str = "uniform",
    seed: int = 0,
    alpha: float | None = None,
) -> SeqLengths:
    """Draw per-sequence lengths.

    ``uniform`` draws integers uniformly from [1, max_seq_len]. ``fixed``
    draws the same way, then deterministically nudges entries (round-robin,
    clamped to [1, max]) until the total hits round(alpha * max * batch), so
    the sample mean lands within one token of alpha * max.
    """
    if mode not in ("uniform", "fixed"):
        raise ConfigError(f"unknown length mode {mode!r}; choose 'uniform' or 'fixed'")
    rng = np.random.default_rng(seed)
    lengths = rng.integers(1, max_seq_len + 1, size=batch_size).astype(np.int64)
    if mode == "fixed":
        if alpha is None:
            raise ConfigError("fixed mode requires alpha")
        if not 0.0 < alpha <= 1.0:
            raise ConfigError(f"alpha must be in (0, 1], got {alpha}")
        if alpha * max_seq_len < 1.0:
            raise ConfigError(
                f"alpha * max_seq_len = {alpha * max_seq_len:.3f} < 1: no valid lengths exist"
            )
        target = int(round(alpha * max_seq_len * batch_size))
        target = min(max(target, batch_size), batch_size * max_seq_len)
        diff = target - int(lengths.sum())
        i = 0
        while diff != 0:
            j = i % batch_size
            if diff > 0 and lengths[j] < max_seq_len:
                lengths[j] += 1
                diff -= 1
            elif diff < 0 and lengths[j] > 1:
                lengths[j] -= 1
                diff += 1
            i += 1
    return SeqLengths.of(lengths.tolist(), max_seq_len)


@dataclass(frozen=True)
class BenchSpec:
    preset: str = "bert_base"
    batch_size: int = 16
    max_seq_lens: tuple[int, ...] = (256,)
    alphas: tuple[float, ...] | None = None
    mode: str = "uniform"
    seed: int = 0
    repeats: int = 10
    variants: tuple[str, ...] = tuple(LADDER_NAMES)
    workers: int = 1
    layers: int | None = None
    weights_path: str | None = None
    check: bool = False
    # dimensions for preset == "custom"
    head_num: int | None = None
    head_size: int | None = None
    ffn_scale: int = 4
    share_layer_weights: bool = False

    def __post_init__(self):
        if self.repeats < 1:
            raise ConfigError(f"repeats must be >= 1, got {self.repeats}")
        unknown = set(self.variants) - set(LADDER_NAMES)
        if unknown:
            raise ConfigError(f"unknown variants {sorted(unknown)}; choose from {LADDER_NAMES}")
        if self.mode == "fixed" and not self.alphas:
            raise ConfigError("fixed mode requires at least one alpha")
        if self.preset == "custom" and (self.head_num is None or self.head_size is None):
            raise ConfigError("custom preset requires head_num and head_size")

    def config_for(self, max_seq_len: int) -> ModelConfig:
        if self.preset == "custom":
            return ModelConfig(
                layers=self.layers if self.layers is not None else 12,
                head_num=self.head_num,
                head_size=self.head_size,
                max_seq_len=max_seq_len,
                batch_size=self.batch_size,
                ffn_scale=self.ffn_scale,
                share_layer_weights=self.share_layer_weights,
            )
        return preset_config(self.preset, self.batch_size, max_seq_len, layers=self.layers)


@dataclass
class BenchRow:
    preset: str
    variant: str
    batch: int
    max_len: int
    alpha_actual: float
    workers: int
    median_ms: float
    flops_exact: int
    flops_analytic: float
    max_rel_dev: float

    def as_dict(self) -> dict:
        return {key: getattr(self, key) for key in CSV_COLUMNS}


@dataclass
class BenchResult:
    rows: list[BenchRow]
    warnings: list[str] = field(default_factory=list)
    passed: bool = True
    diagnostics: list[str] = field(default_factory=list)


def _masked_rel_dev(out: Tensor, ref: Tensor, mask_rows: np.ndarray) -> float:
    """Relative Frobenius deviation over the valid rows."""
    a = out.array[mask_rows]
    b = ref.array[mask_rows]
    denom = float(np.linalg.norm(b))
    if denom == 0.0:
        return float(np.linalg.norm(a))
    return float(np.linalg.norm(a - b) / denom)


def _gen_input(seqs: SeqLengths, hidden: int, seed: int) -> Tensor:
    rng = np.random.default_rng(seed + 1)
    data = rng.standard_normal((seqs.batch_size * seqs.max_seq_len, hidden)).astype(np.float32)
    valid = build_mask(seqs).reshape(-1).astype(bool)
    data[~valid] = 0.0
    return Tensor(data)


def deviation_tolerance(layers: int) -> float:
    """1e-4 single layer; 1e-3 stacked (error accumulates per layer)."""
    return 1e-4 if layers == 1 else 1e-3


def run_ladder(spec: BenchSpec) -> BenchResult:
    """Run the variant ladder for every (max_seq_len, alpha) point."""
    from .encoder import load_weights  # local import keeps module load light

    result = BenchResult(rows=[])
    base_config = spec.config_for(spec.max_seq_lens[0])
    weights: EncoderWeights
    if spec.weights_path:
        weights = load_weights(spec.weights_path, base_config)
    else:
        weights = init_weights(base_config, spec.seed)
    tolerance = deviation_tolerance(base_config.layers)

    alphas: tuple[float | None, ...] = spec.alphas if spec.alphas else (None,)
    for max_len in spec.max_seq_lens:
        for alpha in alphas:
            seqs = gen_lengths(spec.batch_size, max_len, spec.mode, spec.seed, alpha)
            config_point = spec.config_for(max_len)
            x = _gen_input(seqs, config_point.hidden_dim, spec.seed)
            valid_rows = build_mask(seqs).reshape(-1).astype(bool)

            # The all-off baseline is always evaluated once as the reference
            # for the deviation column, even when its row is not requested.
            baseline_out = forward(
                weights, seqs, x, config_point.with_flags(LADDER[0][1]), workers=spec.workers
            )
            for name, flags in LADDER:
                if name not in spec.variants:
                    continue
                config = config_point.with_flags(flags)
                out = baseline_out if name == "baseline" else forward(
                    weights, seqs, x, config, workers=spec.workers
                )

                timings = []
                for _ in range(spec.repeats):
                    t0 = time.perf_counter()
                    forward(weights, seqs, x, config, workers=spec.workers)
                    timings.append((time.perf_counter() - t0) * 1e3)

                dev = _masked_rel_dev(out, baseline_out, valid_rows)
                report = flops.count(config, seqs, flops.variant_for_flags(flags))
                result.rows.append(
                    BenchRow(
                        preset=spec.preset,
                        variant=name,
                        batch=spec.batch_size,
                        max_len=max_len,
                        alpha_actual=seqs.alpha,
                        workers=spec.workers,
                        median_ms=statistics.median(timings),
                        flops_exact=report.exact_total * config.layers,
                        flops_analytic=report.analytic_total * config.layers,
                        max_rel_dev=dev,
                    )
                )
                if dev > tolerance:
                    result.passed = False
                    result.diagnostics.append(
                        f"{name} @ max_len={max_len} alpha={seqs.alpha:.3f}: "
                        f"deviation {dev:.3e} exceeds {tolerance:.0e}"
                    )
                if spec.check:
                    counter = FlopCounter()
                    forward(weights, seqs, x, config, workers=spec.workers, counter=counter)
                    for key in flops.MODULE_KEYS:
                        want = report.exact[key] * config.layers
                        got = counter.get(key)
                        if got != want:
                            result.passed = False
                            result.diagnostics.append(
                                f"{name} @ max_len={max_len}: instrumented {key} counted "
                                f"{got}, exact model predicts {want}"
                            )

    _warn_on_alpha_inversions(result)
    return result


def _warn_on_alpha_inversions(result: BenchResult) -> None:
    """Soft check: packed-variant wall time should not decrease as alpha grows."""
    by_key: dict[tuple[str, int], list[BenchRow]] = {}
    for row in result.rows:
        if row.variant == "rm_padding":
            by_key.setdefault((row.preset, row.max_len), []).append(row)
    for (preset, max_len), rows in by_key.items():
        rows = sorted(rows, key=lambda r: r.alpha_actual)
        for prev, cur in zip(rows, rows[1:]):
            if cur.median_ms < prev.median_ms * 0.95:
                result.warnings.append(
                    f"rm_padding @ {preset} max_len={max_len}: median time fell from "
                    f"{prev.median_ms:.2f} ms (alpha {prev.alpha_actual:.2f}) to "
                    f"{cur.median_ms:.2f} ms (alpha {cur.alpha_actual:.2f}); "
                    "expected nondecreasing in alpha (noisy machine?)"
                )


def rows_to_csv(rows: list[BenchRow]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for row in rows:
        writer.writerow(
            [
                row.preset,
                row.variant,
                row.batch,
                row.max_len,
                repr(row.alpha_actual),
                row.workers,
                repr(row.median_ms),
                row.flops_exact,
                repr(row.flops_analytic),
                repr(row.max_rel_dev),
            ]
        )
    return buf.getvalue()


def rows_to_json(rows: list[BenchRow]) -> str:
    return json.dumps([row.as_dict() for row in rows], indent=2)
