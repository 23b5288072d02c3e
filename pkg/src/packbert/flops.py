"""Analytic and exact floating-point operation accounting per pipeline variant.

Counting convention: 2 FLOPs per multiply-add, element-wise (memory-bound)
work excluded. With m = batch_size * max_seq_len, k = hidden_dim and alpha =
mean/max sequence length, the per-layer analytic model is

  module  baseline      zero_padding     zero_padding_fused_mha
  gemm0   6 m k^2       6 (a m) k^2      6 (a m) k^2
  mha     4 m^2 k / bs  4 m^2 k / bs     4 (a m)^2 k / bs
  gemm1   2 m k^2       2 (a m) k^2      2 (a m) k^2
  gemm2   8 m k^2       8 (a m) k^2      8 (a m) k^2
  gemm3   8 m k^2       8 (a m) k^2      8 (a m) k^2

(the FFN terms generalize to 2 * ffn_scale * m k^2; 8 is the standard scale
of 4). Zero padding cannot shrink the batched attention GEMMs, which is why
the mha column only drops in the fused variant. The exact counts evaluate
the same sums over the true per-sequence lengths: linear terms use the total
valid token count, and the fused attention term is sum_i 4 len_i^2 k, which
is what an instrumented forward pass must reproduce with zero tolerance.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

from .encoder import ModelConfig, OptFlags
from .errors import ConfigError
from .packing import SeqLengths

MODULE_KEYS = ("gemm0", "mha", "gemm1", "gemm2", "gemm3")
VARIANTS = ("baseline", "zero_padding", "zero_padding_fused_mha")


@dataclass(frozen=True)
class FlopReport:
    """Per-layer counts for one variant; exact counts are integers."""

    variant: str
    alpha: float
    analytic: dict[str, float]
    exact: dict[str, int]

    @property
    def analytic_total(self) -> float:
        return sum(self.analytic.values())

    @property
    def exact_total(self) -> int:
        return sum(self.exact.values())

    def to_dict(self) -> dict:
        return {
            "variant": self.variant,
            "alpha": self.alpha,
            "analytic": dict(self.analytic),
            "exact": dict(self.exact),
            "analytic_total": self.analytic_total,
            "exact_total": self.exact_total,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def variant_for_flags(flags: OptFlags) -> str:
    if not flags.zero_padding:
        return "baseline"
    return "zero_padding_fused_mha" if flags.fused_mha else "zero_padding"


def count(config: ModelConfig, seqs: SeqLengths, variant: str) -> FlopReport:
    """Per-layer FLOP counts for one pipeline variant."""
    if variant not in VARIANTS:
        raise ConfigError(f"unknown variant {variant!r}; choose from {VARIANTS}")
    k = config.hidden_dim
    bs = seqs.batch_size
    mx = seqs.max_seq_len
    m = bs * mx
    total_len = seqs.total
    sum_len_sq = sum(n * n for n in seqs.lengths)
    alpha = seqs.alpha
    ffn = 2 * config.ffn_scale  # 8 at the standard scale of 4

    packed = variant != "baseline"
    m_eff_exact = total_len if packed else m
    m_eff_analytic = alpha * m if packed else float(m)

    analytic = {
        "gemm0": 6.0 * m_eff_analytic * k * k,
        "gemm1": 2.0 * m_eff_analytic * k * k,
        "gemm2": float(ffn) * m_eff_analytic * k * k,
        "gemm3": float(ffn) * m_eff_analytic * k * k,
    }
    exact = {
        "gemm0": 6 * m_eff_exact * k * k,
        "gemm1": 2 * m_eff_exact * k * k,
        "gemm2": ffn * m_eff_exact * k * k,
        "gemm3": ffn * m_eff_exact * k * k,
    }
    if variant == "zero_padding_fused_mha":
        analytic["mha"] = 4.0 * (alpha * m) ** 2 * k / bs
        exact["mha"] = 4 * sum_len_sq * k
    else:
        analytic["mha"] = 4.0 * m * m * k / bs
        exact["mha"] = 4 * bs * mx * mx * k

    analytic = {key: analytic[key] for key in MODULE_KEYS}
    exact = {key: exact[key] for key in MODULE_KEYS}
    return FlopReport(variant=variant, alpha=alpha, analytic=analytic, exact=exact)
