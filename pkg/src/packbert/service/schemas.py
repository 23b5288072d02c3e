"""Request/response models for the HTTP service."""

from __future__ import annotations

from pydantic import BaseModel, Field

from ..bench import LADDER_NAMES
from ..encoder import ModelConfig, OptFlags


class OptFlagsModel(BaseModel):
    fuse_layernorm: bool = False
    fuse_bias_gelu: bool = False
    zero_padding: bool = False
    fused_mha: bool = False

    def to_flags(self) -> OptFlags:
        return OptFlags(**self.model_dump())

    @classmethod
    def from_flags(cls, flags: OptFlags) -> "OptFlagsModel":
        return cls(
            fuse_layernorm=flags.fuse_layernorm,
            fuse_bias_gelu=flags.fuse_bias_gelu,
            zero_padding=flags.zero_padding,
            fused_mha=flags.fused_mha,
        )


class ModelConfigModel(BaseModel):
    layers: int = Field(ge=1)
    head_num: int = Field(ge=1)
    head_size: int = Field(ge=1)
    max_seq_len: int = Field(ge=1)
    batch_size: int = Field(ge=1)
    ffn_scale: int = Field(default=4, ge=1)
    cutoff: int = 384
    split_seq_len: int = 32
    flags: OptFlagsModel = OptFlagsModel()
    share_layer_weights: bool = False

    def to_config(self) -> ModelConfig:
        data = self.model_dump()
        data["flags"] = self.flags.to_flags()
        return ModelConfig(**data)

    @classmethod
    def from_config(cls, config: ModelConfig) -> "ModelConfigModel":
        return cls(
            layers=config.layers,
            head_num=config.head_num,
            head_size=config.head_size,
            max_seq_len=config.max_seq_len,
            batch_size=config.batch_size,
            ffn_scale=config.ffn_scale,
            cutoff=config.cutoff,
            split_seq_len=config.split_seq_len,
            flags=OptFlagsModel.from_flags(config.flags),
            share_layer_weights=config.share_layer_weights,
        )


class CreateModelRequest(BaseModel):
    config: ModelConfigModel
    seed: int = 0
    weights_path: str | None = None


class CreateModelResponse(BaseModel):
    model_id: str
    hidden_dim: int
    stored_layers: int


class ModelInfoResponse(BaseModel):
    model_id: str
    config: ModelConfigModel
    hidden_dim: int


class ForwardRequest(BaseModel):
    lengths: list[int]
    input: list[list[float]] | None = None
    input_seed: int = 0
    workers: int = Field(default=1, ge=1)
    include_output: bool = True
    include_flops: bool = True


class FlopReportModel(BaseModel):
    variant: str
    alpha: float
    analytic: dict[str, float]
    exact: dict[str, int]
    analytic_total: float
    exact_total: int
    layers: int
    model_exact_total: int


class ForwardResponse(BaseModel):
    rows: int
    cols: int
    valid_word_cnt: int
    alpha: float
    elapsed_ms: float
    output: list[list[float]] | None = None
    flops: FlopReportModel | None = None


class FlopsRequest(BaseModel):
    lengths: list[int]
    variant: str | None = None


class PackingPlanRequest(BaseModel):
    lengths: list[int]
    max_seq_len: int


class PackingPlanResponse(BaseModel):
    mask: list[list[int]]
    offsets: list[int]
    seq_starts: list[int]
    valid_word_cnt: int
    alpha: float


class BenchRequest(BaseModel):
    preset: str = "bert_base"
    batch_size: int = Field(default=16, ge=1)
    max_seq_lens: list[int] = [256]
    alphas: list[float] | None = None
    mode: str = "uniform"
    seed: int = 0
    repeats: int = Field(default=10, ge=1)
    variants: list[str] = list(LADDER_NAMES)
    workers: int = Field(default=1, ge=1)
    layers: int | None = None
    weights_path: str | None = None
    check: bool = False
    # dimensions for preset == "custom"
    head_num: int | None = None
    head_size: int | None = None
    ffn_scale: int = 4
    share_layer_weights: bool = False


class BenchRowModel(BaseModel):
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


class BenchResponse(BaseModel):
    rows: list[BenchRowModel]
    warnings: list[str]
    diagnostics: list[str]
    passed: bool


class PresetInfo(BaseModel):
    layers: int
    head_num: int
    head_size: int
    share_layer_weights: bool
    note: str | None = None


class HealthResponse(BaseModel):
    status: str
    version: str
