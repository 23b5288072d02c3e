"""BERT-style encoder layer and stacked model with step-wise optimization flags.

The layer pipeline is: fused QKV projection (one batched GEMM over the three
attribute matrices packed side by side), multi-head attention, output
projection, add-bias + residual + layernorm, FFN GEMM with bias + GELU, FFN
GEMM, add-bias + residual + layernorm (post-LN ordering, residual from the
sub-layer input).

Each optimization flag swaps one stage for its fused/packed form without
changing the math:

  fuse_layernorm   one-pass add-bias+residual+layernorm instead of 3 passes
  fuse_bias_gelu   bias+GELU as a GEMM epilogue instead of 2 passes
  zero_padding     run everything but attention on the packed layout,
                   unpacking around the attention module
  fused_mha        attention consumes the packed layout directly
                   (requires zero_padding: the fused kernels index the plan)
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .attention import DEFAULT_CUTOFF, DEFAULT_SPLIT_SEQ_LEN, AttentionInput, dispatch_mha, mha_baseline
from .errors import ConfigError, ShapeError, WeightFormatError
from .fusion import LayernormParams, add, add_bias_residual_layernorm, add_rowvec, gelu, layernorm
from .packing import PackedBatch, PackingPlan, SeqLengths, pack, plan_for_lengths, unpack
from .tensor import EpilogueHook, FlopCounter, Tensor, batched_gemm, gemm

WEIGHT_INIT_RANGE = 0.02


@dataclass(frozen=True)
class OptFlags:
    fuse_layernorm: bool = False
    fuse_bias_gelu: bool = False
    zero_padding: bool = False
    fused_mha: bool = False

    @classmethod
    def all_on(cls) -> "OptFlags":
        return cls(True, True, True, True)


@dataclass(frozen=True)
class ModelConfig:
    layers: int
    head_num: int
    head_size: int
    max_seq_len: int
    batch_size: int
    ffn_scale: int = 4
    cutoff: int = DEFAULT_CUTOFF
    split_seq_len: int = DEFAULT_SPLIT_SEQ_LEN
    flags: OptFlags = field(default_factory=OptFlags)
    share_layer_weights: bool = False

    def __post_init__(self):
        for name in ("layers", "head_num", "head_size", "max_seq_len", "batch_size", "ffn_scale"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.flags.fused_mha and not self.flags.zero_padding:
            raise ConfigError("fused_mha requires zero_padding: the fused kernels consume the packing plan")

    @property
    def hidden_dim(self) -> int:
        return self.head_num * self.head_size

    def with_flags(self, flags: OptFlags) -> "ModelConfig":
        return replace(self, flags=flags)


# layer count / head number / head size; DeBERTa is dimensions-only (its
# disentangled attention is not implemented).
PRESETS: dict[str, dict] = {
    "bert_base": {"layers": 12, "head_num": 12, "head_size": 64, "share_layer_weights": False},
    "albert": {"layers": 12, "head_num": 16, "head_size": 64, "share_layer_weights": True},
    "distilbert": {"layers": 6, "head_num": 12, "head_size": 64, "share_layer_weights": False},
    "deberta_cfg": {"layers": 12, "head_num": 12, "head_size": 64, "share_layer_weights": False},
}


def preset_config(
    name: str,
    batch_size: int,
    max_seq_len: int,
    flags: OptFlags = OptFlags(),
    layers: int | None = None,
) -> ModelConfig:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    p = PRESETS[name]
    return ModelConfig(
        layers=layers if layers is not None else p["layers"],
        head_num=p["head_num"],
        head_size=p["head_size"],
        max_seq_len=max_seq_len,
        batch_size=batch_size,
        flags=flags,
        share_layer_weights=p["share_layer_weights"],
    )


@dataclass
class LayerWeights:
    """Per-layer parameters; qkv_weight packs the Q, K, V attribute matrices
    into contiguous column blocks [0,h), [h,2h), [2h,3h)."""

    qkv_weight: np.ndarray
    qkv_bias: np.ndarray
    attn_out_weight: np.ndarray
    attn_out_bias: np.ndarray
    ffn_w1: np.ndarray
    ffn_b1: np.ndarray
    ffn_w2: np.ndarray
    ffn_b2: np.ndarray
    ln0: LayernormParams
    ln1: LayernormParams


@dataclass
class EncoderWeights:
    layers: list[LayerWeights]
    shared: bool

    def layer(self, index: int) -> LayerWeights:
        return self.layers[0] if self.shared else self.layers[index]


def _tensor_shapes(config: ModelConfig) -> list[tuple[str, tuple[int, ...]]]:
    h = config.hidden_dim
    f = config.ffn_scale * h
    return [
        ("qkv_weight", (h, 3 * h)),
        ("qkv_bias", (3 * h,)),
        ("attn_out_weight", (h, h)),
        ("attn_out_bias", (h,)),
        ("ffn_w1", (h, f)),
        ("ffn_b1", (f,)),
        ("ffn_w2", (f, h)),
        ("ffn_b2", (h,)),
        ("ln0_gamma", (h,)),
        ("ln0_beta", (h,)),
        ("ln1_gamma", (h,)),
        ("ln1_beta", (h,)),
    ]


def _layer_from_arrays(arrays: dict[str, np.ndarray]) -> LayerWeights:
    return LayerWeights(
        qkv_weight=arrays["qkv_weight"],
        qkv_bias=arrays["qkv_bias"],
        attn_out_weight=arrays["attn_out_weight"],
        attn_out_bias=arrays["attn_out_bias"],
        ffn_w1=arrays["ffn_w1"],
        ffn_b1=arrays["ffn_b1"],
        ffn_w2=arrays["ffn_w2"],
        ffn_b2=arrays["ffn_b2"],
        ln0=LayernormParams(gamma=arrays["ln0_gamma"], beta=arrays["ln0_beta"]),
        ln1=LayernormParams(gamma=arrays["ln1_gamma"], beta=arrays["ln1_beta"]),
    )


def init_weights(config: ModelConfig, seed: int = 0) -> EncoderWeights:
    """Deterministic uniform [-0.02, 0.02] init, one draw per tensor in
    declaration order."""
    rng = np.random.default_rng(seed)
    stored = 1 if config.share_layer_weights else config.layers
    layers = []
    for _ in range(stored):
        arrays = {
            name: rng.uniform(-WEIGHT_INIT_RANGE, WEIGHT_INIT_RANGE, shape).astype(np.float32)
            for name, shape in _tensor_shapes(config)
        }
        layers.append(_layer_from_arrays(arrays))
    return EncoderWeights(layers=layers, shared=config.share_layer_weights)


_WEIGHT_MAGIC = b"PKBW"
_WEIGHT_VERSION = 1
_HEADER_FIELDS = ("layers", "head_num", "head_size", "ffn_scale", "share_layer_weights")


def save_weights(path: str | Path, weights: EncoderWeights, config: ModelConfig) -> None:
    """Little-endian header (magic, version, config fields) + raw f32 tensors
    in declaration order."""
    header = struct.pack(
        "<4sI5I",
        _WEIGHT_MAGIC,
        _WEIGHT_VERSION,
        config.layers,
        config.head_num,
        config.head_size,
        config.ffn_scale,
        1 if config.share_layer_weights else 0,
    )
    with open(path, "wb") as f:
        f.write(header)
        for layer in weights.layers:
            arrays = _layer_arrays(layer)
            for name, _ in _tensor_shapes(config):
                f.write(np.ascontiguousarray(arrays[name], dtype="<f4").tobytes())


def _layer_arrays(layer: LayerWeights) -> dict[str, np.ndarray]:
    return {
        "qkv_weight": layer.qkv_weight,
        "qkv_bias": layer.qkv_bias,
        "attn_out_weight": layer.attn_out_weight,
        "attn_out_bias": layer.attn_out_bias,
        "ffn_w1": layer.ffn_w1,
        "ffn_b1": layer.ffn_b1,
        "ffn_w2": layer.ffn_w2,
        "ffn_b2": layer.ffn_b2,
        "ln0_gamma": np.asarray(layer.ln0.gamma),
        "ln0_beta": np.asarray(layer.ln0.beta),
        "ln1_gamma": np.asarray(layer.ln1.gamma),
        "ln1_beta": np.asarray(layer.ln1.beta),
    }


def load_weights(path: str | Path, config: ModelConfig) -> EncoderWeights:
    raw = Path(path).read_bytes()
    head_size = struct.calcsize("<4sI5I")
    if len(raw) < head_size:
        raise WeightFormatError(f"{path}: file too short for a weight header")
    magic, version, *fields = struct.unpack("<4sI5I", raw[:head_size])
    if magic != _WEIGHT_MAGIC:
        raise WeightFormatError(f"{path}: bad magic {magic!r}")
    if version != _WEIGHT_VERSION:
        raise WeightFormatError(f"{path}: unsupported version {version}")
    expected = (
        config.layers,
        config.head_num,
        config.head_size,
        config.ffn_scale,
        1 if config.share_layer_weights else 0,
    )
    for name, got, want in zip(_HEADER_FIELDS, fields, expected):
        if got != want:
            raise WeightFormatError(f"{path}: {name} is {got} in file, config expects {want}")

    shapes = _tensor_shapes(config)
    stored = 1 if config.share_layer_weights else config.layers
    per_layer = sum(int(np.prod(shape)) for _, shape in shapes)
    expected_bytes = head_size + 4 * per_layer * stored
    if len(raw) != expected_bytes:
        raise WeightFormatError(
            f"{path}: payload is {len(raw) - head_size} bytes, expected {expected_bytes - head_size}"
        )
    offset = head_size
    layers = []
    for _ in range(stored):
        arrays = {}
        for name, shape in shapes:
            count = int(np.prod(shape))
            arrays[name] = (
                np.frombuffer(raw, dtype="<f4", count=count, offset=offset)
                .reshape(shape)
                .astype(np.float32)
            )
            offset += 4 * count
        layers.append(_layer_from_arrays(arrays))
    return EncoderWeights(layers=layers, shared=config.share_layer_weights)


_CONFIG_BOOL_KEYS = {
    "fuse_layernorm",
    "fuse_bias_gelu",
    "zero_padding",
    "fused_mha",
    "share_layer_weights",
}
_CONFIG_INT_KEYS = {
    "layers",
    "head_num",
    "head_size",
    "ffn_scale",
    "max_seq_len",
    "batch_size",
    "cutoff",
    "split_seq_len",
}


def parse_config_text(text: str) -> ModelConfig:
    """key=value model config; '#' starts a comment."""
    values: dict[str, object] = {}
    flag_values: dict[str, bool] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {line!r}")
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if key in _CONFIG_INT_KEYS:
            try:
                values[key] = int(value)
            except ValueError:
                raise ConfigError(f"line {lineno}: {key} must be an integer, got {value!r}") from None
        elif key in _CONFIG_BOOL_KEYS:
            low = value.lower()
            if low in ("1", "true", "yes", "on"):
                parsed = True
            elif low in ("0", "false", "no", "off"):
                parsed = False
            else:
                raise ConfigError(f"line {lineno}: {key} must be a boolean, got {value!r}")
            if key == "share_layer_weights":
                values[key] = parsed
            else:
                flag_values[key] = parsed
        else:
            raise ConfigError(f"line {lineno}: unknown config key {key!r}")
    missing = [k for k in ("layers", "head_num", "head_size", "max_seq_len", "batch_size") if k not in values]
    if missing:
        raise ConfigError(f"missing required config keys: {', '.join(missing)}")
    return ModelConfig(flags=OptFlags(**flag_values), **values)  # type: ignore[arg-type]


def parse_config_file(path: str | Path) -> ModelConfig:
    return parse_config_text(Path(path).read_text())


def _qkv_slices(layer: LayerWeights, hidden: int) -> tuple[list[Tensor], list[np.ndarray]]:
    ws = [Tensor(layer.qkv_weight[:, i * hidden:(i + 1) * hidden]) for i in range(3)]
    bs = [layer.qkv_bias[i * hidden:(i + 1) * hidden] for i in range(3)]
    return ws, bs


def encoder_layer(
    x: Tensor,
    layer: LayerWeights,
    config: ModelConfig,
    plan: PackingPlan,
    *,
    workers: int = 1,
    counter: FlopCounter | None = None,
) -> Tensor:
    """One encoder layer; input and output share a layout (packed iff
    zero_padding is on)."""
    flags = config.flags
    hidden = config.hidden_dim
    if x.cols != hidden:
        raise ShapeError(f"input has {x.cols} columns, config expects {hidden}")
    expected_rows = plan.valid_word_cnt if flags.zero_padding else plan.padded_rows
    if x.rows != expected_rows:
        raise ShapeError(f"input has {x.rows} rows, expected {expected_rows} for this layout")

    # QKV positioning encoding: one batched GEMM over the packed attribute matrices.
    qkv_ws, qkv_bs = _qkv_slices(layer, hidden)
    q, k, v = batched_gemm([x, x, x], qkv_ws, counter=counter, key="gemm0")

    def attention_input(q_t: Tensor, k_t: Tensor, v_t: Tensor) -> AttentionInput:
        return AttentionInput(
            q=q_t, k=k_t, v=v_t,
            q_bias=qkv_bs[0], k_bias=qkv_bs[1], v_bias=qkv_bs[2],
            plan=plan, head_num=config.head_num, head_size=config.head_size,
        )

    if not flags.zero_padding:
        attn = mha_baseline(attention_input(q, k, v), counter=counter)
    elif not flags.fused_mha:
        # Batched attention needs identical shapes per batch, so bracket it
        # with unpack / pack and run it over the padded rectangle.
        mx = plan.max_seq_len
        padded = [unpack(PackedBatch(t, plan), mx) for t in (q, k, v)]
        attn_padded = mha_baseline(attention_input(*padded), counter=counter)
        attn = pack(attn_padded, plan).tokens
    else:
        attn = dispatch_mha(
            attention_input(q, k, v),
            cutoff=config.cutoff,
            split_seq_len=config.split_seq_len,
            workers=workers,
            counter=counter,
        )

    proj = gemm(attn, Tensor(layer.attn_out_weight), counter=counter, key="gemm1")

    if flags.fuse_layernorm:
        y0 = add_bias_residual_layernorm(proj, x, layer.attn_out_bias, layer.ln0)
    else:
        y0 = layernorm(add_rowvec(add(proj, x), layer.attn_out_bias), layer.ln0)

    if flags.fuse_bias_gelu:
        h1 = gemm(
            y0,
            Tensor(layer.ffn_w1),
            EpilogueHook.add_bias_gelu(layer.ffn_b1),
            counter=counter,
            key="gemm2",
        )
    else:
        h1 = gemm(y0, Tensor(layer.ffn_w1), counter=counter, key="gemm2")
        h1 = Tensor(gelu(add_rowvec(h1, layer.ffn_b1).array))

    h2 = gemm(h1, Tensor(layer.ffn_w2), counter=counter, key="gemm3")

    if flags.fuse_layernorm:
        return add_bias_residual_layernorm(h2, y0, layer.ffn_b2, layer.ln1)
    return layernorm(add_rowvec(add(h2, y0), layer.ffn_b2), layer.ln1)


def forward(
    weights: EncoderWeights,
    seqs: SeqLengths,
    input_padded: Tensor,
    config: ModelConfig,
    *,
    workers: int = 1,
    counter: FlopCounter | None = None,
) -> Tensor:
    """Run the stacked encoder; packs once on entry and unpacks once at the
    end when zero_padding is on."""
    if seqs.batch_size != config.batch_size or seqs.max_seq_len != config.max_seq_len:
        raise ShapeError(
            f"lengths describe a {seqs.batch_size}x{seqs.max_seq_len} batch, config expects "
            f"{config.batch_size}x{config.max_seq_len}"
        )
    plan = plan_for_lengths(seqs)
    if input_padded.rows != plan.padded_rows:
        raise ShapeError(
            f"input has {input_padded.rows} rows, expected batch_size * max_seq_len = {plan.padded_rows}"
        )
    x = pack(input_padded, plan).tokens if config.flags.zero_padding else input_padded
    for li in range(config.layers):
        x = encoder_layer(x, weights.layer(li), config, plan, workers=workers, counter=counter)
    if config.flags.zero_padding:
        return unpack(PackedBatch(x, plan), plan.max_seq_len)
    return x
