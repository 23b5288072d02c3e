"""packbert: a CPU inference engine for BERT-style encoders with padding-free
variable-length batching, fused attention paths, and a grouped-GEMM tile
scheduler."""

__version__ = "0.1.0"

from .attention import (
    AttentionInput,
    SoftmaxPartials,
    dispatch_mha,
    full_reduce,
    mha_baseline,
    mha_fused_long,
    mha_fused_short,
)
from .bench import BenchSpec, gen_lengths, run_ladder
from .encoder import (
    EncoderWeights,
    ModelConfig,
    OptFlags,
    encoder_layer,
    forward,
    init_weights,
    load_weights,
    preset_config,
    save_weights,
)
from .errors import ConfigError, PackbertError, ShapeError, WeightFormatError
from .flops import FlopReport, count
from .fusion import LayernormParams, add_bias_residual_layernorm, bias_gelu_epilogue, gelu
from .grouped import (
    GroupedProblem,
    GroupedProblemSet,
    SchedulerStats,
    SoftmaxTransform,
    TileAssignment,
    epilogue_partial_reduce,
    grouped_gemm_run,
    schedule,
)
from .packing import (
    PackedBatch,
    PackingPlan,
    SeqLengths,
    build_mask,
    compute_plan,
    pack,
    plan_for_lengths,
    unpack,
)
from .tensor import EpilogueHook, EpilogueKind, FlopCounter, Tensor, batched_gemm, gemm
