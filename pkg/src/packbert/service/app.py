"""FastAPI service wrapping the encoder engine.

Models are created once (weights initialized or loaded from file) and then
served for forward passes, FLOP reports, and benchmark runs. All numeric work
happens server-side; the CLI is a thin client of these endpoints.
"""

from __future__ import annotations

import threading
import time
import uuid
from dataclasses import dataclass

import numpy as np
from fastapi import FastAPI, HTTPException

from .. import __version__, flops
from ..bench import BenchSpec, run_ladder
from ..encoder import (
    EncoderWeights,
    ModelConfig,
    forward,
    init_weights,
    load_weights,
    PRESETS,
)
from ..errors import PackbertError
from ..packing import SeqLengths, build_mask, plan_for_lengths
from ..tensor import Tensor
from .schemas import (
    BenchRequest,
    BenchResponse,
    BenchRowModel,
    CreateModelRequest,
    CreateModelResponse,
    FlopReportModel,
    FlopsRequest,
    ForwardRequest,
    ForwardResponse,
    HealthResponse,
    ModelConfigModel,
    ModelInfoResponse,
    PackingPlanRequest,
    PackingPlanResponse,
    PresetInfo,
)


@dataclass
class _ModelEntry:
    config: ModelConfig
    weights: EncoderWeights


class ModelRegistry:
    def __init__(self):
        self._models: dict[str, _ModelEntry] = {}
        self._lock = threading.Lock()

    def add(self, entry: _ModelEntry) -> str:
        model_id = uuid.uuid4().hex[:12]
        with self._lock:
            self._models[model_id] = entry
        return model_id

    def get(self, model_id: str) -> _ModelEntry:
        with self._lock:
            entry = self._models.get(model_id)
        if entry is None:
            raise HTTPException(status_code=404, detail=f"unknown model id {model_id!r}")
        return entry

    def remove(self, model_id: str) -> None:
        with self._lock:
            if model_id not in self._models:
                raise HTTPException(status_code=404, detail=f"unknown model id {model_id!r}")
            del self._models[model_id]


def _flop_report_model(config: ModelConfig, seqs: SeqLengths, variant: str) -> FlopReportModel:
    report = flops.count(config, seqs, variant)
    return FlopReportModel(
        variant=report.variant,
        alpha=report.alpha,
        analytic=report.analytic,
        exact=report.exact,
        analytic_total=report.analytic_total,
        exact_total=report.exact_total,
        layers=config.layers,
        model_exact_total=report.exact_total * config.layers,
    )


def create_app() -> FastAPI:
    app = FastAPI(title="packbert", version=__version__)
    registry = ModelRegistry()

    @app.exception_handler(PackbertError)
    async def _domain_error(request, exc: PackbertError):
        from fastapi.responses import JSONResponse

        return JSONResponse(status_code=400, content={"detail": str(exc)})

    @app.get("/health", response_model=HealthResponse)
    def health() -> HealthResponse:
        return HealthResponse(status="ok", version=__version__)

    @app.get("/presets", response_model=dict[str, PresetInfo])
    def presets() -> dict[str, PresetInfo]:
        out = {}
        for name, p in PRESETS.items():
            note = (
                "config-only: runs the standard encoder with DeBERTa's dimensions"
                if name == "deberta_cfg"
                else None
            )
            out[name] = PresetInfo(note=note, **p)
        return out

    @app.post("/models", response_model=CreateModelResponse)
    def create_model(req: CreateModelRequest) -> CreateModelResponse:
        config = req.config.to_config()
        if req.weights_path:
            weights = load_weights(req.weights_path, config)
        else:
            weights = init_weights(config, req.seed)
        model_id = registry.add(_ModelEntry(config=config, weights=weights))
        return CreateModelResponse(
            model_id=model_id,
            hidden_dim=config.hidden_dim,
            stored_layers=len(weights.layers),
        )

    @app.get("/models/{model_id}", response_model=ModelInfoResponse)
    def model_info(model_id: str) -> ModelInfoResponse:
        entry = registry.get(model_id)
        return ModelInfoResponse(
            model_id=model_id,
            config=ModelConfigModel.from_config(entry.config),
            hidden_dim=entry.config.hidden_dim,
        )

    @app.delete("/models/{model_id}")
    def delete_model(model_id: str) -> dict:
        registry.remove(model_id)
        return {"deleted": model_id}

    @app.post("/models/{model_id}/forward", response_model=ForwardResponse)
    def model_forward(model_id: str, req: ForwardRequest) -> ForwardResponse:
        entry = registry.get(model_id)
        config = entry.config
        seqs = SeqLengths.of(req.lengths, config.max_seq_len)
        padded_rows = config.batch_size * config.max_seq_len
        if req.input is not None:
            arr = np.asarray(req.input, dtype=np.float32)
            if arr.shape != (padded_rows, config.hidden_dim):
                raise HTTPException(
                    status_code=400,
                    detail=f"input must be {padded_rows}x{config.hidden_dim}, got {list(arr.shape)}",
                )
            x = Tensor(arr)
        else:
            rng = np.random.default_rng(req.input_seed)
            data = rng.standard_normal((padded_rows, config.hidden_dim)).astype(np.float32)
            data[~build_mask(seqs).reshape(-1).astype(bool)] = 0.0
            x = Tensor(data)

        t0 = time.perf_counter()
        out = forward(entry.weights, seqs, x, config, workers=req.workers)
        elapsed_ms = (time.perf_counter() - t0) * 1e3

        plan = plan_for_lengths(seqs)
        report = (
            _flop_report_model(config, seqs, flops.variant_for_flags(config.flags))
            if req.include_flops
            else None
        )
        return ForwardResponse(
            rows=out.rows,
            cols=out.cols,
            valid_word_cnt=plan.valid_word_cnt,
            alpha=plan.alpha,
            elapsed_ms=elapsed_ms,
            output=out.array.tolist() if req.include_output else None,
            flops=report,
        )

    @app.post("/models/{model_id}/flops", response_model=FlopReportModel)
    def model_flops(model_id: str, req: FlopsRequest) -> FlopReportModel:
        entry = registry.get(model_id)
        variant = req.variant or flops.variant_for_flags(entry.config.flags)
        seqs = SeqLengths.of(req.lengths, entry.config.max_seq_len)
        return _flop_report_model(entry.config, seqs, variant)

    @app.post("/packing/plan", response_model=PackingPlanResponse)
    def packing_plan(req: PackingPlanRequest) -> PackingPlanResponse:
        seqs = SeqLengths.of(req.lengths, req.max_seq_len)
        mask = build_mask(seqs)
        plan = plan_for_lengths(seqs)
        return PackingPlanResponse(
            mask=mask.tolist(),
            offsets=plan.offsets.tolist(),
            seq_starts=plan.seq_starts.tolist(),
            valid_word_cnt=plan.valid_word_cnt,
            alpha=plan.alpha,
        )

    @app.post("/bench", response_model=BenchResponse)
    def bench(req: BenchRequest) -> BenchResponse:
        spec = BenchSpec(
            preset=req.preset,
            batch_size=req.batch_size,
            max_seq_lens=tuple(req.max_seq_lens),
            alphas=tuple(req.alphas) if req.alphas else None,
            mode=req.mode,
            seed=req.seed,
            repeats=req.repeats,
            variants=tuple(req.variants),
            workers=req.workers,
            layers=req.layers,
            weights_path=req.weights_path,
            check=req.check,
            head_num=req.head_num,
            head_size=req.head_size,
            ffn_scale=req.ffn_scale,
            share_layer_weights=req.share_layer_weights,
        )
        result = run_ladder(spec)
        return BenchResponse(
            rows=[BenchRowModel(**row.as_dict()) for row in result.rows],
            warnings=result.warnings,
            diagnostics=result.diagnostics,
            passed=result.passed,
        )

    return app


app = create_app()
