"""FastAPI service wrapping the core package.

Endpoints mirror the CLI surface: receptive-field analysis, training,
evaluation and RF sweeps. Training requests run synchronously and return
when the run completes; a diverged run maps to HTTP 409, invalid
configurations to 422.
"""

from __future__ import annotations

from fastapi import FastAPI, HTTPException

from . import __version__
from .arch import MAX_RHO
from .errors import TrainingDivergedError
from .experiments import build_spec, run_eval, run_sweep, run_training
from .rf import compute_rf, rf_for_rho
from .schemas import (
    AnalyzeRequest,
    AnalyzeResponse,
    EpochRow,
    EvalRequest,
    EvalResponse,
    ExperimentConfig,
    FinalMetric,
    HealthResponse,
    LayerRow,
    RFTableEntry,
    RFTableResponse,
    SweepRequest,
    SweepResponse,
    TrainResponse,
)


def _spec_for_analysis(request: AnalyzeRequest):
    cfg_kwargs = dict(
        arch=request.arch,
        width=request.width,
        dataset={"kind": "synthetic"},
    )
    if request.arch == "vgg":
        cfg_kwargs["removed"] = request.removed
    else:
        cfg_kwargs["rho"] = request.rho
    cfg = ExperimentConfig.model_validate(cfg_kwargs)
    return build_spec(cfg, n_classes=request.n_classes)


def create_app() -> FastAPI:
    app = FastAPI(title="rfcnn", version=__version__)

    @app.get("/health", response_model=HealthResponse)
    def health() -> HealthResponse:
        return HealthResponse(status="ok", version=__version__)

    @app.get("/rf-table", response_model=RFTableResponse)
    def rf_table() -> RFTableResponse:
        entries = [RFTableEntry(rho=r, max_rf=rf_for_rho(r)) for r in range(MAX_RHO + 1)]
        return RFTableResponse(entries=entries)

    @app.post("/analyze", response_model=AnalyzeResponse)
    def analyze(request: AnalyzeRequest) -> AnalyzeResponse:
        try:
            spec = _spec_for_analysis(request)
            report = compute_rf(spec)
        except ValueError as exc:
            raise HTTPException(status_code=422, detail=str(exc))
        return AnalyzeResponse(
            network_name=report.network_name,
            max_rf=report.max_rf,
            layers=[LayerRow(**vars(t)) for t in report.traces],
            arch_text=spec.to_text(),
        )

    @app.post("/train", response_model=TrainResponse)
    def train(config: ExperimentConfig) -> TrainResponse:
        try:
            result = run_training(config)
        except TrainingDivergedError as exc:
            raise HTTPException(status_code=409, detail=f"training diverged: {exc}")
        except (ValueError, FileNotFoundError) as exc:
            raise HTTPException(status_code=422, detail=str(exc))
        return TrainResponse(
            run_id=result.run_id,
            run_dir=str(result.run_dir),
            arch=result.arch,
            rf=result.rf,
            epochs=config.train.epochs,
            final={k: FinalMetric(mean=m, std=s) for k, (m, s) in result.report.final.items()},
            history=[EpochRow(**row) for row in result.report.history],
            metrics_csv=str(result.run_dir / "metrics.csv"),
            checkpoint=str(result.run_dir / "checkpoint_final.rfcnn"),
        )

    @app.post("/eval", response_model=EvalResponse)
    def eval_checkpoint(request: EvalRequest) -> EvalResponse:
        try:
            return run_eval(request)
        except (ValueError, FileNotFoundError) as exc:
            raise HTTPException(status_code=422, detail=str(exc))

    @app.post("/sweep", response_model=SweepResponse)
    def sweep(request: SweepRequest) -> SweepResponse:
        try:
            results, csv_path = run_sweep(request.base, request.values, request.parallel)
        except (ValueError, FileNotFoundError) as exc:
            raise HTTPException(status_code=422, detail=str(exc))
        return SweepResponse(runs=results, csv_path=str(csv_path))

    return app


app = create_app()
