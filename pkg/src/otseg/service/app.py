"""FastAPI application wrapping the scoring toolkit.

Endpoints take server-local file paths; the CLI runs the app in-process by
default, so paths resolve on the caller's machine unless a remote server
is configured explicitly.
"""

from __future__ import annotations

import json
from pathlib import Path

from fastapi import FastAPI, Query, Request
from fastapi.responses import JSONResponse

from .. import __version__
from ..errors import (
    FormatError,
    NumericalError,
    OtsegError,
    RunError,
    ValidationError,
)
from ..evaluation import (
    ScoreCache,
    load_manifest,
    run_evaluation,
    write_report_csv,
    write_report_json,
    write_report_svgs,
)
from ..exports import export_info, load_task_export
from ..metric import score_task_exports
from ..synth import generate_manifest, parse_generation_spec
from .schemas import (
    ErrorBody,
    EvalRequest,
    EvalResponse,
    GenerateRequest,
    GenerateResponse,
    HealthResponse,
    InfoResponse,
    ScoreRequest,
    ScoreResponse,
)


def _error_response(status: int, kind: str, message: str) -> JSONResponse:
    return JSONResponse(
        status_code=status,
        content=ErrorBody(error=kind, message=message).model_dump(),
    )


def create_app() -> FastAPI:
    app = FastAPI(
        title="otseg scoring service",
        version=__version__,
        description=(
            "Transferability scoring for semantic segmentation task pairs: "
            "entropic optimal transport over pixel features plus conditional "
            "entropy of the induced label joint."
        ),
    )

    @app.exception_handler(OtsegError)
    def _handle_otseg(request: Request, exc: OtsegError) -> JSONResponse:
        if isinstance(exc, ValidationError):
            return _error_response(422, "validation", str(exc))
        if isinstance(exc, FormatError):
            return _error_response(400, "format", str(exc))
        if isinstance(exc, NumericalError):
            return _error_response(500, "numerical", str(exc))
        if isinstance(exc, RunError):
            return _error_response(500, "run", str(exc))
        return _error_response(500, "internal", str(exc))

    @app.exception_handler(FileNotFoundError)
    def _handle_missing(request: Request, exc: FileNotFoundError) -> JSONResponse:
        return _error_response(404, "io", str(exc))

    @app.exception_handler(OSError)
    def _handle_os(request: Request, exc: OSError) -> JSONResponse:
        return _error_response(500, "io", str(exc))

    @app.exception_handler(json.JSONDecodeError)
    def _handle_json(request: Request, exc: json.JSONDecodeError) -> JSONResponse:
        return _error_response(422, "validation", f"malformed JSON: {exc}")

    @app.get("/healthz", response_model=HealthResponse)
    def healthz() -> HealthResponse:
        return HealthResponse(status="ok", version=__version__)

    @app.post("/score", response_model=ScoreResponse)
    def score(request: ScoreRequest) -> ScoreResponse:
        source = load_task_export(request.source_path)
        target = load_task_export(request.target_path)
        result = score_task_exports(
            source,
            target,
            request.sampling.to_config(),
            request.solver.to_config(),
            standardize_features=request.standardize_features,
            jobs=request.jobs,
            coupling_dump_dir=request.coupling_dump_dir,
        )
        return ScoreResponse(**result.to_dict())

    @app.post("/eval", response_model=EvalResponse)
    def evaluate(request: EvalRequest) -> EvalResponse:
        manifest = load_manifest(request.manifest_path)
        cache = ScoreCache(request.cache_dir) if request.cache_dir else None
        report = run_evaluation(
            manifest,
            request.sampling.to_config(),
            request.solver.to_config(),
            jobs=request.jobs,
            cache=cache,
            use_cache=request.use_cache,
            standardize_features=request.standardize_features,
        )
        out_dir = Path(request.output_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        json_path = out_dir / "report.json"
        csv_path = out_dir / "report.csv"
        write_report_json(report, json_path)
        write_report_csv(report, csv_path)
        plot_files: list[str] = []
        if request.plots:
            plot_files = [str(p) for p in write_report_svgs(report, out_dir / "plots")]
        payload = report.to_dict()
        return EvalResponse(
            pearson=payload["pearson"],
            spearman=payload["spearman"],
            per_target=payload["per_target"],
            points=payload["points"],
            failures=payload["failures"],
            warnings=payload["warnings"],
            report_json=str(json_path),
            report_csv=str(csv_path),
            plot_files=plot_files,
        )

    @app.post("/generate", response_model=GenerateResponse)
    def generate(request: GenerateRequest) -> GenerateResponse:
        if (request.spec is None) == (request.spec_path is None):
            raise ValidationError("provide exactly one of spec or spec_path")
        if request.spec_path is not None:
            path = Path(request.spec_path)
            if not path.is_file():
                raise FileNotFoundError(f"no generation spec at {path}")
            data = json.loads(path.read_text(encoding="utf-8"))
        else:
            data = request.spec
        specs, accuracy_model, target_id = parse_generation_spec(data, seed_override=request.seed)
        manifest, manifest_path = generate_manifest(
            specs, accuracy_model, request.output_dir, target_id=target_id
        )
        export_paths = sorted(
            {r.source_export_path for r in manifest.records}
            | {r.target_export_path for r in manifest.records}
        )
        return GenerateResponse(
            manifest_path=str(manifest_path),
            export_paths=export_paths,
            relatedness=manifest.metadata.get("relatedness", {}),
        )

    @app.get("/info", response_model=InfoResponse)
    def info(path: str = Query(..., description="task export file or directory")) -> InfoResponse:
        summary = export_info(path)
        summary["label_histogram"] = {str(k): v for k, v in summary["label_histogram"].items()}
        return InfoResponse(**summary)

    return app
