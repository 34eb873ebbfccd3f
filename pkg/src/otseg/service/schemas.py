"""Request and response models for the scoring service."""

from __future__ import annotations

from typing import Any, Literal

from pydantic import BaseModel, Field

from ..metric import SamplingConfig
from ..solver import SinkhornConfig


class SolverParams(BaseModel):
    epsilon: float = Field(default=0.1, gt=0)
    max_iterations: int = Field(default=1000, ge=1)
    tolerance: float = Field(default=1e-6, gt=0)
    log_domain: bool = True
    normalize_cost: bool = False
    anderson_memory: int = Field(default=0, ge=0)

    def to_config(self) -> SinkhornConfig:
        return SinkhornConfig(
            epsilon=self.epsilon,
            max_iterations=self.max_iterations,
            tolerance=self.tolerance,
            log_domain=self.log_domain,
            normalize_cost=self.normalize_cost,
            anderson_memory=self.anderson_memory,
        )


class SamplingParams(BaseModel):
    n: int = Field(default=10000, ge=1, description="pixels drawn per side per repetition")
    k: int = Field(default=10, ge=1, description="number of repetitions")
    seed: int = Field(default=0, ge=0)
    replacement_policy: Literal["error", "clamp"] = "error"
    class_balanced: bool = False

    def to_config(self) -> SamplingConfig:
        return SamplingConfig(
            pixels_per_sample=self.n,
            repetitions=self.k,
            seed=self.seed,
            replacement_policy=self.replacement_policy,
            class_balanced=self.class_balanced,
        )


class ScoreRequest(BaseModel):
    source_path: str
    target_path: str
    sampling: SamplingParams = SamplingParams()
    solver: SolverParams = SolverParams()
    standardize_features: bool = False
    jobs: int = Field(default=1, ge=1)
    coupling_dump_dir: str | None = None


class ScoreResponse(BaseModel):
    otce: float
    task_difference: float
    domain_difference: float
    per_repetition: list[float]
    N: int
    K: int
    seed: int
    epsilon: float
    converged_repetitions: int


class TargetCorrelationModel(BaseModel):
    pearson: float | None
    spearman: float | None
    n_pairs: int


class PointModel(BaseModel):
    target_id: str
    source_id: str
    otce: float
    accuracy: float


class FailureModel(BaseModel):
    target_id: str
    source_id: str
    error: str


class EvalRequest(BaseModel):
    manifest_path: str
    output_dir: str
    sampling: SamplingParams = SamplingParams()
    solver: SolverParams = SolverParams()
    plots: bool = False
    jobs: int = Field(default=1, ge=1)
    use_cache: bool = True
    cache_dir: str | None = None
    standardize_features: bool = False


class EvalResponse(BaseModel):
    pearson: float | None
    spearman: float | None
    per_target: dict[str, TargetCorrelationModel]
    points: list[PointModel]
    failures: list[FailureModel]
    warnings: list[str]
    report_json: str
    report_csv: str
    plot_files: list[str]


class GenerateRequest(BaseModel):
    output_dir: str
    spec_path: str | None = None
    spec: dict[str, Any] | None = None
    seed: int | None = Field(default=None, ge=0)


class GenerateResponse(BaseModel):
    manifest_path: str
    export_paths: list[str]
    relatedness: dict[str, float]


class InfoResponse(BaseModel):
    path: str
    layout: str
    images: int
    height: int
    width: int
    channels: int
    class_count: int
    ignore_labels: list[int]
    model_id: str | None
    pixel_count: int
    label_histogram: dict[str, int]


class ErrorBody(BaseModel):
    error: str
    message: str


class HealthResponse(BaseModel):
    status: str
    version: str
