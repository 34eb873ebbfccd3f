"""Correlating transferability scores against measured transfer accuracy.

A manifest lists (source, target) task pairs with the transfer accuracy a
user measured for each pair; the harness scores every pair, groups the
points by target task, and reports Pearson and Spearman coefficients per
target plus pooled. Scores are cached on disk keyed by the export file
digests and the full scoring configuration, so re-runs are cheap.
"""

from __future__ import annotations

import csv
import hashlib
import json
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__ as _pkg_version
from .errors import (
    OtsegError,
    RunError,
    UndefinedCorrelationError,
    ValidationError,
)
from .exports import load_task_export
from .metric import SamplingConfig, TransferScore, score_task_exports
from .solver import SinkhornConfig
from .stats import pearson, spearman

MIN_POINTS_PER_COEFFICIENT = 3

CACHE_ENV_VAR = "OTSEG_CACHE_DIR"


@dataclass(frozen=True)
class EvalRecord:
    """One source -> target transfer with its measured accuracy."""

    source_id: str
    target_id: str
    source_export_path: str
    target_export_path: str
    transfer_accuracy: float

    def __post_init__(self) -> None:
        acc = float(self.transfer_accuracy)
        if not np.isfinite(acc) or not (0.0 <= acc <= 1.0):
            raise ValidationError(
                f"transfer_accuracy must be finite in [0, 1], got {acc} "
                f"for {self.source_id} -> {self.target_id}"
            )
        object.__setattr__(self, "transfer_accuracy", acc)


@dataclass(frozen=True)
class EvalManifest:
    """A correlation study: records plus free-form metadata.

    `metadata` should carry a human description and the name of the
    accuracy metric; neither is interpreted by the harness.
    """

    records: tuple[EvalRecord, ...]
    metadata: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not self.records:
            raise ValidationError("manifest has no records")
        pairs = [(r.source_id, r.target_id) for r in self.records]
        if len(set(pairs)) != len(pairs):
            raise ValidationError("manifest has duplicate (source_id, target_id) pairs")
        object.__setattr__(self, "records", tuple(self.records))


def load_manifest(path: str | Path) -> EvalManifest:
    """Read a manifest JSON file; relative export paths resolve against it."""
    path = Path(path)
    with open(path, "r", encoding="utf-8") as fh:
        data = json.load(fh)
    if not isinstance(data, dict) or "records" not in data:
        raise ValidationError(f"{path}: manifest must be an object with a 'records' list")
    base = path.parent
    records = []
    for entry in data["records"]:
        try:
            records.append(
                EvalRecord(
                    source_id=str(entry["source_id"]),
                    target_id=str(entry["target_id"]),
                    source_export_path=str((base / entry["source_export_path"]).resolve()),
                    target_export_path=str((base / entry["target_export_path"]).resolve()),
                    transfer_accuracy=float(entry["transfer_accuracy"]),
                )
            )
        except KeyError as exc:
            raise ValidationError(f"{path}: record missing key {exc}") from exc
    return EvalManifest(records=tuple(records), metadata=data.get("metadata", {}))


def save_manifest(manifest: EvalManifest, path: str | Path) -> None:
    path = Path(path)
    payload = {
        "metadata": manifest.metadata,
        "records": [
            {
                "source_id": r.source_id,
                "target_id": r.target_id,
                "source_export_path": r.source_export_path,
                "target_export_path": r.target_export_path,
                "transfer_accuracy": r.transfer_accuracy,
            }
            for r in manifest.records
        ],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


@dataclass(frozen=True)
class ScorePoint:
    target_id: str
    source_id: str
    otce: float
    accuracy: float


@dataclass(frozen=True)
class RecordFailure:
    target_id: str
    source_id: str
    error: str


@dataclass(frozen=True)
class TargetCorrelation:
    pearson: float | None
    spearman: float | None
    n_pairs: int


@dataclass(frozen=True)
class CorrelationReport:
    """Per-target and pooled correlation between score and accuracy."""

    pearson: float | None
    spearman: float | None
    per_target: dict[str, TargetCorrelation]
    points: tuple[ScorePoint, ...]
    failures: tuple[RecordFailure, ...]
    warnings: tuple[str, ...]

    def to_dict(self) -> dict:
        return {
            "pearson": self.pearson,
            "spearman": self.spearman,
            "per_target": {
                tid: {"pearson": tc.pearson, "spearman": tc.spearman, "n_pairs": tc.n_pairs}
                for tid, tc in self.per_target.items()
            },
            "points": [
                {
                    "target_id": p.target_id,
                    "source_id": p.source_id,
                    "otce": p.otce,
                    "accuracy": p.accuracy,
                }
                for p in self.points
            ],
            "failures": [
                {"target_id": f.target_id, "source_id": f.source_id, "error": f.error}
                for f in self.failures
            ],
            "warnings": list(self.warnings),
        }


# ---------------------------------------------------------------------------
# score cache


def default_cache_dir() -> Path:
    env = os.environ.get(CACHE_ENV_VAR)
    if env:
        return Path(env)
    return Path.home() / ".cache" / "otseg"


def _digest_file(path: Path, hasher) -> None:
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            hasher.update(block)


def _digest_export(path: str) -> str:
    hasher = hashlib.sha256()
    p = Path(path)
    if p.is_dir():
        for name in ("features.npy", "labels.npy", "meta.json"):
            hasher.update(name.encode())
            _digest_file(p / name, hasher)
    else:
        _digest_file(p, hasher)
    return hasher.hexdigest()


class ScoreCache:
    """File-per-entry score cache keyed by export digests and configs."""

    def __init__(self, root: str | Path | None = None):
        self.root = Path(root) if root is not None else default_cache_dir()

    def key(
        self,
        source_path: str,
        target_path: str,
        sampling: SamplingConfig,
        solver: SinkhornConfig,
        standardize_features: bool,
    ) -> str:
        payload = json.dumps(
            {
                "version": _pkg_version,
                "source": _digest_export(source_path),
                "target": _digest_export(target_path),
                "sampling": [
                    sampling.pixels_per_sample,
                    sampling.repetitions,
                    sampling.seed,
                    sampling.replacement_policy,
                    sampling.class_balanced,
                ],
                "solver": [
                    solver.epsilon,
                    solver.max_iterations,
                    solver.tolerance,
                    solver.log_domain,
                    solver.normalize_cost,
                    solver.anderson_memory,
                ],
                "standardize": standardize_features,
            },
            sort_keys=True,
        )
        return hashlib.sha256(payload.encode()).hexdigest()

    def get(self, key: str) -> TransferScore | None:
        path = self.root / f"{key}.json"
        if not path.is_file():
            return None
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
            score = data["score"]
            return TransferScore(
                otce=score["otce"],
                task_difference=score["task_difference"],
                domain_difference=score["domain_difference"],
                per_repetition=tuple(score["per_repetition"]),
                pixels_per_sample=score["N"],
                repetitions=score["K"],
                seed=score["seed"],
                epsilon=score["epsilon"],
                converged_repetitions=score["converged_repetitions"],
                config_echo=data.get("config_echo", {}),
            )
        except (json.JSONDecodeError, KeyError, ValidationError):
            return None

    def put(self, key: str, score: TransferScore) -> None:
        self.root.mkdir(parents=True, exist_ok=True)
        path = self.root / f"{key}.json"
        tmp = path.with_suffix(".tmp")
        tmp.write_text(
            json.dumps({"score": score.to_dict(), "config_echo": score.config_echo}, sort_keys=True),
            encoding="utf-8",
        )
        os.replace(tmp, path)


# ---------------------------------------------------------------------------
# evaluation run


def _score_record(
    record: EvalRecord,
    sampling: SamplingConfig,
    solver: SinkhornConfig,
    standardize_features: bool,
    cache: ScoreCache | None,
) -> TransferScore:
    if cache is not None:
        key = cache.key(
            record.source_export_path,
            record.target_export_path,
            sampling,
            solver,
            standardize_features,
        )
        hit = cache.get(key)
        if hit is not None:
            return hit
    source = load_task_export(record.source_export_path)
    target = load_task_export(record.target_export_path)
    score = score_task_exports(
        source,
        target,
        sampling,
        solver,
        standardize_features=standardize_features,
    )
    if cache is not None:
        cache.put(key, score)
    return score


def _correlate(points: list[ScorePoint], label: str, notes: list[str]) -> TargetCorrelation | None:
    n = len(points)
    if n < MIN_POINTS_PER_COEFFICIENT:
        notes.append(f"{label}: only {n} points, coefficients omitted (needs >= {MIN_POINTS_PER_COEFFICIENT})")
        return TargetCorrelation(pearson=None, spearman=None, n_pairs=n)
    scores = np.array([p.otce for p in points])
    accs = np.array([p.accuracy for p in points])
    try:
        r = pearson(scores, accs)
        rho = spearman(scores, accs)
    except UndefinedCorrelationError as exc:
        notes.append(f"{label}: {exc}")
        return TargetCorrelation(pearson=None, spearman=None, n_pairs=n)
    return TargetCorrelation(pearson=r, spearman=rho, n_pairs=n)


def run_evaluation(
    manifest: EvalManifest,
    sampling: SamplingConfig | None = None,
    solver: SinkhornConfig | None = None,
    *,
    jobs: int = 1,
    cache: ScoreCache | None = None,
    use_cache: bool = True,
    standardize_features: bool = False,
) -> CorrelationReport:
    """Score every manifest record and correlate scores with accuracies.

    Records failing to load are collected in the report's failures section;
    the run only errors out when no record succeeds. Records are processed
    in sorted (target_id, source_id) order and assembly is deterministic
    regardless of `jobs`.
    """
    sampling = sampling or SamplingConfig()
    solver = solver or SinkhornConfig()
    if use_cache and cache is None:
        cache = ScoreCache()
    elif not use_cache:
        cache = None
    records = sorted(manifest.records, key=lambda r: (r.target_id, r.source_id))

    def one(record: EvalRecord) -> tuple[EvalRecord, TransferScore | None, str | None]:
        try:
            return record, _score_record(record, sampling, solver, standardize_features, cache), None
        except (OtsegError, OSError) as exc:
            return record, None, f"{type(exc).__name__}: {exc}"

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(one, records))
    else:
        outcomes = [one(r) for r in records]

    points: list[ScorePoint] = []
    failures: list[RecordFailure] = []
    for record, score, error in outcomes:
        if error is not None:
            failures.append(
                RecordFailure(target_id=record.target_id, source_id=record.source_id, error=error)
            )
        else:
            points.append(
                ScorePoint(
                    target_id=record.target_id,
                    source_id=record.source_id,
                    otce=score.otce,
                    accuracy=record.transfer_accuracy,
                )
            )
    if not points:
        raise RunError(
            f"all {len(records)} records failed; first failure: "
            f"{failures[0].error if failures else 'none'}"
        )

    notes: list[str] = []
    per_target: dict[str, TargetCorrelation] = {}
    for target_id in sorted({p.target_id for p in points}):
        group = [p for p in points if p.target_id == target_id]
        corr = _correlate(group, f"target {target_id}", notes)
        if corr is not None:
            per_target[target_id] = corr
    pooled = _correlate(points, "pooled", notes)
    report = CorrelationReport(
        pearson=pooled.pearson if pooled else None,
        spearman=pooled.spearman if pooled else None,
        per_target=per_target,
        points=tuple(points),
        failures=tuple(failures),
        warnings=tuple(notes),
    )
    for note in notes:
        warnings.warn(note, stacklevel=2)
    assert len(report.points) + len(report.failures) == len(manifest.records)
    return report


# ---------------------------------------------------------------------------
# report writers


def write_report_json(report: CorrelationReport, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_report_csv(report: CorrelationReport, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["target_id", "source_id", "otce", "accuracy"])
        for p in report.points:
            writer.writerow([p.target_id, p.source_id, repr(p.otce), repr(p.accuracy)])


def _svg_scatter(points: list[ScorePoint], target_id: str) -> str:
    width, height = 640, 480
    left, right, top, bottom = 70, 20, 40, 50
    xs = [p.otce for p in points]
    ys = [p.accuracy for p in points]
    x_lo, x_hi = min(xs), max(xs)
    y_lo, y_hi = min(ys), max(ys)
    if x_hi == x_lo:
        x_lo, x_hi = x_lo - 0.5, x_hi + 0.5
    if y_hi == y_lo:
        y_lo, y_hi = y_lo - 0.05, y_hi + 0.05
    x_pad = 0.05 * (x_hi - x_lo)
    y_pad = 0.05 * (y_hi - y_lo)
    x_lo, x_hi = x_lo - x_pad, x_hi + x_pad
    y_lo, y_hi = y_lo - y_pad, y_hi + y_pad

    def sx(value: float) -> float:
        return left + (value - x_lo) / (x_hi - x_lo) * (width - left - right)

    def sy(value: float) -> float:
        return height - bottom - (value - y_lo) / (y_hi - y_lo) * (height - top - bottom)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2:.1f}" y="22" text-anchor="middle" font-family="sans-serif" '
        f'font-size="16">target: {target_id}</text>',
        f'<line x1="{left}" y1="{height - bottom}" x2="{width - right}" y2="{height - bottom}" '
        'stroke="black"/>',
        f'<line x1="{left}" y1="{top}" x2="{left}" y2="{height - bottom}" stroke="black"/>',
        f'<text x="{(left + width - right) / 2:.1f}" y="{height - 12}" text-anchor="middle" '
        'font-family="sans-serif" font-size="13">OTCE score (nats)</text>',
        f'<text x="18" y="{(top + height - bottom) / 2:.1f}" text-anchor="middle" '
        f'font-family="sans-serif" font-size="13" '
        f'transform="rotate(-90 18 {(top + height - bottom) / 2:.1f})">transfer accuracy</text>',
    ]
    for i in range(5):
        xv = x_lo + i * (x_hi - x_lo) / 4
        yv = y_lo + i * (y_hi - y_lo) / 4
        parts.append(
            f'<line x1="{sx(xv):.2f}" y1="{height - bottom}" x2="{sx(xv):.2f}" '
            f'y2="{height - bottom + 5}" stroke="black"/>'
        )
        parts.append(
            f'<text x="{sx(xv):.2f}" y="{height - bottom + 20}" text-anchor="middle" '
            f'font-family="sans-serif" font-size="11">{xv:.4g}</text>'
        )
        parts.append(
            f'<line x1="{left - 5}" y1="{sy(yv):.2f}" x2="{left}" y2="{sy(yv):.2f}" stroke="black"/>'
        )
        parts.append(
            f'<text x="{left - 9}" y="{sy(yv) + 4:.2f}" text-anchor="end" '
            f'font-family="sans-serif" font-size="11">{yv:.4g}</text>'
        )
    for p in points:
        parts.append(
            f'<circle cx="{sx(p.otce):.2f}" cy="{sy(p.accuracy):.2f}" r="4" '
            'fill="steelblue" fill-opacity="0.8"/>'
        )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def write_report_svgs(report: CorrelationReport, directory: str | Path) -> list[Path]:
    """One scatter plot per target; returns the written paths."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    written = []
    for target_id in sorted({p.target_id for p in report.points}):
        group = [p for p in report.points if p.target_id == target_id]
        safe = "".join(ch if ch.isalnum() or ch in "-_." else "_" for ch in target_id)
        path = directory / f"scatter-{safe}.svg"
        path.write_text(_svg_scatter(group, target_id), encoding="utf-8")
        written.append(path)
    return written
