"""Transferability scoring from optimal-transport couplings.

The pipeline: squared-distance costs between source and target pixel
features, an entropic transport plan with uniform marginals, aggregation
of the plan into an empirical joint distribution over (source label,
target label), and finally the conditional entropy H(Y_t | Y_s) in nats.
The score is the negated conditional entropy, so values live in
``[-ln |Y_t|, 0]`` and larger means more transferable.

Because real pixel sets run into the tens of millions, scoring draws N
pixels from each side uniformly without replacement and averages the
score over K independent repetitions.
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal

import numpy as np

from .errors import DimensionError, EmptySetError, OtsegError, SizeError, ValidationError
from .exports import PixelSet, TaskExport, flatten_to_pixelset
from .solver import (
    CouplingMatrix,
    SinkhornConfig,
    compute_cost_matrix,
    sinkhorn,
    transport_cost,
)

_SPLITMIX_GAMMA = 0x9E3779B97F4A7C15
_MASK64 = (1 << 64) - 1

# joint aggregation switches from exact flat-index bincount to blocked
# matrix products above this many coupling entries
_BINCOUNT_LIMIT = 4_000_000


def mix_seed(seed: int, stream: int) -> int:
    """Derive an independent 64-bit seed for repetition `stream`.

    Splitmix-style finalizer over ``seed + (stream + 1) * gamma``; cheap,
    stateless, and collision-resistant enough for a handful of streams.
    """
    z = (int(seed) + (int(stream) + 1) * _SPLITMIX_GAMMA) & _MASK64
    z ^= z >> 30
    z = (z * 0xBF58476D1CE4E5B9) & _MASK64
    z ^= z >> 27
    z = (z * 0x94D049BB133111EB) & _MASK64
    z ^= z >> 31
    return z


@dataclass(frozen=True)
class SamplingConfig:
    """Pixel-sampling settings for repeated scoring.

    `pixels_per_sample` (N) pixels are drawn from each side per repetition,
    `repetitions` (K) times. When N exceeds the available pixels the
    `replacement_policy` decides between raising and clamping N down.
    `class_balanced` switches from uniform pixel draws to per-class quotas.
    """

    pixels_per_sample: int = 10000
    repetitions: int = 10
    seed: int = 0
    replacement_policy: Literal["error", "clamp"] = "error"
    class_balanced: bool = False

    def __post_init__(self) -> None:
        if self.pixels_per_sample < 1:
            raise ValidationError(f"pixels_per_sample must be >= 1, got {self.pixels_per_sample}")
        if self.repetitions < 1:
            raise ValidationError(f"repetitions must be >= 1, got {self.repetitions}")
        if not (0 <= int(self.seed) <= _MASK64):
            raise ValidationError("seed must fit in 64 unsigned bits")
        if self.replacement_policy not in ("error", "clamp"):
            raise ValidationError(f"unknown replacement_policy {self.replacement_policy!r}")


@dataclass(frozen=True)
class LabelJoint:
    """Empirical joint distribution over (source label, target label)."""

    joint: np.ndarray
    source_marginal: np.ndarray

    def __post_init__(self) -> None:
        joint = np.ascontiguousarray(self.joint, dtype=np.float64)
        marginal = np.ascontiguousarray(self.source_marginal, dtype=np.float64)
        if joint.ndim != 2:
            raise ValidationError(f"joint must be 2-D, got shape {joint.shape}")
        if marginal.shape != (joint.shape[0],):
            raise ValidationError("source_marginal length must match joint rows")
        if joint.size and float(joint.min()) < 0.0:
            raise ValidationError(f"joint has negative entry {float(joint.min())}")
        total = float(joint.sum())
        if abs(total - 1.0) > 1e-9:
            raise ValidationError(f"joint mass {total} deviates from 1 by more than 1e-9")
        joint.flags.writeable = False
        marginal.flags.writeable = False
        object.__setattr__(self, "joint", joint)
        object.__setattr__(self, "source_marginal", marginal)


@dataclass(frozen=True)
class TransferScore:
    """Transferability score with diagnostics.

    `otce` is the mean of `per_repetition` and equals the negated task
    difference exactly. `domain_difference` is the mean transport cost of
    the couplings (a Wasserstein-distance byproduct, diagnostic only).
    """

    otce: float
    task_difference: float
    domain_difference: float
    per_repetition: tuple[float, ...]
    pixels_per_sample: int
    repetitions: int
    seed: int
    epsilon: float
    converged_repetitions: int
    config_echo: dict = field(default_factory=dict, repr=False)

    def __post_init__(self) -> None:
        if self.otce != -self.task_difference:
            raise ValidationError("otce must equal -task_difference exactly")
        if not self.per_repetition:
            raise ValidationError("per_repetition must not be empty")
        mean = _stable_mean(self.per_repetition)
        if abs(mean - self.otce) > 1e-12:
            raise ValidationError("otce must equal mean(per_repetition) within 1e-12")

    def to_dict(self) -> dict:
        return {
            "otce": self.otce,
            "task_difference": self.task_difference,
            "domain_difference": self.domain_difference,
            "per_repetition": list(self.per_repetition),
            "N": self.pixels_per_sample,
            "K": self.repetitions,
            "seed": self.seed,
            "epsilon": self.epsilon,
            "converged_repetitions": self.converged_repetitions,
        }


def _stable_mean(values: tuple[float, ...] | list[float]) -> float:
    # sorted + exact summation keeps the mean independent of evaluation order
    return math.fsum(sorted(values)) / len(values)


def label_joint_from_coupling(
    coupling: CouplingMatrix | np.ndarray,
    source_labels: np.ndarray,
    target_labels: np.ndarray,
    class_counts: tuple[int, int],
) -> LabelJoint:
    """Aggregate coupling mass over label pairs.

    ``joint[y_s, y_t]`` collects the plan entries whose source pixel is
    labeled ``y_s`` and target pixel ``y_t``; the source marginal is the
    row sum of the joint.
    """
    plan = coupling.values if isinstance(coupling, CouplingMatrix) else np.asarray(coupling, dtype=np.float64)
    ys = np.asarray(source_labels).astype(np.int64, copy=False)
    yt = np.asarray(target_labels).astype(np.int64, copy=False)
    n_src, n_tgt = len(ys), len(yt)
    if plan.shape != (n_src, n_tgt):
        raise ValidationError(
            f"coupling shape {plan.shape} does not match label lengths ({n_src}, {n_tgt})"
        )
    cls_src, cls_tgt = int(class_counts[0]), int(class_counts[1])
    if cls_src < 1 or cls_tgt < 1:
        raise ValidationError("class counts must be positive")
    if ys.size and (int(ys.min()) < 0 or int(ys.max()) >= cls_src):
        raise ValidationError(f"source label outside [0, {cls_src})")
    if yt.size and (int(yt.min()) < 0 or int(yt.max()) >= cls_tgt):
        raise ValidationError(f"target label outside [0, {cls_tgt})")
    if plan.size <= _BINCOUNT_LIMIT:
        flat = (ys[:, None] * cls_tgt + yt[None, :]).ravel()
        joint = np.bincount(flat, weights=plan.ravel(), minlength=cls_src * cls_tgt)
        joint = joint.reshape(cls_src, cls_tgt)
    else:
        onehot_tgt = np.zeros((n_tgt, cls_tgt), dtype=np.float64)
        onehot_tgt[np.arange(n_tgt), yt] = 1.0
        per_source = plan @ onehot_tgt
        joint = np.zeros((cls_src, cls_tgt), dtype=np.float64)
        np.add.at(joint, ys, per_source)
    return LabelJoint(joint=joint, source_marginal=joint.sum(axis=1))


def conditional_entropy(joint: LabelJoint | np.ndarray) -> float:
    """H(Y_t | Y_s) in nats under the given joint; 0 * log 0 counts as 0."""
    table = joint.joint if isinstance(joint, LabelJoint) else np.asarray(joint, dtype=np.float64)
    marginal = table.sum(axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = table / marginal[:, None]
        terms = np.where(table > 0.0, table * np.log(ratio), 0.0)
    return float(-terms.sum())


def _entropy(p: np.ndarray) -> float:
    p = p[p > 0]
    return float(-(p * np.log(p)).sum())


def _standardize_pooled(src: np.ndarray, tgt: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    stacked = np.concatenate([src, tgt], axis=0).astype(np.float64)
    mean = stacked.mean(axis=0)
    std = stacked.std(axis=0)
    std = np.where(std > 0, std, 1.0)
    return (
        ((src - mean) / std).astype(np.float32),
        ((tgt - mean) / std).astype(np.float32),
    )


def _dump_coupling(coupling: CouplingMatrix, directory: Path, repetition: int) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    raw = directory / f"coupling-{repetition:03d}.f4"
    np.ascontiguousarray(coupling.values, dtype="<f4").tofile(raw)
    meta = directory / f"coupling-{repetition:03d}.json"
    meta.write_text(
        f'{{"rows": {coupling.shape[0]}, "cols": {coupling.shape[1]}, "dtype": "<f4"}}\n',
        encoding="utf-8",
    )


def otce_single(
    source: PixelSet,
    target: PixelSet,
    solver_config: SinkhornConfig | None = None,
    *,
    standardize_features: bool = False,
    coupling_dump_dir: str | Path | None = None,
    _repetition: int = 0,
) -> TransferScore:
    """Score one source/target pixel-set pair without subsampling.

    Runs cost -> entropic transport with uniform marginals -> label joint
    -> conditional entropy, and returns the negated task difference plus
    the transport cost as the domain difference.
    """
    solver_config = solver_config or SinkhornConfig()
    if source.channels != target.channels:
        raise DimensionError(
            f"channel mismatch: source has {source.channels}, target has {target.channels}"
        )
    src_feats, tgt_feats = source.features, target.features
    if standardize_features:
        src_feats, tgt_feats = _standardize_pooled(src_feats, tgt_feats)
    cost = compute_cost_matrix(src_feats, tgt_feats)
    n_src, n_tgt = cost.shape
    a = np.full(n_src, 1.0 / n_src)
    b = np.full(n_tgt, 1.0 / n_tgt)
    coupling = sinkhorn(cost, a, b, solver_config)
    if coupling_dump_dir is not None:
        _dump_coupling(coupling, Path(coupling_dump_dir), _repetition)
    joint = label_joint_from_coupling(
        coupling, source.labels, target.labels, (source.class_count, target.class_count)
    )
    task_difference = conditional_entropy(joint)
    _check_entropy_bounds(task_difference, joint, target.class_count)
    domain_difference = transport_cost(cost, coupling)
    otce = -task_difference
    return TransferScore(
        otce=otce,
        task_difference=task_difference,
        domain_difference=domain_difference,
        per_repetition=(otce,),
        pixels_per_sample=source.pixel_count,
        repetitions=1,
        seed=0,
        epsilon=solver_config.epsilon,
        converged_repetitions=int(coupling.converged),
        config_echo=_echo(solver_config, None, standardize_features),
    )


def _check_entropy_bounds(task_difference: float, joint: LabelJoint, target_classes: int) -> None:
    upper = math.log(target_classes) if target_classes > 1 else 0.0
    if not (-1e-9 <= task_difference <= upper + 1e-9):
        raise OtsegError(
            f"conditional entropy {task_difference} escapes [0, ln {target_classes}]"
        )
    target_marginal_entropy = _entropy(joint.joint.sum(axis=0))
    if task_difference > target_marginal_entropy + 1e-9:
        raise OtsegError(
            "conditional entropy exceeds target marginal entropy "
            f"({task_difference} > {target_marginal_entropy})"
        )


def _echo(
    solver: SinkhornConfig, sampling: SamplingConfig | None, standardize: bool
) -> dict:
    echo = {
        "solver": {
            "epsilon": solver.epsilon,
            "max_iterations": solver.max_iterations,
            "tolerance": solver.tolerance,
            "log_domain": solver.log_domain,
            "normalize_cost": solver.normalize_cost,
            "anderson_memory": solver.anderson_memory,
        },
        "standardize_features": standardize,
    }
    if sampling is not None:
        echo["sampling"] = {
            "pixels_per_sample": sampling.pixels_per_sample,
            "repetitions": sampling.repetitions,
            "seed": sampling.seed,
            "replacement_policy": sampling.replacement_policy,
            "class_balanced": sampling.class_balanced,
        }
    return echo


def _draw_indices(rng: np.random.Generator, available: int, n: int) -> np.ndarray:
    if n == available:
        return np.arange(available)
    idx = rng.choice(available, size=n, replace=False)
    return np.sort(idx)


def _draw_balanced(
    rng: np.random.Generator, labels: np.ndarray, n: int, class_count: int
) -> np.ndarray:
    """Per-class quotas as equal as availability allows, exactly n total."""
    order = np.argsort(labels, kind="stable")
    sorted_labels = labels[order]
    boundaries = np.searchsorted(sorted_labels, np.arange(class_count + 1))
    groups = [order[boundaries[c] : boundaries[c + 1]] for c in range(class_count)]
    counts = np.array([g.size for g in groups])
    quota = np.zeros(class_count, dtype=np.int64)
    remaining = n
    open_classes = counts > 0
    while remaining > 0 and open_classes.any():
        share = max(1, remaining // int(open_classes.sum()))
        for c in np.flatnonzero(open_classes):
            take = min(share, int(counts[c] - quota[c]), remaining)
            quota[c] += take
            remaining -= take
            if quota[c] == counts[c]:
                open_classes[c] = False
            if remaining == 0:
                break
    picks = []
    for c in range(class_count):
        if quota[c] == 0:
            continue
        group = groups[c]
        if quota[c] == group.size:
            picks.append(group)
        else:
            picks.append(group[rng.choice(group.size, size=int(quota[c]), replace=False)])
    return np.sort(np.concatenate(picks))


def _subsample(
    pixels: PixelSet, rng: np.random.Generator, n: int, balanced: bool
) -> PixelSet:
    if balanced:
        idx = _draw_balanced(rng, pixels.labels, n, pixels.class_count)
    else:
        idx = _draw_indices(rng, pixels.pixel_count, n)
    if idx.size == pixels.pixel_count:
        return pixels
    return PixelSet(
        features=pixels.features[idx],
        labels=pixels.labels[idx],
        class_count=pixels.class_count,
    )


def otce_sampled(
    source: PixelSet,
    target: PixelSet,
    sampling: SamplingConfig | None = None,
    solver_config: SinkhornConfig | None = None,
    *,
    standardize_features: bool = False,
    jobs: int = 1,
    coupling_dump_dir: str | Path | None = None,
) -> TransferScore:
    """Mean transferability score over K subsampled repetitions.

    Each repetition draws N pixels from both sides uniformly without
    replacement using a seed derived deterministically from
    ``(sampling.seed, k)``, so results are reproducible bit for bit and
    independent of repetition scheduling.
    """
    sampling = sampling or SamplingConfig()
    solver_config = solver_config or SinkhornConfig()
    if source.channels != target.channels:
        raise DimensionError(
            f"channel mismatch: source has {source.channels}, target has {target.channels}"
        )
    available = min(source.pixel_count, target.pixel_count)
    n = sampling.pixels_per_sample
    if n > available:
        if sampling.replacement_policy == "error":
            raise SizeError(
                f"requested {n} pixels per sample but only {available} are available "
                "(set replacement_policy='clamp' to use all)"
            )
        n = available
    alphabet = max(source.class_count, target.class_count)
    if n < alphabet:
        warnings.warn(
            f"sample size {n} is below the class alphabet size {alphabet}; "
            "joint estimates will be sparse",
            stacklevel=2,
        )

    def run(k: int) -> TransferScore:
        rng = np.random.default_rng(mix_seed(sampling.seed, k))
        sub_src = _subsample(source, rng, n, sampling.class_balanced)
        sub_tgt = _subsample(target, rng, n, sampling.class_balanced)
        return otce_single(
            sub_src,
            sub_tgt,
            solver_config,
            standardize_features=standardize_features,
            coupling_dump_dir=coupling_dump_dir,
            _repetition=k,
        )

    reps = sampling.repetitions
    if jobs > 1 and reps > 1:
        with ThreadPoolExecutor(max_workers=min(jobs, reps)) as pool:
            singles = list(pool.map(run, range(reps)))
    else:
        singles = [run(k) for k in range(reps)]
    per_repetition = tuple(s.otce for s in singles)
    otce = _stable_mean(per_repetition)
    domain = _stable_mean([s.domain_difference for s in singles])
    return TransferScore(
        otce=otce,
        task_difference=-otce,
        domain_difference=domain,
        per_repetition=per_repetition,
        pixels_per_sample=n,
        repetitions=reps,
        seed=sampling.seed,
        epsilon=solver_config.epsilon,
        converged_repetitions=sum(s.converged_repetitions for s in singles),
        config_echo=_echo(solver_config, sampling, standardize_features),
    )


def score_task_exports(
    source: TaskExport,
    target: TaskExport,
    sampling: SamplingConfig | None = None,
    solver_config: SinkhornConfig | None = None,
    *,
    standardize_features: bool = False,
    jobs: int = 1,
    coupling_dump_dir: str | Path | None = None,
) -> TransferScore:
    """Flatten two exports and score them; warns on mismatched model ids."""
    if (
        source.model_id is not None
        and target.model_id is not None
        and source.model_id != target.model_id
    ):
        warnings.warn(
            f"source features come from {source.model_id!r} but target features "
            f"from {target.model_id!r}; both sides should use the source model",
            stacklevel=2,
        )
    return otce_sampled(
        flatten_to_pixelset(source),
        flatten_to_pixelset(target),
        sampling,
        solver_config,
        standardize_features=standardize_features,
        jobs=jobs,
        coupling_dump_dir=coupling_dump_dir,
    )
