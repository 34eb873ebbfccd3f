"""Synthetic task pairs with controllable relatedness.

Pixels are drawn from per-class Gaussian clusters in feature space; the
target task shares the clusters and then degrades the label relationship
two ways: `label_noise` redraws a fraction of target labels uniformly,
`label_map_scramble` permutes the class correspondence for a fraction of
classes. The product ``(1 - noise) * (1 - scramble)`` serves as the
ground-truth relatedness for ranking tests; only its ordering is
meaningful.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ValidationError
from .evaluation import EvalManifest, EvalRecord, save_manifest
from .exports import PixelSet, TaskExport, flatten_to_pixelset, save_task_export
from .metric import mix_seed


@dataclass(frozen=True)
class SyntheticSpec:
    """Recipe for one synthetic source/target task pair."""

    name: str
    class_count: int = 6
    feature_dim: int = 8
    pixels: int = 5000
    cluster_separation: float = 3.0
    label_noise: float = 0.0
    label_map_scramble: float = 0.0
    seed: int = 0

    def __post_init__(self) -> None:
        if not (2 <= self.class_count <= 65534):
            raise ValidationError(f"class_count must be in [2, 65534], got {self.class_count}")
        if self.feature_dim < 1:
            raise ValidationError(f"feature_dim must be >= 1, got {self.feature_dim}")
        if self.pixels < 1:
            raise ValidationError(f"pixels must be >= 1, got {self.pixels}")
        if not (0.0 <= self.label_noise <= 1.0):
            raise ValidationError(f"label_noise must be in [0, 1], got {self.label_noise}")
        if not (0.0 <= self.label_map_scramble <= 1.0):
            raise ValidationError(
                f"label_map_scramble must be in [0, 1], got {self.label_map_scramble}"
            )
        if self.cluster_separation < 0:
            raise ValidationError(f"cluster_separation must be >= 0, got {self.cluster_separation}")

    @property
    def relatedness(self) -> float:
        return (1.0 - self.label_noise) * (1.0 - self.label_map_scramble)


def _generate_arrays(spec: SyntheticSpec) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    rng = np.random.default_rng(spec.seed)
    k, c, p = spec.class_count, spec.feature_dim, spec.pixels
    means = spec.cluster_separation * rng.standard_normal((k, c))

    src_labels = rng.integers(0, k, size=p)
    src_features = (means[src_labels] + rng.standard_normal((p, c))).astype(np.float32)

    tgt_clusters = rng.integers(0, k, size=p)
    tgt_features = (means[tgt_clusters] + rng.standard_normal((p, c))).astype(np.float32)
    tgt_labels = tgt_clusters.copy()

    if spec.label_map_scramble > 0.0:
        n_scramble = math.ceil(spec.label_map_scramble * k)
        n_scramble = max(2, min(k, n_scramble))  # a 1-cycle would be the identity
        chosen = np.sort(rng.choice(k, size=n_scramble, replace=False))
        mapping = np.arange(k)
        mapping[chosen] = np.roll(chosen, 1)
        tgt_labels = mapping[tgt_labels]

    if spec.label_noise > 0.0:
        n_noise = round(spec.label_noise * p)
        if n_noise:
            noisy = rng.choice(p, size=n_noise, replace=False)
            tgt_labels[noisy] = rng.integers(0, k, size=n_noise)

    return src_features, src_labels.astype(np.uint16), tgt_features, tgt_labels.astype(np.uint16)


def generate_pair_exports(spec: SyntheticSpec) -> tuple[TaskExport, TaskExport, float]:
    """Deterministic task exports (shape [1, 1, P, C]) for one spec."""
    src_f, src_l, tgt_f, tgt_l = _generate_arrays(spec)
    p, c = src_f.shape
    model_id = f"synthetic/{spec.name}"
    source = TaskExport(
        features=src_f.reshape(1, 1, p, c),
        labels=src_l.reshape(1, 1, p),
        class_count=spec.class_count,
        ignore_labels=frozenset(),
        model_id=model_id,
    )
    target = TaskExport(
        features=tgt_f.reshape(1, 1, p, c),
        labels=tgt_l.reshape(1, 1, p),
        class_count=spec.class_count,
        ignore_labels=frozenset(),
        model_id=model_id,
    )
    return source, target, spec.relatedness


def generate_pair(spec: SyntheticSpec) -> tuple[PixelSet, PixelSet, float]:
    """Source and target pixel sets plus the pair's ground-truth relatedness."""
    source, target, relatedness = generate_pair_exports(spec)
    return flatten_to_pixelset(source), flatten_to_pixelset(target), relatedness


@dataclass(frozen=True)
class AccuracyModel:
    """Affine map from relatedness to a synthetic transfer accuracy.

    Optional Gaussian jitter models measurement noise; results are clipped
    into [0, 1] to keep manifests valid.
    """

    slope: float = 0.5
    intercept: float = 0.4
    jitter_sigma: float = 0.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.jitter_sigma < 0:
            raise ValidationError(f"jitter_sigma must be >= 0, got {self.jitter_sigma}")

    def accuracy(self, relatedness: float, index: int) -> float:
        value = self.slope * relatedness + self.intercept
        if self.jitter_sigma > 0.0:
            rng = np.random.default_rng(mix_seed(self.seed, index))
            value += self.jitter_sigma * float(rng.standard_normal())
        return float(min(1.0, max(0.0, value)))


_SPEC_KEYS = {
    "name",
    "class_count",
    "feature_dim",
    "pixels",
    "cluster_separation",
    "label_noise",
    "label_map_scramble",
    "seed",
}


def parse_generation_spec(
    data: dict, *, seed_override: int | None = None
) -> tuple[list[SyntheticSpec], AccuracyModel, str]:
    """Turn a generation-spec mapping into specs plus an accuracy model.

    Expected shape: ``{"target_id"?: str, "accuracy"?: {...}, "specs": [...]}``.
    A seed override rewrites every spec seed (derived per index) and the
    accuracy seed, so one flag reproduces a full generation byte for byte.
    """
    if not isinstance(data, dict):
        raise ValidationError("generation spec must be a JSON object")
    raw_specs = data.get("specs")
    if not isinstance(raw_specs, list) or not raw_specs:
        raise ValidationError("generation spec needs a non-empty 'specs' list")
    specs = []
    for index, entry in enumerate(raw_specs):
        if not isinstance(entry, dict):
            raise ValidationError(f"spec #{index} must be an object")
        unknown = set(entry) - _SPEC_KEYS
        if unknown:
            raise ValidationError(f"spec #{index} has unknown keys {sorted(unknown)}")
        fields = dict(entry)
        fields.setdefault("name", f"src-{index:02d}")
        if seed_override is not None:
            fields["seed"] = mix_seed(seed_override, index)
        try:
            specs.append(SyntheticSpec(**fields))
        except TypeError as exc:
            raise ValidationError(f"bad spec #{index}: {exc}") from exc
    raw_accuracy = data.get("accuracy", {})
    if not isinstance(raw_accuracy, dict):
        raise ValidationError("'accuracy' must be an object")
    accuracy_fields = dict(raw_accuracy)
    if seed_override is not None:
        accuracy_fields["seed"] = seed_override
    try:
        accuracy = AccuracyModel(**accuracy_fields)
    except TypeError as exc:
        raise ValidationError(f"bad accuracy model: {exc}") from exc
    target_id = str(data.get("target_id", "synthetic-target"))
    return specs, accuracy, target_id


def generate_manifest(
    specs: list[SyntheticSpec] | tuple[SyntheticSpec, ...],
    accuracy_model: AccuracyModel,
    output_dir: str | Path,
    *,
    target_id: str = "synthetic-target",
) -> tuple[EvalManifest, Path]:
    """Write exports and a manifest for a synthetic correlation study.

    Each spec contributes one source/target export pair and one manifest
    record whose accuracy is the affine image of the spec's relatedness.
    Returns the manifest and the path of the written manifest JSON.
    """
    if len(specs) < 3:
        raise ValidationError(f"need at least 3 specs for a correlation study, got {len(specs)}")
    names = [s.name for s in specs]
    if len(set(names)) != len(names):
        raise ValidationError("spec names must be unique")
    output_dir = Path(output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    records = []
    relatedness_by_source = {}
    for index, spec in enumerate(specs):
        source, target, relatedness = generate_pair_exports(spec)
        src_path = output_dir / f"{spec.name}-source.otseg"
        tgt_path = output_dir / f"{spec.name}-target.otseg"
        save_task_export(source, src_path)
        save_task_export(target, tgt_path)
        records.append(
            EvalRecord(
                source_id=spec.name,
                target_id=target_id,
                source_export_path=str(src_path.resolve()),
                target_export_path=str(tgt_path.resolve()),
                transfer_accuracy=accuracy_model.accuracy(relatedness, index),
            )
        )
        relatedness_by_source[spec.name] = relatedness
    manifest = EvalManifest(
        records=tuple(records),
        metadata={
            "description": "synthetic relatedness sweep",
            "accuracy_metric": "synthetic-affine",
            "relatedness": relatedness_by_source,
        },
    )
    manifest_path = output_dir / "manifest.json"
    save_manifest(manifest, manifest_path)
    return manifest, manifest_path
