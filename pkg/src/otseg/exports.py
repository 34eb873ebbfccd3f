"""Task exports and pixel sets.

A *task export* packages the per-pixel feature maps and label masks of one
segmentation task: features as float32 ``[n, H, W, C]``, labels as uint16
``[n, H, W]``, plus the class alphabet size and a set of ignore labels.
Two on-disk layouts are supported and load to identical values:

* a single binary container (magic ``OTSEGV1\\0``, little-endian header,
  raw float32/uint16 sections), conventionally ``*.otseg``;
* a directory with ``features.npy`` / ``labels.npy`` (NPY v1.0) and
  ``meta.json``.

A *pixel set* is the export flattened to ``[P, C]`` feature rows with one
label per row, ignore labels dropped.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import EmptySetError, FormatError, ValidationError

MAGIC = b"OTSEGV1\x00"
UNIVERSAL_IGNORE = 65535
DEFAULT_IGNORE_LABELS = frozenset({255})

_HEADER = struct.Struct("<6I")


def _as_native(arr: np.ndarray) -> np.ndarray:
    """Return `arr` in native byte order, copying only when a swap is needed."""
    if arr.dtype.isnative:
        return arr
    return arr.astype(arr.dtype.newbyteorder("="))


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr.flags.writeable = False
    return arr


def _validate_export_arrays(
    features: np.ndarray,
    labels: np.ndarray,
    class_count: int,
    ignore_labels: frozenset[int],
) -> None:
    if features.ndim != 4:
        raise ValidationError(f"features must be 4-D [n, H, W, C], got shape {features.shape}")
    if labels.ndim != 3:
        raise ValidationError(f"labels must be 3-D [n, H, W], got shape {labels.shape}")
    if features.shape[:3] != labels.shape:
        raise ValidationError(
            f"features {features.shape} and labels {labels.shape} disagree on [n, H, W]"
        )
    if min(features.shape) < 1:
        raise ValidationError(f"all dimensions must be >= 1, got features shape {features.shape}")
    if features.dtype != np.float32:
        raise ValidationError(f"features must be float32, got {features.dtype}")
    if labels.dtype != np.uint16:
        raise ValidationError(f"labels must be uint16, got {labels.dtype}")
    if not (1 <= class_count <= UNIVERSAL_IGNORE):
        raise ValidationError(f"class_count must be in [1, {UNIVERSAL_IGNORE}], got {class_count}")
    if labels.size and int(labels.max()) >= UNIVERSAL_IGNORE:
        raise ValidationError(
            f"label value {int(labels.max())} is reserved ({UNIVERSAL_IGNORE} is the ignore sentinel)"
        )
    for ig in ignore_labels:
        if not (0 <= int(ig) <= UNIVERSAL_IGNORE):
            raise ValidationError(f"ignore label {ig} outside uint16 range")


@dataclass(frozen=True)
class TaskExport:
    """Feature maps and label masks for one task.

    Arrays are made read-only at construction; instances are safe to share
    across threads.
    """

    features: np.ndarray
    labels: np.ndarray
    class_count: int
    ignore_labels: frozenset[int] = DEFAULT_IGNORE_LABELS
    model_id: str | None = None

    def __post_init__(self) -> None:
        features = np.ascontiguousarray(self.features, dtype=np.float32)
        labels = np.ascontiguousarray(self.labels, dtype=np.uint16)
        ignore = frozenset(int(i) for i in self.ignore_labels)
        _validate_export_arrays(features, labels, int(self.class_count), ignore)
        object.__setattr__(self, "features", _freeze(features))
        object.__setattr__(self, "labels", _freeze(labels))
        object.__setattr__(self, "class_count", int(self.class_count))
        object.__setattr__(self, "ignore_labels", ignore)

    @property
    def image_count(self) -> int:
        return self.features.shape[0]

    @property
    def height(self) -> int:
        return self.features.shape[1]

    @property
    def width(self) -> int:
        return self.features.shape[2]

    @property
    def channels(self) -> int:
        return self.features.shape[3]


@dataclass(frozen=True)
class PixelSet:
    """Flattened (feature vector, label) pairs for one task.

    Row ``i`` of `features` carries the feature vector of the pixel whose
    class id is ``labels[i]``. No ignore labels remain in the set and every
    label is below `class_count`.
    """

    features: np.ndarray
    labels: np.ndarray
    class_count: int

    def __post_init__(self) -> None:
        features = self.features
        labels = self.labels
        if features.ndim != 2:
            raise ValidationError(f"pixel features must be 2-D [P, C], got {features.shape}")
        if labels.ndim != 1:
            raise ValidationError(f"pixel labels must be 1-D, got {labels.shape}")
        if features.shape[0] != labels.shape[0]:
            raise ValidationError(
                f"feature rows ({features.shape[0]}) and labels ({labels.shape[0]}) differ"
            )
        if features.shape[0] < 1:
            raise EmptySetError("pixel set is empty")
        if features.dtype != np.float32:
            features = np.ascontiguousarray(features, dtype=np.float32)
        if not np.issubdtype(labels.dtype, np.integer):
            raise ValidationError(f"labels must be integers, got {labels.dtype}")
        cc = int(self.class_count)
        if cc < 1:
            raise ValidationError(f"class_count must be positive, got {cc}")
        top = int(labels.max())
        if top >= cc:
            raise ValidationError(f"label id {top} >= class_count {cc}")
        object.__setattr__(self, "features", _freeze(np.ascontiguousarray(features)))
        object.__setattr__(self, "labels", _freeze(np.ascontiguousarray(labels)))
        object.__setattr__(self, "class_count", cc)

    @property
    def pixel_count(self) -> int:
        return self.features.shape[0]

    @property
    def channels(self) -> int:
        return self.features.shape[1]


def flatten_to_pixelset(export: TaskExport) -> PixelSet:
    """Flatten an export to per-pixel rows, dropping ignore labels.

    Ordering is row-major over (image, row, column). Raises
    :class:`EmptySetError` when every pixel carries an ignore label.
    """
    channels = export.channels
    feats = export.features.reshape(-1, channels)
    labs = export.labels.reshape(-1)
    if export.ignore_labels:
        keep = ~np.isin(labs, np.fromiter(export.ignore_labels, dtype=np.int64))
        if not keep.any():
            raise EmptySetError("all pixels carry ignore labels")
        if not keep.all():
            feats = feats[keep]
            labs = labs[keep]
    return PixelSet(features=feats, labels=labs, class_count=export.class_count)


# ---------------------------------------------------------------------------
# container layout


def save_task_export(export: TaskExport, path: str | Path) -> None:
    """Write `export` as a single binary container.

    The written file reloads bit-identically via :func:`load_task_export`.
    """
    _validate_export_arrays(export.features, export.labels, export.class_count, export.ignore_labels)
    path = Path(path)
    ignore = sorted(export.ignore_labels)
    n, h, w = export.labels.shape
    c = export.channels
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(_HEADER.pack(n, h, w, c, export.class_count, len(ignore)))
        if ignore:
            fh.write(np.asarray(ignore, dtype="<u2").tobytes())
        np.ascontiguousarray(export.features, dtype="<f4").tofile(fh)
        np.ascontiguousarray(export.labels, dtype="<u2").tofile(fh)


def _load_container(path: Path) -> TaskExport:
    size = path.stat().st_size
    with open(path, "rb") as fh:
        magic = fh.read(len(MAGIC))
        if len(magic) < len(MAGIC) or magic != MAGIC:
            raise FormatError(f"{path}: bad magic bytes, not a task-export container")
        raw = fh.read(_HEADER.size)
        if len(raw) < _HEADER.size:
            raise FormatError(f"{path}: truncated header")
        n, h, w, c, class_count, ignore_count = _HEADER.unpack(raw)
        if min(n, h, w, c) < 1 or class_count < 1:
            raise FormatError(f"{path}: header carries non-positive dimensions")
        expected = (
            len(MAGIC)
            + _HEADER.size
            + 2 * ignore_count
            + 4 * n * h * w * c
            + 2 * n * h * w
        )
        if size != expected:
            raise FormatError(f"{path}: file size {size} does not match header (expected {expected})")
        ignore = np.fromfile(fh, dtype="<u2", count=ignore_count)
        features = np.fromfile(fh, dtype="<f4", count=n * h * w * c)
        labels = np.fromfile(fh, dtype="<u2", count=n * h * w)
    features = _as_native(features).reshape(n, h, w, c)
    labels = _as_native(labels).reshape(n, h, w)
    try:
        return TaskExport(
            features=features,
            labels=labels,
            class_count=class_count,
            ignore_labels=frozenset(int(i) for i in ignore),
        )
    except ValidationError as exc:
        raise FormatError(f"{path}: {exc}") from exc


# ---------------------------------------------------------------------------
# directory layout (features.npy / labels.npy / meta.json)


def save_task_export_dir(export: TaskExport, directory: str | Path) -> None:
    """Write `export` in the directory layout used by feature exporters."""
    _validate_export_arrays(export.features, export.labels, export.class_count, export.ignore_labels)
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    np.save(directory / "features.npy", export.features, allow_pickle=False)
    np.save(directory / "labels.npy", export.labels, allow_pickle=False)
    meta: dict = {
        "class_count": export.class_count,
        "ignore_labels": sorted(export.ignore_labels),
    }
    if export.model_id is not None:
        meta["model_id"] = export.model_id
    with open(directory / "meta.json", "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _load_directory(directory: Path) -> TaskExport:
    for name in ("features.npy", "labels.npy", "meta.json"):
        if not (directory / name).is_file():
            raise FormatError(f"{directory}: missing {name}")
    try:
        features = np.load(directory / "features.npy", allow_pickle=False)
        labels = np.load(directory / "labels.npy", allow_pickle=False)
    except ValueError as exc:
        raise FormatError(f"{directory}: unreadable npy file ({exc})") from exc
    if features.dtype.kind != "f" or features.dtype.itemsize != 4:
        raise FormatError(f"{directory}: features.npy must be float32, got {features.dtype}")
    if labels.dtype.kind != "u" or labels.dtype.itemsize != 2:
        raise FormatError(f"{directory}: labels.npy must be uint16, got {labels.dtype}")
    with open(directory / "meta.json", "r", encoding="utf-8") as fh:
        try:
            meta = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FormatError(f"{directory}: meta.json is not valid JSON ({exc})") from exc
    if not isinstance(meta, dict) or "class_count" not in meta:
        raise FormatError(f"{directory}: meta.json must carry class_count")
    ignore = meta.get("ignore_labels", [])
    if not isinstance(ignore, list):
        raise FormatError(f"{directory}: ignore_labels must be a list")
    try:
        return TaskExport(
            features=_as_native(features),
            labels=_as_native(labels),
            class_count=int(meta["class_count"]),
            ignore_labels=frozenset(int(i) for i in ignore),
            model_id=meta.get("model_id"),
        )
    except ValidationError as exc:
        raise FormatError(f"{directory}: {exc}") from exc


def load_task_export(path: str | Path) -> TaskExport:
    """Load a task export from either on-disk layout.

    A directory is read as the npy layout, a file as the binary container.
    Raises :class:`FileNotFoundError` when `path` does not exist and
    :class:`FormatError` when the content is malformed.
    """
    path = Path(path)
    if path.is_dir():
        return _load_directory(path)
    if not path.is_file():
        raise FileNotFoundError(f"no task export at {path}")
    return _load_container(path)


def export_info(path: str | Path) -> dict:
    """Summarize an export: dimensions, class alphabet, label histogram."""
    export = load_task_export(path)
    counts = np.bincount(export.labels.reshape(-1).astype(np.int64))
    histogram = {int(lab): int(cnt) for lab, cnt in enumerate(counts) if cnt}
    return {
        "path": str(path),
        "layout": "directory" if Path(path).is_dir() else "container",
        "images": export.image_count,
        "height": export.height,
        "width": export.width,
        "channels": export.channels,
        "class_count": export.class_count,
        "ignore_labels": sorted(export.ignore_labels),
        "model_id": export.model_id,
        "pixel_count": int(export.labels.size),
        "label_histogram": histogram,
    }
