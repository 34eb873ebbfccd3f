import numpy as np
import pytest

from otseg import PixelSet, TaskExport


def make_export(
    rng: np.random.Generator,
    n: int = 1,
    h: int = 4,
    w: int = 4,
    c: int = 3,
    class_count: int = 4,
    ignore_labels: frozenset[int] = frozenset(),
    model_id: str | None = None,
) -> TaskExport:
    features = rng.standard_normal((n, h, w, c)).astype(np.float32)
    labels = rng.integers(0, class_count, size=(n, h, w)).astype(np.uint16)
    return TaskExport(
        features=features,
        labels=labels,
        class_count=class_count,
        ignore_labels=ignore_labels,
        model_id=model_id,
    )


def make_pixelset(
    rng: np.random.Generator,
    pixels: int = 30,
    channels: int = 3,
    class_count: int = 3,
    spread: float = 1.0,
) -> PixelSet:
    labels = rng.integers(0, class_count, size=pixels).astype(np.uint16)
    centers = spread * rng.standard_normal((class_count, channels))
    features = (centers[labels] + rng.standard_normal((pixels, channels))).astype(np.float32)
    return PixelSet(features=features, labels=labels, class_count=class_count)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240915)
