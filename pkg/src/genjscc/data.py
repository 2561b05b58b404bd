"""Dataset ingestion, training crops, and the non-overlapping evaluation patch protocol."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

logger = logging.getLogger(__name__)

IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp", ".ppm"}


class IngestError(ValueError):
    """A listed file could not be decoded as an 8-bit RGB image."""


@dataclass(frozen=True)
class DatasetSpec:
    root: Path
    split: str = "eval"  # train | eval
    manifest: Path | None = None

    def __post_init__(self):
        object.__setattr__(self, "root", Path(self.root))
        if self.split not in ("train", "eval"):
            raise ValueError(f"unknown split {self.split!r}")


def list_images(spec: DatasetSpec) -> list[Path]:
    """All image files under the dataset root, sorted; the manifest wins when given.

    Manifest format: line-delimited relative paths.
    """
    if spec.manifest is not None:
        lines = Path(spec.manifest).read_text().splitlines()
        return [spec.root / line.strip() for line in lines if line.strip()]
    files = [p for p in sorted(spec.root.rglob("*")) if p.suffix.lower() in IMAGE_SUFFIXES]
    return files


def load_image(path: Path | str) -> np.ndarray:
    """Decode an 8-bit RGB file into an H x W x 3 float32 array in [0, 1]."""
    try:
        with Image.open(path) as im:
            arr = np.asarray(im.convert("RGB"), dtype=np.float32)
    except Exception as exc:
        raise IngestError(f"cannot decode image {path}: {exc}") from exc
    return arr / 255.0


def save_image(img: np.ndarray, path: Path | str) -> None:
    """Write an [0, 1] image array as an 8-bit PNG (values rounded to /255 grid)."""
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValueError(f"expected H x W x 3 image, got shape {arr.shape}")
    quantized = np.clip(np.rint(arr * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(quantized, mode="RGB").save(path)


def random_crop(img: np.ndarray, size: int = 256, rng: np.random.Generator | None = None) -> np.ndarray:
    """Axis-aligned size x size crop, uniform over all valid offsets."""
    if rng is None:
        rng = np.random.default_rng()
    h, w = img.shape[:2]
    if h < size or w < size:
        raise ValueError(f"image {h}x{w} smaller than crop size {size}")
    top = int(rng.integers(0, h - size + 1))
    left = int(rng.integers(0, w - size + 1))
    return img[top : top + size, left : left + size]


def tile_patches(img: np.ndarray, size: int = 256) -> list[np.ndarray]:
    """Non-overlapping size x size tiles, row-major; remainder pixels are dropped.

    Images smaller than ``size`` in either dimension yield no patches.
    """
    h, w = img.shape[:2]
    rows, cols = h // size, w // size
    return [
        img[r * size : (r + 1) * size, c * size : (c + 1) * size]
        for r in range(rows)
        for c in range(cols)
    ]


class TrainPatchSampler:
    """Draws random-crop batches from a folder of images.

    Undersized or undecodable files are skipped with a warning (once per file)
    rather than aborting an epoch. Decoded images are cached up to
    ``cache_limit`` entries, which keeps smoke-scale training off the disk.
    """

    def __init__(self, paths: list[Path], crop: int = 256, cache_limit: int = 512):
        if not paths:
            raise ValueError("no images to sample from")
        self.paths = list(paths)
        self.crop = crop
        self.cache_limit = cache_limit
        self._cache: dict[Path, np.ndarray] = {}
        self._skipped: set[Path] = set()

    def _get(self, path: Path) -> np.ndarray | None:
        if path in self._skipped:
            return None
        if path in self._cache:
            return self._cache[path]
        try:
            img = load_image(path)
        except IngestError as exc:
            logger.warning("skipping %s: %s", path, exc)
            self._skipped.add(path)
            return None
        if img.shape[0] < self.crop or img.shape[1] < self.crop:
            logger.warning("skipping %s: smaller than %dpx crop", path, self.crop)
            self._skipped.add(path)
            return None
        if len(self._cache) < self.cache_limit:
            self._cache[path] = img
        return img

    def draw_batch(self, batch_size: int, rng: np.random.Generator) -> np.ndarray:
        """A (batch, crop, crop, 3) stack of random crops; deterministic under rng."""
        out = []
        attempts = 0
        while len(out) < batch_size:
            attempts += 1
            if attempts > 100 * batch_size:
                raise RuntimeError("no usable images left to sample")
            idx = int(rng.integers(0, len(self.paths)))
            img = self._get(self.paths[idx])
            if img is None:
                continue
            out.append(random_crop(img, self.crop, rng))
        return np.stack(out, axis=0)
