"""Synthetic shape-classification data and its little-endian binary format.

Each sample is a pure function of ``(seed, index)``. The label is
``index % 10``; a per-sample difficulty in [0, 1] shrinks the shape and adds
blur and noise. Difficulty only drives the generator and is not stored.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter

IMAGE_MAGIC = b"MTDS"
LABEL_MAGIC = b"MTLB"
VERSION = 1
NUM_CLASSES = 10
TEST_OFFSET = 1_000_000_000  # index offset of the held-out split


@dataclass
class SyntheticDataset:
    images: np.ndarray  # (count, h, w, c) uint8
    labels: np.ndarray  # (count,) uint8

    def __len__(self) -> int:
        return len(self.labels)

    def floats(self) -> np.ndarray:
        return self.images.astype(np.float32) / 255.0


def _shape_mask(label: int, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Mask of shape ``label`` over box coordinates u, v in [-1, 1]."""
    r = np.sqrt(u * u + v * v)
    au, av = np.abs(u), np.abs(v)
    if label == 0:  # disk
        return r <= 1.0
    if label == 1:  # ring
        return (r <= 1.0) & (r >= 0.55)
    if label == 2:  # filled square
        return (au <= 0.85) & (av <= 0.85)
    if label == 3:  # square outline
        return (np.maximum(au, av) <= 0.95) & (np.maximum(au, av) >= 0.6)
    if label == 4:  # triangle, apex down
        return (v <= 0.9) & (au <= (v + 0.9) / 1.8 * 0.95)
    if label == 5:  # plus
        return ((au <= 0.28) & (av <= 1.0)) | ((av <= 0.28) & (au <= 1.0))
    if label == 6:  # diagonal cross
        return ((np.abs(u - v) <= 0.38) | (np.abs(u + v) <= 0.38)) & (r <= 1.2)
    if label == 7:  # two horizontal bars
        return (au <= 0.95) & (np.abs(av - 0.55) <= 0.25)
    if label == 8:  # two vertical bars
        return (av <= 0.95) & (np.abs(au - 0.55) <= 0.25)
    if label == 9:  # diamond
        return au + av <= 1.0
    raise ValueError(f"unknown class {label}")


def render(seed: int, index: int, size: int = 32) -> tuple[np.ndarray, int, float]:
    """Return (uint8 image (size, size, 3), label, difficulty) for one sample."""
    rng = np.random.default_rng([seed, index])
    label = index % NUM_CLASSES
    difficulty = float(rng.random())
    side = size * (0.85 - 0.55 * difficulty)  # shape box in pixels
    half = side / 2.0
    cx = rng.uniform(half, size - half)
    cy = rng.uniform(half, size - half)

    # 4x supersampling for smooth edges
    ss = 4
    grid = (np.arange(size * ss) + 0.5) / ss
    yy, xx = np.meshgrid(grid, grid, indexing="ij")
    u, v = (xx - cx) / half, (cy - yy) / half
    mask = _shape_mask(label, u, v).reshape(size, ss, size, ss).mean(axis=(1, 3))

    fg = rng.uniform(0.55, 1.0, 3)
    bg = rng.uniform(0.0, 0.35, 3)
    img = bg + mask[..., None] * (fg - bg)
    blur = 0.5 * difficulty
    if blur > 0.05:
        img = gaussian_filter(img, sigma=(blur, blur, 0))
    img = img + rng.normal(0.0, 0.02 + 0.06 * difficulty, img.shape)
    pixels = np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8)
    return pixels, label, difficulty


def generate(seed: int, count: int, start: int = 0, size: int = 32) -> tuple[SyntheticDataset, np.ndarray]:
    """Samples ``start .. start+count-1``; also returns their difficulties."""
    imgs = np.empty((count, size, size, 3), dtype=np.uint8)
    labels = np.empty(count, dtype=np.uint8)
    diff = np.empty(count)
    for j in range(count):
        imgs[j], labels[j], diff[j] = render(seed, start + j, size)
    return SyntheticDataset(imgs, labels), diff


# -- binary format ----------------------------------------------------------------
def write_dataset(ds: SyntheticDataset, stem: str | Path) -> tuple[Path, Path]:
    """Write ``<stem>.mtds`` (pixels) and ``<stem>.mtlb`` (labels)."""
    stem = Path(stem)
    n, h, w, c = ds.images.shape
    img_path, lab_path = stem.with_suffix(".mtds"), stem.with_suffix(".mtlb")
    try:
        stem.parent.mkdir(parents=True, exist_ok=True)
        with open(img_path, "wb") as f:
            f.write(IMAGE_MAGIC + struct.pack("<5I", VERSION, n, h, w, c))
            f.write(np.ascontiguousarray(ds.images, dtype=np.uint8).tobytes())
        with open(lab_path, "wb") as f:
            f.write(LABEL_MAGIC + struct.pack("<2I", VERSION, n))
            f.write(np.ascontiguousarray(ds.labels, dtype=np.uint8).tobytes())
    except OSError as e:
        raise OSError(f"cannot write dataset {stem}: {e}") from e
    return img_path, lab_path


def read_dataset(stem: str | Path) -> SyntheticDataset:
    stem = Path(stem)
    img_path, lab_path = stem.with_suffix(".mtds"), stem.with_suffix(".mtlb")
    try:
        raw = img_path.read_bytes()
        lab = lab_path.read_bytes()
    except OSError as e:
        raise OSError(f"cannot read dataset {stem}: {e}") from e
    if raw[:4] != IMAGE_MAGIC or lab[:4] != LABEL_MAGIC:
        raise ValueError(f"{stem}: bad magic")
    version, n, h, w, c = struct.unpack_from("<5I", raw, 4)
    lversion, ln = struct.unpack_from("<2I", lab, 4)
    if version != VERSION or lversion != VERSION:
        raise ValueError(f"{stem}: unsupported version {version}/{lversion}")
    if ln != n:
        raise ValueError(f"{stem}: {n} images but {ln} labels")
    body = raw[24:]
    if len(body) != n * h * w * c or len(lab) - 12 != n:
        raise ValueError(f"{stem}: truncated payload")
    images = np.frombuffer(body, dtype=np.uint8).reshape(n, h, w, c).copy()
    labels = np.frombuffer(lab, dtype=np.uint8, offset=12).copy()
    return SyntheticDataset(images, labels)


def gen_data(seed: int, count: int, out_dir: str | Path, test_count: int | None = None) -> dict[str, Path]:
    """Write ``train`` (indices 0..count-1) and ``test`` splits under ``out_dir``."""
    out_dir = Path(out_dir)
    test_count = max(1, count // 4) if test_count is None else test_count
    train, _ = generate(seed, count)
    test, _ = generate(seed, test_count, start=TEST_OFFSET)
    write_dataset(train, out_dir / "train")
    write_dataset(test, out_dir / "test")
    return {"train": out_dir / "train", "test": out_dir / "test"}
