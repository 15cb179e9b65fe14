"""Binary PGM (P5) digit grids for watching a generator evolve."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .networks import MAJORITY_LABEL, MINORITY_LABEL


class ImageModeError(ValueError):
    pass


def to_gray(samples: np.ndarray, value_range: tuple[float, float]) -> np.ndarray:
    lo, hi = value_range
    return np.clip(np.rint((np.asarray(samples) - lo) / (hi - lo) * 255.0), 0, 255).astype(np.uint8)


def tile(images: np.ndarray, grid: int = 10, side: int = 28) -> np.ndarray:
    """Arrange ``grid*grid`` flattened ``side x side`` images row-major into one array."""
    if len(images) != grid * grid:
        raise ValueError(f"need {grid * grid} images for a {grid}x{grid} grid, got {len(images)}")
    imgs = images.reshape(grid, grid, side, side)
    return imgs.transpose(0, 2, 1, 3).reshape(grid * side, grid * side)


def write_pgm(path, image: np.ndarray) -> Path:
    image = np.asarray(image, dtype=np.uint8)
    h, w = image.shape
    path = Path(path)
    path.write_bytes(f"P5\n{w} {h}\n255\n".encode("ascii") + image.tobytes())
    return path


def read_pgm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    parts = data.split(b"\n", 3)
    if parts[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM")
    w, h = map(int, parts[1].split())
    return np.frombuffer(parts[3], dtype=np.uint8).reshape(h, w)


def grid_labels(kind: str, grid: int = 10) -> np.ndarray:
    """EVAGAN draws only the minority digit; ACGAN alternates rows of both labels."""
    n = grid * grid
    if kind == "acgan":
        rows = np.arange(n) // grid
        return np.where(rows % 2 == 0, MINORITY_LABEL, MAJORITY_LABEL).astype(np.int64)
    return np.full(n, MINORITY_LABEL, dtype=np.int64)


def render_grid(model, noise: np.ndarray, value_range, out_dir, epoch: int, grid: int = 10, side: int = 28) -> Path:
    """Write ``epoch_{epoch}.pgm`` from a fixed noise block (inference mode)."""
    if model.config.feature_dim != side * side:
        raise ImageModeError("qualitative grids are image-mode only")
    samples = model.generator.forward(noise, grid_labels(model.kind, grid))
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return write_pgm(out / f"epoch_{epoch}.pgm", tile(to_gray(samples, value_range), grid, side))
