"""Low-dimensional datasets: synthetic generators, CSV ingestion, normalization.

Generators (all 2D except ``point``, which is 2D at the origin):

``gaussians8``
    8 isotropic modes, std 0.1, at radius 4 and angles ``k * pi / 4``.
``moons``
    two interleaved half circles of radius 1 (upper centred at (0, 0), lower
    at (1, 0.5)), with Gaussian jitter of std 0.05.
``checkerboard``
    uniform on the 8 dark cells of a 4x4 board over ``[-2, 2]^2``.
``spiral``
    arm ``r = theta / (3 pi) * 2``, ``theta`` in ``[0.5 pi, 3 pi]``, jitter 0.05.
``point``
    all samples at the origin.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError

SYNTHETIC = ("gaussians8", "moons", "checkerboard", "spiral", "point")

GAUSSIANS8_RADIUS = 4.0
GAUSSIANS8_STD = 0.1


@dataclass
class Dataset:
    points: np.ndarray
    name: str = "data"
    mean: np.ndarray | None = None
    scale: np.ndarray | None = None

    def __post_init__(self):
        self.points = np.atleast_2d(np.asarray(self.points, dtype=np.float64))
        if self.points.shape[1] < 1:
            raise ConfigError("dataset dimension must be >= 1")
        if not np.isfinite(self.points).all():
            raise ConfigError("dataset contains non-finite values")
        if self.scale is not None and np.any(np.asarray(self.scale) <= 0):
            raise ConfigError("normalization scale must be positive")

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @property
    def normalized(self) -> bool:
        return self.mean is not None

    def __len__(self):
        return self.points.shape[0]

    def denormalize_points(self, pts):
        if not self.normalized:
            return np.asarray(pts, dtype=np.float64)
        return np.asarray(pts, dtype=np.float64) * self.scale + self.mean

    def normalize_points(self, pts):
        if not self.normalized:
            return np.asarray(pts, dtype=np.float64)
        return (np.asarray(pts, dtype=np.float64) - self.mean) / self.scale

    def normalization_json(self):
        if not self.normalized:
            return "identity"
        return {"mean": self.mean.tolist(), "scale": self.scale.tolist()}


def gaussians8_centers() -> np.ndarray:
    ang = np.arange(8) * np.pi / 4
    return GAUSSIANS8_RADIUS * np.stack([np.cos(ang), np.sin(ang)], axis=1)


def make_synthetic(name: str, n: int, rng) -> Dataset:
    """Sample ``n`` points from a named generator.

    ``rng`` is a numpy Generator or an integer seed.
    """
    if name not in SYNTHETIC:
        raise ConfigError(f"unknown dataset {name!r}; choose from {SYNTHETIC}")
    if n < 1:
        raise ConfigError("n must be >= 1")
    rng = np.random.default_rng(rng)
    if name == "point":
        pts = np.zeros((n, 2))
    elif name == "gaussians8":
        idx = rng.integers(0, 8, size=n)
        pts = gaussians8_centers()[idx] + GAUSSIANS8_STD * rng.standard_normal((n, 2))
    elif name == "moons":
        upper = rng.random(n) < 0.5
        theta = np.pi * rng.random(n)
        x = np.where(upper, np.cos(theta), 1.0 - np.cos(theta))
        y = np.where(upper, np.sin(theta), 0.5 - np.sin(theta))
        pts = np.stack([x, y], axis=1) + 0.05 * rng.standard_normal((n, 2))
    elif name == "checkerboard":
        cells = np.array([(i, j) for i in range(4) for j in range(4) if (i + j) % 2 == 0])
        idx = rng.integers(0, len(cells), size=n)
        pts = -2.0 + cells[idx] + rng.random((n, 2))
    else:
        theta = rng.uniform(0.5 * np.pi, 3 * np.pi, size=n)
        r = 2.0 * theta / (3 * np.pi)
        pts = np.stack([r * np.cos(theta), r * np.sin(theta)], axis=1) + 0.05 * rng.standard_normal((n, 2))
    return Dataset(pts, name)


def _parse_row(row, lineno):
    try:
        return [float(c) for c in row]
    except ValueError:
        raise ConfigError(f"line {lineno}: non-numeric cell in {row!r}") from None


def load_csv(path) -> Dataset:
    """Read comma-separated numeric rows; a non-numeric first row is a header.

    Raises:
        ConfigError: ragged rows or non-numeric cells, with the line number.
    """
    rows = []
    width = None
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not c.strip() for c in row):
                continue
            if lineno == 1:
                try:
                    vals = [float(c) for c in row]
                except ValueError:
                    continue
            else:
                vals = _parse_row(row, lineno)
            if width is None:
                width = len(vals)
            elif len(vals) != width:
                raise ConfigError(f"line {lineno}: expected {width} columns, got {len(vals)}")
            rows.append(vals)
    if not rows:
        raise ConfigError(f"{path}: no data rows")
    return Dataset(np.array(rows), name=str(path))


def save_csv(path, points, header=None):
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        if header is not None:
            w.writerow(header)
        for row in pts:
            w.writerow([repr(float(v)) for v in row])


def normalize(ds: Dataset) -> Dataset:
    """Per-dimension zero mean / unit population std; keeps the transform.

    Raises:
        ConfigError: naming the first zero-variance dimension.
    """
    pts = ds.points
    mean = pts.mean(axis=0)
    scale = pts.std(axis=0)
    for j, s in enumerate(scale):
        if not s > 0:
            raise ConfigError(f"dimension {j} has zero variance; cannot normalize")
    return Dataset((pts - mean) / scale, ds.name, mean, scale)


def denormalize(ds: Dataset) -> Dataset:
    if not ds.normalized:
        return Dataset(ds.points.copy(), ds.name)
    return Dataset(ds.points * ds.scale + ds.mean, ds.name)
