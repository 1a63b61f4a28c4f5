"""Point-cloud containers, normalization, farthest-point sampling and kNN graphs."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional

import numpy as np


class InvalidConfigError(ValueError):
    pass


@dataclass
class PointCloud:
    points: np.ndarray
    label: Optional[int] = None

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64)
        if self.points.ndim != 2 or self.points.shape[1] != 3:
            raise ValueError(f"points must be (m, 3), got {self.points.shape}")
        if not np.all(np.isfinite(self.points)):
            raise ValueError("point coordinates must be finite")

    def __len__(self) -> int:
        return self.points.shape[0]


@dataclass(frozen=True)
class IndexSubset:
    indices: np.ndarray
    parent_size: int

    def __len__(self) -> int:
        return len(self.indices)


@dataclass(frozen=True)
class KnnGraph:
    centers: IndexSubset
    # neighbors[i] holds indices into the full cloud for centers.indices[i]
    neighbors: list = field(default_factory=list)

    def degrees(self) -> np.ndarray:
        """1 + number of directed edges touching each node of the parent cloud."""
        deg = np.ones(self.centers.parent_size, dtype=np.float64)
        for c, nbrs in zip(self.centers.indices, self.neighbors):
            deg[c] += len(nbrs)
            np.add.at(deg, np.asarray(nbrs, dtype=np.int64), 1.0)
        return deg


def normalize_unit_cube(cloud: PointCloud) -> PointCloud:
    """Isotropically rescale so the bounding box fits [-0.5, 0.5]^3, centered at the origin.

    A cloud with zero extent is only translated to the origin.
    """
    pts = cloud.points
    if len(pts) == 0:
        raise ValueError("cannot normalize an empty cloud")
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    center = 0.5 * (lo + hi)
    extent = float(np.max(hi - lo))
    scale = 1.0 / extent if extent > 0 else 1.0
    return PointCloud((pts - center) * scale, cloud.label)


def n_samples_for_ratio(m: int, ratio: float) -> int:
    if not 0.0 < ratio <= 1.0:
        raise InvalidConfigError(f"sampling ratio must lie in (0, 1], got {ratio}")
    return min(m, max(1, int(round(ratio * m))))


def _sq_dist(pts, p):
    # offsets below ~1e-154 square to zero and then tie with coincident points
    diff = pts - p
    return np.einsum("ij,ij->i", diff, diff)


def farthest_point_sample(cloud: PointCloud | np.ndarray, ratio: float,
                          seed_index: int = 0) -> IndexSubset:
    pts = cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud, dtype=np.float64)
    m = len(pts)
    if m < 1:
        raise ValueError("farthest point sampling needs at least one point")
    n = n_samples_for_ratio(m, ratio)
    if not 0 <= seed_index < m:
        raise IndexError(f"seed_index {seed_index} out of range for {m} points")

    selected = np.empty(n, dtype=np.int64)
    selected[0] = seed_index
    # squared distances order identically to distances
    min_d = _sq_dist(pts, pts[seed_index])
    taken = np.zeros(m, dtype=bool)
    taken[seed_index] = True
    for s in range(1, n):
        # argmax returns the first maximum, which gives the lowest-index tie-break
        nxt = int(np.argmax(np.where(taken, -1.0, min_d)))
        selected[s] = nxt
        taken[nxt] = True
        np.minimum(min_d, _sq_dist(pts, pts[nxt]), out=min_d)
    return IndexSubset(selected, m)


def knn_graph(cloud: PointCloud | np.ndarray, centers: IndexSubset, k: int) -> KnnGraph:
    pts = cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud, dtype=np.float64)
    m = len(pts)
    if k < 0:
        raise InvalidConfigError(f"k must be non-negative, got {k}")
    kk = min(k, m - 1)
    idx = np.asarray(centers.indices, dtype=np.int64)
    diff = pts[idx][:, None, :] - pts[None, :, :]
    d = np.einsum("ijk,ijk->ij", diff, diff)
    d[np.arange(len(idx)), idx] = np.inf
    if kk == 0:
        return KnnGraph(centers, [np.empty(0, dtype=np.int64) for _ in idx])
    # partition to the kk-th value, keep everything tied with it, then order by (distance, index)
    kth = np.partition(d, kk - 1, axis=1)[:, kk - 1:kk]
    neighbors = []
    for row, bound in zip(d, kth[:, 0]):
        cand = np.flatnonzero(row <= bound)
        neighbors.append(cand[np.lexsort((cand, row[cand]))][:kk])
    return KnnGraph(centers, neighbors)


# -- dataset text format ---------------------------------------------------

def write_dataset(path: str | Path, clouds: Iterable[PointCloud]) -> None:
    """Write clouds as ``cloud <id> <label|-1> <m>`` headers followed by m coordinate lines."""
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        for i, cloud in enumerate(clouds):
            label = -1 if cloud.label is None else int(cloud.label)
            fh.write(f"cloud {i} {label} {len(cloud)}\n")
            np.savetxt(fh, cloud.points, fmt="%.17g")


def read_dataset(path: str | Path) -> list[PointCloud]:
    clouds = []
    with open(path, encoding="ascii") as fh:
        lines = fh.read().splitlines()
    pos = 0
    while pos < len(lines):
        if not lines[pos].strip():
            pos += 1
            continue
        parts = lines[pos].split()
        if len(parts) != 4 or parts[0] != "cloud":
            raise ValueError(f"{path}:{pos + 1}: malformed cloud header {lines[pos]!r}")
        label, m = int(parts[2]), int(parts[3])
        block = lines[pos + 1:pos + 1 + m]
        if len(block) != m:
            raise ValueError(f"{path}: cloud {parts[1]} truncated")
        pts = np.array([[float(v) for v in ln.split()] for ln in block], dtype=np.float64)
        clouds.append(PointCloud(pts.reshape(m, 3), None if label < 0 else label))
        pos += 1 + m
    return clouds
