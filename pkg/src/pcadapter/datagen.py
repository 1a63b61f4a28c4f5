"""Procedural source/target datasets built from six surface primitives.

Shapes are sampled uniformly on the primitive surface and fitted analytically
into the unit cube. Domain shift is produced by anisotropic scaling, planar
occlusion, density subsampling and jitter, in that order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Sequence

import numpy as np

from .geometry import InvalidConfigError, PointCloud, normalize_unit_cube

MIN_POINTS = 16


class ShapeClass(IntEnum):
    SPHERE = 0
    CUBE = 1
    CYLINDER = 2
    CONE = 3
    TORUS = 4
    PLANE = 5


N_CLASSES = len(ShapeClass)


@dataclass
class DomainShiftSpec:
    occlusion_fraction: float = 0.0
    jitter_sigma: float = 0.0
    density_factor: float = 1.0
    scale_range: tuple = (1.0, 1.0)
    class_priors: Sequence[float] = field(default_factory=lambda: [1.0 / N_CLASSES] * N_CLASSES)
    rng_seed: int = 0

    def validate(self) -> None:
        if not 0.0 <= self.occlusion_fraction < 1.0:
            raise InvalidConfigError(f"occlusion_fraction must be in [0, 1), got {self.occlusion_fraction}")
        if self.jitter_sigma < 0:
            raise InvalidConfigError(f"jitter_sigma must be >= 0, got {self.jitter_sigma}")
        if not 0.0 < self.density_factor <= 1.0:
            raise InvalidConfigError(f"density_factor must be in (0, 1], got {self.density_factor}")
        lo, hi = self.scale_range
        if not 0 < lo <= hi:
            raise InvalidConfigError(f"scale_range must satisfy 0 < lo <= hi, got {self.scale_range}")
        p = np.asarray(self.class_priors, dtype=np.float64)
        if p.shape != (N_CLASSES,):
            raise InvalidConfigError(f"class_priors must have {N_CLASSES} entries, got {len(p)}")
        if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-9:
            raise InvalidConfigError(f"class_priors must be nonnegative and sum to 1, got sum {p.sum():.12g}")

    @property
    def keep_fraction(self) -> float:
        return (1.0 - self.occlusion_fraction) * self.density_factor


# Imbalanced clean source vs. balanced, heavily shifted target.
SOURCE_PRIORS_IMBALANCED = (0.35, 0.25, 0.15, 0.12, 0.08, 0.05)
PRESETS = {
    "imbalanced-synth": dict(
        source=dict(class_priors=SOURCE_PRIORS_IMBALANCED),
        target=dict(occlusion_fraction=0.3, jitter_sigma=0.02, density_factor=0.5,
                    scale_range=(0.7, 1.3)),
    ),
    "balanced-synth": dict(
        source=dict(),
        target=dict(occlusion_fraction=0.3, jitter_sigma=0.02, density_factor=0.5,
                    scale_range=(0.7, 1.3)),
    ),
}


def preset_specs(name: str, seed: int = 0) -> tuple[DomainShiftSpec, DomainShiftSpec]:
    if name not in PRESETS:
        raise InvalidConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    p = PRESETS[name]
    src = DomainShiftSpec(rng_seed=2 * seed, **p["source"])
    tgt = DomainShiftSpec(rng_seed=2 * seed + 1, **p["target"])
    return src, tgt


# -- surface samplers (all centered at origin, fitted to [-0.5, 0.5]^3) -----

def _sphere(n, rng):
    v = rng.normal(size=(n, 3))
    return 0.5 * v / np.linalg.norm(v, axis=1, keepdims=True)


def _cube(n, rng):
    face = rng.integers(0, 6, size=n)
    uv = rng.uniform(-0.5, 0.5, size=(n, 2))
    pts = np.empty((n, 3))
    axis = face // 2
    sign = np.where(face % 2 == 0, -0.5, 0.5)
    for a in range(3):
        rows = axis == a
        others = [b for b in range(3) if b != a]
        pts[rows, a] = sign[rows]
        pts[np.ix_(rows, others)] = uv[rows]
    return pts


def _disk(n, radius, rng):
    r = radius * np.sqrt(rng.uniform(size=n))
    t = rng.uniform(0, 2 * np.pi, size=n)
    return r * np.cos(t), r * np.sin(t)


def _cylinder(n, rng):
    aspect = rng.uniform(0.6, 1.6)  # height / diameter
    r, h = 0.5, aspect
    scale = 1.0 / max(2 * r, h)
    side, cap = 2 * np.pi * r * h, np.pi * r * r
    kind = rng.choice(3, size=n, p=np.array([side, cap, cap]) / (side + 2 * cap))
    pts = np.empty((n, 3))
    t = rng.uniform(0, 2 * np.pi, size=n)
    pts[:, 0], pts[:, 1] = r * np.cos(t), r * np.sin(t)
    pts[:, 2] = rng.uniform(-h / 2, h / 2, size=n)
    caps = kind > 0
    x, y = _disk(int(caps.sum()), r, rng)
    pts[caps, 0], pts[caps, 1] = x, y
    pts[caps, 2] = np.where(kind[caps] == 1, -h / 2, h / 2)
    return pts * scale


def _cone(n, rng):
    aspect = rng.uniform(0.6, 1.6)
    r, h = 0.5, aspect
    scale = 1.0 / max(2 * r, h)
    lateral, base = np.pi * r * math.hypot(r, h), np.pi * r * r
    on_base = rng.uniform(size=n) < base / (lateral + base)
    pts = np.empty((n, 3))
    # lateral area density grows linearly with distance from the apex
    s = np.sqrt(rng.uniform(size=n))
    t = rng.uniform(0, 2 * np.pi, size=n)
    pts[:, 0], pts[:, 1] = s * r * np.cos(t), s * r * np.sin(t)
    pts[:, 2] = h / 2 - s * h
    x, y = _disk(int(on_base.sum()), r, rng)
    pts[on_base, 0], pts[on_base, 1] = x, y
    pts[on_base, 2] = -h / 2
    return pts * scale


def _torus(n, rng):
    ratio = rng.uniform(0.2, 0.5)  # tube radius / ring radius
    big = 1.0
    small = ratio * big
    out = np.empty((0, 3))
    while len(out) < n:
        u = rng.uniform(0, 2 * np.pi, size=2 * n)
        v = rng.uniform(0, 2 * np.pi, size=2 * n)
        # rejection on the surface-area element (R + r cos v)
        keep = rng.uniform(size=2 * n) < (big + small * np.cos(v)) / (big + small)
        u, v = u[keep], v[keep]
        ring = big + small * np.cos(v)
        out = np.vstack([out, np.stack([ring * np.cos(u), ring * np.sin(u), small * np.sin(v)], 1)])
    return out[:n] / (2 * (big + small))


def _plane(n, rng):
    aspect = rng.uniform(0.5, 1.0)
    pts = np.zeros((n, 3))
    pts[:, 0] = rng.uniform(-0.5, 0.5, size=n)
    pts[:, 1] = rng.uniform(-0.5 * aspect, 0.5 * aspect, size=n)
    return pts


_SAMPLERS = {
    ShapeClass.SPHERE: _sphere,
    ShapeClass.CUBE: _cube,
    ShapeClass.CYLINDER: _cylinder,
    ShapeClass.CONE: _cone,
    ShapeClass.TORUS: _torus,
    ShapeClass.PLANE: _plane,
}


def generate_shape(shape: int, n_points: int, rng: np.random.Generator) -> PointCloud:
    try:
        cls = ShapeClass(int(shape))
    except ValueError:
        raise InvalidConfigError(f"unknown shape class id {shape!r}") from None
    if n_points < MIN_POINTS:
        raise InvalidConfigError(f"n_points must be >= {MIN_POINTS}, got {n_points}")
    return PointCloud(_SAMPLERS[cls](n_points, rng), int(cls))


# -- shift operators -------------------------------------------------------

def scale_axes(points, lo, hi, rng):
    return points * rng.uniform(lo, hi, size=3)


def occlude(points, fraction, rng):
    """Drop the ceil(fraction * m) points lying farthest along a random direction."""
    n_drop = math.ceil(fraction * len(points))
    if n_drop == 0:
        return points
    direction = rng.normal(size=3)
    direction /= np.linalg.norm(direction)
    signed = (points - points.mean(axis=0)) @ direction
    keep = np.sort(np.argsort(signed, kind="stable")[:len(points) - n_drop])
    return points[keep]


def subsample(points, factor, rng):
    n_keep = max(1, int(round(factor * len(points))))
    if n_keep >= len(points):
        return points
    return points[np.sort(rng.choice(len(points), size=n_keep, replace=False))]


def jitter(points, sigma, rng):
    if sigma == 0:
        return points
    return points + rng.normal(scale=sigma, size=points.shape)


def apply_shift(cloud: PointCloud, spec: DomainShiftSpec, rng: np.random.Generator) -> PointCloud:
    spec.validate()
    m = len(cloud)
    remaining = m - math.ceil(spec.occlusion_fraction * m)
    remaining = max(1, int(round(spec.density_factor * remaining)))
    if remaining < MIN_POINTS:
        raise InvalidConfigError(
            f"shift leaves {remaining} of {m} points; at least {MIN_POINTS} are required")
    pts = scale_axes(cloud.points, *spec.scale_range, rng)
    pts = occlude(pts, spec.occlusion_fraction, rng)
    pts = subsample(pts, spec.density_factor, rng)
    pts = jitter(pts, spec.jitter_sigma, rng)
    return normalize_unit_cube(PointCloud(pts, cloud.label))


def _base_points_needed(points_per_cloud: int, spec: DomainShiftSpec) -> int:
    n = math.ceil(points_per_cloud / spec.keep_fraction)
    # rounding inside the shift operators can lose a point or two
    while True:
        after = n - math.ceil(spec.occlusion_fraction * n)
        after = max(1, int(round(spec.density_factor * after)))
        if after >= points_per_cloud:
            return max(n, MIN_POINTS)
        n += 1


def generate_cloud(label: int, spec: DomainShiftSpec, points_per_cloud: int,
                   rng: np.random.Generator) -> PointCloud:
    """One shifted cloud with exactly ``points_per_cloud`` points."""
    base = generate_shape(label, _base_points_needed(points_per_cloud, spec), rng)
    shifted = apply_shift(base, spec, rng)
    if len(shifted) > points_per_cloud:
        keep = np.sort(rng.choice(len(shifted), size=points_per_cloud, replace=False))
        shifted = normalize_unit_cube(PointCloud(shifted.points[keep], shifted.label))
    return shifted


def generate_dataset(n_total: int, spec: DomainShiftSpec, points_per_cloud: int = 1024) -> list[PointCloud]:
    """Labels are a multinomial draw from the priors; cloud i uses its own RNG stream.

    Streams are spawned from ``spec.rng_seed`` so any subset of clouds can be
    regenerated independently and in any order.
    """
    spec.validate()
    if n_total < N_CLASSES:
        raise InvalidConfigError(f"n_total must be >= {N_CLASSES}, got {n_total}")
    root = np.random.SeedSequence(spec.rng_seed)
    label_seq, *cloud_seqs = root.spawn(n_total + 1)
    labels = np.random.default_rng(label_seq).choice(
        N_CLASSES, size=n_total, p=np.asarray(spec.class_priors, dtype=np.float64))
    return [generate_cloud(int(y), spec, points_per_cloud, np.random.default_rng(s))
            for y, s in zip(labels, cloud_seqs)]
