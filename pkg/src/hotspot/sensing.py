"""Arm lattice, downward camera model and measurement synthesis."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .field import ScalarField, evaluate

DEDUP_TOL = 1e-9


@dataclass(frozen=True)
class AltitudeLevel:
    altitude: float
    footprint_side: float
    noise_variance: float

    def __post_init__(self):
        if self.altitude <= 0 or self.footprint_side <= 0:
            raise ValueError("altitude and footprint side must be positive")
        if self.noise_variance < 0:
            raise ValueError("noise variance must be non-negative")


@dataclass(frozen=True, eq=False)
class Arm:
    id: int
    position: tuple[float, float, float]
    level: int
    lattice: tuple[int, int]
    test_indices: np.ndarray

    @property
    def xy(self) -> np.ndarray:
        return np.asarray(self.position[:2])


@dataclass(frozen=True, eq=False)
class MeasurementBatch:
    arm_id: int
    pixel_locations: np.ndarray
    values: np.ndarray
    noise_variance: float


@dataclass(frozen=True, eq=False)
class ArmGrid:
    extent: tuple[float, float]
    origin: tuple[float, float]
    levels: tuple[AltitudeLevel, ...]
    arms: tuple[Arm, ...]
    pixels: tuple[int, int]
    lattice_shapes: tuple[tuple[int, int], ...]
    test_points: np.ndarray

    @property
    def positions(self) -> np.ndarray:
        return np.array([a.position for a in self.arms])

    @property
    def arm_levels(self) -> np.ndarray:
        return np.array([a.level for a in self.arms])

    @property
    def spacing(self) -> tuple[float, ...]:
        return tuple(lv.footprint_side for lv in self.levels)

    @property
    def pixels_per_image(self) -> int:
        return self.pixels[0] * self.pixels[1]

    def arms_at(self, level: int) -> list[Arm]:
        return [a for a in self.arms if a.level == level]

    def arm_at(self, level: int, ix: int, iy: int) -> Arm:
        for a in self.arms:
            if a.level == level and a.lattice == (ix, iy):
                return a
        raise KeyError((level, ix, iy))

    def noise_of(self, arm: Arm | int) -> float:
        arm = self.arms[arm] if isinstance(arm, (int, np.integer)) else arm
        return self.levels[arm.level].noise_variance

    def nearest_arm(self, point, candidates=None) -> Arm:
        """Closest arm by travel time; ties go to the lowest id."""
        ids = range(len(self.arms)) if candidates is None else candidates
        ids = np.asarray(list(ids))
        d = np.linalg.norm(self.positions[ids] - np.asarray(point, dtype=float), axis=1)
        return self.arms[int(ids[np.argmin(d)])]


def noise_variance_at(altitude: float, model=(0.25, 0.05)) -> float:
    """Linear altitude noise model ``c0 + c1 * altitude``."""
    c0, c1 = model
    if altitude <= 0:
        raise ValueError("altitude must be positive")
    if c0 < 0 or c1 < 0:
        raise ValueError("noise model coefficients must be non-negative")
    return c0 + c1 * altitude


def make_levels(altitudes, footprints, noise_model=(0.25, 0.05)) -> tuple[AltitudeLevel, ...]:
    if len(altitudes) != len(footprints):
        raise ValueError("altitudes and footprints differ in length")
    levels = tuple(AltitudeLevel(float(h), float(s), noise_variance_at(h, noise_model))
                   for h, s in zip(altitudes, footprints))
    return levels


def _pixel_offsets(side: float, pixels: tuple[int, int]):
    nx, ny = pixels
    ox = ((np.arange(nx) + 0.5) / nx - 0.5) * side
    oy = ((np.arange(ny) + 0.5) / ny - 0.5) * side
    gx, gy = np.meshgrid(ox, oy)
    return np.column_stack([gx.ravel(), gy.ravel()])


def _raw_pixel_centers(xy, side, pixels, origin, extent):
    pts = np.asarray(xy) + _pixel_offsets(side, pixels)
    lo = np.asarray(origin)
    return np.clip(pts, lo, lo + np.asarray(extent))


def build_arm_grid(extent, levels, pixels_per_side=3, origin=(0.0, 0.0)) -> ArmGrid:
    """Tile each altitude with square footprints edge to edge.

    Arms sit on a lattice whose spacing equals the footprint side, starting a
    half footprint in from the origin; partial tiles overhang the far edge.
    Test points are the deduplicated union of every arm's pixel centres, and
    an arm's index set holds every test point inside its (clipped) footprint.
    """
    w, h = map(float, extent)
    if not (w > 0 and h > 0):
        raise ValueError("extent must be positive")
    levels = tuple(levels)
    if not levels:
        raise ValueError("at least one altitude level is required")
    alts = [lv.altitude for lv in levels]
    if alts != sorted(alts):
        raise ValueError("levels must be sorted by altitude")
    if isinstance(pixels_per_side, (int, np.integer)):
        pixels = (int(pixels_per_side), int(pixels_per_side))
    else:
        pixels = tuple(int(p) for p in pixels_per_side)
    if min(pixels) < 1:
        raise ValueError("pixels_per_side must be >= 1")
    if levels[0].footprint_side > max(w, h) + 1e-12 or levels[0].footprint_side > min(w, h) + 1e-12:
        raise ValueError("lowest-level footprint is larger than the extent")

    ox, oy = map(float, origin)
    specs = []
    shapes = []
    for li, lv in enumerate(levels):
        s = lv.footprint_side
        nx = max(1, math.ceil(w / s - 1e-9))
        ny = max(1, math.ceil(h / s - 1e-9))
        shapes.append((nx, ny))
        for iy in range(ny):
            for ix in range(nx):
                specs.append((li, ix, iy, ox + (ix + 0.5) * s, oy + (iy + 0.5) * s))

    raw = np.vstack([_raw_pixel_centers((x, y), levels[li].footprint_side, pixels, (ox, oy), (w, h))
                     for li, _, _, x, y in specs])
    keys = np.round(raw / DEDUP_TOL).astype(np.int64)
    _, first = np.unique(keys, axis=0, return_index=True)
    test_points = raw[np.sort(first)]

    arms = []
    for aid, (li, ix, iy, x, y) in enumerate(specs):
        half = 0.5 * levels[li].footprint_side
        inside = np.all(np.abs(test_points - (x, y)) <= half + DEDUP_TOL, axis=1)
        idx = np.flatnonzero(inside)
        idx.setflags(write=False)
        arms.append(Arm(aid, (x, y, levels[li].altitude), li, (ix, iy), idx))
    test_points.setflags(write=False)
    return ArmGrid((w, h), (ox, oy), levels, tuple(arms), pixels, tuple(shapes), test_points)


def pixel_centers(arm: Arm, grid: ArmGrid) -> np.ndarray:
    side = grid.levels[arm.level].footprint_side
    return _raw_pixel_centers(arm.xy, side, grid.pixels, grid.origin, grid.extent)


def take_image(field: ScalarField, arm: Arm, grid: ArmGrid, rng: np.random.Generator) -> MeasurementBatch:
    pts = pixel_centers(arm, grid)
    var = grid.noise_of(arm)
    truth = np.asarray(evaluate(field, pts), dtype=float)
    noise = rng.normal(0.0, math.sqrt(var), size=len(pts)) if var > 0 else np.zeros(len(pts))
    return MeasurementBatch(arm.id, pts, truth + noise, var)


def travel_time(a, b) -> float:
    """Seconds between two 3-D positions at unit speed."""
    return float(np.linalg.norm(np.asarray(a, dtype=float) - np.asarray(b, dtype=float)))


def export_grid_summary(grid: ArmGrid, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["arm_id", "x", "y", "z", "level", "ix", "iy", "noise_variance", "num_test_points"])
        for a in grid.arms:
            w.writerow([a.id, *a.position, a.level, *a.lattice, grid.noise_of(a), len(a.test_indices)])
