"""Ground-truth intensity fields.

A field is either a sum of isotropic Gaussian bumps over a rectangle (the
synthetic environments) or a bilinearly interpolated grid read from disk.
Both are immutable once built and can be shared between episodes.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field
from pathlib import Path

import numpy as np
from scipy.interpolate import RegularGridInterpolator

DENSE_RESOLUTION = 0.1


@dataclass(frozen=True)
class Bump:
    center: tuple[float, float]
    amplitude: float
    width: float


@dataclass(frozen=True)
class FieldConfig:
    seed: int = 0
    extent: tuple[float, float] = (20.0, 20.0)
    num_bumps: int = 4
    global_max: float = 50.0
    min_bump_separation: float = 4.0
    width_range: tuple[float, float] = (1.0, 2.5)
    amplitude_range: tuple[float, float] = (0.4, 1.0)
    baseline: float = 0.0


@dataclass(frozen=True, eq=False)
class ScalarField:
    """Intensity function over ``[origin, origin + extent]``.

    ``grid`` holds row-major samples (row index = y) on a lattice with spacing
    ``cell_size``. For bump fields it is only a cache; for grid fields it is
    the field itself, sampled at cell centres.
    """

    extent: tuple[float, float]
    bumps: tuple[Bump, ...] = ()
    baseline: float = 0.0
    origin: tuple[float, float] = (0.0, 0.0)
    grid: np.ndarray | None = None
    cell_size: float | None = None
    clamp: bool = True
    _interp: object = dc_field(default=None, repr=False)

    def __post_init__(self):
        w, h = self.extent
        if not (w > 0 and h > 0):
            raise ValueError(f"extent must be positive, got {self.extent}")
        if self.baseline < 0:
            raise ValueError("baseline must be non-negative")

    @property
    def is_grid(self) -> bool:
        return self._interp is not None

    def contains(self, x, tol=1e-9) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        lo = np.asarray(self.origin)
        hi = lo + np.asarray(self.extent)
        return np.all((x >= lo - tol) & (x <= hi + tol), axis=-1)

    def clip(self, x) -> np.ndarray:
        lo = np.asarray(self.origin)
        return np.clip(np.asarray(x, dtype=float), lo, lo + np.asarray(self.extent))

    def __call__(self, x) -> np.ndarray | float:
        return evaluate(self, x)


def _bump_sum(bumps, baseline, pts):
    out = np.full(pts.shape[:-1], float(baseline))
    for b in bumps:
        d2 = np.sum((pts - np.asarray(b.center)) ** 2, axis=-1)
        out += b.amplitude * np.exp(-0.5 * d2 / b.width**2)
    return out


def evaluate(field: ScalarField, x):
    """Intensity at one point (shape ``(2,)``) or a batch (``(..., 2)``)."""
    pts = np.asarray(x, dtype=float)
    if pts.shape[-1] != 2:
        raise ValueError("points must have a trailing dimension of 2")
    if field.clamp:
        pts = field.clip(pts)
    elif not np.all(field.contains(pts)):
        raise ValueError("query point outside field extent")
    if field.is_grid:
        flat = pts.reshape(-1, 2)
        # interpolator axes are (y, x)
        vals = field._interp(flat[:, ::-1]).reshape(pts.shape[:-1])
    else:
        vals = _bump_sum(field.bumps, field.baseline, pts)
    vals = np.maximum(vals, 0.0)
    return float(vals) if vals.ndim == 0 else vals


def dense_lattice(field: ScalarField, resolution: float):
    """Lattice axes covering the extent, boundaries included."""
    if resolution <= 0:
        raise ValueError("resolution must be positive")
    ox, oy = field.origin
    w, h = field.extent
    nx = int(np.floor(w / resolution + 1e-9)) + 1
    ny = int(np.floor(h / resolution + 1e-9)) + 1
    xs = ox + resolution * np.arange(nx)
    ys = oy + resolution * np.arange(ny)
    return xs, ys


def sample_dense(field: ScalarField, resolution: float = DENSE_RESOLUTION) -> np.ndarray:
    xs, ys = dense_lattice(field, resolution)
    gx, gy = np.meshgrid(xs, ys)
    return evaluate(field, np.stack([gx, gy], axis=-1))


def global_optimum(field: ScalarField, resolution: float = DENSE_RESOLUTION):
    """Brute-force argmax over a dense lattice.

    Ties go to the lowest row-major index (``np.argmax`` returns the first
    occurrence).
    """
    xs, ys = dense_lattice(field, resolution)
    if field.grid is not None and field.cell_size is not None and not field.is_grid \
            and np.isclose(field.cell_size, resolution) and field.grid.shape == (len(ys), len(xs)):
        vals = field.grid
    else:
        gx, gy = np.meshgrid(xs, ys)
        vals = evaluate(field, np.stack([gx, gy], axis=-1))
    if field.is_grid:
        # interpolation cannot exceed the samples, so also scan the cell centres
        cx, cy = _cell_centres(field)
        gx, gy = np.meshgrid(cx, cy)
        c_idx = int(np.argmax(field.grid))
        c_val = float(field.grid.flat[c_idx])
        l_idx = int(np.argmax(vals))
        if c_val > vals.flat[l_idx]:
            r, c = np.unravel_index(c_idx, field.grid.shape)
            return np.array([cx[c], cy[r]]), c_val
    idx = int(np.argmax(vals))
    r, c = np.unravel_index(idx, vals.shape)
    return np.array([xs[c], ys[r]]), float(vals[r, c])


def generate_random_field(config: FieldConfig) -> ScalarField:
    """Random Gaussian mixture rescaled so its dense-grid maximum is ``global_max``."""
    w, h = config.extent
    if not (w > 0 and h > 0):
        raise ValueError(f"extent must be positive, got {config.extent}")
    if config.num_bumps < 1:
        raise ValueError("num_bumps must be >= 1")
    if config.global_max <= 0:
        raise ValueError("global_max must be positive")
    if config.global_max <= config.baseline:
        raise ValueError("global_max must exceed baseline")

    rng = np.random.default_rng(config.seed)
    centers = []
    for _ in range(config.num_bumps):
        sep = config.min_bump_separation
        for attempt in range(2000):
            c = rng.uniform((0.0, 0.0), (w, h))
            if all(np.hypot(*(c - o)) >= sep for o in centers):
                break
            if attempt % 200 == 199:
                sep *= 0.8
        centers.append(c)
    amps = rng.uniform(*config.amplitude_range, size=config.num_bumps)
    widths = rng.uniform(*config.width_range, size=config.num_bumps)
    # the tallest bump anchors the global maximum
    amps[rng.integers(config.num_bumps)] = config.amplitude_range[1]

    bumps = tuple(Bump((float(c[0]), float(c[1])), float(a), float(s))
                  for c, a, s in zip(centers, amps, widths))
    raw = ScalarField((w, h), bumps, config.baseline)
    peak = float(np.max(sample_dense(raw)))
    scale = (config.global_max - config.baseline) / (peak - config.baseline)
    bumps = tuple(Bump(b.center, b.amplitude * scale, b.width) for b in bumps)
    field = ScalarField((w, h), bumps, config.baseline)
    return ScalarField((w, h), bumps, config.baseline, grid=sample_dense(field),
                       cell_size=DENSE_RESOLUTION)


def _cell_centres(field: ScalarField):
    ny, nx = field.grid.shape
    cs = field.cell_size
    return field.origin[0] + cs * (np.arange(nx) + 0.5), field.origin[1] + cs * (np.arange(ny) + 0.5)


def field_from_grid(values, cell_size: float, origin=(0.0, 0.0), clamp: bool = True) -> ScalarField:
    values = np.asarray(values, dtype=float)
    if values.ndim != 2 or values.size == 0:
        raise ValueError("grid must be a non-empty 2-D array")
    if not np.all(np.isfinite(values)):
        raise ValueError("grid contains non-finite values")
    if np.any(values < 0):
        raise ValueError("grid contains negative intensities")
    if cell_size <= 0:
        raise ValueError("cell size must be positive")
    ny, nx = values.shape
    tmp = ScalarField((nx * cell_size, ny * cell_size), origin=tuple(origin), grid=values, cell_size=cell_size)
    cx, cy = _cell_centres(tmp)
    if nx == 1:
        values = np.repeat(values, 2, axis=1)
        cx = np.array([cx[0] - 0.5 * cell_size, cx[0] + 0.5 * cell_size])
    if ny == 1:
        values = np.repeat(values, 2, axis=0)
        cy = np.array([cy[0] - 0.5 * cell_size, cy[0] + 0.5 * cell_size])
    interp = RegularGridInterpolator((cy, cx), values, method="linear", bounds_error=False, fill_value=None)
    # outside the outermost centres the nearest sample is held (no extrapolation)
    lo = np.array([cy[0], cx[0]])
    hi = np.array([cy[-1], cx[-1]])

    def held(yx, _f=interp):
        return _f(np.clip(yx, lo, hi))

    return ScalarField(tmp.extent, origin=tuple(map(float, origin)), grid=np.asarray(tmp.grid),
                       cell_size=float(cell_size), clamp=clamp, _interp=held)


def load_field_from_grid(path) -> ScalarField:
    """Read a grid file.

    Header line: ``width_cells height_cells cell_size_m origin_x origin_y``,
    then ``height_cells * width_cells`` whitespace-separated floats in
    row-major order, row 0 at ``origin_y``.
    """
    text = Path(path).read_text()
    lines = text.splitlines()
    header = lines[0].split() if lines else []
    if len(header) != 5:
        raise ValueError(f"{path}: malformed header, expected 5 fields, got {len(header)}")
    try:
        nx, ny = int(header[0]), int(header[1])
        cs, ox, oy = float(header[2]), float(header[3]), float(header[4])
    except ValueError as exc:
        raise ValueError(f"{path}: malformed header: {exc}") from None
    if nx < 1 or ny < 1:
        raise ValueError(f"{path}: malformed header, cell counts must be >= 1")
    try:
        vals = np.array([float(t) for t in " ".join(lines[1:]).split()])
    except ValueError as exc:
        raise ValueError(f"{path}: bad value: {exc}") from None
    if vals.size != nx * ny:
        raise ValueError(f"{path}: expected {nx * ny} values, found {vals.size}")
    return field_from_grid(vals.reshape(ny, nx), cs, (ox, oy))


def save_field_to_grid(field: ScalarField, path, cell_size: float | None = None):
    """Write a field in grid-file format.

    Grid fields are written verbatim. Bump fields are sampled at cell centres
    with ``cell_size`` (default 0.1 m).
    """
    if field.is_grid and cell_size is None:
        values, cs = field.grid, field.cell_size
    else:
        cs = cell_size or DENSE_RESOLUTION
        nx = int(round(field.extent[0] / cs))
        ny = int(round(field.extent[1] / cs))
        xs = field.origin[0] + cs * (np.arange(nx) + 0.5)
        ys = field.origin[1] + cs * (np.arange(ny) + 0.5)
        gx, gy = np.meshgrid(xs, ys)
        values = evaluate(field, np.stack([gx, gy], axis=-1))
    ny, nx = values.shape
    with open(path, "w") as fh:
        fh.write(f"{nx} {ny} {cs!r} {field.origin[0]!r} {field.origin[1]!r}\n")
        for row in values:
            fh.write(" ".join(repr(float(v)) for v in row) + "\n")


def tarp_field(extent=(20.0, 20.0), cell_size=0.5, origin=(0.0, 0.0)) -> ScalarField:
    """Three nested rectangular regions with intensities 3, 2 and 1 on a zero background."""
    nx = int(round(extent[0] / cell_size))
    ny = int(round(extent[1] / cell_size))
    g = np.zeros((ny, nx))
    xs = cell_size * (np.arange(nx) + 0.5)
    ys = cell_size * (np.arange(ny) + 0.5)
    gx, gy = np.meshgrid(xs, ys)
    w, h = extent
    g[(gx > 0.15 * w) & (gx < 0.85 * w) & (gy > 0.15 * h) & (gy < 0.55 * h)] = 1.0
    g[(gx > 0.35 * w) & (gx < 0.75 * w) & (gy > 0.45 * h) & (gy < 0.85 * h)] = 2.0
    g[(gx > 0.55 * w) & (gx < 0.75 * w) & (gy > 0.60 * h) & (gy < 0.80 * h)] = 3.0
    return field_from_grid(g, cell_size, origin)
