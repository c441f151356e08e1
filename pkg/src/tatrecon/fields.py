"""Grids, sampled fields, sound-speed models, phantoms and measurement geometry."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.ndimage import gaussian_filter

# Exponent of the polynomial bump profile (1 - r^2/R^2)^p; p = 6 gives a C^5 field.
BUMP_POWER = 6


class ModelError(ValueError):
    """A model or primitive violates the geometric assumptions (support outside the domain etc.)."""


@dataclass(frozen=True)
class Grid:
    origin: tuple[float, ...]
    spacing: tuple[float, ...]
    shape: tuple[int, ...]

    def __post_init__(self):
        if not (len(self.origin) == len(self.spacing) == len(self.shape)):
            raise ValueError("origin, spacing and shape must have the same length")
        if self.dim not in (2, 3):
            raise ValueError(f"dimension {self.dim} not supported")
        if any(h <= 0 for h in self.spacing):
            raise ValueError("grid spacing must be positive")
        if any(n < 2 for n in self.shape):
            raise ValueError("grid needs at least two samples per axis")

    @classmethod
    def from_bounds(cls, lower: Sequence[float], upper: Sequence[float], shape: Sequence[int]) -> "Grid":
        spacing = tuple((hi - lo) / (n - 1) for lo, hi, n in zip(lower, upper, shape))
        return cls(tuple(float(v) for v in lower), spacing, tuple(int(n) for n in shape))

    @property
    def dim(self) -> int:
        return len(self.shape)

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    @property
    def upper(self) -> tuple[float, ...]:
        return tuple(o + h * (n - 1) for o, h, n in zip(self.origin, self.spacing, self.shape))

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    def axes(self) -> list[np.ndarray]:
        return [o + h * np.arange(n) for o, h, n in zip(self.origin, self.spacing, self.shape)]

    def mesh(self) -> list[np.ndarray]:
        return np.meshgrid(*self.axes(), indexing="ij")

    def points(self) -> np.ndarray:
        """All nodes as an (N, dim) array in row-major order."""
        return np.stack([m.ravel() for m in self.mesh()], axis=-1)

    def coarsen(self, shape: Sequence[int]) -> "Grid":
        return Grid.from_bounds(self.origin, self.upper, shape)


@dataclass(frozen=True)
class ScalarField:
    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.size != self.grid.size:
            raise ValueError(f"expected {self.grid.size} values, got {vals.size}")
        if not np.all(np.isfinite(vals)):
            raise ValueError("field contains non-finite values")
        vals = vals.reshape(self.grid.shape)
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    def norm(self) -> float:
        return float(np.sqrt(self.grid.cell_volume * np.sum(self.values**2)))

    def with_values(self, values: np.ndarray) -> "ScalarField":
        return ScalarField(self.grid, values)


# ---------------------------------------------------------------------------
# Sound speed


@dataclass(frozen=True)
class Bump:
    center: tuple[float, ...]
    radius: float
    amplitude: float

    def contribution(self, x: np.ndarray):
        """Value, gradient and Hessian of A (1 - r^2/R^2)^p at points x of shape (N, d)."""
        d = x - np.asarray(self.center)
        r2 = np.sum(d * d, axis=-1)
        R2 = self.radius**2
        q = np.clip(1.0 - r2 / R2, 0.0, None)
        p = BUMP_POWER
        A = self.amplitude
        val = A * q**p
        g1 = -2.0 * A * p * q ** (p - 1) / R2
        grad = g1[:, None] * d
        g2 = 4.0 * A * p * (p - 1) * q ** (p - 2) / R2**2
        n = x.shape[-1]
        hess = g2[:, None, None] * d[:, :, None] * d[:, None, :] + g1[:, None, None] * np.eye(n)
        return val, grad, hess


@dataclass(frozen=True)
class SoundSpeed:
    """Sound speed c = 1 + sum of compactly supported bumps.

    ``field`` holds the sampled values; rays use the analytic model through
    :meth:`evaluate`, which also returns the gradient and Hessian of c.
    """

    field: ScalarField
    bumps: tuple[Bump, ...] = ()
    bounds: tuple[float, float] = (0.5, 2.0)

    @property
    def c_max(self) -> float:
        return float(max(1.0, self.field.values.max(), 1.0 + sum(max(b.amplitude, 0.0) for b in self.bumps)))

    @property
    def c_min(self) -> float:
        return float(min(1.0, self.field.values.min(), 1.0 + sum(min(b.amplitude, 0.0) for b in self.bumps)))

    @property
    def is_constant(self) -> bool:
        return len(self.bumps) == 0

    def evaluate(self, x: np.ndarray):
        """Return (c, grad c, Hess c) at points x of shape (N, d)."""
        x = np.atleast_2d(x)
        n, d = x.shape
        c = np.ones(n)
        grad = np.zeros((n, d))
        hess = np.zeros((n, d, d))
        for b in self.bumps:
            v, g, h = b.contribution(x)
            c += v
            grad += g
            hess += h
        return c, grad, hess

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.evaluate(x)[0]

    def support_distance(self, x: np.ndarray) -> np.ndarray:
        """Distance from x to the union of bump supports (inf for constant speed)."""
        x = np.atleast_2d(x)
        out = np.full(len(x), np.inf)
        for b in self.bumps:
            out = np.minimum(out, np.linalg.norm(x - np.asarray(b.center), axis=-1) - b.radius)
        return np.maximum(out, 0.0)

    def check_invariants(self, geometry: "DomainGeometry", smooth_tol: float = 1e3) -> dict:
        """Machine-checkable summary of the standing assumptions on c."""
        lo, hi = self.bounds
        vals = self.field.values
        inside = geometry.contains(self.field.grid.points()).reshape(vals.shape)
        exterior_dev = float(np.max(np.abs(vals[~inside] - 1.0))) if np.any(~inside) else 0.0
        h = min(self.field.grid.spacing)
        lap_max = max(float(np.max(np.abs(np.diff(vals, 2, axis=a)))) / h**2 for a in range(vals.ndim))
        report = {
            "min": float(vals.min()),
            "max": float(vals.max()),
            "exterior_deviation": exterior_dev,
            "laplacian_max": lap_max,
        }
        report["ok"] = bool(lo < report["min"] and report["max"] < hi and exterior_dev <= 1e-12 and lap_max < smooth_tol)
        return report


def make_sound_speed(model: dict, grid: Grid, geometry: "DomainGeometry | None" = None, M: float = 2.0) -> SoundSpeed:
    """Build a sound speed from a named model.

    ``model`` is a mapping with key ``kind`` in {constant, radial-bump,
    multi-bump}. Bumps carry ``center``, ``radius`` and ``amplitude``. With a
    geometry given, every bump support must lie inside the open domain.
    """
    kind = model.get("kind", "constant")
    if kind == "constant":
        bumps: list[Bump] = []
    elif kind == "radial-bump":
        bumps = [Bump(tuple(model["center"]), float(model["radius"]), float(model["amplitude"]))]
    elif kind == "multi-bump":
        bumps = [Bump(tuple(b["center"]), float(b["radius"]), float(b["amplitude"])) for b in model["bumps"]]
    else:
        raise ModelError(f"unknown sound-speed model {kind!r}")

    for b in bumps:
        if b.radius <= 0:
            raise ModelError("bump radius must be positive")
        if geometry is not None and not geometry.contains_ball(b.center, b.radius):
            raise ModelError(f"bump at {b.center} with radius {b.radius} is not compactly supported in the domain")
    peak = 1.0 + sum(max(b.amplitude, 0.0) for b in bumps)
    trough = 1.0 + sum(min(b.amplitude, 0.0) for b in bumps)
    if not (1.0 / M < trough and peak < M):
        raise ModelError(f"sound speed range [{trough}, {peak}] violates 1/M < c < M with M={M}")

    proto = SoundSpeed(ScalarField(grid, np.ones(grid.shape)), tuple(bumps), (1.0 / M, M))
    vals = proto(grid.points()).reshape(grid.shape)
    return SoundSpeed(ScalarField(grid, vals), tuple(bumps), (1.0 / M, M))


# ---------------------------------------------------------------------------
# Geometry


@dataclass(frozen=True)
class DomainGeometry:
    """Measurement geometry.

    kind == "halfspace": the domain is the box ``omega_box`` inside
    {x_n < 0}; data is measured on the segment ``surface_range`` of the
    hyperplane {x_n = 0}.

    kind == "convex": the domain is the disk (center, radius); ``gamma`` and
    ``gamma_tilde`` are arcs (start angle, end angle) in radians with
    gamma_tilde compactly inside gamma.
    """

    kind: str
    T_max: float
    omega_box: tuple[tuple[float, float], ...] | None = None
    surface_range: tuple[float, float] | None = None
    center: tuple[float, float] = (0.0, 0.0)
    radius: float = 0.5
    gamma: tuple[float, float] = (0.0, 2 * np.pi)
    gamma_tilde: tuple[float, float] = (0.0, 2 * np.pi)

    def __post_init__(self):
        if self.kind == "halfspace":
            if self.omega_box is None:
                raise ValueError("halfspace geometry needs omega_box")
            if self.omega_box[-1][1] >= 0:
                raise ValueError("the domain must lie in {x_n < 0}")
            if self.surface_range is None:
                object.__setattr__(self, "surface_range", (-np.inf, np.inf))
        elif self.kind == "convex":
            if self.radius <= 0:
                raise ValueError("radius must be positive")
            g0, g1 = self.gamma
            t0, t1 = self.gamma_tilde
            full = np.isclose(g1 - g0, 2 * np.pi)
            if not full and not (g0 < t0 and t1 < g1):
                raise ValueError("gamma_tilde must be compactly contained in gamma")
        else:
            raise ValueError(f"unknown geometry kind {self.kind!r}")
        if self.T_max < 0:
            raise ValueError("T_max must be non-negative")

    @property
    def full_boundary(self) -> bool:
        return self.kind == "convex" and np.isclose(self.gamma[1] - self.gamma[0], 2 * np.pi)

    def contains(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(x)
        if self.kind == "halfspace":
            ok = np.ones(len(x), bool)
            for a, (lo, hi) in enumerate(self.omega_box):
                ok &= (x[:, a] > lo) & (x[:, a] < hi)
            return ok
        return np.linalg.norm(x - np.asarray(self.center), axis=-1) < self.radius

    def contains_ball(self, center, radius: float) -> bool:
        c = np.asarray(center, float)
        if self.kind == "halfspace":
            return all(lo < c[a] - radius and c[a] + radius < hi for a, (lo, hi) in enumerate(self.omega_box))
        return float(np.linalg.norm(c - np.asarray(self.center))) + radius < self.radius

    def boundary_function(self, x: np.ndarray) -> np.ndarray:
        """Defining function of the measurement surface, negative on the domain side."""
        if self.kind == "halfspace":
            return x[..., -1]
        return np.linalg.norm(x - np.asarray(self.center), axis=-1) - self.radius

    def boundary_gradient(self, x: np.ndarray) -> np.ndarray:
        if self.kind == "halfspace":
            g = np.zeros_like(x)
            g[..., -1] = 1.0
            return g
        d = x - np.asarray(self.center)
        return d / np.linalg.norm(d, axis=-1, keepdims=True)

    def surface_parameter(self, x: np.ndarray) -> np.ndarray:
        """x' on the hyperplane, or the arc-length angle parameter on the circle (radians)."""
        if self.kind == "halfspace":
            return x[..., 0]
        d = x - np.asarray(self.center)
        return np.mod(np.arctan2(d[..., 1], d[..., 0]), 2 * np.pi)

    def in_measured_set(self, w: np.ndarray, inner: bool = False) -> np.ndarray:
        """Whether surface parameters lie on the measured patch (Gamma, or Gamma-tilde when inner)."""
        if self.kind == "halfspace":
            lo, hi = self.surface_range
            return (w >= lo) & (w <= hi)
        lo, hi = self.gamma_tilde if inner else self.gamma
        if np.isclose(hi - lo, 2 * np.pi):
            return np.ones(np.shape(w), bool)
        return np.mod(w - lo, 2 * np.pi) <= (hi - lo)

    def curvature(self, n_samples: int = 64) -> np.ndarray:
        if self.kind == "halfspace":
            return np.zeros(n_samples)
        return np.full(n_samples, 1.0 / self.radius)


def halfspace_geometry(T_max: float = 1.0, omega_box=((-0.5, 0.5), (-1.05, -0.05)), surface_range=(-1.0, 1.0)):
    return DomainGeometry("halfspace", T_max, omega_box=tuple(tuple(b) for b in omega_box), surface_range=tuple(surface_range))


def circle_geometry(T_max: float = 1.1, radius: float = 0.5, center=(0.0, 0.0), gamma=(0.0, 2 * np.pi), gamma_tilde=None):
    gamma_tilde = gamma if gamma_tilde is None else gamma_tilde
    return DomainGeometry("convex", T_max, center=tuple(center), radius=radius, gamma=tuple(gamma), gamma_tilde=tuple(gamma_tilde))


# ---------------------------------------------------------------------------
# Phantoms


@dataclass(frozen=True)
class EdgeSet:
    """Analytic edge samples of a phantom: positions, unit normals, and the jump across the edge."""

    points: np.ndarray
    normals: np.ndarray
    jumps: np.ndarray

    def __len__(self):
        return len(self.points)


@dataclass(frozen=True)
class Phantom:
    field: ScalarField
    edges: EdgeSet
    sharp: ScalarField = field(repr=False, default=None)


def _disk_edges(center, radius, amp, n):
    ang = (np.arange(n) + 0.5) * 2 * np.pi / n
    nrm = np.stack([np.cos(ang), np.sin(ang)], axis=-1)
    return np.asarray(center) + radius * nrm, nrm, np.full(n, amp)


def _polygon_edges(verts, amp, spacing):
    verts = np.asarray(verts, float)
    # counter-clockwise orientation gives outward normals (dy, -dx)
    area = 0.5 * np.sum(verts[:, 0] * np.roll(verts[:, 1], -1) - np.roll(verts[:, 0], -1) * verts[:, 1])
    if area < 0:
        verts = verts[::-1]
    pts, nrms = [], []
    for a, b in zip(verts, np.roll(verts, -1, axis=0)):
        d = b - a
        L = np.linalg.norm(d)
        m = max(int(L / spacing), 1)
        s = (np.arange(m) + 0.5) / m
        # skip points near corners: the normal is undefined there
        s = s[(s * L > 2 * spacing) & ((1 - s) * L > 2 * spacing)]
        pts.append(a + s[:, None] * d)
        nrms.append(np.repeat(np.array([[d[1], -d[0]]]) / L, len(s), axis=0))
    pts = np.concatenate(pts) if pts else np.zeros((0, 2))
    nrms = np.concatenate(nrms) if nrms else np.zeros((0, 2))
    return pts, nrms, np.full(len(pts), amp)


def _inside_polygon(x, verts):
    verts = np.asarray(verts, float)
    inside = np.zeros(len(x), bool)
    px, py = x[:, 0], x[:, 1]
    for a, b in zip(verts, np.roll(verts, -1, axis=0)):
        cond = (a[1] > py) != (b[1] > py)
        with np.errstate(divide="ignore", invalid="ignore"):
            xcross = a[0] + (py - a[1]) * (b[0] - a[0]) / (b[1] - a[1])
        inside ^= cond & (px < xcross)
    return inside


PRIMITIVES = ("disk", "smoothed-disk", "polygon")


def make_phantom(spec: list[dict], grid: Grid, geometry: DomainGeometry | None = None,
                 mollify: float = 0.0, edge_samples: int = 128) -> Phantom:
    """Sum of primitive indicators.

    Each primitive is a mapping with ``type`` in {disk, smoothed-disk,
    polygon} and ``amplitude``. Disks take ``center``/``radius``; polygons
    take ``vertices``. ``mollify`` is a Gaussian blur width in units of the
    grid spacing, applied to the whole field (``smoothed-disk`` uses its own
    ``width``, default 2).
    """
    X = grid.points()
    values = np.zeros(grid.size)
    sharp = np.zeros(grid.size)
    pts, nrms, jumps = [], [], []
    h = min(grid.spacing)
    for prim in spec:
        kind = prim.get("type")
        if kind not in PRIMITIVES:
            raise ModelError(f"unknown phantom primitive {kind!r}")
        amp = float(prim.get("amplitude", 1.0))
        if kind in ("disk", "smoothed-disk"):
            c, r = np.asarray(prim["center"], float), float(prim["radius"])
            if geometry is not None and not geometry.contains_ball(c, r):
                raise ModelError(f"disk at {tuple(c)} radius {r} escapes the domain")
            ind = (np.linalg.norm(X - c, axis=-1) <= r).astype(float)
            sharp += amp * ind
            if kind == "smoothed-disk":
                w = float(prim.get("width", 2.0))
                values += amp * gaussian_filter(ind.reshape(grid.shape), w, mode="constant").ravel()
            else:
                values += amp * ind
            p, n, j = _disk_edges(c, r, amp, edge_samples)
        else:
            verts = np.asarray(prim["vertices"], float)
            if geometry is not None and not np.all(geometry.contains(verts)):
                raise ModelError("polygon escapes the domain")
            ind = _inside_polygon(X, verts).astype(float)
            sharp += amp * ind
            values += amp * ind
            p, n, j = _polygon_edges(verts, amp, 2 * np.pi * 0.2 / edge_samples)
        pts.append(p)
        nrms.append(n)
        jumps.append(j)
    values = values.reshape(grid.shape)
    if mollify > 0:
        values = gaussian_filter(values, mollify, mode="constant")
    edges = EdgeSet(
        np.concatenate(pts) if pts else np.zeros((0, grid.dim)),
        np.concatenate(nrms) if nrms else np.zeros((0, grid.dim)),
        np.concatenate(jumps) if jumps else np.zeros(0),
    )
    return Phantom(ScalarField(grid, values), edges, ScalarField(grid, sharp))


def jump_locus(field: ScalarField, threshold: float) -> np.ndarray:
    """Grid nodes where the centered-difference gradient magnitude exceeds threshold."""
    grads = np.gradient(field.values, *field.grid.spacing)
    mag = np.sqrt(sum(g**2 for g in grads))
    return field.grid.points()[mag.ravel() > threshold]


# ---------------------------------------------------------------------------
# Raw array export


def save_raw(path: str | Path, values: np.ndarray, **meta) -> None:
    """Write little-endian float64 row-major data plus a ``.json`` text sidecar."""
    path = Path(path)
    arr = np.ascontiguousarray(values, dtype="<f8")
    path.write_bytes(arr.tobytes(order="C"))
    side = {"shape": list(arr.shape), "dtype": "<f8", "order": "C"}
    side.update({k: (v.tolist() if isinstance(v, np.ndarray) else v) for k, v in meta.items()})
    path.with_suffix(path.suffix + ".json").write_text(json.dumps(side, indent=1))


def load_raw(path: str | Path) -> tuple[np.ndarray, dict]:
    path = Path(path)
    side = json.loads(path.with_suffix(path.suffix + ".json").read_text())
    arr = np.frombuffer(path.read_bytes(), dtype="<f8").reshape(side["shape"])
    return arr, side


def save_field(path: str | Path, f: ScalarField) -> None:
    save_raw(path, f.values, origin=list(f.grid.origin), spacing=list(f.grid.spacing))


def load_field(path: str | Path) -> ScalarField:
    arr, side = load_raw(path)
    grid = Grid(tuple(side["origin"]), tuple(side["spacing"]), tuple(side["shape"]))
    return ScalarField(grid, arr.copy())
