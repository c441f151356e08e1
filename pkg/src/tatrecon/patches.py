"""Boundary patches: charts, patch cutoffs chi_j, per-patch parametrices and their combination.

The measured arc is split into arc-length-equal patches W_j. Each patch
carries boundary normal coordinates (w', w_n), with the domain on the side
w_n < 0, a cutoff chi_j(w', t) and a phase-space weight theta_j(y, eta).
The chi_j sum to one on the inner arc x [-T, T]; the theta_j sum to one
wherever some patch sees the strip from (y, eta).

A patch reconstruction is the hyperplane pipeline of :mod:`tatrecon.fio`
run on the patch's samples: the surface samples come from the chart (its
points on w_n = 0 and arc-length weights), so no separate chart algebra
is needed.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .fields import DomainGeometry, Grid, ScalarField, SoundSpeed
from .fio import (BoundaryTrace, FIOPair, Parametrix, SymbolTable, _plateau, apply_correction, smooth_ramp,
                  symbol_crossings, symbol_from_crossings, upsample)
from .optics import Surface

TWO_PI = 2 * np.pi


class PatchError(ValueError):
    pass


def _wrap(u):
    """Angle difference mapped to [-pi, pi)."""
    return np.mod(np.asarray(u, float) + np.pi, TWO_PI) - np.pi


# ---------------------------------------------------------------------------
# Charts


@dataclass(frozen=True)
class BoundaryChart:
    """Boundary normal coordinates (w', w_n) near one patch.

    For the circle w' is the polar angle and w_n = |x - center| - R; for the
    hyperplane w' = x_1 and w_n = x_2. In both cases w_n < 0 is the domain.
    ``w_range`` is the parameter interval the chart is used on (the support
    of chi_j); it may extend past 2 pi for a patch straddling angle 0.
    """

    j: int
    kind: str
    w_range: tuple
    center: tuple = (0.0, 0.0)
    radius: float = 1.0

    def to_x(self, w, wn) -> np.ndarray:
        w, wn = np.broadcast_arrays(np.asarray(w, float), np.asarray(wn, float))
        if self.kind == "halfspace":
            return np.stack([w, wn], axis=-1)
        r = self.radius + wn
        return np.asarray(self.center) + np.stack([r * np.cos(w), r * np.sin(w)], axis=-1)

    def from_x(self, x) -> tuple[np.ndarray, np.ndarray]:
        x = np.asarray(x, float)
        if self.kind == "halfspace":
            return x[..., 0], x[..., 1]
        d = x - np.asarray(self.center)
        w = np.arctan2(d[..., 1], d[..., 0])
        # place w in the chart's range when it wraps
        w = self.w_range[0] + np.mod(w - self.w_range[0], TWO_PI)
        return w, np.linalg.norm(d, axis=-1) - self.radius

    def metric(self, w, wn=0.0) -> np.ndarray:
        """Length of d/dw' (the arc-length factor of the chart)."""
        if self.kind == "halfspace":
            return np.ones_like(np.asarray(w, float) + 0 * np.asarray(wn, float))
        return self.radius + np.asarray(wn, float) + 0 * np.asarray(w, float)

    def jacobian(self, w, wn=0.0) -> np.ndarray:
        """det d x / d(w', w_n); equals the metric factor since the coordinates are orthogonal."""
        return self.metric(w, wn)

    def contains(self, w) -> np.ndarray:
        lo, hi = self.w_range
        if self.kind == "halfspace":
            return (np.asarray(w) >= lo) & (np.asarray(w) <= hi)
        return np.mod(np.asarray(w, float) - lo, TWO_PI) <= (hi - lo) + 1e-12

    def restrict(self, surface: Surface) -> tuple[np.ndarray, Surface]:
        """Indices and sub-surface of the samples inside the chart range (weights unchanged)."""
        idx = np.nonzero(self.contains(surface.w))[0]
        if self.kind == "convex" and len(idx):
            # order along the chart so the sub-surface is monotone in w'
            w = self.w_range[0] + np.mod(surface.w[idx] - self.w_range[0], TWO_PI)
            idx = idx[np.argsort(w, kind="stable")]
        sub = Surface(surface.w[idx], surface.points[idx], surface.normals[idx], surface.weights[idx], False)
        return idx, sub

    def surface(self, n: int) -> Surface:
        """n samples on w_n = 0 over the chart range with trapezoid arc-length weights."""
        w = np.linspace(self.w_range[0], self.w_range[1], n)
        pts = self.to_x(w, 0.0)
        if self.kind == "halfspace":
            nrm = np.tile([0.0, 1.0], (n, 1))
        else:
            nrm = np.stack([np.cos(w), np.sin(w)], axis=-1)
        dw = w[1] - w[0]
        weights = self.metric(w) * dw
        weights[[0, -1]] *= 0.5
        return Surface(np.mod(w, TWO_PI) if self.kind == "convex" else w, pts, nrm, weights, False)


# ---------------------------------------------------------------------------
# Patch cutoffs


@dataclass(frozen=True)
class PatchCutoff:
    """chi_j(w', t) = sigma_j(w') r_T(t).

    sigma_j rises over ``taper`` around each end of the core
    [center - half, center + half]; interior ends overlap the neighbour
    symmetrically (so adjacent ramps sum to one), outer ends of the inner
    arc ramp outward, into the margin between the inner arc and Gamma. The
    time factor is one on [-T, T] and falls to zero at T + t_taper.
    """

    center: float
    half: float
    taper: float
    T: float
    t_taper: float
    periodic: bool
    outer: tuple = (False, False)

    def surface_factor(self, w) -> np.ndarray:
        u = np.asarray(w, float) - self.center
        if self.periodic:
            u = _wrap(u)
        tau = self.taper
        if tau <= 0:
            return ((u >= -self.half) & (u <= self.half)).astype(float)
        left = smooth_ramp((u + self.half + tau) / tau) if self.outer[0] else smooth_ramp((u + self.half) / tau + 0.5)
        right = smooth_ramp((self.half + tau - u) / tau) if self.outer[1] else smooth_ramp((self.half - u) / tau + 0.5)
        return left * right

    def time_factor(self, t) -> np.ndarray:
        return _plateau(np.asarray(t, float), -self.T - self.t_taper, self.T + self.t_taper, self.t_taper)

    def __call__(self, w, t) -> np.ndarray:
        return self.surface_factor(w) * self.time_factor(t)

    def on(self, surface: Surface, times) -> np.ndarray:
        return self.surface_factor(surface.w)[:, None] * self.time_factor(np.asarray(times))[None, :]

    def support(self) -> tuple[float, float]:
        lo = self.center - self.half - (self.taper if self.outer[0] else self.taper / 2)
        hi = self.center + self.half + (self.taper if self.outer[1] else self.taper / 2)
        return lo, hi


@dataclass
class PatchSystem:
    """Charts, cutoffs chi_j and (once computed) the phase-space weights theta_j."""

    geometry: DomainGeometry
    charts: list
    chi: list
    gamma_tilde: tuple
    T: float
    t_taper: float
    theta: list | None = None
    symbols: list | None = None
    coarse: Grid | None = None
    fine: Grid | None = None
    info: dict = field(default_factory=dict)

    @property
    def n_patches(self) -> int:
        return len(self.charts)

    @property
    def T_data(self) -> float:
        """Data must be recorded up to here for the time tapers to vanish."""
        return self.T + self.t_taper

    def chi_sum(self, w, t) -> np.ndarray:
        return sum(c(w, t) for c in self.chi)

    def theta_sum(self) -> np.ndarray:
        return sum(self.theta)

    def visible(self) -> np.ndarray:
        """Coarse-grid bins (z, e_l) seen by at least one patch."""
        return self.info["visible"]

    def partition_report(self, n_w: int = 721, n_t: int = 201) -> dict:
        """Max deviations of sum_j chi_j from 1 on Gamma x [-T, T] and of sum_j theta_j on seen bins."""
        lo, hi = self.geometry.gamma if self.geometry.kind == "convex" else self.geometry.surface_range
        w, t = np.meshgrid(np.linspace(lo, hi, n_w), np.linspace(-self.T, self.T, n_t), indexing="ij")
        rep = {"chi_sum_deviation": float(np.max(np.abs(self.chi_sum(w, t) - 1.0)))}
        if "theta_coarse" in self.info:
            vis = self.visible()
            tot = sum(self.info["theta_coarse"])
            rep["theta_sum_deviation"] = float(np.max(np.abs(tot[vis] - 1.0))) if vis.any() else 0.0
            rep["visible_fraction"] = float(vis.mean())
        return rep

    def export_csv(self, path, n_samples: int = 721) -> None:
        """Patch layout: ranges and taper profiles sampled along Gamma."""
        lo, hi = self.geometry.gamma if self.geometry.kind == "convex" else self.geometry.surface_range
        w = np.linspace(lo, hi, n_samples)
        with open(Path(path), "w", newline="") as fh:
            out = csv.writer(fh)
            out.writerow(["w"] + [f"chi_{j}" for j in range(self.n_patches)] + ["sum"])
            prof = np.array([c.surface_factor(w) for c in self.chi])
            for i in range(n_samples):
                out.writerow([f"{w[i]:.8f}"] + [f"{v:.12f}" for v in prof[:, i]] + [f"{prof[:, i].sum():.12f}"])

    def export_ranges(self, path) -> None:
        with open(Path(path), "w", newline="") as fh:
            out = csv.writer(fh)
            out.writerow(["patch", "core_lo", "core_hi", "support_lo", "support_hi", "taper"])
            for j, c in enumerate(self.chi):
                s0, s1 = c.support()
                out.writerow([j, c.center - c.half, c.center + c.half, s0, s1, c.taper])


def _arc(geometry: DomainGeometry):
    if geometry.kind == "halfspace":
        lo, hi = geometry.surface_range
        return (lo, hi), (lo, hi), False
    g = tuple(geometry.gamma)
    gt = tuple(geometry.gamma_tilde)
    return g, gt, geometry.full_boundary


def build_patch_system(geometry: DomainGeometry, n_patches: int, T: float, w_taper: float = 0.2,
                       t_taper: float = 0.1, margin: float | None = None) -> PatchSystem:
    """Arc-length-equal patches of the inner arc with overlapping C^2 tapers.

    For a full circle the patches tile the circle periodically. For a
    partial arc the inner arc Gamma~ is split and its two outer ends ramp
    outward over ``w_taper``, which must fit in the margin between Gamma~
    and Gamma. For the hyperplane the surface range plays the role of
    Gamma~, with the outer ramps inside it (as in :func:`fio.make_window`).
    """
    if n_patches < 1:
        raise PatchError("need at least one patch")
    gamma, gtilde, periodic = _arc(geometry)
    length = gtilde[1] - gtilde[0]
    core = length / n_patches
    if w_taper > core:
        raise PatchError(f"taper {w_taper:.3g} wider than a patch ({core:.3g})")
    if geometry.kind == "convex" and not periodic:
        avail = min(gtilde[0] - gamma[0], gamma[1] - gtilde[1]) if margin is None else margin
        if avail < w_taper - 1e-12:
            raise PatchError(f"margin {avail:.3g} between the inner arc and Gamma is smaller than the taper {w_taper:.3g}")
    charts, chi = [], []
    for j in range(n_patches):
        a = gtilde[0] + j * core
        b = a + core
        outer = (not periodic and j == 0, not periodic and j == n_patches - 1)
        if geometry.kind == "halfspace":
            # outer ramps run inside the surface range, so shift the core inward
            a2 = a + (w_taper if outer[0] else 0.0)
            b2 = b - (w_taper if outer[1] else 0.0)
            a, b = a2, b2
        cut = PatchCutoff(0.5 * (a + b), 0.5 * (b - a), w_taper, T, t_taper, periodic, outer)
        s0, s1 = cut.support()
        if geometry.kind == "halfspace":
            charts.append(BoundaryChart(j, "halfspace", (s0, s1)))
        else:
            charts.append(BoundaryChart(j, "convex", (s0, s1), tuple(geometry.center), geometry.radius))
        chi.append(cut)
    return PatchSystem(geometry, charts, chi, gtilde, T, t_taper)


def compute_patch_weights(system: PatchSystem, c: SoundSpeed, grid: Grid, n_dirs: int = 64,
                          coarse_shape=(33, 33), dt: float = 5e-3) -> PatchSystem:
    """Per-patch symbols and the normalized phase-space partition theta_j (filled in place).

    The strips are traced once per sign; each patch only changes the
    window they are weighted with. w_j = sum over signs of the patch's
    tapered visibility weight, theta_j = w_j / sum_k w_k where the sum is
    positive, and 0 elsewhere.
    """
    coarse = grid.coarsen(coarse_shape)
    T_data = system.T_data
    events = {s: symbol_crossings(s, c, system.geometry, coarse, n_dirs, T_data, dt) for s in (1, -1)}
    symbols = []
    weights = []
    for cut in system.chi:
        sy = {s: symbol_from_crossings(s, events[s], system.geometry, cut, coarse, n_dirs, T_data) for s in (1, -1)}
        symbols.append(sy)
        weights.append(sum(sy[s].theta_weight() for s in sy))
    tot = sum(weights)
    pos = tot > 0
    theta_coarse = [np.where(pos, w / np.where(pos, tot, 1.0), 0.0) for w in weights]
    system.symbols = symbols
    system.coarse, system.fine = coarse, grid
    system.theta = [upsample(t, coarse, grid) for t in theta_coarse]
    system.info.update(theta_coarse=theta_coarse, visible=pos, n_dirs=n_dirs)
    return system


# ---------------------------------------------------------------------------
# Reconstruction


def _patch_parametrix(j: int, system: PatchSystem, tables: dict, surface: Surface, times) -> tuple[np.ndarray, Parametrix]:
    """Parametrix of patch j acting on the patch's own samples (indices into ``surface``)."""
    idx, sub = system.charts[j].restrict(surface)
    grid = system.fine
    pairs = {s: FIOPair(s, grid, tables[s], sub, times) for s in (1, -1)}
    sy = system.symbols[j]
    w = {s: sy[s].theta_weight() for s in sy}
    tot = w[1] + w[-1]
    th = {s: np.where(tot > 0, w[s] / np.where(tot > 0, tot, 1.0), 0.0) for s in w}
    q = {s: upsample(sy[s].inverse(th[s]), system.coarse, grid) for s in w}
    theta = {s: upsample(th[s], system.coarse, grid) for s in w}
    return idx, Parametrix(pairs, system.chi[j], sy, theta, q)


def patch_reconstruct(j: int, data: BoundaryTrace, system: PatchSystem, tables: dict) -> ScalarField:
    """(R_{j,+} S*_{j,+} + R_{j,-} S*_{j,-}) chi_j applied to the data restricted to patch j."""
    if system.symbols is None:
        raise PatchError("patch weights not computed; call compute_patch_weights first")
    data = data.even_extended_trace()
    idx, par = _patch_parametrix(j, system, tables, data.surface, data.times)
    grid = system.fine
    if len(idx) == 0 or not np.any(data.values[idx]):
        return ScalarField(grid, np.zeros(grid.shape))
    sub = next(iter(par.pairs.values())).surface
    return par.apply(BoundaryTrace(sub, data.times, data.values[idx], True))


def combine_patches(fields: list, system: PatchSystem) -> ScalarField:
    """sum_j theta_j(y, D) g_j with the same phase-space quantization as the correction."""
    grid = fields[0].grid
    out = np.zeros(grid.shape)
    for g, th in zip(fields, system.theta):
        if not np.any(th) or not np.any(g.values):
            continue
        out += np.real(apply_correction(th, g))
    return ScalarField(grid, out)


def reconstruct_patches(data: BoundaryTrace, system: PatchSystem, tables: dict) -> tuple[ScalarField, list]:
    parts = [patch_reconstruct(j, data, system, tables) for j in range(system.n_patches)]
    return combine_patches(parts, system), parts
