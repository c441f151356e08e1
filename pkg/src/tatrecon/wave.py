"""Finite-difference solver for u_tt = c^2 Lap u, u(0) = f, u_t(0) = 0 on an enlarged box.

Leapfrog in time with a fourth-order Laplacian; the box is large enough
that nothing reflected by its (Dirichlet) edges returns within [0, T].
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit
from scipy.interpolate import RectBivariateSpline
from scipy.ndimage import map_coordinates

from .fields import Grid, ScalarField, SoundSpeed
from .fio import BoundaryTrace
from .optics import Surface

CFL_MAX = 0.9
# the fourth-order stencil's stability limit is sqrt(3/4) of the second-order one
_STENCIL_STABILITY = np.sqrt(3.0) / 2


class CFLError(ValueError):
    pass


@njit(cache=True)
def _laplacian4(u, ih2x, ih2y, out):
    n0, n1 = u.shape
    for i in range(n0):
        for j in range(n1):
            out[i, j] = 0.0
    for i in range(2, n0 - 2):
        for j in range(2, n1 - 2):
            out[i, j] = ((-u[i - 2, j] + 16.0 * u[i - 1, j] - 30.0 * u[i, j] + 16.0 * u[i + 1, j] - u[i + 2, j]) * ih2x
                         + (-u[i, j - 2] + 16.0 * u[i, j - 1] - 30.0 * u[i, j] + 16.0 * u[i, j + 1] - u[i, j + 2]) * ih2y) / 12.0


@njit(cache=True)
def _leapfrog(u_prev, u_curr, c2dt2, ih2x, ih2y, nsteps, lap):
    """Advance nsteps; returns (u_prev, u_curr) after stepping (arrays are swapped in place)."""
    for _ in range(nsteps):
        _laplacian4(u_curr, ih2x, ih2y, lap)
        n0, n1 = u_curr.shape
        for i in range(n0):
            for j in range(n1):
                u_prev[i, j] = 2.0 * u_curr[i, j] - u_prev[i, j] + c2dt2[i, j] * lap[i, j]
        u_prev, u_curr = u_curr, u_prev
    return u_prev, u_curr


@dataclass
class WaveState:
    grid: Grid
    u_prev: np.ndarray
    u_curr: np.ndarray
    t: float
    dt: float

    def field(self) -> ScalarField:
        return ScalarField(self.grid, self.u_curr.copy())


def enlarged_grid(region_lo, region_hi, margin: float, h: float) -> Grid:
    lo = np.asarray(region_lo, float) - margin
    hi = np.asarray(region_hi, float) + margin
    n = np.ceil((hi - lo) / h).astype(int) + 1
    return Grid(tuple(lo), (h, h), tuple(int(v) for v in n))


def resample(f: ScalarField, grid: Grid) -> np.ndarray:
    """Cubic-spline resampling of f onto ``grid`` (zero outside f's box)."""
    ax = f.grid.axes()
    sp = RectBivariateSpline(ax[0], ax[1], f.values, kx=3, ky=3)
    g0, g1 = grid.axes()
    out = np.zeros(grid.shape)
    i = (g0 >= ax[0][0]) & (g0 <= ax[0][-1])
    j = (g1 >= ax[1][0]) & (g1 <= ax[1][-1])
    out[np.ix_(i, j)] = sp(g0[i], g1[j])
    return out


class WaveSolver:
    """Leapfrog stepping on a fixed box with sound speed c."""

    def __init__(self, grid: Grid, c: SoundSpeed, dt: float, cfl_max: float = CFL_MAX):
        h = min(grid.spacing)
        limit = cfl_max * _STENCIL_STABILITY * h / (c.c_max * np.sqrt(grid.dim))
        if dt > limit:
            raise CFLError(f"dt = {dt:.3g} exceeds the CFL limit {limit:.3g}")
        self.grid, self.c, self.dt = grid, c, dt
        cv = c(grid.points()).reshape(grid.shape)
        self.c2dt2 = np.ascontiguousarray(cv**2 * dt**2)
        self.c2 = cv**2
        self.ih2 = tuple(1.0 / s**2 for s in grid.spacing)
        self._lap = np.zeros(grid.shape)

    def laplacian(self, u: np.ndarray) -> np.ndarray:
        out = np.zeros_like(u)
        _laplacian4(np.ascontiguousarray(u), self.ih2[0], self.ih2[1], out)
        return out

    def start(self, f: np.ndarray) -> WaveState:
        """u_0 = f, u_1 = u_0 + (dt^2/2) c^2 Lap u_0 (consistent with u_t(0) = 0)."""
        u0 = np.ascontiguousarray(f, float).copy()
        u1 = u0 + 0.5 * self.c2dt2 * self.laplacian(u0)
        return WaveState(self.grid, u0, u1, self.dt, self.dt)

    def advance(self, st: WaveState, nsteps: int) -> WaveState:
        if nsteps <= 0:
            return st
        a, b = _leapfrog(st.u_prev.copy(), st.u_curr.copy(), self.c2dt2, self.ih2[0], self.ih2[1], nsteps, self._lap)
        return WaveState(self.grid, a, b, st.t + nsteps * self.dt, self.dt)

    def energy(self, st: WaveState) -> float:
        """Discrete energy conserved exactly by the scheme (time-staggered form)."""
        v = (st.u_curr - st.u_prev) / self.dt
        kin = np.sum(v**2 / self.c2)
        strain = -np.sum(st.u_curr * self.laplacian(st.u_prev))
        return float((kin + strain) * self.grid.cell_volume)

    def reverse(self, st: WaveState) -> WaveState:
        return WaveState(self.grid, st.u_curr.copy(), st.u_prev.copy(), st.t, self.dt)


def _steps_for(times: np.ndarray, dt_max: float) -> tuple[float, int]:
    d = np.diff(times)
    if len(d) and not np.allclose(d, d[0], rtol=1e-9, atol=1e-12):
        raise ValueError("output times must be uniform")
    dto = d[0] if len(d) else dt_max
    k = int(np.ceil(dto / dt_max - 1e-9))
    return dto / k, k


def sample(grid: Grid, u: np.ndarray, points: np.ndarray) -> np.ndarray:
    idx = (points - np.asarray(grid.origin)) / np.asarray(grid.spacing)
    return map_coordinates(u, idx.T, order=3, mode="constant")


def solve_forward(f: ScalarField, c: SoundSpeed, T: float, surface: Surface, times: np.ndarray | None = None,
                  h: float | None = None, cfl: float = 0.5, margin: float | None = None,
                  return_solver: bool = False, dt: float | None = None):
    """Physical trace u(x', t) for t in ``times`` (uniform, starting at 0) on the surface samples.

    ``dt`` caps the leapfrog step (it is further reduced so output times fall on steps)."""
    times = np.linspace(0.0, T, 41) if times is None else np.asarray(times, float)
    if abs(times[0]) > 1e-14:
        raise ValueError("output times must start at t = 0")
    h = h if h is not None else min(f.grid.spacing) / 2
    margin = c.c_max * T + 4 * h if margin is None else margin
    lo = np.minimum(np.array(f.grid.origin), surface.points.min(axis=0))
    hi = np.maximum(np.array(f.grid.upper), surface.points.max(axis=0))
    box = enlarged_grid(lo, hi, margin, h)
    dt_max = cfl * _STENCIL_STABILITY * h / (c.c_max * np.sqrt(2))
    if dt is not None:
        dt_max = min(dt_max, float(dt))
    dt, k = _steps_for(times, dt_max)
    solver = WaveSolver(box, c, dt)
    st = solver.start(resample(f, box))
    out = np.zeros((len(surface), len(times)))
    out[:, 0] = sample(box, st.u_prev, surface.points)
    if len(times) > 1:
        st = solver.advance(st, k - 1)
        out[:, 1] = sample(box, st.u_curr, surface.points)
        for n in range(2, len(times)):
            st = solver.advance(st, k)
            out[:, n] = sample(box, st.u_curr, surface.points)
    trace = BoundaryTrace(surface, times, out, even_extended=False)
    return (trace, solver, st) if return_solver else trace


def spectral_solution(f: ScalarField, t: float, pad: int = 4) -> ScalarField:
    """Constant-speed free-space solution by Fourier synthesis u^(xi, t) = f^(xi) cos(t |xi|) (padded)."""
    n = [pad * s for s in f.grid.shape]
    F = np.fft.fft2(f.values, s=n)
    k = [np.fft.fftfreq(m, d) * 2 * np.pi for m, d in zip(n, f.grid.spacing)]
    K0, K1 = np.meshgrid(*k, indexing="ij")
    U = np.real(np.fft.ifft2(F * np.cos(t * np.hypot(K0, K1))))
    big = Grid(f.grid.origin, f.grid.spacing, tuple(n))
    return ScalarField(big, U)


# ---------------------------------------------------------------------------
# Wave packets


def trace_wavepacket(center, direction, k: float, c: SoundSpeed, T: float, times=None, width: float | None = None,
                     h: float | None = None, cfl: float = 0.5) -> dict:
    """Evolve a Gaussian packet with carrier k along ``direction`` and track the centroids of its two halves.

    With u_t(0) = 0 the packet splits; the half with tau > 0 moves along
    -direction initially, the other along +direction. The halves are
    separated by the sign of <x - center, direction> and their centroids
    (weighted by u^2) are reported for times after they separate.
    """
    center = np.asarray(center, float)
    direction = np.asarray(direction, float) / np.linalg.norm(direction)
    times = np.linspace(0.0, T, 11) if times is None else np.asarray(times, float)
    h = h if h is not None else 2 * np.pi / (k * 8)
    width = width if width is not None else 8 * h
    if 2 * np.pi / k < 6 * h:
        raise ValueError("carrier under-resolved: fewer than 6 points per wavelength")
    if width < 6 * h:
        raise ValueError("packet envelope narrower than 6 cells")
    margin = c.c_max * T + 6 * width
    box = enlarged_grid(center, center, margin, h)
    dt_max = cfl * _STENCIL_STABILITY * h / (c.c_max * np.sqrt(2))
    dt, steps = _steps_for(times, dt_max)
    solver = WaveSolver(box, c, dt)
    X = box.points() - center
    u0 = (np.exp(-np.sum(X**2, axis=1) / (2 * width**2)) * np.cos(k * (X @ direction))).reshape(box.shape)
    st = solver.start(u0)
    side = (X @ direction).reshape(box.shape)
    pts = box.points().reshape(box.shape + (2,))
    plus, minus, sep = [], [], []
    for n, t in enumerate(times):
        if n == 1:
            st = solver.advance(st, steps - 1)
        elif n > 1:
            st = solver.advance(st, steps)
        u = st.u_prev if n == 0 else st.u_curr
        e = u**2
        out = []
        for mask in (side < 0, side > 0):
            m = e * mask
            tot = m.sum()
            out.append(np.einsum("ij,ijk->k", m, pts) / tot if tot > 0 else np.full(2, np.nan))
        plus.append(out[0])
        minus.append(out[1])
        sep.append(c.c_min * t > 3 * width)
    return {"times": times, "plus": np.array(plus), "minus": np.array(minus), "separated": np.array(sep),
            "h": h, "width": width, "energy": solver.energy(st)}
