"""The operators S+/-, their adjoints, the data window, the principal symbol and the correction.

    (S_s f)(x', t) = 1/(2 (2 pi)^n) \\int e^{i phi_s(x', t, eta)} a_s(x', t, eta) f^(eta) d eta

is discretized on a polar frequency grid: f^ is evaluated at rho_m * e(theta_q)
by a type-2 NUFFT of the grid samples, the radial sum for each angle is a
1D type-2 NUFFT at the nonuniform positions rho -> rho * phi(x', t, theta)
(homogeneity of the phase), and the angular sum is a trapezoid rule. The
adjoint runs the same chain transposed (type-1 transforms), so it is the
exact adjoint for the inner products h^2 sum on the grid and
sum omega_s dt_k on surface x time.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import finufft
import numpy as np

from .fields import DomainGeometry, Grid, ScalarField, SoundSpeed
from .optics import PhaseAmpTable, Surface, TableSampler
from .rays import GLANCING_THRESHOLD, direction_bins, trace_crossings

NUFFT_EPS = 1e-12
PREFACTOR_2D = 1.0 / (2 * (2 * np.pi) ** 2)
# theta starts rising once the crossings' window value exceeds this
THETA_LOW = 0.1


# ---------------------------------------------------------------------------
# Data and windows


def smooth_ramp(u):
    """C^2 ramp 0 -> 1 on [0, 1] with r(u) + r(1 - u) = 1."""
    u = np.clip(u, 0.0, 1.0)
    return u - np.sin(2 * np.pi * u) / (2 * np.pi)


def data_times(T: float, dt: float) -> np.ndarray:
    """Symmetric uniform samples of [-T, T] containing t = 0."""
    n = int(np.ceil(T / dt))
    return np.linspace(-T, T, 2 * n + 1)


@dataclass
class BoundaryTrace:
    """Samples of u on surface x time. ``values`` has shape (surface, time)."""

    surface: Surface
    times: np.ndarray
    values: np.ndarray
    even_extended: bool = False

    def __post_init__(self):
        self.values = np.asarray(self.values)
        if self.values.shape != (len(self.surface), len(self.times)):
            raise ValueError(f"trace shape {self.values.shape} does not match surface x times")

    @property
    def time_weights(self) -> np.ndarray:
        dt = np.diff(self.times)
        w = np.zeros(len(self.times))
        w[:-1] += dt / 2
        w[1:] += dt / 2
        return w

    @property
    def weights(self) -> np.ndarray:
        return self.surface.weights[:, None] * self.time_weights[None, :]

    def inner(self, other: "BoundaryTrace") -> complex:
        return complex(np.sum(self.weights * self.values * np.conj(other.values)))

    def norm(self) -> float:
        return float(np.sqrt(np.sum(self.weights * np.abs(self.values) ** 2)))

    def with_values(self, values) -> "BoundaryTrace":
        return BoundaryTrace(self.surface, self.times, values, self.even_extended)

    def even_extended_trace(self) -> "BoundaryTrace":
        """Mirror physical data on [0, T] to [-T, T] (u is even in t because u_t(., 0) = 0)."""
        if self.even_extended:
            return self
        if self.times[0] != 0:
            raise ValueError("physical traces must start at t = 0")
        times = np.concatenate([-self.times[:0:-1], self.times])
        values = np.concatenate([self.values[:, :0:-1], self.values], axis=1)
        return BoundaryTrace(self.surface, times, values, True)

    def physical(self) -> "BoundaryTrace":
        k = np.searchsorted(self.times, 0.0)
        return BoundaryTrace(self.surface, self.times[k:], self.values[:, k:], False)

    def export(self, path) -> None:
        from .fields import save_raw

        save_raw(path, np.real(self.values), axes=["surface", "time"], surface_w=self.surface.w,
                 times=self.times, even_extended=self.even_extended)


@dataclass(frozen=True)
class CutoffWindow:
    """chi(w, t) = r_s(w) r_t(t): product of C^2 ramps, == 1 on the plateau V."""

    w_range: tuple
    t_range: tuple
    w_taper: float
    t_taper: float
    periodic: bool = False

    def surface_factor(self, w: np.ndarray) -> np.ndarray:
        w = np.asarray(w, float)
        if self.periodic and np.isclose(self.w_range[1] - self.w_range[0], 2 * np.pi):
            return np.ones_like(w)
        a, b = self.w_range
        if self.periodic:
            w = a + np.mod(w - a, 2 * np.pi)
        return _plateau(w, a, b, self.w_taper)

    def time_factor(self, t: np.ndarray) -> np.ndarray:
        return _plateau(np.asarray(t, float), *self.t_range, self.t_taper)

    def __call__(self, w, t) -> np.ndarray:
        return self.surface_factor(w) * self.time_factor(t)

    def on(self, surface: Surface, times: np.ndarray) -> np.ndarray:
        return self.surface_factor(surface.w)[:, None] * self.time_factor(times)[None, :]

    def plateau(self) -> tuple:
        return ((self.w_range[0] + self.w_taper, self.w_range[1] - self.w_taper),
                (self.t_range[0] + self.t_taper, self.t_range[1] - self.t_taper))


def _plateau(x, a, b, taper):
    if taper <= 0:
        return ((x >= a) & (x <= b)).astype(float)
    return smooth_ramp((x - a) / taper) * smooth_ramp((b - x) / taper)


def make_window(geometry: DomainGeometry, T: float | None = None, w_taper: float = 0.1, t_taper: float = 0.1,
                w_range=None) -> CutoffWindow:
    T = geometry.T_max if T is None else T
    if geometry.kind == "halfspace":
        wr = tuple(w_range or geometry.surface_range)
        return CutoffWindow(wr, (-T, T), w_taper, t_taper)
    wr = tuple(w_range or geometry.gamma)
    return CutoffWindow(wr, (-T, T), w_taper, t_taper, periodic=True)


# ---------------------------------------------------------------------------
# The operators


def _shift_center(grid: Grid) -> np.ndarray:
    """Physical position of the zero NUFFT mode: origin + (n // 2) h per axis."""
    return np.array([o + (n // 2) * h for o, n, h in zip(grid.origin, grid.shape, grid.spacing)])


@dataclass
class FIOPair:
    """Discretized S_s and S_s^* for one sign on a fixed grid and surface x time sampling."""

    sign: int
    grid: Grid
    table: PhaseAmpTable
    surface: Surface
    times: np.ndarray
    rho_max: float | None = None
    n_angles: int | None = None
    d_rho: float | None = None
    chunk: int = 32
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.table.sign != self.sign:
            raise ValueError("table sign mismatch")
        g = self.grid
        h = min(g.spacing)
        nyq = np.pi / h
        if self.rho_max is None:
            self.rho_max = nyq
        elif self.rho_max > nyq * (1 + 1e-12):
            warnings.warn(f"requested frequency {self.rho_max:.1f} beyond grid Nyquist {nyq:.1f}; truncated")
            self.rho_max = nyq
        pts = self.surface.points
        lo, hi = np.array(g.origin), np.array(g.upper)
        corners = np.array([[lo[0], lo[1]], [lo[0], hi[1]], [hi[0], lo[1]], [hi[0], hi[1]]])
        s_max = float(np.max(np.linalg.norm(pts, axis=1)) + np.max(np.abs(self.times)) * 1.5)
        y_max = float(np.max(np.linalg.norm(corners, axis=1)))
        if self.d_rho is None:
            period = 2.0 * (s_max + y_max)
            self.d_rho = 2 * np.pi / period
        m = int(np.ceil(self.rho_max / self.d_rho))
        m += m % 2
        self.d_rho = self.rho_max / m
        # radial nodes 0, d_rho, ..., rho_max; trapezoid weights for rho d rho with the
        # Euler-Maclaurin end correction at rho = 0 (the integrand's slope there is f^(0))
        self.rho = self.d_rho * np.arange(0, m + 1)
        self.n_rho = m + 1
        self.rho_weights = self.d_rho * self.rho
        self.rho_weights[0] = self.d_rho**2 / 12
        if self.n_angles is None:
            L = float(np.max(np.linalg.norm(pts[:, None, :] - corners[None], axis=-1)))
            self.n_angles = int(64 * np.ceil(1.15 * self.rho_max * L / 64))
        self.angles = 2 * np.pi * np.arange(self.n_angles) / self.n_angles
        self.d_theta = 2 * np.pi / self.n_angles
        self.sampler = TableSampler(self.table, self.surface, self.times)
        self._center = _shift_center(g)
        e = np.stack([np.cos(self.angles), np.sin(self.angles)], axis=-1)
        eta = self.rho[None, :, None] * e[:, None, :]          # (Q, M, 2)
        self._eta = eta.reshape(-1, 2)
        hs = np.array(g.spacing)
        self._nu = [np.ascontiguousarray(self._eta[:, a] * hs[a]) for a in range(2)]
        self._shift = np.exp(-1j * (self._eta @ self._center))
        # 1D modes k = -n_rho .. n_rho - 1; radial node j sits at position j + n_rho
        self._nmodes = 2 * self.n_rho
        d = BoundaryTrace(self.surface, self.times, np.zeros((len(self.surface), len(self.times))))
        self.data_weights = d.weights
        self.info.update(n_rho=self.n_rho, d_rho=self.d_rho, n_angles=self.n_angles, rho_max=self.rho_max)

    # -- pieces
    def spectrum(self, f: np.ndarray) -> np.ndarray:
        """f^(rho_m e_q) = h^2 sum_j f_j e^{-i <y_j, eta>}, shape (Q, M)."""
        F = finufft.nufft2d2(self._nu[0], self._nu[1], np.asarray(f, complex), eps=NUFFT_EPS, isign=-1)
        return (self.grid.cell_volume * self._shift * F).reshape(self.n_angles, self.n_rho)

    def spectrum_adjoint(self, H: np.ndarray) -> np.ndarray:
        c = (np.conj(self._shift) * H.ravel()).astype(complex)
        return finufft.nufft2d1(self._nu[0], self._nu[1], c, self.grid.shape, eps=NUFFT_EPS, isign=1)

    def _chunks(self):
        for q0 in range(0, self.n_angles, self.chunk):
            q = np.arange(q0, min(q0 + self.chunk, self.n_angles))
            phi, amp = self.sampler.at(self.angles[q])
            yield q, phi, amp

    # -- operators
    def forward(self, f) -> BoundaryTrace:
        f = f.values if isinstance(f, ScalarField) else np.asarray(f)
        F = self.spectrum(f)
        modes = np.zeros((self.n_angles, self._nmodes), complex)
        modes[:, self.n_rho:] = F * self.rho_weights[None, :]
        out = np.zeros(len(self.surface) * len(self.times), complex)
        if np.any(F):
            for q, phi, amp in self._chunks():
                for i, qq in enumerate(q):
                    x = np.mod(self.d_rho * phi[i] + np.pi, 2 * np.pi) - np.pi
                    G = finufft.nufft1d2(x, modes[qq], eps=NUFFT_EPS, isign=1)
                    if amp is not None:
                        G *= amp[i]
                    out += G
        out *= PREFACTOR_2D * self.d_theta
        return BoundaryTrace(self.surface, self.times, out.reshape(len(self.surface), len(self.times)), True)

    def adjoint(self, v) -> ScalarField:
        vals = v.values if isinstance(v, BoundaryTrace) else np.asarray(v)
        z = (self.data_weights * vals).ravel().astype(complex)
        H = np.zeros((self.n_angles, self.n_rho), complex)
        if np.any(z):
            for q, phi, amp in self._chunks():
                for i, qq in enumerate(q):
                    x = np.mod(self.d_rho * phi[i] + np.pi, 2 * np.pi) - np.pi
                    cp = z if amp is None else amp[i] * z
                    full = finufft.nufft1d1(x, cp, self._nmodes, eps=NUFFT_EPS, isign=-1)
                    H[qq] = full[self.n_rho:]
        H *= (PREFACTOR_2D * self.d_theta) * self.rho_weights[None, :]
        return _ComplexField(self.grid, self.spectrum_adjoint(H))


class _ComplexField:
    """Complex grid samples (intermediate results of the adjoints)."""

    def __init__(self, grid: Grid, values: np.ndarray):
        self.grid, self.values = grid, values

    @property
    def real(self) -> ScalarField:
        return ScalarField(self.grid, np.real(self.values))

    def inner(self, f) -> complex:
        fv = f.values if hasattr(f, "values") else f
        return complex(self.grid.cell_volume * np.sum(fv * np.conj(self.values)))


def apply_S(sign: int, table: PhaseAmpTable, f: ScalarField, times: np.ndarray, surface: Surface | None = None,
            **kw) -> BoundaryTrace:
    return FIOPair(sign, f.grid, table, surface or table.surface, times, **kw).forward(f)


def apply_S_adjoint(sign: int, table: PhaseAmpTable, v: BoundaryTrace, grid: Grid, **kw) -> _ComplexField:
    return FIOPair(sign, grid, table, v.surface, v.times, **kw).adjoint(v)


def forward_data(pairs: dict, f) -> BoundaryTrace:
    """(S+ + S-) f; real for real f since S- f is the complex conjugate of S+ f."""
    u = None
    for p in pairs.values():
        d = p.forward(f)
        u = d if u is None else u.with_values(u.values + d.values)
    return u.with_values(np.real(u.values))


# ---------------------------------------------------------------------------
# Symbol and correction


@dataclass
class SymbolTable:
    """Principal symbol data on a coarse position grid x direction bins for one sign.

    ``b0`` is sum |a|^2 chi over the crossings of the strip from (z, e_l) with the
    measured set in [-T, T]. ``symbol`` is the full principal symbol of
    S*_s chi S_s, which also carries the crossing-map density and the 1/4
    from the two 1/(2 (2 pi)^n) prefactors.
    """

    sign: int
    grid: Grid
    dirs: np.ndarray
    b0: np.ndarray
    symbol: np.ndarray
    eps_b: float
    chi_eff: np.ndarray | None = None

    def theta_weight(self) -> np.ndarray:
        """Cutoff vanishing where b0 < 2 eps_b and rising to 1 where the crossings sit on the window plateau.

        The ramp variable is the crossing-averaged window value chi_eff in
        [0, 1], so theta / b0 stays bounded across the window taper instead
        of amplifying its edge artifacts by up to 1 / (2 eps_b).
        """
        chi = self.chi_eff if self.chi_eff is not None else self.b0 / max(float(self.b0.max()), 1e-300)
        ramp = smooth_ramp((chi - THETA_LOW) / (1.0 - THETA_LOW))
        return np.where(self.b0 >= 2 * self.eps_b, ramp, 0.0)

    def inverse(self, theta: np.ndarray) -> np.ndarray:
        """theta / symbol with the b0 floor eps_b."""
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(self.b0 > 0, self.symbol / self.b0, 0.0)
            q = theta / (np.maximum(self.b0, self.eps_b) * ratio)
        return np.where(theta > 0, q, 0.0)


def symbol_crossings(sign: int, c: SoundSpeed, geometry: DomainGeometry, grid: Grid, n_dirs: int = 64,
                     T: float | None = None, dt: float = 5e-3):
    """Crossings (with amplitude and density) of the strips from every (z, e_l) of ``grid``; window independent."""
    T = geometry.T_max if T is None else T
    Z = grid.points()
    y = np.repeat(Z, n_dirs, axis=0)
    eta = np.tile(direction_bins(n_dirs), (len(Z), 1))
    return trace_crossings(c, geometry, y, eta, sign, T=T, dt=dt, amplitude=True, jacobian=True)


def symbol_from_crossings(sign: int, ev, geometry: DomainGeometry, window, grid: Grid, n_dirs: int, T: float,
                          eps_ratio: float = 0.05, glancing: float = GLANCING_THRESHOLD) -> SymbolTable:
    """Accumulate |a|^2 chi (and the full symbol) over the crossings of each strip."""
    n = grid.size * n_dirs
    b0 = np.zeros(n)
    sym = np.zeros(n)
    full = np.zeros(n)
    ok = (np.abs(ev.xi_normal) >= glancing) & (np.abs(ev.t) <= T)
    ok &= geometry.in_measured_set(ev.w)
    chi = window(ev.w, ev.t) * ok
    wt = chi * ev.amplitude**2
    np.add.at(b0, ev.ray, wt)
    np.add.at(sym, ev.ray, 0.25 * wt * ev.density)
    np.add.at(full, ev.ray, 0.25 * ok * ev.amplitude**2 * ev.density)
    shape = tuple(grid.shape) + (n_dirs,)
    b0 = b0.reshape(shape)
    eps_b = eps_ratio * float(b0.max()) if b0.size else 0.0
    with np.errstate(divide="ignore", invalid="ignore"):
        chi_eff = np.where(full > 0, sym / full, 0.0).reshape(shape)
    return SymbolTable(sign, grid, direction_bins(n_dirs), b0, sym.reshape(shape), eps_b, chi_eff)


def compute_b0(sign: int, c: SoundSpeed, geometry: DomainGeometry, window, grid: Grid,
               n_dirs: int = 64, T: float | None = None, dt: float = 5e-3, eps_ratio: float = 0.05,
               glancing: float = GLANCING_THRESHOLD) -> SymbolTable:
    """Trace the strips from every (z, e_l) of ``grid`` and accumulate |a|^2 chi at their crossings."""
    T = geometry.T_max if T is None else T
    ev = symbol_crossings(sign, c, geometry, grid, n_dirs, T, dt)
    return symbol_from_crossings(sign, ev, geometry, window, grid, n_dirs, T, eps_ratio, glancing)


def _linear_matrix(x_tab: np.ndarray, x_new: np.ndarray) -> np.ndarray:
    n = len(x_tab)
    return np.stack([np.interp(x_new, x_tab, e) for e in np.eye(n)], axis=1)


def upsample(values: np.ndarray, coarse: Grid, fine: Grid) -> np.ndarray:
    """Separable linear interpolation of (coarse grid x extra) values onto a fine grid.

    Linear rather than cubic: symbols have window-taper edges that splines overshoot.
    """
    ax_c = coarse.axes()
    ax_f = fine.axes()
    M0 = _linear_matrix(ax_c[0], ax_f[0])
    M1 = _linear_matrix(ax_c[1], ax_f[1])
    return np.einsum("ai,ij...,bj->ab...", M0, values, M1, optimize=True)


PARTITION_WIDTH = 1.5


def cone_partition(shape, spacing, n_dirs: int, pad: int = 2, width: float = PARTITION_WIDTH):
    """Angular partition of unity psi_l(eta) on the padded FFT frequency grid (sums to 1 exactly).

    Normalized Gaussians in angle, ``width`` bins wide. Smoothness in eta
    keeps the spatial kernels of the pieces short, so a symbol that varies
    with position does not leak far from where the field lives.
    """
    n = [pad * s for s in shape]
    k0 = np.fft.fftfreq(n[0], spacing[0]) * 2 * np.pi
    k1 = np.fft.fftfreq(n[1], spacing[1]) * 2 * np.pi
    K0, K1 = np.meshgrid(k0, k1, indexing="ij")
    u = np.mod(np.arctan2(K1, K0), 2 * np.pi) / (2 * np.pi / n_dirs)
    psi = np.empty((n_dirs,) + tuple(n))
    for l in range(n_dirs):
        d = np.mod(u - l + n_dirs / 2, n_dirs) - n_dirs / 2
        psi[l] = np.exp(-0.5 * (d / width) ** 2)
    psi /= psi.sum(axis=0)
    dc = (K0 == 0) & (K1 == 0)
    psi[:, dc] = 1.0 / n_dirs
    return psi


def apply_correction(q: np.ndarray, g, cones: np.ndarray | None = None, pad: int = 2) -> np.ndarray:
    """Phase-space multiplier: sum_l q(z, l) * [psi_l(D) g](z), optionally times a cone weight.

    ``q`` has shape grid.shape + (n_dirs,) on the output grid (left
    quantization). ``cones`` (same shape) multiplies q.
    """
    grid = g.grid
    vals = np.asarray(g.values)
    n_dirs = q.shape[-1]
    if cones is not None:
        q = q * cones
    psi = cone_partition(grid.shape, grid.spacing, n_dirs, pad)
    n = psi.shape[1:]
    G = np.fft.fft2(vals, s=n)
    out = np.zeros(grid.shape, complex)
    s0, s1 = grid.shape
    for l in range(n_dirs):
        if not np.any(q[..., l]):
            continue
        part = np.fft.ifft2(psi[l] * G)[:s0, :s1]
        out += q[..., l] * part
    return out


# ---------------------------------------------------------------------------
# Reconstruction


@dataclass
class Parametrix:
    """Everything needed to apply sum_s R_s S_s^* chi to boundary data."""

    pairs: dict
    window: CutoffWindow
    symbols: dict
    theta: dict
    q: dict

    def apply(self, data: BoundaryTrace) -> ScalarField:
        data = data.even_extended_trace()
        grid = next(iter(self.pairs.values())).grid
        chi = self.window.on(data.surface, data.times)
        out = np.zeros(grid.shape, complex)
        for s, pair in self.pairs.items():
            if not np.any(self.q[s]):
                continue
            back = pair.adjoint(data.with_values(chi * data.values))
            out += apply_correction(self.q[s], back)
        return ScalarField(grid, np.real(out))


def partition_theta(symbols: dict, coarse: Grid, fine: Grid, visibility: dict | None = None) -> tuple[dict, dict]:
    """theta_s = w_s / (w_+ + w_-) and q_s = theta_s / symbol_s, upsampled to ``fine``."""
    w = {s: sym.theta_weight() for s, sym in symbols.items()}
    if visibility is not None:
        w = {s: w[s] * visibility[s] for s in w}
    tot = sum(w.values())
    theta = {s: np.where(tot > 0, w[s] / np.where(tot > 0, tot, 1.0), 0.0) for s in w}
    q = {s: symbols[s].inverse(theta[s]) for s in w}
    return ({s: upsample(theta[s], coarse, fine) for s in w}, {s: upsample(q[s], coarse, fine) for s in w})


def build_parametrix(pairs: dict, c: SoundSpeed, geometry: DomainGeometry, window: CutoffWindow,
                     coarse_shape=(33, 33), n_dirs: int | None = None, dt: float = 5e-3,
                     T: float | None = None) -> Parametrix:
    grid = next(iter(pairs.values())).grid
    n_dirs = n_dirs or next(iter(pairs.values())).table.n_dirs
    coarse = grid.coarsen(coarse_shape)
    symbols = {s: compute_b0(s, c, geometry, window, coarse, n_dirs, T=T, dt=dt) for s in pairs}
    theta, q = partition_theta(symbols, coarse, grid)
    return Parametrix(pairs, window, symbols, theta, q)


def reconstruct_hyperplane(data: BoundaryTrace, pairs: dict, c: SoundSpeed, geometry: DomainGeometry,
                           window: CutoffWindow, **kw) -> ScalarField:
    """R+ S+^*(chi data) + R- S-^*(chi data)."""
    return build_parametrix(pairs, c, geometry, window, **kw).apply(data)


# ---------------------------------------------------------------------------
# Cross term


def wave_packet(grid: Grid, center, direction, k: float, width: float, phase: float = 0.0) -> np.ndarray:
    """Gaussian envelope times cos(k <x - center, direction> + phase)."""
    x = grid.points() - np.asarray(center)
    env = np.exp(-np.sum(x**2, axis=1) / (2 * width**2))
    return (env * np.cos(k * (x @ np.asarray(direction, float)) + phase)).reshape(grid.shape)


def cone_filter(f: ScalarField, axis=(0.0, 1.0), angles=(25.0, 50.0), band=(20.0, 50.0), pad: int = 2) -> ScalarField:
    """Conic cutoff m(eta) = A(angle to +-axis) * B(|eta|) applied as a Fourier multiplier.

    A is 1 within ``angles[0]`` degrees of the axis (either orientation)
    and 0 beyond ``angles[1]``; B ramps from 0 at ``band[0]`` to 1 at
    ``band[1]`` (rad per unit length), keeping the multiplier away from the
    zero section where a degree-0 symbol is not smooth.
    """
    axis = np.asarray(axis, float) / np.linalg.norm(axis)
    n = [pad * s for s in f.grid.shape]
    k = [np.fft.fftfreq(m, d) * 2 * np.pi for m, d in zip(n, f.grid.spacing)]
    K0, K1 = np.meshgrid(*k, indexing="ij")
    K = np.hypot(K0, K1)
    cosang = np.abs(K0 * axis[0] + K1 * axis[1]) / np.where(K > 0, K, 1.0)
    off = np.degrees(np.arccos(np.clip(cosang, 0.0, 1.0)))
    m = smooth_ramp((angles[1] - off) / (angles[1] - angles[0]))
    if band[1] > band[0]:
        m = m * smooth_ramp((K - band[0]) / (band[1] - band[0]))
    out = np.real(np.fft.ifft2(np.fft.fft2(f.values, s=n) * m))
    return ScalarField(f.grid, out[: f.grid.shape[0], : f.grid.shape[1]])


def cross_term_residual(pairs: dict, window: CutoffWindow, probes: dict) -> list[dict]:
    """||S+^* chi S- p_k|| / ||S+^* chi S+ p_k|| for each probe p_k (dict k -> field)."""
    rows = []
    plus, minus = pairs[1], pairs[-1]
    chi = window.on(plus.surface, plus.times)
    for k, p in sorted(probes.items()):
        num = np.linalg.norm(plus.adjoint(chi * minus.forward(p).values).values)
        den = np.linalg.norm(plus.adjoint(chi * plus.forward(p).values).values)
        rows.append({"k": k, "cross": num, "direct": den, "ratio": 0.0 if den == 0 else num / den})
    return rows


def decay_exponent(rows: list[dict]) -> float:
    k = np.array([r["k"] for r in rows], float)
    r = np.array([r["ratio"] for r in rows], float)
    return float(np.polyfit(np.log(k), np.log(np.maximum(r, 1e-300)), 1)[0])


def write_residual_csv(rows: list[dict], path) -> None:
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["k", "ratio", "cross", "direct"])
        for r in rows:
            w.writerow([r["k"], r["ratio"], r["cross"], r["direct"]])
