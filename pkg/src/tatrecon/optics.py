"""Phases and amplitudes with plane-wave initial data, tabulated on a measurement surface.

For a unit direction eta and sign s, phi_s(x, t, eta) solves
phi_t^2 = c^2 |grad phi|^2 with phi(x, 0) = <x, eta> and sign(phi_t) = s.
A Lagrangian fan of strips carries phi = <y, eta> and grad phi = xi. A
surface sample covered by the fan takes the nearest strip, predicts its own
seed by Newton steps on the ray map, retraces from there and closes the
small remaining gap with a second-order Taylor expansion (the phase Hessian
comes from the variational Jacobian). Amplitudes are transported along the
same strips.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.spatial import cKDTree

from .fields import DomainGeometry, SoundSpeed
from .rays import direction_bins, integrate_batch, phase_hessian

DET_EPS = 1e-2


class ConjugatePointError(RuntimeError):
    def __init__(self, t: float, sign: int, direction: np.ndarray, where: np.ndarray):
        self.t, self.sign, self.direction, self.where = t, sign, direction, where
        super().__init__(f"ray-map Jacobian degenerates at t = {t:.4f} (sign {sign:+d}, "
                         f"direction {np.round(direction, 3).tolist()}, near x = {np.round(where, 3).tolist()})")


@dataclass(frozen=True)
class Surface:
    """Sampled measurement surface: parameter w, positions, unit outward normals and quadrature weights."""

    w: np.ndarray
    points: np.ndarray
    normals: np.ndarray
    weights: np.ndarray
    periodic: bool = False

    @property
    def tangents(self) -> np.ndarray:
        return np.stack([-self.normals[:, 1], self.normals[:, 0]], axis=-1)

    def __len__(self):
        return len(self.w)


def hyperplane_surface(x_range=(-1.0, 1.0), n: int = 101) -> Surface:
    w = np.linspace(x_range[0], x_range[1], n)
    dw = w[1] - w[0]
    weights = np.full(n, dw)
    weights[[0, -1]] *= 0.5
    pts = np.stack([w, np.zeros(n)], axis=-1)
    nrm = np.tile([0.0, 1.0], (n, 1))
    return Surface(w, pts, nrm, weights)


def circle_surface(radius: float = 0.5, center=(0.0, 0.0), n: int = 256, arc=(0.0, 2 * np.pi)) -> Surface:
    full = np.isclose(arc[1] - arc[0], 2 * np.pi)
    if full:
        w = arc[0] + (arc[1] - arc[0]) * np.arange(n) / n
        weights = np.full(n, radius * (arc[1] - arc[0]) / n)
    else:
        w = np.linspace(arc[0], arc[1], n)
        weights = np.full(n, radius * (w[1] - w[0]))
        weights[[0, -1]] *= 0.5
    nrm = np.stack([np.cos(w), np.sin(w)], axis=-1)
    return Surface(w, np.asarray(center) + radius * nrm, nrm, weights, periodic=full)


def surface_for(geometry: DomainGeometry, n: int) -> Surface:
    if geometry.kind == "halfspace":
        return hyperplane_surface(geometry.surface_range, n)
    return circle_surface(geometry.radius, geometry.center, n, geometry.gamma)


def time_axis(T: float, n: int) -> np.ndarray:
    return np.linspace(-T, T, n)


@dataclass
class PhaseAmpTable:
    """phi, grad phi and a on surface x times x direction bins for one sign."""

    sign: int
    surface: Surface
    times: np.ndarray
    dirs: np.ndarray
    phi: np.ndarray
    grad_x: np.ndarray
    phi_t: np.ndarray
    amp: np.ndarray
    valid: np.ndarray
    report: dict = field(default_factory=dict)

    @property
    def n_dirs(self) -> int:
        return len(self.dirs)

    def closed_form(self) -> np.ndarray:
        """<x, eta_hat> + s t, the constant-speed phase."""
        return (self.surface.points @ self.dirs.T)[:, None, :] + self.sign * self.times[None, :, None]

    @property
    def delta_phi(self) -> np.ndarray:
        return self.phi - self.closed_form()

    def evaluate(self, eta: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """phi and a at covectors eta = lambda * dir_l (shape (n_dirs,) of lambdas or (n_dirs, 2) vectors)."""
        eta = np.asarray(eta, float)
        lam = np.linalg.norm(eta, axis=-1) if eta.ndim == 2 else eta
        if eta.ndim == 2:
            hat = eta / lam[:, None]
            if not np.allclose(hat, self.dirs, atol=1e-9):
                raise ValueError("covectors must lie on the tabulated direction bins")
        return self.phi * lam, self.amp.copy()

    def eikonal_residual(self, c: SoundSpeed) -> np.ndarray:
        cv = c(self.surface.points)[:, None, None]
        g2 = np.sum(self.grad_x**2, axis=-1)
        return np.abs(self.phi_t**2 - cv**2 * g2) / np.maximum(g2, 1e-300)

    def export(self, path) -> None:
        from .fields import save_raw

        save_raw(path, np.stack([self.phi, self.amp, self.valid.astype(float)]),
                 axes=["field(phi, amp, valid)", "surface", "time", "direction"],
                 sign=self.sign, surface_w=self.surface.w, times=self.times, directions=self.dirs)


# ---------------------------------------------------------------------------
# Fan


@dataclass
class Fan:
    """Strips of one direction and sign recorded at the table times."""

    sign: int
    direction: np.ndarray
    seeds: np.ndarray
    times: np.ndarray
    x: np.ndarray      # (N, K, 2)
    xi: np.ndarray     # (N, K, 2)
    jac: np.ndarray    # (N, K, 4, 2)
    loga: np.ndarray   # (N, K)
    spacing: float


def _seed_region(surface: Surface, T: float, c: SoundSpeed, direction, sign, spacing, tube: bool):
    lo = surface.points.min(axis=0) - c.c_max * T - 2 * spacing
    hi = surface.points.max(axis=0) + c.c_max * T + 2 * spacing
    axes = [np.arange(lo[a], hi[a] + spacing, spacing) for a in range(2)]
    Y = np.stack([m.ravel() for m in np.meshgrid(*axes, indexing="ij")], axis=-1)
    if tube and not c.is_constant:
        # keep seeds whose straight track over [-T, T] passes near a bump
        keep = np.zeros(len(Y), bool)
        for b in c.bumps:
            d = Y - np.asarray(b.center)
            along = d @ direction
            perp = np.abs(d @ np.array([-direction[1], direction[0]]))
            reach = c.c_max * T + b.radius
            keep |= (perp < b.radius + 0.1 + 3 * spacing) & (np.abs(along) < reach)
        Y = Y[keep]
    return Y


def trace_fan(c: SoundSpeed, direction, sign: int, times: np.ndarray, surface: Surface,
              spacing: float, dt: float, tube: bool = True) -> Fan:
    direction = np.asarray(direction, float)
    Y = _seed_region(surface, float(np.max(np.abs(times))), c, direction, sign, spacing, tube)
    N, K = len(Y), len(times)
    x = np.zeros((N, K, 2))
    xi = np.zeros((N, K, 2))
    jac = np.zeros((N, K, 4, 2))
    loga = np.zeros((N, K))
    for part in (times >= 0, times < 0):
        if not np.any(part) or N == 0:
            continue
        ts = times[part]
        order = np.argsort(np.abs(ts))
        st, _ = integrate_batch(c, Y, direction, sign, ts[order], dt, amplitude=True)
        idx = np.nonzero(part)[0][order]
        x[:, idx] = st.x
        xi[:, idx] = st.xi
        jac[:, idx] = st.jac
        loga[:, idx] = st.loga
    return Fan(sign, direction, Y, times, x, xi, jac, loga, spacing)


def _check_fan(fan: Fan, eps: float = DET_EPS) -> None:
    if len(fan.seeds) == 0:
        return
    det = np.linalg.det(fan.jac[..., :2, :2])
    bad = det < eps
    if np.any(bad):
        k = np.nonzero(bad.any(axis=0))[0]
        k = k[np.argmin(np.abs(fan.times[k]))]
        r = np.nonzero(bad[:, k])[0][0]
        raise ConjugatePointError(float(fan.times[k]), fan.sign, fan.direction, fan.x[r, k])


def _polish(fan: Fan, k: int, targets: np.ndarray, c: SoundSpeed, radius: float, dt: float,
            max_newton: int = 3, newton_tol: float = 1e-6):
    """Values at (targets, times[k]) from the fan, refined by retracing from the predicted seeds.

    The nearest fan strip within ``radius`` predicts the seed by one Newton
    step on the ray map; the strip from that seed is traced and its landing
    point is connected to the target by the second-order Taylor expansion.
    """
    n = len(targets)
    out_phi, out_grad = np.zeros(n), np.zeros((n, 2))
    out_tau, out_loga = np.zeros(n), np.zeros(n)
    valid = np.zeros(n, bool)
    if len(fan.seeds) == 0:
        return out_phi, out_grad, out_tau, out_loga, valid
    t = float(fan.times[k])
    dist, nb = cKDTree(fan.x[:, k]).query(targets)
    valid = dist <= radius
    if not valid.any():
        return out_phi, out_grad, out_tau, out_loga, valid
    nb = nb[valid]
    tg = targets[valid]
    Jx = fan.jac[nb, k, :2, :2]
    y = fan.seeds[nb] + np.linalg.solve(Jx, (tg - fan.x[nb, k])[..., None])[..., 0]
    if t == 0.0:
        out_phi[valid] = tg @ fan.direction
        out_grad[valid] = fan.direction
        out_tau[valid] = fan.sign * c(tg)
        return out_phi, out_grad, out_tau, out_loga, valid
    st, _ = integrate_batch(c, y, fan.direction, fan.sign, [t], dt, amplitude=True)
    st = st.take((slice(None), 0))
    for _ in range(max_newton - 1):
        far = np.linalg.norm(tg - st.x, axis=1) > newton_tol
        if not far.any():
            break
        y[far] += np.linalg.solve(st.jac[far, :2, :2], (tg[far] - st.x[far])[..., None])[..., 0]
        again, _ = integrate_batch(c, y[far], fan.direction, fan.sign, [t], dt, amplitude=True)
        st.put(far, again.take((slice(None), 0)))
    H = phase_hessian(st.jac)
    d = tg - st.x
    Hd = np.einsum("nij,nj->ni", H, d)
    cy, gy, _ = c.evaluate(y)
    grad_tau = np.linalg.solve(np.swapaxes(st.jac[:, :2, :2], -1, -2), fan.sign * gy[..., None])[..., 0]
    out_phi[valid] = y @ fan.direction + np.sum(st.xi * d, axis=1) + 0.5 * np.sum(d * Hd, axis=1)
    out_grad[valid] = st.xi + Hd
    out_tau[valid] = fan.sign * cy + np.sum(grad_tau * d, axis=1)
    out_loga[valid] = st.loga
    return out_phi, out_grad, out_tau, out_loga, valid


def build_amplitude(fan: Fan, surface: Surface, c: SoundSpeed, radius: float, dt: float) -> np.ndarray:
    """Leading amplitude a(x', t) of one direction bin from the transported log a of the fan's strips.

    The transport law along each strip is integrated together with the
    variational system (see :mod:`tatrecon.rays`); surface points outside
    the fan keep the constant-speed value 1.
    """
    out = np.ones((len(surface), len(fan.times)))
    for k in range(len(fan.times)):
        *_, loga, valid = _polish(fan, k, surface.points, c, radius, dt)
        out[valid, k] = np.exp(loga[valid])
    return out


def build_phase_tables(c: SoundSpeed, surface: Surface, n_dirs: int = 64, T: float = 1.0, n_times: int = 41,
                       fan_spacing: float = 0.03, dt: float = 0.01, full_fan: bool = False,
                       interp_radius: float = 1.5) -> dict:
    """Both signs at once: {+1: table, -1: table}.

    Only half of the directions are traced; the rest follow from the exact
    symmetries phi_-(x, t, e) = phi_+(x, -t, e) and phi_+(x, t, -e) = -phi_+(x, -t, e)
    (the time axis is symmetric). With constant speed and ``full_fan=False``
    the closed forms are used. Raises :class:`ConjugatePointError` when a
    strip of a fan degenerates.
    """
    if n_dirs % 2:
        raise ValueError("n_dirs must be even")
    times = time_axis(T, n_times)
    dirs = direction_bins(n_dirs)
    S, K = len(surface), len(times)
    tabs = {}
    for sign in (1, -1):
        tab = PhaseAmpTable(sign, surface, times, dirs, np.zeros((S, K, n_dirs)), np.zeros((S, K, n_dirs, 2)),
                            np.zeros((S, K, n_dirs)), np.ones((S, K, n_dirs)), np.ones((S, K, n_dirs), bool))
        tab.phi[:] = tab.closed_form()
        tab.grad_x[:] = dirs[None, None, :, :]
        tab.phi_t[:] = sign * c(surface.points)[:, None, None]
        tabs[sign] = tab
    if c.is_constant and not full_fan:
        for tab in tabs.values():
            tab.report.update(fan="closed-form", coverage=1.0)
            _finish_report(tab, c)
        return tabs

    plus, minus = tabs[1], tabs[-1]
    radius = interp_radius * fan_spacing
    half = n_dirs // 2
    rev = slice(None, None, -1)
    for l in range(half):
        fan = trace_fan(c, dirs[l], 1, times, surface, fan_spacing, dt, tube=not full_fan)
        _check_fan(fan)
        for k in range(K):
            phi, grad, tau, loga, valid = _polish(fan, k, surface.points, c, radius, dt)
            plus.phi[valid, k, l] = phi[valid]
            plus.grad_x[valid, k, l] = grad[valid]
            plus.phi_t[valid, k, l] = tau[valid]
            plus.amp[valid, k, l] = np.exp(loga[valid])
            if full_fan:
                plus.valid[:, k, l] = valid
        m = l + half
        plus.phi[:, :, m] = -plus.phi[:, rev, l]
        plus.grad_x[:, :, m] = -plus.grad_x[:, rev, l]
        plus.phi_t[:, :, m] = plus.phi_t[:, rev, l]
        plus.amp[:, :, m] = plus.amp[:, rev, l]
        plus.valid[:, :, m] = plus.valid[:, rev, l]
    minus.phi[:] = plus.phi[:, rev]
    minus.grad_x[:] = plus.grad_x[:, rev]
    minus.phi_t[:] = -plus.phi_t[:, rev]
    minus.amp[:] = plus.amp[:, rev]
    minus.valid[:] = plus.valid[:, rev]
    for tab in tabs.values():
        tab.report.update(fan="full" if full_fan else "tube", coverage=float(tab.valid.mean()),
                          fan_spacing=fan_spacing)
        _finish_report(tab, c)
    return tabs


def build_phase_table(sign: int, c: SoundSpeed, surface: Surface, n_dirs: int = 64, T: float = 1.0,
                      n_times: int = 41, **kw) -> PhaseAmpTable:
    """Tabulate phi_sign and a_sign on surface x times x direction bins (see :func:`build_phase_tables`)."""
    return build_phase_tables(c, surface, n_dirs, T, n_times, **kw)[sign]


def _finish_report(table: PhaseAmpTable, c: SoundSpeed) -> None:
    v = table.valid
    gnorm = np.linalg.norm(table.grad_x, axis=-1)
    table.report["grad_lower_bound"] = float(gnorm[v].min()) if v.any() else 0.0
    table.report["eikonal_residual"] = float(table.eikonal_residual(c)[v].max()) if v.any() else 0.0
    table.report["sign_split"] = bool(np.all(table.sign * table.phi_t[v] > 0))
    if table.report["grad_lower_bound"] < 0.1:
        raise ValueError(f"phase gradient lower bound {table.report['grad_lower_bound']:.3g} below 0.1")


# ---------------------------------------------------------------------------
# Pointwise evaluation by shooting


def shoot(c: SoundSpeed, targets: np.ndarray, t: float, direction, sign: int, dt: float = 2e-3,
          iters: int = 6) -> dict:
    """phi, grad phi, phi_t, a and Hess phi at (targets, t) by Newton on the seed position.

    Each Newton step retraces the strips from the corrected seeds, so the
    result is limited only by the ODE step and the conjugate-point-free
    assumption.
    """
    targets = np.atleast_2d(np.asarray(targets, float))
    direction = np.asarray(direction, float)
    y = targets + sign * t * direction[None, :]
    for _ in range(iters + 1):
        if t == 0:
            st = None
            break
        states, _ = integrate_batch(c, y, direction, sign, [t], dt, amplitude=True)
        st = states.take((slice(None), 0))
        res = st.x - targets
        step = np.linalg.solve(st.jac[:, :2, :2], res[..., None])[..., 0]
        y = y - step
    if t == 0:
        n = len(targets)
        return {"phi": targets @ direction, "grad": np.tile(direction, (n, 1)), "phi_t": sign * c(targets),
                "amp": np.ones(n), "hess": np.zeros((n, 2, 2)), "seed": targets, "residual": np.zeros(n)}
    states, _ = integrate_batch(c, y, direction, sign, [t], dt, amplitude=True)
    st = states.take((slice(None), 0))
    return {
        "phi": y @ direction,
        "grad": st.xi,
        "phi_t": sign * c(y) * np.linalg.norm(direction),
        "amp": np.exp(st.loga),
        "hess": phase_hessian(st.jac),
        "seed": y,
        "residual": np.linalg.norm(st.x - targets, axis=-1),
    }


# ---------------------------------------------------------------------------
# Interpolation onto quadrature grids


def _spline_matrix(x_tab: np.ndarray, x_new: np.ndarray, periodic: bool, period: float | None = None) -> np.ndarray:
    """Dense matrix M with M @ values_on_x_tab = cubic spline at x_new."""
    n = len(x_tab)
    if periodic:
        xt = np.append(x_tab, x_tab[0] + period)
        eye = np.vstack([np.eye(n), np.eye(n)[:1]])
        sp = CubicSpline(xt, eye, bc_type="periodic", axis=0)
        xn = x_tab[0] + np.mod(x_new - x_tab[0], period)
        return sp(xn)
    sp = CubicSpline(x_tab, np.eye(n), axis=0)
    return sp(np.clip(x_new, x_tab[0], x_tab[-1]))


def trig_matrix(n_bins: int, angles: np.ndarray) -> np.ndarray:
    """Trigonometric interpolation weights from n uniform bins (angle 2 pi l/n) to ``angles``."""
    d = angles[None, :] - 2 * np.pi * np.arange(n_bins)[:, None] / n_bins
    n = n_bins
    # periodic Dirichlet kernel for even n (Nyquist term split symmetrically)
    with np.errstate(divide="ignore", invalid="ignore"):
        kern = np.sin(n * d / 2) / (n * np.tan(d / 2))
    kern = np.where(np.abs(np.sin(d / 2)) < 1e-14, 1.0, kern)
    return kern


@dataclass
class TableSampler:
    """Interpolates a table's phase deviation and amplitude onto a (surface, time) quadrature grid."""

    table: PhaseAmpTable
    surface: Surface
    times: np.ndarray

    def __post_init__(self):
        tab = self.table
        period = 2 * np.pi if tab.surface.periodic else None
        if len(tab.surface) == len(self.surface) and np.allclose(tab.surface.w, self.surface.w):
            Ms = np.eye(len(tab.surface))
        else:
            Ms = _spline_matrix(tab.surface.w, self.surface.w, tab.surface.periodic, period)
        if len(tab.times) == len(self.times) and np.allclose(tab.times, self.times):
            Mt = np.eye(len(tab.times))
        else:
            Mt = _spline_matrix(tab.times, self.times, False)
        dphi = np.einsum("as,skl,bk->abl", Ms, tab.delta_phi, Mt, optimize=True)
        amp = np.einsum("as,skl,bk->abl", Ms, tab.amp, Mt, optimize=True)
        self.trivial = bool(np.all(tab.delta_phi == 0) and np.all(tab.amp == 1))
        self._dphi = dphi.reshape(-1, tab.n_dirs)
        self._amp = amp.reshape(-1, tab.n_dirs)

    def at(self, angles: np.ndarray) -> tuple[np.ndarray, np.ndarray | None]:
        """(phi, a) of shape (len(angles), surface*time) at unit directions with the given angles.

        ``a`` is None when the table is the constant-speed one (a == 1).
        """
        e = np.stack([np.cos(angles), np.sin(angles)], axis=-1)
        closed = (e @ self.surface.points.T)[:, :, None] + self.table.sign * self.times[None, None, :]
        closed = closed.reshape(len(angles), -1)
        if self.trivial:
            return closed, None
        W = trig_matrix(self.table.n_dirs, angles)
        return closed + W.T @ self._dphi.T, W.T @ self._amp.T
