"""Bicharacteristic flow of p = tau^2 - c^2 |xi|^2, boundary crossings and visibility.

On the zero level set the (1/2tau)-scaled Hamiltonian flow is the flow of
H = -s c(x)|xi| with s = sign(tau):

    dx/dt  = -s c(x) xi/|xi|,      dxi/dt = s |xi| grad c(x),

so t is physical time and |dx/dt| = c. The phase with plane-wave data
<x, eta> is constant along each strip and equals <y, eta>; its spatial
gradient at the strip is xi(t). Rays are integrated in batches with a
fixed RK4 step inside the support of c - 1 and straight free-flight steps
outside it.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .fields import DomainGeometry, Grid, SoundSpeed

GLANCING_THRESHOLD = 0.05
# free-flight step cap while the amplitude is transported (its rate is not constant in flight)
FREE_FLIGHT_CAP = 0.05


def default_step(grid: Grid, c: SoundSpeed) -> float:
    return min(grid.spacing) / (4.0 * c.c_max)


def direction_bins(n_dirs: int) -> np.ndarray:
    """Centers of n uniform direction bins on the circle, angle 2 pi l / n."""
    ang = 2 * np.pi * np.arange(n_dirs) / n_dirs
    return np.stack([np.cos(ang), np.sin(ang)], axis=-1)


# ---------------------------------------------------------------------------
# Flow


@dataclass
class RayState:
    """Batch of ray states. ``jac`` holds d(x, xi)/d(seed columns), shape (N, 4, k)."""

    x: np.ndarray
    xi: np.ndarray
    jac: np.ndarray | None = None
    loga: np.ndarray | None = None

    def copy(self) -> "RayState":
        return RayState(self.x.copy(), self.xi.copy(),
                        None if self.jac is None else self.jac.copy(),
                        None if self.loga is None else self.loga.copy())

    def take(self, idx) -> "RayState":
        return RayState(self.x[idx], self.xi[idx],
                        None if self.jac is None else self.jac[idx],
                        None if self.loga is None else self.loga[idx])

    def put(self, idx, other: "RayState") -> None:
        self.x[idx] = other.x
        self.xi[idx] = other.xi
        if self.jac is not None:
            self.jac[idx] = other.jac
        if self.loga is not None:
            self.loga[idx] = other.loga


def phase_hessian(jac: np.ndarray) -> np.ndarray:
    """Spatial Hessian of the phase, (d xi/d y)(d x/d y)^-1, from the seed-column Jacobian."""
    Jx = jac[:, :2, :2]
    Jxi = jac[:, 2:, :2]
    return np.linalg.solve(np.swapaxes(Jx, 1, 2), np.swapaxes(Jxi, 1, 2)).swapaxes(1, 2)


def _rhs(c: SoundSpeed, st: RayState, s):
    cv, g, Hc = c.evaluate(st.x)
    nx = np.linalg.norm(st.xi, axis=-1)
    xh = st.xi / nx[:, None]
    s = np.broadcast_to(s, cv.shape)
    dx = -(s * cv)[:, None] * xh
    dxi = (s * nx)[:, None] * g
    djac = dloga = None
    if st.jac is not None:
        n = len(cv)
        A = np.zeros((n, 4, 4))
        A[:, :2, :2] = -s[:, None, None] * xh[:, :, None] * g[:, None, :]
        A[:, :2, 2:] = -(s * cv / nx)[:, None, None] * (np.eye(2) - xh[:, :, None] * xh[:, None, :])
        A[:, 2:, :2] = (s * nx)[:, None, None] * Hc
        A[:, 2:, 2:] = s[:, None, None] * g[:, :, None] * xh[:, None, :]
        djac = A @ st.jac
        if st.loga is not None:
            # transport: 2 phi_t a_t - 2 c^2 grad phi . grad a + (phi_tt - c^2 lap phi) a = 0
            Hphi = phase_hessian(st.jac)
            grad_phit = s[:, None] * (nx[:, None] * g + cv[:, None] * np.einsum("nij,nj->ni", Hphi, xh))
            phi_tt = -np.einsum("ni,ni->n", dx, grad_phit)
            lap = np.trace(Hphi, axis1=1, axis2=2)
            tau = s * cv * nx
            dloga = -(phi_tt - cv**2 * lap) / (2.0 * tau)
    return dx, dxi, djac, dloga


def _axpy(st: RayState, h, k) -> RayState:
    dx, dxi, djac, dloga = k
    hh = np.asarray(h)
    h1 = hh[:, None] if hh.ndim else hh
    out = RayState(st.x + h1 * dx, st.xi + h1 * dxi)
    if st.jac is not None:
        out.jac = st.jac + (hh[:, None, None] if hh.ndim else hh) * djac
    if st.loga is not None:
        out.loga = st.loga + hh * dloga
    return out


def rk4_step(c: SoundSpeed, st: RayState, s, h) -> RayState:
    """One classical RK4 step of (per-ray) length h; h may be negative."""
    k1 = _rhs(c, st, s)
    k2 = _rhs(c, _axpy(st, np.asarray(h) / 2, k1), s)
    k3 = _rhs(c, _axpy(st, np.asarray(h) / 2, k2), s)
    k4 = _rhs(c, _axpy(st, h, k3), s)
    comb = tuple(None if a is None else (a + 2 * b + 2 * cc + d) / 6.0 for a, b, cc, d in zip(k1, k2, k3, k4))
    return _axpy(st, h, comb)


def initial_state(y, eta, columns: str | None = "seed", amplitude: bool = False) -> RayState:
    """Seed states. columns: None (no Jacobian), "seed" (d/dy only) or "full" (d/d(y, eta))."""
    y = np.atleast_2d(np.asarray(y, float)).copy()
    eta = np.atleast_2d(np.asarray(eta, float)).copy()
    eta = np.broadcast_to(eta, y.shape).copy()
    n = len(y)
    jac = None
    if columns == "seed":
        jac = np.zeros((n, 4, 2))
        jac[:, 0, 0] = jac[:, 1, 1] = 1.0
    elif columns == "full":
        jac = np.tile(np.eye(4), (n, 1, 1))
    loga = np.zeros(n) if (amplitude and jac is not None) else None
    return RayState(y, eta, jac, loga)


@dataclass
class CrossingEvents:
    """Boundary crossings found during propagation (one row per event)."""

    ray: np.ndarray
    t: np.ndarray
    state: RayState

    @classmethod
    def empty(cls, with_jac: bool, k: int, with_amp: bool) -> "CrossingEvents":
        st = RayState(np.zeros((0, 2)), np.zeros((0, 2)),
                      np.zeros((0, 4, k)) if with_jac else None,
                      np.zeros(0) if with_amp else None)
        return cls(np.zeros(0, int), np.zeros(0), st)

    def extend(self, ray, t, st: RayState) -> "CrossingEvents":
        cat = lambda a, b: None if a is None else np.concatenate([a, b])
        return CrossingEvents(
            np.concatenate([self.ray, ray]), np.concatenate([self.t, t]),
            RayState(cat(self.state.x, st.x), cat(self.state.xi, st.xi),
                     cat(self.state.jac, st.jac), cat(self.state.loga, st.loga)))


def _bump_array(c: SoundSpeed) -> np.ndarray:
    if c.is_constant:
        return np.zeros((0, 4))
    return np.array([[b.center[0], b.center[1], b.radius, b.amplitude] for b in c.bumps], float)


def _geometry_code(geometry: DomainGeometry | None):
    if geometry is None:
        return 0, 0.0, 0.0, 0.0
    if geometry.kind == "halfspace":
        return 1, 0.0, 0.0, 0.0
    return 2, float(geometry.center[0]), float(geometry.center[1]), float(geometry.radius)


def _unpack(z: np.ndarray, with_jac: bool, with_amp: bool) -> RayState:
    return RayState(z[..., 0:2].copy(), z[..., 2:4].copy(),
                    z[..., 4:12].reshape(z.shape[:-1] + (4, 2)).copy() if with_jac else None,
                    z[..., 12].copy() if with_amp else None)


def integrate_batch(c: SoundSpeed, y, eta, sign, times, dt: float, geometry: DomainGeometry | None = None,
                    jacobian: bool = True, amplitude: bool = False, record: bool = True):
    """Compiled batch integration from t = 0 through monotone ``times``.

    Returns (states, crossings): ``states`` is a RayState with a leading
    (ray, time) shape (or None); ``crossings`` a :class:`CrossingEvents`.
    """
    from . import _kernels
    from .fields import BUMP_POWER

    y = np.ascontiguousarray(np.atleast_2d(np.asarray(y, float)))
    eta = np.ascontiguousarray(np.broadcast_to(np.atleast_2d(np.asarray(eta, float)), y.shape))
    S = np.ascontiguousarray(np.broadcast_to(np.asarray(sign, float), (len(y),)))
    times = np.ascontiguousarray(np.atleast_1d(np.asarray(times, float)))
    amplitude = amplitude and jacobian
    code = _geometry_code(geometry)
    rec, cross, ncross = _kernels.integrate_batch(
        y, eta, S, times, float(dt), _bump_array(c), float(BUMP_POWER), jacobian, amplitude,
        code[0], code[1], code[2], code[3], FREE_FLIGHT_CAP, record)
    states = _unpack(rec, jacobian, amplitude) if record else None
    ray, slot = np.nonzero(np.arange(cross.shape[1])[None, :] < ncross[:, None])
    ev = cross[ray, slot]
    crossings = CrossingEvents(ray, ev[:, 0], _unpack(ev[:, 1:], jacobian, amplitude))
    return states, crossings


# ---------------------------------------------------------------------------
# Single strips


@dataclass
class Crossing:
    point: np.ndarray
    w: float
    t: float
    xi: np.ndarray
    tau: float
    xi_normal: float
    glancing: bool


@dataclass
class BicharStrip:
    sign: int
    seed: tuple[np.ndarray, np.ndarray]
    t: np.ndarray
    x: np.ndarray
    xi: np.ndarray
    tau: float
    phase: float
    jac: np.ndarray
    loga: np.ndarray
    crossings: list[Crossing] = field(default_factory=list)
    truncated: bool = False

    def hamiltonian(self, c: SoundSpeed) -> np.ndarray:
        cv = c(self.x)
        return self.tau**2 - cv**2 * np.sum(self.xi**2, axis=-1)

    def speed(self) -> np.ndarray:
        return np.linalg.norm(np.gradient(self.x, self.t, axis=0), axis=-1)

    def to_csv(self, path: str | Path) -> None:
        det = np.linalg.det(self.jac[:, :2, :2])
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "x1", "x2", "xi1", "xi2", "tau", "det_jac_x"])
            for k in range(len(self.t)):
                w.writerow([self.t[k], *self.x[k], *self.xi[k], self.tau, det[k]])


def _crossing_record(geometry: DomainGeometry, x, xi, t, sign, c_val) -> Crossing:
    nrm = geometry.boundary_gradient(x[None])[0]
    xin = float(np.dot(xi, nrm) / np.linalg.norm(xi))
    return Crossing(x.copy(), float(geometry.surface_parameter(x[None])[0]), float(t), xi.copy(),
                    float(sign * c_val * np.linalg.norm(xi)), xin, abs(xin) < GLANCING_THRESHOLD)


def trace_bichar(seed, sign: int, c: SoundSpeed, t_span=(0.0, 1.0), step: float | None = None,
                 geometry: DomainGeometry | None = None, box=None) -> BicharStrip:
    """Trace the bicharacteristic from (y, eta_hat) with tau of the given sign.

    Samples are taken every ``step`` (fixed RK4, no free flight) from t = 0
    towards both ends of ``t_span``; the strip is returned in time order.
    """
    y, eta = (np.asarray(v, float) for v in seed)
    if not np.isclose(np.linalg.norm(eta), 1.0):
        raise ValueError("seed covector must be a unit vector")
    step = step if step is not None else 0.25 * 1e-2
    pieces = []
    crossings: list[Crossing] = []
    truncated = False
    for end in (t_span[0], t_span[1]):
        if end == 0:
            continue
        n = int(np.ceil(abs(end) / step))
        ts = np.linspace(0, end, n + 1)
        st = initial_state(y, eta, columns="full", amplitude=True)
        s = np.array([float(sign)])
        rec = [(0.0, st.copy())]
        for k in range(1, n + 1):
            new = rk4_step(c, st, s, ts[k] - ts[k - 1])
            if geometry is not None:
                # sign change of the defining function, refined by bisection
                b0 = geometry.boundary_function(st.x)[0]
                b1 = geometry.boundary_function(new.x)[0]
                if b0 * b1 < 0:
                    lo, hi = 0.0, 1.0
                    for _ in range(50):
                        mid = 0.5 * (lo + hi)
                        q = rk4_step(c, st, s, mid * (ts[k] - ts[k - 1]))
                        if np.sign(geometry.boundary_function(q.x)[0]) == np.sign(b0):
                            lo = mid
                        else:
                            hi = mid
                    fr = 0.5 * (lo + hi)
                    q = rk4_step(c, st, s, fr * (ts[k] - ts[k - 1]))
                    crossings.append(_crossing_record(geometry, q.x[0], q.xi[0], ts[k - 1] + fr * (ts[k] - ts[k - 1]),
                                                      sign, c(q.x)[0]))
            st = new
            rec.append((ts[k], st.copy()))
            if box is not None and any(not (lo <= st.x[0, a] <= hi) for a, (lo, hi) in enumerate(box)):
                truncated = True
                break
        if end < 0:
            rec = rec[::-1]
        pieces.append(rec)
    if len(pieces) == 2:
        samples = pieces[0][:-1] + pieces[1]
    else:
        samples = pieces[0] if pieces else [(0.0, initial_state(y, eta, "full", True))]
    t = np.array([r[0] for r in samples])
    X = np.concatenate([r[1].x for r in samples])
    XI = np.concatenate([r[1].xi for r in samples])
    J = np.concatenate([r[1].jac for r in samples])
    LA = np.concatenate([r[1].loga for r in samples])
    tau = float(sign * c(y[None])[0] * np.linalg.norm(eta))
    crossings.sort(key=lambda cr: abs(cr.t))
    return BicharStrip(int(np.sign(sign)), (y, eta), t, X, XI, tau, float(y @ eta), J, LA, crossings, truncated)


def conjugate_point_monitor(strip: BicharStrip, eps: float = 1e-2) -> float | None:
    """Earliest |t| where det(dx/dy) drops below eps or changes sign; None if never."""
    det = np.linalg.det(strip.jac[:, :2, :2])
    order = np.argsort(np.abs(strip.t), kind="stable")
    for k in order:
        if det[k] < eps:
            return float(strip.t[k])
    return None


def focusing_time(c: SoundSpeed, y, eta, sign, T: float, dt: float, eps: float = 1e-2) -> np.ndarray:
    """Batch conjugate-point monitor over t in [-T, T]; returns the earliest |t| (inf if none)."""
    y = np.atleast_2d(y)
    first = np.full(len(y), np.inf)
    n = max(int(np.ceil(T / dt)), 1)
    for direction in (1.0, -1.0):
        times = direction * np.linspace(0, T, n + 1)[1:]
        states, _ = integrate_batch(c, y, eta, sign, times, dt)
        det = np.linalg.det(states.jac[:, :, :2, :2])
        bad = det < eps
        hit = bad.any(axis=1)
        k = np.argmax(bad, axis=1)
        first = np.where(hit, np.minimum(first, np.abs(times[k])), first)
    return first


# ---------------------------------------------------------------------------
# Crossings and visibility


@dataclass
class EndpointBatch:
    """All crossings of the measurement surface for a batch of seeds within [-T, T]."""

    ray: np.ndarray
    t: np.ndarray
    w: np.ndarray
    point: np.ndarray
    xi: np.ndarray
    tau: np.ndarray
    xi_normal: np.ndarray
    amplitude: np.ndarray | None
    density: np.ndarray | None

    @property
    def glancing(self) -> np.ndarray:
        return np.abs(self.xi_normal) < GLANCING_THRESHOLD


def trace_crossings(c: SoundSpeed, geometry: DomainGeometry, y, eta, sign, T: float | None = None,
                    dt: float = 2e-3, amplitude: bool = False, jacobian: bool = False,
                    directions=(1.0, -1.0)) -> EndpointBatch:
    """Propagate a batch over [-T, T] and collect every crossing of the surface.

    With ``jacobian`` the density |det d(w, t_cross)/d y| of the crossing map is
    returned (w is arc length on the circle, x' on the hyperplane); with
    ``amplitude`` the transported amplitude a at the crossing.
    """
    T = geometry.T_max if T is None else T
    y = np.atleast_2d(np.asarray(y, float))
    eta = np.broadcast_to(np.atleast_2d(np.asarray(eta, float)), y.shape)
    sign = np.broadcast_to(np.asarray(sign, float), (len(y),))
    use_jac = amplitude or jacobian
    events = None
    for direction in directions:
        if T == 0:
            continue
        _, ev = integrate_batch(c, y, eta, sign, [direction * T], dt, geometry=geometry,
                                jacobian=use_jac, amplitude=amplitude, record=False)
        events = ev if events is None else events.extend(ev.ray, ev.t, ev.state)
    if events is None:
        k = 2
        events = CrossingEvents.empty(use_jac, k, amplitude)
    x = events.state.x
    xi = events.state.xi
    ray = events.ray
    cv, _, _ = c.evaluate(x) if len(x) else (np.zeros(0), None, None)
    nrm = geometry.boundary_gradient(x) if len(x) else np.zeros((0, 2))
    xin = np.sum(xi * nrm, axis=-1) / np.linalg.norm(xi, axis=-1) if len(x) else np.zeros(0)
    tau = sign[ray] * cv * np.linalg.norm(xi, axis=-1) if len(x) else np.zeros(0)
    amp = np.exp(events.state.loga) if amplitude else None
    dens = None
    if jacobian and len(x):
        Jx = events.state.jac[:, :2, :2]
        vel = -(sign[ray] * cv)[:, None] * xi / np.linalg.norm(xi, axis=-1, keepdims=True)
        gradB = nrm
        dt_dy = -np.einsum("ni,nij->nj", gradB, Jx) / np.sum(gradB * vel, axis=-1)[:, None]
        dx_dy = Jx + vel[:, :, None] * dt_dy[:, None, :]
        if geometry.kind == "halfspace":
            dw_dy = dx_dy[:, 0, :]
        else:
            tang = np.stack([-nrm[:, 1], nrm[:, 0]], axis=-1)
            dw_dy = np.einsum("ni,nij->nj", tang, dx_dy)  # arc length
        dens = np.abs(dw_dy[:, 0] * dt_dy[:, 1] - dw_dy[:, 1] * dt_dy[:, 0])
    elif jacobian:
        dens = np.zeros(0)
    w = geometry.surface_parameter(x) if len(x) else np.zeros(0)
    return EndpointBatch(ray, events.t, w, x, xi, tau, xin, amp, dens)


def endpoint_map(seed, sign: int, c: SoundSpeed, geometry: DomainGeometry, dt: float = 2e-3,
                 time_direction: float = 1.0):
    """First crossing of the measurement surface for t in [0, T] (or [-T, 0]).

    Returns a dict with the boundary point, surface parameter, crossing time,
    tangential covector, normal component and tau, or None. Glancing
    crossings are returned with ``glancing=True``.
    """
    y, eta = (np.asarray(v, float) for v in seed)
    ev = trace_crossings(c, geometry, y[None], eta[None], sign, dt=dt, directions=(time_direction,))
    if len(ev.t) == 0:
        return None
    k = int(np.argmin(np.abs(ev.t)))
    nrm = geometry.boundary_gradient(ev.point[k][None])[0]
    tang = np.array([-nrm[1], nrm[0]]) if geometry.kind == "convex" else np.array([1.0, 0.0])
    return {
        "point": ev.point[k], "w": float(ev.w[k]), "t": float(ev.t[k]),
        "xi_tangential": float(ev.xi[k] @ tang), "xi_normal": float(ev.xi[k] @ nrm),
        "tau": float(ev.tau[k]), "glancing": bool(ev.glancing[k]),
        "in_measured_set": bool(geometry.in_measured_set(ev.w[k:k + 1])[0]),
    }


@dataclass(frozen=True)
class ConeMask:
    """Phase-space weights on (grid node, direction bin)."""

    grid: Grid
    n_dirs: int
    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, float).reshape(self.grid.shape + (self.n_dirs,))
        if np.any(w < -1e-15) or np.any(w > 1 + 1e-12):
            raise ValueError("cone weights must lie in [0, 1]")
        object.__setattr__(self, "weights", np.clip(w, 0.0, 1.0))

    @property
    def directions(self) -> np.ndarray:
        return direction_bins(self.n_dirs)

    def tapered(self, margin_bins: int) -> "ConeMask":
        """Inward angular taper: weight = sin^2 ramp of the bin distance to the nearest zero bin."""
        if margin_bins <= 0:
            return self
        w = self.weights
        dist = np.where(w > 0, np.inf, 0.0)
        for k in range(1, margin_bins + 1):
            near = (np.roll(w, k, axis=-1) <= 0) | (np.roll(w, -k, axis=-1) <= 0)
            dist = np.where((w > 0) & near & np.isinf(dist), k, dist)
        ramp = np.where(np.isinf(dist), 1.0, np.sin(0.5 * np.pi * dist / (margin_bins + 1)) ** 2)
        return ConeMask(self.grid, self.n_dirs, w * ramp)


def _smoothstep(x):
    x = np.clip(x, 0.0, 1.0)
    return x * x * (3 - 2 * x)


def crossing_weight(ev: EndpointBatch, geometry: DomainGeometry, inner: bool = True) -> np.ndarray:
    """1 for non-glancing crossings inside the measured patch within |t| <= T, else 0."""
    ok = (~ev.glancing) & geometry.in_measured_set(ev.w, inner=inner) & (np.abs(ev.t) <= geometry.T_max)
    return ok.astype(float)


def classify_visibility(grid: Grid, n_dirs: int, c: SoundSpeed, geometry: DomainGeometry,
                        signs=(1, -1), dt: float | None = None, taper_bins: int = 0,
                        inner: bool = True) -> ConeMask:
    """Visible set: (y, eta_hat) whose gamma^+ or gamma^- meets the measured set non-glancingly."""
    dirs = direction_bins(n_dirs)
    pts = grid.points()
    vis = np.zeros((len(pts), n_dirs))
    if geometry.T_max > 0:
        dt = dt if dt is not None else default_step(grid, c)
        Y = np.repeat(pts, n_dirs, axis=0)
        E = np.tile(dirs, (len(pts), 1))
        flat = vis.reshape(-1)
        for s in signs:
            ev = trace_crossings(c, geometry, Y, E, s, dt=dt)
            w = crossing_weight(ev, geometry, inner=inner)
            np.maximum.at(flat, ev.ray, w)
        vis = flat.reshape(len(pts), n_dirs)
    mask = ConeMask(grid, n_dirs, vis)
    return mask.tapered(taper_bins)


def check_endpoint_injectivity(seeds, directions, sign: int, c: SoundSpeed, geometry: DomainGeometry,
                               margin: float = 1e-6, dt: float = 2e-3) -> dict:
    """Check that distinct (seed, direction) pairs give distinct endpoint data (w, t, xi', tau)."""
    seeds = np.atleast_2d(np.asarray(seeds, float))
    directions = np.atleast_2d(np.asarray(directions, float))
    Y = np.repeat(seeds, len(directions), axis=0)
    E = np.tile(directions, (len(seeds), 1))
    ev = trace_crossings(c, geometry, Y, E, sign, dt=dt, directions=(1.0,))
    keep = ~ev.glancing
    nrm = geometry.boundary_gradient(ev.point) if len(ev.t) else np.zeros((0, 2))
    tang = np.stack([-nrm[:, 1], nrm[:, 0]], axis=-1) if geometry.kind == "convex" else np.tile([1.0, 0.0], (len(ev.t), 1))
    data = np.stack([ev.w, ev.t, np.sum(ev.xi * tang, axis=-1), ev.tau], axis=-1)[keep]
    rays = ev.ray[keep]
    collisions = []
    min_sep = np.inf
    for i in range(len(data)):
        d = np.max(np.abs(data[i + 1:] - data[i]), axis=-1) if i + 1 < len(data) else np.zeros(0)
        if len(d):
            min_sep = min(min_sep, float(d.min()))
            for j in np.nonzero(d < margin)[0]:
                collisions.append((int(rays[i]), int(rays[i + 1 + j])))
    return {"n_endpoints": int(len(data)), "n_glancing": int((~keep).sum()),
            "min_separation": float(min_sep), "collisions": collisions, "ok": not collisions}
