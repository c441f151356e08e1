from types import SimpleNamespace

import numpy as np
import pytest

from conftest import halfplane, halfplane_parametrix
from tatrecon.fields import Grid, ScalarField, halfspace_geometry, make_phantom, make_sound_speed
from tatrecon.fio import (BoundaryTrace, FIOPair, apply_correction, compute_b0, cone_filter, cone_partition,
                          data_times, decay_exponent, forward_data, make_window, smooth_ramp, wave_packet)
from tatrecon.optics import Surface, build_phase_tables, hyperplane_surface
from tatrecon.rays import direction_bins

HS = halfspace_geometry()
GRID = Grid.from_bounds((-0.5, -1.05), (0.5, -0.05), (64, 64))
CONST = make_sound_speed({"kind": "constant"}, GRID, HS)


def _freq(grid, pad=2):
    n = [pad * s for s in grid.shape]
    k = [np.fft.fftfreq(m, d) * 2 * np.pi for m, d in zip(n, grid.spacing)]
    return n, np.meshgrid(*k, indexing="ij")


def test_smooth_ramp_partition():
    u = np.linspace(-0.5, 1.5, 201)
    r = smooth_ramp(u)
    assert r[0] == 0 and r[-1] == 1
    assert np.allclose(r + smooth_ramp(1 - u), 1)
    assert np.all(np.diff(r) >= 0)


def test_data_times_and_trace_extension():
    t = data_times(1.0, 0.03)
    assert np.allclose(t, -t[::-1]) and np.any(t == 0.0) and np.diff(t).max() <= 0.03
    surf = hyperplane_surface((-1, 1), 5)
    phys = t[np.searchsorted(t, 0.0):]
    tr = BoundaryTrace(surf, phys, np.outer(np.arange(5), phys**2))
    ext = tr.even_extended_trace()
    assert np.allclose(ext.times, t) and np.allclose(ext.values, ext.values[:, ::-1])
    assert np.array_equal(ext.physical().values, tr.values)
    with pytest.raises(ValueError):
        BoundaryTrace(surf, phys, np.zeros((4, len(phys))))


def test_window_plateau_and_taper():
    win = make_window(HS, 1.0, 0.2, 0.1)
    assert win(0.0, 0.0) == 1.0 and win(0.5, 0.8) == 1.0
    assert win(1.0, 0.0) == 0.0 and win(0.0, -1.0) == 0.0
    assert 0 < win(0.9, 0.0) < 1
    (wa, wb), (ta, tb) = win.plateau()
    assert np.isclose(wa, -0.8) and np.isclose(tb, 0.9)


@pytest.fixture(scope="module")
def inner_line():
    """A surface of grid nodes inside the box, so S_s f at t = 0 can be compared with f."""
    ax = GRID.axes()
    w = ax[0][10:55]
    j = 28
    surf = Surface(w, np.stack([w, np.full(len(w), ax[1][j])], 1), np.tile([0.0, 1.0], (len(w), 1)),
                   np.full(len(w), GRID.spacing[0]))
    times = np.array([-0.1, 0.0, 0.1])
    tabs = build_phase_tables(CONST, surf, 64, 0.1, 3)
    return surf, times, {s: FIOPair(s, GRID, tabs[s], surf, times) for s in (1, -1)}, j


def test_identity_at_time_zero_and_conjugate_symmetry(inner_line):
    surf, times, pairs, j = inner_line
    ph = make_phantom([{"type": "disk", "center": [0.05, -0.5], "radius": 0.2}], GRID, HS, mollify=2.0)
    Sp, Sm = (pairs[s].forward(ph.field).values for s in (1, -1))
    # u(x, 0) = f(x) = S_+ f + S_- f with S_- f = conj(S_+ f) for real f
    assert np.abs(Sp[:, 1] - ph.field.values[10:55, j] / 2).max() < 1e-4
    assert np.abs(Sp - np.conj(Sm)).max() < 1e-12


def test_adjoint_identity_small_grid(inner_line, rng):
    _, _, pairs, _ = inner_line
    P = pairs[1]
    f = rng.standard_normal(GRID.shape)
    v = rng.standard_normal((len(P.surface), len(P.times))) + 1j * rng.standard_normal((len(P.surface), len(P.times)))
    lhs = np.sum(P.data_weights * P.forward(f).values * np.conj(v))
    assert abs(lhs - P.adjoint(v).inner(f)) / abs(lhs) < 1e-10


def test_cone_partition_sums_to_one():
    psi = cone_partition((32, 32), (0.1, 0.1), 16)
    assert np.allclose(psi.sum(axis=0), 1.0, atol=1e-13)
    assert psi.min() >= 0


def test_correction_multipliers():
    X = GRID.points() - np.array([0.0, -0.55])
    pc = (np.exp(-np.sum(X**2, 1) / (2 * 0.08**2)) * np.exp(1j * 40 * (X @ np.array([0.6, 0.8])))).reshape(GRID.shape)
    g = SimpleNamespace(grid=GRID, values=pc)
    assert np.abs(apply_correction(np.ones(GRID.shape + (64,)), g) - pc).max() < 1e-12
    # q = |eta_2| / |eta| sampled on 64 bins vs the exact Fourier multiplier
    q = np.broadcast_to(np.abs(direction_bins(64)[:, 1]), GRID.shape + (64,))
    n, (K0, K1) = _freq(GRID)
    R = np.hypot(K0, K1)
    R[0, 0] = 1
    exact = np.fft.ifft2(np.fft.fft2(pc, s=n) * np.abs(K1) / R)[:64, :64]
    out = apply_correction(q, g)
    assert np.linalg.norm(out - exact) / np.linalg.norm(exact) < 0.02


def test_cone_filter_keeps_cone_and_drops_the_rest():
    vert = ScalarField(GRID, wave_packet(GRID, (0.0, -0.55), (0.0, 1.0), 80.0, 0.1))
    horiz = ScalarField(GRID, wave_packet(GRID, (0.0, -0.55), (1.0, 0.0), 80.0, 0.1))
    low = ScalarField(GRID, wave_packet(GRID, (0.0, -0.55), (0.0, 1.0), 5.0, 0.15))
    fv = cone_filter(vert).values
    assert np.linalg.norm(fv - vert.values) / np.linalg.norm(vert.values) < 1e-3
    assert np.linalg.norm(cone_filter(horiz).values) / np.linalg.norm(horiz.values) < 1e-3
    assert np.linalg.norm(cone_filter(low).values) / np.linalg.norm(low.values) < 0.05


def test_decay_exponent_of_power_law():
    rows = [{"k": k, "ratio": 3.0 * k**-2.5} for k in (8, 16, 32, 64)]
    assert decay_exponent(rows) == pytest.approx(-2.5)


def test_constant_speed_symbol_on_plateau():
    grid = GRID.coarsen((9, 9))
    win = make_window(HS, 1.0, 0.15, 0.15)
    sy = compute_b0(1, CONST, HS, win, grid, 16, T=1.0)
    d = direction_bins(16)
    z = grid.points().reshape(grid.shape + (2,))
    # vertical bins from nodes whose crossing t = |z_2| / |e_2| lies on the plateau
    l = 12  # e = (0, -1): tau > 0 strips move up and cross at t = -z_2
    on = (-z[..., 1] < 0.8) & (np.abs(z[..., 0]) < 0.8)
    assert np.allclose(sy.b0[on, l], 1.0)
    assert np.allclose(sy.symbol[on, l], 0.25 / abs(d[l, 1]))
    assert np.all(sy.theta_weight()[on, l] == 1.0)
    # glancing bins carry no symbol
    assert not sy.b0[..., 0].any() and not sy.b0[..., 8].any()


@pytest.mark.slow
def test_parametrix_recovers_wave_packets():
    s = halfplane("const")
    par = halfplane_parametrix("const")
    for off in (0.0, 0.4):
        d = (np.cos(np.pi / 2 + off), np.sin(np.pi / 2 + off))
        p = wave_packet(s["grid"], (0.0, -0.4), d, 60.0, 0.06)
        rec = par.apply(forward_data(s["pairs"], ScalarField(s["grid"], p)).physical()).values
        assert np.linalg.norm(rec - p) / np.linalg.norm(p) < 0.06
