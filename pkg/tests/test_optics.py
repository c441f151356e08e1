import numpy as np
import pytest

from tatrecon.fields import Grid, halfspace_geometry, load_raw, make_sound_speed
from tatrecon.optics import (ConjugatePointError, TableSampler, build_phase_tables, circle_surface,
                             hyperplane_surface, shoot, time_axis, trig_matrix)

GRID = Grid.from_bounds((-0.5, -1.05), (0.5, -0.05), (64, 64))
HS = halfspace_geometry()
CONST = make_sound_speed({"kind": "constant"}, GRID, HS)
BUMP = make_sound_speed({"kind": "radial-bump", "center": [0.0, -0.55], "radius": 0.4, "amplitude": 0.05}, GRID, HS)


@pytest.fixture(scope="module")
def bump_tables():
    return build_phase_tables(BUMP, hyperplane_surface((-1, 1), 21), 16, 1.0, 11)


def test_surfaces_quadrature():
    hs = hyperplane_surface((-1, 1), 101)
    assert np.isclose(hs.weights.sum(), 2.0)
    cs = circle_surface(0.5, (0, 0), 64)
    assert cs.periodic and np.isclose(cs.weights.sum(), np.pi)
    assert np.allclose(np.linalg.norm(cs.points, axis=1), 0.5)
    assert np.allclose(np.sum(cs.normals * cs.tangents, axis=1), 0)
    t = time_axis(1.0, 41)
    assert np.allclose(t, -t[::-1])


def test_constant_speed_closed_forms():
    tabs = build_phase_tables(CONST, hyperplane_surface((-1, 1), 11), 16, 1.0, 5)
    for s, tab in tabs.items():
        x = tab.surface.points
        ex = (x @ tab.dirs.T)[:, None, :] + s * tab.times[None, :, None]
        assert np.array_equal(tab.phi, ex)
        assert np.all(tab.amp == 1) and tab.report["fan"] == "closed-form"
        assert tab.eikonal_residual(CONST).max() < 1e-14


def test_bump_tables_match_direct_shooting(bump_tables):
    rng = np.random.default_rng(3)
    for s, tab in bump_tables.items():
        assert tab.valid.all()
        assert tab.report["eikonal_residual"] < 1e-4
        for _ in range(6):
            i, k, l = rng.integers(len(tab.surface)), rng.integers(len(tab.times)), rng.integers(tab.n_dirs)
            r = shoot(BUMP, tab.surface.points[i], tab.times[k], tab.dirs[l], s)
            assert abs(r["phi"][0] - tab.phi[i, k, l]) < 1e-6
            assert abs(r["amp"][0] - tab.amp[i, k, l]) < 1e-5
            assert np.allclose(r["grad"][0], tab.grad_x[i, k, l], atol=1e-6)


def test_sign_and_direction_symmetries(bump_tables):
    p, m = bump_tables[1], bump_tables[-1]
    half = p.n_dirs // 2
    # phi_-(x, t, e) = phi_+(x, -t, e)
    assert np.allclose(m.phi, p.phi[:, ::-1], atol=1e-12)
    # phi_+(x, t, -e) = -phi_+(x, -t, e)
    assert np.allclose(p.phi[:, :, half:], -p.phi[:, ::-1, :half], atol=1e-12)
    # the symmetric half agrees with direct tracing
    r = shoot(BUMP, p.surface.points[7], p.times[8], p.dirs[half + 3], 1)
    assert abs(r["phi"][0] - p.phi[7, 8, half + 3]) < 1e-6


def test_sampler_interpolates_tables(bump_tables):
    tab = bump_tables[1]
    # on the table's own nodes and bins the sampler is exact
    smp = TableSampler(tab, tab.surface, tab.times)
    ang = 2 * np.pi * np.arange(tab.n_dirs) / tab.n_dirs
    phi, amp = smp.at(ang)
    assert np.allclose(phi, tab.phi.reshape(-1, tab.n_dirs).T, atol=1e-12)
    assert np.allclose(amp, tab.amp.reshape(-1, tab.n_dirs).T, atol=1e-12)
    W = trig_matrix(8, np.array([0.3, 1.1]))
    assert np.allclose(W.sum(0), 1.0)


def test_table_export(tmp_path, bump_tables):
    bump_tables[1].export(tmp_path / "phase.raw")
    arr, meta = load_raw(tmp_path / "phase.raw")
    assert arr.shape == (3,) + bump_tables[1].phi.shape and meta["sign"] == 1


def test_strong_lens_refused():
    lens = make_sound_speed({"kind": "radial-bump", "center": [0.0, -0.5], "radius": 0.3, "amplitude": 0.6}, GRID, HS)
    with pytest.raises(ConjugatePointError) as exc:
        build_phase_tables(lens, hyperplane_surface((-1, 1), 21), 16, 1.0, 11)
    assert 0 < abs(exc.value.t) <= 1.0 and len(exc.value.where) == 2
