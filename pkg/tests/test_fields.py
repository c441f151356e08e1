import numpy as np
import pytest

from tatrecon.fields import (Grid, ModelError, ScalarField, circle_geometry, halfspace_geometry, jump_locus,
                             load_field, make_phantom, make_sound_speed, save_field)


@pytest.fixture
def grid():
    return Grid.from_bounds((-0.5, -1.05), (0.5, -0.05), (64, 64))


def test_grid_bounds_and_coarsen(grid):
    assert np.allclose(grid.upper, (0.5, -0.05))
    assert np.isclose(grid.cell_volume, np.prod(grid.spacing))
    assert grid.points().shape == (64 * 64, 2)
    coarse = grid.coarsen((17, 17))
    assert np.allclose(coarse.origin, grid.origin) and np.allclose(coarse.upper, grid.upper)


def test_constant_speed_is_one(grid):
    c = make_sound_speed({"kind": "constant"}, grid, halfspace_geometry())
    assert c.is_constant and c.c_min == c.c_max == 1.0
    v, g, h = c.evaluate(grid.points()[:5])
    assert np.all(v == 1) and not g.any() and not h.any()


def test_bump_gradient_matches_finite_differences(grid):
    c = make_sound_speed({"kind": "radial-bump", "center": [0.0, -0.55], "radius": 0.4, "amplitude": 0.1},
                         grid, halfspace_geometry())
    x = np.array([[0.1, -0.45], [-0.2, -0.7]])
    _, g, H = c.evaluate(x)
    eps = 1e-6
    for a in range(2):
        e = np.zeros(2)
        e[a] = eps
        fd = (c(x + e) - c(x - e)) / (2 * eps)
        assert np.allclose(fd, g[:, a], atol=1e-8)
        fdg = (c.evaluate(x + e)[1] - c.evaluate(x - e)[1]) / (2 * eps)
        assert np.allclose(fdg, H[:, :, a], atol=1e-6)


def test_bump_support_and_invariants(grid):
    g = halfspace_geometry()
    c = make_sound_speed({"kind": "radial-bump", "center": [0.0, -0.55], "radius": 0.4, "amplitude": 0.1}, grid, g)
    assert np.isclose(c.c_max, 1.1)
    assert c(np.array([[0.0, -0.05]]))[0] == 1.0  # outside the support
    assert c.support_distance(np.array([[0.0, -0.05]]))[0] == pytest.approx(0.1)
    rep = c.check_invariants(g)
    assert rep["ok"] and rep["exterior_deviation"] == 0.0


def test_sound_speed_rejects_bad_models(grid):
    g = halfspace_geometry()
    with pytest.raises(ModelError):
        make_sound_speed({"kind": "spline"}, grid, g)
    with pytest.raises(ModelError):  # support leaves the domain
        make_sound_speed({"kind": "radial-bump", "center": [0.0, -0.2], "radius": 0.4, "amplitude": 0.1}, grid, g)
    with pytest.raises(ModelError):  # violates 1/M < c < M
        make_sound_speed({"kind": "radial-bump", "center": [0.0, -0.55], "radius": 0.4, "amplitude": 1.5}, grid, g)


def test_geometry_boundary_functions():
    hs = halfspace_geometry()
    x = np.array([[0.1, -0.3], [0.2, 0.4]])
    assert np.array_equal(hs.boundary_function(x) < 0, [True, False])
    cg = circle_geometry(radius=0.5)
    p = np.array([[0.5, 0.0], [0.0, -0.5]])
    assert np.allclose(cg.boundary_function(p), 0)
    assert np.allclose(cg.boundary_gradient(p), [[1, 0], [0, -1]])
    assert np.allclose(cg.surface_parameter(p), [0, 1.5 * np.pi])
    assert cg.full_boundary
    with pytest.raises(ValueError):
        circle_geometry(gamma=(0.0, 1.0), gamma_tilde=(0.0, 0.5))


def test_disk_phantom_edges(grid):
    ph = make_phantom([{"type": "disk", "center": [0.0, -0.5], "radius": 0.2, "amplitude": 2.0}], grid,
                      halfspace_geometry(), mollify=2.0)
    e = ph.edges
    assert len(e) == 128
    assert np.allclose(np.linalg.norm(e.points - [0.0, -0.5], axis=1), 0.2)
    assert np.allclose(np.linalg.norm(e.normals, axis=1), 1)
    assert np.all(e.jumps == 2.0)
    assert set(np.unique(ph.sharp.values)) <= {0.0, 2.0}
    assert np.any((ph.field.values > 0.1) & (ph.field.values < 1.9))  # mollified edge
    loc = jump_locus(ph.sharp, 10.0)
    r = np.linalg.norm(loc - [0.0, -0.5], axis=1)
    assert np.all(np.abs(r - 0.2) < 2 * grid.spacing[0])


def test_polygon_and_unknown_primitive(grid):
    sq = [[-0.2, -0.7], [0.2, -0.7], [0.2, -0.3], [-0.2, -0.3]]
    ph = make_phantom([{"type": "polygon", "vertices": sq}], grid, halfspace_geometry())
    # outward normals point away from the centroid
    assert np.all(np.sum((ph.edges.points - [0.0, -0.5]) * ph.edges.normals, axis=1) > 0)
    with pytest.raises(ModelError):
        make_phantom([{"type": "star"}], grid)


def test_raw_roundtrip(tmp_path, grid):
    f = ScalarField(grid, np.random.default_rng(0).standard_normal(grid.shape))
    save_field(tmp_path / "f.raw", f)
    assert (tmp_path / "f.raw").stat().st_size == 8 * grid.size
    g = load_field(tmp_path / "f.raw")
    assert np.array_equal(g.values, f.values) and np.allclose(g.grid.spacing, grid.spacing)
