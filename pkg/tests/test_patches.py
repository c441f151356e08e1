import csv

import numpy as np
import pytest

from tatrecon.fields import Grid, circle_geometry, halfspace_geometry, make_sound_speed
from tatrecon.optics import circle_surface
from tatrecon.patches import BoundaryChart, PatchError, build_patch_system, compute_patch_weights

CIRCLE = circle_geometry(T_max=1.1, radius=0.5)


def test_chart_roundtrip_and_metric():
    ch = BoundaryChart(0, "convex", (5.5, 7.0), (0.1, -0.2), 0.5)
    w = np.array([5.6, 6.2, 6.9])
    wn = np.array([-0.1, 0.0, -0.3])
    x = ch.to_x(w, wn)
    w2, wn2 = ch.from_x(x)
    assert np.allclose(w2, w) and np.allclose(wn2, wn)
    assert np.allclose(ch.metric(w, wn), 0.5 + wn)
    hs = BoundaryChart(1, "halfspace", (-1.0, 0.0))
    assert np.allclose(hs.to_x([0.3], [-0.2]), [[0.3, -0.2]])


def test_full_circle_partition_of_unity():
    system = build_patch_system(CIRCLE, 4, 1.0, 0.3, 0.1)
    w, t = np.meshgrid(np.linspace(0, 2 * np.pi, 999), np.linspace(-1.0, 1.0, 41), indexing="ij")
    assert np.abs(system.chi_sum(w, t) - 1).max() < 1e-12
    # time factor vanishes past T + t_taper, and each chi_j is a single bump
    assert system.chi_sum(np.array([0.3]), np.array([1.1]))[0] == 0
    for cut in system.chi:
        prof = cut.surface_factor(np.linspace(0, 2 * np.pi, 2000))
        assert prof.max() == 1.0 and np.sum(np.diff((prof > 0).astype(int)) != 0) <= 2
    assert system.partition_report()["chi_sum_deviation"] < 1e-12


def test_partial_arc_partition():
    g = circle_geometry(T_max=1.0, radius=0.5, gamma=(0.0, np.pi), gamma_tilde=(0.4, np.pi - 0.4))
    system = build_patch_system(g, 3, 0.8, 0.2, 0.1)
    w = np.linspace(0.4, np.pi - 0.4, 301)
    assert np.abs(system.chi_sum(w, np.zeros_like(w)) - 1).max() < 1e-12
    outside = np.array([0.1, np.pi + 0.5])
    assert not system.chi_sum(outside, np.zeros(2)).any()


def test_halfspace_patches_match_window_plateau():
    system = build_patch_system(halfspace_geometry(), 3, 1.0, 0.15, 0.1)
    w = np.linspace(-0.85, 0.85, 201)
    assert np.abs(system.chi_sum(w, np.zeros_like(w)) - 1).max() < 1e-12
    assert system.chi_sum(np.array([1.0]), np.zeros(1))[0] == 0


def test_patch_errors():
    with pytest.raises(PatchError):
        build_patch_system(CIRCLE, 8, 1.0, 1.0)  # taper wider than a patch
    g = circle_geometry(T_max=1.0, radius=0.5, gamma=(0.0, np.pi), gamma_tilde=(0.1, np.pi - 0.1))
    with pytest.raises(PatchError):
        build_patch_system(g, 2, 1.0, 0.3)  # margin 0.1 < taper
    with pytest.raises(PatchError):
        build_patch_system(CIRCLE, 0, 1.0)


def test_restrict_orders_samples_along_chart():
    system = build_patch_system(CIRCLE, 4, 1.0, 0.3, 0.1)
    surf = circle_surface(0.5, (0, 0), 128)
    covered = np.zeros(len(surf), bool)
    for ch in system.charts:
        idx, sub = ch.restrict(surf)
        covered[idx] = True
        w = ch.from_x(sub.points)[0]
        assert np.all(np.diff(w) > 0)
    assert covered.all()


def test_theta_partition_on_visible_bins():
    grid = Grid.from_bounds((-0.5, -0.5), (0.5, 0.5), (32, 32))
    c = make_sound_speed({"kind": "constant"}, grid, CIRCLE)
    system = build_patch_system(CIRCLE, 4, 1.0, 0.3, 0.1)
    compute_patch_weights(system, c, grid, n_dirs=16, coarse_shape=(9, 9))
    rep = system.partition_report()
    assert rep["theta_sum_deviation"] < 1e-12
    assert rep["visible_fraction"] > 0.5
    assert np.all(system.theta_sum() <= 1 + 1e-12)


def test_patch_exports(tmp_path):
    system = build_patch_system(CIRCLE, 4, 1.0, 0.3, 0.1)
    system.export_csv(tmp_path / "p.csv", n_samples=50)
    system.export_ranges(tmp_path / "r.csv")
    rows = list(csv.DictReader(open(tmp_path / "p.csv")))
    assert len(rows) == 50 and all(abs(float(r["sum"]) - 1) < 1e-9 for r in rows)
    assert len(list(csv.DictReader(open(tmp_path / "r.csv")))) == 4
