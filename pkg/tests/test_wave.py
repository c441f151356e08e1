import numpy as np
import pytest

from tatrecon.fields import Grid, ScalarField, halfspace_geometry, make_sound_speed
from tatrecon.optics import Surface
from tatrecon.wave import CFLError, WaveSolver, enlarged_grid, solve_forward, spectral_solution, trace_wavepacket

GRID = Grid.from_bounds((-0.5, -0.5), (0.5, 0.5), (64, 64))
CONST = make_sound_speed({"kind": "constant"}, GRID)


def blob(grid, sigma=0.05, center=(0.0, 0.0)):
    X = grid.points() - np.asarray(center)
    return np.exp(-np.sum(X**2, axis=1) / (2 * sigma**2)).reshape(grid.shape)


def test_cfl_violation_raises():
    h = GRID.spacing[0]
    with pytest.raises(CFLError):
        WaveSolver(GRID, CONST, dt=h)


def test_energy_is_conserved():
    g = Grid.from_bounds((-0.5, -1.05), (0.5, -0.05), (64, 64))
    c = make_sound_speed({"kind": "radial-bump", "center": [0.0, -0.55], "radius": 0.4, "amplitude": 0.1}, g,
                         halfspace_geometry())
    box = enlarged_grid((-0.5, -1.05), (0.5, -0.05), 0.3, g.spacing[0])
    s = WaveSolver(box, c, 0.3 * g.spacing[0])
    st = s.start(blob(box, 0.05, (0.0, -0.55)))
    e0 = s.energy(st)
    st = s.advance(st, 40)
    assert abs(s.energy(st) - e0) / e0 < 0.01


def test_trace_matches_fourier_solution():
    f = ScalarField(GRID, blob(GRID, 0.06))
    ax = GRID.axes()
    j = 32
    pts = np.stack([ax[0], np.full(64, ax[1][j])], axis=1)
    surf = Surface(ax[0], pts, np.tile([0.0, 1.0], (64, 1)), np.full(64, GRID.spacing[0]))
    times = np.linspace(0.0, 0.25, 6)
    tr = solve_forward(f, CONST, 0.25, surf, times, h=GRID.spacing[0] / 2)
    for k, t in enumerate(times):
        ref = spectral_solution(f, t).values[:64, j]
        assert np.abs(tr.values[:, k] - ref).max() < 5e-3


def test_time_axis_must_start_at_zero():
    f = ScalarField(GRID, blob(GRID))
    surf = Surface(np.zeros(1), np.zeros((1, 2)), np.array([[0.0, 1.0]]), np.ones(1))
    with pytest.raises(ValueError):
        solve_forward(f, CONST, 0.2, surf, np.linspace(0.05, 0.2, 4))


def test_packet_halves_follow_straight_rays():
    d = np.array([0.0, 1.0])
    r = trace_wavepacket((0.0, 0.0), d, 60.0, CONST, 0.5, times=np.linspace(0, 0.5, 6))
    sep = r["separated"]
    assert sep[-1]
    # the tau > 0 half moves along -direction at unit speed, the other along +direction
    assert np.allclose(r["plus"][sep], -r["times"][sep, None] * d, atol=2 * r["h"])
    assert np.allclose(r["minus"][sep], r["times"][sep, None] * d, atol=2 * r["h"])
    with pytest.raises(ValueError):
        trace_wavepacket((0.0, 0.0), d, 60.0, CONST, 0.3, h=0.05)
