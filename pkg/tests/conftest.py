"""Shared, cached set-ups for the test suite (built once per session)."""

from __future__ import annotations

import functools

import numpy as np
import pytest

from tatrecon.fields import Grid, circle_geometry, halfspace_geometry, make_phantom, make_sound_speed
from tatrecon.fio import FIOPair, build_parametrix, data_times, make_window
from tatrecon.optics import build_phase_tables, circle_surface, hyperplane_surface

BUMP = {"kind": "radial-bump", "center": [0.0, -0.55], "radius": 0.4, "amplitude": 0.05}
MODELS = {"const": {"kind": "constant"}, "bump": BUMP}

_RESULTS: dict[int, tuple[bool, str]] = {}


def record(number: int, passed: bool, detail: str) -> None:
    """Store an acceptance outcome; printed in the terminal summary."""
    _RESULTS[number] = (bool(passed), detail)
    print(f"criterion {number}: {'PASS' if passed else 'FAIL'} - {detail}")


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(_RESULTS):
        ok, detail = _RESULTS[k]
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}")


@functools.lru_cache(maxsize=None)
def halfplane(kind: str = "const") -> dict:
    """128^2 grid under the hyperplane x_2 = 0, T = 1, data sampled at 0.8 h."""
    g = halfspace_geometry()
    grid = Grid.from_bounds((-0.5, -1.05), (0.5, -0.05), (128, 128))
    h = grid.spacing[0]
    c = make_sound_speed(MODELS[kind], grid, g)
    surf = hyperplane_surface((-1.0, 1.0), int(2 / (0.8 * h)) + 1)
    times = data_times(1.0, 0.8 * h)
    tables = build_phase_tables(c, hyperplane_surface((-1.0, 1.0), 51), 64, 1.0, 41)
    pairs = {s: FIOPair(s, grid, tables[s], surf, times) for s in (1, -1)}
    window = make_window(g, 1.0, 0.15, 0.15)
    return dict(geometry=g, grid=grid, h=h, c=c, surface=surf, times=times, tables=tables, pairs=pairs,
                window=window)


@functools.lru_cache(maxsize=None)
def halfplane_parametrix(kind: str = "const"):
    s = halfplane(kind)
    return build_parametrix(s["pairs"], s["c"], s["geometry"], s["window"], T=1.0)


@functools.lru_cache(maxsize=None)
def disk_phantom(kind: str = "const"):
    s = halfplane(kind)
    return make_phantom([{"type": "disk", "amplitude": 1.0, "center": [0.05, -0.5], "radius": 0.2}],
                        s["grid"], s["geometry"], mollify=2.0)


@functools.lru_cache(maxsize=None)
def disk_setup() -> dict:
    g = circle_geometry(T_max=1.1, radius=0.5)
    grid = Grid.from_bounds((-0.5, -0.5), (0.5, 0.5), (64, 64))
    c = make_sound_speed({"kind": "constant"}, grid, g)
    h = grid.spacing[0]
    surf = circle_surface(0.5, (0.0, 0.0), int(np.ceil(np.pi / (0.8 * h))))
    times = data_times(1.1, 0.8 * h)
    tables = build_phase_tables(c, circle_surface(0.5, (0.0, 0.0), 64), 64, 1.1, 41)
    return dict(geometry=g, grid=grid, h=h, c=c, surface=surf, times=times, tables=tables)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
