"""Scenario configuration, the end-to-end run, edge-recovery metrics and plots.

A scenario is a JSON document (schema version 1, see README) naming the
geometry, sound speed, phantom, discretization and pipeline. ``run_scenario``
executes fields -> visibility -> tables -> FDTD data -> reconstruction ->
metrics and writes every artifact plus ``summary.json`` into the output
directory. Stage failures leave the artifacts written so far and a
``run.log`` behind.
"""

from __future__ import annotations

import copy
import csv
import json
import logging
import time
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter, map_coordinates

from .fields import (DomainGeometry, Grid, ModelError, Phantom, ScalarField, SoundSpeed, circle_geometry,
                     halfspace_geometry, make_phantom, make_sound_speed, save_field)
from .fio import (FIOPair, build_parametrix, cross_term_residual, data_times, decay_exponent, make_window,
                  wave_packet, write_residual_csv)
from .optics import ConjugatePointError, build_phase_tables, circle_surface, hyperplane_surface
from .patches import build_patch_system, compute_patch_weights, reconstruct_patches
from .rays import GLANCING_THRESHOLD, trace_crossings
from .wave import CFL_MAX, _STENCIL_STABILITY, solve_forward

SCHEMA_VERSION = 1
log = logging.getLogger("tatrecon")

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_STAGE = 3
EXIT_REFUSED = 4

DEFAULTS = {
    "schema_version": SCHEMA_VERSION,
    "seed": 0,
    "geometry": {"kind": "halfspace"},
    "sound_speed": {"kind": "constant"},
    "phantom": {"primitives": [], "mollify": 1.0},
    "grid": {"lower": [-0.5, -1.05], "upper": [0.5, -0.05], "shape": [128, 128]},
    "discretization": {
        "n_dirs": 64, "T": 1.0, "data_dt": None, "surface_spacing": None,
        "fdtd_refine": 2, "fdtd_cfl": 0.5, "fdtd_dt": None,
        "table_surface_samples": 51, "table_times": 41, "coarse_shape": [33, 33],
    },
    "pipeline": "hyperplane",
    "window": {"w_taper": 0.15, "t_taper": 0.15},
    "patches": {"n_patches": 4, "w_taper": 0.3},
    "metrics": {
        "visible_threshold": 0.85, "invisible_threshold": 0.4, "segment_samples": 4,
        "stencil_halfwidth": 3.0, "response_sigma": 1.0, "boundary_degrees": 6.0,
        "cross_term": False, "cross_term_k": [8, 16, 32, 64],
    },
    "output_dir": None,
}

KNOWN_KEYS = set(DEFAULTS) | {"name", "description"}


class ScenarioError(ValueError):
    """Configuration problem detected before any compute."""


# ---------------------------------------------------------------------------
# Configuration


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


@dataclass
class Scenario:
    """Parsed, validated scenario with the derived objects built from it."""

    name: str
    config: dict
    grid: Grid
    geometry: DomainGeometry
    c: SoundSpeed
    phantom: Phantom
    derived: dict = field(default_factory=dict)

    @property
    def disc(self) -> dict:
        return self.config["discretization"]

    @property
    def T(self) -> float:
        return float(self.disc["T"])

    @property
    def output_dir(self) -> Path:
        return Path(self.config["output_dir"] or f"runs/{self.name}")


def bundled_scenarios() -> list[str]:
    pkg = resources.files("tatrecon") / "scenarios"
    return sorted(p.name[:-5] for p in pkg.iterdir() if p.name.endswith(".json"))


def load_config(source) -> dict:
    """A path to a JSON file, the name of a bundled scenario, or a dict."""
    if isinstance(source, dict):
        cfg = copy.deepcopy(source)
    else:
        path = Path(source)
        if path.exists():
            cfg = json.loads(path.read_text())
        else:
            res = resources.files("tatrecon") / "scenarios" / f"{source}.json"
            if not res.is_file():
                raise ScenarioError(f"no config file or bundled scenario named {source!r}")
            cfg = json.loads(res.read_text())
    unknown = set(cfg) - KNOWN_KEYS
    if unknown:
        raise ScenarioError(f"unknown config keys: {sorted(unknown)}")
    return _merge(DEFAULTS, cfg)


def _geometry(cfg: dict, T: float) -> DomainGeometry:
    g = cfg["geometry"]
    kind = g.get("kind", "halfspace")
    if kind == "halfspace":
        kw = {k: g[k] for k in ("omega_box", "surface_range") if k in g}
        return halfspace_geometry(T_max=T, **kw)
    if kind in ("circle", "convex"):
        gamma = tuple(g.get("gamma", (0.0, 2 * np.pi)))
        return circle_geometry(T_max=T, radius=g.get("radius", 0.5), center=tuple(g.get("center", (0.0, 0.0))),
                               gamma=gamma, gamma_tilde=tuple(g["gamma_tilde"]) if "gamma_tilde" in g else None)
    raise ScenarioError(f"unknown geometry kind {kind!r}")


def validate(source) -> Scenario:
    """Parse the config, build the models and run the CFL/resolution checks; no heavy compute."""
    cfg = load_config(source)
    if cfg.get("schema_version") != SCHEMA_VERSION:
        raise ScenarioError(f"unsupported schema_version {cfg.get('schema_version')!r}")
    d = cfg["discretization"]
    T = float(d["T"])
    if T <= 0:
        raise ScenarioError("T must be positive")
    gcfg = cfg["grid"]
    grid = Grid.from_bounds(gcfg["lower"], gcfg["upper"], gcfg["shape"])
    h = min(grid.spacing)
    try:
        geometry = _geometry(cfg, T)
        c = make_sound_speed(cfg["sound_speed"], grid, geometry)
        ph = cfg["phantom"]
        phantom = make_phantom(ph.get("primitives", []), grid, geometry, mollify=float(ph.get("mollify", 0.0)))
    except ModelError as exc:
        raise ScenarioError(str(exc)) from exc
    except KeyError as exc:
        raise ScenarioError(f"missing key {exc}") from exc
    if cfg["pipeline"] not in ("hyperplane", "patches"):
        raise ScenarioError(f"unknown pipeline {cfg['pipeline']!r}")
    if cfg["pipeline"] == "hyperplane" and geometry.kind != "halfspace":
        raise ScenarioError("the hyperplane pipeline needs a halfspace geometry")
    # FDTD stability: dt <= CFL_MAX * (stencil factor) * h_fd / (c_max sqrt 2)
    h_fd = h / float(d["fdtd_refine"])
    limit = CFL_MAX * _STENCIL_STABILITY * h_fd / (c.c_max * np.sqrt(grid.dim))
    fdtd_dt = d["fdtd_dt"]
    if fdtd_dt is not None and float(fdtd_dt) > limit:
        raise ScenarioError(f"validation failure: fdtd_dt = {fdtd_dt} violates the CFL limit {limit:.4g}")
    if float(d["fdtd_cfl"]) > CFL_MAX:
        raise ScenarioError(f"validation failure: fdtd_cfl {d['fdtd_cfl']} > {CFL_MAX}")
    # data sampling must resolve the grid's Nyquist frequency
    data_dt = float(d["data_dt"] or 0.8 * h / c.c_max)
    ds = float(d["surface_spacing"] or 0.8 * h)
    if data_dt > h / c.c_max * (1 + 1e-9):
        raise ScenarioError(f"validation failure: data_dt {data_dt:.4g} under-resolves the grid (need <= {h / c.c_max:.4g})")
    if ds > h * (1 + 1e-9):
        raise ScenarioError(f"validation failure: surface spacing {ds:.4g} coarser than the grid spacing {h:.4g}")
    taper = cfg["window"]["t_taper"]
    if not 0 < taper < T:
        raise ScenarioError("window t_taper must lie in (0, T)")
    name = cfg.get("name") or (Path(source).stem if not isinstance(source, dict) else "scenario")
    derived = {"h": h, "h_fdtd": h_fd, "cfl_limit": limit, "data_dt": data_dt, "surface_spacing": ds}
    return Scenario(name, cfg, grid, geometry, c, phantom, derived)


# ---------------------------------------------------------------------------
# Edge metric


@dataclass
class EdgeReport:
    """Per-segment edge records. ``visibility`` is 'visible', 'invisible' or 'boundary'."""

    position: np.ndarray
    normal: np.ndarray
    visibility: list
    visible_strength: np.ndarray
    score: np.ndarray

    def __len__(self):
        return len(self.score)

    def mask(self, label: str) -> np.ndarray:
        return np.array([v == label for v in self.visibility], bool)

    def summary(self, visible_threshold: float, invisible_threshold: float) -> dict:
        vis, inv = self.mask("visible"), self.mask("invisible")
        out = {"n_segments": len(self), "n_visible": int(vis.sum()), "n_invisible": int(inv.sum()),
               "n_boundary": int(self.mask("boundary").sum())}
        out["visible_min_score"] = float(self.score[vis].min()) if vis.any() else None
        out["visible_mean_score"] = float(self.score[vis].mean()) if vis.any() else None
        out["invisible_max_score"] = float(self.score[inv].max()) if inv.any() else None
        out["visible_pass"] = bool(not vis.any() or self.score[vis].min() >= visible_threshold)
        out["invisible_pass"] = bool(not inv.any() or self.score[inv].max() <= invisible_threshold)
        return out

    def write_csv(self, path) -> None:
        with open(Path(path), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x", "y", "nx", "ny", "visibility", "visible_strength", "score"])
            for i in range(len(self)):
                w.writerow([*np.round(self.position[i], 6), *np.round(self.normal[i], 6), self.visibility[i],
                            round(float(self.visible_strength[i]), 6), round(float(self.score[i]), 6)])


def normal_response(f: ScalarField, points: np.ndarray, normals: np.ndarray, offsets: np.ndarray,
                    sigma: float) -> np.ndarray:
    """Gaussian-smoothed second derivative along the normal, sampled at p + s n for s in ``offsets``.

    ``sigma`` is in grid cells. Returns shape (n_points, n_offsets).
    """
    v = np.asarray(f.values, float)
    h = np.asarray(f.grid.spacing)
    dxx = gaussian_filter(v, sigma, order=(2, 0), mode="nearest") / h[0] ** 2
    dxy = gaussian_filter(v, sigma, order=(1, 1), mode="nearest") / (h[0] * h[1])
    dyy = gaussian_filter(v, sigma, order=(0, 2), mode="nearest") / h[1] ** 2
    pts = points[:, None, :] + offsets[None, :, None] * normals[:, None, :]
    idx = ((pts - np.asarray(f.grid.origin)) / h).reshape(-1, 2).T
    sample = [map_coordinates(a, idx, order=1, mode="nearest").reshape(pts.shape[:2]) for a in (dxx, dxy, dyy)]
    n0 = normals[:, None, 0]
    n1 = normals[:, None, 1]
    return sample[0] * n0 * n0 + 2 * sample[1] * n0 * n1 + sample[2] * n1 * n1


def edge_visibility(points: np.ndarray, normals: np.ndarray, c: SoundSpeed, geometry: DomainGeometry, window,
                    spread_degrees: float = 6.0, n_spread: int = 5, dt: float = 5e-3) -> tuple[np.ndarray, list]:
    """Ray-oracle visibility of the conormals (x, +-n) of edge samples.

    For each sample the strips from (x, +-n rotated by up to +-spread) are
    traced with both signs; a direction's strength is the largest window
    value chi(w, t) over its non-glancing crossings of the measured set.
    A sample is 'visible' if every direction in the fan is seen with
    strength >= 0.99, 'invisible' if none is seen above 0.01, and
    'boundary' otherwise. Uses the ray module and the configured window
    only; the reconstruction plays no part.
    """
    angles = np.deg2rad(np.linspace(-spread_degrees, spread_degrees, n_spread))
    base = np.arctan2(normals[:, 1], normals[:, 0])
    dirs = []
    for flip in (0.0, np.pi):
        for a in angles:
            th = base + flip + a
            dirs.append(np.stack([np.cos(th), np.sin(th)], axis=-1))
    D = np.stack(dirs, axis=1)                        # (n, m, 2)
    n, m = D.shape[:2]
    Y = np.repeat(points, m, axis=0)
    E = D.reshape(-1, 2)
    strength = np.zeros(n * m)
    for s in (1, -1):
        ev = trace_crossings(c, geometry, Y, E, s, dt=dt)
        ok = (np.abs(ev.xi_normal) >= GLANCING_THRESHOLD) & geometry.in_measured_set(ev.w)
        val = window(ev.w, ev.t) * ok
        np.maximum.at(strength, ev.ray, val)
    # a direction and its opposite describe the same conormal line; either sign of the strip may see it
    strength = strength.reshape(n, 2, len(angles)).max(axis=1)
    labels = []
    for row in strength:
        if np.all(row >= 0.99):
            labels.append("visible")
        elif np.all(row <= 0.01):
            labels.append("invisible")
        else:
            labels.append("boundary")
    return strength.min(axis=1), labels


def edge_recovery_score(reconstruction: ScalarField, phantom: Phantom, visibility: tuple | None = None,
                        segment_samples: int = 4, halfwidth: float = 3.0, sigma: float = 1.0) -> EdgeReport:
    """Normalized correlation of the normal high-pass response of the reconstruction and the sharp phantom.

    Edge samples are grouped into segments of ``segment_samples``
    consecutive samples; the stencil spans +-``halfwidth`` cells across
    the edge. Scores lie in [-1, 1]; an identically zero response scores 0.
    ``visibility`` is the (strength, labels) pair from :func:`edge_visibility`.
    """
    e = phantom.edges
    h = min(reconstruction.grid.spacing)
    offsets = np.linspace(-halfwidth, halfwidth, int(4 * halfwidth) + 1) * h
    ref = normal_response(phantom.sharp, e.points, e.normals, offsets, sigma)
    rec = normal_response(reconstruction, e.points, e.normals, offsets, sigma)
    n_seg = int(np.ceil(len(e) / segment_samples))
    pos, nrm, score, lab, strg = [], [], [], [], []
    for k in range(n_seg):
        sl = slice(k * segment_samples, min((k + 1) * segment_samples, len(e)))
        a = rec[sl].ravel()
        b = ref[sl].ravel()
        na, nb = np.linalg.norm(a), np.linalg.norm(b)
        score.append(0.0 if na == 0 or nb == 0 else float(a @ b / (na * nb)))
        p = e.points[sl].mean(axis=0)
        nv = e.normals[sl].sum(axis=0)
        pos.append(p)
        nrm.append(nv / np.linalg.norm(nv))
        if visibility is None:
            lab.append("unknown")
            strg.append(np.nan)
        else:
            st, labels = visibility
            seg = labels[sl]
            lab.append(seg[0] if all(x == seg[0] for x in seg) else "boundary")
            strg.append(float(np.min(st[sl])))
    return EdgeReport(np.array(pos), np.array(nrm), lab, np.array(strg), np.array(score))


# ---------------------------------------------------------------------------
# Run


def _surface(sc: Scenario):
    ds = sc.derived["surface_spacing"]
    g = sc.geometry
    if g.kind == "halfspace":
        lo, hi = g.surface_range
        return hyperplane_surface((lo, hi), int(np.ceil((hi - lo) / ds)) + 1)
    n = int(np.ceil(2 * np.pi * g.radius / ds))
    return circle_surface(g.radius, g.center, n)


def _table_surface(sc: Scenario):
    g = sc.geometry
    n = int(sc.disc["table_surface_samples"])
    if g.kind == "halfspace":
        return hyperplane_surface(g.surface_range, n)
    return circle_surface(g.radius, g.center, max(n, 64))


def _window(sc: Scenario):
    w = sc.config["window"]
    return make_window(sc.geometry, sc.T, float(w["w_taper"]), float(w["t_taper"]))


def _patch_system(sc: Scenario):
    p = sc.config["patches"]
    tt = float(sc.config["window"]["t_taper"])
    return build_patch_system(sc.geometry, int(p["n_patches"]), sc.T - tt, float(p["w_taper"]), tt)


def simulate_data(sc: Scenario, f: ScalarField | None = None):
    """FDTD trace on the scenario's surface, sampled on the non-negative half of the data time axis."""
    d = sc.disc
    times = data_times(sc.T, sc.derived["data_dt"])
    phys = times[np.searchsorted(times, 0.0):]
    surf = _surface(sc)
    h_fd = sc.derived["h_fdtd"]
    return solve_forward(f if f is not None else sc.phantom.field, sc.c, sc.T, surf, phys, h=h_fd,
                         cfl=float(d["fdtd_cfl"]), dt=None if d["fdtd_dt"] is None else float(d["fdtd_dt"]))


def build_tables(sc: Scenario) -> dict:
    d = sc.disc
    return build_phase_tables(sc.c, _table_surface(sc), int(d["n_dirs"]), sc.T, int(d["table_times"]))


def reconstruct(sc: Scenario, data, tables: dict) -> tuple[ScalarField, dict]:
    """Run the configured pipeline on physical data; returns the field and pipeline details."""
    d = sc.disc
    ext = data.even_extended_trace()
    if sc.config["pipeline"] == "hyperplane":
        pairs = {s: FIOPair(s, sc.grid, tables[s], ext.surface, ext.times) for s in (1, -1)}
        window = _window(sc)
        par = build_parametrix(pairs, sc.c, sc.geometry, window, coarse_shape=tuple(d["coarse_shape"]),
                               n_dirs=int(d["n_dirs"]), T=sc.T)
        return par.apply(ext), {"window": window, "parametrix": par, "pairs": pairs}
    system = _patch_system(sc)
    compute_patch_weights(system, sc.c, sc.grid, int(d["n_dirs"]), tuple(d["coarse_shape"]))
    rec, parts = reconstruct_patches(ext, system, tables)
    return rec, {"system": system, "parts": parts, "window": system}


def edge_report(sc: Scenario, rec: ScalarField, window) -> EdgeReport:
    m = sc.config["metrics"]
    e = sc.phantom.edges
    vis = edge_visibility(e.points, e.normals, sc.c, sc.geometry,
                          window.chi_sum if hasattr(window, "chi_sum") else window,
                          spread_degrees=float(m["boundary_degrees"]))
    return edge_recovery_score(rec, sc.phantom, vis, int(m["segment_samples"]), float(m["stencil_halfwidth"]),
                               float(m["response_sigma"]))


def _cross_term(sc: Scenario, pairs: dict, window, rng) -> list[dict]:
    """Residual sweep with packets at the phantom's centroid, aimed along the surface normal."""
    center = sc.phantom.edges.points.mean(axis=0)
    d = np.array([0.0, 1.0])
    probes = {int(k): ScalarField(sc.grid, wave_packet(sc.grid, center, d, float(k), 0.1, rng.uniform(0, 2 * np.pi)))
              for k in sc.config["metrics"]["cross_term_k"]}
    return cross_term_residual(pairs, window, probes)


def _json_safe(obj):
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    return obj


def run_scenario(source, output_dir=None, seed: int | None = None) -> tuple[int, Path]:
    """Execute the scenario; returns (exit status, artifact directory)."""
    try:
        sc = validate(source)
    except ScenarioError as exc:
        log.error("validation failure: %s", exc)
        return EXIT_VALIDATION, Path(output_dir or ".")
    if seed is not None:
        sc.config["seed"] = int(seed)
    out = Path(output_dir) if output_dir else sc.output_dir
    out.mkdir(parents=True, exist_ok=True)
    handler = logging.FileHandler(out / "run.log", mode="w")
    handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(message)s"))
    log.addHandler(handler)
    log.setLevel(logging.INFO)
    summary = {"schema_version": SCHEMA_VERSION, "scenario": sc.name, "seed": sc.config["seed"],
               "pipeline": sc.config["pipeline"], "stages": {}}
    (out / "config.json").write_text(json.dumps(sc.config, indent=2))
    rng = np.random.default_rng(sc.config["seed"])
    stage = "fields"
    status = EXIT_OK
    try:
        t0 = time.perf_counter()
        save_field(out / "phantom.raw", sc.phantom.field)
        save_field(out / "phantom_sharp.raw", sc.phantom.sharp)
        summary["stages"][stage] = round(time.perf_counter() - t0, 3)

        stage = "tables"
        t0 = time.perf_counter()
        tables = build_tables(sc)
        summary["tables"] = {str(s): _json_safe(t.report) for s, t in tables.items()}
        summary["stages"][stage] = round(time.perf_counter() - t0, 3)

        stage = "forward"
        t0 = time.perf_counter()
        data = simulate_data(sc)
        data.export(out / "data.raw")
        summary["stages"][stage] = round(time.perf_counter() - t0, 3)

        stage = "reconstruction"
        t0 = time.perf_counter()
        rec, info = reconstruct(sc, data, tables)
        save_field(out / "reconstruction.raw", rec)
        summary["stages"][stage] = round(time.perf_counter() - t0, 3)

        stage = "metrics"
        t0 = time.perf_counter()
        report = edge_report(sc, rec, info["window"])
        report.write_csv(out / "edges.csv")
        m = sc.config["metrics"]
        summary["edges"] = report.summary(float(m["visible_threshold"]), float(m["invisible_threshold"]))
        diff = rec.values - sc.phantom.field.values
        summary["relative_l2_vs_phantom"] = float(np.linalg.norm(diff) / np.linalg.norm(sc.phantom.field.values))
        _write_fans(sc, out / "visibility_fans.csv")
        if sc.config["pipeline"] == "patches":
            info["system"].export_csv(out / "patch_profiles.csv")
            info["system"].export_ranges(out / "patch_ranges.csv")
            summary["patches"] = info["system"].partition_report()
        if m.get("cross_term") and sc.config["pipeline"] == "hyperplane":
            rows = _cross_term(sc, info["pairs"], info["window"], rng)
            write_residual_csv(rows, out / "cross_term.csv")
            summary["cross_term"] = {"ratios": {str(r["k"]): r["ratio"] for r in rows},
                                     "exponent": decay_exponent(rows)}
        summary["stages"][stage] = round(time.perf_counter() - t0, 3)
        summary["passed"] = bool(summary["edges"]["visible_pass"] and summary["edges"]["invisible_pass"])
    except ConjugatePointError as exc:
        log.error("stage %s refused: %s", stage, exc)
        summary["error"] = {"stage": stage, "message": str(exc), "t": exc.t}
        status = EXIT_REFUSED
    except Exception as exc:  # noqa: BLE001 - any stage failure must be reported, artifacts kept
        log.exception("stage %s failed", stage)
        summary["error"] = {"stage": stage, "message": f"{type(exc).__name__}: {exc}"}
        status = EXIT_STAGE
    finally:
        summary["status"] = status
        (out / "summary.json").write_text(json.dumps(_json_safe(summary), indent=2, sort_keys=True))
        log.removeHandler(handler)
        handler.close()
    return status, out


def _write_fans(sc: Scenario, path, n_points: int = 5) -> None:
    """Visible directions at a few probe points (the phantom's edge samples), for fan diagrams."""
    e = sc.phantom.edges
    if len(e) == 0:
        return
    pick = e.points[np.linspace(0, len(e) - 1, n_points).astype(int)]
    n_dirs = int(sc.disc["n_dirs"])
    ang = 2 * np.pi * np.arange(n_dirs) / n_dirs
    D = np.stack([np.cos(ang), np.sin(ang)], axis=-1)
    Y = np.repeat(pick, n_dirs, axis=0)
    E = np.tile(D, (len(pick), 1))
    seen = np.zeros(len(Y))
    for s in (1, -1):
        ev = trace_crossings(sc.c, sc.geometry, Y, E, s, dt=5e-3)
        ok = (np.abs(ev.xi_normal) >= GLANCING_THRESHOLD) & sc.geometry.in_measured_set(ev.w)
        np.maximum.at(seen, ev.ray[ok], 1.0)
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "y", "angle", "visible"])
        for i in range(len(Y)):
            w.writerow([round(Y[i, 0], 6), round(Y[i, 1], 6), round(ang[i % n_dirs], 6), int(seen[i])])


def metrics_from_dir(directory, source=None) -> dict:
    """Recompute the edge metrics from the saved reconstruction and the saved config."""
    from .fields import load_field

    directory = Path(directory)
    cfg = json.loads((directory / "config.json").read_text()) if source is None else load_config(source)
    sc = validate(cfg)
    rec = load_field(directory / "reconstruction.raw")
    window = _patch_system(sc) if sc.config["pipeline"] == "patches" else _window(sc)
    report = edge_report(sc, rec, window)
    m = sc.config["metrics"]
    report.write_csv(directory / "edges.csv")
    return report.summary(float(m["visible_threshold"]), float(m["invisible_threshold"]))


# ---------------------------------------------------------------------------
# Plots


def export_plots(directory) -> tuple[list, list]:
    """Write PNG figures for whatever artifacts are present; returns (images, warnings)."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    from .fields import load_field

    directory = Path(directory)
    images, warnings = [], []

    def field_or_warn(name):
        p = directory / f"{name}.raw"
        if not p.exists():
            warnings.append(f"missing artifact {name}.raw")
            return None
        return load_field(p)

    def save(fig, name):
        path = directory / name
        fig.savefig(path, dpi=90, bbox_inches="tight")
        plt.close(fig)
        images.append(path)

    ph = field_or_warn("phantom")
    rec = field_or_warn("reconstruction")
    for name, f in (("phantom", ph), ("reconstruction", rec)):
        if f is not None:
            fig, ax = plt.subplots(figsize=(5, 5))
            lo, hi = f.grid.origin, f.grid.upper
            ax.imshow(f.values.T, origin="lower", cmap="gray", extent=[lo[0], hi[0], lo[1], hi[1]])
            ax.set_title(name)
            save(fig, f"{name}.png")
    if ph is not None and rec is not None:
        fig, ax = plt.subplots(figsize=(5, 5))
        lo, hi = ph.grid.origin, ph.grid.upper
        ax.imshow(np.abs(rec.values - ph.values).T, origin="lower", cmap="gray", extent=[lo[0], hi[0], lo[1], hi[1]])
        ax.set_title("|reconstruction - phantom|")
        save(fig, "difference.png")
    edges = directory / "edges.csv"
    if edges.exists() and rec is not None:
        rows = list(csv.DictReader(open(edges)))
        fig, ax = plt.subplots(figsize=(5, 5))
        lo, hi = rec.grid.origin, rec.grid.upper
        ax.imshow(rec.values.T, origin="lower", cmap="gray", extent=[lo[0], hi[0], lo[1], hi[1]])
        colors = {"visible": "tab:green", "invisible": "tab:red", "boundary": "tab:orange", "unknown": "tab:blue"}
        for r in rows:
            ax.plot(float(r["x"]), float(r["y"]), "o", ms=4, color=colors.get(r["visibility"], "k"))
        ax.set_title("edge segments (green visible, red invisible)")
        save(fig, "edges.png")
    elif not edges.exists():
        warnings.append("missing artifact edges.csv")
    fans = directory / "visibility_fans.csv"
    if fans.exists():
        rows = list(csv.DictReader(open(fans)))
        pts = sorted({(float(r["x"]), float(r["y"])) for r in rows})
        fig, axes = plt.subplots(1, len(pts), figsize=(3 * len(pts), 3), subplot_kw={"projection": "polar"})
        axes = np.atleast_1d(axes)
        for ax, p in zip(axes, pts):
            sel = [r for r in rows if (float(r["x"]), float(r["y"])) == p]
            a = np.array([float(r["angle"]) for r in sel])
            v = np.array([float(r["visible"]) for r in sel])
            ax.bar(a, v, width=2 * np.pi / len(a), color="tab:green", alpha=0.7)
            ax.set_yticks([])
            ax.set_title(f"({p[0]:.2f}, {p[1]:.2f})", fontsize=8)
        save(fig, "visibility_fans.png")
    else:
        warnings.append("missing artifact visibility_fans.csv")
    ct = directory / "cross_term.csv"
    if ct.exists():
        rows = list(csv.DictReader(open(ct)))
        k = np.array([float(r["k"]) for r in rows])
        ratio = np.array([float(r["ratio"]) for r in rows])
        fig, ax = plt.subplots(figsize=(5, 4))
        ax.loglog(k, np.maximum(ratio, 1e-16), "o-")
        good = ratio > 0
        slope = np.polyfit(np.log(k[good]), np.log(ratio[good]), 1)[0] if good.sum() >= 2 else float("nan")
        ax.set_xlabel("carrier k")
        ax.set_ylabel("cross-term ratio")
        ax.set_title(f"cross-term decay, fitted slope {slope:.2f}")
        save(fig, "cross_term.png")
    profiles = directory / "patch_profiles.csv"
    if profiles.exists():
        rows = list(csv.reader(open(profiles)))
        head, body = rows[0], np.array(rows[1:], float)
        fig, ax = plt.subplots(figsize=(6, 3))
        for i, name in enumerate(head[1:], start=1):
            ax.plot(body[:, 0], body[:, i], label=name, lw=2 if name == "sum" else 1)
        ax.legend(fontsize=7)
        ax.set_xlabel("w'")
        save(fig, "patch_profiles.png")
    for w in warnings:
        log.warning(w)
    return images, warnings
