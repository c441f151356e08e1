"""Wave packets inside and outside the visible cone.

A packet whose direction is near the hyperplane normal is recovered by the
parametrix with gain close to one; a packet travelling almost parallel to
the hyperplane never reaches the measured window in time and is lost.
Also prints where the ray oracle says each packet's rays cross the surface.
"""

import numpy as np

from tatrecon.fields import Grid, ScalarField, halfspace_geometry, make_sound_speed
from tatrecon.fio import FIOPair, build_parametrix, data_times, forward_data, make_window, wave_packet
from tatrecon.optics import build_phase_tables, hyperplane_surface
from tatrecon.rays import endpoint_map

g = halfspace_geometry()
grid = Grid.from_bounds((-0.5, -1.05), (0.5, -0.05), (128, 128))
h = grid.spacing[0]
c = make_sound_speed({"kind": "radial-bump", "center": [0.0, -0.55], "radius": 0.4, "amplitude": 0.05}, grid, g)
surf = hyperplane_surface((-1.0, 1.0), int(2 / (0.8 * h)) + 1)
times = data_times(1.0, 0.8 * h)
tables = build_phase_tables(c, hyperplane_surface((-1.0, 1.0), 51), 64, 1.0, 41)
pairs = {s: FIOPair(s, grid, tables[s], surf, times) for s in (1, -1)}
window = make_window(g, 1.0, 0.15, 0.15)
par = build_parametrix(pairs, c, g, window, T=1.0)

center = (0.0, -0.4)
for label, angle in (("near normal", np.pi / 2 + 0.2), ("near tangent", 0.1)):
    d = np.array([np.cos(angle), np.sin(angle)])
    p = wave_packet(grid, center, d, 60.0, 0.06)
    rec = par.apply(forward_data(pairs, ScalarField(grid, p)).physical()).values
    gain = float(np.sum(rec * p) / np.sum(p * p))
    hits = [endpoint_map((np.array(center), s * d), 1, c, g) for s in (1, -1)]
    where = [(round(r["w"], 3), round(r["t"], 3)) if r else None for r in hits]
    print(f"{label:13s} gain {gain:6.3f}  crossings (w, t) {where}")
