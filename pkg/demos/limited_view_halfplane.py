"""Limited-view reconstruction under a hyperplane with constant speed.

Runs the bundled ``const-speed-halfplane`` scenario end to end: FDTD data on
|x'| <= 1 for t in [0, 1], the windowed parametrix, and the edge metric.
The disk's top and bottom edges (normals near vertical) are visible; its
side edges are not, and stay blurred in the reconstruction.

    python demos/limited_view_halfplane.py [output_dir]
"""

import json
import sys

from tatrecon.harness import export_plots, run_scenario

out = sys.argv[1] if len(sys.argv) > 1 else "runs/demo-halfplane"
status, path = run_scenario("const-speed-halfplane", out)
images, _ = export_plots(path)
summary = json.loads((path / "summary.json").read_text())
print(json.dumps(summary["edges"], indent=2))
print("figures:", *[p.name for p in images])
