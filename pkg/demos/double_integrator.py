"""Double integrator: reference switch and a one-dimensional obstacle.

The first run changes the target mid-flight from 3 to -8. The new target is outside
the admissible steady outputs, so the artificial reference stops at the bound, and
the optimal value keeps decreasing by at least the stage cost on every step apart
from the switch itself.

The second run places a forbidden interval between the start and the target; the
position settles before the interval instead of crossing it.

    python demos/double_integrator.py
"""

import numpy as np

from avoidmpc.controller import iss_diagnostics
from avoidmpc.scenarios import build_scenario, run

res = run(build_scenario("double_integrator_switch"))
recs = res.records
print("target switch")
for r0, r1 in zip(recs, recs[1:]):
    mark = "  <- target changed" if not np.array_equal(r0.y_t, r1.y_t) else ""
    if r1.k % 5 == 0 or mark:
        print(f"  k={r1.k:2d}  y={r1.y[0]:7.3f}  y_a={r1.y_a[0]:7.3f}  V={r1.V:10.3f}  "
              f"dV+stage={r1.V - r0.V + r0.stage:9.2e}{mark}")

res = run(build_scenario("double_integrator_obstacle"))
rep = iss_diagnostics(res.records)
print("\nobstacle")
print(f"  final position {res.physical[-1].y[0]:.3f}, target {res.physical[-1].y_t[0]:.3f}")
print(f"  decrease-inequality violations: {len(rep.violations)}")
