"""Quadrotor flying past pillars that a range sensor reports on the fly.

At each step the sensor turns the closest point of every box within range into a
spherical no-fly region, so the controller only knows about obstacles nearby. The
reduced course takes about a minute; pass ``full`` for the seven-box course (several
minutes).

    python demos/quadrotor.py [full]
"""

import sys

import numpy as np

from avoidmpc.plots import write_plots
from avoidmpc.scenarios import build_scenario, run

name = "quadrotor_full" if "full" in sys.argv[1:] else "quadrotor_reduced"
sc = build_scenario(name)


def report(rec):
    if rec.k % 250 == 0:
        print(f"  t={rec.k * sc.Ts:5.1f} s  position={np.round(rec.y[:3] + sc.y_eq[:3], 2)}  regions={rec.n_regions}")


res = run(sc, callback=report)
s = res.summary()
print(f"final distance to goal {s['final_output_error']:.3f} m")
print(f"smallest clearance to a sensed region {s['min_obstacle_clearance']:.3f} m")
print(f"feasible steps {100 * s['feasibility_rate']:.0f} %")
print("plots:", ", ".join(p.name for p in write_plots(res, f"demo_out/{name}")))
