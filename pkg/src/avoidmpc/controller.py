"""Receding-horizon loop, per-step records and the runtime monitors."""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field, replace
from typing import Callable, NamedTuple

import numpy as np

from .avoidance import AvoidanceSpec
from .exceptions import InfeasibleProblem, InitialInfeasible
from .ocp import (FALLBACK, FEAS_TOL, OcpSolution, OcpTemplate, SolverOptions, _make_solution,
                  eval_cost, is_feasible, max_violation, project_feasible, shift_decision,
                  solve)

log = logging.getLogger(__name__)


@dataclass
class ControllerState:
    template: OcpTemplate
    options: SolverOptions = field(default_factory=SolverOptions)
    last_solution: OcpSolution | None = None
    step_index: int = 0
    last_x: np.ndarray | None = None
    last_u: np.ndarray | None = None
    last_y_t: np.ndarray | None = None


@dataclass
class StepRecord:
    k: int
    x: np.ndarray
    u: np.ndarray
    y: np.ndarray
    y_t: np.ndarray
    x_a: np.ndarray
    u_a: np.ndarray
    y_a: np.ndarray
    V: float
    V_dyn: float
    V_of: float
    V_av: float
    stage: float
    shifted_candidate_value: float = float("nan")
    candidate_av: float = float("nan")
    candidate_nominal_value: float = float("nan")
    feasible: bool = True
    solver_status: str = ""
    iterations: int = 0
    n_regions: int = 0
    repaired: bool = False
    candidate_violation: float = float("nan")
    state_violation: float = 0.0
    solve_time: float = 0.0

    @property
    def model_gap(self) -> float:
        """Value change of the candidate caused by the measured state differing
        from the model's prediction (zero for a perfect model)."""
        if np.isnan(self.candidate_nominal_value):
            return 0.0
        return self.shifted_candidate_value - self.candidate_nominal_value


CSV_COLUMNS = ("k", "x", "u", "y", "y_t", "x_a", "u_a", "y_a", "V", "V_dyn", "V_of",
               "V_av", "stage", "shifted_candidate_value", "candidate_av",
               "candidate_nominal_value", "feasible", "solver_status", "iterations",
               "n_regions", "repaired", "candidate_violation", "state_violation")
# wall-clock solve times stay out of the log so that repeated runs give identical files


def control_step(state: ControllerState, x, y_t, regions: AvoidanceSpec | None = None):
    """One sample of the receding-horizon law: solve, apply the first input.

    From the second call on the problem is warm-started with the shifted
    previous solution. When the measured state differs from the prediction
    the shifted decision is projected back onto the constraints first.
    Returns ``(u, record)``.
    """
    tpl = state.template
    x = np.asarray(x, float)
    y_t = np.asarray(y_t, float).reshape(-1)
    regions = regions if regions is not None else AvoidanceSpec()
    problem = tpl.problem(x, y_t, regions)
    rec_extra = {}
    t0 = time.perf_counter()
    feasible = True
    if state.last_solution is None:
        try:
            sol = solve(problem, None, state.options)
        except InfeasibleProblem as exc:
            raise InitialInfeasible(str(exc)) from exc
    else:
        prev = state.last_solution
        cand = shift_decision(problem, prev)
        repaired = False
        if max_violation(problem, cand, include_initial=False) > FEAS_TOL:
            repaired = True
            try:
                cand = project_feasible(problem, cand, check_initial=False)
            except InfeasibleProblem:
                cand = None
        if cand is None:
            # state left the feasible region (model error); keep the old plan going
            feasible = False
            u_seq = np.vstack([prev.u_seq[1:], prev.u_a[None, :]])
            z = tpl.join(u_seq, prev.x_a, prev.u_a)
            sol = _make_solution(problem, z, FALLBACK, 0, [], [])
        else:
            cand_val = eval_cost(problem, cand)
            rec_extra["shifted_candidate_value"] = cand_val.total
            rec_extra["candidate_av"] = cand_val.avoidance
            if state.last_x is not None:
                # same shift from the state the model predicted
                x_nom = tpl.model.step(state.last_x, state.last_u)
                nominal = replace(problem, x0=x_nom)
                z_nom = shift_decision(nominal, prev)
                nom_val = eval_cost(nominal, z_nom)
                rec_extra["candidate_violation"] = max_violation(nominal, z_nom)
                rec_extra["candidate_nominal_value"] = nom_val.total
                rec_extra["candidate_av"] = nom_val.avoidance
            rec_extra["repaired"] = repaired
            sol = solve(problem, cand, state.options)
    elapsed = time.perf_counter() - t0
    u = sol.u_seq[0].copy()
    mdl = tpl.model
    dx = x - sol.x_a
    du = u - sol.u_a
    stage = float(dx @ tpl.Q @ dx + du @ tpl.R @ du)
    x0_rows = tpl.x0_rows
    if x0_rows.size:
        rec_extra["state_violation"] = float(max(0.0, np.max(x0_rows @ x - tpl.x0_rhs)))
    rec = StepRecord(k=state.step_index, x=x.copy(), u=u, y=mdl.output(x, u), y_t=y_t.copy(),
                     x_a=sol.x_a, u_a=sol.u_a, y_a=sol.y_a, V=sol.cost_total,
                     V_dyn=sol.cost_dynamic, V_of=sol.cost_offset, V_av=sol.cost_avoidance,
                     stage=stage, feasible=feasible, solver_status=sol.solver_status,
                     iterations=sol.iterations, n_regions=len(regions), solve_time=elapsed,
                     **rec_extra)
    state.last_solution = sol
    state.last_x, state.last_u, state.last_y_t = x.copy(), u, y_t.copy()
    state.step_index += 1
    return u, rec


# ------------------------------------------------------------------ monitors
class ISSReport(NamedTuple):
    delta: np.ndarray          # V*(k+1) - V*(k)
    bound: np.ndarray          # -stage(k) + dV_av + model gap
    checked: np.ndarray        # False where the target changed
    violations: list           # steps k where delta > bound + tol
    avoidance_vanishes: bool   # V_av settles at zero
    error_converged: bool      # |y - y_t| settles at zero
    plateau: bool              # error settles at a nonzero value
    final_error: float

    @property
    def ok(self) -> bool:
        return not self.violations


def iss_diagnostics(records: list, S: float = 0.0, tol=1e-6, tail=0.1,
                    error_tol=1e-3) -> ISSReport:
    """Check the one-step decrease inequality on logged quantities.

    For consecutive steps with the same target::

        V*(k+1) - V*(k) <= -stage(k) + (V_av(candidate, k+1) - V_av*(k)) + gap(k+1) + tol

    where ``gap`` is the candidate's value change caused by model error
    (zero when the plant is the prediction model). ``S`` is reported
    alongside (``V*(k) - S`` is the shifted value function) but does not
    enter the check. Convergence verdicts look at the last ``tail`` fraction
    of the run.
    """
    if len(records) < 2:
        raise ValueError("need at least two records")
    K = len(records) - 1
    delta = np.zeros(K)
    bound = np.zeros(K)
    checked = np.ones(K, dtype=bool)
    violations = []
    for k in range(K):
        r0, r1 = records[k], records[k + 1]
        delta[k] = r1.V - r0.V
        if not np.array_equal(r0.y_t, r1.y_t) or not r1.feasible or \
                np.isnan(r1.shifted_candidate_value):
            checked[k] = False
            bound[k] = np.nan
            continue
        bound[k] = -r0.stage + (r1.candidate_av - r0.V_av) + r1.model_gap
        if delta[k] > bound[k] + tol + 1e-10 * abs(r0.V):
            violations.append(r0.k)
    n_tail = max(1, int(np.ceil(tail * len(records))))
    last = records[-n_tail:]
    err = np.array([np.linalg.norm(r.y - r.y_t) for r in last])
    av = np.array([r.V_av for r in last])
    final_error = float(err[-1])
    converged = bool(np.all(err < error_tol))
    settled = bool(np.ptp(err) < max(error_tol, 1e-2 * final_error))
    return ISSReport(delta, bound, checked, violations, bool(np.all(av <= 1e-9)), converged,
                     (not converged) and settled, final_error)


def domain_of_attraction_probe(template: OcpTemplate, grid) -> np.ndarray:
    """Feasibility of the region-free problem at each initial state of ``grid``."""
    return np.array([is_feasible(template, x0) for x0 in np.atleast_2d(grid)])


# ---------------------------------------------------------------- closed loop
def simulate(state: ControllerState, plant: Callable, x0, steps: int,
             target: Callable | np.ndarray, regions: Callable | None = None,
             callback: Callable | None = None) -> list:
    """Run ``steps`` samples. ``plant(x, u)`` returns the next state in model
    coordinates; ``target(k)`` and ``regions(k, x)`` may vary over time."""
    target_fn = target if callable(target) else (lambda k, _t=np.asarray(target, float): _t)
    x = np.asarray(x0, float)
    records = []
    for k in range(steps):
        spec = regions(k, x) if regions is not None else None
        u, rec = control_step(state, x, target_fn(k), spec)
        records.append(rec)
        if callback is not None:
            callback(rec)
        x = np.asarray(plant(x, u), float)
    return records


def _fmt(v):
    if isinstance(v, np.ndarray):
        return " ".join(f"{e:.17g}" for e in v.ravel())
    if isinstance(v, float):
        return f"{v:.17g}"
    return str(v)


def write_records_csv(records: list, path) -> None:
    """One row per step; vector columns are space-separated (see docs/formats.md)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_COLUMNS)
        for r in records:
            w.writerow([_fmt(getattr(r, c)) for c in CSV_COLUMNS])


def read_records_csv(path) -> list:
    vec = {"x", "u", "y", "y_t", "x_a", "u_a", "y_a"}
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            kw = {}
            for c in CSV_COLUMNS:
                v = row[c]
                if c in vec:
                    kw[c] = np.array([float(s) for s in v.split()])
                elif c in ("k", "iterations", "n_regions"):
                    kw[c] = int(v)
                elif c in ("feasible", "repaired"):
                    kw[c] = v == "True"
                elif c == "solver_status":
                    kw[c] = v
                else:
                    kw[c] = float(v)
            out.append(StepRecord(**kw))
    return out
