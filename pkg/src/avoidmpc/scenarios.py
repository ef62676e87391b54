"""Scenario configuration: YAML parsing, validation, assembly and closed-loop runs.

Configs are written in physical coordinates. The prediction model works in
deviations from the linearisation point ``(x_eq, u_eq)``, so constraints,
targets and regions are shifted on the way in and logs shifted back on the
way out.
"""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
import yaml

from .avoidance import (AvoidanceSpec, EllipsoidUnionComplement, HalfspaceIntersection,
                        Sphere, region_from_dict)
from .controller import ControllerState, StepRecord, simulate
from .exceptions import AvoidMPCError, ConfigError, InitialInfeasible, ScenarioInfeasible
from .model import (LinearModel, SteadyStateMap, check_rank_condition, numerical_rank,
                    observability_matrix, reachable_output_set)
from .ocp import OcpTemplate, SolverOptions
from .plants import BallPlatePlant, QuadrotorPlant, RangeSensor, WorldMap, integrate, sensor_scan
from .polytope import Polytope
from .terminal import (INVARIANT_SET, TERMINAL_EQUALITY, invariant_set_ingredients,
                       terminal_equality_ingredients)

log = logging.getLogger(__name__)

PLANTS = ("linear", "ball_plate", "quadrotor")


def shipped_configs() -> dict:
    """Name -> path of the configs bundled with the package."""
    root = resources.files("avoidmpc") / "configs"
    return {p.name[:-5]: Path(str(p)) for p in root.iterdir() if p.name.endswith(".yaml")}


def load_config(source) -> dict:
    """Read a YAML config from a path or a shipped config name."""
    if isinstance(source, dict):
        return dict(source)
    path = Path(source)
    if not path.exists():
        shipped = shipped_configs()
        if str(source) in shipped:
            path = shipped[str(source)]
        else:
            raise ConfigError("path", f"no such config: {source}")
    try:
        cfg = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError("yaml", str(exc)) from exc
    if not isinstance(cfg, dict):
        raise ConfigError("yaml", "top level must be a mapping")
    cfg.setdefault("name", path.stem)
    return cfg


# ---------------------------------------------------------------------------
def _matrix(cfg, key, shape=None):
    if key not in cfg:
        raise ConfigError(key, "missing")
    val = cfg[key]
    try:
        if isinstance(val, dict):
            if "diag" not in val:
                raise ConfigError(key, "mapping form needs a 'diag' entry")
            M = np.diag(np.asarray(val["diag"], float))
        else:
            M = np.atleast_2d(np.asarray(val, float))
    except (TypeError, ValueError) as exc:
        raise ConfigError(key, f"not numeric: {exc}") from exc
    if shape is not None and M.shape != shape:
        raise ConfigError(key, f"expected shape {shape}, got {M.shape}")
    return M


def _vector(cfg, key, size=None):
    if key not in cfg:
        raise ConfigError(key, "missing")
    try:
        v = np.asarray(cfg[key], float).reshape(-1)
    except (TypeError, ValueError) as exc:
        raise ConfigError(key, f"not numeric: {exc}") from exc
    if size is not None and v.size != size:
        raise ConfigError(key, f"expected {size} entries, got {v.size}")
    return v


def _number(cfg, key, default=None):
    if key not in cfg:
        if default is None:
            raise ConfigError(key, "missing")
        return default
    try:
        return float(cfg[key])
    except (TypeError, ValueError) as exc:
        raise ConfigError(key, "not a number") from exc


def shift_region(region, offset):
    """Express a region in coordinates where ``offset`` is the origin."""
    off = np.asarray(offset, float)
    if region.output_index is not None:
        off = off[list(region.output_index)]
    if isinstance(region, Sphere):
        return dataclasses.replace(region, center=region.center - off)
    if isinstance(region, EllipsoidUnionComplement):
        return dataclasses.replace(region, centers=tuple(c - off for c in region.centers))
    if isinstance(region, HalfspaceIntersection):
        return dataclasses.replace(region, offsets=region.offsets - region.normals @ off,
                                   center=region.center - off)
    raise TypeError(f"cannot shift {type(region).__name__}")


@dataclass
class Scenario:
    name: str
    config: dict
    plant: object
    template: OcpTemplate
    x_eq: np.ndarray
    u_eq: np.ndarray
    y_eq: np.ndarray
    x0: np.ndarray                  # physical
    targets: list                   # [(time, y_physical)]
    Ts: float
    steps: int
    options: SolverOptions
    static_regions: list = field(default_factory=list)   # model coordinates
    mu: list = field(default_factory=list)
    epsilon: float = 2.0
    world: WorldMap | None = None
    sensor: RangeSensor | None = None
    sigma: float = 1.0
    substeps: int = 1
    S: float = 0.0

    @property
    def model(self) -> LinearModel:
        return self.template.model

    def target_at(self, k):
        t = k * self.Ts
        y = self.targets[0][1]
        for time, val in self.targets:
            if time <= t + 1e-12:
                y = val
        return y - self.y_eq

    def regions_at(self, k, x_model):
        if self.sensor is not None:
            pos = (x_model + self.x_eq)[:3]
            regs = sensor_scan(self.world, pos, self.sensor, self.sigma, (0, 1, 2),
                               offset=self.y_eq[:3])
            if not regs:
                return AvoidanceSpec(epsilon=self.epsilon, S=self.S)
            return AvoidanceSpec(regs, [self.mu[0]] * len(regs), self.epsilon, self.S)
        if not self.static_regions:
            return AvoidanceSpec(epsilon=self.epsilon, S=self.S)
        return AvoidanceSpec(self.static_regions, self.mu, self.epsilon, self.S)

    def plant_step(self, x_model, u_model):
        if self.plant is None:
            return self.model.step(x_model, u_model)
        x = integrate(self.plant, x_model + self.x_eq, u_model + self.u_eq, self.Ts,
                      self.substeps)
        return x - self.x_eq

    def to_physical(self, rec: StepRecord) -> StepRecord:
        return dataclasses.replace(
            rec, x=rec.x + self.x_eq, u=rec.u + self.u_eq, y=rec.y + self.y_eq,
            y_t=rec.y_t + self.y_eq, x_a=rec.x_a + self.x_eq, u_a=rec.u_a + self.u_eq,
            y_a=rec.y_a + self.y_eq)

    def controller(self) -> ControllerState:
        return ControllerState(self.template, self.options)


@dataclass
class RunResult:
    scenario: Scenario
    records: list              # model coordinates
    sensed: list               # per step, list of spheres (physical coordinates)

    @property
    def physical(self) -> list:
        return [self.scenario.to_physical(r) for r in self.records]

    def clearances(self) -> np.ndarray:
        """Per step, distance from the position to the nearest sensed sphere minus
        its nominal radius (``inf`` when nothing was sensed)."""
        out = []
        for rec, spheres in zip(self.physical, self.sensed):
            if not spheres:
                out.append(np.inf)
                continue
            out.append(min(np.linalg.norm(rec.y[:3] - s.center) - s.radius for s in spheres))
        return np.array(out)

    def summary(self) -> dict:
        phys = self.physical
        final = phys[-1]
        iters = np.array([r.iterations for r in self.records])
        times = np.array([r.solve_time for r in self.records])
        clr = self.clearances() if self.scenario.sensor is not None else np.array([np.inf])
        return {
            "scenario": self.scenario.name,
            "steps": len(self.records),
            "final_output_error": float(np.linalg.norm(final.y - final.y_t)),
            "final_artificial_output": final.y_a.tolist(),
            "min_obstacle_clearance": float(np.min(clr)),
            "feasibility_rate": float(np.mean([r.feasible for r in self.records])),
            "solver_iterations_mean": float(iters.mean()),
            "solver_iterations_max": int(iters.max()),
            "fallback_steps": int(sum(r.solver_status == "fallback_candidate"
                                      for r in self.records)),
            "max_measured_state_violation": float(max(r.state_violation
                                                      for r in self.records)),
            "solve_time_mean": float(times.mean()),
            "solve_time_max": float(times.max()),
        }


# ---------------------------------------------------------------------------
def _build_model(cfg, kind, Ts):
    """Truth plant (``None`` for linear configs), prediction model and equilibrium."""
    if kind not in PLANTS:
        raise ConfigError("plant", f"unknown plant {kind!r}; choose from {PLANTS}")
    params = cfg.get("plant_params", {}) or {}
    try:
        if kind == "linear":
            mcfg = cfg.get("model") or {}
            A = _matrix(mcfg, "A")
            B = _matrix(mcfg, "B")
            C = _matrix(mcfg, "C")
            D = _matrix(mcfg, "D") if "D" in mcfg else None
            try:
                model = LinearModel(A, B, C, D)
            except AvoidMPCError as exc:
                raise ConfigError("model", str(exc)) from exc
            plant = None
            x_eq, u_eq = np.zeros(model.n), np.zeros(model.m)
        elif kind == "ball_plate":
            plant = BallPlatePlant(**params)
            x_eq, u_eq = plant.equilibrium()
            model = plant.linear_model(Ts)
        else:
            plant = QuadrotorPlant(**{k: (tuple(v) if isinstance(v, list) else v)
                                      for k, v in params.items()})
            pos = _vector(cfg, "linearization_position", 3) if "linearization_position" in cfg \
                else np.zeros(3)
            x_eq, u_eq = plant.equilibrium(pos)
            model = plant.linear_model(Ts, pos)
    except TypeError as exc:
        raise ConfigError("plant_params", str(exc)) from exc
    return plant, model, x_eq, u_eq


def build_scenario(cfg) -> Scenario:
    cfg = load_config(cfg)
    name = cfg.get("name", "scenario")
    kind = cfg.get("plant", "linear")
    if kind not in PLANTS:
        raise ConfigError("plant", f"unknown plant {kind!r}; choose from {PLANTS}")
    Ts = _number(cfg, "Ts")
    if Ts <= 0:
        raise ConfigError("Ts", "must be positive")
    N = int(_number(cfg, "N"))
    if N < 1:
        raise ConfigError("N", "must be >= 1")
    plant, model, x_eq, u_eq = _build_model(cfg, kind, Ts)
    n, m, p = model.n, model.m, model.p
    y_eq = plant.output(x_eq, u_eq) if plant is not None else np.zeros(p)

    Q = _matrix(cfg, "Q", (n, n))
    R = _matrix(cfg, "R", (m, m))
    kappa = _matrix(cfg, "kappa", (p, p))
    lam = _number(cfg, "lambda", 0.99)
    if not 0 < lam < 1:
        raise ConfigError("lambda", "must lie in (0, 1)")
    eps = _number(cfg, "epsilon", 2.0)
    if eps != 2:
        raise ConfigError("epsilon", "only epsilon = 2 is supported by the solver")

    ccfg = cfg.get("constraints")
    if not isinstance(ccfg, dict):
        raise ConfigError("constraints", "missing")
    xl = _vector(ccfg, "state_lower", n)
    xu = _vector(ccfg, "state_upper", n)
    ul = _vector(ccfg, "input_lower", m)
    uu = _vector(ccfg, "input_upper", m)
    if np.any(xl >= xu) or np.any(ul >= uu):
        raise ConfigError("constraints", "lower bounds must be below upper bounds")
    Z = Polytope.box(np.concatenate([xl - x_eq, ul - u_eq]),
                     np.concatenate([xu - x_eq, uu - u_eq]))
    if not Z.contains(np.zeros(n + m)):
        raise ConfigError("constraints", "the linearisation point violates the constraints")

    mode = cfg.get("terminal", INVARIANT_SET)
    try:
        if mode == INVARIANT_SET:
            term = invariant_set_ingredients(model, Q, R, Z, lam,
                                             max_iter=int(cfg.get("omega_max_iter", 200)))
        elif mode == TERMINAL_EQUALITY:
            term = terminal_equality_ingredients(model, Z, lam, N, Q, R)
        else:
            raise ConfigError("terminal", f"unknown mode {mode!r}")
    except ConfigError:
        raise
    except AvoidMPCError as exc:
        raise ConfigError("terminal", str(exc)) from exc
    try:
        template = OcpTemplate(model, N, Q, R, term, Z, kappa, SteadyStateMap(model, Z, lam))
    except (ValueError, AvoidMPCError) as exc:
        raise ConfigError("weights", str(exc)) from exc

    x0 = _vector(cfg, "x0", n)
    tcfg = cfg.get("targets")
    if not tcfg:
        raise ConfigError("targets", "missing")
    targets = []
    for i, t in enumerate(tcfg):
        try:
            targets.append((float(t.get("time", 0.0)), np.asarray(t["y"], float).reshape(p)))
        except (KeyError, ValueError, AttributeError) as exc:
            raise ConfigError(f"targets[{i}]", f"needs 'time' and a {p}-vector 'y'") from exc
    targets.sort(key=lambda tv: tv[0])

    duration = _number(cfg, "duration")
    steps = int(round(duration / Ts))
    if abs(steps * Ts - duration) > 1e-9 * max(1.0, duration):
        raise ConfigError("duration", "must be a multiple of Ts")

    mu = cfg.get("mu", [])
    mu = [float(v) for v in (mu if isinstance(mu, list) else [mu])]
    static = []
    for i, rd in enumerate(cfg.get("regions", []) or []):
        try:
            static.append(shift_region(region_from_dict(rd), y_eq))
        except (KeyError, ValueError, TypeError) as exc:
            raise ConfigError(f"regions[{i}]", str(exc)) from exc
    if static and len(mu) not in (1, len(static)):
        raise ConfigError("mu", f"{len(mu)} weights for {len(static)} regions")
    if static and len(mu) == 1:
        mu = mu * len(static)
    world = sensor = None
    sigma = 1.0
    if "sensor" in cfg:
        scfg = cfg["sensor"]
        try:
            sensor = RangeSensor(float(scfg.get("range", 4.0)), float(scfg.get("radius", 2.0)))
        except ValueError as exc:
            raise ConfigError("sensor", str(exc)) from exc
        sigma = float(scfg.get("sigma", 1.0))
        if sigma < 1:
            raise ConfigError("sensor.sigma", "must be >= 1")
        try:
            world = WorldMap.from_config(cfg.get("map", {}))
        except (ValueError, KeyError) as exc:
            raise ConfigError("map", str(exc)) from exc
        if not mu:
            raise ConfigError("mu", "sensor-driven regions need a weight")
    if (static or sensor) and not mu:
        raise ConfigError("mu", "missing")

    opts = SolverOptions(multistart=2 if cfg.get("multistart", False) else 0,
                         seed=int(cfg.get("seed", 0)))
    return Scenario(name=name, config=cfg, plant=plant, template=template, x_eq=x_eq,
                    u_eq=u_eq, y_eq=y_eq, x0=x0, targets=targets, Ts=Ts, steps=steps,
                    options=opts, static_regions=static, mu=mu, epsilon=eps, world=world,
                    sensor=sensor, sigma=sigma, substeps=int(cfg.get("integrator_substeps", 1)))


def run(scenario: Scenario, steps: int | None = None, callback=None) -> RunResult:
    """Closed loop from the configured initial state."""
    state = scenario.controller()
    sensed = []

    def regions(k, x):
        spec = scenario.regions_at(k, x)
        if scenario.sensor is not None:
            sensed.append([dataclasses.replace(s, center=s.center + scenario.y_eq[:3])
                           for s in spec.regions])
        else:
            sensed.append([])
        return spec

    try:
        recs = simulate(state, scenario.plant_step, scenario.x0 - scenario.x_eq,
                        steps or scenario.steps, scenario.target_at, regions, callback)
    except InitialInfeasible as exc:
        raise ScenarioInfeasible(f"{scenario.name}: initial state infeasible ({exc})") from exc
    return RunResult(scenario, recs, sensed)


# ---------------------------------------------------------------------------
@dataclass
class ValidationReport:
    issues: list = field(default_factory=list)
    warnings: list = field(default_factory=list)
    info: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return not self.issues


def validate_config(source) -> ValidationReport:
    """Structural checks on a config; raises :class:`ConfigError` on parse errors."""
    cfg = load_config(source)
    rep = ValidationReport()
    for key in ("Q", "R", "kappa"):
        if key in cfg:
            M = _matrix(cfg, key)
            if M.shape[0] != M.shape[1]:
                rep.issues.append(f"{key}: not square")
                continue
            ev = np.linalg.eigvalsh(0.5 * (M + M.T))
            if key in ("R", "kappa") and ev.min() <= 0:
                rep.issues.append(f"{key}: must be positive definite (smallest eigenvalue "
                                  f"{ev.min():.3g})")
            if key == "Q" and ev.min() < 0:
                rep.issues.append("Q: must be positive semidefinite")
    lam = cfg.get("lambda", 0.99)
    if not 0 < float(lam) < 1:
        rep.issues.append("lambda: must lie in (0, 1)")
    if rep.issues:
        return rep
    _, mdl, _, _ = _build_model(cfg, cfg.get("plant", "linear"), _number(cfg, "Ts"))
    Q = _matrix(cfg, "Q", (mdl.n, mdl.n))
    if numerical_rank(observability_matrix(mdl.A, _psd_sqrt(Q))) < mdl.n:
        rep.issues.append("Q: (Q^1/2, A) is not observable")
        return rep
    sc = build_scenario(cfg)
    rank = check_rank_condition(mdl)
    rep.info["rank_condition"] = rank._asdict()
    if not rank.ok:
        rep.warnings.append(f"rank condition fails (rank {rank.rank} < n + p = "
                            f"{mdl.n + mdl.p}): not every output is a steady output")
    if rank.kind == "thin":
        rep.warnings.append("thin system (p > m): only a subspace of targets can be tracked "
                            "without offset")
    rep.info["terminal"] = sc.template.terminal.mode
    if not sc.template.terminal.converged:
        rep.warnings.append("invariant-set iteration stopped at its cap")
    if not sc.template.Z.contains(np.concatenate([sc.x0 - sc.x_eq, np.zeros(mdl.m)])):
        rep.issues.append("x0: outside the state constraints")
    Yr = reachable_output_set(sc.template.steady)
    rep.info["reachable_outputs_box"] = [b.tolist() for b in Yr.bounding_box()]
    return rep


def _psd_sqrt(M):
    w, V = np.linalg.eigh(0.5 * (M + M.T))
    return V @ np.diag(np.sqrt(np.clip(w, 0, None))) @ V.T
