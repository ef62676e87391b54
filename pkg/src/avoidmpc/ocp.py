"""Finite-horizon tracking problem with artificial references and avoidance penalties.

The decision vector is ``z = (u(0), ..., u(N-1), x_a, u_a)``; states are
eliminated by rollout from ``x0``. Everything that does not depend on
``(x0, y_t)`` is assembled once in an :class:`OcpTemplate`, so a receding
horizon loop only pays for the numerical iterations.

The solver is a sequential QP: the quadratic part of the cost is exact, the
squared-hinge penalties enter through a Gauss-Newton model, all affine
constraints stay hard, and a backtracking line search on the true cost keeps
the iterates monotone.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import block_diag

from .avoidance import AvoidanceSpec, penalty_value
from .exceptions import (DimensionError, InfeasibleProblem, PlantModelMismatch,
                         UnsupportedExponent)
from .model import LinearModel, SteadyStateMap
from .polytope import Polytope
from .qp import solve_qp
from .terminal import TerminalIngredients

log = logging.getLogger(__name__)

CONVERGED = "converged"
MAX_ITER = "max_iter"
FALLBACK = "fallback_candidate"

FEAS_TOL = 1e-6


@dataclass
class SolverOptions:
    max_iter: int = 100
    step_tol: float = 1e-8
    kkt_tol: float = 1e-6
    armijo: float = 1e-4
    min_alpha: float = 1e-10
    # relative cost decrease under which an accepted step counts as stagnation
    stall_tol: float = 1e-12
    regularization: float = 1e-9
    multistart: int = 0
    seed: int = 0


class OcpTemplate:
    """Everything of the finite-horizon problem except ``x0``, ``y_t`` and the regions."""

    def __init__(self, model: LinearModel, N: int, Q, R, terminal: TerminalIngredients,
                 Z: Polytope, kappa, steady: SteadyStateMap | None = None):
        if N < 1:
            raise ValueError("horizon N must be >= 1")
        n, m, p = model.n, model.m, model.p
        Q = np.atleast_2d(np.asarray(Q, float))
        R = np.atleast_2d(np.asarray(R, float))
        kappa = np.atleast_2d(np.asarray(kappa, float))
        if kappa.shape == (1, 1) and p > 1:
            kappa = kappa[0, 0] * np.eye(p)
        for name, M, k in (("Q", Q, n), ("R", R, m), ("kappa", kappa, p)):
            if M.shape != (k, k):
                raise DimensionError(f"{name} must be {k}x{k}, got {M.shape}")
        if np.min(np.linalg.eigvalsh(0.5 * (Q + Q.T))) < -1e-12:
            raise ValueError("Q must be positive semidefinite")
        if np.min(np.linalg.eigvalsh(0.5 * (R + R.T))) <= 0:
            raise ValueError("R must be positive definite")
        if np.min(np.linalg.eigvalsh(0.5 * (kappa + kappa.T))) <= 0:
            raise ValueError("kappa must be positive definite")
        if Z.dim != n + m:
            raise DimensionError(f"Z lives in R^{Z.dim}, expected R^{n + m}")
        self.model, self.N, self.Q, self.R, self.kappa = model, int(N), Q, R, kappa
        self.terminal, self.Z = terminal, Z
        self.steady = steady if steady is not None else SteadyStateMap(model, Z, terminal.lam)
        self._build()

    # ------------------------------------------------------------------ layout
    @property
    def n_decision(self) -> int:
        return self.N * self.model.m + self.model.n + self.model.m

    def split(self, z):
        N, n, m = self.N, self.model.n, self.model.m
        z = np.asarray(z, float)
        return z[:N * m].reshape(N, m), z[N * m:N * m + n], z[N * m + n:]

    def join(self, u_seq, x_a, u_a):
        return np.concatenate([np.asarray(u_seq, float).reshape(-1),
                               np.asarray(x_a, float).reshape(-1),
                               np.asarray(u_a, float).reshape(-1)])

    def _build(self):
        A, B, C, D = self.model.A, self.model.B, self.model.C, self.model.D
        N, n, m, p = self.N, self.model.n, self.model.m, self.model.p
        d = self.n_decision
        iu = N * m
        Sxa = np.zeros((n, d))
        Sxa[:, iu:iu + n] = np.eye(n)
        Sua = np.zeros((m, d))
        Sua[:, iu + n:] = np.eye(m)
        Su = []
        for j in range(N):
            S = np.zeros((m, d))
            S[:, j * m:(j + 1) * m] = np.eye(m)
            Su.append(S)
        # state rollout x(j) = Phi_j x0 + Gz_j z
        Phi = [np.eye(n)]
        Gz = [np.zeros((n, d))]
        for j in range(N):
            Phi.append(A @ Phi[-1])
            Gz.append(A @ Gz[-1] + B @ Su[j])
        self.Phi = np.array(Phi)
        self.Gz = np.array(Gz)
        self.Sxa, self.Sua, self.Su = Sxa, Sua, Su

        # quadratic residuals r = E z + Fx x0 + Fy y_t, cost r' W r
        E, Fx, Fy, W = [], [], [], []
        for j in range(N):
            E += [Gz[j] - Sxa, Su[j] - Sua]
            Fx += [Phi[j], np.zeros((m, n))]
            Fy += [np.zeros((n, p)), np.zeros((m, p))]
            W += [self.Q, self.R]
        E.append(Gz[N] - Sxa)
        Fx.append(Phi[N])
        Fy.append(np.zeros((n, p)))
        W.append(self.terminal.P)
        self._n_dyn_rows = sum(w.shape[0] for w in W)
        E.append(C @ Sxa + D @ Sua)
        Fx.append(np.zeros((p, n)))
        Fy.append(-np.eye(p))
        W.append(self.kappa)
        self.E = np.vstack(E)
        self.Fx = np.vstack(Fx)
        self.Fy = np.vstack(Fy)
        self.W = block_diag(*W)
        self.H_quad = 2.0 * self.E.T @ self.W @ self.E
        self.H_quad = 0.5 * (self.H_quad + self.H_quad.T)

        # outputs y(0..N) and y_a:  Y = Ty z + Ty0 x0
        Ty, Ty0 = [], []
        for j in range(N):
            Ty.append(C @ Gz[j] + D @ Su[j])
            Ty0.append(C @ Phi[j])
        Ty.append(C @ Gz[N] + D @ Sua)      # no input beyond the horizon: use u_a
        Ty0.append(C @ Phi[N])
        Ty.append(C @ Sxa + D @ Sua)
        Ty0.append(np.zeros((p, n)))
        self.Ty = np.array(Ty)
        self.Ty0 = np.array(Ty0)

        # inequalities  G z <= h - G0 x0 ; equalities  Aeq z = -Aeq0 x0
        Hx, Hu = self.Z.H[:, :n], self.Z.H[:, n:]
        G, G0, h = [], [], []
        x0_rows, x0_rhs = [], []
        for j in range(N):
            Gj = Hx @ Gz[j] + Hu @ Su[j]
            G0j = Hx @ Phi[j]
            for r in range(Gj.shape[0]):
                if np.linalg.norm(Gj[r]) < 1e-13:
                    x0_rows.append(G0j[r])
                    x0_rhs.append(self.Z.h[r])
                else:
                    G.append(Gj[r])
                    G0.append(G0j[r])
                    h.append(self.Z.h[r])
        lam = self.terminal.lam
        Gs = self.Z.H @ np.vstack([Sxa, Sua])
        G += list(Gs)
        G0 += [np.zeros(n)] * Gs.shape[0]
        h += list(lam * self.Z.h)
        Aeq = [self.steady.steady_matrix @ np.vstack([Sxa, Sua])]
        Aeq0 = [np.zeros((n, n))]
        if self.terminal.is_equality:
            Aeq.append(Gz[N] - Sxa)
            Aeq0.append(Phi[N])
        else:
            om = self.terminal.omega
            if om is None:
                raise ValueError("invariant-set terminal ingredients without a set")
            Gt = om.H @ np.vstack([Gz[N], Sxa, Sua])
            G0t = om.H[:, :n] @ Phi[N]
            G += list(Gt)
            G0 += list(G0t)
            h += list(om.h)
        self.G = np.array(G)
        self.G0 = np.array(G0)
        self.h = np.array(h)
        self.Aeq = np.vstack(Aeq)
        self.Aeq0 = np.vstack(Aeq0)
        self._Aeq_pinv = np.linalg.pinv(self.Aeq)
        self.x0_rows = np.array(x0_rows).reshape(-1, n)
        self.x0_rhs = np.array(x0_rhs)

    # --------------------------------------------------------------- utilities
    def constraint_rhs(self, x0):
        return self.h - self.G0 @ x0, -self.Aeq0 @ x0

    def outputs(self, z, x0):
        return np.einsum("kpd,d->kp", self.Ty, z) + np.einsum("kpn,n->kp", self.Ty0, x0)

    def problem(self, x0, y_t, avoidance: AvoidanceSpec | None = None) -> OcpProblem:
        return OcpProblem(self, x0, y_t, avoidance)


@dataclass(frozen=True)
class OcpProblem:
    template: OcpTemplate
    x0: np.ndarray
    y_t: np.ndarray
    avoidance: AvoidanceSpec | None = None

    def __post_init__(self):
        mdl = self.template.model
        x0 = np.asarray(self.x0, float).reshape(-1)
        y_t = np.asarray(self.y_t, float).reshape(-1)
        if x0.size != mdl.n or y_t.size != mdl.p:
            raise DimensionError("x0 or y_t has the wrong dimension")
        if not np.all(np.isfinite(x0)):
            raise ValueError("x0 must be finite")
        object.__setattr__(self, "x0", x0)
        object.__setattr__(self, "y_t", y_t)
        if self.avoidance is None:
            object.__setattr__(self, "avoidance", AvoidanceSpec())

    # field-style access to the template
    model = property(lambda self: self.template.model)
    N = property(lambda self: self.template.N)
    Q = property(lambda self: self.template.Q)
    R = property(lambda self: self.template.R)
    terminal = property(lambda self: self.template.terminal)
    Z = property(lambda self: self.template.Z)
    steady = property(lambda self: self.template.steady)
    kappa = property(lambda self: self.template.kappa)


@dataclass
class CostParts:
    total: float
    dynamic: float
    offset: float
    avoidance: float


@dataclass
class OcpSolution:
    u_seq: np.ndarray
    x_seq: np.ndarray
    y_seq: np.ndarray
    x_a: np.ndarray
    u_a: np.ndarray
    y_a: np.ndarray
    cost_total: float
    cost_dynamic: float
    cost_offset: float
    cost_avoidance: float
    solver_status: str
    decision: np.ndarray
    iterations: int = 0
    trace: list = field(default_factory=list)
    active_set: list = field(default_factory=list)

    def write_trace_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iteration", "merit", "step_norm", "kkt_residual", "alpha"])
            w.writerows(self.trace)


# ---------------------------------------------------------------------- cost
def _quad_residual(problem: OcpProblem, z):
    t = problem.template
    return t.E @ z + t.Fx @ problem.x0 + t.Fy @ problem.y_t


def _penalty_terms(problem: OcpProblem, z, with_jacobian=False):
    """Active residuals ``phi`` with weights ``mu`` (and their z-Jacobian rows)."""
    t = problem.template
    spec = problem.avoidance
    Y = t.outputs(z, problem.x0)
    phis, mus, rows = [], [], []
    for region, mu in zip(spec.regions, spec.mu):
        for k in range(Y.shape[0]):
            phi, dphi = region.residual(Y[k])
            if phi > 0.0:
                phis.append(phi)
                mus.append(mu)
                if with_jacobian:
                    rows.append(dphi @ t.Ty[k])
    jac = np.array(rows).reshape(-1, z.size) if with_jacobian else None
    return np.array(phis), np.array(mus), jac


def eval_cost(problem: OcpProblem, decision) -> CostParts:
    """Cost decomposition of a decision ``(u_seq, x_a, u_a)``."""
    t = problem.template
    z = np.asarray(decision, float)
    if z.size != t.n_decision:
        raise DimensionError(f"decision has {z.size} entries, expected {t.n_decision}")
    r = _quad_residual(problem, z)
    wr = t.W @ r
    k = t._n_dyn_rows
    dyn = float(r[:k] @ wr[:k])
    off = float(r[k:] @ wr[k:])
    spec = problem.avoidance
    if spec.regions:
        Y = t.outputs(z, problem.x0)
        av = 0.0
        for region, mu in zip(spec.regions, spec.mu):
            av += mu * sum(penalty_value(region, y, spec.epsilon) for y in Y)
    else:
        av = 0.0
    return CostParts(dyn + off + av, dyn, off, float(av))


def eval_gradient(problem: OcpProblem, decision) -> np.ndarray:
    """Gradient of the cost over ``(u_seq, x_a, u_a)``."""
    t = problem.template
    z = np.asarray(decision, float)
    if problem.avoidance.regions and problem.avoidance.epsilon != 2:
        raise UnsupportedExponent("gradients require epsilon = 2")
    g = 2.0 * t.E.T @ (t.W @ _quad_residual(problem, z))
    phi, mu, J = _penalty_terms(problem, z, with_jacobian=True)
    if phi.size:
        g += J.T @ (2.0 * mu * phi)
    return g


def constraint_residuals(problem: OcpProblem, decision) -> dict:
    """Largest violation of each constraint group (zero when satisfied).

    Does not involve ``y_t``: constraints are target independent.
    """
    t = problem.template
    z = np.asarray(decision, float)
    h, b = t.constraint_rhs(problem.x0)
    ineq = t.G @ z - h
    eq = t.Aeq @ z - b
    x0v = t.x0_rows @ problem.x0 - t.x0_rhs if t.x0_rows.size else np.zeros(0)
    return {
        "inequality": float(max(0.0, ineq.max(initial=0.0))),
        "equality": float(np.abs(eq).max(initial=0.0)),
        "initial_state": float(max(0.0, x0v.max(initial=0.0))),
    }


def max_violation(problem: OcpProblem, decision, include_initial=True) -> float:
    res = constraint_residuals(problem, decision)
    if not include_initial:
        res.pop("initial_state")
    return max(res.values())


# ---------------------------------------------------------------- candidates
def rollout(model: LinearModel, x0, u_seq):
    xs = [np.asarray(x0, float)]
    for u in u_seq:
        xs.append(model.A @ xs[-1] + model.B @ u)
    return np.array(xs)


def shift_decision(problem: OcpProblem, previous: OcpSolution):
    """Drop the first input, append the terminal law, keep the artificial pair."""
    K = problem.terminal.K
    x_a, u_a = previous.x_a, previous.u_a
    last = K @ (previous.x_seq[-1] - x_a) + u_a
    u_seq = np.vstack([previous.u_seq[1:], last[None, :]])
    return problem.template.join(u_seq, x_a, u_a)


def shifted_candidate(problem: OcpProblem, previous: OcpSolution, new_x0=None):
    """Shifted decision for the successor state.

    Raises :class:`PlantModelMismatch` when the decision violates a constraint
    by more than 1e-6 from ``new_x0`` (which cannot happen when the state
    evolved according to the prediction model).
    """
    if new_x0 is not None and not np.array_equal(np.asarray(new_x0, float), problem.x0):
        problem = replace(problem, x0=new_x0)
    z = shift_decision(problem, previous)
    viol = max_violation(problem, z)
    if viol > FEAS_TOL:
        raise PlantModelMismatch(f"shifted candidate violates constraints by {viol:.3e}")
    return z


def project_feasible(problem: OcpProblem, z_ref, weights=None, check_initial=True):
    """Closest decision to ``z_ref`` that satisfies the constraints.

    Raises :class:`InfeasibleProblem` when no feasible decision exists. With
    ``check_initial=False`` the constraints that only involve the measured
    state are not checked (nothing can be decided about them).
    """
    t = problem.template
    if check_initial:
        viol = constraint_residuals(problem, np.zeros(t.n_decision))["initial_state"]
        if viol > FEAS_TOL:
            raise InfeasibleProblem(f"initial state violates the state constraints by "
                                    f"{viol:.3e}")
    h, b = t.constraint_rhs(problem.x0)
    if weights is None:
        # try the projection onto the equalities alone first
        z = z_ref - t._Aeq_pinv @ (t.Aeq @ z_ref - b)
        if np.all(t.G @ z <= h + 1e-9) and np.abs(t.Aeq @ z - b).max(initial=0.0) <= 1e-9:
            return z
    w = np.ones(t.n_decision) if weights is None else np.asarray(weights, float)
    res = solve_qp(np.diag(w), -w * z_ref, t.G, h, t.Aeq, b)
    if not res.ok:
        raise InfeasibleProblem(f"no feasible decision from this state ({res.status})")
    return res.x


def is_feasible(template: OcpTemplate, x0) -> bool:
    """Whether the finite-horizon problem admits a feasible decision at ``x0``."""
    prob = OcpProblem(template, x0, np.zeros(template.model.p))
    try:
        project_feasible(prob, np.zeros(template.n_decision))
    except InfeasibleProblem:
        return False
    return True


def _default_guess(problem: OcpProblem):
    t = problem.template
    try:
        x_s, u_s = t.steady.particular(problem.y_t)
    except Exception:
        x_s, u_s = np.zeros(t.model.n), np.zeros(t.model.m)
    return t.join(np.tile(u_s, (t.N, 1)), x_s, u_s)


# -------------------------------------------------------------------- solver
def dense_qp(problem: OcpProblem):
    """Quadratic part as ``1/2 z'Hz + f'z + c`` with its constraints (for checks)."""
    t = problem.template
    a = t.Fx @ problem.x0 + t.Fy @ problem.y_t
    f = 2.0 * t.E.T @ (t.W @ a)
    c = float(a @ t.W @ a)
    h, b = t.constraint_rhs(problem.x0)
    return t.H_quad, f, c, t.G, h, t.Aeq, b


def _sqp(problem: OcpProblem, z0, opts: SolverOptions):
    t = problem.template
    d = t.n_decision
    G = t.G
    h, b = t.constraint_rhs(problem.x0)
    z = z0.copy()
    V = eval_cost(problem, z).total
    trace = []
    hint = None
    reg = opts.regularization * max(1.0, np.max(np.abs(np.diag(t.H_quad))))
    H0 = t.H_quad + reg * np.eye(d)
    status = MAX_ITER
    it = 0
    any_step = False
    for it in range(1, opts.max_iter + 1):
        grad = eval_gradient(problem, z)
        phi, mu, J = _penalty_terms(problem, z, with_jacobian=True)
        H = H0
        if phi.size:
            Jw = J * np.sqrt(2.0 * mu)[:, None]
            H = H0 + Jw.T @ Jw
        res = solve_qp(H, grad, G, h - G @ z, t.Aeq, b - t.Aeq @ z, active_hint=hint)
        if not res.ok:
            log.debug("QP subproblem failed (%s) at iteration %d", res.status, it)
            status = MAX_ITER if any_step else FALLBACK
            break
        hint = res.active
        dz = res.x
        step = float(np.linalg.norm(dz))
        slack = h - G @ z
        stat = grad + G.T @ res.lam + t.Aeq.T @ res.nu
        kkt = max(np.abs(stat).max(initial=0.0), np.abs(res.lam * slack).max(initial=0.0))
        kkt /= max(1.0, abs(V))
        if step <= opts.step_tol * max(1.0, np.linalg.norm(z)) or kkt <= opts.kkt_tol:
            trace.append((it, V, step, kkt, 0.0))
            status = CONVERGED
            break
        slope = float(grad @ dz)
        alpha = 1.0
        accepted = False
        while alpha >= opts.min_alpha:
            z_new = z + alpha * dz
            V_new = eval_cost(problem, z_new).total
            if V_new <= V + opts.armijo * alpha * min(slope, 0.0):
                accepted = True
                break
            alpha *= 0.5
        trace.append((it, V, step, kkt, alpha if accepted else 0.0))
        if not accepted:
            status = CONVERGED if any_step else FALLBACK
            if not any_step and kkt <= 1e-3:
                status = CONVERGED
            break
        any_step = True
        dec = V - V_new
        exact = alpha == 1.0 and phi.size == 0 and _penalty_terms(problem, z_new)[0].size == 0
        z, V = z_new, V_new
        if exact:
            # no penalty active on either end: the QP model was the problem itself
            status = CONVERGED
            break
        if dec <= opts.stall_tol * max(1.0, abs(V)):
            status = CONVERGED
            break
    return z, V, status, it, trace, hint or []


def _make_solution(problem: OcpProblem, z, status, iterations, trace, active):
    t = problem.template
    u_seq, x_a, u_a = t.split(z)
    mdl = t.model
    x_seq = rollout(mdl, problem.x0, u_seq)
    u_ext = np.vstack([u_seq, u_a[None, :]])
    y_seq = np.array([mdl.output(x, u) for x, u in zip(x_seq, u_ext)])
    parts = eval_cost(problem, z)
    return OcpSolution(u_seq=u_seq.copy(), x_seq=x_seq, y_seq=y_seq, x_a=x_a.copy(),
                       u_a=u_a.copy(), y_a=mdl.output(x_a, u_a), cost_total=parts.total,
                       cost_dynamic=parts.dynamic, cost_offset=parts.offset,
                       cost_avoidance=parts.avoidance, solver_status=status,
                       decision=np.asarray(z, float).copy(), iterations=iterations,
                       trace=trace, active_set=list(active))


def solve(problem: OcpProblem, warm_start=None, options: SolverOptions | None = None
          ) -> OcpSolution:
    """Solve the finite-horizon problem from ``problem.x0``.

    ``warm_start`` should be feasible (typically the shifted candidate); an
    infeasible one is replaced by its projection onto the constraints. Without
    a warm start the problem is cold-started from the projection of a steady
    guess, which raises :class:`InfeasibleProblem` when the state is outside
    the feasible region (including ``x0`` outside the state constraints).
    A warm-started solve does not re-check the constraints on ``x0`` alone.
    """
    opts = options or SolverOptions()
    if problem.avoidance.regions and problem.avoidance.epsilon != 2:
        raise UnsupportedExponent("the solver needs epsilon = 2 penalties")
    cold = warm_start is None
    z0 = _default_guess(problem) if cold else np.asarray(warm_start, float)
    if z0.size != problem.template.n_decision:
        raise DimensionError("warm start has the wrong size")
    if cold:
        z0 = project_feasible(problem, z0)
    elif max_violation(problem, z0, include_initial=False) > 1e-9:
        z0 = project_feasible(problem, z0, check_initial=False)
    z, V, status, it, trace, active = _sqp(problem, z0, opts)
    best = (V, z, status, it, trace, active)
    if opts.multistart > 0:
        rng = np.random.default_rng(opts.seed)
        scale = _decision_scale(problem.template)
        for _ in range(opts.multistart):
            try:
                zs = project_feasible(problem, z0 + 0.3 * scale * rng.standard_normal(z0.size))
            except InfeasibleProblem:
                continue
            cand = _sqp(problem, zs, opts)
            if cand[1] < best[0] - 1e-9 * max(1.0, abs(best[0])):
                best = (cand[1], cand[0], cand[2], cand[3], cand[4], cand[5])
    V, z, status, it, trace, active = best
    if status == FALLBACK:
        z = z0
    return _make_solution(problem, z, status, it, trace, active)


def _decision_scale(t: OcpTemplate):
    lo, hi = t.Z.bounding_box()
    width = np.where(np.isfinite(hi - lo), hi - lo, 1.0)
    n, m = t.model.n, t.model.m
    wx, wu = width[:n], width[n:]
    return np.concatenate([np.tile(wu, t.N), wx, wu])
