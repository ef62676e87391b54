"""Terminal ingredients: LQR gain, terminal weight, invariant set for tracking.

Two modes are supported. ``invariant_set`` constrains the terminal triplet
``(x(N), x_a, u_a)`` to a polyhedral set that is invariant under the local law
``u = K (x - x_a) + u_a``; ``terminal_equality`` replaces it with
``x(N) = x_a`` and a zero terminal weight.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .exceptions import NotNStepControllable, NotSchur, RiccatiDivergence
from .model import LinearModel, SteadyStateMap, controllability_matrix, numerical_rank
from .polytope import Polytope, _dedupe, _normalize

log = logging.getLogger(__name__)

INVARIANT_SET = "invariant_set"
TERMINAL_EQUALITY = "terminal_equality"


class IterationCapWarning(UserWarning):
    """Invariant-set iteration stopped at its cap; the set may not be maximal."""


class LQRGain(NamedTuple):
    K: np.ndarray
    P: np.ndarray
    iterations: int


def spectral_radius(M) -> float:
    return float(np.max(np.abs(np.linalg.eigvals(M))))


def compute_lqr_gain(model: LinearModel, Q, R, atol=1e-12, max_iter=100_000) -> LQRGain:
    """Infinite-horizon discrete LQR gain by Riccati value iteration.

    Returns ``K`` with ``u = K x`` (so ``A + B K`` is Schur) and the Riccati
    fixed point ``P``. The stopping test is
    ``max|P_{k+1} - P_k| <= atol + 64 eps max|P_k|``: the relative part only
    matters once the entries of ``P`` are large enough for rounding to
    exceed ``atol``.
    """
    A, B = model.A, model.B
    Q = np.atleast_2d(np.asarray(Q, float))
    R = np.atleast_2d(np.asarray(R, float))
    P = Q.copy()
    eps = np.finfo(float).eps
    for it in range(1, max_iter + 1):
        BtP = B.T @ P
        G = R + BtP @ B
        K = -np.linalg.solve(G, BtP @ A)
        P_new = Q + A.T @ P @ A + A.T @ P @ B @ K
        P_new = 0.5 * (P_new + P_new.T)
        if not np.all(np.isfinite(P_new)):
            raise RiccatiDivergence("Riccati iteration produced non-finite values")
        delta = np.max(np.abs(P_new - P))
        P = P_new
        if delta <= atol + 64 * eps * np.max(np.abs(P)):
            break
    else:
        raise RiccatiDivergence(f"no Riccati fixed point after {max_iter} iterations")
    K = -np.linalg.solve(R + B.T @ P @ B, B.T @ P @ A)
    if spectral_radius(A + B @ K) >= 1.0:
        raise RiccatiDivergence("Riccati fixed point does not stabilise the plant")
    return LQRGain(K, P, it)


def solve_lyapunov(A_K, Q_bar, tol=1e-10, max_iter=200) -> np.ndarray:
    """``P = sum_j (A_K')^j Q_bar A_K^j`` by the doubling form of the fixed-point iteration.

    Each pass ``P <- P + A' P A``, ``A <- A A`` doubles the number of summed terms.
    """
    A_K = np.atleast_2d(np.asarray(A_K, float))
    Q_bar = np.atleast_2d(np.asarray(Q_bar, float))
    if spectral_radius(A_K) >= 1.0 - 1e-9:
        raise NotSchur(f"spectral radius {spectral_radius(A_K):.6f} is not < 1")
    P = Q_bar.copy()
    Ak = A_K.copy()
    for _ in range(max_iter):
        inc = Ak.T @ P @ Ak
        P = P + inc
        Ak = Ak @ Ak
        if np.max(np.abs(inc)) <= 1e-3 * tol * max(1.0, np.max(np.abs(P))) or \
                not np.any(Ak):
            break
    return 0.5 * (P + P.T)


def lyapunov_residual(P, A_K, Q_bar) -> float:
    return float(np.linalg.norm(A_K.T @ P @ A_K + Q_bar - P, "fro"))


@dataclass(frozen=True)
class TerminalIngredients:
    K: np.ndarray
    P: np.ndarray
    lam: float
    mode: str
    omega: Polytope | None = None     # over (x, x_a, u_a); None in terminal-equality mode
    converged: bool = True
    iterations: int = 0

    @property
    def is_equality(self) -> bool:
        return self.mode == TERMINAL_EQUALITY


class InvariantSetResult(NamedTuple):
    omega: Polytope         # over (x, x_a, u_a), equilibrium equations as equalities
    omega_theta: Polytope   # over (x, theta)
    iterations: int
    converged: bool


def compute_tracking_invariant_set(model: LinearModel, K, Z: Polytope, lam=0.99,
                                   max_iter=200, tol=1e-9) -> InvariantSetResult:
    """Maximal admissible invariant set for tracking.

    Works on the augmented autonomous system ``w = (x, theta)`` with
    ``(x_a, u_a) = M theta``::

        x+     = A_K x + B (M_u - K M_x) theta
        theta+ = theta

    Constraint rows ``(x, K x + (M_u - K M_x) theta) in Z`` are propagated
    through the dynamics and appended while they cut the current set
    (Gilbert-Tan); ``theta`` additionally satisfies ``M theta in lam Z``.
    """
    K = np.atleast_2d(np.asarray(K, float))
    n, m = model.n, model.m
    A_K = model.A + model.B @ K
    if spectral_radius(A_K) >= 1.0:
        raise NotSchur("A + B K is not Schur")
    smap = SteadyStateMap(model, Z, lam)
    Mx, Mu = smap.Mx, smap.Mu
    r = smap.theta_dim
    Hx, Hu = Z.H[:, :n], Z.H[:, n:]
    G_in = Mu - K @ Mx
    Hc = np.hstack([Hx + Hu @ K, Hu @ G_in])
    hc = Z.h.copy()
    Phi = np.block([[A_K, model.B @ G_in], [np.zeros((r, n)), np.eye(r)]])

    theta_rows = np.hstack([np.zeros((Z.n_constraints, n)), Z.H @ smap.basis])
    theta_rhs = lam * Z.h
    H_cur = np.vstack([Hc, theta_rows])
    h_cur = np.concatenate([hc, theta_rhs])
    H_cur, h_cur = _normalize(H_cur, h_cur)
    H_cur, h_cur = _dedupe(H_cur, h_cur)

    Phi_k = Phi.copy()
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        cand = Hc @ Phi_k
        current = Polytope(H_cur, h_cur)
        new_rows, new_rhs = [], []
        for row, rhs in zip(cand, hc):
            nrm = np.linalg.norm(row)
            if nrm < 1e-14:
                continue
            if current.support(row) > rhs + tol * max(1.0, abs(rhs)):
                new_rows.append(row / nrm)
                new_rhs.append(rhs / nrm)
        if not new_rows:
            converged = True
            break
        H_cur = np.vstack([H_cur, new_rows])
        h_cur = np.concatenate([h_cur, new_rhs])
        Phi_k = Phi_k @ Phi
    if not converged:
        warnings.warn(f"invariant-set iteration hit its cap ({max_iter})", IterationCapWarning)
    omega_theta = Polytope(H_cur, h_cur).remove_redundant()
    log.debug("invariant set: %d iterations, %d half-spaces", it, omega_theta.n_constraints)
    omega = lift_to_triplet(omega_theta, smap)
    return InvariantSetResult(omega, omega_theta, it, converged)


def lift_to_triplet(omega_theta: Polytope, smap: SteadyStateMap) -> Polytope:
    """Express a set over ``(x, theta)`` over ``(x, x_a, u_a)``."""
    n = smap.model.n
    Hx, Ht = omega_theta.H[:, :n], omega_theta.H[:, n:]
    H = np.hstack([Hx, Ht @ smap.basis.T])
    E = np.hstack([np.zeros((n, n)), smap.steady_matrix])
    return Polytope(H, omega_theta.h, E, np.zeros(n))


def invariant_set_ingredients(model: LinearModel, Q, R, Z: Polytope, lam=0.99,
                              max_iter=200, omega: Polytope | None = None) -> TerminalIngredients:
    """LQR gain, Lyapunov weight and (unless supplied) the invariant set for tracking."""
    K, _, _ = compute_lqr_gain(model, Q, R)
    A_K = model.A + model.B @ K
    P = solve_lyapunov(A_K, np.asarray(Q, float) + K.T @ np.asarray(R, float) @ K)
    if omega is not None:
        return TerminalIngredients(K, P, lam, INVARIANT_SET, omega)
    res = compute_tracking_invariant_set(model, K, Z, lam, max_iter=max_iter)
    return TerminalIngredients(K, P, lam, INVARIANT_SET, res.omega, res.converged,
                               res.iterations)


def terminal_equality_ingredients(model: LinearModel, Z: Polytope | None, lam, N,
                                  Q=None, R=None) -> TerminalIngredients:
    """Terminal-equality variant: ``x(N) = x_a`` and ``P = 0``.

    Requires the N-step controllability matrix to have full row rank. ``K``
    (LQR when weights are given) is only used to build shifted candidates.
    """
    Co = controllability_matrix(model.A, model.B, N)
    if numerical_rank(Co) < model.n:
        raise NotNStepControllable(f"rank of the {N}-step controllability matrix is "
                                   f"{numerical_rank(Co)} < {model.n}")
    if Q is not None and R is not None:
        K = compute_lqr_gain(model, Q, R).K
    else:
        K = np.zeros((model.m, model.n))
    return TerminalIngredients(K, np.zeros((model.n, model.n)), lam, TERMINAL_EQUALITY)
