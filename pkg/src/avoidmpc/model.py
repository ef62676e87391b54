"""Discrete LTI prediction model, equilibrium parametrisation and steady sets."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np
from scipy.linalg import null_space

from .exceptions import (AssumptionViolation, DimensionError, InfeasibleTarget,
                         NonEquilibrium)
from .polytope import Polytope, linear_image


def numerical_rank(M, rtol=1e-10) -> int:
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.size == 0:
        return 0
    s = np.linalg.svd(M, compute_uv=False)
    if s.size == 0 or s[0] == 0.0:
        return 0
    return int(np.sum(s > rtol * s[0]))


def controllability_matrix(A, B, steps=None):
    """``[B, AB, ..., A^{steps-1} B]`` (``steps`` defaults to ``n``)."""
    n = A.shape[0]
    steps = n if steps is None else steps
    blocks, Ak_B = [], B
    for _ in range(steps):
        blocks.append(Ak_B)
        Ak_B = A @ Ak_B
    return np.hstack(blocks)


def observability_matrix(A, C):
    n = A.shape[0]
    blocks, CAk = [], C
    for _ in range(n):
        blocks.append(CAk)
        CAk = CAk @ A
    return np.vstack(blocks)


@dataclass(frozen=True)
class LinearModel:
    """``x+ = A x + B u``, ``y = C x + D u``.

    With ``strict=True`` (default) the pair (A, B) must be controllable and
    (C, A) observable, both tested with a relative singular-value threshold.
    """

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray = None
    strict: bool = field(default=True, compare=False)

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        B = np.asarray(self.B, dtype=float)
        B = B.reshape(A.shape[0], -1) if B.ndim < 2 else B
        C = np.asarray(self.C, dtype=float)
        C = C.reshape(-1, A.shape[0]) if C.ndim < 2 else C
        if self.D is None:
            D = np.zeros((C.shape[0], B.shape[1]))
        else:
            D = np.asarray(self.D, dtype=float)
            if D.ndim < 2 and D.size == C.shape[0] * B.shape[1]:
                D = D.reshape(C.shape[0], B.shape[1])
        n = A.shape[0]
        if A.shape != (n, n):
            raise DimensionError(f"A must be square, got {A.shape}")
        if B.shape[0] != n:
            raise DimensionError(f"B has {B.shape[0]} rows, expected {n}")
        if C.shape[1] != n:
            raise DimensionError(f"C has {C.shape[1]} columns, expected {n}")
        if D.shape != (C.shape[0], B.shape[1]):
            raise DimensionError(f"D must be {(C.shape[0], B.shape[1])}, got {D.shape}")
        for name, val in (("A", A), ("B", B), ("C", C), ("D", D)):
            val.setflags(write=False)
            object.__setattr__(self, name, val)
        if self.strict:
            if numerical_rank(controllability_matrix(A, B)) < n:
                raise AssumptionViolation("(A, B) is not controllable")
            if numerical_rank(observability_matrix(A, C)) < n:
                raise AssumptionViolation("(C, A) is not observable")

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]

    @property
    def p(self) -> int:
        return self.C.shape[0]

    def step(self, x, u):
        return self.A @ x + self.B @ u

    def output(self, x, u):
        return self.C @ x + self.D @ u


class RankReport(NamedTuple):
    ok: bool
    rank: int
    kind: str     # "square", "flat" or "thin"


def check_rank_condition(model: LinearModel, rtol=1e-10) -> RankReport:
    """Existence of an equilibrium for every target output.

    True iff ``rank([[A - I, B], [C, D]]) == n + p``.
    """
    n, m, p = model.n, model.m, model.p
    M = np.block([[model.A - np.eye(n), model.B], [model.C, model.D]])
    r = numerical_rank(M, rtol)
    kind = "square" if p == m else ("flat" if p < m else "thin")
    return RankReport(r == n + p, r, kind)


class Equilibrium(NamedTuple):
    x: np.ndarray
    u: np.ndarray
    admissible: bool   # (x, u) in lambda * Z_s


class SteadyStateMap:
    """Equilibrium manifold of a model and the contracted steady sets.

    Equilibria are written ``(x_s, u_s) = M theta`` where the columns of
    ``M`` are an orthonormal basis of the kernel of ``[A - I, B]``.
    """

    def __init__(self, model: LinearModel, Z: Polytope | None = None, lam=0.99):
        if not 0.0 < lam < 1.0:
            raise ValueError("lambda must lie in (0, 1)")
        self.model = model
        self.Z = Z
        self.lam = float(lam)
        n, m = model.n, model.m
        self.steady_matrix = np.hstack([model.A - np.eye(n), model.B])
        self.basis = null_space(self.steady_matrix)
        self.Mx = self.basis[:n]
        self.Mu = self.basis[n:]
        self.My = model.C @ self.Mx + model.D @ self.Mu
        self._full = np.block([[model.A - np.eye(n), model.B], [model.C, model.D]])
        self._pinv = np.linalg.pinv(self._full)

    @property
    def theta_dim(self) -> int:
        return self.basis.shape[1]

    def particular(self, y_t):
        """Minimum-norm ``(x_s, u_s)`` with output ``y_t`` (unique when p = m)."""
        n, p = self.model.n, self.model.p
        rhs = np.concatenate([np.zeros(n), np.asarray(y_t, float).reshape(p)])
        z = self._pinv @ rhs
        return z[:n], z[n:]

    def residuals(self, x_s, u_s, y_t):
        mdl = self.model
        r_dyn = np.linalg.norm((mdl.A - np.eye(mdl.n)) @ x_s + mdl.B @ u_s)
        r_out = np.linalg.norm(mdl.C @ x_s + mdl.D @ u_s - y_t)
        return r_dyn, r_out

    def steady_set(self) -> Polytope:
        """``lambda * Z_s`` over ``(x, u)``, with the equilibrium equations as equalities."""
        if self.Z is None:
            raise ValueError("no constraint set attached")
        lz = self.Z.scale(self.lam)
        return Polytope(lz.H, lz.h, self.steady_matrix, np.zeros(self.model.n))

    def steady_set_theta(self) -> Polytope:
        """``lambda * Z_s`` in the coordinates ``theta`` of the equilibrium basis."""
        lz = self.Z.scale(self.lam)
        return Polytope(lz.H @ self.basis, lz.h)

    def is_admissible(self, x_s, u_s, tol=1e-9) -> bool:
        if self.Z is None:
            return True
        return self.steady_set().contains(np.concatenate([x_s, u_s]), tol)


def steady_state_for_output(smap: SteadyStateMap, y_t, tol=1e-9) -> Equilibrium:
    y_t = np.asarray(y_t, dtype=float).reshape(smap.model.p)
    x_s, u_s = smap.particular(y_t)
    r_dyn, r_out = smap.residuals(x_s, u_s, y_t)
    scale = max(1.0, float(np.linalg.norm(y_t)))
    if r_dyn > tol * scale or r_out > tol * scale:
        raise InfeasibleTarget(f"no equilibrium with output {y_t} (residuals {r_dyn:.2e}, "
                               f"{r_out:.2e})")
    return Equilibrium(x_s, u_s, smap.is_admissible(x_s, u_s))


def reachable_output_set(smap: SteadyStateMap, Z: Polytope | None = None) -> Polytope:
    """Image of ``lambda * Z_s`` under the output map.

    Exact for p <= 2; for larger output dimensions an outer approximation
    from support values in sampled directions.
    """
    if Z is not None and Z is not smap.Z:
        smap = SteadyStateMap(smap.model, Z, smap.lam)
    theta_set = smap.steady_set_theta()
    return linear_image(theta_set, smap.My)


def linearize(f: Callable, x_eq, u_eq, step=1e-6, output: Callable | None = None,
              eq_tol=1e-6):
    """Central-difference Jacobians of ``xdot = f(x, u)`` and ``y = output(x, u)``.

    The perturbation is ``step`` for coordinates of magnitude <= 1 and
    ``step * |z|`` otherwise. Without an output map ``C = I`` and ``D = 0``.
    """
    x_eq = np.asarray(x_eq, dtype=float)
    u_eq = np.asarray(u_eq, dtype=float)
    f0 = np.asarray(f(x_eq, u_eq), dtype=float)
    if np.linalg.norm(f0) > eq_tol:
        raise NonEquilibrium(f"|f(x_eq, u_eq)| = {np.linalg.norm(f0):.3e}")

    def jac(fun, z0, other, first):
        cols = []
        for i in range(z0.size):
            hi = step * max(1.0, abs(z0[i]))
            zp, zm = z0.copy(), z0.copy()
            zp[i] += hi
            zm[i] -= hi
            if first:
                fp, fm = fun(zp, other), fun(zm, other)
            else:
                fp, fm = fun(other, zp), fun(other, zm)
            cols.append((np.asarray(fp, float) - np.asarray(fm, float)) / (2 * hi))
        return np.column_stack(cols)

    A = jac(f, x_eq, u_eq, True)
    B = jac(f, u_eq, x_eq, False)
    if output is None:
        C, D = np.eye(x_eq.size), np.zeros((x_eq.size, u_eq.size))
    else:
        C = jac(output, x_eq, u_eq, True)
        D = jac(output, u_eq, x_eq, False)
    return A, B, C, D


def euler_discretize(A, B, C, D, Ts, strict=True) -> LinearModel:
    """Forward-Euler discretisation ``A_d = I + Ts A``, ``B_d = Ts B``."""
    if Ts <= 0:
        raise ValueError("sampling time must be positive")
    A = np.atleast_2d(np.asarray(A, float))
    return LinearModel(np.eye(A.shape[0]) + Ts * A, Ts * np.asarray(B, float), C, D,
                       strict=strict)
