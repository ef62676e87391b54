"""Dense strictly convex QP solver (Goldfarb-Idnani dual active-set method).

Solves::

    minimize    1/2 x'Hx + g'x
    subject to  G x <= h,   A x = b

with ``H`` symmetric positive definite. The dual method starts from the
unconstrained minimiser and adds violated constraints one at a time while
keeping dual feasibility, so no primal feasible starting point is needed.
The active set is kept linearly independent; a full QR factorisation of
``L^{-1} N_active`` is updated column by column as constraints enter and
leave.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, qr_delete, qr_insert, solve_triangular

QP_OPTIMAL = "optimal"
QP_INFEASIBLE = "infeasible"
QP_MAX_ITER = "max_iter"


@dataclass
class QPResult:
    x: np.ndarray
    status: str
    objective: float
    active: list            # indices into the inequality block
    lam: np.ndarray         # inequality multipliers (>= 0)
    nu: np.ndarray          # equality multipliers
    iterations: int

    @property
    def ok(self):
        return self.status == QP_OPTIMAL


def solve_qp(H, g, G=None, h=None, A=None, b=None, *, tol=1e-9, max_iter=None,
             active_hint=None) -> QPResult:
    H = np.asarray(H, dtype=float)
    g = np.asarray(g, dtype=float)
    n = g.size
    G = np.zeros((0, n)) if G is None else np.atleast_2d(np.asarray(G, float))
    h = np.zeros(0) if h is None else np.asarray(h, float).reshape(-1)
    A = np.zeros((0, n)) if A is None else np.atleast_2d(np.asarray(A, float))
    b = np.zeros(0) if b is None else np.asarray(b, float).reshape(-1)
    if G.size == 0:
        G = np.zeros((0, n))
    if A.size == 0:
        A = np.zeros((0, n))
    mI, mE = G.shape[0], A.shape[0]

    # rows scaled to unit norm so that tolerances are distances
    gn = np.linalg.norm(G, axis=1)
    gn[gn == 0] = 1.0
    Gs, hs = G / gn[:, None], h / gn
    an = np.linalg.norm(A, axis=1)
    an[an == 0] = 1.0
    As, bs = A / an[:, None], b / an

    L, _ = cho_factor(H, lower=True)
    L = np.tril(L)

    def Linv(v):
        return solve_triangular(L, v, lower=True, check_finite=False)

    def LinvT(v):
        return solve_triangular(L, v, lower=True, trans="T", check_finite=False)

    x = -LinvT(Linv(g))
    # active set bookkeeping: kind 0 = equality, 1 = inequality
    act_idx: list[int] = []
    act_kind: list[int] = []
    act_sign: list[float] = []
    u = np.zeros(0)
    # full QR of the active columns: Qf (n x n), Rf (n x k)
    Qf = np.eye(n)
    Rf = np.zeros((n, 0))
    eq_pending = list(range(mE))
    hint = set(active_hint or [])
    if max_iter is None:
        max_iter = 10 * (n + mI + mE) + 50
    it = 0

    while it < max_iter:
        it += 1
        # ---- choose a constraint to add -----------------------------------
        p_kind = None
        if eq_pending:
            resid = As[eq_pending] @ x - bs[eq_pending]
            j = int(np.argmax(np.abs(resid)))
            p = eq_pending[j]
            s_p_raw = resid[j]
            sign = -1.0 if s_p_raw > 0 else 1.0   # normal so that the row reads n'x >= c
            n_plus = sign * As[p]
            s_p = -abs(s_p_raw)
            p_kind = 0
            if abs(s_p_raw) <= tol:
                # already satisfied: still add it so it is kept from now on
                s_p = 0.0
        else:
            if mI == 0:
                break
            slack = hs - Gs @ x      # >= 0 when satisfied
            if act_idx:
                mask = np.ones(mI, dtype=bool)
                mask[[i for i, k in zip(act_idx, act_kind) if k == 1]] = False
            else:
                mask = np.ones(mI, dtype=bool)
            cand = np.where(mask & (slack < -tol))[0]
            if cand.size == 0:
                break
            hinted = [c for c in cand if c in hint]
            pool = np.array(hinted) if hinted else cand
            p = int(pool[np.argmin(slack[pool])])
            hint.discard(p)
            n_plus = -Gs[p]
            s_p = slack[p]
            sign = 1.0
            p_kind = 1

        u_plus = np.append(u, 0.0)
        while True:
            d = Linv(n_plus)
            k = Rf.shape[1]
            qd = Qf.T @ d
            z = LinvT(Qf[:, k:] @ qd[k:])
            if k:
                r = solve_triangular(Rf[:k], qd[:k], lower=False, check_finite=False)
            else:
                r = np.zeros(0)
            # partial (dual) step length: only inequality multipliers may hit zero
            t1, k_drop = np.inf, -1
            for j in range(len(act_idx)):
                if act_kind[j] == 1 and r[j] > 1e-12:
                    ratio = u_plus[j] / r[j]
                    if ratio < t1:
                        t1, k_drop = ratio, j
            zn = float(z @ n_plus)
            if np.linalg.norm(z) > 1e-12 * (1 + np.linalg.norm(x)) and zn > 1e-14:
                t2 = -s_p / zn
            else:
                t2 = np.inf
            if np.isinf(t2) and p_kind == 0 and s_p == 0.0:
                # satisfied and linearly dependent on the active rows
                eq_pending.remove(p)
                break
            t = min(t1, t2)
            if not np.isfinite(t):
                return _result(x, H, g, QP_INFEASIBLE, act_idx, act_kind, act_sign,
                               u, mI, mE, gn, an, it)
            if np.isinf(t2):
                # pure dual step: drop a blocking constraint and retry
                u_plus[:-1] -= t * r
                u_plus[-1] += t
                _drop(k_drop, act_idx, act_kind, act_sign)
                u_plus = np.delete(u_plus, k_drop)
                Qf, Rf = qr_delete(Qf, Rf, k_drop, 1, which="col", check_finite=False)
                continue
            x = x + t * z
            u_plus[:-1] -= t * r
            u_plus[-1] += t
            s_p = s_p + t * zn
            if t == t2:
                act_idx.append(p)
                act_kind.append(p_kind)
                act_sign.append(sign)
                u = u_plus
                Qf, Rf = qr_insert(Qf, Rf, d, k, which="col", check_finite=False)
                if p_kind == 0:
                    eq_pending.remove(p)
                break
            # partial step: drop and continue with the same constraint
            _drop(k_drop, act_idx, act_kind, act_sign)
            u_plus = np.delete(u_plus, k_drop)
            Qf, Rf = qr_delete(Qf, Rf, k_drop, 1, which="col", check_finite=False)
    else:
        return _result(x, H, g, QP_MAX_ITER, act_idx, act_kind, act_sign, u, mI, mE,
                       gn, an, it)
    return _result(x, H, g, QP_OPTIMAL, act_idx, act_kind, act_sign, u, mI, mE, gn, an, it)


def _drop(k, act_idx, act_kind, act_sign):
    del act_idx[k]
    del act_kind[k]
    del act_sign[k]


def _result(x, H, g, status, act_idx, act_kind, act_sign, u, mI, mE, gn, an, it):
    lam = np.zeros(mI)
    nu = np.zeros(mE)
    active = []
    for i, k, s, val in zip(act_idx, act_kind, act_sign, u):
        if k == 1:
            lam[i] = val / gn[i]
            active.append(i)
        else:
            nu[i] = -s * val / an[i]
    obj = float(0.5 * x @ H @ x + g @ x)
    return QPResult(x=x, status=status, objective=obj, active=active, lam=lam, nu=nu,
                    iterations=it)
