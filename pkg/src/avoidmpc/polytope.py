"""Convex polyhedra in half-space form, plus the small LP toolkit built on them.

A :class:`Polytope` is ``{z : H z <= h, E z = e}``; the equality block is optional
and is used for sets that live on a subspace (steady-state manifolds).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.linalg import null_space
from scipy.optimize import linprog
from scipy.spatial import ConvexHull, HalfspaceIntersection, QhullError

from .exceptions import DimensionError

_LP_OPTIONS = {"presolve": True, "dual_feasibility_tolerance": 1e-10,
               "primal_feasibility_tolerance": 1e-10}


def _as_matrix(a, cols=None):
    a = np.atleast_2d(np.asarray(a, dtype=float))
    if cols is not None and a.size == 0:
        return np.zeros((0, cols))
    return a


@dataclass(frozen=True)
class Polytope:
    H: np.ndarray
    h: np.ndarray
    E: np.ndarray = field(default=None)
    e: np.ndarray = field(default=None)

    def __post_init__(self):
        H = _as_matrix(self.H)
        h = np.asarray(self.h, dtype=float).reshape(-1)
        if H.shape[0] != h.size:
            raise DimensionError(f"H has {H.shape[0]} rows but h has {h.size} entries")
        if H.shape[0] < 1:
            raise DimensionError("a polytope needs at least one half-space")
        d = H.shape[1]
        if self.E is None:
            E, e = np.zeros((0, d)), np.zeros(0)
        else:
            E = _as_matrix(self.E, d)
            e = np.asarray(self.e, dtype=float).reshape(-1)
            if E.shape[1] != d or E.shape[0] != e.size:
                raise DimensionError("equality block does not match the half-space block")
        for name, val in (("H", H), ("h", h), ("E", E), ("e", e)):
            val.setflags(write=False)
            object.__setattr__(self, name, val)

    # ------------------------------------------------------------------
    @classmethod
    def box(cls, lower, upper) -> Polytope:
        lower = np.asarray(lower, dtype=float).reshape(-1)
        upper = np.asarray(upper, dtype=float).reshape(-1)
        if lower.size != upper.size:
            raise DimensionError("box bounds differ in length")
        eye = np.eye(lower.size)
        return cls(np.vstack([eye, -eye]), np.concatenate([upper, -lower]))

    @classmethod
    def from_vertices(cls, points) -> Polytope:
        """Convex hull of a point cloud (dimension 1 or 2 in practice)."""
        pts = _as_matrix(points)
        if pts.shape[1] == 1:
            lo, hi = pts.min(), pts.max()
            return cls.box([lo], [hi])
        hull = ConvexHull(pts)
        # qhull equations are [normal, offset] with normal.z + offset <= 0
        eq = np.unique(np.round(hull.equations, 12), axis=0)
        return cls(eq[:, :-1], -eq[:, -1])

    @property
    def dim(self) -> int:
        return self.H.shape[1]

    @property
    def n_constraints(self) -> int:
        return self.H.shape[0]

    def violation(self, z) -> float:
        """Largest constraint violation at ``z`` (<= 0 means inside)."""
        z = np.asarray(z, dtype=float)
        v = float(np.max(self.H @ z - self.h))
        if self.E.shape[0]:
            v = max(v, float(np.max(np.abs(self.E @ z - self.e))))
        return v

    def contains(self, z, tol=1e-9) -> bool:
        return self.violation(z) <= tol

    def scale(self, lam) -> Polytope:
        """The set ``lam * self`` (``lam > 0``)."""
        return Polytope(self.H, lam * self.h, self.E, lam * self.e)

    def intersect(self, other: Polytope) -> Polytope:
        E = np.vstack([self.E, other.E])
        e = np.concatenate([self.e, other.e])
        return Polytope(np.vstack([self.H, other.H]), np.concatenate([self.h, other.h]),
                        E if E.shape[0] else None, e if e.size else None)

    def linear_preimage(self, M, offset=None) -> Polytope:
        """``{w : M w + offset in self}``."""
        M = _as_matrix(M)
        offset = np.zeros(M.shape[0]) if offset is None else np.asarray(offset, float)
        E = self.E @ M if self.E.shape[0] else None
        e = self.e - self.E @ offset if self.E.shape[0] else None
        return Polytope(self.H @ M, self.h - self.H @ offset, E, e)

    # ------------------------------------------------------------------
    def support(self, direction) -> float:
        """``max d'z`` over the set; ``inf`` when unbounded, ``-inf`` when empty."""
        d = np.asarray(direction, dtype=float)
        res = linprog(-d, A_ub=self.H, b_ub=self.h,
                      A_eq=self.E if self.E.shape[0] else None,
                      b_eq=self.e if self.E.shape[0] else None,
                      bounds=(None, None), method="highs", options=_LP_OPTIONS)
        if res.status == 3:
            return np.inf
        if res.status == 2:
            return -np.inf
        if res.status != 0:
            raise RuntimeError(f"LP failed: {res.message}")
        return float(-res.fun)

    def argmax(self, direction) -> np.ndarray:
        d = np.asarray(direction, dtype=float)
        res = linprog(-d, A_ub=self.H, b_ub=self.h,
                      A_eq=self.E if self.E.shape[0] else None,
                      b_eq=self.e if self.E.shape[0] else None,
                      bounds=(None, None), method="highs", options=_LP_OPTIONS)
        if res.status != 0:
            raise RuntimeError(f"LP failed: {res.message}")
        return res.x

    def bounding_box(self):
        eye = np.eye(self.dim)
        upper = np.array([self.support(r) for r in eye])
        lower = np.array([-self.support(-r) for r in eye])
        return lower, upper

    def is_bounded(self) -> bool:
        lower, upper = self.bounding_box()
        return bool(np.all(np.isfinite(lower)) and np.all(np.isfinite(upper)))

    def is_empty(self) -> bool:
        return self.support(np.zeros(self.dim)) == -np.inf

    def chebyshev_center(self):
        """Centre and radius of the largest inscribed ball (within the affine hull)."""
        norms = np.linalg.norm(self.H, axis=1)
        d = self.dim
        c = np.zeros(d + 1)
        c[-1] = -1.0
        A_ub = np.hstack([self.H, norms[:, None]])
        A_eq = np.hstack([self.E, np.zeros((self.E.shape[0], 1))]) if self.E.shape[0] else None
        res = linprog(c, A_ub=A_ub, b_ub=self.h, A_eq=A_eq,
                      b_eq=self.e if self.E.shape[0] else None,
                      bounds=[(None, None)] * d + [(0, None)], method="highs",
                      options=_LP_OPTIONS)
        if res.status != 0:
            raise RuntimeError(f"Chebyshev LP failed: {res.message}")
        return res.x[:d], float(res.x[-1])

    def remove_redundant(self, tol=1e-9) -> Polytope:
        """Drop half-spaces implied by the others (one LP per row)."""
        H, h = _normalize(self.H, self.h)
        H, h = _dedupe(H, h)
        keep = np.ones(H.shape[0], dtype=bool)
        for i in range(H.shape[0]):
            keep[i] = False
            rest = Polytope(H[keep], h[keep], self.E if self.E.shape[0] else None,
                            self.e if self.E.shape[0] else None) if keep.any() else None
            if rest is None:
                keep[i] = True
                continue
            # relax row i slightly so the LP stays bounded when it is needed
            val = _support_with_cap(rest, H[i], h[i] + 1.0)
            if val > h[i] + tol:
                keep[i] = True
        return Polytope(H[keep], h[keep], self.E if self.E.shape[0] else None,
                        self.e if self.E.shape[0] else None)

    def vertices(self) -> np.ndarray:
        """Vertex list of a bounded, full-dimensional polytope (no equalities)."""
        if self.E.shape[0]:
            raise ValueError("vertex enumeration needs a full-dimensional set")
        if self.dim == 1:
            lo, hi = self.bounding_box()
            return np.array([[lo[0]], [hi[0]]])
        center, radius = self.chebyshev_center()
        if radius <= 1e-12:
            raise ValueError("polytope has empty interior")
        hs = HalfspaceIntersection(np.hstack([self.H, -self.h[:, None]]), center)
        pts = hs.intersections
        return np.unique(np.round(pts, 10), axis=0)

    # ------------------------------------------------------------------
    def affine_parametrization(self):
        """Return ``(z0, N)`` with ``{z : E z = e} = {z0 + N t}`` and orthonormal ``N``."""
        if not self.E.shape[0]:
            return np.zeros(self.dim), np.eye(self.dim)
        z0 = np.linalg.lstsq(self.E, self.e, rcond=None)[0]
        return z0, null_space(self.E)

    def sample(self, n_samples, rng=None, burn_in=200, thin=5, start=None) -> np.ndarray:
        """Approximately uniform points via hit-and-run inside the relative interior."""
        rng = np.random.default_rng(rng)
        z0, N = self.affine_parametrization()
        Ht = self.H @ N
        ht = self.h - self.H @ z0
        if start is None:
            inner = Polytope(Ht, ht)
            t, _ = inner.chebyshev_center()
        else:
            t = N.T @ (np.asarray(start, float) - z0)
        out = np.empty((n_samples, self.dim))
        k = 0
        step = 0
        while k < n_samples:
            d = rng.standard_normal(N.shape[1])
            d /= np.linalg.norm(d)
            hd = Ht @ d
            slack = ht - Ht @ t
            slack = np.maximum(slack, 0.0)
            with np.errstate(divide="ignore", invalid="ignore"):
                ratios = slack / hd
            hi = np.min(ratios[hd > 1e-14], initial=np.inf)
            lo = np.max(ratios[hd < -1e-14], initial=-np.inf)
            if not (np.isfinite(hi) and np.isfinite(lo)):
                raise ValueError("cannot sample an unbounded polytope")
            t = t + rng.uniform(lo, hi) * d
            step += 1
            if step > burn_in and step % thin == 0:
                out[k] = z0 + N @ t
                k += 1
        return out

    # ------------------------------------------------------------------
    def save(self, path) -> None:
        np.savez(Path(path), H=self.H, h=self.h, E=self.E, e=self.e)

    @classmethod
    def load(cls, path) -> Polytope:
        data = np.load(Path(path))
        E = data["E"] if data["E"].shape[0] else None
        return cls(data["H"], data["h"], E, data["e"] if E is not None else None)


def _normalize(H, h):
    norms = np.linalg.norm(H, axis=1)
    ok = norms > 1e-14
    return H[ok] / norms[ok, None], h[ok] / norms[ok]


def _dedupe(H, h, decimals=10):
    key = np.round(np.hstack([H, h[:, None]]), decimals)
    _, idx = np.unique(key, axis=0, return_index=True)
    idx = np.sort(idx)
    return H[idx], h[idx]


def _support_with_cap(poly: Polytope, d, cap):
    """Support value of ``poly ∩ {d'z <= cap}``; avoids unbounded LPs."""
    capped = Polytope(np.vstack([poly.H, d]), np.append(poly.h, cap),
                      poly.E if poly.E.shape[0] else None,
                      poly.e if poly.E.shape[0] else None)
    return capped.support(d)


def projection_bounds(poly: Polytope, M):
    """Interval hull of the image ``M poly`` (one LP pair per output row)."""
    M = _as_matrix(M)
    upper = np.array([poly.support(r) for r in M])
    lower = np.array([-poly.support(-r) for r in M])
    return lower, upper


def linear_image(poly: Polytope, M, n_directions=64, rng=0) -> Polytope:
    """Half-space description of ``{M z : z in poly}``.

    Exact for images of dimension 1 and 2 (vertex walk over the image
    polygon); in higher dimensions an outer approximation is built from
    support values along the coordinate axes plus quasi-random directions.
    """
    M = _as_matrix(M)
    p = M.shape[0]
    if p == 1:
        lo, hi = projection_bounds(poly, M)
        return Polytope.box(lo, hi)
    if p == 2:
        pts = _polygon_image_vertices(poly, M)
        try:
            return Polytope.from_vertices(pts)
        except QhullError:
            pass  # degenerate (segment or point) image: use support directions
    rng = np.random.default_rng(rng)
    dirs = rng.standard_normal((n_directions, p))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    dirs = np.vstack([np.eye(p), -np.eye(p), dirs])
    vals = np.array([poly.support(M.T @ d) for d in dirs])
    return Polytope(dirs, vals)


def _polygon_image_vertices(poly: Polytope, M, max_iter=500):
    """Vertices of a 2-D image polygon by iterative support refinement."""

    def extreme(d):
        z = poly.argmax(M.T @ d)
        return M @ z

    pts = [extreme(d) for d in ((1, 0), (0, 1), (-1, 0), (0, -1))]
    pts = _unique_pts(pts)
    if len(pts) < 3:
        return np.array(pts)
    for _ in range(max_iter):
        try:
            hull = ConvexHull(np.array(pts))
        except QhullError:
            return np.array(pts)
        added = False
        for eq in hull.equations:
            normal, off = eq[:-1], -eq[-1]
            q = extreme(normal)
            if normal @ q > off + 1e-9 * max(1.0, abs(off)):
                pts.append(q)
                added = True
        pts = _unique_pts(pts)
        if not added:
            break
    return np.array(pts)


def _unique_pts(pts, decimals=10):
    arr = np.unique(np.round(np.array(pts), decimals), axis=0)
    return [row for row in arr]
