"""Avoidance regions, their hinge penalties and the avoidance cost.

Every region exposes a nonnegative *residual* ``phi(y)`` that is zero exactly
outside the (enclosed) region; its penalty is ``phi(y) ** epsilon``. With the
shipped exponent ``epsilon = 2`` the penalty is continuously differentiable
and ``grad F = 2 phi grad phi``, which is also what the Gauss-Newton model in
the solver is built from.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.stats import qmc

from .exceptions import DimensionError, UnsupportedExponent
from .polytope import Polytope


class AvoidRegion:
    """Common interface; subclasses implement :meth:`residual`."""

    kind = "abstract"
    sigma = 1.0
    output_index: tuple | None = None

    def _project(self, y):
        y = np.asarray(y, dtype=float)
        if self.output_index is None:
            return y
        return y[list(self.output_index)]

    def _lift_grad(self, g, p):
        if self.output_index is None:
            return g
        out = np.zeros(p)
        out[list(self.output_index)] = g
        return out

    def residual(self, y) -> tuple[float, np.ndarray]:
        raise NotImplementedError

    def anchor_points(self) -> list:
        """Points (in the region's own coordinates) where the penalty is large."""
        return []

    def to_dict(self) -> dict:
        raise NotImplementedError


@dataclass(frozen=True)
class Sphere(AvoidRegion):
    """Ball of radius ``sigma * radius``; residual ``max(0, (sigma r)^2 - |y - c|^2)``."""

    center: np.ndarray
    radius: float
    sigma: float = 1.0
    output_index: tuple | None = None
    kind: str = field(default="sphere", init=False)

    def __post_init__(self):
        c = np.asarray(self.center, dtype=float).reshape(-1)
        object.__setattr__(self, "center", c)
        if self.output_index is not None:
            object.__setattr__(self, "output_index", tuple(int(i) for i in self.output_index))
            if len(self.output_index) != c.size:
                raise DimensionError("output_index and center differ in length")
        if self.radius <= 0:
            raise ValueError("sphere radius must be positive")
        if self.sigma < 1.0:
            raise ValueError("enclosure factor sigma must be >= 1")

    @property
    def effective_radius(self):
        return self.sigma * self.radius

    def residual(self, y):
        y = np.asarray(y, dtype=float)
        d = self._project(y) - self.center
        phi = self.effective_radius ** 2 - d @ d
        if phi <= 0.0:
            return 0.0, np.zeros(y.size)
        return float(phi), self._lift_grad(-2.0 * d, y.size)

    def anchor_points(self):
        return [self.center]

    def to_dict(self):
        out = {"kind": self.kind, "center": self.center.tolist(), "radius": float(self.radius),
               "sigma": float(self.sigma)}
        if self.output_index is not None:
            out["output_index"] = list(self.output_index)
        return out


@dataclass(frozen=True)
class EllipsoidUnionComplement(AvoidRegion):
    """Everything outside the union of ellipsoids ``(y-c_i)' E_i (y-c_i) <= 1 - gamma_i``.

    Residual ``prod_i max(0, g_i(y))`` with ``g_i = (y-c_i)' E_i (y-c_i) - 1 + gamma_i``:
    zero as soon as ``y`` lies in any of the shrunk ellipsoids. ``sigma``
    further shrinks every ellipsoid by the factor ``1/sigma``.
    """

    shapes: tuple
    centers: tuple
    margins: tuple
    sigma: float = 1.0
    output_index: tuple | None = None
    kind: str = field(default="ellipsoid_union_complement", init=False)

    def __post_init__(self):
        shapes = tuple(np.atleast_2d(np.asarray(E, float)) for E in self.shapes)
        centers = tuple(np.asarray(c, float).reshape(-1) for c in self.centers)
        margins = tuple(float(g) for g in self.margins)
        if not (len(shapes) == len(centers) == len(margins)) or not shapes:
            raise DimensionError("shapes, centers and margins must be non-empty and aligned")
        for E in shapes:
            if not np.allclose(E, E.T) or np.min(np.linalg.eigvalsh(E)) <= 0:
                raise ValueError("ellipsoid shape matrices must be symmetric positive definite")
        object.__setattr__(self, "shapes", shapes)
        object.__setattr__(self, "centers", centers)
        object.__setattr__(self, "margins", margins)
        if self.output_index is not None:
            object.__setattr__(self, "output_index", tuple(int(i) for i in self.output_index))

    def g_values(self, y):
        yy = self._project(y)
        s2 = self.sigma ** 2
        return np.array([s2 * (yy - c) @ E @ (yy - c) - 1.0 + gam
                         for E, c, gam in zip(self.shapes, self.centers, self.margins)])

    def residual(self, y):
        y = np.asarray(y, dtype=float)
        g = self.g_values(y)
        if np.any(g <= 0.0):
            return 0.0, np.zeros(y.size)
        yy = self._project(y)
        s2 = self.sigma ** 2
        phi = float(np.prod(g))
        grad = np.zeros(yy.size)
        for i, (E, c) in enumerate(zip(self.shapes, self.centers)):
            others = np.prod(np.delete(g, i))
            grad += others * 2.0 * s2 * (E @ (yy - c))
        return phi, self._lift_grad(grad, y.size)

    def inside_union(self, y, shrink=True) -> bool:
        """Membership of the union (``shrink=False`` ignores the margins)."""
        yy = self._project(y)
        for E, c, gam in zip(self.shapes, self.centers, self.margins):
            level = 1.0 - gam if shrink else 1.0
            if (yy - c) @ E @ (yy - c) <= level:
                return True
        return False

    def to_dict(self):
        out = {"kind": self.kind, "shapes": [np.asarray(E).tolist() for E in self.shapes],
               "centers": [c.tolist() for c in self.centers], "margins": list(self.margins),
               "sigma": float(self.sigma)}
        if self.output_index is not None:
            out["output_index"] = list(self.output_index)
        return out


@dataclass(frozen=True)
class HalfspaceIntersection(AvoidRegion):
    """Polyhedral region ``{y : a_j' y <= b_j for all j}``.

    Residual ``prod_j max(0, b_j - a_j' y)``: positive only strictly inside.
    With ``sigma > 1`` the region is inflated about ``center``.
    """

    normals: np.ndarray
    offsets: np.ndarray
    center: np.ndarray | None = None
    sigma: float = 1.0
    output_index: tuple | None = None
    kind: str = field(default="halfspace_intersection", init=False)

    def __post_init__(self):
        a = np.atleast_2d(np.asarray(self.normals, float))
        b = np.asarray(self.offsets, float).reshape(-1)
        if a.shape[0] != b.size:
            raise DimensionError("normals and offsets differ in length")
        c = np.zeros(a.shape[1]) if self.center is None else np.asarray(self.center, float)
        object.__setattr__(self, "normals", a)
        object.__setattr__(self, "offsets", b)
        object.__setattr__(self, "center", c)
        if self.output_index is not None:
            object.__setattr__(self, "output_index", tuple(int(i) for i in self.output_index))

    def effective_offsets(self):
        ac = self.normals @ self.center
        return ac + self.sigma * (self.offsets - ac)

    def residual(self, y):
        y = np.asarray(y, dtype=float)
        yy = self._project(y)
        s = self.effective_offsets() - self.normals @ yy
        if np.any(s <= 0.0):
            return 0.0, np.zeros(y.size)
        phi = float(np.prod(s))
        grad = np.zeros(yy.size)
        for j in range(s.size):
            grad -= np.prod(np.delete(s, j)) * self.normals[j]
        return phi, self._lift_grad(grad, y.size)

    def anchor_points(self):
        return [self.center]

    def to_dict(self):
        out = {"kind": self.kind, "normals": self.normals.tolist(),
               "offsets": self.offsets.tolist(), "center": self.center.tolist(),
               "sigma": float(self.sigma)}
        if self.output_index is not None:
            out["output_index"] = list(self.output_index)
        return out


def region_from_dict(d: dict) -> AvoidRegion:
    kind = d.get("kind")
    idx = d.get("output_index")
    sigma = float(d.get("sigma", 1.0))
    if kind == "sphere":
        return Sphere(d["center"], float(d["radius"]), sigma, idx)
    if kind == "ellipsoid_union_complement":
        return EllipsoidUnionComplement(tuple(d["shapes"]), tuple(d["centers"]),
                                        tuple(d["margins"]), sigma, idx)
    if kind == "halfspace_intersection":
        return HalfspaceIntersection(d["normals"], d["offsets"], d.get("center"), sigma, idx)
    raise ValueError(f"unknown region kind {kind!r}")


# ----------------------------------------------------------------------------
def penalty_value(region: AvoidRegion, y, epsilon=2.0) -> float:
    phi, _ = region.residual(y)
    return phi ** epsilon if phi > 0.0 else 0.0


def penalty_gradient(region: AvoidRegion, y, epsilon=2.0) -> np.ndarray:
    if epsilon != 2:
        raise UnsupportedExponent("analytic gradients are only shipped for epsilon = 2")
    phi, dphi = region.residual(y)
    return 2.0 * phi * dphi


@dataclass(frozen=True)
class AvoidanceSpec:
    regions: Sequence[AvoidRegion] = ()
    mu: Sequence[float] = ()
    epsilon: float = 2.0
    S: float = 0.0

    def __post_init__(self):
        regions = tuple(self.regions)
        mu = tuple(float(v) for v in self.mu)
        if len(mu) == 1 and len(regions) > 1:
            mu = mu * len(regions)
        if len(regions) != len(mu):
            raise DimensionError(f"{len(regions)} regions but {len(mu)} weights")
        if any(v <= 0 for v in mu):
            raise ValueError("penalty weights must be positive")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if self.S < 0:
            raise ValueError("the avoidance bound S must be nonnegative")
        object.__setattr__(self, "regions", regions)
        object.__setattr__(self, "mu", mu)

    def __len__(self):
        return len(self.regions)

    def with_regions(self, regions, mu=None) -> AvoidanceSpec:
        """Same exponent and bound, new region list (weights broadcast when scalar)."""
        regions = tuple(regions)
        if mu is None:
            mu = (self.mu[0],) * len(regions) if self.mu else ()
        return AvoidanceSpec(regions, mu, self.epsilon, self.S)


def avoidance_cost(spec: AvoidanceSpec, y_seq, y_a) -> float:
    """``sum_i mu_i [F(y_a, O_i) + sum_j F(y(j), O_i)]``."""
    y_seq = np.atleast_2d(np.asarray(y_seq, float))
    total = 0.0
    for region, mu in zip(spec.regions, spec.mu):
        acc = penalty_value(region, y_a, spec.epsilon)
        for y in y_seq:
            acc += penalty_value(region, y, spec.epsilon)
        total += mu * acc
    return float(total)


def estimate_bound_S(spec: AvoidanceSpec, Y: Polytope, samples=4096, horizon=0,
                     seed=0) -> float:
    """Sampled upper estimate of the avoidance cost over the admissible outputs.

    ``(horizon + 2) * sum_i mu_i * max F(., O_i)``, inflated by 10 %. The
    maximum is taken over Sobol points in the bounding box of ``Y`` that lie
    in ``Y`` plus each region's anchor points. Diagnostics only.
    """
    if not spec.regions:
        return 0.0
    lo, hi = Y.bounding_box()
    m = int(2 ** np.ceil(np.log2(max(samples, 2))))
    pts = qmc.scale(qmc.Sobol(d=Y.dim, scramble=True, seed=seed).random(m), lo, hi)
    pts = pts[np.all(pts @ Y.H.T <= Y.h + 1e-12, axis=1)]
    total = 0.0
    for region, mu in zip(spec.regions, spec.mu):
        cand = list(pts)
        for a in region.anchor_points():
            if region.output_index is None and a.size == Y.dim and Y.contains(a):
                cand.append(a)
        fmax = max((penalty_value(region, y, spec.epsilon) for y in cand), default=0.0)
        total += mu * fmax
    return 1.1 * (horizon + 2) * total
