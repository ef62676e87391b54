"""Nonlinear truth models, fixed-step integration and the obstacle range sensor."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .avoidance import Sphere
from .model import LinearModel, euler_discretize, linearize


def rk4_step(f: Callable, x, u, h):
    k1 = f(x, u)
    k2 = f(x + 0.5 * h * k1, u)
    k3 = f(x + 0.5 * h * k2, u)
    k4 = f(x + h * k3, u)
    return x + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)


def integrate(plant, state, u, Ts, substeps=1):
    """Classical RK4 over one sample with the input held constant.

    ``plant`` is either a callable ``f(x, u)`` or an object with a
    ``derivative`` method.
    """
    if Ts <= 0:
        raise ValueError("sampling time must be positive")
    f = plant.derivative if hasattr(plant, "derivative") else plant
    x = np.asarray(state, float)
    u = np.asarray(u, float)
    h = Ts / substeps
    for _ in range(substeps):
        x = rk4_step(f, x, u, h)
    return x


# --------------------------------------------------------------------------
@dataclass(frozen=True)
class BallPlatePlant:
    """Ball rolling on a plate actuated through the plate's angular accelerations.

    State ``(p1, p2, th1, th2, dp1, dp2, dth1, dth2)``, input ``(a1, a2)``,
    output ``(p1, p2)``.
    """

    m: float = 0.05
    r: float = 0.01
    I_b: float = 2.5e-6
    g: float = 9.81

    def __post_init__(self):
        if min(self.m, self.r, self.I_b, self.g) <= 0:
            raise ValueError("ball-plate parameters must be positive")

    @property
    def gain(self):
        return self.m / (self.m + self.I_b / self.r ** 2)

    def derivative(self, x, u):
        p1, p2, th1, th2, dp1, dp2, dth1, dth2 = x
        k = self.gain
        ddp1 = k * (p1 * dth1 ** 2 + p2 * dth1 * dth2 + self.g * np.sin(th1))
        ddp2 = k * (p2 * dth2 ** 2 + p1 * dth1 * dth2 + self.g * np.sin(th2))
        return np.array([dp1, dp2, dth1, dth2, ddp1, ddp2, u[0], u[1]])

    def output(self, x, u=None):
        return np.asarray(x[:2], float)

    def equilibrium(self):
        return np.zeros(8), np.zeros(2)

    def linear_model(self, Ts) -> LinearModel:
        x_eq, u_eq = self.equilibrium()
        A, B, C, D = linearize(self.derivative, x_eq, u_eq, output=self.output)
        return euler_discretize(A, B, C, D, Ts)


def ball_plate_derivative(state, u, plant: BallPlatePlant | None = None):
    return (plant or BallPlatePlant()).derivative(np.asarray(state, float), np.asarray(u, float))


# --------------------------------------------------------------------------
@dataclass(frozen=True)
class QuadrotorPlant:
    """Rigid-body quadrotor with ZYX Euler angles, plus-configuration mixer.

    State ``(xi, eta, dxi, deta)`` with ``xi`` the inertial position and
    ``eta = (phi, theta, psi)``; input the four rotor thrusts; output
    ``(x, y, z, psi)``. Rotors 1 and 3 lie on the body x axis (front, back),
    2 and 4 on the body y axis (left, right)::

        tau_x = l (f2 - f4)
        tau_y = l (f3 - f1)
        tau_z = c (f1 - f2 + f3 - f4)
    """

    mass: float = 1.0
    inertia: tuple = (0.01, 0.01, 0.02)
    arm: float = 0.23
    yaw_coeff: float = 0.02
    g: float = 9.81
    f_max: float = 12.0

    def __post_init__(self):
        if min(self.mass, self.arm, self.yaw_coeff, self.g, *self.inertia) <= 0:
            raise ValueError("quadrotor parameters must be positive")

    @property
    def hover_thrust(self):
        return self.mass * self.g / 4.0

    def wrench(self, f):
        f1, f2, f3, f4 = f
        tau = np.array([self.arm * (f2 - f4), self.arm * (f3 - f1),
                        self.yaw_coeff * (f1 - f2 + f3 - f4)])
        return float(np.sum(f)), tau

    @staticmethod
    def rotation(eta):
        phi, th, psi = eta
        cf, sf, ct, st, cp, sp = (np.cos(phi), np.sin(phi), np.cos(th), np.sin(th),
                                  np.cos(psi), np.sin(psi))
        return np.array([[cp * ct, cp * st * sf - sp * cf, cp * st * cf + sp * sf],
                         [sp * ct, sp * st * sf + cp * cf, sp * st * cf - cp * sf],
                         [-st, ct * sf, ct * cf]])

    def derivative(self, x, u):
        x = np.asarray(x, float)
        eta, dxi, deta = x[3:6], x[6:9], x[9:12]
        thrust, tau = self.wrench(u)
        R = self.rotation(eta)
        ddxi = R[:, 2] * thrust / self.mass - np.array([0.0, 0.0, self.g])
        phi, th, _ = eta
        dphi, dth, _ = deta
        sf, cf, st, ct = np.sin(phi), np.cos(phi), np.sin(th), np.cos(th)
        # body rates w = W(eta) deta
        W = np.array([[1.0, 0.0, -st], [0.0, cf, sf * ct], [0.0, -sf, cf * ct]])
        dW = np.array([[0.0, 0.0, -ct * dth],
                       [0.0, -sf * dphi, cf * ct * dphi - sf * st * dth],
                       [0.0, -cf * dphi, -sf * ct * dphi - cf * st * dth]])
        I = np.asarray(self.inertia, float)
        w = W @ deta
        dw = (tau - np.cross(w, I * w)) / I
        ddeta = np.linalg.solve(W, dw - dW @ deta)
        return np.concatenate([dxi, deta, ddxi, ddeta])

    def output(self, x, u=None):
        x = np.asarray(x, float)
        return np.array([x[0], x[1], x[2], x[5]])

    def equilibrium(self, position=(0.0, 0.0, 0.0), yaw=0.0):
        x = np.zeros(12)
        x[:3] = position
        x[5] = yaw
        return x, np.full(4, self.hover_thrust)

    def linear_model(self, Ts, position=(0.0, 0.0, 0.0)) -> LinearModel:
        x_eq, u_eq = self.equilibrium(position)
        A, B, C, D = linearize(self.derivative, x_eq, u_eq, output=self.output)
        return euler_discretize(A, B, C, D, Ts)


def quad_derivative(state, u, plant: QuadrotorPlant | None = None):
    return (plant or QuadrotorPlant()).derivative(state, np.asarray(u, float))


# --------------------------------------------------------------------------
@dataclass(frozen=True)
class Box:
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lower, float)
        hi = np.asarray(self.upper, float)
        if lo.shape != hi.shape or np.any(hi < lo):
            raise ValueError("box corners are inconsistent")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    def closest_point(self, p):
        return np.clip(p, self.lower, self.upper)

    def distance(self, p):
        return float(np.linalg.norm(np.asarray(p, float) - self.closest_point(p)))

    def segment_hits(self, a, b) -> bool:
        """Slab test for the segment from ``a`` to ``b``."""
        a, b = np.asarray(a, float), np.asarray(b, float)
        d = b - a
        t0, t1 = 0.0, 1.0
        for i in range(a.size):
            if abs(d[i]) < 1e-15:
                if a[i] < self.lower[i] or a[i] > self.upper[i]:
                    return False
                continue
            ta, tb = sorted(((self.lower[i] - a[i]) / d[i], (self.upper[i] - a[i]) / d[i]))
            t0, t1 = max(t0, ta), min(t1, tb)
            if t0 > t1:
                return False
        return True


@dataclass(frozen=True)
class WorldMap:
    lower: np.ndarray = field(default_factory=lambda: np.array([-24.0, -15.0, 0.0]))
    upper: np.ndarray = field(default_factory=lambda: np.array([24.0, 15.0, 20.0]))
    obstacles: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "lower", np.asarray(self.lower, float))
        object.__setattr__(self, "upper", np.asarray(self.upper, float))
        boxes = tuple(b if isinstance(b, Box) else Box(*b) for b in self.obstacles)
        for b in boxes:
            if np.any(b.lower < self.lower - 1e-12) or np.any(b.upper > self.upper + 1e-12):
                raise ValueError("obstacle outside the map bounds")
        object.__setattr__(self, "obstacles", boxes)

    @classmethod
    def from_config(cls, d: dict) -> WorldMap:
        return cls(d.get("lower", [-24, -15, 0]), d.get("upper", [24, 15, 20]),
                   tuple(Box(o["min"], o["max"]) for o in d.get("obstacles", [])))

    def min_distance(self, p) -> float:
        return min((b.distance(p) for b in self.obstacles), default=np.inf)


@dataclass(frozen=True)
class RangeSensor:
    range: float = 4.0
    radius: float = 2.0

    def __post_init__(self):
        if not 0 < self.radius < self.range:
            raise ValueError("emitted radius must be positive and below the sensing range")


def sensor_scan(world: WorldMap, position, sensor: RangeSensor | None = None, sigma=1.0,
                output_index=(0, 1, 2), offset=None) -> list:
    """Spheres centred at the closest boundary point of every box within range.

    ``offset`` is subtracted from the centres, which lets the regions be
    expressed in the coordinates of a prediction model.
    """
    sensor = sensor or RangeSensor()
    p = np.asarray(position, float)[:3]
    off = np.zeros(3) if offset is None else np.asarray(offset, float)
    out = []
    for b in world.obstacles:
        c = b.closest_point(p)
        if np.linalg.norm(p - c) <= sensor.range:
            out.append(Sphere(c - off, sensor.radius, sigma, output_index))
    return out
