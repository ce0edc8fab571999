"""Vehicle models shared by the reachability solver and the sampling planner.

Every method is vectorised over leading array dimensions: a state array has
shape ``(..., state_dim)`` and a control array ``(..., 2)``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def wrap_angle(theta):
    """Map angles to (-pi, pi]."""
    return np.pi - np.mod(np.pi - theta, 2.0 * np.pi)


@dataclass(frozen=True)
class ControlBounds:
    v_min: float = 0.0
    v_max: float = 1.0
    omega_max: float = 1.5

    def __post_init__(self):
        if self.v_min > self.v_max:
            raise ValueError("v_min must not exceed v_max")
        if self.omega_max <= 0:
            raise ValueError("omega_max must be positive")


class Unicycle:
    """Forward unicycle: state (x, y, theta), control (v, omega)."""

    state_dim = 3
    periodic_dims = (2,)

    def __init__(self, bounds: ControlBounds):
        self.bounds = bounds

    def saturate(self, u):
        u = np.asarray(u, dtype=float)
        out = np.empty_like(u)
        out[..., 0] = np.clip(u[..., 0], self.bounds.v_min, self.bounds.v_max)
        out[..., 1] = np.clip(u[..., 1], -self.bounds.omega_max, self.bounds.omega_max)
        return out

    def flow(self, x, u):
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        th = x[..., 2]
        return np.stack([u[..., 0] * np.cos(th), u[..., 0] * np.sin(th),
                         np.broadcast_to(u[..., 1], th.shape)], axis=-1)

    def step(self, x, u, dt):
        """Explicit Euler step with saturation; heading is re-wrapped."""
        x = np.asarray(x, dtype=float)
        u = self.saturate(u)
        nxt = x + self.flow(x, u) * dt
        nxt[..., 2] = wrap_angle(nxt[..., 2])
        return nxt

    def hamiltonian(self, x, p):
        """min over the control box of p . f(x, u)."""
        x = np.asarray(x, dtype=float)
        p = np.asarray(p, dtype=float)
        th = x[..., 2]
        c = p[..., 0] * np.cos(th) + p[..., 1] * np.sin(th)
        b = self.bounds
        return np.minimum(b.v_min * c, b.v_max * c) - b.omega_max * np.abs(p[..., 2])

    def optimal_control(self, x, p):
        """Vertex of the control box minimising p . f; ties go to (v_max, +omega_max)."""
        x = np.asarray(x, dtype=float)
        p = np.asarray(p, dtype=float)
        th = x[..., 2]
        c = p[..., 0] * np.cos(th) + p[..., 1] * np.sin(th)
        b = self.bounds
        v = np.where(c > 0, b.v_min, b.v_max)
        w = np.where(p[..., 2] > 0, -b.omega_max, b.omega_max)
        return np.stack([v, w], axis=-1)

    def vertices(self):
        b = self.bounds
        return np.array([[b.v_min, -b.omega_max], [b.v_min, b.omega_max],
                         [b.v_max, -b.omega_max], [b.v_max, b.omega_max]])

    # the bang-bang optima are all among the samples
    samples_cover_optima = True

    def control_samples(self) -> np.ndarray:
        """Finite control set for lookahead search: full-speed arcs and lines, plus turning in place."""
        b = self.bounds
        out = [[b.v_max, -b.omega_max], [b.v_max, 0.0], [b.v_max, b.omega_max],
               [b.v_min, -b.omega_max], [b.v_min, b.omega_max]]
        if b.v_min != 0.0:
            out.append([b.v_min, 0.0])
        return np.array(out)

    @property
    def max_speed(self) -> float:
        return max(abs(self.bounds.v_min), abs(self.bounds.v_max))

    def dissipation(self):
        """Upper bounds on |dH/dp_d| for Lax-Friedrichs."""
        vm = max(abs(self.bounds.v_min), abs(self.bounds.v_max))
        return np.array([vm, vm, self.bounds.omega_max])


class SingleIntegrator:
    """Planar point with velocity control in a disc of radius v_max."""

    state_dim = 2
    periodic_dims = ()

    def __init__(self, v_max: float = 1.0):
        if v_max <= 0:
            raise ValueError("v_max must be positive")
        self.v_max = float(v_max)

    def saturate(self, u):
        u = np.asarray(u, dtype=float)
        n = np.linalg.norm(u, axis=-1, keepdims=True)
        scale = np.where(n > self.v_max, self.v_max / np.maximum(n, 1e-300), 1.0)
        return u * scale

    def flow(self, x, u):
        return np.broadcast_to(np.asarray(u, dtype=float), np.shape(x)).copy()

    def step(self, x, u, dt):
        return np.asarray(x, dtype=float) + self.saturate(u) * dt

    def hamiltonian(self, x, p):
        p = np.asarray(p, dtype=float)
        return -self.v_max * np.hypot(p[..., 0], p[..., 1])

    def optimal_control(self, x, p):
        p = np.asarray(p, dtype=float)
        n = np.hypot(p[..., 0], p[..., 1])
        safe = np.where(n > 0, n, 1.0)
        ux = np.where(n > 0, -self.v_max * p[..., 0] / safe, self.v_max)
        uy = np.where(n > 0, -self.v_max * p[..., 1] / safe, 0.0)
        return np.stack([ux, uy], axis=-1)

    samples_cover_optima = False

    def control_samples(self, n: int = 16) -> np.ndarray:
        a = 2.0 * np.pi * np.arange(n) / n
        return self.v_max * np.stack([np.cos(a), np.sin(a)], axis=-1)

    @property
    def max_speed(self) -> float:
        return self.v_max

    def dissipation(self):
        return np.array([self.v_max, self.v_max])
