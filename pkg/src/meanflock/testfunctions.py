"""C^2 test functions with analytic gradients and Hessians.

These pair smooth observables with the derivative data the weak-form
generator needs. The compactly supported bumps use the quintic profile
P(u) = 1 - u^3 (10 - 15 u + 6 u^2), which has two vanishing derivatives at
both ends of [0, 1] and therefore gives C^2 regularity after composition
with the squared radius.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np


@dataclass(frozen=True)
class TestFunction:
    """Scalar observable with vectorized value, gradient and Hessian."""

    eval: Callable
    grad: Callable
    hess: Callable
    support_radius: float = np.inf
    name: str = "testfunction"


def _quintic_profile(u: np.ndarray):
    """P, P', P'' of the decreasing quintic profile on u in [0, 1]."""
    uc = np.clip(u, 0.0, 1.0)
    val = 1.0 - uc**3 * (10.0 - 15.0 * uc + 6.0 * uc**2)
    d1 = -30.0 * uc**2 * (1.0 - uc) ** 2
    d2 = -60.0 * uc * (1.0 - uc) * (1.0 - 2.0 * uc)
    outside = (u <= 0.0) | (u >= 1.0)
    d1 = np.where(outside, 0.0, d1)
    d2 = np.where(outside, 0.0, d2)
    val = np.where(u >= 1.0, 0.0, val)
    val = np.where(u <= 0.0, 1.0, val)
    return val, d1, d2


def bump(center, radius: float, dim: int | None = None) -> TestFunction:
    """Compactly supported C^2 bump: psi(x) = P(|x - c|^2 / R^2)."""
    center = np.atleast_1d(np.asarray(center, dtype=float))
    if dim is not None and center.size == 1 and dim > 1:
        center = np.full(dim, center[0])
    d = center.size
    r_sq = radius * radius

    def _u(x):
        diff = x - center
        return np.einsum("...k,...k->...", diff, diff) / r_sq, diff

    def eval_(x):
        u, _ = _u(np.asarray(x, dtype=float))
        return _quintic_profile(u)[0]

    def grad(x):
        x = np.asarray(x, dtype=float)
        u, diff = _u(x)
        _, d1, _ = _quintic_profile(u)
        return d1[..., None] * (2.0 / r_sq) * diff

    def hess(x):
        x = np.asarray(x, dtype=float)
        u, diff = _u(x)
        _, d1, d2 = _quintic_profile(u)
        outer = diff[..., :, None] * diff[..., None, :]
        eye = np.eye(d)
        return (4.0 / r_sq**2) * d2[..., None, None] * outer + (
            2.0 / r_sq
        ) * d1[..., None, None] * eye

    return TestFunction(
        eval=eval_,
        grad=grad,
        hess=hess,
        support_radius=float(np.linalg.norm(center) + radius),
        name=f"bump(r={radius})",
    )


def velocity_bump(v_center, radius: float, half_dim: int) -> TestFunction:
    """Bump acting on the velocity block of a position-velocity state."""
    v_center = np.atleast_1d(np.asarray(v_center, dtype=float))
    if v_center.size == 1 and half_dim > 1:
        v_center = np.full(half_dim, v_center[0])
    inner = bump(v_center, radius)
    d = half_dim

    def eval_(z):
        return inner.eval(np.asarray(z, dtype=float)[..., d:])

    def grad(z):
        z = np.asarray(z, dtype=float)
        out = np.zeros(z.shape)
        out[..., d:] = inner.grad(z[..., d:])
        return out

    def hess(z):
        z = np.asarray(z, dtype=float)
        out = np.zeros(z.shape + (2 * d,))
        out[..., d:, d:] = inner.hess(z[..., d:])
        return out

    return TestFunction(
        eval=eval_, grad=grad, hess=hess, support_radius=np.inf,
        name=f"velocity_bump(r={radius})",
    )


def gaussian(center, width: float, dim: int | None = None) -> TestFunction:
    """psi(x) = exp(-|x - c|^2 / (2 w^2)); smooth with bounded derivatives."""
    center = np.atleast_1d(np.asarray(center, dtype=float))
    if dim is not None and center.size == 1 and dim > 1:
        center = np.full(dim, center[0])
    d = center.size
    w_sq = width * width

    def eval_(x):
        diff = np.asarray(x, dtype=float) - center
        return np.exp(-np.einsum("...k,...k->...", diff, diff) / (2.0 * w_sq))

    def grad(x):
        x = np.asarray(x, dtype=float)
        diff = x - center
        return eval_(x)[..., None] * (-diff / w_sq)

    def hess(x):
        x = np.asarray(x, dtype=float)
        diff = x - center
        outer = diff[..., :, None] * diff[..., None, :]
        return eval_(x)[..., None, None] * (outer / w_sq**2 - np.eye(d) / w_sq)

    return TestFunction(
        eval=eval_, grad=grad, hess=hess, name=f"gaussian(w={width})"
    )


def coordinate(index: int, dim: int) -> TestFunction:
    """psi(x) = x_index; linear, so the Hessian vanishes."""
    e = np.zeros(dim)
    e[index] = 1.0

    def eval_(x):
        return np.asarray(x, dtype=float)[..., index]

    def grad(x):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(e, x.shape).copy()

    def hess(x):
        x = np.asarray(x, dtype=float)
        return np.zeros(x.shape + (dim,))

    return TestFunction(
        eval=eval_, grad=grad, hess=hess, name=f"coordinate({index})"
    )


def constant(value: float = 1.0) -> TestFunction:
    def eval_(x):
        return np.full(np.asarray(x).shape[:-1], value)

    def grad(x):
        return np.zeros(np.asarray(x, dtype=float).shape)

    def hess(x):
        x = np.asarray(x, dtype=float)
        return np.zeros(x.shape + (x.shape[-1],))

    return TestFunction(eval=eval_, grad=grad, hess=hess, name="constant")


@dataclass(frozen=True)
class CylinderFunction:
    """Bounded path functional phi(x) = f(x_t) for a fixed grid time t."""

    fn: TestFunction
    t: float
    name: str = "cylinder"

    def time_index(self, times: np.ndarray) -> int:
        idx = int(np.argmin(np.abs(times - self.t)))
        if abs(times[idx] - self.t) > 1e-9:
            raise ValueError(f"cylinder time {self.t} not on the trajectory grid")
        return idx

    def apply_path(self, times: np.ndarray, path: np.ndarray) -> np.ndarray:
        """Evaluate on (..., times, d) trajectories at the cylinder time."""
        return self.fn.eval(path[..., self.time_index(times), :])
