"""Empirical measures and exact Wasserstein distances on small supports.

Three exact solver routes, selected automatically:

* one-dimensional supports: quantile matching on the merged cumulative
  weights (exact for arbitrary weights),
* uniform weights with equal atom counts: optimal assignment
  (``scipy.optimize.linear_sum_assignment``),
* everything else: the transportation LP solved with HiGHS on a sparse
  constraint matrix.

All distances are exact up to solver round-off; there is no entropic or
sliced approximation anywhere in this module.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.optimize import linear_sum_assignment, linprog

from .errors import (
    DimensionMismatchError,
    EmptyMeasureError,
    MomentOverflowError,
    SupportCapError,
)

DEFAULT_SUPPORT_CAP = 4096

_WEIGHT_TOL = 1e-12
# exp overflows past ~709 in double precision
_EXP_ARG_LIMIT = 700.0


@dataclass(frozen=True)
class EmpiricalMeasure:
    """Weighted point cloud sum_j w_j * delta_{y_j} with weights summing to 1."""

    atoms: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        atoms = np.asarray(self.atoms, dtype=float)
        if atoms.ndim == 1:
            atoms = atoms[:, None]
        if atoms.ndim != 2 or atoms.shape[0] == 0:
            raise EmptyMeasureError("measure needs a (n, d) atom array with n >= 1")
        weights = np.asarray(self.weights, dtype=float)
        if weights.shape != (atoms.shape[0],):
            raise DimensionMismatchError("weights", atoms.shape[0], weights.size)
        if not np.all(np.isfinite(atoms)):
            raise ValueError("measure atoms must be finite")
        if np.any(weights <= 0):
            raise ValueError("measure weights must be positive")
        if abs(weights.sum() - 1.0) > _WEIGHT_TOL:
            raise ValueError(f"weights sum to {weights.sum()!r}, expected 1")
        object.__setattr__(self, "atoms", atoms)
        object.__setattr__(self, "weights", weights)

    @classmethod
    def uniform(cls, atoms) -> "EmpiricalMeasure":
        atoms = np.asarray(atoms, dtype=float)
        if atoms.ndim == 1:
            atoms = atoms[:, None]
        n = atoms.shape[0]
        return cls(atoms, np.full(n, 1.0 / n))

    @property
    def n(self) -> int:
        return self.atoms.shape[0]

    @property
    def dim(self) -> int:
        return self.atoms.shape[1]

    def is_uniform(self) -> bool:
        return bool(np.max(np.abs(self.weights - 1.0 / self.n)) <= _WEIGHT_TOL)


@dataclass(frozen=True)
class MeasurePath:
    """Time-indexed empirical measures with a fixed atom count and weights.

    ``states[t, j]`` is atom j at time ``times[t]``; the index j is a stable
    trajectory label, which is what path-space distances match on.
    """

    times: np.ndarray
    states: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        states = np.asarray(self.states, dtype=float)
        weights = np.asarray(self.weights, dtype=float)
        if states.ndim != 3:
            raise ValueError("states must have shape (times, atoms, dim)")
        if times.shape != (states.shape[0],):
            raise ValueError("times and states lengths differ")
        if times.size > 1 and not np.all(np.diff(times) > 0):
            raise ValueError("times must be strictly increasing")
        if weights.shape != (states.shape[1],):
            raise DimensionMismatchError("weights", states.shape[1], weights.size)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "weights", weights)

    @property
    def n_times(self) -> int:
        return self.times.size

    @property
    def n_atoms(self) -> int:
        return self.states.shape[1]

    @property
    def dim(self) -> int:
        return self.states.shape[2]

    def measure_at(self, index: int) -> EmpiricalMeasure:
        return EmpiricalMeasure(self.states[index], self.weights)


def support_radius(mu: EmpiricalMeasure) -> float:
    """Largest Euclidean atom norm; weights are irrelevant."""
    return float(np.max(np.linalg.norm(mu.atoms, axis=1)))


def moments(mu: EmpiricalMeasure, q: float) -> float:
    """q-th absolute moment sum_j w_j ||y_j||^q."""
    if q < 1:
        raise ValueError("moment order q must be >= 1")
    norms = np.linalg.norm(mu.atoms, axis=1)
    return float(np.sum(mu.weights * norms**q))


def exp_moment(mu: EmpiricalMeasure, alpha: float) -> float:
    """Exponential moment sum_j w_j exp(alpha ||y_j||^2).

    Raises MomentOverflowError (naming the offending atom norm) instead of
    returning inf.
    """
    if alpha < 0:
        raise ValueError("alpha must be >= 0")
    sq = np.sum(mu.atoms**2, axis=1)
    args = alpha * sq
    worst = int(np.argmax(args))
    if args[worst] > _EXP_ARG_LIMIT:
        raise MomentOverflowError(float(np.sqrt(sq[worst])), alpha)
    return float(np.sum(mu.weights * np.exp(args)))


def _pairwise_distances(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    diff = a[:, None, :] - b[None, :, :]
    return np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))


def _wasserstein_1d(xa, wa, xb, wb, p: float) -> float:
    """Exact 1-d W_p^p by walking the merged quantile partition."""
    ia = np.argsort(xa, kind="stable")
    ib = np.argsort(xb, kind="stable")
    xa, wa = xa[ia], wa[ia]
    xb, wb = xb[ib], wb[ib]
    i = j = 0
    ra, rb = wa[0], wb[0]
    cost = 0.0
    while True:
        step = min(ra, rb)
        cost += step * abs(xa[i] - xb[j]) ** p
        ra -= step
        rb -= step
        if ra <= 0.0:
            i += 1
            if i >= xa.size:
                break
            ra = wa[i]
        if rb <= 0.0:
            j += 1
            if j >= xb.size:
                break
            rb = wb[j]
    return cost


def _assignment_cost(dist: np.ndarray, p: float) -> float:
    """Uniform equal-size W_p^p via exact optimal assignment."""
    rows, cols = linear_sum_assignment(dist**p)
    return float(np.sum(dist[rows, cols] ** p) / dist.shape[0])


def _transport_lp_cost(dist: np.ndarray, wa: np.ndarray, wb: np.ndarray, p: float) -> float:
    """General weighted W_p^p through the transportation LP (HiGHS).

    One column-marginal constraint is dropped: it is implied by the others
    because both weight vectors sum to 1.
    """
    n, m = dist.shape
    cost_vec = (dist**p).ravel()
    n_rows = n + m - 1
    row_idx = np.empty(2 * n * m - n, dtype=np.int64)
    col_idx = np.empty_like(row_idx)
    # row marginals
    row_idx[: n * m] = np.repeat(np.arange(n), m)
    col_idx[: n * m] = np.arange(n * m)
    # column marginals, last one dropped
    cols = np.arange(n * m).reshape(n, m)[:, :-1].ravel(order="F")
    row_idx[n * m :] = n + np.repeat(np.arange(m - 1), n)
    col_idx[n * m :] = cols
    a_eq = sparse.coo_matrix(
        (np.ones(row_idx.size), (row_idx, col_idx)), shape=(n_rows, n * m)
    ).tocsr()
    b_eq = np.concatenate([wa, wb[:-1]])
    res = linprog(cost_vec, A_eq=a_eq, b_eq=b_eq, bounds=(0, None), method="highs")
    if res.status != 0:
        raise RuntimeError(f"transport LP failed: {res.message}")
    return float(res.fun)


def wasserstein(
    mu: EmpiricalMeasure,
    nu: EmpiricalMeasure,
    p: float = 2.0,
    support_cap: int = DEFAULT_SUPPORT_CAP,
) -> float:
    """Exact W_p between two finitely supported measures."""
    if p < 1:
        raise ValueError("Wasserstein order p must be >= 1")
    if mu.dim != nu.dim:
        raise DimensionMismatchError("nu", mu.dim, nu.dim)
    if mu.n + nu.n > support_cap:
        raise SupportCapError(mu.n + nu.n, support_cap)
    if mu.dim == 1:
        cost = _wasserstein_1d(
            mu.atoms[:, 0], mu.weights, nu.atoms[:, 0], nu.weights, p
        )
    else:
        dist = _pairwise_distances(mu.atoms, nu.atoms)
        if mu.n == nu.n and mu.is_uniform() and nu.is_uniform():
            cost = _assignment_cost(dist, p)
        else:
            cost = _transport_lp_cost(dist, mu.weights, nu.weights, p)
    return float(cost ** (1.0 / p))


def path_sup_distances(mu: MeasurePath, nu: MeasurePath) -> np.ndarray:
    """Matrix of sup-over-time distances between trajectories of two paths."""
    if mu.times.shape != nu.times.shape or not np.array_equal(mu.times, nu.times):
        raise ValueError("measure paths must share an identical time grid")
    out = np.zeros((mu.n_atoms, nu.n_atoms))
    for t in range(mu.n_times):
        np.maximum(out, _pairwise_distances(mu.states[t], nu.states[t]), out=out)
    return out


def wasserstein_path(
    mu: MeasurePath,
    nu: MeasurePath,
    p: float = 2.0,
    matching: np.ndarray | None = None,
    support_cap: int = DEFAULT_SUPPORT_CAP,
) -> float:
    """Exact W_p on path space under the sup-norm ground distance.

    With ``matching`` (index map from mu atoms to nu atoms) the cost is the
    matched-pair coupling functional: sum_j w_j sup_t |x_t^j - y_t^{m(j)}|^p.
    That plan is optimal for co-simulated transport-form paths sharing their
    initial matching. Without a matching, an exact assignment (uniform, equal
    sizes) or the general transport LP is solved over sup-distances.
    """
    if p < 1:
        raise ValueError("Wasserstein order p must be >= 1")
    if mu.dim != nu.dim:
        raise DimensionMismatchError("nu", mu.dim, nu.dim)
    if mu.times.shape != nu.times.shape or not np.array_equal(mu.times, nu.times):
        raise ValueError("measure paths must share an identical time grid")
    if matching is not None:
        matching = np.asarray(matching, dtype=int)
        if matching.shape != (mu.n_atoms,):
            raise ValueError("matching must map every mu atom to a nu atom")
        if not np.allclose(mu.weights, nu.weights[matching]):
            raise ValueError("matching must pair atoms of equal weight")
        diff = mu.states - nu.states[:, matching, :]
        sup = np.max(np.sqrt(np.einsum("tjk,tjk->tj", diff, diff)), axis=0)
        return float(np.sum(mu.weights * sup**p) ** (1.0 / p))
    if mu.n_atoms + nu.n_atoms > support_cap:
        raise SupportCapError(mu.n_atoms + nu.n_atoms, support_cap)
    dist = path_sup_distances(mu, nu)
    uniform = (
        mu.n_atoms == nu.n_atoms
        and np.max(np.abs(mu.weights - 1.0 / mu.n_atoms)) <= _WEIGHT_TOL
        and np.max(np.abs(nu.weights - 1.0 / nu.n_atoms)) <= _WEIGHT_TOL
    )
    if uniform:
        cost = _assignment_cost(dist, p)
    else:
        cost = _transport_lp_cost(dist, mu.weights, nu.weights, p)
    return float(cost ** (1.0 / p))
