"""Interaction kernels, their Ito corrective terms, and mean-field fields.

A :class:`KernelSet` bundles the pair drift ``b(x, y)``, the common-noise
coefficient ``c(x, y)`` (scalar driving noise), the individual-noise
coefficient ``sigma(x)``, and the analytic Jacobians of ``c`` and ``sigma``.
Every evaluator is vectorized: inputs broadcast over leading axes, so a full
pairwise table is one call with shapes ``(n, 1, d)`` against ``(1, m, d)``.

Jacobian conventions:

* ``grad_c_x(x, y)[..., i, j] = d c_i / d x_j`` and likewise ``grad_c_y``,
* ``grad_sigma(x)[..., i, l, k] = d sigma_{i,l} / d x_k``.

The corrective drift converting circle (Stratonovich) dynamics to their Ito
form is built from ``s1(x, y, z) = 1/2 (grad_x c(x,y) c(x,z)
+ grad_y c(x,y) c(y,z))`` and ``S2(x) = 1/2 Tr(grad sigma sigma^T)``.
``s1_convention="paper_literal"`` drops the 1/2 on s1 entirely; it exists so
the integrator cross-validation can demonstrate that this variant is wrong.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import DimensionMismatchError, EmptyMeasureError
from .transport import EmpiricalMeasure

S1_CONVENTIONS = ("half_both", "paper_literal")


def _s1_factor(convention: str) -> float:
    if convention not in S1_CONVENTIONS:
        raise ValueError(f"unknown s1 convention {convention!r}, expected one of {S1_CONVENTIONS}")
    return 0.5 if convention == "half_both" else 1.0


@dataclass(frozen=True)
class KernelSet:
    """Coefficients of one interacting-particle model over R^dim.

    ``c``/``sigma`` set to None mean identically zero and let the simulator
    skip the corresponding work. When ``c`` is present both of its Jacobians
    must be supplied; same for ``sigma``. Jacobians are analytic by contract,
    finite differences are reserved for test oracles.
    """

    dim: int
    b: Optional[Callable] = None
    c: Optional[Callable] = None
    grad_c_x: Optional[Callable] = None
    grad_c_y: Optional[Callable] = None
    sigma: Optional[Callable] = None
    grad_sigma: Optional[Callable] = None
    assumption_tags: frozenset = frozenset()
    theta: Optional[float] = None
    c_bound: Optional[float] = None
    name: str = "custom"
    # optional fused pairwise evaluator (c, grad_c_x, grad_c_y) sharing
    # intermediate arrays; must agree bitwise with the separate closures
    c_pair: Optional[Callable] = None

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("kernel dimension must be >= 1")
        if self.c is not None and (self.grad_c_x is None or self.grad_c_y is None):
            raise ValueError("kernel with common noise needs grad_c_x and grad_c_y")
        if self.sigma is not None and self.grad_sigma is None:
            raise ValueError("kernel with individual noise needs grad_sigma")

    def check_point(self, x: np.ndarray, argument: str) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.dim:
            raise DimensionMismatchError(argument, self.dim, x.shape[-1])
        return x


def eval_s1(k: KernelSet, x, y, z, s1_convention: str = "half_both") -> np.ndarray:
    """Stratonovich-to-Ito corrective kernel s1(x, y, z)."""
    factor = _s1_factor(s1_convention)
    x = k.check_point(x, "x")
    y = k.check_point(y, "y")
    z = k.check_point(z, "z")
    if k.c is None:
        shape = np.broadcast_shapes(x.shape, y.shape, z.shape)
        return np.zeros(shape)
    t1 = np.einsum("...ij,...j->...i", k.grad_c_x(x, y), k.c(x, z))
    t2 = np.einsum("...ij,...j->...i", k.grad_c_y(x, y), k.c(y, z))
    return factor * (t1 + t2)


def eval_S2(k: KernelSet, x) -> np.ndarray:
    """Individual-noise corrective drift 1/2 Tr(grad sigma sigma^T) at x."""
    x = k.check_point(x, "x")
    if k.sigma is None:
        return np.zeros(x.shape)
    return 0.5 * np.einsum("...ilk,...kl->...i", k.grad_sigma(x), k.sigma(x))


def _require_atoms(mu: EmpiricalMeasure, k: KernelSet):
    if mu.n == 0:
        raise EmptyMeasureError("mean-field evaluation against an empty measure")
    if mu.dim != k.dim:
        raise DimensionMismatchError("mu", k.dim, mu.dim)


def mean_field_B(k: KernelSet, mu: EmpiricalMeasure, x) -> np.ndarray:
    """Drift field B[mu](x) = sum_j w_j b(x, y_j)."""
    _require_atoms(mu, k)
    x = k.check_point(x, "x")
    if k.b is None:
        return np.zeros(x.shape)
    vals = k.b(x[..., None, :], mu.atoms)
    return np.einsum("j,...jd->...d", mu.weights, vals)


def mean_field_C(k: KernelSet, mu: EmpiricalMeasure, x) -> np.ndarray:
    """Common-noise field C[mu](x) = sum_j w_j c(x, y_j)."""
    _require_atoms(mu, k)
    x = k.check_point(x, "x")
    if k.c is None:
        return np.zeros(x.shape)
    vals = k.c(x[..., None, :], mu.atoms)
    return np.einsum("j,...jd->...d", mu.weights, vals)


def mean_field_S(
    k: KernelSet, mu: EmpiricalMeasure, x, s1_convention: str = "half_both"
) -> np.ndarray:
    """Full corrective field S[mu](x) = S1[mu](x) + S2(x).

    The double integral S1[mu](x) = sum_{j,l} w_j w_l s1(x, y_j, y_l)
    factorizes through C[mu], so one query costs O(n^2) in the atom count
    (dominated by C[mu] at every atom), not O(n^2) kernel pair evaluations
    per (j, l).
    """
    _require_atoms(mu, k)
    x = k.check_point(x, "x")
    out = eval_S2(k, x)
    if k.c is None:
        return out
    factor = _s1_factor(s1_convention)
    w = mu.weights
    c_q = np.einsum("j,...jd->...d", w, k.c(x[..., None, :], mu.atoms))
    c_atoms = np.einsum(
        "j,mjd->md", w, k.c(mu.atoms[:, None, :], mu.atoms[None, :, :])
    )
    gx = k.grad_c_x(x[..., None, :], mu.atoms)
    gy = k.grad_c_y(x[..., None, :], mu.atoms)
    term1 = np.einsum("j,...jik,...k->...i", w, gx, c_q)
    term2 = np.einsum("j,...jik,jk->...i", w, gy, c_atoms)
    return out + factor * (term1 + term2)


def field_drift_diffusion(
    k: KernelSet,
    atoms: np.ndarray,
    weights: np.ndarray,
    queries: np.ndarray,
    s1_convention: str = "half_both",
    include_correction: bool = True,
):
    """Batched mean-field fields against an atom cloud.

    Returns ``(drift, common_diff)`` evaluated at every query point, where
    drift is B[mu] plus, when ``include_correction``, the Ito correction
    S[mu] = S1[mu] + S2, and ``common_diff`` is C[mu] (None when the kernel
    carries no common noise). This is the single evaluation path shared by
    the particle stepper and the frozen-field characteristics solver, which
    is what makes the discrete transport identity exact.
    """
    m = queries.shape[0]
    drift = np.zeros((m, k.dim))
    q = queries[:, None, :]
    a = atoms[None, :, :]
    if k.b is not None:
        drift += np.einsum("j,mjd->md", weights, k.b(q, a))
    common = None
    if k.c is not None:
        if include_correction:
            factor = _s1_factor(s1_convention)
            if k.c_pair is not None:
                c_qa, gx, gy = k.c_pair(q, a, grads=True)
            else:
                c_qa = k.c(q, a)
                gx = k.grad_c_x(q, a)
                gy = k.grad_c_y(q, a)
            common = np.einsum("j,mjd->md", weights, c_qa)
            if queries is atoms:
                c_atoms = common
            else:
                aa = (
                    k.c_pair(atoms[:, None, :], atoms[None, :, :], grads=False)[0]
                    if k.c_pair is not None
                    else k.c(atoms[:, None, :], atoms[None, :, :])
                )
                c_atoms = np.einsum("j,mjd->md", weights, aa)
            term1 = np.einsum("j,mjik,mk->mi", weights, gx, common)
            term2 = np.einsum("j,mjik,jk->mi", weights, gy, c_atoms)
            drift += factor * (term1 + term2)
        else:
            c_qa = k.c_pair(q, a, grads=False)[0] if k.c_pair is not None else k.c(q, a)
            common = np.einsum("j,mjd->md", weights, c_qa)
    if k.sigma is not None and include_correction:
        drift += eval_S2(k, queries)
    return drift, common


# ---------------------------------------------------------------------------
# Cucker-Smale family
# ---------------------------------------------------------------------------


def _rational_weight(amplitude: float, exponent: float, r_sq: np.ndarray) -> np.ndarray:
    """amplitude / (1 + r^2)^exponent with fast paths for small integer powers."""
    if amplitude == 0.0:
        return np.zeros(np.shape(r_sq))
    if exponent == 0.0:
        return np.full(np.shape(r_sq), amplitude)
    base = 1.0 + r_sq
    if exponent == 1.0:
        return amplitude / base
    if exponent == 2.0:
        return amplitude / (base * base)
    return amplitude * base ** (-exponent)


@dataclass(frozen=True)
class Truncation:
    """C^2 velocity truncation: R(v) = v * chi(|v|), chi quintic smoothstep.

    chi is 1 on [0, radius], 0 beyond radius + margin.
    """

    radius: float
    margin: float

    def __post_init__(self):
        if self.radius <= 0 or self.margin <= 0:
            raise ValueError("truncation radius and margin must be positive")

    def chi_both(self, s: np.ndarray):
        """(chi(s), chi'(s)) in one pass over the transition band."""
        u = (s - self.radius) / self.margin
        inside = (u > 0.0) & (u < 1.0)
        uc = np.where(inside, u, 0.0)
        core = uc * uc * uc * (10.0 + uc * (-15.0 + 6.0 * uc))
        chi = np.where(u >= 1.0, 0.0, np.where(inside, 1.0 - core, 1.0))
        one_m = 1.0 - uc
        cp = np.where(inside, (-30.0 / self.margin) * uc * uc * one_m * one_m, 0.0)
        return chi, cp

    def chi(self, s: np.ndarray) -> np.ndarray:
        return self.chi_both(s)[0]

    def chi_prime(self, s: np.ndarray) -> np.ndarray:
        return self.chi_both(s)[1]

    def apply(self, v: np.ndarray) -> np.ndarray:
        s = np.sqrt(np.einsum("...k,...k->...", v, v))
        return v * self.chi(s)[..., None]

    def jacobian(self, v: np.ndarray) -> np.ndarray:
        """(d R_i / d v_j) = chi(s) delta_ij + chi'(s)/s v_i v_j."""
        d = v.shape[-1]
        s = np.sqrt(np.einsum("...k,...k->...", v, v))
        chi, cp = self.chi_both(s)
        # chi' vanishes identically for s <= radius, so the ratio is safe
        ratio = np.where(s > 0, cp / np.where(s > 0, s, 1.0), 0.0)
        eye = np.eye(d)
        return chi[..., None, None] * eye + ratio[..., None, None] * (
            v[..., :, None] * v[..., None, :]
        )


@dataclass(frozen=True)
class CuckerSmaleParams:
    """Parameters of the flocking kernels over states (x, v) in R^{2 half_dim}.

    The alignment weight is psi(r) = lam / (1 + |r|^2)^gamma and the
    common-noise weight phi has the same rational form with (phi_lam,
    phi_gamma). A positive phi_lam switches on the noisy-interaction term
    phi(x - y) R(w - v) circle d beta.
    """

    half_dim: int
    lam: float = 1.0
    gamma: float = 1.0
    phi_lam: float = 0.0
    phi_gamma: float = 0.0
    truncation: Optional[Truncation] = None

    def __post_init__(self):
        if self.half_dim < 1:
            raise ValueError("half_dim must be >= 1")
        if self.lam <= 0:
            raise ValueError("psi amplitude lam must be positive")
        if self.gamma < 0:
            raise ValueError("psi exponent gamma must be >= 0")
        if self.phi_lam < 0 or self.phi_gamma < 0:
            raise ValueError("phi parameters must be >= 0")

    def psi(self, r_sq: np.ndarray) -> np.ndarray:
        return _rational_weight(self.lam, self.gamma, r_sq)

    def psi_prime_over(self, r_sq: np.ndarray) -> np.ndarray:
        """d psi / d(r^2), used by position Jacobians."""
        return _rational_weight(-self.gamma * self.lam, self.gamma + 1.0, r_sq)

    def phi(self, r_sq: np.ndarray) -> np.ndarray:
        return _rational_weight(self.phi_lam, self.phi_gamma, r_sq)

    def phi_prime_over(self, r_sq: np.ndarray) -> np.ndarray:
        return _rational_weight(-self.phi_gamma * self.phi_lam, self.phi_gamma + 1.0, r_sq)

    def psi_inf(self, window: float) -> float:
        """inf of psi over |r| <= window (psi decreases in |r|)."""
        return float(self.psi(np.asarray(window) ** 2))

    def phi_sup(self) -> float:
        return self.phi_lam


def cucker_smale_kernels(p: CuckerSmaleParams) -> KernelSet:
    """Flocking KernelSet over R^{2d}: b = (v, psi(x-y)(w-v)), c = (0, phi(x-y) R(w-v))."""
    d = p.half_dim
    dim = 2 * d

    def split(z):
        return z[..., :d], z[..., d:]

    def b(z1, z2):
        x, v = split(z1)
        y, w = split(z2)
        r = x - y
        psi = p.psi(np.einsum("...k,...k->...", r, r))
        out = np.empty(psi.shape + (dim,))
        out[..., :d] = v
        out[..., d:] = psi[..., None] * (w - v)
        return out

    has_noise = p.phi_lam > 0.0
    trunc = p.truncation

    def c_pair(z1, z2, grads: bool):
        """(c, grad_c_x, grad_c_y) with r, u, phi and the truncation shared."""
        x, v = split(z1)
        y, w = split(z2)
        r = x - y
        u = w - v
        r_sq = np.einsum("...k,...k->...", r, r)
        phi = p.phi(r_sq)
        if trunc is not None:
            s = np.sqrt(np.einsum("...k,...k->...", u, u))
            chi, cp = trunc.chi_both(s)
            ru = u * chi[..., None]
        else:
            ru = u
        shape = np.broadcast_shapes(z1.shape, z2.shape)[:-1]
        c_val = np.zeros(shape + (dim,))
        c_val[..., d:] = phi[..., None] * ru
        if not grads:
            return c_val, None, None
        dphi = p.phi_prime_over(r_sq)
        if trunc is not None:
            ratio = np.where(s > 0, cp / np.where(s > 0, s, 1.0), 0.0)
            jac_u = chi[..., None, None] * np.eye(d) + ratio[..., None, None] * (
                u[..., :, None] * u[..., None, :]
            )
        else:
            jac_u = np.broadcast_to(np.eye(d), shape + (d, d))
        # velocity rows, position columns: +- phi'(r^2) * 2 r_j * R_i(u)
        pos_block = 2.0 * dphi[..., None, None] * ru[..., :, None] * r[..., None, :]
        # velocity rows, velocity columns: +- phi * dR_i/du_j
        vel_block = phi[..., None, None] * jac_u
        gx = np.zeros(shape + (dim, dim))
        gx[..., d:, :d] = pos_block
        gx[..., d:, d:] = -vel_block
        gy = np.zeros(shape + (dim, dim))
        gy[..., d:, :d] = -pos_block
        gy[..., d:, d:] = vel_block
        return c_val, gx, gy

    def c(z1, z2):
        return c_pair(z1, z2, grads=False)[0]

    def grad_c_x(z1, z2):
        return c_pair(z1, z2, grads=True)[1]

    def grad_c_y(z1, z2):
        return c_pair(z1, z2, grads=True)[2]

    tags = {"sublinear", "locally_lipschitz", "common_noise_only"}
    c_bound = None
    if has_noise and trunc is not None:
        tags.add("bounded_c")
        c_bound = p.phi_lam * (trunc.radius + trunc.margin)
    return KernelSet(
        dim=dim,
        b=b,
        c=c if has_noise else None,
        grad_c_x=grad_c_x if has_noise else None,
        grad_c_y=grad_c_y if has_noise else None,
        assumption_tags=frozenset(tags),
        theta=0.0,
        c_bound=c_bound,
        name="cucker-smale" + ("-truncated" if trunc is not None else ""),
        c_pair=c_pair if has_noise else None,
    )


def cucker_smale_individual_kernels(
    p: CuckerSmaleParams, sigma_v: float
) -> KernelSet:
    """Flocking kernels plus constant individual noise sigma_v on velocities."""
    base = cucker_smale_kernels(p)
    d = p.half_dim
    dim = 2 * d
    diag = np.zeros((dim, dim))
    diag[d:, d:] = sigma_v * np.eye(d)

    def sigma(x):
        return np.broadcast_to(diag, x.shape[:-1] + (dim, dim))

    def grad_sigma(x):
        return np.zeros(x.shape[:-1] + (dim, dim, dim))

    return KernelSet(
        dim=dim,
        b=base.b,
        c=base.c,
        grad_c_x=base.grad_c_x,
        grad_c_y=base.grad_c_y,
        sigma=sigma,
        grad_sigma=grad_sigma,
        assumption_tags=frozenset({"sublinear", "locally_lipschitz"}),
        theta=0.0,
        name="cucker-smale-individual",
        c_pair=base.c_pair,
    )


# ---------------------------------------------------------------------------
# Generic test kernels
# ---------------------------------------------------------------------------


def zero_kernels(dim: int) -> KernelSet:
    return KernelSet(dim=dim, name="zero", assumption_tags=frozenset({"sublinear"}))


def constant_drift_kernels(dim: int, drift) -> KernelSet:
    b0 = np.broadcast_to(np.asarray(drift, dtype=float), (dim,))

    def b(x, y):
        shape = np.broadcast_shapes(x.shape, y.shape)
        return np.broadcast_to(b0, shape)

    return KernelSet(
        dim=dim,
        b=b,
        name="constant-drift",
        assumption_tags=frozenset({"sublinear", "bounded_c"}),
    )


def linear_drift_kernels(dim: int, rate: float = 1.0) -> KernelSet:
    """b(x, y) = rate * x; the classical exponential-growth test drift."""

    def b(x, y):
        shape = np.broadcast_shapes(x.shape, y.shape)
        return rate * np.broadcast_to(x, shape)

    return KernelSet(dim=dim, b=b, name="linear-drift")


def constant_common_kernels(dim: int, value) -> KernelSet:
    """c(x, y) = value, additive common noise; all corrective terms vanish."""
    c0 = np.broadcast_to(np.asarray(value, dtype=float), (dim,))

    def c(x, y):
        shape = np.broadcast_shapes(x.shape, y.shape)
        return np.broadcast_to(c0, shape)

    def grad_zero(x, y):
        shape = np.broadcast_shapes(x.shape, y.shape)[:-1]
        return np.zeros(shape + (dim, dim))

    return KernelSet(
        dim=dim,
        c=c,
        grad_c_x=grad_zero,
        grad_c_y=grad_zero,
        name="constant-common",
        assumption_tags=frozenset({"sublinear", "bounded_c", "common_noise_only"}),
        c_bound=float(np.linalg.norm(c0)),
    )


def linear_common_kernels(dim: int, rate: float = 1.0) -> KernelSet:
    """c(x, y) = rate * x, a geometric common noise; s1(x, y, z) = rate^2 x / 2."""

    def c(x, y):
        shape = np.broadcast_shapes(x.shape, y.shape)
        return rate * np.broadcast_to(x, shape)

    eye = np.eye(dim)

    def grad_c_x(x, y):
        shape = np.broadcast_shapes(x.shape, y.shape)[:-1]
        return np.broadcast_to(rate * eye, shape + (dim, dim))

    def grad_c_y(x, y):
        shape = np.broadcast_shapes(x.shape, y.shape)[:-1]
        return np.zeros(shape + (dim, dim))

    return KernelSet(
        dim=dim,
        c=c,
        grad_c_x=grad_c_x,
        grad_c_y=grad_c_y,
        name="linear-common",
        assumption_tags=frozenset({"sublinear", "common_noise_only"}),
    )


def diag_individual_kernels(dim: int, rate: float = 1.0) -> KernelSet:
    """sigma(x) = rate * diag(x); S2(x) = rate^2 x / 2."""

    def sigma(x):
        out = np.zeros(x.shape[:-1] + (dim, dim))
        idx = np.arange(dim)
        out[..., idx, idx] = rate * x
        return out

    def grad_sigma(x):
        out = np.zeros(x.shape[:-1] + (dim, dim, dim))
        idx = np.arange(dim)
        out[..., idx, idx, idx] = rate
        return out

    return KernelSet(
        dim=dim,
        sigma=sigma,
        grad_sigma=grad_sigma,
        name="diag-individual",
        assumption_tags=frozenset({"sublinear"}),
    )


def constant_individual_kernels(dim: int, scale: float = 1.0) -> KernelSet:
    """sigma(x) = scale * I, additive individual noise."""
    eye = np.eye(dim)

    def sigma(x):
        return np.broadcast_to(scale * eye, x.shape[:-1] + (dim, dim))

    def grad_sigma(x):
        return np.zeros(x.shape[:-1] + (dim, dim, dim))

    return KernelSet(
        dim=dim,
        sigma=sigma,
        grad_sigma=grad_sigma,
        name="constant-individual",
        assumption_tags=frozenset({"sublinear", "bounded_c"}),
    )
