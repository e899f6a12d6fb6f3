"""Frozen-field stochastic characteristics and transport-form checks.

Given a recorded measure path and the common-noise increments that produced
it, the characteristic of a start point x solves the same Euler recursion as
the particle system, but with the mean-field coefficients evaluated against
the frozen path instead of the evolving ensemble. Because the solver shares
its field-evaluation code with the particle stepper, pushing the initial
measure through its own frozen field reproduces the recorded run bit for
bit: the discrete transport identity.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from .dynamics import NoisePath, ParticleEnsemble, SimConfig, TrajectoryRecord, simulate
from .errors import BlowUpError
from .kernels import KernelSet, field_drift_diffusion
from .transport import EmpiricalMeasure, MeasurePath, support_radius, wasserstein


@dataclass(frozen=True)
class FrozenField:
    """A measure path treated as exogenous input to the characteristics SDE."""

    kernel: KernelSet
    field_path: MeasurePath
    common_increments: np.ndarray
    dt: float
    s1_convention: str = "half_both"
    blowup_norm: float = 1e6

    def __post_init__(self):
        if self.kernel.sigma is not None:
            raise ValueError("characteristics are defined for common noise only (sigma = 0)")
        inc = np.asarray(self.common_increments, dtype=float)
        if self.field_path.n_times != inc.size + 1:
            raise ValueError(
                "field path must hold one measure per noise grid point "
                f"(got {self.field_path.n_times} measures, {inc.size} increments)"
            )
        object.__setattr__(self, "common_increments", inc)

    @property
    def steps(self) -> int:
        return self.common_increments.size

    @classmethod
    def from_run(cls, run: TrajectoryRecord) -> "FrozenField":
        """Freeze a recorded run; requires full time resolution."""
        if run.config.record_stride != 1:
            raise ValueError("freezing a run requires record_stride == 1")
        if run.kernel.sigma is not None:
            raise ValueError("transport form needs a common-noise-only run (sigma = 0)")
        return cls(
            kernel=run.kernel,
            field_path=run.measure_path(),
            common_increments=run.noise.common_increments[: run.config.steps],
            dt=run.config.dt,
            s1_convention=run.config.s1_convention,
            blowup_norm=run.config.blowup_norm,
        )


def solve_characteristics(f: FrozenField, x0) -> np.ndarray:
    """Euler-Ito characteristics from one or many start points.

    Returns the full path array of shape (steps + 1, m, d) for a batch of m
    starts (a single (d,) start is promoted to m = 1).
    """
    x0 = np.asarray(x0, dtype=float)
    single = x0.ndim == 1
    if single:
        x0 = x0[None, :]
    k = f.kernel
    if x0.shape[-1] != k.dim:
        raise ValueError(f"start points have dimension {x0.shape[-1]}, kernel wants {k.dim}")
    atoms_path = f.field_path.states
    weights = f.field_path.weights
    out = np.empty((f.steps + 1,) + x0.shape)
    out[0] = x0
    current = x0
    for step in range(f.steps):
        drift, common = field_drift_diffusion(
            k, atoms_path[step], weights, current, s1_convention=f.s1_convention
        )
        current = current + f.dt * drift
        if common is not None:
            current = current + f.common_increments[step] * common
        max_norm = float(np.max(np.linalg.norm(current, axis=-1)))
        if not np.isfinite(max_norm) or max_norm > f.blowup_norm:
            raise BlowUpError(step, max_norm)
        out[step + 1] = current
    return out


def pushforward(f: FrozenField, init: EmpiricalMeasure) -> MeasurePath:
    """Push an initial measure through the frozen characteristic flow."""
    paths = solve_characteristics(f, init.atoms)
    return MeasurePath(f.field_path.times, paths, init.weights)


def transport_residual(run: TrajectoryRecord) -> float:
    """sup over grid times of W2 between a run and its own pushforward.

    Zero (up to exact floating-point identity) for every common-noise-only
    run, because the characteristics recursion reuses the stepper arithmetic.
    """
    frozen = FrozenField.from_run(run)
    replay = pushforward(frozen, run.measure_path().measure_at(0))
    original = run.measure_path()
    worst = 0.0
    for t in range(original.n_times):
        w2 = wasserstein(original.measure_at(t), replay.measure_at(t), p=2)
        worst = max(worst, w2)
    return worst


def evolve_transport(
    k: KernelSet,
    init: EmpiricalMeasure,
    cfg: SimConfig,
    noise: Optional[NoisePath] = None,
) -> MeasurePath:
    """Transport-form solution for a weighted initial measure.

    The atoms follow the self-consistent field of their own weighted
    empirical measure; for uniform weights this is the plain particle system.
    """
    if k.sigma is not None:
        raise ValueError("transport form needs sigma = 0")
    run = simulate(
        k,
        ParticleEnsemble(init.atoms),
        replace(cfg, n_particles=init.n),
        noise=noise,
        weights=init.weights,
    )
    return run.measure_path()


def comparison_experiment(
    k: KernelSet,
    init_a: EmpiricalMeasure,
    init_b: EmpiricalMeasure,
    cfg: SimConfig,
    radius: float,
    seeds: Sequence[int],
    p: float = 2.0,
) -> dict:
    """Monte-Carlo estimate of E[sup_{t <= tau_R} W_p^p] between two
    transport-form solutions sharing the common noise.

    tau_R is the first grid time at which the joint support radius (the max
    of the two measures' support radii) exceeds ``radius``; exceedance at
    time zero makes the supremum empty, reported as 0. The headline number is
    the ratio of the estimate to W_p^p of the initial measures.
    """
    if k.sigma is not None:
        raise ValueError("comparison experiment needs sigma = 0")
    w0 = wasserstein(init_a, init_b, p) ** p
    sups = np.empty(len(seeds))
    stopped_early = 0
    for s_idx, seed in enumerate(seeds):
        run_cfg = replace(cfg, master_seed=int(seed))
        noise = NoisePath(run_cfg.master_seed, run_cfg.dt, run_cfg.steps, run_cfg.dim)
        path_a = evolve_transport(k, init_a, run_cfg, noise=noise)
        path_b = evolve_transport(k, init_b, run_cfg, noise=noise)
        worst = 0.0
        hit = False
        for t in range(path_a.n_times):
            mu_t = path_a.measure_at(t)
            nu_t = path_b.measure_at(t)
            joint = max(support_radius(mu_t), support_radius(nu_t))
            if joint > radius:
                hit = True
                if t == 0:
                    worst = 0.0
                else:
                    worst = max(worst, wasserstein(mu_t, nu_t, p) ** p)
                break
            worst = max(worst, wasserstein(mu_t, nu_t, p) ** p)
        if hit:
            stopped_early += 1
        sups[s_idx] = worst
    estimate = float(np.mean(sups))
    stderr = float(np.std(sups, ddof=1) / np.sqrt(len(seeds))) if len(seeds) > 1 else 0.0
    degenerate = w0 == 0.0
    ratio = 0.0 if degenerate else estimate / w0
    return {
        "initial_cost": float(w0),
        "estimate": estimate,
        "stderr": stderr,
        "ratio": float(ratio),
        "degenerate_initial_distance": degenerate,
        "stopped_runs": int(stopped_early),
        "n_seeds": len(seeds),
        "p": float(p),
        "radius": float(radius),
    }
