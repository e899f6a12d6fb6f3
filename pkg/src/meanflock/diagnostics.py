"""Quantitative certification of the convergence and flocking claims.

Each diagnostic turns one theoretical statement into a Monte-Carlo check
with explicit tolerances:

* ``flocking_rate``: exponential decay of the velocity variance at rate at
  least 2 (psi_m - 4 ||phi||_inf^2),
* ``weakform_residual``: the weak-form defect M_psi is a centered martingale
  whose variance matches its quadratic-variation estimator,
* ``cauchy_convergence``: E[W_p^p(mu^N, mu^{2N})] decreases in N under the
  shared-noise coupling,
* ``chaos_test``: conditionally on the common noise, fixed particles
  decorrelate and their joint moments factorize.

Every report verdict is a pure function of the inputs and the cited
tolerance, so reruns reproduce reports bitwise.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np

from .dynamics import (
    NoisePath,
    ParticleEnsemble,
    SimConfig,
    TrajectoryRecord,
    init_rng,
    resample_rng,
    simulate,
)
from .errors import DimensionMismatchError, EnsembleSizeError
from .kernels import CuckerSmaleParams, KernelSet, field_drift_diffusion
from .testfunctions import CylinderFunction, TestFunction
from .transport import EmpiricalMeasure, wasserstein_path


@dataclass(frozen=True)
class Verdict:
    check: str
    value: float
    tolerance: float
    passed: bool

    def to_json_dict(self) -> dict:
        return {
            "check": self.check,
            "value": float(self.value),
            "tolerance": float(self.tolerance),
            "pass": bool(self.passed),
        }


@dataclass
class DiagnosticsReport:
    """Named metrics, per-time series, and tolerance-cited verdicts."""

    name: str
    metrics: dict = field(default_factory=dict)
    series: list = field(default_factory=list)
    verdicts: list = field(default_factory=list)
    notes: list = field(default_factory=list)

    def add_series(self, name: str, times, values, stderr=None):
        entry = {
            "name": name,
            "times": [float(t) for t in times],
            "values": [float(v) for v in values],
        }
        if stderr is not None:
            entry["stderr"] = [float(s) for s in stderr]
        self.series.append(entry)

    def add_verdict(self, check: str, value: float, tolerance: float, passed: bool):
        self.verdicts.append(Verdict(check, float(value), float(tolerance), bool(passed)))

    def all_pass(self) -> bool:
        return all(v.passed for v in self.verdicts)

    def to_json_dict(self) -> dict:
        return {
            "name": self.name,
            "metrics": {k: self.metrics[k] for k in sorted(self.metrics)},
            "series": self.series,
            "verdicts": [v.to_json_dict() for v in self.verdicts],
            "notes": list(self.notes),
        }


# ---------------------------------------------------------------------------
# Flocking
# ---------------------------------------------------------------------------


def flocking_energy(mu: EmpiricalMeasure) -> tuple[np.ndarray, float]:
    """Mean velocity and velocity variance of a position-velocity measure."""
    if mu.dim % 2 != 0:
        raise DimensionMismatchError("mu", mu.dim + 1, mu.dim)
    d = mu.dim // 2
    v = mu.atoms[:, d:]
    v_bar = np.einsum("j,jk->k", mu.weights, v)
    dev = v - v_bar
    energy = float(np.einsum("j,jk,jk->", mu.weights, dev, dev))
    return v_bar, energy


def energy_series(run: TrajectoryRecord) -> np.ndarray:
    """Velocity variance E_t at every recorded time of one run."""
    d = run.dim // 2
    v = run.states[:, :, d:]
    v_bar = np.einsum("j,tjk->tk", run.weights, v)
    dev = v - v_bar[:, None, :]
    return np.einsum("j,tjk,tjk->t", run.weights, dev, dev)


def observed_position_spread(run: TrajectoryRecord) -> float:
    """Largest pairwise position distance seen anywhere in the run."""
    d = run.dim // 2
    worst = 0.0
    for t in range(run.times.size):
        x = run.states[t, :, :d]
        diff = x[:, None, :] - x[None, :, :]
        worst = max(worst, float(np.sqrt(np.max(np.einsum("ijk,ijk->ij", diff, diff)))))
    return worst


def aggregate_flocking(
    times: np.ndarray,
    energies: np.ndarray,
    spreads: Sequence[float],
    params: CuckerSmaleParams,
    window: Optional[float] = None,
    fit_start_fraction: float = 0.1,
    rate_tolerance: float = 0.25,
) -> DiagnosticsReport:
    """Fit the decay rate of E[E_t] and compare with the theoretical bound.

    ``energies`` holds one E_t series per run; ``spreads`` the per-run
    observed position ranges. The bound r* = 2 (psi_m - 4 ||phi||_inf^2)
    uses psi_m = inf psi over ``window`` when given, otherwise over the
    observed spread. When psi_m <= 4 ||phi||_inf^2 the bound does not apply
    and the report carries a note instead of a verdict.
    """
    n_runs = energies.shape[0]
    report = DiagnosticsReport(name="flocking")
    mean_energy = energies.mean(axis=0)
    se_energy = (
        energies.std(axis=0, ddof=1) / np.sqrt(n_runs)
        if n_runs > 1
        else np.zeros_like(mean_energy)
    )
    report.add_series("mean_velocity_variance", times, mean_energy, se_energy)

    if window is None:
        window = max(spreads)
    psi_m = params.psi_inf(window)
    phi_sup = params.phi_sup()
    rate_bound = 2.0 * (psi_m - 4.0 * phi_sup**2)
    report.metrics.update(
        {
            "psi_m": float(psi_m),
            "phi_sup": float(phi_sup),
            "rate_bound": float(rate_bound),
            "window": float(window),
            "n_runs": n_runs,
        }
    )
    if psi_m <= 4.0 * phi_sup**2:
        report.notes.append("bound not applicable: psi_m <= 4 ||phi||_inf^2")
        return report

    t_end = times[-1]
    mask = (times >= fit_start_fraction * t_end) & (mean_energy > 0)
    if mask.sum() < 2:
        report.notes.append("bound not applicable: too few positive-energy samples")
        return report
    slope, _ = np.polyfit(times[mask], np.log(mean_energy[mask]), 1)
    fitted_rate = float(-slope)
    report.metrics["fitted_rate"] = fitted_rate
    report.metrics["fit_window_start"] = float(fit_start_fraction * t_end)
    threshold = rate_bound * (1.0 - rate_tolerance)
    report.add_verdict(
        "fitted_decay_rate_ge_bound",
        fitted_rate,
        threshold,
        fitted_rate >= threshold,
    )
    return report


def flocking_rate(
    runs: Sequence[TrajectoryRecord],
    params: CuckerSmaleParams,
    window: Optional[float] = None,
    fit_start_fraction: float = 0.1,
    rate_tolerance: float = 0.25,
) -> DiagnosticsReport:
    """Flocking-rate certification over an in-memory ensemble of runs."""
    if len(runs) < 1:
        raise EnsembleSizeError("flocking_rate needs at least one run")
    energies = np.stack([energy_series(run) for run in runs])
    spreads = [observed_position_spread(run) for run in runs]
    return aggregate_flocking(
        runs[0].times, energies, spreads, params, window,
        fit_start_fraction, rate_tolerance,
    )


def mean_velocity_drift(run: TrajectoryRecord) -> float:
    """max_t |v_bar(t) - v_bar(0)| over the recorded grid."""
    d = run.dim // 2
    v_bar = np.einsum("j,tjk->tk", run.weights, run.states[:, :, d:])
    return float(np.max(np.linalg.norm(v_bar - v_bar[0], axis=1)))


# ---------------------------------------------------------------------------
# Weak-form martingale residual
# ---------------------------------------------------------------------------


def weakform_single(
    run: TrajectoryRecord, psi: TestFunction, checkpoint_indices: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """(M_psi(t), QV(t)) of one run at the requested recorded indices.

    M_psi(t) = <psi, mu_t> - <psi, mu_0> - sum_k <L[mu] psi, mu> dt with the
    generator L[mu] psi = (B[mu] + S[mu]) . grad psi + A[mu] psi, and QV is
    the discrete quadratic-variation estimator
    sum_k (<C[mu] . grad psi, mu>^2 + (1/N) <|sigma^T grad psi|^2, mu>) dt.
    """
    if run.config.record_stride != 1:
        raise ValueError("weak-form residual needs record_stride == 1")
    k = run.kernel
    cfg = run.config
    states = run.states
    w = run.weights
    n_steps = cfg.steps
    psi_mean = np.array([np.sum(w * psi.eval(states[t])) for t in range(n_steps + 1)])
    gen = np.zeros(n_steps)
    qv_inc = np.zeros(n_steps)
    for t in range(n_steps):
        x = states[t]
        drift, common = field_drift_diffusion(
            k, x, w, x, s1_convention=cfg.s1_convention
        )
        grad = psi.grad(x)
        hess = psi.hess(x)
        gen_t = np.sum(w * np.einsum("nd,nd->n", drift, grad))
        if common is not None:
            # second-order operator from the common noise: 1/2 C_i C_j d^2_ij
            gen_t += 0.5 * np.sum(
                w * np.einsum("ni,nij,nj->n", common, hess, common)
            )
            paired = np.sum(w * np.einsum("nd,nd->n", common, grad))
            qv_inc[t] += paired**2
        if k.sigma is not None:
            sig = k.sigma(x)
            gen_t += 0.5 * np.sum(
                w * np.einsum("nik,njk,nij->n", sig, sig, hess)
            )
            sig_grad = np.einsum("nij,ni->nj", sig, grad)
            qv_inc[t] += (1.0 / run.n_particles) * np.sum(
                w * np.einsum("nj,nj->n", sig_grad, sig_grad)
            )
        gen[t] = gen_t
    gen_cum = np.concatenate([[0.0], np.cumsum(gen) * cfg.dt])
    qv_cum = np.concatenate([[0.0], np.cumsum(qv_inc) * cfg.dt])
    martingale = psi_mean - psi_mean[0] - gen_cum
    return martingale[checkpoint_indices], qv_cum[checkpoint_indices]


def default_checkpoints(n_steps: int, count: int = 8) -> np.ndarray:
    """Equispaced recorded indices, excluding t = 0, ending at the horizon."""
    count = min(count, n_steps)
    return np.unique(np.round(np.linspace(1, n_steps, count)).astype(int))


def aggregate_weakform(
    per_run: Sequence[tuple[np.ndarray, np.ndarray]],
    times: np.ndarray,
    mean_band: float = 4.0,
    var_band: float = 5.0,
) -> DiagnosticsReport:
    """Combine per-run (M, QV) samples into mean/variance verdicts."""
    m = np.stack([mq[0] for mq in per_run])
    qv = np.stack([mq[1] for mq in per_run])
    n_runs = m.shape[0]
    mean_m = m.mean(axis=0)
    se_m = m.std(axis=0, ddof=1) / np.sqrt(n_runs)
    var_m = m.var(axis=0, ddof=1)
    mean_qv = qv.mean(axis=0)
    se_qv = qv.std(axis=0, ddof=1) / np.sqrt(n_runs)
    # standard error of the sample variance from the fourth central moment
    centered = m - mean_m
    m4 = np.mean(centered**4, axis=0)
    se_var = np.sqrt(np.maximum(m4 - var_m**2 * (n_runs - 3) / (n_runs - 1), 0.0) / n_runs)

    report = DiagnosticsReport(name="weakform")
    report.metrics["n_runs"] = n_runs
    report.add_series("martingale_mean", times, mean_m, se_m)
    report.add_series("martingale_variance", times, var_m)
    report.add_series("quadratic_variation_mean", times, mean_qv, se_qv)
    for idx, t in enumerate(times):
        tol_mean = mean_band * se_m[idx]
        report.add_verdict(
            f"martingale_mean_t={t:g}",
            float(abs(mean_m[idx])),
            float(tol_mean),
            bool(abs(mean_m[idx]) <= tol_mean),
        )
        tol_var = var_band * float(np.sqrt(se_var[idx] ** 2 + se_qv[idx] ** 2))
        gap = float(abs(var_m[idx] - mean_qv[idx]))
        report.add_verdict(
            f"variance_matches_qv_t={t:g}", gap, tol_var, bool(gap <= tol_var)
        )
    return report


def weakform_residual(
    runs: Sequence[TrajectoryRecord],
    psi: TestFunction,
    n_checkpoints: int = 8,
    mean_band: float = 4.0,
    var_band: float = 5.0,
) -> DiagnosticsReport:
    """Martingale certification of the weak-form identity over an ensemble."""
    if len(runs) < 16:
        raise EnsembleSizeError(
            f"weak-form certification needs >= 16 runs, got {len(runs)}"
        )
    cfg0 = runs[0].config
    for run in runs[1:]:
        if run.config.steps != cfg0.steps or run.config.dt != cfg0.dt:
            raise ValueError("weak-form runs must share the time grid")
        if run.kernel is not runs[0].kernel:
            raise ValueError("weak-form runs must share the kernel")
    checkpoints = default_checkpoints(cfg0.steps, n_checkpoints)
    per_run = [weakform_single(run, psi, checkpoints) for run in runs]
    times = runs[0].times[checkpoints]
    return aggregate_weakform(per_run, times, mean_band, var_band)


# ---------------------------------------------------------------------------
# Cauchy convergence in N
# ---------------------------------------------------------------------------


def cauchy_single(
    k: KernelSet,
    base_atoms: np.ndarray,
    sizes: Sequence[int],
    cfg: SimConfig,
    seed: int,
    p: float,
) -> np.ndarray:
    """Coupled path distances W_p^p(mu^N, mu^{2N}) for one master seed."""
    run_cfg = replace(cfg, master_seed=int(seed), n_particles=int(sizes[0]))
    noise = NoisePath(run_cfg.master_seed, run_cfg.dt, run_cfg.steps, run_cfg.dim)
    paths = {}
    for n in sizes:
        n_cfg = replace(run_cfg, n_particles=int(n))
        run = simulate(
            k,
            ParticleEnsemble(base_atoms[:n]),
            n_cfg,
            noise=noise,
            particle_ids=np.arange(n),
        )
        paths[n] = run.measure_path()
    out = np.empty(len(sizes) - 1)
    for idx in range(len(sizes) - 1):
        big, small = sizes[idx], sizes[idx + 1]
        out[idx] = wasserstein_path(paths[small], paths[big], p=p) ** p
    return out


def cauchy_convergence(
    k: KernelSet,
    base_init: EmpiricalMeasure,
    sizes: Sequence[int],
    cfg: SimConfig,
    seeds: Sequence[int],
    p: float = 2.0,
    resample_init: Optional[Callable[[int], np.ndarray]] = None,
) -> DiagnosticsReport:
    """Coupled-noise estimate of E[W_p^p(mu^N, mu^{2N})] along doubling sizes.

    ``sizes`` lists decreasing system sizes with exact ratio 2; the largest
    must equal the atom count of ``base_init``, whose leading atoms seed the
    nested subsystems. With ``resample_init`` (seed -> atom block) the base
    atoms are redrawn per seed, so the estimate also averages over the
    initial sample; with one fixed draw the quenched initial distances need
    not be monotone in N. The verdict requires the paired-seed estimate to
    decrease with N within one standard error.
    """
    sizes = [int(n) for n in sizes]
    if len(sizes) < 2:
        raise ValueError("need at least two sizes")
    for a, b in zip(sizes, sizes[1:]):
        if a != 2 * b:
            raise ValueError(f"sizes must halve consecutively, got {a} then {b}")
    if base_init.n != sizes[0]:
        raise ValueError(
            f"base measure has {base_init.n} atoms, sizes[0] is {sizes[0]}"
        )
    if not base_init.is_uniform():
        raise ValueError("Cauchy coupling needs a uniform base measure")
    if k.sigma is not None:
        raise ValueError("Cauchy coupling is defined for sigma = 0")
    samples = np.stack(
        [
            cauchy_single(
                k,
                base_init.atoms if resample_init is None else resample_init(seed),
                sizes,
                cfg,
                seed,
                p,
            )
            for seed in seeds
        ]
    )
    return aggregate_cauchy(samples, sizes, p)


def aggregate_cauchy(samples: np.ndarray, sizes: Sequence[int], p: float) -> DiagnosticsReport:
    """Verdicts from per-seed coupled distances (one row per seed)."""
    n_seeds = samples.shape[0]
    means = samples.mean(axis=0)
    ses = samples.std(axis=0, ddof=1) / np.sqrt(n_seeds)
    report = DiagnosticsReport(name="cauchy")
    small_sizes = list(sizes[1:])
    report.metrics["n_seeds"] = n_seeds
    report.metrics["p"] = float(p)
    for n, mean, se in zip(small_sizes, means, ses):
        report.metrics[f"distance_N={n}"] = float(mean)
        report.metrics[f"stderr_N={n}"] = float(se)
    report.add_series("coupled_distance", small_sizes, means, ses)
    # smaller N means a coarser system: the estimate must grow as N shrinks
    for idx in range(len(small_sizes) - 1):
        diffs = samples[:, idx + 1] - samples[:, idx]
        se_diff = diffs.std(ddof=1) / np.sqrt(n_seeds) if n_seeds > 1 else 0.0
        report.add_verdict(
            f"decreasing_{small_sizes[idx + 1]}_to_{small_sizes[idx]}",
            float(diffs.mean()),
            float(-se_diff),
            bool(diffs.mean() >= -se_diff),
        )
    return report


# ---------------------------------------------------------------------------
# Conditional propagation of chaos
# ---------------------------------------------------------------------------


def chaos_beta_path(
    k: KernelSet,
    sampler: Callable[[np.random.Generator, int], np.ndarray],
    phis: Sequence[CylinderFunction],
    n_list: Sequence[int],
    cfg: SimConfig,
    beta_seed: int,
    ref_n: int,
    n_resamples: int,
) -> np.ndarray:
    """|E-hat[prod phi | beta] - prod <phi, mu_ref>| for each N at one beta."""
    r = len(phis)
    run_cfg = replace(cfg, master_seed=int(beta_seed))
    noise = NoisePath(run_cfg.master_seed, run_cfg.dt, run_cfg.steps, run_cfg.dim)

    ref_atoms = sampler(init_rng(beta_seed), ref_n)
    ref_run = simulate(
        k, ParticleEnsemble(ref_atoms), replace(run_cfg, n_particles=ref_n), noise=noise
    )
    ref_paths = np.swapaxes(ref_run.states, 0, 1)  # (n_ref, times, d)
    ref_marginals = [
        float(np.mean(phi.apply_path(ref_run.times, ref_paths))) for phi in phis
    ]
    target = float(np.prod(ref_marginals))

    n_max = max(n_list)
    gaps = np.empty(len(n_list))
    products = np.empty((len(n_list), n_resamples))
    for s in range(n_resamples):
        atoms_block = sampler(resample_rng(beta_seed, s), n_max)
        for n_idx, n in enumerate(n_list):
            run = simulate(
                k,
                ParticleEnsemble(atoms_block[:n]),
                replace(run_cfg, n_particles=int(n)),
                noise=noise,
            )
            lead = np.swapaxes(run.states[:, :r, :], 0, 1)  # (r, times, d)
            vals = [
                phi.apply_path(run.times, lead[i]) for i, phi in enumerate(phis)
            ]
            products[n_idx, s] = float(np.prod(vals))
    for n_idx in range(len(n_list)):
        gaps[n_idx] = abs(products[n_idx].mean() - target)
    return gaps


def chaos_test(
    k: KernelSet,
    sampler: Callable[[np.random.Generator, int], np.ndarray],
    phis: Sequence[CylinderFunction],
    n_list: Sequence[int],
    cfg: SimConfig,
    beta_seeds: Sequence[int],
    ref_n: Optional[int] = None,
    n_resamples: int = 64,
) -> DiagnosticsReport:
    """Conditional propagation of chaos along increasing system sizes.

    For each common-noise seed the conditional expectation given beta is
    estimated by resampling initial conditions on a fixed beta path; the
    unobservable limit measure is replaced by a large reference run on the
    same path. The verdict requires the gap Delta_N to decrease along
    ``n_list``.
    """
    if n_resamples < 32:
        raise EnsembleSizeError(
            f"chaos test needs >= 32 initial resamples, got {n_resamples}"
        )
    if k.sigma is not None:
        raise ValueError("chaos test is defined for sigma = 0")
    n_list = [int(n) for n in n_list]
    if sorted(n_list) != n_list:
        raise ValueError("n_list must increase")
    if ref_n is None:
        ref_n = 8 * max(n_list)
    if ref_n <= max(n_list):
        raise ValueError("reference size must exceed every tested size")
    if len(phis) >= min(n_list):
        raise ValueError("marginal count r must be far below the smallest system")
    per_beta = np.stack(
        [
            chaos_beta_path(k, sampler, phis, n_list, cfg, seed, ref_n, n_resamples)
            for seed in beta_seeds
        ]
    )
    return aggregate_chaos(per_beta, n_list, len(phis), ref_n, n_resamples)


def aggregate_chaos(
    per_beta: np.ndarray,
    n_list: Sequence[int],
    r: int,
    ref_n: int,
    n_resamples: int,
) -> DiagnosticsReport:
    """Verdicts from per-beta-path conditional gaps (one row per beta)."""
    n_beta = per_beta.shape[0]
    deltas = per_beta.mean(axis=0)
    ses = (
        per_beta.std(axis=0, ddof=1) / np.sqrt(n_beta)
        if n_beta > 1
        else np.zeros_like(deltas)
    )
    report = DiagnosticsReport(name="chaos")
    report.metrics.update(
        {
            "r": int(r),
            "ref_n": int(ref_n),
            "n_resamples": int(n_resamples),
            "n_beta_paths": int(n_beta),
        }
    )
    for n, delta, se in zip(n_list, deltas, ses):
        report.metrics[f"delta_N={n}"] = float(delta)
        report.metrics[f"stderr_N={n}"] = float(se)
    report.add_series("conditional_gap", n_list, deltas, ses)
    for idx in range(len(n_list) - 1):
        report.add_verdict(
            f"decreasing_{n_list[idx]}_to_{n_list[idx + 1]}",
            float(deltas[idx + 1]),
            float(deltas[idx]),
            bool(deltas[idx + 1] < deltas[idx]),
        )
    return report
