"""Experiment orchestration: configs in, reports and manifests out.

Every experiment is reproducible from its manifest: the manifest embeds the
exact config text, the explicit seed list, and the config hash. Reports hold
only deterministic content (no wall times), so re-running a manifest
reproduces ``report.json`` byte for byte regardless of the worker count.

Worker processes rebuild kernels from the plain config mapping, which keeps
the per-seed work functions picklable; results are aggregated in seed order
so parallel and serial execution agree exactly. ``MFS_THREADS`` caps the
worker count.
"""

from __future__ import annotations

import json
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from . import __version__
from .characteristics import comparison_experiment, transport_residual
from .config import ExperimentConfig, load_config, parse_config
from .diagnostics import (
    DiagnosticsReport,
    aggregate_cauchy,
    aggregate_chaos,
    aggregate_flocking,
    aggregate_weakform,
    cauchy_single,
    chaos_beta_path,
    default_checkpoints,
    energy_series,
    mean_velocity_drift,
    observed_position_spread,
    weakform_single,
)
from .dynamics import NoisePath, ParticleEnsemble, SimConfig, init_rng, simulate
from .errors import ConfigError, MeanflockError
from .kernels import (
    CuckerSmaleParams,
    KernelSet,
    Truncation,
    constant_common_kernels,
    constant_drift_kernels,
    constant_individual_kernels,
    cucker_smale_individual_kernels,
    cucker_smale_kernels,
    diag_individual_kernels,
    linear_common_kernels,
    linear_drift_kernels,
    zero_kernels,
)
from .testfunctions import CylinderFunction, bump, velocity_bump
from .transport import EmpiricalMeasure, moments

# ---------------------------------------------------------------------------
# Model registry
# ---------------------------------------------------------------------------

_CS_FAMILY = ("cucker-smale", "cucker-smale-truncated", "cucker-smale-individual")


def _cs_params(values: dict) -> CuckerSmaleParams:
    trunc = None
    if values.get("trunc_radius") is not None:
        trunc = Truncation(values["trunc_radius"], values["trunc_margin"])
    return CuckerSmaleParams(
        half_dim=values["half_dim"],
        lam=values["lambda"],
        gamma=values["gamma"],
        phi_lam=values["phi_lambda"],
        phi_gamma=values["phi_gamma"],
        truncation=trunc,
    )


MODEL_CATALOG = {
    "cucker-smale": "flocking drift psi(x-y)(w-v) with optional common noise "
    "phi(x-y)(w-v); params: half_dim, lambda, gamma, phi_lambda, phi_gamma",
    "cucker-smale-truncated": "cucker-smale with C^2-truncated velocities in the "
    "noise term; extra params: trunc_radius, trunc_margin",
    "cucker-smale-individual": "cucker-smale plus constant individual noise on "
    "velocities; extra param: sigma_scale",
    "zero": "all coefficients zero; param: dim",
    "constant-drift": "b(x,y) = drift_value in every coordinate; params: dim, drift_value",
    "linear-drift": "b(x,y) = drift_value * x; params: dim, drift_value",
    "linear-common": "c(x,y) = drift_value * x, geometric common noise; params: dim, drift_value",
    "constant-common": "c(x,y) = drift_value in every coordinate, additive common "
    "noise; params: dim, drift_value",
    "diag-individual": "sigma(x) = sigma_scale * diag(x); params: dim, sigma_scale",
    "constant-individual": "sigma(x) = sigma_scale * I; params: dim, sigma_scale",
}


def build_kernel(values: dict) -> KernelSet:
    model = values["model"]
    if model == "cucker-smale":
        params = _cs_params(values)
        return cucker_smale_kernels(
            CuckerSmaleParams(
                half_dim=params.half_dim, lam=params.lam, gamma=params.gamma,
                phi_lam=params.phi_lam, phi_gamma=params.phi_gamma, truncation=None,
            )
        )
    if model == "cucker-smale-truncated":
        if values.get("trunc_radius") is None:
            raise ConfigError("cucker-smale-truncated requires trunc_radius and trunc_margin")
        return cucker_smale_kernels(_cs_params(values))
    if model == "cucker-smale-individual":
        return cucker_smale_individual_kernels(_cs_params(values), values["sigma_scale"])
    if model == "zero":
        return zero_kernels(values["dim"])
    if model == "constant-drift":
        return constant_drift_kernels(values["dim"], values["drift_value"])
    if model == "linear-drift":
        return linear_drift_kernels(values["dim"], values["drift_value"])
    if model == "linear-common":
        return linear_common_kernels(values["dim"], values["drift_value"])
    if model == "constant-common":
        return constant_common_kernels(values["dim"], values["drift_value"])
    if model == "diag-individual":
        return diag_individual_kernels(values["dim"], values["sigma_scale"])
    if model == "constant-individual":
        return constant_individual_kernels(values["dim"], values["sigma_scale"])
    raise ConfigError(
        f"unknown model '{model}'; available: {', '.join(sorted(MODEL_CATALOG))}"
    )


def state_dim(values: dict) -> int:
    if values["model"] in _CS_FAMILY:
        return 2 * values["half_dim"]
    return values["dim"]


def list_models() -> dict[str, str]:
    return dict(MODEL_CATALOG)


# ---------------------------------------------------------------------------
# Initial conditions
# ---------------------------------------------------------------------------


def sample_initial_atoms(values: dict, rng: np.random.Generator, n: int) -> np.ndarray:
    """Draw n i.i.d. initial states following the config's init block."""
    dim = state_dim(values)
    if values["model"] in _CS_FAMILY:
        d = values["half_dim"]
        scales = np.concatenate(
            [np.full(d, values["init_position_scale"]), np.full(d, values["init_velocity_scale"])]
        )
    else:
        scales = np.full(dim, values["init_scale"])
    if values["init_kind"] == "gaussian":
        return rng.standard_normal((n, dim)) * scales
    return rng.uniform(-1.0, 1.0, size=(n, dim)) * scales


def build_sim_config(values: dict, n_particles: Optional[int] = None, seed: Optional[int] = None) -> SimConfig:
    return SimConfig(
        n_particles=n_particles if n_particles is not None else values["n_particles"],
        dim=state_dim(values),
        t_final=values["t_final"],
        dt=values["dt"],
        scheme=values["scheme"],
        master_seed=seed if seed is not None else values["master_seed"],
        record_stride=values["record_stride"],
        s1_convention=values["s1_convention"],
        blowup_norm=values["blowup_norm"],
    )


def _simulate_for_seed(values: dict, seed: int, record_stride: Optional[int] = None):
    kernel = build_kernel(values)
    cfg = build_sim_config(values, seed=seed)
    if record_stride is not None:
        cfg = replace(cfg, record_stride=record_stride)
    atoms = sample_initial_atoms(values, init_rng(seed), cfg.n_particles)
    return kernel, simulate(kernel, ParticleEnsemble(atoms), cfg)


# ---------------------------------------------------------------------------
# Per-seed workers (top level so process pools can pickle them)
# ---------------------------------------------------------------------------


def _flocking_worker(args):
    values, seed = args
    _, run = _simulate_for_seed(values, seed)
    return energy_series(run), observed_position_spread(run), mean_velocity_drift(run), run.times


def _weakform_worker(args):
    values, seed = args
    _, run = _simulate_for_seed(values, seed, record_stride=1)
    psi = _build_test_function(values)
    checkpoints = default_checkpoints(run.config.steps, values["n_checkpoints"])
    m, qv = weakform_single(run, psi, checkpoints)
    return m, qv, run.times[checkpoints]


def _cauchy_worker(args):
    # initial atoms are redrawn per seed so the expectation averages over
    # both the noise and the nested initial sample
    values, seed = args
    kernel = build_kernel(values)
    sizes = values["sizes"]
    cfg = build_sim_config(values, n_particles=sizes[0])
    base_atoms = sample_initial_atoms(values, init_rng(seed), sizes[0])
    return cauchy_single(kernel, base_atoms, sizes, cfg, seed, values["wasserstein_p"])


def _chaos_worker(args):
    values, beta_seed = args
    kernel = build_kernel(values)
    n_list = values["n_list"]
    ref_n = values.get("ref_n") or 8 * max(n_list)
    cfg = build_sim_config(values, n_particles=max(n_list))
    phis = _build_cylinder_functions(values)

    def sampler(rng, n):
        return sample_initial_atoms(values, rng, n)

    return chaos_beta_path(
        kernel, sampler, phis, n_list, cfg, beta_seed, ref_n, values["n_resamples"]
    )


def _transport_check_worker(args):
    values, seed = args
    _, run = _simulate_for_seed(values, seed, record_stride=1)
    return transport_residual(run)


def _simulate_worker(args):
    values, seed = args
    _, run = _simulate_for_seed(values, seed)
    final = run.measure_path().measure_at(run.times.size - 1)
    return run.times, run.states, float(moments(final, 2.0))


def _build_test_function(values: dict):
    if values["model"] in _CS_FAMILY:
        return velocity_bump(values["tf_center"], values["tf_radius"], values["half_dim"])
    return bump(values["tf_center"], values["tf_radius"], dim=state_dim(values))


def _build_cylinder_functions(values: dict) -> list[CylinderFunction]:
    # two bounded path observables at distinct grid times (r = 2)
    t_final = values["t_final"]
    dt = values["dt"]
    steps = int(round(t_final / dt))
    t_late = round(0.75 * steps) * dt
    center, radius = values["tf_center"], values["tf_radius"]
    if values["model"] in _CS_FAMILY:
        d = values["half_dim"]
        f1 = velocity_bump(center, radius, d)
        f2 = velocity_bump(center, 1.2 * radius, d)
    else:
        dim = state_dim(values)
        f1 = bump(center, radius, dim=dim)
        f2 = bump(center, 1.2 * radius, dim=dim)
    return [CylinderFunction(f1, t_final), CylinderFunction(f2, t_late)]


# ---------------------------------------------------------------------------
# Parallel mapping
# ---------------------------------------------------------------------------


def worker_count() -> int:
    raw = os.environ.get("MFS_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise ConfigError(f"MFS_THREADS must be an integer, got {raw!r}")


def map_jobs(fn: Callable, jobs: list, workers: Optional[int] = None) -> list:
    """Apply fn over jobs, in order, optionally across processes.

    Results are collected in job order, so the aggregate is identical for
    any worker count.
    """
    workers = worker_count() if workers is None else max(1, workers)
    if workers == 1 or len(jobs) <= 1:
        return [fn(job) for job in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, jobs))


# ---------------------------------------------------------------------------
# Experiment execution
# ---------------------------------------------------------------------------


def execute(cfg: ExperimentConfig, output_dir: Optional[Path] = None) -> DiagnosticsReport:
    """Run one experiment, writing trajectory CSVs when configured."""
    values = cfg.values
    kind = cfg.kind
    seeds = cfg.seeds()
    jobs = [(values, seed) for seed in seeds]

    if kind == "simulate":
        results = map_jobs(_simulate_worker, jobs)
        report = DiagnosticsReport(name="simulate")
        report.metrics["n_runs"] = len(seeds)
        for seed, (times, states, m2) in zip(seeds, results):
            report.metrics[f"final_second_moment_seed={seed}"] = m2
            report.add_verdict(
                f"finite_states_seed={seed}",
                float(np.max(np.abs(states))),
                values["blowup_norm"],
                bool(np.all(np.isfinite(states))),
            )
        if output_dir is not None and values.get("write_trajectories", True) is not False:
            _write_trajectory_csvs(values, seeds, results, output_dir)
        return report

    if kind == "transport-check":
        kernel = build_kernel(values)
        if kernel.sigma is not None:
            raise ConfigError("transport-check requires a common-noise-only model")
        residuals = map_jobs(_transport_check_worker, jobs)
        report = DiagnosticsReport(name="transport-check")
        tol = values["residual_tolerance"]
        for seed, res in zip(seeds, residuals):
            report.metrics[f"residual_seed={seed}"] = float(res)
            report.add_verdict(f"transport_identity_seed={seed}", float(res), tol, res <= tol)
        return report

    if kind == "flocking":
        results = map_jobs(_flocking_worker, jobs)
        energies = np.stack([r[0] for r in results])
        spreads = [r[1] for r in results]
        drifts = [r[2] for r in results]
        times = results[0][3]
        report = aggregate_flocking(
            times,
            energies,
            spreads,
            _cs_params(values),
            window=values.get("psi_window"),
            fit_start_fraction=values["fit_start_fraction"],
            rate_tolerance=values["rate_tolerance"],
        )
        report.metrics["max_mean_velocity_drift"] = float(max(drifts))
        return report

    if kind == "weakform":
        if len(seeds) < 16:
            raise ConfigError("weakform needs at least 16 seeds")
        results = map_jobs(_weakform_worker, jobs)
        per_run = [(m, qv) for m, qv, _ in results]
        times = results[0][2]
        return aggregate_weakform(
            per_run, times, mean_band=values["mean_band"], var_band=values["var_band"]
        )

    if kind == "cauchy":
        sizes = values["sizes"]
        for a, b in zip(sizes, sizes[1:]):
            if a != 2 * b:
                raise ConfigError(f"sizes must halve consecutively, got {a} then {b}")
        kernel = build_kernel(values)
        if kernel.sigma is not None:
            raise ConfigError("cauchy requires a common-noise-only model")
        samples = np.stack(map_jobs(_cauchy_worker, jobs))
        return aggregate_cauchy(samples, sizes, values["wasserstein_p"])

    if kind == "chaos":
        kernel = build_kernel(values)
        if kernel.sigma is not None:
            raise ConfigError("chaos requires a common-noise-only model")
        n_list = values["n_list"]
        if sorted(n_list) != list(n_list):
            raise ConfigError("n_list must increase")
        ref_n = values.get("ref_n") or 8 * max(n_list)
        per_beta = np.stack(map_jobs(_chaos_worker, jobs))
        return aggregate_chaos(per_beta, n_list, 2, ref_n, values["n_resamples"])

    if kind == "comparison":
        kernel = build_kernel(values)
        if kernel.sigma is not None:
            raise ConfigError("comparison requires a common-noise-only model")
        sim_cfg = build_sim_config(values)
        rng = init_rng(values["master_seed"])
        atoms = sample_initial_atoms(values, rng, values["n_particles"])
        init_a = EmpiricalMeasure.uniform(atoms)
        # per-atom perturbation: uniform translations are exactly preserved
        # by difference kernels and would make the ratio check vacuous
        delta = rng.standard_normal(atoms.shape)
        delta /= np.sqrt(np.mean(np.sum(delta**2, axis=1)))
        report = DiagnosticsReport(name="comparison")
        ratios = {}
        for label, factor in (("full", 1.0), ("half", 0.5)):
            init_b = EmpiricalMeasure.uniform(
                atoms + factor * values["comparison_shift"] * delta
            )
            result = comparison_experiment(
                kernel, init_a, init_b, sim_cfg, values["radius"], seeds,
                p=values["wasserstein_p"],
            )
            ratios[label] = result["ratio"]
            for key, val in result.items():
                if isinstance(val, bool):
                    val = float(val)
                report.metrics[f"{label}_{key}"] = float(val)
        report.add_verdict(
            "ratio_finite", ratios["full"], values["blowup_norm"],
            bool(np.isfinite(ratios["full"])),
        )
        if ratios["full"] > 0:
            rel = ratios["half"] / ratios["full"]
            report.add_verdict("ratio_stable_under_halving", float(rel), 1.5,
                               bool(0.5 <= rel <= 1.5))
        else:
            report.notes.append("initial distance degenerate; stability check skipped")
        return report

    raise ConfigError(f"unhandled experiment kind '{kind}'")


def _write_trajectory_csvs(values, seeds, results, output_dir: Path):
    d = state_dim(values)
    header = "t,particle," + ",".join(f"coord_{j}" for j in range(d))
    for seed, (times, states, _) in zip(seeds, results):
        lines = [header]
        for t_idx, t in enumerate(times):
            for p_idx in range(states.shape[1]):
                coords = ",".join(repr(float(v)) for v in states[t_idx, p_idx])
                lines.append(f"{float(t)!r},{p_idx},{coords}")
        _atomic_write_text(output_dir / f"run_{seed}.csv", "\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# Artifacts
# ---------------------------------------------------------------------------


def _atomic_write_text(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def report_json(report: DiagnosticsReport) -> str:
    return json.dumps(report.to_json_dict(), sort_keys=True, indent=2) + "\n"


def run_from_text(text: str, output_dir: Optional[str] = None) -> int:
    """Parse, execute, persist; returns the CLI exit code."""
    started = time.monotonic()
    try:
        cfg = parse_config(text)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    out_dir = Path(output_dir if output_dir is not None else cfg["output_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    try:
        report = execute(cfg, output_dir=out_dir)
    except MeanflockError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    _atomic_write_text(out_dir / "report.json", report_json(report))
    manifest = {
        "code_version": __version__,
        "config_sha256": cfg.sha256(),
        "config_text": cfg.text,
        "experiment": cfg.kind,
        "seeds": cfg.seeds(),
        "threads": worker_count(),
        "wall_time_seconds": time.monotonic() - started,
    }
    _atomic_write_text(
        out_dir / "manifest.json", json.dumps(manifest, sort_keys=True, indent=2) + "\n"
    )
    if not report.verdicts:
        return 0
    return 0 if report.all_pass() else 2


def run_from_path(path, output_dir: Optional[str] = None) -> int:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        print(f"error: cannot read config {path}: {exc}", file=sys.stderr)
        return 1
    return run_from_text(text, output_dir=output_dir)


def rerun_manifest(manifest_path, output_dir: str) -> int:
    """Re-execute the config embedded in a manifest into a fresh directory."""
    with open(manifest_path, "r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    return run_from_text(manifest["config_text"], output_dir=output_dir)
