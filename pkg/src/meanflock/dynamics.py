"""Time discretization of the interacting particle system.

Two schemes are provided. ``euler_ito`` integrates the Ito form, whose drift
carries the corrective field S[mu]; it is the primary scheme. The
``heun_stratonovich`` predictor-corrector integrates the circle form without
any corrective drift and exists to cross-validate S[mu]: both schemes must
converge to the same law as dt shrinks, and they only do when the correction
is right.

Noise is addressed, not streamed: the increment of particle ``i`` at step
``k`` is a pure function of ``(master_seed, i, k)`` through per-particle
Philox streams, so a particle keeps the same noise when embedded in systems
of different sizes. Coupled-size experiments rely on exactly this.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .errors import BlowUpError
from .kernels import KernelSet, field_drift_diffusion
from .transport import EmpiricalMeasure, MeasurePath

SCHEMES = ("euler_ito", "heun_stratonovich")

# SeedSequence spawn-key tags keeping the noise, init and resample streams apart
_STREAM_COMMON = 0
_STREAM_INDIVIDUAL = 1
_STREAM_INIT = 2
_STREAM_RESAMPLE = 3


def seeded_rng(master_seed: int, *key: int) -> np.random.Generator:
    """Counter-based generator for a named substream of a master seed."""
    ss = np.random.SeedSequence(entropy=master_seed, spawn_key=tuple(key))
    return np.random.Generator(np.random.Philox(ss))


def init_rng(master_seed: int) -> np.random.Generator:
    return seeded_rng(master_seed, _STREAM_INIT)


def resample_rng(master_seed: int, resample: int) -> np.random.Generator:
    return seeded_rng(master_seed, _STREAM_RESAMPLE, resample)


@dataclass(frozen=True)
class ParticleEnsemble:
    """N particle states in R^d at a common time."""

    states: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        states = np.asarray(self.states, dtype=float)
        if states.ndim != 2 or states.shape[0] < 1:
            raise ValueError("states must be a (n, d) array with n >= 1")
        if not np.all(np.isfinite(states)):
            raise ValueError("particle states must be finite")
        object.__setattr__(self, "states", states)

    @property
    def n(self) -> int:
        return self.states.shape[0]

    @property
    def dim(self) -> int:
        return self.states.shape[1]

    def measure(self) -> EmpiricalMeasure:
        return EmpiricalMeasure.uniform(self.states)


class NoisePath:
    """Discretized driving noise for one master seed.

    ``common_increments[k]`` is the shared Delta beta_k ~ N(0, dt).
    ``individual(i, k)`` is Delta B^i_k in R^d, reproducible from
    ``(master_seed, i, k)`` alone; streams are materialized lazily per
    particle and cached.
    """

    def __init__(self, master_seed: int, dt: float, steps: int, dim: int):
        if dt <= 0 or steps < 0:
            raise ValueError("noise path needs dt > 0 and steps >= 0")
        self.master_seed = int(master_seed)
        self.dt = float(dt)
        self.steps = int(steps)
        self.dim = int(dim)
        scale = np.sqrt(dt)
        rng = seeded_rng(self.master_seed, _STREAM_COMMON)
        self.common_increments = scale * rng.standard_normal(steps)
        self._individual_cache: dict[int, np.ndarray] = {}

    def _particle_block(self, i: int) -> np.ndarray:
        block = self._individual_cache.get(i)
        if block is None:
            rng = seeded_rng(self.master_seed, _STREAM_INDIVIDUAL, i)
            block = np.sqrt(self.dt) * rng.standard_normal((self.steps, self.dim))
            self._individual_cache[i] = block
        return block

    def individual(self, particle: int, step: int) -> np.ndarray:
        return self._particle_block(particle)[step]

    def individual_matrix(self, particle_ids: Sequence[int]) -> np.ndarray:
        """(n, steps, d) block for a list of particle identities."""
        return np.stack([self._particle_block(int(i)) for i in particle_ids])


@dataclass(frozen=True)
class SimConfig:
    """Discretization and reproducibility knobs for one trajectory."""

    n_particles: int
    dim: int
    t_final: float
    dt: float
    scheme: str = "euler_ito"
    master_seed: int = 0
    record_stride: int = 1
    s1_convention: str = "half_both"
    blowup_norm: float = 1e6

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.t_final < 0:
            raise ValueError("t_final must be >= 0")
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}, expected one of {SCHEMES}")
        steps = self.t_final / self.dt
        if abs(steps - round(steps)) > 1e-9:
            raise ValueError("t_final must be an integer multiple of dt")
        if self.record_stride < 1:
            raise ValueError("record_stride must be >= 1")
        if round(steps) % self.record_stride != 0:
            raise ValueError("record_stride must divide the step count")

    @property
    def steps(self) -> int:
        return int(round(self.t_final / self.dt))


@dataclass
class TrajectoryRecord:
    """Recorded trajectory plus everything needed to replay or freeze it."""

    times: np.ndarray
    states: np.ndarray  # (n_recorded, n, d)
    weights: np.ndarray
    config: SimConfig
    kernel: KernelSet
    noise: NoisePath
    particle_ids: np.ndarray

    @property
    def n_particles(self) -> int:
        return self.states.shape[1]

    @property
    def dim(self) -> int:
        return self.states.shape[2]

    def measure_path(self) -> MeasurePath:
        return MeasurePath(self.times, self.states, self.weights)

    def final_ensemble(self) -> ParticleEnsemble:
        return ParticleEnsemble(self.states[-1], time=float(self.times[-1]))

    def to_csv(self, path) -> None:
        """Columnar dump: header t,particle,coord_0..coord_{d-1}."""
        d = self.dim
        header = "t,particle," + ",".join(f"coord_{j}" for j in range(d))
        with open(path, "w", encoding="ascii") as fh:
            fh.write(header + "\n")
            for t_idx, t in enumerate(self.times):
                for p_idx in range(self.n_particles):
                    coords = ",".join(repr(float(v)) for v in self.states[t_idx, p_idx])
                    fh.write(f"{float(t)!r},{p_idx},{coords}\n")


def _sigma_increment(k: KernelSet, states: np.ndarray, db: np.ndarray) -> np.ndarray:
    return np.einsum("nij,nj->ni", k.sigma(states), db)


def _euler_step(
    k: KernelSet,
    states: np.ndarray,
    weights: np.ndarray,
    dt: float,
    dbeta: float,
    db: Optional[np.ndarray],
    s1_convention: str,
) -> np.ndarray:
    drift, common = field_drift_diffusion(
        k, states, weights, states, s1_convention=s1_convention
    )
    new = states + dt * drift
    if common is not None:
        new = new + dbeta * common
    if k.sigma is not None:
        new = new + _sigma_increment(k, states, db)
    return new


def _heun_step(
    k: KernelSet,
    states: np.ndarray,
    weights: np.ndarray,
    dt: float,
    dbeta: float,
    db: Optional[np.ndarray],
) -> np.ndarray:
    drift0, common0 = field_drift_diffusion(
        k, states, weights, states, include_correction=False
    )
    pred = states + dt * drift0
    if common0 is not None:
        pred = pred + dbeta * common0
    sig0 = None
    if k.sigma is not None:
        sig0 = _sigma_increment(k, states, db)
        pred = pred + sig0
    drift1, common1 = field_drift_diffusion(
        k, pred, weights, pred, include_correction=False
    )
    new = states + 0.5 * dt * (drift0 + drift1)
    if common0 is not None:
        new = new + 0.5 * dbeta * (common0 + common1)
    if k.sigma is not None:
        new = new + 0.5 * (sig0 + _sigma_increment(k, pred, db))
    return new


def step_euler_ito(
    k: KernelSet, ens: ParticleEnsemble, noise: NoisePath, step_index: int,
    s1_convention: str = "half_both",
) -> ParticleEnsemble:
    """One Euler step of the Ito-form system against its own empirical measure."""
    if step_index >= noise.steps:
        raise IndexError(f"step {step_index} beyond noise path of {noise.steps} steps")
    weights = np.full(ens.n, 1.0 / ens.n)
    db = None
    if k.sigma is not None:
        db = noise.individual_matrix(range(ens.n))[:, step_index, :]
    new = _euler_step(
        k, ens.states, weights, noise.dt, noise.common_increments[step_index],
        db, s1_convention,
    )
    _check_finite(new, step_index)
    return ParticleEnsemble(new, time=ens.time + noise.dt)


def step_heun_stratonovich(
    k: KernelSet, ens: ParticleEnsemble, noise: NoisePath, step_index: int
) -> ParticleEnsemble:
    """One Heun predictor-corrector step of the circle-form system."""
    if step_index >= noise.steps:
        raise IndexError(f"step {step_index} beyond noise path of {noise.steps} steps")
    weights = np.full(ens.n, 1.0 / ens.n)
    db = None
    if k.sigma is not None:
        db = noise.individual_matrix(range(ens.n))[:, step_index, :]
    new = _heun_step(
        k, ens.states, weights, noise.dt, noise.common_increments[step_index], db
    )
    _check_finite(new, step_index)
    return ParticleEnsemble(new, time=ens.time + noise.dt)


def _check_finite(states: np.ndarray, step_index: int, bound: float = np.inf):
    max_norm = float(np.max(np.linalg.norm(states, axis=-1)))
    if not np.isfinite(max_norm) or max_norm > bound:
        raise BlowUpError(step_index, max_norm)


def simulate(
    k: KernelSet,
    init: ParticleEnsemble,
    cfg: SimConfig,
    noise: Optional[NoisePath] = None,
    particle_ids: Optional[Sequence[int]] = None,
    weights: Optional[np.ndarray] = None,
) -> TrajectoryRecord:
    """Integrate the full particle system and record every stride-th state.

    ``noise`` and ``particle_ids`` exist for coupled runs: passing the noise
    of a larger system together with the identities of the retained particles
    drives the subsystem with exactly the increments those particles see in
    the large system. ``weights`` generalizes the empirical measure away from
    uniform; the default is the uniform 1/N measure of the ensemble.
    """
    if init.dim != cfg.dim:
        raise ValueError(f"ensemble dimension {init.dim} != config dim {cfg.dim}")
    if init.n != cfg.n_particles:
        raise ValueError(f"ensemble size {init.n} != config n_particles {cfg.n_particles}")
    if noise is None:
        noise = NoisePath(cfg.master_seed, cfg.dt, cfg.steps, cfg.dim)
    if noise.steps < cfg.steps or abs(noise.dt - cfg.dt) > 0:
        raise ValueError("noise path incompatible with config grid")
    ids = np.arange(init.n) if particle_ids is None else np.asarray(particle_ids, int)
    if ids.shape != (init.n,):
        raise ValueError("particle_ids must list one identity per particle")
    w = np.full(init.n, 1.0 / init.n) if weights is None else np.asarray(weights, float)

    db_all = None
    if k.sigma is not None:
        db_all = noise.individual_matrix(ids)

    n_rec = cfg.steps // cfg.record_stride + 1
    rec_times = np.empty(n_rec)
    rec_states = np.empty((n_rec, init.n, init.dim))
    rec_times[0] = init.time
    rec_states[0] = init.states
    states = init.states
    rec = 1
    for step in range(cfg.steps):
        dbeta = noise.common_increments[step]
        db = None if db_all is None else db_all[:, step, :]
        if cfg.scheme == "euler_ito":
            states = _euler_step(k, states, w, cfg.dt, dbeta, db, cfg.s1_convention)
        else:
            states = _heun_step(k, states, w, cfg.dt, dbeta, db)
        max_norm = float(np.max(np.linalg.norm(states, axis=-1)))
        if not np.isfinite(max_norm) or max_norm > cfg.blowup_norm:
            partial = TrajectoryRecord(
                rec_times[:rec].copy(), rec_states[:rec].copy(), w, cfg, k, noise, ids
            )
            raise BlowUpError(step, max_norm, partial=partial)
        if (step + 1) % cfg.record_stride == 0:
            rec_times[rec] = init.time + (step + 1) * cfg.dt
            rec_states[rec] = states
            rec += 1
    return TrajectoryRecord(rec_times, rec_states, w, cfg, k, noise, ids)


def coupled_pair(
    k: KernelSet,
    init_big: ParticleEnsemble,
    cfg: SimConfig,
    subsample: Sequence[int],
) -> tuple[TrajectoryRecord, TrajectoryRecord]:
    """Simulate the full system and the subsampled system on shared noise.

    Both runs see the same common increments; a particle retained in the
    small system keeps the individual increments of its identity in the big
    one. This realizes the coupling behind Cauchy-in-N comparisons.
    """
    subsample = np.asarray(subsample, dtype=int)
    if subsample.size < 1:
        raise ValueError("subsample must keep at least one particle")
    if np.unique(subsample).size != subsample.size:
        raise ValueError("subsample indices must be distinct")
    if subsample.min() < 0 or subsample.max() >= init_big.n:
        raise ValueError("subsample indices out of range")
    noise = NoisePath(cfg.master_seed, cfg.dt, cfg.steps, cfg.dim)
    big_cfg = replace(cfg, n_particles=init_big.n)
    big = simulate(k, init_big, big_cfg, noise=noise)
    init_small = ParticleEnsemble(init_big.states[subsample], time=init_big.time)
    small_cfg = replace(cfg, n_particles=subsample.size)
    small = simulate(k, init_small, small_cfg, noise=noise, particle_ids=subsample)
    return big, small
