import numpy as np
import pytest

from meanflock.characteristics import (
    FrozenField,
    comparison_experiment,
    evolve_transport,
    pushforward,
    solve_characteristics,
    transport_residual,
)
from meanflock.dynamics import NoisePath, ParticleEnsemble, SimConfig, simulate
from meanflock.kernels import (
    CuckerSmaleParams,
    constant_drift_kernels,
    constant_individual_kernels,
    cucker_smale_kernels,
    zero_kernels,
)
from meanflock.transport import EmpiricalMeasure


def noisy_cs():
    return cucker_smale_kernels(
        CuckerSmaleParams(half_dim=1, lam=1.0, gamma=1.0, phi_lam=0.5, phi_gamma=1.0)
    )


def make_run(kernel, n=4, seed=11, t_final=0.5, dt=0.01, scheme="euler_ito"):
    rng = np.random.default_rng(seed)
    init = ParticleEnsemble(rng.normal(size=(n, kernel.dim)))
    cfg = SimConfig(
        n_particles=n, dim=kernel.dim, t_final=t_final, dt=dt,
        master_seed=seed, scheme=scheme,
    )
    return simulate(kernel, init, cfg)


class TestSolveCharacteristics:
    def test_reproduces_own_particle_exactly(self):
        run = make_run(noisy_cs(), n=1)
        frozen = FrozenField.from_run(run)
        path = solve_characteristics(frozen, run.states[0, 0])
        np.testing.assert_array_equal(path[:, 0, :], run.states[:, 0, :])

    def test_zero_kernel_constant_path(self):
        run = make_run(zero_kernels(2), n=3)
        frozen = FrozenField.from_run(run)
        x0 = np.array([0.25, -1.0])
        path = solve_characteristics(frozen, x0)
        np.testing.assert_array_equal(path, np.broadcast_to(x0, path.shape))

    def test_constant_drift_affine_path(self):
        k = constant_drift_kernels(2, [2.0, -1.0])
        run = make_run(k, n=2, t_final=1.0, dt=0.25)
        frozen = FrozenField.from_run(run)
        x0 = np.zeros(2)
        path = solve_characteristics(frozen, x0)
        expected = np.outer(run.times, [2.0, -1.0])
        np.testing.assert_allclose(path[:, 0, :], expected, atol=1e-12)

    def test_requires_common_noise_only(self):
        k = constant_individual_kernels(1, 0.3)
        run = make_run(k, n=2)
        with pytest.raises(ValueError, match="common"):
            FrozenField.from_run(run)

    def test_requires_full_resolution(self):
        kernel = noisy_cs()
        rng = np.random.default_rng(3)
        init = ParticleEnsemble(rng.normal(size=(3, 2)))
        cfg = SimConfig(n_particles=3, dim=2, t_final=0.5, dt=0.05, record_stride=5)
        run = simulate(kernel, init, cfg)
        with pytest.raises(ValueError, match="record_stride"):
            FrozenField.from_run(run)

    def test_grid_mismatch_rejected(self):
        run = make_run(noisy_cs(), n=2)
        with pytest.raises(ValueError, match="grid"):
            FrozenField(
                kernel=run.kernel,
                field_path=run.measure_path(),
                common_increments=run.noise.common_increments[:-5],
                dt=run.config.dt,
            )


class TestPushforward:
    def test_transport_identity(self):
        run = make_run(noisy_cs(), n=5)
        frozen = FrozenField.from_run(run)
        replay = pushforward(frozen, run.measure_path().measure_at(0))
        np.testing.assert_array_equal(replay.states, run.states)

    def test_single_atom(self):
        run = make_run(noisy_cs(), n=3)
        frozen = FrozenField.from_run(run)
        mu0 = EmpiricalMeasure.uniform(np.array([[0.1, 0.2]]))
        path = pushforward(frozen, mu0)
        assert path.n_atoms == 1
        direct = solve_characteristics(frozen, np.array([0.1, 0.2]))
        np.testing.assert_array_equal(path.states, direct)

    def test_weights_preserved(self):
        run = make_run(noisy_cs(), n=3)
        frozen = FrozenField.from_run(run)
        mu0 = EmpiricalMeasure(
            np.random.default_rng(0).normal(size=(4, 2)),
            np.array([0.1, 0.2, 0.3, 0.4]),
        )
        path = pushforward(frozen, mu0)
        np.testing.assert_array_equal(path.weights, mu0.weights)


class TestTransportResidual:
    def test_common_noise_run_residual_zero(self):
        for n in (2, 5):
            run = make_run(noisy_cs(), n=n)
            assert transport_residual(run) <= 1e-10

    def test_zero_kernel_residual_exactly_zero(self):
        run = make_run(zero_kernels(2), n=3)
        assert transport_residual(run) == 0.0

    def test_individual_noise_rejected(self):
        run = make_run(constant_individual_kernels(1, 0.5), n=2)
        with pytest.raises(ValueError, match="common"):
            transport_residual(run)


class TestEvolveTransport:
    def test_uniform_weights_match_simulate(self):
        kernel = noisy_cs()
        rng = np.random.default_rng(8)
        atoms = rng.normal(size=(4, 2))
        cfg = SimConfig(n_particles=4, dim=2, t_final=0.3, dt=0.01, master_seed=5)
        path = evolve_transport(kernel, EmpiricalMeasure.uniform(atoms), cfg)
        run = simulate(kernel, ParticleEnsemble(atoms), cfg)
        np.testing.assert_array_equal(path.states, run.states)

    def test_weighted_atoms_follow_weighted_field(self):
        # two co-located atoms with weights (2/3, 1/3) must move like a
        # duplicated uniform triple
        kernel = noisy_cs()
        base = np.array([[0.0, 1.0], [1.0, -1.0]])
        cfg3 = SimConfig(n_particles=3, dim=2, t_final=0.2, dt=0.01, master_seed=6)
        tripled = np.array([[0.0, 1.0], [0.0, 1.0], [1.0, -1.0]])
        uniform_path = evolve_transport(kernel, EmpiricalMeasure.uniform(tripled), cfg3)
        cfg2 = SimConfig(n_particles=2, dim=2, t_final=0.2, dt=0.01, master_seed=6)
        weighted_path = evolve_transport(
            kernel, EmpiricalMeasure(base, np.array([2.0 / 3.0, 1.0 / 3.0])), cfg2
        )
        np.testing.assert_allclose(
            uniform_path.states[:, [0, 2], :], weighted_path.states, atol=1e-12
        )


class TestComparisonExperiment:
    def setup_method(self):
        self.kernel = cucker_smale_kernels(
            CuckerSmaleParams(
                half_dim=1, lam=1.0, gamma=1.0, phi_lam=0.5, phi_gamma=1.0,
            )
        )
        rng = np.random.default_rng(4)
        self.atoms = rng.uniform(-1, 1, size=(8, 2))
        self.cfg = SimConfig(n_particles=8, dim=2, t_final=0.5, dt=0.05, master_seed=0)

    def test_identical_inits_zero_and_flagged(self):
        mu = EmpiricalMeasure.uniform(self.atoms)
        out = comparison_experiment(self.kernel, mu, mu, self.cfg, 50.0, [0, 1])
        assert out["estimate"] == 0.0
        assert out["ratio"] == 0.0
        assert out["degenerate_initial_distance"]

    def test_small_radius_stops_immediately(self):
        mu = EmpiricalMeasure.uniform(self.atoms)
        nu = EmpiricalMeasure.uniform(self.atoms + 0.2)
        out = comparison_experiment(self.kernel, mu, nu, self.cfg, 1e-6, [0, 1])
        assert out["estimate"] == 0.0
        assert out["stopped_runs"] == 2

    def test_ratio_finite_positive(self):
        mu = EmpiricalMeasure.uniform(self.atoms)
        nu = EmpiricalMeasure.uniform(self.atoms + 0.1)
        out = comparison_experiment(self.kernel, mu, nu, self.cfg, 50.0, range(8))
        assert np.isfinite(out["ratio"])
        assert out["ratio"] > 0


class TestFlowRegularity:
    def test_flow_continuity_ratio_bounded(self):
        # E[sup_t |X(x) - X(x')|^2] / |x - x'|^2 stable across offsets
        kernel = noisy_cs()
        ratios = []
        for offset in (1e-1, 1e-2, 1e-3):
            acc = 0.0
            for seed in range(4):
                run = make_run(kernel, n=6, seed=seed)
                frozen = FrozenField.from_run(run)
                x = np.array([0.5, 0.5])
                starts = np.stack([x, x + [offset, 0.0]])
                paths = solve_characteristics(frozen, starts)
                gap = np.max(np.sum((paths[:, 0] - paths[:, 1]) ** 2, axis=-1))
                acc += gap / offset**2
            ratios.append(acc / 4)
        ratios = np.array(ratios)
        assert np.all(ratios < 20.0)
        assert ratios.max() / ratios.min() < 5.0

    def test_support_growth_bounded(self):
        # E[sup_{x in K} sup_t |X_t(x)|^4] finite and dt-stable (bounded c)
        kernel = cucker_smale_kernels(
            CuckerSmaleParams(
                half_dim=1, lam=1.0, gamma=1.0, phi_lam=0.5, phi_gamma=1.0,
            )
        )
        grid = np.stack(
            np.meshgrid(np.linspace(-1, 1, 3), np.linspace(-1, 1, 3)), axis=-1
        ).reshape(-1, 2)
        sups = []
        for dt in (0.02, 0.01):
            acc = 0.0
            for seed in range(4):
                run = make_run(kernel, n=6, seed=seed, dt=dt)
                frozen = FrozenField.from_run(run)
                paths = solve_characteristics(frozen, grid)
                acc += np.max(np.sum(paths**2, axis=-1) ** 2)
            sups.append(acc / 4)
        assert all(np.isfinite(s) for s in sups)
        assert 0.25 <= sups[0] / sups[1] <= 4.0
