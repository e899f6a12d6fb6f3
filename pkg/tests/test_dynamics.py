import numpy as np
import pytest

from meanflock.dynamics import (
    NoisePath,
    ParticleEnsemble,
    SimConfig,
    coupled_pair,
    simulate,
    step_euler_ito,
    step_heun_stratonovich,
)
from meanflock.errors import BlowUpError
from meanflock.kernels import (
    CuckerSmaleParams,
    Truncation,
    constant_common_kernels,
    constant_drift_kernels,
    constant_individual_kernels,
    cucker_smale_kernels,
    linear_drift_kernels,
    zero_kernels,
)


def cs_kernel(**kw):
    return cucker_smale_kernels(CuckerSmaleParams(half_dim=1, **kw))


class TestNoisePath:
    def test_replay_determinism(self):
        a = NoisePath(123, 0.01, 50, 2)
        b = NoisePath(123, 0.01, 50, 2)
        np.testing.assert_array_equal(a.common_increments, b.common_increments)
        np.testing.assert_array_equal(a.individual(3, 17), b.individual(3, 17))

    def test_particle_identity_independent_of_others(self):
        # particle 5's increments must not depend on which set it is drawn with
        noise = NoisePath(7, 0.01, 20, 2)
        block_small = noise.individual_matrix([5])
        noise2 = NoisePath(7, 0.01, 20, 2)
        block_big = noise2.individual_matrix(range(10))
        np.testing.assert_array_equal(block_small[0], block_big[5])

    def test_distinct_particles_distinct_noise(self):
        noise = NoisePath(7, 0.01, 20, 2)
        assert not np.array_equal(noise.individual(0, 0), noise.individual(1, 0))

    def test_common_increment_statistics(self):
        steps = 20_000
        dt = 0.01
        noise = NoisePath(99, dt, steps, 1)
        mean = noise.common_increments.mean()
        assert abs(mean) <= 4.0 * np.sqrt(dt / steps)
        var = noise.common_increments.var()
        assert var == pytest.approx(dt, rel=0.05)

    def test_invalid_args(self):
        with pytest.raises(ValueError):
            NoisePath(0, -0.1, 10, 1)


class TestSimConfig:
    def test_grid_must_divide(self):
        with pytest.raises(ValueError, match="multiple"):
            SimConfig(n_particles=1, dim=1, t_final=1.0, dt=0.3)

    def test_stride_must_divide(self):
        with pytest.raises(ValueError, match="stride"):
            SimConfig(n_particles=1, dim=1, t_final=1.0, dt=0.1, record_stride=3)

    def test_unknown_scheme(self):
        with pytest.raises(ValueError, match="scheme"):
            SimConfig(n_particles=1, dim=1, t_final=1.0, dt=0.1, scheme="milstein")


class TestSteps:
    def test_zero_kernel_identity(self):
        k = zero_kernels(2)
        ens = ParticleEnsemble(np.array([[1.0, -2.0], [0.5, 0.0]]))
        noise = NoisePath(0, 0.1, 1, 2)
        out = step_euler_ito(k, ens, noise, 0)
        np.testing.assert_array_equal(out.states, ens.states)
        out_h = step_heun_stratonovich(k, ens, noise, 0)
        np.testing.assert_array_equal(out_h.states, ens.states)

    def test_constant_drift_translation(self):
        k = constant_drift_kernels(2, [1.0, -3.0])
        ens = ParticleEnsemble(np.zeros((3, 2)))
        noise = NoisePath(0, 0.1, 1, 2)
        out = step_euler_ito(k, ens, noise, 0)
        np.testing.assert_allclose(out.states, np.tile([0.1, -0.3], (3, 1)))

    def test_cs_hand_computed_step(self):
        # one Euler step with dt = 1/2 moves the velocities toward the mean,
        # self-interaction included in the 1/N sum
        k = cs_kernel(lam=1.0, gamma=0.0)
        ens = ParticleEnsemble(np.array([[0.0, 0.0], [0.0, 2.0]]))
        noise = NoisePath(0, 0.5, 1, 2)
        out = step_euler_ito(k, ens, noise, 0)
        np.testing.assert_allclose(out.states, [[0.0, 0.5], [1.0, 1.5]])

    def test_heun_trapezoidal_ode(self):
        k = linear_drift_kernels(1)
        ens = ParticleEnsemble(np.array([[1.0]]))
        noise = NoisePath(0, 0.1, 1, 1)
        out = step_heun_stratonovich(k, ens, noise, 0)
        np.testing.assert_allclose(out.states, [[1.105]])

    def test_step_beyond_noise_rejected(self):
        k = zero_kernels(1)
        ens = ParticleEnsemble(np.zeros((1, 1)))
        noise = NoisePath(0, 0.1, 2, 1)
        with pytest.raises(IndexError):
            step_euler_ito(k, ens, noise, 2)


class TestSimulate:
    def test_single_particle_free_flight(self):
        # self-interaction alone cannot change the velocity
        k = cs_kernel(lam=1.0, gamma=1.0)
        init = ParticleEnsemble(np.array([[0.0, 0.75]]))
        cfg = SimConfig(n_particles=1, dim=2, t_final=1.0, dt=0.05)
        run = simulate(k, init, cfg)
        np.testing.assert_allclose(run.states[:, 0, 1], 0.75, atol=1e-14)
        np.testing.assert_allclose(run.states[:, 0, 0], 0.75 * run.times, atol=1e-12)

    def test_zero_steps(self):
        k = zero_kernels(1)
        init = ParticleEnsemble(np.array([[2.0]]))
        cfg = SimConfig(n_particles=1, dim=1, t_final=0.0, dt=0.1)
        run = simulate(k, init, cfg)
        assert run.times.shape == (1,)
        np.testing.assert_array_equal(run.states[0], init.states)

    def test_replay_bitwise(self):
        k = cs_kernel(lam=1.0, gamma=1.0, phi_lam=0.5, phi_gamma=1.0)
        init = ParticleEnsemble(np.random.default_rng(5).normal(size=(6, 2)))
        cfg = SimConfig(n_particles=6, dim=2, t_final=0.4, dt=0.01, master_seed=17)
        a = simulate(k, init, cfg)
        b = simulate(k, init, cfg)
        np.testing.assert_array_equal(a.states, b.states)

    def test_record_stride(self):
        k = zero_kernels(1)
        init = ParticleEnsemble(np.array([[0.0]]))
        cfg = SimConfig(n_particles=1, dim=1, t_final=1.0, dt=0.1, record_stride=5)
        run = simulate(k, init, cfg)
        np.testing.assert_allclose(run.times, [0.0, 0.5, 1.0])

    def test_blowup_carries_step_and_partial(self):
        k = linear_drift_kernels(1, rate=40.0)
        init = ParticleEnsemble(np.array([[1.0]]))
        cfg = SimConfig(
            n_particles=1, dim=1, t_final=2.0, dt=0.1, blowup_norm=100.0
        )
        with pytest.raises(BlowUpError) as err:
            simulate(k, init, cfg)
        assert err.value.step_index >= 1
        assert err.value.partial is not None
        assert err.value.partial.states.shape[0] >= 1

    def test_individual_noise_statistics(self):
        # additive individual noise: terminal variance ~ sigma^2 T
        k = constant_individual_kernels(1, 0.5)
        init = ParticleEnsemble(np.zeros((2000, 1)))
        cfg = SimConfig(n_particles=2000, dim=1, t_final=1.0, dt=0.05, master_seed=3)
        run = simulate(k, init, cfg)
        var = run.states[-1].var()
        assert var == pytest.approx(0.25, rel=0.1)


class TestMeanVelocityConservation:
    @pytest.mark.parametrize(
        "kernel",
        [
            cs_kernel(lam=1.0, gamma=1.0),
            cs_kernel(lam=1.0, gamma=1.0, phi_lam=0.5, phi_gamma=1.0),
            cucker_smale_kernels(
                CuckerSmaleParams(
                    half_dim=1, lam=1.0, gamma=1.0, phi_lam=0.5, phi_gamma=1.0,
                    truncation=Truncation(1.0, 1.0),
                )
            ),
        ],
        ids=["cs", "common-noise", "truncated"],
    )
    def test_pathwise_conservation(self, kernel):
        rng = np.random.default_rng(13)
        init = ParticleEnsemble(rng.normal(size=(16, 2)))
        cfg = SimConfig(n_particles=16, dim=2, t_final=1.0, dt=0.01, master_seed=4)
        run = simulate(kernel, init, cfg)
        v_bar = run.states[:, :, 1].mean(axis=1)
        assert np.max(np.abs(v_bar - v_bar[0])) <= 1e-12

    def test_heun_also_conserves(self):
        kernel = cs_kernel(lam=1.0, gamma=1.0, phi_lam=0.5, phi_gamma=1.0)
        rng = np.random.default_rng(14)
        init = ParticleEnsemble(rng.normal(size=(8, 2)))
        cfg = SimConfig(
            n_particles=8, dim=2, t_final=1.0, dt=0.01, master_seed=4,
            scheme="heun_stratonovich",
        )
        run = simulate(kernel, init, cfg)
        v_bar = run.states[:, :, 1].mean(axis=1)
        assert np.max(np.abs(v_bar - v_bar[0])) <= 1e-12


class TestMomentStability:
    def test_second_moment_bounded_and_dt_stable(self):
        kernel = cs_kernel(lam=1.0, gamma=1.0, phi_lam=0.4, phi_gamma=1.0)
        rng = np.random.default_rng(23)
        init = ParticleEnsemble(rng.normal(size=(32, 2)))
        m2_0 = np.mean(np.sum(init.states**2, axis=1))
        sups = []
        for dt in (0.02, 0.01):
            cfg = SimConfig(n_particles=32, dim=2, t_final=1.0, dt=dt, master_seed=6)
            run = simulate(kernel, init, cfg)
            m2 = np.mean(np.sum(run.states**2, axis=2), axis=1)
            sups.append(m2.max())
        for sup in sups:
            assert sup <= 10.0 * (1.0 + m2_0)
        assert 0.5 <= sups[0] / sups[1] <= 2.0

    def test_path_regularity_fourth_moment(self):
        # (1/N) sum E|X_t - X_s|^4 / |t - s|^2 bounded over dyadic pairs
        kernel = cs_kernel(lam=1.0, gamma=1.0, phi_lam=0.4, phi_gamma=1.0)
        rng = np.random.default_rng(29)
        init = ParticleEnsemble(rng.normal(size=(16, 2)))
        acc = None
        seeds = range(8)
        for seed in seeds:
            cfg = SimConfig(n_particles=16, dim=2, t_final=1.0, dt=1.0 / 64, master_seed=seed)
            run = simulate(kernel, init, cfg)
            diffs = []
            for lag in (1, 2, 4, 8, 16, 32, 64):
                d = run.states[lag:] - run.states[:-lag]
                val = np.mean(np.sum(d**2, axis=2) ** 2, axis=1)  # per (s, t) pair
                diffs.append(np.max(val) / (lag / 64.0) ** 2)
            row = np.array(diffs)
            acc = row if acc is None else acc + row
        ratios = acc / len(list(seeds))
        assert np.all(np.isfinite(ratios))
        assert ratios.max() <= 500.0


class TestCoupledPair:
    def test_full_subsample_identical(self):
        kernel = cs_kernel(lam=1.0, gamma=1.0, phi_lam=0.3, phi_gamma=1.0)
        init = ParticleEnsemble(np.random.default_rng(1).normal(size=(8, 2)))
        cfg = SimConfig(n_particles=8, dim=2, t_final=0.5, dt=0.05, master_seed=2)
        big, small = coupled_pair(kernel, init, cfg, np.arange(8))
        np.testing.assert_array_equal(big.states, small.states)

    def test_no_interaction_shared_particles_coincide(self):
        # no drift, no common noise: individual noise only, addressed by id
        kernel = constant_individual_kernels(2, 0.8)
        init = ParticleEnsemble(np.random.default_rng(2).normal(size=(6, 2)))
        cfg = SimConfig(n_particles=6, dim=2, t_final=0.5, dt=0.05, master_seed=9)
        keep = np.array([1, 3, 4])
        big, small = coupled_pair(kernel, init, cfg, keep)
        np.testing.assert_array_equal(big.states[:, keep, :], small.states)

    def test_free_flight_decoupled(self):
        # vanishing alignment weight: every particle flies independently
        kernel = cucker_smale_kernels(
            CuckerSmaleParams(half_dim=1, lam=1e-300, gamma=0.0)
        )
        init = ParticleEnsemble(np.random.default_rng(3).normal(size=(4, 2)))
        cfg = SimConfig(n_particles=4, dim=2, t_final=0.5, dt=0.05, master_seed=12)
        keep = np.array([0, 2])
        big, small = coupled_pair(kernel, init, cfg, keep)
        np.testing.assert_allclose(big.states[:, keep, :], small.states, atol=1e-12)

    def test_invalid_subsample(self):
        kernel = zero_kernels(1)
        init = ParticleEnsemble(np.zeros((4, 1)))
        cfg = SimConfig(n_particles=4, dim=1, t_final=0.1, dt=0.1)
        with pytest.raises(ValueError):
            coupled_pair(kernel, init, cfg, [1, 1])
        with pytest.raises(ValueError):
            coupled_pair(kernel, init, cfg, [5])

    def test_coupled_distance_shrinks_with_n(self):
        kernel = constant_common_kernels(1, 1.0)
        rng = np.random.default_rng(31)
        init = ParticleEnsemble(rng.normal(size=(16, 1)))
        cfg = SimConfig(n_particles=16, dim=1, t_final=0.2, dt=0.05, master_seed=7)
        big, small = coupled_pair(kernel, init, cfg, np.arange(8))
        # additive common noise translates everyone identically, so the
        # coupled paths stay at the initial offset
        np.testing.assert_allclose(
            big.states[:, :8, :] - small.states, 0.0, atol=1e-14
        )

    def test_csv_round_trip_header(self, tmp_path):
        kernel = zero_kernels(2)
        init = ParticleEnsemble(np.array([[1.5, -0.25]]))
        cfg = SimConfig(n_particles=1, dim=2, t_final=0.2, dt=0.1, master_seed=0)
        run = simulate(kernel, init, cfg)
        path = tmp_path / "run_0.csv"
        run.to_csv(path)
        lines = path.read_text().strip().splitlines()
        assert lines[0] == "t,particle,coord_0,coord_1"
        assert lines[1] == "0.0,0,1.5,-0.25"
        assert len(lines) == 1 + 3 * 1
