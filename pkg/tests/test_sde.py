import numpy as np
import pytest
import scipy.linalg as sl
from numpy.testing import assert_allclose, assert_array_equal

from phasechain.chain import (OPEN, PERIODIC, ChainConfig, ChainState, Deterministic, Equilibrium, laplacian_matrix,
                              total_mass)
from phasechain.moments import stationary_moments
from phasechain.sde import (IntegrationError, StepScheme, _Runner, _rotate, default_scheme, ensemble_average,
                            hamiltonian_flow, ou_coefficients, phase_noise_step, propagator, run_trajectory,
                            scheme_moment_map, scheme_stationary_moments, step, step_with_noise, thermostat_step,
                            trajectory_seeds, trajectory_streams)

PER = ChainConfig(PERIODIC, 8, 1.0)
OPN = ChainConfig(OPEN, 8, 1.0, 1.0, 1.0, 2.0)


def random_psi(n, seed=0):
    rng = np.random.default_rng(seed)
    return rng.standard_normal(n) + 1j * rng.standard_normal(n)


class TestHamiltonian:
    @pytest.mark.parametrize("cfg", [PER, OPN], ids=["periodic", "open"])
    def test_propagator_matches_expm(self, cfg):
        for t in (0.1, 1.3, 7.0):
            want = sl.expm(-1j * t * laplacian_matrix(cfg))
            assert_allclose(propagator(cfg, t), want, atol=1e-13)

    @pytest.mark.parametrize("cfg", [PER, OPN], ids=["periodic", "open"])
    def test_flow_matches_propagator(self, cfg):
        psi = random_psi(8, 1)
        got = hamiltonian_flow(ChainState(psi), 0.77, cfg)
        assert_allclose(got.psi, propagator(cfg, 0.77) @ psi, atol=1e-13)
        assert got.time == 0.77

    def test_zero_time_and_zero_mode(self):
        s = ChainState(random_psi(8))
        assert hamiltonian_flow(s, 0.0, PER) is s
        flat = ChainState(np.ones(4, dtype=complex))
        out = hamiltonian_flow(flat, 3.0, ChainConfig(PERIODIC, 4, 1.0))
        assert_allclose(out.psi, 1.0, atol=1e-15)

    @pytest.mark.parametrize("cfg", [PER, OPN], ids=["periodic", "open"])
    def test_unitary(self, cfg):
        s = ChainState(random_psi(8, 2))
        m0 = total_mass(s)
        assert abs(total_mass(hamiltonian_flow(s, 12.3, cfg)) - m0) <= 1e-12 * m0


class TestPhaseNoise:
    def test_density_unchanged(self):
        s = ChainState(random_psi(8, 3))
        out = phase_noise_step(s, 0.4, np.random.default_rng(0), PER)
        assert_allclose(np.abs(out.psi) ** 2, np.abs(s.psi) ** 2, rtol=1e-14)

    def test_zero_noise_identity(self):
        psi = random_psi(8, 4)
        assert_array_equal(_rotate(psi, np.zeros(8), 1.0, 0.1), psi)

    def test_rejects_bad_dt(self):
        with pytest.raises(ValueError):
            phase_noise_step(ChainState(random_psi(8)), 0.0, np.random.default_rng(0), PER)

    def test_mean_decay(self):
        # independent sites act as an ensemble
        n, gamma, dt, steps = 4000, 1.0, 0.05, 10
        cfg = ChainConfig(PERIODIC, n, gamma)
        s = ChainState(np.ones(n, dtype=complex))
        rng = np.random.default_rng(5)
        for _ in range(steps):
            s = phase_noise_step(s, dt, rng, cfg)
        t = steps * dt
        sd = np.sqrt((1 - np.exp(-gamma * t)) / 2 / n)
        assert abs(s.psi.real.mean() - np.exp(-gamma * t / 2)) <= 4 * sd
        assert abs(s.psi.imag.mean()) <= 4 * sd


class TestThermostat:
    def test_periodic_rejected(self):
        with pytest.raises(ValueError):
            thermostat_step(ChainState(random_psi(8)), 0.1, np.random.default_rng(0), PER)

    def test_zero_dt(self):
        s = ChainState(random_psi(8))
        assert thermostat_step(s, 0.0, np.random.default_rng(0), OPN) is s

    def test_coefficients(self):
        a, sl_, sr = ou_coefficients(OPN, 0.3)
        assert_allclose(a, np.exp(-0.15))
        assert_allclose(sl_ ** 2, 1.0 * (1 - np.exp(-0.3)))
        assert_allclose(sr ** 2, 2.0 * (1 - np.exp(-0.3)))

    def test_full_relaxation(self):
        rng = np.random.default_rng(6)
        s = ChainState(np.full(8, 5.0 + 0j))
        samples = []
        for _ in range(4000):
            samples.append(thermostat_step(s, 60.0, rng, OPN).psi[[0, -1]])
        rho = np.abs(np.array(samples)) ** 2
        # |psi|^2 is exponential with mean 2 mu
        assert abs(rho[:, 0].mean() - 2.0) <= 3 * 2.0 / np.sqrt(4000)
        assert abs(rho[:, 1].mean() - 4.0) <= 3 * 4.0 / np.sqrt(4000)

    def test_isolated_site_time_average(self):
        rng = np.random.default_rng(7)
        s = ChainState(np.zeros(8, dtype=complex))
        dt, n = 0.5, 40_000
        rho = np.empty(n)
        for k in range(n):
            s = thermostat_step(s, dt, rng, OPN)
            rho[k] = abs(s.psi[0]) ** 2
        rho = rho[1000:]
        batches = rho[: len(rho) // 50 * 50].reshape(50, -1).mean(axis=1)
        err = batches.std(ddof=1) / np.sqrt(50)
        assert abs(rho.mean() - 2.0) <= 3 * err


class TestStep:
    @pytest.mark.parametrize("cfg", [PER, OPN], ids=["periodic", "open"])
    def test_kernel_matches_python(self, cfg):
        scheme = StepScheme(0.05)
        psi0 = random_psi(8, 8)
        _, pr, br = trajectory_streams(3)
        runner = _Runner(cfg, scheme, psi0, *trajectory_streams(3)[1:])
        runner.advance(25)
        phase = pr.standard_normal((25, 8))
        bath = br.standard_normal((25, 8)) if cfg.is_open else [None] * 25
        psi = psi0
        for k in range(25):
            psi = step_with_noise(psi, phase[k], bath[k], scheme, cfg)
        assert_allclose(runner.psi, psi, atol=1e-12)

    def test_python_step_conserves_mass(self):
        s = ChainState(random_psi(8, 9))
        m0 = total_mass(s)
        rng = np.random.default_rng(0)
        scheme = StepScheme(0.1)
        for _ in range(50):
            m = total_mass(s)
            s = step(s, scheme, rng, PER)
            assert abs(total_mass(s) - m) <= 1e-12 * m
        assert abs(total_mass(s) - m0) <= 1e-12 * m0

    def test_block_size_invariance(self, monkeypatch):
        import phasechain.sde as sde_mod
        a = run_trajectory(OPN, StepScheme(0.05), Equilibrium(1.0), 1.0, 5.0, seed=4)
        monkeypatch.setattr(sde_mod, "NOISE_BLOCK", 7)
        b = run_trajectory(OPN, StepScheme(0.05), Equilibrium(1.0), 1.0, 5.0, seed=4)
        assert a.final_state.psi.tobytes() == b.final_state.psi.tobytes()
        assert a.mean["rho"].tobytes() == b.mean["rho"].tobytes()

    def test_gauge_covariance(self):
        psi = random_psi(8, 10)
        scheme = StepScheme(0.05)
        ref = run_trajectory(PER, scheme, Deterministic(psi), 0.0, 5.0, seed=1)
        # multiplying by i is exact in floating point, so results are bit-identical
        rot = run_trajectory(PER, scheme, Deterministic(1j * psi), 0.0, 5.0, seed=1)
        for name in ("rho", "current", "exchange2", "mass"):
            assert ref.mean[name].tobytes() == rot.mean[name].tobytes()
        gen = run_trajectory(PER, scheme, Deterministic(np.exp(0.3j) * psi), 0.0, 5.0, seed=1)
        for name in ("rho", "current", "exchange2", "mass"):
            assert_allclose(gen.mean[name], ref.mean[name], rtol=1e-12, atol=1e-12)

    def test_scheme_validation(self):
        with pytest.raises(ValueError):
            StepScheme(0.0)
        with pytest.raises(ValueError):
            StepScheme(0.1, ("noise",))
        assert default_scheme(ChainConfig(OPEN, 8, 2.0, 4.0)).dt == 0.005


class TestTrajectories:
    def test_empty_measurement(self):
        st = run_trajectory(OPN, StepScheme(0.05), Equilibrium(1.0), 2.0, 0.0, seed=2)
        assert st.is_empty and st.n_samples == 0
        assert st.final_state is not None and st.final_state.time == pytest.approx(2.0)

    def test_reproducible(self):
        a = run_trajectory(OPN, StepScheme(0.05), Equilibrium(1.0), 1.0, 3.0, seed=5)
        b = run_trajectory(OPN, StepScheme(0.05), Equilibrium(1.0), 1.0, 3.0, seed=5)
        assert a.mean["current"].tobytes() == b.mean["current"].tobytes()
        assert a.mass_series.tobytes() == b.mass_series.tobytes()

    def test_nan_diagnostic(self):
        psi = np.ones(8, dtype=complex)
        psi[3] = np.nan
        with pytest.raises(IntegrationError, match=r"step 0, site \d"):
            run_trajectory(PER, StepScheme(0.05), Deterministic(psi), 1.0, 1.0, seed=0)

    def test_debug_mode_runs(self):
        st = run_trajectory(PER, StepScheme(0.05), Equilibrium(1.0), 0.0, 20.0, seed=0, debug=True)
        assert st.max_mass_drift <= 1e-12

    def test_single_trajectory_ensemble(self):
        a = run_trajectory(OPN, StepScheme(0.05), Equilibrium(1.0), 1.0, 3.0, seed=77)
        b = ensemble_average(OPN, StepScheme(0.05), Equilibrium(1.0), 1, seeds=[77], t_burn=1.0, t_measure=3.0)
        for name in a.mean:
            assert a.mean[name].tobytes() == b.mean[name].tobytes()

    def test_seed_checks(self):
        with pytest.raises(ValueError, match="collide"):
            ensemble_average(OPN, StepScheme(0.05), Equilibrium(1.0), 2, seeds=[3, 3], t_measure=1.0)
        with pytest.raises(ValueError):
            ensemble_average(OPN, StepScheme(0.05), Equilibrium(1.0), 3, seeds=[1, 2], t_measure=1.0)
        assert len(set(trajectory_seeds(0, 1000))) == 1000

    def test_thread_independence(self):
        kw = dict(t_burn=2.0, t_measure=10.0, seed=9)
        a = ensemble_average(OPN, StepScheme(0.05), Equilibrium(1.0), 6, threads=1, **kw)
        b = ensemble_average(OPN, StepScheme(0.05), Equilibrium(1.0), 6, threads=3, **kw)
        for name in a.mean:
            assert a.mean[name].tobytes() == b.mean[name].tobytes()
            assert a.traj_m2[name].tobytes() == b.traj_m2[name].tobytes()

    def test_merge_commutative_and_associative(self):
        parts = [run_trajectory(OPN, StepScheme(0.05), Equilibrium(1.0), 0.5, 2.0, seed=s) for s in (1, 2, 3)]
        a, b, c = parts
        ab, ba = a.merge(b), b.merge(a)
        for name in a.mean:
            assert_allclose(ab.mean[name], ba.mean[name], rtol=1e-12)
            assert_allclose(ab.m2[name], ba.m2[name], rtol=1e-12)
            assert_allclose(ab.traj_m2[name], ba.traj_m2[name], rtol=1e-12, atol=1e-15)
            left, right = a.merge(b).merge(c), a.merge(b.merge(c))
            assert_allclose(left.mean[name], right.mean[name], rtol=1e-12)
            assert_allclose(left.traj_m2[name], right.traj_m2[name], rtol=1e-12)

    def test_merge_matches_direct_statistics(self):
        parts = [run_trajectory(OPN, StepScheme(0.05), Equilibrium(1.0), 0.5, 2.0, seed=s) for s in range(4)]
        merged = parts[0]
        for p in parts[1:]:
            merged = merged.merge(p)
        per_traj = np.array([p.mean["rho"] for p in parts])
        assert_allclose(merged.mean["rho"], per_traj.mean(axis=0), rtol=1e-12)
        assert_allclose(merged.stderr("rho"), per_traj.std(axis=0, ddof=1) / 2, rtol=1e-10)

    def test_merge_rejects_mismatch(self):
        a = run_trajectory(OPN, StepScheme(0.05), Equilibrium(1.0), 0.5, 2.0, seed=1)
        b = run_trajectory(OPN, StepScheme(0.05), Equilibrium(1.0), 0.5, 3.0, seed=2)
        with pytest.raises(ValueError):
            a.merge(b)

    def test_error_bars_shrink(self):
        cfg = ChainConfig(OPEN, 8, 1.0, 1.0, 1.0, 2.0)
        kw = dict(t_burn=20.0, t_measure=50.0)
        small = ensemble_average(cfg, StepScheme(0.05), Equilibrium(1.0), 32, seed=100, **kw)
        big = ensemble_average(cfg, StepScheme(0.05), Equilibrium(1.0), 64, seed=200, **kw)
        ratio = big.stderr("rho").mean() / small.stderr("rho").mean()
        assert abs(ratio - 1 / np.sqrt(2)) <= 0.2 / np.sqrt(2)

    def test_periodic_equilibrium_flat(self):
        lam = 2.0
        st = ensemble_average(PER, StepScheme(0.05), Equilibrium(lam), 16, seed=11, t_burn=0.0, t_measure=200.0)
        z = (st.mean["rho"] - 1 / lam) / st.stderr("rho")
        assert np.max(np.abs(z)) <= 3.0

    def test_anomalous_moment_vanishes(self):
        # E[psi_x psi_y] stays zero for phase-invariant initial laws
        cfg = ChainConfig(OPEN, 6, 1.0, 1.0, 1.0, 2.0)
        finals = []
        for s in trajectory_seeds(12, 400):
            st = run_trajectory(cfg, StepScheme(0.05), Equilibrium(1.0), 5.0, 0.0, seed=s)
            finals.append(st.final_state.psi)
        psi = np.array(finals)
        pp = psi[:, 0] * psi[:, 1]
        err = np.sqrt(np.var(pp.real, ddof=1) / len(pp))
        assert abs(pp.real.mean()) <= 4 * err and abs(pp.imag.mean()) <= 4 * err


class TestSchemeMoments:
    def test_weak_second_order(self):
        cfg = ChainConfig(OPEN, 6, 1.0, 1.0, 1.0, 2.0)
        exact = stationary_moments(cfg).c
        errs = [np.max(np.abs(scheme_stationary_moments(cfg, StepScheme(dt)) - exact)) for dt in (0.2, 0.1, 0.05)]
        assert 3.5 < errs[0] / errs[1] < 4.5 and 3.5 < errs[1] / errs[2] < 4.5

    def test_moment_map_matches_python_steps(self):
        # one step of the affine map against an ensemble of explicit steps
        cfg = ChainConfig(OPEN, 5, 1.0, 0.8, 1.0, 2.0)
        scheme = StepScheme(0.3)
        psi0 = random_psi(5, 13)
        M, v = scheme_moment_map(cfg, scheme)
        want = (M @ np.outer(psi0, psi0.conj()).ravel() + v).reshape(5, 5)
        rng = np.random.default_rng(14)
        n = 20_000
        acc = np.zeros((5, 5), dtype=complex)
        for _ in range(n):
            p = step_with_noise(psi0, rng.standard_normal(5), rng.standard_normal(8), scheme, cfg)
            acc += np.outer(p, p.conj())
        acc /= n
        assert np.max(np.abs(acc - want)) < 0.1

    def test_periodic_rejected(self):
        with pytest.raises(ValueError):
            scheme_stationary_moments(PER, StepScheme(0.1))
