import numpy as np
import pytest

from heatlift.covariance import cov
from heatlift.sampler import (
    FieldSample,
    GridTooLargeError,
    SpectralConfig,
    basis_eval,
    field_to_csv,
    load_field,
    mode_rate,
    ou_step,
    sample_field,
    sample_slice_marginal,
    save_field,
    truncation_residual,
)


class TestBasis:
    def test_constant_mode(self):
        assert basis_eval(0, 0.37) == 1.0

    def test_cosine_at_zero(self):
        assert basis_eval(1, 0.0) == pytest.approx(np.sqrt(2.0), rel=1e-15)

    def test_sine_mode(self):
        assert basis_eval(-1, 0.25) == pytest.approx(np.sqrt(2.0), rel=1e-12)

    def test_orthonormality_on_grid(self):
        K = 10
        x = np.arange(2**K) / 2**K  # one period, no duplicate endpoint
        w = 1.0 / 2**K
        for n in range(-8, 9):
            for m_ in range(n, 9):
                inner = float(np.sum(basis_eval(n, x) * basis_eval(m_, x)) * w)
                target = 1.0 if n == m_ else 0.0
                assert abs(inner - target) <= 2.0 ** (-K)


class TestOuStep:
    def test_brownian_limit(self):
        assert ou_step(0.0, 0.25, 0.0, 1.0) == 0.5

    def test_deterministic_decay(self):
        lam, delta, prev = 2.0, 0.3, 1.7
        assert ou_step(lam, delta, prev, 0.0) == pytest.approx(
            np.exp(-lam * delta) * prev, rel=1e-15
        )

    def test_negative_delta_rejected(self):
        with pytest.raises(ValueError):
            ou_step(1.0, -0.1, 0.0, 0.0)

    def test_one_step_variance_is_exact_transition(self):
        lam, delta = 3.0, 0.2
        shock = ou_step(lam, delta, 0.0, 1.0)
        assert shock**2 == pytest.approx(
            (1.0 - np.exp(-2.0 * lam * delta)) / (2.0 * lam), rel=1e-12
        )

    def test_stationary_variance(self):
        # lam=1, delta=0.1 over 1e5 steps; the chain variance approaches
        # 1/(2*lam) = 0.5.  The effective sample size under lag-rho^2
        # autocorrelation of the squares gives SE ~ 0.0071.
        rng = np.random.default_rng(123)
        lam, delta = 1.0, 0.1
        n_steps = 100_000
        xi = rng.standard_normal(n_steps)
        x = 0.0
        samples = np.empty(n_steps)
        decay = np.exp(-lam * delta)
        sd = np.sqrt((1.0 - np.exp(-2.0 * lam * delta)) / (2.0 * lam))
        for i in range(n_steps):
            x = decay * x + sd * xi[i]
            samples[i] = x
        burn = 100
        var = samples[burn:].var()
        rho2 = decay**2
        ess = (n_steps - burn) * (1.0 - rho2) / (1.0 + rho2)
        se = 0.5 * np.sqrt(2.0 / ess)
        assert abs(var - 0.5) <= 3.0 * se


class TestSampleField:
    def test_initial_row_zero(self):
        cfg = SpectralConfig(n_modes=16, n_time=4, grid_level=4, dim=2, seed=1)
        sample = sample_field(cfg, 0)
        assert np.all(sample.values[0] == 0.0)

    def test_periodicity(self):
        cfg = SpectralConfig(n_modes=64, n_time=8, grid_level=6, dim=1, seed=2)
        sample = sample_field(cfg, 0)
        gap = np.max(np.abs(sample.values[:, 0, :] - sample.values[:, -1, :]))
        assert gap <= 1e-12

    def test_bit_identical_replicas(self):
        cfg = SpectralConfig(n_modes=32, n_time=8, grid_level=5, dim=2, seed=7)
        a = sample_field(cfg, 3)
        b = sample_field(cfg, 3)
        assert np.array_equal(a.values, b.values)

    def test_distinct_replicas_differ(self):
        cfg = SpectralConfig(n_modes=32, n_time=8, grid_level=5, dim=1, seed=7)
        a = sample_field(cfg, 0)
        b = sample_field(cfg, 1)
        assert not np.array_equal(a.values[1:], b.values[1:])

    def test_variance_matches_truncated_oracle(self):
        cfg = SpectralConfig(n_modes=64, n_time=8, grid_level=4, dim=1, seed=11)
        n_rep = 3000
        t_idx, x_idx = 5, 3
        vals = np.array(
            [sample_field(cfg, r).values[t_idx, x_idx, 0] for r in range(n_rep)]
        )
        t_val = cfg.times()[t_idx]
        x_val = cfg.nodes()[x_idx]
        oracle = cov(t_val, x_val, t_val, x_val, method="fourier", n_modes=64)
        emp = vals.var(ddof=1)
        se = emp * np.sqrt(2.0 / (n_rep - 1))
        assert abs(emp - oracle) <= 4.0 * se

    def test_component_independence(self):
        cfg = SpectralConfig(n_modes=32, n_time=4, grid_level=4, dim=2, seed=13)
        n_rep = 3000
        vals = np.array([sample_field(cfg, r).values for r in range(n_rep)])
        rng = np.random.default_rng(5)
        for _ in range(10):
            t1, t2 = rng.integers(1, 5, size=2)
            x1, x2 = rng.integers(0, 17, size=2)
            a = vals[:, t1, x1, 0]
            b = vals[:, t2, x2, 1]
            cross = np.mean(a * b)
            se = np.std(a * b, ddof=1) / np.sqrt(n_rep)
            assert abs(cross) <= 4.0 * se

    def test_variance_stationary_in_x(self):
        cfg = SpectralConfig(n_modes=64, n_time=5, grid_level=5, dim=1, seed=17)
        n_rep = 4000
        # 0.1875 and 0.6875 are grid nodes at K=5.
        i1, i2 = 6, 22
        vals = np.array(
            [sample_field(cfg, r).values[5, [i1, i2], 0] for r in range(n_rep)]
        )
        v1, v2 = vals[:, 0] ** 2, vals[:, 1] ** 2
        diff = np.mean(v1 - v2)
        se = np.std(v1 - v2, ddof=1) / np.sqrt(n_rep)
        assert abs(diff) <= 4.0 * se

    def test_mode_cutoff_leaves_shared_streams_unchanged(self):
        # Enlarging the cutoff must not change the noise driving the
        # modes already present (canonical block order).
        small = SpectralConfig(n_modes=8, n_time=4, grid_level=3, dim=1, seed=3)
        big = SpectralConfig(n_modes=16, n_time=4, grid_level=3, dim=1, seed=3)
        from heatlift.sampler import _simulate_coefficients

        ca = _simulate_coefficients(small, 0, 0)
        cb = _simulate_coefficients(big, 0, 0)
        assert np.array_equal(ca, cb[:, : ca.shape[1]])

    def test_absurd_grid_reported(self):
        cfg = SpectralConfig(n_modes=4, n_time=2**16, grid_level=14, dim=4, seed=0)
        with pytest.raises(GridTooLargeError):
            sample_field(cfg, 0)


class TestMarginalSampler:
    def test_matches_pointwise_variance(self):
        cfg = SpectralConfig(n_modes=64, n_time=4, grid_level=3, dim=1, seed=23)
        rng = np.random.default_rng(23)
        draws = sample_slice_marginal(cfg, 0.7, 40_000, rng, nodes=np.array([0.25]))
        emp = draws[:, 0, 0].var(ddof=1)
        oracle = cov(0.7, 0.25, 0.7, 0.25, method="fourier", n_modes=64)
        se = emp * np.sqrt(2.0 / (40_000 - 1))
        assert abs(emp - oracle) <= 4.0 * se

    def test_needs_positive_time(self):
        cfg = SpectralConfig(n_modes=8, n_time=4, grid_level=3, dim=1, seed=0)
        with pytest.raises(ValueError):
            sample_slice_marginal(cfg, 0.0, 10, np.random.default_rng(0))


class TestTruncationResidual:
    def test_uniform_bound(self):
        for n_modes in (16, 64, 256):
            bound = 1.0 / (4.0 * np.pi**2 * n_modes)
            for t in (0.1, 1.0, 10.0):
                assert 0.0 < truncation_residual(n_modes, t) <= bound

    def test_decreasing_in_cutoff(self):
        assert truncation_residual(32, 1.0) > truncation_residual(64, 1.0)
        assert truncation_residual(64, 1.0) > truncation_residual(128, 1.0)

    def test_vanishes_for_large_cutoff(self):
        assert truncation_residual(10_000, 1.0) < 1e-5

    def test_zero_time(self):
        assert truncation_residual(16, 0.0) == 0.0

    def test_matches_direct_tail_sum(self):
        # Direct summation to n = 2e5 brackets the value up to the
        # analytic remainder bound 1/(4 pi^2 * 2e5).
        n_modes, t = 16, 0.8
        n_big = 200_000
        n = np.arange(n_modes + 1, n_big)
        lam = mode_rate(n)
        direct = float(np.sum((1.0 - np.exp(-2.0 * lam * t)) / lam))
        remainder_bound = 1.0 / (4.0 * np.pi**2 * (n_big - 1))
        value = truncation_residual(n_modes, t)
        assert direct <= value <= direct + 1.1 * remainder_bound


class TestFieldIO:
    def test_binary_roundtrip(self, tmp_path):
        cfg = SpectralConfig(n_modes=8, n_time=4, grid_level=3, dim=2, seed=5)
        sample = sample_field(cfg, 2)
        path = tmp_path / "field.bin"
        save_field(sample, str(path))
        back = load_field(str(path))
        assert np.array_equal(back.values, sample.values)
        assert back.config == cfg
        assert back.replica == 2

    def test_csv_layout(self, tmp_path):
        cfg = SpectralConfig(n_modes=4, n_time=2, grid_level=2, dim=1, seed=5)
        sample = sample_field(cfg, 0)
        path = tmp_path / "field.csv"
        field_to_csv(sample, str(path))
        lines = path.read_text().strip().split("\n")
        assert lines[0] == "t,x,component,value"
        assert len(lines) == 1 + 3 * 5 * 1
        t, x, c, v = lines[1].split(",")
        assert float(t) == 0.0 and float(v) == 0.0
