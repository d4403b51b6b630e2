import numpy as np
import pytest

from heatlift.dyadic import (
    ConvergenceTable,
    convergence_study,
    level2_telescope,
    lift_level,
    polygonal_restrict,
    validate_besov_params,
)
from heatlift.sampler import FieldSample, SpectralConfig, sample_field
from heatlift.sheets import dilate_sheet, dist_infty, increment, lift_piecewise_linear, PathSlice


def make_sample(seed=0, grid_level=6, n_time=6, dim=2, n_modes=64):
    cfg = SpectralConfig(
        n_modes=n_modes,
        time_horizon=1.0,
        n_time=n_time,
        grid_level=grid_level,
        dim=dim,
        seed=seed,
    )
    return sample_field(cfg, 0)


class TestPolygonalRestrict:
    def test_full_level_is_identity(self):
        sample = make_sample()
        restricted = polygonal_restrict(sample, sample.config.grid_level)
        assert np.array_equal(restricted.values, sample.values)

    def test_rejects_excess_level(self):
        sample = make_sample(grid_level=4)
        with pytest.raises(ValueError):
            polygonal_restrict(sample, 5)

    def test_linear_field_unchanged(self):
        cfg = SpectralConfig(
            n_modes=4, time_horizon=1.0, n_time=3, grid_level=5, dim=1, seed=0
        )
        x = cfg.nodes()
        slopes = np.array([0.0, 1.0, -2.0, 0.5])
        values = slopes[:, None, None] * x[None, :, None]
        sample = FieldSample(values=values, config=cfg, replica=0)
        for k in range(0, 6):
            restricted = polygonal_restrict(sample, k)
            assert np.allclose(restricted.values, values, atol=1e-14)

    def test_midpoint_identity_exact(self):
        sample = make_sample(grid_level=6)
        k = 3
        restricted = polygonal_restrict(sample, k)
        stride = 2 ** (6 - k)
        for j in range(1, 2**k + 1):
            mid = (2 * j - 1) * stride // 2
            left = sample.values[:, (j - 1) * stride, :]
            right = sample.values[:, j * stride, :]
            assert np.array_equal(
                restricted.values[:, mid, :], 0.5 * (left + right)
            )

    def test_kept_nodes_exact(self):
        sample = make_sample(grid_level=6)
        restricted = polygonal_restrict(sample, 2)
        stride = 2**4
        assert np.array_equal(
            restricted.values[:, ::stride, :], sample.values[:, ::stride, :]
        )


class TestLiftLevel:
    def test_zero_field_lifts_to_unit_sheet(self):
        cfg = SpectralConfig(
            n_modes=4, time_horizon=1.0, n_time=3, grid_level=4, dim=2, seed=0
        )
        zero = FieldSample(np.zeros((4, 17, 2)), cfg, 0)
        sheet = lift_level(zero, 2)
        assert np.all(sheet.level1 == 0) and np.all(sheet.level2 == 0)
        assert np.all(sheet.initial_values == 0)

    def test_matches_slice_lift(self):
        sample = make_sample(seed=5)
        k = 4
        sheet = lift_level(sample, k)
        restricted = polygonal_restrict(sample, k)
        t_index = 3
        direct = lift_piecewise_linear(
            PathSlice(
                values=restricted.values[t_index],
                grid_level=sample.config.grid_level,
            )
        )
        assert np.array_equal(sheet.level1[t_index], direct.level1)
        assert np.array_equal(sheet.level2[t_index], direct.level2)

    def test_initial_value_path_attached(self):
        sample = make_sample(seed=6)
        for k in (2, 4):
            sheet = lift_level(sample, k)
            assert np.array_equal(sheet.initial_values, sample.values[:, 0, :])

    def test_dilation_equivariance_dyadic_scale_exact(self):
        sample = make_sample(seed=7)
        eps = 0.5
        scaled = FieldSample(eps * sample.values, sample.config, sample.replica)
        a = lift_level(scaled, 3)
        b = dilate_sheet(eps, lift_level(sample, 3))
        assert np.array_equal(a.level1, b.level1)
        assert np.array_equal(a.level2, b.level2)
        assert np.array_equal(a.initial_values, b.initial_values)

    def test_dilation_equivariance_generic_scale(self):
        sample = make_sample(seed=8)
        eps = 0.7317
        scaled = FieldSample(eps * sample.values, sample.config, sample.replica)
        a = lift_level(scaled, 4)
        b = dilate_sheet(eps, lift_level(sample, 4))
        scale1 = np.max(np.abs(b.level1))
        scale2 = np.max(np.abs(b.level2))
        assert np.max(np.abs(a.level1 - b.level1)) <= 1e-14 * scale1
        assert np.max(np.abs(a.level2 - b.level2)) <= 1e-14 * scale2


class TestTelescope:
    def test_empty_interval_is_zero(self):
        sample = make_sample(seed=9)
        out = level2_telescope(sample, 3, 2, 5, 5)
        assert np.all(out == 0)

    def test_diagonal_entries_vanish(self):
        sample = make_sample(seed=10)
        out = level2_telescope(sample, 4, 1, 2, 11)
        assert np.all(np.diagonal(out) == 0.0)

    def test_matches_direct_lift_difference(self):
        sample = make_sample(seed=11, grid_level=6)
        k, t_index, i_node, j_node = 4, 5, 2, 11
        closed = level2_telescope(sample, k, t_index, i_node, j_node)
        stride = 2 ** (6 - k)
        fine = lift_level(sample, k + 1).slice(t_index)
        coarse = lift_level(sample, k).slice(t_index)
        direct = (
            increment(fine, i_node * stride, j_node * stride).level2
            - increment(coarse, i_node * stride, j_node * stride).level2
        )
        assert np.max(np.abs(closed - direct)) <= 1e-12

    def test_many_random_cases(self):
        rng = np.random.default_rng(42)
        for case in range(20):
            sample = make_sample(seed=100 + case, grid_level=6)
            k = int(rng.integers(2, 6))
            t_index = int(rng.integers(0, 7))
            i_node = int(rng.integers(0, 2**k))
            j_node = int(rng.integers(i_node + 1, 2**k + 1))
            closed = level2_telescope(sample, k, t_index, i_node, j_node)
            stride = 2 ** (6 - k)
            fine = lift_level(sample, k + 1).slice(t_index)
            coarse = lift_level(sample, k).slice(t_index)
            direct = (
                increment(fine, i_node * stride, j_node * stride).level2
                - increment(coarse, i_node * stride, j_node * stride).level2
            )
            assert np.max(np.abs(closed - direct)) <= 1e-12

    def test_index_bounds(self):
        sample = make_sample(seed=12)
        with pytest.raises(IndexError):
            level2_telescope(sample, 3, 0, 5, 3)

    def test_level1_difference_vanishes_at_coarse_nodes(self):
        sample = make_sample(seed=13)
        k = 3
        coarse = polygonal_restrict(sample, k)
        finer = polygonal_restrict(sample, k + 1)
        stride = 2 ** (6 - k)
        gap = finer.values[:, ::stride, :] - coarse.values[:, ::stride, :]
        assert np.max(np.abs(gap)) == 0.0


class TestBesovParamValidation:
    def test_valid_chain_passes(self):
        validate_besov_params(alpha=0.4, beta=0.04, m=30.0)

    @pytest.mark.parametrize(
        "alpha,beta,m,fragment",
        [
            (0.6, 0.04, 30.0, "alpha in (1/3, 1/2)"),
            (0.4, 0.1, 30.0, "4*beta < 1 - 2*alpha"),
            (0.4, 0.04, 20.0, "beta > 1/m"),
            (0.35, 0.045, 30.0, "alpha - 1/m > 1/3"),
        ],
    )
    def test_violations_named(self, alpha, beta, m, fragment):
        import re

        with pytest.raises(ValueError, match=re.escape(fragment)):
            validate_besov_params(alpha=alpha, beta=beta, m=m)


class TestConvergenceStudy:
    def test_zero_replicas_empty_table(self):
        cfg = SpectralConfig(
            n_modes=16, time_horizon=1.0, n_time=4, grid_level=5, dim=2, seed=0
        )
        table = convergence_study(cfg, range(2, 4), replicas=0)
        assert table.empty
        assert table.fits == {}

    def test_k_range_needs_grid_headroom(self):
        cfg = SpectralConfig(
            n_modes=16, time_horizon=1.0, n_time=4, grid_level=4, dim=2, seed=0
        )
        with pytest.raises(ValueError):
            convergence_study(cfg, range(2, 5), replicas=1)

    def test_sup_estimates_decay(self):
        cfg = SpectralConfig(
            n_modes=128, time_horizon=1.0, n_time=8, grid_level=7, dim=2, seed=1
        )
        table = convergence_study(cfg, range(2, 7), replicas=60)
        level1 = {r.k: r.estimate for r in table.rows if r.level == 1}
        level2 = {r.k: r.estimate for r in table.rows if r.level == 2}
        ks = sorted(level1)
        assert all(level1[a] > level1[b] for a, b in zip(ks, ks[1:]))
        assert all(level2[a] > level2[b] for a, b in zip(ks, ks[1:]))
        assert table.fits["sup:1"].slope < -0.5
        assert table.fits["sup:2"].slope < -0.2

    def test_besov_mode_runs_and_is_finite(self):
        cfg = SpectralConfig(
            n_modes=64, time_horizon=1.0, n_time=8, grid_level=5, dim=2, seed=2
        )
        table = convergence_study(
            cfg,
            range(2, 4),
            replicas=4,
            kinds=("besov",),
            alpha=0.4,
            beta=0.04,
            m=30.0,
        )
        assert len(table.rows) == 4
        assert all(np.isfinite(r.estimate) and r.estimate > 0 for r in table.rows)

    def test_besov_mode_requires_parameters(self):
        cfg = SpectralConfig(
            n_modes=16, time_horizon=1.0, n_time=4, grid_level=5, dim=2, seed=0
        )
        with pytest.raises(ValueError):
            convergence_study(cfg, range(2, 4), replicas=1, kinds=("besov",))

    def test_threads_do_not_change_results(self):
        cfg = SpectralConfig(
            n_modes=32, time_horizon=1.0, n_time=4, grid_level=5, dim=2, seed=3
        )
        a = convergence_study(cfg, range(2, 5), replicas=8, threads=1)
        b = convergence_study(cfg, range(2, 5), replicas=8, threads=3)
        assert [(r.estimate, r.stderr) for r in a.rows] == [
            (r.estimate, r.stderr) for r in b.rows
        ]

    def test_csv_rows_schema(self):
        cfg = SpectralConfig(
            n_modes=16, time_horizon=1.0, n_time=4, grid_level=5, dim=2, seed=4
        )
        table = convergence_study(cfg, range(2, 4), replicas=3)
        rows = table.csv_rows()
        assert rows[0] == "k,level,norm_kind,estimate,stderr,replicas"
        assert len(rows) == 1 + 4


class TestMonotoneRefinement:
    def test_dist_to_full_lift_decreases_in_k(self):
        cfg = SpectralConfig(
            n_modes=64, time_horizon=1.0, n_time=4, grid_level=7, dim=2, seed=5
        )
        n_rep = 30
        means = []
        for k in (2, 4, 6):
            dists = []
            for r in range(n_rep):
                sample = sample_field(cfg, r)
                full = lift_level(sample, 7)
                approx = lift_level(sample, k)
                dists.append(dist_infty(full, approx))
            means.append(np.mean(dists))
        assert means[0] > means[1] > means[2]
