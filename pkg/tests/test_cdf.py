"""Tests for empirical CDF estimation, queries, standardization, averaging."""

import numpy as np
import pytest

from cdfmatch import (EmpiricalCdf, Volume, average_cdfs, build_cdf,
                      cdf_value, ks_distance, quantile, zscore_standardize)
from cdfmatch.errors import (AllBackground, DegenerateConstant, EmptyInput,
                             OutOfRange)

from conftest import cdf_from_samples, volume_from_values


class TestVolume:
    def test_voxel_count_must_match_dims(self):
        with pytest.raises(ValueError):
            Volume((2, 2, 2), np.zeros(7))

    def test_rejects_non_finite(self):
        with pytest.raises(ValueError):
            volume_from_values([1.0, np.nan, 2.0])

    def test_immutable_voxels(self):
        vol = volume_from_values([1.0, 2.0, 3.0])
        with pytest.raises(ValueError):
            vol.voxels[0] = 9.0

    def test_foreground_excludes_background(self):
        vol = volume_from_values([0.0, 1.0, 0.0, 2.0])
        assert vol.foreground().tolist() == [1.0, 2.0]


class TestEmpiricalCdfValidation:
    def test_requires_strictly_increasing_xs(self):
        with pytest.raises(ValueError):
            EmpiricalCdf([1.0, 1.0, 2.0], [0.2, 0.5, 1.0])

    def test_requires_non_decreasing_ps(self):
        with pytest.raises(ValueError):
            EmpiricalCdf([1.0, 2.0, 3.0], [0.5, 0.4, 1.0])

    def test_last_probability_must_be_one(self):
        with pytest.raises(ValueError):
            EmpiricalCdf([1.0, 2.0], [0.2, 0.9999])
        EmpiricalCdf([1.0, 2.0], [0.2, 1.0 - 1e-13])  # within tolerance


class TestBuildCdf:
    def test_uniform_ranks_on_four_points(self):
        vol = volume_from_values([1.0, 2.0, 3.0, 4.0], background=-1.0)
        cdf = build_cdf(vol, exclude_background=False, grid_size=4)
        assert cdf.xs.tolist() == [1.0, 2.0, 3.0, 4.0]
        assert cdf.ps.tolist() == [0.25, 0.5, 0.75, 1.0]
        assert cdf.n_samples == 4

    def test_all_background_raises(self):
        vol = volume_from_values([0.0, 0.0, 0.0])
        with pytest.raises(AllBackground):
            build_cdf(vol, exclude_background=True)

    def test_single_intensity_raises(self):
        vol = volume_from_values([5.0, 5.0, 5.0])
        with pytest.raises(DegenerateConstant):
            build_cdf(vol, exclude_background=True)

    def test_background_never_widens_the_range(self):
        vol = volume_from_values([0.0, 10.0, 12.0, 14.0])
        cdf = build_cdf(vol, exclude_background=True)
        assert cdf.xs[0] == 10.0 and cdf.xs[-1] == 14.0

    def test_lognormal_median_against_rank_oracle(self):
        rng = np.random.default_rng(12345)
        samples = rng.lognormal(0.3, 0.7, 100_000)
        median = float(np.exp(0.3))
        # independent oracle: sorted-sample rank fraction at the median
        oracle = np.searchsorted(np.sort(samples), median, side="right") / samples.size
        cdf = cdf_from_samples(samples)
        got = cdf_value(cdf, median)
        assert abs(got - oracle) < 0.01
        assert abs(got - 0.5) < 0.01

    def test_tied_values_get_averaged_ranks(self):
        # value 2 appears twice: averaged rank (2 + 3)/2 of 4 -> p = 0.625
        vol = volume_from_values([1.0, 2.0, 2.0, 3.0], background=-1.0)
        cdf = build_cdf(vol, exclude_background=False, grid_size=3)
        assert cdf.ps.tolist() == [0.25, 0.625, 1.0]

    def test_deterministic(self):
        vol = volume_from_values(np.random.default_rng(1).normal(5, 2, 4000))
        a = build_cdf(vol)
        b = build_cdf(vol)
        assert np.array_equal(a.xs, b.xs) and np.array_equal(a.ps, b.ps)


class TestQuantile:
    @pytest.fixture()
    def four_point(self):
        return build_cdf(volume_from_values([1.0, 2.0, 3.0, 4.0], background=-1),
                         exclude_background=False, grid_size=4)

    def test_exact_grid_point(self, four_point):
        assert quantile(four_point, 0.5) == 2.0

    def test_maximum(self, four_point):
        assert quantile(four_point, 1.0) == 4.0

    def test_linear_interpolation(self, four_point):
        # between (2, 0.5) and (3, 0.75)
        assert quantile(four_point, 0.625) == pytest.approx(2.5, abs=1e-12)

    def test_clamps_below_first_probability(self, four_point):
        assert quantile(four_point, 0.01) == 1.0

    @pytest.mark.parametrize("p", [0.0, -0.5, 1.0000001, 2.0])
    def test_out_of_range(self, four_point, p):
        with pytest.raises(OutOfRange):
            quantile(four_point, p)

    def test_vectorized(self, four_point):
        out = quantile(four_point, np.array([0.25, 0.625, 1.0]))
        assert np.allclose(out, [1.0, 2.5, 4.0])


class TestCdfValue:
    @pytest.fixture()
    def four_point(self):
        return build_cdf(volume_from_values([1.0, 2.0, 3.0, 4.0], background=-1),
                         exclude_background=False, grid_size=4)

    def test_grid_endpoint(self, four_point):
        assert cdf_value(four_point, 1.0) == 0.25

    def test_saturates_above(self, four_point):
        assert cdf_value(four_point, 1e9) == 1.0

    def test_zero_below_ramp(self, four_point):
        assert cdf_value(four_point, -5.0) == 0.0

    def test_interpolation_inverse_of_quantile(self, four_point):
        assert cdf_value(four_point, 2.5) == pytest.approx(0.625, abs=1e-12)

    def test_monotone_in_x(self, four_point):
        xs = np.linspace(-1, 6, 300)
        vals = cdf_value(four_point, xs)
        assert (np.diff(vals) >= 0).all()


class TestRoundTripInvariants:
    def test_quantile_hits_grid_nodes(self):
        cdf = cdf_from_samples(np.random.default_rng(7).normal(0, 1, 5000),
                               grid_size=257)
        rising = np.diff(cdf.ps) > 0
        idx = np.where(np.concatenate([rising, [True]])
                       & np.concatenate([[True], rising]))[0]
        got = quantile(cdf, cdf.ps[idx])
        assert np.allclose(got, cdf.xs[idx], rtol=0, atol=1e-9)

    def test_quantile_of_cdf_value_round_trips(self):
        cdf = cdf_from_samples(np.random.default_rng(8).lognormal(0, 0.5, 20000))
        step = cdf.xs[1] - cdf.xs[0]
        xs = np.linspace(cdf.xs[0], cdf.xs[-1], 500)
        back = quantile(cdf, np.maximum(cdf_value(cdf, xs), 1e-300))
        assert np.abs(back - xs).max() <= step + 1e-9


class TestZscore:
    def test_two_point_symmetry(self):
        vol = volume_from_values([2.0, 4.0])
        out = zscore_standardize(vol)
        assert out.voxels.tolist() == [-1.0, 1.0]

    def test_background_left_alone(self):
        vol = volume_from_values([0.0, 2.0, 4.0, 0.0])
        out = zscore_standardize(vol)
        assert out.voxels[0] == 0.0 and out.voxels[3] == 0.0
        assert out.voxels[1] == -1.0 and out.voxels[2] == 1.0

    def test_moments_on_gaussian_sample(self):
        rng = np.random.default_rng(99)
        vol = volume_from_values(rng.normal(5, 3, 50_000))
        fg = zscore_standardize(vol).foreground()
        assert abs(fg.mean()) < 1e-9
        assert abs(fg.std() - 1.0) < 1e-9

    def test_idempotent(self):
        rng = np.random.default_rng(100)
        vol = volume_from_values(rng.normal(5, 3, 10_000))
        once = zscore_standardize(vol)
        twice = zscore_standardize(once)
        assert np.abs(twice.voxels - once.voxels).max() < 1e-9

    def test_constant_foreground_raises(self):
        with pytest.raises(DegenerateConstant):
            zscore_standardize(volume_from_values([3.0, 3.0, 3.0]))

    def test_all_background_raises(self):
        with pytest.raises(AllBackground):
            zscore_standardize(volume_from_values([0.0, 0.0, 0.0]))


class TestAverageCdfs:
    def test_average_of_one_is_identity(self):
        cdf = cdf_from_samples(np.random.default_rng(3).normal(0, 1, 2000))
        avg = average_cdfs([cdf])
        assert np.array_equal(avg.xs, cdf.xs)
        assert np.allclose(avg.ps, cdf.ps, atol=1e-12)

    def test_two_steps_average_to_half_plateau(self):
        h = 1e-9
        step0 = EmpiricalCdf([-h, 0.0], [0.0, 1.0])
        step2 = EmpiricalCdf([2.0 - h, 2.0], [0.0, 1.0])
        avg = average_cdfs([step0, step2], grid_size=1001)
        for x in (0.25, 0.5, 1.0, 1.5, 1.75):
            assert cdf_value(avg, x) == pytest.approx(0.5, abs=1e-9)
        assert cdf_value(avg, 2.0) == pytest.approx(1.0, abs=1e-12)

    def test_mean_lies_inside_envelope(self):
        cdfs = [cdf_from_samples(
            np.random.default_rng(s).normal(s * 0.1, 1 + 0.05 * s, 3000))
            for s in range(9)]
        avg = average_cdfs(cdfs)
        stack = np.stack([cdf_value(c, avg.xs) for c in cdfs])
        assert (avg.ps >= stack.min(axis=0) - 1e-9).all()
        assert (avg.ps <= stack.max(axis=0) + 1e-9).all()

    def test_permutation_invariant_bitwise(self):
        cdfs = [cdf_from_samples(np.random.default_rng(s).lognormal(0, 0.4, 2500))
                for s in range(5)]
        a = average_cdfs(cdfs)
        b = average_cdfs(cdfs[::-1])
        c = average_cdfs([cdfs[2], cdfs[0], cdfs[4], cdfs[1], cdfs[3]])
        assert np.array_equal(a.ps, b.ps) and np.array_equal(a.ps, c.ps)
        assert np.array_equal(a.xs, b.xs) and np.array_equal(a.xs, c.xs)

    def test_empty_input(self):
        with pytest.raises(EmptyInput):
            average_cdfs([])


class TestKsDistance:
    def test_identical_cdfs_have_zero_distance(self):
        cdf = cdf_from_samples(np.random.default_rng(5).normal(0, 1, 2000))
        assert ks_distance(cdf, cdf) == 0.0

    def test_disjoint_supports_have_distance_one(self):
        a = EmpiricalCdf([0.0, 1.0], [0.0, 1.0])
        b = EmpiricalCdf([10.0, 11.0], [0.0, 1.0])
        assert ks_distance(a, b) == 1.0

    def test_symmetric(self):
        a = cdf_from_samples(np.random.default_rng(6).normal(0, 1, 3000))
        b = cdf_from_samples(np.random.default_rng(7).normal(0.3, 1.2, 3000))
        assert ks_distance(a, b) == ks_distance(b, a)

    def test_matches_dense_grid_evaluation(self):
        a = cdf_from_samples(np.random.default_rng(8).normal(0, 1, 3000))
        b = cdf_from_samples(np.random.default_rng(9).normal(0.5, 0.8, 3000))
        dense = np.linspace(-6, 6, 200_001)
        brute = np.abs(np.asarray(cdf_value(a, dense))
                       - np.asarray(cdf_value(b, dense))).max()
        assert ks_distance(a, b) >= brute - 1e-12
