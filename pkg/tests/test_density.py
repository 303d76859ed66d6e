"""Effect-density estimation, bandwidth rules and bands."""

import math

import numpy as np
import pytest

from ivite import bandwidth, bootstrap_band, kde
from ivite.density import percentile_band
from ivite.errors import DataError, EstimationError, IviteError
from ivite.pipeline import PipelineConfig
from ivite.simulate import SimConfig, draw_sample, true_delta_density


class TestBandwidth:
    def test_mc_rule_value(self):
        assert bandwidth("paper_mc", 1000) == (math.log(1000) / 1000) ** (1 / 7)

    def test_kernel_order_rule_value(self):
        assert bandwidth("assumption2", 1000, P=2) == (math.log(1000) / 1000) ** (1 / 6)

    def test_decreasing_in_n(self):
        for rule in ("paper_mc", "assumption2"):
            hs = [bandwidth(rule, n) for n in (100, 1000, 10_000, 100_000)]
            assert all(a > b for a, b in zip(hs, hs[1:]))

    def test_scale_multiplies(self):
        assert bandwidth("paper_mc", 1000, scale=2.0) == 2 * bandwidth("paper_mc", 1000)

    def test_errors(self):
        with pytest.raises(DataError):
            bandwidth("nope", 1000)
        with pytest.raises(DataError):
            bandwidth("paper_mc", 1)
        with pytest.raises(DataError):
            bandwidth("assumption2", 1000, P=0)


class TestKde:
    def test_degenerate_sample_peak(self):
        h = 0.5
        est = kde([2.0] * 50, h=h, domain=(1.0, 3.0), grid=np.array([2.0]))
        assert est.values[0] == pytest.approx(1.0 / (h * math.sqrt(2 * math.pi)))

    def test_closed_form_density_endpoints(self):
        assert true_delta_density(0.0) == pytest.approx(1.0)
        assert true_delta_density(4.0) == pytest.approx(1.0 / 8.0)
        assert true_delta_density(-1.0) == 0.0
        grid = np.linspace(0.0, 4.0, 2001)
        assert float(np.trapezoid(true_delta_density(grid), grid)) == pytest.approx(
            1.0, abs=1e-3
        )

    def test_grid_confined_to_trimmed_interval(self):
        rng = np.random.default_rng(13)
        est = kde(rng.normal(0, 1, 500), h=0.4)
        lo, hi = est.domain
        assert est.grid[0] == pytest.approx(lo + 0.4)
        assert est.grid[-1] == pytest.approx(hi - 0.4)
        assert np.all(est.values >= 0.0)

    def test_trimmed_integral_on_well_behaved_sample(self):
        # a Gaussian sample loses essentially no mass to the trimmed strips
        rng = np.random.default_rng(14)
        est = kde(rng.normal(0, 1, 2000))
        assert 0.85 <= est.integral() <= 1.01

    def test_untrimmed_integral_near_one(self):
        rng = np.random.default_rng(15)
        est = kde(rng.normal(0, 1, 2000), trim=False)
        assert 0.98 <= float(np.trapezoid(est.values, est.grid)) <= 1.02

    def test_mirror_symmetry(self):
        rng = np.random.default_rng(16)
        deltas = rng.gamma(2.0, 1.0, 400)
        c = 3.0
        grid = np.linspace(0.5, 5.5, 101)
        a = kde(deltas, h=0.3, domain=(0.0, 6.0), grid=grid)
        b = kde(2 * c - deltas, h=0.3, domain=(0.0, 6.0), grid=(2 * c - grid)[::-1])
        np.testing.assert_allclose(a.values, b.values[::-1], atol=1e-12)

    def test_compact_kernels(self):
        rng = np.random.default_rng(17)
        deltas = rng.normal(0, 1, 300)
        for kernel in ("epanechnikov", "triweight"):
            est = kde(deltas, kernel=kernel, h=0.5)
            assert np.all(est.values >= 0.0)
            assert 0.8 <= est.integral() <= 1.05

    def test_errors(self):
        with pytest.raises(DataError):
            kde([], h=0.5)
        with pytest.raises(DataError):
            kde([1.0, 2.0], h=0.0)
        with pytest.raises(DataError):
            kde([1.0, 2.0], kernel="box", h=0.5)
        with pytest.raises(DataError):
            kde([1.0, 2.0], h=0.5, domain=(3.0, 3.0))
        with pytest.raises(EstimationError, match="trimmed interval"):
            kde([1.0, 2.0], h=5.0, domain=(0.0, 1.0))


class TestBands:
    def test_identical_replicates_collapse_band(self):
        grid = np.linspace(0.0, 1.0, 11)
        row = np.sin(grid) + 1.0
        band = percentile_band(grid, np.vstack([row, row]), 0.9, method="bootstrap")
        np.testing.assert_array_equal(band.lower, row)
        np.testing.assert_array_equal(band.upper, row)

    def test_level_nesting(self):
        rng = np.random.default_rng(18)
        grid = np.linspace(0.0, 1.0, 21)
        rows = rng.random((40, 21))
        narrow = percentile_band(grid, rows, 0.90, method="bootstrap")
        wide = percentile_band(grid, rows, 0.95, method="bootstrap")
        assert np.all(wide.lower <= narrow.lower)
        assert np.all(wide.upper >= narrow.upper)

    def test_degraded_flag(self):
        grid = np.linspace(0.0, 1.0, 5)
        rows = np.ones((10, 5))
        band = percentile_band(grid, rows, 0.9, method="bootstrap", n_failures=1)
        assert band.degraded  # 1 of 11 > 5%


@pytest.fixture(scope="module")
def small_sample():
    return draw_sample(SimConfig(n=600, gamma1=0.3, seed=19))[0]


class TestBootstrapBand:
    def test_band_brackets_point_estimate(self, small_sample):
        band = bootstrap_band(
            small_sample, PipelineConfig(), B=8, level=0.90, seed=4, threads=1
        )
        assert np.all(band.lower <= band.point)
        assert np.all(band.upper >= band.point)

    def test_thread_count_does_not_change_band(self, small_sample):
        a = bootstrap_band(small_sample, PipelineConfig(), B=6, seed=5, threads=1)
        b = bootstrap_band(small_sample, PipelineConfig(), B=6, seed=5, threads=3)
        np.testing.assert_array_equal(a.lower, b.lower)
        np.testing.assert_array_equal(a.upper, b.upper)

    def test_b_below_two_rejected(self, small_sample):
        with pytest.raises(IviteError):
            bootstrap_band(small_sample, PipelineConfig(), B=1)
