import numpy as np
import pytest
from scipy import stats

from qrfselect.scoring import StepCDF
from qrfselect.verification import (
    VerificationError,
    pit_histogram,
    quantile_reliability,
    randomized_pit,
    reliability_diagram,
)


class TestPitHistogram:
    def test_grid_values_fill_lower_bins(self):
        values = np.array([0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9])
        diagram = pit_histogram(values, bins=10)
        assert diagram.counts.tolist() == [1, 1, 1, 1, 1, 1, 1, 1, 1, 0]

    def test_uniform_draws_balanced(self):
        rng = np.random.default_rng(0)
        diagram = pit_histogram(rng.uniform(size=10_000), bins=10)
        assert diagram.counts.sum() == 10_000
        assert np.all(np.abs(diagram.counts - 1000) <= 120)

    def test_point_mass(self):
        diagram = pit_histogram(np.full(7, 0.5), bins=10)
        assert diagram.counts.sum() == 7
        assert diagram.counts.max() == 7

    def test_boundaries_kept(self):
        diagram = pit_histogram(np.array([0.0, 1.0]), bins=4)
        assert diagram.counts.sum() == 2
        assert diagram.counts[0] == 1 and diagram.counts[-1] == 1

    def test_out_of_range_rejected(self):
        with pytest.raises(VerificationError):
            pit_histogram(np.array([1.2]), bins=10)

    def test_true_cdf_is_uniform_chi_square(self):
        rng = np.random.default_rng(1)
        y = rng.standard_normal(10_000)
        pit = stats.norm.cdf(y)
        counts = pit_histogram(pit, bins=10).counts
        chi2 = float(np.sum((counts - 1000.0) ** 2 / 1000.0))
        assert chi2 < stats.chi2.ppf(0.999, df=9)


class TestReliabilityDiagram:
    def test_calibrated_probabilities(self):
        rng = np.random.default_rng(2)
        p = rng.uniform(size=10_000)
        outcomes = (rng.uniform(size=10_000) < p).astype(float)
        diagram = reliability_diagram(p, outcomes, bins=10)
        assert diagram.counts.sum() == 10_000
        gap = np.abs(diagram.mean_forecast - diagram.mean_outcome)
        assert gap.max() < 0.05

    def test_degenerate_single_bin(self):
        diagram = reliability_diagram(np.zeros(5), np.zeros(5), bins=1)
        assert diagram.counts.tolist() == [5]
        assert diagram.mean_forecast[0] == 0.0
        assert diagram.mean_outcome[0] == 0.0

    def test_maximal_miscalibration(self):
        diagram = reliability_diagram(np.ones(4), np.zeros(4), bins=1)
        assert diagram.mean_forecast[0] == 1.0 and diagram.mean_outcome[0] == 0.0

    def test_length_mismatch(self):
        with pytest.raises(VerificationError):
            reliability_diagram(np.zeros(3), np.zeros(4))


class TestQuantileReliability:
    def test_deterministic_perfect_forecast(self):
        rng = np.random.default_rng(3)
        q = np.sort(rng.standard_normal(1000))
        diagram = quantile_reliability(q, q, tau=0.5, bins=10)
        # per-bin outcome quantile tracks the mean forecast within bin width
        for lo_mean, out_q, count in zip(
            diagram.mean_forecast, diagram.mean_outcome, diagram.counts
        ):
            assert count == 100
            assert abs(lo_mean - out_q) < 0.5

    def test_true_conditional_quantiles_on_identity(self):
        # bounded heteroskedastic scale keeps within-bin forecast spread and
        # per-bin quantile noise well inside the band
        rng = np.random.default_rng(4)
        n = 10_000
        tau = 0.75
        x = rng.standard_normal(n)
        scale = 0.3 * (1.0 + 0.5 * np.tanh(x))
        y = scale * rng.standard_normal(n)
        q_true = scale * stats.norm.ppf(tau)
        diagram = quantile_reliability(q_true, y, tau=tau, bins=10)
        gap = np.abs(diagram.mean_forecast - diagram.mean_outcome)
        assert gap.max() < 0.1

    def test_single_bin_reduces_to_global_quantile(self):
        rng = np.random.default_rng(5)
        q = rng.standard_normal(200)
        y = rng.standard_normal(200)
        diagram = quantile_reliability(q, y, tau=0.25, bins=1)
        ys = np.sort(y)
        expected = ys[int(np.ceil(0.25 * 200)) - 1]
        assert diagram.mean_outcome[0] == expected
        assert diagram.mean_forecast[0] == pytest.approx(q.mean())

    def test_count_conservation(self):
        rng = np.random.default_rng(6)
        diagram = quantile_reliability(
            rng.standard_normal(137), rng.standard_normal(137), tau=0.5, bins=7
        )
        assert diagram.counts.sum() == 137


class TestRandomizedPit:
    def test_uniform_under_calibration(self):
        rng = np.random.default_rng(7)
        atoms = np.sort(rng.standard_normal(20))
        cdf = StepCDF.from_sample(atoms)
        draws = rng.choice(atoms, size=10_000, replace=True)
        pit = np.array([randomized_pit(cdf, y, u) for y, u in zip(draws, rng.uniform(size=10_000))])
        ks = stats.kstest(pit, "uniform").statistic
        assert ks < 0.02

    def test_spans_the_jump(self):
        cdf = StepCDF.from_sample([0.0, 1.0])
        assert randomized_pit(cdf, 0.0, 0.0) == 0.0
        assert randomized_pit(cdf, 0.0, 1.0) == 0.5
        assert randomized_pit(cdf, 0.5, 0.3) == 0.5

    def test_csv_round_trip(self, tmp_path):
        diagram = pit_histogram(np.array([0.1, 0.6, 0.6]), bins=5)
        path = tmp_path / "pit.csv"
        diagram.write_csv(path)
        lines = path.read_text().strip().splitlines()
        assert lines[0] == "bin,lo,hi,count"
        assert len(lines) == 6
