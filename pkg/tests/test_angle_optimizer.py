import math

import numpy as np
import pytest

from app.schemas import StopRule, SystemConfig
from app.services import angle_optimizer as ao
from app.services.constellation import make_constellation, receive_set_for, symbol_weights
from app.utils.errors import ConfigurationError, EstimationError, UnsupportedClosedFormError


CANDIDATES_3DEG = [float(t) for t in range(0, 46, 3)]


def _c(scheme: str):
    return make_constellation(scheme)


class TestThetaGrid:
    def test_inclusive_grid(self) -> None:
        np.testing.assert_allclose(ao.theta_grid(0.0, 1.0, 0.25), [0, 0.25, 0.5, 0.75, 1.0])

    def test_tenth_degree_grid_hits_round_values(self) -> None:
        grid = ao.theta_grid(0.0, 45.0, 0.1)
        assert grid.size == 451
        assert 30.0 in grid

    @pytest.mark.parametrize(
        "start,stop,step", [(0.0, 10.0, 0.0), (10.0, 5.0, 1.0), (0.0, 120.0, 1.0)]
    )
    def test_invalid_grids(self, start: float, stop: float, step: float) -> None:
        with pytest.raises(ConfigurationError):
            ao.theta_grid(start, stop, step)


class TestMaxMinSweep:
    def test_qpsk_pair(self) -> None:
        result = ao.sweep(_c("QPSK"), _c("QPSK"))
        assert result.optimal_thetas == [30.0]
        assert result.best_dmin == pytest.approx(0.515, abs=0.005)
        assert result.label == "QPSK-QPSK"

    def test_8psk_pair_is_mirrored_about_half_period(self) -> None:
        result = ao.sweep(_c("8PSK"), _c("8PSK"))
        np.testing.assert_allclose(result.optimal_thetas, [17.3, 27.7], atol=0.1)

    def test_bpsk_pair_sweeps_to_90_degrees(self) -> None:
        result = ao.sweep(_c("BPSK"), _c("BPSK"))
        assert result.thetas[-1] == 90.0
        assert all(60.0 <= t <= 90.0 for t in result.optimal_thetas)

    @pytest.mark.parametrize(
        "a,b,expected",
        [
            ("BPSK", "QPSK", [30.0]),
            ("BPSK", "8PSK", [15.0, 30.0]),
            ("QPSK", "8PSK", [15.0, 30.0]),
            ("8PSK", "16QAM", [8.4, 36.6]),
        ],
    )
    def test_mixed_pair_optima(self, a: str, b: str, expected) -> None:
        found = ao.sweep(_c(a), _c(b)).optimal_thetas
        assert all(any(abs(e - t) <= 0.11 for t in found) for e in expected)
        assert all(any(abs(e - t) <= 0.11 for e in expected) for t in found)

    @pytest.mark.parametrize(
        "a,b,expected,tol",
        [
            ("BPSK", "16QAM", 32.1, 0.1),
            ("QPSK", "16QAM", 32.1, 0.1),
            ("16QAM", "16QAM", 30.0, 0.5),
        ],
    )
    def test_qam_pair_optima(self, a: str, b: str, expected: float, tol: float) -> None:
        result = ao.sweep(_c(a), _c(b))
        assert result.optima_within(expected - tol, expected + tol)

    @pytest.mark.parametrize(
        "a,b", [("QPSK", "QPSK"), ("8PSK", "8PSK"), ("BPSK", "QPSK"), ("8PSK", "16QAM")]
    )
    def test_curve_is_mirrored_about_45_degrees(self, a: str, b: str) -> None:
        result = ao.sweep(_c(a), _c(b), 0.0, 90.0, 0.5)
        np.testing.assert_allclose(result.dmin_values, result.dmin_values[::-1], atol=1e-9)

    def test_collisions_score_zero(self) -> None:
        result = ao.sweep(_c("QPSK"), _c("QPSK"), 0.0, 10.0, 1.0)
        assert not result.uniqueness_ok[0]
        assert result.dmin_values[0] == 0.0
        assert result.uniqueness_ok[1:].all()

    def test_union_distance_peaks_at_45_degrees(self) -> None:
        result = ao.sweep(_c("QPSK"), _c("QPSK"), 0.0, 45.0, 1.0)
        assert result.union_optimal_thetas == [45.0]
        assert result.dmin_union_values[-1] == pytest.approx(2 * math.sin(math.radians(22.5)))

    def test_raw_points_are_accepted(self) -> None:
        points = _c("QPSK").points
        result = ao.sweep(points, points, 25.0, 35.0, 5.0)
        assert result.label == "4-point-4-point"
        assert result.optimal_thetas == [30.0]

    def test_weighted_distance_column(self) -> None:
        result = ao.sweep(_c("QPSK"), _c("QPSK"), 0.0, 45.0, 15.0, n_r=4)
        frame = result.to_frame()
        assert "avg_nn_distance" in frame.columns
        assert frame["avg_nn_distance"].iloc[0] == 0.0
        assert (frame["avg_nn_distance"].iloc[1:] > 0).all()

    def test_parallel_sweep_matches_serial(self) -> None:
        serial = ao.sweep(_c("BPSK"), _c("8PSK"), 0.0, 45.0, 0.5)
        parallel = ao.sweep(_c("BPSK"), _c("8PSK"), 0.0, 45.0, 0.5, jobs=2)
        np.testing.assert_array_equal(serial.dmin_values, parallel.dmin_values)

    def test_default_stop(self) -> None:
        assert ao.default_stop(_c("BPSK"), _c("BPSK")) == 90.0
        assert ao.default_stop(_c("BPSK"), _c("QPSK")) == 45.0

    def test_sweep_csv(self, tmp_path) -> None:
        result = ao.sweep(_c("QPSK"), _c("QPSK"), 0.0, 45.0, 15.0)
        path = tmp_path / "sweep.csv"
        ao.write_sweep_csv(result, path, {"seed": 1})
        text = path.read_text()
        assert "theta_deg" in text
        assert text.count("\n") >= 4


class TestWeightedDistance:
    def test_ambiguous_angle(self) -> None:
        pts = _c("QPSK").points
        assert ao.weighted_distance(pts, pts, 0.0, 4) == 0.0

    def test_positive_when_unique(self) -> None:
        pts = _c("QPSK").points
        assert ao.weighted_distance(pts, pts, 30.0, 4) > 0.0

    def test_weights_follow_symbol_probabilities(self) -> None:
        rs = receive_set_for("QPSK", "QPSK", 30.0)
        points = np.concatenate([rs.omega_a.points, rs.omega_b.points, rs.omega_c])
        dist = np.abs(points[:, None] - points[None, :])
        np.fill_diagonal(dist, np.inf)
        weights = symbol_weights(rs, 4)
        expected = np.sum(weights * dist.min(axis=1)) / weights.sum()
        pts = _c("QPSK").points
        assert ao.weighted_distance(pts, pts, 30.0, 4) == pytest.approx(expected)
        column = ao.sweep(pts, pts, 30.0, 30.0, 1.0, n_r=4).avg_nn_distance
        assert column[0] == pytest.approx(expected)


class TestOptimumRange:
    def test_qpsk_range(self) -> None:
        lower, upper = ao.expected_optimum_range("QPSK")
        assert lower == pytest.approx(30.0, abs=0.05)
        assert upper == pytest.approx(45.0, abs=0.05)

    def test_16psk_range(self) -> None:
        lower, upper = ao.expected_optimum_range(16)
        assert lower == pytest.approx(9.7, abs=0.1)
        assert upper == pytest.approx(11.25, abs=1e-9)

    def test_qam_has_no_range(self) -> None:
        with pytest.raises(UnsupportedClosedFormError):
            ao.expected_optimum_range("16QAM")


class TestBerRefine:
    def test_ambiguous_candidates_are_skipped(self) -> None:
        config = SystemConfig.mdpsm(2, 2, 2, "QPSK", "QPSK")
        rule = StopRule(min_bit_errors=20, max_channel_uses=10_000, batch_size=1_000)
        result = ao.ber_refine(config, [30.0, 0.0], snr_db=10.0, stop_rule=rule, seed=5)
        assert result.theta == 30.0
        assert result.table["theta_deg"].tolist() == [0.0, 30.0]
        assert math.isnan(result.table["ber"].iloc[0])
        assert result.table["ber"].iloc[1] > 0.0

    def test_every_candidate_ambiguous(self) -> None:
        config = SystemConfig.mdpsm(2, 2, 2, "QPSK", "QPSK")
        rule = StopRule(min_bit_errors=10, max_channel_uses=10_000, batch_size=500)
        with pytest.raises(EstimationError):
            ao.ber_refine(config, [0.0, 90.0], snr_db=10.0, stop_rule=rule)

    def test_pilot_needs_a_unique_candidate(self) -> None:
        config = SystemConfig.mdpsm(2, 2, 2, "QPSK", "QPSK")
        with pytest.raises(EstimationError):
            ao.ber_refine(config, [0.0])

    def test_no_candidates(self) -> None:
        with pytest.raises(ConfigurationError):
            ao.ber_refine(SystemConfig.mdpsm(2, 2, 2, "QPSK", "QPSK"), [])

    def test_too_few_channel_uses_per_candidate(self) -> None:
        config = SystemConfig.mdpsm(2, 2, 2, "QPSK", "QPSK")
        rule = StopRule(min_bit_errors=20, max_channel_uses=9_999, batch_size=1_000)
        with pytest.raises(ConfigurationError) as info:
            ao.ber_refine(config, [30.0], snr_db=10.0, stop_rule=rule)
        assert info.value.field == "max_channel_uses"

    @pytest.mark.slow
    def test_qpsk_two_receive_antennas_prefers_30_degrees(self) -> None:
        config = SystemConfig.mdpsm(2, 2, 2, "QPSK", "QPSK")
        rule = StopRule(min_bit_errors=2_000, max_channel_uses=2_000_000, batch_size=20_000)
        result = ao.ber_refine(config, CANDIDATES_3DEG, stop_rule=rule, seed=31, jobs=2)
        assert result.theta == pytest.approx(30.0, abs=3.0)
        lower, upper = ao.expected_optimum_range("QPSK")
        # within one candidate step of the max-min to large-n_R interval
        assert lower - 3.0 <= result.theta <= upper

    @pytest.mark.slow
    def test_16qam_two_receive_antennas_prefers_15_degrees(self) -> None:
        config = SystemConfig.mdpsm(2, 2, 2, "16QAM", "16QAM")
        rule = StopRule(min_bit_errors=2_000, max_channel_uses=2_000_000, batch_size=20_000)
        result = ao.ber_refine(config, CANDIDATES_3DEG, stop_rule=rule, seed=33, jobs=2)
        assert result.theta == pytest.approx(15.0, abs=3.0)
