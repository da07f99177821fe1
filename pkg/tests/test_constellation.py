"""Alphabets, receive sets and closed-form energy terms."""

import json
import math

import numpy as np
import pytest

from app.services import constellation as cs
from app.utils.errors import ConfigurationError, DomainError, UnsupportedClosedFormError

CLOSED_FORM_PAIRS = [
    ("BPSK", "BPSK"),
    ("BPSK", "QPSK"),
    ("QPSK", "BPSK"),
    ("QPSK", "QPSK"),
    ("BPSK", "8PSK"),
    ("8PSK", "QPSK"),
    ("8PSK", "8PSK"),
    ("BPSK", "16QAM"),
    ("QPSK", "16QAM"),
    ("8PSK", "16QAM"),
    ("16QAM", "QPSK"),
    ("16QAM", "8PSK"),
]


def _popcount(x: int) -> int:
    return bin(int(x)).count("1")


class TestAlphabets:
    def test_qpsk_points_are_exact(self) -> None:
        c = cs.make_constellation("QPSK")
        np.testing.assert_array_equal(c.points, np.array([1, 1j, -1, -1j]))

    @pytest.mark.parametrize("scheme", ["BPSK", "QPSK", "8PSK", "16QAM", "64QAM"])
    def test_unit_average_energy(self, scheme: str) -> None:
        c = cs.make_constellation(scheme)
        assert np.mean(np.abs(c.points) ** 2) == pytest.approx(1.0, abs=1e-12)

    @pytest.mark.parametrize("scheme", ["QPSK", "8PSK"])
    def test_psk_neighbours_differ_in_one_bit(self, scheme: str) -> None:
        c = cs.make_constellation(scheme)
        for k in range(c.order):
            assert _popcount(c.labels[k] ^ c.labels[(k + 1) % c.order]) == 1

    def test_16qam_nearest_neighbours_differ_in_one_bit(self) -> None:
        c = cs.make_constellation("16QAM")
        spacing = 2.0 / math.sqrt(10.0)
        dist = np.abs(c.points[:, None] - c.points[None, :])
        pairs = np.argwhere(np.isclose(dist, spacing))
        assert len(pairs) > 0
        for a, b in pairs:
            assert _popcount(c.labels[a] ^ c.labels[b]) == 1

    def test_labels_are_a_permutation(self) -> None:
        c = cs.make_constellation("16QAM")
        np.testing.assert_array_equal(np.sort(c.labels), np.arange(16))

    def test_q_mismatch_is_rejected(self) -> None:
        with pytest.raises(ConfigurationError):
            cs.make_constellation("QPSK", q=3)

    def test_unknown_scheme_is_rejected(self) -> None:
        with pytest.raises(ConfigurationError):
            cs.make_constellation("32APSK")

    @pytest.mark.parametrize("q,name", [(1, "BPSK"), (2, "QPSK"), (3, "8PSK"), (4, "16QAM")])
    def test_scheme_for_bits(self, q: int, name: str) -> None:
        assert cs.scheme_for_bits(q).value == name

    def test_scheme_for_bits_unsupported(self) -> None:
        with pytest.raises(ConfigurationError):
            cs.scheme_for_bits(5)

    def test_label_bits_inverse(self) -> None:
        c = cs.make_constellation("8PSK")
        idx = np.array([0, 3, 7, 5])
        np.testing.assert_array_equal(cs.bits_to_labels(c, cs.labels_to_bits(c, idx)), idx)

    def test_rotation_accumulates(self) -> None:
        c = cs.rotate(cs.rotate(cs.make_constellation("QPSK"), 20.0), 15.0)
        assert c.theta == pytest.approx(35.0)
        expected = np.array([1, 1j, -1, -1j]) * np.exp(1j * math.radians(35.0))
        np.testing.assert_allclose(c.points, expected, atol=1e-12)

    def test_to_json_lists_points_with_labels(self) -> None:
        rows = json.loads(cs.to_json(cs.make_constellation("QPSK")))
        assert len(rows) == 4
        assert rows[0] == [1.0, 0.0, "00"]
        assert rows[2][2] == "11"


class TestDistances:
    def test_dmin_qpsk(self) -> None:
        assert cs.dmin(cs.make_constellation("QPSK").points) == pytest.approx(1.414, abs=1e-3)

    def test_dmin_needs_two_points(self) -> None:
        with pytest.raises(DomainError):
            cs.dmin([1.0 + 0j])

    def test_qpsk_receive_set_at_30_degrees(self) -> None:
        rs = cs.receive_set_for("QPSK", "QPSK", 30.0)
        assert rs.uniqueness_ok
        assert rs.omega_d.size == rs.expected_size == 24
        assert abs(cs.dmin(rs.omega_d) - 0.515) <= 0.005

    def test_unrotated_qpsk_pair_collides(self) -> None:
        rs = cs.receive_set_for("QPSK", "QPSK", 0.0)
        assert not rs.disjoint_ok
        assert not rs.uniqueness_ok
        assert rs.omega_d.size < rs.expected_size

    def test_minkowski_order_is_k1_major(self) -> None:
        rs = cs.receive_set_for("BPSK", "QPSK", 30.0)
        pa, pb = rs.omega_a.points, rs.omega_b.points
        m2 = pb.size
        for k1 in range(pa.size):
            for k2 in range(m2):
                assert rs.omega_c[k1 * m2 + k2] == pytest.approx(pa[k1] + pb[k2])

    @pytest.mark.parametrize("phi", [10.0, 47.0, 133.0])
    def test_dmin_is_rotation_invariant(self, phi: float) -> None:
        pa = cs.make_constellation("8PSK").points
        pb = cs.make_constellation("16QAM").points * np.exp(1j * math.radians(12.0))
        turn = np.exp(1j * math.radians(phi))
        d0 = cs.dmin(cs.evaluate_receive_points(pa, pb)[1])
        d1 = cs.dmin(cs.evaluate_receive_points(pa * turn, pb * turn)[1])
        assert d1 == pytest.approx(d0, abs=1e-12)

    def test_64qam_has_no_receive_set(self) -> None:
        with pytest.raises(ConfigurationError):
            cs.receive_set_for("64QAM", "QPSK", 10.0)

    def test_distinct_points_drops_near_duplicates(self) -> None:
        pts = np.array([0.0, 1.0, 1.0 + 1e-12, 2.0])
        np.testing.assert_allclose(cs.distinct_points(pts), [0.0, 1.0, 2.0])


class TestClosedForms:
    @pytest.mark.parametrize("pair", CLOSED_FORM_PAIRS)
    def test_matches_brute_force(self, pair, rng) -> None:
        a, b = pair
        for theta in rng.uniform(0.0, 360.0, size=1000):
            terms = cs.closed_form_energy_terms(a, b, theta)
            brute = np.sort(cs.brute_force_energy_terms(cs.receive_set_for(a, b, theta)))
            np.testing.assert_allclose(cs.expand_energy_terms(terms), brute, atol=1e-12)

    def test_qpsk_rows(self) -> None:
        terms = cs.closed_form_energy_terms("QPSK", "QPSK", 30.0)
        assert [t.label for t in terms] == ["1+cos(θ)", "1-cos(θ)", "1+sin(θ)", "1-sin(θ)"]
        th = math.radians(30.0)
        values = [t.value for t in terms]
        np.testing.assert_allclose(
            values, [1 + math.cos(th), 1 - math.cos(th), 1 + math.sin(th), 1 - math.sin(th)]
        )
        assert all(t.multiplicity == 4 for t in terms)

    def test_16qam_pair_has_no_closed_form(self) -> None:
        assert not cs.has_closed_form("16QAM", "16QAM")
        with pytest.raises(UnsupportedClosedFormError):
            cs.closed_form_energy_terms("16QAM", "16QAM", 30.0)

    @pytest.mark.parametrize("pair", [("QPSK", "QPSK"), ("BPSK", "8PSK"), ("8PSK", "QPSK")])
    def test_subset_descriptors_rebuild_minkowski_sum(self, pair) -> None:
        a, b = pair
        theta = 20.0
        predicted = np.concatenate(
            [d.points() for d in cs.subset_descriptors(a, b, theta)]
        )
        actual = cs.receive_set_for(a, b, theta).omega_c
        assert predicted.size == actual.size
        gaps = np.abs(predicted[:, None] - actual[None, :])
        assert gaps.min(axis=1).max() < 1e-12
        assert gaps.min(axis=0).max() < 1e-12

    def test_16qam_subsets_cover_the_alphabet(self) -> None:
        points = np.concatenate([s.points() for s in cs.qam16_subsets()])
        qam = cs.make_constellation("16QAM").points
        gaps = np.abs(points[:, None] - qam[None, :])
        assert gaps.min(axis=1).max() < 1e-12
        assert points.size == 16


class TestSymbolProbabilities:
    def test_collision_probability(self) -> None:
        p = cs.symbol_probabilities(4, 4, 4)
        assert p.equal_index == pytest.approx(0.25)
        assert p.unequal_index == pytest.approx(0.75)
        assert p.per_symbol_c == pytest.approx(1.0 / 64)

    def test_weights_follow_receive_set_layout(self) -> None:
        rs = cs.receive_set_for("BPSK", "QPSK", 30.0)
        w = cs.symbol_weights(rs, 2)
        assert w.size == 2 + 4 + 8
        np.testing.assert_allclose(w[:2], 0.25)
        np.testing.assert_allclose(w[2:6], 0.125)
        np.testing.assert_allclose(w[6:], 1.0 / 16)

    def test_n_r_must_be_power_of_two(self) -> None:
        with pytest.raises(ConfigurationError):
            cs.symbol_probabilities(3, 4, 4)
