import math

import numpy as np
import pytest

from app.schemas import SystemConfig
from app.services import channel, link
from app.utils.errors import DomainError, FramingError


class TestBitMapping:
    def test_psm_layout(self, psm_qpsk: SystemConfig) -> None:
        # [signal | spatial]: label 11 → QPSK index 2, antenna 1
        msg = link.map_bits([1, 1, 1], psm_qpsk)
        assert (msg.k1, msg.i1) == (2, 1)
        assert msg.i2 is None

    def test_mdpsm_layout(self, mdpsm_qpsk: SystemConfig) -> None:
        # [i1 | k1 | i2 | k2] = [1 | 01 | 0 | 10]
        msg = link.map_bits([1, 0, 1, 0, 1, 0], mdpsm_qpsk)
        assert (msg.i1, msg.k1, msg.i2, msg.k2) == (1, 1, 0, 3)

    def test_wrong_block_length(self, mdpsm_qpsk: SystemConfig) -> None:
        with pytest.raises(FramingError):
            link.map_bits([1, 0, 1], mdpsm_qpsk)

    @pytest.mark.parametrize(
        "config",
        [
            SystemConfig.psm(4, 4, "16QAM"),
            SystemConfig.psm(8, 4, "64QAM"),
            SystemConfig.mdpsm(4, 4, 4, "8PSK", "16QAM", theta=8.4),
            SystemConfig.mdpsm(2, 2, 2, "BPSK", "QPSK", theta=30.0),
        ],
    )
    def test_unmap_inverts_map(self, config: SystemConfig, rng) -> None:
        bits = link.random_bits(config, 500, rng)
        msgs = link.map_bits_batch(bits, config)
        back = link.indices_to_bits(config, msgs.i1, msgs.k1, msgs.i2, msgs.k2)
        np.testing.assert_array_equal(back, bits)
        np.testing.assert_array_equal(link.unmap_message(msgs[7], config), bits[7])

    def test_collision_rate(self, rng) -> None:
        config = SystemConfig.mdpsm(4, 4, 4, "QPSK", "QPSK", theta=33.0)
        msgs = link.random_messages(config, 200_000, rng)
        assert np.mean(msgs.i1 == msgs.i2) == pytest.approx(0.25, abs=0.005)


class TestNoise:
    def test_noise_variance(self, mdpsm_qpsk: SystemConfig, psm_qpsk: SystemConfig) -> None:
        # q̄ + K = 2 + 1 for both
        assert link.noise_variance(mdpsm_qpsk, 10.0) == pytest.approx(1.0 / 30.0)
        assert link.noise_variance(psm_qpsk, 10.0) == pytest.approx(1.0 / 30.0)

    def test_mixed_orders_use_the_mean_bits(self) -> None:
        config = SystemConfig.mdpsm(4, 4, 4, "8PSK", "16QAM", theta=8.4)
        assert link.noise_variance(config, 1.0) == pytest.approx(1.0 / (3.5 + 2))

    def test_infinite_snr_is_noiseless(self, psm_qpsk: SystemConfig) -> None:
        model = link.NoiseModel.from_snr_db(psm_qpsk, math.inf)
        assert model.sigma2 == 0.0

    def test_non_positive_snr_is_rejected(self, psm_qpsk: SystemConfig) -> None:
        with pytest.raises(DomainError):
            link.noise_variance(psm_qpsk, 0.0)

    def test_awgn_power(self, rng) -> None:
        noise = link.awgn(np.zeros((50_000, 2)), 0.5, rng)
        assert np.mean(np.abs(noise) ** 2) == pytest.approx(0.5, rel=0.02)

    def test_negative_variance(self) -> None:
        with pytest.raises(DomainError):
            link.awgn(np.zeros(2), -1.0)


class TestTransmission:
    def test_psm_reception_is_the_spatial_symbol(self, psm_qpsk: SystemConfig, rng) -> None:
        chan = channel.draw_channel(4, 2, rng)
        msg = link.map_bits([0, 1, 1], psm_qpsk)
        r = link.normalize(link.transmit_psm(msg, chan, psm_qpsk), chan.beta)
        expected = np.zeros(2, dtype=complex)
        expected[msg.i1] = link.alphabets(psm_qpsk).omega_a.points[msg.k1]
        np.testing.assert_allclose(r, expected, atol=1e-9)

    def test_mdpsm_reception_superposes(self, rng) -> None:
        config = SystemConfig.mdpsm(6, 4, 4, "QPSK", "8PSK", theta=15.0)
        dual = channel.draw_dual_channel(6, 4, 4, rng)
        ab = link.alphabets(config)
        msgs = link.random_messages(config, 20, rng)
        for index in range(len(msgs)):
            msg = msgs[index]
            r = link.normalize(link.transmit_mdpsm(msg, dual, config), dual.unified_beta)
            expected = np.zeros(4, dtype=complex)
            expected[msg.i1] += ab.omega_a.points[msg.k1]
            expected[msg.i2] += ab.omega_b.points[msg.k2]
            np.testing.assert_allclose(r, expected, atol=1e-9)

    def test_batch_matches_single_use(self, mdpsm_qpsk: SystemConfig, rng) -> None:
        dual = channel.draw_dual_channel_batch(4, 4, 2, rng, 8)
        msgs = link.random_messages(mdpsm_qpsk, 8, rng)
        y = link.transmit_mdpsm_batch(msgs, dual, mdpsm_qpsk)
        np.testing.assert_allclose(
            y[5], link.transmit_mdpsm(msgs[5], dual[5], mdpsm_qpsk), atol=1e-12
        )

    def test_transmit_power_is_beta(self, psm_qpsk: SystemConfig, rng) -> None:
        batch = channel.draw_channel_batch(4, 2, rng, 16)
        msgs = link.random_messages(psm_qpsk, 16, rng)
        x = link.precoded_signal_psm(msgs, batch, psm_qpsk)
        # unit-modulus symbols: ‖x‖² = β ‖P e_i‖²
        power = np.sum(np.abs(x) ** 2, axis=1)
        column_norms = np.sum(np.abs(batch.P[np.arange(16), :, msgs.i1]) ** 2, axis=1)
        np.testing.assert_allclose(power, batch.beta * column_norms, rtol=1e-12)

    def test_average_transmit_power_is_unit(self, rng) -> None:
        config = SystemConfig.psm(4, 2, "16QAM")
        batch = channel.draw_channel_batch(4, 2, rng, 100_000)
        msgs = link.random_messages(config, 100_000, rng)
        x = link.precoded_signal_psm(msgs, batch, config)
        assert np.mean(np.sum(np.abs(x) ** 2, axis=1)) == pytest.approx(1.0, rel=0.02)

    def test_unified_beta_keeps_the_mean_power(self, mdpsm_qpsk: SystemConfig, rng) -> None:
        dual = channel.draw_dual_channel_batch(4, 4, 2, rng, 100_000)
        msgs = link.random_messages(mdpsm_qpsk, 100_000, rng)
        x1, x2 = link.precoded_signal_mdpsm(msgs, dual, mdpsm_qpsk)
        assert np.mean(dual.unified_beta) == pytest.approx(np.mean(dual.bs1.beta), rel=0.03)
        for x, own in ((x1, dual.bs1.beta), (x2, dual.bs2.beta)):
            power = np.sum(np.abs(x) ** 2, axis=1) * own / dual.unified_beta
            assert np.mean(power) == pytest.approx(1.0, rel=0.02)
