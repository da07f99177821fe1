import pytest

from app.schemas import ExperimentSpec, StopRule, SystemConfig, build, parse_system
from app.utils.errors import ConfigurationError


class TestSystemConfig:
    def test_psm_fields(self) -> None:
        config = SystemConfig.psm(4, 4, "64QAM")
        assert not config.is_mdpsm
        assert (config.k, config.q1, config.q2) == (2, 6, 0)
        assert config.bits_per_use == 8
        assert config.label == "PSM (4,4,6)"

    def test_mdpsm_fields(self) -> None:
        config = SystemConfig.mdpsm(4, 4, 4, "8PSK", "16QAM", theta=8.4)
        assert config.bits_per_use == 3 + 4 + 2 * 2
        assert config.q_bar == 3.5
        assert config.label == "MD-PSM (4,4,4,3,4)"

    def test_with_theta_copies(self, mdpsm_qpsk: SystemConfig) -> None:
        rotated = mdpsm_qpsk.with_theta(15)
        assert rotated.theta == 15.0
        assert mdpsm_qpsk.theta == 30.0

    def test_configs_are_hashable(self, mdpsm_qpsk: SystemConfig) -> None:
        assert hash(mdpsm_qpsk) == hash(SystemConfig.mdpsm(4, 4, 2, "QPSK", "QPSK", theta=30.0))

    def test_receive_antennas_must_be_a_power_of_two(self) -> None:
        with pytest.raises(ConfigurationError) as info:
            SystemConfig.psm(4, 3, "QPSK")
        assert info.value.field == "n_r"

    def test_fewer_transmit_antennas(self) -> None:
        with pytest.raises(ConfigurationError) as info:
            SystemConfig.mdpsm(4, 2, 4, "QPSK", "QPSK", theta=30.0)
        assert info.value.field == "n_t2"

    def test_64qam_is_baseline_only(self) -> None:
        with pytest.raises(ConfigurationError, match="64QAM"):
            SystemConfig.mdpsm(4, 4, 4, "64QAM", "QPSK", theta=30.0)

    def test_mdpsm_needs_two_receive_antennas(self) -> None:
        with pytest.raises(ConfigurationError):
            SystemConfig.mdpsm(2, 2, 1, "QPSK", "QPSK", theta=30.0)

    def test_unknown_scheme(self) -> None:
        with pytest.raises(ConfigurationError):
            SystemConfig.psm(4, 2, "32APSK")


class TestParseSystem:
    def test_mdpsm_tuple(self) -> None:
        fields = parse_system("MD-PSM(4,4,4,2,2)", theta=33.0)
        config = SystemConfig.model_validate(fields)
        assert (config.scheme1, config.scheme2, config.theta) == ("QPSK", "QPSK", 33.0)

    def test_psm_tuple(self) -> None:
        config = SystemConfig.model_validate(parse_system("psm (12, 8, 6)"))
        assert (config.n_t1, config.n_r, config.scheme1) == (12, 8, "64QAM")

    @pytest.mark.parametrize("notation", ["PSM(4,4)", "MD-PSM(4,4,4)", "SM(4,4,2)", "PSM(a,4,2)"])
    def test_malformed(self, notation: str) -> None:
        with pytest.raises(ConfigurationError):
            parse_system(notation)


class TestStopRule:
    def test_defaults(self) -> None:
        rule = StopRule()
        assert (rule.min_bit_errors, rule.max_channel_uses) == (200, 20_000_000)

    def test_scaled(self) -> None:
        rule = StopRule(min_bit_errors=200, max_channel_uses=1_000_000, batch_size=20_000)
        small = rule.scaled(0.01)
        assert (small.min_bit_errors, small.max_channel_uses, small.batch_size) == (
            2,
            10_000,
            10_000,
        )


class TestExperimentSpec:
    def test_stochastic_kinds_need_a_seed(self) -> None:
        with pytest.raises(ConfigurationError) as info:
            build(ExperimentSpec, {"kind": "ber_run", "config": parse_system("PSM(4,2,2)")})
        assert info.value.field == "seed"

    def test_sweep_needs_pairs(self) -> None:
        with pytest.raises(ConfigurationError):
            build(ExperimentSpec, {"kind": "angle_sweep"})

    def test_ber_vs_theta_needs_mdpsm(self) -> None:
        with pytest.raises(ConfigurationError):
            build(
                ExperimentSpec,
                {
                    "kind": "ber_vs_theta",
                    "config": parse_system("PSM(4,2,2)"),
                    "thetas": [10, 20],
                    "seed": 1,
                },
            )

    def test_complexity_needs_no_seed(self) -> None:
        spec = build(
            ExperimentSpec, {"kind": "complexity_report", "configs": [parse_system("PSM(4,4,6)")]}
        )
        assert spec.seed is None

    def test_unknown_kind(self) -> None:
        with pytest.raises(ConfigurationError) as info:
            build(ExperimentSpec, {"kind": "ber_sweep", "seed": 1})
        assert info.value.field == "kind"
