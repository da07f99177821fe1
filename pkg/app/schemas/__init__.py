import re
from typing import List, Literal, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from app.services.constellation import Scheme, scheme_for_bits
from app.utils.bits import is_power_of_two, log2_int
from app.utils.errors import ConfigurationError
from config import get_settings


# System Schemas
class SystemConfig(BaseModel):
    """One PSM or MD-PSM link set-up.

    PSM uses n_t1/scheme1 only. Tuples follow the usual legend notation:
    PSM (n_T, n_R, q) and MD-PSM (n_T1, n_T2, n_R, q1, q2).
    """

    model_config = ConfigDict(frozen=True)

    mode: Literal["psm", "mdpsm"] = "mdpsm"
    n_t1: int = Field(..., ge=1)
    n_t2: Optional[int] = Field(None, ge=1)
    n_r: int = Field(..., ge=1)
    scheme1: str
    scheme2: Optional[str] = None
    # degrees, applied to the second BS alphabet
    theta: float = 0.0

    @model_validator(mode="after")
    def check_layout(self) -> "SystemConfig":
        if not is_power_of_two(self.n_r):
            raise ConfigurationError(f"n_R must be a power of two, got {self.n_r}", field="n_r")
        s1 = Scheme.parse(self.scheme1)
        if self.n_t1 < self.n_r:
            raise ConfigurationError(
                f"n_T1={self.n_t1} is smaller than n_R={self.n_r}", field="n_t1"
            )
        if self.mode == "psm":
            return self
        if self.n_t2 is None:
            raise ConfigurationError("MD-PSM needs n_t2", field="n_t2")
        if self.scheme2 is None:
            raise ConfigurationError("MD-PSM needs scheme2", field="scheme2")
        s2 = Scheme.parse(self.scheme2)
        if self.n_t2 < self.n_r:
            raise ConfigurationError(
                f"n_T2={self.n_t2} is smaller than n_R={self.n_r}", field="n_t2"
            )
        if self.n_r < 2:
            raise ConfigurationError("MD-PSM needs n_R >= 2", field="n_r")
        if s1.baseline_only or s2.baseline_only:
            raise ConfigurationError("64QAM is only available for PSM baselines", field="scheme1")
        return self

    @property
    def is_mdpsm(self) -> bool:
        return self.mode == "mdpsm"

    @property
    def k(self) -> int:
        return log2_int(self.n_r)

    @property
    def q1(self) -> int:
        return Scheme.parse(self.scheme1).bits

    @property
    def q2(self) -> int:
        return Scheme.parse(self.scheme2).bits if self.is_mdpsm else 0

    @property
    def q_bar(self) -> float:
        return (self.q1 + self.q2) / 2.0 if self.is_mdpsm else float(self.q1)

    @property
    def bits_per_use(self) -> int:
        if self.is_mdpsm:
            return self.q1 + self.q2 + 2 * self.k
        return self.q1 + self.k

    @property
    def label(self) -> str:
        if self.is_mdpsm:
            return f"MD-PSM ({self.n_t1},{self.n_t2},{self.n_r},{self.q1},{self.q2})"
        return f"PSM ({self.n_t1},{self.n_r},{self.q1})"

    def with_theta(self, theta: float) -> "SystemConfig":
        return self.model_copy(update={"theta": float(theta)})

    @classmethod
    def psm(cls, n_t: int, n_r: int, scheme: str) -> "SystemConfig":
        return build(cls, {"mode": "psm", "n_t1": n_t, "n_r": n_r, "scheme1": scheme})

    @classmethod
    def mdpsm(
        cls, n_t1: int, n_t2: int, n_r: int, scheme1: str, scheme2: str, theta: float = 0.0
    ) -> "SystemConfig":
        return build(
            cls,
            {
                "mode": "mdpsm",
                "n_t1": n_t1,
                "n_t2": n_t2,
                "n_r": n_r,
                "scheme1": scheme1,
                "scheme2": scheme2,
                "theta": theta,
            },
        )


_TUPLE_RE = re.compile(r"^\s*(MD-?PSM|PSM)\s*\(([^)]*)\)\s*$", re.IGNORECASE)


def parse_system(notation: str, theta: float = 0.0) -> dict:
    """Turn "PSM(4,4,6)" / "MD-PSM(4,4,4,2,2)" into SystemConfig fields."""
    match = _TUPLE_RE.match(notation)
    if not match:
        raise ConfigurationError(f"cannot parse system {notation!r}", field="system")
    try:
        numbers = [int(part) for part in match.group(2).split(",")]
    except ValueError:
        raise ConfigurationError(f"non-integer entry in {notation!r}", field="system") from None
    is_md = match.group(1).upper().startswith("MD")
    if is_md and len(numbers) == 5:
        n_t1, n_t2, n_r, q1, q2 = numbers
        return {
            "mode": "mdpsm",
            "n_t1": n_t1,
            "n_t2": n_t2,
            "n_r": n_r,
            "scheme1": scheme_for_bits(q1).value,
            "scheme2": scheme_for_bits(q2).value,
            "theta": theta,
        }
    if not is_md and len(numbers) == 3:
        n_t, n_r, q = numbers
        return {"mode": "psm", "n_t1": n_t, "n_r": n_r, "scheme1": scheme_for_bits(q).value}
    raise ConfigurationError(
        f"{notation!r}: PSM takes 3 entries and MD-PSM 5", field="system"
    )


# Monte-Carlo Schemas
class StopRule(BaseModel):
    model_config = ConfigDict(frozen=True)

    # defaults come from MDPSM_MIN_BIT_ERRORS etc.
    min_bit_errors: int = Field(default_factory=lambda: get_settings().min_bit_errors, ge=1)
    max_channel_uses: int = Field(
        default_factory=lambda: get_settings().max_channel_uses, ge=1
    )
    batch_size: int = Field(default_factory=lambda: get_settings().batch_size, ge=1)

    def scaled(self, factor: float) -> "StopRule":
        return StopRule(
            min_bit_errors=max(1, int(self.min_bit_errors * factor)),
            max_channel_uses=max(1, int(self.max_channel_uses * factor)),
            batch_size=max(1, min(self.batch_size, int(self.max_channel_uses * factor))),
        )


# Experiment Schemas
ExperimentKind = Literal[
    "angle_sweep", "ber_run", "ber_vs_theta", "complexity_report", "channel_stats"
]

STOCHASTIC_KINDS = {"ber_run", "ber_vs_theta", "channel_stats"}


class ExperimentSpec(BaseModel):
    kind: ExperimentKind
    config: Optional[SystemConfig] = None
    baseline: Optional[SystemConfig] = None
    configs: List[SystemConfig] = Field(default_factory=list)
    pairs: List[Tuple[str, str]] = Field(default_factory=list)
    n_r: Optional[int] = None
    theta_start: float = Field(0.0, ge=0.0, le=90.0)
    theta_stop: Optional[float] = Field(None, ge=0.0, le=90.0)
    theta_step: float = Field(0.1, gt=0.0)
    thetas: List[float] = Field(default_factory=list)
    snr_db: List[float] = Field(default_factory=list)
    stop_rule: StopRule = Field(default_factory=StopRule)
    block_length: int = Field(1, ge=1)
    detector: Literal["fast", "joint"] = "fast"
    target_ber: float = Field(1e-4, gt=0.0, lt=1.0)
    draws: int = Field(100_000, ge=1)
    seed: Optional[int] = None
    output: Optional[str] = None

    @model_validator(mode="after")
    def check_required(self) -> "ExperimentSpec":
        if self.kind in STOCHASTIC_KINDS and self.seed is None:
            raise ConfigurationError(f"{self.kind} needs a seed", field="seed")
        if self.kind == "angle_sweep" and not self.pairs:
            raise ConfigurationError("angle_sweep needs at least one scheme pair", field="pairs")
        if self.kind in ("ber_run", "ber_vs_theta", "channel_stats") and self.config is None:
            raise ConfigurationError(f"{self.kind} needs a system", field="system")
        if self.kind == "ber_vs_theta":
            if not self.config.is_mdpsm:
                raise ConfigurationError("ber_vs_theta needs an MD-PSM system", field="mode")
            if not self.thetas:
                raise ConfigurationError("ber_vs_theta needs candidate thetas", field="thetas")
        if self.kind == "complexity_report" and not (self.configs or self.config):
            raise ConfigurationError("complexity_report needs configs", field="configs")
        return self


def build(model, data: dict, lines: Optional[dict] = None):
    """Validate `data` into `model`, re-raising failures as ConfigurationError."""
    try:
        return model.model_validate(data)
    except ValidationError as exc:
        first = exc.errors()[0]
        cause = (first.get("ctx") or {}).get("error")
        if isinstance(cause, ConfigurationError):
            field = cause.field
            message = str(cause)
        else:
            field = str(first["loc"][-1]) if first["loc"] else None
            message = first["msg"]
        line = (lines or {}).get(field)
        raise ConfigurationError(message, field=field, line=line) from None
