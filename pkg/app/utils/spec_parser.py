"""Flat `key = value` experiment files.

One key per line, `#` starts a comment, lists are comma separated::

    kind = ber_run
    system = MD-PSM(4,4,4,2,2)
    theta = 30
    snr_db = 0, 5, 10, 15, 20
    seed = 7
    baseline = PSM(4,4,6)

Individual system keys (mode, n_t1, n_t2, n_r, scheme1, scheme2, q1, q2)
override whatever `system` sets.
"""

from pathlib import Path
from typing import Dict, Optional, Tuple

from app.schemas import ExperimentSpec, build, parse_system
from app.services.constellation import scheme_for_bits
from app.utils.errors import ConfigurationError

SYSTEM_KEYS = {"mode", "n_t1", "n_t2", "n_r", "scheme1", "scheme2", "theta"}
STOP_KEYS = {"min_bit_errors", "max_channel_uses", "batch_size"}
LIST_KEYS = {"snr_db", "thetas", "pairs", "configs"}
SCALAR_KEYS = {
    "kind",
    "system",
    "baseline",
    "q1",
    "q2",
    "n_t",
    "theta_start",
    "theta_stop",
    "theta_step",
    "block_length",
    "detector",
    "target_ber",
    "draws",
    "seed",
    "output",
}
KNOWN_KEYS = SYSTEM_KEYS | STOP_KEYS | LIST_KEYS | SCALAR_KEYS


def parse_lines(text: str) -> Tuple[Dict[str, str], Dict[str, int]]:
    """Raw values and the 1-based line each key was defined on."""
    values: Dict[str, str] = {}
    lines: Dict[str, int] = {}
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"expected 'key = value', got {raw.strip()!r}", line=number)
        key, value = (part.strip() for part in line.split("=", 1))
        key = key.lower()
        if key not in KNOWN_KEYS:
            raise ConfigurationError(f"unknown key {key!r}", field=key, line=number)
        if key in values:
            raise ConfigurationError(
                f"duplicate key (first set on line {lines[key]})", field=key, line=number
            )
        if not value:
            raise ConfigurationError("empty value", field=key, line=number)
        values[key] = value
        lines[key] = number
    return values, lines


def _split(value: str, sep: str = ","):
    return [item.strip() for item in value.split(sep) if item.strip()]


def _split_systems(value: str):
    """Comma lists whose items themselves contain commas: split on ';'."""
    return _split(value, ";")


def _pair(item: str, line: Optional[int]):
    parts = [p.strip() for p in item.replace("/", "-").split("-") if p.strip()]
    if len(parts) != 2:
        raise ConfigurationError(f"scheme pair {item!r} is not A-B", field="pairs", line=line)
    return parts[0], parts[1]


def to_payload(values: Dict[str, str], lines: Dict[str, int]) -> dict:
    """Shape raw values into ExperimentSpec fields."""
    payload: dict = {}
    system: dict = {}
    if "system" in values:
        system.update(_wrap(parse_system, values["system"], lines.get("system")))
    for key in SYSTEM_KEYS:
        if key in values:
            system[key] = values[key]
    if "n_t" in values:
        system["n_t1"] = values["n_t"]
    for key in ("q1", "q2"):
        if key in values:
            scheme_key = "scheme1" if key == "q1" else "scheme2"
            bits = _wrap(int, values[key], lines.get(key), key)
            system[scheme_key] = _wrap(scheme_for_bits, bits, lines.get(key), key).value
    if system:
        payload["config"] = system

    if "baseline" in values:
        payload["baseline"] = _wrap(parse_system, values["baseline"], lines.get("baseline"))
    if "configs" in values:
        payload["configs"] = [
            _wrap(parse_system, item, lines.get("configs"))
            for item in _split_systems(values["configs"])
        ]
    if "pairs" in values:
        payload["pairs"] = [_pair(item, lines.get("pairs")) for item in _split(values["pairs"])]
    for key in ("snr_db", "thetas"):
        if key in values:
            payload[key] = _split(values[key])
    stop = {key: values[key] for key in STOP_KEYS if key in values}
    if stop:
        payload["stop_rule"] = stop
    for key in SCALAR_KEYS - {"system", "baseline", "q1", "q2", "n_t"}:
        if key in values:
            payload[key] = values[key]
    if "n_r" in values:
        payload["n_r"] = values["n_r"]
    return payload


def _wrap(func, value, line: Optional[int], field: Optional[str] = None):
    try:
        return func(value)
    except ConfigurationError as exc:
        raise ConfigurationError(str(exc), field=field or exc.field, line=line) from None
    except ValueError as exc:
        raise ConfigurationError(str(exc), field=field, line=line) from None


def parse_spec_text(text: str) -> ExperimentSpec:
    values, lines = parse_lines(text)
    if "kind" not in values:
        raise ConfigurationError("missing required key", field="kind")
    payload = to_payload(values, lines)
    if values["kind"] == "angle_sweep":
        # sweeps only need scheme pairs; n_r feeds the weighted distance
        system = payload.pop("config", {})
        if "pairs" not in payload and "scheme1" in system and "scheme2" in system:
            payload["pairs"] = [(system["scheme1"], system["scheme2"])]
    if "system" in lines:
        # fields filled from the tuple report the tuple's line
        for key in SYSTEM_KEYS:
            lines.setdefault(key, lines["system"])
    return build(ExperimentSpec, payload, lines)


def parse_spec_file(path) -> Tuple[ExperimentSpec, str]:
    """Validated spec plus the raw text (hashed into every artifact)."""
    text = Path(path).read_text(encoding="utf-8")
    return parse_spec_text(text), text
