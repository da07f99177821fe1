"""
Link Service
============

Bits → message → precoded transmission → noisy reception, for both PSM and
MD-PSM. Indices are 0-based throughout.

Bit layout per channel use
--------------------------
    PSM      [ q signal | K spatial ]
    MD-PSM   [ K spatial₁ | q1 signal₁ | K spatial₂ | q2 signal₂ ]

Spatial bits select the receive antenna in natural binary (MSB first);
signal bits are the Gray label of the symbol.

Transmission
------------
    PSM      y = √β H P e_i s_k + n                      = √β e_i s_k + n
    MD-PSM   y = √β (H1 P1 e_i1 s_k1 + H2 P2 e_i2 s'_k2) + n,  β = (β1+β2)/2
    r = y / √β

Noise is CN(0, σ²) per receive antenna with
    σ² = 1 / ((q̄ + K) γ_b)   (q̄ = (q1+q2)/2 for MD-PSM, q for PSM)
"""

import logging
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional, Tuple

import numpy as np

from app.schemas import SystemConfig
from app.services.channel import ChannelBatch, ChannelRealization, DualChannel, DualChannelBatch
from app.services.constellation import (
    Constellation,
    ReceiveSet,
    RotatedConstellation,
    build_receive_set,
    make_constellation,
    rotate,
)
from app.utils import rng as rng_streams
from app.utils.bits import bits_to_int, int_to_bits
from app.utils.errors import DomainError, FramingError

logger = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# Data containers
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class TransmitMessage:
    i1: int
    k1: int
    bits: np.ndarray
    i2: Optional[int] = None
    k2: Optional[int] = None


@dataclass(frozen=True, eq=False)
class MessageBatch:
    i1: np.ndarray
    k1: np.ndarray
    bits: np.ndarray
    i2: Optional[np.ndarray] = None
    k2: Optional[np.ndarray] = None

    def __len__(self) -> int:
        return self.i1.shape[0]

    def __getitem__(self, index: int) -> TransmitMessage:
        return TransmitMessage(
            i1=int(self.i1[index]),
            k1=int(self.k1[index]),
            bits=self.bits[index],
            i2=None if self.i2 is None else int(self.i2[index]),
            k2=None if self.k2 is None else int(self.k2[index]),
        )


@dataclass(frozen=True)
class NoiseModel:
    gamma_b: float
    sigma2: float

    @classmethod
    def from_snr_db(cls, config: SystemConfig, snr_db: float) -> "NoiseModel":
        gamma_b = db_to_linear(snr_db)
        return cls(gamma_b=gamma_b, sigma2=noise_variance(config, gamma_b))


@dataclass(frozen=True, eq=False)
class Alphabets:
    omega_a: Constellation
    omega_b: Optional[RotatedConstellation]
    receive_set: Optional[ReceiveSet]


@lru_cache(maxsize=64)
def _alphabets(scheme1: str, scheme2: Optional[str], theta: float) -> Alphabets:
    omega_a = make_constellation(scheme1)
    if scheme2 is None:
        return Alphabets(omega_a=omega_a, omega_b=None, receive_set=None)
    omega_b = rotate(make_constellation(scheme2), theta)
    return Alphabets(
        omega_a=omega_a, omega_b=omega_b, receive_set=build_receive_set(omega_a, omega_b)
    )


def alphabets(config: SystemConfig) -> Alphabets:
    if config.is_mdpsm:
        return _alphabets(config.scheme1, config.scheme2, float(config.theta))
    return _alphabets(config.scheme1, None, 0.0)


# ---------------------------------------------------------------------------
# Bit mapping
# ---------------------------------------------------------------------------


def _fields(config: SystemConfig):
    """(name, width) of each bit field in transmission order."""
    if config.is_mdpsm:
        return [("i1", config.k), ("k1", config.q1), ("i2", config.k), ("k2", config.q2)]
    return [("k1", config.q1), ("i1", config.k)]


def map_bits_batch(bits, config: SystemConfig) -> MessageBatch:
    bits = np.atleast_2d(np.asarray(bits, dtype=np.uint8))
    m = config.bits_per_use
    if bits.shape[-1] != m:
        raise FramingError(f"{config.label} consumes {m} bits per use, got {bits.shape[-1]}")
    ab = alphabets(config)
    values = {}
    offset = 0
    for name, width in _fields(config):
        values[name] = bits_to_int(bits[:, offset : offset + width])
        offset += width
    k1 = ab.omega_a.index_of_label[values["k1"]]
    if not config.is_mdpsm:
        return MessageBatch(i1=values["i1"], k1=k1, bits=bits)
    k2 = ab.omega_b.index_of_label[values["k2"]]
    return MessageBatch(i1=values["i1"], k1=k1, i2=values["i2"], k2=k2, bits=bits)


def map_bits(bits, config: SystemConfig) -> TransmitMessage:
    bits = np.asarray(bits, dtype=np.uint8)
    if bits.ndim != 1:
        raise FramingError("map_bits takes one block; use map_bits_batch for many")
    return map_bits_batch(bits[None, :], config)[0]


def indices_to_bits(config: SystemConfig, i1, k1, i2=None, k2=None) -> np.ndarray:
    """Inverse of map_bits_batch on index arrays."""
    ab = alphabets(config)
    label = {"k1": ab.omega_a.labels[np.asarray(k1)], "i1": np.asarray(i1)}
    if config.is_mdpsm:
        label["k2"] = ab.omega_b.labels[np.asarray(k2)]
        label["i2"] = np.asarray(i2)
    return np.concatenate(
        [int_to_bits(label[name], width) for name, width in _fields(config)], axis=-1
    )


def unmap_message(msg: TransmitMessage, config: SystemConfig) -> np.ndarray:
    return indices_to_bits(config, msg.i1, msg.k1, msg.i2, msg.k2)


def random_bits(config: SystemConfig, size: int, rng: np.random.Generator) -> np.ndarray:
    return rng.integers(0, 2, size=(size, config.bits_per_use), dtype=np.uint8)


def random_messages(config: SystemConfig, size: int, rng: np.random.Generator) -> MessageBatch:
    return map_bits_batch(random_bits(config, size, rng), config)


# ---------------------------------------------------------------------------
# Noise
# ---------------------------------------------------------------------------


def db_to_linear(snr_db: float) -> float:
    return math.inf if snr_db == math.inf else 10.0 ** (snr_db / 10.0)


def noise_variance(config: SystemConfig, gamma_b: float) -> float:
    if gamma_b <= 0:
        raise DomainError("gamma_b must be positive")
    if gamma_b == math.inf:
        return 0.0
    return 1.0 / ((config.q_bar + config.k) * gamma_b)


def awgn(vector, sigma2: float, rng: Optional[np.random.Generator] = None) -> np.ndarray:
    if sigma2 < 0:
        raise DomainError(f"noise variance must be non-negative, got {sigma2}")
    vector = np.asarray(vector, dtype=np.complex128)
    if sigma2 == 0:
        return vector.copy()
    if rng is None:
        rng = np.random.default_rng()
    return vector + rng_streams.complex_normal(rng, vector.shape, sigma2)


def normalize(y, beta) -> np.ndarray:
    beta = np.asarray(beta, dtype=np.float64)
    if beta.ndim:
        return np.asarray(y) / np.sqrt(beta)[..., None]
    return np.asarray(y) / math.sqrt(beta)


# ---------------------------------------------------------------------------
# Transmission
# ---------------------------------------------------------------------------


def _precoded(P: np.ndarray, beta: np.ndarray, idx: np.ndarray, symbols: np.ndarray):
    """x = √β P e_i s for each row of a batch."""
    columns = P[np.arange(P.shape[0]), :, idx]
    return np.sqrt(beta)[:, None] * columns * symbols[:, None]


def _propagate(H: np.ndarray, x: np.ndarray) -> np.ndarray:
    return np.einsum("brt,bt->br", H, x)


def precoded_signal_psm(msgs: MessageBatch, chan: ChannelBatch, config: SystemConfig):
    symbols = alphabets(config).omega_a.points[msgs.k1]
    return _precoded(chan.P, chan.beta, msgs.i1, symbols)


def precoded_signal_mdpsm(
    msgs: MessageBatch, dual: DualChannelBatch, config: SystemConfig
) -> Tuple[np.ndarray, np.ndarray]:
    ab = alphabets(config)
    x1 = _precoded(dual.bs1.P, dual.unified_beta, msgs.i1, ab.omega_a.points[msgs.k1])
    x2 = _precoded(dual.bs2.P, dual.unified_beta, msgs.i2, ab.omega_b.points[msgs.k2])
    return x1, x2


def transmit_psm_batch(
    msgs: MessageBatch,
    chan: ChannelBatch,
    config: SystemConfig,
    sigma2: float = 0.0,
    rng: Optional[np.random.Generator] = None,
) -> np.ndarray:
    x = precoded_signal_psm(msgs, chan, config)
    return awgn(_propagate(chan.H, x), sigma2, rng)


def transmit_mdpsm_batch(
    msgs: MessageBatch,
    dual: DualChannelBatch,
    config: SystemConfig,
    sigma2: float = 0.0,
    rng: Optional[np.random.Generator] = None,
) -> np.ndarray:
    x1, x2 = precoded_signal_mdpsm(msgs, dual, config)
    y = _propagate(dual.bs1.H, x1) + _propagate(dual.bs2.H, x2)
    return awgn(y, sigma2, rng)


def _as_batch(chan: ChannelRealization) -> ChannelBatch:
    return ChannelBatch(H=chan.H[None], P=chan.P[None], beta=np.array([chan.beta]))


def _one(value):
    return None if value is None else np.array([value])


def _msg_batch(msg: TransmitMessage) -> MessageBatch:
    return MessageBatch(
        i1=_one(msg.i1), k1=_one(msg.k1), i2=_one(msg.i2), k2=_one(msg.k2), bits=msg.bits[None]
    )


def transmit_psm(
    msg: TransmitMessage,
    chan: ChannelRealization,
    config: SystemConfig,
    sigma2: float = 0.0,
    rng: Optional[np.random.Generator] = None,
) -> np.ndarray:
    return transmit_psm_batch(_msg_batch(msg), _as_batch(chan), config, sigma2, rng)[0]


def transmit_mdpsm(
    msg: TransmitMessage,
    dual: DualChannel,
    config: SystemConfig,
    sigma2: float = 0.0,
    rng: Optional[np.random.Generator] = None,
) -> np.ndarray:
    batch = DualChannelBatch(
        bs1=_as_batch(dual.bs1),
        bs2=_as_batch(dual.bs2),
        unified_beta=np.array([dual.unified_beta]),
    )
    return transmit_mdpsm_batch(_msg_batch(msg), batch, config, sigma2, rng)[0]
