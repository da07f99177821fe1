"""
Channel Service
===============

Rayleigh flat-fading channels, zero-forcing precoders and the power
normalization shared by the two base stations.

Per BS with n_T transmit and n_R receive antennas:

    H  ~ CN(0, 1) entries, n_R × n_T
    P  = H^H (H H^H)^{-1}            right pseudo-inverse, H P = I
    β  = n_R / Tr(P P^H) = n_R / Tr((H H^H)^{-1})

The two BSs of MD-PSM exchange β_1, β_2 and both transmit with the unified
factor β = (β_1 + β_2) / 2.

Reference statistics
--------------------
    E[Tr((H H^H)^{-1})] = n_R / (n_T − n_R)   so   n_R / E[Tr] = n_T − n_R
    lim Pr[n_R σ_min ≥ x] = exp(−x − x²/2)
    Pr[n σ_min² ≥ x] = exp(−x)                 (square complex Gaussian)

The first identity is about the harmonic mean of β; the arithmetic mean of
β lies above n_T − n_R.
"""

import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np
import pandas as pd

from app.utils import artifacts
from app.utils import rng as rng_streams
from app.utils.errors import ConfigurationError, DomainError, UndefinedExpectationError

logger = logging.getLogger(__name__)

CONDITION_THRESHOLD = 1e12

# Redraw rounds before giving up on a batch.
MAX_REDRAW_ROUNDS = 100


# ---------------------------------------------------------------------------
# Data containers
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ChannelRealization:
    H: np.ndarray
    P: np.ndarray
    beta: float

    @property
    def n_r(self) -> int:
        return self.H.shape[0]

    @property
    def n_t(self) -> int:
        return self.H.shape[1]


@dataclass(frozen=True, eq=False)
class ChannelBatch:
    """Stacked realizations: H (B, n_R, n_T), P (B, n_T, n_R), beta (B,)."""

    H: np.ndarray
    P: np.ndarray
    beta: np.ndarray
    redraws: int = 0

    def __len__(self) -> int:
        return self.beta.shape[0]

    def __getitem__(self, index: int) -> ChannelRealization:
        return ChannelRealization(H=self.H[index], P=self.P[index], beta=float(self.beta[index]))

    def repeat_blocks(self, block_length: int, size: int) -> "ChannelBatch":
        """Reuse each realization for `block_length` consecutive uses."""
        take = np.arange(size) // block_length
        return ChannelBatch(
            H=self.H[take], P=self.P[take], beta=self.beta[take], redraws=self.redraws
        )


@dataclass(frozen=True, eq=False)
class DualChannel:
    bs1: ChannelRealization
    bs2: ChannelRealization
    unified_beta: float


@dataclass(frozen=True, eq=False)
class DualChannelBatch:
    bs1: ChannelBatch
    bs2: ChannelBatch
    unified_beta: np.ndarray

    def __len__(self) -> int:
        return self.unified_beta.shape[0]

    def __getitem__(self, index: int) -> DualChannel:
        return DualChannel(
            bs1=self.bs1[index], bs2=self.bs2[index], unified_beta=float(self.unified_beta[index])
        )

    def repeat_blocks(self, block_length: int, size: int) -> "DualChannelBatch":
        take = np.arange(size) // block_length
        return DualChannelBatch(
            bs1=self.bs1.repeat_blocks(block_length, size),
            bs2=self.bs2.repeat_blocks(block_length, size),
            unified_beta=self.unified_beta[take],
        )


@dataclass(frozen=True)
class ChannelStats:
    n_t: int
    n_r: int
    draws: int
    redraws: int
    mean_beta: float
    harmonic_mean_beta: float
    expected_beta: Optional[float]
    single_inv_sqrt_mean: float
    single_inv_sqrt_max: float
    single_inv_sqrt_var: float
    unified_inv_sqrt_mean: float
    unified_inv_sqrt_max: float
    unified_inv_sqrt_var: float

    def as_dict(self) -> dict:
        return dict(self.__dict__)


# ---------------------------------------------------------------------------
# Precoding
# ---------------------------------------------------------------------------


def _check_dims(n_t: int, n_r: int):
    if n_r < 1 or n_t < n_r:
        raise ConfigurationError(f"need n_T >= n_R >= 1, got n_T={n_t}, n_R={n_r}", field="n_t")


def _gram_conditions(H: np.ndarray) -> np.ndarray:
    gram = H @ np.conj(np.swapaxes(H, -1, -2))
    eig = np.linalg.eigvalsh(gram)
    smallest, largest = eig[..., 0], eig[..., -1]
    with np.errstate(divide="ignore", invalid="ignore"):
        cond = np.where(smallest > 0, largest / smallest, np.inf)
    return cond


def _zero_forcing(H: np.ndarray):
    """P and β for one or many channels (leading axes are batch axes)."""
    gram = H @ np.conj(np.swapaxes(H, -1, -2))
    # P^H = (H H^H)^{-1} H since the Gram matrix is Hermitian
    P = np.conj(np.swapaxes(np.linalg.solve(gram, H), -1, -2))
    n_r = H.shape[-2]
    trace = np.sum(np.abs(P) ** 2, axis=(-2, -1))
    return P, n_r / trace


def precode(H, condition_threshold: float = CONDITION_THRESHOLD) -> ChannelRealization:
    """ZF precoder for a given (injected) channel matrix."""
    H = np.atleast_2d(np.asarray(H, dtype=np.complex128))
    n_r, n_t = H.shape
    _check_dims(n_t, n_r)
    if _gram_conditions(H) > condition_threshold:
        raise DomainError("H H^H is numerically singular")
    P, beta = _zero_forcing(H)
    return ChannelRealization(H=H, P=P, beta=float(beta))


def draw_channel_batch(
    n_t: int,
    n_r: int,
    rng: np.random.Generator,
    size: int,
    condition_threshold: float = CONDITION_THRESHOLD,
) -> ChannelBatch:
    _check_dims(n_t, n_r)
    H = rng_streams.complex_normal(rng, (size, n_r, n_t))
    redraws = 0
    for _ in range(MAX_REDRAW_ROUNDS):
        bad = np.flatnonzero(_gram_conditions(H) > condition_threshold)
        if bad.size == 0:
            break
        redraws += int(bad.size)
        H[bad] = rng_streams.complex_normal(rng, (bad.size, n_r, n_t))
    else:
        raise DomainError(f"could not draw well-conditioned {n_r}x{n_t} channels")
    if redraws:
        logger.warning(
            "Redrew %d ill-conditioned channel(s) for n_T=%d n_R=%d", redraws, n_t, n_r
        )
    P, beta = _zero_forcing(H)
    return ChannelBatch(H=H, P=P, beta=beta, redraws=redraws)


def draw_channel(
    n_t: int,
    n_r: int,
    rng: np.random.Generator,
    condition_threshold: float = CONDITION_THRESHOLD,
) -> ChannelRealization:
    return draw_channel_batch(n_t, n_r, rng, 1, condition_threshold)[0]


def draw_dual_channel_batch(
    n_t1: int,
    n_t2: int,
    n_r: int,
    rng: np.random.Generator,
    size: int,
    condition_threshold: float = CONDITION_THRESHOLD,
) -> DualChannelBatch:
    bs1 = draw_channel_batch(n_t1, n_r, rng, size, condition_threshold)
    bs2 = draw_channel_batch(n_t2, n_r, rng, size, condition_threshold)
    return DualChannelBatch(bs1=bs1, bs2=bs2, unified_beta=unified_beta(bs1.beta, bs2.beta))


def draw_dual_channel(
    n_t1: int,
    n_t2: int,
    n_r: int,
    rng: np.random.Generator,
    condition_threshold: float = CONDITION_THRESHOLD,
) -> DualChannel:
    return draw_dual_channel_batch(n_t1, n_t2, n_r, rng, 1, condition_threshold)[0]


def channel_rng(seed: int, draw_index: int) -> np.random.Generator:
    """Stream that reproduces draw `draw_index` of a seeded run."""
    return rng_streams.stream(seed, draw_index)


# ---------------------------------------------------------------------------
# Normalization and reference statistics
# ---------------------------------------------------------------------------


def unified_beta(b1, b2):
    b1_arr, b2_arr = np.asarray(b1, dtype=np.float64), np.asarray(b2, dtype=np.float64)
    if np.any(b1_arr <= 0) or np.any(b2_arr <= 0):
        raise DomainError("normalization factors must be positive")
    mean = (b1_arr + b2_arr) / 2.0
    return float(mean) if mean.ndim == 0 else mean


def expected_beta(n_t: int, n_r: int) -> float:
    if n_t == n_r:
        raise UndefinedExpectationError("E[beta] diverges for n_T = n_R")
    _check_dims(n_t, n_r)
    return float(n_t - n_r)


def harmonic_mean_beta(betas: Sequence[float]) -> float:
    """n_R / mean(Tr(P P^H)), the estimator matching expected_beta."""
    betas = np.asarray(betas, dtype=np.float64)
    return float(1.0 / np.mean(1.0 / betas))


def min_singular_tail(n_r: int, sigma_threshold: float) -> float:
    """Asymptotic Pr[σ_min ≥ σ] = exp(−x − x²/2) with x = n_R·σ."""
    if sigma_threshold < 0:
        raise DomainError("threshold must be non-negative")
    x = n_r * sigma_threshold
    return math.exp(-x - x * x / 2.0)


def min_singular_values(n: int, draws: int, rng: np.random.Generator, chunk: int = 20_000):
    out = np.empty(draws)
    for start in range(0, draws, chunk):
        stop = min(start + chunk, draws)
        H = rng_streams.complex_normal(rng, (stop - start, n, n))
        out[start:stop] = np.linalg.svd(H, compute_uv=False)[:, -1]
    return out


def empirical_min_singular_tail(
    n: int,
    thresholds: Sequence[float],
    draws: int,
    rng: np.random.Generator,
    squared: bool = True,
) -> np.ndarray:
    """Empirical Pr[n·σ_min² ≥ x] (or Pr[n·σ_min ≥ x]) of n×n CN(0,1) matrices."""
    sigma = min_singular_values(n, draws, rng)
    statistic = n * sigma**2 if squared else n * sigma
    thresholds = np.asarray(thresholds, dtype=np.float64)
    return (statistic[None, :] >= thresholds[:, None]).mean(axis=1)


def channel_stats(
    n_t: int,
    n_r: int,
    draws: int,
    rng: np.random.Generator,
    condition_threshold: float = CONDITION_THRESHOLD,
) -> ChannelStats:
    dual = draw_dual_channel_batch(n_t, n_t, n_r, rng, draws, condition_threshold)
    single = 1.0 / np.sqrt(dual.bs1.beta)
    unified = 1.0 / np.sqrt(dual.unified_beta)
    try:
        reference = expected_beta(n_t, n_r)
    except UndefinedExpectationError:
        reference = None
    return ChannelStats(
        n_t=n_t,
        n_r=n_r,
        draws=draws,
        redraws=dual.bs1.redraws + dual.bs2.redraws,
        mean_beta=float(dual.bs1.beta.mean()),
        harmonic_mean_beta=harmonic_mean_beta(dual.bs1.beta),
        expected_beta=reference,
        single_inv_sqrt_mean=float(single.mean()),
        single_inv_sqrt_max=float(single.max()),
        single_inv_sqrt_var=float(single.var()),
        unified_inv_sqrt_mean=float(unified.mean()),
        unified_inv_sqrt_max=float(unified.max()),
        unified_inv_sqrt_var=float(unified.var()),
    )


def channels_frame(H: np.ndarray) -> pd.DataFrame:
    """One row per (draw, receive antenna); columns re_j, im_j interleaved."""
    H = np.asarray(H)
    if H.ndim == 2:
        H = H[None]
    draws, n_r, n_t = H.shape
    data = {
        "draw": np.repeat(np.arange(draws), n_r),
        "rx": np.tile(np.arange(n_r), draws),
    }
    flat = H.reshape(draws * n_r, n_t)
    for j in range(n_t):
        data[f"re_{j}"] = flat[:, j].real
        data[f"im_{j}"] = flat[:, j].imag
    return pd.DataFrame(data)


def dump_channels_csv(H: np.ndarray, path, header: Optional[Mapping[str, object]] = None) -> Path:
    return artifacts.write_csv(channels_frame(H), path, header)
