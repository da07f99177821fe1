"""
Harness Service
===============

Monte-Carlo BER over an SNR-per-bit grid for PSM and MD-PSM, diversity
estimation from high-SNR slopes and γ_b^{−d} reference curves.

Per SNR point the simulation runs batches of channel uses until the stop
rule holds (min bit errors reached, or max channel uses spent). Batch b of
point p draws everything from the stream (seed, p, b) and batches are
consumed in index order, so the curve does not depend on the worker count:
workers only compute a wave of batches ahead and surplus batches are
dropped.

Diversity
---------
    d = −10 · slope of log10(BER) vs SNR(dB)
    PSM     d = n_T − n_R + 1
    MD-PSM  d = n_T1 + n_T2 − 2 n_R + 2
"""

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from app.schemas import StopRule, SystemConfig
from app.services import link
from app.services.channel import draw_channel_batch, draw_dual_channel_batch
from app.services.detector import detector_for
from app.utils import artifacts
from app.utils import rng as rng_streams
from app.utils.errors import EstimationError

logger = logging.getLogger(__name__)

# Diversity fit window
FIT_BER_CEILING = 1e-2
FIT_WINDOW_DB = 10.0
FIT_MIN_ERRORS = 100
FIT_MIN_POINTS = 3


# ---------------------------------------------------------------------------
# Data containers
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class BerCurve:
    snr_db: np.ndarray
    ber: np.ndarray
    bit_errors: np.ndarray
    bits_tested: np.ndarray
    channel_uses: np.ndarray
    capped: np.ndarray
    label: str = ""
    config: dict = field(default_factory=dict)
    seed: Optional[int] = None

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "snr_db": self.snr_db,
                "ber": self.ber,
                "bit_errors": self.bit_errors,
                "bits_tested": self.bits_tested,
                "capped": self.capped.astype(bool),
            }
        )


@dataclass(frozen=True)
class DiversityEstimate:
    order: float
    fit_range_db: Tuple[float, float]
    residual: float
    points: int
    theoretical: Optional[int] = None


# ---------------------------------------------------------------------------
# Simulation
# ---------------------------------------------------------------------------


@lru_cache(maxsize=32)
def _detector(config: SystemConfig, method: str):
    return detector_for(config, method)


def simulate_batch(
    config: SystemConfig,
    sigma2: float,
    seed: Optional[int],
    point_index: int,
    batch_index: int,
    size: int,
    block_length: int = 1,
    method: str = "fast",
) -> Tuple[int, int, int]:
    """(bit errors, bits, channel uses) of one batch."""
    rng = rng_streams.stream(seed, point_index, batch_index)
    msgs = link.random_messages(config, size, rng)
    draws = -(-size // block_length)
    if config.is_mdpsm:
        chan = draw_dual_channel_batch(config.n_t1, config.n_t2, config.n_r, rng, draws)
        if block_length > 1:
            chan = chan.repeat_blocks(block_length, size)
        y = link.transmit_mdpsm_batch(msgs, chan, config, sigma2, rng)
        r = link.normalize(y, chan.unified_beta)
    else:
        chan = draw_channel_batch(config.n_t1, config.n_r, rng, draws)
        if block_length > 1:
            chan = chan.repeat_blocks(block_length, size)
        y = link.transmit_psm_batch(msgs, chan, config, sigma2, rng)
        r = link.normalize(y, chan.beta)
    det = _detector(config, method)(r)
    bits_hat = link.indices_to_bits(config, det.i1, det.k1, det.i2, det.k2)
    errors = int(np.count_nonzero(bits_hat != msgs.bits))
    return errors, size * config.bits_per_use, size


def _batch_size(stop_rule: StopRule, batch_index: int) -> int:
    remaining = stop_rule.max_channel_uses - batch_index * stop_rule.batch_size
    return max(0, min(stop_rule.batch_size, remaining))


def run_ber(
    config: SystemConfig,
    snr_db: Sequence[float],
    stop_rule: Optional[StopRule] = None,
    seed: Optional[int] = None,
    jobs: int = 1,
    block_length: int = 1,
    method: str = "fast",
) -> BerCurve:
    stop_rule = stop_rule or StopRule()
    snr = np.asarray(list(snr_db), dtype=np.float64)
    if config.is_mdpsm:
        # fail before spawning workers if θ gives an ambiguous receive set
        _detector(config, method)
    n = snr.size
    errors = np.zeros(n, dtype=np.int64)
    bits = np.zeros(n, dtype=np.int64)
    uses = np.zeros(n, dtype=np.int64)

    executor = ProcessPoolExecutor(max_workers=jobs) if jobs > 1 else None
    try:
        for p, point in enumerate(snr):
            sigma2 = link.noise_variance(config, link.db_to_linear(point))
            batch, done = 0, False
            while not done:
                wave = [
                    b for b in range(batch, batch + max(jobs, 1)) if _batch_size(stop_rule, b)
                ]
                if not wave:
                    break
                args = [
                    (config, sigma2, seed, p, b, _batch_size(stop_rule, b), block_length, method)
                    for b in wave
                ]
                if executor is None:
                    results = [simulate_batch(*a) for a in args]
                else:
                    results = list(executor.map(simulate_batch, *zip(*args)))
                for e, nb, nu in results:
                    errors[p] += e
                    bits[p] += nb
                    uses[p] += nu
                    done = (
                        errors[p] >= stop_rule.min_bit_errors
                        or uses[p] >= stop_rule.max_channel_uses
                    )
                    if done:
                        break
                batch += len(wave)
            logger.info(
                "%s snr=%.2f dB ber=%.3e errors=%d bits=%d uses=%d%s",
                config.label,
                point,
                errors[p] / bits[p],
                errors[p],
                bits[p],
                uses[p],
                " (capped)" if errors[p] < stop_rule.min_bit_errors else "",
            )
    finally:
        if executor is not None:
            executor.shutdown()

    return BerCurve(
        snr_db=snr,
        ber=errors / bits,
        bit_errors=errors,
        bits_tested=bits,
        channel_uses=uses,
        capped=errors < stop_rule.min_bit_errors,
        label=config.label,
        config=config.model_dump(),
        seed=seed,
    )


# ---------------------------------------------------------------------------
# Analysis
# ---------------------------------------------------------------------------


def theoretical_diversity(config: SystemConfig) -> int:
    if config.is_mdpsm:
        return config.n_t1 + config.n_t2 - 2 * config.n_r + 2
    return config.n_t1 - config.n_r + 1


def _fit_mask(curve: BerCurve, fit_range_db, min_errors: int) -> np.ndarray:
    usable = (curve.ber > 0) & (curve.bit_errors >= min_errors)
    if fit_range_db is not None:
        lo, hi = fit_range_db
        return usable & (curve.snr_db >= lo) & (curve.snr_db <= hi)
    usable &= curve.ber < FIT_BER_CEILING
    if not usable.any():
        return usable
    top = curve.snr_db[usable].max()
    return usable & (curve.snr_db >= top - FIT_WINDOW_DB)


def estimate_diversity(
    curve: BerCurve,
    fit_range_db: Optional[Tuple[float, float]] = None,
    min_errors: int = FIT_MIN_ERRORS,
    config: Optional[SystemConfig] = None,
) -> DiversityEstimate:
    """Least-squares slope of log10(BER) over the fit window."""
    mask = _fit_mask(curve, fit_range_db, min_errors)
    if mask.sum() < FIT_MIN_POINTS:
        raise EstimationError(
            f"need {FIT_MIN_POINTS} points with >= {min_errors} errors in the fit window, "
            f"got {int(mask.sum())}"
        )
    x = curve.snr_db[mask]
    y = np.log10(curve.ber[mask])
    slope, intercept = np.polyfit(x, y, 1)
    residual = float(np.sqrt(np.mean((y - (slope * x + intercept)) ** 2)))
    return DiversityEstimate(
        order=float(-10.0 * slope),
        fit_range_db=(float(x.min()), float(x.max())),
        residual=residual,
        points=int(mask.sum()),
        theoretical=theoretical_diversity(config) if config is not None else None,
    )


def snr_at_ber(curve: BerCurve, target: float) -> float:
    """SNR (dB) where the curve crosses `target`, log-linear interpolation."""
    snr, ber = curve.snr_db, curve.ber
    for i in range(len(snr) - 1):
        b0, b1 = ber[i], ber[i + 1]
        if b0 <= 0 or b1 <= 0:
            continue
        if b0 >= target >= b1:
            l0, l1 = math.log10(b0), math.log10(b1)
            if l0 == l1:
                return float(snr[i])
            frac = (math.log10(target) - l0) / (l1 - l0)
            return float(snr[i] + frac * (snr[i + 1] - snr[i]))
    raise EstimationError(f"{curve.label or 'curve'} does not cross BER {target:g}")


def snr_gap(reference: BerCurve, proposed: BerCurve, target: float) -> float:
    """How many dB `proposed` gains over `reference` at `target`."""
    return snr_at_ber(reference, target) - snr_at_ber(proposed, target)


def reference_curve(snr_db: Sequence[float], order: float, anchor: float = 1.0) -> np.ndarray:
    gamma_b = 10.0 ** (np.asarray(snr_db, dtype=np.float64) / 10.0)
    return anchor * gamma_b ** (-order)


# ---------------------------------------------------------------------------
# Artifacts
# ---------------------------------------------------------------------------


def write_curve_csv(curve: BerCurve, path, spec_hash: str = "") -> None:
    header = {"spec_hash": spec_hash, "seed": curve.seed, "system": curve.label}
    artifacts.write_csv(curve.to_frame(), path, header)


def write_manifest(curve: BerCurve, path, started_at: str, spec_hash: str = "", **extra) -> None:
    artifacts.write_manifest(
        path,
        kind="ber_run",
        config=curve.config,
        seed=curve.seed,
        started_at=started_at,
        spec_hash=spec_hash,
        channel_uses=[int(u) for u in curve.channel_uses],
        **extra,
    )
