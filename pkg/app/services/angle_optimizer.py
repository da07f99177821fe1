"""
Angle Optimizer Service
=======================

Chooses the rotation θ of the second BS alphabet.

Criteria
--------
    max–min      θ̂ = argmax_θ d_min(Ω_d(θ))          (equiprobable symbols)
    large n_R    θ̂ = argmax_θ d_min(Ω_a ∪ Ω_b(θ))    (Pr[i1 = i2] = 1/n_R → 0)
    weighted     Σ_p w_p · min_{q≠p} |p − q|  over Ω_d, w from symbol
                 probabilities at a given n_R
    BER-driven   lowest simulated BER over candidate angles

Angles where Ω_d is not unique score d_min = 0, so every reported optimum
satisfies both uniqueness conditions. All optima within TIE_TOL of the
maximum are reported.

For M-PSK pairs the max–min curve has period 360/M and is even about 0,
hence also about 180/M. The BER-driven optimum lies between the max–min
optimum and the large-n_R optimum inside [0, 180/M].
"""

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from app.schemas import StopRule, SystemConfig
from app.services import harness
from app.services.constellation import (
    Scheme,
    dmin,
    evaluate_receive_points,
    make_constellation,
    point_weights,
    psk_points,
)
from app.utils import artifacts
from app.utils import rng as rng_streams
from app.utils.errors import (
    ConfigurationError,
    DetectorUndefinedError,
    EstimationError,
    UnsupportedClosedFormError,
)

logger = logging.getLogger(__name__)

TIE_TOL = 1e-9
DEFAULT_STEP = 0.1
PILOT_TARGET_BER = 1e-3
PILOT_SNR_DB = tuple(float(s) for s in range(0, 42, 3))
MIN_CANDIDATE_USES = 10_000


# ---------------------------------------------------------------------------
# Data containers
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class AngleSweepResult:
    thetas: np.ndarray
    dmin_values: np.ndarray
    dmin_union_values: np.ndarray
    uniqueness_ok: np.ndarray
    label: str = ""
    avg_nn_distance: Optional[np.ndarray] = None

    @property
    def best_dmin(self) -> float:
        return float(self.dmin_values.max())

    @property
    def optimal_thetas(self) -> List[float]:
        hits = self.dmin_values >= self.best_dmin - TIE_TOL
        return [float(t) for t in self.thetas[hits]]

    @property
    def union_optimal_thetas(self) -> List[float]:
        best = self.dmin_union_values.max()
        return [float(t) for t in self.thetas[self.dmin_union_values >= best - TIE_TOL]]

    def optima_within(self, lo: float, hi: float) -> List[float]:
        return [t for t in self.optimal_thetas if lo - TIE_TOL <= t <= hi + TIE_TOL]

    def to_frame(self) -> pd.DataFrame:
        data = {
            "theta_deg": self.thetas,
            "dmin_omega_d": self.dmin_values,
            "dmin_union": self.dmin_union_values,
            "uniqueness_ok": self.uniqueness_ok.astype(bool),
        }
        if self.avg_nn_distance is not None:
            data["avg_nn_distance"] = self.avg_nn_distance
        return pd.DataFrame(data)


@dataclass(eq=False)
class BerRefineResult:
    theta: float
    snr_db: float
    table: pd.DataFrame


# ---------------------------------------------------------------------------
# Max–min sweep
# ---------------------------------------------------------------------------


def theta_grid(start: float, stop: float, step: float) -> np.ndarray:
    """Inclusive grid start, start+step, ... up to stop (within 1e-9)."""
    if step <= 0:
        raise ConfigurationError(f"step must be positive, got {step}", field="theta_step")
    if not (0.0 <= start <= 90.0 and 0.0 <= stop <= 90.0):
        raise ConfigurationError("angle range must lie within [0, 90] degrees", field="theta_stop")
    if stop < start:
        raise ConfigurationError(f"empty angle range [{start}, {stop}]", field="theta_stop")
    count = int(np.floor((stop - start) / step + 1e-9)) + 1
    return np.round(start + step * np.arange(count), 10)


def _weighted_nn(pa, pb, omega_c, n_r: int) -> float:
    points = np.concatenate([pa, pb, omega_c])
    weights = point_weights(pa.size, pb.size, n_r)
    dist = np.abs(points[:, None] - points[None, :])
    np.fill_diagonal(dist, np.inf)
    return float(np.sum(weights * dist.min(axis=1)) / weights.sum())


def weighted_distance(pa, pb_base, theta: float, n_r: int) -> float:
    """Probability-weighted nearest-neighbour distance of Ω_d at angle θ (deg)."""
    pa = np.asarray(pa, dtype=np.complex128)
    pb = np.asarray(pb_base, dtype=np.complex128) * np.exp(1j * np.radians(theta))
    omega_c, _, _, _, unique = evaluate_receive_points(pa, pb)
    return _weighted_nn(pa, pb, omega_c, n_r) if unique else 0.0


def _evaluate_angles(pa, pb_base, thetas, n_r):
    dmins = np.empty(len(thetas))
    unions = np.empty(len(thetas))
    unique = np.empty(len(thetas), dtype=bool)
    weighted = np.empty(len(thetas)) if n_r is not None else None
    for j, theta in enumerate(thetas):
        pb = pb_base * np.exp(1j * np.radians(theta))
        omega_c, omega_d, _, _, ok = evaluate_receive_points(pa, pb)
        unique[j] = ok
        dmins[j] = dmin(omega_d) if ok else 0.0
        unions[j] = dmin(np.concatenate([pa, pb]))
        if weighted is not None:
            weighted[j] = _weighted_nn(pa, pb, omega_c, n_r) if ok else 0.0
    return dmins, unions, unique, weighted


def _points(c) -> np.ndarray:
    return np.asarray(c.points if hasattr(c, "points") else c, dtype=np.complex128)


def _label(c) -> str:
    scheme = getattr(c, "scheme", None)
    return scheme.value if scheme is not None else f"{np.size(c)}-point"


def default_stop(a, b_base) -> float:
    """45° by symmetry; BPSK–BPSK has no 45° mirror and uses 90°."""
    if np.size(_points(a)) == 2 and np.size(_points(b_base)) == 2:
        return 90.0
    return 45.0


def sweep(
    a,
    b_base,
    start: float = 0.0,
    stop: Optional[float] = None,
    step: float = DEFAULT_STEP,
    n_r: Optional[int] = None,
    jobs: int = 1,
) -> AngleSweepResult:
    """d_min(Ω_d) and d_min(Ω_a ∪ Ω_b) over an angle grid.

    `a` and `b_base` are constellations or raw point arrays. With `n_r`
    the probability-weighted distance is added.
    """
    pa, pb = _points(a), _points(b_base)
    stop = default_stop(pa, pb) if stop is None else stop
    thetas = theta_grid(start, stop, step)
    chunks = [c for c in np.array_split(thetas, max(jobs, 1)) if c.size]
    if jobs > 1 and len(chunks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as executor:
            parts = list(
                executor.map(
                    _evaluate_angles,
                    [pa] * len(chunks),
                    [pb] * len(chunks),
                    chunks,
                    [n_r] * len(chunks),
                )
            )
    else:
        parts = [_evaluate_angles(pa, pb, c, n_r) for c in chunks]

    result = AngleSweepResult(
        thetas=thetas,
        dmin_values=np.concatenate([p[0] for p in parts]),
        dmin_union_values=np.concatenate([p[1] for p in parts]),
        uniqueness_ok=np.concatenate([p[2] for p in parts]),
        label=f"{_label(a)}-{_label(b_base)}",
        avg_nn_distance=None if n_r is None else np.concatenate([p[3] for p in parts]),
    )
    logger.info(
        "Sweep %s over [%g, %g] step %g: d_min=%.4f at %s",
        result.label,
        start,
        stop,
        step,
        result.best_dmin,
        ", ".join(f"{t:g}" for t in result.optimal_thetas[:8]),
    )
    return result


def expected_optimum_range(order, step: float = 0.05) -> Tuple[float, float]:
    """[max–min optimum, large-n_R optimum] inside [0, 180/M] for M-PSK pairs."""
    if isinstance(order, (str, Scheme)):
        scheme = Scheme.parse(order)
        if not scheme.is_psk:
            raise UnsupportedClosedFormError(f"no optimum range for {scheme.value}")
        order = scheme.order
    order = int(order)
    if order < 2:
        raise UnsupportedClosedFormError("optimum range needs a PSK order >= 2")
    points = psk_points(order)
    half_period = 180.0 / order
    result = sweep(points, points, 0.0, min(half_period, 90.0), step)
    lower = max(result.optima_within(0.0, half_period))
    upper = result.union_optimal_thetas[-1]
    return lower, upper


# ---------------------------------------------------------------------------
# BER-driven refinement
# ---------------------------------------------------------------------------


def pilot_snr(
    config: SystemConfig,
    stop_rule: StopRule,
    seed: int,
    target: float = PILOT_TARGET_BER,
    grid: Sequence[float] = PILOT_SNR_DB,
    jobs: int = 1,
) -> float:
    """SNR where `config` sits near `target` BER, from a short run."""
    pilot_rule = StopRule(
        min_bit_errors=max(50, stop_rule.min_bit_errors // 4),
        max_channel_uses=max(stop_rule.batch_size, stop_rule.max_channel_uses // 10),
        batch_size=stop_rule.batch_size,
    )
    curve = harness.run_ber(config, grid, pilot_rule, seed, jobs)
    try:
        return harness.snr_at_ber(curve, target)
    except EstimationError:
        fallback = float(grid[-1]) if curve.ber[-1] > target else float(grid[0])
        logger.warning("Pilot run did not cross BER %g; using %.1f dB", target, fallback)
        return fallback


def _pilot_anchor(config: SystemConfig, candidates: Sequence[float]) -> SystemConfig:
    """Candidate closest to the middle of the list with a unique receive set."""
    middle = len(candidates) // 2
    a = make_constellation(config.scheme1).points
    b = make_constellation(config.scheme2).points
    for index in sorted(range(len(candidates)), key=lambda i: abs(i - middle)):
        theta = candidates[index]
        pb = b * np.exp(1j * np.radians(theta))
        if evaluate_receive_points(a, pb)[4]:
            return config.with_theta(theta)
    raise EstimationError("no candidate angle gives a unique receive set")


def _candidate_seed(seed: int, index: int) -> int:
    return int(rng_streams.stream(seed, index).integers(0, 2**31 - 1))


def ber_refine(
    config: SystemConfig,
    candidate_thetas: Sequence[float],
    snr_db: Optional[float] = None,
    stop_rule: Optional[StopRule] = None,
    seed: int = 0,
    jobs: int = 1,
) -> BerRefineResult:
    """Candidate angle with the lowest simulated BER (ties → smaller θ)."""
    stop_rule = stop_rule or StopRule()
    candidates = sorted(float(t) for t in candidate_thetas)
    if not candidates:
        raise ConfigurationError("no candidate angles", field="thetas")
    if stop_rule.max_channel_uses < MIN_CANDIDATE_USES:
        raise ConfigurationError(
            f"each candidate needs at least {MIN_CANDIDATE_USES} channel uses, "
            f"got {stop_rule.max_channel_uses}",
            field="max_channel_uses",
        )
    if snr_db is None:
        snr_db = pilot_snr(_pilot_anchor(config, candidates), stop_rule, seed, jobs=jobs)
        logger.info("Refining %s at pilot SNR %.2f dB", config.label, snr_db)

    rows = []
    for index, theta in enumerate(candidates):
        try:
            curve = harness.run_ber(
                config.with_theta(theta), [snr_db], stop_rule, _candidate_seed(seed, index), jobs
            )
        except DetectorUndefinedError:
            logger.info("theta=%g skipped: receive set not unique", theta)
            rows.append(
                {
                    "theta_deg": theta,
                    "ber": np.nan,
                    "bit_errors": 0,
                    "bits_tested": 0,
                    "capped": True,
                }
            )
            continue
        rows.append(
            {
                "theta_deg": theta,
                "ber": float(curve.ber[0]),
                "bit_errors": int(curve.bit_errors[0]),
                "bits_tested": int(curve.bits_tested[0]),
                "capped": bool(curve.capped[0]),
            }
        )
    table = pd.DataFrame(rows)
    if table["ber"].isna().all():
        raise EstimationError("no candidate angle gives a unique receive set")
    best = float(table.loc[table["ber"].idxmin(), "theta_deg"])
    logger.info("BER-refined theta for %s: %g deg", config.label, best)
    return BerRefineResult(theta=best, snr_db=float(snr_db), table=table)


# ---------------------------------------------------------------------------
# Artifacts
# ---------------------------------------------------------------------------


def write_sweep_csv(result: AngleSweepResult, path, header: Optional[dict] = None) -> None:
    artifacts.write_csv(result.to_frame(), path, header)
