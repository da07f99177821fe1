"""
Detector Service
================

Maximum-likelihood detection on the normalized reception r = y / √β.

Costs
-----
Every hypothesis h is scored by

    ½‖r − h‖² − ½‖r‖² = ½‖h‖² − Re(r^H h)

which gives, per antenna i and symbol s, the term  |s|²/2 − Re(r_i* s):

    PSM              min over (i, k)        of  |s_k|²/2 − Re(r_i* s_k)
    MD-PSM i1 ≠ i2   A[i1, k1] + B[i2, k2]  with A, B the per-BS terms
    MD-PSM i1 = i2   |s''_k3|²/2 − Re(r_i* s''_k3),  s''_k3 ∈ Ω_c

The |s|²/2 terms are precomputed once per receive set.

Fast detector
-------------
For i1 ≠ i2 the problem splits per BS: take the best symbol of each BS on
every antenna, then the two best antennas of each BS. The optimal
unequal-index pair always uses one of the two best antennas of each BS, so
checking the four cross pairs (minus collisions) is exact. The winner is
then compared with the best Ω_c hypothesis.

Ties resolve lexicographically on (i1, i2, k1, k2), the order of the joint
search.

Complexity (real multiplications)
---------------------------------
    C_PSM    = M (3 + 2 n_R)
    C_MD-PSM = (M1 + M2 + M1 M2)(3 + 2 n_R)
    closed-form saving = 3 M1 + 3 M1 M2 − 4   (M1: PSK order)
"""

import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np
import pandas as pd

from app.schemas import SystemConfig
from app.services.constellation import (
    ReceiveSet,
    Scheme,
    brute_force_energy_terms,
    has_closed_form,
)
from app.services.link import alphabets, indices_to_bits
from app.utils.errors import DetectorUndefinedError

logger = logging.getLogger(__name__)

# Rows per chunk of the exhaustive search; bounds its (rows, n_R², M1·M2) cost array.
JOINT_CHUNK = 2048


# ---------------------------------------------------------------------------
# Data containers
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class DetectionResult:
    i1: int
    k1: int
    cost: float
    bits: np.ndarray
    i2: Optional[int] = None
    k2: Optional[int] = None


@dataclass(frozen=True, eq=False)
class DetectionBatch:
    i1: np.ndarray
    k1: np.ndarray
    cost: np.ndarray
    i2: Optional[np.ndarray] = None
    k2: Optional[np.ndarray] = None

    def __len__(self) -> int:
        return self.i1.shape[0]


@dataclass(frozen=True, eq=False)
class PrecomputedTerms:
    half_energy_a: np.ndarray
    half_energy_b: np.ndarray
    half_energy_c: np.ndarray
    source: str = "brute_force"


@dataclass(frozen=True)
class ComplexityCount:
    label: str
    bits_per_use: int
    real_multiplications: int
    closed_form_saving: Optional[int] = None

    @property
    def saving_ratio(self) -> Optional[float]:
        if self.closed_form_saving is None:
            return None
        return self.closed_form_saving / self.real_multiplications


# ---------------------------------------------------------------------------
# Precomputation
# ---------------------------------------------------------------------------


def _polar_half_energy(receive_set: ReceiveSet) -> np.ndarray:
    """|s1 + s2 e^{jθ}|²/2 = (|s1|² + |s2|²)/2 + |s1||s2| cos(θ + ψ2 − ψ1), k3 order."""
    pa = receive_set.omega_a.points
    pb = receive_set.omega_b.base.points
    theta = np.radians(receive_set.theta)
    ra, rb = np.abs(pa)[:, None], np.abs(pb)[None, :]
    angle = theta + np.angle(pb)[None, :] - np.angle(pa)[:, None]
    return ((ra**2 + rb**2) / 2.0 + ra * rb * np.cos(angle)).ravel()


def precompute_terms(receive_set: ReceiveSet) -> PrecomputedTerms:
    """Half energies of Ω_a, Ω_b and Ω_c; closed forms where they exist."""
    if not receive_set.uniqueness_ok:
        raise DetectorUndefinedError(
            f"receive set is not unique at theta={receive_set.theta:g} deg"
        )
    scheme_a, scheme_b = receive_set.omega_a.scheme, receive_set.omega_b.scheme
    if has_closed_form(scheme_a, scheme_b):
        half_c, source = _polar_half_energy(receive_set), "closed_form"
    else:
        half_c, source = brute_force_energy_terms(receive_set), "brute_force"
    return PrecomputedTerms(
        half_energy_a=receive_set.omega_a.half_energy,
        half_energy_b=receive_set.omega_b.half_energy,
        half_energy_c=half_c,
        source=source,
    )


def _branch_costs(r: np.ndarray, points: np.ndarray, half_energy: np.ndarray) -> np.ndarray:
    """(B, n_R, M) array of |s|²/2 − Re(r_i* s)."""
    return half_energy[None, None, :] - np.real(np.conj(r)[:, :, None] * points[None, None, :])


# ---------------------------------------------------------------------------
# PSM
# ---------------------------------------------------------------------------


def detect_psm_batch(r, points: np.ndarray) -> DetectionBatch:
    r = np.atleast_2d(np.asarray(r, dtype=np.complex128))
    points = np.asarray(points, dtype=np.complex128)
    half_energy = np.abs(points) ** 2 / 2.0
    if np.allclose(half_energy, half_energy[0]):
        # equal-energy alphabet: argmax Re(r_i* s)
        corr = np.real(np.conj(r)[:, :, None] * points[None, None, :])
        flat = np.argmax(corr.reshape(r.shape[0], -1), axis=1)
        cost = half_energy[0] - corr.reshape(r.shape[0], -1)[np.arange(r.shape[0]), flat]
    else:
        costs = _branch_costs(r, points, half_energy).reshape(r.shape[0], -1)
        flat = np.argmin(costs, axis=1)
        cost = costs[np.arange(r.shape[0]), flat]
    i, k = np.divmod(flat, points.size)
    return DetectionBatch(i1=i, k1=k, cost=cost)


def detect_psm(r, constellation, config: Optional[SystemConfig] = None) -> DetectionResult:
    batch = detect_psm_batch(r, constellation.points)
    i, k = int(batch.i1[0]), int(batch.k1[0])
    if config is None:
        config = SystemConfig.psm(len(r), len(r), constellation.scheme.value)
    bits = indices_to_bits(config, i, k)
    return DetectionResult(i1=i, k1=k, cost=float(batch.cost[0]), bits=bits)


# ---------------------------------------------------------------------------
# MD-PSM
# ---------------------------------------------------------------------------


def _mdpsm_costs(r: np.ndarray, receive_set: ReceiveSet, terms: PrecomputedTerms):
    cost_a = _branch_costs(r, receive_set.omega_a.points, terms.half_energy_a)
    cost_b = _branch_costs(r, receive_set.omega_b.points, terms.half_energy_b)
    cost_c = _branch_costs(r, receive_set.omega_c, terms.half_energy_c)
    return cost_a, cost_b, cost_c


def detect_mdpsm_joint_batch(
    r, receive_set: ReceiveSet, terms: Optional[PrecomputedTerms] = None
) -> DetectionBatch:
    """Exhaustive search over every (i1, i2, k1, k2)."""
    terms = terms or precompute_terms(receive_set)
    r = np.atleast_2d(np.asarray(r, dtype=np.complex128))
    rows, n_r = r.shape
    m1, m2 = receive_set.omega_a.order, receive_set.omega_b.order
    flat = np.empty(rows, dtype=np.int64)
    best = np.empty(rows)
    diag = np.arange(n_r)
    for start in range(0, rows, JOINT_CHUNK):
        part = r[start : start + JOINT_CHUNK]
        cost_a, cost_b, cost_c = _mdpsm_costs(part, receive_set, terms)
        # (rows, i1, i2, k1, k2)
        full = cost_a[:, :, None, :, None] + cost_b[:, None, :, None, :]
        full[:, diag, diag] = cost_c.reshape(part.shape[0], n_r, m1, m2)
        full = full.reshape(part.shape[0], -1)
        idx = np.argmin(full, axis=1)
        flat[start : start + part.shape[0]] = idx
        best[start : start + part.shape[0]] = full[np.arange(part.shape[0]), idx]
    i1, i2, k1, k2 = np.unravel_index(flat, (n_r, n_r, m1, m2))
    return DetectionBatch(i1=i1, k1=k1, i2=i2, k2=k2, cost=best)


def _flat_index(i1, i2, k1, k2, n_r: int, m1: int, m2: int) -> np.ndarray:
    return ((i1 * n_r + i2) * m1 + k1) * m2 + k2


def detect_mdpsm_fast_batch(
    r, receive_set: ReceiveSet, terms: Optional[PrecomputedTerms] = None
) -> DetectionBatch:
    """Split per-BS search with top-2 antenna repair plus the Ω_c branch."""
    terms = terms or precompute_terms(receive_set)
    r = np.atleast_2d(np.asarray(r, dtype=np.complex128))
    rows, n_r = r.shape
    m1, m2 = receive_set.omega_a.order, receive_set.omega_b.order
    cost_a, cost_b, cost_c = _mdpsm_costs(r, receive_set, terms)
    ar = np.arange(rows)

    # best symbol per (row, antenna)
    k1_best = np.argmin(cost_a, axis=2)
    k2_best = np.argmin(cost_b, axis=2)
    a_min = np.take_along_axis(cost_a, k1_best[:, :, None], axis=2)[:, :, 0]
    b_min = np.take_along_axis(cost_b, k2_best[:, :, None], axis=2)[:, :, 0]

    # two best antennas per BS
    top_a = np.argsort(a_min, axis=1, kind="stable")[:, :2]
    top_b = np.argsort(b_min, axis=1, kind="stable")[:, :2]

    best_cost = np.full(rows, np.inf)
    best_flat = np.full(rows, np.iinfo(np.int64).max)
    best = {"i1": np.zeros(rows, np.int64), "i2": np.zeros(rows, np.int64)}
    best["k1"] = np.zeros(rows, np.int64)
    best["k2"] = np.zeros(rows, np.int64)

    def consider(cost, i1, i2, k1, k2):
        flat = _flat_index(i1, i2, k1, k2, n_r, m1, m2)
        better = (cost < best_cost) | ((cost == best_cost) & (flat < best_flat))
        best_cost[better] = cost[better]
        best_flat[better] = flat[better]
        for name, value in (("i1", i1), ("i2", i2), ("k1", k1), ("k2", k2)):
            best[name][better] = value[better]

    for u in range(2):
        for v in range(2):
            i1, i2 = top_a[:, u], top_b[:, v]
            cost = np.where(i1 != i2, a_min[ar, i1] + b_min[ar, i2], np.inf)
            consider(cost, i1, i2, k1_best[ar, i1], k2_best[ar, i2])

    flat_c = np.argmin(cost_c.reshape(rows, -1), axis=1)
    i_c, k3 = np.divmod(flat_c, m1 * m2)
    k1_c, k2_c = np.divmod(k3, m2)
    consider(cost_c.reshape(rows, -1)[ar, flat_c], i_c, i_c, k1_c, k2_c)

    return DetectionBatch(
        i1=best["i1"], k1=best["k1"], i2=best["i2"], k2=best["k2"], cost=best_cost
    )


def _mdpsm_result(batch: DetectionBatch, receive_set: ReceiveSet, n_r: int) -> DetectionResult:
    config = SystemConfig.mdpsm(
        n_r,
        n_r,
        n_r,
        receive_set.omega_a.scheme.value,
        receive_set.omega_b.scheme.value,
        receive_set.theta,
    )
    i1, i2, k1, k2 = (int(batch.i1[0]), int(batch.i2[0]), int(batch.k1[0]), int(batch.k2[0]))
    return DetectionResult(
        i1=i1,
        k1=k1,
        i2=i2,
        k2=k2,
        cost=float(batch.cost[0]),
        bits=indices_to_bits(config, i1, k1, i2, k2),
    )


def detect_mdpsm_joint(r, receive_set: ReceiveSet) -> DetectionResult:
    r = np.asarray(r, dtype=np.complex128)
    return _mdpsm_result(detect_mdpsm_joint_batch(r[None], receive_set), receive_set, r.size)


def detect_mdpsm_fast(r, receive_set: ReceiveSet) -> DetectionResult:
    r = np.asarray(r, dtype=np.complex128)
    return _mdpsm_result(detect_mdpsm_fast_batch(r[None], receive_set), receive_set, r.size)


def hypothesis_cost(r, receive_set: ReceiveSet, i1: int, i2: int, k1: int, k2: int) -> float:
    """Cost of one MD-PSM hypothesis straight from its noiseless image."""
    r = np.asarray(r, dtype=np.complex128)
    h = np.zeros_like(r)
    h[i1] += receive_set.omega_a.points[k1]
    h[i2] += receive_set.omega_b.points[k2]
    return float(0.5 * np.sum(np.abs(r - h) ** 2) - 0.5 * np.sum(np.abs(r) ** 2))


def detector_for(config: SystemConfig, method: str = "fast"):
    """Batch detector closure over precomputed terms for `config`."""
    ab = alphabets(config)
    if not config.is_mdpsm:
        points = ab.omega_a.points
        return lambda r: detect_psm_batch(r, points)
    terms = precompute_terms(ab.receive_set)
    search = detect_mdpsm_fast_batch if method == "fast" else detect_mdpsm_joint_batch
    return lambda r: search(r, ab.receive_set, terms)


# ---------------------------------------------------------------------------
# Complexity
# ---------------------------------------------------------------------------


def count_complexity(config: SystemConfig) -> ComplexityCount:
    per_point = 3 + 2 * config.n_r
    s1 = Scheme.parse(config.scheme1)
    if not config.is_mdpsm:
        return ComplexityCount(
            label=config.label,
            bits_per_use=config.bits_per_use,
            real_multiplications=s1.order * per_point,
        )
    s2 = Scheme.parse(config.scheme2)
    m1, m2 = s1.order, s2.order
    saving = None
    if has_closed_form(s1, s2):
        psk_order = m1 if s1.is_psk else m2
        saving = 3 * psk_order + 3 * m1 * m2 - 4
    return ComplexityCount(
        label=config.label,
        bits_per_use=config.bits_per_use,
        real_multiplications=(m1 + m2 + m1 * m2) * per_point,
        closed_form_saving=saving,
    )


def complexity_table(configs: Sequence[SystemConfig]) -> pd.DataFrame:
    """Counts per system plus the MD-PSM/PSM ratio at equal spectral efficiency."""
    counts: List[ComplexityCount] = [count_complexity(c) for c in configs]
    psm_by_rate = {
        c.bits_per_use: n.real_multiplications
        for c, n in zip(configs, counts)
        if not c.is_mdpsm
    }
    rows = []
    for config, count in zip(configs, counts):
        reference = psm_by_rate.get(count.bits_per_use) if config.is_mdpsm else None
        ratio = None if reference is None else count.real_multiplications / reference
        rows.append(
            {
                "system": count.label,
                "bits_per_use": count.bits_per_use,
                "real_multiplications": count.real_multiplications,
                "ratio_to_psm": ratio,
                "closed_form_saving": count.closed_form_saving,
                "saving_ratio": count.saving_ratio,
            }
        )
    return pd.DataFrame(rows)
