"""
Constellation Service
=====================

Builds the signal alphabets used by both base stations, the rotated set of
the second base station and the receive constellation seen at the mobile.

Receive constellation
---------------------

    Ω_a            alphabet of BS 1 (unrotated)
    Ω_b = Ω e^{jθ} alphabet of BS 2, rotated by θ
    Ω_c = Ω_a ⊕ Ω_b  Minkowski sum, enumerated in (k1, k2) lexicographic order
                     so that k3 = k1·M2 + k2 (0-based)
    Ω_d = Ω_a ∪ Ω_b ∪ Ω_c

Ω_d is usable by the receiver only when Ω_a ∩ Ω_b = ∅ and every Minkowski
sum is distinct; both are checked with an absolute collision tolerance.

Closed-form energy terms
------------------------
For unit-energy PSK points s1 = e^{ja1} and s2 = r e^{jψ}:

    |s1 + s2 e^{jθ}|² / 2 = (1 + r²)/2 + r·cos(θ + ψ − a1)

PSK–PSK rows depend only on δ = a2 − a1 and 16QAM rows on the four
subsets (radius, first angle) of the 16QAM decomposition. Angles given to
public functions are in degrees; φ values are returned in radians.
"""

import json
import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import List, Optional, Sequence

import numpy as np

from app.utils.bits import bits_to_int, gray_code, int_to_bits, is_power_of_two, log2_int
from app.utils.errors import (
    ConfigurationError,
    DomainError,
    UnsupportedClosedFormError,
)

logger = logging.getLogger(__name__)

# Two points closer than this are the same symbol.
COLLISION_TOL = 1e-9

ALPHA = math.atan(1.0 / 3.0)


class Scheme(str, Enum):
    BPSK = "BPSK"
    QPSK = "QPSK"
    PSK8 = "8PSK"
    QAM16 = "16QAM"
    # PSM baseline only (equal spectral efficiency comparisons)
    QAM64 = "64QAM"

    @property
    def bits(self) -> int:
        return SCHEME_BITS[self]

    @property
    def order(self) -> int:
        return 1 << self.bits

    @property
    def is_psk(self) -> bool:
        return self in (Scheme.BPSK, Scheme.QPSK, Scheme.PSK8)

    @property
    def baseline_only(self) -> bool:
        return self is Scheme.QAM64

    @classmethod
    def parse(cls, value) -> "Scheme":
        if isinstance(value, Scheme):
            return value
        key = str(value).strip().upper().replace("-", "")
        aliases = {"PSK8": "8PSK", "QAM16": "16QAM", "QAM64": "64QAM", "4QAM": "QPSK"}
        key = aliases.get(key, key)
        try:
            return cls(key)
        except ValueError:
            raise ConfigurationError(
                f"unsupported modulation scheme {value!r}", field="scheme"
            ) from None


SCHEME_BITS = {
    Scheme.BPSK: 1,
    Scheme.QPSK: 2,
    Scheme.PSK8: 3,
    Scheme.QAM16: 4,
    Scheme.QAM64: 6,
}


# ---------------------------------------------------------------------------
# Data containers
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Constellation:
    points: np.ndarray
    labels: np.ndarray
    scheme: Scheme

    @property
    def order(self) -> int:
        return int(self.points.size)

    @property
    def bits_per_symbol(self) -> int:
        return log2_int(self.order)

    @property
    def index_of_label(self) -> np.ndarray:
        inverse = np.empty(self.order, dtype=np.int64)
        inverse[self.labels] = np.arange(self.order)
        return inverse

    @property
    def half_energy(self) -> np.ndarray:
        return np.abs(self.points) ** 2 / 2.0

    def label_bits(self) -> np.ndarray:
        return int_to_bits(self.labels, self.bits_per_symbol)


@dataclass(frozen=True, eq=False)
class RotatedConstellation:
    base: Constellation
    theta: float

    @property
    def points(self) -> np.ndarray:
        return self.base.points * np.exp(1j * math.radians(self.theta))

    @property
    def labels(self) -> np.ndarray:
        return self.base.labels

    @property
    def scheme(self) -> Scheme:
        return self.base.scheme

    @property
    def order(self) -> int:
        return self.base.order

    @property
    def bits_per_symbol(self) -> int:
        return self.base.bits_per_symbol

    @property
    def index_of_label(self) -> np.ndarray:
        return self.base.index_of_label

    @property
    def half_energy(self) -> np.ndarray:
        return self.base.half_energy


@dataclass(frozen=True, eq=False)
class ReceiveSet:
    omega_a: Constellation
    omega_b: RotatedConstellation
    omega_c: np.ndarray
    omega_d: np.ndarray
    disjoint_ok: bool
    minkowski_ok: bool
    uniqueness_ok: bool

    @property
    def theta(self) -> float:
        return self.omega_b.theta

    @property
    def expected_size(self) -> int:
        m1, m2 = self.omega_a.order, self.omega_b.order
        return m1 + m2 + m1 * m2


@dataclass(frozen=True)
class SubsetDescriptor:
    radius: float
    phi: float
    count: int

    def points(self) -> np.ndarray:
        angles = self.phi + 2.0 * np.pi * np.arange(self.count) / self.count
        return self.radius * np.exp(1j * angles)


@dataclass(frozen=True)
class EnergyTerm:
    value: float
    multiplicity: int
    phi: Optional[float] = None
    label: str = ""


@dataclass(frozen=True)
class SymbolProbabilities:
    class_a: float
    class_b: float
    class_c: float
    per_symbol_a: float
    per_symbol_b: float
    per_symbol_c: float

    @property
    def unequal_index(self) -> float:
        return self.class_a

    @property
    def equal_index(self) -> float:
        return self.class_c


# ---------------------------------------------------------------------------
# Alphabets
# ---------------------------------------------------------------------------

_EXACT_PSK = {
    1: np.array([1.0 + 0j]),
    2: np.array([1.0 + 0j, -1.0 + 0j]),
    4: np.array([1.0 + 0j, 1j, -1.0 + 0j, -1j]),
}


def psk_points(order: int) -> np.ndarray:
    """Unit-circle M-PSK points, first point at phase 0, counter-clockwise."""
    if not is_power_of_two(order):
        raise ConfigurationError(f"PSK order must be a power of two, got {order}")
    if order in _EXACT_PSK:
        return _EXACT_PSK[order].copy()
    return np.exp(2j * np.pi * np.arange(order) / order)


def _square_qam(order: int):
    side = math.isqrt(order)
    half_bits = log2_int(side)
    levels = 2.0 * np.arange(side) - (side - 1)
    scale = math.sqrt(2.0 * (order - 1) / 3.0)
    i_idx, q_idx = np.divmod(np.arange(order), side)
    points = (levels[i_idx] + 1j * levels[q_idx]) / scale
    labels = (gray_code(i_idx) << half_bits) | gray_code(q_idx)
    return points, labels.astype(np.int64)


def make_constellation(scheme, q: Optional[int] = None) -> Constellation:
    """Unit average energy, Gray labelled alphabet for `scheme`."""
    scheme = Scheme.parse(scheme)
    if q is not None and int(q) != scheme.bits:
        raise ConfigurationError(
            f"{scheme.value} carries {scheme.bits} bits per symbol, got q={q}",
            field="q",
        )
    order = scheme.order
    if scheme.is_psk:
        points = psk_points(order)
        labels = gray_code(np.arange(order, dtype=np.int64))
    else:
        points, labels = _square_qam(order)
    return Constellation(points=points, labels=labels, scheme=scheme)


def scheme_for_bits(q: int) -> Scheme:
    """q ≤ 3 maps to PSK, 4 and 6 to square QAM."""
    for scheme, bits in SCHEME_BITS.items():
        if bits == q:
            return scheme
    raise ConfigurationError(f"no supported alphabet carries q={q} bits", field="q")


def rotate(c: Constellation, theta: float) -> RotatedConstellation:
    if isinstance(c, RotatedConstellation):
        return RotatedConstellation(base=c.base, theta=(c.theta + theta) % 360.0)
    return RotatedConstellation(base=c, theta=float(theta) % 360.0)


def qam16_subsets() -> List[SubsetDescriptor]:
    """The four scaled 4QAM subsets of unit-energy 16QAM."""
    return [
        SubsetDescriptor(radius=math.sqrt(0.2), phi=math.pi / 4, count=4),
        SubsetDescriptor(radius=math.sqrt(1.8), phi=math.pi / 4, count=4),
        SubsetDescriptor(radius=1.0, phi=ALPHA, count=4),
        SubsetDescriptor(radius=1.0, phi=math.pi / 2 - ALPHA, count=4),
    ]


def to_json(c) -> str:
    bits = c.label_bits() if isinstance(c, Constellation) else c.base.label_bits()
    rows = [
        [float(p.real), float(p.imag), "".join(str(b) for b in label)]
        for p, label in zip(c.points, bits)
    ]
    return json.dumps(rows)


def labels_to_bits(c, indices) -> np.ndarray:
    """Label bits (MSB first) of the symbols at `indices`."""
    return int_to_bits(c.labels[np.asarray(indices)], c.bits_per_symbol)


def bits_to_labels(c, bits) -> np.ndarray:
    """Symbol indices whose labels equal the trailing-axis bit groups."""
    return c.index_of_label[bits_to_int(bits)]


# ---------------------------------------------------------------------------
# Distances and the receive set
# ---------------------------------------------------------------------------


def pairwise_distances(points: Sequence[complex]) -> np.ndarray:
    pts = np.asarray(points, dtype=np.complex128).ravel()
    iu = np.triu_indices(pts.size, k=1)
    return np.abs(pts[:, None] - pts[None, :])[iu]


def dmin(points: Sequence[complex]) -> float:
    """Minimum pairwise Euclidean distance (not squared)."""
    pts = np.asarray(points, dtype=np.complex128).ravel()
    if pts.size < 2:
        raise DomainError("dmin needs at least two points")
    return float(pairwise_distances(pts).min())


def distinct_points(points: Sequence[complex], tol: float = COLLISION_TOL) -> np.ndarray:
    """Points with later near-duplicates removed, first occurrence order kept."""
    pts = np.asarray(points, dtype=np.complex128).ravel()
    if pts.size < 2:
        return pts.copy()
    close = np.abs(pts[:, None] - pts[None, :]) < tol
    duplicate = np.triu(close, k=1).any(axis=0)
    return pts[~duplicate]


def _all_distinct(points: np.ndarray, tol: float) -> bool:
    return points.size < 2 or bool(pairwise_distances(points).min() >= tol)


def minkowski_sum(a_points: np.ndarray, b_points: np.ndarray) -> np.ndarray:
    return (np.asarray(a_points)[:, None] + np.asarray(b_points)[None, :]).ravel()


def evaluate_receive_points(pa, pb, tol: float = COLLISION_TOL):
    """(Ω_c, Ω_d, disjoint_ok, minkowski_ok, uniqueness_ok) for raw point arrays."""
    pa = np.asarray(pa, dtype=np.complex128)
    pb = np.asarray(pb, dtype=np.complex128)
    omega_c = minkowski_sum(pa, pb)

    disjoint_ok = bool(np.abs(pa[:, None] - pb[None, :]).min() >= tol)
    minkowski_ok = _all_distinct(omega_c, tol)
    union = np.concatenate([pa, pb, omega_c])
    uniqueness_ok = disjoint_ok and minkowski_ok and _all_distinct(union, tol)
    return omega_c, distinct_points(union, tol), disjoint_ok, minkowski_ok, uniqueness_ok


def build_receive_set(
    a: Constellation, b: RotatedConstellation, tol: float = COLLISION_TOL
) -> ReceiveSet:
    if a.scheme.baseline_only or b.scheme.baseline_only:
        raise ConfigurationError(
            "64QAM is only available for the single-BS baseline", field="scheme"
        )
    omega_c, omega_d, disjoint_ok, minkowski_ok, uniqueness_ok = evaluate_receive_points(
        a.points, b.points, tol
    )
    return ReceiveSet(
        omega_a=a,
        omega_b=b,
        omega_c=omega_c,
        omega_d=omega_d,
        disjoint_ok=disjoint_ok,
        minkowski_ok=minkowski_ok,
        uniqueness_ok=uniqueness_ok,
    )


def receive_set_for(scheme_a, scheme_b, theta: float) -> ReceiveSet:
    return build_receive_set(
        make_constellation(scheme_a), rotate(make_constellation(scheme_b), theta)
    )


# ---------------------------------------------------------------------------
# Closed forms
# ---------------------------------------------------------------------------

# (label, δ) with δ = a2 − a1; first 2 rows cover BPSK, 4 QPSK, 8 8PSK.
PSK_ROWS = [
    ("1+cos(θ)", 0.0),
    ("1-cos(θ)", math.pi),
    ("1+sin(θ)", -math.pi / 2),
    ("1-sin(θ)", math.pi / 2),
    ("1+cos(θ+π/4)", math.pi / 4),
    ("1-cos(θ+π/4)", -3 * math.pi / 4),
    ("1+sin(θ+π/4)", -math.pi / 4),
    ("1-sin(θ+π/4)", 3 * math.pi / 4),
]


def _psk_psk_terms(m1: int, m2: int, theta: float) -> List[EnergyTerm]:
    larger, count = max(m1, m2), min(m1, m2)
    terms = []
    for label, delta in PSK_ROWS[:larger]:
        value = 1.0 + math.cos(theta + delta)
        phi = (theta + delta) / 2.0 if m1 <= m2 else (theta - delta) / 2.0
        terms.append(EnergyTerm(value=value, multiplicity=count, phi=phi, label=label))
    return terms


def _qam16_rows():
    for subset in qam16_subsets():
        for l in range(subset.count):
            yield subset.radius, subset.phi + 2.0 * math.pi * l / subset.count


def _psk_phase_classes(order: int):
    """PSK phases grouped modulo π/2 (the 16QAM symmetry): {offset: count}."""
    period = max(order // 4, 1)
    classes = {}
    for k in range(order):
        offset = 2.0 * math.pi * (k % period) / order
        classes[offset] = classes.get(offset, 0) + 1
    return classes


def _psk_qam16_terms(psk_order: int, theta: float, psk_first: bool) -> List[EnergyTerm]:
    terms = []
    for offset, count in sorted(_psk_phase_classes(psk_order).items()):
        shifted = theta - offset if psk_first else theta + offset
        for radius, psi in _qam16_rows():
            c = (1.0 + radius**2) / 2.0
            terms.append(
                EnergyTerm(
                    value=c + radius * math.cos(shifted + psi),
                    multiplicity=count,
                    label=f"{c:.1f}+{radius:.4f}cos(θ{math.degrees(psi):+.3f}°)"
                    + (f" @θ∓{math.degrees(offset):g}°" if offset else ""),
                )
            )
    return terms


def closed_form_energy_terms(scheme_a, scheme_b, theta: float) -> List[EnergyTerm]:
    """Half squared norms of Ω_c from the closed-form tables (θ in degrees)."""
    sa, sb = Scheme.parse(scheme_a), Scheme.parse(scheme_b)
    th = math.radians(theta)
    if sa.is_psk and sb.is_psk:
        return _psk_psk_terms(sa.order, sb.order, th)
    if sa.is_psk and sb is Scheme.QAM16:
        return _psk_qam16_terms(sa.order, th, psk_first=True)
    if sa is Scheme.QAM16 and sb.is_psk:
        return _psk_qam16_terms(sb.order, th, psk_first=False)
    raise UnsupportedClosedFormError(
        f"no closed form for {sa.value}-{sb.value}; use brute-force evaluation"
    )


def has_closed_form(scheme_a, scheme_b) -> bool:
    sa, sb = Scheme.parse(scheme_a), Scheme.parse(scheme_b)
    if sa.baseline_only or sb.baseline_only:
        return False
    return not (sa is Scheme.QAM16 and sb is Scheme.QAM16)


def expand_energy_terms(terms: Sequence[EnergyTerm]) -> np.ndarray:
    """Flatten terms into a sorted multiset of values."""
    values = [t.value for t in terms for _ in range(t.multiplicity)]
    return np.sort(np.asarray(values, dtype=np.float64))


def brute_force_energy_terms(receive_set: ReceiveSet) -> np.ndarray:
    return np.abs(receive_set.omega_c) ** 2 / 2.0


def subset_descriptors(scheme_a, scheme_b, theta: float) -> List[SubsetDescriptor]:
    """Equal-norm subsets of Ω_c for PSK–PSK combinations."""
    terms = closed_form_energy_terms(scheme_a, scheme_b, theta)
    if any(t.phi is None for t in terms):
        raise UnsupportedClosedFormError("subset phases are only tabulated for PSK-PSK")
    return [
        SubsetDescriptor(
            radius=math.sqrt(max(2.0 * t.value, 0.0)), phi=t.phi, count=t.multiplicity
        )
        for t in terms
    ]


# ---------------------------------------------------------------------------
# Symbol probabilities
# ---------------------------------------------------------------------------


def symbol_probabilities(n_r: int, m1: int, m2: int) -> SymbolProbabilities:
    if not is_power_of_two(n_r) or n_r < 2:
        raise ConfigurationError(f"n_R must be a power of two >= 2, got {n_r}", field="n_r")
    unequal = 1.0 - 1.0 / n_r
    return SymbolProbabilities(
        class_a=unequal,
        class_b=unequal,
        class_c=1.0 / n_r,
        per_symbol_a=(n_r - 1) / (m1 * n_r),
        per_symbol_b=(n_r - 1) / (m2 * n_r),
        per_symbol_c=1.0 / (m1 * m2 * n_r),
    )


def point_weights(m1: int, m2: int, n_r: int) -> np.ndarray:
    """Per-point occurrence probabilities aligned with Ω_a ‖ Ω_b ‖ Ω_c."""
    probs = symbol_probabilities(n_r, m1, m2)
    return np.concatenate(
        [
            np.full(m1, probs.per_symbol_a),
            np.full(m2, probs.per_symbol_b),
            np.full(m1 * m2, probs.per_symbol_c),
        ]
    )


def symbol_weights(receive_set: ReceiveSet, n_r: int) -> np.ndarray:
    return point_weights(receive_set.omega_a.order, receive_set.omega_b.order, n_r)
