"""Two-qubit polarization states and entanglement metrics.

Conventions used throughout the package:

* computational basis order is |HH>, |HV>, |VH>, |VV>; qubit 1 is the
  signal photon, qubit 2 the idler,
* the partial transpose is taken over qubit 2,
* analyzer settings are the six polarization eigenstates H, V, D, A, R, L
  with D/A = (H +/- V)/sqrt(2) and R/L = (H +/- iV)/sqrt(2).

Entanglement is scored by the log-negativity E = log2 of the trace norm of
the partially transposed matrix; E = 1 for a Bell state, 0 for separable
states.  The ebit rate of a link is E times its coincidence rate.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np

from .errors import ValidationError

HERMITICITY_TOL = 1e-9
TRACE_TOL = 1e-9
EIGENVALUE_TOL = -1e-9
PURITY_TOL = 1e-6

KET = {
    "H": np.array([1.0, 0.0], dtype=complex),
    "V": np.array([0.0, 1.0], dtype=complex),
    "D": np.array([1.0, 1.0], dtype=complex) / np.sqrt(2.0),
    "A": np.array([1.0, -1.0], dtype=complex) / np.sqrt(2.0),
    "R": np.array([1.0, 1.0j], dtype=complex) / np.sqrt(2.0),
    "L": np.array([1.0, -1.0j], dtype=complex) / np.sqrt(2.0),
}

SETTING_LABELS = ("H", "V", "D", "A", "R", "L")

# Complete-basis pairs; the four projector combinations of any pair of
# complete bases have probabilities summing to one.
BASIS_GROUPS = (("H", "V"), ("D", "A"), ("R", "L"))

BELL_KETS = {
    "phi+": np.array([1.0, 0.0, 0.0, 1.0], dtype=complex) / np.sqrt(2.0),
    "phi-": np.array([1.0, 0.0, 0.0, -1.0], dtype=complex) / np.sqrt(2.0),
    "psi+": np.array([0.0, 1.0, 1.0, 0.0], dtype=complex) / np.sqrt(2.0),
    "psi-": np.array([0.0, 1.0, -1.0, 0.0], dtype=complex) / np.sqrt(2.0),
}


class UnsupportedTargetError(ValidationError):
    """Fidelity was requested against a mixed (rank > 1) target."""


@dataclass(frozen=True)
class TwoQubitState:
    """A validated, immutable 4x4 density matrix.

    Construction rejects matrices that are not Hermitian and unit-trace
    within 1e-9 or have eigenvalues below -1e-9; inputs failing by more
    are rejected rather than silently repaired.
    """

    matrix: np.ndarray

    def __post_init__(self) -> None:
        m = np.array(self.matrix, dtype=complex)
        if m.shape != (4, 4):
            raise ValidationError(f"density matrix must be 4x4, got {m.shape}")
        herm = np.max(np.abs(m - m.conj().T))
        if herm > HERMITICITY_TOL:
            raise ValidationError(f"matrix is not Hermitian (max |rho - rho^+| = {herm:.3g})")
        tr = m.trace()
        if abs(tr - 1.0) > TRACE_TOL:
            raise ValidationError(f"trace must be 1, got {tr:.12g}")
        eigs = np.linalg.eigvalsh((m + m.conj().T) / 2.0)
        if eigs.min() < EIGENVALUE_TOL:
            raise ValidationError(f"matrix has negative eigenvalue {eigs.min():.3g}")
        m.flags.writeable = False
        object.__setattr__(self, "matrix", m)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, TwoQubitState):
            return NotImplemented
        return np.array_equal(self.matrix, other.matrix)

    def eigenvalues(self) -> np.ndarray:
        return np.linalg.eigvalsh(self.matrix)

    def purity(self) -> float:
        return float(np.real(np.trace(self.matrix @ self.matrix)))

    def is_pure(self, tol: float = PURITY_TOL) -> bool:
        eigs = np.sort(self.eigenvalues())
        return bool(eigs[-2] <= tol)

    def to_pairs(self) -> list[list[float]]:
        """Row-major list of 16 [re, im] pairs, the report serialization."""
        flat = self.matrix.reshape(16)
        return [[float(z.real), float(z.imag)] for z in flat]

    @classmethod
    def from_pairs(cls, pairs: Iterable[Iterable[float]]) -> "TwoQubitState":
        vals = [complex(re, im) for re, im in pairs]
        if len(vals) != 16:
            raise ValidationError(f"expected 16 complex pairs, got {len(vals)}")
        return cls(np.array(vals, dtype=complex).reshape(4, 4))


def bell_state(which: str) -> TwoQubitState:
    """One of the four Bell states, keyed 'phi+', 'phi-', 'psi+', 'psi-'."""
    try:
        ket = BELL_KETS[which]
    except KeyError:
        raise ValidationError(f"unknown Bell label {which!r}") from None
    return TwoQubitState(np.outer(ket, ket.conj()))


def werner_state(p: float, which: str = "psi+") -> TwoQubitState:
    """p * |Bell><Bell| + (1 - p) * I/4.

    Analytic oracle family: fidelity to the Bell state is (3p + 1)/4 and
    the log-negativity is max(0, log2((3p + 1)/2)).
    """
    if not 0.0 <= p <= 1.0:
        raise ValidationError(f"werner p must be in [0, 1], got {p}")
    ket = BELL_KETS.get(which)
    if ket is None:
        raise ValidationError(f"unknown Bell label {which!r}")
    return TwoQubitState(p * np.outer(ket, ket.conj()) + (1.0 - p) * np.eye(4) / 4.0)


def rotated_bell_ket(angle: float, which: str = "psi+") -> np.ndarray:
    """(U(angle) x I)|Bell>, with U a rotation in the H/V plane."""
    u = np.array(
        [[np.cos(angle), -np.sin(angle)], [np.sin(angle), np.cos(angle)]], dtype=complex
    )
    return np.kron(u, np.eye(2, dtype=complex)) @ BELL_KETS[which]


def fidelity(state: TwoQubitState, target: TwoQubitState) -> float:
    """<psi|rho|psi> against a pure target."""
    if not target.is_pure():
        raise UnsupportedTargetError("fidelity target must be pure (rank 1)")
    eigs, vecs = np.linalg.eigh(target.matrix)
    psi = vecs[:, int(np.argmax(eigs))]
    value = float(np.real(psi.conj() @ state.matrix @ psi))
    return min(max(value, 0.0), 1.0)


def partial_transpose(matrix: np.ndarray) -> np.ndarray:
    """Transpose over qubit 2.  An involution: applying twice is identity."""
    m = np.asarray(matrix, dtype=complex).reshape(2, 2, 2, 2)
    return m.transpose(0, 3, 2, 1).reshape(4, 4)


def log_negativity(state: TwoQubitState) -> float:
    """log2 of the trace norm of the partial transpose, clipped at 0."""
    pt = partial_transpose(state.matrix)
    trace_norm = float(np.sum(np.abs(np.linalg.eigvalsh(pt))))
    return max(0.0, float(np.log2(trace_norm)))


def ebit_rate(log_neg: float, coincidence_rate: float) -> float:
    """Entanglement bandwidth in ebits/s: log-negativity times pair rate."""
    if log_neg < 0.0 or coincidence_rate < 0.0:
        raise ValidationError("ebit_rate inputs must be non-negative")
    return log_neg * coincidence_rate


def random_state(rng: np.random.Generator, rank: int = 4) -> TwoQubitState:
    """Random physical state (Ginibre construction), for property tests."""
    g = rng.normal(size=(4, rank)) + 1j * rng.normal(size=(4, rank))
    m = g @ g.conj().T
    return TwoQubitState(m / np.trace(m))


# ---------------------------------------------------------------------------
# Polarization tomography: 36 two-sided projector settings.

@dataclass(frozen=True)
class TomographyCounts:
    """Counts for the 36 analyzer settings, indexed [side1, side2] in the
    fixed label order H, V, D, A, R, L."""

    table: np.ndarray

    def __post_init__(self) -> None:
        t = np.array(self.table, dtype=float)
        if t.shape != (6, 6):
            raise ValidationError(f"tomography table must be 6x6, got {t.shape}")
        if np.any(t < 0):
            raise ValidationError("tomography counts must be non-negative")
        t.flags.writeable = False
        object.__setattr__(self, "table", t)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, TomographyCounts):
            return NotImplemented
        return np.array_equal(self.table, other.table)

    def count(self, setting_a: str, setting_b: str) -> float:
        return float(self.table[SETTING_LABELS.index(setting_a), SETTING_LABELS.index(setting_b)])

    def total(self) -> float:
        return float(self.table.sum())

    @classmethod
    def from_dict(cls, counts: Mapping[tuple[str, str], float]) -> "TomographyCounts":
        table = np.zeros((6, 6))
        seen = set()
        for (a, b), c in counts.items():
            if a not in SETTING_LABELS or b not in SETTING_LABELS:
                raise ValidationError(f"unknown analyzer setting pair ({a!r}, {b!r})")
            table[SETTING_LABELS.index(a), SETTING_LABELS.index(b)] = c
            seen.add((a, b))
        missing = [
            (a, b) for a in SETTING_LABELS for b in SETTING_LABELS if (a, b) not in seen
        ]
        if missing:
            raise ValidationError(f"missing tomography settings: {missing[:4]}...")
        return cls(table)

    def to_dict(self) -> dict[tuple[str, str], float]:
        return {
            (a, b): float(self.table[i, j])
            for i, a in enumerate(SETTING_LABELS)
            for j, b in enumerate(SETTING_LABELS)
        }


def _projector(label: str) -> np.ndarray:
    ket = KET[label]
    return np.outer(ket, ket.conj())


_JOINT_PROJECTORS = {
    (a, b): np.kron(_projector(a), _projector(b))
    for a in SETTING_LABELS
    for b in SETTING_LABELS
}


def joint_probability(state: TwoQubitState, setting_a: str, setting_b: str) -> float:
    """Born-rule pass probability for one two-sided analyzer setting."""
    p = float(np.real(np.trace(state.matrix @ _JOINT_PROJECTORS[(setting_a, setting_b)])))
    return min(max(p, 0.0), 1.0)


def tomography_probabilities(state: TwoQubitState) -> np.ndarray:
    """6x6 table of exact joint pass probabilities (infinite statistics)."""
    probs = np.zeros((6, 6))
    for i, a in enumerate(SETTING_LABELS):
        for j, b in enumerate(SETTING_LABELS):
            probs[i, j] = joint_probability(state, a, b)
    return probs


def _pauli_basis() -> np.ndarray:
    """16 orthonormal Hermitian 4x4 matrices (Pauli products / 2)."""
    paulis = [
        np.eye(2, dtype=complex),
        np.array([[0, 1], [1, 0]], dtype=complex),
        np.array([[0, -1j], [1j, 0]], dtype=complex),
        np.array([[1, 0], [0, -1]], dtype=complex),
    ]
    return np.array([np.kron(p, q) / 2.0 for p in paulis for q in paulis])


_PAULI_BASIS = _pauli_basis()

# Design matrix mapping the 16 real Pauli components to the 36 setting
# probabilities; full column rank, so least squares is exact on noiseless data.
_DESIGN = np.array(
    [
        [np.real(np.trace(_JOINT_PROJECTORS[(a, b)] @ bk)) for bk in _PAULI_BASIS]
        for a in SETTING_LABELS
        for b in SETTING_LABELS
    ]
)


def _group_of(label: str) -> tuple[str, str]:
    for group in BASIS_GROUPS:
        if label in group:
            return group
    raise ValidationError(f"unknown setting {label!r}")


def reconstruct_state(counts: TomographyCounts) -> TwoQubitState:
    """Linear least-squares tomography with projection to the physical set.

    Each count is normalized by the total of its complete-basis group
    (e.g. HH + HV + VH + VV), the 16 Pauli components are solved by least
    squares, and negative eigenvalues of the result are clipped to zero
    before renormalizing the trace.
    """
    table = counts.table
    freqs = np.zeros(36)
    idx = 0
    for a in SETTING_LABELS:
        ga = _group_of(a)
        for b in SETTING_LABELS:
            gb = _group_of(b)
            total = sum(counts.count(x, y) for x in ga for y in gb)
            if total <= 0:
                raise ValidationError(
                    f"no counts in basis group ({'/'.join(ga)}, {'/'.join(gb)})"
                )
            freqs[idx] = table[SETTING_LABELS.index(a), SETTING_LABELS.index(b)] / total
            idx += 1
    components, *_ = np.linalg.lstsq(_DESIGN, freqs, rcond=None)
    rho = np.tensordot(components, _PAULI_BASIS, axes=1)
    rho = (rho + rho.conj().T) / 2.0
    eigs, vecs = np.linalg.eigh(rho)
    eigs = np.clip(eigs, 0.0, None)
    if eigs.sum() <= 0:
        raise ValidationError("reconstruction produced an all-zero spectrum")
    eigs /= eigs.sum()
    rho = (vecs * eigs) @ vecs.conj().T
    return TwoQubitState((rho + rho.conj().T) / 2.0)


@dataclass(frozen=True)
class LinkMetrics:
    """Per-link scorecard: fidelity, log-negativity, pair rate, ebit rate,
    each with a one-sigma uncertainty."""

    fidelity: float
    log_negativity: float
    coincidence_rate: float
    ebit_rate: float = field(default=-1.0)
    fidelity_sigma: float = 0.0
    log_negativity_sigma: float = 0.0
    coincidence_rate_sigma: float = 0.0
    ebit_rate_sigma: float = 0.0

    def __post_init__(self) -> None:
        if not -1e-9 <= self.fidelity <= 1.0 + 1e-9:
            raise ValidationError(f"fidelity out of [0, 1]: {self.fidelity}")
        if self.log_negativity < 0.0 or self.log_negativity > 1.0 + 1e-9:
            raise ValidationError(f"log-negativity out of [0, 1]: {self.log_negativity}")
        if self.coincidence_rate < 0.0:
            raise ValidationError("coincidence rate must be non-negative")
        expected = self.log_negativity * self.coincidence_rate
        if self.ebit_rate < 0.0:
            object.__setattr__(self, "ebit_rate", expected)
        elif abs(self.ebit_rate - expected) > 1e-9 * max(1.0, abs(expected)):
            raise ValidationError(
                f"ebit_rate {self.ebit_rate} inconsistent with E*C = {expected}"
            )
