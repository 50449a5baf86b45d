"""
Polarization-qubit linear algebra.

Every photon uses the basis |H> = index 0, |V> = index 1. Multi-photon
vectors are Kronecker products taken in photon-label order: the lowest
label is the leftmost factor, i.e. the most significant bit of the index.
So for photons (1, 2) the index of |H_1 V_2> is 0b01 = 1.

States are immutable; all functions here are pure.
"""
import enum
import math
from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np

NORM_TOL = 1e-12
HERMITIAN_TOL = 1e-12
TRACE_TOL = 1e-12
PSD_FLOOR = -1e-10

_SQRT2 = math.sqrt(2.0)

PAULI_I = np.eye(2, dtype=complex)
PAULI_X = np.array([[0, 1], [1, 0]], dtype=complex)
PAULI_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
PAULI_Z = np.array([[1, 0], [0, -1]], dtype=complex)


def _frozen(array: np.ndarray) -> np.ndarray:
    array.setflags(write=False)
    return array


def _qubit_count(dimension: int) -> int:
    n = dimension.bit_length() - 1
    if dimension < 2 or 1 << n != dimension:
        raise ValueError(f"dimension {dimension} is not a power of two")
    return n


@dataclass(frozen=True, eq=False)
class PureState:
    """Normalized state vector over one or more polarization qubits."""

    amplitudes: np.ndarray

    def __post_init__(self):
        amplitudes = np.array(self.amplitudes, dtype=complex).ravel()
        _qubit_count(amplitudes.size)
        norm = float(np.vdot(amplitudes, amplitudes).real)
        if abs(norm - 1.0) > NORM_TOL:
            raise ValueError(f"state is not normalized (squared norm {norm!r})")
        object.__setattr__(self, "amplitudes", _frozen(amplitudes))

    @classmethod
    def normalized(cls, amplitudes) -> "PureState":
        vector = np.asarray(amplitudes, dtype=complex).ravel()
        norm = np.linalg.norm(vector)
        if norm == 0:
            raise ValueError("cannot normalize the zero vector")
        return cls(vector / norm)

    @classmethod
    def from_label(cls, label: str) -> "PureState":
        """One of the six polarization states H, V, +, -, R, L."""
        try:
            return cls(_LABELLED[label])
        except KeyError:
            raise ValueError(f"unknown polarization label {label!r}") from None

    @property
    def n_qubits(self) -> int:
        return _qubit_count(self.amplitudes.size)

    def overlap(self, other: "PureState") -> complex:
        return complex(np.vdot(self.amplitudes, other.amplitudes))

    def same_ray(self, other: "PureState", tol: float = 1e-10) -> bool:
        """Equality up to global phase."""
        if self.amplitudes.size != other.amplitudes.size:
            return False
        return abs(abs(self.overlap(other)) - 1.0) <= tol

    def orthogonal(self) -> "PureState":
        """The orthogonal single-qubit state (a, b) -> (-b*, a*)."""
        if self.n_qubits != 1:
            raise ValueError("orthogonal() is defined for single qubits")
        a, b = self.amplitudes
        return PureState([-np.conj(b), np.conj(a)])

    def apply(self, unitary: np.ndarray) -> "PureState":
        return PureState.normalized(unitary @ self.amplitudes)

    def density(self) -> "DensityMatrix":
        return DensityMatrix(np.outer(self.amplitudes, self.amplitudes.conj()))

    def __repr__(self):
        return f"PureState({np.array2string(self.amplitudes, precision=4)})"


_LABELLED = {
    "H": [1, 0],
    "V": [0, 1],
    "+": [1 / _SQRT2, 1 / _SQRT2],
    "-": [1 / _SQRT2, -1 / _SQRT2],
    "R": [1 / _SQRT2, 1j / _SQRT2],
    "L": [1 / _SQRT2, -1j / _SQRT2],
}
POLARIZATION_LABELS = tuple(_LABELLED)


@dataclass(frozen=True, eq=False)
class DensityMatrix:
    """Hermitian, unit-trace, positive semidefinite matrix."""

    entries: np.ndarray

    def __post_init__(self):
        entries = np.array(self.entries, dtype=complex)
        if entries.ndim != 2 or entries.shape[0] != entries.shape[1]:
            raise ValueError(f"density matrix must be square, got {entries.shape}")
        _qubit_count(entries.shape[0])
        if np.max(np.abs(entries - entries.conj().T)) > HERMITIAN_TOL:
            raise ValueError("density matrix is not Hermitian")
        trace = np.trace(entries).real
        if abs(trace - 1.0) > TRACE_TOL:
            raise ValueError(f"density matrix trace is {trace!r}, expected 1")
        smallest = np.linalg.eigvalsh(entries)[0]
        if smallest < PSD_FLOOR:
            raise ValueError(f"density matrix has negative eigenvalue {smallest!r}")
        object.__setattr__(self, "entries", _frozen(entries))

    @classmethod
    def from_unnormalized(cls, entries: np.ndarray) -> "DensityMatrix":
        """Hermitize and rescale to unit trace, absorbing rounding."""
        entries = np.asarray(entries, dtype=complex)
        entries = (entries + entries.conj().T) / 2
        return cls(entries / np.trace(entries).real)

    @property
    def n_qubits(self) -> int:
        return _qubit_count(self.entries.shape[0])

    def expectation(self, observable: np.ndarray) -> float:
        return float(np.trace(self.entries @ observable).real)

    def purity(self) -> float:
        return float(np.trace(self.entries @ self.entries).real)

    def __repr__(self):
        return f"DensityMatrix(n_qubits={self.n_qubits})"


def maximally_mixed(n_qubits: int) -> DensityMatrix:
    dimension = 2**n_qubits
    return DensityMatrix(np.eye(dimension) / dimension)


def mix(states: Sequence[DensityMatrix], weights: Sequence[float]) -> DensityMatrix:
    weights = np.asarray(weights, dtype=float)
    if np.any(weights < 0) or abs(weights.sum() - 1.0) > 1e-12:
        raise ValueError("mixture weights must be non-negative and sum to 1")
    entries = sum(w * s.entries for w, s in zip(weights, states))
    return DensityMatrix.from_unnormalized(entries)


def partial_trace(rho: DensityMatrix, keep: Sequence[int]) -> DensityMatrix:
    """Reduce ``rho`` to the qubits at positions ``keep`` (0 = leftmost)."""
    n = rho.n_qubits
    keep = sorted(keep)
    if not keep or any(q < 0 or q >= n for q in keep):
        raise ValueError(f"invalid qubits {keep} for a {n}-qubit state")
    tensor = rho.entries.reshape([2] * (2 * n))
    traced = [q for q in range(n) if q not in keep]
    # trace pairs from the highest index down so earlier axes keep their place
    for q in sorted(traced, reverse=True):
        current = tensor.ndim // 2
        tensor = np.trace(tensor, axis1=q, axis2=q + current)
    dimension = 2 ** len(keep)
    return DensityMatrix.from_unnormalized(tensor.reshape(dimension, dimension))


class BellIndex(enum.Enum):
    PHI_PLUS = "PhiPlus"
    PHI_MINUS = "PhiMinus"
    PSI_PLUS = "PsiPlus"
    PSI_MINUS = "PsiMinus"

    @property
    def correction(self) -> "PauliCorrection":
        return _CORRECTIONS[self]

    @property
    def partner(self) -> "BellIndex":
        """The Bell state sharing this one's PBS coincidence pattern."""
        return _PARTNERS[self]


class PauliCorrection(enum.Enum):
    I = "I"
    Z = "Z"
    X = "X"
    XZ = "XZ"

    @property
    def matrix(self) -> np.ndarray:
        return _PAULI_MATRICES[self]


_PAULI_MATRICES = {
    PauliCorrection.I: _frozen(PAULI_I.copy()),
    PauliCorrection.Z: _frozen(PAULI_Z.copy()),
    PauliCorrection.X: _frozen(PAULI_X.copy()),
    PauliCorrection.XZ: _frozen(PAULI_X @ PAULI_Z),
}

_CORRECTIONS = {
    BellIndex.PHI_PLUS: PauliCorrection.I,
    BellIndex.PHI_MINUS: PauliCorrection.Z,
    BellIndex.PSI_PLUS: PauliCorrection.X,
    BellIndex.PSI_MINUS: PauliCorrection.XZ,
}

_PARTNERS = {
    BellIndex.PHI_PLUS: BellIndex.PHI_MINUS,
    BellIndex.PHI_MINUS: BellIndex.PHI_PLUS,
    BellIndex.PSI_PLUS: BellIndex.PSI_MINUS,
    BellIndex.PSI_MINUS: BellIndex.PSI_PLUS,
}

_BELL_VECTORS = {
    BellIndex.PHI_PLUS: np.array([1, 0, 0, 1]) / _SQRT2,
    BellIndex.PHI_MINUS: np.array([1, 0, 0, -1]) / _SQRT2,
    BellIndex.PSI_PLUS: np.array([0, 1, 1, 0]) / _SQRT2,
    BellIndex.PSI_MINUS: np.array([0, 1, -1, 0]) / _SQRT2,
}


@dataclass(frozen=True)
class MeasurementSetting:
    """Linear-polarization analyzer angle in radians, reduced mod pi."""

    angle: float

    def __post_init__(self):
        object.__setattr__(self, "angle", float(self.angle) % math.pi)

    @property
    def observable(self) -> np.ndarray:
        """+1 on the analyzer axis, -1 on the orthogonal axis."""
        c, s = math.cos(2 * self.angle), math.sin(2 * self.angle)
        return np.array([[c, s], [s, -c]], dtype=complex)

    def projectors(self) -> tuple[np.ndarray, np.ndarray]:
        c, s = math.cos(self.angle), math.sin(self.angle)
        along = np.array([c, s], dtype=complex)
        across = np.array([-s, c], dtype=complex)
        return np.outer(along, along), np.outer(across, across)


def _setting(value) -> MeasurementSetting:
    if isinstance(value, MeasurementSetting):
        return value
    return MeasurementSetting(value)


def _state(value) -> PureState:
    if isinstance(value, PureState):
        return value
    return PureState(value)


def _require_qubits(rho: DensityMatrix, n: int, name: str = "rho"):
    if not isinstance(rho, DensityMatrix):
        raise ValueError(f"{name} must be a DensityMatrix")
    if rho.n_qubits != n:
        raise ValueError(f"{name} must describe {n} qubit(s), got {rho.n_qubits}")


def bell_state(k: BellIndex) -> PureState:
    return PureState(_BELL_VECTORS[BellIndex(k)])


def bell_diagonal(weights: Sequence[float]) -> DensityMatrix:
    """Mixture of |Phi+>, |Phi->, |Psi+>, |Psi-> with the given weights."""
    weights = np.asarray(weights, dtype=float)
    if weights.shape != (4,):
        raise ValueError("bell_diagonal needs exactly four weights")
    entries = sum(
        w * np.outer(v, v.conj()) for w, v in zip(weights, _BELL_VECTORS.values())
    )
    return DensityMatrix(entries)


def teleport_project(chi, k: BellIndex) -> tuple[PureState, float]:
    """Project photons 1 and 2 of |chi>_1 |Phi+>_23 onto Bell state ``k``.

    Returns photon 3's normalized state and the outcome probability.
    """
    chi = _state(chi)
    if chi.n_qubits != 1:
        raise ValueError("teleport_project expects a single-qubit state")
    joint = np.kron(chi.amplitudes, _BELL_VECTORS[BellIndex.PHI_PLUS]).reshape(2, 2, 2)
    bra = _BELL_VECTORS[BellIndex(k)].conj().reshape(2, 2)
    photon3 = np.einsum("ij,ijk->k", bra, joint)
    probability = float(np.vdot(photon3, photon3).real)
    return PureState(photon3 / math.sqrt(probability)), probability


def bsm_element(k: BellIndex, interference_visibility: float = 1.0) -> np.ndarray:
    """POVM element of a PBS Bell measurement reporting outcome ``k``.

    Imperfect two-photon overlap leaves the relative phase between the
    two states sharing a coincidence pattern partly unresolved.
    """
    if not 0.0 <= interference_visibility <= 1.0:
        raise ValueError("interference visibility must lie in [0, 1]")
    k = BellIndex(k)
    weight = (1.0 + interference_visibility) / 2.0
    own, other = _BELL_VECTORS[k], _BELL_VECTORS[k.partner]
    return weight * np.outer(own, own) + (1.0 - weight) * np.outer(other, other)


def teleport_density(
    chi,
    source: DensityMatrix,
    k: BellIndex,
    interference_visibility: float = 1.0,
) -> tuple[DensityMatrix, float]:
    """Photon 3's state after a Bell measurement on photon 1 and photon 2.

    ``chi`` is the input state of photon 1 (pure or mixed), ``source`` the
    state of the distributed pair (photons 2, 3). The Pauli correction is
    not applied.
    """
    if isinstance(chi, DensityMatrix):
        _require_qubits(chi, 1, "chi")
        rho_in = chi.entries
    else:
        rho_in = _state(chi).density().entries
    _require_qubits(source, 2, "source")
    joint = np.kron(rho_in, source.entries).reshape(4, 2, 4, 2)
    element = bsm_element(k, interference_visibility)
    photon3 = np.einsum("im,mjil->jl", element, joint)
    probability = float(np.trace(photon3).real)
    if probability <= 0:
        raise ValueError(f"outcome {k} has zero probability")
    return DensityMatrix.from_unnormalized(photon3), probability


def correlation_E(rho: DensityMatrix, a, b) -> float:
    """Expectation of the product of two +-1 analyzer outcomes."""
    _require_qubits(rho, 2)
    observable = np.kron(_setting(a).observable, _setting(b).observable)
    return float(np.clip(rho.expectation(observable), -1.0, 1.0))


def outcome_probabilities(rho: DensityMatrix, a, b) -> np.ndarray:
    """Joint outcome table; rows index Alice's (+1, -1), columns Bob's."""
    _require_qubits(rho, 2)
    alice, bob = _setting(a).projectors(), _setting(b).projectors()
    table = np.array(
        [[rho.expectation(np.kron(pa, pb)) for pb in bob] for pa in alice]
    )
    table = np.clip(table, 0.0, None)
    return table / table.sum()


def chsh_S(rho: DensityMatrix, a, a_prime, b, b_prime) -> float:
    """|E(a,b) - E(a,b') + E(a',b) + E(a',b')|."""
    _require_qubits(rho, 2)
    return abs(
        correlation_E(rho, a, b)
        - correlation_E(rho, a, b_prime)
        + correlation_E(rho, a_prime, b)
        + correlation_E(rho, a_prime, b_prime)
    )


def state_fidelity(rho: DensityMatrix, target) -> float:
    target = _state(target)
    if not isinstance(rho, DensityMatrix):
        raise ValueError("rho must be a DensityMatrix")
    if rho.entries.shape[0] != target.amplitudes.size:
        raise ValueError(
            f"dimension mismatch: rho is {rho.entries.shape[0]}, "
            f"target is {target.amplitudes.size}"
        )
    value = np.vdot(target.amplitudes, rho.entries @ target.amplitudes).real
    return float(np.clip(value, 0.0, 1.0))


_BASIS_OBSERVABLES = {
    "HV": np.kron(PAULI_Z, PAULI_Z),
    "PM": np.kron(PAULI_X, PAULI_X),
    "RL": -np.kron(PAULI_Y, PAULI_Y),
}


def visibility(rho: DensityMatrix, basis: str) -> float:
    """Two-photon correlation in ``basis`` (HV, PM or RL), signed so |Phi+> gives 1."""
    _require_qubits(rho, 2)
    try:
        observable = _BASIS_OBSERVABLES[basis.upper()]
    except KeyError:
        raise ValueError(f"unknown basis {basis!r}; use HV, PM or RL") from None
    return rho.expectation(observable)
