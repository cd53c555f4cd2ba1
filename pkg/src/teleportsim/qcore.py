"""Exact small-dimension complex linear algebra for polarization qubits.

Kets, density matrices and operators are thin immutable wrappers around
complex128 numpy arrays, validated on construction.  Basis ordering is fixed
to {H, V} for one qubit and {HH, HV, VH, VV} for two; every other module in
the package relies on this ordering.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

NORM_TOL = 1e-12
HERM_TOL = 1e-12
UNITARY_TOL = 1e-12
PSD_TOL = -1e-9

# dim 8 is the three-photon composite needed for Bell projections
_ALLOWED_DIMS = (2, 4, 8)


def _as_locked_complex(values, shape_kind):
    arr = np.array(values, dtype=np.complex128)
    if shape_kind == "vector" and arr.ndim != 1:
        raise ValueError(f"expected a 1-d amplitude vector, got shape {arr.shape}")
    if shape_kind == "matrix" and (arr.ndim != 2 or arr.shape[0] != arr.shape[1]):
        raise ValueError(f"expected a square matrix, got shape {arr.shape}")
    if arr.shape[0] not in _ALLOWED_DIMS:
        raise ValueError(f"dimension {arr.shape[0]} not supported (allowed: {_ALLOWED_DIMS})")
    arr.setflags(write=False)
    return arr


class BellState(enum.Enum):
    """The four maximally entangled two-qubit states."""

    PSI_MINUS = "psi_minus"
    PSI_PLUS = "psi_plus"
    PHI_MINUS = "phi_minus"
    PHI_PLUS = "phi_plus"


@dataclass(frozen=True)
class Ket:
    """Normalized pure state; amplitudes in the fixed computational ordering."""

    amplitudes: np.ndarray

    def __init__(self, amplitudes):
        arr = _as_locked_complex(amplitudes, "vector")
        norm_sq = float(np.sum(np.abs(arr) ** 2))
        if abs(norm_sq - 1.0) > NORM_TOL:
            raise ValueError(f"ket not normalized: sum |a|^2 = {norm_sq!r}")
        object.__setattr__(self, "amplitudes", arr)

    @property
    def dim(self) -> int:
        return self.amplitudes.shape[0]

    def dagger(self) -> np.ndarray:
        return self.amplitudes.conj()

    def to_density(self) -> "DensityMatrix":
        a = self.amplitudes
        return DensityMatrix(np.outer(a, a.conj()))

    def overlap(self, other: "Ket") -> complex:
        if self.dim != other.dim:
            raise ValueError("dimension mismatch in overlap")
        return complex(np.vdot(self.amplitudes, other.amplitudes))


@dataclass(frozen=True)
class DensityMatrix:
    """Hermitian, trace-one, positive-semidefinite state matrix."""

    entries: np.ndarray

    def __init__(self, entries):
        arr = _as_locked_complex(entries, "matrix")
        if not np.allclose(arr, arr.conj().T, atol=HERM_TOL, rtol=0.0):
            raise ValueError("density matrix not Hermitian within tolerance")
        tr = complex(np.trace(arr))
        if abs(tr - 1.0) > NORM_TOL:
            raise ValueError(f"density matrix trace {tr!r} != 1")
        evals = np.linalg.eigvalsh(arr)
        if float(evals.min()) < PSD_TOL:
            raise ValueError(f"density matrix not PSD: min eigenvalue {evals.min():.3e}")
        object.__setattr__(self, "entries", arr)

    @classmethod
    def from_ket(cls, ket: Ket) -> "DensityMatrix":
        return ket.to_density()

    @classmethod
    def maximally_mixed(cls, dim: int = 2) -> "DensityMatrix":
        return cls(np.eye(dim) / dim)

    @property
    def dim(self) -> int:
        return self.entries.shape[0]

    def eigenvalues(self) -> np.ndarray:
        return np.linalg.eigvalsh(self.entries)


@dataclass(frozen=True)
class Operator:
    """Linear operator; set ``is_unitary`` to have U†U = I validated."""

    entries: np.ndarray
    is_unitary: bool = False

    def __init__(self, entries, is_unitary: bool = False):
        arr = _as_locked_complex(entries, "matrix")
        if is_unitary:
            prod = arr.conj().T @ arr
            if not np.allclose(prod, np.eye(arr.shape[0]), atol=UNITARY_TOL, rtol=0.0):
                raise ValueError("operator flagged unitary fails U†U = I")
        object.__setattr__(self, "entries", arr)
        object.__setattr__(self, "is_unitary", bool(is_unitary))

    @property
    def dim(self) -> int:
        return self.entries.shape[0]


_INV_SQRT2 = 1.0 / np.sqrt(2.0)

_STANDARD_KETS = {
    "H": np.array([1.0, 0.0], dtype=np.complex128),
    "V": np.array([0.0, 1.0], dtype=np.complex128),
    "P": np.array([_INV_SQRT2, _INV_SQRT2], dtype=np.complex128),
    "M": np.array([_INV_SQRT2, -_INV_SQRT2], dtype=np.complex128),
    "R": np.array([_INV_SQRT2, 1j * _INV_SQRT2], dtype=np.complex128),
    "L": np.array([_INV_SQRT2, -1j * _INV_SQRT2], dtype=np.complex128),
}

_BELL_AMPLITUDES = {
    BellState.PSI_MINUS: np.array([0.0, _INV_SQRT2, -_INV_SQRT2, 0.0], dtype=np.complex128),
    BellState.PSI_PLUS: np.array([0.0, _INV_SQRT2, _INV_SQRT2, 0.0], dtype=np.complex128),
    BellState.PHI_MINUS: np.array([_INV_SQRT2, 0.0, 0.0, -_INV_SQRT2], dtype=np.complex128),
    BellState.PHI_PLUS: np.array([_INV_SQRT2, 0.0, 0.0, _INV_SQRT2], dtype=np.complex128),
}

SIGMA_ARRAYS = (
    np.eye(2, dtype=np.complex128),
    np.array([[0, 1], [1, 0]], dtype=np.complex128),
    np.array([[0, -1j], [1j, 0]], dtype=np.complex128),
    np.array([[1, 0], [0, -1]], dtype=np.complex128),
)
for _s in SIGMA_ARRAYS:
    _s.setflags(write=False)

SIGMA_0 = Operator(SIGMA_ARRAYS[0], is_unitary=True)
SIGMA_X = Operator(SIGMA_ARRAYS[1], is_unitary=True)
SIGMA_Y = Operator(SIGMA_ARRAYS[2], is_unitary=True)
SIGMA_Z = Operator(SIGMA_ARRAYS[3], is_unitary=True)


def standard_ket(label: str) -> Ket:
    """One of the six standard polarization kets H, V, P, M, R, L."""
    try:
        amps = _STANDARD_KETS[label]
    except KeyError:
        raise ValueError(f"unknown ket label {label!r}; expected one of H,V,P,M,R,L") from None
    return Ket(amps)


def bell_ket(b: BellState) -> Ket:
    """Bell state as a 4-dim ket in the {HH, HV, VH, VV} ordering."""
    return Ket(_BELL_AMPLITUDES[BellState(b)])


def tensor(a, b):
    """Kronecker product of two same-kind objects; left factor is the slow index."""
    if isinstance(a, Ket) and isinstance(b, Ket):
        return Ket(np.kron(a.amplitudes, b.amplitudes))
    if isinstance(a, DensityMatrix) and isinstance(b, DensityMatrix):
        return DensityMatrix(np.kron(a.entries, b.entries))
    if isinstance(a, Operator) and isinstance(b, Operator):
        return Operator(np.kron(a.entries, b.entries), is_unitary=a.is_unitary and b.is_unitary)
    raise TypeError(f"tensor requires two objects of the same kind, got {type(a).__name__} and {type(b).__name__}")


def apply(U: Operator, rho: DensityMatrix) -> DensityMatrix:
    """Conjugate the state: rho -> U rho U†."""
    if U.dim != rho.dim:
        raise ValueError(f"operator dim {U.dim} does not match state dim {rho.dim}")
    if not U.is_unitary:
        raise ValueError("apply() requires a unitary operator")
    u = U.entries
    return DensityMatrix(u @ rho.entries @ u.conj().T)


def fidelity_pure(rho: DensityMatrix, phi: Ket) -> float:
    """Overlap <phi|rho|phi> of a state with a pure target."""
    if rho.dim != phi.dim:
        raise ValueError(f"state dim {rho.dim} does not match ket dim {phi.dim}")
    v = phi.amplitudes
    val = complex(v.conj() @ rho.entries @ v)
    if abs(val.imag) > 1e-12:
        raise ValueError(f"fidelity has non-negligible imaginary part {val.imag:.3e}")
    return float(val.real)


def partial_trace(rho: DensityMatrix, over: str) -> DensityMatrix:
    """Trace out one qubit of a two-qubit state; ``over`` names the discarded one."""
    if rho.dim != 4:
        raise ValueError(f"partial_trace expects a 4-dim state, got dim {rho.dim}")
    r = rho.entries.reshape(2, 2, 2, 2)
    if over == "first":
        reduced = np.einsum("kikj->ij", r)
    elif over == "second":
        reduced = np.einsum("ikjk->ij", r)
    else:
        raise ValueError(f"over must be 'first' or 'second', got {over!r}")
    return DensityMatrix(reduced)


def project_bell(rho: DensityMatrix, b: BellState):
    """Project qubits 1 and 2 of a three-qubit state onto a Bell state.

    Returns ``(probability, post_state)`` where ``post_state`` is the
    normalized reduced state of qubit 3, or ``None`` when the projection
    probability falls below 1e-15.
    """
    if rho.dim != 8:
        raise ValueError(f"project_bell expects an 8-dim composite state, got dim {rho.dim}")
    bell = _BELL_AMPLITUDES[BellState(b)]
    proj12 = np.outer(bell, bell.conj())
    projector = np.kron(proj12, np.eye(2, dtype=np.complex128))
    weighted = projector @ rho.entries @ projector
    prob = float(np.trace(weighted).real)
    if prob < 1e-15:
        return prob, None
    post8 = weighted.reshape(2, 2, 2, 2, 2, 2)
    post3 = np.einsum("abiabj->ij", post8) / prob
    return prob, DensityMatrix(post3)
