"""Teleportation protocol state machine and analytic noise channels.

The Bell-state measurement at the sender distinguishes only the two Psi
states; Phi outcomes abort the protocol instance.  Physical imperfections are
summarized by three scalars: two-photon interference visibility (dephasing of
the conditioned state in the H/V basis), a depolarizing admixture, and the
probability that the feed-forward correction is actually applied.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from . import qcore
from .qcore import BellState, DensityMatrix, Ket, Operator

NORM_TOL = 1e-12

#: Analysis bases, each mapping to its (first, second) outcome kets.
BASES = {
    "H/V": ("H", "V"),
    "P/M": ("P", "M"),
    "R/L": ("R", "L"),
}

_IDENTIFIED = frozenset({BellState.PSI_MINUS, BellState.PSI_PLUS})

#: Stable integer codes used by the event-level simulator and the RNG batch API.
BELL_CODES = {
    BellState.PSI_MINUS: 0,
    BellState.PSI_PLUS: 1,
    BellState.PHI_MINUS: 2,
    BellState.PHI_PLUS: 3,
}
BELL_FROM_CODE = {v: k for k, v in BELL_CODES.items()}


@dataclass(frozen=True)
class InputState:
    """Teleportee qubit amplitudes alpha|H> + beta|V>."""

    alpha: complex
    beta: complex

    def __post_init__(self):
        norm_sq = abs(self.alpha) ** 2 + abs(self.beta) ** 2
        if abs(norm_sq - 1.0) > NORM_TOL:
            raise ValueError(f"input state not normalized: |a|^2+|b|^2 = {norm_sq!r}")

    @classmethod
    def from_label(cls, label: str) -> "InputState":
        k = qcore.standard_ket(label)
        return cls(complex(k.amplitudes[0]), complex(k.amplitudes[1]))

    def ket(self) -> Ket:
        return Ket(np.array([self.alpha, self.beta], dtype=np.complex128))


@dataclass(frozen=True)
class BsmOutcome:
    """Bell-state measurement result; only Psi- and Psi+ are identifiable."""

    bell: BellState
    identified: bool

    def __init__(self, bell: BellState):
        object.__setattr__(self, "bell", BellState(bell))
        object.__setattr__(self, "identified", self.bell in _IDENTIFIED)


class CorrectionOp(enum.Enum):
    IDENTITY = "identity"
    PI_PHASE_SHIFT = "pi_phase_shift"

    def operator(self) -> Operator:
        if self is CorrectionOp.IDENTITY:
            return qcore.SIGMA_0
        return qcore.SIGMA_Z


@dataclass(frozen=True)
class NoiseParams:
    """Scalar imperfection summary; all fields are probabilities in [0, 1]."""

    visibility: float = 1.0
    depolarization: float = 0.0
    feedforward_applied_prob: float = 1.0

    def __post_init__(self):
        for name in ("visibility", "depolarization", "feedforward_applied_prob"):
            val = getattr(self, name)
            if not 0.0 <= val <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {val!r}")


IDEAL_NOISE = NoiseParams()


class UnidentifiedOutcomeError(ValueError):
    """Raised when a Phi outcome reaches a step that requires identification."""


def correction_for(outcome: BsmOutcome) -> CorrectionOp:
    """Receiver correction for an identified outcome; Phi events abort."""
    if not outcome.identified:
        raise UnidentifiedOutcomeError(
            f"{outcome.bell.value} is not identified; protocol aborts for Phi outcomes"
        )
    if outcome.bell is BellState.PSI_MINUS:
        return CorrectionOp.IDENTITY
    return CorrectionOp.PI_PHASE_SHIFT


_DETECTOR_PATTERNS = {
    BellState.PSI_MINUS: frozenset({("t", "a", "d"), ("t", "b", "c")}),
    BellState.PSI_PLUS: frozenset({("t", "a", "b"), ("t", "c", "d")}),
}


def detector_pattern(outcome: BsmOutcome) -> frozenset:
    """Detector triples announcing the given identified outcome."""
    if not outcome.identified:
        raise UnidentifiedOutcomeError(
            f"{outcome.bell.value} has no identifying detector pattern"
        )
    return _DETECTOR_PATTERNS[outcome.bell]


def sample_bsm(rng: np.random.Generator) -> BsmOutcome:
    """Draw one BSM outcome, uniform over the four Bell states."""
    return BsmOutcome(BELL_FROM_CODE[int(sample_bsm_batch(rng, 1)[0])])


def sample_bsm_batch(rng: np.random.Generator, n: int) -> np.ndarray:
    """Vectorized outcome codes (see BELL_CODES); codes < 2 are identified."""
    return rng.integers(0, 4, size=n, dtype=np.uint8)


def _bell_post_state(input_state: InputState, bell: BellState) -> DensityMatrix:
    composite = qcore.tensor(input_state.ket(), qcore.bell_ket(BellState.PSI_MINUS)).to_density()
    prob, post = qcore.project_bell(composite, bell)
    if post is None:  # cannot happen for a product input with the singlet resource
        raise RuntimeError(f"degenerate Bell projection, probability {prob}")
    return post


def dephase(rho: DensityMatrix, visibility: float) -> DensityMatrix:
    """Scale H/V coherences by the two-photon interference visibility."""
    m = rho.entries.copy()
    m[0, 1] *= visibility
    m[1, 0] *= visibility
    return DensityMatrix(m)


def depolarize(rho: DensityMatrix, p: float) -> DensityMatrix:
    """White-noise admixture rho -> (1-p) rho + p I/2."""
    m = (1.0 - p) * rho.entries + p * np.eye(2) / 2.0
    return DensityMatrix(m)


def teleport_analytic(
    input_state: InputState,
    outcome: BsmOutcome,
    apply_correction: bool,
    noise: NoiseParams = IDEAL_NOISE,
) -> DensityMatrix:
    """Receiver-side photon state for one identified BSM outcome.

    The exact Bell-projected state is degraded in a fixed order: H/V
    dephasing by the visibility, then depolarization, then (optionally) the
    correction unitary.  A feed-forward success probability below one leaves
    the corresponding fraction of the state uncorrected, so the output is the
    average state over feed-forward successes and failures.
    """
    if not outcome.identified:
        raise UnidentifiedOutcomeError(
            f"teleport_analytic requires an identified outcome, got {outcome.bell.value}"
        )
    rho = _bell_post_state(input_state, outcome.bell)
    rho = dephase(rho, noise.visibility)
    rho = depolarize(rho, noise.depolarization)
    if apply_correction:
        corr = correction_for(outcome).operator()
        corrected = qcore.apply(corr, rho)
        ff = noise.feedforward_applied_prob
        rho = DensityMatrix(ff * corrected.entries + (1.0 - ff) * rho.entries)
    return rho


def basis_kets(basis: str):
    """(first, second) outcome kets of an analysis basis."""
    try:
        first, second = BASES[basis]
    except KeyError:
        raise ValueError(f"unknown basis {basis!r}; expected one of {sorted(BASES)}") from None
    return qcore.standard_ket(first), qcore.standard_ket(second)


def measure_in_basis(rho: DensityMatrix, basis: str, rng: np.random.Generator) -> int:
    """Projective measurement; returns 0 for the first basis outcome, else 1."""
    first, _ = basis_kets(basis)
    p_first = qcore.fidelity_pure(rho, first)
    return 0 if rng.random() < p_first else 1
