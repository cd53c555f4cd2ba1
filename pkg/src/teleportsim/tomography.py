"""State and process reconstruction from projective counts.

State tomography maximizes the multinomial log-likelihood over physical
density matrices parameterized as T†T / tr(T†T) with four real parameters
(lower-triangular T), using gradient ascent with a backtracking line search.
Process tomography solves the linear system relating the four standard
input states {H, V, P, L} to their reconstructed outputs; the raw analytic
inversion is reported (an optional projection onto completely positive
processes exists but is off by default).  Uncertainties come from Poissonian
Monte Carlo resampling of the measured counts.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import qcore
from .qcore import DensityMatrix, Ket

#: measurement basis -> Bloch axis index (sigma_x, sigma_y, sigma_z)
BASIS_AXIS = {"P/M": 1, "R/L": 2, "H/V": 3}
REQUIRED_BASES = frozenset(BASIS_AXIS)

#: inputs required by the analytic process reconstruction
PROCESS_INPUT_LABELS = ("H", "V", "P", "L")

MLE_TOL = 1e-10
MLE_MAX_ITER = 10_000


@dataclass(frozen=True)
class CountRecord:
    """Projective counts in one analysis basis."""

    basis: str
    n_first: int
    n_second: int

    def __post_init__(self):
        if self.basis not in BASIS_AXIS:
            raise ValueError(f"unknown basis {self.basis!r}")
        if self.n_first < 0 or self.n_second < 0:
            raise ValueError("counts must be non-negative")
        if self.n_first != int(self.n_first) or self.n_second != int(self.n_second):
            raise ValueError("counts must be integers")

    @property
    def total(self) -> int:
        return self.n_first + self.n_second


@dataclass(frozen=True)
class TomoResult:
    rho: DensityMatrix
    log_likelihood: float
    iterations: int
    converged: bool


@dataclass(frozen=True)
class ProcessMatrix:
    """Channel expansion chi in the Pauli basis (sigma_0..sigma_3 ordering)."""

    chi: np.ndarray

    def __init__(self, chi):
        arr = np.array(chi, dtype=np.complex128)
        if arr.shape != (4, 4):
            raise ValueError(f"chi must be 4x4, got {arr.shape}")
        if not np.allclose(arr, arr.conj().T, atol=1e-9, rtol=0.0):
            raise ValueError("chi not Hermitian within 1e-9")
        if abs(np.trace(arr) - 1.0) > 1e-9:
            raise ValueError(f"chi trace {np.trace(arr)!r} != 1 within 1e-9")
        arr.setflags(write=False)
        object.__setattr__(self, "chi", arr)

    def apply(self, rho: DensityMatrix) -> DensityMatrix:
        """Act the channel on a state: sum_lk chi_lk sigma_l rho sigma_k."""
        s = qcore.SIGMA_ARRAYS
        out = np.zeros((2, 2), dtype=np.complex128)
        for l in range(4):
            for k in range(4):
                out += self.chi[l, k] * (s[l] @ rho.entries @ s[k])
        return DensityMatrix(out)


@dataclass(frozen=True)
class FidelityEstimate:
    value: float
    sigma: float
    n_resamples: int

    def __post_init__(self):
        if self.sigma < 0:
            raise ValueError("sigma must be non-negative")
        if self.n_resamples <= 1 and self.sigma != 0.0:
            raise ValueError("sigma must be 0 for n_resamples <= 1")


def _counts_by_basis(counts) -> dict:
    table = {}
    for rec in counts:
        if rec.basis in table:
            raise ValueError(f"duplicate basis {rec.basis!r} in counts")
        table[rec.basis] = rec
    missing = REQUIRED_BASES - set(table)
    if missing:
        raise ValueError(f"missing bases in counts: {sorted(missing)}")
    return table


def linear_inversion(counts) -> np.ndarray:
    """Direct Bloch-vector estimate; Hermitian but possibly non-PSD."""
    table = _counts_by_basis(counts)
    bloch = np.zeros(3)
    for basis, rec in table.items():
        if rec.total == 0:
            raise ValueError(f"basis {basis!r} has zero total counts")
        bloch[BASIS_AXIS[basis] - 1] = (rec.n_first - rec.n_second) / rec.total
    s = qcore.SIGMA_ARRAYS
    return 0.5 * (s[0] + bloch[0] * s[1] + bloch[1] * s[2] + bloch[2] * s[3])


# Outcome kets stacked as columns: (first, second) per basis in a fixed order.
_BASIS_ORDER = ("H/V", "P/M", "R/L")
_OUTCOME_LABELS = {"H/V": ("H", "V"), "P/M": ("P", "M"), "R/L": ("R", "L")}
_B = np.column_stack(
    [
        qcore.standard_ket(lbl).amplitudes
        for basis in _BASIS_ORDER
        for lbl in _OUTCOME_LABELS[basis]
    ]
)  # shape (2, 6)
# real/imaginary components, split once: the first amplitude of every
# standard outcome ket is real, which keeps the likelihood arithmetic real
_B0 = np.ascontiguousarray(_B[0].real)
_B0SQ = _B0 * _B0
_B1R = np.ascontiguousarray(_B[1].real)
_B1I = np.ascontiguousarray(_B[1].imag)


def _counts_vector(counts) -> np.ndarray:
    table = _counts_by_basis(counts)
    out = []
    for basis in _BASIS_ORDER:
        rec = table[basis]
        if rec.total == 0:
            raise ValueError(f"basis {basis!r} has zero total counts")
        out.extend([rec.n_first, rec.n_second])
    return np.asarray(out, dtype=np.float64)


def _t_matrix(theta: np.ndarray) -> np.ndarray:
    t = np.zeros((2, 2), dtype=np.complex128)
    t[0, 0] = theta[0]
    t[1, 1] = theta[1]
    t[1, 0] = theta[2] + 1j * theta[3]
    return t


def _theta_from_density(rho: np.ndarray, floor: float = 1e-6) -> np.ndarray:
    """Parameters of the PSD-floored state: eigenvalue clip, renormalize,
    then the closed-form lower-triangular factor of A with T†T = A."""
    evals, evecs = np.linalg.eigh(rho)
    evals = np.clip(evals, floor, None)
    a = (evecs * evals) @ evecs.conj().T
    a /= np.trace(a).real
    t1 = np.sqrt(a[1, 1].real)
    c = a[1, 0] / t1
    t0_sq = a[0, 0].real - abs(c) ** 2
    t0 = np.sqrt(max(t0_sq, floor * floor))
    return np.array([t0, t1, c.real, c.imag])


def _q_components(theta):
    """Outcome weights ||T b_j||^2 split into reusable real pieces."""
    t0, t1, t2, t3 = theta
    wr = t2 * _B0 + t1 * _B1R
    wi = t3 * _B0 + t1 * _B1I
    q = (t0 * t0) * _B0SQ + wr * wr + wi * wi
    return q, wr, wi


def _loglik(theta: np.ndarray, n: np.ndarray) -> float:
    q, _, _ = _q_components(theta)
    if q.min() <= 0.0:
        return -np.inf
    tr_a = float(theta @ theta)
    return float(n @ np.log(q)) - float(n.sum()) * np.log(tr_a)


def _loglik_and_grad(theta: np.ndarray, n: np.ndarray):
    q, wr, wi = _q_components(theta)
    if q.min() <= 0.0:
        return -np.inf, np.zeros(4)
    tr_a = float(theta @ theta)
    n_tot = float(n.sum())
    ll = float(n @ np.log(q)) - n_tot * np.log(tr_a)
    weight = n / q
    t0 = theta[0]
    grad = np.array(
        [
            2.0 * t0 * float(weight @ _B0SQ),
            2.0 * float(weight @ (wr * _B1R + wi * _B1I)),
            2.0 * float(weight @ (wr * _B0)),
            2.0 * float(weight @ (wi * _B0)),
        ]
    )
    grad -= n_tot * 2.0 * theta / tr_a
    return ll, grad


def mle_reconstruct(counts, max_iter: int = MLE_MAX_ITER, tol: float = MLE_TOL) -> TomoResult:
    """Maximum-likelihood state estimate from three-basis counts."""
    n = _counts_vector(counts)
    theta = _theta_from_density(linear_inversion(counts))
    ll, grad = _loglik_and_grad(theta, n)
    step = 1.0 / max(float(np.sum(n)), 1.0)
    converged = False
    iterations = 0
    for iterations in range(1, max_iter + 1):
        moved = False
        while step > 1e-16:
            cand = theta + step * grad
            cand_ll = _loglik(cand, n)
            if cand_ll > ll:
                moved = True
                break
            step *= 0.5
        if not moved:
            converged = True
            break
        improvement = cand_ll - ll
        theta, ll = cand, cand_ll
        _, grad = _loglik_and_grad(theta, n)
        step *= 2.0  # let the line search re-expand
        if improvement < tol * max(1.0, abs(ll)):
            converged = True
            break
    t = _t_matrix(theta)
    a = t.conj().T @ t
    rho = DensityMatrix(a / np.trace(a).real)
    return TomoResult(rho=rho, log_likelihood=ll, iterations=iterations, converged=converged)


def state_fidelity(rho: DensityMatrix, ideal: Ket) -> float:
    """Overlap of a reconstructed state with the ideal teleported ket."""
    return qcore.fidelity_pure(rho, ideal)


def _identify_input(ket: Ket) -> str:
    for label in PROCESS_INPUT_LABELS:
        ref = qcore.standard_ket(label)
        if abs(abs(ket.overlap(ref)) - 1.0) < 1e-12:
            return label
    raise ValueError(
        "process tomography requires exactly the input set {H, V, P, L}; "
        "other sets would need their own invertibility analysis"
    )


def process_from_states(pairs) -> ProcessMatrix:
    """Solve rho_out = sum_lk chi_lk sigma_l rho_in sigma_k for chi.

    ``pairs`` holds four (input, output) tuples where each input is either a
    standard-ket label or a Ket from the set {H, V, P, L}.
    """
    by_label = {}
    for inp, rho_out in pairs:
        label = inp if isinstance(inp, str) else _identify_input(inp)
        if label not in PROCESS_INPUT_LABELS:
            raise ValueError(
                f"input {label!r} not in the required set {PROCESS_INPUT_LABELS}"
            )
        if label in by_label:
            raise ValueError(f"duplicate input state {label!r}")
        by_label[label] = rho_out
    if set(by_label) != set(PROCESS_INPUT_LABELS):
        raise ValueError(
            f"process tomography requires exactly the inputs {PROCESS_INPUT_LABELS}, "
            f"got {sorted(by_label)}"
        )
    s = qcore.SIGMA_ARRAYS
    a = np.zeros((16, 16), dtype=np.complex128)
    b = np.zeros(16, dtype=np.complex128)
    for m, label in enumerate(PROCESS_INPUT_LABELS):
        rho_in = qcore.standard_ket(label).to_density().entries
        rho_out = by_label[label].entries
        b[4 * m : 4 * m + 4] = rho_out.reshape(-1)
        for l in range(4):
            for k in range(4):
                a[4 * m : 4 * m + 4, 4 * l + k] = (s[l] @ rho_in @ s[k]).reshape(-1)
    chi_vec = np.linalg.solve(a, b)
    return ProcessMatrix(chi_vec.reshape(4, 4))


def process_fidelity(chi: ProcessMatrix) -> float:
    """tr(chi_ideal chi) = chi_00 for the identity target process."""
    return float(chi.chi[0, 0].real)


def cp_project(chi: ProcessMatrix) -> ProcessMatrix:
    """Clip negative chi eigenvalues and renormalize the trace (optional)."""
    evals, evecs = np.linalg.eigh(chi.chi)
    evals = np.clip(evals, 0.0, None)
    out = (evecs * evals) @ evecs.conj().T
    return ProcessMatrix(out / np.trace(out).real)


def _resample_counts(counts, rng: np.random.Generator):
    while True:
        resampled = [
            CountRecord(
                rec.basis,
                int(rng.poisson(rec.n_first)),
                int(rng.poisson(rec.n_second)),
            )
            for rec in counts
        ]
        if all(rec.total > 0 for rec in resampled):
            return resampled


def monte_carlo_sigma(
    counts,
    ideal: Ket,
    n_resamples: int = 1000,
    seed: int = 0,
) -> FidelityEstimate:
    """Poissonian Monte Carlo uncertainty of the MLE state fidelity."""
    counts = list(counts)
    value = state_fidelity(mle_reconstruct(counts).rho, ideal)
    if n_resamples <= 1:
        return FidelityEstimate(value=value, sigma=0.0, n_resamples=n_resamples)
    rng = np.random.default_rng(seed)
    fids = np.empty(n_resamples)
    for i in range(n_resamples):
        resampled = _resample_counts(counts, rng)
        fids[i] = state_fidelity(mle_reconstruct(resampled).rho, ideal)
    return FidelityEstimate(
        value=value, sigma=float(np.std(fids, ddof=1)), n_resamples=n_resamples
    )


def fidelity_binary(n_match: int, n_other: int) -> float:
    """Eigenbasis fidelity estimate: fraction detected in the ideal port."""
    total = n_match + n_other
    if total <= 0:
        raise ValueError("no counts")
    return n_match / total


def monte_carlo_sigma_binary(
    n_match: int,
    n_other: int,
    n_resamples: int = 1000,
    seed: int = 0,
) -> FidelityEstimate:
    """Poissonian uncertainty of the eigenbasis (two-count) fidelity."""
    value = fidelity_binary(n_match, n_other)
    if n_resamples <= 1:
        return FidelityEstimate(value=value, sigma=0.0, n_resamples=n_resamples)
    rng = np.random.default_rng(seed)
    fids = []
    while len(fids) < n_resamples:
        a = rng.poisson(n_match)
        b = rng.poisson(n_other)
        if a + b > 0:
            fids.append(a / (a + b))
    return FidelityEstimate(
        value=value, sigma=float(np.std(np.asarray(fids), ddof=1)), n_resamples=n_resamples
    )
