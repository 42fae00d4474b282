"""Exact quantities, support sets, stabilizer Rényi entropies and sample-complexity bounds.

Everything here is computed in closed form from the ideal PVM and (where
needed) the actual POVM; nothing is sampled.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import qcore
from .errors import NumericalError, SupportError, UnsupportedOrderError, ValidationError
from .measurements import Povm, Pvm
from .protocols import (
    SUPPORT_RTOL,
    Precision,
    _direct_shots,
    _efficient_shots,
    importance_distribution_direct,
    importance_distribution_efficient,
    pauli_draw_count,
    pauli_weights,
    support_mask,
)

__all__ = [
    "SupportSets",
    "EntropyReport",
    "BoundReport",
    "Truncation",
    "exact_fidelity",
    "exact_X_l",
    "exact_X_kl",
    "all_X_l",
    "all_X_kl",
    "variance_X_l",
    "variance_X_kl",
    "support_sets",
    "observable_O",
    "stabilizer_renyi_entropy",
    "per_element_entropy",
    "expected_calls_efficient",
    "expected_calls_direct",
    "bound_thm1",
    "bound_thm2",
    "bound_thm3",
    "bound_thm4",
    "bound_thm5",
    "truncate_element",
    "variance_constants",
]


def _check_pair(pvm: Pvm, povm: Povm):
    if pvm.dim != povm.dim:
        raise ValidationError(f"dimension mismatch: PVM {pvm.dim} vs POVM {povm.dim}")


def exact_fidelity(pvm: Pvm, povm: Povm) -> float:
    """``2^-n sum_k tr[psi_k V_k]``."""
    _check_pair(pvm, povm)
    f = np.einsum("kij,kji->", pvm.elements, povm.elements).real / pvm.dim
    if f > 1 + qcore.DEFAULT_ATOL or f < -qcore.DEFAULT_ATOL:
        raise NumericalError(f"fidelity {f} outside [0, 1]")
    return float(f)


def all_X_l(pvm: Pvm, povm: Povm) -> np.ndarray:
    """``X_l`` on the support set S, ``nan`` elsewhere."""
    _check_pair(pvm, povm)
    w = pauli_weights(pvm)
    num = (povm.coefficients * pvm.coefficients).sum(axis=0)
    out = np.full(w.shape, np.nan)
    s = support_mask(w)
    out[s] = num[s] / w[s]
    return out


def exact_X_l(pvm: Pvm, povm: Povm, l: int) -> float:
    x = all_X_l(pvm, povm)[l]
    if np.isnan(x):
        raise SupportError(f"Pauli index {l} is outside the support set S")
    return float(x)


def all_X_kl(pvm: Pvm, povm: Povm) -> np.ndarray:
    """``X_kl = tr[V_k P_l] / tr[psi_k P_l]`` on T, ``nan`` elsewhere."""
    _check_pair(pvm, povm)
    c = pvm.coefficients
    out = np.full(c.shape, np.nan)
    t = support_mask(c**2)
    out[t] = povm.coefficients[t] / c[t]
    return out


def exact_X_kl(pvm: Pvm, povm: Povm, k: int, l: int) -> float:
    x = all_X_kl(pvm, povm)[k, l]
    if np.isnan(x):
        raise SupportError(f"pair ({k}, {l}) is outside the support set T")
    return float(x)


def variance_X_l(pvm: Pvm, povm: Povm) -> float:
    """Variance of ``X_l`` under ``l ~ q``."""
    q = importance_distribution_efficient(pvm)
    x = all_X_l(pvm, povm)
    s = ~np.isnan(x)
    mean = (q[s] * x[s]).sum()
    return float((q[s] * x[s] ** 2).sum() - mean**2)


def variance_X_kl(pvm: Pvm, povm: Povm) -> float:
    """Variance of ``X_kl`` under ``(k, l) ~ q``."""
    q = importance_distribution_direct(pvm)
    x = all_X_kl(pvm, povm)
    t = ~np.isnan(x)
    mean = (q[t] * x[t]).sum()
    return float((q[t] * x[t] ** 2).sum() - mean**2)


@dataclass(frozen=True)
class SupportSets:
    S: tuple[int, ...]
    T: tuple[tuple[int, int], ...]

    @property
    def size_S(self) -> int:
        return len(self.S)

    @property
    def size_T(self) -> int:
        return len(self.T)


def support_sets(pvm: Pvm, threshold: float = SUPPORT_RTOL) -> SupportSets:
    """Pauli strings (S) and element/Pauli pairs (T) with nonzero overlap.

    ``threshold`` is relative to the largest squared coefficient.
    """
    s = np.flatnonzero(support_mask(pauli_weights(pvm), threshold))
    ks, ls = np.nonzero(support_mask(pvm.coefficients**2, threshold))
    return SupportSets(tuple(int(l) for l in s), tuple((int(k), int(l)) for k, l in zip(ks, ls)))


def observable_O(pvm: Pvm) -> np.ndarray:
    """``O = sum_l sqrt(q_l) P_l``, built from the Pauli coefficients."""
    n = pvm.n
    q = importance_distribution_efficient(pvm)
    out = np.zeros((pvm.dim, pvm.dim), dtype=complex)
    for l in np.flatnonzero(support_mask(q)):
        out += math.sqrt(q[l]) * qcore.pauli_matrix(qcore.pauli_from_index(n, int(l)))
    return out


@dataclass(frozen=True)
class EntropyReport:
    alpha: float
    R_alpha: float
    M_alpha: float
    tr_O_squared: float


def _renyi(weights: np.ndarray, alpha: float) -> float:
    """``1/(1-alpha) ln sum w^alpha`` over the nonzero entries."""
    if alpha == 1:
        raise UnsupportedOrderError("Rényi order alpha = 1 is not supported")
    if alpha < 0:
        raise ValidationError(f"alpha must be non-negative, got {alpha}")
    w = weights[support_mask(weights)]
    return math.log(np.sum(w**alpha)) / (1 - alpha)


def stabilizer_renyi_entropy(pvm: Pvm, alpha: float) -> EntropyReport:
    """Stabilizer Rényi entropy of a measurement via its observable O.

    ``tr[O P_l]^2 = q_l``, so the sum runs over the efficient sampling weights.
    """
    q = importance_distribution_efficient(pvm)
    r = _renyi(q, alpha)
    tr_o2 = float(q[support_mask(q)].sum())
    m = r - math.log(tr_o2) - pvm.n * math.log(2)
    return EntropyReport(alpha=alpha, R_alpha=r, M_alpha=m, tr_O_squared=tr_o2)


def _pure_coefficients(psi: np.ndarray) -> np.ndarray:
    psi = np.asarray(psi, dtype=complex)
    if not qcore.is_density_matrix(psi) or abs(np.trace(psi @ psi) - 1) > qcore.DEFAULT_ATOL:
        raise ValidationError("expected a pure-state projector")
    return qcore.pauli_coefficients(psi).real


def per_element_entropy(psi: np.ndarray, alpha: float) -> float:
    """Stabilizer Rényi entropy of the pure state ``psi``.

    Uses the Pauli-weight distribution ``tr[psi P_l]^2`` (sums to one by purity).
    """
    c = _pure_coefficients(psi)
    return _renyi(c**2, alpha) - qcore.num_qubits(len(psi)) * math.log(2)


def expected_calls_efficient(pvm: Pvm, prec: Precision, m: int | None = None) -> float:
    """``E[L] = m sum_{l in S} q_l n_l`` for the efficient protocol."""
    m = pauli_draw_count(prec) if m is None else m
    w = pauli_weights(pvm)
    s = support_mask(w)
    q = w[s] / pvm.dim
    return float(m * np.sum(q * _efficient_shots(w[s], m, prec)))


def expected_calls_direct(pvm: Pvm, prec: Precision, m: int | None = None) -> float:
    m = pauli_draw_count(prec) if m is None else m
    c2 = pvm.coefficients**2
    t = support_mask(c2)
    return float(m * np.sum(c2[t] / pvm.dim * _direct_shots(c2[t], pvm.n, m, prec)))


@dataclass(frozen=True)
class BoundReport:
    theorem: int
    epsilon: float
    delta: float
    n: int
    measurement: str
    lower: float | None = None
    upper: float | None = None
    aux: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.lower is not None and self.upper is not None and self.lower > self.upper:
            raise NumericalError(f"theorem {self.theorem}: lower bound {self.lower} exceeds upper {self.upper}")


def bound_thm1(pvm: Pvm, prec: Precision) -> BoundReport:
    """Lower bound on the expected call count of the efficient protocol."""
    ss = support_sets(pvm)
    eps, delta = prec.epsilon, prec.delta
    lower = ss.size_S**2 / 4**pvm.n * 2 / eps**2 * math.log(2 / delta)
    return BoundReport(
        theorem=1,
        epsilon=eps,
        delta=delta,
        n=pvm.n,
        measurement=pvm.name,
        lower=lower,
        aux={"size_S": ss.size_S, "expected_L": expected_calls_efficient(pvm, prec)},
    )


def bound_thm2(pvm: Pvm, prec: Precision, proof_constants: bool = False) -> BoundReport:
    """Entropy bracket on the efficient protocol's call count.

    ``proof_constants=True`` switches to the looser constants carried through
    the full derivation (``ln(2/delta)`` instead of ``ln(1/delta)``); the same
    flag exists on the other bracket calculators.
    """
    eps, delta = prec.epsilon, prec.delta
    m2 = stabilizer_renyi_entropy(pvm, 2).M_alpha
    m0 = stabilizer_renyi_entropy(pvm, 0).M_alpha
    if proof_constants:
        log_term = math.log(2 / delta)
        lower = 2 / eps**2 * log_term * math.exp(2 * m2)
        upper = 2**10 / eps**6 * log_term * math.exp(2 * m0)
    else:
        log_term = math.log(1 / delta)
        lower = 1 / (2 * eps**2) * log_term * math.exp(2 * m2)
        upper = 2**4 / eps**6 * log_term * math.exp(2 * m0)
    return BoundReport(2, eps, delta, pvm.n, pvm.name, lower=lower, upper=upper, aux={"M0": m0, "M2": m2})


def bound_thm3(prec: Precision, proof_constants: bool = False) -> BoundReport:
    """Lower bound for the global protocol; independent of the qubit count."""
    eps, delta = prec.epsilon, prec.delta
    if proof_constants:
        lower = 1 / (2 * eps**2) * math.log(2 / delta)
    else:
        lower = 1 / (8 * eps**2) * math.log(1 / delta)
    return BoundReport(3, eps, delta, 0, "any", lower=lower)


def bound_thm4(pvm: Pvm, prec: Precision) -> BoundReport:
    """Upper bound on the expected call count of the direct protocol."""
    ss = support_sets(pvm)
    eps, delta = prec.epsilon, prec.delta
    upper = 1 + 1 / (eps**2 * delta) + 2 * ss.size_T / eps**2 * math.log(2 / delta)
    return BoundReport(
        4,
        eps,
        delta,
        pvm.n,
        pvm.name,
        upper=upper,
        aux={"size_T": ss.size_T, "max_size_T": 8**pvm.n, "expected_L": expected_calls_direct(pvm, prec)},
    )


def bound_thm5(pvm: Pvm, prec: Precision, proof_constants: bool = False) -> BoundReport:
    """Entropy bracket on the direct protocol's call count, via per-element entropies."""
    eps, delta = prec.epsilon, prec.delta
    m2 = max(per_element_entropy(psi, 2) for psi in pvm.elements)
    m0 = max(per_element_entropy(psi, 0) for psi in pvm.elements)
    d2 = 4**pvm.n
    if proof_constants:
        log_term = math.log(2 / delta)
        lower = 2 * d2 / eps**2 * log_term * math.exp(m2)
        upper = 64 * d2 / eps**4 * log_term * math.exp(m0)
    else:
        log_term = math.log(1 / delta)
        lower = d2 / (2 * eps**2) * log_term * math.exp(m2)
        upper = 4 * d2 / eps**4 * log_term * math.exp(m0)
    return BoundReport(5, eps, delta, pvm.n, pvm.name, lower=lower, upper=upper, aux={"max_M0": m0, "max_M2": m2})


@dataclass(frozen=True)
class Truncation:
    operator: np.ndarray
    retained: tuple[int, ...]
    threshold: float


def truncate_element(psi: np.ndarray, prec: Precision) -> Truncation:
    """Drop small Pauli coefficients of a pure projector and renormalize (Frobenius).

    Coefficients with ``|tr[psi P_l]| < eps / (2 sqrt 2) * sqrt(exp(-M0) / 2^n)``
    are removed, where ``M0`` is the element's zeroth-order entropy.
    """
    c = _pure_coefficients(psi)
    n = qcore.num_qubits(len(psi))
    m0 = per_element_entropy(psi, 0)
    thr = prec.epsilon / (2 * math.sqrt(2)) * math.sqrt(math.exp(-m0) / 2**n)
    keep = np.flatnonzero(support_mask(c**2) & (np.abs(c) >= thr))
    assert keep.size, "largest coefficient always survives truncation"
    op = np.zeros_like(np.asarray(psi, dtype=complex))
    for l in keep:
        op += c[l] * qcore.pauli_matrix(qcore.pauli_from_index(n, int(l)))
    op /= np.linalg.norm(op)
    return Truncation(op, tuple(int(l) for l in keep), thr)


def variance_constants(pvm: Pvm, povm: Povm) -> tuple[float, float]:
    """``(c1, c3)``: the per-draw variance constants of the efficient and direct protocols."""
    _check_pair(pvm, povm)
    f = exact_fidelity(pvm, povm)
    w = pauli_weights(pvm)
    s = support_mask(w)
    num = (povm.coefficients * pvm.coefficients).sum(axis=0)
    c1 = float(np.sum(num[s] ** 2 / (pvm.dim * w[s])) - f**2)
    c3 = float(np.einsum("kij,kji->", povm.elements, povm.elements).real / pvm.dim - f**2)
    return c1, c3
