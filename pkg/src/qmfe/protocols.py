"""Measurement-fidelity estimation protocols.

Three estimators of ``F = 2^-n sum_k tr[psi_k V_k]``:

* ``efficient``: importance-sample Pauli strings with weight
  ``q_l = sum_k tr[psi_k P_l]^2 / 2^n``, measure random product eigenstates
  and use every outcome.
* ``global``: feed the ideal (entangled) eigenstates ``psi_k`` to the device
  and count hits.
* ``direct``: importance-sample (element, Pauli) pairs with
  ``q_kl = tr[psi_k P_l]^2 / 2^n`` and keep only hits on the sampled element.

Each run returns an :class:`EstimateReport` holding every draw and shot, so
the estimate can be recomputed from the report alone. With ``aggregate=True``
the shots of each draw are simulated as one multinomial histogram over
(eigenstate, outcome) cells instead of one by one; the estimator has the same
distribution and the report keeps the histograms instead of per-shot arrays.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from . import qcore
from .errors import SupportError, ValidationError
from .measurements import MeasurementDevice, Pvm
from .seeding import PROTOCOL_STREAM, make_rng

log = logging.getLogger(__name__)

__all__ = [
    "PROTOCOLS",
    "Precision",
    "EstimateReport",
    "importance_distribution_efficient",
    "importance_distribution_direct",
    "pauli_weights",
    "support_mask",
    "pauli_draw_count",
    "shots_for_pauli_efficient",
    "shots_for_pair_direct",
    "single_shot_efficient",
    "single_shot_direct",
    "single_shot_global",
    "global_call_count",
    "run_efficient",
    "run_global",
    "run_direct",
    "run_protocol",
    "plan_efficient",
    "plan_direct",
]

PROTOCOLS = ("efficient", "global", "direct")

SUPPORT_RTOL = 1e-12
MAX_DRAWS = 10**8
# Per-shot runs keep every shot in memory; aggregate runs only keep counts.
MAX_CALLS = 2 * 10**7
MAX_AGGREGATE_CALLS = 10**15


@dataclass(frozen=True)
class Precision:
    """Additive error ``epsilon`` and failure probability ``delta``."""

    epsilon: float
    delta: float

    def __post_init__(self):
        if not (0 < self.epsilon <= 1):
            raise ValidationError(f"epsilon={self.epsilon} must lie in (0, 1]")
        if not (0 < self.delta <= 1):
            raise ValidationError(f"delta={self.delta} must lie in (0, 1]")


def _ceil(x):
    """Ceiling that forgives one ulp of representation error above an integer.

    Returns floats so astronomically large counts do not wrap around.
    """
    x = np.asarray(x, dtype=float)
    below = np.floor(x)
    return np.where(x - below <= np.spacing(np.abs(x)), below, np.ceil(x))


def support_mask(values: np.ndarray, rtol: float = SUPPORT_RTOL) -> np.ndarray:
    """Entries that are nonzero relative to the largest one."""
    values = np.abs(np.asarray(values))
    return values > rtol * values.max()


def pauli_weights(pvm: Pvm) -> np.ndarray:
    """``w_l = sum_k tr[psi_k P_l]^2`` for every Pauli index."""
    return (pvm.coefficients**2).sum(axis=0)


def importance_distribution_efficient(pvm: Pvm) -> np.ndarray:
    return pauli_weights(pvm) / pvm.dim


def importance_distribution_direct(pvm: Pvm) -> np.ndarray:
    """Joint distribution ``q[k, l]``."""
    return pvm.coefficients**2 / pvm.dim


def pauli_draw_count(prec: Precision) -> int:
    x = 1.0 / (prec.epsilon**2 * prec.delta)
    if x > MAX_DRAWS:
        raise ValidationError(f"precision requires {x:.3g} Pauli draws (limit {MAX_DRAWS})")
    return max(1, int(_ceil(x)))


def _efficient_shots(weight, m: int, prec: Precision):
    return _ceil(np.asarray(weight, dtype=float) ** -2 * (2 / (m * prec.epsilon**2)) * math.log(2 / prec.delta))


def _direct_shots(coef_sq, n: int, m: int, prec: Precision):
    return _ceil(2 ** (n + 1) / (m * prec.epsilon**2 * np.asarray(coef_sq, dtype=float)) * math.log(2 / prec.delta))


def _efficient_support(pvm: Pvm) -> np.ndarray:
    return support_mask(pauli_weights(pvm))


def _direct_support(pvm: Pvm) -> np.ndarray:
    return support_mask(pvm.coefficients**2)


def _check_pauli(pvm: Pvm, l: int) -> float:
    if not 0 <= l < 4**pvm.n:
        raise IndexError(f"Pauli index {l} out of range")
    if not _efficient_support(pvm)[l]:
        raise SupportError(f"Pauli index {l} ({qcore.pauli_from_index(pvm.n, l)}) is outside the support set S")
    return float(pauli_weights(pvm)[l])


def _check_pair(pvm: Pvm, k: int, l: int) -> float:
    if not (0 <= k < pvm.dim and 0 <= l < 4**pvm.n):
        raise IndexError(f"pair ({k}, {l}) out of range")
    if not _direct_support(pvm)[k, l]:
        raise SupportError(f"pair ({k}, {qcore.pauli_from_index(pvm.n, l)}) is outside the support set T")
    return float(pvm.coefficients[k, l])


def shots_for_pauli_efficient(pvm: Pvm, l: int, m: int, prec: Precision) -> int:
    return int(_efficient_shots(_check_pauli(pvm, l), m, prec))


def shots_for_pair_direct(pvm: Pvm, k: int, l: int, m: int, prec: Precision) -> int:
    c = _check_pair(pvm, k, l)
    return int(_direct_shots(c**2, pvm.n, m, prec))


def single_shot_efficient(pvm: Pvm, l: int, lam: float, outcome: int) -> float:
    """One-shot estimate from eigenvalue ``lam`` of ``P_l`` and device outcome."""
    w = _check_pauli(pvm, l)
    return pvm.dim / w * lam * pvm.coefficients[outcome, l]


def single_shot_direct(pvm: Pvm, k: int, l: int, lam: float, outcome: int) -> float:
    c = _check_pair(pvm, k, l)
    return pvm.dim / c * lam * (1.0 if outcome == k else 0.0)


def single_shot_global(k: int, outcome: int) -> float:
    return 1.0 if k == outcome else 0.0


def global_call_count(prec: Precision) -> int:
    x = math.log(1 / prec.delta) / (8 * prec.epsilon**2)
    if x > MAX_CALLS:
        raise ValidationError(f"precision requires {x:.3g} device calls (limit {MAX_CALLS})")
    return max(1, int(_ceil(x)))


@dataclass(eq=False)
class EstimateReport:
    """Everything one protocol run did.

    Per-draw arrays have length ``m``; per-shot arrays have length
    ``total_calls`` and are grouped by draw in order (draw ``i`` owns the
    next ``shots[i]`` entries).

    For the global protocol every draw is one shot, ``paulis`` and
    ``eigen_indices`` are ``None`` and ``elements`` holds the prepared ``k_i``.
    For the efficient protocol ``elements`` is ``None``.

    Aggregate runs leave ``eigen_indices`` and ``outcomes`` as ``None`` and
    fill ``counts[i, a, k]``: shots of draw ``i`` that prepared eigenstate
    ``a`` and saw outcome ``k``.
    """

    protocol: str
    estimate: float
    m: int
    paulis: np.ndarray | None
    elements: np.ndarray | None
    shots: np.ndarray
    eigen_indices: np.ndarray | None
    outcomes: np.ndarray
    draw_estimates: np.ndarray
    total_calls: int
    seed: int
    epsilon: float
    delta: float
    counts: np.ndarray | None = None

    @property
    def shot_draws(self) -> np.ndarray:
        """Draw index owning each shot."""
        return np.repeat(np.arange(self.m), self.shots)


def _sample_support(rng: np.random.Generator, probs: np.ndarray, mask: np.ndarray, size: int) -> np.ndarray:
    """Inverse-CDF sampling restricted to ``mask``; returns flat indices."""
    idx = np.flatnonzero(mask)
    cdf = np.cumsum(probs.ravel()[idx])
    cdf /= cdf[-1]
    pos = np.searchsorted(cdf, rng.random(size), side="right")
    return idx[np.minimum(pos, len(idx) - 1)]


def _check_device(pvm: Pvm, device: MeasurementDevice):
    if device.dim != pvm.dim:
        raise ValidationError(f"device dimension {device.dim} does not match PVM dimension {pvm.dim}")


def _measure_eigenstates(device: MeasurementDevice, n: int, l: np.ndarray, a: np.ndarray):
    """Prepare ``phi_a^(l)`` per shot and measure; returns (eigenvalues, outcomes)."""
    d = 2**n
    keys = l * d + a
    uniq, inverse = np.unique(keys, return_inverse=True)
    _, vecs = qcore.eigen_data(n, uniq // d, uniq % d)
    states = np.einsum("si,sj->sij", vecs, vecs.conj())
    outcomes = device.measure_many(states, inverse)
    lam, _ = qcore.eigen_data(n, l, a)
    return lam, outcomes


def _per_draw_means(values: np.ndarray, shots: np.ndarray) -> np.ndarray:
    owner = np.repeat(np.arange(len(shots)), shots)
    return np.bincount(owner, weights=values, minlength=len(shots)) / shots


def _guard_calls(shots: np.ndarray, aggregate: bool = False) -> int:
    total = float(shots.sum())
    limit = MAX_AGGREGATE_CALLS if aggregate else MAX_CALLS
    if total > limit:
        raise ValidationError(f"run would need {total:.3g} device calls (limit {limit}); loosen epsilon/delta or change m")
    return int(total)


def _eigen_counts(rng: np.random.Generator, device: MeasurementDevice, n: int, paulis: np.ndarray, shots: np.ndarray):
    """Aggregate simulation: ``(lam[i, a], counts[i, a, k])`` for every draw ``i``."""
    d = 2**n
    m = len(paulis)
    a_counts = rng.multinomial(shots, np.full(d, 1.0 / d))
    l_grid = np.repeat(paulis, d)
    a_grid = np.tile(np.arange(d), m)
    keys = l_grid * d + a_grid
    uniq, inverse = np.unique(keys, return_inverse=True)
    _, vecs = qcore.eigen_data(n, uniq // d, uniq % d)
    states = np.einsum("si,sj->sij", vecs, vecs.conj())
    counts = device.measure_counts(states, inverse, a_counts.ravel())
    lam, _ = qcore.eigen_data(n, l_grid, a_grid)
    return lam.reshape(m, d), counts.reshape(m, d, d)


def _draw_count(prec: Precision, m: int | None) -> int:
    m = pauli_draw_count(prec) if m is None else int(m)
    if m < 1:
        raise ValidationError("m must be positive")
    return m


def _plan_efficient(pvm: Pvm, prec: Precision, rng: np.random.Generator, m: int | None):
    m = _draw_count(prec, m)
    weights = pauli_weights(pvm)
    paulis = _sample_support(rng, weights, support_mask(weights), m)
    return paulis, _efficient_shots(weights[paulis], m, prec)


def _plan_direct(pvm: Pvm, prec: Precision, rng: np.random.Generator, m: int | None):
    m = _draw_count(prec, m)
    coef = pvm.coefficients
    flat = _sample_support(rng, coef**2, _direct_support(pvm), m)
    elements, paulis = np.divmod(flat, coef.shape[1])
    return elements, paulis, _direct_shots(coef[elements, paulis] ** 2, pvm.n, m, prec)


def plan_efficient(pvm: Pvm, prec: Precision, seed: int, m: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Pauli draws and per-draw shot counts that :func:`run_efficient` would use.

    Shot counts are floats (they can exceed any integer type for nearly
    vanishing weights); the call count of the run is their sum.
    """
    return _plan_efficient(pvm, prec, make_rng(seed, PROTOCOL_STREAM), m)


def plan_direct(pvm: Pvm, prec: Precision, seed: int, m: int | None = None) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    return _plan_direct(pvm, prec, make_rng(seed, PROTOCOL_STREAM), m)


def _shot_dtype(d: int):
    return np.uint8 if d <= 256 else np.int64


def run_efficient(
    pvm: Pvm, device: MeasurementDevice, prec: Precision, seed: int, m: int | None = None, aggregate: bool = False
) -> EstimateReport:
    """Efficient protocol with local Pauli eigenstates.

    ``m`` overrides the precision-derived number of Pauli draws (shot counts
    still follow from ``prec`` and the chosen ``m``).
    """
    _check_device(pvm, device)
    rng = make_rng(seed, PROTOCOL_STREAM)
    n, d = pvm.n, pvm.dim
    paulis, shots = _plan_efficient(pvm, prec, rng, m)
    total = _guard_calls(shots, aggregate)
    shots = shots.astype(np.int64)
    weights = pauli_weights(pvm)

    if aggregate:
        lam, counts = _eigen_counts(rng, device, n, paulis, shots)
        # xhat[i, a, k] = d / w_l * lam[i, a] * C[k, l]
        xhat = (d / weights[paulis])[:, None, None] * lam[:, :, None] * pvm.coefficients[:, paulis].T[:, None, :]
        draw_est = (counts * xhat).sum(axis=(1, 2)) / shots
        return EstimateReport(
            protocol="efficient",
            estimate=float(draw_est.mean()),
            m=len(paulis),
            paulis=paulis,
            elements=None,
            shots=shots,
            eigen_indices=None,
            outcomes=None,
            draw_estimates=draw_est,
            total_calls=total,
            seed=seed,
            epsilon=prec.epsilon,
            delta=prec.delta,
            counts=counts,
        )

    shot_l = np.repeat(paulis, shots)
    a = rng.integers(0, d, size=total)
    lam, outcomes = _measure_eigenstates(device, n, shot_l, a)

    xhat = d / weights[shot_l] * lam * pvm.coefficients[outcomes, shot_l]
    draw_est = _per_draw_means(xhat, shots)
    return EstimateReport(
        protocol="efficient",
        estimate=float(draw_est.mean()),
        m=len(paulis),
        paulis=paulis,
        elements=None,
        shots=shots,
        eigen_indices=a.astype(_shot_dtype(d)),
        outcomes=outcomes.astype(_shot_dtype(d)),
        draw_estimates=draw_est,
        total_calls=total,
        seed=seed,
        epsilon=prec.epsilon,
        delta=prec.delta,
    )


def run_direct(
    pvm: Pvm, device: MeasurementDevice, prec: Precision, seed: int, m: int | None = None, aggregate: bool = False
) -> EstimateReport:
    """Direct protocol: joint (element, Pauli) sampling, hits on the sampled element only."""
    _check_device(pvm, device)
    rng = make_rng(seed, PROTOCOL_STREAM)
    n, d = pvm.n, pvm.dim
    elements, paulis, shots = _plan_direct(pvm, prec, rng, m)
    total = _guard_calls(shots, aggregate)
    shots = shots.astype(np.int64)

    if aggregate:
        lam, counts = _eigen_counts(rng, device, n, paulis, shots)
        hits = counts[np.arange(len(paulis)), :, elements]  # (m, d): per eigenstate, hits on k_i
        coef = pvm.coefficients[elements, paulis]
        draw_est = (d / coef) * (lam * hits).sum(axis=1) / shots
        return EstimateReport(
            protocol="direct",
            estimate=float(draw_est.mean()),
            m=len(paulis),
            paulis=paulis,
            elements=elements,
            shots=shots,
            eigen_indices=None,
            outcomes=None,
            draw_estimates=draw_est,
            total_calls=total,
            seed=seed,
            epsilon=prec.epsilon,
            delta=prec.delta,
            counts=counts,
        )

    shot_k = np.repeat(elements, shots)
    shot_l = np.repeat(paulis, shots)
    a = rng.integers(0, d, size=total)
    lam, outcomes = _measure_eigenstates(device, n, shot_l, a)

    xhat = d / pvm.coefficients[shot_k, shot_l] * lam * (outcomes == shot_k)
    draw_est = _per_draw_means(xhat, shots)
    return EstimateReport(
        protocol="direct",
        estimate=float(draw_est.mean()),
        m=len(paulis),
        paulis=paulis,
        elements=elements,
        shots=shots,
        eigen_indices=a.astype(_shot_dtype(d)),
        outcomes=outcomes.astype(_shot_dtype(d)),
        draw_estimates=draw_est,
        total_calls=total,
        seed=seed,
        epsilon=prec.epsilon,
        delta=prec.delta,
    )


def run_global(pvm: Pvm, device: MeasurementDevice, prec: Precision, seed: int) -> EstimateReport:
    """Global protocol: one shot per uniformly drawn ideal eigenstate."""
    _check_device(pvm, device)
    rng = make_rng(seed, PROTOCOL_STREAM)
    total = global_call_count(prec)
    ks = rng.integers(0, pvm.dim, size=total)
    outcomes = device.measure_many(pvm.elements, ks)
    hits = (outcomes == ks).astype(float)
    return EstimateReport(
        protocol="global",
        estimate=float(hits.mean()),
        m=total,
        paulis=None,
        elements=ks,
        shots=np.ones(total, dtype=np.int64),
        eigen_indices=None,
        outcomes=outcomes,
        draw_estimates=hits,
        total_calls=total,
        seed=seed,
        epsilon=prec.epsilon,
        delta=prec.delta,
    )


def run_protocol(
    name: str, pvm: Pvm, device: MeasurementDevice, prec: Precision, seed: int, m: int | None = None, aggregate: bool = False
) -> EstimateReport:
    """Dispatch by protocol name; ``aggregate`` has no effect on the global protocol."""
    if name == "efficient":
        return run_efficient(pvm, device, prec, seed, m=m, aggregate=aggregate)
    if name == "direct":
        return run_direct(pvm, device, prec, seed, m=m, aggregate=aggregate)
    if name == "global":
        if m is not None:
            log.warning("m override ignored for the global protocol")
        return run_global(pvm, device, prec, seed)
    raise ValidationError(f"unknown protocol {name!r}; expected one of {PROTOCOLS}")
