"""Ideal projective measurements, noisy implementations and a simulated device.

A :class:`Pvm` holds the 2^n orthonormal vectors of an ideal rank-1
projective measurement. A :class:`Povm` holds the actual (possibly noisy)
effect operators. :class:`MeasurementDevice` samples Born-rule outcomes
from a Povm and counts how often it is called.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from . import qcore
from .errors import NumericalError, ValidationError
from .qcore import DEFAULT_ATOL
from .seeding import DEVICE_STREAM, make_rng

__all__ = [
    "Pvm",
    "Povm",
    "NoiseSpec",
    "MeasurementDevice",
    "computational_pvm",
    "bell_pvm",
    "ejm_pvm",
    "tetrahedron_state",
    "apply_depolarizing",
    "apply_unitary_error",
    "apply_noise",
    "random_povm_near",
    "build_pvm",
]

MEASUREMENTS = ("bell", "ejm", "computational")
NOISE_KINDS = ("none", "depolarizing")


@dataclass(frozen=True, eq=False)
class Pvm:
    """Rank-1 projective measurement given by the rows of ``vectors``.

    Row ``k`` is the state vector of the k-th outcome.
    """

    vectors: np.ndarray
    name: str = "pvm"
    atol: float = field(default=DEFAULT_ATOL, repr=False)

    def __post_init__(self):
        vecs = np.array(self.vectors, dtype=complex)
        if vecs.ndim != 2 or vecs.shape[0] != vecs.shape[1]:
            raise ValidationError(f"{self.name}: expected a square stack of vectors, got {vecs.shape}")
        qcore.num_qubits(vecs.shape[0])
        vecs.setflags(write=False)
        object.__setattr__(self, "vectors", vecs)
        self._validate()

    def _validate(self):
        gram = self.vectors.conj() @ self.vectors.T
        if not np.allclose(np.diag(gram).real, 1, rtol=0, atol=self.atol):
            raise ValidationError(f"{self.name}: elements are not unit trace")
        if not np.allclose(gram, np.eye(self.dim), rtol=0, atol=self.atol):
            raise ValidationError(f"{self.name}: elements are not mutually orthogonal")
        if not np.allclose(self.elements.sum(axis=0), np.eye(self.dim), rtol=0, atol=self.atol):
            raise ValidationError(f"{self.name}: elements do not sum to identity")

    @property
    def dim(self) -> int:
        return self.vectors.shape[0]

    @property
    def n(self) -> int:
        return qcore.num_qubits(self.dim)

    def __len__(self) -> int:
        return self.dim

    @cached_property
    def elements(self) -> np.ndarray:
        """Projectors ``psi_k`` stacked as ``(2**n, d, d)``."""
        return np.einsum("ki,kj->kij", self.vectors, self.vectors.conj())

    @cached_property
    def coefficients(self) -> np.ndarray:
        """Real array ``C[k, l] = tr[psi_k P_l]``."""
        return qcore.pauli_coefficients(self.elements).real

    def as_povm(self) -> Povm:
        return Povm(self.elements, name=self.name)


@dataclass(frozen=True, eq=False)
class Povm:
    """Effect operators ``V_k`` stacked as ``(2**n, d, d)``."""

    elements: np.ndarray
    name: str = "povm"
    atol: float = field(default=DEFAULT_ATOL, repr=False)

    def __post_init__(self):
        els = np.array(self.elements, dtype=complex)
        if els.ndim != 3 or els.shape[1] != els.shape[2] or els.shape[0] != els.shape[1]:
            raise ValidationError(f"{self.name}: expected shape (d, d, d), got {els.shape}")
        qcore.num_qubits(els.shape[1])
        els.setflags(write=False)
        object.__setattr__(self, "elements", els)
        for k, v in enumerate(els):
            if not qcore.is_hermitian(v, self.atol):
                raise ValidationError(f"{self.name}: element {k} is not Hermitian")
            w = np.linalg.eigvalsh((v + v.conj().T) / 2)
            if w.min() < -self.atol or w.max() > 1 + self.atol:
                raise ValidationError(f"{self.name}: element {k} has eigenvalues outside [0, 1]")
        if not np.allclose(els.sum(axis=0), np.eye(self.dim), rtol=0, atol=self.atol):
            raise ValidationError(f"{self.name}: elements do not sum to identity")

    @property
    def dim(self) -> int:
        return self.elements.shape[1]

    @property
    def n(self) -> int:
        return qcore.num_qubits(self.dim)

    def __len__(self) -> int:
        return self.elements.shape[0]

    @cached_property
    def coefficients(self) -> np.ndarray:
        """Real array ``C[k, l] = tr[V_k P_l]``."""
        return qcore.pauli_coefficients(self.elements).real


@dataclass(frozen=True)
class NoiseSpec:
    kind: str = "none"
    p: float = 0.0

    def __post_init__(self):
        if self.kind not in NOISE_KINDS:
            raise ValidationError(f"unknown noise kind {self.kind!r}; expected one of {NOISE_KINDS}")
        if not 0.0 <= self.p <= 1.0 or math.isnan(self.p):
            raise ValidationError(f"error rate p={self.p} outside [0, 1]")


def computational_pvm(n: int, cap: int | None = None) -> Pvm:
    qcore.check_qubits(n, cap)
    return Pvm(np.eye(2**n), name=f"computational{n}")


def bell_pvm() -> Pvm:
    """Bell basis ordered Phi+, Phi-, Psi+, Psi-."""
    s = 1 / math.sqrt(2)
    vecs = np.array(
        [
            [s, 0, 0, s],
            [s, 0, 0, -s],
            [0, s, s, 0],
            [0, s, -s, 0],
        ]
    )
    return Pvm(vecs, name="bell")


TETRAHEDRON = np.array(
    [
        [1, 1, 1],
        [1, -1, -1],
        [-1, 1, -1],
        [-1, -1, 1],
    ]
) / math.sqrt(3)


def _bloch_state(polar: float, azimuth: float) -> np.ndarray:
    return np.array([math.cos(polar / 2), np.exp(1j * azimuth) * math.sin(polar / 2)])


def tetrahedron_state(b: int, antipodal: bool = False) -> np.ndarray:
    """Qubit state pointing to tetrahedron vertex ``b`` (0-based), or its antipode."""
    x, y, z = TETRAHEDRON[b]
    polar = math.acos(max(-1.0, min(1.0, z)))
    azimuth = math.atan2(y, x)
    if antipodal:
        return _bloch_state(math.pi - polar, azimuth + math.pi)
    return _bloch_state(polar, azimuth)


def _ejm_vectors(theta: float, flip: bool) -> np.ndarray:
    plus = (math.sqrt(3) + np.exp(1j * theta)) / (2 * math.sqrt(2))
    minus = (math.sqrt(3) - np.exp(1j * theta)) / (2 * math.sqrt(2))
    rows = []
    for b in range(4):
        m = tetrahedron_state(b)
        mm = tetrahedron_state(b, antipodal=True)
        if flip:
            mm = -mm
        rows.append(plus * np.kron(m, mm) + minus * np.kron(mm, m))
    return np.array(rows)


def ejm_pvm(theta: float) -> Pvm:
    """Elegant joint measurement family on two qubits."""
    if not math.isfinite(theta):
        raise ValidationError(f"theta must be finite, got {theta}")
    theta = math.fmod(theta, 2 * math.pi)
    try:
        return Pvm(_ejm_vectors(theta, flip=False), name=f"ejm({theta:.6g})")
    except ValidationError as first:
        try:
            return Pvm(_ejm_vectors(theta, flip=True), name=f"ejm({theta:.6g})")
        except ValidationError:
            raise ValidationError(f"EJM construction failed at theta={theta}: {first}") from None


def _effects(measurement: Pvm | Povm) -> np.ndarray:
    return measurement.elements


def apply_depolarizing(measurement: Pvm | Povm, p: float) -> Povm:
    """Effects seen through a depolarizing channel on the input state.

    ``V_k = (1 - p) E_k + p tr[E_k] id / 2**n`` (Heisenberg picture).
    """
    NoiseSpec("depolarizing", p)
    els = _effects(measurement)
    d = els.shape[1]
    traces = np.trace(els, axis1=1, axis2=2).real
    out = (1 - p) * els + p * traces[:, None, None] * np.eye(d)[None] / d
    return Povm(out, name=f"{measurement.name}+depol({p:g})")


def apply_unitary_error(measurement: Pvm | Povm, unitary: np.ndarray) -> Povm:
    """Coherent error: ``V_k = U^dagger E_k U`` (the input is rotated by U first)."""
    u = np.asarray(unitary, dtype=complex)
    els = _effects(measurement)
    if u.shape != els.shape[1:] or not np.allclose(u.conj().T @ u, np.eye(len(u)), atol=DEFAULT_ATOL):
        raise ValidationError("unitary error must be a unitary of matching dimension")
    out = np.einsum("ji,kjl,lm->kim", u.conj(), els, u)
    return Povm(out, name=f"{measurement.name}+unitary")


def apply_noise(pvm: Pvm, noise: NoiseSpec) -> Povm:
    if noise.kind == "none":
        return pvm.as_povm()
    return apply_depolarizing(pvm, noise.p)


def random_povm_near(measurement: Pvm | Povm, strength: float, rng: np.random.Generator) -> Povm:
    """A random valid POVM obtained by perturbing ``measurement``.

    Each effect gets a random PSD perturbation of the given strength; the set
    is then renormalized as ``S^{-1/2} G_k S^{-1/2}`` with ``S = sum G_k`` so
    completeness holds exactly.
    """
    els = _effects(measurement)
    d = els.shape[1]
    g = []
    for e in els:
        a = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
        g.append(e + strength * (a @ a.conj().T) / d)
    g = np.array(g)
    w, v = np.linalg.eigh(g.sum(axis=0))
    s_inv_half = (v / np.sqrt(w)) @ v.conj().T
    out = np.einsum("ij,kjl,lm->kim", s_inv_half, g, s_inv_half)
    out = (out + out.conj().transpose(0, 2, 1)) / 2
    return Povm(out, name=f"{measurement.name}+random({strength:g})")


def build_pvm(measurement: str, theta: float = 0.0, n: int = 2) -> Pvm:
    if measurement == "bell":
        return bell_pvm()
    if measurement == "ejm":
        return ejm_pvm(theta)
    if measurement == "computational":
        return computational_pvm(n)
    raise ValidationError(f"unknown measurement {measurement!r}; expected one of {MEASUREMENTS}")


class MeasurementDevice:
    """Born-rule sampler over a :class:`Povm` with a call counter.

    Every shot increments ``call_count`` by one, whether it comes through
    :meth:`measure` or the batched :meth:`measure_many`.
    """

    def __init__(self, povm: Povm, seed: int | np.random.Generator = 0, atol: float = DEFAULT_ATOL):
        self.povm = povm
        self.atol = atol
        self.rng = seed if isinstance(seed, np.random.Generator) else make_rng(seed, DEVICE_STREAM)
        self.call_count = 0

    @property
    def dim(self) -> int:
        return self.povm.dim

    def probabilities(self, states: np.ndarray) -> np.ndarray:
        """Outcome distributions ``tr[V_k rho_s]`` for a stack of density matrices."""
        states = np.asarray(states, dtype=complex)
        single = states.ndim == 2
        if single:
            states = states[None]
        if states.shape[1:] != (self.dim, self.dim):
            raise ValidationError(f"state dimension {states.shape[1:]} does not match device dimension {self.dim}")
        for rho in states:
            if not qcore.is_density_matrix(rho, self.atol):
                raise ValidationError("input is not a valid density matrix")
        probs = np.einsum("kij,sji->sk", self.povm.elements, states).real
        if probs.min() < -self.atol:
            raise NumericalError(f"negative outcome probability {probs.min():.3e}")
        probs = np.clip(probs, 0.0, None)
        return probs[0] if single else probs

    def _sample(self, probs: np.ndarray) -> np.ndarray:
        # Cumulative buckets; the last outcome absorbs any residual mass.
        cdf = np.cumsum(probs, axis=-1)[..., :-1]
        u = self.rng.random(probs.shape[0])
        return (u[:, None] >= cdf).sum(axis=1)

    def measure(self, state: np.ndarray) -> int:
        probs = self.probabilities(state)
        self.call_count += 1
        return int(self._sample(probs[None])[0])

    def measure_many(self, states: np.ndarray, which: np.ndarray) -> np.ndarray:
        """Measure ``states[which[j]]`` for every shot ``j``; returns the outcomes.

        Equivalent to ``len(which)`` calls of :meth:`measure` (and counted as
        such) but evaluates each distinct state's distribution once.
        """
        which = np.asarray(which, dtype=np.int64)
        if which.size == 0:
            return np.empty(0, dtype=np.int64)
        probs = self.probabilities(np.asarray(states))
        if probs.ndim == 1:
            probs = probs[None]
        if which.min() < 0 or which.max() >= len(probs):
            raise IndexError("state selector out of range")
        self.call_count += int(which.size)
        return self._sample(probs[which]).astype(np.int64)

    def measure_counts(self, states: np.ndarray, which: np.ndarray, shots: np.ndarray) -> np.ndarray:
        """Outcome histograms for ``shots[j]`` repeated measurements of ``states[which[j]]``.

        Same distribution as ``shots[j]`` calls of :meth:`measure` and counted
        as that many calls, but costs ``O(dim)`` per row instead of per shot.
        Returns an ``(len(which), dim)`` integer array.
        """
        which = np.asarray(which, dtype=np.int64)
        shots = np.asarray(shots, dtype=np.int64)
        if which.shape != shots.shape:
            raise ValidationError("which and shots must have the same shape")
        if which.size == 0:
            return np.empty((0, self.dim), dtype=np.int64)
        if shots.min() < 0:
            raise ValidationError("shot counts must be non-negative")
        probs = self.probabilities(np.asarray(states))
        if probs.ndim == 1:
            probs = probs[None]
        if which.min() < 0 or which.max() >= len(probs):
            raise IndexError("state selector out of range")
        probs = probs / probs.sum(axis=1, keepdims=True)
        self.call_count += int(shots.sum())
        return self.rng.multinomial(shots, probs[which])
