"""Dense linear algebra at dimension 2^n and the normalized Pauli basis.

Operators are plain ``numpy`` complex arrays of shape ``(2**n, 2**n)``.
Pauli strings are indexed in base 4 with qubit 0 as the most significant
digit (I=0, X=1, Y=2, Z=3), which matches the ``np.kron`` ordering used
everywhere else: qubit 0 is the most significant bit of a basis index.

Every Pauli operator returned here is normalized, ``P = (s_1 x ... x s_n) / sqrt(2**n)``,
so that ``tr[P_l P_m] = delta_lm``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import reduce

import numpy as np

from .errors import ValidationError

__all__ = [
    "DEFAULT_ATOL",
    "QUBIT_CAP",
    "PauliString",
    "PauliEigensystem",
    "pauli_from_index",
    "pauli_matrix",
    "pauli_eigensystem",
    "pauli_coefficients",
    "eigen_data",
    "hs_inner",
    "num_qubits",
    "check_qubits",
    "is_hermitian",
    "is_psd",
    "is_density_matrix",
    "product_state",
    "projector",
]

DEFAULT_ATOL = 1e-9

# Dense storage only; raise this deliberately if you have the memory for it.
QUBIT_CAP = 6

LABELS = "IXYZ"

SIGMA = np.array(
    [
        [[1, 0], [0, 1]],
        [[0, 1], [1, 0]],
        [[0, -1j], [1j, 0]],
        [[1, 0], [0, -1]],
    ],
    dtype=complex,
)

_S = 1 / math.sqrt(2)
# Row j of each block: eigenvector for bit j (bit 0 -> +1, bit 1 -> -1).
# Identity factors use the computational basis, both with eigenvalue +1.
_EIGVECS = np.array(
    [
        [[1, 0], [0, 1]],
        [[_S, _S], [_S, -_S]],
        [[_S, 1j * _S], [_S, -1j * _S]],
        [[1, 0], [0, 1]],
    ],
    dtype=complex,
)
_EIGSIGNS = np.array([[1, 1], [1, -1], [1, -1], [1, -1]])


@dataclass(frozen=True)
class PauliString:
    """An n-qubit Pauli word such as ``"XIZ"``."""

    labels: str

    def __post_init__(self):
        if not self.labels or any(c not in LABELS for c in self.labels):
            raise ValidationError(f"invalid Pauli labels {self.labels!r}")

    @property
    def n(self) -> int:
        return len(self.labels)

    @property
    def digits(self) -> tuple[int, ...]:
        return tuple(LABELS.index(c) for c in self.labels)

    @property
    def index(self) -> int:
        return reduce(lambda acc, d: 4 * acc + d, self.digits, 0)

    def __str__(self) -> str:
        return self.labels


def pauli_from_index(n: int, l: int) -> PauliString:
    """Decode the base-4 index ``l`` into an ``n``-qubit Pauli string."""
    if n < 1:
        raise ValidationError(f"qubit count must be positive, got {n}")
    if not 0 <= l < 4**n:
        raise IndexError(f"Pauli index {l} out of range [0, {4**n})")
    digits = []
    for _ in range(n):
        l, d = divmod(l, 4)
        digits.append(d)
    return PauliString("".join(LABELS[d] for d in reversed(digits)))


def pauli_matrix(p: PauliString) -> np.ndarray:
    mats = [SIGMA[d] for d in p.digits]
    return reduce(np.kron, mats) / math.sqrt(2**p.n)


@dataclass(frozen=True)
class PauliEigensystem:
    """Analytic spectral decomposition of a normalized Pauli operator.

    Eigenpair ``a`` uses bit ``j`` of ``a`` (qubit 0 = most significant bit)
    to pick the single-qubit eigenvector of factor ``j``.
    """

    pauli: PauliString
    eigenvalues: np.ndarray  # shape (2**n,)
    factors: np.ndarray  # shape (2**n, n, 2): single-qubit vectors per eigenstate

    def __len__(self) -> int:
        return len(self.eigenvalues)

    def state(self, a: int) -> np.ndarray:
        return product_state(self.factors[a])

    def projector(self, a: int) -> np.ndarray:
        return projector(self.state(a))

    def reconstruct(self) -> np.ndarray:
        return sum(lam * self.projector(a) for a, lam in enumerate(self.eigenvalues))


def _bits(a: int, n: int) -> list[int]:
    return [(a >> (n - 1 - j)) & 1 for j in range(n)]


def pauli_eigensystem(p: PauliString) -> PauliEigensystem:
    n = p.n
    digits = p.digits
    dim = 2**n
    eigenvalues = np.empty(dim)
    factors = np.empty((dim, n, 2), dtype=complex)
    for a in range(dim):
        sign = 1
        for j, b in enumerate(_bits(a, n)):
            factors[a, j] = _EIGVECS[digits[j], b]
            sign *= _EIGSIGNS[digits[j], b]
        eigenvalues[a] = sign / math.sqrt(dim)
    return PauliEigensystem(p, eigenvalues, factors)


def eigen_data(n: int, l, a) -> tuple[np.ndarray, np.ndarray]:
    """Eigenvalues and eigenvectors for arrays of (Pauli index, eigen index) pairs.

    Vectorized counterpart of :func:`pauli_eigensystem`; returns ``(lam, vecs)``
    with shapes ``(N,)`` and ``(N, 2**n)``.
    """
    l = np.atleast_1d(np.asarray(l, dtype=np.int64))
    a = np.atleast_1d(np.asarray(a, dtype=np.int64))
    sign = np.ones(l.shape, dtype=np.int64)
    vecs = np.ones((len(l), 1), dtype=complex)
    for j in range(n):
        digit = (l >> (2 * (n - 1 - j))) & 3
        bit = (a >> (n - 1 - j)) & 1
        sign = sign * _EIGSIGNS[digit, bit]
        f = _EIGVECS[digit, bit]  # (N, 2)
        vecs = (vecs[:, :, None] * f[:, None, :]).reshape(len(l), -1)
    return sign / math.sqrt(2**n), vecs


def pauli_coefficients(op: np.ndarray) -> np.ndarray:
    """All ``tr[op P_l]`` for ``l`` in ``[0, 4**n)`` via a per-qubit transform.

    Accepts a single operator ``(d, d)`` or a stack ``(..., d, d)``; the Pauli
    axis replaces the last two axes. Cost is ``O(n 4^n)`` per operator instead
    of ``O(16^n)`` for materializing every Pauli matrix.
    """
    op = np.asarray(op, dtype=complex)
    d = op.shape[-1]
    n = num_qubits(d)
    lead = op.shape[:-2]
    t = op.reshape(lead + (2,) * (2 * n))
    nl = len(lead)
    # tr[s a] = sum_{r,c} s[c, r] a[r, c]
    kernel = SIGMA.transpose(0, 2, 1)
    for j in range(n):
        # Axes at this point: lead, already-transformed Pauli digits (j of them),
        # then remaining row bits (n - j) and column bits (n - j).
        row_ax = nl + j
        col_ax = nl + j + (n - j)
        t = np.tensordot(t, kernel, axes=([row_ax, col_ax], [1, 2]))
        # The new Pauli digit lands last; move it to position nl + j.
        t = np.moveaxis(t, -1, nl + j)
    return t.reshape(lead + (4**n,)) / math.sqrt(d)


def hs_inner(a: np.ndarray, b: np.ndarray) -> complex:
    """Hilbert-Schmidt inner product ``tr[a^dagger b]``."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise ValidationError(f"dimension mismatch {a.shape} vs {b.shape}")
    return complex(np.vdot(a, b))


def num_qubits(dim: int) -> int:
    n = int(dim).bit_length() - 1
    if dim < 2 or 2**n != dim:
        raise ValidationError(f"dimension {dim} is not a power of two")
    return n


def check_qubits(n: int, cap: int | None = None) -> int:
    cap = QUBIT_CAP if cap is None else cap
    if not 1 <= n <= cap:
        raise ValidationError(f"qubit count {n} outside [1, {cap}]")
    return n


def is_hermitian(a: np.ndarray, atol: float = DEFAULT_ATOL) -> bool:
    return bool(np.allclose(a, a.conj().T, rtol=0, atol=atol))


def is_psd(a: np.ndarray, atol: float = DEFAULT_ATOL) -> bool:
    if not is_hermitian(a, atol):
        return False
    return bool(np.linalg.eigvalsh((a + a.conj().T) / 2).min() >= -atol)


def is_density_matrix(rho: np.ndarray, atol: float = DEFAULT_ATOL) -> bool:
    return is_psd(rho, atol) and abs(np.trace(rho) - 1) <= atol


def product_state(vectors) -> np.ndarray:
    return reduce(np.kron, vectors)


def projector(vec: np.ndarray) -> np.ndarray:
    vec = np.asarray(vec, dtype=complex)
    return np.outer(vec, vec.conj())
