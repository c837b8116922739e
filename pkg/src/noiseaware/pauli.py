"""Pauli operators, Pauli channels and the Walsh-Hadamard transform.

Labels are ordered canonically: identity first, then lexicographic over
``IXYZ`` per qubit (``II, IX, IY, IZ, XI, ...``). Every vector and transform
matrix in the package uses this order.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

PAULI_CHARS = "IXYZ"
_CHAR_TO_XZ = {"I": (0, 0), "X": (1, 0), "Y": (1, 1), "Z": (0, 1)}
_XZ_TO_CHAR = {v: k for k, v in _CHAR_TO_XZ.items()}

# Total probability tolerance for a valid channel.
CHANNEL_ATOL = 1e-12


@dataclass(frozen=True)
class PauliString:
    """Signed Hermitian Pauli operator in symplectic (x, z) form.

    Qubit ``q`` carries ``X`` when ``x_bits[q] = 1, z_bits[q] = 0``, ``Z`` for
    ``(0, 1)`` and ``Y`` for ``(1, 1)``.
    """

    x_bits: tuple[int, ...]
    z_bits: tuple[int, ...]
    sign: int = 1

    def __post_init__(self):
        if len(self.x_bits) != len(self.z_bits):
            raise ValueError("x_bits and z_bits must have the same length")
        if self.sign not in (1, -1):
            raise ValueError(f"sign must be +1 or -1, got {self.sign}")

    @classmethod
    def from_label(cls, label: str, sign: int = 1) -> PauliString:
        if label and label[0] in "+-":
            sign *= -1 if label[0] == "-" else 1
            label = label[1:]
        try:
            xz = [_CHAR_TO_XZ[c] for c in label]
        except KeyError as exc:
            raise ValueError(f"invalid Pauli label {label!r}") from exc
        return cls(tuple(x for x, _ in xz), tuple(z for _, z in xz), sign)

    @classmethod
    def identity(cls, n: int) -> PauliString:
        return cls((0,) * n, (0,) * n, 1)

    @classmethod
    def single(cls, n: int, qubit: int, char: str) -> PauliString:
        label = ["I"] * n
        label[qubit] = char
        return cls.from_label("".join(label))

    @property
    def n(self) -> int:
        return len(self.x_bits)

    @property
    def label(self) -> str:
        """Unsigned label such as ``"XIZ"``."""
        return "".join(_XZ_TO_CHAR[xz] for xz in zip(self.x_bits, self.z_bits))

    @property
    def support(self) -> tuple[int, ...]:
        return tuple(q for q in range(self.n) if self.x_bits[q] or self.z_bits[q])

    @property
    def weight(self) -> int:
        return len(self.support)

    def is_identity(self) -> bool:
        return not any(self.x_bits) and not any(self.z_bits)

    def unsigned(self) -> PauliString:
        return PauliString(self.x_bits, self.z_bits, 1)

    def restrict(self, qubits) -> str:
        """Unsigned label of this operator restricted to ``qubits``."""
        return "".join(_XZ_TO_CHAR[(self.x_bits[q], self.z_bits[q])] for q in qubits)

    def __mul__(self, other: PauliString) -> PauliString:
        # Products of anticommuting operators pick up a factor of i; that phase
        # is dropped, only the real sign is kept.
        _check_sizes(self, other)
        x = tuple(a ^ b for a, b in zip(self.x_bits, other.x_bits))
        z = tuple(a ^ b for a, b in zip(self.z_bits, other.z_bits))
        phase = 0
        for x1, z1, x2, z2 in zip(self.x_bits, self.z_bits, other.x_bits, other.z_bits):
            phase += _g(x1, z1, x2, z2)
        sign = self.sign * other.sign * (-1 if phase % 4 == 2 else 1)
        return PauliString(x, z, sign)

    def __str__(self) -> str:
        return ("+" if self.sign == 1 else "-") + self.label


def _g(x1: int, z1: int, x2: int, z2: int) -> int:
    """Exponent of i picked up when multiplying two single-qubit Paulis."""
    if x1 == 0 and z1 == 0:
        return 0
    if x1 == 1 and z1 == 1:
        return z2 - x2
    if x1 == 1:
        return z2 * (2 * x2 - 1)
    return x2 * (1 - 2 * z2)


def _check_sizes(a: PauliString, b: PauliString) -> None:
    if a.n != b.n:
        raise ValueError(f"qubit count mismatch: {a.n} != {b.n}")


def symplectic_product(a: PauliString, b: PauliString) -> int:
    _check_sizes(a, b)
    total = 0
    for xa, za, xb, zb in zip(a.x_bits, a.z_bits, b.x_bits, b.z_bits):
        total += xa * zb + za * xb
    return total % 2


def commutation_sign(a: PauliString, b: PauliString) -> int:
    """+1 if ``a`` and ``b`` commute, -1 if they anticommute."""
    return -1 if symplectic_product(a, b) else 1


@lru_cache(maxsize=None)
def pauli_labels(n: int) -> tuple[str, ...]:
    """All ``4**n`` labels in canonical order, identity first."""
    return tuple("".join(p) for p in itertools.product(PAULI_CHARS, repeat=n))


def label_index(label: str) -> int:
    idx = 0
    for c in label:
        idx = 4 * idx + PAULI_CHARS.index(c)
    return idx


@lru_cache(maxsize=None)
def walsh_hadamard_matrix(n: int) -> np.ndarray:
    """``F[a, b] = (-1)**<a, b>`` over all ``4**n`` labels.

    ``F @ p`` gives the eigenvalues (identity included) of the channel with
    probability vector ``p``; ``F @ lam / 4**n`` inverts it.
    """
    labels = [PauliString.from_label(lbl) for lbl in pauli_labels(n)]
    mat = np.array([[commutation_sign(a, b) for b in labels] for a in labels], dtype=float)
    mat.setflags(write=False)
    return mat


@lru_cache(maxsize=None)
def eigenvalue_jacobian(n: int) -> np.ndarray:
    """Identity-omitted map ``d lambda / d p``.

    With ``p_I = 1 - sum(p)`` eliminated, the non-identity eigenvalues are
    ``lambda = 1 + J @ p`` where ``J = S F T``: ``T`` re-inserts the identity
    probability and ``S`` drops the identity eigenvalue row.
    """
    full = walsh_hadamard_matrix(n)
    k = 4**n
    insert = np.vstack([-np.ones((1, k - 1)), np.eye(k - 1)])
    select = np.eye(k)[1:]
    jac = select @ full @ insert
    jac.setflags(write=False)
    return jac


@dataclass(frozen=True, eq=False)
class PauliChannel:
    """Probability vector over all Paulis on ``n_qubits`` (identity first)."""

    n_qubits: int
    probs: np.ndarray
    check: bool = True

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=float).copy()
        if probs.shape != (4**self.n_qubits,):
            raise ValueError(f"expected {4**self.n_qubits} probabilities, got {probs.shape}")
        if self.check:
            if abs(probs.sum() - 1.0) > CHANNEL_ATOL:
                raise ValueError(f"probabilities sum to {probs.sum():.15f}")
            if np.any(probs < -CHANNEL_ATOL) or np.any(probs > 1 + CHANNEL_ATOL):
                raise ValueError("probabilities must lie in [0, 1]")
        probs.setflags(write=False)
        object.__setattr__(self, "probs", probs)

    @classmethod
    def from_errors(cls, error_probs, n_qubits: int | None = None, check: bool = True) -> PauliChannel:
        """Build from the identity-omitted vector of non-identity probabilities."""
        error_probs = np.asarray(error_probs, dtype=float)
        if n_qubits is None:
            n_qubits = {3: 1, 15: 2}[error_probs.size]
        return cls(n_qubits, np.concatenate([[1.0 - error_probs.sum()], error_probs]), check)

    @classmethod
    def identity(cls, n_qubits: int) -> PauliChannel:
        probs = np.zeros(4**n_qubits)
        probs[0] = 1.0
        return cls(n_qubits, probs)

    @property
    def support(self) -> tuple[str, ...]:
        return pauli_labels(self.n_qubits)

    @property
    def errors(self) -> np.ndarray:
        """Non-identity probabilities (identity omitted)."""
        return self.probs[1:]

    @property
    def total_error(self) -> float:
        return float(self.probs[1:].sum())

    def prob(self, label: str) -> float:
        return float(self.probs[label_index(label)])

    def is_valid(self, atol: float = CHANNEL_ATOL) -> bool:
        return bool(abs(self.probs.sum() - 1) <= atol and np.all(self.probs >= -atol))

    def __eq__(self, other):
        if not isinstance(other, PauliChannel):
            return NotImplemented
        return self.n_qubits == other.n_qubits and np.array_equal(self.probs, other.probs)

    def __hash__(self):
        return hash((self.n_qubits, self.probs.tobytes()))


@dataclass(frozen=True, eq=False)
class GateEigenvalues:
    """Non-identity Pauli eigenvalues of a channel; the identity eigenvalue is 1."""

    n_qubits: int
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float).copy()
        if values.shape != (4**self.n_qubits - 1,):
            raise ValueError(f"expected {4**self.n_qubits - 1} eigenvalues, got {values.shape}")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def support(self) -> tuple[str, ...]:
        return pauli_labels(self.n_qubits)[1:]

    def value(self, label: str) -> float:
        return float(self.values[label_index(label) - 1])


def channel_to_eigenvalues(channel: PauliChannel) -> GateEigenvalues:
    full = walsh_hadamard_matrix(channel.n_qubits) @ channel.probs
    return GateEigenvalues(channel.n_qubits, full[1:])


def eigenvalues_to_channel(eigenvalues: GateEigenvalues) -> PauliChannel:
    """Inverse transform; the result is not clipped into the simplex."""
    n = eigenvalues.n_qubits
    full = np.concatenate([[1.0], eigenvalues.values])
    probs = walsh_hadamard_matrix(n) @ full / 4**n
    return PauliChannel(n, probs, check=False)


def depolarizing_channel(qubits: int, total_error: float) -> PauliChannel:
    if qubits not in (1, 2):
        raise ValueError("depolarizing channels are defined on 1 or 2 qubits")
    if not 0 <= total_error < 1:
        raise ValueError(f"total_error must lie in [0, 1), got {total_error}")
    k = 4**qubits - 1
    return PauliChannel.from_errors(np.full(k, total_error / k), qubits)
