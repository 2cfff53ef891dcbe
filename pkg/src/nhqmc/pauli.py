"""Pauli-string algebra, dense realization, and Pauli decomposition.

Strings are stored as packed 2-bit-per-qubit codes (0=I, 1=X, 2=Y, 3=Z),
most-significant qubit first, matching the big-endian basis-label
convention used for state vectors (``|1000>`` excites qubit 0).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Iterator, Sequence

import numpy as np

PAULI_LABELS = "IXYZ"

_SINGLE = {
    0: np.eye(2, dtype=complex),
    1: np.array([[0, 1], [1, 0]], dtype=complex),
    2: np.array([[0, -1j], [1j, 0]], dtype=complex),
    3: np.array([[1, 0], [0, -1]], dtype=complex),
}

# (phase, result) tables for single-qubit products sigma_a * sigma_b.
_MUL_PHASE = np.ones((4, 4), dtype=complex)
_MUL_RESULT = np.zeros((4, 4), dtype=np.int64)
for _a in range(4):
    for _b in range(4):
        prod = _SINGLE[_a] @ _SINGLE[_b]
        for _c in range(4):
            overlap = np.trace(_SINGLE[_c].conj().T @ prod) / 2.0
            if abs(overlap) > 0.5:
                _MUL_RESULT[_a, _b] = _c
                _MUL_PHASE[_a, _b] = complex(round(overlap.real), round(overlap.imag))
                break

MERGE_TOL = 1e-14
DEFAULT_DENSE_CAP = 10


class PauliInputError(ValueError):
    """Malformed operator input (length mismatch, bad labels, bad dimension)."""


class DenseCapError(RuntimeError):
    """Dense realization would exceed the configured qubit cap."""


@dataclass(frozen=True)
class PauliString:
    """A tensor product of single-qubit Paulis, packed two bits per qubit."""

    code: int
    n_qubits: int

    @staticmethod
    def from_label(label: str) -> "PauliString":
        code = 0
        for ch in label:
            idx = PAULI_LABELS.find(ch)
            if idx < 0:
                raise PauliInputError(f"bad Pauli label character {ch!r}")
            code = (code << 2) | idx
        return PauliString(code, len(label))

    @staticmethod
    def identity(n_qubits: int) -> "PauliString":
        return PauliString(0, n_qubits)

    def axis(self, qubit: int) -> int:
        """Pauli index (0..3) on the given qubit, qubit 0 leftmost."""
        shift = 2 * (self.n_qubits - 1 - qubit)
        return (self.code >> shift) & 3

    @property
    def label(self) -> str:
        return "".join(PAULI_LABELS[self.axis(q)] for q in range(self.n_qubits))

    @property
    def is_identity(self) -> bool:
        return self.code == 0

    def weight(self) -> int:
        return sum(1 for q in range(self.n_qubits) if self.axis(q) != 0)

    def to_matrix(self) -> np.ndarray:
        m = np.array([[1.0 + 0j]])
        for q in range(self.n_qubits):
            m = np.kron(m, _SINGLE[self.axis(q)])
        return m

    def dense_action(self) -> tuple[np.ndarray, np.ndarray]:
        """Signed-permutation form: (sigma psi)[j] = phase[j] * psi[perm[j]].

        Returns (perm, phase) arrays of length 2^n.
        """
        n = self.n_qubits
        dim = 1 << n
        j = np.arange(dim, dtype=np.int64)
        xmask = 0
        phase = np.ones(dim, dtype=complex)
        for q in range(n):
            bitpos = n - 1 - q
            ax = self.axis(q)
            bit = (j >> bitpos) & 1
            if ax == 1:
                xmask |= 1 << bitpos
            elif ax == 2:
                xmask |= 1 << bitpos
                # Y[j, 1-j]: -i for j=0, +i for j=1
                phase = phase * np.where(bit == 1, 1j, -1j)
            elif ax == 3:
                phase = phase * np.where(bit == 1, -1.0, 1.0)
        return j ^ xmask, phase

    def __str__(self) -> str:
        return self.label


def multiply(p: PauliString, q: PauliString) -> tuple[complex, PauliString]:
    """Product of two Pauli strings: dense(p) @ dense(q) = phase * dense(r)."""
    if p.n_qubits != q.n_qubits:
        raise PauliInputError(
            f"length mismatch: {p.n_qubits} vs {q.n_qubits} qubits"
        )
    phase = 1.0 + 0j
    code = 0
    for qubit in range(p.n_qubits):
        a, b = p.axis(qubit), q.axis(qubit)
        phase *= _MUL_PHASE[a, b]
        code = (code << 2) | int(_MUL_RESULT[a, b])
    return phase, PauliString(code, p.n_qubits)


class PauliSum:
    """Complex-weighted sum of Pauli strings with distinct strings.

    Terms with equal strings are merged on construction; coefficients with
    magnitude below ``MERGE_TOL`` are dropped.
    """

    __slots__ = ("n_qubits", "_terms")

    def __init__(self, n_qubits: int, terms: Iterable[tuple[PauliString, complex]] = ()):
        self.n_qubits = n_qubits
        merged: dict[int, complex] = {}
        for string, coeff in terms:
            if string.n_qubits != n_qubits:
                raise PauliInputError("term length does not match declared qubit count")
            c = complex(coeff)
            if not (np.isfinite(c.real) and np.isfinite(c.imag)):
                raise PauliInputError("non-finite coefficient")
            merged[string.code] = merged.get(string.code, 0.0) + c
        self._terms = {
            code: c for code, c in merged.items() if abs(c) > MERGE_TOL
        }

    @staticmethod
    def from_label_terms(pairs: Iterable[tuple[complex, str]]) -> "PauliSum":
        pairs = list(pairs)
        if not pairs:
            raise PauliInputError("empty term list")
        n = len(pairs[0][1])
        return PauliSum(n, [(PauliString.from_label(lbl), c) for c, lbl in pairs])

    def items(self) -> Iterator[tuple[PauliString, complex]]:
        for code, c in sorted(self._terms.items()):
            yield PauliString(code, self.n_qubits), c

    @property
    def n_terms(self) -> int:
        return len(self._terms)

    def coeff(self, string: PauliString) -> complex:
        return self._terms.get(string.code, 0.0 + 0j)

    def __add__(self, other: "PauliSum") -> "PauliSum":
        return PauliSum(self.n_qubits, list(self.items()) + list(other.items()))

    def __sub__(self, other: "PauliSum") -> "PauliSum":
        return self + (-1.0) * other

    def __rmul__(self, scalar: complex) -> "PauliSum":
        return PauliSum(self.n_qubits, [(s, scalar * c) for s, c in self.items()])

    def __mul__(self, other):
        if isinstance(other, PauliSum):
            out = []
            for s1, c1 in self.items():
                for s2, c2 in other.items():
                    ph, r = multiply(s1, s2)
                    out.append((r, c1 * c2 * ph))
            return PauliSum(self.n_qubits, out)
        return NotImplemented

    def dagger(self) -> "PauliSum":
        return PauliSum(self.n_qubits, [(s, np.conj(c)) for s, c in self.items()])

    def __eq__(self, other) -> bool:
        if not isinstance(other, PauliSum):
            return NotImplemented
        return self.n_qubits == other.n_qubits and self._terms == other._terms

    def __repr__(self) -> str:
        body = " + ".join(f"({c:.6g})*{s}" for s, c in self.items()) or "0"
        return f"PauliSum({self.n_qubits}q: {body})"


def to_matrix(s: PauliSum, dense_cap: int = DEFAULT_DENSE_CAP) -> np.ndarray:
    """Dense 2^n x 2^n realization of a Pauli sum."""
    if s.n_qubits > dense_cap:
        raise DenseCapError(
            f"{s.n_qubits} qubits exceeds dense cap of {dense_cap}"
        )
    dim = 1 << s.n_qubits
    m = np.zeros((dim, dim), dtype=complex)
    for string, coeff in s.items():
        perm, phase = string.dense_action()
        m[np.arange(dim), perm] += coeff * phase
    return m


def decompose(m: np.ndarray, tol: float = MERGE_TOL) -> PauliSum:
    """Pauli decomposition of a square dense matrix of dimension 2^n.

    coeff_s = trace(sigma_s^dag m) / 2^n, computed by per-qubit basis
    contraction so the cost is O(n 4^n) rather than O(16^n).
    """
    m = np.asarray(m, dtype=complex)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise PauliInputError("matrix must be square")
    dim = m.shape[0]
    n = int(dim).bit_length() - 1
    if dim != 1 << n or dim < 1:
        raise PauliInputError(f"dimension {dim} is not a power of two")

    # A[p, e] with e = 2*i + j maps the (i, j) index pair of one qubit to
    # the Pauli index p via sigma_p[i, j]^* / 2.
    basis = np.zeros((4, 4), dtype=complex)
    for p in range(4):
        basis[p] = (_SINGLE[p].conj() / 2.0).reshape(4)

    # Reshape to interleaved (i1, j1, ..., in, jn), fuse pairs, contract.
    t = m.reshape([2] * (2 * n))
    order = [x for q in range(n) for x in (q, n + q)]
    t = t.transpose(order).reshape([4] * n)
    for _ in range(n):
        t = np.tensordot(basis, t, axes=([1], [0]))
        t = np.moveaxis(t, 0, -1)
    coeffs = t.reshape(-1)

    terms = []
    for flat in np.flatnonzero(np.abs(coeffs) > tol):
        code = 0
        rest = int(flat)
        # flat index runs with the last qubit's Pauli index as the fastest
        # digit; rebuild the packed code with qubit 0 in the high bits
        digits = []
        for _ in range(n):
            digits.append(rest % 4)
            rest //= 4
        for d in reversed(digits):
            code = (code << 2) | d
        terms.append((PauliString(code, n), coeffs[flat]))
    return PauliSum(n, terms)


def l1_norm(s: PauliSum) -> float:
    """Sum of coefficient magnitudes."""
    return float(sum(abs(c) for _, c in s.items()))


def hermitian_split(s: PauliSum) -> tuple[PauliSum, PauliSum]:
    """Split H = H_r - i H_i with both parts real-coefficient Hermitian.

    H_r carries Re(coeff) per string and H_i carries -Im(coeff).
    """
    hr = PauliSum(s.n_qubits, [(st, complex(c.real)) for st, c in s.items()])
    hi = PauliSum(s.n_qubits, [(st, complex(-c.imag)) for st, c in s.items()])
    return hr, hi


def format_coeff(c: complex) -> str:
    return f"{c.real:.12g}{c.imag:+.12g}i"


def parse_coeff(text: str) -> complex:
    try:
        return complex(text.replace("i", "j"))
    except ValueError as exc:
        raise PauliInputError(f"bad complex coefficient {text!r}") from exc


def format_sum(s: PauliSum) -> str:
    """Text serialization: one `<complex coeff> <label string>` line per term."""
    return "\n".join(f"{format_coeff(c)} {st.label}" for st, c in s.items())


def parse_sum(text: str) -> PauliSum:
    pairs = []
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        fields = line.split()
        if len(fields) != 2:
            raise PauliInputError(f"expected '<coeff> <labels>', got {raw!r}")
        pairs.append((parse_coeff(fields[0]), fields[1]))
    return PauliSum.from_label_terms(pairs)
