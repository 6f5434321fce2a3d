"""Truncated bosonic Fock space over finitely many mode channels.

States are occupation-number vectors with total photon number at most
``n_max``.  Operators are returned as :class:`SparseOperator`, a thin
frozen wrapper around a CSR matrix that carries a hermiticity flag.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from math import comb

import numpy as np
import scipy.sparse as sp

MAX_BASIS_SIZE = 5_000_000

PAULI = (
    np.array([[0, 1], [1, 0]], dtype=complex),
    np.array([[0, -1j], [1j, 0]], dtype=complex),
    np.array([[1, 0], [0, -1]], dtype=complex),
)


class CapacityError(ValueError):
    """Raised when a requested basis would exceed the configured size."""


@dataclass(frozen=True, eq=False)
class SparseOperator:
    """Complex CSR matrix plus a hermiticity flag.

    ``hermitian=True`` is a promise that the stored matrix equals its
    conjugate transpose entrywise; :func:`hermitian_part` produces matrices
    that satisfy it exactly.
    """

    matrix: sp.csr_matrix
    hermitian: bool = False

    def __post_init__(self):
        m = sp.csr_matrix(self.matrix, dtype=complex)
        m.eliminate_zeros()
        m.sort_indices()
        object.__setattr__(self, "matrix", m)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @property
    def nnz(self) -> int:
        return self.matrix.nnz

    def adjoint(self) -> "SparseOperator":
        return SparseOperator(self.matrix.conj().T.tocsr(), self.hermitian)

    def __matmul__(self, other):
        if isinstance(other, SparseOperator):
            return SparseOperator(self.matrix @ other.matrix)
        return self.matrix @ other

    def toarray(self) -> np.ndarray:
        return self.matrix.toarray()

    def is_exactly_hermitian(self) -> bool:
        diff = (self.matrix - self.matrix.conj().T).tocsr()
        diff.eliminate_zeros()
        return diff.nnz == 0


def hermitian_part(m) -> SparseOperator:
    """Return (m + m^H)/2, which is hermitian to the last bit."""
    m = sp.csr_matrix(m, dtype=complex)
    return SparseOperator(0.5 * (m + m.conj().T), hermitian=True)


@dataclass(frozen=True, eq=False)
class FockBasis:
    """Graded occupation basis: ordered by total photon number, then by
    descending lexicographic order of the occupation tuple.

    ``occupations`` is an ``(dim, M)`` uint8 array; ``index`` maps an
    occupation tuple back to its row.
    """

    num_channels: int
    n_max: int
    c_max: int
    occupations: np.ndarray = field(repr=False)
    index: dict = field(repr=False)

    @property
    def dim(self) -> int:
        return self.occupations.shape[0]

    @property
    def states(self) -> list[tuple[int, ...]]:
        return [tuple(int(x) for x in row) for row in self.occupations]

    @cached_property
    def totals(self) -> np.ndarray:
        return self.occupations.sum(axis=1, dtype=np.int64)

    def sector_slice(self, n: int) -> slice:
        """Contiguous index range of the n-photon sector."""
        idx = np.flatnonzero(self.totals == n)
        if idx.size == 0:
            return slice(0, 0)
        return slice(int(idx[0]), int(idx[-1]) + 1)

    def layer_mask(self, max_total: int) -> np.ndarray:
        return self.totals <= max_total

    def vacuum(self) -> np.ndarray:
        v = np.zeros(self.dim, dtype=complex)
        v[0] = 1.0
        return v


def basis_size(M: int, n_max: int) -> int:
    return sum(comb(M + n - 1, n) for n in range(n_max + 1))


def _compositions(n: int, M: int, cap: int):
    # descending lexicographic order of length-M tuples summing to n
    if M == 1:
        if n <= cap:
            yield (n,)
        return
    for first in range(min(n, cap), -1, -1):
        for rest in _compositions(n - first, M - 1, cap):
            yield (first,) + rest


def enumerate_basis(M: int, n_max: int, c_max: int | None = None,
                    max_size: int = MAX_BASIS_SIZE) -> FockBasis:
    """Enumerate all occupation states with total <= n_max.

    Parameters
    ----------
    M : int
        Number of mode channels.
    n_max : int
        Maximum total photon number (<= 255).
    c_max : int, optional
        Per-channel occupancy cap; defaults to ``n_max``.
    max_size : int
        Refuse to build bases larger than this.
    """
    if M < 1:
        raise ValueError(f"channel count must be >= 1, got {M}")
    if not 0 <= n_max <= 255:
        raise ValueError(f"n_max must be in [0, 255], got {n_max}")
    c_max = n_max if c_max is None else int(c_max)
    if c_max < 0:
        raise ValueError(f"c_max must be >= 0, got {c_max}")
    if c_max >= n_max:
        size = basis_size(M, n_max)
        if size > max_size:
            raise CapacityError(f"basis size {size} exceeds maximum {max_size}")
    states = []
    for n in range(n_max + 1):
        for s in _compositions(n, M, c_max):
            states.append(s)
            if len(states) > max_size:
                raise CapacityError(f"basis size exceeds maximum {max_size}")
    occ = np.array(states, dtype=np.uint8).reshape(len(states), M)
    index = {s: i for i, s in enumerate(states)}
    return FockBasis(M, n_max, c_max, occ, index)


def _lowering_entries(basis: FockBasis, mu: int):
    occ = basis.occupations
    cols = np.flatnonzero(occ[:, mu] > 0)
    rows = np.empty(cols.size, dtype=np.int64)
    for j, c in enumerate(cols):
        s = list(occ[c])
        s[mu] -= 1
        rows[j] = basis.index[tuple(int(x) for x in s)]
    vals = np.sqrt(occ[cols, mu].astype(float))
    return rows, cols, vals


def annihilation_matrix(basis: FockBasis, mu: int) -> SparseOperator:
    """Matrix of a_mu: <s - e_mu| a_mu |s> = sqrt(s_mu)."""
    if not 0 <= mu < basis.num_channels:
        raise IndexError(f"channel {mu} out of range [0, {basis.num_channels})")
    rows, cols, vals = _lowering_entries(basis, mu)
    m = sp.csr_matrix((vals.astype(complex), (rows, cols)), shape=(basis.dim, basis.dim))
    return SparseOperator(m, hermitian=False)


def creation_matrix(basis: FockBasis, mu: int) -> SparseOperator:
    return annihilation_matrix(basis, mu).adjoint()


def annihilation_matrices(basis: FockBasis) -> list[SparseOperator]:
    return [annihilation_matrix(basis, mu) for mu in range(basis.num_channels)]


def diagonal_operator(basis: FockBasis, weights) -> SparseOperator:
    """Diagonal operator with entry sum_mu weights[mu] * s_mu."""
    w = np.asarray(weights, dtype=float)
    if w.shape != (basis.num_channels,):
        raise ValueError(f"expected {basis.num_channels} weights, got shape {w.shape}")
    diag = basis.occupations.astype(float) @ w
    return SparseOperator(sp.diags(diag.astype(complex), format="csr"), hermitian=True)


def number_operator(basis: FockBasis) -> SparseOperator:
    return diagonal_operator(basis, np.ones(basis.num_channels))


def identity(dim: int) -> SparseOperator:
    return SparseOperator(sp.identity(dim, dtype=complex, format="csr"), hermitian=True)


def tensor_with_spin(op: SparseOperator, s) -> SparseOperator:
    """Kronecker product s (x) op with the 2x2 spin factor first."""
    s = np.asarray(s, dtype=complex)
    if s.shape != (2, 2):
        raise ValueError("spin factor must be 2x2")
    herm = op.hermitian and np.array_equal(s, s.conj().T)
    return SparseOperator(sp.kron(sp.csr_matrix(s), op.matrix, format="csr"), hermitian=herm)


def ccr_residual(basis: FockBasis, pairs=None) -> float:
    """Largest entry of [a_mu, a_nu*] - delta_{mu nu} and of [a_mu, a_nu].

    The first commutator is only checked on columns where neither the
    total nor any single occupation is at its cap.
    """
    M = basis.num_channels
    if pairs is None:
        pairs = [(mu, nu) for mu in range(M) for nu in range(M)]
    ops = {}

    def a(mu):
        if mu not in ops:
            ops[mu] = annihilation_matrix(basis, mu).matrix
        return ops[mu]

    ok = (basis.totals <= basis.n_max - 1) & np.all(basis.occupations < basis.c_max, axis=1)
    cols = np.flatnonzero(ok)
    I = sp.identity(basis.dim, dtype=complex, format="csr")
    worst = 0.0
    for mu, nu in pairs:
        am, an = a(mu), a(nu)
        c = am @ an.conj().T - an.conj().T @ am
        if mu == nu:
            c = c - I
        c = c.tocsc()[:, cols]
        if c.nnz:
            worst = max(worst, float(np.abs(c.data).max()))
        cc = am @ an - an @ am
        if cc.nnz:
            worst = max(worst, float(np.abs(cc.data).max()))
    return worst
