"""Sparse complex-symmetric matrix storage and a direct solver.

The Helmholtz systems assembled here are complex symmetric (A = A^T, not
Hermitian) and indefinite, so we use a sparse LU factorization with a
fill-reducing ordering (SuperLU via scipy) rather than an iterative method.
The contract is the relative residual, checked after every solve.
"""

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import InvalidArgumentError, SingularSystemError

RESIDUAL_TOL = 1e-10


@dataclass(frozen=True)
class SparseComplexMatrix:
    """Square CSR matrix with complex128 values and sorted column indices."""

    n: int
    indptr: np.ndarray
    indices: np.ndarray
    values: np.ndarray

    @classmethod
    def from_scipy(cls, m):
        csr = sp.csr_matrix(m, dtype=np.complex128, copy=True)
        if csr.shape[0] != csr.shape[1]:
            raise InvalidArgumentError(f"matrix must be square, got {csr.shape}")
        csr.sum_duplicates()
        csr.sort_indices()
        return cls(n=csr.shape[0], indptr=csr.indptr, indices=csr.indices, values=csr.data)

    @classmethod
    def from_triplets(cls, n, rows, cols, values):
        coo = sp.coo_matrix((values, (rows, cols)), shape=(n, n), dtype=np.complex128)
        return cls.from_scipy(coo)

    def to_scipy(self):
        return sp.csr_matrix((self.values, self.indices, self.indptr), shape=(self.n, self.n))

    def matvec(self, x):
        return self.to_scipy() @ x

    def transpose_defect(self):
        """max |A - A^T| over all entries; 0 for exactly symmetric values."""
        a = self.to_scipy()
        d = a - a.T
        return 0.0 if d.nnz == 0 else float(np.abs(d.data).max())


class Factorization:
    """LU factorization of one system; immutable, reusable for many rhs."""

    def __init__(self, matrix):
        if isinstance(matrix, SparseComplexMatrix):
            csr = matrix.to_scipy()
        else:
            csr = sp.csr_matrix(matrix, dtype=np.complex128)
        if csr.shape[0] != csr.shape[1]:
            raise InvalidArgumentError(f"matrix must be square, got {csr.shape}")
        self.n = csr.shape[0]
        self._csr = csr
        try:
            self._lu = spla.splu(csr.tocsc())
        except RuntimeError as err:  # SuperLU signals exact singularity this way
            raise SingularSystemError(f"factorization failed: {err}") from err

    def solve(self, b):
        b = np.asarray(b, dtype=np.complex128)
        if b.shape[0] != self.n:
            raise InvalidArgumentError(f"rhs has length {b.shape[0]}, matrix is {self.n}")
        x = self._lu.solve(b)
        bnorm = np.linalg.norm(b, axis=0)
        if np.all(bnorm == 0):
            return np.zeros_like(b)
        resid = np.linalg.norm(self._csr @ x - b, axis=0) / np.where(bnorm == 0, 1.0, bnorm)
        worst = float(np.max(resid))
        if not worst <= RESIDUAL_TOL:
            raise SingularSystemError(
                f"relative residual {worst:.3e} exceeds {RESIDUAL_TOL:.1e}; "
                "system is numerically singular (near a discrete resonance?)",
                residual=worst,
            )
        return x


def solve(A, b):
    """Solve A x = b with relative residual <= 1e-10 or raise SingularSystemError."""
    return Factorization(A).solve(b)
