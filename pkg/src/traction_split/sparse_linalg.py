"""Sparse CSR storage and linear solvers with explicit accuracy contracts.

Matrices are thin immutable wrappers around scipy CSR storage.  Two solve
paths are available: a deterministic Jacobi-preconditioned conjugate gradient
written here, and a cached sparse LU factorization (SuperLU via scipy) with
iterative refinement so that the relative-residual contract holds even for
ill-conditioned systems.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla


class SolverFailure(RuntimeError):
    """A linear or eigenvalue solve missed its accuracy contract."""

    def __init__(self, message, best_estimate=None, residual=None):
        super().__init__(message)
        self.best_estimate = best_estimate
        self.residual = residual


@dataclass(frozen=True)
class SolverConfig:
    """Solver selection and accuracy contract.

    method: "direct-factorization" or "conjugate-gradient".
    rtol: relative residual bound ||Ax - b|| <= rtol * ||b||.
    max_iterations: CG iteration cap; defaults to 10 * n.
    """

    method: str = "direct-factorization"
    rtol: float = 1e-12
    max_iterations: int | None = None

    def __post_init__(self):
        if self.method not in ("direct-factorization", "conjugate-gradient"):
            raise ValueError(f"unknown solver method: {self.method!r}")
        if not 0.0 < self.rtol < 1.0:
            raise ValueError("rtol must lie in (0, 1)")
        if self.max_iterations is not None and self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")


DEFAULT_CONFIG = SolverConfig()


class SparseMatrix:
    """Immutable CSR matrix: sorted, deduplicated column indices per row.

    Do not mutate the underlying arrays; LU factorizations are cached on the
    instance and assume the values never change.
    """

    __slots__ = ("_csr", "_lu")

    def __init__(self, matrix):
        csr = sp.csr_matrix(matrix)
        csr.sum_duplicates()
        csr.sort_indices()
        self._csr = csr
        self._lu = None

    @classmethod
    def from_coo(cls, rows, cols, values, shape):
        return cls(sp.coo_matrix((values, (rows, cols)), shape=shape))

    @classmethod
    def identity(cls, n):
        return cls(sp.identity(n, format="csr"))

    @property
    def shape(self):
        return self._csr.shape

    @property
    def row_offsets(self):
        return self._csr.indptr

    @property
    def column_indices(self):
        return self._csr.indices

    @property
    def values(self):
        return self._csr.data

    @property
    def nnz(self):
        return self._csr.nnz

    def tocsr(self):
        return self._csr

    def toarray(self):
        return self._csr.toarray()

    def diagonal(self):
        return self._csr.diagonal()

    def transpose(self):
        return SparseMatrix(self._csr.T)

    @property
    def T(self):
        return self.transpose()

    def submatrix(self, rows, cols=None):
        """Restriction to the given row (and column) index sets."""
        if cols is None:
            cols = rows
        return SparseMatrix(self._csr[rows][:, cols])

    def __add__(self, other):
        return SparseMatrix(self._csr + other._csr)

    def __sub__(self, other):
        return SparseMatrix(self._csr - other._csr)

    def __mul__(self, scalar):
        return SparseMatrix(self._csr * float(scalar))

    __rmul__ = __mul__

    def __matmul__(self, x):
        return matvec(self, x)

    def max_asymmetry(self):
        d = self._csr - self._csr.T
        return 0.0 if d.nnz == 0 else float(np.abs(d.data).max())

    def write_coordinate_text(self, path):
        """Debug export: one "row col value" line per stored entry."""
        coo = self._csr.tocoo()
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(f"# {coo.shape[0]} {coo.shape[1]} {coo.nnz}\n")
            for i, j, v in zip(coo.row, coo.col, coo.data):
                fh.write(f"{i} {j} {v!r}\n")

    def _factorization(self):
        if self._lu is None:
            self._lu = spla.splu(self._csr.tocsc())
        return self._lu


def matvec(a, x):
    x = np.asarray(x, dtype=float)
    if x.shape != (a.shape[1],):
        raise ValueError(f"dimension mismatch: matrix {a.shape}, vector {x.shape}")
    return a.tocsr() @ x


def _check_residual(a, x, b, bnorm, rtol, context):
    res = float(np.linalg.norm(a.tocsr() @ x - b))
    if res > rtol * bnorm:
        raise SolverFailure(
            f"{context}: relative residual {res / bnorm:.3e} exceeds {rtol:.3e}",
            best_estimate=x,
            residual=res / bnorm,
        )
    return res / bnorm


def _solve_direct(a, b, bnorm, rtol, context):
    lu = a._factorization()
    x = lu.solve(b)
    # A couple of refinement sweeps keep stiff systems inside the contract.
    for _ in range(3):
        r = b - a.tocsr() @ x
        if np.linalg.norm(r) <= rtol * bnorm:
            break
        x = x + lu.solve(r)
    _check_residual(a, x, b, bnorm, rtol, context)
    return x


def _solve_cg(a, b, bnorm, rtol, maxiter):
    csr = a.tocsr()
    diag = csr.diagonal().copy()
    if np.any(diag <= 0.0):
        diag = np.ones_like(diag)
    x = np.zeros_like(b)
    r = b.copy()
    z = r / diag
    p = z.copy()
    rz = float(r @ z)
    tol = rtol * bnorm
    for _ in range(maxiter):
        if np.linalg.norm(r) <= tol:
            return x
        ap = csr @ p
        alpha = rz / float(p @ ap)
        x += alpha * p
        r -= alpha * ap
        z = r / diag
        rz_new = float(r @ z)
        p = z + (rz_new / rz) * p
        rz = rz_new
    res = float(np.linalg.norm(csr @ x - b))
    if res <= tol:
        return x
    raise SolverFailure(
        f"CG did not converge in {maxiter} iterations "
        f"(relative residual {res / bnorm:.3e})",
        best_estimate=x,
        residual=res / bnorm,
    )


def solve_spd(a, b, config=None):
    """Solve Ax = b for symmetric positive definite A.

    Guarantees ||Ax - b|| <= rtol * ||b|| or raises SolverFailure carrying the
    achieved residual.
    """
    config = config or DEFAULT_CONFIG
    b = np.asarray(b, dtype=float)
    if b.shape != (a.shape[0],):
        raise ValueError(f"dimension mismatch: matrix {a.shape}, rhs {b.shape}")
    bnorm = float(np.linalg.norm(b))
    if bnorm == 0.0:
        return np.zeros_like(b)
    if config.method == "conjugate-gradient":
        maxiter = config.max_iterations or 10 * a.shape[0]
        return _solve_cg(a, b, bnorm, config.rtol, maxiter)
    return _solve_direct(a, b, bnorm, config.rtol, "solve_spd")


def solve_general(a, b, config=None):
    """Solve Ax = b for nonsingular A via sparse LU, same residual contract."""
    config = config or DEFAULT_CONFIG
    b = np.asarray(b, dtype=float)
    if b.shape != (a.shape[0],):
        raise ValueError(f"dimension mismatch: matrix {a.shape}, rhs {b.shape}")
    bnorm = float(np.linalg.norm(b))
    if bnorm == 0.0:
        return np.zeros_like(b)
    try:
        x = _solve_direct(a, b, bnorm, config.rtol, "solve_general")
    except RuntimeError as err:  # SuperLU signals singularity this way
        if isinstance(err, SolverFailure):
            raise
        raise SolverFailure(f"factorization failed: {err}") from err
    return x


def relative_residual(a, x, b):
    bnorm = float(np.linalg.norm(b))
    if bnorm == 0.0:
        return float(np.linalg.norm(a.tocsr() @ x))
    return float(np.linalg.norm(a.tocsr() @ x - b)) / bnorm


def smallest_generalized_eigenvalue(a, b, tol=1e-10, max_iterations=5000):
    """Smallest lambda with A x = lambda B x (A SPD/PSD, B SPD).

    Inverse power iteration on the pencil, normalized in the B inner product;
    the Rayleigh quotient converges monotonically from above for symmetric
    pencils.  Raises SolverFailure with the best estimate on stagnation.
    """
    if a.shape != b.shape or a.shape[0] != a.shape[1]:
        raise ValueError("matrices must be square and of equal shape")
    n = a.shape[0]
    bcsr = b.tocsr()
    try:
        lu = a._factorization()
    except RuntimeError as err:
        raise SolverFailure(f"factorization of A failed: {err}") from err
    # generic (but deterministic) start: an all-ones vector can sit exactly on
    # an eigenvector of a larger eigenvalue, e.g. constants in FEM pencils
    x = np.random.default_rng(20130521).standard_normal(n)
    x /= np.sqrt(x @ (bcsr @ x))
    lam = None
    small_changes = 0
    for _ in range(max_iterations):
        y = lu.solve(bcsr @ x)
        bnorm = float(np.sqrt(y @ (bcsr @ y)))
        if not np.isfinite(bnorm) or bnorm == 0.0:
            raise SolverFailure("inverse iteration broke down", best_estimate=lam)
        x = y / bnorm
        lam_new = float(x @ (a.tocsr() @ x))
        if lam is not None and abs(lam_new - lam) <= 0.1 * tol * max(1.0, abs(lam_new)):
            small_changes += 1
            if small_changes >= 2:
                return lam_new
        else:
            small_changes = 0
        lam = lam_new
    raise SolverFailure(
        f"eigenvalue iteration did not converge in {max_iterations} iterations",
        best_estimate=lam,
    )
