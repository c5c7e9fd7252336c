"""CSR sparse kernels and the sequential Jacobi iteration.

The matrix lives in compressed sparse row form: the nonzero values row by
row (``values``), their column indices (``col_idx``), and the offset of
each row's first entry (``row_ptr``).  All indexing is 0-based internally;
1-based formats (matrix market) are converted at the I/O boundary.

The Jacobi sweep is implemented in the residual-update form

    u <- u + D^{-1} (b - A u)

which updates every component independently from the previous iterate and
is therefore the natural candidate for row-wise distribution.  Convergence
is monitored through the plain residual infinity norm ``||b - A u||_inf``;
for this update rule it coincides with the diagonally weighted increment
norm ``||D (u_next - u)||_inf``, because ``u_next - u = D^{-1} r``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .report import SolveReport

# Abort threshold: residual growth beyond this factor over the initial
# residual is treated as divergence rather than running out the iteration

# budget.
DIVERGENCE_FACTOR = 1e12
_TINY_NORM = 1e-300


class SingularDiagonalError(ValueError):
    """A row has a structurally missing or exactly zero diagonal entry."""


@dataclass(eq=False)
class CsrMatrix:
    """Compressed sparse row matrix with sorted, duplicate-free rows.

    Invariants (checked on construction):
      * ``row_ptr`` is non-decreasing, starts at 0, ends at ``nnz``
      * every column index lies in ``[0, n_cols)``
      * column indices are strictly increasing within each row

    Explicitly stored zero values are kept: the sparsity pattern is
    structural, not numerical.
    """

    n_rows: int
    n_cols: int
    row_ptr: np.ndarray
    col_idx: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        self.row_ptr = np.ascontiguousarray(self.row_ptr, dtype=np.int64)
        self.col_idx = np.ascontiguousarray(self.col_idx, dtype=np.int64)
        self.values = np.ascontiguousarray(self.values, dtype=np.float64)
        self._nnz_rows = None
        self.validate()

    # -- construction helpers -------------------------------------------

    @classmethod
    def from_coo(cls, n_rows, n_cols, rows, cols, vals):
        """Build a canonical CSR matrix from coordinate triplets.

        Duplicate coordinates are summed.  The sort is stable and the
        per-coordinate summation runs in input order, so repeated
        assemblies of the same triplet sequence are bitwise reproducible.
        """
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        vals = np.asarray(vals, dtype=np.float64)
        if not (rows.shape == cols.shape == vals.shape):
            raise ValueError("COO arrays must have identical shapes")
        if rows.size:
            if rows.min() < 0 or rows.max() >= n_rows:
                raise ValueError("COO row index out of range")
            if cols.min() < 0 or cols.max() >= n_cols:
                raise ValueError("COO column index out of range")
        order = np.lexsort((cols, rows))
        rows, cols, vals = rows[order], cols[order], vals[order]
        if rows.size:
            first = np.ones(rows.size, dtype=bool)
            first[1:] = (rows[1:] != rows[:-1]) | (cols[1:] != cols[:-1])
            starts = np.flatnonzero(first)
            vals = np.add.reduceat(vals, starts)
            rows, cols = rows[starts], cols[starts]
        counts = np.bincount(rows, minlength=n_rows)
        row_ptr = np.zeros(n_rows + 1, dtype=np.int64)
        np.cumsum(counts, out=row_ptr[1:])
        return cls(n_rows, n_cols, row_ptr, cols, vals)

    @classmethod
    def from_dense(cls, dense):
        dense = np.asarray(dense, dtype=np.float64)
        rows, cols = np.nonzero(dense)
        return cls.from_coo(dense.shape[0], dense.shape[1], rows, cols, dense[rows, cols])

    def to_dense(self):
        dense = np.zeros((self.n_rows, self.n_cols))
        dense[self.nnz_rows(), self.col_idx] = self.values
        return dense

    # -- structure -------------------------------------------------------

    @property
    def nnz(self):
        return int(self.row_ptr[-1])

    def nnz_rows(self):
        """Row index of each stored entry (cached)."""
        if self._nnz_rows is None:
            self._nnz_rows = np.repeat(
                np.arange(self.n_rows, dtype=np.int64), np.diff(self.row_ptr)
            )
        return self._nnz_rows

    def row_slice(self, begin, end):
        """New matrix holding rows ``[begin, end)`` over the same column space."""
        lo, hi = int(self.row_ptr[begin]), int(self.row_ptr[end])
        return CsrMatrix(
            end - begin,
            self.n_cols,
            self.row_ptr[begin : end + 1] - self.row_ptr[begin],
            self.col_idx[lo:hi].copy(),
            self.values[lo:hi].copy(),
        )

    def validate(self):
        if self.row_ptr.shape != (self.n_rows + 1,):
            raise ValueError("row_ptr must have length n_rows + 1")
        if self.n_rows > 0 and self.row_ptr[0] != 0:
            raise ValueError("row_ptr must start at 0")
        if self.n_rows == 0 and self.row_ptr[0] != 0:
            raise ValueError("row_ptr must start at 0")
        if np.any(np.diff(self.row_ptr) < 0):
            raise ValueError("row_ptr must be non-decreasing")
        if self.col_idx.shape != (self.nnz,) or self.values.shape != (self.nnz,):
            raise ValueError("col_idx/values length must equal row_ptr[-1]")
        if self.col_idx.size:
            if self.col_idx.min() < 0 or self.col_idx.max() >= self.n_cols:
                raise ValueError("column index out of range")
        # strict in-row ordering: within a row consecutive columns increase
        same_row = self.nnz_rows()[1:] == self.nnz_rows()[:-1]
        if np.any(same_row & (np.diff(self.col_idx) <= 0)):
            raise ValueError("column indices must be strictly increasing within a row")


def csr_equal(a: CsrMatrix, b: CsrMatrix) -> bool:
    """Exact structural and numerical equality."""
    return (
        a.n_rows == b.n_rows
        and a.n_cols == b.n_cols
        and np.array_equal(a.row_ptr, b.row_ptr)
        and np.array_equal(a.col_idx, b.col_idx)
        and np.array_equal(a.values, b.values)
    )


# -- basic vector kernels --------------------------------------------------


def dot(x, y) -> float:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ValueError("dot: length mismatch")
    return float(np.dot(x, y))


def axpy(alpha: float, x, y):
    """Return ``alpha * x + y`` as a new vector."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ValueError("axpy: length mismatch")
    return alpha * x + y


def inf_norm(x) -> float:
    x = np.asarray(x, dtype=np.float64)
    if x.size == 0:
        return 0.0
    return float(np.max(np.abs(x)))


# -- sparse kernels ----------------------------------------------------------


def spmv(A: CsrMatrix, x) -> np.ndarray:
    """Sparse matrix-vector product ``y = A x``.

    Accumulation runs over the stored entries in storage order, so the
    per-row summation order is the column order; repeated calls and row
    slices of the same matrix reproduce identical floating point results.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (A.n_cols,):
        raise ValueError(f"spmv: vector length {x.shape} does not match {A.n_cols} columns")
    contrib = A.values * x[A.col_idx]
    return np.bincount(A.nnz_rows(), weights=contrib, minlength=A.n_rows)


def diagonal_of(A: CsrMatrix):
    """Stored diagonal values and a mask of rows that store one."""
    if A.n_rows != A.n_cols:
        raise ValueError("diagonal_of: matrix must be square")
    rows = A.nnz_rows()
    hits = A.col_idx == rows
    diag = np.zeros(A.n_rows)
    present = np.zeros(A.n_rows, dtype=bool)
    diag[rows[hits]] = A.values[hits]
    present[rows[hits]] = True
    return diag, present


def extract_inverse_diagonal(A: CsrMatrix) -> np.ndarray:
    """Entrywise inverse of the diagonal, computed once before iterating."""
    diag, present = diagonal_of(A)
    bad = ~present | (diag == 0.0)
    if np.any(bad):
        row = int(np.flatnonzero(bad)[0])
        raise SingularDiagonalError(
            f"row {row} has a missing or zero diagonal entry"
        )
    return 1.0 / diag


def weighted_residual_norm(A: CsrMatrix, b, u) -> float:
    """``||b - A u||_inf``, the diagonally weighted stopping quantity.

    Equals ``||D (u_next - u)||_inf`` for the Jacobi update because the
    increment is exactly ``D^{-1} (b - A u)``.
    """
    b = np.asarray(b, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    if b.shape != (A.n_rows,):
        raise ValueError("weighted_residual_norm: rhs length mismatch")
    return inf_norm(b - spmv(A, u))


def is_diagonally_dominant(A: CsrMatrix) -> bool:
    """True iff ``|a_ii| >= sum_{j != i} |a_ij|`` for every row."""
    if A.n_rows != A.n_cols:
        raise ValueError("is_diagonally_dominant: matrix must be square")
    diag, _ = diagonal_of(A)
    row_abs = np.bincount(A.nnz_rows(), weights=np.abs(A.values), minlength=A.n_rows)
    return bool(np.all(2.0 * np.abs(diag) >= row_abs))


def spectral_radius_estimate(A: CsrMatrix, n_iterations: int = 500, n_restarts: int = 3,
                             seed: int = 0) -> float:
    """Power estimate of the Jacobi iteration matrix radius ``rho(D^{-1} N)``.

    Applies ``T = I - D^{-1} A`` repeatedly to random start vectors with
    per-step normalization and returns the largest geometric mean of the
    growth factors, i.e. the ``||T^k v||^(1/k)`` limit.  Intended for
    test-scale matrices; the estimate converges like ``O(1/k)`` so it is an
    oracle, not a production eigensolver.
    """
    if A.n_rows != A.n_cols:
        raise ValueError("spectral_radius_estimate: matrix must be square")
    if n_iterations < 1:
        raise ValueError("spectral_radius_estimate: n_iterations must be >= 1")
    d_inv = extract_inverse_diagonal(A)
    rng = np.random.default_rng(seed)
    best = 0.0
    for _ in range(max(1, n_restarts)):
        v = rng.standard_normal(A.n_rows)
        v /= np.linalg.norm(v)
        log_growth = 0.0
        steps = 0
        for _ in range(n_iterations):
            w = v - d_inv * spmv(A, v)
            s = float(np.linalg.norm(w))
            if s == 0.0:
                log_growth = -np.inf
                steps += 1
                break
            log_growth += np.log(s)
            steps += 1
            v = w / s
        est = float(np.exp(log_growth / steps)) if steps else 0.0
        best = max(best, est)
    return best


@dataclass
class JacobiConfig:
    """Stopping controls for all Jacobi variants.

    ``epsilon`` is the residual threshold of the weighted infinity norm
    test, ``max_iterations`` the sweep budget, ``initial_guess`` the
    optional start vector (zero when omitted).
    """

    epsilon: float = 1e-8
    max_iterations: int = 50_000
    initial_guess: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be at least 1")

    def start_vector(self, n: int) -> np.ndarray:
        if self.initial_guess is None:
            return np.zeros(n)
        guess = np.asarray(self.initial_guess, dtype=np.float64)
        if guess.shape != (n,):
            raise ValueError("initial guess length mismatch")
        return guess.copy()


def sequential_jacobi(A: CsrMatrix, b, cfg: JacobiConfig | None = None):
    """Run the single-process Jacobi sweep until the residual test passes.

    One iteration is one loop pass: residual evaluation, stopping test,
    and (when not yet converged) the component update.  The final pass
    that only confirms convergence is counted, matching the parallel
    variants.  Non-convergence within the budget is flagged in the report,
    not raised; a residual blow-up beyond ``DIVERGENCE_FACTOR`` times the
    initial residual aborts early with ``diverged`` set.
    """
    cfg = cfg or JacobiConfig()
    if A.n_rows != A.n_cols:
        raise ValueError("sequential_jacobi: matrix must be square")
    b = np.asarray(b, dtype=np.float64)
    if b.shape != (A.n_rows,):
        raise ValueError("sequential_jacobi: rhs length mismatch")
    d_inv = extract_inverse_diagonal(A)
    u = cfg.start_vector(A.n_rows)

    import time

    t0 = time.perf_counter()
    history: list[float] = []
    converged = False
    diverged = False
    guard = None
    k = 0
    nrm = np.inf
    while k < cfg.max_iterations:
        r = b - spmv(A, u)
        nrm = inf_norm(r)
        history.append(nrm)
        if guard is None:
            guard = DIVERGENCE_FACTOR * max(nrm, _TINY_NORM)
        k += 1
        if nrm <= cfg.epsilon:
            converged = True
            break
        if nrm > guard:
            diverged = True
            break
        u = u + d_inv * r
    report = SolveReport(
        variant="SEQ",
        n_ranks=1,
        iterations=k,
        converged=converged,
        diverged=diverged,
        comm_time_s=0.0,
        total_time_s=time.perf_counter() - t0,
        bytes_exchanged=0,
        residual_final=nrm,
        residual_history=history,
    )
    return u, report
