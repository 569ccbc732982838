"""Sparse kernels: ILU(0) preconditioning and right-preconditioned BiCGSTAB.

Matrices are ``scipy.sparse.csr_matrix`` with sorted, duplicate-free column
indices. The factorization and the triangular solves are compiled with numba.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numba
import numpy as np
import scipy.sparse as sp


class ZeroPivotError(ArithmeticError):
    def __init__(self, row: int):
        self.row = int(row)
        super().__init__(f"zero pivot in ILU(0) at row {self.row}")


class BreakdownError(ArithmeticError):
    def __init__(self, message: str, x: np.ndarray, history: list):
        super().__init__(message)
        self.x = x
        self.history = history


def as_csr(A) -> sp.csr_matrix:
    """Canonical CSR: float64, sorted indices, duplicates summed."""
    A = sp.csr_matrix(A, dtype=float)
    A.sum_duplicates()
    A.sort_indices()
    return A


def spmv(A: sp.csr_matrix, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape[0] != A.shape[1]:
        raise ValueError(f"dimension mismatch: matrix has {A.shape[1]} columns, vector has {x.shape[0]}")
    return A @ x


@numba.njit(cache=True)
def _ilu0_kernel(indptr, indices, data, n, pivot_rel, mitigate):
    lu = data.copy()
    diag = np.full(n, -1, dtype=np.int64)
    pos = np.full(n, -1, dtype=np.int64)
    flagged = np.zeros(n, dtype=np.bool_)
    for i in range(n):
        for jj in range(indptr[i], indptr[i + 1]):
            pos[indices[jj]] = jj
            if indices[jj] == i:
                diag[i] = jj
        if diag[i] < 0:
            return lu, diag, flagged, i
        rowmax = 0.0
        for jj in range(indptr[i], indptr[i + 1]):
            rowmax = max(rowmax, abs(data[jj]))
        for kk in range(indptr[i], indptr[i + 1]):
            k = indices[kk]
            if k >= i:
                break
            lu[kk] /= lu[diag[k]]
            lik = lu[kk]
            for jj in range(diag[k] + 1, indptr[k + 1]):
                p = pos[indices[jj]]
                if p >= 0:
                    lu[p] -= lik * lu[jj]
        d = lu[diag[i]]
        thresh = pivot_rel * (rowmax if rowmax > 0 else 1.0)
        if abs(d) < thresh:
            if not mitigate:
                return lu, diag, flagged, i
            lu[diag[i]] = thresh if d >= 0 else -thresh
            flagged[i] = True
        for jj in range(indptr[i], indptr[i + 1]):
            pos[indices[jj]] = -1
    return lu, diag, flagged, -1


@numba.njit(cache=True)
def _lu_solve(indptr, indices, lu, diag, b):
    n = b.shape[0]
    y = b.copy()
    for i in range(n):
        s = y[i]
        for jj in range(indptr[i], diag[i]):
            s -= lu[jj] * y[indices[jj]]
        y[i] = s
    for i in range(n - 1, -1, -1):
        s = y[i]
        for jj in range(diag[i] + 1, indptr[i + 1]):
            s -= lu[jj] * y[indices[jj]]
        y[i] = s / lu[diag[i]]
    return y


@dataclass
class IluFactors:
    """L (unit diagonal, strictly lower part) and U stored on the pattern of A."""

    indptr: np.ndarray
    indices: np.ndarray
    lu: np.ndarray
    diag: np.ndarray
    flagged: np.ndarray

    @property
    def n(self) -> int:
        return len(self.diag)

    def apply(self, r) -> np.ndarray:
        return _lu_solve(self.indptr, self.indices, self.lu, self.diag, np.asarray(r, dtype=float))

    def dense_factors(self):
        F = sp.csr_matrix((self.lu, self.indices, self.indptr), shape=(self.n, self.n)).toarray()
        return np.tril(F, -1) + np.eye(self.n), np.triu(F)


def ilu0(A, pivot_rel: float = 1e-14, mitigate: bool = True) -> IluFactors:
    """Zero fill-in incomplete LU.

    A pivot with magnitude below ``pivot_rel`` times the largest entry of its
    original row is replaced by a sign-preserving value of that size and the
    row is flagged; with ``mitigate=False`` a :class:`ZeroPivotError` is raised
    instead.
    """
    A = as_csr(A)
    n = A.shape[0]
    if A.shape[0] != A.shape[1]:
        raise ValueError("ILU(0) requires a square matrix")
    indptr = A.indptr.astype(np.int64)
    indices = A.indices.astype(np.int64)
    lu, diag, flagged, bad = _ilu0_kernel(indptr, indices, A.data, n, pivot_rel, mitigate)
    if bad >= 0:
        raise ZeroPivotError(bad)
    return IluFactors(indptr, indices, lu, diag, flagged)


@dataclass
class SolveResult:
    x: np.ndarray
    iterations: int
    history: list = field(default_factory=list)
    converged: bool = True
    true_residual: float = 0.0
    tol: float = 0.0


def bicgstab(A, b, precond=None, tol: float = 1e-10, maxit: int = 1000, x0=None) -> SolveResult:
    """Right-preconditioned BiCGSTAB.

    Convergence is declared only when the true relative residual
    ||b - A x|| / ||b|| is at most ``tol``; the recursively updated residual is
    used to decide when to check it. A breakdown raises
    :class:`BreakdownError` with the best iterate.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    b = np.asarray(b, dtype=float)
    n = b.shape[0]
    if A.shape != (n, n):
        raise ValueError("dimension mismatch")
    apply = (lambda r: r) if precond is None else (precond.apply if hasattr(precond, "apply") else precond)
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return SolveResult(np.zeros(n), 0, [0.0], True, 0.0, tol)
    r = b - A @ x
    rel = np.linalg.norm(r) / bnorm
    history = [rel]
    if rel <= tol:
        return SolveResult(x, 0, history, True, rel, tol)
    tiny = np.finfo(float).tiny
    it = 0
    best_x, best_rel = x.copy(), rel
    while it < maxit:
        # (re)start from the current true residual
        rhat = r.copy()
        rho = alpha = omega = 1.0
        v = np.zeros(n)
        p = np.zeros(n)
        restart = False
        while it < maxit:
            it += 1
            rho_new = rhat @ r
            if abs(rho_new) < tiny * 1e10 or omega == 0.0:
                raise BreakdownError("BiCGSTAB breakdown (rho or omega vanished)", best_x, history)
            beta = (rho_new / rho) * (alpha / omega)
            rho = rho_new
            p = r + beta * (p - omega * v)
            ph = apply(p)
            v = A @ ph
            denom = rhat @ v
            if denom == 0.0:
                raise BreakdownError("BiCGSTAB breakdown (rhat . v = 0)", best_x, history)
            alpha = rho / denom
            s = r - alpha * v
            if np.linalg.norm(s) / bnorm <= tol:
                x = x + alpha * ph
                r = s
            else:
                sh = apply(s)
                t = A @ sh
                tt = t @ t
                if tt == 0.0:
                    raise BreakdownError("BiCGSTAB breakdown (t = 0)", best_x, history)
                omega = (t @ s) / tt
                x = x + alpha * ph + omega * sh
                r = s - omega * t
            rel = np.linalg.norm(r) / bnorm
            history.append(rel)
            if rel < best_rel:
                best_x, best_rel = x.copy(), rel
            if not np.isfinite(rel):
                raise BreakdownError("BiCGSTAB produced a non-finite residual", best_x, history)
            if rel <= tol:
                r = b - A @ x
                true_rel = np.linalg.norm(r) / bnorm
                if true_rel <= tol:
                    return SolveResult(x, it, history, True, true_rel, tol)
                restart = True
                break
            if omega == 0.0:
                break
        if not restart and it >= maxit:
            break
        r = b - A @ x
    true_rel = np.linalg.norm(b - A @ best_x) / bnorm
    return SolveResult(best_x, it, history, False, true_rel, tol)


class SolverLog:
    """Record of every linear solve, used for residual audits."""

    def __init__(self):
        self.records: list[tuple[str, int, float, float, bool]] = []

    def add(self, tag: str, res: SolveResult):
        self.records.append((tag, res.iterations, res.true_residual, res.tol, res.converged))

    def worst_ratio(self) -> float:
        if not self.records:
            return 0.0
        return max(r[2] / r[3] for r in self.records)


def solve(A, b, tol: float = 1e-10, maxit: int = 2000, x0=None, log: SolverLog | None = None, tag: str = "") -> SolveResult:
    """ILU(0) + BiCGSTAB; raises if the solve does not converge."""
    A = as_csr(A)
    M = ilu0(A)
    res = bicgstab(A, b, M, tol=tol, maxit=maxit, x0=x0)
    if log is not None:
        log.add(tag, res)
    if not res.converged:
        raise ArithmeticError(f"BiCGSTAB did not converge ({tag}): residual {res.true_residual:.3e} after {res.iterations} iterations")
    return res
