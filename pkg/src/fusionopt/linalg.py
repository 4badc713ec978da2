"""Dense symmetric linear-algebra kernels.

Everything here is a pure function of its inputs. LAPACK (through numpy)
does the heavy lifting; this module adds the positive-definiteness
tolerances, descending eigen-ordering and the rank-one / elementary
symmetric polynomial helpers the solvers rely on.
"""

import math

import numpy as np

from .errors import NoConvergence, NotPositiveDefinite, SingularUpdate

PD_RTOL = 1e-12
SYM_TOL = 1e-9
REFRESH_EVERY = 64


def as_symmetric(M, name="matrix"):
    """Return ``M`` as a float array after checking it is square, finite
    and symmetric up to rounding."""
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError(f"{name} must be square, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise ValueError(f"{name} has non-finite entries")
    # products like B.T @ B carry ~1e-15 asymmetry; symmetrize those, reject the rest
    if np.any(np.abs(M - M.T) > SYM_TOL * (1.0 + np.abs(M))):
        raise ValueError(f"{name} is not symmetric")
    return 0.5 * (M + M.T)


def _pivot_failure(M, tol):
    # outer-product Cholesky, only used to locate the failing pivot
    A = np.array(M, dtype=float)
    n = A.shape[0]
    for j in range(n):
        piv = A[j, j]
        if not piv > tol:
            return j
        col = A[j + 1:, j] / math.sqrt(piv)
        A[j + 1:, j + 1:] -= np.outer(col, col)
    return n - 1


def cholesky(M):
    """Lower-triangular ``L`` with ``L @ L.T == M``.

    Raises
    ------
    NotPositiveDefinite
        If some leading pivot is at most ``1e-12 * trace(M) / dim``.
    """
    M = as_symmetric(M)
    n = M.shape[0]
    tol = PD_RTOL * max(np.trace(M), 0.0) / n
    try:
        L = np.linalg.cholesky(M)
    except np.linalg.LinAlgError:
        raise NotPositiveDefinite(pivot=_pivot_failure(M, tol)) from None
    piv = np.diag(L) ** 2
    bad = np.flatnonzero(piv <= tol)
    if bad.size or tol == 0.0:
        raise NotPositiveDefinite(pivot=int(bad[0]) if bad.size else 0)
    return L


def logdet_spd(M):
    """Natural log-determinant of a positive-definite matrix."""
    L = cholesky(M)
    return 2.0 * float(np.sum(np.log(np.diag(L))))


def sym_eig(M):
    """Eigen-decomposition with eigenvalues sorted in descending order.

    Returns ``(values, vectors)`` where the columns of ``vectors`` are
    orthonormal and ``vectors @ diag(values) @ vectors.T`` reconstructs ``M``.
    """
    M = as_symmetric(M)
    try:
        w, Q = np.linalg.eigh(M)
    except np.linalg.LinAlgError as exc:
        raise NoConvergence(str(exc)) from None
    return w[::-1].copy(), Q[:, ::-1].copy()


def sym_eigvals(M):
    """Descending eigenvalues only (cheaper than :func:`sym_eig`)."""
    try:
        w = np.linalg.eigvalsh(M)
    except np.linalg.LinAlgError as exc:
        raise NoConvergence(str(exc)) from None
    return w[::-1].copy()


def inv_sqrt_spd(M):
    """``M^{-1/2}`` of a positive-definite matrix via its eigenbasis."""
    w, Q = sym_eig(M)
    if w[-1] <= PD_RTOL * max(w[0], 0.0) or w[0] <= 0.0:
        raise NotPositiveDefinite("smallest eigenvalue is numerically zero")
    X = (Q / np.sqrt(w)) @ Q.T
    return 0.5 * (X + X.T)


def rank_one_logdet_update(logdet, Minv, b, sign=1):
    """Update ``(logdet M, M^{-1})`` for ``M + sign * b b^T``.

    Uses the matrix determinant lemma and Sherman-Morrison.
    """
    if sign not in (1, -1):
        raise ValueError("sign must be +1 or -1")
    b = np.asarray(b, dtype=float)
    Mb = Minv @ b
    denom = 1.0 + sign * float(b @ Mb)
    if denom <= 1e-12:
        raise SingularUpdate(f"1 {'+' if sign > 0 else '-'} b'M^-1 b = {denom:.3e}")
    new_inv = Minv - sign * np.outer(Mb, Mb) / denom
    return logdet + math.log(denom), 0.5 * (new_inv + new_inv.T)


class RankOneTracker:
    """Keeps ``(logdet, inverse)`` of a PD matrix under signed rank-one
    updates, recomputing from scratch every ``refresh_every`` updates."""

    def __init__(self, M, refresh_every=REFRESH_EVERY):
        self.M = as_symmetric(M).copy()
        self.refresh_every = refresh_every
        self._refresh()

    def _refresh(self):
        L = cholesky(self.M)
        self.logdet = 2.0 * float(np.sum(np.log(np.diag(L))))
        Linv = np.linalg.inv(L)
        self.inv = Linv.T @ Linv
        self.count = 0

    def update(self, b, sign=1):
        b = np.asarray(b, dtype=float)
        self.logdet, self.inv = rank_one_logdet_update(self.logdet, self.inv, b, sign)
        self.M += sign * np.outer(b, b)
        self.count += 1
        if self.count >= self.refresh_every:
            self._refresh()
        return self


def elem_sym_all(y, kmax=None):
    """``[e_0(y), ..., e_kmax(y)]`` by the prefix recursion
    ``e_k(y, t) = e_k(y) + t e_{k-1}(y)``."""
    y = np.asarray(y, dtype=float).ravel()
    kmax = y.size if kmax is None else min(int(kmax), y.size)
    e = np.zeros(kmax + 1)
    e[0] = 1.0
    with np.errstate(over="ignore", invalid="ignore"):
        for t in y:
            e[1:] = e[1:] + t * e[:-1]
    return e


def log_elem_sym_all(y, kmax=None):
    """Log-space version of :func:`elem_sym_all` for nonnegative ``y``.

    Entries for which ``e_k = 0`` come back as ``-inf``.
    """
    y = np.asarray(y, dtype=float).ravel()
    if np.any(y < 0):
        raise ValueError("log-space elementary symmetric polynomials need y >= 0")
    kmax = y.size if kmax is None else min(int(kmax), y.size)
    le = np.full(kmax + 1, -np.inf)
    le[0] = 0.0
    with np.errstate(divide="ignore"):
        logy = np.log(y)
    for lt in logy:
        le[1:] = np.logaddexp(le[1:], lt + le[:-1])
    return le


def elem_sym_poly(y, k):
    """Degree-``k`` elementary symmetric polynomial of ``y``.

    ``k = 0`` gives 1 and ``k > len(y)`` (or negative ``k``) gives 0. For
    nonnegative ``y`` whose direct recursion leaves the float range the
    value is recomputed in log-space.
    """
    y = np.asarray(y, dtype=float).ravel()
    if k == 0:
        return 1.0
    if k < 0 or k > y.size:
        return 0.0
    e = elem_sym_all(y, k)
    if np.all(np.isfinite(e)) and np.max(np.abs(e)) <= 1e300:
        return float(e[k])
    if np.any(y < 0):
        return float(e[k])
    le = log_elem_sym_poly(y, k)
    return math.exp(le) if le < 709.0 else math.inf


def log_elem_sym_poly(y, k):
    """``log e_k(y)`` for nonnegative ``y`` (``-inf`` when ``e_k = 0``)."""
    y = np.asarray(y, dtype=float).ravel()
    if k == 0:
        return 0.0
    if k < 0 or k > y.size:
        return -math.inf
    return float(log_elem_sym_all(y, k)[k])


def sum_principal_minors(M, k):
    """Sum of all ``k x k`` principal minors of a symmetric matrix,
    evaluated as ``e_k`` of its eigenvalues."""
    return elem_sym_poly(sym_eigvals(as_symmetric(M)), k)


def log_det_smallest(eigs, k):
    """Sum of the logs of the ``k`` least entries of ``eigs`` (all > 0)."""
    w = np.sort(np.asarray(eigs, dtype=float))[:k]
    return float(np.sum(np.log(w)))


def psd_cholesky(K, rtol=PD_RTOL):
    """Pivoted outer-product Cholesky of a positive-semidefinite matrix.

    Returns a square ``F`` with ``F.T @ F == K``. Pivots below
    ``rtol * trace(K)`` end the factorization; the remaining rows of ``F``
    are zero, so ``F`` has as many nonzero rows as the numerical rank.
    """
    K = as_symmetric(K)
    n = K.shape[0]
    tol = rtol * max(np.trace(K), 0.0)
    diag = np.diag(K).copy()
    L = np.zeros((n, n))
    done = np.zeros(n, dtype=bool)
    for j in range(n):
        cand = np.where(done, -np.inf, diag)
        p = int(np.argmax(cand))
        if not cand[p] > tol:
            break
        col = (K[:, p] - L[:, :j] @ L[p, :j]) / math.sqrt(cand[p])
        col[done] = 0.0
        col[p] = math.sqrt(cand[p])
        L[:, j] = col
        diag -= col ** 2
        done[p] = True
    return L.T.copy()
