"""Problem data for D-optimal data fusion.

An instance is an existing Fisher information matrix ``C`` (d x d, PD),
candidate data points ``a_i`` (the columns of the d x n matrix ``A``) and
a budget ``s``. The objective of a selection ``S`` is
``logdet(C + sum_{i in S} a_i a_i^T)``.
"""

import itertools
import json
import math
import os
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import linalg
from .errors import (
    BadBudget,
    BadDimensions,
    DimensionMismatch,
    NotPositiveDefinite,
    ParseError,
)

FORMAT_TAG = "fusionopt-instance"


def _frozen(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class DdfInstance:
    """Immutable problem data plus derived factorizations.

    Use :func:`build` rather than calling the constructor directly.

    Attributes
    ----------
    B : ndarray (d, n)
        Whitened points ``b_i = C^{-1/2} a_i``.
    M : ndarray (n, n)
        ``I_n + B^T B``.
    V : ndarray (n, n)
        Upper factor with ``V^T V = M``; columns ``v_i``.
    U : ndarray (n, n)
        ``V^{-T}``, so ``U^T U = M^{-1}``; columns drive the complement
        formulation in f-form.
    Q : ndarray (d, n)
        ``q_i = (C + A A^T)^{-1/2} a_i``.
    """

    C: np.ndarray
    A: np.ndarray
    s: int
    B: np.ndarray
    M: np.ndarray
    V: np.ndarray
    U: np.ndarray
    Q: np.ndarray
    logdet_C: float
    logdet_total: float
    sigma_max: float
    delta: float
    meta: dict = field(default_factory=dict)

    @property
    def d(self):
        return self.A.shape[0]

    @property
    def n(self):
        return self.A.shape[1]

    @property
    def s_bar(self):
        return min(self.s, self.n - self.s)

    @property
    def zero_columns(self):
        """Indices of candidates with ``a_i = 0`` (they never help)."""
        return [int(i) for i in np.flatnonzero(~np.any(self.A != 0.0, axis=0))]

    def with_budget(self, s):
        """Same data, different budget (derived factorizations are shared)."""
        _check_budget(s, self.n)
        kw = {f: getattr(self, f) for f in self.__dataclass_fields__}
        kw["s"] = int(s)
        kw["meta"] = dict(self.meta)
        return DdfInstance(**kw)

    def validation_report(self):
        return {
            "d": self.d,
            "n": self.n,
            "s": self.s,
            "zero_columns": self.zero_columns,
            "sigma_max": self.sigma_max,
            "delta": self.delta,
            "logdet_C": self.logdet_C,
            "logdet_total": self.logdet_total,
        }


@dataclass(frozen=True)
class Selection:
    """A cardinality-``s`` index set and its objective value."""

    indices: tuple
    objective: float

    @classmethod
    def of(cls, inst, S):
        idx = tuple(sorted(int(i) for i in S))
        return cls(idx, objective(inst, idx))

    def mask(self, n):
        x = np.zeros(n)
        x[list(self.indices)] = 1.0
        return x

    def to_dict(self):
        return {"indices": list(self.indices), "objective": self.objective}


def _check_budget(s, n):
    if int(s) != s or not 1 <= s <= n:
        raise BadBudget(f"budget s={s} must be an integer in [1, {n}]")


def build(C, A, s, meta=None):
    """Validate ``(C, A, s)`` and compute every derived quantity.

    Raises
    ------
    NotPositiveDefinite
        ``C`` is not positive definite.
    BadDimensions
        Shapes of ``C`` and ``A`` disagree.
    BadBudget
        ``s`` is not in ``[1, n]``.
    """
    C = np.asarray(C, dtype=float)
    A = np.asarray(A, dtype=float)
    if A.ndim == 1:
        A = A[:, None]
    if C.ndim != 2 or C.shape[0] != C.shape[1]:
        raise BadDimensions(f"C must be square, got {C.shape}")
    if A.ndim != 2 or A.shape[0] != C.shape[0]:
        raise BadDimensions(f"A must have {C.shape[0]} rows, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise BadDimensions("A has non-finite entries")
    d, n = A.shape
    _check_budget(s, n)
    try:
        C = linalg.as_symmetric(C, "C")
    except ValueError as exc:
        raise BadDimensions(str(exc)) from None

    Lc = linalg.cholesky(C)
    logdet_C = 2.0 * float(np.sum(np.log(np.diag(Lc))))
    B = linalg.inv_sqrt_spd(C) @ A
    BtB = B.T @ B
    BtB = 0.5 * (BtB + BtB.T)

    # whitening check against a triangular solve path
    W = np.linalg.solve(Lc, A)
    ref = W.T @ W
    if np.linalg.norm(BtB - ref) > 1e-7 * (1.0 + np.linalg.norm(ref)):
        raise NotPositiveDefinite("C is too ill-conditioned to whiten the data")

    M = np.eye(n) + BtB
    V = linalg.cholesky(M).T
    U = np.linalg.inv(V).T
    total = C + A @ A.T
    logdet_total = linalg.logdet_spd(total)
    Q = linalg.inv_sqrt_spd(total) @ A
    q_top = float(linalg.sym_eigvals(Q @ Q.T)[0]) if n else 0.0
    if q_top >= 1.0 - 1e-10:
        warnings.warn(
            f"lambda_max(sum q_i q_i^T) = {q_top!r} is numerically 1; "
            "complement bounds may be inaccurate",
            RuntimeWarning,
            stacklevel=2,
        )
    sigma_max = float(np.max(np.sum(B * B, axis=0))) if n else 0.0
    delta = float(linalg.sym_eigvals(BtB)[0]) if n else 0.0
    return DdfInstance(
        C=_frozen(C),
        A=_frozen(A),
        s=int(s),
        B=_frozen(B),
        M=_frozen(0.5 * (M + M.T)),
        V=_frozen(V),
        U=_frozen(U),
        Q=_frozen(Q),
        logdet_C=logdet_C,
        logdet_total=logdet_total,
        sigma_max=sigma_max,
        delta=max(delta, 0.0),
        meta=dict(meta or {}),
    )


def objective(inst, S):
    """``logdet(C + sum_{i in S} a_i a_i^T)`` computed directly."""
    idx = list(S)
    As = inst.A[:, idx]
    return linalg.logdet_spd(inst.C + As @ As.T)


def objective_minor(inst, S):
    """Same value through ``logdet C + logdet(I + B^T B)_{S,S}``."""
    idx = list(S)
    if not idx:
        return inst.logdet_C
    return inst.logdet_C + linalg.logdet_spd(inst.M[np.ix_(idx, idx)])


@dataclass(frozen=True)
class ComplementData:
    logdet_total: float
    Q: np.ndarray


def to_complement_r(inst):
    """Data of the exclusion form: choose ``n - s`` points to remove from
    ``C + A A^T``."""
    return ComplementData(inst.logdet_total, inst.Q)


def complement_objective(inst, S):
    """``logdet(C + AA^T) + logdet(I - sum_{i not in S} q_i q_i^T)``."""
    out = np.setdiff1d(np.arange(inst.n), np.asarray(list(S), dtype=int))
    Qo = inst.Q[:, out]
    return inst.logdet_total + linalg.logdet_spd(np.eye(inst.d) - Qo @ Qo.T)


def from_mesp(C_mesp, s):
    """Turn a max-entropy sampling instance into a data-fusion instance.

    Returns ``(inst, offset)`` with ``logdet(C_mesp[S, S]) ==
    objective(inst, S) + offset`` for every ``|S| = s``.
    """
    C_mesp = linalg.as_symmetric(C_mesp, "C_mesp")
    lam_min = float(linalg.sym_eigvals(C_mesp)[-1])
    if lam_min <= linalg.PD_RTOL * max(float(np.max(np.diag(C_mesp))), 0.0):
        raise NotPositiveDefinite("covariance matrix must be positive definite")
    n = C_mesp.shape[0]
    K = C_mesp / lam_min - np.eye(n)
    F = linalg.psd_cholesky(K)
    inst = build(np.eye(n), F, s, meta={"source": "mesp", "lambda_min": lam_min})
    return inst, s * math.log(lam_min)


def gen_random(d, n, s, seed=0):
    """Gaussian instance: ``C = G^T G + I_d`` and ``A`` standard normal."""
    rng = np.random.default_rng(seed)
    G = rng.standard_normal((d, d))
    C = G.T @ G + np.eye(d)
    A = rng.standard_normal((d, n))
    return build(C, A, s, meta={"generator": "random", "d": d, "n": n, "seed": seed})


def gen_pmu(C, sigma_hat, s):
    """PMU placement: one candidate per bus, ``a_i = e_i / sigma_i`` so that
    ``a_i a_i^T = e_i e_i^T / sigma_i^2``."""
    C = np.asarray(C, dtype=float)
    n = C.shape[0]
    sig = np.broadcast_to(np.asarray(sigma_hat, dtype=float), (n,)).copy()
    if np.any(~(sig > 0)):
        raise ValueError("PMU standard deviations must be positive")
    return build(C, np.diag(1.0 / sig), s, meta={"generator": "pmu"})


def brute_force_values(inst, s=None):
    """Objective of every ``s``-subset, in ``itertools.combinations`` order."""
    s = inst.s if s is None else s
    combos = np.array(list(itertools.combinations(range(inst.n), s)), dtype=int)
    vals = np.empty(len(combos))
    chunk = 20000
    for lo in range(0, len(combos), chunk):
        c = combos[lo:lo + chunk]
        sub = inst.M[c[:, :, None], c[:, None, :]]
        sign, ld = np.linalg.slogdet(sub)
        vals[lo:lo + chunk] = inst.logdet_C + ld
    return combos, vals


# ---------------------------------------------------------------- file I/O


def read_csv_matrix(path, shape=None):
    """Comma-separated, row-per-line, no header."""
    try:
        M = np.loadtxt(path, delimiter=",", dtype=float, ndmin=2)
    except (OSError, ValueError) as exc:
        raise ParseError(f"cannot read CSV matrix {path}: {exc}") from None
    if shape is not None:
        rows, cols = shape
        if rows is not None and M.shape[0] != rows:
            raise DimensionMismatch(f"{path}: expected {rows} rows, found {M.shape[0]}")
        if cols is not None and M.shape[1] != cols:
            raise DimensionMismatch(f"{path}: expected {cols} columns, found {M.shape[1]}")
    return M


def write_csv_matrix(path, M):
    np.savetxt(path, np.atleast_2d(M), delimiter=",", fmt="%.17g")


def _matrix_field(doc, key, shape, base):
    val = doc.get(key)
    if isinstance(val, str) or (isinstance(val, dict) and "csv" in val):
        rel = val if isinstance(val, str) else val["csv"]
        path = rel if os.path.isabs(rel) else os.path.join(base, rel)
        return read_csv_matrix(path, shape)
    if not isinstance(val, list):
        raise ParseError(f"field {key!r} must be a row-major array or a CSV reference")
    try:
        M = np.array(val, dtype=float, ndmin=2)
    except (TypeError, ValueError) as exc:
        raise ParseError(f"field {key!r}: {exc}") from None
    if M.shape != shape:
        raise DimensionMismatch(f"field {key!r}: expected shape {shape}, got {M.shape}")
    return M


def load(path):
    """Read an instance JSON file (matrices inline or as CSV references)."""
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ParseError(f"cannot read instance {path}: {exc}") from None
    if not isinstance(doc, dict):
        raise ParseError("instance file must hold a JSON object")
    try:
        d, n, s = int(doc["d"]), int(doc["n"]), int(doc["s"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"instance needs integer d, n, s: {exc}") from None
    base = os.path.dirname(os.path.abspath(path))
    C = _matrix_field(doc, "C", (d, d), base)
    A = _matrix_field(doc, "A", (d, n), base)
    return build(C, A, s, meta=doc.get("meta") or {})


def save(inst, path, csv=False):
    """Write ``inst`` as JSON. With ``csv=True`` the matrices go to sibling
    ``<stem>.C.csv`` / ``<stem>.A.csv`` files referenced from the JSON."""
    doc = {"format": FORMAT_TAG, "version": 1, "d": inst.d, "n": inst.n, "s": inst.s}
    if csv:
        stem = os.path.splitext(os.path.basename(path))[0]
        base = os.path.dirname(os.path.abspath(path))
        for key, M in (("C", inst.C), ("A", inst.A)):
            name = f"{stem}.{key}.csv"
            write_csv_matrix(os.path.join(base, name), M)
            doc[key] = {"csv": name}
    else:
        # repr() of a float is the shortest string that round-trips exactly
        doc["C"] = inst.C.tolist()
        doc["A"] = inst.A.tolist()
    doc["meta"] = inst.meta
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")


def load_pmu(fim_csv, sigma, s):
    """Build a PMU instance from a grid FIM CSV and either a scalar
    standard deviation or a CSV column of per-bus deviations."""
    C = read_csv_matrix(fim_csv)
    if C.shape[0] != C.shape[1]:
        raise DimensionMismatch(f"{fim_csv}: FIM must be square, got {C.shape}")
    if isinstance(sigma, (int, float)):
        sig = float(sigma)
    else:
        sig = read_csv_matrix(sigma).ravel()
        if sig.size != C.shape[0]:
            raise DimensionMismatch(f"{sigma}: expected {C.shape[0]} deviations, found {sig.size}")
    inst = gen_pmu(C, sig, s)
    inst.meta.update({"fim": str(fim_csv), "sigma": sigma if isinstance(sigma, (int, float)) else str(sigma)})
    return inst
