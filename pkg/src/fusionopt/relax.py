"""Continuous relaxations and dual-feasible upper bounds.

Three concave relaxations of the selection problem are maximized by
Frank-Wolfe over the capped simplex ``{x in [0,1]^n, sum x = budget}``:

``R``
    ``logdet C + logdet(I_d + sum x_i b_i b_i^T)``.
``M``
    ``logdet C + log f(sum x_i v_i v_i^T)`` where ``V^T V = I + B^T B`` and
    ``f`` is the spectral surrogate of the sum of ``s``-principal minors.
``Mc``
    the exclusion form of ``M``: pick ``n - s`` points to drop, with vectors
    ``u_i`` satisfying ``U^T U = (I + B^T B)^{-1}``.

Every iterate yields a :class:`DualCertificate`, i.e. a supergradient of the
concave objective that gives a rigorous upper bound on the binary problem
whether or not Frank-Wolfe converged. A fourth certificate family ``Rc``
(the exclusion form of ``R``) is derived from the same iterates.
"""

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import linalg
from .errors import DegenerateSpectrum, InfeasibleFixing

FORMULATIONS = ("R", "M", "Mc")
COMPLEMENT = {"R": False, "M": False, "Mc": True, "Rc": True}
BETA_FLOOR = 1e-14
SNAP = 1e-9


# ------------------------------------------------------------ f and friends


def find_k(lam, s):
    """Index ``k`` splitting a descending spectrum for the surrogate ``f``.

    Returns the unique ``0 <= k < s`` with
    ``lam[k-1] > sum(lam[k:]) / (s - k) >= lam[k]`` (0-based, with
    ``lam[-1] = +inf``).

    Raises
    ------
    DegenerateSpectrum
        When fewer than ``s`` eigenvalues are positive, so the tail is 0.
    """
    lam = np.asarray(lam, dtype=float)
    if not 1 <= s <= lam.size:
        raise ValueError(f"need 1 <= s <= {lam.size}, got {s}")
    # tail[k] = sum(lam[k:])
    tail = np.cumsum(lam[::-1])[::-1]
    for k in range(s):
        if tail[k] / (s - k) >= lam[k]:
            if not tail[k] > 0.0:
                raise DegenerateSpectrum(f"fewer than {s} positive eigenvalues")
            return k
    raise DegenerateSpectrum("spectrum is not sorted in descending order")


def f_value(lam, s):
    """``log f`` of a descending nonnegative spectrum."""
    lam = np.clip(np.asarray(lam, dtype=float), 0.0, None)
    k = find_k(lam, s)
    tail = float(np.sum(lam[k:]))
    return float(np.sum(np.log(lam[:k]))) + (s - k) * math.log(tail / (s - k))


def _f_subgrad_eig(lam, s):
    # eigenvalues of the supergradient of log f in the eigenbasis of X
    k = find_k(lam, s)
    tail = float(np.sum(lam[k:]))
    beta = np.full(lam.size, (s - k) / tail)
    beta[:k] = 1.0 / lam[:k]
    return beta


def f_subgrad(X, s):
    """Supergradient ``G`` of ``log f`` at a PSD matrix ``X``.

    In the eigenbasis of ``X`` the eigenvalues of ``G`` are ``1/lam_i`` for
    the ``k`` leading eigenvalues and ``(s-k)/sum_{j>k} lam_j`` otherwise;
    ``f(X) * G`` is a supergradient of ``f`` itself.
    """
    lam, Qv = linalg.sym_eig(X)
    lam = np.clip(lam, 0.0, None)
    beta = _f_subgrad_eig(lam, s)
    G = (Qv * beta) @ Qv.T
    return 0.5 * (G + G.T)


def rddf_value_grad(inst, x):
    """``logdet(I + B diag(x) B^T)`` and its gradient ``b_i^T X^{-1} b_i``."""
    x = np.asarray(x, dtype=float)
    X = np.eye(inst.d) + (inst.B * x) @ inst.B.T
    L = np.linalg.cholesky(0.5 * (X + X.T))
    W = np.linalg.solve(L, inst.B)
    return 2.0 * float(np.sum(np.log(np.diag(L)))), np.sum(W * W, axis=0)


def rddf_hessian(inst, x):
    """Explicit Hessian ``-(B^T X^{-1} B) o (B^T X^{-1} B)``."""
    x = np.asarray(x, dtype=float)
    X = np.eye(inst.d) + (inst.B * x) @ inst.B.T
    K = inst.B.T @ np.linalg.solve(X, inst.B)
    return -(K * K)


def hessian_bound(inst):
    """``delta^2`` with ``delta = lambda_max(B^T B)``; the Hessian of the R
    objective is bounded below by ``-delta^2 I``."""
    return inst.delta ** 2


# ---------------------------------------------------------------- results


@dataclass
class FracPoint:
    """A point of the relaxation's feasible set.

    ``x`` lives in the formulation's own space: for ``Mc`` it holds the
    exclusion weights ``y`` (summing to ``n - s``).
    """

    x: np.ndarray
    formulation: str
    value: float
    bound: float
    iterations: int = 0

    @property
    def gap(self):
        return self.bound - self.value

    @property
    def selection_x(self):
        return 1.0 - self.x if COMPLEMENT[self.formulation] else self.x


@dataclass
class DualCertificate:
    """Dual-feasible point ``(Lambda, nu, mu)`` and the bound it certifies.

    The bound for any fixing ``(F1, F0)`` of the formulation's variables is
    ``const + sum_{F1} w + (sum of the r largest free w)`` with ``r`` the
    residual budget. ``nu`` and ``mu`` are the multipliers attached to the
    fixing the certificate was built for; they drive the closed-form shifts
    used for variable probing.
    """

    formulation: str
    Lam: np.ndarray
    w: np.ndarray
    const: float
    budget: int
    fixed_in: frozenset
    fixed_out: frozenset
    nu: float
    mu: np.ndarray
    bound: float
    floored: bool = False
    meta: dict = field(default_factory=dict)

    @property
    def complement(self):
        return COMPLEMENT[self.formulation]

    def _to_formulation(self, sel_in, sel_out):
        return (sel_out, sel_in) if self.complement else (sel_in, sel_out)

    def bound_for(self, sel_in=(), sel_out=()):
        """Certified bound for the node fixing ``sel_in`` to 1 and
        ``sel_out`` to 0 (selection space). ``-inf`` for infeasible fixings."""
        F1, F0 = self._to_formulation(set(sel_in), set(sel_out))
        n = self.w.size
        r = self.budget - len(F1)
        free = np.ones(n, dtype=bool)
        free[list(F1 | F0)] = False
        nfree = int(free.sum())
        if F1 & F0 or r < 0 or r > nfree:
            return -math.inf
        fw = np.sort(self.w[free])[::-1]
        return self.const + float(np.sum(self.w[list(F1)])) + float(np.sum(fw[:r]))

    def shift_in(self, j):
        """Closed-form bound change when selection index ``j`` is forced in."""
        return -self.mu[j] if self.complement else self.w[j] - self.nu - self.mu[j]

    def shift_out(self, j):
        """Closed-form bound change when selection index ``j`` is forced out."""
        return self.w[j] - self.nu - self.mu[j] if self.complement else -self.mu[j]

    def restricted_bound(self, sel_in=(), sel_out=()):
        """Bound for additional fixings via the dual shifts, without
        re-optimizing: ``bound + sum shift_in + sum shift_out``."""
        return (self.bound + sum(self.shift_in(j) for j in sel_in)
                + sum(self.shift_out(j) for j in sel_out))

    def feasibility_violation(self):
        """Largest ``w_i - nu - mu_i`` over the certificate's free indices."""
        free = np.ones(self.w.size, dtype=bool)
        free[list(self.fixed_in | self.fixed_out)] = False
        if not free.any():
            return 0.0
        return float(np.max(self.w[free] - self.nu - self.mu[free]))

    def to_dict(self):
        return {
            "formulation": self.formulation,
            "bound": self.bound,
            "nu": self.nu,
            "mu": self.mu.tolist(),
            "Lambda_eigenvalues": linalg.sym_eigvals(self.Lam).tolist(),
        }


# ------------------------------------------------------------------ models


class _RModel:
    """``logdet(I + sum x_i p_i p_i^T)``-type objective with sign +1 (R) or
    ``logdet(I - sum y_i q_i q_i^T)`` with sign -1 (Rc)."""

    def __init__(self, inst, complement=False):
        self.sign = -1.0 if complement else 1.0
        self.P = inst.Q if complement else inst.B
        self.const = inst.logdet_total if complement else inst.logdet_C
        self.budget = inst.n - inst.s if complement else inst.s
        self.name = "Rc" if complement else "R"
        self.k = self.P.shape[0]

    def evaluate(self, x):
        X = np.eye(self.k) + self.sign * (self.P * x) @ self.P.T
        X = 0.5 * (X + X.T)
        L = np.linalg.cholesky(X)
        W = np.linalg.solve(L, self.P)
        g = self.sign * np.sum(W * W, axis=0)
        return self.const + 2.0 * float(np.sum(np.log(np.diag(L)))), g, L

    def certificate_parts(self, x, state):
        L = state
        Linv = np.linalg.inv(L)
        Lam = Linv.T @ Linv
        Lam = 0.5 * (Lam + Lam.T)
        W = Linv @ self.P
        w = self.sign * np.sum(W * W, axis=0)
        # -logdet(Lam) + tr(Lam) - dim
        const = (self.const + 2.0 * float(np.sum(np.log(np.diag(L))))
                 + float(np.trace(Lam)) - self.k)
        return Lam, w, const, False

    def line_search(self, x, dvec, gmax, state):
        L = state
        W = np.linalg.solve(L, self.P)
        D = self.sign * (W * dvec) @ W.T
        theta = linalg.sym_eigvals(0.5 * (D + D.T))

        def deriv(g):
            return float(np.sum(theta / (1.0 + g * theta)))

        if deriv(gmax) >= 0.0:
            return gmax
        if deriv(0.0) <= 0.0:
            return 0.0
        lo, hi = 0.0, gmax
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            if deriv(mid) > 0.0:
                lo = mid
            else:
                hi = mid
        return 0.5 * (lo + hi)


class _MModel:
    """``log f(sum x_i v_i v_i^T)`` with budget ``s`` (M) or the exclusion
    form on the inverse factor with budget ``n - s`` (Mc)."""

    def __init__(self, inst, complement=False):
        self.P = inst.U if complement else inst.V
        self.const = inst.logdet_total if complement else inst.logdet_C
        self.budget = inst.n - inst.s if complement else inst.s
        self.name = "Mc" if complement else "M"
        self.G = self.P.T @ self.P

    def _spectrum(self, x):
        X = (self.P * x) @ self.P.T
        lam, Qv = linalg.sym_eig(X)
        return np.clip(lam, 0.0, None), Qv

    def _logf(self, x):
        # nonzero spectrum of P diag(x) P^T equals that of D^1/2 G D^1/2
        r = np.sqrt(np.clip(x, 0.0, None))
        lam = np.clip(linalg.sym_eigvals(self.G * np.outer(r, r)), 0.0, None)
        return f_value(lam, self.budget)

    def evaluate(self, x):
        lam, Qv = self._spectrum(x)
        beta = _f_subgrad_eig(lam, self.budget)
        W = Qv.T @ self.P
        g = beta @ (W * W)
        return self.const + f_value(lam, self.budget), g, (lam, Qv, beta, W)

    def certificate_parts(self, x, state):
        lam, Qv, beta, W = state
        floored = bool(np.any(beta < BETA_FLOOR))
        if floored:
            warnings.warn("supergradient eigenvalues floored at 1e-14", RuntimeWarning,
                          stacklevel=3)
            beta = np.maximum(beta, BETA_FLOOR)
        Lam = (Qv * beta) @ Qv.T
        w = beta @ (W * W)
        logdet_small = float(np.sum(np.log(np.sort(beta)[:self.budget])))
        const = self.const - logdet_small - self.budget
        return 0.5 * (Lam + Lam.T), w, const, floored

    def line_search(self, x, dvec, gmax, state):
        phi = lambda g: self._logf(x + g * dvec)  # noqa: E731
        best_g, best_v = 0.0, phi(0.0)
        v_end = phi(gmax)
        if v_end >= best_v:
            best_g, best_v = gmax, v_end
        invphi = (math.sqrt(5.0) - 1.0) / 2.0
        a, b = 0.0, gmax
        c, e = b - invphi * (b - a), a + invphi * (b - a)
        fc, fe = phi(c), phi(e)
        for _ in range(20):
            if fc >= fe:
                b, e, fe = e, c, fc
                c = b - invphi * (b - a)
                fc = phi(c)
            else:
                a, c, fc = c, e, fe
                e = a + invphi * (b - a)
                fe = phi(e)
        for g, v in ((c, fc), (e, fe)):
            if v > best_v:
                best_g, best_v = g, v
        return best_g


def _model(inst, formulation):
    if formulation == "R":
        return _RModel(inst)
    if formulation == "Rc":
        return _RModel(inst, complement=True)
    if formulation == "M":
        return _MModel(inst)
    if formulation == "Mc":
        return _MModel(inst, complement=True)
    raise ValueError(f"unknown formulation {formulation!r}")


def relaxation_value(inst, formulation, x):
    """Objective of a relaxation at ``x`` (formulation space), including
    its constant term."""
    return _model(inst, formulation).evaluate(np.asarray(x, dtype=float))[0]


# ------------------------------------------------------------ frank-wolfe


def _fixing(inst, formulation, fixed_in, fixed_out):
    fixed_in, fixed_out = frozenset(map(int, fixed_in)), frozenset(map(int, fixed_out))
    if fixed_in & fixed_out:
        raise InfeasibleFixing("an index is fixed both in and out")
    if len(fixed_in) > inst.s or inst.n - len(fixed_out) < inst.s:
        raise InfeasibleFixing(
            f"fixing {len(fixed_in)} in / {len(fixed_out)} out is infeasible for s={inst.s}")
    if COMPLEMENT[formulation]:
        return fixed_out, fixed_in
    return fixed_in, fixed_out


def _assemble(model, formulation, x, state, F1, F0, free, r):
    Lam, w, const, floored = model.certificate_parts(x, state)
    fw = w[free]
    order = np.argsort(-fw, kind="stable")
    if r > 0:
        nu = float(fw[order[r - 1]])
    elif fw.size:
        nu = float(fw[order[0]])
    else:
        nu = 0.0
    mu = np.zeros_like(w)
    mu[free] = np.maximum(fw - nu, 0.0)
    bound = const + float(np.sum(w[list(F1)])) + r * nu + float(np.sum(mu))
    return DualCertificate(formulation, Lam, w, const, model.budget, F1, F0, nu, mu, bound,
                           floored)


def dual_from_gradient(inst, formulation, x, fixed_in=(), fixed_out=()):
    """Certificate built from the supergradient at ``x`` (formulation space).

    ``fixed_in``/``fixed_out`` are selection-space index sets.
    """
    model = _model(inst, formulation)
    F1, F0 = _fixing(inst, formulation, fixed_in, fixed_out)
    free = np.ones(inst.n, dtype=bool)
    free[list(F1 | F0)] = False
    x = np.asarray(x, dtype=float)
    _, _, state = model.evaluate(x)
    return _assemble(model, formulation, x, state, F1, F0, free, model.budget - len(F1))


def _project(x0, lo_mask_free, r):
    # Euclidean projection onto {0 <= x <= 1, sum x = r} by bisection on the shift
    z = np.asarray(x0, dtype=float)[lo_mask_free]
    lo, hi = float(np.min(z)) - 1.0, float(np.max(z))
    for _ in range(100):
        t = 0.5 * (lo + hi)
        if np.clip(z - t, 0.0, 1.0).sum() > r:
            lo = t
        else:
            hi = t
    return np.clip(z - 0.5 * (lo + hi), 0.0, 1.0)


def frank_wolfe(inst, formulation="R", fixed_in=(), fixed_out=(), max_iter=2000, tol=1e-6,
                x0=None, stop_below=None):
    """Maximize a relaxation over the (restricted) capped simplex.

    Parameters
    ----------
    inst : DdfInstance
    formulation : {"R", "M", "Mc", "Rc"}
    fixed_in, fixed_out : iterable of int
        Selection-space indices fixed to 1 and 0.
    max_iter : int
    tol : float
        Stop once ``best bound - best value <= tol * (1 + |bound|)``.
    x0 : array, optional
        Warm start in formulation space; projected onto the feasible set and
        mixed with the uniform point.
    stop_below : float, optional
        Stop as soon as a certificate proves the bound is below this value.

    Returns
    -------
    (FracPoint, DualCertificate)
        The best iterate found and the tightest certificate seen.
    """
    model = _model(inst, formulation)
    F1, F0 = _fixing(inst, formulation, fixed_in, fixed_out)
    n = inst.n
    free = np.ones(n, dtype=bool)
    free[list(F1 | F0)] = False
    free_idx = np.flatnonzero(free)
    r = model.budget - len(F1)

    x = np.zeros(n)
    x[list(F1)] = 1.0
    if free_idx.size:
        uniform = r / free_idx.size
        if x0 is not None and 0 < r < free_idx.size:
            proj = _project(x0, free, r)
            x[free_idx] = 0.9 * proj + 0.1 * uniform
        else:
            x[free_idx] = uniform

    value, g, state = model.evaluate(x)
    cert = _assemble(model, formulation, x, state, F1, F0, free, r)
    best_x, best_val = x.copy(), value
    it = 0
    if 0 < r < free_idx.size:
        while it < max_iter:
            if cert.bound - best_val <= tol * (1.0 + abs(cert.bound)):
                break
            if stop_below is not None and cert.bound < stop_below:
                break
            it += 1
            gf = g[free_idx]
            xf = x[free_idx]
            order = np.argsort(-gf, kind="stable")
            v = np.zeros(free_idx.size)
            v[order[:r]] = 1.0
            fw_dir = v - xf
            fw_gain = float(gf @ fw_dir)
            # pairwise move: shift mass from the worst loaded to the best unsaturated index
            up = np.flatnonzero(xf < 1.0 - 1e-12)
            down = np.flatnonzero(xf > 1e-12)
            j = up[np.argmax(gf[up])]
            i = down[np.argmin(gf[down])]
            pw_gain = float(gf[j] - gf[i]) if i != j else -math.inf
            dvec = np.zeros(n)
            if pw_gain > fw_gain:
                dvec[free_idx[j]] = 1.0
                dvec[free_idx[i]] = -1.0
                gmax = min(1.0 - xf[j], xf[i])
            else:
                dvec[free_idx] = fw_dir
                gmax = 1.0
            if max(fw_gain, pw_gain) <= 0.0 or gmax <= 0.0:
                break
            gamma = model.line_search(x, dvec, gmax, state)
            if gamma <= 0.0:
                gamma = min(gmax, 2.0 / (it + 2.0))
            x = x + gamma * dvec
            xf = x[free_idx]
            xf[xf < SNAP] = 0.0
            xf[xf > 1.0 - SNAP] = 1.0
            x[free_idx] = xf
            try:
                value, g, state = model.evaluate(x)
            except (np.linalg.LinAlgError, DegenerateSpectrum):
                break
            if value > best_val:
                best_x, best_val = x.copy(), value
            c = _assemble(model, formulation, x, state, F1, F0, free, r)
            if c.bound < cert.bound:
                cert = c
    cert.meta["iterations"] = it
    point = FracPoint(best_x, formulation, best_val, cert.bound, it)
    return point, cert


# ------------------------------------------------------------------ bounds


def _trivial_complement(inst):
    # exclusion form with nothing to exclude: the only selection is [n]
    n = inst.n
    return DualCertificate("Mc", np.eye(n), np.zeros(n), inst.logdet_total, 0,
                           frozenset(), frozenset(), 0.0, np.zeros(n), inst.logdet_total)


def relaxation_bounds(inst, max_iter=2000, tol=1e-6):
    """Run all relaxations at the root and collect a bound report.

    Returns
    -------
    dict
        ``zR`` (best of the R certificate and its exclusion form), ``zM``,
        ``zMc``, ``best`` (their minimum), per-formulation gaps, iteration
        counts, certificates and relaxed points.
    """
    points, certs = {}, {}
    for form in FORMULATIONS:
        if form == "Mc" and inst.s == inst.n:
            certs[form] = _trivial_complement(inst)
            points[form] = FracPoint(np.zeros(inst.n), "Mc", inst.logdet_total,
                                     inst.logdet_total)
            continue
        points[form], certs[form] = frank_wolfe(inst, form, max_iter=max_iter, tol=tol)
    if inst.s < inst.n:
        certs["Rc"] = dual_from_gradient(inst, "Rc", 1.0 - points["R"].x)
    zR = min(certs["R"].bound, certs["Rc"].bound) if "Rc" in certs else certs["R"].bound
    z = {"zR": zR, "zM": certs["M"].bound, "zMc": certs["Mc"].bound}
    return {
        **z,
        "best": min(z.values()),
        "value": max(p.value for p in points.values()),
        "gaps": {f: points[f].gap for f in FORMULATIONS},
        "iterations": {f: points[f].iterations for f in FORMULATIONS},
        "certificates": certs,
        "points": points,
    }


def bound_report_json(report):
    """JSON-ready view of :func:`relaxation_bounds` output."""
    return {
        "zR": report["zR"],
        "zM": report["zM"],
        "zMc": report["zMc"],
        "best": report["best"],
        "gaps": report["gaps"],
        "iterations": report["iterations"],
        "certificates": {k: c.to_dict() for k, c in report["certificates"].items()},
        "note": "the M bound tends to be the tighter one when s <= n/2",
    }
