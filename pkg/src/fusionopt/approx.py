"""Approximation algorithms: 1-swap local search, greedy, product-weighted
subset sampling (with exact expectation) and its derandomization."""

import math
from dataclasses import dataclass, field

import numpy as np

from . import linalg, relax
from .errors import BadInit, InsufficientSupport
from .instance import Selection

SWAP_TOL = 1e-9
POSITIVE = 1e-9


@dataclass
class ApproxReport:
    method: str
    selection: Selection
    bound_checks: list = field(default_factory=list)
    steps: int = 0
    seed: int | None = None

    def to_dict(self):
        return {
            "method": self.method,
            "selection": self.selection.to_dict(),
            "bound_checks": [
                {"name": nm, "value": v, "satisfied": ok} for nm, v, ok in self.bound_checks
            ],
            "steps": self.steps,
            "seed": self.seed,
        }


# ------------------------------------------------------------- local search


def _swap_gains(inst, Lam, S, out):
    # (1 + beta)(1 - alpha) + gamma^2 - 1 for every (i in S, j outside)
    K = inst.B.T @ Lam @ inst.B
    a = np.diag(K)[S][:, None]
    b = np.diag(K)[out][None, :]
    g = K[np.ix_(S, out)]
    return b - a * b + g * g - a


def _first_improving(gains):
    hits = np.argwhere(gains > SWAP_TOL)
    # argwhere walks rows (i ascending) then columns (j ascending)
    return None if hits.size == 0 else tuple(hits[0])


def _fresh_inverse(inst, S):
    Bs = inst.B[:, S]
    X = np.eye(inst.d) + Bs @ Bs.T
    L = linalg.cholesky(X)
    Linv = np.linalg.inv(L)
    return Linv.T @ Linv


def local_search_swaps(inst, init=None):
    """Run :func:`local_search` and also return the number of swaps made."""
    n, s = inst.n, inst.s
    if init is None:
        S = list(greedy(inst).indices)
    else:
        S = sorted(int(i) for i in (init.indices if isinstance(init, Selection) else init))
        if len(set(S)) != s or not all(0 <= i < n for i in S):
            raise BadInit(f"initial set must hold {s} distinct indices in [0, {n})")
    if s == n:
        return Selection.of(inst, S), 0
    Bs = inst.B[:, S]
    tracker = linalg.RankOneTracker(np.eye(inst.d) + Bs @ Bs.T)
    swaps = 0
    while True:
        out = [j for j in range(n) if j not in set(S)]
        hit = _first_improving(_swap_gains(inst, tracker.inv, S, out))
        if hit is None:
            # confirm with an inverse computed from scratch
            Lam = _fresh_inverse(inst, S)
            hit = _first_improving(_swap_gains(inst, Lam, S, out))
            if hit is None:
                break
            tracker = linalg.RankOneTracker(np.eye(inst.d) + inst.B[:, S] @ inst.B[:, S].T)
        i, j = S[hit[0]], out[hit[1]]
        tracker.update(inst.B[:, j], +1)
        tracker.update(inst.B[:, i], -1)
        S = sorted(set(S) - {i} | {j})
        swaps += 1
    return Selection.of(inst, S), swaps


def local_search(inst, init=None):
    """1-swap local search with first-improvement acceptance.

    A swap of ``i`` (in) for ``j`` (out) is taken when
    ``beta - alpha*beta + gamma^2 - alpha > 1e-9`` with ``alpha = b_i' L b_i``,
    ``beta = b_j' L b_j``, ``gamma = b_i' L b_j`` and
    ``L = (I + sum_S b b')^{-1}``. Candidates are scanned with ``i``
    ascending in ``S`` and then ``j`` ascending outside.

    Parameters
    ----------
    inst : DdfInstance
    init : Selection or iterable of int, optional
        Starting set; defaults to the greedy solution.
    """
    return local_search_swaps(inst, init)[0]


def greedy(inst):
    """Add the point with the largest marginal gain ``log(1 + b' X^{-1} b)``
    until ``s`` are chosen; ties go to the smallest index."""
    Xinv = np.eye(inst.d)
    chosen = []
    avail = np.ones(inst.n, dtype=bool)
    for _ in range(inst.s):
        gain = np.einsum("ij,ij->j", inst.B, Xinv @ inst.B)
        gain[~avail] = -np.inf
        j = int(np.argmax(gain))
        chosen.append(j)
        avail[j] = False
        _, Xinv = linalg.rank_one_logdet_update(0.0, Xinv, inst.B[:, j], +1)
    return Selection.of(inst, chosen)


# ---------------------------------------------------------------- sampling


def _suffix_log_e(x, k):
    # T[i, t] = log e_t(x[i:]) for t <= k
    n = x.size
    T = np.full((n + 1, k + 1), -np.inf)
    T[:, 0] = 0.0
    with np.errstate(divide="ignore"):
        lx = np.log(x)
    for i in range(n - 1, -1, -1):
        T[i, 1:] = np.logaddexp(T[i + 1, 1:], lx[i] + T[i + 1, :-1])
    return T, lx


def draw_subsets(x, k, size, rng):
    """Draw ``size`` subsets of cardinality ``k`` with
    ``P(S) proportional to prod_{i in S} x_i``.

    Returns a boolean array of shape ``(size, n)``.
    """
    x = np.clip(np.asarray(x, dtype=float), 0.0, None)
    n = x.size
    if int(np.sum(x > 0)) < k:
        raise InsufficientSupport(f"need at least {k} positive weights")
    T, lx = _suffix_log_e(x, k)
    need = np.full(size, k)
    out = np.zeros((size, n), dtype=bool)
    rows = np.arange(size)
    for i in range(n):
        act = need > 0
        t = need
        num = lx[i] + T[i + 1, np.maximum(t - 1, 0)]
        den = T[i, t]
        with np.errstate(invalid="ignore"):
            p = np.where(act, np.exp(num - den), 0.0)
        p = np.clip(np.nan_to_num(p, nan=0.0), 0.0, 1.0)
        take = rng.random(size) < p
        out[rows, i] = take
        need = need - take
    return out


def _sampling_space(inst, point):
    """(weights, kernel, size, offset, complement) for a relaxed point."""
    if isinstance(point, relax.FracPoint) and point.formulation == "Mc":
        Minv = inst.U.T @ inst.U
        return np.asarray(point.x, float), 0.5 * (Minv + Minv.T), inst.n - inst.s, \
            inst.logdet_total, True
    x = point.x if isinstance(point, relax.FracPoint) else point
    return np.asarray(x, float), np.asarray(inst.M), inst.s, inst.logdet_C, False


def sample_subset(inst, point, seed=None):
    """One draw of the product-weighted sampler.

    ``point`` is a :class:`FracPoint` or a selection-space weight vector. For
    an exclusion-form point the excluded set is drawn and complemented.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    x, _, k, _, comp = _sampling_space(inst, point)
    if k == 0:
        return Selection.of(inst, [] if not comp else range(inst.n))
    mask = draw_subsets(x, k, 1, rng)[0]
    idx = np.flatnonzero(~mask if comp else mask)
    return Selection.of(inst, idx)


def _log_expect(K, x, k):
    r = np.sqrt(np.clip(x, 0.0, None))
    lam = np.clip(linalg.sym_eigvals(K * np.outer(r, r)), 0.0, None)
    return linalg.log_elem_sym_poly(lam, k) - linalg.log_elem_sym_poly(x, k)


def sampling_expectation_exact(inst, point):
    """``log E[det(C + sum_{S~} a a^T)]`` under the product-weighted sampler,
    through ``e_k`` of the spectrum of ``D^{1/2} K D^{1/2}``."""
    x, K, k, offset, _ = _sampling_space(inst, point)
    if k == 0:
        return offset
    if int(np.sum(x > 0)) < k:
        raise InsufficientSupport(f"need at least {k} positive weights")
    return offset + _log_expect(K, np.clip(x, 0.0, None), k)


def _conditional(K, x, chosen, free, r):
    # log E[det K_SS | chosen in S, S within chosen + free], None if undefined
    xf = x[free]
    if r > len(free) or (r > 0 and int(np.sum(xf > 0)) < r):
        return None
    base = 0.0
    if chosen:
        Kc = K[np.ix_(chosen, chosen)]
        base = linalg.logdet_spd(Kc)
        if r == 0:
            return base
        Kfc = K[np.ix_(free, chosen)]
        Sch = K[np.ix_(free, free)] - Kfc @ np.linalg.solve(Kc, Kfc.T)
    else:
        if r == 0:
            return 0.0
        Sch = K[np.ix_(free, free)]
    return base + _log_expect(0.5 * (Sch + Sch.T), xf, r)


def derandomize(inst, point):
    """Method of conditional expectations applied to the sampler.

    Indices are visited in order; each is fixed in or out according to
    which branch has the larger conditional expectation, which never drops
    below the unconditional expectation.
    """
    x, K, k, _, comp = _sampling_space(inst, point)
    x = np.clip(x, 0.0, None)
    n = inst.n
    if int(np.sum(x > 0)) < k:
        raise InsufficientSupport(f"need at least {k} positive weights")
    chosen, free = [], list(range(n))
    for j in range(n):
        r = k - len(chosen)
        rest = free[1:]
        if r == 0:
            break
        if r == len(free):
            chosen.extend(free)
            break
        # a zero weight makes "j in" an event of probability zero
        e_in = _conditional(K, x, chosen + [j], rest, r - 1) if x[j] > 0 else None
        e_out = _conditional(K, x, chosen, rest, r)
        if e_out is None or (e_in is not None and e_in >= e_out):
            chosen.append(j)
        free = rest
    chosen = sorted(chosen)
    if comp:
        chosen = sorted(set(range(n)) - set(chosen))
    return Selection.of(inst, chosen)


# -------------------------------------------------------------- guarantees


def local_search_guarantees(inst):
    """Worst-case gaps ``z* - z_LS`` for the local-search output."""
    sb, sig, d = inst.s_bar, inst.sigma_max, inst.d
    return {
        "d_form": d * math.log1p(sb * sig ** 2 / (d * (1.0 + sig))),
        "n_form": inst.n * math.log1p(sb * sig ** 2 / (inst.n * (1.0 + sig))),
        "sbar_log_sbar": sb * math.log(sb) if sb > 0 else 0.0,
    }


def min_positive(x, thresh=POSITIVE):
    x = np.asarray(x, dtype=float)
    pos = x[x > thresh]
    return float(np.min(pos)) if pos.size else 0.0


def sampling_guarantee(inst, formulation, x):
    """Worst-case gap between ``z*`` and the sampler's log-expectation for a
    relaxed point of the given formulation."""
    n, s = inst.n, inst.s
    if formulation == "R":
        xm = min_positive(x)
        return -n * math.log(xm) + (n - s) * math.log1p(inst.delta)
    k = s if formulation == "M" else n - s
    if k == 0:
        return 0.0
    return k * math.log(k / n) + math.log(math.comb(n, k))


def relaxation_gap_ceilings(inst, x_R=None):
    """Worst-case ``bound - z*`` for the three relaxations (min over the two
    available families). ``x_R`` enables the family that depends on the
    smallest positive entry of the R solution."""
    n, s = inst.n, inst.s
    sb, sig = inst.s_bar, inst.sigma_max
    r = n * math.log1p(sb * sig ** 2 / (n * (1.0 + sig)))
    if x_R is not None:
        r = min(r, sampling_guarantee(inst, "R", x_R))

    def m_ceiling(k, other):
        if k == 0:
            return 0.0
        a = k * math.log(k - (k - 1) / k * max(k - other, 0))
        b = k * math.log(k / n) + math.log(math.comb(n, k))
        return min(a, b)

    return {"R": r, "M": m_ceiling(s, n - s), "Mc": m_ceiling(n - s, s)}


# ------------------------------------------------------------------ driver


METHODS = ("local_search", "greedy", "sampling", "derandomized")


def approximate(inst, method="local_search", seed=0, init=None, relaxation=None,
                bounds=None):
    """Run one approximation method and check it against certified bounds.

    Parameters
    ----------
    method : {"local_search", "greedy", "sampling", "derandomized"}
    seed : int
        Sampler seed (recorded in the report for every method).
    relaxation : {"R", "M", "Mc"}, optional
        Relaxed point used by sampling/derandomization; defaults to ``M``
        when ``s <= n - s`` and ``Mc`` otherwise.
    bounds : dict, optional
        Output of :func:`relax.relaxation_bounds`, computed if absent.
    """
    if method not in METHODS:
        raise ValueError(f"method must be one of {METHODS}")
    bounds = bounds or relax.relaxation_bounds(inst)
    steps = 0
    if method == "local_search":
        sel, steps = local_search_swaps(inst, init)
    elif method == "greedy":
        sel, steps = greedy(inst), inst.s
    else:
        form = relaxation or ("M" if inst.s <= inst.n - inst.s else "Mc")
        point = bounds["points"][form]
        if method == "sampling":
            sel = sample_subset(inst, point, seed)
        else:
            sel = derandomize(inst, point)
        steps = inst.n
    checks = [(name, float(bounds[name]), sel.objective <= bounds[name] + 1e-6)
              for name in ("zR", "zM", "zMc")]
    checks.append(("gap_to_best_bound", float(bounds["best"] - sel.objective), True))
    return ApproxReport(method, sel, checks, steps, seed)
