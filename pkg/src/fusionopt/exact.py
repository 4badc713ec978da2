"""Exact solution by branch-and-bound.

Node bounds are the minimum of a linear cut pool (maximized exactly over
the node's completions) and dual certificates of the restricted relaxations.
Probing at the root turns certificates into variable fixings, cardinality
cuts and two-literal disjunctions that every optimal solution satisfies.
"""

import heapq
import itertools
import math
import time
from dataclasses import dataclass, field, asdict

import numpy as np

from . import approx, linalg, relax
from .errors import Contradiction, InfeasibleFixing, TooLarge
from .instance import Selection

Z_KINDS = ("grad_R", "grad_M", "submod_1", "submod_2")
CARD_KINDS = ("card_le", "card_ge")
FIX_MARGIN = 1e-9
BRUTE_LIMIT = 10 ** 7


# -------------------------------------------------------------------- cuts


@dataclass(frozen=True, eq=False)
class LinearCut:
    """``z <= c0 + c'x`` for the bounding kinds, where ``z = objective -
    logdet C``; for ``card_le`` it reads ``c'x <= c0`` and for ``card_ge``
    ``c'x >= c0`` with ``c`` the indicator of ``origin``."""

    kind: str
    c0: float
    c: np.ndarray
    origin: tuple

    def rhs(self, x):
        return self.c0 + float(self.c @ np.asarray(x, dtype=float))

    def satisfied(self, x, z=None, tol=1e-7):
        x = np.asarray(x, dtype=float)
        if self.kind == "card_le":
            return float(self.c @ x) <= self.c0 + tol
        if self.kind == "card_ge":
            return float(self.c @ x) >= self.c0 - tol
        return z <= self.rhs(x) + tol


@dataclass(frozen=True)
class Disjunction:
    """``sum_{S1} x <= |S1| - 1`` or ``sum_{S0} x >= 1``."""

    S1: frozenset
    S0: frozenset

    def satisfied(self, S):
        S = set(S)
        return len(self.S1 & S) <= len(self.S1) - 1 or len(self.S0 & S) >= 1


def relax_logdet(inst, S):
    """``logdet(I + sum_{i in S} b_i b_i^T)``."""
    Bs = inst.B[:, list(S)]
    return linalg.logdet_spd(np.eye(inst.d) + Bs @ Bs.T)


def _gram_inverse(inst, S):
    Bs = inst.B[:, list(S)]
    X = np.eye(inst.d) + Bs @ Bs.T
    L = linalg.cholesky(X)
    W = np.linalg.solve(L, inst.B)
    return 2.0 * float(np.sum(np.log(np.diag(L)))), np.sum(W * W, axis=0)


def gradient_cuts(inst, S):
    """Linearizations of the two concave relaxations at ``1_S``.

    Returns ``(grad_R, grad_M)``; the second is only available when
    ``|S| = s`` and is ``None`` otherwise.
    """
    S = tuple(sorted(int(i) for i in S))
    mask = np.zeros(inst.n, dtype=bool)
    mask[list(S)] = True
    z, g = _gram_inverse(inst, S)
    cut_r = LinearCut("grad_R", z - float(np.sum(g[mask])), g, S)
    cut_m = None
    if len(S) == inst.s:
        X = (inst.V * mask) @ inst.V.T
        lam, Qv = linalg.sym_eig(X)
        lam = np.clip(lam, 0.0, None)
        beta = relax._f_subgrad_eig(lam, inst.s)
        W = Qv.T @ inst.V
        w = beta @ (W * W)
        cut_m = LinearCut("grad_M", relax.f_value(lam, inst.s) - inst.s, w, S)
    return cut_r, cut_m


def submodular_cuts(inst, S):
    """The two classical inequalities for a monotone submodular function,
    written for ``z(T) = logdet(I + sum_T b b^T)`` around ``S``."""
    S = tuple(sorted(int(i) for i in S))
    mask = np.zeros(inst.n, dtype=bool)
    mask[list(S)] = True
    zS, hS = _gram_inverse(inst, S)
    _, hN = _gram_inverse(inst, range(inst.n))
    # marginal gains: adding i to S, removing i from N or from S
    add_S = np.log1p(hS)
    with np.errstate(divide="ignore"):
        rem_N = -np.log1p(-np.minimum(hN, 1.0))
        rem_S = np.where(mask, -np.log1p(-np.minimum(np.where(mask, hS, 0.0), 1.0)), 0.0)
    add_0 = np.log1p(np.sum(inst.B * inst.B, axis=0))
    c1 = np.where(mask, rem_N, add_S)
    c2 = np.where(mask, rem_S, add_0)
    cut1 = LinearCut("submod_1", zS - float(np.sum(rem_N[mask])), c1, S)
    cut2 = LinearCut("submod_2", zS - float(np.sum(rem_S[mask])), c2, S)
    return cut1, cut2


def card_le(n, S1):
    c = np.zeros(n)
    c[list(S1)] = 1.0
    return LinearCut("card_le", float(len(S1) - 1), c, tuple(sorted(S1)))


def card_ge(n, S0):
    c = np.zeros(n)
    c[list(S0)] = 1.0
    return LinearCut("card_ge", 1.0, c, tuple(sorted(S0)))


class CutPool:
    """Append-only store of bounding cuts kept as a dense matrix."""

    def __init__(self, n):
        self.n = n
        self.cuts = []
        self._C = np.zeros((0, n))
        self._c0 = np.zeros(0)

    def __len__(self):
        return len(self.cuts)

    def add(self, *cuts):
        new = [c for c in cuts if c is not None and c.kind in Z_KINDS]
        if new:
            self.cuts.extend(new)
            self._C = np.vstack([self._C] + [c.c[None, :] for c in new])
            self._c0 = np.concatenate([self._c0, [c.c0 for c in new]])
        return len(new)

    def bound(self, logdet_C, s, fixed_in=(), fixed_out=()):
        if not self.cuts:
            return math.inf
        fixed_in, fixed_out = list(fixed_in), list(fixed_out)
        free = np.ones(self.n, dtype=bool)
        free[fixed_in + fixed_out] = False
        r = s - len(fixed_in)
        val = self._c0 + self._C[:, fixed_in].sum(axis=1)
        if r > 0:
            top = -np.partition(-self._C[:, free], r - 1, axis=1)[:, :r]
            val = val + top.sum(axis=1)
        return logdet_C + float(np.min(val))


def cut_pool_bound(inst, pool, fixed_in=(), fixed_out=()):
    """``logdet C + min over cuts of max over node completions``.

    ``pool`` is a :class:`CutPool` or an iterable of cuts.
    """
    if not isinstance(pool, CutPool):
        p = CutPool(inst.n)
        p.add(*pool)
        pool = p
    return pool.bound(inst.logdet_C, inst.s, fixed_in, fixed_out)


# ----------------------------------------------------------------- probing


def probe_fix(inst, cert, z_lb):
    """Fixings implied by one certificate and a lower bound.

    Returns ``(to_zero, to_one)`` as sorted lists of selection indices.
    """
    fixed = cert.fixed_in | cert.fixed_out
    to_zero, to_one = [], []
    for j in range(inst.n):
        if j in fixed:
            continue
        if cert.bound + cert.shift_in(j) < z_lb - FIX_MARGIN:
            to_zero.append(j)
        if cert.bound + cert.shift_out(j) < z_lb - FIX_MARGIN:
            to_one.append(j)
    _check_fixings(inst, set(to_one), set(to_zero))
    return to_zero, to_one


def _check_fixings(inst, ones, zeros):
    if ones & zeros:
        raise Contradiction(f"indices {sorted(ones & zeros)} fixed both ways")
    if len(ones) > inst.s or inst.n - len(zeros) < inst.s:
        raise Contradiction("fixings leave no feasible selection")


@dataclass
class ProbeResult:
    cuts: list = field(default_factory=list)
    disjunctions: list = field(default_factory=list)
    counts: dict = field(default_factory=lambda: dict.fromkeys("abcde", 0))
    restricted_solves: int = 0

    @property
    def fix_one(self):
        return sorted(c.origin[0] for c in self.cuts if c.kind == "card_ge" and len(c.origin) == 1)

    @property
    def fix_zero(self):
        return sorted(c.origin[0] for c in self.cuts if c.kind == "card_le" and len(c.origin) == 1)


def probe_pairs(inst, point, cert, z_lb, xi0=0.05, xi1=0.95, pair_budget=None,
                fw_iters=200, fixed_in=(), fixed_out=()):
    """Refute unlikely restricted problems with at most two fixed literals.

    Candidates to force in are indices with ``x_i <= xi0`` or a negative
    force-in shift; candidates to force out have ``x_i >= xi1`` or a
    negative force-out shift. Each restricted problem ``(S1, S0)`` is first
    tested with the closed-form certificate shift and, when inconclusive,
    with a warm-started restricted Frank-Wolfe run (at most ``pair_budget``
    of those). A refuted problem yields the matching artifact:

    ``a``  ``S0 = {j}``: ``x_j >= 1`` (card_ge)
    ``b``  ``S1 = {j}``: ``x_j <= 0`` (card_le)
    ``c``  ``S0 = {i, k}``: ``x_i + x_k >= 1``
    ``d``  ``S1 = {i, k}``: ``x_i + x_k <= 1``
    ``e``  ``S1 = {i}, S0 = {k}``: disjunction ``x_i <= 0 or x_k >= 1``
    """
    n = inst.n
    res = ProbeResult()
    pair_budget = 3 * n if pair_budget is None else pair_budget
    base_in, base_out = set(fixed_in), set(fixed_out)
    xs = point.selection_x
    free = [j for j in range(n) if j not in base_in | base_out]
    in_cand = [j for j in free if xs[j] <= xi0 or cert.shift_in(j) < 0.0]
    out_cand = [j for j in free if xs[j] >= xi1 or cert.shift_out(j) < 0.0]
    thresh = z_lb - FIX_MARGIN

    probes = [("a", (), (j,)) for j in out_cand] + [("b", (j,), ()) for j in in_cand]
    probes += [("c", (), p) for p in itertools.combinations(out_cand, 2)]
    probes += [("d", p, ()) for p in itertools.combinations(in_cand, 2)]
    probes += [("e", (i,), (k,)) for i in in_cand for k in out_cand if i != k]

    fixed1, fixed0 = set(), set()
    undecided = []
    for setting, S1, S0 in probes:
        pred = cert.restricted_bound(S1, S0)
        if pred < thresh:
            _emit(res, n, setting, S1, S0, fixed1, fixed0)
        else:
            undecided.append((pred, setting, S1, S0))
    undecided.sort(key=lambda t: t[0])
    for pred, setting, S1, S0 in undecided:
        if res.restricted_solves >= pair_budget:
            break
        if set(S1) & fixed0 or set(S0) & fixed1:
            continue  # already excluded by an earlier single fixing
        if set(S1) & fixed1 or set(S0) & fixed0:
            continue  # would just restate a fixing
        try:
            _, c = relax.frank_wolfe(inst, cert.formulation, base_in | set(S1),
                                     base_out | set(S0), max_iter=fw_iters, x0=point.x,
                                     stop_below=thresh)
            zb = c.bound
        except InfeasibleFixing:
            zb = -math.inf
        res.restricted_solves += 1
        if zb < thresh:
            _emit(res, n, setting, S1, S0, fixed1, fixed0)
    _check_fixings(inst, base_in | fixed1, base_out | fixed0)
    return res


def _emit(res, n, setting, S1, S0, fixed1, fixed0):
    res.counts[setting] += 1
    if setting == "a":
        res.cuts.append(card_ge(n, S0))
        fixed1.update(S0)
    elif setting == "b":
        res.cuts.append(card_le(n, S1))
        fixed0.update(S1)
    elif setting == "c":
        res.cuts.append(card_ge(n, S0))
    elif setting == "d":
        res.cuts.append(card_le(n, S1))
    else:
        res.disjunctions.append(Disjunction(frozenset(S1), frozenset(S0)))


def _as_disjunctions(cuts, disjunctions):
    out = list(disjunctions)
    for c in cuts:
        if c.kind == "card_le":
            out.append(Disjunction(frozenset(c.origin), frozenset()))
        elif c.kind == "card_ge":
            out.append(Disjunction(frozenset(), frozenset(c.origin)))
    return out


def propagate(n, s, fixed_in, fixed_out, rules):
    """Close ``(fixed_in, fixed_out)`` under the disjunctive rules.

    Returns the enlarged sets, or ``None`` when the node is infeasible.
    """
    fin, fout = set(fixed_in), set(fixed_out)
    changed = True
    while changed:
        changed = False
        for rule in rules:
            # literals still able to satisfy the rule
            open1 = [i for i in rule.S1 if i not in fin]
            open0 = [i for i in rule.S0 if i not in fout]
            live1 = [i for i in open1 if i not in fout]
            live0 = [i for i in open0 if i not in fin]
            sat = any(i in fout for i in rule.S1) or any(i in fin for i in rule.S0)
            if sat:
                continue
            if not live1 and not live0:
                return None
            if len(live1) + len(live0) == 1:
                if live1:
                    fout.add(live1[0])
                else:
                    fin.add(live0[0])
                changed = True
        if fin & fout or len(fin) > s or n - len(fout) < s:
            return None
    return fin, fout


# ----------------------------------------------------------- branch-and-bound


@dataclass
class BnbConfig:
    time_limit: float | None = None
    gap_tol: float = 1e-6
    node_limit: int | None = None
    submodular_cuts: bool = True
    optimality_cuts: bool = True
    root_iters: int = 2000
    node_iters: int = 200
    probe_iters: int = 200
    xi0: float = 0.05
    xi1: float = 0.95
    pair_budget: int | None = None
    dive_every: int = 50

    @classmethod
    def from_dict(cls, d):
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self):
        return asdict(self)


@dataclass
class BnbNode:
    fixed_in: frozenset
    fixed_out: frozenset
    upper_bound: float
    depth: int
    points: dict = field(default_factory=dict)
    certs: list = field(default_factory=list)


@dataclass
class BnbResult:
    incumbent: Selection
    global_bound: float
    nodes_explored: int
    cut_counts: dict
    fixings: dict
    wall_time: float
    solved: bool
    status: str = "optimal"
    bound_trajectory: list = field(default_factory=list)
    pool_size: int = 0

    @property
    def mip_gap(self):
        return self.global_bound - self.incumbent.objective

    def to_dict(self):
        return {
            "incumbent": self.incumbent.to_dict(),
            "global_bound": self.global_bound,
            "mip_gap": self.mip_gap,
            "nodes_explored": self.nodes_explored,
            "cut_counts": self.cut_counts,
            "fixings": self.fixings,
            "wall_time": self.wall_time,
            "solved": self.solved,
            "status": self.status,
            "pool_size": self.pool_size,
        }


class _Solver:
    def __init__(self, inst, config):
        self.inst = inst
        self.cfg = config
        self.pool = CutPool(inst.n)
        self.rules = []
        self.incumbent = None
        self.seen = set()
        self.forms = ["R", "M"] + (["Mc"] if inst.n - inst.s < inst.s else [])

    # incumbent handling ------------------------------------------------
    def offer(self, S):
        S = tuple(sorted(int(i) for i in S))
        if S in self.seen:
            return
        self.seen.add(S)
        sel = Selection.of(self.inst, S)
        if self.incumbent is None or sel.objective > self.incumbent.objective:
            self.incumbent = sel
        self.add_cuts(S)

    def add_cuts(self, S):
        self.pool.add(*gradient_cuts(self.inst, S))
        if self.cfg.submodular_cuts:
            self.pool.add(*submodular_cuts(self.inst, S))

    def threshold(self):
        return self.incumbent.objective + self.cfg.gap_tol

    def round_point(self, point, fin, fout):
        xs = point.selection_x.copy()
        r = self.inst.s - len(fin)
        xs[list(fin)] = -np.inf
        xs[list(fout)] = -np.inf
        order = np.argsort(-xs, kind="stable")
        self.offer(sorted(fin) + [int(i) for i in order[:r]])

    # node bounds -------------------------------------------------------
    def node_bound(self, node, parent=None):
        inst = self.inst
        fin, fout = node.fixed_in, node.fixed_out
        r = inst.s - len(fin)
        if r == 0 or r == inst.n - len(fin) - len(fout):
            S = fin if r == 0 else set(range(inst.n)) - fout
            self.offer(S)
            return Selection.of(inst, S).objective
        best = self.pool.bound(inst.logdet_C, inst.s, fin, fout)
        if parent is not None:
            for c in parent.certs:
                best = min(best, c.bound_for(fin, fout))
        stop = self.threshold()
        if best <= stop:
            return best
        for form in self.forms:
            x0 = parent.points.get(form) if parent is not None else None
            pt, cert = relax.frank_wolfe(inst, form, fin, fout, max_iter=self.cfg.node_iters,
                                         x0=x0, stop_below=stop)
            node.points[form] = pt.x
            node.certs.append(cert)
            self.round_point(pt, fin, fout)
            best = min(best, cert.bound)
            stop = self.threshold()
            if best <= stop:
                break
        return best

    def branch_index(self, node):
        free = [j for j in range(self.inst.n) if j not in node.fixed_in | node.fixed_out]
        if not node.certs:
            return free[0]
        cert = min(node.certs, key=lambda c: c.bound)
        score = np.abs(cert.w - cert.nu)
        return max(free, key=lambda j: (score[j], -j))


def brute_force(inst):
    """Exact maximizer by enumerating every ``s``-subset (ties: the
    lexicographically first).

    Raises
    ------
    TooLarge
        If there are more than 1e7 subsets.
    """
    total = math.comb(inst.n, inst.s)
    if total > BRUTE_LIMIT:
        raise TooLarge(f"C({inst.n}, {inst.s}) = {total} subsets exceeds {BRUTE_LIMIT}")
    best_val, best_set = -math.inf, None
    it = itertools.combinations(range(inst.n), inst.s)
    M = inst.M
    while True:
        chunk = np.array(list(itertools.islice(it, 50000)), dtype=int)
        if chunk.size == 0:
            break
        chunk = chunk.reshape(len(chunk), inst.s)
        _, ld = np.linalg.slogdet(M[chunk[:, :, None], chunk[:, None, :]])
        k = int(np.argmax(ld))
        if ld[k] > best_val:
            best_val, best_set = float(ld[k]), chunk[k]
    return Selection.of(inst, best_set.tolist())


def solve_bnb(inst, config=None):
    """Branch-and-bound to a certified optimum (or the best found within the
    limits in ``config``)."""
    cfg = config or BnbConfig()
    t0 = time.perf_counter()
    solver = _Solver(inst, cfg)
    n, s = inst.n, inst.s
    counts = dict.fromkeys("abcde", 0)
    fixings = {"one": [], "zero": []}

    if s == n:
        sel = Selection.of(inst, range(n))
        return BnbResult(sel, sel.objective, 1, counts, fixings, time.perf_counter() - t0,
                         True, bound_trajectory=[sel.objective])

    solver.offer(approx.local_search(inst).indices)

    # root relaxations
    root = BnbNode(frozenset(), frozenset(), math.inf, 0)
    points = {}
    for form in relax.FORMULATIONS:
        pt, cert = relax.frank_wolfe(inst, form, max_iter=cfg.root_iters)
        points[form] = pt
        root.points[form] = pt.x
        root.certs.append(cert)
        solver.round_point(pt, (), ())
    root.certs.append(relax.dual_from_gradient(inst, "Rc", 1.0 - points["R"].x))
    root_bound = min(c.bound for c in root.certs)

    fin, fout = set(), set()
    if cfg.optimality_cuts:
        z_lb = solver.incumbent.objective
        for cert in root.certs:
            zero, one = probe_fix(inst, cert, z_lb)
            fin.update(one)
            fout.update(zero)
        _check_fixings(inst, fin, fout)
        best_cert = min(root.certs[:3], key=lambda c: c.bound)
        pr = probe_pairs(inst, points[best_cert.formulation], best_cert, z_lb, cfg.xi0, cfg.xi1,
                         cfg.pair_budget, cfg.probe_iters, fin, fout)
        for k, v in pr.counts.items():
            counts[k] += v
        solver.rules = _as_disjunctions(pr.cuts, pr.disjunctions)
        prop = propagate(n, s, fin, fout, solver.rules)
        if prop is None:
            raise Contradiction("root probing left no feasible selection")
        fin, fout = prop
        fixings = {"one": sorted(fin), "zero": sorted(fout)}

    trajectory = [root_bound]
    nodes = 0
    heap = []
    tick = itertools.count()
    global_bound = root_bound
    status = "optimal"

    def push(node):
        heapq.heappush(heap, (-node.upper_bound, next(tick), node))

    root.fixed_in, root.fixed_out = frozenset(fin), frozenset(fout)
    if fin or fout:
        child = BnbNode(root.fixed_in, root.fixed_out, root_bound, 0)
        child.upper_bound = min(root_bound, solver.node_bound(child, root))
        root = child
    else:
        root.upper_bound = min(root_bound, solver.pool.bound(inst.logdet_C, s))
    push(root)

    while heap:
        top = -heap[0][0]
        global_bound = min(global_bound, max(top, solver.incumbent.objective))
        trajectory.append(global_bound)
        if top <= solver.threshold():
            break
        if cfg.node_limit is not None and nodes >= cfg.node_limit:
            status = "node_limit"
            break
        if cfg.time_limit is not None and time.perf_counter() - t0 > cfg.time_limit:
            status = "time_limit"
            break
        if cfg.dive_every and nodes and nodes % cfg.dive_every == 0:
            k = max(range(len(heap)), key=lambda i: (heap[i][2].depth, -heap[i][1]))
            _, _, node = heap[k]
            heap[k] = heap[-1]
            heap.pop()
            heapq.heapify(heap)
        else:
            _, _, node = heapq.heappop(heap)
        nodes += 1
        if node.upper_bound <= solver.threshold():
            continue
        j = solver.branch_index(node)
        for fin_c, fout_c in ((node.fixed_in | {j}, node.fixed_out),
                              (node.fixed_in, node.fixed_out | {j})):
            prop = propagate(n, s, fin_c, fout_c, solver.rules)
            if prop is None:
                continue
            child = BnbNode(frozenset(prop[0]), frozenset(prop[1]), node.upper_bound,
                            node.depth + 1)
            child.upper_bound = min(node.upper_bound, solver.node_bound(child, node))
            if child.upper_bound > solver.threshold():
                push(child)
    else:
        global_bound = solver.incumbent.objective
        trajectory.append(global_bound)

    inc = solver.incumbent
    global_bound = max(min(global_bound, trajectory[-1]), inc.objective)
    solved = status == "optimal"
    return BnbResult(inc, global_bound, nodes, counts, fixings, time.perf_counter() - t0,
                     solved, status, trajectory, len(solver.pool))
