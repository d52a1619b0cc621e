"""ROC-guided survival trees: growth, concordance-complexity pruning, prediction.

Splits act on the transformed covariates.  A subject's node at time ``u``
is found by routing ``values[k(u), i]``, its transformed covariate at the
grid time nearest to ``u``.  The same rule places new subjects.
"""

from __future__ import annotations

import warnings
import weakref
from dataclasses import dataclass, field

import numpy as np

from . import _engine
from .concordance import ConcordanceReport, _key_from_fs, icon, icon_value
from .kernels import BandwidthPolicy, NodeHazardCurve, clamp_time, epanechnikov, event_kernel_matrix, hazard_ratio
from .survival_data import CovariatePath, DataError, TransformedDataset, transform

__all__ = [
    "SplitRule",
    "PartitionTree",
    "PruneSequence",
    "CVResult",
    "grow",
    "prune_sequence",
    "select_by_cv",
    "predict_hazard",
    "predict_survival",
]

CRITERIA = ("delta_icon", "global_icon")


@dataclass(frozen=True)
class SplitRule:
    """Left child is ``{x[coordinate] <= threshold}``."""

    coordinate: int
    threshold: float


@dataclass(eq=False)
class PartitionTree:
    """Binary partition of the transformed covariate space.

    Nodes are stored in breadth-first label order.  ``left[j] == -1`` marks
    a leaf.  ``f_star`` and ``S_star`` hold every node's kernel event
    density and risk mass on the grid, so any pruned subtree keeps its
    leaf hazard curves without refitting.  Ensemble members may omit them.
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    parent: np.ndarray
    n_base: np.ndarray
    f_star: np.ndarray | None
    S_star: np.ndarray | None
    h: np.ndarray
    tdata: TransformedDataset
    policy: BandwidthPolicy = field(default_factory=BandwidthPolicy)
    n_min: float = 15
    criterion: str = "delta_icon"
    seed: int | None = None
    _counting: tuple | None = field(default=None, repr=False)

    @property
    def n_nodes(self) -> int:
        return self.left.size

    @property
    def leaves(self) -> np.ndarray:
        return np.flatnonzero(self.left < 0)

    @property
    def n_leaves(self) -> int:
        return int(np.sum(self.left < 0))

    @property
    def grid(self):
        return self.tdata.grid

    @property
    def bandwidth(self) -> float:
        return float(self.h[0])

    def rules(self) -> dict:
        return {int(j): SplitRule(int(self.feature[j]), float(self.threshold[j])) for j in np.flatnonzero(self.left >= 0)}

    def apply(self, points) -> np.ndarray:
        """Node id reached by each point of shape ``(..., p)``."""
        pts = np.asarray(points, float)
        flat = np.ascontiguousarray(pts.reshape(-1, pts.shape[-1]))
        ids = _engine.route(flat, self.feature, self.threshold, self.left, self.right)
        return ids.reshape(pts.shape[:-1])

    def leaf_position(self) -> np.ndarray:
        """Map node id to position in :attr:`leaves` (``-1`` for internal nodes)."""
        pos = np.full(self.n_nodes, -1, np.int64)
        pos[self.leaves] = np.arange(self.n_leaves)
        return pos

    def stats(self):
        """``(f_star, S_star)``; raises for ensemble members grown without them."""
        if self.f_star is None:
            raise ValueError("tree was grown without node statistics")
        return self.f_star, self.S_star

    def hazard_curve(self, node: int) -> NodeHazardCurve:
        f, S = self.stats()
        f, S = f[node], S[node]
        return NodeHazardCurve(self.grid.times, hazard_ratio(f, S), f, S, float(self.h[node]))

    def leaf_curves(self) -> list:
        return [self.hazard_curve(j) for j in self.leaves]

    def icon_value(self) -> float:
        f, S = self.stats()
        lv = self.leaves
        return icon_value(f[lv], S[lv], self.grid.weights)

    def icon(self) -> ConcordanceReport:
        f, S = self.stats()
        lv = self.leaves
        return icon(f[lv], S[lv], self.grid)

    def depth(self) -> np.ndarray:
        d = np.zeros(self.n_nodes, np.int64)
        for j in range(1, self.n_nodes):
            d[j] = d[self.parent[j]] + 1
        return d

    def collapse(self, nodes) -> "PartitionTree":
        """Subtree in which every node of ``nodes`` becomes a leaf, relabeled breadth-first."""
        stop = set(int(j) for j in np.atleast_1d(nodes))
        order = [0]
        head = 0
        while head < len(order):
            j = order[head]
            head += 1
            if self.left[j] >= 0 and j not in stop:
                order.extend((int(self.left[j]), int(self.right[j])))
        old = np.asarray(order, np.int64)
        new_id = np.full(self.n_nodes, -1, np.int64)
        new_id[old] = np.arange(old.size)
        internal = (self.left[old] >= 0) & ~np.isin(old, list(stop))
        left = np.where(internal, new_id[np.maximum(self.left[old], 0)], -1)
        right = np.where(internal, new_id[np.maximum(self.right[old], 0)], -1)
        parent = np.where(old == 0, -1, new_id[np.maximum(self.parent[old], 0)])
        return PartitionTree(
            feature=np.where(internal, self.feature[old], -1),
            threshold=np.where(internal, self.threshold[old], 0.0),
            left=left, right=right, parent=parent,
            n_base=self.n_base[old], h=self.h[old],
            f_star=None if self.f_star is None else self.f_star[old],
            S_star=None if self.S_star is None else self.S_star[old],
            tdata=self.tdata, policy=self.policy, n_min=self.n_min, criterion=self.criterion, seed=self.seed,
        )

    def counting_tables(self):
        """Event times ``u``, their grid anchors, and per-leaf event and at-risk counts.

        Uses the full training sample with unit weights, as in the
        counting-process survival formula.
        """
        if self._counting is None:
            td = self.tdata
            Y, delta = td.source.Y, td.source.delta
            u = np.unique(Y[delta == 1])
            ku = td.grid.nearest_index(u).astype(np.int64)
            pos = self.leaf_position()
            leaf_grid = pos[self.apply(td.values)]
            L = self.n_leaves
            d = np.zeros((u.size, L))
            r = np.zeros((u.size, L))
            ev = np.flatnonzero(delta == 1)
            e_of = np.searchsorted(u, Y[ev])
            np.add.at(d, (e_of, leaf_grid[td.anchor[ev], ev]), 1.0)
            desc = np.argsort(-Y, kind="stable").astype(np.int64)
            r = _engine.at_risk_leaf_counts(u[::-1].copy(), ku[::-1].copy(), Y, desc, leaf_grid.astype(np.int64),
                                            np.ones(Y.size), L)[::-1]
            self._counting = (u, ku, d, np.ascontiguousarray(r))
        return self._counting


# -- growth -----------------------------------------------------------------


_SHARED = weakref.WeakKeyDictionary()


def _shared_arrays(tdata: TransformedDataset, h: float):
    """Transposed covariates and kernel weights, cached per dataset for ensembles."""
    per = _SHARED.setdefault(tdata, {})
    if "X" not in per:
        n, q, p = tdata.n, tdata.q, tdata.p
        per["X"] = (np.ascontiguousarray(tdata.baseline.T), np.ascontiguousarray(tdata.event_values.T),
                    np.ascontiguousarray(tdata.values.reshape(q * n, p).T))
    if h not in per:
        Kw0 = event_kernel_matrix(tdata.source, tdata.grid.times, h)
        per[h] = (Kw0, np.ascontiguousarray(Kw0.T))
    return per["X"] + per[h]


class _GrowContext:
    def __init__(self, tdata: TransformedDataset, policy: BandwidthPolicy, weights, bandwidth):
        data = tdata.source
        self.tdata = tdata
        self.policy = policy
        self.n, self.q, self.p = tdata.n, tdata.q, tdata.p
        self.w = np.ones(self.n) if weights is None else np.ascontiguousarray(weights, dtype=float)
        if self.w.shape != (self.n,) or np.any(self.w < 0):
            raise ValueError("weights must be a nonnegative vector of length n")
        self.Y = data.Y
        self.delta = data.delta
        self.s = data.horizon
        self.h = policy.global_bandwidth(data) if bandwidth is None else float(bandwidth)
        # transposed copies for the compiled split scan
        self.X0T, self.XeT, self.XgT, self.Kw0, self.Kw = _shared_arrays(tdata, self.h)
        self.omega = tdata.grid.weights
        self.times = tdata.grid.times

    def kernel_rows(self, h, idx):
        """``(q, len(idx))`` event kernel weights at bandwidth ``h``."""
        tc = clamp_time(self.times, h, self.s)
        d = (tc[:, None] - self.Y[None, idx]) / h
        return epanechnikov(d) / h * self.delta[None, idx]

    def node_stats(self, node):
        """Raw (unnormalized) f and S on the grid, plus the bandwidth used."""
        ev = node.ev_idx
        if self.policy.adaptive:
            h = self.policy.node_bandwidth(self.w[node.ymem_idx].sum(), self.s)
            f = self.kernel_rows(h, ev) @ self.w[ev]
        else:
            h = self.h
            f = self.Kw0[:, ev] @ self.w[ev]
        g = node.grid_idx
        S = np.bincount(g // self.n, weights=self.w[g % self.n], minlength=self.q)
        return f, S, h


@dataclass
class _Node:
    base_idx: np.ndarray
    ymem_idx: np.ndarray
    ev_idx: np.ndarray
    grid_idx: np.ndarray
    parent: int
    f: np.ndarray = None
    S: np.ndarray = None
    h: float = 0.0
    n_base: float = 0.0

    def split(self, ctx: _GrowContext, c: int, thr: float):
        go = []
        for idx, X in ((self.base_idx, ctx.X0T), (self.ymem_idx, ctx.XeT), (self.ev_idx, ctx.XeT),
                       (self.grid_idx, ctx.XgT)):
            go.append(X[c, idx] <= thr)
        mk = lambda side: [idx[m if side else ~m] for idx, m in zip(
            (self.base_idx, self.ymem_idx, self.ev_idx, self.grid_idx), go)]
        return mk(True), mk(False)


def _cmp(a, b):
    return (a > b) + 0.5 * (a == b)


def _global_gain(fL, SL, fP, SP, fO, SO, omega):
    """ICON gain of replacing the parent leaf by two children, for every threshold.

    ``fL``/``SL`` are (q, J) left-child masses, ``fO``/``SO`` (M, q) the other
    current leaves.  Pair terms not involving the parent or children cancel.
    """
    fR = fP[:, None] - fL
    SR = SP[:, None] - SL
    kL, kR, kP = _key_from_fs(fL, SL), _key_from_fs(fR, SR), _key_from_fs(fP, SP)[:, None]
    fo, so, ko = fO[:, :, None], SO[:, :, None], _key_from_fs(fO, SO)[:, :, None]

    def cross(f, S, k):
        return np.sum(f[None] * so * _cmp(k[None], ko) + fo * S[None] * _cmp(ko, k[None]), axis=0)

    after = cross(fL, SL, kL) + cross(fR, SR, kR) + fL * SR * _cmp(kL, kR) + fR * SL * _cmp(kR, kL)
    after += 0.5 * (fL * SL + fR * SR)
    P1, S1 = fP[:, None], SP[:, None]
    before = cross(P1, S1, kP) + 0.5 * P1 * S1
    D = (fP + fO.sum(axis=0)) * (SP + SO.sum(axis=0))
    ok = D > 0
    if not np.any(ok):
        return np.zeros(fL.shape[1])
    gain = (after[ok] - before[ok]) / D[ok][:, None]
    return omega[ok] @ gain / omega[ok].sum()


def _adaptive_delta(ctx: _GrowContext, node: _Node, c, thr, nL, SL, SP):
    """Within-node increment with each child's own bandwidth."""
    fP = node.f
    den = fP * SP
    ok = den > 0
    out = np.zeros(thr.size)
    xy = ctx.XeT[c, node.ymem_idx]
    wy = ctx.w[node.ymem_idx]
    xe = ctx.XeT[c, node.ev_idx]
    we = ctx.w[node.ev_idx]
    for j, t in enumerate(thr):
        hL = ctx.policy.node_bandwidth(wy[xy <= t].sum(), ctx.s)
        hR = ctx.policy.node_bandwidth(wy[xy > t].sum(), ctx.s)
        inL = xe <= t
        fL = ctx.kernel_rows(hL, node.ev_idx[inL]) @ we[inL]
        fR = ctx.kernel_rows(hR, node.ev_idx[~inL]) @ we[~inL]
        SLj = SL[:, j]
        SR = SP - SLj
        out[j] = np.sum(ctx.omega[ok] * np.abs(fL * SR - fR * SLj)[ok] / den[ok])
    return out


def _best_split(ctx: _GrowContext, node: _Node, coords, criterion, half_min, others):
    if criterion == "delta_icon" and not ctx.policy.adaptive:
        c, t, s = _engine.best_split_delta(
            coords, node.base_idx, node.ev_idx, node.grid_idx, ctx.n, ctx.X0T, ctx.XeT, ctx.XgT, ctx.w, ctx.Kw,
            ctx.omega, half_min, _engine.MAX_THRESHOLDS)
        return int(c), float(t), float(s)
    best = (-1, 0.0, -np.inf)
    for c in coords:
        thr, nL, fL, SL, nP, fP, SP = _engine.coord_stats(
            int(c), node.base_idx, node.ev_idx, node.grid_idx, ctx.n, ctx.X0T, ctx.XeT, ctx.XgT, ctx.w, ctx.Kw,
            _engine.MAX_THRESHOLDS)
        if thr.size == 0:
            continue
        admissible = (nL >= half_min) & (nP - nL >= half_min)
        if not np.any(admissible):
            continue
        if criterion == "global_icon":
            if ctx.policy.adaptive:
                raise ValueError("global_icon splitting requires the global bandwidth")
            fO, SO = others
            score = _global_gain(fL, SL, node.f, node.S, fO, SO, ctx.omega)
        else:
            score = _adaptive_delta(ctx, node, int(c), thr, nL, SL, SP)
        score = np.where(admissible, score, -np.inf)
        j = int(np.argmax(score))
        if score[j] > best[2]:
            best = (int(c), float(thr[j]), float(score[j]))
    return best


def grow(tdata: TransformedDataset, policy: BandwidthPolicy | None = None, n_min: float = 15,
         split_criterion: str = "delta_icon", feature_subset_size: int | None = None,
         rng: np.random.Generator | None = None, weights=None, bandwidth: float | None = None,
         seed: int | None = None, keep_stats: bool = True) -> PartitionTree:
    """Grow an unpruned tree breadth-first, splitting each eligible node once.

    Parameters
    ----------
    tdata : TransformedDataset
    policy : BandwidthPolicy, optional
        Defaults to the global bandwidth ``t0 / 20``.
    n_min : float
        A node is split only if its weighted baseline count is at least
        ``n_min``; both children must keep at least ``n_min / 2``.
    split_criterion : {"delta_icon", "global_icon"}
    feature_subset_size : int, optional
        Draw this many coordinates per split without replacement.
    rng : numpy Generator, optional
        Required when ``feature_subset_size`` is given.
    weights : array, optional
        Nonnegative subject weights (resample frequencies).
    bandwidth : float, optional
        Override for the global bandwidth.
    keep_stats : bool
        Store per-node ``f*``/``S*`` curves.  Ensembles only need the
        partition and switch this off.

    Notes
    -----
    A node is left unsplit when the best admissible score is not positive,
    which happens only when no candidate separates the node's hazards.
    """
    if split_criterion not in CRITERIA:
        raise ValueError(f"unknown split criterion {split_criterion!r}")
    if n_min < 2:
        raise ValueError("n_min must be at least 2")
    policy = policy or BandwidthPolicy()
    ctx = _GrowContext(tdata, policy, weights, bandwidth)
    n, q, p = ctx.n, ctx.q, ctx.p
    m = p if feature_subset_size is None else int(feature_subset_size)
    if not 1 <= m <= p:
        raise ValueError(f"feature_subset_size must lie in [1, {p}]")
    if m < p and rng is None:
        raise ValueError("an rng is required for feature subsampling")
    all_coords = np.arange(p, dtype=np.int64)
    pos = ctx.w > 0
    ymem = np.flatnonzero(pos)
    grid_flat = np.flatnonzero((tdata.at_risk & pos[None, :]).ravel())
    root = _Node(ymem, ymem, ymem[ctx.delta[ymem] == 1], grid_flat.astype(np.int64), -1)
    nodes = [root]
    feature, threshold, left, right = [], [], [], []

    stats = keep_stats or policy.adaptive or split_criterion == "global_icon"

    def finish(node):
        if stats:
            node.f, node.S, node.h = ctx.node_stats(node)
        else:
            node.h = ctx.h
        node.n_base = float(ctx.w[node.base_idx].sum())

    finish(root)
    label = 0
    while label < len(nodes):
        node = nodes[label]
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        if node.n_base >= n_min:
            coords = all_coords if m == p else np.sort(rng.choice(p, size=m, replace=False)).astype(np.int64)
            others = None
            if split_criterion == "global_icon":
                lv = [j for j in range(len(nodes)) if j != label and (j >= len(left) or left[j] < 0)]
                others = (np.array([nodes[j].f for j in lv]).reshape(-1, q),
                          np.array([nodes[j].S for j in lv]).reshape(-1, q))
            c, t, score = _best_split(ctx, node, coords, split_criterion, n_min / 2.0, others)
            if c >= 0 and score > 0:
                lparts, rparts = node.split(ctx, c, t)
                kids = []
                for parts in (lparts, rparts):
                    child = _Node(*parts, parent=label)
                    finish(child)
                    kids.append(child)
                feature[label] = c
                threshold[label] = t
                left[label] = len(nodes)
                right[label] = len(nodes) + 1
                nodes.extend(kids)
        label += 1

    return PartitionTree(
        feature=np.asarray(feature, np.int64),
        threshold=np.asarray(threshold, float),
        left=np.asarray(left, np.int64),
        right=np.asarray(right, np.int64),
        parent=np.asarray([nd.parent for nd in nodes], np.int64),
        n_base=np.asarray([nd.n_base for nd in nodes]),
        f_star=np.array([nd.f for nd in nodes]) / n if stats else None,
        S_star=np.array([nd.S for nd in nodes]) / n if stats else None,
        h=np.asarray([nd.h for nd in nodes]),
        tdata=tdata, policy=policy, n_min=n_min, criterion=split_criterion, seed=seed,
    )


# -- pruning ----------------------------------------------------------------


@dataclass(eq=False)
class PruneSequence:
    """Nested candidates ``T_(K) ... T_(1)`` and the concordance-complexity path.

    ``alphas[q]`` is the smallest complexity at which ``subtrees[q]`` is
    optimal; ``betas`` are the geometric-mean representatives.
    """

    candidates: list
    icons: np.ndarray
    alphas: np.ndarray
    subtrees: list
    betas: np.ndarray

    @property
    def sizes(self) -> np.ndarray:
        return np.array([t.n_leaves for t in self.candidates])

    def tree_at(self, alpha: float) -> PartitionTree:
        """Optimal subtree ``T^alpha``; piecewise constant and right-continuous in ``alpha``."""
        qidx = int(np.searchsorted(self.alphas, alpha, side="right")) - 1
        return self.subtrees[max(qidx, 0)]


def _alpha_path(sizes, icons):
    """Thresholds and optimal-candidate indices from sizes (decreasing) and ICON values.

    From the current candidate, the next threshold is the smallest slope
    ``(ICON(cur) - ICON(T)) / (|cur| - |T|)`` over smaller candidates; ties go
    to the smallest tree.  A zero first slope absorbs the ``alpha = 0`` entry.
    """
    cur = 0
    alphas = [0.0]
    picks = [0]
    while cur < len(sizes) - 1:
        slopes = [(icons[cur] - icons[k]) / (sizes[cur] - sizes[k]) for k in range(cur + 1, len(sizes))]
        a = min(slopes)
        nxt = cur + 1 + max(i for i, v in enumerate(slopes) if v == a)
        if a <= alphas[-1]:
            picks[-1] = nxt
        else:
            alphas.append(a)
            picks.append(nxt)
        cur = nxt
    return np.asarray(alphas), picks


def prune_sequence(tree: PartitionTree) -> PruneSequence:
    """Greedy weakest-link collapse to every size, then the threshold path.

    At each step the internal node whose two children are both leaves and
    whose collapse loses the least ICON is merged; ties go to the lowest
    node label.
    """
    f, S = tree.stats()
    w = tree.grid.weights
    leaves = set(int(j) for j in tree.leaves)
    collapsed = []
    cands = [tree]
    while len(leaves) > 1:
        best, best_gain = None, np.inf
        for j in np.flatnonzero(tree.left >= 0):
            lj, rj = int(tree.left[j]), int(tree.right[j])
            if j in leaves or lj not in leaves or rj not in leaves:
                continue
            others = sorted(leaves - {lj, rj})
            g = _global_gain(f[lj][:, None], S[lj][:, None], f[j], S[j], f[others].reshape(-1, f.shape[1]),
                             S[others].reshape(-1, f.shape[1]), w)[0]
            if g < best_gain:
                best, best_gain = int(j), g
        leaves -= {int(tree.left[best]), int(tree.right[best])}
        leaves.add(best)
        collapsed.append(best)
        cands.append(tree.collapse(_frontier(tree, leaves)))
    icons = np.array([t.icon_value() for t in cands])
    sizes = np.array([t.n_leaves for t in cands])
    alphas, picks = _alpha_path(sizes, icons)
    betas = np.append(np.sqrt(alphas[:-1] * alphas[1:]), alphas[-1])
    return PruneSequence(cands, icons, alphas, [cands[i] for i in picks], betas)


def _frontier(tree: PartitionTree, leaves) -> list:
    """Internal nodes of ``tree`` that are leaves of the subtree with leaf set ``leaves``."""
    return [j for j in leaves if tree.left[j] >= 0]


# -- cross-validation ---------------------------------------------------------


@dataclass(eq=False)
class CVResult:
    tree: PartitionTree
    full_tree: PartitionTree
    sequence: PruneSequence
    betas: np.ndarray
    cv_scores: np.ndarray
    fold_scores: np.ndarray
    beta_star: float
    skipped_folds: list


def _node_keys(tree: PartitionTree) -> np.ndarray:
    """Ranking keys per node; a node with no mass at a grid time borrows its parent's key."""
    f, S = tree.stats()
    key = _key_from_fs(f, S)
    empty = (f <= 0) & (S <= 0)
    for j in range(1, tree.n_nodes):
        key[j] = np.where(empty[j], key[tree.parent[j]], key[j])
    return key


def held_out_icon(tree: PartitionTree, test_paths, test_Y, test_delta, Xv=None) -> float:
    """ICON of held-out subjects, ordered by the tree's own leaf hazards.

    ``Xv`` may carry the held-out histories already transformed with the
    tree's ECDF tables.
    """
    td = tree.tdata
    h = tree.bandwidth
    Xv = td.transform_paths(test_paths) if Xv is None else Xv
    m = len(Xv)
    pos = tree.leaf_position()
    leaf = pos[tree.apply(Xv)]
    L = tree.n_leaves
    q = td.q
    at_risk = test_Y[None, :] >= td.grid.times[:, None]
    S = np.zeros((L, q))
    for k in range(q):
        S[:, k] = np.bincount(leaf[at_risk[k], k], minlength=L)
    f = np.zeros((L, q))
    ev = np.flatnonzero(test_delta == 1)
    if ev.size:
        tc = clamp_time(td.grid.times, h, td.source.horizon)
        kw = epanechnikov((tc[:, None] - test_Y[None, ev]) / h) / h
        anchor = td.grid.nearest_index(test_Y[ev])
        ev_leaf = leaf[ev, anchor]
        np.add.at(f, ev_leaf, kw.T)
    key = _node_keys(tree)[tree.leaves]
    return icon_value(f / m, S / m, td.grid.weights, key=key)


def _stratified_folds(delta, folds, rng):
    idx = np.empty(delta.size, np.int64)
    start = 0
    for d in (1, 0):
        members = np.flatnonzero(delta == d)
        members = members[rng.permutation(members.size)]
        idx[members] = (start + np.arange(members.size)) % folds
        start = (start + members.size) % folds
    return idx


def select_by_cv(tdata: TransformedDataset, policy: BandwidthPolicy | None = None, n_min: float = 15,
                 folds: int = 10, rng: np.random.Generator | None = None, split_criterion: str = "delta_icon",
                 seed: int | None = None, selection: str = "max") -> CVResult:
    """Pick the complexity ``beta*`` from mean held-out ICON and prune the full tree there.

    Fold trees reuse the full-data grid and bandwidth but transform their
    own training subjects; held-out subjects are routed with the training
    fold's ECDF tables.

    Parameters
    ----------
    selection : {"max", "one_se"}
        ``max`` takes the ``beta`` with the largest mean score, ties going to
        the larger ``beta``.  ``one_se`` takes the largest ``beta`` whose mean
        lies within one standard error (across folds) of that maximum.
    """
    if folds < 2:
        raise ValueError("folds must be at least 2")
    if selection not in ("max", "one_se"):
        raise ValueError(f"unknown selection rule {selection!r}")
    policy = policy or BandwidthPolicy()
    rng = rng if rng is not None else np.random.default_rng(seed)
    data = tdata.source
    h = policy.global_bandwidth(data)
    full = grow(tdata, policy, n_min, split_criterion, bandwidth=h, seed=seed)
    seq = prune_sequence(full)
    betas = seq.betas
    assign = _stratified_folds(data.delta, folds, rng)
    scores = np.full((folds, betas.size), np.nan)
    skipped = []
    for v in range(folds):
        test = assign == v
        train = ~test
        if not np.any(data.delta[test] == 1) or not np.any(data.delta[train] == 1):
            skipped.append(v)
            warnings.warn(f"fold {v} skipped: no events on one side", RuntimeWarning, stacklevel=2)
            continue
        try:
            tr = transform(data.subset(train, horizon=data.horizon), tdata.grid)
        except DataError:
            skipped.append(v)
            warnings.warn(f"fold {v} skipped: empty risk set at a grid time", RuntimeWarning, stacklevel=2)
            continue
        fold_seq = prune_sequence(grow(tr, policy, n_min, split_criterion, bandwidth=h))
        test_idx = np.flatnonzero(test)
        paths = [data.subjects[i] for i in test_idx]
        Xv = tr.transform_paths(paths)
        for j, b in enumerate(betas):
            scores[v, j] = held_out_icon(fold_seq.tree_at(b), paths, data.Y[test_idx], data.delta[test_idx], Xv)
    if len(skipped) == folds:
        raise DataError("every cross-validation fold was skipped")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        mean = np.nanmean(scores, axis=0)
    mean = np.where(np.isnan(mean), -np.inf, mean)
    best = int(np.flatnonzero(mean == mean.max())[-1])
    if selection == "one_se":
        col = scores[:, best]
        col = col[~np.isnan(col)]
        se = col.std(ddof=1) / np.sqrt(col.size) if col.size > 1 else 0.0
        best = int(np.flatnonzero(mean >= mean[best] - se)[-1])
    return CVResult(seq.tree_at(betas[best]), full, seq, betas, mean, scores, float(betas[best]), skipped)


# -- prediction ---------------------------------------------------------------


def _as_paths(paths):
    return [paths] if isinstance(paths, CovariatePath) else list(paths)


def predict_hazard(tree: PartitionTree, paths, t):
    """Leaf hazard of new histories at times ``t``.

    The subject is routed with its covariate at the grid time nearest to
    ``t``; that leaf's hazard curve is linearly interpolated between the
    bracketing grid times (nearest value outside ``[t_1, t_q]``).  If one
    bracket is undefined the other is used; if both are, the result is NaN.
    """
    single = isinstance(paths, CovariatePath)
    ps = _as_paths(paths)
    t = np.atleast_1d(np.asarray(t, float))
    grid = tree.grid.times
    node = tree.apply(tree.tdata.transform_paths(ps))[:, tree.grid.nearest_index(t)]
    lam = hazard_ratio(*tree.stats())
    hi = np.clip(np.searchsorted(grid, t, side="left"), 0, grid.size - 1)
    lo = np.where(t <= grid[0], 0, np.clip(hi - 1, 0, grid.size - 1))
    span = grid[hi] - grid[lo]
    wgt = np.clip(np.where(span > 0, (t - grid[lo]) / np.where(span > 0, span, 1.0), 0.0), 0.0, 1.0)
    vlo = lam[node, lo]
    vhi = lam[node, hi]
    out = (1 - wgt) * vlo + wgt * vhi
    out = np.where(np.isnan(vlo), vhi, np.where(np.isnan(vhi), vlo, out))
    return out[0] if single else out


def predict_survival(tree: PartitionTree, paths, times, return_skipped: bool = False):
    """Counting-process survival of new histories at ``times``.

    At every training event time ``u <= t`` the new subject's leaf at ``u``
    is found; the increment is the number of training events in that leaf
    at ``u`` over the number at risk in it.  Empty risk sets are skipped and
    counted.
    """
    single = isinstance(paths, CovariatePath)
    ps = _as_paths(paths)
    times = np.atleast_1d(np.asarray(times, float))
    u, ku, d, r = tree.counting_tables()
    pos = tree.leaf_position()
    leaf = pos[tree.apply(tree.tdata.transform_paths(ps))]
    lf = leaf[:, ku]
    e = np.arange(u.size)[None, :]
    dd = d[e, lf]
    rr = r[e, lf]
    ok = rr > 0
    inc = np.where(ok, dd / np.where(ok, rr, 1.0), 0.0)
    cum = np.concatenate([np.zeros((len(ps), 1)), np.cumsum(inc, axis=1)], axis=1)
    idx = np.searchsorted(u, times, side="right")
    surv = np.exp(-cum[:, idx])
    skipped = int(np.sum(~ok))
    out = surv[0] if single else surv
    return (out, skipped) if return_skipped else out
