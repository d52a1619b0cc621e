"""Survival ensembles that average per-tree martingale estimating equations.

Each tree contributes a co-location indicator between a training subject's
transformed covariate and the query point; the frequency-weighted average
of these indicators is the local weight ``w_i(t, z)`` that enters the
kernel hazard and counting-process survival estimators.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _engine
from ._rng import stream
from .kernels import BandwidthPolicy, event_kernel_matrix
from .survival_data import CovariatePath, TransformedDataset
from .tree import PartitionTree, grow

__all__ = [
    "ForestModel",
    "LocalWeights",
    "fit_forest",
    "local_weights",
    "forest_hazard",
    "forest_hazard_paths",
    "forest_survival",
]

RESAMPLE_MODES = ("bootstrap", "subsample_honest", "none")


@dataclass(eq=False)
class ForestModel:
    """``B`` unpruned trees plus the per-tree estimation weights ``w_bi``.

    In honest mode ``grow_weights`` marks the half used to place splits and
    ``weights`` the disjoint half used for estimation.  Otherwise the two
    coincide.
    """

    trees: list
    weights: np.ndarray
    grow_weights: np.ndarray
    mode: str
    tdata: TransformedDataset
    policy: BandwidthPolicy
    bandwidth: float
    m: int
    n_min: float
    criterion: str
    seed: int | None

    @property
    def B(self) -> int:
        return len(self.trees)

    @property
    def grid(self):
        return self.tdata.grid

    def honest_sets(self):
        """``(I1, I2)`` index pairs per tree; only meaningful in honest mode."""
        return [(np.flatnonzero(g > 0), np.flatnonzero(w > 0)) for g, w in zip(self.grow_weights, self.weights)]


@dataclass(frozen=True, eq=False)
class LocalWeights:
    t: float
    z: np.ndarray
    weights: np.ndarray


def _resample(mode, n, rng, fraction):
    if mode == "none":
        w = np.ones(n)
        return w, w
    if mode == "bootstrap":
        w = rng.multinomial(n, np.full(n, 1.0 / n)).astype(float)
        return w, w
    size = int(round(fraction * n))
    if size < 2:
        raise ValueError("subsample too small for an honest split")
    idx = rng.choice(n, size=size, replace=False)
    half = size // 2
    g = np.zeros(n)
    g[idx[:half]] = 1.0
    w = np.zeros(n)
    w[idx[half:]] = 1.0
    return g, w


def fit_forest(tdata: TransformedDataset, policy: BandwidthPolicy | None = None, B: int = 500, m: int | None = None,
               n_min: float = 15, resample_mode: str = "bootstrap", seed: int = 0,
               split_criterion: str = "delta_icon", subsample_fraction: float = 0.632) -> ForestModel:
    """Grow ``B`` trees on resampled weights with ``m`` random coordinates per split.

    Parameters
    ----------
    resample_mode : {"bootstrap", "subsample_honest", "none"}
        ``bootstrap`` draws multinomial frequencies summing to ``n``.
        ``subsample_honest`` draws ``subsample_fraction * n`` subjects without
        replacement and halves them into a split-placing set and an
        estimation set.  ``none`` gives every subject weight one.
    seed : int
        Tree ``b`` uses its own stream derived from ``(seed, b)``.
    """
    if B < 1:
        raise ValueError("B must be at least 1")
    if resample_mode not in RESAMPLE_MODES:
        raise ValueError(f"unknown resample mode {resample_mode!r}")
    policy = policy or BandwidthPolicy()
    p, n = tdata.p, tdata.n
    m = math.ceil(math.sqrt(p)) if m is None else int(m)
    if not 1 <= m <= p:
        raise ValueError(f"m must lie in [1, {p}]")
    h = policy.global_bandwidth(tdata.source)
    trees, W, G = [], np.empty((B, n)), np.empty((B, n))
    for b in range(B):
        rng = stream(seed, "forest-tree", b)
        g, w = _resample(resample_mode, n, rng, subsample_fraction)
        G[b], W[b] = g, w
        trees.append(grow(tdata, policy, n_min, split_criterion, feature_subset_size=m, rng=rng, weights=g,
                          bandwidth=h, seed=seed, keep_stats=False))
    return ForestModel(trees, W, G, resample_mode, tdata, policy, h, m, n_min, split_criterion, seed)


class _TrainSide:
    """Per-forest training quantities shared by all trees."""

    def __init__(self, forest: ForestModel):
        td = forest.tdata
        Y, delta = td.source.Y, td.source.delta
        ev = np.flatnonzero(delta == 1)
        ev = ev[np.argsort(-Y[ev], kind="stable")]
        self.ev = ev
        self.ev_Y = Y[ev].copy()
        self.ev_anchor = td.anchor[ev].astype(np.int64)
        self.desc = np.argsort(-Y, kind="stable").astype(np.int64)
        self.Y = Y
        self.values = td.values

    def tree_terms(self, tree: PartitionTree, w):
        pos = tree.leaf_position()
        leaf_grid = pos[tree.apply(self.values)].astype(np.int64)
        N = _engine.at_risk_leaf_counts(self.ev_Y, self.ev_anchor, self.Y, self.desc, leaf_grid,
                                        np.ascontiguousarray(w), tree.n_leaves)
        ev_leaf = np.ascontiguousarray(leaf_grid[self.ev_anchor, self.ev])
        return pos, leaf_grid, ev_leaf, N


def local_weights(forest: ForestModel, t: float, z) -> LocalWeights:
    """``w_i(t, z) = (1/B) sum_b w_bi I(subject i shares tree b's leaf with z at t)``."""
    td = forest.tdata
    z = np.asarray(z, float)
    k = int(td.grid.nearest_index(t))
    out = np.zeros(td.n)
    for tree, w in zip(forest.trees, forest.weights):
        nodes = tree.apply(td.values[k])
        out += w * (nodes == tree.apply(z[None, :])[0])
    return LocalWeights(float(t), z, out / forest.B)


def forest_hazard(forest: ForestModel, z, t: float):
    """Kernel-smoothed hazard at transformed point(s) ``z`` and time ``t``.

    ``sum_i K_h(t' - Y_i) v0_i / v1_i`` where ``v0_i`` sums subject ``i``'s
    event weight over trees in which it falls in ``z``'s leaf and ``v1_i``
    sums the weighted at-risk count of that leaf at ``Y_i``.  Terms with
    ``v1_i = 0`` are skipped; NaN if every term is.
    """
    Z = np.atleast_2d(np.asarray(z, float))
    ts = _TrainSide(forest)
    ne = ts.ev.size
    v0 = np.zeros((Z.shape[0], ne))
    v1 = np.zeros((Z.shape[0], ne))
    for tree, w in zip(forest.trees, forest.weights):
        pos, _, ev_leaf, N = ts.tree_terms(tree, w)
        lz = pos[tree.apply(Z)]
        v0 += (ev_leaf[None, :] == lz[:, None]) * w[ts.ev][None, :]
        v1 += N[:, lz].T
    kw = event_kernel_matrix(forest.tdata.source, [t], forest.bandwidth)[0, ts.ev]
    ok = v1 > 0
    terms = np.where(ok, kw[None, :] * v0 / np.where(ok, v1, 1.0), 0.0)
    out = np.where(ok.any(axis=1), terms.sum(axis=1), np.nan)
    return float(out[0]) if np.ndim(z) == 1 else out


def forest_hazard_paths(forest: ForestModel, paths, t: float):
    """Hazard for new histories, using each covariate at the grid time nearest ``t``."""
    ps = [paths] if isinstance(paths, CovariatePath) else list(paths)
    k = int(forest.grid.nearest_index(t))
    Z = forest.tdata.transform_paths(ps)[:, k, :]
    out = forest_hazard(forest, Z, t)
    return out[0] if isinstance(paths, CovariatePath) else out


def forest_survival(forest: ForestModel, paths, times, return_skipped: bool = False):
    """Counting-process survival ``exp(-sum_{Y_i <= t} v2_i / v3_i)`` for new histories.

    The new subject enters tree ``b`` at training time ``Y_i`` through its
    transformed covariate at the grid time nearest ``Y_i``.  Zero-denominator
    terms are skipped and counted.
    """
    single = isinstance(paths, CovariatePath)
    ps = [paths] if single else list(paths)
    times = np.atleast_1d(np.asarray(times, float))
    ts = _TrainSide(forest)
    Xn = forest.tdata.transform_paths(ps)
    ne = ts.ev.size
    v2 = np.zeros((len(ps), ne))
    v3 = np.zeros((len(ps), ne))
    delta_ev = np.ones(ne)
    for tree, w in zip(forest.trees, forest.weights):
        pos, _, ev_leaf, N = ts.tree_terms(tree, w)
        new_leaf = np.ascontiguousarray(pos[tree.apply(Xn)].astype(np.int64))
        _engine.accumulate_survival_terms(v2, v3, new_leaf, ts.ev_anchor, ev_leaf, delta_ev * w[ts.ev], N)
    ok = v3 > 0
    inc = np.where(ok, v2 / np.where(ok, v3, 1.0), 0.0)
    # events are stored by decreasing Y; accumulate in increasing time
    inc = inc[:, ::-1]
    Yasc = ts.ev_Y[::-1]
    cum = np.concatenate([np.zeros((len(ps), 1)), np.cumsum(inc, axis=1)], axis=1)
    surv = np.exp(-cum[:, np.searchsorted(Yasc, times, side="right")])
    out = surv[0] if single else surv
    return (out, int(np.sum(~ok))) if return_skipped else out
