"""Generalized time-dependent ROC curves and the concordance measures built on them.

Nodes are ranked by their estimated hazard ``f* / S*``.  A node holding
event mass but nobody at risk (``S* = 0 < f*``) ranks above every node with
a finite hazard; a node with ``f* = S* = 0`` carries no mass and drops out
of every sum on its own.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np

from .survival_data import TimeGrid

__all__ = [
    "RocStarCurve",
    "ConcordanceReport",
    "ranking_key",
    "con_t",
    "con_t_grid",
    "roc_star",
    "icon",
    "icon_value",
    "delta_icon",
]


def ranking_key(hazard, f, S):
    """Hazard used for ordering, with ``+inf`` for event mass over an empty risk set."""
    hazard = np.asarray(hazard, float)
    f = np.asarray(f, float)
    S = np.asarray(S, float)
    undefined = np.isnan(hazard)
    fill = np.where((f > 0) & (S <= 0), np.inf, 0.0)
    return np.where(undefined, fill, hazard)


def _key_from_fs(f, S):
    f = np.asarray(f, float)
    S = np.asarray(S, float)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = f / np.where(S > 0, S, 1.0)
    return np.where(S > 0, ratio, np.where(f > 0, np.inf, 0.0))


def con_t(hazard, f_star, S_star) -> float:
    """Concordance at one time from per-node hazards and ``f*``/``S*`` masses.

    Returns NaN when the total event mass or the total risk mass is zero.
    Ties between distinct nodes earn half credit, like the diagonal.
    """
    key = ranking_key(hazard, f_star, S_star)
    f = np.asarray(f_star, float)
    S = np.asarray(S_star, float)
    denom = f.sum() * S.sum()
    if not denom > 0:
        return float("nan")
    higher = key[:, None] > key[None, :]
    tie = key[:, None] == key[None, :]
    pair = f[:, None] * S[None, :]
    num = np.sum(pair * higher) + 0.5 * np.sum(pair * tie)
    return float(num / denom)


def con_t_grid(key, f, S) -> np.ndarray:
    """Concordance for every column of ``(M, q)`` node arrays, NaN where undefined.

    Sort-based: each node's risk mass is credited with the event mass of
    nodes ranked strictly higher plus half of its tie group.
    """
    key = np.asarray(key, float)
    f = np.asarray(f, float)
    S = np.asarray(S, float)
    if key.ndim == 1:
        key, f, S = key[:, None], f[:, None], S[:, None]
    M, q = key.shape
    order = np.argsort(-key, axis=0, kind="stable")
    ks = np.take_along_axis(key, order, axis=0).T
    fs = np.take_along_axis(f, order, axis=0).T
    Ss = np.take_along_axis(S, order, axis=0).T
    # tie groups: id increments where the sorted key changes
    newgrp = np.ones_like(ks, dtype=bool)
    newgrp[:, 1:] = ks[:, 1:] != ks[:, :-1]
    gid = np.cumsum(newgrp, axis=1) - 1
    flat = (gid + M * np.arange(q)[:, None]).ravel()
    gf = np.bincount(flat, weights=fs.ravel(), minlength=M * q).reshape(q, M)
    before = np.cumsum(gf, axis=1) - gf
    credit = np.take_along_axis(before, gid, axis=1) + 0.5 * np.take_along_axis(gf, gid, axis=1)
    num = np.sum(Ss * credit, axis=1)
    denom = f.sum(axis=0) * S.sum(axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(denom > 0, num / np.where(denom > 0, denom, 1.0), np.nan)


@dataclass(frozen=True, eq=False)
class RocStarCurve:
    """Piecewise-linear curve through anchors ``(FPR, TPR)`` from (0,0) to (1,1)."""

    fpr: np.ndarray
    tpr: np.ndarray

    def __call__(self, q):
        return np.interp(q, self.fpr, self.tpr)

    def area(self) -> float:
        """Trapezoid area under the anchors."""
        d = np.diff(self.fpr)
        return float(np.sum(d * (self.tpr[1:] + self.tpr[:-1]) * 0.5))


def roc_star(hazard, f_star, S_star) -> RocStarCurve:
    """Sort nodes by decreasing hazard and accumulate ``S*`` (FPR) and ``f*`` (TPR) fractions."""
    key = ranking_key(hazard, f_star, S_star)
    f = np.asarray(f_star, float)
    S = np.asarray(S_star, float)
    if not (f.sum() > 0 and S.sum() > 0):
        raise ValueError("ROC* undefined without positive event and risk mass")
    levels = np.unique(key)[::-1]
    gf = np.array([f[key == v].sum() for v in levels])
    gS = np.array([S[key == v].sum() for v in levels])
    # normalize by the sorted group totals so node order cannot change rounding
    cS = np.cumsum(gS)
    cf = np.cumsum(gf)
    fpr = np.concatenate(([0.0], cS / cS[-1]))
    tpr = np.concatenate(([0.0], cf / cf[-1]))
    fpr[-1] = 1.0
    tpr[-1] = 1.0
    return RocStarCurve(fpr, tpr)


@dataclass(frozen=True, eq=False)
class ConcordanceReport:
    times: np.ndarray
    weights: np.ndarray
    con: np.ndarray
    icon: float

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "con_t"])
            for t, c in zip(self.times, self.con):
                w.writerow([repr(float(t)), "" if np.isnan(c) else repr(float(c))])

    def to_dict(self) -> dict:
        return {
            "times": [float(t) for t in self.times],
            "weights": [float(w) for w in self.weights],
            "con_t": [None if np.isnan(c) else float(c) for c in self.con],
            "icon": self.icon,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def _weighted_mean_defined(con, weights) -> float:
    ok = ~np.isnan(con)
    if not np.any(ok):
        raise ValueError("concordance undefined at every grid point")
    w = np.asarray(weights, float)[ok]
    return float(np.sum(w * con[ok]) / np.sum(w))


def icon(f, S, grid: TimeGrid, hazard=None) -> ConcordanceReport:
    """Grid-weighted average of per-time concordance for ``(M, q)`` node arrays.

    ``hazard`` gives the ordering; by default the nodes' own ``f / S``.
    Undefined grid points are dropped and the weights renormalized.
    """
    f = np.atleast_2d(np.asarray(f, float))
    S = np.atleast_2d(np.asarray(S, float))
    key = _key_from_fs(f, S) if hazard is None else ranking_key(hazard, f, S)
    con = con_t_grid(key, f, S)
    return ConcordanceReport(grid.times, grid.weights, con, _weighted_mean_defined(con, grid.weights))


def icon_value(f, S, weights, key=None) -> float:
    """ICON as a bare float; NaN when no grid point is defined."""
    f = np.atleast_2d(f)
    S = np.atleast_2d(S)
    con = con_t_grid(_key_from_fs(f, S) if key is None else key, f, S)
    ok = ~np.isnan(con)
    if not np.any(ok):
        return float("nan")
    return float(np.sum(weights[ok] * con[ok]) / np.sum(weights[ok]))


def delta_icon(f_parent, S_parent, f_left, S_left, f_right, S_right, weights) -> float:
    """Within-node ICON increment of a split, summed over grid points with positive parent mass."""
    fP = np.asarray(f_parent, float)
    SP = np.asarray(S_parent, float)
    den = fP * SP
    num = np.abs(np.asarray(f_left) * np.asarray(S_right) - np.asarray(f_right) * np.asarray(S_left))
    ok = den > 0
    if not np.any(ok):
        return 0.0
    return float(np.sum(np.asarray(weights)[ok] * num[ok] / den[ok]))
