"""Epanechnikov kernel, bandwidth policies and node-level hazard estimators."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .survival_data import DataError, Dataset, TransformedDataset, default_horizon

__all__ = [
    "KernelSpec",
    "BandwidthPolicy",
    "NodeHazardCurve",
    "Region",
    "epanechnikov",
    "kernel_weight",
    "clamp_time",
    "event_kernel_matrix",
    "estimate_f_star",
    "estimate_S_star",
    "node_hazard",
]


def epanechnikov(x):
    x = np.asarray(x, float)
    return np.where(np.abs(x) <= 1.0, 0.75 * (1.0 - x * x), 0.0)


@dataclass(frozen=True)
class KernelSpec:
    h: float
    family: str = "epanechnikov"

    def __post_init__(self):
        if self.family != "epanechnikov":
            raise ValueError(f"unsupported kernel family {self.family!r}")
        if not self.h > 0:
            raise ValueError("bandwidth must be positive")


def kernel_weight(spec: KernelSpec, distance):
    """``K(distance / h) / h``."""
    return epanechnikov(np.asarray(distance, float) / spec.h) / spec.h


@dataclass(frozen=True)
class BandwidthPolicy:
    """How bandwidths are chosen.

    ``global_fixed`` uses ``h = t0 / 20`` with ``t0`` the 0.95 quantile of the
    uncensored times.  ``node_adaptive`` uses ``h = c * n_tau ** (-1/5)`` with
    ``c`` defaulting to ``s / 8``.  Both are capped at ``s / 2``.
    """

    mode: str = "global_fixed"
    c: float | None = None

    def __post_init__(self):
        if self.mode not in ("global_fixed", "node_adaptive"):
            raise ValueError(f"unknown bandwidth mode {self.mode!r}")

    def global_bandwidth(self, data: Dataset) -> float:
        t0 = default_horizon(data.Y, data.delta)
        return min(t0 / 20.0, data.horizon / 2.0)

    def node_bandwidth(self, n_tau: float, horizon: float) -> float:
        c = horizon / 8.0 if self.c is None else self.c
        return min(c * max(float(n_tau), 1.0) ** (-0.2), horizon / 2.0)

    @property
    def adaptive(self) -> bool:
        return self.mode == "node_adaptive"


def clamp_time(t, h: float, s: float):
    """Boundary rule: evaluate the density at ``h`` on ``[0, h)`` and at ``s - h`` on ``(s - h, s]``."""
    if s < 2 * h:
        raise DataError(f"window s={s} is narrower than twice the bandwidth h={h}")
    return np.clip(np.asarray(t, float), h, s - h)


def event_kernel_matrix(data: Dataset, times, h: float) -> np.ndarray:
    """``(len(times), n)`` array ``K_h(t' - Y_i) * Delta_i`` with boundary-clamped ``t'``."""
    tc = clamp_time(times, h, data.horizon)
    d = np.atleast_1d(tc)[:, None] - data.Y[None, :]
    return epanechnikov(d / h) / h * data.delta[None, :]


def estimate_f_star(data: Dataset, membership, spec: KernelSpec, t, weights=None):
    """Kernel estimate of the sub-density of node events at ``t``.

    ``membership[i]`` says whether subject ``i``'s covariate at its own
    observed time lies in the node.
    """
    m = np.asarray(membership, float)
    if weights is not None:
        m = m * np.asarray(weights, float)
    out = event_kernel_matrix(data, np.atleast_1d(t), spec.h) @ m / data.n
    return out if np.ndim(t) else float(out[0])


def estimate_S_star(data: Dataset, membership_at_t, t, weights=None) -> float:
    """Fraction of the sample simultaneously at risk and in the node at ``t``."""
    m = np.asarray(membership_at_t, float) * (data.Y >= t)
    if weights is not None:
        m = m * np.asarray(weights, float)
    return float(m.sum() / data.n)


@dataclass(frozen=True)
class Region:
    """Axis-aligned box ``lo < x <= hi`` on the transformed scale."""

    lo: np.ndarray
    hi: np.ndarray

    @classmethod
    def full(cls, p: int) -> "Region":
        return cls(np.full(p, -np.inf), np.full(p, np.inf))

    def contains(self, x) -> np.ndarray:
        x = np.asarray(x, float)
        return np.all((x > self.lo) & (x <= self.hi), axis=-1)

    def split(self, coordinate: int, threshold: float):
        lhi = self.hi.copy()
        lhi[coordinate] = min(lhi[coordinate], threshold)
        rlo = self.lo.copy()
        rlo[coordinate] = max(rlo[coordinate], threshold)
        return Region(self.lo.copy(), lhi), Region(rlo, self.hi.copy())


@dataclass(frozen=True, eq=False)
class NodeHazardCurve:
    """``lambda(t_k | node)`` on the grid; NaN marks grid points with an empty risk set."""

    times: np.ndarray
    hazard: np.ndarray
    f_star: np.ndarray
    S_star: np.ndarray
    h: float

    @property
    def defined(self) -> np.ndarray:
        return ~np.isnan(self.hazard)


def hazard_ratio(f, S):
    f = np.asarray(f, float)
    S = np.asarray(S, float)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(S > 0, f / np.where(S > 0, S, 1.0), np.nan)


def node_hazard(tdata: TransformedDataset, region: Region, policy: BandwidthPolicy | None = None,
                weights=None) -> NodeHazardCurve:
    """Kernel hazard of the subjects falling in ``region`` at each grid time."""
    policy = policy or BandwidthPolicy()
    data = tdata.source
    times = tdata.grid.times
    ev_member = region.contains(tdata.event_values)
    if policy.adaptive:
        n_tau = ev_member.sum() if weights is None else np.sum(np.asarray(weights) * ev_member)
        h = policy.node_bandwidth(n_tau, data.horizon)
    else:
        h = policy.global_bandwidth(data)
    f = estimate_f_star(data, ev_member, KernelSpec(h), times, weights)
    grid_member = region.contains(tdata.values) & tdata.at_risk
    if weights is not None:
        grid_member = grid_member * np.asarray(weights, float)[None, :]
    S = grid_member.sum(axis=1) / data.n
    return NodeHazardCurve(times, hazard_ratio(f, S), f, S, h)
