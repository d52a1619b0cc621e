"""Simulation scenarios I-VII with known conditional survival, censoring calibration and IAE.

Scenarios I-IV have time-independent covariates; V-VII have covariates that
drift linearly in time.  Drifting covariates are stored as step functions on
a breakpoint grid shared by all subjects, taking the value at each segment
midpoint.  Because the drift is common to all subjects (V) or a positive
multiple of a fixed per-subject slope (VI, VII), cross-sectional ranks are
the same as those of the continuous paths, so the rank transform loses
nothing.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from functools import lru_cache

import numpy as np
from scipy import stats

from ._rng import stream
from .survival_data import CovariatePath, Dataset

__all__ = [
    "SCENARIOS",
    "ScenarioSpec",
    "TruthOracle",
    "SimulatedData",
    "generate",
    "draw_subjects",
    "calibrate_censoring",
    "censoring_rate",
    "iae",
    "iae_horizon",
    "mvn_ar1",
]

SCENARIOS = ("I", "II", "III", "IV", "V", "VI", "VII")
DIMENSION = {"I": 25, "II": 25, "III": 25, "IV": 25, "V": 20, "VI": 20, "VII": 20}
TIME_DEPENDENT = ("V", "VI", "VII")
CALIBRATION_DRAWS = 100_000


@dataclass(frozen=True)
class ScenarioSpec:
    """One scenario at one sample size and censoring target.

    ``eta`` is the censoring parameter; ``None`` means calibrate to
    ``target_censoring``.  ``k`` and ``b`` are the drift slope and intercept
    of Scenario V's covariates.
    """

    scenario: str
    n: int = 200
    target_censoring: float = 0.0
    eta: float | None = None
    k: float = 0.1
    b: float = 0.0

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ValueError(f"unknown scenario {self.scenario!r}; expected one of {SCENARIOS}")
        if not 0 <= self.target_censoring < 1:
            raise ValueError("target_censoring must lie in [0, 1)")
        if self.n < 1:
            raise ValueError("n must be positive")

    @property
    def p(self) -> int:
        return DIMENSION[self.scenario]

    @property
    def time_dependent(self) -> bool:
        return self.scenario in TIME_DEPENDENT

    def calibrated(self) -> "ScenarioSpec":
        if self.eta is not None:
            return self
        return replace(self, eta=calibrate_censoring(self, self.target_censoring))


def mvn_ar1(m: int, p: int, rho: float, rng, mean: float = 0.0) -> np.ndarray:
    """Normal vectors with covariance ``rho ** |i - j|`` via the Cholesky factor."""
    idx = np.arange(p)
    cov = rho ** np.abs(idx[:, None] - idx[None, :])
    L = np.linalg.cholesky(cov)
    return mean + rng.standard_normal((m, p)) @ L.T


# -- covariates and truth -------------------------------------------------------


class TruthOracle:
    """True conditional survival and hazard for a batch of subjects.

    For drifting covariates these are conditional on the whole history,
    which is deterministic given the per-subject parameters.
    """

    def __init__(self, scenario: str, params: dict, k: float = 0.1, b: float = 0.0):
        self.scenario = scenario
        self.params = params
        self.k = k
        self.b = b

    @property
    def m(self) -> int:
        return next(iter(self.params.values())).shape[0]

    def cumulative_hazard(self, t) -> np.ndarray:
        """``(m, len(t))`` cumulative hazard."""
        t = np.atleast_1d(np.asarray(t, float))[None, :]
        P = self.params
        s = self.scenario
        if s in ("I", "II"):
            return t / P["mean"][:, None]
        if s == "III":
            return -stats.gamma.logsf(t, a=P["shape"][:, None], scale=2.0)
        if s == "IV":
            with np.errstate(divide="ignore"):
                return -stats.norm.logsf(np.log(t) - P["mu"][:, None])
        if s == "V":
            c = P["C"][:, None]
            return c * np.expm1(5 * self.k * t) / (5 * self.k)
        a, bb, c = (P[x][:, None] for x in ("A", "B", "Cq"))
        return a * t**3 - bb * t**2 + c * t

    def survival(self, t) -> np.ndarray:
        return np.exp(-self.cumulative_hazard(t))

    def hazard(self, t) -> np.ndarray:
        t = np.atleast_1d(np.asarray(t, float))[None, :]
        P = self.params
        s = self.scenario
        if s in ("I", "II"):
            return np.broadcast_to(1.0 / P["mean"][:, None], (self.m, t.size)).copy()
        if s == "III":
            a = P["shape"][:, None]
            return np.exp(stats.gamma.logpdf(t, a=a, scale=2.0) - stats.gamma.logsf(t, a=a, scale=2.0))
        if s == "IV":
            z = np.log(t) - P["mu"][:, None]
            return np.exp(stats.norm.logpdf(z) - stats.norm.logsf(z)) / t
        if s == "V":
            return P["C"][:, None] * np.exp(5 * self.k * t)
        kk, zz = P["kk"], P["zz"]
        return np.sum((t[:, :, None] * kk[:, None, :] / 10 - zz[:, None, :]) ** 2, axis=2)

    def sample_times(self, rng) -> np.ndarray:
        """Event times by the scenario's own recipe."""
        P = self.params
        s = self.scenario
        m = self.m
        if s in ("I", "II"):
            return P["mean"] * rng.standard_exponential(m)
        if s == "III":
            return rng.gamma(P["shape"], 2.0)
        if s == "IV":
            return np.exp(P["mu"] + rng.standard_normal(m))
        E = rng.standard_exponential(m)
        if s == "V":
            return np.log1p(5 * self.k * E / P["C"]) / (5 * self.k)
        return _invert_cubic(P["A"], P["B"], P["Cq"], E)


def _invert_cubic(A, B, C, E, tol=1e-10):
    """Solve ``A t^3 - B t^2 + C t = E`` for the increasing cumulative hazard by bisection."""
    lam = lambda t: A * t**3 - B * t**2 + C * t
    lo = np.zeros_like(E)
    hi = np.ones_like(E)
    while np.any(lam(hi) < E):
        hi = np.where(lam(hi) < E, 2 * hi, hi)
    while np.max(hi - lo) > tol:
        mid = 0.5 * (lo + hi)
        below = lam(mid) < E
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
    return 0.5 * (lo + hi)


def draw_subjects(spec: ScenarioSpec, m: int, rng) -> tuple[dict, TruthOracle]:
    """Covariate parameters for ``m`` subjects and their truth oracle."""
    s = spec.scenario
    if s == "I":
        Z = mvn_ar1(m, 25, 0.9, rng)
        P = {"Z": Z, "mean": np.exp(0.1 * Z[:, 10:25].sum(axis=1))}
    elif s == "II":
        Z = rng.random((m, 25))
        P = {"Z": Z, "mean": np.sin(np.pi * Z[:, 0]) + 2 * np.abs(Z[:, 1] - 0.5) + Z[:, 2] ** 3}
    elif s == "III":
        Z = mvn_ar1(m, 25, 0.75, rng)
        P = {"Z": Z, "shape": 0.5 + 0.3 * np.abs(Z[:, 10:15].sum(axis=1))}
    elif s == "IV":
        Z = mvn_ar1(m, 25, 0.75, rng)
        P = {"Z": Z, "mu": 0.1 * np.abs(Z[:, 0:5].sum(axis=1)) + 0.1 * np.abs(Z[:, 20:25].sum(axis=1))}
    elif s == "V":
        eps = mvn_ar1(m, 10, 0.9, rng)
        static = rng.random((m, 10))
        C = np.exp(5 * spec.b + 0.5 * eps.sum(axis=1) + static[:, 0]) / 10
        P = {"eps": eps, "static": static, "C": C}
    else:
        if s == "VI":
            kk = rng.random((m, 10))
            zz = rng.random((m, 10))
        else:
            kk = mvn_ar1(m, 10, 0.9, rng, mean=1.0)
            zz = rng.standard_normal((m, 10))
        P = {"kk": kk, "zz": zz, "static": zz, "A": np.sum(kk**2, axis=1) / 300,
             "B": np.sum(kk * zz, axis=1) / 10, "Cq": np.sum(zz**2, axis=1)}
    truth_keys = {"I": ("mean",), "II": ("mean",), "III": ("shape",), "IV": ("mu",), "V": ("C",),
                  "VI": ("A", "B", "Cq", "kk", "zz"), "VII": ("A", "B", "Cq", "kk", "zz")}[s]
    return P, TruthOracle(s, {key: P[key] for key in truth_keys}, spec.k, spec.b)


def _censoring(spec: ScenarioSpec, P: dict, eta: float, base: np.ndarray) -> np.ndarray:
    """Censoring times from common base draws (uniform, exponential or normal by scenario)."""
    s = spec.scenario
    if s == "I":
        return eta * base
    if s == "IV":
        return np.exp(P["mu"] + eta + base)
    return eta * base


def _censoring_base(spec: ScenarioSpec, m: int, rng) -> np.ndarray:
    s = spec.scenario
    if s == "I":
        return rng.standard_exponential(m)
    if s == "IV":
        return rng.standard_normal(m)
    return rng.random(m)


# -- breakpoints for drifting covariates ----------------------------------------


def _breakpoints(s_ref: float, t_max: float) -> np.ndarray:
    fine = np.arange(0.0, 3 * s_ref, s_ref / 40)
    last = 3 * s_ref
    coarse = [last]
    while coarse[-1] < t_max:
        coarse.append(coarse[-1] + s_ref)
    return np.concatenate([fine, coarse])


def _drift_values(spec: ScenarioSpec, P: dict, mids: np.ndarray) -> np.ndarray:
    """``(m, len(mids), p)`` covariate values at segment midpoints."""
    static = P["static"]
    m = static.shape[0]
    out = np.empty((m, mids.size, 20))
    if spec.scenario == "V":
        out[:, :, :10] = spec.k * mids[None, :, None] + spec.b + P["eps"][:, None, :]
    else:
        out[:, :, :10] = mids[None, :, None] * P["kk"][:, None, :] / 10
    out[:, :, 10:] = static[:, None, :]
    return out


def _paths(spec: ScenarioSpec, P: dict, Y: np.ndarray, delta: np.ndarray, ids, bp: np.ndarray) -> list:
    if not spec.time_dependent:
        return [CovariatePath.constant(i, z, y, d) for i, z, y, d in zip(ids, P["Z"], Y, delta)]
    mids = 0.5 * (bp[:-1] + bp[1:])
    vals = _drift_values(spec, P, mids)
    out = []
    for a, (i, y, d) in enumerate(zip(ids, Y, delta)):
        j = int(np.searchsorted(bp, y, side="left"))  # segments 0..j-1 start before y
        j = max(j, 1)
        starts = bp[:j]
        stops = np.append(bp[1:j], y)
        out.append(CovariatePath(i, starts, stops, vals[a, :j], int(d)))
    return out


# -- public API -----------------------------------------------------------------


@dataclass(eq=False)
class SimulatedData:
    spec: ScenarioSpec
    dataset: Dataset
    truth: TruthOracle
    T: np.ndarray
    C: np.ndarray

    @property
    def censoring_rate(self) -> float:
        return float(1 - self.dataset.delta.mean())


def generate(spec: ScenarioSpec, rng) -> SimulatedData:
    """Draw a training sample; censoring is calibrated first if ``eta`` is unset."""
    spec = spec.calibrated() if spec.target_censoring > 0 else spec
    P, truth = draw_subjects(spec, spec.n, rng)
    T = truth.sample_times(rng)
    if spec.target_censoring > 0 or spec.eta is not None:
        C = _censoring(spec, P, spec.eta, _censoring_base(spec, spec.n, rng))
    else:
        C = np.full(spec.n, np.inf)
    Y = np.minimum(T, C)
    delta = (T <= C).astype(int)
    if not np.any(delta):
        raise RuntimeError("simulated sample has no events")
    bp = _breakpoints(iae_horizon(spec.scenario, spec.k, spec.b), float(Y.max())) if spec.time_dependent else None
    paths = _paths(spec, P, Y, delta, range(spec.n), bp)
    return SimulatedData(spec, Dataset(paths), truth, T, C)


def new_subjects(spec: ScenarioSpec, m: int, rng) -> tuple[list, TruthOracle]:
    """Fresh covariate histories covering ``[0, 3 s]`` for prediction, with their truth."""
    P, truth = draw_subjects(spec, m, rng)
    s = iae_horizon(spec.scenario, spec.k, spec.b)
    bp = _breakpoints(s, 3 * s)
    end = np.full(m, bp[-1])
    paths = _paths(spec, P, end, np.zeros(m, int), range(m), bp)
    return paths, truth


def censoring_rate(spec: ScenarioSpec, eta: float, m: int = CALIBRATION_DRAWS, rng=None) -> float:
    """Monte Carlo censoring proportion at ``eta``."""
    rng = rng if rng is not None else stream(0, "censoring-check", SCENARIOS.index(spec.scenario))
    P, truth = draw_subjects(spec, m, rng)
    T = truth.sample_times(rng)
    C = _censoring(spec, P, eta, _censoring_base(spec, m, rng))
    return float(np.mean(C < T))


@lru_cache(maxsize=None)
def _calibrate(scenario: str, target: float, tolerance: float, k: float, b: float, seed: int) -> float:
    spec = ScenarioSpec(scenario, k=k, b=b)
    rng = stream(seed, "calibrate", SCENARIOS.index(scenario))
    P, truth = draw_subjects(spec, CALIBRATION_DRAWS, rng)
    T = truth.sample_times(rng)
    base = _censoring_base(spec, CALIBRATION_DRAWS, rng)
    rate = lambda eta: float(np.mean(_censoring(spec, P, eta, base) < T))
    # censoring decreases in eta for every scenario
    if scenario == "IV":
        lo, hi = -1.0, 1.0
        step = lambda x, up: x + (2.0 if up else -2.0) * abs(x if x else 1.0)
    else:
        lo, hi = 0.5, 2.0
        step = lambda x, up: x * 4.0 if up else x / 4.0
    for _ in range(60):
        if rate(lo) >= target:
            break
        lo = step(lo, False)
    else:
        raise RuntimeError("could not bracket the censoring parameter from below")
    for _ in range(60):
        if rate(hi) <= target:
            break
        hi = step(hi, True)
    else:
        raise RuntimeError("could not bracket the censoring parameter from above")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        r = rate(mid)
        if abs(r - target) <= tolerance:
            return mid
        if r > target:
            lo = mid
        else:
            hi = mid
    raise RuntimeError("censoring calibration did not converge")


def calibrate_censoring(spec: ScenarioSpec, target: float, tolerance: float = 0.005, seed: int = 0) -> float:
    """Bisection on ``eta`` so that the Monte Carlo censoring rate is within ``tolerance`` of ``target``.

    ``target == 0`` returns ``inf`` (no censoring is drawn).  Results are
    cached per scenario and target; the draws use common random numbers.
    """
    if target == 0:
        return math.inf
    if not 0 < target < 1:
        raise ValueError("target must lie in [0, 1)")
    return _calibrate(spec.scenario, float(target), float(tolerance), float(spec.k), float(spec.b), int(seed))


@lru_cache(maxsize=None)
def iae_horizon(scenario: str, k: float = 0.1, b: float = 0.0) -> float:
    """0.95 quantile of the event time ``T`` by Monte Carlo (fixed stream, cached)."""
    spec = ScenarioSpec(scenario, k=k, b=b)
    rng = stream(0, "horizon", SCENARIOS.index(scenario))
    _, truth = draw_subjects(spec, CALIBRATION_DRAWS, rng)
    return float(np.quantile(truth.sample_times(rng), 0.95))


def iae(predicted: np.ndarray, truth: TruthOracle, s: float, n_points: int = 200) -> tuple[float, int]:
    """Integrated absolute error on ``n_points`` uniform times over ``[0, s]``, divided by ``s``.

    ``predicted`` is ``(m, n_points)`` survival at ``np.linspace(0, s, n_points)``.
    NaN predictions are replaced by the nearest defined value in time; the
    number of replacements is returned alongside the error.
    """
    times = np.linspace(0.0, s, n_points)
    P = np.array(predicted, float)
    bad = np.isnan(P)
    n_bad = int(bad.sum())
    if n_bad:
        for a in np.flatnonzero(bad.any(axis=1)):
            ok = np.flatnonzero(~bad[a])
            if ok.size == 0:
                raise ValueError("predictor undefined at every quadrature point")
            near = ok[np.abs(ok[None, :] - np.arange(n_points)[:, None]).argmin(axis=1)]
            P[a] = P[a, near]
    err = np.abs(P - truth.survival(times))
    integral = np.trapezoid(err, times, axis=1) if hasattr(np, "trapezoid") else np.trapz(err, times, axis=1)
    return float(np.mean(integral) / s), n_bad
