"""Replicated scenario benchmarks: generate, fit, score by integrated absolute error.

Every replicate draws its training sample, its 500 fresh test subjects and
its fitting randomness from streams keyed on ``(seed, purpose, scenario, n,
censoring, replicate)``.  Methods sharing a replicate therefore see the
same data, which is what paired comparisons need.
"""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from ._rng import stream
from .forest import fit_forest, forest_survival
from .kernels import BandwidthPolicy
from .scenarios import SCENARIOS, ScenarioSpec, generate, iae, iae_horizon, new_subjects
from .survival_data import transform, uncensored_quantile_grid
from .tree import select_by_cv, predict_survival

__all__ = ["BenchmarkConfig", "BenchmarkRecord", "BenchmarkReport", "run_benchmark", "method_label"]

log = logging.getLogger(__name__)

METHODS = ("tree", "forest")
FIELDS = ("scenario", "n", "censoring", "method", "replicate", "IAE")


@dataclass
class BenchmarkConfig:
    """One benchmark cell (or a product of cells) with the fitting defaults."""

    scenarios: tuple = ("I",)
    sizes: tuple = (200,)
    censoring: tuple = (0.0,)
    methods: tuple = METHODS
    criteria: tuple = ("delta_icon",)
    replicates: int = 50
    seed: int = 0
    q: int = 20
    n_min: float = 15
    folds: int = 10
    B: int = 500
    m: int | None = None
    resample_mode: str = "bootstrap"
    bandwidth: str = "global_fixed"
    n_new: int = 500
    n_points: int = 200
    k: float = 0.1
    b: float = 0.0

    def __post_init__(self):
        for sc in self.scenarios:
            if sc not in SCENARIOS:
                raise ValueError(f"unknown scenario {sc!r}; expected one of {', '.join(SCENARIOS)}")
        for meth in self.methods:
            if meth not in METHODS:
                raise ValueError(f"unknown method {meth!r}")
        if self.replicates < 1:
            raise ValueError("replicates must be at least 1")


@dataclass(frozen=True)
class BenchmarkRecord:
    scenario: str
    n: int
    censoring: float
    method: str
    replicate: int
    IAE: float
    error: str | None = None
    seconds: float = 0.0


@dataclass
class BenchmarkReport:
    records: list = field(default_factory=list)

    @property
    def failures(self) -> int:
        return sum(r.error is not None for r in self.records)

    @property
    def failure_rate(self) -> float:
        return self.failures / len(self.records) if self.records else 0.0

    def values(self, scenario, n, censoring, method) -> np.ndarray:
        """IAE per replicate (NaN for failed replicates), ordered by replicate."""
        rs = sorted((r for r in self.records if (r.scenario, r.n, r.censoring, r.method) == (scenario, n, censoring, method)),
                    key=lambda r: r.replicate)
        return np.array([r.IAE for r in rs])

    def summary(self) -> list:
        """``(scenario, n, censoring, method, mean IAE x 1000, replicates used)`` per cell."""
        cells = {}
        for r in self.records:
            cells.setdefault((r.scenario, r.n, r.censoring, r.method), []).append(r.IAE)
        out = []
        for key, vals in cells.items():
            v = np.array(vals)
            ok = v[~np.isnan(v)]
            out.append((*key, float(ok.mean() * 1000) if ok.size else math.nan, int(ok.size)))
        return out

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(FIELDS)
            for r in self.records:
                w.writerow([r.scenario, r.n, r.censoring, r.method, r.replicate, repr(float(r.IAE))])


def method_label(method: str, criterion: str) -> str:
    """``tree`` / ``forest`` for the default criterion, suffixed otherwise."""
    return method if criterion == "delta_icon" else f"{method}-{criterion}"


def _key(scenario, n, censoring, r):
    return SCENARIOS.index(scenario), int(n), int(round(censoring * 100)), int(r)


def run_replicate(cfg: BenchmarkConfig, scenario: str, n: int, censoring: float, r: int) -> list:
    """All requested methods on one simulated replicate."""
    key = _key(scenario, n, censoring, r)
    spec = ScenarioSpec(scenario, n=n, target_censoring=censoring, k=cfg.k, b=cfg.b)
    s = iae_horizon(scenario, cfg.k, cfg.b)
    times = np.linspace(0.0, s, cfg.n_points)
    out = []
    try:
        sim = generate(spec, stream(cfg.seed, "bench-data", *key))
        tdata = transform(sim.dataset, uncensored_quantile_grid(sim.dataset, cfg.q))
        paths, truth = new_subjects(spec, cfg.n_new, stream(cfg.seed, "bench-new", *key))
    except Exception as exc:  # a failed draw fails every method of the replicate
        msg = f"{type(exc).__name__}: {exc}"
        return [BenchmarkRecord(scenario, n, censoring, method_label(m, c), r, math.nan, msg)
                for c in cfg.criteria for m in cfg.methods]
    policy = BandwidthPolicy(cfg.bandwidth)
    for crit in cfg.criteria:
        for meth in cfg.methods:
            label = method_label(meth, crit)
            t0 = time.perf_counter()
            try:
                if meth == "tree":
                    cv = select_by_cv(tdata, policy, cfg.n_min, cfg.folds, rng=stream(cfg.seed, "bench-cv", *key),
                                      split_criterion=crit)
                    pred = predict_survival(cv.tree, paths, times)
                else:
                    fseed = int(stream(cfg.seed, "bench-forest", *key).integers(2**63))
                    forest = fit_forest(tdata, policy, cfg.B, cfg.m, cfg.n_min, cfg.resample_mode, fseed, crit)
                    pred = forest_survival(forest, paths, times)
                value, n_bad = iae(pred, truth, s, cfg.n_points)
                if n_bad:
                    log.warning("%s n=%d rep %d %s: %d undefined predictions replaced", scenario, n, r, label, n_bad)
                if not np.isfinite(value):
                    raise FloatingPointError("non-finite IAE")
                out.append(BenchmarkRecord(scenario, n, censoring, label, r, float(value), None,
                                           time.perf_counter() - t0))
            except Exception as exc:  # recorded, the run continues
                log.warning("%s n=%d rep %d %s failed: %s", scenario, n, r, label, exc)
                out.append(BenchmarkRecord(scenario, n, censoring, label, r, math.nan, f"{type(exc).__name__}: {exc}",
                                           time.perf_counter() - t0))
    return out


def run_benchmark(cfg: BenchmarkConfig, progress=None) -> BenchmarkReport:
    """Every (scenario, n, censoring, replicate) cell of ``cfg``.

    ``progress``, if given, is called with each replicate's records.
    """
    report = BenchmarkReport()
    for sc in cfg.scenarios:
        for n in cfg.sizes:
            for cens in cfg.censoring:
                for r in range(cfg.replicates):
                    recs = run_replicate(cfg, sc, int(n), float(cens), r)
                    report.records.extend(recs)
                    if progress is not None:
                        progress(recs)
    return report
