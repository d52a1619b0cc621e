"""Right-censored subjects with piecewise-constant covariate histories.

Covariate histories are right-continuous step functions in the long-format
sense: a row ``(tstart, tstop, z)`` means the subject carried ``z`` on
``(tstart, tstop]``.  Evaluating a path past its last ``tstop`` carries the
last value forward.

Everything downstream works on a :class:`TransformedDataset`, where each raw
covariate is mapped onto ``[0, 1]`` by the empirical CDF of that covariate
among subjects still at risk at each grid time.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

__all__ = [
    "DataError",
    "MalformedHistoryError",
    "CovariatePath",
    "Dataset",
    "TimeGrid",
    "TransformedDataset",
    "type1_quantile",
    "default_horizon",
    "ingest_paths",
    "ingest_long_format",
    "read_long_csv",
    "read_long_csv_paths",
    "write_long_csv",
    "dataset_to_rows",
    "uncensored_quantile_grid",
    "at_risk_ecdf",
    "transform",
]

REQUIRED_COLUMNS = ("id", "tstart", "tstop", "status")


class DataError(ValueError):
    """Input data violate the long-format or dataset contract."""


class MalformedHistoryError(DataError):
    """A subject's segments overlap, leave gaps or are otherwise inconsistent."""


def _readonly(a, dtype=float):
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class CovariatePath:
    """One subject: covariate history on ``(0, Y]`` plus the event indicator."""

    subject_id: object
    starts: np.ndarray
    stops: np.ndarray
    values: np.ndarray
    delta: int

    def __post_init__(self):
        starts = _readonly(self.starts).reshape(-1)
        stops = _readonly(self.stops).reshape(-1)
        values = np.array(self.values, dtype=float)
        if values.ndim == 1:
            values = values.reshape(1, -1) if starts.size == 1 else values.reshape(-1, 1)
        values.setflags(write=False)
        object.__setattr__(self, "starts", starts)
        object.__setattr__(self, "stops", stops)
        object.__setattr__(self, "values", values)
        sid = self.subject_id
        if starts.size == 0:
            raise MalformedHistoryError(f"subject {sid!r}: no segments")
        if values.shape[0] != starts.size or stops.size != starts.size:
            raise MalformedHistoryError(f"subject {sid!r}: segment arrays disagree in length")
        if starts[0] != 0.0:
            raise MalformedHistoryError(f"subject {sid!r}: history must start at t=0, got {starts[0]}")
        if np.any(stops <= starts):
            raise MalformedHistoryError(f"subject {sid!r}: segment with tstop <= tstart")
        if np.any(stops[:-1] != starts[1:]):
            raise MalformedHistoryError(f"subject {sid!r}: overlapping or gapped segments")
        if not np.all(np.isfinite(values)):
            raise DataError(f"subject {sid!r}: missing or non-finite covariate value")
        if self.delta not in (0, 1):
            raise DataError(f"subject {sid!r}: event indicator must be 0 or 1")
        object.__setattr__(self, "delta", int(self.delta))

    @classmethod
    def constant(cls, subject_id, values, Y, delta) -> "CovariatePath":
        """Time-independent covariates observed on ``(0, Y]``."""
        return cls(subject_id, [0.0], [float(Y)], np.asarray(values, float).reshape(1, -1), delta)

    @property
    def Y(self) -> float:
        return float(self.stops[-1])

    @property
    def p(self) -> int:
        return self.values.shape[1]

    @property
    def is_constant(self) -> bool:
        return self.starts.size == 1

    def value_at(self, t):
        """Covariate vector at ``t`` (LOCF); array ``t`` gives one row per time."""
        idx = np.searchsorted(self.stops, t, side="left")
        idx = np.minimum(idx, self.stops.size - 1)
        return self.values[idx]

    def __eq__(self, other):
        if not isinstance(other, CovariatePath):
            return NotImplemented
        return (
            self.subject_id == other.subject_id
            and self.delta == other.delta
            and np.array_equal(self.starts, other.starts)
            and np.array_equal(self.stops, other.stops)
            and np.array_equal(self.values, other.values)
        )

    def __hash__(self):
        return hash((self.subject_id, self.delta, self.stops.tobytes()))


def type1_quantile(x, prob):
    """Left-continuous inverse of the empirical CDF: ``x_(ceil(n * prob))``.

    ``prob`` may be a :class:`fractions.Fraction`-like pair ``(num, den)`` to
    keep ``n * prob`` exact.
    """
    xs = np.sort(np.asarray(x, dtype=float))
    n = xs.size
    if n == 0:
        raise DataError("quantile of an empty sample")
    if isinstance(prob, tuple):
        num, den = prob
        rank = -(-n * num // den)
    else:
        rank = math.ceil(n * prob - 1e-12)
    rank = min(max(rank, 1), n)
    return float(xs[rank - 1])


def default_horizon(Y, delta) -> float:
    """0.95 quantile of the uncensored times."""
    ev = np.asarray(Y, float)[np.asarray(delta) == 1]
    return type1_quantile(ev, (95, 100))


def _id_key(sid):
    try:
        return (0, float(sid), "")
    except (TypeError, ValueError):
        return (1, 0.0, str(sid))


class Dataset:
    """Immutable collection of :class:`CovariatePath` sharing dimension ``p``.

    Parameters
    ----------
    subjects : sequence of CovariatePath
    horizon : float, optional
        Upper end ``s`` of the analysis window.  Defaults to the 0.95
        quantile of the uncensored times.
    """

    def __init__(self, subjects: Sequence[CovariatePath], horizon: float | None = None):
        subjects = tuple(subjects)
        if not subjects:
            raise DataError("dataset has no subjects")
        p = subjects[0].p
        for s in subjects:
            if s.p != p:
                raise DataError(f"subject {s.subject_id!r} has {s.p} covariates, expected {p}")
        self.subjects = subjects
        self.p = p
        self.Y = _readonly([s.Y for s in subjects])
        self.delta = _readonly([s.delta for s in subjects], dtype=np.int64)
        if not np.any(self.delta == 1):
            raise DataError("dataset has no events; no hazard is estimable")
        self.horizon = float(horizon) if horizon is not None else default_horizon(self.Y, self.delta)
        if not self.horizon > 0:
            raise DataError("horizon must be positive")
        self._constant = all(s.is_constant for s in subjects)
        if self._constant:
            self._Z = _readonly(np.vstack([s.values for s in subjects]))

    @classmethod
    def from_arrays(cls, Y, delta, Z, ids=None, horizon=None) -> "Dataset":
        """Time-independent covariates ``Z`` with shape ``(n, p)``."""
        Z = np.asarray(Z, float)
        if Z.ndim == 1:
            Z = Z[:, None]
        ids = range(len(Y)) if ids is None else ids
        subjects = [CovariatePath.constant(i, z, y, d) for i, y, d, z in zip(ids, Y, delta, Z)]
        return cls(subjects, horizon)

    @property
    def n(self) -> int:
        return len(self.subjects)

    @property
    def ids(self) -> list:
        return [s.subject_id for s in self.subjects]

    @property
    def time_independent(self) -> bool:
        return self._constant

    def __len__(self):
        return self.n

    def __iter__(self):
        return iter(self.subjects)

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return self.horizon == other.horizon and self.subjects == other.subjects

    __hash__ = None

    def covariates_at(self, t: float) -> np.ndarray:
        """``(n, p)`` covariates at time ``t`` (carried forward past each ``Y_i``)."""
        if self._constant:
            return self._Z
        return np.vstack([s.value_at(t) for s in self.subjects])

    def covariates_at_times(self, times) -> np.ndarray:
        """``(len(times), n, p)`` covariate values at each time."""
        times = np.asarray(times, float)
        if self._constant:
            return np.broadcast_to(self._Z, (times.size, self.n, self.p))
        out = np.empty((times.size, self.n, self.p))
        for i, s in enumerate(self.subjects):
            out[:, i, :] = s.value_at(times)
        return out

    def baseline_covariates(self) -> np.ndarray:
        """Values on the first segment, i.e. at ``t = 0+``."""
        if self._constant:
            return self._Z
        return np.vstack([s.values[0] for s in self.subjects])

    def event_covariates(self) -> np.ndarray:
        """Values at each subject's own observed time ``Y_i``."""
        if self._constant:
            return self._Z
        return np.vstack([s.values[-1] for s in self.subjects])

    def subset(self, indices, horizon: float | None = None) -> "Dataset":
        idx = np.asarray(indices)
        if idx.dtype == bool:
            idx = np.flatnonzero(idx)
        return Dataset([self.subjects[i] for i in idx], self.horizon if horizon is None else horizon)


def _parse_number(value, sid, column):
    if value is None:
        raise DataError(f"subject {sid!r}: missing value in column {column!r}")
    if isinstance(value, str):
        value = value.strip()
        if value == "":
            raise DataError(f"subject {sid!r}: missing value in column {column!r}")
    try:
        x = float(value)
    except (TypeError, ValueError):
        raise DataError(f"subject {sid!r}: non-numeric value {value!r} in column {column!r}") from None
    if not math.isfinite(x):
        raise DataError(f"subject {sid!r}: missing or non-finite value in column {column!r}")
    return x


def ingest_paths(rows: Iterable[Mapping], covariates: Sequence[str] | None = None) -> list:
    """Covariate histories from long-format records, without dataset-level checks.

    Each record carries ``id, tstart, tstop, status`` and the covariate
    columns.  Rows of one subject may appear in any order and interleaved with
    other subjects; they are sorted by ``tstart``.  Subjects are ordered by
    id (numerically when every id parses as a number).
    """
    grouped: dict = {}
    for row in rows:
        missing = [c for c in REQUIRED_COLUMNS if c not in row]
        if missing:
            raise DataError(f"row is missing required columns {missing}")
        if covariates is None:
            covariates = [k for k in row.keys() if k not in REQUIRED_COLUMNS]
            if not covariates:
                raise DataError("no covariate columns")
        sid = row["id"]
        rec = (
            _parse_number(row["tstart"], sid, "tstart"),
            _parse_number(row["tstop"], sid, "tstop"),
            _parse_number(row["status"], sid, "status"),
            [_parse_number(row.get(c), sid, c) for c in covariates],
        )
        grouped.setdefault(sid, []).append(rec)
    if not grouped:
        raise DataError("no rows")
    subjects = []
    for sid in sorted(grouped, key=_id_key):
        recs = sorted(grouped[sid], key=lambda r: r[0])
        status = [r[2] for r in recs]
        if any(s not in (0.0, 1.0) for s in status):
            raise DataError(f"subject {sid!r}: status must be 0 or 1")
        if any(s == 1.0 for s in status[:-1]):
            raise MalformedHistoryError(f"subject {sid!r}: status=1 on a non-final row")
        subjects.append(
            CovariatePath(
                sid,
                [r[0] for r in recs],
                [r[1] for r in recs],
                np.array([r[3] for r in recs], float),
                int(status[-1]),
            )
        )
    return subjects


def ingest_long_format(
    rows: Iterable[Mapping], covariates: Sequence[str] | None = None, horizon: float | None = None
) -> Dataset:
    """Build a :class:`Dataset` from long-format records (see :func:`ingest_paths`)."""
    return Dataset(ingest_paths(rows, covariates), horizon)


def read_long_csv(path, horizon: float | None = None) -> Dataset:
    """Read a long-format CSV file (header required)."""
    return Dataset(read_long_csv_paths(path), horizon)


def read_long_csv_paths(path) -> list:
    """Histories from a long-format CSV file; no event is required."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise DataError(f"{path}: empty file")
        header = [h.strip() for h in reader.fieldnames]
        missing = [c for c in REQUIRED_COLUMNS if c not in header]
        if missing:
            raise DataError(f"{path}: header lacks columns {missing}")
        reader.fieldnames = header
        covs = [h for h in header if h not in REQUIRED_COLUMNS]
        return ingest_paths(reader, covs)


def dataset_to_rows(data: Dataset, names: Sequence[str] | None = None) -> list[dict]:
    names = list(names) if names is not None else [f"z{j + 1}" for j in range(data.p)]
    rows = []
    for s in data:
        last = s.starts.size - 1
        for j in range(s.starts.size):
            row = {
                "id": s.subject_id,
                "tstart": float(s.starts[j]),
                "tstop": float(s.stops[j]),
                "status": s.delta if j == last else 0,
            }
            row.update({nm: float(v) for nm, v in zip(names, s.values[j])})
            rows.append(row)
    return rows


def write_long_csv(data: Dataset, path, names: Sequence[str] | None = None) -> None:
    """Write ``data`` in long format; floats use ``repr`` so reading back is exact."""
    rows = dataset_to_rows(data, names)
    fields = list(rows[0].keys())
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(fields)
        for r in rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in (r[f] for f in fields)])


@dataclass(frozen=True, eq=False)
class TimeGrid:
    """Evaluation times ``t_1 < ... < t_q`` with weights summing to one."""

    times: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        times = _readonly(self.times).reshape(-1)
        weights = _readonly(self.weights).reshape(-1)
        if times.size == 0 or times.size != weights.size:
            raise DataError("grid times and weights must be non-empty and equally long")
        if np.any(np.diff(times) <= 0):
            raise DataError("grid times must be strictly increasing")
        if np.any(weights < 0) or abs(weights.sum() - 1.0) > 1e-12:
            raise DataError("grid weights must be nonnegative and sum to 1")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "weights", weights)

    @classmethod
    def uniform(cls, times) -> "TimeGrid":
        times = np.asarray(times, float)
        return cls(times, np.full(times.size, 1.0 / times.size))

    @property
    def q(self) -> int:
        return self.times.size

    def nearest_index(self, t):
        """Index of the nearest grid time; ties go to the earlier time."""
        t = np.asarray(t, float)
        hi = np.clip(np.searchsorted(self.times, t, side="left"), 0, self.q - 1)
        lo = np.clip(hi - 1, 0, self.q - 1)
        use_lo = np.abs(t - self.times[lo]) <= np.abs(self.times[hi] - t)
        return np.where(use_lo, lo, hi)

    def __eq__(self, other):
        if not isinstance(other, TimeGrid):
            return NotImplemented
        return np.array_equal(self.times, other.times) and np.array_equal(self.weights, other.weights)

    __hash__ = None


def uncensored_quantile_grid(data: Dataset, q: int = 20) -> TimeGrid:
    """Grid at the ``k/(q+1)`` quantiles of the uncensored times, clamped to ``(0, s]``."""
    if q < 1:
        raise DataError("q must be at least 1")
    ev = data.Y[data.delta == 1]
    times = [min(type1_quantile(ev, (k, q + 1)), data.horizon) for k in range(1, q + 1)]
    times = np.unique(np.asarray(times))
    if times.size < min(2, q):
        raise DataError(f"only {times.size} distinct uncensored quantiles; need at least 2")
    return TimeGrid.uniform(times)


def at_risk_ecdf(data: Dataset, t: float, coordinate: int, z: float) -> float:
    """Fraction of subjects at risk at ``t`` whose covariate ``coordinate`` is ``<= z``."""
    risk = data.Y >= t
    if not np.any(risk):
        raise DataError(f"empty risk set at t={t}")
    vals = data.covariates_at(t)[risk, coordinate]
    return float(np.mean(vals <= z))


def _ecdf_columns(table: np.ndarray, z: np.ndarray) -> np.ndarray:
    """Column-wise ECDF of sorted ``table`` (m, p) evaluated at ``z`` (..., p)."""
    out = np.empty(z.shape, float)
    m = table.shape[0]
    for c in range(table.shape[1]):
        out[..., c] = np.searchsorted(table[:, c], z[..., c], side="right") / m
    return out


@dataclass(frozen=True, eq=False)
class TransformedDataset:
    """Covariates mapped to ``[0, 1]`` by the at-risk ECDF at each grid time.

    ``values[k, i]`` is subject ``i``'s covariate at ``t_k`` (carried forward
    past ``Y_i``) passed through the ECDF table of grid time ``k``.  Only
    entries with ``at_risk[k, i]`` are the transformed dataset proper; the
    rest are needed when a subject is routed at a time anchored to a grid
    point past its own ``Y_i``.

    Any time ``u`` is anchored to its nearest grid time ``k(u)``: the
    transformed covariate of a subject at ``u`` is ``values[k(u)]``.
    """

    source: Dataset
    grid: TimeGrid
    tables: tuple
    values: np.ndarray
    at_risk: np.ndarray
    baseline: np.ndarray
    anchor: np.ndarray
    event_values: np.ndarray = field(init=False)

    def __post_init__(self):
        ev = self.values[self.anchor, np.arange(self.source.n)]
        ev.setflags(write=False)
        object.__setattr__(self, "event_values", ev)

    @property
    def n(self) -> int:
        return self.source.n

    @property
    def p(self) -> int:
        return self.source.p

    @property
    def q(self) -> int:
        return self.grid.q

    @property
    def X(self) -> np.ndarray:
        """``(q, n, p)`` transformed covariates, NaN where not at risk."""
        return np.where(self.at_risk[:, :, None], self.values, np.nan)

    def transform_raw(self, k: int, z) -> np.ndarray:
        """Map raw covariates ``z`` (..., p) through the ECDF table of grid time ``k``."""
        return _ecdf_columns(self.tables[k], np.asarray(z, float))

    def transform_paths(self, paths: Sequence[CovariatePath]) -> np.ndarray:
        """``(m, q, p)`` grid-anchored transformed covariates of new histories."""
        times = self.grid.times
        out = np.empty((len(paths), self.q, self.p))
        raw = np.empty((len(paths), self.q, self.p))
        for a, path in enumerate(paths):
            if path.p != self.p:
                raise DataError(f"history {path.subject_id!r} has {path.p} covariates, expected p={self.p}")
            raw[a] = path.value_at(times)
        for k in range(self.q):
            out[:, k, :] = self.transform_raw(k, raw[:, k, :])
        return out


def transform(data: Dataset, grid: TimeGrid) -> TransformedDataset:
    """Apply the at-risk ECDF transform at every grid time."""
    n, p, q = data.n, data.p, grid.q
    raw = data.covariates_at_times(grid.times)
    at_risk = data.Y[None, :] >= grid.times[:, None]
    values = np.empty((q, n, p))
    tables = []
    for k in range(q):
        if not np.any(at_risk[k]):
            raise DataError(f"empty risk set at grid time {grid.times[k]}; grid must lie within the data support")
        table = np.sort(raw[k][at_risk[k]], axis=0)
        table.setflags(write=False)
        tables.append(table)
        values[k] = _ecdf_columns(table, raw[k])
    base_raw = data.baseline_covariates()
    baseline = _ecdf_columns(np.sort(base_raw, axis=0), base_raw)
    anchor = grid.nearest_index(data.Y).astype(np.int64)
    for a in (values, at_risk, baseline, anchor):
        a.setflags(write=False)
    return TransformedDataset(data, grid, tuple(tables), values, at_risk, baseline, anchor)
