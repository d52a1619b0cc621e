"""Command-line entry point: ``rocsurv <command> [options]``.

Every option may also come from a JSON file passed with ``--config``; flags
given on the command line override the file.  Exit codes: 0 success,
1 usage error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import math
import sys
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from ._rng import stream
from .benchmark import BenchmarkConfig, run_benchmark
from .concordance import con_t_grid
from .forest import fit_forest, forest_hazard_paths, forest_survival
from .io import load_model, save_model
from .kernels import BandwidthPolicy, clamp_time, epanechnikov
from .scenarios import SCENARIOS, ScenarioSpec, generate
from .survival_data import DataError, read_long_csv, read_long_csv_paths, transform, uncensored_quantile_grid, \
    write_long_csv
from .tree import PartitionTree, predict_hazard, predict_survival, select_by_cv

log = logging.getLogger("rocsurv")

CONFIG_SCHEMA = "rocsurv.config/1"
EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


@dataclass
class RunConfig:
    """Parameters of one command; unset fields keep their defaults."""

    schema: str = CONFIG_SCHEMA
    data: str | None = None
    out: str | None = None
    model: str | None = None
    histories: str | None = None
    predictions: str | None = None
    report: str | None = None
    times: list | None = None
    hazard: bool = False
    horizon: float | None = None
    q: int = 20
    bandwidth: str = "global_fixed"
    bandwidth_c: float | None = None
    n_min: float = 15
    criterion: str = "delta_icon"
    folds: int = 10
    selection: str = "max"
    B: int = 500
    m: int | None = None
    resample: str = "bootstrap"
    seed: int | None = None
    scenario: list = field(default_factory=lambda: ["I"])
    n: list = field(default_factory=lambda: [200])
    censoring: list = field(default_factory=lambda: [0.0])
    methods: list = field(default_factory=lambda: ["tree", "forest"])
    criteria: list = field(default_factory=lambda: ["delta_icon"])
    replicates: int = 50
    k: float = 0.1
    b: float = 0.0

    def check(self, command: str) -> None:
        if self.schema != CONFIG_SCHEMA:
            raise UsageError(f"unsupported config schema {self.schema!r}; expected {CONFIG_SCHEMA!r}")
        if command in ("fit-tree", "fit-forest", "benchmark", "simulate") and self.seed is None:
            raise UsageError(f"{command} needs --seed")
        if self.seed is not None and not 0 <= self.seed < 2**64:
            raise UsageError("seed must be a 64-bit unsigned integer")
        rules = [
            (self.q >= 1, "q must be at least 1"),
            (self.n_min >= 2, "n_min must be at least 2"),
            (self.folds >= 2, "folds must be at least 2"),
            (self.B >= 1, "B must be at least 1"),
            (self.m is None or self.m >= 1, "m must be at least 1"),
            (self.replicates >= 1, "replicates must be at least 1"),
            (self.bandwidth in ("global_fixed", "node_adaptive"), "bandwidth must be global_fixed or node_adaptive"),
            (self.bandwidth_c is None or self.bandwidth_c > 0, "bandwidth_c must be positive"),
            (self.criterion in ("delta_icon", "global_icon"), "criterion must be delta_icon or global_icon"),
            (all(c in ("delta_icon", "global_icon") for c in self.criteria), "criteria must be delta_icon/global_icon"),
            (self.selection in ("max", "one_se"), "selection must be max or one_se"),
            (self.resample in ("bootstrap", "subsample_honest", "none"), "resample must be bootstrap, subsample_honest or none"),
            (all(s in SCENARIOS for s in self.scenario), f"scenario must be one of {', '.join(SCENARIOS)}"),
            (all(0 <= c < 1 for c in self.censoring), "censoring must lie in [0, 1)"),
            (all(v >= 10 for v in self.n), "n must be at least 10"),
            (all(mm in ("tree", "forest") for mm in self.methods), "methods must be tree and/or forest"),
        ]
        for ok, msg in rules:
            if not ok:
                raise UsageError(msg)
        for name in {"fit-tree": ["data", "out"], "fit-forest": ["data", "out"], "predict": ["model", "histories", "times"],
                     "eval-icon": ["data", "predictions"], "simulate": ["out"]}.get(command, []):
            if getattr(self, name) is None:
                raise UsageError(f"{command} needs --{name.replace('_', '-')}")

    @property
    def policy(self) -> BandwidthPolicy:
        return BandwidthPolicy(self.bandwidth, self.bandwidth_c)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _floats(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _ints(text):
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _words(text):
    return [v.strip() for v in text.split(",") if v.strip()]


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="rocsurv", description="ROC-guided survival trees and ensembles.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    S = argparse.SUPPRESS

    def common(sp, seed=True):
        sp.add_argument("--config", default=S, help="JSON file of options; flags override it")
        if seed:
            sp.add_argument("--seed", type=int, default=S, help="64-bit seed for every random stream")

    def fitting(sp):
        sp.add_argument("--data", default=S, help="long-format CSV: id,tstart,tstop,status,z1..zp")
        sp.add_argument("--out", default=S, help="model JSON path")
        sp.add_argument("--horizon", type=float, default=S, help="analysis window s (default: 0.95 quantile of event times)")
        sp.add_argument("--q", type=int, default=S, help="number of grid quantiles (default 20)")
        sp.add_argument("--bandwidth", default=S, choices=["global_fixed", "node_adaptive"])
        sp.add_argument("--bandwidth-c", dest="bandwidth_c", type=float, default=S,
                        help="constant c of the node-adaptive bandwidth (default s/8)")
        sp.add_argument("--n-min", dest="n_min", type=float, default=S, help="minimum node size (default 15)")
        sp.add_argument("--criterion", default=S, choices=["delta_icon", "global_icon"])

    sp = sub.add_parser("fit-tree", help="grow, prune and cross-validate one tree")
    common(sp)
    fitting(sp)
    sp.add_argument("--folds", type=int, default=S, help="cross-validation folds (default 10)")
    sp.add_argument("--selection", default=S, choices=["max", "one_se"], help="rule picking beta from CV scores")
    sp.add_argument("--report", default=S, help="write the concordance report (JSON) here")

    sp = sub.add_parser("fit-forest", help="fit an ensemble of unpruned trees")
    common(sp)
    fitting(sp)
    sp.add_argument("--B", type=int, default=S, help="number of trees (default 500)")
    sp.add_argument("--m", type=int, default=S, help="coordinates tried per split (default ceil(sqrt(p)))")
    sp.add_argument("--resample", default=S, choices=["bootstrap", "subsample_honest", "none"])

    sp = sub.add_parser("predict", help="survival (and hazard) of new histories")
    common(sp, seed=False)
    sp.add_argument("--model", default=S, help="model JSON")
    sp.add_argument("--histories", default=S, help="long-format CSV of new histories")
    sp.add_argument("--times", type=_floats, default=S, help="comma-separated prediction times")
    sp.add_argument("--hazard", action="store_true", default=S, help="add a hazard column")
    sp.add_argument("--out", default=S, help="CSV path (default stdout)")

    sp = sub.add_parser("benchmark", help="replicated scenario study scored by IAE")
    common(sp)
    sp.add_argument("--scenario", type=_words, default=S, help="comma-separated scenarios I..VII")
    sp.add_argument("--n", type=_ints, default=S, help="comma-separated sample sizes")
    sp.add_argument("--censoring", type=_floats, default=S, help="comma-separated target censoring rates")
    sp.add_argument("--methods", type=_words, default=S, help="tree,forest")
    sp.add_argument("--criteria", type=_words, default=S, help="delta_icon,global_icon")
    sp.add_argument("--replicates", type=int, default=S)
    sp.add_argument("--B", type=int, default=S)
    sp.add_argument("--m", type=int, default=S)
    sp.add_argument("--folds", type=int, default=S)
    sp.add_argument("--n-min", dest="n_min", type=float, default=S)
    sp.add_argument("--q", type=int, default=S)
    sp.add_argument("--k", type=float, default=S, help="Scenario V drift slope")
    sp.add_argument("--b", type=float, default=S, help="Scenario V drift intercept")
    sp.add_argument("--out", default=S, help="CSV of per-replicate IAE")

    sp = sub.add_parser("simulate", help="export one simulated dataset in long format")
    common(sp)
    sp.add_argument("--scenario", type=_words, default=S)
    sp.add_argument("--n", type=_ints, default=S)
    sp.add_argument("--censoring", type=_floats, default=S)
    sp.add_argument("--k", type=float, default=S)
    sp.add_argument("--b", type=float, default=S)
    sp.add_argument("--out", default=S)

    sp = sub.add_parser("eval-icon", help="score external predictions by ICON on a dataset")
    common(sp, seed=False)
    sp.add_argument("--data", default=S, help="long-format CSV with the observed outcomes")
    sp.add_argument("--predictions", default=S, help="CSV with id,t,survival[,hazard]")
    sp.add_argument("--horizon", type=float, default=S)
    sp.add_argument("--q", type=int, default=S)
    sp.add_argument("--report", default=S, help="write the concordance report (JSON) here")
    return p


def resolve_config(args: argparse.Namespace) -> RunConfig:
    """Defaults, then the JSON file, then explicit flags."""
    values = {}
    path = getattr(args, "config", None)
    if path is not None:
        try:
            with open(path, encoding="utf-8") as fh:
                values = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(values, dict):
            raise UsageError("config file must hold a JSON object")
    flags = {k: v for k, v in vars(args).items() if k not in ("config", "command", "verbose")}
    values.update(flags)
    known = {f.name for f in dataclasses.fields(RunConfig)}
    unknown = sorted(set(values) - known)
    if unknown:
        raise UsageError(f"unknown config keys: {', '.join(unknown)}")
    for name in ("scenario", "criteria", "methods"):
        if isinstance(values.get(name), str):
            values[name] = [values[name]]
    for name in ("n", "censoring"):
        if isinstance(values.get(name), (int, float)):
            values[name] = [values[name]]
    return RunConfig(**values)


# -- commands ---------------------------------------------------------------------


def _load_training(cfg: RunConfig):
    data = read_long_csv(cfg.data, cfg.horizon)
    return transform(data, uncensored_quantile_grid(data, cfg.q))


def cmd_fit_tree(cfg: RunConfig, out=None) -> int:
    out = out or sys.stdout
    tdata = _load_training(cfg)
    print(f"fit-tree: n={tdata.n} p={tdata.p} q={tdata.q} n_min={cfg.n_min:g} folds={cfg.folds} "
          f"criterion={cfg.criterion} seed={cfg.seed}", file=out)
    cv = select_by_cv(tdata, cfg.policy, cfg.n_min, cfg.folds, rng=stream(cfg.seed, "cv"),
                      split_criterion=cfg.criterion, seed=cfg.seed, selection=cfg.selection)
    tree = cv.tree
    report = tree.icon()
    seq = cv.sequence
    print(f"ICON {report.icon:.6f}", file=out)
    print(f"leaves {tree.n_leaves}", file=out)
    print("pruning trace", file=out)
    print(f"{'q':>3} {'alpha':>12} {'beta':>12} {'leaves':>6} {'cv_icon':>9}", file=out)
    for j, (a, b) in enumerate(zip(seq.alphas, seq.betas)):
        mark = "  <- beta*" if b == cv.beta_star else ""
        print(f"{j:>3} {a:>12.6g} {b:>12.6g} {seq.subtrees[j].n_leaves:>6} {cv.cv_scores[j]:>9.5f}{mark}", file=out)
    if cv.skipped_folds:
        print(f"skipped folds: {cv.skipped_folds}", file=out)
    save_model(tree, cfg.out)
    if cfg.report is not None:
        with open(cfg.report, "w", encoding="utf-8") as fh:
            fh.write(report.to_json() + "\n")
    print(f"model written to {cfg.out}", file=out)
    return EXIT_OK


def cmd_fit_forest(cfg: RunConfig, out=None) -> int:
    out = out or sys.stdout
    tdata = _load_training(cfg)
    m = math.ceil(math.sqrt(tdata.p)) if cfg.m is None else cfg.m
    if m > tdata.p:
        raise UsageError(f"m={m} exceeds the covariate dimension p={tdata.p}")
    print(f"fit-forest: B={cfg.B} m={m} n_min={cfg.n_min:g} resample={cfg.resample} criterion={cfg.criterion} "
          f"n={tdata.n} p={tdata.p} q={tdata.q} seed={cfg.seed}", file=out)
    forest = fit_forest(tdata, cfg.policy, cfg.B, m, cfg.n_min, cfg.resample, cfg.seed, cfg.criterion)
    leaves = np.array([t.n_leaves for t in forest.trees])
    print(f"trees {forest.B}, mean leaves {leaves.mean():.1f}", file=out)
    save_model(forest, cfg.out)
    print(f"model written to {cfg.out}", file=out)
    return EXIT_OK


def cmd_predict(cfg: RunConfig, out=None) -> int:
    out = out or sys.stdout
    model = load_model(cfg.model)
    paths = read_long_csv_paths(cfg.histories)
    p = model.tdata.p
    for path in paths:
        if path.p != p:
            raise DataError(f"history {path.subject_id!r} has {path.p} covariates; the model expects p={p}")
    times = np.asarray(cfg.times, float)
    if np.any(times < 0):
        raise UsageError("prediction times must be nonnegative")
    if isinstance(model, PartitionTree):
        surv = predict_survival(model, paths, times)
        haz = predict_hazard(model, paths, times) if cfg.hazard else None
    else:
        surv = forest_survival(model, paths, times)
        haz = np.column_stack([forest_hazard_paths(model, paths, t) for t in times]) if cfg.hazard else None
    fh = open(cfg.out, "w", newline="", encoding="utf-8") if cfg.out else out
    try:
        w = csv.writer(fh)
        w.writerow(["id", "t", "survival"] + (["hazard"] if cfg.hazard else []))
        for a, path in enumerate(paths):
            for j, t in enumerate(times):
                row = [path.subject_id, repr(float(t)), repr(float(surv[a, j]))]
                if cfg.hazard:
                    row.append("" if np.isnan(haz[a, j]) else repr(float(haz[a, j])))
                w.writerow(row)
    finally:
        if fh is not out:
            fh.close()
    return EXIT_OK


def cmd_benchmark(cfg: RunConfig, out=None) -> int:
    out = out or sys.stdout
    bc = BenchmarkConfig(
        scenarios=tuple(cfg.scenario), sizes=tuple(cfg.n), censoring=tuple(cfg.censoring), methods=tuple(cfg.methods),
        criteria=tuple(cfg.criteria), replicates=cfg.replicates, seed=cfg.seed, q=cfg.q, n_min=cfg.n_min,
        folds=cfg.folds, B=cfg.B, m=cfg.m, resample_mode=cfg.resample, bandwidth=cfg.bandwidth, k=cfg.k, b=cfg.b,
    )
    print(f"benchmark: scenarios={','.join(bc.scenarios)} n={bc.sizes} censoring={bc.censoring} "
          f"replicates={bc.replicates} B={bc.B} seed={bc.seed}", file=out)

    def progress(recs):
        for r in recs:
            val = "FAILED " + r.error if r.error else f"{r.IAE * 1000:.2f}"
            print(f"{r.scenario:>4} n={r.n} cens={r.censoring:g} {r.method:<8} rep {r.replicate:>3}  IAEx1000 {val}",
                  file=out, flush=True)

    report = run_benchmark(bc, progress)
    print("mean IAE x 1000", file=out)
    for sc, n, cens, meth, mean, used in report.summary():
        print(f"{sc:>4} n={n} cens={cens:g} {meth:<8} {mean:8.2f}  ({used} replicates)", file=out)
    if cfg.out is not None:
        report.to_csv(cfg.out)
    if report.failure_rate > 0.10:
        print(f"{report.failures} of {len(report.records)} fits failed", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


def cmd_simulate(cfg: RunConfig, out=None) -> int:
    out = out or sys.stdout
    if len(cfg.scenario) != 1 or len(cfg.n) != 1 or len(cfg.censoring) != 1:
        raise UsageError("simulate takes a single scenario, n and censoring")
    spec = ScenarioSpec(cfg.scenario[0], n=cfg.n[0], target_censoring=cfg.censoring[0], k=cfg.k, b=cfg.b)
    sim = generate(spec, stream(cfg.seed, "simulate", SCENARIOS.index(spec.scenario)))
    write_long_csv(sim.dataset, cfg.out)
    print(f"simulate: scenario {spec.scenario} n={spec.n} censoring {sim.censoring_rate:.3f} written to {cfg.out}",
          file=out)
    return EXIT_OK


def _read_predictions(path):
    table = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        cols = reader.fieldnames or []
        if not {"id", "t", "survival"} <= set(cols):
            raise DataError(f"{path}: need columns id,t,survival")
        has_h = "hazard" in cols
        for row in reader:
            try:
                t = float(row["t"])
                marker = float(row["hazard"]) if has_h and row["hazard"] != "" else 1.0 - float(row["survival"])
            except ValueError as exc:
                raise DataError(f"{path}: bad number in row {row}") from exc
            table.setdefault(row["id"], []).append((t, marker))
    return table


def external_icon(data, grid, markers, h: float) -> tuple:
    """ICON of per-subject markers ``(n, q)``: each subject is its own node.

    Event mass is ``K_h(t - Y_i) Delta_i`` and risk mass ``I(Y_i >= t)``,
    both divided by ``n``; larger markers mean higher risk.
    """
    n = data.n
    tc = clamp_time(grid.times, h, data.horizon)
    f = (epanechnikov((tc[None, :] - data.Y[:, None]) / h) / h) * data.delta[:, None] / n
    S = (data.Y[:, None] >= grid.times[None, :]) / n
    con = con_t_grid(markers, f, S)
    ok = ~np.isnan(con)
    if not ok.any():
        raise FloatingPointError("concordance undefined at every grid time")
    return float(np.sum(grid.weights[ok] * con[ok]) / grid.weights[ok].sum()), con


def cmd_eval_icon(cfg: RunConfig, out=None) -> int:
    out = out or sys.stdout
    data = read_long_csv(cfg.data, cfg.horizon)
    grid = uncensored_quantile_grid(data, cfg.q)
    table = _read_predictions(cfg.predictions)
    markers = np.empty((data.n, grid.q))
    for i, sid in enumerate(data.ids):
        rows = table.get(str(sid))
        if not rows:
            raise DataError(f"no predictions for subject {sid!r}")
        rows = sorted(rows)
        ts = np.array([r[0] for r in rows])
        ms = np.array([r[1] for r in rows])
        # nearest prediction time to each grid time; argmin keeps the earlier on ties
        markers[i] = ms[np.argmin(np.abs(ts[None, :] - grid.times[:, None]), axis=1)]
    h = cfg.policy.global_bandwidth(data)
    value, con = external_icon(data, grid, markers, h)
    print(f"ICON {value:.6f}", file=out)
    if cfg.report is not None:
        with open(cfg.report, "w", encoding="utf-8") as fh:
            json.dump({"times": grid.times.tolist(), "con_t": [None if np.isnan(c) else float(c) for c in con],
                       "icon": value}, fh, indent=2)
    return EXIT_OK


COMMANDS = {
    "fit-tree": cmd_fit_tree,
    "fit-forest": cmd_fit_forest,
    "predict": cmd_predict,
    "benchmark": cmd_benchmark,
    "simulate": cmd_simulate,
    "eval-icon": cmd_eval_icon,
}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
        cfg = resolve_config(args)
        cfg.check(args.command)
        return COMMANDS[args.command](cfg)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (ArithmeticError, RuntimeError, ValueError, np.linalg.LinAlgError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
