"""Campaign orchestration behind the command-line interface.

Run directory layout::

    <out>/config.json                 effective configuration
    <out>/store/evaluations.tsv       evaluation cache and cost ledger
    <out>/screen/                     ranked.csv, designs.txt, x0.txt, x0_bounds.txt,
                                      x0_geometry.csv, selection.txt
    <out>/optimize_<kind>/            history.csv, features.csv, x0.txt, x_star.txt,
                                      x_star_geometry.csv, final_features.csv,
                                      cost.txt, summary.json
    <out>/compare.csv                 paired feature/min-max results (--compare)
    <out>/plot/                       plot-ready CSVs (plotdata)
"""

from __future__ import annotations

import fcntl
import json
import logging
from contextlib import contextmanager
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .config import RunConfig
from .errors import AntennaDesignError, ConfigError
from .evaluators import CacheOnlyEvaluator, CachedEvaluator, EvaluationStore
from .features import extract_features, features_csv
from .geometry import DesignVector, build_geometry, derive_bounds, export_geometry, template_bounds
from .optimizer import objective_minmax, optimize, optimize_minmax_benchmark
from .screening import screen

log = logging.getLogger(__name__)

REFERENCE_SCREEN = 200
REFERENCE_TR = 221
REFERENCE_TOTAL = 421


class StageError(AntennaDesignError):
    def __init__(self, stage, exc):
        super().__init__(f"[{stage}] {type(exc).__name__}: {exc}")
        self.stage = stage
        self.__cause__ = exc


@dataclass(frozen=True)
class CostSummary:
    screen: int
    initial: int
    jacobian: int
    candidate: int

    @property
    def total(self):
        return self.screen + self.initial + self.jacobian + self.candidate

    def line(self):
        return (f"total={self.total} screen={self.screen} initial={self.initial} "
                f"jacobian={self.jacobian} candidate={self.candidate}")

    @classmethod
    def parse(cls, line):
        parts = dict(tok.split("=") for tok in line.split())
        summary = cls(*(int(parts[k]) for k in ("screen", "initial", "jacobian", "candidate")))
        if summary.total != int(parts["total"]):
            raise ValueError(f"cost line does not add up: {line!r}")
        return summary


def reference_cost_check():
    """Cost identity of the reported 53-parameter run: screening plus tuning."""
    if REFERENCE_SCREEN + REFERENCE_TR != REFERENCE_TOTAL:
        raise AssertionError("reference budget arithmetic does not reconcile")
    return f"reference budget check: screen={REFERENCE_SCREEN} + optimization={REFERENCE_TR} = total={REFERENCE_TOTAL} OK"


def _write(path, text):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


@contextmanager
def run_directory(out):
    """Create ``out`` and hold its writer lock for the duration."""
    root = Path(out)
    try:
        root.mkdir(parents=True, exist_ok=True)
        fh = open(root / ".lock", "w")
    except OSError as exc:
        raise ConfigError(f"output directory {root} is not writable: {exc}") from None
    try:
        try:
            fcntl.flock(fh, fcntl.LOCK_EX | fcntl.LOCK_NB)
        except BlockingIOError:
            raise ConfigError(f"another process is writing to {root}") from None
        yield root
    finally:
        fh.close()


def _open(cfg, root):
    store = EvaluationStore(root / "store")
    _write(root / "config.json", cfg.to_json())
    return store, cfg.make_evaluator(store)


def _select_start(result, evaluator, cfg, need_features):
    """Best-ranked candidate; with ``need_features`` the best one whose features are usable."""
    if need_features:
        for rank, (index, score, design) in enumerate(result.ranked):
            r = evaluator(design, cfg.sweep, tag="screen")
            if extract_features(r, cfg.objective.feature_spec).valid:
                if rank:
                    log.warning("top-ranked candidates lack two response dips; starting from rank %d", rank)
                return rank, index, score, design
    index, score, design = result.ranked[0]
    return 0, index, score, design


def _write_screen(root, result, selection):
    rank, index, score, x0 = selection
    sdir = root / "screen"
    _write(sdir / "ranked.csv", result.ranked_csv())
    _write(sdir / "designs.txt", result.designs_text())
    _write(sdir / "x0.txt", x0.to_line() + "\n")
    _write(sdir / "selection.txt", f"rank={rank} index={index} score_db={score!r}\n")
    b = derive_bounds(x0)
    _write(sdir / "x0_bounds.txt",
           "lower," + ",".join(repr(float(v)) for v in b.lower) + "\n"
           + "upper," + ",".join(repr(float(v)) for v in b.upper) + "\n")
    _write(sdir / "x0_geometry.csv", export_geometry(build_geometry(x0)))


def _screen_stage(cfg, evaluator, root, need_features):
    try:
        result = screen(template_bounds(cfg.geometry.L), cfg.screening.N, cfg.screening.seed, evaluator,
                        cfg.objective.band, cfg.sweep, cfg.geometry, workers=cfg.workers)
        selection = _select_start(result, evaluator, cfg, need_features)
        _write_screen(root, result, selection)
    except AntennaDesignError as exc:
        raise StageError("screen", exc) from exc
    return result, selection


def cmd_screen(cfg):
    with run_directory(cfg.output) as root:
        store, evaluator = _open(cfg, root)
        result, _ = _screen_stage(cfg, evaluator, root, cfg.objective.kind == "feature")
        return result


def _optimize_stage(cfg, evaluator, store, root, x0, kind):
    spec = replace(cfg.objective, kind=kind)
    run = optimize if kind == "feature" else optimize_minmax_benchmark
    try:
        bounds = derive_bounds(x0)
        res = run(evaluator, x0, bounds, spec, cfg.tr, cfg.sweep, workers=cfg.workers)
    except AntennaDesignError as exc:
        raise StageError(f"optimize:{kind}", exc) from exc
    odir = root / f"optimize_{kind}"
    _write(odir / "x0.txt", x0.to_line() + "\n")
    _write(odir / "history.csv", res.history_csv())
    _write(odir / "features.csv", res.features_csv())
    _write(odir / "x_star.txt", res.x_star.to_line() + "\n")
    _write(odir / "x_star_geometry.csv", export_geometry(build_geometry(res.x_star)))
    final_f = extract_features(res.final_response, spec.feature_spec)
    _write(odir / "final_features.csv", features_csv(final_f))
    counts = res.ledger_counts
    cost = CostSummary(store.counts().get("screen", 0), counts["initial"], counts["jacobian"], counts["candidate"])
    _write(odir / "cost.txt", cost.line() + "\n")
    summary = {
        "objective": kind,
        "termination": res.termination_reason,
        "iterations": len(res.history),
        "accepted": sum(h.accepted for h in res.history),
        "jacobian_builds": res.jacobian_builds,
        "initial_objective": res.initial_objective,
        "final_objective": res.final_objective,
        "initial_minmax_db": objective_minmax(evaluator(x0, cfg.sweep, tag="initial"), spec),
        "final_minmax_db": objective_minmax(res.final_response, spec),
        "cost": cost.line(),
    }
    _write(odir / "summary.json", json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return res, summary


def cmd_optimize(cfg, x0_path=None):
    with run_directory(cfg.output) as root:
        path = Path(x0_path) if x0_path else root / "screen" / "x0.txt"
        if not path.exists():
            raise ConfigError(f"initial design file not found: {path} (run 'screen' first or pass --x0)")
        try:
            x0 = DesignVector.from_line(path.read_text().strip().splitlines()[0])
        except (ValueError, IndexError) as exc:
            raise ConfigError(f"cannot parse initial design {path}: {exc}") from None
        if x0.L != cfg.geometry.L:
            raise ConfigError(f"initial design has L={x0.L} but the config says L={cfg.geometry.L}")
        store, evaluator = _open(cfg, root)
        res, _ = _optimize_stage(cfg, evaluator, store, root, x0, cfg.objective.kind)
        return res


def cmd_pipeline(cfg, compare=False):
    kinds = ("feature", "minmax") if compare else (cfg.objective.kind,)
    with run_directory(cfg.output) as root:
        store, evaluator = _open(cfg, root)
        result, selection = _screen_stage(cfg, evaluator, root, "feature" in kinds)
        x0 = selection[3]
        outcomes = {k: _optimize_stage(cfg, evaluator, store, root, x0, k) for k in kinds}
        if compare:
            f, m = outcomes["feature"][1], outcomes["minmax"][1]
            _write(root / "compare.csv",
                   "seed,x0_minmax_db,feature_final_minmax_db,benchmark_final_minmax_db,feature_final_objective\n"
                   f"{cfg.screening.seed},{f['initial_minmax_db']!r},{f['final_minmax_db']!r},"
                   f"{m['final_minmax_db']!r},{f['final_objective']!r}\n")
        log.info("evaluator invocations this run: %d", evaluator.inner_calls)
        return {"screening": result, "selection": selection, "results": {k: v[0] for k, v in outcomes.items()},
                "evaluator": evaluator}


def cmd_plotdata(run_dir):
    """Regenerate plot-ready CSVs from the store alone; never calls an evaluator."""
    root = Path(run_dir)
    missing = []
    cfg_path = root / "config.json"
    if not cfg_path.exists():
        raise ConfigError(f"missing artifact: {cfg_path}")
    cfg = RunConfig.load(cfg_path)
    store = EvaluationStore(root / "store")
    replay = CachedEvaluator(CacheOnlyEvaluator(cfg.geometry), store)
    pdir = root / "plot"
    written = []

    def emit(name, text):
        _write(pdir / name, text)
        written.append(pdir / name)

    def response_of(design_file, out_name):
        if not design_file.exists():
            missing.append(str(design_file))
            return
        x = DesignVector.from_line(design_file.read_text().strip().splitlines()[0])
        try:
            emit(out_name, replay(x, cfg.sweep).to_csv())
        except AntennaDesignError as exc:
            missing.append(f"{design_file}: {exc}")

    response_of(root / "screen" / "x0.txt", "response_x0.csv")
    ranked = root / "screen" / "ranked.csv"
    designs = root / "screen" / "designs.txt"
    if ranked.exists() and designs.exists():
        order = [int(r.split(",")[1]) for r in ranked.read_text().splitlines()[1:6]]
        lines = designs.read_text().splitlines()
        try:
            family = [replay(DesignVector.from_line(lines[i]), cfg.sweep) for i in order]
            cols = np.column_stack([cfg.sweep.freqs] + [r.levels_db for r in family])
            head = "freq_ghz," + ",".join(f"candidate_{i}" for i in order)
            emit("screen_family.csv", head + "\n" + "\n".join(",".join(repr(v) for v in row) for row in cols.tolist()) + "\n")
        except AntennaDesignError as exc:
            missing.append(f"screen family: {exc}")
    else:
        missing.append(str(ranked if not ranked.exists() else designs))
    opt_dirs = sorted(root.glob("optimize_*"))
    if not opt_dirs:
        missing.append(str(root / "optimize_<kind>"))
    for odir in opt_dirs:
        kind = odir.name.split("_", 1)[1]
        response_of(odir / "x_star.txt", f"response_xstar_{kind}.csv")
        hist = odir / "history.csv"
        if hist.exists():
            rows = hist.read_text().splitlines()[1:]
            conv = ["iter,objective"] + [f"{r.split(',')[0]},{r.split(',')[4]}" for r in rows]
            emit(f"convergence_{kind}.csv", "\n".join(conv) + "\n")
        else:
            missing.append(str(hist))
    if missing:
        raise ConfigError("missing or unreplayable artifacts:\n  " + "\n  ".join(missing))
    return written
