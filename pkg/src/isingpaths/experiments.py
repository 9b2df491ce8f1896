"""Experiment recipes: grids of training runs and their aggregated reports.

A bundle directory holds one subdirectory per cell, where a cell is a single
(path, L, beta, seed) training run.  Cells are written independently and a
cell whose ``status.json`` records success is not rerun, so an interrupted
bundle resumes where it stopped.  Datasets are generated on demand from a
seed derived from ``data_seed``, L and beta, and cached beside the cells.

Nothing time- or host-dependent is written, so rerunning a spec in a fresh
directory gives byte-identical files.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .ising import ThermalParams, read_dataset, sample_dataset, write_dataset
from .models import build_model
from .paths import KINDS, make_path
from .training import TrainConfig, TrainingTrace, epochs_to_threshold, plateau_length, train

log = logging.getLogger(__name__)

RECIPES = ("path_comparison", "size_scan", "beta_scan")
DEFAULT_BETAS = tuple(float(b) for b in np.round(np.linspace(0.286, 0.667, 9), 6))


@dataclass(frozen=True)
class ExperimentSpec:
    name: str
    recipe: str = "path_comparison"
    model: str = "rnn"
    paths: tuple = ("zigzag", "snake", "hilbert", "morton")
    L: tuple = (8,)
    betas: tuple = (0.435,)
    seeds: tuple = (0, 1, 2, 3, 4)
    train: TrainConfig = field(default_factory=TrainConfig)
    n_samples: int = 10_000
    data_seed: int = 0
    model_overrides: dict = field(default_factory=dict)
    tol: float = 0.01
    plateau_threshold: float = 1e-3
    workers: int = 1
    output_dir: str = "runs"
    dataset_dir: str | None = None

    def __post_init__(self):
        for name in ("paths", "L", "betas", "seeds"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        if self.recipe not in RECIPES:
            raise ValueError(f"unknown recipe {self.recipe!r}; expected one of {RECIPES}")
        if self.model not in ("rnn", "transformer"):
            raise ValueError(f"unknown model kind {self.model!r}")
        if not self.L:
            raise ValueError("L list is empty")
        if not self.paths:
            raise ValueError("path list is empty")
        if not self.betas:
            raise ValueError("beta list is empty")
        if not self.seeds:
            raise ValueError("seed list is empty")
        for L in self.L:
            if L < 2 or L & (L - 1):
                raise ValueError(f"L={L} is not a power of two >= 2")
        for b in self.betas:
            if not b > 0:
                raise ValueError(f"beta={b} must be positive")
        for p in self.paths:
            if p not in KINDS:
                raise ValueError(f"unknown path kind {p!r}")
        if self.n_samples < 2:
            raise ValueError("n_samples must be at least 2")

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentSpec":
        d = dict(d)
        if "train" in d:
            d["train"] = TrainConfig.from_dict(d["train"])
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown spec fields: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def load(cls, path) -> "ExperimentSpec":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["train"] = asdict(self.train)
        return d

    def paper_scale(self) -> "ExperimentSpec":
        """The same recipe at the full published sizes (slow)."""
        L = (16,) if self.recipe != "size_scan" else (4, 8, 16)
        return replace(self, L=L, n_samples=100_000,
                       train=replace(self.train, epochs=3200, checkpoint_scale=1.0))

    def cells(self) -> list["Cell"]:
        return [Cell(p, L, b, s) for L in self.L for b in self.betas
                for p in self.paths for s in self.seeds]


@dataclass(frozen=True)
class Cell:
    path: str
    L: int
    beta: float
    seed: int

    @property
    def key(self) -> str:
        return f"{self.path}_L{self.L}_b{self.beta:.6f}_s{self.seed}"

    @property
    def group(self) -> tuple:
        return (self.L, self.beta)


def dataset_seed(data_seed: int, L: int, beta: float) -> int:
    ss = np.random.SeedSequence([data_seed, L, int(round(beta * 1e6))])
    return int(ss.generate_state(1, dtype=np.uint32)[0])


def ensure_dataset(spec: ExperimentSpec, L: int, beta: float) -> Path:
    """Generate (or reuse) the dataset for one (L, beta) point."""
    root = Path(spec.dataset_dir) if spec.dataset_dir else Path(spec.output_dir) / "datasets"
    root.mkdir(parents=True, exist_ok=True)
    seed = dataset_seed(spec.data_seed, L, beta)
    f = root / f"L{L}_b{beta:.6f}_n{spec.n_samples}_seed{seed}.txt"
    if not f.exists():
        log.info("sampling %s", f.name)
        batch = sample_dataset(ThermalParams(beta, L, spec.n_samples, seed=seed))
        tmp = f.with_suffix(".tmp")
        write_dataset(batch, tmp)
        tmp.replace(f)
    return f


def run_cell(spec: ExperimentSpec, cell: Cell) -> dict:
    """Train one cell and write its files; returns its status record."""
    out = Path(spec.output_dir) / "cells" / cell.key
    status_file = out / "status.json"
    if status_file.exists():
        done = json.loads(status_file.read_text())
        if done["status"] == "ok":
            return done
    out.mkdir(parents=True, exist_ok=True)
    log.info("training %s", cell.key)
    data_file = ensure_dataset(spec, cell.L, cell.beta)
    header, configs = read_dataset(data_file)
    cfg = replace(spec.train, seed=cell.seed)
    status = {"cell": asdict(cell), "dataset": data_file.name, "dataset_seed": header["seed"]}
    try:
        model = build_model(spec.model, cell.L * cell.L, seed=cell.seed, **spec.model_overrides)
        train(model, configs, make_path(cell.path, cell.L), cfg, out_dir=out,
              provenance={"beta": cell.beta, "dataset": data_file.name,
                          "dataset_seed": header["seed"], "run_seed": cell.seed})
        status["status"] = "ok"
    except Exception as exc:  # recorded, bundle marked partial
        status["status"] = "failed"
        status["error"] = "".join(traceback.format_exception_only(type(exc), exc)).strip()
        log.warning("cell %s failed: %s", cell.key, status["error"])
    status_file.write_text(json.dumps(status, indent=1, sort_keys=True))
    return status


def _run_cell_args(args):
    return run_cell(*args)


def run_experiment(spec: ExperimentSpec) -> Path:
    """Run every cell of ``spec`` and write the bundle manifest."""
    out = Path(spec.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    cells = spec.cells()
    for L, b in sorted({c.group for c in cells}):
        ensure_dataset(spec, L, b)
    if spec.workers > 1:
        with ProcessPoolExecutor(spec.workers) as pool:
            statuses = list(pool.map(_run_cell_args, [(spec, c) for c in cells]))
    else:
        statuses = [run_cell(spec, c) for c in cells]
    stored = spec.to_dict()
    stored.pop("output_dir")
    stored.pop("dataset_dir")
    stored.pop("workers")
    manifest = {"spec": stored, "cells": [c.key for c in cells],
                "failed": [c.key for c, s in zip(cells, statuses) if s["status"] != "ok"]}
    manifest["partial"] = bool(manifest["failed"])
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True))
    return out


def run_path_comparison(spec: ExperimentSpec) -> Path:
    if spec.recipe != "path_comparison":
        spec = replace(spec, recipe="path_comparison")
    return run_experiment(spec)


def run_size_scan(spec: ExperimentSpec) -> Path:
    if len(spec.paths) != 1:
        raise ValueError("a size scan trains along a single path")
    return run_experiment(replace(spec, recipe="size_scan"))


def run_beta_scan(spec: ExperimentSpec) -> Path:
    if len(spec.paths) != 1:
        raise ValueError("a beta scan trains along a single path")
    return run_experiment(replace(spec, recipe="beta_scan"))


# --- reading and aggregating bundles -----------------------------------------

@dataclass
class Bundle:
    root: Path
    spec: ExperimentSpec
    traces: dict
    failed: list
    partial: bool

    @classmethod
    def load(cls, root) -> "Bundle":
        root = Path(root)
        manifest = json.loads((root / "manifest.json").read_text())
        spec = ExperimentSpec.from_dict({**manifest["spec"], "output_dir": str(root)})
        traces = {}
        for c in spec.cells():
            if c.key not in manifest["failed"]:
                traces[c] = TrainingTrace.load(root / "cells" / c.key)
        return cls(root, spec, traces, manifest["failed"], manifest["partial"])

    def select(self, **match) -> dict:
        return {c: t for c, t in self.traces.items()
                if all(getattr(c, k) == v for k, v in match.items())}


def median_stderr(values) -> tuple[float, float]:
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        return math.nan, math.nan
    se = float(v.std(ddof=1) / math.sqrt(v.size)) if v.size > 1 else 0.0
    return float(np.median(v)), se


def _median_or_none(values):
    """Median treating None (not reached) as +inf."""
    v = [math.inf if x is None else x for x in values]
    if not v:
        return None
    m = float(np.median(v))
    return None if math.isinf(m) else m


def group_reference(bundle: Bundle, L: int, beta: float) -> float:
    """Best final validation NLL across every path and seed of a run group."""
    return min(t.final_val for t in bundle.select(L=L, beta=beta).values())


def curve_rows(bundle: Bundle, key: str) -> list[dict]:
    """Median and standard-error validation curves grouped by ``key``.

    ``key`` is one of ``path``, ``L`` or ``beta``; the other coordinates are
    fixed by the recipe.
    """
    rows = []
    groups = sorted({getattr(c, key) for c in bundle.traces},
                    key=KINDS.index if key == "path" else None)
    for g in groups:
        traces = list(bundle.select(**{key: g}).values())
        n_ep = min(len(t.epochs) for t in traces)
        N = traces[0].N
        for i in range(n_ep):
            med, se = median_stderr([t.val_nll[i] for t in traces])
            tmed, tse = median_stderr([t.train_nll[i] for t in traces])
            rows.append({key: g, "epoch": traces[0].epochs[i], "n_runs": len(traces),
                         "val_nll": med, "val_nll_se": se,
                         "val_nll_per_site": med / N, "val_nll_per_site_se": se / N,
                         "train_nll": tmed, "train_nll_se": tse,
                         "train_nll_per_site": tmed / N, "train_nll_per_site_se": tse / N})
    return rows


def anisotropy_rows(bundle: Bundle) -> list[dict]:
    rows = []
    for p in sorted({c.path for c in bundle.traces}, key=KINDS.index):
        traces = list(bundle.select(path=p).values())
        epochs = sorted({ck.epoch for t in traces for ck in t.checkpoints})
        for e in epochs:
            scores = [ck.anisotropy for t in traces for ck in t.checkpoints if ck.epoch == e]
            med, se = median_stderr(scores)
            rows.append({"path": p, "epoch": e, "n_runs": len(scores),
                         "anisotropy": med, "anisotropy_se": se})
    return rows


def correlation_tables(bundle: Bundle) -> dict:
    """Seed-median correlation table per (path, checkpoint epoch)."""
    out = {}
    for p in sorted({c.path for c in bundle.traces}, key=KINDS.index):
        traces = list(bundle.select(path=p).values())
        epochs = sorted({ck.epoch for t in traces for ck in t.checkpoints})
        out[p] = {str(e): np.median([ck.correlation for t in traces for ck in t.checkpoints
                                     if ck.epoch == e], axis=0).tolist() for e in epochs}
    return out


def summary(bundle: Bundle) -> dict:
    """Per-cell scalars plus their medians, recomputable from the raw traces."""
    spec = bundle.spec
    cells = []
    for c, t in sorted(bundle.traces.items(), key=lambda kv: kv[0].key):
        ref = group_reference(bundle, c.L, c.beta)
        cells.append({**asdict(c), "final_val_nll": t.final_val,
                      "final_val_nll_per_site": t.final_val / t.N,
                      "epochs_to_threshold": epochs_to_threshold(t, spec.tol, ref),
                      "plateau_length": plateau_length(t, t.N, spec.plateau_threshold, spec.tol),
                      "anisotropy": {str(ck.epoch): ck.anisotropy for ck in t.checkpoints}})
    groups = {}
    key = {"path_comparison": "path", "size_scan": "L", "beta_scan": "beta"}[spec.recipe]
    for g in sorted({c[key] for c in cells}, key=lambda v: KINDS.index(v) if key == "path" else v):
        sel = [c for c in cells if c[key] == g]
        fin_med, fin_se = median_stderr([c["final_val_nll"] for c in sel])
        pl_med, pl_se = median_stderr([c["plateau_length"] for c in sel])
        groups[str(g)] = {
            "n_runs": len(sel),
            "final_val_nll": fin_med, "final_val_nll_se": fin_se,
            "final_val_nll_per_site": fin_med / sel[0]["L"] ** 2,
            "epochs_to_threshold": _median_or_none([c["epochs_to_threshold"] for c in sel]),
            "n_reached_threshold": sum(c["epochs_to_threshold"] is not None for c in sel),
            "plateau_length": pl_med, "plateau_length_se": pl_se,
        }
    return {"name": spec.name, "recipe": spec.recipe, "model": spec.model,
            "group_by": key, "tol": spec.tol, "plateau_threshold": spec.plateau_threshold,
            "plateau_definition": ("longest run of consecutive epochs, before the validation NLL "
                                   "first comes within tol of its best value, whose improvement "
                                   "is below plateau_threshold nats per site"),
            "partial": bundle.partial, "failed": bundle.failed,
            "groups": groups, "cells": cells}


def _write_csv(path: Path, rows: list[dict]) -> None:
    buf = io.StringIO()
    if rows:
        w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})
    path.write_text(buf.getvalue())


def figure_names(spec: ExperimentSpec) -> list[str]:
    if spec.recipe == "path_comparison":
        return ["fig2a" if spec.model == "rnn" else "fig2b", "fig2c"]
    return ["fig3"] if spec.recipe == "size_scan" else ["fig4"]


def report(bundle_dir, out_dir=None) -> dict:
    """Write CSV tables and a JSON summary keyed by figure name."""
    bundle = Bundle.load(bundle_dir)
    out = Path(out_dir) if out_dir else bundle.root / "report"
    out.mkdir(parents=True, exist_ok=True)
    spec = bundle.spec
    s = summary(bundle)
    figures = figure_names(spec)
    for fig in figures:
        if fig in ("fig2a", "fig2b"):
            _write_csv(out / f"{fig}.csv", curve_rows(bundle, "path"))
        elif fig == "fig2c":
            _write_csv(out / "fig2c.csv", anisotropy_rows(bundle))
            (out / "fig2c_correlations.json").write_text(
                json.dumps(correlation_tables(bundle), indent=1, sort_keys=True))
        elif fig == "fig3":
            _write_csv(out / "fig3.csv", curve_rows(bundle, "L"))
        else:
            _write_csv(out / "fig4_curves.csv", curve_rows(bundle, "beta"))
            _write_csv(out / "fig4.csv", [{"beta": float(g), **{k: v[k] for k in (
                "plateau_length", "plateau_length_se", "n_runs")}} for g, v in s["groups"].items()])
    (out / "summary.json").write_text(json.dumps({"figures": figures, **s},
                                                 indent=1, sort_keys=True))
    return s
