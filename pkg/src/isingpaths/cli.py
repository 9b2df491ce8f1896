"""Command-line entry point: ``isingpaths <command> ...``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .exact import enumerate_states, exact_entropy, exact_observables
from .experiments import ExperimentSpec, report, run_experiment
from .ising import ThermalParams, load_batch, sample_dataset, write_dataset
from .models import build_model
from .paths import KINDS, locality_metrics, make_path
from .training import PAPER_CHECKPOINTS, TrainConfig, train


def _dump(obj, out):
    text = json.dumps(obj, indent=1, sort_keys=True)
    if out:
        Path(out).write_text(text + "\n")
    else:
        print(text)


def cmd_paths(a):
    p = make_path(a.kind, a.L)
    result = {"kind": p.kind, "L": p.side, "locality": locality_metrics(p).to_dict()}
    if not a.metrics_only:
        result["order"] = [[int(x), int(y)] for x, y in zip(p.xs, p.ys)]
    _dump(result, a.out)


def cmd_sample(a):
    params = ThermalParams(a.beta, a.L, a.n, seed=a.seed, decorrelation_sweeps=a.decorrelation,
                           equilibration_sweeps=a.equilibration, n_chains=a.chains)
    batch = sample_dataset(params)
    write_dataset(batch, a.out)
    (e, e_se), (m, m_se) = batch.energy_per_site, batch.abs_magnetization
    print(f"wrote {len(batch)} configurations to {a.out}")
    print(f"energy/site {e:.5f} +- {e_se:.5f}   |m| {m:.5f} +- {m_se:.5f}")


def cmd_oracle(a):
    d = enumerate_states(a.L, a.beta)
    o = exact_observables(d)
    _dump({"L": a.L, "beta": a.beta, "log_Z": d.log_Z, "entropy": exact_entropy(d),
           "energy_per_site": o["energy_per_site"], "abs_magnetization": o["abs_magnetization"],
           "correlation_table": o["correlation_table"].tolist()}, a.out)


def cmd_train(a):
    batch = load_batch(a.data)
    L = batch.params.L
    overrides = json.loads(a.model_options) if a.model_options else {}
    model = build_model(a.model, L * L, seed=a.seed, **overrides)
    cfg = TrainConfig(epochs=a.epochs, batch_size=a.batch_size, lr=a.lr, split=a.split,
                      seed=a.seed, checkpoint_epochs=tuple(a.checkpoints),
                      checkpoint_scale=a.checkpoint_scale, n_model_samples=a.n_model_samples)
    res = train(model, batch, make_path(a.path, L), cfg, out_dir=a.out,
                provenance={"beta": batch.params.beta, "dataset": str(a.data)})
    tr = res.trace
    print(f"final validation NLL {tr.final_val:.5f} ({tr.final_val / tr.N:.5f} per site)")
    print(f"trace and checkpoint written to {a.out}")


def cmd_experiment_run(a):
    spec = ExperimentSpec.load(a.spec)
    changes = {}
    if a.output_dir:
        changes["output_dir"] = a.output_dir
    if a.workers:
        changes["workers"] = a.workers
    spec = replace(spec, **changes)
    if a.paper_scale:
        spec = spec.paper_scale()
    bundle = run_experiment(spec)
    manifest = json.loads((bundle / "manifest.json").read_text())
    print(f"bundle {bundle}: {len(manifest['cells'])} cells, {len(manifest['failed'])} failed")
    return 1 if manifest["partial"] else 0


def cmd_experiment_report(a):
    s = report(a.bundle, a.out)
    print(f"{s['name']} ({s['recipe']}, {s['model']}), grouped by {s['group_by']}")
    for g, v in s["groups"].items():
        ett = v["epochs_to_threshold"]
        print(f"  {g:>10}  final NLL/site {v['final_val_nll_per_site']:.5f}  "
              f"epochs-to-threshold {'not reached' if ett is None else ett:>11}  "
              f"plateau {v['plateau_length']:g}")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="isingpaths", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("paths", help="print a lattice ordering and its locality")
    p.add_argument("--kind", choices=KINDS, required=True)
    p.add_argument("--L", type=int, required=True)
    p.add_argument("--metrics-only", action="store_true")
    p.add_argument("--out")
    p.set_defaults(func=cmd_paths)

    p = sub.add_parser("sample", help="draw Monte Carlo configurations")
    p.add_argument("--L", type=int, required=True)
    p.add_argument("--beta", type=float, required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--decorrelation", type=int, default=1)
    p.add_argument("--equilibration", type=int, default=1000)
    p.add_argument("--chains", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("oracle", help="exact observables by enumeration (L = 2 or 4)")
    p.add_argument("--L", type=int, required=True)
    p.add_argument("--beta", type=float, required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("train", help="train one model on a dataset file")
    p.add_argument("--data", required=True)
    p.add_argument("--model", choices=("rnn", "transformer"), required=True)
    p.add_argument("--path", choices=KINDS, default="zigzag")
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--batch-size", type=int, default=100)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--split", type=float, default=0.8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--checkpoints", type=int, nargs="*", default=list(PAPER_CHECKPOINTS))
    p.add_argument("--checkpoint-scale", type=float, default=1.0)
    p.add_argument("--n-model-samples", type=int, default=10_000)
    p.add_argument("--model-options", help='JSON overrides, e.g. \'{"hidden": 32}\'')
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("experiment", help="run or summarise an experiment bundle")
    esub = p.add_subparsers(dest="action", required=True)
    r = esub.add_parser("run")
    r.add_argument("spec")
    r.add_argument("--output-dir")
    r.add_argument("--workers", type=int)
    r.add_argument("--paper-scale", action="store_true",
                   help="L=16, 1e5 samples, 3200 epochs (very slow)")
    r.set_defaults(func=cmd_experiment_run)
    r = esub.add_parser("report")
    r.add_argument("bundle")
    r.add_argument("--out")
    r.set_defaults(func=cmd_experiment_report)
    return ap


def main(argv=None) -> int:
    a = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if a.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return a.func(a) or 0
    except (ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
