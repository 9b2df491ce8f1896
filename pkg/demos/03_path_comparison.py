"""
A small path-comparison experiment
==================================

The experiment runner trains one model per (path, seed) cell, caches every
cell on disk and writes plot-ready CSV tables.  This is a cut-down version of
the L=8 comparison; the specs in ``demos/specs`` are the desk-scale versions
for the command line::

    isingpaths experiment run demos/specs/fig2a_rnn_paths.json
    isingpaths experiment report runs/fig2a_rnn_paths
"""

import sys
import tempfile
from pathlib import Path

from isingpaths.experiments import ExperimentSpec, report, run_path_comparison
from isingpaths.training import TrainConfig

out = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(tempfile.mkdtemp()) / "demo_paths"
spec = ExperimentSpec(
    name="demo_paths", model="rnn", L=(4,), betas=(0.435,), seeds=(0, 1, 2),
    n_samples=2000, train=TrainConfig(epochs=15, checkpoint_epochs=(2, 15), n_model_samples=2000),
    output_dir=str(out))

bundle = run_path_comparison(spec)
s = report(bundle)

print(f"bundle written to {bundle}")
print(f"{'path':8s} {'final NLL/site':>15s} {'epochs to 1%':>13s} {'anisotropy@2':>13s}")
for path, g in s["groups"].items():
    cells = [c for c in s["cells"] if c["path"] == path]
    aniso = sorted(c["anisotropy"]["2"] for c in cells)[len(cells) // 2]
    ett = g["epochs_to_threshold"]
    print(f"{path:8s} {g['final_val_nll_per_site']:15.5f} "
          f"{'not reached' if ett is None else ett:>13} {aniso:13.3f}")
print("\ntables:", ", ".join(p.name for p in sorted((bundle / "report").iterdir())))
