"""Long-tailed 20-class benchmark on Gaussian clusters around a ring.

Runs every shipped blobs config (one arm each) through the same code path as
``cpmix train`` and prints a many/medium/few table. Takes about a minute.

    python notebooks/blobs_benchmark.py
"""
# %%
import tempfile
from pathlib import Path

import numpy as np

from cpmix.experiment import load_config, run_experiment, summarize

root = Path(__file__).resolve().parent.parent
arms = ["ce", "bs", "mixup", "bs_mixreg", "cpmix"]
out = Path(tempfile.mkdtemp(prefix="blobs-"))

# %%
for arm in arms:
    cfg = load_config(root / "configs" / f"blobs_{arm}.cfg")
    run_experiment(cfg, out / arm)
    print("finished", arm)

# %%
rows = summarize(out)
print(f"\n{'arm':<10} {'top1':>6} {'many':>6} {'medium':>6} {'few':>6}")
for arm in arms:
    mine = [r for r in rows if Path(r["run_dir"]).parent.name == arm]
    cols = [np.mean([r[k] for r in mine]) for k in ("top1", "many", "medium", "few")]
    print(f"{arm:<10} " + " ".join(f"{c:6.3f}" for c in cols))
print("\nper-run artifacts in", out)
