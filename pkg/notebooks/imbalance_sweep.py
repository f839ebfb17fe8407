"""How confusion between neighbouring classes grows with the imbalance factor.

Sweeps the toy problem over several imbalance factors for ERM and CP-Mix and
prints seed-averaged minority recall and target confusion.

    python notebooks/imbalance_sweep.py
"""
# %%
import csv
import tempfile
from collections import defaultdict
from pathlib import Path

import numpy as np

from cpmix.experiment import load_config, sweep

root = Path(__file__).resolve().parent.parent
cfg = load_config(root / "configs" / "toy_cpmix.cfg").replace(eval_every_epoch=False)
rhos = [2, 5, 10, 20, 50]
path = sweep(cfg, rhos, ["erm_ce", "cpmix"], Path(tempfile.mkdtemp(prefix="sweep-")))

# %%
acc = defaultdict(list)
with path.open() as fh:
    for row in csv.DictReader(fh):
        acc[(float(row["rho"]), row["method"])].append(
            (float(row["minority_recall"]), int(row["target_confusion_sum"])))

print(f"{'rho':>5} {'method':<7} {'minority recall':>16} {'target confusion':>17}")
for (rho, method), vals in sorted(acc.items()):
    rec, conf = np.mean(vals, axis=0)
    print(f"{rho:>5g} {method:<7} {rec:>16.3f} {conf:>17.1f}")
print("\nraw table:", path)
