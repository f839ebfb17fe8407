"""Four Gaussian blobs in 2-D: two big classes, two small ones.

Trains plain ERM, vanilla mixup and CP-Mix on the same draws and prints
minority recall plus the confusions between each small class and its
nearest big neighbour. Run from the repository root:

    python notebooks/toy_decision_boundary.py
"""
# %%
import numpy as np

from cpmix.confusion import confusion_matrix
from cpmix.data import ToySpec, make_toy
from cpmix.mixing import MixConfig
from cpmix.nn import MlpClassifier, predict
from cpmix.report import minority_recall, target_confusion_sum
from cpmix.trainer import TrainSchedule, train_cpmix, train_erm, train_vanilla_mixup

spec = ToySpec()
print("centers", spec.centers.tolist(), "rho", spec.rho)
print("pairs tracked (true -> predicted):", spec.adjacent_pairs())

# %%
def fresh(seed):
    return MlpClassifier.init([2, 100, 4], np.random.default_rng(seed))


rows = []
for seed in range(5):
    train, test = make_toy(spec, seed)
    sched = TrainSchedule(epochs=10, batch_size=100, optimizer="adam", lr=0.1, seed=seed)
    erm, _, _ = train_erm(fresh(seed), train, None, sched)
    mix, _ = train_vanilla_mixup(fresh(seed), train, None, sched, alpha=1.0)
    cp_sched = TrainSchedule(epochs=10, cp_start=0, batch_size=100, optimizer="adam", lr=0.1,
                             seed=seed)
    cp, bag, _ = train_cpmix(fresh(seed), train, None, cp_sched, MixConfig(alpha=1.0, t=0.5))
    for name, model in (("erm", erm), ("mixup", mix), ("cpmix", cp)):
        cm = confusion_matrix(model, test)
        rows.append((seed, name, minority_recall(cm, spec.minority_classes),
                     target_confusion_sum(cm, spec.adjacent_pairs())))
    print(f"seed {seed}: bag holds {bag.total} pairs, busiest {max(bag.multiplicity.items(), key=lambda kv: kv[1])}")

# %%
print(f"\n{'seed':>4} {'method':<7} {'minority recall':>16} {'target confusion':>17}")
for seed, name, rec, conf in rows:
    print(f"{seed:>4} {name:<7} {rec:>16.3f} {conf:>17d}")

# %% a coarse text picture of where the last CP-Mix model puts the boundary
xs = np.linspace(-2, 2, 41)
grid = np.array([[x, y] for y in xs[::-1] for x in xs])
labels = predict(cp, grid).reshape(41, 41)
print("\npredicted class on [-2,2]^2 (last seed, CP-Mix); 0,1 are majorities")
for line in labels[::2, ::2]:
    print("".join(".#ox"[c] for c in line))
