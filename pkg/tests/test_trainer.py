import math

import numpy as np
import pytest

from cpmix.confusion import ConfusionPairBag, build_cp_batch, confusion_matrix
from cpmix.data import ClassIndex, LabeledDataset, ToySpec, make_toy
from cpmix.mixing import MixConfig, cp_mix_batch
from cpmix.nn import MlpClassifier, backward
from cpmix.report import minority_recall
from cpmix.trainer import (FinetuneConfig, NumericAbort, TrainLog, TrainSchedule,
                           finetune_classifier, train_cpmix, train_erm, train_vanilla_mixup)


@pytest.fixture(scope="module")
def small_toy():
    return make_toy(ToySpec(n_majority=60, n_minority=6, n_test_per_class=50), seed=0)


def fresh(seed=0, hidden=16):
    return MlpClassifier.init([2, hidden, 4], np.random.default_rng(seed))


def assert_same_params(a, b):
    for p, q in zip(a.params(), b.params()):
        np.testing.assert_array_equal(p, q)


class TestLrSchedule:
    def test_multistep(self):
        s = TrainSchedule(epochs=8, lr=1.0, lr_schedule="multistep", milestones=(3, 6))
        assert [s.lr_at(e) for e in range(1, 9)] == pytest.approx(
            [1, 1, 1, 0.1, 0.1, 0.1, 0.01, 0.01])

    def test_cosine(self):
        s = TrainSchedule(epochs=4, lr=2.0, lr_schedule="cosine")
        assert s.lr_at(1) == 2.0
        assert s.lr_at(3) == pytest.approx(1.0)
        assert s.lr_at(4) == pytest.approx(1 + math.cos(3 * math.pi / 4))

    def test_warmup(self):
        s = TrainSchedule(epochs=5, lr=1.0, warmup_epochs=2)
        assert [s.lr_at(e) for e in range(1, 6)] == [0.5, 1.0, 1.0, 1.0, 1.0]

    def test_defaults_and_validation(self):
        assert TrainSchedule(epochs=10).cp_start == 6
        assert TrainSchedule(batch_size=32).mix_batch_size == 32
        with pytest.raises(ValueError):
            TrainSchedule(epochs=3, cp_start=4)
        with pytest.raises(ValueError):
            TrainSchedule(lr_schedule="step")


class TestErm:
    def test_deterministic(self, small_toy):
        train, test = small_toy
        s = TrainSchedule(epochs=3, batch_size=32, seed=4)
        m1, cm1, log1 = train_erm(fresh(), train, test, s)
        m2, cm2, log2 = train_erm(fresh(), train, test, s)
        assert_same_params(m1, m2)
        np.testing.assert_array_equal(cm1.counts, cm2.counts)
        assert log1.to_jsonl() == log2.to_jsonl()

    def test_balanced_softmax_on_balanced_data_matches_ce(self):
        rng = np.random.default_rng(3)
        y = np.repeat(np.arange(4), 25)
        data = LabeledDataset(rng.standard_normal((100, 2)) + y[:, None], y, 4)
        s = TrainSchedule(epochs=4, batch_size=20, optimizer="sgd_momentum", lr=0.1)
        a, _, _ = train_erm(fresh(1), data, None, s, "cross_entropy")
        b, _, _ = train_erm(fresh(1), data, None, s, "balanced_softmax")
        for p, q in zip(a.params(), b.params()):
            np.testing.assert_allclose(p, q, rtol=0, atol=1e-10)

    def test_log_roundtrip(self, small_toy, tmp_path):
        train, test = small_toy
        _, _, log = train_erm(fresh(), train, test, TrainSchedule(epochs=2, batch_size=50))
        log.to_jsonl(tmp_path / "log.jsonl")
        rows = TrainLog.read_jsonl(tmp_path / "log.jsonl")
        assert [r["epoch"] for r in rows] == [1, 2]
        assert rows[0]["loss_cp"] is None and rows[0]["test_top1"] is not None

    def test_numeric_abort(self, small_toy):
        train, _ = small_toy
        huge = fresh()
        for w in huge.weights:
            w *= 1e300
        with pytest.raises(NumericAbort, match="epoch 1"):
            train_erm(huge, train, None, TrainSchedule(epochs=2))
        with pytest.raises(NumericAbort):
            train_cpmix(huge, train, None, TrainSchedule(epochs=2, cp_start=0), MixConfig())


class TestCpMix:
    def test_zero_weights_reduce_to_balanced_softmax_erm(self, small_toy):
        train, test = small_toy
        s = TrainSchedule(epochs=4, batch_size=25, cp_start=1, seed=2)
        ref, _, _ = train_erm(fresh(), train, None, s, "balanced_softmax")
        got, _, _ = train_cpmix(fresh(), train, None, s, MixConfig(gamma_cp=0, gamma_mix=0))
        assert_same_params(ref, got)

    def test_one_step_gradient_is_weighted_sum(self, small_toy):
        train, _ = small_toy
        N = len(train)
        mix = MixConfig(alpha=0.7, t=0.4, gamma_cp=0.7, gamma_mix=0.3)
        s = TrainSchedule(epochs=1, cp_start=0, batch_size=N, mix_batch_size=20,
                          optimizer="sgd_momentum", momentum=0.0, lr=0.1, seed=9)
        start = fresh(5)
        got, _, _ = train_cpmix(start.copy(), train, None, s, mix)

        # replay the same random stream by hand
        rng = np.random.default_rng(9)
        counts = train.class_counts
        rows = rng.permutation(N)
        xb, yb = train.features[rows], train.labels[rows]
        g_erm = backward(start, xb, yb, "balanced_softmax", counts)
        bag = ConfusionPairBag(4)
        bag.record_batch(yb, g_erm.predictions)
        cpb = build_cp_batch(bag, ClassIndex.build(train), 20, rng)
        xc, yc, _ = cp_mix_batch(train.features[cpb.rows_t], cpb.classes_t,
                                 train.features[cpb.rows_m], cpb.classes_m, counts, mix, rng)
        g_cp = backward(start, xc, yc)
        perm = rng.permutation(N)
        xv, yv, _ = cp_mix_batch(xb, yb, xb[perm], yb[perm], counts, mix, rng)
        g_mix = backward(start, xv, yv)
        for p0, p1, a, b, c in zip(start.params(), got.params(), g_erm.grads, g_cp.grads,
                                   g_mix.grads):
            np.testing.assert_allclose(p1, p0 - 0.1 * (a + 0.7 * b + 0.3 * c), rtol=0, atol=1e-12)

    def test_stage_gating(self, small_toy):
        train, _ = small_toy
        s = TrainSchedule(epochs=3, cp_start=3, batch_size=30)
        _, bag, log = train_cpmix(fresh(), train, None, s, MixConfig())
        assert bag.reads == 0
        assert all(r.loss_cp is None and r.loss_mix is None for r in log.records)
        s = TrainSchedule(epochs=5, cp_start=3, batch_size=30)
        _, bag, log = train_cpmix(fresh(), train, None, s, MixConfig())
        assert bag.reads == 2 * math.ceil(len(train) / 30) * 30
        assert [r.loss_cp is None for r in log.records] == [True, True, True, False, False]

    def test_bag_tracks_misclassifications(self, small_toy):
        train, _ = small_toy
        _, bag, log = train_cpmix(fresh(), train, None, TrainSchedule(epochs=6, batch_size=20),
                                  MixConfig())
        cum = np.cumsum([r.misclassified for r in log.records])
        assert [r.bag_total for r in log.records] == cum.tolist()
        assert bag.total == cum[-1] > 0
        assert np.all(np.diag(bag.counts) == 0)

    def test_stage_two_from_first_epoch(self, small_toy):
        train, _ = small_toy
        _, bag, log = train_cpmix(fresh(), train, None,
                                  TrainSchedule(epochs=2, cp_start=0, batch_size=40), MixConfig())
        assert log.records[0].loss_cp is not None and bag.reads > 0

    def test_deterministic(self, small_toy):
        train, test = small_toy
        s = TrainSchedule(epochs=4, cp_start=1, batch_size=25, seed=1)
        a, bag_a, log_a = train_cpmix(fresh(), train, test, s, MixConfig())
        b, bag_b, log_b = train_cpmix(fresh(), train, test, s, MixConfig())
        assert_same_params(a, b)
        np.testing.assert_array_equal(bag_a.counts, bag_b.counts)
        assert log_a.to_jsonl() == log_b.to_jsonl()


def test_vanilla_mixup_runs(small_toy):
    train, test = small_toy
    model, log = train_vanilla_mixup(fresh(), train, test, TrainSchedule(epochs=3, batch_size=30))
    assert len(log.records) == 3
    assert all(np.isfinite(r.loss_erm) and r.loss_cp is None for r in log.records)


def test_vanilla_mixup_tiny_alpha_behaves_like_erm():
    # Beta(eps, eps) puts lambda at 0 or 1, so every mixed row is a real sample
    gaps = []
    for seed in range(3):
        train, test = make_toy(ToySpec(), seed)
        s = TrainSchedule(epochs=10, batch_size=100, seed=seed)
        init = MlpClassifier.init([2, 100, 4], np.random.default_rng(seed))
        erm, cm, _ = train_erm(init.copy(), train, None, s)
        mix, _ = train_vanilla_mixup(init.copy(), train, None, s, alpha=1e-4)
        acc = lambda m: np.trace(confusion_matrix(m, test).counts) / len(test)  # noqa: E731
        gaps.append(acc(mix) - acc(erm))
    assert abs(np.mean(gaps)) < 0.03


class TestFinetune:
    def test_disabled_or_zero_epochs_is_identity(self, small_toy):
        train, _ = small_toy
        base = fresh(2)
        for ft in (FinetuneConfig(enabled=False, epochs=5), FinetuneConfig(enabled=True, epochs=0)):
            out = finetune_classifier(base.copy(), train, TrainSchedule(finetune=ft))
            assert_same_params(out, base)

    def test_only_last_layer_moves(self, small_toy):
        train, _ = small_toy
        base = MlpClassifier.init([2, 8, 8, 4], np.random.default_rng(0))
        s = TrainSchedule(batch_size=20, finetune=FinetuneConfig(enabled=True, epochs=2))
        out = finetune_classifier(base.copy(), train, s)
        for p, q in zip(base.params()[:-2], out.params()[:-2]):
            np.testing.assert_array_equal(p, q)
        assert not np.array_equal(base.params()[-2], out.params()[-2])

    def test_improves_minority_recall_on_toy(self):
        spec = ToySpec()
        better = 0
        for seed in range(5):
            train, test = make_toy(spec, seed)
            s = TrainSchedule(epochs=10, batch_size=100, seed=seed,
                              finetune=FinetuneConfig(enabled=True, epochs=3, lr=0.05))
            model, cm, _ = train_erm(MlpClassifier.init([2, 100, 4], np.random.default_rng(seed)),
                                     train, None, s)
            before = minority_recall(confusion_matrix(model, test), spec.minority_classes)
            model = finetune_classifier(model, train, s)
            after = minority_recall(confusion_matrix(model, test), spec.minority_classes)
            better += after >= before
        assert better >= 3
