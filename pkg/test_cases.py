"""
Desk-scale acceptance runs on the versioned synthetic corpus.

Slow tests only run with --runslow:

    pytest test_cases.py --runslow
"""
import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from base.attribution import integrated_gradients, saliency
from base.downstream import LOSO_THRESHOLD, TrainConfig, label_volume_ablation, make_cv_plan
from base.lrp import LrpConfig, LrpMethod, LrpTrace, lrp
from base.masking import build_masking_set, mask_faithfulness, masking_auc
from base.neural import NetConfig, build_network, gradient_check, parameter_count
from base.rng import make_rng
from base.self_supervised import SamplerConfig, learning_curve_auc, pretrain
from base.store import WindowStore
from base.synth import SynthSpec, generate
from base.transforms import TASKS, TransformConfig
from main_har import EXIT_OK, main

TINY = NetConfig.preset("tiny")
SAMPLER = SamplerConfig(subjects_per_iter=4, windows_per_subject=64)
CORPUS = SynthSpec(n_subjects=20, days_per_subject=2, windows_per_day=128, labelled=False, seed=0)


def _best_test_accuracy(result):
    history = result.history
    rows = history[(history["split"] == "test") & (history["epoch"] == result.best_epoch)]
    return dict(zip(rows["task"], rows["accuracy"]))


@pytest.fixture(scope="module")
def pretext_model():
    store = generate(CORPUS)
    result = pretrain(store, TINY, SAMPLER, TransformConfig(), epochs=30, seed=0)
    return store, result


# =====================================================
# FAST CHECKS
# =====================================================
def test_full_network_has_about_ten_million_parameters():
    assert 9_000_000 <= parameter_count(NetConfig.preset("full")) <= 11_000_000


@pytest.mark.slow
def test_tiny_network_gradients_match_finite_differences():
    report = gradient_check(TINY)
    assert report.overall < 1e-4, report.flagged()


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 50), st.integers(0, 2**31 - 1))
def test_cv_folds_are_subject_disjoint(n_subjects, seed):
    rng = np.random.default_rng(seed)
    labels = {}
    for i in range(n_subjects):
        extra = [c for c in (2, 3) if rng.random() < 0.7]
        labels[f"u{i:02d}"] = [0, 1, *extra]
    subjects, classes = [], []
    for subject, performed in labels.items():
        subjects += [subject] * len(performed)
        classes += performed
    store = WindowStore.build(np.zeros((len(classes), 3, 300), np.float32), subjects, [0] * len(classes), classes)

    plan = make_cv_plan(store, seed)
    assert plan.mode == ("loso" if n_subjects < LOSO_THRESHOLD else "kfold")
    assert len(plan.folds) == (n_subjects if n_subjects < LOSO_THRESHOLD else 5)
    if n_subjects < LOSO_THRESHOLD:
        expected = sorted(set.intersection(*(set(v) for v in labels.values())))
        assert plan.classes == expected
    tested = []
    for fold in plan.folds:
        train, val, test = set(fold.train), set(fold.val), set(fold.test)
        assert not (train & val or train & test or val & test)
        assert train | val | test == set(labels)
        tested += fold.test
    assert sorted(tested) == sorted(labels)


def test_integrated_gradients_and_saliency_on_tiny_network():
    net = build_network(TINY, seed=1).double().eval()
    x = np.random.default_rng(0).standard_normal((3, 300))

    ig = integrated_gradients(net, x, steps=256)
    with torch.no_grad():
        f0 = float(net(torch.zeros(1, 3, 300, dtype=torch.float64), ["aot"])[1]["aot"][0, 1])
    gap = abs(ig.total - (ig.output - f0))
    assert gap <= 0.01 * max(abs(ig.output - f0), 1e-6)

    sal = saliency(net, x)
    eps = 1e-6
    for c, t in [(0, 10), (1, 150), (2, 299)]:
        up, down = x.copy(), x.copy()
        up[c, t] += eps
        down[c, t] -= eps
        with torch.no_grad():
            fu = float(net(torch.from_numpy(up)[None], ["aot"])[1]["aot"][0, 1])
            fd = float(net(torch.from_numpy(down)[None], ["aot"])[1]["aot"][0, 1])
        assert abs(sal.scores[c, t] - abs(fu - fd) / (2 * eps)) < 1e-4


def test_lrp0_per_layer_conservation():
    net = build_network(TINY, seed=2).double().eval()
    with torch.no_grad():
        for m in net.modules():
            if isinstance(m, torch.nn.Linear):
                m.bias.zero_()
            elif isinstance(m, torch.nn.BatchNorm1d):
                m.bias.zero_()
                m.running_mean.zero_()
    trace = LrpTrace()
    rel = lrp(net, np.random.default_rng(1).standard_normal((3, 300)), cfg=LrpConfig(method=LrpMethod.LRP_0), trace=trace)
    deviation = np.abs(trace.sums() - rel.output) / abs(rel.output)
    assert deviation.max() < 1e-4


# =====================================================
# DESK-SCALE RUNS
# =====================================================
@pytest.mark.slow
def test_pretext_tasks_are_learnable(pretext_model):
    _, result = pretext_model
    accuracy = _best_test_accuracy(result)
    assert all(accuracy[t] >= 0.85 for t in TASKS), accuracy


@pytest.mark.slow
def test_weighted_sampling_beats_uniform_on_static_corpus():
    store = generate(CORPUS.model_copy(update={"static_fraction": 0.85}))
    runs = {}
    for weighted in (True, False):
        sampler = SAMPLER.model_copy(update={"weighted": weighted})
        runs[weighted] = pretrain(store, TINY, sampler, TransformConfig(), epochs=30, seed=0, tasks=["aot"], patience=30)
    auc_weighted = learning_curve_auc(runs[True].history, "aot")
    auc_uniform = learning_curve_auc(runs[False].history, "aot")
    assert auc_weighted > auc_uniform

    def final(result):
        test = result.history[result.history["split"] == "test"]
        return float(test.sort_values("epoch")["accuracy"].iloc[-1])

    assert final(runs[False]) <= 0.60
    assert final(runs[True]) >= 0.80


@pytest.mark.slow
def test_pretraining_helps_with_two_labelled_subjects(pretext_model):
    _, result = pretext_model
    labelled = generate(SynthSpec(n_subjects=6, days_per_subject=1, windows_per_day=96, seed=100))
    families = ("finetune-all", "finetune-head", "scratch")
    scores = []
    for seed in range(3):
        cfg = TrainConfig(epochs=20, batch_size=32, seed=seed)
        table = label_volume_ablation(labelled, result.checkpoint, [2], cfg=cfg, net_cfg=TINY, families=families)
        scores.append(dict(zip(table["family"], table["f1_mean"])))

    mean = {f: np.mean([s[f] for s in scores]) for f in families}
    assert mean["finetune-all"] >= mean["scratch"] + 0.05, mean
    ordered = sum(s["finetune-all"] >= s["finetune-head"] >= s["scratch"] for s in scores)
    assert ordered >= 2, scores


@pytest.mark.slow
def test_relevance_order_destroys_evidence_fastest(pretext_model):
    store, result = pretext_model
    net = result.checkpoint.to_model().eval()
    data = build_masking_set(store, net, TransformConfig(), 50, make_rng(0, "masking_set"))
    area = {
        order: masking_auc(mask_faithfulness(net, data, "lrp-cmp", order, seed=0), "aot")
        for order in ("relevance", "random", "temporal")
    }
    assert area["relevance"] <= area["random"] - 0.02, area
    assert area["temporal"] > area["relevance"], area


@pytest.mark.slow
def test_cli_reruns_are_byte_identical(tmp_path):
    synth = ["synth.n_subjects=4", "synth.days_per_subject=1", "synth.windows_per_day=24"]
    tiny = ["net=tiny", "sampler.subjects_per_iter=2", "sampler.windows_per_subject=16", "train.epochs=2"]
    for run in ("a", "b"):
        out = tmp_path / run
        assert main(["synth", *synth, "--out", str(out / "data"), "--seed", "3"]) == EXIT_OK
        store = f"store={out / 'data' / 'store.harw'}"
        assert main(["pretrain", *tiny, store, "pretrain.epochs=2", "--out", str(out / "ssl"), "--seed", "3"]) == EXIT_OK
        ckpt = f"checkpoint={out / 'ssl' / 'pretrain.harc'}"
        assert main(["finetune", *tiny, store, ckpt, "--out", str(out / "ft"), "--seed", "3"]) == EXIT_OK
        assert main(["rf", store, "forest.n_trees=5", "--out", str(out / "rf"), "--seed", "3"]) == EXIT_OK

    first = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.suffix in (".csv", ".harc", ".harw"))
    assert first
    for rel in first:
        assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes(), rel
