import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from base.checkpoint import NetworkCheckpoint
from base.downstream import (
    REPORT_COLUMNS,
    EvalReport,
    Fold,
    TrainConfig,
    evaluate,
    finetune,
    holdout_fold,
    label_volume_ablation,
    make_cv_plan,
    run_cv,
    supervised_pretrain,
)
from base.errors import ConfigError, LabelError, ShapeError
from base.forest import ForestConfig
from base.neural import NetConfig, build_network
from base.store import WindowStore

FAST = TrainConfig(epochs=1, batch_size=8, seed=0)
SMALL_FOREST = ForestConfig(n_trees=10)


def _labelled_store(labels_by_subject, seed=0):
    """Still windows for even labels, vigorous noise for odd ones"""
    rng = np.random.default_rng(seed)
    windows, subjects, labels = [], [], []
    for subject, subject_labels in labels_by_subject.items():
        for label in subject_labels:
            scale = 2.0 if label % 2 else 0.01
            windows.append(scale * rng.standard_normal((3, 300)) + (label // 2))
            subjects.append(subject)
            labels.append(label)
    return WindowStore.build(np.asarray(windows, np.float32), subjects, [0] * len(labels), labels)


def _balanced(n_subjects, per_subject=8, classes=(0, 1)):
    return _labelled_store({f"p{i:02d}": [classes[j % len(classes)] for j in range(per_subject)] for i in range(n_subjects)})


def _check_partition(plan, subjects):
    tested = []
    for fold in plan.folds:
        train, val, test = set(fold.train), set(fold.val), set(fold.test)
        assert not (train & val or train & test or val & test)
        assert train | val | test == set(subjects)
        tested += list(test)
    assert sorted(tested) == sorted(subjects)


class TestCvPlan:
    def test_loso_below_ten_subjects(self):
        store = _balanced(4)
        plan = make_cv_plan(store)
        assert plan.mode == "loso"
        assert len(plan.folds) == 4
        assert all(len(f.test) == 1 for f in plan.folds)
        _check_partition(plan, store.subjects())

    def test_five_folds_from_ten_subjects(self):
        store = _balanced(12)
        plan = make_cv_plan(store)
        assert plan.mode == "kfold"
        assert len(plan.folds) == 5
        _check_partition(plan, store.subjects())

    def test_loso_prunes_classes_some_subject_never_performs(self):
        store = _labelled_store({"a": [0, 1, 2], "b": [0, 1, 2], "c": [0, 1]})
        plan = make_cv_plan(store)
        assert plan.classes == [0, 1]
        assert plan.dropped_classes == [2]
        prepared = plan.prepare(store)
        assert len(prepared) == 6
        assert prepared.class_ids() == [0, 1]

    def test_prepare_renumbers(self):
        store = _labelled_store({"a": [1, 3], "b": [1, 3]})
        plan = make_cv_plan(store)
        assert plan.prepare(store).labels.tolist() == [0, 1, 0, 1]

    def test_unlabelled_store(self, two_day_store):
        with pytest.raises(LabelError):
            make_cv_plan(two_day_store)

    def test_single_subject(self):
        with pytest.raises(ConfigError, match="at least 2 subjects"):
            make_cv_plan(_balanced(1))

    def test_single_class_fold(self):
        with pytest.raises(LabelError, match="need 2"):
            make_cv_plan(_labelled_store({"a": [0, 0], "b": [0, 0]}))

    @settings(max_examples=30, deadline=None)
    @given(st.integers(2, 25), st.integers(0, 2**31 - 1))
    def test_partition_holds_for_any_subject_count(self, n_subjects, seed):
        store = _balanced(n_subjects, per_subject=2)
        plan = make_cv_plan(store, seed)
        _check_partition(plan, store.subjects())

    def test_holdout_fold(self):
        fold = holdout_fold([f"s{i}" for i in range(9)])
        assert fold.test == ()
        assert len(fold.val) == 1 and len(fold.train) == 8


class TestEvalReport:
    def test_perfect_forest_scores_one(self):
        store = _balanced(4, per_subject=10)
        report = run_cv(store, make_cv_plan(store), "forest", FAST, forest_cfg=SMALL_FOREST, dataset="toy")
        assert list(report.rows.columns) == REPORT_COLUMNS
        assert (report.rows["f1"] == 1.0).all()
        assert (report.rows["kappa"] == 1.0).all()
        summary = report.summary()
        assert summary["f1_mean"] == 1.0 and summary["f1_sd"] == 0.0
        assert set(report.confusions) == {0, 1, 2, 3}

    def test_summary_row(self):
        store = _balanced(3, per_subject=10)
        frame = run_cv(store, make_cv_plan(store), "forest", FAST, forest_cfg=SMALL_FOREST).to_frame()
        assert frame.iloc[-1]["fold"] == "summary"
        assert frame.iloc[-1]["n_windows"] == 30

    def test_empty_merge(self):
        assert EvalReport.merge([EvalReport.empty()]).rows.empty


class TestNetworkFamilies:
    def test_head_only_leaves_trunk_bit_identical(self, tiny_cfg):
        store = _balanced(4)
        ckpt = NetworkCheckpoint.from_model(build_network(tiny_cfg, seed=2))
        fold = make_cv_plan(store).folds[0]
        model = finetune(ckpt, store, fold, 2, mode="head-only", cfg=FAST)
        assert NetworkCheckpoint.from_model(model.net).trunk_bytes() == ckpt.trunk_bytes()
        assert len(model.curve) == 1

    def test_all_layers_moves_the_trunk(self, tiny_cfg):
        store = _balanced(4)
        ckpt = NetworkCheckpoint.from_model(build_network(tiny_cfg, seed=2))
        fold = make_cv_plan(store).folds[0]
        model = finetune(ckpt, store, fold, 2, cfg=TrainConfig(epochs=2, batch_size=8, patience=5))
        assert NetworkCheckpoint.from_model(model.net).trunk_bytes() != ckpt.trunk_bytes()

    def test_zero_epochs_returns_the_checkpoint(self, tiny_cfg):
        store = _balanced(4)
        ckpt = NetworkCheckpoint.from_model(build_network(tiny_cfg, seed=5))
        model = finetune(ckpt, store, make_cv_plan(store).folds[0], 2, cfg=TrainConfig(epochs=0, seed=0))
        assert model.curve.empty
        assert model.best_epoch == 0
        after = NetworkCheckpoint.from_model(model.net)
        assert after.trunk_bytes() == ckpt.trunk_bytes()
        for name, value in ckpt.tensors.items():
            np.testing.assert_array_equal(after.tensors[name], value, err_msg=name)

    def test_window_length_mismatch(self):
        cfg = NetConfig.preset("tiny", input_T=200)
        ckpt = NetworkCheckpoint.from_model(build_network(cfg))
        store = _balanced(3)
        with pytest.raises(ShapeError):
            finetune(ckpt, store, make_cv_plan(store).folds[0], 2, cfg=FAST)

    def test_bad_mode(self, tiny_cfg):
        store = _balanced(3)
        ckpt = NetworkCheckpoint.from_model(build_network(tiny_cfg))
        with pytest.raises(ConfigError):
            finetune(ckpt, store, make_cv_plan(store).folds[0], 2, mode="half", cfg=FAST)

    def test_scratch_run_reports_every_subject(self, tiny_cfg):
        store = _balanced(3)
        report = run_cv(store, make_cv_plan(store), "scratch", FAST, net_cfg=tiny_cfg)
        assert sorted(report.rows["subject"]) == store.subjects()
        assert report.rows["f1"].between(0, 1).all()

    def test_family_needs_checkpoint(self):
        store = _balanced(3)
        with pytest.raises(ConfigError, match="checkpoint"):
            run_cv(store, make_cv_plan(store), "finetune-all", FAST)

    def test_supervised_pretrain_drops_classifier(self, tiny_cfg):
        ckpt = supervised_pretrain(_balanced(3), tiny_cfg, FAST)
        assert ckpt.n_classes is None
        assert not any(name.startswith("model.classifier") for name in ckpt.tensors)

    def test_evaluate_needs_test_subjects(self, tiny_cfg):
        store = _balanced(3)
        net = build_network(tiny_cfg, n_classes=2)
        with pytest.raises(LabelError, match="empty test set"):
            evaluate(net, store, Fold(0, tuple(store.subjects()), (), ()))


class TestAblation:
    def test_forest_label_volume(self):
        store = _balanced(4, per_subject=10)
        frame = label_volume_ablation(
            store, None, [1, 2], cfg=FAST, forest_cfg=SMALL_FOREST, families=["forest"]
        )
        assert frame["n_subjects"].tolist() == [1, 2]
        assert set(frame.columns) >= {"family", "f1_mean", "f1_sd", "kappa_mean", "kappa_sd"}

    def test_counts_beyond_available_subjects(self):
        store = _balanced(4)
        with pytest.raises(ConfigError, match="outside"):
            label_volume_ablation(store, None, [50], cfg=FAST, families=["forest"])
