import numpy as np
import pytest

from walkerpose import evalkit
from walkerpose.evalkit import (
    ConfusionMatrix,
    EvalCell,
    EvalError,
    SplitError,
    SplitSpec,
    confusion,
    format_report_tables,
    metrics,
    read_report_csv,
    split_dataset,
    write_f1_comparison_csv,
    write_report_csv,
)
from walkerpose.synth import GeneratorSpec, NoiseModel, generate_dataset


# --- brute-force metrics oracle -------------------------------------------------
#
# Straight from the pairwise TP/FP/FN/TN definitions, one class at a time.

def oracle_metrics(true, pred, k):
    true = np.asarray(true)
    pred = np.asarray(pred)
    n = len(true)
    accuracy = sum(int(t == p) for t, p in zip(true, pred)) / n
    per = {m: [] for m in ("precision", "f1", "sensitivity", "specificity")}
    support = []
    for c in range(k):
        tp = sum(1 for t, p in zip(true, pred) if t == c and p == c)
        fp = sum(1 for t, p in zip(true, pred) if t != c and p == c)
        fn = sum(1 for t, p in zip(true, pred) if t == c and p != c)
        tn = n - tp - fp - fn
        prec = tp / (tp + fp) if tp + fp else 0.0
        sens = tp / (tp + fn) if tp + fn else 0.0
        spec = tn / (tn + fp) if tn + fp else 0.0
        f1 = 2 * prec * sens / (prec + sens) if prec + sens else 0.0
        per["precision"].append(prec)
        per["sensitivity"].append(sens)
        per["specificity"].append(spec)
        per["f1"].append(f1)
        support.append(sum(1 for t in true if t == c))
    macro = {m: sum(v) / k for m, v in per.items()}
    weighted = {m: sum(x * s for x, s in zip(v, support)) / n for m, v in per.items()}
    return accuracy, per, macro, weighted


def test_metrics_match_oracle_exactly():
    rng = np.random.default_rng(40)
    for _ in range(300):
        k = int(rng.integers(2, 8))
        n = int(rng.integers(1, 60))
        true = rng.integers(0, k, n)
        pred = rng.integers(0, k, n)
        report = metrics(confusion(true, pred, k))
        acc, per, macro, weighted = oracle_metrics(true, pred, k)
        assert report.accuracy == acc
        for m in per:
            assert report.per_class[m].tolist() == per[m]
            assert report.macro[m] == macro[m]
            assert report.weighted[m] == weighted[m]


def test_worked_example():
    # true=[0,0,1,1], pred=[0,1,1,1] -> [[1,1],[0,2]]
    cm = confusion([0, 0, 1, 1], [0, 1, 1, 1], 2)
    assert cm.counts.tolist() == [[1, 1], [0, 2]]
    report = metrics(cm)
    assert report.accuracy == 0.75
    assert report.per_class["precision"][0] == 1.0
    assert report.per_class["sensitivity"][0] == 0.5
    assert report.per_class["specificity"][0] == 1.0
    assert report.per_class["f1"][0] == pytest.approx(2 / 3)
    assert report.per_class["precision"][1] == pytest.approx(2 / 3)
    assert report.per_class["sensitivity"][1] == 1.0
    assert report.per_class["specificity"][1] == 0.5
    assert report.per_class["f1"][1] == pytest.approx(0.8)


def test_perfect_predictions_diagonal():
    cm = confusion([0, 1, 2, 2], [0, 1, 2, 2], 3)
    assert np.all(cm.counts == np.diag([1, 1, 2]))
    report = metrics(cm)
    assert report.accuracy == 1.0
    for m, values in report.per_class.items():
        assert (values == 1.0).all(), m


def test_single_class_matrix_flags_undefined_specificity():
    report = metrics(ConfusionMatrix(np.array([[5]])))
    assert report.accuracy == 1.0
    assert report.per_class["specificity"][0] == 0.0
    assert ("specificity", 0) in report.undefined


def test_confusion_errors():
    with pytest.raises(EvalError):
        confusion([0, 1], [0], 2)
    with pytest.raises(EvalError):
        confusion([], [], 2)
    with pytest.raises(EvalError):
        confusion([0, 5], [0, 1], 2)
    with pytest.raises(EvalError):
        metrics(ConfusionMatrix(np.zeros((2, 2), dtype=int)))


def test_macro_f1_consistent_with_per_class():
    rng = np.random.default_rng(41)
    true = rng.integers(0, 5, 200)
    pred = rng.integers(0, 5, 200)
    report = metrics(confusion(true, pred, 5))
    assert report.macro["f1"] == pytest.approx(report.per_class["f1"].mean(), abs=1e-12)


def test_accuracy_equals_weighted_sensitivity():
    rng = np.random.default_rng(42)
    for _ in range(50):
        k = int(rng.integers(2, 6))
        true = rng.integers(0, k, 100)
        if len(np.unique(true)) < k:
            continue  # identity requires every class non-empty
        pred = rng.integers(0, k, 100)
        report = metrics(confusion(true, pred, k))
        assert report.weighted["sensitivity"] == pytest.approx(report.accuracy, abs=1e-12)


# --- splits -------------------------------------------------------------------

@pytest.fixture(scope="module")
def small_dataset():
    spec = GeneratorSpec(n_participants=21, frames_per_class=5)
    return generate_dataset(spec, NoiseModel(), seed=3)


def test_split_sizes(small_dataset):
    train, test, holdout = split_dataset(small_dataset, SplitSpec(seed=3))
    assert len(holdout) == 4 * 17 * 5
    pool = len(small_dataset) - len(holdout)
    assert abs(len(train) - 0.8 * pool) <= 1
    assert abs(len(test) - 0.2 * pool) <= 1


def test_split_is_partition(small_dataset):
    train, test, holdout = split_dataset(small_dataset, SplitSpec(seed=5))
    def keys(ds):
        return [(f.participant_id, f.timestamp_ms) for f, _ in ds.samples]
    combined = sorted(keys(train) + keys(test) + keys(holdout))
    assert combined == sorted(keys(small_dataset))


def test_split_deterministic(small_dataset):
    a = split_dataset(small_dataset, SplitSpec(seed=9))
    b = split_dataset(small_dataset, SplitSpec(seed=9))
    for ds_a, ds_b in zip(a, b):
        assert ds_a == ds_b


def test_split_named_holdout(small_dataset):
    spec = SplitSpec(holdout_participants=("p00", "p05"), seed=1)
    train, test, holdout = split_dataset(small_dataset, spec)
    assert set(f.participant_id for f, _ in holdout.samples) == {"p00", "p05"}
    assert not {"p00", "p05"} & set(f.participant_id for f, _ in train.samples)


def test_split_unknown_participant(small_dataset):
    with pytest.raises(SplitError, match="p99"):
        split_dataset(small_dataset, SplitSpec(holdout_participants=("p99",)))


def test_split_all_held_out(small_dataset):
    everyone = small_dataset.participants()
    with pytest.raises(SplitError):
        split_dataset(small_dataset, SplitSpec(holdout_participants=everyone))


def test_split_by_participant(small_dataset):
    train, test, holdout = split_dataset(
        small_dataset, SplitSpec(seed=2, mode="by_participant"))
    train_p = set(f.participant_id for f, _ in train.samples)
    test_p = set(f.participant_id for f, _ in test.samples)
    assert not train_p & test_p


def test_split_spec_validation():
    with pytest.raises(SplitError):
        SplitSpec(train_fraction=1.0)
    with pytest.raises(SplitError):
        SplitSpec(mode="bogus")


# --- report tables ---------------------------------------------------------------

def _cells():
    r1 = metrics(confusion([0, 0, 1, 1], [0, 1, 1, 1], 2))
    r2 = metrics(confusion([0, 1, 2], [0, 1, 2], 3))
    return [
        EvalCell("gbt", "walker_choice", "training", r1),
        EvalCell("gbt", "walker_choice", "prediction", r2),
        EvalCell("gbt", "posture_type", "training", r1),
        EvalCell("svm", "posture_type", "training", r2),
        EvalCell("svm", "posture_type", "prediction", None, "not evaluated"),
    ]


def test_format_report_tables_sections():
    text = format_report_tables(_cells())
    assert "Training and Validation" in text and "Prediction" in text
    assert "Accuracy" in text and "Specificity" in text
    assert "=== gbt" in text and "=== svm" in text
    assert "missing: not evaluated" in text


def test_report_csv_round_trip(tmp_path):
    path = tmp_path / "report.csv"
    write_report_csv(_cells(), path)
    rows = read_report_csv(path)
    assert rows[0]["model"] == "gbt"
    assert rows[0]["accuracy"] == 0.75
    f1 = metrics(confusion([0, 0, 1, 1], [0, 1, 1, 1], 2)).macro["f1"]
    assert rows[0]["f1"] == f1  # repr round trip is exact


def test_f1_comparison_csv(tmp_path):
    path = tmp_path / "f1.csv"
    write_f1_comparison_csv(_cells(), path)
    lines = path.read_text().splitlines()
    assert lines[0] == "model,output,f1"
    assert len(lines) == 2  # only prediction cells with reports
    assert lines[1].startswith("gbt,walker_choice,")


def test_gbt_training_accuracy_leads_svm(small_dataset):
    # report-level ordering: the boosted trees beat the linear baseline on
    # training accuracy for the hard multi-class output
    from walkerpose import features as feat
    from walkerpose import gbt, svm as svm_mod

    train, test, _ = split_dataset(small_dataset, SplitSpec(seed=1))
    batch = feat.batch_extract(train)
    X = feat.with_missing(batch.values, batch.valid)
    y = np.array([r.posture_type for _, r in train.samples])
    gbt_model = gbt.train_gbt(X, y, gbt.GBTParams(objective="softmax",
                                                  n_classes=17, n_rounds=10))
    gbt_acc = np.mean(gbt.predict_class(gbt_model, X) == y)
    svm_model = svm_mod.train_svm(np.nan_to_num(X, nan=0.0), y,
                                  svm_mod.SVMParams(epochs=8, seed=0))
    svm_acc = np.mean(svm_mod.predict_svm(svm_model, np.nan_to_num(X, nan=0.0))[0] == y)
    assert gbt_acc >= svm_acc
