#!/usr/bin/env python3
"""Full experiment pipeline on the default synthetic dataset.

Generates the 21-participant dataset, trains the multi-output and
single-risk boosted-tree models and the linear-SVM baseline, evaluates
everything on the pooled test split and the 4-participant holdout, runs the
scripted 8-pose geometric session, and writes the report tables plus the F1
comparison CSV under --out-dir.

Run:  python scripts/reproduce_results.py --out-dir results/ --seed 7
"""
import argparse
import os
import sys
import time

import numpy as np

from walkerpose import evalkit, features as feat, gbt, svm as svm_mod
from walkerpose.evalkit import EvalCell, SplitSpec, confusion, metrics, split_dataset
from walkerpose.geometric import calibrate, classify_stream_geometric, default_config
from walkerpose.pose import write_dataset
from walkerpose.synth import (
    NoiseModel, generate_dataset, generate_session, session_truth,
    write_session_truth_csv,
)


def matrices(ds):
    batch = feat.batch_extract(ds)
    if batch.errors:
        raise SystemExit(f"feature extraction failed: {batch.errors[:3]}")
    X = feat.with_missing(batch.values, batch.valid)
    labels = {
        "walker_choice": np.array([int(r.walker_choice) for _, r in ds.samples]),
        "initial_position": np.array([int(r.initial_position.value == "standing")
                                      for _, r in ds.samples]),
        "posture_type": np.array([r.posture_type for _, r in ds.samples]),
    }
    risk = np.array([gbt.RISK_CLASS_NAMES.index(r.risk_label.value)
                     for _, r in ds.samples])
    return X, labels, risk


def cell_for(model_name, output, section, y_true, y_pred, k):
    return EvalCell(model_name, output, section,
                    metrics(confusion(y_true, y_pred, k)))


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--out-dir", default="results")
    parser.add_argument("--seed", type=int, default=7)
    parser.add_argument("--svm-epochs", type=int, default=5)
    args = parser.parse_args()
    os.makedirs(args.out_dir, exist_ok=True)

    print("generating default synthetic dataset ...")
    dataset = generate_dataset(noise=NoiseModel(), seed=args.seed)
    write_dataset(dataset, os.path.join(args.out_dir, "dataset.ndjson"))
    train, test, holdout = split_dataset(dataset, SplitSpec(seed=args.seed))
    print(f"  {len(train)} train / {len(test)} test / {len(holdout)} holdout samples")
    Xtr, ltr, rtr = matrices(train)
    Xte, lte, rte = matrices(test)
    Xho, lho, rho = matrices(holdout)

    cells = []

    print("training multi-output boosted trees ...")
    started = time.time()
    multi, train_acc = gbt.train_multi_output(Xtr, ltr)
    print(f"  {time.time() - started:.0f}s; per-output train accuracy {train_acc}")
    gbt.save_multi_output(multi, os.path.join(args.out_dir, "gbt_multi.json"))
    for section, X, labels in (("training", Xte, lte), ("prediction", Xho, lho)):
        pred = multi.predict(X)
        for output, y in labels.items():
            k = int(max(y.max(), pred[output].max())) + 1
            cells.append(cell_for("gbt", output, section, y, pred[output], k))

    print("training single-output risk model ...")
    risk_model = gbt.train_single_risk(Xtr, rtr)
    gbt.save_model(risk_model, os.path.join(args.out_dir, "gbt_risk.json"))
    cells.append(cell_for("gbt-risk", "risk", "training",
                          rte, gbt.predict_class(risk_model, Xte), 3))
    cells.append(cell_for("gbt-risk", "risk", "prediction",
                          rho, gbt.predict_class(risk_model, Xho), 3))

    print(f"training one-vs-rest linear SVMs ({args.svm_epochs} epochs) ...")
    Xtr0 = np.nan_to_num(Xtr, nan=0.0)
    started = time.time()
    for output in ("walker_choice", "initial_position", "posture_type"):
        model = svm_mod.train_svm(Xtr0, ltr[output],
                                  svm_mod.SVMParams(epochs=args.svm_epochs,
                                                    seed=args.seed))
        for section, X, labels in (("training", Xte, lte), ("prediction", Xho, lho)):
            pred, _ = svm_mod.predict_svm(model, np.nan_to_num(X, nan=0.0))
            y = labels[output]
            k = int(max(y.max(), pred.max())) + 1
            cells.append(cell_for("svm", output, section, y, pred, k))
    print(f"  {time.time() - started:.0f}s")

    print("running the scripted 8-pose geometric session ...")
    session = generate_session(noise=NoiseModel(), seed=args.seed)
    write_dataset(session, os.path.join(args.out_dir, "session.ndjson"))
    write_session_truth_csv(session, os.path.join(args.out_dir, "session_truth.csv"))
    frames = [f for f, _ in session.samples]
    config = default_config()
    baseline = calibrate(frames[:20], config)
    result = classify_stream_geometric(frames, baseline, config)
    truth = session_truth(session)
    y_true = np.array([session.vocabulary.id_of(t) for t in truth])
    y_pred = np.array([session.vocabulary.id_of(p.value) for p in result.poses])
    cells.append(cell_for("geometric", "session_pose", "prediction",
                          y_true, y_pred, len(session.vocabulary)))
    overall = float(np.mean(y_true == y_pred))
    print(f"  session frame accuracy {overall:.4f}")

    # sanity: the boosted trees lead every model on training accuracy
    def train_acc_of(model_name, output):
        for c in cells:
            if c.model == model_name and c.output == output and c.section == "training":
                return c.report.accuracy
        return None

    for output in ("walker_choice", "initial_position", "posture_type"):
        assert train_acc_of("gbt", output) >= train_acc_of("svm", output), output

    tables = evalkit.format_report_tables(cells)
    with open(os.path.join(args.out_dir, "report_tables.txt"), "w") as fh:
        fh.write(tables)
    evalkit.write_report_csv(cells, os.path.join(args.out_dir, "report_metrics.csv"))
    evalkit.write_f1_comparison_csv(cells, os.path.join(args.out_dir, "f1_comparison.csv"))
    print(tables)
    print(f"wrote report files under {args.out_dir}/")
    return 0


if __name__ == "__main__":
    sys.exit(main())
