"""Command-line workflow: synth, extract, train, eval, report, serve, classify-file.

Exit codes: 0 ok, 1 usage, 2 data error, 3 internal error.  Output files
are written atomically (partial outputs are removed on failure), and every
subcommand is deterministic given --seed.
"""
from __future__ import annotations

import argparse
import contextlib
import json
import os
import sys
import tempfile

import numpy as np

from . import evalkit, features as feat, gbt, svm as svm_mod
from .geometric import (
    classify_stream_geometric, calibrate, default_config, load_config,
    GeometricError,
)
from .pose import Dataset, DatasetFormatError, PoseError, read_dataset, write_dataset
from .serve import (
    CONFIG_ENV_VAR, ModelBundle, ServerConfig, ServeError,
    serve, server_config_from_obj,
)
from .synth import (
    DEFAULT_SESSION_SCRIPT, GeneratorSpec, NoiseModel, ZERO_NOISE,
    generate_dataset, generate_session, session_truth, write_session_truth_csv,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_INTERNAL = 3


class CliError(Exception):
    """Data-level failure; maps to exit code 2."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse defaults to exit code 2; we use 1
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


@contextlib.contextmanager
def atomic_output(path):
    """Write to a temp file, rename on success, remove on failure."""
    directory = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-walkerpose-")
    os.close(fd)
    try:
        yield tmp
        os.replace(tmp, path)
    except BaseException:
        with contextlib.suppress(OSError):
            os.unlink(tmp)
        raise


def _load_dataset(path) -> Dataset:
    try:
        return read_dataset(path)
    except FileNotFoundError:
        raise CliError(f"no such file: {path}")
    except DatasetFormatError as exc:
        raise CliError(f"{path}: {exc}")


def _dataset_matrices(dataset: Dataset, mode: str):
    """Feature matrix + label arrays from a dataset (mode: features|raw)."""
    if mode == "raw":
        X = np.stack([f.coords().reshape(-1) for f, _ in dataset.samples])
    else:
        batch = feat.batch_extract(dataset)
        if batch.errors:
            idx = ", ".join(str(i) for i, _ in batch.errors[:5])
            raise CliError(f"feature extraction failed on rows: {idx}")
        X = feat.with_missing(batch.values, batch.valid)
    walker = np.array([int(r.walker_choice) for _, r in dataset.samples])
    init = np.array([int(r.initial_position.value == "standing")
                     for _, r in dataset.samples])
    posture = np.array([r.posture_type for _, r in dataset.samples])
    risk_names = [r.risk_label.value if r.risk_label else None
                  for _, r in dataset.samples]
    return X, {"walker_choice": walker, "initial_position": init,
               "posture_type": posture}, risk_names


# --- subcommands ---------------------------------------------------------------

def _cmd_synth(args) -> int:
    noise = ZERO_NOISE if args.zero_noise else NoiseModel(
        jitter_sigma=args.jitter, participant_sigma=args.offset)
    if args.what == "dataset":
        spec = GeneratorSpec(n_participants=args.participants,
                             frames_per_class=args.frames_per_class)
        dataset = generate_dataset(spec, noise, seed=args.seed)
    else:
        dataset = generate_session(DEFAULT_SESSION_SCRIPT, fps=args.fps,
                                   noise=noise, seed=args.seed)
        if args.truth:
            with atomic_output(args.truth) as tmp:
                write_session_truth_csv(dataset, tmp)
    with atomic_output(args.out) as tmp:
        write_dataset(dataset, tmp)
    print(f"wrote {len(dataset)} samples to {args.out}")
    return EXIT_OK


def _cmd_extract(args) -> int:
    dataset = _load_dataset(args.data)
    batch = feat.batch_extract(dataset)
    if batch.errors:
        for i, message in batch.errors[:10]:
            print(f"row {i}: {message}", file=sys.stderr)
        raise CliError(f"{len(batch.errors)} rows failed feature extraction")
    walker = np.array([int(r.walker_choice) for _, r in dataset.samples])
    init = np.array([int(r.initial_position.value == "standing")
                     for _, r in dataset.samples])
    posture = np.array([r.posture_type for _, r in dataset.samples])
    with atomic_output(args.out) as tmp:
        feat.write_feature_csv(tmp, batch.values, batch.valid, walker, init, posture)
    print(f"wrote {batch.values.shape[0]} feature rows to {args.out}")
    return EXIT_OK


def _features_from_csv(path):
    try:
        values, valid, walker, init, posture = feat.read_feature_csv(path)
    except FileNotFoundError:
        raise CliError(f"no such file: {path}")
    except feat.FeatureError as exc:
        raise CliError(f"{path}: {exc}")
    X = feat.with_missing(values, valid)
    return X, {"walker_choice": walker, "initial_position": init,
               "posture_type": posture}


def _gbt_params(args, objective: str, n_classes: int = 2) -> gbt.GBTParams:
    return gbt.GBTParams(
        learning_rate=args.eta, max_depth=args.depth, n_rounds=args.rounds,
        l2_reg=args.l2, objective=objective, n_classes=n_classes, seed=args.seed)


def _cmd_train(args) -> int:
    try:
        if args.model == "gbt":
            if args.input_mode == "raw":
                if not args.data:
                    raise CliError("--input-mode raw trains from --data NDJSON")
                X, labels, _ = _dataset_matrices(_load_dataset(args.data), "raw")
            elif args.features:
                X, labels = _features_from_csv(args.features)
            else:
                raise CliError("train gbt needs --features (or --data with --input-mode raw)")
            n_classes = int(labels["posture_type"].max()) + 1
            params = {
                "walker_choice": _gbt_params(args, gbt.OBJECTIVE_BINARY),
                "initial_position": _gbt_params(args, gbt.OBJECTIVE_BINARY),
                "posture_type": _gbt_params(args, gbt.OBJECTIVE_SOFTMAX, n_classes),
            }
            multi, train_acc = gbt.train_multi_output(X, labels, params)
            with atomic_output(args.out) as tmp:
                gbt.save_multi_output(multi, tmp)
            for name, acc in train_acc.items():
                print(f"{name}: train accuracy {acc:.4f}")
        elif args.model == "gbt-risk":
            if not args.data:
                raise CliError("train gbt-risk needs --data (risk labels live in the dataset)")
            dataset = _load_dataset(args.data)
            X, _, risk_names = _dataset_matrices(dataset, args.input_mode)
            if any(r is None for r in risk_names):
                raise CliError("dataset has samples without risk labels")
            risk = np.array([gbt.RISK_CLASS_NAMES.index(r) for r in risk_names])
            model = gbt.train_single_risk(
                X, risk, _gbt_params(args, gbt.OBJECTIVE_SOFTMAX, 3))
            with atomic_output(args.out) as tmp:
                gbt.save_model(model, tmp)
            acc = float(np.mean(gbt.predict_class(model, X) == risk))
            print(f"risk: train accuracy {acc:.4f}")
        else:  # svm
            if not args.features:
                raise CliError("train svm needs --features")
            X, labels = _features_from_csv(args.features)
            y = labels[args.output]
            model = svm_mod.train_svm(np.nan_to_num(X, nan=0.0), y,
                                      svm_mod.SVMParams(epochs=args.epochs, seed=args.seed))
            with atomic_output(args.out) as tmp:
                svm_mod.save_svm(model, tmp)
            pred, _ = svm_mod.predict_svm(model, np.nan_to_num(X, nan=0.0))
            print(f"svm/{args.output}: train accuracy {np.mean(pred == y):.4f}")
    except (gbt.GBTError, svm_mod.SVMError) as exc:
        raise CliError(str(exc))
    return EXIT_OK


def _evaluate_models(dataset: Dataset, args) -> list[evalkit.EvalCell]:
    spec = evalkit.SplitSpec(n_holdout=args.holdout, seed=args.seed)
    train, test, holdout = evalkit.split_dataset(dataset, spec)
    cells: list[evalkit.EvalCell] = []

    def eval_multi(name, multi):
        for section, subset in (("training", test), ("prediction", holdout)):
            X, labels, _ = _dataset_matrices(subset, args.input_mode)
            predictions = multi.predict(X)
            for output, y_true in labels.items():
                k = max(int(y_true.max()), int(predictions[output].max())) + 1
                cm = evalkit.confusion(y_true, predictions[output], k)
                cells.append(evalkit.EvalCell(name, output, section,
                                              evalkit.metrics(cm)))

    if args.multi:
        eval_multi("gbt", gbt.load_multi_output(args.multi))
    if args.risk:
        risk_model = gbt.load_model(args.risk)
        for section, subset in (("training", test), ("prediction", holdout)):
            X, _, risk_names = _dataset_matrices(subset, args.input_mode)
            if any(r is None for r in risk_names):
                cells.append(evalkit.EvalCell("gbt-risk", "risk", section,
                                              None, "missing risk labels"))
                continue
            y_true = np.array([gbt.RISK_CLASS_NAMES.index(r) for r in risk_names])
            pred = gbt.predict_class(risk_model, X)
            cm = evalkit.confusion(y_true, pred, 3, gbt.RISK_CLASS_NAMES)
            cells.append(evalkit.EvalCell("gbt-risk", "risk", section,
                                          evalkit.metrics(cm)))
    if args.svm:
        model = svm_mod.load_svm(args.svm)
        for section, subset in (("training", test), ("prediction", holdout)):
            X, labels, _ = _dataset_matrices(subset, args.input_mode)
            y_true = labels[args.svm_output]
            pred, _ = svm_mod.predict_svm(model, np.nan_to_num(X, nan=0.0))
            k = max(int(y_true.max()), int(pred.max())) + 1
            cm = evalkit.confusion(y_true, pred, k)
            cells.append(evalkit.EvalCell("svm", args.svm_output, section,
                                          evalkit.metrics(cm)))
    if not cells:
        raise CliError("nothing to evaluate: pass --multi, --risk and/or --svm")
    return cells


def _cmd_eval(args) -> int:
    dataset = _load_dataset(args.data)
    cells = _evaluate_models(dataset, args)
    text = evalkit.format_report_tables(cells, averaging=args.averaging)
    if args.format == "text":
        print(text, end="")
    else:
        if not args.out:
            raise CliError("--format csv requires --out")
    if args.out:
        if args.format == "csv":
            with atomic_output(args.out) as tmp:
                evalkit.write_report_csv(cells, tmp, averaging=args.averaging)
        else:
            with atomic_output(args.out) as tmp:
                with open(tmp, "w", encoding="utf-8") as fh:
                    fh.write(text)
        print(f"wrote report to {args.out}")
    return EXIT_OK


def _cmd_report(args) -> int:
    dataset = _load_dataset(args.data)
    cells = _evaluate_models(dataset, args)
    os.makedirs(args.out_dir, exist_ok=True)
    tables = os.path.join(args.out_dir, "report_tables.txt")
    report_csv = os.path.join(args.out_dir, "report_metrics.csv")
    f1_csv = os.path.join(args.out_dir, "f1_comparison.csv")
    text = evalkit.format_report_tables(cells, averaging=args.averaging)
    with atomic_output(tables) as tmp:
        with open(tmp, "w", encoding="utf-8") as fh:
            fh.write(text)
    with atomic_output(report_csv) as tmp:
        evalkit.write_report_csv(cells, tmp, averaging=args.averaging)
    with atomic_output(f1_csv) as tmp:
        evalkit.write_f1_comparison_csv(cells, tmp, averaging=args.averaging)
    print(text, end="")
    print(f"wrote {tables}, {report_csv}, {f1_csv}")
    return EXIT_OK


def _cmd_serve(args) -> int:
    config_path = args.config or os.environ.get(CONFIG_ENV_VAR)
    if config_path:
        with open(config_path, "r", encoding="utf-8") as fh:
            config = server_config_from_obj(json.load(fh))
    else:
        config = ServerConfig()
    overrides = {}
    if args.port is not None:
        overrides["port"] = args.port
    if args.multi:
        overrides["multi_model_path"] = args.multi
    if args.risk:
        overrides["risk_model_path"] = args.risk
    if args.geometric_config:
        overrides["geometric_config_path"] = args.geometric_config
    if args.vocab:
        overrides["vocab"] = tuple(_load_dataset(args.vocab).vocabulary.names)
    if args.stdio:
        overrides["mode"] = "stdio"
    if overrides:
        config = ServerConfig(**{**config.__dict__, **overrides})
    serve(config)
    return EXIT_OK


def _cmd_classify_file(args) -> int:
    dataset = _load_dataset(args.session)
    config = load_config(args.geometric_config) if args.geometric_config else default_config()
    frames = [f for f, _ in dataset.samples]
    if len(frames) < config.n_cal_min + 1:
        raise CliError("session too short to calibrate")
    n_cal = args.calibration_frames
    try:
        baseline = calibrate(frames[:n_cal], config)
        result = classify_stream_geometric(frames, baseline, config)
    except GeometricError as exc:
        raise CliError(str(exc))
    with atomic_output(args.out) as tmp:
        with open(tmp, "w", encoding="utf-8") as fh:
            for frame, pose, raw in zip(frames, result.poses, result.raw):
                fh.write(json.dumps({"ts": frame.timestamp_ms, "pose": pose.value,
                                     "raw_pose": raw.value}) + "\n")
    truth = session_truth(dataset)
    correct = sum(p.value == t for p, t in zip(result.poses, truth))
    print(f"classified {len(frames)} frames; "
          f"accuracy vs session labels {correct / len(frames):.4f}")
    print(f"transitions: {len(result.transitions)}")
    return EXIT_OK


# --- parser -----------------------------------------------------------------

def build_parser() -> _Parser:
    parser = _Parser(prog="walkerpose",
                     description="Posture classification workflows for "
                                 "smart-walker landmark streams")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset or session")
    p.add_argument("what", choices=["dataset", "session"])
    p.add_argument("--out", required=True)
    p.add_argument("--truth", help="session ground-truth CSV (session only)")
    p.add_argument("--participants", type=int, default=21)
    p.add_argument("--frames-per-class", type=int, default=120)
    p.add_argument("--fps", type=float, default=10.0)
    p.add_argument("--jitter", type=float, default=0.01)
    p.add_argument("--offset", type=float, default=0.02)
    p.add_argument("--zero-noise", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("extract", help="extract the 48-feature CSV from a dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_extract)

    p = sub.add_parser("train", help="train a model")
    p.add_argument("model", choices=["gbt", "gbt-risk", "svm"])
    p.add_argument("--features", help="feature CSV (gbt, svm)")
    p.add_argument("--data", help="dataset NDJSON (gbt-risk)")
    p.add_argument("--input-mode", choices=["features", "raw"], default="features")
    p.add_argument("--out", required=True)
    p.add_argument("--rounds", type=int, default=20)
    p.add_argument("--depth", type=int, default=6)
    p.add_argument("--eta", type=float, default=0.3)
    p.add_argument("--l2", type=float, default=1.0)
    p.add_argument("--epochs", type=int, default=50, help="svm epochs")
    p.add_argument("--output", default="posture_type",
                   choices=["walker_choice", "initial_position", "posture_type"],
                   help="label column for svm")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_train)

    def add_eval_args(p):
        p.add_argument("--data", required=True)
        p.add_argument("--multi", help="multi-output GBT model file")
        p.add_argument("--risk", help="risk GBT model file")
        p.add_argument("--svm", help="SVM model file")
        p.add_argument("--svm-output", default="posture_type",
                       choices=["walker_choice", "initial_position", "posture_type"])
        p.add_argument("--input-mode", choices=["features", "raw"], default="features")
        p.add_argument("--holdout", type=int, default=4)
        p.add_argument("--averaging", choices=["macro", "weighted"], default="macro")
        p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("eval", help="evaluate models and print metric tables")
    add_eval_args(p)
    p.add_argument("--format", choices=["text", "csv"], default="text")
    p.add_argument("--out")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("report", help="write report tables and the F1 comparison CSV")
    add_eval_args(p)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=_cmd_report)

    p = sub.add_parser("serve", help="run the classification service")
    p.add_argument("--config", help=f"server config JSON (or ${CONFIG_ENV_VAR})")
    p.add_argument("--port", type=int)
    p.add_argument("--multi")
    p.add_argument("--risk")
    p.add_argument("--geometric-config")
    p.add_argument("--vocab", help="dataset file whose vocabulary names postures")
    p.add_argument("--stdio", action="store_true")
    p.set_defaults(func=_cmd_serve)

    p = sub.add_parser("classify-file", help="batch-classify a recorded session")
    p.add_argument("--session", required=True)
    p.add_argument("--geometric-config")
    p.add_argument("--calibration-frames", type=int, default=20)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_classify_file)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"walkerpose: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (PoseError, DatasetFormatError, GeometricError, ServeError,
            evalkit.EvalError, feat.FeatureError) as exc:
        print(f"walkerpose: {exc}", file=sys.stderr)
        return EXIT_DATA
    except KeyboardInterrupt:
        return EXIT_OK
    except Exception as exc:  # internal failure
        print(f"walkerpose: internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
