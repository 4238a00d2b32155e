"""Dataset splitting, the five evaluation metrics, and report tables.

Metrics follow one-vs-rest collapse per class: precision = TP/(TP+FP),
sensitivity = TP/(TP+FN), specificity = TN/(TN+FP), F1 the harmonic mean
of precision and sensitivity; undefined ratios report 0 and are flagged.
Both macro and support-weighted averages are reported.

"Training and Validation" metrics are computed on the random test split of
the training-pool participants; "Prediction" metrics on the held-out
participants, who are never seen during training.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .pose import Dataset


class EvalError(Exception):
    pass


class SplitError(EvalError):
    pass


SPLIT_WITHIN_PARTICIPANT = "within_participant_random"
SPLIT_BY_PARTICIPANT = "by_participant"


@dataclass(frozen=True)
class SplitSpec:
    holdout_participants: tuple[str, ...] = ()  # empty -> pick n_holdout by seed
    n_holdout: int = 4
    train_fraction: float = 0.8
    seed: int = 0
    mode: str = SPLIT_WITHIN_PARTICIPANT

    def __post_init__(self):
        if not 0.0 < self.train_fraction < 1.0:
            raise SplitError("train_fraction must be in (0, 1)")
        if self.mode not in (SPLIT_WITHIN_PARTICIPANT, SPLIT_BY_PARTICIPANT):
            raise SplitError(f"unknown split mode {self.mode!r}")


def split_dataset(dataset: Dataset, spec: SplitSpec = SplitSpec()
                  ) -> tuple[Dataset, Dataset, Dataset]:
    """Partition into (train, test, holdout); seeded and reproducible.

    Holdout gets every sample of the named participants (or of n_holdout
    participants drawn by seed); the remaining pool is split train/test by
    the requested mode.
    """
    participants = dataset.participants()
    if not participants:
        raise SplitError("dataset has no participants")
    rng = np.random.default_rng(spec.seed)
    if spec.holdout_participants:
        holdout_ids = set(spec.holdout_participants)
        unknown = holdout_ids - set(participants)
        if unknown:
            raise SplitError(f"unknown participant ids: {sorted(unknown)}")
    else:
        if spec.n_holdout >= len(participants):
            raise SplitError("holdout would consume every participant")
        holdout_ids = set(rng.choice(participants, size=spec.n_holdout, replace=False))
    pool_ids = [p for p in participants if p not in holdout_ids]
    if not pool_ids:
        raise SplitError("empty training pool after holdout")

    holdout_idx = [i for i, (f, _) in enumerate(dataset.samples)
                   if f.participant_id in holdout_ids]
    pool_idx = np.array([i for i, (f, _) in enumerate(dataset.samples)
                         if f.participant_id not in holdout_ids], dtype=np.int64)

    if spec.mode == SPLIT_WITHIN_PARTICIPANT:
        perm = rng.permutation(len(pool_idx))
        n_train = int(round(spec.train_fraction * len(pool_idx)))
        train_idx = np.sort(pool_idx[perm[:n_train]])
        test_idx = np.sort(pool_idx[perm[n_train:]])
    else:
        perm = rng.permutation(len(pool_ids))
        n_train = int(round(spec.train_fraction * len(pool_ids)))
        train_pids = {pool_ids[i] for i in perm[:n_train]}
        train_idx = np.array([i for i in pool_idx
                              if dataset.samples[i][0].participant_id in train_pids])
        test_idx = np.array([i for i in pool_idx
                             if dataset.samples[i][0].participant_id not in train_pids])

    def subset(indices) -> Dataset:
        return Dataset(tuple(dataset.samples[int(i)] for i in indices),
                       dataset.vocabulary, dataset.provenance)

    return subset(train_idx), subset(test_idx), subset(sorted(holdout_idx))


@dataclass(frozen=True)
class ConfusionMatrix:
    counts: np.ndarray               # (K, K), rows true, cols predicted
    class_names: tuple[str, ...] = ()

    @property
    def total(self) -> int:
        return int(self.counts.sum())


def confusion(true_labels, predicted_labels, n_classes: int,
              class_names: Sequence[str] = ()) -> ConfusionMatrix:
    t = np.asarray(true_labels, dtype=np.int64)
    p = np.asarray(predicted_labels, dtype=np.int64)
    if t.shape != p.shape or t.ndim != 1 or t.size == 0:
        raise EvalError("label sequences must be equal-length, 1-D and non-empty")
    if t.min() < 0 or t.max() >= n_classes or p.min() < 0 or p.max() >= n_classes:
        raise EvalError("labels out of class range")
    counts = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(counts, (t, p), 1)
    return ConfusionMatrix(counts, tuple(class_names))


@dataclass(frozen=True)
class MetricsReport:
    accuracy: float
    per_class: dict[str, np.ndarray]       # metric -> (K,) values
    macro: dict[str, float]
    weighted: dict[str, float]
    support: np.ndarray                    # (K,) true-class counts
    n_samples: int
    undefined: tuple[tuple[str, int], ...] = ()  # (metric, class) with 0/0


METRIC_NAMES = ("precision", "f1", "sensitivity", "specificity")


def metrics(matrix: ConfusionMatrix) -> MetricsReport:
    """Accuracy plus per-class/macro/weighted precision, F1, sensitivity, specificity."""
    counts = matrix.counts
    total = counts.sum()
    if total == 0:
        raise EvalError("empty evaluation: all-zero confusion matrix")
    k = counts.shape[0]
    tp = np.diag(counts).astype(np.float64)
    fp = counts.sum(axis=0) - tp
    fn = counts.sum(axis=1) - tp
    tn = total - tp - fp - fn
    undefined: list[tuple[str, int]] = []

    def ratio(name, num, den):
        out = np.zeros(k)
        for c in range(k):
            if den[c] > 0:
                out[c] = num[c] / den[c]
            else:
                undefined.append((name, c))
        return out

    precision = ratio("precision", tp, tp + fp)
    sensitivity = ratio("sensitivity", tp, tp + fn)
    specificity = ratio("specificity", tn, tn + fp)
    f1 = np.zeros(k)
    for c in range(k):
        if precision[c] + sensitivity[c] > 0:
            f1[c] = 2 * precision[c] * sensitivity[c] / (precision[c] + sensitivity[c])
        elif tp[c] + fp[c] == 0 or tp[c] + fn[c] == 0:
            undefined.append(("f1", c))
    per_class = {"precision": precision, "f1": f1,
                 "sensitivity": sensitivity, "specificity": specificity}
    support = counts.sum(axis=1)
    # plain sequential accumulation in class order, so results match a
    # brute-force reimplementation of the definitions bit for bit
    macro = {m: sum(float(x) for x in v) / k for m, v in per_class.items()}
    weighted = {m: sum(float(x) * int(s) for x, s in zip(v, support)) / total
                for m, v in per_class.items()}
    return MetricsReport(
        accuracy=float(np.trace(counts) / total),
        per_class=per_class,
        macro=macro,
        weighted=weighted,
        support=support,
        n_samples=int(total),
        undefined=tuple(undefined),
    )


# --- report tables -----------------------------------------------------------

@dataclass(frozen=True)
class EvalCell:
    """One (model, output, section) evaluation."""

    model: str
    output: str
    section: str         # "training" | "prediction"
    report: Optional[MetricsReport] = None
    note: str = ""


_SECTION_TITLES = {"training": "Training and Validation", "prediction": "Prediction"}
_COLUMNS = ("Accuracy", "Precision", "F1 Score", "Sensitivity", "Specificity")


def _row_values(report: MetricsReport, averaging: str) -> list[float]:
    avg = report.macro if averaging == "macro" else report.weighted
    return [report.accuracy, avg["precision"], avg["f1"],
            avg["sensitivity"], avg["specificity"]]


def format_report_tables(cells: Sequence[EvalCell], averaging: str = "macro") -> str:
    """Plain-text tables, one per model, with the two sections and 5 metrics."""
    models = sorted({c.model for c in cells})
    out = io.StringIO()
    for model in models:
        out.write(f"=== {model} ({averaging} averaging) ===\n")
        for section in ("training", "prediction"):
            out.write(f"-- {_SECTION_TITLES[section]} --\n")
            header = f"{'Output Label':22s}" + "".join(f"{c:>13s}" for c in _COLUMNS)
            out.write(header + "\n")
            for cell in cells:
                if cell.model != model or cell.section != section:
                    continue
                if cell.report is None:
                    out.write(f"{cell.output:22s}  (missing: {cell.note})\n")
                    continue
                vals = _row_values(cell.report, averaging)
                out.write(f"{cell.output:22s}" + "".join(f"{v:13.3f}" for v in vals) + "\n")
        out.write("\n")
    return out.getvalue()


def write_report_csv(cells: Sequence[EvalCell], path, averaging: str = "macro") -> None:
    """Machine-readable metric rows; floats use repr so re-parsing is exact."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["model", "output", "section", "accuracy", "precision",
                         "f1", "sensitivity", "specificity", "n_samples"])
        for cell in cells:
            if cell.report is None:
                continue
            vals = _row_values(cell.report, averaging)
            writer.writerow([cell.model, cell.output, cell.section]
                            + [repr(v) for v in vals] + [cell.report.n_samples])


def read_report_csv(path) -> list[dict]:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        rows = list(csv.DictReader(fh))
    for row in rows:
        for key in ("accuracy", "precision", "f1", "sensitivity", "specificity"):
            row[key] = float(row[key])
        row["n_samples"] = int(row["n_samples"])
    return rows


def write_f1_comparison_csv(cells: Sequence[EvalCell], path,
                            averaging: str = "macro") -> None:
    """Prediction-section F1 per model and output (model comparison series)."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["model", "output", "f1"])
        for cell in cells:
            if cell.section != "prediction" or cell.report is None:
                continue
            avg = cell.report.macro if averaging == "macro" else cell.report.weighted
            writer.writerow([cell.model, cell.output, repr(avg["f1"])])
