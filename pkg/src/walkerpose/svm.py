"""One-vs-rest linear maximum-margin baseline.

Each class gets a binary hinge-loss model minimizing

    lambda/2 ||w||^2 + mean_i max(0, 1 - y_i (w.x_i + b))

by stochastic subgradient descent with the 1/(lambda t) schedule, on
features standardized with training-set statistics.  The returned weights
are the averaged iterates, whose epoch-wise objective settles monotonically
(the history is kept on the model for the tests).
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
import numpy as np

MODEL_FORMAT = "walkerpose-svm"
MODEL_VERSION = 1

STD_EPS = 1e-12


class SVMError(Exception):
    pass


class ShapeError(SVMError):
    pass


class ModelFormatError(SVMError):
    pass


@dataclass(frozen=True)
class SVMParams:
    reg_lambda: float = 1e-4
    epochs: int = 50
    seed: int = 0

    def __post_init__(self):
        if self.reg_lambda <= 0:
            raise SVMError("reg_lambda must be > 0")
        if self.epochs < 1:
            raise SVMError("epochs must be >= 1")


@dataclass
class LinearSVMModel:
    params: SVMParams
    weights: np.ndarray          # (K, d) on standardized inputs
    bias: np.ndarray             # (K,)
    mean: np.ndarray             # (d,) standardization statistics
    std: np.ndarray              # (d,) with tiny values replaced by 1
    class_ids: np.ndarray        # (K,) original label ids
    objective_history: list[list[float]] = field(default_factory=list)

    @property
    def n_features(self) -> int:
        return int(self.weights.shape[1])


def standardize_fit(X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    std = np.where(std < STD_EPS, 1.0, std)
    return mean, std


def standardize(X: np.ndarray, mean: np.ndarray, std: np.ndarray) -> np.ndarray:
    return (X - mean) / std


def destandardize(Z: np.ndarray, mean: np.ndarray, std: np.ndarray) -> np.ndarray:
    return Z * std + mean


def hinge_objective(Z: np.ndarray, y_signed: np.ndarray, w: np.ndarray,
                    b: float, reg_lambda: float) -> float:
    """lambda/2 (||w||^2 + b^2) + mean hinge loss of the affine classifier.

    The bias rides along as a regularized constant-1 feature during
    training, so it belongs in the norm here.
    """
    margins = y_signed * (Z @ w + b)
    return float(0.5 * reg_lambda * (np.dot(w, w) + b * b)
                 + np.mean(np.maximum(0.0, 1.0 - margins)))


def _train_binary(Z: np.ndarray, y_signed: np.ndarray, params: SVMParams,
                  rng: np.random.Generator) -> tuple[np.ndarray, float, list[float]]:
    """Pegasos-style SGD; returns averaged (w, b) and per-epoch objectives.

    The bias is folded in as a constant-1 feature, so the 1/(lambda t)
    schedule stays stable (an unregularized bias would be kicked around by
    the huge early step sizes and decay only harmonically).
    """
    n, d = Z.shape
    lam = params.reg_lambda
    w = np.zeros(d + 1)  # last entry is the bias
    w_sum = np.zeros(d + 1)
    t = 0
    history: list[float] = []
    for _ in range(params.epochs):
        for i in rng.permutation(n):
            t += 1
            eta = 1.0 / (lam * t)
            margin = y_signed[i] * (Z[i] @ w[:d] + w[d])
            w *= (1.0 - eta * lam)
            if margin < 1.0:
                w[:d] += eta * y_signed[i] * Z[i]
                w[d] += eta * y_signed[i]
            w_sum += w
        avg = w_sum / t
        history.append(hinge_objective(Z, y_signed, avg[:d], avg[d], lam))
    avg = w_sum / t
    return avg[:d], float(avg[d]), history


def train_svm(X: np.ndarray, y: np.ndarray, params: SVMParams = SVMParams()
              ) -> LinearSVMModel:
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise SVMError("feature matrix must be non-empty and 2-D")
    if not np.isfinite(X).all():
        raise SVMError("features must be finite (impute missing as 0 upstream)")
    if y.shape[0] != X.shape[0]:
        raise ShapeError("X and y length mismatch")
    class_ids = np.unique(y)
    if class_ids.size < 2:
        raise SVMError("degenerate target: need >= 2 classes")
    mean, std = standardize_fit(X)
    Z = standardize(X, mean, std)
    weights = np.zeros((class_ids.size, X.shape[1]))
    bias = np.zeros(class_ids.size)
    histories: list[list[float]] = []
    for k, cid in enumerate(class_ids):
        rng = np.random.default_rng((params.seed, int(cid)))
        y_signed = np.where(y == cid, 1.0, -1.0)
        weights[k], bias[k], hist = _train_binary(Z, y_signed, params, rng)
        histories.append(hist)
    return LinearSVMModel(params, weights, bias, mean, std, class_ids, histories)


def predict_svm(model: LinearSVMModel, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(class ids, per-class margins); argmax ties resolve to the lowest id."""
    X = np.asarray(X, dtype=np.float64)
    single = X.ndim == 1
    if single:
        X = X[None, :]
    if X.shape[1] != model.n_features:
        raise ShapeError(f"expected {model.n_features} features, got {X.shape[1]}")
    Z = standardize(X, model.mean, model.std)
    margins = Z @ model.weights.T + model.bias
    classes = model.class_ids[np.argmax(margins, axis=1)]
    if single:
        return classes[0], margins[0]
    return classes, margins


def save_svm(model: LinearSVMModel, path) -> None:
    obj = {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "params": {"reg_lambda": model.params.reg_lambda,
                   "epochs": model.params.epochs, "seed": model.params.seed},
        "weights": model.weights.tolist(),
        "bias": model.bias.tolist(),
        "mean": model.mean.tolist(),
        "std": model.std.tolist(),
        "class_ids": model.class_ids.tolist(),
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh)
        fh.write("\n")


def load_svm(path) -> LinearSVMModel:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            obj = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ModelFormatError(f"invalid JSON: {exc}") from None
    if not isinstance(obj, dict) or obj.get("format") != MODEL_FORMAT:
        raise ModelFormatError("not a walkerpose SVM model file")
    if obj.get("version") != MODEL_VERSION:
        raise ModelFormatError(f"unsupported model version {obj.get('version')!r}")
    try:
        return LinearSVMModel(
            SVMParams(**obj["params"]),
            np.asarray(obj["weights"], dtype=np.float64),
            np.asarray(obj["bias"], dtype=np.float64),
            np.asarray(obj["mean"], dtype=np.float64),
            np.asarray(obj["std"], dtype=np.float64),
            np.asarray(obj["class_ids"], dtype=np.int64),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelFormatError(f"malformed model file: {exc}") from None
