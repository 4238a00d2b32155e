"""Newton-boosted regression-tree ensembles (exact greedy splits).

Second-order boosting: per round, gradients g and hessians h of the
objective are computed at the current margins, each tree is grown by exact
greedy search over all (feature, midpoint-threshold) candidates maximizing

    gain = 1/2 [ G_L^2/(H_L+lambda) + G_R^2/(H_R+lambda) - G^2/(H+lambda) ] - gamma

and each leaf takes weight -eta * G/(H+lambda).  NaN feature values mean
"missing" (an invalid engineered feature); every split learns a default
direction for them by trying both sides.  Infinite values are rejected.

Binary tasks use one tree per round (logistic objective); K-class tasks
use K trees per round (softmax).  The regularized training objective is
asserted non-increasing after every round.
"""
from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field, asdict
from typing import Optional

import numpy as np

OBJECTIVE_BINARY = "binary_logistic"
OBJECTIVE_SOFTMAX = "softmax"

MODEL_FORMAT = "walkerpose-gbt"
MODEL_VERSION = 1


class GBTError(Exception):
    pass


class EmptyInputError(GBTError):
    pass


class ShapeError(GBTError):
    pass


class ModelFormatError(GBTError):
    pass


@dataclass(frozen=True)
class GBTParams:
    learning_rate: float = 0.3
    l2_reg: float = 1.0
    min_split_gain: float = 0.0
    max_depth: int = 6
    n_rounds: int = 100
    min_child_hessian: float = 1.0
    objective: str = OBJECTIVE_BINARY
    n_classes: int = 2
    base_score: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.learning_rate <= 1.0:
            raise GBTError("learning_rate must be in (0, 1]")
        if self.l2_reg < 0:
            raise GBTError("l2_reg must be >= 0")
        if self.max_depth < 1:
            raise GBTError("max_depth must be >= 1")
        if self.n_rounds < 1:
            raise GBTError("n_rounds must be >= 1")
        if self.min_child_hessian < 0:
            raise GBTError("min_child_hessian must be >= 0")
        if self.objective not in (OBJECTIVE_BINARY, OBJECTIVE_SOFTMAX):
            raise GBTError(f"unknown objective {self.objective!r}")
        if self.objective == OBJECTIVE_SOFTMAX and self.n_classes < 2:
            raise GBTError("softmax needs n_classes >= 2")
        if not 0.0 < self.base_score < 1.0:
            raise GBTError("base_score must be in (0, 1)")


@dataclass
class RegressionTree:
    """Flat-array binary tree; feature == -1 marks a leaf."""

    feature: np.ndarray       # int32
    threshold: np.ndarray     # float64
    missing_left: np.ndarray  # bool
    left: np.ndarray          # int32
    right: np.ndarray         # int32
    value: np.ndarray         # float64 (leaf weight; 0 on internal nodes)

    def n_leaves(self) -> int:
        return int(np.sum(self.feature < 0))

    def max_node_depth(self) -> int:
        depth = np.zeros(len(self.feature), dtype=int)
        for i in range(len(self.feature)):
            if self.feature[i] >= 0:
                depth[self.left[i]] = depth[i] + 1
                depth[self.right[i]] = depth[i] + 1
        return int(depth.max()) if len(depth) else 0

    def predict(self, X: np.ndarray) -> np.ndarray:
        out = np.empty(X.shape[0], dtype=np.float64)
        stack: list[tuple[int, np.ndarray]] = [(0, np.arange(X.shape[0]))]
        while stack:
            nid, idx = stack.pop()
            if idx.size == 0:
                continue
            f = self.feature[nid]
            if f < 0:
                out[idx] = self.value[nid]
                continue
            v = X[idx, f]
            nan = np.isnan(v)
            goes_left = np.where(nan, self.missing_left[nid], v <= self.threshold[nid])
            stack.append((int(self.left[nid]), idx[goes_left]))
            stack.append((int(self.right[nid]), idx[~goes_left]))
        return out

    def predict_row(self, x: np.ndarray) -> float:
        i = 0
        while self.feature[i] >= 0:
            v = x[self.feature[i]]
            if np.isnan(v):
                i = self.left[i] if self.missing_left[i] else self.right[i]
            else:
                i = self.left[i] if v <= self.threshold[i] else self.right[i]
        return float(self.value[i])


@dataclass
class GBTModel:
    params: GBTParams
    n_features: int
    n_classes: int
    base_margin: float
    rounds: list[list[RegressionTree]]          # n_rounds x (1 | K)
    objective_history: list[float] = field(default_factory=list)

    @property
    def is_binary(self) -> bool:
        return self.params.objective == OBJECTIVE_BINARY


# --- split search -------------------------------------------------------------
#
# Trees grow level-synchronously: per level, one scan over each feature's
# presorted column updates the best candidate split of every node at that
# level in a single pass.  The scan and the sample-routing pass are the
# training hot loops and are JIT-compiled with numba when available; the
# fallbacks are equivalent sequential Python (no fastmath in either path,
# so results are identical and deterministic).

def _scan_feature_level_py(order, vals, g, h, node_of, slot,
                           Gp, Hp, prev_val, seen,
                           G_all, H_all, G_miss, H_miss, parent_term,
                           lam, gamma, mch, f,
                           best_gain, best_thr, best_feat, best_miss_left):
    for pos in range(order.shape[0]):
        i = order[pos]
        s = slot[node_of[i]]
        if s < 0:
            continue
        v = vals[pos]
        if seen[s] == 1 and v > prev_val[s]:
            gain_l = -np.inf
            GL = Gp[s] + G_miss[s]
            HL = Hp[s] + H_miss[s]
            GR = G_all[s] - GL
            HR = H_all[s] - HL
            if HL >= mch and HR >= mch and HL + lam > 0 and HR + lam > 0:
                gain_l = 0.5 * (GL * GL / (HL + lam) + GR * GR / (HR + lam)
                                - parent_term[s]) - gamma
            gain_r = -np.inf
            GR = G_all[s] - Gp[s]
            HR = H_all[s] - Hp[s]
            if Hp[s] >= mch and HR >= mch and Hp[s] + lam > 0 and HR + lam > 0:
                gain_r = 0.5 * (Gp[s] * Gp[s] / (Hp[s] + lam) + GR * GR / (HR + lam)
                                - parent_term[s]) - gamma
            miss_left = gain_l >= gain_r
            gain = gain_l if miss_left else gain_r
            if gain > best_gain[s]:
                best_gain[s] = gain
                best_thr[s] = (prev_val[s] + v) / 2.0
                best_feat[s] = f
                best_miss_left[s] = 1 if miss_left else 0
        Gp[s] += g[i]
        Hp[s] += h[i]
        prev_val[s] = v
        seen[s] = 1


def _route_level_py(X, node_of, slot, is_split, feat, thr, miss_left,
                    left_id, right_id):
    for i in range(node_of.shape[0]):
        s = slot[node_of[i]]
        if s < 0 or is_split[s] == 0:
            continue
        v = X[i, feat[s]]
        if np.isnan(v):
            go_left = miss_left[s] == 1
        else:
            go_left = v <= thr[s]
        node_of[i] = left_id[s] if go_left else right_id[s]


try:
    from numba import njit

    _scan_feature_level = njit(cache=True, nogil=True)(_scan_feature_level_py)
    _route_level = njit(cache=True, nogil=True)(_route_level_py)
except ImportError:  # pragma: no cover - numba is installed in practice
    _scan_feature_level = _scan_feature_level_py
    _route_level = _route_level_py


def _grow_tree(X, g, h, params: GBTParams, presort, presort_vals, missing):
    """Exact greedy tree; returns (tree, per-sample margin contribution)."""
    n, d = X.shape
    lam, gamma, mch = params.l2_reg, params.min_split_gain, params.min_child_hessian
    eta = params.learning_rate

    feature = [-1]
    threshold = [0.0]
    missing_left = [True]
    left = [-1]
    right = [-1]
    value = [0.0]
    node_of = np.zeros(n, dtype=np.int64)
    active = [0]

    for depth in range(params.max_depth + 1):
        if not active:
            break
        A = len(active)
        slot = np.full(len(feature), -1, dtype=np.int64)
        slot[active] = np.arange(A)
        sl = slot[node_of]
        act = sl >= 0
        G_all = np.bincount(sl[act], weights=g[act], minlength=A)
        H_all = np.bincount(sl[act], weights=h[act], minlength=A)

        if depth == params.max_depth:
            for a, nd in enumerate(active):
                value[nd] = -eta * G_all[a] / (H_all[a] + lam)
            break

        with np.errstate(divide="ignore", invalid="ignore"):
            parent_term = np.where(H_all + lam > 0,
                                   G_all ** 2 / (H_all + lam), np.inf)
        best_gain = np.full(A, -np.inf)
        best_thr = np.zeros(A)
        best_feat = np.full(A, -1, dtype=np.int64)
        best_miss = np.ones(A, dtype=np.int8)
        Gp = np.zeros(A)
        Hp = np.zeros(A)
        prev_val = np.zeros(A)
        seen = np.zeros(A, dtype=np.int8)
        for f in range(d):
            order = presort[f]
            if missing[f].size:
                slp = slot[node_of[order]]
                actp = slp >= 0
                G_present = np.bincount(slp[actp], weights=g[order][actp], minlength=A)
                H_present = np.bincount(slp[actp], weights=h[order][actp], minlength=A)
                G_miss = G_all - G_present
                H_miss = H_all - H_present
            else:
                G_miss = np.zeros(A)
                H_miss = np.zeros(A)
            Gp[:] = 0.0
            Hp[:] = 0.0
            seen[:] = 0
            _scan_feature_level(order, presort_vals[f], g, h, node_of, slot,
                                Gp, Hp, prev_val, seen,
                                G_all, H_all, G_miss, H_miss, parent_term,
                                lam, gamma, mch, f,
                                best_gain, best_thr, best_feat, best_miss)

        is_split = (best_feat >= 0) & (best_gain > 0)
        left_id = np.zeros(A, dtype=np.int64)
        right_id = np.zeros(A, dtype=np.int64)
        new_active: list[int] = []
        for a, nd in enumerate(active):
            if is_split[a]:
                feature[nd] = int(best_feat[a])
                threshold[nd] = float(best_thr[a])
                missing_left[nd] = bool(best_miss[a])
                lid = len(feature)
                for _ in range(2):
                    feature.append(-1)
                    threshold.append(0.0)
                    missing_left.append(True)
                    left.append(-1)
                    right.append(-1)
                    value.append(0.0)
                left[nd], right[nd] = lid, lid + 1
                left_id[a], right_id[a] = lid, lid + 1
                new_active.extend((lid, lid + 1))
            else:
                value[nd] = -eta * G_all[a] / (H_all[a] + lam)
        if new_active:
            _route_level(X, node_of, slot, is_split.astype(np.int8),
                         best_feat, best_thr, best_miss, left_id, right_id)
        active = new_active

    tree = RegressionTree(
        np.asarray(feature, dtype=np.int32),
        np.asarray(threshold, dtype=np.float64),
        np.asarray(missing_left, dtype=bool),
        np.asarray(left, dtype=np.int32),
        np.asarray(right, dtype=np.int32),
        np.asarray(value, dtype=np.float64),
    )
    return tree, tree.value[node_of]


# --- objectives ----------------------------------------------------------------

def _sigmoid(z):
    return 1.0 / (1.0 + np.exp(-z))


def _softmax(margins):
    shifted = margins - margins.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def binary_grad_hess(margins: np.ndarray, y: np.ndarray):
    p = _sigmoid(margins)
    return p - y, p * (1.0 - p)


def softmax_grad_hess(margins: np.ndarray, y: np.ndarray, k: int):
    p = _softmax(margins)[:, k]
    return p - (y == k).astype(np.float64), p * (1.0 - p)


def binary_loss(margins: np.ndarray, y: np.ndarray) -> float:
    return float(np.sum(np.logaddexp(0.0, margins) - y * margins))


def softmax_loss(margins: np.ndarray, y: np.ndarray) -> float:
    m = margins.max(axis=1)
    lse = m + np.log(np.exp(margins - m[:, None]).sum(axis=1))
    return float(np.sum(lse - margins[np.arange(len(y)), y]))


def _tree_penalty(tree: RegressionTree, lam: float, gamma: float) -> float:
    leaves = tree.feature < 0
    return gamma * float(leaves.sum()) + 0.5 * lam * float((tree.value[leaves] ** 2).sum())


# --- training ------------------------------------------------------------------

def _check_matrix(X: np.ndarray) -> np.ndarray:
    X = np.ascontiguousarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise EmptyInputError("feature matrix must be non-empty and 2-D")
    if np.isinf(X).any():
        raise GBTError("feature matrix contains infinite values (NaN means missing)")
    return X


def _presort(X: np.ndarray):
    presort, presort_vals, missing = [], [], []
    for f in range(X.shape[1]):
        col = X[:, f]
        nan = np.isnan(col)
        present = np.nonzero(~nan)[0]
        order = present[np.argsort(col[present], kind="stable")].astype(np.int64)
        presort.append(order)
        presort_vals.append(col[order])
        missing.append(np.nonzero(nan)[0].astype(np.int64))
    return presort, presort_vals, missing


def train_gbt(X: np.ndarray, y: np.ndarray, params: GBTParams = GBTParams()) -> GBTModel:
    """Fit one boosted ensemble; raises GBTError if the objective ever increases."""
    X = _check_matrix(X)
    y = np.asarray(y)
    if y.shape[0] != X.shape[0]:
        raise ShapeError("X and y length mismatch")
    n = X.shape[0]
    presort, presort_vals, missing = _presort(X)
    lam, gamma = params.l2_reg, params.min_split_gain

    if params.objective == OBJECTIVE_BINARY:
        y = y.astype(np.float64)
        if not np.isin(y, (0.0, 1.0)).all():
            raise GBTError("binary labels must be 0/1")
        base_margin = float(np.log(params.base_score / (1.0 - params.base_score)))
        margins = np.full(n, base_margin)
        n_classes = 2
    else:
        y = y.astype(np.int64)
        if y.min() < 0 or y.max() >= params.n_classes:
            raise GBTError("labels out of class range")
        if np.unique(y).size == 1:
            warnings.warn("softmax training target has a single class", stacklevel=2)
        base_margin = 0.0
        margins = np.zeros((n, params.n_classes))
        n_classes = params.n_classes

    model = GBTModel(params, X.shape[1], n_classes, base_margin, [])
    penalty = 0.0

    def objective() -> float:
        if params.objective == OBJECTIVE_BINARY:
            return binary_loss(margins, y) + penalty
        return softmax_loss(margins, y) + penalty

    prev = objective()
    model.objective_history.append(prev)
    for _ in range(params.n_rounds):
        round_trees: list[RegressionTree] = []
        if params.objective == OBJECTIVE_BINARY:
            g, h = binary_grad_hess(margins, y)
            tree, contrib = _grow_tree(X, g, h, params, presort, presort_vals, missing)
            margins += contrib
            penalty += _tree_penalty(tree, lam, gamma)
            round_trees.append(tree)
        else:
            p = _softmax(margins)
            onehot_cols = [(y == k).astype(np.float64) for k in range(params.n_classes)]
            for k in range(params.n_classes):
                g = p[:, k] - onehot_cols[k]
                h = p[:, k] * (1.0 - p[:, k])
                tree, contrib = _grow_tree(X, g, h, params, presort, presort_vals, missing)
                margins[:, k] += contrib
                penalty += _tree_penalty(tree, lam, gamma)
                round_trees.append(tree)
        model.rounds.append(round_trees)
        cur = objective()
        if cur > prev + 1e-7 * max(1.0, abs(prev)):
            raise GBTError(f"objective increased: {prev} -> {cur}")
        model.objective_history.append(cur)
        prev = cur
    return model


# --- prediction ----------------------------------------------------------------

def predict_margin(model: GBTModel, X: np.ndarray) -> np.ndarray:
    """Raw additive scores: (n,) for binary, (n, K) for softmax."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        if X.shape[0] != model.n_features:
            raise ShapeError(f"expected {model.n_features} features, got {X.shape[0]}")
        # single-row fast path (used by the streaming service)
        if model.is_binary:
            return model.base_margin + sum(r[0].predict_row(X) for r in model.rounds)
        out = np.full(model.n_classes, model.base_margin)
        for round_trees in model.rounds:
            for k, tree in enumerate(round_trees):
                out[k] += tree.predict_row(X)
        return out
    if X.shape[1] != model.n_features:
        raise ShapeError(f"expected {model.n_features} features, got {X.shape[1]}")
    if model.is_binary:
        out = np.full(X.shape[0], model.base_margin)
        for round_trees in model.rounds:
            out += round_trees[0].predict(X)
    else:
        out = np.full((X.shape[0], model.n_classes), model.base_margin)
        for round_trees in model.rounds:
            for k, tree in enumerate(round_trees):
                out[:, k] += tree.predict(X)
    return out


def predict_proba(model: GBTModel, X: np.ndarray) -> np.ndarray:
    """(n, K) class probabilities summing to 1."""
    m = predict_margin(model, X)
    single = np.ndim(m) == (0 if model.is_binary else 1)
    if model.is_binary:
        m = np.atleast_1d(m)
        p1 = _sigmoid(m)
        out = np.stack([1.0 - p1, p1], axis=1)
    else:
        m = np.atleast_2d(m)
        out = _softmax(m)
    return out[0] if single else out


def predict_class(model: GBTModel, X: np.ndarray) -> np.ndarray:
    """Argmax class ids; ties resolve to the lowest id."""
    p = predict_proba(model, X)
    return np.argmax(p, axis=-1)


# --- persistence -----------------------------------------------------------------

def _tree_to_obj(tree: RegressionTree) -> dict:
    return {
        "feature": tree.feature.tolist(),
        "threshold": tree.threshold.tolist(),
        "missing_left": [int(b) for b in tree.missing_left],
        "left": tree.left.tolist(),
        "right": tree.right.tolist(),
        "value": tree.value.tolist(),
    }


def _tree_from_obj(obj: dict) -> RegressionTree:
    return RegressionTree(
        np.asarray(obj["feature"], dtype=np.int32),
        np.asarray(obj["threshold"], dtype=np.float64),
        np.asarray(obj["missing_left"], dtype=bool),
        np.asarray(obj["left"], dtype=np.int32),
        np.asarray(obj["right"], dtype=np.int32),
        np.asarray(obj["value"], dtype=np.float64),
    )


def model_to_obj(model: GBTModel) -> dict:
    return {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "params": asdict(model.params),
        "n_features": model.n_features,
        "n_classes": model.n_classes,
        "base_margin": model.base_margin,
        "rounds": [[_tree_to_obj(t) for t in rnd] for rnd in model.rounds],
    }


def model_from_obj(obj: dict) -> GBTModel:
    if not isinstance(obj, dict) or obj.get("format") != MODEL_FORMAT:
        raise ModelFormatError("not a walkerpose GBT model file")
    if obj.get("version") != MODEL_VERSION:
        raise ModelFormatError(f"unsupported model version {obj.get('version')!r}")
    try:
        params = GBTParams(**obj["params"])
        return GBTModel(
            params=params,
            n_features=int(obj["n_features"]),
            n_classes=int(obj["n_classes"]),
            base_margin=float(obj["base_margin"]),
            rounds=[[_tree_from_obj(t) for t in rnd] for rnd in obj["rounds"]],
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelFormatError(f"malformed model file: {exc}") from None


def save_model(model: GBTModel, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(model_to_obj(model), fh)
        fh.write("\n")


def load_model(path) -> GBTModel:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            obj = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ModelFormatError(f"invalid JSON: {exc}") from None
    return model_from_obj(obj)


# --- multi-output wrapper ----------------------------------------------------------

OUTPUT_NAMES = ("walker_choice", "initial_position", "posture_type")

MULTI_FORMAT = "walkerpose-multigbt"


@dataclass
class MultiOutputGBT:
    """Three independent ensembles sharing one feature matrix layout."""

    models: dict[str, GBTModel]

    def __post_init__(self):
        dims = {m.n_features for m in self.models.values()}
        if len(dims) > 1:
            raise ShapeError("output models disagree on feature count")

    def predict(self, X: np.ndarray) -> dict[str, np.ndarray]:
        return {name: predict_class(m, X) for name, m in self.models.items()}


def default_multi_params(n_posture_classes: int) -> dict[str, GBTParams]:
    return {
        "walker_choice": GBTParams(objective=OBJECTIVE_BINARY, n_rounds=20),
        "initial_position": GBTParams(objective=OBJECTIVE_BINARY, n_rounds=20),
        "posture_type": GBTParams(objective=OBJECTIVE_SOFTMAX,
                                  n_classes=n_posture_classes, n_rounds=30),
    }


def train_multi_output(X: np.ndarray, labels: dict[str, np.ndarray],
                       params: Optional[dict[str, GBTParams]] = None,
                       ) -> tuple[MultiOutputGBT, dict[str, float]]:
    """Train the three output heads; returns (wrapper, per-output train accuracy)."""
    missing = [name for name in OUTPUT_NAMES if name not in labels]
    if missing:
        raise ShapeError(f"missing label columns: {missing}")
    if params is None:
        params = default_multi_params(int(np.max(labels["posture_type"])) + 1)
    models: dict[str, GBTModel] = {}
    train_acc: dict[str, float] = {}
    for name in OUTPUT_NAMES:
        model = train_gbt(X, labels[name], params[name])
        models[name] = model
        train_acc[name] = float(np.mean(predict_class(model, X) == labels[name]))
    return MultiOutputGBT(models), train_acc


RISK_CLASS_NAMES = ("standing", "sitting", "bad_posture")


def train_single_risk(X: np.ndarray, risk: np.ndarray,
                      params: Optional[GBTParams] = None) -> GBTModel:
    """Simplified single 3-class head: standing / sitting / bad_posture."""
    if params is None:
        params = GBTParams(objective=OBJECTIVE_SOFTMAX, n_classes=3, n_rounds=30,
                           max_depth=8)
    if params.objective != OBJECTIVE_SOFTMAX or params.n_classes != 3:
        raise GBTError("risk model must be 3-class softmax")
    return train_gbt(X, risk, params)


def save_multi_output(multi: MultiOutputGBT, path) -> None:
    obj = {
        "format": MULTI_FORMAT,
        "version": MODEL_VERSION,
        "outputs": {name: model_to_obj(m) for name, m in multi.models.items()},
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh)
        fh.write("\n")


def load_multi_output(path) -> MultiOutputGBT:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            obj = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ModelFormatError(f"invalid JSON: {exc}") from None
    if not isinstance(obj, dict) or obj.get("format") != MULTI_FORMAT:
        raise ModelFormatError("not a walkerpose multi-output model file")
    if obj.get("version") != MODEL_VERSION:
        raise ModelFormatError(f"unsupported model version {obj.get('version')!r}")
    return MultiOutputGBT({name: model_from_obj(m) for name, m in obj["outputs"].items()})
