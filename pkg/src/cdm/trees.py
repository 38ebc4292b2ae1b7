"""Tree learners built on one greedy splitting engine.

A criterion turns each unit into a small row of additive statistics; the
engine scans every feature in sorted order, accumulates the statistics
left to right and scores every midpoint between distinct values. Three
criteria plug into it: outcome squared error, transformed-outcome squared
error (causal tree) and weighted misclassification (policy tree, see
:mod:`cdm.reduction`).
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional, Union

import numpy as np

from .core import (
    Dataset,
    EffectModel,
    OutcomeModel,
    Policy,
    PreconditionError,
    ipw_difference_in_means,
)
from .evaluate import transformed_outcome

MODEL_FORMAT = "cdm-model/1"
_REL_TOL = 1e-12


@dataclass(frozen=True)
class TreeParams:
    max_depth: int = 3
    # per arm for causal trees
    min_leaf: int = 1
    min_split_gain: float = 0.0
    honest: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.max_depth < 0:
            raise PreconditionError("max_depth must be >= 0")
        if self.min_leaf < 1:
            raise PreconditionError("min_leaf must be >= 1")
        if not self.min_split_gain >= 0.0:
            raise PreconditionError("min_split_gain must be >= 0")


@dataclass(frozen=True)
class TreeNode:
    """Internal node when ``left``/``right`` are set, otherwise a leaf.

    Internal nodes keep the estimate of their whole sample too; prediction
    only reads leaves. ``x[feature_index] <= threshold`` goes left.
    """

    estimate: float
    n_samples: int
    n_treated: Optional[int] = None
    impurity: float = 0.0
    feature_index: int = -1
    threshold: float = math.nan
    left: Optional["TreeNode"] = None
    right: Optional["TreeNode"] = None

    @property
    def is_leaf(self) -> bool:
        return self.left is None

    def leaves(self) -> list["TreeNode"]:
        if self.is_leaf:
            return [self]
        return self.left.leaves() + self.right.leaves()

    @property
    def depth(self) -> int:
        return 0 if self.is_leaf else 1 + max(self.left.depth, self.right.depth)


# -- criteria -----------------------------------------------------------------


class _SquaredError:
    """Squared error of a target around the node mean; min_leaf on counts."""

    def __init__(self, target: np.ndarray, min_leaf: int):
        self.target = target
        self.min_leaf = min_leaf

    def stats(self, idx):
        y = self.target[idx]
        yc = y - y.mean()
        return np.column_stack([np.ones(idx.size), yc, yc * yc])

    def cost(self, S):
        return S[..., 2] - S[..., 1] ** 2 / S[..., 0]

    def admissible(self, S):
        return S[..., 0] >= self.min_leaf

    def leaf(self, idx, impurity):
        return TreeNode(estimate=float(self.target[idx].mean()), n_samples=int(idx.size), impurity=impurity)


class _TransformedOutcomeError(_SquaredError):
    """Squared error of the transformed outcome; min_leaf applies per arm.

    The leaf estimate is the (IPW when propensities vary) difference in
    means of the raw outcome, not the mean transformed outcome.
    """

    def __init__(self, ystar, treatment, outcome, propensity, min_leaf):
        super().__init__(ystar, min_leaf)
        self.treatment = treatment
        self.outcome = outcome
        self.propensity = propensity

    def stats(self, idx):
        S = super().stats(idx)
        return np.column_stack([S[:, 0], S[:, 1], S[:, 2], self.treatment[idx]])

    def admissible(self, S):
        n1 = S[..., 3]
        return (n1 >= self.min_leaf) & (S[..., 0] - n1 >= self.min_leaf)

    def leaf(self, idx, impurity):
        t = self.treatment[idx]
        est = ipw_difference_in_means(t, self.outcome[idx], self.propensity[idx])
        return TreeNode(estimate=est, n_samples=int(idx.size), n_treated=int(t.sum()), impurity=impurity)


class _WeightedMisclassification:
    """Weight of the minority label; leaf estimate is the label-1 weight share."""

    def __init__(self, labels: np.ndarray, weights: np.ndarray, min_leaf: int):
        self.w1 = np.where(labels == 1, weights, 0.0)
        self.w0 = np.where(labels == 1, 0.0, weights)
        self.min_leaf = min_leaf

    def stats(self, idx):
        return np.column_stack([self.w1[idx], self.w0[idx], np.ones(idx.size)])

    def cost(self, S):
        return np.minimum(S[..., 0], S[..., 1])

    def admissible(self, S):
        return S[..., 2] >= self.min_leaf

    def leaf(self, idx, impurity):
        w1, w0 = float(self.w1[idx].sum()), float(self.w0[idx].sum())
        share = w1 / (w1 + w0) if w1 + w0 > 0 else 0.5
        return TreeNode(estimate=share, n_samples=int(idx.size), impurity=impurity)


# -- engine ---------------------------------------------------------------------


@dataclass(frozen=True)
class _Split:
    feature: int
    threshold: float
    gain: float
    left: np.ndarray
    right: np.ndarray


def _midpoint(a: float, b: float) -> float:
    mid = 0.5 * (a + b)
    # adjacent floats: the midpoint may round up onto b
    return mid if mid < b else a


def _best_split(X: np.ndarray, idx: np.ndarray, crit, S: np.ndarray, parent_cost: float) -> Optional[_Split]:
    """Highest-gain admissible split; ties go to the lowest feature, then threshold."""
    total = S.sum(axis=0)
    tol = _REL_TOL * abs(parent_cost)
    best = None
    for j in range(X.shape[1]):
        xj = X[idx, j]
        order = np.argsort(xj, kind="stable")
        xs = xj[order]
        left = np.cumsum(S[order], axis=0)[:-1]
        right = total - left
        ok = (xs[:-1] < xs[1:]) & crit.admissible(left) & crit.admissible(right)
        if not ok.any():
            continue
        gain = np.where(ok, parent_cost - (crit.cost(left) + crit.cost(right)), -np.inf)
        top = gain.max()
        i = int(np.flatnonzero(gain >= top - tol)[0])
        if best is None or gain[i] > best[0] + tol:
            best = (float(gain[i]), j, i, order, xs)
    if best is None:
        return None
    gain, j, i, order, xs = best
    return _Split(j, _midpoint(xs[i], xs[i + 1]), gain, idx[order[: i + 1]], idx[order[i + 1:]])


def _grow(X, idx, crit, params: TreeParams, depth: int) -> TreeNode:
    S = crit.stats(idx)
    cost = float(crit.cost(S.sum(axis=0)))
    node = crit.leaf(idx, cost)
    if depth >= params.max_depth:
        return node
    sp = _best_split(X, idx, crit, S, cost)
    if sp is None or sp.gain <= _REL_TOL * abs(cost) or sp.gain < params.min_split_gain:
        return node
    return TreeNode(
        estimate=node.estimate,
        n_samples=node.n_samples,
        n_treated=node.n_treated,
        impurity=cost,
        feature_index=sp.feature,
        threshold=sp.threshold,
        left=_grow(X, np.sort(sp.left), crit, params, depth + 1),
        right=_grow(X, np.sort(sp.right), crit, params, depth + 1),
    )


def _exact(X, idx, crit, params: TreeParams, depth: int) -> tuple[float, TreeNode]:
    """Minimum-cost tree of the given depth by exhaustive search over midpoints."""
    S = crit.stats(idx)
    cost = float(crit.cost(S.sum(axis=0)))
    leaf = crit.leaf(idx, cost)
    if depth == 0:
        return cost, leaf
    tol = _REL_TOL * abs(cost)
    if depth == 1:
        sp = _best_split(X, idx, crit, S, cost)
        if sp is None or sp.gain <= tol or sp.gain < params.min_split_gain:
            return cost, leaf
        left, right = np.sort(sp.left), np.sort(sp.right)
        lc, ln = _exact(X, left, crit, params, 0)
        rc, rn = _exact(X, right, crit, params, 0)
        return lc + rc, _join(leaf, sp.feature, sp.threshold, ln, rn)

    best_cost, best = cost, leaf
    total = S.sum(axis=0)
    for j in range(X.shape[1]):
        xj = X[idx, j]
        order = np.argsort(xj, kind="stable")
        xs = xj[order]
        left_stats = np.cumsum(S[order], axis=0)[:-1]
        ok = (xs[:-1] < xs[1:]) & crit.admissible(left_stats) & crit.admissible(total - left_stats)
        for i in np.flatnonzero(ok):
            left, right = np.sort(idx[order[: i + 1]]), np.sort(idx[order[i + 1:]])
            lc, ln = _exact(X, left, crit, params, depth - 1)
            rc, rn = _exact(X, right, crit, params, depth - 1)
            sub = lc + rc
            if cost - sub < params.min_split_gain or cost - sub <= tol:
                continue
            if sub < best_cost - tol:
                best_cost = sub
                best = _join(leaf, j, _midpoint(xs[i], xs[i + 1]), ln, rn)
    return best_cost, best


def _join(parent: TreeNode, feature: int, threshold: float, left: TreeNode, right: TreeNode) -> TreeNode:
    return TreeNode(
        estimate=parent.estimate,
        n_samples=parent.n_samples,
        n_treated=parent.n_treated,
        impurity=parent.impurity,
        feature_index=feature,
        threshold=threshold,
        left=left,
        right=right,
    )


class _Flat:
    """Array form of a tree for vectorized routing."""

    def __init__(self, root: TreeNode):
        feat, thr, left, right, value = [], [], [], [], []

        def visit(node):
            k = len(feat)
            feat.append(node.feature_index)
            thr.append(node.threshold)
            value.append(node.estimate)
            left.append(-1)
            right.append(-1)
            if not node.is_leaf:
                left[k] = visit(node.left)
                right[k] = visit(node.right)
            return k

        visit(root)
        self.feature = np.asarray(feat)
        self.threshold = np.asarray(thr, dtype=float)
        self.left = np.asarray(left)
        self.right = np.asarray(right)
        self.value = np.asarray(value, dtype=float)
        self.depth = root.depth

    def apply(self, X: np.ndarray) -> np.ndarray:
        """Index of the leaf each row lands in."""
        node = np.zeros(X.shape[0], dtype=np.intp)
        rows = np.arange(X.shape[0])
        for _ in range(self.depth):
            f = self.feature[node]
            internal = f >= 0
            if not internal.any():
                break
            go_left = X[rows, np.where(internal, f, 0)] <= self.threshold[node]
            node = np.where(internal, np.where(go_left, self.left[node], self.right[node]), node)
        return node

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.value[self.apply(X)]


# -- models -------------------------------------------------------------------


class _TreeMixin:
    root: TreeNode

    @property
    def _flat(self) -> _Flat:
        flat = self.__dict__.get("_flat_cache")
        if flat is None:
            flat = _Flat(self.root)
            self.__dict__["_flat_cache"] = flat
        return flat

    def _predict(self, X):
        return self._flat.predict(X)

    def leaf_index(self, X) -> np.ndarray:
        return self._flat.apply(np.atleast_2d(np.asarray(X, dtype=float)))

    @property
    def depth(self) -> int:
        return self.root.depth

    @property
    def n_leaves(self) -> int:
        return len(self.root.leaves())


class OutcomeTree(_TreeMixin, OutcomeModel):
    kind = "outcome"

    def __init__(self, root: TreeNode, n_features: int, arm: Optional[int] = None, params: Optional[TreeParams] = None):
        self.root, self.n_features, self.arm, self.params = root, n_features, arm, params


class CausalTree(_TreeMixin, EffectModel):
    kind = "causal"

    def __init__(self, root: TreeNode, n_features: int, params: Optional[TreeParams] = None):
        self.root, self.n_features, self.params = root, n_features, params


class TwoModel(EffectModel):
    """Effect as the difference of two arm-wise outcome trees."""

    kind = "two-model"

    def __init__(self, treated: OutcomeTree, control: OutcomeTree):
        self.treated, self.control = treated, control
        self.n_features = treated.n_features

    def _predict(self, X):
        return self.treated._predict(X) - self.control._predict(X)

    @property
    def depth(self) -> int:
        return max(self.treated.depth, self.control.depth)


class PolicyTree(_TreeMixin, Policy):
    """Assigns the majority-weight label of the leaf; ties go to control."""

    kind = "policy"

    def __init__(self, root: TreeNode, n_features: int, params: Optional[TreeParams] = None):
        self.root, self.n_features, self.params = root, n_features, params

    def _assign(self, X):
        return (self._flat.predict(X) > 0.5).astype(np.int8)

    def _score(self, X):
        return self._flat.predict(X) - 0.5


# -- fitting --------------------------------------------------------------------


def _check_features(ds: Dataset) -> None:
    if ds.n_features == 0:
        raise PreconditionError("cannot fit a tree without features")


def fit_outcome_tree(train: Dataset, arm_filter: Optional[int] = None, params: TreeParams = TreeParams(),
                     search: str = "greedy") -> OutcomeTree:
    """CART regression tree of the outcome, optionally on one arm only.

    ``search="exact"`` returns the minimum-SSE tree of depth ``max_depth``
    instead of the greedy one; it is exponential in depth.
    """
    _check_features(train)
    ds = train
    if arm_filter is not None:
        if arm_filter not in (0, 1):
            raise PreconditionError(f"arm_filter must be 0 or 1, got {arm_filter}")
        mask = train.treatment == arm_filter
        if not mask.any():
            raise PreconditionError(f"no training samples in arm {arm_filter}")
        ds = train.subset(mask)
    if ds.n < 2 * params.min_leaf:
        raise PreconditionError(f"outcome tree needs at least 2*min_leaf={2 * params.min_leaf} samples, got {ds.n}")
    crit = _SquaredError(ds.outcome, params.min_leaf)
    idx = np.arange(ds.n)
    if search == "exact":
        _, root = _exact(ds.X, idx, crit, params, params.max_depth)
    elif search == "greedy":
        root = _grow(ds.X, idx, crit, params, 0)
    else:
        raise PreconditionError(f"unknown search {search!r}")
    return OutcomeTree(root, ds.n_features, arm_filter, params)


def fit_causal_tree(train: Dataset, params: TreeParams = TreeParams()) -> CausalTree:
    """Greedy tree on transformed-outcome squared error.

    Leaves hold the difference in means of the raw outcome. With
    ``params.honest`` a seeded half of the data picks the splits and the
    other half fills the leaves; a leaf whose estimation half misses an arm
    keeps the estimate from the splitting half.
    """
    _check_features(train)
    train.require_both_arms()
    e = train.require_propensity()
    ystar = transformed_outcome(train.outcome, train.treatment, e)
    crit = _TransformedOutcomeError(ystar, train.treatment, train.outcome, e, params.min_leaf)
    if not params.honest:
        return CausalTree(_grow(train.X, np.arange(train.n), crit, params, 0), train.n_features, params)

    perm = np.random.default_rng(params.seed).permutation(train.n)
    grow_idx, est_idx = np.sort(perm[: train.n // 2]), np.sort(perm[train.n // 2:])
    t = train.treatment
    if t[grow_idx].all() or not t[grow_idx].any():
        raise PreconditionError("honest split left the splitting half with a single arm")
    root = _grow(train.X, grow_idx, crit, params, 0)
    return CausalTree(_refill(root, train.X, est_idx, crit), train.n_features, params)


def _refill(node: TreeNode, X: np.ndarray, idx: np.ndarray, crit) -> TreeNode:
    if node.is_leaf:
        t = crit.treatment[idx]
        if idx.size == 0 or t.all() or not t.any():
            return node
        return crit.leaf(idx, node.impurity)
    go_left = X[idx, node.feature_index] <= node.threshold
    return _join(node, node.feature_index, node.threshold,
                 _refill(node.left, X, idx[go_left], crit), _refill(node.right, X, idx[~go_left], crit))


def fit_two_model(train: Dataset, params: TreeParams = TreeParams()) -> TwoModel:
    train.require_both_arms()
    return TwoModel(fit_outcome_tree(train, 1, params), fit_outcome_tree(train, 0, params))


def fit_weighted_tree(X: np.ndarray, labels: np.ndarray, weights: np.ndarray, params: TreeParams,
                      search: str = "greedy") -> PolicyTree:
    """Weighted-misclassification tree (engine entry point for the reduction)."""
    X = np.asarray(X, dtype=float)
    crit = _WeightedMisclassification(np.asarray(labels), np.asarray(weights, dtype=float), params.min_leaf)
    idx = np.arange(X.shape[0])
    if search == "exact":
        _, root = _exact(X, idx, crit, params, params.max_depth)
    elif search == "greedy":
        root = _grow(X, idx, crit, params, 0)
    else:
        raise PreconditionError(f"unknown search {search!r}")
    return PolicyTree(root, X.shape[1], params)


Model = Union[OutcomeTree, CausalTree, TwoModel, PolicyTree]


def predict_batch(model, dataset: Dataset) -> np.ndarray:
    """Row-wise predictions in dataset order."""
    if dataset.n_features != model.n_features:
        raise PreconditionError(f"model expects {model.n_features} features, dataset has {dataset.n_features}")
    if isinstance(model, EffectModel):
        return model.predict_effect(dataset.X)
    if isinstance(model, OutcomeModel):
        return model.predict_outcome(dataset.X)
    if isinstance(model, Policy):
        return model.score(dataset.X)
    raise TypeError(f"cannot predict with {type(model).__name__}")


# -- serialization ------------------------------------------------------------


def _nodes_to_records(root: TreeNode) -> list[dict]:
    records = []

    def visit(node):
        k = len(records)
        rec = {"id": k, "estimate": node.estimate, "n_samples": node.n_samples}
        if node.n_treated is not None:
            rec["n_treated"] = node.n_treated
        records.append(rec)
        if not node.is_leaf:
            rec["feature_index"] = node.feature_index
            rec["threshold"] = node.threshold
            rec["left"] = visit(node.left)
            rec["right"] = visit(node.right)
        return k

    visit(root)
    return records


def _records_to_nodes(records: list[dict]) -> TreeNode:
    by_id = {r["id"]: r for r in records}

    def build(k):
        r = by_id[k]
        common = dict(estimate=float(r["estimate"]), n_samples=int(r.get("n_samples", 0)), n_treated=r.get("n_treated"))
        if "left" not in r:
            return TreeNode(**common)
        return TreeNode(**common, feature_index=int(r["feature_index"]), threshold=float(r["threshold"]),
                        left=build(r["left"]), right=build(r["right"]))

    return build(0)


def model_to_dict(model) -> dict:
    doc = {"format": MODEL_FORMAT, "kind": model.kind, "n_features": model.n_features}
    if isinstance(model, TwoModel):
        doc["treated"] = _nodes_to_records(model.treated.root)
        doc["control"] = _nodes_to_records(model.control.root)
        params = model.treated.params
    else:
        doc["nodes"] = _nodes_to_records(model.root)
        params = model.params
        if isinstance(model, OutcomeTree):
            doc["arm"] = model.arm
    if params is not None:
        doc["params"] = asdict(params)
    return doc


def model_from_dict(doc: dict):
    if doc.get("format") != MODEL_FORMAT:
        raise PreconditionError(f"unsupported model format {doc.get('format')!r}")
    kind, d = doc["kind"], int(doc["n_features"])
    params = TreeParams(**doc["params"]) if doc.get("params") else None
    if kind == "outcome":
        return OutcomeTree(_records_to_nodes(doc["nodes"]), d, doc.get("arm"), params)
    if kind == "causal":
        return CausalTree(_records_to_nodes(doc["nodes"]), d, params)
    if kind == "policy":
        return PolicyTree(_records_to_nodes(doc["nodes"]), d, params)
    if kind == "two-model":
        return TwoModel(OutcomeTree(_records_to_nodes(doc["treated"]), d, 1, params),
                        OutcomeTree(_records_to_nodes(doc["control"]), d, 0, params))
    raise PreconditionError(f"unknown model kind {kind!r}")


def save_model(model, path) -> None:
    Path(path).write_text(json.dumps(model_to_dict(model), indent=1) + "\n", encoding="utf-8")


def load_model(path):
    return model_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
