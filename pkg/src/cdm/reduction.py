"""Treatment assignment as importance-weighted classification.

Each logged unit becomes a classification example whose label is the arm it
received and whose weight is its (shifted) outcome divided by the
probability of that arm. For any policy, the weight of the examples it
misclassifies plus the weight it matches is the total weight, so maximizing
the IPS value and minimizing weighted misclassification are the same
problem.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal, NamedTuple

import numpy as np

from .core import Dataset, Policy, PreconditionError, arm_propensity
from .trees import PolicyTree, TreeParams, fit_weighted_tree

# exhaustive search is used automatically up to this many examples
EXACT_SEARCH_MAX_N = 200


@dataclass(frozen=True)
class WeightedExample:
    features: np.ndarray
    label: int
    weight: float


@dataclass(frozen=True, eq=False)
class WeightedClassificationSet:
    X: np.ndarray
    labels: np.ndarray
    weights: np.ndarray
    outcome_offset: float = 0.0

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if w.ndim != 1 or w.size == 0:
            raise PreconditionError("a weighted classification set must be non-empty")
        if not np.all(np.isfinite(w)) or np.any(w < 0):
            raise PreconditionError("weights must be finite and non-negative")
        X = np.asarray(self.X, dtype=float)
        labels = np.asarray(self.labels, dtype=np.int8)
        if X.shape[0] != w.size or labels.shape != w.shape:
            raise PreconditionError("features, labels and weights must align")
        for name, arr in (("X", X), ("labels", labels), ("weights", w)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    def __len__(self) -> int:
        return self.weights.size

    @property
    def examples(self) -> list[WeightedExample]:
        return [WeightedExample(self.X[i], int(self.labels[i]), float(self.weights[i])) for i in range(len(self))]

    @property
    def total_weight(self) -> float:
        return float(self.weights.sum())

    def weighted_error(self, policy: Policy) -> float:
        """Misclassified weight divided by the number of examples."""
        wrong = policy.assign(self.X) != self.labels
        return float(np.where(wrong, self.weights, 0.0).sum() / len(self))


def to_weighted_classification(dataset: Dataset) -> WeightedClassificationSet:
    """IPS reduction: label = received arm, weight = (y + c) / p(t | x).

    c = max(0, -min y) makes every weight non-negative; shifting all outcomes
    by a constant moves every policy's value equally.
    """
    e = dataset.require_propensity()
    c = max(0.0, -float(dataset.outcome.min()))
    w = (dataset.outcome + c) / arm_propensity(dataset.treatment, e)
    return WeightedClassificationSet(dataset.X, dataset.treatment, w, c)


def full_information_classification(dataset: Dataset) -> WeightedClassificationSet:
    """Reduction with both expected potential outcomes known (synthetic data).

    label = the better arm (control on ties), weight = |mu1 - mu0|. The
    misclassified weight of a policy, divided by n, equals its oracle regret
    exactly.
    """
    dataset.require_synthetic()
    gap = dataset.mu1 - dataset.mu0
    return WeightedClassificationSet(dataset.X, (gap > 0).astype(np.int8), np.abs(gap), 0.0)


def fit_policy_tree(
    wset: WeightedClassificationSet,
    params: TreeParams = TreeParams(),
    search: Literal["auto", "greedy", "exact"] = "auto",
) -> PolicyTree:
    """Tree policy minimizing weighted misclassification.

    ``greedy`` grows the tree top-down like CART. ``exact`` searches every
    tree up to ``max_depth`` over all midpoint thresholds and returns a
    global minimizer; its cost grows as (n * d) ** max_depth. ``auto`` picks
    exact search for depth <= 2 on at most ``EXACT_SEARCH_MAX_N`` examples.
    """
    if not wset.total_weight > 0:
        raise PreconditionError("all weights are zero; there is no signal to learn a policy from")
    if search == "auto":
        search = "exact" if params.max_depth <= 2 and len(wset) <= EXACT_SEARCH_MAX_N else "greedy"
    return fit_weighted_tree(wset.X, wset.labels, wset.weights, params, search)


class EquivalenceCheck(NamedTuple):
    weighted_error: float
    ips_value: float


def regret_equivalence_check(dataset: Dataset, policy: Policy, rtol: float = 1e-9) -> EquivalenceCheck:
    """Weighted error and IPS value (in shifted-outcome units) of ``policy``.

    Their sum is the total weight over n for every policy; a violation
    raises ``ArithmeticError``.
    """
    wset = to_weighted_classification(dataset)
    match = policy.assign(dataset.X) == dataset.treatment
    ips = float(np.where(match, wset.weights, 0.0).sum() / len(wset))
    err = wset.weighted_error(policy)
    total = wset.total_weight / len(wset)
    if not math.isclose(ips + err, total, rel_tol=rtol, abs_tol=rtol):
        raise ArithmeticError(f"IPS value {ips} + weighted error {err} != total mass {total}")
    return EquivalenceCheck(err, ips)
