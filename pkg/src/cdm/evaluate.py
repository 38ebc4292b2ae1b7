"""Evaluation metrics for effect models and treatment policies."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .core import (
    Dataset,
    EffectModel,
    Policy,
    PreconditionError,
    arm_propensity,
    difference_in_means,
)


@dataclass
class EvaluationReport:
    metric: str
    value: float
    std_error: Optional[float] = None
    n: int = 1
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("a report needs n >= 1")

    def to_dict(self) -> dict:
        return {
            "metric": self.metric,
            "value": self.value,
            "std_error": self.std_error,
            "n": self.n,
            "metadata": self.metadata,
        }


@dataclass
class UpliftCurve:
    """Cumulative incremental outcome against the fraction of units targeted."""

    fractions: np.ndarray
    incremental: np.ndarray
    std_errors: Optional[np.ndarray] = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.fractions = np.asarray(self.fractions, dtype=float)
        self.incremental = np.asarray(self.incremental, dtype=float)
        f = self.fractions
        if f.ndim != 1 or f.shape != self.incremental.shape or f.size < 2:
            raise ValueError("an uplift curve needs matching fraction/value vectors of length >= 2")
        if f[0] != 0.0 or self.incremental[0] != 0.0 or f[-1] != 1.0 or np.any(np.diff(f) <= 0):
            raise ValueError("fractions must increase strictly from (0, 0) to 1")

    @property
    def points(self) -> list[tuple[float, float]]:
        return list(zip(self.fractions.tolist(), self.incremental.tolist()))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["fraction", "incremental_outcome"])
            for q, v in self.points:
                w.writerow([_num(q), _num(v)])


def _num(v: float) -> str:
    return "0" if v == 0 else repr(float(v))


def _check_propensity(e) -> np.ndarray:
    e = np.asarray(e, dtype=float)
    if not np.all((e > 0) & (e < 1)):
        raise PreconditionError("propensity must lie strictly inside (0, 1)")
    return e


def transformed_outcome(y, t, e):
    """Y* = y (t - e) / (e (1 - e)); its mean given X is the CATE under randomization.

    Accepts scalars or arrays.
    """
    e = _check_propensity(e)
    out = np.asarray(y, dtype=float) * (np.asarray(t) - e) / (e * (1.0 - e))
    return float(out) if out.ndim == 0 else out


def _mean_se(values: np.ndarray) -> tuple[float, Optional[float]]:
    n = values.shape[0]
    if n < 2:
        return float(values.mean()), None
    return float(values.mean()), float(values.std(ddof=1) / math.sqrt(n))


def effect_mse(model: EffectModel, test: Dataset) -> EvaluationReport:
    """Mean squared gap between the transformed outcome and the predicted effect.

    This differs from the true effect MSE by a model-independent constant,
    so only differences between models are meaningful.
    """
    e = test.require_propensity()
    ystar = transformed_outcome(test.outcome, test.treatment, e)
    sq = (ystar - model.predict_effect(test.X)) ** 2
    value, se = _mean_se(sq)
    return EvaluationReport("effect_mse", value, se, test.n, {"comparative_only": True})


def true_effect_mse(model: EffectModel, test: Dataset) -> EvaluationReport:
    """Mean squared error against the known CATE (synthetic data only)."""
    test.require_synthetic()
    sq = (test.true_cate - model.predict_effect(test.X)) ** 2
    value, se = _mean_se(sq)
    return EvaluationReport("true_effect_mse", value, se, test.n)


def regret_per_unit(policy: Policy, test: Dataset) -> np.ndarray:
    test.require_synthetic()
    a = policy.assign(test.X)
    best = np.maximum(test.mu0, test.mu1)
    return best - np.where(a == 1, test.mu1, test.mu0)


def oracle_regret(policy: Policy, test: Dataset) -> EvaluationReport:
    """Mean gap between the better expected potential outcome and the chosen one."""
    value, se = _mean_se(regret_per_unit(policy, test))
    return EvaluationReport("oracle_regret", value, se, test.n)


def ips_policy_value(policy: Policy, logged: Dataset) -> EvaluationReport:
    """Inverse-propensity estimate of the mean outcome under ``policy``."""
    e = logged.require_propensity()
    p = arm_propensity(logged.treatment, e)
    match = policy.assign(logged.X) == logged.treatment
    terms = np.where(match, logged.outcome / p, 0.0)
    value, se = _mean_se(terms)
    return EvaluationReport("ips_value", value, se, logged.n, {"matched": int(match.sum())})


def decision_error_rate(policy: Policy, test: Dataset) -> EvaluationReport:
    """Share of units where the policy disagrees with 1(true CATE > 0)."""
    test.require_synthetic()
    wrong = policy.assign(test.X) != (test.true_cate > 0)
    rate = float(wrong.mean())
    se = math.sqrt(rate * (1 - rate) / test.n)
    return EvaluationReport("decision_error_rate", rate, se, test.n)


def grid_sizes(n: int, n_grid: int) -> np.ndarray:
    """ceil(q * n) for q = k / n_grid, k = 0..n_grid, in exact integer arithmetic."""
    k = np.arange(n_grid + 1, dtype=np.int64)
    return -((-k * n) // n_grid)


def uplift_curve(scores, test: Dataset, n_grid: int = 20) -> UpliftCurve:
    """Difference-in-means uplift among the top-scored units, scaled by their count.

    Units are ranked by score (descending, ties in dataset order). A grid
    point whose top set misses an arm reports 0 and is listed in
    ``metadata["empty_arm_fractions"]``.
    """
    if n_grid < 1:
        raise PreconditionError("n_grid must be >= 1")
    e = test.require_propensity()
    if np.any(e != e[0]):
        raise PreconditionError("uplift curves need randomized data with a constant propensity")
    scores = np.asarray(scores, dtype=float)
    if scores.shape != (test.n,) or not np.all(np.isfinite(scores)):
        raise PreconditionError("need one finite score per test unit")
    order = np.argsort(-scores, kind="stable")
    t = test.treatment[order].astype(float)
    y = test.outcome[order]
    c = lambda a: np.concatenate([[0.0], np.cumsum(a)])  # noqa: E731
    n1, s1, q1 = c(t), c(t * y), c(t * y * y)
    n0, s0, q0 = c(1 - t), c((1 - t) * y), c((1 - t) * y * y)

    sizes = grid_sizes(test.n, n_grid)
    fractions = np.arange(n_grid + 1) / n_grid
    inc = np.zeros(n_grid + 1)
    se = np.zeros(n_grid + 1)
    empty = []
    for g, k in enumerate(sizes):
        if k == 0:
            continue
        a, b = n1[k], n0[k]
        if a == 0 or b == 0:
            empty.append(float(fractions[g]))
            continue
        if k == test.n:
            inc[g] = difference_in_means(test.treatment, test.outcome) * test.n
        else:
            inc[g] = (s1[k] / a - s0[k] / b) * k
        var1 = (q1[k] - s1[k] ** 2 / a) / (a - 1) if a > 1 else 0.0
        var0 = (q0[k] - s0[k] ** 2 / b) / (b - 1) if b > 1 else 0.0
        se[g] = k * math.sqrt(max(var1, 0.0) / a + max(var0, 0.0) / b)
    meta = {
        "n": test.n,
        "per_capita": (inc / test.n).tolist(),
        "empty_arm_fractions": empty,
    }
    return UpliftCurve(fractions, inc, se, meta)


def auuc(curve: UpliftCurve) -> float:
    """Trapezoidal area under the uplift curve."""
    return float(np.trapezoid(curve.incremental, curve.fractions))
