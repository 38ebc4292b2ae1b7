"""Domain types shared across the package and policy construction.

Datasets are column-oriented: features, treatments and outcomes live in
read-only numpy arrays. Per-unit ``Sample`` views are available for code
that wants them, but every metric and learner works on whole arrays.
"""
from __future__ import annotations

import math
from abc import ABC, abstractmethod
from dataclasses import dataclass, field, replace
from typing import Iterator, Optional, Sequence

import numpy as np

N_LEVELS = 2


class CdmError(Exception):
    """Base class for errors raised by this package."""


class PreconditionError(CdmError, ValueError):
    """An operation's input does not satisfy its contract."""


class MissingPropensityError(PreconditionError):
    """A propensity-dependent operation was given data without propensities."""


def _frozen(arr, dtype) -> np.ndarray:
    out = np.array(arr, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class Sample:
    features: np.ndarray
    treatment: int
    outcome: float
    propensity: Optional[float] = None


@dataclass(frozen=True)
class SyntheticSample(Sample):
    """A sample that also carries both potential outcomes.

    ``potential_outcomes`` are the realized draws Y(0), Y(1);
    ``expected_outcomes`` are their conditional means given the features, and
    ``true_cate`` is the difference of the latter.
    """

    potential_outcomes: tuple[float, float] = (math.nan, math.nan)
    expected_outcomes: tuple[float, float] = (math.nan, math.nan)

    @property
    def true_cate(self) -> float:
        return self.expected_outcomes[1] - self.expected_outcomes[0]


@dataclass(frozen=True, eq=False)
class Dataset:
    """Immutable collection of units with a fixed feature schema.

    ``propensity`` is what learners and off-policy estimators may see.
    ``true_propensity`` is the assignment probability actually used to
    generate the data; it is kept for oracle evaluation even when the
    observable propensity is hidden.
    """

    X: np.ndarray
    treatment: np.ndarray
    outcome: np.ndarray
    propensity: Optional[np.ndarray] = None
    y0: Optional[np.ndarray] = None
    y1: Optional[np.ndarray] = None
    mu0: Optional[np.ndarray] = None
    mu1: Optional[np.ndarray] = None
    true_propensity: Optional[np.ndarray] = None
    name: str = ""
    feature_names: Optional[tuple[str, ...]] = None
    n_levels: int = N_LEVELS

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        if X.ndim == 1:
            X = X.reshape(-1, 1)
        if X.ndim != 2:
            raise ValueError("X must be a 2-d array")
        n = X.shape[0]
        if n == 0:
            raise ValueError("a dataset must contain at least one sample")
        if self.n_levels != N_LEVELS:
            raise ValueError(f"only binary treatments are supported (n_levels={self.n_levels})")
        if not np.all(np.isfinite(X)):
            raise ValueError("features must be finite")
        object.__setattr__(self, "X", _frozen(X, float))

        t = np.asarray(self.treatment)
        if t.shape != (n,):
            raise ValueError("treatment must have one entry per sample")
        if not np.all((t == 0) | (t == 1)):
            raise ValueError("treatment levels must be 0 or 1")
        object.__setattr__(self, "treatment", _frozen(t, np.int8))

        y = np.asarray(self.outcome, dtype=float)
        if y.shape != (n,) or not np.all(np.isfinite(y)):
            raise ValueError("outcome must be a finite vector with one entry per sample")
        object.__setattr__(self, "outcome", _frozen(y, float))

        for attr in ("propensity", "true_propensity"):
            e = getattr(self, attr)
            if e is None:
                continue
            e = np.broadcast_to(np.asarray(e, dtype=float), (n,))
            if not np.all((e > 0) & (e < 1)):
                raise ValueError(f"{attr} must lie strictly inside (0, 1)")
            object.__setattr__(self, attr, _frozen(e, float))

        oracle = [getattr(self, a) for a in ("y0", "y1", "mu0", "mu1")]
        if any(a is not None for a in oracle):
            if any(a is None for a in oracle):
                raise ValueError("synthetic datasets need y0, y1, mu0 and mu1 together")
            for attr in ("y0", "y1", "mu0", "mu1"):
                a = np.asarray(getattr(self, attr), dtype=float)
                if a.shape != (n,) or not np.all(np.isfinite(a)):
                    raise ValueError(f"{attr} must be a finite vector with one entry per sample")
                object.__setattr__(self, attr, _frozen(a, float))
            observed = np.where(self.treatment == 1, self.y1, self.y0)
            if not np.array_equal(observed, self.outcome):
                raise ValueError("outcome must equal the potential outcome of the assigned arm")

        if self.feature_names is not None:
            names = tuple(self.feature_names)
            if len(names) != X.shape[1] or len(set(names)) != len(names):
                raise ValueError("feature_names must be unique, one per feature")
            object.__setattr__(self, "feature_names", names)

    # -- shape --------------------------------------------------------------
    def __len__(self) -> int:
        return self.X.shape[0]

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def n_features(self) -> int:
        return self.X.shape[1]

    @property
    def columns(self) -> tuple[str, ...]:
        if self.feature_names is not None:
            return self.feature_names
        return tuple(f"f{j}" for j in range(self.n_features))

    @property
    def is_synthetic(self) -> bool:
        return self.mu0 is not None

    @property
    def has_propensity(self) -> bool:
        return self.propensity is not None

    @property
    def true_cate(self) -> np.ndarray:
        self.require_synthetic()
        return self.mu1 - self.mu0

    @property
    def treated_fraction(self) -> float:
        return float(np.mean(self.treatment))

    @property
    def constant_propensity(self) -> Optional[float]:
        """The common propensity if all units share one, else None."""
        if self.propensity is None:
            return None
        e0 = self.propensity[0]
        return float(e0) if np.all(self.propensity == e0) else None

    # -- per-unit views -----------------------------------------------------
    def __getitem__(self, i: int) -> Sample:
        e = None if self.propensity is None else float(self.propensity[i])
        common = dict(
            features=self.X[i],
            treatment=int(self.treatment[i]),
            outcome=float(self.outcome[i]),
            propensity=e,
        )
        if not self.is_synthetic:
            return Sample(**common)
        return SyntheticSample(
            **common,
            potential_outcomes=(float(self.y0[i]), float(self.y1[i])),
            expected_outcomes=(float(self.mu0[i]), float(self.mu1[i])),
        )

    def __iter__(self) -> Iterator[Sample]:
        return (self[i] for i in range(self.n))

    @property
    def samples(self) -> list[Sample]:
        return list(self)

    @classmethod
    def from_samples(cls, samples: Sequence[Sample], name: str = "") -> "Dataset":
        if not samples:
            raise ValueError("a dataset must contain at least one sample")
        kw = dict(
            X=np.stack([np.asarray(s.features, dtype=float) for s in samples]),
            treatment=[s.treatment for s in samples],
            outcome=[s.outcome for s in samples],
            name=name,
        )
        props = [s.propensity for s in samples]
        if all(p is not None for p in props):
            kw["propensity"] = props
        elif any(p is not None for p in props):
            raise ValueError("propensity must be given for all samples or none")
        if all(isinstance(s, SyntheticSample) for s in samples):
            kw["y0"] = [s.potential_outcomes[0] for s in samples]
            kw["y1"] = [s.potential_outcomes[1] for s in samples]
            kw["mu0"] = [s.expected_outcomes[0] for s in samples]
            kw["mu1"] = [s.expected_outcomes[1] for s in samples]
        return cls(**kw)

    # -- derived datasets ---------------------------------------------------
    def subset(self, idx, name: Optional[str] = None) -> "Dataset":
        idx = np.asarray(idx)
        if idx.dtype == bool:
            idx = np.flatnonzero(idx)
        take = lambda a: None if a is None else a[idx]  # noqa: E731
        return Dataset(
            X=self.X[idx],
            treatment=self.treatment[idx],
            outcome=self.outcome[idx],
            propensity=take(self.propensity),
            y0=take(self.y0),
            y1=take(self.y1),
            mu0=take(self.mu0),
            mu1=take(self.mu1),
            true_propensity=take(self.true_propensity),
            name=self.name if name is None else name,
            feature_names=self.feature_names,
        )

    def with_propensity(self, propensity) -> "Dataset":
        """Copy with the observable propensity replaced (None hides it)."""
        return replace(self, propensity=propensity)

    # -- checks -------------------------------------------------------------
    def require_synthetic(self) -> None:
        if not self.is_synthetic:
            raise PreconditionError(
                f"dataset {self.name!r} has no potential outcomes; oracle metrics need synthetic data"
            )

    def require_propensity(self) -> np.ndarray:
        if self.propensity is None:
            raise MissingPropensityError(
                f"dataset {self.name!r} has no propensity; declare a propensity column or a "
                "constant propensity (randomization is never assumed)"
            )
        return self.propensity

    def require_both_arms(self) -> None:
        n1 = int(self.treatment.sum())
        if n1 == 0 or n1 == self.n:
            raise PreconditionError(f"dataset {self.name!r} needs units in both arms")


def arm_propensity(treatment: np.ndarray, propensity: np.ndarray) -> np.ndarray:
    """Probability that the logging policy chose the arm each unit received."""
    return np.where(treatment == 1, propensity, 1.0 - propensity)


def difference_in_means(treatment: np.ndarray, outcome: np.ndarray) -> float:
    """mean(Y | T=1) - mean(Y | T=0). Both arms must be non-empty."""
    treated = treatment == 1
    n1 = int(np.count_nonzero(treated))
    n0 = treatment.shape[0] - n1
    if n1 == 0 or n0 == 0:
        raise PreconditionError("difference in means needs units in both arms")
    return float(outcome[treated].sum() / n1 - outcome[~treated].sum() / n0)


def ipw_difference_in_means(treatment: np.ndarray, outcome: np.ndarray, propensity: np.ndarray) -> float:
    """Self-normalized inverse-propensity-weighted difference in means.

    Reduces to :func:`difference_in_means` (bit for bit) when every unit
    shares one propensity.
    """
    if np.all(propensity == propensity[0]):
        return difference_in_means(treatment, outcome)
    treated = treatment == 1
    if not treated.any() or treated.all():
        raise PreconditionError("difference in means needs units in both arms")
    w1 = 1.0 / propensity[treated]
    w0 = 1.0 / (1.0 - propensity[~treated])
    return float(np.dot(w1, outcome[treated]) / w1.sum() - np.dot(w0, outcome[~treated]) / w0.sum())


# -- models and policies ------------------------------------------------------


def _as_2d(x) -> tuple[np.ndarray, bool]:
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 1:
        return arr.reshape(1, -1), True
    if arr.ndim != 2:
        raise ValueError("expected a feature vector or a 2-d feature matrix")
    return arr, False


class EffectModel(ABC):
    """Scores units by estimated treatment effect.

    ``predict_effect`` takes one feature vector (returns a float) or a
    matrix with one row per unit (returns an array).
    """

    n_features: int

    @abstractmethod
    def _predict(self, X: np.ndarray) -> np.ndarray: ...

    def predict_effect(self, x):
        X, single = _as_2d(x)
        _check_width(X, self.n_features)
        out = self._predict(X)
        return float(out[0]) if single else out


class OutcomeModel(ABC):
    """Predicts the expected outcome under the arm recorded in ``arm``."""

    n_features: int
    arm: Optional[int] = None

    @abstractmethod
    def _predict(self, X: np.ndarray) -> np.ndarray: ...

    def predict_outcome(self, x):
        X, single = _as_2d(x)
        _check_width(X, self.n_features)
        out = self._predict(X)
        return float(out[0]) if single else out


def _check_width(X: np.ndarray, n_features: int) -> None:
    if X.shape[1] != n_features:
        raise PreconditionError(f"model expects {n_features} features, got {X.shape[1]}")


class Policy(ABC):
    """Maps features to a treatment level; ``score`` ranks units for targeting."""

    @abstractmethod
    def _assign(self, X: np.ndarray) -> np.ndarray: ...

    def _score(self, X: np.ndarray) -> np.ndarray:
        return np.zeros(X.shape[0])

    def assign(self, x):
        X, single = _as_2d(x)
        out = self._assign(X).astype(np.int8)
        return int(out[0]) if single else out

    def score(self, x):
        X, single = _as_2d(x)
        out = np.asarray(self._score(X), dtype=float)
        return float(out[0]) if single else out


@dataclass(frozen=True)
class ThresholdPolicy(Policy):
    model: EffectModel
    tau: float = 0.0

    def _assign(self, X):
        return (self.model.predict_effect(X) > self.tau).astype(np.int8)

    def _score(self, X):
        return self.model.predict_effect(X) - self.tau


@dataclass(frozen=True)
class OutcomePolicy(Policy):
    model: OutcomeModel
    tau: float = 0.0

    def _assign(self, X):
        return (self.model.predict_outcome(X) > self.tau).astype(np.int8)

    def _score(self, X):
        return self.model.predict_outcome(X)


@dataclass(frozen=True)
class FixedPolicy(Policy):
    level: int = 0

    def _assign(self, X):
        return np.full(X.shape[0], self.level, dtype=np.int8)


@dataclass(frozen=True)
class ArrayEffectModel(EffectModel):
    """Effect model defined by a callable on feature matrices (handy for oracles)."""

    fn: object
    n_features: int = field(default=1)

    def _predict(self, X):
        return np.asarray(self.fn(X), dtype=float).reshape(X.shape[0])


def _check_tau(tau: float) -> float:
    tau = float(tau)
    if not math.isfinite(tau):
        raise PreconditionError("threshold must be finite")
    return tau


def threshold_policy(model: EffectModel, tau: float = 0.0) -> ThresholdPolicy:
    """Treat iff the predicted effect is strictly above ``tau``."""
    return ThresholdPolicy(model, _check_tau(tau))


def outcome_policy(model: OutcomeModel, tau: float = 0.0) -> OutcomePolicy:
    """Treat iff the predicted outcome is strictly above ``tau`` (proxy targeting)."""
    return OutcomePolicy(model, _check_tau(tau))


def fixed_policy(level: int) -> FixedPolicy:
    if level not in (0, 1):
        raise PreconditionError(f"treatment level must be 0 or 1, got {level}")
    return FixedPolicy(int(level))


def top_fraction_threshold(scores, fraction: float) -> float:
    """Threshold under which exactly ceil(fraction * N) distinct scores exceed it.

    With ties at the cut, fewer units may exceed the threshold.
    """
    s = np.sort(np.asarray(scores, dtype=float))
    n = s.shape[0]
    if not 0.0 <= fraction <= 1.0:
        raise PreconditionError("fraction must lie in [0, 1]")
    k = math.ceil(round(fraction * n, 9))
    if k >= n:
        return -math.inf if n == 0 else float(np.nextafter(s[0], -np.inf))
    return float(s[n - k - 1])
