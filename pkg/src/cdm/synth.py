"""Synthetic data with known potential outcomes.

Every generator draws, in order: features, one shared noise term per unit,
then the treatment. Potential outcomes therefore do not depend on how
treatment is assigned, so an RCT and a confounded dataset built from the
same seed contain exactly the same units and potential outcomes.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Literal, Optional, Sequence

import numpy as np
from scipy.special import expit, logit

from .core import Dataset, Policy, PreconditionError

OutcomeKind = Literal["continuous", "bernoulli"]
Direction = Literal["opposing", "reinforcing"]
EffectShape = Literal["linear", "step"]


@dataclass(frozen=True)
class DgpConfig:
    """Linear-index data generating process.

    baseline index  mu0(x) = baseline_intercept + baseline_coefs . x
    effect index    f(x)   = effect_intercept + effect_coefs . x         (linear)
                    f(x)   = effect_intercept + effect_coefs . sign(x)   (step)

    Continuous outcomes are index + shared Gaussian noise. Bernoulli outcomes
    use success probabilities logistic(mu0) and logistic(mu0 + f), coupled
    through one shared uniform draw.
    """

    n_samples: int = 1000
    n_features: int = 2
    baseline_coefs: Sequence[float] = (0.0, 0.0)
    effect_coefs: Sequence[float] = (0.0, 0.0)
    baseline_intercept: float = 0.0
    effect_intercept: float = 0.0
    effect_shape: EffectShape = "linear"
    outcome_noise_sd: float = 1.0
    outcome_kind: OutcomeKind = "continuous"
    propensity: float = 0.5
    confounding_strength: float = 0.0
    confounding_direction: Direction = "reinforcing"
    hide_propensity: bool = False
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "baseline_coefs", tuple(float(c) for c in self.baseline_coefs))
        object.__setattr__(self, "effect_coefs", tuple(float(c) for c in self.effect_coefs))
        if self.n_samples < 1 or self.n_features < 1:
            raise PreconditionError("n_samples and n_features must be positive")
        if len(self.baseline_coefs) != self.n_features or len(self.effect_coefs) != self.n_features:
            raise PreconditionError("coefficient vectors must have length n_features")
        coefs = self.baseline_coefs + self.effect_coefs + (self.baseline_intercept, self.effect_intercept)
        if not all(math.isfinite(c) for c in coefs):
            raise PreconditionError("coefficients must be finite")
        if not 0.0 < self.propensity < 1.0:
            raise PreconditionError("propensity must lie strictly inside (0, 1)")
        if not self.outcome_noise_sd >= 0.0:
            raise PreconditionError("outcome_noise_sd must be non-negative")
        if self.outcome_kind not in ("continuous", "bernoulli"):
            raise PreconditionError(f"unknown outcome_kind {self.outcome_kind!r}")
        if self.confounding_direction not in ("opposing", "reinforcing"):
            raise PreconditionError(f"unknown confounding_direction {self.confounding_direction!r}")
        if self.effect_shape not in ("linear", "step"):
            raise PreconditionError(f"unknown effect_shape {self.effect_shape!r}")
        if not math.isfinite(self.confounding_strength):
            raise PreconditionError("confounding_strength must be finite")

    def baseline_index(self, X: np.ndarray) -> np.ndarray:
        return self.baseline_intercept + X @ np.asarray(self.baseline_coefs)

    def effect_index(self, X: np.ndarray) -> np.ndarray:
        coefs = np.asarray(self.effect_coefs)
        if self.effect_shape == "step":
            return self.effect_intercept + np.where(X > 0, 1.0, -1.0) @ coefs
        return self.effect_intercept + X @ coefs


def _potential_outcomes(config: DgpConfig, rng: np.random.Generator):
    X = rng.uniform(-1.0, 1.0, size=(config.n_samples, config.n_features))
    b = config.baseline_index(X)
    f = config.effect_index(X)
    if config.outcome_kind == "continuous":
        noise = rng.standard_normal(config.n_samples) * config.outcome_noise_sd
        mu0, mu1 = b, b + f
        y0, y1 = mu0 + noise, mu1 + noise
    else:
        u = rng.uniform(size=config.n_samples)
        mu0, mu1 = expit(b), expit(b + f)
        y0, y1 = (u < mu0).astype(float), (u < mu1).astype(float)
    return X, b, f, y0, y1, mu0, mu1


def _assemble(X, t, y0, y1, mu0, mu1, e_true, e_visible, name) -> Dataset:
    return Dataset(
        X=X,
        treatment=t,
        outcome=np.where(t == 1, y1, y0),
        propensity=e_visible,
        y0=y0,
        y1=y1,
        mu0=mu0,
        mu1=mu1,
        true_propensity=e_true,
        name=name,
    )


def gen_rct(config: DgpConfig) -> Dataset:
    """Randomized assignment with P(T=1) = config.propensity for every unit."""
    if config.confounding_strength != 0.0:
        raise PreconditionError("gen_rct requires confounding_strength == 0; use gen_confounded")
    rng = np.random.default_rng(config.seed)
    X, _, _, y0, y1, mu0, mu1 = _potential_outcomes(config, rng)
    t = (rng.uniform(size=config.n_samples) < config.propensity).astype(np.int8)
    e = np.full(config.n_samples, config.propensity)
    return _assemble(X, t, y0, y1, mu0, mu1, e, None if config.hide_propensity else e, "rct")


def gen_confounded(config: DgpConfig) -> Dataset:
    """Assignment logit shifted by gamma * s(x).

    s(x) is the baseline index for "opposing" (selection on baseline) and the
    effect index for "reinforcing" (selection on gains). With
    ``hide_propensity`` the observable propensity is dropped; the true one is
    kept on the dataset for oracle use.
    """
    gamma = config.confounding_strength
    if not gamma > 0.0:
        raise PreconditionError("gen_confounded requires confounding_strength > 0")
    rng = np.random.default_rng(config.seed)
    X, b, f, y0, y1, mu0, mu1 = _potential_outcomes(config, rng)
    s = b if config.confounding_direction == "opposing" else f
    e = expit(logit(config.propensity) + gamma * s)
    # keep true propensities strictly inside (0, 1)
    e = np.clip(e, 1e-12, 1.0 - 1e-12)
    t = (rng.uniform(size=config.n_samples) < e).astype(np.int8)
    return _assemble(X, t, y0, y1, mu0, mu1, e, None if config.hide_propensity else e, "confounded")


def generate(config: DgpConfig) -> Dataset:
    return gen_rct(config) if config.confounding_strength == 0.0 else gen_confounded(config)


# -- Criteo-like regime ---------------------------------------------------------

CRITEO_N_FEATURES = 11
_OUTCOME_FEATURES = slice(0, 1)
_EFFECT_FEATURES = slice(1, 2)


@dataclass(frozen=True)
class CriteoLikeConfig:
    """Randomized ad-targeting data with rare binary conversions.

    Signal-to-noise ratios are measured against the Bernoulli noise at the
    base rate, sigma = sqrt(base_rate * (1 - base_rate)):

        p0(x) = base_rate   + outcome_snr * sigma * z0(x)
        f(x)  = mean_effect + effect_snr  * sigma * g(x)
        g     = corr * z0 + sqrt(1 - corr^2) * z1

    z0 and z1 are features 0 and 1 rescaled to unit variance, so both are
    bounded by sqrt(3); features 2-10 are pure noise. With the default
    rates and ratios neither probability can leave [0, 1]. Settings that
    push them out get clipped, which bends the correlation slightly.
    """

    n_samples: int = 10000
    treat_rate: float = 0.85
    outcome_snr: float = 0.15
    effect_snr: float = 0.05
    effect_outcome_corr: float = 0.9
    base_rate: float = 0.1
    mean_effect: float = 0.02
    seed: int = 0

    def __post_init__(self):
        if self.n_samples < 1:
            raise PreconditionError("n_samples must be positive")
        if not 0.0 < self.treat_rate < 1.0:
            raise PreconditionError("treat_rate must lie strictly inside (0, 1)")
        if not abs(self.effect_outcome_corr) <= 1.0:
            raise PreconditionError("effect_outcome_corr must lie in [-1, 1]")
        if not (self.outcome_snr >= 0.0 and self.effect_snr >= 0.0):
            raise PreconditionError("signal-to-noise ratios must be non-negative")
        if not 0.0 < self.base_rate < 1.0:
            raise PreconditionError("base_rate must lie strictly inside (0, 1)")


def _block_index(X: np.ndarray, block: slice) -> np.ndarray:
    cols = X[:, block]
    # uniform(-1, 1) has variance 1/3
    return cols.sum(axis=1) / math.sqrt(cols.shape[1] / 3.0)


def gen_criteo_like(
    n_samples: int = 10000,
    treat_rate: float = 0.85,
    outcome_snr: float = 0.15,
    effect_snr: float = 0.05,
    effect_outcome_corr: float = 0.9,
    seed: int = 0,
    **extra,
) -> Dataset:
    config = CriteoLikeConfig(
        n_samples=n_samples,
        treat_rate=treat_rate,
        outcome_snr=outcome_snr,
        effect_snr=effect_snr,
        effect_outcome_corr=effect_outcome_corr,
        seed=seed,
        **extra,
    )
    return gen_criteo_like_from(config)


def gen_criteo_like_from(config: CriteoLikeConfig) -> Dataset:
    rng = np.random.default_rng(config.seed)
    n = config.n_samples
    X = rng.uniform(-1.0, 1.0, size=(n, CRITEO_N_FEATURES))
    z0 = _block_index(X, _OUTCOME_FEATURES)
    z1 = _block_index(X, _EFFECT_FEATURES)
    rho = config.effect_outcome_corr
    g = rho * z0 + math.sqrt(max(0.0, 1.0 - rho * rho)) * z1
    sigma = math.sqrt(config.base_rate * (1.0 - config.base_rate))
    mu0 = np.clip(config.base_rate + config.outcome_snr * sigma * z0, 0.0, 1.0)
    mu1 = np.clip(mu0 + config.mean_effect + config.effect_snr * sigma * g, 0.0, 1.0)
    u = rng.uniform(size=n)
    y0, y1 = (u < mu0).astype(float), (u < mu1).astype(float)
    t = (rng.uniform(size=n) < config.treat_rate).astype(np.int8)
    e = np.full(n, config.treat_rate)
    return _assemble(X, t, y0, y1, mu0, mu1, e, e, "criteo_like")


# -- oracle quantities ----------------------------------------------------------


def oracle_policy_value(dataset: Dataset, policy: Policy) -> float:
    """Mean expected outcome when every unit gets the arm the policy picks."""
    dataset.require_synthetic()
    a = policy.assign(dataset.X)
    return float(np.mean(np.where(a == 1, dataset.mu1, dataset.mu0)))


def oracle_ate(dataset: Dataset) -> float:
    return float(np.mean(dataset.true_cate))


def derive_seed(root: int, *key: int) -> int:
    ss = np.random.SeedSequence([int(root), *[int(k) for k in key]])
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


def with_seed(config, seed: int, n_samples: Optional[int] = None):
    kw = {"seed": seed}
    if n_samples is not None:
        kw["n_samples"] = n_samples
    return replace(config, **kw)
