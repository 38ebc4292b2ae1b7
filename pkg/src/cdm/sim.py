"""Decision-error scenarios and the two training-data experiments.

* :func:`run_scenario` compares the wrong-decision rate of a biased but
  precise estimator with an unbiased but noisy one.
* :func:`run_confounding_experiment` trains the same effect learner on a
  large confounded sample and a small randomized one.
* :func:`run_proxy_experiment` compares targeting by predicted outcome,
  by predicted effect and by a directly learned policy.

Replication ``r`` always uses root seed ``seed + r``; results are merged in
replication order, so reports do not depend on the number of workers.
"""
from __future__ import annotations

import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Literal, Optional, Sequence, Union

import numpy as np

from .core import Dataset, PreconditionError, outcome_policy, threshold_policy
from .evaluate import EvaluationReport, auuc, oracle_regret, uplift_curve
from .reduction import fit_policy_tree, to_weighted_classification
from .synth import CriteoLikeConfig, DgpConfig, derive_seed, gen_criteo_like_from, gen_rct, generate
from .trees import TreeParams, fit_causal_tree, fit_outcome_tree, fit_two_model

log = logging.getLogger(__name__)


def n_workers() -> int:
    env = os.environ.get("CDM_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            log.warning("ignoring non-integer CDM_THREADS=%r", env)
    return os.cpu_count() or 1


def parallel_map(fn: Callable, items: Sequence) -> list:
    """Map in input order, with up to CDM_THREADS worker threads."""
    workers = min(n_workers(), len(items))
    if workers <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


# -- wrong-decision scenarios ---------------------------------------------------


def std_normal_cdf(z: float) -> float:
    return 0.5 * math.erfc(-z / math.sqrt(2.0))


def analytic_wrong_prob(mean: float, sd: float, tau: float, correct_is_treat: bool) -> float:
    """Probability that a N(mean, sd^2) estimate lands on the wrong side of tau."""
    if not sd > 0:
        raise PreconditionError("sd must be positive")
    below = std_normal_cdf((tau - mean) / sd)
    return below if correct_is_treat else 1.0 - below


@dataclass(frozen=True)
class ScenarioConfig:
    true_effect: float = 1.0
    tau: float = 0.0
    bm_mean: float = 0.5
    bm_sd: float = 0.35
    um_mean: float = 1.0
    um_sd: float = 0.7
    n_draws: int = 100000
    seed: int = 0
    name: str = ""

    def __post_init__(self):
        if not (self.bm_sd > 0 and self.um_sd > 0):
            raise PreconditionError("sampling sds must be positive")
        if self.n_draws < 1:
            raise PreconditionError("n_draws must be >= 1")


@dataclass(frozen=True)
class ScenarioResult:
    bm_wrong_rate: float
    um_wrong_rate: float
    bm_wrong_analytic: float
    um_wrong_analytic: float
    correct_action: int
    name: str = ""

    def to_dict(self) -> dict:
        return asdict(self)


def bias_scenarios(n_draws: int = 100000, seed: int = 0) -> list[ScenarioConfig]:
    """Large opposite bias, small opposite bias and reinforcing bias."""
    panels = (("a_large_opposite_bias", -0.2), ("b_small_opposite_bias", 0.5), ("c_reinforcing_bias", 1.5))
    return [ScenarioConfig(bm_mean=m, n_draws=n_draws, seed=seed + k, name=name)
            for k, (name, m) in enumerate(panels)]


def run_scenario(config: ScenarioConfig) -> ScenarioResult:
    correct = 1 if config.true_effect > config.tau else 0
    rng = np.random.default_rng(config.seed)
    bm = rng.normal(config.bm_mean, config.bm_sd, config.n_draws)
    um = rng.normal(config.um_mean, config.um_sd, config.n_draws)
    # an estimate equal to tau means "do not treat"
    wrong = lambda est: float(np.mean((est > config.tau) != bool(correct)))  # noqa: E731
    return ScenarioResult(
        bm_wrong_rate=wrong(bm),
        um_wrong_rate=wrong(um),
        bm_wrong_analytic=analytic_wrong_prob(config.bm_mean, config.bm_sd, config.tau, bool(correct)),
        um_wrong_analytic=analytic_wrong_prob(config.um_mean, config.um_sd, config.tau, bool(correct)),
        correct_action=correct,
        name=config.name,
    )


# -- shared experiment plumbing ---------------------------------------------------


@dataclass
class ExperimentResult:
    reports: list[EvaluationReport]
    # (method, train_size, replication) -> curve
    curves: dict = field(default_factory=dict)

    def report(self, metric: str) -> EvaluationReport:
        for r in self.reports:
            if r.metric == metric:
                return r
        raise KeyError(metric)


def _summary(metric: str, values: Sequence[float], **meta) -> EvaluationReport:
    v = np.asarray(values, dtype=float)
    se = float(v.std(ddof=1) / math.sqrt(v.size)) if v.size > 1 else None
    return EvaluationReport(metric, float(v.mean()), se, int(v.size),
                            {"median": float(np.median(v)), "per_rep": v.tolist(), **meta})


EffectMethod = Literal["causal-tree", "two-model"]


def _fit_effect(method: str, train: Dataset, params: TreeParams):
    if method == "causal-tree":
        return fit_causal_tree(train, params)
    if method == "two-model":
        return fit_two_model(train, params)
    raise PreconditionError(f"unknown effect learner {method!r}")


# -- confounded vs experimental training data ---------------------------------------

CONFOUNDING_DEFAULT_PARAMS = TreeParams(max_depth=4, min_leaf=25)


def confounding_preset(direction: Literal["reinforcing", "opposing"] = "reinforcing") -> DgpConfig:
    """Default DGP for the confounded-vs-experimental comparison.

    Both presets share the potential outcomes. Features 0-1 drive the
    baseline, features 2-3 the effect. Under "reinforcing", units with larger
    effects are more likely to be treated. Under "opposing", units with
    higher baselines are, which inflates every effect estimate until most
    harmful treatments look beneficial.
    """
    common = dict(
        n_features=4,
        baseline_coefs=(1.0, 1.0, 0.0, 0.0),
        effect_coefs=(0.0, 0.0, 1.0, 0.5),
        effect_intercept=-0.1,
        outcome_noise_sd=1.0,
        propensity=0.5,
    )
    if direction == "reinforcing":
        return DgpConfig(confounding_strength=2.0, confounding_direction="reinforcing", **common)
    return DgpConfig(confounding_strength=4.0, confounding_direction="opposing", **common)


def run_confounding_experiment(
    dgp: DgpConfig,
    n_confounded: int,
    n_experimental: int,
    learner_params: TreeParams = CONFOUNDING_DEFAULT_PARAMS,
    n_reps: int = 50,
    seed: int = 0,
    n_test: int = 50000,
    method: EffectMethod = "causal-tree",
    tau: float = 0.0,
) -> ExperimentResult:
    """Regret of policies trained on confounded vs randomized data.

    The confounded learner never sees the true assignment probabilities:
    it is told the nominal ``dgp.propensity``, as if the data were an RCT.
    Both policies are scored against the same fresh randomized test set.
    """
    if min(n_confounded, n_experimental) < 2 * learner_params.min_leaf:
        raise PreconditionError("training sizes must be at least 2 * min_leaf")
    if n_reps < 1:
        raise PreconditionError("n_reps must be >= 1")

    def one(r: int):
        root = seed + r
        conf_cfg = replace(dgp, n_samples=n_confounded, seed=derive_seed(root, 0), hide_propensity=True)
        conf = generate(conf_cfg).with_propensity(dgp.propensity)
        rct_cfg = replace(dgp, confounding_strength=0.0, hide_propensity=False)
        exp = gen_rct(replace(rct_cfg, n_samples=n_experimental, seed=derive_seed(root, 1)))
        test = gen_rct(replace(rct_cfg, n_samples=n_test, seed=derive_seed(root, 2)))
        rc = oracle_regret(threshold_policy(_fit_effect(method, conf, learner_params), tau), test).value
        re = oracle_regret(threshold_policy(_fit_effect(method, exp, learner_params), tau), test).value
        log.info("confounding rep %d: regret confounded=%.5f experimental=%.5f", r, rc, re)
        return rc, re

    rows = parallel_map(one, list(range(n_reps)))
    conf = np.array([a for a, _ in rows])
    exp = np.array([b for _, b in rows])
    diff = conf - exp
    wins = conf < exp
    return ExperimentResult([
        _summary("oracle_regret_confounded", conf),
        _summary("oracle_regret_experimental", exp),
        _summary("paired_regret_difference", diff),
        EvaluationReport("confounded_win_rate", float(wins.mean()), None, n_reps,
                         {"wins": int(wins.sum()), "ties": int((conf == exp).sum())}),
    ])


# -- proxy target experiment ---------------------------------------------------------

PROXY_METHODS = ("outcome-tree", "causal-tree", "policy-tree")
PROXY_DEFAULT_PARAMS = {
    "outcome-tree": TreeParams(max_depth=4, min_leaf=50),
    "causal-tree": TreeParams(max_depth=4, min_leaf=50),
    "policy-tree": TreeParams(max_depth=4, min_leaf=50),
}


def _resolve_params(learner_params) -> dict:
    if learner_params is None:
        return dict(PROXY_DEFAULT_PARAMS)
    if isinstance(learner_params, TreeParams):
        return {m: learner_params for m in PROXY_METHODS}
    out = dict(PROXY_DEFAULT_PARAMS)
    out.update(learner_params)
    return out


def proxy_scores(train: Dataset, test: Dataset, params: dict) -> dict[str, np.ndarray]:
    """Test-set targeting scores from each of the three approaches."""
    outcome = fit_outcome_tree(train, 0, params["outcome-tree"])
    causal = fit_causal_tree(train, params["causal-tree"])
    policy = fit_policy_tree(to_weighted_classification(train), params["policy-tree"], search="greedy")
    return {
        "outcome-tree": outcome_policy(outcome).score(test.X),
        "causal-tree": threshold_policy(causal).score(test.X),
        "policy-tree": policy.score(test.X),
    }


def run_proxy_experiment(
    data_source: Union[CriteoLikeConfig, Dataset],
    learner_params: Optional[Union[TreeParams, dict]] = None,
    train_sizes: Sequence[int] = (5000,),
    n_reps: int = 30,
    seed: int = 0,
    n_test: int = 100000,
    n_grid: int = 20,
) -> ExperimentResult:
    """AUUC of outcome-based, effect-based and policy-based targeting.

    With a generator config every replication draws a fresh training set
    and a fresh test set. With a loaded dataset each replication takes a
    seeded random training subset and scores the disjoint remainder
    (at most ``n_test`` units of it).
    """
    params = _resolve_params(learner_params)
    if isinstance(data_source, Dataset):
        e = data_source.require_propensity()
        if np.any(e != e[0]):
            raise PreconditionError("the proxy experiment needs randomized data with a constant propensity")
        if max(train_sizes) >= data_source.n:
            raise PreconditionError("train sizes must be smaller than the dataset")

    def one(job):
        size, r = job
        root = seed + r
        if isinstance(data_source, Dataset):
            order = np.random.default_rng(derive_seed(root, size)).permutation(data_source.n)
            train = data_source.subset(np.sort(order[:size]))
            test = data_source.subset(np.sort(order[size:size + n_test]))
        else:
            train = gen_criteo_like_from(replace(data_source, n_samples=size, seed=derive_seed(root, size, 0)))
            test = gen_criteo_like_from(replace(data_source, n_samples=n_test, seed=derive_seed(root, size, 1)))
        scores = proxy_scores(train, test, params)
        curves = {m: uplift_curve(s, test, n_grid) for m, s in scores.items()}
        log.info("proxy rep %d n=%d: %s", r, size,
                 " ".join(f"{m}={auuc(c):.2f}" for m, c in curves.items()))
        return curves

    jobs = [(size, r) for size in train_sizes for r in range(n_reps)]
    results = parallel_map(one, jobs)
    reports, curves = [], {}
    for size in train_sizes:
        for m in PROXY_METHODS:
            vals = []
            for (sz, r), c in zip(jobs, results):
                if sz == size:
                    curves[(m, size, r)] = c[m]
                    vals.append(auuc(c[m]))
            reports.append(_summary(f"auuc/{m}/n={size}", vals, method=m, train_size=size))
    return ExperimentResult(reports, curves)


__all__ = [
    "ScenarioConfig",
    "ScenarioResult",
    "analytic_wrong_prob",
    "run_scenario",
    "bias_scenarios",
    "run_confounding_experiment",
    "run_proxy_experiment",
    "confounding_preset",
    "ExperimentResult",
]
