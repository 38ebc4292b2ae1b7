"""``cdm`` command line: gen, train, eval, simulate, experiment.

Every command reads a JSON config (unknown keys are rejected), writes its
artifacts, prints JSON on stdout and logs to stderr. Exit codes:
0 success, 2 config error, 3 I/O error, 4 method precondition failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path
from typing import Annotated, Literal, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, TypeAdapter, ValidationError, model_validator

from . import __version__
from .core import CdmError, Dataset, EffectModel, OutcomeModel, Policy, PreconditionError, outcome_policy, threshold_policy
from .evaluate import (
    EvaluationReport,
    auuc,
    decision_error_rate,
    effect_mse,
    ips_policy_value,
    oracle_regret,
    true_effect_mse,
    uplift_curve,
)
from .ingest import CsvSchema, IngestError, kfold, read_csv, write_csv
from .reduction import fit_policy_tree, to_weighted_classification
from .sim import (
    CONFOUNDING_DEFAULT_PARAMS,
    PROXY_METHODS,
    ScenarioConfig,
    confounding_preset,
    bias_scenarios,
    run_confounding_experiment,
    run_proxy_experiment,
    run_scenario,
)
from .synth import CriteoLikeConfig, DgpConfig, gen_criteo_like_from, generate, oracle_ate
from .trees import TreeParams, fit_causal_tree, fit_outcome_tree, fit_two_model, load_model, save_model

log = logging.getLogger("cdm")

REPORT_FORMAT = "cdm-report/1"
EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_PRECONDITION = 0, 2, 3, 4
TUNING_GRID = [TreeParams(max_depth=d, min_leaf=m) for d in (3, 5, 7) for m in (100, 1000)]


class ConfigError(CdmError):
    pass


# -- config models --------------------------------------------------------------------


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", populate_by_name=True)


class TreeParamsModel(_Strict):
    max_depth: int = Field(3, ge=0)
    min_leaf: int = Field(1, ge=1)
    min_split_gain: float = Field(0.0, ge=0.0)
    honest: bool = False
    seed: int = 0

    def build(self) -> TreeParams:
        return TreeParams(**self.model_dump())


class SchemaModel(_Strict):
    feature_columns: list[str]
    treatment_column: str = "treatment"
    outcome_column: str = "outcome"
    propensity_column: Optional[str] = None
    constant_propensity: Optional[float] = None
    load_oracle: bool = True

    def build(self) -> CsvSchema:
        return CsvSchema(**self.model_dump())


class DgpModel(_Strict):
    n_samples: int = Field(ge=1)
    n_features: int = Field(ge=1)
    baseline_coefs: list[float]
    effect_coefs: list[float]
    baseline_intercept: float = 0.0
    effect_intercept: float = 0.0
    effect_shape: Literal["linear", "step"] = "linear"
    outcome_noise_sd: float = 1.0
    outcome_kind: Literal["continuous", "bernoulli"] = "continuous"
    propensity: float = 0.5
    confounding_strength: float = 0.0
    confounding_direction: Literal["opposing", "reinforcing"] = "reinforcing"
    hide_propensity: bool = False
    seed: int


class CriteoModel(_Strict):
    n_samples: int = Field(10000, ge=1)
    treat_rate: float = 0.85
    outcome_snr: float = 0.15
    effect_snr: float = 0.05
    effect_outcome_corr: float = 0.9
    base_rate: float = 0.1
    mean_effect: float = 0.02
    seed: int


class GenConfig(_Strict):
    kind: Literal["rct", "confounded", "criteo_like"]
    dgp: Optional[DgpModel] = None
    criteo: Optional[CriteoModel] = None
    output: str
    include_oracle: bool = False

    @model_validator(mode="after")
    def _one_source(self):
        need = "criteo" if self.kind == "criteo_like" else "dgp"
        if getattr(self, need) is None:
            raise ValueError(f"kind {self.kind!r} needs a {need!r} section")
        return self


Method = Literal["outcome-tree", "causal-tree", "two-model", "policy-tree"]


class TrainConfig(_Strict):
    input: str
    data_schema: Optional[SchemaModel] = Field(None, alias="schema")
    method: Method
    params: Optional[TreeParamsModel] = None
    arm: Optional[Literal[0, 1]] = None
    tune: bool = False
    cv_folds: int = Field(3, ge=2)
    seed: int = 0
    output: str


Metric = Literal["effect-mse", "true-effect-mse", "oracle-regret", "ips-value", "uplift-curve", "auuc", "decision-error"]


class EvalConfig(_Strict):
    model: str
    test: str
    data_schema: Optional[SchemaModel] = Field(None, alias="schema")
    metrics: list[Metric] = Field(min_length=1)
    tau: float = 0.0
    n_grid: int = Field(20, ge=1)
    curve_output: str = "uplift_curve.csv"


class ScenarioModel(_Strict):
    name: str = ""
    true_effect: float = 1.0
    tau: float = 0.0
    bm_mean: float
    bm_sd: float = Field(0.35, gt=0)
    um_mean: float = 1.0
    um_sd: float = Field(0.7, gt=0)
    n_draws: int = Field(100000, ge=1)
    seed: int


class SimulateConfig(_Strict):
    scenarios: Optional[list[ScenarioModel]] = None
    # used when scenarios is omitted: the three default bias panels
    n_draws: int = Field(100000, ge=1)
    seed: Optional[int] = None

    @model_validator(mode="after")
    def _seeded(self):
        if self.scenarios is None and self.seed is None:
            raise ValueError("seed is required when scenarios are not listed")
        return self


class ConfoundingExperimentConfig(_Strict):
    kind: Literal["confounding"]
    seed: int
    n_reps: int = Field(50, ge=1)
    preset: Optional[Literal["reinforcing", "opposing"]] = None
    dgp: Optional[DgpModel] = None
    n_confounded: int = Field(ge=1)
    n_experimental: int = Field(ge=1)
    n_test: int = Field(50000, ge=1)
    method: Literal["causal-tree", "two-model"] = "causal-tree"
    tau: float = 0.0
    learner_params: Optional[TreeParamsModel] = None

    @model_validator(mode="after")
    def _one_dgp(self):
        if (self.preset is None) == (self.dgp is None):
            raise ValueError("give exactly one of 'preset' or 'dgp'")
        return self


class ProxyExperimentConfig(_Strict):
    kind: Literal["proxy"]
    seed: int
    n_reps: int = Field(30, ge=1)
    generator: Optional[CriteoModel] = None
    data: Optional[str] = None
    data_schema: Optional[SchemaModel] = Field(None, alias="schema")
    train_sizes: list[int] = Field(min_length=1)
    n_test: int = Field(100000, ge=1)
    n_grid: int = Field(20, ge=1)
    learner_params: Optional[dict[Literal["outcome-tree", "causal-tree", "policy-tree"], TreeParamsModel]] = None

    @model_validator(mode="after")
    def _one_source(self):
        if (self.generator is None) == (self.data is None):
            raise ValueError("give exactly one of 'generator' or 'data'")
        return self


ExperimentConfig = TypeAdapter(
    Annotated[Union[ConfoundingExperimentConfig, ProxyExperimentConfig], Field(discriminator="kind")]
)


# -- helpers --------------------------------------------------------------------------


class Context:
    def __init__(self, config_path: Path, out: Optional[str], skip_bad_rows: bool, schema_path: Optional[str]):
        self.config_path = config_path
        self.base = config_path.parent
        self.out = Path(out) if out else self.base
        self.out_given = out is not None
        self.skip_bad_rows = skip_bad_rows
        self.schema_path = schema_path

    def input(self, p: str) -> Path:
        p = Path(p)
        return p if p.is_absolute() else self.base / p

    def output(self, p: str) -> Path:
        p = Path(p)
        path = p if p.is_absolute() else self.out / p
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise IngestError(f"cannot create {path.parent}: {exc.strerror}") from exc
        return path

    def schema(self, inline: Optional[SchemaModel]) -> Optional[CsvSchema]:
        if self.schema_path:
            try:
                return CsvSchema.from_json(self.schema_path)
            except OSError as exc:
                raise ConfigError(f"cannot read schema {self.schema_path}: {exc.strerror}") from exc
            except (ValueError, TypeError) as exc:
                raise ConfigError(f"invalid schema {self.schema_path}: {exc}") from exc
        return inline.build() if inline is not None else None

    def load(self, path: str, inline_schema: Optional[SchemaModel]) -> tuple[Dataset, int]:
        return read_csv(self.input(path), self.schema(inline_schema), self.skip_bad_rows)


def _load_config(path: Path, model):
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    try:
        if isinstance(model, TypeAdapter):
            return model.validate_python(raw)
        return model.model_validate(raw)
    except ValidationError as exc:
        raise ConfigError(f"invalid config {path}:\n{exc}") from exc


def _emit(doc) -> None:
    sys.stdout.write(json.dumps(doc, indent=1) + "\n")
    sys.stdout.flush()


def _write_json(path: Path, doc) -> None:
    try:
        path.write_text(json.dumps(doc, indent=1) + "\n", encoding="utf-8")
    except OSError as exc:
        raise IngestError(f"cannot write {path}: {exc.strerror}") from exc


def _report_doc(command: str, config: BaseModel, reports: list[EvaluationReport], **extra) -> dict:
    return {
        "format": REPORT_FORMAT,
        "version": __version__,
        "command": command,
        "config": config.model_dump(mode="json", by_alias=True),
        **extra,
        "reports": [r.to_dict() for r in reports],
    }


# -- commands ---------------------------------------------------------------------


def cmd_gen(cfg: GenConfig, ctx: Context) -> int:
    try:
        if cfg.kind == "criteo_like":
            ds = gen_criteo_like_from(CriteoLikeConfig(**cfg.criteo.model_dump()))
        else:
            dgp = DgpConfig(**cfg.dgp.model_dump())
            if (cfg.kind == "rct") != (dgp.confounding_strength == 0.0):
                raise PreconditionError(f"kind {cfg.kind!r} does not match confounding_strength={dgp.confounding_strength}")
            ds = generate(dgp)
    except PreconditionError as exc:
        raise ConfigError(str(exc)) from exc
    path = ctx.output(cfg.output)
    write_csv(ds, path, include_oracle=cfg.include_oracle)
    log.info("wrote %d rows to %s", ds.n, path)
    _emit({
        "path": str(path),
        "n": ds.n,
        "n_features": ds.n_features,
        "treated_fraction": ds.treated_fraction,
        "oracle_ate": oracle_ate(ds),
    })
    return EXIT_OK


def _fit(method: str, train: Dataset, params: TreeParams, arm: Optional[int]):
    if method == "outcome-tree":
        return fit_outcome_tree(train, arm, params)
    if method == "causal-tree":
        return fit_causal_tree(train, params)
    if method == "two-model":
        return fit_two_model(train, params)
    return fit_policy_tree(to_weighted_classification(train), params)


def _train_metric(method: str, model, data: Dataset, arm: Optional[int]) -> EvaluationReport:
    """Held-out or training fit score; lower is better except for ips_value."""
    if method == "outcome-tree":
        d = data if arm is None else data.subset(data.treatment == arm)
        err = (d.outcome - model.predict_outcome(d.X)) ** 2
        return EvaluationReport("outcome_mse", float(err.mean()), None, d.n)
    if method == "policy-tree":
        return ips_policy_value(model, data)
    return effect_mse(model, data)


def _tune(cfg: TrainConfig, data: Dataset) -> TreeParams:
    best = None
    for params in TUNING_GRID:
        try:
            scores = []
            for train, test in kfold(data, cfg.cv_folds, cfg.seed):
                model = _fit(cfg.method, train, params, cfg.arm)
                scores.append(_train_metric(cfg.method, model, test, cfg.arm).value)
        except PreconditionError as exc:
            log.info("tuning: skip %s (%s)", params, exc)
            continue
        score = float(np.mean(scores))
        if cfg.method == "policy-tree":
            score = -score
        log.info("tuning: max_depth=%d min_leaf=%d cv=%.6g", params.max_depth, params.min_leaf, score)
        if best is None or score < best[0]:
            best = (score, params)
    if best is None:
        raise PreconditionError("no tuning grid point can be fitted on this data")
    return best[1]


def cmd_train(cfg: TrainConfig, ctx: Context) -> int:
    data, skipped = ctx.load(cfg.input, cfg.data_schema)
    if cfg.tune:
        params = _tune(cfg, data)
    else:
        params = cfg.params.build() if cfg.params else TreeParams()
    model = _fit(cfg.method, data, params, cfg.arm)
    path = ctx.output(cfg.output)
    try:
        save_model(model, path)
    except OSError as exc:
        raise IngestError(f"cannot write {path}: {exc.strerror}") from exc
    _emit({
        "method": cfg.method,
        "kind": model.kind,
        "model_path": str(path),
        "n_train": data.n,
        "skipped_rows": skipped,
        "params": asdict(params),
        "depth": model.depth,
        "train_metric": _train_metric(cfg.method, model, data, cfg.arm).to_dict(),
    })
    return EXIT_OK


def _policy_for(model, tau: float) -> Policy:
    if isinstance(model, EffectModel):
        return threshold_policy(model, tau)
    if isinstance(model, OutcomeModel):
        return outcome_policy(model, tau)
    return model


def cmd_eval(cfg: EvalConfig, ctx: Context) -> int:
    try:
        model = load_model(ctx.input(cfg.model))
    except OSError as exc:
        raise IngestError(f"cannot read model {cfg.model}: {exc.strerror}") from exc
    except (ValueError, KeyError) as exc:
        raise IngestError(f"malformed model file {cfg.model}: {exc}") from exc
    test, skipped = ctx.load(cfg.test, cfg.data_schema)
    if test.n_features != model.n_features:
        raise PreconditionError(f"model expects {model.n_features} features, test data has {test.n_features}")
    policy = _policy_for(model, cfg.tau)
    reports = []
    curve = None
    for metric in cfg.metrics:
        if metric in ("effect-mse", "true-effect-mse"):
            if not isinstance(model, EffectModel):
                raise PreconditionError(f"{metric} needs an effect model, got {model.kind!r}")
            reports.append((effect_mse if metric == "effect-mse" else true_effect_mse)(model, test))
        elif metric == "oracle-regret":
            reports.append(oracle_regret(policy, test))
        elif metric == "ips-value":
            reports.append(ips_policy_value(policy, test))
        elif metric == "decision-error":
            reports.append(decision_error_rate(policy, test))
        else:
            if curve is None:
                curve = uplift_curve(policy.score(test.X), test, cfg.n_grid)
            if metric == "auuc":
                reports.append(EvaluationReport("auuc", auuc(curve), None, test.n))
            else:
                path = ctx.output(cfg.curve_output)
                try:
                    curve.to_csv(path)
                except OSError as exc:
                    raise IngestError(f"cannot write {path}: {exc.strerror}") from exc
                reports.append(EvaluationReport("uplift_curve", auuc(curve), None, test.n,
                                                {"csv": str(path), **curve.metadata}))
    _emit(_report_doc("eval", cfg, reports, skipped_rows=skipped))
    return EXIT_OK


def cmd_simulate(cfg: SimulateConfig, ctx: Context) -> int:
    if cfg.scenarios is None:
        scenarios = bias_scenarios(cfg.n_draws, cfg.seed)
    else:
        scenarios = [ScenarioConfig(**s.model_dump()) for s in cfg.scenarios]
    results = [run_scenario(s) for s in scenarios]
    doc = {
        "format": REPORT_FORMAT,
        "version": __version__,
        "command": "simulate",
        "config": cfg.model_dump(mode="json"),
        "results": [dict(r.to_dict(), config=asdict(s)) for s, r in zip(scenarios, results)],
    }
    if ctx.out_given:
        for k, r in enumerate(doc["results"]):
            _write_json(ctx.output(f"scenario_{k}.json"), r)
    _emit(doc)
    return EXIT_OK


def cmd_experiment(cfg, ctx: Context) -> int:
    if isinstance(cfg, ConfoundingExperimentConfig):
        if cfg.preset is not None:
            dgp = confounding_preset(cfg.preset)
        else:
            try:
                dgp = DgpConfig(**cfg.dgp.model_dump())
            except PreconditionError as exc:
                raise ConfigError(str(exc)) from exc
        params = cfg.learner_params.build() if cfg.learner_params else CONFOUNDING_DEFAULT_PARAMS
        result = run_confounding_experiment(dgp, cfg.n_confounded, cfg.n_experimental, params, cfg.n_reps,
                                            cfg.seed, cfg.n_test, cfg.method, cfg.tau)
        doc = _report_doc("experiment", cfg, result.reports, dgp=asdict(dgp), learner_params=asdict(params))
    else:
        if cfg.generator is not None:
            source = CriteoLikeConfig(**cfg.generator.model_dump())
        else:
            source, _ = ctx.load(cfg.data, cfg.data_schema)
        params = {m: p.build() for m, p in (cfg.learner_params or {}).items()} or None
        result = run_proxy_experiment(source, params, cfg.train_sizes, cfg.n_reps, cfg.seed, cfg.n_test, cfg.n_grid)
        curve_files = []
        for (method, size, rep), curve in result.curves.items():
            name = f"curves/{method}_n{size}_rep{rep}.csv"
            path = ctx.output(name)
            try:
                curve.to_csv(path)
            except OSError as exc:
                raise IngestError(f"cannot write {path}: {exc.strerror}") from exc
            curve_files.append(name)
        doc = _report_doc("experiment", cfg, result.reports, methods=list(PROXY_METHODS), curve_files=curve_files)
    _write_json(ctx.output("report.json"), doc)
    _emit(doc)
    return EXIT_OK


COMMANDS = {
    "gen": (GenConfig, cmd_gen),
    "train": (TrainConfig, cmd_train),
    "eval": (EvalConfig, cmd_eval),
    "simulate": (SimulateConfig, cmd_simulate),
    "experiment": (ExperimentConfig, cmd_experiment),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cdm", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"cdm {__version__}")
    parser.add_argument("-q", "--quiet", action="store_true", help="only log warnings")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="JSON config file")
        p.add_argument("--out", help="output directory (default: the config's directory)")
        p.add_argument("--skip-bad-rows", action="store_true", help="drop and count malformed CSV rows")
        p.add_argument("--schema", help="JSON CSV schema, overrides any schema in the config")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    model, fn = COMMANDS[args.command]
    ctx = Context(Path(args.config), args.out, args.skip_bad_rows, args.schema)
    try:
        cfg = _load_config(ctx.config_path, model)
        return fn(cfg, ctx)
    except ConfigError as exc:
        log.error("%s", exc)
        return EXIT_CONFIG
    except IngestError as exc:
        log.error("%s", exc)
        return EXIT_IO
    except PreconditionError as exc:
        log.error("%s", exc)
        return EXIT_PRECONDITION
    except OSError as exc:
        log.error("%s", exc)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
