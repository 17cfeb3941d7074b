"""Experiment configuration: INI-style files, shipped presets, CLI overrides.

A config is a set of key-value sections: [experiment], [network], [risk],
[drift], [theory], and one [learner:<name>] per learner.  Presets are data
files shipped with the package and selected as `paper:<name>`; flags of the
form section.key=value override any field.
"""

import configparser
import hashlib
import importlib.resources
import os
from dataclasses import dataclass, field

import numpy as np

from . import datasets
from .drift import (
    DatasetStream,
    GaussianPairStream,
    RandomWalkOptimizerStream,
    StaggerStream,
)
from .engine import LearnerSpec, RunPlan
from .errors import ParseError, ValidationError
from .risk import model_from_spec
from .topology import metropolis_weights, network_from_spec, preset_matrices

PRESET_PREFIX = "paper:"


@dataclass(frozen=True)
class LearnerConfig:
    name: str
    variant: str
    step_size: float
    schedule: str = "constant"
    matrix: str = "metropolis"   # metropolis | identity


@dataclass
class ExperimentConfig:
    seed: int
    repetitions: int
    horizon: int
    topology: str
    model_spec: str
    drift_process: str
    learners: list
    label_noise: float = 0.0
    eval_batch: int = 2000
    steady_window: float = 0.5
    metrics: tuple = ("er",)
    roc_ticks: tuple = ()
    threads: int = 1
    output: str = "out"
    base: tuple | None = None
    dim: int | None = None
    feature_scale: float = 1.0
    noise_variance: float = 1.0
    trq: float = 0.0
    data_path: str | None = None
    exact_risk: bool | None = None
    reference: str = "auto"
    reference_window: int = 1
    overlays: tuple = ()
    rv_draws: int = 100_000
    raw_items: tuple = ()

    def content_hash(self) -> str:
        text = "\n".join(f"{k}={v}" for k, v in sorted(self.raw_items))
        return hashlib.sha256(text.encode()).hexdigest()


def preset_path(name: str):
    fname = name.replace(":", "-") + ".cfg"
    ref = importlib.resources.files("netdrift") / "presets" / fname
    if not ref.is_file():
        raise ParseError(f"unknown preset {name!r}")
    return ref


def parse_config(path=None, preset=None, overrides=()) -> ExperimentConfig:
    """Load, override, validate, and resolve a configuration."""
    parser = configparser.ConfigParser()
    if preset is not None:
        with importlib.resources.as_file(preset_path(preset)) as p:
            parser.read(p)
    elif path is not None:
        if not os.path.exists(path):
            raise ParseError(f"config file {path!r} does not exist")
        try:
            parser.read(path)
        except configparser.Error as exc:
            raise ParseError(str(exc)) from exc
    for item in overrides:
        key, sep, value = item.partition("=")
        if not sep or "." not in key:
            raise ParseError(f"override must be section.key=value, got {item!r}")
        section, _, option = key.partition(".")
        if not parser.has_section(section):
            parser.add_section(section)
        parser.set(section, option, value)
    return _resolve(parser)


def _resolve(parser) -> ExperimentConfig:
    def get(section, option, default=None, cast=str):
        if parser.has_option(section, option):
            raw = parser.get(section, option)
            try:
                return cast(raw)
            except ValueError as exc:
                raise ParseError(f"[{section}] {option}: {exc}") from exc
        return default

    def get_list(section, option, default=(), cast=str):
        raw = get(section, option)
        if raw is None:
            return tuple(default)
        return tuple(cast(x.strip()) for x in raw.split(",") if x.strip())

    seed = get("experiment", "seed", cast=int)
    if seed is None:
        raise ValidationError("a master seed is mandatory ([experiment] seed)")
    repetitions = get("experiment", "repetitions", 1, int)
    horizon = get("experiment", "horizon", 1, int)
    if repetitions < 1 or horizon < 1:
        raise ValidationError("repetitions and horizon must be >= 1")

    learners = []
    for section in parser.sections():
        if not section.startswith("learner:"):
            continue
        name = section.split(":", 1)[1]
        variant = get(section, "variant")
        if variant is None:
            raise ValidationError(f"[{section}] needs a variant")
        learners.append(LearnerConfig(
            name=name,
            variant=variant,
            step_size=get(section, "step-size", None, float)
            or _required(section, "step-size"),
            schedule=get(section, "schedule", "constant"),
            matrix=get(section, "matrix", "metropolis"),
        ))
    if not learners:
        raise ValidationError("at least one [learner:<name>] section is required")

    data_path = get("drift", "data-path")
    if data_path is not None and not os.path.exists(data_path):
        raise ValidationError(f"data path {data_path!r} does not exist")

    exact = get("experiment", "exact-risk")
    # output dir and thread count place the run but cannot change results;
    # keep them out of the config identity
    placement = {"experiment.output", "experiment.threads"}
    raw_items = tuple(
        (f"{sec}.{opt}", parser.get(sec, opt))
        for sec in parser.sections() for opt in parser.options(sec)
        if f"{sec}.{opt}" not in placement
    )
    return ExperimentConfig(
        seed=seed,
        repetitions=repetitions,
        horizon=horizon,
        topology=get("network", "topology", "ring:10"),
        model_spec=get("risk", "model", "square"),
        drift_process=get("drift", "process", "rw-opt"),
        learners=learners,
        label_noise=get("drift", "label-noise", 0.0, float),
        eval_batch=get("experiment", "eval-batch", 2000, int),
        steady_window=get("experiment", "steady-window", 0.5, float),
        metrics=get_list("experiment", "metrics", ("er",)),
        roc_ticks=get_list("experiment", "roc-ticks", (), int),
        threads=get("experiment", "threads", 1, int),
        output=get("experiment", "output", "out"),
        base=get_list("drift", "base", (), float) or None,
        dim=get("drift", "dim", None, int),
        feature_scale=get("drift", "feature-scale", 1.0, float),
        noise_variance=get("drift", "noise-variance", 1.0, float),
        trq=get("drift", "trq", 0.0, float),
        data_path=data_path,
        exact_risk=None if exact in (None, "auto") else exact == "on",
        reference=get("experiment", "reference", "auto"),
        reference_window=get("experiment", "reference-window", 1, int),
        overlays=get_list("theory", "overlays", ()),
        rv_draws=get("theory", "rv-draws", 100_000, int),
        raw_items=raw_items,
    )


def _required(section, option):
    raise ValidationError(f"[{section}] needs {option}")


# ---------------------------------------------------------------------------
# resolution into runtime objects
# ---------------------------------------------------------------------------

def resolve_dim(config: ExperimentConfig) -> int:
    name = config.drift_process.split(":")[0]
    if name == "stagger":
        return 3
    if name in ("stationary-gauss2d", "rw-mean"):
        return 2
    if name == "rw-opt":
        if config.base:
            return len(config.base)
        return config.dim or 2
    if name == "dataset":
        if config.data_path is None:
            raise ValidationError(
                "dataset runs need [drift] data-path (data is never downloaded)"
            )
        if config.dim is None:
            raise ValidationError("dataset runs need [drift] dim")
        return config.dim
    raise ValidationError(f"unknown drift process {config.drift_process!r}")


def build_drift_factory(config: ExperimentConfig, n_nodes: int):
    name, _, rest = config.drift_process.partition(":")
    opts = {}
    if rest:
        for item in rest.split(":"):
            key, _, val = item.partition("=")
            opts[key] = val
    dim = resolve_dim(config)
    if name == "stationary-gauss2d":
        return lambda ss: GaussianPairStream(None, n_nodes, config.label_noise, ss)
    if name == "rw-mean":
        cov = float(opts.get("cov", 0.01)) * np.eye(2)
        return lambda ss: GaussianPairStream(cov, n_nodes, config.label_noise, ss)
    if name == "rw-opt":
        trq = float(opts.get("trq", config.trq))
        q = (trq / dim) * np.eye(dim)
        r_h = config.feature_scale * np.eye(dim)
        base = np.ones(dim) if config.base is None else np.asarray(config.base)
        return lambda ss: RandomWalkOptimizerStream(
            base, q, r_h, config.noise_variance, n_nodes, ss)
    if name == "stagger":
        cycle = opts.get("cycle", "false").lower() == "true"
        if not cycle and config.horizon > 120:
            raise ValidationError(
                "stagger runs are capped at 120 ticks unless cycle=true")
        return lambda ss: StaggerStream(n_nodes, config.label_noise, ss, cycle=cycle)
    if name == "dataset":
        features, labels = datasets.load_libsvm(config.data_path, config.dim)
        return lambda ss: DatasetStream(features, labels, n_nodes, ss)
    raise ValidationError(f"unknown drift process {config.drift_process!r}")


def build_plan(config: ExperimentConfig):
    """Resolve a config into (plan, network, model)."""
    network = network_from_spec(config.topology)
    n = network.n_nodes
    dim = resolve_dim(config)
    model = model_from_spec(config.model_spec, dim)
    a = metropolis_weights(network)
    specs = []
    for lc in config.learners:
        mat = np.eye(n) if lc.matrix == "identity" else a
        if lc.variant in ("atc", "cta"):
            comb = preset_matrices(lc.variant, mat)
        elif lc.variant in ("non-cooperative", "noncoop"):
            comb = preset_matrices("non-cooperative", n_nodes=n)
        elif lc.variant == "general-diffusion":
            comb = preset_matrices("atc", mat)
        elif lc.variant == "consensus":
            comb = preset_matrices("cta", mat)
        elif lc.variant in ("cfg", "tha"):
            comb = preset_matrices("non-cooperative", n_nodes=n) \
                if lc.variant == "tha" else None
        else:
            raise ValidationError(f"unknown learner variant {lc.variant!r}")
        variant = "non-cooperative" if lc.variant == "noncoop" else lc.variant
        specs.append(LearnerSpec(
            name=lc.name, variant=variant, step_size=lc.step_size,
            combination=comb, step_schedule=lc.schedule,
        ))
    plan = RunPlan(
        model=model,
        learners=specs,
        drift_factory=build_drift_factory(config, n),
        horizon=config.horizon,
        repetitions=config.repetitions,
        master_seed=config.seed,
        n_nodes=n,
        eval_batch_size=config.eval_batch,
        steady_window=config.steady_window,
        roc_ticks=tuple(config.roc_ticks),
        metrics=tuple(config.metrics),
        exact_risk=config.exact_risk,
        reference=config.reference,
        reference_window=config.reference_window,
        threads=config.threads,
    )
    return plan, network, model
