"""
Experiment configuration: one JSON document, nested sections, strict keys

Missing keys fall back to config/defaults.py; unknown keys and invalid values
raise ConfigError naming the dotted field path.
"""
import copy
import dataclasses
import json
from dataclasses import dataclass
from enum import Enum

from config.defaults import DEFAULT_EXPERIMENT, SECTIONS
from controller import ControllerConfig
from evaluation import ComparisonConfig, Variant
from federation import HyperParams, WeightScheme
from meta import MetaConfig
from simnet import CostModel
from traffic_data import Regime, ScenarioSpec


class ConfigError(ValueError):
    """Invalid experiment configuration (CLI exit code 2)"""


TRAIN_MODES = ("centralized", "fedavg", "metafl")


@dataclass(frozen=True)
class ExperimentConfig:
    scenario: ScenarioSpec
    hyper: HyperParams
    meta: MetaConfig
    cost: CostModel
    controller: ControllerConfig
    comparison: ComparisonConfig
    seeds: tuple
    partition_skew: float = None
    workers: int = 1
    output_dir: str = "./outputs"
    train_mode: str = "metafl"
    train_data: str = None


# section -> (type, {field: enum type})
_SECTION_TYPES = {
    "scenario": (ScenarioSpec, {"density_regime": Regime}),
    "hyper": (HyperParams, {"weight_scheme": WeightScheme}),
    "meta": (MetaConfig, {}),
    "cost": (CostModel, {}),
    "controller": (ControllerConfig, {}),
    "comparison": (ComparisonConfig, {}),
}
_TOP_LEVEL = ("seeds", "partition_skew", "workers", "output_dir", "train_mode", "train_data")


def _merge(document):
    if not isinstance(document, dict):
        raise ConfigError("config must be a JSON object")
    merged = copy.deepcopy(DEFAULT_EXPERIMENT)
    for key, value in document.items():
        if key in SECTIONS:
            if not isinstance(value, dict):
                raise ConfigError(f"{key} must be an object")
            for sub_key, sub_value in value.items():
                if sub_key not in merged[key]:
                    raise ConfigError(f"{key}.{sub_key} is not a known setting")
                merged[key][sub_key] = sub_value
        elif key in _TOP_LEVEL:
            merged[key] = value
        else:
            raise ConfigError(f"{key} is not a known setting")
    return merged


def _enum(enum_type, value, path):
    try:
        return enum_type(value)
    except ValueError:
        allowed = ", ".join(e.value for e in enum_type)
        raise ConfigError(f"{path} must be one of {allowed}, got {value!r}") from None


def _build_section(name, values, **extra):
    cls, enums = _SECTION_TYPES[name]
    kwargs = dict(values)
    for field_name, enum_type in enums.items():
        kwargs[field_name] = _enum(enum_type, kwargs[field_name], f"{name}.{field_name}")
    if name == "comparison":
        kwargs["variants"] = tuple(_enum(Variant, v, "comparison.variants") for v in kwargs["variants"])
        kwargs["regimes"] = tuple(_enum(Regime, r, "comparison.regimes") for r in kwargs["regimes"])
    try:
        return cls(**kwargs, **extra)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{name}.{e}") from None


def _check_seeds(seeds):
    if not isinstance(seeds, (list, tuple)) or not seeds:
        raise ConfigError("seeds must be a non-empty list of integers")
    if any(not isinstance(s, int) or isinstance(s, bool) or s < 0 for s in seeds):
        raise ConfigError(f"seeds must be non-negative integers, got {seeds}")
    if len(set(seeds)) != len(seeds):
        raise ConfigError(f"seeds must be distinct, got {seeds}")
    return tuple(seeds)


def config_from_dict(document, seed=None, output_dir=None, train_mode=None, train_data=None):
    """Resolve a (partial) config document; keyword arguments that are set override it"""
    merged = _merge(document)
    overrides = {"output_dir": output_dir, "train_mode": train_mode, "train_data": train_data}
    if seed is not None:
        merged["seeds"] = [seed]
    merged.update({k: v for k, v in overrides.items() if v is not None})

    controller = _build_section("controller", merged["controller"])
    skew = merged["partition_skew"]
    if skew is not None and (not isinstance(skew, (int, float)) or skew < 0):
        raise ConfigError(f"partition_skew must be null or >= 0, got {skew!r}")
    workers = merged["workers"]
    if not isinstance(workers, int) or workers < 1:
        raise ConfigError(f"workers must be a positive integer, got {workers!r}")
    if merged["train_mode"] not in TRAIN_MODES:
        raise ConfigError(f"train_mode must be one of {', '.join(TRAIN_MODES)}, got {merged['train_mode']!r}")
    train_data = merged["train_data"]
    if train_data is not None and not isinstance(train_data, str):
        raise ConfigError(f"train_data must be null or a path, got {train_data!r}")

    return ExperimentConfig(
        scenario=_build_section("scenario", merged["scenario"]),
        hyper=_build_section("hyper", merged["hyper"], controller=controller),
        meta=_build_section("meta", merged["meta"]),
        cost=_build_section("cost", merged["cost"]),
        controller=controller,
        comparison=_build_section("comparison", merged["comparison"]),
        seeds=_check_seeds(merged["seeds"]),
        partition_skew=skew,
        workers=workers,
        output_dir=str(merged["output_dir"]),
        train_mode=merged["train_mode"],
        train_data=train_data,
    )


def load_config(path=None, seed=None, output_dir=None, train_mode=None, train_data=None):
    document = {}
    if path is not None:
        try:
            with open(path) as f:
                document = json.load(f)
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path} is not valid JSON: {e}") from None
    return config_from_dict(document, seed=seed, output_dir=output_dir,
                            train_mode=train_mode, train_data=train_data)


def _plain(value):
    if isinstance(value, Enum):
        return value.value
    if dataclasses.is_dataclass(value):
        return {f.name: _plain(getattr(value, f.name)) for f in dataclasses.fields(value)}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    return value


def config_to_dict(config):
    """The resolved document; loading it back yields an equal config"""
    document = _plain(config)
    del document["hyper"]["controller"]
    return document
