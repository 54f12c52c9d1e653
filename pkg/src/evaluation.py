"""
Accuracy and response-time metrics, the centralized baseline, and the
three-way comparison (Centralized vs StandardFL vs MetaFL) across regimes
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np
import pandas as pd

from federation import federated_step_budget, run_federated, steps_per_epoch, steps_spent
from meta import TaskSource, run_meta_training
from model_core import ModelArch, batch_arrays, grad, init_params, predict, sgd_step
from simnet import compute_time, transmit
from traffic_data import (FEATURE_COLUMNS, Regime, gen_all_nodes, make_task,
                          partition_noniid, pooled, shifted)
from utils import derive_seed

logger = logging.getLogger(__name__)

REPORT_COLUMNS = ["variant", "regime", "seed", "accuracy", "response_time_s", "steps_to_threshold"]

# Little-endian float64 features plus label per uploaded sample
SUPPORT_SAMPLE_BYTES = 8 * (len(FEATURE_COLUMNS) + 1)

_PARTITION_STREAM = 11
_HOLDOUT_STREAM = 12
_SHIFT_STREAM = 13
_TASKS_STREAM = 14


class Variant(Enum):
    CENTRALIZED = "Centralized"
    STANDARD_FL = "StandardFL"
    META_FL = "MetaFL"


VARIANT_ORDER = list(Variant)
REGIME_ORDER = list(Regime)


@dataclass(frozen=True)
class ComparisonConfig:
    variants: tuple = tuple(Variant)
    regimes: tuple = tuple(Regime)
    adapt_steps: int = 5
    shift_incident_rate: float = 0.8
    shift_support_size: int = 20
    shift_query_size: int = 200
    holdout_size: int = 200
    threshold_fraction: float = 0.8
    max_adapt_steps: int = 100
    task_incident_range: tuple = (0.0, 0.8)

    def __post_init__(self):
        object.__setattr__(self, "variants", tuple(Variant(v) for v in self.variants))
        object.__setattr__(self, "regimes", tuple(Regime(r) for r in self.regimes))
        object.__setattr__(self, "task_incident_range", tuple(self.task_incident_range))
        if not self.variants or not self.regimes:
            raise ValueError("variants and regimes must be non-empty")
        if len(set(self.variants)) != len(self.variants) or len(set(self.regimes)) != len(self.regimes):
            raise ValueError("variants and regimes must not repeat")
        if not 0.0 <= self.shift_incident_rate <= 1.0:
            raise ValueError(f"shift_incident_rate must be in [0, 1], got {self.shift_incident_rate}")
        if not 0.0 < self.threshold_fraction <= 1.0:
            raise ValueError(f"threshold_fraction must be in (0, 1], got {self.threshold_fraction}")
        for name in ("shift_support_size", "shift_query_size", "holdout_size"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.adapt_steps < 0 or self.max_adapt_steps < 0:
            raise ValueError("adapt_steps and max_adapt_steps must be >= 0")
        if len(self.task_incident_range) != 2:
            raise ValueError("task_incident_range must be a [low, high] pair")


@dataclass(frozen=True)
class AdaptationTrace:
    """What happened after a regime shift for one trained model"""
    variant: Variant
    pre_shift_accuracy: float
    accuracy_curve: list  # query accuracy after 0, 1, 2, ... adaptation steps
    steps_to_threshold: int
    param_bytes: int
    support_bytes: int


@dataclass(frozen=True)
class CellResult:
    variant: Variant
    regime: Regime
    seed: int
    accuracy: float
    response_time_s: float
    steps_to_threshold: int
    pre_shift_accuracy: float = float("nan")

    @property
    def key(self):
        return (VARIANT_ORDER.index(self.variant), REGIME_ORDER.index(self.regime), self.seed)


@dataclass
class ComparisonReport:
    cells: list
    seeds: list
    variants: tuple = tuple(Variant)
    regimes: tuple = tuple(Regime)
    step_budgets: dict = field(default_factory=dict)

    def check_complete(self):
        have = {(c.variant, c.regime, c.seed) for c in self.cells}
        missing = [(v.value, r.value, s) for v in self.variants for r in self.regimes
                   for s in self.seeds if (v, r, s) not in have]
        if missing:
            raise RuntimeError(f"comparison report is missing cells: {missing}")
        for c in self.cells:
            if not 0.0 <= c.accuracy <= 1.0:
                raise RuntimeError(f"accuracy out of range in cell {c}")

    def to_frame(self):
        cells = sorted(self.cells, key=lambda c: c.key)
        return pd.DataFrame(
            [[c.variant.value, c.regime.value, c.seed, c.accuracy, c.response_time_s,
              c.steps_to_threshold] for c in cells],
            columns=REPORT_COLUMNS,
        )


def accuracy(theta, data):
    """Fraction of samples whose argmax class (lowest index on ties) matches the label"""
    X, y = batch_arrays(data)
    return float(np.mean(predict(theta, X) == y))


def centralized_sgd(pool, config, seed, step_budget=None, arch=None):
    """
    Plain mini-batch SGD on the pooled data at rate eta0.

    Runs exactly `step_budget` steps (default: rounds * local_epochs epochs
    worth), cutting the last epoch short if needed. Returns (params, steps).
    """
    X, y = batch_arrays(pool)
    n = y.shape[0]
    if step_budget is None:
        step_budget = config.rounds * config.local_epochs * steps_per_epoch(n, config.batch_size)
    if arch is None:
        arch = ModelArch(input_dim=X.shape[1], hidden_width=config.hidden_width)
    theta = init_params(arch, seed)
    rng = np.random.default_rng(seed)
    steps = 0
    while steps < step_budget:
        order = rng.permutation(n)
        for start in range(0, n, config.batch_size):
            if steps >= step_budget:
                break
            idx = order[start:start + config.batch_size]
            theta = sgd_step(theta, grad(theta, (X[idx], y[idx])), config.eta0)
            steps += 1
    return theta, steps


def train_centralized(pool, config, seed, step_budget=None):
    return centralized_sgd(pool, config, seed, step_budget)[0]


def adaptation_trace(variant, theta, task, beta, pre_shift_accuracy, comparison):
    """
    Adapt on the support set one step at a time, tracking query accuracy,
    until both the reporting step count and the threshold search are done.
    """
    threshold = comparison.threshold_fraction * pre_shift_accuracy
    support = batch_arrays(task.support)
    curve = [accuracy(theta, task.query)]
    steps_to_threshold = 0 if curve[0] >= threshold else None
    step = 0
    while step < comparison.max_adapt_steps and (
            steps_to_threshold is None or step < comparison.adapt_steps):
        if beta > 0:
            theta = sgd_step(theta, grad(theta, support), beta)
        step += 1
        curve.append(accuracy(theta, task.query))
        if steps_to_threshold is None and curve[-1] >= threshold:
            steps_to_threshold = step
    if steps_to_threshold is None:
        steps_to_threshold = comparison.max_adapt_steps
    return AdaptationTrace(
        variant=variant,
        pre_shift_accuracy=pre_shift_accuracy,
        accuracy_curve=curve,
        steps_to_threshold=steps_to_threshold,
        param_bytes=len(theta.to_bytes()),
        support_bytes=SUPPORT_SAMPLE_BYTES * len(task.support),
    )


def accuracy_after(trace, steps):
    """Query accuracy after `steps` adaptation steps (last tracked value if beyond)"""
    return trace.accuracy_curve[min(steps, len(trace.accuracy_curve) - 1)]


def response_time(variant, cost, trace):
    """
    Simulated seconds from the shift until the adapted model is back above
    threshold: model push plus adaptation compute; the centralized server
    must first receive the new support data.
    """
    seconds = transmit(cost, trace.param_bytes) + compute_time(cost, trace.steps_to_threshold)
    if Variant(variant) is Variant.CENTRALIZED:
        seconds += transmit(cost, trace.support_bytes)
    return seconds


def _train_variant(variant, config, scenario, clients, seed):
    """Train one variant; returns (params, gradient steps actually spent)"""
    hyper = config.hyper
    if variant is Variant.CENTRALIZED:
        budget = federated_step_budget(clients, hyper, seed)
        return centralized_sgd(pooled(clients), hyper, seed, budget)
    if variant is Variant.STANDARD_FL:
        state = run_federated(hyper, clients, config.cost, seed)
    else:
        source = meta_task_source(config, scenario, seed)
        state = run_meta_training(hyper, config.meta, clients, source, config.cost, seed)
    return state.global_params, steps_spent(state.history)


def check_step_parity(variant, steps, budget):
    if steps != budget:
        raise RuntimeError(f"step-budget parity violated: {Variant(variant).value} spent {steps} "
                           f"gradient steps, federated budget is {budget}")


def meta_task_source(config, scenario, seed):
    return TaskSource(scenario, config.meta, derive_seed(seed, _TASKS_STREAM),
                      config.comparison.task_incident_range)


def build_clients(config, scenario, seed):
    """Node streams as clients, or a Dirichlet re-partition when partition_skew is set"""
    clients = gen_all_nodes(scenario, seed)
    if config.partition_skew is not None:
        clients = partition_noniid(pooled(clients), scenario.num_nodes, config.partition_skew,
                                   derive_seed(seed, _PARTITION_STREAM))
    return clients


def run_cell(config, regime, seed):
    """All configured variants for one (regime, seed) pair"""
    comparison = config.comparison
    scenario = replace(config.scenario, density_regime=regime)

    clients = build_clients(config, scenario, seed)
    holdout = make_task(scenario, 1, comparison.holdout_size, derive_seed(seed, _HOLDOUT_STREAM)).query
    shift_task = make_task(shifted(scenario, comparison.shift_incident_rate),
                           comparison.shift_support_size, comparison.shift_query_size,
                           derive_seed(seed, _SHIFT_STREAM))
    budget = federated_step_budget(clients, config.hyper, seed)

    results = []
    for variant in comparison.variants:
        theta, steps = _train_variant(variant, config, scenario, clients, seed)
        check_step_parity(variant, steps, budget)
        pre_acc = accuracy(theta, holdout)
        trace = adaptation_trace(variant, theta, shift_task, config.hyper.beta, pre_acc, comparison)
        cell = CellResult(
            variant=variant,
            regime=regime,
            seed=seed,
            accuracy=accuracy_after(trace, comparison.adapt_steps),
            response_time_s=response_time(variant, config.cost, trace),
            steps_to_threshold=trace.steps_to_threshold,
            pre_shift_accuracy=pre_acc,
        )
        logger.info("%s / %s / seed %d: pre %.3f, post %.3f, %d steps to threshold",
                    variant.value, regime.value, seed, pre_acc, cell.accuracy,
                    cell.steps_to_threshold)
        results.append(cell)
    return results, budget


def run_comparison(config):
    """Every variant x regime x seed cell; deterministic given the seed list"""
    comparison = config.comparison
    jobs = [(regime, seed) for regime in comparison.regimes for seed in config.seeds]

    def work(job):
        return run_cell(config, *job)

    if config.workers > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            outputs = list(pool.map(work, jobs))
    else:
        outputs = [work(job) for job in jobs]

    cells = [cell for cell_list, _ in outputs for cell in cell_list]
    budgets = {f"{regime.value}/{seed}": budget for (regime, seed), (_, budget) in zip(jobs, outputs)}
    report = ComparisonReport(
        cells=sorted(cells, key=lambda c: c.key),
        seeds=list(config.seeds),
        variants=comparison.variants,
        regimes=comparison.regimes,
        step_budgets=budgets,
    )
    report.check_complete()
    return report
