"""
First-order MAML on top of the federated rounds

Each round a client spends the same gradient budget a plain federated client
would, as a sequence of local meta steps: adapt on each task's support set,
take the query gradient at the adapted point, update. Tasks are drawn from
the client's own samples with incidents layered on. The server aggregates
exactly as in plain federated rounds.
"""
import logging
from dataclasses import dataclass

import numpy as np

import model_core
from federation import (aggregate, client_step_budget, finish_round, init_state, map_clients,
                        round_participants, select_participants, weighted_mean_loss)
from model_core import sgd_step, zeros_like
from traffic_data import sample_task
from utils import derive_seed

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class MetaConfig:
    inner_steps: int = 1
    inner_lr: float = 0.05
    tasks_per_client: int = 1
    support_size: int = 10
    query_size: int = 20

    def __post_init__(self):
        if self.inner_steps < 0:
            raise ValueError(f"inner_steps must be >= 0, got {self.inner_steps}")
        if not self.inner_lr > 0:
            raise ValueError(f"inner_lr must be > 0, got {self.inner_lr}")
        for name in ("tasks_per_client", "support_size", "query_size"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")


def inner_adapt(theta, task, inner_lr, steps, grad_fn=model_core.grad):
    """`steps` full-batch gradient steps on the task's support set"""
    if steps < 0:
        raise ValueError(f"steps must be >= 0, got {steps}")
    for _ in range(steps):
        theta = sgd_step(theta, grad_fn(theta, task.support), inner_lr)
    return theta


def meta_outer_step(theta, tasks, alpha, cfg, grad_fn=model_core.grad, inner_steps=None):
    """
    theta - alpha * sum over tasks of the query gradient at the adapted point.

    `inner_steps` optionally gives each task its own inner step count
    (default: cfg.inner_steps for all).
    """
    if not tasks:
        raise ValueError("task list is empty")
    if alpha < 0:
        raise ValueError(f"alpha must be >= 0, got {alpha}")
    if inner_steps is None:
        inner_steps = [cfg.inner_steps] * len(tasks)
    if len(inner_steps) != len(tasks):
        raise ValueError(f"{len(inner_steps)} inner step counts for {len(tasks)} tasks")
    if alpha == 0:
        return theta
    total = zeros_like(theta)
    for task, steps in zip(tasks, inner_steps):
        adapted = inner_adapt(theta, task, cfg.inner_lr, steps, grad_fn)
        g = grad_fn(adapted, task.query)
        total = model_core.ParamVector(total.values + g.values, theta.arch)
    return sgd_step(theta, total, alpha)


def deploy_adapt(theta_prime, new_task, beta, steps, grad_fn=model_core.grad):
    """Few-shot adaptation on the support set only; the query set is for evaluation"""
    if beta < 0:
        raise ValueError(f"beta must be >= 0, got {beta}")
    if beta == 0:
        return theta_prime
    return inner_adapt(theta_prime, new_task, beta, steps, grad_fn)


def local_meta_schedule(budget, cfg):
    """
    Split a client's per-round gradient budget into local meta steps.

    Each entry lists the inner step counts of one outer step's tasks. A task
    costs its inner steps plus one query gradient; the last task takes fewer
    inner steps when needed so the schedule spends exactly `budget`.
    """
    if budget < 1:
        raise ValueError(f"budget must be >= 1, got {budget}")
    schedule = []
    remaining = budget
    while remaining > 0:
        step = []
        while remaining > 0 and len(step) < cfg.tasks_per_client:
            inner = min(cfg.inner_steps, remaining - 1)
            step.append(inner)
            remaining -= inner + 1
        schedule.append(step)
    return schedule


def schedule_cost(schedule):
    return sum(inner + 1 for step in schedule for inner in step)


class TaskSource:
    """
    Samples training tasks from a client's own data.

    Every task draws an incident rate uniformly from `incident_range` and
    layers incidents on its support and query samples at that rate, so the
    tasks cover calm traffic through incident bursts at that node.
    """

    def __init__(self, spec, meta_cfg, seed, incident_range=(0.0, 0.8)):
        low, high = incident_range
        if not 0.0 <= low <= high <= 1.0:
            raise ValueError(f"incident_range must satisfy 0 <= low <= high <= 1, got {incident_range}")
        self.spec = spec
        self.meta_cfg = meta_cfg
        self.seed = seed
        self.incident_range = (low, high)

    def __call__(self, client, round_index, count):
        rng = np.random.default_rng(derive_seed(self.seed, round_index, client.node_id))
        tasks = []
        for _ in range(count):
            rate = float(rng.uniform(*self.incident_range))
            tasks.append(sample_task(client.samples, self.meta_cfg.support_size,
                                     self.meta_cfg.query_size, rng, rate, self.spec))
        return tasks


def local_meta_training(client, theta, alpha, cfg, budget, task_source, round_index):
    """Run one client's local meta steps; returns (params, gradient steps spent)"""
    schedule = local_meta_schedule(budget, cfg)
    tasks = task_source(client, round_index, sum(len(step) for step in schedule))
    start = 0
    for step in schedule:
        theta = meta_outer_step(theta, tasks[start:start + len(step)], alpha, cfg,
                                inner_steps=step)
        start += len(step)
    return theta, schedule_cost(schedule)


def meta_fed_round(state, meta_cfg, task_source, cost):
    """
    One meta-federated round. The controller still tracks eta from the loss
    reduction, but eta is not used inside the meta step (alpha is constant).
    """
    alpha = state.config.alpha
    participants = select_participants(state)
    clients = [state.clients[i] for i in participants]
    weights = [state.weights[i] for i in participants]
    theta_g = state.global_params
    loss_before, _ = weighted_mean_loss(theta_g, clients, weights)

    def meta_train(client):
        budget = client_step_budget(client, state.config)
        return local_meta_training(client, theta_g, alpha, meta_cfg, budget, task_source,
                                   state.round + 1)

    results = map_clients(meta_train, clients, state.workers)
    new_params = aggregate([params for params, _ in results], weights)
    steps = [spent for _, spent in results]
    return finish_round(state, new_params, participants, loss_before, steps, cost)


def run_meta_training(config, meta_cfg, clients, task_source, cost, seed, workers=1):
    """R meta-federated rounds from a fresh init; returns the final FedState"""
    state = init_state(config, clients, seed, workers=workers)
    for _ in range(config.rounds):
        state = meta_fed_round(state, meta_cfg, task_source, cost)
    return state


def meta_step_count(config, meta_cfg, clients, seed=0):
    """Gradient steps a meta-federated run spends (participant draws replayed)"""
    total = 0
    for r in range(1, config.rounds + 1):
        for i in round_participants(clients, config.client_fraction, seed, r):
            budget = client_step_budget(clients[i], config)
            total += schedule_cost(local_meta_schedule(budget, meta_cfg))
    return total
