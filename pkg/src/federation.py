"""
Round-based federated training: broadcast, local SGD, weighted aggregation,
learning-rate control, audit trail
"""
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np
import pandas as pd

from controller import ControllerConfig, LearningRateController
from model_core import ModelArch, ParamVector, grad, init_params, loss, sgd_step
from simnet import SimNetwork
from utils import FLOAT_FORMAT, derive_seed, ensure_output_dir

logger = logging.getLogger(__name__)

ROUND_LOG_COLUMNS = ["round", "loss_before", "loss_after", "delta_loss", "eta", "duration_s"]

_SAMPLING_STREAM = 2**31 - 1
_CHECKPOINT_ROUND_DTYPE = np.dtype("<u8")


class WeightScheme(Enum):
    UNIFORM = "Uniform"
    DATA_SIZE = "DataSize"


@dataclass(frozen=True)
class HyperParams:
    eta0: float = 0.1
    alpha: float = 0.5
    beta: float = 0.5
    local_epochs: int = 1
    batch_size: int = 32
    rounds: int = 30
    weight_scheme: WeightScheme = WeightScheme.DATA_SIZE
    controller: ControllerConfig = field(default_factory=ControllerConfig)
    hidden_width: int = 8
    client_fraction: float = 1.0

    def __post_init__(self):
        if not isinstance(self.weight_scheme, WeightScheme):
            object.__setattr__(self, "weight_scheme", WeightScheme(self.weight_scheme))
        if not self.eta0 > 0:
            raise ValueError(f"eta0 must be > 0, got {self.eta0}")
        for name in ("alpha", "beta"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0, got {getattr(self, name)}")
        for name in ("local_epochs", "batch_size", "rounds", "hidden_width"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
        if not 0.0 < self.client_fraction <= 1.0:
            raise ValueError(f"client_fraction must be in (0, 1], got {self.client_fraction}")


@dataclass(frozen=True)
class RoundRecord:
    round: int
    mean_client_loss_before: float
    mean_client_loss_after: float
    delta_loss: float
    eta_used: float
    round_duration_s: float
    per_client_losses: list
    participants: list = field(default_factory=list)
    gradient_steps: int = 0


@dataclass
class FedState:
    global_params: ParamVector
    eta: float
    round: int
    clients: list
    weights: list
    config: HyperParams
    seed: int = 0
    history: list = field(default_factory=list)
    network: SimNetwork = None
    workers: int = 1

    def __post_init__(self):
        if len(self.weights) != len(self.clients):
            raise ValueError(f"{len(self.weights)} weights for {len(self.clients)} clients")
        if not sum(self.weights) > 0:
            raise ValueError("client weights must have a positive sum")


def client_weights(clients, scheme):
    if not clients:
        raise ValueError("client list is empty")
    scheme = WeightScheme(scheme)
    if scheme is WeightScheme.UNIFORM:
        return [1.0 for _ in clients]
    return [float(c.n_k) for c in clients]


def normalize_weights(weights):
    total = float(sum(weights))
    if not total > 0:
        raise ValueError("weights must have a positive sum")
    return [w / total for w in weights]


def steps_per_epoch(n, batch_size):
    return math.ceil(n / batch_size)


def local_training(dataset, theta, eta, epochs, batch_size, seed):
    """Seeded shuffle each epoch, one SGD step per mini-batch"""
    rng = np.random.default_rng(seed)
    X, y = dataset.X, dataset.y
    n = y.shape[0]
    for _ in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            theta = sgd_step(theta, grad(theta, (X[idx], y[idx])), eta)
    return theta


def aggregate(params_list, weights):
    """sum(w_i * theta_i) / sum(w_i), accumulated in list order"""
    if not params_list or len(params_list) != len(weights):
        raise ValueError(f"{len(params_list)} parameter vectors for {len(weights)} weights")
    if any(w < 0 for w in weights):
        raise ValueError("weights must be non-negative")
    total = float(sum(weights))
    if not total > 0:
        raise ValueError("all-zero weights")
    length = len(params_list[0])
    # Identical inputs come back unchanged (no rounding from the weighted sum)
    if all(len(t) == length and np.array_equal(t.values, params_list[0].values)
           for t in params_list[1:]):
        return params_list[0]
    acc = np.zeros(length)
    for theta, w in zip(params_list, weights):
        if len(theta) != length:
            raise ValueError(f"length mismatch: {len(theta)} vs {length}")
        acc += w * theta.values
    return ParamVector(acc / total, params_list[0].arch)


def weighted_mean_loss(params, clients, weights):
    per_client = [loss(params, c) for c in clients]
    norm = normalize_weights(weights)
    return float(sum(w * l for w, l in zip(norm, per_client))), per_client


def map_clients(fn, items, workers=1):
    """Apply fn to every item, possibly on threads; results keep input order"""
    if workers > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(fn, items))
    return [fn(item) for item in items]


def round_participants(clients, fraction, seed, round_index):
    """Ascending node_id order; a seeded subset when fraction < 1"""
    order = sorted(range(len(clients)), key=lambda i: clients[i].node_id)
    if fraction >= 1.0:
        return order
    m = max(1, int(round(fraction * len(order))))
    rng = np.random.default_rng(derive_seed(seed, round_index, _SAMPLING_STREAM))
    chosen = rng.choice(len(order), size=m, replace=False)
    return [order[i] for i in sorted(chosen)]


def select_participants(state):
    return round_participants(state.clients, state.config.client_fraction, state.seed, state.round + 1)


def initial_eta(config):
    """eta0 clamped into the controller bounds; round 1 trains with this value"""
    bounds = config.controller
    eta = min(max(config.eta0, bounds.eta_min), bounds.eta_max)
    if eta != config.eta0:
        logger.warning("eta0=%g outside [%g, %g], clamped to %g",
                       config.eta0, bounds.eta_min, bounds.eta_max, eta)
    return eta


def init_state(config, clients, seed, arch=None, workers=1):
    if not clients:
        raise ValueError("client list is empty")
    if arch is None:
        arch = ModelArch(input_dim=clients[0].X.shape[1], hidden_width=config.hidden_width)
    clients = sorted(clients, key=lambda c: c.node_id)
    return FedState(
        global_params=init_params(arch, seed),
        eta=initial_eta(config),
        round=0,
        clients=clients,
        weights=client_weights(clients, config.weight_scheme),
        config=config,
        seed=seed,
        workers=workers,
    )


def finish_round(state, new_params, participants, loss_before, gradient_steps, cost):
    """
    Shared tail of a round: losses at the new global model, controller update,
    simulated duration, audit record.
    """
    clients = [state.clients[i] for i in participants]
    weights = [state.weights[i] for i in participants]
    loss_after, per_client = weighted_mean_loss(new_params, clients, weights)

    controller = LearningRateController(state.config.controller, state.eta)
    new_eta = controller.step(loss_before, loss_after)

    network = state.network if state.network is not None else SimNetwork(cost)
    payload = len(new_params.to_bytes())
    steps = {c.node_id: s for c, s in zip(clients, gradient_steps)}
    duration = network.run_round(steps, payload, payload)

    record = RoundRecord(
        round=state.round + 1,
        mean_client_loss_before=loss_before,
        mean_client_loss_after=loss_after,
        delta_loss=loss_before - loss_after,
        eta_used=state.eta,
        round_duration_s=duration,
        per_client_losses=per_client,
        participants=[c.node_id for c in clients],
        gradient_steps=int(sum(gradient_steps)),
    )
    logger.info("round %d: loss %.5f -> %.5f, eta %.4g -> %.4g, %.4fs simulated",
                record.round, loss_before, loss_after, state.eta, new_eta, duration)
    return replace(
        state,
        global_params=new_params,
        eta=new_eta,
        round=state.round + 1,
        history=state.history + [record],
        network=network,
    )


def run_round(state, cost):
    cfg = state.config
    participants = select_participants(state)
    clients = [state.clients[i] for i in participants]
    weights = [state.weights[i] for i in participants]
    theta_g = state.global_params
    loss_before, _ = weighted_mean_loss(theta_g, clients, weights)

    def train(client):
        seed = derive_seed(state.seed, state.round + 1, client.node_id)
        return local_training(client, theta_g, state.eta, cfg.local_epochs, cfg.batch_size, seed)

    local_params = map_clients(train, clients, state.workers)
    new_params = aggregate(local_params, weights)
    steps = [client_step_budget(c, cfg) for c in clients]
    return finish_round(state, new_params, participants, loss_before, steps, cost)


def run_federated(config, clients, cost, seed, workers=1):
    """R rounds from a fresh init; returns the final FedState"""
    state = init_state(config, clients, seed, workers=workers)
    for _ in range(config.rounds):
        state = run_round(state, cost)
    return state


def run_training(config, clients, cost, seed, workers=1):
    """Returns (final global params, round history)"""
    state = run_federated(config, clients, cost, seed, workers)
    return state.global_params, state.history


def client_step_budget(client, config):
    """Local gradient steps one client spends per round"""
    return config.local_epochs * steps_per_epoch(client.n_k, config.batch_size)


def federated_step_budget(clients, config, seed=0):
    """
    Total local gradient steps one federated run spends. With
    client_fraction < 1 the participant draw of every round is replayed, so
    `seed` must be the run seed.
    """
    if config.client_fraction >= 1.0:
        return config.rounds * sum(client_step_budget(c, config) for c in clients)
    total = 0
    for r in range(1, config.rounds + 1):
        for i in round_participants(clients, config.client_fraction, seed, r):
            total += client_step_budget(clients[i], config)
    return total


def steps_spent(history):
    return sum(r.gradient_steps for r in history)


def save_checkpoint(path, params, round_index):
    ensure_output_dir(os.path.dirname(path))
    header = np.array([round_index], dtype=_CHECKPOINT_ROUND_DTYPE).tobytes()
    with open(path, "wb") as f:
        f.write(header + params.to_bytes())
    logger.info("checkpoint saved to %s (round %d)", path, round_index)
    return path


def load_checkpoint(path):
    with open(path, "rb") as f:
        data = f.read()
    round_index = int(np.frombuffer(data[:8], dtype=_CHECKPOINT_ROUND_DTYPE)[0])
    return ParamVector.from_bytes(data[8:]), round_index


def history_frame(history):
    return pd.DataFrame(
        [[r.round, r.mean_client_loss_before, r.mean_client_loss_after, r.delta_loss,
          r.eta_used, r.round_duration_s] for r in history],
        columns=ROUND_LOG_COLUMNS,
    )


def write_round_log(history, path):
    ensure_output_dir(os.path.dirname(path))
    history_frame(history).to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    logger.info("round log saved to %s (%d rounds)", path, len(history))
    return path
