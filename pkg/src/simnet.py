"""
Discrete-event network simulation for synchronous federated rounds

Nothing sleeps: the clock only records and advances simulated seconds. Costs
come from a CostModel (per-message latency, bandwidth, per-step compute).
"""
import json
import logging
import os
from dataclasses import dataclass
from enum import Enum

import numpy as np

from utils import ensure_output_dir

logger = logging.getLogger(__name__)

COORDINATOR = "coordinator"
JITTER_FRACTION = 0.1


@dataclass(frozen=True)
class CostModel:
    base_latency_s: float = 0.010
    per_kb_s: float = 0.001
    grad_step_s: float = 0.002
    jitter: bool = False
    seed: int = 0

    def __post_init__(self):
        for name in ("base_latency_s", "per_kb_s", "grad_step_s"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0, got {getattr(self, name)}")


class EventKind(Enum):
    SEND = "Send"
    RECEIVE = "Receive"
    COMPUTE_START = "ComputeStart"
    COMPUTE_END = "ComputeEnd"


@dataclass(frozen=True)
class SimEvent:
    time_s: float
    kind: EventKind
    actor: object  # client node_id or COORDINATOR
    payload_bytes: int = 0

    def to_dict(self):
        return {"t": self.time_s, "kind": self.kind.value, "actor": self.actor,
                "bytes": self.payload_bytes}


class SimClock:
    """Simulated seconds since the start of the run; may only move forwards"""

    def __init__(self):
        self.now_s = 0.0

    def advance_to(self, target_s):
        if target_s < self.now_s:
            raise ValueError(f"Cannot move clock backwards from {self.now_s} to {target_s}")
        self.now_s = float(target_s)

    def reset(self):
        self.now_s = 0.0


def transmit(model, payload_bytes, jitter=None):
    """
    Time to deliver one message.

    `jitter` is an optional numpy Generator; when given, a uniform draw in
    [0, 0.1 * base_latency_s] is added.
    """
    if payload_bytes < 0:
        raise ValueError(f"payload_bytes must be >= 0, got {payload_bytes}")
    duration = model.base_latency_s + model.per_kb_s * (payload_bytes / 1024.0)
    if jitter is not None:
        duration += jitter.uniform(0.0, JITTER_FRACTION * model.base_latency_s)
    return duration


def compute_time(model, gradient_steps):
    if gradient_steps < 0:
        raise ValueError(f"gradient_steps must be >= 0, got {gradient_steps}")
    return model.grad_step_s * gradient_steps


def round_trip_time(model, payload_down, payload_up, gradient_steps, jitter=None):
    """Download, local compute, upload for one client"""
    return (transmit(model, payload_down, jitter)
            + compute_time(model, gradient_steps)
            + transmit(model, payload_up, jitter))


class SimNetwork:
    """
    Single-owner event queue for one simulation run.

    Each synchronous round broadcasts the global model, lets every client
    compute, collects the uploads and advances the clock to the slowest
    client (barrier).
    """

    def __init__(self, cost):
        self.cost = cost
        self.clock = SimClock()
        self.events = []
        self._rng = np.random.default_rng(cost.seed) if cost.jitter else None

    def run_round(self, client_steps, payload_down, payload_up):
        """
        Simulate one round. `client_steps` maps node_id -> gradient steps.
        Returns the round duration in seconds.
        """
        start = self.clock.now_s
        pending = []
        finish_times = []
        for node_id in sorted(client_steps):
            down = transmit(self.cost, payload_down, self._rng)
            work = compute_time(self.cost, client_steps[node_id])
            up = transmit(self.cost, payload_up, self._rng)

            t_recv = start + down
            t_done = t_recv + work
            t_back = t_done + up
            pending += [
                SimEvent(start, EventKind.SEND, COORDINATOR, payload_down),
                SimEvent(t_recv, EventKind.RECEIVE, node_id, payload_down),
                SimEvent(t_recv, EventKind.COMPUTE_START, node_id, 0),
                SimEvent(t_done, EventKind.COMPUTE_END, node_id, 0),
                SimEvent(t_done, EventKind.SEND, node_id, payload_up),
                SimEvent(t_back, EventKind.RECEIVE, COORDINATOR, payload_up),
            ]
            finish_times.append(t_back)

        # Stable sort keeps each client's causal order when times tie
        pending.sort(key=lambda e: e.time_s)
        self.events.extend(pending)
        end = max(finish_times, default=start)
        self.clock.advance_to(end)
        return end - start

    def export_jsonl(self, path):
        ensure_output_dir(os.path.dirname(path))
        with open(path, "w", newline="\n") as f:
            for event in self.events:
                f.write(json.dumps(event.to_dict()) + "\n")
        logger.info("event log saved to %s (%d events)", path, len(self.events))
        return path
