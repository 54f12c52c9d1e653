"""
Synthetic traffic streams for edge nodes, non-IID partitions and meta-learning tasks

Each node observes, per 15-minute interval: vehicle count, mean speed and
occupancy (all normalized to [0, 1]) plus the sin/cos of the daily phase.
Labels are the congestion class given by `label_rule`.
"""
import logging
import os
from dataclasses import dataclass, field, replace
from enum import Enum
from functools import cached_property

import numpy as np
import pandas as pd

from utils import FLOAT_FORMAT, derive_seed, ensure_output_dir

logger = logging.getLogger(__name__)

INTERVALS_PER_DAY = 96
INCIDENT_OCCUPANCY_JUMP = 0.3
INCIDENT_SPEED_FACTOR = 0.5
DAILY_OCCUPANCY_SWING = 0.25
SPEED_NOISE_SD = 0.05

LOW_THRESHOLD = 0.15
HIGH_THRESHOLD = 0.4

# Smallest skew used for the Dirichlet concentration (caps it at 1e6)
MIN_SKEW = 1e-6

FEATURE_COLUMNS = ["vehicle_count", "mean_speed", "occupancy", "tod_sin", "tod_cos"]
CSV_COLUMNS = ["node_id"] + FEATURE_COLUMNS + ["label"]

# Stream tags keep node streams and task draws on separate seed branches
_NODE_STREAM = 0
_TASK_STREAM = 1


class Regime(Enum):
    LOW = "Low"
    MODERATE = "Moderate"
    HIGH = "High"

    @property
    def base_occupancy(self):
        return {"Low": 0.2, "Moderate": 0.5, "High": 0.8}[self.value]


@dataclass(frozen=True)
class ScenarioSpec:
    density_regime: Regime = Regime.MODERATE
    incident_rate: float = 0.05
    daily_amplitude: float = 0.5
    node_bias_scale: float = 0.05
    num_nodes: int = 8
    intervals_per_node: int = 200

    def __post_init__(self):
        if not isinstance(self.density_regime, Regime):
            object.__setattr__(self, "density_regime", Regime(self.density_regime))
        for name in ("incident_rate", "daily_amplitude"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {value}")
        if self.node_bias_scale < 0:
            raise ValueError(f"node_bias_scale must be >= 0, got {self.node_bias_scale}")
        if self.num_nodes < 1:
            raise ValueError(f"num_nodes must be >= 1, got {self.num_nodes}")
        if self.intervals_per_node < 1:
            raise ValueError(f"intervals_per_node must be >= 1, got {self.intervals_per_node}")


@dataclass(frozen=True, eq=False)
class TrafficSample:
    features: np.ndarray
    label: int

    @property
    def vehicle_count(self):
        return float(self.features[0])

    @property
    def mean_speed(self):
        return float(self.features[1])

    @property
    def occupancy(self):
        return float(self.features[2])


@dataclass(eq=False)
class ClientDataset:
    node_id: int
    samples: list

    def __post_init__(self):
        if not self.samples:
            raise ValueError(f"client {self.node_id} has no samples")

    @property
    def n_k(self):
        return len(self.samples)

    @cached_property
    def X(self):
        return np.stack([s.features for s in self.samples])

    @cached_property
    def y(self):
        return np.array([s.label for s in self.samples], dtype=np.int64)


@dataclass(eq=False)
class Task:
    support: list
    query: list
    regime: ScenarioSpec = field(default=None)

    def __post_init__(self):
        if not self.support or not self.query:
            raise ValueError("task support and query sets must be non-empty")


def label_rule(occupancy, speed):
    """Congestion index c = occupancy * (1 - speed); boundaries join the upper class"""
    if not (0.0 <= occupancy <= 1.0 and 0.0 <= speed <= 1.0):
        raise ValueError(f"occupancy and speed must be in [0, 1], got ({occupancy}, {speed})")
    return int(label_rule_array(np.array([occupancy]), np.array([speed]))[0])


def label_rule_array(occupancy, speed):
    c = occupancy * (1.0 - speed)
    return np.where(c < LOW_THRESHOLD, 0, np.where(c < HIGH_THRESHOLD, 1, 2)).astype(np.int64)


def _to_samples(features, labels):
    return [TrafficSample(row, int(label)) for row, label in zip(features, labels)]


def _incident_shock(occupancy, speed, incident):
    """Occupancy jumps and speed drops where `incident` is set; count follows both"""
    occupancy = np.clip(occupancy + INCIDENT_OCCUPANCY_JUMP * incident, 0.0, 1.0)
    speed = np.where(incident, speed * INCIDENT_SPEED_FACTOR, speed)
    return occupancy, speed, np.clip(4.0 * occupancy * speed, 0.0, 1.0)


def _simulate(spec, intervals, rng, bias):
    """Vectorized generative process for the given interval indices"""
    n = intervals.shape[0]
    phase = 2.0 * np.pi * (intervals % INTERVALS_PER_DAY) / INTERVALS_PER_DAY
    occupancy = (spec.density_regime.base_occupancy + bias
                 + DAILY_OCCUPANCY_SWING * spec.daily_amplitude * np.sin(phase))
    occupancy = np.clip(occupancy, 0.0, 1.0)

    incident = rng.random(n) < spec.incident_rate
    speed = np.clip(1.0 - 0.85 * occupancy + rng.normal(0.0, SPEED_NOISE_SD, n), 0.0, 1.0)
    occupancy, speed, vehicle_count = _incident_shock(occupancy, speed, incident)

    features = np.column_stack([vehicle_count, speed, occupancy, np.sin(phase), np.cos(phase)])
    return features, label_rule_array(occupancy, speed), incident


def gen_node_stream(spec, node_id, seed):
    """One node's stream of `intervals_per_node` consecutive intervals"""
    if not 0 <= node_id < spec.num_nodes:
        raise ValueError(f"node_id {node_id} out of range [0, {spec.num_nodes})")
    rng = np.random.default_rng(derive_seed(seed, _NODE_STREAM, node_id))
    # Node bias is drawn first so it stays fixed for the node whatever the length
    bias = rng.normal(0.0, spec.node_bias_scale)
    intervals = np.arange(spec.intervals_per_node)
    features, labels, incident = _simulate(spec, intervals, rng, bias)
    logger.debug("node %d: %d intervals, %d incidents", node_id, len(labels), int(incident.sum()))
    return ClientDataset(node_id, _to_samples(features, labels))


def gen_all_nodes(spec, seed):
    return [gen_node_stream(spec, node_id, seed) for node_id in range(spec.num_nodes)]


def partition_noniid(pool, k, skew, seed):
    """
    Split `pool` into k disjoint client datasets with Dirichlet label skew.

    skew == 0 gives a balanced IID split (class-sorted round-robin deal);
    otherwise each class is split across clients with Dirichlet proportions of
    concentration 1/max(skew, MIN_SKEW). Empty clients take one sample from
    the largest client.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if len(pool) < k:
        raise ValueError(f"pool of {len(pool)} samples cannot fill {k} clients")
    if skew < 0:
        raise ValueError(f"skew must be >= 0, got {skew}")

    rng = np.random.default_rng(seed)
    labels = np.array([s.label for s in pool])
    classes = np.unique(labels)
    shuffled = {c: rng.permutation(np.flatnonzero(labels == c)) for c in classes}

    if skew == 0:
        order = np.concatenate([shuffled[c] for c in classes])
        buckets = [list(order[i::k]) for i in range(k)]
    else:
        concentration = 1.0 / max(float(skew), MIN_SKEW)
        buckets = [[] for _ in range(k)]
        for c in classes:
            idx = shuffled[c]
            proportions = rng.dirichlet(np.full(k, concentration))
            if not np.all(np.isfinite(proportions)) or proportions.sum() <= 0:
                # Very small concentrations can underflow; fall back to one owner
                proportions = np.eye(k)[rng.integers(k)]
            cuts = (np.cumsum(proportions) * len(idx)).astype(int)[:-1]
            for client, part in enumerate(np.split(idx, cuts)):
                buckets[client].extend(part.tolist())

        for client in range(k):
            if not buckets[client]:
                donor = max(range(k), key=lambda j: len(buckets[j]))
                buckets[client].append(buckets[donor].pop())

    return [ClientDataset(i, [pool[j] for j in sorted(bucket)]) for i, bucket in enumerate(buckets)]


def make_task(spec, support_size, query_size, seed):
    """Fresh support/query samples from the scenario's generative process"""
    if support_size < 1 or query_size < 1:
        raise ValueError("support_size and query_size must be >= 1")
    rng = np.random.default_rng(derive_seed(seed, _TASK_STREAM))
    bias = rng.normal(0.0, spec.node_bias_scale)
    n = support_size + query_size
    intervals = rng.integers(0, INTERVALS_PER_DAY, size=n)
    features, labels, _ = _simulate(spec, intervals, rng, bias)
    samples = _to_samples(features, labels)
    return Task(samples[:support_size], samples[support_size:], spec)


def apply_incidents(samples, incident_rate, rng):
    """
    Copies of `samples` where each interval independently suffers an incident
    with probability `incident_rate`. Hit intervals get the same shock as in
    the generator and are relabelled; the rest are passed through.
    """
    if not 0.0 <= incident_rate <= 1.0:
        raise ValueError(f"incident_rate must be in [0, 1], got {incident_rate}")
    X = np.stack([s.features for s in samples])
    y = np.array([s.label for s in samples], dtype=np.int64)
    hit = rng.random(len(samples)) < incident_rate
    if not hit.any():
        return list(samples)
    occupancy, speed, vehicle_count = _incident_shock(X[:, 2], X[:, 1], hit)
    features = X.copy()
    features[:, 0] = np.where(hit, vehicle_count, X[:, 0])
    features[:, 1] = speed
    features[:, 2] = occupancy
    labels = np.where(hit, label_rule_array(occupancy, speed), y)
    return _to_samples(features, labels)


def sample_task(samples, support_size, query_size, rng, incident_rate=0.0, spec=None):
    """
    Disjoint support/query draw from one client's own samples, with incidents
    layered on at `incident_rate`. A client holding fewer than
    support_size + query_size samples is split in the same proportion.
    """
    n = len(samples)
    if n < 2:
        raise ValueError(f"a task needs at least 2 samples, client has {n}")
    if support_size < 1 or query_size < 1:
        raise ValueError("support_size and query_size must be >= 1")
    if support_size + query_size > n:
        share = int(round(n * support_size / (support_size + query_size)))
        support_size = min(max(1, share), n - 1)
        query_size = n - support_size
    idx = rng.choice(n, size=support_size + query_size, replace=False)
    drawn = apply_incidents([samples[i] for i in idx], incident_rate, rng)
    return Task(drawn[:support_size], drawn[support_size:], spec)


def shifted(spec, incident_rate):
    """The same scenario under a different incident rate (regime shift)"""
    return replace(spec, incident_rate=incident_rate)


def datasets_to_frame(datasets):
    rows = []
    for ds in datasets:
        frame = pd.DataFrame(ds.X, columns=FEATURE_COLUMNS)
        frame.insert(0, "node_id", ds.node_id)
        frame["label"] = ds.y
        rows.append(frame)
    return pd.concat(rows, ignore_index=True)[CSV_COLUMNS]


def write_dataset_csv(datasets, path):
    """One CSV per scenario, floats with 9 significant digits"""
    ensure_output_dir(os.path.dirname(path))
    frame = datasets_to_frame(datasets)
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    logger.info("dataset saved to %s (%d rows)", path, len(frame))
    return len(frame)


def read_dataset_csv(path):
    frame = pd.read_csv(path)
    missing = [c for c in CSV_COLUMNS if c not in frame.columns]
    if missing:
        raise ValueError(f"{path} is missing columns {missing}")
    datasets = []
    for node_id, group in frame.groupby("node_id", sort=True):
        features = group[FEATURE_COLUMNS].to_numpy(dtype=np.float64)
        datasets.append(ClientDataset(int(node_id), _to_samples(features, group["label"].to_numpy())))
    return datasets


def pooled(datasets):
    return [s for ds in datasets for s in ds.samples]


if __name__ == "__main__":
    nodes = gen_all_nodes(ScenarioSpec(num_nodes=3, intervals_per_node=5), seed=42)
    print("Sample traffic data:")
    print(datasets_to_frame(nodes).head(5))
