from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pandas as pd
import pytest

from traffic_data import (CSV_COLUMNS, MIN_SKEW, Regime, ScenarioSpec, TrafficSample,
                          apply_incidents, gen_all_nodes, gen_node_stream, label_rule,
                          label_rule_array, make_task, partition_noniid, pooled,
                          read_dataset_csv, sample_task, write_dataset_csv)


def quiet_spec(regime=Regime.MODERATE, **overrides):
    values = dict(density_regime=regime, incident_rate=0.0, daily_amplitude=0.0,
                  node_bias_scale=0.0, num_nodes=2, intervals_per_node=50)
    values.update(overrides)
    return ScenarioSpec(**values)


def test_no_variation_sources_gives_constant_occupancy():
    for regime in Regime:
        ds = gen_node_stream(quiet_spec(regime), node_id=1, seed=3)
        assert ds.n_k == 50
        assert np.all(ds.X[:, 2] == regime.base_occupancy)


def test_node_stream_is_deterministic():
    spec = ScenarioSpec()
    a = gen_node_stream(spec, 3, seed=9)
    b = gen_node_stream(spec, 3, seed=9)
    np.testing.assert_array_equal(a.X, b.X)
    np.testing.assert_array_equal(a.y, b.y)
    assert not np.array_equal(a.X, gen_node_stream(spec, 4, seed=9).X)


def test_incident_frequency_matches_rate():
    spec = quiet_spec(Regime.LOW, incident_rate=0.1, num_nodes=1, intervals_per_node=10_000)
    occupancy = gen_node_stream(spec, 0, seed=0).X[:, 2]
    incidents = np.isclose(occupancy, Regime.LOW.base_occupancy + 0.3)
    assert abs(incidents.mean() - 0.1) <= 0.01


def test_node_id_out_of_range():
    with pytest.raises(ValueError):
        gen_node_stream(ScenarioSpec(num_nodes=2), node_id=2, seed=0)


def test_scenario_validation():
    with pytest.raises(ValueError):
        ScenarioSpec(incident_rate=1.5)
    with pytest.raises(ValueError):
        ScenarioSpec(num_nodes=0)


def test_features_in_range_and_time_encoding_on_unit_circle():
    for ds in gen_all_nodes(ScenarioSpec(incident_rate=0.3), seed=1):
        assert np.all((ds.X[:, :3] >= 0) & (ds.X[:, :3] <= 1))
        np.testing.assert_allclose(ds.X[:, 3] ** 2 + ds.X[:, 4] ** 2, 1.0, atol=1e-9)
        assert set(ds.y.tolist()) <= {0, 1, 2}


def test_label_rule_examples():
    assert label_rule(0.0, 1.0) == 0
    assert label_rule(1.0, 0.0) == 2
    assert label_rule(0.5, 0.5) == 1


def test_label_rule_boundaries_join_upper_class():
    assert label_rule(0.15, 0.0) == 1
    assert label_rule(0.4, 0.0) == 2
    assert label_rule(0.1499, 0.0) == 0


def test_label_rule_rejects_out_of_range():
    with pytest.raises(ValueError):
        label_rule(1.2, 0.5)
    with pytest.raises(ValueError):
        label_rule(0.5, -0.1)


def test_labels_follow_rule_on_generated_data():
    for regime in Regime:
        for ds in gen_all_nodes(ScenarioSpec(density_regime=regime), seed=2):
            assert np.mean(label_rule_array(ds.X[:, 2], ds.X[:, 1]) == ds.y) >= 0.9

def test_regimes_are_separable_by_the_label_rule():
    for expected_mode, regime in enumerate(Regime):
        nodes = gen_all_nodes(ScenarioSpec(density_regime=regime), seed=6)
        X = np.concatenate([ds.X for ds in nodes])
        y = np.concatenate([ds.y for ds in nodes])
        assert np.mean(label_rule_array(X[:, 2], X[:, 1]) == y) >= 0.9
        # Low traffic is mostly free flow, High mostly congested
        assert np.bincount(y, minlength=3).argmax() == expected_mode


def test_concurrent_generation_matches_sequential():
    spec = ScenarioSpec(num_nodes=6, incident_rate=0.2)
    sequential = gen_all_nodes(spec, seed=21)
    with ThreadPoolExecutor(max_workers=4) as pool:
        concurrent = list(pool.map(lambda i: gen_node_stream(spec, i, 21), range(5, -1, -1)))
    for a, b in zip(sequential, reversed(concurrent)):
        assert a.node_id == b.node_id
        np.testing.assert_array_equal(a.X, b.X)
        np.testing.assert_array_equal(a.y, b.y)



def test_balanced_split_with_zero_skew():
    pool = pooled(gen_all_nodes(ScenarioSpec(num_nodes=1, intervals_per_node=100), seed=4))
    clients = partition_noniid(pool, k=2, skew=0, seed=1)
    assert [c.n_k for c in clients] == [50, 50]
    pool_counts = np.bincount([s.label for s in pool], minlength=3)
    for c in clients:
        counts = np.bincount(c.y, minlength=3)
        assert np.all(np.abs(counts - pool_counts / 2) <= 1)


def test_partition_is_disjoint_cover_without_empty_clients():
    rng = np.random.default_rng(77)
    for trial in range(40):
        n = int(rng.integers(10, 300))
        k = int(rng.integers(1, 11))
        skew = float(rng.choice([0.0, 0.1, 1.0, 5.0, 50.0]))
        pool = [TrafficSample(np.zeros(5), int(label)) for label in rng.integers(0, 3, n)]
        clients = partition_noniid(pool, k, skew, seed=trial)
        assert len(clients) == k
        assert all(c.n_k >= 1 for c in clients)
        seen = [id(s) for c in clients for s in c.samples]
        assert len(seen) == len(set(seen)) == n
        assert set(seen) == {id(s) for s in pool}


def test_partition_rejects_small_pool():
    pool = [TrafficSample(np.zeros(5), 0) for _ in range(3)]
    with pytest.raises(ValueError):
        partition_noniid(pool, k=4, skew=1.0, seed=0)


def _mean_class_proportion_variance(clients):
    props = np.array([np.bincount(c.y, minlength=3) / c.n_k for c in clients])
    return props.var(axis=0).mean()


def test_skew_increases_class_imbalance_across_clients():
    pool = [TrafficSample(np.zeros(5), i % 3) for i in range(10_000)]
    skewed, iid = [], []
    for seed in range(20):
        skewed.append(_mean_class_proportion_variance(partition_noniid(pool, 10, 5.0, seed)))
        iid.append(_mean_class_proportion_variance(partition_noniid(pool, 10, 0.0, seed)))
    assert np.mean(skewed) > 3 * np.mean(iid)
    assert np.mean(skewed) > 0.01

def test_tiny_skew_uses_the_concentration_floor():
    pool = [TrafficSample(np.zeros(5), i % 3) for i in range(300)]
    a = partition_noniid(pool, 4, 1e-12, seed=3)
    b = partition_noniid(pool, 4, MIN_SKEW, seed=3)
    assert [[id(s) for s in c.samples] for c in a] == [[id(s) for s in c.samples] for c in b]
    # concentration 1e6 is an almost even split
    assert all(60 <= c.n_k <= 90 for c in a)



def test_make_task_sizes_and_disjointness():
    task = make_task(ScenarioSpec(), support_size=5, query_size=20, seed=8)
    assert len(task.support) == 5 and len(task.query) == 20
    assert not {id(s) for s in task.support} & {id(s) for s in task.query}


def test_make_task_is_deterministic():
    a = make_task(ScenarioSpec(), 5, 20, seed=8)
    b = make_task(ScenarioSpec(), 5, 20, seed=8)
    for x, y in zip(a.support + a.query, b.support + b.query):
        np.testing.assert_array_equal(x.features, y.features)
        assert x.label == y.label


def test_high_regime_tasks_are_more_occupied_than_low():
    high = make_task(ScenarioSpec(density_regime=Regime.HIGH), 50, 100, seed=5)
    low = make_task(ScenarioSpec(density_regime=Regime.LOW), 50, 100, seed=5)
    mean_occ = lambda task: np.mean([s.occupancy for s in task.support + task.query])
    assert mean_occ(high) > mean_occ(low)

def test_layered_incidents_shock_and_relabel():
    samples = gen_node_stream(quiet_spec(Regime.LOW, intervals_per_node=200), 0, seed=1).samples
    rng = np.random.default_rng(0)
    hit = apply_incidents(samples, 1.0, rng)
    assert len(hit) == len(samples)
    for before, after in zip(samples, hit):
        assert after.occupancy == pytest.approx(min(before.occupancy + 0.3, 1.0))
        assert after.mean_speed == pytest.approx(before.mean_speed * 0.5)
        assert after.vehicle_count == pytest.approx(min(4 * after.occupancy * after.mean_speed, 1.0))
        assert after.label == label_rule(after.occupancy, after.mean_speed)
        np.testing.assert_array_equal(after.features[3:], before.features[3:])
    assert any(a.label != b.label for a, b in zip(samples, hit))

    untouched = apply_incidents(samples, 0.0, rng)
    assert all(a is b for a, b in zip(samples, untouched))
    with pytest.raises(ValueError):
        apply_incidents(samples, 1.5, rng)


def test_local_task_draws_disjoint_samples_from_the_client():
    samples = gen_node_stream(ScenarioSpec(), 2, seed=4).samples
    task = sample_task(samples, 10, 20, np.random.default_rng(3))
    assert len(task.support) == 10 and len(task.query) == 20
    support, query = {id(s) for s in task.support}, {id(s) for s in task.query}
    assert not support & query
    assert support | query <= {id(s) for s in samples}


def test_local_task_is_seeded():
    samples = gen_node_stream(ScenarioSpec(), 2, seed=4).samples
    a = sample_task(samples, 5, 5, np.random.default_rng(9), incident_rate=0.5)
    b = sample_task(samples, 5, 5, np.random.default_rng(9), incident_rate=0.5)
    for x, y in zip(a.support + a.query, b.support + b.query):
        np.testing.assert_array_equal(x.features, y.features)
        assert x.label == y.label


def test_local_task_on_small_client_splits_in_proportion():
    samples = gen_node_stream(ScenarioSpec(), 0, seed=4).samples
    rng = np.random.default_rng(1)
    task = sample_task(samples[:6], 10, 20, rng)
    assert (len(task.support), len(task.query)) == (2, 4)
    task = sample_task(samples[:2], 10, 20, rng)
    assert (len(task.support), len(task.query)) == (1, 1)
    with pytest.raises(ValueError):
        sample_task(samples[:1], 10, 20, rng)



def test_dataset_csv_format(tmp_path):
    nodes = gen_all_nodes(ScenarioSpec(num_nodes=3, intervals_per_node=20), seed=1)
    path = tmp_path / "dataset.csv"
    assert write_dataset_csv(nodes, str(path)) == 60
    first = path.read_text().splitlines()[0]
    assert first == ",".join(CSV_COLUMNS)
    frame = pd.read_csv(path)
    assert len(frame) == 60 and sorted(frame["node_id"].unique()) == [0, 1, 2]

    again = tmp_path / "again.csv"
    write_dataset_csv(nodes, str(again))
    assert path.read_bytes() == again.read_bytes()

    loaded = read_dataset_csv(str(path))
    assert [c.n_k for c in loaded] == [20, 20, 20]
    np.testing.assert_allclose(loaded[1].X, nodes[1].X, rtol=1e-8)
    np.testing.assert_array_equal(loaded[1].y, nodes[1].y)
