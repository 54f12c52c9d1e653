# Default experiment document; a JSON config file overrides any subset of it
DEFAULT_EXPERIMENT = {
    "scenario": {
        "density_regime": "Moderate",
        "incident_rate": 0.05,
        "daily_amplitude": 0.5,
        "node_bias_scale": 0.05,
        "num_nodes": 8,
        "intervals_per_node": 200,
    },
    "hyper": {
        "eta0": 0.1,
        "alpha": 0.5,
        "beta": 0.5,
        "local_epochs": 1,
        "batch_size": 32,
        "rounds": 30,
        "weight_scheme": "DataSize",
        "hidden_width": 8,
        "client_fraction": 1.0,
    },
    "meta": {
        "inner_steps": 1,
        "inner_lr": 0.05,
        "tasks_per_client": 1,
        "support_size": 10,
        "query_size": 20,
    },
    "cost": {
        "base_latency_s": 0.010,
        "per_kb_s": 0.001,
        "grad_step_s": 0.002,
        "jitter": False,
        "seed": 0,
    },
    "controller": {
        "kappa_up": 1.05,
        "kappa_down": 0.7,
        "eta_min": 1e-4,
        "eta_max": 1.0,
    },
    "comparison": {
        "variants": ["Centralized", "StandardFL", "MetaFL"],
        "regimes": ["Low", "Moderate", "High"],
        "adapt_steps": 5,
        "shift_incident_rate": 0.8,
        "shift_support_size": 20,
        "shift_query_size": 200,
        "holdout_size": 200,
        "threshold_fraction": 0.8,
        "max_adapt_steps": 100,
        "task_incident_range": [0.0, 0.8],
    },
    "seeds": [1, 2, 3, 4, 5],
    "partition_skew": None,
    "workers": 1,
    "output_dir": "./outputs",
    "train_mode": "metafl",
    "train_data": None,
}

# Sections holding nested settings (everything else is a top-level value)
SECTIONS = ("scenario", "hyper", "meta", "cost", "controller", "comparison")
