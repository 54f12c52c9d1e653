#!/usr/bin/env python3
"""
Meta-Federated traffic simulator
Run with: python run_pipeline.py compare --config config/desk_scale.json --out ./outputs

Subcommands:
  generate  write the scenario's per-node traffic dataset (CSV)
  train     train one model (centralized | fedavg | metafl), write checkpoint + round log
  compare   Centralized vs StandardFL vs MetaFL across regimes and seeds
  report    re-render the summary from an existing comparison CSV
Exit codes: 0 success, 1 runtime failure, 2 invalid config
"""
import argparse
import logging
import os
import sys
from pathlib import Path

# Add src to path
sys.path.append(str(Path(__file__).parent / "src"))
sys.path.append(str(Path(__file__).parent))

from experiment_config import TRAIN_MODES, ConfigError, config_to_dict, load_config
from utils import ensure_output_dir, write_json

MANIFEST_FILE = "run_manifest.json"


def write_manifest(config):
    path = os.path.join(ensure_output_dir(config.output_dir), MANIFEST_FILE)
    return write_json(config_to_dict(config), path)


def cmd_generate(config):
    from traffic_data import write_dataset_csv
    from evaluation import build_clients

    seed = config.seeds[0]
    scenario = config.scenario
    print(f"STEP 1: Generating {scenario.density_regime.value} traffic for "
          f"{scenario.num_nodes} nodes (seed {seed})...")
    clients = build_clients(config, scenario, seed)

    path = os.path.join(config.output_dir, f"dataset_{scenario.density_regime.value.lower()}.csv")
    rows = write_dataset_csv(clients, path)
    print(f"STEP 2: Dataset saved to: {path}")
    for client in clients:
        print(f"   • node {client.node_id}: {client.n_k} rows")
    print(f"Total rows: {rows}")
    return [path]


def cmd_train(config):
    from evaluation import build_clients, centralized_sgd, meta_task_source
    from federation import (client_weights, federated_step_budget, run_federated,
                            save_checkpoint, weighted_mean_loss, write_round_log)
    from meta import run_meta_training
    from traffic_data import pooled, read_dataset_csv

    seed = config.seeds[0]
    out = config.output_dir
    mode, data_path = config.train_mode, config.train_data
    print(f"STEP 1: Loading client data ({mode}, seed {seed})...")
    if data_path:
        clients = read_dataset_csv(data_path)
    else:
        clients = build_clients(config, config.scenario, seed)
    print(f"   {len(clients)} clients, {sum(c.n_k for c in clients)} samples")

    print(f"STEP 2: Training ({config.hyper.rounds} rounds)...")
    outputs = []
    if mode == "centralized":
        budget = federated_step_budget(clients, config.hyper, seed)
        params, steps = centralized_sgd(pooled(clients), config.hyper, seed, budget)
        final_loss, _ = weighted_mean_loss(
            params, clients, client_weights(clients, config.hyper.weight_scheme))
        outputs.append(save_checkpoint(os.path.join(out, f"checkpoint_{mode}.bin"), params, steps))
    else:
        if mode == "fedavg":
            state = run_federated(config.hyper, clients, config.cost, seed, config.workers)
        else:
            source = meta_task_source(config, config.scenario, seed)
            state = run_meta_training(config.hyper, config.meta, clients, source,
                                      config.cost, seed, config.workers)
        final_loss = state.history[-1].mean_client_loss_after
        outputs.append(save_checkpoint(os.path.join(out, f"checkpoint_{mode}.bin"),
                                       state.global_params, state.round))
        outputs.append(write_round_log(state.history, os.path.join(out, f"round_log_{mode}.csv")))
        outputs.append(state.network.export_jsonl(os.path.join(out, f"events_{mode}.jsonl")))
        print(f"   Simulated training time: {state.network.clock.now_s:.4f}s")

    print("STEP 3: Outputs written:")
    for path in outputs:
        print(f"   • {path}")
    print(f"Final mean loss: {final_loss:.6f}")
    return outputs


def cmd_compare(config):
    from evaluation import run_comparison
    from report_generator import write_comparison_outputs

    cmp = config.comparison
    print(f"STEP 1: Running comparison: {len(cmp.variants)} variants x {len(cmp.regimes)} regimes "
          f"x {len(config.seeds)} seeds...")
    report = run_comparison(config)

    print("STEP 2: Writing comparison report...")
    paths = write_comparison_outputs(report, config.output_dir)
    for path in paths:
        print(f"   • {path}")
    with open(paths[2]) as f:
        print(f.read())
    return list(paths)


def cmd_report(config, cells_path=None, plot=True):
    from report_generator import CELLS_FILE, rerender_report

    cells_path = cells_path or os.path.join(config.output_dir, CELLS_FILE)
    print(f"STEP 1: Re-rendering summary from {cells_path}...")
    _, json_path, text_path, plot_path = rerender_report(cells_path, config.output_dir, plot)
    with open(text_path) as f:
        print(f.read())
    return [p for p in (json_path, text_path, plot_path) if p]


def build_parser():
    parser = argparse.ArgumentParser(description="Meta-Federated traffic simulator")
    parser.add_argument("--log-level", default="WARNING", help="Logging level (e.g. INFO, DEBUG)")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", default=None, help="Experiment config JSON (defaults if omitted)")
        p.add_argument("--seed", type=int, default=None, help="Single seed overriding the config's list")
        p.add_argument("--out", default=None, help="Output directory")

    common(sub.add_parser("generate", help="Write the scenario dataset CSV"))
    train = sub.add_parser("train", help="Train one model and write checkpoint + round log")
    common(train)
    train.add_argument("--mode", choices=TRAIN_MODES, default=None,
                       help="Training mode (default: the config's train_mode, metafl)")
    train.add_argument("--data", default=None, help="Dataset CSV to train on instead of generating")
    common(sub.add_parser("compare", help="Run the three-way comparison"))
    report = sub.add_parser("report", help="Re-render the summary from an existing cells CSV")
    common(report)
    report.add_argument("--cells", default=None, help="Cells CSV (default: <out>/comparison_cells.csv)")
    report.add_argument("--no-plot", action="store_true", help="Skip the PNG plot")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=args.log_level.upper(),
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")

    try:
        config = load_config(args.config, seed=args.seed, output_dir=args.out,
                             train_mode=getattr(args, "mode", None),
                             train_data=getattr(args, "data", None))
    except ConfigError as e:
        print(f"Invalid config: {e}", file=sys.stderr)
        return 2
    except OSError as e:
        print(f"Cannot read config: {e}", file=sys.stderr)
        return 2

    print(f"Starting {args.command} (seeds {list(config.seeds)})")
    print("=" * 60)
    try:
        # report reads an existing run and leaves its manifest alone
        if args.command != "report":
            write_manifest(config)
        if args.command == "generate":
            cmd_generate(config)
        elif args.command == "train":
            cmd_train(config)
        elif args.command == "compare":
            cmd_compare(config)
        else:
            cmd_report(config, args.cells, plot=not args.no_plot)
    except Exception as e:
        logging.getLogger("run_pipeline").debug("failure", exc_info=True)
        print(f"Error: {e}", file=sys.stderr)
        return 1

    print("=" * 60)
    print("Pipeline complete!")
    print(f"All outputs in: {config.output_dir}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
