"""Command line interface: collect, train, simulate, study, report."""
from __future__ import annotations

import json
import logging
import statistics
import sys
from pathlib import Path

import click

from . import harness
from .bounce_sim import run_trial
from .policy_learning import Dataset
from .prioritized import (
    DominanceOrder, load_controller, save_controller, train_prioritized, train_single_model,
)

EXIT_INVALID_CONFIG = 2
EXIT_STUDY_FAILURE = 3


def _load_config(path) -> harness.ExperimentConfig:
    if path is None:
        return harness.ExperimentConfig()
    try:
        return harness.ExperimentConfig.load(path)
    except (OSError, ValueError, TypeError, KeyError) as exc:
        click.echo(f"invalid config {path}: {exc}", err=True)
        sys.exit(EXIT_INVALID_CONFIG)


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Log progress to stderr.")
def main(verbose):
    """Learn prioritized control laws from motor primitives and rank dominance orders."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")


@main.command()
@click.option("--primitive", required=True, type=click.Choice(harness.PRIMITIVE_NAMES))
@click.option("--duration", required=True, type=float, help="Seconds of data at 1 kHz.")
@click.option("--seed", required=True, type=int)
@click.option("--out", required=True, type=click.Path(dir_okay=False))
@click.option("--config", type=click.Path(exists=True, dir_okay=False), default=None)
def collect(primitive, duration, seed, out, config):
    """Record oracle-driven demonstrations of one primitive."""
    cfg = _load_config(config)
    if not duration > 0:
        click.echo("duration must be positive", err=True)
        sys.exit(EXIT_INVALID_CONFIG)
    arm = cfg.arm()
    ds = harness.collect_primitive_data(
        primitive, duration, seed, arm, cfg.cost(arm), cfg.strategy,
        harness.default_primitives(cfg.n_basis), cfg.collection_mode)
    ds.save(out)
    click.echo(f"wrote {len(ds)} rows to {out}")


def _read_datasets(data_dir, names):
    out = []
    for n in names:
        path = Path(data_dir) / f"{n}.csv"
        if not path.exists():
            click.echo(f"missing dataset {path}", err=True)
            sys.exit(EXIT_INVALID_CONFIG)
        out.append(Dataset.load(path))
    return out


@main.command()
@click.option("--order", required=True,
              help="Comma separated primitives, highest priority first, or 'single'.")
@click.option("--data", "data_dir", required=True, type=click.Path(exists=True, file_okay=False),
              help="Directory holding <primitive>.csv files.")
@click.option("--out", required=True, type=click.Path(dir_okay=False))
@click.option("--config", type=click.Path(exists=True, dir_okay=False), default=None)
def train(order, data_dir, out, config):
    """Fit a prioritized controller (or the pooled single model)."""
    cfg = _load_config(config)
    names = list(cfg.primitives)
    datasets = _read_datasets(data_dir, names)
    cost = cfg.cost(cfg.arm())
    if order.strip() == "single":
        ctrl = train_single_model(datasets, cost, cfg.ridge_lambda, names=names)
    else:
        try:
            dom = DominanceOrder.from_names([s.strip() for s in order.split(",")], names)
        except ValueError as exc:
            click.echo(str(exc), err=True)
            sys.exit(EXIT_INVALID_CONFIG)
        ctrl = train_prioritized(datasets, dom, cost, cfg.ridge_lambda, kernel=cfg.kernel,
                                 names=names)
    save_controller(ctrl, out)
    click.echo(f"wrote {ctrl.label} controller to {out}")


@main.command()
@click.option("--controller", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--trials", required=True, type=click.IntRange(min=1))
@click.option("--seed", required=True, type=int)
@click.option("--config", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--log-dir", type=click.Path(file_okay=False), default=None,
              help="Write one event CSV per trial here.")
def simulate(controller, trials, seed, config, log_dir):
    """Bounce the ball with a saved controller."""
    from .bounce_sim import write_trial_log

    cfg = _load_config(config)
    ctrl = load_controller(controller)
    arm = cfg.arm()
    prims = harness.default_primitives(cfg.n_basis)
    prims = {n: prims[n] for n in ctrl.names}
    hits = []
    for k in range(trials):
        r = run_trial(arm, ctrl, prims, cfg.strategy, seed + k, cfg.max_time,
                      log_events=log_dir is not None)
        hits.append(r.n_hits)
        click.echo(f"seed {seed + k}: {r.n_hits} hits ({r.failure_reason}, {r.duration:.3f} s)")
        if log_dir is not None:
            Path(log_dir).mkdir(parents=True, exist_ok=True)
            write_trial_log(r.events, Path(log_dir) / f"trial_{seed + k}.csv")
    std = statistics.stdev(hits) if len(hits) > 1 else 0.0
    click.echo(f"{ctrl.label}: {statistics.fmean(hits):.2f}±{std:.2f} hits")


@main.command()
@click.option("--config", required=True, type=click.Path(dir_okay=False))
@click.option("--out", required=True, type=click.Path(file_okay=False))
def study(config, out):
    """Evaluate every dominance ordering and the single model."""
    if not Path(config).exists():
        click.echo(f"config not found: {config}", err=True)
        sys.exit(EXIT_INVALID_CONFIG)
    cfg = _load_config(config)
    try:
        results = harness.run_dominance_study(cfg)
    except Exception as exc:  # noqa: BLE001 - reported as a study-level failure
        click.echo(f"study failed: {exc}", err=True)
        sys.exit(EXIT_STUDY_FAILURE)
    harness.write_study(results, cfg, out)
    click.echo(harness.report(results, "table"), nl=False)
    if all(r.failed for r in results):
        click.echo("every controller failed to train", err=True)
        sys.exit(EXIT_STUDY_FAILURE)


@main.command()
@click.option("--in", "in_dir", required=True, type=click.Path(exists=True))
@click.option("--format", "fmt", type=click.Choice(harness.REPORT_FORMATS), default="table")
def report(in_dir, fmt):
    """Render a finished study."""
    try:
        results = harness.load_study(in_dir)
    except (OSError, ValueError, KeyError) as exc:
        click.echo(f"cannot read study results: {exc}", err=True)
        sys.exit(EXIT_INVALID_CONFIG)
    click.echo(harness.report(results, fmt), nl=False)


if __name__ == "__main__":
    main()
