"""Command-line entry points: synth, ingest, train, evaluate, serve."""

from __future__ import annotations

import json
import os
import sys

import click
import numpy as np

from . import riskmodel, synthgen
from .datastore import ingest as ingest_dataset
from .errors import IcutlError
from .jsonutil import canonical_dumps
from .service import load_config, run_server


def _fail(exc: Exception):
    click.echo(f"{type(exc).__name__}: {exc}", err=True)
    sys.exit(1)


@click.group()
def main():
    """Critical-care timeline toolkit: synthesize data, train and evaluate
    horizon mortality models, and serve the timeline API."""


@main.command()
@click.option("--out", required=True, type=click.Path(), help="Output dataset directory.")
@click.option("--patients", required=True, type=int, help="Number of patients to generate.")
@click.option("--seed", default=0, type=int, show_default=True)
@click.option("--mortality", default=0.15, type=float, show_default=True,
              help="Target in-hospital mortality rate.")
@click.option("--signal", default=synthgen.STRONG_SIGNAL, type=float, show_default=True,
              help="Severity-to-measurement coupling strength (0 = unlearnable).")
@click.option("--mean-los-hours", default=72.0, type=float, show_default=True)
@click.option("--note-rate", default=2.0, type=float, show_default=True,
              help="Average clinical notes per day.")
def synth(out, patients, seed, mortality, signal, mean_los_hours, note_rate):
    """Generate a synthetic MIMIC-shaped dataset."""
    try:
        config = synthgen.SynthConfig(
            n_patients=patients,
            seed=seed,
            mortality_base_rate=mortality,
            signal_strength=signal,
            mean_icu_los_hours=mean_los_hours,
            note_rate_per_day=note_rate,
        )
        synthgen.generate(config, out)
    except (IcutlError, ValueError) as exc:
        _fail(exc)
    click.echo(f"wrote dataset for {patients} patients to {out}")


@main.command("ingest")
@click.option("--data", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--check", is_flag=True, help="Validate only; print nothing but errors.")
def ingest_cmd(data, check):
    """Ingest and validate a dataset directory."""
    try:
        store = ingest_dataset(data)
    except IcutlError as exc:
        _fail(exc)
    if not check:
        for table, count in sorted(store.table_counts().items()):
            click.echo(f"{table}: {count} rows")
    click.echo("ok")


@main.command()
@click.option("--data", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--out", required=True, type=click.Path(), help="Bundle JSON output path.")
@click.option("--seed", default=0, type=int, show_default=True)
def train(data, out, seed):
    """Train the 14 horizon models and write a bundle (plus .report.json)."""
    try:
        store = ingest_dataset(data)
        bundle, report = riskmodel.train_all_horizons(store, riskmodel.TrainConfig(seed=seed))
        riskmodel.write_bundle(bundle, out)
        with open(out + ".report.json", "w", encoding="utf-8") as fh:
            fh.write(canonical_dumps(report.to_json_dict()) + "\n")
    except IcutlError as exc:
        _fail(exc)
    click.echo(f"bundle {bundle.bundle_id}: {len(bundle.horizon_models)} horizon models -> {out}")
    click.echo(report.to_table_text(), nl=False)


@main.command()
@click.option("--bundle", "bundle_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--data", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--out-json", type=click.Path(), help="Write the full report as JSON.")
@click.option("--out-csv", type=click.Path(), help="Write the per-horizon CSV summary.")
@click.option("--dump-features", type=click.Path(), metavar="DIR",
              help="Also export per-horizon raw feature matrices as CSV.")
def evaluate(bundle_path, data, out_json, out_csv, dump_features):
    """Evaluate a bundle against a dataset and print the per-horizon table."""
    try:
        store = ingest_dataset(data)
        bundle = riskmodel.read_bundle(bundle_path)
        report, features_by_horizon = riskmodel.evaluate_bundle(bundle, store)
        if out_json:
            with open(out_json, "w", encoding="utf-8") as fh:
                fh.write(canonical_dumps(report.to_json_dict()) + "\n")
        if out_csv:
            with open(out_csv, "w", encoding="utf-8") as fh:
                fh.write(report.to_csv_text())
        if dump_features:
            os.makedirs(dump_features, exist_ok=True)
            for t, (ids, X, y) in sorted(features_by_horizon.items()):
                path = os.path.join(dump_features, f"features_t{t:03d}.csv")
                with open(path, "w", encoding="utf-8") as fh:
                    fh.write("icustay_id,label," + ",".join(f"f_{j}" for j in range(X.shape[1])) + "\n")
                    for sid, row, label in zip(ids, X, y):
                        cells = ["" if np.isnan(v) else repr(float(v)) for v in row]
                        fh.write(f"{sid},{label}," + ",".join(cells) + "\n")
    except (IcutlError, json.JSONDecodeError) as exc:
        _fail(exc)
    click.echo(report.to_table_text(), nl=False)


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False),
              envvar="ICUTL_CONFIG", help="Service config JSON (or set ICUTL_CONFIG).")
def serve(config_path):
    """Run the HTTP API (and static UI, when configured)."""
    if not config_path:
        _fail(ValueError("provide --config or set ICUTL_CONFIG"))
    try:
        run_server(load_config(config_path))
    except IcutlError as exc:
        _fail(exc)


if __name__ == "__main__":
    main()
