"""Command-line client for the solver service.

Each subcommand builds the same request models the HTTP API consumes. By
default the request is executed in-process; with ``--server URL`` it is sent
to a running ``rdms serve`` instance instead, and the response JSON is
printed either way.
"""

from __future__ import annotations

import json
import sys

import click

from . import bench
from .schemas import (
    BasisRequest,
    CompareRequest,
    ExperimentConfig,
    RunRequest,
    SweepRequest,
)


def _load_config(path: str, **overrides) -> ExperimentConfig:
    with open(path) as fp:
        raw = json.load(fp)
    raw.update({k: v for k, v in overrides.items() if v is not None})
    return ExperimentConfig.model_validate(raw)


def _post(server: str, route: str, payload: dict) -> dict:
    import httpx

    response = httpx.post(f"{server.rstrip('/')}{route}", json=payload, timeout=None)
    if response.status_code != 200:
        raise click.ClickException(f"server returned {response.status_code}: {response.text}")
    return response.json()


def _emit(data) -> None:
    click.echo(json.dumps(data, indent=2))


@click.group()
def main() -> None:
    """Reaction-diffusion solvers for heterogeneous media."""


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--output", "output_dir", default=None, help="Override the config's output directory.")
@click.option("--scheme", type=click.Choice(["fi", "si", "ms"]), default=None)
@click.option("--server", default=None, help="Run on a remote rdms service instead of in-process.")
def run(config_path, output_dir, scheme, server):
    """Run one experiment from a JSON config."""
    config = _load_config(config_path, output_dir=output_dir, scheme=scheme)
    request = RunRequest(config=config)
    if server:
        _emit(_post(server, "/run", request.model_dump(mode="json")))
        return
    try:
        report = bench.run_experiment(request.config)
    except bench.ExperimentError as exc:
        raise click.ClickException(str(exc)) from exc
    _emit(json.loads(report.model_dump_json()))


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--out", "artifact_path", required=True, type=click.Path())
@click.option("--server", default=None)
def basis(config_path, artifact_path, server):
    """Build and serialize the multiscale basis (offline stage only)."""
    config = _load_config(config_path)
    request = BasisRequest(config=config, path=artifact_path)
    if server:
        _emit(_post(server, "/basis", request.model_dump(mode="json")))
        return
    try:
        report = bench.build_basis(request.config, request.path)
    except bench.ExperimentError as exc:
        raise click.ClickException(str(exc)) from exc
    _emit(json.loads(report.model_dump_json()))


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--basis", "basis_counts", default="1,2,4,6,8", show_default=True,
              help="Comma-separated basis counts.")
@click.option("--output", "output_dir", default=None)
@click.option("--server", default=None)
def sweep(config_path, basis_counts, output_dir, server):
    """Run a basis-count sweep against a fine-grid reference."""
    config = _load_config(config_path, output_dir=output_dir)
    try:
        counts = [int(v) for v in basis_counts.split(",") if v.strip()]
    except ValueError as exc:
        raise click.ClickException(f"bad basis counts {basis_counts!r}") from exc
    request = SweepRequest(config=config, basis_counts=counts)
    if server:
        _emit(_post(server, "/sweep", request.model_dump(mode="json")))
        return
    try:
        report = bench.run_sweep(request.config, request.basis_counts)
    except bench.ExperimentError as exc:
        raise click.ClickException(str(exc)) from exc
    _emit(json.loads(report.model_dump_json()))


@main.command()
@click.option("--a", "run_a", required=True, type=click.Path(exists=True))
@click.option("--b", "run_b", required=True, type=click.Path(exists=True))
@click.option("--server", default=None)
def compare(run_a, run_b, server):
    """Relative L2 errors between two runs' final states (B is the reference)."""
    request = CompareRequest(run_a=run_a, run_b=run_b)
    if server:
        _emit(_post(server, "/compare", request.model_dump(mode="json")))
        return
    try:
        report = bench.compare_runs(request.run_a, request.run_b)
    except (ValueError, FileNotFoundError) as exc:
        raise click.ClickException(str(exc)) from exc
    _emit(json.loads(report.model_dump_json()))


@main.command()
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8000, show_default=True)
def serve(host, port):
    """Start the HTTP service."""
    import uvicorn

    uvicorn.run("rdms.api:app", host=host, port=port)


if __name__ == "__main__":
    sys.exit(main())
