"""Command line entry point: ``shadowlab run|claims|catalog|graph``."""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click

from .experiment import ConfigError, claims, emit_report, limit_threads, load_experiment, run_suite

EXIT_CONFIG = 3


def _load(config):
    try:
        return load_experiment(config)
    except ConfigError as err:
        click.echo(f"configuration error: {err}", err=True)
        sys.exit(EXIT_CONFIG)


@click.group()
def main():
    """Numerical checks of shadowing, chain dynamics and hyperbolicity on small flows."""


@main.command()
@click.argument("config", type=click.Path(dir_okay=False))
@click.option("--output-dir", "-o", type=click.Path(file_okay=False), default=None,
              help="Override the output directory from the config.")
@click.option("--no-csv", is_flag=True, help="Only write report.json.")
def run(config, output_dir, no_csv):
    """Run the suite described by CONFIG (TOML or JSON) and write its report."""
    spec = _load(config)
    from .systems import BuildError

    out = Path(output_dir or spec.output_dir)
    try:
        report = run_suite(spec, out)
    except (BuildError, ConfigError) as err:
        click.echo(f"configuration error: {err}", err=True)
        sys.exit(EXIT_CONFIG)
    emit_report(report, out, formats=("json",) if no_csv else ("json", "csv"))
    click.echo("--- verdicts ---")
    click.echo("claim,status,statistic,threshold")
    for v in report.verdicts:
        d = v.to_dict()
        click.echo(f"{d['claim']},{d['status']},{_fmt(d['statistic'])},{_fmt(d['threshold'])}")
    click.echo("--- artifacts ---")
    for a in report.artifacts:
        click.echo(f"{a['path']},{a['sha256'][:16]}")
    click.echo(f"report: {out / 'report.json'}")
    sys.exit(report.exit_code)


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return f"{v:.6g}"
    return str(v)


@main.command("claims")
@click.option("--json", "as_json", is_flag=True, help="Emit the registry as JSON.")
def claims_cmd(as_json):
    """List the claim registry."""
    reg = claims()
    if as_json:
        click.echo(json.dumps([c.to_dict() for c in reg], indent=2))
        return
    for c in reg:
        click.echo(f"{c.id}  [{', '.join(s for s in c.suites if s != 'full')}]  {c.source}")
        click.echo(f"    {c.title}: {c.statement}")


@main.command()
def catalog():
    """List catalog systems with their default parameters."""
    from .systems import catalog as entries

    for e in entries():
        click.echo(f"{e['kind']}: {e['description']}")
        click.echo(f"    defaults: {json.dumps(e['defaults'])}")


@main.command()
@click.argument("config", type=click.Path(dir_okay=False))
@click.option("--output-dir", "-o", type=click.Path(file_okay=False), default=None)
def graph(config, output_dir):
    """Build and export only the transition graph for CONFIG's system."""
    from .chain import BoxCover, build_transition_graph, chain_recurrent_set
    from .systems import BuildError, build_system, default_region

    spec = _load(config)
    limit_threads()
    try:
        sys_ = build_system(spec.system)
    except BuildError as err:
        click.echo(f"configuration error: {err}", err=True)
        sys.exit(EXIT_CONFIG)
    out = Path(output_dir or spec.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    lo, hi = default_region(spec.system.kind, sys_.dimension)
    depth = spec.params.depth or (7 if sys_.dimension <= 2 else 4)
    g = build_transition_graph(sys_, BoxCover.for_system(sys_, lo, hi, depth), seed=spec.seed)
    g.edges_csv(out / "graph_edges.csv")
    (out / "graph_boxes.json").write_text(g.boxes_json() + "\n")
    cr = chain_recurrent_set(g.graph)
    click.echo(f"nodes,{g.n}")
    click.echo(f"edges,{g.graph.edge_count}")
    click.echo(f"escaping,{len(g.graph.escaping)}")
    click.echo(f"chain_recurrent,{len(cr)}")
    click.echo(f"written: {out / 'graph_edges.csv'}, {out / 'graph_boxes.json'}")


if __name__ == "__main__":
    main()
