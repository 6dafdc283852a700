"""Command-line front end.

``dampwave run CONFIG.toml`` runs the experiment named in the file.  Each
experiment kind also has its own subcommand, which accepts an optional
config file plus flags; flags override the environment, which overrides
the file.

Exit codes: 0 all checks pass, 1 a check failed, 2 configuration error,
3 the request is infeasible for the chosen truncation.
"""

from __future__ import annotations

import json
import sys

import click

from .coherent import InfeasibleError
from .config import KINDS, ConfigError, apply_overrides, load, validate

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_INFEASIBLE = 0, 1, 2, 3


def _parse_value(text: str):
    """Interpret a ``--set`` value as JSON when possible, else as a string."""
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _execute(data: dict, flags: dict, quiet: bool) -> int:
    from .experiments import run

    try:
        cfg = validate(apply_overrides(data, flags))
    except ConfigError as err:
        click.echo(f"configuration error:\n{err}", err=True)
        return EXIT_CONFIG
    try:
        report = run(cfg)
    except InfeasibleError as err:
        click.echo(f"infeasible: {err}", err=True)
        return EXIT_INFEASIBLE
    except ValueError as err:
        click.echo(f"configuration error:\n{err}", err=True)
        return EXIT_CONFIG
    if not quiet:
        for c in report.checks:
            click.echo(f"{c.verdict:4s}  {c.name}")
        for a in report.artifacts:
            click.echo(f"wrote {a['path']}")
    return report.exit_code


def _common(f):
    options = [
        click.option("--output-dir", type=click.Path(file_okay=False), default=None, help="Output directory."),
        click.option("--workers", type=int, default=None, help="Worker threads for independent sub-runs."),
        click.option("--seed", type=int, default=None, help="Seed for randomized data."),
        click.option("--manifold", type=click.Choice(["circle", "torus2"]), default=None),
        click.option("-K", "--cutoff", "K", type=int, default=None, help="Fourier cutoff K."),
        click.option("-m", "--mass", "m", type=float, default=None, help="Klein-Gordon mass m."),
        click.option("--damping", type=str, default=None, help="Damping family."),
        click.option("--damping-param", multiple=True, metavar="KEY=VALUE", help="Damping parameter (repeatable)."),
        click.option("--set", "sets", multiple=True, metavar="KEY=VALUE", help="Experiment parameter (repeatable)."),
        click.option("-q", "--quiet", is_flag=True),
    ]
    for opt in reversed(options):
        f = opt(f)
    return f


def _pairs(items, prefix: str) -> dict:
    out = {}
    for item in items:
        key, sep, val = item.partition("=")
        if not sep or not key:
            raise click.BadParameter(f"expected KEY=VALUE, got {item!r}")
        out[f"{prefix}.{key.strip()}"] = _parse_value(val.strip())
    return out


def _flags(output_dir, workers, seed, manifold, K, m, damping, damping_param, sets) -> dict:
    flags = {
        "output_dir": output_dir,
        "workers": workers,
        "seed": seed,
        "manifold.kind": manifold,
        "manifold.K": K,
        "m": m,
        "damping.family": damping,
    }
    if damping is not None and not damping_param:
        flags["damping.params"] = {}
    flags.update(_pairs(damping_param, "damping.params"))
    flags.update(_pairs(sets, "params"))
    return flags


@click.group()
@click.version_option(package_name="dampwave")
def main() -> None:
    """Numerical experiments for damped wave and Klein-Gordon operators."""


@main.command("run")
@click.argument("config", type=click.Path(exists=True, dir_okay=False))
@_common
def run_cmd(config, output_dir, workers, seed, manifold, K, m, damping, damping_param, sets, quiet):
    """Run the experiment described in CONFIG (a TOML file)."""
    try:
        data = load(config)
    except ConfigError as err:
        click.echo(f"configuration error:\n{err}", err=True)
        sys.exit(EXIT_CONFIG)
    flags = _flags(output_dir, workers, seed, manifold, K, m, damping, damping_param, sets)
    sys.exit(_execute(data, flags, quiet))


def _make_kind_command(kind: str):
    @click.argument("config", required=False, type=click.Path(exists=True, dir_okay=False))
    @_common
    def cmd(config, output_dir, workers, seed, manifold, K, m, damping, damping_param, sets, quiet):
        try:
            data = load(config) if config else {}
        except ConfigError as err:
            click.echo(f"configuration error:\n{err}", err=True)
            sys.exit(EXIT_CONFIG)
        if data.get("kind", kind) != kind:
            click.echo(f"configuration error:\nkind: file says {data['kind']!r}, command is {kind!r}", err=True)
            sys.exit(EXIT_CONFIG)
        data["kind"] = kind
        flags = _flags(output_dir, workers, seed, manifold, K, m, damping, damping_param, sets)
        sys.exit(_execute(data, flags, quiet))

    cmd.__doc__ = f"Run a '{kind}' experiment (optional CONFIG plus flags)."
    return main.command(kind)(cmd)


for _kind in KINDS:
    _make_kind_command(_kind)


if __name__ == "__main__":  # pragma: no cover
    main()
