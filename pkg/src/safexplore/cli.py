"""Command-line entry point: ``safexplore run|compare|verify|transitory``."""
from __future__ import annotations

import logging
import sys
from pathlib import Path

import click

from .analysis import is_transitory_def1, is_transitory_def2, verify_run, write_verdict
from .environment import Setpoint
from .mpc import Mode
from .sim import (
    RunAborted,
    ScenarioError,
    compare_modes,
    export_plot_data,
    load_run,
    load_scenario,
    run_closed_loop,
)

MODES = click.Choice([m.value for m in Mode])


def _load(scenario, mode=None, steps=None, seed=None):
    try:
        sc = load_scenario(scenario)
    except ScenarioError as exc:
        raise click.ClickException(str(exc)) from exc
    if mode is not None:
        sc = sc.with_mode(mode)
    return sc.with_overrides(max_steps=steps, seed=seed)


@click.group()
@click.option("-v", "--verbose", count=True, help="Repeat for more log output.")
def main(verbose):
    """Safe-exploration MPC experiments."""
    level = logging.WARNING - 10 * min(verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


@main.command()
@click.argument("scenario")
@click.option("--mode", type=MODES, default=None, help="Override the scenario's controller mode.")
@click.option("--steps", type=int, default=None, help="Maximum number of closed-loop steps.")
@click.option("--seed", type=int, default=None)
@click.option("--out", type=click.Path(file_okay=False), default=None,
              help="Directory for trajectory.csv, geometry.json, steps.jsonl and verdict.txt.")
def run(scenario, mode, steps, seed, out):
    """Simulate SCENARIO (a file or a shipped scenario name)."""
    sc = _load(scenario, mode, steps, seed)
    out = Path(out or f"runs/{sc.name}-{sc.mpc.mode.value}")

    def progress(rec):
        y = ", ".join(f"{float(v):.3f}" for v in ([rec.y] if sc.model.discrete else rec.y))
        click.echo(f"t={rec.t:4d} y=({y}) S={rec.S:.4g} F*={rec.F_star:.6g} {rec.solver_status} "
                   f"{rec.wall_ms:.0f}ms", err=True)

    try:
        logs = run_closed_loop(sc, on_step=progress)
        aborted = None
    except RunAborted as exc:
        logs, aborted = exc.logs, exc
    if not logs:
        raise click.ClickException(str(aborted))
    files = export_plot_data(logs, out, sc)
    verdict = verify_run(logs, sc)
    write_verdict(verdict, out / "verdict.txt")
    last = logs[-1]
    click.echo(f"{sc.name} [{sc.mpc.mode.value}] steps={len(logs)} final y={_fmt_y(last.y)}")
    for line in verdict.lines():
        click.echo(line)
    click.echo(f"wrote {', '.join(str(p) for p in files.values())}")
    if aborted is not None:
        raise click.ClickException(str(aborted))


def _fmt_y(y):
    try:
        return "(" + ", ".join(f"{float(v):.4f}" for v in y) + ")"
    except TypeError:
        return str(y)


@main.command()
@click.argument("scenario")
@click.option("--modes", default="proposed,no9j", show_default=True, help="Comma-separated modes.")
@click.option("--steps", type=int, default=None)
@click.option("--seed", type=int, default=None)
def compare(scenario, modes, steps, seed):
    """Run SCENARIO once per mode and print a comparison table."""
    names = [m.strip() for m in modes.split(",") if m.strip()]
    try:
        parsed = [Mode.parse(m) for m in names]
    except (KeyError, ValueError) as exc:
        raise click.BadParameter(f"unknown mode in {modes!r}") from exc
    sc = _load(scenario, None, steps, seed)
    try:
        rows = compare_modes(sc, parsed)
    except RunAborted as exc:
        raise click.ClickException(str(exc)) from exc
    click.echo(f"{'mode':<10} {'final output':<24} {'offset':>12} {'steps':>6} {'converged':>10} {'stage sum':>12}")
    for row in rows.values():
        conv = "-" if row.steps_to_convergence is None else str(row.steps_to_convergence)
        click.echo(f"{row.mode:<10} {_fmt_y(row.final_output):<24} {row.final_offset:>12.6g} {row.steps:>6} "
                   f"{conv:>10} {row.total_stage_cost:>12.6g}")


@main.command()
@click.argument("logdir", type=click.Path(exists=True))
@click.option("--out", type=click.Path(dir_okay=False), default=None, help="Verdict file (default LOGDIR/verdict.txt).")
def verify(logdir, out):
    """Replay the invariant checks on an exported run."""
    try:
        sc, logs = load_run(logdir)
    except (ValueError, OSError) as exc:
        raise click.ClickException(str(exc)) from exc
    verdict = verify_run(logs, sc)
    target = Path(out) if out else (Path(logdir) if Path(logdir).is_dir() else Path(logdir).parent) / "verdict.txt"
    write_verdict(verdict, target)
    for line in verdict.lines():
        click.echo(line)
    sys.exit(0 if verdict.ok else 1)


@main.command()
@click.argument("scenario")
@click.option("--eps", "epsilon", type=float, default=None, help="Weight of the backup tracking cost.")
@click.option("--definition", type=click.Choice(["1", "2"]), default=None)
@click.option("--setpoint", default=None, help="x,u of the setpoint to test (default: the scenario's).")
def transitory(scenario, epsilon, definition, setpoint):
    """Decide whether a setpoint of a finite grid scenario is transitory."""
    sc = _load(scenario)
    if not sc.model.discrete:
        raise click.ClickException("transitory checks need a finite scenario")
    spec = sc.transitory or {}
    if setpoint is not None:
        x, u = (int(v) for v in setpoint.split(","))
    elif "setpoint" in spec:
        x, u = spec["setpoint"]
    else:
        raise click.ClickException("no setpoint given and the scenario names none")
    eps = epsilon if epsilon is not None else (spec.get("epsilon") or sc.mpc.epsilon)
    which = int(definition or spec.get("definition", 2))
    check = is_transitory_def2 if which == 2 else is_transitory_def1
    rep = check(sc.model, sc.costs, Setpoint(x, u), sc.knowledge.truth, eps, sc.mpc.N)
    verdict = "transitory" if rep.is_transitory else "not transitory"
    click.echo(f"setpoint ({x}, {u}) eps={eps:g} definition {which}: {verdict} "
               f"(delta={rep.delta_used:g}, probes={rep.probe_points})")
    if rep.witness is not None:
        w = rep.witness
        click.echo(f"witness: probe={w.probe} r2=({w.setpoint.x}, {w.setpoint.u}) gap={float(w.gap):g}")
    elif rep.failing_probe is not None:
        click.echo(f"no improving setpoint from probe {rep.failing_probe}")


if __name__ == "__main__":
    main()
