"""Command-line interface: ``shs-aoi <command> [options]``.

Every command writes its CSV outputs and a ``manifest.json`` (command line,
resolved options, package version, seed) into ``--out``. Exit status is 0 on
success, 1 when a ``reproduce`` check fails and 2 on invalid input.
"""

from __future__ import annotations

import json
import sys
import time
from pathlib import Path

import click
import numpy as np

from . import __version__
from .closure import SingularSystemError, SystemTooLarge, auto_scale, order_sweep, solve, assemble
from .compare import compare, gain_curve, write_gain_csv
from .config import ConfigError, load_model
from .csma import CsmaParams, age_blind_model, csma_model
from .model import ShsModel, errors_only, illustrative_model, validate_model
from .sca import (
    ClosureObjective,
    ExactCsmaObjective,
    ScaConfig,
    blind_family,
    csma_family,
    illustrative_family,
    sca_minimize,
)
from .simulate import SimConfig, run_replicas, write_event_log

BUILTINS = ("illustrative", "csma", "csma-blind")


class InputError(click.ClickException):
    exit_code = 2


def _floats(text: str | None) -> tuple[float, ...] | None:
    if text is None:
        return None
    try:
        return tuple(float(v) for v in text.split(","))
    except ValueError as exc:
        raise InputError(f"expected comma-separated numbers, got {text!r}") from exc


def _box(text: str) -> tuple[float, float]:
    try:
        lo, hi = (float(v) for v in text.split(":"))
    except ValueError as exc:
        raise InputError(f"box must look like lo:hi, got {text!r}") from exc
    return lo, hi


def _orders(text: str) -> list[int]:
    try:
        if ":" in text:
            lo, hi = (int(v) for v in text.split(":"))
            return list(range(lo, hi + 1))
        return [int(v) for v in text.split(",")]
    except ValueError as exc:
        raise InputError(f"orders must be lo:hi or a comma list, got {text!r}") from exc


def _build_model(model: str | None, config: str | None, a1, a, H, r) -> ShsModel:
    if (model is None) == (config is None):
        raise InputError("give exactly one of --model or --config")
    try:
        if config is not None:
            if not Path(config).exists():
                raise InputError(f"config file {config} does not exist")
            built = load_model(config)
        elif model == "illustrative":
            built = illustrative_model(a1)
        elif model == "csma":
            if a is None or H is None:
                raise InputError("csma needs --a and --H")
            built = csma_model(CsmaParams(a, H))
        elif model == "csma-blind":
            if r is None or H is None:
                raise InputError("csma-blind needs --r and --H")
            built = age_blind_model(r, H)
        else:
            raise InputError(f"unknown model {model!r}; built-ins are {', '.join(BUILTINS)}")
    except (ValueError, ConfigError) as exc:
        raise InputError(str(exc)) from exc
    errs = errors_only(validate_model(built))
    if errs:
        raise InputError("invalid model: " + "; ".join(errs))
    return built


def _write_manifest(out: Path, command: str, options: dict) -> None:
    out.mkdir(parents=True, exist_ok=True)
    manifest = {
        "command": command,
        "argv": sys.argv[1:],
        "options": options,
        "version": __version__,
        "seed": options.get("seed"),
    }
    with open(out / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True, default=str)


def _model_options(f):
    f = click.option("--r", "r", default=None, help="Constant back-off rates (csma-blind), comma list.")(f)
    f = click.option("--H", "H", default=None, help="Service rates, comma list.")(f)
    f = click.option("--a", "a", default=None, help="Back-off coefficients (csma), comma list.")(f)
    f = click.option("--a1", type=float, default=1.0, show_default=True, help="Illustrative rate coefficient.")(f)
    f = click.option("--config", type=str, default=None, help="YAML model file.")(f)
    f = click.option("--model", type=str, default=None, help=f"Built-in model: {', '.join(BUILTINS)}.")(f)
    f = click.option("--out", type=click.Path(file_okay=False), default="out", show_default=True)(f)
    return f


@click.group()
@click.version_option(__version__)
def main():
    """Age-of-information analysis with age-dependent stochastic hybrid systems."""


@main.command()
@_model_options
@click.option("--events", type=float, default=None, help="Event budget (e.g. 1e6).")
@click.option("--horizon", type=float, default=None, help="Time horizon instead of an event budget.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--replicas", type=int, default=1, show_default=True)
@click.option("--order", type=int, default=3, show_default=True, help="Largest monomial order tracked.")
@click.option("--warmup", type=float, default=0.2, show_default=True)
@click.option("--log-events", type=int, default=0, help="Write the first N events to events.csv.")
def simulate(out, model, config, a1, a, H, r, events, horizon, seed, replicas, order, warmup, log_events):
    """Exact event-driven simulation; writes stats.csv."""
    m = _build_model(model, config, a1, _floats(a), _floats(H), _floats(r))
    if events is None and horizon is None:
        events = 1e6
    try:
        cfg = SimConfig(
            max_events=None if events is None else int(events), horizon=horizon, seed=seed,
            warmup_fraction=warmup, moment_order=order, log_events=log_events,
        )
        stats = run_replicas(m, cfg, replicas, workers=replicas) if replicas > 1 else run_replicas(m, cfg, 1)
    except ValueError as exc:
        raise InputError(str(exc)) from exc
    out = Path(out)
    _write_manifest(out, "simulate", dict(model=model, config=config, a1=a1, a=a, H=H, r=r, events=events,
                                          horizon=horizon, seed=seed, replicas=replicas, order=order, warmup=warmup))
    stats.write_csv(out / "stats.csv")
    if log_events:
        write_event_log(stats, out / "events.csv")
    for i in m.tracked_components:
        click.echo(f"mean age x{i}: {stats.mean_age(i)!r}")
    click.echo(f"support violations: {stats.support_violations}")


def _resolve_scale(m: ShsModel, scale: str, seed: int) -> float:
    if scale == "auto":
        return auto_scale(m, seed=seed)
    try:
        c = float(scale)
    except ValueError as exc:
        raise InputError(f"--scale must be a number or 'auto', got {scale!r}") from exc
    if c < 1:
        raise InputError("--scale must be >= 1")
    return c


@main.command("solve")
@_model_options
@click.option("--order", type=int, default=100, show_default=True)
@click.option("--scale", type=str, default="1", show_default=True, help="Scale c >= 1, or 'auto'.")
@click.option("--closure", type=click.Choice(["match", "zero"]), default="match", show_default=True)
@click.option("--single", is_flag=True, help="Report the single-order estimate instead of the parity pair.")
@click.option("--seed", type=int, default=0, show_default=True, help="Seed of the auto-scale pilot run.")
def solve_cmd(out, model, config, a1, a, H, r, order, scale, closure, single, seed):
    """Closed moment system at one truncation order; writes moments.csv and estimates.csv."""
    m = _build_model(model, config, a1, _floats(a), _floats(H), _floats(r))
    c = _resolve_scale(m, scale, seed)
    try:
        if single:
            rep = solve(assemble(m, order, c, closure=closure))
        else:
            rep = order_sweep(m, [order], c, closure=closure)
    except (SingularSystemError, SystemTooLarge, ValueError) as exc:
        raise InputError(str(exc)) from exc
    out = Path(out)
    _write_manifest(out, "solve", dict(model=model, config=config, a1=a1, a=a, H=H, r=r, order=order,
                                       scale=c, closure=closure, single=single, seed=seed))
    rep.write_csv(out / "estimates.csv")
    with open(out / "moments.csv", "w") as fh:
        fh.write("index,value\n")
        for idx, v in sorted(rep.moments.items()):
            fh.write(f"{idx},{v!r}\n")
    for i, v in zip(m.tracked_components, rep.avg_age):
        click.echo(f"avg age x{i}: {float(v)!r}")
    click.echo(f"scale: {c:g}  condition: {rep.condition_estimate:.3g}")


@main.command()
@_model_options
@click.option("--orders", type=str, default="4:100", show_default=True, help="lo:hi or comma list.")
@click.option("--scale", type=str, default="1", show_default=True)
@click.option("--closure", type=click.Choice(["match", "zero"]), default="match", show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
def sweep(out, model, config, a1, a, H, r, orders, scale, closure, seed):
    """Estimates across truncation orders; writes estimates.csv."""
    m = _build_model(model, config, a1, _floats(a), _floats(H), _floats(r))
    c = _resolve_scale(m, scale, seed)
    try:
        rep = order_sweep(m, _orders(orders), c, closure=closure)
    except (SingularSystemError, ValueError) as exc:
        raise InputError(str(exc)) from exc
    out = Path(out)
    _write_manifest(out, "sweep", dict(model=model, config=config, a1=a1, a=a, H=H, r=r, orders=orders,
                                       scale=c, closure=closure, seed=seed))
    rep.write_csv(out / "estimates.csv")
    for order, err in rep.errors.items():
        click.echo(f"order {order}: {err}", err=True)
    click.echo(f"avg age: {rep.avg_age.tolist()}")
    if not np.all(np.isfinite(rep.avg_age)):
        click.echo("estimate not finite: the paired orders disagree in sign", err=True)


@main.command()
@click.option("--out", type=click.Path(file_okay=False), default="out", show_default=True)
@click.option("--model", type=click.Choice(BUILTINS), required=True)
@click.option("--n", type=int, default=2, show_default=True, help="Link count (csma families).")
@click.option("--H", "H", default=None, help="Service rates, comma list (default all 1).")
@click.option("--box", type=str, default=None, help="lo:hi applied to every parameter.")
@click.option("--evaluator", type=click.Choice(["closure", "exact"]), default="closure", show_default=True,
              help="Objective for csma: closed moment system or the semi-analytic evaluator.")
@click.option("--order", type=int, default=None, help="Truncation order (default 100 illustrative, 6 csma).")
@click.option("--scale", type=float, default=1.0, show_default=True)
@click.option("--gradient", "grad_mode", type=click.Choice(["analytic", "fd"]), default="analytic", show_default=True)
@click.option("--eps", type=float, default=1e-9, show_default=True)
@click.option("--max-iter", type=int, default=500, show_default=True)
@click.option("--alpha", type=float, default=1.0, show_default=True)
@click.option("--start", type=str, default=None, help="Initial point, comma list (default box center).")
@click.option("--seed", type=int, default=0, show_default=True, help="Recorded for the manifest; the run is deterministic.")
def optimize(out, model, n, H, box, evaluator, order, scale, grad_mode, eps, max_iter, alpha, start, seed):
    """SCA over a parameter box; writes trace.csv."""
    Hs = _floats(H) or (1.0,) * n
    try:
        if model == "illustrative":
            fam = illustrative_family(_box(box) if box else (0.01, 1000.0))
            obj = ClosureObjective(fam, order or 100, scale, gradient_mode=grad_mode)
        elif model == "csma" and evaluator == "exact":
            bounds = np.tile(_box(box) if box else (0.1, 10.0), (len(Hs), 1))
            obj = ExactCsmaObjective(Hs, bounds)
        else:
            fam = (csma_family if model == "csma" else blind_family)(Hs, _box(box) if box else (0.1, 10.0))
            obj = ClosureObjective(fam, order or 6, scale, combine=False, gradient_mode=grad_mode)
        cfg = ScaConfig(eps=eps, max_iter=max_iter, alpha=alpha, initial=_floats(start))
        eta, trace = sca_minimize(obj, cfg)
    except (ValueError, SingularSystemError) as exc:
        raise InputError(str(exc)) from exc
    out = Path(out)
    _write_manifest(out, "optimize", dict(model=model, n=n, H=Hs, box=box, evaluator=evaluator, order=order,
                                          scale=scale, gradient=grad_mode, eps=eps, max_iter=max_iter,
                                          alpha=alpha, start=start, seed=seed))
    trace.write_csv(out / "trace.csv")
    click.echo(f"eta*: {eta.tolist()}  objective: {trace.objective[-1]!r}  stop: {trace.reason}")


@main.command("compare")
@click.option("--out", type=click.Path(file_okay=False), default="out", show_default=True)
@click.option("--H", "H", default="1,1", show_default=True)
@click.option("--a", "a", default=None, help="Aware back-off coefficients; omit with --optimize.")
@click.option("--r", "r", default=None, help="Blind back-off rates; omit with --optimize.")
@click.option("--method", type=click.Choice(["exact", "solver", "simulator"]), default="exact", show_default=True)
@click.option("--optimize", "do_opt", is_flag=True, help="Optimize both schemes, sweeping H2 over --H2.")
@click.option("--H2", "H2s", default="0.5,1,2,4", show_default=True)
@click.option("--box", type=str, default="0.1:10", show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--events", type=float, default=5e5, show_default=True, help="Per-replica budget for --method simulator.")
def compare_cmd(out, H, a, r, method, do_opt, H2s, box, seed, events):
    """Aware vs blind network age and gain; writes gain.csv."""
    out = Path(out)
    Hs = _floats(H)
    try:
        if do_opt:
            if method == "simulator":
                raise InputError("--optimize evaluates with 'exact' or 'solver'")
            pts = gain_curve(Hs[0], _floats(H2s), _box(box), aware_method=method)
            _write_manifest(out, "compare", dict(H=H, H2=H2s, box=box, method=method, optimize=True, seed=seed))
            write_gain_csv(pts, out / "gain.csv")
            for p in pts:
                click.echo(f"H2={p.H[1]:g}  aware={p.avg_aware:.6g}  blind={p.avg_blind:.6g}  gain={p.gain:.4f}")
            return
        if a is None or r is None:
            raise InputError("give --a and --r, or use --optimize")
        kw = {}
        if method == "simulator":
            kw["sim"] = SimConfig(max_events=int(events), seed=seed, moment_order=1)
        rep = compare(CsmaParams(_floats(a), Hs), CsmaParams(_floats(r), Hs), method, **kw)
    except (ValueError, SingularSystemError) as exc:
        raise InputError(str(exc)) from exc
    _write_manifest(out, "compare", dict(H=H, a=a, r=r, method=method, seed=seed, events=events))
    with open(out / "gain.csv", "w") as fh:
        fh.write("avg_aware,avg_blind,gain\n")
        fh.write(f"{rep.avg_aware!r},{rep.avg_blind!r},{rep.gain!r}\n")
    click.echo(f"aware={rep.avg_aware:.6g}  blind={rep.avg_blind:.6g}  gain={rep.gain:.4f}")


@main.command()
@click.argument("target", type=click.Choice(["table1", "table2", "fig3", "fig4", "fig5", "fig6"]))
@click.option("--out", type=click.Path(file_okay=False), default="out", show_default=True)
@click.option("--seed", type=int, default=1, show_default=True)
def reproduce(target, out, seed):
    """Run a reference experiment and print PASS/FAIL per checked number."""
    from .reproduce import TARGETS

    out = Path(out)
    _write_manifest(out, "reproduce", dict(target=target, seed=seed))
    t0 = time.perf_counter()
    checks = TARGETS[target](out, seed)
    ok = True
    for chk in checks:
        click.echo(str(chk))
        ok &= chk.passed
    click.echo(f"{target}: {'PASS' if ok else 'FAIL'} ({time.perf_counter() - t0:.1f}s)")
    sys.exit(0 if ok else 1)


if __name__ == "__main__":
    main()
