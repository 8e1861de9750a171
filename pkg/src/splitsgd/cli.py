"""Command-line front end producing the CSV artifacts.

Every command is deterministic given its flag set (including --seed): CSVs
are written with canonical row ordering and repr-formatted floats, and each
artifact gets a ``<out>.meta`` sidecar with the fully resolved
configuration.  Option precedence is flags > config file (key=value lines
via --config) > built-in defaults.
"""

from __future__ import annotations

import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor

import click

from . import __version__
from ._csvio import write_csv, write_sidecar
from .analysis import (
    CoherenceStudy,
    QRiskQuery,
    coherence_histogram,
    run_grid_cell,
    type1_error_probability,
)
from .core import DivergenceError, NumericError, RngStream
from .objectives import (
    DATA_STREAM_CHILD,
    START_STREAM_CHILD,
    Problem,
    build_problem,
    make_default_spec,
    perturbed_start,
    reversed_start,
    write_dataset_csv,
)
from .optimizers import (
    SplitSgdConfig,
    final_log_loss,
    run_constant_sgd,
    run_pflug_detection,
    run_sgd_half,
    run_split_detection,
    run_splitsgd,
    run_sqrt_decay_sgd,
)

SCHEMA_VERSION = 1
THREADS_ENV = "SPLITSGD_THREADS"

METHODS = ("splitsgd", "const", "sqrt", "half")
START_CHOICES = ("reversed", "near-opt")
ETA_SCALES = {"large": 1e-3, "small": 1e-4}

# Stream layout: one experiment namespace under the master seed, one child
# per seed/replication, and fixed grandchildren for start noise and draws.
_EXPERIMENT_CHILD = 0xE0
_CHILD_DRAWS = 1
_CHILD_PFLUG = 1
_CHILD_SPLIT = 2


def _load_config(ctx: click.Context, param: click.Parameter, value):
    if not value:
        return None
    entries = {}
    with open(value, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise click.UsageError(f"{value}:{lineno}: expected key=value, got {line!r}")
            key, _, val = line.partition("=")
            entries[key.strip().replace("-", "_")] = val.strip()
    ctx.default_map = {**(ctx.default_map or {}), **entries}
    return None


def config_option(fn):
    return click.option(
        "--config",
        type=click.Path(exists=True, dir_okay=False),
        callback=_load_config,
        is_eager=True,
        expose_value=False,
        help="key=value file supplying defaults (flags still win).",
    )(fn)


def _parse_floats(ctx, param, value) -> tuple[float, ...]:
    if isinstance(value, tuple):
        return value
    try:
        parsed = tuple(float(tok) for tok in str(value).split(",") if tok.strip())
    except ValueError as err:
        raise click.UsageError(f"{param.name}: {err}")
    if not parsed:
        raise click.UsageError(f"{param.name}: expected a comma-separated list of numbers")
    return parsed


def _parse_ints(ctx, param, value) -> tuple[int, ...]:
    floats = _parse_floats(ctx, param, value)
    ints = tuple(int(v) for v in floats)
    if any(i != v for i, v in zip(ints, floats)):
        raise click.UsageError(f"{param.name}: expected integers")
    return ints


def _parse_methods(ctx, param, value) -> tuple[str, ...]:
    if isinstance(value, tuple):
        return value
    methods = tuple(tok.strip() for tok in str(value).split(",") if tok.strip())
    unknown = [m for m in methods if m not in METHODS]
    if unknown or not methods:
        raise click.UsageError(
            f"{param.name}: unknown method(s) {unknown}; choose from {','.join(METHODS)}"
        )
    return methods


def _resolve_threads(threads: int | None) -> int:
    if threads is None:
        raw = os.environ.get(THREADS_ENV, "")
        try:
            threads = int(raw) if raw else 1
        except ValueError:
            raise click.UsageError(f"{THREADS_ENV} must be an integer, got {raw!r}")
    if threads < 1:
        raise click.UsageError("--threads must be >= 1")
    return threads


def _pool_map(fn, payloads, threads: int):
    if threads <= 1 or len(payloads) <= 1:
        return [fn(p) for p in payloads]
    with ProcessPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, payloads))


def _experiment_stream(seed: int) -> RngStream:
    return RngStream(seed).fork(_EXPERIMENT_CHILD)


def _make_problem(family: str, seed: int, noise_sd: float, n: int = 1000, d: int = 20) -> Problem:
    spec = make_default_spec(
        family, RngStream(seed).fork(DATA_STREAM_CHILD), n=n, d=d, noise_sd=noise_sd
    )
    return build_problem(spec)


def _start_base(problem: Problem, start: str):
    return reversed_start(problem.spec) if start == "reversed" else problem.spec.theta_star.copy()


def _sidecar(out, command: str, params: dict) -> None:
    entries = {
        "artifact": "splitsgd",
        "artifact_version": __version__,
        "schema_version": SCHEMA_VERSION,
        "command": command,
        **params,
    }
    write_sidecar(out, entries)


@click.group(context_settings={"help_option_names": ["-h", "--help"]})
@click.version_option(version=__version__, prog_name="splitsgd")
def cli():
    """Stochastic-gradient schedules with a two-thread stationarity
    diagnostic, on synthetic linear / logistic regression benchmarks."""


# ----------------------------------------------------------------- compare


def _compare_cell(payload):
    (problem, base, method, eta, seed_idx, master_seed, epochs, t1, w, l, q, gamma) = payload
    stream = _experiment_stream(master_seed).fork(seed_idx)
    theta0 = perturbed_start(base, stream.fork(START_STREAM_CHILD))
    rng = stream.fork(_CHILD_DRAWS)
    try:
        if method == "splitsgd":
            cfg = SplitSgdConfig(eta=eta, w=w, l=l, q=q, t1=t1, gamma=gamma)
            trace = run_splitsgd(problem, cfg, theta0, rng, epochs)
        elif method == "const":
            trace = run_constant_sgd(problem, eta, theta0, rng, epochs)
        elif method == "sqrt":
            trace = run_sqrt_decay_sgd(problem, eta, theta0, rng, epochs)
        else:
            trace = run_sgd_half(problem, eta, t1, theta0, rng, epochs)
        value = final_log_loss(trace)
    except DivergenceError:
        value = math.inf
    return method, eta, seed_idx, value


@cli.command()
@config_option
@click.option("--problem", "family", type=click.Choice(["linear", "logistic"]), default="linear", show_default=True)
@click.option("--etas", callback=_parse_floats, default="1e-5,1e-4,1e-3,1e-2,1e-1", show_default=True, help="Comma-separated initial step sizes.")
@click.option("--epochs", type=int, default=100, show_default=True)
@click.option("--seeds", type=int, default=20, show_default=True, help="Number of replication seeds per cell.")
@click.option("--methods", callback=_parse_methods, default="splitsgd,const,sqrt,half", show_default=True)
@click.option("--start", type=click.Choice(list(START_CHOICES)), default="reversed", show_default=True)
@click.option("--t1-epochs", type=int, default=4, show_default=True)
@click.option("--w", type=int, default=20, show_default=True)
@click.option("--l", "l", type=int, default=50, show_default=True)
@click.option("--q", type=float, default=0.4, show_default=True)
@click.option("--gamma", type=float, default=0.5, show_default=True)
@click.option("--noise-sd", type=float, default=1.0, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--threads", type=int, default=None, help=f"Worker processes (default: ${THREADS_ENV} or 1).")
@click.option("--out", type=click.Path(dir_okay=False), required=True)
def compare(family, etas, epochs, seeds, methods, start, t1_epochs, w, l, q, gamma, noise_sd, seed, threads, out):
    """Final log loss per (method, step size, seed) after a fixed budget."""
    threads = _resolve_threads(threads)
    problem = _make_problem(family, seed, noise_sd)
    base = _start_base(problem, start)
    t1 = t1_epochs * problem.spec.n
    payloads = [
        (problem, base, method, eta, s, seed, epochs, t1, w, l, q, gamma)
        for method in methods
        for eta in etas
        for s in range(seeds)
    ]
    results = _pool_map(_compare_cell, payloads, threads)
    rows = sorted((m, e, s, v) for m, e, s, v in results)
    write_csv(out, ["method", "eta", "seed", "final_log_loss"], rows)
    _sidecar(out, "compare", {
        "problem": family, "etas": ",".join(repr(e) for e in etas), "epochs": epochs,
        "seeds": seeds, "methods": ",".join(methods), "start": start,
        "t1_epochs": t1_epochs, "w": w, "l": l, "q": q, "gamma": gamma,
        "noise_sd": noise_sd, "seed": seed, "threads": threads, "out": out,
    })
    click.echo(f"wrote {len(rows)} rows to {out}")


# -------------------------------------------------------------------- race


def _race_rep(payload):
    (problem, base, rep, master_seed, eta, t1, w, l, q, gamma, max_epochs) = payload
    stream = _experiment_stream(master_seed).fork(rep)
    theta0 = perturbed_start(base, stream.fork(START_STREAM_CHILD))
    cfg = SplitSgdConfig(eta=eta, w=w, l=l, q=q, t1=t1, gamma=gamma)
    split = run_split_detection(problem, cfg, theta0, stream.fork(_CHILD_SPLIT), max_epochs)
    pflug = run_pflug_detection(problem, eta, theta0, stream.fork(_CHILD_PFLUG), max_epochs)
    return rep, split, pflug


@cli.command()
@config_option
@click.option("--problem", "family", type=click.Choice(["linear", "logistic"]), default="linear", show_default=True)
@click.option("--start", type=click.Choice(list(START_CHOICES)), default="reversed", show_default=True)
@click.option("--eta-scale", type=click.Choice(sorted(ETA_SCALES)), default="large", show_default=True)
@click.option("--eta", type=float, default=None, help="Explicit step size (overrides --eta-scale).")
@click.option("--reps", type=int, default=100, show_default=True)
@click.option("--max-epochs", type=int, default=1000, show_default=True)
@click.option("--t1-epochs", type=int, default=4, show_default=True)
@click.option("--w", type=int, default=20, show_default=True)
@click.option("--l", "l", type=int, default=50, show_default=True)
@click.option("--q", type=float, default=0.4, show_default=True)
@click.option("--gamma", type=float, default=0.5, show_default=True)
@click.option("--noise-sd", type=float, default=1.0, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--threads", type=int, default=None, help=f"Worker processes (default: ${THREADS_ENV} or 1).")
@click.option("--out", type=click.Path(dir_okay=False), required=True)
def race(family, start, eta_scale, eta, reps, max_epochs, t1_epochs, w, l, q, gamma, noise_sd, seed, threads, out):
    """Detection-epoch race: split diagnostic vs consecutive-gradient sum.

    Both detectors run per replication from the same start; rows record the
    epoch of first detection, with the budget cap as value when none fires.
    """
    threads = _resolve_threads(threads)
    if eta is None:
        eta = ETA_SCALES[eta_scale]
    problem = _make_problem(family, seed, noise_sd)
    base = _start_base(problem, start)
    t1 = t1_epochs * problem.spec.n
    payloads = [
        (problem, base, rep, seed, eta, t1, w, l, q, gamma, max_epochs)
        for rep in range(reps)
    ]
    results = _pool_map(_race_rep, payloads, threads)
    rows = []
    for rep, split, pflug in sorted(results):
        for method, epoch in (("pflug", pflug), ("split", split)):
            capped = epoch is None
            rows.append((rep, method, max_epochs if capped else epoch, capped))
    write_csv(out, ["rep", "method", "detection_epoch", "capped"], rows)
    _sidecar(out, "race", {
        "problem": family, "start": start, "eta_scale": eta_scale, "eta": eta,
        "reps": reps, "max_epochs": max_epochs, "t1_epochs": t1_epochs,
        "w": w, "l": l, "q": q, "gamma": gamma, "noise_sd": noise_sd,
        "seed": seed, "threads": threads, "out": out,
    })
    click.echo(f"wrote {len(rows)} rows to {out}")


# ---------------------------------------------------------------------- mc


@cli.command()
@config_option
@click.option("--problem", "family", type=click.Choice(["linear", "logistic"]), default="linear", show_default=True)
@click.option("--eta", type=float, default=1e-4, show_default=True)
@click.option("--burn-in-epochs", type=int, default=0, show_default=True)
@click.option("--reps", type=int, default=500, show_default=True)
@click.option("--window-index", type=int, default=2, show_default=True)
@click.option("--l", "l", type=int, default=50, show_default=True)
@click.option("--windows", type=int, default=None, help="Windows to run (default: --window-index).")
@click.option("--normalized/--raw", default=False, show_default=True, help="Record cosines instead of raw inner products.")
@click.option("--start", type=click.Choice(list(START_CHOICES)), default="reversed", show_default=True)
@click.option("--start-noise-sd", type=float, default=0.1, show_default=True)
@click.option("--noise-sd", type=float, default=1.0, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(dir_okay=False), required=True)
def mc(family, eta, burn_in_epochs, reps, window_index, l, windows, normalized, start, start_noise_sd, noise_sd, seed, out):
    """Monte-Carlo histogram of one window's gradient coherence."""
    spec = make_default_spec(family, RngStream(seed).fork(DATA_STREAM_CHILD), noise_sd=noise_sd)
    study = CoherenceStudy(
        problem=spec,
        eta=eta,
        burn_in_steps=burn_in_epochs * spec.n,
        window_index=window_index,
        replications=reps,
        normalized=normalized,
        l=l,
        windows=windows,
        start="reversed" if start == "reversed" else "near-optimum",
        start_noise_sd=start_noise_sd,
    )
    rows, summary = coherence_histogram(study, _experiment_stream(seed))
    write_csv(out, ["replication", "q_value", "normalized"], [(r, v, normalized) for r, v in rows])
    _sidecar(out, "mc", {
        "problem": family, "eta": eta, "burn_in_epochs": burn_in_epochs, "reps": reps,
        "window_index": window_index, "l": l, "windows": windows if windows is not None else window_index,
        "normalized": normalized, "start": start, "start_noise_sd": start_noise_sd,
        "noise_sd": noise_sd, "seed": seed, "out": out,
        "kept": summary.kept, "diverged": summary.diverged,
        "mean": summary.mean, "sd": summary.sd,
        "negative_fraction": summary.negative_fraction,
    })
    click.echo(
        f"kept={summary.kept} diverged={summary.diverged} "
        f"mean={summary.mean:.6g} sd={summary.sd:.6g} "
        f"negative_fraction={summary.negative_fraction:.6g}"
    )


# ------------------------------------------------------------------- qrisk


@cli.command()
@config_option
@click.option("--w", type=int, required=True, help="Number of windows.")
@click.option("--q", type=float, required=True, help="Verdict threshold fraction.")
@click.option("--out", type=click.Path(dir_okay=False), default=None, help="Optionally also write the value to a file.")
def qrisk(w, q, out):
    """Exact false-stationarity probability under the fair-sign model."""
    try:
        value = type1_error_probability(QRiskQuery(w=w, q=q))
    except ValueError as err:
        raise click.UsageError(str(err))
    click.echo(repr(value))
    if out is not None:
        with open(out, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(repr(value) + "\n")
        _sidecar(out, "qrisk", {"w": w, "q": q, "out": out})


# ------------------------------------------------------------- sensitivity


def _sensitivity_cell(payload):
    (problem, base, base_cfg, w, q, eta, s, master_seed, epochs) = payload
    stream = _experiment_stream(master_seed).fork(s)
    row = run_grid_cell(problem, base_cfg, w, q, eta, s, stream, epochs, start_base=base)
    return row


@cli.command()
@config_option
@click.option("--problem", "family", type=click.Choice(["linear", "logistic"]), default="linear", show_default=True)
@click.option("--w-values", callback=_parse_ints, default="10,20,40", show_default=True)
@click.option("--q-values", callback=_parse_floats, default="0.35,0.4,0.45", show_default=True)
@click.option("--etas", callback=_parse_floats, default="1e-5,1e-4,1e-3,1e-2,1e-1", show_default=True)
@click.option("--seeds", type=int, default=5, show_default=True)
@click.option("--epochs", type=int, default=100, show_default=True)
@click.option("--start", type=click.Choice(list(START_CHOICES)), default="reversed", show_default=True)
@click.option("--t1-epochs", type=int, default=4, show_default=True)
@click.option("--gamma", type=float, default=0.5, show_default=True)
@click.option("--noise-sd", type=float, default=1.0, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--threads", type=int, default=None, help=f"Worker processes (default: ${THREADS_ENV} or 1).")
@click.option("--out", type=click.Path(dir_okay=False), required=True)
def sensitivity(family, w_values, q_values, etas, seeds, epochs, start, t1_epochs, gamma, noise_sd, seed, threads, out):
    """SplitSGD final log loss over the (w, q, eta, seed) grid; window
    length is resized per w so one diagnostic costs one epoch."""
    threads = _resolve_threads(threads)
    problem = _make_problem(family, seed, noise_sd)
    if any(problem.spec.n % w for w in w_values):
        raise click.UsageError(f"every w must divide n={problem.spec.n}, got {w_values}")
    base = _start_base(problem, start)
    base_cfg = SplitSgdConfig(eta=etas[0], t1=t1_epochs * problem.spec.n, gamma=gamma)
    payloads = [
        (problem, base, base_cfg, w, q, eta, s, seed, epochs)
        for w in w_values
        for q in q_values
        for eta in etas
        for s in range(seeds)
    ]
    results = _pool_map(_sensitivity_cell, payloads, threads)
    rows = sorted((r.w, r.q, r.eta, r.seed, r.final_log_loss) for r in results)
    write_csv(out, ["w", "q", "eta", "seed", "final_log_loss"], rows)
    _sidecar(out, "sensitivity", {
        "problem": family, "w_values": ",".join(str(w) for w in w_values),
        "q_values": ",".join(repr(q) for q in q_values),
        "etas": ",".join(repr(e) for e in etas), "seeds": seeds, "epochs": epochs,
        "start": start, "t1_epochs": t1_epochs, "gamma": gamma,
        "noise_sd": noise_sd, "seed": seed, "threads": threads, "out": out,
    })
    click.echo(f"wrote {len(rows)} rows to {out}")


# ---------------------------------------------------------------- gen-data


@cli.command("gen-data")
@config_option
@click.option("--problem", "family", type=click.Choice(["linear", "logistic"]), default="linear", show_default=True)
@click.option("--n", type=int, default=1000, show_default=True)
@click.option("--d", type=int, default=20, show_default=True)
@click.option("--noise-sd", type=float, default=1.0, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(dir_okay=False), required=True)
def gen_data(family, n, d, noise_sd, seed, out):
    """Materialize the synthetic dataset as CSV (columns x1..xd,y)."""
    problem = _make_problem(family, seed, noise_sd, n=n, d=d)
    write_dataset_csv(problem.dataset, out)
    _sidecar(out, "gen-data", {
        "problem": family, "n": n, "d": d, "noise_sd": noise_sd, "seed": seed, "out": out,
    })
    click.echo(f"wrote {n} rows to {out}")


def main(argv=None) -> None:
    try:
        cli.main(args=argv, prog_name="splitsgd")
    except NumericError as err:
        click.echo(f"numeric error: {err}", err=True)
        sys.exit(3)


if __name__ == "__main__":
    main()
