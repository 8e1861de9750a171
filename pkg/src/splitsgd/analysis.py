"""Monte-Carlo studies of the diagnostic and the schedule.

Three tools: the coherence histogram (distribution of one window's
coherence across seeded replications of burn-in + diagnostic), the exact
sign-flip model of the false-stationarity probability, and the (w, q, eta)
sensitivity grid of SplitSGD final losses.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .core import DivergenceError, RngStream, dot
from .diagnostic import DiagnosticConfig, _two_thread_window_means
from .objectives import (
    Problem,
    ProblemSpec,
    build_problem,
    make_oracle,
    perturbed_start,
    reversed_start,
    sigmoid,
)
from .optimizers import SplitSgdConfig, final_log_loss, run_splitsgd

__all__ = [
    "CoherenceStudy",
    "CoherenceSummary",
    "GridRow",
    "QRiskQuery",
    "aggregate_grid",
    "coherence_histogram",
    "run_grid_cell",
    "sensitivity_grid",
    "type1_error_probability",
]

START_KINDS = ("reversed", "near-optimum")

# Child ids under one replication's stream.
_CHILD_START = 0
_CHILD_BURN_IN = 1
_CHILD_DIAGNOSTIC = 2


@dataclass(frozen=True)
class CoherenceStudy:
    """One histogram scenario: problem, step size, burn-in length (steps),
    which window to record, and how many seeded replications to run.

    Each replication starts from the scenario's base point (the far
    "reversed" profile or the optimum) plus N(0, start_noise_sd^2 I) noise
    from its own stream, runs ``burn_in_steps`` of constant-rate SGD, then
    one two-thread split.  Only ``windows`` windows are run (default:
    ``window_index``) — a window's coherence depends only on the draws up
    to that window, so truncating the tail changes nothing.
    """

    problem: ProblemSpec | Problem
    eta: float
    burn_in_steps: int = 0
    window_index: int = 2
    replications: int = 500
    normalized: bool = False
    l: int = 50
    windows: int | None = None
    start: str = "reversed"
    start_noise_sd: float = 0.1

    def __post_init__(self):
        if self.eta < 0.0:
            raise ValueError(f"eta must be >= 0, got {self.eta}")
        if self.burn_in_steps < 0:
            raise ValueError("burn_in_steps must be >= 0")
        if self.window_index < 1 or self.l < 1:
            raise ValueError("window_index and l must be positive")
        if self.replications < 1:
            raise ValueError("replications must be positive")
        if self.windows is not None and self.windows < self.window_index:
            raise ValueError("windows must cover window_index")
        if self.start not in START_KINDS:
            raise ValueError(f"start must be one of {START_KINDS}")


@dataclass(frozen=True)
class CoherenceSummary:
    replications: int
    kept: int
    diverged: int
    mean: float
    sd: float
    negative_fraction: float


def _lockstep_burn_in(
    features: np.ndarray,
    targets: np.ndarray,
    family: str,
    thetas: np.ndarray,
    eta: float,
    steps: int,
    gens: list[np.random.Generator],
    chunk: int = 512,
) -> np.ndarray:
    """Advance all replications in lockstep; returns the finite-row mask.

    Each replication draws its indices from its own stream, so the result
    per replication is independent of the batching across replications.
    """
    if steps <= 0:
        return np.isfinite(thetas).all(axis=1)
    n = features.shape[0]
    n_rep = thetas.shape[0]
    linear = family == "linear"
    idx = np.empty((n_rep, chunk), dtype=np.int64)
    done = 0
    with np.errstate(over="ignore", invalid="ignore"):
        while done < steps:
            k = min(chunk, steps - done)
            for r, gen in enumerate(gens):
                idx[r, :k] = gen.integers(0, n, size=k)
            for j in range(k):
                rows = idx[:, j]
                xb = features[rows]
                z = np.einsum("rd,rd->r", xb, thetas)
                resid = (z if linear else sigmoid(z)) - targets[rows]
                thetas -= eta * resid[:, None] * xb
            done += k
    return np.isfinite(thetas).all(axis=1)


def coherence_histogram(
    study: CoherenceStudy, rng: RngStream
) -> tuple[list[tuple[int, float]], CoherenceSummary]:
    """Coherence of window ``window_index`` across replications.

    Returns (replication index, value) pairs for the replications that
    stayed finite, plus a summary.  Values are raw inner products, or
    cosines when the study asks for normalized ones.  Divergent
    replications are dropped from the histogram and counted.
    """
    problem = build_problem(study.problem)
    dataset = problem.dataset
    spec = problem.spec
    base = reversed_start(spec) if study.start == "reversed" else spec.theta_star.copy()
    n_rep = study.replications
    windows = study.windows if study.windows is not None else study.window_index
    oracle = make_oracle(dataset, spec.family)
    diag_cfg = DiagnosticConfig(eta=study.eta, w=windows, l=study.l, q=0.5)

    rep_streams = [rng.fork(r) for r in range(n_rep)]
    thetas = np.stack(
        [
            perturbed_start(base, stream.fork(_CHILD_START), study.start_noise_sd)
            for stream in rep_streams
        ]
    )
    finite = _lockstep_burn_in(
        dataset.features,
        dataset.targets,
        spec.family,
        thetas,
        study.eta,
        study.burn_in_steps,
        [stream.fork(_CHILD_BURN_IN).generator() for stream in rep_streams],
    )

    rows: list[tuple[int, float]] = []
    diverged = int(n_rep - finite.sum())
    i = study.window_index - 1
    for r in range(n_rep):
        if not finite[r]:
            continue
        try:
            means_1, means_2, _, _ = _two_thread_window_means(
                oracle, thetas[r], diag_cfg, None, rep_streams[r].fork(_CHILD_DIAGNOSTIC)
            )
        except DivergenceError:
            diverged += 1
            continue
        value = dot(means_1[i], means_2[i])
        if study.normalized:
            norm = float(np.linalg.norm(means_1[i])) * float(np.linalg.norm(means_2[i]))
            value = value / norm if norm > 0.0 else 0.0
        rows.append((r, value))

    values = np.array([v for _, v in rows], dtype=np.float64)
    kept = len(rows)
    if kept:
        mean = float(values.mean())
        sd = float(values.std(ddof=1)) if kept > 1 else 0.0
        negative_fraction = float(
            (np.count_nonzero(values < 0.0) + 0.5 * np.count_nonzero(values == 0.0)) / kept
        )
    else:
        mean = sd = negative_fraction = math.nan
    summary = CoherenceSummary(
        replications=n_rep,
        kept=kept,
        diverged=diverged,
        mean=mean,
        sd=sd,
        negative_fraction=negative_fraction,
    )
    return rows, summary


@dataclass(frozen=True)
class QRiskQuery:
    """False-stationarity query under the fair-sign model: w independent
    half/half coherence signs, verdict threshold q."""

    w: int
    q: float

    def __post_init__(self):
        if self.w < 1:
            raise ValueError("w must be a positive integer")
        if not 0.0 <= self.q <= 1.0:
            raise ValueError(f"q must lie in [0, 1], got {self.q}")


def type1_error_probability(query: QRiskQuery) -> float:
    """P(fewer than q*w of w fair coin flips are negative), exactly.

    Integer binomial sums; the comparison `i < q*w` is the float complement
    of the decision rule's `count >= q*w`, so calculator and rule agree on
    boundary cases.  q = 0 gives an empty sum, hence 0.
    """
    total = 0
    for i in range(query.w + 1):
        if not i < query.q * query.w:
            break
        total += math.comb(query.w, i)
    return total / 2.0**query.w


@dataclass(frozen=True)
class GridRow:
    w: int
    q: float
    eta: float
    seed: int
    final_log_loss: float


def run_grid_cell(
    problem: Problem,
    base_config: SplitSgdConfig,
    w: int,
    q: float,
    eta: float,
    seed: int,
    rng: RngStream,
    budget_epochs: int,
    start_base: np.ndarray | None = None,
    start_noise_sd: float = 0.1,
) -> GridRow:
    """One SplitSGD run for one (w, q, eta, seed) cell.

    l is recomputed so w*l = n (one epoch per diagnostic); divergence is
    recorded as +inf final log loss.  ``rng`` is the per-seed stream, so
    cells sharing a seed share the start point and draw sequence.
    """
    n = problem.spec.n
    if n % w != 0:
        raise ValueError(f"w={w} does not divide n={n}; cannot size windows to one epoch")
    cfg = replace(base_config, eta=eta, w=w, l=n // w, q=q)
    if start_base is None:
        start_base = reversed_start(problem.spec)
    theta0 = perturbed_start(start_base, rng.fork(_CHILD_START), start_noise_sd)
    try:
        trace = run_splitsgd(problem, cfg, theta0, rng.fork(_CHILD_BURN_IN), budget_epochs)
        value = final_log_loss(trace)
    except DivergenceError:
        value = math.inf
    return GridRow(w=w, q=q, eta=eta, seed=seed, final_log_loss=value)


def sensitivity_grid(
    problem: Problem,
    base_config: SplitSgdConfig,
    w_values,
    q_values,
    eta_values,
    seeds,
    budget_epochs: int,
    rng: RngStream,
    start_base: np.ndarray | None = None,
) -> list[GridRow]:
    """Full (w, q, eta, seed) product of :func:`run_grid_cell` rows, in
    canonical (w, q, eta, seed) order."""
    rows = []
    for w in w_values:
        for q in q_values:
            for eta in eta_values:
                for seed in seeds:
                    rows.append(
                        run_grid_cell(
                            problem,
                            base_config,
                            w,
                            q,
                            eta,
                            seed,
                            rng.fork(seed),
                            budget_epochs,
                            start_base=start_base,
                        )
                    )
    return rows


def aggregate_grid(rows: list[GridRow]) -> dict[tuple[int, float, float], float]:
    """Mean final log loss over seeds per (w, q, eta) cell."""
    sums: dict[tuple[int, float, float], list[float]] = {}
    for row in rows:
        sums.setdefault((row.w, row.q, row.eta), []).append(row.final_log_loss)
    return {key: float(np.mean(vals)) for key, vals in sums.items()}
