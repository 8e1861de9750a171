"""Optimizer drivers: SplitSGD and the baseline schedules.

All drivers share one inner stepping loop, charge budget in "units" (one
unit per gradient draw on the main thread; a diagnostic is charged w*l
units because its two threads conceptually run in parallel), and log the
full loss once per epoch boundary (an epoch is n budget units).  The trace
additionally carries the true gradient-evaluation count, which includes
both diagnostic threads (2*w*l per diagnostic).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from ._csvio import fmt_value, write_csv
from .core import (
    DivergenceError,
    OptimizerKernel,
    RngStream,
    as_param_vector,
)
from .diagnostic import DiagnosticConfig, run_diagnostic
from .objectives import Problem, _sigmoid_scalar, full_loss, make_oracle

__all__ = [
    "EVENT_DIAG_N",
    "EVENT_DIAG_S",
    "EVENT_HALVED",
    "EVENT_NONE",
    "EVENT_PFLUG",
    "DiagnosticEvent",
    "RunTrace",
    "ScheduleState",
    "SplitSgdConfig",
    "TraceRecord",
    "final_log_loss",
    "run_constant_sgd",
    "run_pflug_detection",
    "run_pflug_trace",
    "run_sgd_half",
    "run_split_detection",
    "run_splitsgd",
    "run_sqrt_decay_sgd",
    "sqrt_decay_schedule",
]

EVENT_NONE = "none"
EVENT_DIAG_S = "diagnostic-S"
EVENT_DIAG_N = "diagnostic-N"
EVENT_HALVED = "lr-halved"
EVENT_PFLUG = "pflug-detect"

_CHUNK = 1024


@dataclass(frozen=True)
class SplitSgdConfig:
    """Schedule parameters: start rate eta, diagnostic shape (w, l, q),
    diagnostic cap B, initial thread length t1 (in gradient steps), decay
    factor gamma, and the update kernel used by threads and diagnostics."""

    eta: float
    w: int = 20
    l: int = 50
    q: float = 0.4
    B: int = 1_000_000
    t1: int = 4000
    gamma: float = 0.5
    kernel: OptimizerKernel = field(default_factory=OptimizerKernel)

    def __post_init__(self):
        if self.eta < 0.0:
            raise ValueError(f"eta must be >= 0, got {self.eta}")
        if self.w < 1 or self.l < 1:
            raise ValueError("w and l must be positive integers")
        if not 0.0 <= self.q <= 1.0:
            raise ValueError(f"q must lie in [0, 1], got {self.q}")
        if self.B < 0:
            raise ValueError("B must be >= 0")
        if self.t1 < 1:
            raise ValueError("t1 must be a positive number of steps")
        if not 0.0 < self.gamma < 1.0:
            raise ValueError(f"gamma must lie strictly inside (0, 1), got {self.gamma}")


@dataclass(frozen=True)
class ScheduleState:
    """Current (step size, thread length, detection count) of a run."""

    current_eta: float
    current_thread_length: int
    detections: int = 0

    def after_detection(self, gamma: float) -> "ScheduleState":
        # Multiplicative decay and the matching integer thread growth;
        # repeated multiplication keeps the float semantics exact and
        # order-independent of how often the state is inspected.
        return ScheduleState(
            current_eta=self.current_eta * gamma,
            current_thread_length=int(math.floor(self.current_thread_length / gamma)),
            detections=self.detections + 1,
        )


@dataclass(frozen=True)
class TraceRecord:
    epoch: int
    gradient_evals: int
    learning_rate: float  # schedule's current step size when the record is written
    full_loss: float
    event: str = EVENT_NONE


@dataclass(frozen=True)
class DiagnosticEvent:
    """Outcome of one in-run diagnostic and the schedule state after it."""

    index: int  # 1-based diagnostic counter
    stationary: bool
    negative_count: float
    state: ScheduleState


@dataclass
class RunTrace:
    records: list[TraceRecord]
    final_theta: np.ndarray
    total_evals: int
    diagnostics: list[DiagnosticEvent] = field(default_factory=list)

    def write_csv(self, path) -> None:
        write_csv(
            path,
            ["epoch", "gradient_evals", "learning_rate", "full_loss", "event"],
            [
                (r.epoch, r.gradient_evals, r.learning_rate, r.full_loss, r.event)
                for r in self.records
            ],
        )


def final_log_loss(trace: RunTrace) -> float:
    """Natural log of the last recorded full loss (inf-safe)."""
    loss = trace.records[-1].full_loss
    if math.isnan(loss) or loss == math.inf:
        return math.inf
    if loss <= 0.0:
        return -math.inf
    return math.log(loss)


class _EpochLog:
    """Budget counter plus per-epoch-boundary trace records.

    ``charged`` counts budget units, ``evals`` true gradient draws.  The
    ``pending`` event is attached to the first record written at or after
    the event occurred.
    """

    def __init__(self, problem: Problem, record_loss: bool = True):
        self.dataset = problem.dataset
        self.family = problem.spec.family
        self.n = problem.spec.n
        self.record_loss = record_loss
        self.charged = 0
        self.evals = 0
        self.epoch = 0
        self.current_eta = 0.0
        self.pending = EVENT_NONE
        self.records: list[TraceRecord] = []

    def steps_to_boundary(self) -> int:
        return self.n - self.charged % self.n or self.n

    def log_initial(self, theta: np.ndarray, eta: float) -> None:
        self.current_eta = eta
        if self.record_loss:
            self.records.append(
                TraceRecord(0, 0, eta, full_loss(self.dataset, self.family, theta), EVENT_NONE)
            )

    def advance(self, units: int, evals: int, theta: np.ndarray) -> None:
        self.charged += units
        self.evals += evals
        while self.charged >= (self.epoch + 1) * self.n:
            self.epoch += 1
            if self.record_loss:
                self.records.append(
                    TraceRecord(
                        self.epoch,
                        self.evals,
                        self.current_eta,
                        full_loss(self.dataset, self.family, theta),
                        self.pending,
                    )
                )
                self.pending = EVENT_NONE


def _constant_segment(
    features: np.ndarray,
    targets: np.ndarray,
    family: str,
    theta: np.ndarray,
    eta: float,
    steps: int,
    gen: np.random.Generator,
    log: _EpochLog,
    kernel: OptimizerKernel | None = None,
) -> None:
    """Run ``steps`` single-thread SGD updates at fixed eta, in place.

    Chunks are cut at epoch boundaries so boundary records see the exact
    boundary iterate; the chunk pattern depends only on the boundary grid,
    keeping draw sequences identical across drivers that share a stream.
    """
    if steps <= 0:
        return
    n = features.shape[0]
    linear = family == "linear"
    momentum = kernel is not None and kernel.kind == "momentum"
    if momentum:
        if kernel.velocity is None:
            kernel.velocity = np.zeros_like(theta)
        v = kernel.velocity
        mu = kernel.momentum
    log.current_eta = eta
    done = 0
    # Overflow on a blown-up iterate is the detection signal here, not an
    # anomaly: the next residual goes non-finite and raises.
    with np.errstate(over="ignore", invalid="ignore"):
        while done < steps:
            k = min(_CHUNK, steps - done, log.steps_to_boundary())
            idx = gen.integers(0, n, size=k)
            for j in range(k):
                i = idx[j]
                x = features[i]
                z = np.dot(x, theta)
                r = z - targets[i] if linear else _sigmoid_scalar(z) - targets[i]
                if not math.isfinite(r):
                    raise DivergenceError("iterate diverged", step=log.evals + j)
                if momentum:
                    v *= mu
                    v += r * x
                    theta -= eta * v
                else:
                    theta -= (eta * r) * x
            done += k
            log.advance(k, k, theta)


def run_constant_sgd(
    problem: Problem,
    eta: float,
    theta0: np.ndarray,
    rng: RngStream,
    budget_epochs: int,
) -> RunTrace:
    """Plain SGD at a fixed step size for ``budget_epochs`` epochs."""
    if eta < 0.0:
        raise ValueError(f"eta must be >= 0, got {eta}")
    theta = as_param_vector(theta0).copy()
    log = _EpochLog(problem)
    log.log_initial(theta, eta)
    gen = rng.generator()
    _constant_segment(
        problem.dataset.features,
        problem.dataset.targets,
        problem.spec.family,
        theta,
        eta,
        budget_epochs * problem.spec.n,
        gen,
        log,
    )
    return RunTrace(records=log.records, final_theta=theta, total_evals=log.evals)


def sqrt_decay_schedule(eta: float, t: int) -> float:
    """Step size of the t-th draw (1-based) under 1/sqrt(t) decay.

    Starts at 20*eta and crosses eta at t = 400.
    """
    return 20.0 * eta / math.sqrt(t)


def run_sqrt_decay_sgd(
    problem: Problem,
    eta: float,
    theta0: np.ndarray,
    rng: RngStream,
    budget_epochs: int,
) -> RunTrace:
    """SGD with the deterministic 1/sqrt(t) step-size decay."""
    if eta < 0.0:
        raise ValueError(f"eta must be >= 0, got {eta}")
    theta = as_param_vector(theta0).copy()
    features = problem.dataset.features
    targets = problem.dataset.targets
    linear = problem.spec.family == "linear"
    n = problem.spec.n
    log = _EpochLog(problem)
    log.log_initial(theta, sqrt_decay_schedule(eta, 1))
    gen = rng.generator()
    steps = budget_epochs * n
    t = 0
    while t < steps:
        k = min(_CHUNK, steps - t, log.steps_to_boundary())
        idx = gen.integers(0, n, size=k)
        for j in range(k):
            i = idx[j]
            x = features[i]
            z = np.dot(x, theta)
            r = z - targets[i] if linear else _sigmoid_scalar(z) - targets[i]
            if not math.isfinite(r):
                raise DivergenceError("iterate diverged", step=log.evals + j)
            theta -= (sqrt_decay_schedule(eta, t + j + 1) * r) * x
        t += k
        log.current_eta = sqrt_decay_schedule(eta, min(t + 1, steps))
        log.advance(k, k, theta)
    return RunTrace(records=log.records, final_theta=theta, total_evals=log.evals)


def run_sgd_half(
    problem: Problem,
    eta: float,
    t1: int,
    theta0: np.ndarray,
    rng: RngStream,
    budget_epochs: int,
) -> RunTrace:
    """Open-loop halving: threads of length t1, 2*t1, 4*t1, ... at step
    sizes eta, eta/2, eta/4, ...; no diagnostics."""
    if eta < 0.0:
        raise ValueError(f"eta must be >= 0, got {eta}")
    if t1 < 1:
        raise ValueError("t1 must be a positive number of steps")
    theta = as_param_vector(theta0).copy()
    log = _EpochLog(problem)
    log.log_initial(theta, eta)
    gen = rng.generator()
    budget_units = budget_epochs * problem.spec.n
    current_eta = eta
    current_len = t1
    while log.charged < budget_units:
        steps = min(current_len, budget_units - log.charged)
        _constant_segment(
            problem.dataset.features,
            problem.dataset.targets,
            problem.spec.family,
            theta,
            current_eta,
            steps,
            gen,
            log,
        )
        if log.charged >= budget_units:
            break
        current_eta /= 2.0
        current_len *= 2
        log.pending = EVENT_HALVED
        log.current_eta = current_eta
    return RunTrace(records=log.records, final_theta=theta, total_evals=log.evals)


def _splitsgd_engine(
    problem: Problem,
    cfg: SplitSgdConfig,
    theta0: np.ndarray,
    rng: RngStream,
    budget_epochs: int,
    *,
    record_loss: bool = True,
    stop_on_detection: bool = False,
) -> tuple[RunTrace, int | None]:
    theta = as_param_vector(theta0).copy()
    features = problem.dataset.features
    targets = problem.dataset.targets
    family = problem.spec.family
    n = problem.spec.n
    oracle = make_oracle(problem.dataset, family)
    momentum = cfg.kernel.kind == "momentum"

    log = _EpochLog(problem, record_loss=record_loss)
    log.log_initial(theta, cfg.eta)
    gen = rng.generator()
    state = ScheduleState(cfg.eta, cfg.t1)
    events: list[DiagnosticEvent] = []
    budget_units = budget_epochs * n
    diag_cost = cfg.w * cfg.l
    diags_done = 0
    detection_epoch: int | None = None

    while log.charged < budget_units:
        remaining = budget_units - log.charged
        if diags_done >= cfg.B:
            steps = remaining
        else:
            steps = min(state.current_thread_length, remaining)
        _constant_segment(
            features,
            targets,
            family,
            theta,
            state.current_eta,
            steps,
            gen,
            log,
            kernel=cfg.kernel.fresh() if momentum else None,
        )
        remaining = budget_units - log.charged
        if remaining <= 0 or diags_done >= cfg.B or remaining < diag_cost:
            # No room (or no budget) for another full diagnostic; the loop
            # either exits or keeps threading to the end of the budget.
            continue
        diags_done += 1
        diag_cfg = DiagnosticConfig(eta=state.current_eta, w=cfg.w, l=cfg.l, q=cfg.q)
        result = run_diagnostic(oracle, theta, diag_cfg, cfg.kernel, rng.fork(diags_done))
        theta = result.theta_d.copy()
        if result.stationary:
            state = state.after_detection(cfg.gamma)
            log.pending = EVENT_DIAG_S
        else:
            log.pending = EVENT_DIAG_N
        log.current_eta = state.current_eta
        log.advance(diag_cost, 2 * diag_cost, theta)
        events.append(
            DiagnosticEvent(
                index=diags_done,
                stationary=result.stationary,
                negative_count=result.negative_count,
                state=state,
            )
        )
        if stop_on_detection and result.stationary:
            detection_epoch = math.ceil(log.charged / n)
            break

    trace = RunTrace(
        records=log.records,
        final_theta=theta,
        total_evals=log.evals,
        diagnostics=events,
    )
    return trace, detection_epoch


def run_splitsgd(
    problem: Problem,
    cfg: SplitSgdConfig,
    theta0: np.ndarray,
    rng: RngStream,
    budget_epochs: int,
) -> RunTrace:
    """SplitSGD: constant-rate threads alternating with diagnostics.

    Each stationary verdict multiplies the rate by gamma and stretches the
    next thread by 1/gamma (floored); the continuation point is always the
    midpoint of the two diagnostic threads.  At most cfg.B diagnostics are
    run; the budget (in epochs) always governs the run length.
    """
    trace, _ = _splitsgd_engine(problem, cfg, theta0, rng, budget_epochs)
    return trace


def run_split_detection(
    problem: Problem,
    cfg: SplitSgdConfig,
    theta0: np.ndarray,
    rng: RngStream,
    max_epochs: int = 1000,
) -> int | None:
    """Epochs consumed until the first stationary verdict (threads plus
    diagnostics, in budget units), or None if the budget cap is reached."""
    _, detection = _splitsgd_engine(
        problem, cfg, theta0, rng, max_epochs, record_loss=False, stop_on_detection=True
    )
    return detection


def _pflug_loop(
    problem: Problem,
    eta: float,
    theta0: np.ndarray,
    rng: RngStream,
    max_epochs: int,
    log: _EpochLog | None,
) -> tuple[int | None, np.ndarray, int]:
    if eta < 0.0:
        raise ValueError(f"eta must be >= 0, got {eta}")
    theta = as_param_vector(theta0).copy()
    features = problem.dataset.features
    targets = problem.dataset.targets
    linear = problem.spec.family == "linear"
    n = problem.spec.n
    gen = rng.generator()
    if log is not None:
        log.log_initial(theta, eta)

    running_sum = 0.0
    prev_r = 0.0
    prev_x: np.ndarray | None = None
    evals = 0
    for epoch in range(1, max_epochs + 1):
        done = 0
        while done < n:
            k = min(_CHUNK, n - done)
            idx = gen.integers(0, n, size=k)
            for j in range(k):
                i = idx[j]
                x = features[i]
                z = np.dot(x, theta)
                r = z - targets[i] if linear else _sigmoid_scalar(z) - targets[i]
                if not math.isfinite(r):
                    raise DivergenceError("iterate diverged", step=evals + j)
                if prev_x is not None:
                    # Inner product of consecutive stochastic gradients,
                    # g_t = r_t * x_t, accumulated from the second draw on.
                    running_sum += (r * prev_r) * np.dot(x, prev_x)
                prev_r = r
                prev_x = x
                theta -= (eta * r) * x
            done += k
            evals += k
            if log is not None:
                log.advance(k, k, theta)
        if running_sum < 0.0:
            return epoch, theta, evals
    return None, theta, evals


def run_pflug_detection(
    problem: Problem,
    eta: float,
    theta0: np.ndarray,
    rng: RngStream,
    max_epochs: int = 1000,
) -> int | None:
    """Constant-rate SGD with the running sum of consecutive-gradient inner
    products; reports the first epoch boundary where the sum is negative,
    or None when ``max_epochs`` pass without one."""
    detection, _, _ = _pflug_loop(problem, eta, theta0, rng, max_epochs, log=None)
    return detection


def run_pflug_trace(
    problem: Problem,
    eta: float,
    theta0: np.ndarray,
    rng: RngStream,
    max_epochs: int = 1000,
) -> tuple[int | None, RunTrace]:
    """Traced variant of :func:`run_pflug_detection`; the record at the
    detection epoch carries the "pflug-detect" event."""
    log = _EpochLog(problem)
    detection, theta, evals = _pflug_loop(problem, eta, theta0, rng, max_epochs, log=log)
    records = log.records
    if detection is not None and records:
        last = records[-1]
        records[-1] = replace(last, event=EVENT_PFLUG)
    return detection, RunTrace(records=records, final_theta=theta, total_evals=evals)
