"""Two-thread splitting diagnostic for stationarity of constant-rate SGD.

From a common starting point, two SGD threads run on independent sample
streams.  Each thread's trajectory is cut into w windows of l steps and the
sampled gradients are averaged per window; the inner products of paired
window means ("gradient coherences") stay positive while both threads
descend a shared trend and behave like fair coin flips once the iterates
bounce around a stationary distribution.  The decision rule counts negative
coherences against a q*w threshold.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .core import (
    DivergenceError,
    GradientSample,
    OptimizerKernel,
    RngStream,
    dot,
    sgd_step,
)

__all__ = [
    "DiagnosticConfig",
    "DiagnosticResult",
    "decide",
    "gradient_coherence_trace",
    "run_diagnostic",
]

Oracle = Callable[[np.ndarray, np.random.Generator], GradientSample]

# Child ids of the two diagnostic threads under the diagnostic's stream.
_THREAD_CHILDREN = (1, 2)


@dataclass(frozen=True)
class DiagnosticConfig:
    """Shape of one diagnostic: step size, windows, window length, threshold.

    eta may be zero (frozen iterates are legal; the window means then simply
    average gradients at the start point).  q is the fraction of windows
    that must come out negative to call the process stationary.
    """

    eta: float
    w: int = 20
    l: int = 50
    q: float = 0.4

    def __post_init__(self):
        if self.eta < 0.0:
            raise ValueError(f"eta must be >= 0, got {self.eta}")
        if self.w < 1 or self.l < 1:
            raise ValueError("w and l must be positive integers")
        if not 0.0 <= self.q <= 1.0:
            raise ValueError(f"q must lie in [0, 1], got {self.q}")


@dataclass(frozen=True)
class DiagnosticResult:
    theta_d: np.ndarray  # midpoint of the two final iterates
    stationary: bool
    coherences: np.ndarray  # (w,) inner products of paired window means
    negative_count: float  # sum of (1 - sign(Q_i)) / 2; zeros count one half


def decide(coherences, q: float) -> tuple[bool, float]:
    """Apply the counting rule to a sequence of coherences.

    Returns (stationary, negative_count) where negative_count adds 1 per
    negative value and 1/2 per exact zero; stationary iff
    negative_count >= q * len(coherences).
    """
    values = np.asarray(coherences, dtype=np.float64)
    if values.ndim != 1 or values.size == 0:
        raise ValueError("coherences must be a non-empty 1-D sequence")
    if not 0.0 <= q <= 1.0:
        raise ValueError(f"q must lie in [0, 1], got {q}")
    negative_count = float(np.count_nonzero(values < 0.0)) + 0.5 * float(
        np.count_nonzero(values == 0.0)
    )
    return negative_count >= q * values.size, negative_count


def _run_thread(
    oracle: Oracle,
    theta_in: np.ndarray,
    cfg: DiagnosticConfig,
    kernel: OptimizerKernel,
    gen: np.random.Generator,
    thread_id: int,
) -> tuple[np.ndarray, np.ndarray]:
    """One thread: w*l oracle-driven steps, per-window gradient means."""
    theta = theta_in.copy()
    means = np.empty((cfg.w, theta.shape[0]), dtype=np.float64)
    kern = kernel.fresh()
    plain = kern.kind == "plain"
    step = 0
    for i in range(cfg.w):
        window_start = theta
        acc = np.zeros_like(theta)
        for _ in range(cfg.l):
            sample = oracle(theta, gen)
            acc += sample.gradient
            try:
                theta = sgd_step(theta, sample, cfg.eta, kern, step=step)
            except DivergenceError as err:
                raise DivergenceError(
                    f"diagnostic thread {thread_id} diverged at step {step}",
                    step=step,
                    thread=thread_id,
                ) from err
            step += 1
        means[i] = acc / cfg.l
        if plain and cfg.eta > 0.0:
            # Consistency of the accumulated mean with the iterate
            # displacement over the window (holds exactly for the plain
            # kernel, up to float cancellation).
            assert np.allclose(
                means[i], (window_start - theta) / (cfg.l * cfg.eta), rtol=1e-9, atol=1e-9
            )
    return means, theta


def _two_thread_window_means(
    oracle: Oracle,
    theta_in: np.ndarray,
    cfg: DiagnosticConfig,
    kernel: OptimizerKernel | None,
    rng: RngStream,
    *,
    swap_threads: bool = False,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Run both threads on independent child streams.

    swap_threads exchanges the two child stream ids (used to check that the
    diagnostic is symmetric in its threads).
    """
    kernel = kernel if kernel is not None else OptimizerKernel()
    children = _THREAD_CHILDREN if not swap_threads else _THREAD_CHILDREN[::-1]
    means_1, theta_1 = _run_thread(
        oracle, theta_in, cfg, kernel, rng.fork(children[0]).generator(), thread_id=1
    )
    means_2, theta_2 = _run_thread(
        oracle, theta_in, cfg, kernel, rng.fork(children[1]).generator(), thread_id=2
    )
    return means_1, means_2, theta_1, theta_2


def run_diagnostic(
    oracle: Oracle,
    theta_in: np.ndarray,
    cfg: DiagnosticConfig,
    kernel: OptimizerKernel | None = None,
    rng: RngStream = RngStream(0),
) -> DiagnosticResult:
    """Run the two-thread diagnostic from theta_in.

    Costs exactly 2*w*l oracle calls.  Each thread starts from theta_in with
    a fresh (zero-velocity) kernel and its own child stream of ``rng``.
    """
    means_1, means_2, theta_1, theta_2 = _two_thread_window_means(
        oracle, theta_in, cfg, kernel, rng
    )
    coherences = np.array([dot(means_1[i], means_2[i]) for i in range(cfg.w)])
    stationary, negative_count = decide(coherences, cfg.q)
    theta_d = (theta_1 + theta_2) / 2.0
    return DiagnosticResult(
        theta_d=theta_d,
        stationary=stationary,
        coherences=coherences,
        negative_count=negative_count,
    )


def gradient_coherence_trace(
    oracle: Oracle,
    theta_in: np.ndarray,
    cfg: DiagnosticConfig,
    kernel: OptimizerKernel | None = None,
    rng: RngStream = RngStream(0),
) -> np.ndarray:
    """Cosine-normalized per-window coherences (0 where a mean vanishes)."""
    means_1, means_2, _, _ = _two_thread_window_means(oracle, theta_in, cfg, kernel, rng)
    out = np.zeros(cfg.w, dtype=np.float64)
    for i in range(cfg.w):
        n1 = float(np.linalg.norm(means_1[i]))
        n2 = float(np.linalg.norm(means_2[i]))
        if n1 > 0.0 and n2 > 0.0:
            # Clamp the float quotient into the mathematically guaranteed
            # range (rounding can push it past +/-1 by an ulp).
            out[i] = min(1.0, max(-1.0, dot(means_1[i], means_2[i]) / (n1 * n2)))
    return out
