"""Numeric primitives shared by the whole toolkit.

Parameter vectors are plain 1-D float64 numpy arrays; this module adds the
validation helpers, the seeded/forkable random-stream handle, the gradient
sample container, and the single-step SGD update kernels (plain and
momentum).  Everything downstream builds on these.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "DimensionError",
    "DivergenceError",
    "GradientSample",
    "NumericError",
    "OptimizerKernel",
    "ParamVector",
    "RngStream",
    "as_param_vector",
    "dot",
    "fork_stream",
    "sgd_step",
]

# A parameter vector is just a 1-D float64 ndarray of fixed dimension.
ParamVector = np.ndarray

_MASK64 = (1 << 64) - 1


class NumericError(RuntimeError):
    """A quantity that must be finite is not (inf or NaN)."""

    def __init__(self, message: str, step: int | None = None):
        super().__init__(message)
        self.step = step


class DivergenceError(NumericError):
    """An optimizer iterate left the finite range.

    ``step`` is the gradient-step index at which the blow-up was detected and
    ``thread`` identifies the diagnostic thread (1 or 2) when applicable.
    """

    def __init__(self, message: str, step: int | None = None, thread: int | None = None):
        super().__init__(message, step=step)
        self.thread = thread


class DimensionError(ValueError):
    """Operands of an update or inner product have mismatched dimensions."""


def as_param_vector(values, *, require_finite: bool = True) -> ParamVector:
    """Coerce to a 1-D float64 array, validating shape (and finiteness)."""
    arr = np.ascontiguousarray(values, dtype=np.float64)
    if arr.ndim != 1:
        raise DimensionError(f"parameter vector must be 1-D, got shape {arr.shape}")
    if require_finite and not np.isfinite(arr).all():
        raise NumericError("parameter vector contains non-finite entries")
    return arr


def _mix64(a: int, b: int) -> int:
    """Deterministic 64-bit mixer (splitmix64 finalizer over two words)."""
    x = (a * 0x9E3779B97F4A7C15 + b + 0x632BE59BD9B4E019) & _MASK64
    x ^= x >> 30
    x = (x * 0xBF58476D1CE4E5B9) & _MASK64
    x ^= x >> 27
    x = (x * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


@dataclass(frozen=True)
class RngStream:
    """Handle for a named, reproducible random stream.

    The pair (seed, stream_id) keys a counter-based Philox generator, so the
    same pair always yields the same sequence and distinct stream ids give
    statistically independent sequences.  ``fork`` derives child streams
    deterministically; forking never advances or perturbs the parent.
    """

    seed: int
    stream_id: int = 0

    def generator(self) -> np.random.Generator:
        """Fresh generator positioned at the start of this stream."""
        key = np.array([self.seed & _MASK64, self.stream_id & _MASK64], dtype=np.uint64)
        return np.random.Generator(np.random.Philox(key=key))

    def fork(self, child_id: int) -> "RngStream":
        """Child stream for ``child_id``; same child id -> same stream."""
        return RngStream(self.seed, _mix64(self.stream_id & _MASK64, child_id & _MASK64))


def fork_stream(parent: RngStream, child_id: int) -> RngStream:
    """Functional alias for :meth:`RngStream.fork`."""
    return parent.fork(child_id)


@dataclass(frozen=True)
class GradientSample:
    """One stochastic gradient draw, with the per-datum loss when cheap."""

    gradient: np.ndarray
    loss_value: float | None = None


@dataclass
class OptimizerKernel:
    """Update-rule state for :func:`sgd_step`.

    ``kind`` is "plain" (theta -= eta * g) or "momentum"
    (v <- momentum * v + g; theta -= eta * v).  The velocity buffer is the
    only mutable state in the core types; ``fresh()`` returns a zero-velocity
    copy of the same kernel spec.
    """

    kind: str = "plain"
    momentum: float = 0.0
    velocity: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.kind not in ("plain", "momentum"):
            raise ValueError(f"unknown kernel kind {self.kind!r}")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError(f"momentum coefficient must lie in [0, 1), got {self.momentum}")

    def fresh(self) -> "OptimizerKernel":
        return OptimizerKernel(self.kind, self.momentum)

    def reset_velocity(self) -> None:
        self.velocity = None


def sgd_step(
    theta: ParamVector,
    sample: GradientSample,
    eta: float,
    kernel: OptimizerKernel | None = None,
    *,
    step: int | None = None,
) -> ParamVector:
    """One SGD update; returns the new iterate (inputs untouched).

    Raises NumericError for a non-finite gradient, DimensionError on shape
    mismatch, and DivergenceError if the updated iterate is non-finite.
    """
    if eta < 0.0:
        raise ValueError(f"step size must be >= 0, got {eta}")
    g = sample.gradient
    if g.shape != theta.shape:
        raise DimensionError(f"gradient shape {g.shape} != parameter shape {theta.shape}")
    if not np.isfinite(g).all():
        raise NumericError("gradient has non-finite entries", step=step)

    if kernel is None or kernel.kind == "plain":
        out = theta - eta * g
    else:
        if kernel.velocity is None:
            kernel.velocity = np.zeros_like(theta)
        kernel.velocity = kernel.momentum * kernel.velocity + g
        out = theta - eta * kernel.velocity

    if not np.isfinite(out).all():
        raise DivergenceError("iterate diverged (non-finite after update)", step=step)
    return out


def dot(a: np.ndarray, b: np.ndarray) -> float:
    """Inner product with a dimension check; single fixed code path."""
    if a.shape != b.shape:
        raise DimensionError(f"dot operands differ in shape: {a.shape} vs {b.shape}")
    return float(np.dot(a, b))
