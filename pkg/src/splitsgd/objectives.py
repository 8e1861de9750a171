"""Synthetic convex benchmark problems: linear and logistic regression.

A ProblemSpec pins the data distribution (Gaussian features, exponentially
decaying true coefficients) and a data stream; Dataset is the realized
design matrix / target pair.  Per-datum losses are mean-reduced, so the
stochastic gradient at a uniformly drawn index is an unbiased estimate of
the full gradient.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .core import GradientSample, RngStream, as_param_vector

__all__ = [
    "Dataset",
    "FAMILIES",
    "Problem",
    "ProblemSpec",
    "build_problem",
    "default_theta_star",
    "full_gradient",
    "full_loss",
    "generate",
    "gradient_at_index",
    "loss_at_index",
    "make_default_spec",
    "make_oracle",
    "noiseless_oracle",
    "perturbed_start",
    "read_dataset_csv",
    "reversed_start",
    "sigmoid",
    "stochastic_gradient",
    "write_dataset_csv",
]

FAMILIES = ("linear", "logistic")

DEFAULT_N = 1000
DEFAULT_D = 20
DEFAULT_NOISE_SD = 1.0

# Dedicated child ids so data generation never shares a stream with
# optimizer noise or start-point perturbations derived from the same root.
DATA_STREAM_CHILD = 0xDA7A
START_STREAM_CHILD = 0x57A7


def default_theta_star(d: int = DEFAULT_D) -> np.ndarray:
    """True coefficients 5*exp(-j/2), j = 1..d (steeply decaying)."""
    j = np.arange(1, d + 1, dtype=np.float64)
    return 5.0 * np.exp(-j / 2.0)


@dataclass(frozen=True)
class ProblemSpec:
    """Everything needed to deterministically realize a benchmark dataset."""

    family: str
    n: int
    d: int
    theta_star: np.ndarray
    noise_sd: float
    data_seed: RngStream

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}, expected one of {FAMILIES}")
        if self.n < 1 or self.d < 1:
            raise ValueError("n and d must be positive")
        if self.noise_sd < 0.0:
            raise ValueError("noise_sd must be >= 0")
        object.__setattr__(self, "theta_star", as_param_vector(self.theta_star))
        if self.theta_star.shape != (self.d,):
            raise ValueError(f"theta_star has shape {self.theta_star.shape}, expected ({self.d},)")


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray  # (n, d)
    targets: np.ndarray  # (n,)


@dataclass(frozen=True)
class Problem:
    spec: ProblemSpec
    dataset: Dataset


def make_default_spec(
    family: str,
    data_seed: RngStream | None = None,
    *,
    n: int = DEFAULT_N,
    d: int = DEFAULT_D,
    noise_sd: float = DEFAULT_NOISE_SD,
) -> ProblemSpec:
    """Standard benchmark: n=1000 Gaussian rows in d=20 dimensions."""
    if data_seed is None:
        data_seed = RngStream(0).fork(DATA_STREAM_CHILD)
    return ProblemSpec(
        family=family,
        n=n,
        d=d,
        theta_star=default_theta_star(d),
        noise_sd=noise_sd,
        data_seed=data_seed,
    )


def sigmoid(z):
    """Numerically safe logistic function for arrays.

    Clipping at |z| = 40 is exact in float64: the sigmoid saturates to
    0.0 / 1.0 well before that.
    """
    z = np.clip(z, -40.0, 40.0)
    return 1.0 / (1.0 + np.exp(-z))


def _sigmoid_scalar(z: float) -> float:
    # Scalar twin of sigmoid() for the per-draw hot paths.
    if z < -40.0:
        z = -40.0
    elif z > 40.0:
        z = 40.0
    return 1.0 / (1.0 + math.exp(-z))


def _log1pexp(z: float) -> float:
    # log(1 + e^z), stable for any float z.
    if z > 0.0:
        return z + math.log1p(math.exp(-z))
    return math.log1p(math.exp(z))


def generate(spec: ProblemSpec) -> Dataset:
    """Realize the dataset from the spec's data stream.

    Draw order is fixed (features, then target noise) so the feature matrix
    is identical across families sharing a data stream.
    """
    gen = spec.data_seed.generator()
    x = gen.standard_normal((spec.n, spec.d))
    z = x @ spec.theta_star
    if spec.family == "linear":
        targets = z + spec.noise_sd * gen.standard_normal(spec.n)
    else:
        targets = (gen.random(spec.n) < sigmoid(z)).astype(np.float64)
    return Dataset(features=x, targets=targets)


def build_problem(spec: ProblemSpec | Problem) -> Problem:
    """Materialize the dataset for ``spec``; built problems pass through."""
    if isinstance(spec, Problem):
        return spec
    return Problem(spec=spec, dataset=generate(spec))


def loss_at_index(dataset: Dataset, family: str, theta: np.ndarray, index: int) -> float:
    x = dataset.features[index]
    y = dataset.targets[index]
    z = float(np.dot(x, theta))
    if family == "linear":
        r = z - y
        return 0.5 * r * r
    return _log1pexp(z) - y * z


def gradient_at_index(dataset: Dataset, family: str, theta: np.ndarray, index: int) -> np.ndarray:
    """Per-datum gradient; the single home of the gradient formulas."""
    x = dataset.features[index]
    y = dataset.targets[index]
    z = float(np.dot(x, theta))
    if family == "linear":
        return (z - y) * x
    return (_sigmoid_scalar(z) - y) * x


def stochastic_gradient(
    dataset: Dataset, family: str, theta: np.ndarray, gen: np.random.Generator
) -> GradientSample:
    """Gradient at one uniformly drawn index (with replacement)."""
    i = int(gen.integers(0, dataset.features.shape[0]))
    return GradientSample(
        gradient=gradient_at_index(dataset, family, theta, i),
        loss_value=loss_at_index(dataset, family, theta, i),
    )


def make_oracle(dataset: Dataset, family: str) -> Callable[[np.ndarray, np.random.Generator], GradientSample]:
    """Bind a (dataset, family) pair into the oracle signature used by the
    diagnostic: oracle(theta, gen) -> GradientSample."""

    def oracle(theta: np.ndarray, gen: np.random.Generator) -> GradientSample:
        return stochastic_gradient(dataset, family, theta, gen)

    return oracle


def noiseless_oracle(dataset: Dataset, family: str) -> Callable[[np.ndarray, np.random.Generator], GradientSample]:
    """Oracle that returns the exact full gradient (ignores the stream)."""

    def oracle(theta: np.ndarray, gen: np.random.Generator) -> GradientSample:
        return GradientSample(
            gradient=full_gradient(dataset, family, theta),
            loss_value=full_loss(dataset, family, theta),
        )

    return oracle


def full_loss(dataset: Dataset, family: str, theta: np.ndarray) -> float:
    """Mean per-datum loss over the whole dataset.

    Overflow to +inf is deliberate for near-divergent iterates: comparison
    grids record such cells as infinite loss instead of aborting.
    """
    with np.errstate(over="ignore"):
        z = dataset.features @ theta
        if family == "linear":
            r = z - dataset.targets
            return float(0.5 * np.mean(r * r))
        return float(np.mean(np.logaddexp(0.0, z) - dataset.targets * z))


def full_gradient(dataset: Dataset, family: str, theta: np.ndarray) -> np.ndarray:
    z = dataset.features @ theta
    if family == "linear":
        r = z - dataset.targets
    else:
        r = sigmoid(z) - dataset.targets
    return dataset.features.T @ r / dataset.features.shape[0]


def reversed_start(spec: ProblemSpec) -> np.ndarray:
    """Far starting point 5*exp(-(d-j)/2), j = 1..d.

    The decay profile of the true coefficients, mirrored: the largest entry
    sits in the last coordinate (value 5 at j = d) where the true vector is
    smallest, and vice versa.
    """
    j = np.arange(1, spec.d + 1, dtype=np.float64)
    return 5.0 * np.exp(-(spec.d - j) / 2.0)


def perturbed_start(base: np.ndarray, rng: RngStream, noise_sd: float = 0.1) -> np.ndarray:
    """base + N(0, noise_sd^2 I) drawn from a dedicated stream."""
    gen = rng.generator()
    return base + noise_sd * gen.standard_normal(base.shape[0])


def write_dataset_csv(dataset: Dataset, path) -> None:
    """Write the dataset as CSV with header x1..xd,y (debug interchange)."""
    n, d = dataset.features.shape
    header = [f"x{j}" for j in range(1, d + 1)] + ["y"]
    with open(path, "w", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for i in range(n):
            row = [repr(float(v)) for v in dataset.features[i]]
            row.append(repr(float(dataset.targets[i])))
            fh.write(",".join(row) + "\n")


def read_dataset_csv(path) -> Dataset:
    """Inverse of :func:`write_dataset_csv`."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if not header or header[-1] != "y" or len(header) < 2:
            raise ValueError(f"unexpected dataset header: {header!r}")
        rows = [[float(v) for v in row] for row in reader if row]
    arr = np.asarray(rows, dtype=np.float64)
    return Dataset(features=np.ascontiguousarray(arr[:, :-1]), targets=np.ascontiguousarray(arr[:, -1]))
