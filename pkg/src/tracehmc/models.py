"""Benchmark models: geometric, random walk, Gaussian mixture and DP mixture."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from tracehmc import ad
from tracehmc.dist import Beta1, Normal, Poisson, Uniform, normal_inv_cdf
from tracehmc.model import Model
from tracehmc.trace import C, D, Kind

MIX_SIGMA = 10.0
BOX = (0.0, 100.0)
_LOG_NORM3 = 3.0 * (math.log(MIX_SIGMA) + 0.5 * math.log(2.0 * math.pi))


def geometric(p: float = 0.2, kind: Kind = D) -> Model:
    """Number of biased coin flips up to and including the first success."""
    if not 0.0 < p < 1.0:
        raise ValueError("geometric needs 0 < p < 1")
    coin = Uniform(0.0, 1.0)

    def program(ctx):
        k = 1
        while not ctx.sample(coin, kind) < p:
            k += 1
        return [k]

    cut = normal_inv_cdf(p)
    return Model(program, name=f"geometric({p})", thresholds=lambda i: cut)


def geometric_pmf(k: int, p: float = 0.2) -> float:
    return (1.0 - p) ** (k - 1) * p


def random_walk(max_distance: float = 10.0, observed: float = 1.1, noise: float = 0.1,
                start_kind: Kind = D, step_kind: Kind = D) -> Model:
    """One-sided walk from a uniform start in [0, 3]; returns the start.

    The start only enters the weight through the loop exit, so the potential
    is piecewise constant in it; it is tagged discontinuous by default.
    """
    start_dist = Uniform(0.0, 3.0)
    step_dist = Uniform(-1.0, 1.0)
    likelihood = Normal(observed, noise)

    def program(ctx):
        start = ctx.sample(start_dist, start_kind)
        position = start
        distance = 0.0
        while position > 0 and distance < max_distance:
            step = ctx.sample(step_dist, step_kind)
            position = position + step
            distance += abs(step)
        ctx.observe(likelihood, distance)
        return [float(ad._primal(start))]

    return Model(program, name="walk")


def two_branch() -> Model:
    """Two-branch density used to illustrate extension.

    ``w([q1]) = phi(0 | q1, 1)`` for ``q1 <= 0`` and
    ``w([q1, q2]) = phi(q2 | q1, 1)`` for ``0 < q1 <= q2``.
    """
    unit = Normal(0.0, 1.0)

    def program(ctx):
        x = ctx.sample(unit, C)
        if x <= 0:
            ctx.observe(Normal(x, 1.0), 0.0)
            return [float(ad._primal(x))]
        y = ctx.sample(unit, C)
        if not x <= y:
            ctx.factor(-math.inf)
        ctx.observe(Normal(x, 1.0), y)
        return [float(ad._primal(x)), float(ad._primal(y))]

    return Model(program, name="two_branch")


@dataclass(frozen=True)
class Dataset3D:
    points: np.ndarray  # (n, 3)
    seed: int
    k_true: int
    means: np.ndarray  # (k_true, 3)

    def __post_init__(self):
        if self.points.ndim != 2 or self.points.shape[1] != 3:
            raise ValueError("Dataset3D points must have shape (n, 3)")

    def __len__(self) -> int:
        return len(self.points)

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["x", "y", "z"])
            writer.writerows(self.points.tolist())

    @staticmethod
    def points_from_csv(path: str | Path) -> np.ndarray:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))[1:]
        return np.array(rows, dtype=float).reshape(-1, 3)


def generate_mixture_data(n_train: int = 200, n_test: int = 50, k_true: int = 9,
                          seed: int = 0) -> tuple[Dataset3D, Dataset3D]:
    """Training and test sets drawn from one fixed mixture with ``k_true`` components."""
    rng = np.random.default_rng(seed)
    means = rng.uniform(*BOX, size=(k_true, 3))

    def draw(n):
        comp = rng.integers(k_true, size=n)
        return means[comp] + MIX_SIGMA * rng.standard_normal((n, 3))

    train = draw(n_train)
    test = draw(n_test)
    return (Dataset3D(train, seed, k_true, means), Dataset3D(test, seed, k_true, means))


def mixture_log_lik(points: np.ndarray, means, log_weights) -> object:
    """``sum_n log sum_k w_k N3(x_n | mu_k, 10^2 I)``; ``means`` may be an ad.Var."""
    diff = points[:, None, :] - means  # (n, k, 3)
    sq = ad.sum_(ad.square(diff), axis=2)
    comp = -0.5 / MIX_SIGMA**2 * sq - _LOG_NORM3 + log_weights
    return ad.sum_(ad.logsumexp(comp, axis=1))


def pointwise_mixture_lik(points: np.ndarray, means: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Per-point log likelihood under a mixture (plain arrays)."""
    means = np.asarray(means, dtype=float).reshape(-1, 3)
    diff = points[:, None, :] - means
    comp = -0.5 / MIX_SIGMA**2 * np.sum(diff**2, axis=2) - _LOG_NORM3 + np.log(weights)
    m = comp.max(axis=1, keepdims=True)
    return (m + np.log(np.exp(comp - m).sum(axis=1, keepdims=True)))[:, 0]


def gmm(training: Dataset3D | np.ndarray, rate: float = 10.0) -> Model:
    """Mixture with ``K ~ Poisson(rate) + 1`` components; value ``[K, mu_1, ..., mu_K]``."""
    points = training.points if isinstance(training, Dataset3D) else np.asarray(training, float)
    if len(points) == 0:
        raise ValueError("gmm needs a nonempty training set")
    count = Poisson(rate)
    box = Uniform(*BOX)

    def program(ctx):
        k = ctx.sample(count, D) + 1
        coords = [ctx.sample(box, C) for _ in range(3 * k)]
        means = ad.reshape(ad.stack(coords), (k, 3))
        ctx.factor(mixture_log_lik(points, means, -math.log(k)))
        return [k] + [float(v) for v in np.ravel(ad._primal(means))]

    return Model(program, name="gmm")


def gmm_params(value: Sequence[float]) -> tuple[np.ndarray, np.ndarray]:
    """Decode a gmm return value into (weights, means)."""
    k = int(value[0])
    means = np.asarray(value[1 : 1 + 3 * k], dtype=float).reshape(k, 3)
    return np.full(k, 1.0 / k), means


def dpmm(training: Dataset3D | np.ndarray, alpha: float = 5.0, eps_cut: float = 0.01) -> Model:
    """Stick-breaking mixture truncated once the remaining stick is below ``eps_cut``.

    Value is ``[n, w_1, ..., w_n, mu_1, ..., mu_n]``.
    """
    if not 0.0 < eps_cut < 1.0:
        raise ValueError("eps_cut must lie in (0, 1)")
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    points = training.points if isinstance(training, Dataset3D) else np.asarray(training, float)
    proportion = Beta1(alpha)
    box = Uniform(*BOX)

    def program(ctx):
        stick = 1.0
        beta = 0.0
        cumulative_product = 1.0
        weights: list[float] = []
        coords = []
        while stick > eps_cut:
            cumulative_product *= 1.0 - beta
            beta = float(ctx.sample(proportion, D))
            coords.extend(ctx.sample(box, C) for _ in range(3))
            weights.append(beta * cumulative_product)
            stick -= beta * cumulative_product
        w = np.array(weights)
        with np.errstate(divide="ignore"):
            log_w = np.log(w)
        means = ad.reshape(ad.stack(coords), (len(weights), 3))
        ctx.factor(mixture_log_lik(points, means, log_w))
        return [len(weights)] + weights + [float(v) for v in np.ravel(ad._primal(means))]

    return Model(program, name="dpmm")


def dpmm_params(value: Sequence[float]) -> tuple[np.ndarray, np.ndarray]:
    n = int(value[0])
    weights = np.asarray(value[1 : 1 + n], dtype=float)
    means = np.asarray(value[1 + n : 1 + 4 * n], dtype=float).reshape(n, 3)
    return weights, means


def prior_component_count(alpha: float, eps_cut: float, runs: int, seed: int = 0,
                          rng: Optional[np.random.Generator] = None) -> float:
    """Mean number of stick-breaking components under the prior (simulation)."""
    rng = rng or np.random.default_rng(seed)
    total = 0
    for _ in range(runs):
        stick, cp, beta, n = 1.0, 1.0, 0.0, 0
        while stick > eps_cut:
            cp *= 1.0 - beta
            beta = Beta1(alpha).inv_cdf(rng.random())
            stick -= beta * cp
            n += 1
        total += n
    return total / runs
