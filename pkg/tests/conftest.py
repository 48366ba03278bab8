import math

import numpy as np
import pytest

from tracehmc import ad
from tracehmc.dist import Normal
from tracehmc.model import Model
from tracehmc.trace import C, D


class ScriptedRng:
    """Stand-in generator that replays fixed draws, falling back to a real one."""

    def __init__(self, normals=(), laplaces=(), uniforms=(), integers=(), seed=0):
        self.normals = list(normals)
        self.laplaces = list(laplaces)
        self.uniforms = list(uniforms)
        self.ints = list(integers)
        self.fallback = np.random.default_rng(seed)

    def standard_normal(self, size=None):
        if size is None:
            return self.normals.pop(0) if self.normals else self.fallback.standard_normal()
        return np.array([self.standard_normal() for _ in range(size)])

    def laplace(self):
        return self.laplaces.pop(0) if self.laplaces else self.fallback.laplace()

    def random(self):
        return self.uniforms.pop(0) if self.uniforms else self.fallback.random()

    def uniform(self, lo, hi):
        return lo + (hi - lo) * self.random()

    def integers(self, n):
        return self.ints.pop(0) if self.ints else int(self.fallback.integers(n))

    def permutation(self, a):
        return self.fallback.permutation(a)


def gaussian2d(mu=(0.5, -0.3), cov=((1.0, 0.4), (0.4, 0.6))) -> Model:
    """Full-support target whose posterior is N(mu, cov) on two continuous sites."""
    mu = np.asarray(mu, dtype=float)
    prec = np.linalg.inv(np.asarray(cov, dtype=float))
    unit = Normal(0.0, 1.0)

    def program(ctx):
        x = ctx.sample(unit, C)
        y = ctx.sample(unit, C)
        dx, dy = ad.add(x, -mu[0]), ad.add(y, -mu[1])
        quad = ad.add(ad.add(ad.mul(prec[0, 0], ad.square(dx)), ad.mul(2 * prec[0, 1], ad.mul(dx, dy))),
                      ad.mul(prec[1, 1], ad.square(dy)))
        # cancel the base density so the posterior is exactly N(mu, cov)
        ctx.factor(ad.add(ad.mul(-0.5, quad), ad.mul(0.5, ad.add(ad.square(x), ad.square(y)))))
        return [float(ad._primal(x)), float(ad._primal(y))]

    return Model(program, name="gaussian2d")


def prior_only(n: int = 1, kind=C) -> Model:
    """``n`` sites and no observations: the posterior is the base measure."""
    unit = Normal(0.0, 1.0)

    def program(ctx):
        return [float(ad._primal(ctx.sample(unit, kind))) for _ in range(n)]

    return Model(program, name=f"prior{n}")


def step_model(c: float, kind=D) -> Model:
    """One site; log weight 0 below zero and -c at or above it."""
    unit = Normal(0.0, 1.0)

    def program(ctx):
        x = ctx.sample(unit, kind)
        if float(ad._primal(x)) >= 0:
            ctx.factor(-c)
        return [float(ad._primal(x))]

    return Model(program, name="step", thresholds=lambda i: 0.0)


def discrete_choice() -> Model:
    """First site picks a branch; the upper branch reads a second site."""
    unit = Normal(0.0, 1.0)

    def program(ctx):
        a = float(ctx.sample(unit, D))
        if a < 0:
            ctx.factor(0.3 * a)
            return [0]
        b = float(ctx.sample(unit, D))
        ctx.factor(-0.5 * (b - a) ** 2)
        return [1]

    return Model(program, name="choice")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def log_phi(x):
    return -0.5 * math.log(2 * math.pi) - 0.5 * x * x


def benchmark_models() -> dict:
    from tracehmc.models import dpmm, generate_mixture_data, geometric, gmm, random_walk

    train, _ = generate_mixture_data(n_train=12, n_test=4, seed=3)
    return {
        "geometric": geometric(0.2),
        "walk": random_walk(),
        "gmm": gmm(train),
        "dpmm": dpmm(train),
    }


def supported_traces(m: Model, n: int, seed: int = 0, cap: int = 10_000) -> list:
    """Prior traces with positive weight, drawn by running ``m`` forwards."""
    from tracehmc.model import run_extending

    r = np.random.default_rng(seed)
    out = []
    while len(out) < n:
        res, q = run_extending(m, [], lambda kind, t: float(r.standard_normal()), cap=cap)
        if res.ok and res.log_weight > -math.inf:
            out.append(q)
    return out


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
