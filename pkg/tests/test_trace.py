import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tracehmc.dist import Normal
from tracehmc.model import Model, run
from tracehmc.models import geometric, two_branch
from tracehmc.trace import (
    OutOfDomain,
    State,
    as_trace,
    log_base_density,
    log_truncation,
    potential,
    supported_prefix,
    truncation,
)

from conftest import benchmark_models, supported_traces

finite = st.floats(-8, 8, allow_nan=False)


@pytest.mark.parametrize("q, expected", [([0.0], -0.9189385), ([0.0, 0.0], -1.8378771),
                                         ([1.0], -1.4189385)])
def test_log_base_density_examples(q, expected):
    assert log_base_density(q) == pytest.approx(expected, abs=1e-7)


def test_log_base_density_rejects_empty_and_nan():
    with pytest.raises(ValueError):
        log_base_density([])
    with pytest.raises(ValueError):
        log_base_density([0.0, math.nan])


def test_as_trace_rejects_non_finite():
    assert as_trace([]).shape == (0,)
    with pytest.raises(ValueError):
        as_trace([1.0, math.inf])


def test_state_lengths_must_match():
    with pytest.raises(ValueError):
        State(np.zeros(2), np.zeros(3))


@given(st.lists(finite, min_size=1, max_size=6), st.lists(finite, min_size=1, max_size=6))
def test_log_base_density_additive(q, r):
    assert log_base_density(q + r) == pytest.approx(log_base_density(q) + log_base_density(r))


def test_supported_prefix_geometric():
    m = geometric(0.2)
    np.testing.assert_array_equal(supported_prefix([-1.0, 5.0], m), [-1.0])
    assert supported_prefix([1.0, 2.0], m) is None
    np.testing.assert_array_equal(supported_prefix([1.0, -2.0], m), [1.0, -2.0])


def test_truncation_examples():
    m = geometric(0.2)
    assert truncation(m, [1.0, 2.0]) == 0.0
    assert truncation(m, [1.0, -2.0]) == math.exp(run(m, [1.0, -2.0]).log_weight)
    # explicit sum over the two prefixes
    direct = sum(run(m, [-1.0, 5.0][:k]).density() for k in (1, 2))
    assert truncation(m, [-1.0, 5.0]) == pytest.approx(direct)


def test_potential_examples():
    def const(c):
        return Model(lambda ctx: (ctx.sample(Normal(0, 1)), ctx.factor(c))[0])

    assert potential(const(0.0), [0.3]) == 0.0
    assert potential(const(-2.0), [0.3]) == pytest.approx(2.0)
    assert potential(two_branch(), [-3.1]) == pytest.approx(5.72394, abs=1e-5)
    with pytest.raises(OutOfDomain):
        potential(geometric(0.2), [1.0])


@pytest.mark.parametrize("name", ["geometric", "walk", "gmm", "dpmm"])
def test_prefix_property(name):
    m = benchmark_models()[name]
    r = np.random.default_rng(7)
    traces = supported_traces(m, 100, seed=1)
    # random traces and supported ones padded with noise
    traces += [r.standard_normal(r.integers(1, 30)) for _ in range(100)]
    traces += [np.concatenate([q, r.standard_normal(3)]) for q in traces[:50]]
    for q in traces:
        positive = [k for k in range(1, len(q) + 1) if run(m, q[:k]).density_log_weight > -math.inf]
        assert len(positive) <= 1


@pytest.mark.parametrize("name", ["geometric", "walk", "gmm"])
def test_truncation_constant_beyond_support(name):
    m = benchmark_models()[name]
    r = np.random.default_rng(2)
    for q in supported_traces(m, 30, seed=4):
        extended = np.concatenate([q, r.standard_normal(5)])
        assert log_truncation(m, extended) == log_truncation(m, q)


@settings(max_examples=50)
@given(st.floats(-5, 0, allow_nan=False))
def test_potential_recovers_truncation(x):
    m = two_branch()
    assert math.exp(-potential(m, [x])) == pytest.approx(truncation(m, [x]), rel=1e-12)
