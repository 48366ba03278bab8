"""Baseline samplers: single-site trace MH (prior and random-walk proposals) and importance sampling.

Both MH kernels pick a site uniformly, change that coordinate, and re-run the
program reusing the other coordinates by position; sites past the end are
drawn fresh from N(0, 1) and unread coordinates are dropped.  With target
``w(q) phi(q)`` the Hastings ratio then reduces to

* prior proposal:  ``w(q') |q| / (w(q) |q'|)``
* random walk:     ``w(q') phi(x') |q| / (w(q) phi(x) |q'|)``

where ``x`` and ``x'`` are the old and new values of the chosen site; the
base densities of the fresh and dropped coordinates cancel against the
proposal densities.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Any

import numpy as np

from tracehmc.model import DEFAULT_EXTEND_CAP, ExtendBudgetExceeded, Model, run, run_extending
from tracehmc.nphmc import SamplerConfig, Step, _accept

logger = logging.getLogger(__name__)


@dataclass
class WeightedSample:
    trace: np.ndarray
    value: Any
    log_weight: float


def _fresh(rng):
    return lambda kind, t: float(rng.standard_normal())


def _single_site(q0: np.ndarray, m: Model, rng, new_value, cap: int):
    """Propose a changed site; returns (q', log weight', site, old value) or None on failure."""
    q0 = np.asarray(q0, dtype=float)
    n = len(q0)
    i = int(rng.integers(n))
    old = float(q0[i])
    q = q0.copy()
    q[i] = new_value(old)
    try:
        out, trace = run_extending(m, q, _fresh(rng), cap=cap)
    except ExtendBudgetExceeded:
        return None
    if not out.ok or out.log_weight == -math.inf:
        return None
    return trace[: out.consumed], out.log_weight, i, old


def lmh_step(q0: np.ndarray, m: Model, rng, cap: int = DEFAULT_EXTEND_CAP) -> Step:
    """Lightweight MH: resample one site from its prior."""
    q0 = np.asarray(q0, dtype=float)
    prop = _single_site(q0, m, rng, lambda old: float(rng.standard_normal()), cap)
    if prop is None:
        rng.random()
        return Step(q0, False, -math.inf, "out_of_support")
    q1, lw1, _, _ = prop
    lw0 = run(m, q0).log_weight
    ratio = lw1 - lw0 + math.log(len(q0)) - math.log(len(q1))
    if _accept(ratio, rng):
        return Step(q1, True, ratio)
    return Step(q0, False, ratio, "rejected")


def rmh_step(q0: np.ndarray, m: Model, sigma: float, rng, cap: int = DEFAULT_EXTEND_CAP) -> Step:
    """Random-walk lightweight MH: Gaussian perturbation of one site."""
    if sigma < 0:
        raise ValueError("proposal scale must be nonnegative")
    q0 = np.asarray(q0, dtype=float)
    prop = _single_site(q0, m, rng, lambda old: old + sigma * float(rng.standard_normal()), cap)
    if prop is None:
        rng.random()
        return Step(q0, False, -math.inf, "out_of_support")
    q1, lw1, i, old = prop
    lw0 = run(m, q0).log_weight
    ratio = (lw1 - lw0 + math.log(len(q0)) - math.log(len(q1))
             + 0.5 * (old * old - q1[i] * q1[i]))
    if _accept(ratio, rng):
        return Step(q1, True, ratio)
    return Step(q0, False, ratio, "rejected")


def lmh_kernel(q0, m: Model, cfg: SamplerConfig, rng) -> Step:
    return lmh_step(q0, m, rng, cfg.extend_cap)


def rmh_kernel(sigma: float = 1.0):
    def step(q0, m: Model, cfg: SamplerConfig, rng) -> Step:
        return rmh_step(q0, m, sigma, rng, cfg.extend_cap)

    return step


def importance_sample(m: Model, n: int, rng, cap: int = DEFAULT_EXTEND_CAP) -> list[WeightedSample]:
    """Draw ``n`` prior traces and weight them by their accumulated log weight.

    Runs that hit the extension cap are skipped and counted in the log.
    """
    if n < 1:
        raise ValueError("need at least one sample")
    samples = []
    skipped = 0
    draw = _fresh(rng)
    for _ in range(n):
        try:
            out, trace = run_extending(m, [], draw, cap=cap)
        except ExtendBudgetExceeded:
            skipped += 1
            continue
        samples.append(WeightedSample(trace[: out.consumed], out.value, out.log_weight))
    if skipped:
        logger.warning("importance sampling skipped %d of %d runs at the extension cap", skipped, n)
    return samples
