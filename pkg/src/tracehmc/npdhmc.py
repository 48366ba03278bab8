"""Nonparametric discontinuous HMC.

Continuous coordinates carry Gaussian momentum and follow leapfrog steps.
Discontinuous coordinates carry Laplace momentum, so their positions move
by ``eps * sign(p)`` and are updated one at a time, either jumping to the
new value (paying the potential difference out of ``|p_j|``) or
reflecting.
"""

from __future__ import annotations

import logging
import math
from dataclasses import replace
from typing import Optional, Sequence

import numpy as np

from tracehmc.model import ExtendBudgetExceeded, Model, run, run_extending
from tracehmc.nphmc import (
    _STEP_ERRORS,
    ExtendResult,
    Extension,
    SamplerConfig,
    Step,
    _Trajectory,
    Clock,
    _accept,
    _grad_run,
    _supported,
    acceptance_log_ratio,
    extend,
    gaussian_momentum_log_density,
    laplace_flow,
    mixed_momentum_log_density,
)
from tracehmc.trace import C, D, Kind, OutOfDomain, State

logger = logging.getLogger(__name__)


def extend_mixed(current: State, initial: State, t: float, m: Model, rng, **kw) -> ExtendResult:
    """:func:`~tracehmc.nphmc.extend` with Laplace momenta on discontinuous sites."""
    return extend(current, initial, t, m, rng, mixed=True, **kw)


def random_sweep_order(indices: Sequence[int], rng) -> list[int]:
    if len(indices) == 0:
        return []
    return [int(j) for j in rng.permutation(np.asarray(indices))]


class _Sweep:
    """Queue of discontinuous indices still to be updated in this iteration.

    A coordinate that appears mid-sweep is given a uniformly random slot in
    the sweep order, as if it had been part of the permutation all along.
    Slots before the update in progress mean it already moved this
    iteration; later slots queue it for an update.
    """

    def __init__(self, order: list[int]):
        self.order = order
        self.pos = 0

    def __iter__(self):
        while self.pos < len(self.order):
            self.pos += 1
            yield self.order[self.pos - 1]


class _SweepExtension(Extension):
    """Extender for probes made during the sweep of iteration ``clock.steps``."""

    def __init__(self, rng, clock: Clock, sweep: _Sweep, n_current: int):
        super().__init__(rng, mixed=True, clock=clock)
        self.sweep = sweep
        self.n_current = n_current

    def __call__(self, kind: Kind, t: float) -> float:
        if kind is not D:
            return super().__call__(kind, t)
        x0, y0, _ = self._draw(kind)
        sw = self.sweep
        slot = int(self.rng.integers(len(sw.order) + 1))
        index = self.n_current + len(self.x0)
        if slot < sw.pos:
            clock = replace(self.clock, sweeps=self.clock.steps + 1)
        else:
            clock = replace(self.clock, sweeps=self.clock.steps)
            sw.order.insert(slot, index)
        x, y = laplace_flow(x0, y0, clock)
        self._record(kind, x0, y0, y)
        return x


def _eval_current(tr: _Trajectory, m: Model, clock: Clock, rng, cfg: SamplerConfig) -> float:
    ext = Extension(rng, mixed=True, clock=clock)
    out, trace = run_extending(m, tr.q, ext, t=clock.t, cap=cfg.extend_cap)
    if not out.ok or out.log_weight == -math.inf:
        raise OutOfDomain("position left the support and cannot be extended")
    tr.absorb(ext, trace)
    if cfg.trim:
        tr.trim(out.consumed)
    return out.log_weight


def _coord_update(tr: _Trajectory, j: int, t: float, eps: float, m: Model,
                  lw_cur: float, cfg: SamplerConfig, ext: Extension) -> float:
    """One discontinuous-coordinate update in place; returns the new log weight.

    Coordinates appended while probing the move are kept even on a
    reflection, so their values stay fixed for the rest of the trajectory.
    """
    s = float(np.sign(tr.p[j]))
    qs = tr.q.copy()
    qs[j] += eps * s
    try:
        out, trace = run_extending(m, qs, ext, t=t, cap=cfg.extend_cap)
    except ExtendBudgetExceeded:
        out, trace = None, None
    if out is not None and out.ok and out.log_weight > -math.inf:
        du = lw_cur - out.log_weight
        if cfg.base_in_potential:
            du += 0.5 * (qs[j] * qs[j] - tr.q[j] * tr.q[j])
    else:
        du = math.inf
    if abs(tr.p[j]) > du:
        tr.absorb(ext, trace)
        tr.q = trace
        tr.p[j] -= s * du
        if cfg.trim:
            tr.trim(out.consumed)
        return out.log_weight
    if trace is not None and len(ext):
        tr.absorb(ext, np.concatenate([tr.q, trace[len(tr.q):]]))
    tr.p[j] = -tr.p[j]
    return lw_cur


def _kinds_for(m: Model, q: np.ndarray) -> list[Kind]:
    kinds = list(run(m, q, allow_leftover=True).kinds)
    return kinds + [C] * (len(q) - len(kinds))


def coord_integrator(current: State, initial: State, j: int, t: float, eps: float,
                     m: Model, rng, cfg: Optional[SamplerConfig] = None) -> tuple[State, State]:
    """Update discontinuous coordinate ``j``: jump when ``|p_j|`` exceeds the potential rise, else reflect."""
    cfg = cfg or SamplerConfig(epsilon=eps, trim=False, base_in_potential=False)
    if not 0 <= j < len(current):
        raise IndexError(f"coordinate {j} outside trace of length {len(current)}")
    tr = _Trajectory(current, _kinds_for(m, current.q))
    tr.q0, tr.p0 = initial.q.astype(float).copy(), initial.p.astype(float).copy()
    lw = run(m, tr.q, allow_leftover=True).log_weight
    if lw == -math.inf:
        raise OutOfDomain("current position is outside the support")
    _coord_update(tr, j, t, eps, m, lw, cfg, Extension(rng, mixed=True))
    return State(tr.q, tr.p), State(tr.q0, tr.p0)


def npdhmc_integrate(start: State, m: Model, cfg: SamplerConfig, rng,
                     kinds: Optional[Sequence[Kind]] = None) -> tuple[State, State, np.ndarray]:
    """Mixed leapfrog with a random-order sweep over discontinuous coordinates.

    Returns the proposal (momentum negated), the extended initial state and
    the discontinuity mask of the final trace.
    """
    eps = cfg.epsilon
    base = cfg.base_in_potential
    if kinds is None:
        kinds = _kinds_for(m, start.q)
    tr = _Trajectory(start, kinds)
    res, g = _grad_run(m, tr.q, None, 0.0, cfg.extend_cap, base)
    lw = res.outcome.log_weight
    for i in range(cfg.steps):
        cont = ~tr.disc
        tr.p[cont] -= 0.5 * eps * g[cont]
        if not tr.disc.any():
            tr.q[cont] += eps * tr.p[cont]
        else:
            mid = Clock(eps, i, 0.5 * eps, sweeps=i, harmonic=base)
            if cont.any():
                tr.q[cont] += 0.5 * eps * tr.p[cont]
                lw = _eval_current(tr, m, mid, rng, cfg)
            sweep = _Sweep(random_sweep_order(np.flatnonzero(tr.disc), rng))
            for j in sweep:
                if j < len(tr.q):
                    ext = _SweepExtension(rng, mid, sweep, len(tr.q))
                    lw = _coord_update(tr, j, mid.t, eps, m, lw, cfg, ext)
            cont = ~tr.disc
            tr.q[cont] += 0.5 * eps * tr.p[cont]
        end = Clock(eps, i, eps, sweeps=i + 1, harmonic=base)
        ext = Extension(rng, mixed=True, clock=end)
        res, g = _grad_run(m, tr.q, ext, end.t, cfg.extend_cap, base)
        tr.absorb(ext, res.trace)
        lw = res.outcome.log_weight
        if cfg.trim:
            tr.trim(res.outcome.consumed)
            g = g[: len(tr.q)]
        cont = ~tr.disc
        tr.p[cont] -= 0.5 * eps * g[cont]
    proposal, initial = tr.result()
    return proposal, initial, tr.disc


def draw_mixed_momentum(kinds: Sequence[Kind], rng) -> np.ndarray:
    """Momentum in index order: Laplace(0, 1) on discontinuous sites, N(0, 1) elsewhere."""
    if all(k is not D for k in kinds):
        return rng.standard_normal(len(kinds))
    return np.array([rng.laplace() if k is D else rng.standard_normal() for k in kinds])


def npdhmc_step(q0: np.ndarray, m: Model, cfg: SamplerConfig, rng) -> Step:
    """One NP-DHMC transition from the supported trace ``q0``."""
    q0 = np.asarray(q0, dtype=float)
    if cfg.step_jitter > 0:
        # discontinuous coordinates move by exactly eps per iteration, so a fixed
        # step size would confine them to a lattice around their first value
        j = cfg.step_jitter
        cfg = replace(cfg, epsilon=cfg.epsilon * float(rng.uniform(1.0 - j, 1.0 + j)))
    kinds = _kinds_for(m, q0)
    p0 = draw_mixed_momentum(kinds, rng)
    try:
        proposal, initial, disc = npdhmc_integrate(State(q0, p0), m, cfg, rng, kinds)
    except _STEP_ERRORS as exc:
        logger.debug("npdhmc step rejected: %s", type(exc).__name__)
        return Step(q0, False, -math.inf, type(exc).__name__)
    if cfg.laplace_correction:
        density = lambda p: mixed_momentum_log_density(p, disc)  # noqa: E731
    else:
        density = gaussian_momentum_log_density
    ratio = acceptance_log_ratio(proposal, initial, m, density)
    if _accept(ratio, rng):
        return Step(_supported(proposal.q, m), True, ratio)
    return Step(_supported(initial.q, m), False, ratio, "rejected")
