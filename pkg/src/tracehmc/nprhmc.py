"""Nonparametric reflective/refractive HMC.

Position steps are split at the discontinuities reported by a boundary
oracle.  At each crossing the particle either refracts (the momentum
component normal to the boundary shrinks to pay for the potential rise) or
reflects (that component flips sign).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Union

import numpy as np

from tracehmc.model import ExtendBudgetExceeded, Model, run, run_extending
from tracehmc.nphmc import (
    _STEP_ERRORS,
    Clock,
    Extension,
    SamplerConfig,
    Step,
    _Trajectory,
    _accept,
    _grad_run,
    _supported,
    acceptance_log_ratio,
)
from tracehmc.trace import C, State

logger = logging.getLogger(__name__)

Hit = tuple[float, np.ndarray, np.ndarray]


class OracleContractViolation(RuntimeError):
    """A boundary oracle returned a hit time outside ``(0, T]``."""


@dataclass(frozen=True)
class BoundaryOracle:
    """Discontinuity oracle for the reflective integrator.

    ``next_boundary(q, p, T)`` returns ``(t_hit, q_before, q_after)`` for the
    first boundary met within time ``T`` on the ray ``q + t p``, or ``None``.
    ``decompose(q, p)`` splits ``p`` at a boundary point into the parts
    parallel and perpendicular to the boundary.
    """

    next_boundary: Callable[[np.ndarray, np.ndarray, float], Optional[Hit]]
    decompose: Callable[[np.ndarray, np.ndarray], tuple[np.ndarray, np.ndarray]]


def no_boundary_oracle() -> BoundaryOracle:
    def decompose(q, p):
        return p.copy(), np.zeros_like(p)

    return BoundaryOracle(lambda q, p, T: None, decompose)


def axis_threshold_oracle(thresholds: Union[Callable[[int], Optional[float]],
                                            Sequence[Optional[float]]],
                          offset: float = 1e-9) -> BoundaryOracle:
    """Oracle for boundaries of the form ``q_i = c_i``.

    ``thresholds`` maps an index to its threshold (``None`` for no boundary).
    The before/after points sit ``offset`` on either side of the boundary.
    """
    if callable(thresholds):
        threshold_at = thresholds
    else:
        seq = list(thresholds)
        threshold_at = lambda i: seq[i] if i < len(seq) else None  # noqa: E731

    def _cuts(n: int) -> np.ndarray:
        return np.array([np.nan if (c := threshold_at(i)) is None else c for i in range(n)],
                        dtype=float)

    def next_boundary(q, p, T):
        cuts = _cuts(len(q))
        with np.errstate(divide="ignore", invalid="ignore"):
            t = (cuts - q) / p
        t[~np.isfinite(t) | (t <= 0) | (t > T)] = np.inf
        i = int(np.argmin(t))
        if not np.isfinite(t[i]):
            return None
        hit = q + t[i] * p
        step = offset * max(1.0, abs(cuts[i])) * math.copysign(1.0, p[i])
        before, after = hit.copy(), hit.copy()
        before[i] = cuts[i] - step
        after[i] = cuts[i] + step
        return float(t[i]), before, after

    def decompose(q, p):
        cuts = _cuts(len(q))
        gap = np.abs(q - cuts)
        gap[np.isnan(gap)] = np.inf
        perp = np.zeros_like(p)
        if np.isfinite(gap).any():
            i = int(np.argmin(gap))
            perp[i] = p[i]
        return p - perp, perp

    return BoundaryOracle(next_boundary, decompose)


def _log_weight(m: Model, q: np.ndarray) -> float:
    out = run(m, q, allow_leftover=True)
    return out.log_weight if out.ok else -math.inf


def nprhmc_integrate(start: State, m: Model, oracle: BoundaryOracle, cfg: SamplerConfig,
                     rng) -> tuple[State, State]:
    """Leapfrog with boundary-aware position steps; extends at each crossing."""
    eps = cfg.epsilon
    base = cfg.base_in_potential
    kinds = list(run(m, start.q, allow_leftover=True).kinds)
    tr = _Trajectory(start, kinds + [C] * (len(start.q) - len(kinds)))
    _, g = _grad_run(m, tr.q, None, 0.0, cfg.extend_cap, base)
    for i in range(cfg.steps):
        tr.p = tr.p - 0.5 * eps * g
        t = 0.0
        while (hit := oracle.next_boundary(tr.q, tr.p, eps - t)) is not None:
            dt, q_before, q_after = hit
            if not 0.0 < dt <= eps - t:
                raise OracleContractViolation(f"hit time {dt} outside (0, {eps - t}]")
            t += dt
            ext = Extension(rng, clock=Clock(eps, i, t, harmonic=base))
            try:
                out, q_new = run_extending(m, q_after, ext, t=i * eps + t, cap=cfg.extend_cap)
                lw_after = out.log_weight if out.ok else -math.inf
            except ExtendBudgetExceeded:
                out, q_new, lw_after = None, None, -math.inf
            du = _log_weight(m, q_before) - lw_after
            if base and q_new is not None:
                n = len(q_before)
                du += 0.5 * float(q_new[:n] @ q_new[:n] - q_before @ q_before)
            p_new = np.concatenate([tr.p, ext.y]) if q_new is not None else tr.p
            par, perp = oracle.decompose(q_new, p_new) if q_new is not None else (tr.p, tr.p * 0)
            norm2 = float(perp @ perp)
            if norm2 > 2.0 * du:
                perp = math.sqrt(norm2 - 2.0 * du) / math.sqrt(norm2) * perp
                tr.absorb(ext, q_new)
                tr.q = q_new
                tr.p = par + perp
            else:
                if q_new is not None and len(ext):
                    # keep the probed coordinates; they stay off the support
                    tr.absorb(ext, np.concatenate([q_before, q_new[len(q_before):]]))
                    tr.p = p_new
                    q_before = tr.q
                par, perp = oracle.decompose(q_before, tr.p)
                tr.q = q_before
                tr.p = par - perp
        tr.q = tr.q + (eps - t) * tr.p
        ext = Extension(rng, clock=Clock(eps, i, eps, harmonic=base))
        res, g = _grad_run(m, tr.q, ext, (i + 1) * eps, cfg.extend_cap, base)
        tr.absorb(ext, res.trace)
        if cfg.trim:
            tr.trim(res.outcome.consumed)
            g = g[: len(tr.q)]
        tr.p = tr.p - 0.5 * eps * g
    return tr.result()


def nprhmc_step(q0: np.ndarray, m: Model, cfg: SamplerConfig, rng,
                oracle: Optional[BoundaryOracle] = None) -> Step:
    """One NP-RHMC transition; the oracle defaults to the model's axis thresholds."""
    if oracle is None:
        if m.thresholds is None:
            raise ValueError(f"model {m.name!r} declares no boundaries; pass an oracle")
        oracle = axis_threshold_oracle(m.thresholds)
    q0 = np.asarray(q0, dtype=float)
    p0 = rng.standard_normal(len(q0))
    try:
        proposal, initial = nprhmc_integrate(State(q0, p0), m, oracle, cfg, rng)
    except _STEP_ERRORS as exc:
        logger.debug("nprhmc step rejected: %s", type(exc).__name__)
        return Step(q0, False, -math.inf, type(exc).__name__)
    ratio = acceptance_log_ratio(proposal, initial, m)
    if _accept(ratio, rng):
        return Step(_supported(proposal.q, m), True, ratio)
    return Step(_supported(initial.q, m), False, ratio, "rejected")
