"""Nonparametric HMC: extension, the NP leapfrog integrator and the chain.

RNG draws happen in one canonical order per step: the momentum coordinates
in index order, then one ``(x0, y0)`` pair per appended coordinate in the
order the program asks for them, then the acceptance uniform.  The
reference sampler :func:`enphmc_step` follows the same order, so the two
can be compared draw-for-draw.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Any, Callable, Optional, Sequence

import numpy as np

from tracehmc.gradient import NumericalFailure
from tracehmc.model import (
    DEFAULT_EXTEND_CAP,
    ExtendBudgetExceeded,
    Model,
    run,
    run_extending,
    run_gradient,
)
from tracehmc.trace import D, Kind, OutOfDomain, State, log_truncation, supported_prefix

logger = logging.getLogger(__name__)

_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)
_LOG_2 = math.log(2.0)


@dataclass(frozen=True)
class SamplerConfig:
    epsilon: float = 0.1
    steps: int = 5
    n_samples: int = 1000
    burn_in: int = 100
    thinning: int = 1
    seed: int = 0
    trim: bool = True
    extend_cap: int = DEFAULT_EXTEND_CAP
    # NP-DHMC only: Laplace factor for discontinuous momenta in the acceptance ratio
    laplace_correction: bool = True
    # NP-DHMC only: per-step step size drawn from eps * U(1 - jitter, 1 + jitter)
    step_jitter: float = 0.2
    # simulate on -log w + |q|^2 / 2 rather than -log w; the acceptance ratio is the same
    base_in_potential: bool = True

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if self.steps < 0:
            raise ValueError("steps must be nonnegative")
        if self.thinning < 1:
            raise ValueError("thinning must be at least 1")
        if not 0 <= self.burn_in < self.n_samples:
            raise ValueError("need 0 <= burn_in < n_samples")
        if not 0.0 <= self.step_jitter < 1.0:
            raise ValueError("step_jitter must lie in [0, 1)")
        if self.extend_cap < 1:
            raise ValueError("extend_cap must be positive")


@dataclass
class ExtendResult:
    current: State
    initial: State


@dataclass
class Step:
    """Outcome of one transition."""

    trace: np.ndarray
    accepted: bool
    log_ratio: float = -math.inf
    reason: str = ""


@dataclass
class ChainSample:
    trace: np.ndarray
    value: Any
    accepted: bool
    log_weight: float


@dataclass(frozen=True)
class Clock:
    """Integrator progress, used to place a coordinate that appears mid-trajectory.

    ``steps`` full leapfrog iterations have run, followed (when ``drift`` is
    set) by a half momentum step and a position move of duration ``drift``.
    Laplace-momentum coordinates have had ``sweeps`` coordinate updates.
    With ``harmonic`` set the coordinate feels the Gaussian base potential
    ``x**2 / 2``; otherwise its potential is flat.
    """

    eps: float
    steps: int = 0
    drift: Optional[float] = None
    sweeps: int = 0
    harmonic: bool = True

    @property
    def t(self) -> float:
        return self.steps * self.eps + (self.drift or 0.0)


def gaussian_flow(x: float, y: float, clock: Clock) -> tuple[float, float]:
    """Replay the leapfrog sub-steps of one coordinate the program never reads."""
    if not clock.harmonic:
        return x + clock.t * y, y
    h = 0.5 * clock.eps
    for _ in range(clock.steps):
        y -= h * x
        x += clock.eps * y
        y -= h * x
    if clock.drift is not None:
        y -= h * x
        x += clock.drift * y
    return x, y


def laplace_flow(x: float, y: float, clock: Clock) -> tuple[float, float]:
    """Replay the coordinate updates of one Laplace-momentum coordinate the program never reads."""
    if not clock.harmonic:
        return x + clock.sweeps * clock.eps * math.copysign(1.0, y), y
    for _ in range(clock.sweeps):
        s = math.copysign(1.0, y)
        x1 = x + clock.eps * s
        du = 0.5 * (x1 * x1 - x * x)
        if abs(y) > du:
            x, y = x1, y - s * du
        else:
            y = -y
    return x, y


class Extension:
    """Extender hook: draws ``(x0, y0)`` pairs and moves each new coordinate to the current time.

    Without a ``clock`` a new coordinate moves freely for time ``t``:
    ``x0 + t * y0``, or ``x0 + t * sign(y0)`` for a Laplace momentum.  With
    a clock its own dynamics are replayed (see :class:`Clock`).  With
    ``mixed`` set, discontinuous coordinates get Laplace momentum.
    """

    def __init__(self, rng, mixed: bool = False, clock: Optional[Clock] = None):
        self.rng = rng
        self.mixed = mixed
        self.clock = clock
        self.x0: list[float] = []
        self.y0: list[float] = []
        self.y: list[float] = []  # momenta at the current time
        self.kinds: list[Kind] = []

    def _draw(self, kind: Kind) -> tuple[float, float, bool]:
        x0 = float(self.rng.standard_normal())
        laplace = self.mixed and kind is D
        y0 = float(self.rng.laplace()) if laplace else float(self.rng.standard_normal())
        return x0, y0, laplace

    def _record(self, kind: Kind, x0: float, y0: float, y: float) -> None:
        self.x0.append(x0)
        self.y0.append(y0)
        self.y.append(y)
        self.kinds.append(kind)

    def __call__(self, kind: Kind, t: float) -> float:
        x0, y0, laplace = self._draw(kind)
        if self.clock is None:
            x, y = x0 + t * (math.copysign(1.0, y0) if laplace else y0), y0
        elif laplace:
            x, y = laplace_flow(x0, y0, self.clock)
        else:
            x, y = gaussian_flow(x0, y0, self.clock)
        self._record(kind, x0, y0, y)
        return x

    def __len__(self) -> int:
        return len(self.x0)


def _append(a: np.ndarray, extra: Sequence[float]) -> np.ndarray:
    if not extra:
        return a
    return np.concatenate([a, np.asarray(extra, dtype=float)])


def extend(current: State, initial: State, t: float, m: Model, rng,
           cap: int = DEFAULT_EXTEND_CAP, mixed: bool = False) -> ExtendResult:
    """Grow both states until the current position is in the potential's domain.

    The program is run on ``current.q`` and every coordinate it reads past
    the end is supplied by a fresh draw, so the loop stops at exactly the
    length the program needs.

    Raises:
        OutOfDomain: the program finishes with zero weight, so no extension
            can reach the support.
        ExtendBudgetExceeded: more than ``cap`` coordinates were appended.
    """
    if t < 0:
        raise ValueError("extend needs t >= 0")
    ext = Extension(rng, mixed=mixed)
    out, q = run_extending(m, current.q, ext, t=t, cap=cap)
    if not out.ok or out.log_weight == -math.inf:
        raise OutOfDomain("no extension of this position has positive weight")
    return ExtendResult(
        State(q, _append(current.p, ext.y)),
        State(_append(initial.q, ext.x0), _append(initial.p, ext.y0)),
    )


class _Trajectory:
    """Mutable current/initial state pair shared by the NP integrators."""

    def __init__(self, start: State, kinds: Sequence[Kind]):
        self.q = start.q.astype(float).copy()
        self.p = start.p.astype(float).copy()
        self.q0 = self.q.copy()
        self.p0 = self.p.copy()
        self.disc = np.array([k is D for k in kinds], dtype=bool)
        self.n_start = len(start.q)

    def absorb(self, ext: Extension, trace: np.ndarray) -> None:
        if len(ext):
            self.q = trace
            self.p = _append(self.p, ext.y)
            self.q0 = _append(self.q0, ext.x0)
            self.p0 = _append(self.p0, ext.y0)
            self.disc = np.concatenate([self.disc, [k is D for k in ext.kinds]])

    def trim(self, consumed: int) -> None:
        n = max(consumed, self.n_start)
        if len(self.q) > n:
            self.q, self.p = self.q[:n].copy(), self.p[:n].copy()
            self.q0, self.p0 = self.q0[:n].copy(), self.p0[:n].copy()
            self.disc = self.disc[:n].copy()

    def result(self) -> tuple[State, State]:
        return State(self.q, -self.p), State(self.q0, self.p0)


def _grad_run(m: Model, q: np.ndarray, ext: Optional[Extension], t: float, cap: int,
              base: bool = False):
    """Run with gradient; ``g`` is the gradient of the simulated potential."""
    res = run_gradient(m, q, extender=ext, t=t, cap=cap)
    out = res.outcome
    if not out.ok or out.log_weight == -math.inf:
        raise OutOfDomain("trajectory left the support and cannot be extended")
    g = -res.grad_log_weight
    if base:
        g = g + res.trace[: len(g)]
    if not np.all(np.isfinite(g)):
        raise NumericalFailure("non-finite gradient")
    return res, g


def np_integrate(start: State, m: Model, cfg: SamplerConfig, rng,
                 kinds: Optional[Sequence[Kind]] = None) -> tuple[State, State]:
    """Leapfrog on the family of truncated potentials, extending as needed.

    Returns the proposal (momentum negated) and the extended initial state.
    """
    eps = cfg.epsilon
    if kinds is None:
        kinds = run(m, start.q, allow_leftover=True).kinds
    tr = _Trajectory(start, list(kinds) + [Kind.CONTINUOUS] * (len(start.q) - len(kinds)))
    base = cfg.base_in_potential
    _, g = _grad_run(m, tr.q, None, 0.0, cfg.extend_cap, base)
    for i in range(cfg.steps):
        tr.p = tr.p - 0.5 * eps * g
        tr.q = tr.q + eps * tr.p
        ext = Extension(rng, clock=Clock(eps, i, eps, harmonic=base))
        res, g = _grad_run(m, tr.q, ext, (i + 1) * eps, cfg.extend_cap, base)
        tr.absorb(ext, res.trace)
        if cfg.trim:
            tr.trim(res.outcome.consumed)
            g = g[: len(tr.q)]
        tr.p = tr.p - 0.5 * eps * g
    return tr.result()


def gaussian_momentum_log_density(p: np.ndarray) -> float:
    return -len(p) * _LOG_SQRT_2PI - 0.5 * float(p @ p)


def mixed_momentum_log_density(p: np.ndarray, disc: np.ndarray) -> float:
    """Gaussian on continuous coordinates, Laplace(0, 1) on discontinuous ones."""
    pc, pd = p[~disc], p[disc]
    return (-len(pc) * _LOG_SQRT_2PI - 0.5 * float(pc @ pc)
            - len(pd) * _LOG_2 - float(np.abs(pd).sum()))


def acceptance_log_ratio(proposal: State, initial: State, m: Model,
                         momentum_log_density: Callable[[np.ndarray], float]
                         = gaussian_momentum_log_density) -> float:
    """Log Hastings ratio on the common extended dimension (unclamped)."""
    if len(proposal) != len(initial):
        raise ValueError("states must have equal length")
    lw_new = log_truncation(m, proposal.q)
    lw_old = log_truncation(m, initial.q)
    if lw_new == -math.inf:
        return -math.inf
    if lw_old == -math.inf:
        return math.inf
    new = lw_new - 0.5 * float(proposal.q @ proposal.q) + momentum_log_density(proposal.p)
    old = lw_old - 0.5 * float(initial.q @ initial.q) + momentum_log_density(initial.p)
    return new - old


_STEP_ERRORS = (OutOfDomain, NumericalFailure, ExtendBudgetExceeded, FloatingPointError)


def _accept(log_ratio: float, rng) -> bool:
    u = float(rng.random())
    return u > 0.0 and math.log(u) < min(0.0, log_ratio)


def nphmc_step(q0: np.ndarray, m: Model, cfg: SamplerConfig, rng) -> Step:
    """One NP-HMC transition from the supported trace ``q0``."""
    q0 = np.asarray(q0, dtype=float)
    p0 = rng.standard_normal(len(q0))
    try:
        proposal, initial = np_integrate(State(q0, p0), m, cfg, rng)
    except _STEP_ERRORS as exc:
        logger.debug("nphmc step rejected: %s", type(exc).__name__)
        return Step(q0, False, -math.inf, type(exc).__name__)
    ratio = acceptance_log_ratio(proposal, initial, m)
    if _accept(ratio, rng):
        return Step(_supported(proposal.q, m), True, ratio)
    return Step(_supported(initial.q, m), False, ratio, "rejected")


def _supported(q: np.ndarray, m: Model) -> np.ndarray:
    s = supported_prefix(q, m)
    if s is None:
        raise OutOfDomain("state has no supported prefix")
    return s


# --- the fixed-dimension reference sampler ---------------------------------


def _fixed_grad(m: Model, q: np.ndarray, base: bool = False) -> Optional[np.ndarray]:
    res = run_gradient(m, q)
    out = res.outcome
    if not out.ok or out.log_weight == -math.inf:
        return None
    g = -res.grad_log_weight
    return g + q[: len(g)] if base else g


def validstate(s: State, m: Model, cfg: SamplerConfig) -> bool:
    """Whether ``L`` leapfrog steps from ``s`` stay inside the domain of ``U_{|q|}``."""
    q, p = s.q.astype(float), s.p.astype(float)
    g = _fixed_grad(m, q, cfg.base_in_potential)
    if g is None:
        return cfg.steps == 0
    eps = cfg.epsilon
    for _ in range(cfg.steps):
        p = p - 0.5 * eps * g
        q = q + eps * p
        g = _fixed_grad(m, q, cfg.base_in_potential)
        if g is None:
            return False
        p = p - 0.5 * eps * g
    return True


def hmc_integrate(s: State, m: Model, cfg: SamplerConfig) -> State:
    """Textbook leapfrog on ``U_{|q|}`` followed by a momentum flip."""
    q, p = s.q.astype(float), s.p.astype(float)
    eps = cfg.epsilon
    g = _fixed_grad(m, q, cfg.base_in_potential)
    if g is None and cfg.steps:
        raise OutOfDomain("start outside the domain")
    for _ in range(cfg.steps):
        p = p - 0.5 * eps * g
        q = q + eps * p
        g = _fixed_grad(m, q, cfg.base_in_potential)
        if g is None:
            raise OutOfDomain("leapfrog left the domain")
        p = p - 0.5 * eps * g
    return State(q, -p)


def enphmc_step(s: State, m: Model, cfg: SamplerConfig, rng) -> State:
    """Reference step that appends all coordinates up front, then runs plain HMC."""
    q0 = _supported(s.q, m)
    p0 = rng.standard_normal(len(q0))
    xs, ys = [], []
    while not validstate(State(_append(q0, xs), _append(p0, ys)), m, cfg):
        if len(xs) >= cfg.extend_cap:
            raise ExtendBudgetExceeded("search for a valid state exceeded the cap")
        xs.append(float(rng.standard_normal()))
        ys.append(float(rng.standard_normal()))
    initial = State(_append(q0, xs), _append(p0, ys))
    proposal = hmc_integrate(initial, m, cfg)
    ratio = acceptance_log_ratio(proposal, initial, m)
    if _accept(ratio, rng):
        return proposal
    return initial


# --- chain driver ------------------------------------------------------------


def initial_trace(m: Model, rng, cap: int = DEFAULT_EXTEND_CAP, attempts: int = 1000) -> np.ndarray:
    """Draw a prior trace with positive weight by running the program forwards."""
    for _ in range(attempts):
        out, q = run_extending(m, [], lambda kind, t: float(rng.standard_normal()), cap=cap)
        if out.ok and out.log_weight > -math.inf:
            return q[: out.consumed]
    raise RuntimeError(f"no supported initial trace after {attempts} prior draws")


StepFn = Callable[[np.ndarray, Model, SamplerConfig, Any], Step]


def run_chain(m: Model, cfg: SamplerConfig, rng=None, step: StepFn = nphmc_step,
              q_init: Optional[np.ndarray] = None) -> list[ChainSample]:
    """Iterate ``step`` ``n_samples`` times; drop burn-in, keep every ``thinning``-th.

    Within each block of ``thinning`` samples the last one is kept.
    """
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    q = initial_trace(m, rng, cfg.extend_cap) if q_init is None else np.asarray(q_init, float)
    kept: list[ChainSample] = []
    reasons: dict[str, int] = {}
    for i in range(cfg.n_samples):
        st = step(q, m, cfg, rng)
        q = st.trace
        if st.reason and st.reason != "rejected":
            reasons[st.reason] = reasons.get(st.reason, 0) + 1
        if i < cfg.burn_in or (i - cfg.burn_in + 1) % cfg.thinning:
            continue
        out = run(m, q)
        kept.append(ChainSample(q, out.value, st.accepted, out.log_weight))
    if reasons:
        logger.info("%s: forced rejections %s", m.name, reasons)
    return kept
