"""Model runtime: executing a probabilistic program against a trace.

A model is a plain Python function taking a :class:`RunContext`.  Each
``ctx.sample(dist, kind)`` call consumes one standard-normal trace
coordinate ``z`` and returns ``dist.from_normal(z)``; the base density of
``z`` is part of the trace measure and is *not* added to the weight.
``ctx.observe`` and ``ctx.factor`` accumulate the log weight.

Example::

    def coin(ctx):
        u = ctx.sample(Uniform(0, 1), D)
        ctx.observe(Normal(u, 0.1), 0.3)
        return [u]

    out = run_replay(Model(coin), [0.0])
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Callable, Optional, Sequence

import numpy as np

from tracehmc import ad
from tracehmc.dist import Dist1D
from tracehmc.trace import C, Kind

DEFAULT_EXTEND_CAP = 10**6

Extender = Callable[[Kind, float], float]


class ExtendBudgetExceeded(RuntimeError):
    """The extender appended more coordinates than the configured cap."""


class _TooShort(Exception):
    pass


class _Failed(Exception):
    pass


@dataclass(frozen=True)
class Model:
    program: Callable[["RunContext"], Any]
    name: str = "model"
    # per-index axis thresholds for the reflective integrator (optional)
    thresholds: Optional[Callable[[int], Optional[float]]] = field(default=None, compare=False)

    def __call__(self, ctx: "RunContext"):
        return self.program(ctx)


@dataclass
class RunOutcome:
    log_weight: float
    consumed: int
    kinds: tuple[Kind, ...]
    value: Any
    trace_len: int
    status: str = "ok"  # "ok" | "too_short" | "failed"

    @property
    def ok(self) -> bool:
        return self.status == "ok"

    @property
    def too_short(self) -> bool:
        return self.status == "too_short"

    @property
    def density_log_weight(self) -> float:
        """Log density of the full trace: zero weight unless consumption is exact."""
        if self.ok and self.consumed == self.trace_len:
            return self.log_weight
        return -math.inf

    def density(self) -> float:
        return math.exp(self.density_log_weight)


class RunContext:
    """Execution state for one run of a model."""

    __slots__ = ("trace", "cursor", "log_weight", "kinds", "extender", "t", "cap",
                 "appended", "record", "leaves")

    def __init__(self, trace: list[float], extender: Optional[Extender] = None,
                 t: float = 0.0, cap: int = DEFAULT_EXTEND_CAP, record: bool = False):
        self.trace = trace
        self.cursor = 0
        self.log_weight = 0.0
        self.kinds: list[Kind] = []
        self.extender = extender
        self.t = t
        self.cap = cap
        self.appended = 0
        self.record = record
        self.leaves: list[tuple[int, ad.Var]] = []

    def sample(self, dist: Dist1D, kind: Kind = C):
        i = self.cursor
        if i == len(self.trace):
            if self.extender is None:
                raise _TooShort
            if self.appended >= self.cap:
                raise ExtendBudgetExceeded(f"extension exceeded {self.cap} coordinates")
            self.trace.append(float(self.extender(kind, self.t)))
            self.appended += 1
        z = self.trace[i]
        self.cursor = i + 1
        self.kinds.append(kind)
        if self.record and kind is C:
            z = ad.Var(z)
            self.leaves.append((i, z))
        return dist.from_normal(z)

    def observe(self, dist: Dist1D, datum) -> None:
        self.factor(dist.log_pdf(datum))

    def factor(self, log_w) -> None:
        self.log_weight = self.log_weight + log_w
        lw = float(ad._primal(self.log_weight))
        if lw == -math.inf:
            raise _Failed
        if math.isnan(lw):
            raise _Failed


_PRIMITIVE_FAILURES = (_Failed, ArithmeticError, ValueError)


def _execute(m: Model, ctx: RunContext, trace_len_fn) -> RunOutcome:
    status = "ok"
    value = None
    try:
        value = m(ctx)
    except _TooShort:
        status = "too_short"
    except _PRIMITIVE_FAILURES:
        status = "failed"
    lw = ctx.log_weight if status == "ok" else -math.inf
    return RunOutcome(
        log_weight=lw,
        consumed=ctx.cursor,
        kinds=tuple(ctx.kinds),
        value=value,
        trace_len=trace_len_fn(),
        status=status,
    )


def run(m: Model, q: Sequence[float], *, allow_leftover: bool = False,
        extender: Optional[Extender] = None, t: float = 0.0,
        cap: int = DEFAULT_EXTEND_CAP) -> RunOutcome:
    """Execute ``m`` on ``q``; plain-float log weight.

    With ``allow_leftover`` a run that finishes before the end of ``q`` is
    reported as ``ok`` (its weight is that of the consumed prefix).
    """
    trace = list(map(float, q))
    ctx = RunContext(trace, extender=extender, t=t, cap=cap)
    out = _execute(m, ctx, lambda: len(trace))
    if out.ok:
        out.log_weight = float(ad._primal(out.log_weight))
        if not allow_leftover and out.consumed != len(trace):
            out.status = "failed"
            out.log_weight = -math.inf
    return out


def run_replay(m: Model, q: Sequence[float]) -> RunOutcome:
    """Run on ``q`` without extension.

    The density of ``q`` itself is ``out.density()``, which is zero when the
    program needed more coordinates or left some unread.
    """
    return run(m, q, allow_leftover=True)


def run_extending(m: Model, q: Sequence[float], extender: Extender, t: float = 0.0,
                  cap: int = DEFAULT_EXTEND_CAP) -> tuple[RunOutcome, np.ndarray]:
    """Run ``m``, asking ``extender(kind, t)`` for each coordinate beyond ``q``."""
    trace = list(map(float, q))
    ctx = RunContext(trace, extender=extender, t=t, cap=cap)
    out = _execute(m, ctx, lambda: len(trace))
    if out.ok:
        out.log_weight = float(ad._primal(out.log_weight))
    return out, np.array(trace, dtype=float)


@dataclass
class GradientRun:
    """A differentiated execution: log weight plus partials w.r.t. continuous coordinates."""

    outcome: RunOutcome
    trace: np.ndarray
    grad_log_weight: np.ndarray  # zero at discontinuous or unused indices


def run_gradient(m: Model, q: Sequence[float], *, extender: Optional[Extender] = None,
                 t: float = 0.0, cap: int = DEFAULT_EXTEND_CAP) -> GradientRun:
    """Execute once while recording, then sweep backwards for the gradient."""
    trace = list(map(float, q))
    ctx = RunContext(trace, extender=extender, t=t, cap=cap, record=True)
    out = _execute(m, ctx, lambda: len(trace))
    lw = out.log_weight
    g = np.zeros(len(trace))
    if out.ok and isinstance(lw, ad.Var):
        adj = ad.backward(lw)
        for i, leaf in ctx.leaves:
            g[i] += float(np.sum(adj.get(leaf.id, 0.0)))
    if out.ok:
        out.log_weight = float(ad._primal(lw))
    return GradientRun(out, np.array(trace, dtype=float), g)
