"""Traces, phase-space states, truncations and potential energies.

A trace is a finite sequence of real coordinates, stored as a 1-D float
array.  Weights are carried in log space everywhere: a zero weight is
``-inf``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import TYPE_CHECKING, Optional, Sequence

import numpy as np

if TYPE_CHECKING:
    from tracehmc.model import Model

Trace = np.ndarray

LOG_2PI = math.log(2.0 * math.pi)


class Kind(enum.Enum):
    """Whether the density depends continuously on a coordinate."""

    CONTINUOUS = "C"
    DISCONTINUOUS = "D"


C = Kind.CONTINUOUS
D = Kind.DISCONTINUOUS


class OutOfDomain(ValueError):
    """The potential energy is undefined at the requested point."""


def as_trace(coords: Sequence[float]) -> Trace:
    q = np.array(coords, dtype=float).reshape(-1)
    if not np.all(np.isfinite(q)):
        raise ValueError(f"trace coordinates must be finite, got {q!r}")
    return q


@dataclass(frozen=True)
class State:
    """Position/momentum pair of equal length."""

    q: Trace
    p: Trace

    def __post_init__(self):
        if len(self.q) != len(self.p):
            raise ValueError(f"|q| = {len(self.q)} but |p| = {len(self.p)}")

    def __len__(self) -> int:
        return len(self.q)


def log_base_density(q: Sequence[float]) -> float:
    """Log density of ``q`` under the standard normal of dimension ``len(q)``."""
    q = np.asarray(q, dtype=float)
    if q.size == 0:
        raise ValueError("an empty trace carries no density")
    if not np.all(np.isfinite(q)):
        raise ValueError("trace coordinates must be finite")
    return -0.5 * q.size * LOG_2PI - 0.5 * float(q @ q)


def log_truncation(w: "Model", q: Sequence[float]) -> float:
    """Log of the n-th truncation: the log weight of the unique supported prefix.

    Only one prefix of ``q`` can carry positive weight, so one execution of
    the model reading coordinates from the front of ``q`` finds it.
    """
    from tracehmc.model import run

    out = run(w, q, allow_leftover=True)
    return out.log_weight if out.ok else -math.inf


def truncation(w: "Model", q: Sequence[float]) -> float:
    if len(q) < 1:
        raise ValueError("truncation needs a nonempty trace")
    return math.exp(log_truncation(w, q))


def supported_prefix(q: Sequence[float], w: "Model") -> Optional[Trace]:
    """The prefix of ``q`` with positive weight, or ``None`` if there is none."""
    from tracehmc.model import run

    q = np.asarray(q, dtype=float)
    out = run(w, q, allow_leftover=True)
    if not out.ok or out.log_weight == -math.inf:
        return None
    return q[: out.consumed].copy()


def potential(w: "Model", q: Sequence[float]) -> float:
    """Potential energy ``-log`` of the truncation at ``q``."""
    lw = log_truncation(w, q)
    if lw == -math.inf:
        raise OutOfDomain(f"truncation vanishes at trace of length {len(q)}")
    return -lw
