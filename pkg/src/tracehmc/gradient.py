"""Gradients of potential energies, plus a finite-difference oracle."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from tracehmc.model import Model, run, run_gradient
from tracehmc.trace import C, Kind, OutOfDomain


class NumericalFailure(ArithmeticError):
    """A gradient came out non-finite at a point where the potential is defined."""


@dataclass
class Gradient:
    value: float  # log density (negative potential) at q
    partials: np.ndarray  # dU/dq_i; 0 where i is not continuous
    continuous: np.ndarray  # bool mask of the indices the partials are defined at


def grad_potential(m: Model, q: Sequence[float]) -> Gradient:
    """Gradient of ``U_{|q|}`` by one recorded execution of ``m``."""
    q = np.asarray(q, dtype=float)
    res = run_gradient(m, q)
    out = res.outcome
    if not out.ok or out.log_weight == -math.inf:
        raise OutOfDomain("potential undefined at q")
    mask = np.zeros(len(q), dtype=bool)
    mask[: out.consumed] = [k is C for k in out.kinds]
    partials = -res.grad_log_weight
    if not np.all(np.isfinite(partials)):
        raise NumericalFailure("non-finite partial derivative")
    return Gradient(out.log_weight, partials, mask)


def _u(m: Model, q: np.ndarray) -> float:
    out = run(m, q, allow_leftover=True)
    if not out.ok or out.log_weight == -math.inf:
        return math.nan
    return -out.log_weight


def grad_fd(m: Model, q: Sequence[float], h: float = 1e-5) -> Gradient:
    """Central differences over the continuous coordinates.

    Indices whose perturbation leaves the support, or changes the executed
    path, are reported as NaN and dropped from ``continuous``.
    """
    if not h > 0:
        raise ValueError("finite-difference step must be positive")
    q = np.asarray(q, dtype=float)
    base = run(m, q, allow_leftover=True)
    if not base.ok or base.log_weight == -math.inf:
        raise OutOfDomain("potential undefined at q")
    kinds: tuple[Kind, ...] = base.kinds
    mask = np.zeros(len(q), dtype=bool)
    partials = np.zeros(len(q))
    for i, kind in enumerate(kinds):
        if kind is not C:
            continue
        qp, qm = q.copy(), q.copy()
        qp[i] += h
        qm[i] -= h
        up, um = _u(m, qp), _u(m, qm)
        if math.isnan(up) or math.isnan(um) or not _same_path(m, q, qp, qm, base):
            partials[i] = math.nan
            continue
        partials[i] = (up - um) / (2.0 * h)
        mask[i] = True
    return Gradient(base.log_weight, partials, mask)


def _same_path(m: Model, q, qp, qm, base) -> bool:
    for x in (qp, qm):
        out = run(m, x, allow_leftover=True)
        if out.consumed != base.consumed or out.kinds != base.kinds:
            return False
    return True
