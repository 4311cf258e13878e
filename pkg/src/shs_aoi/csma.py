"""Age-aware and age-blind CSMA models.

Age vector layout for ``n`` links: components ``0..n-1`` are monitor ages,
components ``n..2n-1`` are the ages of the packet held by each transmitter.
State 0 is the idle channel, state ``k`` means link ``k`` is transmitting.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .model import (
    LinearBinaryReset,
    PolynomialRate,
    ShsModel,
    SupportHints,
    Transition,
)


@dataclass(frozen=True)
class CsmaParams:
    """Back-off coefficients ``a`` (rate ``a_i x_i``), service rates ``H`` and an optimizer box."""

    a: tuple[float, ...]
    H: tuple[float, ...]
    bounds: tuple[tuple[float, float], ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "a", tuple(float(v) for v in self.a))
        object.__setattr__(self, "H", tuple(float(v) for v in self.H))
        if len(self.a) != len(self.H):
            raise ValueError("a and H must have the same length")
        if not all(v > 0 for v in self.a + self.H):
            raise ValueError("back-off coefficients and service rates must be positive")
        if self.bounds is not None:
            bounds = tuple((float(lo), float(hi)) for lo, hi in self.bounds)
            if any(not 0 < lo <= hi for lo, hi in bounds):
                raise ValueError("bounds need 0 < lo <= hi")
            object.__setattr__(self, "bounds", bounds)

    @property
    def n(self) -> int:
        return len(self.a)


def _delivery_reset(n: int, k: int) -> LinearBinaryReset:
    """Link ``k`` (0-based) delivers: monitor age takes the packet age, packet age clears."""
    rows = [[int(i == j) for j in range(2 * n)] for i in range(2 * n)]
    rows[k] = [int(j == n + k) for j in range(2 * n)]
    rows[n + k] = [0] * (2 * n)
    return LinearBinaryReset(tuple(tuple(r) for r in rows))


def _csma_skeleton(n: int, capture_rates: Sequence[PolynomialRate], H: Sequence[float], name: str) -> ShsModel:
    dim = 2 * n
    drift = {0: tuple([1] * n + [0] * n)}
    for k in range(1, n + 1):
        drift[k] = tuple([1] * n + [int(j == k - 1) for j in range(n)])
    transitions = []
    for k in range(1, n + 1):
        transitions.append(
            Transition(0, k, capture_rates[k - 1], LinearBinaryReset.identity(dim), f"capture{k}")
        )
    for k in range(1, n + 1):
        transitions.append(
            Transition(k, 0, PolynomialRate.constant(dim, H[k - 1]), _delivery_reset(n, k - 1), f"deliver{k}")
        )
    zero = {0: tuple(range(n, dim))}
    for k in range(1, n + 1):
        zero[k] = tuple(n + j for j in range(n) if j != k - 1)
    less_than = tuple((k, n + k - 1, i) for k in range(1, n + 1) for i in range(n))
    return ShsModel(
        n=dim,
        states=tuple(range(n + 1)),
        drift=drift,
        transitions=tuple(transitions),
        support=SupportHints(zero=zero, less_than=less_than),
        labels={0: "idle", **{k: f"link{k}" for k in range(1, n + 1)}},
        name=name,
        tracked=tuple(range(n)),
    )


def csma_model(p: CsmaParams) -> ShsModel:
    n = p.n
    rates = [PolynomialRate.linear(2 * n, k, p.a[k]) for k in range(n)]
    return _csma_skeleton(n, rates, p.H, "csma")


def age_blind_model(r: Sequence[float], H: Sequence[float]) -> ShsModel:
    """Same topology with constant back-off rates ``r``; its moment system closes exactly."""
    r = [float(v) for v in r]
    H = [float(v) for v in H]
    if len(r) != len(H) or not all(v > 0 for v in r + H):
        raise ValueError("r and H must be positive and of equal length")
    n = len(r)
    rates = [PolynomialRate.constant(2 * n, r[k]) for k in range(n)]
    return _csma_skeleton(n, rates, H, "csma-blind")


def network_age(per_link) -> float:
    return float(np.mean(per_link))
