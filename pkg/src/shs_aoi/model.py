"""Age-dependent stochastic hybrid system (SHS) models.

A model has ``n`` age components that drift at unit or zero speed depending
on the discrete state, and a list of transitions. Each transition fires with a
polynomial rate in the ages and applies either a binary substitution matrix or
a constant reset to the age vector.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

Exps = tuple[int, ...]


@dataclass(frozen=True)
class PolynomialRate:
    """Sparse polynomial ``sum_m a_m x^m`` over ``n`` age components."""

    n: int
    terms: Mapping[Exps, float]

    def __post_init__(self):
        clean = {}
        for exps, coef in self.terms.items():
            exps = tuple(int(e) for e in exps)
            if coef != 0.0:
                clean[exps] = clean.get(exps, 0.0) + float(coef)
        object.__setattr__(self, "terms", clean)

    @classmethod
    def constant(cls, n: int, value: float) -> "PolynomialRate":
        return cls(n, {(0,) * n: value})

    @classmethod
    def linear(cls, n: int, component: int, coef: float) -> "PolynomialRate":
        exps = [0] * n
        exps[component] = 1
        return cls(n, {tuple(exps): coef})

    @property
    def degree(self) -> int:
        return max((sum(e) for e in self.terms), default=0)

    def __call__(self, x) -> float:
        x = np.asarray(x, dtype=float)
        total = 0.0
        for exps, coef in self.terms.items():
            total += coef * float(np.prod(x ** np.asarray(exps)))
        return total

    def scaled(self, factor: float) -> "PolynomialRate":
        return PolynomialRate(self.n, {e: c * factor for e, c in self.terms.items()})


@dataclass(frozen=True)
class LinearBinaryReset:
    """Reset ``x' = A x`` with ``A`` binary and row sums at most one."""

    matrix: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        object.__setattr__(
            self, "matrix", tuple(tuple(int(v) for v in row) for row in self.matrix)
        )

    @classmethod
    def identity(cls, n: int) -> "LinearBinaryReset":
        return cls(tuple(tuple(int(i == j) for j in range(n)) for i in range(n)))

    @property
    def n(self) -> int:
        return len(self.matrix)

    def sources(self) -> list[int | None]:
        """For each row, the column it copies from, or None for a zeroing row."""
        out = []
        for row in self.matrix:
            cols = [j for j, v in enumerate(row) if v]
            out.append(cols[0] if cols else None)
        return out

    def apply(self, x):
        return np.asarray(self.matrix, dtype=float) @ np.asarray(x, dtype=float)


@dataclass(frozen=True)
class ConstantReset:
    """Reset ``x' = c`` with ``c >= 0``."""

    value: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "value", tuple(float(v) for v in self.value))

    @property
    def n(self) -> int:
        return len(self.value)

    def apply(self, x):
        return np.asarray(self.value, dtype=float)


ResetMap = LinearBinaryReset | ConstantReset


@dataclass(frozen=True)
class Transition:
    source: int
    target: int
    rate: PolynomialRate
    reset: ResetMap
    label: str = ""


@dataclass(frozen=True)
class SupportHints:
    """Declarative support knowledge used for pruning and runtime assertions.

    ``zero`` maps a state to the components that are identically zero there.
    ``less_than`` lists ``(state, i, j)`` meaning ``x_i < x_j`` holds in ``state``.
    """

    zero: Mapping[int, tuple[int, ...]] = field(default_factory=dict)
    less_than: tuple[tuple[int, int, int], ...] = ()

    def pinned(self, state: int) -> tuple[int, ...]:
        return tuple(self.zero.get(state, ()))


@dataclass(frozen=True)
class ShsModel:
    n: int
    states: tuple[int, ...]
    drift: Mapping[int, tuple[int, ...]]
    transitions: tuple[Transition, ...]
    support: SupportHints = field(default_factory=SupportHints)
    labels: Mapping[int, str] = field(default_factory=dict)
    name: str = ""
    # components whose average age is reported; None means all
    tracked: tuple[int, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "states", tuple(int(s) for s in self.states))
        object.__setattr__(self, "transitions", tuple(self.transitions))
        object.__setattr__(
            self, "drift", {int(q): tuple(int(v) for v in b) for q, b in self.drift.items()}
        )

    def outgoing(self, state: int) -> list[int]:
        return [l for l, tr in enumerate(self.transitions) if tr.source == state]

    def incoming(self, state: int) -> list[int]:
        return [l for l, tr in enumerate(self.transitions) if tr.target == state]

    @property
    def tracked_components(self) -> tuple[int, ...]:
        return tuple(range(self.n)) if self.tracked is None else tuple(self.tracked)

    @property
    def max_rate_degree(self) -> int:
        return max((tr.rate.degree for tr in self.transitions), default=0)


def _grid(n: int, x_max: float, points: int) -> Iterable[np.ndarray]:
    axis = np.linspace(0.0, x_max, points)
    if n <= 4:
        for p in itertools.product(axis, repeat=n):
            yield np.asarray(p)
    else:
        rng = np.random.default_rng(0)
        yield np.zeros(n)
        for _ in range(points**4):
            yield rng.uniform(0.0, x_max, n)


def validate_model(model: ShsModel, x_max: float = 10.0, grid_points: int = 6) -> list[str]:
    """Check the structural assumptions on an SHS; returns human-readable diagnostics.

    An empty list means the model is well formed. Rate nonnegativity is
    checked exactly when every coefficient is nonnegative and on a grid of
    ``[0, x_max]^n`` otherwise. Irreducibility problems are reported with a
    ``warning:`` prefix.
    """
    diags: list[str] = []
    n = model.n
    states = set(model.states)
    if len(states) != len(model.states):
        diags.append("duplicate state ids")
    for q in model.states:
        b = model.drift.get(q)
        if b is None:
            diags.append(f"state {q}: missing drift vector")
            continue
        if len(b) != n:
            diags.append(f"state {q}: drift length {len(b)} != n={n}")
        if any(v not in (0, 1) for v in b):
            diags.append(f"state {q}: drift entries must be 0 or 1")
    for q in model.drift:
        if q not in states:
            diags.append(f"drift given for unknown state {q}")

    for l, tr in enumerate(model.transitions):
        where = f"transition {l} ({tr.source}->{tr.target})"
        if tr.source not in states or tr.target not in states:
            diags.append(f"{where}: source/target not in state set")
        rate = tr.rate
        if rate.n != n or any(len(e) != n for e in rate.terms):
            diags.append(f"{where}: rate dimension != n={n}")
        elif any(min(e) < 0 for e in rate.terms):
            diags.append(f"{where}: negative exponent in rate")
        elif any(c < 0 for c in rate.terms.values()):
            for x in _grid(n, x_max, grid_points):
                if rate(x) < 0:
                    diags.append(f"{where}: rate negative at grid point {x.tolist()}")
                    break
        reset = tr.reset
        if reset.n != n:
            diags.append(f"{where}: reset dimension != n={n}")
        elif isinstance(reset, LinearBinaryReset):
            if any(len(row) != n for row in reset.matrix):
                diags.append(f"{where}: reset matrix is not {n}x{n}")
            elif any(v not in (0, 1) for row in reset.matrix for v in row):
                diags.append(f"{where}: reset matrix entry not binary")
            elif any(sum(row) > 1 for row in reset.matrix):
                diags.append(f"{where}: reset row sum > 1")
        elif any(v < 0 for v in reset.value):
            diags.append(f"{where}: constant reset has negative entry")

    for q, comps in model.support.zero.items():
        if q not in states or any(not 0 <= i < n for i in comps):
            diags.append(f"support hint for state {q} out of range")
    if model.tracked is not None and any(not 0 <= i < n for i in model.tracked):
        diags.append("tracked component out of range")
    for q, i, j in model.support.less_than:
        if q not in states or not (0 <= i < n and 0 <= j < n):
            diags.append(f"order hint ({q}, {i}, {j}) out of range")

    if not diags and len(states) > 1 and not _strongly_connected(model):
        diags.append("warning: transition graph is not strongly connected")
    return diags


def errors_only(diags: Sequence[str]) -> list[str]:
    return [d for d in diags if not d.startswith("warning:")]


def _strongly_connected(model: ShsModel) -> bool:
    adj = {q: set() for q in model.states}
    radj = {q: set() for q in model.states}
    for tr in model.transitions:
        adj[tr.source].add(tr.target)
        radj[tr.target].add(tr.source)

    def reach(graph, start):
        seen, stack = {start}, [start]
        while stack:
            for nxt in graph[stack.pop()]:
                if nxt not in seen:
                    seen.add(nxt)
                    stack.append(nxt)
        return seen

    root = model.states[0]
    everything = set(model.states)
    return reach(adj, root) == everything and reach(radj, root) == everything


def illustrative_model(a1: float) -> ShsModel:
    """Single state, single age; self-transition with rate ``a1*x`` resetting to 0."""
    if not a1 > 0:
        raise ValueError(f"a1 must be positive, got {a1}")
    return ShsModel(
        n=1,
        states=(0,),
        drift={0: (1,)},
        transitions=(
            Transition(0, 0, PolynomialRate.linear(1, 0, a1), ConstantReset((0.0,)), "sample"),
        ),
        name="illustrative",
    )
