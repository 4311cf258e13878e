"""Moment ODEs obtained by applying the SHS extended generator to ``x^m 1{q = s}``.

Each row is pure index/coefficient data: ``d/dt mu[target] = sum coef * mu[index]``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from itertools import combinations
from typing import Iterable, NamedTuple

from .model import ConstantReset, LinearBinaryReset, ShsModel


class MomentIndex(NamedTuple):
    state: int
    exps: tuple[int, ...]

    @property
    def order(self) -> int:
        return sum(self.exps)

    def __str__(self):
        return f"{self.state}:{'.'.join(map(str, self.exps))}"


@dataclass
class OdeRow:
    target: MomentIndex
    terms: dict[MomentIndex, float] = field(default_factory=dict)

    def add(self, index: MomentIndex, coef: float) -> None:
        self.terms[index] = self.terms.get(index, 0.0) + coef

    def prune_zeros(self) -> "OdeRow":
        self.terms = {k: v for k, v in self.terms.items() if v != 0.0}
        return self


def is_supported(model: ShsModel, index: MomentIndex) -> bool:
    """False when the moment is identically zero because a pinned component has a positive exponent."""
    return all(index.exps[i] == 0 for i in model.support.pinned(index.state))


def _check_index(model: ShsModel, index: MomentIndex) -> None:
    if index.state not in model.states:
        raise ValueError(f"unknown state {index.state}")
    if len(index.exps) != model.n or min(index.exps) < 0:
        raise ValueError(f"bad exponent vector {index.exps} for n={model.n}")
    if not is_supported(model, index):
        raise ValueError(f"{index} has a positive exponent on a component pinned to zero")


def substitute(reset: LinearBinaryReset, exps: tuple[int, ...]) -> tuple[int, ...] | None:
    """Exponent vector of ``(A x)^m`` for a binary ``A``; None when the monomial vanishes."""
    out = [0] * len(exps)
    for i, src in enumerate(reset.sources()):
        if exps[i]:
            if src is None:
                return None
            out[src] += exps[i]
    return tuple(out)


def row_terms(model: ShsModel, target: MomentIndex, *, drift: bool = True):
    """Yield ``(index, coef, rate_exps)`` for each raw generator term of ``target``.

    ``rate_exps`` is the exponent vector of the rate monomial multiplied into
    the term (None for drift terms); the closure uses it to undo the order
    increase. Terms on unsupported indices are skipped.
    """
    _check_index(model, target)
    q, m = target

    if drift:
        b = model.drift[q]
        for i in range(model.n):
            if b[i] and m[i] >= 1:
                lower = list(m)
                lower[i] -= 1
                yield MomentIndex(q, tuple(lower)), float(m[i]), None

    for tr in model.transitions:
        if tr.target == q:
            if isinstance(tr.reset, ConstantReset):
                weight = 1.0
                for c, e in zip(tr.reset.value, m):
                    weight *= c**e
                if weight != 0.0:
                    for r, coef in tr.rate.terms.items():
                        idx = MomentIndex(tr.source, r)
                        if is_supported(model, idx):
                            yield idx, weight * coef, r
            else:
                base = substitute(tr.reset, m)
                if base is not None:
                    for r, coef in tr.rate.terms.items():
                        idx = MomentIndex(tr.source, tuple(u + v for u, v in zip(base, r)))
                        if is_supported(model, idx):
                            yield idx, coef, r
        if tr.source == q:
            for r, coef in tr.rate.terms.items():
                idx = MomentIndex(q, tuple(u + v for u, v in zip(m, r)))
                if is_supported(model, idx):
                    yield idx, -coef, r


def generator_row(model: ShsModel, target: MomentIndex, *, drift: bool = True) -> OdeRow:
    """Right-hand side of the moment ODE for ``target``.

    Terms on indices that are identically zero under the support hints are
    dropped and equal indices are merged. ``drift=False`` keeps only the
    rate-dependent (inflow/outflow) terms, which are linear in the rate
    coefficients.
    """
    row = OdeRow(target)
    for idx, coef, _ in row_terms(model, target, drift=drift):
        row.add(idx, coef)
    return row.prune_zeros()


def _compositions(total: int, parts: int) -> Iterable[tuple[int, ...]]:
    """All nonnegative integer vectors of length ``parts`` summing to ``total``, lex-descending."""
    for bars in combinations(range(total + parts - 1), parts - 1):
        prev = -1
        out = []
        for b in bars:
            out.append(b - prev - 1)
            prev = b
        out.append(total + parts - 2 - prev)
        yield tuple(out)


def enumerate_indices(model: ShsModel, max_order: int) -> list[MomentIndex]:
    """Supported indices of total order ``<= max_order`` in graded lexicographic order."""
    if max_order < 0:
        raise ValueError("max_order must be nonnegative")
    out = []
    for order in range(max_order + 1):
        block = []
        for q in model.states:
            free = [i for i in range(model.n) if i not in set(model.support.pinned(q))]
            for sub in _compositions(order, len(free)) if free else ([()] if order == 0 else []):
                exps = [0] * model.n
                for i, e in zip(free, sub):
                    exps[i] = e
                block.append(MomentIndex(q, tuple(exps)))
        out.extend(sorted(block))
    return out


def build_rows(model: ShsModel, indices: Iterable[MomentIndex], *, drift: bool = True) -> list[OdeRow]:
    return [generator_row(model, idx, drift=drift) for idx in indices]


def boundary_indices(rows: Iterable[OdeRow], included) -> set[MomentIndex]:
    """Indices referenced by ``rows`` but not part of ``included``."""
    included = set(included)
    return {idx for row in rows for idx in row.terms if idx not in included}


def write_rows_csv(rows: Iterable[OdeRow], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["target", "term", "coefficient"])
        for row in rows:
            for idx, coef in sorted(row.terms.items()):
                w.writerow([str(row.target), str(idx), repr(coef)])
