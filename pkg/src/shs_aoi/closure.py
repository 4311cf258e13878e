"""Truncated, scaled and closed steady-state moment systems.

The ages are tracked through ``z = x / c``. Every generator row is truncated
at ``max_order``; a term that overflows because a rate monomial raised its
order is closed by matching moments of adjacent orders in ``z``-space, i.e.
the rate exponent is removed from the index while the ``c`` power of the
original order is kept. One order-0 row is replaced by the normalization
``sum_q mu^0_q = 1``.

A single truncation order gives an estimate whose error alternates with the
parity of the order: for the one-dimensional example the even-order estimate
is proportional to ``c`` and the odd-order one to ``1/c``. The headline
estimate therefore combines the last even and last odd order by their
geometric mean, which cancels that factor.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.linalg as sla
from scipy.linalg import lapack

from .model import ShsModel, errors_only, validate_model
from .moments import MomentIndex, enumerate_indices, row_terms

DEFAULT_MAX_UNKNOWNS = 8000


class SystemTooLarge(ValueError):
    def __init__(self, count: int, cap: int):
        super().__init__(f"moment system has {count} unknowns, cap is {cap}")
        self.count = count
        self.cap = cap


class SingularSystemError(np.linalg.LinAlgError):
    def __init__(self, condition: float, order: int, scale: float):
        super().__init__(
            f"moment system numerically singular (condition ~{condition:.3g}) "
            f"at order {order}, scale {scale:g}: raise the order or change the scale"
        )
        self.condition = condition
        self.order = order
        self.scale = scale


@dataclass
class MomentSystem:
    model: ShsModel
    indices: list[MomentIndex]
    E: np.ndarray
    b: np.ndarray
    scale: float
    max_order: int
    # (row target, boundary index) -> interior index used in its place
    closure_map: dict[tuple[MomentIndex, MomentIndex], MomentIndex]
    normalization_row: int
    closure: str = "match"
    position: dict[MomentIndex, int] = field(default_factory=dict, repr=False)

    def selector(self, component: int) -> np.ndarray:
        """Vector ``d`` picking the scaled first-order moments of ``component`` in every state."""
        d = np.zeros(len(self.indices))
        for k, idx in enumerate(self.indices):
            if idx.order == 1 and idx.exps[component] == 1:
                d[k] = 1.0
        return d

    @property
    def orders(self) -> np.ndarray:
        return np.array([idx.order for idx in self.indices])


@dataclass
class SolveReport:
    moments: dict[MomentIndex, float]
    avg_age: np.ndarray
    truncation_orders_tried: list[int]
    estimates_by_order: list[np.ndarray | None]
    condition_estimate: float
    scale_used: float
    combined_by_order: list[np.ndarray | None] = field(default_factory=list)
    errors: dict[int, str] = field(default_factory=dict)
    # geometric mean of each moment over the paired orders M - 1 and M (NaN on sign disagreement)
    combined_moments: dict[MomentIndex, float] = field(default_factory=dict)

    def write_csv(self, path) -> None:
        """Per-order raw and parity-combined estimates, one column per tracked component."""
        k = len(self.avg_age)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(
                ["order"]
                + [f"estimate_{i}" for i in range(k)]
                + [f"combined_{i}" for i in range(k)]
                + ["estimate", "combined"]
            )
            for order, est, comb in zip(
                self.truncation_orders_tried, self.estimates_by_order, self.combined_by_order
            ):
                est_cols = [repr(float(v)) for v in est] if est is not None else [""] * k
                comb_cols = [repr(float(v)) for v in comb] if comb is not None else [""] * k
                w.writerow(
                    [order]
                    + est_cols
                    + comb_cols
                    + [repr(float(np.mean(est))) if est is not None else ""]
                    + [repr(float(np.mean(comb))) if comb is not None else ""]
                )


def _close(idx: MomentIndex, rate_exps, max_order: int) -> MomentIndex:
    exps = list(idx.exps)
    remaining = list(rate_exps)
    excess = idx.order - max_order
    j = len(remaining) - 1
    while excess > 0:
        while remaining[j] == 0:
            j -= 1
        exps[j] -= 1
        remaining[j] -= 1
        excess -= 1
    return MomentIndex(idx.state, tuple(exps))


def _fill(model, indices, position, max_order, c, *, drift, closure):
    N = len(indices)
    E = np.zeros((N, N))
    closure_map = {}
    for k, target in enumerate(indices):
        rho = target.order
        row_scale = c ** (-max(rho - 1, 0))
        for idx, coef, rate_exps in row_terms(model, target, drift=drift):
            col = position.get(idx)
            if col is None:
                if closure == "zero":
                    continue
                interior = _close(idx, rate_exps, max_order)
                closure_map[(target, idx)] = interior
                col = position[interior]
            E[k, col] += coef * c**idx.order * row_scale
    return E, closure_map


def assemble(
    model: ShsModel,
    max_order: int,
    c: float = 1.0,
    *,
    closure: str = "match",
    max_unknowns: int = DEFAULT_MAX_UNKNOWNS,
    check: bool = True,
) -> MomentSystem:
    """Build the closed linear system ``E nu = b`` in scaled moments ``nu = mu / c^order``.

    ``closure`` is ``"match"`` (adjacent-order matching) or ``"zero"``
    (drop out-of-range moments, for contrast only).
    """
    if max_order < 1:
        raise ValueError("max_order must be at least 1")
    if c < 1:
        raise ValueError("scale c must be >= 1")
    if closure not in ("match", "zero"):
        raise ValueError(f"unknown closure {closure!r}")
    if check:
        errs = errors_only(validate_model(model))
        if errs:
            raise ValueError("invalid model: " + "; ".join(errs))
    indices = enumerate_indices(model, max_order)
    if len(indices) > max_unknowns:
        raise SystemTooLarge(len(indices), max_unknowns)
    position = {idx: k for k, idx in enumerate(indices)}
    E, closure_map = _fill(model, indices, position, max_order, c, drift=True, closure=closure)

    zero = (0,) * model.n
    norm = position[MomentIndex(model.states[0], zero)]
    E[norm, :] = 0.0
    for q in model.states:
        E[norm, position[MomentIndex(q, zero)]] = 1.0
    b = np.zeros(len(indices))
    b[norm] = 1.0
    return MomentSystem(model, indices, E, b, float(c), max_order, closure_map, norm, closure, position)


def rate_derivative_matrix(system: MomentSystem, dmodel: ShsModel) -> np.ndarray:
    """``dE`` for a model whose rate coefficients are the derivatives of ``system.model``'s.

    Rows are linear in the rate coefficients and drift does not depend on
    them, so assembling the derivative model without drift gives the exact
    derivative. The normalization row is parameter free.
    """
    dE, _ = _fill(
        dmodel,
        system.indices,
        system.position,
        system.max_order,
        system.scale,
        drift=False,
        closure=system.closure,
    )
    dE[system.normalization_row, :] = 0.0
    return dE


@dataclass
class Factorized:
    """LU factors of ``E`` with the scaled solution, ready for adjoint solves."""

    system: MomentSystem
    lu: tuple
    nu: np.ndarray
    rcond: float

    @property
    def condition(self) -> float:
        return math.inf if self.rcond == 0 else 1.0 / self.rcond

    def adjoint(self, rhs: np.ndarray) -> np.ndarray:
        return sla.lu_solve(self.lu, rhs, trans=1)

    def avg_age(self) -> np.ndarray:
        c = self.system.scale
        return np.array([c * self.system.selector(i) @ self.nu for i in self.system.model.tracked_components])


def factorize(system: MomentSystem, rcond_min: float = 1e-300) -> Factorized:
    """Dense LU with partial pivoting plus a LAPACK one-norm condition estimate.

    Raises :class:`SingularSystemError` on an exactly zero pivot, a condition
    estimate below ``rcond_min`` or a non-finite solution.
    """
    E = system.E
    with np.errstate(all="ignore"), warnings.catch_warnings():
        warnings.simplefilter("ignore", sla.LinAlgWarning)
        lu, piv = sla.lu_factor(E, check_finite=True)
        anorm = np.abs(E).sum(axis=0).max()
        rcond, info = lapack.dgecon(lu, anorm, norm="1")
    if np.any(np.diag(lu) == 0.0) or not rcond >= rcond_min:
        raise SingularSystemError(1.0 / rcond if rcond > 0 else math.inf, system.max_order, system.scale)
    nu = sla.lu_solve((lu, piv), system.b)
    if not np.all(np.isfinite(nu)):
        raise SingularSystemError(math.inf, system.max_order, system.scale)
    return Factorized(system, (lu, piv), nu, float(rcond))


def solve(system: MomentSystem) -> SolveReport:
    f = factorize(system)
    c = system.scale
    moments = {idx: float(v * c**idx.order) for idx, v in zip(system.indices, f.nu)}
    avg = f.avg_age()
    return SolveReport(
        moments=moments,
        avg_age=avg,
        truncation_orders_tried=[system.max_order],
        estimates_by_order=[avg],
        condition_estimate=f.condition,
        scale_used=c,
        combined_by_order=[None],
    )


def combine_parity(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Geometric mean of estimates from two truncation orders of opposite parity.

    NaN where the two estimates do not share a positive sign.
    """
    prod = np.asarray(a, dtype=float) * np.asarray(b, dtype=float)
    ok = (prod > 0) & (np.asarray(a) > 0)
    return np.where(ok, np.sqrt(np.where(ok, prod, 1.0)), np.nan)


def order_sweep(
    model: ShsModel,
    orders: Sequence[int],
    c: float = 1.0,
    *,
    closure: str = "match",
    max_unknowns: int = DEFAULT_MAX_UNKNOWNS,
) -> SolveReport:
    """Solve at each truncation order; per-order failures are recorded, not raised.

    ``combined_by_order[k]`` pairs order ``M = orders[k]`` with ``M - 1``
    (solved as well when not listed). The final ``avg_age`` is the combined
    estimate at the last order where both solves succeeded.
    """
    orders = list(orders)
    if any(o < 2 for o in orders) or orders != sorted(orders):
        raise ValueError("orders must be ascending and >= 2")
    if errors_only(validate_model(model)):
        raise ValueError("invalid model: " + "; ".join(errors_only(validate_model(model))))
    cache: dict[int, SolveReport | str] = {}

    def attempt(order):
        if order not in cache:
            try:
                cache[order] = solve(
                    assemble(model, order, c, closure=closure, max_unknowns=max_unknowns, check=False)
                )
            except (SingularSystemError, SystemTooLarge) as exc:
                cache[order] = str(exc)
        return cache[order]

    estimates: list[np.ndarray | None] = []
    combined: list[np.ndarray | None] = []
    errors: dict[int, str] = {}
    last_moments, last_cond, avg, last_combined = {}, math.nan, None, {}
    for order in orders:
        rep, low = attempt(order), attempt(order - 1)
        if isinstance(rep, str):
            estimates.append(None)
            combined.append(None)
            errors[order] = rep
            continue
        estimates.append(rep.avg_age)
        last_moments, last_cond = rep.moments, rep.condition_estimate
        if isinstance(low, str):
            combined.append(None)
            errors[order - 1] = low
            continue
        with np.errstate(invalid="ignore"):
            combined.append(combine_parity(rep.avg_age, low.avg_age))
        avg = combined[-1]
        last_combined = {
            k: float(combine_parity(v, low.moments[k])) for k, v in rep.moments.items() if k in low.moments
        }

    if avg is None:
        raise SingularSystemError(math.inf, orders[-1], c)
    return SolveReport(
        moments=last_moments,
        avg_age=avg,
        truncation_orders_tried=orders,
        estimates_by_order=estimates,
        condition_estimate=last_cond,
        scale_used=float(c),
        combined_by_order=combined,
        errors=errors,
        combined_moments=last_combined,
    )


def estimate_avg_age(model: ShsModel, order: int, c: float = 1.0, **kw) -> SolveReport:
    """Headline closure estimate at truncation ``order`` (pairs ``order`` with ``order - 1``)."""
    return order_sweep(model, [order], c, **kw)


def round_up_1sig(x: float) -> float:
    if x <= 0:
        return 0.0
    p = 10.0 ** math.floor(math.log10(x))
    return math.ceil(x / p - 1e-12) * p


def auto_scale(model: ShsModel, pilot_events: int = 20_000, seed: int = 0) -> float:
    """Heuristic scale: ``max(1, 2 * pilot mean of the largest tracked age)``, rounded up to one significant figure."""
    if pilot_events < 1000:
        raise ValueError("pilot budget must be at least 1000 events")
    from .simulate import SimConfig, run

    stats = run(model, SimConfig(max_events=pilot_events, seed=seed, moment_order=1))
    largest = max(stats.mean_age(i) for i in model.tracked_components)
    return max(1.0, round_up_1sig(2.0 * largest))
