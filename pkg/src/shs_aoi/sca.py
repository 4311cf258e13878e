"""Sequential convex approximation (SCA) of the average-age objective over a box.

Each iteration linearizes the objective at the current point and adds a
proximal term, ``U(y, x) = f(x) + g'(y - x) + |y - x|^2 / (2 alpha)``. Over a
box its minimizer is the clipped gradient step. ``alpha`` is halved until
``f(y) <= U(y, x)``, so every accepted step is a majorization step and the
objective sequence cannot increase.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Protocol, Sequence

import numpy as np

from .closure import (
    MomentSystem,
    SingularSystemError,
    assemble,
    factorize,
    rate_derivative_matrix,
)
from .csma import CsmaParams, age_blind_model, csma_model
from .csma_exact import ExactGrid, aware_mean_ages
from .model import PolynomialRate, ShsModel, Transition, illustrative_model


class Objective(Protocol):
    bounds: np.ndarray

    def value(self, eta) -> float: ...

    def gradient(self, eta) -> np.ndarray: ...


# ---------------------------------------------------------------------------
# model families


@dataclass(frozen=True)
class Family:
    """A model whose rate coefficients are affine in the parameter vector ``eta``."""

    name: str
    build: Callable[[np.ndarray], ShsModel]
    bounds: np.ndarray

    def model(self, eta) -> ShsModel:
        return self.build(np.asarray(eta, dtype=float))

    def derivative_model(self, eta, i: int) -> ShsModel:
        """Same structure with every rate replaced by its derivative in ``eta[i]``.

        Coefficients are affine in ``eta``, so a unit difference is exact.
        """
        eta = np.asarray(eta, dtype=float)
        up = eta.copy()
        up[i] += 1.0
        base, moved = self.model(eta), self.model(up)
        transitions = []
        for t0, t1 in zip(base.transitions, moved.transitions):
            keys = set(t0.rate.terms) | set(t1.rate.terms)
            terms = {k: t1.rate.terms.get(k, 0.0) - t0.rate.terms.get(k, 0.0) for k in keys}
            transitions.append(Transition(t0.source, t0.target, PolynomialRate(base.n, terms), t0.reset, t0.label))
        return ShsModel(
            base.n, base.states, base.drift, tuple(transitions), base.support, base.labels, base.name, base.tracked
        )


def _box(bounds, dim: int) -> np.ndarray:
    b = np.asarray(bounds, dtype=float)
    if b.shape == (2,):
        b = np.tile(b, (dim, 1))
    if b.shape != (dim, 2) or np.any(b[:, 0] <= 0) or np.any(b[:, 0] >= b[:, 1]):
        raise ValueError(f"bounds must be {dim} pairs with 0 < lo < hi")
    return b


def illustrative_family(bounds=(0.01, 1000.0)) -> Family:
    return Family("illustrative", lambda eta: illustrative_model(float(eta[0])), _box(bounds, 1))


def csma_family(H: Sequence[float], bounds=(0.1, 10.0)) -> Family:
    """Age-aware CSMA with back-off coefficients ``a = eta`` and fixed service rates."""
    H = tuple(float(h) for h in H)
    return Family("csma", lambda eta: csma_model(CsmaParams(tuple(eta), H)), _box(bounds, len(H)))


def blind_family(H: Sequence[float], bounds=(0.1, 10.0)) -> Family:
    """Age-blind CSMA with constant back-off rates ``r = eta``."""
    H = tuple(float(h) for h in H)
    return Family("csma-blind", lambda eta: age_blind_model(tuple(eta), H), _box(bounds, len(H)))


# ---------------------------------------------------------------------------
# objectives


def _fd_gradient(f, eta, bounds, h):
    """Central differences, one-sided at a bound."""
    eta = np.asarray(eta, dtype=float)
    g = np.zeros_like(eta)
    for i in range(len(eta)):
        step = h * max(1.0, abs(eta[i]))
        lo, hi = bounds[i]
        up, dn = eta.copy(), eta.copy()
        up[i] = min(eta[i] + step, hi)
        dn[i] = max(eta[i] - step, lo)
        g[i] = (f(up) - f(dn)) / (up[i] - dn[i])
    return g


@dataclass
class ClosureObjective:
    """Network average age (mean over tracked components) from the closed moment system.

    With ``combine=True`` the value is the geometric mean of the estimates
    at orders ``order - 1`` and ``order``; otherwise the single-order estimate.
    """

    family: Family
    order: int
    c: float = 1.0
    combine: bool = True
    gradient_mode: str = "analytic"
    fd_step: float = 1e-6

    def __post_init__(self):
        if self.gradient_mode not in ("analytic", "fd"):
            raise ValueError("gradient_mode must be 'analytic' or 'fd'")

    @property
    def bounds(self) -> np.ndarray:
        return self.family.bounds

    def _orders(self):
        return (self.order - 1, self.order) if self.combine else (self.order,)

    def _single(self, eta, order, with_grad):
        model = self.family.model(eta)
        system = assemble(model, order, self.c, check=False)
        f = factorize(system)
        d = np.mean([system.selector(i) for i in model.tracked_components], axis=0)
        value = self.c * d @ f.nu
        if not with_grad:
            return value, None
        lam = f.adjoint(d)
        grad = np.array(
            [
                -self.c * lam @ (rate_derivative_matrix(system, self.family.derivative_model(eta, i)) @ f.nu)
                for i in range(len(eta))
            ]
        )
        return value, grad

    def _evaluate(self, eta, with_grad):
        eta = np.asarray(eta, dtype=float)
        parts = [self._single(eta, o, with_grad) for o in self._orders()]
        if len(parts) == 1:
            return parts[0]
        (v1, g1), (v2, g2) = parts
        if v1 <= 0 or v2 <= 0:
            raise SingularSystemError(math.nan, self.order, self.c)
        value = math.sqrt(v1 * v2)
        grad = None if g1 is None else 0.5 * value * (g1 / v1 + g2 / v2)
        return value, grad

    def value(self, eta) -> float:
        return float(self._evaluate(eta, False)[0])

    def gradient(self, eta) -> np.ndarray:
        if self.gradient_mode == "fd":
            return _fd_gradient(self.value, eta, self.bounds, self.fd_step)
        return self._evaluate(eta, True)[1]

    def analytic_gradient(self, eta) -> np.ndarray:
        return self._evaluate(eta, True)[1]


@dataclass
class ExactCsmaObjective:
    """Network average age of age-aware CSMA from the semi-analytic evaluator; finite-difference gradient."""

    H: tuple[float, ...]
    bounds: np.ndarray
    grid: ExactGrid = field(default_factory=ExactGrid)
    fd_step: float = 1e-5

    def value(self, eta) -> float:
        return float(np.mean(aware_mean_ages(eta, self.H, self.grid)))

    def gradient(self, eta) -> np.ndarray:
        return _fd_gradient(self.value, eta, self.bounds, self.fd_step)


def objective(eta, family: Family, order: int, c: float = 1.0, **kw) -> float:
    return ClosureObjective(family, order, c, **kw).value(eta)


def gradient(eta, family: Family, order: int, c: float = 1.0, *, mode: str = "analytic", h: float = 1e-6, **kw):
    return ClosureObjective(family, order, c, gradient_mode=mode, fd_step=h, **kw).gradient(eta)


# ---------------------------------------------------------------------------
# optimizer


@dataclass(frozen=True)
class ScaConfig:
    """``alpha`` is the initial proximal step; after an accepted step it may grow by ``grow``."""

    eps: float = 1e-9
    max_iter: int = 500
    alpha: float = 1.0
    grow: float = 2.0
    alpha_min: float = 1e-14
    initial: tuple[float, ...] | None = None
    perturbation: float = 0.05

    def __post_init__(self):
        if not self.eps > 0 or not self.alpha > 0 or self.max_iter < 1 or self.grow < 1:
            raise ValueError("need eps > 0, alpha > 0, max_iter >= 1, grow >= 1")


@dataclass
class ScaTrace:
    iterates: list[np.ndarray] = field(default_factory=list)
    objective: list[float] = field(default_factory=list)
    surrogate: list[float] = field(default_factory=list)
    step_norm: list[float] = field(default_factory=list)
    grad_norm: list[float] = field(default_factory=list)
    alpha: list[float] = field(default_factory=list)
    reason: str = ""

    def write_csv(self, path) -> None:
        dim = len(self.iterates[0]) if self.iterates else 0
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(
                ["iteration", "objective", "surrogate", "step_norm", "grad_norm", "alpha"]
                + [f"eta_{i}" for i in range(dim)]
            )
            for k in range(len(self.objective)):
                w.writerow(
                    [k, repr(self.objective[k]), repr(self.surrogate[k]), repr(self.step_norm[k]),
                     repr(self.grad_norm[k]), repr(self.alpha[k])]
                    + [repr(float(v)) for v in self.iterates[k]]
                )


def projected_gradient_norm(eta, grad, bounds) -> float:
    return float(np.linalg.norm(np.clip(eta - grad, bounds[:, 0], bounds[:, 1]) - eta))


def sca_minimize(obj: Objective, cfg: ScaConfig = ScaConfig()) -> tuple[np.ndarray, ScaTrace]:
    """Minimize ``obj`` over its box; stops when successive surrogate values differ by less than ``eps``.

    The first surrogate value is compared against the objective at a second
    feasible point (the start moved by ``perturbation`` of the box width).
    Points where the objective fails are treated like a failed majorization
    test: the step shrinks.
    """
    lo, hi = obj.bounds[:, 0], obj.bounds[:, 1]
    x = np.clip(np.asarray(cfg.initial, dtype=float), lo, hi) if cfg.initial is not None else 0.5 * (lo + hi)
    prev_point = np.clip(x + cfg.perturbation * (hi - lo), lo, hi)
    prev_u = obj.value(prev_point)
    fx = obj.value(x)
    if not math.isfinite(fx):
        raise FloatingPointError("objective is not finite at the initial point")
    trace = ScaTrace()
    alpha = cfg.alpha
    for _ in range(cfg.max_iter):
        g = obj.gradient(x)
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"gradient is not finite at {x.tolist()}")
        while True:
            y = np.clip(x - alpha * g, lo, hi)
            d = y - x
            u = fx + g @ d + d @ d / (2 * alpha)
            if not np.any(d):
                fy = fx
                break
            try:
                fy = obj.value(y)
            except (SingularSystemError, np.linalg.LinAlgError, ValueError):
                fy = math.inf
            if math.isfinite(fy) and fy <= u:
                break
            alpha *= 0.5
            if alpha < cfg.alpha_min:
                y, d, u, fy = x, np.zeros_like(x), fx, fx
                break
        trace.iterates.append(x.copy())
        trace.objective.append(float(fx))
        trace.surrogate.append(float(u))
        trace.step_norm.append(float(np.linalg.norm(d)))
        trace.grad_norm.append(projected_gradient_norm(x, g, obj.bounds))
        trace.alpha.append(alpha)
        x, fx = y, fy
        if abs(u - prev_u) < cfg.eps:
            trace.reason = "eps"
            break
        prev_u = u
        alpha = min(alpha * cfg.grow, cfg.alpha * 1e6)
    else:
        trace.reason = "max_iter"
    trace.iterates.append(x.copy())
    trace.objective.append(float(fx))
    trace.surrogate.append(float(fx))
    trace.step_norm.append(0.0)
    trace.grad_norm.append(math.nan)
    trace.alpha.append(alpha)
    return x, trace


def grid_start(obj: Objective, points: int = 9) -> np.ndarray:
    """Best point of a log-spaced grid over the box; used to seed :func:`sca_minimize`."""
    axes = [np.geomspace(lo, hi, points) for lo, hi in obj.bounds]
    best, best_val = None, math.inf
    for pt in np.array(np.meshgrid(*axes, indexing="ij")).reshape(len(axes), -1).T:
        try:
            v = obj.value(pt)
        except (SingularSystemError, np.linalg.LinAlgError, ValueError):
            continue
        if v < best_val:
            best, best_val = pt, v
    if best is None:
        raise SingularSystemError(math.inf, -1, math.nan)
    return best
