"""Age-aware versus age-blind CSMA: network-age gain and the optimized gain curve."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .closure import order_sweep
from .csma import CsmaParams, age_blind_model, csma_model, network_age
from .csma_exact import ExactGrid, aware_mean_ages
from .sca import (
    ClosureObjective,
    ExactCsmaObjective,
    ScaConfig,
    ScaTrace,
    blind_family,
    csma_family,
    grid_start,
    sca_minimize,
)
from .simulate import SimConfig, run_replicas

METHODS = ("exact", "solver", "simulator")


@dataclass
class GainReport:
    method: str
    aware_ages: np.ndarray
    blind_ages: np.ndarray

    @property
    def avg_aware(self) -> float:
        return network_age(self.aware_ages)

    @property
    def avg_blind(self) -> float:
        return network_age(self.blind_ages)

    @property
    def gain(self) -> float:
        return (self.avg_blind - self.avg_aware) / self.avg_blind


def blind_ages(r, H) -> np.ndarray:
    """Exact: the constant-rate moment system has no boundary terms."""
    return order_sweep(age_blind_model(r, H), [2]).avg_age


def aware_ages(p: CsmaParams, method: str = "exact", *, order: int = 10, c: float = 1.0,
               sim: SimConfig | None = None, replicas: int = 4) -> np.ndarray:
    if method == "exact":
        return aware_mean_ages(p.a, p.H)
    if method == "solver":
        return order_sweep(csma_model(p), [order], c).avg_age
    if method == "simulator":
        cfg = sim or SimConfig(max_events=500_000, moment_order=1)
        stats = run_replicas(csma_model(p), cfg, replicas, workers=replicas)
        return np.array([stats.mean_age(i) for i in range(p.n)])
    raise ValueError(f"unknown method {method!r}; choose from {METHODS}")


def compare(aware: CsmaParams, blind: CsmaParams, method: str = "exact", **kw) -> GainReport:
    """Network age of each scheme and the relative gain ``(blind - aware) / blind``.

    ``blind.a`` holds the constant back-off rates. The blind scheme is
    evaluated by its exact moment system unless ``method`` is ``simulator``.
    """
    if aware.H != blind.H:
        raise ValueError("both schemes must share the service rates")
    if method == "simulator":
        sim = kw.get("sim") or SimConfig(max_events=500_000, moment_order=1)
        replicas = kw.get("replicas", 4)
        stats = run_replicas(age_blind_model(blind.a, blind.H), sim, replicas, workers=replicas)
        b = np.array([stats.mean_age(i) for i in range(blind.n)])
    else:
        b = blind_ages(blind.a, blind.H)
    return GainReport(method, aware_ages(aware, method, **kw), b)


@dataclass
class OptimizedPoint:
    H: tuple[float, ...]
    a: np.ndarray
    r: np.ndarray
    avg_aware: float
    avg_blind: float
    aware_trace: ScaTrace = field(repr=False, default=None)
    blind_trace: ScaTrace = field(repr=False, default=None)

    @property
    def gain(self) -> float:
        return (self.avg_blind - self.avg_aware) / self.avg_blind


def optimize_pair(H: Sequence[float], bounds=(0.1, 10.0), *, aware_method: str = "exact",
                  order: int = 10, c: float = 1.0, grid_points: int = 9,
                  cfg: ScaConfig = ScaConfig(eps=1e-9)) -> OptimizedPoint:
    """Optimize both schemes over the same box: coarse log grid, then SCA from the best grid point.

    The blind scheme uses its exact moment system with the analytic
    gradient. The aware scheme uses the semi-analytic evaluator
    (``aware_method="exact"``) or the closed moment system (``"solver"``).
    """
    H = tuple(float(h) for h in H)
    blind_obj = ClosureObjective(blind_family(H, bounds), order=2, combine=False)
    r, btrace = sca_minimize(blind_obj, ScaConfig(**{**cfg.__dict__, "initial": tuple(grid_start(blind_obj, grid_points))}))
    if aware_method == "exact":
        aware_obj = ExactCsmaObjective(H, blind_obj.bounds, ExactGrid())
    elif aware_method == "solver":
        aware_obj = ClosureObjective(csma_family(H, bounds), order, c)
    else:
        raise ValueError("aware_method must be 'exact' or 'solver'")
    a, atrace = sca_minimize(aware_obj, ScaConfig(**{**cfg.__dict__, "initial": tuple(grid_start(aware_obj, grid_points))}))
    return OptimizedPoint(H, a, r, atrace.objective[-1], btrace.objective[-1], atrace, btrace)


def gain_curve(H1: float = 1.0, H2s: Sequence[float] = (0.5, 1.0, 2.0, 4.0), bounds=(0.1, 10.0),
               **kw) -> list[OptimizedPoint]:
    return [optimize_pair((H1, h2), bounds, **kw) for h2 in H2s]


def write_gain_csv(points: Sequence[OptimizedPoint], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        n = len(points[0].H) if points else 0
        w.writerow(["H2", "avg_aware", "avg_blind", "gain"] + [f"a_{i}" for i in range(n)] + [f"r_{i}" for i in range(n)])
        for p in points:
            w.writerow(
                [repr(p.H[1]), repr(p.avg_aware), repr(p.avg_blind), repr(p.gain)]
                + [repr(float(v)) for v in p.a]
                + [repr(float(v)) for v in p.r]
            )
