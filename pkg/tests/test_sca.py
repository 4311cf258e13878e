import csv
import math

import numpy as np
import pytest

from oracles import D_MEAN_D_A1_AT_1, HALF_NORMAL
from shs_aoi.closure import SingularSystemError
from shs_aoi.sca import (
    ClosureObjective,
    ExactCsmaObjective,
    ScaConfig,
    blind_family,
    csma_family,
    grid_start,
    illustrative_family,
    objective,
    projected_gradient_norm,
    sca_minimize,
    gradient,
)


class Quadratic:
    """f(x) = |x - center|^2 over a box."""

    def __init__(self, center, bounds):
        self.center = np.asarray(center, dtype=float)
        self.bounds = np.asarray(bounds, dtype=float)

    def value(self, x):
        return float(np.sum((np.asarray(x) - self.center) ** 2))

    def gradient(self, x):
        return 2 * (np.asarray(x) - self.center)


def test_illustrative_objective_matches_analytic():
    fam = illustrative_family()
    assert objective([1.0], fam, 100) == pytest.approx(HALF_NORMAL[1.0][0], rel=0.01)
    assert objective([100.0], fam, 100) == pytest.approx(HALF_NORMAL[100.0][0], rel=0.01)


def test_illustrative_gradient_matches_analytic():
    g = gradient([1.0], illustrative_family(), 100)
    assert g[0] == pytest.approx(D_MEAN_D_A1_AT_1, rel=0.01)


@pytest.mark.parametrize("family", [csma_family((1.0, 2.0)), blind_family((1.0, 2.0))], ids=["aware", "blind"])
def test_analytic_gradient_matches_central_differences(family):
    rng = np.random.default_rng(0)
    analytic = ClosureObjective(family, 6, combine=False)
    fd = ClosureObjective(family, 6, combine=False, gradient_mode="fd", fd_step=1e-6)
    for _ in range(10):
        eta = np.exp(rng.uniform(np.log(0.2), np.log(8.0), 2))
        ga, gf = analytic.gradient(eta), fd.gradient(eta)
        assert np.linalg.norm(ga - gf) <= 1e-4 * np.linalg.norm(gf)


def test_combined_gradient_matches_central_differences():
    obj = ClosureObjective(illustrative_family(), 12)
    fd = ClosureObjective(illustrative_family(), 12, gradient_mode="fd", fd_step=1e-6)
    assert obj.gradient([2.5]) == pytest.approx(fd.gradient([2.5]), rel=1e-5)


def test_symmetric_objective_and_gradient():
    obj = ClosureObjective(csma_family((1.0, 1.0)), 6, combine=False)
    assert obj.value([1.0, 3.0]) == pytest.approx(obj.value([3.0, 1.0]), rel=1e-10)
    g = obj.gradient([2.0, 2.0])
    assert g[0] == pytest.approx(g[1], rel=1e-8)


def test_illustrative_optimum_at_upper_bound():
    x, trace = sca_minimize(ClosureObjective(illustrative_family(), 20), ScaConfig(eps=1e-12))
    assert x[0] == pytest.approx(1000.0)
    assert trace.reason == "eps"


def test_zero_gradient_is_fixed_point():
    obj = Quadratic([1.0, 2.0], [[0.0, 5.0], [0.0, 5.0]])
    x, trace = sca_minimize(obj, ScaConfig(initial=(1.0, 2.0)))
    assert np.array_equal(x, [1.0, 2.0])
    assert trace.step_norm[0] == 0.0 and trace.reason == "eps"


def test_quadratic_with_active_bound():
    obj = Quadratic([1.0, 7.0], [[0.0, 5.0], [0.0, 5.0]])
    x, trace = sca_minimize(obj, ScaConfig(eps=1e-14))
    assert x == pytest.approx([1.0, 5.0], abs=1e-6)
    assert projected_gradient_norm(x, obj.gradient(x), obj.bounds) < 1e-5


@pytest.mark.parametrize("start", [(1.0, 5.0), (0.2, 0.3), (9.0, 0.5)])
def test_symmetric_blind_optimum(start):
    x, trace = sca_minimize(ClosureObjective(blind_family((1.0, 1.0)), 2, combine=False),
                            ScaConfig(eps=1e-12, initial=start))
    assert abs(x[0] - x[1]) < 1e-3


def test_symmetric_aware_optimum_from_center():
    x, _ = sca_minimize(ClosureObjective(csma_family((1.0, 1.0)), 6, combine=False), ScaConfig(eps=1e-10))
    assert abs(x[0] - x[1]) < 1e-3


def test_trace_invariants_and_csv(tmp_path):
    obj = ClosureObjective(csma_family((1.0, 2.0)), 6, combine=False)
    x, trace = sca_minimize(obj, ScaConfig(eps=1e-10, initial=(1.0, 5.0)))
    obj_trace = np.array(trace.objective)
    assert np.all(np.diff(obj_trace) <= 1e-10)
    lo, hi = obj.bounds[:, 0], obj.bounds[:, 1]
    assert all(np.all(it >= lo) and np.all(it <= hi) for it in trace.iterates)
    # surrogate never below the objective at the accepted point
    assert all(trace.surrogate[k] >= trace.objective[k + 1] - 1e-12 for k in range(len(trace.objective) - 1))
    trace.write_csv(tmp_path / "trace.csv")
    rows = list(csv.reader(open(tmp_path / "trace.csv")))
    assert rows[0][:4] == ["iteration", "objective", "surrogate", "step_norm"]
    assert len(rows) == len(trace.objective) + 1


def test_max_iter_reason():
    obj = Quadratic([1.0], [[-100.0, 100.0]])
    obj.bounds = np.array([[0.5, 100.0]])
    _, trace = sca_minimize(obj, ScaConfig(eps=1e-300, max_iter=3, alpha=1e-4, grow=1.0))
    assert trace.reason == "max_iter"


def test_singular_point_shrinks_step():
    class Wall(Quadratic):
        def value(self, x):
            if x[0] < 2.0:
                raise SingularSystemError(math.inf, 0, 1.0)
            return super().value(x)

    obj = Wall([0.0], [[1.0, 10.0]])
    x, trace = sca_minimize(obj, ScaConfig(eps=1e-10, initial=(5.0,), perturbation=0.01))
    assert 2.0 <= x[0] < 2.1


def test_grid_start_picks_best_point():
    obj = Quadratic([1.0, 1.0], [[0.1, 10.0], [0.1, 10.0]])
    assert grid_start(obj, 9) == pytest.approx([1.0, 1.0])


def test_exact_objective_is_symmetric():
    obj = ExactCsmaObjective((1.0, 1.0), np.array([[0.1, 10.0], [0.1, 10.0]]))
    assert obj.value([1.0, 4.0]) == pytest.approx(obj.value([4.0, 1.0]), rel=1e-9)


def test_config_validation():
    with pytest.raises(ValueError):
        ScaConfig(eps=0.0)
    with pytest.raises(ValueError):
        ClosureObjective(illustrative_family(), 4, gradient_mode="bogus")
    with pytest.raises(ValueError):
        illustrative_family((5.0, 1.0))
