import math

import numpy as np
import pytest

from oracles import D_MEAN_D_A1_AT_1, HALF_NORMAL
from shs_aoi.closure import (
    SingularSystemError,
    SystemTooLarge,
    assemble,
    auto_scale,
    combine_parity,
    estimate_avg_age,
    factorize,
    order_sweep,
    round_up_1sig,
    solve,
)
from shs_aoi.csma import CsmaParams, age_blind_model, csma_model
from shs_aoi.model import illustrative_model
from shs_aoi.moments import MomentIndex


def test_order4_matrix_matches_hand_assembly():
    a = 3.0
    s = assemble(illustrative_model(a), 4, 1.0)
    expected = np.array(
        [
            [1, 0, 0, 0, 0],  # normalization
            [1, 0, -a, 0, 0],
            [0, 2, 0, -a, 0],
            [0, 0, 3, 0, -a],
            [0, 0, 0, 4, -a],  # -a mu^5 closed onto mu^4
        ],
        dtype=float,
    )
    assert np.allclose(s.E, expected)
    assert s.b.tolist() == [1, 0, 0, 0, 0]
    assert s.closure_map == {(MomentIndex(0, (4,)), MomentIndex(0, (5,))): MomentIndex(0, (4,))}


def test_scaled_row_for_first_order():
    # z = x / c; order-1 row: mu^0 - a1 c^2 nu^2 = 0 (divided by c^0)
    s = assemble(illustrative_model(0.1), 2, 10.0)
    assert s.E[1].tolist() == pytest.approx([1.0, 0.0, -0.1 * 100])


def test_constant_rate_system_has_no_closure_and_is_order_independent():
    m = age_blind_model((1.0, 2.0), (1.0, 0.5))
    assert assemble(m, 4).closure_map == {}
    rep = order_sweep(m, [2, 3, 5, 8])
    est = np.array(rep.estimates_by_order)
    assert np.allclose(est, est[0], rtol=1e-10)


def test_closure_map_targets_one_order_lower():
    s = assemble(csma_model(CsmaParams((1, 2), (1, 1))), 5, 2.0)
    for (_, boundary), interior in s.closure_map.items():
        assert interior.order == boundary.order - 1 == 5


@pytest.mark.parametrize("a1,c", [(100.0, 1.0), (0.1, 10.0), (1.0, 1.0)])
def test_headline_matches_analytic(a1, c):
    est = estimate_avg_age(illustrative_model(a1), 100, c).avg_age[0]
    assert est == pytest.approx(HALF_NORMAL[a1][0], rel=0.02)


def test_single_order_solve_a100():
    assert solve(assemble(illustrative_model(100.0), 100, 1.0)).avg_age[0] == pytest.approx(HALF_NORMAL[100.0][0], rel=0.02)


def test_single_order_fails_at_small_a_without_scaling():
    est = solve(assemble(illustrative_model(0.1), 100, 1.0)).avg_age[0]
    assert abs(est - HALF_NORMAL[0.1][0]) / HALF_NORMAL[0.1][0] > 0.2


def test_sparse_orders_at_a1_equals_one():
    rep = order_sweep(illustrative_model(1.0), [10, 20, 40, 80])
    assert abs(rep.avg_age[0] - math.sqrt(2 / math.pi)) / math.sqrt(2 / math.pi) < 0.01


def test_sweep_refinement_shrinks():
    rep = order_sweep(illustrative_model(100.0), list(range(4, 101)), 1.0)
    comb = [float(v[0]) for v in rep.combined_by_order]
    steps = [abs(comb[k + 2] - comb[k]) for k in range(len(comb) - 2)]
    assert all(steps[k + 1] <= steps[k] * (1 + 1e-9) for k in range(len(steps) - 1))


def test_normalization_and_jensen_on_solver_moments():
    rep = estimate_avg_age(illustrative_model(1.0), 30, 1.0)
    assert sum(v for k, v in rep.moments.items() if k.order == 0) == pytest.approx(1.0, abs=1e-10)
    mu = {k.exps[0]: v for k, v in rep.combined_moments.items()}
    for r in range(1, 6):
        for p in range(r, 7):
            assert mu[r] ** (p / r) <= mu[p] + 1e-6


def test_normalization_csma():
    rep = solve(assemble(csma_model(CsmaParams((1, 2), (1, 1))), 6, 1.0))
    assert sum(v for k, v in rep.moments.items() if k.order == 0) == pytest.approx(1.0, abs=1e-10)


@pytest.mark.parametrize("order", [6, 12, 20])
def test_scale_equivariance(order):
    # the closure itself moves with c, so equivariance holds for the parity-combined estimate
    m = illustrative_model(1.0)
    e1 = estimate_avg_age(m, order, 1.0).avg_age[0]
    e2 = estimate_avg_age(m, order, 2.0).avg_age[0]
    assert abs(e2 - e1) / e1 < 1e-8



@pytest.mark.parametrize("order", [3, 4, 6])
def test_scale_equivariance_closed_system(order):
    # moments grow factorially, so a closed system is only well conditioned at low order
    blind = age_blind_model((1.0, 3.0), (2.0, 1.0))
    b1 = solve(assemble(blind, order, 1.0))
    b2 = solve(assemble(blind, order, 2.0))
    for k in b1.moments:
        assert b2.moments[k] == pytest.approx(b1.moments[k], rel=1e-8, abs=1e-12)


def test_combined_estimate_is_scale_invariant_for_illustrative():
    m = illustrative_model(0.1)
    vals = [estimate_avg_age(m, 60, c).avg_age[0] for c in (1.0, 3.0, 10.0)]
    assert max(vals) - min(vals) < 1e-8 * vals[0]


def test_system_too_large():
    with pytest.raises(SystemTooLarge) as exc:
        assemble(csma_model(CsmaParams((1, 1), (1, 1))), 20, max_unknowns=100)
    assert exc.value.count > 100


def test_singular_system_reported():
    s = assemble(illustrative_model(1.0), 4)
    s.E[2] = 0.0
    with pytest.raises(SingularSystemError) as exc:
        factorize(s)
    assert exc.value.order == 4


def test_bad_inputs():
    with pytest.raises(ValueError):
        assemble(illustrative_model(1.0), 0)
    with pytest.raises(ValueError):
        assemble(illustrative_model(1.0), 4, 0.5)


def test_combine_parity():
    assert combine_parity(np.array([4.0]), np.array([1.0]))[0] == 2.0
    assert np.isnan(combine_parity(np.array([-4.0]), np.array([1.0]))[0])


def test_round_up_and_auto_scale():
    assert round_up_1sig(5.04) == 6.0 and round_up_1sig(0.16) == 0.2 and round_up_1sig(30.0) == 30.0
    assert auto_scale(illustrative_model(100.0)) == 1.0
    assert auto_scale(illustrative_model(0.1)) in (5.0, 6.0)
    with pytest.raises(ValueError):
        auto_scale(illustrative_model(1.0), pilot_events=10)


def test_report_csv(tmp_path):
    rep = order_sweep(illustrative_model(1.0), [4, 5, 6])
    rep.write_csv(tmp_path / "e.csv")
    rows = (tmp_path / "e.csv").read_text().splitlines()
    assert rows[0].startswith("order,estimate_0,combined_0")
    assert len(rows) == 4


def test_aware_csma_closure_collapses_to_service_only_ages():
    # documented limitation: high-order closure converges to ages of mean(1/H)
    est = estimate_avg_age(csma_model(CsmaParams((10.0,), (2.0,))), 20).avg_age[0]
    assert est == pytest.approx(0.5, rel=1e-3)
