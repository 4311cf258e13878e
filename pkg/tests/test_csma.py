import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import BLIND_SINGLE, blind_single_link_age
from shs_aoi.closure import order_sweep
from shs_aoi.compare import GainReport, blind_ages, compare
from shs_aoi.csma import CsmaParams, age_blind_model, csma_model, network_age
from shs_aoi.csma_exact import ExactGrid, aware_mean_ages
from shs_aoi.simulate import SimConfig, run_replicas


def test_params_validation():
    with pytest.raises(ValueError):
        CsmaParams((1.0,), (1.0, 2.0))
    with pytest.raises(ValueError):
        CsmaParams((0.0,), (1.0,))


def test_model_layout():
    m = csma_model(CsmaParams((1.0, 2.0), (1.0, 1.0)))
    assert m.n == 4 and m.states == (0, 1, 2)
    assert m.tracked == (0, 1)
    assert len(m.transitions) == 4


def test_network_age_is_mean():
    assert network_age([1.0, 2.0, 6.0]) == pytest.approx(3.0)


@pytest.mark.parametrize("key", sorted(BLIND_SINGLE))
def test_blind_single_link_exact(key):
    r, H = key
    assert blind_ages([r], [H])[0] == pytest.approx(BLIND_SINGLE[key], rel=1e-10)


@settings(max_examples=25, deadline=None)
@given(st.floats(0.05, 20.0), st.floats(0.05, 20.0))
def test_blind_single_link_property(r, H):
    assert blind_ages([r], [H])[0] == pytest.approx(blind_single_link_age(r, H), rel=1e-8)


def test_blind_two_links_agree_with_simulation():
    r, H = (0.7, 2.0), (1.0, 0.5)
    closed = blind_ages(r, H)
    stats = run_replicas(age_blind_model(r, H), SimConfig(max_events=400_000, seed=3, moment_order=1), 2)
    assert [stats.mean_age(i) for i in range(2)] == pytest.approx(closed, rel=0.02)


def test_blind_symmetry():
    ages = blind_ages([1.3, 1.3], [0.8, 0.8])
    assert ages[0] == pytest.approx(ages[1], rel=1e-12)


@pytest.mark.parametrize("a,H", [((1.0,), (1.0,)), ((10.0,), (0.5,)), ((2.0, 0.5), (1.0, 3.0)), ((10.0, 10.0), (1.0, 1.0))])
def test_exact_evaluator_matches_simulation(a, H):
    exact = aware_mean_ages(a, H)
    stats = run_replicas(csma_model(CsmaParams(a, H)), SimConfig(max_events=500_000, seed=8, moment_order=1), 4)
    sim = [stats.mean_age(i) for i in range(len(a))]
    assert sim == pytest.approx(exact, rel=0.015)


def test_exact_evaluator_grid_convergence():
    a, H = (3.0, 1.0), (1.0, 2.0)
    coarse = aware_mean_ages(a, H, ExactGrid(160))
    fine = aware_mean_ages(a, H, ExactGrid(320))
    assert np.max(np.abs(coarse - fine) / fine) < 1e-3


def test_exact_evaluator_symmetry_and_permutation():
    sym = aware_mean_ages((2.0, 2.0), (1.0, 1.0))
    assert sym[0] == pytest.approx(sym[1], rel=1e-9)
    ab = aware_mean_ages((3.0, 0.5), (1.0, 2.0))
    ba = aware_mean_ages((0.5, 3.0), (2.0, 1.0))
    assert ab == pytest.approx(ba[::-1], rel=1e-9)


def test_exact_evaluator_rejects_large_networks():
    with pytest.raises(ValueError):
        aware_mean_ages((1.0, 1.0, 1.0), (1.0, 1.0, 1.0))


def test_aware_closure_collapses_to_service_time():
    # known failure mode of the closure for this model
    rep = order_sweep(csma_model(CsmaParams((1.0,), (1.0,))), [20])
    assert rep.avg_age[0] == pytest.approx(1.0, rel=0.05)
    assert aware_mean_ages((1.0,), (1.0,))[0] > 2.0


def test_compare_same_parameters_has_zero_gain():
    p = CsmaParams((1.0, 1.0), (1.0, 1.0))
    rep = GainReport("exact", np.array([2.0, 2.0]), np.array([2.0, 2.0]))
    assert rep.gain == 0.0
    out = compare(p, CsmaParams((1.0, 1.0), (1.0, 1.0)))
    assert out.avg_blind > 0 and math.isfinite(out.gain)


def test_compare_rejects_mismatched_service():
    with pytest.raises(ValueError):
        compare(CsmaParams((1.0,), (1.0,)), CsmaParams((1.0,), (2.0,)))
