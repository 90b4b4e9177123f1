import math

import numpy as np
import pytest

from xlris.channel import SystemConfig, sample_scenario
from xlris.metrics import (
    complexity_counters,
    nmse,
    nmse_terms,
    pilot_overhead_benchmark,
    pilot_overhead_proposed,
    to_db,
)
from xlris.stage2 import FinalEstimates


@pytest.fixture
def truth():
    cfg = SystemConfig(n_bs=8, m_ris=16, n_ue=4, n_users=3, n_bs_paths=2, n_ue_paths=2)
    return sample_scenario(cfg, np.random.default_rng(0))


def as_estimates(h_br, h_ru):
    return FinalEstimates(h_br, list(h_ru), [])


def brute_nmse(est, ch):
    num = den = 0.0
    for k in range(len(ch.h_ru)):
        for n in range(ch.h_ru[k].shape[1]):
            g = ch.h_br @ np.diag(ch.h_ru[k][:, n])
            gh = est.h_br_hat @ np.diag(est.h_ru_hat[k][:, n])
            num += np.linalg.norm(gh - g) ** 2
            den += np.linalg.norm(g) ** 2
    return num / den


def test_nmse_trivial_cases(truth):
    lin, db = nmse(as_estimates(truth.h_br, truth.h_ru), truth)
    assert lin < 1e-28 and (db == -math.inf or db < -280)
    zero = as_estimates(np.zeros_like(truth.h_br), [np.zeros_like(h) for h in truth.h_ru])
    assert nmse(zero, truth) == pytest.approx((1.0, 0.0))
    doubled = as_estimates(2 * truth.h_br, truth.h_ru)
    assert nmse(doubled, truth)[0] == pytest.approx(1.0)


def test_nmse_matches_direct_sum(truth):
    rng = np.random.default_rng(1)
    noisy = as_estimates(truth.h_br + 0.1 * rng.standard_normal(truth.h_br.shape),
                         [h * (1 + 0.2j) for h in truth.h_ru])
    assert nmse(noisy, truth)[0] == pytest.approx(brute_nmse(noisy, truth), rel=1e-10)
    _, _, per_user = nmse_terms(noisy, truth)
    assert len(per_user) == 3


def test_nmse_gauge_invariant(truth):
    rng = np.random.default_rng(2)
    est = as_estimates(truth.h_br + 0.05 * rng.standard_normal(truth.h_br.shape), truth.h_ru)
    c = 0.3 - 2j
    moved = as_estimates(c * est.h_br_hat, [h / c for h in est.h_ru_hat])
    assert nmse(moved, truth)[0] == pytest.approx(nmse(est, truth)[0], rel=1e-10)


def test_nmse_summed_mode_allows_cancellation(truth):
    h = truth.h_ru
    swapped = as_estimates(truth.h_br, [h[1], h[0], h[2]])
    assert nmse(swapped, truth, mode="summed")[0] < 1e-20
    assert nmse(swapped, truth)[0] > 0.1
    with pytest.raises(ValueError):
        nmse(swapped, truth, mode="bogus")


def test_nmse_errors(truth):
    with pytest.raises(ValueError):
        nmse(as_estimates(truth.h_br[:, :3], truth.h_ru), truth)
    dead = as_estimates(truth.h_br, truth.h_ru)
    empty = type(truth)(np.zeros_like(truth.h_br), truth.h_ru, truth.paths_br, truth.paths_ru, truth.config)
    with pytest.raises(ValueError):
        nmse(dead, empty)


def test_to_db():
    assert to_db(1.0) == 0.0 and to_db(0.01) == pytest.approx(-20)
    assert to_db(0.0) == -math.inf


def test_proposed_overhead_examples():
    assert pilot_overhead_proposed(4, 1, 32, 256, 3) == 32
    base = pilot_overhead_proposed(4, 1, 32, 256, 3)
    assert pilot_overhead_proposed(4, 2, 32, 256, 3) == 2 * base
    # independent evaluation without the 1/L term
    assert pilot_overhead_proposed(4, 1, 32, 256, math.inf) == 4 * 5 + 8 - 4
    with pytest.raises(ValueError):
        pilot_overhead_proposed(0, 1, 32, 256, 3)


def test_proposed_overhead_clamps(caplog):
    assert pilot_overhead_proposed(1, 1, 2, 2, 1, (0.0, 0.0, 0.0)) == 1
    assert "clamped" in caplog.text


def test_benchmark_overhead_examples():
    assert pilot_overhead_benchmark(4, 24, 3, 1) == 292
    assert pilot_overhead_benchmark(4, 24, 3, 2) == 580
    assert pilot_overhead_benchmark(4, 24, 3, 0) == 4


def test_overhead_ordering_over_fig3_range():
    gaps = [pilot_overhead_benchmark(4, 24, 3, j) - pilot_overhead_proposed(4, j, 32, 256, 3)
            for j in range(1, 7)]
    assert all(g > 0 for g in gaps)
    assert all(b > a for a, b in zip(gaps, gaps[1:]))


def test_overhead_monotonicity():
    ref = pilot_overhead_proposed(4, 2, 32, 256, 3)
    assert pilot_overhead_proposed(5, 2, 32, 256, 3) >= ref
    assert pilot_overhead_proposed(4, 2, 64, 256, 3) >= ref
    assert pilot_overhead_proposed(4, 2, 32, 512, 3) >= ref
    assert pilot_overhead_proposed(4, 2, 32, 256, 6) <= ref


def test_complexity_counters():
    out = complexity_counters({"virtual_users": 8, "als_iterations": 3, "init_sparse_solves": 9,
                               "sparse_solves": 24, "ls_updates": 3})
    assert out["step_a_solves"] == 24 and out["step_b_solves"] == 3
    assert out["total_events"] == out["init_total"] + 3 * (8 + 1)
    idle = complexity_counters({"virtual_users": 8, "als_iterations": 0, "init_sparse_solves": 9})
    assert idle["step_a_solves"] == idle["step_b_solves"] == 0
    assert idle["total_events"] == 9
    with pytest.raises(ValueError):
        complexity_counters({"virtual_users": 8, "als_iterations": 3, "sparse_solves": 5})
