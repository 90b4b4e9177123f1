import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from xlris.channel import (
    FarFieldPath,
    SystemConfig,
    build_angular_dictionary,
    build_polar_dictionary,
    element_offsets,
    far_field_steering,
    near_field_steering,
    polar_ring_distances,
    rayleigh_distance,
    sample_scenario,
)
from xlris.sparse import mutual_coherence

LAM = 0.01
D = LAM / 2


def test_config_defaults():
    c = SystemConfig()
    assert (c.n_bs, c.m_ris, c.n_ue, c.n_users, c.n_bs_paths) == (128, 256, 32, 4, 3)
    assert math.isclose(c.wavelength, 0.01)
    assert c.spacing_bs == c.spacing_ris == c.spacing_ue == pytest.approx(0.005)
    assert c.n_ue_paths == (2, 2, 2, 2)
    assert c.noise_var > 0


@pytest.mark.parametrize("field", ["n_bs", "n_ue", "m_ris", "n_users", "n_bs_paths"])
def test_config_rejects_zero_dimensions(field):
    with pytest.raises(ValueError):
        SystemConfig(**{field: 0})


@pytest.mark.parametrize("kwargs", [
    {"tx_power": 0}, {"noise_var": -1.0}, {"dist_ris_ue_range": (5.0, 1.0)},
    {"dist_ris_ue_range": (0.0, 1.0)}, {"n_ue_paths": (1, 2)}, {"n_ue_paths": 0},
])
def test_config_validation(kwargs):
    with pytest.raises(ValueError):
        SystemConfig(**kwargs)


def test_far_field_examples():
    np.testing.assert_allclose(far_field_steering(4, D, LAM, 0.0), [1, 1, 1, 1])
    np.testing.assert_allclose(far_field_steering(4, D, LAM, np.pi / 2), [1, -1, 1, -1], atol=1e-12)
    np.testing.assert_allclose(far_field_steering(4, D, LAM, np.pi / 6), [1, 1j, -1, -1j], atol=1e-12)


def test_far_field_rejects_nonfinite():
    with pytest.raises(ValueError):
        far_field_steering(4, D, LAM, np.nan)


def test_near_field_center_and_collinear():
    m = 33
    v = near_field_steering(m, D, LAM, 0.4, 2.0)
    assert v[m // 2] == 1
    r = 3.0
    col = near_field_steering(m, D, LAM, np.pi / 2, r)
    np.testing.assert_allclose(col, np.exp(2j * np.pi * element_offsets(m, D) / LAM), atol=1e-9)


def test_near_field_rejects_bad_distance():
    with pytest.raises(ValueError):
        near_field_steering(8, D, LAM, 0.3, 0.0)
    with pytest.raises(ValueError):
        near_field_steering(8, D, LAM, 0.3, 0.01)


@settings(max_examples=50, deadline=None)
@given(st.floats(0, np.pi - 1e-6), st.floats(0.5, 50))
def test_steering_unit_modulus(angle, dist):
    ff = far_field_steering(16, D, LAM, angle)
    nf = near_field_steering(16, D, LAM, angle, dist)
    np.testing.assert_allclose(np.abs(ff), 1, atol=1e-12)
    np.testing.assert_allclose(np.abs(nf), 1, atol=1e-12)
    assert np.linalg.norm(nf) ** 2 == pytest.approx(16)


def test_rayleigh_examples():
    assert rayleigh_distance(1.0, 1.0) == 2.0
    assert rayleigh_distance(255 * 0.005, 0.01) == pytest.approx(325.1, abs=0.05)
    assert rayleigh_distance(0.155, 0.01) == pytest.approx(4.8, abs=0.01)
    with pytest.raises(ValueError):
        rayleigh_distance(0.0, 1.0)


def test_angular_dictionary_small():
    d = build_angular_dictionary(2, 2, D, LAM)
    np.testing.assert_allclose(np.sin(d.grid_angles), [-1, 0], atol=1e-12)
    np.testing.assert_allclose(d.atoms, [[1, 1], [-1, 1]], atol=1e-12)


def test_angular_dictionary_gram_and_coherence():
    d = build_angular_dictionary(4, 8, D, LAM)
    gram = d.atoms.conj().T @ d.atoms
    np.testing.assert_allclose(np.diag(gram).real, 4)
    brute = max(abs(gram[i, j]) / 4 for i in range(8) for j in range(8) if i != j)
    assert mutual_coherence(d.atoms) == pytest.approx(brute)
    with pytest.raises(ValueError):
        build_angular_dictionary(4, 3, D, LAM)


def test_polar_dictionary_rings():
    m, count = 32, 64
    aperture = (m - 1) * D
    rings = polar_ring_distances(m, D, LAM, 1.2, 1.0)
    # independent evaluation of the ring rule until it drops below 1 m
    expected, s = [], 1
    while aperture ** 2 / (2 * LAM * 1.44 * s) > 1.0:
        expected.append(aperture ** 2 / (2 * LAM * 1.44 * s))
        s += 1
    np.testing.assert_allclose([r for r in rings if np.isfinite(r)], expected)
    pd = build_polar_dictionary(m, D, LAM, count, 1.2, 1.0)
    assert pd.size == count * (len(expected) + 1)
    np.testing.assert_allclose(np.linalg.norm(pd.atoms, axis=0), np.sqrt(m))
    far = np.isinf(pd.grid_distances)
    np.testing.assert_allclose(pd.atoms[:, far],
                               far_field_steering(m, D, LAM, pd.grid_angles[far], centered=True),
                               atol=1e-12)
    assert pd.far_field_only().size == count


def test_sample_scenario_single_trivial_path():
    cfg = SystemConfig(n_bs=4, m_ris=6, n_ue=2, n_users=1, n_bs_paths=1, n_ue_paths=1)
    ch = sample_scenario(cfg, np.random.default_rng(0))
    ch.paths_br[:] = [FarFieldPath(1.0 + 0j, 0.0, 0.0)]
    np.testing.assert_allclose(ch.rebuild_h_br(), np.ones((4, 6)))


def test_sample_scenario_structure():
    cfg = SystemConfig(n_bs=16, m_ris=32, n_ue=4, n_users=2, n_bs_paths=3, n_ue_paths=(1, 2),
                       dist_ris_ue_range=(1.0, 10.0))
    ch = sample_scenario(cfg, np.random.default_rng(5))
    assert np.linalg.matrix_rank(ch.h_br) <= 3
    rel = np.linalg.norm(ch.rebuild_h_br() - ch.h_br) / np.linalg.norm(ch.h_br)
    assert rel < 1e-12
    for k in range(2):
        rel = np.linalg.norm(ch.rebuild_h_ru(k) - ch.h_ru[k]) / np.linalg.norm(ch.h_ru[k])
        assert rel < 1e-12
        for n in range(4):
            g = ch.h_br @ np.diag(ch.h_ru[k][:, n])
            assert np.linalg.norm(ch.g_true[k][n] - g) <= 1e-12 * np.linalg.norm(g)
    for p in ch.paths_ru[1]:
        assert 1.0 <= p.distance <= 10.0
        assert 0 <= p.ris_angle < np.pi


def test_sample_scenario_deterministic():
    cfg = SystemConfig(n_bs=8, m_ris=16, n_ue=2, n_users=2, n_bs_paths=2, n_ue_paths=1)
    a = sample_scenario(cfg, np.random.default_rng(9))
    b = sample_scenario(cfg, np.random.default_rng(9))
    assert np.array_equal(a.h_br, b.h_br)
    assert all(np.array_equal(x, y) for x, y in zip(a.h_ru, b.h_ru))


def test_on_grid_sampling_snaps_to_dictionaries():
    cfg = SystemConfig(n_bs=16, m_ris=32, n_ue=4, n_users=2, n_bs_paths=2, n_ue_paths=1,
                       dist_ris_ue_range=(0.3, 1.0))
    ue = build_angular_dictionary(4, 16, cfg.spacing_ue, cfg.wavelength)
    ris = build_polar_dictionary(32, cfg.spacing_ris, cfg.wavelength, 64, 1.2, 0.3)
    ch = sample_scenario(cfg, np.random.default_rng(2), on_grid=True, ue_dict=ue, ris_dict=ris)
    a_bs = far_field_steering(16, cfg.spacing_bs, cfg.wavelength,
                              np.array([p.bs_angle for p in ch.paths_br]))
    gram = a_bs.conj().T @ a_bs
    assert abs(gram[0, 1]) < 1e-9
    for paths in ch.paths_ru:
        for p in paths:
            hit = np.isclose(ris.grid_angles, p.ris_angle) & np.isclose(ris.grid_distances, p.distance)
            assert hit.any()
    with pytest.raises(ValueError):
        sample_scenario(cfg, np.random.default_rng(2), on_grid=True)
