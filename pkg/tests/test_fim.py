import math
import warnings

import numpy as np
import pytest

from conftest import random_config
from misoloc.fim import (
    SingularFimError,
    approx_sigma_p,
    assemble_approx_sigma,
    equilibrated_inverse,
    fd_fim,
    fim_channel,
    inverse_jacobian,
    jacobian_T,
    map_bound_from_sigma,
    peb_from_sigma,
    position_bounds,
)
from misoloc.scenario import (
    SPEED_OF_LIGHT,
    LocationParams,
    PathParams,
    ScenarioConfig,
    derive_channel_params,
    location_params,
    mu_sweep_scatterers,
    noise_variance_from_snr,
    path_delays_angles,
)
from misoloc.signal import build_beamformer

# Regression constant: PEB at the default scene, SNR 10 dB, phases 0.3 / 1.1 rad.
PEB_DEFAULT_FIXED_PHASES = 0.05377647132501242


def scaled_error(Ja, Jf):
    d = np.sqrt(np.outer(np.diag(Ja), np.diag(Ja)))
    return float(np.max(np.abs(Ja - Jf) / d))


def test_symmetric_psd_and_noise_scaling(default_scene):
    cfg, paths, tx, s2, _ = default_scene
    J = fim_channel(paths, tx, s2).J
    assert np.max(np.abs(J - J.T)) <= 1e-9 * np.linalg.norm(J)
    d = np.sqrt(np.diag(J))
    w = np.linalg.eigvalsh(J / np.outer(d, d))
    assert w.min() >= -1e-8
    assert np.allclose(fim_channel(paths, tx, 2 * s2).J, J / 2, rtol=1e-13)


def test_sigma2_must_be_positive(default_scene):
    _, paths, tx, _, _ = default_scene
    with pytest.raises(ValueError):
        fim_channel(paths, tx, 0.0)


def test_fd_single_los():
    cfg = ScenarioConfig(scatterers=(), lmr_db_per_path=(), los_phase_rad=0.7)
    paths = derive_channel_params(cfg)
    tx = build_beamformer(cfg)
    s2 = noise_variance_from_snr(cfg)
    assert scaled_error(fim_channel(paths, tx, s2).J, fd_fim(paths, tx, s2).J) < 1e-5


@pytest.mark.parametrize("K", [1, 2, 3])
def test_fd_multipath(K):
    cfg = random_config(np.random.default_rng(K), K)
    paths = derive_channel_params(cfg)
    tx = build_beamformer(cfg)
    s2 = noise_variance_from_snr(cfg)
    assert scaled_error(fim_channel(paths, tx, s2).J, fd_fim(paths, tx, s2).J) < 1e-5


def test_fd_second_order(default_scene):
    _, paths, tx, s2, _ = default_scene
    Ja = fim_channel(paths, tx, s2).J
    e1 = scaled_error(Ja, fd_fim(paths, tx, s2, step=2e-2).J)
    e2 = scaled_error(Ja, fd_fim(paths, tx, s2, step=1e-2).J)
    assert 3.0 < e1 / e2 < 5.0


def test_zero_gain_path_carries_no_information(default_scene):
    _, paths, tx, s2, _ = default_scene
    dead = [paths[0], PathParams(0.0, 0.0, paths[1].tau, paths[1].theta, 1)]
    for J in (fim_channel(dead, tx, s2).J, fd_fim(dead, tx, s2).J):
        assert np.allclose(J[5:8], 0.0, atol=1e-12 * J[2, 2] ** 0.5)


def test_jacobian_los_only():
    T = jacobian_T([LocationParams(1.0, 0.0, (3.0, 4.0))])
    assert np.allclose(T[2:4, 2], np.array([0.6, 0.8]) / SPEED_OF_LIGHT, rtol=1e-14)
    assert np.allclose(T[2:4, 3], np.array([-4.0, 3.0]) / 25.0)


def test_jacobian_matches_finite_differences(default_scene):
    cfg, paths, _, _, eta = default_scene
    T = jacobian_T(eta)
    p = np.array(eta[0].position)
    s = np.array(eta[1].position)

    def gamma(v):
        tau, theta, _ = path_delays_angles(v[:2], [v[2:]])
        return np.array([tau[0], theta[0], tau[1], theta[1]])

    v0 = np.concatenate([p, s])
    h = 1e-6
    num = np.array([(gamma(v0 + h * e) - gamma(v0 - h * e)) / (2 * h) for e in np.eye(4)])
    rows = [2, 3, 6, 7]
    cols = [2, 3, 6, 7]
    ana = T[np.ix_(rows, cols)]
    assert np.allclose(num, ana, rtol=1e-6, atol=1e-6 * np.abs(ana).max(axis=0))
    # structural zeros: the LOS pair ignores scatterer coordinates
    assert np.all(T[6:8, 2:4] == 0)


def test_inverse_jacobian(default_scene):
    _, paths, _, _, eta = default_scene
    T = jacobian_T(eta)
    Tb = inverse_jacobian(paths)
    # both products in units where each (tau, theta) block is O(1)
    D = np.diag(np.tile([1.0, 1.0, SPEED_OF_LIGHT, 1.0], 2))
    assert np.allclose(T @ Tb, np.eye(8), atol=1e-9)
    assert np.allclose(np.linalg.inv(D) @ Tb @ T @ D, np.eye(8), atol=1e-9)


def test_peb_default_below_decimeter(default_scene):
    cfg, paths, tx, s2, eta = default_scene
    b = position_bounds(paths, eta, tx, s2)
    assert b.peb < 0.1
    assert b.peb == pytest.approx(PEB_DEFAULT_FIXED_PHASES, rel=1e-9)
    assert b.peb == pytest.approx(math.sqrt(b.sigma_p[2, 2] + b.sigma_p[3, 3]))
    assert len(b.map_bounds) == 1 and b.map_bounds[0] > 0
    assert b.channel_bound(0, "tau") > 0


def test_peb_rotation_invariant():
    base = ScenarioConfig(bs_position=(0, 0), ms_position=(7, 4), scatterers=((5, 13),),
                          los_phase_rad=0.3, nlos_phase_rad=(1.1,))
    pebs = []
    for rot in (0.0, 0.4, -1.0):
        c, s = math.cos(rot), math.sin(rot)
        R = np.array([[c, -s], [s, c]])
        cfg = base.replace(ms_position=tuple(R @ [7, 4]), scatterers=(tuple(R @ [5, 13]),),
                           array_orientation_rad=rot)
        paths = derive_channel_params(cfg)
        pebs.append(position_bounds(paths, location_params(cfg, paths), build_beamformer(cfg),
                                    noise_variance_from_snr(cfg)).peb)
    assert np.allclose(pebs, pebs[0], rtol=1e-9)


def _peb(cfg):
    paths = derive_channel_params(cfg)
    return position_bounds(paths, location_params(cfg, paths), build_beamformer(cfg),
                           noise_variance_from_snr(cfg))


def test_nlos_never_helps_peb():
    rng = np.random.default_rng(11)
    for _ in range(8):
        K = int(rng.integers(1, 4))
        cfg = random_config(rng, K)
        los = cfg.replace(scatterers=(), lmr_db_per_path=(), nlos_phase_rad=None)
        assert _peb(cfg).peb >= _peb(los).peb - 1e-9


def test_approx_sigma_los_only_and_block0():
    cfg = ScenarioConfig(scatterers=(), lmr_db_per_path=(), los_phase_rad=0.3)
    paths = derive_channel_params(cfg)
    tx = build_beamformer(cfg)
    s2 = noise_variance_from_snr(cfg)
    exact = position_bounds(paths, location_params(cfg, paths), tx, s2).sigma_p
    approx = approx_sigma_p(paths, tx, s2)
    assert peb_from_sigma(approx) == pytest.approx(peb_from_sigma(exact), rel=1e-8)


def test_approx_sigma_block_structure(default_scene):
    _, paths, tx, s2, _ = default_scene
    fim = fim_channel(paths, tx, s2)
    C = [equilibrated_inverse(fim.block(k, k))[0] for k in range(2)]
    Tb = inverse_jacobian(paths)
    S = assemble_approx_sigma(Tb, C)
    assert np.allclose(S[:4, :4], Tb[:4, :4].T @ C[0] @ Tb[:4, :4], rtol=1e-12)
    T10, T11 = Tb[:4, 4:], Tb[4:, 4:]
    assert np.allclose(S[4:, 4:], T10.T @ C[0] @ T10 + T11.T @ C[1] @ T11, rtol=1e-10)


def test_approx_close_to_exact_when_separated():
    cfg = ScenarioConfig(scatterers=tuple(mu_sweep_scatterers((10, 4), 1.0)), lmr_db_per_path=(5.0,) * 3,
                         los_phase_rad=0.3, nlos_phase_rad=(1.1, 2.0, 4.0))
    paths = derive_channel_params(cfg)
    tx = build_beamformer(cfg)
    s2 = noise_variance_from_snr(cfg)
    exact = position_bounds(paths, location_params(cfg, paths), tx, s2).peb
    approx = peb_from_sigma(approx_sigma_p(paths, tx, s2))
    assert abs(approx - exact) / exact < 0.01


def test_map_bound_monotone_in_los_uncertainty(default_scene):
    _, paths, tx, s2, _ = default_scene
    fim = fim_channel(paths, tx, s2)
    C0, _ = equilibrated_inverse(fim.block(0, 0))
    C1, _ = equilibrated_inverse(fim.block(1, 1))
    Tb = inverse_jacobian(paths)
    prev = map_bound_from_sigma(assemble_approx_sigma(Tb, [C0, C1]), 1)
    for f in (0.8, 0.5, 0.1):
        cur = map_bound_from_sigma(assemble_approx_sigma(Tb, [f * C0, C1]), 1)
        assert cur <= prev + 1e-15
        prev = cur


def test_unidentifiable_angle_is_singular():
    cfg = ScenarioConfig(pilots="ones", scatterers=(), lmr_db_per_path=(), los_phase_rad=0.0)
    paths = derive_channel_params(cfg)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        with pytest.raises(SingularFimError) as exc:
            position_bounds(paths, location_params(cfg, paths), build_beamformer(cfg), 1e-14)
    assert exc.value.eigenvalues.size == 4
