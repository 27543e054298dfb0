import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from misoloc.scenario import (
    SPEED_OF_LIGHT,
    GeometryError,
    ScenarioConfig,
    calibrate_omega,
    complex_gains,
    derive_channel_params,
    equivalent_position,
    local_geometry,
    mu_sweep_scatterers,
    noise_psd_bandwidth,
    noise_variance_from_snr,
    path_delays_angles,
    path_loss_los,
    path_loss_nlos,
    path_losses,
    reflection_geometry_factor,
    wrap_angle,
)

# Frozen from independent hand evaluation of the loss formulas (see ledger).
RHO0_DEFAULT = 423539375.57230294
RHO_NLOS_23148 = 8461097752.733856
SIGMA2_DEFAULT = 1.180527782864062e-14


def test_three_four_five_triangle():
    cfg = ScenarioConfig(bs_position=(0, 0), ms_position=(3, 4), scatterers=(), lmr_db_per_path=())
    [p] = derive_channel_params(cfg, np.random.default_rng(0))
    assert p.tau == pytest.approx(5 / SPEED_OF_LIGHT, rel=1e-15)
    assert p.theta == pytest.approx(math.atan2(4, 3), abs=1e-15)


def test_default_nlos_delay_and_angle():
    paths = derive_channel_params(ScenarioConfig(), np.random.default_rng(0))
    assert paths[1].tau * SPEED_OF_LIGHT == pytest.approx(math.sqrt(194) + math.sqrt(85), rel=1e-14)
    assert paths[1].theta == pytest.approx(math.atan2(13, 5), abs=1e-15)
    assert paths[1].tau > paths[0].tau


def test_equivalent_scatterer_position_reference_value():
    cfg = ScenarioConfig()
    p1 = derive_channel_params(cfg, np.random.default_rng(0))[1]
    se = cfg.to_world(equivalent_position(p1.tau, p1.theta))
    assert np.round(se, 1).tolist() == [11.3, 21.6]


def test_degenerate_geometry_raises():
    with pytest.raises(ValueError):
        ScenarioConfig(ms_position=(3, 0))
    with pytest.raises(ValueError):
        ScenarioConfig(scatterers=((10, 4),))
    with pytest.raises(GeometryError):
        path_delays_angles([1.0, 0.0], [[0.0, 0.0]])


def test_invariant_violations_rejected():
    with pytest.raises(ValueError):
        ScenarioConfig(n_beams=21)
    with pytest.raises(ValueError):
        ScenarioConfig(lmr_db_per_path=(5.0, 5.0))
    with pytest.raises(ValueError):
        ScenarioConfig(bandwidth_hz=0)
    with pytest.raises(ValueError):
        ScenarioConfig(tx_power_w=-1)


def test_los_loss_free_space_and_inverse_square():
    cfg = ScenarioConfig(atten_db_per_km=0.0)
    lam = cfg.wavelength
    assert 1 / path_loss_los(7.0, cfg) == pytest.approx((lam / (4 * math.pi * 7.0)) ** 2, rel=1e-15)
    assert path_loss_los(14.0, cfg) / path_loss_los(7.0, cfg) == pytest.approx(4.0, rel=1e-14)


def test_los_loss_default_frozen():
    assert path_loss_los(math.hypot(7, 4), ScenarioConfig()) == pytest.approx(RHO0_DEFAULT, rel=1e-12)


def test_nlos_loss_frozen_and_limits():
    cfg = ScenarioConfig()
    assert path_loss_nlos(23.148, 1.0, cfg) == pytest.approx(RHO_NLOS_23148, rel=1e-12)
    # gamma_r * dk -> 0 kills the reflector factor and the path with it.
    assert reflection_geometry_factor(1e-9, 1 / 7) < 1e-19
    assert path_loss_nlos(23.148, 1.0, cfg.replace(reflector_density=1e-12)) > 1e30
    d = np.linspace(1, 40, 40001)
    f = [reflection_geometry_factor(x, 1 / 7) for x in d]
    assert d[int(np.argmax(f))] == pytest.approx(14.0, abs=1e-3)


@pytest.mark.parametrize("target", [0.0, 5.0, -5.0, 12.3])
def test_calibrate_omega_round_trip(target):
    cfg = ScenarioConfig(lmr_db_per_path=(target,))
    _, _, length = path_delays_angles(*local_geometry(cfg))
    omega = calibrate_omega(target, 1, cfg)
    ratio = path_loss_nlos(length[1], omega, cfg) / path_loss_los(length[0], cfg)
    assert ratio == pytest.approx(10 ** (target / 10), rel=1e-12)


def test_calibrate_omega_bad_index():
    with pytest.raises(IndexError):
        calibrate_omega(5.0, 2, ScenarioConfig())


def test_noise_variance():
    cfg = ScenarioConfig()
    assert noise_variance_from_snr(cfg) == pytest.approx(SIGMA2_DEFAULT, rel=1e-12)
    c0 = cfg.replace(snr_db=0.0)
    rho0 = path_losses(c0)[0]
    assert noise_psd_bandwidth(c0) == pytest.approx(c0.tx_power_w / rho0, rel=1e-14)
    assert noise_variance_from_snr(c0) == pytest.approx(c0.tx_power_w / rho0 / c0.n_subcarriers, rel=1e-14)
    assert noise_variance_from_snr(c0) / noise_variance_from_snr(cfg) == pytest.approx(10.0, rel=1e-12)


def test_complex_gains():
    cfg = ScenarioConfig(tx_power_w=1.0, los_phase_rad=0.0, nlos_phase_rad=(0.0,))
    a = complex_gains(cfg, [1.0, 4.0])
    assert a[0] == pytest.approx(1.0)
    assert a[1] == pytest.approx(0.5)
    cfg = ScenarioConfig(lmr_db_per_path=(7.0,))
    a = complex_gains(cfg, path_losses(cfg), np.random.default_rng(3))
    assert 10 * math.log10(abs(a[0]) ** 2 / abs(a[1]) ** 2) == pytest.approx(7.0, abs=1e-10)
    b = complex_gains(cfg, path_losses(cfg), np.random.default_rng(3))
    assert np.array_equal(a, b)


@settings(max_examples=40, deadline=None)
@given(st.floats(-50, 50), st.floats(-50, 50))
def test_translation_invariance(dx, dy):
    base = ScenarioConfig()
    moved = base.replace(bs_position=(3 + dx, dy), ms_position=(10 + dx, 4 + dy),
                         scatterers=((8 + dx, 13 + dy),))
    a = derive_channel_params(base, np.random.default_rng(1))
    b = derive_channel_params(moved, np.random.default_rng(1))
    for pa, pb in zip(a, b):
        assert pb.tau == pytest.approx(pa.tau, rel=1e-12)
        assert pb.theta == pytest.approx(pa.theta, abs=1e-12)


@settings(max_examples=60, deadline=None)
@given(st.floats(-30, 30), st.floats(-30, 30))
def test_nlos_never_shorter_than_los(sx, sy):
    p = np.array([7.0, 4.0])
    s = np.array([sx, sy])
    if min(np.linalg.norm(s), np.linalg.norm(s - p)) < 1e-3:
        return
    tau, _, _ = path_delays_angles(p, [s])
    assert tau[1] >= tau[0] * (1 - 1e-15)


def test_json_round_trip(tmp_path):
    cfg = ScenarioConfig(los_phase_rad=0.5, nlos_phase_rad=(1.0,), array_orientation_rad=0.2, snr_db=3.0)
    path = tmp_path / "cfg.json"
    cfg.to_json(path)
    d = json.loads(path.read_text())
    assert d["los_phase_deg"] == pytest.approx(math.degrees(0.5))
    back = ScenarioConfig.from_json(path)
    assert back.los_phase_rad == pytest.approx(0.5)
    assert back.nlos_phase_rad == pytest.approx((1.0,))
    assert back.array_orientation_rad == pytest.approx(0.2, rel=1e-14)
    assert back.scatterers == cfg.scatterers and back.snr_db == 3.0
    with pytest.raises(ValueError):
        ScenarioConfig.from_dict({"bogus": 1})


def test_frames_round_trip():
    cfg = ScenarioConfig(array_orientation_rad=0.7)
    pts = np.array([[10.0, 4.0], [8.0, 13.0]])
    assert np.allclose(cfg.to_world(cfg.to_local(pts)), pts, atol=1e-13)


def test_wrap_angle():
    assert wrap_angle(-math.pi) == pytest.approx(math.pi)
    assert wrap_angle(3 * math.pi / 2) == pytest.approx(-math.pi / 2)


def test_mu_sweep_geometry():
    s = mu_sweep_scatterers((10, 4), 0.5)
    assert np.allclose(s[0], np.array([10, 4]) + 10 * np.array([math.cos(math.radians(-20)), math.sin(math.radians(-20))]))
    with pytest.raises(ValueError):
        mu_sweep_scatterers((10, 4), 0.0)
