import numpy as np
import pytest

from misoloc.scenario import ScenarioConfig, derive_channel_params, location_params, noise_variance_from_snr
from misoloc.signal import build_beamformer

# Lines collected by the acceptance suite, echoed in the terminal summary.
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def default_cfg():
    return ScenarioConfig(los_phase_rad=0.3, nlos_phase_rad=(1.1,))


@pytest.fixture
def default_scene(default_cfg):
    paths = derive_channel_params(default_cfg)
    tx = build_beamformer(default_cfg)
    return default_cfg, paths, tx, noise_variance_from_snr(default_cfg), location_params(default_cfg, paths)


def random_config(rng: np.random.Generator, n_scatterers: int, **kw) -> ScenarioConfig:
    """A scene with the MS and scatterers in front of the array, well apart."""
    bs = np.array([0.0, 0.0])
    while True:
        ms = rng.uniform([3, -15], [25, 15])
        scat = [rng.uniform([2, -25], [30, 25]) for _ in range(n_scatterers)]
        pts = [bs, ms] + scat
        if all(np.linalg.norm(a - b) > 2.0 for i, a in enumerate(pts) for b in pts[i + 1:]):
            break
    lmr = tuple(rng.uniform(-5, 10, size=n_scatterers))
    return ScenarioConfig(bs_position=tuple(bs), ms_position=tuple(ms),
                          scatterers=tuple(tuple(s) for s in scat), lmr_db_per_path=lmr,
                          los_phase_rad=float(rng.uniform(0, 2 * np.pi)),
                          nlos_phase_rad=tuple(rng.uniform(0, 2 * np.pi, size=n_scatterers)), **kw)
