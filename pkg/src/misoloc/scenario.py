"""Scenario description: geometry, waveform and propagation statistics.

All downstream math works in the *array frame*: BS at the origin, ULA
broadside along +x.  The helpers here translate world coordinates in and out
of that frame, derive the per-path channel parameters and turn SNR / LMR
targets into noise variance and complex gains.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

SPEED_OF_LIGHT = 299_792_458.0

# Cyclic-prefix length in samples. Kept for completeness only: the model works
# directly on post-FFT subcarriers, so neither constant changes any result.
CP_SAMPLES = 0
"""Number of CP samples D; T_CP = D / B."""


class GeometryError(ValueError):
    """Raised for degenerate scene geometry (coincident points, etc.)."""


@dataclass(frozen=True)
class ScenarioConfig:
    """Full description of one experiment.

    Positions are world-frame meters.  Angles are radians here and degrees in
    the JSON file (see :meth:`to_json`).
    """

    bs_position: tuple[float, float] = (3.0, 0.0)
    ms_position: tuple[float, float] = (10.0, 4.0)
    scatterers: tuple[tuple[float, float], ...] = ((8.0, 13.0),)
    n_bs: int = 20
    n_subcarriers: int = 20
    n_transmissions: int = 1
    n_beams: int | None = None
    bandwidth_hz: float = 40e6
    carrier_hz: float = 60e9
    tx_power_w: float = 1e-3
    snr_db: float = 10.0
    lmr_db_per_path: tuple[float, ...] | None = None
    atten_db_per_km: float = 16.0
    reflector_density: float = 1.0 / 7.0
    los_phase_rad: float | None = None
    nlos_phase_rad: tuple[float, ...] | None = None
    rng_seed: int = 0
    array_orientation_rad: float = 0.0
    beam_sector_rad: tuple[float, float] = (-math.pi / 2, math.pi / 2)
    beam_layout: str = "uniform"
    pilots: str = "qpsk"
    pilot_seed: int = 1234

    def __post_init__(self):
        def _vec(v):
            return tuple(float(c) for c in v)

        object.__setattr__(self, "bs_position", _vec(self.bs_position))
        object.__setattr__(self, "ms_position", _vec(self.ms_position))
        object.__setattr__(self, "scatterers", tuple(_vec(s) for s in self.scatterers))
        if self.n_beams is None:
            object.__setattr__(self, "n_beams", max(1, self.n_bs // 2))
        if self.lmr_db_per_path is None:
            object.__setattr__(self, "lmr_db_per_path", (5.0,) * len(self.scatterers))
        else:
            object.__setattr__(self, "lmr_db_per_path", tuple(float(v) for v in self.lmr_db_per_path))
        if self.nlos_phase_rad is not None:
            object.__setattr__(self, "nlos_phase_rad", tuple(float(v) for v in self.nlos_phase_rad))
        self.validate()

    def validate(self) -> None:
        if self.n_bs < 1 or self.n_subcarriers < 1 or self.n_transmissions < 1:
            raise ValueError("n_bs, n_subcarriers and n_transmissions must be >= 1")
        if not 1 <= self.n_beams <= self.n_bs:
            raise ValueError(f"n_beams={self.n_beams} must lie in [1, n_bs={self.n_bs}]")
        if self.bandwidth_hz <= 0 or self.carrier_hz <= 0:
            raise ValueError("bandwidth_hz and carrier_hz must be positive")
        if self.tx_power_w <= 0:
            raise ValueError("tx_power_w must be positive")
        if len(self.lmr_db_per_path) != len(self.scatterers):
            raise ValueError("lmr_db_per_path needs one entry per scatterer")
        if self.nlos_phase_rad is not None and len(self.nlos_phase_rad) != len(self.scatterers):
            raise ValueError("nlos_phase_rad needs one entry per scatterer")
        if self.beam_layout not in ("uniform", "dft"):
            raise ValueError(f"unknown beam_layout {self.beam_layout!r}")
        if self.pilots not in ("qpsk", "ones"):
            raise ValueError(f"unknown pilots {self.pilots!r}")
        bs = np.asarray(self.bs_position)
        ms = np.asarray(self.ms_position)
        if np.linalg.norm(ms - bs) == 0:
            raise GeometryError("MS coincides with the BS")
        for k, s in enumerate(self.scatterers, start=1):
            s = np.asarray(s)
            if np.linalg.norm(s - bs) == 0 or np.linalg.norm(s - ms) == 0:
                raise GeometryError(f"scatterer {k} coincides with the BS or the MS")

    # -- derived quantities -------------------------------------------------
    @property
    def n_paths(self) -> int:
        return 1 + len(self.scatterers)

    @property
    def wavelength(self) -> float:
        return SPEED_OF_LIGHT / self.carrier_hz

    @property
    def sampling_period(self) -> float:
        return 1.0 / self.bandwidth_hz

    @property
    def cp_duration(self) -> float:
        return CP_SAMPLES * self.sampling_period

    def replace(self, **changes) -> "ScenarioConfig":
        return dataclasses.replace(self, **changes)

    # -- frames -------------------------------------------------------------
    def to_local(self, points) -> np.ndarray:
        """World-frame point(s) -> array frame (BS at origin, broadside +x)."""
        pts = np.asarray(points, dtype=float) - np.asarray(self.bs_position)
        c, s = math.cos(self.array_orientation_rad), math.sin(self.array_orientation_rad)
        rot = np.array([[c, s], [-s, c]])
        return pts @ rot.T

    def to_world(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=float)
        c, s = math.cos(self.array_orientation_rad), math.sin(self.array_orientation_rad)
        rot = np.array([[c, -s], [s, c]])
        return pts @ rot.T + np.asarray(self.bs_position)

    # -- serialization ------------------------------------------------------
    def to_dict(self) -> dict:
        """JSON-ready dict; angles converted to degrees (``*_deg`` keys)."""
        d = dataclasses.asdict(self)
        d["scatterers"] = [list(s) for s in self.scatterers]
        d["bs_position"] = list(self.bs_position)
        d["ms_position"] = list(self.ms_position)
        d["lmr_db_per_path"] = list(self.lmr_db_per_path)
        for key in ("los_phase_rad", "array_orientation_rad"):
            v = d.pop(key)
            d[key.replace("_rad", "_deg")] = None if v is None else math.degrees(v)
        v = d.pop("nlos_phase_rad")
        d["nlos_phase_deg"] = None if v is None else [math.degrees(a) for a in v]
        d["beam_sector_deg"] = [math.degrees(a) for a in d.pop("beam_sector_rad")]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioConfig":
        d = dict(d)
        names = {f.name for f in dataclasses.fields(cls)}
        for key in ("los_phase_deg", "array_orientation_deg"):
            if key in d:
                v = d.pop(key)
                d[key.replace("_deg", "_rad")] = None if v is None else math.radians(v)
        if "nlos_phase_deg" in d:
            v = d.pop("nlos_phase_deg")
            d["nlos_phase_rad"] = None if v is None else [math.radians(a) for a in v]
        if "beam_sector_deg" in d:
            d["beam_sector_rad"] = tuple(math.radians(a) for a in d.pop("beam_sector_deg"))
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown ScenarioConfig fields: {sorted(unknown)}")
        if "scatterers" in d:
            d["scatterers"] = tuple(tuple(s) for s in d["scatterers"])
        return cls(**d)

    def to_json(self, path: str | Path | None = None) -> str:
        text = json.dumps(self.to_dict(), indent=2)
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def from_json(cls, source: str | Path) -> "ScenarioConfig":
        """Load from a JSON file path or a JSON string."""
        text = str(source)
        if not text.lstrip().startswith("{"):
            text = Path(source).read_text()
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class PathParams:
    """Channel parameters of one path; ``index`` 0 is the LOS path."""

    r: float
    phi: float
    tau: float
    theta: float
    index: int = 0

    @property
    def alpha(self) -> complex:
        return self.r * complex(math.cos(self.phi), math.sin(self.phi))

    @classmethod
    def from_alpha(cls, alpha: complex, tau: float, theta: float, index: int = 0) -> "PathParams":
        return cls(abs(alpha), math.atan2(alpha.imag, alpha.real), tau, theta, index)


@dataclass(frozen=True)
class LocationParams:
    """Location-domain counterpart of :class:`PathParams`.

    ``position`` is the MS for index 0 and the scatterer for index >= 1,
    both in the array frame.
    """

    r: float
    phi: float
    position: tuple[float, float]
    index: int = 0


def path_arrays(paths: Sequence[PathParams]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Stack a path list into ``(alpha, tau, theta)`` arrays."""
    alpha = np.array([p.alpha for p in paths], dtype=complex)
    tau = np.array([p.tau for p in paths], dtype=float)
    theta = np.array([p.theta for p in paths], dtype=float)
    return alpha, tau, theta


def wrap_angle(a):
    """Wrap to (-pi, pi]."""
    w = np.mod(np.asarray(a, dtype=float) + np.pi, 2 * np.pi) - np.pi
    w = np.where(w == -np.pi, np.pi, w)
    return float(w) if np.ndim(w) == 0 else w


def local_geometry(cfg: ScenarioConfig) -> tuple[np.ndarray, np.ndarray]:
    """MS position and scatterer array (K x 2) in the array frame."""
    p = cfg.to_local(cfg.ms_position)
    s = cfg.to_local(np.array(cfg.scatterers, dtype=float).reshape(-1, 2))
    return p, s


def path_delays_angles(p, scatterers) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Delays, AODs and path lengths for an array-frame scene.

    Returns ``(tau, theta, length)`` with LOS first.
    """
    p = np.asarray(p, dtype=float)
    s = np.asarray(scatterers, dtype=float).reshape(-1, 2)
    d0 = np.linalg.norm(p)
    if d0 == 0:
        raise GeometryError("MS at the BS position")
    d1 = np.linalg.norm(s, axis=1)
    d2 = np.linalg.norm(p - s, axis=1)
    bad = np.flatnonzero((d1 == 0) | (d2 == 0))
    if bad.size:
        raise GeometryError(f"scatterer {bad[0] + 1} coincides with the BS or the MS")
    length = np.concatenate([[d0], d1 + d2])
    theta = np.concatenate([[math.atan2(p[1], p[0])], np.arctan2(s[:, 1], s[:, 0])])
    return length / SPEED_OF_LIGHT, theta, length


def path_loss_los(d0: float, cfg: ScenarioConfig) -> float:
    """LOS path loss rho_0 (>= 1 in practice): free space plus atmospheric attenuation."""
    if d0 <= 0:
        raise ValueError("d0 must be positive")
    xi2 = 10.0 ** (-cfg.atten_db_per_km * d0 / 1000.0 / 10.0)
    inv_rho = xi2 * (cfg.wavelength / (4 * math.pi * d0)) ** 2
    return 1.0 / inv_rho


def reflection_geometry_factor(dk: float, density: float) -> float:
    """Poisson single-reflector factor (density*d)^2 exp(-density*d)."""
    x = density * dk
    return x * x * math.exp(-x)


def path_loss_nlos(dk: float, omega: float, cfg: ScenarioConfig) -> float:
    """NLOS path loss rho_k for a single dominant reflector."""
    if dk <= 0 or omega <= 0:
        raise ValueError("dk and omega must be positive")
    big_omega = reflection_geometry_factor(dk, cfg.reflector_density)
    inv_rho = omega * big_omega * (cfg.wavelength / (4 * math.pi * dk)) ** 2
    return math.inf if inv_rho == 0 else 1.0 / inv_rho


def calibrate_omega(target_lmr_db: float, k: int, cfg: ScenarioConfig) -> float:
    """Reflection coefficient omega giving LMR_k = rho_k / rho_0 = target.

    ``k`` is the 1-based NLOS path index.
    """
    if k < 1 or k > len(cfg.scatterers):
        raise IndexError(f"NLOS path index {k} out of range")
    _, _, length = path_delays_angles(*local_geometry(cfg))
    rho0 = path_loss_los(length[0], cfg)
    rho_k = rho0 * 10.0 ** (target_lmr_db / 10.0)
    dk = length[k]
    denom = reflection_geometry_factor(dk, cfg.reflector_density) * (cfg.wavelength / (4 * math.pi * dk)) ** 2
    omega = 1.0 / (rho_k * denom)
    if not math.isfinite(omega) or omega <= 0:
        raise ArithmeticError(f"non-finite reflection coefficient for path {k}")
    return omega


def path_losses(cfg: ScenarioConfig) -> np.ndarray:
    """Losses [rho_0, rho_1, ...] with each omega calibrated to its LMR target."""
    _, _, length = path_delays_angles(*local_geometry(cfg))
    losses = [path_loss_los(length[0], cfg)]
    for k, lmr in enumerate(cfg.lmr_db_per_path, start=1):
        omega = calibrate_omega(lmr, k, cfg)
        losses.append(path_loss_nlos(length[k], omega, cfg))
    return np.array(losses)


def total_lmr_db(losses) -> float:
    """Aggregate LOS-to-multipath ratio over all NLOS paths."""
    losses = np.asarray(losses, dtype=float)
    return 10 * math.log10((1 / losses[0]) / np.sum(1 / losses[1:]))


def noise_psd_bandwidth(cfg: ScenarioConfig, rho0: float | None = None) -> float:
    """Total in-band noise power N_0 B = P_t / (rho_0 * 10^(SNR/10))."""
    if rho0 is None:
        _, _, length = path_delays_angles(*local_geometry(cfg))
        rho0 = path_loss_los(length[0], cfg)
    return cfg.tx_power_w / (rho0 * 10.0 ** (cfg.snr_db / 10.0))


def noise_variance_from_snr(cfg: ScenarioConfig, rho0: float | None = None) -> float:
    """Per-subcarrier noise variance sigma^2 = N_0 B / N.

    Each subcarrier collects noise over the spacing B / N, so the in-band
    noise power fixed by the SNR definition is split evenly across the grid.
    """
    return noise_psd_bandwidth(cfg, rho0) / cfg.n_subcarriers


def draw_phases(cfg: ScenarioConfig, rng: np.random.Generator | None = None) -> np.ndarray:
    """Path phases: fixed where configured, otherwise uniform on [0, 2pi)."""
    if rng is None:
        rng = np.random.default_rng(cfg.rng_seed)
    random = rng.uniform(0.0, 2 * np.pi, size=cfg.n_paths)
    phases = random.copy()
    if cfg.los_phase_rad is not None:
        phases[0] = cfg.los_phase_rad
    if cfg.nlos_phase_rad is not None:
        phases[1:] = cfg.nlos_phase_rad
    return phases


def complex_gains(cfg: ScenarioConfig, losses, rng: np.random.Generator | None = None) -> np.ndarray:
    """alpha_k = h_k / sqrt(rho_k) with |h_k| = sqrt(P_t)."""
    losses = np.asarray(losses, dtype=float)
    phases = draw_phases(cfg, rng)
    h = math.sqrt(cfg.tx_power_w) * np.exp(1j * phases)
    return h / np.sqrt(losses)


def derive_channel_params(cfg: ScenarioConfig, rng: np.random.Generator | None = None) -> list[PathParams]:
    """True per-path channel parameters (array frame), LOS first."""
    tau, theta, _ = path_delays_angles(*local_geometry(cfg))
    alpha = complex_gains(cfg, path_losses(cfg), rng)
    return [PathParams.from_alpha(alpha[k], tau[k], theta[k], k) for k in range(cfg.n_paths)]


def location_params(cfg: ScenarioConfig, paths: Sequence[PathParams]) -> list[LocationParams]:
    """Location-domain parameters matching ``paths`` (array frame)."""
    p, s = local_geometry(cfg)
    positions = [tuple(p)] + [tuple(v) for v in s]
    return [LocationParams(pp.r, pp.phi, positions[k], k) for k, pp in enumerate(paths)]


def equivalent_position(tau: float, theta: float) -> np.ndarray:
    """Point at range c*tau along AOD theta (array frame)."""
    return SPEED_OF_LIGHT * tau * np.array([math.cos(theta), math.sin(theta)])


def mu_sweep_scatterers(ms_position, mu: float,
                        directions_deg=(-20.0, 50.0, 70.0),
                        distances_m=(20.0, 28.0, 36.0)) -> list[tuple[float, float]]:
    """Scatterers placed along fixed MS-relative directions at distance l_k * mu."""
    if not 0 < mu <= 1:
        raise ValueError("mu must lie in (0, 1]")
    ms = np.asarray(ms_position, dtype=float)
    out = []
    for ang, ell in zip(directions_deg, distances_m):
        a = math.radians(ang)
        out.append(tuple(ms + ell * mu * np.array([math.cos(a), math.sin(a)])))
    return out
