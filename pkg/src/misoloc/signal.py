"""Steering vectors, transmit beamforming, channel responses and observations."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .scenario import PathParams, ScenarioConfig, path_arrays


def steering_vector(theta, n_bs: int, spacing_wavelengths: float = 0.5) -> np.ndarray:
    """ULA steering vector(s), unit norm.

    ``theta`` may be an array; the antenna axis is appended last.
    """
    theta = np.asarray(theta, dtype=float)
    m = np.arange(n_bs)
    phase = 2 * np.pi * spacing_wavelengths * np.sin(theta)[..., None] * m
    return np.exp(1j * phase) / math.sqrt(n_bs)


def steering_derivative(theta, n_bs: int, spacing_wavelengths: float = 0.5) -> np.ndarray:
    """d a(theta) / d theta."""
    theta = np.asarray(theta, dtype=float)
    m = np.arange(n_bs)
    scale = 1j * 2 * np.pi * spacing_wavelengths * np.cos(theta)[..., None] * m
    return scale * steering_vector(theta, n_bs, spacing_wavelengths)


@dataclass(frozen=True)
class TxSignalSet:
    """Known transmit-side signals.

    Attributes
    ----------
    F : ndarray, shape (G, N, N_BS, M)
        Beamforming matrices, each with unit Frobenius norm.
    x : ndarray, shape (G, N, M)
        Pilot symbols.
    bandwidth_hz : float
        Signal bandwidth; the sampling period is ``1 / bandwidth_hz``.
    """

    F: np.ndarray
    x: np.ndarray
    bandwidth_hz: float

    @property
    def z(self) -> np.ndarray:
        """Precoded symbols z^g[n] = F^g[n] x^g[n], shape (G, N, N_BS)."""
        return np.einsum("gnam,gnm->gna", self.F, self.x)

    @property
    def n_transmissions(self) -> int:
        return self.F.shape[0]

    @property
    def n_subcarriers(self) -> int:
        return self.F.shape[1]

    @property
    def n_bs(self) -> int:
        return self.F.shape[2]

    @property
    def n_beams(self) -> int:
        return self.F.shape[3]

    def kappa(self) -> np.ndarray:
        """Per-subcarrier delay phase slopes 2*pi*n / (N T_S)."""
        n = np.arange(self.n_subcarriers)
        return 2 * np.pi * n * self.bandwidth_hz / self.n_subcarriers

    def rotated(self, phase: float) -> "TxSignalSet":
        """Same signals with every pilot multiplied by exp(j*phase)."""
        return TxSignalSet(self.F, self.x * np.exp(1j * phase), self.bandwidth_hz)


def beam_angles(n_beams: int, sector=(-math.pi / 2, math.pi / 2)) -> np.ndarray:
    """Centres of ``n_beams`` equal-width cells partitioning ``sector``."""
    lo, hi = sector
    return lo + (np.arange(n_beams) + 0.5) * (hi - lo) / n_beams


def build_beamformer(cfg: ScenarioConfig) -> TxSignalSet:
    """Fixed coverage beamformer and known pilots, constant over g and n.

    ``beam_layout='uniform'`` steers the M beams to uniformly spaced angles in
    ``cfg.beam_sector_rad``; ``'dft'`` uses M columns of the DFT grid in
    sin(theta).  Pilots are unit-modulus symbols, one per beam (the transmit
    power lives in the path gains).  ``'qpsk'`` draws them once from
    ``cfg.pilot_seed``; ``'ones'`` uses a constant vector, which makes the AOD
    unidentifiable whenever G = 1.
    """
    if cfg.n_beams > cfg.n_bs:
        raise ValueError("more beams than antennas")
    G, N, M = cfg.n_transmissions, cfg.n_subcarriers, cfg.n_beams
    if cfg.beam_layout == "uniform":
        angles = beam_angles(M, cfg.beam_sector_rad)
    else:
        u = -1 + (2 * np.arange(M) + 1) / M
        angles = np.arcsin(u)
    F = steering_vector(angles, cfg.n_bs).T
    F = F / np.linalg.norm(F)
    F = np.broadcast_to(F, (G, N, cfg.n_bs, M)).copy()
    if cfg.pilots == "ones":
        x = np.ones((G, N, M), dtype=complex)
    else:
        rng = np.random.default_rng(cfg.pilot_seed)
        x = np.exp(1j * (np.pi / 4 + np.pi / 2 * rng.integers(0, 4, size=(G, N, M))))
    return TxSignalSet(F, x, cfg.bandwidth_hz)


def channel_row(n: int, paths: Sequence[PathParams], cfg: ScenarioConfig) -> np.ndarray:
    """h^T[n] = sum_k sqrt(N_BS) alpha_k exp(-j kappa_n tau_k) a^H(theta_k)."""
    alpha, tau, theta = path_arrays(paths)
    kappa_n = 2 * np.pi * n * cfg.bandwidth_hz / cfg.n_subcarriers
    a = steering_vector(theta, cfg.n_bs)
    zeta = math.sqrt(cfg.n_bs) * alpha * np.exp(-1j * kappa_n * tau)
    return zeta @ a.conj()


def path_projections(theta, tx: TxSignalSet) -> np.ndarray:
    """b_k^g[n] = a^H(theta_k) z^g[n], shape (G, N, K+1)."""
    a = steering_vector(theta, tx.n_bs)
    return np.einsum("ka,gna->gnk", a.conj(), tx.z)


def noise_free_matrix(paths: Sequence[PathParams], tx: TxSignalSet) -> np.ndarray:
    """All noise-free observations m^g[n] laid out N x G."""
    alpha, tau, theta = path_arrays(paths)
    return _noise_free(alpha, tau, theta, tx)


def _noise_free(alpha, tau, theta, tx: TxSignalSet) -> np.ndarray:
    b = path_projections(theta, tx)
    phase = np.exp(-1j * np.outer(tx.kappa(), tau))
    m = math.sqrt(tx.n_bs) * np.einsum("gnk,nk,k->gn", b, phase, alpha)
    return m.T


def noise_free_observation(g: int, n: int, paths: Sequence[PathParams], tx: TxSignalSet) -> complex:
    """Single noise-free sample m^g[n] (0-based g)."""
    alpha, tau, theta = path_arrays(paths)
    a = steering_vector(theta, tx.n_bs)
    kappa_n = tx.kappa()[n]
    z = tx.z[g, n]
    return complex(math.sqrt(tx.n_bs) * np.sum(alpha * np.exp(-1j * kappa_n * tau) * (a.conj() @ z)))


@dataclass(frozen=True)
class ObservationSet:
    """Received samples Y (N x G) with the transmit signals that produced them."""

    Y: np.ndarray
    tx: TxSignalSet
    sigma2: float

    def to_dict(self) -> dict:
        return {
            "sigma2": self.sigma2,
            "bandwidth_hz": self.tx.bandwidth_hz,
            "Y": _cplx_to_list(self.Y),
            "F": _cplx_to_list(self.tx.F),
            "x": _cplx_to_list(self.tx.x),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ObservationSet":
        tx = TxSignalSet(_list_to_cplx(d["F"]), _list_to_cplx(d["x"]), float(d["bandwidth_hz"]))
        return cls(_list_to_cplx(d["Y"]), tx, float(d["sigma2"]))

    def to_json(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def from_json(cls, path: str | Path) -> "ObservationSet":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_csv(self, path: str | Path) -> None:
        """Y only, one row per (n, g) with real/imag columns."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["n", "g", "real", "imag"])
            for n in range(self.Y.shape[0]):
                for g in range(self.Y.shape[1]):
                    w.writerow([n, g, repr(float(self.Y[n, g].real)), repr(float(self.Y[n, g].imag))])

    @staticmethod
    def read_csv(path: str | Path) -> np.ndarray:
        rows = list(csv.DictReader(open(path, newline="")))
        N = 1 + max(int(r["n"]) for r in rows)
        G = 1 + max(int(r["g"]) for r in rows)
        Y = np.zeros((N, G), dtype=complex)
        for r in rows:
            Y[int(r["n"]), int(r["g"])] = complex(float(r["real"]), float(r["imag"]))
        return Y


def _cplx_to_list(a: np.ndarray) -> dict:
    a = np.asarray(a)
    return {"shape": list(a.shape), "real": a.real.ravel().tolist(), "imag": a.imag.ravel().tolist()}


def _list_to_cplx(d: dict) -> np.ndarray:
    return (np.asarray(d["real"]) + 1j * np.asarray(d["imag"])).reshape(d["shape"])


def synthesize(cfg: ScenarioConfig, paths: Sequence[PathParams], tx: TxSignalSet,
               sigma2: float, seed=None) -> ObservationSet:
    """Noisy observations y^g[n] = m^g[n] + nu^g[n], nu ~ CN(0, sigma2).

    ``seed`` may be an int, a ``SeedSequence`` or a ``Generator``.
    """
    if sigma2 < 0:
        raise ValueError("sigma2 must be non-negative")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    m = noise_free_matrix(paths, tx)
    if sigma2 == 0:
        return ObservationSet(m, tx, 0.0)
    noise = rng.standard_normal(m.shape) + 1j * rng.standard_normal(m.shape)
    return ObservationSet(m + math.sqrt(sigma2 / 2) * noise, tx, float(sigma2))
