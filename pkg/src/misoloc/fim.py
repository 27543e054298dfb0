"""Fisher information in the channel and position domains.

Parameter order is frozen: per path ``(r, phi, tau, theta)`` in the channel
domain and ``(r, phi, x, y)`` in the location domain, LOS path first.  The
position of path 0 is the MS, the position of path k >= 1 its scatterer.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .scenario import SPEED_OF_LIGHT, LocationParams, PathParams, path_arrays
from .signal import TxSignalSet, _noise_free, path_projections, steering_vector

PARAMS_PER_PATH = 4
COND_WARN = 1e12


class SingularFimError(np.linalg.LinAlgError):
    """FIM too ill-conditioned to invert; carries the equilibrated spectrum."""

    def __init__(self, message: str, eigenvalues: np.ndarray):
        super().__init__(message)
        self.eigenvalues = eigenvalues


@dataclass
class ChannelFim:
    J: np.ndarray
    n_paths: int

    def block(self, h: int, l: int) -> np.ndarray:
        """Lambda(gamma_h, gamma_l)."""
        return self.J[4 * h:4 * h + 4, 4 * l:4 * l + 4]


@dataclass
class PositionFim:
    J_gamma: np.ndarray
    T: np.ndarray
    J_eta: np.ndarray
    sigma_p: np.ndarray
    peb: float
    map_bounds: np.ndarray
    crlb_channel: np.ndarray
    condition: float
    extras: dict = field(default_factory=dict)

    def channel_bound(self, k: int, name: str) -> float:
        """sqrt(CRLB) of channel parameter ``name`` of path ``k``."""
        return float(self.crlb_channel[4 * k + ("r", "phi", "tau", "theta").index(name)])


def _projections(theta, tx: TxSignalSet) -> tuple[np.ndarray, np.ndarray]:
    """b = a^H z and c = a^H D z for each path, shape (G, N, K+1)."""
    b = path_projections(theta, tx)
    m = np.arange(tx.n_bs)
    # D_k = -j pi cos(theta_k) diag(m) for half-wavelength spacing
    d_diag = -1j * np.pi * np.cos(theta)[:, None] * m
    a = steering_vector(theta, tx.n_bs)
    c = np.einsum("ka,ka,gna->gnk", a.conj(), d_diag, tx.z)
    return b, c


def fim_channel(paths: Sequence[PathParams], tx: TxSignalSet, sigma2: float) -> ChannelFim:
    """Closed-form channel-domain FIM, assembled entry by entry.

    With ``E = 2 N_BS / sigma2 * exp(j kappa_n (tau_h - tau_l))`` and the
    array products ``u = z^H A_hl z``, ``v = z^H A_hl D_l z``,
    ``v' = z^H D_h^H A_hl z``, ``w = z^H D_h^H A_hl D_l z``, every entry is
    ``sum_{g,n} Re{coef * E * product}``.  Writing the gains into ``coef``
    explicitly (instead of dividing beta by alpha) keeps zero-gain paths
    finite.
    """
    if sigma2 <= 0:
        raise ValueError("sigma2 must be positive for a Fisher information")
    alpha, tau, theta = path_arrays(paths)
    K1 = len(paths)
    b, c = _projections(theta, tx)
    kappa = tx.kappa()[None, :, None, None]

    E = (2 * tx.n_bs / sigma2) * np.exp(1j * tx.kappa()[:, None, None] * (tau[:, None] - tau[None, :]))
    E = E[None]
    u = b.conj()[..., :, None] * b[..., None, :]
    v = b.conj()[..., :, None] * c[..., None, :]
    vp = c.conj()[..., :, None] * b[..., None, :]
    w = c.conj()[..., :, None] * c[..., None, :]

    eh = _unit_phase(alpha)
    ah_c = alpha.conj()[:, None]   # alpha_h^*
    al = alpha[None, :]            # alpha_l
    ph_h = eh.conj()[:, None]      # e^{-j phi_h}
    ph_l = eh[None, :]             # e^{j phi_l}

    def s(x):
        return np.real(np.sum(E * x, axis=(0, 1)))

    L = {}
    L["rr"] = s(ph_h * ph_l * u)
    L["rp"] = s(1j * ph_h * al * u)
    L["rt"] = s(-1j * kappa * ph_h * al * u)
    L["ro"] = s(ph_h * al * v)
    L["pr"] = s(-1j * ah_c * ph_l * u)
    L["pp"] = s(ah_c * al * u)
    L["pt"] = s(-kappa * ah_c * al * u)
    L["po"] = s(-1j * ah_c * al * v)
    L["tr"] = s(1j * kappa * ah_c * ph_l * u)
    L["tp"] = s(-kappa * ah_c * al * u)
    L["tt"] = s(kappa ** 2 * ah_c * al * u)
    L["to"] = s(1j * kappa * ah_c * al * v)
    L["or"] = s(ah_c * ph_l * vp)
    L["op"] = s(1j * ah_c * al * vp)
    L["ot"] = s(-1j * kappa * ah_c * al * vp)
    L["oo"] = s(ah_c * al * w)

    J = np.zeros((4 * K1, 4 * K1))
    names = "rpto"
    for i, a_name in enumerate(names):
        for j, b_name in enumerate(names):
            J[i::4, j::4] = L[a_name + b_name]
    return ChannelFim(J, K1)


def _unit_phase(alpha: np.ndarray) -> np.ndarray:
    out = np.ones_like(alpha)
    nz = alpha != 0
    out[nz] = alpha[nz] / np.abs(alpha[nz])
    return out


def observation_jacobian(paths: Sequence[PathParams], tx: TxSignalSet, step: float = 1e-5) -> np.ndarray:
    """Central-difference d m^g[n] / d gamma, shape (N*G, 4(K+1))."""
    alpha, tau, theta = path_arrays(paths)
    r, phi = np.abs(alpha), np.angle(alpha)
    if len(paths):
        phi = np.array([p.phi for p in paths])
    gain_scale = max(float(np.max(r)), 1e-300)
    vec = np.column_stack([r, phi, tau, theta]).ravel()
    scales = np.tile([gain_scale, 1.0, 1.0 / tx.bandwidth_hz, 1.0], len(paths))

    def model(v):
        v = v.reshape(-1, 4)
        a = v[:, 0] * np.exp(1j * v[:, 1])
        return _noise_free(a, v[:, 2], v[:, 3], tx).ravel()

    cols = []
    for i in range(vec.size):
        h = step * scales[i]
        e = np.zeros_like(vec)
        e[i] = h
        cols.append((model(vec + e) - model(vec - e)) / (2 * h))
    return np.column_stack(cols)


def fd_fim(paths: Sequence[PathParams], tx: TxSignalSet, sigma2: float, step: float = 1e-5) -> ChannelFim:
    """FIM from numerically differentiated noise-free observations.

    ``step`` is relative: gains move by ``step * max|alpha|``, delays by
    ``step * T_S`` and angles/phases by ``step`` radians.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    dm = observation_jacobian(paths, tx, step)
    J = (2.0 / sigma2) * np.real(dm.conj().T @ dm)
    return ChannelFim(J, len(paths))


def _atan2_grad(v) -> np.ndarray:
    x, y = v
    return np.array([-y, x]) / (x * x + y * y)


def jacobian_T(eta: Sequence[LocationParams]) -> np.ndarray:
    """T = d gamma^T / d eta (rows: location params, columns: channel params)."""
    K1 = len(eta)
    p = np.asarray(eta[0].position, dtype=float)
    if np.linalg.norm(p) == 0:
        raise ValueError("path 0: MS position at the BS")
    T = np.zeros((4 * K1, 4 * K1))
    for k in range(K1):
        T[4 * k, 4 * k] = 1.0
        T[4 * k + 1, 4 * k + 1] = 1.0
    T[2:4, 2] = p / np.linalg.norm(p) / SPEED_OF_LIGHT
    T[2:4, 3] = _atan2_grad(p)
    for k in range(1, K1):
        s = np.asarray(eta[k].position, dtype=float)
        d1, d2 = np.linalg.norm(s), np.linalg.norm(p - s)
        if d1 == 0 or d2 == 0:
            raise ValueError(f"path {k}: scatterer coincides with the BS or the MS")
        T[2:4, 4 * k + 2] = (p - s) / d2 / SPEED_OF_LIGHT
        T[4 * k + 2:4 * k + 4, 4 * k + 2] = (s / d1 - (p - s) / d2) / SPEED_OF_LIGHT
        T[4 * k + 2:4 * k + 4, 4 * k + 3] = _atan2_grad(s)
    return T


def inverse_jacobian(paths: Sequence[PathParams]) -> np.ndarray:
    """T^{-1} = d eta^T / d gamma from the inverse mapping (rows: channel params).

    The MS follows from the LOS pair; each scatterer from its own pair and the
    MS, which is why every scatterer column also depends on (tau_0, theta_0).
    """
    K1 = len(paths)
    c = SPEED_OF_LIGHT
    tau0, th0 = paths[0].tau, paths[0].theta
    u0 = np.array([math.cos(th0), math.sin(th0)])
    u0p = np.array([-math.sin(th0), math.cos(th0)])
    p = c * tau0 * u0
    dp_dtau0 = c * u0
    dp_dth0 = c * tau0 * u0p

    Tb = np.zeros((4 * K1, 4 * K1))
    for k in range(K1):
        Tb[4 * k, 4 * k] = 1.0
        Tb[4 * k + 1, 4 * k + 1] = 1.0
    Tb[2, 2:4] = dp_dtau0
    Tb[3, 2:4] = dp_dth0
    for k in range(1, K1):
        D = c * paths[k].tau
        u = np.array([math.cos(paths[k].theta), math.sin(paths[k].theta)])
        up = np.array([-u[1], u[0]])
        num = D * D - p @ p
        den = 2 * (D - p @ u)
        if abs(den) < 1e-12 * max(D, 1.0):
            raise ValueError(f"path {k}: degenerate inverse mapping")
        rho = num / den
        drho_dD = (2 * D * den - 2 * num) / den ** 2
        drho_dth = 2 * num * (p @ up) / den ** 2
        drho_dp = (-2 * p * den + 2 * num * u) / den ** 2
        ds_dtau = drho_dD * c * u
        ds_dth = drho_dth * u + rho * up
        ds_dp = np.outer(u, drho_dp)
        cols = slice(4 * k + 2, 4 * k + 4)
        Tb[4 * k + 2, cols] = ds_dtau
        Tb[4 * k + 3, cols] = ds_dth
        Tb[2, cols] = ds_dp @ dp_dtau0
        Tb[3, cols] = ds_dp @ dp_dth0
    return Tb


def equilibrated_inverse(J: np.ndarray) -> tuple[np.ndarray, float]:
    """Inverse of a symmetric PSD matrix via a diagonally scaled eigendecomposition.

    Falls back to the pseudo-inverse (with a warning) past ``COND_WARN``;
    raises :class:`SingularFimError` when no positive spectrum is left.
    """
    J = 0.5 * (J + J.T)
    d = np.sqrt(np.clip(np.diag(J), 0, None))
    if np.any(d == 0):
        raise SingularFimError("FIM has a zero diagonal entry", np.linalg.eigvalsh(J))
    Js = J / np.outer(d, d)
    w, V = np.linalg.eigh(Js)
    if w[-1] <= 0 or w[0] <= 1e-15 * w[-1]:
        raise SingularFimError("FIM is numerically singular", w)
    cond = float(w[-1] / w[0])
    if cond > COND_WARN:
        warnings.warn(f"ill-conditioned FIM (cond={cond:.3g}); using pseudo-inverse", RuntimeWarning)
        inv_s = np.linalg.pinv(Js, rcond=1e-15, hermitian=True)
    else:
        inv_s = (V / w) @ V.T
    return inv_s / np.outer(d, d), cond


def position_bounds(paths: Sequence[PathParams], eta: Sequence[LocationParams],
                    tx: TxSignalSet, sigma2: float) -> PositionFim:
    """Position-domain CRLB, PEB and per-scatterer mapping bounds.

    ``map_bounds[k-1]`` is sqrt of the trace of the 2x2 CRLB block of scatterer
    k.  ``crlb_channel`` holds sqrt of the diagonal of J_gamma^{-1}.
    """
    J_gamma = fim_channel(paths, tx, sigma2).J
    T = jacobian_T(eta)
    J_eta = T @ J_gamma @ T.T
    sigma_p, cond = equilibrated_inverse(J_eta)
    C_gamma, _ = equilibrated_inverse(J_gamma)
    peb = math.sqrt(sigma_p[2, 2] + sigma_p[3, 3])
    K1 = len(paths)
    map_bounds = np.array([math.sqrt(sigma_p[4 * k + 2, 4 * k + 2] + sigma_p[4 * k + 3, 4 * k + 3])
                           for k in range(1, K1)])
    crlb = np.sqrt(np.clip(np.diag(C_gamma), 0, None))
    return PositionFim(J_gamma, T, J_eta, sigma_p, peb, map_bounds, crlb, cond)


def assemble_approx_sigma(Tbar: np.ndarray, C_blocks: Sequence[np.ndarray]) -> np.ndarray:
    """Block form of the orthogonal-path CRLB: T^{-T} blkdiag(C_k) T^{-1}."""
    K1 = len(C_blocks)
    Cb = np.zeros((4 * K1, 4 * K1))
    for k, C in enumerate(C_blocks):
        Cb[4 * k:4 * k + 4, 4 * k:4 * k + 4] = C
    return Tbar.T @ Cb @ Tbar


def approx_sigma_p(paths: Sequence[PathParams], tx: TxSignalSet, sigma2: float) -> np.ndarray:
    """Position CRLB neglecting inter-path information (orthogonal paths)."""
    fim = fim_channel(paths, tx, sigma2)
    C_blocks = []
    for k in range(len(paths)):
        lam = fim.block(k, k)
        try:
            C_blocks.append(equilibrated_inverse(lam)[0])
        except SingularFimError as exc:
            raise SingularFimError(f"path {k}: singular diagonal FIM block", exc.eigenvalues) from None
    return assemble_approx_sigma(inverse_jacobian(paths), C_blocks)


def peb_from_sigma(sigma_p: np.ndarray) -> float:
    return math.sqrt(sigma_p[2, 2] + sigma_p[3, 3])


def map_bound_from_sigma(sigma_p: np.ndarray, k: int) -> float:
    return math.sqrt(sigma_p[4 * k + 2, 4 * k + 2] + sigma_p[4 * k + 3, 4 * k + 3])
