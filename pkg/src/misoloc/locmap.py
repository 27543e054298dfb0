"""MS localization and scatterer mapping from estimated (AOD, TOF) pairs.

Everything here works in the array frame (BS at the origin, array broadside
along +x).  :func:`locate` converts to the world frame when given a
:class:`~misoloc.scenario.ScenarioConfig`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .estimator import nll
from .scenario import SPEED_OF_LIGHT, ScenarioConfig
from .signal import TxSignalSet

# Relative slack of the ellipse feasibility test c*tau_k >= ||p|| (1 + FEASIBILITY_TOL).
FEASIBILITY_TOL = 1e-9


class MappingError(ValueError):
    """Degenerate geometry in a closed-form mapping."""


def identify_los(theta_vec) -> tuple[int, bool]:
    """Index of the shortest-delay pair and whether that minimum was tied.

    Ties go to the lowest index.
    """
    taus = np.asarray(theta_vec, dtype=float).reshape(-1, 2)[:, 1]
    if taus.size == 0:
        raise ValueError("no paths")
    k = int(np.argmin(taus))
    tie = int(np.count_nonzero(taus == taus[k])) > 1
    return k, tie


def localize(theta_los: float, tau_los: float) -> np.ndarray:
    """p = c tau [cos theta, sin theta] (array frame)."""
    if not tau_los > 0:
        raise ValueError("LOS delay must be positive")
    return SPEED_OF_LIGHT * tau_los * np.array([math.cos(theta_los), math.sin(theta_los)])


@dataclass
class ScattererEstimate:
    position: np.ndarray
    valid: bool
    reason: str = ""


def map_scatterer(p_hat, theta_k: float, tau_k: float) -> ScattererEstimate:
    """Point on the AOD ray whose BS and MS distances add up to c tau_k.

    With ``u = (cos theta_k, sin theta_k)`` and ``D = c tau_k`` the point is
    ``rho u`` with ``rho = (D^2 - ||p||^2) / (2 (D - p.u))``.  This is the
    tangent closed form rewritten without tan, so it holds in every
    quadrant.  ``D`` below ``||p||`` has no solution and gives an invalid
    estimate (position NaN).  ``D == ||p||`` with the ray along ``p``
    collapses the ellipse onto the BS-MS segment; the midpoint is returned.
    """
    p = np.asarray(p_hat, dtype=float)
    u = np.array([math.cos(theta_k), math.sin(theta_k)])
    D = SPEED_OF_LIGHT * tau_k
    norm_p = float(np.linalg.norm(p))
    nan = np.full(2, np.nan)
    if norm_p == 0:
        return ScattererEstimate(nan, False, "MS estimate at the BS")
    if abs(D - norm_p) <= FEASIBILITY_TOL * norm_p:
        if abs(norm_p - float(p @ u)) <= FEASIBILITY_TOL * norm_p:
            return ScattererEstimate(p / 2, True, "degenerate ellipse: midpoint of the BS-MS segment")
        return ScattererEstimate(nan, False, "range sum equals the BS-MS distance off the segment")
    if D < norm_p * (1 + FEASIBILITY_TOL):
        return ScattererEstimate(nan, False, "range sum shorter than the BS-MS distance")
    den = 2 * (D - float(p @ u))
    if den <= FEASIBILITY_TOL * D:
        return ScattererEstimate(nan, False, "ray parallel to the ellipse axis")
    rho = (D * D - norm_p * norm_p) / den
    return ScattererEstimate(rho * u, True)


def channel_coords(s) -> np.ndarray:
    """(theta, tau) of a point: the inverse of ``c tau [cos theta, sin theta]``."""
    s = np.asarray(s, dtype=float)
    return np.array([math.atan2(s[1], s[0]), math.hypot(s[0], s[1]) / SPEED_OF_LIGHT])


def position_cost(s, Y, tx: TxSignalSet) -> float:
    """Single-path cost at a point of the plane, L_0(theta(s), tau(s))."""
    s = np.asarray(s, dtype=float)
    if not np.any(s):
        raise ValueError("cost undefined at the origin")
    return nll(channel_coords(s), Y, tx)


def equivalent_to_scatterer(s_e, p) -> np.ndarray:
    """Scatterer on the BS-to-``s_e`` line equidistant from ``s_e`` and ``p``.

    ``lambda = ||s_e - p||^2 / (2 (||s_e||^2 - p.s_e))`` and the scatterer is
    ``(1 - lambda) s_e``.
    """
    s_e = np.asarray(s_e, dtype=float)
    p = np.asarray(p, dtype=float)
    den = float(s_e @ s_e - p @ s_e)
    diff = s_e - p
    num = 0.5 * float(diff @ diff)
    if num == 0:
        return s_e.copy()
    if abs(den) <= 1e-12 * float(s_e @ s_e):
        raise MappingError("equivalent position is degenerate for this MS position")
    return (1 - num / den) * s_e


@dataclass
class LocalizationResult:
    """MS position and scatterer map.

    ``scatterers[j]`` comes from the j-th non-LOS pair in estimation order;
    ``path_index[j]`` gives that pair's index.  Invalid scatterers hold NaN.
    """

    position: np.ndarray
    scatterers: list[np.ndarray]
    los_index: int
    los_tie: bool
    valid: list[bool]
    path_index: list[int]
    frame: str = "array"
    notes: list[str] = field(default_factory=list)

    def to_world(self, cfg: ScenarioConfig) -> "LocalizationResult":
        if self.frame == "world":
            return self
        return LocalizationResult(
            cfg.to_world(self.position), [cfg.to_world(s) for s in self.scatterers],
            self.los_index, self.los_tie, list(self.valid), list(self.path_index),
            "world", list(self.notes))

    def to_dict(self) -> dict:
        return {
            "frame": self.frame,
            "position": self.position.tolist(),
            "scatterers": [None if not v else s.tolist() for s, v in zip(self.scatterers, self.valid)],
            "valid": list(self.valid),
            "path_index": list(self.path_index),
            "los_index": self.los_index,
            "los_tie": self.los_tie,
            "notes": list(self.notes),
        }


def locate(theta_vec, cfg: ScenarioConfig | None = None) -> LocalizationResult:
    """Position and map from a Theta vector [theta_0, tau_0, ...] (rad, s).

    The LOS is the shortest-delay pair.  Output is in the world frame when
    ``cfg`` is given, else in the array frame.
    """
    pairs = np.asarray(theta_vec, dtype=float).reshape(-1, 2)
    k_los, tie = identify_los(pairs)
    p = localize(*pairs[k_los])
    notes = ["several pairs share the minimum delay"] if tie else []
    scat, valid, idx = [], [], []
    for k, (th, tau) in enumerate(pairs):
        if k == k_los:
            continue
        est = map_scatterer(p, th, tau)
        scat.append(est.position)
        valid.append(est.valid)
        idx.append(k)
        if est.reason:
            notes.append(f"path {k}: {est.reason}")
    res = LocalizationResult(p, scat, k_los, tie, valid, idx, "array", notes)
    return res if cfg is None else res.to_world(cfg)
