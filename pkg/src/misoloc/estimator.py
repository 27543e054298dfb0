"""Compressed joint ML estimation of (AOD, TOF) pairs.

The complex path gains are profiled out in closed form, leaving a cost over
``Theta = [theta_0, tau_0, ..., theta_K, tau_K]``.  A single-path version of
that cost, evaluated on a grid, seeds a successive (SAGE-style) extraction;
Nelder-Mead then polishes either the joint cost or each single-path cost.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import ndimage, optimize

from .scenario import SPEED_OF_LIGHT
from .signal import TxSignalSet, steering_vector

MAX_ITER = 2000
# Simplex size at termination (rad, m); well inside the 1e-8 requirement so
# noiseless round trips land at ~1e-11.
SIMPLEX_TOL = 1e-10
REG_COND = 1e12
POLISH_TOL = 1e-5
# Finest grid step the joint initializer searches (rad, m).
SEARCH_RESOLUTION = (math.radians(4.0), 2.0)


class RefineError(RuntimeError):
    """Simplex search could not get a finite cost."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics


def _split(theta_vec) -> tuple[np.ndarray, np.ndarray]:
    v = np.asarray(theta_vec, dtype=float).reshape(-1, 2)
    return v[:, 0], v[:, 1]


def to_internal(theta_vec) -> np.ndarray:
    """(angle rad, delay s) pairs -> (angle rad, range m) for the optimizer."""
    v = np.asarray(theta_vec, dtype=float).reshape(-1, 2).copy()
    v[:, 1] *= SPEED_OF_LIGHT
    return v.ravel()


def from_internal(x) -> np.ndarray:
    v = np.asarray(x, dtype=float).reshape(-1, 2).copy()
    v[:, 1] /= SPEED_OF_LIGHT
    return v.ravel()


def build_Q(theta_vec, tx: TxSignalSet) -> np.ndarray:
    """Stacked Q^g matrices, shape (G, N, K+1).

    ``Q[g, n, k] = exp(-j kappa_n tau_k) z^g[n]^T a^*(theta_k)``.
    """
    thetas, taus = _split(theta_vec)
    a = steering_vector(thetas, tx.n_bs)
    b = np.einsum("ka,gna->gnk", a.conj(), tx.z)
    return b * np.exp(-1j * np.outer(tx.kappa(), taus))[None]


@dataclass
class ProfileResult:
    alpha: np.ndarray
    regularized: bool
    condition: float


def _profile(Qg: np.ndarray, Y: np.ndarray, n_bs: int) -> ProfileResult:
    Qs = np.einsum("gnk,gnl->kl", Qg.conj(), Qg)
    rhs = np.einsum("gnk,ng->k", Qg.conj(), Y)
    w = np.linalg.eigvalsh(Qs)
    cond = math.inf if w[0] <= 0 else float(w[-1] / w[0])
    regularized = cond > REG_COND
    if regularized:
        eps = 1e-10 * np.trace(Qs).real / Qs.shape[0]
        Qs = Qs + eps * np.eye(Qs.shape[0])
    alpha = np.linalg.solve(Qs, rhs) / math.sqrt(n_bs)
    return ProfileResult(alpha, regularized, cond)


def profile_alpha(theta_vec, Y, tx: TxSignalSet) -> np.ndarray:
    """Least-squares path gains for fixed (AOD, TOF) pairs."""
    return _profile(build_Q(theta_vec, tx), np.asarray(Y).reshape(tx.n_subcarriers, -1), tx.n_bs).alpha


def residual(theta_vec, Y, tx: TxSignalSet, alpha=None) -> np.ndarray:
    """y^g - sqrt(N_BS) Q^g alpha, laid out N x G (alpha profiled if omitted)."""
    Y = np.asarray(Y).reshape(tx.n_subcarriers, -1)
    Qg = build_Q(theta_vec, tx)
    if alpha is None:
        alpha = _profile(Qg, Y, tx.n_bs).alpha
    return Y - math.sqrt(tx.n_bs) * np.einsum("gnk,k->ng", Qg, alpha)


def ls_cost(theta_vec, Y, tx: TxSignalSet, alpha) -> float:
    """sum_g ||y^g - sqrt(N_BS) Q^g alpha||^2 for a given alpha."""
    r = residual(theta_vec, Y, tx, np.asarray(alpha, dtype=complex))
    return float(np.vdot(r, r).real)


def nll(theta_vec, Y, tx: TxSignalSet) -> float:
    """Compressed negative log-likelihood L_K(Theta), gains profiled out.

    The noise-variance estimate at the same point is ``nll / (N G)``.
    """
    r = residual(theta_vec, Y, tx)
    return float(np.vdot(r, r).real)


@dataclass(frozen=True)
class GridSpec:
    """Grid of (AOD, range) nodes; ranges are c * tau in meters."""

    thetas: np.ndarray
    ranges: np.ndarray

    def __post_init__(self):
        if len(self.thetas) == 0 or len(self.ranges) == 0:
            raise ValueError("empty grid")

    @classmethod
    def uniform(cls, n_theta: int = 8, n_range: int = 8,
                theta_span=(-math.pi / 2, math.pi / 2), range_span=(0.0, 50.0)) -> "GridSpec":
        """Cell-centre nodes of an n_theta x n_range partition."""
        t0, t1 = theta_span
        r0, r1 = range_span
        th = t0 + (np.arange(n_theta) + 0.5) * (t1 - t0) / n_theta
        rg = r0 + (np.arange(n_range) + 0.5) * (r1 - r0) / n_range
        return cls(th, rg)

    @classmethod
    def from_steps(cls, theta_step: float, range_step: float,
                   theta_span=(-math.pi / 2, math.pi / 2), range_span=(0.0, 50.0)) -> "GridSpec":
        if theta_step <= 0 or range_step <= 0:
            raise ValueError("grid steps must be positive")
        n_t = max(1, int(round((theta_span[1] - theta_span[0]) / theta_step)))
        n_r = max(1, int(round((range_span[1] - range_span[0]) / range_step)))
        return cls.uniform(n_t, n_r, theta_span, range_span)

    @property
    def spans(self) -> tuple[tuple[float, float], tuple[float, float]]:
        """(theta, range) intervals partitioned by the cell-centre nodes."""
        ht, hr = self.theta_step / 2, self.range_step / 2
        return ((float(self.thetas[0] - ht), float(self.thetas[-1] + ht)),
                (float(self.ranges[0] - hr), float(self.ranges[-1] + hr)))

    def subdivided(self, max_theta_step: float, max_range_step: float) -> "GridSpec":
        """Each cell split evenly until the steps are at most the given ones."""
        ft = max(1, math.ceil(self.theta_step / max_theta_step - 1e-9))
        fr = max(1, math.ceil(self.range_step / max_range_step - 1e-9))
        if ft == 1 and fr == 1:
            return self
        ts, rs = self.spans
        return GridSpec.uniform(len(self.thetas) * ft, len(self.ranges) * fr, ts, rs)

    @classmethod
    def fine(cls) -> "GridSpec":
        """2 m / 4 degree resolution preset."""
        return cls.from_steps(math.radians(4.0), 2.0)

    @property
    def taus(self) -> np.ndarray:
        return self.ranges / SPEED_OF_LIGHT

    @property
    def shape(self) -> tuple[int, int]:
        return len(self.thetas), len(self.ranges)

    @property
    def theta_step(self) -> float:
        return float(self.thetas[1] - self.thetas[0]) if len(self.thetas) > 1 else math.pi

    @property
    def range_step(self) -> float:
        return float(self.ranges[1] - self.ranges[0]) if len(self.ranges) > 1 else 50.0


@dataclass
class Spectrum:
    """Single-path cost on a grid; ``minima`` are (cost, i_theta, j_range) sorted."""

    grid: GridSpec
    cost: np.ndarray
    minima: list[tuple[float, int, int]]

    def node(self, i: int, j: int) -> tuple[float, float]:
        """(theta, tau) at grid node (i, j)."""
        return float(self.grid.thetas[i]), float(self.grid.taus[j])


def singlepath_spectrum(Y, tx: TxSignalSet, grid: GridSpec) -> Spectrum:
    """L_0(theta, tau) at every grid node.

    For one path the profiled cost is ``||Y||^2 - |q^H y|^2 / ||q||^2``.
    """
    Y = np.asarray(Y).reshape(tx.n_subcarriers, -1)
    a = steering_vector(grid.thetas, tx.n_bs)
    b = np.einsum("ia,gna->gni", a.conj(), tx.z)
    den = np.sum(np.abs(b) ** 2, axis=(0, 1))
    by = np.einsum("gni,ng->ni", b.conj(), Y)
    ph = np.exp(1j * np.outer(tx.kappa(), grid.taus))
    num = np.abs(by.T @ ph) ** 2
    with np.errstate(divide="ignore", invalid="ignore"):
        cost = np.vdot(Y, Y).real - np.where(den[:, None] > 0, num / den[:, None], 0.0)
    cost = np.maximum(cost, 0.0)
    is_min = cost == ndimage.minimum_filter(cost, size=3, mode="nearest")
    idx = np.argwhere(is_min)
    minima = sorted((float(cost[i, j]), int(i), int(j)) for i, j in idx)
    return Spectrum(grid, cost, minima)


@dataclass
class CostDiagnostics:
    final_cost: float
    iterations: int
    converged: bool
    initial_theta: np.ndarray
    refined_theta: np.ndarray
    initial_cost: float = math.nan
    history: list[float] = field(default_factory=list)
    notes: list[str] = field(default_factory=list)


def refine(cost: Callable[[np.ndarray], float], x0, step=None, *,
           max_iter: int = MAX_ITER, tol: float = SIMPLEX_TOL, max_restarts: int = 3) -> tuple[np.ndarray, CostDiagnostics]:
    """Nelder-Mead from ``x0`` with an axis-aligned initial simplex.

    Coordinates are whatever ``cost`` expects (the callers use angle in rad
    and range in m).  Stops when the simplex fits inside ``tol`` on every
    axis or after ``max_iter`` iterations in total.  After convergence the
    search restarts around the incumbent (up to ``max_restarts`` times) while
    that still lowers the cost.  A non-finite vertex in the starting simplex
    halves ``step`` up to five times before giving up.
    """
    x0 = np.asarray(x0, dtype=float)
    step = np.full(x0.size, 0.05) if step is None else np.broadcast_to(np.asarray(step, float), x0.shape)

    def safe(x):
        v = cost(x)
        return v if np.isfinite(v) else math.inf

    f0 = safe(x0)
    if not np.isfinite(f0):
        raise RefineError("cost is not finite at the starting point")
    notes = []
    for _ in range(6):
        simplex = np.vstack([x0, x0 + np.diag(step)])
        if all(np.isfinite(safe(v)) for v in simplex[1:]):
            break
        step = step / 2
        notes.append("shrunk initial simplex after non-finite cost")
    else:
        raise RefineError("no finite simplex around the starting point")

    history = []

    def record(intermediate_result):
        history.append(float(intermediate_result.fun))

    x, f, nit, success = x0, f0, 0, False
    # Nelder-Mead can collapse onto a non-stationary point; restarting from a
    # fresh simplex around the incumbent is the usual remedy.
    for attempt in range(max_restarts + 1):
        res = optimize.minimize(
            safe, x, method="Nelder-Mead",
            callback=record,
            options={"initial_simplex": simplex, "xatol": tol, "fatol": math.inf,
                     "maxiter": max(1, max_iter - nit), "maxfev": 20 * max_iter},
        )
        nit += int(res.nit)
        improved = float(res.fun) < f
        gain = f - float(res.fun)
        if improved:
            x, f = np.asarray(res.x), float(res.fun)
        success = bool(res.success)
        if attempt and (not improved or gain <= 1e-12 * max(f, 1e-300)):
            break
        if nit >= max_iter:
            break
        simplex = np.vstack([x, x + np.diag(step)])
    diag = CostDiagnostics(f, nit, success, x0.copy(), np.asarray(x).copy(),
                           initial_cost=f0, history=history, notes=notes)
    return np.asarray(x), diag


@dataclass
class ExtractionResult:
    """``costs[k]`` is the search cost of round k; the last entry is the joint
    cost of the returned pairs."""

    theta: np.ndarray
    alphas: np.ndarray
    costs: list[float]
    notes: list[str] = field(default_factory=list)


def _flat(Y, tx: TxSignalSet) -> np.ndarray:
    """N x G observations as one vector in (g, n) order, matching build_Q."""
    return np.asarray(Y, dtype=complex).reshape(tx.n_subcarriers, -1).T.ravel()


def _complement(y: np.ndarray, U: np.ndarray | None, C: np.ndarray):
    if U is None:
        return y, C
    return y - U @ (U.conj().T @ y), C - U @ (U.conj().T @ C)


def _added_path_cost(y, U, C) -> np.ndarray:
    """LS cost after adding each column of ``C`` to the span of ``U``."""
    yp, Cp = _complement(y, U, C)
    den = np.sum(np.abs(Cp) ** 2, axis=0)
    num = np.abs(Cp.conj().T @ yp) ** 2
    with np.errstate(divide="ignore", invalid="ignore"):
        gain = np.where(den > 0, num / den, 0.0)
    return np.maximum(np.vdot(yp, yp).real - gain, 0.0)


def _basis(pairs: list, tx: TxSignalSet):
    """Orthonormal basis of the columns of the given pairs (None if empty)."""
    if not pairs:
        return None
    Q = build_Q(np.concatenate(pairs), tx)
    U, _ = np.linalg.qr(Q.reshape(-1, Q.shape[-1]))
    return U


def _best_path(y, tx: TxSignalSet, grid: GridSpec, U, polish: bool, n_starts: int):
    """Best (theta, tau) to add to the span of ``U``, gains re-fitted jointly.

    Grid search over every node, then optionally simplex searches from the
    ``n_starts`` deepest local minima of that surface.  ``U = None`` is the
    plain single-path spectrum of ``y``.
    """
    th, rg = np.meshgrid(grid.thetas, grid.taus, indexing="ij")
    nodes = np.column_stack([th.ravel(), rg.ravel()]).ravel()
    C = build_Q(nodes, tx).reshape(y.size, -1)
    surf = _added_path_cost(y, U, C).reshape(grid.shape)
    is_min = surf == ndimage.minimum_filter(surf, size=3, mode="nearest")
    minima = sorted((float(surf[i, j]), int(i), int(j)) for i, j in np.argwhere(is_min))
    c, i, j = minima[0]
    best = (c, np.array([grid.thetas[i], grid.taus[j]]))
    if not polish:
        return best

    def cost(x):
        q = build_Q(from_internal(x), tx).reshape(-1, 1)
        return float(_added_path_cost(y, U, q)[0])

    step = [grid.theta_step / 4, grid.range_step / 4]
    for c, i, j in minima[:n_starts]:
        x, d = refine(cost, [grid.thetas[i], grid.ranges[j]], step, tol=POLISH_TOL, max_restarts=1)
        if d.final_cost < best[0]:
            best = (d.final_cost, from_internal(x))
    return best


def _contribution(pair, y, tx: TxSignalSet) -> np.ndarray:
    """Single-path fit of ``pair`` to ``y``, as a flat vector."""
    q = build_Q(pair, tx).reshape(-1)
    return q * (np.vdot(q, y) / np.vdot(q, q).real)


def successive_extraction(Y, tx: TxSignalSet, grid: GridSpec, n_paths: int, *,
                          mode: str = "subtract", polish: bool = False, sweeps: int = 0,
                          n_starts: int = 4) -> ExtractionResult:
    """Initial Theta from the single-path cost, strongest basin first.

    ``mode='subtract'`` is the SAGE loop: take the global minimum of the
    single-path spectrum of the residual, fit that path's gain alone and
    subtract its reconstruction.  ``mode='project'`` instead picks the node
    that, fitted jointly with the pairs already found, leaves the smallest
    residual; a strong path fitted alone is biased by the weaker ones, and
    what its subtraction leaves behind can mask a weak LOS.  The first round
    is the same in both modes.

    With ``polish`` each pair is also sought off-grid by short simplex
    searches from the ``n_starts`` deepest grid minima.  ``sweeps`` further
    passes re-estimate every pair with all the others held fixed, keeping a
    new pair only if it lowers the joint cost.
    """
    if n_paths < 1:
        raise ValueError("n_paths must be >= 1")
    if mode not in ("subtract", "project"):
        raise ValueError(f"unknown extraction mode {mode!r}")
    y = _flat(Y, tx)
    pairs, costs, notes = [], [], []

    def search(others):
        if mode == "project":
            return _best_path(y, tx, grid, _basis(others, tx), polish, n_starts)
        target = y.copy()
        for p in others:
            target = target - _contribution(p, target, tx)
        return _best_path(target, tx, grid, None, polish, n_starts)

    for k in range(n_paths):
        c, pair = search(pairs)
        if any(np.allclose(pair, p, rtol=0, atol=1e-15) for p in pairs):
            notes.append(f"path {k}: node already extracted; basins not distinguishable")
        pairs.append(pair)
        costs.append(c)
    current = nll(np.concatenate(pairs), Y, tx)
    for _ in range(sweeps if n_paths > 1 else 0):
        for k in range(n_paths):
            others = pairs[:k] + pairs[k + 1:]
            _, pair = search(others)
            trial = pairs[:k] + [pair] + pairs[k + 1:]
            c = nll(np.concatenate(trial), Y, tx)
            if c < current:
                pairs, current = trial, c
    theta = np.concatenate(pairs)
    costs.append(current)
    return ExtractionResult(theta, profile_alpha(theta, Y, tx), costs, notes)


@dataclass
class EstimateResult:
    """Channel estimate; ``theta`` is [theta_0, tau_0, ...] in (rad, s)."""

    theta: np.ndarray
    alpha: np.ndarray
    sigma2: float
    diagnostics: CostDiagnostics
    method: str
    init_theta: np.ndarray

    def pairs(self) -> np.ndarray:
        return self.theta.reshape(-1, 2)

    def to_dict(self) -> dict:
        d = self.diagnostics
        return {
            "method": self.method,
            "theta_rad": self.pairs()[:, 0].tolist(),
            "tau_s": self.pairs()[:, 1].tolist(),
            "alpha_real": self.alpha.real.tolist(),
            "alpha_imag": self.alpha.imag.tolist(),
            "sigma2": self.sigma2,
            "diagnostics": {
                "final_cost": d.final_cost,
                "initial_cost": d.initial_cost,
                "iterations": d.iterations,
                "converged": d.converged,
                "initial_theta": d.initial_theta.tolist(),
                "refined_theta": d.refined_theta.tolist(),
                "notes": d.notes,
            },
        }


def _initial_step(grid: GridSpec, n_pairs: int) -> np.ndarray:
    return np.tile([grid.theta_step / 4, grid.range_step / 4], n_pairs)


def joint_ml(Y, tx: TxSignalSet, K: int, grid: GridSpec | None = None, *, sweeps: int = 2,
             resolution=SEARCH_RESOLUTION) -> EstimateResult:
    """Joint ML over all 2(K+1) coordinates.

    The starting point is a SAGE-style successive extraction (polished
    minima plus ``sweeps`` re-estimation passes); Nelder-Mead then minimizes
    the compressed joint cost from there.  The extraction searches ``grid``
    with its cells split down to ``resolution`` (angle rad, range m): an
    8 x 8 partition of the full sector is far coarser than the angular
    main lobe of a 20-element array, and weak paths fall between its nodes.
    ``resolution=None`` searches ``grid`` as given.
    """
    grid = GridSpec.uniform() if grid is None else grid
    Y = np.asarray(Y).reshape(tx.n_subcarriers, -1)
    search = grid if resolution is None else grid.subdivided(*resolution)
    init = successive_extraction(Y, tx, search, K + 1, mode="project", polish=True, sweeps=sweeps)

    def cost(x):
        return nll(from_internal(x), Y, tx)

    x, diag = refine(cost, to_internal(init.theta), _initial_step(search, K + 1))
    diag.notes.extend(init.notes)
    theta = from_internal(x)
    alpha = profile_alpha(theta, Y, tx)
    sigma2 = diag.final_cost / Y.size
    diag.initial_theta = init.theta.copy()
    diag.refined_theta = theta.copy()
    return EstimateResult(theta, alpha, sigma2, diag, "joint", init.theta)


def sp_grid(Y, tx: TxSignalSet, K: int, grid: GridSpec | None = None) -> EstimateResult:
    """Single-path estimates at grid resolution (successive extraction only)."""
    grid = GridSpec.uniform() if grid is None else grid
    Y = np.asarray(Y).reshape(tx.n_subcarriers, -1)
    init = successive_extraction(Y, tx, grid, K + 1)
    c = nll(init.theta, Y, tx)
    diag = CostDiagnostics(c, 0, True, init.theta.copy(), init.theta.copy(), c, notes=list(init.notes))
    return EstimateResult(init.theta, profile_alpha(init.theta, Y, tx), c / Y.size, diag, "sp-grid", init.theta)


def sp_refine(Y, tx: TxSignalSet, K: int, grid: GridSpec | None = None) -> EstimateResult:
    """Each extracted pair polished separately on the single-path cost of Y."""
    grid = GridSpec.uniform() if grid is None else grid
    Y = np.asarray(Y).reshape(tx.n_subcarriers, -1)
    init = successive_extraction(Y, tx, grid, K + 1)
    pairs, iters, conv = [], 0, True
    for th, tau in init.theta.reshape(-1, 2):
        x, d = refine(lambda x: nll(from_internal(x), Y, tx), to_internal([th, tau]), _initial_step(grid, 1))
        pairs.append(from_internal(x))
        iters += d.iterations
        conv &= d.converged
    theta = np.concatenate(pairs)
    c = nll(theta, Y, tx)
    diag = CostDiagnostics(c, iters, conv, init.theta.copy(), theta.copy(), nll(init.theta, Y, tx),
                           notes=list(init.notes))
    return EstimateResult(theta, profile_alpha(theta, Y, tx), c / Y.size, diag, "sp-refine", init.theta)


METHODS = {"joint": joint_ml, "sp-grid": sp_grid, "sp-refine": sp_refine}


def estimate(Y, tx: TxSignalSet, K: int, method: str = "joint", grid: GridSpec | None = None) -> EstimateResult:
    try:
        fn = METHODS[method]
    except KeyError:
        raise ValueError(f"unknown method {method!r}; expected one of {sorted(METHODS)}") from None
    return fn(Y, tx, K, grid)
