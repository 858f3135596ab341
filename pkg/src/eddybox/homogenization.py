"""Averaging and homogenization of the fast eddy subsystem.

With the slow variables (x, y) frozen, the eddy variables Y = (v, T, S) obey
a linear SDE dY = M Y dt + G dW with

    M = -(1/eps) [[1, 0, 0], [2 P^2 x, 1, 0], [2 P^2 y, 0, 1]],
    G = sqrt(2/eps) diag(1, sigma_eps, sigma_eps).

Auxiliary noise of amplitude sigma_eps on the anomaly equations regularizes
the otherwise singular stationary law; the closures below are exact for any
sigma_eps >= 0 and the production models correspond to the limit
sigma_eps -> 0.  This module provides, in closed form,

* the stationary covariance of (v, T, S),
* the mean eddy transport entering the slow drift, (-4 P^2 x, -4 P^2 y),
* the diffusion correction C (integrated symmetrized lagged autocovariance
  of the eddy-flux fluctuations) together with its rank-1 square root A in
  the sigma_eps -> 0 limit,

plus a brute-force Monte Carlo oracle that re-estimates the mean transport
and C by simulating the frozen fast subsystem, against which the closed
forms are validated.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .model import ModelParams

__all__ = [
    "FastStationaryCov",
    "DiffusionCorrection",
    "OracleEstimate",
    "fast_stationary_covariance",
    "fast_system_matrices",
    "mean_eddy_flux",
    "diffusion_correction",
    "sqrt_psd",
    "sample_stationary",
    "oracle_estimate",
]


@dataclass(frozen=True)
class FastStationaryCov:
    """Stationary covariance of (v, T, S) conditioned on frozen (x, y).

    At sigma_eps = 0 the matrix is singular: the anomaly rows are
    proportional (rank 2, or rank 1 at x = y = 0).
    """

    matrix: np.ndarray
    sigma_eps: float


def fast_stationary_covariance(x: float, y: float, p: ModelParams) -> FastStationaryCov:
    """Closed-form stationary covariance of the frozen fast subsystem.

    [[1,        -P^2 x,                -P^2 y          ],
     [-P^2 x,   2 P^4 x^2 + sig^2,     2 P^4 x y       ],
     [-P^2 y,   2 P^4 x y,             2 P^4 y^2 + sig^2]]
    """
    P2 = p.P**2
    s2 = p.sigma_eps**2
    m = np.array(
        [
            [1.0, -P2 * x, -P2 * y],
            [-P2 * x, 2.0 * P2**2 * x * x + s2, 2.0 * P2**2 * x * y],
            [-P2 * y, 2.0 * P2**2 * x * y, 2.0 * P2**2 * y * y + s2],
        ]
    )
    return FastStationaryCov(matrix=m, sigma_eps=p.sigma_eps)


def fast_system_matrices(x: float, y: float, p: ModelParams) -> tuple[np.ndarray, np.ndarray]:
    """Drift and noise matrices (M, G) of the frozen fast subsystem."""
    P2 = p.P**2
    M = -(1.0 / p.eps) * np.array(
        [
            [1.0, 0.0, 0.0],
            [2.0 * P2 * x, 1.0, 0.0],
            [2.0 * P2 * y, 0.0, 1.0],
        ]
    )
    G = math.sqrt(2.0 / p.eps) * np.diag([1.0, p.sigma_eps, p.sigma_eps])
    return M, G


def mean_eddy_flux(x: float | np.ndarray, y: float | np.ndarray, p: ModelParams) -> np.ndarray:
    """Mean of the slow-equation eddy transport (4vT, 4vS) under the
    stationary fast law: (-4 P^2 x, -4 P^2 y), independent of sigma_eps."""
    P2 = p.P**2
    return np.stack(np.broadcast_arrays(-4.0 * P2 * np.asarray(x, dtype=float),
                                        -4.0 * P2 * np.asarray(y, dtype=float)), axis=-1)


@dataclass(frozen=True)
class DiffusionCorrection:
    """Integrated lagged autocovariance C of the eddy-flux fluctuations and
    the rank-1 square root A valid in the sigma_eps -> 0 limit.

    C = [[16 (5 P^4 x^2 + sig^2), 80 P^4 x y],
         [80 P^4 x y, 16 (5 P^4 y^2 + sig^2)]]

    and A = 4 sqrt(5) P^2 [[x, 0], [y, 0]], so A A^T = C exactly at
    sigma_eps = 0 (where C itself is rank 1; the limit is singular).  The
    slow model carries sqrt(eps) * A as its eddy noise.  For general
    sigma_eps use :meth:`general_square_root`.
    """

    C: np.ndarray
    A: np.ndarray
    evaluated_at: tuple[float, float]
    sigma_eps: float

    def general_square_root(self) -> np.ndarray:
        """Symmetric square root of C at the stored sigma_eps (spectral)."""
        return sqrt_psd(self.C)


def diffusion_correction(x: float, y: float, p: ModelParams) -> DiffusionCorrection:
    P2 = p.P**2
    s2 = p.sigma_eps**2
    P4 = P2**2
    C = np.array(
        [
            [16.0 * (5.0 * P4 * x * x + s2), 80.0 * P4 * x * y],
            [80.0 * P4 * x * y, 16.0 * (5.0 * P4 * y * y + s2)],
        ]
    )
    A = 4.0 * math.sqrt(5.0) * P2 * np.array([[x, 0.0], [y, 0.0]])
    return DiffusionCorrection(C=C, A=A, evaluated_at=(float(x), float(y)), sigma_eps=p.sigma_eps)


def sqrt_psd(C: np.ndarray) -> np.ndarray:
    """Symmetric square root of a symmetric positive semi-definite matrix,
    via spectral decomposition with negative eigenvalues clipped to zero."""
    w, V = np.linalg.eigh(np.asarray(C, dtype=float))
    w = np.clip(w, 0.0, None)
    return (V * np.sqrt(w)) @ V.T


def sample_stationary(x: float, y: float, p: ModelParams, n: int, rng) -> np.ndarray:
    """Draw n exact samples of the stationary fast law (handles the singular
    sigma_eps = 0 covariance)."""
    cov = fast_stationary_covariance(x, y, p).matrix
    L = sqrt_psd(cov)
    return rng.standard_normal((n, 3)) @ L.T


@dataclass
class OracleEstimate:
    """Monte Carlo estimates of the mean eddy transport and of C.

    Standard errors are across-trajectory scatter.  ``stationarity_flag`` is
    set when the flux mean drifts between the first and second half of the
    records by more than five combined standard errors, which would indicate
    the sampler failed to start in the stationary law.
    """

    mean_flux_hat: np.ndarray
    C_hat: np.ndarray
    mean_flux_se: np.ndarray
    C_se: np.ndarray
    n_samples: int
    lag_horizon: float
    dt_fast: float
    save_every: int
    stationarity_flag: bool
    stationarity_z: np.ndarray
    initial_states: np.ndarray
    final_states: np.ndarray

    @property
    def lag_horizon_over_eps(self) -> float:
        return self._lag_over_eps

    _lag_over_eps: float = 0.0


def oracle_estimate(
    x: float,
    y: float,
    p: ModelParams,
    n_trajectories: int = 10_000,
    lag_horizon: float | None = None,
    dt_fast: float | None = None,
    rng_seed: int = 0,
    *,
    save_every: int | None = None,
    n_workers: int | None = None,
) -> OracleEstimate:
    """Estimate the mean eddy transport and the diffusion correction C by
    direct simulation of the frozen fast subsystem.

    Each trajectory starts from an exact stationary draw (no burn-in bias),
    is advanced by Euler-Maruyama with step ``dt_fast``, and records the
    flux fluctuation f = (4vT + 4 P^2 x, 4vS + 4 P^2 y) on a save grid that
    doubles as the lag grid.  C is the symmetrized lagged autocovariance of
    f integrated over lags up to ``lag_horizon`` by the trapezoid rule
    (covariances decay like exp(-2 tau / eps), so a horizon of tens of eps
    makes the truncation error negligible).  Records are two lag horizons
    long; lagged products pool over the first horizon of time origins.

    Trajectories are distributed across ``n_workers`` threads; every
    trajectory draws from its own index-derived stream and writes its row by
    index, so results are identical for any worker count.  sigma_eps > 0 is
    recommended: it regularizes the stationary law the trajectories start
    from.
    """
    eps = p.eps
    if lag_horizon is None:
        lag_horizon = 30.0 * eps
    if dt_fast is None:
        dt_fast = eps / 200.0
    if n_trajectories < 2:
        raise ValueError("need at least 2 trajectories for standard errors")
    if lag_horizon < 20.0 * eps:
        raise ValueError("lag_horizon must be at least 20*eps")
    if dt_fast > eps / 50.0:
        raise ValueError("dt_fast must be at most eps/50")
    if save_every is None:
        save_every = max(1, round((eps / 10.0) / dt_fast))
    n_lags = max(2, round(lag_horizon / (save_every * dt_fast)))
    n_steps = 2 * n_lags * save_every
    n_save = n_steps // save_every + 1

    cov = fast_stationary_covariance(x, y, p).matrix
    L = sqrt_psd(cov)
    P2 = p.P**2

    per = np.empty((n_trajectories, 9))
    initial = np.empty((n_trajectories, 3))
    final = np.empty((n_trajectories, 3))

    def run_block(j_lo: int, j_hi: int) -> None:
        # each trajectory owns an independent stream derived from its index,
        # so blocks can run on any worker and results land by index
        f_buf = np.empty((n_save, 2))
        out = np.empty(9)
        for j in range(j_lo, j_hi):
            rng = np.random.default_rng(np.random.SeedSequence(rng_seed, spawn_key=(2, j)))
            y0 = L @ rng.standard_normal(3)
            initial[j] = y0
            dW = rng.standard_normal((n_steps, 3))
            _kernels.fast_traj_stats(
                y0, dW, dt_fast, eps, P2, float(x), float(y), p.sigma_eps,
                save_every, n_lags, f_buf, out,
            )
            final[j] = y0
            per[j] = out

    if n_workers is None:
        n_workers = min(4, os.cpu_count() or 1)
    if n_workers <= 1 or n_trajectories < 2 * n_workers:
        run_block(0, n_trajectories)
    else:
        bounds = np.linspace(0, n_trajectories, n_workers + 1).astype(int)
        with ThreadPoolExecutor(max_workers=n_workers) as pool:
            futures = [pool.submit(run_block, bounds[k], bounds[k + 1])
                       for k in range(n_workers)]
            for fut in futures:
                fut.result()

    sq = math.sqrt(n_trajectories)
    mean_flux_hat = per[:, 0:2].mean(axis=0)
    mean_flux_se = per[:, 0:2].std(axis=0, ddof=1) / sq
    c_means = per[:, 2:5].mean(axis=0)
    c_ses = per[:, 2:5].std(axis=0, ddof=1) / sq
    C_hat = np.array([[c_means[0], c_means[1]], [c_means[1], c_means[2]]])
    C_se = np.array([[c_ses[0], c_ses[1]], [c_ses[1], c_ses[2]]])

    # first-half vs second-half drift of the flux mean, in combined SEs
    z = np.empty(2)
    for comp, (a, b) in enumerate(((5, 6), (7, 8))):
        d = per[:, a] - per[:, b]
        se = d.std(ddof=1) / sq
        z[comp] = d.mean() / se if se > 0 else 0.0

    est = OracleEstimate(
        mean_flux_hat=mean_flux_hat,
        C_hat=C_hat,
        mean_flux_se=mean_flux_se,
        C_se=C_se,
        n_samples=n_trajectories,
        lag_horizon=n_lags * save_every * dt_fast,
        dt_fast=dt_fast,
        save_every=save_every,
        stationarity_flag=bool(np.any(np.abs(z) > 5.0)),
        stationarity_z=z,
        initial_states=initial,
        final_states=final,
    )
    est._lag_over_eps = n_lags * save_every * dt_fast / eps
    return est
