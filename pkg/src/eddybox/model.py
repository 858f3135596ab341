"""Model definitions for a slow-fast stochastic two-box ocean model.

The slow variables are the nondimensional temperature difference ``x`` and
salinity difference ``y`` between an equatorial and a polar ocean box.  Heat
and salt are exchanged by linear diffusion, by an advective overturning
circulation whose rate is proportional to the squared density difference
``P_a (x - y)^2``, and by fast ocean eddies.  The eddy velocity ``v`` is an
Ornstein-Uhlenbeck process with correlation time ``eps``, and the eddy
temperature and salinity anomalies ``T``, ``S`` relax toward values set by
transport of the large-scale gradients, giving quadratic product terms
``4 v T`` and ``4 v S`` in the slow equations.  In nondimensional form:

    dx = [ -(x - 1)/eps_T - (delta + P_a (x-y)^2) x + 4 v T ] dt
         + sigma_x / sqrt(eps_T) dW_x
    dy = [ 1 - (delta + P_a (x-y)^2) y + 4 v S ] dt + sigma_y dW_y
    dv = -(v/eps) dt + sqrt(2/eps) dW_v
    dT = -(T + 2 P^2 v x)/eps dt
    dS = -(S + 2 P^2 v y)/eps dt

with ``P = sqrt(eps) P_e`` and ``delta = 1`` in the mean-diffusion regime.
Setting ``delta = 0`` (``mean_diffusion=False``) drops the linear diffusive
exchange, treating box diffusion as entirely eddy-driven; this restores
bistability of the slow dynamics at realistic eddy strengths.

Two reduced two-dimensional variants approximate the slow dynamics in the
limit of fast eddies:

* ``averaged``: the eddy transport terms are replaced by their means under
  the stationary law of the frozen fast subsystem, ``(-4 P^2 x, -4 P^2 y)``.
* ``gaussian``: the averaged drift plus a shared multiplicative noise column
  ``4 sqrt(5 eps) P^2 (x, y) dW_hat`` modeling fluctuations of the eddy flux
  about its mean (an Ito SDE).

This module defines parameters, variants, drift/diffusion/Jacobian
evaluation, equilibrium location, bifurcation scanning in the eddy strength
``P``, and a sampled check of the dissipativity inequality used to argue
ergodicity.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace

import numpy as np

__all__ = [
    "VariantKind",
    "ModelVariant",
    "ModelParams",
    "DimensionalScales",
    "Stability",
    "Equilibrium",
    "BifurcationResult",
    "LyapunovReport",
    "standard_params",
    "make_variant",
    "drift",
    "diffusion",
    "drift_jacobian",
    "slow_drift",
    "slow_drift_jacobian",
    "find_equilibria",
    "bifurcation_scan",
    "weighted_norm_sq",
    "drift_inner_product",
    "suggest_alpha",
    "lyapunov_certificate",
]


class VariantKind(enum.Enum):
    """Which closure of the eddy terms a model uses."""

    FULL = "full"
    AVERAGED = "averaged"
    GAUSSIAN = "gaussian"


@dataclass(frozen=True)
class ModelVariant:
    """A model variant: eddy closure plus diffusion regime.

    ``kind`` determines the state dimension (5 for the full model, 2 for the
    reduced ones) and the noise channel layout.  ``mean_diffusion`` selects
    whether the linear diffusive exchange terms ``-x`` and ``-y`` are kept in
    the slow drift.
    """

    kind: VariantKind
    mean_diffusion: bool = True

    @property
    def state_dim(self) -> int:
        return 5 if self.kind is VariantKind.FULL else 2

    @property
    def n_noise_channels(self) -> int:
        # full: (x, y, v); averaged: (x, y); gaussian: (x, y, shared eddy)
        return 2 if self.kind is VariantKind.AVERAGED else 3

    @property
    def is_reduced(self) -> bool:
        return self.kind is not VariantKind.FULL

    @property
    def label(self) -> str:
        suffix = "" if self.mean_diffusion else "-nmd"
        return self.kind.value + suffix


def make_variant(kind: str | VariantKind, mean_diffusion: bool = True) -> ModelVariant:
    if isinstance(kind, str):
        kind = VariantKind(kind.lower())
    return ModelVariant(kind=kind, mean_diffusion=mean_diffusion)


@dataclass(frozen=True)
class ModelParams:
    """Nondimensional model parameters.

    ``P`` is derived, ``P = sqrt(eps) * P_e``, and recomputed on
    construction so it can never drift out of sync with ``eps`` and ``P_e``.
    ``sigma_eps`` is the auxiliary noise amplitude on the eddy anomaly
    equations used only when regularizing the frozen fast subsystem for
    homogenization; the production models carry no noise on ``T`` and ``S``.
    """

    eps_T: float
    eps: float
    P_a: float
    P_e: float
    sigma_x: float
    sigma_y: float
    sigma_eps: float = 0.0
    mean_diffusion: bool = True
    P: float = field(init=False, default=0.0)

    def __post_init__(self) -> None:
        if not (self.eps_T > 0.0 and math.isfinite(self.eps_T)):
            raise ValueError(f"eps_T must be positive and finite, got {self.eps_T}")
        if not (self.eps > 0.0 and math.isfinite(self.eps)):
            raise ValueError(f"eps must be positive and finite, got {self.eps}")
        for name in ("P_a", "P_e", "sigma_x", "sigma_y", "sigma_eps"):
            value = getattr(self, name)
            if not (value >= 0.0 and math.isfinite(value)):
                raise ValueError(f"{name} must be nonnegative and finite, got {value}")
        object.__setattr__(self, "P", math.sqrt(self.eps) * self.P_e)

    def with_P(self, P: float) -> "ModelParams":
        """Same parameters with the eddy strength reset via P_e = P / sqrt(eps)."""
        return replace(self, P_e=P / math.sqrt(self.eps))

    def variant(self, kind: str | VariantKind) -> ModelVariant:
        """Variant of the given kind in this parameter set's diffusion regime."""
        return make_variant(kind, mean_diffusion=self.mean_diffusion)


def standard_params(
    P_e: float = 80.0,
    mean_diffusion: bool = True,
    sigma_eps: float = 0.0,
) -> ModelParams:
    """The reference nondimensional parameter set.

    eps_T = 1/400, eps = 1/5000, P_a = 6, sigma_x = 0.005, sigma_y = 0.15.
    With the default P_e = 80 this gives P^2 = 1.28 (single-equilibrium
    regime for the reduced drift when mean diffusion is kept); the bistable
    regime studied without mean diffusion uses P_e = 32, i.e. P ~ 0.45.
    """
    return ModelParams(
        eps_T=1.0 / 400.0,
        eps=1.0 / 5000.0,
        P_a=6.0,
        P_e=P_e,
        sigma_x=0.005,
        sigma_y=0.15,
        sigma_eps=sigma_eps,
        mean_diffusion=mean_diffusion,
    )


@dataclass(frozen=True)
class DimensionalScales:
    """Dimensional time unit used only when formatting reports."""

    tau_d_years: float = 219.0

    def years(self, t_nondim: float | np.ndarray) -> float | np.ndarray:
        return t_nondim * self.tau_d_years


def _check_regime(variant: ModelVariant, p: ModelParams) -> None:
    if variant.mean_diffusion != p.mean_diffusion:
        raise ValueError(
            f"variant regime (mean_diffusion={variant.mean_diffusion}) does not "
            f"match params (mean_diffusion={p.mean_diffusion})"
        )


def _check_state(variant: ModelVariant, s: np.ndarray) -> np.ndarray:
    s = np.asarray(s, dtype=float)
    if s.shape[-1] != variant.state_dim:
        raise ValueError(
            f"state dimension {s.shape[-1]} does not match variant "
            f"{variant.label} (expected {variant.state_dim})"
        )
    if not np.all(np.isfinite(s)):
        raise ValueError("state contains non-finite components")
    return s


def drift(variant: ModelVariant, s: np.ndarray, p: ModelParams) -> np.ndarray:
    """Deterministic drift b(s) of the given variant.

    Accepts a single state of shape ``(dim,)`` or a batch ``(..., dim)``.
    The averaged and gaussian variants share the same drift; they differ
    only in their diffusion.
    """
    s = _check_state(variant, s)
    _check_regime(variant, p)
    delta = 1.0 if variant.mean_diffusion else 0.0
    x = s[..., 0]
    y = s[..., 1]
    q = delta + p.P_a * (x - y) ** 2
    out = np.empty_like(s)
    if variant.kind is VariantKind.FULL:
        v = s[..., 2]
        T = s[..., 3]
        S = s[..., 4]
        out[..., 0] = -(x - 1.0) / p.eps_T - q * x + 4.0 * v * T
        out[..., 1] = 1.0 - q * y + 4.0 * v * S
        out[..., 2] = -v / p.eps
        out[..., 3] = -(T + 2.0 * p.P**2 * v * x) / p.eps
        out[..., 4] = -(S + 2.0 * p.P**2 * v * y) / p.eps
    else:
        P2 = p.P**2
        out[..., 0] = -(x - 1.0) / p.eps_T - q * x - 4.0 * P2 * x
        out[..., 1] = 1.0 - q * y - 4.0 * P2 * y
    return out


def diffusion(variant: ModelVariant, s: np.ndarray, p: ModelParams) -> np.ndarray:
    """Diffusion matrix Sigma(s), shape ``(..., dim, channels)``.

    Columns are independent Wiener channels.  Full model: additive noise on
    (x, y, v) with amplitudes sigma_x/sqrt(eps_T), sigma_y, sqrt(2/eps); the
    eddy anomaly equations carry no noise.  Averaged model: the two additive
    slow channels.  Gaussian model: the two additive channels plus one shared
    multiplicative column 4*sqrt(5*eps)*P^2*(x, y) driven by a single Wiener
    process.
    """
    s = _check_state(variant, s)
    _check_regime(variant, p)
    dim = variant.state_dim
    nch = variant.n_noise_channels
    out = np.zeros(s.shape[:-1] + (dim, nch))
    cx = p.sigma_x / math.sqrt(p.eps_T)
    out[..., 0, 0] = cx
    out[..., 1, 1] = p.sigma_y
    if variant.kind is VariantKind.FULL:
        out[..., 2, 2] = math.sqrt(2.0 / p.eps)
    elif variant.kind is VariantKind.GAUSSIAN:
        amp = 4.0 * math.sqrt(5.0 * p.eps) * p.P**2
        out[..., 0, 2] = amp * s[..., 0]
        out[..., 1, 2] = amp * s[..., 1]
    return out


def drift_jacobian(variant: ModelVariant, s: np.ndarray, p: ModelParams) -> np.ndarray:
    """Analytic Jacobian of the drift at a single state, shape (dim, dim)."""
    s = _check_state(variant, s)
    if s.ndim != 1:
        raise ValueError("drift_jacobian expects a single state")
    _check_regime(variant, p)
    delta = 1.0 if variant.mean_diffusion else 0.0
    x, y = s[0], s[1]
    q = delta + p.P_a * (x - y) ** 2
    dq = 2.0 * p.P_a * (x - y)
    if variant.kind is VariantKind.FULL:
        v, T, S = s[2], s[3], s[4]
        P2 = p.P**2
        J = np.zeros((5, 5))
        J[0, 0] = -1.0 / p.eps_T - q - dq * x
        J[0, 1] = dq * x
        J[0, 2] = 4.0 * T
        J[0, 3] = 4.0 * v
        J[1, 0] = -dq * y
        J[1, 1] = -q + dq * y
        J[1, 2] = 4.0 * S
        J[1, 4] = 4.0 * v
        J[2, 2] = -1.0 / p.eps
        J[3, 0] = -2.0 * P2 * v / p.eps
        J[3, 2] = -2.0 * P2 * x / p.eps
        J[3, 3] = -1.0 / p.eps
        J[4, 1] = -2.0 * P2 * v / p.eps
        J[4, 2] = -2.0 * P2 * y / p.eps
        J[4, 4] = -1.0 / p.eps
        return J
    P2 = p.P**2
    J = np.zeros((2, 2))
    J[0, 0] = -1.0 / p.eps_T - q - dq * x - 4.0 * P2
    J[0, 1] = dq * x
    J[1, 0] = -dq * y
    J[1, 1] = -q + dq * y - 4.0 * P2
    return J


def slow_drift(variant: ModelVariant, xy: np.ndarray, p: ModelParams) -> np.ndarray:
    """Slow (x, y) drift whose roots are the variant's equilibria.

    For the full model this is the slow part of the drift on the invariant
    slice v = T = S = 0 (where the eddy product terms vanish); for the
    reduced variants it is their two-dimensional drift including the mean
    eddy transport -4 P^2 (x, y).
    """
    _check_regime(variant, p)
    xy = np.asarray(xy, dtype=float)
    delta = 1.0 if variant.mean_diffusion else 0.0
    x = xy[..., 0]
    y = xy[..., 1]
    q = delta + p.P_a * (x - y) ** 2
    e = 0.0 if variant.kind is VariantKind.FULL else 4.0 * p.P**2
    out = np.empty_like(xy)
    out[..., 0] = -(x - 1.0) / p.eps_T - q * x - e * x
    out[..., 1] = 1.0 - q * y - e * y
    return out


def slow_drift_jacobian(variant: ModelVariant, xy: np.ndarray, p: ModelParams) -> np.ndarray:
    """Analytic 2x2 Jacobian of `slow_drift`."""
    _check_regime(variant, p)
    x, y = float(xy[0]), float(xy[1])
    delta = 1.0 if variant.mean_diffusion else 0.0
    q = delta + p.P_a * (x - y) ** 2
    dq = 2.0 * p.P_a * (x - y)
    e = 0.0 if variant.kind is VariantKind.FULL else 4.0 * p.P**2
    return np.array(
        [
            [-1.0 / p.eps_T - q - dq * x - e, dq * x],
            [-dq * y, -q + dq * y - e],
        ]
    )


class Stability(enum.Enum):
    STABLE = "stable"
    SADDLE = "saddle"
    UNSTABLE = "unstable"


@dataclass(frozen=True)
class Equilibrium:
    x: float
    y: float
    stability: Stability

    @property
    def xy(self) -> np.ndarray:
        return np.array([self.x, self.y])


def _classify(eigenvalues: np.ndarray) -> Stability:
    re = eigenvalues.real
    if np.all(re < 0.0):
        return Stability.STABLE
    if np.any(re < 0.0):
        return Stability.SADDLE
    return Stability.UNSTABLE


def equilibrium_stability(variant: ModelVariant, xy: np.ndarray, p: ModelParams) -> Stability:
    """Stability tag from the Jacobian eigenvalues at an equilibrium.

    The full variant is classified from its 5x5 Jacobian on the slice
    v = T = S = 0 (the eddy block contributes eigenvalue -1/eps with
    multiplicity three, so the slow 2x2 block decides).
    """
    if variant.kind is VariantKind.FULL:
        s5 = np.array([xy[0], xy[1], 0.0, 0.0, 0.0])
        J = drift_jacobian(variant, s5, p)
    else:
        J = slow_drift_jacobian(variant, np.asarray(xy, dtype=float), p)
    return _classify(np.linalg.eigvals(J))


def find_equilibria(
    variant: ModelVariant,
    p: ModelParams,
    search_box: tuple[tuple[float, float], tuple[float, float]] = ((0.85, 1.15), (-0.1, 1.6)),
    grid_n: int = 40,
    *,
    newton_tol: float = 1e-12,
    accept_tol: float = 1e-10,
    max_iter: int = 100,
    dedup_tol: float = 1e-6,
) -> list[Equilibrium]:
    """Locate equilibria of the slow drift by multi-start damped Newton.

    Seeds are placed on a uniform grid_n x grid_n grid over `search_box`;
    each seed is iterated with Newton steps damped by backtracking on the
    squared residual.  Non-convergent seeds are discarded, converged roots
    are deduplicated (Euclidean tolerance `dedup_tol`, far below the
    inter-equilibrium spacing) and kept only if they land inside a slightly
    inflated search box.  An empty result is valid output.
    """
    (xlo, xhi), (ylo, yhi) = search_box
    if not (xhi > xlo and yhi > ylo):
        raise ValueError("search box must be nonempty")
    if grid_n < 2:
        raise ValueError("grid_n must be at least 2")
    pad_x = 0.02 * (xhi - xlo)
    pad_y = 0.02 * (yhi - ylo)

    gx, gy = np.meshgrid(np.linspace(xlo, xhi, grid_n), np.linspace(ylo, yhi, grid_n))
    xy = np.column_stack([gx.ravel(), gy.ravel()])
    # all seeds iterate together; the damping line search halves each seed's
    # step until its squared residual decreases
    active = np.ones(len(xy), dtype=bool)
    converged = np.zeros(len(xy), dtype=bool)
    for _ in range(max_iter):
        g = slow_drift(variant, xy, p)
        finite = np.all(np.isfinite(g), axis=1) & np.all(np.isfinite(xy), axis=1)
        active &= finite
        gnorm = np.max(np.abs(g), axis=1, initial=0.0, where=np.isfinite(g))
        done = active & (gnorm < newton_tol)
        converged |= done
        active &= ~done
        if not active.any():
            break
        idx = np.nonzero(active)[0]
        J = _slow_jacobian_batch(variant, xy[idx], p)
        det = J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0]
        ok = np.abs(det) > 1e-300
        g0, g1 = g[idx, 0], g[idx, 1]
        with np.errstate(divide="ignore", invalid="ignore"):
            step = np.column_stack([
                (-g0 * J[:, 1, 1] + g1 * J[:, 0, 1]) / det,
                (g0 * J[:, 1, 0] - g1 * J[:, 0, 0]) / det,
            ])
        active[idx[~ok]] = False
        idx = idx[ok]
        step = step[ok]
        g2 = np.sum(g[idx] ** 2, axis=1)
        lam = np.ones(len(idx))
        accepted = np.zeros(len(idx), dtype=bool)
        for _ in range(50):
            todo = ~accepted
            if not todo.any():
                break
            trial = xy[idx[todo]] + lam[todo, None] * step[todo]
            gt = slow_drift(variant, trial, p)
            better = np.sum(gt**2, axis=1) < g2[todo]
            sub = np.nonzero(todo)[0]
            accepted[sub[better]] = True
            lam[sub[~better]] *= 0.5
        active[idx[~accepted]] = False
        idx = idx[accepted]
        xy[idx] += lam[accepted, None] * step[accepted]

    roots: list[np.ndarray] = []
    candidates = xy[converged]
    g = slow_drift(variant, candidates, p) if len(candidates) else np.empty((0, 2))
    order = np.lexsort((candidates[:, 0], candidates[:, 1])) if len(candidates) else []
    for i in order:
        r = candidates[i]
        if np.max(np.abs(g[i])) > accept_tol:
            continue
        if not (xlo - pad_x <= r[0] <= xhi + pad_x and ylo - pad_y <= r[1] <= yhi + pad_y):
            continue
        if any(np.hypot(*(r - other)) < dedup_tol for other in roots):
            continue
        roots.append(r)
    roots.sort(key=lambda r: (r[1], r[0]))
    return [
        Equilibrium(x=float(r[0]), y=float(r[1]), stability=equilibrium_stability(variant, r, p))
        for r in roots
    ]


def _slow_jacobian_batch(variant: ModelVariant, xy: np.ndarray, p: ModelParams) -> np.ndarray:
    x = xy[:, 0]
    y = xy[:, 1]
    delta = 1.0 if variant.mean_diffusion else 0.0
    q = delta + p.P_a * (x - y) ** 2
    dq = 2.0 * p.P_a * (x - y)
    e = 0.0 if variant.kind is VariantKind.FULL else 4.0 * p.P**2
    J = np.empty((len(xy), 2, 2))
    J[:, 0, 0] = -1.0 / p.eps_T - q - dq * x - e
    J[:, 0, 1] = dq * x
    J[:, 1, 0] = -dq * y
    J[:, 1, 1] = -q + dq * y - e
    return J


@dataclass(frozen=True)
class BifurcationResult:
    """Equilibrium counts along a scan in P plus located critical values."""

    P_values: np.ndarray
    counts: np.ndarray
    critical_values: list[float]
    brackets: list[tuple[float, float]]
    unreliable_intervals: list[tuple[float, float]]


def bifurcation_scan(
    variant: ModelVariant,
    p: ModelParams,
    P_range: tuple[float, float],
    n_steps: int,
    *,
    grid_n: int = 25,
    search_box: tuple[tuple[float, float], tuple[float, float]] = ((0.85, 1.15), (-0.1, 1.6)),
    bisect_tol: float = 1e-4,
) -> BifurcationResult:
    """Count equilibria along a scan in P and bisect count changes.

    The scan varies P (equivalently P_e at fixed eps) holding everything
    else fixed.  Each interval over which the count changes is bisected to
    `bisect_tol`; if a midpoint count ever matches neither endpoint the
    interval is reported as unreliable instead of being bisected further.
    """
    if not (P_range[0] > 0.0 and P_range[1] > P_range[0]):
        raise ValueError("P_range must be positive and increasing")
    cache: dict[float, int] = {}

    def count(P: float) -> int:
        if P not in cache:
            eqs = find_equilibria(
                variant, p.with_P(P), search_box=search_box, grid_n=grid_n
            )
            cache[P] = len(eqs)
        return cache[P]

    P_values = np.linspace(P_range[0], P_range[1], n_steps)
    counts = np.array([count(P) for P in P_values], dtype=int)

    critical: list[float] = []
    brackets: list[tuple[float, float]] = []
    unreliable: list[tuple[float, float]] = []
    for i in range(len(P_values) - 1):
        lo, hi = float(P_values[i]), float(P_values[i + 1])
        clo, chi = counts[i], counts[i + 1]
        if clo == chi:
            continue
        bad = False
        while hi - lo > bisect_tol:
            mid = 0.5 * (lo + hi)
            cmid = count(mid)
            if cmid == clo:
                lo = mid
            elif cmid == chi:
                hi = mid
            else:
                unreliable.append((lo, hi))
                bad = True
                break
        if not bad:
            critical.append(0.5 * (lo + hi))
            brackets.append((lo, hi))
    return BifurcationResult(
        P_values=P_values,
        counts=counts,
        critical_values=critical,
        brackets=brackets,
        unreliable_intervals=unreliable,
    )


def _norm_weights(variant: ModelVariant, p: ModelParams) -> np.ndarray:
    """Weights of the inner-product norm used in the dissipativity check.

    Full model: ||u||^2 = x^2 + y^2 + eps v^2 + (2 eps / P^2)(T^2 + S^2);
    the eddy weights are chosen so the quadratic transport terms cancel in
    <u, F(u)>.  Reduced variants use the plain Euclidean norm on (x, y).
    """
    if variant.kind is VariantKind.FULL:
        if p.P <= 0.0:
            raise ValueError("weighted norm requires P > 0")
        w = np.array([1.0, 1.0, p.eps, 2.0 * p.eps / p.P**2, 2.0 * p.eps / p.P**2])
        return w
    return np.ones(2)


def weighted_norm_sq(variant: ModelVariant, u: np.ndarray, p: ModelParams) -> np.ndarray:
    w = _norm_weights(variant, p)
    u = np.asarray(u, dtype=float)
    return np.sum(w * u * u, axis=-1)


def drift_inner_product(variant: ModelVariant, u: np.ndarray, p: ModelParams) -> np.ndarray:
    """<u, F(u)> in the weighted inner product, batched over leading axes."""
    w = _norm_weights(variant, p)
    F = drift(variant, u, p)
    return np.sum(w * np.asarray(u, dtype=float) * F, axis=-1)


def _sample_ball(
    variant: ModelVariant, p: ModelParams, radius: float, n_samples: int, rng: np.random.Generator
) -> np.ndarray:
    """Points on spheres of weighted norm up to `radius`, directions uniform
    on the weighted-norm unit sphere.

    Radii mix a uniform draw on (0, radius] with a log-uniform draw over six
    decades below radius, so both the O(1) structure of the drift (where its
    inner product peaks) and the large-norm behavior are probed.
    """
    w = _norm_weights(variant, p)
    dim = variant.state_dim
    g = rng.standard_normal((n_samples, dim))
    norms = np.linalg.norm(g, axis=1)
    norms[norms == 0.0] = 1.0
    u = rng.uniform(size=n_samples)
    log_uniform = radius * 10.0 ** (-6.0 * u)
    r = np.where(rng.uniform(size=n_samples) < 0.5, radius * u, log_uniform)
    return (g / norms[:, None]) * r[:, None] / np.sqrt(w)[None, :]


@dataclass(frozen=True)
class LyapunovReport:
    """Sampled margin report for <u, F(u)> <= alpha - beta ||u||^2.

    A nonnegative ``min_margin`` certifies the inequality on the sampled
    set only; this is a falsification tool, not a proof.
    """

    min_margin: float
    argmin: np.ndarray
    alpha: float
    beta: float
    radius: float
    n_samples: int


def suggest_alpha(
    p: ModelParams,
    variant: ModelVariant,
    beta: float,
    radius: float,
    n_samples: int,
    rng_seed: int = 0,
) -> float:
    """Smallest alpha making the sampled inequality hold: the sample max of
    <u, F(u)> + beta ||u||^2 (clipped below at zero so the origin passes).

    Shares its sample stream with :func:`lyapunov_certificate`, so a
    certificate run with the same seed and sizes evaluates the margin on the
    very set the sweep maximized over.
    """
    rng = np.random.default_rng(np.random.SeedSequence(rng_seed, spawn_key=(3, 0)))
    u = _sample_ball(variant, p, radius, n_samples, rng)
    m = drift_inner_product(variant, u, p) + beta * weighted_norm_sq(variant, u, p)
    return float(max(np.max(m), 0.0))


def lyapunov_certificate(
    p: ModelParams,
    variant: ModelVariant,
    alpha: float,
    beta: float,
    radius: float,
    n_samples: int,
    rng_seed: int = 0,
) -> LyapunovReport:
    """Evaluate the dissipativity margin alpha - beta ||u||^2 - <u, F(u)>
    at sampled points and report the minimum and its argmin.

    A negative minimum is a valid (failing) result.
    """
    if not (alpha > 0.0 and beta > 0.0 and radius > 0.0):
        raise ValueError("alpha, beta, radius must be positive")
    rng = np.random.default_rng(np.random.SeedSequence(rng_seed, spawn_key=(3, 0)))
    u = _sample_ball(variant, p, radius, n_samples, rng)
    margin = alpha - beta * weighted_norm_sq(variant, u, p) - drift_inner_product(variant, u, p)
    i = int(np.argmin(margin))
    return LyapunovReport(
        min_margin=float(margin[i]),
        argmin=u[i].copy(),
        alpha=alpha,
        beta=beta,
        radius=radius,
        n_samples=n_samples,
    )
