"""Climatological statistics over ensemble samples of the slow variables.

The central object is a mergeable accumulator: per-worker accumulators are
filled independently and combined exactly (counts, sums, histograms) or to
floating-point accuracy (central moments, via pairwise combination formulas),
so ensemble statistics are independent of how the work was split.  On top of
it sit density tables, time-lagged autocorrelations with integral
decorrelation times, and threshold-event probabilities with serial-correlation
aware standard errors.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "EventSpec",
    "EnsembleStats",
    "DensityTable",
    "DensityEstimate",
    "AcfResult",
    "EventProbability",
    "SINGLE_EQUILIBRIUM_RANGES",
    "BISTABLE_RANGES",
    "merge",
    "density_estimate",
    "autocorrelation",
    "event_probability",
]

# default histogram geometry: ~20 bins per marginal standard deviation of x
# in the single-equilibrium regime; a wide box covering both basins in the
# bistable regime
SINGLE_EQUILIBRIUM_RANGES = ((0.94, 1.01), (-0.05, 0.35))
BISTABLE_RANGES = ((0.9, 1.1), (-0.2, 1.6))


@dataclass(frozen=True)
class EventSpec:
    """A threshold event on one slow variable, e.g. x <= 0.96."""

    observable: str
    direction: str
    threshold: float

    def __post_init__(self) -> None:
        if self.observable not in ("x", "y"):
            raise ValueError(f"observable must be 'x' or 'y', got {self.observable!r}")
        if self.direction not in ("le", "ge"):
            raise ValueError(f"direction must be 'le' or 'ge', got {self.direction!r}")
        if not math.isfinite(self.threshold):
            raise ValueError("threshold must be finite")

    def indicator(self, samples: np.ndarray) -> np.ndarray:
        col = samples[..., 0] if self.observable == "x" else samples[..., 1]
        return col <= self.threshold if self.direction == "le" else col >= self.threshold

    def describe(self) -> str:
        op = "<=" if self.direction == "le" else ">="
        return f"{self.observable} {op} {self.threshold:g}"


class EnsembleStats:
    """Streaming accumulator of (x, y) sample statistics.

    Tracks count, means, centered second moments, the (x, y) cross moment,
    the third central moment of x, fixed-geometry 1D and 2D histograms with
    overflow counters, and counters for registered threshold events.
    Accumulation is batch-wise: each batch is reduced with a two-pass
    computation and combined into the running state with the pairwise update
    formulas, which keeps long accumulations numerically stable.
    """

    def __init__(
        self,
        x_range: tuple[float, float] = SINGLE_EQUILIBRIUM_RANGES[0],
        y_range: tuple[float, float] = SINGLE_EQUILIBRIUM_RANGES[1],
        bins: tuple[int, int] = (200, 200),
        events: tuple[EventSpec, ...] = (),
    ) -> None:
        self.x_edges = np.linspace(x_range[0], x_range[1], bins[0] + 1)
        self.y_edges = np.linspace(y_range[0], y_range[1], bins[1] + 1)
        self.n = 0
        self.mean_x = 0.0
        self.mean_y = 0.0
        self.m2_x = 0.0
        self.m2_y = 0.0
        self.m3_x = 0.0
        self.cross_xy = 0.0
        self.hist_x = np.zeros(bins[0], dtype=np.int64)
        self.hist_y = np.zeros(bins[1], dtype=np.int64)
        self.hist_xy = np.zeros(bins, dtype=np.int64)
        self.overflow_x = 0
        self.overflow_y = 0
        self.overflow_xy = 0
        self.events: dict[EventSpec, int] = {e: 0 for e in events}

    # -- geometry ----------------------------------------------------------
    def same_geometry(self, other: "EnsembleStats") -> bool:
        return (
            np.array_equal(self.x_edges, other.x_edges)
            and np.array_equal(self.y_edges, other.y_edges)
            and set(self.events) == set(other.events)
        )

    # -- accumulation ------------------------------------------------------
    def accumulate(self, samples: np.ndarray) -> "EnsembleStats":
        """Fold a batch of samples, shape (n, 2), into the accumulator."""
        samples = np.asarray(samples, dtype=float)
        if samples.ndim != 2 or samples.shape[1] != 2:
            raise ValueError("samples must have shape (n, 2)")
        nb = samples.shape[0]
        if nb == 0:
            return self
        x = samples[:, 0]
        y = samples[:, 1]
        mx = float(np.mean(x))
        my = float(np.mean(y))
        cx = x - mx
        cy = y - my
        self._combine_moments(
            nb, mx, my,
            float(np.sum(cx * cx)), float(np.sum(cy * cy)),
            float(np.sum(cx ** 3)), float(np.sum(cx * cy)),
        )
        hx, _ = np.histogram(x, bins=self.x_edges)
        hy, _ = np.histogram(y, bins=self.y_edges)
        hxy, _, _ = np.histogram2d(x, y, bins=(self.x_edges, self.y_edges))
        in_x = (x >= self.x_edges[0]) & (x <= self.x_edges[-1])
        in_y = (y >= self.y_edges[0]) & (y <= self.y_edges[-1])
        self.hist_x += hx
        self.hist_y += hy
        self.hist_xy += hxy.astype(np.int64)
        self.overflow_x += int(nb - in_x.sum())
        self.overflow_y += int(nb - in_y.sum())
        self.overflow_xy += int(nb - (in_x & in_y).sum())
        for event in self.events:
            self.events[event] += int(np.count_nonzero(event.indicator(samples)))
        return self

    def _combine_moments(self, nb, mx, my, m2x, m2y, m3x, cxy) -> None:
        na = self.n
        n = na + nb
        dx = mx - self.mean_x
        dy = my - self.mean_y
        self.m3_x = (
            self.m3_x + m3x
            + dx**3 * na * nb * (na - nb) / n**2
            + 3.0 * dx * (na * m2x - nb * self.m2_x) / n
        )
        self.m2_x += m2x + dx * dx * na * nb / n
        self.m2_y += m2y + dy * dy * na * nb / n
        self.cross_xy += cxy + dx * dy * na * nb / n
        self.mean_x += dx * nb / n
        self.mean_y += dy * nb / n
        self.n = n

    def merge_in(self, other: "EnsembleStats") -> "EnsembleStats":
        """Fold another accumulator into this one (same geometry required)."""
        if not self.same_geometry(other):
            raise ValueError("cannot merge accumulators with different geometry")
        if other.n > 0:
            self._combine_moments(
                other.n, other.mean_x, other.mean_y,
                other.m2_x, other.m2_y, other.m3_x, other.cross_xy,
            )
        self.hist_x += other.hist_x
        self.hist_y += other.hist_y
        self.hist_xy += other.hist_xy
        self.overflow_x += other.overflow_x
        self.overflow_y += other.overflow_y
        self.overflow_xy += other.overflow_xy
        for event, count in other.events.items():
            self.events[event] += count
        return self

    def copy(self) -> "EnsembleStats":
        out = EnsembleStats.__new__(EnsembleStats)
        out.x_edges = self.x_edges.copy()
        out.y_edges = self.y_edges.copy()
        out.n = self.n
        out.mean_x = self.mean_x
        out.mean_y = self.mean_y
        out.m2_x = self.m2_x
        out.m2_y = self.m2_y
        out.m3_x = self.m3_x
        out.cross_xy = self.cross_xy
        out.hist_x = self.hist_x.copy()
        out.hist_y = self.hist_y.copy()
        out.hist_xy = self.hist_xy.copy()
        out.overflow_x = self.overflow_x
        out.overflow_y = self.overflow_y
        out.overflow_xy = self.overflow_xy
        out.events = dict(self.events)
        return out

    # -- derived quantities --------------------------------------------------
    @property
    def var_x(self) -> float:
        return self.m2_x / self.n if self.n > 0 else float("nan")

    @property
    def var_y(self) -> float:
        return self.m2_y / self.n if self.n > 0 else float("nan")

    @property
    def std_x(self) -> float:
        return math.sqrt(max(self.var_x, 0.0))

    @property
    def std_y(self) -> float:
        return math.sqrt(max(self.var_y, 0.0))

    @property
    def corr_xy(self) -> float:
        denom = math.sqrt(self.m2_x * self.m2_y)
        return self.cross_xy / denom if denom > 0 else float("nan")

    @property
    def skewness_x(self) -> float:
        if self.n == 0 or self.m2_x <= 0.0:
            return float("nan")
        return (self.m3_x / self.n) / (self.m2_x / self.n) ** 1.5

    def mode_xy(self) -> tuple[float, float]:
        """Center of the most populated 2D bin."""
        i, j = np.unravel_index(int(np.argmax(self.hist_xy)), self.hist_xy.shape)
        return (
            0.5 * (self.x_edges[i] + self.x_edges[i + 1]),
            0.5 * (self.y_edges[j] + self.y_edges[j + 1]),
        )


def merge(a: EnsembleStats, b: EnsembleStats) -> EnsembleStats:
    """Combined accumulator, exactly equal (counts, sums, histograms) to
    accumulating the concatenated data."""
    return a.copy().merge_in(b)


@dataclass
class DensityTable:
    """Normalized density on a fixed binning; 1D when edges_y is None.

    Densities integrate to the in-range mass fraction (1 - overflow_mass).
    Under the log10 transform, empty bins are marked absent (NaN) rather
    than -inf.
    """

    edges_x: np.ndarray
    density: np.ndarray
    edges_y: np.ndarray | None = None
    log10: bool = False
    overflow_mass: float = 0.0


@dataclass
class DensityEstimate:
    x: DensityTable
    y: DensityTable
    xy: DensityTable


def _density_1d(counts, edges, n, overflow, log10):
    widths = np.diff(edges)
    dens = counts / (n * widths)
    if log10:
        dens = np.where(counts > 0, np.log10(np.where(counts > 0, dens, 1.0)), np.nan)
    return DensityTable(edges_x=edges, density=dens, log10=log10, overflow_mass=overflow / n)


def density_estimate(stats: EnsembleStats, log10: bool = False) -> DensityEstimate:
    """Bin-count densities: counts / (count * bin area)."""
    if stats.n == 0:
        raise ValueError("cannot estimate densities from an empty accumulator")
    n = stats.n
    areas = np.outer(np.diff(stats.x_edges), np.diff(stats.y_edges))
    dens2 = stats.hist_xy / (n * areas)
    if log10:
        dens2 = np.where(stats.hist_xy > 0, np.log10(np.where(stats.hist_xy > 0, dens2, 1.0)), np.nan)
    return DensityEstimate(
        x=_density_1d(stats.hist_x, stats.x_edges, n, stats.overflow_x, log10),
        y=_density_1d(stats.hist_y, stats.y_edges, n, stats.overflow_y, log10),
        xy=DensityTable(
            edges_x=stats.x_edges,
            density=dens2,
            edges_y=stats.y_edges,
            log10=log10,
            overflow_mass=stats.overflow_xy / n,
        ),
    )


@dataclass
class AcfResult:
    """Member-averaged autocorrelation and its integral decorrelation time.

    The decorrelation time is the trapezoid integral of the ACF from lag 0
    to the first zero crossing (or to max_lag if the ACF stays positive);
    truncating at the noise floor avoids accumulating sampling noise.
    """

    lags: np.ndarray
    acf: np.ndarray
    decorrelation_time: float
    integration_cutoff: float
    truncated: bool = False

    @property
    def sample_dt(self) -> float:
        return float(self.lags[1] - self.lags[0])


def autocorrelation(series: np.ndarray, sample_dt: float, max_lag: float) -> AcfResult:
    """Time-lagged autocorrelation of uniformly sampled records.

    ``series`` has shape (members, n) (a single record may be passed 1D);
    stationarity is assumed, so the pooled mean is removed and per-member
    lagged products (unbiased per-lag normalization) are averaged across
    members, then normalized to 1 at lag zero.
    """
    series = np.atleast_2d(np.asarray(series, dtype=float))
    n = series.shape[1]
    if n < 2:
        raise ValueError("records too short for autocorrelation")
    n_lags = int(math.floor(max_lag / sample_dt + 1e-9))
    truncated = False
    if n_lags >= n:
        n_lags = n - 1
        truncated = True
    centered = series - series.mean()
    size = 1
    while size < 2 * n:
        size *= 2
    spec = np.fft.rfft(centered, size, axis=1)
    corr = np.fft.irfft(spec * np.conj(spec), size, axis=1)[:, : n_lags + 1]
    pair_counts = n - np.arange(n_lags + 1)
    num = corr.sum(axis=0) / pair_counts
    acf = num / num[0]
    lags = sample_dt * np.arange(n_lags + 1)

    negative = np.nonzero(acf < 0.0)[0]
    if negative.size:
        # integrate through the interpolated zero crossing
        k0 = int(negative[0])
        a, b = acf[k0 - 1], acf[k0]
        frac = a / (a - b)
        tdec = float(np.trapezoid(acf[:k0], dx=sample_dt)) + 0.5 * a * frac * sample_dt
        cutoff = float(lags[k0 - 1] + frac * sample_dt)
    else:
        tdec = float(np.trapezoid(acf, dx=sample_dt))
        cutoff = float(lags[-1])
    return AcfResult(
        lags=lags,
        acf=acf,
        decorrelation_time=max(tdec, 0.0),
        integration_cutoff=cutoff,
        truncated=truncated,
    )


@dataclass(frozen=True)
class EventProbability:
    probability: float
    std_error: float
    count: int
    n: int
    n_eff: float


def event_probability(
    stats: EnsembleStats,
    event: EventSpec,
    acf: AcfResult | None = None,
) -> EventProbability:
    """Frequency of a registered event with a binomial standard error.

    When an ACF is supplied the standard error discounts serial correlation
    through an effective sample size n_eff = n * sample_dt / (2 * t_dec).
    """
    if event not in stats.events:
        raise KeyError(f"event {event.describe()!r} was not registered before accumulation")
    if stats.n == 0:
        raise ValueError("no samples accumulated")
    count = stats.events[event]
    n = stats.n
    p = count / n
    n_eff = float(n)
    if acf is not None and acf.decorrelation_time > 0.0:
        n_eff = min(float(n), max(1.0, n * acf.sample_dt / (2.0 * acf.decorrelation_time)))
    return EventProbability(
        probability=p,
        std_error=math.sqrt(p * (1.0 - p) / n_eff),
        count=count,
        n=n,
        n_eff=n_eff,
    )
