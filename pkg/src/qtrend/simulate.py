"""Synthetic series: three heteroscedastic sine designs and a drifting
baseline with sparse Gaussian peaks.

Every generator is a pure function of its design. Randomness comes from a
PCG64 stream per component (trend, peaks, noise) spawned from one
``SeedSequence``, so changing how many peaks are drawn never shifts the
noise.
"""
from dataclasses import dataclass, field
import math

import numpy as np
from scipy import stats
from scipy.interpolate import BSpline

RACINE_KINDS = ("gaussian", "beta", "mixed_normal")
STREAMS = ("trend", "peaks", "noise")


def streams(seed):
    """Independent generators for the trend, peak and noise components."""
    children = np.random.SeedSequence(seed).spawn(len(STREAMS))
    return {name: np.random.Generator(np.random.PCG64(c)) for name, c in zip(STREAMS, children)}


@dataclass(frozen=True)
class RacineDesign:
    kind: str
    n: int
    seed: int = 0

    def __post_init__(self):
        if self.kind not in RACINE_KINDS:
            raise ValueError(f"kind must be one of {RACINE_KINDS}, got {self.kind!r}")
        if int(self.n) < 10:
            raise ValueError("n must be >= 10")


@dataclass(frozen=True)
class PeaksDesign:
    n: int
    seed: int = 0
    noise_sd: float = 0.25
    peak_prob: float = 0.005
    amp_mean: float = 20.0
    amp_sd: float = 4.0
    bw_range: tuple = (2.0, 12.0)
    spline_df_mean: float | None = None
    coef_rate: float = 1.0
    n_peaks: int | None = None

    def __post_init__(self):
        if int(self.n) < 10:
            raise ValueError("n must be >= 10")
        if not 0.0 < self.peak_prob < 1.0:
            raise ValueError("peak_prob must lie in (0, 1)")
        lo, hi = self.bw_range
        if not 0 < lo <= hi:
            raise ValueError("bandwidth range must be positive and ordered")
        if self.noise_sd < 0 or self.amp_sd < 0 or not self.coef_rate > 0:
            raise ValueError("noise_sd, amp_sd must be >= 0 and coef_rate > 0")
        if self.n_peaks is not None and self.n_peaks < 0:
            raise ValueError("n_peaks must be >= 0")

    @property
    def df_mean(self):
        return self.n / 100.0 if self.spline_df_mean is None else float(self.spline_df_mean)


@dataclass
class SimulatedSeries:
    y: np.ndarray
    trend: np.ndarray
    signal: np.ndarray
    noise: np.ndarray
    quantile_fn: object = field(repr=False)
    meta: dict = field(default_factory=dict)

    def true_quantiles(self, taus):
        """n x J matrix of the true quantiles of y - signal at each level."""
        taus = np.atleast_1d(np.asarray(taus, dtype=float))
        return np.column_stack([self.quantile_fn(t) for t in taus])

    @property
    def n(self):
        return self.y.size


# --------------------------------------------------------------------------
# sine designs

def _mixture_quantile(x, tau, lo=-10.0, hi=10.0, tol=1e-10):
    """q with (1 - x) Phi(q + 1) + x Phi(q - 1) = tau, by vectorised bisection."""
    x = np.asarray(x, dtype=float)
    a = np.full(x.shape, lo)
    b = np.full(x.shape, hi)
    steps = int(math.ceil(math.log2((hi - lo) / tol)))
    for _ in range(steps):
        mid = 0.5 * (a + b)
        below = (1.0 - x) * stats.norm.cdf(mid + 1.0) + x * stats.norm.cdf(mid - 1.0) < tau
        a = np.where(below, mid, a)
        b = np.where(below, b, mid)
    return 0.5 * (a + b)


def racine_quantile(kind, x, tau):
    x = np.asarray(x, dtype=float)
    base = np.sin(2.0 * np.pi * x)
    if kind == "gaussian":
        return base + (1.0 + x ** 2) / 4.0 * stats.norm.ppf(tau)
    if kind == "beta":
        return base + 1.0 - (1.0 - tau) ** (1.0 / (11.0 - 10.0 * x))
    if kind == "mixed_normal":
        return base + _mixture_quantile(x, tau)
    raise ValueError(f"unknown design {kind!r}")


def gen_racine(design):
    n = int(design.n)
    x = np.arange(1, n + 1) / n
    trend = np.sin(2.0 * np.pi * x)
    rng = streams(design.seed)["noise"]
    if design.kind == "gaussian":
        eps = rng.normal(0.0, (1.0 + x ** 2) / 4.0)
    elif design.kind == "beta":
        eps = rng.beta(1.0, 11.0 - 10.0 * x)
    else:
        upper = rng.random(n) < x
        eps = rng.normal(np.where(upper, 1.0, -1.0), 1.0)
    kind = design.kind
    return SimulatedSeries(
        y=trend + eps, trend=trend, signal=np.zeros(n), noise=eps,
        quantile_fn=lambda tau: racine_quantile(kind, x, tau),
        meta={"design": kind, "n": n, "seed": design.seed},
    )


# --------------------------------------------------------------------------
# peaks design

def natural_cubic_basis(n, df):
    """n x df natural cubic spline basis on t = 1..n.

    ``df`` counts every column, intercept included: df - 2 equally spaced
    interior knots, with boundary knots at 1 and n. The cubic B-spline basis
    on those knots is restricted to the subspace with zero second derivative
    at both boundary knots (the null space of the 2 x (df + 2) constraint
    matrix, taken from a complete QR factorisation).
    """
    n, df = int(n), int(df)
    if df < 2:
        raise ValueError("df must be >= 2")
    if df > n / 2:
        raise ValueError(f"df={df} is too large for n={n} (max n/2)")
    lo, hi = 1.0, float(n)
    inner = np.linspace(lo, hi, df)[1:-1]
    knots = np.r_[[lo] * 4, inner, [hi] * 4]
    t = np.arange(1, n + 1, dtype=float)
    nb = knots.size - 4
    basis = BSpline.design_matrix(t, knots, 3).toarray()
    curv = np.empty((2, nb))
    for c in range(nb):
        coef = np.zeros(nb)
        coef[c] = 1.0
        d2 = BSpline(knots, coef, 3).derivative(2)
        curv[0, c] = d2(lo)
        curv[1, c] = d2(hi)
    q, _ = np.linalg.qr(curv.T, mode="complete")
    return basis @ q[:, 2:]


def gaussian_peaks(n, centres, widths, amplitudes):
    t = np.arange(1, n + 1, dtype=float)[:, None]
    c = np.asarray(centres, dtype=float)[None, :]
    b = np.asarray(widths, dtype=float)[None, :]
    a = np.asarray(amplitudes, dtype=float)[None, :]
    if c.size == 0:
        return np.zeros(n)
    return np.sum(a * stats.norm.pdf(t, loc=c, scale=b), axis=1)


def gen_peaks(design):
    n = int(design.n)
    rng = streams(design.seed)
    df = max(2, int(rng["trend"].poisson(design.df_mean)))
    df = min(df, n // 2)
    coefs = rng["trend"].exponential(1.0 / design.coef_rate, size=df)
    trend = natural_cubic_basis(n, df) @ coefs

    pk = rng["peaks"]
    count = int(pk.binomial(n, design.peak_prob)) if design.n_peaks is None else int(design.n_peaks)
    centres = pk.uniform(1.0, n - 1.0, size=count)
    widths = pk.uniform(design.bw_range[0], design.bw_range[1], size=count)
    amps = pk.normal(design.amp_mean, design.amp_sd, size=count)
    signal = gaussian_peaks(n, centres, widths, amps)

    noise = rng["noise"].normal(0.0, 1.0, size=n) * design.noise_sd
    sd = design.noise_sd
    return SimulatedSeries(
        y=trend + signal + noise, trend=trend, signal=signal, noise=noise,
        quantile_fn=lambda tau: trend + sd * stats.norm.ppf(tau),
        meta={"design": "peaks", "n": n, "seed": design.seed, "df": df, "n_peaks": count,
              "centres": centres.tolist(), "widths": widths.tolist(), "amplitudes": amps.tolist()},
    )


def signal_labels(series, level=0.5):
    """True signal indicator: the simulated peak value exceeds ``level``."""
    return (series.signal > level).astype(np.int8)
