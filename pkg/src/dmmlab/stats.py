"""Time-to-solution statistics: distribution fits, goodness of fit, relative variance,
power-law scaling and histograms.

Fits are maximum likelihood on uncensored values; censored runs are only counted.
TTS in integration steps or flips is treated as a continuous positive variable.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy import optimize, special

from .errors import DegenerateSample, DomainError, EmptySample, NonConvergence

FAMILIES = ("invgauss", "exponential", "weibull")
WEIBULL_BRACKET = (0.05, 50.0)


@dataclass
class Sample:
    values: np.ndarray
    censored_count: int = 0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float).ravel()
        if np.any(~np.isfinite(self.values)) or np.any(self.values <= 0):
            raise DomainError("sample values must be finite and strictly positive")
        if self.censored_count < 0:
            raise ValueError("censored_count must be nonnegative")

    @classmethod
    def from_outcomes(cls, outcomes: Iterable) -> "Sample":
        """Solved TTS values from RunOutcome-like records; zero-step solves are dropped
        (they carry no duration) and everything unsolved is counted as censored."""
        values, censored = [], 0
        for o in outcomes:
            if not o.solved:
                censored += 1
            elif o.tts_steps > 0:
                values.append(o.tts_steps)
        return cls(np.asarray(values, dtype=float), censored)

    @property
    def n(self) -> int:
        return int(self.values.size)

    @property
    def censoring_rate(self) -> float:
        total = self.n + self.censored_count
        return self.censored_count / total if total else 0.0


def _values(sample) -> tuple[np.ndarray, int]:
    if isinstance(sample, Sample):
        return sample.values, sample.censored_count
    return Sample(sample).values, 0


@dataclass
class DistributionFit:
    family: str
    params: dict[str, float]
    std_errors: dict[str, float]
    mean: float
    variance: float
    ks_statistic: float
    n: int
    censored_count: int = 0
    extra: dict = field(default_factory=dict)

    @property
    def relative_variance(self) -> float:
        return self.variance / self.mean**2

    def cdf(self, t) -> np.ndarray:
        p = self.params
        if self.family == "invgauss":
            return invgauss_cdf(t, p["mu"], p["lambda"])
        if self.family == "exponential":
            return exponential_cdf(t, p["rate"])
        if self.family == "weibull":
            return weibull_cdf(t, p["shape"], p["scale"])
        raise ValueError(f"unknown family {self.family!r}")

    def pdf(self, t) -> np.ndarray:
        p = self.params
        if self.family == "invgauss":
            return invgauss_pdf(t, p["mu"], p["lambda"])
        if self.family == "exponential":
            return p["rate"] * np.exp(-p["rate"] * np.asarray(t, dtype=float))
        if self.family == "weibull":
            return weibull_pdf(t, p["shape"], p["scale"])
        raise ValueError(f"unknown family {self.family!r}")

    def to_dict(self) -> dict:
        return {
            "family": self.family,
            "parameters": dict(self.params),
            "standard_errors": dict(self.std_errors),
            "mean": self.mean,
            "variance": self.variance,
            "relative_variance": self.relative_variance,
            "ks_statistic": self.ks_statistic,
            "n": self.n,
            "censored_count": self.censored_count,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


# -- densities ----------------------------------------------------------------------


def invgauss_pdf(t, mu: float, lam: float):
    """Inverse Gaussian density with mean ``mu`` and shape ``lam``."""
    if not (mu > 0 and lam > 0):
        raise DomainError(f"mu and lambda must be positive, got mu={mu}, lambda={lam}")
    t = np.asarray(t, dtype=float)
    if np.any(t <= 0):
        raise DomainError("inverse Gaussian density is defined for t > 0")
    out = np.sqrt(lam / (2.0 * np.pi * t**3)) * np.exp(-lam * (t - mu) ** 2 / (2.0 * mu**2 * t))
    return out if out.ndim else float(out)


def invgauss_cdf(t, mu: float, lam: float):
    t = np.asarray(t, dtype=float)
    tt = np.where(t > 0, t, 1.0)
    r = np.sqrt(lam / tt)
    a = special.ndtr(r * (tt / mu - 1.0))
    # exp(2 lam / mu) * Phi(-r (t/mu + 1)) evaluated in log space to avoid overflow
    b = np.exp(2.0 * lam / mu + special.log_ndtr(-r * (tt / mu + 1.0)))
    out = np.where(t > 0, np.clip(a + b, 0.0, 1.0), 0.0)
    return out if out.ndim else float(out)


def exponential_cdf(t, rate: float):
    t = np.asarray(t, dtype=float)
    out = np.where(t > 0, -np.expm1(-rate * np.maximum(t, 0.0)), 0.0)
    return out if out.ndim else float(out)


def weibull_pdf(t, shape: float, scale: float):
    t = np.asarray(t, dtype=float)
    z = np.maximum(t, 0.0) / scale
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(t >= 0, shape / scale * z ** (shape - 1.0) * np.exp(-(z**shape)), 0.0)
    return out if out.ndim else float(out)


def weibull_cdf(t, shape: float, scale: float):
    t = np.asarray(t, dtype=float)
    out = np.where(t > 0, -np.expm1(-((np.maximum(t, 0.0) / scale) ** shape)), 0.0)
    return out if out.ndim else float(out)


# -- goodness of fit ------------------------------------------------------------------


def ks_statistic(sample, cdf: Callable) -> float:
    """Sup distance between the empirical CDF of ``sample`` and ``cdf``."""
    x = np.sort(np.asarray(sample.values if isinstance(sample, Sample) else sample, dtype=float))
    n = x.size
    if n == 0:
        raise EmptySample("KS statistic of an empty sample")
    f = np.asarray(cdf(x), dtype=float)
    i = np.arange(1, n + 1)
    return float(max(np.max(i / n - f), np.max(f - (i - 1) / n)))


# -- fits -------------------------------------------------------------------------------


def fit_invgauss(sample) -> DistributionFit:
    x, censored = _values(sample)
    n = x.size
    if n < 3:
        raise DegenerateSample(f"need at least 3 uncensored values, got {n}")
    if np.all(x == x[0]):
        raise DegenerateSample("all values identical; lambda is undefined")
    mu = float(np.mean(x))
    s = float(np.sum(1.0 / x - 1.0 / mu))
    if not s > 0:
        raise DegenerateSample("sample spread too small to estimate lambda")
    lam = n / s
    # observed information is diagonal at the MLE: n*lam/mu^3 and n/(2 lam^2)
    se = {"mu": math.sqrt(mu**3 / (lam * n)), "lambda": lam * math.sqrt(2.0 / n)}
    fit = DistributionFit("invgauss", {"mu": mu, "lambda": lam}, se, mu, mu**3 / lam, 0.0, n, censored)
    fit.ks_statistic = ks_statistic(x, fit.cdf)
    return fit


def invgauss_loglik(x, mu: float, lam: float) -> float:
    x = np.asarray(x, dtype=float)
    return float(np.sum(0.5 * np.log(lam / (2 * np.pi * x**3)) - lam * (x - mu) ** 2 / (2 * mu**2 * x)))


def fit_exponential(sample) -> DistributionFit:
    x, censored = _values(sample)
    n = x.size
    if n < 2:
        raise DegenerateSample(f"need at least 2 values, got {n}")
    mean = float(np.mean(x))
    rate = 1.0 / mean
    fit = DistributionFit("exponential", {"rate": rate}, {"rate": rate / math.sqrt(n)},
                          mean, mean**2, 0.0, n, censored)
    fit.ks_statistic = ks_statistic(x, fit.cdf)
    return fit


def _weibull_profile(k: float, logx: np.ndarray) -> float:
    # d/dk of the profile log-likelihood (scale eliminated), divided by n
    a = k * logx
    a -= a.max()
    w = np.exp(a)
    return 1.0 / k + logx.mean() - float(np.sum(w * logx) / np.sum(w))


def fit_weibull(sample, bracket: tuple[float, float] = WEIBULL_BRACKET) -> DistributionFit:
    x, censored = _values(sample)
    n = x.size
    if n < 3:
        raise DegenerateSample(f"need at least 3 values, got {n}")
    if np.all(x == x[0]):
        raise DegenerateSample("all values identical")
    # rescaling leaves the shape estimate unchanged and keeps x**k finite
    ref = float(np.exp(np.mean(np.log(x))))
    logx = np.log(x / ref)
    lo, hi = bracket
    flo, fhi = _weibull_profile(lo, logx), _weibull_profile(hi, logx)
    if flo * fhi > 0:
        raise NonConvergence(f"Weibull shape root not bracketed in [{lo}, {hi}]")
    k, info = optimize.brentq(_weibull_profile, lo, hi, args=(logx,), xtol=1e-14, rtol=1e-9,
                              maxiter=500, full_output=True, disp=False)
    if not info.converged:
        raise NonConvergence(f"Weibull shape did not converge: {info.flag}")
    z = np.exp(k * logx)
    scale = ref * float(np.mean(z)) ** (1.0 / k)

    # observed information at the MLE (sum of z**k equals n there)
    zz = (x / scale) ** k
    lz = np.log(x / scale)
    h_kk = -n / k**2 - float(np.sum(zz * lz**2))
    h_ll = -n * k**2 / scale**2
    h_kl = (k / scale) * float(np.sum(zz * lz))
    cov = np.linalg.inv(-np.array([[h_kk, h_kl], [h_kl, h_ll]]))
    se = {"shape": math.sqrt(cov[0, 0]), "scale": math.sqrt(cov[1, 1])}

    g1 = special.gamma(1.0 + 1.0 / k)
    g2 = special.gamma(1.0 + 2.0 / k)
    mean = scale * g1
    var = scale**2 * (g2 - g1**2)
    fit = DistributionFit("weibull", {"shape": float(k), "scale": scale}, se, mean, var, 0.0, n, censored)
    fit.ks_statistic = ks_statistic(x, fit.cdf)
    return fit


def fit_family(sample, family: str) -> DistributionFit:
    try:
        return {"invgauss": fit_invgauss, "exponential": fit_exponential, "weibull": fit_weibull}[family](sample)
    except KeyError:
        raise ValueError(f"unknown family {family!r}; choose from {FAMILIES}") from None


# -- relative variance ----------------------------------------------------------------


@dataclass(frozen=True)
class RelativeVariance:
    mean: float
    variance: float
    ratio: float
    ratio_se: float
    n: int


def relative_variance(sample, n_boot: int = 2000, seed: int = 0) -> RelativeVariance:
    """Sample mean, unbiased variance, their ratio var/mean**2 and a bootstrap SE of it."""
    x, _ = _values(sample)
    n = x.size
    if n < 2:
        raise DegenerateSample(f"need at least 2 values, got {n}")
    mean = float(np.mean(x))
    var = float(np.var(x, ddof=1))
    ratio = var / mean**2
    se = 0.0
    if n_boot > 0:
        rng = np.random.Generator(np.random.PCG64(seed))
        ratios = np.empty(n_boot)
        chunk = max(1, 2_000_000 // n)
        for start in range(0, n_boot, chunk):
            b = min(chunk, n_boot - start)
            xb = x[rng.integers(0, n, size=(b, n))]
            mb = xb.mean(axis=1)
            ratios[start:start + b] = xb.var(axis=1, ddof=1) / mb**2
        se = float(np.std(ratios, ddof=1))
    return RelativeVariance(mean, var, ratio, se, n)


# -- power law ------------------------------------------------------------------------


@dataclass
class PowerLawFit:
    theta: float
    theta_err: float
    prefactor: float
    residuals: np.ndarray
    chi2_red: float

    def predict(self, n) -> np.ndarray:
        return self.prefactor * np.asarray(n, dtype=float) ** (-self.theta)


def fit_powerlaw(points: Sequence[tuple]) -> PowerLawFit:
    """Fit y ~ N**(-theta) by (weighted) least squares of log y on log N.

    ``points`` holds ``(N, y)`` or ``(N, y, y_err)`` tuples. With errors the weights
    are ``(y / y_err)**2`` and the covariance is scaled by the reduced chi-square when
    that exceeds 1; without errors the fit is unweighted and the covariance is
    scaled by the residual variance.
    """
    pts = [tuple(p) for p in points]
    if len(pts) < 3:
        raise DegenerateSample(f"need at least 3 points, got {len(pts)}")
    n = np.array([p[0] for p in pts], dtype=float)
    y = np.array([p[1] for p in pts], dtype=float)
    if np.any(n <= 0) or np.any(y <= 0):
        raise DomainError("power-law fit needs N > 0 and y > 0")
    if np.unique(n).size < 2:
        raise DegenerateSample("need at least two distinct N")
    errs = [p[2] if len(p) > 2 else None for p in pts]
    weighted = all(e is not None and e > 0 for e in errs)
    w = (y / np.array(errs, dtype=float)) ** 2 if weighted else np.ones_like(y)

    X = np.column_stack([np.ones_like(n), np.log(n)])
    ly = np.log(y)
    A = X.T @ (w[:, None] * X)
    coef = np.linalg.solve(A, X.T @ (w * ly))
    resid = ly - X @ coef
    dof = len(pts) - 2
    chi2 = float(np.sum(w * resid**2))
    chi2_red = chi2 / dof if dof > 0 else 0.0
    cov = np.linalg.inv(A)
    cov *= max(1.0, chi2_red) if weighted else chi2_red
    return PowerLawFit(
        theta=float(-coef[1]),
        theta_err=float(math.sqrt(max(cov[1, 1], 0.0))),
        prefactor=float(math.exp(coef[0])),
        residuals=resid,
        chi2_red=chi2_red,
    )


# -- histograms -----------------------------------------------------------------------


@dataclass
class Histogram:
    edges: np.ndarray
    counts: np.ndarray

    def to_csv(self) -> str:
        out = io.StringIO()
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["bin_left", "bin_right", "count"])
        for left, right, c in zip(self.edges[:-1], self.edges[1:], self.counts):
            w.writerow([repr(float(left)), repr(float(right)), int(c)])
        return out.getvalue()


def histogram(sample, width: float | None = None, start: float | None = None,
              bins: int | None = None) -> Histogram:
    """Histogram with Freedman-Diaconis bins by default, or fixed ``width`` from ``start``."""
    x = np.asarray(sample.values if isinstance(sample, Sample) else sample, dtype=float)
    if x.size == 0:
        raise EmptySample("histogram of an empty sample")
    if width is not None:
        if not width > 0:
            raise ValueError("bin width must be positive")
        lo = float(x.min()) if start is None else float(start)
        if lo > x.min():
            raise ValueError("start lies above the smallest value")
        nbins = int(math.floor((x.max() - lo) / width)) + 1
        edges = lo + width * np.arange(nbins + 1)
    elif bins is not None:
        edges = np.histogram_bin_edges(x, bins=bins)
    else:
        edges = np.histogram_bin_edges(x, bins="fd")
    counts, edges = np.histogram(x, bins=edges)
    return Histogram(edges, counts)
