"""Independent reference implementations used by the test suite.

Everything in this module is deliberately written the slow, obvious way:
closed-form Gaussian scores, O(n^2) direct DFT summation, two-pass textbook
correlations, exhaustive rank counting, central finite differences.  The
production modules must agree with these within stated tolerances but must
never share code with them beyond primitive arithmetic, so that a bug cannot
hide in a common helper.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import DataError, NumericError, ParameterError

__all__ = [
    "GaussianSpec",
    "gaussian_score",
    "perturbed_gaussian_score",
    "ve_perturbed_gaussian_score",
    "kde_score",
    "finite_diff_grad",
    "EquivalenceResult",
    "score_matching_equivalence_check",
    "dft_direct",
    "pearson_direct",
    "spearman_direct",
    "reference_topk_backtest",
]


@dataclass(frozen=True)
class GaussianSpec:
    """Mean and variance of a 1-D Gaussian; variance must be positive."""

    mean: float
    var: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.mean) and math.isfinite(self.var)):
            raise ParameterError("Gaussian parameters must be finite")
        if self.var <= 0.0:
            raise ParameterError(f"variance must be positive, got {self.var}")


def gaussian_score(x: np.ndarray, spec: GaussianSpec) -> np.ndarray:
    """Score d/dx log N(x; mean, var) = -(x - mean) / var, elementwise."""
    x = np.asarray(x, dtype=np.float64)
    return -(x - spec.mean) / spec.var


def perturbed_gaussian_score(
    x: np.ndarray, spec: GaussianSpec, alpha_bar: float
) -> np.ndarray:
    """Score of the variance-preserving corruption of a Gaussian at level alpha_bar.

    If x0 ~ N(mu, v) and x_t = sqrt(ab) x0 + sqrt(1 - ab) eps, the marginal of
    x_t is N(sqrt(ab) mu, ab v + 1 - ab); the score follows in closed form.
    ``alpha_bar`` must lie in (0, 1]; 1 recovers the clean score.
    """
    if not 0.0 < alpha_bar <= 1.0:
        raise ParameterError(f"alpha_bar must lie in (0, 1], got {alpha_bar}")
    x = np.asarray(x, dtype=np.float64)
    mean = math.sqrt(alpha_bar) * spec.mean
    var = alpha_bar * spec.var + (1.0 - alpha_bar)
    return -(x - mean) / var


def ve_perturbed_gaussian_score(
    x: np.ndarray, spec: GaussianSpec, sigma: float
) -> np.ndarray:
    """Score of a Gaussian convolved with N(0, sigma^2) (variance-exploding form).

    The marginal is N(mean, var + sigma^2).  Used as the ground truth for the
    annealed Langevin sampler, whose corruption adds noise without shrinking
    the signal.
    """
    if sigma < 0.0:
        raise ParameterError(f"sigma must be >= 0, got {sigma}")
    x = np.asarray(x, dtype=np.float64)
    return -(x - spec.mean) / (spec.var + sigma * sigma)


def kde_score(
    samples: np.ndarray, x: np.ndarray, bandwidth: float | None = None
) -> np.ndarray:
    """Nonparametric score estimate from samples via a Gaussian KDE.

    score(x) = d/dx log p_h(x) with p_h the kernel density estimate.  The
    default bandwidth is Silverman's rule.  Quadratic in len(samples) *
    len(x); intended for test-scale data only.
    """
    samples = np.asarray(samples, dtype=np.float64).ravel()
    x = np.asarray(x, dtype=np.float64)
    n = samples.size
    if n < 2:
        raise DataError("need at least 2 samples for a KDE score")
    if bandwidth is None:
        std = float(np.std(samples, ddof=1))
        q75, q25 = np.percentile(samples, [75.0, 25.0])
        iqr = float(q75 - q25)
        spread = min(std, iqr / 1.34) if iqr > 0.0 else std
        if spread <= 0.0:
            raise DataError("degenerate sample spread; cannot pick a bandwidth")
        bandwidth = 0.9 * spread * n ** (-0.2)
    if bandwidth <= 0.0:
        raise ParameterError(f"bandwidth must be positive, got {bandwidth}")
    # p(x)   =  mean_i K((x - s_i)/h) / h
    # p'(x)  =  mean_i K'((x - s_i)/h) / h^2,  K'(u) = -u K(u)
    u = (x[..., None] - samples[None, :]) / bandwidth
    k = np.exp(-0.5 * u * u)
    dens = k.sum(axis=-1)
    if np.any(dens <= 0.0):
        raise NumericError("KDE density underflowed to zero at a query point")
    grad = (-u * k).sum(axis=-1) / bandwidth
    return grad / dens


def finite_diff_grad(
    f: Callable[[np.ndarray], float], x: np.ndarray, h: float = 1e-6
) -> np.ndarray:
    """Central-difference gradient of a scalar function, one coordinate at a time."""
    if h <= 0.0:
        raise ParameterError(f"step size must be positive, got {h}")
    x = np.asarray(x, dtype=np.float64)
    flat = x.ravel()
    grad = np.empty_like(flat)
    for i in range(flat.size):
        xp = flat.copy()
        xm = flat.copy()
        xp[i] += h
        xm[i] -= h
        fp = float(f(xp.reshape(x.shape)))
        fm = float(f(xm.reshape(x.shape)))
        if not (math.isfinite(fp) and math.isfinite(fm)):
            raise NumericError(f"function returned non-finite value near coordinate {i}")
        grad[i] = (fp - fm) / (2.0 * h)
    return grad.reshape(x.shape)


@dataclass(frozen=True)
class EquivalenceResult:
    """Monte-Carlo estimates tying the two score-matching objectives together.

    ``explicit`` estimates E[ 1/2 ||s_model - s_true||^2 ]  (needs the true
    score).  ``trace`` estimates E[ s_model' + 1/2 s_model^2 ]  (needs only
    the model).  The two objectives differ by the model-independent constant
    E[ 1/2 s_true^2 ]; ``drift`` is explicit - trace - that constant,
    estimated on the same draws so the difference collapses pathwise, and
    ``drift_se`` is its standard error.  Under integration by parts drift
    should vanish within Monte-Carlo error for any smooth model score.
    """

    explicit: float
    trace: float
    drift: float
    drift_se: float


def score_matching_equivalence_check(
    score_fn: Callable[[np.ndarray], np.ndarray],
    score_deriv_fn: Callable[[np.ndarray], np.ndarray],
    spec: GaussianSpec,
    n_samples: int,
    rng: np.random.Generator,
) -> EquivalenceResult:
    """Estimate both score-matching objectives for a model on Gaussian data.

    ``score_fn`` and ``score_deriv_fn`` evaluate the model score and its
    x-derivative elementwise on a vector of sample points.
    """
    if n_samples < 2:
        raise ParameterError("need at least 2 samples")
    x = spec.mean + math.sqrt(spec.var) * rng.standard_normal(n_samples)
    true_score = -(x - spec.mean) / spec.var
    s = np.asarray(score_fn(x), dtype=np.float64)
    ds = np.asarray(score_deriv_fn(x), dtype=np.float64)
    if s.shape != x.shape or ds.shape != x.shape:
        raise ParameterError("model score functions must be elementwise on the sample vector")
    explicit_terms = 0.5 * (s - true_score) ** 2
    trace_terms = ds + 0.5 * s * s
    # Pathwise: explicit - trace - 1/2 s_true^2 = -s * s_true - s'.
    drift_terms = explicit_terms - trace_terms - 0.5 * true_score * true_score
    drift = float(np.mean(drift_terms))
    drift_se = float(np.std(drift_terms, ddof=1) / math.sqrt(n_samples))
    return EquivalenceResult(
        explicit=float(np.mean(explicit_terms)),
        trace=float(np.mean(trace_terms)),
        drift=drift,
        drift_se=drift_se,
    )


def dft_direct(x: np.ndarray) -> np.ndarray:
    """Discrete Fourier transform by direct summation, X_k = sum_j x_j e^{-2 pi i jk/n}."""
    x = np.asarray(x, dtype=np.complex128)
    if x.ndim != 1 or x.size == 0:
        raise ParameterError("expected a non-empty 1-D array")
    n = x.size
    out = np.empty(n, dtype=np.complex128)
    j = np.arange(n)
    for k in range(n):
        out[k] = np.sum(x * np.exp(-2j * np.pi * j * k / n))
    return out


def pearson_direct(p: Sequence[float], r: Sequence[float]) -> float:
    """Two-pass Pearson correlation straight from the definition."""
    p = np.asarray(p, dtype=np.float64)
    r = np.asarray(r, dtype=np.float64)
    if p.shape != r.shape or p.ndim != 1 or p.size < 2:
        raise ParameterError("need two equal-length vectors with at least 2 entries")
    pm = p.mean()
    rm = r.mean()
    num = float(np.sum((p - pm) * (r - rm)))
    den = math.sqrt(float(np.sum((p - pm) ** 2)) * float(np.sum((r - rm) ** 2)))
    if den == 0.0:
        raise DataError("correlation undefined for a constant vector")
    return num / den


def _exhaustive_average_ranks(v: np.ndarray) -> np.ndarray:
    """1-based average ranks by O(n^2) counting: rank_i = #smaller + (#equal + 1)/2."""
    n = v.size
    ranks = np.empty(n, dtype=np.float64)
    for i in range(n):
        smaller = int(np.sum(v < v[i]))
        equal = int(np.sum(v == v[i]))
        ranks[i] = smaller + (equal + 1) / 2.0
    return ranks


def spearman_direct(p: Sequence[float], r: Sequence[float]) -> float:
    """Spearman correlation: Pearson applied to exhaustively counted average ranks."""
    p = np.asarray(p, dtype=np.float64)
    r = np.asarray(r, dtype=np.float64)
    if p.shape != r.shape or p.ndim != 1 or p.size < 2:
        raise ParameterError("need two equal-length vectors with at least 2 entries")
    return pearson_direct(_exhaustive_average_ranks(p), _exhaustive_average_ranks(r))


def reference_topk_backtest(
    dates: Sequence[str],
    tickers: Sequence[str],
    scores: np.ndarray,
    returns: np.ndarray,
    k: int,
) -> tuple[list[list[str]], list[float], float]:
    """Brute-force top-k rebalancing backtest used to cross-check the fast one.

    Each date: sort tickers by (score descending, ticker ascending), hold the
    first min(k, universe) names equal-weighted, earn their mean realized
    return.  Returns (holdings per date, daily returns, final compounded
    return).
    """
    if k < 1:
        raise ParameterError(f"k must be >= 1, got {k}")
    if len(tickers) == 0:
        raise DataError("empty universe")
    holdings: list[list[str]] = []
    daily: list[float] = []
    for d in range(len(dates)):
        order = sorted(range(len(tickers)), key=lambda i: (-scores[d, i], tickers[i]))
        held = [tickers[i] for i in order[: min(k, len(tickers))]]
        holdings.append(held)
        idx = [tickers.index(t) for t in held]
        daily.append(float(np.mean([returns[d, i] for i in idx])))
    cumulative = 1.0
    for x in daily:
        cumulative *= 1.0 + x
    return holdings, daily, cumulative - 1.0
