"""Level-change modelling: differencing, maximum-likelihood fits of the
step distribution, family selection, and steady-state burst statistics.

Fits operate on ``(values, weights)`` pairs; quantized data are collapsed to
unique values with multiplicities first, which keeps likelihood evaluation
cheap on long traces without changing the estimate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize, special

from .dependence import chi2_sf
from .exceptions import DegenerateSeriesError, FitError

LOG_NU_BOUNDS = (math.log(0.05), math.log(1e6))
FAMILIES = ("gaussian", "laplace", "logistic", "cauchy", "t-location-scale")
DEFAULT_BURST_THRESHOLDS = (0.0, 1.0, 2.0, 3.0)


def difference(series):
    """d(t) = n(t) - n(t-1)."""
    x = np.asarray(series, dtype=float)
    if x.ndim != 1:
        raise ValueError("series must be one-dimensional")
    if len(x) < 2:
        raise ValueError("differencing needs at least two samples")
    return np.diff(x)


def undifference(d, first):
    """Inverse of :func:`difference` given the anchor value ``first``."""
    return np.concatenate(([float(first)], float(first) + np.cumsum(d)))


def _compress(data, weights=None):
    x = np.asarray(data, dtype=float).ravel()
    if weights is not None:
        w = np.asarray(weights, dtype=float).ravel()
        if w.shape != x.shape:
            raise ValueError("weights must match data")
        return x, w
    values, counts = np.unique(x, return_counts=True)
    if len(values) < 0.5 * len(x):
        return values, counts.astype(float)
    return x, np.ones_like(x)


def _check_fit_input(x, w, min_samples=100):
    if not np.all(np.isfinite(x)):
        raise ValueError("data contain non-finite values")
    n = w.sum()
    if n < min_samples:
        raise ValueError(f"need at least {min_samples} samples, got {n:g}")
    if np.ptp(x[w > 0]) == 0:
        raise DegenerateSeriesError("data have zero spread")
    return n


def _weighted_quantile(x, w, p):
    order = np.argsort(x, kind="stable")
    xs, cw = x[order], np.cumsum(w[order])
    return float(xs[np.searchsorted(cw, p * cw[-1])])


def _robust_start(x, w):
    med = _weighted_quantile(x, w, 0.5)
    mad = 1.4826 * _weighted_quantile(np.abs(x - med), w, 0.5)
    if not mad > 0:
        iqr = _weighted_quantile(x, w, 0.75) - _weighted_quantile(x, w, 0.25)
        mad = iqr / 1.349 if iqr > 0 else math.sqrt(np.average((x - med) ** 2, weights=w))
    return med, mad


def _simplex_minimize(fun, x0, step, max_restarts=4, maxiter=4000, xatol=1e-8, fatol=1e-12):
    """Nelder-Mead with restarts from the incumbent until no improvement."""
    x0 = np.asarray(x0, dtype=float)
    best_x, best_f = x0, fun(x0)
    converged = False
    for _ in range(max_restarts + 1):
        simplex = np.vstack([best_x] + [best_x + s * e for s, e in zip(step, np.eye(len(x0)))])
        res = optimize.minimize(fun, best_x, method="Nelder-Mead",
                                options={"initial_simplex": simplex, "xatol": xatol,
                                         "fatol": fatol, "maxiter": maxiter,
                                         "maxfev": 2 * maxiter})
        improved = best_f - res.fun
        if res.fun <= best_f:
            best_x, best_f = res.x, res.fun
        converged = bool(res.success)
        if converged and improved <= fatol:
            break
        step = np.maximum(np.abs(step) * 0.1, 1e-4)
    if not converged:
        raise FitError("simplex search did not converge", best=best_x)
    return best_x, best_f


# -- t location-scale ----------------------------------------------------------

@dataclass(frozen=True)
class TLocationScale:
    """Student-t with location ``mu``, scale ``sigma`` and ``nu`` degrees of freedom."""

    mu: float
    sigma: float
    nu: float
    loglik: float = float("nan")
    n: int = 0

    def __post_init__(self):
        if not self.sigma >= 0 or not self.nu > 0:
            raise ValueError("need sigma >= 0 and nu > 0")

    def logpdf(self, x):
        if not self.sigma > 0:
            raise ValueError("density undefined for sigma = 0")
        return t_logpdf(np.asarray(x, dtype=float), self.mu, self.sigma, self.nu)

    def pdf(self, x):
        return np.exp(self.logpdf(x))

    def cdf(self, x):
        return special.stdtr(self.nu, (np.asarray(x, dtype=float) - self.mu) / self.sigma)

    def ppf(self, q):
        return self.mu + self.sigma * special.stdtrit(self.nu, np.asarray(q, dtype=float))

    def to_dict(self):
        return {"family": "t-location-scale", "mu": self.mu, "sigma": self.sigma,
                "nu": self.nu, "loglik": self.loglik, "n": self.n}


def t_logpdf(x, mu, sigma, nu):
    z = (x - mu) / sigma
    return (special.gammaln((nu + 1) / 2) - special.gammaln(nu / 2)
            - 0.5 * math.log(nu * math.pi) - math.log(sigma)
            - (nu + 1) / 2 * np.log1p(z * z / nu))


def t_loglik(params, x, w=None):
    mu, sigma, nu = params
    lp = t_logpdf(np.asarray(x, dtype=float), mu, sigma, nu)
    return float(lp.sum() if w is None else np.dot(w, lp))


def t_loglik_grad(params, x, w=None):
    """Analytic gradient of the total log-likelihood in (mu, sigma, nu)."""
    mu, sigma, nu = params
    x = np.asarray(x, dtype=float)
    w = np.ones_like(x) if w is None else np.asarray(w, dtype=float)
    n = w.sum()
    z = (x - mu) / sigma
    u = 1.0 + z * z / nu
    r = (nu + 1) * z / (nu * u)
    d_mu = np.dot(w, r) / sigma
    d_sigma = -n / sigma + np.dot(w, r * z) / sigma
    d_nu = (n * 0.5 * (special.digamma((nu + 1) / 2) - special.digamma(nu / 2) - 1.0 / nu)
            + np.dot(w, -0.5 * np.log(u) + (nu + 1) * z * z / (2 * nu * nu * u)))
    return np.array([d_mu, d_sigma, d_nu])


def fit_t_location_scale(data, weights=None) -> TLocationScale:
    """Maximum-likelihood t location-scale fit.

    Optimizes over (mu, log sigma, log nu) with a restarted simplex, started
    from the median, 1.4826 * MAD and nu = 4. Degrees of freedom are kept in
    [0.05, 1e6]; near-Gaussian data end up at large nu.
    """
    x, w = _compress(data, weights)
    n = _check_fit_input(x, w)
    med, scale = _robust_start(x, w)
    lo, hi = LOG_NU_BOUNDS

    def nll(theta):
        mu, ls, ln = theta
        ln = min(max(ln, lo), hi)
        return -t_loglik((mu, math.exp(ls), math.exp(ln)), x, w) / n

    theta, f = _simplex_minimize(nll, [med, math.log(scale), math.log(4.0)],
                                 step=np.array([0.1 * scale, 0.1, 0.3]))
    nu = math.exp(min(max(theta[2], lo), hi))
    return TLocationScale(float(theta[0]), math.exp(theta[1]), nu,
                          loglik=float(-f * n), n=int(round(n)))


# -- other candidate families --------------------------------------------------

@dataclass
class FamilyFit:
    family: str
    params: dict
    loglik: float
    n_params: int

    @property
    def aic(self):
        return 2 * self.n_params - 2 * self.loglik


def _fit_gaussian(x, w, n):
    mu = np.average(x, weights=w)
    sigma = math.sqrt(np.average((x - mu) ** 2, weights=w))
    ll = -0.5 * n * (math.log(2 * math.pi * sigma * sigma) + 1.0)
    return FamilyFit("gaussian", {"mu": float(mu), "sigma": sigma}, ll, 2)


def _fit_laplace(x, w, n):
    mu = _weighted_quantile(x, w, 0.5)
    b = float(np.average(np.abs(x - mu), weights=w))
    ll = -n * (math.log(2 * b) + 1.0)
    return FamilyFit("laplace", {"mu": mu, "b": b}, ll, 2)


def _logistic_ll(x, w, mu, s):
    z = (x - mu) / s
    return float(np.dot(w, -z - math.log(s) - 2.0 * np.logaddexp(0.0, -z)))


def _cauchy_ll(x, w, mu, g):
    z = (x - mu) / g
    return float(np.dot(w, -math.log(math.pi * g) - np.log1p(z * z)))


def _fit_two_param(name, llfun, x, w, n, mu0, s0):
    def nll(theta):
        return -llfun(x, w, theta[0], math.exp(theta[1])) / n

    theta, f = _simplex_minimize(nll, [mu0, math.log(s0)], step=np.array([0.1 * s0, 0.1]))
    key = "s" if name == "logistic" else "gamma"
    return FamilyFit(name, {"mu": float(theta[0]), key: math.exp(theta[1])}, -f * n, 2)


def _fit_family(name, x, w, n):
    if name == "gaussian":
        return _fit_gaussian(x, w, n)
    if name == "laplace":
        return _fit_laplace(x, w, n)
    med, scale = _robust_start(x, w)
    if name == "logistic":
        return _fit_two_param(name, _logistic_ll, x, w, n, med, scale * math.sqrt(3) / math.pi)
    if name == "cauchy":
        return _fit_two_param(name, _cauchy_ll, x, w, n, med, scale / 1.4826)
    if name == "t-location-scale":
        t = fit_t_location_scale(x, w)
        return FamilyFit(name, {"mu": t.mu, "sigma": t.sigma, "nu": t.nu}, t.loglik, 3)
    raise ValueError(f"unknown family {name!r}")


def family_logpdf(family, params, x):
    """Log density of a fitted candidate family at ``x``."""
    x = np.asarray(x, dtype=float)
    mu = params["mu"]
    if family == "gaussian":
        z = (x - mu) / params["sigma"]
        return -0.5 * z * z - math.log(params["sigma"] * math.sqrt(2 * math.pi))
    if family == "laplace":
        return -np.abs(x - mu) / params["b"] - math.log(2 * params["b"])
    if family == "logistic":
        s = params["s"]
        z = (x - mu) / s
        return -z - math.log(s) - 2.0 * np.logaddexp(0.0, -z)
    if family == "cauchy":
        g = params["gamma"]
        z = (x - mu) / g
        return -math.log(math.pi * g) - np.log1p(z * z)
    if family == "t-location-scale":
        return t_logpdf(x, mu, params["sigma"], params["nu"])
    raise ValueError(f"unknown family {family!r}")


@dataclass
class ModelSelection:
    """Per-family MLE fits; the winner has the largest log-likelihood.

    ``near_tie`` is set when the runner-up is within ``tie_tolerance``
    (relative) of the winner's log-likelihood.
    """

    candidates: list
    winner: str
    near_tie: bool = False
    failures: dict = field(default_factory=dict)

    def get(self, family):
        for c in self.candidates:
            if c.family == family:
                return c
        raise KeyError(family)

    def to_dict(self):
        return {
            "winner": self.winner,
            "near_tie": self.near_tie,
            "candidates": [{"family": c.family, "params": c.params, "loglik": c.loglik,
                            "aic": c.aic} for c in self.candidates],
            "failures": self.failures,
        }


def best_fit(data, candidates=FAMILIES, weights=None, tie_tolerance=1e-3) -> ModelSelection:
    """Fit every candidate family by maximum likelihood and pick the best."""
    if not candidates:
        raise ValueError("candidate set is empty")
    x, w = _compress(data, weights)
    n = _check_fit_input(x, w)
    fits, failures = [], {}
    for name in candidates:
        try:
            fits.append(_fit_family(name, x, w, n))
        except (FitError, ValueError, FloatingPointError) as exc:
            failures[name] = str(exc)
    if not fits:
        raise FitError(f"every candidate failed: {failures}")
    ranked = sorted(fits, key=lambda c: -c.loglik)
    tie = (len(ranked) > 1 and
           abs(ranked[0].loglik - ranked[1].loglik) <= tie_tolerance * abs(ranked[0].loglik))
    return ModelSelection(fits, ranked[0].family, bool(tie), failures)


# -- steady-state bursts -------------------------------------------------------

def _steady_flags(series, threshold):
    d = difference(series)
    return np.abs(d) <= threshold + 1e-7 * max(1.0, threshold)


def _run_lengths(flags):
    padded = np.concatenate(([0], flags.astype(np.int8), [0]))
    edges = np.diff(padded)
    return np.flatnonzero(edges == -1) - np.flatnonzero(edges == 1)


@dataclass
class BurstHistogram:
    """Run-length histogram of steps with ``|d(t)| <= threshold``.

    ``censored`` is set when a run touches either end of a series, so its
    true length is unknown.
    """

    threshold: float
    counts: dict
    n_steps: int
    censored: bool = False

    @property
    def total_runs(self):
        return int(sum(self.counts.values()))

    @property
    def steady_steps(self):
        return int(sum(k * v for k, v in self.counts.items()))

    def lengths(self):
        return np.array(sorted(self.counts), dtype=np.int64)

    def merge(self, other):
        if other.threshold != self.threshold:
            raise ValueError("thresholds differ")
        counts = dict(self.counts)
        for k, v in other.counts.items():
            counts[k] = counts.get(k, 0) + v
        return BurstHistogram(self.threshold, dict(sorted(counts.items())),
                              self.n_steps + other.n_steps, self.censored or other.censored)

    def survival(self, max_len=None):
        """(lengths 1..max_len, number of runs of at least that length)."""
        if not self.counts:
            return np.array([], int), np.array([], int)
        top = max(self.counts) if max_len is None else max_len
        ks = np.arange(1, top + 1)
        hist = np.zeros(max(top, max(self.counts)) + 2, dtype=np.int64)
        for k, v in self.counts.items():
            hist[k] = v
        surv = np.cumsum(hist[::-1])[::-1]
        return ks, surv[1:top + 1]


def burst_lengths(series, threshold: float = 0.0) -> BurstHistogram:
    """Histogram of maximal runs of consecutive steps with ``|d(t)| <= threshold``."""
    flags = _steady_flags(series, threshold)
    runs = _run_lengths(flags)
    keys, cnt = np.unique(runs, return_counts=True)
    censored = bool(len(flags) and (flags[0] or flags[-1]))
    return BurstHistogram(float(threshold), dict(zip(keys.tolist(), cnt.tolist())),
                          len(flags), censored)


def burst_lengths_pooled(series_list, threshold=0.0) -> BurstHistogram:
    """Pool histograms over several series; runs never span two series."""
    hist = BurstHistogram(float(threshold), {}, 0)
    for s in series_list:
        hist = hist.merge(burst_lengths(s, threshold))
    return hist


@dataclass
class GeometricFit:
    """Geometric law on {1, 2, ...}: P(L = k) = (1-p)^(k-1) p."""

    p: float
    p_value: float
    chi2: float
    dof: int
    n_runs: int
    reliable: bool

    def to_dict(self):
        return {"p": self.p, "p_value": self.p_value, "chi2": self.chi2,
                "dof": self.dof, "n_runs": self.n_runs, "reliable": self.reliable}


def geometric_fit(hist: BurstHistogram, min_expected=5.0) -> GeometricFit:
    """MLE of the run-ending probability and a chi-square goodness test.

    Bins k = 1, 2, ... are kept while each expects at least ``min_expected``
    runs; the remainder is pooled into a tail bin. Degrees of freedom are
    bins - 2. Histograms with a single length are flagged unreliable.
    """
    n = hist.total_runs
    if n < 30:
        raise ValueError(f"need at least 30 runs, got {n}")
    p = n / hist.steady_steps
    if len(hist.counts) < 2 or p >= 1.0:
        return GeometricFit(min(p, 1.0), float("nan"), float("nan"), 0, n, False)
    q = 1.0 - p
    obs, exp = [], []
    k = 1
    while True:
        e_k = n * p * q ** (k - 1)
        tail_after = n * q ** k
        if e_k < min_expected or tail_after < min_expected:
            break
        obs.append(hist.counts.get(k, 0))
        exp.append(e_k)
        k += 1
    obs.append(sum(v for length, v in hist.counts.items() if length >= k))
    exp.append(n * q ** (k - 1))
    obs, exp = np.array(obs, float), np.array(exp, float)
    dof = len(obs) - 2
    if dof < 1:
        return GeometricFit(p, float("nan"), float("nan"), 0, n, False)
    stat = float(np.sum((obs - exp) ** 2 / exp))
    return GeometricFit(p, float(chi2_sf(stat, dof)), stat, dof, n, True)


def _r2(x, y):
    if len(x) < 3:
        return float("nan")
    coef = np.polyfit(x, y, 1)
    resid = y - np.polyval(coef, x)
    ss = np.sum((y - y.mean()) ** 2)
    return float(1.0 - np.sum(resid ** 2) / ss) if ss > 0 else float("nan")


def survival_linearity(hist: BurstHistogram, min_len=2, max_len=100, scale="loglog"):
    """R^2 of a straight-line fit to log survival over [min_len, max_len].

    ``scale="loglog"`` regresses on log length, ``"semilog"`` on length.
    Lengths with zero survival are excluded.
    """
    ks, surv = hist.survival(max_len)
    keep = (ks >= min_len) & (surv > 0)
    ks, surv = ks[keep], surv[keep]
    xs = np.log(ks) if scale == "loglog" else ks.astype(float)
    return _r2(xs, np.log(surv))


def derivative_mass_report(d, resolution=0.1, counts=None):
    """Empirical P(d = 0), P(|d| <= 1), P(|d| <= 3) at the data resolution.

    ``counts`` optionally gives the multiplicity of each value in ``d``.
    """
    d = np.asarray(d, dtype=float)
    if d.size == 0:
        raise ValueError("empty d-series")
    w = np.ones_like(d) if counts is None else np.asarray(counts, dtype=float)
    tol = resolution / 2.0
    a = np.abs(d)
    total = w.sum()
    return {
        "p_zero": float(w[a < tol].sum() / total),
        "p_abs_le_1": float(w[a < 1.0 + tol].sum() / total),
        "p_abs_le_3": float(w[a < 3.0 + tol].sum() / total),
    }
