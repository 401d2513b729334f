"""Generalized Pareto tail models for time-to-solution samples.

The generalized Pareto distribution function with shape ``xi``, location
``u`` and scale ``sigma`` is

    W(x) = 1 - (1 + xi (x - u) / sigma) ** (-1 / xi),    x >= u,

with the exponential limit ``1 - exp(-(x - u) / sigma)`` used for
``|xi| < XI_ZERO``. Empirical distribution functions use ``i / (n + 1)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize, minimize_scalar
from scipy.stats import rankdata

XI_ZERO = 1e-8
MIN_EXCEEDANCES = 30


class EvtError(ValueError):
    pass


class InsufficientExceedances(EvtError):
    pass


class DegenerateSample(EvtError):
    pass


class NoExceedances(EvtError):
    pass


class UnboundedQuantile(EvtError):
    pass


class InvalidReparametrization(EvtError):
    pass


class FitConvergenceError(EvtError):
    def __init__(self, message: str, gradient_norm: float):
        super().__init__(f"{message} (final gradient norm {gradient_norm:.3g})")
        self.gradient_norm = gradient_norm


@dataclass(frozen=True)
class GpdParams:
    xi: float
    u: float
    sigma: float

    def __post_init__(self):
        if not self.sigma > 0:
            raise EvtError(f"sigma must be > 0, got {self.sigma}")

    def cdf(self, x):
        return gpd_cdf(self, x)

    def pdf(self, x):
        return gpd_pdf(self, x)

    def quantile(self, p):
        return gpd_quantile(self, p)

    @property
    def upper_endpoint(self) -> float:
        return self.u - self.sigma / self.xi if self.xi < -XI_ZERO else math.inf


def _scalar_or_array(value, like):
    return float(value) if np.ndim(like) == 0 else value


def gpd_cdf(params: GpdParams, x):
    xs = np.asarray(x, dtype=float)
    z = (xs - params.u) / params.sigma
    out = np.zeros_like(z)
    above = z > 0
    if abs(params.xi) < XI_ZERO:
        out[above] = -np.expm1(-z[above])
    else:
        xz = params.xi * z[above]
        val = np.ones_like(xz)
        inside = xz > -1.0
        val[inside] = -np.expm1(-np.log1p(xz[inside]) / params.xi)
        out[above] = val
    return _scalar_or_array(out, x)


def gpd_pdf(params: GpdParams, x):
    xs = np.asarray(x, dtype=float)
    z = (xs - params.u) / params.sigma
    out = np.zeros_like(z)
    ok = z >= 0
    if abs(params.xi) < XI_ZERO:
        out[ok] = np.exp(-z[ok]) / params.sigma
    else:
        xz = params.xi * z[ok]
        val = np.zeros_like(xz)
        inside = xz > -1.0
        val[inside] = np.exp(-(1.0 / params.xi + 1.0) * np.log1p(xz[inside])) / params.sigma
        out[ok] = val
    return _scalar_or_array(out, x)


def gpd_quantile(params: GpdParams, p):
    ps = np.asarray(p, dtype=float)
    if np.any((ps < 0) | (ps > 1)) or np.any(np.isnan(ps)):
        raise EvtError("probabilities must lie in [0, 1]")
    if np.any(ps == 1):
        if params.xi >= -XI_ZERO:
            raise UnboundedQuantile("quantile at p=1 is unbounded for xi >= 0")
    with np.errstate(divide="ignore"):
        lg = np.log1p(-ps)
    if abs(params.xi) < XI_ZERO:
        out = params.u - params.sigma * lg
    else:
        out = params.u + params.sigma * np.expm1(-params.xi * lg) / params.xi
        out = np.where(ps == 1, params.upper_endpoint, out)
    return _scalar_or_array(out, p)


def inverse_standard_gpd(xi: float, p: float) -> float:
    """Quantile of the standard GPD ``W_{xi,0,1}``."""
    if abs(xi) < XI_ZERO:
        return -math.log1p(-p)
    return math.expm1(-xi * math.log1p(-p)) / xi


# -- empirical distribution ----------------------------------------------------


def empirical_cdf(sample, x):
    """``#{x_i <= x} / (n + 1)``."""
    s = np.sort(np.asarray(sample, dtype=float))
    return np.searchsorted(s, x, side="right") / (len(s) + 1)


def exceedance_cdf(sample, u: float, x):
    s = np.asarray(sample, dtype=float)
    if not np.any(s > u):
        raise NoExceedances(f"no sample value exceeds u={u}")
    fu = empirical_cdf(s, u)
    fx = empirical_cdf(s, x)
    out = np.where(np.asarray(x) >= u, (fx - fu) / (1.0 - fu), 0.0)
    return _scalar_or_array(out, x)


# -- maximum likelihood ------------------------------------------------------------


@dataclass(frozen=True)
class GpdFit:
    params: GpdParams
    k: int
    xi_se: float
    sigma_se: float
    log_likelihood: float

    @property
    def xi(self) -> float:
        return self.params.xi

    @property
    def sigma(self) -> float:
        return self.params.sigma

    @property
    def u(self) -> float:
        return self.params.u

    def to_json(self) -> dict:
        return {"xi": self.xi, "sigma": self.sigma, "u": self.u, "k": self.k,
                "xi_se": self.xi_se, "sigma_se": self.sigma_se, "loglik": self.log_likelihood}


def gpd_nll(xi: float, sigma: float, y: np.ndarray) -> float:
    """Negative log-likelihood of exceedances ``y = x - u``."""
    if sigma <= 0:
        return math.inf
    k = len(y)
    if abs(xi) < XI_ZERO:
        return k * math.log(sigma) + float(np.sum(y)) / sigma
    t = y * (xi / sigma)
    if t.min() <= -1.0:
        return math.inf
    return k * math.log(sigma) + (1.0 + 1.0 / xi) * float(np.log1p(t).sum())


def _profile_sigma(xi: float, y: np.ndarray) -> tuple[float, float]:
    ymax = float(y.max())
    scale = float(y.mean())
    lo = math.log(max(scale * 1e-6, -xi * ymax * (1 + 1e-9) if xi < 0 else 0.0, 1e-300))
    hi = math.log(max(scale, ymax) * 1e4)
    res = minimize_scalar(lambda ls: gpd_nll(xi, math.exp(ls), y), bounds=(lo, hi),
                          method="bounded", options={"xatol": 1e-6})
    return math.exp(res.x), float(res.fun)


def _hessian(f, x: np.ndarray, h: np.ndarray) -> np.ndarray:
    n = len(x)
    H = np.empty((n, n))
    for i in range(n):
        for j in range(i, n):
            ei = np.zeros(n)
            ej = np.zeros(n)
            ei[i] = h[i]
            ej[j] = h[j]
            if i == j:
                val = (f(x + ei) - 2 * f(x) + f(x - ei)) / h[i] ** 2
            else:
                val = (f(x + ei + ej) - f(x + ei - ej) - f(x - ei + ej) + f(x - ei - ej)) / (
                    4 * h[i] * h[j]
                )
            H[i, j] = H[j, i] = val
    return H


def _gradient(f, x: np.ndarray, h: np.ndarray) -> np.ndarray:
    g = np.empty(len(x))
    for i in range(len(x)):
        e = np.zeros(len(x))
        e[i] = h[i]
        g[i] = (f(x + e) - f(x - e)) / (2 * h[i])
    return g


def fit_gpd_mle(sample, u: float, *, min_exceedances: int = MIN_EXCEEDANCES) -> GpdFit:
    """MLE of ``(xi, sigma)`` from the exceedances of ``sample`` over ``u``.

    The profile likelihood in ``xi`` is scanned on a grid over [-0.9, 4], the
    best grid point is polished with Nelder-Mead on ``(xi, log sigma)`` until
    the log-likelihood improves by less than 1e-10, and standard errors come
    from a central-difference observed information matrix with steps of
    1e-5 times the parameter scale.
    """
    x = np.asarray(sample, dtype=float)
    y = x[x > u] - u
    k = len(y)
    if k < min_exceedances:
        raise InsufficientExceedances(f"{k} exceedances over u={u}, need {min_exceedances}")
    if np.ptp(y) == 0:
        raise DegenerateSample("all exceedances are equal")

    grid = np.round(np.arange(-0.9, 4.0001, 0.05), 10)
    prof = [(_profile_sigma(xi, y), xi) for xi in grid]
    (sigma0, _), xi0 = min(prof, key=lambda item: item[0][1])

    def f(theta):
        return gpd_nll(theta[0], math.exp(theta[1]), y)

    res = minimize(f, np.array([xi0, math.log(sigma0)]), method="Nelder-Mead",
                   options={"xatol": 1e-10, "fatol": 1e-10, "maxiter": 20000, "maxfev": 40000})
    xi_hat, sigma_hat = float(res.x[0]), math.exp(float(res.x[1]))

    def g(p):
        return gpd_nll(p[0], p[1], y)

    theta = np.array([xi_hat, sigma_hat])
    steps = 1e-5 * np.array([max(1.0, abs(xi_hat)), sigma_hat])
    if not res.success:
        grad = _gradient(g, theta, steps)
        raise FitConvergenceError(f"Nelder-Mead did not converge: {res.message}",
                                  float(np.linalg.norm(grad)))
    # steps may leave the support when xi <= -1 (non-regular likelihood); SEs become nan
    with np.errstate(invalid="ignore"):
        H = _hessian(g, theta, steps)
    try:
        cov = np.linalg.inv(H)
        xi_se, sigma_se = (math.sqrt(v) if v > 0 else math.nan for v in np.diag(cov))
    except np.linalg.LinAlgError:
        xi_se = sigma_se = math.nan
    return GpdFit(GpdParams(xi_hat, float(u), sigma_hat), k, xi_se, sigma_se, -float(res.fun))


def kth_largest_threshold(sample, k: int) -> float:
    """Threshold leaving ``k`` values above it: the (k+1)-th largest value."""
    s = np.sort(np.asarray(sample, dtype=float))[::-1]
    if not 1 <= k <= len(s) - 1:
        raise EvtError(f"k={k} outside [1, {len(s) - 1}]")
    return float(s[k])


def fit_top_k(sample, k: int, **kwargs) -> GpdFit:
    return fit_gpd_mle(sample, kth_largest_threshold(sample, k), **kwargs)


# -- full-distribution model --------------------------------------------------------


@dataclass(frozen=True)
class TailModel:
    xi: float
    u_tilde: float
    sigma_tilde: float
    u: float
    F_u: float

    @property
    def params(self) -> GpdParams:
        return GpdParams(self.xi, self.u_tilde, self.sigma_tilde)

    def cdf(self, x):
        return gpd_cdf(self.params, x)

    def quantile(self, p):
        return gpd_quantile(self.params, p)


def tail_model(fit: GpdFit, F_u: float) -> TailModel:
    """Express the exceedance fit as a model of F itself above ``u``."""
    if not 0 <= F_u < 1:
        raise InvalidReparametrization(f"F(u)={F_u} outside [0, 1)")
    winv = inverse_standard_gpd(fit.xi, F_u)
    denom = 1.0 + fit.xi * winv
    if denom <= 0:
        raise InvalidReparametrization(f"1 + xi W^-1(F(u)) = {denom} <= 0")
    sigma_t = fit.sigma / denom
    return TailModel(fit.xi, fit.u - sigma_t * winv, sigma_t, fit.u, F_u)


# -- diagnostics -------------------------------------------------------------------


@dataclass(frozen=True)
class ScanEntry:
    k: int
    u: float | None
    fit: GpdFit | None
    error: str | None = None


def threshold_scan(sample, k_grid, **kwargs) -> list[ScanEntry]:
    out = []
    for k in sorted(set(int(k) for k in k_grid), reverse=True):
        try:
            u = kth_largest_threshold(sample, k)
        except EvtError as exc:
            out.append(ScanEntry(k, None, None, str(exc)))
            continue
        try:
            out.append(ScanEntry(k, u, fit_gpd_mle(sample, u, **kwargs)))
        except EvtError as exc:
            out.append(ScanEntry(k, u, None, str(exc)))
    return out


def plotting_positions(sample) -> tuple[np.ndarray, np.ndarray]:
    """Sorted sample and ``i/(n+1)`` with average ranks for ties."""
    x = np.sort(np.asarray(sample, dtype=float))
    return x, rankdata(x, method="average") / (len(x) + 1)


def pp_points(sample, model) -> np.ndarray:
    x, p = plotting_positions(sample)
    return np.column_stack([np.asarray(model.cdf(x), dtype=float), p])


def qq_points(sample, model) -> np.ndarray:
    x, p = plotting_positions(sample)
    return np.column_stack([np.asarray(model.quantile(p), dtype=float), x])


@dataclass(frozen=True)
class PotReport:
    fit_u: GpdFit
    fit_mu: GpdFit
    xi_gap_se: float
    sigma_predicted: float
    sigma_gap_se: float

    def consistent(self, n_se: float = 2.0) -> bool:
        return self.xi_gap_se <= n_se and self.sigma_gap_se <= n_se


def pot_stability_check(sample, fit: GpdFit, mu: float, **kwargs) -> PotReport:
    """Refit above ``mu >= u`` and compare with what the fit at ``u`` implies:
    the same shape and scale ``sigma_u + xi (mu - u)``."""
    if mu < fit.u:
        raise EvtError("mu must not be below the original threshold")
    refit = fit if mu == fit.u else fit_gpd_mle(sample, mu, **kwargs)
    combined = math.hypot(fit.xi_se, refit.xi_se)
    xi_gap = abs(refit.xi - fit.xi) / combined if combined > 0 else 0.0
    pred = fit.sigma + fit.xi * (mu - fit.u)
    sigma_gap = abs(refit.sigma - pred) / refit.sigma_se if refit.sigma_se > 0 else 0.0
    return PotReport(fit, refit, xi_gap, pred, sigma_gap)
