"""Univariate ARIMA: CSS estimation, stepwise order search and lag extraction.

Models are fitted on the ``d``-times differenced series ``w`` with the mean
parametrization

    (w_t - mu) = sum_i phi_i (w_{t-a_i} - mu) + e_t + sum_j theta_j e_{t-b_j}

where the AR lags ``a`` are ``1..p`` plus optional seasonal lags and the MA
lags ``b`` are ``1..q``. Coefficients minimize the conditional sum of
squared residuals, with residuals before ``n_cond`` set to zero.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize, signal, stats

from .errors import ConvergenceError, HeliocastError
from .features import LagSpec
from .timeseries import MODEL_VARIABLES, MinuteSeries, calendar_year, hourly_subsample

log = logging.getLogger(__name__)

MAX_ORDER = 20
KPSS_CRITICAL_5PCT = 0.463
SEASONAL_CANDIDATES = (24, 12)


class SearchError(HeliocastError):
    pass


def _values(series) -> np.ndarray:
    if isinstance(series, MinuteSeries):
        if series.missing.any():
            raise ValueError(f"{series.variable}: series has missing values")
        return np.asarray(series.values, dtype=float)
    return np.asarray(series, dtype=float)


def difference(series, d: int) -> np.ndarray:
    x = _values(series)
    if d not in (0, 1, 2):
        raise ValueError(f"differencing order must be 0, 1 or 2, got {d}")
    if len(x) <= d:
        raise ValueError(f"series of length {len(x)} too short to difference {d} times")
    return np.diff(x, n=d) if d else x.copy()


def kpss_statistic(x, nlags: int | None = None) -> float:
    """KPSS level-stationarity statistic with a Bartlett long-run variance.

    ``nlags`` defaults to ``trunc(4 (n/100)^(1/4))``.
    """
    x = np.asarray(x, dtype=float)
    n = len(x)
    if nlags is None:
        nlags = int(4 * (n / 100.0) ** 0.25)
    e = x - x.mean()
    s = np.cumsum(e)
    lrv = e @ e / n
    for k in range(1, nlags + 1):
        lrv += 2 * (1 - k / (nlags + 1)) * (e[k:] @ e[:-k]) / n
    if lrv <= 0:
        return 0.0
    return float(s @ s / (n * n * lrv))


def select_d(series, max_d: int = 2, critical: float = KPSS_CRITICAL_5PCT) -> int:
    """Smallest d whose differenced series is not rejected as level-stationary."""
    x = _values(series)
    for d in range(max_d + 1):
        w = difference(x, d)
        if np.ptp(w) == 0 or kpss_statistic(w) < critical:
            return d
    return max_d


@dataclass(frozen=True)
class ArimaOrder:
    p: int
    d: int
    q: int

    def __post_init__(self):
        if min(self.p, self.d, self.q) < 0:
            raise ValueError("orders must be non-negative")
        if self.p > MAX_ORDER or self.q > MAX_ORDER or self.d > 2:
            raise ValueError(f"order {self.astuple()} outside p,q <= {MAX_ORDER}, d <= 2")

    def astuple(self) -> tuple:
        return (self.p, self.d, self.q)


@dataclass
class ArimaModel:
    order: ArimaOrder
    phi: np.ndarray
    theta: np.ndarray
    intercept: float
    sigma2: float
    aicc: float
    n_obs: int
    has_intercept: bool = True
    seasonal_ar: tuple = ()
    n_cond: int = 0
    stable: bool = True
    converged: bool = True

    @property
    def ar_lags(self) -> tuple:
        return tuple(range(1, self.order.p + 1)) + tuple(self.seasonal_ar)

    @property
    def ma_lags(self) -> tuple:
        return tuple(range(1, self.order.q + 1))

    @property
    def n_params(self) -> int:
        return len(self.phi) + len(self.theta) + int(self.has_intercept) + 1

    def summary(self) -> dict:
        return {"order": list(self.order.astuple()), "intercept": self.has_intercept,
                "seasonal_ar": list(self.seasonal_ar), "aicc": self.aicc,
                "sigma2": self.sigma2, "phi": self.phi.tolist(), "theta": self.theta.tolist(),
                "stable": self.stable}


def _ma_denominator(theta, ma_lags) -> np.ndarray:
    den = np.zeros(max(ma_lags, default=0) + 1)
    den[0] = 1.0
    for th, b in zip(theta, ma_lags):
        den[b] = th
    return den


def css_residuals(w, phi, theta, mu, ar_lags, ma_lags, n_cond) -> np.ndarray:
    """Residuals ``e_t`` for ``t >= n_cond`` (earlier residuals are zero)."""
    y = w - mu
    u = y[n_cond:].copy()
    for ph, a in zip(phi, ar_lags):
        u -= ph * y[n_cond - a : len(y) - a]
    if not len(theta):
        return u
    return signal.lfilter([1.0], _ma_denominator(theta, ma_lags), u)


def _shift(e, b):
    out = np.zeros_like(e)
    out[b:] = e[:-b]
    return out


def _objective(params, w, ar_lags, ma_lags, has_mu, n_cond):
    """Mean squared CSS residual and its exact gradient."""
    na, nm = len(ar_lags), len(ma_lags)
    phi, theta = params[:na], params[na : na + nm]
    mu = params[-1] if has_mu else 0.0
    with np.errstate(all="ignore"):
        e = css_residuals(w, phi, theta, mu, ar_lags, ma_lags, n_cond)
        n = len(e)
        f = e @ e / n
        if not np.isfinite(f) or f > 1e12:
            return 1e12, np.zeros_like(params)
        den = _ma_denominator(theta, ma_lags)
        y = w - mu
        grad = np.empty_like(params)

        def filt(v):
            return signal.lfilter([1.0], den, v) if nm else v

        for i, a in enumerate(ar_lags):
            grad[i] = 2 * e @ filt(-y[n_cond - a : len(y) - a]) / n
        for j, b in enumerate(ma_lags):
            grad[na + j] = 2 * e @ filt(-_shift(e, b)) / n
        if has_mu:
            grad[-1] = 2 * e @ filt(np.full(n, -(1.0 - phi.sum()))) / n
    if not np.all(np.isfinite(grad)):
        return 1e12, np.zeros_like(params)
    return f, grad


def _lagmat(v, lags, start):
    return np.column_stack([v[start - k : len(v) - k] for k in lags]) if lags else np.empty((len(v) - start, 0))


def _initial_params(w, ar_lags, ma_lags, has_mu):
    """Hannan-Rissanen style start: long AR for innovations, then OLS."""
    y = w - (w.mean() if has_mu else 0.0)
    n = len(y)
    max_ar, max_ma = max(ar_lags, default=0), max(ma_lags, default=0)
    innov = np.zeros(n)
    start = max_ar
    if ma_lags:
        m = min(max(max_ar, max_ma) + 10, n // 4)
        A = _lagmat(y, list(range(1, m + 1)), m)
        coef, *_ = np.linalg.lstsq(A, y[m:], rcond=None)
        innov[m:] = y[m:] - A @ coef
        start = max(max_ar, m + max_ma)
    A = np.hstack([_lagmat(y, ar_lags, start), _lagmat(innov, ma_lags, start)])
    coef = np.linalg.lstsq(A, y[start:], rcond=None)[0] if A.shape[1] else np.empty(0)
    phi, theta = coef[: len(ar_lags)], coef[len(ar_lags) :]
    # keep the start inside the stationary / invertible region
    for _ in range(50):
        if _roots_ok(phi, ar_lags, -1) and _roots_ok(theta, ma_lags, 1):
            break
        phi, theta = phi * 0.7, theta * 0.7
    return np.concatenate([phi, theta, [0.0] if has_mu else []])


def _roots_ok(coef, lags, sign) -> bool:
    """Roots of ``1 + sign * sum coef_k z^lag_k`` lie outside the unit circle."""
    if not len(coef):
        return True
    poly = np.zeros(max(lags) + 1)
    poly[0] = 1.0
    for c, k in zip(coef, lags):
        poly[k] = sign * c
    roots = np.roots(poly[::-1])
    return bool(np.all(np.abs(roots) > 1.0 + 1e-8))


def aicc(css: float, n: int, k: int) -> float:
    sigma2 = css / n
    loglik = -0.5 * n * (np.log(2 * np.pi * sigma2) + 1.0)
    if n - k - 1 <= 0:
        return np.inf
    return float(-2 * loglik + 2 * k * n / (n - k - 1))


def fit_arima(series, order, *, intercept: bool | None = None, seasonal_ar=(),
              n_cond: int | None = None, maxiter: int = 500) -> ArimaModel:
    """Conditional-sum-of-squares ARIMA fit.

    ``intercept`` defaults to True when ``d <= 1``. Pass the same
    ``n_cond`` to every candidate of a search so their AICc values are
    computed over the same observations.
    """
    if not isinstance(order, ArimaOrder):
        order = ArimaOrder(*order)
    p, d, q = order.astuple()
    has_mu = (d <= 1) if intercept is None else bool(intercept)
    w = difference(series, d)
    ar_lags = tuple(range(1, p + 1)) + tuple(sorted(set(seasonal_ar) - set(range(1, p + 1))))
    ma_lags = tuple(range(1, q + 1))
    max_lag = max(ar_lags + ma_lags, default=0)
    n_cond = max_lag if n_cond is None else max(n_cond, max(ar_lags, default=0))
    if len(w) - n_cond < 10 * (p + q + 1):
        raise ValueError(f"series too short ({len(w)}) for order {order.astuple()}")

    loc = w.mean()
    scale = w.std()
    if scale == 0:
        scale = 1.0
    ws = (w - loc) / scale if has_mu else w / scale

    x0 = _initial_params(ws, ar_lags, ma_lags, has_mu)
    if len(x0):
        res = optimize.minimize(_objective, x0, args=(ws, ar_lags, ma_lags, has_mu, n_cond),
                                jac=True, method="L-BFGS-B",
                                options={"maxiter": maxiter, "ftol": 1e-12, "gtol": 1e-8})
        params, f = res.x, float(res.fun)
        converged = bool(res.success)
        exhausted = res.nit >= maxiter
    else:
        params, converged, exhausted = x0, True, False
        f = float(ws[n_cond:] @ ws[n_cond:] / (len(ws) - n_cond))

    na = len(ar_lags)
    phi, theta = params[:na].copy(), params[na : na + q].copy()
    mu_s = params[-1] if has_mu else 0.0
    n = len(w) - n_cond
    css = f * n * scale ** 2
    k = na + q + int(has_mu) + 1
    model = ArimaModel(
        order=order, phi=phi, theta=theta,
        intercept=float(loc + scale * mu_s) if has_mu else 0.0,
        sigma2=css / n, aicc=aicc(css, n, k) if css > 0 else -np.inf, n_obs=n,
        has_intercept=has_mu, seasonal_ar=tuple(a for a in ar_lags if a > p),
        n_cond=n_cond, stable=_roots_ok(phi, ar_lags, -1) and _roots_ok(theta, ma_lags, 1),
        converged=converged,
    )
    if f >= 1e12 or not np.isfinite(model.aicc) and css > 0:
        raise ConvergenceError(f"ARIMA{order.astuple()} fit diverged", best=model)
    if exhausted:
        raise ConvergenceError(f"ARIMA{order.astuple()} did not converge in {maxiter} iterations",
                               best=model)
    if not model.stable:
        log.debug("ARIMA%s fit is non-stationary or non-invertible", order.astuple())
    return model


def residuals(model: ArimaModel, series) -> np.ndarray:
    w = difference(series, model.order.d)
    return css_residuals(w, model.phi, model.theta, model.intercept,
                         model.ar_lags, model.ma_lags, max(model.ar_lags + model.ma_lags, default=0))


def forecast(model: ArimaModel, history, steps: int = 1) -> np.ndarray:
    """Point forecasts after the end of ``history``; future shocks are zero."""
    x = _values(history)
    d = model.order.d
    w = difference(x, d)
    m = max(model.ar_lags + model.ma_lags, default=0)
    e = np.concatenate([np.zeros(m), css_residuals(w, model.phi, model.theta, model.intercept,
                                                   model.ar_lags, model.ma_lags, m)])
    w, e = list(w), list(e)
    mu = model.intercept
    # last value of each lower differencing level, to integrate back
    levels = [np.diff(x, n=k)[-1] for k in range(d)]
    out = []
    for _ in range(steps):
        wn = mu + sum(ph * (w[-a] - mu) for ph, a in zip(model.phi, model.ar_lags))
        wn += sum(th * e[-b] for th, b in zip(model.theta, model.ma_lags))
        w.append(wn)
        e.append(0.0)
        val = wn
        for k in reversed(range(d)):
            levels[k] = levels[k] + val
            val = levels[k]
        out.append(val)
    return np.array(out)


# --- diagnostics --------------------------------------------------------------------

@dataclass
class AcfProfile:
    lags: np.ndarray
    acf: np.ndarray
    confidence_band: float

    def fraction_outside(self, first: int = 1) -> float:
        r = np.abs(self.acf[first:])
        return float(np.mean(r > self.confidence_band)) if len(r) else 0.0


def acf(series, max_lag: int) -> AcfProfile:
    x = _values(series)
    n = len(x)
    if max_lag >= n / 2:
        raise ValueError(f"max_lag {max_lag} must be below half the length {n}")
    e = x - x.mean()
    denom = e @ e
    r = np.ones(max_lag + 1)
    if denom > 0:
        for k in range(1, max_lag + 1):
            r[k] = e[k:] @ e[:-k] / denom
    else:
        r[1:] = 0.0
    return AcfProfile(np.arange(max_lag + 1), r, 1.96 / np.sqrt(n))


def ljung_box(resid, lags: int, dof: int = 0) -> tuple:
    r = acf(resid, lags).acf
    n = len(resid)
    k = np.arange(1, lags + 1)
    q = n * (n + 2) * np.sum(r[1:] ** 2 / (n - k))
    df = max(lags - dof, 1)
    return float(q), float(stats.chi2.sf(q, df))


def residual_diagnostics(model: ArimaModel, series, max_lag: int = 40) -> dict:
    """Residual ACF within the +-1.96/sqrt(n) band on >= 95% of lags 1..max_lag,
    and Ljung-Box p-value above 0.05."""
    e = residuals(model, series)
    max_lag = min(max_lag, len(e) // 2 - 1)
    prof = acf(e, max_lag)
    _, p = ljung_box(e, max_lag, dof=len(model.phi) + len(model.theta))
    acf_ok = prof.fraction_outside() <= 0.05
    return {"acf_ok": bool(acf_ok), "ljung_box_p": p, "ok": bool(acf_ok and p > 0.05),
            "acf_fraction_outside": prof.fraction_outside()}


# --- stepwise search ----------------------------------------------------------------

@dataclass
class SearchResult:
    model: ArimaModel
    trail: list = field(default_factory=list)
    evaluated: list = field(default_factory=list)


def _better(a, b) -> bool:
    """Lower AICc wins; ties go to the smaller p + q."""
    if a is None:
        return False
    if b is None:
        return True
    if a.aicc != b.aicc:
        return a.aicc < b.aicc
    return a.order.p + a.order.q < b.order.p + b.order.q


def stepwise_search(series, d: int | None = None, max_order: int = MAX_ORDER, *,
                    seasonal_ar=(), n_cond: int | None = None, max_steps: int = 100,
                    return_result: bool = False):
    """Stepwise AICc search over (p, q) and the intercept.

    Starts from (0,d,0), (1,d,0), (0,d,1), (2,d,2); then repeatedly moves to
    the best improving neighbour among p+-1, q+-1 (jointly or separately)
    and the intercept toggle until none improves.
    """
    x = _values(series)
    if d is None:
        d = select_d(x)
    max_order = min(max_order, MAX_ORDER)
    if n_cond is None:
        n_cond = max([max_order, *seasonal_ar])
    cache = {}
    evaluated = []

    def evaluate(p, q, mu):
        key = (p, q, mu)
        if key not in cache:
            try:
                cache[key] = fit_arima(x, (p, d, q), intercept=mu, seasonal_ar=seasonal_ar,
                                       n_cond=n_cond)
            except (ConvergenceError, ValueError, np.linalg.LinAlgError) as err:
                log.debug("ARIMA(%d,%d,%d) failed: %s", p, d, q, err)
                cache[key] = None
            evaluated.append(((p, d, q), mu, None if cache[key] is None else cache[key].aicc))
        return cache[key]

    mu0 = d <= 1
    best = None
    for p, q in ((0, 0), (1, 0), (0, 1), (2, 2)):
        if p <= max_order and q <= max_order:
            m = evaluate(p, q, mu0)
            if _better(m, best):
                best = m
    if best is None:
        raise SearchError("no starting candidate could be fitted")
    trail = [best]
    for _ in range(max_steps):
        p, q, mu = best.order.p, best.order.q, best.has_intercept
        moves = [(p + dp, q + dq, mu) for dp, dq in
                 ((-1, 0), (1, 0), (0, -1), (0, 1), (-1, -1), (1, 1), (-1, 1), (1, -1))]
        if d <= 1:
            moves.append((p, q, not mu))
        step_best = None
        for mp, mq, mmu in moves:
            if 0 <= mp <= max_order and 0 <= mq <= max_order:
                m = evaluate(mp, mq, mmu)
                if _better(m, step_best):
                    step_best = m
        if step_best is None or not step_best.aicc < best.aicc:
            break
        best = step_best
        trail.append(best)
    result = SearchResult(best, trail, evaluated)
    return result if return_result else best


def add_seasonal_terms(series, model: ArimaModel, candidates=SEASONAL_CANDIDATES,
                       n_cond: int | None = None) -> ArimaModel:
    """Greedily add seasonal AR lags that lower AICc."""
    best = model
    for lag in candidates:
        if lag <= best.order.p or lag in best.seasonal_ar:
            continue
        try:
            cand = fit_arima(series, best.order, intercept=best.has_intercept,
                             seasonal_ar=tuple(best.seasonal_ar) + (lag,),
                             n_cond=n_cond if n_cond is not None else best.n_cond)
        except (ConvergenceError, ValueError):
            continue
        if cand.aicc < best.aicc:
            best = cand
    return best


def derive_lag_entry(minute_model: ArimaModel | None, hourly_model: ArimaModel | None,
                     cap: int = MAX_ORDER) -> dict:
    """Minute lags ``1..max(p, q)`` and hour lags ``2..max(p, q)`` plus seasonal terms."""
    k = 1
    if minute_model is not None:
        k = max(1, min(max(minute_model.order.p, minute_model.order.q), cap))
    hour = set()
    if hourly_model is not None:
        kh = min(max(hourly_model.order.p, hourly_model.order.q), cap)
        hour = set(range(2, kh + 1)) | set(hourly_model.seasonal_ar)
    hour.discard(1)
    return {"minute_lags": list(range(1, k + 1)), "hour_lags": sorted(hour)}


@dataclass
class SelectionConfig:
    year: int | None = None
    max_order: int = MAX_ORDER
    minute_window: int | None = None
    hourly_seasonal: tuple = SEASONAL_CANDIDATES
    diagnostics_max_lag: int = 40


def _analysis_window(dataset, variable, year):
    """Longest run of non-excluded slots within the configured year."""
    ok = ~dataset.excluded & ~dataset.missing[variable]
    if year is not None:
        ok &= calendar_year(dataset.timestamps, dataset.utc_offset) == year
    idx = np.flatnonzero(np.diff(np.concatenate(([0], ok.view(np.int8), [0]))))
    if not len(idx):
        return None
    spans = idx.reshape(-1, 2)
    a, b = spans[np.argmax(spans[:, 1] - spans[:, 0])]
    return slice(int(a), int(b))


def _select_one(dataset, variable, cfg: SelectionConfig) -> dict:
    window = _analysis_window(dataset, variable, cfg.year)
    if window is None:
        raise ValueError("no usable data in the selection year")
    s = dataset.series(variable)
    sub = MinuteSeries(variable, s.start + window.start, s.values[window])
    if cfg.minute_window:
        sub = MinuteSeries(variable, sub.end - cfg.minute_window + 1, sub.values[-cfg.minute_window:]) \
            if len(sub) > cfg.minute_window else sub
    x = sub.values
    if np.ptp(x) == 0:
        raise ValueError("constant series")
    if len(x) < 200:
        raise ValueError(f"only {len(x)} minutes available")

    d = select_d(x)
    res = stepwise_search(x, d, cfg.max_order, return_result=True)
    minute_diag = residual_diagnostics(res.model, x, cfg.diagnostics_max_lag)

    hourly = hourly_subsample(sub, dataset.utc_offset).values
    hourly_model, hourly_report = None, None
    if len(hourly) >= 200 and np.ptp(hourly) > 0:
        dh = select_d(hourly)
        n_cond = max([cfg.max_order, *cfg.hourly_seasonal])
        hres = stepwise_search(hourly, dh, cfg.max_order, n_cond=n_cond, return_result=True)
        hourly_model = add_seasonal_terms(hourly, hres.model, cfg.hourly_seasonal, n_cond)
        hourly_report = {
            "d": dh, "final_order": list(hourly_model.order.astuple()),
            "seasonal_ar": list(hourly_model.seasonal_ar), "aicc": hourly_model.aicc,
            "trail": [[list(m.order.astuple()), m.has_intercept, m.aicc] for m in hres.trail],
            "diagnostics": residual_diagnostics(hourly_model, hourly,
                                                min(cfg.diagnostics_max_lag, len(hourly) // 4)),
        }
    else:
        log.warning("%s: hourly series too short for selection; no hour lags", variable)
    lags = derive_lag_entry(res.model, hourly_model, cfg.max_order)
    return {
        "d": d, "final_order": list(res.model.order.astuple()), "aicc": res.model.aicc,
        "intercept": res.model.has_intercept,
        "trail": [[list(m.order.astuple()), m.has_intercept, m.aicc] for m in res.trail],
        "diagnostics": minute_diag, "hourly": hourly_report, "lags": lags,
        "n_minutes": len(x),
    }


def build_lag_spec(dataset, variables=MODEL_VARIABLES, config: SelectionConfig | None = None):
    """Run the per-variable selection and return ``(LagSpec, report)``.

    A variable whose analysis fails falls back to ``{t-1}`` with a warning.
    """
    cfg = config or SelectionConfig()
    entries, report = {}, {}
    for var in variables:
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                rep = _select_one(dataset, var, cfg)
        except (ValueError, HeliocastError) as err:
            log.warning("%s: lag selection failed (%s); falling back to t-1", var, err)
            rep = {"fallback": True, "reason": str(err),
                   "lags": {"minute_lags": [1], "hour_lags": []}}
        entries[var] = rep["lags"]
        report[var] = rep
    return LagSpec(entries), report
