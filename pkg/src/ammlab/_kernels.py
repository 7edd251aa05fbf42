"""Sequential scan kernels behind the filters and scenario runner.

Everything here is written in scalar-loop style so the same source runs
either as plain Python or JIT-compiled by numba.  The public modules
import the compiled versions when numba is available and fall back to
the pure-Python ones otherwise; numerics are identical either way.

State-space model: a scalar random walk with per-observation noise
variance eta^2 / w_i (unit weights unless a robust scheme supplies
them).  The prior on the first window state is (m0, P0), with sigma^2
added to P0 before the first update (x_s = x_{s-1} + jump).
"""

from __future__ import annotations

import math

import numpy as np

LOG2PI = math.log(2.0 * math.pi)
VAR_FLOOR = 1e-18  # floors sigma^2 / eta^2; scales floor at 1e-9
B_FLOOR = 1e-12
W_MAX = 10.0


def _kf_forward(y, sigma2, eta2, w, m0, P0):
    """Forward Kalman pass; returns filtered means/vars, gains, innovations loglik."""
    n = y.shape[0]
    m_f = np.empty(n)
    P_f = np.empty(n)
    K_f = np.empty(n)
    ll = 0.0
    m = m0
    P = P0
    for i in range(n):
        P_pred = P + sigma2
        R = eta2 / w[i]
        S = P_pred + R
        K = P_pred / S
        resid = y[i] - m
        ll += -0.5 * (LOG2PI + math.log(S) + resid * resid / S)
        m = m + K * resid
        P = (1.0 - K) * P_pred
        m_f[i] = m
        P_f[i] = P
        K_f[i] = K
    return m_f, P_f, K_f, ll


def _rts(m_f, P_f, K_f, sigma2):
    """Backward smoother; returns smoothed means/vars and lag-one covariances.

    lag[i] = Cov(x_i, x_{i-1} | all observations); lag[0] is unused.
    """
    n = m_f.shape[0]
    ms = np.empty(n)
    Ps = np.empty(n)
    J = np.empty(n)
    lag = np.zeros(n)
    ms[n - 1] = m_f[n - 1]
    Ps[n - 1] = P_f[n - 1]
    for i in range(n - 2, -1, -1):
        P_pred = P_f[i] + sigma2
        J[i] = P_f[i] / P_pred
        ms[i] = m_f[i] + J[i] * (ms[i + 1] - m_f[i])
        Ps[i] = P_f[i] + J[i] * J[i] * (Ps[i + 1] - P_pred)
    if n > 1:
        lag[n - 1] = (1.0 - K_f[n - 1]) * P_f[n - 2]
        for i in range(n - 2, 0, -1):
            lag[i] = P_f[i] * J[i - 1] + J[i] * (lag[i + 1] - P_f[i]) * J[i - 1]
    return ms, Ps, lag


def _e_step(y, ms, Ps, lag):
    """Smoothed second-moment statistics.

    A[i] = E[(x_i - x_{i-1})^2 | y]  for i >= 1 (A[0] unused, 0),
    B[i] = E[(y_i - x_i)^2 | y].
    """
    n = y.shape[0]
    A = np.zeros(n)
    B = np.empty(n)
    for i in range(n):
        r = y[i] - ms[i]
        B[i] = r * r + Ps[i]
        if i >= 1:
            d = ms[i] - ms[i - 1]
            A[i] = d * d + Ps[i] + Ps[i - 1] - 2.0 * lag[i]
    return A, B


def _em(y, s2_0, e2_0, w, m0, P0, tol, max_iter, var_floor):
    """EM for (sigma^2, eta^2) with fixed weights.

    Returns (s2, e2, ll_trace, n_iter, A, B, floored).  ll_trace[k] is the
    observed-data log-likelihood at the parameters entering iteration k.
    """
    n = y.shape[0]
    s2 = max(s2_0, var_floor)
    e2 = max(e2_0, var_floor)
    trace = np.empty(max_iter + 1)
    A = np.zeros(n)
    B = np.zeros(n)
    ll_prev = -np.inf
    it = 0
    floored = False
    while it < max_iter:
        m_f, P_f, K_f, ll = kf_forward(y, s2, e2, w, m0, P0)
        ms, Ps, lag = rts(m_f, P_f, K_f, s2)
        A, B = e_step(y, ms, Ps, lag)
        trace[it] = ll
        if it > 0 and abs(ll - ll_prev) <= tol * max(1.0, abs(ll)):
            it += 1
            break
        ll_prev = ll
        sa = 0.0
        for i in range(1, n):
            sa += A[i]
        sb = 0.0
        for i in range(n):
            sb += w[i] * B[i]
        s2_new = sa / (n - 1) if n > 1 else var_floor
        e2_new = sb / n
        if s2_new < var_floor or e2_new < var_floor:
            floored = True
        s2 = max(s2_new, var_floor)
        e2 = max(e2_new, var_floor)
        it += 1
    return s2, e2, trace[:it], it, A, B, floored


def _robust_em(y, s2_0, e2_0, m0, P0, tol, max_iter, var_floor, w_max):
    """Outlier-weighted EM: equal-weight fit first, then weighted passes.

    Phase 1 is plain EM (all weights 1), which alone identifies eta:
    profiling the weighted likelihood over its own optimal weights
    w* = eta~^2/(2B) cancels every eta term identically, so the weighted
    statistics carry no scale information and eta stays at its
    equal-weight estimate.  Phase 2 sets weights against that frozen
    scale and re-fits the path and sigma under them; at the reported
    scale the rule reads w_i = eta^2/B_i (the eta~ inside the weighted
    likelihood is sqrt(2) times the reported eta), so clean data sits
    near w = 1 with per-observation variance R_i = eta^2/w_i = B_i,
    while outliers get R_i on the order of their squared displacement.
    The pass count is fixed (no weight<->residual fixed-point iteration,
    which is attracted to the w_max cap on clean data).

    Returns (s2, e2, w, ll_trace, n_iter).
    """
    n = y.shape[0]
    ones = np.ones(n)
    s2, e2, trace1, it1, A, B, _fl = em(y, s2_0, e2_0, ones, m0, P0, tol,
                                        max_iter, var_floor)
    w = np.ones(n)
    trace = np.empty(it1 + 2)
    for i in range(it1):
        trace[i] = trace1[i]
    it = it1
    for _pass in range(2):
        for i in range(n):
            bi = B[i]
            if bi < B_FLOOR:
                bi = B_FLOOR
            wi = (2.0 * e2) / (2.0 * bi)
            if wi > w_max:
                wi = w_max
            w[i] = wi
        m_f, P_f, K_f, ll = kf_forward(y, s2, e2, w, m0, P0)
        ms, Ps, lag = rts(m_f, P_f, K_f, s2)
        A, B = e_step(y, ms, Ps, lag)
        trace[it] = ll
        it += 1
    return s2, e2, w, trace[:it], it


def _cmmm_trade(p0, pt, x, yres):
    """One trade on a weighted-mean pool with theta set so the marginal price is p0.

    Returns (p_eff, dx, dy, x_new, y_new).  Series expansion below
    |p_t/p0 - 1| = 1e-5 avoids 0/0 in the effective-price ratio.
    """
    theta = p0 * x / (p0 * x + yres)
    u = pt / p0 - 1.0
    if u == 0.0:
        return p0, 0.0, 0.0, x, yres
    x_new = x * (p0 / pt) ** (1.0 - theta)
    y_new = yres * (pt / p0) ** theta
    dx = x - x_new
    dy = y_new - yres
    if abs(u) < 1e-5:
        p_eff = p0 * (1.0 + 0.5 * u + (theta - 2.0) / 12.0 * u * u)
    else:
        p_eff = dy / dx
    return p_eff, dx, dy, x_new, y_new


def _akf_scenario(y_obs, p_trad, p_init, x_init, y_init, window, refit_every,
                  warmup, tol, max_iter, var_floor, w_max, robust, lognormal,
                  guess_s2, guess_e2, use_optimal, trade_frac):
    """Adaptive maker loop: EM refits on a trailing window, CMMM trades between.

    ``y_obs`` is the filter observation series (log prices for lognormal
    runs), ``p_trad`` the raw trader prices the pool trades against.
    Before the first refit the maker has no parameter estimates and
    passes trader prices through (a unit-gain filter).

    Returns (p0_pub, p_eff, dx, dy, gain, kvar, s2_arr, e2_arr, weight_last,
    est_post) where est_post[t] is the post-trade price recommendation.
    """
    n = y_obs.shape[0]
    m_hist = np.empty(n + 1)
    P_hist = np.empty(n + 1)
    m_hist[0] = math.log(p_init) if lognormal else p_init
    P_hist[0] = 0.0
    p0_pub = np.empty(n)
    p_eff = np.empty(n)
    dx = np.empty(n)
    dy = np.empty(n)
    gain = np.empty(n)
    kvar = np.empty(n)
    s2_arr = np.empty(n)
    e2_arr = np.empty(n)
    est_post = np.empty(n)
    weight_last = np.ones(n)

    s2 = guess_s2
    e2 = guess_e2
    fitted = False
    x = x_init
    yres = y_init
    m = m_hist[0]
    P = 0.0
    ones = np.ones(window)

    for t in range(n):
        if t >= warmup and (t == warmup or (t - warmup) % refit_every == 0):
            s = t - window
            if s < 0:
                s = 0
            yw = y_obs[s:t]
            nw = t - s
            if not fitted and s2 <= 0.0:
                # method-of-moments start: var of first differences, split evenly
                mu = 0.0
                for i in range(1, nw):
                    mu += yw[i] - yw[i - 1]
                mu /= max(nw - 1, 1)
                v = 0.0
                for i in range(1, nw):
                    d = yw[i] - yw[i - 1] - mu
                    v += d * d
                v /= max(nw - 2, 1)
                s2 = max(v / 2.0, var_floor)
                e2 = max(v / 2.0, var_floor)
            if robust:
                s2, e2, wts, _tr, _it = robust_em(
                    yw, s2, e2, m_hist[s], P_hist[s], tol, max_iter, var_floor, w_max)
            else:
                s2, e2, _tr, _it, _A, _B, _fl = em(
                    yw, s2, e2, ones[:nw], m_hist[s], P_hist[s], tol, max_iter, var_floor)
                wts = ones[:nw]
            m_f, P_f, K_f, _ll = kf_forward(yw, s2, e2, wts, m_hist[s], P_hist[s])
            for i in range(nw):
                m_hist[s + 1 + i] = m_f[i]
                P_hist[s + 1 + i] = P_f[i]
                weight_last[s + i] = wts[i]
            m = m_hist[t]
            P = P_hist[t]
            fitted = True

        if fitted:
            P_pred = P + s2
            K = P_pred / (P_pred + e2)
            p0 = math.exp(m + 0.5 * P_pred) if lognormal else m
            s2_arr[t] = s2
            e2_arr[t] = e2
        else:
            # pass-through: follow the last trader price exactly
            P_pred = 0.0
            K = 1.0
            p0 = math.exp(m) if lognormal else m
            s2_arr[t] = 0.0
            e2_arr[t] = 0.0
        gain[t] = K
        p0_pub[t] = p0

        if use_optimal and fitted:
            pt = p_trad[t]
            Ko = K if K < 1.0 - 1e-12 else 1.0 - 1e-12
            mexp = Ko / (1.0 - Ko)
            if lognormal:
                pe = p0 ** (1.0 - Ko) * pt**Ko
                move = abs(math.log(pt) - math.log(p0))
            else:
                pe = (1.0 - Ko) * p0 + Ko * pt
                move = abs(pt - p0)
            scale = 4.0 * math.sqrt(P_pred + e2) if P_pred + e2 > 0 else 1.0
            size = trade_frac * (move / scale) ** mexp
            if size > 0.5:
                size = 0.5
            if pt > p0:
                dxt = size * x
                dyt = pe * dxt
            elif pt < p0:
                dyt = -size * yres
                dxt = dyt / pe
            else:
                dxt = 0.0
                dyt = 0.0
            x -= dxt
            yres += dyt
            p_eff[t] = pe if dxt != 0.0 else p0
            dx[t] = dxt
            dy[t] = dyt
        else:
            pe, dxt, dyt, x, yres = cmmm_trade(p0, p_trad[t], x, yres)
            p_eff[t] = pe
            dx[t] = dxt
            dy[t] = dyt

        if fitted:
            m = m + K * (y_obs[t] - m)
            P = (1.0 - K) * P_pred
        else:
            m = y_obs[t]
            P = 0.0
        m_hist[t + 1] = m
        P_hist[t + 1] = P
        kvar[t] = P
        if lognormal:
            est_post[t] = math.exp(m + 0.5 * (P + s2)) if fitted else math.exp(m)
        else:
            est_post[t] = m
    return (p0_pub, p_eff, dx, dy, gain, kvar, s2_arr, e2_arr, weight_last, est_post)


def _kf_cmmm_scenario(y_obs, p_trad, sigma, eta, p_init, x_init, y_init, lognormal):
    """Known-parameter Kalman maker publishing a weighted-mean pool.

    sigma/eta are per-trade arrays (constant unless a meta-volatility
    process is configured).  Returns the same tuple layout as the
    adaptive kernel minus the parameter-estimate arrays.
    """
    n = y_obs.shape[0]
    p0_pub = np.empty(n)
    p_eff = np.empty(n)
    dx = np.empty(n)
    dy = np.empty(n)
    gain = np.empty(n)
    kvar = np.empty(n)
    est_post = np.empty(n)
    m = math.log(p_init) if lognormal else p_init
    P = 0.0
    x = x_init
    yres = y_init
    for t in range(n):
        s2 = sigma[t] * sigma[t]
        e2 = eta[t] * eta[t]
        P_pred = P + s2
        denom = P_pred + e2
        K = P_pred / denom if denom > 0 else 0.0
        p0 = math.exp(m + 0.5 * P_pred) if lognormal else m
        p0_pub[t] = p0
        gain[t] = K

        pe, dxt, dyt, x, yres = cmmm_trade(p0, p_trad[t], x, yres)
        p_eff[t] = pe
        dx[t] = dxt
        dy[t] = dyt

        m = m + K * (y_obs[t] - m)
        P = (1.0 - K) * P_pred
        kvar[t] = P
        est_post[t] = math.exp(m + 0.5 * (P + s2)) if lognormal else m
    return p0_pub, p_eff, dx, dy, gain, kvar, est_post


def _optimal_exact_scenario(y_obs, p_trad, sigma, eta, p_init, x_init, y_init,
                            lognormal, trade_frac):
    """Known-parameter maker publishing the continuous optimal curve.

    Trades execute at exactly the posterior-mean price: effective price
    (1-K) p0 + K p_trad (additive) or p0^(1-K) p_trad^K (lognormal).
    Trade size follows the power branch dx = c x (|.|/scale)^(K/(1-K))
    scaled so a 4-sigma move trades ``trade_frac`` of the asset side.
    """
    n = y_obs.shape[0]
    p0_pub = np.empty(n)
    p_eff = np.empty(n)
    dx = np.empty(n)
    dy = np.empty(n)
    gain = np.empty(n)
    kvar = np.empty(n)
    est_post = np.empty(n)
    m = math.log(p_init) if lognormal else p_init
    P = 0.0
    x = x_init
    yres = y_init
    for t in range(n):
        s2 = sigma[t] * sigma[t]
        e2 = eta[t] * eta[t]
        P_pred = P + s2
        denom = P_pred + e2
        K = P_pred / denom if denom > 0 else 0.0
        if K >= 1.0 - 1e-12:
            K = 1.0 - 1e-12
        mexp = K / (1.0 - K)
        p0 = math.exp(m + 0.5 * P_pred) if lognormal else m
        p0_pub[t] = p0
        gain[t] = K

        pt = p_trad[t]
        if lognormal:
            pe = p0 ** (1.0 - K) * pt**K
            move = abs(math.log(pt) - math.log(p0))
        else:
            pe = (1.0 - K) * p0 + K * pt
            move = abs(pt - p0)
        scale = 4.0 * math.sqrt(denom) if denom > 0 else 1.0
        size = trade_frac * (move / scale) ** mexp
        if size > 0.5:
            size = 0.5
        if pt > p0:
            dxt = size * x
            dyt = pe * dxt
        elif pt < p0:
            dyt = -size * yres
            dxt = dyt / pe
        else:
            dxt = 0.0
            dyt = 0.0
        x -= dxt
        yres += dyt
        p_eff[t] = pe if dxt != 0.0 else p0
        dx[t] = dxt
        dy[t] = dyt

        m = m + K * (y_obs[t] - m)
        P = (1.0 - K) * P_pred
        kvar[t] = P
        est_post[t] = math.exp(m + 0.5 * (P + s2)) if lognormal else m
    return p0_pub, p_eff, dx, dy, gain, kvar, est_post


def _static_cmmm_scenario(p_trad, theta, p_init, x_init, y_init):
    """Static weighted-mean pool: the operating point just tracks trades."""
    n = p_trad.shape[0]
    p_eff = np.empty(n)
    dx = np.empty(n)
    dy = np.empty(n)
    p0_arr = np.empty(n)
    x = x_init
    yres = y_init
    p0 = p_init
    for t in range(n):
        pt = p_trad[t]
        p0_arr[t] = p0
        u = pt / p0 - 1.0
        if u == 0.0:
            p_eff[t] = p0
            dx[t] = 0.0
            dy[t] = 0.0
            continue
        x_new = x * (p0 / pt) ** (1.0 - theta)
        y_new = yres * (pt / p0) ** theta
        dx[t] = x - x_new
        dy[t] = y_new - yres
        if abs(u) < 1e-5:
            p_eff[t] = p0 * (1.0 + 0.5 * u + (theta - 2.0) / 12.0 * u * u)
        else:
            p_eff[t] = dy[t] / dx[t]
        x = x_new
        yres = y_new
        p0 = pt
    return p0_arr, p_eff, dx, dy


# ---------------------------------------------------------------------------
# numba compilation with graceful fallback
# ---------------------------------------------------------------------------

_PY_IMPLS = {
    "kf_forward": _kf_forward,
    "rts": _rts,
    "e_step": _e_step,
    "em": _em,
    "robust_em": _robust_em,
    "cmmm_trade": _cmmm_trade,
    "akf_scenario": _akf_scenario,
    "kf_cmmm_scenario": _kf_cmmm_scenario,
    "optimal_exact_scenario": _optimal_exact_scenario,
    "static_cmmm_scenario": _static_cmmm_scenario,
}

NUMBA_ENABLED = False
try:  # pragma: no cover - exercised implicitly by every import
    from numba import njit

    _jit = njit(cache=True, fastmath=False)
    kf_forward = _jit(_kf_forward)
    rts = _jit(_rts)
    e_step = _jit(_e_step)
    em = _jit(_em)
    robust_em = _jit(_robust_em)
    cmmm_trade = _jit(_cmmm_trade)
    akf_scenario = _jit(_akf_scenario)
    kf_cmmm_scenario = _jit(_kf_cmmm_scenario)
    optimal_exact_scenario = _jit(_optimal_exact_scenario)
    static_cmmm_scenario = _jit(_static_cmmm_scenario)
    NUMBA_ENABLED = True
except Exception:  # pragma: no cover
    kf_forward = _kf_forward
    rts = _rts
    e_step = _e_step
    em = _em
    robust_em = _robust_em
    cmmm_trade = _cmmm_trade
    akf_scenario = _akf_scenario
    kf_cmmm_scenario = _kf_cmmm_scenario
    optimal_exact_scenario = _optimal_exact_scenario
    static_cmmm_scenario = _static_cmmm_scenario
