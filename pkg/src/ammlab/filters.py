"""Estimation engines: Kalman filter, RTS smoother, EM, and robust EM.

The hidden price is a scalar random walk with jump variance sigma^2,
observed through trader noise with variance eta^2 (optionally scaled to
eta^2 / w_i by per-trade robustness weights).  The filter recursion is

    K_t = (P_{t-1} + sigma^2) / (P_{t-1} + sigma^2 + eta^2)
    m_t = (1 - K_t) m_{t-1} + K_t p_trad_t
    P_t = (1 - K_t) (P_{t-1} + sigma^2)

When (sigma, eta) are unknown they are estimated by EM: the E-step runs
the filter and smoother to get the expected squared jumps A_t and
residuals B_t, the M-step sets sigma^2 = mean(A), eta^2 = mean(w B).
The reported log-likelihood trace is the observed-data (innovations)
log-likelihood, which EM is guaranteed not to decrease.

The robust variant re-estimates weights w_i = eta^2 / (2 B_i) each
iteration (capped at w_max).  That weight rule makes w_i B_i a constant
of the scale update, so eta is identified by the equal-weights first
iteration and the weighted likelihood's scale freedom never drifts;
internally the loop carries the factor-2 convention the weighted
likelihood pairs with this rule (gains are invariant under it) and
converts estimates back on return.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from . import _kernels

SCALE_FLOOR = 1e-9  # floor on estimated sigma and eta
W_MAX = _kernels.W_MAX


@dataclass(frozen=True)
class KalmanState:
    """Posterior over the hidden (log-)price after t observations."""

    mean: float
    var: float
    gain: float = 0.0
    t: int = 0

    def __post_init__(self) -> None:
        if self.var < 0:
            raise ValueError("variance must be non-negative")
        if not 0.0 <= self.gain <= 1.0:
            raise ValueError("gain must lie in [0, 1]")


def kf_step(state: KalmanState, p_trad: float, sigma: float, eta: float) -> KalmanState:
    """One filter update; the three lines of the curve-adaptation loop."""
    if sigma < 0 or eta < 0:
        raise ValueError("scales must be non-negative")
    p_pred = state.var + sigma**2
    denom = p_pred + eta**2
    if denom == 0.0:
        raise ValueError("sigma and eta cannot both be zero with zero variance")
    K = p_pred / denom
    mean = (1.0 - K) * state.mean + K * p_trad
    var = (1.0 - K) * p_pred
    return KalmanState(mean=mean, var=var, gain=K, t=state.t + 1)


def kf_block_mse(sigma: float, eta: float, T: int) -> float:
    """End-of-block MSE of the filter when the price is fixed within the block."""
    if T < 1:
        raise ValueError("need at least one trade per block")
    return eta**2 * sigma**2 / (T * sigma**2 + eta**2)


def lognormal_operating_point(state: KalmanState, sigma: float, eta: float) -> float:
    """Operating price implied by a log-space filter state for the next trade.

    exp(m + P_post / (2 (1 - K))) with the next-step gain and posterior
    variance; algebraically equal to exp(m + P_pred / 2), the prior mean
    of the price itself.
    """
    p_pred = state.var + sigma**2
    K = p_pred / (p_pred + eta**2)
    p_post = (1.0 - K) * p_pred
    return math.exp(state.mean + p_post / (2.0 * (1.0 - K)))


@dataclass(frozen=True)
class SmoothedPath:
    """Fixed-interval smoother output."""

    means: np.ndarray
    variances: np.ndarray
    lag_one_cov: np.ndarray  # lag_one_cov[i] = Cov(x_i, x_{i-1} | all obs)


def kf_filter_path(
    observations: np.ndarray,
    sigma: float,
    eta: float,
    init: KalmanState | None = None,
    weights: np.ndarray | None = None,
) -> tuple[list[KalmanState], float]:
    """Filter a whole observation series; returns states and the loglik."""
    y = np.ascontiguousarray(observations, dtype=float)
    w = np.ones(y.size) if weights is None else np.ascontiguousarray(weights, dtype=float)
    m0, p0 = _default_init(y, eta) if init is None else (init.mean, init.var)
    m_f, P_f, K_f, ll = _kernels.kf_forward(y, sigma**2, eta**2, w, m0, p0)
    states = [KalmanState(mean=float(m_f[i]), var=float(P_f[i]), gain=float(K_f[i]), t=i + 1)
              for i in range(y.size)]
    return states, float(ll)


def rts_smooth(filtered: Sequence[KalmanState], sigma: float) -> SmoothedPath:
    """Backward pass over already-filtered states."""
    if len(filtered) == 0:
        raise ValueError("need at least one filtered state")
    m_f = np.array([s.mean for s in filtered])
    P_f = np.array([s.var for s in filtered])
    K_f = np.array([s.gain for s in filtered])
    ms, Ps, lag = _kernels.rts(m_f, P_f, K_f, sigma**2)
    return SmoothedPath(means=ms, variances=Ps, lag_one_cov=lag)


def _default_init(y: np.ndarray, eta: float) -> tuple[float, float]:
    """Anchor the first state at the first observation with a wide, fixed prior.

    The prior must not depend on the EM iterate for the monotonicity
    guarantee to hold, so it is frozen from the data once per run.
    """
    if y.size >= 3:
        spread = float(np.var(np.diff(y)))
    else:
        spread = eta**2
    return float(y[0]), max(10.0 * spread, eta**2, 1e-12)


def em_e_step(
    observations: np.ndarray,
    sigma: float,
    eta: float,
    weights: np.ndarray | None = None,
    init: KalmanState | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Expected squared jumps A_t (t >= 1) and residuals B_t under (sigma, eta)."""
    y = np.ascontiguousarray(observations, dtype=float)
    if y.size < 2:
        raise ValueError("need at least two observations")
    w = np.ones(y.size) if weights is None else np.ascontiguousarray(weights, dtype=float)
    m0, p0 = _default_init(y, eta) if init is None else (init.mean, init.var)
    s2 = max(sigma**2, _kernels.VAR_FLOOR)
    e2 = max(eta**2, _kernels.VAR_FLOOR)
    m_f, P_f, K_f, _ = _kernels.kf_forward(y, s2, e2, w, m0, p0)
    ms, Ps, lag = _kernels.rts(m_f, P_f, K_f, s2)
    A, B = _kernels.e_step(y, ms, Ps, lag)
    return A[1:], B


class MStep(NamedTuple):
    sigma: float
    eta: float
    floored: bool


def em_m_step(A: np.ndarray, B: np.ndarray, weights: np.ndarray | None = None) -> MStep:
    """Maximizing scales: sigma^2 = mean(A), eta^2 = mean(w B), floored at 1e-9."""
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    if A.size == 0 or B.size == 0:
        raise ValueError("need non-empty statistics")
    if np.any(A < 0) or np.any(B < 0):
        raise ValueError("statistics must be non-negative")
    wB = B if weights is None else np.asarray(weights, dtype=float) * B
    s2 = float(np.mean(A))
    e2 = float(np.mean(wB))
    floored = s2 < SCALE_FLOOR**2 or e2 < SCALE_FLOOR**2
    return MStep(sigma=max(math.sqrt(s2), SCALE_FLOOR),
                 eta=max(math.sqrt(e2), SCALE_FLOOR),
                 floored=floored)


def truncate_window(history: np.ndarray, window: int) -> np.ndarray:
    """Most recent ``window`` observations (all of them if shorter)."""
    if window < 10:
        raise ValueError("window must be at least 10")
    history = np.asarray(history, dtype=float)
    return history[-window:] if history.size > window else history


def robust_weight(B_tau: float | np.ndarray, eta: float, w_max: float = W_MAX):
    """Outlier weight eta^2 / (2 B), capped at w_max, B floored at 1e-12."""
    B = np.maximum(np.asarray(B_tau, dtype=float), _kernels.B_FLOOR)
    w = np.minimum(w_max, eta**2 / (2.0 * B))
    return float(w) if np.ndim(B_tau) == 0 else w


@dataclass
class EmEstimate:
    """Result of one EM run over a trade window."""

    sigma_hat: float
    eta_hat: float
    loglik: float
    iterations: int
    window: tuple[int, int]
    loglik_trace: np.ndarray = field(default_factory=lambda: np.empty(0))
    weights: np.ndarray | None = None
    floored: bool = False


def _moment_guesses(y: np.ndarray) -> tuple[float, float]:
    v = float(np.var(np.diff(y))) / 2.0
    v = max(v, SCALE_FLOOR**2)
    return math.sqrt(v), math.sqrt(v)


def run_em(
    observations: np.ndarray,
    guesses: tuple[float, float] | None = None,
    tol: float = 1e-6,
    max_iter: int = 100,
    weights: np.ndarray | None = None,
    init: KalmanState | None = None,
) -> EmEstimate:
    """Alternate E and M steps until the log-likelihood settles."""
    y = np.ascontiguousarray(observations, dtype=float)
    if y.size < 10:
        raise ValueError("need at least ten observations")
    s0, e0 = guesses if guesses is not None else _moment_guesses(y)
    w = np.ones(y.size) if weights is None else np.ascontiguousarray(weights, dtype=float)
    m0, p0 = _default_init(y, e0) if init is None else (init.mean, init.var)
    s2, e2, trace, it, A, B, floored = _kernels.em(
        y, s0**2, e0**2, w, m0, p0, tol, max_iter, _kernels.VAR_FLOOR)
    if not np.all(np.isfinite(trace)):
        raise FloatingPointError(
            f"non-finite likelihood; last valid estimate sigma={math.sqrt(s2)}, eta={math.sqrt(e2)}")
    return EmEstimate(
        sigma_hat=max(math.sqrt(s2), SCALE_FLOOR),
        eta_hat=max(math.sqrt(e2), SCALE_FLOOR),
        loglik=float(trace[-1]),
        iterations=int(it),
        window=(0, int(y.size)),
        loglik_trace=np.asarray(trace),
        floored=bool(floored),
    )


def run_robust_em(
    observations: np.ndarray,
    guesses: tuple[float, float] | None = None,
    tol: float = 1e-6,
    max_iter: int = 100,
    init: KalmanState | None = None,
    w_max: float = W_MAX,
) -> EmEstimate:
    """EM with per-trade outlier weights; returns the weights alongside."""
    y = np.ascontiguousarray(observations, dtype=float)
    if y.size < 10:
        raise ValueError("need at least ten observations")
    s0, e0 = guesses if guesses is not None else _moment_guesses(y)
    m0, p0 = _default_init(y, e0) if init is None else (init.mean, init.var)
    s2, e2, w, trace, it = _kernels.robust_em(
        y, s0**2, e0**2, m0, p0, tol, max_iter, _kernels.VAR_FLOOR, w_max)
    if not np.all(np.isfinite(trace)):
        raise FloatingPointError(
            f"non-finite likelihood; last valid estimate sigma={math.sqrt(s2)}, eta={math.sqrt(e2)}")
    return EmEstimate(
        sigma_hat=max(math.sqrt(s2), SCALE_FLOOR),
        eta_hat=max(math.sqrt(e2), SCALE_FLOOR),
        loglik=float(trace[-1]),
        iterations=int(it),
        window=(0, int(y.size)),
        loglik_trace=np.asarray(trace),
        weights=np.asarray(w),
    )
