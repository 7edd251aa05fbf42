"""Distribution-agnostic belief machinery and the optimality ODE.

The maker's belief over the hidden price is a density on a grid; the
posterior-mean pricing function

    beta(p_trad) = E[p_ext | history, p_trad]
                 = int p f_eta(p_trad - p) f(p) dp / int f_eta(p_trad - p) f(p) dp

drives everything: the operating point is the fixed point p = beta(p),
the optimal demand curve solves

    (beta(p) - p) g'(p) + beta'(p) (g(p) - x0) = 0,

and reading the same equation as an ODE in beta for a *given* static
curve yields the implied belief dynamics of that curve.

Numeric beliefs are trapezoid-quadrature grids; Gaussian and lognormal
closed forms are carried alongside as exact shortcuts and as test
oracles for the grid route.  Lognormal machinery lives on log-price
grids and only exponentiates at the interface.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.integrate import solve_ivp
from scipy.optimize import brentq

_DENOM_FLOOR = 1e-300


class OutOfSupportError(ValueError):
    """Observation so far outside the belief that the posterior underflows."""


class OdeSingularError(RuntimeError):
    """beta(p) - p vanished away from the operating point."""

    def __init__(self, location: float):
        super().__init__(f"beta(p) - p vanished at p={location}; ODE is singular there")
        self.location = location


# ---------------------------------------------------------------------------
# Beliefs and noise
# ---------------------------------------------------------------------------


def _gauss_pdf(x: np.ndarray, scale: float) -> np.ndarray:
    return np.exp(-0.5 * (x / scale) ** 2) / (scale * math.sqrt(2.0 * math.pi))


@dataclass(frozen=True)
class NoiseModel:
    """Trader-noise density on the observation residual.

    For additive markets the residual is p_trad - p; for lognormal
    markets the same object is used on log-price grids with the residual
    log(p_trad) - log(p).
    """

    eta: float
    density_fn: Callable[[np.ndarray], np.ndarray] = None  # type: ignore[assignment]

    def __post_init__(self) -> None:
        if self.eta < 0:
            raise ValueError("eta must be non-negative")
        if self.density_fn is None:
            eta = max(self.eta, 1e-12)
            object.__setattr__(self, "density_fn", lambda d: _gauss_pdf(np.asarray(d, dtype=float), eta))

    def density(self, residual: np.ndarray) -> np.ndarray:
        return self.density_fn(residual)


@dataclass
class GridBelief:
    """Probability density of the (log-)price on a strictly increasing grid."""

    grid: np.ndarray
    density: np.ndarray

    MIN_NODES = 64
    SPAN_SDS = 8.0       # grid must cover mean +/- SPAN_SDS * std
    REBUILD_SDS = 12.0   # rebuilt grids cover mean +/- REBUILD_SDS * std
    MAX_SPAN_SDS = 30.0  # re-tighten when the grid is this much wider than the mass

    def __post_init__(self) -> None:
        self.grid = np.asarray(self.grid, dtype=float)
        self.density = np.asarray(self.density, dtype=float)
        if self.grid.size < self.MIN_NODES:
            raise ValueError(f"belief grid needs at least {self.MIN_NODES} nodes")
        if np.any(np.diff(self.grid) <= 0):
            raise ValueError("belief grid must be strictly increasing")
        if np.any(self.density < 0):
            raise ValueError("belief density must be non-negative")
        self.normalize()

    @classmethod
    def from_gaussian(cls, mean: float, std: float, n: int = 1024) -> "GridBelief":
        if std <= 0:
            raise ValueError("std must be positive")
        grid = np.linspace(mean - cls.REBUILD_SDS * std, mean + cls.REBUILD_SDS * std, n)
        return cls(grid=grid, density=_gauss_pdf(grid - mean, std))

    @classmethod
    def point_mass(cls, value: float, n: int = 1024, width: float | None = None) -> "GridBelief":
        """Numerically degenerate prior: an extremely narrow Gaussian."""
        w = width if width is not None else 1e-9 * max(1.0, abs(value))
        return cls.from_gaussian(value, w, n)

    def normalize(self) -> None:
        total = np.trapezoid(self.density, self.grid)
        if not total > _DENOM_FLOOR:
            raise OutOfSupportError("belief mass underflowed")
        self.density = self.density / total

    @property
    def normalization(self) -> float:
        return float(np.trapezoid(self.density, self.grid))

    def mean(self) -> float:
        return float(np.trapezoid(self.grid * self.density, self.grid))

    def variance(self) -> float:
        mu = self.mean()
        return float(np.trapezoid((self.grid - mu) ** 2 * self.density, self.grid))

    def std(self) -> float:
        return math.sqrt(max(self.variance(), 0.0))

    def _needs_regrid(self) -> bool:
        mu, sd = self.mean(), self.std()
        if sd <= 0:
            return False
        lo_ok = self.grid[0] <= mu - self.SPAN_SDS * sd
        hi_ok = self.grid[-1] >= mu + self.SPAN_SDS * sd
        too_wide = (self.grid[-1] - self.grid[0]) > 2.0 * self.MAX_SPAN_SDS * sd
        return not (lo_ok and hi_ok) or too_wide

    def _regrid(self) -> "GridBelief":
        mu, sd = self.mean(), self.std()
        new_grid = np.linspace(mu - self.REBUILD_SDS * sd, mu + self.REBUILD_SDS * sd, self.grid.size)
        new_density = np.interp(new_grid, self.grid, self.density, left=0.0, right=0.0)
        return GridBelief(grid=new_grid, density=new_density)


def bayes_update(belief: GridBelief, p_trad: float, noise: NoiseModel) -> GridBelief:
    """Multiply in the trade likelihood, renormalize, re-center if needed."""
    posterior = belief.density * noise.density(p_trad - belief.grid)
    total = np.trapezoid(posterior, belief.grid)
    if not total > _DENOM_FLOOR:
        raise OutOfSupportError(
            f"observation {p_trad} has vanishing likelihood under the current belief"
        )
    updated = GridBelief(grid=belief.grid, density=posterior / total)
    if updated._needs_regrid():
        updated = updated._regrid()
    return updated


# ---------------------------------------------------------------------------
# The beta function
# ---------------------------------------------------------------------------


@dataclass
class BetaFunction:
    """Posterior-mean pricing map p_trad -> E[p_ext | history, p_trad]."""

    fn: Callable[[np.ndarray], np.ndarray]
    provenance: str = "numeric-from-belief"
    deriv: Callable[[np.ndarray], np.ndarray] | None = None
    known_fixed_point: float | None = None
    degenerate: bool = False
    meta: dict = field(default_factory=dict)

    def __call__(self, p: float | np.ndarray) -> float | np.ndarray:
        out = self.fn(np.asarray(p, dtype=float))
        return float(out) if np.isscalar(p) or np.ndim(p) == 0 else out

    def derivative(self, p: float | np.ndarray) -> float | np.ndarray:
        if self.deriv is not None:
            out = self.deriv(np.asarray(p, dtype=float))
        else:
            p_arr = np.asarray(p, dtype=float)
            h = 1e-6 * np.maximum(1.0, np.abs(p_arr))
            out = (self.fn(p_arr + h) - self.fn(p_arr - h)) / (2.0 * h)
        return float(out) if np.isscalar(p) or np.ndim(p) == 0 else out

    # -- closed-form constructors ------------------------------------------

    @classmethod
    def gaussian(cls, mean: float, prior_var: float, eta: float) -> "BetaFunction":
        """Conjugate additive-Gaussian form (1-K) mean + K p, K = P/(P+eta^2)."""
        K = prior_var / (prior_var + eta**2) if prior_var + eta**2 > 0 else 0.0
        return cls(
            fn=lambda p: (1.0 - K) * mean + K * p,
            deriv=lambda p: np.full_like(np.asarray(p, dtype=float), K),
            provenance="closed-form-gaussian",
            known_fixed_point=mean,
            meta={"K": K, "mean": mean, "eta": eta},
        )

    @classmethod
    def lognormal(cls, log_mean: float, prior_var: float, eta: float) -> "BetaFunction":
        """Conjugate lognormal form exp((1-K) m + K log p + P_post / 2)."""
        K = prior_var / (prior_var + eta**2) if prior_var + eta**2 > 0 else 0.0
        p_post = (1.0 - K) * prior_var
        amp = math.exp((1.0 - K) * log_mean + 0.5 * p_post)
        fixed = math.exp(log_mean + prior_var / 2.0)  # = exp(m + P_post/(2(1-K)))
        return cls(
            fn=lambda p: amp * p**K,
            deriv=lambda p: amp * K * p ** (K - 1.0),
            provenance="closed-form-lognormal",
            known_fixed_point=fixed,
            meta={"K": K, "log_mean": log_mean, "eta": eta, "amp": amp},
        )

    @classmethod
    def power(cls, p0: float, K: float) -> "BetaFunction":
        """Lognormal form anchored directly at its fixed point: p0^(1-K) p^K."""
        amp = p0 ** (1.0 - K)
        return cls(
            fn=lambda p: amp * p**K,
            deriv=lambda p: amp * K * p ** (K - 1.0),
            provenance="closed-form-lognormal",
            known_fixed_point=p0,
            meta={"K": K, "p0": p0},
        )


def beta_from_belief(belief: GridBelief, noise: NoiseModel) -> BetaFunction:
    """Quadrature evaluation of the posterior-mean map on the belief grid."""
    grid = belief.grid
    density = belief.density

    def evaluate(p_trad: np.ndarray) -> np.ndarray:
        pt = np.atleast_1d(np.asarray(p_trad, dtype=float))
        lik = noise.density(pt[:, None] - grid[None, :])
        weighted = lik * density[None, :]
        denom = np.trapezoid(weighted, grid, axis=1)
        numer = np.trapezoid(weighted * grid[None, :], grid, axis=1)
        if np.any(denom <= _DENOM_FLOOR):
            bad = pt[denom <= _DENOM_FLOOR][0]
            raise OutOfSupportError(f"trader price {bad} is outside the belief support")
        out = numer / denom
        return out if np.ndim(p_trad) else out[0]

    return BetaFunction(fn=evaluate, provenance="numeric-from-belief")


def beta_from_log_belief(belief: GridBelief, noise: NoiseModel) -> BetaFunction:
    """Posterior-mean map for lognormal markets: belief lives on log-price.

    Returns beta as a function of the raw trader price; expectations are
    of exp(L) under the log-space posterior.
    """
    grid = belief.grid
    density = belief.density
    e_grid = np.exp(grid)

    def evaluate(p_trad: np.ndarray) -> np.ndarray:
        pt = np.atleast_1d(np.asarray(p_trad, dtype=float))
        if np.any(pt <= 0):
            raise ValueError("trader price must be positive in the lognormal model")
        lik = noise.density(np.log(pt)[:, None] - grid[None, :])
        weighted = lik * density[None, :]
        denom = np.trapezoid(weighted, grid, axis=1)
        numer = np.trapezoid(weighted * e_grid[None, :], grid, axis=1)
        if np.any(denom <= _DENOM_FLOOR):
            bad = pt[denom <= _DENOM_FLOOR][0]
            raise OutOfSupportError(f"trader price {bad} is outside the belief support")
        out = numer / denom
        return out if np.ndim(p_trad) else out[0]

    return BetaFunction(fn=evaluate, provenance="numeric-from-belief")


# ---------------------------------------------------------------------------
# Fixed point of p = beta(p)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FixedPoint:
    price: float
    degenerate: bool = False


def solve_fixed_point(beta: BetaFunction, bracket: tuple[float, float]) -> FixedPoint:
    """Operating point p with beta(p) = p.

    Closed-form betas short-circuit to their exact fixed point.  An
    identity-like beta (every point fixed) returns the bracket midpoint
    flagged degenerate.
    """
    if beta.known_fixed_point is not None:
        return FixedPoint(price=beta.known_fixed_point)
    a, b = bracket
    if not a < b:
        raise ValueError("bracket must satisfy a < b")

    def gap(p: float) -> float:
        return beta(p) - p

    probes = np.linspace(a, b, 5)
    scale = max(1.0, abs(a), abs(b))
    if all(abs(gap(p)) < 1e-12 * scale for p in probes):
        return FixedPoint(price=0.5 * (a + b), degenerate=True)

    ga, gb = gap(a), gap(b)
    if ga == 0.0:
        return FixedPoint(price=a)
    if gb == 0.0:
        return FixedPoint(price=b)
    if ga * gb > 0:
        raise ValueError("no sign change of beta(p) - p on the bracket")
    root = brentq(gap, a, b, xtol=1e-300, rtol=1e-15)
    if abs(gap(root)) >= 1e-10 * max(1.0, root):
        raise RuntimeError("fixed-point residual above tolerance")
    return FixedPoint(price=float(root))


# ---------------------------------------------------------------------------
# Forward ODE: demand curve from beta
# ---------------------------------------------------------------------------


def integrate_optimal_curve(
    beta: BetaFunction,
    p0: float,
    x0: float,
    side: str,
    p_end: float,
    g_start: float | None = None,
    n_samples: int = 200,
    delta_rel: float = 1e-6,
    p_start: float | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Integrate (beta - p) g' + beta' (g - x0) = 0 on one side of p0.

    The equation is singular exactly at the fixed point, so integration
    by default starts at p0 * (1 +/- delta_rel) with the caller-supplied
    g there (default x0: the continuous family member).  All family
    members collapse onto x0 at p0, which makes outward integration
    ill-conditioned for steep branches; validation runs can instead
    anchor at an explicit ``p_start`` far from p0 and integrate inward,
    where perturbations contract.  Returns (p, g) samples from the start
    point to p_end.
    """
    if side not in ("above", "below"):
        raise ValueError("side must be 'above' or 'below'")
    sign = 1.0 if side == "above" else -1.0
    if side == "above" and not (p_end > p0 and (p_start is None or p_start > p0)):
        raise ValueError("points must exceed p0 on the 'above' side")
    if side == "below" and not (0 < p_end < p0 and (p_start is None or 0 < p_start < p0)):
        raise ValueError("points must lie in (0, p0) on the 'below' side")

    if p_start is None:
        p_start = p0 * (1.0 + sign * delta_rel)
    g0 = x0 if g_start is None else g_start
    exclude = min(abs(p_start - p0), abs(p_end - p0))

    def rhs(p: float, g: np.ndarray) -> list[float]:
        gap = beta(p) - p
        if abs(gap) < 1e-14 * max(1.0, p) and abs(p - p0) > 0.5 * exclude:
            raise OdeSingularError(p)
        return [beta.derivative(p) * (x0 - g[0]) / gap]

    t_eval = np.linspace(p_start, p_end, n_samples)
    sol = solve_ivp(rhs, (p_start, p_end), [g0], t_eval=t_eval,
                    method="DOP853", rtol=1e-12, atol=1e-13 * max(1.0, abs(x0)))
    if not sol.success:
        raise RuntimeError(f"curve integration failed: {sol.message}")
    return sol.t, sol.y[0]


# ---------------------------------------------------------------------------
# Inverse ODE: implied beta of a static curve
# ---------------------------------------------------------------------------


def _curvature(kind, state, p: float, h_rel: float = 1e-5) -> float:
    h = h_rel * p
    return (kind.demand_slope(state, p + h) - kind.demand_slope(state, p - h)) / (2.0 * h)


def implied_beta(kind, state, p_grid: np.ndarray, delta_rel: float = 1e-7) -> BetaFunction:
    """Belief-pricing map a static curve is implicitly optimal for.

    Solves beta'(p) (g(p) - x0) + (beta(p) - p) g'(p) = 0 with
    beta(p0) = p0 outward from the operating point.  Curves that are
    flat away from p0 (step curves) force beta' = 0 and return the
    degenerate constant map beta = p0.

    Near p0 the equation is 0/0; a local series gives
    beta(p0 + e) = p0 + e/2 + g''(p0)/(12 g'(p0)) e^2 + O(e^3),
    which seeds the integration at p0 * (1 +/- delta_rel).
    """
    from .curves import CSMM, OptimalGaussian, OptimalLognormal

    p0 = state.p0
    p_grid = np.sort(np.asarray(p_grid, dtype=float))
    if np.any(p_grid <= 0):
        raise ValueError("price grid must be positive")

    step_like = isinstance(kind, CSMM) or (
        isinstance(kind, (OptimalGaussian, OptimalLognormal)) and kind.C == 0.0
    )
    if step_like:
        return BetaFunction(
            fn=lambda p: np.full_like(np.asarray(p, dtype=float), p0),
            deriv=lambda p: np.zeros_like(np.asarray(p, dtype=float)),
            provenance="implied-from-curve",
            known_fixed_point=p0,
            degenerate=True,
        )

    gp0 = kind.demand_slope(state, p0)
    if gp0 == 0.0:
        raise OdeSingularError(p0)
    b2 = _curvature(kind, state, p0) / (12.0 * gp0)
    x0 = state.x0

    def rhs(p: float, b: np.ndarray) -> list[float]:
        denom = kind.demand(state, p) - x0
        if denom == 0.0:
            raise OdeSingularError(p)
        return [(p - b[0]) * kind.demand_slope(state, p) / denom]

    solutions = {}
    for side, pts in (("above", p_grid[p_grid > p0]), ("below", p_grid[p_grid < p0])):
        sign = 1.0 if side == "above" else -1.0
        eps = sign * delta_rel * p0
        p_start = p0 + eps
        b_start = p0 + 0.5 * eps + b2 * eps**2
        p_far = pts[-1] if side == "above" else pts[0]
        if pts.size == 0 or (side == "above" and p_far <= p_start) or (
            side == "below" and p_far >= p_start
        ):
            continue
        sol = solve_ivp(rhs, (p_start, p_far), [b_start], dense_output=True,
                        method="DOP853", rtol=1e-12, atol=1e-13 * p0)
        if not sol.success:
            raise RuntimeError(f"implied-beta integration failed: {sol.message}")
        solutions[side] = (p_start, p_far, sol.sol)

    def evaluate(p: np.ndarray) -> np.ndarray:
        p_arr = np.atleast_1d(np.asarray(p, dtype=float))
        out = np.empty_like(p_arr)
        for i, pi in enumerate(p_arr):
            e = pi - p0
            if abs(e) <= delta_rel * p0:
                out[i] = p0 + 0.5 * e + b2 * e**2
            elif pi > p0 and "above" in solutions:
                out[i] = solutions["above"][2](pi)[0]
            elif pi < p0 and "below" in solutions:
                out[i] = solutions["below"][2](pi)[0]
            else:
                raise ValueError(f"price {pi} outside the integrated range")
        return out if np.ndim(p) else out[0]

    return BetaFunction(fn=evaluate, provenance="implied-from-curve",
                        known_fixed_point=p0)


# ---------------------------------------------------------------------------
# Closed-form implied betas
# ---------------------------------------------------------------------------


def cmmm_implied_beta(p: float | np.ndarray, p0: float, theta: float) -> float | np.ndarray:
    """Implied pricing map of a weighted constant-mean curve.

    beta(p) = (1-theta)/theta * p^theta p0^(1-theta)
              * (1 - (p0/p)^theta) / (1 - (p0/p)^(1-theta)),
    continuous through beta(p0) = p0 (series near the removable 0/0).
    """
    if not 0.0 < theta < 1.0:
        raise ValueError("theta must lie in (0, 1)")
    p_arr = np.atleast_1d(np.asarray(p, dtype=float))
    if np.any(p_arr <= 0) or p0 <= 0:
        raise ValueError("prices must be positive")
    u = p_arr / p0 - 1.0
    out = np.empty_like(p_arr)
    tiny = np.abs(u) < 1e-7
    # series: beta/p0 = 1 + u/2 + (theta - 2)/12 * u^2 + O(u^3)  (curvature of
    # the CMMM demand curve; matches sqrt(p0 p) at theta = 1/2)
    out[tiny] = p0 * (1.0 + 0.5 * u[tiny] + (theta - 2.0) / 12.0 * u[tiny] ** 2)
    r = (p0 / p_arr[~tiny]) ** theta
    s = (p0 / p_arr[~tiny]) ** (1.0 - theta)
    out[~tiny] = ((1.0 - theta) / theta * p_arr[~tiny] ** theta * p0 ** (1.0 - theta)
                  * (1.0 - r) / (1.0 - s))
    return out if np.ndim(p) else float(out[0])


def thm5_implied_beta(p: float | np.ndarray, p0: float, theta: float, sigma: float) -> float | np.ndarray:
    """Pricing map of the trader-reactive lognormal model: p^theta p0^(1-theta) e^(sigma^2/(2(1-theta)))."""
    if not 0.0 < theta < 1.0:
        raise ValueError("theta must lie in (0, 1)")
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    p_arr = np.asarray(p, dtype=float)
    if np.any(np.atleast_1d(p_arr) <= 0) or p0 <= 0:
        raise ValueError("prices must be positive")
    out = p_arr**theta * p0 ** (1.0 - theta) * math.exp(sigma**2 / (2.0 * (1.0 - theta)))
    return out if np.ndim(p) else float(out)
