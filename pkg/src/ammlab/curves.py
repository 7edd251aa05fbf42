"""Demand curves, reserve accounting, and trade execution.

Every market maker here is a *demand curve* g(p): the amount of asset the
pool holds once the marginal price has been moved to p.  g is
non-increasing; a trade that moves the operating point from p0 to p_trad
exchanges dx = g(p0) - g(p_trad) units of asset against
dy = -\int p dg(p) numeraire.  Signs are always from the pool's side:
dx > 0 means the pool sold asset, dy > 0 means it received numeraire.

Concrete families:

* ``CSMM``       -- all liquidity concentrated at the operating point; any
                    buy (sell) consumes the full asset (numeraire) side at
                    price p0.
* ``CPMM``       -- constant product x*y, g(p) = sqrt(k/p).
* ``CMMM(theta)``-- constant weighted mean x^theta * y^(1-theta).
* ``OptimalGaussian(K, ...)``  -- the adaptive family for additive-Gaussian
                    markets: flat below p0, max(0, xt - C*(p-p0)^(K/(1-K)))
                    above, with an optional point mass at p0 and an optional
                    power-law sell branch that makes the curve continuous
                    (the member whose effective price is exactly the
                    posterior-mean price for every trade).
* ``OptimalLognormal(K, ...)`` -- same structure for lognormal markets,
                    branch xt - C*(p^(1-K) - p0^(1-K))^(K/(1-K)) * p^(-K).
* mixed pools    -- (1-eps)*optimal + eps*expressive overlays that restore
                    price expressiveness, executed as two sub-pools sharing
                    one operating point.

The dy integrals of the optimal families are elementary, so trades use
exact closed forms; the quadrature route survives in the test-suite as an
independent oracle on those closed forms.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

from scipy.optimize import brentq

# K this close to 1 makes the branch exponent K/(1-K) overflow; the curve
# degenerates to the C=0 step curve.
_K_STEP_LIMIT = 1.0 - 1e-6
# Relative slack for p0-vs-reserves consistency checks.
_STATE_RTOL = 1e-9


class CurveError(ValueError):
    """Invalid curve parameters, inconsistent state, or unsupported trade."""


@dataclass(frozen=True)
class CurveState:
    """Operating point and reserves of one pool."""

    p0: float
    x0: float
    y0: float

    def __post_init__(self) -> None:
        if self.p0 <= 0:
            raise CurveError("operating point must be positive")
        if self.x0 < 0 or self.y0 < 0:
            raise CurveError("reserves must be non-negative")


@dataclass(frozen=True)
class TradeRecord:
    """One executed trade, from the pool's perspective."""

    t: int
    p_trad: float
    dx: float
    dy: float
    p_eff: float
    p0_before: float
    p0_after: float
    partial: bool = False


def _null_record(t: int, pt: float, p0: float) -> TradeRecord:
    return TradeRecord(t=t, p_trad=pt, dx=0.0, dy=0.0, p_eff=p0,
                       p0_before=p0, p0_after=p0)


def cmmm_theta(p_hat: float, x: float, y: float) -> float:
    """Weight that gives a CMMM pool with reserves (x, y) marginal price p_hat."""
    if p_hat <= 0:
        raise CurveError("price must be positive")
    if x < 0 or y < 0 or (x == 0 and y == 0):
        raise CurveError("need non-negative reserves, not both zero")
    return p_hat * x / (p_hat * x + y)


class Curve:
    """Base demand-curve interface; concrete families override everything."""

    def demand(self, state: CurveState, p: float) -> float:
        raise NotImplementedError

    def demand_slope(self, state: CurveState, p: float) -> float:
        """g'(p) where the curve is differentiable."""
        raise NotImplementedError

    def marginal_price(self, state: CurveState) -> float:
        return state.p0

    def execute(self, state: CurveState, p_trad: float, t: int = 0) -> tuple[CurveState, TradeRecord]:
        raise NotImplementedError

    def validate(self, state: CurveState) -> None:
        """Raise if the stored p0 disagrees with the reserve-implied price."""


def _check_price(p: float) -> None:
    if not p > 0:
        raise CurveError("price must be positive")


@dataclass(frozen=True)
class CSMM(Curve):
    """Constant-sum pool: the whole inventory trades at the operating price."""

    def demand(self, state: CurveState, p: float) -> float:
        _check_price(p)
        if p <= state.p0:
            return state.x0 + state.y0 / state.p0
        return 0.0

    def demand_slope(self, state: CurveState, p: float) -> float:
        return 0.0

    def execute(self, state: CurveState, p_trad: float, t: int = 0) -> tuple[CurveState, TradeRecord]:
        _check_price(p_trad)
        p0 = state.p0
        if p_trad == p0:
            return state, _null_record(t, p_trad, p0)
        if p_trad > p0:
            dx = state.x0
            dy = p0 * dx
        else:
            dx = -state.y0 / p0
            dy = -state.y0
        new = CurveState(p0=p0, x0=state.x0 - dx, y0=state.y0 + dy)
        p_eff = dy / dx if dx != 0.0 else p0
        rec = TradeRecord(t=t, p_trad=p_trad, dx=dx, dy=dy, p_eff=p_eff,
                          p0_before=p0, p0_after=p0)
        return new, rec


@dataclass(frozen=True)
class CPMM(Curve):
    """Constant-product pool x*y = k, demand g(p) = sqrt(k/p)."""

    def demand(self, state: CurveState, p: float) -> float:
        _check_price(p)
        return math.sqrt(state.x0 * state.y0 / p)

    def demand_slope(self, state: CurveState, p: float) -> float:
        _check_price(p)
        return -0.5 * math.sqrt(state.x0 * state.y0) * p ** -1.5

    def marginal_price(self, state: CurveState) -> float:
        if state.x0 == 0:
            raise CurveError("marginal price undefined with zero asset reserve")
        return state.y0 / state.x0

    def validate(self, state: CurveState) -> None:
        if state.x0 <= 0 or state.y0 <= 0:
            raise CurveError("constant-product pool needs positive reserves")
        implied = state.y0 / state.x0
        if abs(implied - state.p0) > _STATE_RTOL * state.p0:
            raise CurveError(f"p0={state.p0} but reserves imply {implied}")

    def execute(self, state: CurveState, p_trad: float, t: int = 0) -> tuple[CurveState, TradeRecord]:
        _check_price(p_trad)
        self.validate(state)
        p0 = state.p0
        if p_trad == p0:
            return state, _null_record(t, p_trad, p0)
        k = state.x0 * state.y0
        x1 = math.sqrt(k / p_trad)
        y1 = math.sqrt(k * p_trad)
        dx = state.x0 - x1
        dy = y1 - state.y0
        new = CurveState(p0=p_trad, x0=x1, y0=y1)
        rec = TradeRecord(t=t, p_trad=p_trad, dx=dx, dy=dy, p_eff=dy / dx,
                          p0_before=p0, p0_after=p_trad)
        return new, rec


@dataclass(frozen=True)
class CMMM(Curve):
    """Constant weighted-mean pool x^theta * y^(1-theta) = k."""

    theta: float

    def __post_init__(self) -> None:
        if not 0.0 < self.theta < 1.0:
            raise CurveError("theta must lie in (0, 1)")

    def demand(self, state: CurveState, p: float) -> float:
        _check_price(p)
        return state.x0 * (state.p0 / p) ** (1.0 - self.theta)

    def demand_slope(self, state: CurveState, p: float) -> float:
        return (self.theta - 1.0) * self.demand(state, p) / p

    def marginal_price(self, state: CurveState) -> float:
        if state.x0 == 0:
            raise CurveError("marginal price undefined with zero asset reserve")
        return self.theta * state.y0 / ((1.0 - self.theta) * state.x0)

    def validate(self, state: CurveState) -> None:
        if state.x0 <= 0 or state.y0 <= 0:
            raise CurveError("constant-mean pool needs positive reserves")
        implied = self.marginal_price(state)
        if abs(implied - state.p0) > _STATE_RTOL * state.p0:
            raise CurveError(f"p0={state.p0} but reserves imply {implied}")

    def execute(self, state: CurveState, p_trad: float, t: int = 0) -> tuple[CurveState, TradeRecord]:
        _check_price(p_trad)
        self.validate(state)
        p0 = state.p0
        if p_trad == p0:
            return state, _null_record(t, p_trad, p0)
        th = self.theta
        x1 = state.x0 * (p0 / p_trad) ** (1.0 - th)
        y1 = state.y0 * (p_trad / p0) ** th
        dx = state.x0 - x1
        dy = y1 - state.y0
        new = CurveState(p0=p_trad, x0=x1, y0=y1)
        rec = TradeRecord(t=t, p_trad=p_trad, dx=dx, dy=dy, p_eff=dy / dx,
                          p0_before=p0, p0_after=p_trad)
        return new, rec


def _power_exponent(K: float) -> float:
    return K / (1.0 - K)


@dataclass(frozen=True)
class OptimalGaussian(Curve):
    """Adaptive family for additive-Gaussian markets.

    Above p0 the branch is max(0, x_tilde - C*(p-p0)^(K/(1-K))); the gap
    between the asset reserve x0 and x_tilde is a point mass tradable at
    exactly p0.  Below p0 the default branch is flat (all numeraire
    offered at p0); passing ``sell_c`` replaces it with the symmetric
    power branch x0 + sell_c*(p0-p)^(K/(1-K)).  With x_tilde = x0 and
    positive C/sell_c the curve is continuous at p0 and every trade
    executes at effective price (1-K)*p0 + K*p_trad.
    """

    K: float
    C: float = 0.0
    x_tilde: float = 0.0
    sell_c: float | None = None

    def __post_init__(self) -> None:
        if not 0.0 < self.K < 1.0:
            raise CurveError("Kalman gain must lie in (0, 1)")
        if self.C < 0 or self.x_tilde < 0:
            raise CurveError("C and x_tilde must be non-negative")
        if self.sell_c is not None and self.sell_c <= 0:
            raise CurveError("sell_c must be positive when given")

    @property
    def _step(self) -> bool:
        return self.C == 0.0 or self.K > _K_STEP_LIMIT

    def demand(self, state: CurveState, p: float) -> float:
        _check_price(p)
        m = _power_exponent(min(self.K, _K_STEP_LIMIT))
        if p > state.p0:
            if self._step:
                return self.x_tilde
            return max(0.0, self.x_tilde - self.C * (p - state.p0) ** m)
        if p == state.p0:
            return state.x0
        if self.sell_c is None:
            return state.x0 + state.y0 / state.p0
        return state.x0 + self.sell_c * (state.p0 - p) ** m

    def demand_slope(self, state: CurveState, p: float) -> float:
        m = _power_exponent(min(self.K, _K_STEP_LIMIT))
        if p > state.p0:
            if self._step or self.x_tilde - self.C * (p - state.p0) ** m <= 0:
                return 0.0
            return -self.C * m * (p - state.p0) ** (m - 1.0)
        if p < state.p0 and self.sell_c is not None:
            return -self.sell_c * m * (state.p0 - p) ** (m - 1.0)
        return 0.0

    def validate(self, state: CurveState) -> None:
        if self.x_tilde > state.x0 * (1.0 + _STATE_RTOL):
            raise CurveError("x_tilde cannot exceed the asset reserve")

    def _buy(self, state: CurveState, pt: float) -> tuple[float, float, float, bool]:
        """Return (dx, dy, p0_after, partial) for pt > p0."""
        p0 = state.p0
        mass = max(0.0, state.x0 - min(self.x_tilde, state.x0))
        if self._step:
            return mass, p0 * mass, p0, False
        m = _power_exponent(self.K)
        x_t = min(self.x_tilde, state.x0)
        p_zero = p0 + (x_t / self.C) ** (1.0 / m) if x_t > 0 else p0
        partial = pt > p_zero and x_t > 0
        q = min(pt, p_zero) if x_t > 0 else p0
        D = q - p0
        dx_branch = min(x_t, self.C * D ** m)
        dy_branch = self.C * (p0 * D ** m + m * D ** (m + 1.0) / (m + 1.0))
        p_after = q if D > 0 else p0
        return mass + dx_branch, p0 * mass + dy_branch, p_after, partial

    def _sell(self, state: CurveState, pt: float) -> tuple[float, float, float, bool]:
        """Return (dx, dy, p0_after, partial) for pt < p0."""
        p0 = state.p0
        if self.sell_c is None:
            return -state.y0 / p0, -state.y0, p0, False
        m = _power_exponent(self.K)
        c = self.sell_c

        def spend(U: float) -> float:
            return c * (p0 * U ** m - m * U ** (m + 1.0) / (m + 1.0))

        U = p0 - pt
        partial = spend(U) > state.y0
        if partial:
            U = brentq(lambda u: spend(u) - state.y0, 0.0, U, xtol=1e-15, rtol=1e-14)
        dx = -c * U ** m
        dy = -spend(U)
        return dx, dy, p0 - U, partial

    def execute(self, state: CurveState, p_trad: float, t: int = 0) -> tuple[CurveState, TradeRecord]:
        _check_price(p_trad)
        self.validate(state)
        p0 = state.p0
        if p_trad == p0:
            return state, _null_record(t, p_trad, p0)
        if p_trad > p0:
            dx, dy, p_after, partial = self._buy(state, p_trad)
        else:
            dx, dy, p_after, partial = self._sell(state, p_trad)
        new = CurveState(p0=p_after, x0=state.x0 - dx, y0=state.y0 + dy)
        p_eff = dy / dx if dx != 0.0 else p0
        rec = TradeRecord(t=t, p_trad=p_trad, dx=dx, dy=dy, p_eff=p_eff,
                          p0_before=p0, p0_after=p_after, partial=partial)
        return new, rec


@dataclass(frozen=True)
class OptimalLognormal(Curve):
    """Adaptive family for lognormal markets.

    Branch above p0: max(0, x_tilde - C*(p^(1-K) - p0^(1-K))^(K/(1-K)) * p^(-K)).
    ``kappa`` records the belief correction factor exp(P/(2*(1-K))) tying
    p0 to the log-price estimate; it does not enter the curve shape.  As
    in the Gaussian family, ``sell_c`` switches the flat sell side to the
    symmetric power branch and x_tilde = x0 with C, sell_c > 0 gives the
    continuous member whose effective price is p0^(1-K) * p_trad^K for
    every trade.
    """

    K: float
    C: float = 0.0
    x_tilde: float = 0.0
    sell_c: float | None = None
    kappa: float = 1.0

    def __post_init__(self) -> None:
        if not 0.0 < self.K < 1.0:
            raise CurveError("Kalman gain must lie in (0, 1)")
        if self.C < 0 or self.x_tilde < 0:
            raise CurveError("C and x_tilde must be non-negative")
        if self.sell_c is not None and self.sell_c <= 0:
            raise CurveError("sell_c must be positive when given")
        if self.kappa < 1.0:
            raise CurveError("kappa = exp(P/(2(1-K))) is always >= 1")

    @property
    def _step(self) -> bool:
        return self.C == 0.0 or self.K > _K_STEP_LIMIT

    def _kap(self, state: CurveState) -> float:
        return state.p0 ** (1.0 - self.K)

    def demand(self, state: CurveState, p: float) -> float:
        _check_price(p)
        K = min(self.K, _K_STEP_LIMIT)
        m = _power_exponent(K)
        kap = state.p0 ** (1.0 - K)
        if p > state.p0:
            if self._step:
                return self.x_tilde
            return max(0.0, self.x_tilde - self.C * (p ** (1.0 - K) - kap) ** m * p ** -K)
        if p == state.p0:
            return state.x0
        if self.sell_c is None:
            return state.x0 + state.y0 / state.p0
        return state.x0 + self.sell_c * (kap - p ** (1.0 - K)) ** m * p ** -K

    def demand_slope(self, state: CurveState, p: float) -> float:
        K = min(self.K, _K_STEP_LIMIT)
        m = _power_exponent(K)
        kap = state.p0 ** (1.0 - K)
        if p > state.p0:
            if self._step or self.demand(state, p) <= 0:
                return 0.0
            return -self.C * K * kap * p ** (-K - 1.0) * (p ** (1.0 - K) - kap) ** (m - 1.0)
        if p < state.p0 and self.sell_c is not None:
            return -self.sell_c * K * kap * p ** (-K - 1.0) * (kap - p ** (1.0 - K)) ** (m - 1.0)
        return 0.0

    def validate(self, state: CurveState) -> None:
        if self.x_tilde > state.x0 * (1.0 + _STATE_RTOL):
            raise CurveError("x_tilde cannot exceed the asset reserve")

    def _buy(self, state: CurveState, pt: float) -> tuple[float, float, float, bool]:
        p0 = state.p0
        mass = max(0.0, state.x0 - min(self.x_tilde, state.x0))
        if self._step:
            return mass, p0 * mass, p0, False
        K = self.K
        m = _power_exponent(K)
        kap = self._kap(state)
        x_t = min(self.x_tilde, state.x0)

        def branch(q: float) -> float:
            return x_t - self.C * (q ** (1.0 - K) - kap) ** m * q ** -K

        partial = x_t > 0 and branch(pt) < 0
        q = pt
        if partial:
            q = brentq(branch, p0, pt, xtol=1e-300, rtol=1e-15)
        if x_t <= 0:
            return mass, p0 * mass, p0, False
        dx_branch = min(x_t, x_t - branch(q))
        dy_branch = self.C * kap * (q ** (1.0 - K) - kap) ** m
        return mass + dx_branch, p0 * mass + dy_branch, q, partial

    def _sell(self, state: CurveState, pt: float) -> tuple[float, float, float, bool]:
        p0 = state.p0
        if self.sell_c is None:
            return -state.y0 / p0, -state.y0, p0, False
        K = self.K
        m = _power_exponent(K)
        kap = self._kap(state)
        c = self.sell_c

        def spend(q: float) -> float:
            return c * kap * (kap - q ** (1.0 - K)) ** m

        q = pt
        partial = spend(pt) > state.y0
        if partial:
            # closed-form exhaustion point: spend(q) = y0
            z = (state.y0 / (c * kap)) ** (1.0 / m)
            if z >= kap:
                raise CurveError("numeraire reserve cannot cover the sell branch")
            q = (kap - z) ** (1.0 / (1.0 - K))
        dx = -c * (kap - q ** (1.0 - K)) ** m * q ** -K
        dy = -spend(q)
        return dx, dy, q, partial

    def execute(self, state: CurveState, p_trad: float, t: int = 0) -> tuple[CurveState, TradeRecord]:
        _check_price(p_trad)
        self.validate(state)
        p0 = state.p0
        if p_trad == p0:
            return state, _null_record(t, p_trad, p0)
        if p_trad > p0:
            dx, dy, p_after, partial = self._buy(state, p_trad)
        else:
            dx, dy, p_after, partial = self._sell(state, p_trad)
        new = CurveState(p0=p_after, x0=state.x0 - dx, y0=state.y0 + dy)
        p_eff = dy / dx if dx != 0.0 else p0
        rec = TradeRecord(t=t, p_trad=p_trad, dx=dx, dy=dy, p_eff=p_eff,
                          p0_before=p0, p0_after=p_after, partial=partial)
        return new, rec


# ---------------------------------------------------------------------------
# Mixed (optimal + expressive) curves
# ---------------------------------------------------------------------------


def mixed_demand(
    opt: Curve,
    opt_state: CurveState,
    exp: Curve,
    exp_state: CurveState,
    epsilon: float,
    p: float,
) -> float:
    """Demand of the (1-eps)*optimal + eps*expressive overlay."""
    if not 0.0 <= epsilon <= 1.0:
        raise CurveError("epsilon must lie in [0, 1]")
    return (1.0 - epsilon) * opt.demand(opt_state, p) + epsilon * exp.demand(exp_state, p)


@dataclass(frozen=True)
class MixedPool:
    """Two sub-pools sharing an operating point, traded in lockstep.

    The mixing weight is realized in the reserve split at construction,
    so each trade is ordinary execution on both components.
    """

    opt: Curve
    opt_state: CurveState
    exp: Curve
    exp_state: CurveState

    @classmethod
    def csmm_cpmm(cls, p0: float, x0: float, y0: float, epsilon: float) -> "MixedPool":
        """Classic overlay: step curve with a thin constant-product layer."""
        if not 0.0 < epsilon < 1.0:
            raise CurveError("epsilon must lie in (0, 1)")
        opt_state = CurveState(p0=p0, x0=(1.0 - epsilon) * x0, y0=(1.0 - epsilon) * y0)
        exp_state = CurveState(p0=p0, x0=epsilon * x0, y0=epsilon * y0)
        return cls(opt=CSMM(), opt_state=opt_state, exp=CPMM(), exp_state=exp_state)

    def demand(self, p: float) -> float:
        return self.opt.demand(self.opt_state, p) + self.exp.demand(self.exp_state, p)

    def execute(self, p_trad: float, t: int = 0) -> tuple["MixedPool", TradeRecord]:
        s1, r1 = self.opt.execute(self.opt_state, p_trad, t)
        s2, r2 = self.exp.execute(self.exp_state, p_trad, t)
        dx = r1.dx + r2.dx
        dy = r1.dy + r2.dy
        p_eff = dy / dx if dx != 0.0 else self.opt_state.p0
        rec = TradeRecord(t=t, p_trad=p_trad, dx=dx, dy=dy, p_eff=p_eff,
                          p0_before=self.opt_state.p0,
                          p0_after=max(r1.p0_after, r2.p0_after),
                          partial=r1.partial or r2.partial)
        return replace(self, opt_state=s1, exp_state=s2), rec

    def marginal_price(self, bracket: tuple[float, float]) -> float:
        """Operating price implied by total reserves: inverts the mixed demand."""
        target = self.opt_state.x0 + self.exp_state.x0

        def gap(p: float) -> float:
            return self.demand(p) - target

        return brentq(gap, bracket[0], bracket[1], xtol=1e-300, rtol=1e-12)


# ---------------------------------------------------------------------------
# Shared helpers
# ---------------------------------------------------------------------------


def execute_trade(kind: Curve, state: CurveState, p_trad: float, t: int = 0) -> tuple[CurveState, TradeRecord]:
    """Functional entry point; same as ``kind.execute``."""
    return kind.execute(state, p_trad, t)


def marginal_price(kind: Curve, state: CurveState) -> float:
    return kind.marginal_price(state)


def invariant_value(kind: Curve, state: CurveState) -> float | None:
    """Bonding-curve invariant for the static families, None otherwise."""
    if isinstance(kind, CPMM):
        return state.x0 * state.y0
    if isinstance(kind, CMMM):
        return state.x0 ** kind.theta * state.y0 ** (1.0 - kind.theta)
    return None


def invert_demand(kind: Curve, state: CurveState, target_x: float,
                  bracket: tuple[float, float]) -> float:
    """Price at which the curve holds ``target_x`` asset (monotone bisection)."""
    return brentq(lambda p: kind.demand(state, p) - target_x,
                  bracket[0], bracket[1], xtol=1e-300, rtol=1e-12)
