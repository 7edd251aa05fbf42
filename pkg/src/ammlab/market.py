"""Hidden price process, trader observations, and adversarial flow.

The market is a discrete-time random walk for the hidden external price,
observed by one trader per step through additive or multiplicative
Gaussian noise.  An optional adversarial subpopulation reports prices
displaced several noise standard deviations in a fixed direction, and an
optional meta-volatility process lets the jump and noise scales
themselves wander between trades.

All randomness flows through numpy ``Generator`` objects seeded from a
``SeedSequence``; :func:`spawn_streams` hands out independent child
streams per purpose so that price paths, trader noise, adversary
selection, and scale evolution stay reproducible and independently
re-runnable.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from enum import Enum

import numpy as np


class Dynamics(str, Enum):
    """Price-jump / trader-noise family: additive Gaussian or lognormal."""

    ADDITIVE = "additive"
    LOGNORMAL = "lognormal"


class PathRejected(ValueError):
    """An additive-Gaussian path went non-positive and the run is invalid.

    Truncating or reflecting such paths would silently bias loss
    statistics, so the whole path is rejected instead.
    """


@dataclass(frozen=True)
class MarketParams:
    """Scale parameters of the price process and trader noise.

    sigma: standard deviation of price jumps (numeraire units for the
        additive model, log-units for the lognormal model).
    eta: standard deviation of trader observation noise, same units.
    """

    sigma: float
    eta: float
    kind: Dynamics = Dynamics.ADDITIVE

    def __post_init__(self) -> None:
        if self.sigma < 0 or self.eta < 0:
            raise ValueError("sigma and eta must be non-negative")


@dataclass(frozen=True)
class PriceState:
    """Current external price with its discrete time index."""

    p_ext: float
    t: int = 0


@dataclass(frozen=True)
class AdversaryParams:
    """Adversarial trader population.

    A fraction ``alpha`` of arriving traders report a price displaced by
    U(bias_lo, bias_hi) * eta in the configured direction (log-space
    displacement for lognormal markets).  ``bias_lo == bias_hi`` gives a
    fixed displacement instead of a uniform one.
    """

    alpha: float
    bias_lo: float = 5.0
    bias_hi: float = 7.0
    direction: str = "up"  # "up" | "down"

    def __post_init__(self) -> None:
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must be in [0, 1]")
        if self.bias_lo <= 0 or self.bias_hi < self.bias_lo:
            raise ValueError("need 0 < bias_lo <= bias_hi")
        if self.direction not in ("up", "down"):
            raise ValueError("direction must be 'up' or 'down'")

    @property
    def sign(self) -> float:
        return 1.0 if self.direction == "up" else -1.0


@dataclass(frozen=True)
class VolOfVolParams:
    """Random walk applied to (sigma, eta) after every trade."""

    sigma_metavol: float
    floor: float = 0.01

    def __post_init__(self) -> None:
        if self.sigma_metavol < 0:
            raise ValueError("sigma_metavol must be non-negative")
        if self.floor <= 0:
            raise ValueError("floor must be positive")


def spawn_streams(seed: int, names: tuple[str, ...]) -> dict[str, np.random.Generator]:
    """Split one seed into named independent generators.

    Children are assigned by position in ``names``, so the same seed and
    name list always yields the same streams regardless of which streams
    the caller ends up drawing from.
    """
    children = np.random.SeedSequence(seed).spawn(len(names))
    return {name: np.random.default_rng(ss) for name, ss in zip(names, children)}


def step_price(state: PriceState, params: MarketParams, rng: np.random.Generator) -> PriceState:
    """Advance the hidden price by one random-walk step."""
    if params.kind is Dynamics.LOGNORMAL:
        if state.p_ext <= 0:
            raise ValueError("lognormal dynamics require a positive price")
        p_next = state.p_ext * np.exp(rng.normal(0.0, params.sigma))
    else:
        p_next = state.p_ext + rng.normal(0.0, params.sigma)
    return PriceState(p_ext=float(p_next), t=state.t + 1)


def observe_trader(p_ext: float, params: MarketParams, rng: np.random.Generator) -> float:
    """Noisy trader view of the hidden price."""
    if params.kind is Dynamics.LOGNORMAL:
        if p_ext <= 0:
            raise ValueError("lognormal dynamics require a positive price")
        return float(p_ext * np.exp(rng.normal(0.0, params.eta)))
    return float(p_ext + rng.normal(0.0, params.eta))


def observe_adversarial(
    p_ext: float,
    params: MarketParams,
    adv: AdversaryParams,
    rng: np.random.Generator,
) -> float:
    """Adversarial trader view: displaced bias_lo..bias_hi noise sigmas."""
    mult = rng.uniform(adv.bias_lo, adv.bias_hi)
    shift = adv.sign * mult * params.eta
    if params.kind is Dynamics.LOGNORMAL:
        return float(p_ext * np.exp(shift))
    return float(p_ext + shift)


def step_market_params(
    params: MarketParams, vv: VolOfVolParams, rng: np.random.Generator
) -> MarketParams:
    """One meta-volatility step: independent walks on sigma and eta, floored."""
    sigma = max(vv.floor, params.sigma + rng.normal(0.0, vv.sigma_metavol))
    eta = max(vv.floor, params.eta + rng.normal(0.0, vv.sigma_metavol))
    return replace(params, sigma=sigma, eta=eta)


# ---------------------------------------------------------------------------
# Vectorized path generation (the form the experiment runner consumes).
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MarketPath:
    """Pre-drawn market randomness for one scenario run of ``n`` trades.

    p_ext[t] is the hidden price seen by trade t; p_trad[t] the price the
    arriving trader acts on (already adversarial where is_adv[t]);
    sigma[t], eta[t] the scales in force at trade t (constant arrays
    unless a meta-volatility process is configured).
    """

    p_ext: np.ndarray
    p_trad: np.ndarray
    is_adv: np.ndarray
    sigma: np.ndarray
    eta: np.ndarray
    kind: Dynamics
    p_init: float


def simulate_path(
    n: int,
    p_init: float,
    params: MarketParams,
    seed: int,
    adversary: AdversaryParams | None = None,
    volvol: VolOfVolParams | None = None,
) -> MarketPath:
    """Draw a full market path: hidden prices, trader prices, adversary picks.

    The hidden path, trader noise, adversary selection/bias, and scale
    walks come from separate child streams of ``seed``, so e.g. turning
    the adversary on does not perturb the hidden path.
    """
    if n < 1:
        raise ValueError("need at least one trade")
    if params.kind is Dynamics.LOGNORMAL and p_init <= 0:
        raise ValueError("lognormal dynamics require a positive initial price")

    streams = spawn_streams(seed, ("jumps", "noise", "adv_pick", "adv_bias", "volvol"))

    if volvol is not None and volvol.sigma_metavol > 0:
        vv_steps = streams["volvol"].normal(0.0, volvol.sigma_metavol, size=(n, 2))
        sigma = np.empty(n)
        eta = np.empty(n)
        s, e = params.sigma, params.eta
        for t in range(n):
            s = max(volvol.floor, s + vv_steps[t, 0])
            e = max(volvol.floor, e + vv_steps[t, 1])
            sigma[t] = s
            eta[t] = e
    else:
        sigma = np.full(n, params.sigma)
        eta = np.full(n, params.eta)

    jumps = streams["jumps"].standard_normal(n) * sigma
    noise = streams["noise"].standard_normal(n) * eta

    if params.kind is Dynamics.LOGNORMAL:
        p_ext = p_init * np.exp(np.cumsum(jumps))
        p_trad = p_ext * np.exp(noise)
    else:
        p_ext = p_init + np.cumsum(jumps)
        p_trad = p_ext + noise
        if np.any(p_ext <= 0) or np.any(p_trad <= 0):
            raise PathRejected(
                f"additive path went non-positive (seed={seed}, sigma={params.sigma}, "
                f"eta={params.eta}); rerun with a larger p_init"
            )

    is_adv = np.zeros(n, dtype=bool)
    if adversary is not None and adversary.alpha > 0:
        is_adv = streams["adv_pick"].random(n) < adversary.alpha
        mult = streams["adv_bias"].uniform(adversary.bias_lo, adversary.bias_hi, size=n)
        shift = adversary.sign * mult * eta
        if params.kind is Dynamics.LOGNORMAL:
            p_trad = np.where(is_adv, p_ext * np.exp(shift), p_trad)
        else:
            p_trad = np.where(is_adv, p_ext + shift, p_trad)

    return MarketPath(
        p_ext=p_ext,
        p_trad=p_trad,
        is_adv=is_adv,
        sigma=sigma,
        eta=eta,
        kind=params.kind,
        p_init=p_init,
    )
