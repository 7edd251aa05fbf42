"""Scenario definition and execution: the four experiment families.

A scenario wires together one market path (hidden prices, trader prices,
optional adversaries and drifting scales) and one maker:

* ``static_cpmm`` / ``static_cmmm`` -- fixed curves whose operating point
  just tracks trades;
* ``kf``            -- known-parameter Kalman tracker publishing a
  weighted-mean pool re-anchored at its price estimate each trade;
* ``akf`` / ``robust_akf`` -- the same maker estimating (sigma, eta) by
  (robust) EM over a trailing window;
* ``optimal_family`` -- the Kalman tracker publishing the optimal curve
  family itself: the continuous two-sided member that prices every trade
  at the posterior mean (epsilon = 0), or the step + epsilon-CPMM overlay.

Per-trade losses are measured against the hidden price at trade time.
Common random numbers across makers: the market path depends only on
(seed, market parameters), never on the maker.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import _kernels
from .curves import CPMM, CMMM, CurveState, MixedPool
from .market import (AdversaryParams, Dynamics, MarketParams, MarketPath,
                     VolOfVolParams, simulate_path, spawn_streams)
from .metrics import LossLedger, oracle_rmsd

MAKERS = ("kf", "akf", "robust_akf", "static_cpmm", "static_cmmm", "optimal_family")

_NAN = float("nan")


class ConfigError(ValueError):
    """Scenario configuration inconsistent; raised before any simulation."""


@dataclass(frozen=True)
class EmSettings:
    tol: float = 1e-6
    max_iter: int = 100
    guesses: tuple[float, float] | None = None


@dataclass(frozen=True)
class ScenarioConfig:
    sigma: float = 0.5
    eta: float = 0.5
    dynamics: str = "additive"
    maker: str = "kf"
    horizon: int = 10_000
    seeds: tuple[int, ...] = (0,)
    p_init: float = 2000.0
    x_init: float = 1000.0
    theta: float = 0.5
    adversary: AdversaryParams | None = None
    volvol: VolOfVolParams | None = None
    window: int = 256
    refit_every: int = 64
    warmup: int = 64
    em: EmSettings = field(default_factory=EmSettings)
    curve: str = "cmmm"
    opt_epsilon: float = 0.0
    opt_trade_frac: float = 0.02

    def validate(self) -> None:
        if self.horizon < 1:
            raise ConfigError("horizon must be at least 1")
        if len(self.seeds) == 0:
            raise ConfigError("need at least one seed")
        if self.maker not in MAKERS:
            raise ConfigError(f"unknown maker {self.maker!r}; choose from {MAKERS}")
        if self.dynamics not in ("additive", "lognormal"):
            raise ConfigError("dynamics must be 'additive' or 'lognormal'")
        if self.sigma < 0 or self.eta < 0:
            raise ConfigError("sigma and eta must be non-negative")
        if self.p_init <= 0 or self.x_init <= 0:
            raise ConfigError("p_init and x_init must be positive")
        if not 0.0 < self.theta < 1.0:
            raise ConfigError("theta must lie in (0, 1)")
        if self.maker in ("akf", "robust_akf"):
            if self.window < 10:
                raise ConfigError("window must be at least 10")
            if self.horizon < 10:
                raise ConfigError("adaptive makers need a horizon of at least 10")
            if self.refit_every < 1 or self.warmup < 10:
                raise ConfigError("refit_every must be >= 1 and warmup >= 10")
        if not 0.0 <= self.opt_epsilon < 1.0:
            raise ConfigError("opt_epsilon must lie in [0, 1)")
        if self.curve not in ("cmmm", "optimal"):
            raise ConfigError("curve must be 'cmmm' or 'optimal'")

    @property
    def market(self) -> MarketParams:
        return MarketParams(sigma=self.sigma, eta=self.eta, kind=Dynamics(self.dynamics))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["seeds"] = list(self.seeds)
        if self.em.guesses is not None:
            d["em"]["guesses"] = list(self.em.guesses)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioConfig":
        d = dict(d)
        if d.get("adversary") is not None:
            d["adversary"] = AdversaryParams(**d["adversary"])
        if d.get("volvol") is not None:
            d["volvol"] = VolOfVolParams(**d["volvol"])
        if "em" in d and d["em"] is not None and not isinstance(d["em"], EmSettings):
            em = dict(d["em"])
            if em.get("guesses") is not None:
                em["guesses"] = tuple(em["guesses"])
            d["em"] = EmSettings(**em)
        if "seeds" in d:
            d["seeds"] = tuple(d["seeds"])
        return cls(**d)


@dataclass
class ScenarioResult:
    maker: str
    seed: int
    ledger: LossLedger
    trace: dict[str, np.ndarray]
    rmsd: float

    def mean_pct(self, burn_in: int = 0, weighting: str = "trades") -> float:
        return self.ledger.mean_pct(burn_in=burn_in, weighting=weighting)


def _y_init_for(maker: str, theta: float, p_init: float, x_init: float) -> float:
    if maker == "static_cmmm":
        return p_init * x_init * (1.0 - theta) / theta
    return p_init * x_init


def run_scenario(config: ScenarioConfig, seed: int | None = None) -> ScenarioResult:
    """Simulate one market path and drive the configured maker across it."""
    config.validate()
    seed = int(config.seeds[0] if seed is None else seed)
    path = simulate_path(
        n=config.horizon,
        p_init=config.p_init,
        params=config.market,
        seed=seed,
        adversary=config.adversary,
        volvol=config.volvol,
    )
    lognormal = config.dynamics == "lognormal"
    p_trad = path.p_trad
    y_obs = np.log(p_trad) if lognormal else p_trad
    x_init = config.x_init
    y_init = _y_init_for(config.maker, config.theta, config.p_init, x_init)
    em_g = config.em.guesses
    guess_s2 = em_g[0] ** 2 if em_g is not None else 0.0
    guess_e2 = em_g[1] ** 2 if em_g is not None else 0.0

    sigma_hat = np.full(config.horizon, _NAN)
    eta_hat = np.full(config.horizon, _NAN)
    weight = np.full(config.horizon, _NAN)
    gain = np.full(config.horizon, _NAN)
    kvar = np.full(config.horizon, _NAN)

    if config.maker in ("static_cpmm", "static_cmmm"):
        theta = 0.5 if config.maker == "static_cpmm" else config.theta
        p0, p_eff, dx, dy = _kernels.static_cmmm_scenario(
            p_trad, theta, config.p_init, x_init, y_init)
        est_post = p_trad.copy()
    elif config.maker == "kf" and config.curve == "cmmm":
        p0, p_eff, dx, dy, gain, kvar, est_post = _kernels.kf_cmmm_scenario(
            y_obs, p_trad, path.sigma, path.eta, config.p_init, x_init, y_init, lognormal)
        sigma_hat, eta_hat = path.sigma.copy(), path.eta.copy()
    elif (config.maker == "optimal_family" and config.opt_epsilon == 0.0) or (
            config.maker == "kf" and config.curve == "optimal"):
        p0, p_eff, dx, dy, gain, kvar, est_post = _kernels.optimal_exact_scenario(
            y_obs, p_trad, path.sigma, path.eta, config.p_init, x_init, y_init,
            lognormal, config.opt_trade_frac)
        sigma_hat, eta_hat = path.sigma.copy(), path.eta.copy()
    elif config.maker == "optimal_family":
        p0, p_eff, dx, dy, gain, kvar, est_post = _run_mixed_maker(config, path, y_obs)
        sigma_hat, eta_hat = path.sigma.copy(), path.eta.copy()
    else:  # akf | robust_akf
        robust = config.maker == "robust_akf"
        (p0, p_eff, dx, dy, gain, kvar, s2_arr, e2_arr, weight, est_post) = _kernels.akf_scenario(
            y_obs, p_trad, config.p_init, x_init, y_init,
            config.window, config.refit_every, config.warmup,
            config.em.tol, config.em.max_iter, _kernels.VAR_FLOOR, _kernels.W_MAX,
            robust, lognormal, guess_s2, guess_e2,
            config.curve == "optimal", config.opt_trade_frac)
        sigma_hat = np.sqrt(s2_arr)
        eta_hat = np.sqrt(e2_arr)

    pnl = (p_eff - path.p_ext) * dx
    notional = path.p_ext * np.abs(dx)
    t = np.arange(config.horizon, dtype=np.int64)
    ledger = LossLedger.from_arrays(t, pnl, notional)
    trace = {
        "t": t,
        "p_ext": path.p_ext,
        "p_trad": p_trad,
        "p0": p0,
        "p_eff": p_eff,
        "dx": dx,
        "dy": dy,
        "pnl": pnl,
        "pct": ledger.pct,
        "estimate": est_post,
        "gain": gain,
        "kf_var": kvar,
        "sigma_hat": sigma_hat,
        "eta_hat": eta_hat,
        "weight": weight,
        "is_adv": path.is_adv.astype(np.int64),
    }
    return ScenarioResult(
        maker=config.maker,
        seed=seed,
        ledger=ledger,
        trace=trace,
        rmsd=oracle_rmsd(est_post, path.p_ext),
    )


def _run_mixed_maker(config: ScenarioConfig, path: MarketPath, y_obs: np.ndarray):
    """Kalman tracker publishing the step + epsilon-CPMM overlay (object path)."""
    n = config.horizon
    lognormal = config.dynamics == "lognormal"
    eps = config.opt_epsilon
    p0_arr = np.empty(n)
    p_eff = np.empty(n)
    dx = np.empty(n)
    dy = np.empty(n)
    gain = np.empty(n)
    kvar = np.empty(n)
    est_post = np.empty(n)
    m = math.log(config.p_init) if lognormal else config.p_init
    P = 0.0
    x, yres = config.x_init, config.p_init * config.x_init
    for t in range(n):
        s2 = path.sigma[t] ** 2
        e2 = path.eta[t] ** 2
        p_pred = P + s2
        K = p_pred / (p_pred + e2) if p_pred + e2 > 0 else 0.0
        p0 = math.exp(m + 0.5 * p_pred) if lognormal else m
        pool = MixedPool.csmm_cpmm(p0, x, yres, eps)
        pool, rec = pool.execute(float(path.p_trad[t]), t)
        x = pool.opt_state.x0 + pool.exp_state.x0
        yres = pool.opt_state.y0 + pool.exp_state.y0
        p0_arr[t] = p0
        p_eff[t] = rec.p_eff
        dx[t] = rec.dx
        dy[t] = rec.dy
        gain[t] = K
        m = m + K * (y_obs[t] - m)
        P = (1.0 - K) * p_pred
        kvar[t] = P
        est_post[t] = math.exp(m + 0.5 * (P + s2)) if lognormal else m
    return p0_arr, p_eff, dx, dy, gain, kvar, est_post


# ---------------------------------------------------------------------------
# Sweeps
# ---------------------------------------------------------------------------

SWEEP_AXES = ("sigma", "eta", "alpha", "sigma_metavol")


@dataclass(frozen=True)
class SweepSpec:
    base: ScenarioConfig
    axis: str
    values: tuple[float, ...]
    makers: tuple[str, ...] = ()
    burn_in: int = 0

    def validate(self) -> None:
        if self.axis not in SWEEP_AXES:
            raise ConfigError(f"axis must be one of {SWEEP_AXES}")
        if len(self.values) == 0:
            raise ConfigError("sweep needs at least one axis value")
        if any(b <= a for a, b in zip(self.values, self.values[1:])):
            raise ConfigError("axis values must be strictly increasing")
        for maker in self.makers:
            if maker not in MAKERS:
                raise ConfigError(f"unknown maker {maker!r}")


def _apply_axis(base: ScenarioConfig, axis: str, value: float) -> ScenarioConfig:
    if axis == "sigma":
        return replace(base, sigma=value)
    if axis == "eta":
        return replace(base, eta=value)
    if axis == "alpha":
        adv = base.adversary or AdversaryParams(alpha=0.0)
        return replace(base, adversary=replace(adv, alpha=value))
    vv = base.volvol or VolOfVolParams(sigma_metavol=0.0)
    return replace(base, volvol=replace(vv, sigma_metavol=value))


@dataclass
class SweepResult:
    axis: str
    rows: list[dict]        # one per (axis value, maker), seed-aggregated
    detail: list[dict]      # one per (axis value, maker, seed)


def run_sweep(spec: SweepSpec) -> SweepResult:
    """Grid of scenarios: per (axis value, maker), loss statistics across seeds.

    Rows come out sorted by (axis value, maker, seed) and each scenario
    is a pure function of (base config, axis value, maker, seed), so
    sharded executions concatenate to the identical table.
    """
    spec.validate()
    makers = spec.makers or (spec.base.maker,)
    rows: list[dict] = []
    detail: list[dict] = []
    for value in spec.values:
        for maker in sorted(makers):
            cfg = replace(_apply_axis(spec.base, spec.axis, value), maker=maker)
            seed_means = []
            seed_rmsds = []
            n_trades = 0
            for seed in cfg.seeds:
                try:
                    res = run_scenario(cfg, seed)
                except Exception as exc:
                    raise RuntimeError(f"{spec.axis}={value}, maker={maker}, seed={seed}: {exc}") from exc
                mean_pct = res.mean_pct(burn_in=spec.burn_in)
                seed_means.append(mean_pct)
                seed_rmsds.append(res.rmsd)
                n_trades += res.ledger.trades - spec.burn_in
                detail.append({
                    "axis_value": value, "maker": maker, "seed": seed,
                    "mean_pct_loss": mean_pct, "rmsd": res.rmsd,
                    "n_trades": res.ledger.trades - spec.burn_in,
                })
            means = np.array(seed_means)
            rmsds = np.array(seed_rmsds)
            se = float(np.std(means, ddof=1) / math.sqrt(means.size)) if means.size > 1 else 0.0
            rmsd_se = float(np.std(rmsds, ddof=1) / math.sqrt(rmsds.size)) if rmsds.size > 1 else 0.0
            rows.append({
                "axis_value": value, "maker": maker,
                "mean_pct_loss": float(means.mean()), "se": se,
                "rmsd": float(rmsds.mean()), "rmsd_se": rmsd_se,
                "n_trades": n_trades,
            })
    return SweepResult(axis=spec.axis, rows=rows, detail=detail)


# ---------------------------------------------------------------------------
# Theorem verification suites
# ---------------------------------------------------------------------------


@dataclass
class Thm4Report:
    sigma: float
    eta: float
    T: int
    blocks: int
    kf_mse: float
    kf_se: float
    kf_theory: float
    static_mse: float
    static_se: float
    static_theory: float

    @property
    def kf_within_3se(self) -> bool:
        return abs(self.kf_mse - self.kf_theory) <= 3.0 * self.kf_se

    @property
    def static_within_3se(self) -> bool:
        return abs(self.static_mse - self.static_theory) <= 3.0 * self.static_se


def verify_thm4(sigma: float, eta: float, T: int, blocks: int, seed: int = 0) -> Thm4Report:
    """Monte Carlo check of the end-of-block MSE closed forms.

    Per the block setting: the hidden price jumps once at block creation
    (known previous price, so the tracker's prior variance is sigma^2)
    and stays fixed over the T in-block trades.
    """
    if blocks < 2:
        raise ConfigError("need at least two blocks")
    streams = spawn_streams(seed, ("jumps", "noise"))
    p_prev = 100.0
    p_ext = p_prev + streams["jumps"].normal(0.0, sigma, size=blocks)
    noise = streams["noise"].normal(0.0, eta, size=(T, blocks))

    m = np.full(blocks, p_prev)
    P = sigma**2
    for i in range(T):
        K = P / (P + eta**2)
        m = m + K * (p_ext + noise[i] - m)
        P = (1.0 - K) * P
    kf_err2 = (m - p_ext) ** 2
    st_err2 = (p_ext + noise[T - 1] - p_ext) ** 2

    return Thm4Report(
        sigma=sigma, eta=eta, T=T, blocks=blocks,
        kf_mse=float(kf_err2.mean()),
        kf_se=float(kf_err2.std(ddof=1) / math.sqrt(blocks)),
        kf_theory=eta**2 * sigma**2 / (T * sigma**2 + eta**2),
        static_mse=float(st_err2.mean()),
        static_se=float(st_err2.std(ddof=1) / math.sqrt(blocks)),
        static_theory=eta**2,
    )


@dataclass
class Thm5Row:
    sigma: float
    eta: float
    mean_pct_loss: float
    se: float
    n_trades: int


def thm5_path(theta: float, sigma: float, horizon: int, seed: int,
              p_init: float = 1.0, eta_scale: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
    """Trader-reactive lognormal dynamics with the noise tie eta = sigma sqrt(1/theta - 1).

    log p_ext[t] = log p_trad[t-1] + e_sigma[t];
    log p_trad[t] = log p_ext[t] + e_eta[t].
    ``eta_scale`` != 1 deliberately breaks the tie.
    Returns (p_ext, p_trad).
    """
    eta = eta_scale * sigma * math.sqrt(1.0 / theta - 1.0)
    streams = spawn_streams(seed, ("jumps", "noise"))
    e_s = streams["jumps"].normal(0.0, sigma, size=horizon)
    e_e = streams["noise"].normal(0.0, eta, size=horizon)
    l_trad = math.log(p_init) + np.cumsum(e_s + e_e)
    l_ext = l_trad - e_e
    return np.exp(l_ext), np.exp(l_trad)


def verify_thm5(theta: float, sigma_grid: tuple[float, ...], horizon: int,
                seeds: tuple[int, ...], p_init: float = 1.0,
                eta_scale: float = 1.0, x_init: float = 1000.0) -> list[Thm5Row]:
    """Static weighted-mean maker under the trader-reactive dynamics.

    The maker's loss must vanish as sigma -> 0 when the noise tie holds;
    with the tie broken the first-order loss term survives.
    """
    if not 0.0 < theta < 1.0:
        raise ConfigError("theta must lie in (0, 1)")
    if len(sigma_grid) == 0 or any(s <= 0 for s in sigma_grid):
        raise ConfigError("sigma grid must be positive")
    rows = []
    y_init = p_init * x_init * (1.0 - theta) / theta
    for sigma in sigma_grid:
        means = []
        n_total = 0
        for seed in seeds:
            p_ext, p_trad = thm5_path(theta, sigma, horizon, seed, p_init, eta_scale)
            _p0, p_eff, dx, _dy = _kernels.static_cmmm_scenario(
                p_trad, theta, p_init, x_init, y_init)
            pnl = (p_eff - p_ext) * dx
            notional = p_ext * np.abs(dx)
            ledger = LossLedger.from_arrays(np.arange(horizon), pnl, notional)
            means.append(ledger.mean_pct())
            n_total += ledger.trades
        arr = np.array(means)
        se = float(arr.std(ddof=1) / math.sqrt(arr.size)) if arr.size > 1 else 0.0
        rows.append(Thm5Row(
            sigma=sigma,
            eta=eta_scale * sigma * math.sqrt(1.0 / theta - 1.0),
            mean_pct_loss=float(arr.mean()), se=se, n_trades=n_total,
        ))
    return rows


def thm5_beta_gap(theta: float, sigma: float, p0: float = 1.0,
                  lo: float = 0.9, hi: float = 1.1, n: int = 512) -> float:
    """Sup-norm gap between the trader-reactive closed-form pricing map and
    the implied map of the static weighted-mean curve, over [lo, hi] * p0."""
    from .optimal_ode import cmmm_implied_beta, thm5_implied_beta

    grid = np.linspace(lo * p0, hi * p0, n)
    return float(np.max(np.abs(thm5_implied_beta(grid, p0, theta, sigma)
                               - cmmm_implied_beta(grid, p0, theta))))


# ---------------------------------------------------------------------------
# Reference (object-path) scenario runner, used as a kernel oracle in tests
# ---------------------------------------------------------------------------


def run_scenario_objects(config: ScenarioConfig, seed: int | None = None) -> ScenarioResult:
    """Slow twin of run_scenario built from curve objects and kf_step.

    Supports the static and known-parameter CMMM makers; exists so the
    fast kernels can be validated trade-by-trade against the curve
    formalism.
    """
    from .filters import KalmanState, kf_step

    config.validate()
    if config.maker not in ("static_cpmm", "static_cmmm", "kf"):
        raise ConfigError("object path supports the static and kf makers")
    seed = int(config.seeds[0] if seed is None else seed)
    path = simulate_path(config.horizon, config.p_init, config.market, seed,
                         config.adversary, config.volvol)
    lognormal = config.dynamics == "lognormal"
    n = config.horizon
    x = config.x_init
    yres = _y_init_for(config.maker, config.theta, config.p_init, x)
    p0_arr = np.empty(n)
    p_eff = np.empty(n)
    dx = np.empty(n)
    dy = np.empty(n)
    est_post = np.empty(n)

    state = KalmanState(mean=math.log(config.p_init) if lognormal else config.p_init, var=0.0)
    p0 = config.p_init
    for t in range(n):
        pt = float(path.p_trad[t])
        sig, et = float(path.sigma[t]), float(path.eta[t])
        if config.maker in ("static_cpmm", "static_cmmm"):
            theta = 0.5 if config.maker == "static_cpmm" else config.theta
            kind = CPMM() if config.maker == "static_cpmm" else CMMM(theta)
            cstate = CurveState(p0=p0, x0=x, y0=yres)
            cstate, rec = kind.execute(cstate, pt, t)
            x, yres = cstate.x0, cstate.y0
            if rec.dx != 0.0:
                p0 = pt
            est_post[t] = pt
        else:
            p_pred = state.var + sig**2
            p0 = math.exp(state.mean + 0.5 * p_pred) if lognormal else state.mean
            theta = p0 * x / (p0 * x + yres)
            cstate = CurveState(p0=p0, x0=x, y0=yres)
            cstate, rec = CMMM(theta).execute(cstate, pt, t)
            x, yres = cstate.x0, cstate.y0
            state = kf_step(state, math.log(pt) if lognormal else pt, sig, et)
            est_post[t] = math.exp(state.mean + 0.5 * (state.var + sig**2)) if lognormal else state.mean
        p0_arr[t] = rec.p0_before
        p_eff[t] = rec.p_eff
        dx[t] = rec.dx
        dy[t] = rec.dy

    pnl = (p_eff - path.p_ext) * dx
    notional = path.p_ext * np.abs(dx)
    ledger = LossLedger.from_arrays(np.arange(n), pnl, notional)
    trace = {"t": np.arange(n), "p_ext": path.p_ext, "p_trad": path.p_trad,
             "p0": p0_arr, "p_eff": p_eff, "dx": dx, "dy": dy,
             "pnl": pnl, "pct": ledger.pct, "estimate": est_post}
    return ScenarioResult(maker=config.maker, seed=seed, ledger=ledger,
                          trace=trace, rmsd=oracle_rmsd(est_post, path.p_ext))
