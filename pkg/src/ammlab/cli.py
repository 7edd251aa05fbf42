"""Command-line surface: simulate, sweep, adversary, verify-thm4/5, curves-dump.

Every command is deterministic given its seed inputs and writes CSVs
with a fixed byte layout; repeated invocations with the same arguments
produce byte-identical files.  Errors exit nonzero with a single
``error: ...`` line on stderr.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .experiments import (ConfigError, ScenarioConfig, SweepSpec, run_scenario,
                          run_sweep, thm5_beta_gap, verify_thm4, verify_thm5)
from .plots import emit_plots, write_csv


def _load_config(args) -> ScenarioConfig:
    if getattr(args, "config", None):
        with open(args.config) as fh:
            cfg = ScenarioConfig.from_dict(json.load(fh))
    else:
        cfg = ScenarioConfig()
    overrides = {}
    for name in ("sigma", "eta", "maker", "horizon", "dynamics", "p_init", "window"):
        val = getattr(args, name, None)
        if val is not None:
            overrides[name] = val
    if getattr(args, "seed", None) is not None:
        overrides["seeds"] = (args.seed,)
    if overrides:
        cfg = ScenarioConfig.from_dict({**cfg.to_dict(), **overrides})
    return cfg


def _values(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(v) for v in text.split(",") if v.strip() != "")
    except ValueError as exc:
        raise ConfigError(f"bad --values list {text!r}") from exc


def _cmd_simulate(args) -> int:
    cfg = _load_config(args)
    res = run_scenario(cfg)
    os.makedirs(args.out, exist_ok=True)
    tr = res.trace
    n = tr["t"].size
    rows = ({col: tr[col][i] for col in
             ("t", "p_ext", "p_trad", "p_eff", "dx", "dy", "pnl", "pct")} for i in range(n))
    write_csv(os.path.join(args.out, "trace.csv"),
              ["t", "p_ext", "p_trad", "p_eff", "dx", "dy", "pnl", "pct"],
              ({k: (float(v) if k != "t" else int(v)) for k, v in row.items()} for row in rows))
    filt_rows = ({"t": int(tr["t"][i]), "p_trad": float(tr["p_trad"][i]),
                  "kf_mean": float(tr["estimate"][i]), "kf_var": float(tr["kf_var"][i]),
                  "gain": float(tr["gain"][i]), "sigma_hat": float(tr["sigma_hat"][i]),
                  "eta_hat": float(tr["eta_hat"][i]), "weight": float(tr["weight"][i])}
                 for i in range(n))
    write_csv(os.path.join(args.out, "filter.csv"),
              ["t", "p_trad", "kf_mean", "kf_var", "gain", "sigma_hat", "eta_hat", "weight"],
              filt_rows)
    write_csv(os.path.join(args.out, "summary.csv"),
              ["maker", "seed", "n_trades", "mean_pct_loss", "se_pct", "cumulative_pnl", "rmsd"],
              [{"maker": res.maker, "seed": res.seed, "n_trades": res.ledger.trades,
                "mean_pct_loss": res.ledger.mean_pct(), "se_pct": res.ledger.se_pct(),
                "cumulative_pnl": res.ledger.cumulative_pnl, "rmsd": res.rmsd}])
    print(f"maker={res.maker} seed={res.seed} trades={res.ledger.trades} "
          f"mean_pct_loss={res.ledger.mean_pct():.6g} rmsd={res.rmsd:.6g}")
    return 0


def _sweep_common(args, style: str) -> int:
    cfg = _load_config(args)
    makers = tuple(args.maker) if args.maker else (cfg.maker,)
    axis = "alpha" if style == "adversary" else args.axis
    spec = SweepSpec(base=cfg, axis=axis, values=_values(args.values),
                     makers=makers, burn_in=args.burn_in)
    result = run_sweep(spec)
    name = args.name or (f"adversary" if style == "adversary" else f"sweep_{axis}")
    paths = emit_plots(result, args.out, name=name, style=style)
    for p in paths:
        print(f"wrote {p}")
    return 0


def _cmd_sweep(args) -> int:
    return _sweep_common(args, "sweep")


def _cmd_adversary(args) -> int:
    return _sweep_common(args, "adversary")


def _cmd_verify_thm4(args) -> int:
    rep = verify_thm4(args.sigma, args.eta, args.T, args.blocks, args.seed)
    os.makedirs(args.out, exist_ok=True)
    write_csv(os.path.join(args.out, "thm4.csv"),
              ["sigma", "eta", "T", "blocks", "kf_mse", "kf_se", "kf_theory",
               "static_mse", "static_se", "static_theory"],
              [{"sigma": rep.sigma, "eta": rep.eta, "T": rep.T, "blocks": rep.blocks,
                "kf_mse": rep.kf_mse, "kf_se": rep.kf_se, "kf_theory": rep.kf_theory,
                "static_mse": rep.static_mse, "static_se": rep.static_se,
                "static_theory": rep.static_theory}])
    ok = rep.kf_within_3se and rep.static_within_3se
    print(f"kf_mse={rep.kf_mse:.6g} theory={rep.kf_theory:.6g} (within 3 SE: {rep.kf_within_3se})")
    print(f"static_mse={rep.static_mse:.6g} theory={rep.static_theory:.6g} "
          f"(within 3 SE: {rep.static_within_3se})")
    return 0 if ok else 1


def _cmd_verify_thm5(args) -> int:
    sigmas = tuple(sorted(_values(args.sigmas), reverse=True))
    seeds = tuple(int(s) for s in _values(args.seeds))
    rows = verify_thm5(args.theta, sigmas, args.horizon, seeds,
                       eta_scale=args.eta_scale)
    gap = thm5_beta_gap(args.theta, 0.01)
    os.makedirs(args.out, exist_ok=True)
    write_csv(os.path.join(args.out, "thm5.csv"),
              ["sigma", "eta", "mean_pct_loss", "se", "n_trades"],
              [{"sigma": r.sigma, "eta": r.eta, "mean_pct_loss": r.mean_pct_loss,
                "se": r.se, "n_trades": r.n_trades} for r in rows])
    for r in rows:
        print(f"sigma={r.sigma:.6g} eta={r.eta:.6g} mean_pct_loss={r.mean_pct_loss:.6g} se={r.se:.6g}")
    print(f"beta_sup_gap(sigma=0.01)={gap:.6g}")
    return 0


def _cmd_curves_dump(args) -> int:
    from .curves import CPMM, CMMM, CSMM, CurveState, OptimalGaussian, OptimalLognormal
    from .optimal_ode import BetaFunction, implied_beta

    state = CurveState(p0=args.p0, x0=args.x0, y0=args.y0)
    kinds = {
        "csmm": lambda: CSMM(),
        "cpmm": lambda: CPMM(),
        "cmmm": lambda: CMMM(args.theta),
        "optimal_gaussian": lambda: OptimalGaussian(K=args.K, C=args.C, x_tilde=args.x_tilde),
        "optimal_lognormal": lambda: OptimalLognormal(K=args.K, C=args.C, x_tilde=args.x_tilde),
    }
    if args.kind not in kinds:
        raise ConfigError(f"unknown curve kind {args.kind!r}")
    kind = kinds[args.kind]()
    grid = np.geomspace(args.p0 / args.span, args.p0 * args.span, args.n)
    g = np.array([kind.demand(state, float(p)) for p in grid])

    if args.kind in ("cpmm", "cmmm"):
        beta = implied_beta(kind, state, grid)
        beta_vals = beta(grid)
    elif args.kind == "optimal_gaussian":
        beta_vals = (1.0 - args.K) * args.p0 + args.K * grid
    elif args.kind == "optimal_lognormal":
        beta_vals = BetaFunction.power(args.p0, args.K)(grid)
    else:
        beta_vals = np.full_like(grid, args.p0)

    os.makedirs(args.out, exist_ok=True)
    write_csv(os.path.join(args.out, "curve_g.csv"), ["p", "g_p"],
              [{"p": float(p), "g_p": float(v)} for p, v in zip(grid, g)])
    write_csv(os.path.join(args.out, "curve_beta.csv"), ["p", "beta_p"],
              [{"p": float(p), "beta_p": float(v)} for p, v in zip(grid, beta_vals)])
    print(f"wrote {args.out}/curve_g.csv and {args.out}/curve_beta.csv")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ammlab",
                                     description="adaptive bonding-curve simulation lab")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", help="scenario config JSON")
        p.add_argument("--seed", type=int, help="override the config seed list with one seed")
        p.add_argument("--out", default="out", help="output directory")
        p.add_argument("--sigma", type=float)
        p.add_argument("--eta", type=float)
        p.add_argument("--maker", action="append", help="maker (repeatable for sweeps)")
        p.add_argument("--horizon", type=int)
        p.add_argument("--dynamics", choices=["additive", "lognormal"])
        p.add_argument("--p-init", dest="p_init", type=float)
        p.add_argument("--window", type=int)

    p = sub.add_parser("simulate", help="run one scenario, dump trace CSVs")
    add_common(p)
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("sweep", help="loss sweep over sigma/eta/sigma_metavol")
    add_common(p)
    p.add_argument("--axis", required=True, choices=["sigma", "eta", "sigma_metavol"])
    p.add_argument("--values", required=True, help="comma-separated axis values")
    p.add_argument("--burn-in", dest="burn_in", type=int, default=0)
    p.add_argument("--name", help="output file stem")
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("adversary", help="adversarial-fraction sweep (RMSD + loss)")
    add_common(p)
    p.add_argument("--values", required=True, help="comma-separated alpha values")
    p.add_argument("--burn-in", dest="burn_in", type=int, default=0)
    p.add_argument("--name", help="output file stem")
    p.set_defaults(func=_cmd_adversary)

    p = sub.add_parser("verify-thm4", help="end-of-block MSE closed forms")
    p.add_argument("--sigma", type=float, default=1.0)
    p.add_argument("--eta", type=float, default=1.0)
    p.add_argument("--T", type=int, default=1)
    p.add_argument("--blocks", type=int, default=100_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="out")
    p.set_defaults(func=_cmd_verify_thm4)

    p = sub.add_parser("verify-thm5", help="static-curve optimality limit")
    p.add_argument("--theta", type=float, default=0.5)
    p.add_argument("--sigmas", default="0.1,0.03,0.01,0.003,0.001")
    p.add_argument("--horizon", type=int, default=200_000)
    p.add_argument("--seeds", default="0,1,2,3")
    p.add_argument("--eta-scale", dest="eta_scale", type=float, default=1.0)
    p.add_argument("--out", default="out")
    p.set_defaults(func=_cmd_verify_thm5)

    p = sub.add_parser("curves-dump", help="sample g and beta for one curve")
    p.add_argument("--kind", required=True)
    p.add_argument("--p0", type=float, default=1.0)
    p.add_argument("--x0", type=float, default=1000.0)
    p.add_argument("--y0", type=float, default=1000.0)
    p.add_argument("--theta", type=float, default=0.5)
    p.add_argument("--K", type=float, default=0.5)
    p.add_argument("--C", type=float, default=0.0)
    p.add_argument("--x-tilde", dest="x_tilde", type=float, default=0.0)
    p.add_argument("--span", type=float, default=10.0)
    p.add_argument("--n", type=int, default=256)
    p.add_argument("--out", default="out")
    p.set_defaults(func=_cmd_curves_dump)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
