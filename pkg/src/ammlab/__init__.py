"""ammlab: a desk-scale simulation lab for adaptive AMM bonding curves.

Hidden-price markets with noisy and adversarial traders, static and
Kalman-adapted demand curves, EM parameter estimation, and the ODE
machinery tying demand curves to belief-pricing maps.
"""

from .curves import (CMMM, CPMM, CSMM, Curve, CurveError, CurveState, MixedPool,
                     OptimalGaussian, OptimalLognormal, TradeRecord, cmmm_theta,
                     execute_trade, invariant_value, invert_demand, marginal_price,
                     mixed_demand)
from .experiments import (ConfigError, EmSettings, ScenarioConfig, ScenarioResult,
                          SweepResult, SweepSpec, run_scenario, run_sweep,
                          thm5_beta_gap, thm5_path, verify_thm4, verify_thm5)
from .filters import (EmEstimate, KalmanState, SmoothedPath, em_e_step, em_m_step,
                      kf_block_mse, kf_filter_path, kf_step, lognormal_operating_point,
                      robust_weight, rts_smooth, run_em, run_robust_em, truncate_window)
from .market import (AdversaryParams, Dynamics, MarketParams, MarketPath, PathRejected,
                     PriceState, VolOfVolParams, observe_adversarial, observe_trader,
                     simulate_path, spawn_streams, step_market_params, step_price)
from .metrics import LossLedger, oracle_rmsd, reference_mse, trade_pnl
from .optimal_ode import (BetaFunction, FixedPoint, GridBelief, NoiseModel,
                          OdeSingularError, OutOfSupportError, bayes_update,
                          beta_from_belief, beta_from_log_belief, cmmm_implied_beta,
                          implied_beta, integrate_optimal_curve, solve_fixed_point,
                          thm5_implied_beta)
from .plots import emit_plots

__version__ = "0.1.0"
