"""Online Bayesian identification of player objectives in differential games."""

from .bayes import (GaussianPosterior, NoiseModel, batch_posterior, build_lq_prior,
                    build_nonlinear_prior, recursive_update, run_updates)
from .equilibrium import (LinearFeedback, LqEquilibrium, NlEquilibrium, ValueFeedback,
                          coupled_riccati_residual, equilibrium_policy, solve_lq_nash,
                          solve_nonlinear_hjb)
from .estimator import OnlineInverseGame
from .exceptions import (ConditioningError, ConfigError, ConvergenceError, DimensionError,
                         DivergenceError, DomainError, EnsembleError, InfeasibleError,
                         InvGameError, NumericalError, PriorConstructionError, StabilizationError)
from .features import (DiagonalQuadraticFeatures, LegendreFeatures, QuadraticFeatures,
                       eval_feature_jacobian, eval_features, make_feature_map)
from .forecast import (CredibleBand, ForecastEnvelope, RolloutEnsemble, certified_epsilon,
                       credible_band, forecast_envelope, required_samples, rollout_ensemble)
from .game import (GameDefinition, LqGame, PlayerCost, eval_dynamics, lq_benchmark_game,
                   nonlinear_benchmark_game)
from .regression import (ParamLayout, RegressionSample, build_regression_sample,
                         build_regression_samples)
from .simulator import (MeasurementSample, Trajectory, integrate_closed_loop, run_episode_schedule,
                        run_target_schedule, sample_dataset)

__version__ = "0.1.0"

__all__ = [
    "CredibleBand", "ConditioningError", "ConfigError", "ConvergenceError",
    "DiagonalQuadraticFeatures", "DimensionError", "DivergenceError", "DomainError",
    "EnsembleError", "ForecastEnvelope", "GameDefinition", "GaussianPosterior",
    "InfeasibleError", "InvGameError", "LegendreFeatures", "LinearFeedback", "LqEquilibrium",
    "LqGame", "MeasurementSample", "NlEquilibrium", "NoiseModel", "NumericalError",
    "OnlineInverseGame", "ParamLayout", "PlayerCost", "PriorConstructionError",
    "QuadraticFeatures", "RegressionSample", "RolloutEnsemble", "StabilizationError",
    "Trajectory", "ValueFeedback", "batch_posterior", "build_lq_prior", "build_nonlinear_prior",
    "build_regression_sample", "build_regression_samples", "certified_epsilon",
    "coupled_riccati_residual", "credible_band", "equilibrium_policy", "eval_dynamics",
    "eval_feature_jacobian", "eval_features", "forecast_envelope", "integrate_closed_loop",
    "lq_benchmark_game", "make_feature_map", "nonlinear_benchmark_game", "recursive_update",
    "required_samples", "rollout_ensemble", "run_episode_schedule", "run_target_schedule",
    "run_updates", "sample_dataset", "solve_lq_nash", "solve_nonlinear_hjb",
]
