"""Scikit-learn style front end for online objective identification."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import as_points, check_positive
from .bayes import GaussianPosterior, NoiseModel, recursive_update
from .equilibrium import ValueFeedback
from .features import DiagonalQuadraticFeatures, QuadraticFeatures
from .game import as_game
from .regression import ParamLayout, RegressionSample, build_regression_batch


class OnlineInverseGame(BaseEstimator):
    """Recursive Bayesian estimate of one player's objective.

    Measurements are rows ``[x, xdot, u1, u2]``. Each row becomes one
    regression pair for the identified player and is folded into a Gaussian
    posterior over the reduced weights ``[W_V, W_Q, r_2, ..., r_m]``.

    Parameters
    ----------
    game : GameDefinition or LqGame
        Known dynamics. True costs, if present, are ignored.
    player : {1, 2}
        Player whose objective is identified.
    value_features, state_features : FeatureMap, optional
        Defaults are quadratic monomials and diagonal quadratics.
    prior : GaussianPosterior, optional
        Initial belief. Defaults to ``N(0, prior_scale**2 I)``.
    noise_std : float or array-like, default=1e-3
        Residual standard deviation, either one value for every row or one
        value per row (HJB row first, then one per input channel).
    noise_cov : array-like, optional
        Full residual covariance; overrides ``noise_std``.
    fixed_r11 : float, default=1.0
        Known first input-cost entry.
    prior_scale : float, default=10.0

    Attributes
    ----------
    posterior_ : GaussianPosterior
    layout_ : ParamLayout
    n_updates_ : int
    """

    def __init__(self, game, player=1, value_features=None, state_features=None, prior=None,
                 noise_std=1e-3, noise_cov=None, fixed_r11=1.0, prior_scale=10.0):
        self.game = game
        self.player = player
        self.value_features = value_features
        self.state_features = state_features
        self.prior = prior
        self.noise_std = noise_std
        self.noise_cov = noise_cov
        self.fixed_r11 = fixed_r11
        self.prior_scale = prior_scale

    def _setup(self):
        if self.player not in (1, 2):
            raise ValueError(f"player must be 1 or 2, got {self.player!r}")
        game = as_game(self.game)
        n = game.state_dim
        m = game.input_dims[self.player - 1]
        self.game_ = game
        self.phiV_ = QuadraticFeatures(n) if self.value_features is None else self.value_features
        self.phiQ_ = DiagonalQuadraticFeatures(n) if self.state_features is None else self.state_features
        self.layout_ = ParamLayout(self.phiV_.output_dim, self.phiQ_.output_dim, m,
                                   float(self.fixed_r11))
        if self.noise_cov is not None:
            self.noise_ = NoiseModel(np.asarray(self.noise_cov, dtype=float))
        else:
            std = np.broadcast_to(np.asarray(self.noise_std, dtype=float), (1 + m,))
            self.noise_ = NoiseModel(np.diag(std ** 2))
        if self.noise_.Sigma.shape != (1 + m, 1 + m):
            raise ValueError(f"noise covariance must be {1 + m}x{1 + m}")
        if self.prior is None:
            check_positive(self.prior_scale, "prior_scale")
            d = self.layout_.dim
            prior = GaussianPosterior(np.zeros(d), self.prior_scale ** 2 * np.eye(d), 0, self.layout_)
        else:
            prior = self.prior
            if prior.dim != self.layout_.dim:
                raise ValueError(f"prior dimension {prior.dim} does not match layout {self.layout_.dim}")
        self.posterior_ = GaussianPosterior(prior.mean, prior.covariance, 0, self.layout_)
        self.n_updates_ = 0
        self.n_features_in_ = 2 * n + sum(game.input_dims)

    def _split(self, X):
        game = self.game_
        n, (m1, m2) = game.state_dim, game.input_dims
        X = as_points(X, 2 * n + m1 + m2, "X")
        x, xdot = X[:, :n], X[:, n:2 * n]
        u = X[:, 2 * n:2 * n + m1] if self.player == 1 else X[:, 2 * n + m1:]
        return x, xdot, u

    def regression_samples(self, X):
        """Regression pairs of the measurement rows ``X``."""
        check_is_fitted(self, "layout_")
        x, xdot, u = self._split(X)
        Phi, Y = build_regression_batch(x, xdot, u, self.phiV_, self.phiQ_,
                                        self.game_.input_channels[self.player - 1], self.layout_)
        return [RegressionSample(P, y) for P, y in zip(Phi, Y)]

    def fit(self, X, y=None):
        """Reset to the prior and absorb every row of ``X`` in order."""
        self._setup()
        return self.partial_fit(X)

    def partial_fit(self, X, y=None):
        """Absorb further measurement rows without resetting."""
        if not hasattr(self, "posterior_"):
            self._setup()
        post = self.posterior_
        for sample in self.regression_samples(X):
            post = recursive_update(post, sample, self.noise_)
        self.posterior_ = post
        self.n_updates_ = post.sample_count
        return self

    def policy(self, weights=None):
        """Feedback law induced by ``weights`` (posterior mean by default)."""
        check_is_fitted(self, "posterior_")
        w = self.posterior_.mean if weights is None else np.asarray(weights, dtype=float)
        return ValueFeedback(w[self.layout_.value], self.phiV_,
                             self.game_.input_channels[self.player - 1],
                             self.layout_.input_cost_diag(w))

    def predict(self, X):
        """Inputs of the identified player at states ``X`` under the posterior mean."""
        check_is_fitted(self, "posterior_")
        X = as_points(X, self.game_.state_dim, "X")
        return self.policy()(X)

    def predict_value(self, X, return_std=False):
        """Posterior mean of ``V`` at states ``X`` (and its standard deviation)."""
        check_is_fitted(self, "posterior_")
        F = self.phiV_.transform(as_points(X, self.game_.state_dim, "X"))
        sl = self.layout_.value
        mean = F @ self.posterior_.mean[sl]
        if not return_std:
            return mean
        cov = self.posterior_.covariance[sl, sl]
        var = np.einsum("np,pq,nq->n", F, cov, F)
        return mean, np.sqrt(np.clip(var, 0.0, None))

    @property
    def cost_weights_(self):
        """``{"state": W_Q, "input": diag(R)}`` under the posterior mean."""
        check_is_fitted(self, "posterior_")
        w = self.posterior_.mean
        return {"state": w[self.layout_.state_cost], "input": self.layout_.input_cost_diag(w)}
