"""Gaussian priors and conjugate posterior updates over reduced weights."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .equilibrium import solve_lq_nash, solve_nonlinear_hjb
from .exceptions import ConditioningError, NumericalError, PriorConstructionError
from .game import PlayerCost, as_game
from .regression import ParamLayout, lq_reduced_weights

logger = logging.getLogger(__name__)

COND_LIMIT = 1e14
CLAMP_FLOOR = 1e-3


@dataclass(frozen=True)
class GaussianPosterior:
    """Gaussian belief ``N(mean, covariance)`` over reduced weights.

    ``factor`` optionally carries a square root ``L`` with ``L L^T = covariance``
    between recursive updates; it is recomputed on demand when absent.
    """

    mean: np.ndarray
    covariance: np.ndarray
    sample_count: int = 0
    layout: ParamLayout = field(default=None, compare=False)
    factor: np.ndarray = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float).ravel()
        cov = np.atleast_2d(np.asarray(self.covariance, dtype=float))
        if cov.shape != (mean.size, mean.size):
            raise ValueError(f"covariance shape {cov.shape} does not match mean size {mean.size}")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "covariance", cov)

    @property
    def dim(self):
        return self.mean.size

    def square_root(self):
        """``L`` with ``L L^T = covariance`` (Cholesky, or a floored eigen-factor if singular)."""
        if self.factor is not None:
            return self.factor
        S = 0.5 * (self.covariance + self.covariance.T)
        try:
            return np.linalg.cholesky(S)
        except np.linalg.LinAlgError:
            lam, V = np.linalg.eigh(S)
            return V * np.sqrt(np.clip(lam, 0.0, None))

    @property
    def std(self):
        return np.sqrt(np.clip(np.diag(self.covariance), 0.0, None))

    def is_valid(self, sym_tol=1e-12, psd_tol=1e-10):
        """Symmetry and positive-semidefiniteness checks at the documented tolerances."""
        S = self.covariance
        scale = max(np.linalg.norm(S), np.finfo(float).tiny)
        symmetric = np.linalg.norm(S - S.T) <= sym_tol * scale
        psd = np.linalg.eigvalsh(0.5 * (S + S.T)).min() >= -psd_tol * max(np.trace(S), 0.0)
        return bool(symmetric and psd)

    def to_dict(self):
        return {
            "mean": self.mean.tolist(),
            "covariance": self.covariance.tolist(),
            "sample_count": int(self.sample_count),
            "layout": None if self.layout is None else self.layout.to_dict(),
        }

    @classmethod
    def from_dict(cls, data):
        layout = data.get("layout")
        return cls(mean=np.array(data["mean"], dtype=float),
                   covariance=np.array(data["covariance"], dtype=float),
                   sample_count=int(data.get("sample_count", 0)),
                   layout=None if layout is None else ParamLayout(**layout))

    def to_json(self, **kwargs):
        return json.dumps(self.to_dict(), **kwargs)

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class NoiseModel:
    """Residual covariance ``Sigma`` of one regression sample."""

    Sigma: np.ndarray

    def __post_init__(self):
        S = np.atleast_2d(np.asarray(self.Sigma, dtype=float))
        if not np.allclose(S, S.T):
            raise ValueError("Sigma must be symmetric")
        try:
            np.linalg.cholesky(S)
        except np.linalg.LinAlgError as exc:
            raise ValueError("Sigma must be positive definite") from exc
        object.__setattr__(self, "Sigma", S)

    @property
    def root(self):
        """Lower Cholesky factor of ``Sigma``."""
        return np.linalg.cholesky(self.Sigma)

    @classmethod
    def isotropic(cls, std, dim):
        return cls(np.eye(dim) * float(std) ** 2)


def recursive_update(post, sample, noise):
    """Single conjugate update with the Joseph-form covariance.

    ``y_hat = Phi m``, ``S_y = Phi S Phi^T + Sigma``, ``K = S Phi^T S_y^{-1}``,
    ``m+ = m + K (y - y_hat)``,
    ``S+ = (I - K Phi) S (I - K Phi)^T + K Sigma K^T``, then symmetrised.

    Notes
    -----
    With ``S = L L^T`` the Joseph expression equals ``A A^T`` for
    ``A = [(I - K Phi) L, K Sigma^{1/2}]``. It is evaluated in that factored
    form and the factor is carried to the next step after re-triangularising
    ``A`` by QR. Densely sampled trajectories give nearly collinear
    regressors and posterior condition numbers near ``1e12``; forming
    ``(I - K Phi) S (I - K Phi)^T`` directly then loses most significant
    digits within a few hundred steps, while the factored form stays at
    round-off level.
    """
    Phi, y = sample.Phi, sample.y
    m = post.mean
    if Phi.shape[1] != m.size:
        raise ValueError(f"regressor width {Phi.shape[1]} does not match posterior dim {m.size}")
    L = post.square_root()
    PL = Phi @ L
    S_y = PL @ PL.T + noise.Sigma
    if np.linalg.cond(S_y) > COND_LIMIT:
        raise ConditioningError("predictive covariance is not invertible")
    K = sla.solve(S_y, PL @ L.T, assume_a="pos").T
    m_new = m + K @ (y - Phi @ m)
    A = np.hstack([L - K @ PL, K @ noise.root])
    L_new = np.linalg.qr(A.T, mode="r").T
    S_new = L_new @ L_new.T
    S_new = 0.5 * (S_new + S_new.T)
    return GaussianPosterior(m_new, S_new, post.sample_count + 1, post.layout, factor=L_new)


def run_updates(prior, samples, noise, callback=None):
    """Fold :func:`recursive_update` over ``samples``.

    ``callback(step, posterior)`` is invoked after every update.
    """
    post = prior
    for k, sample in enumerate(samples, start=1):
        post = recursive_update(post, sample, noise)
        if callback is not None:
            callback(k, post)
    return post


def batch_posterior(prior, samples, noise):
    """One-shot posterior of the stacked linear-Gaussian model.

    The prior and every sample are whitened and stacked into one least-squares
    system ``M w = b`` whose normal matrix is the posterior information. A QR
    factorisation ``M = Q R`` then gives ``covariance = R^{-1} R^{-T}`` and
    ``mean = R^{-1} Q^T b`` without squaring the condition number.
    """
    samples = list(samples)
    if not samples:
        raise ValueError("batch_posterior needs at least one sample")
    try:
        L0 = np.linalg.cholesky(prior.covariance)
    except np.linalg.LinAlgError as exc:
        raise ConditioningError("prior covariance is singular") from exc
    Rs = noise.root
    blocks = [sla.solve_triangular(L0, np.eye(prior.dim), lower=True)]
    rhs = [sla.solve_triangular(L0, prior.mean, lower=True)]
    for s in samples:
        blocks.append(sla.solve_triangular(Rs, s.Phi, lower=True))
        rhs.append(sla.solve_triangular(Rs, s.y, lower=True))
    Q, R = np.linalg.qr(np.vstack(blocks))
    if np.linalg.cond(R) ** 2 > COND_LIMIT:
        raise ConditioningError("information matrix is singular")
    Rinv = sla.solve_triangular(R, np.eye(prior.dim))
    S_post = Rinv @ Rinv.T
    S_post = 0.5 * (S_post + S_post.T)
    mean = Rinv @ (Q.T @ np.concatenate(rhs))
    return GaussianPosterior(mean, S_post, prior.sample_count + len(samples), prior.layout)


def draw_costs(rng, q_means, q_vars, r_means, r_vars, floor=CLAMP_FLOOR):
    """Draw diagonal cost entries for both players; nonpositive draws clamp to ``floor``.

    Entries with zero variance are returned at their mean. The draw order is
    ``q_1, r_1, q_2, r_2`` so streams are reproducible for a given seed.
    """
    qs, rs = [], []
    for qm, qv, rm, rv in zip(q_means, q_vars, r_means, r_vars):
        for means, var, out in ((qm, qv, qs), (rm, rv, rs)):
            means = np.asarray(means, dtype=float)
            std = np.sqrt(np.asarray(var, dtype=float))
            draw = means + std * rng.standard_normal(means.shape)
            out.append(np.where(std > 0, np.maximum(draw, floor), means))
    return qs, rs


def _moment_prior(nominal, draws, cost_mask, cost_std):
    """Prior with nominal mean and Monte Carlo correlation.

    Entries flagged by ``cost_mask`` keep their prescribed standard
    deviations; the correlation structure comes from the draws. Rescaling a
    correlation matrix by a diagonal keeps it positive semidefinite.
    """
    emp = np.atleast_2d(np.cov(draws, rowvar=False))
    std = np.sqrt(np.clip(np.diag(emp), 0.0, None))
    nz = std > 0
    corr = np.zeros_like(emp)
    corr[np.ix_(nz, nz)] = emp[np.ix_(nz, nz)] / np.outer(std[nz], std[nz])
    std = np.where(cost_mask, cost_std, std)
    cov = corr * np.outer(std, std)
    return nominal, 0.5 * (cov + cov.T)


def monte_carlo_prior(solve, q_means, q_vars, r_means, r_vars, layouts, n_mc=200, seed=0,
                      floor=CLAMP_FLOOR):
    """Shared Monte Carlo prior recipe for both players.

    ``solve(q_diags, r_diags)`` returns the pair of value-weight vectors for
    the given costs. Draws whose forward solve fails are discarded; if more
    than half fail, :class:`PriorConstructionError` is raised.
    """
    if n_mc < 2:
        raise ValueError("n_mc must be at least 2")
    rng = np.random.default_rng(seed)
    rows = ([], [])
    failures = 0
    for _ in range(n_mc):
        qs, rs = draw_costs(rng, q_means, q_vars, r_means, r_vars, floor)
        try:
            values = solve(qs, rs)
        except NumericalError as exc:
            logger.debug("prior draw discarded: %s", exc)
            failures += 1
            continue
        for i in range(2):
            rows[i].append(layouts[i].pack(values[i], qs[i], rs[i]))
    if failures > n_mc / 2:
        raise PriorConstructionError(f"{failures} of {n_mc} prior draws failed to solve")
    nominal_values = solve([np.asarray(q, float) for q in q_means],
                           [np.asarray(r, float) for r in r_means])
    priors = []
    for i, layout in enumerate(layouts):
        nominal = layout.pack(nominal_values[i], q_means[i], r_means[i])
        mask = np.zeros(layout.dim, dtype=bool)
        mask[layout.p:] = True
        cost_std = np.zeros(layout.dim)
        cost_std[layout.state_cost] = np.sqrt(np.asarray(q_vars[i], dtype=float))
        cost_std[layout.input_cost] = np.sqrt(np.asarray(r_vars[i], dtype=float))[1:]
        mean, cov = _moment_prior(nominal, np.array(rows[i]), mask, cost_std)
        priors.append(GaussianPosterior(mean, cov, 0, layout))
    return tuple(priors), failures


def build_lq_prior(nominal, variances=None, phiV=None, n_mc=200, seed=0, floor=CLAMP_FLOOR):
    """Priors of both players of an LQ game from Monte Carlo forward solves.

    Parameters
    ----------
    nominal : LqGame
        Game carrying the nominal (mean) diagonal costs.
    variances : dict, optional
        ``{"Q_var": (diag1, diag2), "R_var": (diag1, diag2)}``; defaults to
        ``nominal.metadata``. A zero ``R_var`` entry marks a known entry; the
        first one must be zero since ``R_i[1,1]`` is fixed.
    phiV : QuadraticFeatures
        Value feature map; its weights are ``vec`` of ``P_i``.

    Returns
    -------
    priors : tuple of GaussianPosterior
    failures : int
        Number of discarded draws.
    """
    from .features import DiagonalQuadraticFeatures, QuadraticFeatures

    variances = dict(nominal.metadata if variances is None else variances)
    n = nominal.state_dim
    phiV = QuadraticFeatures(n) if phiV is None else phiV
    q_means = [np.diag(q) for q in nominal.Q]
    r_means = [np.diag(r) for r in nominal.R]
    layouts = tuple(ParamLayout(phiV.output_dim, DiagonalQuadraticFeatures(n).output_dim,
                                nominal.input_dims[i], float(r_means[i][0])) for i in range(2))

    def solve(qs, rs):
        game = nominal.with_cost_diagonals(qs, rs)
        eq = solve_lq_nash(game)
        return tuple(lq_reduced_weights(game, eq, i + 1, phiV)[:phiV.output_dim] for i in range(2))

    return monte_carlo_prior(solve, q_means, variances["Q_var"], r_means, variances["R_var"],
                             layouts, n_mc, seed, floor)


def build_nonlinear_prior(game, basis, q_means=None, q_vars=None, n_mc=200, seed=0,
                          floor=CLAMP_FLOOR, **solver_kwargs):
    """Priors of both players of a diagonal-quadratic-cost nonlinear game.

    Each draw resamples the state-cost weights, re-solves the coupled HJB
    equations with :func:`solve_nonlinear_hjb` and records the value weights.
    Input costs are held at their nominal values.
    """
    game = as_game(game)
    meta = game.metadata
    costs = game.true_costs
    q_means = [np.asarray(q, float) for q in (q_means or [c.state_weights for c in costs])]
    q_vars = q_vars or meta["Q_var"]
    r_means = [c.input_cost_diag for c in costs]
    r_vars = [np.zeros_like(r) for r in r_means]
    layouts = tuple(ParamLayout(basis.output_dim, len(q_means[i]), game.input_dims[i],
                                float(r_means[i][0])) for i in range(2))

    def solve(qs, rs):
        drawn = game.with_costs([PlayerCost.diagonal(q, r) for q, r in zip(qs, rs)])
        eq = solve_nonlinear_hjb(drawn, basis, **solver_kwargs)
        return eq.value_weights

    return monte_carlo_prior(solve, q_means, q_vars, r_means, r_vars, layouts, n_mc, seed, floor)
