"""Differentiable feature maps for value and state-cost parametrisations.

Every map is a stateless scikit-learn transformer: ``transform`` returns the
features of a batch of states, ``jacobian`` their exact derivatives. ``fit``
only validates the input width, so unfitted maps can be used directly.
"""

from itertools import combinations_with_replacement, product

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from ._validation import as_points, as_vector
from .exceptions import DomainError


class FeatureMap(TransformerMixin, BaseEstimator):
    """Base class. Subclasses define ``kind``, ``output_dim``, ``_eval``."""

    kind = None

    def fit(self, X=None, y=None):
        if X is not None:
            as_points(X, self.input_dim)
        self.n_features_in_ = self.input_dim
        return self

    def transform(self, X):
        """Feature values, shape ``(n_points, output_dim)``."""
        return self._eval(as_points(X, self.input_dim), jac=False)

    def jacobian(self, X):
        """Feature Jacobians, shape ``(n_points, output_dim, input_dim)``.

        Row ``j`` of each slice is the gradient of feature ``j``.
        """
        return self._eval(as_points(X, self.input_dim), jac=True)

    def get_feature_names_out(self, input_features=None):
        return np.array([f"phi{j}" for j in range(self.output_dim)], dtype=object)

    def __sklearn_tags__(self):
        tags = super().__sklearn_tags__()
        tags.requires_fit = False
        return tags

    def describe(self):
        """JSON-ready description (kind plus constructor parameters)."""
        params = {k: (np.asarray(v).tolist() if isinstance(v, (tuple, np.ndarray)) else v)
                  for k, v in self.get_params().items()}
        return {"kind": self.kind, **params}


class QuadraticFeatures(FeatureMap):
    """All degree-two monomials ``x_i x_j`` (``i <= j``) in lexicographic order.

    For ``n = 4`` the ordering is ``x1^2, x1x2, x1x3, x1x4, x2^2, ..., x4^2``,
    which matches the upper triangle of a symmetric matrix read row by row.
    """

    kind = "quadratic_monomial"

    def __init__(self, input_dim=1):
        self.input_dim = input_dim

    @property
    def pairs(self):
        return list(combinations_with_replacement(range(self.input_dim), 2))

    @property
    def output_dim(self):
        return self.input_dim * (self.input_dim + 1) // 2

    def _eval(self, X, jac):
        i, j = np.array(self.pairs).T
        if not jac:
            return X[:, i] * X[:, j]
        J = np.zeros((X.shape[0], self.output_dim, self.input_dim))
        rows = np.arange(self.output_dim)
        J[:, rows, i] += X[:, j]
        J[:, rows, j] += X[:, i]
        return J

    def weights_from_symmetric(self, P):
        """Weights ``w`` with ``w . phi(x) == x^T P x``."""
        P = np.asarray(P, dtype=float)
        return np.array([P[i, i] if i == j else 2.0 * P[i, j] for i, j in self.pairs])

    def symmetric_from_weights(self, w):
        P = np.zeros((self.input_dim, self.input_dim))
        for wk, (i, j) in zip(w, self.pairs):
            if i == j:
                P[i, i] = wk
            else:
                P[i, j] = P[j, i] = wk / 2.0
        return P


class DiagonalQuadraticFeatures(FeatureMap):
    """Squares ``x_1^2, ..., x_n^2``; pairs with diagonal state-cost matrices."""

    kind = "quadratic_diagonal"

    def __init__(self, input_dim=1):
        self.input_dim = input_dim

    @property
    def output_dim(self):
        return self.input_dim

    def _eval(self, X, jac):
        if not jac:
            return X ** 2
        J = np.zeros((X.shape[0], self.input_dim, self.input_dim))
        idx = np.arange(self.input_dim)
        J[:, idx, idx] = 2.0 * X
        return J


def legendre_table(xi, order):
    """Legendre polynomials and derivatives up to ``order`` at points ``xi``.

    Uses Bonnet's recurrence ``(k+1) P_{k+1} = (2k+1) xi P_k - k P_{k-1}``
    and ``P'_{k+1} = P'_{k-1} + (2k+1) P_k``. Returns two arrays with a new
    trailing axis of length ``order + 1``.
    """
    xi = np.asarray(xi, dtype=float)
    P = np.empty(xi.shape + (order + 1,))
    dP = np.empty_like(P)
    P[..., 0] = 1.0
    dP[..., 0] = 0.0
    if order >= 1:
        P[..., 1] = xi
        dP[..., 1] = 1.0
    for k in range(1, order):
        P[..., k + 1] = ((2 * k + 1) * xi * P[..., k] - k * P[..., k - 1]) / (k + 1)
        dP[..., k + 1] = dP[..., k - 1] + (2 * k + 1) * P[..., k]
    return P, dP


class LegendreFeatures(FeatureMap):
    """Tensor-product Legendre basis truncated at total degree ``order``.

    Coordinates are mapped affinely from the ``domain`` box onto ``[-1, 1]``
    before evaluation. Points further than ``inflation`` (as a fraction of the
    half-width) outside the box raise :class:`DomainError`.

    Parameters
    ----------
    order : int
        Maximum total polynomial degree.
    domain : tuple of (lo, hi)
        Per-coordinate bounds; scalars broadcast to every coordinate.
    input_dim : int
    include_constant : bool
        Keep the degree-zero element.
    anchor : array-like or None
        If given, ``phi(anchor)`` is subtracted so every feature vanishes
        there. Used to pin value functions to zero at the equilibrium.
    inflation : float
    """

    kind = "legendre"

    def __init__(self, order=10, domain=(-1.0, 1.0), input_dim=1,
                 include_constant=True, anchor=None, inflation=0.1):
        self.order = order
        self.domain = domain
        self.input_dim = input_dim
        self.include_constant = include_constant
        self.anchor = anchor
        self.inflation = inflation

    @property
    def multi_indices(self):
        idx = [a for a in product(range(self.order + 1), repeat=self.input_dim)
               if sum(a) <= self.order]
        idx.sort(key=lambda a: (sum(a), tuple(-v for v in a)))
        if not self.include_constant:
            idx = [a for a in idx if sum(a) > 0]
        return idx

    @property
    def output_dim(self):
        return len(self.multi_indices)

    def _box(self):
        lo, hi = (np.broadcast_to(np.asarray(b, dtype=float), (self.input_dim,))
                  for b in self.domain)
        return lo, hi

    def scale(self, X):
        lo, hi = self._box()
        return (2.0 * X - (lo + hi)) / (hi - lo)

    def _raw(self, X, jac):
        lo, hi = self._box()
        xi = self.scale(X)
        limit = 1.0 + self.inflation
        if np.any(np.abs(xi) > limit):
            bad = X[np.any(np.abs(xi) > limit, axis=1)][0]
            raise DomainError(f"point {bad} lies outside the domain box "
                              f"[{lo}, {hi}] inflated by {self.inflation:.0%}")
        P, dP = legendre_table(xi, self.order)
        alpha = np.array(self.multi_indices).reshape(-1, self.input_dim)
        coords = np.arange(self.input_dim)
        # factors[n, feature, coord] = P_{alpha[feature, coord]}(xi[n, coord])
        factors = P[:, coords, alpha]
        if not jac:
            return np.prod(factors, axis=2)
        dfactors = dP[:, coords, alpha] * (2.0 / (hi - lo))
        J = np.empty(factors.shape)
        for k in range(self.input_dim):
            rest = np.delete(factors, k, axis=2)
            J[:, :, k] = dfactors[:, :, k] * np.prod(rest, axis=2)
        return J

    def _eval(self, X, jac):
        out = self._raw(X, jac)
        if not jac and self.anchor is not None:
            a = as_vector(self.anchor, self.input_dim, "anchor")
            out = out - self._raw(a[None, :], False)
        return out


FEATURE_KINDS = {
    cls.kind: cls for cls in (QuadraticFeatures, DiagonalQuadraticFeatures, LegendreFeatures)
}


def make_feature_map(spec, input_dim=None):
    """Build a feature map from a ``{"kind": ..., **params}`` mapping."""
    spec = dict(spec)
    kind = spec.pop("kind")
    if kind not in FEATURE_KINDS:
        raise ValueError(f"unknown feature kind {kind!r}; expected one of {sorted(FEATURE_KINDS)}")
    if input_dim is not None:
        spec.setdefault("input_dim", input_dim)
    if "domain" in spec:
        spec["domain"] = tuple(spec["domain"])
    return FEATURE_KINDS[kind](**spec)


def eval_features(fmap, x):
    """Features of a single state ``x`` as a 1-d array."""
    return fmap.transform(as_vector(x, fmap.input_dim)[None, :])[0]


def eval_feature_jacobian(fmap, x):
    """Jacobian (``output_dim x input_dim``) of the features at ``x``."""
    return fmap.jacobian(as_vector(x, fmap.input_dim)[None, :])[0]
