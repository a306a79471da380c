"""scikit-learn style wrapper around a desk chain of conjugacies."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .blocks.shear import MoserSolveConfig
from .conjugation import as_points, build_stage_maps, to_float
from .metric import gram_from_inverse_jacobian
from .stage_params import desk_chain


class ConjugacyTransformer(TransformerMixin, BaseEstimator):
    """Apply H_N (or f_N) of a desk chain to points of S^1 x [0, 1]^(m-1).

    ``fit`` only builds the arithmetic and the lazily evaluated maps; the
    data passed to it is used for its dimension check alone.

    Args:
        n_stages: Number of populated desk stages N.
        dim_m: Dimension m.
        sigma: Rational exponent sigma as a string.
        q1: First denominator (a multiple of 260).
        factors: Optional growth multipliers c_n.
        stage: Which stage's conjugacy to apply (default N).
        tol_vol: Volume tolerance of the Moser flow.
        map: ``"H"`` for the conjugacy, ``"f"`` for f_n itself.
    """

    def __init__(self, n_stages=2, dim_m=2, sigma="1/4", q1=260, factors=None, stage=None, tol_vol=1e-6, map="H"):
        self.n_stages = n_stages
        self.dim_m = dim_m
        self.sigma = sigma
        self.q1 = q1
        self.factors = factors
        self.stage = stage
        self.tol_vol = tol_vol
        self.map = map

    def fit(self, X=None, y=None):
        if X is not None:
            X = check_array(X)
            if X.shape[1] != self.dim_m:
                raise ValueError(f"expected {self.dim_m} columns, got {X.shape[1]}")
        self.stages_ = desk_chain(self.n_stages, self.dim_m, self.sigma, q1=self.q1, factors=self.factors)
        self.maps_ = build_stage_maps(self.stages_, MoserSolveConfig(tol_vol=self.tol_vol))
        n = self.stage or self.n_stages
        if not 1 <= n <= len(self.maps_):
            raise ValueError(f"stage must lie in 1..{len(self.maps_)}")
        sm = self.maps_[n - 1]
        self.map_ = {"H": sm.H, "f": sm.f}[self.map]
        self.n_features_in_ = self.dim_m
        return self

    def _check(self, X):
        check_is_fitted(self, "map_")
        X = check_array(X)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} columns, got {X.shape[1]}")
        return as_points(X)

    def transform(self, X):
        pts = self._check(X)
        return to_float(self.map_.forward(pts))

    def inverse_transform(self, X):
        pts = self._check(X)
        return to_float(self.map_.inverse(pts))

    def jacobian(self, X) -> np.ndarray:
        pts = self._check(X)
        return self.map_.jacobian(pts)

    def metric(self, X) -> np.ndarray:
        """Gram matrices of the pulled-back metric of the fitted conjugacy at X."""
        check_is_fitted(self, "maps_")
        H = self.maps_[(self.stage or self.n_stages) - 1].H
        return gram_from_inverse_jacobian(H.inverse_jacobian(self._check(X)))
