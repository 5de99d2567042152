"""scikit-learn style wrappers around the reflection solver and fluid model."""

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from . import fluid as fl
from . import operators as ops
from . import skorokhod as sk
from ._validation import ValidationError
from .fields import PathField

__all__ = ["SkorokhodReflector", "FluidModel"]


def _as_kernel(kernel):
    if isinstance(kernel, ops.Kernel):
        return kernel
    if isinstance(kernel, dict):
        return ops.make_kernel(kernel)
    raise ValidationError("kernel must be a Kernel or a family spec dict")


class SkorokhodReflector(TransformerMixin, BaseEstimator):
    """Map free fields ``X`` to reflected fields ``Z``.

    ``fit`` certifies the kernel on the resolution of the sample field.
    ``transform`` accepts a :class:`PathField` or an ``(M, K+1)`` array
    together with ``dt``.
    """

    def __init__(self, kernel=None, gamma=0.5, tol=None, max_iter=None, dt=1.0):
        self.kernel = kernel
        self.gamma = gamma
        self.tol = tol
        self.max_iter = max_iter
        self.dt = dt

    def _field(self, X):
        return X if isinstance(X, PathField) else PathField(np.asarray(X, dtype=float), self.dt)

    def fit(self, X, y=None):
        field = self._field(X)
        F = _as_kernel(self.kernel) if self.kernel is not None else ops.make_kernel(
            {"family": "constant", "params": {"c": 0.0}}
        )
        self.kernel_ = F
        self.verdict_ = ops.reflection_class_check(F, M=field.M)
        if not self.verdict_.in_class_R:
            raise ValidationError(f"kernel is not a reflection operator: {self.verdict_}")
        self.certificate_ = ops.bounded_parameters(F, gamma=self.gamma, M=field.M)
        self.n_cells_ = field.M
        return self

    def solve(self, X):
        check_is_fitted(self, "certificate_")
        field = self._field(X)
        if field.M != self.n_cells_:
            raise ValidationError(f"fitted on {self.n_cells_} cells, got {field.M}")
        return sk.reflect(field, self.kernel_, tol=self.tol, max_iter=self.max_iter,
                          cert=self.certificate_, check=False)

    def transform(self, X):
        return self.solve(X).Z.values

    def regulator(self, X):
        return self.solve(X).Y.values


class FluidModel(BaseEstimator):
    """Fluid limit for a kernel and rate profiles; ``predict(t)`` returns
    ``Qbar`` at the requested times (linear interpolation in time)."""

    def __init__(self, kernel=None, lam=1.0, mu=2.0, q0=1.0, M=256, T=2.0, dt=0.01,
                 gamma=0.5, tol=None):
        self.kernel = kernel
        self.lam = lam
        self.mu = mu
        self.q0 = q0
        self.M = M
        self.T = T
        self.dt = dt
        self.gamma = gamma
        self.tol = tol

    def fit(self, X=None, y=None):
        G = _as_kernel(self.kernel) if self.kernel is not None else ops.make_kernel(
            {"family": "constant", "params": {"c": 0.0}}
        )
        self.spec_ = fl.FluidSpec(self.q0, self.lam, self.mu, G, M=self.M, gamma=self.gamma)
        self.solution_ = fl.fluid_limit(self.spec_, self.T, self.dt, tol=self.tol)
        self.Qbar_ = self.solution_.Qbar.values
        self.Ibar_ = self.solution_.Ibar.values
        self.times_ = self.solution_.Qbar.times
        return self

    def predict(self, t):
        check_is_fitted(self, "solution_")
        t = np.atleast_1d(np.asarray(t, dtype=float))
        if np.any(t < 0) or np.any(t > self.times_[-1] + 1e-12):
            raise ValidationError("prediction times must lie in [0, T]")
        return np.vstack([np.interp(t, self.times_, row) for row in self.Qbar_])
