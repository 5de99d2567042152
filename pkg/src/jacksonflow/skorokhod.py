"""Skorokhod reflection with a kernel reflection operator.

Given a free field ``X`` and a reflection operator ``F`` the solver finds the
minimal increasing regulator ``Y`` (``Y(0) = 0`` when ``X(0) >= 0``) with

    Z = X + (1 - F) Y >= 0,

by iterating ``W -> pi(W) = sup_{s <= t} [-X(s) + F W(s)]^+`` from ``W = 0``.
The iterates increase monotonically to the regulator.  Suprema over ``[0, t]``
are running maxima over the grid points, so piecewise-linear inputs with kinks
on the grid are handled exactly at grid times.
"""

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import operators as ops
from ._validation import ValidationError, check_finite_array, check_routing_matrix
from .fields import PathField

__all__ = [
    "ReflectionSolution",
    "ReflectionError",
    "pi_map",
    "solve_regulator",
    "reflect",
    "complementarity_residual",
    "lipschitz_check",
    "operator_perturbation_check",
    "solve_finite",
]


class ReflectionError(RuntimeError):
    """The reflected process came out infeasible or the operator is unusable."""


@dataclass(frozen=True, eq=False)
class ReflectionSolution:
    X: PathField
    Z: PathField
    Y: PathField
    iterations: int
    fixed_point_residual: float
    error_bound: float
    converged: bool
    certificate: ops.ContractionCertificate
    complementarity_residual: np.ndarray = field(repr=False)

    @property
    def Z_clamped(self):
        """``Z`` with the round-off negatives set to zero (reporting only)."""
        return self.Z.with_values(np.maximum(self.Z.values, 0.0))


def _runmax_positive(a):
    return np.maximum.accumulate(np.maximum(a, 0.0), axis=1)


def pi_map(X, F, W):
    """One application of ``pi_{X,F}``: running max of ``[-X + F W]^+``."""
    X.check_compatible(W)
    FW = ops.apply_field(F, W.values)
    return X.with_values(_runmax_positive(-X.values + FW))


def _default_tol(Xv):
    return 1e-10 * (1.0 + float(np.abs(Xv).max(axis=1).mean()))


def _default_max_iter(cert, tol):
    tol = min(tol, 0.5)
    return 10 * cert.k * math.ceil(math.log(1.0 / tol) / math.log(1.0 / cert.gamma))


def _fixed_point(Xv, apply_fn, cert, tol, max_iter):
    """Monotone iteration; returns ``(Y, iterations, gap, bound, converged)``."""
    tol = _default_tol(Xv) if tol is None else float(tol)
    max_iter = _default_max_iter(cert, tol) if max_iter is None else int(max_iter)
    lip = cert.inverse_norm_bound
    W = np.zeros_like(Xv)
    gap = bound = math.inf
    for it in range(1, max_iter + 1):
        W_next = _runmax_positive(-Xv + apply_fn(W))
        diff = W_next - W
        scale = 1.0 + float(np.abs(W_next).max())
        if diff.min() < -1e-11 * scale:
            raise ReflectionError(
                f"fixed-point iterates decreased by {-diff.min():.3g} at iteration {it}"
            )
        gap = float(np.abs(diff).max(axis=1).mean())
        W = W_next
        bound = gap * lip
        if bound <= tol:
            return W, it, gap, bound, True
    return W, max_iter, gap, bound, False


def _certify(F, M, gamma, check):
    if check:
        verdict = ops.reflection_class_check(F, M=M)
        if not verdict.in_class_R:
            raise ReflectionError(f"{F!r} is not a reflection operator on {M} cells: {verdict}")
    return ops.bounded_parameters(F, gamma=gamma, M=M)


def solve_regulator(X, F, tol=None, max_iter=None, gamma=0.5, cert=None, check=True):
    """Minimal regulator of ``X`` under reflection operator ``F``.

    Stops when ``k/(1-gamma)`` times the successive-iterate gap in
    ``||.||_{T,1}`` is at most ``tol`` (default ``1e-10 (1 + ||X||_{T,1})``),
    which bounds the distance to the exact fixed point.  A run that hits
    ``max_iter`` returns the last iterate with ``converged=False`` and a
    ``RuntimeWarning``.
    """
    if not isinstance(X, PathField):
        raise ValidationError("X must be a PathField")
    if np.any(X.values[:, 0] < 0):
        raise ValidationError("X(0) must be nonnegative")
    if cert is None:
        cert = _certify(F, X.M, gamma, check)
    Y, it, gap, bound, ok = _fixed_point(
        X.values, lambda W: ops.apply_field(F, W), cert, tol, max_iter
    )
    if not ok:
        warnings.warn(
            f"reflection did not converge in {it} iterations (error bound {bound:.3g})",
            RuntimeWarning,
            stacklevel=2,
        )
    Zv = X.values + Y - ops.apply_field(F, Y)
    Yf, Zf = X.with_values(Y), X.with_values(Zv)
    comp = _complementarity(Zf.values, Yf.values, "left")
    return ReflectionSolution(X, Zf, Yf, it, gap, bound, ok, cert, comp)


def reflect(X, F, tol=None, max_iter=None, gamma=0.5, cert=None, check=True):
    """Solve and verify feasibility: ``Z >= -tol`` everywhere."""
    sol = solve_regulator(X, F, tol=tol, max_iter=max_iter, gamma=gamma, cert=cert, check=check)
    ztol = max(_default_tol(X.values) if tol is None else tol, sol.error_bound) * 2 + 1e-12
    zmin = float(sol.Z.values.min())
    if zmin < -ztol * (1 + float(np.abs(X.values).max())):
        raise ReflectionError(f"reflected process is negative ({zmin:.3g})")
    return sol


def _complementarity(Z, Y, rule):
    dY = np.diff(Y, axis=1)
    if rule == "left":
        return (Z[:, :-1] * dY).sum(axis=1)
    if rule == "right":
        return (Z[:, 1:] * dY).sum(axis=1)
    raise ValidationError(f"unknown rule {rule!r}")


def complementarity_residual(sol, rule="left"):
    """Per-cell Stieltjes sum ``sum_j Z(t_j) (Y(t_{j+1}) - Y(t_j))``.

    ``rule="right"`` evaluates ``Z`` at ``t_{j+1}`` instead, which is the
    exact integral when both paths are read as step functions on the grid.
    """
    return _complementarity(sol.Z.values, sol.Y.values, rule)


@dataclass(frozen=True)
class LipschitzReport:
    psi_lhs: float
    psi_rhs: float
    phi_lhs: float
    phi_rhs: float
    slack: float

    @property
    def ok(self):
        return self.psi_lhs <= self.psi_rhs + self.slack and self.phi_lhs <= self.phi_rhs + self.slack


def lipschitz_check(F, X1, X2, cert=None, tol=None, gamma=0.5):
    """Compare ``||Psi(X1) - Psi(X2)||`` and ``||Phi(X1) - Phi(X2)||`` to
    ``k/(1-gamma)`` and ``1 + 2k/(1-gamma)`` times ``||X1 - X2||``."""
    X1.check_compatible(X2)
    if cert is None:
        cert = _certify(F, X1.M, gamma, True)
    s1 = solve_regulator(X1, F, tol=tol, cert=cert)
    s2 = solve_regulator(X2, F, tol=tol, cert=cert)
    dx = (X1 - X2).norm()
    slack = 2 * (s1.error_bound + s2.error_bound) + 1e-12 * (1 + s1.Y.norm() + s2.Y.norm())
    return LipschitzReport(
        psi_lhs=(s1.Y - s2.Y).norm(),
        psi_rhs=cert.psi_lipschitz * dx,
        phi_lhs=(s1.Z - s2.Z).norm(),
        phi_rhs=cert.phi_lipschitz * dx,
        slack=slack,
    )


@dataclass(frozen=True)
class PerturbationReport:
    op_distance: float
    psi_lhs: float
    psi_rhs: float
    phi_lhs: float
    phi_rhs: float
    slack: float
    x_term_psi: float
    x_term_phi: float

    @property
    def ok(self):
        return self.psi_lhs <= self.psi_rhs + self.slack and self.phi_lhs <= self.phi_rhs + self.slack

    @property
    def psi_margin(self):
        return self.psi_rhs - self.psi_lhs

    @property
    def phi_margin(self):
        return self.phi_rhs - self.phi_lhs


def operator_perturbation_check(F1, F2, X1, X2=None, cert1=None, cert2=None, tol=None, gamma=0.5):
    """Joint Lipschitz bounds in the free process and the operator.

    With ``a = ||X2 - X1||``, ``d = ||F2 - F1||_op``, ``L_i = k_i/(1-gamma_i)``:

        ||Psi_2(X2) - Psi_1(X1)|| <= L_2 a + L_1 L_2 ||X1|| d
        ||Phi_2(X2) - Phi_1(X1)|| <= (1 + 2 L_2) a + (2 L_1 L_2 + L_1) ||X1|| d
    """
    X2 = X1 if X2 is None else X2
    X1.check_compatible(X2)
    M = X1.M
    cert1 = _certify(F1, M, gamma, True) if cert1 is None else cert1
    cert2 = _certify(F2, M, gamma, True) if cert2 is None else cert2
    s1 = solve_regulator(X1, F1, tol=tol, cert=cert1)
    s2 = solve_regulator(X2, F2, tol=tol, cert=cert2)
    d = ops.op_norm_distance(F1, F2, M=M)
    a = (X2 - X1).norm()
    L1, L2 = cert1.inverse_norm_bound, cert2.inverse_norm_bound
    x1 = X1.norm()
    slack = 2 * (s1.error_bound + s2.error_bound) + 1e-12 * (1 + s1.Y.norm() + s2.Y.norm())
    return PerturbationReport(
        op_distance=d,
        psi_lhs=(s2.Y - s1.Y).norm(),
        psi_rhs=L2 * a + L1 * L2 * x1 * d,
        phi_lhs=(s2.Z - s1.Z).norm(),
        phi_rhs=(1 + 2 * L2) * a + (2 * L1 * L2 + L1) * x1 * d,
        slack=slack,
        x_term_psi=L2 * a,
        x_term_phi=(1 + 2 * L2) * a,
    )


def solve_finite(X, P, tol=None, max_iter=None, gamma=0.5, full=False):
    """Finite Skorokhod problem with reflection matrix ``I - P^T``.

    ``X`` is an ``(N, K+1)`` array of grid paths and ``P`` a row-substochastic
    routing matrix with spectral radius below one.  Returns ``(Z, Y)`` arrays,
    or ``(Z, Y, info)`` with ``full=True``.
    """
    X = check_finite_array(X, "X", ndim=2)
    P = check_routing_matrix(P)
    if P.shape[0] != X.shape[0]:
        raise ValidationError(f"X has {X.shape[0]} rows but P is {P.shape}")
    if np.any(X[:, 0] < 0):
        raise ValidationError("X(0) must be nonnegative")
    N = P.shape[0]
    R = P.T.copy()
    reflection = ops.Kernel("blockwise", grid=N * R)
    if ops.spectral_radius(reflection) >= 1 - ops.RHO_TOL:
        raise ReflectionError("routing matrix has spectral radius >= 1")
    cert = ops.bounded_parameters(reflection, gamma=gamma)
    Y, it, gap, bound, ok = _fixed_point(X, lambda W: R @ W, cert, tol, max_iter)
    if not ok:
        warnings.warn(f"finite reflection did not converge in {it} iterations", RuntimeWarning, stacklevel=2)
    Z = X + Y - R @ Y
    if full:
        return Z, Y, {"iterations": it, "gap": gap, "error_bound": bound, "converged": ok, "certificate": cert}
    return Z, Y
