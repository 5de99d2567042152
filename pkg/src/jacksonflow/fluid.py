"""Fluid model on [0,1], the finite intermediate system and its lift.

The fluid queue is the reflection of the free process

    Xbar_u(t) = q0(u) + (lambda(u) - mu(u) + int G(v,u) mu(v) dv) t

under ``G^T``; the regulator is ``mu * Ibar``.
"""

from dataclasses import dataclass

import numpy as np

from . import operators as ops
from . import skorokhod as sk
from ._validation import ValidationError, check_finite_array, profile_values
from .fields import PathField, steps_for

__all__ = [
    "FluidSpec",
    "FluidSolution",
    "IntermediateSolution",
    "build_free_process",
    "fluid_limit",
    "intermediate_process",
    "lift",
    "coupling_error",
    "coupling_error_mc",
]


@dataclass(frozen=True, eq=False)
class FluidSpec:
    """Profiles sampled at the midpoints of ``M`` cells plus the kernel ``G``."""

    q0: object
    lam: object
    mu: object
    G: ops.Kernel
    M: int = 256
    gamma: float = 0.5

    def __post_init__(self):
        if not isinstance(self.G, ops.Kernel):
            raise ValidationError("G must be a Kernel")
        M = int(self.M)
        if self.G.is_blockwise and M % self.G.grid_size:
            raise ops.ResolutionError(f"M={M} is not a multiple of the kernel grid {self.G.grid_size}")
        q0 = profile_values(self.q0, M, "q0")
        lam = profile_values(self.lam, M, "lambda")
        mu = profile_values(self.mu, M, "mu")
        if np.any(q0 < 0) or np.any(lam < 0):
            raise ValidationError("q0 and lambda must be nonnegative")
        if np.any(mu <= 0):
            raise ValidationError("mu must be strictly positive on every cell")
        Gt = ops.transpose(self.G)
        verdict = ops.reflection_class_check(Gt, M=M)
        if not verdict.in_class_R:
            raise ValidationError(f"G^T is not a reflection operator: {verdict}")
        cert = ops.bounded_parameters(Gt, gamma=self.gamma, M=M)
        for name, val in (("q0", q0), ("lam", lam), ("mu", mu)):
            val.setflags(write=False)
            object.__setattr__(self, name, val)
        object.__setattr__(self, "M", M)
        object.__setattr__(self, "Gt", Gt)
        object.__setattr__(self, "verdict", verdict)
        object.__setattr__(self, "certificate", cert)

    def drift(self):
        """``lambda - mu + G^T mu`` per cell."""
        return self.lam - self.mu + ops.apply(self.Gt, self.mu)


@dataclass(frozen=True, eq=False)
class FluidSolution:
    spec: FluidSpec
    Xbar: PathField
    Qbar: PathField
    Ybar: PathField
    Ibar: PathField
    reflection: sk.ReflectionSolution

    @property
    def complementarity(self):
        return self.reflection.complementarity_residual

    def balance_residual(self):
        """Max deviation from the busy-time form of the fluid equation.

        ``Q = q0 + lambda t - mu (t - I) + int mu_v (t - I_v) G(v, u) dv``.
        """
        s = self.spec
        t = self.Qbar.times[None, :]
        busy = s.mu[:, None] * (t - self.Ibar.values)
        rhs = s.q0[:, None] + s.lam[:, None] * t - busy + ops.apply_field(s.Gt, busy)
        return float(np.abs(self.Qbar.values - rhs).max())

    def cell_averages(self, N):
        """Average of ``Qbar`` over each of ``N`` equal blocks."""
        M = self.spec.M
        if M % N:
            raise ValidationError(f"fluid resolution {M} is not a multiple of N={N}")
        return self.Qbar.values.reshape(N, M // N, -1).mean(axis=1)


def build_free_process(spec, T, dt):
    K = steps_for(T, dt)
    t = np.arange(K + 1) * dt
    vals = spec.q0[:, None] + spec.drift()[:, None] * t[None, :]
    return PathField(vals, dt)


def fluid_limit(spec, T, dt, tol=None):
    X = build_free_process(spec, T, dt)
    sol = sk.reflect(X, spec.Gt, tol=tol, cert=spec.certificate, check=False)
    Ibar = sol.Y.with_values(sol.Y.values / spec.mu[:, None])
    return FluidSolution(spec, X, sol.Z, sol.Y, Ibar, sol)


@dataclass(frozen=True, eq=False)
class IntermediateSolution:
    """Deterministic finite system: ``Q = X + (I - P^T) Y`` with ``Y = mu I``."""

    times: np.ndarray
    X: np.ndarray
    Q: np.ndarray
    Y: np.ndarray
    I: np.ndarray
    info: dict

    @property
    def dt(self):
        return float(self.times[1] - self.times[0])


def intermediate_process(netspec, q0bar, T, dt, tol=None, gamma=0.5):
    """Solve the finite system with drift ``lambda + P^T mu - mu``.

    ``q0bar`` holds the scaled initial queues ``Q_i(0) / N^alpha``.
    """
    N = netspec.N
    q0bar = check_finite_array(q0bar, "q0bar", ndim=1)
    if q0bar.size != N or np.any(q0bar < 0):
        raise ValidationError("q0bar must be a nonnegative vector with one entry per station")
    K = steps_for(T, dt)
    t = np.arange(K + 1) * dt
    drift = netspec.lam + netspec.P.T @ netspec.mu - netspec.mu
    X = q0bar[:, None] + drift[:, None] * t[None, :]
    Z, Y, info = sk.solve_finite(X, netspec.P, tol=tol, gamma=gamma, full=True)
    return IntermediateSolution(t, X, Z, Y, Y / netspec.mu[:, None], info)


def lift(paths, dt, M=None):
    """Blockwise-constant field from ``N`` station paths, on ``M`` cells.

    ``M`` defaults to ``N`` and must be a multiple of it.
    """
    paths = check_finite_array(paths, "paths", ndim=2)
    N = paths.shape[0]
    M = N if M is None else int(M)
    if M % N:
        raise ValidationError(f"M={M} is not a multiple of N={N}")
    return PathField(np.repeat(paths, M // N, axis=0), dt)


def _grid_paths(paths):
    if hasattr(paths, "Qbar"):
        return np.asarray(paths.Qbar, dtype=float)
    if isinstance(paths, PathField):
        return paths.values
    return check_finite_array(paths, "paths", ndim=2)


def coupling_error(paths, fluid, N=None):
    """``(1/N) sum_i max_t |Qbar^N_i(t) - block average of Qbar|``."""
    P = _grid_paths(paths)
    N = P.shape[0] if N is None else N
    if P.shape[0] != N:
        raise ValidationError(f"expected {N} station paths, got {P.shape[0]}")
    ref = fluid.cell_averages(N)
    if ref.shape != P.shape:
        raise ValidationError(f"time grids differ: {P.shape} vs fluid {ref.shape}")
    return float(np.abs(P - ref).max(axis=1).mean())


def coupling_error_mc(path_list, fluid):
    """Mean and standard error of :func:`coupling_error` over replications."""
    errs = np.array([coupling_error(p, fluid) for p in path_list])
    se = float(errs.std(ddof=1) / np.sqrt(errs.size)) if errs.size > 1 else float("nan")
    return float(errs.mean()), se, errs
