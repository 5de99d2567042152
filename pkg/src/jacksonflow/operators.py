"""Kernels on the unit square and the integral operators they define.

A :class:`Kernel` is either *blockwise* (an ``n x n`` grid of constants on the
uniform partition ``[0, 1/n], (1/n, 2/n], ...``) or *closed form* (a vectorised
function of ``(u, v)``).  Every operator computation works on a cell
discretisation: the kernel is sampled at cell midpoints of an ``M x M`` grid and
the integral ``(F f)(u) = int F(u, v) f(v) dv`` becomes ``(1/M) K @ f``.  For
blockwise kernels on a grid dividing ``M`` this is exact; closed forms carry an
``O(1/M)`` quadrature error and are discretised at ``kernel.resolution`` cells
(512 unless stated otherwise) when no grid is imposed.

The operator norm is the L1-to-L1 norm ``sup_v int |F(u, v)| du``, i.e. the
largest column integral of the kernel.
"""

import json
import math
from dataclasses import dataclass

import numpy as np

from ._validation import ValidationError, check_finite_array, check_positive_int

DEFAULT_RESOLUTION = 512
NONNEG_TOL = 1e-9
RHO_TOL = 1e-6
MAX_BOUNDED_K = 64

__all__ = [
    "Kernel",
    "ReflectionVerdict",
    "ContractionCertificate",
    "CertificateError",
    "ResolutionError",
    "make_kernel",
    "from_matrix",
    "apply",
    "apply_field",
    "transpose",
    "compose",
    "kernel_power",
    "op_norm",
    "op_norm_distance",
    "spectral_radius",
    "reflection_class_check",
    "bounded_parameters",
    "neumann_apply",
]


class ResolutionError(ValidationError):
    """Kernel grid and sample grid cannot be reconciled."""


class CertificateError(RuntimeError):
    """No bounded parameters ``(gamma, k)`` were found below the cap."""


def _cell_index(x, n):
    # K_1 = [0, 1/n], K_i = ((i-1)/n, i/n]
    idx = np.ceil(np.asarray(x, dtype=float) * n).astype(int) - 1
    return np.clip(idx, 0, n - 1)


class Kernel:
    """Nonnegative function on ``[0, 1]^2`` viewed as an integral operator.

    Instances are immutable.  Use :func:`make_kernel` or :func:`from_matrix`
    rather than calling the constructor directly.
    """

    __slots__ = ("_family", "_params", "_func", "_grid", "_resolution", "_transposed", "_cache")

    def __init__(self, family, params=None, func=None, grid=None,
                 resolution=DEFAULT_RESOLUTION, transposed=False):
        if (func is None) == (grid is None):
            raise ValidationError("a kernel needs exactly one of func or grid")
        self._family = family
        self._params = dict(params or {})
        self._func = func
        self._transposed = bool(transposed)
        self._resolution = check_positive_int(resolution, "resolution")
        if grid is not None:
            grid = check_finite_array(grid, "kernel grid", ndim=2).copy()
            if grid.shape[0] != grid.shape[1]:
                raise ValidationError(f"kernel grid must be square, got {grid.shape}")
            grid.setflags(write=False)
        self._grid = grid
        self._cache = {}

    # -- introspection -------------------------------------------------
    @property
    def family(self):
        return self._family

    @property
    def params(self):
        return dict(self._params)

    @property
    def is_blockwise(self):
        return self._grid is not None

    @property
    def grid(self):
        """The ``n x n`` block values, or ``None`` for closed forms."""
        return self._grid

    @property
    def grid_size(self):
        return None if self._grid is None else self._grid.shape[0]

    @property
    def resolution(self):
        """Default number of cells per axis used to discretise this kernel."""
        return self.grid_size if self.is_blockwise else self._resolution

    @property
    def transposed(self):
        return self._transposed

    def __repr__(self):
        if self.is_blockwise:
            return f"Kernel(blockwise, n={self.grid_size})"
        t = ", transposed" if self._transposed else ""
        return f"Kernel({self._family}, {self._params}{t})"

    # -- evaluation ----------------------------------------------------
    def __call__(self, u, v):
        u = np.asarray(u, dtype=float)
        v = np.asarray(v, dtype=float)
        if self._transposed:
            u, v = v, u
        if self.is_blockwise:
            n = self.grid_size
            return self._grid[_cell_index(u, n), _cell_index(v, n)]
        return np.broadcast_to(self._func(u, v), np.broadcast(u, v).shape).astype(float)

    def cells(self, M=None):
        """Cell values on the ``M x M`` uniform grid (read-only array)."""
        M = self.resolution if M is None else check_positive_int(M, "M")
        if M in self._cache:
            return self._cache[M]
        if self.is_blockwise:
            n = self.grid_size
            if M % n:
                raise ResolutionError(f"grid of {M} cells is not a multiple of kernel grid {n}")
            r = M // n
            vals = self._grid if r == 1 else np.repeat(np.repeat(self._grid, r, axis=0), r, axis=1)
            vals = vals.T.copy() if self._transposed else vals.copy()
        else:
            mid = (np.arange(M) + 0.5) / M
            vals = np.array(self(mid[:, None], mid[None, :]), dtype=float)
        vals.setflags(write=False)
        self._cache[M] = vals
        return vals

    def matrix(self, M=None):
        """Discrete operator ``K / M`` acting on cell-value vectors."""
        M = self.resolution if M is None else M
        return self.cells(M) / M

    # -- serialisation -------------------------------------------------
    def to_dict(self):
        if self.is_blockwise:
            grid = self._grid.T if self._transposed else self._grid
            return {"family": "blockwise", "params": {}, "grid": grid.tolist()}
        d = {"family": self._family, "params": self.params}
        if self._resolution != DEFAULT_RESOLUTION:
            d["resolution"] = self._resolution
        if self._transposed:
            d["transposed"] = True
        return d

    def to_json(self, **kw):
        return json.dumps(self.to_dict(), **kw)

    @classmethod
    def from_dict(cls, d):
        return make_kernel(d)

    @classmethod
    def from_json(cls, s):
        return make_kernel(json.loads(s))


# ---------------------------------------------------------------------------
# kernel families


def _family_constant(c):
    c = float(c)
    return lambda u, v: np.full(np.broadcast(u, v).shape, c)


def _family_symmetric(c):
    # row and column integrals are both c
    c = float(c)
    return lambda u, v: c * (1.0 + np.cos(2 * np.pi * (u - v)))


def _family_bipartite(k, upper, lower=None):
    k, upper = float(k), float(upper)
    lower = upper if lower is None else float(lower)

    def f(u, v):
        u_low, v_low = u <= k, v <= k
        return np.where(u_low & ~v_low, upper, 0.0) + np.where(~u_low & v_low, lower, 0.0)

    return f


def _family_block(values, row_breaks=(), col_breaks=None):
    values = np.asarray(values, dtype=float)
    rb = np.asarray(row_breaks, dtype=float)
    cb = rb if col_breaks is None else np.asarray(col_breaks, dtype=float)
    if values.shape != (rb.size + 1, cb.size + 1):
        raise ValidationError(
            f"block values shape {values.shape} does not match breaks ({rb.size + 1}, {cb.size + 1})"
        )
    for b in (rb, cb):
        if b.size and (np.any(np.diff(b) <= 0) or b[0] <= 0 or b[-1] >= 1):
            raise ValidationError("block breaks must be strictly increasing inside (0, 1)")

    def f(u, v):
        return values[np.searchsorted(rb, u, side="left"), np.searchsorted(cb, v, side="left")]

    return f


def _family_clustered(breaks, within, between=0.0):
    breaks = list(breaks)
    m = len(breaks) + 1
    within = np.broadcast_to(np.asarray(within, dtype=float), (m,))
    values = np.full((m, m), float(between))
    values[np.diag_indices(m)] = within
    return _family_block(values, breaks)


def _family_ring(alpha, eps):
    # radius alpha/2 keeps the row mass at 1 - eps
    alpha, eps = float(alpha), float(eps)
    height = (1.0 - eps) / alpha
    radius = alpha / 2

    def f(u, v):
        d = np.abs(u - v)
        d = np.minimum(d, 1.0 - d)
        return np.where((d > 1e-12) & (d <= radius + 1e-12), height, 0.0)

    return f


def _family_power(a, p, q):
    a, p, q = float(a), float(p), float(q)
    return lambda u, v: a * np.power(u, p) * np.power(v, q)


def _family_sine(a, b, c):
    a, b, c = float(a), float(b), float(c)
    return lambda u, v: a + b * np.sin(2 * np.pi * u) + c * np.sin(2 * np.pi * v)


def _check_params(family, p):
    def nonneg(*names):
        for n in names:
            if p[n] < 0:
                raise ValidationError(f"{family}: {n} must be nonnegative")

    if family in ("constant", "symmetric"):
        nonneg("c")
    elif family == "bipartite":
        if not 0 < p["k"] < 1:
            raise ValidationError("bipartite: k must lie in (0, 1)")
        nonneg("upper")
        if p.get("lower") is not None:
            nonneg("lower")
    elif family == "block":
        if np.any(np.asarray(p["values"], dtype=float) < 0):
            raise ValidationError("block: values must be nonnegative")
    elif family == "clustered":
        if np.any(np.asarray(p["within"], dtype=float) < 0) or p.get("between", 0.0) < 0:
            raise ValidationError("clustered: values must be nonnegative")
    elif family == "ring":
        if not 0 < p["alpha"] < 1:
            raise ValidationError("ring: alpha must lie in (0, 1)")
        if not 0 < p["eps"] < 1:
            raise ValidationError("ring: eps must lie in (0, 1)")
    elif family == "power":
        if p["a"] <= 0 or p["p"] <= 0 or p["q"] <= 0:
            raise ValidationError("power: a, p, q must be positive")
    elif family == "sine":
        if not (1 >= p["a"] > abs(p["b"]) + abs(p["c"])):
            raise ValidationError("sine: need 1 >= a > |b| + |c|")


_FAMILIES = {
    "constant": _family_constant,
    "symmetric": _family_symmetric,
    "bipartite": _family_bipartite,
    "block": _family_block,
    "clustered": _family_clustered,
    "ring": _family_ring,
    "power": _family_power,
    "sine": _family_sine,
}


def make_kernel(family_spec, require_reflection=None):
    """Build a kernel from ``{"family": ..., "params": {...}}``.

    Families: ``constant(c)``, ``symmetric(c)`` (``c(1 + cos 2pi(u-v))``),
    ``bipartite(k, upper, lower)``, ``block(values, row_breaks, col_breaks)``,
    ``clustered(breaks, within, between)``, ``ring(alpha, eps)``,
    ``power(a, p, q)``, ``sine(a, b, c)`` and ``blockwise`` (with ``grid``).

    ``require_reflection`` may be ``"kernel"`` or ``"transpose"``; the named
    operator must then pass :func:`reflection_class_check`.
    """
    if isinstance(family_spec, Kernel):
        kern = family_spec
    else:
        spec = dict(family_spec)
        family = spec.get("family")
        params = dict(spec.get("params", {}))
        if family == "blockwise":
            grid = spec.get("grid", params.get("grid"))
            if grid is None:
                raise ValidationError("blockwise kernel needs a grid")
            kern = Kernel("blockwise", grid=grid)
            if spec.get("transposed"):
                kern = transpose(kern)
        elif family in _FAMILIES:
            try:
                _check_params(family, params)
                func = _FAMILIES[family](**params)
            except (TypeError, KeyError) as exc:
                raise ValidationError(f"{family}: bad parameters {params}: {exc}") from None
            kern = Kernel(family, params, func=func,
                          resolution=spec.get("resolution", DEFAULT_RESOLUTION),
                          transposed=spec.get("transposed", False))
        else:
            raise ValidationError(f"unknown kernel family {family!r}")
    if require_reflection is not None:
        if require_reflection not in ("kernel", "transpose"):
            raise ValidationError("require_reflection must be 'kernel' or 'transpose'")
        op = kern if require_reflection == "kernel" else transpose(kern)
        verdict = reflection_class_check(op)
        if not verdict.in_class_R:
            raise ValidationError(f"{require_reflection} of {kern!r} is not a reflection operator: {verdict}")
    return kern


def from_matrix(P, check_substochastic=True):
    """Blockwise kernel with value ``N * P[i, j]`` on ``K_i x K_j``."""
    P = check_finite_array(P, "P", ndim=2)
    if check_substochastic:
        from ._validation import check_routing_matrix

        check_routing_matrix(P)
    return Kernel("blockwise", grid=P.shape[0] * P)


# ---------------------------------------------------------------------------
# algebra


def _lcm(a, b):
    return a * b // math.gcd(a, b)


def common_resolution(*kernels, M=None):
    """Smallest grid on which all kernels can be represented together."""
    if M is not None:
        return check_positive_int(M, "M")
    closed = [k.resolution for k in kernels if not k.is_blockwise]
    res = max(closed) if closed else 1
    for k in kernels:
        if k.is_blockwise:
            res = _lcm(res, k.grid_size)
    return res


def _block_apply(values, n, f):
    """Exact action of an ``n``-block kernel on ``f`` with ``M = r n`` rows."""
    M = f.shape[0]
    r = M // n
    block_means = f.reshape((n, r) + f.shape[1:]).mean(axis=1)
    out = np.tensordot(values / n, block_means, axes=(1, 0))
    return np.repeat(out, r, axis=0) if r > 1 else out


def _apply_array(F, f):
    M = f.shape[0]
    if F.is_blockwise:
        n = F.grid_size
        if M % n:
            raise ResolutionError(f"{M} sample cells is not a multiple of kernel grid {n}")
        grid = F.grid.T if F.transposed else F.grid
        return _block_apply(grid, n, f)
    return np.tensordot(F.matrix(M), f, axes=(1, 0))


def apply(F, f):
    """``(F f)(u) = int F(u, v) f(v) dv`` for ``f`` given on ``M`` cells."""
    f = check_finite_array(f, "f", ndim=1)
    return _apply_array(F, f)


def apply_field(F, x):
    """Apply ``F`` in space at every time index of a path field.

    ``x`` is a :class:`~jacksonflow.fields.PathField` or an ``(M, K+1)`` array;
    the return type follows the input.
    """
    from .fields import PathField

    if isinstance(x, PathField):
        return x.with_values(_apply_array(F, x.values))
    arr = check_finite_array(x, "x", ndim=2)
    return _apply_array(F, arr)


def transpose(F):
    """Kernel with ``F^T(u, v) = F(v, u)``; an exact involution."""
    if F.is_blockwise:
        grid = F.grid if F.transposed else F.grid.T
        return Kernel("blockwise", grid=grid)
    return Kernel(F.family, F.params, func=F._func, resolution=F.resolution,
                  transposed=not F.transposed)


def compose(F1, F2, M=None):
    """Kernel of ``F1 F2``: ``int F1(u, w) F2(w, v) dw``.

    Blockwise pairs compose exactly on their common grid.  Closed forms are
    discretised first, so the result is always blockwise.
    """
    M = common_resolution(F1, F2, M=M)
    grid = F1.cells(M) @ F2.cells(M) / M
    return Kernel("blockwise", grid=grid)


def kernel_power(F, n, M=None):
    """``n``-fold composition ``F^(n)`` as a blockwise kernel (``n >= 0``)."""
    M = common_resolution(F, M=M)
    A = F.matrix(M)
    P = np.linalg.matrix_power(A, n)
    return Kernel("blockwise", grid=P * M)


def _col_norm(A):
    return float(np.abs(A).sum(axis=0).max()) if A.size else 0.0


def op_norm(F, M=None):
    """``sup_v int |F(u, v)| du`` on the discretisation grid.

    Exact for blockwise kernels.  For closed forms it is the maximum column
    integral at ``M`` cells and converges as ``M`` grows.
    """
    M = common_resolution(F, M=M)
    return _col_norm(F.matrix(M))


def op_norm_distance(F1, F2, M=None):
    """``||F1 - F2||_op`` computed on the common refined grid."""
    M = common_resolution(F1, F2, M=M)
    return _col_norm(F1.matrix(M) - F2.matrix(M))


def _gelfand(A, squarings=40):
    # rho = lim ||A^n||^(1/n); renormalised repeated squaring, n = 2**squarings
    nb = _col_norm(A)
    if nb == 0.0:
        return 0.0, 1
    B = A / nb
    log_scale = math.log(nb)
    for j in range(squarings):
        B = B @ B
        nb = _col_norm(B)
        if nb == 0.0:
            return 0.0, 2 ** (j + 1)
        B /= nb
        log_scale = 2 * log_scale + math.log(nb)
    return math.exp(log_scale / 2 ** squarings), 2 ** squarings


@dataclass(frozen=True)
class SpectralEstimate:
    value: float
    iterations: int
    converged: bool
    method: str
    resolution: int

    def __float__(self):
        return self.value


def spectral_radius(F, tol=1e-12, max_iter=5000, M=None, full=False):
    """Perron root of the discretised operator.

    Power iteration on ``A + I`` (``A = K/M``) from the positive vector; the
    shift makes periodic nonnegative matrices converge.  When the relative
    change has not dropped below ``tol`` within ``max_iter`` steps the Gelfand
    estimate ``||A^n||^(1/n)`` with ``n = 2**40`` is returned instead.

    With ``full=True`` a :class:`SpectralEstimate` is returned.
    """
    M = common_resolution(F, M=M)
    A = F.matrix(M)
    if np.any(A < -NONNEG_TOL):
        raise ValidationError("spectral_radius needs a nonnegative kernel")
    x = np.full(M, 1.0 / M)
    prev = None
    est = None
    for it in range(1, max_iter + 1):
        y = A @ x + x
        growth = float(y.sum())  # ||(A+I) x||_1 with ||x||_1 = 1, x >= 0
        x = y / growth
        est = growth - 1.0
        # a nilpotent leading block only converges like 1/n and falls through
        if prev is not None and abs(est - prev) <= tol * max(abs(est), 1.0):
            res = SpectralEstimate(max(est, 0.0), it, True, "power", M)
            return res if full else res.value
        prev = est
    value, n = _gelfand(A)
    res = SpectralEstimate(value, n, False, "gelfand", M)
    return res if full else res.value


@dataclass(frozen=True)
class ReflectionVerdict:
    nonnegative: bool
    op_norm: float
    spectral_radius_estimate: float
    in_class_R: bool
    resolution: int
    tol: float = NONNEG_TOL
    rho_tol: float = RHO_TOL


def reflection_class_check(F, tol=NONNEG_TOL, rho_tol=RHO_TOL, M=None):
    """Decide whether ``F`` is a reflection operator.

    Requires ``F >= -tol`` on the grid, ``||F||_op <= 1 + tol`` and a spectral
    radius below ``1 - rho_tol``.
    """
    M = common_resolution(F, M=M)
    cells = F.cells(M)
    nonneg = bool(cells.min() >= -tol) if cells.size else True
    norm = op_norm(F, M=M)
    rho = spectral_radius(F, M=M) if nonneg else float("nan")
    in_r = bool(nonneg and norm <= 1 + tol and rho < 1 - rho_tol)
    return ReflectionVerdict(nonneg, norm, rho, in_r, M, tol, rho_tol)


@dataclass(frozen=True)
class ContractionCertificate:
    """Bounded parameters ``(gamma, k)`` with ``||F^(k)||_op <= gamma``.

    ``psi_lipschitz`` bounds the regulator map, ``phi_lipschitz`` the
    reflected process, ``inverse_norm_bound`` the Neumann inverse.
    """

    gamma: float
    k: int
    power_norm: float
    resolution: int

    @property
    def psi_lipschitz(self):
        return self.k / (1.0 - self.gamma)

    @property
    def phi_lipschitz(self):
        return 1.0 + 2.0 * self.k / (1.0 - self.gamma)

    @property
    def inverse_norm_bound(self):
        return self.k / (1.0 - self.gamma)

    def recheck(self, F):
        """Recompute ``||F^(k)||_op`` and confirm it is at most ``gamma``."""
        A = F.matrix(self.resolution)
        return _col_norm(np.linalg.matrix_power(A, self.k)) <= self.gamma * (1 + 1e-12) + 1e-15


def bounded_parameters(F, gamma=0.5, cap=MAX_BOUNDED_K, M=None):
    """Smallest ``k <= cap`` with ``||F^(k)||_op <= gamma``."""
    if not 0 < gamma < 1:
        raise ValidationError(f"gamma={gamma} must lie in (0, 1)")
    M = common_resolution(F, M=M)
    A = F.matrix(M)
    if np.any(A < -NONNEG_TOL):
        raise ValidationError("bounded_parameters needs a nonnegative kernel")
    P = A.copy()
    for k in range(1, cap + 1):
        norm = _col_norm(P)
        if norm <= gamma * (1 + 1e-12) + 1e-15:
            return ContractionCertificate(float(gamma), k, norm, M)
        P = P @ A
    raise CertificateError(
        f"||F^(k)||_op > {gamma} for all k <= {cap}; spectral radius too close to 1"
    )


def neumann_apply(F, f, tol=1e-12, cert=None, max_terms=100_000):
    """``(1 - F)^{-1} f`` as the partial sum of ``sum_n F^(n) f``.

    Stops once the residual ``||(1 - F) S - f||_1 = ||F^(n+1) f||_1`` is at most
    ``tol``.  The certificate guarantees geometric decay by ``gamma`` every
    ``k`` terms and caps the number of terms.
    """
    f = check_finite_array(f, "f", ndim=1)
    if cert is None:
        cert = bounded_parameters(F, M=None if F.is_blockwise else f.size)
    norm_f = float(np.abs(f).mean())
    if norm_f == 0.0:
        return np.zeros_like(f)
    # ||F^(n) f|| <= gamma^(n // k) ||f||
    blocks = math.ceil(math.log(tol / norm_f) / math.log(cert.gamma)) if tol < norm_f else 0
    limit = min(max_terms, cert.k * (blocks + 1) + 1)
    total = f.copy()
    term = f
    for _ in range(limit):
        term = _apply_array(F, term)
        if float(np.abs(term).mean()) <= tol:
            return total + term
        total = total + term
    if float(np.abs(_apply_array(F, term)).mean()) <= tol:
        return total
    raise CertificateError("Neumann series did not reach tolerance within the certified number of terms")
