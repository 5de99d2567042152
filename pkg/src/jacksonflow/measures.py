"""Path norms, the uniform path metric and Wasserstein-1 between atom sets."""

import csv
import io
import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.optimize import linear_sum_assignment, linprog

from ._validation import ValidationError, check_finite_array
from .fields import PathField

__all__ = [
    "AtomSet",
    "norm_T1",
    "sup_metric",
    "distance_matrix",
    "wasserstein1",
    "functional_average",
    "lipschitz_constant",
    "FUNCTIONALS",
]

WEIGHT_TOL = 1e-12
# equal-weight problems are expanded to an assignment of this size at most
ASSIGNMENT_LIMIT = 2048

_trapezoid = getattr(np, "trapezoid", None) or np.trapz


@dataclass(frozen=True, eq=False)
class AtomSet:
    """Finitely supported probability measure on grid paths.

    ``atoms[a, j]`` is the value of atom ``a`` at time ``j * dt``.
    """

    atoms: np.ndarray
    weights: np.ndarray
    dt: float = 1.0

    def __post_init__(self):
        atoms = check_finite_array(self.atoms, "atoms", ndim=2)
        w = check_finite_array(self.weights, "weights", ndim=1)
        if atoms.shape[0] != w.size or w.size == 0:
            raise ValidationError(f"{atoms.shape[0]} atoms but {w.size} weights")
        if np.any(w < 0):
            raise ValidationError("weights must be nonnegative")
        if abs(w.sum() - 1.0) > WEIGHT_TOL * max(1, w.size):
            raise ValidationError(f"weights sum to {w.sum()!r}, not 1")
        if not self.dt > 0:
            raise ValidationError("dt must be positive")
        for name, arr in (("atoms", atoms), ("weights", w)):
            arr = arr.copy()
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "dt", float(self.dt))

    @classmethod
    def uniform(cls, paths, dt=1.0):
        paths = np.asarray(paths, dtype=float)
        return cls(paths, np.full(paths.shape[0], 1.0 / paths.shape[0]), dt)

    @classmethod
    def from_field(cls, field):
        """One equal-weight atom per cell of a :class:`PathField`."""
        return cls.uniform(field.values, field.dt)

    @property
    def size(self):
        return self.weights.size

    @property
    def times(self):
        return np.arange(self.atoms.shape[1]) * self.dt

    @property
    def is_uniform(self):
        return bool(np.all(self.weights == self.weights[0]) or np.allclose(self.weights, 1.0 / self.size, rtol=0, atol=1e-15))

    def check_compatible(self, other):
        if self.atoms.shape[1] != other.atoms.shape[1] or not math.isclose(self.dt, other.dt, rel_tol=1e-9):
            raise ValidationError("atom sets live on different time grids")

    def to_csv(self, path_or_buf=None):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["atom_index", "weight", "t", "value"])
        t = self.times
        for a in range(self.size):
            wa = repr(float(self.weights[a]))
            for j in range(t.size):
                w.writerow([a, wa, repr(float(t[j])), repr(float(self.atoms[a, j]))])
        return _emit(buf.getvalue(), path_or_buf)

    @classmethod
    def read_csv(cls, path_or_buf):
        rows = list(csv.DictReader(_lines(path_or_buf)))
        if not rows:
            raise ValidationError("empty atom CSV")
        idx = np.array([int(r["atom_index"]) for r in rows])
        ts = np.array([float(r["t"]) for r in rows])
        vals = np.array([float(r["value"]) for r in rows])
        wts = np.array([float(r["weight"]) for r in rows])
        n = int(idx.max()) + 1
        tgrid = np.unique(ts)
        dt = float(tgrid[1] - tgrid[0]) if tgrid.size > 1 else 1.0
        if tgrid.size > 1 and not np.allclose(np.diff(tgrid), dt, rtol=1e-9, atol=1e-12):
            raise ValidationError("atom CSV time grid is not uniform")
        jdx = np.rint(ts / dt).astype(int)
        atoms = np.full((n, tgrid.size), np.nan)
        atoms[idx, jdx] = vals
        if np.isnan(atoms).any():
            raise ValidationError("atom CSV does not cover every (atom, time) pair")
        weights = np.zeros(n)
        weights[idx] = wts
        return cls(atoms, weights, dt)


def _emit(text, path_or_buf):
    if path_or_buf is None:
        return text
    if hasattr(path_or_buf, "write"):
        path_or_buf.write(text)
    else:
        with open(path_or_buf, "w", newline="") as fh:
            fh.write(text)
    return None


def _lines(path_or_buf):
    if hasattr(path_or_buf, "read"):
        text = path_or_buf.read()
    else:
        with open(path_or_buf, newline="") as fh:
            text = fh.read()
    return [ln for ln in text.splitlines() if ln and not ln.startswith("#")]


def norm_T1(x):
    v = x.values if isinstance(x, PathField) else check_finite_array(x, "x", ndim=2)
    return float(np.abs(v).max(axis=1).mean())


def sup_metric(p, q):
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape != q.shape:
        raise ValidationError(f"paths have different grids: {p.shape} vs {q.shape}")
    return float(np.abs(p - q).max()) if p.size else 0.0


def distance_matrix(A, B, chunk=64):
    """Pairwise uniform distances between rows of ``A`` and rows of ``B``."""
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    D = np.empty((A.shape[0], B.shape[0]))
    for s in range(0, A.shape[0], chunk):
        D[s:s + chunk] = np.abs(A[s:s + chunk, None, :] - B[None, :, :]).max(axis=2)
    return D


@dataclass(frozen=True)
class Transport:
    cost: float
    coupling: np.ndarray
    method: str


def _uniform_transport(D, n, m):
    L = n * m // math.gcd(n, m)
    ra, rb = L // n, L // m
    C = np.repeat(np.repeat(D, ra, axis=0), rb, axis=1)
    rows, cols = linear_sum_assignment(C)
    plan = np.zeros((n, m))
    np.add.at(plan, (rows // ra, cols // rb), 1.0 / L)
    return float(C[rows, cols].sum() / L), plan


def _lp_transport(D, wa, wb):
    n, m = D.shape
    eye_n = sparse.identity(n, format="csr")
    eye_m = sparse.identity(m, format="csr")
    A_rows = sparse.kron(eye_n, np.ones((1, m)))
    A_cols = sparse.kron(np.ones((1, n)), eye_m)
    A = sparse.vstack([A_rows, A_cols]).tocsr()
    b = np.concatenate([wa, wb])
    res = linprog(D.ravel(), A_eq=A, b_eq=b, bounds=(0, None), method="highs")
    if res.status != 0:
        raise RuntimeError(f"transport LP failed: {res.message}")
    return float(res.fun), res.x.reshape(n, m)


def wasserstein1(a, b, return_coupling=False):
    """Exact optimal transport cost under the uniform path metric.

    Equal-weight measures whose atom counts have a small least common
    multiple are solved as an assignment problem; everything else goes to
    the HiGHS linear programming solver.
    """
    a.check_compatible(b)
    D = distance_matrix(a.atoms, b.atoms)
    n, m = D.shape
    L = n * m // math.gcd(n, m)
    if a.is_uniform and b.is_uniform and L <= ASSIGNMENT_LIMIT:
        cost, plan = _uniform_transport(D, n, m)
        method = "assignment"
    else:
        cost, plan = _lp_transport(D, a.weights, b.weights)
        method = "linprog"
    cost = max(cost, 0.0)
    if return_coupling:
        return Transport(cost, plan, method)
    return cost


def _hinge_max(paths, times, params):
    a = float(params.get("a", 0.0))
    return np.maximum(paths.max(axis=1) - a, 0.0)


def _path_integral(paths, times, params):
    return _trapezoid(paths, times, axis=1)


def _projection(paths, times, params):
    t = float(params["t"])
    j = int(np.argmin(np.abs(times - t)))
    if not math.isclose(times[j], t, rel_tol=1e-9, abs_tol=1e-12):
        warnings.warn(f"projection time {t} is off the grid; using {times[j]}", RuntimeWarning, stacklevel=3)
    return paths[:, j]


FUNCTIONALS = {
    "running_max_h": _hinge_max,
    "path_integral": _path_integral,
    "projection": _projection,
}


def lipschitz_constant(functional_id, T):
    """Uniform-metric Lipschitz constant of a library functional on ``[0, T]``."""
    if functional_id not in FUNCTIONALS:
        raise ValidationError(f"unknown functional {functional_id!r}")
    return float(T) if functional_id == "path_integral" else 1.0


def functional_average(a, functional_id, params=None):
    """``sum_k w_k f(atom_k)`` for a library functional.

    ``running_max_h`` uses the hinge ``h(x) = (x - a)^+`` of the path maximum,
    ``path_integral`` the trapezoid rule and ``projection`` the value at
    ``params["t"]`` (nearest grid point, with a warning when off grid).
    """
    params = params or {}
    try:
        f = FUNCTIONALS[functional_id]
    except KeyError:
        raise ValidationError(f"unknown functional {functional_id!r}") from None
    vals = f(a.atoms, a.times, params)
    return float(np.dot(a.weights, vals))
