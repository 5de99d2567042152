"""Discretised space-time fields and their file formats.

A :class:`PathField` holds ``values[u, j]`` for ``M`` space cells and the
uniform time grid ``t_j = j * dt``, ``j = 0..K``.

Two on-disk layouts are supported, both versioned:

* CSV with header ``cell_index,t,value``, one row per (cell, time) pair in
  row-major order.  A leading comment line ``# pathfield v1`` is written.
* Binary: magic ``b"PFLD"``, ``uint16`` version (1), ``uint32`` M, ``uint32`` K,
  ``float64`` dt, followed by ``M * (K + 1)`` little-endian ``float64`` values in
  row-major (cell-major) order.
"""

import csv
import io
import struct
from dataclasses import dataclass

import numpy as np

from ._validation import ValidationError, check_finite_array

FORMAT_VERSION = 1
_MAGIC = b"PFLD"
_HEADER = struct.Struct("<4sHIId")


@dataclass(frozen=True, eq=False)
class PathField:
    values: np.ndarray
    dt: float

    def __post_init__(self):
        vals = check_finite_array(self.values, "field values", ndim=2)
        if vals.shape[1] < 1:
            raise ValidationError("a field needs at least one time point")
        if not self.dt > 0:
            raise ValidationError(f"dt must be positive, got {self.dt}")
        vals = vals.copy()
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "dt", float(self.dt))

    @classmethod
    def from_function(cls, func, M, T, dt):
        """Sample ``func(u, t)`` at cell midpoints and grid times."""
        K = steps_for(T, dt)
        u = (np.arange(M) + 0.5) / M
        t = np.arange(K + 1) * dt
        vals = np.broadcast_to(func(u[:, None], t[None, :]), (M, K + 1))
        return cls(np.asarray(vals, dtype=float), dt)

    @classmethod
    def zeros(cls, M, K, dt):
        return cls(np.zeros((M, K + 1)), dt)

    @property
    def M(self):
        return self.values.shape[0]

    @property
    def K(self):
        return self.values.shape[1] - 1

    @property
    def T(self):
        return self.K * self.dt

    @property
    def times(self):
        return np.arange(self.K + 1) * self.dt

    def with_values(self, values):
        return PathField(values, self.dt)

    def check_compatible(self, other):
        if self.values.shape != other.values.shape or not np.isclose(self.dt, other.dt):
            raise ValidationError(
                f"field grids differ: {self.values.shape}/{self.dt} vs {other.values.shape}/{other.dt}"
            )

    def is_increasing(self, tol=0.0):
        v = self.values
        return bool(np.all(v[:, 0] >= -tol) and np.all(np.diff(v, axis=1) >= -tol))

    def norm(self):
        """``||x||_{T,1} = (1/M) sum_u max_t |x_u(t)|``."""
        return float(np.abs(self.values).max(axis=1).mean())

    def __add__(self, other):
        if isinstance(other, PathField):
            self.check_compatible(other)
            other = other.values
        return self.with_values(self.values + other)

    def __sub__(self, other):
        if isinstance(other, PathField):
            self.check_compatible(other)
            other = other.values
        return self.with_values(self.values - other)

    def __neg__(self):
        return self.with_values(-self.values)

    def __mul__(self, c):
        return self.with_values(self.values * c)

    __rmul__ = __mul__

    # -- serialisation -------------------------------------------------
    def to_csv(self, path_or_buf=None):
        buf = io.StringIO()
        buf.write(f"# pathfield v{FORMAT_VERSION} M={self.M} K={self.K} dt={self.dt!r}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["cell_index", "t", "value"])
        t = self.times
        for u in range(self.M):
            row = self.values[u]
            for j in range(self.K + 1):
                w.writerow([u, repr(float(t[j])), repr(float(row[j]))])
        text = buf.getvalue()
        if path_or_buf is None:
            return text
        if hasattr(path_or_buf, "write"):
            path_or_buf.write(text)
        else:
            with open(path_or_buf, "w", newline="") as fh:
                fh.write(text)
        return None

    @classmethod
    def read_csv(cls, path_or_buf):
        if hasattr(path_or_buf, "read"):
            text = path_or_buf.read()
        else:
            with open(path_or_buf, newline="") as fh:
                text = fh.read()
        lines = [ln for ln in text.splitlines() if ln and not ln.startswith("#")]
        rows = list(csv.DictReader(lines))
        if not rows:
            raise ValidationError("empty path field CSV")
        cells = np.array([int(r["cell_index"]) for r in rows])
        ts = np.array([float(r["t"]) for r in rows])
        vals = np.array([float(r["value"]) for r in rows])
        tgrid = np.unique(ts)
        M = int(cells.max()) + 1
        K = tgrid.size - 1
        if K < 1:
            raise ValidationError("CSV field needs at least two time points")
        dt = float(tgrid[1] - tgrid[0])
        if not np.allclose(np.diff(tgrid), dt, rtol=1e-9, atol=1e-12):
            raise ValidationError("CSV time grid is not uniform")
        out = np.full((M, K + 1), np.nan)
        jdx = np.rint(ts / dt).astype(int)
        out[cells, jdx] = vals
        if np.isnan(out).any():
            raise ValidationError("CSV does not cover every (cell, time) pair")
        return cls(out, dt)

    def to_bytes(self):
        head = _HEADER.pack(_MAGIC, FORMAT_VERSION, self.M, self.K, self.dt)
        return head + np.ascontiguousarray(self.values, dtype="<f8").tobytes()

    @classmethod
    def from_bytes(cls, data):
        if len(data) < _HEADER.size:
            raise ValidationError("truncated path field header")
        magic, version, M, K, dt = _HEADER.unpack_from(data)
        if magic != _MAGIC:
            raise ValidationError("not a path field blob")
        if version != FORMAT_VERSION:
            raise ValidationError(f"unsupported path field version {version}")
        body = np.frombuffer(data, dtype="<f8", offset=_HEADER.size)
        if body.size != M * (K + 1):
            raise ValidationError("path field payload has the wrong length")
        return cls(body.reshape(M, K + 1).astype(float), dt)


def steps_for(T, dt):
    """Number of grid steps ``K`` with ``K * dt == T`` (to rounding)."""
    K = int(round(T / dt))
    if K < 1 or not np.isclose(K * dt, T, rtol=1e-9, atol=1e-12):
        raise ValidationError(f"T={T} is not a positive multiple of dt={dt}")
    return K


def time_grid(T, dt):
    return np.arange(steps_for(T, dt) + 1) * dt
