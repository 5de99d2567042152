"""Open Jackson network simulation and fluid scaling.

The simulator uses uniformization: every station carries a service clock of
rate ``mu_i`` whether or not it is busy, and completions at an empty station
are discarded.  With a constant total rate ``sum(lambda) + sum(mu)`` the
holding times and event choices can be drawn in vectorized batches, and the
resulting queue process has exactly the law of the network CTMC.
"""

import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np

from ._validation import (
    ValidationError,
    check_finite_array,
    check_routing_matrix,
    profile_values,
)
from .fields import time_grid

__all__ = [
    "NetworkSpec",
    "SamplePath",
    "ScalingConfig",
    "ScaledPaths",
    "SimulationError",
    "make_rng",
    "simulate",
    "initial_queues",
    "fluid_scale",
    "spec_from_kernel",
    "empirical_measure",
]

DEFAULT_SELF_LOOP_LIMIT = 10.0
DEFAULT_MAX_EVENTS = 200_000_000
DEFAULT_LOG_BUDGET = 2_000_000


class SimulationError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class NetworkSpec:
    """Finite open network: arrival rates, service rates and routing."""

    lam: np.ndarray
    mu: np.ndarray
    P: np.ndarray
    self_loop_limit: float = DEFAULT_SELF_LOOP_LIMIT

    def __post_init__(self):
        lam = check_finite_array(self.lam, "lambda", ndim=1)
        mu = check_finite_array(self.mu, "mu", ndim=1)
        P = check_routing_matrix(self.P)
        N = lam.size
        if N < 1 or mu.size != N or P.shape != (N, N):
            raise ValidationError(f"inconsistent sizes: lambda {lam.size}, mu {mu.size}, P {P.shape}")
        if np.any(lam < 0):
            raise ValidationError("arrival rates must be nonnegative")
        if np.any(mu <= 0):
            raise ValidationError("service rates must be strictly positive")
        # p_ii = O(1) is outside the dense regime; only p_ii = O(1/N) is allowed
        diag = np.diag(P) * N
        if np.any(diag > self.self_loop_limit):
            i = int(np.argmax(diag))
            raise ValidationError(
                f"self-loop p[{i},{i}]={P[i, i]:.4g} exceeds {self.self_loop_limit}/N"
            )
        p_exit = 1.0 - P.sum(axis=1)
        if not np.any(p_exit > 1e-12):
            raise ValidationError("closed network: no station has a positive exit probability")
        rho = float(np.max(np.abs(np.linalg.eigvals(P)))) if N > 1 else float(P[0, 0])
        if rho >= 1 - 1e-9:
            raise ValidationError(f"routing matrix spectral radius {rho:.6g} is not below 1")
        for name, arr in (("lam", lam), ("mu", mu), ("P", P)):
            arr = arr.copy()
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        p_exit = np.clip(p_exit, 0.0, 1.0)
        p_exit.setflags(write=False)
        object.__setattr__(self, "_p_exit", p_exit)
        object.__setattr__(self, "_rho", rho)

    @property
    def N(self):
        return self.lam.size

    @property
    def p_exit(self):
        return self._p_exit

    @property
    def spectral_radius(self):
        return self._rho

    def to_dict(self):
        return {
            "N": self.N,
            "lambda": self.lam.tolist(),
            "mu": self.mu.tolist(),
            "P": self.P.tolist(),
        }

    @classmethod
    def from_dict(cls, d, **kw):
        try:
            return cls(d["lambda"], d["mu"], d["P"], **kw)
        except KeyError as exc:
            raise ValidationError(f"network spec is missing {exc}") from None

    def to_json(self, **kw):
        return json.dumps(self.to_dict(), **kw)

    @classmethod
    def from_json(cls, s):
        return cls.from_dict(json.loads(s))

    def digest(self):
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


@dataclass(frozen=True)
class EventCounts:
    arrivals: np.ndarray
    services: np.ndarray
    routed_in: np.ndarray
    routed_out: np.ndarray
    exits: np.ndarray
    discarded: int

    @property
    def total(self):
        return int(self.arrivals.sum() + self.services.sum())

    def to_dict(self):
        return {
            "arrivals": int(self.arrivals.sum()),
            "services": int(self.services.sum()),
            "routings": int(self.routed_in.sum()),
            "exits": int(self.exits.sum()),
            "discarded": int(self.discarded),
        }


@dataclass(frozen=True, eq=False)
class SamplePath:
    """One simulated run, sampled on ``sample_times``.

    ``Q[i, j]``, ``I[i, j]`` and ``B[i, j]`` are the queue length and the
    cumulative idle and busy times of station ``i`` at ``sample_times[j]``
    (right-continuous).  Idle and busy time are accumulated separately.  When the run
    stayed under the log budget, ``log_times``/``log_station``/``log_value``
    hold every queue change in order.
    """

    sample_times: np.ndarray
    Q: np.ndarray
    I: np.ndarray
    B: np.ndarray
    Q0: np.ndarray
    counts: EventCounts
    horizon: float
    seed: int
    rep: int
    log_times: np.ndarray = field(default=None, repr=False)
    log_station: np.ndarray = field(default=None, repr=False)
    log_value: np.ndarray = field(default=None, repr=False)

    @property
    def N(self):
        return self.Q.shape[0]

    @property
    def has_log(self):
        return self.log_times is not None

    def station_jumps(self, i):
        if not self.has_log:
            raise SimulationError("jump log was not kept for this run")
        sel = self.log_station == i
        return self.log_times[sel], self.log_value[sel]


def make_rng(seed, rep=0, stream=0):
    """Counter-based generator keyed by ``(seed, rep, stream)``."""
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(rep), int(stream)))
    return np.random.Generator(np.random.Philox(ss))


def simulate(spec, Q0, horizon, seed, rep=0, sample_times=None, keep_log=None,
             log_budget=DEFAULT_LOG_BUDGET, max_events=DEFAULT_MAX_EVENTS):
    """Simulate the network on ``[0, horizon]``.

    ``sample_times`` defaults to 101 equally spaced points.  ``keep_log=None``
    keeps the jump log when the expected number of events fits the budget.
    """
    N = spec.N
    Q = [int(q) for q in np.asarray(Q0).ravel()]
    if len(Q) != N:
        raise ValidationError(f"Q0 has {len(Q)} entries for {N} stations")
    if any(q < 0 for q in Q) or not np.allclose(np.asarray(Q0, dtype=float), Q):
        raise ValidationError("Q0 must hold nonnegative integers")
    horizon = float(horizon)
    if not horizon >= 0:
        raise ValidationError("horizon must be nonnegative")
    if sample_times is None:
        sample_times = np.linspace(0.0, horizon, 101)
    sample_times = check_finite_array(sample_times, "sample_times", ndim=1)
    if sample_times.size and (np.any(np.diff(sample_times) < 0) or sample_times[-1] > horizon * (1 + 1e-12)):
        raise ValidationError("sample times must be sorted and within the horizon")

    lam, mu = spec.lam, spec.mu
    rates = np.concatenate([lam, mu])
    total_rate = float(rates.sum())
    cum_rates = np.cumsum(rates) / total_rate
    cum_rates[-1] = 1.0
    cumP = np.cumsum(spec.P, axis=1)
    expected = total_rate * horizon
    if keep_log is None:
        keep_log = expected <= log_budget
    rng = make_rng(seed, rep)

    Q0_arr = np.array(Q, dtype=np.int64)
    arrivals = [0] * N
    services = [0] * N
    routed_in = [0] * N
    routed_out = [0] * N
    exits = [0] * N
    discarded = 0
    idle_acc = [0.0] * N
    zero_since = [0.0] * N
    busy_acc = [0.0] * N
    busy_since = [0.0] * N
    n_jobs = sum(Q)
    total_lam = float(lam.sum())
    log_t, log_s, log_v = ([], [], []) if keep_log else (None, None, None)

    K1 = sample_times.size
    Qs = np.empty((N, K1), dtype=np.int64)
    Is = np.empty((N, K1))
    Bs = np.empty((N, K1))
    j_next = 0

    def record_until(t_bound):
        # sample every grid time strictly before the next event
        nonlocal j_next
        if j_next >= K1 or sample_times[j_next] >= t_bound:
            return
        q = np.array(Q, dtype=np.int64)
        acc = np.array(idle_acc)
        zs = np.array(zero_since)
        bacc = np.array(busy_acc)
        bs = np.array(busy_since)
        empty = q == 0
        while j_next < K1 and sample_times[j_next] < t_bound:
            s = sample_times[j_next]
            Qs[:, j_next] = q
            Is[:, j_next] = acc + np.where(empty, s - zs, 0.0)
            Bs[:, j_next] = bacc + np.where(empty, 0.0, s - bs)
            j_next += 1

    t = 0.0
    n_events = 0
    batch = int(min(max(expected * 1.05 + 64, 64), 1 << 16))
    while True:
        if n_jobs == 0 and total_lam == 0.0:
            break
        gaps = rng.standard_exponential(batch) / total_rate
        times = t + np.cumsum(gaps)
        kinds = np.searchsorted(cum_rates, rng.random(batch), side="right")
        np.minimum(kinds, 2 * N - 1, out=kinds)
        u_route = rng.random(batch)
        svc = kinds >= N
        dest = np.full(batch, -1, dtype=np.int64)
        if svc.any():
            st = kinds[svc] - N
            dest[svc] = (cumP[st] <= u_route[svc, None]).sum(axis=1)
        times_l = times.tolist()
        kinds_l = kinds.tolist()
        dest_l = dest.tolist()
        stop = False
        for e in range(batch):
            te = times_l[e]
            if te > horizon:
                stop = True
                break
            if j_next < K1 and sample_times[j_next] < te:
                record_until(te)
            k = kinds_l[e]
            if k < N:
                q = Q[k] + 1
                Q[k] = q
                arrivals[k] += 1
                n_jobs += 1
                if q == 1:
                    idle_acc[k] += te - zero_since[k]
                    busy_since[k] = te
                if log_t is not None:
                    log_t.append(te)
                    log_s.append(k)
                    log_v.append(q)
                continue
            i = k - N
            if Q[i] == 0:
                discarded += 1
                continue
            q = Q[i] - 1
            Q[i] = q
            services[i] += 1
            if q == 0:
                zero_since[i] = te
                busy_acc[i] += te - busy_since[i]
            if log_t is not None:
                log_t.append(te)
                log_s.append(i)
                log_v.append(q)
            j = dest_l[e]
            if j >= N:
                exits[i] += 1
                n_jobs -= 1
                continue
            q = Q[j] + 1
            Q[j] = q
            routed_out[i] += 1
            routed_in[j] += 1
            if q == 1:
                idle_acc[j] += te - zero_since[j]
                busy_since[j] = te
            if log_t is not None:
                log_t.append(te)
                log_s.append(j)
                log_v.append(q)
        n_events += e + 1
        if n_events > max_events:
            raise SimulationError(f"event budget {max_events} exceeded")
        if stop:
            break
        t = times_l[-1]
        if n_jobs == 0 and total_lam == 0.0:
            break
    record_until(math.inf)

    counts = EventCounts(
        arrivals=np.array(arrivals),
        services=np.array(services),
        routed_in=np.array(routed_in),
        routed_out=np.array(routed_out),
        exits=np.array(exits),
        discarded=discarded,
    )
    logs = {}
    if log_t is not None:
        logs = dict(
            log_times=np.array(log_t),
            log_station=np.array(log_s, dtype=np.int64),
            log_value=np.array(log_v, dtype=np.int64),
        )
    for arr in (Qs, Is, Bs):
        arr.setflags(write=False)
    return SamplePath(sample_times, Qs, Is, Bs, Q0_arr, counts, horizon, int(seed), int(rep), **logs)


@dataclass(frozen=True)
class ScalingConfig:
    alpha: float
    T: float
    dt: float

    def __post_init__(self):
        if not self.alpha >= 0:
            raise ValidationError("alpha must be nonnegative")
        time_grid(self.T, self.dt)

    def scale(self, N):
        return float(N) ** self.alpha

    def horizon(self, N):
        return self.scale(N) * self.T

    def fluid_times(self):
        return time_grid(self.T, self.dt)

    def sample_times(self, N):
        return self.scale(N) * self.fluid_times()


@dataclass(frozen=True, eq=False)
class ScaledPaths:
    """Fluid-scaled grid paths ``Qbar[i, j]``, ``Ibar[i, j]`` at ``times[j]``."""

    times: np.ndarray
    Qbar: np.ndarray
    Ibar: np.ndarray

    @property
    def N(self):
        return self.Qbar.shape[0]

    @property
    def dt(self):
        return float(self.times[1] - self.times[0]) if self.times.size > 1 else 1.0


def initial_queues(q0, N, alpha):
    """``Q_i(0) = round(N^alpha q0(i/N))`` for a profile ``q0``."""
    pts = np.arange(1, N + 1) / N
    vals = profile_values(q0, N, "q0", points=pts)
    if np.any(vals < 0):
        raise ValidationError("initial profile must be nonnegative")
    return np.rint(float(N) ** alpha * vals).astype(np.int64)


def fluid_scale(path, cfg):
    N = path.N
    horizon = cfg.horizon(N)
    if path.horizon < horizon * (1 - 1e-12):
        raise ValidationError(f"path horizon {path.horizon} is shorter than N^alpha T = {horizon}")
    expect = cfg.sample_times(N)
    if path.sample_times.shape != expect.shape or not np.allclose(path.sample_times, expect, rtol=1e-12, atol=1e-12):
        raise ValidationError("path was not sampled on the scaled output grid")
    s = cfg.scale(N)
    return ScaledPaths(cfg.fluid_times(), path.Q / s, path.I / s)


def spec_from_kernel(G, lambda_fn, mu_fn, N, self_loop_limit=DEFAULT_SELF_LOOP_LIMIT):
    """Sample ``G`` at block representatives: ``P[i, j] = G(i/N, j/N) / N``."""
    pts = np.arange(1, N + 1) / N
    P = np.asarray(G(pts[:, None], pts[None, :]), dtype=float)
    P = np.broadcast_to(P, (N, N)) / N
    rows = P.sum(axis=1)
    if np.any(rows > 1 + 1e-12):
        i = int(np.argmax(rows))
        raise ValidationError(
            f"sampled kernel row {i} has mass {rows[i]:.6g} > 1; the kernel rows must integrate to at most 1"
        )
    lam = profile_values(lambda_fn, N, "lambda", points=pts)
    mu = profile_values(mu_fn, N, "mu", points=pts)
    return NetworkSpec(lam, mu, P.copy(), self_loop_limit=self_loop_limit)


def empirical_measure(scaled, dt=None):
    """Equal-weight atoms, one per station path."""
    from .measures import AtomSet

    if isinstance(scaled, ScaledPaths):
        return AtomSet.uniform(scaled.Qbar, scaled.dt if dt is None else dt)
    return AtomSet.uniform(np.asarray(scaled, dtype=float), 1.0 if dt is None else dt)
