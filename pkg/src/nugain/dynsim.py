"""Fixed-step simulation of contracting/wandering interconnections and trajectory diagnostics."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numba
import numpy as np
from scipy.integrate import cumulative_trapezoid

from .errors import ConfigurationError, DomainError, IntegrationError, MonotonicityError
from .gains import ContractionEnvelope, WanderingBound, power

BLOWUP = 1e9
MONOTONE_TOL = 1e-9

CONVERGED = "converged"
ESCAPED = "escaped"
UNDECIDED = "undecided"


# -- sets and norms ----------------------------------------------------------

@dataclass(frozen=True)
class InvariantSet:
    kind: str = "origin"
    center: Optional[tuple] = None
    radius: float = 0.0

    def __post_init__(self):
        if self.kind not in ("origin", "point", "ball"):
            raise DomainError(f"unknown set kind {self.kind!r}")
        if self.radius < 0 or not math.isfinite(self.radius):
            raise DomainError(f"radius must be finite and >= 0, got {self.radius}")
        if self.kind != "origin" and self.center is None:
            raise DomainError(f"{self.kind} set needs a center")

    @classmethod
    def origin(cls) -> "InvariantSet":
        return cls("origin")

    @classmethod
    def point(cls, center) -> "InvariantSet":
        return cls("point", tuple(float(c) for c in np.ravel(center)))

    @classmethod
    def ball(cls, center, radius: float) -> "InvariantSet":
        return cls("ball", tuple(float(c) for c in np.ravel(center)), float(radius))


def set_distance(x, A: InvariantSet):
    """Euclidean distance from ``x`` (one point, or rows of a 2-D array) to ``A``."""
    x = np.asarray(x, dtype=float)
    if A.center is not None:
        c = np.asarray(A.center)
        if x.shape[-1] != c.size:
            raise DomainError(f"dimension mismatch: point has {x.shape[-1]} components, set center has {c.size}")
        x = x - c
    d = np.linalg.norm(x, axis=-1)
    if A.kind == "ball":
        d = np.maximum(d - A.radius, 0.0)
    return float(d) if np.ndim(d) == 0 else d


def thresholded_distance(x, A: InvariantSet, Delta: float):
    if Delta < 0:
        raise DomainError(f"Delta must be >= 0, got {Delta}")
    d = np.maximum(np.asarray(set_distance(x, A)) - Delta, 0.0)
    return float(d) if np.ndim(d) == 0 else d


# -- models ------------------------------------------------------------------

@dataclass
class InterconnectionModel:
    """``x' = f_x(x, z, t)``, ``z' = f_z(x, z, t)`` with wandering output ``h(z)``.

    ``rhs`` optionally supplies a numba-compiled ``rhs(t, y, params) -> dy`` on
    the stacked state ``y = (x, z)``; it must agree with ``f_x``/``f_z``.
    """

    f_x: Callable
    f_z: Callable
    h: Callable
    set_A: InvariantSet
    dims: tuple
    rhs: Optional[Callable] = None
    params: np.ndarray = field(default_factory=lambda: np.zeros(0))
    target: Optional[InvariantSet] = None
    envelope: Optional[ContractionEnvelope] = None
    wandering: Optional[WanderingBound] = None
    name: str = "custom"

    def split(self, y):
        n = self.dims[0]
        return y[..., :n], y[..., n:]

    def derivative(self, t: float, y: np.ndarray) -> np.ndarray:
        x, z = self.split(y)
        dx = np.atleast_1d(np.asarray(self.f_x(x, z, t), dtype=float))
        dz = np.atleast_1d(np.asarray(self.f_z(x, z, t), dtype=float)) if self.dims[1] else np.zeros(0)
        if dx.shape != (self.dims[0],) or dz.shape != (self.dims[1],):
            raise DomainError(f"vector field dimensions {dx.shape}+{dz.shape} do not match dims {self.dims}")
        return np.concatenate((dx, dz))


# -- integration -------------------------------------------------------------

@numba.njit(nogil=True, cache=True)
def _norm(v):
    s = 0.0
    for k in range(v.size):
        s += v[k] * v[k]
    return math.sqrt(s)


@numba.njit(nogil=True, cache=True)
def _all_finite(v):
    for k in range(v.size):
        if not math.isfinite(v[k]):
            return False
    return True


@numba.njit(nogil=True, cache=True)
def rk4_loop(rhs, y0, t0, dt, n, params, blowup, every):
    """Integrate ``n`` RK4 steps, recording every ``every``-th state.

    Returns (times, states, status, fail_time, y_last) with status 0 ok,
    1 blow-up (a stage state left the bound), 2 non-finite derivative.
    """
    m = n // every + 1
    ts = np.empty(m)
    ys = np.empty((m, y0.size))
    y = y0.copy()
    ts[0] = t0
    ys[0] = y
    k = 1
    half = 0.5 * dt
    for i in range(n):
        t = t0 + i * dt
        k1 = rhs(t, y, params)
        if not _all_finite(k1):
            return ts[:k], ys[:k], 2, t, y
        y2 = y + half * k1
        if _norm(y2) > blowup:
            return ts[:k], ys[:k], 1, t + half, y
        k2 = rhs(t + half, y2, params)
        y3 = y + half * k2
        if not _all_finite(k2) or _norm(y3) > blowup:
            return ts[:k], ys[:k], 1 if _all_finite(k2) else 2, t + half, y
        k3 = rhs(t + half, y3, params)
        y4 = y + dt * k3
        if not _all_finite(k3) or _norm(y4) > blowup:
            return ts[:k], ys[:k], 1 if _all_finite(k3) else 2, t + dt, y
        k4 = rhs(t + dt, y4, params)
        if not _all_finite(k4):
            return ts[:k], ys[:k], 2, t + dt, y
        y = y + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if _norm(y) > blowup:
            return ts[:k], ys[:k], 1, t + dt, y
        if (i + 1) % every == 0:
            ts[k] = t0 + (i + 1) * dt
            ys[k] = y
            k += 1
    return ts[:k], ys[:k], 0, t0 + n * dt, y


def _rk4_python(f, y0, t0, dt, n, blowup, every):
    m = n // every + 1
    ts = np.empty(m)
    ys = np.empty((m, y0.size))
    y = y0.copy()
    ts[0], ys[0] = t0, y
    k = 1
    half = 0.5 * dt
    for i in range(n):
        t = t0 + i * dt
        stages = []
        arg, targ = y, t
        for w, tw in ((half, half), (half, half), (dt, dt), (None, None)):
            ki = f(targ, arg)
            if not np.all(np.isfinite(ki)):
                return ts[:k], ys[:k], 2, targ, y
            stages.append(ki)
            if w is None:
                break
            arg, targ = y + w * ki, t + tw
            if np.linalg.norm(arg) > blowup:
                return ts[:k], ys[:k], 1, targ, y
        k1, k2, k3, k4 = stages
        y = y + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if np.linalg.norm(y) > blowup:
            return ts[:k], ys[:k], 1, t + dt, y
        if (i + 1) % every == 0:
            ts[k] = t0 + (i + 1) * dt
            ys[k] = y
            k += 1
    return ts[:k], ys[:k], 0, t0 + n * dt, y


def step_count(t0: float, t_end: float, dt: float) -> int:
    if not (dt > 0 and math.isfinite(dt)):
        raise ConfigurationError(f"dt must be positive and finite, got {dt!r}")
    if not t_end > t0:
        raise ConfigurationError(f"t_end ({t_end}) must exceed t0 ({t0})")
    return int(math.ceil((t_end - t0) / dt - 1e-9))


@dataclass
class Trajectory:
    times: np.ndarray
    x: np.ndarray
    z: np.ndarray
    dist: np.ndarray
    h: np.ndarray
    dt: float
    status: str = UNDECIDED
    escape_time: Optional[float] = None
    extra: dict = field(default_factory=dict)

    @property
    def sample_dt(self) -> float:
        return float(self.times[1] - self.times[0]) if self.times.size > 1 else self.dt

    @property
    def escaped(self) -> bool:
        return self.status == ESCAPED

    def verdict(self, tol: float = 1e-2, target: Optional[InvariantSet] = None) -> str:
        """``escaped`` on blow-up, ``converged`` if the final distance (to ``target`` in the
        full state, or ``A`` in x) is below ``tol``, ``undecided`` otherwise."""
        if self.escaped:
            return ESCAPED
        if target is not None:
            final = set_distance(np.concatenate((self.x[-1], self.z[-1])), target)
        else:
            final = float(self.dist[-1])
        return CONVERGED if final < tol else UNDECIDED

    def to_csv(self, path, precision: str = ".17g") -> None:
        n, m = self.x.shape[1], self.z.shape[1]
        header = ["t"] + [f"x{i + 1}" for i in range(n)] + [f"z{i + 1}" for i in range(m)] + ["dist", "h"]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for k in range(self.times.size):
                row = [self.times[k], *self.x[k], *self.z[k], self.dist[k], self.h[k]]
                w.writerow([format(float(v), precision) for v in row])

    def summary(self, tol: float = 1e-2, target: Optional[InvariantSet] = None, **extra) -> dict:
        out = {
            "verdict": self.verdict(tol, target),
            "t_final": float(self.times[-1]),
            "escape_time": self.escape_time,
            "x_final": [float(v) for v in self.x[-1]],
            "z_final": [float(v) for v in self.z[-1]],
            "dist_final": float(self.dist[-1]),
            "h_initial": float(self.h[0]),
            "h_final": float(self.h[-1]),
            "dt": self.dt,
            "samples": int(self.times.size),
        }
        out.update(self.extra)
        out.update(extra)
        return out

    def summary_json(self, **kw) -> str:
        return json.dumps(self.summary(**kw), indent=2, sort_keys=True)


def _h_series(model: InterconnectionModel, z: np.ndarray) -> np.ndarray:
    try:
        out = np.asarray(model.h(z.T), dtype=float)
        if out.shape == (z.shape[0],):
            return out
    except (TypeError, ValueError, IndexError):
        pass
    return np.array([float(model.h(row)) for row in z])


def integrate(model: InterconnectionModel, x0, z0, t0: float, t_end: float, dt: float,
              blowup: float = BLOWUP, record_every: int = 1, use_compiled: bool = True) -> Trajectory:
    """Classical RK4 from ``t0`` to ``t_end``; stops early with an escape verdict on blow-up."""
    n = step_count(t0, t_end, dt)
    if record_every < 1:
        raise ConfigurationError("record_every must be >= 1")
    y0 = np.concatenate((np.atleast_1d(np.asarray(x0, dtype=float)), np.atleast_1d(np.asarray(z0, dtype=float))))
    if y0.size != sum(model.dims):
        raise DomainError(f"initial state has {y0.size} components, model dims {model.dims}")
    if use_compiled and model.rhs is not None:
        ts, ys, status, t_fail, y_last = rk4_loop(model.rhs, y0, float(t0), float(dt), n,
                                                  np.asarray(model.params, dtype=float), float(blowup), int(record_every))
    else:
        ts, ys, status, t_fail, y_last = _rk4_python(model.derivative, y0, float(t0), float(dt), n, blowup, record_every)
    if status == 2:
        raise IntegrationError(f"non-finite derivative at t = {t_fail:.6g}", time=float(t_fail))
    x, z = model.split(ys)
    traj = Trajectory(ts, x, z, set_distance(x, model.set_A), _h_series(model, z), float(dt))
    if status == 1:
        traj.status, traj.escape_time = ESCAPED, float(t_fail)
    return traj


# -- diagnostics -------------------------------------------------------------

@dataclass
class SandwichReport:
    passed: bool
    worst_upper: float
    worst_lower: float
    tol: float
    worst_time: float

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def verify_wandering_bound(traj: Trajectory, wb: WanderingBound, C: float = 1.0,
                           coupling: Optional[np.ndarray] = None) -> SandwichReport:
    """Check ``int gamma1(u) <= h(t0) - h(t) <= int gamma0(u)`` along the samples.

    ``u`` defaults to ``traj.dist``; pass ``coupling`` for a thresholded variant.
    """
    u = traj.dist if coupling is None else np.asarray(coupling, dtype=float)
    ts = traj.times
    drop = traj.h[0] - traj.h
    upper = cumulative_trapezoid(np.asarray(wb.gamma0(u), dtype=float), ts, initial=0.0)
    lower = cumulative_trapezoid(np.asarray(wb.gamma1(u), dtype=float), ts, initial=0.0)
    tol = C * traj.sample_dt ** 2
    over = drop - upper
    under = lower - drop
    worst = np.maximum(over, under)
    k = int(np.argmax(worst))
    return SandwichReport(bool(worst[k] <= tol), float(over.max()), float(under.max()), tol, float(ts[k]))


def hitting_times(times, h, sigma, h_z0: Optional[float] = None, max_levels: int = 10_000,
                  tol: float = MONOTONE_TOL) -> list:
    """First crossings of the levels ``sigma(i) * h_z0`` by a non-increasing output ``h``.

    ``sigma`` is a callable of the index or a ``Schedule``.
    """
    t = np.asarray(times, dtype=float)
    h = np.asarray(h, dtype=float)
    if t.shape != h.shape or t.size == 0:
        raise DomainError("times and h must be non-empty and of equal length")
    rises = np.diff(h)
    if rises.size and rises.max() > tol:
        k = int(np.argmax(rises))
        raise MonotonicityError(f"h increases by {rises[k]:.3g} at t = {t[k + 1]:.6g}; hitting times undefined")
    h0 = float(h[0]) if h_z0 is None else float(h_z0)
    sig = sigma.sigma if hasattr(sigma, "sigma") else sigma
    out = []
    h_min = float(h.min())
    neg = -h
    for i in range(max_levels):
        level = float(sig(i)) * h0
        if level < h_min or (i > 0 and level == 0.0):
            break
        k = int(np.searchsorted(neg, -level, side="left"))
        if k >= h.size:
            break
        if k == 0:
            ti = float(t[0])
        else:
            span = h[k - 1] - h[k]
            ti = float(t[k - 1] + (t[k] - t[k - 1]) * ((h[k - 1] - level) / span if span > 0 else 1.0))
        out.append((i, ti))
    return out


def hitting_gaps(hits: Sequence) -> np.ndarray:
    return np.diff([ti for _, ti in hits])


@dataclass
class SteadyStatePoint:
    u: float
    limit: float
    window_integral: float
    settled: bool
    settled_on_average: bool


@dataclass
class SteadyStateEstimate:
    points: list
    zero_set: list
    tol_zero: float

    def flagged(self) -> list:
        return [p.u for p in self.points if not (p.settled or p.settled_on_average)]


def estimate_steady_state_characteristic(factory: Callable, inputs, T_settle: float, T_avg: float, dt: float,
                                         x0, z0=(), tol_zero: float = 1e-6, rel_tol: float = 1e-4) -> SteadyStateEstimate:
    """Sample the steady-state characteristic ``u -> lim ||x||_A`` under constant inputs.

    ``factory(u)`` returns an :class:`InterconnectionModel`.  Each run lasts
    ``T_settle + 2*T_avg``; the last window gives the limit estimate and the last
    two window integrals the on-average stationarity test.
    """
    pts = []
    for u in inputs:
        model = factory(u)
        traj = integrate(model, x0, z0, 0.0, T_settle + 2 * T_avg, dt)
        if traj.escaped:
            pts.append(SteadyStatePoint(float(u), math.inf, math.inf, False, False))
            continue
        t, d = traj.times, traj.dist
        w2 = t >= t[-1] - T_avg - 1e-12
        w1 = (t >= t[-1] - 2 * T_avg - 1e-12) & (t <= t[-1] - T_avg + 1e-12)
        mean = float(d[w2].mean())
        std = float(d[w2].std())
        I1 = float(np.trapezoid(d[w1], t[w1])) if hasattr(np, "trapezoid") else float(np.trapz(d[w1], t[w1]))
        I2 = float(np.trapezoid(d[w2], t[w2])) if hasattr(np, "trapezoid") else float(np.trapz(d[w2], t[w2]))
        settled = std <= rel_tol * max(mean, tol_zero)
        on_avg = abs(I2 - I1) <= rel_tol * max(abs(I2), tol_zero * T_avg)
        pts.append(SteadyStatePoint(float(u), mean, I2, bool(settled), bool(on_avg)))
    zero = [p.u for p in pts if p.limit < tol_zero]
    return SteadyStateEstimate(pts, zero, tol_zero)


# -- fixtures ----------------------------------------------------------------

@numba.njit(nogil=True, cache=True)
def _linear_rhs(t, y, p):
    out = np.empty(1)
    out[0] = -p[0] * y[0] + p[1]
    return out


@numba.njit(nogil=True, cache=True)
def _saddle5_rhs(t, y, p):
    out = np.empty(2)
    out[0] = -y[0] + y[1]
    out[1] = p[0] + p[1] * y[0] * y[0]
    return out


@numba.njit(nogil=True, cache=True)
def _saddle6_rhs(t, y, p):
    out = np.empty(2)
    out[0] = -y[0] + y[1]
    out[1] = p[0] + p[1] * y[1] * y[1]
    return out


@numba.njit(nogil=True, cache=True)
def _cascade_rhs(t, y, p):
    out = np.empty(2)
    out[0] = -p[0] * y[0] + p[1] * y[1]
    out[1] = -p[3] * y[1] - p[2] * abs(y[0])
    return out


def linear_first_order(rate: float = 1.0, u: float = 0.0) -> InterconnectionModel:
    """``x' = -rate*x + u`` with no wandering part."""
    return InterconnectionModel(
        f_x=lambda x, z, t: -rate * x + u,
        f_z=lambda x, z, t: np.zeros(0),
        h=lambda z: np.zeros(np.shape(z)[-1]) if np.ndim(z) > 1 else 0.0,
        set_A=InvariantSet.origin(), dims=(1, 0), rhs=_linear_rhs,
        params=np.array([rate, u]), envelope=ContractionEnvelope.exponential(rate) if rate > 0 else None,
        name="linear",
    )


def saddle_node(variant: int = 5, eps: float = 0.0, gamma: float = 1.0) -> InterconnectionModel:
    """``x1' = -x1 + x2`` with ``x2' = eps + gamma*x1**2`` (variant 5) or ``eps + gamma*x2**2`` (6).

    The wandering output is ``h = -x2``; the target attractor is the origin.
    """
    if variant not in (5, 6):
        raise ConfigurationError(f"saddle-node variant must be 5 or 6, got {variant}")
    if gamma <= 0:
        raise DomainError("gamma must be positive")
    if variant == 5:
        fz = lambda x, z, t: eps + gamma * x[0] ** 2
        sq = power(2.0, gamma)
        wb = WanderingBound(lambda z: -z[0], sq, sq, power(2.0), sq)
    else:
        fz = lambda x, z, t: eps + gamma * z[0] ** 2
        wb = None
    return InterconnectionModel(
        f_x=lambda x, z, t: -x[0] + z[0], f_z=fz, h=lambda z: -z[0],
        set_A=InvariantSet.origin(), dims=(1, 1),
        rhs=_saddle5_rhs if variant == 5 else _saddle6_rhs, params=np.array([eps, gamma]),
        target=InvariantSet.origin(), envelope=ContractionEnvelope.exponential(1.0), wandering=wb,
        name=f"saddle-node-{variant}",
    )


def cascade(lambda1: float = 2.0, c1: float = 0.2, c2: float = 0.2, lambda2: float = 0.0) -> InterconnectionModel:
    """``x1' = -lambda1*x1 + c1*x2``, ``x2' = -lambda2*x2 - c2*|x1|``; ``lambda2 = 0`` is the
    wandering variant with infinite input-output gain and ``h = x2``."""
    if lambda1 <= 0:
        raise DomainError("lambda1 must be positive")
    wb = None
    if lambda2 == 0:
        wb = WanderingBound.lipschitz(c2, h=lambda z: z[0])
    return InterconnectionModel(
        f_x=lambda x, z, t: -lambda1 * x[0] + c1 * z[0],
        f_z=lambda x, z, t: -lambda2 * z[0] - c2 * abs(x[0]),
        h=lambda z: z[0], set_A=InvariantSet.origin(), dims=(1, 1),
        rhs=_cascade_rhs, params=np.array([lambda1, c1, c2, lambda2]),
        envelope=ContractionEnvelope.exponential(lambda1, c=c1 / lambda1), wandering=wb,
        name="cascade" if lambda2 else "cascade-wandering",
    )


def convergence_order(rate: float = 1.0, dts: Sequence[float] = (1e-2, 5e-3, 2.5e-3), T: float = 1.0) -> float:
    """Observed RK4 order on ``x' = -rate*x``: least-squares slope of log error vs log dt."""
    model = linear_first_order(rate)
    errs = []
    for dt in dts:
        traj = integrate(model, [1.0], [], 0.0, T, dt)
        errs.append(abs(traj.x[-1, 0] - math.exp(-rate * traj.times[-1])))
    slope = np.polyfit(np.log(dts), np.log(errs), 1)[0]
    return float(slope)
