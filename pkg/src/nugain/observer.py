"""Adaptive identifier driven by Poisson-stable exploratory dynamics.

The exploratory state evolves on ``lambda' = gamma * ||x||_Delta * S(lambda)``, i.e. along
the orbit of ``S`` in the reparameterized time ``sigma(t) = int gamma ||x||_Delta``.
Both built-in exploratory systems have closed-form flows, so the closed-loop
kernels integrate ``sigma`` and read ``lambda`` off the exact flow.
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numba
import numpy as np

from .dynsim import BLOWUP, CONVERGED, ESCAPED, UNDECIDED, Trajectory, hitting_gaps, hitting_times, verify_wandering_bound
from .errors import ConfigurationError, DomainError, StateError
from .gains import ContractionEnvelope, WanderingBound
from .smallgain import ScheduleParams, build_schedule, check_trapping_separable, identifier_gain_bound


# -- exploratory systems -----------------------------------------------------

@dataclass(frozen=True)
class ExploratorySystem:
    kind: str
    S: Callable
    lambda0: tuple
    omega_set_bound: float
    flow: Optional[Callable] = None
    invariants: Optional[Callable] = None
    omegas: tuple = ()

    @classmethod
    def hyperbolic_pair(cls, lambda0=(0.1, math.sqrt(0.99))) -> "ExploratorySystem":
        """``lambda1' = lambda1``, ``lambda2' = -lambda2``; conserves ``lambda1*lambda2``."""
        l0 = tuple(float(v) for v in lambda0)
        if len(l0) != 2:
            raise DomainError("hyperbolic pair needs a 2-vector lambda0")
        return cls(
            "hyperbolic_pair",
            S=lambda lam: np.array([lam[0], -lam[1]]),
            lambda0=l0,
            omega_set_bound=math.inf,
            flow=lambda lam, s: np.array([lam[0] * math.exp(s), lam[1] * math.exp(-s)]),
            invariants=lambda lam: np.array([lam[0] * lam[1]]),
        )

    @classmethod
    def torus_oscillators(cls, omega1: float, omega2: float, lambda0=(1.0, 0.0, 1.0, 0.0)) -> "ExploratorySystem":
        """Two harmonic oscillators; the orbit is dense on the torus when ``omega1/omega2`` is irrational."""
        if omega1 <= 0 or omega2 <= 0:
            raise DomainError("oscillator frequencies must be positive")
        l0 = tuple(float(v) for v in lambda0)
        if len(l0) != 4:
            raise DomainError("torus oscillators need a 4-vector lambda0")
        w1, w2 = float(omega1), float(omega2)

        def S(lam):
            return np.array([lam[1], -w1 * w1 * lam[0], lam[3], -w2 * w2 * lam[2]])

        def flow(lam, s):
            c1, s1 = math.cos(w1 * s), math.sin(w1 * s)
            c2, s2 = math.cos(w2 * s), math.sin(w2 * s)
            return np.array([
                lam[0] * c1 + lam[1] / w1 * s1, -w1 * lam[0] * s1 + lam[1] * c1,
                lam[2] * c2 + lam[3] / w2 * s2, -w2 * lam[2] * s2 + lam[3] * c2,
            ])

        def invariants(lam):
            lam = np.asarray(lam)
            return np.array([lam[..., 0] ** 2 + (lam[..., 1] / w1) ** 2, lam[..., 2] ** 2 + (lam[..., 3] / w2) ** 2])

        r1 = math.hypot(l0[0], l0[1] / w1)
        r2 = math.hypot(l0[2], l0[3] / w2)
        # ||S|| on the invariant torus is at most the two ellipses' worst cases combined.
        bound = math.hypot(r1 * max(w1, w1 * w1), r2 * max(w2, w2 * w2))
        return cls("torus_oscillators", S, l0, bound, flow, invariants, (w1, w2))


# -- parameter maps ----------------------------------------------------------

@dataclass(frozen=True)
class EtaMap:
    eta: Callable
    D_eta: float
    target_box: tuple

    def __call__(self, lam) -> np.ndarray:
        return np.asarray(self.eta(np.asarray(lam, dtype=float)), dtype=float)

    def in_box(self, theta, slack: float = 1e-12) -> bool:
        th = np.atleast_2d(theta)
        lo = np.array([b[0] for b in self.target_box])
        hi = np.array([b[1] for b in self.target_box])
        return bool(np.all(th >= lo - slack) and np.all(th <= hi + slack))

    def check_range(self, lams) -> bool:
        return self.in_box(np.array([self(l) for l in lams]))

    def check_lipschitz(self, pairs) -> tuple[bool, float]:
        worst = 0.0
        for a, b in pairs:
            da = np.linalg.norm(np.asarray(a, float) - np.asarray(b, float))
            if da > 0:
                worst = max(worst, float(np.linalg.norm(self(a) - self(b)) / da))
        return worst <= self.D_eta * (1 + 1e-12), worst

    @classmethod
    def first_component(cls, box=(-1.0, 1.0)) -> "EtaMap":
        return cls(lambda lam: np.atleast_1d(lam[..., 0]), 1.0, (tuple(box),))

    @classmethod
    def hr_arcsin(cls) -> "EtaMap":
        """Triangle-wave map of the oscillator phases onto [0.3, 0.7] x [2, 3].

        The map is not Lipschitz at lambda = +-1, so ``D_eta`` is infinite; the
        orbit-wise constant is given by :func:`hr_orbit_speed`.
        """
        return cls(_hr_eta_py, math.inf, ((0.3, 0.7), (2.0, 3.0)))


def _hr_eta_py(lam):
    l1 = np.clip(lam[..., 0], -1.0, 1.0)
    l3 = np.clip(lam[..., 2], -1.0, 1.0)
    beta = 0.5 * (2.0 * np.arcsin(l1) / math.pi + 1.0) * 0.4 + 0.3
    d = 0.5 * (2.0 * np.arcsin(l3) / math.pi + 1.0) + 2.0
    return np.stack([beta, d], axis=-1)


def hr_orbit_speed(omega1: float, omega2: float) -> float:
    """Sup of ``|d eta(lambda(sigma))/d sigma|`` along the orbit through (1, 0, 1, 0)."""
    return math.hypot(0.4 * omega1 / math.pi, omega2 / math.pi)


# -- identifier --------------------------------------------------------------

def deadzone_level(Delta_f: float, Delta_eps: float, delta: float) -> float:
    """``M = 2*Delta_f + Delta_eps + delta``."""
    if not delta > 0:
        raise DomainError(f"delta must be positive, got {delta}")
    if Delta_f < 0 or Delta_eps < 0:
        raise DomainError("Delta_f and Delta_eps must be nonnegative")
    return 2.0 * Delta_f + Delta_eps + delta


@dataclass
class IdentifierState:
    lam: np.ndarray
    theta_hat: np.ndarray
    gamma: float
    M: float = 0.0
    Delta_M: float = 0.0
    t: float = 0.0
    sigma: float = 0.0
    gamma_max: Optional[float] = None

    @classmethod
    def start(cls, exo: ExploratorySystem, eta: EtaMap, gamma: float, **kw) -> "IdentifierState":
        lam = np.array(exo.lambda0, dtype=float)
        state = cls(lam, eta(lam), float(gamma), **kw)
        state.check_gain()
        return state

    def check_gain(self) -> bool:
        if self.gamma_max is not None and self.gamma > self.gamma_max:
            warnings.warn(f"gamma = {self.gamma:g} exceeds the certified bound {self.gamma_max:g}; "
                          "convergence is not guaranteed", RuntimeWarning, stacklevel=3)
            return False
        return True


def step_identifier(state: IdentifierState, dist: float, exo: ExploratorySystem, eta: EtaMap, dt: float,
                    exact: bool = False) -> IdentifierState:
    """Advance ``lambda' = gamma * dist * S(lambda)`` one step (RK4, or the exact flow)."""
    if not dt > 0:
        raise DomainError(f"dt must be positive, got {dt}")
    if not (math.isfinite(dist) and dist >= 0):
        raise DomainError(f"dist must be finite and nonnegative, got {dist}")
    ds = state.gamma * dist * dt
    if ds == 0.0:
        return replace(state, t=state.t + dt)
    lam = state.lam
    if exact and exo.flow is not None:
        new = exo.flow(lam, ds)
    else:
        g = state.gamma * dist
        k1 = g * exo.S(lam)
        k2 = g * exo.S(lam + 0.5 * dt * k1)
        k3 = g * exo.S(lam + 0.5 * dt * k2)
        k4 = g * exo.S(lam + dt * k3)
        new = lam + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    if not np.all(np.isfinite(new)):
        raise StateError(f"exploratory state became non-finite at t = {state.t + dt:g}")
    return replace(state, lam=new, theta_hat=eta(new), t=state.t + dt, sigma=state.sigma + ds)


def compute_D_lambda(c: float, D_f: float, D_eta: float, maxS: float) -> float:
    vals = (c, D_f, D_eta, maxS)
    if any(v < 0 for v in vals):
        raise DomainError("D_lambda factors must be nonnegative")
    if any(v == 0 for v in vals):
        return 0.0
    return c * D_f * D_eta * maxS


# -- Hindmarsh-Rose observer -------------------------------------------------

BETA_BOX = (0.3, 0.7)
D_BOX = (2.0, 3.0)


@dataclass(frozen=True)
class HRObserverState:
    """Observer state: ``x_hat`` and the filter ``w`` standing in for the convolution term.

    ``w' = -beta_hat*w + c_hr - d_hat*x1**2`` reproduces
    ``int exp(-beta_hat (t - tau)) (c_hr - d_hat x1(tau)**2) dtau`` for frozen estimates.
    """

    x_hat: float
    w: float
    rho: float = 10.0
    a: float = 1.0
    b: float = 3.0
    alpha: float = 0.7
    c_hr: float = 0.5
    t: float = 0.0


def _check_box(theta_hat):
    bh, dh = float(theta_hat[0]), float(theta_hat[1])
    if not (BETA_BOX[0] <= bh <= BETA_BOX[1]) or not (D_BOX[0] <= dh <= D_BOX[1]):
        raise ConfigurationError(f"estimate (beta={bh:g}, d={dh:g}) outside [0.3, 0.7] x [2, 3]")
    return bh, dh


def hr_observer_step(obs: HRObserverState, x1, u: float, theta_hat, dt: float) -> HRObserverState:
    """One RK4 step of the observer.

    ``x1`` is either one sample (held over the step) or the triple
    ``(x1(t), x1(t+dt/2), x1(t+dt))`` for a fourth-order step.
    """
    if not dt > 0:
        raise DomainError(f"dt must be positive, got {dt}")
    bh, dh = _check_box(theta_hat)
    xs = np.atleast_1d(np.asarray(x1, dtype=float))
    if xs.size == 1:
        x_a = x_m = x_b = float(xs[0])
    elif xs.size == 3:
        x_a, x_m, x_b = (float(v) for v in xs)
    else:
        raise DomainError("x1 must be a scalar or a (start, mid, end) triple")

    def f(xh, w, x):
        dxh = obs.rho * (x - xh) - obs.a * x ** 3 + obs.b * x * x + obs.alpha * u + w
        dw = -bh * w + obs.c_hr - dh * x * x
        return dxh, dw

    xh, w = obs.x_hat, obs.w
    a1, b1 = f(xh, w, x_a)
    a2, b2 = f(xh + 0.5 * dt * a1, w + 0.5 * dt * b1, x_m)
    a3, b3 = f(xh + 0.5 * dt * a2, w + 0.5 * dt * b2, x_m)
    a4, b4 = f(xh + dt * a3, w + dt * b3, x_b)
    return replace(obs, x_hat=xh + dt / 6 * (a1 + 2 * a2 + 2 * a3 + a4),
                   w=w + dt / 6 * (b1 + 2 * b2 + 2 * b3 + b4), t=obs.t + dt)


def convolution_quadrature(times, x1, beta: float, d: float, c_hr: float, t_eval: float,
                           window: float = math.log(1e9) / 0.3) -> float:
    """Trapezoid evaluation of ``int exp(-beta (t - tau)) (c_hr - d x1(tau)**2) dtau`` over the window."""
    t = np.asarray(times, dtype=float)
    x = np.asarray(x1, dtype=float)
    sel = (t >= t_eval - window - 1e-12) & (t <= t_eval + 1e-12)
    ts, xs = t[sel], x[sel]
    g = np.exp(-beta * (t_eval - ts)) * (c_hr - d * xs * xs)
    return float(np.sum(0.5 * (g[1:] + g[:-1]) * np.diff(ts)))


# -- Example 1 ---------------------------------------------------------------

@numba.njit(nogil=True, cache=True)
def _ex1_rhs(x, s, theta, lam10, k, gamma):
    th = lam10 * math.exp(s)
    return -k * x + math.sin(x * theta + theta) - math.sin(x * th + th), gamma * abs(x)


@numba.njit(nogil=True, cache=True)
def _ex1_kernel(x0, lam10, theta, gamma, k, dt, n, every, blowup):
    """RK4 on (x, sigma); theta_hat = lam10 * exp(sigma).  Returns samples and status."""
    m = n // every + 1
    out = np.empty((m, 3))
    x = x0
    s = 0.0
    out[0, 0] = 0.0
    out[0, 1] = x
    out[0, 2] = s
    j = 1
    h = 0.5 * dt
    for i in range(n):
        a1, b1 = _ex1_rhs(x, s, theta, lam10, k, gamma)
        a2, b2 = _ex1_rhs(x + h * a1, s + h * b1, theta, lam10, k, gamma)
        a3, b3 = _ex1_rhs(x + h * a2, s + h * b2, theta, lam10, k, gamma)
        a4, b4 = _ex1_rhs(x + dt * a3, s + dt * b3, theta, lam10, k, gamma)
        x += dt / 6.0 * (a1 + 2.0 * a2 + 2.0 * a3 + a4)
        s += dt / 6.0 * (b1 + 2.0 * b2 + 2.0 * b3 + b4)
        if not (math.isfinite(x) and math.isfinite(s)) or abs(x) > blowup or abs(lam10) * math.exp(min(s, 700.0)) > blowup:
            return out[:j], 1, (i + 1) * dt
        if (i + 1) % every == 0:
            out[j, 0] = (i + 1) * dt
            out[j, 1] = x
            out[j, 2] = s
            j += 1
    return out[:j], 0, n * dt


@dataclass
class Example1Config:
    theta: float = 0.3
    gamma: float = 0.05
    x0: float = 0.5
    t_end: float = 2000.0
    dt: float = 1e-3
    k: float = 1.0
    lambda0: tuple = (0.1, math.sqrt(0.99))
    record_every: int = 10
    tol_x: float = 1e-2
    tol_theta_drift: float = 1e-3
    d: float = 0.5
    kappa: float = 2.0
    D_lambda: float = 1.0
    lambda_box: tuple = (-1.0, 1.0)

    def validate(self):
        if not -1.0 <= self.theta <= 1.0:
            raise ConfigurationError(f"theta must lie in [-1, 1], got {self.theta}")
        if self.gamma < 0:
            raise ConfigurationError("gamma must be nonnegative")
        if not self.dt > 0 or not self.t_end > 0 or self.k <= 0:
            raise ConfigurationError("dt, t_end and k must be positive")
        if self.lambda0[0] == 0.0:
            raise ConfigurationError("lambda0[0] = 0 freezes the estimate at 0")
        ScheduleParams(self.d, self.kappa)


@dataclass
class Example1Result:
    trajectory: Trajectory
    theta_hat: np.ndarray
    verdict: str
    certified: bool
    gamma_max: float
    h_z0: float
    report: dict = field(default_factory=dict)


def example1_envelope(cfg: Example1Config) -> ContractionEnvelope:
    # Plant x' = -k x + mismatch: exponential contraction at rate k with unit gain.
    return ContractionEnvelope.exponential(cfg.k, D_beta=1.0, c=1.0)


def run_example1(cfg: Example1Config) -> Example1Result:
    """Closed loop of the sine plant and the hyperbolic exploratory pair."""
    cfg.validate()
    n = int(math.ceil(cfg.t_end / cfg.dt - 1e-9))
    lam10, lam20 = (float(v) for v in cfg.lambda0)
    samples, status, t_stop = _ex1_kernel(float(cfg.x0), lam10, float(cfg.theta), float(cfg.gamma), float(cfg.k),
                                          float(cfg.dt), n, int(cfg.record_every), BLOWUP)
    t, x, s = samples[:, 0], samples[:, 1], samples[:, 2]
    theta_hat = lam10 * np.exp(s)
    lam = np.stack([theta_hat, lam20 * np.exp(-s)], axis=1)

    env = example1_envelope(cfg)
    params = ScheduleParams(cfg.d, cfg.kappa)
    gamma_max = identifier_gain_bound(env, params, cfg.D_lambda)
    # Excitation budget: theta_hat reaches theta after sigma* = ln(theta/lambda1(0)).
    ratio = cfg.theta / lam10
    h_z0 = math.log(ratio) if ratio > 0 and ratio != 1 else float(s[-1])
    if not h_z0 > 0:
        h_z0 = float(s[-1])
    h = h_z0 - s
    traj = Trajectory(t, x[:, None], lam, np.abs(x), h, float(cfg.dt))
    if status:
        traj.status, traj.escape_time = ESCAPED, float(t_stop)

    wb = WanderingBound.lipschitz(cfg.gamma if cfg.gamma > 0 else 0.0)
    certified = cfg.gamma <= gamma_max
    trap = None
    if cfg.gamma > 0 and h_z0 > 0:
        trap = check_trapping_separable(env, wb, params, abs(cfg.x0), h_z0)
        certified = certified and trap.member

    tail = t >= t[-1] * 0.9
    drift = float(theta_hat[tail].max() - theta_hat[tail].min())
    excitation_tail = float(s[-1] - s[tail][0])
    if traj.escaped:
        verdict = ESCAPED
    elif abs(x[-1]) < cfg.tol_x and drift < cfg.tol_theta_drift:
        verdict = CONVERGED
    else:
        verdict = UNDECIDED
    lo, hi = cfg.lambda_box
    report = {
        "theta": cfg.theta, "gamma": cfg.gamma, "x0": cfg.x0, "t_end": float(t[-1]), "dt": cfg.dt,
        "x_final": float(x[-1]), "theta_hat_final": float(theta_hat[-1]),
        "theta_hat_drift_tail": drift, "excitation_tail": excitation_tail,
        "excitation_total": float(s[-1]), "h_z0": h_z0,
        "gamma_max": gamma_max, "certified": bool(certified),
        "trapping_margin": None if trap is None else trap.margin,
        "lambda_left_box": bool(np.any(theta_hat < lo) or np.any(theta_hat > hi)),
        "verdict": verdict,
    }
    return Example1Result(traj, theta_hat, verdict, bool(certified), gamma_max, h_z0, report)


def example1_diagnostics(res: Example1Result, cfg: Example1Config, C: float = 1.0) -> dict:
    """Hitting-time gaps against the dwell time and the integral sandwich of the excitation."""
    sch = build_schedule(example1_envelope(cfg), ScheduleParams(cfg.d, cfg.kappa))
    hits = hitting_times(res.trajectory.times, res.trajectory.h, sch, res.h_z0)
    gaps = hitting_gaps(hits)
    wb = WanderingBound.lipschitz(cfg.gamma)
    sandwich = verify_wandering_bound(res.trajectory, wb, C=C)
    return {
        "tau_star": sch.tau_star,
        "hits": len(hits),
        "min_gap": float(gaps.min()) if gaps.size else math.inf,
        "gaps_ok": bool(np.all(gaps >= sch.tau_star - cfg.dt)),
        "sandwich": sandwich.to_dict(),
    }


def run_example1_fan(cfg: Example1Config, count: int = 20, seed: int = 0, workers: Optional[int] = None) -> list:
    """Seeded fan of initial conditions uniform in [-1, 1], run in parallel threads."""
    rng = np.random.default_rng(seed)
    x0s = rng.uniform(-1.0, 1.0, count)
    cfgs = [replace(cfg, x0=float(v)) for v in x0s]
    run_example1(replace(cfgs[0], t_end=cfg.dt * 2))  # compile once before fanning out
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(run_example1, cfgs))


# -- Example 2 ---------------------------------------------------------------

@numba.njit(nogil=True, cache=True)
def _tri_eta(c):
    if c > 1.0:
        c = 1.0
    elif c < -1.0:
        c = -1.0
    return 0.5 * (2.0 * math.asin(c) / math.pi + 1.0)


@numba.njit(nogil=True, cache=True)
def _ex2_lambda(s, l0, w1, w2):
    c1, s1 = math.cos(w1 * s), math.sin(w1 * s)
    c2, s2 = math.cos(w2 * s), math.sin(w2 * s)
    return (l0[0] * c1 + l0[1] / w1 * s1, -w1 * l0[0] * s1 + l0[1] * c1,
            l0[2] * c2 + l0[3] / w2 * s2, -w2 * l0[2] * s2 + l0[3] * c2)


@numba.njit(nogil=True, cache=True)
def _ex2_rhs(t, y, p, l0):
    # p: a, b, alpha, c, beta, d, rho, gamma, w1, w2, dz, u_amp, u_on, u_off, t_freeze
    x1, x2, xh, w, s = y[0], y[1], y[2], y[3], y[4]
    u = p[11] if (t >= p[12] and t < p[13]) else 0.0
    lam = _ex2_lambda(s, l0, p[8], p[9])
    bh = _tri_eta(lam[0]) * 0.4 + 0.3
    dh = _tri_eta(lam[2]) + 2.0
    dist = abs(x1 - xh) - p[10]
    if dist < 0.0:
        dist = 0.0
    g = p[7] if t < p[14] else 0.0
    out = np.empty(5)
    out[0] = -p[0] * x1 ** 3 + p[1] * x1 * x1 + x2 + p[2] * u
    out[1] = p[3] - p[4] * x2 - p[5] * x1 * x1
    out[2] = p[6] * (x1 - xh) - p[0] * x1 ** 3 + p[1] * x1 * x1 + p[2] * u + w
    out[3] = -bh * w + p[3] - dh * x1 * x1
    out[4] = g * dist
    return out


@numba.njit(nogil=True, cache=True)
def _ex2_kernel(y0, p, l0, dt, n, every, blowup):
    m = n // every + 1
    out = np.empty((m, 6))
    y = y0.copy()
    out[0, 0] = 0.0
    out[0, 1:] = y
    j = 1
    h = 0.5 * dt
    for i in range(n):
        t = i * dt
        k1 = _ex2_rhs(t, y, p, l0)
        k2 = _ex2_rhs(t + h, y + h * k1, p, l0)
        k3 = _ex2_rhs(t + h, y + h * k2, p, l0)
        k4 = _ex2_rhs(t + dt, y + dt * k3, p, l0)
        y = y + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        ok = True
        for q in range(5):
            if not math.isfinite(y[q]) or abs(y[q]) > blowup:
                ok = False
        if not ok:
            return out[:j], 1, (i + 1) * dt
        if (i + 1) % every == 0:
            out[j, 0] = (i + 1) * dt
            out[j, 1:] = y
            j += 1
    return out[:j], 0, n * dt


@numba.njit(nogil=True, cache=True)
def _hr_plant_rhs(t, y, p):
    # p: a, b, alpha, c, beta, d, u_amp, u_on, u_off
    u = p[6] if (t >= p[7] and t < p[8]) else 0.0
    out = np.empty(2)
    out[0] = -p[0] * y[0] ** 3 + p[1] * y[0] * y[0] + y[1] + p[2] * u
    out[1] = p[3] - p[4] * y[1] - p[5] * y[0] * y[0]
    return out


@dataclass
class Example2Config:
    beta_true: float = 0.5
    d_true: float = 2.5
    a: float = 1.0
    b: float = 3.0
    alpha: float = 0.7
    c: float = 0.5
    rho: float = 10.0
    gamma: float = 3e-4
    omega2: float = 100.0
    omega_ratio: float = math.pi
    pulse_amplitude: float = 0.7
    pulse_on: float = 100.0
    pulse_off: float = 300.0
    t_end: float = 1500.0
    dt: float = 0.01
    delta: float = 1e-3
    lambda0: tuple = (1.0, 0.0, 1.0, 0.0)
    x0: Optional[tuple] = None
    record_every: int = 10
    t_freeze: float = math.inf
    trailing_fraction: float = 0.1

    @property
    def omega1(self) -> float:
        return self.omega_ratio * self.omega2

    @property
    def deadzone_radius(self) -> float:
        return self.delta / self.rho

    def rest_state(self, beta=None, d=None) -> tuple:
        """Resting equilibrium ``x1 = -(1+sqrt 5)/2`` of the default plant, ``x2`` from the second equation."""
        beta = self.beta_true if beta is None else beta
        d = self.d_true if d is None else d
        x1 = -(1.0 + math.sqrt(5.0)) / 2.0
        return x1, (self.c - d * x1 * x1) / beta

    def validate(self):
        if not (BETA_BOX[0] <= self.beta_true <= BETA_BOX[1]) or not (D_BOX[0] <= self.d_true <= D_BOX[1]):
            raise ConfigurationError("true parameters must lie in [0.3, 0.7] x [2, 3]")
        if not self.rho > 0 or not self.dt > 0 or not self.t_end > 0 or self.gamma < 0 or not self.omega2 > 0:
            raise ConfigurationError("rho, dt, t_end, omega2 must be positive and gamma nonnegative")
        deadzone_level(0.0, 0.0, self.delta)


@dataclass
class Example2Result:
    times: np.ndarray
    states: np.ndarray
    theta_hat: np.ndarray
    lam: np.ndarray
    residual: np.ndarray
    verdict: str
    report: dict

    def trajectory(self) -> Trajectory:
        s = self.states
        h = s[0, 4] - s[:, 4]
        x_tilde = (s[:, 0] - s[:, 2])[:, None]
        return Trajectory(self.times, x_tilde, self.lam, self.residual, h, self.report["dt"])


def example2_D_lambda(cfg: Example2Config, x1_sup: float) -> dict:
    """Lipschitz constant of the identifier loop with the orbit-wise slope of eta."""
    x2 = x1_sup * x1_sup
    D_fb = (D_BOX[1] * x2 + cfg.c) / (BETA_BOX[0] * BETA_BOX[0])
    D_fd = x2 / BETA_BOX[0]
    D_f = max(D_fb, D_fd)
    slope = hr_orbit_speed(cfg.omega1, cfg.omega2)
    c = 1.0 / cfg.rho
    return {"c": c, "D_f_beta": D_fb, "D_f_d": D_fd, "D_f": D_f, "eta_orbit_slope": slope,
            "D_lambda": c * D_f * slope}


def replay_plant(cfg: Example2Config, beta: float, d: float, y0, t_end: float, dt: float, every: int) -> np.ndarray:
    from .dynsim import rk4_loop
    p = np.array([cfg.a, cfg.b, cfg.alpha, cfg.c, beta, d, cfg.pulse_amplitude, cfg.pulse_on, cfg.pulse_off])
    n = int(math.ceil(t_end / dt - 1e-9))
    _, ys, status, _, _ = rk4_loop(_hr_plant_rhs, np.asarray(y0, dtype=float), 0.0, dt, n, p, BLOWUP, every)
    return ys


def run_example2(cfg: Example2Config, replay: bool = True) -> Example2Result:
    """Hindmarsh-Rose plant, observer, and gated torus identifier in one RK4 loop."""
    cfg.validate()
    x1_0, x2_0 = cfg.x0 if cfg.x0 is not None else cfg.rest_state()
    y0 = np.array([x1_0, x2_0, x1_0, 0.0, 0.0])
    p = np.array([cfg.a, cfg.b, cfg.alpha, cfg.c, cfg.beta_true, cfg.d_true, cfg.rho, cfg.gamma,
                  cfg.omega1, cfg.omega2, cfg.deadzone_radius, cfg.pulse_amplitude, cfg.pulse_on,
                  cfg.pulse_off, cfg.t_freeze])
    l0 = np.array(cfg.lambda0, dtype=float)
    n = int(math.ceil(cfg.t_end / cfg.dt - 1e-9))
    out, status, t_stop = _ex2_kernel(y0, p, l0, float(cfg.dt), n, int(cfg.record_every), BLOWUP)
    t, states = out[:, 0], out[:, 1:]
    exo = ExploratorySystem.torus_oscillators(cfg.omega1, cfg.omega2, cfg.lambda0)
    s = states[:, 4]
    lam = np.array([_ex2_lambda(v, l0, cfg.omega1, cfg.omega2) for v in s])
    theta_hat = EtaMap.hr_arcsin()(lam)
    residual = np.maximum(np.abs(states[:, 0] - states[:, 2]) - cfg.deadzone_radius, 0.0)

    tail = t >= t[-1] * (1.0 - cfg.trailing_fraction)
    x1_sup = float(np.max(np.abs(states[:, 0])))
    dl = example2_D_lambda(cfg, x1_sup)
    env = ContractionEnvelope.exponential(cfg.rho)
    gamma_max = identifier_gain_bound(env, ScheduleParams(0.5, 2.0), dl["D_lambda"])
    inv = exo.invariants(lam)
    inv_drift = float(np.max(np.abs(inv - inv[:1]) / np.maximum(np.abs(inv[:1]), 1e-300)))
    bh, dh = (float(v) for v in theta_hat[-1])
    report = {
        "beta_true": cfg.beta_true, "d_true": cfg.d_true, "beta_hat": bh, "d_hat": dh,
        "residual_tail_mean": float(residual[tail].mean()),
        "residual_tail_max": float(residual[tail].max()),
        "excitation_total": float(s[-1]),
        "t_end": float(t[-1]), "dt": cfg.dt, "omega1": cfg.omega1, "omega2": cfg.omega2,
        "gamma": cfg.gamma, "gamma_max": gamma_max, "certified": bool(cfg.gamma <= gamma_max),
        "x1_sup": x1_sup, "invariant_drift": inv_drift, **{f"bound_{k}": v for k, v in dl.items()},
    }
    if replay and not status:
        every = int(cfg.record_every)
        y_model = states[:, :2]
        y_fit = replay_plant(cfg, bh, dh, y0[:2], float(t[-1]), cfg.dt, every)
        k = min(len(y_fit), len(y_model))
        diff = y_fit[:k] - y_model[:k]
        report["replay_rms_x1"] = float(np.sqrt(np.mean(diff[:, 0] ** 2)))
        report["replay_rms_x2"] = float(np.sqrt(np.mean(diff[:, 1] ** 2)))
        report["replay_max_x1"] = float(np.max(np.abs(diff[:, 0])))
    if status:
        verdict = ESCAPED
        report["escape_time"] = float(t_stop)
    elif report["residual_tail_mean"] < 1e-2:
        verdict = CONVERGED
    else:
        verdict = UNDECIDED
    report["verdict"] = verdict
    return Example2Result(t, states, theta_hat, lam, residual, verdict, report)
