"""Small-gain schedules and trapping-region condition checkers.

The separable/exponential checkers are closed-form; :func:`check_theorem_conditions`
evaluates the general recursive conditions numerically on a finite probe and is
used as an independent route to the same verdict.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.optimize import minimize

from .errors import ConfigurationError, DomainError, EvaluationError, OptimizerError
from .gains import (
    KIND_EXPONENTIAL,
    KIND_GENERAL,
    ContractionEnvelope,
    ScalarFn,
    WanderingBound,
    beta_t_inverse,
    identity,
)

LE_SLACK = 1e-12


def _le(lhs: float, rhs: float) -> bool:
    # Absolute slack plus one part in 1e12 of the magnitude.
    return lhs <= rhs + LE_SLACK * max(1.0, abs(rhs))


def _finite(name: str, value: float) -> float:
    if not math.isfinite(value):
        raise EvaluationError(f"{name} is not finite ({value!r})")
    return value


@dataclass(frozen=True)
class ScheduleParams:
    d: float
    kappa: float

    def __post_init__(self):
        if not (0.0 < self.d < 1.0):
            raise DomainError(f"d must lie in (0, 1), got {self.d!r}")
        if not (self.kappa > 1.0 and math.isfinite(self.kappa)):
            raise DomainError(f"kappa must be finite and > 1, got {self.kappa!r}")

    @property
    def amplification(self) -> float:
        """The recurring factor ``1 + kappa/(1-d)``."""
        return 1.0 + self.kappa / (1.0 - self.d)


@dataclass(frozen=True)
class Schedule:
    """Partition ``sigma_i = kappa**-i`` with constant contraction factor and dwell time."""

    params: ScheduleParams
    xi_star: float
    tau_star: float
    delta0: float

    @property
    def kappa(self) -> float:
        return self.params.kappa

    def sigma(self, i):
        return self.params.kappa ** (-np.asarray(i, dtype=float)) if np.ndim(i) else self.params.kappa ** (-float(i))

    def sigmas(self, n: int) -> np.ndarray:
        return self.params.kappa ** -np.arange(n, dtype=float)


def build_schedule(env: ContractionEnvelope, params: ScheduleParams) -> Schedule:
    if env.kind == KIND_GENERAL:
        raise ConfigurationError("the constructive schedule needs a separable or exponential envelope")
    b0 = env.beta_t0
    if b0 < 1.0:
        raise DomainError(f"beta_t(0) = {b0:g} < 1")
    level = params.d / params.kappa
    if level >= b0:
        raise DomainError(f"d/kappa = {level:g} must stay below beta_t(0) = {b0:g}")
    xi = params.d / (params.kappa * b0)
    tau = beta_t_inverse(env, xi * b0)
    t_level = beta_t_inverse(env, level)
    delta0 = (1.0 / t_level) * (params.kappa - 1.0) / params.kappa
    for name, v in (("xi_star", xi), ("tau_star", tau), ("delta0", delta0)):
        if not (math.isfinite(v) and v > 0):
            raise DomainError(f"{name} = {v!r} is not finite and positive")
    return Schedule(params, xi, tau, delta0)


def compute_B1_B2(env: ContractionEnvelope, params: ScheduleParams, x0_norm: float, h_z0: float) -> tuple[float, float]:
    if x0_norm < 0:
        raise DomainError(f"x0_norm must be nonnegative, got {x0_norm}")
    b0 = env.beta_t0
    B1 = _finite("B1", b0 * x0_norm)
    B2 = _finite("B2", b0 * env.c * abs(h_z0) * params.amplification)
    return B1, B2


@dataclass
class TrappingResult:
    member: bool
    margin: float
    threshold: float
    reason: str = ""

    def __bool__(self):
        return self.member


def _inverse_rate(env: ContractionEnvelope, params: ScheduleParams) -> float:
    """``(beta_t^{-1}(d/kappa))^{-1} * (kappa-1)/kappa``, the rate constant Delta0."""
    return (params.kappa - 1.0) / params.kappa / beta_t_inverse(env, params.d / params.kappa)


def check_trapping_separable(env: ContractionEnvelope, wb: WanderingBound, params: ScheduleParams,
                             x0_norm: float, h_z0: float) -> TrappingResult:
    """Membership of ``(x0, z0)`` in the separable-case trapping domain."""
    if wb.D_gamma0 is None:
        raise ConfigurationError("check_trapping_separable needs a Lipschitz gamma0 (D_gamma0)")
    if h_z0 <= 0:
        return TrappingResult(False, -math.inf, math.nan, "h(z0) must be positive")
    b0 = env.beta_t0
    B1, B2 = compute_B1_B2(env, params, x0_norm, h_z0)
    denom = B1 + B2 + env.c * abs(h_z0)
    threshold = _finite("threshold", _inverse_rate(env, params) * h_z0 / denom) if denom > 0 else math.inf
    del b0
    member = _le(wb.D_gamma0, threshold)
    return TrappingResult(member, threshold - wb.D_gamma0, threshold, "" if member else "gain exceeds threshold")


def _exp_log_term(env: ContractionEnvelope, params: ScheduleParams) -> float:
    """``beta_t^{-1}(d/kappa)`` as written for exponential envelopes: ``ln(kappa/d)/rate``."""
    return math.log(params.kappa / params.d) / env.rate


def small_gain_G(env: ContractionEnvelope, params: ScheduleParams) -> float:
    k = params.kappa
    if env.kind == KIND_EXPONENTIAL:
        t_level = _exp_log_term(env, params)
        b0 = env.D_beta
    else:
        t_level = beta_t_inverse(env, params.d / k)
        b0 = env.beta_t0
    return t_level * (k / (k - 1.0)) * (b0 * params.amplification + 1.0)


@dataclass
class GOptimum:
    G_star: float
    d_opt: float
    kappa_opt: float
    grid_min: float
    iterations: int


def optimize_G(env: ContractionEnvelope, grid: int = 128, tol: float = 1e-6, max_iter: int = 2000) -> GOptimum:
    """Minimize G over d in (0,1), kappa in (1, inf): grid seed then Nelder-Mead."""
    ds = np.linspace(0.01, 0.99, grid)
    ks = np.logspace(math.log10(1.01), 2.0, grid)
    if env.kind == KIND_EXPONENTIAL:
        D, lam = env.D_beta, env.rate
        dd, kk = np.meshgrid(ds, ks, indexing="ij")
        G = np.log(kk / dd) / lam * kk / (kk - 1.0) * (D * (1.0 + kk / (1.0 - dd)) + 1.0)
    else:
        G = np.array([[small_gain_G(env, ScheduleParams(d, k)) for k in ks] for d in ds])
    i, j = np.unravel_index(int(np.argmin(G)), G.shape)
    grid_min = float(G[i, j])

    # Unconstrained coordinates: d = logistic(u), kappa = 1 + exp(v).
    def objective(p):
        d = 1.0 / (1.0 + math.exp(-p[0]))
        k = 1.0 + math.exp(p[1])
        if not (0.0 < d < 1.0) or not (k > 1.0 and math.isfinite(k)):
            return math.inf
        return small_gain_G(env, ScheduleParams(d, k))

    x0 = np.array([math.log(ds[i] / (1.0 - ds[i])), math.log(ks[j] - 1.0)])
    res = minimize(objective, x0, method="Nelder-Mead",
                   options={"xatol": 1e-10, "fatol": tol * 1e-3, "maxiter": max_iter})
    d_opt = 1.0 / (1.0 + math.exp(-res.x[0]))
    k_opt = 1.0 + math.exp(res.x[1])
    if not res.success or not math.isfinite(res.fun):
        raise OptimizerError(f"G minimization failed: {res.message}", best=(grid_min, float(ds[i]), float(ks[j])))
    if res.fun > grid_min:
        return GOptimum(grid_min, float(ds[i]), float(ks[j]), grid_min, int(res.nit))
    return GOptimum(float(res.fun), d_opt, k_opt, grid_min, int(res.nit))


def check_small_gain_existence(D_gamma0: float, c: float, G: float) -> bool:
    if D_gamma0 < 0 or c < 0 or G < 0:
        raise DomainError("gains must be nonnegative")
    return D_gamma0 * c * G < 1.0


@dataclass
class X0Bound:
    x0_max: float
    empty: bool


def trapping_x0_bound(env: ContractionEnvelope, params: ScheduleParams, D_gamma0: float, c: float, h_z0: float) -> X0Bound:
    """Largest admissible ``|x0|_A`` for the given ``h(z0)``; negative means the slice is empty."""
    if not h_z0 > 0 or not D_gamma0 > 0:
        raise DomainError("trapping_x0_bound needs h_z0 > 0 and D_gamma0 > 0")
    b0 = env.beta_t0
    inner = _inverse_rate(env, params) / D_gamma0 - c * (b0 * params.amplification + 1.0)
    x0_max = inner * h_z0 / b0
    return X0Bound(x0_max, x0_max < 0)


def identifier_gain_bound(env: ContractionEnvelope, params: ScheduleParams, D_lambda: float) -> float:
    """Largest adaptation gain admitted by the identifier small-gain condition."""
    if not D_lambda > 0:
        raise DomainError(f"D_lambda must be positive, got {D_lambda}")
    k = params.kappa
    if env.kind == KIND_EXPONENTIAL:
        rate = 1.0 / _exp_log_term(env, params)
        b0 = env.D_beta
    else:
        rate = 1.0 / beta_t_inverse(env, params.d / k)
        b0 = env.beta_t0
    return rate * (k - 1.0) / k / (D_lambda * (b0 * params.amplification + 1.0))


# -- general checker ---------------------------------------------------------

@dataclass
class GeneralScheduleSpec:
    """User-supplied sequences and decomposition functions for the general checker.

    Sequence members are callables of the index.  ``rho_phi(j)`` and
    ``rho_upsilon(j)`` return the decomposition functions for step ``j``;
    ``beta0`` is ``s -> beta(s, 0)``.
    """

    sigma: Callable[[int], float]
    xi: Callable[[int], float]
    tau: Callable[[int], float]
    rho_phi: Callable[[int], Callable]
    rho_upsilon: Callable[[int], Callable]
    B1: Callable[[float], float]
    B2: Callable[[float, float], float]
    beta0: Callable[[float], float]
    delta0: Optional[float] = None
    tau_constant: bool = False


def default_schedule_spec(env: ContractionEnvelope, params: ScheduleParams, schedule: Optional[Schedule] = None) -> GeneralScheduleSpec:
    """The constructive sequences for linear-in-state separable envelopes."""
    sch = schedule or build_schedule(env, params)
    b0 = env.beta_t0
    ident = identity()
    return GeneralScheduleSpec(
        sigma=lambda i: params.kappa ** (-i),
        xi=lambda i: sch.xi_star,
        tau=lambda i: sch.tau_star,
        rho_phi=lambda j: ident,
        rho_upsilon=lambda j: ident,
        B1=lambda s: b0 * s,
        B2=lambda h, c: b0 * c * h * params.amplification,
        beta0=lambda s: b0 * env.beta_x(s),
        delta0=sch.delta0,
        tau_constant=True,
    )


@dataclass
class ConditionResult:
    passed: bool
    margin: float
    detail: str = ""


@dataclass
class TheoremReport:
    conditions: dict
    delta0: float
    h_positive: bool
    warnings: list = field(default_factory=list)
    params: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.h_positive and all(c.passed for c in self.conditions.values())

    def __bool__(self):
        return self.passed

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "h_positive": self.h_positive,
            "delta0": _json_num(self.delta0),
            "conditions": {k: {"passed": v.passed, "margin": _json_num(v.margin), "detail": v.detail}
                           for k, v in self.conditions.items()},
            "warnings": list(self.warnings),
            "params": self.params,
        }


def _json_num(v):
    return v if isinstance(v, (int, float)) and math.isfinite(v) else None


def _phi(spec: GeneralScheduleSpec, n: int, j: int, s: float) -> float:
    """phi_j for the step-n family: beta0(g_1(g_2(...g_j(s)))) with g_k(s) = rho_phi(k)(xi_{n-k} * beta0(s))."""
    with np.errstate(over="ignore"):
        for k in range(j, 0, -1):
            s = spec.rho_phi(k)(spec.xi(n - k) * spec.beta0(s))
    return spec.beta0(s)


def _upsilon_sum(spec: GeneralScheduleSpec, n: int, c_h: float) -> float:
    """sum_{i=0..n} upsilon_i(c|h| sigma_{n-i}), evaluated as one array per composition level."""
    total = float(spec.beta0(c_h * spec.sigma(n)))
    if n == 0:
        return total
    i = np.arange(1, n + 1)
    s = np.array([spec.rho_upsilon(int(k))(c_h * spec.sigma(n - int(k))) for k in i], dtype=float)
    depth = i - 1
    for k in range(n - 1, 0, -1):
        mask = depth >= k
        if not mask.any():
            continue
        g = spec.rho_phi(k)
        arg = spec.xi(n - k) * np.asarray(spec.beta0(s[mask]), dtype=float)
        try:
            out = np.asarray(g(arg), dtype=float)
            if out.shape != arg.shape:
                raise ValueError
        except (TypeError, ValueError):
            out = np.array([g(float(a)) for a in arg], dtype=float)
        s[mask] = out
    return total + float(np.sum(np.asarray(spec.beta0(s), dtype=float)))


def _tau_partial_sums(tau: Callable, bound: float, n_max: int, chunk: int = 1_000_000) -> tuple[bool, float, int]:
    total, start = 0.0, 0
    while start < n_max:
        idx = np.arange(start, min(start + chunk, n_max))
        try:
            vals = np.asarray(tau(idx), dtype=float)
            if vals.shape != idx.shape:
                raise ValueError
        except (TypeError, ValueError):
            vals = np.array([tau(int(i)) for i in idx], dtype=float)
        if not np.all(np.isfinite(vals)):
            bad = int(idx[~np.isfinite(vals)][0])
            raise EvaluationError(f"tau_{bad} is not finite", where=bad)
        csum = total + np.cumsum(vals)
        hit = np.nonzero(csum > bound)[0]
        if hit.size:
            return True, float(csum[hit[0]]), int(idx[hit[0]]) + 1
        total = float(csum[-1])
        start += chunk
    return False, total, n_max


def check_theorem_conditions(spec: GeneralScheduleSpec, env: ContractionEnvelope, wb: WanderingBound,
                             x0_norm: float, h_z0: float, N_probe: int = 200,
                             probe_bound: float = 1e6, n_max: int = 10_000_000) -> TheoremReport:
    """Evaluate the general trapping conditions on a finite probe ``n = 0..N_probe``."""
    if N_probe < 1:
        raise DomainError("N_probe must be >= 1")
    c = env.c
    h_abs = abs(h_z0)
    B1 = _finite("B1", float(spec.B1(x0_norm)))
    B2 = _finite("B2", float(spec.B2(h_abs, c)))
    report_warnings = []

    lhs1, lhs2 = [], []
    for n in range(N_probe + 1):
        sn = spec.sigma(n)
        phi_n = _phi(spec, n, n, x0_norm)
        ups = _upsilon_sum(spec, n, c * h_abs)
        a, b = phi_n / sn, ups / sn
        if not (math.isfinite(a) and math.isfinite(b)):
            raise EvaluationError(f"Phi/Upsilon recursion not finite at n={n}", where=n)
        lhs1.append(a)
        lhs2.append(b)
    lhs1, lhs2 = np.array(lhs1), np.array(lhs2)
    conds = {
        "B1_bound": ConditionResult(bool(all(_le(v, B1) for v in lhs1)), float(B1 - lhs1.max()),
                                    f"max_n sigma_n^-1 phi_n = {lhs1.max():.6g} vs B1 = {B1:.6g}"),
        "B2_bound": ConditionResult(bool(all(_le(v, B2) for v in lhs2)), float(B2 - lhs2.max()),
                                    f"max_n sigma_n^-1 sum upsilon = {lhs2.max():.6g} vs B2 = {B2:.6g}"),
    }
    for name, seq in (("B1", lhs1), ("B2", lhs2)):
        tail = seq[-11:]
        with np.errstate(divide="ignore", invalid="ignore"):
            ratios = tail[1:] / tail[:-1]
        ratios = ratios[np.isfinite(ratios)]
        if ratios.size > 1 and np.any(np.diff(ratios) > 1e-12) and ratios[-1] >= 1.0:
            report_warnings.append(f"{name} sequence tail ratios not decreasing; boundedness is a finite-probe guess")

    sig = np.array([spec.sigma(i) for i in range(N_probe + 2)], dtype=float)
    taus = np.array([spec.tau(i) for i in range(N_probe + 1)], dtype=float)
    g01 = np.array([wb.gamma01(s) for s in sig[:-1]], dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = (sig[:-1] - sig[1:]) / (taus * g01)
    if not np.all(np.isfinite(ratio)):
        raise EvaluationError("dwell-time ratio not finite", where=int(np.argmin(np.isfinite(ratio))))
    delta0 = float(spec.delta0) if spec.delta0 is not None else float(ratio.min())
    conds["dwell_rate"] = ConditionResult(bool(all(_le(delta0, r) for r in ratio)), float(ratio.min() - delta0),
                                          f"min_i ratio = {ratio.min():.12g}, Delta0 = {delta0:.12g}")

    lhs18 = float(wb.gamma02(B1 + B2 + c * h_abs))
    rhs18 = h_z0 * delta0
    conds["trapping_domain"] = ConditionResult(_le(lhs18, rhs18), rhs18 - lhs18,
                                               f"gamma02(B1+B2+c|h|) = {lhs18:.6g} vs h*Delta0 = {rhs18:.6g}")

    if spec.tau_constant and spec.tau(0) > 0:
        conds["dwell_divergence"] = ConditionResult(True, math.inf, "constant positive dwell time")
    else:
        ok, total, used = _tau_partial_sums(spec.tau, probe_bound, n_max)
        conds["dwell_divergence"] = ConditionResult(ok, total - probe_bound,
                                                    f"partial sum {total:.6g} after {used} terms (bound {probe_bound:g})")

    h_pos = h_z0 > 0
    if not h_pos:
        report_warnings.append("h(z0) <= 0: trapping conclusion not claimed")
    for w in report_warnings:
        warnings.warn(w, RuntimeWarning, stacklevel=2)
    return TheoremReport(conds, delta0, h_pos, report_warnings,
                         {"x0_norm": x0_norm, "h_z0": h_z0, "N_probe": N_probe, "c": c})


def condition_report(env: ContractionEnvelope, params: ScheduleParams, **extra) -> dict:
    """JSON-ready summary of the closed-form constants at ``params``."""
    sch = build_schedule(env, params)
    out = {"params": asdict(params), "xi_star": sch.xi_star, "tau_star": sch.tau_star, "delta0": sch.delta0,
           "G": small_gain_G(env, params)}
    out.update(extra)
    return out
