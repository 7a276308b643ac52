"""Comparison functions, contraction envelopes and wandering-output bounds.

Class membership (K, KL, strictly decreasing) is certified on dense sample
grids rather than proven; every evaluation that produces NaN or inf raises
:class:`~nugain.errors.EvaluationError` instead of being clamped.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import (
    ConfigurationError,
    DomainError,
    EvaluationError,
    InvariantViolation,
)

DEFAULT_GRID = 512
KIND_GENERAL = "general"
KIND_SEPARABLE = "separable"
KIND_EXPONENTIAL = "exponential"
_KINDS = (KIND_GENERAL, KIND_SEPARABLE, KIND_EXPONENTIAL)


@dataclass(frozen=True)
class ScalarFn:
    """A map R+ -> R+ with a name, optional validity bound and class-K flag.

    Calls accept scalars or numpy arrays and raise on non-finite output.
    """

    fn: Callable
    name: str = "fn"
    domain_hint: Optional[float] = None
    class_k: bool = False

    def __call__(self, s):
        out = self.fn(s)
        if isinstance(out, float) and math.isfinite(out):
            return out
        arr = np.asarray(out, dtype=float)
        if not np.all(np.isfinite(arr)):
            bad = np.asarray(s, dtype=float)
            if arr.ndim:
                bad = np.broadcast_to(bad, arr.shape)[~np.isfinite(arr)][0]
            raise EvaluationError(f"{self.name} returned non-finite value at s={float(bad)!r}", where=float(bad))
        if arr.ndim == 0:
            return float(arr)
        return arr

    def __repr__(self):
        return f"ScalarFn({self.name})"


# -- built-ins ---------------------------------------------------------------

def identity() -> ScalarFn:
    return ScalarFn(lambda s: s * 1.0, "identity", class_k=True)


def linear(a: float) -> ScalarFn:
    if a < 0:
        raise DomainError(f"linear gain must be nonnegative, got {a}")
    return ScalarFn(lambda s: a * s, f"linear({a:g})", class_k=a > 0)


def power(p: float, a: float = 1.0) -> ScalarFn:
    if p <= 0 or a <= 0:
        raise DomainError(f"power(p={p}, a={a}) needs p>0, a>0")
    return ScalarFn(lambda s: a * np.power(s, p), f"power({p:g})" if a == 1.0 else f"{a:g}*power({p:g})", class_k=True)


def exp_decay(rate: float, D: float = 1.0) -> ScalarFn:
    if rate <= 0:
        raise DomainError(f"decay rate must be positive, got {rate}")
    return ScalarFn(lambda t: D * np.exp(-rate * np.asarray(t, dtype=float)), f"exp_decay({rate:g},{D:g})")


def piecewise_linear(breakpoints: Sequence[float], values: Sequence[float], class_k: bool = False) -> ScalarFn:
    """Linear interpolation through a table; constant beyond the last breakpoint."""
    xs = np.asarray(breakpoints, dtype=float)
    ys = np.asarray(values, dtype=float)
    if xs.ndim != 1 or xs.shape != ys.shape or xs.size < 2:
        raise ConfigurationError("table needs matching breakpoint/value lists of length >= 2")
    if np.any(np.diff(xs) <= 0):
        raise ConfigurationError("table breakpoints must be strictly increasing")
    if not (np.all(np.isfinite(xs)) and np.all(np.isfinite(ys))):
        raise ConfigurationError("table entries must be finite")
    return ScalarFn(lambda s: np.interp(s, xs, ys), f"table[{xs.size}]", domain_hint=float(xs[-1]), class_k=class_k)


_BUILTIN_RE = re.compile(r"^\s*([a-z_]+)\s*(?:\((.*)\))?\s*$")


def parse_scalar_fn(text: str) -> ScalarFn:
    """Parse ``identity``, ``power(p)``, ``linear(a)``, ``exp_decay(rate, D)`` or
    ``table(x0:y0, x1:y1, ...)``."""
    m = _BUILTIN_RE.match(text)
    if not m:
        raise ConfigurationError(f"cannot parse function spec {text!r}")
    name, args = m.group(1), (m.group(2) or "").strip()
    try:
        if name == "table":
            pairs = [p.split(":") for p in args.split(",") if p.strip()]
            return piecewise_linear([float(a) for a, _ in pairs], [float(b) for _, b in pairs])
        nums = [float(a) for a in args.split(",")] if args else []
    except ValueError as exc:
        raise ConfigurationError(f"bad numeric argument in {text!r}") from exc
    builders = {"identity": (identity, 0), "linear": (linear, 1), "power": (power, 1), "exp_decay": (exp_decay, 2)}
    if name not in builders:
        raise ConfigurationError(f"unknown function {name!r}; expected one of {sorted(builders) + ['table']}")
    builder, arity = builders[name]
    if name == "exp_decay" and len(nums) == 1:
        nums.append(1.0)
    if len(nums) != arity:
        raise ConfigurationError(f"{name} takes {arity} argument(s), got {len(nums)}")
    return builder(*nums)


# -- envelopes ---------------------------------------------------------------

@dataclass(frozen=True)
class ContractionEnvelope:
    """ISS-type bound ``|x(t)|_A <= beta_x(|x0|_A) * beta_t(t) + c * sup|u|``.

    ``kind`` is one of ``general``, ``separable`` or ``exponential``; the
    exponential kind carries ``rate`` (lambda) and ``D_beta`` and satisfies
    ``beta_t(t) = D_beta * exp(-rate * t)``.  ``beta`` optionally holds the
    full KL bound when the factorization is only an upper bound.
    """

    beta_x: ScalarFn
    beta_t: ScalarFn
    c: float = 1.0
    kind: str = KIND_SEPARABLE
    rate: Optional[float] = None
    D_beta: Optional[float] = None
    beta: Optional[Callable[[float, float], float]] = field(default=None, compare=False)

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ConfigurationError(f"unknown envelope kind {self.kind!r}")
        if not (self.c >= 0 and math.isfinite(self.c)):
            raise DomainError(f"input gain c must be finite and nonnegative, got {self.c}")
        if self.kind == KIND_EXPONENTIAL:
            if self.rate is None or not self.rate > 0:
                raise DomainError("exponential envelope needs rate > 0")
            if self.D_beta is None or not self.D_beta >= 1:
                raise DomainError("exponential envelope needs D_beta >= 1")

    @classmethod
    def exponential(cls, rate: float, D_beta: float = 1.0, c: float = 1.0) -> "ContractionEnvelope":
        return cls(identity(), exp_decay(rate, D_beta), c=c, kind=KIND_EXPONENTIAL, rate=float(rate), D_beta=float(D_beta))

    @classmethod
    def separable(cls, beta_t: ScalarFn, c: float = 1.0, beta_x: Optional[ScalarFn] = None, beta=None) -> "ContractionEnvelope":
        return cls(beta_x or identity(), beta_t, c=c, kind=KIND_SEPARABLE, beta=beta)

    @property
    def beta_t0(self) -> float:
        return self.beta_t(0.0)

    def kl_bound(self, s, t):
        """The housed KL bound, falling back to the factorized product."""
        if self.beta is not None:
            return self.beta(s, t)
        return self.beta_x(s) * self.beta_t(t)

    def check(self, horizon: float = 1e3, grid_size: int = DEFAULT_GRID, tol: float = 1e-6) -> dict:
        """Sampled certification of the envelope invariants."""
        ts = np.linspace(0.0, horizon, grid_size)
        bt = np.asarray(self.beta_t(ts), dtype=float)
        report = {
            "beta_t_decreasing": bool(np.all(np.diff(bt) < 0)) or _decreasing_until_zero(bt),
            "beta_t_vanishes": bool(bt[-1] < tol),
            "beta_t0_at_least_one": bool(bt[0] >= 1.0),
        }
        if self.kind == KIND_EXPONENTIAL:
            ref = self.D_beta * np.exp(-self.rate * ts)
            report["exponential_form"] = bool(np.allclose(bt, ref, rtol=1e-12, atol=0.0))
        if self.kind == KIND_SEPARABLE and self.beta is not None:
            ss = np.linspace(0.0, self.beta_x.domain_hint or 10.0, 64)
            worst = max(self.beta(s, t) - self.beta_x(s) * self.beta_t(t) for s in ss for t in ts[:: max(1, grid_size // 64)])
            report["factorization"] = bool(worst <= 1e-12)
        report["passed"] = all(report.values())
        return report


def _decreasing_until_zero(values: np.ndarray) -> bool:
    # Exponential tails underflow to exactly zero; strictness is only checked before that.
    nz = values > 0
    if not nz.any():
        return False
    head = values[: int(np.argmin(nz)) if not nz.all() else values.size]
    return bool(np.all(np.diff(head) < 0)) and bool(np.all(values[head.size:] == 0))


def beta_t_inverse(env: ContractionEnvelope, y: float, tol: float = 1e-12, t_max: float = 1e6, max_iter: int = 400) -> float:
    """Time at which ``env.beta_t`` reaches level ``y`` (0 < y <= beta_t(0)).

    Uses the closed form for exponential envelopes and bisection otherwise.
    """
    b0 = env.beta_t(0.0)
    if not (y > 0 and y <= b0 * (1 + 1e-15)):
        raise DomainError(f"level {y!r} outside (0, beta_t(0)={b0!r}]")
    if env.kind == KIND_EXPONENTIAL:
        return max(0.0, -math.log(y / env.D_beta) / env.rate)
    if y >= b0:
        return 0.0
    f_hi = env.beta_t(t_max)
    if f_hi > y:
        raise DomainError(f"beta_t({t_max:g}) = {f_hi:g} still above level {y:g}; raise t_max")
    probe = np.concatenate(([0.0], np.geomspace(1e-6, t_max, 96)))
    vals = np.asarray(env.beta_t(probe), dtype=float)
    if np.any(np.diff(vals) > 0):
        k = int(np.argmax(np.diff(vals) > 0))
        raise InvariantViolation(f"beta_t increases between t={probe[k]:g} and t={probe[k + 1]:g}")
    # Tighten the bracket with the probe grid before bisecting.
    k = int(np.searchsorted(-vals, -y, side="left"))
    lo, hi = float(probe[max(k - 1, 0)]), float(probe[min(k, probe.size - 1)])
    f_lo, f_hi = env.beta_t(lo), env.beta_t(hi)
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        f_mid = env.beta_t(mid)
        if not (f_hi <= f_mid <= f_lo):
            raise InvariantViolation(f"beta_t not monotone near t={mid:g}")
        if abs(f_mid - y) <= tol * y or hi - lo <= 4 * np.spacing(hi):
            return mid
        if f_mid > y:
            lo, f_lo = mid, f_mid
        else:
            hi, f_hi = mid, f_mid
    return 0.5 * (lo + hi)


# -- class-K certification ---------------------------------------------------

@dataclass
class ClassKReport:
    is_zero_at_zero: bool
    is_strictly_increasing: bool
    violations: list
    value_at_zero: float

    @property
    def passed(self) -> bool:
        return self.is_zero_at_zero and self.is_strictly_increasing

    def __bool__(self):
        return self.passed


def validate_class_k(fn: Callable, grid_size: int = DEFAULT_GRID, upper: float = 10.0) -> ClassKReport:
    """Sample ``fn`` on ``[0, upper]`` and list adjacent pairs breaking strict monotonicity."""
    if grid_size < 2 or not upper > 0:
        raise DomainError("need grid_size >= 2 and upper > 0")
    grid = np.linspace(0.0, upper, grid_size)
    vals = np.empty(grid_size)
    for i, s in enumerate(grid):
        v = float(fn(float(s)))
        if not math.isfinite(v):
            raise EvaluationError(f"non-finite value {v} at s={s!r}", where=float(s))
        vals[i] = v
    bad = np.nonzero(np.diff(vals) <= 0)[0]
    violations = [(float(grid[i]), float(grid[i + 1])) for i in bad]
    return ClassKReport(abs(vals[0]) <= 1e-15, bad.size == 0, violations, float(vals[0]))


# -- wandering subsystem -----------------------------------------------------

@dataclass(frozen=True)
class WanderingBound:
    """Output ``h`` and integral bounds ``gamma1 <= -dh/dt <= gamma0`` of the wandering part.

    ``gamma01``/``gamma02`` factor gamma0 as ``gamma0(a*b) <= gamma01(a)*gamma02(b)``;
    ``D_gamma0`` is the Lipschitz constant of gamma0 when known.
    """

    h: Callable
    gamma0: ScalarFn
    gamma1: ScalarFn
    gamma01: ScalarFn
    gamma02: ScalarFn
    D_gamma0: Optional[float] = None

    @classmethod
    def lipschitz(cls, D_gamma0: float, h: Callable = lambda z: z[0], gamma1: Optional[ScalarFn] = None) -> "WanderingBound":
        """gamma0 = D*s with the factorization gamma01 = id, gamma02 = D*s."""
        g0 = linear(D_gamma0)
        return cls(h, g0, gamma1 if gamma1 is not None else g0, identity(), linear(D_gamma0), float(D_gamma0))

    def check(self, M: float = 10.0, grid_size: int = 128) -> dict:
        ss = np.linspace(0.0, M, grid_size)
        out = {"ordered": bool(np.all(self.gamma1(ss) <= self.gamma0(ss) + 1e-12))}
        if self.D_gamma0 is not None:
            out["lipschitz"] = bool(np.all(np.abs(self.gamma0(ss)) <= self.D_gamma0 * ss + 1e-12))
        out["factorization"] = check_factorization(self, M, min(grid_size, 64)).passed
        out["passed"] = all(out.values())
        return out


@dataclass
class FactorizationReport:
    passed: bool
    worst_margin: float
    worst_point: tuple
    M: float

    def __bool__(self):
        return self.passed


def check_factorization(wb: WanderingBound, M: float, grid_size: int = 64) -> FactorizationReport:
    """Verify ``gamma0(a*b) <= gamma01(a)*gamma02(b) + 1e-12`` on a grid over ``[0, M]^2``."""
    if not M > 0:
        raise DomainError(f"M must be positive, got {M}")
    g = np.linspace(0.0, M, grid_size)
    a, b = np.meshgrid(g, g, indexing="ij")
    lhs = np.asarray(wb.gamma0(a * b), dtype=float)
    rhs = np.asarray(wb.gamma01(a), dtype=float) * np.asarray(wb.gamma02(b), dtype=float)
    if not np.all(np.isfinite(rhs)):
        raise EvaluationError("factor functions returned non-finite values")
    margin = rhs - lhs
    # Slack of 1e-12, relative once the values exceed one, absorbs rounding in exact identities.
    scaled = margin / np.maximum(1.0, np.abs(rhs))
    k = np.unravel_index(int(np.argmin(scaled)), margin.shape)
    worst = float(margin[k])
    return FactorizationReport(bool(scaled[k] >= -1e-12), worst, (float(a[k]), float(b[k])), float(M))
