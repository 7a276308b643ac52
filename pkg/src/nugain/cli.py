"""Command-line front end: ``nugain {check,simulate,reproduce,sweep}``.

Scenarios are INI files.  Every section and key is validated; unknown keys and
out-of-range values are usage errors (exit 2) reported with their line number.
Exit statuses: 0 pass/converged, 1 condition failed/escaped/undecided,
2 usage error, 3 runtime failure inside a simulation.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import json
import math
import os
import re
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Optional

import numpy as np

from . import dynsim, observer, smallgain
from .errors import ConfigurationError, DomainError, NugainError
from .gains import ContractionEnvelope, WanderingBound, identity, parse_scalar_fn

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2, 3
FLOAT_FMT = ".17g"

FIXTURES = ("example1-gain", "gstar", "cascade-34b", "saddle-node-5", "saddle-node-6",
            "linear", "example1", "example2", "custom")


class UsageError(Exception):
    pass


# -- value parsers -----------------------------------------------------------

def _float(lo=-math.inf, hi=math.inf, lo_open=False, hi_open=False):
    def parse(text):
        v = float(text)
        if not math.isfinite(v):
            raise ValueError("must be finite")
        if v < lo or (lo_open and v == lo) or v > hi or (hi_open and v == hi):
            lb = "(" if lo_open else "["
            rb = ")" if hi_open else "]"
            raise ValueError(f"must lie in {lb}{lo:g}, {hi:g}{rb}")
        return v
    return parse


def _int(lo=0):
    def parse(text):
        v = int(text)
        if v < lo:
            raise ValueError(f"must be >= {lo}")
        return v
    return parse


def _vector(text):
    vals = [float(v) for v in text.replace(",", " ").split()]
    if not vals or not all(math.isfinite(v) for v in vals):
        raise ValueError("must be a non-empty list of finite numbers")
    return tuple(vals)


def _or_optimize(parser):
    def parse(text):
        return "optimize" if text.strip().lower() == "optimize" else parser(text)
    return parse


def _choice(*options):
    def parse(text):
        t = text.strip()
        if t not in options:
            raise ValueError(f"must be one of {', '.join(options)}")
        return t
    return parse


def _text(text):
    return text.strip()


def _scalar_fn(text):
    return parse_scalar_fn(text)


POS = _float(0.0, lo_open=True)
NONNEG = _float(0.0)

SCHEMA: dict[str, dict[str, Callable]] = {
    "scenario": {"name": _text, "fixture": _choice(*FIXTURES)},
    "envelope": {"kind": _choice("exponential", "separable"), "rate": POS, "D_beta": _float(1.0),
                 "c": NONNEG, "beta_t": _scalar_fn, "beta_x": _scalar_fn},
    "wandering": {"D_gamma0": NONNEG},
    "schedule": {"d": _or_optimize(_float(0.0, 1.0, True, True)), "kappa": _or_optimize(_float(1.0, lo_open=True)),
                 "N_probe": _int(1)},
    "initial": {"x0": _vector, "z0": _vector, "x0_norm": NONNEG, "h_z0": _float()},
    "simulation": {"t_end": POS, "dt": POS, "record_every": _int(1), "blowup": POS, "seed": _int(0),
                   "count": _int(1), "tol": POS},
    "model": {
        "lambda1": POS, "c1": NONNEG, "c2": NONNEG, "eps": _float(), "gamma": NONNEG, "rate": POS, "u": _float(),
        "theta": _float(-1.0, 1.0), "k": POS, "lambda0": _vector, "D_lambda": POS, "rho": POS,
        "beta": _float(0.3, 0.7), "d_true": _float(2.0, 3.0), "omega2": POS, "omega_ratio": POS,
        "delta": POS, "pulse_amplitude": _float(), "pulse_on": NONNEG, "pulse_off": NONNEG,
        "a": _float(), "b": _float(), "alpha": _float(), "c_hr": _float(),
        "f_x": _text, "f_z": _text, "h": _text, "n": _int(1), "m": _int(0),
    },
    "sweep": {"param": _text, "values": _vector, "verb": _choice("check", "simulate")},
}

MODEL_KEYS = {
    "example1-gain": {"rho", "D_lambda", "gamma"},
    "gstar": {"rate"},
    "cascade-34b": {"lambda1", "c1", "c2"},
    "saddle-node-5": {"eps", "gamma"},
    "saddle-node-6": {"eps", "gamma"},
    "linear": {"rate", "u"},
    "example1": {"theta", "gamma", "k", "lambda0", "D_lambda"},
    "example2": {"beta", "d_true", "rho", "gamma", "omega2", "omega_ratio", "delta", "pulse_amplitude",
                 "pulse_on", "pulse_off", "a", "b", "alpha", "c_hr"},
    "custom": {"f_x", "f_z", "h", "n", "m"},
}


@dataclass
class Scenario:
    values: dict = field(default_factory=dict)
    lines: dict = field(default_factory=dict)
    source: str = "<defaults>"

    def get(self, section: str, key: str, default: Any = None):
        return self.values.get(section, {}).get(key, default)

    @property
    def fixture(self) -> str:
        return self.get("scenario", "fixture", "custom")

    def set(self, section: str, key: str, raw: str, line: Optional[int] = None):
        if section not in SCHEMA:
            raise UsageError(self._where(section, None, line) + f"unknown section [{section}]")
        if key not in SCHEMA[section]:
            raise UsageError(self._where(section, key, line) + f"unknown key '{key}' in [{section}]")
        try:
            val = SCHEMA[section][key](raw)
        except (ValueError, NugainError) as exc:
            raise UsageError(self._where(section, key, line) + f"[{section}] {key} = {raw!r}: {exc}") from None
        self.values.setdefault(section, {})[key] = val
        if line is not None:
            self.lines[(section, key)] = line

    def _where(self, section, key, line):
        if line is None:
            line = self.lines.get((section, key))
        return f"{self.source}:{line}: " if line is not None else f"{self.source}: "

    def fail(self, section: str, key: str, message: str):
        raise UsageError(self._where(section, key, None) + f"[{section}] {key}: {message}")

    def validate(self):
        fx = self.fixture
        allowed = MODEL_KEYS[fx]
        for key in self.values.get("model", {}):
            if key not in allowed:
                self.fail("model", key, f"not a parameter of fixture '{fx}' (allowed: {', '.join(sorted(allowed))})")
        if fx == "custom" and self.get("model", "f_x") is None:
            self.fail("model", "f_x", "the custom fixture needs f_x (and f_z, h when m > 0)")


def _key_lines(text: str) -> dict:
    out, section = {}, None
    for no, line in enumerate(text.splitlines(), 1):
        s = line.strip()
        m = re.match(r"^\[([^\]]+)\]", s)
        if m:
            section = m.group(1).strip()
            continue
        m = re.match(r"^([^=:#;\s][^=:]*?)\s*[=:]", s)
        if m and section is not None:
            out.setdefault((section, m.group(1).strip()), no)
    return out


def load_scenario(path: Optional[str]) -> Scenario:
    sc = Scenario()
    if path is None:
        return sc
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from None
    sc.source = path
    cp = configparser.ConfigParser(interpolation=None, strict=True, inline_comment_prefixes=(";", "#"))
    cp.optionxform = str
    try:
        cp.read_string(text, source=path)
    except configparser.Error as exc:
        raise UsageError(f"{path}: malformed config: {exc}") from None
    lines = _key_lines(text)
    for section in cp.sections():
        if section not in SCHEMA:
            line = next((no for no, l in enumerate(text.splitlines(), 1) if l.strip() == f"[{section}]"), None)
            raise UsageError(f"{path}:{line}: unknown section [{section}]")
        for key, raw in cp.items(section):
            sc.set(section, key, raw, lines.get((section, key)))
    return sc


def apply_overrides(sc: Scenario, args) -> None:
    for item in args.set or []:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise UsageError(f"--set expects section.key=value, got {item!r}")
        lhs, raw = item.split("=", 1)
        section, key = lhs.split(".", 1)
        sc.set(section.strip(), key.strip(), raw)
    if args.fixture:
        sc.set("scenario", "fixture", args.fixture)
    if args.dt is not None:
        sc.set("simulation", "dt", repr(args.dt))
    if args.horizon is not None:
        sc.set("simulation", "t_end", repr(args.horizon))
    if args.seed is not None:
        sc.set("simulation", "seed", str(args.seed))
    sc.validate()


# -- output helpers ----------------------------------------------------------

def _fmt(v) -> str:
    return format(float(v), FLOAT_FMT)


def write_csv(path: str, header: list, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) if isinstance(v, (int, float, np.floating, np.integer)) and not isinstance(v, bool)
                        else v for v in row])


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


def write_json(path: str, data: dict) -> None:
    with open(path, "w") as fh:
        json.dump(_clean(data), fh, indent=2, sort_keys=True)
        fh.write("\n")


# -- scenario -> objects -----------------------------------------------------

def build_envelope(sc: Scenario) -> ContractionEnvelope:
    kind = sc.get("envelope", "kind", "exponential")
    c = sc.get("envelope", "c", 1.0)
    if kind == "exponential":
        return ContractionEnvelope.exponential(sc.get("envelope", "rate", 1.0), sc.get("envelope", "D_beta", 1.0), c)
    beta_t = sc.get("envelope", "beta_t")
    if beta_t is None:
        sc.fail("envelope", "beta_t", "separable envelopes need beta_t")
    return ContractionEnvelope.separable(beta_t, c, sc.get("envelope", "beta_x") or identity())


def schedule_params(sc: Scenario, env: ContractionEnvelope) -> tuple[smallgain.ScheduleParams, Optional[smallgain.GOptimum]]:
    d = sc.get("schedule", "d", 0.5)
    k = sc.get("schedule", "kappa", 2.0)
    if d == "optimize" or k == "optimize":
        opt = smallgain.optimize_G(env)
        return smallgain.ScheduleParams(opt.d_opt, opt.kappa_opt), opt
    return smallgain.ScheduleParams(d, k), None


def _expr(text: str, what: str):
    names = {"np": np, "math": math, "sin": np.sin, "cos": np.cos, "exp": np.exp, "abs": np.abs,
             "sqrt": np.sqrt, "tanh": np.tanh, "pi": math.pi}
    try:
        code = compile(text, f"<{what}>", "eval")
    except SyntaxError as exc:
        raise UsageError(f"cannot parse {what} expression {text!r}: {exc.msg}") from None
    bad = [n for n in code.co_names if n not in names and n not in ("x", "z", "t")]
    if bad:
        raise UsageError(f"{what}: unknown names {bad}")
    return lambda x, z, t=0.0: eval(code, {"__builtins__": {}}, {**names, "x": x, "z": z, "t": t})


def build_model(sc: Scenario) -> dynsim.InterconnectionModel:
    fx = sc.fixture
    mp = sc.values.get("model", {})
    if fx == "cascade-34b":
        return dynsim.cascade(mp.get("lambda1", 2.0), mp.get("c1", 0.2), mp.get("c2", 0.2))
    if fx in ("saddle-node-5", "saddle-node-6"):
        return dynsim.saddle_node(int(fx[-1]), mp.get("eps", 0.0), mp.get("gamma", 1.0))
    if fx == "linear":
        return dynsim.linear_first_order(mp.get("rate", 1.0), mp.get("u", 0.0))
    if fx == "custom":
        n, m = mp.get("n", 1), mp.get("m", 0)
        f_x = _expr(mp["f_x"], "f_x")
        f_z = _expr(mp.get("f_z", "[]"), "f_z")
        h_fn = _expr(mp.get("h", "0.0"), "h")
        return dynsim.InterconnectionModel(f_x, f_z, lambda z: h_fn(None, z), dynsim.InvariantSet.origin(), (n, m))
    raise UsageError(f"fixture '{fx}' cannot be simulated as a plain interconnection")


def example1_config(sc: Scenario) -> observer.Example1Config:
    mp = sc.values.get("model", {})
    cfg = observer.Example1Config()
    kw = {"theta": mp.get("theta"), "gamma": mp.get("gamma"), "k": mp.get("k"), "D_lambda": mp.get("D_lambda"),
          "t_end": sc.get("simulation", "t_end"), "dt": sc.get("simulation", "dt"),
          "record_every": sc.get("simulation", "record_every"), "tol_x": sc.get("simulation", "tol")}
    lam0 = mp.get("lambda0")
    if lam0 is not None:
        if len(lam0) != 2:
            sc.fail("model", "lambda0", "Example 1 needs two components")
        kw["lambda0"] = lam0
    x0 = sc.get("initial", "x0")
    if x0 is not None:
        kw["x0"] = x0[0]
    d, k = sc.get("schedule", "d"), sc.get("schedule", "kappa")
    if isinstance(d, float):
        kw["d"] = d
    if isinstance(k, float):
        kw["kappa"] = k
    return replace(cfg, **{k: v for k, v in kw.items() if v is not None})


def example2_config(sc: Scenario) -> observer.Example2Config:
    mp = sc.values.get("model", {})
    names = {"beta": "beta_true", "d_true": "d_true", "rho": "rho", "gamma": "gamma", "omega2": "omega2",
             "omega_ratio": "omega_ratio", "delta": "delta", "pulse_amplitude": "pulse_amplitude",
             "pulse_on": "pulse_on", "pulse_off": "pulse_off", "a": "a", "b": "b", "alpha": "alpha", "c_hr": "c"}
    kw = {names[k]: v for k, v in mp.items() if k in names}
    for key, attr in (("t_end", "t_end"), ("dt", "dt"), ("record_every", "record_every")):
        v = sc.get("simulation", key)
        if v is not None:
            kw[attr] = v
    x0 = sc.get("initial", "x0")
    if x0 is not None:
        if len(x0) != 2:
            sc.fail("initial", "x0", "Example 2 needs (x1, x2)")
        kw["x0"] = x0
    return replace(observer.Example2Config(), **kw)


# -- verbs -------------------------------------------------------------------

def cmd_check(sc: Scenario, out: str) -> tuple[int, dict]:
    fx = sc.fixture
    mp = sc.values.get("model", {})
    conditions = {}
    report: dict = {"fixture": fx, "scenario": sc.get("scenario", "name", fx)}
    if fx == "example1-gain":
        env = ContractionEnvelope.exponential(mp.get("rho", 1.0))
        params, opt = schedule_params(sc, env)
        gmax = smallgain.identifier_gain_bound(env, params, mp.get("D_lambda", 1.0))
        report.update(gamma_max=gmax, d=params.d, kappa=params.kappa)
        if "gamma" in mp:
            conditions["gamma_below_bound"] = {"passed": mp["gamma"] <= gmax, "margin": gmax - mp["gamma"]}
    elif fx == "gstar":
        rate = mp.get("rate", sc.get("envelope", "rate", 1.0))
        env = ContractionEnvelope.exponential(rate, sc.get("envelope", "D_beta", 1.0))
        opt = smallgain.optimize_G(env)
        product = (rate / 16.0) * opt.G_star
        report.update(G_star=opt.G_star, d_opt=opt.d_opt, kappa_opt=opt.kappa_opt, rate=rate,
                      one_sixteenth_product=product)
        conditions["G_star_below_16_over_rate"] = {"passed": opt.G_star < 16.0 / rate, "margin": 16.0 / rate - opt.G_star}
        conditions["one_sixteenth_rule"] = {"passed": smallgain.check_small_gain_existence(rate / 16.0, 1.0, opt.G_star),
                                            "margin": 1.0 - product}
    else:
        if fx == "cascade-34b":
            model = build_model(sc)
            env, wb = model.envelope, model.wandering
            x0 = sc.get("initial", "x0", (0.0,))
            z0 = sc.get("initial", "z0", (1.0,))
            x0_norm = sc.get("initial", "x0_norm", abs(x0[0]))
            h_z0 = sc.get("initial", "h_z0", z0[0])
        else:
            env = build_envelope(sc)
            D = sc.get("wandering", "D_gamma0")
            if D is None:
                sc.fail("wandering", "D_gamma0", "required for the trapping check")
            wb = WanderingBound.lipschitz(D)
            x0_norm = sc.get("initial", "x0_norm", 0.0)
            h_z0 = sc.get("initial", "h_z0")
            if h_z0 is None:
                sc.fail("initial", "h_z0", "required for the trapping check")
        params, opt = schedule_params(sc, env)
        trap = smallgain.check_trapping_separable(env, wb, params, x0_norm, h_z0)
        G = smallgain.small_gain_G(env, params)
        conditions["trapping_domain"] = {"passed": trap.member, "margin": trap.margin, "threshold": trap.threshold,
                                         "reason": trap.reason}
        conditions["small_gain_existence"] = {"passed": smallgain.check_small_gain_existence(wb.D_gamma0, env.c, G),
                                              "margin": 1.0 - wb.D_gamma0 * env.c * G}
        general = smallgain.check_theorem_conditions(smallgain.default_schedule_spec(env, params), env, wb, x0_norm, h_z0,
                                                     N_probe=sc.get("schedule", "N_probe", 200))
        conditions["general_conditions"] = {"passed": general.passed, "detail": general.to_dict()}
        sch = smallgain.build_schedule(env, params)
        report.update(d=params.d, kappa=params.kappa, G=G, xi_star=sch.xi_star, tau_star=sch.tau_star,
                      delta0=sch.delta0, x0_norm=x0_norm, h_z0=h_z0)
        if h_z0 > 0 and wb.D_gamma0 > 0:
            xb = smallgain.trapping_x0_bound(env, params, wb.D_gamma0, env.c, h_z0)
            report.update(x0_max=xb.x0_max, slice_empty=xb.empty)
        if opt is not None:
            report["G_star"] = opt.G_star
    report["conditions"] = conditions
    report["passed"] = all(c["passed"] for c in conditions.values())
    os.makedirs(out, exist_ok=True)
    write_json(os.path.join(out, "check.json"), report)
    return (EXIT_OK if report["passed"] else EXIT_FAIL), report


def _sim_settings(sc: Scenario, t_end: float, dt: float):
    return (sc.get("simulation", "t_end", t_end), sc.get("simulation", "dt", dt),
            sc.get("simulation", "record_every", 1), sc.get("simulation", "tol", 1e-2))


def cmd_simulate(sc: Scenario, out: str) -> tuple[int, dict]:
    fx = sc.fixture
    os.makedirs(out, exist_ok=True)
    if fx == "example1":
        cfg = example1_config(sc)
        res = observer.run_example1(cfg)
        res.trajectory.to_csv(os.path.join(out, "trajectory.csv"))
        summary = {**res.report, "fixture": fx}
        summary.update(observer.example1_diagnostics(res, cfg))
        verdict = res.verdict
    elif fx == "example2":
        cfg = example2_config(sc)
        res = observer.run_example2(cfg)
        _write_ex2(out, res, cfg, prefix="")
        summary = {**res.report, "fixture": fx}
        verdict = res.verdict
    elif fx in ("example1-gain", "gstar"):
        raise UsageError(f"fixture '{fx}' is a constant check; use the 'check' verb")
    else:
        model = build_model(sc)
        n, m = model.dims
        x0 = sc.get("initial", "x0", (1.0,) * n if fx != "saddle-node-5" else (0.0,))
        z0 = sc.get("initial", "z0", (-0.1,) if fx.startswith("saddle") else (1.0,) * m)
        if len(x0) != n or len(z0) != m:
            raise UsageError(f"initial state must have x0 of length {n} and z0 of length {m}")
        default_t = {"saddle-node-5": 1000.0, "saddle-node-6": 1000.0, "cascade-34b": 500.0}.get(fx, 100.0)
        t_end, dt, every, tol = _sim_settings(sc, default_t, 1e-2)
        traj = dynsim.integrate(model, x0, z0, 0.0, t_end, dt, blowup=sc.get("simulation", "blowup", dynsim.BLOWUP),
                                record_every=every)
        traj.to_csv(os.path.join(out, "trajectory.csv"))
        summary = traj.summary(tol=tol, target=model.target, fixture=fx)
        if model.wandering is not None and not traj.escaped:
            summary["sandwich"] = dynsim.verify_wandering_bound(traj, model.wandering).to_dict()
        if fx == "cascade-34b":
            params = smallgain.ScheduleParams(sc.get("schedule", "d", 0.5), sc.get("schedule", "kappa", 2.0))
            if z0[0] > 0:
                xb = smallgain.trapping_x0_bound(model.envelope, params, model.wandering.D_gamma0, model.envelope.c, z0[0])
                summary["x0_max"] = xb.x0_max
                summary["inside_trapping_slice"] = bool(abs(x0[0]) <= xb.x0_max)
        verdict = summary["verdict"]
    summary["verdict"] = verdict
    write_json(os.path.join(out, "summary.json"), summary)
    return (EXIT_OK if verdict == dynsim.CONVERGED else EXIT_FAIL), summary


def _write_ex2(out: str, res: observer.Example2Result, cfg: observer.Example2Config, prefix: str = "ex2_"):
    s = res.states
    write_csv(os.path.join(out, f"{prefix}trajectory.csv"),
              ["t", "x1", "x2", "x_hat", "w", "sigma", "beta_hat", "d_hat", "residual"],
              (np.column_stack([res.times, s, res.theta_hat, res.residual])).tolist())
    every = cfg.record_every
    fit = observer.replay_plant(cfg, res.report["beta_hat"], res.report["d_hat"], s[0, :2], float(res.times[-1]),
                                cfg.dt, every)
    k = min(len(fit), len(s))
    write_csv(os.path.join(out, f"{prefix}replay.csv"), ["t", "x1_model", "x2_model", "x1_fit", "x2_fit"],
              np.column_stack([res.times[:k], s[:k, :2], fit[:k]]).tolist())
    tail = res.times >= res.times[-1] * 0.9
    write_csv(os.path.join(out, f"{prefix}search.csv"), ["t", "beta_hat", "d_hat"],
              np.column_stack([res.times[tail], res.theta_hat[tail]]).tolist())


def reproduce_constants() -> dict:
    env = ContractionEnvelope.exponential(1.0)
    ref = smallgain.ScheduleParams(0.5, 2.0)
    sch = smallgain.build_schedule(env, ref)
    opt = smallgain.optimize_G(env)
    return {
        "example1_gamma_max": smallgain.identifier_gain_bound(env, ref, 1.0),
        "G_star": opt.G_star, "d_opt": opt.d_opt, "kappa_opt": opt.kappa_opt,
        "one_sixteenth_product": opt.G_star / 16.0,
        "one_sixteenth_holds": smallgain.check_small_gain_existence(1.0 / 16.0, 1.0, opt.G_star),
        "G_reference": smallgain.small_gain_G(env, ref),
        "delta0": sch.delta0, "xi_star": sch.xi_star, "tau_star": sch.tau_star,
        "reference_d": ref.d, "reference_kappa": ref.kappa,
    }


def cmd_reproduce(which: str, sc: Scenario, out: str) -> tuple[int, dict]:
    os.makedirs(out, exist_ok=True)
    if which == "constants":
        c = reproduce_constants()
        write_csv(os.path.join(out, "constants.csv"), ["name", "value"],
                  [[k, float(v)] for k, v in c.items()])
        write_json(os.path.join(out, "constants.json"), c)
        ok = abs(c["G_star"] - 15.6886) <= 0.01 and c["one_sixteenth_holds"]
        return (EXIT_OK if ok else EXIT_FAIL), c
    if which == "ex1":
        cfg = example1_config(sc)
        seed = sc.get("simulation", "seed", 0)
        count = sc.get("simulation", "count", 20)
        fan = observer.run_example1_fan(cfg, count, seed)
        t = fan[0].trajectory.times
        k = min(len(r.trajectory.times) for r in fan)
        stride = max(1, int(round(1.0 / (cfg.dt * cfg.record_every))))
        idx = np.arange(0, k, stride)
        write_csv(os.path.join(out, "ex1_theta_hat.csv"), ["t"] + [f"run{i}" for i in range(count)],
                  np.column_stack([t[idx]] + [r.theta_hat[idx] for r in fan]).tolist())
        write_csv(os.path.join(out, "ex1_phase.csv"), ["t"] + [f"x_run{i}" for i in range(count)],
                  np.column_stack([t[idx]] + [r.trajectory.x[idx, 0] for r in fan]).tolist())
        runs = []
        for r in fan:
            diag = observer.example1_diagnostics(r, cfg)
            runs.append({**r.report, "min_gap": diag["min_gap"], "gaps_ok": diag["gaps_ok"],
                         "sandwich_passed": diag["sandwich"]["passed"]})
        good = [abs(r["x_final"]) < 1e-2 and abs(r["theta_hat_final"] - cfg.theta) < 0.05 for r in runs]
        summary = {"seed": seed, "count": count, "theta": cfg.theta, "gamma": cfg.gamma, "t_end": cfg.t_end,
                   "dt": cfg.dt, "all_converged": all(good), "fraction_converged": sum(good) / count,
                   "tau_star": observer.example1_diagnostics(fan[0], cfg)["tau_star"], "runs": runs}
        write_json(os.path.join(out, "ex1_summary.json"), summary)
        return (EXIT_OK if summary["all_converged"] else EXIT_FAIL), summary
    if which == "ex2":
        cfg = example2_config(sc)
        res = observer.run_example2(cfg)
        _write_ex2(out, res, cfg)
        rep = dict(res.report)
        rep["within_target"] = abs(rep["beta_hat"] - 0.5) < 0.1 and abs(rep["d_hat"] - 2.5) < 0.4 \
            and rep["residual_tail_mean"] < 1e-2
        write_json(os.path.join(out, "ex2_summary.json"), rep)
        return (EXIT_OK if rep["within_target"] else EXIT_FAIL), rep
    raise UsageError(f"unknown reproduction target {which!r} (ex1, ex2, constants)")


def cmd_sweep(sc: Scenario, out: str, param: Optional[str], values: Optional[tuple], verb: Optional[str]) -> tuple[int, dict]:
    param = param or sc.get("sweep", "param")
    values = values or sc.get("sweep", "values")
    verb = verb or sc.get("sweep", "verb", "simulate")
    if not param or not values:
        raise UsageError("sweep needs a parameter (section.key) and values")
    if "." not in param:
        raise UsageError(f"sweep parameter must be section.key, got {param!r}")
    section, key = param.split(".", 1)

    def member(i_v):
        i, v = i_v
        sub = Scenario({s: dict(kv) for s, kv in sc.values.items()}, dict(sc.lines), sc.source)
        sub.values.pop("sweep", None)
        sub.set(section, key, repr(v))
        sub.validate()
        d = os.path.join(out, f"member{i:03d}")
        code, rep = (cmd_check if verb == "check" else cmd_simulate)(sub, d)
        return code, rep

    with ThreadPoolExecutor() as pool:
        results = list(pool.map(member, enumerate(values)))
    rows = []
    for v, (code, rep) in zip(values, results):
        rows.append([v, rep.get("verdict", "pass" if rep.get("passed") else "fail"), code])
    os.makedirs(out, exist_ok=True)
    write_csv(os.path.join(out, "sweep.csv"), [param, "outcome", "exit"], rows)
    summary = {"param": param, "verb": verb, "members": [{"value": v, "outcome": r[1], "exit": r[2]} for v, r in zip(values, rows)]}
    write_json(os.path.join(out, "sweep.json"), summary)
    return (EXIT_OK if all(r[2] == EXIT_OK for r in rows) else EXIT_FAIL), summary


# -- entry point -------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI scenario file")
    common.add_argument("--out", default="nugain-out", help="output directory")
    common.add_argument("--seed", type=int, help="seed for initial-condition fans")
    common.add_argument("--dt", type=float, help="integration step")
    common.add_argument("--horizon", type=float, help="final simulation time")
    common.add_argument("--json", action="store_true", help="print the summary as JSON on stdout")
    common.add_argument("--fixture", choices=FIXTURES, help="override [scenario] fixture")
    common.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE", help="override one config value")

    p = argparse.ArgumentParser(prog="nugain", description="Non-uniform small-gain checks and identifier simulations.")
    sub = p.add_subparsers(dest="verb", required=True)
    sub.add_parser("check", parents=[common], help="evaluate trapping and small-gain conditions")
    sub.add_parser("simulate", parents=[common], help="simulate a fixture and classify the trajectory")
    r = sub.add_parser("reproduce", parents=[common], help="reproduce the worked examples and constants")
    r.add_argument("which", choices=("ex1", "ex2", "constants"))
    s = sub.add_parser("sweep", parents=[common], help="run check/simulate over a list of parameter values")
    s.add_argument("--param", help="section.key to vary")
    s.add_argument("--values", type=_vector, help="comma-separated values")
    s.add_argument("--verb", dest="sweep_verb", choices=("check", "simulate"))
    return p


def _print_summary(verb: str, code: int, report: dict, as_json: bool) -> None:
    if as_json:
        print(json.dumps(_clean({"verb": verb, "exit": code, **report}), indent=2, sort_keys=True))
        return
    status = {EXIT_OK: "PASS", EXIT_FAIL: "FAIL"}.get(code, "ERROR")
    print(f"{verb}: {status}")
    for key in ("verdict", "gamma_max", "G_star", "one_sixteenth_product", "beta_hat", "d_hat",
                "residual_tail_mean", "fraction_converged", "x0_max", "escape_time"):
        if key in report and report[key] is not None:
            print(f"  {key} = {report[key]}")
    for name, cond in report.get("conditions", {}).items():
        print(f"  {name}: {'pass' if cond['passed'] else 'fail'}")


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    try:
        sc = load_scenario(args.config)
        if args.verb == "reproduce" and sc.get("scenario", "fixture") is None:
            sc.values.setdefault("scenario", {})["fixture"] = {"ex1": "example1", "ex2": "example2"}.get(args.which, "gstar")
        apply_overrides(sc, args)
        if args.verb == "check":
            code, report = cmd_check(sc, args.out)
        elif args.verb == "simulate":
            code, report = cmd_simulate(sc, args.out)
        elif args.verb == "reproduce":
            code, report = cmd_reproduce(args.which, sc, args.out)
        else:
            code, report = cmd_sweep(sc, args.out, args.param, args.values, args.sweep_verb)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ConfigurationError, DomainError) as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NugainError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    _print_summary(args.verb, code, report, args.json)
    return code


if __name__ == "__main__":
    sys.exit(main())
