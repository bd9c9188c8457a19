"""Batch driver: configuration, verification suites, reports and export."""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

SCHEMA_VERSION = "gl2harmonic-report/1"

SUITES = (
    "opcalc-verify",
    "kernel-oracle",
    "parseval",
    "homomorphism",
    "kl-bispectral",
    "hardy-separation",
    "comp-series",
    "specfun-selftest",
)


class ConfigError(ValueError):
    pass


class ResourceBudgetError(RuntimeError):
    pass


# --------------------------------------------------------------------------
# configuration


def _floats(text: str) -> list:
    return [float(x) for x in text.split(",") if x.strip()]


def _ints(text: str) -> list:
    return [int(x) for x in text.split(",") if x.strip()]


def _names(text: str) -> list:
    return [x.strip() for x in text.split(",") if x.strip()]


def _points(text: str) -> list:
    """'m1re m1im e1 m2re m2im e2; ...' -> list of 6-tuples."""
    out = []
    for chunk in text.split(";"):
        vals = chunk.split()
        if not vals:
            continue
        if len(vals) != 6:
            raise ConfigError(f"parameter point needs 6 numbers, got {chunk!r}")
        m1r, m1i, e1, m2r, m2i, e2 = vals
        out.append((float(m1r), float(m1i), int(e1), float(m2r), float(m2i), int(e2)))
    return out


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "on", "yes"):
        return True
    if t in ("0", "false", "off", "no"):
        return False
    raise ConfigError(f"not a boolean: {text!r}")


def _fmt_value(v) -> str:
    if isinstance(v, bool):
        return "on" if v else "off"
    if isinstance(v, float):
        return format(v, ".17g")
    if isinstance(v, list):
        if v and isinstance(v[0], tuple):
            return "; ".join(" ".join(_fmt_value(x) for x in p) for p in v)
        return ",".join(_fmt_value(x) for x in v)
    return str(v)


@dataclass(frozen=True)
class Option:
    parse: object
    default: str
    check: object = None
    help: str = ""


def _range(lo, hi):
    def check(v):
        vals = v if isinstance(v, list) else [v]
        for x in vals:
            if not lo <= x <= hi:
                raise ConfigError(f"value {x} outside [{lo}, {hi}]")
    return check


COMMON = {
    "workers": Option(int, "1", _range(1, 64), "worker processes for independent cases"),
    "cache": Option(_bool, "off", None, "kernel cache for suites that evaluate kernels"),
    "cache_dir": Option(str, ".gl2harmonic-cache", None, "kernel cache directory"),
    "max_evaluations": Option(float, "2e11", _range(1.0, 1e15), "cap on the estimated integrand evaluations"),
}

SUITE_OPTIONS = {
    "opcalc-verify": {
        "opcalc.functions": Option(_names, "bump,poly1,poly2", None, "standard family members"),
        "opcalc.pairs": Option(_names, "e12,e43,e14,e32,mult_c,mult_det_inv,d_db", None, "correspondence pairs"),
        "opcalc.points": Option(_points, "0.3 0 0 -0.2 0 1; 0 0.5 1 0 -0.4 1; 0.1 0.2 0 -0.4 0 0", None,
                                "parameter points mu1 (re im) eps1 mu2 (re im) eps2"),
        "opcalc.n_grid": Option(int, "24", _range(4, 96), "t and s Gauss-Legendre nodes"),
        "opcalc.quad_n": Option(int, "20", _range(6, 60), "fiber nodes per variable (doubled for refinement)"),
        "opcalc.order": Option(str, "source", lambda v: _choice(v, ("source", "target")), "coefficient order"),
    },
    "kernel-oracle": {
        "kernel.functions": Option(_names, "bump,poly1,poly2", None, "standard family members"),
        "kernel.points": Option(_points, "0.3 0 0 -0.2 0 1; 0 0.5 1 0 -0.4 1", None, "parameter points"),
        "kernel.quad_n": Option(int, "40", _range(6, 80), "fiber nodes of kernel_transform"),
        "kernel.oracle_n": Option(int, "96", _range(16, 200), "nodes per variable of the (a, b, c) oracle"),
        "kernel.direct_counts": Option(int, "52", _range(8, 64), "4D tensor nodes per variable of the direct operator oracle"),
        "kernel.apply_ns": Option(int, "80", _range(8, 200), "s nodes when integrating the kernel against phi"),
        "kernel.cr_grid": Option(int, "8", _range(2, 32), "t and s nodes for the holomorphy check"),
        "kernel.cr_step": Option(float, "1e-4", _range(1e-7, 1e-2), "finite-difference step in mu"),
    },
    "parseval": {
        "parseval.tau_max": Option(float, "24", _range(4.0, 60.0), "tau truncation"),
        "parseval.n_tau": Option(int, "192", _range(16, 512), "tau Gauss-Legendre nodes per axis"),
        "parseval.ds_ns": Option(_ints, "1,2,3", _range(1, 12), "discrete series indices"),
        "parseval.ds_N": Option(int, "12", _range(2, 32), "disk-basis truncation per sheet"),
        "parseval.ds_tau_max": Option(float, "8", _range(1.0, 40.0), "tau truncation of the discrete part"),
        "parseval.ds_n_tau": Option(int, "16", _range(2, 128), "tau nodes of the discrete part"),
    },
    "homomorphism": {
        "hom.pairs": Option(_ints, "0,1", _range(0, 1), "indices into the convolution pairs"),
        "hom.points": Option(_points, "0 0.2 0 0 -0.3 1; 0 0.5 1 0 0.1 0", None, "one parameter point per pair"),
        "hom.n_grid": Option(int, "4", _range(2, 16), "coarse t and s grid"),
        "hom.n_u": Option(int, "32", _range(8, 96), "inner composition nodes per row"),
        "hom.fiber_n": Option(int, "24", _range(8, 48), "fiber nodes for the convolution kernel"),
        "hom.conv_n": Option(int, "8", _range(4, 16), "bump-weighted nodes per variable of the convolution"),
    },
    "kl-bispectral": {
        "kl.taus": Option(_floats, "0.5,1,2", _range(0.01, 25.0), "orders tau"),
        "kl.x_lo": Option(float, "0.2", _range(1e-3, 40.0), "x range start"),
        "kl.x_hi": Option(float, "5", _range(1e-3, 40.0), "x range end"),
        "kl.x_n": Option(int, "25", _range(2, 1000), "x points"),
        "kl.n_x": Option(int, "320", _range(32, 2000), "x quadrature nodes (log scale)"),
        "kl.n_s": Option(int, "160", _range(16, 1000), "s quadrature nodes"),
    },
    "hardy-separation": {
        "hardy.n": Option(int, "512", _range(64, 4096), "grid points per axis"),
        "hardy.half_width": Option(float, "40", _range(5.0, 400.0), "window half width L of [-L, L)"),
        "hardy.n_elements": Option(int, "10", _range(1, 100), "SL(2, R) sample size"),
        "hardy.scale": Option(float, "0.05", _range(1e-4, 0.5), "entry bound of the Lie algebra sample"),
    },
    "comp-series": {
        "comp.s_q2": Option(_floats, "0.1,0.2,0.25,0.3,0.4", _range(1e-3, 0.499), "s grid for q = 2"),
        "comp.s_q3": Option(_floats, "0.2,0.35,0.5,0.65,0.8", _range(1e-3, 0.999), "s grid for q = 3"),
        "comp.n_q2": Option(int, "256", _range(16, 4096), "angles on S^1"),
        "comp.n_q3": Option(int, "56", _range(8, 128), "cos(theta) nodes on S^2 (2n azimuths)"),
        "comp.convention": Option(str, "squared", lambda v: _choice(v, ("squared", "literal", "displayed")),
                                  "kernel exponent convention for the Gram form"),
        "comp.equator_levels": Option(_ints, "64,128,256,512,1024", _range(8, 1 << 16), "equator refinement levels"),
    },
    "specfun-selftest": {},
}


def _choice(v, allowed):
    if v not in allowed:
        raise ConfigError(f"{v!r} not in {allowed}")


@dataclass
class RunConfig:
    suite: str
    values: dict
    out: str | None = None

    @classmethod
    def build(cls, suite: str, overrides: dict | None = None, out: str | None = None) -> "RunConfig":
        if suite not in SUITES:
            raise ConfigError(f"unknown suite {suite!r}; choose from {', '.join(SUITES)}")
        opts = {**COMMON, **SUITE_OPTIONS[suite]}
        raw = {k: o.default for k, o in opts.items()}
        for k, v in (overrides or {}).items():
            if k == "suite":
                continue
            if k not in opts:
                raise ConfigError(f"unknown key {k!r} for suite {suite}")
            raw[k] = v
        values = {}
        for k, o in opts.items():
            try:
                v = o.parse(raw[k])
            except ConfigError:
                raise
            except Exception as exc:
                raise ConfigError(f"bad value for {k}: {raw[k]!r} ({exc})") from None
            if o.check is not None:
                try:
                    o.check(v)
                except ConfigError as exc:
                    raise ConfigError(f"{k}: {exc}") from None
            values[k] = v
        return cls(suite, values, out)

    def __getitem__(self, key):
        return self.values[key]

    def effective(self) -> dict:
        return {"suite": self.suite, **{k: _fmt_value(v) for k, v in self.values.items()}}

    def to_text(self) -> str:
        lines = [f"suite = {self.suite}"]
        opts = {**COMMON, **SUITE_OPTIONS[self.suite]}
        for k, v in self.values.items():
            lines.append(f"# {opts[k].help}")
            lines.append(f"{k} = {_fmt_value(v)}")
        return "\n".join(lines) + "\n"


def parse_config_text(text: str) -> dict:
    """Flat 'key = value' lines; '#' starts a comment."""
    out = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}: expected key = value")
        k, v = line.split("=", 1)
        k, v = k.strip(), v.strip()
        if k in out:
            raise ConfigError(f"line {n}: duplicate key {k!r}")
        out[k] = v
    return out


def load_config(path: str | None, suite: str | None = None, overrides: dict | None = None,
                out: str | None = None) -> RunConfig:
    raw = {}
    if path:
        with open(path) as fh:
            raw = parse_config_text(fh.read())
    chosen = suite or raw.get("suite")
    if chosen is None:
        raise ConfigError("no suite selected (use --suite or a 'suite =' line)")
    if suite and raw.get("suite") and raw["suite"] != suite:
        raise ConfigError(f"config file selects suite {raw['suite']!r} but {suite!r} was requested")
    raw.update(overrides or {})
    return RunConfig.build(chosen, raw, out)


# --------------------------------------------------------------------------
# reports


@dataclass
class Case:
    name: str
    inputs: dict
    metrics: dict
    tolerances: dict
    passed: bool

    def as_dict(self) -> dict:
        return {"name": self.name, "inputs": self.inputs, "metrics": self.metrics,
                "tolerances": self.tolerances, "passed": bool(self.passed)}


@dataclass
class Constant:
    name: str
    measured: float
    baseline: float
    note: str = ""

    def as_dict(self) -> dict:
        return {"name": self.name, "measured": self.measured, "baseline": self.baseline, "note": self.note}


@dataclass
class Report:
    suite: str
    config: dict
    cases: list = field(default_factory=list)
    constants: list = field(default_factory=list)
    refinement: list = field(default_factory=list)
    wall_clock: float = 0.0
    evaluations: float = 0.0
    schema: str = SCHEMA_VERSION

    @property
    def passed(self) -> bool:
        return bool(self.cases) and all(c.passed for c in self.cases)

    def as_dict(self) -> dict:
        return {
            "schema": self.schema,
            "suite": self.suite,
            "passed": self.passed,
            "config": self.config,
            "cases": [c.as_dict() for c in self.cases],
            "constants": [c.as_dict() for c in self.constants],
            "refinement": self.refinement,
            "wall_clock": self.wall_clock,
            "evaluations": self.evaluations,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Report":
        if d.get("schema") != SCHEMA_VERSION:
            raise ValueError(f"unsupported report schema {d.get('schema')!r}")
        return cls(
            suite=d["suite"], config=d["config"],
            cases=[Case(c["name"], c["inputs"], c["metrics"], c["tolerances"], c["passed"]) for c in d["cases"]],
            constants=[Constant(c["name"], c["measured"], c["baseline"], c["note"]) for c in d["constants"]],
            refinement=d["refinement"], wall_clock=d["wall_clock"], evaluations=d["evaluations"], schema=d["schema"])

    def summary(self) -> str:
        failed = [c.name for c in self.cases if not c.passed]
        lines = [f"suite {self.suite}: {len(self.cases) - len(failed)}/{len(self.cases)} cases pass "
                 f"({self.wall_clock:.1f} s)"]
        for c in self.constants:
            lines.append(f"  constant {c.name}: measured {_num(c.measured)} vs baseline {_num(c.baseline)}"
                         + (f"  [{c.note}]" if c.note else ""))
        for r in self.refinement:
            lines.append(f"  refinement {r['case']}: {_num(r['coarse'])} -> {_num(r['fine'])} (ratio {_num(r['ratio'])})")
        for name in failed[:20]:
            lines.append(f"  FAIL {name}")
        if len(failed) > 20:
            lines.append(f"  ... {len(failed) - 20} more failures")
        return "\n".join(lines)


def _num(x) -> str:
    return f"{x:.4g}" if isinstance(x, (int, float)) else str(x)


# --------------------------------------------------------------------------
# serialization


def _plain(x):
    """Canonical JSON-ready value: complex as [re, im], numpy scalars unwrapped."""
    if isinstance(x, dict):
        return {str(k): _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    if isinstance(x, np.ndarray):
        return _plain(x.tolist())
    if isinstance(x, (bool, np.bool_)):
        return bool(x)
    if isinstance(x, (int, np.integer)):
        return int(x)
    if isinstance(x, (complex, np.complexfloating)):
        return [float(x.real), float(x.imag)]
    if isinstance(x, (float, np.floating)):
        return float(x)
    if x is None or isinstance(x, str):
        return x
    return str(x)


def _float_token(v: float) -> str:
    if math.isnan(v):
        return '"nan"'
    if math.isinf(v):
        return '"inf"' if v > 0 else '"-inf"'
    return format(v, ".17g")


def _encode(x, indent: int = 0) -> str:
    pad, inner = "  " * indent, "  " * (indent + 1)
    if isinstance(x, dict):
        if not x:
            return "{}"
        items = [f"{inner}{json.dumps(k)}: {_encode(x[k], indent + 1)}" for k in sorted(x)]
        return "{\n" + ",\n".join(items) + "\n" + pad + "}"
    if isinstance(x, list):
        if not x:
            return "[]"
        if all(not isinstance(v, (dict, list)) for v in x):
            return "[" + ", ".join(_encode(v) for v in x) + "]"
        return "[\n" + ",\n".join(inner + _encode(v, indent + 1) for v in x) + "\n" + pad + "]"
    if isinstance(x, bool):
        return "true" if x else "false"
    if isinstance(x, int):
        return str(x)
    if isinstance(x, float):
        return _float_token(x)
    return json.dumps(x)


def report_json(report: Report) -> str:
    """Deterministic JSON: sorted keys, 17 significant digits, non-finite floats as strings."""
    return _encode(_plain(report.as_dict())) + "\n"


def _restore(x):
    if isinstance(x, dict):
        return {k: _restore(v) for k, v in x.items()}
    if isinstance(x, list):
        return [_restore(v) for v in x]
    if x in ("nan", "inf", "-inf"):
        return float(x)
    return x


def read_report(path: str) -> Report:
    with open(path) as fh:
        return Report.from_dict(_restore(json.load(fh)))


def _flatten(prefix: str, x, out: dict):
    if isinstance(x, dict):
        for k in sorted(x):
            _flatten(f"{prefix}.{k}" if prefix else str(k), x[k], out)
    elif isinstance(x, list):
        out[prefix] = " ".join(_csv_cell(v) for v in x)
    else:
        out[prefix] = x


def _csv_cell(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return _float_token(v).strip('"')
    if isinstance(v, list):
        return " ".join(_csv_cell(y) for y in v)
    return "" if v is None else str(v)


def report_csv_tables(report: Report) -> dict:
    """{table name: CSV text}: one row per case, one per constant, one per refinement study."""
    plain = _plain(report.as_dict())
    rows = []
    for c in plain["cases"]:
        flat = {"name": c["name"], "passed": c["passed"]}
        for part in ("inputs", "metrics", "tolerances"):
            _flatten(part, c[part], flat)
        rows.append(flat)
    tables = {"cases": _table(rows, ["name", "passed"])}
    tables["constants"] = _table(plain["constants"], ["name", "measured", "baseline", "note"])
    tables["refinement"] = _table(plain["refinement"], ["case", "coarse", "fine", "ratio"])
    return tables


def _table(rows: list, lead: list) -> str:
    cols = list(lead) + sorted({k for r in rows for k in r} - set(lead))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for r in rows:
        w.writerow([_csv_cell(r.get(c)) for c in cols])
    return buf.getvalue()


def export(report: Report, fmt: str, out_dir: str) -> list:
    """Write the report as JSON or CSV tables into out_dir; returns the written paths."""
    os.makedirs(out_dir, exist_ok=True)
    if fmt == "json":
        files = {f"{report.suite}.json": report_json(report)}
    elif fmt == "csv":
        files = {f"{report.suite}_{name}.csv": text for name, text in report_csv_tables(report).items()}
    else:
        raise ValueError(f"unknown export format {fmt!r}")
    paths = []
    for name, text in files.items():
        path = os.path.join(out_dir, name)
        with open(path, "w", newline="") as fh:
            fh.write(text)
        paths.append(path)
    return paths


# --------------------------------------------------------------------------
# suites


def _point(t):
    from .fourier import PrincipalSeriesPoint

    m1r, m1i, e1, m2r, m2i, e2 = t
    return PrincipalSeriesPoint(complex(m1r, m1i), e1, complex(m2r, m2i), e2)


def _standard(name: str):
    from .gl2 import standard_family

    fam = {F.descriptor.get("family", F.key): F for F in standard_family()}
    if name not in fam:
        raise ConfigError(f"unknown test function {name!r}; choose from {sorted(fam)}")
    return fam[name]


def _pmap(fn, items, workers: int) -> list:
    """Ordered map; results merge in input order whatever the worker count."""
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=min(workers, len(items))) as ex:
        return list(ex.map(fn, items))


def _budget(cfg: RunConfig, estimate: float) -> float:
    if estimate > cfg["max_evaluations"]:
        raise ResourceBudgetError(f"estimated {estimate:.3g} integrand evaluations exceed the cap "
                                  f"max_evaluations = {cfg['max_evaluations']:.3g}")
    return estimate


def _opcalc_case(args):
    from .opcalc import verify_correspondences
    from .numerics import gauss_legendre, QuadSpec

    name, pairs, points, n_grid, quad_n, order = args
    F = _standard(name)
    g = gauss_legendre(n_grid, -1.0, 1.0)
    quad = QuadSpec((quad_n,) * 4, F.box, refine=2.0)
    recs = verify_correspondences(pairs, F, [_point(p) for p in points], g, g, quad, orders=(order,), fname=name)
    return [r.as_dict() | {"passed": r.passes()} for r in recs]


def suite_opcalc(cfg: RunConfig) -> Report:
    fns, pairs, pts = cfg["opcalc.functions"], cfg["opcalc.pairs"], cfg["opcalc.points"]
    n, q = cfg["opcalc.n_grid"], cfg["opcalc.quad_n"]
    for p in pts:
        if abs(complex(p[0], p[1]) - complex(p[3], p[4])) < 0.3:
            raise ConfigError(f"point {p} has |mu1 - mu2| < 0.3")
    from .opcalc import builtin_ops

    unknown = set(pairs) - set(builtin_ops())
    if unknown:
        raise ConfigError(f"unknown correspondence pairs {sorted(unknown)}")
    for f in fns:
        _standard(f)
    evals = _budget(cfg, len(fns) * n * n * q**3 * (1 + 8) * (1 + len(pairs)))
    results = _pmap(_opcalc_case, [(f, pairs, pts, n, q, cfg["opcalc.order"]) for f in fns], cfg["workers"])
    rep = Report("opcalc-verify", cfg.effective(), evaluations=evals)
    for recs in results:
        for r in recs:
            rep.cases.append(Case(
                f"{r['pair']}/{r['function']}/{_fmt_value(r['point'])}",
                {"pair": r["pair"], "function": r["function"], "point": r["point"], "order": r["order"], "grids": r["grids"]},
                {"residual": r["residual"], "residual_refined": r["residual_refined"],
                 "refinement_ratio": r["refinement_ratio"], "max_abs_diff": r["max_abs_diff"],
                 "converged_floor": r["converged_floor"]},
                {"residual": 1e-4, "refinement_ratio_min": 4.0, "floor": 1e-12}, r["passed"]))
            rep.refinement.append({"case": rep.cases[-1].name, "coarse": r["residual"], "fine": r["residual_refined"],
                                   "ratio": r["refinement_ratio"]})
    return rep


def _oracle_phi(s):
    return np.exp(-s**2) * (1 + 0.3 * s)


def suite_kernel_oracle(cfg: RunConfig) -> Report:
    from .fourier import (KernelCache, direct_operator_apply, holomorphy_residual, kernel_apply_exact, kernel_oracle,
                          kernel_transform, s_support)
    from .numerics import Grid1D, QuadSpec, gauss_legendre

    fns, pts = cfg["kernel.functions"], [_point(p) for p in cfg["kernel.points"]]
    qn, on, crn, h = cfg["kernel.quad_n"], cfg["kernel.oracle_n"], cfg["kernel.cr_grid"], cfg["kernel.cr_step"]
    dn, ans = cfg["kernel.direct_counts"], cfg["kernel.apply_ns"]
    evals = _budget(cfg, len(fns) * len(pts) * (5 * (qn**3 + on**3 + dn**4 + ans * qn**3) + 4 * crn * crn * 20**3))
    cache = KernelCache(cfg["cache_dir"]) if cfg["cache"] else None
    rep = Report("kernel-oracle", cfg.effective(), evaluations=evals)
    # (t, fraction of the s-support); interior points keep |K| away from the support edge
    samples = [(0.55, 0.4), (-0.7, 0.55), (0.3, 0.65), (-0.25, 0.35), (0.85, 0.5)]
    for name in fns:
        F = _standard(name)
        for p in pts:
            ks, os_ = [], []
            for t, frac in samples:
                lo, hi = s_support(F.box, t)
                s = lo + (hi - lo) * frac
                tg = Grid1D(np.array([t, t + 1e-3]), np.ones(2))
                sg = Grid1D(np.array([s, s + 1e-3]), np.ones(2))
                quad = QuadSpec((qn,) * 4, F.box)
                km = None
                if cache is not None:
                    key = KernelCache.key(F, p, tg, sg, quad)
                    km = cache.get(key)
                if km is None:
                    km = kernel_transform(F, p, tg, sg, quad)
                    if cache is not None:
                        cache.put(key, km)
                ks.append(km.values[0, 0])
                os_.append(kernel_oracle(F, p, t, s, on))
            ks, os_ = np.array(ks), np.array(os_)
            err = float(np.max(np.abs(ks - os_)) / np.max(np.abs(os_)))
            ts = np.array([t for t, _ in samples])
            direct = direct_operator_apply(F, p, _oracle_phi, ts, counts=dn)
            applied = kernel_apply_exact(F, p, _oracle_phi, ts, n_s=ans, quad_n=qn)
            op_err = float(np.max(np.abs(applied - direct)) / np.max(np.abs(direct)))
            g = gauss_legendre(crn, -1.0, 1.0)
            cr = holomorphy_residual(F, p, g, g, h)
            ok = err < 1e-6 and op_err < 1e-6 and max(cr.values()) < 1e-7
            rep.cases.append(Case(f"{name}/{_fmt_value(p.as_list())}",
                                  {"function": name, "point": p.as_list(), "samples": [list(x) for x in samples]},
                                  {"pointwise_rel_err": err, "operator_rel_err": op_err, "cr_mu1": cr["mu1"],
                                   "cr_mu2": cr["mu2"]},
                                  {"pointwise_rel_err": 1e-6, "operator_rel_err": 1e-6, "cr": 1e-7}, ok))
    if cache is not None:
        rep.constants.append(Constant("cache_hits", float(cache.hits), 0.0, f"misses {cache.misses}"))
    # fiber refinement on the first case
    F, p = _standard(fns[0]), pts[0]
    t, frac = samples[0]
    lo, hi = s_support(F.box, t)
    s = lo + (hi - lo) * frac
    tg, sg = Grid1D(np.array([t, t + 1e-3]), np.ones(2)), Grid1D(np.array([s, s + 1e-3]), np.ones(2))
    ref = kernel_oracle(F, p, t, s, on)
    e0 = abs(kernel_transform(F, p, tg, sg, QuadSpec((qn // 2,) * 4, F.box)).values[0, 0] - ref) / abs(ref)
    e1 = abs(kernel_transform(F, p, tg, sg, QuadSpec((qn,) * 4, F.box)).values[0, 0] - ref) / abs(ref)
    rep.refinement.append({"case": f"{fns[0]}/fiber {qn // 2}->{qn}", "coarse": e0, "fine": e1,
                           "ratio": e0 / e1 if e1 > 0 else math.inf})
    return rep


def _parseval_case(args):
    from .fourier import discrete_contribution, parseval_principal
    from .gl2 import invariant_family, reduced_rule

    idx, tau_max, n_tau, ns, N, ds_tau_max, ds_n_tau = args
    F = invariant_family()[idx]
    r = parseval_principal(F, F, tau_max=tau_max, n_tau=n_tau, rule=reduced_rule(F))
    dc = discrete_contribution(F, ns=tuple(ns), N=N, tau_max=ds_tau_max, n_tau=ds_n_tau)
    return F.key, r.as_dict(), dc


def suite_parseval(cfg: RunConfig) -> Report:
    from .fourier import parseval_principal
    from .gl2 import invariant_family, reduced_rule

    nf = len(invariant_family())
    tm, nt = cfg["parseval.tau_max"], cfg["parseval.n_tau"]
    evals = _budget(cfg, nf * (96 * 96 * 256 * (1 + nt) + len(cfg["parseval.ds_ns"]) * cfg["parseval.ds_n_tau"] * 48**2 * 144))
    args = [(i, tm, nt, cfg["parseval.ds_ns"], cfg["parseval.ds_N"], cfg["parseval.ds_tau_max"], cfg["parseval.ds_n_tau"])
            for i in range(nf)]
    results = _pmap(_parseval_case, args, cfg["workers"])
    rep = Report("parseval", cfg.effective(), evaluations=evals)
    ratios = []
    for key, r, dc in results:
        total = abs(complex(*r["principal_total"]))
        ds_rel = abs(dc["total"]) / total
        ratios.append(r["ratio"])
        rep.cases.append(Case(f"discrete_vanishes/{key}", {"function": key, "N": dc["N"]},
                              {"discrete_total": dc["total"], "principal_total": total, "discrete_relative": ds_rel,
                               "max_trace": dc["max_trace"]},
                              {"discrete_relative": 1e-6}, ds_rel < 1e-6))
        rep.cases.append(Case(f"tau_tail/{key}", {"function": key, "tau_max": tm},
                              {"tail_relative": r["tail"]["relative"], "ratio": r["ratio"]},
                              {"tail_relative": 1e-2}, not r["tail"]["flag"]))
    ratios = np.array(ratios)
    mean = float(np.mean(ratios))
    spread = float(np.max(np.abs(ratios / mean - 1)))
    rep.cases.append(Case("ratio_constant", {"functions": nf}, {"mean_ratio": mean, "spread": spread},
                          {"spread": 1e-3}, spread < 1e-3))
    dev = float(np.max(np.abs(ratios - 1)))
    rep.cases.append(Case("ratio_equals_one", {"functions": nf}, {"max_abs_ratio_minus_one": dev, "mean_ratio": mean},
                          {"max_abs_ratio_minus_one": 1e-2}, dev < 1e-2))
    rep.constants.append(Constant("parseval_ratio", mean, 1.0, "group L2 norm / integral of HS norms under dP"))
    F = invariant_family()[0]
    coarse = parseval_principal(F, F, tau_max=tm, n_tau=nt // 2, rule=reduced_rule(F)).ratio
    fine = ratios[0]
    rep.refinement.append({"case": f"ratio n_tau {nt // 2}->{nt}", "coarse": float(coarse), "fine": float(fine),
                           "ratio": abs(coarse - mean) / abs(fine - mean) if fine != mean else math.inf})
    return rep


def suite_homomorphism(cfg: RunConfig) -> Report:
    from .fourier import homomorphism_check
    from .gl2 import convolution_pairs

    pairs, pts = cfg["hom.pairs"], cfg["hom.points"]
    if len(pts) != len(pairs):
        raise ConfigError("hom.points needs one parameter point per pair")
    n, fn, cn = cfg["hom.n_grid"], cfg["hom.fiber_n"], cfg["hom.conv_n"]
    evals = _budget(cfg, len(pairs) * n * n * fn**3 * cn**4 * 2)
    cps = convolution_pairs()
    rep = Report("homomorphism", cfg.effective(), evaluations=evals)
    for idx, pt in zip(pairs, pts):
        F1, F2 = cps[idx]
        r = homomorphism_check(F1, F2, _point(pt), n_t=n, n_s=n, n_u=cfg["hom.n_u"], fiber_n=fn, conv_n=cn)
        rep.cases.append(Case(f"pair{idx}", {"pair": idx, "point": _point(pt).as_list(), "functions": [F1.key, F2.key]},
                              {"rel_hs": r.rel_hs, "direct_hs": r.as_dict()["direct_hs"]}, {"rel_hs": 1e-3},
                              r.rel_hs < 1e-3))
    F1, F2 = cps[pairs[0]]
    c0 = homomorphism_check(F1, F2, _point(pts[0]), n_t=n, n_s=n, n_u=cfg["hom.n_u"] // 2, fiber_n=fn, conv_n=cn).rel_hs
    rep.refinement.append({"case": f"pair{pairs[0]} n_u {cfg['hom.n_u'] // 2}->{cfg['hom.n_u']}",
                           "coarse": c0, "fine": rep.cases[0].metrics["rel_hs"],
                           "ratio": c0 / rep.cases[0].metrics["rel_hs"]})
    return rep


def suite_kl(cfg: RunConfig) -> Report:
    from .kltransform import CLASSICAL_CALIBRATION, NOMINAL_SIGNS, bispectral_report, calibrate, half_line_family, \
        half_line_grid, s_grid

    xs = np.linspace(cfg["kl.x_lo"], cfg["kl.x_hi"], cfg["kl.x_n"])
    nx, ns = cfg["kl.n_x"], cfg["kl.n_s"]
    evals = _budget(cfg, len(half_line_family()) * nx * ns * 3 * 200)
    rep = Report("kl-bispectral", cfg.effective(), evaluations=evals)
    b = bispectral_report(tuple(cfg["kl.taus"]), xs)
    for r in b.rows:
        ok = r["d_residual"] < 1e-8 and r["m_residual"] < 1e-8 and r["d_sign"] in (0, b.d_sign) and r["m_sign"] in (0, b.m_sign)
        rep.cases.append(Case(f"bispectral/tau={r['tau']:.6g}/x={r['x']:.6g}", {"x": r["x"], "tau": r["tau"]},
                              {"K": r["K"], "d_residual": r["d_residual"], "m_residual": r["m_residual"],
                               "d_sign": r["d_sign"], "m_sign": r["m_sign"]},
                              {"d_residual": 1e-8, "m_residual": 1e-8}, ok))
    rep.cases.append(Case("sign_D_global", {}, {"sign": b.d_sign, "consistent": b.d_consistent}, {}, b.d_consistent))
    rep.cases.append(Case("sign_M_global", {}, {"sign": b.m_sign, "consistent": b.m_consistent}, {}, b.m_consistent))
    rep.constants.append(Constant("D_sign", float(b.d_sign), float(NOMINAL_SIGNS["D"]), "D K = sign * tau^2 K"))
    rep.constants.append(Constant("M_sign", float(b.m_sign), float(NOMINAL_SIGNS["M"]), "M K = sign * (2/x) K"))
    xg, sg = half_line_grid(nx), s_grid(ns)
    cal = calibrate(None, sg, xg)
    for name, c in cal.per_function.items():
        rt = cal.round_trip[name]
        dev = abs(c / cal.constant - 1)
        rep.cases.append(Case(f"round_trip/{name}", {"function": name},
                              {"round_trip": rt, "constant": c, "constant_deviation": dev, "s_high": cal.tails[name]["s_high"]},
                              {"round_trip": 1e-4, "constant_deviation": 1e-3}, rt < 1e-4 and dev < 1e-3))
    rep.cases.append(Case("parseval_consistency", {}, {"parseval_consistency": cal.parseval_consistency},
                          {"parseval_consistency": 1e-3}, cal.parseval_consistency < 1e-3))
    rep.constants.append(Constant("calibration", cal.constant, CLASSICAL_CALIBRATION,
                                  "round-trip constant against the classical 2/pi"))
    worst = max(cal.round_trip, key=cal.round_trip.get)
    f = [g for g in half_line_family() if g.name == worst]
    coarse = calibrate(f, s_grid(ns // 2), xg)
    c0 = coarse.round_trip[worst]
    rep.refinement.append({"case": f"round_trip/{worst} n_s {ns // 2}->{ns}", "coarse": c0,
                           "fine": cal.round_trip[worst], "ratio": c0 / cal.round_trip[worst]})
    return rep


def suite_hardy(cfg: RunConfig) -> Report:
    from .separation import hardy_block_report, sl2_near_identity

    n, L = cfg["hardy.n"], cfg["hardy.half_width"]
    els = sl2_near_identity(cfg["hardy.n_elements"], cfg["hardy.scale"])
    evals = _budget(cfg, 4 * (len(els) + 16) * 4 * 2 * n**3)
    rep = Report("hardy-separation", cfg.effective(), evaluations=evals)
    b = hardy_block_report(n, L, els)
    for key in ("completeness", "orthogonality", "idempotence", "j_isometry"):
        v = getattr(b, key)
        rep.cases.append(Case(key, {"n": n, "half_width": L}, {key: v}, {key: 1e-10}, v < 1e-10))
    for r in b.records:
        rep.cases.append(Case(f"commutator/f{r['function']}/g{r['element']}/{r['block']}",
                              {"function": r["function"], "element": r["element"], "block": r["block"],
                               "matrix": [float(e) for e in els[r["element"]].matrix().ravel()]},
                              {"commutator": r["commutator"]}, {"commutator": 1e-4}, r["commutator"] < 1e-4))
    # halving n under-resolves the test packets, so the study refines upward
    coarse = max(r["commutator"] for r in b.records if r["element"] < 2)
    fine = hardy_block_report(2 * n, L, els[:2]).commutator
    rep.refinement.append({"case": f"commutator n {n}->{2 * n}", "coarse": coarse, "fine": fine,
                           "ratio": coarse / fine if fine > 0 else math.inf})
    return rep


def _gram_case(args):
    from .separation import gram_report, intertwining_report

    q, s, conv, n = args
    return gram_report(q, s, conv, n).as_dict(), intertwining_report(q, s).as_dict()


def suite_comp(cfg: RunConfig) -> Report:
    from .separation import CONVENTIONS, ComplementaryParams, equator_delta_gram, equator_threshold

    conv = cfg["comp.convention"]
    n2, n3 = cfg["comp.n_q2"], cfg["comp.n_q3"]
    evals = _budget(cfg, 11 * (len(cfg["comp.s_q2"]) * n2**2 + len(cfg["comp.s_q3"]) * 4 * n3**4))
    rep = Report("comp-series", cfg.effective(), evaluations=evals)
    jobs = [(2, s, conv, n2) for s in cfg["comp.s_q2"]] + [(3, s, conv, n3) for s in cfg["comp.s_q3"]]
    for (q, s, _, n), (g, it) in zip(jobs, _pmap(_gram_case, jobs, cfg["workers"])):
        rep.cases.append(Case(f"gram_positive/q={q}/s={s:.6g}", {"q": q, "s": s, "convention": conv, "n": n},
                              {"min_eigenvalue": g["min_eigenvalue"], "hermitian_defect": g["hermitian_defect"]},
                              {"min_eigenvalue_gt": 0.0}, g["min_eigenvalue"] > 0))
        rep.cases.append(Case(f"gram_invariant/q={q}/s={s:.6g}", {"q": q, "s": s, "convention": conv, "n": n,
                                                                   "action_lambda": g["invariant_lambda"]},
                              {"invariance": g["invariance"], "defect_under_T_s": g["displayed_action_defect"],
                               "kappa": g["kappa"], "refinement_order": g["refinement_order"]},
                              {"invariance": 1e-5}, g["invariance"] < 1e-5))
        rep.cases.append(Case(f"intertwining/q={q}/s={s:.6g}", {"q": q, "s": s},
                              {"residual": it["residual"], "residual_vs_lambda0": it["residual_vs_lambda0"]},
                              {"residual": 1e-5}, it["residual"] < 1e-5))
        if (q, s) == jobs[0][:2]:
            rep.refinement.append({"case": f"gram q={q} s={s:.6g} order", "coarse": g["refinement_order"],
                                   "fine": g["refinement_order"], "ratio": 2.0 ** g["refinement_order"]})
    levels = tuple(cfg["comp.equator_levels"])
    for c in CONVENTIONS:
        th = equator_threshold(3, c, 0, levels=levels)
        measured = th.measured_threshold
        rep.constants.append(Constant(f"equator_threshold/{c}", math.nan if measured is None else measured,
                                      th.stated_threshold,
                                      "no transition in the scanned range" if measured is None else "zero of the refinement order"))
        if c != conv:
            continue
        for s, o, v in zip(th.s_values, th.orders, th.verdicts):
            expect = "converged" if measured is None or s > measured else "diverged"
            rep.cases.append(Case(f"equator/q=3/s={s:.6g}", {"q": 3, "s": s, "convention": c, "levels": list(levels)},
                                  {"order": o, "verdict": v, "measured_threshold": measured},
                                  {"consistent_with_threshold": True}, v == expect))
        r = equator_delta_gram(ComplementaryParams(3, s=th.s_values[-1], convention=c), levels=levels)
        rep.refinement.append({"case": f"equator q=3 s={th.s_values[-1]:.6g}",
                               "coarse": abs(r.values[-2] - r.values[-3]), "fine": abs(r.values[-1] - r.values[-2]),
                               "ratio": abs(r.values[-2] - r.values[-3]) / abs(r.values[-1] - r.values[-2])})
    d1 = equator_threshold(3, conv, 1, s_values=[0.3, 0.6, 0.9], levels=levels)
    for s, o, v in zip(d1.s_values, d1.orders, d1.verdicts):
        rep.cases.append(Case(f"equator_normal_derivative/q=3/s={s:.6g}", {"q": 3, "s": s, "deriv_order": 1},
                              {"order": o, "verdict": v}, {"reported": True}, v in ("converged", "diverged")))
    rep.constants.append(Constant("equator_normal_derivative_threshold",
                                  math.nan if d1.measured_threshold is None else d1.measured_threshold,
                                  d1.stated_threshold, "all scanned s diverge" if all(v == "diverged" for v in d1.verdicts) else ""))
    for s in cfg["comp.s_q2"]:
        r = equator_delta_gram(ComplementaryParams(2, s=s, convention=conv))
        rep.cases.append(Case(f"equator/q=2/s={s:.6g}", {"q": 2, "s": s, "convention": conv},
                              {"verdict": r.verdict, "value": None if r.value is None else r.value.real},
                              {"finite_sum": True}, r.verdict in ("exact", "diverged")))
    return rep


def suite_specfun(cfg: RunConfig) -> Report:
    from .specfun import self_test

    rep = Report("specfun-selftest", cfg.effective(), evaluations=_budget(cfg, 1e6))
    for r in self_test():
        rep.cases.append(Case(r.name, {}, {"residual": r.residual}, {"residual": r.tolerance}, r.passed))
    return rep


RUNNERS = {
    "opcalc-verify": suite_opcalc,
    "kernel-oracle": suite_kernel_oracle,
    "parseval": suite_parseval,
    "homomorphism": suite_homomorphism,
    "kl-bispectral": suite_kl,
    "hardy-separation": suite_hardy,
    "comp-series": suite_comp,
    "specfun-selftest": suite_specfun,
}


def run_suite(cfg: RunConfig) -> Report:
    """Run one suite; writes <out>/<suite>.json when cfg.out is set."""
    t0 = time.perf_counter()
    rep = RUNNERS[cfg.suite](cfg)
    rep.wall_clock = time.perf_counter() - t0
    if cfg.out:
        export(rep, "json", cfg.out)
    return rep


# --------------------------------------------------------------------------
# command line


def _overrides(items) -> dict:
    out = {}
    for it in items or []:
        if "=" not in it:
            raise ConfigError(f"--set expects key=value, got {it!r}")
        k, v = it.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="gl2harmonic", description="Run verification suites and export reports.")
    sub = ap.add_subparsers(dest="cmd", required=True)
    r = sub.add_parser("run", help="run a suite")
    r.add_argument("--suite", choices=SUITES)
    r.add_argument("--config", help="flat key = value file")
    r.add_argument("--out", default="reports", help="output directory for <suite>.json")
    r.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")
    e = sub.add_parser("export", help="re-export a report")
    e.add_argument("--report", required=True, help="report JSON written by run")
    e.add_argument("--format", choices=("json", "csv"), required=True)
    e.add_argument("--out", default="reports")
    c = sub.add_parser("config", help="print the effective default config of a suite")
    c.add_argument("--suite", choices=SUITES, required=True)
    sub.add_parser("list", help="list suites")
    args = ap.parse_args(argv)

    try:
        if args.cmd == "list":
            print("\n".join(SUITES))
            return 0
        if args.cmd == "config":
            print(RunConfig.build(args.suite).to_text(), end="")
            return 0
        if args.cmd == "export":
            rep = read_report(args.report)
            for p in export(rep, args.format, args.out):
                print(p)
            return 0 if rep.passed else 1
        cfg = load_config(args.config, args.suite, _overrides(args.set), args.out)
        rep = run_suite(cfg)
    except (ConfigError, ResourceBudgetError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return 3
    print(rep.summary())
    return 0 if rep.passed else 1


if __name__ == "__main__":
    sys.exit(main())
