"""Command-line front end.

Every run writes a self-describing table: a ``# config:`` line holding the
fully resolved configuration, a header row, the data rows and a
``# summary:`` line.  Re-running from the embedded config reproduces the
file byte for byte.  Exit status is 0 when the run's verdict passes, 2 when
it fails and 1 on errors.
"""

from __future__ import annotations

import argparse
import dataclasses
import io
import json
import math
import sys
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import HsconvError
from .potentials import (
    ConvolutionSpec,
    EmbeddingIndices,
    ReductionSpec,
    theta_closed_form,
    theta_upper_bound,
    validate_spec,
)
from .quadrature import delta3_reduced, theta_oracle

SUBCOMMANDS = ("theta", "delta3", "surface-mc", "sup-scan", "reduce-check", "kernel",
               "schur", "dual-check", "km")

EXIT_PASS, EXIT_ERROR, EXIT_FAIL = 0, 1, 2


class ConfigError(HsconvError, ValueError):
    pass


_FIELD_TYPES = {"n": int, "m": int, "alphas": tuple, "tau": float, "w_grid": str,
                "tau_grid": str, "n_samples": int, "seed": int, "tol": float, "evaluator": str,
                "ell": int, "p": float, "variant": str, "w": tuple, "v": tuple,
                "scales": tuple, "format": str}


@dataclass
class RunConfig:
    """Resolved run configuration; ``output`` and ``plot`` are not part of the record."""

    subcommand: str
    n: int = 3
    m: int = 2
    alphas: tuple = ()
    tau: float = 1.0
    w_grid: str = "1e-3:1e3:25"
    tau_grid: str = "1:1:1"
    n_samples: int = 100_000
    seed: int = 0
    tol: float = 1e-8
    evaluator: str = "closed_form"
    ell: int = 2
    p: float = 2.0
    variant: str = "K_tau"
    w: tuple = ()
    v: tuple = ()
    scales: tuple = (0.25, 1.0, 4.0)
    format: str = "csv"
    output: Optional[str] = field(default=None, compare=False)
    plot: Optional[str] = field(default=None, compare=False)

    def __post_init__(self):
        if self.subcommand not in SUBCOMMANDS:
            raise ConfigError(f"subcommand: unknown '{self.subcommand}'")
        for name, kind in _FIELD_TYPES.items():
            value = getattr(self, name)
            try:
                if kind is tuple:
                    value = tuple(float(a) for a in value)
                elif kind is int:
                    if float(value) != int(float(value)):
                        raise ValueError
                    value = int(float(value))
                elif kind is float:
                    value = float(value)
                elif not isinstance(value, str):
                    raise TypeError
            except (TypeError, ValueError):
                raise ConfigError(f"{name}: invalid value {value!r}") from None
            setattr(self, name, value)
        if self.format not in ("csv", "json"):
            raise ConfigError("format: must be csv or json")
        if self.n_samples < 2:
            raise ConfigError("n_samples: need at least 2")
        for name in ("w_grid", "tau_grid"):
            parse_grid(getattr(self, name), name)

    def record(self) -> dict:
        d = dataclasses.asdict(self)
        d.pop("output")
        d.pop("plot")
        for k in ("alphas", "w", "v", "scales"):
            d[k] = list(d[k])
        return d

    def to_json(self) -> str:
        return json.dumps(self.record(), sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        if "subcommand" not in d:
            raise ConfigError("subcommand: missing")
        return cls(**d)

    @classmethod
    def from_json(cls, text: str) -> "RunConfig":
        try:
            return cls.from_dict(json.loads(text))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc

    def spec(self) -> ConvolutionSpec:
        alphas = self.alphas or ((self.n - 1.0,) * self.m)
        return ConvolutionSpec(self.m, self.n, alphas, self.tau)


def parse_grid(text: str, name: str = "grid") -> np.ndarray:
    """``lo:hi:count`` on a logarithmic scale."""
    try:
        lo, hi, count = text.split(":")
        lo, hi, count = float(lo), float(hi), int(float(count))
    except ValueError as exc:
        raise ConfigError(f"{name}: expected lo:hi:count, got '{text}'") from exc
    if not (lo > 0 and hi > 0 and count >= 1):
        raise ConfigError(f"{name}: bounds must be positive and count >= 1")
    if count == 1:
        return np.array([lo])
    return np.logspace(math.log10(lo), math.log10(hi), count)


def _fmt(x) -> str:
    if isinstance(x, bool):
        return "true" if x else "false"
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return str(x)


def _clean(x):
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if math.isfinite(x) else repr(x)
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, (list, tuple)):
        return [_clean(y) for y in x]
    if isinstance(x, dict):
        return {k: _clean(v) for k, v in x.items()}
    return x


def emit(cfg: RunConfig, table: dict) -> str:
    if cfg.format == "json":
        doc = {"config": cfg.record(), "columns": table["columns"],
               "rows": _clean(table["rows"]), "summary": _clean(table["summary"])}
        return json.dumps(doc, sort_keys=True, indent=1) + "\n"
    buf = io.StringIO()
    buf.write("# config: " + cfg.to_json() + "\n")
    buf.write(",".join(table["columns"]) + "\n")
    for row in table["rows"]:
        buf.write(",".join(_fmt(v) for v in row) + "\n")
    buf.write("# summary: " + json.dumps(_clean(table["summary"]), sort_keys=True) + "\n")
    return buf.getvalue()


def load_config_file(path: str) -> RunConfig:
    with open(path) as fh:
        text = fh.read()
    first = text.lstrip()
    if first.startswith("{"):
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path}: {exc}") from exc
        return RunConfig.from_dict(doc["config"] if "config" in doc and "columns" in doc else doc)
    for line in text.splitlines():
        if line.startswith("# config: "):
            return RunConfig.from_json(line[len("# config: "):])
    raise ConfigError(f"config file {path}: no JSON object or '# config:' line")


# --------------------------------------------------------------------------
# subcommand bodies: each returns {"columns", "rows", "summary", "passed"}


def _axis_w(n, wn):
    w = np.zeros(n)
    w[0] = wn
    return w


def _theta(cfg):
    spec = cfg.spec()
    if spec.m != 2:
        raise ConfigError("m: theta needs m = 2")
    a, lam = spec.alphas
    grid = parse_grid(cfg.w_grid, "w_grid")
    rows, worst = [], 0.0
    has_bound = a < cfg.n - 1
    for d in grid:
        cf = theta_closed_form(cfg.n, a, lam, d)
        orc = theta_oracle(cfg.n, a, lam, d, tol=min(cfg.tol, 1e-10))
        ub = theta_upper_bound(cfg.n, a, lam, d) if has_bound else math.nan
        gap = abs(orc - cf) / abs(cf)
        ok = gap <= 1e-6 and (not has_bound or cf <= ub * (1 + 1e-12))
        worst = max(worst, gap)
        rows.append([d, 1.0, orc, 0.0, cf, ub, gap, "pass" if ok else "fail"])
    passed = all(r[-1] == "pass" for r in rows)
    return {"columns": ["w_norm", "tau", "value", "std_error", "closed_form", "upper_bound",
                        "rel_gap", "verdict"],
            "rows": rows, "summary": {"max_rel_gap": worst, "verdict": "pass" if passed else "fail"},
            "passed": passed}


def _delta3(cfg):
    spec = cfg.spec()
    if spec.m != 3:
        raise ConfigError("m: delta3 needs m = 3")
    grid = parse_grid(cfg.w_grid, "w_grid")
    rows = []
    for d in grid:
        val = delta3_reduced(cfg.n, *spec.alphas, _axis_w(cfg.n, d), tol=cfg.tol)
        rows.append([d, 1.0, val, 0.0, "pass" if math.isfinite(val) else "fail"])
    passed = all(r[-1] == "pass" for r in rows)
    return {"columns": ["w_norm", "tau", "value", "std_error", "verdict"], "rows": rows,
            "summary": {"sup": max(r[2] for r in rows), "verdict": "pass" if passed else "fail"},
            "passed": passed}


def _surface_mc(cfg):
    from .surface_mc import estimate_form

    spec = cfg.spec()
    rho = spec.rho
    rows = []
    for i, (d, tau) in enumerate(_grid_pairs(cfg)):
        est = estimate_form(spec.with_tau(tau), _axis_w(cfg.n, d), tau, n_samples=cfg.n_samples,
                            seed=cfg.seed + i, rescale=True).scaled(d**rho)
        cf = math.nan
        ok = math.isfinite(est.value)
        if spec.m == 2:
            cf = theta_closed_form(cfg.n, *spec.alphas, d / math.sqrt(tau))
            ok = ok and abs(est.value - cf) <= 3 * est.std_error
        rows.append([d, tau, est.value, est.std_error, cf, est.acceptance,
                     "pass" if ok else "fail"])
    passed = all(r[-1] == "pass" for r in rows)
    return {"columns": ["w_norm", "tau", "value", "std_error", "closed_form", "acceptance",
                        "verdict"],
            "rows": rows, "summary": {"weight_exponent": rho,
                                      "verdict": "pass" if passed else "fail"},
            "passed": passed}


def _grid_pairs(cfg):
    ws = parse_grid(cfg.w_grid, "w_grid")
    ts = parse_grid(cfg.tau_grid, "tau_grid")
    return [(float(w), float(t)) for w in ws for t in ts]


def _sup_scan(cfg):
    from .verify import sup_scan

    spec = cfg.spec()
    ws = parse_grid(cfg.w_grid, "w_grid")
    ts = parse_grid(cfg.tau_grid, "tau_grid")
    rep = sup_scan(spec, cfg.evaluator, ws, ts, n_samples=cfg.n_samples, seed=cfg.seed,
                   tol=cfg.tol)
    rows = []
    for k, (wn, tau) in enumerate(rep.grid):
        cf = rep.closed_form[k] if rep.closed_form is not None else math.nan
        ub = rep.upper_bound[k] if rep.upper_bound is not None else math.nan
        rows.append([wn, tau, rep.values[k], rep.std_errors[k], cf, ub, rep.running_sup[k],
                     rep.verdict])
    summary = {"verdict": rep.verdict, "sup_full": rep.sup_full, "sup_inner": rep.sup_inner,
               "violations": [list(v) for v in rep.violations]}
    return {"columns": ["w_norm", "tau", "value", "std_error", "closed_form", "upper_bound",
                        "running_sup", "verdict"],
            "rows": rows, "summary": summary, "passed": rep.bounded}


def _reduce_check(cfg):
    from .verify import reduction_check

    spec = cfg.spec()
    red = ReductionSpec(spec, cfg.ell)
    ws = parse_grid(cfg.w_grid, "w_grid")
    rep = reduction_check(spec, red, ws, n_samples=cfg.n_samples, seed=cfg.seed, tol=cfg.tol)
    rows = [[w, 1.0, l, s, rep.bound, "pass" if h else "fail"]
            for w, l, s, h in zip(rep.w_grid, rep.lhs, rep.lhs_se, rep.holds)]
    summary = {"constant": rep.constant, "rhs_sup": rep.rhs_sup, "rhs_argsup": rep.rhs_argsup,
               "identity_residual": rep.identity_residual, "advisories": rep.advisories,
               "verdict": rep.verdict}
    return {"columns": ["w_norm", "tau", "value", "std_error", "bound", "verdict"],
            "rows": rows, "summary": summary, "passed": rep.verdict == "holds"}


def _kernel_spec(cfg):
    from .kernels import KernelSpec

    return KernelSpec(cfg.variant, cfg.m, cfg.n, cfg.tau)


def _kernel(cfg):
    from .kernels import kernel_eval

    K = _kernel_spec(cfg)
    w = np.array(cfg.w) if cfg.w else np.eye(cfg.n)[0]
    v = np.array(cfg.v) if cfg.v else 2.0 * np.eye(cfg.n)[1]
    if len(w) != cfg.n or len(v) != cfg.n:
        raise ConfigError(f"w, v: need {cfg.n} components")
    est = kernel_eval(K, w, v, cfg.n_samples, cfg.seed)
    ok = math.isfinite(est.value) and est.value > 0
    row = [float(np.linalg.norm(w)), float(np.linalg.norm(v)), est.value, est.std_error,
           est.tail_index, "pass" if ok else "fail"]
    return {"columns": ["w_norm", "v_norm", "value", "std_error", "tail_index", "verdict"],
            "rows": [row], "summary": {"variant": K.variant.value,
                                       "bracket_exponent": K.bracket_exponent,
                                       "warnings": list(est.warnings),
                                       "verdict": row[-1]},
            "passed": ok}


def _schur(cfg):
    from .kernels import SchurDivergent, schur_constant

    K = _kernel_spec(cfg)
    try:
        rep = schur_constant(K, cfg.n_samples, cfg.seed)
    except SchurDivergent as exc:
        return {"columns": ["value", "std_error", "verdict"],
                "rows": [[math.inf, math.nan, "schur-integral-divergent"]],
                "summary": {"message": str(exc), "verdict": "schur-integral-divergent"},
                "passed": False}
    ok = math.isfinite(rep.value) and rep.rel_error <= 0.05
    row = [rep.value, rep.std_error, rep.exponent_at_zero, rep.exponent_at_infinity,
           "pass" if ok else "fail"]
    return {"columns": ["value", "std_error", "exponent_at_zero", "exponent_at_infinity",
                        "verdict"],
            "rows": [row], "summary": {"rel_error": rep.rel_error, "verdict": row[-1]},
            "passed": ok}


def _dual(cfg):
    from .verify import dual_check

    rep = dual_check(cfg.n, cfg.m, EmbeddingIndices(cfg.p), scales=cfg.scales,
                     n_samples=cfg.n_samples, seed=cfg.seed)
    rows = [[s, l, r, q, e, rep.verdict]
            for s, l, r, q, e in zip(rep.scales, rep.lhs, rep.rhs, rep.ratios, rep.ratio_errors)]
    return {"columns": ["scale", "lhs", "rhs", "value", "std_error", "verdict"], "rows": rows,
            "summary": {"p": rep.p, "warnings": list(rep.warnings), "verdict": rep.verdict},
            "passed": rep.verdict == "stable"}


def _km(cfg):
    from .surface_mc import km_form

    rows = []
    for i, (d, tau) in enumerate(_grid_pairs(cfg)):
        est = km_form(cfg.n, cfg.m, _axis_w(cfg.n, d), tau, cfg.n_samples, cfg.seed + i)
        ok = math.isfinite(est.value) and est.value > 0
        rows.append([d, tau, est.value, est.std_error, est.tail_index, "pass" if ok else "fail"])
    vals = [r[2] for r in rows]
    passed = all(r[-1] == "pass" for r in rows)
    return {"columns": ["w_norm", "tau", "value", "std_error", "tail_index", "verdict"],
            "rows": rows,
            "summary": {"max_min_ratio": max(vals) / min(vals) if min(vals) > 0 else math.inf,
                        "verdict": "pass" if passed else "fail"},
            "passed": passed}


_DISPATCH = {"theta": _theta, "delta3": _delta3, "surface-mc": _surface_mc,
             "sup-scan": _sup_scan, "reduce-check": _reduce_check, "kernel": _kernel,
             "schur": _schur, "dual-check": _dual, "km": _km}

_THEOREM = {"theta": "T2", "delta3": "T3", "reduce-check": "T1", "km": "T4", "dual-check": "T4"}


def run(cfg: RunConfig, out=None, err=None) -> int:
    """Execute one configured run; returns the exit status."""
    out = sys.stdout if out is None else out
    err = sys.stderr if err is None else err
    try:
        if cfg.subcommand in _THEOREM:
            try:
                rep = validate_spec(cfg.spec(), _THEOREM[cfg.subcommand], ell=cfg.ell)
                for name in rep.failures:
                    err.write(f"warning: hypothesis {name} not satisfied\n")
            except HsconvError as exc:
                err.write(f"warning: {exc}\n")
        table = _DISPATCH[cfg.subcommand](cfg)
        text = emit(cfg, table)
        if cfg.output:
            with open(cfg.output, "w", newline="") as fh:
                fh.write(text)
        else:
            out.write(text)
        if cfg.plot:
            from .report import render

            render(table, cfg.plot, title=cfg.subcommand)
    except (HsconvError, ValueError, OSError) as exc:
        err.write(f"error: {exc}\n")
        return EXIT_ERROR
    return EXIT_PASS if table["passed"] else EXIT_FAIL


def _floats(text):
    return tuple(float(x) for x in text.split(",") if x.strip())


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hsconv", description=__doc__.splitlines()[0])
    p.add_argument("subcommand", choices=SUBCOMMANDS)
    p.add_argument("--config", help="JSON config, or a previous output file to re-run")
    p.add_argument("--n", type=int, help="dimension (default 3)")
    p.add_argument("--m", type=int, help="number of factors (default 2; 3 for km and kernels)")
    p.add_argument("--alpha", type=float, help="two-factor alpha")
    p.add_argument("--lambda", dest="lam", type=float, help="two-factor lambda")
    p.add_argument("--alphas", type=_floats, help="comma-separated exponents")
    p.add_argument("--tau", type=float, help="surface offset (default 1)")
    p.add_argument("--w-grid", help="|w| grid lo:hi:count, logarithmic")
    p.add_argument("--tau-grid", help="tau grid lo:hi:count, logarithmic")
    p.add_argument("--grid", help="shorthand AxB: |w| and tau on logspace(-1, 1)")
    p.add_argument("--samples", type=float, help="Monte Carlo samples (default 1e5)")
    p.add_argument("--seed", type=int)
    p.add_argument("--tol", type=float)
    p.add_argument("--evaluator", choices=("closed_form", "quadrature", "mc"))
    p.add_argument("--ell", type=int)
    p.add_argument("--p", type=float, help="Lebesgue index for dual-check (default 2)")
    p.add_argument("--variant", choices=("K_tau", "K_zero", "K_phi"))
    p.add_argument("--w", type=_floats, help="kernel first point")
    p.add_argument("--v", type=_floats, help="kernel second point")
    p.add_argument("--scales", type=_floats)
    p.add_argument("--format", choices=("csv", "json"))
    p.add_argument("--output", "-o", help="output file (default stdout)")
    p.add_argument("--plot", help="also render a PNG figure to this path")
    return p


def config_from_args(ns: argparse.Namespace) -> RunConfig:
    if ns.config:
        base = load_config_file(ns.config).record()
        if base["subcommand"] != ns.subcommand:
            raise ConfigError(f"subcommand: config is for '{base['subcommand']}'")
    else:
        base = {"subcommand": ns.subcommand}
        if ns.subcommand in ("km", "kernel", "schur", "dual-check", "delta3", "reduce-check"):
            base["m"] = 3
        if ns.subcommand == "schur":
            base["variant"] = "K_zero"
    upd = {}
    for key, attr in (("n", "n"), ("m", "m"), ("tau", "tau"), ("seed", "seed"), ("tol", "tol"),
                      ("evaluator", "evaluator"), ("ell", "ell"), ("p", "p"),
                      ("variant", "variant"), ("w", "w"), ("v", "v"), ("scales", "scales"),
                      ("format", "format"), ("w_grid", "w_grid"), ("tau_grid", "tau_grid")):
        val = getattr(ns, attr)
        if val is not None:
            upd[key] = val
    if ns.samples is not None:
        upd["n_samples"] = int(ns.samples)
    if ns.alphas is not None:
        upd["alphas"] = ns.alphas
    elif ns.alpha is not None or ns.lam is not None:
        if ns.alpha is None or ns.lam is None:
            raise ConfigError("alpha, lambda: give both")
        upd["alphas"] = (ns.alpha, ns.lam)
    if ns.grid:
        try:
            a, b = (int(x) for x in ns.grid.lower().split("x"))
        except ValueError as exc:
            raise ConfigError(f"grid: expected AxB, got '{ns.grid}'") from exc
        upd.setdefault("w_grid", f"0.1:10:{a}")
        upd.setdefault("tau_grid", f"0.1:10:{b}")
    base.update(upd)
    cfg = RunConfig.from_dict(base)
    cfg.output = ns.output
    cfg.plot = ns.plot
    return cfg


def main(argv=None) -> int:
    parser = build_parser()
    ns = parser.parse_args(argv)
    try:
        cfg = config_from_args(ns)
    except (HsconvError, ValueError, TypeError, OSError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_ERROR
    return run(cfg)


if __name__ == "__main__":
    sys.exit(main())
