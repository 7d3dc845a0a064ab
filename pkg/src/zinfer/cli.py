"""Command-line interface: ``zinfer {fit,compare,diagnose,simulate}``.

Data are read from a headed, comma-separated CSV. Intercepts are added to
both designs unless ``--no-intercept``; the token ``intercept`` in a covariate
list asks for one explicitly and ``none`` as the ZI covariate list fits the
model without inflation. ``--data @fish`` selects the bundled fish survey.

Exit codes: 0 success, 1 input error, 2 fit did not converge.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import fish_path
from .expfam import BaseCount, DomainError, SamplingError
from .fit import (
    ConvergenceError,
    DataError,
    FitResult,
    NonMonotoneTypeError,
    TypeNotIdentifiable,
    fit_joint,
)
from .modelsel import compare, diagnostics_pairs, information_criteria
from .score import Dataset
from .zicore import MULTIPLICATIVE, InflationOverflow, ZiModel, ZiType, simulate

log = logging.getLogger("zinfer")

EXIT_OK, EXIT_INPUT, EXIT_NOT_CONVERGED = 0, 1, 2
INPUT_ERRORS = (OSError, ValueError, KeyError, DomainError, DataError,
                NonMonotoneTypeError, TypeNotIdentifiable, InflationOverflow, SamplingError)


class InputError(ValueError):
    pass


@dataclass
class RunConfig:
    subcommand: str
    data: str | None = None
    response: str = "y"
    theta_covariates: list[str] = field(default_factory=list)
    alpha_covariates: list[str] = field(default_factory=list)
    base: str = "poisson"
    zi_types: list[str] = field(default_factory=lambda: ["multiplicative"])
    intercept: bool = True
    drop_response_above: int | None = None
    seed: int | None = None
    output: str | None = None

    @classmethod
    def from_args(cls, args) -> "RunConfig":
        types = getattr(args, "types", None) or getattr(args, "zi_type", None) or "multiplicative"
        return cls(
            subcommand=args.command,
            data=getattr(args, "data", None),
            response=args.response,
            theta_covariates=_split(args.theta_covariates),
            alpha_covariates=_split(args.alpha_covariates),
            base=args.base,
            zi_types=split_types(types),
            intercept=not args.no_intercept,
            drop_response_above=getattr(args, "drop_response_above", None),
            seed=getattr(args, "seed", None),
            output=args.output,
        )


def _split(text):
    if text is None:
        return []
    return [t.strip() for t in text.split(",") if t.strip()]


def split_types(text):
    """Split a comma-separated type list, keeping ``custom:t1,t2`` intact."""
    out = []
    for tok in _split(text):
        if out and out[-1].lower().startswith("custom:") and "," not in out[-1]:
            out[-1] += "," + tok
        else:
            out.append(tok)
    return out


# -- formatting --------------------------------------------------------------


def fmt(x):
    """Round a float to 12 significant digits; non-finite becomes None."""
    x = float(x)
    if not math.isfinite(x):
        return None
    return float(f"{x:.12g}")


def _clean(obj):
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return fmt(obj)
    return obj


def dumps(obj) -> str:
    return json.dumps(_clean(obj), indent=2, allow_nan=False) + "\n"


def _write(text: str, path: str | None):
    if path is None or path == "-":
        sys.stdout.write(text)
    else:
        Path(path).write_text(text, encoding="utf-8", newline="")


# -- data ----------------------------------------------------------------------


def read_table(path: str) -> dict[str, list[str]]:
    """Read a headed CSV into a column dict of raw strings."""
    if path == "@fish":
        path = str(fish_path())
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise InputError(f"{path}: empty file") from None
        cols = {h: [] for h in header}
        for lineno, row in enumerate(reader, 2):
            if not row:
                continue
            if len(row) != len(header):
                raise InputError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            for h, v in zip(header, row):
                cols[h].append(v.strip())
    return cols


def _column(table, name, where="data"):
    if name not in table:
        raise InputError(f"column {name!r} not found in {where} (have: {', '.join(table)})")
    try:
        return np.array([float(v) for v in table[name]])
    except ValueError:
        raise InputError(f"column {name!r} is not numeric") from None


def _design(table, names, intercept, n=None):
    if n is None:
        n = len(next(iter(table.values()), []))
    cols, labels = [], []
    if intercept or "intercept" in names:
        cols.append(np.ones(n))
        labels.append("intercept")
    for name in names:
        if name == "intercept":
            continue
        cols.append(_column(table, name))
        labels.append(name)
    X = np.column_stack(cols) if cols else np.zeros((n, 0))
    return X, labels


def build_dataset(table, cfg: RunConfig):
    """Assemble a :class:`Dataset`; returns ``(data, kept_row_indices)``."""
    y = _column(table, cfg.response)
    if np.any(y != np.floor(y)) or np.any(y < 0):
        raise InputError(f"response {cfg.response!r} must hold non-negative integers")
    keep = np.ones(y.size, dtype=bool)
    if cfg.drop_response_above is not None:
        keep = y <= cfg.drop_response_above
    Xb, bnames = _design(table, cfg.theta_covariates, cfg.intercept)
    if cfg.alpha_covariates == ["none"]:
        Xa, anames = np.zeros((y.size, 0)), []
    else:
        Xa, anames = _design(table, cfg.alpha_covariates, cfg.intercept)
    if Xb.shape[1] == 0:
        raise InputError("the theta design has no columns")
    idx = np.flatnonzero(keep)
    data = Dataset(y[keep].astype(np.int64), Xb[keep], Xa[keep], bnames, anames)
    return data, idx


def _zitype_arg(text: str):
    return "estimate-tau" if text.strip().lower() == "estimate-tau" else ZiType.parse(text)


# -- reports -------------------------------------------------------------------


def fit_report(fit: FitResult, data: Dataset) -> dict:
    se = fit.se
    p, q = fit.beta.size, fit.alpha.size
    beta = {nm: {"estimate": b, "se": s} for nm, b, s in zip(fit.beta_names, fit.beta, se[:p])}
    alpha = {nm: {"estimate": a, "se": s}
             for nm, a, s in zip(fit.alpha_names, fit.alpha, se[p:p + q])}
    coefficients = {"beta": beta, "alpha": alpha}
    if fit.tau_estimated:
        coefficients["tau"] = {f"tau{j + 1}": {"estimate": t, "se": s}
                               for j, (t, s) in enumerate(zip(fit.tau, se[p + q:]))}
    aic, bic = information_criteria(fit.loglik, fit.k, fit.n)
    return {
        "model": {
            "base": str(fit.base),
            "zi_type": fit.type_name if data.q else "none",
            "tau": list(fit.tau) if fit.tau is not None else None,
        },
        "coefficients": coefficients,
        "loglik": fit.loglik,
        "aic": aic,
        "bic": bic,
        "k": fit.k,
        "ess": fit.ess,
        "n": fit.n,
        "n0": fit.n0,
        "converged": fit.converged,
        "iterations": fit.iterations,
        "flags": {
            "near_singular": fit.near_singular,
            "separation": fit.separation,
            "omega_unidentified": fit.omega_unidentified,
        },
    }


def loglik_from_report(report: dict, data: Dataset) -> float:
    """Re-evaluate the log-likelihood from a fit report's parameters."""
    from .score import regression_loglik

    base = BaseCount.parse(report["model"]["base"])
    beta = np.array([c["estimate"] for c in report["coefficients"]["beta"].values()])
    alpha = np.array([c["estimate"] for c in report["coefficients"]["alpha"].values()], dtype=float)
    name = report["model"]["zi_type"]
    if name == "mixture":
        zt = ZiType.parse(name)
    elif name == "none" or report["model"]["tau"] is None:
        zt = MULTIPLICATIVE
    else:
        zt = ZiType("reported", *report["model"]["tau"])
    return regression_loglik(data, base, zt, beta, alpha)


# -- commands ----------------------------------------------------------------


def _load(cfg: RunConfig):
    if cfg.data is None:
        raise InputError("--data is required")
    return build_dataset(read_table(cfg.data), cfg)


def cmd_fit(cfg: RunConfig) -> int:
    data, _ = _load(cfg)
    base = BaseCount.parse(cfg.base)
    if len(cfg.zi_types) != 1:
        raise InputError("fit takes exactly one --zi-type")
    fit = fit_joint(data, base, _zitype_arg(cfg.zi_types[0]))
    _write(dumps(fit_report(fit, data)), cfg.output)
    return EXIT_OK if fit.converged else EXIT_NOT_CONVERGED


def _row_dict(r):
    return {"type": r.type_name, "tau": list(r.tau) if r.tau is not None else None,
            "loglik": r.loglik, "k": r.k, "aic": r.aic, "bic": r.bic, "rank": r.rank,
            "status": r.status, "error": r.error}


def cmd_compare(cfg: RunConfig, csv_path: str | None = None) -> int:
    data, _ = _load(cfg)
    base = BaseCount.parse(cfg.base)
    fits, failed = [], {}
    for name in cfg.zi_types:
        try:
            fits.append(fit_joint(data, base, _zitype_arg(name)))
        except (ConvergenceError, *INPUT_ERRORS) as exc:
            log.warning("%s fit failed: %s", name, exc)
            failed[name] = str(exc)
    rows = compare(fits, data, failed)
    out = {"base": str(base), "n": data.n, "n0": data.n0, "rows": [_row_dict(r) for r in rows]}
    _write(dumps(out), cfg.output)
    if csv_path:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["rank", "type", "tau1", "tau2", "loglik", "k", "aic", "bic", "status"])
        for r in rows:
            t1, t2 = r.tau if r.tau is not None else (None, None)
            w.writerow([_cell(r.rank), r.type_name, _cell(t1), _cell(t2), _cell(r.loglik), r.k,
                        _cell(r.aic), _cell(r.bic), r.status])
        _write(buf.getvalue(), csv_path)
    return EXIT_OK if all(r.status == "ok" for r in rows) else EXIT_NOT_CONVERGED


def _cell(x):
    if x is None:
        return ""
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    v = fmt(x)
    return "" if v is None else repr(v)


def cmd_diagnose(cfg: RunConfig) -> int:
    table = read_table(cfg.data) if cfg.data else None
    if table is None:
        raise InputError("--data is required")
    data, idx = build_dataset(table, cfg)
    fit = fit_joint(data, BaseCount.parse(cfg.base), _zitype_arg(cfg.zi_types[0]))
    pairs = diagnostics_pairs(fit, data)
    covs = [c for c in dict.fromkeys(cfg.theta_covariates + cfg.alpha_covariates)
            if c not in ("intercept", "none")]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["row", cfg.response, *covs, "pi0", "pit0", "logit_pi0", "logit_pit0", "omega"])
    for j, i in enumerate(pairs["row"]):
        src = idx[i]
        w.writerow([int(src), int(data.y[i]), *(table[c][src] for c in covs),
                    *(_cell(pairs[k][j]) for k in ("pi0", "pit0", "logit_pi0", "logit_pit0", "omega"))])
    _write(buf.getvalue(), cfg.output)
    return EXIT_OK if fit.converged else EXIT_NOT_CONVERGED


def _generate(specs, n, rng):
    """Covariates from ``name:normal[:mean:sd]``, ``name:uniform[:lo:hi]``,
    ``name:bernoulli[:p]`` or ``name:poisson[:lam]`` specs."""
    cols = {}
    for spec in specs:
        parts = spec.split(":")
        name, kind, args = parts[0], (parts[1] if len(parts) > 1 else "normal"), parts[2:]
        try:
            args = [float(a) for a in args]
        except ValueError:
            raise InputError(f"bad covariate spec {spec!r}") from None
        if kind == "normal":
            cols[name] = rng.normal(*(args or [0.0, 1.0]), size=n)
        elif kind == "uniform":
            cols[name] = rng.uniform(*(args or [0.0, 1.0]), size=n)
        elif kind == "bernoulli":
            cols[name] = (rng.uniform(size=n) < (args[0] if args else 0.5)).astype(float)
        elif kind == "poisson":
            cols[name] = rng.poisson(args[0] if args else 1.0, size=n).astype(float)
        else:
            raise InputError(f"unknown covariate distribution {kind!r} in {spec!r}")
    return cols


def _floats(text, what):
    try:
        return np.array([float(t) for t in _split(text)])
    except ValueError:
        raise InputError(f"{what} must be comma-separated numbers") from None


def cmd_simulate(cfg: RunConfig, n: int | None, beta: str, alpha: str | None,
                 design: str | None, gen: list[str]) -> int:
    rng = np.random.default_rng(cfg.seed)
    if design:
        table = read_table(design)
        cols = {k: _column(table, k, design) for k in table}
        n = len(next(iter(cols.values()), []))
    else:
        if n is None:
            raise InputError("simulate needs --n or --design")
        cols = {}
    cols.update(_generate(gen, n, rng))
    table = {k: list(map(repr, map(float, v))) for k, v in cols.items()}
    Xb, _ = _design(table, cfg.theta_covariates, cfg.intercept, n)
    b = _floats(beta, "--beta")
    if b.size != Xb.shape[1]:
        raise InputError(f"--beta has {b.size} values but the theta design has {Xb.shape[1]} columns")
    base = BaseCount.parse(cfg.base)
    theta = Xb @ b
    if alpha is None:
        zt, gamma = MULTIPLICATIVE, np.zeros(n)
    else:
        Xa, _ = _design(table, cfg.alpha_covariates, cfg.intercept, n)
        a = _floats(alpha, "--alpha")
        if a.size != Xa.shape[1]:
            raise InputError(f"--alpha has {a.size} values but the ZI design has {Xa.shape[1]} columns")
        if cfg.zi_types[0] == "estimate-tau":
            raise InputError("simulate needs a concrete ZI type")
        zt, gamma = ZiType.parse(cfg.zi_types[0]), Xa @ a
    y = simulate(ZiModel(base, zt, theta, gamma), n, rng)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([cfg.response, *cols])
    for i in range(n):
        w.writerow([int(y[i]), *(repr(float(cols[k][i])) for k in cols)])
    _write(buf.getvalue(), cfg.output)
    return EXIT_OK


# -- argument parsing ----------------------------------------------------------


def _common(p, data=True):
    if data:
        p.add_argument("--data", help="input CSV with a header row (@fish for the bundled data)")
        p.add_argument("--drop-response-above", type=int, default=None, metavar="K",
                       help="drop rows whose response exceeds K")
    p.add_argument("--response", default="y", help="response column (default: y)")
    p.add_argument("--theta-covariates", default="", help="comma-separated count-side covariates")
    p.add_argument("--alpha-covariates", default="",
                   help="comma-separated ZI-side covariates ('none' for no inflation)")
    p.add_argument("--no-intercept", action="store_true", help="do not add intercept columns")
    p.add_argument("--base", default="poisson", help="poisson or binomial:N")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("-o", "--output", default=None, help="output path (default: stdout)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="zinfer", description="Zero-inflated count regression.")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="fit one ZI type and write a JSON report")
    _common(p)
    p.add_argument("--zi-type", default="multiplicative",
                   help="multiplicative | additive | hurdle | mixture | custom:t1,t2 | estimate-tau")

    p = sub.add_parser("compare", help="fit several ZI types and rank them by AIC")
    _common(p)
    p.add_argument("--types", default="hurdle,multiplicative,additive",
                   help="comma-separated ZI types (default: hurdle,multiplicative,additive)")
    p.add_argument("--csv", default=None, help="also write the table as CSV here")

    p = sub.add_parser("diagnose", help="write per-observation (pi0, pit0) pairs as CSV")
    _common(p)
    p.add_argument("--zi-type", default="multiplicative")

    p = sub.add_parser("simulate", help="simulate ZI counts to CSV")
    _common(p, data=False)
    p.add_argument("--zi-type", default="multiplicative")
    p.add_argument("--n", type=int, default=None, help="number of rows")
    p.add_argument("--beta", required=True, help="theta coefficients, comma-separated")
    p.add_argument("--alpha", default=None, help="ZI coefficients; omit for no inflation")
    p.add_argument("--design", default=None, help="CSV supplying covariate columns")
    p.add_argument("--gen", action="append", default=[], metavar="NAME:DIST[:ARGS]",
                   help="generate a covariate, e.g. x:normal:0:1 or camper:bernoulli:0.5")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s: %(message)s")
    cfg = RunConfig.from_args(args)
    try:
        if cfg.subcommand == "fit":
            return cmd_fit(cfg)
        if cfg.subcommand == "compare":
            return cmd_compare(cfg, args.csv)
        if cfg.subcommand == "diagnose":
            return cmd_diagnose(cfg)
        return cmd_simulate(cfg, args.n, args.beta, args.alpha, args.design, args.gen)
    except ConvergenceError as exc:
        print(f"zinfer: {exc}", file=sys.stderr)
        return EXIT_NOT_CONVERGED
    except INPUT_ERRORS as exc:
        print(f"zinfer: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
