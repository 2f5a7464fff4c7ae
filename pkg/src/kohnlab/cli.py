"""Command-line entry point: ``kohnlab solve | scan | verify``.

Settings are resolved in increasing precedence: built-in defaults, the
TOML file given by ``--config``, the ``KOHNLAB_SEED`` environment
variable, then command-line flags.
"""
from __future__ import annotations

import argparse
import math
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

import numpy as np

from .algebra import CoefficientExtractionError, SingularSystemError, extract_det_coefficients, kohn_system
from .kohn_complex import equivalence_check, solve_complex
from .kohn_real import DegenerateError, eta_via_determinants, optimize_tau, slope, solve_generalized
from .model import AssemblyError, BasisSet, Potential, RadialProblem, assemble_elements
from .scanner import (
    DEFAULT_TOLERANCES,
    SUITE_NAMES,
    ScanSpec,
    evaluate,
    metadata,
    write_csv,
    write_json,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_SINGULAR = 2


class ConfigError(ValueError):
    """Bad configuration; the message names the offending key path."""


_NUM = (int, float)

# section -> key -> accepted types
_SCHEMA = {
    "problem": {"k": _NUM, "tau": _NUM, "N": _NUM, "beta": _NUM, "r_max": _NUM,
                "n_quad": int, "converge": bool},
    "potential": {"kind": str, "V0": _NUM, "a": _NUM},
    "basis": {"M": int, "powers": list, "exponents": list, "normalize": bool},
    "scan": {"k_min": _NUM, "k_max": _NUM, "k_count": int, "tau_count": int,
             "checks": list, "jobs": int, "seed": int},
    "verify": {"suites": list, "tolerances": dict},
    "output": {"dir": str, "csv": str, "json": str, "formats": list},
}


@dataclass
class Config:
    problem: dict = field(default_factory=dict)
    potential: dict = field(default_factory=dict)
    basis: dict = field(default_factory=dict)
    scan: dict = field(default_factory=dict)
    verify: dict = field(default_factory=dict)
    output: dict = field(default_factory=dict)

    def radial_problem(self, k: Optional[float] = None) -> RadialProblem:
        p = self.problem
        try:
            pot = Potential(**self.potential)
            return RadialProblem(
                potential=pot,
                k=float(k if k is not None else p.get("k", 0.5)),
                N=float(p.get("N", 1.0)),
                beta=None if p.get("beta") is None else float(p["beta"]),
                r_max=float(p.get("r_max", 80.0)),
                n_quad=int(p.get("n_quad", 32)),
                converge=bool(p.get("converge", True)),
            )
        except ValueError as exc:
            raise ConfigError(f"problem/potential: {exc}") from exc

    def basis_set(self) -> BasisSet:
        b = self.basis
        try:
            if "powers" in b or "exponents" in b:
                if "M" in b:
                    raise ValueError("give either M or powers/exponents, not both")
                return BasisSet(tuple(b.get("powers", ())), tuple(b.get("exponents", ())),
                                bool(b.get("normalize", True)))
            return BasisSet.default(int(b.get("M", 8)), bool(b.get("normalize", True)))
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"basis: {exc}") from exc

    def scan_spec(self, checks: Sequence[str] = (), out_dir: Optional[str] = None,
                  jobs: Optional[int] = None, seed: Optional[int] = None) -> ScanSpec:
        s, o = self.scan, self.output
        formats = o.get("formats", ["csv", "json"])
        d = Path(out_dir if out_dir is not None else o.get("dir", "."))
        try:
            return ScanSpec(
                k_grid=(s.get("k_min", 0.1), s.get("k_max", 1.0), s.get("k_count", 10)),
                tau_count=int(s.get("tau_count", 16)),
                checks=tuple(checks),
                csv_path=str(d / o.get("csv", "scan.csv")) if "csv" in formats else None,
                json_path=str(d / o.get("json", "scan.json")) if "json" in formats else None,
                seed=int(seed if seed is not None else s.get("seed", 0)),
                jobs=int(jobs if jobs is not None else s.get("jobs", 1)),
                tolerances=dict(self.verify.get("tolerances", {})),
            )
        except ValueError as exc:
            raise ConfigError(f"scan: {exc}") from exc


def _check_type(path: str, value, kinds) -> None:
    if kinds is _NUM:
        ok = isinstance(value, _NUM) and not isinstance(value, bool)
    elif kinds is int:
        ok = isinstance(value, int) and not isinstance(value, bool)
    else:
        ok = isinstance(value, kinds)
    if not ok:
        raise ConfigError(f"{path}: expected {getattr(kinds, '__name__', 'number')}, "
                          f"got {type(value).__name__}")


def parse_config(data: dict) -> Config:
    """Validate a parsed TOML document; unknown keys raise with their path."""
    cfg = Config()
    for section, body in data.items():
        if section not in _SCHEMA:
            raise ConfigError(f"unknown section [{section}]")
        if not isinstance(body, dict):
            raise ConfigError(f"{section}: expected a table")
        for key, value in body.items():
            path = f"{section}.{key}"
            if key not in _SCHEMA[section]:
                raise ConfigError(f"unknown key {path}")
            _check_type(path, value, _SCHEMA[section][key])
        getattr(cfg, section).update(body)

    for key in ("suites",):
        names = cfg.verify.get(key, [])
        bad = [n for n in names if n not in SUITE_NAMES]
        if bad:
            raise ConfigError(f"verify.{key}: unknown suites {bad}")
    for name, tol in cfg.verify.get("tolerances", {}).items():
        path = f"verify.tolerances.{name}"
        if name not in DEFAULT_TOLERANCES:
            raise ConfigError(f"unknown key {path}")
        _check_type(path, tol, _NUM)
        if not tol > 0:
            raise ConfigError(f"{path}: tolerance must be positive")
    bad = [n for n in cfg.scan.get("checks", []) if n not in SUITE_NAMES]
    if bad:
        raise ConfigError(f"scan.checks: unknown suites {bad}")
    return cfg


def load_config(path: Optional[str]) -> Config:
    if path is None:
        return Config()
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return parse_config(data)


def _env_seed() -> Optional[int]:
    raw = os.environ.get("KOHNLAB_SEED")
    if raw is None or raw == "":
        return None
    try:
        return int(raw)
    except ValueError as exc:
        raise ConfigError(f"KOHNLAB_SEED: expected an integer, got {raw!r}") from exc


def _fmt(x) -> str:
    """Angles to 12 decimals, the accuracy the solvers reach."""
    def fixed(v: float) -> str:
        text = f"{v:.12f}"
        return text[1:] if text.startswith("-") and float(text) == 0 else text
    if isinstance(x, complex) or np.iscomplexobj(x):
        z = complex(x)
        im = fixed(z.imag)
        return f"{fixed(z.real)}{im if im.startswith('-') else '+' + im}i"
    return fixed(float(x))


# ---------------------------------------------------------------------------
# subcommands

def cmd_solve(cfg: Config, k: Optional[float] = None, tau: Optional[float] = None,
              out=None) -> int:
    """Print the phase-shift estimates and defects at one k."""
    out = out or sys.stdout
    problem = cfg.radial_problem(k)
    if tau is None and "tau" in cfg.problem:
        tau = float(cfg.problem["tau"])
    table = assemble_elements(problem, cfg.basis_set())
    coeffs = extract_det_coefficients(table)
    ta = optimize_tau(coeffs)
    p = lambda *a: print(*a, file=out)
    p(f"k = {problem.k:g}")
    p(f"Gamma = {coeffs.gamma:.6e}")
    p(f"degenerate = {ta.degenerate_flag}")
    for s in ta.singular_taus:
        p(f"singular tau = {s.tau!r} ({s.classification}, f^2/Gamma^2 = {s.ratio:.3e})")

    status = EXIT_OK
    if tau is None:
        if ta.has_optimum:
            tau = ta.tau0
            p(f"tau0 = {ta.tau0!r}  tau1 = {ta.tau1!r}")
            p(f"eta1 = {_fmt(ta.eta1)}")
        else:
            # no preferred tau; report at the best-conditioned sample
            p(f"no optimum: {ta.degenerate_flag} degenerate k")
            status = EXIT_SINGULAR
            tau = max((0.0, 0.25 * np.pi, 0.5 * np.pi, 0.75 * np.pi),
                      key=lambda t: abs(coeffs.g(t)))
    tau = float(np.mod(tau, np.pi))
    try:
        sol = solve_generalized(kohn_system(table, tau), table)
    except SingularSystemError as exc:
        p(f"tau = {tau!r}")
        p(f"error: det(A) = 0 at this tau ({exc})")
        return EXIT_SINGULAR
    p(f"tau = {tau!r}")
    p(f"eta_v = {_fmt(sol.eta_v)}")
    p(f"eta_v (determinant route) = {_fmt(eta_via_determinants(coeffs, tau))}")
    p(f"slope = {float(slope(coeffs, tau)):.6e}")
    try:
        ec = solve_complex(table, tau, "K")
        p(f"eta'_v = {_fmt(ec.eta_v)}")
    except SingularSystemError as exc:
        p(f"eta'_v: {exc}")
        return EXIT_SINGULAR
    rep = equivalence_check(table, coeffs=coeffs)
    p(f"re_match_defect = {rep.re_match_defect:.3e}")
    p(f"im_formula_defect = {rep.im_formula_defect:.3e}")
    p(f"tau_flatness = {rep.tau_flatness:.3e}")
    for note in rep.notes:
        p(f"note: {note}")
    return status


def _summary(rows, out) -> None:
    def worst(name):
        vals = [getattr(r, name) for r in rows if math.isfinite(getattr(r, name))]
        return max(vals) if vals else float("nan")
    print(f"rows = {len(rows)}", file=out)
    print(f"worst re_match_defect = {worst('re_match_defect'):.3e}", file=out)
    print(f"worst im_formula_defect = {worst('im_formula_defect'):.3e}", file=out)
    flagged = [r for r in rows if r.error or r.degenerate_flag != "none"]
    print("singular/degenerate k: " + (", ".join(
        f"{r.k:g} ({r.error or r.degenerate_flag})" for r in flagged) or "none"), file=out)


def _ensure_dir(spec: ScanSpec) -> None:
    for path in (spec.csv_path, spec.json_path):
        if path:
            Path(path).parent.mkdir(parents=True, exist_ok=True)


def cmd_scan(cfg: Config, out_dir: Optional[str] = None, jobs: Optional[int] = None,
             seed: Optional[int] = None, checks: Optional[Sequence[str]] = None,
             out=None) -> int:
    """Run the k-scan, write CSV and JSON and print a summary."""
    out = out or sys.stdout
    checks = tuple(checks if checks is not None else cfg.scan.get("checks", ()))
    spec = cfg.scan_spec(checks, out_dir, jobs, seed)
    problem, basis = cfg.radial_problem(), cfg.basis_set()
    rows, suites = evaluate(spec, problem, basis, spec.checks)
    try:
        _ensure_dir(spec)
        if spec.csv_path:
            write_csv(rows, spec.csv_path)
        if spec.json_path:
            write_json(spec.json_path, rows, suites, metadata(spec, problem, basis))
    except OSError as exc:
        print(f"error: cannot write output: {exc}", file=sys.stderr)
        return EXIT_USAGE
    _summary(rows, out)
    for s in suites:
        print(f"{s.status} {s.name} worst={s.worst:.3e} tol={s.tolerance:g}", file=out)
    for path in (spec.csv_path, spec.json_path):
        if path:
            print(f"wrote {path}", file=out)
    return EXIT_OK


def cmd_verify(cfg: Config, suites: Optional[Sequence[str]] = None, jobs: Optional[int] = None,
               seed: Optional[int] = None, out=None) -> int:
    """Run the verification suites; exit 0 iff every suite passes or is skipped."""
    out = out or sys.stdout
    names = tuple(suites if suites is not None else cfg.verify.get("suites", SUITE_NAMES))
    spec = cfg.scan_spec(names, jobs=jobs, seed=seed)
    _, results = evaluate(spec, cfg.radial_problem(), cfg.basis_set(), names)
    ok = True
    for s in results:
        line = f"{s.status:4s} {s.name:13s} worst={s.worst:.3e} tol={s.tolerance:g}"
        if s.skipped:
            line += f" degenerate-skip at {len(s.skipped)} k"
        print(line, file=out)
        for msg in s.failures[:5]:
            print(f"     {msg}", file=out)
        ok = ok and s.passed
    return EXIT_OK if ok else EXIT_SINGULAR


def _suite_list(text: str) -> list:
    names = [n.strip() for n in text.split(",") if n.strip()]
    bad = [n for n in names if n not in SUITE_NAMES]
    if bad:
        raise argparse.ArgumentTypeError(f"unknown suites {bad}; choose from {', '.join(SUITE_NAMES)}")
    return names


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="kohnlab", description="Kohn variational scattering workbench")
    sub = ap.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="TOML configuration file")
    common.add_argument("--jobs", type=int, metavar="N", help="worker processes for scans")

    s = sub.add_parser("solve", parents=[common], help="estimates at one k")
    s.add_argument("--k", type=float, help="wavenumber (overrides problem.k)")
    s.add_argument("--tau", type=float, help="mixing phase; default is the optimum tau0")

    sc = sub.add_parser("scan", parents=[common], help="k-scan to CSV and JSON")
    sc.add_argument("--out", metavar="DIR", help="output directory (overrides output.dir)")
    sc.add_argument("--suites", type=_suite_list, metavar="LIST",
                    help="comma-separated suites to run alongside the scan")

    v = sub.add_parser("verify", parents=[common], help="run identity suites")
    v.add_argument("--suites", type=_suite_list, metavar="LIST",
                   help=f"comma-separated subset of {', '.join(SUITE_NAMES)}")
    return ap


def main(argv: Optional[Sequence[str]] = None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    try:
        cfg = load_config(args.config)
        seed = _env_seed()
        if args.jobs is not None and args.jobs < 1:
            raise ConfigError("--jobs must be at least 1")
        if args.command == "solve":
            return cmd_solve(cfg, args.k, args.tau)
        if args.command == "scan":
            return cmd_scan(cfg, args.out, args.jobs, seed, args.suites)
        return cmd_verify(cfg, args.suites, args.jobs, seed)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (SingularSystemError, DegenerateError, CoefficientExtractionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SINGULAR
    except AssemblyError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SINGULAR


if __name__ == "__main__":
    sys.exit(main())
