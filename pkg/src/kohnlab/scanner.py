"""k-scans and the verification suites.

Every k is evaluated independently: assemble the table, extract the
determinant coefficients, optimize tau, solve the complex problem and,
when requested, run the named identity checks.  Failures at one k are
recorded in that k's row and never abort the scan.
"""
from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from typing import Callable, Optional, Sequence

import numpy as np

from .algebra import (
    CoefficientExtractionError,
    DetCoefficients,
    SingularSystemError,
    desnanot_jacobi_check,
    det_scale,
    extract_det_coefficients,
    is_singular,
    kohn_system,
    phase_distance,
    theta_invariance_check,
)
from .kohn_complex import EquivalenceReport, equivalence_check, solve_complex
from .kohn_real import (
    DegenerateError,
    TauAnalysis,
    eta_via_determinants,
    optimize_tau,
    sign_scan_count,
    slope,
    solve_generalized,
    stationary_det_taus,
)
from .lmatrix import correspondence_check, decompose, eta_via_L
from .model import AssemblyError, BasisSet, ElementTable, RadialProblem, assemble_elements

SCHEMA_VERSION = 1

SUITE_NAMES = ("antisymmetry", "theta", "gamma_sq", "desnanot", "routes", "slope_fd",
               "tan_identity", "flatness", "equivalence", "im_formula", "ts_relations",
               "lmatrix")

DEFAULT_TOLERANCES = {
    "antisymmetry": 1e-8,
    "theta": 1e-9,
    "gamma_sq": 1e-8,
    "desnanot": 1e-12,
    "routes": 1e-9,
    "slope_fd": 1e-6,
    "tan_identity": 1e-8,
    "flatness": 1e-10,
    "equivalence": 1e-10,
    "im_formula": 1e-9,
    "ts_relations": 1e-9,
    "lmatrix": 1e-8,
}

# secondary bounds inside the lmatrix suite
DETL_RTOL = 1e-10
L_ROUTE_TOL = 1e-9

FD_STEP = 1e-4
FD_WIDTH_FRACTION = 0.01
N_FD = 64
N_RANDOM = 8
N_DESNANOT = 100

_EXPECTED = (SingularSystemError, CoefficientExtractionError, DegenerateError,
             AssemblyError, ArithmeticError, ValueError)


@dataclass(frozen=True)
class ScanSpec:
    """What to scan and where to write it.

    ``k_grid`` is ``(k_min, k_max, count)`` sampled with ``linspace``;
    ``tau_count`` sizes the uniform tau grid over [0, pi) used by the
    suites; ``checks`` names suites to run alongside the scan.
    """

    k_grid: tuple = (0.1, 1.0, 10)
    tau_count: int = 16
    checks: tuple = ()
    csv_path: Optional[str] = None
    json_path: Optional[str] = None
    seed: int = 0
    jobs: int = 1
    tolerances: dict = field(default_factory=dict)

    def __post_init__(self):
        k_min, k_max, count = self.k_grid
        object.__setattr__(self, "k_grid", (float(k_min), float(k_max), int(count)))
        object.__setattr__(self, "checks", tuple(self.checks))
        if not k_min > 0:
            raise ValueError("k_min must be positive")
        if int(count) < 2 or self.tau_count < 2:
            raise ValueError("k and tau counts must be at least 2")
        if not k_max > k_min:
            raise ValueError("k_max must exceed k_min")
        if self.jobs < 1:
            raise ValueError("jobs must be at least 1")
        unknown = sorted(set(self.checks) - set(SUITE_NAMES))
        if unknown:
            raise ValueError(f"unknown suites {unknown}; choose from {list(SUITE_NAMES)}")
        bad = sorted(set(self.tolerances) - set(SUITE_NAMES))
        if bad:
            raise ValueError(f"tolerances given for unknown suites {bad}")
        if any(not v > 0 for v in self.tolerances.values()):
            raise ValueError("tolerances must be positive")

    @property
    def k_values(self) -> np.ndarray:
        return np.linspace(*self.k_grid)

    def tolerance(self, name: str) -> float:
        return float(self.tolerances.get(name, DEFAULT_TOLERANCES[name]))


@dataclass
class ScanRow:
    k: float
    tau0: float = math.nan
    tau1: float = math.nan
    eta0: float = math.nan
    eta1: float = math.nan
    slope_at_tau0: float = math.nan
    gamma: float = math.nan
    re_eta_c: float = math.nan
    im_eta_c: float = math.nan
    re_match_defect: float = math.nan
    im_formula_defect: float = math.nan
    singular_tau_count: int = -1
    classifications: str = ""
    degenerate_flag: str = "none"
    pole_flags: str = ""
    error: str = ""


ROW_FIELDS = tuple(f.name for f in fields(ScanRow))


@dataclass
class SuiteResult:
    """Worst residual of one suite over the scan.

    ``skipped`` lists k values where the check is undefined (degenerate
    k); ``failures`` holds messages for exceeded bounds and crashes.
    """

    name: str
    tolerance: float
    worst: float = 0.0
    checked: int = 0
    skipped: list = field(default_factory=list)
    failures: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.failures and not self.worst > self.tolerance

    @property
    def status(self) -> str:
        if not self.passed:
            return "FAIL"
        return "SKIP" if self.checked == 0 else "PASS"


# ---------------------------------------------------------------------------
# one k

class _Point:
    """Lazily computed quantities for one k, shared between suites."""

    def __init__(self, table: ElementTable, n_tau: int, seed: int, index: int):
        self.table = table
        self.n_tau = n_tau
        self.seed = seed
        self.index = index
        self.coeffs: DetCoefficients = extract_det_coefficients(table)
        self.analysis: TauAnalysis = optimize_tau(self.coeffs)
        self._eq: Optional[EquivalenceReport] = None
        self._dec = None

    @property
    def taus(self) -> np.ndarray:
        return np.linspace(0.0, np.pi, self.n_tau, endpoint=False)

    def rng(self, salt: int) -> np.random.Generator:
        return np.random.default_rng((self.seed, self.index, salt))

    @property
    def degenerate(self) -> bool:
        return self.analysis.degenerate_flag == "k_g"

    @property
    def equivalence(self) -> EquivalenceReport:
        if self._eq is None:
            self._eq = equivalence_check(self.table, self.n_tau, N_RANDOM,
                                         int(self.rng(1).integers(2 ** 31)), self.coeffs)
        return self._eq

    @property
    def dec(self):
        if self._dec is None:
            self._dec = decompose(self.table)
        return self._dec


def _reference_tau(coeffs: DetCoefficients) -> float:
    """The sample tau with the largest |det(A)|."""
    taus = (0.0, 0.25 * np.pi, 0.5 * np.pi, 0.75 * np.pi)
    return max(taus, key=lambda t: abs(coeffs.g(t)))


def _fill_row(row: ScanRow, pt: _Point) -> None:
    c, ta = pt.coeffs, pt.analysis
    row.gamma = float(c.gamma)
    row.degenerate_flag = ta.degenerate_flag
    try:
        row.singular_tau_count = stationary_det_taus(c).singularity_count
    except DegenerateError:
        row.singular_tau_count = len(ta.singular_taus)
    row.classifications = ";".join(f"{s.classification}@{s.tau:.9f}" for s in ta.singular_taus)
    row.pole_flags = ";".join(str(f) for f in pt.dec.pole_flags)

    if ta.has_optimum:
        row.tau0, row.tau1, row.eta0, row.eta1 = ta.tau0, ta.tau1, ta.eta0, ta.eta1
        row.slope_at_tau0 = ta.slope_at_tau0
        tau_c = ta.tau0
    elif ta.degenerate_flag == "k_g":
        # eta_v does not depend on tau; report its common value
        tau_c = _reference_tau(c)
        row.eta0 = eta_via_determinants(c, tau_c)
        row.slope_at_tau0 = 0.0
    else:
        return
    eta_c = solve_complex(pt.table, tau_c, "K").eta_v
    row.re_eta_c, row.im_eta_c = float(np.real(eta_c)), float(np.imag(eta_c))
    row.re_match_defect = phase_distance(row.re_eta_c, row.eta0)
    if row.slope_at_tau0 < 1.0:
        row.im_formula_defect = abs(row.im_eta_c - math.atanh(row.slope_at_tau0))


# ---------------------------------------------------------------------------
# suites; each returns a residual, or None when undefined at this k

def _suite_antisymmetry(pt: _Point):
    t = pt.table
    return abs((t.sc - t.cs) - t.k_tilde) / t.k_tilde, ""


def _suite_theta(pt: _Point):
    if pt.degenerate:
        return None, "Gamma = 0"
    rep = theta_invariance_check(pt.table, pt.taus)
    if not rep.thetas:
        return math.inf, "every tau sample singular"
    return rep.relative_spread, ""


def _suite_gamma_sq(pt: _Point):
    if pt.degenerate:
        return None, "Gamma = 0"
    c = pt.coeffs
    return abs(c.calG - c.gamma ** 2) / c.gamma ** 2, ""


def _suite_routes(pt: _Point):
    table, c = pt.table, pt.coeffs
    scale = det_scale(table)
    worst = 0.0
    for tau in pt.rng(2).uniform(0.0, np.pi, pt.n_tau):
        try:
            sol = solve_generalized(kohn_system(table, tau), table, scale)
            worst = max(worst, phase_distance(sol.eta_v, eta_via_determinants(c, tau)))
        except SingularSystemError:
            continue
    eq = pt.equivalence
    if eq.failed_leg:
        return math.inf, f"complex route: {eq.failed_leg}"
    return max(worst, eq.route_defect), ""


def _unwrapped_eta(c: DetCoefficients, tau: np.ndarray, ref: np.ndarray) -> np.ndarray:
    """eta_v(tau) shifted by multiples of pi onto the branch nearest ``ref``."""
    eta = np.array([eta_via_determinants(c, t) for t in tau])
    return eta + np.pi * np.round((ref - eta) / np.pi)


def _suite_slope_fd(pt: _Point):
    if pt.degenerate:
        return None, "Gamma = 0"
    c = pt.coeffs
    scan = slope(c, np.linspace(0.0, np.pi, 512, endpoint=False))
    if np.any(scan < 0):
        return math.inf, "negative slope"
    taus = (np.arange(N_FD) + 0.5) * np.pi / N_FD
    scale = abs(c.calA) + abs(c.calB) + abs(c.calC)
    worst = 0.0
    for tau in taus:
        # shrink the step inside narrow slope peaks next to anomalous taus
        width = np.hypot(c.f(tau), c.g(tau)) / np.hypot(c.fp(tau), c.gp(tau))
        h = min(FD_STEP, FD_WIDTH_FRACTION * width)
        stencil = tau + np.array([-h, -0.5 * h, 0.5 * h, h])
        if any(is_singular(c.g(t), scale) for t in stencil):
            continue
        centre = eta_via_determinants(c, tau)
        e = _unwrapped_eta(c, stencil, np.full(4, centre))
        d1 = (e[3] - e[0]) / (2 * h)
        d2 = (e[2] - e[1]) / h
        fd = (4 * d2 - d1) / 3
        an = float(slope(c, tau))
        worst = max(worst, abs(fd - an) / an)
    return worst, ""


def _equivalence_leg(pt: _Point, attr: str):
    if pt.degenerate:
        return None, "Gamma = 0"
    eq = pt.equivalence
    if eq.failed_leg:
        return math.inf, f"{eq.failed_leg}: {'; '.join(eq.notes)}"
    return getattr(eq, attr), ""


def _suite_equivalence(pt: _Point):
    return _equivalence_leg(pt, "re_match_defect")


def _suite_im_formula(pt: _Point):
    if not pt.degenerate and pt.analysis.has_optimum and pt.analysis.slope_at_tau0 >= 1.0:
        return None, "slope(tau0) >= 1"
    return _equivalence_leg(pt, "im_formula_defect")


def _suite_tan_identity(pt: _Point):
    val, msg = _equivalence_leg(pt, "tan_identity_defect")
    if val is not None and not msg and not pt.equivalence.tan_identity_im_negative:
        return math.inf, "imaginary side not strictly negative"
    return val, msg


def _suite_flatness(pt: _Point):
    eq = pt.equivalence
    if eq.failed_leg:
        return math.inf, eq.failed_leg
    return max(eq.tau_flatness, eq.det_circle_defect), ""


def _suite_ts_relations(pt: _Point):
    eq = pt.equivalence
    if eq.failed_leg:
        return math.inf, eq.failed_leg
    return max(eq.s_relation_defect, eq.t_relation_conj_defect,
               eq.t_imag_negation_defect, eq.variant_path_defect), ""


def _suite_lmatrix(pt: _Point):
    dec, c = pt.dec, pt.coeffs
    corr = correspondence_check(dec, c).max_residual
    dets = np.array([np.linalg.det(dec.L_bar(t)) for t in pt.taus])
    ref = abs(dec.detL) or 1.0
    spread = float(np.max(np.abs(dets - dec.detL))) / ref
    route = 0.0
    scale = abs(c.calA) + abs(c.calB) + abs(c.calC)
    for tau in pt.taus:
        if is_singular(c.g(tau), scale):
            continue
        try:
            route = max(route, phase_distance(eta_via_L(dec, tau), eta_via_determinants(c, tau)))
        except SingularSystemError:
            continue
    msgs = []
    if spread > DETL_RTOL:
        msgs.append(f"det(L) tau spread {spread:.3e} > {DETL_RTOL:g}")
    if route > L_ROUTE_TOL:
        msgs.append(f"L route off by {route:.3e}")
    if msgs:
        return math.inf, "; ".join(msgs)
    return corr, ""


_SUITES: dict = {
    "antisymmetry": _suite_antisymmetry,
    "theta": _suite_theta,
    "gamma_sq": _suite_gamma_sq,
    "routes": _suite_routes,
    "slope_fd": _suite_slope_fd,
    "tan_identity": _suite_tan_identity,
    "flatness": _suite_flatness,
    "equivalence": _suite_equivalence,
    "im_formula": _suite_im_formula,
    "ts_relations": _suite_ts_relations,
    "lmatrix": _suite_lmatrix,
}


def desnanot_suite(seed: int = 0, n: int = N_DESNANOT, size: int = 5) -> float:
    """Worst Desnanot-Jacobi residual over seeded random symmetric matrices.

    Each matrix is checked at several index tuples, including repeated
    rows or columns.  Residuals are relative to the largest term.
    """
    rng = np.random.default_rng((seed, 7))
    worst = 0.0
    for _ in range(n):
        a = rng.standard_normal((size, size))
        X = a + a.T
        for _ in range(4):
            i, j, p, q = (int(v) for v in rng.integers(1, size + 1, 4))
            worst = max(worst, desnanot_jacobi_check(X, i, j, p, q, relative=True))
    return worst


def _evaluate(args) -> tuple:
    """Row and suite residuals for one k (module level so it pickles)."""
    problem, basis, k, index, n_tau, seed, checks = args
    row = ScanRow(k=float(k))
    results = {}
    try:
        table = assemble_elements(problem.with_k(float(k)), basis)
        pt = _Point(table, n_tau, seed, index)
    except _EXPECTED as exc:
        row.error = f"{type(exc).__name__}: {exc}"
        row.degenerate_flag = "error"
        return row, {name: (math.inf, row.error) for name in checks}
    try:
        _fill_row(row, pt)
    except _EXPECTED as exc:
        row.error = f"{type(exc).__name__}: {exc}"
    for name in checks:
        try:
            results[name] = _SUITES[name](pt)
        except Exception as exc:  # a crashing suite fails with diagnostics
            results[name] = (math.inf, f"crash: {type(exc).__name__}: {exc}")
    return row, results


def _map(fn: Callable, items: list, jobs: int) -> list:
    if jobs <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=min(jobs, len(items))) as pool:
        return list(pool.map(fn, items))


def evaluate(spec: ScanSpec, problem: RadialProblem, basis: BasisSet,
             checks: Sequence[str] = ()) -> tuple:
    """Rows plus suite results for every k in ``spec``.

    Returns ``(rows, suites)`` with rows in k order and suites in the
    order of ``checks``.
    """
    checks = tuple(checks)
    per_k = tuple(c for c in checks if c != "desnanot")
    items = [(problem, basis, k, i, spec.tau_count, spec.seed, per_k)
             for i, k in enumerate(spec.k_values)]
    out = _map(_evaluate, items, spec.jobs)
    rows = [r for r, _ in out]

    suites = []
    for name in checks:
        res = SuiteResult(name, spec.tolerance(name))
        if name == "desnanot":
            try:
                res.worst = desnanot_suite(spec.seed)
                res.checked = 1
            except Exception as exc:
                res.failures.append(f"crash: {type(exc).__name__}: {exc}")
            suites.append(res)
            continue
        for row, (_, results) in zip(rows, out):
            value, msg = results[name]
            if value is None:
                res.skipped.append(row.k)
                continue
            res.checked += 1
            if not np.isfinite(value):
                res.failures.append(f"k={row.k:g}: {msg}")
                continue
            if value > res.tolerance:
                res.failures.append(f"k={row.k:g}: residual {value:.3e}")
            res.worst = max(res.worst, float(value))
        suites.append(res)
    return rows, suites


def run_scan(spec: ScanSpec, problem: RadialProblem, basis: BasisSet) -> list:
    """One ScanRow per k of ``spec``, ordered by k.  Writes the outputs named in ``spec``."""
    rows, suites = evaluate(spec, problem, basis, spec.checks)
    if spec.csv_path:
        write_csv(rows, spec.csv_path)
    if spec.json_path:
        write_json(spec.json_path, rows, suites, metadata(spec, problem, basis))
    return rows


# ---------------------------------------------------------------------------
# output

def _clean(x):
    if isinstance(x, float) and not math.isfinite(x):
        return None
    if isinstance(x, (np.floating, np.integer)):
        return _clean(x.item())
    if isinstance(x, dict):
        return {k: _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    return x


def _csv_value(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_csv(rows: Sequence[ScanRow], path: str) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ROW_FIELDS)
        for row in rows:
            w.writerow([_csv_value(getattr(row, name)) for name in ROW_FIELDS])


def metadata(spec: ScanSpec, problem: RadialProblem, basis: BasisSet) -> dict:
    pot = problem.potential
    return {
        "potential": {"kind": pot.kind, "V0": pot.V0, "a": pot.a},
        "problem": {"N": problem.N, "beta": problem.beta, "r_max": problem.r_max,
                    "n_quad": problem.n_quad, "converge": problem.converge},
        "basis": {"powers": list(basis.powers), "exponents": list(basis.exponents),
                  "normalize": basis.normalize},
        "scan": {"k_grid": list(spec.k_grid), "tau_count": spec.tau_count,
                 "checks": list(spec.checks), "seed": spec.seed},
    }


def suite_dict(res: SuiteResult) -> dict:
    return {"name": res.name, "status": res.status, "worst": res.worst,
            "tolerance": res.tolerance, "checked": res.checked,
            "skipped": list(res.skipped), "failures": list(res.failures)}


def write_json(path: str, rows: Sequence[ScanRow], suites: Sequence[SuiteResult] = (),
               meta: Optional[dict] = None) -> None:
    doc = {
        "schema_version": SCHEMA_VERSION,
        "metadata": meta or {},
        "fields": list(ROW_FIELDS),
        "rows": [asdict(r) for r in rows],
        "suites": [suite_dict(s) for s in suites],
    }
    with open(path, "w") as fh:
        json.dump(_clean(doc), fh, indent=2, allow_nan=False)
        fh.write("\n")


def census(coeffs: DetCoefficients) -> tuple:
    """(stationary-point count, 512-point sign-scan count) for det(A; tau)."""
    try:
        count = stationary_det_taus(coeffs).singularity_count
    except DegenerateError:
        count = 0
    return count, sign_scan_count(coeffs)
