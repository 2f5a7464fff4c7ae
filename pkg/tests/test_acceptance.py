"""Acceptance criteria 1-12 at their stated tolerances.

Each test records its criterion number and worst residual; conftest.py
prints one PASS/FAIL line per criterion in the terminal summary.
"""
import math

import numpy as np
import pytest
from scipy.optimize import brentq

from kohnlab.algebra import (
    det_scale,
    extract_det_coefficients,
    is_singular,
    kohn_system,
    phase_distance,
    theta_invariance_check,
    wrap_phase,
)
from kohnlab.kohn_real import (
    eta_via_determinants,
    optimize_tau,
    sign_scan_count,
    slope,
    solve_generalized,
    stationary_det_taus,
)
from kohnlab.lmatrix import correspondence_check, decompose, eta_via_L
from kohnlab.model import BasisSet, RadialProblem, assemble_elements
from kohnlab.oracle import exact_phase_shift, square_well_phase_shift
from kohnlab.scanner import desnanot_suite

from conftest import K_GRID

HALF_PI = 0.5 * math.pi
TAU16 = np.linspace(0.0, math.pi, 16, endpoint=False)


@pytest.fixture
def record(record_property):
    def _record(n, title, worst=None, what="worst"):
        record_property("criterion", n)
        record_property("title", title)
        if worst is not None:
            record_property("what", what)
            record_property("worst", float(worst))
    return _record


def test_criterion_01_antisymmetry(tables, record):
    worst = max(abs((t.sc - t.cs) - t.k_tilde) / t.k_tilde for t in tables.values())
    record(1, "antisymmetry <S,C> - <C,S> = k~", worst)
    assert worst < 1e-8


def test_criterion_02_theta_invariance(tables, record):
    worst = 0.0
    for t in tables.values():
        rep = theta_invariance_check(t, TAU16)
        assert len(rep.thetas) >= 14
        worst = max(worst, rep.relative_spread)
    record(2, "Theta = det(A) I invariant over 16 tau", worst)
    assert worst < 1e-9


def test_criterion_03_gamma_squared(coeffs, record):
    worst = max(abs(c.calG - c.gamma ** 2) / c.gamma ** 2 for c in coeffs.values())
    record(3, "G = Gamma^2 and Desnanot-Jacobi", worst, "G defect")
    assert worst < 1e-8


def test_criterion_03_desnanot_jacobi(record):
    worst = desnanot_suite(seed=0, n=100, size=5)
    record(3, "G = Gamma^2 and Desnanot-Jacobi", worst, "Desnanot-Jacobi")
    assert worst < 1e-12


def test_criterion_04_routes(tables, coeffs, record):
    rng = np.random.default_rng(4)
    worst, used = 0.0, 0
    for k, t in tables.items():
        scale = det_scale(t)
        for tau in rng.uniform(0.0, math.pi, 16):
            if is_singular(coeffs[k].g(tau), scale):
                continue
            lin = solve_generalized(kohn_system(t, tau), t, scale).eta_v
            worst = max(worst, phase_distance(lin, eta_via_determinants(coeffs[k], tau)))
            used += 1
    record(4, "determinant route equals linear solve", worst)
    assert used >= 150
    assert worst < 1e-9


def _fd_slope(c, tau):
    # Richardson-combined centred differences; the step follows the local
    # width of the slope profile so narrow peaks are resolved
    width = np.hypot(c.f(tau), c.g(tau)) / np.hypot(c.fp(tau), c.gp(tau))
    h = min(1e-4, 0.01 * width)
    pts = tau + np.array([-h, -0.5 * h, 0.5 * h, h])
    centre = eta_via_determinants(c, tau)
    e = np.array([eta_via_determinants(c, p) for p in pts])
    e = e + math.pi * np.round((centre - e) / math.pi)
    d1 = (e[3] - e[0]) / (2 * h)
    d2 = (e[2] - e[1]) / h
    return (4 * d2 - d1) / 3


def test_criterion_05_slope_formula(coeffs, record):
    taus = (np.arange(64) + 0.5) * math.pi / 64
    worst, minimum = 0.0, math.inf
    for c in coeffs.values():
        minimum = min(minimum, float(np.min(slope(c, np.linspace(0, math.pi, 2048)))))
        for tau in taus:
            an = float(slope(c, tau))
            worst = max(worst, abs(_fd_slope(c, tau) - an) / an)
    record(5, "slope Gamma^2/(f^2+g^2) vs finite differences", worst)
    assert minimum >= 0.0
    assert worst < 1e-6


def test_criterion_06_optimizer_structure(tables, coeffs, record):
    sep = gap = val = 0.0
    for k, c in coeffs.items():
        ta = optimize_tau(c)
        assert ta.has_optimum
        sep = max(sep, abs(np.mod(ta.tau1 - ta.tau0, math.pi) - HALF_PI))
        gap = max(gap, abs(abs(wrap_phase(ta.eta0 - ta.eta1)) - HALF_PI))
        val = max(val, phase_distance(ta.eta0, eta_via_determinants(c, ta.tau0)))
        lin = solve_generalized(kohn_system(tables[k], ta.tau0), tables[k]).eta_v
        val = max(val, phase_distance(ta.eta0, lin))
    record(6, "tau1 - tau0 = pi/2, eta separation, common-value formula", max(sep, gap, val))
    assert sep < 1e-12
    assert gap < 1e-9
    assert val < 1e-9


def test_criterion_07_complex_flatness(equivalence, record):
    flat = max(r.tau_flatness for r in equivalence.values())
    circle = max(r.det_circle_defect for r in equivalence.values())
    record(7, "complex estimate flat in tau, det(A') on a circle", max(flat, circle))
    assert flat < 1e-10
    assert circle < 1e-10


def test_criterion_08_equivalence(equivalence, record):
    re = max(r.re_match_defect for r in equivalence.values())
    im = max(r.im_formula_defect for r in equivalence.values())
    neg = max(r.t_imag_negation_defect for r in equivalence.values())
    s_rel = max(r.s_relation_defect for r in equivalence.values())
    record(8, "Re/Im of the complex estimate, T and S variants", max(re, im, neg, s_rel),
           "Re/Im/T/S")
    assert re < 1e-10
    assert im < 1e-9
    assert neg < 1e-9
    assert s_rel < 1e-9


def test_criterion_08_t_relation_as_stated(equivalence, record):
    """a^T_v = i conj(a'_v), checked exactly as written.

    For an exact phase shift a'_v = t/(i - t) and a^T_v = t/(1 - i t), so
    a^T_v = -i conj(a'_v).  The relation as written differs from that by a
    sign and is expected to fail; the corrected form is asserted in
    test_kohn_complex.py.
    """
    worst = max(r.t_relation_defect for r in equivalence.values())
    record(8, "Re/Im of the complex estimate, T and S variants", worst, "a^T = i conj(a')")
    assert worst < 1e-9


def test_criterion_09_tan_difference_formulas(equivalence, record):
    worst = max(r.tan_identity_defect for r in equivalence.values())
    record(9, "tan(eta_i - eta' - tau_i + tau) = (a + i Gamma^2)/b", worst)
    assert all(r.tan_identity_im_negative for r in equivalence.values())
    assert worst < 1e-8


def test_criterion_10_lmatrix(tables, coeffs, record):
    corr = spread = 0.0
    for k, t in tables.items():
        dec = decompose(t)
        corr = max(corr, correspondence_check(dec, coeffs[k]).max_residual)
        dets = [np.linalg.det(dec.L_bar(tau)) for tau in TAU16]
        spread = max(spread, max(abs(d - dec.detL) for d in dets) / abs(dec.detL))
    record(10, "L-matrix correspondences, det(L') invariance, pole cancellation",
           corr, "correspondence")
    assert corr < 1e-8
    assert spread < 1e-10


def test_criterion_10_pole_cancellation(basis, record):
    table = lambda k: assemble_elements(RadialProblem(k=k), basis)
    # an eigenvalue E_f - E of the closed block changes sign in [0.15, 0.2]
    k_s = brentq(lambda k: decompose(table(k)).F, 0.15, 0.2, xtol=1e-14)
    dec_s = decompose(table(k_s))
    assert np.min(np.abs(dec_s.lam)) < 1e-12 * np.max(np.abs(dec_s.lam))
    c_s = extract_det_coefficients(table(k_s))
    assert abs(2 * c_s.calAt + c_s.calB) < 1e-8 * c_s.scale

    tau = optimize_tau(c_s).tau0
    grid = np.linspace(k_s - 0.01, k_s + 0.01, 200)
    eta, L11 = [], []
    for k in grid:
        dec = decompose(table(k))
        eta.append(eta_via_L(dec, tau))
        L11.append(abs(dec.L[0, 0]))
    steps = np.abs(np.mod(np.diff(eta) + HALF_PI, math.pi) - HALF_PI)
    ratio = float(np.max(steps) / np.median(steps))
    record(10, "L-matrix correspondences, det(L') invariance, pole cancellation",
           ratio, "max/median eta step")
    # the individual L entries do pass through the pole ...
    assert max(L11) > 50 * min(L11)
    # ... while eta_v(k) has no jump
    assert ratio < 10


def test_criterion_11_oracle_vs_analytic(record):
    worst = max(phase_distance(exact_phase_shift(RadialProblem(k=k)).eta_exact,
                               square_well_phase_shift(k, 1.0, 1.0)) for k in K_GRID)
    record(11, "physical accuracy against the ODE oracle", worst, "oracle vs analytic")
    assert worst < 1e-8


def test_criterion_11_kohn_vs_oracle(coeffs, record):
    worst = 0.0
    for k, c in coeffs.items():
        eta0 = optimize_tau(c).eta0
        worst = max(worst, phase_distance(eta0, exact_phase_shift(RadialProblem(k=k)).eta_exact))
    record(11, "physical accuracy against the ODE oracle", worst, "Kohn vs oracle")
    assert worst < 1e-3


DETUNED = BasisSet((1, 1, 2, 2), (0.5, 3.0, 0.5, 3.0))


def test_criterion_12_census(coeffs, record):
    for c in coeffs.values():
        count = stationary_det_taus(c).singularity_count
        assert count in (0, 1, 2)
        assert count == sign_scan_count(c, 512)
    record(12, "singularity census and anomalous windows")


@pytest.mark.parametrize("k", [0.3, 0.7])
def test_criterion_12_anomalous_window(k, record):
    c = extract_det_coefficients(assemble_elements(RadialProblem(k=k), DETUNED))
    singular = optimize_tau(c).singular_taus
    labels = sorted(s.classification for s in singular)
    assert labels == ["anomalous", "anomaly-free"]
    peaks = {}
    for s in singular:
        window = np.linspace(s.tau - 0.01, s.tau + 0.01, 4001)
        peaks[s.classification] = float(np.max(slope(c, window)))
    record(12, "singularity census and anomalous windows", peaks["anomalous"],
           f"anomalous peak k={k}")
    assert next(s.ratio for s in singular if s.classification == "anomalous") < 0.1
    assert peaks["anomalous"] > 1e2
    assert peaks["anomaly-free"] < 1.0
