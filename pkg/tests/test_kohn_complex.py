import math
from dataclasses import replace

import numpy as np
import pytest

from kohnlab.algebra import extract_det_coefficients, phase_distance
from kohnlab.kohn_complex import (
    det_complex_closed,
    equivalence_check,
    eta_complex_via_determinants,
    im_from_slope,
    solve_complex,
    uv,
    uv_identity_residual,
    variants_from_k,
)
from kohnlab.kohn_real import optimize_tau
from kohnlab.model import BasisSet, Potential, RadialProblem, assemble_elements

TAU16 = np.linspace(0.0, math.pi, 16, endpoint=False)


def gap(a: complex, b: complex) -> float:
    return math.hypot(phase_distance(a.real, b.real), a.imag - b.imag)


@pytest.fixture(scope="module")
def zero_table():
    return assemble_elements(RadialProblem(Potential("zero"), k=0.5), BasisSet.default())


def test_zero_potential_complex_estimate(zero_table):
    c = extract_det_coefficients(zero_table)
    for tau in TAU16:
        for variant in ("K", "T", "S"):
            assert abs(solve_complex(zero_table, tau, variant).eta_v) < 1e-10
        assert abs(eta_complex_via_determinants(c, tau)) < 1e-10


def test_zero_potential_report_is_degenerate(zero_table):
    rep = equivalence_check(zero_table)
    assert rep.degenerate_flag == "k_g"
    assert abs(rep.eta_c) < 1e-10


def test_det_on_circle(tables, coeffs):
    for k, t in tables.items():
        c = coeffs[k]
        radius = abs(c.calA - c.calC - 1j * c.calB)
        for tau in TAU16:
            d = solve_complex(t, tau).detA_c
            assert abs(abs(d) - radius) < 1e-10 * c.scale
            assert abs(d - det_complex_closed(c, tau)[0]) < 1e-10 * c.scale


def test_t_relation_with_conjugation_sign(equivalence):
    # a^T_v = -i conj(a'_v): conjugating the K trial function gives the T one times -i
    for rep in equivalence.values():
        assert rep.t_relation_conj_defect < 1e-9


def test_t_and_s_from_k_match_direct_solves(tables):
    for tau in (0.2, 1.3, 2.6):
        t = tables[0.5]
        k_sol = solve_complex(t, tau, "K")
        derived = variants_from_k(k_sol)
        for name in ("T", "S"):
            direct = solve_complex(t, tau, name)
            assert abs(derived[name][0] - direct.a_v) < 1e-9 * max(1.0, abs(direct.a_v))
            assert gap(derived[name][1], direct.eta_v) < 1e-9


def test_s_relation(equivalence):
    for rep in equivalence.values():
        assert rep.s_relation_defect < 1e-9
        assert rep.variant_path_defect < 1e-9


def test_determinant_route_matches_linear(tables, coeffs):
    for k in (0.1, 0.5, 1.0):
        for tau in TAU16:
            lin = solve_complex(tables[k], tau).eta_v
            assert gap(lin, eta_complex_via_determinants(coeffs[k], tau)) < 1e-9


def test_uv_identity(coeffs):
    for c in coeffs.values():
        res = np.abs(uv_identity_residual(c, TAU16))
        assert np.max(res) < 1e-10 * c.scale ** 2


def test_uv_zeros_coincide_only_when_det_singular(coeffs):
    c = coeffs[0.5]
    u, v, _, _ = uv(c, TAU16)
    # v + i u = det(A') is never zero for the default basis
    assert np.min(np.abs(v + 1j * u)) > 1e-3 * c.scale
    tuned = replace(c, calA=c.calC, calB=0.0)
    u, v, _, _ = uv(tuned, TAU16)
    assert np.max(np.abs(v + 1j * u)) < 1e-14 * c.scale
    assert np.max(np.abs(det_complex_closed(tuned, TAU16)[0])) < 1e-14 * c.scale


def test_equivalence_at_half(equivalence):
    rep = equivalence[0.5]
    assert rep.re_match_defect < 1e-10
    assert rep.failed_leg == ""


def test_imaginary_part(equivalence):
    for rep in equivalence.values():
        assert rep.im_formula_defect < 1e-9
        assert rep.eta_c.imag > 0
        assert rep.t_imag_negation_defect < 1e-9
        assert not rep.slope_ge_one


def test_imaginary_part_from_slope(coeffs, equivalence):
    for k, c in coeffs.items():
        ta = optimize_tau(c)
        assert im_from_slope(c, ta.tau0) == pytest.approx(equivalence[k].eta_c.imag, rel=1e-9)


def test_flatness_and_theta(equivalence):
    for rep in equivalence.values():
        assert rep.tau_flatness < 1e-10
        assert rep.det_circle_defect < 1e-10
        assert rep.theta_complex_defect < 1e-9
        assert rep.route_defect < 1e-9


def test_unknown_variant(tables):
    with pytest.raises(ValueError):
        solve_complex(tables[0.5], 0.3, "Q")
    with pytest.raises(ValueError):
        variants_from_k(solve_complex(tables[0.5], 0.3, "T"))
