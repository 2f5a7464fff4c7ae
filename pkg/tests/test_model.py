import numpy as np
import pytest

from kohnlab.algebra import DomainError, rotate
from kohnlab.model import AssemblyError, BasisSet, Potential, RadialProblem, assemble_elements

ZERO = Potential("zero")


@pytest.mark.parametrize("k", [0.2, 0.5, 0.9])
def test_zero_potential_makes_s_exact(k):
    t = assemble_elements(RadialProblem(ZERO, k=k), BasisSet.default(4))
    assert abs(t.ss) < 1e-12
    assert np.max(np.abs(t.s_chi)) < 1e-12
    assert np.max(np.abs(t.chi_s)) < 1e-12


def test_k_tilde():
    # N^2 k / 2, the Wronskian of S and C under H = -1/2 d^2/dr^2
    assert RadialProblem(k=0.5, N=1.0).k_tilde == pytest.approx(0.25, abs=1e-15)
    assert RadialProblem(k=0.5, N=2.0).k_tilde == pytest.approx(1.0, abs=1e-15)


def test_antisymmetry_small_basis():
    t = assemble_elements(RadialProblem(k=0.5, beta=1.0), BasisSet.default(4))
    assert abs((t.sc - t.cs) - 0.25) < 1e-8


@pytest.mark.parametrize("kind,V0", [("square-well", 1.0), ("exponential", 2.0),
                                     ("exponential", -0.5), ("zero", 0.0)])
@pytest.mark.parametrize("M", [0, 1, 3, 8])
def test_antisymmetry_all_potentials(kind, V0, M):
    t = assemble_elements(RadialProblem(Potential(kind, V0, 1.0), k=0.7), BasisSet.default(M))
    assert abs((t.sc - t.cs) - t.k_tilde) < 1e-8 * t.k_tilde
    assert np.array_equal(t.chi_chi, t.chi_chi.T)


def test_tail_invariance():
    basis = BasisSet.default()
    a = assemble_elements(RadialProblem(k=0.4, r_max=80.0), basis)
    b = assemble_elements(RadialProblem(k=0.4, r_max=120.0), basis)
    for name in ("ss", "sc", "cs", "cc"):
        assert abs(getattr(a, name) - getattr(b, name)) <= 1e-10 * a.scale()
    assert np.max(np.abs(a.chi_chi - b.chi_chi)) <= 1e-10 * a.scale()


def test_normalization_does_not_change_ratio():
    raw = assemble_elements(RadialProblem(k=0.5), BasisSet.default(2, normalize=False))
    nrm = assemble_elements(RadialProblem(k=0.5), BasisSet.default(2))
    scale = BasisSet.default(2).norms()
    np.testing.assert_allclose(nrm.s_chi / scale, raw.s_chi, rtol=1e-10)
    assert nrm.ss == pytest.approx(raw.ss, rel=1e-12)


def test_hermiticity_of_open_closed_pairs():
    t = assemble_elements(RadialProblem(k=0.5), BasisSet.default())
    assert np.max(np.abs(t.s_chi - t.chi_s)) < 1e-10 * t.scale()
    assert np.max(np.abs(t.c_chi - t.chi_c)) < 1e-10 * t.scale()


def test_coarse_rule_without_refinement_is_inaccurate():
    fine = assemble_elements(RadialProblem(k=0.5), BasisSet.default())
    coarse = assemble_elements(RadialProblem(k=0.5, n_quad=4, converge=False), BasisSet.default())
    assert coarse.n_quad_used == 4
    assert abs(coarse.cc - fine.cc) > 1e-6 * fine.scale()


def test_refinement_cap_raises():
    with pytest.raises(AssemblyError):
        # a single two-point rule per panel cannot converge in the allowed doublings
        assemble_elements(RadialProblem(k=0.5, n_quad=2), BasisSet((1,), (40.0,)))


@pytest.mark.parametrize("kwargs", [dict(k=0.0), dict(k=-1.0), dict(N=0.0), dict(beta=-1.0),
                                    dict(n_quad=1), dict(r_max=0.5)])
def test_problem_validation(kwargs):
    with pytest.raises(ValueError):
        RadialProblem(**kwargs)


def test_potential_validation():
    with pytest.raises(ValueError):
        Potential("gaussian")
    with pytest.raises(ValueError):
        Potential("square-well", V0=-1.0)


def test_basis_validation():
    with pytest.raises(ValueError):
        BasisSet((1, 2), (0.8,))
    with pytest.raises(ValueError):
        BasisSet((1,), (-0.8,))


def test_rotation_identity_and_quarter_turn():
    t = assemble_elements(RadialProblem(k=0.5), BasisSet.default(4))
    r0 = rotate(t, 0.0)
    assert (r0.ss, r0.sc, r0.cs, r0.cc) == (t.ss, t.sc, t.cs, t.cc)
    np.testing.assert_array_equal(r0.s_chi, t.s_chi)
    r = rotate(t, 0.5 * np.pi)
    assert r.ss == pytest.approx(t.cc, abs=1e-14)
    assert r.cc == pytest.approx(t.ss, abs=1e-14)
    assert r.sc == pytest.approx(-t.cs, abs=1e-14)
    assert r.cs == pytest.approx(-t.sc, abs=1e-14)


def test_rotation_keeps_antisymmetry(tables):
    t = tables[0.5]
    r = rotate(t, 0.3)
    assert abs((r.sc - r.cs) - (t.sc - t.cs)) < 1e-12


def test_rotation_domain():
    t = assemble_elements(RadialProblem(k=0.5), BasisSet.default(1))
    with pytest.raises(DomainError):
        rotate(t, np.pi)
    with pytest.raises(DomainError):
        rotate(t, -0.1)
