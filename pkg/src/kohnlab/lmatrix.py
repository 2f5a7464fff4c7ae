"""Closed-block diagonalization and the 2x2 L matrix.

The closed block X_ij = <chi_i, (H - E) chi_j> is diagonalized once per k.
Its eigenvalues are written E_f - E; the L matrix folds the closed
functions into the open block through pole sums over f.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import eigh

from .algebra import ClosedBlock, DetCoefficients, SingularSystemError, dot2, residual2, rotation, wrap_phase
from .model import ElementTable

POLE_RTOL = 1e-6
# pairs below this fraction of the coefficient scale are compared absolutely
CORR_FLOOR = 1e-6
REFINE_STEPS = 3


@dataclass(frozen=True)
class LDecomposition:
    """Eigen-decomposition of the closed block and the tau = 0 L matrix.

    ``lam[f]`` is E_f - E.  Coupling vectors are the open-channel
    integrals rotated into the eigenbasis: ``s_D[f] = <S, chi^D_f>`` and
    ``chis_D[f] = <chi^D_f, S>``, likewise for C.

    ``F`` is det of the closed block from the pivoted LU; ``F_eig`` is the
    product of eigenvalues.  They agree mathematically, but the product
    inherits the absolute error of the smallest eigenvalue.
    """

    k: float
    k_tilde: float
    lam: np.ndarray
    vectors: np.ndarray
    s_D: np.ndarray
    c_D: np.ndarray
    chis_D: np.ndarray
    chic_D: np.ndarray
    L: np.ndarray
    F: float
    eps_pole: float
    pole_flags: tuple = ()
    F_eig: float = float("nan")

    @property
    def E(self) -> float:
        return 0.5 * self.k * self.k

    @property
    def E_f(self) -> np.ndarray:
        return self.lam + self.E

    @property
    def detL(self) -> float:
        L = self.L
        return float(L[0, 0] * L[1, 1] - L[0, 1] * L[1, 0])

    @property
    def near_pole(self) -> bool:
        return bool(self.pole_flags)

    def L_bar(self, tau: float) -> np.ndarray:
        R = rotation(tau)
        return R @ self.L @ R.T


def _pole_weights(X: np.ndarray, U: np.ndarray, lam: np.ndarray, col: np.ndarray) -> np.ndarray:
    """w_f = <chi^D_f, Y> / (E_f - E), refined against X in the eigenbasis.

    Nearly dependent closed functions give eigenvalues many decades below
    the largest; the plain quotient loses accuracy through eigenvector
    error.  Refinement sweeps with compensated residuals recover it.
    """
    w = (U.T @ col) / lam
    for _ in range(REFINE_STEPS):
        w = w + (U.T @ residual2(col, X, U @ w)) / lam
    return w


def decompose(table: ElementTable) -> LDecomposition:
    """Diagonalize the closed block and fold it into the open 2x2 block."""
    M = table.M
    if M == 0:
        L = np.array([[table.ss, table.sc], [table.cs, table.cc]])
        return LDecomposition(table.k, table.k_tilde, np.zeros(0), np.zeros((0, 0)),
                              *(np.zeros(0),) * 4, L, 1.0, 0.0, (), 1.0)
    X = table.chi_chi
    lam, U = eigh(X)
    s_D, c_D = U.T @ table.s_chi, U.T @ table.c_chi
    chis_D, chic_D = U.T @ table.chi_s, U.T @ table.chi_c
    ws = _pole_weights(X, U, lam, table.chi_s)
    wc = _pole_weights(X, U, lam, table.chi_c)
    L = np.array([
        [table.ss - dot2(table.s_chi, U @ ws), table.sc - dot2(table.s_chi, U @ wc)],
        [table.cs - dot2(table.c_chi, U @ ws), table.cc - dot2(table.c_chi, U @ wc)],
    ])
    eps = POLE_RTOL * float(np.max(np.abs(lam + table.E)))
    flags = tuple(int(f) for f in np.flatnonzero(np.abs(lam) < eps))
    return LDecomposition(table.k, table.k_tilde, lam, U, s_D, c_D, chis_D, chic_D,
                          L, ClosedBlock.from_matrix(X).det, eps, flags, float(np.prod(lam)))


def tan_via_L(dec: LDecomposition, tau: float) -> float:
    """tan(eta_v - tau) = -L'21 / L'22 - det(L) / (k~ L'22)."""
    Lb = dec.L_bar(tau)
    if not abs(Lb[1, 1]) > 1e-12 * np.max(np.abs(dec.L)):
        raise SingularSystemError("L'22 = 0: det(A) vanishes at this tau", float(Lb[1, 1]))
    return float(-Lb[1, 0] / Lb[1, 1] - dec.detL / (dec.k_tilde * Lb[1, 1]))


def eta_via_L(dec: LDecomposition, tau: float) -> float:
    return wrap_phase(tau + np.arctan(tan_via_L(dec, tau)))


@dataclass
class CorrespondenceReport:
    residuals: dict = field(default_factory=dict)
    pole_proximity: bool = False

    @property
    def max_residual(self) -> float:
        return max(self.residuals.values()) if self.residuals else 0.0


def _rel(a: float, b: float, scale: float = 0.0) -> float:
    den = max(abs(a), abs(b))
    if den <= CORR_FLOOR * scale:
        den = scale
    return abs(a - b) / den if den > 0 else 0.0


def correspondence_check(dec: LDecomposition, coeffs: DetCoefficients) -> CorrespondenceReport:
    """Relative residuals between the determinant coefficients and F-scaled L entries.

    Each residual is relative to the larger side.  Pairs where both sides
    are below ``CORR_FLOOR`` times the coefficient scale (a zero potential,
    say) are measured against that scale instead.
    """
    F, L, kt = dec.F, dec.L, dec.k_tilde
    sc = coeffs.scale
    res = {
        "A": _rel(coeffs.calA, F * L[0, 0], sc),
        "C": _rel(coeffs.calC, F * L[1, 1], sc),
        "B": _rel(coeffs.calB, -F * (L[0, 1] + L[1, 0]), sc),
        "At": _rel(coeffs.calAt, F * L[0, 1], sc),
        "2At+B": _rel(2 * coeffs.calAt + coeffs.calB, F * kt, sc),
        "Gamma": _rel(coeffs.gamma, F * dec.detL / kt, sc),
    }
    return CorrespondenceReport(res, dec.near_pole)


def L_antisymmetry_defect(dec: LDecomposition) -> float:
    """|(L12 - L21) - k~| / k~."""
    return abs(dec.L[0, 1] - dec.L[1, 0] - dec.k_tilde) / dec.k_tilde
