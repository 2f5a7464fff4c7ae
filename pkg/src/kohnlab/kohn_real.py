"""Generalized (real) Kohn method: linear solve, determinant route and tau optimization."""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .algebra import (
    ClosedBlock,
    DetCoefficients,
    KohnSystem,
    SingularSystemError,
    bordered_det,
    bordered_solve,
    det_amplitude,
    det_scale,
    is_singular,
    reduced_functional,
    rotate,
    wrap_phase,
)
from .model import ElementTable

GAMMA_RTOL = 1e-10
XY_RTOL = 1e-12
ANOMALY_FREE_RATIO = 10.0
ANOMALOUS_RATIO = 0.1


class DegenerateError(ArithmeticError):
    """Raised for the k_h case, where no preferred tau exists."""


@dataclass(frozen=True)
class GeneralizedSolution:
    tau: float
    a_t: float
    p: np.ndarray
    I_value: float
    eta_v: float
    detA: float
    detAt: float
    condition_estimate: float

    def tan_residual(self, k_tilde: float) -> float:
        """|tan(eta_v - tau) - (a_t - I/k~)|, zero up to rounding."""
        t = np.tan(self.eta_v - self.tau)
        return abs(t - (self.a_t - self.I_value / k_tilde))


def solve_generalized(system: KohnSystem, table: ElementTable,
                      scale: float | None = None) -> GeneralizedSolution:
    """Solve A x = -b at the system's tau and form the phase-shift estimate.

    Parameters
    ----------
    system : KohnSystem
        Matrix and right-hand side at one tau.
    table : ElementTable
        The unrotated table the system was built from; supplies the
        <S', .> integrals for the reduced functional.
    scale : float, optional
        Reference size for the singularity test.  Defaults to the largest
        |det(A; tau)| over tau.

    Raises
    ------
    SingularSystemError
        If |det(A)| is below the conditioning floor.
    """
    closed = ClosedBlock.from_matrix(system.A[1:, 1:])
    d = float(bordered_det(system.A, closed))
    if scale is None:
        scale = det_scale(table, closed)
    if is_singular(d, scale):
        raise SingularSystemError("Kohn method breaks down at this tau", d,
                                  np.linalg.cond(system.A))
    x = bordered_solve(system.A, -system.b, closed)
    rt = rotate(table, float(np.mod(system.tau, np.pi)))
    I = float(reduced_functional(rt, x))
    eta = wrap_phase(system.tau + np.arctan(x[0] - I / table.k_tilde))
    return GeneralizedSolution(
        tau=float(system.tau), a_t=float(x[0]), p=x[1:], I_value=I, eta_v=eta,
        detA=d, detAt=float(bordered_det(system.A_tilde, closed)),
        condition_estimate=float(np.linalg.cond(system.A)),
    )


def _coeff_scale(coeffs: DetCoefficients) -> float:
    return det_amplitude(coeffs.calA, coeffs.calB, coeffs.calC)


def tan_via_determinants(coeffs: DetCoefficients, tau: float) -> float:
    """tan(eta_v - tau) from the four determinant coefficients alone."""
    g = coeffs.g(tau)
    if is_singular(g, _coeff_scale(coeffs)):
        raise SingularSystemError("det(A; tau) = 0, phase shift undefined", g)
    s, c = np.sin(tau), np.cos(tau)
    return (coeffs.calBt * s * c + coeffs.calB * c * c + coeffs.calD) / g


def eta_via_determinants(coeffs: DetCoefficients, tau: float) -> float:
    """Phase shift at ``tau`` without solving the Kohn equations."""
    return wrap_phase(tau + np.arctan(tan_via_determinants(coeffs, tau)))


def slope(coeffs: DetCoefficients, tau):
    """d eta_v / d tau = Gamma^2 / (f^2 + g^2); accepts scalar or array tau."""
    f, g = coeffs.f(tau), coeffs.g(tau)
    den = f * f + g * g
    floor = (1e-300 + 1e-30 * coeffs.scale ** 2)
    if np.any(den <= floor):
        raise SingularSystemError("f = g = 0: slope undefined (possible k in Z)", 0.0)
    return coeffs.gamma ** 2 / den


def third_derivative(coeffs: DetCoefficients, tau: float) -> float:
    """d^3 eta_v / d tau^3 at a root of X sin 2tau + Y cos 2tau."""
    X, Y = coeffs.calX, coeffs.calY
    f, g = coeffs.f(tau), coeffs.g(tau)
    return -4 * coeffs.gamma ** 2 * (X * np.cos(2 * tau) - Y * np.sin(2 * tau)) / (f * f + g * g) ** 2


def f_at_singular(coeffs: DetCoefficients, tau: float) -> float:
    """f at a root of g, refined with f^2 - f g' - Gamma^2 = 0.

    The direct difference det(A~) - Gamma cancels badly when f is of
    order Gamma^2 / g'; the quadratic's roots are taken in stable form
    and the one nearest the direct value is returned.
    """
    gp, G2 = coeffs.gp(tau), coeffs.gamma ** 2
    disc = np.sqrt(gp * gp + 4 * G2)
    big = 0.5 * (gp + np.copysign(disc, gp)) if gp != 0 else 0.5 * disc
    small = -G2 / big if big != 0 else -0.5 * disc
    direct = coeffs.f(tau)
    return big if abs(direct - big) <= abs(direct - small) else small


def det_roots(coeffs: DetCoefficients) -> list:
    """Roots of det(A; tau) = 0 in [0, pi), ascending."""
    A, B, C = coeffs.calA, coeffs.calB, coeffs.calC
    m = 0.5 * (A + C)
    R = np.hypot(0.5 * (C - A), 0.5 * B)
    if R == 0 or abs(m) > R:
        return []
    phi = np.arctan2(0.5 * B, 0.5 * (C - A))
    dpsi = np.arccos(np.clip(-m / R, -1.0, 1.0))
    roots = {float(np.mod(0.5 * (phi + sgn * dpsi), np.pi)) for sgn in (1, -1)}
    return sorted(roots)


@dataclass(frozen=True)
class SingularTau:
    tau: float
    classification: str
    ratio: float


def classify_singular(coeffs: DetCoefficients, tau: float,
                      gamma_zero: bool = False) -> SingularTau:
    """Label a root of g by f^2 / Gamma^2.

    The ratio is infinite when Gamma vanishes (or ``gamma_zero`` says it
    is numerically zero): eta_v is then flat in tau and the root harmless.
    """
    f = f_at_singular(coeffs, tau)
    G2 = coeffs.gamma ** 2
    ratio = f * f / G2 if G2 > 0 and not gamma_zero else np.inf
    if ratio > ANOMALY_FREE_RATIO:
        label = "anomaly-free"
    elif ratio < ANOMALOUS_RATIO:
        label = "anomalous"
    else:
        label = "marginal"
    return SingularTau(tau, label, float(ratio))


@dataclass(frozen=True)
class TauAnalysis:
    tau0: float = float("nan")
    tau1: float = float("nan")
    eta0: float = float("nan")
    eta1: float = float("nan")
    slope_at_tau0: float = float("nan")
    slope_at_tau1: float = float("nan")
    singular_taus: tuple = ()
    degenerate_flag: str = "none"
    third_derivative_agrees: bool = True

    @property
    def has_optimum(self) -> bool:
        return self.degenerate_flag == "none"


def optimize_tau(coeffs: DetCoefficients) -> TauAnalysis:
    """Locate the tau minimizing d eta_v / d tau and report singular taus.

    The minimizer is picked by comparing slopes at the two stationary
    points; the third-derivative sign is recorded as a cross-check.
    Degenerate k (Gamma = 0 or X = Y = 0) yield ``degenerate_flag`` set
    and NaN optimizer fields.
    """
    scale = _coeff_scale(coeffs)
    gamma_zero = abs(coeffs.gamma) <= GAMMA_RTOL * scale
    singular = tuple(classify_singular(coeffs, t, gamma_zero) for t in det_roots(coeffs))
    if gamma_zero:
        return TauAnalysis(singular_taus=singular, degenerate_flag="k_g")
    X, Y = coeffs.calX, coeffs.calY
    if np.hypot(X, Y) <= XY_RTOL * scale * scale:
        return TauAnalysis(singular_taus=singular, degenerate_flag="k_h")

    ta = float(np.mod(0.5 * np.arctan2(-Y, X), 0.5 * np.pi))
    tb = ta + 0.5 * np.pi
    sa, sb = float(slope(coeffs, ta)), float(slope(coeffs, tb))
    tau0, tau1 = (ta, tb) if sa <= sb else (tb, ta)
    s0, s1 = min(sa, sb), max(sa, sb)
    agrees = third_derivative(coeffs, tau0) > 0 > third_derivative(coeffs, tau1)

    t_common = np.arctan2(2 * coeffs.calAt + coeffs.calB - 2 * coeffs.gamma,
                          coeffs.calA + coeffs.calC)
    return TauAnalysis(
        tau0=tau0, tau1=tau1,
        eta0=wrap_phase(tau0 + t_common), eta1=wrap_phase(tau1 + t_common),
        slope_at_tau0=s0, slope_at_tau1=s1, singular_taus=singular,
        third_derivative_agrees=bool(agrees),
    )


class StationaryDet(NamedTuple):
    tau_d1: float
    tau_d2: float
    singularity_count: int
    det_d1: float
    det_d2: float


def stationary_det_taus(coeffs: DetCoefficients) -> StationaryDet:
    """Extrema of det(A; tau) and the implied number of singular taus."""
    A, B, C = coeffs.calA, coeffs.calB, coeffs.calC
    scale = _coeff_scale(coeffs)
    if np.hypot(A - C, B) <= XY_RTOL * scale:
        raise DegenerateError("A = C and B = 0: det(A; tau) is constant in tau")
    t1 = float(np.mod(0.5 * np.arctan2(-B, A - C), 0.5 * np.pi))
    t2 = t1 + 0.5 * np.pi
    g1, g2 = float(coeffs.g(t1)), float(coeffs.g(t2))
    if is_singular(g1, scale) or is_singular(g2, scale):
        count = 1
    else:
        count = 0 if g1 * g2 > 0 else 2
    return StationaryDet(t1, t2, count, g1, g2)


def sign_scan_count(coeffs: DetCoefficients, n: int = 512) -> int:
    """Number of sign changes of det(A; tau) on a periodic n-point grid."""
    taus = np.linspace(0.0, np.pi, n, endpoint=False)
    g = coeffs.g(taus)
    return int(np.count_nonzero(np.sign(g) != np.sign(np.roll(g, -1))))
