"""Reference phase shifts independent of the variational machinery."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import quad

from .algebra import DomainError, HALF_PI, wrap_phase
from .model import ElementTable, RadialProblem

STEPS_PER_RMAX = 20000


class OracleConfigError(ValueError):
    pass


@dataclass(frozen=True)
class OracleResult:
    eta_exact: float
    match_radius: float
    step: float
    richardson_error_estimate: float
    eta_coarse: float = float("nan")
    eta_fine: float = float("nan")


def _rk4_segment(V, k2: float, r0: float, r1: float, n: int, u: float, du: float):
    """Integrate u'' = (2V - k^2) u over [r0, r1] in n equal RK4 steps."""
    h = (r1 - r0) / n
    r = r0
    for _ in range(n):
        q0 = 2.0 * V(r) - k2
        qm = 2.0 * V(r + 0.5 * h) - k2
        q1 = 2.0 * V(r + h) - k2
        k1u, k1v = du, q0 * u
        k2u, k2v = du + 0.5 * h * k1v, qm * (u + 0.5 * h * k1u)
        k3u, k3v = du + 0.5 * h * k2v, qm * (u + 0.5 * h * k2u)
        k4u, k4v = du + h * k3v, q1 * (u + h * k3u)
        u += h * (k1u + 2 * k2u + 2 * k3u + k4u) / 6.0
        du += h * (k1v + 2 * k2v + 2 * k3v + k4v) / 6.0
        r += h
    return u, du


def _scalar_potential(problem: RadialProblem):
    pot = problem.potential
    if pot.kind == "zero":
        return lambda r: 0.0
    if pot.kind == "square-well":
        # left-continuous at the edge so a step ending on r = a sees the well
        return lambda r: -pot.V0 if r < pot.a * (1 + 1e-14) else 0.0
    return lambda r: -pot.V0 * math.exp(-r / pot.a)


def _integrate(problem: RadialProblem, R: float, h: float) -> float:
    V = _scalar_potential(problem)
    k = problem.k
    nodes = [0.0] + [b for b in problem.potential.breakpoints if 0 < b < R] + [R]
    u, du = 0.0, 1.0
    for r0, r1 in zip(nodes[:-1], nodes[1:]):
        n = max(1, int(round((r1 - r0) / h)))
        if problem.potential.kind == "square-well" and r0 >= problem.potential.a:
            V_out = (lambda r: 0.0)
            u, du = _rk4_segment(V_out, k * k, r0, r1, n, u, du)
        else:
            u, du = _rk4_segment(V, k * k, r0, r1, n, u, du)
    return wrap_phase(math.atan2(k * u, du) - k * R)


def exact_phase_shift(problem: RadialProblem, match_radius: float | None = None,
                      step: float | None = None) -> OracleResult:
    """Phase shift from direct integration of the radial equation.

    Fixed-step RK4 from u(0) = 0, u'(0) = 1 to ``match_radius`` (default
    ``r_max``), with steps aligned to potential discontinuities.  The step
    is halved once and the two results combined by Richardson
    extrapolation; the returned error estimate is |eta_h/2 - eta_h| / 15.

    Raises
    ------
    OracleConfigError
        If the match radius lies inside the potential support.
    """
    R = problem.r_max if match_radius is None else float(match_radius)
    if R <= problem.potential.support_radius():
        raise OracleConfigError(
            f"match radius {R} inside potential support {problem.potential.support_radius():.3g}")
    h = problem.r_max / STEPS_PER_RMAX if step is None else float(step)
    e1 = _integrate(problem, R, h)
    e2 = _integrate(problem, R, 0.5 * h)
    d = np.mod(e2 - e1 + HALF_PI, np.pi) - HALF_PI
    return OracleResult(wrap_phase(e2 + d / 15.0), R, h, abs(d) / 15.0, e1, e2)


def square_well_phase_shift(k: float, V0: float, a: float) -> float:
    """Closed-form s-wave phase shift of an attractive square well."""
    kappa = math.sqrt(k * k + 2.0 * V0)
    return wrap_phase(math.atan(k / kappa * math.tan(kappa * a)) - k * a)


def born_phase_shift(problem: RadialProblem) -> float:
    """First Born approximation tan(eta) = -(2/k) int V sin^2(kr) dr, by quadrature."""
    pot, k = problem.potential, problem.k
    upper = max(problem.r_max, pot.support_radius())
    pts = list(pot.breakpoints) or None
    val, _ = quad(lambda r: float(pot(r)) * math.sin(k * r) ** 2, 0.0, upper,
                  points=pts, limit=400)
    return math.atan(-2.0 / k * val)


# explicit cofactor expansions for tiny matrices
def _det1(m):
    return m[0][0]


def _det2(m):
    return m[0][0] * m[1][1] - m[0][1] * m[1][0]


def _det3(m):
    return (m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]))


_DETS = {1: _det1, 2: _det2, 3: _det3}


def _rotated(table: ElementTable, tau: float):
    c, s = math.cos(tau), math.sin(tau)
    ss, sc, cs, cc = table.ss, table.sc, table.cs, table.cc
    bar = {
        "ss": c * c * ss + c * s * (sc + cs) + s * s * cc,
        "sc": -c * s * ss + c * c * sc - s * s * cs + s * c * cc,
        "cs": -c * s * ss - s * s * sc + c * c * cs + s * c * cc,
        "cc": s * s * ss - s * c * (sc + cs) + c * c * cc,
        "s_chi": [c * x + s * y for x, y in zip(table.s_chi, table.c_chi)],
        "c_chi": [-s * x + c * y for x, y in zip(table.s_chi, table.c_chi)],
        "chi_s": [c * x + s * y for x, y in zip(table.chi_s, table.chi_c)],
    }
    return bar


def _matrices(table: ElementTable, tau: float):
    r = _rotated(table, tau)
    M = table.M
    X = table.chi_chi
    A = [[r["cc"]] + list(r["c_chi"])]
    for i in range(M):
        A.append([r["c_chi"][i]] + [X[i][j] for j in range(M)])
    b = [r["cs"]] + list(r["chi_s"])
    At = [[-b[i]] + A[i][1:] for i in range(M + 1)]
    return A, b, At, r


def brute_force_small_m(table: ElementTable, tau: float):
    """Phase shift and determinant coefficients by explicit cofactor algebra.

    Only for M <= 2, where every determinant is at most 3 x 3.  Returns
    ``(eta_v, coefficients)`` with the coefficients in a plain dict.
    """
    M = table.M
    if M > 2:
        raise DomainError(f"brute force limited to M <= 2, got M={M}")
    det = _DETS[M + 1]
    dets = {}
    for t in (0.0, 0.25 * math.pi, 0.5 * math.pi):
        A, _, At, _ = _matrices(table, t)
        dets[t] = (det(A), det(At))
    calC = dets[0.0][0]
    calA = dets[0.5 * math.pi][0]
    calB = 2 * dets[0.25 * math.pi][0] - calA - calC
    calAt = dets[0.5 * math.pi][1]

    # Theta from Cramer's rule at the requested tau
    A, b, At, r = _matrices(table, tau)
    dA = det(A)
    x = []
    for col in range(M + 1):
        Ac = [row[:] for row in A]
        for i in range(M + 1):
            Ac[i][col] = -b[i]
        x.append(det(Ac) / dA)
    I = r["ss"] + x[0] * r["sc"] + sum(x[1 + i] * r["s_chi"][i] for i in range(M))
    theta = dA * I
    gamma = theta / table.k_tilde
    denom = 2 * calAt + calB
    gamma_closed = ((calAt + calB) * calAt + calA * calC) / denom if denom != 0 else float("nan")
    calD = (calAt * calAt - calA * calC) / denom if denom != 0 else calAt - gamma
    s, c = math.sin(tau), math.cos(tau)
    g = calA * s * s + calB * s * c + calC * c * c
    tan = ((calA - calC) * s * c + calB * c * c + calD) / g
    eta = wrap_phase(tau + math.atan(tan))
    d = calAt - gamma
    coeffs = {
        "calA": calA, "calB": calB, "calC": calC, "calAt": calAt,
        "theta": theta, "gamma": gamma, "gamma_closed": gamma_closed, "calD": calD,
        "calG": d * (d + calB) + calA * calC,
        "eta_linear": wrap_phase(tau + math.atan(x[0] - I / table.k_tilde)),
    }
    return eta, coeffs
