"""Phase rotation, Kohn matrices and the tau-independent determinant coefficients."""
from __future__ import annotations

import warnings
from dataclasses import dataclass, replace
from typing import Iterable, Sequence

import numpy as np
from scipy.linalg import LinAlgWarning, lu_factor, lu_solve, solve_triangular

from .model import ElementTable

HALF_PI = 0.5 * np.pi
SINGULAR_RTOL = 1e-12
EPS_S_FACTOR = 1e-8


class DomainError(ValueError):
    pass


class SingularSystemError(ArithmeticError):
    """The Kohn matrix is singular or numerically singular."""

    def __init__(self, message: str, det: complex = 0.0, condition: float = np.inf):
        super().__init__(f"{message}: det(A)={det:.6g}, cond={condition:.3g}")
        self.det = det
        self.condition = condition


class CoefficientExtractionError(ArithmeticError):
    pass


def det(a: np.ndarray) -> complex:
    """Determinant by LU with partial pivoting; sign from the pivot parity."""
    a = np.asarray(a)
    n = a.shape[0]
    if n == 0:
        return 1.0
    if n == 1:
        return a[0, 0]
    with warnings.catch_warnings():
        # exactly singular minors are legitimate here; the zero pivot gives det 0
        warnings.simplefilter("ignore", LinAlgWarning)
        lu, piv = lu_factor(a, check_finite=False)
    parity = np.count_nonzero(piv != np.arange(n)) % 2
    d = np.prod(np.diag(lu))
    return -d if parity else d


_SPLITTER = 134217729.0  # 2**27 + 1
REFINE_STEPS = 3


def _split(a):
    c = _SPLITTER * a
    hi = c - (c - a)
    return hi, a - hi


def _two_prod(a, b):
    p = a * b
    ah, al = _split(a)
    bh, bl = _split(b)
    return p, ((ah * bh - p) + ah * bl + al * bh) + al * bl


def _two_sum(a, b):
    s = a + b
    z = s - a
    return s, (a - (s - z)) + (b - z)


def dot2(a, b):
    """Dot product with a compensated (doubled-precision) accumulator.

    Complex inputs are split into real and imaginary parts.
    """
    a = np.asarray(a)
    b = np.asarray(b)
    if np.iscomplexobj(a) or np.iscomplexobj(b):
        ar, ai = np.real(a).astype(float), np.imag(a).astype(float)
        br, bi = np.real(b).astype(float), np.imag(b).astype(float)
        re = dot2(np.concatenate((ar, -ai)), np.concatenate((br, bi)))
        im = dot2(np.concatenate((ar, ai)), np.concatenate((bi, br)))
        return complex(re, im)
    p, e = _two_prod(a.astype(float), b.astype(float))
    s = c = 0.0
    for pi, ei in zip(p, e):
        s, t = _two_sum(s, pi)
        c += t + ei
    return float(s + c)


def residual2(rhs, X, w):
    """rhs - X @ w with every product and sum carried error-free."""
    p, e = _two_prod(X, w[None, :])
    s = np.array(rhs, dtype=float)
    c = np.zeros_like(s)
    for j in range(X.shape[1]):
        s, t = _two_sum(s, -p[:, j])
        c = c + t - e[:, j]
    return s + c


def _lu_det_correction(X, lu, piv) -> float:
    """det(X) / det(L U) to second order in the factorization defect.

    The pivot product alone carries a relative error near cond(X) * eps.
    With E = P X - L U formed error-free, det(X) = det(L U) det(I + Z) for
    Z = (L U)^-1 E, and Z is small enough for a two-term expansion.
    """
    n = X.shape[0]
    perm = np.arange(n)
    for i, p in enumerate(piv):
        perm[i], perm[p] = perm[p], perm[i]
    L = np.tril(lu, -1) + np.eye(n)
    U = np.triu(lu)
    prod, err = _two_prod(L[:, :, None], U[None, :, :])
    s = np.array(X[perm], dtype=float)
    c = np.zeros_like(s)
    for k in range(n):
        s, t = _two_sum(s, -prod[:, k, :])
        c = c + t - err[:, k, :]
    E = s + c
    Z = solve_triangular(U, solve_triangular(L, E, lower=True, unit_diagonal=True))
    tr = np.trace(Z)
    return float(1.0 + tr + 0.5 * (tr * tr - np.trace(Z @ Z)))


@dataclass(frozen=True)
class ClosedBlock:
    """Pivoted LU of the chi-chi block, shared by every tau at one k.

    Kohn determinants and solves are done by eliminating this block first.
    Solves are polished by iterative refinement with compensated residuals,
    since nearly dependent short-range functions leave the block with a
    condition number near 1e8.
    """

    X: np.ndarray
    lu: tuple | None
    det: float

    @property
    def M(self) -> int:
        return self.X.shape[0]

    @classmethod
    def from_matrix(cls, X: np.ndarray) -> "ClosedBlock":
        X = np.asarray(X, dtype=float)
        M = X.shape[0]
        if M == 0:
            return cls(X, None, 1.0)
        fac = lu_factor(X, check_finite=False)
        lu, piv = fac
        parity = np.count_nonzero(piv != np.arange(M)) % 2
        d = float(np.prod(np.diag(lu))) * _lu_det_correction(X, lu, piv)
        return cls(X, fac, -d if parity else d)

    @classmethod
    def from_table(cls, table: ElementTable) -> "ClosedBlock":
        return cls.from_matrix(table.chi_chi)

    def solve(self, y):
        y = np.asarray(y)
        if self.M == 0:
            return np.zeros(0, dtype=y.dtype)
        if np.iscomplexobj(y):
            return self.solve(y.real) + 1j * self.solve(y.imag)
        w = lu_solve(self.lu, y, check_finite=False)
        for _ in range(REFINE_STEPS):
            w = w + lu_solve(self.lu, residual2(y, self.X, w), check_finite=False)
        return w

    def solve_pair(self, y):
        """X^-1 y as an unevaluated sum ``hi + lo``.

        ``lo`` solves for the compensated residual of ``hi``, so the pair
        carries roughly twice the working precision.  Bilinear forms
        u . X^-1 y lose about cond-ratio digits to cancellation; the pair
        keeps them accurate to a few units in the last place.
        """
        y = np.asarray(y)
        if np.iscomplexobj(y):
            hr, lr = self.solve_pair(y.real)
            hi, li = self.solve_pair(y.imag)
            return hr + 1j * hi, lr + 1j * li
        hi = self.solve(y)
        if self.M == 0:
            return hi, hi
        return hi, self.solve(residual2(y, self.X, hi))


def _form(u, pair):
    """u . (hi + lo) with a compensated accumulator."""
    hi, lo = pair
    return dot2(u, hi) + dot2(u, lo)


def bordered_det(A: np.ndarray, closed: ClosedBlock | None = None):
    """det of a matrix whose lower-right M x M block is the closed block.

    det(A) = det(X) * (A00 - A[0,1:] X^-1 A[1:,0]).
    """
    A = np.asarray(A)
    if closed is None:
        closed = ClosedBlock.from_matrix(np.real(A[1:, 1:]))
    schur = A[0, 0] - _form(A[0, 1:], closed.solve_pair(A[1:, 0]))
    return closed.det * schur


def bordered_solve(A: np.ndarray, rhs: np.ndarray, closed: ClosedBlock | None = None):
    """Solve A x = rhs by eliminating the closed block first."""
    A = np.asarray(A)
    rhs = np.asarray(rhs)
    if closed is None:
        closed = ClosedBlock.from_matrix(np.real(A[1:, 1:]))
    y_col = closed.solve_pair(A[1:, 0])
    y_rhs = closed.solve_pair(rhs[1:])
    schur = A[0, 0] - _form(A[0, 1:], y_col)
    x0 = (rhs[0] - _form(A[0, 1:], y_rhs)) / schur
    p = (y_rhs[0] - x0 * y_col[0]) + (y_rhs[1] - x0 * y_col[1])
    return np.concatenate(([x0], p))


def det_amplitude(calA: float, calB: float, calC: float) -> float:
    """max over tau of |A sin^2 + B sin cos + C cos^2|."""
    return abs(0.5 * (calA + calC)) + np.hypot(0.5 * (calA - calC), 0.5 * calB)


@dataclass(frozen=True)
class OpenForms:
    """Closed-block eliminated forms of the unrotated open integrals.

    ``q[u, v]`` is u . X^-1 v for u in {s, c} (the <S, chi>, <C, chi> rows)
    and v in {s, c, S, C} (the same rows, then the <chi, S>, <chi, C>
    columns).  det(A; tau) and det(A~; tau) follow as trigonometric
    combinations, so no rotated entry is ever rounded.  Near-dependent
    closed functions make these forms cancel by four decades or more,
    which would otherwise amplify that rounding.
    """

    table: ElementTable
    det_x: float
    q: dict

    def det_A(self, tau: float) -> float:
        t, q = self.table, self.q
        s, c = np.sin(tau), np.cos(tau)
        p_ss = t.ss - q["s", "s"]
        p_cc = t.cc - q["c", "c"]
        p_x = (t.sc + t.cs) - 2.0 * q["s", "c"]
        return self.det_x * (s * s * p_ss - s * c * p_x + c * c * p_cc)

    def det_A_tilde(self, tau: float) -> float:
        t, q = self.table, self.q
        s, c = np.sin(tau), np.cos(tau)
        cs_bar = -c * s * t.ss - s * s * t.sc + c * c * t.cs + s * c * t.cc
        form = (-s * c * q["s", "S"] - s * s * q["s", "C"]
                + c * c * q["c", "S"] + c * s * q["c", "C"])
        return self.det_x * (form - cs_bar)


def open_forms(table: ElementTable, closed: ClosedBlock | None = None) -> OpenForms:
    closed = closed or ClosedBlock.from_table(table)
    rows = {"s": table.s_chi, "c": table.c_chi}
    cols = {"s": table.s_chi, "c": table.c_chi, "S": table.chi_s, "C": table.chi_c}
    pairs = {name: closed.solve_pair(v) for name, v in cols.items()}
    q = {(u, v): _form(rows[u], pairs[v]) for u in rows for v in cols}
    return OpenForms(table, closed.det, q)


def det_scale(table: ElementTable, closed: ClosedBlock | None = None) -> float:
    """Largest |det(A; tau)| over tau, from three determinant samples."""
    forms = open_forms(table, closed)
    c0, a = forms.det_A(0.0), forms.det_A(HALF_PI)
    b = 2.0 * forms.det_A(0.25 * np.pi) - a - c0
    return det_amplitude(a, b, c0)


def wrap_phase(x):
    """Map a real phase (or the real part of a complex one) into (-pi/2, pi/2]."""
    if np.iscomplexobj(x):
        return wrap_phase(np.real(x)) + 1j * np.imag(x)
    y = np.mod(np.asarray(x, dtype=float) + HALF_PI, np.pi) - HALF_PI
    y = np.where(y == -HALF_PI, HALF_PI, y)
    return float(y) if np.ndim(y) == 0 else y


def phase_distance(a: float, b: float) -> float:
    """Distance between two phases modulo pi."""
    d = np.mod(a - b + HALF_PI, np.pi) - HALF_PI
    return abs(float(d))


@dataclass(frozen=True)
class RotatedTable:
    """Integrals among the barred functions S', C' for one tau."""

    tau: float
    ss: float
    sc: float
    cs: float
    cc: float
    s_chi: np.ndarray
    c_chi: np.ndarray
    chi_s: np.ndarray
    chi_c: np.ndarray
    chi_chi: np.ndarray
    k_tilde: float

    @property
    def M(self) -> int:
        return len(self.s_chi)

    def open_block(self) -> np.ndarray:
        """2x2 matrix [[<S',S'>, <S',C'>], [<C',S'>, <C',C'>]]."""
        return np.array([[self.ss, self.sc], [self.cs, self.cc]])


def rotation(tau: float) -> np.ndarray:
    c, s = np.cos(tau), np.sin(tau)
    return np.array([[c, s], [-s, c]])


def rotate(table: ElementTable, tau: float) -> RotatedTable:
    """Rotate the open-channel integrals to S' = cos S + sin C, C' = -sin S + cos C.

    Works purely on the stored integrals; nothing is re-integrated.
    """
    if not 0.0 <= tau < np.pi:
        raise DomainError(f"tau={tau} outside [0, pi)")
    return _rotate(table, tau)


def _rotate(table: ElementTable, tau: float) -> RotatedTable:
    R = rotation(tau)
    (ss, sc), (cs, cc) = R @ np.array([[table.ss, table.sc], [table.cs, table.cc]]) @ R.T
    c, s = R[0]
    return RotatedTable(
        tau=float(tau), ss=ss, sc=sc, cs=cs, cc=cc,
        s_chi=c * table.s_chi + s * table.c_chi,
        c_chi=-s * table.s_chi + c * table.c_chi,
        chi_s=c * table.chi_s + s * table.chi_c,
        chi_c=-s * table.chi_s + c * table.chi_c,
        chi_chi=table.chi_chi, k_tilde=table.k_tilde,
    )


@dataclass(frozen=True)
class KohnSystem:
    """The linear system A x = -b at one tau."""

    A: np.ndarray
    b: np.ndarray
    tau: float

    @property
    def A_tilde(self) -> np.ndarray:
        """A with its first column replaced by -b (Cramer numerator for a_t)."""
        At = self.A.copy()
        At[:, 0] = -self.b
        return At

    def symmetry_defect(self) -> float:
        A = self.A
        if A.shape[0] < 2:
            return 0.0
        return float(max(np.max(np.abs(A[0, 1:] - A[1:, 0])),
                         np.max(np.abs(A[1:, 1:] - A[1:, 1:].T))))


def build_kohn_system(rt: RotatedTable) -> KohnSystem:
    M = rt.M
    A = np.empty((M + 1, M + 1))
    A[0, 0] = rt.cc
    A[0, 1:] = rt.c_chi
    A[1:, 0] = rt.c_chi
    A[1:, 1:] = rt.chi_chi
    b = np.concatenate(([rt.cs], rt.chi_s))
    return KohnSystem(A, b, rt.tau)


def kohn_system(table: ElementTable, tau: float) -> KohnSystem:
    """Rotate and build in one step; tau may be any real (periodic in pi)."""
    return build_kohn_system(_rotate(table, tau))


def reduced_functional(rt: RotatedTable, x: np.ndarray):
    """I[Psi_t] in its reduced form, valid once A x = -b holds."""
    return rt.ss + x[0] * rt.sc + dot2(x[1:], rt.s_chi)


def is_singular(d: float, scale: float) -> bool:
    """|det| below 1e-12 of its largest value over tau, or scale itself zero."""
    return not abs(d) > SINGULAR_RTOL * scale


def theta_sample(table: ElementTable, tau: float, scale: float | None = None,
                 closed: ClosedBlock | None = None):
    """Return (det A, I, Theta = det A * I) at ``tau``.

    Raises SingularSystemError when A is numerically singular relative to
    ``scale`` (default: the largest |det(A)| over tau).
    """
    closed = closed or ClosedBlock.from_table(table)
    rt = _rotate(table, tau)
    system = build_kohn_system(rt)
    d = bordered_det(system.A, closed)
    if scale is None:
        scale = det_scale(table, closed)
    if is_singular(d, scale):
        raise SingularSystemError("singular Kohn matrix", d, np.linalg.cond(system.A))
    x = bordered_solve(system.A, -system.b, closed)
    I = reduced_functional(rt, x)
    return d, I, d * I


@dataclass(frozen=True)
class DetCoefficients:
    """tau-independent scalars fixing eta_v(tau) at one k.

    ``gamma`` always comes from Theta / k_tilde; ``gamma_closed`` is the
    ratio form (A~ (A~ + B) + A C) / (2 A~ + B) and is NaN near k_s.
    """

    calA: float
    calB: float
    calC: float
    calAt: float
    theta: float
    gamma: float
    k: float
    k_tilde: float
    gamma_closed: float = float("nan")
    theta_tau: float = 0.0

    @property
    def calBt(self) -> float:
        return self.calA - self.calC

    @property
    def calCt(self) -> float:
        return self.calAt + self.calB

    @property
    def scale(self) -> float:
        return abs(self.calA) + abs(self.calB) + abs(self.calC) + abs(self.calAt)

    @property
    def eps_s(self) -> float:
        return EPS_S_FACTOR * self.scale

    @property
    def near_ks(self) -> bool:
        return abs(2 * self.calAt + self.calB) < self.eps_s

    @property
    def calD(self) -> float:
        if self.near_ks:
            return self.calAt - self.gamma
        return (self.calAt ** 2 - self.calA * self.calC) / (2 * self.calAt + self.calB)

    @property
    def calX(self) -> float:
        A, B, C, G, At = self.calA, self.calB, self.calC, self.gamma, self.calAt
        return 0.5 * (A * A - B * B - C * C) + B * (G - At)

    @property
    def calY(self) -> float:
        A, B, C, G, At = self.calA, self.calB, self.calC, self.gamma, self.calAt
        return (G - At) * (C - A) + A * B

    @property
    def calG(self) -> float:
        d = self.calAt - self.gamma
        return d * (d + self.calB) + self.calA * self.calC

    @property
    def calH(self) -> float:
        At, B = self.calAt, self.calB
        return (At + B) * At + self.calA * self.calC - (2 * At + B) * self.gamma

    # tau-dependent pieces
    def g(self, tau):
        s, c = np.sin(tau), np.cos(tau)
        return self.calA * s * s + self.calB * s * c + self.calC * c * c

    def det_tilde(self, tau):
        s, c = np.sin(tau), np.cos(tau)
        return self.calAt * s * s + self.calBt * s * c + self.calCt * c * c

    def f(self, tau):
        return self.det_tilde(tau) - self.gamma

    def fp(self, tau):
        return self.calBt * np.cos(2 * tau) - self.calB * np.sin(2 * tau)

    def gp(self, tau):
        return self.calBt * np.sin(2 * tau) + self.calB * np.cos(2 * tau)

    def with_gamma(self, gamma: float) -> "DetCoefficients":
        return replace(self, gamma=gamma, theta=gamma * self.k_tilde)


THETA_TAUS = (0.0, 0.25 * np.pi, 0.5 * np.pi, 0.75 * np.pi,
              0.125 * np.pi, 0.375 * np.pi, 0.625 * np.pi, 0.875 * np.pi)


def extract_det_coefficients(table: ElementTable) -> DetCoefficients:
    """Determinant coefficients from samples at tau = 0, pi/4, pi/2.

    Theta is evaluated at whichever sample tau has the best-conditioned A.
    """
    closed = ClosedBlock.from_table(table)
    forms = open_forms(table, closed)
    dets = {tau: forms.det_A(tau) for tau in THETA_TAUS}
    calC = dets[0.0]
    calA = dets[HALF_PI]
    calB = 2.0 * dets[0.25 * np.pi] - calA - calC
    calAt = forms.det_A_tilde(HALF_PI)

    scale = det_amplitude(calA, calB, calC)
    ranked = sorted(THETA_TAUS, key=lambda t: -abs(dets[t]))
    theta = theta_tau = None
    for tau in ranked:
        try:
            _, _, theta = theta_sample(table, tau, scale, closed)
            theta_tau = tau
            break
        except SingularSystemError:
            continue
    if theta is None:
        raise CoefficientExtractionError(
            f"A singular at every sample tau for k={table.k} (possible k in Z)")

    gamma = theta / table.k_tilde
    denom = 2 * calAt + calB
    coeffs = DetCoefficients(calA, calB, calC, calAt, theta, gamma, table.k, table.k_tilde,
                             theta_tau=theta_tau)
    if not coeffs.near_ks:
        coeffs = replace(coeffs, gamma_closed=((calAt + calB) * calAt + calA * calC) / denom)
    return coeffs


@dataclass
class ThetaReport:
    taus: list
    thetas: list
    skipped: list
    theta: float
    spread: float

    @property
    def relative_spread(self) -> float:
        return self.spread / abs(self.theta) if self.theta else self.spread


def theta_invariance_check(table: ElementTable, taus: Iterable[float]) -> ThetaReport:
    """Spread (max - min) of det(A) * I over the given tau values."""
    used, values, skipped = [], [], []
    closed = ClosedBlock.from_table(table)
    scale = det_scale(table, closed)
    for tau in taus:
        try:
            values.append(theta_sample(table, tau, scale, closed)[2])
            used.append(float(tau))
        except SingularSystemError:
            skipped.append(float(tau))
    if not values:
        return ThetaReport([], [], skipped, float("nan"), float("nan"))
    values_arr = np.asarray(values)
    centre = float(np.median(values_arr))
    return ThetaReport(used, values, skipped, centre,
                       float(values_arr.max() - values_arr.min()))


def minor(X: np.ndarray, rows: Sequence[int], cols: Sequence[int]) -> np.ndarray:
    """Delete the given 1-based rows and columns."""
    keep_r = [r for r in range(X.shape[0]) if r + 1 not in rows]
    keep_c = [c for c in range(X.shape[1]) if c + 1 not in cols]
    return X[np.ix_(keep_r, keep_c)]


def _sigma(a: int, b: int) -> int:
    return 1 if a < b else 0


def desnanot_jacobi_check(X: np.ndarray, i: int, j: int, p: int, q: int,
                          relative: bool = False) -> float:
    """Residual of the signed Desnanot-Jacobi identity for 1-based indices.

    det(X) det(X^{ip}_{jq}) = (-1)^(s_ip + s_jq) [det(X^i_j) det(X^p_q)
    - det(X^p_j) det(X^i_q)], with the double minor taken as a zero
    matrix when i == p or j == q.  With ``relative`` the residual is
    divided by the largest of the three products.
    """
    X = np.asarray(X, dtype=float)
    n = X.shape[0]
    if X.ndim != 2 or X.shape[1] != n or n < 3:
        raise DomainError("need a square matrix of dimension >= 3")
    if not all(1 <= idx <= n for idx in (i, j, p, q)):
        raise DomainError(f"index out of range for dimension {n}")
    if i == p or j == q:
        double = 0.0
    else:
        double = det(minor(X, (i, p), (j, q)))
    lhs = det(X) * double
    sign = (-1) ** (_sigma(i, p) + _sigma(j, q))
    t1 = det(minor(X, (i,), (j,))) * det(minor(X, (p,), (q,)))
    t2 = det(minor(X, (p,), (j,))) * det(minor(X, (i,), (q,)))
    res = abs(lhs - sign * (t1 - t2))
    if relative:
        size = max(abs(lhs), abs(t1), abs(t2))
        return res / size if size > 0 else res
    return res
