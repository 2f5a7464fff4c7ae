"""Radial s-wave scattering problem and Hamiltonian-residual integrals.

All integrals are of the form <X|(H - E)|Y> over r in [0, r_max] with
H = -1/2 d^2/dr^2 + V(r) and E = k^2/2.  The free functions are

    S(r) = N sin(kr)
    C(r) = N cos(kr) (1 - exp(-beta r))

and the short-range functions are chi_i(r) = r^n_i exp(-alpha_i r).
Second derivatives are taken analytically.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

TAIL_FRACTION = 1e-12
CONVERGENCE_RTOL = 1e-10
MAX_DOUBLINGS = 4
PANEL_WIDTH = 2.0

DEFAULT_POWERS = (1, 1, 2, 2, 3, 3, 4, 4)
DEFAULT_EXPONENTS = (0.8, 1.6, 0.8, 1.6, 0.8, 1.6, 0.8, 1.6)


class AssemblyError(RuntimeError):
    """Quadrature did not converge within the refinement cap."""

    def __init__(self, message: str, defect: float):
        super().__init__(f"{message} (defect {defect:.3e})")
        self.defect = defect


@dataclass(frozen=True)
class Potential:
    """Short-range radial potential.

    ``kind`` is one of ``"square-well"`` (V = -V0 for r < a),
    ``"exponential"`` (V = -V0 exp(-r/a)) or ``"zero"``.  Positive V0 is
    attractive for both shapes.
    """

    kind: str = "square-well"
    V0: float = 1.0
    a: float = 1.0

    def __post_init__(self):
        if self.kind not in ("square-well", "exponential", "zero"):
            raise ValueError(f"unknown potential kind {self.kind!r}")
        if self.kind == "square-well" and not (self.V0 > 0 and self.a > 0):
            raise ValueError("square well needs V0 > 0 and a > 0")
        if self.kind == "exponential" and not self.a > 0:
            raise ValueError("exponential potential needs a > 0")

    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        if self.kind == "zero":
            return np.zeros_like(r)
        if self.kind == "square-well":
            return np.where(r < self.a, -self.V0, 0.0)
        return -self.V0 * np.exp(-r / self.a)

    @property
    def peak(self) -> float:
        return 0.0 if self.kind == "zero" else abs(self.V0)

    @property
    def breakpoints(self) -> tuple:
        return (self.a,) if self.kind == "square-well" else ()

    def support_radius(self, fraction: float = TAIL_FRACTION) -> float:
        """Radius beyond which |V| stays below ``fraction`` of its peak."""
        if self.kind == "zero" or self.V0 == 0:
            return 0.0
        if self.kind == "square-well":
            return self.a
        return self.a * np.log(1.0 / fraction)


@dataclass(frozen=True)
class RadialProblem:
    """Scattering problem at one wavenumber.

    ``beta=None`` selects the default cutoff steepness k + 1.  With
    ``converge=False`` the table is assembled once at ``n_quad`` and the
    doubling test is skipped (used to study deliberately coarse rules).
    """

    potential: Potential = field(default_factory=Potential)
    k: float = 0.5
    N: float = 1.0
    beta: Optional[float] = None
    r_max: float = 80.0
    n_quad: int = 32
    converge: bool = True

    def __post_init__(self):
        if not self.k > 0:
            raise ValueError("k must be positive")
        if not self.N > 0:
            raise ValueError("N must be positive")
        if self.beta is not None and not self.beta > 0:
            raise ValueError("beta must be positive")
        if self.n_quad < 2:
            raise ValueError("n_quad must be at least 2")
        if self.r_max <= self.potential.support_radius():
            raise ValueError(
                f"r_max={self.r_max} does not reach the potential tail "
                f"(needs r_max > {self.potential.support_radius():.3g})")

    @property
    def E(self) -> float:
        return 0.5 * self.k * self.k

    @property
    def cutoff(self) -> float:
        return self.k + 1.0 if self.beta is None else self.beta

    @property
    def k_tilde(self) -> float:
        return 0.5 * self.N * self.N * self.k

    def with_k(self, k: float) -> "RadialProblem":
        return RadialProblem(self.potential, k, self.N, self.beta, self.r_max,
                             self.n_quad, self.converge)


@dataclass(frozen=True)
class BasisSet:
    """Short-range functions chi_i(r) = r**n_i * exp(-alpha_i * r).

    With ``normalize`` each chi_i is scaled to unit norm.  Phase shifts do
    not depend on this; determinant values do, by the product of scales.
    """

    powers: tuple = DEFAULT_POWERS
    exponents: tuple = DEFAULT_EXPONENTS
    normalize: bool = True

    def __post_init__(self):
        object.__setattr__(self, "powers", tuple(int(n) for n in self.powers))
        object.__setattr__(self, "exponents", tuple(float(a) for a in self.exponents))
        if len(self.powers) != len(self.exponents):
            raise ValueError("powers and exponents differ in length")
        if any(n < 1 for n in self.powers):
            raise ValueError("every power must be >= 1")
        if any(not a > 0 for a in self.exponents):
            raise ValueError("every exponent must be positive")
        pairs = list(zip(self.powers, self.exponents))
        if len(set(pairs)) != len(pairs):
            raise ValueError("(power, exponent) pairs must be distinct")

    @property
    def M(self) -> int:
        return len(self.powers)

    @classmethod
    def default(cls, M: int = 8, normalize: bool = True) -> "BasisSet":
        return cls(DEFAULT_POWERS[:M], DEFAULT_EXPONENTS[:M], normalize)

    def norms(self) -> np.ndarray:
        """Multipliers applied to r**n exp(-alpha r); all ones unless normalising."""
        if not self.normalize:
            return np.ones(self.M)
        # int_0^inf r^(2n) exp(-2 alpha r) dr = (2n)! / (2 alpha)^(2n+1)
        return np.array([np.sqrt((2 * a) ** (2 * n + 1) / math.factorial(2 * n))
                         for n, a in zip(self.powers, self.exponents)])

    def values(self, r):
        """Return (chi, chi'') arrays of shape (M, len(r))."""
        r = np.asarray(r, dtype=float)
        chi = np.empty((self.M, r.size))
        d2 = np.empty((self.M, r.size))
        for i, (n, a, c) in enumerate(zip(self.powers, self.exponents, self.norms())):
            e = c * np.exp(-a * r)
            rn = r ** n
            chi[i] = rn * e
            d2[i] = (n * (n - 1) * r ** (n - 2) - 2 * a * n * r ** (n - 1) + a * a * rn) * e
        return chi, d2


@dataclass(frozen=True)
class ElementTable:
    """All <X,(H-E)Y> integrals among {S, C, chi_1..chi_M} at one k.

    ``s_chi[i]`` is <S,chi_i> and ``chi_s[i]`` is <chi_i,S>; the two agree
    for converged quadrature but are kept separately so that Hermiticity
    failures stay visible.  ``chi_chi`` is stored symmetrised; the raw
    asymmetry is kept in ``hermiticity_defect``.
    """

    ss: float
    sc: float
    cs: float
    cc: float
    s_chi: np.ndarray
    c_chi: np.ndarray
    chi_s: np.ndarray
    chi_c: np.ndarray
    chi_chi: np.ndarray
    k: float
    k_tilde: float
    antisymmetry_defect: float = 0.0
    hermiticity_defect: float = 0.0
    convergence_defect: float = float("nan")
    n_quad_used: int = 0

    @property
    def M(self) -> int:
        return len(self.s_chi)

    @property
    def E(self) -> float:
        return 0.5 * self.k * self.k

    def scale(self) -> float:
        vals = [abs(self.ss), abs(self.sc), abs(self.cs), abs(self.cc)]
        for arr in (self.s_chi, self.c_chi, self.chi_chi):
            if arr.size:
                vals.append(float(np.max(np.abs(arr))))
        return max(vals)

    @classmethod
    def from_arrays(cls, ss, sc, cs, cc, s_chi, c_chi, chi_chi, k, k_tilde,
                    chi_s=None, chi_c=None) -> "ElementTable":
        """Build a table from given numbers (chi_s/chi_c default to s_chi/c_chi)."""
        s_chi = np.asarray(s_chi, dtype=float).reshape(-1)
        c_chi = np.asarray(c_chi, dtype=float).reshape(-1)
        chi_chi = np.asarray(chi_chi, dtype=float).reshape(len(s_chi), len(s_chi))
        chi_s = s_chi.copy() if chi_s is None else np.asarray(chi_s, dtype=float)
        chi_c = c_chi.copy() if chi_c is None else np.asarray(chi_c, dtype=float)
        return cls(float(ss), float(sc), float(cs), float(cc), s_chi, c_chi,
                   chi_s, chi_c, 0.5 * (chi_chi + chi_chi.T), float(k), float(k_tilde),
                   abs((sc - cs) - k_tilde))


def gauss_legendre_grid(breaks: Sequence[float], order: int):
    """Composite Gauss-Legendre nodes and weights over consecutive ``breaks``."""
    x, w = np.polynomial.legendre.leggauss(order)
    nodes, weights = [], []
    for lo, hi in zip(breaks[:-1], breaks[1:]):
        half = 0.5 * (hi - lo)
        nodes.append(lo + half * (x + 1.0))
        weights.append(half * w)
    return np.concatenate(nodes), np.concatenate(weights)


def panel_breaks(problem: RadialProblem) -> np.ndarray:
    cuts = [b for b in problem.potential.breakpoints if 0 < b < problem.r_max]
    edges = sorted({0.0, problem.r_max, *cuts})
    out = [edges[0]]
    for lo, hi in zip(edges[:-1], edges[1:]):
        n = max(1, int(np.ceil((hi - lo) / PANEL_WIDTH)))
        out.extend(np.linspace(lo, hi, n + 1)[1:])
    return np.asarray(out)


def _raw_table(problem: RadialProblem, basis: BasisSet, order: int) -> dict:
    r, w = gauss_legendre_grid(panel_breaks(problem), order)
    k, N, beta, E = problem.k, problem.N, problem.cutoff, problem.E
    V = problem.potential(r)

    sin, cos = np.sin(k * r), np.cos(k * r)
    e = np.exp(-beta * r)
    S = N * sin
    C = N * cos * (1.0 - e)
    hS = V * S
    hC = N * e * (k * beta * sin + 0.5 * beta * beta * cos) + V * C
    chi, d2 = basis.values(r)
    hchi = -0.5 * d2 + (V - E) * chi

    wS, wC = w * S, w * C
    return dict(
        ss=wS @ hS, sc=wS @ hC, cs=wC @ hS, cc=wC @ hC,
        s_chi=hchi @ wS, c_chi=hchi @ wC,
        chi_s=chi @ (w * hS), chi_c=chi @ (w * hC),
        chi_chi=(chi * w) @ hchi.T,
    )


def _table_diff(a: dict, b: dict) -> float:
    return max(float(np.max(np.abs(np.asarray(a[key]) - np.asarray(b[key])), initial=0.0))
               for key in a)


def _table_scale(a: dict) -> float:
    return max(float(np.max(np.abs(np.asarray(v)), initial=0.0)) for v in a.values())


def assemble_elements(problem: RadialProblem, basis: BasisSet) -> ElementTable:
    """Assemble the full integral table for ``problem`` and ``basis``.

    The Gauss-Legendre order per panel is doubled until the largest
    entry change is below 1e-10 of the table scale.

    Raises
    ------
    AssemblyError
        If the table has not converged after the refinement cap.
    """
    order = problem.n_quad
    raw = _raw_table(problem, basis, order)
    conv = float("nan")
    if problem.converge:
        for _ in range(MAX_DOUBLINGS):
            finer = _raw_table(problem, basis, 2 * order)
            conv = _table_diff(raw, finer) / max(_table_scale(finer), 1e-300)
            raw, order = finer, 2 * order
            if conv < CONVERGENCE_RTOL:
                break
        else:
            raise AssemblyError("integral table did not converge", conv)

    chi_chi = raw["chi_chi"]
    herm = 0.0
    if basis.M:
        herm = max(float(np.max(np.abs(chi_chi - chi_chi.T))),
                   float(np.max(np.abs(raw["s_chi"] - raw["chi_s"]))),
                   float(np.max(np.abs(raw["c_chi"] - raw["chi_c"]))))
    kt = problem.k_tilde
    return ElementTable(
        ss=float(raw["ss"]), sc=float(raw["sc"]), cs=float(raw["cs"]), cc=float(raw["cc"]),
        s_chi=np.asarray(raw["s_chi"]), c_chi=np.asarray(raw["c_chi"]),
        chi_s=np.asarray(raw["chi_s"]), chi_c=np.asarray(raw["chi_c"]),
        chi_chi=0.5 * (chi_chi + chi_chi.T),
        k=problem.k, k_tilde=kt,
        antisymmetry_defect=abs((raw["sc"] - raw["cs"]) - kt),
        hermiticity_defect=herm,
        convergence_defect=conv,
        n_quad_used=order,
    )
