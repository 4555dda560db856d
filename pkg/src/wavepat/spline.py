"""Univariate B-spline spaces on clamped uniform knot vectors.

Everything downstream (space-time Gram matrices, phantoms, traces) is built
from the three primitives in this module: :func:`collocation`, :func:`gram_1d`
and :func:`boundary_vector`.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp

__all__ = [
    "Constraint",
    "SplineSpace1D",
    "make_space",
    "find_spans",
    "basis_ders",
    "collocation",
    "eval_basis",
    "gram_1d",
    "boundary_vector",
    "gauss_rule",
]


class Constraint(enum.Enum):
    FREE = "free"
    ZERO_BOTH_ENDS = "zero_both_ends"
    ZERO_AT_LEFT = "zero_at_left"


@dataclass(frozen=True)
class SplineSpace1D:
    """Open-uniform B-spline space with ``2**level`` equal knot spans.

    The constraint removes the basis functions that do not vanish at the
    constrained endpoints; with clamped knots these are exactly the first
    and/or last function.
    """

    degree: int
    level: int
    interval: tuple[float, float]
    constraint: Constraint = Constraint.FREE

    def __post_init__(self):
        if self.degree < 1:
            raise ValueError(f"degree must be >= 1, got {self.degree}")
        if self.level < 1:
            raise ValueError(f"level must be >= 1, got {self.level}")
        a, b = self.interval
        if not b > a:
            raise ValueError(f"interval must satisfy b > a, got {self.interval}")
        object.__setattr__(self, "interval", (float(a), float(b)))
        object.__setattr__(self, "constraint", Constraint(self.constraint))

    @property
    def n_spans(self) -> int:
        return 2**self.level

    @property
    def h(self) -> float:
        a, b = self.interval
        return (b - a) / self.n_spans

    @cached_property
    def breakpoints(self) -> np.ndarray:
        a, b = self.interval
        return np.linspace(a, b, self.n_spans + 1)

    @cached_property
    def knots(self) -> np.ndarray:
        a, b = self.interval
        p = self.degree
        return np.concatenate([np.full(p, a), self.breakpoints, np.full(p, b)])

    @property
    def n_full(self) -> int:
        return self.n_spans + self.degree

    @cached_property
    def active(self) -> np.ndarray:
        """Indices into the unconstrained basis that survive the constraint."""
        lo = 0 if self.constraint is Constraint.FREE else 1
        hi = self.n_full - 1 if self.constraint is Constraint.ZERO_BOTH_ENDS else self.n_full
        return np.arange(lo, hi)

    @property
    def dim(self) -> int:
        return len(self.active)

    def with_constraint(self, constraint: Constraint) -> "SplineSpace1D":
        return SplineSpace1D(self.degree, self.level, self.interval, constraint)


def make_space(degree: int = 2, level: int = 1, interval=(0.0, 1.0),
               constraint: Constraint | str = Constraint.FREE) -> SplineSpace1D:
    return SplineSpace1D(int(degree), int(level), tuple(interval), Constraint(constraint))


def _check_points(space: SplineSpace1D, x: np.ndarray, tol: float = 1e-12) -> None:
    a, b = space.interval
    slack = tol * (b - a)
    if x.size and (x.min() < a - slack or x.max() > b + slack):
        raise ValueError(f"points outside [{a}, {b}]")


def find_spans(space: SplineSpace1D, x) -> np.ndarray:
    """Knot span index of every x (right limit at knots, left limit at b)."""
    x = np.asarray(x, dtype=float)
    t = space.knots
    p = space.degree
    spans = np.searchsorted(t, x, side="right") - 1
    return np.clip(spans, p, space.n_full - 1)


def basis_ders(space: SplineSpace1D, x, n: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Nonzero basis functions and their derivatives at the points ``x``.

    Returns
    -------
    spans : (npts,) int array
        Basis functions ``spans - p .. spans`` (unconstrained numbering) are
        the ones that may be nonzero at each point.
    ders : (npts, n + 1, p + 1) array
        ``ders[q, k, r]`` is the k-th derivative of function ``spans[q]-p+r``.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    _check_points(space, x)
    t = space.knots
    p = space.degree
    span = find_spans(space, x)
    npts = x.size

    # vectorized form of the classical triangular table (Piegl & Tiller A2.3)
    ndu = np.zeros((npts, p + 1, p + 1))
    ndu[:, 0, 0] = 1.0
    left = np.zeros((npts, p + 1))
    right = np.zeros((npts, p + 1))
    for j in range(1, p + 1):
        left[:, j] = x - t[span + 1 - j]
        right[:, j] = t[span + j] - x
        saved = np.zeros(npts)
        for r in range(j):
            ndu[:, j, r] = right[:, r + 1] + left[:, j - r]
            temp = ndu[:, r, j - 1] / ndu[:, j, r]
            ndu[:, r, j] = saved + right[:, r + 1] * temp
            saved = left[:, j - r] * temp
        ndu[:, j, j] = saved

    ders = np.zeros((npts, n + 1, p + 1))
    ders[:, 0, :] = ndu[:, :, p]
    for r in range(p + 1):
        a = np.zeros((npts, 2, p + 1))
        a[:, 0, 0] = 1.0
        s1, s2 = 0, 1
        for k in range(1, n + 1):
            d = np.zeros(npts)
            rk = r - k
            pk = p - k
            if r >= k:
                a[:, s2, 0] = a[:, s1, 0] / ndu[:, pk + 1, rk]
                d = a[:, s2, 0] * ndu[:, rk, pk]
            j1 = 1 if rk >= -1 else -rk
            j2 = k - 1 if r - 1 <= pk else p - r
            for j in range(j1, j2 + 1):
                a[:, s2, j] = (a[:, s1, j] - a[:, s1, j - 1]) / ndu[:, pk + 1, rk + j]
                d = d + a[:, s2, j] * ndu[:, rk + j, pk]
            if r <= pk:
                a[:, s2, k] = -a[:, s1, k - 1] / ndu[:, pk + 1, r]
                d = d + a[:, s2, k] * ndu[:, r, pk]
            ders[:, k, r] = d
            s1, s2 = s2, s1
    fac = p
    for k in range(1, n + 1):
        ders[:, k, :] *= fac
        fac *= p - k
    return span, ders


def collocation(space: SplineSpace1D, x, deriv: int = 0) -> sp.csr_matrix:
    """Sparse ``(len(x), space.dim)`` matrix of basis (derivative) values."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    p = space.degree
    span, ders = basis_ders(space, x, deriv)
    rows = np.repeat(np.arange(x.size), p + 1)
    full_cols = (span[:, None] - p + np.arange(p + 1)[None, :]).ravel()
    vals = ders[:, deriv, :].ravel()

    # map unconstrained numbering -> active numbering, dropping removed functions
    lookup = np.full(space.n_full, -1)
    lookup[space.active] = np.arange(space.dim)
    cols = lookup[full_cols]
    keep = cols >= 0
    return sp.csr_matrix((vals[keep], (rows[keep], cols[keep])), shape=(x.size, space.dim))


def eval_basis(space: SplineSpace1D, x: float, deriv_order: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Indices (active numbering) and values of the basis functions supported at ``x``."""
    if deriv_order not in (0, 1, 2):
        raise ValueError("deriv_order must be 0, 1 or 2")
    p = space.degree
    span, ders = basis_ders(space, float(x), deriv_order)
    full = span[0] - p + np.arange(p + 1)
    lookup = np.full(space.n_full, -1)
    lookup[space.active] = np.arange(space.dim)
    idx = lookup[full]
    keep = idx >= 0
    return idx[keep], ders[0, deriv_order, keep]


def boundary_vector(space: SplineSpace1D, point: float, deriv_order: int = 0) -> np.ndarray:
    """Dense vector of all basis (derivative) values at ``point``."""
    return collocation(space, [point], deriv_order).toarray().ravel()


def gauss_rule(breaks: np.ndarray, npts: int) -> tuple[np.ndarray, np.ndarray]:
    """Composite Gauss-Legendre points and weights over consecutive ``breaks``."""
    xg, wg = np.polynomial.legendre.leggauss(npts)
    a = breaks[:-1, None]
    b = breaks[1:, None]
    pts = 0.5 * (a + b) + 0.5 * (b - a) * xg[None, :]
    wts = 0.5 * (b - a) * wg[None, :]
    return pts.ravel(), wts.ravel()


def _merged_breaks(spaces, lo: float, hi: float) -> np.ndarray:
    brk = [np.array([lo, hi])]
    for s in spaces:
        k = s.breakpoints
        brk.append(k[(k > lo) & (k < hi)])
    out = np.unique(np.concatenate(brk))
    # collapse near-duplicates produced by floating point face coordinates
    keep = np.concatenate([[True], np.diff(out) > 1e-14 * (hi - lo)])
    out = out[keep]
    out[-1] = hi
    return out


def gram_1d(space_row: SplineSpace1D, space_col: SplineSpace1D | None = None,
            deriv_row: int = 0, deriv_col: int = 0, subinterval=None,
            n_gauss: int | None = None) -> sp.csr_matrix:
    """Exact 1D Gram matrix ``G[i, j] = int phi_i^(deriv_row) psi_j^(deriv_col) dx``.

    Integrates with Gauss-Legendre on every span of the merged breakpoints of
    both spaces (clipped to ``subinterval``), which is exact for the
    piecewise-polynomial integrand when ``n_gauss >= (p_row + p_col + 1) / 2``.
    """
    if space_col is None:
        space_col = space_row
    if space_row.interval != space_col.interval:
        raise ValueError("spaces must share the same interval")
    a, b = space_row.interval
    lo, hi = (a, b) if subinterval is None else (float(subinterval[0]), float(subinterval[1]))
    slack = 1e-12 * (b - a)
    if lo < a - slack or hi > b + slack or not hi > lo:
        raise ValueError(f"subinterval {subinterval} not inside {space_row.interval}")
    lo, hi = max(lo, a), min(hi, b)
    if n_gauss is None:
        n_gauss = int(np.ceil((space_row.degree + space_col.degree + 1) / 2))
    pts, wts = gauss_rule(_merged_breaks([space_row, space_col], lo, hi), n_gauss)
    Br = collocation(space_row, pts, deriv_row)
    Bc = collocation(space_col, pts, deriv_col)
    G = (Br.T @ sp.diags(wts) @ Bc).tocsr()
    G.eliminate_zeros()
    return G
