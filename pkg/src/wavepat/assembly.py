"""Kronecker-product assembly of the discrete augmented saddle-point system.

Unknowns are ordered time-major: coefficient ``(i, j)`` of ``tau_i(t) sigma_j(x)``
sits at ``i * n_x + j`` where ``j`` is the C-order flattening of the spatial
multi-index.  The multiplier space is parametrized by the state-space
functions with ``z(0) = 0``; with clamped knots that is every temporal index
except the first, so the multiplier block is the trailing ``n_lambda`` slice.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import reduce

import numpy as np
import scipy.sparse as sp

from .spline import Constraint, SplineSpace1D, boundary_vector, collocation, gauss_rule, gram_1d, make_space

log = logging.getLogger(__name__)

__all__ = [
    "ProblemConfig",
    "DiscreteSpaces",
    "SaddleSystem",
    "build_spaces",
    "dofs",
    "assemble_wave_gram",
    "assemble_observation",
    "assemble_initial_h10",
    "assemble_initial_velocity",
    "assemble_system",
    "assemble_load",
    "load_from_samples",
]


@dataclass(frozen=True)
class ProblemConfig:
    d: int = 2
    level_t: int = 2
    level_x: int = 2
    T: float = 0.25
    alpha: float = 1.0
    rho: float = 1.0
    degree: int = 2
    omega: tuple = (0.0, 1.0)
    omega_s: tuple = (0.25, 0.75)

    def __post_init__(self):
        if self.d not in (2, 3):
            raise ValueError(f"d must be 2 or 3, got {self.d}")
        if self.level_t < 1 or self.level_x < 1:
            raise ValueError("refinement levels must be >= 1")
        if not self.T > 0:
            raise ValueError("T must be positive")
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")
        if not self.rho > 0:
            raise ValueError("rho must be positive (the discrete system needs the augmented Lagrangian)")
        if self.degree < 2:
            raise ValueError("degree >= 2 is required for W[y_h] in L2")
        a, b = self.omega
        lo, hi = self.omega_s
        if not (a < lo < hi < b):
            raise ValueError(f"omega_s {self.omega_s} must lie strictly inside omega {self.omega}")

    def replace(self, **kw) -> "ProblemConfig":
        vals = {f: getattr(self, f) for f in self.__dataclass_fields__}
        vals.update(kw)
        return ProblemConfig(**vals)


@dataclass(frozen=True)
class DiscreteSpaces:
    temporal_y: SplineSpace1D
    temporal_lambda: SplineSpace1D
    spatial: tuple

    @property
    def n_x(self) -> int:
        return int(np.prod([s.dim for s in self.spatial]))

    @property
    def n_y(self) -> int:
        return self.temporal_y.dim * self.n_x

    @property
    def n_lambda(self) -> int:
        return self.temporal_lambda.dim * self.n_x

    @property
    def total(self) -> int:
        return self.n_y + self.n_lambda


def build_spaces(config: ProblemConfig) -> DiscreteSpaces:
    p = config.degree
    ty = make_space(p, config.level_t, (0.0, config.T), Constraint.FREE)
    tl = make_space(p, config.level_t, (0.0, config.T), Constraint.ZERO_AT_LEFT)
    sx = make_space(p, config.level_x, config.omega, Constraint.ZERO_BOTH_ENDS)
    return DiscreteSpaces(ty, tl, (sx,) * config.d)


def dofs(d: int, level: int) -> tuple[int, int, int]:
    """``(n_y, n_lambda, total)`` for equal time and space levels."""
    sp_ = build_spaces(ProblemConfig(d=d, level_t=level, level_x=level))
    return sp_.n_y, sp_.n_lambda, sp_.total


def _kron(mats) -> sp.csr_matrix:
    return reduce(lambda a, b: sp.kron(a, b, format="csr"), mats)


def _outer(v: np.ndarray) -> sp.csr_matrix:
    m = sp.csr_matrix(np.outer(v, v))
    m.eliminate_zeros()
    return m


def _spatial_sum(factors_by_dir) -> sp.csr_matrix:
    """Sum over a list of per-direction factor tuples of their Kronecker products."""
    return reduce(lambda a, b: a + b, (_kron(f) for f in factors_by_dir)).tocsr()


class _SpatialGrams:
    """1D Gram factors of one spatial direction (all directions share them here)."""

    def __init__(self, s: SplineSpace1D):
        self.M = gram_1d(s, s, 0, 0)
        self.K = gram_1d(s, s, 1, 1)
        self.C02 = gram_1d(s, s, 0, 2)
        self.C20 = gram_1d(s, s, 2, 0)
        self.D = gram_1d(s, s, 2, 2)


def _spatial_mass(g: list[_SpatialGrams]) -> sp.csr_matrix:
    return _kron([gk.M for gk in g])


def _spatial_stiffness(g: list[_SpatialGrams]) -> sp.csr_matrix:
    d = len(g)
    return _spatial_sum([tuple(g[k].K if k == m else g[k].M for k in range(d)) for m in range(d)])


def _spatial_laplace_pairing(g: list[_SpatialGrams], lap_on_col: bool) -> sp.csr_matrix:
    # int sigma_j * Laplace(sigma_l) (or with the Laplacian on the row function)
    d = len(g)
    fac = [gk.C02 if lap_on_col else gk.C20 for gk in g]
    return _spatial_sum([tuple(fac[k] if k == m else g[k].M for k in range(d)) for m in range(d)])


def _spatial_bilaplace(g: list[_SpatialGrams]) -> sp.csr_matrix:
    d = len(g)
    terms = []
    for m in range(d):
        for n in range(d):
            facs = []
            for k in range(d):
                if k == m and k == n:
                    facs.append(g[k].D)
                elif k == m:
                    facs.append(g[k].C20)
                elif k == n:
                    facs.append(g[k].C02)
                else:
                    facs.append(g[k].M)
            terms.append(tuple(facs))
    return _spatial_sum(terms)


def _grams(spaces: DiscreteSpaces) -> list[_SpatialGrams]:
    first = _SpatialGrams(spaces.spatial[0])
    return [first if s == spaces.spatial[0] else _SpatialGrams(s) for s in spaces.spatial]


def assemble_wave_gram(spaces: DiscreteSpaces, grams=None) -> sp.csr_matrix:
    """Gram matrix of the wave operator ``W[y] = y'' - Laplace(y)`` in L2(0,T; L2(Omega))."""
    tau = spaces.temporal_y
    if tau.degree < 2 or any(s.degree < 2 for s in spaces.spatial):
        raise ValueError("wave-operator Gram needs degree >= 2")
    g = grams or _grams(spaces)
    Mt = gram_1d(tau, tau, 0, 0)
    Dt = gram_1d(tau, tau, 2, 2)
    T20 = gram_1d(tau, tau, 2, 0)
    T02 = gram_1d(tau, tau, 0, 2)
    Mx = _spatial_mass(g)
    S02 = _spatial_laplace_pairing(g, lap_on_col=True)
    S20 = _spatial_laplace_pairing(g, lap_on_col=False)
    Lx = _spatial_bilaplace(g)
    G = (sp.kron(Dt, Mx) - sp.kron(T20, S02) - sp.kron(T02, S20) + sp.kron(Mt, Lx)).tocsr()
    return G


def _face_operator(spaces: DiscreteSpaces, omega_s) -> sp.csr_matrix:
    """Spatial Gram of the L2 inner product on the boundary of the box ``omega_s^d``."""
    lo, hi = float(omega_s[0]), float(omega_s[1])
    a, b = spaces.spatial[0].interval
    if not (a < lo < hi < b):
        raise ValueError(f"omega_s {omega_s} must lie strictly inside {spaces.spatial[0].interval}")
    d = len(spaces.spatial)
    part = [gram_1d(s, s, 0, 0, (lo, hi)) for s in spaces.spatial]
    terms = []
    for k in range(d):
        for c in (lo, hi):
            Ec = _outer(boundary_vector(spaces.spatial[k], c))
            terms.append(tuple(Ec if m == k else part[m] for m in range(d)))
    return _spatial_sum(terms)


def assemble_observation(spaces: DiscreteSpaces, omega_s=(0.25, 0.75)) -> sp.csr_matrix:
    tau = spaces.temporal_y
    return sp.kron(gram_1d(tau, tau), _face_operator(spaces, omega_s), format="csr")


def assemble_initial_h10(spaces: DiscreteSpaces, grams=None) -> sp.csr_matrix:
    g = grams or _grams(spaces)
    tau0 = boundary_vector(spaces.temporal_y, 0.0, 0)
    return sp.kron(_outer(tau0), _spatial_stiffness(g), format="csr")


def assemble_initial_velocity(spaces: DiscreteSpaces, grams=None) -> sp.csr_matrix:
    g = grams or _grams(spaces)
    dtau0 = boundary_vector(spaces.temporal_y, 0.0, 1)
    return sp.kron(_outer(dtau0), _spatial_mass(g), format="csr")


@dataclass(frozen=True)
class SaddleSystem:
    config: ProblemConfig
    spaces: DiscreteSpaces
    A: sp.csr_matrix
    B: sp.csr_matrix
    P_Lambda: sp.csr_matrix
    Q: sp.csr_matrix
    R: sp.csr_matrix
    V: sp.csr_matrix
    G_W: sp.csr_matrix
    l: np.ndarray = field(repr=False)

    @property
    def P_Y(self) -> sp.csr_matrix:
        return self.A

    @property
    def n_y(self) -> int:
        return self.spaces.n_y

    @property
    def n_lambda(self) -> int:
        return self.spaces.n_lambda

    @property
    def n(self) -> int:
        return self.spaces.total

    @property
    def y0_offset(self) -> int:
        """Start of the z(0) = 0 index block inside the state numbering."""
        return self.spaces.n_x

    def with_load(self, l: np.ndarray) -> "SaddleSystem":
        l = np.asarray(l, dtype=float)
        if l.shape != (self.n_y,):
            raise ValueError(f"load must have shape ({self.n_y},), got {l.shape}")
        return SaddleSystem(self.config, self.spaces, self.A, self.B, self.P_Lambda,
                            self.Q, self.R, self.V, self.G_W, l)

    def rhs(self) -> np.ndarray:
        return np.concatenate([self.l, np.zeros(self.n_lambda)])


def assemble_system(config: ProblemConfig) -> SaddleSystem:
    spaces = build_spaces(config)
    g = _grams(spaces)
    G_W = assemble_wave_gram(spaces, g)
    Q = assemble_observation(spaces, config.omega_s)
    R = assemble_initial_h10(spaces, g)
    V = assemble_initial_velocity(spaces, g)
    GV = (G_W + V).tocsr()
    A = (Q + config.alpha * R + config.rho * GV).tocsr()
    off = spaces.n_x
    B = GV[off:, :].tocsr()
    P_Lambda = GV[off:, off:].tocsr()
    log.debug("assembled system: n_y=%d n_lambda=%d nnz(A)=%d", spaces.n_y, spaces.n_lambda, A.nnz)
    return SaddleSystem(config, spaces, A, B, P_Lambda, Q, R, V, G_W, np.zeros(spaces.n_y))


def face_quadrature(omega_s, level: int, degree: int = 2, interval=(0.0, 1.0)):
    """Tangential Gauss points/weights over ``omega_s`` split at the knots of ``level``."""
    s = make_space(degree, level, interval)
    lo, hi = float(omega_s[0]), float(omega_s[1])
    brk = s.breakpoints
    brk = np.unique(np.concatenate([[lo, hi], brk[(brk > lo) & (brk < hi)]]))
    return gauss_rule(brk, degree + 1)


def load_from_samples(spaces: DiscreteSpaces, omega_s, times: np.ndarray, pts: np.ndarray,
                      wts: np.ndarray, samples: np.ndarray) -> np.ndarray:
    """Load vector ``l_i = int_0^T int_Gamma z_d phi_i`` for a 2D trace.

    ``samples[n, f, q]`` holds z_d at time ``times[n]`` on face ``f`` (order:
    x=lo, x=hi, y=lo, y=hi) at tangential point ``pts[q]``.  Between samples
    z_d is linear in time; the time integral against each temporal basis
    function is computed exactly by Gauss rules on the merged breakpoints.
    """
    if len(spaces.spatial) != 2:
        raise ValueError("trace loads are implemented for d=2 only")
    times = np.asarray(times, dtype=float)
    samples = np.asarray(samples, dtype=float)
    nt, nf, nq = samples.shape
    if nt != times.size or nf != 4 or nq != pts.size:
        raise ValueError(f"trace shape {samples.shape} incompatible with {times.size} times, 4 faces, {pts.size} points")
    tau = spaces.temporal_y
    T = tau.interval[1]
    if abs(times[0]) > 1e-12 or times[-1] < T * (1 - 1e-12):
        raise ValueError(f"trace times must cover [0, {T}]")
    lo, hi = float(omega_s[0]), float(omega_s[1])
    if pts.min() < lo - 1e-12 or pts.max() > hi + 1e-12:
        raise ValueError("trace points are not on the observation faces")

    # temporal weights H[i, n] = int tau_i(t) hat_n(t) dt
    brk = np.unique(np.concatenate([tau.breakpoints, times[times < T], [T]]))
    tq, tw = gauss_rule(brk, tau.degree + 2)
    Tau = collocation(tau, tq).toarray()
    n = np.clip(np.searchsorted(times, tq, side="right") - 1, 0, nt - 2)
    theta = (tq - times[n]) / (times[n + 1] - times[n])
    Hat = sp.csr_matrix((np.concatenate([1 - theta, theta]),
                         (np.tile(np.arange(tq.size), 2), np.concatenate([n, n + 1]))),
                        shape=(tq.size, nt))
    H = (Tau.T * tw) @ Hat  # (n_tau, nt)

    sx, sy = spaces.spatial
    Px = collocation(sx, pts).toarray() * wts[:, None]
    Py = collocation(sy, pts).toarray() * wts[:, None]
    L = np.zeros((tau.dim, sx.dim, sy.dim))
    for f, (axis, c) in enumerate([(0, lo), (0, hi), (1, lo), (1, hi)]):
        Z = H @ samples[:, f, :]  # (n_tau, nq)
        if axis == 0:
            ex = boundary_vector(sx, c)
            L += np.einsum("a,tq,qb->tab", ex, Z, Py)
        else:
            ey = boundary_vector(sy, c)
            L += np.einsum("tq,qa,b->tab", Z, Px, ey)
    return L.reshape(-1)


def assemble_load(spaces: DiscreteSpaces, trace) -> np.ndarray:
    """Load vector from a :class:`wavepat.pat.ForwardTrace`-like object."""
    return load_from_samples(spaces, trace.omega_s, trace.times, trace.points, trace.weights, trace.samples)
