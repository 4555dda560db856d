"""Photoacoustic pipeline: phantoms, forward leapfrog simulation, reconstruction."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .assembly import ProblemConfig, assemble_load, assemble_system, face_quadrature
from .solver import BlockSaddleOperator, MinresReport, factorize_preconditioner, minres
from .spline import Constraint, SplineSpace1D, collocation, gauss_rule, gram_1d, make_space

log = logging.getLogger(__name__)

FACES = ((0, "lo"), (0, "hi"), (1, "lo"), (1, "hi"))


class CFLViolation(ValueError):
    def __init__(self, h_t: float, bound: float):
        super().__init__(f"time step {h_t:.6g} exceeds the leapfrog stability bound {bound:.6g}")
        self.h_t = h_t
        self.bound = bound


# -- fields -----------------------------------------------------------------

@dataclass(frozen=True)
class SplineField2D:
    """Tensor-product spline ``u(x, y) = sum_ij c_ij s_i(x) s_j(y)`` on one 1D space."""

    space: SplineSpace1D
    coeffs: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=float)
        if c.shape != (self.space.dim, self.space.dim):
            raise ValueError(f"coefficient shape {c.shape} does not match space dimension {self.space.dim}")
        object.__setattr__(self, "coeffs", c)

    def grid(self, x, y, dx: int = 0, dy: int = 0) -> np.ndarray:
        """Values on the tensor grid ``x`` by ``y``; result indexed ``[ix, iy]``."""
        Bx = collocation(self.space, x, dx)
        By = collocation(self.space, y, dy)
        return np.asarray((Bx @ (By @ self.coeffs.T).T))

    def __call__(self, x, y) -> np.ndarray:
        """Pointwise values at paired coordinates."""
        Bx = collocation(self.space, np.atleast_1d(x)).toarray()
        By = collocation(self.space, np.atleast_1d(y)).toarray()
        return np.einsum("pi,ij,pj->p", Bx, self.coeffs, By)

    def scaled(self, s: float) -> "SplineField2D":
        return SplineField2D(self.space, s * self.coeffs)


def _mass_cho(space: SplineSpace1D):
    return sla.cho_factor(gram_1d(space).toarray())


def l2_project(space: SplineSpace1D, f, oversample: int = 1) -> SplineField2D:
    """L2 projection of ``f(X, Y)`` (vectorized over grids) into ``space x space``."""
    sub = np.linspace(0.0, 1.0, oversample + 1)
    brk = space.breakpoints
    fine = np.unique((brk[:-1, None] + np.diff(brk)[:, None] * sub[None, :]).ravel())
    pts, wts = gauss_rule(fine, space.degree + 1)
    X, Y = np.meshgrid(pts, pts, indexing="ij")
    F = np.asarray(f(X, Y), dtype=float) * wts[:, None] * wts[None, :]
    B = collocation(space, pts)
    rhs = np.asarray((B.T @ (B.T @ F.T).T))
    cho = _mass_cho(space)
    C = sla.cho_solve(cho, sla.cho_solve(cho, rhs).T).T
    return SplineField2D(space, C)


def change_level(field_: SplineField2D, target: SplineSpace1D) -> SplineField2D:
    """L2 projection of a spline field onto another spline space (exact quadrature)."""
    if target == field_.space:
        return field_
    Mc = gram_1d(target, field_.space).toarray()
    cho = _mass_cho(target)
    rhs = Mc @ field_.coeffs @ Mc.T
    C = sla.cho_solve(cho, sla.cho_solve(cho, rhs).T).T
    return SplineField2D(target, C)


# -- phantoms -----------------------------------------------------------------

@dataclass(frozen=True)
class Disk:
    center: tuple
    radius: float
    amplitude: float = 1.0

    def indicator(self, X, Y):
        return (X - self.center[0]) ** 2 + (Y - self.center[1]) ** 2 < self.radius**2

    def bbox(self):
        cx, cy = self.center
        r = self.radius
        return cx - r, cx + r, cy - r, cy + r


@dataclass(frozen=True)
class Rect:
    x0: float
    x1: float
    y0: float
    y1: float
    amplitude: float = 1.0

    def indicator(self, X, Y):
        return (X > self.x0) & (X < self.x1) & (Y > self.y0) & (Y < self.y1)

    def bbox(self):
        return self.x0, self.x1, self.y0, self.y1


@dataclass(frozen=True)
class AnnularArc:
    """Part of an annulus between two polar angles (degrees, counterclockwise)."""

    center: tuple
    r_inner: float
    r_outer: float
    theta0: float
    theta1: float
    amplitude: float = 1.0

    def indicator(self, X, Y):
        dx, dy = X - self.center[0], Y - self.center[1]
        r2 = dx**2 + dy**2
        ang = np.degrees(np.arctan2(dy, dx)) % 360.0
        lo, hi = self.theta0 % 360.0, self.theta1 % 360.0
        inside_ang = (ang >= lo) & (ang <= hi) if lo <= hi else (ang >= lo) | (ang <= hi)
        return (r2 > self.r_inner**2) & (r2 < self.r_outer**2) & inside_ang

    def bbox(self):
        cx, cy = self.center
        r = self.r_outer
        return cx - r, cx + r, cy - r, cy + r


SHAPES = {"disk": Disk, "rect": Rect, "annular_arc": AnnularArc}


def shape_to_dict(s) -> dict:
    d = {"kind": next(k for k, v in SHAPES.items() if isinstance(s, v))}
    d.update({k: (list(v) if isinstance(v, tuple) else v) for k, v in s.__dict__.items()})
    return d


def shape_from_dict(d: dict):
    d = dict(d)
    kind = d.pop("kind")
    if kind not in SHAPES:
        raise ValueError(f"unknown shape kind {kind!r}")
    if "center" in d:
        d["center"] = tuple(d["center"])
    return SHAPES[kind](**d)


def smiley() -> list:
    """Face disk with two eyes and a mouth cut out of it."""
    return [
        Disk((0.5, 0.5), 0.18, 1.0),
        Disk((0.43, 0.57), 0.03, -0.8),
        Disk((0.57, 0.57), 0.03, -0.8),
        AnnularArc((0.5, 0.5), 0.07, 0.11, 200.0, 340.0, -0.8),
    ]


@dataclass(frozen=True)
class Phantom:
    field: SplineField2D
    shapes: tuple = ()
    name: str = "custom"

    @property
    def level(self) -> int:
        return self.field.space.level

    def descriptor(self) -> dict:
        return {"name": self.name, "level": self.level, "degree": self.field.space.degree,
                "shapes": [shape_to_dict(s) for s in self.shapes]}


def make_phantom(shapes, level: int = 8, degree: int = 2, omega_s=(0.25, 0.75),
                 oversample: int = 4, name: str = "custom") -> Phantom:
    """Project a sum of signed shape indicators into ``S_{degree,level}`` with zero boundary values."""
    shapes = tuple(shapes)
    lo, hi = omega_s
    for s in shapes:
        x0, x1, y0, y1 = s.bbox()
        if x0 < lo or y0 < lo or x1 > hi or y1 > hi:
            raise ValueError(f"shape {s} is not inside the observation box {omega_s}")
    space = make_space(degree, level, (0.0, 1.0), Constraint.ZERO_BOTH_ENDS)
    if not shapes:
        return Phantom(SplineField2D(space, np.zeros((space.dim, space.dim))), shapes, name)

    def f(X, Y):
        out = np.zeros_like(X)
        for s in shapes:
            out += s.amplitude * s.indicator(X, Y)
        return out

    return Phantom(l2_project(space, f, oversample), shapes, name)


def phantom_from_descriptor(desc: dict) -> Phantom:
    shapes = [shape_from_dict(s) for s in desc.get("shapes", [])]
    return make_phantom(shapes, level=int(desc.get("level", 8)), degree=int(desc.get("degree", 2)),
                        name=desc.get("name", "custom"))


# -- forward simulation ---------------------------------------------------------

@dataclass
class ForwardTrace:
    """Boundary samples of the forward wave field on the faces of the observation box.

    ``samples[n, f, q]`` is the field at ``times[n]`` on face ``f`` (order
    x=lo, x=hi, y=lo, y=hi) at tangential coordinate ``points[q]``.
    """

    times: np.ndarray
    omega_s: tuple
    points: np.ndarray
    weights: np.ndarray
    samples: np.ndarray
    level: int
    h_t: float
    T: float
    phantom: dict = field(default_factory=dict)
    energy: np.ndarray | None = None

    def header(self) -> dict:
        return {"format": "wavepat-trace", "version": 1, "level": self.level, "h_t": self.h_t,
                "T": self.T, "n_steps": int(self.times.size - 1), "omega_s": list(self.omega_s),
                "n_points": int(self.points.size), "faces": ["x=lo", "x=hi", "y=lo", "y=hi"],
                "phantom": self.phantom}


class _LeapfrogOperator:
    """``M^{-1} K`` for the 2D tensor space, applied to coefficient matrices."""

    def __init__(self, space: SplineSpace1D):
        M = gram_1d(space).toarray()
        K = gram_1d(space, space, 1, 1).toarray()
        p = space.degree
        self.M, self.K = M, K
        # upper banded storage for the banded Cholesky solver
        ab = np.zeros((p + 1, M.shape[0]))
        for k in range(p + 1):
            ab[p - k, k:] = np.diagonal(M, k)
        self.cho = sla.cholesky_banded(ab)
        self.Ks = gram_1d(space, space, 1, 1)
        self.Ms = gram_1d(space)

    def minv(self, X):
        return sla.cho_solve_banded((self.cho, False), X)

    def __call__(self, C):
        # (M1 x M1)^{-1} (K1 x M1 + M1 x K1) vec(C)
        return self.minv(np.asarray(self.Ks @ C)) + self.minv(np.asarray(self.Ks @ C.T)).T

    def mass(self, X, Y):
        return float(np.sum(X * np.asarray(self.Ms @ (self.Ms @ Y.T).T)))

    def stiff(self, X, Y):
        KY = np.asarray(self.Ks @ (self.Ms @ Y.T).T) + np.asarray(self.Ms @ (self.Ks @ Y.T).T)
        return float(np.sum(X * KY))


def spectral_radius(op: _LeapfrogOperator, n: int, iters: int = 200, seed: int = 0) -> float:
    """Power-iteration estimate of the largest eigenvalue of ``M^{-1} K``."""
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, n))
    lam = 0.0
    for _ in range(iters):
        Y = op(X)
        # Rayleigh quotient in the M-inner product
        lam = op.stiff(X, X) / op.mass(X, X)
        X = Y / np.linalg.norm(Y)
    return lam


def forward_simulate(phantom: Phantom, spatial_level: int | None = None, h_t: float | None = None,
                     T: float = 0.25, omega_s=(0.25, 0.75), n_steps: int | None = None,
                     record_energy: bool = False) -> ForwardTrace:
    """Leapfrog in time, spline Galerkin in space, homogeneous Dirichlet on the unit square.

    Starts from the phantom at rest; the first step is the second-order Taylor
    step ``c1 = c0 - h^2/2 M^{-1} K c0``.
    """
    if n_steps is None:
        n_steps = 2**10 if h_t is None else int(round(T / h_t))
    h_t = T / n_steps if h_t is None else float(h_t)
    if abs(n_steps * h_t - T) > 1e-12 * T:
        raise ValueError(f"h_t={h_t} does not divide T={T}")
    level = phantom.level if spatial_level is None else int(spatial_level)
    space = make_space(phantom.field.space.degree, level, (0.0, 1.0), Constraint.ZERO_BOTH_ENDS)
    u0 = change_level(phantom.field, space)
    op = _LeapfrogOperator(space)
    lam = spectral_radius(op, space.dim)
    bound = math.sqrt(4 * 0.9 / lam)
    if h_t > bound:
        raise CFLViolation(h_t, bound)

    lo, hi = float(omega_s[0]), float(omega_s[1])
    pts, wts = face_quadrature(omega_s, level, space.degree)
    E = {c: collocation(space, [c]).toarray().ravel() for c in (lo, hi)}
    G = collocation(space, pts).toarray()

    def sample(C):
        CG = C @ G.T          # (n, nq): values at (node_i basis, point)
        GC = G @ C            # (nq, n)
        return np.stack([E[lo] @ CG, E[hi] @ CG, GC @ E[lo], GC @ E[hi]])

    samples = np.empty((n_steps + 1, 4, pts.size))
    energy = np.empty(n_steps) if record_energy else None
    c_prev = u0.coeffs.copy()
    c = c_prev - 0.5 * h_t**2 * op(c_prev)
    samples[0] = sample(c_prev)
    samples[1] = sample(c)
    h2 = h_t**2

    def _energy(c_new, c_old):
        dc = c_new - c_old
        return 0.5 * op.mass(dc, dc) / h2 + 0.5 * op.stiff(c_new, c_old)

    if record_energy:
        energy[0] = _energy(c, c_prev)
    for n in range(1, n_steps):
        c_next = 2.0 * c - c_prev - h2 * op(c)
        c_prev, c = c, c_next
        samples[n + 1] = sample(c)
        if record_energy:
            energy[n] = _energy(c, c_prev)
    times = np.arange(n_steps + 1) * h_t
    times[-1] = T
    return ForwardTrace(times, (lo, hi), pts, wts, samples, level, h_t, T,
                        phantom.descriptor(), energy)


# -- reconstruction ---------------------------------------------------------------

@dataclass
class Metrics:
    rel_l2: float
    rel_h1_semi: float
    relative: bool = True


@dataclass
class ReconstructionResult:
    config: ProblemConfig
    y: np.ndarray
    lam: np.ndarray
    u_rec: SplineField2D
    report: MinresReport
    metrics: Metrics | None = None

    def state_at(self, t: float, x, y) -> np.ndarray:
        """Pointwise values of the space-time state ``y_h(x, t)``."""
        sp_t = make_space(self.config.degree, self.config.level_t, (0.0, self.config.T))
        tau = collocation(sp_t, [t]).toarray().ravel()
        n = self.u_rec.space.dim
        Ct = np.tensordot(tau, self.y.reshape(sp_t.dim, n, n), axes=1)
        return SplineField2D(self.u_rec.space, Ct)(x, y)


def error_metrics(u_rec: SplineField2D, truth: SplineField2D, grid: int = 512) -> Metrics:
    """Relative L2 and H1-seminorm errors sampled on a uniform cell-centred grid."""
    g = (np.arange(grid) + 0.5) / grid
    e = u_rec.grid(g, g) - truth.grid(g, g)
    ex = u_rec.grid(g, g, 1, 0) - truth.grid(g, g, 1, 0)
    ey = u_rec.grid(g, g, 0, 1) - truth.grid(g, g, 0, 1)
    num_l2 = math.sqrt(np.mean(e**2))
    num_h1 = math.sqrt(np.mean(ex**2 + ey**2))
    den_l2 = math.sqrt(np.mean(truth.grid(g, g) ** 2))
    den_h1 = math.sqrt(np.mean(truth.grid(g, g, 1, 0) ** 2 + truth.grid(g, g, 0, 1) ** 2))
    if den_l2 == 0.0 or den_h1 == 0.0:
        return Metrics(num_l2, num_h1, relative=False)
    return Metrics(num_l2 / den_l2, num_h1 / den_h1)


def reconstruct(config: ProblemConfig, trace: ForwardTrace, phantom: Phantom | None = None,
                tol: float = 1e-8, maxit: int = 20000, factors=None) -> ReconstructionResult:
    """Solve the augmented optimality system for boundary data ``trace``."""
    if config.d != 2:
        raise ValueError("reconstruction is implemented for d=2")
    if trace.level < config.level_x:
        raise ValueError(f"trace recorded at spatial level {trace.level} cannot feed a level "
                         f"{config.level_x} reconstruction (face quadrature too coarse)")
    if tuple(trace.omega_s) != tuple(config.omega_s):
        raise ValueError(f"trace observation box {trace.omega_s} differs from {config.omega_s}")
    if abs(trace.T - config.T) > 1e-12:
        raise ValueError(f"trace final time {trace.T} differs from {config.T}")
    system = assemble_system(config)
    system = system.with_load(assemble_load(system.spaces, trace))
    factors = factors or factorize_preconditioner(system)
    op = BlockSaddleOperator.from_system(system)
    x, report = minres(op, factors, system.rhs(), tol=tol, maxit=maxit)
    if not report.converged:
        log.warning("MINRES stopped after %d iterations without reaching tol", report.iterations)
    y, lam = x[: system.n_y], x[system.n_y:]
    spaces = system.spaces
    n = spaces.spatial[0].dim
    tau0 = collocation(spaces.temporal_y, [0.0]).toarray().ravel()
    u = SplineField2D(spaces.spatial[0], np.tensordot(tau0, y.reshape(spaces.temporal_y.dim, n, n), axes=1))
    metrics = error_metrics(u, phantom.field) if phantom is not None else None
    return ReconstructionResult(config, y, lam, u, report, metrics)
