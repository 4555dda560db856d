"""Block saddle operator, block-diagonal norm preconditioner and MINRES."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .assembly import SaddleSystem

log = logging.getLogger(__name__)

DENSE_LIMIT = 4000

__all__ = [
    "NotPositiveDefinite",
    "TooLargeForDense",
    "MaxIterationsExceeded",
    "BreakdownDetected",
    "BlockSaddleOperator",
    "PreconditionerFactors",
    "MinresReport",
    "SpectrumReport",
    "factorize_preconditioner",
    "minres",
    "condition_number",
    "lanczos_condition_estimate",
    "infsup_estimate",
    "random_start_iterations",
]


class SolverError(RuntimeError):
    pass


class NotPositiveDefinite(SolverError):
    def __init__(self, block: str, pivot: int):
        super().__init__(f"block {block} is not positive definite (pivot {pivot})")
        self.block = block
        self.pivot = pivot


class TooLargeForDense(SolverError):
    pass


class MaxIterationsExceeded(SolverError):
    def __init__(self, x, report):
        super().__init__(f"MINRES did not converge in {report.iterations} iterations "
                         f"(relative residual {report.final_relative_residual:.3e})")
        self.x = x
        self.report = report


class BreakdownDetected(SolverError):
    def __init__(self, x, report):
        super().__init__(f"Lanczos breakdown after {report.iterations} iterations")
        self.x = x
        self.report = report


class BlockSaddleOperator(spla.LinearOperator):
    """``[[A, B^T], [B, 0]]`` applied blockwise."""

    def __init__(self, A, B):
        self.A = A
        self.B = B
        self.n_y = A.shape[0]
        self.n_lambda = B.shape[0]
        n = self.n_y + self.n_lambda
        super().__init__(dtype=np.float64, shape=(n, n))

    @classmethod
    def from_system(cls, system: SaddleSystem) -> "BlockSaddleOperator":
        return cls(system.A, system.B)

    def _matvec(self, x):
        x = np.ravel(x)
        y, lam = x[: self.n_y], x[self.n_y:]
        return np.concatenate([self.A @ y + self.B.T @ lam, self.B @ y])

    def _rmatvec(self, x):
        return self._matvec(x)

    def to_sparse(self) -> sp.csr_matrix:
        return sp.bmat([[self.A, self.B.T], [self.B, None]], format="csr")


def nested_dissection(shape, width: int = 2, leaf: int = 64) -> np.ndarray:
    """Geometric nested-dissection ordering of a tensor-product index grid.

    Each box is cut across its longest axis by a slab ``width`` layers thick,
    which decouples the two halves when basis functions interact with
    neighbours at most ``width`` indices away.  Separators are numbered last.
    """
    idx = np.arange(int(np.prod(shape))).reshape(shape)
    out = []

    def rec(block):
        ax = int(np.argmax(block.shape))
        m = block.shape[ax]
        if block.size <= leaf or m <= 2 * width + 1:
            out.append(block.ravel())
            return
        c = m // 2 - width // 2
        rec(np.take(block, range(0, c), axis=ax))
        rec(np.take(block, range(c + width, m), axis=ax))
        out.append(np.take(block, range(c, c + width), axis=ax).ravel())

    rec(idx)
    return np.concatenate(out)


class _SPDFactor:
    """Sparse LU of an SPD matrix with a symmetric ordering and no pivoting.

    Without pivoting the diagonal of U holds the LDL^T pivots of the permuted
    matrix, whose signs certify positive definiteness.
    """

    def __init__(self, M: sp.spmatrix, name: str, perm: np.ndarray | None = None):
        M = sp.csr_matrix(M)
        self.name = name
        self.shape = M.shape
        self.perm = np.arange(M.shape[0]) if perm is None else np.asarray(perm)
        Mp = sp.csc_matrix(M[self.perm][:, self.perm])
        self.lu = spla.splu(Mp, permc_spec="NATURAL", diag_pivot_thresh=0.0,
                            options={"SymmetricMode": True})
        piv = self.lu.U.diagonal()
        bad = np.flatnonzero(~(piv > 0))
        if bad.size or not np.array_equal(self.lu.perm_r, self.lu.perm_c):
            first = int(bad[0]) if bad.size else int(np.flatnonzero(self.lu.perm_r != self.lu.perm_c)[0])
            # pivot position in the original numbering
            raise NotPositiveDefinite(name, int(self.perm[self.lu.perm_c[first]]))

    @property
    def nnz(self) -> int:
        return self.lu.L.nnz + self.lu.U.nnz

    def solve(self, r: np.ndarray) -> np.ndarray:
        out = np.empty_like(r)
        out[self.perm] = self.lu.solve(r[self.perm])
        return out


@dataclass
class PreconditionerFactors:
    P_Y: _SPDFactor
    P_Lambda: _SPDFactor

    @property
    def n_y(self) -> int:
        return self.P_Y.shape[0]

    def apply(self, r: np.ndarray) -> np.ndarray:
        n_y = self.n_y
        return np.concatenate([self.P_Y.solve(r[:n_y]), self.P_Lambda.solve(r[n_y:])])


def factorize_preconditioner(system: SaddleSystem, P_Y=None, P_Lambda=None,
                             P_Lambda_factor: _SPDFactor | None = None) -> PreconditionerFactors:
    """Factor both diagonal blocks with a nested-dissection ordering.

    ``P_Lambda`` does not depend on alpha or rho, so a factor from an earlier
    call may be passed in as ``P_Lambda_factor`` and reused.
    """
    P_Y = system.P_Y if P_Y is None else P_Y
    P_Lambda = system.P_Lambda if P_Lambda is None else P_Lambda
    sp_ = system.spaces
    xshape = tuple(s.dim for s in sp_.spatial)
    width = sp_.temporal_y.degree
    fy = _SPDFactor(P_Y, "P_Y", nested_dissection((sp_.temporal_y.dim,) + xshape, width))
    if P_Lambda_factor is not None:
        fl = P_Lambda_factor
    else:
        fl = _SPDFactor(P_Lambda, "P_Lambda", nested_dissection((sp_.temporal_lambda.dim,) + xshape, width))
    log.debug("factorized preconditioner: nnz(L+U) = %d + %d", fy.nnz, fl.nnz)
    return PreconditionerFactors(fy, fl)


@dataclass
class MinresReport:
    iterations: int
    residual_history: list = field(default_factory=list)
    converged: bool = False
    final_relative_residual: float = math.nan
    breakdown: bool = False
    stop: str = "residual"
    error_history: list = field(default_factory=list)


def minres(operator, factors, rhs, x0=None, tol: float = 1e-8, maxit: int = 1000,
           raise_on_failure: bool = False, stop: str = "residual", x_exact=None):
    """Preconditioned MINRES for a symmetric operator and an SPD preconditioner.

    The iteration minimizes ``||b - K x||_{P^{-1}}`` over the Krylov space of
    ``P^{-1} K``; ``residual_history[k]`` is that norm after ``k`` iterations.

    With ``stop="residual"`` the iteration ends once the norm drops below
    ``tol`` times its initial value.  ``stop="error"`` instead monitors the
    Euclidean error ``||x_k - x_exact||`` relative to the initial error
    (``x_exact`` defaults to zero, the solution of a homogeneous system).
    """
    if stop not in ("residual", "error"):
        raise ValueError(f"unknown stopping rule {stop!r}")
    apply_op = operator.matvec if hasattr(operator, "matvec") else (lambda v: operator @ v)
    apply_prec = factors.apply if hasattr(factors, "apply") else factors
    b = np.asarray(rhs, dtype=float)
    n = b.size
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)

    r1 = b - apply_op(x) if x0 is not None else b.copy()
    y = apply_prec(r1)
    beta1 = float(r1 @ y)
    if beta1 < 0:
        raise NotPositiveDefinite("preconditioner", -1)
    beta1 = math.sqrt(beta1)
    report = MinresReport(0, [beta1], stop=stop)
    if stop == "error":
        x_exact = np.zeros(n) if x_exact is None else np.asarray(x_exact, dtype=float)
        err0 = float(np.linalg.norm(x - x_exact))
        report.error_history.append(err0)
    if beta1 == 0.0:
        report.converged = True
        report.final_relative_residual = 0.0
        return x, report

    eps = np.finfo(float).eps
    oldb, beta = 0.0, beta1
    dbar, epsln = 0.0, 0.0
    phibar = beta1
    cs, sn = -1.0, 0.0
    w = np.zeros(n)
    w2 = np.zeros(n)
    r2 = r1.copy()
    tnorm2 = 0.0
    itn = 0
    while itn < maxit:
        itn += 1
        # Lanczos step in the P-inner product
        s = 1.0 / beta
        v = s * y
        y = apply_op(v)
        if itn >= 2:
            y = y - (beta / oldb) * r1
        alfa = float(v @ y)
        y = y - (alfa / beta) * r2
        r1, r2 = r2, y
        y = apply_prec(r2)
        oldb = beta
        beta2 = float(r2 @ y)
        if beta2 < 0:
            raise NotPositiveDefinite("preconditioner", -1)
        beta = math.sqrt(beta2)
        tnorm2 += alfa**2 + oldb**2 + beta**2

        # QR update of the tridiagonal
        oldeps = epsln
        delta = cs * dbar + sn * alfa
        gbar = sn * dbar - cs * alfa
        epsln = sn * beta
        dbar = -cs * beta
        gamma = max(math.hypot(gbar, beta), eps)
        cs = gbar / gamma
        sn = beta / gamma
        phi = cs * phibar
        phibar = sn * phibar

        denom = 1.0 / gamma
        w1, w2 = w2, w
        w = (v - oldeps * w1 - delta * w2) * denom
        x = x + phi * w

        res = abs(phibar)
        report.residual_history.append(res)
        report.iterations = itn
        report.final_relative_residual = res / beta1
        if stop == "error":
            err = float(np.linalg.norm(x - x_exact))
            report.error_history.append(err)
            done = err <= tol * err0
        else:
            done = res <= tol * beta1
        if done:
            report.converged = True
            break
        if beta <= eps * math.sqrt(tnorm2):
            report.breakdown = True
            log.warning("Lanczos breakdown at iteration %d", itn)
            if raise_on_failure:
                raise BreakdownDetected(x, report)
            break
    if not report.converged and raise_on_failure and not report.breakdown:
        raise MaxIterationsExceeded(x, report)
    return x, report


@dataclass
class SpectrumReport:
    eig_min_abs: float
    eig_max_abs: float
    kappa: float
    negative_count: int
    estimate: bool = False


def _dense_blocks(system: SaddleSystem):
    op = BlockSaddleOperator.from_system(system)
    K = op.to_sparse().toarray()
    P = sp.block_diag([system.P_Y, system.P_Lambda]).toarray()
    return K, P


def condition_number(system: SaddleSystem, limit: int = DENSE_LIMIT) -> SpectrumReport:
    """Spectral condition number of the preconditioned saddle operator (dense)."""
    if system.n > limit:
        raise TooLargeForDense(f"{system.n} unknowns exceed the dense limit {limit}")
    K, P = _dense_blocks(system)
    ev = sla.eigh(K, P, eigvals_only=True)
    a = np.abs(ev)
    return SpectrumReport(float(a.min()), float(a.max()), float(a.max() / a.min()), int((ev < 0).sum()))


def lanczos_condition_estimate(system: SaddleSystem, factors: PreconditionerFactors | None = None,
                               steps: int = 200, seed: int = 42) -> SpectrumReport:
    """Ritz-value estimate of the condition number for systems too big for dense work.

    Extreme Ritz values converge quickly, but the smallest magnitude of an
    indefinite spectrum is approached from above only if the interior gap
    around zero is resolved; treat the result as an estimate.
    """
    factors = factors or factorize_preconditioner(system)
    op = BlockSaddleOperator.from_system(system)
    n = system.n
    m = min(steps, n)
    rng = np.random.default_rng(seed)
    Vs = np.zeros((m + 1, n))   # P-orthonormal Lanczos vectors
    PVs = np.zeros((m + 1, n))  # P times the Lanczos vectors
    P = sp.block_diag([system.P_Y, system.P_Lambda], format="csr")
    v = rng.standard_normal(n)
    Pv = P @ v
    nv = math.sqrt(v @ Pv)
    Vs[0], PVs[0] = v / nv, Pv / nv
    alphas, betas = [], []
    for j in range(m):
        w = factors.apply(op.matvec(Vs[j]))
        a = float(w @ PVs[j])
        # full reorthogonalization in the P-inner product
        w = w - Vs[: j + 1].T @ (PVs[: j + 1] @ w)
        w = w - Vs[: j + 1].T @ (PVs[: j + 1] @ w)
        Pw = P @ w
        b = math.sqrt(max(float(w @ Pw), 0.0))
        alphas.append(a)
        if j == m - 1 or b < 1e-12:
            break
        betas.append(b)
        Vs[j + 1], PVs[j + 1] = w / b, Pw / b
    theta = sla.eigvalsh_tridiagonal(np.array(alphas), np.array(betas[: len(alphas) - 1]))
    at = np.abs(theta)
    return SpectrumReport(float(at.min()), float(at.max()), float(at.max() / at.min()),
                          int((theta < 0).sum()), estimate=True)


def infsup_estimate(system: SaddleSystem, limit: int = DENSE_LIMIT) -> float:
    """Smallest singular value of B between the P_Lambda- and A-norms."""
    if system.n > limit:
        raise TooLargeForDense(f"{system.n} unknowns exceed the dense limit {limit}")
    A = system.A.toarray()
    B = system.B.toarray()
    S = B @ sla.cho_solve(sla.cho_factor(A), B.T)
    S = 0.5 * (S + S.T)
    ev = sla.eigh(S, system.P_Lambda.toarray(), eigvals_only=True)
    return float(math.sqrt(max(ev.min(), 0.0)))


def random_start_iterations(system: SaddleSystem, factors: PreconditionerFactors | None = None,
                            tol: float = 1e-8, maxit: int = 10000, seed: int = 42,
                            stop: str = "error") -> MinresReport:
    """MINRES on the homogeneous system from a seeded random start.

    The exact solution is zero, so by default the iteration stops on the
    reduction of the error (the iterate itself).
    """
    factors = factors or factorize_preconditioner(system)
    op = BlockSaddleOperator.from_system(system)
    x0 = np.random.default_rng(seed).standard_normal(system.n)
    _, report = minres(op, factors, np.zeros(system.n), x0=x0, tol=tol, maxit=maxit, stop=stop)
    return report
