"""Parameter sweeps behind the ``dims``, ``study-alpha`` and ``study-rho`` commands."""
from __future__ import annotations

import logging
import time

from .assembly import ProblemConfig, assemble_system, build_spaces
from .solver import DENSE_LIMIT, condition_number, factorize_preconditioner, random_start_iterations

log = logging.getLogger(__name__)

DIMS_COLUMNS = ["d", "level", "n_y", "n_lambda", "dofs"]
ALPHA_COLUMNS = ["d", "level", "alpha", "rho", "dofs", "kappa", "iterations", "converged"]
RHO_COLUMNS = ["d", "level", "rho", "alpha", "dofs", "iterations", "converged"]


def dims_table(d: int, levels) -> list[list]:
    """State, multiplier and total DoFs for equal time and space levels."""
    rows = []
    for lv in levels:
        s = build_spaces(ProblemConfig(d=d, level_t=lv, level_x=lv))
        rows.append([d, lv, s.n_y, s.n_lambda, s.total])
    return rows


def study_alpha(d: int, levels, alphas, rho: float = 1.0, tol: float = 1e-8, maxit: int = 10000,
                seed: int = 42, stop: str = "error", kappa: bool = True,
                dense_limit: int = DENSE_LIMIT) -> list[list]:
    """Condition numbers (dense-eligible sizes only) and MINRES iterations per (level, alpha)."""
    rows = []
    for lv in levels:
        fl = None
        for a in alphas:
            t0 = time.perf_counter()
            system = assemble_system(ProblemConfig(d=d, level_t=lv, level_x=lv, alpha=a, rho=rho))
            k = None
            if kappa and system.n <= dense_limit:
                k = condition_number(system, dense_limit).kappa
            factors = factorize_preconditioner(system, P_Lambda_factor=fl)
            fl = factors.P_Lambda
            rep = random_start_iterations(system, factors, tol=tol, maxit=maxit, seed=seed, stop=stop)
            del factors  # free the state-block factor before the next one is built
            log.info("d=%d level=%d alpha=%g: kappa=%s iterations=%d (%.1fs)", d, lv, a, k,
                     rep.iterations, time.perf_counter() - t0)
            rows.append([d, lv, a, rho, system.n, k, rep.iterations, rep.converged])
    return rows


def study_rho(d: int, level: int, rhos, alphas=(1.0,), tol: float = 1e-8, maxit: int = 10000,
              seed: int = 42, stop: str = "error") -> list[list]:
    """MINRES iterations per (rho, alpha) at one level."""
    rows = []
    fl = None
    for r in rhos:
        for a in alphas:
            t0 = time.perf_counter()
            system = assemble_system(ProblemConfig(d=d, level_t=level, level_x=level, alpha=a, rho=r))
            factors = factorize_preconditioner(system, P_Lambda_factor=fl)
            fl = factors.P_Lambda
            rep = random_start_iterations(system, factors, tol=tol, maxit=maxit, seed=seed, stop=stop)
            del factors
            log.info("d=%d level=%d rho=%g alpha=%g: iterations=%d (%.1fs)", d, level, r, a,
                     rep.iterations, time.perf_counter() - t0)
            rows.append([d, level, r, a, system.n, rep.iterations, rep.converged])
    return rows
