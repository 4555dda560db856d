"""Acceptance criteria, one recorded pass/fail line each.

Reference values are the published tables for this method; tolerances are
fixed here and must not be loosened to make a run pass.
"""
import math
import os
import time

import numpy as np
import pytest
import scipy.sparse as sp

from oracle import brute_force_blocks
from wavepat.assembly import ProblemConfig, assemble_system, dofs
from wavepat.pat import forward_simulate, make_phantom, reconstruct, smiley
from wavepat.solver import (BlockSaddleOperator, condition_number, factorize_preconditioner, minres)
from wavepat.studies import dims_table, study_alpha, study_rho

ALPHAS = [1.0, 1e-2, 1e-5, 1e-7]

KAPPA_REF = {
    (2, 2): [2.65163, 2.64811, 2.64779, 2.64770],
    (2, 3): [2.66313, 2.65083, 2.64879, 2.64879],
    (3, 2): [2.65112, 2.649, 2.64887, 2.64587],
}
ITER_REF = {
    (2, 2): [9, 9, 9, 9],
    (2, 3): [9, 9, 9, 9],
    (2, 4): [9, 7, 7, 7],
    (2, 5): [7, 7, 7, 7],
    (3, 2): [9, 9, 9, 9],
    (3, 3): [7, 7, 7, 7],
}
DOF_REF = {(2, 2): 176, (2, 3): 1216, (2, 4): 8960, (2, 5): 68608, (3, 2): 704, (3, 3): 9728}

KAPPA_RTOL = 0.02
ITER_SLACK = 2
RELL2_ALPHA1 = 0.8


@pytest.fixture(scope="module")
def kappas():
    out = {}
    for (d, lv) in KAPPA_REF:
        out[d, lv] = [condition_number(assemble_system(ProblemConfig(d=d, level_t=lv, level_x=lv, alpha=a))).kappa
                      for a in ALPHAS]
    return out


def test_01_dof_reproduction(accept):
    t0 = time.perf_counter()
    got = {(d, lv): dofs(d, lv)[2] for (d, lv) in DOF_REF}
    rows = dims_table(2, [2, 3, 4, 5]) + dims_table(3, [2, 3])
    got_cli = {(r[0], r[1]): r[4] for r in rows}
    dt = time.perf_counter() - t0
    accept("1 DoF reproduction", got == DOF_REF and got_cli == DOF_REF and dt < 1.0,
           f"{sorted(got.items())} in {dt:.2f}s")


def test_02_condition_numbers(accept, kappas):
    worst = max(abs(k - r) / r for key in KAPPA_REF for k, r in zip(kappas[key], KAPPA_REF[key]))
    table = "; ".join(f"d={d} l={lv}: " + ", ".join(f"{k:.5f}" for k in kappas[d, lv]) for d, lv in kappas)
    accept("2 condition numbers within 2%", worst < KAPPA_RTOL, f"max rel dev {worst:.4f} ({table})")


def test_03_alpha_robustness(accept, kappas):
    over_alpha = max(max(v) / min(v) for v in kappas.values())
    over_level = max(max(kappas[2, 2][i], kappas[2, 3][i]) / min(kappas[2, 2][i], kappas[2, 3][i])
                     for i in range(len(ALPHAS)))
    accept("3 alpha robustness", over_alpha < 1.01 and over_level < 1.02,
           f"max/min over alpha {over_alpha:.5f} (<1.01), over level {over_level:.5f} (<1.02)")


@pytest.mark.slow
def test_04_iteration_counts(accept):
    t0 = time.perf_counter()
    rows = study_alpha(2, [2, 3, 4, 5], ALPHAS, kappa=False) + study_alpha(3, [2, 3], ALPHAS, kappa=False)
    got = {}
    for d, lv, a, _, _, _, it, conv in rows:
        got.setdefault((d, lv), []).append(it if conv else math.inf)
    dev = max(abs(g - r) for key in ITER_REF for g, r in zip(got[key], ITER_REF[key]))
    table = "; ".join(f"d={d} l={lv}: {got[d, lv]}" for d, lv in ITER_REF)
    accept("4 MINRES iteration counts within +-2", dev <= ITER_SLACK,
           f"max deviation {dev} ({table}) in {time.perf_counter() - t0:.0f}s")


@pytest.mark.slow
def test_05_rho_degradation(accept):
    rows = study_rho(2, 5, [1.0, 1e-2, 1e-5], [1.0], maxit=5000)
    it = [r[5] if r[6] else math.inf for r in rows]
    ok = it[0] < it[1] < it[2] and 15 <= it[1] <= 35 and it[2] > 100
    accept("5 rho degradation", ok, f"iterations at rho=1, 1e-2, 1e-5: {it}")


@pytest.mark.slow
@pytest.mark.skipif(not os.environ.get("WAVEPAT_OPTIONAL"), reason="set WAVEPAT_OPTIONAL=1 (long run)")
def test_05b_rho_1e7_report_only():
    rows = study_rho(2, 5, [1e-7], [1.0], maxit=20000)
    print(f"[INFO] rho=1e-7, l=5, alpha=1: {rows[0][5]} iterations (converged={rows[0][6]})")


def test_06_oracle_equivalence(accept):
    s = assemble_system(ProblemConfig(d=2, level_t=1, level_x=1))
    ref = brute_force_blocks(s.spaces)
    err = {k: float(abs(getattr(s, k).toarray() - v).max()) for k, v in ref.items()}
    accept("6 Kronecker vs brute-force assembly", max(err.values()) < 1e-10,
           ", ".join(f"{k} {v:.1e}" for k, v in err.items()))


def test_07_invariants(accept):
    s = assemble_system(ProblemConfig(d=2, level_t=2, level_x=2, alpha=1e-5, rho=1e-2))
    c = s.config
    fails = []
    A = s.A.toarray()
    if abs(s.A - (s.Q + c.alpha * s.R + c.rho * (s.G_W + s.V))).max() > 1e-12 * abs(A).max():
        fails.append("A composition")
    if np.linalg.eigvalsh(0.5 * (A + A.T)).min() <= 0:
        fails.append("A not SPD")
    if np.linalg.eigvalsh(s.P_Lambda.toarray()).min() <= 0:
        fails.append("P_Lambda not SPD")
    K = BlockSaddleOperator.from_system(s)
    f = factorize_preconditioner(s)
    P = sp.block_diag([s.P_Y, s.P_Lambda], format="csr")
    rng = np.random.default_rng(7)
    u, v = rng.standard_normal((2, s.n))
    sym = abs(u @ K.matvec(v) - v @ K.matvec(u)) / (np.linalg.norm(K.matvec(u)) * np.linalg.norm(v))
    if sym > 1e-12:
        fails.append(f"operator symmetry {sym:.1e}")
    pu, pv = f.apply(K.matvec(u)), f.apply(K.matvec(v))
    psa = abs(pu @ (P @ v) - u @ (P @ pv)) / abs(pu @ (P @ v))
    if psa > 1e-10:
        fails.append(f"P-self-adjointness {psa:.1e}")
    x_true = rng.standard_normal(s.n)
    x, rep = minres(K, f, K.matvec(x_true), tol=1e-12, maxit=500)
    e = x - x_true
    merr = math.sqrt(e @ (P @ e) / (x_true @ (P @ x_true)))
    if merr > 1e-6:
        fails.append(f"manufactured error {merr:.1e}")
    h = np.array(rep.residual_history)
    if np.any(np.diff(h) > 1e-12 * h[0]):
        fails.append("residual not monotone")
    accept("7 invariant suite", not fails,
           "; ".join(fails) or f"symmetry {sym:.1e}, P-self-adjoint {psa:.1e}, manufactured {merr:.1e}")


def test_08_forward_physics(accept):
    ph = make_phantom(smiley(), level=6)
    tr = forward_simulate(ph, n_steps=2**10, record_energy=True)
    drift = float(np.ptp(tr.energy) / tr.energy[0])
    disk = make_phantom(smiley()[:1], level=5)
    a, b, c = (forward_simulate(disk, n_steps=n).samples for n in (64, 128, 256))
    order = math.log2(np.linalg.norm(a - b[::2]) / np.linalg.norm(b[::2] - c[::4]))
    accept("8 leapfrog energy and convergence order", drift < 1e-3 and 1.7 <= order <= 2.3,
           f"energy drift {drift:.1e} (<1e-3), trace order {order:.3f} (in [1.7, 2.3])")


@pytest.fixture(scope="module")
def smiley_data():
    ph = make_phantom(smiley(), level=8, name="smiley")
    return ph, forward_simulate(ph, n_steps=2**10)


def _trend(level, smiley_data):
    ph, tr = smiley_data
    errs = []
    for rho in (1.0, 1e-2, 1e-5):
        res = reconstruct(ProblemConfig(d=2, level_t=level, level_x=level, alpha=1e-7, rho=rho), tr, ph)
        errs.append(res.metrics.rel_l2)
    base = reconstruct(ProblemConfig(d=2, level_t=level, level_x=level, alpha=1.0, rho=1.0), tr, ph)
    return errs, base.metrics.rel_l2


@pytest.mark.slow
def test_09_reconstruction_trend_level4(accept, smiley_data):
    t0 = time.perf_counter()
    errs, base = _trend(4, smiley_data)
    dt = time.perf_counter() - t0
    ok = errs[0] > errs[1] > errs[2] and base > RELL2_ALPHA1 and dt < 300
    accept("9 reconstruction trend (level 4)", ok,
           f"relL2 over rho=1, 1e-2, 1e-5: {[round(e, 4) for e in errs]}; alpha=1 run {base:.4f}; {dt:.0f}s")


def _available_memory():
    return os.sysconf("SC_PAGE_SIZE") * os.sysconf("SC_PHYS_PAGES")


@pytest.mark.slow
def test_09_reconstruction_trend_level6(accept, smiley_data):
    # Sparse direct factors of the level-6 blocks (~270k unknowns each) are far
    # beyond small machines.  Extrapolate from measured level-4 fill with the
    # optimistic nested-dissection growth of 16x per level (observed: > 20x)
    # and refuse to start a run that can only end in an out-of-memory kill.
    s4 = assemble_system(ProblemConfig(d=2, level_t=4, level_x=4))
    f4 = factorize_preconditioner(s4)
    need = (f4.P_Y.nnz + f4.P_Lambda.nnz) * 16**2 * 12   # 8-byte value + 4-byte index
    have = _available_memory()
    if need > have:
        accept("9 reconstruction trend (level 6)", False,
               f"not run: direct factors need >= {need / 2**30:.0f} GiB, machine has {have / 2**30:.1f} GiB")
    errs, base = _trend(6, smiley_data)
    accept("9 reconstruction trend (level 6)", errs[0] > errs[1] > errs[2] and base > RELL2_ALPHA1,
           f"relL2 over rho=1, 1e-2, 1e-5: {[round(e, 4) for e in errs]}; alpha=1 run {base:.4f}")
