import numpy as np
import pytest
import scipy.sparse as sp

from conftest import scipy_basis, span_gauss
from oracle import brute_force_blocks
from wavepat.assembly import (ProblemConfig, assemble_system, build_spaces, dofs, face_quadrature,
                              load_from_samples)


def greville(space):
    p, k = space.degree, space.knots
    g = np.array([k[i + 1:i + p + 1].mean() for i in range(space.n_full)])
    return g[space.active]


@pytest.mark.parametrize("d,level,expected", [
    (2, 1, 28), (2, 2, 176), (2, 3, 1216), (3, 1, 56), (3, 2, 704),
])
def test_dofs_small(d, level, expected):
    # n_y = (2^l + 2) * (2^l)^d, n_lambda = (2^l + 1) * (2^l)^d
    n1 = 2**level
    assert dofs(d, level) == ((n1 + 2) * n1**d, (n1 + 1) * n1**d, expected)


@pytest.mark.parametrize("name", ["G_W", "Q", "R", "V"])
def test_blocks_match_brute_force(system_l1, name):
    ref = brute_force_blocks(system_l1.spaces)[name]
    np.testing.assert_allclose(getattr(system_l1, name).toarray(), ref, atol=1e-10, rtol=0)


def test_level2_observation_matches_brute_force(system_l2):
    ref = brute_force_blocks(system_l2.spaces)["Q"]
    np.testing.assert_allclose(system_l2.Q.toarray(), ref, atol=1e-14)


def test_augmented_block_composition(system_l1):
    s, c = system_l1, system_l1.config
    A = s.Q + c.alpha * s.R + c.rho * (s.G_W + s.V)
    assert abs(s.A - A).max() < 1e-13


def test_rho_linearity():
    a = assemble_system(ProblemConfig(d=2, level_t=2, level_x=2, rho=1.0))
    b = assemble_system(ProblemConfig(d=2, level_t=2, level_x=2, rho=1e-3))
    D = (a.A - b.A) - (1 - 1e-3) * (a.G_W + a.V)
    assert abs(D).max() < 1e-10 * abs(a.A).max()
    assert abs(a.P_Lambda - b.P_Lambda).max() == 0.0


def test_constraint_block_restricts_to_preconditioner(system_l2):
    s = system_l2
    B = s.B.toarray()
    assert B.shape == (s.n_lambda, s.n_y)
    np.testing.assert_array_equal(B[:, s.y0_offset:], s.P_Lambda.toarray())


@pytest.mark.parametrize("alpha", [1.0, 1e-7])
def test_blocks_are_spd(alpha):
    s = assemble_system(ProblemConfig(d=2, level_t=2, level_x=2, alpha=alpha, rho=1e-5))
    for M in (s.A, s.P_Lambda):
        D = M.toarray()
        np.testing.assert_allclose(D, D.T, atol=1e-12 * abs(D).max())
        assert np.linalg.eigvalsh(D).min() > 0
    for M in (s.Q, s.R, s.V, s.G_W):
        assert np.linalg.eigvalsh(M.toarray()).min() > -1e-10 * abs(M).max()


def test_wave_gram_on_time_constant_field(system_l2):
    # y(t, x) = g(x) for all t: W y = -Laplace g, so <G_W y, y> = T * ||Laplace g||^2
    s = system_l2
    sx = s.spaces.spatial[0]
    rng = np.random.default_rng(3)
    g = rng.standard_normal((sx.dim, sx.dim))
    y = np.tile(g.ravel(), s.spaces.temporal_y.dim)
    x, w = span_gauss(sx.breakpoints, 4)
    S0, S2 = scipy_basis(sx, x), scipy_basis(sx, x, 2)
    lap = S2 @ g @ S0.T + S0 @ g @ S2.T
    expect = s.config.T * np.einsum("pq,p,q->", lap**2, w, w)
    assert y @ (s.G_W @ y) == pytest.approx(expect, rel=1e-12)


def test_observation_ignores_interior_functions():
    s = assemble_system(ProblemConfig(d=2, level_t=1, level_x=4))
    sx = s.spaces.spatial[0]
    k = sx.knots
    inside = [c for c, i in enumerate(sx.active) if k[i] > 0.25 and k[i + sx.degree + 1] < 0.75]
    assert inside
    n1 = sx.dim
    Qd = s.Q.toarray()
    for t in range(s.spaces.temporal_y.dim):
        for a in inside:
            for b in inside:
                assert not Qd[t * n1 * n1 + a * n1 + b].any()


def test_d3_assembly():
    s = assemble_system(ProblemConfig(d=3, level_t=1, level_x=1))
    assert s.n == 56
    D = s.A.toarray()
    np.testing.assert_allclose(D, D.T, atol=1e-12 * abs(D).max())
    assert np.linalg.eigvalsh(D).min() > 0


@pytest.mark.parametrize("kw", [
    {"rho": 0.0}, {"rho": -1.0}, {"d": 4}, {"degree": 1}, {"omega_s": (0.0, 0.5)}, {"omega_s": (0.6, 0.4)},
])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        ProblemConfig(**{"d": 2, "level_t": 2, "level_x": 2, **kw})


def test_config_replace():
    c = ProblemConfig(d=2, level_t=2, level_x=2)
    assert c.replace(alpha=1e-5).alpha == 1e-5 and c.alpha == 1.0


def _linear_in_time_trace(spaces, omega_s, a, b, g, n_times):
    """Samples of y(t, x) = (a + b t) g(x) on the four faces, and its coefficient vector."""
    tau, sx = spaces.temporal_y, spaces.spatial[0]
    lo, hi = omega_s
    pts, wts = face_quadrature(omega_s, sx.level)
    times = np.linspace(0.0, tau.interval[1], n_times)
    Bp = scipy_basis(sx, pts)
    faces = [scipy_basis(sx, [lo]) @ g @ Bp.T, scipy_basis(sx, [hi]) @ g @ Bp.T,
             Bp @ g @ scipy_basis(sx, [lo]).T, Bp @ g @ scipy_basis(sx, [hi]).T]
    prof = np.stack([f.ravel() for f in faces])
    samples = (a + b * times)[:, None, None] * prof[None]
    coeff = np.kron(a + b * greville(tau), g.ravel())
    return times, pts, wts, samples, coeff


def test_load_equals_observation_of_trace(system_l2):
    s = system_l2
    sx = s.spaces.spatial[0]
    g = np.random.default_rng(0).standard_normal((sx.dim, sx.dim))
    times, pts, wts, samples, y = _linear_in_time_trace(s.spaces, s.config.omega_s, 0.7, -2.0, g, 17)
    l = load_from_samples(s.spaces, s.config.omega_s, times, pts, wts, samples)
    np.testing.assert_allclose(l, s.Q @ y, atol=1e-13 * abs(l).max())


def test_load_rejects_bad_input(system_l2):
    s = system_l2
    pts, wts = face_quadrature(s.config.omega_s, 2)
    times = np.linspace(0, 0.25, 5)
    with pytest.raises(ValueError):
        load_from_samples(s.spaces, s.config.omega_s, times, pts, wts, np.zeros((5, 3, pts.size)))
    with pytest.raises(ValueError):
        load_from_samples(s.spaces, s.config.omega_s, times[:-1], pts, wts, np.zeros((4, 4, pts.size)))
    with pytest.raises(ValueError):
        load_from_samples(s.spaces, s.config.omega_s, times, pts + 0.5, wts, np.zeros((5, 4, pts.size)))
    d3 = build_spaces(ProblemConfig(d=3, level_t=1, level_x=1))
    with pytest.raises(ValueError):
        load_from_samples(d3, (0.25, 0.75), times, pts, wts, np.zeros((5, 4, pts.size)))


def test_with_load_and_rhs(system_l2):
    s = system_l2.with_load(np.ones(system_l2.n_y))
    r = s.rhs()
    assert r.shape == (s.n,) and r[:s.n_y].sum() == s.n_y and not r[s.n_y:].any()
    with pytest.raises(ValueError):
        system_l2.with_load(np.ones(3))
    assert sp.issparse(s.A)
