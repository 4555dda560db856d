"""Brute-force space-time quadrature assembly for d = 2.

Evaluates every tensor basis function on a full (t, x, y) Gauss grid with
scipy's BSpline and forms the bilinear forms directly, without any Kronecker
factorization. Only usable for small levels.
"""
import numpy as np

from conftest import scipy_basis, span_gauss


def _breaks(space, extra=()):
    return np.unique(np.concatenate([space.breakpoints, np.asarray(extra, float)]))


def _tensor(tv, xv, yv):
    # tv [nt, n_t], xv [nx, n_1], yv [ny, n_1] -> [n_t*n_1*n_1, nt, nx, ny]
    f = np.einsum("pi,qa,rb->iabpqr", tv, xv, yv)
    return f.reshape(-1, *f.shape[3:])


def brute_force_blocks(spaces, omega_s=(0.25, 0.75), npts=4):
    tau = spaces.temporal_y
    s = spaces.spatial[0]
    lo, hi = omega_s
    t, wt = span_gauss(_breaks(tau), npts)
    x, wx = span_gauss(_breaks(s), npts)
    w3 = np.einsum("p,q,r->pqr", wt, wx, wx)

    T0, T2 = scipy_basis(tau, t), scipy_basis(tau, t, 2)
    S0, S2 = scipy_basis(s, x), scipy_basis(s, x, 2)
    W = _tensor(T2, S0, S0) - _tensor(T0, S2, S0) - _tensor(T0, S0, S2)
    G_W = np.einsum("ipqr,jpqr,pqr->ij", W, W, w3)

    # observation: four faces of the box [lo, hi]^2
    fb = _breaks(s, (lo, hi))
    y, wy = span_gauss(fb[(fb >= lo) & (fb <= hi)], npts)
    Sy = scipy_basis(s, y)
    Q = np.zeros_like(G_W)
    for c in (lo, hi):
        Sc = scipy_basis(s, [c])
        for F in (_tensor(T0, Sc, Sy), _tensor(T0, Sy, Sc)):
            F = F.reshape(F.shape[0], t.size, y.size)
            Q += np.einsum("ipq,jpq,p,q->ij", F, F, wt, wy)

    # initial terms
    z = scipy_basis(tau, [0.0])
    dz = scipy_basis(tau, [0.0], 1)
    w2 = np.outer(wx, wx)
    S1 = scipy_basis(s, x, 1)
    gx = _tensor(z, S1, S0)[:, 0]
    gy = _tensor(z, S0, S1)[:, 0]
    R = np.einsum("ipq,jpq,pq->ij", gx, gx, w2) + np.einsum("ipq,jpq,pq->ij", gy, gy, w2)
    v = _tensor(dz, S0, S0)[:, 0]
    V = np.einsum("ipq,jpq,pq->ij", v, v, w2)
    return {"G_W": G_W, "Q": Q, "R": R, "V": V}
