from __future__ import annotations

import numpy as np
import pytest
import scipy.special as sp
from scipy.integrate import quad

from qpscatter.geometry import build_discretization, fourier_interface
from qpscatter.kernels import (COUNTER, SelfOracle, diagonal_limits, difference_block, interface_matrix,
                               node_block, proxy_basis_matrix)
from qpscatter.geometry import ProxyCircle


def test_flat_shift_reflection_symmetry():
    disc = build_discretization(fourier_interface([0.0]), 4)
    tx = np.array([[0.2, 0.3], [-0.1, -0.25]])
    tn = np.tile([0.0, 1.0], (2, 1))
    mirror = tx * [-1, 1]
    Mp = interface_matrix(7.0, tx, tn, disc, 1)
    Mm = interface_matrix(7.0, mirror, tn, disc, -1)
    # mirror the source order too (nodes are symmetric about x = 0 on a uniform flat grid)
    perm = np.arange(disc.n_nodes)[::-1]
    cols = np.stack([2 * perm, 2 * perm + 1], axis=1).ravel()
    Mm = Mm[:, cols]
    # value rows and S/T columns are even; D/D* columns are odd in x only through normals (vertical) - even
    assert np.allclose(Mp, Mm, rtol=1e-12, atol=1e-14)


def test_single_layer_row_against_adaptive_quadrature():
    g = fourier_interface([0.1], "sin")
    disc = build_discretization(g, 12)
    w = 9.0
    target = np.array([[0.13, 0.45]])
    row = interface_matrix(w, target, np.array([[0.0, 1.0]]), disc, 0)[0, 0::2]
    approx = np.sum(row * disc.sqrt_w)

    def integrand(t, part):
        p, dp = g.evaluate(np.array([t]))
        r = np.linalg.norm(target[0] - p[0])
        v = 0.25j * sp.hankel1(0, w * r) * np.linalg.norm(dp[0])
        return v.real if part == 0 else v.imag

    ref = sum(f * quad(integrand, 0, 1, args=(k,), epsabs=1e-14, epsrel=1e-13, limit=200)[0]
              for k, f in ((0, 1.0), (1, 1j)))
    assert abs(approx - ref) < 1e-10


def test_double_layer_gauss_identity():
    n = 400
    th = 2 * np.pi * np.arange(n) / n
    sx = np.stack([np.cos(th), np.sin(th)], axis=1)
    sn = sx.copy()  # outward normals
    sw = np.full(n, 2 * np.pi / n)
    tgt = np.array([[0.2, -0.1]])
    M = node_block(1e-3, tgt, np.zeros((1, 2)), sx, sn)
    val = np.sum(M[0, 1::2] * sw)
    assert abs(val + 1.0) < 1e-4


def test_equal_wave_numbers_give_jump_identity_only():
    disc = build_discretization(fourier_interface([0.1], "sin"), 4)
    A = SelfOracle(disc, 8.0, 8.0).full(0)
    n = disc.n_nodes
    ref = np.kron(np.eye(n), np.array([[0.0, -1.0], [1.0, 0.0]]))
    assert np.allclose(A, ref, atol=1e-15)
    assert not np.any(difference_block(8.0, 8.0, disc.nodes, disc.normals, disc.nodes, disc.normals))


def test_diagonal_limit_single_layer_difference():
    w1, w2 = 12.0, 7.0
    _, KS1 = diagonal_limits(w1)
    _, KS2 = diagonal_limits(w2)
    lim = KS1[0] - KS2[0]
    assert abs(lim.real + np.log(w1 / w2) / (2 * np.pi)) < 1e-15
    # Richardson extrapolation of off-diagonal values toward r = 0
    x = np.zeros((1, 2))
    n = np.array([[0.0, 1.0]])
    vals = []
    for r in (2e-3, 1e-3, 5e-4):
        vals.append(difference_block(w1, w2, x, n, np.array([[r, 0.0]]), n)[0, 0])
    rich = [(4 * vals[k + 1] - vals[k]) / 3 for k in range(2)]  # removes the r^2 term
    assert abs(vals[-1] - lim) < 1e-5
    assert abs(rich[-1] - lim) < 1e-6
    assert abs(rich[-1] - lim) < abs(rich[0] - lim)
    # independent oracle: scipy Hankel functions at a small separation
    r = 1e-4
    ref = 0.25j * (sp.hankel1(0, w1 * r) - sp.hankel1(0, w2 * r))
    assert abs(ref - lim) < 1e-6


def _diff_kernel_scipy(w1, w2, x, nx, y, ny):
    d = x - y
    r = np.linalg.norm(d)
    out = []
    for w in (w1, w2):
        h0, h1 = sp.hankel1(0, w * r), sp.hankel1(1, w * r) + 2j / (np.pi * w * r)
        a = 0.25j * w * h1 / r
        rx, ry, nn = d @ nx, d @ ny, nx @ ny
        out.append(np.array([0.25j * h0, a * ry, -a * rx,
                             0.25j * (w**2 * h0 - 2 * w * h1 / r) * rx * ry / r**2 + a * nn]))
    return out[0] - out[1]


@pytest.mark.filterwarnings("ignore::scipy.integrate.IntegrationWarning")
def test_self_block_applied_to_smooth_density_against_adaptive_quadrature():
    """Singular corrections: compare rows of A^s with adaptive integration of the difference kernels."""
    g = fourier_interface([0.1], "sin")
    disc = build_discretization(g, 10)
    w1, w2 = 10.0, 14.0
    o = SelfOracle(disc, w1, w2)
    dens_s = lambda t: np.cos(2 * np.pi * t) + 0.3
    dens_t = lambda t: np.sin(4 * np.pi * t)
    x = np.zeros(o.n, complex)
    x[0::2] = dens_s(disc.t) * disc.sqrt_w
    x[1::2] = dens_t(disc.t) * disc.sqrt_w
    y = o.full(0) @ x
    for node in (3, 77, 159):
        tt = disc.t[node]
        xt, nt = disc.nodes[node], disc.normals[node]

        def integrand(t, comp, part):
            p, dp = g.evaluate(np.array([t]))
            sp_ = np.linalg.norm(dp[0])
            nrm = np.array([dp[0, 1], -dp[0, 0]]) / sp_
            K = _diff_kernel_scipy(w1, w2, xt, nt, p[0], nrm)
            v = (K[2 * comp] * dens_s(t) + K[2 * comp + 1] * dens_t(t)) * sp_
            return v.real if part == 0 else v.imag

        for comp in (0, 1):
            ref = 0.0
            for part, f in ((0, 1.0), (1, 1j)):
                ref += f * sum(quad(integrand, a, b, args=(comp, part), epsabs=1e-12, epsrel=1e-11, limit=400)[0]
                               for a, b in ((0, tt), (tt, 1)))
            jump = -dens_t(tt) if comp == 0 else dens_s(tt)
            got = y[2 * node + comp] / disc.sqrt_w[node]
            assert abs(got - (ref + jump)) < 1e-9 * max(1.0, abs(ref))


def test_proxy_basis_shape_and_definition():
    circ = ProxyCircle.make((0.0, 0.0), 1.75, 12)
    tx = np.array([[0.1, 0.2], [0.3, -0.4], [-0.2, 0.0]])
    tn = np.tile([0.0, 1.0], (3, 1))
    M = proxy_basis_matrix(circ, 5.0, tx, tn)
    assert M.shape == (6, 12)
    v = proxy_basis_matrix(circ, 5.0, tx, with_normal_derivative=False)
    assert v.shape == (3, 12)
    nb = node_block(5.0, tx, tn, circ.points, circ.normals)
    assert np.allclose(M[0::2], nb[0::2, 1::2] + 1j * 5.0 * nb[0::2, 0::2])
    assert np.allclose(M[1::2], nb[1::2, 1::2] + 1j * 5.0 * nb[1::2, 0::2])


def test_proxy_basis_solves_helmholtz():
    circ = ProxyCircle.make((0.0, 0.0), 1.75, 8)
    w, h = 6.0, 1e-4
    x = np.array([0.2, -0.3])
    pts = np.array([x, x + [h, 0], x - [h, 0], x + [0, h], x - [0, h]])
    v = proxy_basis_matrix(circ, w, pts, with_normal_derivative=False)
    lap = (v[1] + v[2] + v[3] + v[4] - 4 * v[0]) / h**2
    assert np.max(np.abs(lap + w**2 * v[0])) <= 1e-6 * w**2 * np.max(np.abs(v[0])) * 10


def test_counter_counts_pairs():
    c0 = COUNTER.count
    node_block(3.0, np.zeros((4, 2)) + 1, np.zeros((4, 2)), np.zeros((5, 2)), np.zeros((5, 2)))
    assert COUNTER.count - c0 == 20
