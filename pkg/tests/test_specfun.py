from __future__ import annotations

import numpy as np
import pytest
import scipy.special as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from qpscatter.specfun import bessel01, bessel_j2, greens, hankel01, kernel_values


def test_hankel_at_one_frozen():
    h0, h1 = hankel01(1.0)
    assert abs(h0 - (0.7651976866 + 0.0882569642j)) < 1e-10
    assert abs(h1 - (0.4400505857 - 0.7812128213j)) < 1e-10


@settings(max_examples=200, deadline=None)
@given(st.floats(min_value=1e-6, max_value=400.0))
def test_hankel_matches_scipy(x):
    h0, h1 = hankel01(x)
    for ours, ref in ((h0, sp.hankel1(0, x)), (h1, sp.hankel1(1, x))):
        assert abs(ours - ref) <= 2e-14 * max(1.0, abs(ref)) + 1e-15 * abs(ref)


def test_regime_boundaries_continuous():
    for cut in (2.0, 25.0):
        x = np.array([cut * (1 - 1e-12), cut, cut * (1 + 1e-12)])
        j0, j1, y0, y1r = bessel01(x)
        for v in (j0, j1, y0, y1r):
            assert np.ptp(v) < 1e-11


def test_regularised_y1():
    x = np.logspace(-3, 1, 50)
    _, _, _, y1r = bessel01(x)
    ref = sp.y1(x) + 2 / (np.pi * x)
    assert np.max(np.abs(y1r - ref)) < 1e-12 * np.max(np.abs(sp.y1(x)) * x) + 1e-12


def test_small_argument_behaviour():
    x = np.array([1e-8, 1e-6, 1e-4])
    h0, _ = hankel01(x)
    assert np.allclose(h0.real, 1.0, atol=1e-7)
    ratio = h0.imag / ((2 / np.pi) * np.log(x))
    assert np.all(np.abs(ratio - 1) < 0.1)
    assert np.all(np.diff(h0.imag) > 0)


def test_domain_errors():
    with pytest.raises(ValueError):
        hankel01(0.0)
    with pytest.raises(ValueError):
        hankel01(-1.0)


def test_j2_against_scipy():
    x = np.concatenate([np.logspace(-4, 0, 40), np.linspace(1, 60, 80)])
    assert np.max(np.abs(bessel_j2(x) - sp.jv(2, x))) < 1e-14


def test_greens_frozen_and_symmetric():
    g = greens(1.0, np.array([0.0, 0.0]), np.array([1.0, 0.0]))
    assert abs(g - (-0.0220642411 + 0.1912994217j)) < 1e-10
    x, y = np.array([0.3, -0.2]), np.array([1.1, 0.5])
    for w in (0.5, 7.0, 40.0):
        assert greens(w, x, y) == greens(w, y, x)


def test_greens_helmholtz_residual():
    w, h = 7.0, 1e-4
    y = np.array([0.0, 0.0])
    x = np.array([0.4, 0.3])
    e = np.eye(2) * h
    lap = (sum(greens(w, x + s * e[k], y) for k in range(2) for s in (1, -1)) - 4 * greens(w, x, y)) / h**2
    assert abs(lap + w**2 * greens(w, x, y)) <= 1e-6 * w**2 * abs(greens(w, x, y)) * 10


def test_double_layer_orthogonal_normal_is_zero():
    x, y = np.array([0.0, 0.5]), np.array([0.0, 0.0])
    assert kernel_values("D", 3.0, x, y, nu_y=np.array([1.0, 0.0])) == 0


def test_adjoint_double_layer_symmetry():
    x, y = np.array([0.2, 0.7]), np.array([-0.4, 0.1])
    nu = np.array([0.6, 0.8])
    a = kernel_values("Dstar", 4.0, x, y, nu_x=nu)
    b = kernel_values("D", 4.0, y, x, nu_y=nu)
    assert abs(a - b) < 1e-15 * abs(a)


def test_hypersingular_finite_difference():
    w, h = 10.0, 1e-5
    y = np.array([0.0, 0.0])
    x = np.array([0.3, 0.4])
    nu = np.array([0.0, 1.0])
    t = kernel_values("T", w, x, y, nu_x=nu, nu_y=nu)
    fd = (kernel_values("D", w, x + h * nu, y, nu_y=nu) - kernel_values("D", w, x - h * nu, y, nu_y=nu)) / (2 * h)
    assert abs(t - fd) <= 1e-6 * abs(t)


def test_kernel_values_against_scipy_formulae():
    rng = np.random.default_rng(3)
    x, y = rng.normal(size=(20, 2)), rng.normal(size=(20, 2))
    nx = rng.normal(size=(20, 2))
    ny = rng.normal(size=(20, 2))
    nx /= np.linalg.norm(nx, axis=1)[:, None]
    ny /= np.linalg.norm(ny, axis=1)[:, None]
    w = 6.0
    d = x - y
    r = np.linalg.norm(d, axis=1)
    h0, h1 = sp.hankel1(0, w * r), sp.hankel1(1, w * r)
    S = 0.25j * h0
    D = 0.25j * w * h1 * np.sum(d * ny, 1) / r
    assert np.allclose(kernel_values("S", w, x, y), S, rtol=1e-13, atol=0)
    assert np.allclose(kernel_values("D", w, x, y, nu_y=ny), D, rtol=1e-12, atol=1e-15)
