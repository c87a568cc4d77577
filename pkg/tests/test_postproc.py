from __future__ import annotations

import csv
import json

import numpy as np
import pytest

from qpscatter.geometry import IncidentWave
from qpscatter.postproc import (RayleighBlochCoefficients, bragg_efficiencies, classify, evaluate_field,
                                flux_error, rayleigh_bloch_field, representation, write_bragg_csv)
from qpscatter.solver import QPSolver, SolverParams

from conftest import acceptance_solve, small_stack


@pytest.fixture(scope="module")
def uniform():
    s = QPSolver(small_stack((7.0, 7.0, 7.0)), SolverParams(panels=10))
    s.precompute()
    return s, s.solve(-1.1)


@pytest.fixture(scope="module")
def layered(small_solver):
    return small_solver, small_solver.solve(-np.pi / 3)


def _random_points(rng, n, lay):
    x = rng.uniform(-0.5, 0.5, n)
    y = rng.uniform(lay.y_D - 0.3, lay.y_U + 0.3, n)
    return np.column_stack([x, y])


def test_uniform_total_field_is_incident(uniform, rng):
    s, r = uniform
    pts = _random_points(rng, 200, s.pII.layout)
    pts[:10, 0] += rng.integers(-3, 4, 10)  # some points in other periods
    g = evaluate_field(r, s, pts, total=True)
    inc = IncidentWave(r.theta, 7.0, 1.0).value(pts)
    ok = ~g.near
    assert ok.sum() > 50
    assert np.max(np.abs(g.values[ok] - inc[ok])) <= 1e-6


def test_quasi_periodicity_of_evaluated_field(layered, rng):
    s, r = layered
    lay = s.pII.layout
    pts = _random_points(rng, 100, lay)
    u0 = evaluate_field(r, s, pts)
    u1 = evaluate_field(r, s, pts + [1.0, 0.0])
    ok = ~u0.near
    scale = np.nanmax(np.abs(u0.values))
    assert np.max(np.abs(u1.values[ok] - r.alpha * u0.values[ok])) <= 1e-6 * scale


def test_wall_quasi_periodicity_of_representation(layered, rng):
    """The three-copy representation itself is quasi-periodic across the unit-cell walls."""
    s, r = layered
    lay = s.pII.layout
    st = s.stack
    ends = [g.evaluate(np.array([0.0]))[0][0, 1] for g in st.interfaces]
    levels = [lay.y_U] + ends + [lay.y_D]
    errs, scale = [], 0.0
    for l in range(3):
        lo, hi = levels[l + 1], levels[l]
        y = rng.uniform(lo + 0.05, hi - 0.05, 30)
        L = np.column_stack([np.full_like(y, -0.5), y])
        uL, dL = representation(s, r, L, l, with_gradient=True)
        uR, dR = representation(s, r, L + [1.0, 0.0], l, with_gradient=True)
        errs.append(np.max(np.abs(uR - r.alpha * uL)))
        errs.append(np.max(np.abs(dR - r.alpha * dL)))
        scale = max(scale, np.max(np.abs(uL)))
    assert max(errs) <= 1e-6 * scale


def test_representation_matches_rayleigh_bloch(layered):
    s, r = layered
    lay = s.pII.layout
    co = RayleighBlochCoefficients.from_result(r, s.stack)
    x = np.linspace(-0.5, 0.5, 25)
    for side, y0, l in (("U", lay.y_U + 1e-3, 0), ("D", lay.y_D - 1e-3, 2)):
        p = np.column_stack([x, np.full_like(x, y0)])
        u = representation(s, r, p, l)
        v = rayleigh_bloch_field(co, p, side, lay.y_U if side == "U" else lay.y_D)
        assert np.max(np.abs(u - v)) <= 1e-6 * np.max(np.abs(u))


def test_flux_error_uniform_and_discriminative(uniform, rng):
    s, r = uniform
    assert flux_error(r.aU, r.aD, *_k(r, s), 7.0, r.theta) <= 1e-8
    co = RayleighBlochCoefficients.from_result(r, s.stack)
    assert abs(flux_error(co, r.theta, 7.0) - r.flux_error) < 1e-15
    bogus = rng.normal(size=r.aU.shape) + 1j * rng.normal(size=r.aU.shape)
    assert flux_error(bogus, bogus, *_k(r, s), 7.0, r.theta) > 0.1


def _k(r, s):
    co = RayleighBlochCoefficients.from_result(r, s.stack)
    return co.k_up, co.k_down


def test_flux_error_acceptance_stack():
    _, r = acceptance_solve(160)
    assert r.flux_error <= 1e-5


def test_bragg_uniform(uniform):
    s, r = uniform
    t = bragg_efficiencies(RayleighBlochCoefficients.from_result(r, s.stack), r.theta, 7.0)
    zero = t.orders == 0
    assert abs(t.T[zero][0] - 1) <= 1e-8
    others = np.concatenate([t.R[np.isfinite(t.R)], t.T[~zero & np.isfinite(t.T)]])
    assert np.all(others <= 1e-8)


def test_bragg_sum_rule(layered, tmp_path):
    s, r = layered
    w = s.stack.wavenumbers[0]
    t = bragg_efficiencies(RayleighBlochCoefficients.from_result(r, s.stack), r.theta, w)
    assert np.all(t.R[np.isfinite(t.R)] >= 0) and np.all(t.T[np.isfinite(t.T)] >= 0)
    assert abs(t.total - 1) <= r.flux_error + 1e-14
    write_bragg_csv([t], tmp_path / "b.csv")
    rows = list(csv.DictReader(open(tmp_path / "b.csv")))
    assert rows and set(rows[0]) == {"theta", "order", "R", "T"}


def test_classification_and_walls(layered):
    s, r = layered
    lay = s.pII.layout
    pts = np.array([[0.0, lay.y_U + 0.1], [0.0, 0.15], [0.1, -0.3], [0.1, -0.75], [0.0, lay.y_D - 0.1]])
    g = evaluate_field(r, s, pts)
    assert list(g.region) == [-1, 0, 1, 2, 3]
    assert list(classify(s.stack, pts[1:4])) == [0, 1, 2]


def test_points_on_interface_give_nan(layered, tmp_path):
    s, r = layered
    p = s.pI.discs[0].nodes[5:6]
    with pytest.warns(RuntimeWarning):
        g = evaluate_field(r, s, p)
    assert np.isnan(g.values[0])
    g = evaluate_field(r, s, np.array([[0.1, 0.4], [0.2, -0.3]]), total=True)
    g.to_csv(tmp_path / "f.csv")
    g.to_json(tmp_path / "f.json")
    data = json.load(open(tmp_path / "f.json"))
    assert data["total"] is True and len(data["re"]) == 2
