"""Field evaluation, Rayleigh--Bloch coefficients, flux error and efficiencies."""
from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass

import numpy as np

from .assembly import SHIFTS, rb_wavenumbers
from .kernels import interface_matrix, proxy_basis_matrix


@dataclass
class RayleighBlochCoefficients:
    orders: np.ndarray
    kappa: np.ndarray
    a_up: np.ndarray
    a_down: np.ndarray
    k_up: np.ndarray
    k_down: np.ndarray

    @classmethod
    def from_angle(cls, orders, theta: float, omega1: float, omega_bot: float, d: float, a_up, a_down):
        orders = np.asarray(orders)
        kappa = omega1 * np.cos(theta) + 2 * np.pi * orders / d
        return cls(orders, kappa, np.asarray(a_up, complex), np.asarray(a_down, complex),
                   rb_wavenumbers(kappa, omega1), rb_wavenumbers(kappa, omega_bot))

    @classmethod
    def from_result(cls, result, stack) -> "RayleighBlochCoefficients":
        return cls.from_angle(result.orders, result.theta, stack.wavenumbers[0], stack.wavenumbers[-1],
                              stack.period, result.aU, result.aD)

    @property
    def propagating_up(self) -> np.ndarray:
        return self.k_up.imag == 0

    @property
    def propagating_down(self) -> np.ndarray:
        return self.k_down.imag == 0


def _flux_terms(k, a):
    kr = np.where(np.asarray(k).imag == 0, np.asarray(k).real, 0.0)
    return kr * np.abs(a) ** 2


def flux_error(aU, aD=None, kU=None, kD=None, omega1: float | None = None, theta: float | None = None) -> float:
    """Relative energy imbalance of the propagating orders.

    Accepts either ``flux_error(coeffs, theta, omega1)`` with
    :class:`RayleighBlochCoefficients` or the raw arrays
    ``flux_error(aU, aD, kU, kD, omega1, theta)``.
    """
    if isinstance(aU, RayleighBlochCoefficients):
        c = aU
        theta, omega1 = aD, kU
        aU, aD, kU, kD = c.a_up, c.a_down, c.k_up, c.k_down
    out = (_flux_terms(kU, aU).sum() + _flux_terms(kD, aD).sum()) / (omega1 * abs(np.sin(theta)))
    return float(abs(out - 1.0))


@dataclass
class BraggTable:
    theta: float
    orders: np.ndarray
    R: np.ndarray      # reflectances (NaN for evanescent orders)
    T: np.ndarray      # transmittances (NaN for evanescent orders)

    @property
    def total(self) -> float:
        return float(np.nansum(self.R) + np.nansum(self.T))


def bragg_efficiencies(coeffs: RayleighBlochCoefficients, theta: float, omega1: float) -> BraggTable:
    norm = omega1 * abs(np.sin(theta))
    R = np.where(coeffs.propagating_up, _flux_terms(coeffs.k_up, coeffs.a_up) / norm, np.nan)
    T = np.where(coeffs.propagating_down, _flux_terms(coeffs.k_down, coeffs.a_down) / norm, np.nan)
    return BraggTable(theta, coeffs.orders, R, T)


def write_bragg_csv(tables, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["theta", "order", "R", "T"])
        for t in tables:
            for n, r, tt in zip(t.orders, t.R, t.T):
                if np.isfinite(r) or np.isfinite(tt):
                    w.writerow([repr(t.theta), int(n), "" if np.isnan(r) else repr(float(r)),
                                "" if np.isnan(tt) else repr(float(tt))])


# ---------------------------------------------------------------------------
# field evaluation
# ---------------------------------------------------------------------------


@dataclass
class FieldGrid:
    points: np.ndarray
    values: np.ndarray
    region: np.ndarray      # layer index; -1 above y_U, n_layers below y_D
    near: np.ndarray        # True where plain quadrature is inaccurate
    total: bool

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x", "y", "region", "re", "im"])
            for (x, y), r, v in zip(self.points, self.region, self.values):
                w.writerow([repr(float(x)), repr(float(y)), int(r), repr(float(v.real)), repr(float(v.imag))])

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump({"total": self.total, "x": self.points[:, 0].tolist(), "y": self.points[:, 1].tolist(),
                       "region": self.region.tolist(), "re": self.values.real.tolist(),
                       "im": self.values.imag.tolist()}, fh)


def _below(geom, pts: np.ndarray, n: int = 2049) -> np.ndarray:
    """True where ``pts`` lies below the (periodically extended) interface."""
    d = geom.period
    base = geom.sample(n)
    poly = np.vstack([base[:-1] + [k * d, 0.0] for k in (-1, 0, 1)] + [base[-1:] + [d, 0.0]])
    p, q = poly[:-1], poly[1:]
    x, y = pts[:, 0][:, None], pts[:, 1][:, None]
    lo, hi = np.minimum(p[:, 0], q[:, 0]), np.maximum(p[:, 0], q[:, 0])
    span = (x >= lo) & (x < hi)
    dx = np.where(q[:, 0] != p[:, 0], q[:, 0] - p[:, 0], 1.0)
    yc = p[:, 1] + (x - p[:, 0]) * (q[:, 1] - p[:, 1]) / dx
    crossings = np.sum(span & (yc > y), axis=1)
    return crossings % 2 == 1


def classify(stack, pts: np.ndarray) -> np.ndarray:
    """Layer index (0 = top) of points in the unit strip."""
    return np.sum([_below(g, pts) for g in stack.interfaces], axis=0).astype(int)


def representation(solver, result, pts: np.ndarray, layer: int, with_gradient: bool = False):
    """Raw unit-cell representation of layer ``layer`` at ``pts`` (no period mapping).

    Returns values, or ``(values, d/dy)`` when ``with_gradient``.
    """
    st = solver.stack
    pI, pII = solver.pI, solver.pII
    om = st.wavenumbers[layer]
    pts = np.asarray(pts, float).reshape(-1, 2)
    nrm = np.tile([0.0, 1.0], (len(pts), 1))
    offs = pII.unknowns.sigma_offsets
    alpha = result.alpha
    acc = np.zeros(2 * len(pts), dtype=complex)
    for i in (layer - 1, layer):
        if not 0 <= i < st.n_interfaces:
            continue
        dens = result.sigma_hat[int(offs[i]):int(offs[i + 1])]
        for s in SHIFTS:
            acc += (alpha ** s) * (interface_matrix(om, pts, nrm, pI.discs[i], s) @ dens)
    acc += proxy_basis_matrix(pII.layout.proxies[layer], om, pts, nrm) @ result.c[layer]
    if with_gradient:
        return acc[0::2], acc[1::2]
    return acc[0::2]


def rayleigh_bloch_field(coeffs: RayleighBlochCoefficients, pts: np.ndarray, side: str, y0: float,
                         with_gradient: bool = False):
    """Evaluate the upward (``side="U"``) or downward expansion anchored at ``y0``."""
    pts = np.asarray(pts, float).reshape(-1, 2)
    if side == "U":
        a, k, sgn = coeffs.a_up, coeffs.k_up, 1.0
    else:
        a, k, sgn = coeffs.a_down, coeffs.k_down, -1.0
    ph = np.exp(1j * np.outer(pts[:, 0], coeffs.kappa) + 1j * sgn * np.outer(pts[:, 1] - y0, k))
    val = ph @ a
    if with_gradient:
        return val, ph @ (1j * sgn * k * a)
    return val


def evaluate_field(result, solver, points, total: bool = False, near_panels: float = 2.0) -> FieldGrid:
    """Evaluate the computed field at arbitrary points.

    Points are mapped into the unit strip by whole periods (with the Bloch
    factor); above ``y_U`` and below ``y_D`` the Rayleigh--Bloch expansions are
    used, elsewhere the layer's integral representation.  Points closer than
    ``1e-8 d`` to an interface give NaN; points within ``near_panels`` panel
    lengths are flagged in ``near`` (plain quadrature only).
    """
    st = solver.stack
    lay = solver.pII.layout
    d = st.period
    pts = np.asarray(points, float).reshape(-1, 2)
    shift = np.floor((pts[:, 0] + 0.5 * d) / d).astype(int)
    loc = pts - np.stack([shift * d, np.zeros(len(pts))], axis=1)
    phase = result.alpha ** shift.astype(float)
    n_layers = st.n_interfaces + 1
    region = np.where(loc[:, 1] > lay.y_U, -1, np.where(loc[:, 1] < lay.y_D, n_layers, 0))
    inside = region == 0
    region[inside] = classify(st, loc[inside])
    vals = np.full(len(pts), np.nan + 0j)
    near = np.zeros(len(pts), bool)
    bad = np.zeros(len(pts), bool)
    for i, disc in enumerate(solver.pI.discs):
        h = near_panels * np.max(np.diff(disc.panels, axis=1)) * np.max(disc.speeds)
        allnodes = np.vstack([disc.nodes + [s * d, 0.0] for s in SHIFTS])
        for chunk in np.array_split(np.arange(len(pts)), max(1, len(pts) // 512)):
            if chunk.size == 0:
                continue
            dist = np.min(np.linalg.norm(loc[chunk, None, :] - allnodes[None], axis=2), axis=1)
            near[chunk] |= dist < h
            bad[chunk] |= dist < 1e-8 * d
    coeffs = RayleighBlochCoefficients.from_result(result, st)
    up = region == -1
    if up.any():
        vals[up] = rayleigh_bloch_field(coeffs, loc[up], "U", lay.y_U)
    dn = region == n_layers
    if dn.any():
        vals[dn] = rayleigh_bloch_field(coeffs, loc[dn], "D", lay.y_D)
    for l in range(n_layers):
        m = (region == l) & ~bad
        if m.any():
            vals[m] = representation(solver, result, loc[m], l)
    vals = vals * phase
    if total:
        from .geometry import IncidentWave

        inc = IncidentWave(result.theta, st.wavenumbers[0], d)
        top = (region <= 0)
        vals[top] = vals[top] + inc.value(pts[top])
    if bad.any():
        warnings.warn(f"{int(bad.sum())} points lie on an interface; returning NaN there",
                      RuntimeWarning, stacklevel=2)
        vals[bad] = np.nan
    return FieldGrid(pts, vals, region, near, total)
