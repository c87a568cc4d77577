"""Interface curves, Nystrom panel discretizations and the unit-cell layout.

Conventions used throughout the package:

* the unit cell occupies ``x in [-d/2, d/2]``; interfaces are traversed left
  to right as the parameter ``t`` runs over ``[0, 1]``;
* interfaces and layers are numbered top-down, layer ``l`` (1-based) lies
  between interface ``l-1`` above and interface ``l`` below;
* interface normals point from the layer above into the layer below.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .quadrature import PANEL_ORDER, gauss_legendre


class GeometryError(ValueError):
    """Invalid interface or layer geometry."""


# ---------------------------------------------------------------------------
# interfaces
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class InterfaceGeometry:
    """One period of an interface curve.

    ``kind`` is one of ``"fourier"``, ``"polyline"`` or ``"samples"``; the
    descriptor holds the data for that kind (see :meth:`to_dict`).
    """

    kind: str
    descriptor: dict
    period: float = 1.0
    corners: tuple = ()

    # -- evaluation -------------------------------------------------------
    def evaluate(self, t):
        """Return ``(points, derivatives)`` at parameter values ``t``."""
        t = np.asarray(t, dtype=float)
        d = self.period
        if self.kind == "fourier":
            c = np.asarray(self.descriptor["coeffs"], float)
            j = np.arange(1, c.size + 1)
            arg = 2 * np.pi * np.multiply.outer(t, j)
            s = self.descriptor.get("scale", 1.0)
            y0 = self.descriptor.get("offset", 0.0)
            if self.descriptor.get("trig", "sin") == "sin":
                y = y0 + s * (np.sin(arg) @ c)
                dy = s * (np.cos(arg) @ (2 * np.pi * j * c))
            else:
                y = y0 + s * (np.cos(arg) @ c)
                dy = -s * (np.sin(arg) @ (2 * np.pi * j * c))
            x = t * d - 0.5 * d
            dx = np.full_like(t, d)
        elif self.kind == "polyline":
            v = np.asarray(self.descriptor["vertices"], float)
            tb = _polyline_breaks(v)
            k = np.clip(np.searchsorted(tb, t, side="right") - 1, 0, len(v) - 2)
            seg = v[k + 1] - v[k]
            h = (tb[k + 1] - tb[k])[..., None]
            pts = v[k] + seg * ((t - tb[k])[..., None] / h)
            der = seg / h
            x, y = pts[..., 0], pts[..., 1]
            dx, dy = der[..., 0], der[..., 1]
        elif self.kind == "samples":
            yk = np.asarray(self.descriptor["y"], float)
            n = yk.size
            ck = np.fft.rfft(yk) / n
            m = np.arange(ck.size)
            wgt = np.where((m == 0) | ((n % 2 == 0) & (m == n // 2)), 1.0, 2.0)
            e = np.exp(2j * np.pi * np.multiply.outer(t, m))
            y = self.descriptor.get("offset", 0.0) + np.real(e @ (wgt * ck))
            dy = np.real(e @ (wgt * ck * 2j * np.pi * m))
            x = t * d - 0.5 * d
            dx = np.full_like(t, d)
        else:
            raise GeometryError(f"unknown interface kind {self.kind!r}")
        return np.stack([x, y], axis=-1), np.stack([dx, dy], axis=-1)

    def to_dict(self) -> dict:
        out = {"type": self.kind}
        out.update(self.descriptor)
        return out

    def digest(self) -> str:
        blob = json.dumps({"p": self.period, **self.to_dict()}, sort_keys=True, default=float)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def y_range(self, n: int = 2049):
        pts, _ = self.evaluate(np.linspace(0.0, 1.0, n))
        return float(pts[:, 1].min()), float(pts[:, 1].max())

    def sample(self, n: int = 513) -> np.ndarray:
        """Polyline approximation including corners, closing at ``t = 1``."""
        t = np.union1d(np.linspace(0.0, 1.0, n), np.asarray(self.corners, float))
        return self.evaluate(t)[0]


def _polyline_breaks(v: np.ndarray) -> np.ndarray:
    seg = np.linalg.norm(np.diff(v, axis=0), axis=1)
    if np.any(seg <= 0):
        raise GeometryError("polyline has repeated vertices")
    return np.concatenate([[0.0], np.cumsum(seg)]) / seg.sum()


def fourier_interface(coeffs: Sequence[float], kind: str = "sin", scale: float = 1.0,
                      offset: float = 0.0, period: float = 1.0) -> InterfaceGeometry:
    """Graph ``y = offset + scale * sum_j c_j trig(2 pi j t)``, ``x = t d - d/2``."""
    coeffs = [float(c) for c in coeffs]
    if not coeffs:
        raise GeometryError("coefficient list must be nonempty")
    if kind not in ("sin", "cos"):
        raise GeometryError("kind must be 'sin' or 'cos'")
    desc = {"coeffs": coeffs, "trig": kind, "scale": float(scale), "offset": float(offset)}
    return InterfaceGeometry("fourier", desc, float(period), ())


def random_fourier_interface(seed: int, n_modes: int = 30, kind: str = "sin",
                             scale: float = 1.0 / 60.0, offset: float = 0.0,
                             period: float = 1.0) -> InterfaceGeometry:
    """Fourier graph with coefficients drawn uniformly from [0, 1) and sorted
    in descending order (reproducible through ``seed``)."""
    rng = np.random.default_rng(seed)
    c = np.sort(rng.random(n_modes))[::-1]
    return fourier_interface(c, kind, scale, offset, period)


def polyline_interface(vertices, period: float = 1.0) -> InterfaceGeometry:
    """Piecewise-linear interface through ``vertices`` from ``x = -d/2`` to ``x = d/2``.

    The first and last vertex must differ by exactly one period in ``x`` and
    agree in ``y``.  Tangent discontinuities (including the one across the
    period seam) are recorded as corners.
    """
    v = np.asarray(vertices, float)
    if v.ndim != 2 or v.shape[1] != 2 or len(v) < 2:
        raise GeometryError("vertices must be an (n, 2) array with n >= 2")
    if abs(v[-1, 0] - v[0, 0] - period) > 1e-12 * period or abs(v[-1, 1] - v[0, 1]) > 1e-12:
        raise GeometryError("polyline must span exactly one period")
    tb = _polyline_breaks(v)
    tang = np.diff(v, axis=0)
    tang /= np.linalg.norm(tang, axis=1)[:, None]
    corners = []
    for k in range(1, len(v) - 1):
        if abs(tang[k - 1, 0] * tang[k, 1] - tang[k - 1, 1] * tang[k, 0]) > 1e-12 or tang[k - 1] @ tang[k] < 0:
            corners.append(float(tb[k]))
    if abs(tang[-1, 0] * tang[0, 1] - tang[-1, 1] * tang[0, 0]) > 1e-12:
        corners.insert(0, 0.0)
    desc = {"vertices": v.tolist()}
    return InterfaceGeometry("polyline", desc, float(period), tuple(corners))


def sampled_interface(y_samples, offset: float = 0.0, period: float = 1.0) -> InterfaceGeometry:
    """Smooth graph interpolating equispaced samples ``y(x_k)``, ``x_k = -d/2 + k d / n``."""
    y = [float(v) for v in y_samples]
    if len(y) < 2:
        raise GeometryError("need at least two samples")
    return InterfaceGeometry("samples", {"y": y, "offset": float(offset)}, float(period), ())


# ---------------------------------------------------------------------------
# stack and incident wave
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LayerStack:
    """Period, per-layer wave numbers (top-down) and interfaces (top-down)."""

    period: float
    wavenumbers: tuple
    interfaces: tuple

    def __post_init__(self):
        object.__setattr__(self, "wavenumbers", tuple(float(w) for w in self.wavenumbers))
        object.__setattr__(self, "interfaces", tuple(self.interfaces))
        if len(self.interfaces) < 1:
            raise GeometryError("need at least one interface")
        if len(self.wavenumbers) != len(self.interfaces) + 1:
            raise GeometryError("need one wave number per layer (interfaces + 1)")
        if any(not (w > 0) for w in self.wavenumbers):
            raise GeometryError("wave numbers must be positive")
        for g in self.interfaces:
            if abs(g.period - self.period) > 1e-14 * self.period:
                raise GeometryError("interface period does not match the stack period")
            check_simple(g)
        for a, b in zip(self.interfaces[:-1], self.interfaces[1:]):
            check_ordered(a, b)

    @property
    def n_interfaces(self) -> int:
        return len(self.interfaces)

    def replace_interface(self, i: int, geom: InterfaceGeometry) -> "LayerStack":
        """New stack with interface ``i`` (0-based) replaced."""
        ifs = list(self.interfaces)
        ifs[i] = geom
        return LayerStack(self.period, self.wavenumbers, tuple(ifs))

    def replace_wavenumber(self, layer: int, omega: float) -> "LayerStack":
        """New stack with the wave number of ``layer`` (0-based) replaced."""
        w = list(self.wavenumbers)
        w[layer] = float(omega)
        return LayerStack(self.period, tuple(w), self.interfaces)

    def to_dict(self) -> dict:
        return {"period": self.period, "wavenumbers": list(self.wavenumbers),
                "interfaces": [g.to_dict() for g in self.interfaces]}


def _segments_intersect(p: np.ndarray, q: np.ndarray, skip_adjacent: bool) -> bool:
    """Whether any segment of polyline ``p`` properly crosses one of ``q``."""
    a0, a1 = p[:-1], p[1:]
    b0, b1 = q[:-1], q[1:]

    def cross(o, u, v):
        return (u[..., 0] - o[..., 0]) * (v[..., 1] - o[..., 1]) - (u[..., 1] - o[..., 1]) * (v[..., 0] - o[..., 0])

    A0, A1 = a0[:, None], a1[:, None]
    B0, B1 = b0[None, :], b1[None, :]
    d1 = cross(A0, A1, B0)
    d2 = cross(A0, A1, B1)
    d3 = cross(B0, B1, A0)
    d4 = cross(B0, B1, A1)
    hit = (d1 * d2 < 0) & (d3 * d4 < 0)
    if skip_adjacent:
        n = hit.shape[0]
        idx = np.arange(n)
        for off in (-1, 0, 1):
            j = idx + off
            ok = (j >= 0) & (j < hit.shape[1])
            hit[idx[ok], j[ok]] = False
    return bool(hit.any())


def check_simple(geom: InterfaceGeometry, n: int = 400) -> None:
    """Raise :class:`GeometryError` if one period of the curve self-intersects."""
    p = geom.sample(n)
    if _segments_intersect(p, p, skip_adjacent=True):
        raise GeometryError("interface is self-intersecting")
    d = np.array([geom.period, 0.0])
    for s in (-1, 1):
        q = p + s * d
        hit_inner = _segments_intersect(p[1:-1], q[1:-1], skip_adjacent=False)
        if hit_inner:
            raise GeometryError("interface intersects its periodic copy")


def check_ordered(upper: InterfaceGeometry, lower: InterfaceGeometry, n: int = 400) -> None:
    """Raise unless ``upper`` lies strictly above ``lower`` (with copies)."""
    p = upper.sample(n)
    q = lower.sample(n)
    if not p[0, 1] > q[0, 1]:
        raise GeometryError("interfaces are not ordered top-down")
    d = np.array([upper.period, 0.0])
    for s in (-1, 0, 1):
        if _segments_intersect(p, q + s * d, skip_adjacent=False):
            raise GeometryError("interfaces intersect")


@dataclass(frozen=True)
class IncidentWave:
    """Plane wave ``exp(i k . x)`` with ``k = omega1 (cos theta, sin theta)``."""

    theta: float
    omega1: float
    period: float = 1.0

    def __post_init__(self):
        if not (-np.pi < self.theta < 0):
            raise ValueError("incident angle must lie in (-pi, 0)")

    @property
    def k(self) -> np.ndarray:
        return self.omega1 * np.array([np.cos(self.theta), np.sin(self.theta)])

    @property
    def bloch_alpha(self) -> complex:
        return complex(np.exp(1j * self.omega1 * self.period * np.cos(self.theta)))

    def value(self, pts) -> np.ndarray:
        pts = np.asarray(pts, float)
        return np.exp(1j * (pts @ self.k))

    def gradient(self, pts) -> np.ndarray:
        return 1j * self.value(pts)[..., None] * self.k


# ---------------------------------------------------------------------------
# discretization
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class UnitCellParams:
    """Unit-cell discretization parameters."""

    M_w: int = 120
    M: int = 60
    P: int = 160
    K: int = 20
    corner_levels: int = 5
    proxy_radius_factor: float = 1.75
    wall_margin: float = 0.1

    def __post_init__(self):
        for name in ("M_w", "M", "P", "K", "corner_levels"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if not (1.5 <= self.proxy_radius_factor <= 2.0):
            raise ValueError("proxy radius factor must lie in [1.5, 2]")


@dataclass(frozen=True)
class Discretization:
    """Nystrom discretization of one interface on Gauss--Legendre panels."""

    geom: InterfaceGeometry
    nodes: np.ndarray      # (N, 2)
    normals: np.ndarray    # (N, 2), unit, pointing into the layer below
    speeds: np.ndarray     # |gamma'(t)|
    weights: np.ndarray    # arc-length quadrature weights
    t: np.ndarray          # parameter values
    panels: np.ndarray     # (n_panels, 2) parameter bounds
    corner_panel: np.ndarray  # bool flag per panel

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[0]

    @property
    def n_panels(self) -> int:
        return self.panels.shape[0]

    @property
    def sqrt_w(self) -> np.ndarray:
        return np.sqrt(self.weights)

    def panel_nodes(self, p: int) -> slice:
        return slice(PANEL_ORDER * p, PANEL_ORDER * (p + 1))


def panel_breakpoints(corners: Sequence[float], panels_per_period: int, corner_levels: int) -> np.ndarray:
    """Uniform parameter breakpoints with dyadic refinement toward each corner.

    The two panels touching a corner are each replaced by ``corner_levels + 1``
    panels whose lengths halve toward the corner.
    """
    if panels_per_period < 2:
        raise GeometryError("need at least two panels per period")
    cs = sorted({float(c) % 1.0 for c in corners})
    br = np.union1d(np.linspace(0.0, 1.0, panels_per_period + 1), cs)
    extra = []
    lev = 0.5 ** np.arange(1, corner_levels + 1)
    for c in cs:
        i = int(np.argmin(np.abs(br - c)))
        right = br[i + 1]
        extra.extend(c + (right - c) * lev)
        anchor, left = (1.0, br[-2]) if i == 0 else (c, br[i - 1])
        extra.extend(anchor - (anchor - left) * lev)
    return np.union1d(br, extra)


def build_discretization(geom: InterfaceGeometry, panels_per_period: int,
                         params: UnitCellParams | None = None) -> Discretization:
    """16-point composite Gauss discretization of ``geom``."""
    params = params or UnitCellParams()
    br = panel_breakpoints(geom.corners, panels_per_period, params.corner_levels)
    u, w = gauss_legendre(PANEL_ORDER)
    a, b = br[:-1], br[1:]
    t = (0.5 * (a + b))[:, None] + (0.5 * (b - a))[:, None] * u[None, :]
    jac = (0.5 * (b - a))[:, None] * w[None, :]
    # evaluate each panel with the curve piece it belongs to (corner-safe)
    pts, der = geom.evaluate(t.ravel())
    speed = np.linalg.norm(der, axis=1)
    if np.any(speed <= 0):
        raise GeometryError("degenerate parametrization")
    tang = der / speed[:, None]
    normals = np.stack([tang[:, 1], -tang[:, 0]], axis=1)
    weights = speed * jac.ravel()
    is_corner = (b - a) < 0.99 / panels_per_period if geom.corners else np.zeros(len(a), bool)
    for arr in (pts, normals, speed, weights, t):
        arr.setflags(write=False)
    return Discretization(geom, pts, normals, speed, weights, t.ravel(),
                          np.stack([a, b], axis=1), is_corner)


# ---------------------------------------------------------------------------
# unit cell
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ProxyCircle:
    center: np.ndarray
    radius: float
    points: np.ndarray
    normals: np.ndarray

    @classmethod
    def make(cls, center, radius: float, n: int) -> "ProxyCircle":
        th = 2 * np.pi * np.arange(n) / n
        nrm = np.stack([np.cos(th), np.sin(th)], axis=1)
        c = np.asarray(center, float)
        return cls(c, float(radius), c + radius * nrm, nrm)

    def key(self) -> tuple:
        return (float(self.center[0]), float(self.center[1]), self.radius, len(self.points))


@dataclass(frozen=True)
class WallSegment:
    """Collocation nodes on one layer's stretch of the left/right walls."""

    y: np.ndarray
    weights: np.ndarray

    def key(self) -> tuple:
        return (float(self.y[0]), float(self.y[-1]), len(self.y))


@dataclass(frozen=True)
class UnitCellLayout:
    period: float
    L: float
    R: float
    y_U: float
    y_D: float
    walls: tuple          # WallSegment per layer (I + 1)
    proxies: tuple        # ProxyCircle per layer (I + 1)
    top_x: np.ndarray     # M equispaced abscissae on y = y_U and y = y_D
    top_w: np.ndarray

    @property
    def n_layers(self) -> int:
        return len(self.walls)


def _wall_rule(y_top: float, y_bot: float, n: int):
    order = max(q for q in range(1, PANEL_ORDER + 1) if n % q == 0)
    u, w = gauss_legendre(order)
    npan = n // order
    edges = np.linspace(y_top, y_bot, npan + 1)
    a, b = edges[:-1], edges[1:]
    y = (0.5 * (a + b))[:, None] + (0.5 * (b - a))[:, None] * u[None, :]
    wt = np.abs(0.5 * (b - a))[:, None] * w[None, :]
    return y.ravel(), wt.ravel()


def build_unit_cell(stack: LayerStack, params: UnitCellParams | None = None,
                    y_U: float | None = None, y_D: float | None = None) -> UnitCellLayout:
    """Walls, wall collocation nodes and proxy circles for ``stack``."""
    params = params or UnitCellParams()
    d = stack.period
    top = stack.interfaces[0].y_range()[1]
    bot = stack.interfaces[-1].y_range()[0]
    if y_U is None:
        y_U = top + params.wall_margin * d
    if y_D is None:
        y_D = bot - params.wall_margin * d
    if not (y_U > top and y_D < bot):
        raise GeometryError("interfaces cross the top/bottom walls")
    # heights where the interfaces meet the walls
    ends = [float(g.evaluate(np.array([0.0]))[0][0, 1]) for g in stack.interfaces]
    levels = [y_U] + ends + [y_D]
    walls, proxies = [], []
    for l in range(len(levels) - 1):
        y, w = _wall_rule(levels[l], levels[l + 1], params.M_w)
        walls.append(WallSegment(y, w))
        yc = 0.5 * (levels[l] + levels[l + 1])
        proxies.append(ProxyCircle.make((0.0, yc), params.proxy_radius_factor * d, params.P))
    tx = -0.5 * d + (np.arange(params.M) + 0.5) * d / params.M
    tw = np.full(params.M, d / params.M)
    return UnitCellLayout(d, -0.5 * d, 0.5 * d, float(y_U), float(y_D), tuple(walls),
                          tuple(proxies), tx, tw)


# ---------------------------------------------------------------------------
# JSON
# ---------------------------------------------------------------------------


def interface_from_dict(obj: dict, period: float) -> InterfaceGeometry:
    kind = obj.get("type")
    if kind == "fourier":
        if "seed" in obj:
            return random_fourier_interface(int(obj["seed"]), int(obj.get("n_modes", 30)),
                                            obj.get("trig", "sin"), obj.get("scale", 1 / 60),
                                            obj.get("offset", 0.0), period)
        return fourier_interface(obj["coeffs"], obj.get("trig", "sin"), obj.get("scale", 1.0),
                                 obj.get("offset", 0.0), period)
    if kind == "polyline":
        return polyline_interface(obj["vertices"], period)
    if kind == "samples":
        return sampled_interface(obj["y"], obj.get("offset", 0.0), period)
    raise GeometryError(f"unknown interface type {kind!r}")


def stack_from_dict(obj: dict) -> LayerStack:
    for key in ("period", "wavenumbers", "interfaces"):
        if key not in obj:
            raise GeometryError(f"stack description lacks {key!r}")
    d = float(obj["period"])
    ifs = tuple(interface_from_dict(g, d) for g in obj["interfaces"])
    return LayerStack(d, tuple(obj["wavenumbers"]), ifs)


def load_stack(path) -> LayerStack:
    with open(path) as fh:
        return stack_from_dict(json.load(fh))


def schema_path() -> Path:
    return Path(__file__).with_name("data") / "stack.schema.json"
