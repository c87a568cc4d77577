"""Fast direct solver for the unit-cell system.

The work is split into phases:

* Precomputation I (phase free): discretizations, hierarchical inverses of the
  self blocks ``A^s_ii`` and low-rank factors of everything else in ``A``.
* Precomputation II (phase free): periodizing blocks and all products with
  ``A0^-1`` that the Bloch-phase dependent steps need, split by powers of
  ``alpha``.
* Precomputation III (one per Bloch phase): the capacitance matrix
  ``S2 = I + R(alpha) A0^-1 L`` factored by block Thomas elimination, the
  Schur complement of the periodizing unknowns and its truncated SVD.
* Solve (one per incident angle).

Every phase-free object is cached under a key made of the digests of its
inputs, so updating one interface or one wave number only rebuilds the
objects that actually depend on it.
"""
from __future__ import annotations

import hashlib
import time
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .assembly import (UnknownLayout, VerticalOracle, build_B, build_C_pair, build_Q_pair, build_V, build_Z,
                       incident_rhs, rb_wavenumbers, assemble_W)
from .geometry import (IncidentWave, LayerStack, UnitCellParams, build_discretization,
                       build_unit_cell)
from .hinv import apply_inverse, build_block_inverse
from .kernels import COUNTER, SelfOracle
from .lowrank import CompressionParams, LowRankFactors, compress_neighbor, compress_vertical


class SolverError(RuntimeError):
    """Raised when a factorization breaks down or inputs are inconsistent."""


@dataclass(frozen=True)
class SolverParams:
    panels: int | tuple = 40
    unit: UnitCellParams = field(default_factory=UnitCellParams)
    compression: CompressionParams = field(default_factory=CompressionParams)
    hbs_method: str = "auto"
    hbs_tol: float = 1e-12
    leaf_size: int = 128
    dense_threshold: int = 512
    eps_schur: float = 1e-13
    ellipse_semi_axis: float = 0.75

    def panels_for(self, i: int) -> int:
        return int(self.panels) if np.isscalar(self.panels) else int(self.panels[i])


def _digest(*arrays) -> str:
    h = hashlib.sha1()
    for a in arrays:
        h.update(np.ascontiguousarray(a).tobytes())
    return h.hexdigest()[:16]


# ---------------------------------------------------------------------------
# block Thomas
# ---------------------------------------------------------------------------


@dataclass
class ThomasFactor:
    """Forward-eliminated block tridiagonal matrix."""

    lus: list
    W: list
    Z: list
    sizes: list

    @property
    def offsets(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum(self.sizes)]).astype(int)


def _lu(M: np.ndarray):
    if M.shape[0] == 0:
        return None
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", sla.LinAlgWarning)  # reported as SolverError below
        lu = sla.lu_factor(M, check_finite=False)
    d = np.abs(np.diag(lu[0]))
    if not np.all(np.isfinite(d)) or d.min() <= 1e-14 * max(d.max(), 1e-300):
        raise SolverError("singular pivot block in block Thomas elimination")
    return lu


def _lu_solve(lu, b, trans: int = 0):
    if lu is None:
        return b
    return sla.lu_solve(lu, b, trans=trans, check_finite=False)


def block_thomas_factor(X: list, Y: list, Z: list) -> ThomasFactor:
    """Eliminate the sub-diagonal blocks.

    ``X[i]`` are the diagonal blocks, ``Y[i]`` the blocks left of the diagonal
    (row ``i``, column ``i - 1``; ``Y[0]`` unused) and ``Z[i]`` the blocks
    right of it (row ``i``, column ``i + 1``; ``Z[-1]`` unused).
    """
    n = len(X)
    lus, W = [], [None]
    lus.append(_lu(np.asarray(X[0])))
    for i in range(1, n):
        Wi = _lu_solve(lus[i - 1], np.asarray(Y[i]).T, trans=1).T
        W.append(Wi)
        lus.append(_lu(np.asarray(X[i]) - Wi @ np.asarray(Z[i - 1])))
    return ThomasFactor(lus, W, list(Z), [np.asarray(x).shape[0] for x in X])


def block_thomas_solve(fac: ThomasFactor, rhs: np.ndarray) -> np.ndarray:
    rhs = np.asarray(rhs)
    off = fac.offsets
    if rhs.shape[0] != off[-1]:
        raise ValueError("right-hand side does not match the block sizes")
    n = len(fac.lus)
    r = [rhs[off[i]:off[i + 1]].astype(complex) for i in range(n)]
    for i in range(1, n):
        r[i] = r[i] - fac.W[i] @ r[i - 1]
    x = [None] * n
    x[n - 1] = _lu_solve(fac.lus[n - 1], r[n - 1])
    for i in range(n - 2, -1, -1):
        x[i] = _lu_solve(fac.lus[i], r[i] - fac.Z[i] @ x[i + 1])
    return np.concatenate(x, axis=0)


def block_thomas(X: list, Y: list, Z: list, rhs: np.ndarray) -> np.ndarray:
    """Solve a block tridiagonal system by block Thomas elimination."""
    return block_thomas_solve(block_thomas_factor(X, Y, Z), rhs)


def truncated_pinv_factors(S: np.ndarray, eps: float):
    """``(U_l, s_l, Vh_l)`` keeping singular values ``> eps * s_max``."""
    U, s, Vh = np.linalg.svd(S, full_matrices=False)
    if s.size == 0 or s[0] == 0:
        return U[:, :0], s[:0], Vh[:0]
    k = int(np.sum(s > eps * s[0]))
    return U[:, :k], s[:k], Vh[:k]


# ---------------------------------------------------------------------------
# phase-weighted block operators
# ---------------------------------------------------------------------------


@dataclass
class BlockOp:
    """``sum alpha^p M`` over blocks placed at ``(rows, interface columns)``."""

    n_rows: int
    col_offsets: np.ndarray
    blocks: list = field(default_factory=list)  # (row slice, interface, power, matrix)

    def add(self, rows: slice, iface: int, power: int, M: np.ndarray) -> None:
        self.blocks.append((rows, iface, power, M))

    def _cols(self, j):
        return slice(int(self.col_offsets[j]), int(self.col_offsets[j + 1]))

    def apply(self, X: np.ndarray, alpha: complex) -> np.ndarray:
        X = np.asarray(X)
        out = np.zeros((self.n_rows,) + X.shape[1:], dtype=complex)
        for r, j, p, M in self.blocks:
            out[r] += (alpha ** p) * (M @ X[self._cols(j)])
        return out

    def pieces(self, X: np.ndarray) -> dict:
        """Phase-free products ``{p: sum M X}`` with a full-height ``X``."""
        out = {}
        for r, j, p, M in self.blocks:
            acc = out.setdefault(p, np.zeros((self.n_rows, X.shape[1]), dtype=complex))
            acc[r] += M @ X[self._cols(j)]
        return out

    def pieces_blockdiag(self, Ys: list, k_offsets: np.ndarray) -> dict:
        """Phase-free products with ``blockdiag(Ys)``."""
        out = {}
        for r, j, p, M in self.blocks:
            acc = out.setdefault(p, np.zeros((self.n_rows, int(k_offsets[-1])), dtype=complex))
            acc[r, int(k_offsets[j]):int(k_offsets[j + 1])] += M @ Ys[j]
        return out

    def dense(self, alpha: complex) -> np.ndarray:
        out = np.zeros((self.n_rows, int(self.col_offsets[-1])), dtype=complex)
        for r, j, p, M in self.blocks:
            out[r, self._cols(j)] += (alpha ** p) * M
        return out


def combine(pieces: dict, alpha: complex, shape=None) -> np.ndarray:
    if not pieces:
        return np.zeros(shape, dtype=complex)
    return sum((alpha ** p) * M for p, M in pieces.items())


# ---------------------------------------------------------------------------
# precomputation products
# ---------------------------------------------------------------------------


@dataclass
class PrecompI:
    """Phase-independent fast linear algebra of ``A``."""

    discs: list
    oracles: list
    inverses: list
    factors: LowRankFactors
    time_s: float
    kernel_evals: int

    @property
    def sizes(self) -> list:
        return [2 * d.n_nodes for d in self.discs]

    def ranks(self) -> dict:
        r = self.factors.ranks()
        for i, inv in enumerate(self.inverses):
            r[f"hbs_root_{i}"] = int(len(inv.root_idx)) if inv.root_idx is not None else inv.n
        return r


@dataclass
class PrecompII:
    """Periodizing blocks and phase-free products with ``A0^-1``."""

    layout: object
    unknowns: UnknownLayout
    Y: list                 # A0^-1 L_i per interface
    k_offsets: np.ndarray
    T: np.ndarray           # A0^-1 [B] (2N x P_tot)
    R: BlockOp              # rows in k-space, columns per interface
    CZ: BlockOp             # wall + top/bottom rows
    S2_pieces: dict
    RT_pieces: dict
    CZT_pieces: dict
    CZY_pieces: dict
    QV_pieces: dict
    time_s: float
    kernel_evals: int


@dataclass
class PhaseSolver:
    """Everything that depends on the Bloch phase only."""

    alpha: complex
    rep_theta: float
    extra_orders: int
    thomas: ThomasFactor
    X_RT: np.ndarray          # S2^-1 R(alpha) A0^-1 B
    schur: np.ndarray         # [Q 0; V W] - [C; Z] A^-1 [B 0]
    U: np.ndarray
    s: np.ndarray
    Vh: np.ndarray
    W: np.ndarray
    time_s: float

    @property
    def rank(self) -> int:
        return len(self.s)


@dataclass
class SolveResult:
    theta: float
    alpha: complex
    sigma_hat: np.ndarray     # weighted densities (all interfaces, interleaved)
    sigma: list               # node-sampled sigma per interface
    tau: list                 # node-sampled tau per interface
    c: list                   # proxy coefficients per layer
    orders: np.ndarray
    aU: np.ndarray
    aD: np.ndarray
    flux_error: float
    shift: int = 0
    time_s: float = 0.0

    def to_dict(self) -> dict:
        return {
            "theta": self.theta,
            "alpha": [self.alpha.real, self.alpha.imag],
            "orders": self.orders.tolist(),
            "aU": [[z.real, z.imag] for z in self.aU],
            "aD": [[z.real, z.imag] for z in self.aD],
            "flux_error": self.flux_error,
        }


@dataclass
class AngleGroup:
    alpha: complex
    rep_theta: float
    members: list       # incident angles
    shifts: list        # integer order shifts (>= 0)
    indices: list       # positions in the input list

    @property
    def max_shift(self) -> int:
        return max(self.shifts) if self.shifts else 0


# ---------------------------------------------------------------------------
# angle grouping
# ---------------------------------------------------------------------------


def group_angles(angles, omega1: float, d: float = 1.0, quantum: float = 1e-12) -> list:
    """Partition incident angles by their Bloch phase."""
    groups: dict = {}
    for idx, th in enumerate(angles):
        th = float(th)
        if not (-np.pi < th < 0):
            raise ValueError("incident angles must lie in (-pi, 0)")
        frac = (omega1 * d * np.cos(th) / (2 * np.pi)) % 1.0
        key = int(round(frac / quantum)) % int(round(1 / quantum))
        groups.setdefault(key, []).append((idx, th))
    out = []
    for members in groups.values():
        kx = [omega1 * np.cos(th) for _, th in members]
        rep = int(np.argmin(kx))
        rep_theta = members[rep][1]
        shifts = [int(round((k - kx[rep]) * d / (2 * np.pi))) for k in kx]
        alpha = complex(np.exp(1j * omega1 * d * np.cos(rep_theta)))
        out.append(AngleGroup(alpha, rep_theta, [th for _, th in members], shifts,
                              [i for i, _ in members]))
    return out


# ---------------------------------------------------------------------------
# solver state
# ---------------------------------------------------------------------------


class QPSolver:
    """Fast direct solver for one layered grating with cached precomputations."""

    def __init__(self, stack: LayerStack, params: SolverParams | None = None):
        self.stack = stack
        self.params = params or SolverParams()
        self._panels = [self.params.panels_for(i) for i in range(stack.n_interfaces)]
        self._cache: dict = {}
        self._used: set = set()
        self._rebuilt: list = []
        self.pI: PrecompI | None = None
        self.pII: PrecompII | None = None
        self._phase: dict = {}
        self.counters = {"precomp1": 0, "precomp2": 0, "precomp3": 0, "solves": 0}

    # -- cache --------------------------------------------------------------
    def _get(self, name: str, key, build):
        full = (name, key)
        self._used.add(full)
        if full not in self._cache:
            self._cache[full] = build()
            self._rebuilt.append(name)
        return self._cache[full]

    def _prune(self):
        for k in list(self._cache):
            if k not in self._used:
                del self._cache[k]
        self._used = set()

    # -- keys ---------------------------------------------------------------
    def _disc_key(self, i: int):
        return (self.stack.interfaces[i].digest(), self._panels[i], self.params.unit.corner_levels)

    def _self_key(self, i: int):
        om = self.stack.wavenumbers
        return (self._disc_key(i), float(om[i]), float(om[i + 1]))

    def _hbs_key(self):
        par = self.params
        return (par.hbs_method, par.hbs_tol, par.leaf_size, par.dense_threshold)

    def _factor_key(self, i: int):
        """Inputs of ``A0_ii^-1 L_i``: interface ``i``, its neighbours and wave numbers."""
        nb = tuple(self._disc_key(j) for j in (i - 1, i + 1) if 0 <= j < self.stack.n_interfaces)
        par = self.params
        return (self._self_key(i), nb, self._hbs_key(), par.compression, par.ellipse_semi_axis)

    # -- precomputation I ---------------------------------------------------
    def precompute_I(self) -> PrecompI:
        t0 = time.perf_counter()
        c0 = COUNTER.count
        st, par = self.stack, self.params
        I = st.n_interfaces
        om = st.wavenumbers
        discs = [self._get(f"disc_{i}", self._disc_key(i),
                           lambda i=i: build_discretization(st.interfaces[i], self._panels[i], par.unit))
                 for i in range(I)]
        oracles = [self._get(f"oracle_{i}", self._self_key(i),
                             lambda i=i: SelfOracle(discs[i], om[i], om[i + 1])) for i in range(I)]
        hkey = self._hbs_key()
        inverses = [self._get(f"hbs_{i}", (self._self_key(i), hkey),
                              lambda i=i: build_block_inverse(oracles[i], par.hbs_method, par.hbs_tol,
                                                              par.leaf_size,
                                                              dense_threshold=par.dense_threshold))
                    for i in range(I)]
        ckey = par.compression
        plus = [self._get(f"plus_{i}", (self._self_key(i), ckey),
                          lambda i=i: compress_neighbor(oracles[i], "plus", ckey)) for i in range(I)]
        minus = [self._get(f"minus_{i}", (self._self_key(i), ckey),
                           lambda i=i: compress_neighbor(oracles[i], "minus", ckey)) for i in range(I)]
        vert = {}
        for i in range(I):
            for j in (i - 1, i + 1):
                if not 0 <= j < I:
                    continue
                w, sgn = (om[i + 1], -1.0) if j == i + 1 else (om[i], 1.0)
                key = (self._disc_key(i), self._disc_key(j), float(w), sgn, ckey, par.ellipse_semi_axis)
                vert[(i, j)] = self._get(
                    f"vertical_{i}_{j}", key,
                    lambda i=i, j=j, w=w, sgn=sgn: compress_vertical(
                        VerticalOracle(discs[i], discs[j], w, sgn), ckey, par.ellipse_semi_axis))
        self.pI = PrecompI(discs, oracles, inverses, LowRankFactors(plus, minus, vert),
                           time.perf_counter() - t0, COUNTER.count - c0)
        self.counters["precomp1"] += 1
        return self.pI

    # -- precomputation II --------------------------------------------------
    def precompute_II(self) -> PrecompII:
        if self.pI is None:
            self.precompute_I()
        t0 = time.perf_counter()
        c0 = COUNTER.count
        st, par, pI = self.stack, self.params, self.pI
        up = par.unit
        I = st.n_interfaces
        om = st.wavenumbers
        discs = pI.discs
        layout = build_unit_cell(st, up)
        P = up.P
        ul = UnknownLayout(tuple(d.n_nodes for d in discs), P, 2 * up.K + 1)
        offs = ul.sigma_offsets
        wall_keys = [_digest(w.y, w.weights, [layout.L, layout.R]) for w in layout.walls]
        prox_keys = [p.key() for p in layout.proxies]
        top_key = _digest(layout.top_x, layout.top_w, [layout.y_U, layout.y_D])

        # low-rank products
        Y = [self._get(f"Y_{i}", self._factor_key(i),
                       lambda i=i: apply_inverse(pI.inverses[i], pI.factors.L_block(i)))
             for i in range(I)]
        ks = pI.factors.block_sizes()
        koff = np.concatenate([[0], np.cumsum(ks)]).astype(int)
        R = BlockOp(int(koff[-1]), offs)
        for i in range(I):
            r0 = koff[i]
            for name, f in pI.factors.parts(i):
                rows = slice(r0, r0 + f.k)
                if name == "plus":
                    R.add(rows, i, 1, f.R)
                elif name == "minus":
                    R.add(rows, i, -1, f.R)
                else:
                    j = i - 1 if name == "lower" else i + 1
                    R.add(rows, j, 0, f.R0)
                    R.add(rows, j, 1, f.Rp)
                    R.add(rows, j, -1, f.Rm)
                r0 += f.k

        # periodizing blocks
        Bb = {}
        for i in range(I):
            for l, sgn in ((i, 1.0), (i + 1, -1.0)):
                key = (self._disc_key(i), prox_keys[l], float(om[l]), sgn)
                Bb[(i, l)] = self._get(f"B_{i}_{l}", key,
                                       lambda i=i, l=l, sgn=sgn: build_B(discs[i], layout, l, om[l], sgn))
        P_tot = P * (I + 1)
        T = np.zeros((offs[-1], P_tot), dtype=complex)
        for i in range(I):
            blk = np.hstack([Bb[(i, i)], Bb[(i, i + 1)]])
            key = (self._self_key(i), self._hbs_key(), prox_keys[i], prox_keys[i + 1])
            T[offs[i]:offs[i + 1], i * P:(i + 2) * P] = self._get(
                f"T_{i}", key, lambda blk=blk, i=i: apply_inverse(pI.inverses[i], blk))

        M_w, M = up.M_w, up.M
        n_rows = 2 * (I + 1) * M_w + 4 * M
        CZ = BlockOp(n_rows, offs)
        QV = {}
        for l in range(I + 1):
            rows = slice(2 * M_w * l, 2 * M_w * (l + 1))
            for i in (l - 1, l):
                if 0 <= i < I:
                    key = (self._disc_key(i), wall_keys[l], float(om[l]))
                    CR, CL = self._get(f"C_{l}_{i}", key,
                                       lambda i=i, l=l: build_C_pair(discs[i], layout, l, om[l]))
                    CZ.add(rows, i, -2, CR)
                    CZ.add(rows, i, 1, -CL)
            QR, QL = self._get(f"Q_{l}", (prox_keys[l], wall_keys[l], float(om[l])),
                               lambda l=l: build_Q_pair(layout, l, om[l]))
            for p, blk in ((-1, QR), (0, -QL)):
                acc = QV.setdefault(p, np.zeros((n_rows, P_tot), dtype=complex))
                acc[rows, l * P:(l + 1) * P] += blk
        r0 = 2 * (I + 1) * M_w
        rU, rD = slice(r0, r0 + 2 * M), slice(r0 + 2 * M, r0 + 4 * M)
        ZU = self._get("Z_U", (self._disc_key(0), top_key, float(om[0])),
                       lambda: build_Z(discs[0], layout, "U", om[0]))
        ZD = self._get("Z_D", (self._disc_key(I - 1), top_key, float(om[-1])),
                       lambda: build_Z(discs[I - 1], layout, "D", om[-1]))
        for s, blk in ZU.items():
            CZ.add(rU, 0, s, blk)
        for s, blk in ZD.items():
            CZ.add(rD, I - 1, s, blk)
        VU = self._get("V_U", (prox_keys[0], top_key, float(om[0])), lambda: build_V(layout, "U", 0, om[0]))
        VD = self._get("V_D", (prox_keys[I], top_key, float(om[-1])), lambda: build_V(layout, "D", I, om[-1]))
        QV[0][rU, 0:P] += VU
        QV[0][rD, I * P:] += VD

        self.pII = PrecompII(
            layout, ul, Y, koff, T, R, CZ,
            S2_pieces=R.pieces_blockdiag(Y, koff),
            RT_pieces=R.pieces(T),
            CZT_pieces=CZ.pieces(T),
            CZY_pieces=CZ.pieces_blockdiag(Y, koff),
            QV_pieces=QV,
            time_s=time.perf_counter() - t0,
            kernel_evals=COUNTER.count - c0,
        )
        self.counters["precomp2"] += 1
        self._phase = {}
        self._prune()
        return self.pII

    def precompute(self):
        """Run (or refresh) precomputations I and II."""
        self._rebuilt = []
        c0 = COUNTER.count
        self._used = set()
        self.precompute_I()
        self.precompute_II()
        return COUNTER.count - c0

    # -- precomputation III -------------------------------------------------
    def precompute_III(self, alpha: complex, rep_theta: float, extra_orders: int = 0) -> PhaseSolver:
        if self.pII is None:
            self.precompute()
        if abs(abs(alpha) - 1.0) > 1e-12:
            raise ValueError("the Bloch phase must have unit modulus")
        t0 = time.perf_counter()
        pII, up = self.pII, self.params.unit
        I = self.stack.n_interfaces
        koff = pII.k_offsets
        k_tot = int(koff[-1])
        S2 = np.eye(k_tot, dtype=complex) + combine(pII.S2_pieces, alpha, (k_tot, k_tot))
        blk = [slice(int(koff[i]), int(koff[i + 1])) for i in range(I)]
        X = [S2[blk[i], blk[i]] for i in range(I)]
        Yl = [None] + [S2[blk[i], blk[i - 1]] for i in range(1, I)]
        Zu = [S2[blk[i], blk[i + 1]] for i in range(I - 1)] + [None]
        th = block_thomas_factor(X, Yl, Zu)
        P_tot = pII.T.shape[1]
        RT = combine(pII.RT_pieces, alpha, (k_tot, P_tot))
        X_RT = block_thomas_solve(th, RT)
        CZT = combine(pII.CZT_pieces, alpha, (pII.CZ.n_rows, P_tot))
        CZY = combine(pII.CZY_pieces, alpha, (pII.CZ.n_rows, k_tot))
        QV = combine(pII.QV_pieces, alpha)
        W = assemble_W(rep_theta, self.stack.wavenumbers[0], self.stack.wavenumbers[-1],
                       self.stack.period, up.K, extra_orders, pII.layout)
        WW = np.zeros((pII.CZ.n_rows, W.shape[1]), dtype=complex)
        WW[2 * (I + 1) * up.M_w:] = W
        schur = np.hstack([QV - (CZT - CZY @ X_RT), WW])
        U, s, Vh = truncated_pinv_factors(schur, self.params.eps_schur)
        self.counters["precomp3"] += 1
        return PhaseSolver(alpha, rep_theta, extra_orders, th, X_RT, schur, U, s, Vh, W,
                           time.perf_counter() - t0)

    # -- A^-1 ---------------------------------------------------------------
    def apply_A0_inverse(self, f: np.ndarray) -> np.ndarray:
        offs = self.pII.unknowns.sigma_offsets
        out = np.zeros(f.shape, dtype=complex)
        for i, inv in enumerate(self.pI.inverses):
            sl = slice(int(offs[i]), int(offs[i + 1]))
            if np.any(f[sl]):
                out[sl] = apply_inverse(inv, f[sl])
        return out

    def _Y_apply(self, w: np.ndarray) -> np.ndarray:
        offs = self.pII.unknowns.sigma_offsets
        koff = self.pII.k_offsets
        out = np.zeros((int(offs[-1]),) + w.shape[1:], dtype=complex)
        for i, Yi in enumerate(self.pII.Y):
            out[int(offs[i]):int(offs[i + 1])] = Yi @ w[int(koff[i]):int(koff[i + 1])]
        return out

    def apply_A_inverse(self, phase: PhaseSolver, f: np.ndarray) -> np.ndarray:
        """``A(alpha)^-1 f`` by the Woodbury formula."""
        f = np.asarray(f)
        if f.shape[0] != self.pII.unknowns.n_sigma:
            raise ValueError("right-hand side has the wrong length")
        x0 = self.apply_A0_inverse(f)
        w = block_thomas_solve(phase.thomas, self.pII.R.apply(x0, phase.alpha))
        return x0 - self._Y_apply(w)

    def apply_A(self, alpha: complex, x: np.ndarray) -> np.ndarray:
        """``A(alpha) x`` with dense self blocks and the compressed remainder ``L R``."""
        offs = self.pII.unknowns.sigma_offsets
        koff = self.pII.k_offsets
        out = np.zeros(x.shape, dtype=complex)
        for i, o in enumerate(self.pI.oracles):
            sl = slice(int(offs[i]), int(offs[i + 1]))
            out[sl] = o.block(np.arange(o.n), np.arange(o.n)) @ x[sl]
        Rx = self.pII.R.apply(x, alpha)
        for i in range(len(self.pI.discs)):
            out[int(offs[i]):int(offs[i + 1])] += self.pI.factors.L_block(i) @ Rx[int(koff[i]):int(koff[i + 1])]
        return out

    # -- solve --------------------------------------------------------------
    def phase_solver(self, alpha: complex, rep_theta: float, extra_orders: int = 0) -> PhaseSolver:
        key = (complex(np.round(alpha.real, 12), np.round(alpha.imag, 12)), float(rep_theta), extra_orders)
        if key not in self._phase:
            self._phase[key] = self.precompute_III(alpha, rep_theta, extra_orders)
        return self._phase[key]

    def solve(self, theta: float, phase: PhaseSolver | None = None, shift: int | None = None) -> SolveResult:
        """Scattered field for one incident angle."""
        from .postproc import flux_error

        if self.pII is None:
            self.precompute()
        st, up = self.stack, self.params.unit
        inc = IncidentWave(theta, st.wavenumbers[0], st.period)
        if phase is None:
            phase = self.phase_solver(inc.bloch_alpha, theta, 0)
        if abs(inc.bloch_alpha - phase.alpha) > 1e-9:
            raise SolverError("incident angle does not match the Bloch phase of the solver")
        if shift is None:
            kx = st.wavenumbers[0] * (np.cos(theta) - np.cos(phase.rep_theta))
            shift = int(round(kx * st.period / (2 * np.pi)))
        if not 0 <= shift <= phase.extra_orders:
            raise SolverError("angle shift outside the orders covered by the solver")
        t0 = time.perf_counter()
        pII = self.pII
        f = incident_rhs(self.pI.discs, inc)
        x = self.apply_A_inverse(phase, f)
        g = pII.CZ.apply(x, phase.alpha)
        ca = -(phase.Vh.conj().T @ ((phase.U.conj().T @ g) / phase.s))
        P_tot = pII.T.shape[1]
        c = ca[:P_tot]
        # sigma = A^-1 f - A^-1 B c,  A^-1 B = T - Y S2^-1 R T
        sig = x - pII.T @ c + self._Y_apply(phase.X_RT @ c)
        n_ext = (ca.size - P_tot) // 2
        aU_ext, aD_ext = ca[P_tot:P_tot + n_ext], ca[P_tot + n_ext:]
        K = up.K
        sel = np.arange(2 * K + 1) + shift
        orders = np.arange(-K, K + 1)
        kappa = st.wavenumbers[0] * np.cos(theta) + 2 * np.pi * orders / st.period
        kU = rb_wavenumbers(kappa, st.wavenumbers[0])
        kD = rb_wavenumbers(kappa, st.wavenumbers[-1])
        aU, aD = aU_ext[sel], aD_ext[sel]
        fe = flux_error(aU, aD, kU, kD, st.wavenumbers[0], theta)
        offs = pII.unknowns.sigma_offsets
        sigmas, taus = [], []
        for i, d in enumerate(self.pI.discs):
            blk = sig[int(offs[i]):int(offs[i + 1])]
            sigmas.append(blk[0::2] / d.sqrt_w)
            taus.append(blk[1::2] / d.sqrt_w)
        P = up.P
        self.counters["solves"] += 1
        return SolveResult(theta, phase.alpha, sig, sigmas, taus,
                           [c[l * P:(l + 1) * P] for l in range(st.n_interfaces + 1)],
                           orders, aU, aD, fe, shift, time.perf_counter() - t0)

    def sweep(self, angles) -> tuple:
        """Solve for many angles, sharing work between angles with equal Bloch phase."""
        t0 = time.perf_counter()
        if self.pII is None:
            self.precompute()
        groups = group_angles(angles, self.stack.wavenumbers[0], self.stack.period)
        results = [None] * len(angles)
        p3 = []
        for g in groups:
            ph = self.precompute_III(g.alpha, g.rep_theta, g.max_shift)
            p3.append(ph.time_s)
            for idx, th, m in zip(g.indices, g.members, g.shifts):
                results[idx] = self.solve(th, ph, m)
        report = self.timing_report()
        report.update({
            "precomp3_s": p3,
            "solve_s": [r.time_s for r in results],
            "n_angles": len(angles),
            "n_groups": len(groups),
            "total_s": time.perf_counter() - t0,
        })
        return results, report

    def timing_report(self) -> dict:
        return {
            "precomp1_s": self.pI.time_s if self.pI else None,
            "precomp2_s": self.pII.time_s if self.pII else None,
            "ranks": self.pI.ranks() if self.pI else {},
            "N_total": int(sum(2 * d.n_nodes for d in self.pI.discs)) if self.pI else 0,
            "kernel_evals_precomp1": self.pI.kernel_evals if self.pI else 0,
            "kernel_evals_precomp2": self.pII.kernel_evals if self.pII else 0,
        }

    # -- updates ------------------------------------------------------------
    def update_interface(self, i: int, geom, n_panels: int | None = None) -> dict:
        """Replace interface ``i``; only objects depending on it are rebuilt."""
        self.stack = self.stack.replace_interface(i, geom)
        if n_panels is not None:
            self._panels[i] = int(n_panels)
        return self._refresh()

    def update_wavenumber(self, layer: int, omega: float) -> dict:
        """Change the wave number of one layer; only affected objects are rebuilt."""
        if not omega > 0:
            raise ValueError("wave numbers must be positive")
        self.stack = self.stack.replace_wavenumber(layer, omega)
        return self._refresh()

    def _refresh(self) -> dict:
        t0 = time.perf_counter()
        self.pI = self.pII = None
        evals = self.precompute()
        rebuilt = list(self._rebuilt)
        touched = sorted({int(n.split("_")[1]) for n in rebuilt
                          if n.split("_")[0] in ("hbs", "plus", "minus", "vertical")})
        return {"kernel_evals": evals, "rebuilt": rebuilt, "touched_interfaces": touched,
                "time_s": time.perf_counter() - t0}


# ---------------------------------------------------------------------------
# functional entry points
# ---------------------------------------------------------------------------


def precompute_I(stack: LayerStack, params: SolverParams | None = None) -> QPSolver:
    s = QPSolver(stack, params)
    s.precompute_I()
    return s


def solve(stack: LayerStack, theta: float, params: SolverParams | None = None) -> SolveResult:
    s = QPSolver(stack, params)
    s.precompute()
    return s.solve(theta)


def sweep(stack: LayerStack, angles, params: SolverParams | None = None):
    s = QPSolver(stack, params)
    return s.sweep(angles)
