"""Affine matrix pencils and the verification / learning LMIs built on them.

Every condition is stored as ``F(z) = F0 + sum_i z_i F_i >= 0`` per block, so a
single PSD-margin solver handles all of them.  Conditions of the form
``M(z) <= 0`` are stored negated.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .loop_transform import RecoveryMode, TransformedForm, transform
from .model import Network, isolate, multilayer_blocks
from .sets import Ellipsoid, SectorBounds, input_qc, output_spec


class Sign(enum.Enum):
    FREE = "free"
    NONNEG = "nonneg"
    POSITIVE = "positive"


@dataclass(frozen=True)
class Variable:
    name: str
    index: int
    sign: Sign = Sign.FREE


@dataclass(frozen=True)
class Block:
    F0: np.ndarray          # (d, d)
    F: np.ndarray           # (m, d, d), one coefficient matrix per variable
    label: str = ""

    @property
    def dim(self) -> int:
        return self.F0.shape[0]

    def __call__(self, z) -> np.ndarray:
        return self.F0 + np.tensordot(np.asarray(z, dtype=float), self.F, axes=1)


@dataclass(frozen=True)
class AffinePencil:
    blocks: tuple[Block, ...]
    variables: tuple[Variable, ...]

    def __post_init__(self):
        m = len(self.variables)
        for k, v in enumerate(self.variables):
            if v.index != k:
                raise ValueError(f"variable {v.name!r} has index {v.index}, expected {k}")
        for blk in self.blocks:
            d = blk.dim
            if blk.F0.shape != (d, d) or blk.F.shape != (m, d, d):
                raise ValueError(f"block {blk.label!r} has inconsistent coefficient shapes")
            if not (np.array_equal(blk.F0, blk.F0.T)
                    and np.array_equal(blk.F, blk.F.transpose(0, 2, 1))):
                raise ValueError(f"block {blk.label!r} is not symmetric")

    @property
    def n_vars(self) -> int:
        return len(self.variables)

    @property
    def dims(self) -> list[int]:
        return [b.dim for b in self.blocks]

    def evaluate(self, z) -> list[np.ndarray]:
        z = np.asarray(z, dtype=float)
        if z.shape != (self.n_vars,):
            raise ValueError(f"z has shape {z.shape}, pencil has {self.n_vars} variables")
        return [blk(z) for blk in self.blocks]

    def sign_mask(self, sign: Sign) -> np.ndarray:
        return np.array([v.sign is sign for v in self.variables], dtype=bool)

    def index(self, name: str) -> int:
        for v in self.variables:
            if v.name == name:
                return v.index
        raise KeyError(name)


class PencilBuilder:
    """Accumulates variables and symmetric block entries, then freezes to an AffinePencil."""

    def __init__(self):
        self._vars: list[Variable] = []
        self._blocks: list[tuple[str, np.ndarray, dict[int, np.ndarray]]] = []

    def variable(self, name: str, shape=(), sign: Sign = Sign.FREE) -> np.ndarray | int:
        """Register a scalar or an array of scalars; returns their indices."""
        count = int(np.prod(shape, dtype=int))
        start = len(self._vars)
        for k in range(count):
            sub = np.unravel_index(k, shape) if shape else ()
            label = name + ("[" + ",".join(map(str, sub)) + "]" if shape else "")
            self._vars.append(Variable(label, start + k, sign))
        idx = np.arange(start, start + count).reshape(shape)
        return int(idx) if not shape else idx

    def block(self, dim: int, label: str = "") -> int:
        self._blocks.append((label, np.zeros((dim, dim)), {}))
        return len(self._blocks) - 1

    @staticmethod
    def _place(target, rows, cols, M):
        M = np.broadcast_to(np.asarray(M, dtype=float), (rows.stop - rows.start, cols.stop - cols.start))
        if rows == cols:
            target[rows, cols] += 0.5 * (M + M.T)
        else:
            target[rows, cols] += M
            target[cols, rows] += M.T

    def const(self, blk: int, rows: slice, cols: slice, M) -> None:
        self._place(self._blocks[blk][1], rows, cols, M)

    def term(self, blk: int, var: int, rows: slice, cols: slice, M) -> None:
        coeffs = self._blocks[blk][2]
        dim = self._blocks[blk][1].shape[0]
        target = coeffs.setdefault(int(var), np.zeros((dim, dim)))
        self._place(target, rows, cols, M)

    def build(self) -> AffinePencil:
        m = len(self._vars)
        blocks = []
        for label, F0, coeffs in self._blocks:
            F = np.zeros((m,) + F0.shape)
            for k, Fk in coeffs.items():
                F[k] = Fk
            blocks.append(Block(F0, F, label))
        return AffinePencil(tuple(blocks), tuple(self._vars))


# -- verification -------------------------------------------------------------

def _quadratic_terms(tf_rows, x_cols, inE: Ellipsoid, outE: Ellipsoid):
    """Constant and per-multiplier matrices on ``[x; h; 1]`` for the three QCs.

    ``tf_rows = (V, bv, Y, by)`` describe ``v = V [x; h] + bv`` (activation
    inputs) and ``y = Y [x; h] + by`` (network output) in terms of the stacked
    coordinates; ``h`` are the hidden coordinates the sector QC acts on.
    Returns ``(MX, MY, rows_v)`` where ``MX`` is the input QC at multiplier 1 and
    ``MY`` the output specification term.
    """
    V, bv, Y, by = tf_rows
    n_x = x_cols
    dim = V.shape[1] + 1
    EX = np.zeros((n_x + 1, dim))
    EX[:n_x, :n_x] = np.eye(n_x)
    EX[n_x, -1] = 1.0
    MX = EX.T @ input_qc(inE, 1.0) @ EX
    n_y = Y.shape[0]
    G = np.zeros((n_x + n_y + 1, dim))
    G[:n_x, :n_x] = np.eye(n_x)
    G[n_x:n_x + n_y, :-1] = Y
    G[n_x:n_x + n_y, -1] = by
    G[-1, -1] = 1.0
    MY = G.T @ output_spec(outE, n_x) @ G
    Fv = np.zeros((V.shape[0], dim))
    Fv[:, :-1] = V
    Fv[:, -1] = bv
    return MX, MY, Fv


def _check_pair(net_nx, net_ny, inE, outE):
    if inE.dim != net_nx:
        raise ValueError(f"input ellipsoid has dimension {inE.dim}, network input is {net_nx}")
    if outE.dim != net_ny:
        raise ValueError(f"output ellipsoid has dimension {outE.dim}, network output is {net_ny}")


def build_verification(net: Network, inE: Ellipsoid, outE: Ellipsoid,
                       sec: SectorBounds) -> AffinePencil:
    """Fixed two-layer network: ``-(M_X(lam) + M_Y + M_Psi(mu)) >= 0`` on ``[x; x1; 1]``.

    A skip term ``D x`` (residual networks) enters the output row next to ``W^1``.
    """
    if net.depth != 1:
        raise ValueError("build_verification handles networks with one hidden layer")
    _check_pair(net.n_x, net.n_y, inE, outE)
    (W0, b0), (W1, b1) = net.layers
    n_x, n1 = net.n_x, W0.shape[0]
    if sec.size != n1:
        raise ValueError(f"sector has {sec.size} neurons, hidden layer has {n1}")
    V = np.hstack([W0, np.zeros((n1, n1))])
    D = np.zeros((net.n_y, n_x)) if net.skip is None else net.skip
    Y = np.hstack([D, W1])
    MX, MY, Fv = _quadratic_terms((V, b0, Y, b1), n_x, inE, outE)
    dim = n_x + n1 + 1
    # second factor of M_Psi: [v; x1; 1] from [x; x1; 1]
    F = np.zeros((2 * n1 + 1, dim))
    F[:n1] = Fv
    F[n1:2 * n1, n_x:n_x + n1] = np.eye(n1)
    F[-1, -1] = 1.0

    pb = PencilBuilder()
    lam = pb.variable("lambda", sign=Sign.NONNEG)
    mu = pb.variable("mu", (n1,), sign=Sign.NONNEG)
    blk = pb.block(dim, "fixed_net")
    full = slice(0, dim)
    pb.const(blk, full, full, -MY)
    pb.term(blk, lam, full, full, -MX)
    a, b = sec.alpha, sec.beta
    for i in range(n1):
        Q = np.zeros((2 * n1 + 1, 2 * n1 + 1))
        Q[i, i] = -2.0 * a[i] * b[i]
        Q[i, n1 + i] = Q[n1 + i, i] = a[i] + b[i]
        Q[n1 + i, n1 + i] = -2.0
        pb.term(blk, mu[i], full, full, -(F.T @ Q @ F))
    return pb.build()


def transformed_pencil(tf: TransformedForm, inE: Ellipsoid, outE: Ellipsoid,
                       label: str = "transformed") -> AffinePencil:
    """``-(Mt_X(lam) + Mt_Y + Mt_Psi(mu)) >= 0`` on ``[x; xt; 1]`` with ``Q = diag(M, -M, 0)``."""
    _check_pair(tf.n_x, tf.n_y, inE, outE)
    n_x, n_phi = tf.n_x, tf.n_phi
    V = np.hstack([tf.N_vx, tf.N_vx1])
    Y = np.hstack([tf.N_psix, tf.N_psix1])
    MX, MY, Fv = _quadratic_terms((V, tf.b0, Y, tf.b1), n_x, inE, outE)
    dim = n_x + n_phi + 1
    pb = PencilBuilder()
    lam = pb.variable("lambda", sign=Sign.NONNEG)
    mu = pb.variable("mu", (n_phi,), sign=Sign.NONNEG)
    blk = pb.block(dim, label)
    full = slice(0, dim)
    pb.const(blk, full, full, -MY)
    pb.term(blk, lam, full, full, -MX)
    for i in range(n_phi):
        # mu_i (v_i^2 - xt_i^2)
        Mi = np.outer(Fv[i], Fv[i])
        Mi[n_x + i, n_x + i] -= 1.0
        pb.term(blk, mu[i], full, full, -Mi)
    return pb.build()


def build_verification_multilayer(net: Network, inE: Ellipsoid, outE: Ellipsoid,
                                  sectors) -> AffinePencil:
    """Multi-layer condition after loop-transforming every hidden layer.

    ``sectors`` is one SectorBounds over all hidden neurons or a per-layer list.
    """
    if not isinstance(sectors, SectorBounds):
        sectors = SectorBounds.concat(sectors)
    tf = transform(isolate(net), sectors)
    blocks = multilayer_blocks(net)
    # transformed pre-activations act on the same stacked state as blocks.A
    assert blocks.A.shape == (tf.n_phi, tf.n_x + tf.n_phi)
    return transformed_pencil(tf, inE, outE)


# -- learning -----------------------------------------------------------------

@dataclass(frozen=True)
class LearningVariables:
    Q1: np.ndarray              # diagonal, positive
    lambdas: np.ndarray         # one per specification pair
    L1: np.ndarray              # (n1, n1), structurally zero for two-layer nets
    L2: np.ndarray              # (n_y, n1)
    N_vx: np.ndarray            # (n1, n_x)
    N_psix: np.ndarray          # (n_y, n_x), zero in strict mode
    b0: np.ndarray
    b1: np.ndarray

    @property
    def M(self) -> np.ndarray:
        return np.diag(1.0 / np.diag(self.Q1))

    def transformed(self, sec: SectorBounds) -> TransformedForm:
        M = self.M
        return TransformedForm(self.N_vx, self.L1 @ M, self.N_psix, self.L2 @ M,
                               self.b0, self.b1, sec)


@dataclass(frozen=True)
class LearningLayout:
    """Index bookkeeping mapping a solution vector back to named learning variables."""

    shape: tuple[int, int, int]
    mode: RecoveryMode
    sector: SectorBounds
    q: np.ndarray
    lam: np.ndarray
    L2: np.ndarray
    N_vx: np.ndarray
    N_psix: np.ndarray | None
    b0: np.ndarray
    b1: np.ndarray

    def unpack(self, z) -> LearningVariables:
        z = np.asarray(z, dtype=float)
        n_x, n1, n_y = self.shape
        return LearningVariables(
            Q1=np.diag(z[self.q]),
            lambdas=z[self.lam],
            L1=np.zeros((n1, n1)),
            L2=z[self.L2],
            N_vx=z[self.N_vx],
            N_psix=np.zeros((n_y, n_x)) if self.N_psix is None else z[self.N_psix],
            b0=z[self.b0],
            b1=z[self.b1],
        )


def build_learning(shape, pairs, sec: SectorBounds,
                   mode: RecoveryMode | str = RecoveryMode.STRICT):
    """Convex learning condition, one PSD block per (input, output) pair.

    Block rows are ``[x; xt; 1; v; y]`` with sizes ``n_x, n1, 1, n1, n_y``.
    ``Q1 = M^{-1}``, the network variables and biases are shared by all
    blocks; each pair has its own input multiplier.  ``L1`` is pinned to zero
    (two-layer nets have no hidden-to-hidden loop) and so is ``Nt_psix`` in
    strict mode.
    """
    n_x, n1, n_y = (int(s) for s in shape)
    mode = RecoveryMode(mode)
    pairs = list(pairs)
    if not pairs:
        raise ValueError("at least one (input, output) pair is required")
    if sec.size != n1:
        raise ValueError(f"sector has {sec.size} neurons, hidden layer has {n1}")
    if mode is RecoveryMode.STRICT and not sec.is_symmetric:
        raise ValueError("strict mode needs a symmetric sector (alpha = -beta)")
    for inE, outE in pairs:
        _check_pair(n_x, n_y, inE, outE)
        inE._pd_shape()

    pb = PencilBuilder()
    q = pb.variable("q", (n1,), Sign.POSITIVE)
    lam = pb.variable("lambda", (len(pairs),), Sign.NONNEG)
    L2 = pb.variable("L2", (n_y, n1))
    Nvx = pb.variable("Nvx", (n1, n_x))
    Npsix = pb.variable("Npsix", (n_y, n_x)) if mode is RecoveryMode.RESIDUAL else None
    b0 = pb.variable("b0", (n1,))
    b1 = pb.variable("b1", (n_y,))

    X = slice(0, n_x)
    H = slice(n_x, n_x + n1)
    T = slice(n_x + n1, n_x + n1 + 1)
    V = slice(T.stop, T.stop + n1)
    Yr = slice(V.stop, V.stop + n_y)
    dim = Yr.stop

    for j, (inE, outE) in enumerate(pairs):
        A, b = inE.shape, inE.offset
        C, d = outE.shape, outE.offset
        blk = pb.block(dim, f"pair{j}")
        pb.term(blk, lam[j], X, X, A.T @ A)
        pb.term(blk, lam[j], X, T, (A.T @ b)[:, None])
        pb.term(blk, lam[j], T, T, [[b @ b - 1.0]])
        pb.const(blk, T, T, [[1.0]])
        pb.const(blk, Yr, Yr, np.eye(n_y))
        pb.const(blk, Yr, T, d[:, None])
        for i in range(n1):
            Eii = np.zeros((n1, n1))
            Eii[i, i] = 1.0
            pb.term(blk, q[i], H, H, Eii)
            pb.term(blk, q[i], V, V, Eii)
            pb.term(blk, b0[i], V, T, Eii[:, [i]])
            for c in range(n_x):
                E = np.zeros((n1, n_x))
                E[i, c] = 1.0
                pb.term(blk, Nvx[i, c], V, X, E)
        for r in range(n_y):
            pb.term(blk, b1[r], Yr, T, C[:, [r]])
            for i in range(n1):
                E = np.zeros((n_y, n1))
                E[:, i] = C[:, r]
                pb.term(blk, L2[r, i], Yr, H, E)
            if Npsix is not None:
                for c in range(n_x):
                    E = np.zeros((n_y, n_x))
                    E[:, c] = C[:, r]
                    pb.term(blk, Npsix[r, c], Yr, X, E)

    layout = LearningLayout((n_x, n1, n_y), mode, sec, q, lam, L2, Nvx, Npsix, b0, b1)
    return pb.build(), layout


def pre_schur_matrix(lv: LearningVariables, j: int, pair) -> np.ndarray:
    """``Mt_X + Mt_Psi + Mt_Y`` on ``[x; xt; 1]`` rebuilt from a learning solution."""
    if np.any(np.diag(lv.Q1) <= 0):
        raise ValueError("Q1 must be positive definite to recover M = Q1^{-1}")
    inE, outE = pair
    M = lv.M
    n1 = M.shape[0]
    n_x = lv.N_vx.shape[1]
    V = np.hstack([lv.N_vx, lv.L1 @ M])
    Y = np.hstack([lv.N_psix, lv.L2 @ M])
    MX, MY, Fv = _quadratic_terms((V, lv.b0, Y, lv.b1), n_x, inE, outE)
    dim = Fv.shape[1]
    F = np.zeros((2 * n1 + 1, dim))
    F[:n1] = Fv
    F[n1:2 * n1, n_x:n_x + n1] = np.eye(n1)
    F[-1, -1] = 1.0
    Q = np.zeros((2 * n1 + 1, 2 * n1 + 1))
    Q[:n1, :n1] = M
    Q[n1:2 * n1, n1:2 * n1] = -M
    out = lv.lambdas[j] * MX + F.T @ Q @ F + MY
    return 0.5 * (out + out.T)


def schur_check(lv: LearningVariables, j: int, pair) -> float:
    """Largest eigenvalue of the pre-Schur condition; ``<= 0`` certifies pair ``j``."""
    return float(np.linalg.eigvalsh(pre_schur_matrix(lv, j, pair))[-1])


# -- SDPA sparse format ---------------------------------------------------------

def _fmt(x: float) -> str:
    return repr(float(x))


def export_sdpa(pencil: AffinePencil) -> str:
    """SDPA ``.dat-s`` text for ``sum_i z_i F_i - (-F0) >= 0``.

    Sign constraints go to a trailing diagonal (LP) block.  Variable names and
    sign kinds are kept in leading ``*`` comment lines so :func:`parse_sdpa`
    can rebuild the registry.
    """
    m = pencil.n_vars
    constrained = [v.index for v in pencil.variables if v.sign is not Sign.FREE]
    dims = pencil.dims + ([-len(constrained)] if constrained else [])
    lines = ["* certnn affine pencil"]
    lines += [f"* var {v.index + 1} {v.sign.value} {v.name}" for v in pencil.variables]
    lines.append(str(m))
    lines.append(str(len(dims)))
    lines.append(" ".join(str(d) for d in dims))
    lines.append(" ".join(["0"] * m) if m else "")
    for k, blk in enumerate(pencil.blocks, start=1):
        mats = [-blk.F0] + list(blk.F)
        for matno, Mk in enumerate(mats):
            ii, jj = np.nonzero(np.triu(Mk))
            for i, j in zip(ii, jj):
                lines.append(f"{matno} {k} {i + 1} {j + 1} {_fmt(Mk[i, j])}")
    if constrained:
        lp = len(pencil.blocks) + 1
        for pos, idx in enumerate(constrained, start=1):
            lines.append(f"{idx + 1} {lp} {pos} {pos} 1.0")
    return "\n".join(lines) + "\n"


def parse_sdpa(text: str) -> AffinePencil:
    """Inverse of :func:`export_sdpa`; plain SDPA files get generic names and free variables."""
    names: dict[int, tuple[str, Sign]] = {}
    body = []
    for raw in text.splitlines():
        line = raw.strip()
        if not line:
            continue
        if line[0] in '*"':
            parts = line[1:].split(None, 3)
            if len(parts) == 4 and parts[0] == "var":
                names[int(parts[1]) - 1] = (parts[3], Sign(parts[2]))
            continue
        body.append(line)
    tokens = iter(body)
    m = int(next(tokens).split()[0])
    nblocks = int(next(tokens).split()[0])
    dims = [int(t) for t in next(tokens).replace(",", " ").replace("{", " ")
            .replace("}", " ").replace("(", " ").replace(")", " ").split()][:nblocks]
    if m:
        next(tokens)  # objective vector
    mats = [np.zeros((m + 1, abs(d), abs(d))) for d in dims]
    for line in tokens:
        matno, blkno, i, j, val = line.split()
        M = mats[int(blkno) - 1]
        i, j = int(i) - 1, int(j) - 1
        M[int(matno), i, j] = float(val)
        M[int(matno), j, i] = float(val)
    lp = [k for k, d in enumerate(dims) if d < 0]
    signs = {}
    for k in lp:
        for var in range(m):
            if np.any(mats[k][var + 1] != 0):
                signs[var] = Sign.NONNEG
    variables = []
    for k in range(m):
        name, sign = names.get(k, (f"z{k + 1}", signs.get(k, Sign.FREE)))
        variables.append(Variable(name, k, sign))
    blocks = tuple(Block(-mats[k][0], mats[k][1:].copy(), f"block{k + 1}")
                   for k, d in enumerate(dims) if d > 0)
    return AffinePencil(blocks, tuple(variables))
