"""Ellipsoids, their quadratic constraints, interval bounds and activation sectors."""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .model import Activation, Network

MEMBERSHIP_TOL = 1e-12
SECTOR_RELAX = 1e-9


class Role(enum.Enum):
    INPUT = "input"
    OUTPUT = "output"


@dataclass(frozen=True)
class Ellipsoid:
    """The set ``{p : ||shape @ p + offset||_2 <= 1}``."""

    shape: np.ndarray
    offset: np.ndarray
    role: Role = Role.INPUT

    def __post_init__(self):
        S = np.array(self.shape, dtype=float, ndmin=2)
        c = np.array(self.offset, dtype=float).reshape(-1)
        if S.shape != (c.size, c.size):
            raise ValueError(f"shape {S.shape} does not match offset of length {c.size}")
        if not np.allclose(S, S.T, rtol=0, atol=1e-12 * max(1.0, np.abs(S).max())):
            raise ValueError("ellipsoid shape matrix must be symmetric")
        S.setflags(write=False)
        c.setflags(write=False)
        object.__setattr__(self, "shape", S)
        object.__setattr__(self, "offset", c)
        object.__setattr__(self, "role", Role(self.role))

    @property
    def dim(self) -> int:
        return self.offset.size

    @property
    def center(self) -> np.ndarray:
        return -np.linalg.solve(self._pd_shape(), self.offset)

    def _pd_shape(self) -> np.ndarray:
        # Cholesky doubles as the positive-definiteness test
        try:
            np.linalg.cholesky(self.shape)
        except np.linalg.LinAlgError:
            raise ValueError("ellipsoid shape matrix must be positive definite") from None
        return self.shape

    @classmethod
    def from_center(cls, center, radii, angle: float = 0.0, role=Role.INPUT) -> Ellipsoid:
        """Planar or axis-aligned ellipsoid from its center, semi-axes and rotation."""
        center = np.asarray(center, dtype=float)
        radii = np.asarray(radii, dtype=float)
        R = np.eye(center.size)
        if angle:
            if center.size != 2:
                raise ValueError("rotation angle only supported in the plane")
            c, s = np.cos(angle), np.sin(angle)
            R = np.array([[c, -s], [s, c]])
        shape = R @ np.diag(1.0 / radii) @ R.T
        shape = 0.5 * (shape + shape.T)
        return cls(shape, -shape @ center, role)

    def to_dict(self) -> dict:
        if self.role is Role.INPUT:
            return {"A": self.shape.tolist(), "b": self.offset.tolist()}
        return {"C": self.shape.tolist(), "d": self.offset.tolist()}

    @classmethod
    def from_dict(cls, data: dict, role=Role.INPUT) -> Ellipsoid:
        role = Role(role)
        keys = ("A", "b") if role is Role.INPUT else ("C", "d")
        try:
            return cls(data[keys[0]], data[keys[1]], role)
        except KeyError as exc:
            raise ValueError(f"{role.value} ellipsoid needs keys {keys}, missing {exc}") from None


def contains(E: Ellipsoid, p) -> np.ndarray | bool:
    """Membership with the fixed tolerance ``1e-12``; accepts a batch of points."""
    p = np.asarray(p, dtype=float)
    r = np.linalg.norm(p @ E.shape.T + E.offset, axis=-1)
    out = r <= 1.0 + MEMBERSHIP_TOL
    return bool(out) if out.ndim == 0 else out


def input_qc(E: Ellipsoid, lam: float = 1.0) -> np.ndarray:
    """``P`` with ``[x;1]' P [x;1] = lam (1 - ||Ax + b||^2) >= 0`` on the set."""
    if lam < 0:
        raise ValueError(f"input QC multiplier must be nonnegative, got {lam}")
    A, b = E.shape, E.offset
    n = E.dim
    P = np.empty((n + 1, n + 1))
    P[:n, :n] = -A.T @ A
    P[:n, n] = -A.T @ b
    P[n, :n] = -b @ A
    P[n, n] = 1.0 - b @ b
    return lam * P


def output_spec(E: Ellipsoid, n_x: int) -> np.ndarray:
    """``S`` on ``[x; y; 1]`` whose form is ``||Cy + d||^2 - 1``."""
    C, d = E.shape, E.offset
    n_y = E.dim
    S = np.zeros((n_x + n_y + 1, n_x + n_y + 1))
    y = slice(n_x, n_x + n_y)
    S[y, y] = C.T @ C
    S[y, -1] = C.T @ d
    S[-1, y] = d @ C
    S[-1, -1] = d @ d - 1.0
    return S


def sample_unit_ball(n: int, dim: int, rng) -> np.ndarray:
    rng = np.random.default_rng(rng)
    g = rng.standard_normal((n, dim))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    r = rng.random(n) ** (1.0 / dim)
    return g * r[:, None]


def sample(E: Ellipsoid, n: int | None = None, rng=None) -> np.ndarray:
    """Uniform samples from the ellipsoid as ``A^{-1}(u - b)``, ``u`` uniform in the unit ball.

    ``rng`` is a seed or a ``numpy.random.Generator``.  With ``n=None`` a single
    vector is returned.
    """
    A = E._pd_shape()
    u = sample_unit_ball(1 if n is None else n, E.dim, rng)
    x = np.linalg.solve(A, (u - E.offset).T).T
    return x[0] if n is None else x


@dataclass(frozen=True)
class IntervalBounds:
    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lo, dtype=float).reshape(-1)
        hi = np.asarray(self.hi, dtype=float).reshape(-1)
        if lo.shape != hi.shape:
            raise ValueError("lo and hi must have the same length")
        if np.any(lo > hi):
            raise ValueError("interval bounds need lo <= hi")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    def contains(self, v, tol: float = 0.0) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        return np.all((v >= self.lo - tol) & (v <= self.hi + tol), axis=-1)


def ellipsoid_box(E: Ellipsoid) -> IntervalBounds:
    """Tightest axis-aligned box: center ``-A^{-1} b``, half-widths ``||row_i(A^{-1})||``."""
    Ainv = np.linalg.inv(E._pd_shape())
    c = -Ainv @ E.offset
    r = np.linalg.norm(Ainv, axis=1)
    return IntervalBounds(c - r, c + r)


def ibp(net: Network, box: IntervalBounds) -> list[IntervalBounds]:
    """Pre-activation bounds for every hidden layer ``v^0 .. v^{l-1}``."""
    if box.lo.size != net.n_x:
        raise ValueError(f"box has dimension {box.lo.size}, network expects {net.n_x}")
    if not (np.all(np.isfinite(box.lo)) and np.all(np.isfinite(box.hi))):
        raise ValueError("interval propagation needs a finite input box")
    lo, hi = box.lo, box.hi
    out = []
    for W, b in net.layers[:-1]:
        Wp, Wn = np.maximum(W, 0.0), np.minimum(W, 0.0)
        v_lo = Wp @ lo + Wn @ hi + b
        v_hi = Wp @ hi + Wn @ lo + b
        out.append(IntervalBounds(v_lo, v_hi))
        lo, hi = net.activation(v_lo), net.activation(v_hi)
    return out


@dataclass(frozen=True)
class SectorBounds:
    """Per-neuron slopes with ``alpha * v <= psi(v) <= beta * v`` (sign-adjusted)."""

    alpha: np.ndarray
    beta: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.alpha, dtype=float).reshape(-1)
        b = np.asarray(self.beta, dtype=float).reshape(-1)
        if a.shape != b.shape:
            raise ValueError("alpha and beta must have the same length")
        if np.any(a > b):
            raise ValueError("sector bounds need alpha <= beta")
        object.__setattr__(self, "alpha", a)
        object.__setattr__(self, "beta", b)

    @property
    def size(self) -> int:
        return self.alpha.size

    @property
    def is_symmetric(self) -> bool:
        return bool(np.allclose(self.alpha, -self.beta, rtol=0, atol=1e-12))

    @classmethod
    def uniform(cls, alpha: float, beta: float, n: int) -> SectorBounds:
        return cls(np.full(n, float(alpha)), np.full(n, float(beta)))

    @classmethod
    def concat(cls, sectors) -> SectorBounds:
        sectors = list(sectors)
        return cls(np.concatenate([s.alpha for s in sectors]),
                   np.concatenate([s.beta for s in sectors]))


def global_sector(activation, n: int, symmetric: bool = False) -> SectorBounds:
    """Sector valid on all of R.

    ``symmetric=True`` gives ``[-1, 1]`` (every supported activation has
    ``|psi(v)| <= |v|``); otherwise tanh/ReLU get ``[0, 1]`` and identity ``[1, 1]``.
    """
    act = Activation.parse(activation)
    if symmetric:
        return SectorBounds.uniform(-1.0, 1.0, n)
    if act is Activation.IDENTITY:
        return SectorBounds.uniform(1.0, 1.0, n)
    return SectorBounds.uniform(0.0, 1.0, n)


def _tanh_ratio(v):
    v = np.asarray(v, dtype=float)
    out = np.ones_like(v)
    nz = v != 0
    out[nz] = np.tanh(v[nz]) / v[nz]
    return out


def local_sector(activation, bounds: IntervalBounds) -> SectorBounds:
    """Tightest sector of ``psi(v)/v`` over each interval, relaxed outward by 1e-9."""
    act = Activation.parse(activation)
    lo, hi = bounds.lo, bounds.hi
    if act is Activation.TANH:
        # tanh(v)/v is even and decreasing in |v|
        far = np.maximum(np.abs(lo), np.abs(hi))
        near = np.where((lo <= 0) & (hi >= 0), 0.0, np.minimum(np.abs(lo), np.abs(hi)))
        alpha, beta = _tanh_ratio(far), _tanh_ratio(near)
    elif act is Activation.RELU:
        alpha = np.where((lo >= 0) & (hi > 0), 1.0, 0.0)
        beta = np.where(hi > 0, 1.0, 0.0)
    else:
        alpha = beta = np.ones_like(lo)
    return SectorBounds(alpha - SECTOR_RELAX, beta + SECTOR_RELAX)


def sector_qc(sec: SectorBounds, mu) -> np.ndarray:
    """Matrix on ``[v; psi(v)]`` with nonnegative form whenever every neuron is in its sector."""
    mu = np.asarray(mu, dtype=float).reshape(-1)
    if mu.shape != sec.alpha.shape:
        raise ValueError(f"mu has length {mu.size}, sector has {sec.size}")
    if np.any(mu < 0):
        raise ValueError("sector multipliers must be nonnegative")
    n = sec.size
    Q = np.zeros((2 * n, 2 * n))
    idx = np.arange(n)
    Q[idx, idx] = -2.0 * sec.alpha * sec.beta * mu
    Q[idx, n + idx] = Q[n + idx, idx] = (sec.alpha + sec.beta) * mu
    Q[n + idx, n + idx] = -2.0 * mu
    return Q
