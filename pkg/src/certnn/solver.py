"""Strict feasibility of an affine pencil by maximizing its minimum eigenvalue.

The objective ``g(z) = min_blocks lambda_min(F_blk(z))`` is concave and
nonsmooth.  It is maximized by projected supergradient ascent with a
Polyak step towards an adaptive target level, plus an averaged-iterate
refinement.  A supergradient at ``z`` is ``s_i = v' F_i v`` for a unit
eigenvector ``v`` of the smallest eigenvalue.
"""

from __future__ import annotations

import enum
import json
import logging
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .lmi import AffinePencil, Sign

log = logging.getLogger(__name__)

ACTIVE_TOL = 1e-9
POSITIVE_FLOOR = 1e-9


class Verdict(enum.Enum):
    FEASIBLE = "feasible"
    BUDGET_EXHAUSTED = "budget_exhausted"


@dataclass(frozen=True)
class SolveOptions:
    margin_target: float = 1e-6
    radius: float = 1e3
    max_iters: int = 20000
    time_budget: float | None = None    # seconds
    tol_eig: float = 1e-10
    seed: int = 0
    stop_at_target: bool = True         # False: keep maximizing the margin
    stall_iters: int = 40

    def __post_init__(self):
        if not self.margin_target > 0:
            raise ValueError("margin_target must be positive")
        if not self.radius > 0:
            raise ValueError("radius must be positive")
        if self.max_iters < 0:
            raise ValueError("max_iters must be nonnegative")

    @classmethod
    def from_dict(cls, data: dict | None) -> SolveOptions:
        data = dict(data or {})
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown solver options: {sorted(unknown)}")
        return cls(**data)


@dataclass
class Certificate:
    z: np.ndarray
    margin: float
    iterations: int
    verdict: Verdict
    margin_target: float = 1e-6
    log: list[dict] = field(default_factory=list, repr=False)

    @property
    def feasible(self) -> bool:
        return self.verdict is Verdict.FEASIBLE

    def to_dict(self) -> dict:
        return {
            "verdict": self.verdict.value,
            "margin": self.margin,
            "iterations": self.iterations,
            "margin_target": self.margin_target,
            "z": self.z.tolist(),
        }

    def log_lines(self) -> str:
        return "".join(json.dumps(rec) + "\n" for rec in self.log)


def min_eig(M, tol_eig: float = 1e-10) -> tuple[float, np.ndarray]:
    """Smallest eigenvalue and a unit eigenvector of a symmetric matrix."""
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {M.shape}")
    scale = max(1.0, float(np.abs(M).max(initial=0.0)))
    if np.abs(M - M.T).max(initial=0.0) > 1e-12 * scale:
        raise ValueError("min_eig needs a symmetric matrix")
    w, V = scipy.linalg.eigh(M, driver="ev", check_finite=True)
    v = V[:, 0]
    # fix the sign so results are reproducible
    k = np.argmax(np.abs(v))
    if v[k] < 0:
        v = -v
    return float(w[0]), v


def _block_eigs(pencil: AffinePencil, z: np.ndarray):
    return [scipy.linalg.eigh(blk(z), driver="ev") for blk in pencil.blocks]


def margin(pencil: AffinePencil, z) -> float:
    """Minimum eigenvalue across all blocks at ``z``."""
    z = np.asarray(z, dtype=float)
    return min(min_eig(F)[0] for F in pencil.evaluate(z)) if pencil.blocks else np.inf


def _oracle(pencil: AffinePencil, z: np.ndarray):
    """``g(z)``, an aggregated supergradient, and the index of the active block."""
    results = _block_eigs(pencil, z)
    g = min(w[0] for w, _ in results)
    s = np.zeros(pencil.n_vars)
    count = 0
    active = 0
    for k, (blk, (w, V)) in enumerate(zip(pencil.blocks, results)):
        if w[0] == g:
            active = k
        near = np.nonzero(w <= g + ACTIVE_TOL)[0]
        for idx in near:
            v = V[:, idx]
            s += np.einsum("ijk,j,k->i", blk.F, v, v)
            count += 1
    return g, s / max(count, 1), active


class _Projector:
    def __init__(self, pencil: AffinePencil, radius: float):
        self.nonneg = pencil.sign_mask(Sign.NONNEG)
        self.positive = pencil.sign_mask(Sign.POSITIVE)
        self.radius = radius

    def __call__(self, z: np.ndarray) -> np.ndarray:
        z = z.copy()
        z[self.nonneg] = np.maximum(z[self.nonneg], 0.0)
        norm = np.linalg.norm(z)
        if norm > self.radius:
            z *= self.radius / norm
        floor = POSITIVE_FLOOR * max(1.0, float(np.linalg.norm(z)))
        z[self.positive] = np.maximum(z[self.positive], floor)
        return z

    def feasible(self, z: np.ndarray) -> bool:
        floor = POSITIVE_FLOOR * max(1.0, float(np.linalg.norm(z)))
        return bool(np.all(z[self.nonneg] >= 0)
                    and np.all(z[self.positive] >= floor * (1 - 1e-12))
                    and np.linalg.norm(z) <= self.radius * (1 + 1e-12))


def initial_point(pencil: AffinePencil, seed: int | None = 0) -> np.ndarray:
    """Positive variables at 1, the rest at 0, plus a small seeded perturbation."""
    z = np.zeros(pencil.n_vars)
    z[pencil.sign_mask(Sign.POSITIVE)] = 1.0
    if seed is not None:
        z += 1e-3 * np.random.default_rng(seed).standard_normal(pencil.n_vars)
    return z


def solve(pencil: AffinePencil, opts: SolveOptions | None = None, z0=None) -> Certificate:
    opts = opts or SolveOptions()
    proj = _Projector(pencil, opts.radius)
    z = proj(initial_point(pencil, opts.seed) if z0 is None else np.asarray(z0, dtype=float))
    t_start = time.perf_counter()

    g, s, active = _oracle(pencil, z)
    best, z_best = g, z
    delta = max(1.0, abs(g))
    stall = 0
    avg, avg_w = np.zeros_like(z), 0.0
    history = [{"iter": 0, "margin": best, "step": 0.0, "block": active}]
    it = 0
    done = opts.stop_at_target and best >= opts.margin_target
    while not done and it < opts.max_iters:
        if opts.time_budget is not None and time.perf_counter() - t_start > opts.time_budget:
            break
        it += 1
        level = best + delta
        if opts.stop_at_target:
            level = max(level, 2.0 * opts.margin_target)
        ss = float(s @ s)
        if ss == 0.0:
            # flat in every direction: g is constant along the feasible region
            break
        step = (level - g) / ss
        z = proj(z + step * s)
        g, s, active = _oracle(pencil, z)
        avg += z
        avg_w += 1.0
        if g > best:
            best, z_best, stall = g, z, 0
            if g >= level:
                delta *= 1.5
        else:
            stall += 1
        if stall >= opts.stall_iters:
            # refinement: try the averaged iterate, then shrink the target gap
            z_avg = proj(avg / avg_w)
            g_avg, s_avg, a_avg = _oracle(pencil, z_avg)
            if g_avg > best:
                best, z_best = g_avg, z_avg
            delta *= 0.5
            z, g, s, active = z_best, *_oracle(pencil, z_best)
            avg, avg_w, stall = np.zeros_like(z), 0.0, 0
        history.append({"iter": it, "margin": best, "step": step, "block": active})
        if it % 1000 == 0:
            log.debug("iter %d  best margin %.3e  target gap %.2e", it, best, delta)
        if opts.stop_at_target and best >= opts.margin_target:
            done = True
        if delta < 1e-14 * max(1.0, abs(best)):
            break

    final = margin(pencil, z_best)
    verdict = (Verdict.FEASIBLE if final >= opts.margin_target and proj.feasible(z_best)
               else Verdict.BUDGET_EXHAUSTED)
    log.debug("solve finished: %s, margin %.3e after %d iterations", verdict.value, final, it)
    return Certificate(z_best, final, it, verdict, opts.margin_target, history)


def check_certificate(pencil: AffinePencil, cert: Certificate) -> bool:
    """Independent recheck of a certificate using only :func:`min_eig`."""
    z = np.asarray(cert.z, dtype=float)
    if z.shape != (pencil.n_vars,) or not np.all(np.isfinite(z)):
        return False
    if np.any(z[pencil.sign_mask(Sign.NONNEG)] < 0):
        return False
    if np.any(z[pencil.sign_mask(Sign.POSITIVE)] <= 0):
        return False
    return margin(pencil, z) >= cert.margin_target - 1e-9
