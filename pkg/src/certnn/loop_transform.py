"""Loop transformation onto the normalized sector [-1, 1] and its two-layer inverse.

Given a sector ``[A, B]`` for the hidden activations, the hidden states are
rewritten as ``x1 = (B - A)/2 * xt + (B + A)/2 * v`` where the new
nonlinearity ``xt = phit(v)`` lies in ``[-1, 1]``.  Eliminating ``x1`` from the
isolated form gives the transformed matrix ``Nt`` and biases ``bt0, bt1``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .model import Activation, IsolatedForm, Network
from .sets import SectorBounds

COND_LIMIT = 1e12
STRUCT_TOL = 1e-12


class LoopTransformError(ValueError):
    pass


class RecoveryMode(enum.Enum):
    STRICT = "strict"
    RESIDUAL = "residual"


@dataclass(frozen=True)
class TransformedForm:
    N_vx: np.ndarray
    N_vx1: np.ndarray
    N_psix: np.ndarray
    N_psix1: np.ndarray
    b0: np.ndarray
    b1: np.ndarray
    sector: SectorBounds

    @property
    def n_x(self) -> int:
        return self.N_vx.shape[1]

    @property
    def n_phi(self) -> int:
        return self.N_vx.shape[0]

    @property
    def n_y(self) -> int:
        return self.N_psix.shape[0]

    @property
    def N(self) -> np.ndarray:
        return np.block([[self.N_vx, self.N_vx1], [self.N_psix, self.N_psix1]])


def _checked_solve(M: np.ndarray, rhs: np.ndarray, what: str) -> np.ndarray:
    cond = np.linalg.cond(M)
    if not np.isfinite(cond) or cond > COND_LIMIT:
        raise LoopTransformError(f"{what} is singular or ill-conditioned (cond = {cond:.3g})")
    return np.linalg.solve(M, rhs)


def transform(iso: IsolatedForm, sec: SectorBounds) -> TransformedForm:
    if sec.size != iso.n_phi:
        raise ValueError(f"sector has {sec.size} neurons, network has {iso.n_phi}")
    half_diff = 0.5 * (sec.beta - sec.alpha)
    half_sum = 0.5 * (sec.beta + sec.alpha)
    C1 = iso.N_vx1 * half_diff
    C2 = iso.N_vx1 * half_sum
    C3 = iso.N_psix1 * half_diff
    C4 = iso.N_psix1 * half_sum
    I_C2 = np.eye(iso.n_phi) - C2
    # one factorization for all three right-hand sides
    sol = _checked_solve(I_C2, np.column_stack([iso.N_vx, C1, iso.b_phi]), "I - C2")
    G_x, G_1, g_b = sol[:, : iso.n_x], sol[:, iso.n_x: iso.n_x + iso.n_phi], sol[:, -1]
    return TransformedForm(
        N_vx=G_x,
        N_vx1=G_1,
        N_psix=iso.N_psix + C4 @ G_x,
        N_psix1=C3 + C4 @ G_1,
        b0=g_b,
        # C4, not C2: the output picks up (B+A)/2 v^0 through N_psix1
        b1=C4 @ g_b + iso.b_out,
        sector=sec,
    )


def normalized_activation(activation, sec: SectorBounds, v) -> np.ndarray:
    """``phit(v) = 2 (B - A)^{-1} (phi(v) - (A + B)/2 v)``."""
    act = Activation.parse(activation)
    width = sec.beta - sec.alpha
    if np.any(width <= 0):
        raise LoopTransformError("normalized activation needs beta > alpha for every neuron")
    v = np.asarray(v, dtype=float)
    return (2.0 * act(v) - (sec.alpha + sec.beta) * v) / width


def eval_transformed(tf: TransformedForm, activation, x, max_iter: int = 500) -> np.ndarray:
    """Evaluate ``y = Nt_psix x + Nt_psix1 phit(v) + bt1`` with ``v`` from the transformed loop.

    With ``Nt_vx1 = 0`` this is explicit.  Otherwise the loop is resolved by
    fixed-point iteration, which terminates exactly when ``Nt_vx1`` is
    nilpotent (feed-forward nets) and raises if it does not settle.
    """
    x = np.asarray(x, dtype=float)
    base = x @ tf.N_vx.T + tf.b0
    v = base
    xt = normalized_activation(activation, tf.sector, v)
    if np.any(tf.N_vx1 != 0):
        for _ in range(max_iter):
            v_next = base + xt @ tf.N_vx1.T
            done = np.array_equal(v_next, v)
            v = v_next
            xt = normalized_activation(activation, tf.sector, v)
            if done:
                break
        else:
            raise LoopTransformError("implicit loop in v did not converge (non-contractive)")
    return x @ tf.N_psix.T + xt @ tf.N_psix1.T + tf.b1


def inverse_two_layer(tf: TransformedForm, sec: SectorBounds | None = None,
                      mode: RecoveryMode | str = RecoveryMode.STRICT,
                      activation=Activation.TANH) -> Network:
    """Recover a two-layer network from transformed parameters.

    Strict needs a symmetric sector and ``Nt_vx1 = Nt_psix = 0`` and returns a
    pure two-layer net.  Residual needs ``B - A`` nonsingular and returns a
    two-layer net with affine bypass ``D``.
    """
    sec = tf.sector if sec is None else sec
    mode = RecoveryMode(mode)
    if sec.size != tf.n_phi:
        raise ValueError(f"sector has {sec.size} neurons, transformed form has {tf.n_phi}")
    n1 = np.abs(tf.N_vx1).max(initial=0.0)
    if n1 > STRUCT_TOL:
        raise LoopTransformError(f"two-layer recovery needs Nt_vx1 = 0 (max |entry| = {n1:.3g})")
    W0, b0 = tf.N_vx, tf.b0
    if mode is RecoveryMode.STRICT:
        if not sec.is_symmetric:
            raise LoopTransformError(
                "strict recovery needs a symmetric sector (alpha = -beta), max |alpha + beta| = "
                f"{np.abs(sec.alpha + sec.beta).max():.3g}")
        npx = np.abs(tf.N_psix).max(initial=0.0)
        if npx > STRUCT_TOL:
            raise LoopTransformError(f"strict recovery needs Nt_psix = 0 (max |entry| = {npx:.3g})")
        if np.any(sec.beta == 0):
            raise LoopTransformError("strict recovery needs a nonsingular B")
        W1 = tf.N_psix1 / sec.beta
        return Network(((W0, b0), (W1, tf.b1)), activation)
    width = sec.beta - sec.alpha
    if np.any(width == 0):
        raise LoopTransformError("residual recovery needs B - A nonsingular")
    # K = Nt_psix1 (B - A)^{-1} (B + A)
    K = tf.N_psix1 * ((sec.beta + sec.alpha) / width)
    W1 = 2.0 * tf.N_psix1 / width
    D = tf.N_psix - K @ tf.N_vx
    b1 = tf.b1 - K @ tf.b0
    return Network(((W0, b0), (W1, b1)), activation, skip=D)
