"""Feed-forward networks and the block matrices used by the LMI constructions."""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class Activation(enum.Enum):
    TANH = "tanh"
    RELU = "relu"
    IDENTITY = "identity"

    def __call__(self, v):
        if self is Activation.TANH:
            return np.tanh(v)
        if self is Activation.RELU:
            return np.maximum(v, 0.0)
        return np.asarray(v, dtype=float).copy()

    @classmethod
    def parse(cls, name: str | Activation) -> Activation:
        if isinstance(name, Activation):
            return name
        try:
            return cls(str(name).lower())
        except ValueError:
            raise ValueError(
                f"unsupported activation {name!r}; expected one of "
                f"{[a.value for a in cls]}"
            ) from None


@dataclass(frozen=True)
class Network:
    """Network ``W^l phi(... phi(W^0 x + b^0) ...) + b^l (+ D x)``.

    ``layers`` holds ``(W^k, b^k)`` for ``k = 0..l``; the activation is applied
    after every layer except the last.  ``skip`` is the optional affine bypass
    ``D`` produced by residual-mode recovery.
    """

    layers: tuple[tuple[np.ndarray, np.ndarray], ...]
    activation: Activation = Activation.TANH
    skip: np.ndarray | None = None

    def __post_init__(self):
        if len(self.layers) < 1:
            raise ValueError("network needs at least one (output) layer")
        layers = []
        for k, (W, b) in enumerate(self.layers):
            W = np.array(W, dtype=float, ndmin=2)
            b = np.array(b, dtype=float).reshape(-1)
            if W.ndim != 2 or W.shape[0] != b.shape[0]:
                raise ValueError(f"layer {k}: W is {W.shape}, b has length {b.shape[0]}")
            if layers and W.shape[1] != layers[-1][0].shape[0]:
                raise ValueError(
                    f"layer {k}: expects {W.shape[1]} inputs but layer {k - 1} "
                    f"produces {layers[-1][0].shape[0]}"
                )
            W.setflags(write=False)
            b.setflags(write=False)
            layers.append((W, b))
        object.__setattr__(self, "layers", tuple(layers))
        object.__setattr__(self, "activation", Activation.parse(self.activation))
        if self.skip is not None:
            D = np.array(self.skip, dtype=float, ndmin=2)
            if D.shape != (self.n_y, self.n_x):
                raise ValueError(f"skip must be {(self.n_y, self.n_x)}, got {D.shape}")
            D.setflags(write=False)
            object.__setattr__(self, "skip", D)

    @property
    def n_x(self) -> int:
        return self.layers[0][0].shape[1]

    @property
    def n_y(self) -> int:
        return self.layers[-1][0].shape[0]

    @property
    def depth(self) -> int:
        """Number of hidden layers ``l``."""
        return len(self.layers) - 1

    @property
    def hidden_sizes(self) -> list[int]:
        return [W.shape[0] for W, _ in self.layers[:-1]]

    @property
    def weights(self) -> list[np.ndarray]:
        return [W for W, _ in self.layers]

    @property
    def biases(self) -> list[np.ndarray]:
        return [b for _, b in self.layers]

    def __call__(self, x):
        return forward(self, x)

    # -- serialization -------------------------------------------------

    def to_dict(self) -> dict:
        out = {
            "activation": self.activation.value,
            "layers": [{"W": W.tolist(), "b": b.tolist()} for W, b in self.layers],
        }
        if self.skip is not None:
            out["skip"] = self.skip.tolist()
        return out

    @classmethod
    def from_dict(cls, data: dict) -> Network:
        layers = tuple((np.array(L["W"], dtype=float), np.array(L["b"], dtype=float))
                       for L in data["layers"])
        return cls(layers, Activation.parse(data.get("activation", "tanh")), data.get("skip"))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path) -> Network:
        return cls.from_dict(json.loads(Path(path).read_text()))


def forward(net: Network, x) -> np.ndarray:
    """Evaluate the network on a single input or on a batch of row vectors."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != net.n_x:
        raise ValueError(f"input has length {x.shape[-1]}, network expects {net.n_x}")
    h = x
    for W, b in net.layers[:-1]:
        h = net.activation(h @ W.T + b)
    W, b = net.layers[-1]
    y = h @ W.T + b
    if net.skip is not None:
        y = y + x @ net.skip.T
    return y


@dataclass(frozen=True)
class IsolatedForm:
    """``[v_phi; y] = N [x; x_phi] + [b_phi; b_out]`` with ``x_phi = phi(v_phi)``."""

    N: np.ndarray
    b_phi: np.ndarray
    b_out: np.ndarray
    n_x: int
    n_hidden: tuple[int, ...]
    n_y: int

    @property
    def n_phi(self) -> int:
        return sum(self.n_hidden)

    @property
    def N_vx(self):
        return self.N[: self.n_phi, : self.n_x]

    @property
    def N_vx1(self):
        return self.N[: self.n_phi, self.n_x:]

    @property
    def N_psix(self):
        return self.N[self.n_phi:, : self.n_x]

    @property
    def N_psix1(self):
        return self.N[self.n_phi:, self.n_x:]


def isolate(net: Network) -> IsolatedForm:
    if net.skip is not None:
        raise ValueError("isolate() supports pure feed-forward networks only (skip present)")
    if net.depth < 1:
        raise ValueError("isolate() needs at least one hidden layer")
    n_x, n_y = net.n_x, net.n_y
    sizes = net.hidden_sizes
    n_phi = sum(sizes)
    offs = np.concatenate([[0], np.cumsum(sizes)])
    N = np.zeros((n_phi + n_y, n_x + n_phi))
    W = net.weights
    N[: sizes[0], :n_x] = W[0]
    # v^k depends on x^k, which sits at x_phi block k-1
    for k in range(1, net.depth):
        N[offs[k]:offs[k + 1], n_x + offs[k - 1]: n_x + offs[k]] = W[k]
    N[n_phi:, n_x + offs[-2]:] = W[-1]
    b_phi = np.concatenate(net.biases[:-1])
    return IsolatedForm(N, b_phi, net.biases[-1].copy(), n_x, tuple(sizes), n_y)


def eval_isolated(iso: IsolatedForm, activation: Activation, x) -> np.ndarray:
    """Solve the implicit equations layer by layer (N_vx1 is strictly block-lower)."""
    x = np.asarray(x, dtype=float)
    act = Activation.parse(activation)
    offs = np.concatenate([[0], np.cumsum(iso.n_hidden)])
    x_phi = np.zeros(x.shape[:-1] + (iso.n_phi,))
    for k in range(len(iso.n_hidden)):
        sl = slice(offs[k], offs[k + 1])
        v_k = x @ iso.N_vx[sl].T + x_phi @ iso.N_vx1[sl].T + iso.b_phi[sl]
        x_phi[..., sl] = act(v_k)
    return x @ iso.N_psix.T + x_phi @ iso.N_psix1.T + iso.b_out


@dataclass(frozen=True)
class MultiLayerBlocks:
    """Stacked-state matrices for ``x = [x^0; ...; x^l]``.

    ``A x + b`` gives the stacked pre-activations, ``B x`` the stacked hidden
    states, and ``E[k] x = x^k``.
    """

    A: np.ndarray
    B: np.ndarray
    b: np.ndarray
    E: list[np.ndarray] = field(default_factory=list)


def multilayer_blocks(net: Network) -> MultiLayerBlocks:
    if net.skip is not None or net.depth < 1:
        raise ValueError("multilayer_blocks() needs a pure feed-forward net with l >= 1")
    sizes = [net.n_x] + net.hidden_sizes
    offs = np.concatenate([[0], np.cumsum(sizes)])
    total = offs[-1]
    n_phi = total - net.n_x
    A = np.zeros((n_phi, total))
    for k, W in enumerate(net.weights[:-1]):
        A[offs[k + 1] - net.n_x: offs[k + 2] - net.n_x, offs[k]:offs[k + 1]] = W
    B = np.zeros((n_phi, total))
    B[:, net.n_x:] = np.eye(n_phi)
    E = []
    for k in range(len(sizes)):
        Ek = np.zeros((sizes[k], total))
        Ek[:, offs[k]:offs[k + 1]] = np.eye(sizes[k])
        E.append(Ek)
    return MultiLayerBlocks(A, B, np.concatenate(net.biases[:-1]), E)
