import numpy as np
import pytest

from certnn.model import Activation, Network
from certnn.sets import Ellipsoid, Role


def random_net(rng, sizes, activation=Activation.TANH, scale=1.0):
    layers = []
    for n_in, n_out in zip(sizes[:-1], sizes[1:]):
        layers.append((scale * rng.standard_normal((n_out, n_in)),
                       scale * rng.standard_normal(n_out)))
    return Network(tuple(layers), activation)


def random_ellipsoid(rng, dim, role=Role.INPUT, center_scale=1.0, radius=(0.3, 1.0)):
    Q, _ = np.linalg.qr(rng.standard_normal((dim, dim)))
    radii = rng.uniform(*radius, size=dim)
    shape = Q @ np.diag(1.0 / radii) @ Q.T
    shape = 0.5 * (shape + shape.T)
    center = center_scale * rng.standard_normal(dim)
    return Ellipsoid(shape, -shape @ center, role)


def unit_ball(dim, role=Role.INPUT, radius=1.0, center=None):
    c = np.zeros(dim) if center is None else np.asarray(center, dtype=float)
    shape = np.eye(dim) / radius
    return Ellipsoid(shape, -shape @ c, role)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
