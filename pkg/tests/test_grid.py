import numpy as np
import pytest

from latgas.grid import Grid


def test_shapes_and_spacing():
    g = Grid(1, 65)
    assert g.shape == (65,)
    assert g.h1 == pytest.approx(1 / 64)
    g2 = Grid(2, 17, 8)
    assert g2.shape == (17, 8)
    assert g2.min_spacing == pytest.approx(1 / 16)


def test_weights_integrate_to_volume():
    for g in (Grid(1, 33), Grid(2, 9, 6), Grid(3, 5, 4)):
        assert np.sum(g.weights()) == pytest.approx(1.0, abs=1e-12)


def test_weights_integrate_polynomial_exactly():
    # trapezoid is exact for linear functions along the wall axis
    g = Grid(1, 21)
    u = g.axis(0)
    assert np.sum(g.weights() * (2 * u + 1)) == pytest.approx(2.0, abs=1e-12)


def test_nodes_layout():
    g = Grid(2, 5, 4)
    nodes = g.nodes()
    assert nodes.shape == (5, 4, 2)
    assert nodes[0, 0, 0] == 0.0 and nodes[-1, 0, 0] == 1.0
    assert nodes[0, 1, 1] == pytest.approx(0.25)


def test_transverse_points_and_weights():
    g1 = Grid(1, 9)
    assert g1.transverse_points().shape == (1, 0)
    assert np.sum(g1.transverse_weights()) == 1.0
    g2 = Grid(2, 9, 6)
    assert g2.transverse_points().shape == (6, 1)
    assert np.sum(g2.transverse_weights()) == pytest.approx(1.0)


def test_validation():
    with pytest.raises(ValueError):
        Grid(1, 2)
    with pytest.raises(ValueError):
        Grid(2, 9)  # missing transverse nodes
