import numpy as np
import pytest

from latgas.empirical import (
    EmpiricalMeasure,
    block_average,
    empirical_measure,
    l1_distance,
    pair,
    smooth,
)
from latgas.errors import DomainError
from latgas.grid import Grid
from latgas.lattice import Lattice
from latgas.thermo import conserved_of_state, sample_product_state


class TestEmpiricalMeasure:
    def test_full_configuration_total_mass(self, vs_unit):
        lat = Lattice(4, 1)
        eta = np.ones((3, 2), dtype=np.uint8)
        m = empirical_measure(eta, lat, vs_unit)
        assert m.component_totals[0] == pytest.approx(2 * 3 / 4)
        assert m.component_totals[1] == pytest.approx(0.0)

    def test_empty_configuration(self, vs2):
        lat = Lattice(6, 1)
        m = empirical_measure(np.zeros((5, 2), dtype=np.uint8), lat, vs2)
        assert np.all(m.masses == 0.0)

    def test_pairing_matches_bruteforce(self, vs4, rng):
        lat = Lattice(9, 1)
        eta = sample_product_state([0.2, -0.1], lat, vs4, rng)
        m = empirical_measure(eta, lat, vs4)
        g = lambda u: 1.5 * u[:, 0] - 0.25
        for k in range(2):
            brute = 0.0
            for s in range(lat.n_sites):
                x = lat.coords(s)[0] / lat.N
                brute += (conserved_of_state(eta[s], vs4)[k] / lat.N) * (1.5 * x - 0.25)
            assert pair(m, g, component=k) == pytest.approx(brute, abs=1e-14)

    def test_pair_constants(self, vs2, rng):
        lat = Lattice(8, 1)
        eta = sample_product_state([0.0, 0.0], lat, vs2, rng)
        m = empirical_measure(eta, lat, vs2)
        assert pair(m, 1.0, component=0) == pytest.approx(m.component_totals[0])
        assert pair(m, 0.0, component=0) == 0.0


class TestBlockAverage:
    def test_constant_configuration(self, vs4):
        lat = Lattice(9, 1)
        eta = np.zeros((8, 4), dtype=np.uint8)
        eta[:, [0, 3]] = 1  # +1/2 and -1/4 occupied everywhere
        expect = conserved_of_state(eta[0], vs4)
        got = block_average(eta, lat, vs4, (4,), 2)
        assert np.allclose(got, expect, atol=1e-15)

    def test_radius_zero_is_single_site(self, vs4, rng):
        lat = Lattice(9, 1)
        eta = sample_product_state([0.1, 0.2], lat, vs4, rng)
        s = lat.index((5,))
        got = block_average(eta, lat, vs4, (5,), 0)
        assert np.array_equal(got, conserved_of_state(eta[s], vs4))

    def test_matches_bruteforce(self, vs2, rng):
        lat = Lattice(12, 1)
        eta = sample_product_state([0.0, 0.4], lat, vs2, rng)
        L = 2
        got = block_average(eta, lat, vs2, (6,), L)
        brute = np.zeros(2)
        for x1 in range(4, 9):
            brute += conserved_of_state(eta[lat.index((x1,))], vs2)
        assert np.allclose(got, brute / 5, atol=1e-14)

    def test_transverse_wrap(self, vs2d, rng):
        lat = Lattice(5, 2)
        eta = sample_product_state([0.0, 0.0, 0.0], lat, vs2d, rng)
        got = block_average(eta, lat, vs2d, (2, 0), 1)
        brute = np.zeros(3)
        for dx in (-1, 0, 1):
            for dy in (-1, 0, 1):
                site = lat.index((2 + dx, (0 + dy) % 5))
                brute += conserved_of_state(eta[site], vs2d)
        assert np.allclose(got, brute / 9, atol=1e-14)

    def test_wall_violation(self, vs2):
        lat = Lattice(8, 1)
        eta = np.zeros((7, 2), dtype=np.uint8)
        with pytest.raises(DomainError):
            block_average(eta, lat, vs2, (1,), 1)
        with pytest.raises(DomainError):
            block_average(eta, lat, vs2, (7,), 1)


class TestSmoothing:
    def test_single_atom_density(self, vs2):
        lat = Lattice(10, 1)
        eta = np.zeros((9, 2), dtype=np.uint8)
        eta[lat.index((5,)), 0] = 1  # one particle at u = 0.5
        m = empirical_measure(eta, lat, vs2)
        grid = Grid(1, 41)
        eps = 0.1
        sf = smooth(m, eps, grid)
        mass = 1 / 10
        expect = mass / (2 * eps * (1 + eps))
        u = grid.axis(0)
        holds = np.abs(u - 0.5) <= eps - 1e-12
        assert np.allclose(sf.values[holds, 0], expect, atol=1e-14)
        far = np.abs(u - 0.5) > eps + 1e-12
        assert np.all(sf.values[far, 0] == 0.0)

    def test_uniform_atoms_near_flat(self, vs2, rng):
        lat = Lattice(2001, 1)
        eta = sample_product_state([0.0, 0.0], lat, vs2, rng)
        m = empirical_measure(eta, lat, vs2)
        grid = Grid(1, 41)
        eps = 0.1
        sf = smooth(m, eps, grid)
        interior = (grid.axis(0) >= eps) & (grid.axis(0) <= 1 - eps)
        # total mass ~ 1, domain measure 1, inflation 1.1
        expect = m.component_totals[0] / (1 + eps)
        assert np.allclose(sf.values[interior, 0], expect, rtol=0.05)

    def test_pairing_converges_as_eps_shrinks(self, vs2, rng):
        lat = Lattice(4001, 1)
        eta = sample_product_state([0.3, 0.1], lat, vs2, rng)
        m = empirical_measure(eta, lat, vs2)
        g = lambda u: np.sin(np.pi * u)
        target = pair(m, lambda p: np.sin(np.pi * p[:, 0]), component=0)
        errors = []
        for eps in (0.1, 0.05, 0.025):
            grid = Grid(1, 161)
            sf = smooth(m, eps, grid)
            w = grid.weights()
            approx = float(np.sum(w * g(grid.axis(0)) * sf.values[:, 0]))
            errors.append(abs(approx - target))
        assert errors[0] > errors[1] > errors[2]

    def test_grid_resolution_precondition(self, vs2, rng):
        lat = Lattice(50, 1)
        m = empirical_measure(sample_product_state([0, 0], lat, vs2, rng), lat, vs2)
        with pytest.raises(ValueError, match="eps/2"):
            smooth(m, 0.02, Grid(1, 17))

    def test_box_values_within_bounds(self, vs2, rng):
        lat = Lattice(64, 1)
        eta = sample_product_state([2.0, 0.0], lat, vs2, rng)
        sf = smooth(empirical_measure(eta, lat, vs2), 0.1, Grid(1, 65))
        assert np.all(sf.values[..., 0] >= 0.0)
        assert np.all(sf.values[..., 0] <= len(vs2))
        assert np.all(np.abs(sf.values[..., 1]) <= vs2.breve_v * len(vs2))

    def test_csv_export(self, vs2, rng, tmp_path):
        lat = Lattice(32, 1)
        sf = smooth(empirical_measure(
            sample_product_state([0, 0], lat, vs2, rng), lat, vs2), 0.1, Grid(1, 33))
        path = tmp_path / "field.csv"
        sf.to_csv(path, header_comment="test")
        lines = path.read_text().strip().split("\n")
        assert lines[0] == "# test"
        assert lines[2].split(",")[0] == "u1"
        assert len(lines) == 3 + 33


def test_l1_distance():
    grid = Grid(1, 11)
    a = np.zeros((11, 2))
    b = np.ones((11, 2))
    assert np.allclose(l1_distance(grid, a, b), [1.0, 1.0], atol=1e-14)
    with pytest.raises(ValueError):
        l1_distance(grid, a, np.ones((10, 2)))
