import numpy as np
import pytest

from latgas.lattice import (
    BoundarySide,
    Configuration,
    Lattice,
    load_configuration,
    save_configuration,
    totals,
)
from latgas.thermo import conserved_of_state, sample_product_state


class TestGeometry:
    def test_site_count(self):
        assert Lattice(4, 1).n_sites == 3
        assert Lattice(3, 2).n_sites == 2 * 3
        assert Lattice(5, 3).n_sites == 4 * 25

    def test_index_coord_roundtrip(self):
        lat = Lattice(4, 2)
        for s in range(lat.n_sites):
            assert lat.index(lat.coords(s)) == s

    def test_invalid_coordinates(self):
        lat = Lattice(4, 1)
        with pytest.raises(ValueError):
            lat.index((0,))
        with pytest.raises(ValueError):
            lat.index((4,))


class TestNeighbors:
    def test_d1_bulk(self):
        lat = Lattice(4, 1)
        nbrs = {lat.coords(t)[0] for t, _ in lat.neighbors(lat.index((2,)))}
        assert nbrs == {1, 3}

    def test_d1_wall(self):
        lat = Lattice(4, 1)
        nbrs = {lat.coords(t)[0] for t, _ in lat.neighbors(lat.index((1,)))}
        assert nbrs == {2}

    def test_d2_transverse_wrap(self):
        lat = Lattice(3, 2)
        nbrs = {lat.coords(t) for t, _ in lat.neighbors(lat.index((1, 0)))}
        assert nbrs == {(2, 0), (1, 1), (1, 2)}

    def test_symmetry(self):
        lat = Lattice(5, 2)
        for s in range(lat.n_sites):
            for t, _ in lat.neighbors(s):
                back = {u for u, _ in lat.neighbors(t)}
                assert s in back

    def test_neighbor_counts(self):
        for d in (1, 2):
            lat = Lattice(5, d)
            for s in range(lat.n_sites):
                expected = 2 * d if lat.classify(s) == BoundarySide.BULK else 2 * d - 1
                assert len(lat.neighbors(s)) == expected

    def test_periodic_wrap_first_axis(self):
        lat = Lattice(4, 1, periodic=True)
        nbrs = {lat.coords(t)[0] for t, _ in lat.neighbors(lat.index((3,)))}
        assert nbrs == {2, 1}  # wraps on the ring of 3 sites
        assert all(len(lat.neighbors(s)) == 2 for s in range(lat.n_sites))


class TestClassify:
    @pytest.mark.parametrize("x1,side", [(1, BoundarySide.LEFT), (4, BoundarySide.RIGHT),
                                         (2, BoundarySide.BULK), (3, BoundarySide.BULK)])
    def test_n5(self, x1, side):
        assert Lattice(5, 1).classify((x1,)) == side

    def test_n2_single_site_is_left(self):
        # x1 = 1 = N-1: the left classification takes precedence
        assert Lattice(2, 1).classify((1,)) == BoundarySide.LEFT

    def test_periodic_all_bulk(self):
        lat = Lattice(5, 1, periodic=True)
        assert all(lat.classify(s) == BoundarySide.BULK for s in range(lat.n_sites))


class TestTotals:
    def test_empty(self, vs2):
        lat = Lattice(4, 1)
        eta = np.zeros((lat.n_sites, 2), dtype=np.uint8)
        assert np.array_equal(totals(eta, vs2), [0.0, 0.0])

    def test_full_unit_set(self, vs_unit):
        lat = Lattice(4, 1)
        eta = np.ones((lat.n_sites, 2), dtype=np.uint8)
        assert np.array_equal(totals(eta, vs_unit), [6.0, 0.0])

    def test_matches_per_site_loop(self, vs4, rng):
        lat = Lattice(6, 1)
        eta = sample_product_state([0.2, 0.1], lat, vs4, rng)
        brute = np.zeros(2)
        for s in range(lat.n_sites):
            brute += conserved_of_state(eta[s], vs4)
        assert np.allclose(totals(eta, vs4), brute, atol=1e-12)

    def test_additive_over_partitions(self, vs4, rng):
        lat = Lattice(9, 1)
        eta = sample_product_state([0.0, 0.3], lat, vs4, rng)
        whole = totals(eta, vs4)
        parts = totals(eta[:3], vs4) + totals(eta[3:], vs4)
        assert np.allclose(whole, parts, atol=1e-12)


class TestConfiguration:
    def test_shape_validation(self, vs2):
        lat = Lattice(4, 1)
        with pytest.raises(ValueError):
            Configuration(lat, vs2, np.zeros((2, 2), dtype=np.uint8))

    def test_binary_validation(self, vs2):
        lat = Lattice(4, 1)
        with pytest.raises(ValueError):
            Configuration(lat, vs2, 2 * np.ones((3, 2), dtype=np.uint8))

    def test_checkpoint_roundtrip(self, vs4, rng, tmp_path):
        lat = Lattice(7, 1)
        cfg = Configuration(lat, vs4, sample_product_state([0.1, -0.4], lat, vs4, rng))
        path = tmp_path / "state.lgck"
        save_configuration(cfg, path)
        back = load_configuration(path, vs4)
        assert back.lattice == cfg.lattice
        assert np.array_equal(back.eta, cfg.eta)

    def test_checkpoint_rejects_wrong_velocity_set(self, vs4, vs2, rng, tmp_path):
        lat = Lattice(5, 1)
        cfg = Configuration(lat, vs4, sample_product_state([0.0, 0.0], lat, vs4, rng))
        path = tmp_path / "state.lgck"
        save_configuration(cfg, path)
        with pytest.raises(ValueError, match="velocity"):
            load_configuration(path, vs2)
