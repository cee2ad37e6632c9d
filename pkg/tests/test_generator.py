import numpy as np
import pytest

from latgas.dynamics import Model, ReservoirProfiles
from latgas.errors import SizeError
from latgas.generator import assemble_exact_generator
from latgas.lattice import Lattice


def two_site_model(vs2, periodic=True, profiles=None):
    lat = Lattice(3, 1, periodic=periodic)
    return Model(lat, vs2, profiles=profiles)


class TestAssembly:
    def test_state_space_size(self, vs2):
        gen = assemble_exact_generator(two_site_model(vs2), parts=("exclusion",))
        assert gen.n_states == 16

    def test_rows_sum_to_zero_exactly(self, vs2, vs4):
        prof = ReservoirProfiles.constant(vs2, [0.3, 0.4], [0.6, 0.5])
        models = [
            (two_site_model(vs2), ("exclusion",)),
            (two_site_model(vs2, periodic=False, profiles=prof),
             ("boundary", "collision", "exclusion")),
            (Model(Lattice(2, 1), vs4, profiles=None), ("collision",)),
        ]
        for model, parts in models:
            gen = assemble_exact_generator(model, parts=parts)
            assert np.max(np.abs(gen.row_sums())) == 0.0

    def test_off_diagonal_nonnegative(self, vs2):
        prof = ReservoirProfiles.constant(vs2, [0.3, 0.4], [0.6, 0.5])
        gen = assemble_exact_generator(two_site_model(vs2, periodic=False, profiles=prof))
        coo = gen.matrix.tocoo()
        off = coo.data[coo.row != coo.col]
        assert np.all(off > 0)

    def test_unknown_part_rejected(self, vs2):
        with pytest.raises(ValueError, match="unknown"):
            assemble_exact_generator(two_site_model(vs2), parts=("drift",))

    def test_size_cap(self, vs4):
        model = Model(Lattice(8, 1), vs4, profiles=None)  # 28 bits
        with pytest.raises(SizeError):
            assemble_exact_generator(model)

    def test_rates_scaled_by_N_squared(self, vs2):
        # single particle on the periodic 2-site ring: hop rates are
        # N^2 (1/2 + p/N) through both channels
        model = two_site_model(vs2)
        gen = assemble_exact_generator(model, parts=("exclusion",))
        state = 1 << (0 * 2 + 0)  # site 0, velocity +1/2
        target = 1 << (1 * 2 + 0)
        n = model.lattice.N
        expected = n**2 * ((0.5 + 0.75 / n) + (0.5 + 0.25 / n))
        assert gen.matrix[state, target] == pytest.approx(expected, rel=1e-14)


class TestInvariance:
    def test_product_measure_invariant_for_periodic_exclusion(self, vs2):
        gen = assemble_exact_generator(two_site_model(vs2), parts=("exclusion",))
        for lam in ([0.0, 0.0], [0.4, -0.3], [1.0, 0.7]):
            assert gen.invariance_residual(np.array(lam)) <= 1e-12

    def test_product_measure_invariant_periodic_with_collisions(self, vs4):
        lat = Lattice(3, 1, periodic=True)
        gen = assemble_exact_generator(Model(lat, vs4, profiles=None),
                                       parts=("exclusion", "collision"))
        assert gen.invariance_residual(np.array([0.2, -0.4])) <= 1e-12

    def test_boundary_driven_measure_not_invariant(self, vs2):
        # mismatched reservoirs drive a current; the product measure fails
        prof = ReservoirProfiles.constant(vs2, [0.3, 0.4], [0.6, 0.5])
        gen = assemble_exact_generator(two_site_model(vs2, periodic=False, profiles=prof))
        assert gen.invariance_residual(np.array([0.0, 0.0])) > 1e-3


class TestDetailedBalance:
    def test_two_velocity_system_has_no_collision_transitions(self, vs2):
        gen = assemble_exact_generator(two_site_model(vs2, periodic=False),
                                       parts=("collision",))
        audit = gen.detailed_balance_audit(np.array([0.3, 0.2]))
        assert audit["n_transitions"] == 0
        assert audit["worst_imbalance"] == 0.0

    def test_four_velocity_collisions_balance_exactly(self, vs4):
        for n_sites_lat in (Lattice(2, 1), Lattice(3, 1)):
            gen = assemble_exact_generator(Model(n_sites_lat, vs4, profiles=None),
                                           parts=("collision",))
            for lam in ([0.0, 0.0], [0.3, 1.1], [-0.7, 0.4]):
                audit = gen.detailed_balance_audit(np.array(lam))
                assert audit["n_transitions"] > 0
                assert audit["all_reversible"]
                assert audit["worst_imbalance"] == 0.0

    def test_boundary_reversible_when_matched(self, vs2):
        # with alpha = beta = theta(lam) the boundary dynamics is reversible
        # for the product measure at lam
        from latgas.thermo import theta_all

        lam = np.array([0.3, -0.2])
        th = theta_all(lam, vs2)
        prof = ReservoirProfiles.constant(vs2, list(th), list(th))
        gen = assemble_exact_generator(two_site_model(vs2, periodic=False, profiles=prof),
                                       parts=("boundary",))
        audit = gen.detailed_balance_audit(lam)
        assert audit["n_transitions"] > 0
        assert audit["all_reversible"]
        assert audit["worst_imbalance"] <= 1e-16
