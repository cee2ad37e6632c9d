import numpy as np
import pytest

from latgas.velocities import (
    Collision,
    CollisionSet,
    VelocitySet,
    four_velocity_set,
    load_velocity_set,
    save_velocity_set,
    two_velocity_set,
)


def test_basic_properties(vs4):
    assert vs4.d == 1
    assert len(vs4) == 4
    assert vs4.breve_v == 0.5
    assert np.allclose(vs4.vtilde[:, 0], 1.0)
    assert np.array_equal(vs4.vtilde[:, 1:], vs4.velocities)


def test_rejects_asymmetric_set():
    with pytest.raises(ValueError, match="reflections"):
        VelocitySet(np.array([[0.5], [0.25]]))


def test_rejects_duplicates():
    with pytest.raises(ValueError, match="duplicate"):
        VelocitySet(np.array([[0.5], [-0.5], [0.5]]))


def test_d2_requires_permutation_closure():
    # {(±a,0)} alone is not permutation closed in d=2
    with pytest.raises(ValueError):
        VelocitySet(np.array([[0.5, 0.0], [-0.5, 0.0]]))
    VelocitySet(np.array([[0.5, 0.0], [-0.5, 0.0], [0.0, 0.5], [0.0, -0.5]]))


def test_rescaled():
    vs = VelocitySet(np.array([[1.0], [-1.0]])).rescaled(0.5)
    assert np.array_equal(vs.velocities, [[0.5], [-0.5]])
    assert vs.max_l1_speed() == 0.5


def test_file_roundtrip(tmp_path, vs4):
    path = tmp_path / "vels.txt"
    save_velocity_set(vs4, path)
    loaded = load_velocity_set(path)
    assert np.array_equal(loaded.velocities, vs4.velocities)


def test_file_load_rejects_bad_sets(tmp_path):
    path = tmp_path / "bad.txt"
    path.write_text("0.5\n0.25\n")
    with pytest.raises(ValueError, match="reflections"):
        load_velocity_set(path)
    path.write_text("")
    with pytest.raises(ValueError, match="no velocities"):
        load_velocity_set(path)


def test_collision_set_conserves_momentum(vs4):
    cs = CollisionSet(vs4)
    vel = vs4.velocities
    assert len(cs.quadruples) > 0
    for q in cs.quadruples:
        assert np.array_equal(vel[q.v] + vel[q.w], vel[q.vp] + vel[q.wp])


def test_collision_set_closed_under_reversal(vs4):
    cs = CollisionSet(vs4)
    quads = set(cs.quadruples)
    for q in cs.quadruples:
        assert q.reversed() in quads
    active = set(cs.active)
    for q in cs.active:
        assert q.reversed() in active


def test_two_velocity_collisions_never_fire(vs2):
    # with only {±v} every momentum-conserving quadruple reuses its incoming
    # slots, so no collision can ever have positive rate
    cs = CollisionSet(vs2)
    assert len(cs.quadruples) == 6
    assert len(cs.active) == 0


def test_four_velocity_active_collisions(vs4):
    cs = CollisionSet(vs4)
    # (±1/2) pair exchanges with (±1/4) pair: 2 incoming x 2 outgoing orders,
    # both directions
    assert len(cs.active) == 8
    for q in cs.active:
        assert {q.v, q.w}.isdisjoint({q.vp, q.wp})


def test_mass_nonconserving_set_rejected():
    # 2*1 = -1 + 3 admits a fireable quadruple with a repeated incoming slot
    vs = VelocitySet(np.array([[1.0], [-1.0], [3.0], [-3.0]]))
    with pytest.raises(ValueError, match="mass-non-conserving"):
        CollisionSet(vs)


def test_collision_reversal_involution():
    q = Collision(0, 1, 2, 3)
    assert q.reversed().reversed() == q
