import math

import numpy as np
import pytest

from safexplore.dynamics import bicycle_model, toy_model
from safexplore.environment import (
    FinitePointSet,
    HyperBox,
    Intersection,
    OutputDisk,
    SafetyBreach,
    SensingReport,
    Setpoint,
    Union,
    contains,
    contains_with_margin,
    is_steady_admissible,
    region_from_dict,
    region_to_dict,
    sense,
    update_knowledge,
)


def z_of(x, u=(0.0, 0.0)):
    return np.concatenate([np.asarray(x, dtype=float), np.asarray(u, dtype=float)])


def random_z(rng, n):
    pts = np.zeros((n, 7))
    pts[:, 0] = rng.uniform(-6, 14, n)
    pts[:, 1] = rng.uniform(-4, 3, n)
    pts[:, 2] = rng.uniform(-3, 3, n)
    pts[:, 3] = rng.uniform(-2, 37, n)
    pts[:, 4] = rng.uniform(-0.7, 0.7, n)
    pts[:, 5] = rng.uniform(-11, 2, n)
    pts[:, 6] = rng.uniform(-0.2, 0.2, n)
    return pts


def test_initial_state_feasible(car):
    assert contains(car.knowledge.truth, z_of([1.5, 0, 0, 5, 0]))


def test_obstacle_center_excluded():
    o1 = OutputDisk((4.0, 0.3), 0.51, "outside")
    assert not contains(o1, z_of([4.0, 0.3, 0, 0, 0]))
    assert contains(o1, z_of([4.0, 0.3 + 0.52, 0, 0, 0]))
    # the closed interior is excluded, including the boundary circle
    assert not contains(o1, z_of([4.0, 0.3 + 0.51, 0, 0, 0]))


def test_finite_membership():
    E = FinitePointSet.of([(2, 2), (2, 0), (0, 0)])
    assert not contains(E, (2, 1))
    assert contains(E, (2, 0))


def test_region_validation():
    with pytest.raises(ValueError):
        OutputDisk((0.0, 0.0), 0.0)
    with pytest.raises(ValueError):
        HyperBox((1.0,), (0.0,))


def test_sensing_discovers_near_obstacles(car):
    k = car.knowledge
    rep = sense(k, z_of([1.5, 0, 0, 5, 0]))
    # independent distance computation for the discovery oracle
    d = math.hypot(1.5 - 4.0, 0.3)
    assert d == pytest.approx(2.518, abs=1e-3) and d <= 2.5 + 0.51
    assert rep.newly_discovered == frozenset({0, 1})
    assert rep.center == (1.5, 0.0)


def test_sensing_far_away(car):
    rep = sense(car.knowledge, z_of([-10, 0, 0, 0, 0]))
    assert rep.newly_discovered == frozenset()


def test_sensing_is_idempotent(car):
    z = z_of([1.5, 0, 0, 5, 0])
    k = update_knowledge(car.knowledge, sense(car.knowledge, z))
    assert sense(k, z).newly_discovered == frozenset()


def test_sensing_outside_truth_is_a_breach(car):
    with pytest.raises(SafetyBreach):
        sense(car.knowledge, z_of([4.0, 0.3, 0, 0, 0]))


def test_first_update_gives_sensed_disk(car, rng):
    k = update_knowledge(car.knowledge, sense(car.knowledge, z_of([1.5, 0, 0, 5, 0])))
    expected = Intersection((k.base, OutputDisk((1.5, 0.0), 2.5, "inside"), k.obstacles[0], k.obstacles[1]))
    for z in random_z(rng, 5000):
        assert contains(k.safe, z) == contains(expected, z)


def test_empty_and_duplicate_updates_change_nothing(car, rng):
    k1 = update_knowledge(car.knowledge, sense(car.knowledge, z_of([1.5, 0, 0, 5, 0])))
    k2 = update_knowledge(k1, SensingReport(center=(1.5, 0.0)))
    assert k2.sensed_centers == k1.sensed_centers
    for z in random_z(rng, 2000):
        assert contains(k1.safe, z) == contains(k2.safe, z)


def test_inclusions_and_monotonicity(car, rng):
    """E_t in Z_t in Z_sc and E_t in Z along a random sensing walk."""
    k = car.knowledge
    pts = random_z(rng, 10_000)
    walk = [(1.5, 0.0), (2.5, -1.2), (3.0, 1.5), (5.5, 1.6), (8.0, -2.8), (11.0, -1.5)]
    prev_safe = np.zeros(len(pts), dtype=bool)
    prev_disc = frozenset()
    for c in walk:
        z = z_of([c[0], c[1], 0, 0, 0])
        assert contains(k.truth, z)
        k = update_knowledge(k, sense(k, z))
        safe = np.array([contains(k.safe, p) for p in pts])
        est = np.array([contains(k.estimated, p) for p in pts])
        truth = np.array([contains(k.truth, p) for p in pts])
        base = np.array([contains(k.base, p) for p in pts])
        assert not np.any(safe & ~est)
        assert not np.any(est & ~base)
        assert not np.any(safe & ~truth)
        assert not np.any(prev_safe & ~safe)
        assert prev_disc <= k.known_obstacles
        prev_safe, prev_disc = safe, k.known_obstacles
        # the sensed neighborhood (minus obstacles) is inside the safe set at once
        ring = [z_of([c[0] + r * math.cos(a), c[1] + r * math.sin(a), 0, 0, 0])
                for r in (0.0, 1.0, 2.49) for a in np.linspace(0, 2 * math.pi, 24)]
        for p in ring:
            if contains(k.truth, p):
                assert contains(k.safe, p)


def test_steady_admissibility_examples(car):
    toy = toy_model()
    assert is_steady_admissible(toy, Setpoint(0, 0), FinitePointSet.of([(2, 2), (2, 0), (0, 0)]), 0.01)
    m = bicycle_model()
    # (12, 1) sits on the x1 <= 12 face, so the margin needs it pulled in by lambda
    goal = Setpoint(np.array([12.0, 1.0, 0, 0, 0]), np.zeros(2))
    assert is_steady_admissible(m, goal, car.knowledge.truth, 0.0)
    assert not is_steady_admissible(m, goal, car.knowledge.truth, 0.01)
    inner = Setpoint(np.array([11.99, 1.0, 0, 0, 0]), np.zeros(2))
    assert is_steady_admissible(m, inner, car.knowledge.truth, 0.01)
    moving = Setpoint(np.array([5.0, 1.0, 0, 5.0, 0]), np.zeros(2))
    assert not is_steady_admissible(m, moving, car.knowledge.truth, 0.0)


def test_margin_semantics():
    box = HyperBox((0.0, 0.0), (1.0, 1.0))
    assert contains_with_margin(box, np.array([0.5, 0.5]), 0.5)
    assert not contains_with_margin(box, np.array([0.5, 0.5]), 0.5001)
    inside = OutputDisk((0.0, 0.0), 2.0, "inside")
    assert contains_with_margin(inside, np.array([1.0, 0.0]), 1.0)
    assert not contains_with_margin(inside, np.array([1.0, 0.0]), 1.01)
    outside = OutputDisk((0.0, 0.0), 2.0, "outside")
    assert contains_with_margin(outside, np.array([3.0, 0.0]), 1.0)
    assert not contains_with_margin(outside, np.array([3.0, 0.0]), 1.01)
    pts = FinitePointSet.of([(1, 1)])
    assert contains_with_margin(pts, (1, 1), 100.0)


def test_region_round_trip(car, rng):
    k = update_knowledge(car.knowledge, sense(car.knowledge, z_of([1.5, 0, 0, 5, 0])))
    for region in (k.safe, k.estimated, k.truth, Union((FinitePointSet.of([(0, 0)]),))):
        back = region_from_dict(region_to_dict(region))
        if isinstance(region, Union):
            assert contains(back, (0, 0))
            continue
        for z in random_z(rng, 500):
            assert contains(back, z) == contains(region, z)
