import numpy as np
import pytest

from safexplore import kernels
from safexplore._core import _fallback

compiled = pytest.importorskip("safexplore._core._bicycle", reason="extension not built")

DT, LR = 0.2, 1.7


def _random_case(rng, N):
    x0 = np.array([rng.uniform(-5, 12), rng.uniform(-3, 2), rng.uniform(-np.pi, np.pi),
                   rng.uniform(-1, 36), rng.uniform(-0.64, 0.64)])
    U = np.column_stack([rng.uniform(-10, 1, N), rng.uniform(-0.17, 0.17, N)])
    return x0, U


def test_backend_is_compiled():
    assert kernels.BACKEND == "compiled"


def test_step_matches_fallback(rng):
    for _ in range(200):
        x0, U = _random_case(rng, 1)
        a = compiled.bicycle_step(x0, U[0], DT, LR)
        b = _fallback.bicycle_step(x0, U[0], DT, LR)
        np.testing.assert_array_equal(a, b)


@pytest.mark.parametrize("N", [1, 7, 50])
def test_rollouts_match_fallback(rng, N):
    for _ in range(20):
        x0, U = _random_case(rng, N)
        np.testing.assert_allclose(compiled.bicycle_rollout(x0, U, DT, LR),
                                   _fallback.bicycle_rollout(x0, U, DT, LR), rtol=1e-13, atol=1e-12)
        Xa, Sa = compiled.bicycle_rollout_sens(x0, U, DT, LR)
        Xb, Sb = _fallback.bicycle_rollout_sens(x0, U, DT, LR)
        np.testing.assert_allclose(Xa, Xb, rtol=1e-13, atol=1e-12)
        np.testing.assert_allclose(Sa, Sb, rtol=1e-12, atol=1e-12)


def test_inputs_not_mutated(rng):
    x0, U = _random_case(rng, 5)
    x_copy, U_copy = x0.copy(), U.copy()
    compiled.bicycle_rollout_sens(x0, U, DT, LR)
    np.testing.assert_array_equal(x0, x_copy)
    np.testing.assert_array_equal(U, U_copy)
