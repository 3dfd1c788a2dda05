import math

import numpy as np

from convqg import Tensor
from convqg.optim import BETA1, BETA2, EPS, AdamWState, sgd_adamw_step


def _params(values):
    return {"p": Tensor(np.asarray(values, dtype=np.float64), requires_grad=True)}


def test_zero_gradient_zero_decay_is_fixed_point():
    params = _params([1.5, -2.0, 0.25])
    before = params["p"].data.copy()
    state = AdamWState(params)
    params["p"].grad = np.zeros(3)
    sgd_adamw_step(params, lr=0.1, weight_decay=0.0, state=state)
    np.testing.assert_array_equal(params["p"].data, before)


def test_zero_gradient_with_decay_shrinks():
    params = _params([1.5, -2.0, 0.25])
    before = params["p"].data.copy()
    state = AdamWState(params)
    params["p"].grad = np.zeros(3)
    sgd_adamw_step(params, lr=0.1, weight_decay=0.05, state=state)
    np.testing.assert_allclose(params["p"].data, before * (1 - 0.1 * 0.05), rtol=1e-12)


def test_two_steps_match_hand_unrolled_recursion():
    lr, wd = 0.1, 0.02
    params = _params([0.7])
    state = AdamWState(params)

    # hand unroll with constant gradient 1
    p = 0.7
    m = v = 0.0
    for t in (1, 2):
        g = 1.0
        m = BETA1 * m + (1 - BETA1) * g
        v = BETA2 * v + (1 - BETA2) * g * g
        mhat = m / (1 - BETA1 ** t)
        vhat = v / (1 - BETA2 ** t)
        p = p - lr * mhat / (math.sqrt(vhat) + EPS) - lr * wd * p

        params["p"].grad = np.array([1.0])
        sgd_adamw_step(params, lr=lr, weight_decay=wd, state=state)

    np.testing.assert_allclose(params["p"].data, [p], rtol=1e-12)


def test_shape_mismatch_rejected():
    params = _params([1.0, 2.0])
    state = AdamWState(params)
    params["p"].grad = np.zeros(3)
    try:
        sgd_adamw_step(params, lr=0.1, weight_decay=0.0, state=state)
    except ValueError as exc:
        assert "shape" in str(exc)
    else:
        raise AssertionError("expected a shape error")


def test_missing_gradient_counts_as_zero():
    params = _params([2.0])
    state = AdamWState(params)
    sgd_adamw_step(params, lr=0.5, weight_decay=0.0, state=state)
    np.testing.assert_array_equal(params["p"].data, [2.0])
