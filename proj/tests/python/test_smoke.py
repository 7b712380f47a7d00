import math

import numpy as np
import pytest

import adapterlab


def test_param_counts():
    assert adapterlab.adapter_param_count(16, 192) * 12 == 76224
    assert adapterlab.total_trainable_count(192, 12, 16, 10) == 78144
    assert adapterlab.total_trainable_count(192, 12, 16, 10, regime="head_only") == 1920


def test_zero_adapter_is_identity():
    rng = np.random.default_rng(0)
    h = rng.normal(size=(5, 8))
    w_down = rng.normal(scale=0.02, size=(2, 8))
    out = adapterlab.residual_apply(h, w_down, np.zeros(2), np.zeros((8, 2)), np.zeros(8), alpha=3.0)
    assert np.array_equal(out, h)


def test_adapter_forward_matches_numpy():
    rng = np.random.default_rng(1)
    h = rng.normal(size=(3, 4))
    w_down, b_down = rng.normal(size=(2, 4)), rng.normal(size=2)
    w_up, b_up = rng.normal(size=(4, 2)), rng.normal(size=4)
    z = h @ w_down.T + b_down
    gelu = 0.5 * z * (1 + np.vectorize(math.erf)(z / math.sqrt(2)))
    expect = gelu @ w_up.T + b_up
    assert np.allclose(adapterlab.adapter_forward(h, w_down, b_down, w_up, b_up), expect, atol=1e-12)


def test_shape_error():
    with pytest.raises(ValueError):
        adapterlab.adapter_forward(np.zeros((2, 5)), np.zeros((2, 4)), np.zeros(2), np.zeros((4, 2)), np.zeros(4))


def test_theory_helpers():
    assert abs(adapterlab.tail_decay(10, 1.0, 1.0) - 0.308490) < 1e-6
    err, tail = adapterlab.truncation_error(16, 1.0, 1.0, 4, seed=3)
    assert abs(err - tail) < 1e-9
    with pytest.raises(ValueError):
        adapterlab.tail_decay(5, 1.0, 0.4)
    e = adapterlab.elbow_check([(8, 97.56), (16, 97.61), (32, 97.75), (64, 97.85)])
    assert e["pass"] and not e["pass_strict"]


def test_cli_params():
    code, out, _ = adapterlab.run_cli(["params"])
    assert code == 0
    assert "adapter_tune" in out
    code, _, err = adapterlab.run_cli(["params", "--override", "model.rank=0"])
    assert code == 2
    assert "rank" in err
