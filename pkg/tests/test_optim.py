import math

import numpy as np
import pytest

from recoat.optim import NadamConfig, NadamState, clip_by_global_norm, optimizer_step


def scalar_nadam(theta, grads, lr, b1=0.9, b2=0.999, eps=1e-8):
    m = v = 0.0
    for t, g in enumerate(grads, start=1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        m_hat = b1 * m / (1 - b1 ** (t + 1)) + (1 - b1) * g / (1 - b1 ** t)
        v_hat = v / (1 - b2 ** t)
        theta = theta - lr * m_hat / (math.sqrt(v_hat) + eps)
    return theta


def test_zero_gradient_leaves_params():
    p = {"w": np.array([1.0, -2.0])}
    st = NadamState.zeros_like(p)
    st = optimizer_step(p, {"w": np.zeros(2)}, st, 1e-3)
    np.testing.assert_array_equal(p["w"], [1.0, -2.0])
    assert st.step == 1


def test_lr_zero_leaves_params():
    p = {"w": np.array([1.0])}
    optimizer_step(p, {"w": np.array([3.0])}, NadamState.zeros_like(p), 0.0)
    assert p["w"][0] == 1.0


def test_constant_gradient_matches_unrolled_oracle():
    p = {"w": np.array([0.5])}
    st = NadamState.zeros_like(p)
    for _ in range(3):
        st = optimizer_step(p, {"w": np.array([0.7])}, st, 0.01)
    assert abs(p["w"][0] - scalar_nadam(0.5, [0.7] * 3, 0.01)) < 1e-12


def test_varying_gradient_oracle(rng):
    gs = rng.normal(size=20)
    p = {"w": np.array([0.0])}
    st = NadamState.zeros_like(p)
    for g in gs:
        st = optimizer_step(p, {"w": np.array([g])}, st, 3e-4)
    assert abs(p["w"][0] - scalar_nadam(0.0, gs, 3e-4)) < 1e-12


def test_shape_mismatch_and_unknown():
    p = {"w": np.zeros(3)}
    with pytest.raises(ValueError):
        optimizer_step(p, {"w": np.zeros(2)}, NadamState.zeros_like(p), 0.1)
    with pytest.raises(KeyError):
        optimizer_step(p, {"q": np.zeros(3)}, NadamState.zeros_like(p), 0.1)


def test_deterministic(rng):
    g = {"w": rng.normal(size=(4, 4))}
    outs = []
    for _ in range(2):
        p = {"w": np.ones((4, 4))}
        st = NadamState.zeros_like(p)
        for _ in range(3):
            st = optimizer_step(p, g, st, 0.1)
        outs.append(p["w"])
    np.testing.assert_array_equal(*outs)


def test_float32_grid():
    p = {"w": np.array([0.1])}
    st = optimizer_step(p, {"w": np.array([0.3])}, NadamState.zeros_like(p), 1e-3, float32_grid=True)
    for a in (p["w"], st.m["w"], st.v["w"]):
        assert a[0] == float(np.float32(a[0]))


def test_config_validation():
    with pytest.raises(ValueError):
        NadamConfig(beta1=1.0)


def test_clip_by_global_norm():
    g = {"a": np.array([3.0]), "b": np.array([4.0])}
    out = clip_by_global_norm(g, 1.0)
    assert math.hypot(out["a"][0], out["b"][0]) == pytest.approx(1.0)
    assert clip_by_global_norm(g, 10.0)["a"][0] == 3.0
