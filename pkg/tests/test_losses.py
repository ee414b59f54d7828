import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from metricgan.neural import Tensor, backward
from metricgan.train.losses import (l1, loss_d_cgan, loss_d_metricgan, loss_g_cgan, loss_g_metricgan,
                                    loss_irm_l1)

unit = st.floats(0.0, 1.0, allow_nan=False)
real = st.floats(-3.0, 3.0, allow_nan=False)


def test_cgan_generator_examples():
    y = np.random.default_rng(0).uniform(0, 1, (4, 5))
    assert loss_g_cgan(1.0, y, y, 0.01) == 0.0
    assert loss_g_cgan(0.0, y, y, 0.01) == pytest.approx(0.01)
    enh = y + 0.2
    assert l1(enh, y) == pytest.approx(0.2)
    assert loss_g_cgan(0.5, enh, y, 0.01) == pytest.approx(0.2025)


def test_cgan_discriminator_examples():
    assert loss_d_cgan(1.0, 0.0) == 0.0
    assert loss_d_cgan(0.0, 1.0) == 2.0
    assert loss_d_cgan(0.8, 0.3) == pytest.approx(0.13)


def test_metricgan_discriminator_examples():
    assert loss_d_metricgan(1.0, 0.37, 0.37) == 0.0
    assert loss_d_metricgan(0.0, 1.0, 0.0) == 2.0
    assert loss_d_metricgan(0.9, 0.4, 0.7) == pytest.approx(0.10)
    for bad in (-0.1, 1.2, np.nan):
        with pytest.raises(ValueError, match="outside"):
            loss_d_metricgan(1.0, 0.5, bad)


def test_metricgan_generator_examples():
    assert loss_g_metricgan(0.6, 0.6) == 0.0
    assert loss_g_metricgan(0.2, 1.0) == pytest.approx(0.64)
    half = np.full((3, 4), 0.5)
    for mu in (0.0, 0.5, 10.0):
        assert loss_g_metricgan(0.8, 0.8, half, mu) == 0.0
    # penalty is mu * mean((mask - 0.5)^2); ignored when mu is zero
    m = np.array([0.0, 1.0, 0.5, 0.5])
    assert loss_g_metricgan(0.8, 0.8, m, 2.0) == pytest.approx(2.0 * 0.125)
    assert loss_g_metricgan(0.8, 0.8, m, 0.0) == 0.0


def test_irm_l1_example():
    a = np.array([[1.0, 2.0], [3.0, 4.0]])
    assert loss_irm_l1(a, a) == 0.0
    assert loss_irm_l1(a, a - np.array([[1.0, -1.0], [0.0, 2.0]])) == pytest.approx(1.0)


def test_batched_inputs_average():
    assert loss_d_cgan(np.array([1.0, 0.0]), np.array([0.0, 0.0])) == pytest.approx(0.5)
    assert loss_g_metricgan(np.array([0.2, 1.0]), 1.0) == pytest.approx(0.32)


@given(d_real=real, d_fake=real, q=unit, s=unit, mu=st.floats(0, 5), lam=st.floats(0, 1))
def test_losses_non_negative(d_real, d_fake, q, s, mu, lam):
    rng = np.random.default_rng(0)
    enh, clean, mask = rng.uniform(0, 1, (3, 2, 4))
    assert loss_g_cgan(d_fake, enh, clean, lam) >= 0
    assert loss_d_cgan(d_real, d_fake) >= 0
    assert loss_d_metricgan(d_real, d_fake, q) >= 0
    assert loss_g_metricgan(d_fake, s, mask, mu) >= 0
    assert loss_irm_l1(enh, clean) >= 0
    # zero exactly at the fixed points
    assert loss_d_metricgan(1.0, q, q) == 0.0
    assert loss_g_metricgan(s, s) == 0.0
    assert loss_d_cgan(1.0, 0.0) == 0.0


@given(d_fake=st.floats(0, 1), q1=unit, q2=unit)
def test_metric_label_shifts_loss_surface(d_fake, q1, q2):
    """The fake label of the CGAN loss is the constant 0; the metric loss moves with q_fake."""
    assert loss_d_cgan(1.0, d_fake) == pytest.approx(d_fake ** 2)
    a, b = loss_d_metricgan(1.0, d_fake, q1), loss_d_metricgan(1.0, d_fake, q2)
    assert a == pytest.approx((d_fake - q1) ** 2)
    assert b - a == pytest.approx((d_fake - q2) ** 2 - (d_fake - q1) ** 2, abs=1e-12)
    # the minimizer over d_fake tracks q
    grid = np.linspace(0, 1, 1001)
    best = grid[np.argmin([loss_d_metricgan(1.0, g, q1) for g in grid])]
    assert best == pytest.approx(q1, abs=1e-3)


def test_tensor_and_float_inputs_agree():
    rng = np.random.default_rng(1)
    d = rng.uniform(0, 1, 4)
    q = rng.uniform(0, 1, 4)
    t = Tensor(d, requires_grad=True, name="d")
    out = loss_d_metricgan(1.0, t, q)
    assert float(out.data) == pytest.approx(loss_d_metricgan(1.0, d, q))
    g = backward(out)["d"]
    assert np.allclose(g, 2 * (d - q) / 4)
