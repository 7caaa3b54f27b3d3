import numpy as np
import pytest

from inverse_renderer import autodiff as ad
from inverse_renderer.autodiff import ParameterStore, Tape, grad_check
from inverse_renderer.network import Mlp


def test_layers_are_registered_by_prefix():
    store = ParameterStore()
    net = Mlp(store, "enc", [5, 8, 3])
    assert net.group_names == ["enc.w0", "enc.b0", "enc.w1", "enc.b1"]
    assert store.value("enc.w1").shape == (8, 3)
    assert net.forward(np.ones((4, 5))).shape == (4, 3)


def test_zero_last_gives_constant_output():
    net = Mlp(ParameterStore(), "head", [3, 6, 4], zero_last=True, seed=5)
    out = net.forward(np.random.default_rng(0).normal(size=(7, 3)))
    np.testing.assert_allclose(out, 0.0)


def test_input_gradient_matches_finite_differences():
    net = Mlp(ParameterStore(), "sdf", [3, 16, 16, 1], beta=5.0, seed=1)
    x = np.random.default_rng(2).normal(size=(6, 3))
    _, grad = net.input_gradient(x)
    h = 1e-6
    for k in range(3):
        step = np.zeros(3)
        step[k] = h
        numeric = (net.forward(x + step)[:, 0] - net.forward(x - step)[:, 0]) / (2.0 * h)
        np.testing.assert_allclose(grad[:, k], numeric, rtol=1e-5, atol=1e-8)


def test_input_gradient_is_differentiable_in_the_weights():
    store = ParameterStore()
    net = Mlp(store, "sdf", [3, 8, 1], beta=3.0, seed=4)
    x = np.random.default_rng(3).normal(size=(5, 3))

    def eikonal(tape: Tape):
        _, g = net.input_gradient(x, tape)
        norm = ad.sqrt(ad.sum_(ad.mul(g, g), axis=1))
        return ad.mean(ad.mul(ad.sub(norm, 1.0), ad.sub(norm, 1.0)))

    report = grad_check(eikonal, store, eps=1e-6, max_per_group=4)
    assert report.max_rel_err < 1e-4


def test_constructor_and_gradient_errors():
    with pytest.raises(ValueError, match="at least input and output"):
        Mlp(ParameterStore(), "x", [3])
    with pytest.raises(ValueError, match="Unknown initialization"):
        Mlp(ParameterStore(), "x", [3, 1], init="orthogonal")
    with pytest.raises(ValueError, match="scalar output"):
        Mlp(ParameterStore(), "x", [3, 2]).input_gradient(np.zeros((1, 3)))
