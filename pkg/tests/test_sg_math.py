import math

import numpy as np
import pytest
from scipy.integrate import quad

from inverse_renderer.illumination import equirect_directions
from inverse_renderer.sg_math import (
    COSINE_LOBE,
    DirectionSet,
    SphericalGaussian,
    clamped_cosine_sg,
    cosine_lobe_residual,
    fibonacci_directions,
    fit_clamped_cosine,
    load_cosine_constants,
    optimal_cosine_amplitude,
    sg_eval,
    sg_inner_product,
    sg_integral,
    sg_product,
    write_cosine_constants,
)


def _unit(v):
    v = np.asarray(v, dtype=np.float64)
    return v / np.linalg.norm(v)


def _sphere_quadrature(width=512, height=256):
    dirs, solid = equirect_directions(width, height)
    return dirs.reshape(-1, 3), solid.reshape(-1)


def test_create_validates_axis_and_sharpness():
    with pytest.raises(ValueError, match="unit"):
        SphericalGaussian.create([1.0, 1.0, 0.0], 2.0, [1.0])
    with pytest.raises(ValueError, match="positive"):
        SphericalGaussian.create([0.0, 0.0, 1.0], 0.0, [1.0])


def test_eval_peaks_at_axis():
    g = SphericalGaussian.create([0.0, 0.0, 1.0], 3.0, [2.0, 1.0, 0.5])
    np.testing.assert_allclose(sg_eval(g, np.array([0.0, 0.0, 1.0])), [2.0, 1.0, 0.5])
    value = sg_eval(g, np.array([1.0, 0.0, 0.0]))
    np.testing.assert_allclose(value, np.array([2.0, 1.0, 0.5]) * math.exp(-3.0))


def test_product_matches_pointwise_product(rng):
    g1 = SphericalGaussian.create(_unit([1.0, 0.2, 0.3]), 4.0, [1.5])
    g2 = SphericalGaussian.create(_unit([0.1, 1.0, -0.4]), 7.0, [0.7])
    product = sg_product(g1, g2)
    dirs = rng.normal(size=(50, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    expected = np.asarray(sg_eval(g1, dirs)) * np.asarray(sg_eval(g2, dirs))
    np.testing.assert_allclose(sg_eval(product, dirs), expected, rtol=1e-10)
    assert not product.degenerate


def test_antipodal_product_is_flagged():
    g1 = SphericalGaussian.create([0.0, 0.0, 1.0], 2.0, [1.0])
    g2 = SphericalGaussian.create([0.0, 0.0, -1.0], 2.0, [1.0])
    product = sg_product(g1, g2)
    assert product.degenerate
    assert np.all(np.isfinite(product.amplitude))
    value, flag = sg_inner_product(g1, g2, with_flag=True)
    assert flag
    assert np.all(np.isfinite(value))


def test_integral_matches_quadrature():
    dirs, solid = _sphere_quadrature()
    g = SphericalGaussian.create(_unit([0.3, -0.5, 0.8]), 2.0, [1.0])
    numeric = float(np.sum(np.asarray(sg_eval(g, dirs))[:, 0] * solid))
    assert float(sg_integral(g)[0]) == pytest.approx(numeric, rel=1e-3)
    assert float(sg_integral(g)[0]) == pytest.approx(math.pi * (1.0 - math.exp(-4.0)), rel=1e-12)


def test_inner_product_is_symmetric():
    g1 = SphericalGaussian.create(_unit([1.0, 0.0, 0.2]), 3.0, [1.0, 2.0, 3.0])
    g2 = SphericalGaussian.create(_unit([0.0, 1.0, 0.5]), 5.0, [0.5, 0.5, 0.5])
    np.testing.assert_allclose(sg_inner_product(g1, g2), sg_inner_product(g2, g1), rtol=1e-12)


def test_fibonacci_directions_are_deterministic_unit_and_spread():
    a = fibonacci_directions(64)
    b = fibonacci_directions(64)
    np.testing.assert_array_equal(a.vectors, b.vectors)
    np.testing.assert_allclose(np.linalg.norm(a.vectors, axis=1), 1.0)
    assert len(a) == 64
    assert a.min_angle() > 0.2
    assert a.solid_angle == pytest.approx(4.0 * math.pi / 64)
    assert fibonacci_directions(1).min_angle() == pytest.approx(math.pi)
    with pytest.raises(ValueError):
        fibonacci_directions(0)


def test_direction_set_is_read_only_and_checked():
    d = DirectionSet.from_vectors([[2.0, 0.0, 0.0], [0.0, 3.0, 0.0]])
    np.testing.assert_allclose(d.vectors, [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
    with pytest.raises(ValueError):
        d.vectors[0, 0] = 5.0
    with pytest.raises(ValueError, match="unit"):
        DirectionSet(np.array([[2.0, 0.0, 0.0]]))


def test_cosine_lobe_constants():
    assert COSINE_LOBE.sharpness == pytest.approx(2.1446, abs=1e-4)
    assert COSINE_LOBE.amplitude == pytest.approx(1.17698, abs=1e-5)
    assert optimal_cosine_amplitude(2.1446) == pytest.approx(1.17698, abs=1e-3)


def test_cosine_fit_recovers_constants():
    fit = fit_clamped_cosine()
    assert fit.sharpness == pytest.approx(2.1446, rel=2e-2)
    assert fit.amplitude == pytest.approx(1.17698, rel=1e-2)
    assert fit.residual <= cosine_lobe_residual(1.5, optimal_cosine_amplitude(1.5))
    assert fit.residual <= cosine_lobe_residual(3.0, optimal_cosine_amplitude(3.0))


@pytest.mark.parametrize("lam, mu", [(2.1446, 1.17698), (1.0, 0.8), (4.0, 1.5)])
def test_cosine_lobe_residual_matches_quadrature(lam, mu):
    integrand = lambda c: (mu * math.exp(lam * (c - 1.0)) - max(c, 0.0)) ** 2
    lower, _ = quad(integrand, -1.0, 0.0)
    upper, _ = quad(integrand, 0.0, 1.0)
    assert cosine_lobe_residual(lam, mu) == pytest.approx(2.0 * math.pi * (lower + upper), rel=1e-8)


def test_cosine_constants_file_roundtrip(tmp_path):
    fit = fit_clamped_cosine(grid=51)
    path = tmp_path / "cosine.txt"
    write_cosine_constants(fit, path)
    loaded = load_cosine_constants(path)
    assert loaded.sharpness == pytest.approx(fit.sharpness, abs=1e-6)
    assert loaded.amplitude == pytest.approx(fit.amplitude, abs=1e-6)


def test_cosine_constants_file_errors(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_cosine_constants(tmp_path / "missing.txt")
    path = tmp_path / "bad.txt"
    path.write_text("sharpness = 2.0\n", encoding="utf-8")
    with pytest.raises(ValueError, match="missing"):
        load_cosine_constants(path)


def test_clamped_cosine_lobe_approximates_cosine():
    dirs, solid = _sphere_quadrature(256, 128)
    n = np.array([0.0, 0.0, 1.0])
    lobe = clamped_cosine_sg(n)
    approx = np.asarray(sg_eval(lobe, dirs))[:, 0]
    exact = np.maximum(dirs @ n, 0.0)
    # Integral of cos over the hemisphere is pi.
    assert float(np.sum(approx * solid)) == pytest.approx(math.pi, rel=0.1)
    assert float(np.sum((approx - exact) ** 2 * solid)) < 0.1
