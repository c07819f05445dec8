"""Grid quadrature: running integrals, convolutions, ordered triple integrals."""

import numpy as np
import pytest

from atomlaser import (
    GridError,
    ParameterError,
    SampledFunction,
    UniformGrid,
    cumulative_integral,
    halving_difference,
    iterated_convolution,
    ordered_triple_direct,
    ordered_triple_factored,
    simplex_integral_3,
)
from atomlaser.quad import grid_for, sample


def test_grid_validation():
    with pytest.raises(GridError):
        UniformGrid(0.0, -0.1, 10)
    with pytest.raises(GridError):
        UniformGrid(0.0, 0.0, 10)
    with pytest.raises(GridError):
        UniformGrid(0.0, 0.1, 1)
    g = UniformGrid(1.0, 0.5, 5)
    assert g.t_end == pytest.approx(3.0)
    np.testing.assert_allclose(g.times(), [1.0, 1.5, 2.0, 2.5, 3.0])
    gc = g.coarsened()
    assert (gc.t0, gc.dt, gc.n_points) == (1.0, 1.0, 3)


def test_grid_for_covers():
    g = grid_for(1.0, 0.3)
    assert g.t_end >= 1.0 - 1e-12
    assert g.n_points == 5
    # exact division stays exact
    g2 = grid_for(1.0, 0.25)
    assert g2.n_points == 5


def test_sampled_function_validation():
    g = UniformGrid(0.0, 0.1, 4)
    with pytest.raises(GridError):
        SampledFunction(g, np.zeros(5))
    with pytest.raises(GridError):
        SampledFunction(g, np.array([0.0, 1.0, np.nan, 2.0]))
    f = sample(np.sin, g)
    np.testing.assert_allclose(f.values, np.sin(g.times()))


def test_cumulative_integral_linear_exact():
    # trapezoid integrates polynomials of degree <= 1 exactly
    g = UniformGrid(0.0, 0.05, 201)
    t = g.times()
    f = SampledFunction(g, 3.0 * t + 2.0)
    v = cumulative_integral(f)
    assert v.values[0] == 0.0
    np.testing.assert_allclose(v.values, 1.5 * t**2 + 2.0 * t, atol=1e-12)


def test_cumulative_integral_linearity():
    g = UniformGrid(0.0, 0.02, 300)
    t = g.times()
    a = SampledFunction(g, np.cos(t))
    b = SampledFunction(g, t**2)
    combo = SampledFunction(g, 2.0 * a.values - 5.0 * b.values)
    lhs = cumulative_integral(combo).values
    rhs = 2.0 * cumulative_integral(a).values - 5.0 * cumulative_integral(b).values
    np.testing.assert_allclose(lhs, rhs, atol=1e-12)


def test_convolution_of_ones_is_t():
    g = UniformGrid(0.0, 0.01, 500)
    ones = SampledFunction(g, np.ones(g.n_points))
    v = iterated_convolution(ones, ones)
    assert v.values[0] == 0.0
    np.testing.assert_allclose(v.values, g.times(), atol=1e-10)


def test_convolution_exponential():
    # exp(-tau) * 1 = 1 - exp(-t)
    g = UniformGrid(0.0, 0.005, 800)
    t = g.times()
    ker = SampledFunction(g, np.exp(-t))
    one = SampledFunction(g, np.ones_like(t))
    v = iterated_convolution(ker, one)
    np.testing.assert_allclose(v.values, 1.0 - np.exp(-t), atol=2e-6)


def test_convolution_bilinearity_and_grid_check():
    g = UniformGrid(0.0, 0.01, 200)
    t = g.times()
    a = SampledFunction(g, np.sin(3 * t))
    b = SampledFunction(g, np.cos(t))
    u = SampledFunction(g, np.exp(-0.5 * t))
    lhs = iterated_convolution(
        SampledFunction(g, 2.0 * a.values + b.values), u).values
    rhs = 2.0 * iterated_convolution(a, u).values + iterated_convolution(b, u).values
    np.testing.assert_allclose(lhs, rhs, atol=1e-12)
    other = SampledFunction(UniformGrid(0.0, 0.02, 200), np.ones(200))
    with pytest.raises(GridError):
        iterated_convolution(a, other)


def test_triple_constant_integrand():
    # g = 1 over the ordered simplex gives t^3/6; both routes must agree
    t, dt = 1.0, 0.02
    want = t**3 / 6.0
    direct = ordered_triple_direct(lambda t1, t2, t3: np.ones_like(t3), t, dt)
    assert direct.real == pytest.approx(want, rel=2e-3)
    g = grid_for(t, dt)
    ones = SampledFunction(g, np.ones(g.n_points, dtype=complex))
    for pairing in ("outer-mid", "outer-late"):
        curve = ordered_triple_factored(ones, ones, pairing)
        assert curve.values[-1].real == pytest.approx(want, rel=2e-3)
        assert curve.values[0] == 0.0


def test_triple_linear_integrand():
    # g = t1 over the simplex: integral = t^4/8
    t, dt = 1.0, 0.02
    direct = ordered_triple_direct(
        lambda t1, t2, t3: t1 * np.ones_like(t3), t, dt)
    assert direct.real == pytest.approx(t**4 / 8.0, rel=2e-3)


@pytest.mark.parametrize("pairing", ["outer-mid", "outer-late"])
def test_factored_matches_direct(pairing):
    # a(x) = exp(-x), b(x) = cos(5x); the two pairings hit different argument
    # combinations, so check each against its own direct nested rule
    t, dt = 0.8, 0.008
    g = grid_for(t, dt)
    x = g.times()
    a = SampledFunction(g, np.exp(-x).astype(complex))
    b = SampledFunction(g, np.cos(5 * x).astype(complex))
    if pairing == "outer-mid":
        integrand = lambda t1, t2, t3: np.exp(-(t - t2)) * np.cos(5 * (t1 - t3))
    else:
        integrand = lambda t1, t2, t3: np.exp(-(t - t3)) * np.cos(5 * (t1 - t2))
    direct = ordered_triple_direct(integrand, t, dt)
    fast = simplex_integral_3((a, b), t, dt, method="factored", pairing=pairing)
    assert fast == pytest.approx(direct, rel=1e-3, abs=1e-9)


def test_factored_refinement_is_second_order():
    # halving dt should shrink the fast-route error by about 4
    t = 0.8

    def run(dt):
        g = grid_for(t, dt)
        x = g.times()
        a = SampledFunction(g, np.exp(-x).astype(complex))
        b = SampledFunction(g, np.cos(5 * x).astype(complex))
        return simplex_integral_3((a, b), t, dt, method="factored",
                                  pairing="outer-mid")

    exact = run(0.0005)
    e1 = abs(run(0.008) - exact)
    e2 = abs(run(0.004) - exact)
    assert 2.67 <= e1 / e2 <= 6.0


def test_simplex_dispatch_errors():
    g = grid_for(0.5, 0.01)
    a = SampledFunction(g, np.ones(g.n_points, dtype=complex))
    with pytest.raises(ParameterError):
        simplex_integral_3(lambda *args: 1.0, 0.5, 0.01, method="factored",
                           pairing="outer-mid")
    with pytest.raises(ParameterError):
        simplex_integral_3((a, a), 0.5, 0.01, method="direct")
    with pytest.raises(ParameterError):
        simplex_integral_3((a, a), 0.5, 0.01, method="factored", pairing="sideways")
    with pytest.raises(ParameterError):
        simplex_integral_3((a, a), 0.5, 0.01, method="simpson")
    with pytest.raises(GridError):
        # t between grid points
        simplex_integral_3((a, a), 0.505 + 0.003, 0.01, method="factored",
                           pairing="outer-mid")


def test_halving_difference_tracks_error():
    g = UniformGrid(0.0, 0.01, 401)

    def compute(grid):
        f = sample(lambda t: np.sin(2 * t), grid)
        return cumulative_integral(f)

    est = halving_difference(compute, g)
    t = g.times()
    true_err = np.max(np.abs(
        cumulative_integral(sample(lambda x: np.sin(2 * x), g)).values
        - (1 - np.cos(2 * t)) / 2))
    # halving difference should bound the fine-grid error (roughly 3x it)
    assert est > true_err
    assert est < 10 * true_err
