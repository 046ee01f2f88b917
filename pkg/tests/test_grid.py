import numpy as np
import pytest

from etlab.grid import build_grid, div_edge, grad_edge, integrate, second_diff


def test_build_grid_uniform_partition():
    g = build_grid(4, 1.0)
    assert g.h == pytest.approx(0.25)
    assert np.allclose(g.cell_centers, [0.125, 0.375, 0.625, 0.875])
    assert g.h * g.n_cells == pytest.approx(g.length, rel=1e-15)


def test_build_grid_spacing():
    assert build_grid(10, 2.0).h == pytest.approx(0.2)


@pytest.mark.parametrize("n_cells,length", [(2, 1.0), (0, 1.0), (8, 0.0), (8, -2.0)])
def test_build_grid_rejects_bad_arguments(n_cells, length):
    with pytest.raises(ValueError):
        build_grid(n_cells, length)


def test_grad_edge_constant_and_linear():
    g = build_grid(8, 2.0)
    assert np.all(grad_edge(g, np.full(8, 3.7)) == 0.0)
    a = 1.3
    assert np.allclose(grad_edge(g, a * g.cell_centers), a, rtol=1e-13)


def test_grad_edge_hand_difference():
    g = build_grid(3, 1.0)
    assert np.allclose(grad_edge(g, np.array([0.0, 1.0, 0.0])), [3.0, -3.0])


def test_grad_edge_shape_mismatch():
    g = build_grid(5, 1.0)
    with pytest.raises(ValueError):
        grad_edge(g, np.zeros(4))


def test_div_edge_zero_flux():
    g = build_grid(6, 1.0)
    assert np.all(div_edge(g, np.zeros(5)) == 0.0)


def test_div_edge_conserves_quadrature():
    g = build_grid(9, 1.7)
    rng = np.random.default_rng(3)
    for _ in range(20):
        flux = rng.normal(size=8)
        assert abs(integrate(g, div_edge(g, flux))) < 1e-14


def test_div_edge_shape_mismatch():
    g = build_grid(5, 1.0)
    with pytest.raises(ValueError):
        div_edge(g, np.zeros(5))


def test_adjoint_identity_against_direct_summation():
    # sum_i h div(F)_i psi_i == -sum_j h F_j grad(psi)_j
    g = build_grid(13, 2.3)
    rng = np.random.default_rng(7)
    for _ in range(50):
        psi = rng.normal(size=13)
        flux = rng.normal(size=12)
        lhs = g.h * np.sum(div_edge(g, flux) * psi)
        rhs = -g.h * np.sum(flux * grad_edge(g, psi))
        assert abs(lhs - rhs) < 1e-12


def test_second_diff_constant_is_zero():
    g = build_grid(7, 1.0)
    assert np.all(second_diff(g, np.full(7, 2.0)) == 0.0)


def test_second_diff_quadratic_interior():
    # Taylor: the centered second difference of x^2 is exactly 2.
    g = build_grid(16, 1.0)
    out = second_diff(g, g.cell_centers**2)
    assert np.allclose(out[1:-1], 2.0, rtol=1e-9)


def test_second_diff_matches_div_grad_composition():
    g = build_grid(11, 1.4)
    rng = np.random.default_rng(11)
    u = rng.normal(size=11)
    assert np.allclose(second_diff(g, u), div_edge(g, grad_edge(g, u)), rtol=1e-13)


def test_second_diff_form_annihilates_constants():
    g = build_grid(10, 1.0)
    rng = np.random.default_rng(5)
    ones = np.ones(10)
    for _ in range(20):
        u = rng.normal(size=10)
        b = g.h * np.sum(second_diff(g, u) * second_diff(g, ones))
        assert b == 0.0


def test_integrate_examples():
    assert integrate(build_grid(8, 2.0), np.ones(8)) == pytest.approx(2.0)
    assert integrate(build_grid(3, 3.0), np.array([1.0, 2.0, 3.0])) == pytest.approx(6.0)


def test_integrate_linear_in_scaling():
    g = build_grid(12, 1.0)
    rng = np.random.default_rng(1)
    f = rng.normal(size=12)
    assert integrate(g, 2.5 * f) == pytest.approx(2.5 * integrate(g, f), rel=1e-13)
