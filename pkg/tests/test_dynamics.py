import warnings

import numpy as np
import pytest

from multisym.dynamics import (
    SingularBlockError,
    action,
    assemble_jacobi_blocks,
    contraction_H,
    contraction_L,
    dw_residual,
    el_residual,
    jacobi_apply_H,
    jacobi_apply_L,
    solve_cauchy_hamiltonian,
    solve_cauchy_lagrangian,
)
from multisym.jets import random_vertical_field
from multisym.lattice import Grid, Region, gradient
from multisym.models import degenerate_model, explicit_hamiltonian, klein_gordon, legendre_forward, phi4, sigma_model
from multisym.jets import JetPoint


def smooth_field(grid, k=1, amp=0.3):
    T, X = grid.mesh()
    return np.stack([amp * np.cos(X + 0.7 * i) * np.cos(0.9 * T) + 0.1 * np.sin(2 * X - T) for i in range(k)], axis=-1)


def test_constant_field_residual_is_mass_term():
    g = Grid.periodic(8, 8)
    r = el_residual(klein_gordon(1.5), np.full(g.shape + (1,), 0.4), g)
    np.testing.assert_allclose(r, 1.5**2 * 0.4, rtol=1e-14)


def test_plane_wave_residual_is_second_order():
    # cos(x - t) solves the massless equation; the stencil error shrinks by four per halving
    errs = []
    for n in (32, 64, 128):
        g = Grid.periodic(n, n, cfl=0.5)
        T, X = g.mesh()
        errs.append(np.abs(el_residual(klein_gordon(0.0), np.cos(X - T)[..., None], g)[2:-2]).max())
    ratios = np.array(errs[:-1]) / np.array(errs[1:])
    assert np.all((ratios > 3.4) & (ratios < 4.6)), ratios


def test_dw_residual_vanishes_on_exact_discrete_momenta():
    g = Grid.periodic(10, 12)
    phi = smooth_field(g)
    Hm = explicit_hamiltonian(klein_gordon(1.0))
    pi = legendre_forward(klein_gordon(1.0), JetPoint(g.coords(), phi, gradient(phi, g))).p
    r = dw_residual(Hm, phi, pi, g)
    # the dp block is closed exactly by the discrete gradient; the dq block is the EL residual
    np.testing.assert_allclose(r[..., 1:], 0.0, atol=1e-14)
    np.testing.assert_allclose(r[..., 0], el_residual(klein_gordon(1.0), phi, g)[..., 0], atol=1e-12)


def test_action_modes_agree(rng):
    g = Grid.periodic(16, 16)
    model = sigma_model(0.3)
    phi = 0.4 * rng.standard_normal(g.shape + (2,))
    S_L = action(model, phi, g)
    assert action(model, phi, g, mode="theta_L") == pytest.approx(S_L, rel=1e-12)
    pi = legendre_forward(model, JetPoint(g.coords(), phi, gradient(phi, g))).p
    assert action(explicit_hamiltonian(model), phi, g, mode="theta_H", pi=pi) == pytest.approx(S_L, rel=1e-10)
    assert action(model, phi, g, Region(3, 3)) != pytest.approx(S_L)
    with pytest.raises(ValueError):
        action(model, phi, g, mode="bogus")
    with pytest.raises(ValueError):
        action(model, phi, g, mode="theta_H")


def test_unit_cfl_massless_leapfrog_is_exact():
    g = Grid.periodic(40, 32)
    T, X = g.mesh()
    exact = np.sin(X - T) + 0.5 * np.cos(2 * (X + T))
    u = solve_cauchy_lagrangian(klein_gordon(0.0), g, exact[0], np.zeros(32), phi1=exact[1])
    np.testing.assert_allclose(u[..., 0], exact, atol=1e-13)


def test_zero_data_stays_zero():
    g = Grid.periodic(12, 16)
    for model in (klein_gordon(1.0), phi4(1.0, 2.0), sigma_model(0.3)):
        u = solve_cauchy_lagrangian(model, g, np.zeros((16, model.k)), np.zeros((16, model.k)))
        assert np.all(u == 0)


def test_standing_mode_converges():
    errs = []
    for r in range(3):
        g = Grid.periodic(8 * 2**r + 1, 16 * 2**r, cfl=0.5)
        T, X = g.mesh()
        exact = np.cos(X) * np.cos(np.sqrt(2) * T)
        u = solve_cauchy_lagrangian(klein_gordon(1.0), g, exact[0], np.zeros(g.Nx))
        errs.append(np.abs(u[..., 0] - exact).max())
    assert errs[0] / errs[1] > 3.4 and errs[1] / errs[2] > 3.4


def test_hamiltonian_solver_matches_lagrangian_for_klein_gordon():
    g = Grid.periodic(30, 32, cfl=0.5)
    x = g.x
    phi0, v0 = 0.3 * np.cos(x), 0.2 * np.sin(2 * x)
    u = solve_cauchy_lagrangian(klein_gordon(1.0), g, phi0, v0)
    phi, pi = solve_cauchy_hamiltonian(explicit_hamiltonian(klein_gordon(1.0)), g, phi0, v0)
    assert np.abs(phi - u).max() <= 1e-8
    assert pi.shape == g.shape + (2, 1)


def test_sigma_solver_conserves_nothing_it_should_not():
    # a nonlinear evolution stays bounded and is a near-solution of the wide-stencil residual
    g = Grid.periodic(40, 32, cfl=0.5)
    x = g.x
    u = solve_cauchy_lagrangian(sigma_model(0.3), g, np.stack([0.3 * np.cos(x), 0.2 * np.sin(x)], -1), np.zeros((32, 2)))
    assert np.isfinite(u).all() and np.abs(u).max() < 1.0
    assert np.abs(el_residual(sigma_model(0.3), u, g)[1:-1]).max() < 2e-2


def test_klein_gordon_jacobi_is_the_residual(rng):
    g = Grid.periodic(12, 16)
    d = rng.standard_normal(g.shape + (1,))
    np.testing.assert_allclose(jacobi_apply_L(klein_gordon(1.0), smooth_field(g), d, g),
                               el_residual(klein_gordon(1.0), d, g), atol=1e-12)


@pytest.mark.parametrize("model", [sigma_model(0.3), phi4(1.0, 2.0)], ids=["sigma", "phi4"])
def test_jacobi_operator_matches_finite_differences(model, rng):
    g = Grid.periodic(16, 16)
    phi = smooth_field(g, model.k)
    d = rng.standard_normal(phi.shape)
    eps = 1e-6
    fd = (el_residual(model, phi + eps * d, g) - el_residual(model, phi - eps * d, g)) / (2 * eps)
    direct = jacobi_apply_L(model, phi, d, g)
    assert np.abs(direct - fd).max() <= 1e-5 * np.abs(fd).max()
    blocks = assemble_jacobi_blocks(model, phi, g)
    np.testing.assert_allclose(blocks.apply(d), direct, atol=1e-10 * np.abs(direct).max())


def test_hamiltonian_jacobi_matches_finite_differences(rng):
    g = Grid.periodic(12, 16)
    Hm = explicit_hamiltonian(sigma_model(0.3))
    phi = smooth_field(g, 2)
    pi = 0.3 * rng.standard_normal(g.shape + (2, 2))
    dphi, dpi = rng.standard_normal(phi.shape), rng.standard_normal(pi.shape)
    eps = 1e-6
    fd = (dw_residual(Hm, phi + eps * dphi, pi + eps * dpi, g) - dw_residual(Hm, phi - eps * dphi, pi - eps * dpi, g)) / (2 * eps)
    assert np.abs(jacobi_apply_H(Hm, phi, pi, dphi, dpi, g) - fd).max() <= 1e-5 * np.abs(fd).max()


def test_klein_gordon_blocks_are_constant():
    g = Grid.periodic(10, 12)
    b = assemble_jacobi_blocks(klein_gordon(0.5), smooth_field(g), g)
    np.testing.assert_array_equal(b.A[..., 0, 0, 0, 0], 1.0)
    np.testing.assert_array_equal(b.A[..., 1, 1, 0, 0], -1.0)
    np.testing.assert_allclose(b.C, -0.25)
    assert np.all(b.M == 0) and np.all(b.B == 0)


def test_contractions_equal_residual_pairings(rng):
    g = Grid.periodic(12, 16)
    model = sigma_model(0.3)
    phi = smooth_field(g, 2)
    res = el_residual(model, phi, g)
    for _ in range(3):
        V = random_vertical_field(rng, 2, 2)
        rhs = np.einsum("abi,abi->ab", res, V.fiber(g.coords(), phi))
        np.testing.assert_allclose(contraction_L(model, phi, g, V), rhs, atol=1e-10 * np.abs(rhs).max())
    Hm = explicit_hamiltonian(model)
    pi = 0.3 * rng.standard_normal(g.shape + (2, 2))
    Vq, Vp = rng.standard_normal(phi.shape), rng.standard_normal(pi.shape)
    r = dw_residual(Hm, phi, pi, g)
    rhs = np.einsum("abi,abi->ab", Vq, r[..., :2]) + np.einsum("abi,abi->ab", Vp.reshape(g.shape + (-1,)), r[..., 2:])
    np.testing.assert_allclose(contraction_H(Hm, phi, pi, g, Vq, Vp), rhs, atol=1e-10 * np.abs(rhs).max())


def test_unstable_time_step_warns():
    g = Grid.periodic(6, 8, cfl=1.5)
    with pytest.warns(RuntimeWarning):
        solve_cauchy_lagrangian(klein_gordon(), g, np.zeros(8), np.zeros(8))
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        solve_cauchy_lagrangian(klein_gordon(), Grid.periodic(6, 8), np.zeros(8), np.zeros(8))


def test_degenerate_model_has_singular_time_block():
    g = Grid.periodic(6, 8)
    with pytest.raises(SingularBlockError):
        solve_cauchy_lagrangian(degenerate_model(), g, np.zeros(8), np.zeros(8))
