"""Field equations on the lattice.

Every space-time derivative in a residual or Jacobi operator is the shared
:func:`multisym.lattice.d_mu` stencil, so :func:`jacobi_apply_L` is the exact
derivative of :func:`el_residual` and the Green solves invert it exactly.

Residual layouts:

* Lagrangian: ``(Nt, Nx, k)``, the coefficient of dq^i.
* Hamiltonian: ``(Nt, Nx, 3k)``, the dq block (k entries) followed by the dp
  block ordered ``(mu, i)``.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np

from .jets import JetPoint, ProjectableVectorField, prolong_vector_field
from .lattice import Grid, Region, d_space, divergence, gradient, integrate_region
from .models import (
    ConvergenceError,
    HamiltonianModel,
    LagrangianModel,
    _newton,
    eval_partials_L,
)

log = logging.getLogger(__name__)

FIXED_POINT_TOL = 1e-13
FIXED_POINT_MAXITER = 50
BACKGROUND_WARN = 1e-6
SINGULAR_DET = 1e-12


class SingularBlockError(RuntimeError):
    """The time-time block d2L/dq_0 dq_0 is not invertible somewhere."""


def _values(phi):
    return getattr(phi, "values", phi)


def partials_on_grid(model: LagrangianModel, phi, grid: Grid):
    phi = _values(phi)
    return eval_partials_L(model, grid.coords(), phi, gradient(phi, grid))


# ---------------------------------------------------------------------------
# residuals


def el_residual(model: LagrangianModel, phi, grid: Grid) -> np.ndarray:
    """d_mu (dL/dq^i_mu) - dL/dq^i at every node.

    The two layers at each time end see the one-sided closure and are only
    first order consistent; convergence assertions should use ``[2:-2]``.
    """
    P = partials_on_grid(model, phi, grid)
    return divergence(P.momentum, grid) - P.dq


def dw_residual(model: HamiltonianModel, phi, pi, grid: Grid) -> np.ndarray:
    """The De Donder-Weyl residual ``(dH/dq + d_mu pi^mu, dH/dp^mu - d_mu phi)``."""
    phi, pi = _values(phi), np.asarray(pi, dtype=float)
    P = model.partials(grid.coords(), phi, pi)
    dq = P.dq + divergence(pi, grid)
    dp = P.dp - np.swapaxes(gradient(phi, grid), -1, -2)
    return np.concatenate([dq, dp.reshape(dp.shape[:2] + (-1,))], axis=-1)


# ---------------------------------------------------------------------------
# actions


def action(model, phi, grid: Grid, region: Region | None = None, mode: str = "lagrangian",
           pi=None) -> float:
    """Action over a time window in one of three equivalent forms.

    ``lagrangian``: integral of L.  ``theta_L``: pullback of the
    Poincare-Cartan form, ``pi^mu d_mu phi + (L - pi^mu q_mu)``.  ``theta_H``:
    ``pi^mu d_mu phi - H`` for a Hamiltonian model and momenta ``pi``.
    """
    phi = _values(phi)
    if mode == "theta_H":
        if not isinstance(model, HamiltonianModel) or pi is None:
            raise ValueError("mode theta_H needs a Hamiltonian model and momenta")
        P = model.partials(grid.coords(), phi, pi)
        dens = np.einsum("abmi,abim->ab", pi, gradient(phi, grid)) - P.H
        return integrate_region(dens, grid, region)
    if not isinstance(model, LagrangianModel):
        raise ValueError(f"mode {mode} needs a Lagrangian model")
    qdot = gradient(phi, grid)
    if mode == "lagrangian":
        return integrate_region(model.value(grid.coords(), phi, qdot), grid, region)
    P = eval_partials_L(model, grid.coords(), phi, qdot)
    if mode == "theta_L":
        energy = P.L - np.einsum("abim,abim->ab", P.dqdot, qdot)
        dens = np.einsum("abmi,abim->ab", P.momentum, qdot) + energy
    else:
        raise ValueError(f"unknown action mode {mode!r}")
    return integrate_region(dens, grid, region)


# ---------------------------------------------------------------------------
# Cauchy solvers


def _invert_blocks(A00, where):
    det = np.linalg.det(A00)
    bad = np.abs(det) < SINGULAR_DET
    if np.any(bad):
        node = tuple(int(i) for i in np.argwhere(bad)[0])
        raise SingularBlockError(f"time block singular at {where} node {node} (det={det[bad][0]:.3e})")
    return np.linalg.inv(A00)


def _second_laplacian(f, dx):
    return (np.roll(f, -1, axis=0) - 2 * f + np.roll(f, 1, axis=0)) / dx**2


def _el_acceleration(model, x, q, dq0, dq1, d01, d11, where):
    """Solve the EL equation at one layer for the second time derivative."""
    P = eval_partials_L(model, x, q, np.stack([dq0, dq1], axis=-1))
    A, M = P.A, P.M
    rhs = (
        P.dq
        - np.einsum("...mim->...i", P.xv)
        - np.einsum("...mij,...jm->...i", M, np.stack([dq0, dq1], axis=-1))
        - np.einsum("...ij,...j->...i", A[..., 0, 1, :, :] + A[..., 1, 0, :, :], d01)
        - np.einsum("...ij,...j->...i", A[..., 1, 1, :, :], d11)
    )
    inv = _invert_blocks(A[..., 0, 0, :, :], where)
    return np.einsum("...ij,...j->...i", inv, rhs)


def solve_cauchy_lagrangian(model: LagrangianModel, grid: Grid, phi0, phidot0, phi1=None) -> np.ndarray:
    """Compact leapfrog for the Euler-Lagrange equation.

    The second layer comes from a second-order Taylor step unless ``phi1`` is
    given (exact data for the second layer).  Returns ``(Nt, Nx, k)``.
    """
    if grid.dt > grid.dx:
        warnings.warn(f"dt={grid.dt:g} exceeds dx={grid.dx:g}: leapfrog is unstable", RuntimeWarning)
    k = model.k
    phi0 = np.asarray(phi0, dtype=float).reshape(grid.Nx, k)
    phidot0 = np.asarray(phidot0, dtype=float).reshape(grid.Nx, k)
    X = grid.coords()
    dt, dx = grid.dt, grid.dx
    out = np.zeros(grid.shape + (k,))
    out[0] = phi0
    if phi1 is None:
        acc = _el_acceleration(model, X[0], phi0, phidot0, d_space(phi0[None], dx)[0],
                               d_space(phidot0[None], dx)[0], _second_laplacian(phi0, dx), "layer 0")
        out[1] = phi0 + dt * phidot0 + 0.5 * dt**2 * acc
    else:
        out[1] = np.asarray(phi1, dtype=float).reshape(grid.Nx, k)
    for a in range(1, grid.Nt - 1):
        prev, cur = out[a - 1], out[a]
        d1 = d_space(cur[None], dx)[0]
        d1_prev = d_space(prev[None], dx)[0]
        lap = _second_laplacian(cur, dx)
        nxt = 2 * cur - prev
        for _ in range(FIXED_POINT_MAXITER):
            dq0 = (nxt - prev) / (2 * dt)
            d01 = (d_space(nxt[None], dx)[0] - d1_prev) / (2 * dt)
            acc = _el_acceleration(model, X[a], cur, dq0, d1, d01, lap, f"layer {a}")
            new = 2 * cur - prev + dt**2 * acc
            change = np.max(np.abs(new - nxt))
            nxt = new
            if change <= FIXED_POINT_TOL * (1.0 + np.max(np.abs(nxt))):
                break
        else:
            raise ConvergenceError(f"leapfrog layer {a + 1}: fixed point did not converge")
        out[a + 1] = nxt
    return out


def _p1_closure(model: HamiltonianModel, x, q, p0, target, guess):
    """Solve dH/dp^1 (x, q, p0, p1) = target for p1."""
    shape = q.shape[:-1]
    k = q.shape[-1]

    def rj(u):
        P = model.partials(x, q, np.stack([p0, u], axis=-2))
        return P.dp[..., 1, :] - target, P.pp[..., 1, :, 1, :]

    return _newton(rj, guess.reshape(shape + (k,)), "momentum closure")


def _to_half(f):
    """Periodic average to half nodes b + 1/2."""
    return 0.5 * (f + np.roll(f, -1, axis=0))


def _from_half(f):
    return 0.5 * (f + np.roll(f, 1, axis=0))


def solve_cauchy_hamiltonian(model: HamiltonianModel, grid: Grid, phi0, pi0_0):
    """Staggered Stormer-Verlet scheme for the De Donder-Weyl equations.

    pi^0 lives on half time steps, pi^1 on half spatial nodes where the
    closure dH/dp^1 = (forward difference of phi) is solved.  For Hamiltonians
    whose dH/dp^0 does not involve p^1 (all built-ins) the scheme is second
    order; for Klein-Gordon it coincides with the Lagrangian leapfrog.

    Returns ``(phi, pi)`` with ``pi`` at nodes, closed with the centered d_1.
    """
    if grid.dt > grid.dx:
        warnings.warn(f"dt={grid.dt:g} exceeds dx={grid.dx:g}: leapfrog is unstable", RuntimeWarning)
    k = model.k
    dt, dx = grid.dt, grid.dx
    X = grid.coords()
    Xh = X.copy()
    Xh[..., 1] += 0.5 * dx
    phi = np.zeros(grid.shape + (k,))
    phi[0] = np.asarray(phi0, dtype=float).reshape(grid.Nx, k)
    pi0_node = np.zeros(grid.shape + (k,))
    pi0_node[0] = np.asarray(pi0_0, dtype=float).reshape(grid.Nx, k)

    def spatial_flux(a, q, p0_node):
        target = (np.roll(q, -1, axis=0) - q) / dx
        p1h = _p1_closure(model, Xh[a], _to_half(q), _to_half(p0_node), target, -target)
        return p1h

    def force(a, q, p0_node):
        p1h = spatial_flux(a, q, p0_node)
        p1_node = _from_half(p1h)
        P = model.partials(X[a], q, np.stack([p0_node, p1_node], axis=-2))
        return P.dq + (p1h - np.roll(p1h, 1, axis=0)) / dx

    half = pi0_node[0] - 0.5 * dt * force(0, phi[0], pi0_node[0])
    halves = [half]
    for a in range(0, grid.Nt - 1):
        cur = phi[a]
        p_half = halves[-1]
        # drift: phi[a+1] = phi[a] + dt dH/dp^0 at the half step
        nxt = cur + dt * p_half
        for _ in range(FIXED_POINT_MAXITER):
            qm = 0.5 * (cur + nxt)
            p1h = spatial_flux(a, cur, pi0_node[a])
            P = model.partials(0.5 * (X[a] + X[a + 1]), qm, np.stack([p_half, _from_half(p1h)], axis=-2))
            new = cur + dt * P.dp[..., 0, :]
            change = np.max(np.abs(new - nxt))
            nxt = new
            if change <= FIXED_POINT_TOL * (1.0 + np.max(np.abs(nxt))):
                break
        else:
            raise ConvergenceError(f"drift step to layer {a + 1} did not converge")
        phi[a + 1] = nxt
        if a + 1 == grid.Nt - 1:
            pi0_node[a + 1] = p_half - 0.5 * dt * force(a + 1, nxt, p_half)
            break
        # kick: pi0[a+3/2] = pi0[a+1/2] - dt (dH/dq + d_1 pi^1), node pi0 = mean of the halves
        new_half = p_half - dt * force(a + 1, nxt, p_half)
        for _ in range(FIXED_POINT_MAXITER):
            node = 0.5 * (p_half + new_half)
            trial = p_half - dt * force(a + 1, nxt, node)
            change = np.max(np.abs(trial - new_half))
            new_half = trial
            if change <= FIXED_POINT_TOL * (1.0 + np.max(np.abs(new_half))):
                break
        else:
            raise ConvergenceError(f"kick step at layer {a + 1} did not converge")
        pi0_node[a + 1] = 0.5 * (p_half + new_half)
        halves.append(new_half)
    pi1 = np.zeros_like(pi0_node)
    d1 = d_space(phi, dx)
    for a in range(grid.Nt):
        pi1[a] = _p1_closure(model, X[a], phi[a], pi0_node[a], d1[a], -d1[a])
    return phi, np.stack([pi0_node, pi1], axis=-2)


# ---------------------------------------------------------------------------
# Jacobi operators


@dataclass(frozen=True)
class JacobiBlocks:
    """Coefficients of the Jacobi operator at every node.

    ``A[..., mu, nu, i, j] = d2L/dq^j_nu dq^i_mu``, ``M[..., mu, i, j] = d2L/dq^j dq^i_mu``,
    ``C[..., i, j] = d2L/dq^i dq^j``.  The operator is applied in divergence form::

        (J u)_i = d_mu (M^mu_ij u^j + A^{mu nu}_ij d_nu u^j) - C_ij u^j - M^nu_ji d_nu u^j
    """

    grid: Grid
    A: np.ndarray
    M: np.ndarray
    C: np.ndarray
    background_residual: float

    @property
    def k(self) -> int:
        return self.C.shape[-1]

    @property
    def B(self) -> np.ndarray:
        """First-order coefficient of the non-divergence form, M^mu_ij - M^mu_ji."""
        return self.M - np.swapaxes(self.M, -1, -2)

    def apply(self, u) -> np.ndarray:
        g = self.grid
        u = np.asarray(u, dtype=float)
        du = gradient(u, g)  # [..., j, nu]
        flux = np.einsum("abmij,abj->abmi", self.M, u) + np.einsum("abmnij,abjn->abmi", self.A, du)
        return (
            divergence(flux, g)
            - np.einsum("abij,abj->abi", self.C, u)
            - np.einsum("abnji,abjn->abi", self.M, du)
        )


def assemble_jacobi_blocks(model: LagrangianModel, phi, grid: Grid) -> JacobiBlocks:
    phi = _values(phi)
    P = partials_on_grid(model, phi, grid)
    res = divergence(P.momentum, grid) - P.dq
    r = float(np.max(np.abs(res[1:-1]), initial=0.0))
    if r > BACKGROUND_WARN:
        log.info("Jacobi background is not a discrete solution (interior residual %.3e)", r)
    return JacobiBlocks(grid, np.ascontiguousarray(P.A), np.ascontiguousarray(P.M), P.qq.copy(), r)


def jacobi_apply_L(model: LagrangianModel, phi, dphi, grid: Grid) -> np.ndarray:
    """Linearized Euler-Lagrange operator, evaluated straight from the partials."""
    P = partials_on_grid(model, phi, grid)
    dphi = _values(dphi)
    ddphi = gradient(dphi, grid)  # [j, nu]
    # variation of the momentum field, laid out [mu, i]
    dmom = np.einsum("abjim,abj->abmi", P.qv, dphi) + np.einsum("abimjn,abjn->abmi", P.vv, ddphi)
    dLq = np.einsum("abij,abj->abi", P.qq, dphi) + np.einsum("abijn,abjn->abi", P.qv, ddphi)
    return divergence(dmom, grid) - dLq


def jacobi_apply_H(model: HamiltonianModel, phi, pi, dphi, dpi, grid: Grid) -> np.ndarray:
    """Linearized De Donder-Weyl operator, same layout as :func:`dw_residual`."""
    phi, dphi = _values(phi), _values(dphi)
    P = model.partials(grid.coords(), phi, pi)
    dq = (
        np.einsum("abij,abj->abi", P.qq, dphi)
        + np.einsum("abimj,abmj->abi", P.qp, dpi)
        + divergence(dpi, grid)
    )
    dp = (
        np.einsum("abjmi,abj->abmi", P.qp, dphi)
        + np.einsum("abminj,abnj->abmi", P.pp, dpi)
        - np.swapaxes(gradient(dphi, grid), -1, -2)
    )
    return np.concatenate([dq, dp.reshape(dp.shape[:2] + (-1,))], axis=-1)


# ---------------------------------------------------------------------------
# contraction of the multisymplectic form with prolonged vertical fields


def contraction_L(model: LagrangianModel, phi, grid: Grid, V: ProjectableVectorField) -> np.ndarray:
    """Pullback by the first jet of phi of the contraction of omega_L with J^1 V.

    ``omega_L = -d theta_L`` with ``theta_L = pi^mu dq ^ d^n x_mu + p d^n x``,
    ``pi = dL/dq_mu``, ``p = L - pi q_mu``.  Each piece is evaluated
    separately; the terms carrying derivatives of V must cancel.
    """
    phi = _values(phi)
    X = grid.coords()
    qdot = gradient(phi, grid)
    P = eval_partials_L(model, X, phi, qdot)
    Y = prolong_vector_field(V, JetPoint(X, phi, qdot))
    Vq, W = Y.fiber, Y.jet  # [i], [i, mu]
    # action of J^1 V on the momentum coordinates and on L
    Ypi = np.einsum("abjim,abj->abmi", P.qv, Vq) + np.einsum("abimjn,abjn->abmi", P.vv, W)
    YL = np.einsum("abi,abi->ab", P.dq, Vq) + np.einsum("abim,abim->ab", P.dqdot, W)
    Yp = YL - np.einsum("abmi,abim->ab", Ypi, qdot) - np.einsum("abim,abim->ab", P.dqdot, W)
    # i_Y (dq ^ dpi ^ d^n x_mu) pulled back, then minus i_Y (dp ^ d^n x)
    term_dpi = np.einsum("abi,abi->ab", Vq, divergence(P.momentum, grid))
    term_dq = np.einsum("abmi,abim->ab", Ypi, qdot)
    return term_dpi - term_dq - Yp


def contraction_H(model: HamiltonianModel, phi, pi, grid: Grid, Vq, Vp) -> np.ndarray:
    """Pullback by (phi, pi) of the contraction of omega_H with the vertical field (Vq, Vp).

    ``omega_H = -d theta_H`` with ``theta_H = pi^mu dq ^ d^n x_mu - H d^n x``.
    """
    phi = _values(phi)
    P = model.partials(grid.coords(), phi, pi)
    term_dp = np.einsum("abi,abi->ab", Vq, divergence(pi, grid))
    term_dq = np.einsum("abmi,abim->ab", Vp, gradient(phi, grid))
    YH = np.einsum("abi,abi->ab", P.dq, Vq) + np.einsum("abmi,abmi->ab", P.dp, Vp)
    return term_dp - term_dq + YH
