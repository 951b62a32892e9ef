"""Symplectic current, canonical one-form and symplectic form on constant-t slices.

Slices carry the future-pointing weight ``+dx`` on the time component, so
``Omega(u, v) = sum_b J^0(u, v) dx`` on the chosen layer.
"""

from __future__ import annotations

import numpy as np

from .dynamics import JacobiBlocks, action, assemble_jacobi_blocks, partials_on_grid
from .lattice import Grid, Region, divergence, gradient, integrate_slice


def _v(a):
    return np.asarray(getattr(a, "values", a), dtype=float)


def induced_momentum(blocks: JacobiBlocks, dphi) -> np.ndarray:
    """Linearized Legendre map: delta pi^mu_i = M^mu_ij dphi^j + A^{mu nu}_ij d_nu dphi^j."""
    dphi = _v(dphi)
    d = gradient(dphi, blocks.grid)
    return np.einsum("abmij,abj->abmi", blocks.M, dphi) + np.einsum("abmnij,abjn->abmi", blocks.A, d)


def current_H(dphi1, dpi1, dphi2, dpi2) -> np.ndarray:
    """J^mu = dphi1 . dpi2^mu - dphi2 . dpi1^mu, shape (..., 2)."""
    dphi1, dphi2 = np.asarray(dphi1, dtype=float), np.asarray(dphi2, dtype=float)
    dpi1, dpi2 = np.asarray(dpi1, dtype=float), np.asarray(dpi2, dtype=float)
    return np.einsum("...i,...mi->...m", dphi1, dpi2) - np.einsum("...i,...mi->...m", dphi2, dpi1)


def current_L(blocks: JacobiBlocks, dphi1, dphi2) -> np.ndarray:
    """Symplectic current through the induced momentum variations."""
    return current_H(_v(dphi1), induced_momentum(blocks, dphi1), _v(dphi2), induced_momentum(blocks, dphi2))


def current_L_expanded(blocks: JacobiBlocks, dphi1, dphi2) -> np.ndarray:
    """Same current written as A (u d v - v d u) + (M - M^T) u v."""
    u, v = _v(dphi1), _v(dphi2)
    g = blocks.grid
    du, dv = gradient(u, g), gradient(v, g)
    kinetic = np.einsum("abmnij,abi,abjn->abm", blocks.A, u, dv) - np.einsum("abmnij,abi,abjn->abm", blocks.A, v, du)
    return kinetic + np.einsum("abmij,abi,abj->abm", blocks.B, u, v)


def theta_slice(momentum, dphi, grid: Grid, a: int) -> float:
    """Theta on layer a: integral of pi^0 . dphi (momentum laid out (Nt, Nx, 2, k))."""
    momentum = np.asarray(momentum, dtype=float)
    return integrate_slice(np.einsum("bi,bi->b", momentum[a, :, 0], _v(dphi)[a]), grid)


def omega_slice(current, grid: Grid, a: int) -> float:
    return integrate_slice(np.asarray(current)[a, :, 0], grid)


def omega_all_slices(current, grid: Grid) -> np.ndarray:
    return np.asarray(current)[:, :, 0].sum(axis=1) * grid.dx


def current_divergence(blocks: JacobiBlocks, dphi1, dphi2):
    """Return (d_mu J^mu, dphi1 . J dphi2 - dphi2 . J dphi1).

    The two agree up to the truncation error of the product rule.
    """
    u, v = _v(dphi1), _v(dphi2)
    div = divergence(current_L(blocks, u, v), blocks.grid)
    rhs = np.einsum("abi,abi->ab", u, blocks.apply(v)) - np.einsum("abi,abi->ab", v, blocks.apply(u))
    return div, rhs


def slice_independence_report(blocks: JacobiBlocks, dphi1, dphi2, slices) -> dict:
    J = current_L(blocks, dphi1, dphi2)
    om = np.array([omega_slice(J, blocks.grid, a) for a in slices])
    dev = float(om.max() - om.min()) if om.size else 0.0
    scale = float(np.max(np.abs(om))) if om.size else 0.0
    return {
        "slices": [int(a) for a in slices],
        "omega": om.tolist(),
        "max_deviation": dev,
        "relative_deviation": dev / scale if scale > 0 else 0.0,
    }


def theta_action_variation_check(model, phi, dphi, grid: Grid, a1: int, a2: int, eps: float = 1e-6) -> dict:
    """Compare Theta(a2) - Theta(a1) with the central difference of the action over [a1, a2]."""
    phi, dphi = _v(phi), _v(dphi)
    mom = lagrangian_momentum(model, phi, grid)
    lhs = theta_slice(mom, dphi, grid, a2) - theta_slice(mom, dphi, grid, a1)
    region = Region(a1, a2)
    rhs = (action(model, phi + eps * dphi, grid, region) - action(model, phi - eps * dphi, grid, region)) / (2 * eps)
    scale = max(abs(lhs), abs(rhs))
    return {
        "theta_difference": lhs,
        "action_derivative": rhs,
        "relative_mismatch": abs(lhs - rhs) / scale if scale > 0 else 0.0,
    }


def lagrangian_momentum(model, phi, grid: Grid) -> np.ndarray:
    """pi^mu_i = dL/dq^i_mu along phi, shape (Nt, Nx, 2, k)."""
    return partials_on_grid(model, _v(phi), grid).momentum


def slice_gram_matrix(model, phi, grid: Grid, a: int) -> np.ndarray:
    """Matrix of Omega on Cauchy data (dphi, d_0 dphi) at layer a, size 2 Nx k.

    Uses the pointwise blocks on layer a: J^0 = u.(M^0 v + A^00 vdot + A^01 d_1 v) - (u <-> v).
    """
    blocks = assemble_jacobi_blocks(model, phi, grid)
    k, Nx = blocks.k, grid.Nx
    A00, A01, M0 = blocks.A[a, :, 0, 0], blocks.A[a, :, 0, 1], blocks.M[a, :, 0]
    n = Nx * k
    eye = np.eye(n).reshape(n, Nx, k)
    d1 = (np.roll(eye, -1, axis=1) - np.roll(eye, 1, axis=1)) / (2 * grid.dx)
    # momentum of basis data: field part and velocity part
    pf = np.einsum("bij,nbj->nbi", M0, eye) + np.einsum("bij,nbj->nbi", A01, d1)
    pv = np.einsum("bij,nbj->nbi", A00, eye)
    f = eye.reshape(n, n)
    PF, PV = pf.reshape(n, n), pv.reshape(n, n)
    Z = np.zeros((n, n))
    # data vector (u, udot): p(u, udot) = PF^T u + PV^T udot, Omega = dx (u1 . p2 - u2 . p1)
    Pm = np.block([[PF.T, PV.T]])  # n x 2n, momentum as a linear function of the data
    Fm = np.block([[f.T, Z]])       # n x 2n, field value
    return grid.dx * (Fm.T @ Pm - Pm.T @ Fm)
