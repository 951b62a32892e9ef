"""Localized functionals and the covariant (Peierls) bracket.

A functional exposes ``value(phi)`` and ``derivative(phi)``; the derivative is
the grid section F' with ``dF[phi](v) = <F', v>`` for the lattice pairing, and
it must vanish on the two layers at each end of the time window so that the
Green solves accept it as a source.

Sign convention: with slices weighted by the future-pointing ``+dx`` and the
causal Green function ``retarded - advanced``, the lattice gives
``Omega(X_F, v) = OMEGA_SIGN * <F', v>`` for every Jacobi solution v.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import comb
from typing import Callable

import numpy as np

from .dynamics import JacobiBlocks, assemble_jacobi_blocks
from .green import GreenKernel, green_causal_apply, green_retarded_apply
from .lattice import Grid, check_interior_support, d_time, divergence, gradient, integrate_region, pairing
from .models import LagrangianModel, eval_partials_L
from .symplectic import current_L, omega_slice

OMEGA_SIGN = -1.0
WINDOW_TOL = 1e-12


def _v(a):
    return np.asarray(getattr(a, "values", a), dtype=float)


def time_window(grid: Grid, start: int, coeffs) -> np.ndarray:
    """Temporal window with the given shape starting at layer ``start``, normalized so sum w dt = 1."""
    c = np.asarray(coeffs, dtype=float)
    w = np.zeros(grid.Nt)
    if start < 0 or start + c.size > grid.Nt:
        raise ValueError("window does not fit in the grid")
    w[start : start + c.size] = c
    return w / (w.sum() * grid.dt)


def binomial_window(grid: Grid, start: int, order: int) -> np.ndarray:
    return time_window(grid, start, [comb(order, j) for j in range(order + 1)])


def _check_window(w, grid: Grid, margin: int, normalized: bool):
    w = np.asarray(w, dtype=float)
    if w.shape[0] != grid.Nt:
        raise ValueError("window must have one entry per time layer")
    if np.any(w[:margin] != 0) or np.any(w[grid.Nt - margin :] != 0):
        raise ValueError(f"window must vanish on the first and last {margin} layers")
    if normalized and abs(w.sum() * grid.dt - 1.0) > WINDOW_TOL:
        raise ValueError("temporal window must integrate to 1")
    return w


class SmearedField:
    """F[phi] = integral of w(t) f_i(x) phi^i."""

    kind = "smeared_field"

    def __init__(self, grid: Grid, weight, window):
        self.grid = grid
        self.weight = np.asarray(weight, dtype=float).reshape(grid.Nx, -1)
        self.window = _check_window(window, grid, 2, True)

    def _wf(self):
        return self.window[:, None, None] * self.weight[None]

    def value(self, phi) -> float:
        return pairing(self._wf(), _v(phi), self.grid)

    def derivative(self, phi) -> np.ndarray:
        return self._wf() + 0.0 * _v(phi)


class SmearedVelocity:
    """F[phi] = integral of w(t) g_i(x) d_0 phi^i; derivative -d_0(w g)."""

    kind = "smeared_velocity"

    def __init__(self, grid: Grid, weight, window):
        self.grid = grid
        self.weight = np.asarray(weight, dtype=float).reshape(grid.Nx, -1)
        self.window = _check_window(window, grid, 3, True)

    def _wg(self):
        return self.window[:, None, None] * self.weight[None]

    def value(self, phi) -> float:
        return pairing(self._wg(), d_time(_v(phi), self.grid.dt), self.grid)

    def derivative(self, phi) -> np.ndarray:
        out = -d_time(self._wg(), self.grid.dt) + 0.0 * _v(phi)
        check_interior_support(out, self.grid, "functional derivative")
        return out


class LocalDensity:
    """F[phi] = integral of w(t, x) F(x, phi, d phi) with F given as an AD density."""

    kind = "local_density"

    def __init__(self, grid: Grid, density: Callable, window, k: int = 1):
        self.grid = grid
        w = np.asarray(window, dtype=float)
        if w.ndim == 1:
            w = np.broadcast_to(w[:, None], grid.shape)
        _check_window(w, grid, 3, False)
        self.window = np.array(w)
        self.model = LagrangianModel("local_density", k, density)

    def value(self, phi) -> float:
        phi = _v(phi)
        F = self.model.value(self.grid.coords(), phi, gradient(phi, self.grid))
        return integrate_region(self.window * F, self.grid)

    def derivative(self, phi) -> np.ndarray:
        phi = _v(phi)
        P = eval_partials_L(self.model, self.grid.coords(), phi, gradient(phi, self.grid))
        w = self.window
        out = w[..., None] * P.dq - divergence(w[..., None, None] * P.momentum, self.grid)
        check_interior_support(out, self.grid, "functional derivative")
        return out


class ConstantFunctional:
    kind = "constant"

    def __init__(self, grid: Grid, c: float, k: int = 1):
        self.grid, self.c, self.k = grid, float(c), k

    def value(self, phi) -> float:
        return self.c

    def derivative(self, phi) -> np.ndarray:
        return np.zeros_like(_v(phi))


class ProductFunctional:
    """(F G)[phi] = F[phi] G[phi], derivative by the product rule."""

    kind = "product"

    def __init__(self, F, G):
        self.F, self.G = F, G
        self.grid = F.grid

    def value(self, phi) -> float:
        return self.F.value(phi) * self.G.value(phi)

    def derivative(self, phi) -> np.ndarray:
        return self.F.derivative(phi) * self.G.value(phi) + self.F.value(phi) * self.G.derivative(phi)


def smeared_field(grid, weight, window):
    return SmearedField(grid, weight, window)


def smeared_velocity(grid, weight, window):
    return SmearedVelocity(grid, weight, window)


def local_density(grid, density, window, k: int = 1):
    return LocalDensity(grid, density, window, k)


def functional_eval(F, phi) -> float:
    return F.value(phi)


def functional_derivative(F, phi) -> np.ndarray:
    return F.derivative(phi)


# ---------------------------------------------------------------------------
# Hamiltonian vector fields and brackets


def _blocks(model, phi, grid, blocks):
    return blocks if blocks is not None else assemble_jacobi_blocks(model, _v(phi), grid)


def hamiltonian_vector_field(model, phi, F, grid: Grid, blocks: JacobiBlocks | None = None) -> np.ndarray:
    """X_F = causal Green function applied to F'."""
    return green_causal_apply(_blocks(model, phi, grid, blocks), F.derivative(phi))


@dataclass
class BracketReport:
    value: float                    # <F', X_G>
    minus_g_xf: float               # -<G', X_F>
    double_convolution: float       # sum F' G G' over both arguments
    formula_spread: float           # max pairwise difference of the three formulas
    antisymmetry_residual: float    # |{F,G} + {G,F}|
    omega_residual: float           # |Omega(X_F, X_G) - OMEGA_SIGN {F,G}|
    scale: float                    # <|F'|, |X_G|>, the size the residuals are compared to
    omega_sign: float = OMEGA_SIGN
    extras: dict = field(default_factory=dict)


def peierls_bracket(model, phi, F, G, grid: Grid, blocks: JacobiBlocks | None = None,
                    omega_layer: int | None = None, kernel: GreenKernel | None = None) -> BracketReport:
    """Evaluate {F, G} three ways.

    The double convolution uses ``kernel`` when one is supplied (see
    ``materialize_kernel``); otherwise it is formed from retarded solves as
    ``<F', G_ret G'> - <G_ret F', G'>``, which relies on reciprocity.
    """
    B = _blocks(model, phi, grid, blocks)
    f, g = F.derivative(phi), G.derivative(phi)
    XF, XG = green_causal_apply(B, f), green_causal_apply(B, g)
    v1 = pairing(f, XG, grid)
    gf = pairing(g, XF, grid)
    v2 = -gf
    if kernel is not None:
        if kernel.kind != "causal":
            raise ValueError("double convolution needs the causal kernel")
        v3 = float(f.reshape(-1) @ kernel.matrix() @ g.reshape(-1)) * (grid.dt * grid.dx) ** 2
    else:
        v3 = pairing(f, green_retarded_apply(B, g), grid) - pairing(green_retarded_apply(B, f), g, grid)
    vals = np.array([v1, v2, v3])
    layer = grid.Nt // 2 if omega_layer is None else omega_layer
    om = omega_slice(current_L(B, XF, XG), grid, layer)
    return BracketReport(
        value=v1,
        minus_g_xf=v2,
        double_convolution=v3,
        formula_spread=float(vals.max() - vals.min()),
        antisymmetry_residual=abs(v1 + gf),
        omega_residual=abs(om - OMEGA_SIGN * v1),
        scale=pairing(np.abs(f), np.abs(XG), grid),
        extras={"omega": om},
    )


def bracket_value(model, phi, F, G, grid: Grid, blocks: JacobiBlocks | None = None) -> float:
    B = _blocks(model, phi, grid, blocks)
    return pairing(F.derivative(phi), green_causal_apply(B, G.derivative(phi)), grid)


def omega_duality_check(model, phi, F, dphi, grid: Grid, layer: int | None = None,
                        blocks: JacobiBlocks | None = None) -> dict:
    """Compare Omega(X_F, dphi) on one slice with OMEGA_SIGN * <F', dphi>."""
    B = _blocks(model, phi, grid, blocks)
    dphi = _v(dphi)
    f = F.derivative(phi)
    XF = green_causal_apply(B, f)
    layer = grid.Nt // 2 if layer is None else layer
    om = omega_slice(current_L(B, XF, dphi), grid, layer)
    pr = pairing(f, dphi, grid)
    scale = max(abs(pr), abs(om))
    return {
        "omega": om,
        "pairing": pr,
        "sign": OMEGA_SIGN,
        "layer": layer,
        "residual": abs(om - OMEGA_SIGN * pr) / scale if scale > 0 else 0.0,
    }


class _BracketFunctional:
    """{G, H} regarded as a functional of the background, for finite differencing."""

    def __init__(self, model, G, H, grid):
        self.model, self.G, self.H, self.grid = model, G, H, grid

    def value(self, phi) -> float:
        return bracket_value(self.model, phi, self.G, self.H, self.grid)


def _outer_bracket(model, phi, F, inner, grid, eps):
    # {F, K} = <F', X_K> = -dK(X_F)
    XF = hamiltonian_vector_field(model, phi, F, grid)
    phi = _v(phi)
    return -(inner.value(phi + eps * XF) - inner.value(phi - eps * XF)) / (2 * eps)


def jacobi_identity_check(model, phi, F, G, H, grid: Grid, eps: float = 1e-5) -> dict:
    terms = [
        _outer_bracket(model, phi, F, _BracketFunctional(model, G, H, grid), grid, eps),
        _outer_bracket(model, phi, G, _BracketFunctional(model, H, F, grid), grid, eps),
        _outer_bracket(model, phi, H, _BracketFunctional(model, F, G, grid), grid, eps),
    ]
    total = float(sum(terms))
    scale = max(abs(t) for t in terms)
    return {
        "terms": terms,
        "cyclic_sum": total,
        "relative_residual": abs(total) / scale if scale > 0 else 0.0,
    }


def leibniz_check(model, phi, F, G, H, grid: Grid) -> dict:
    B = assemble_jacobi_blocks(model, _v(phi), grid)
    lhs = bracket_value(model, phi, ProductFunctional(F, G), H, grid, B)
    fgh = bracket_value(model, phi, G, H, grid, B)
    ffh = bracket_value(model, phi, F, H, grid, B)
    rhs = F.value(phi) * fgh + G.value(phi) * ffh
    scale = max(abs(lhs), abs(rhs))
    return {
        "lhs": lhs,
        "rhs": rhs,
        "residual": abs(lhs - rhs),
        "relative_residual": abs(lhs - rhs) / scale if scale > 0 else 0.0,
    }


def extension_independence(model, phi, F, eta, grid: Grid) -> float:
    """max |X_F - X_{F + J eta}| for a variation eta supported on layers 4..Nt-5."""
    B = assemble_jacobi_blocks(model, _v(phi), grid)
    eta = _v(eta)
    if np.any(eta[:4] != 0) or np.any(eta[grid.Nt - 4 :] != 0):
        raise ValueError("eta must vanish on the first and last four layers")
    f = F.derivative(phi)
    return float(np.max(np.abs(green_causal_apply(B, f) - green_causal_apply(B, f + B.apply(eta)))))
