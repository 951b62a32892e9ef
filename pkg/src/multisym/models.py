"""Lagrangian and De Donder-Weyl Hamiltonian models.

Partials are exact: every density is evaluated once in second-order forward
mode over the active variables ``(x^0, x^1, q^0..q^{k-1}, q^i_mu)``, with the
jet components flattened as ``i * 2 + mu``.  All evaluations are batched over
leading axes, so one call covers every node of a grid.

Layouts used throughout the package:

* ``qdot[..., i, mu]``  field derivatives
* ``p[..., mu, i]``     momenta conjugate to ``q^i_mu``
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .ad import AD2
from .jets import ExtendedDualPoint, JetPoint, LinearDualPoint

N_BASE = 2
MINKOWSKI = np.array([1.0, -1.0])

NEWTON_TOL = 1e-12
NEWTON_MAXITER = 50


class ConvergenceError(RuntimeError):
    """A Newton solve (Legendre map or its closure) did not converge."""


# ---------------------------------------------------------------------------
# partial derivative containers


@dataclass(frozen=True)
class LagrangianPartials:
    L: np.ndarray          # S
    dq: np.ndarray         # S + (k,)
    dqdot: np.ndarray      # S + (k, 2)        dL/dq^i_mu
    dx: np.ndarray         # S + (2,)          explicit dL/dx^rho
    qq: np.ndarray         # S + (k, k)
    qv: np.ndarray         # S + (k, k, 2)     [j, i, mu] = d2L/dq^j dq^i_mu
    vv: np.ndarray         # S + (k, 2, k, 2)  [i, mu, j, nu]
    xq: np.ndarray         # S + (2, k)        [rho, i]
    xv: np.ndarray         # S + (2, k, 2)     [rho, i, mu]

    @property
    def momentum(self) -> np.ndarray:
        """p[mu, i] = dL/dq^i_mu."""
        return np.swapaxes(self.dqdot, -1, -2)

    @property
    def A(self) -> np.ndarray:
        """A[mu, nu, i, j] = d2L / dq^j_nu dq^i_mu."""
        return np.moveaxis(self.vv, (-4, -3, -2, -1), (-2, -4, -1, -3))

    @property
    def M(self) -> np.ndarray:
        """M[mu, i, j] = d2L / dq^j dq^i_mu."""
        return np.moveaxis(self.qv, (-3, -2, -1), (-1, -2, -3))


@dataclass(frozen=True)
class HamiltonianPartials:
    H: np.ndarray          # S
    dq: np.ndarray         # S + (k,)
    dp: np.ndarray         # S + (2, k)       dH/dp^mu_i
    qq: np.ndarray         # S + (k, k)
    qp: np.ndarray         # S + (k, 2, k)    [j, mu, i] = d2H/dq^j dp^mu_i
    pp: np.ndarray         # S + (2, k, 2, k) [mu, i, nu, j]


# ---------------------------------------------------------------------------
# models


@dataclass(frozen=True)
class LagrangianModel:
    """A first-order Lagrangian density ``L(x, q, qdot)``.

    ``density`` receives ``x`` (list of 2), ``q`` (list of k) and ``qdot``
    (k lists of 2) whose entries are :class:`AD2` objects and returns an AD2.
    """

    name: str
    k: int
    density: Callable
    params: dict = field(default_factory=dict)
    hamiltonian: Callable | None = None  # closed-form H(x, q, p) for built-ins

    def partials(self, x, q, qdot) -> LagrangianPartials:
        return eval_partials_L(self, x, q, qdot)

    def value(self, x, q, qdot) -> np.ndarray:
        """L without derivatives: the density is called on plain arrays."""
        shape, x, q, qdot = _broadcast_inputs(self.k, x, q, qdot)
        out = self.density([x[..., 0], x[..., 1]], [q[..., i] for i in range(self.k)],
                           [[qdot[..., i, 0], qdot[..., i, 1]] for i in range(self.k)])
        return np.broadcast_to(np.asarray(out, dtype=float), shape).copy()


@dataclass(frozen=True)
class HamiltonianModel:
    """A De Donder-Weyl Hamiltonian density ``H(x, q, p)``.

    Either ``density`` (AD-evaluated closed form, ``p`` given as 2 lists of k)
    or ``source`` (a Lagrangian, evaluated through the Legendre map) is set.
    """

    name: str
    k: int
    density: Callable | None = None
    source: LagrangianModel | None = None
    params: dict = field(default_factory=dict)

    def partials(self, x, q, p) -> HamiltonianPartials:
        if self.density is not None:
            return _ad_partials_H(self, x, q, p)
        return _legendre_partials_H(self.source, x, q, p)

    def value(self, x, q, p) -> np.ndarray:
        return self.partials(x, q, p).H


def _broadcast_inputs(k, x, q, tail):
    x = np.asarray(x, dtype=float)
    q = np.asarray(q, dtype=float)
    tail = np.asarray(tail, dtype=float)
    shape = np.broadcast_shapes(x.shape[:-1], q.shape[:-1], tail.shape[:-2])
    x = np.broadcast_to(x, shape + (N_BASE,))
    q = np.broadcast_to(q, shape + (k,))
    tail = np.broadcast_to(tail, shape + tail.shape[-2:])
    for name, arr in (("x", x), ("q", q), ("derivative", tail)):
        if not np.all(np.isfinite(arr)):
            raise ValueError(f"non-finite {name} argument")
    return shape, x, q, tail


def eval_partials_L(model: LagrangianModel, x, q, qdot) -> LagrangianPartials:
    k = model.k
    shape, x, q, qdot = _broadcast_inputs(k, x, q, qdot)
    z = np.concatenate([x, q, qdot.reshape(shape + (2 * k,))], axis=-1)
    zs = AD2.variables(z)
    xs, qs = zs[:2], zs[2 : 2 + k]
    vs = [[zs[2 + k + 2 * i + mu] for mu in range(2)] for i in range(k)]
    out = model.density(xs, qs, vs)
    if not isinstance(out, AD2):
        out = zs[0] * 0.0 + out
    g, h = out.grad, out.hess
    sx, sq, sv = slice(0, 2), slice(2, 2 + k), slice(2 + k, 2 + 3 * k)
    return LagrangianPartials(
        L=np.broadcast_to(out.val, shape).copy(),
        dq=g[..., sq],
        dqdot=g[..., sv].reshape(shape + (k, 2)),
        dx=g[..., sx],
        qq=h[..., sq, sq],
        qv=h[..., sq, sv].reshape(shape + (k, k, 2)),
        vv=h[..., sv, sv].reshape(shape + (k, 2, k, 2)),
        xq=h[..., sx, sq],
        xv=h[..., sx, sv].reshape(shape + (2, k, 2)),
    )


def _ad_partials_H(model: HamiltonianModel, x, q, p) -> HamiltonianPartials:
    k = model.k
    shape, x, q, p = _broadcast_inputs(k, x, q, p)
    z = np.concatenate([q, p.reshape(shape + (2 * k,))], axis=-1)
    zs = AD2.variables(z)
    qs = zs[:k]
    ps = [[zs[k + mu * k + i] for i in range(k)] for mu in range(2)]
    xs = [x[..., 0], x[..., 1]]
    out = model.density(xs, qs, ps)
    g, h = out.grad, out.hess
    sq, sp = slice(0, k), slice(k, 3 * k)
    return HamiltonianPartials(
        H=np.broadcast_to(out.val, shape).copy(),
        dq=g[..., sq],
        dp=g[..., sp].reshape(shape + (2, k)),
        qq=h[..., sq, sq],
        qp=h[..., sq, sp].reshape(shape + (k, 2, k)),
        pp=h[..., sp, sp].reshape(shape + (2, k, 2, k)),
    )


# ---------------------------------------------------------------------------
# Legendre maps


def _vv_matrix(P: LagrangianPartials):
    k = P.dq.shape[-1]
    return P.vv.reshape(P.vv.shape[:-4] + (2 * k, 2 * k))


def _newton(residual_and_jacobian, u0, what):
    """Damped Newton, vectorized over points: solve r(u) = 0 for u of shape S + (m,)."""
    u = np.array(u0, dtype=float)
    r, Jm = residual_and_jacobian(u)
    norm = np.linalg.norm(r, axis=-1)
    for _ in range(NEWTON_MAXITER):
        scale = 1.0 + np.linalg.norm(u, axis=-1)
        if np.all(norm <= NEWTON_TOL * scale):
            return u
        try:
            step = np.linalg.solve(Jm, r[..., None])[..., 0]
        except np.linalg.LinAlgError as exc:
            raise ConvergenceError(f"{what}: singular Jacobian") from exc
        lam = np.ones(norm.shape)
        for _ in range(30):
            trial = u - lam[..., None] * step
            r_t, J_t = residual_and_jacobian(trial)
            norm_t = np.linalg.norm(r_t, axis=-1)
            bad = ~(norm_t < norm) & (norm > NEWTON_TOL * scale) & np.isfinite(norm)
            if not np.any(bad):
                break
            lam = np.where(bad, 0.5 * lam, lam)
        u, r, Jm, norm = trial, r_t, J_t, norm_t
    scale = 1.0 + np.linalg.norm(u, axis=-1)
    failed = norm > NEWTON_TOL * scale * 10
    if np.any(failed):
        idx = tuple(int(i) for i in np.argwhere(np.atleast_1d(failed))[0])
        raise ConvergenceError(f"{what}: no convergence at point index {idx}, residual {np.max(norm):.3e}")
    return u


def velocity_from_momentum(model: LagrangianModel, x, q, p, guess=None) -> np.ndarray:
    """Solve dL/dq^i_mu (x, q, v) = p[mu, i] for v[i, mu]."""
    k = model.k
    shape, x, q, p = _broadcast_inputs(k, x, q, p)
    target = np.swapaxes(p, -1, -2).reshape(shape + (2 * k,))

    def rj(u):
        P = eval_partials_L(model, x, q, u.reshape(shape + (k, 2)))
        return P.dqdot.reshape(shape + (2 * k,)) - target, _vv_matrix(P)

    # Minkowski-raised momenta are exact for the built-ins at q = 0
    u0 = (np.swapaxes(p, -1, -2) * MINKOWSKI).reshape(shape + (2 * k,)) if guess is None else guess
    return _newton(rj, u0, "inverse Legendre map").reshape(shape + (k, 2))


def _legendre_partials_H(model: LagrangianModel, x, q, p) -> HamiltonianPartials:
    k = model.k
    shape, x, q, p = _broadcast_inputs(k, x, q, p)
    v = velocity_from_momentum(model, x, q, p)
    P = eval_partials_L(model, x, q, v)
    W = _vv_matrix(P)
    Winv = np.linalg.inv(W)
    Lvq = np.moveaxis(P.qv, -3, -1).reshape(shape + (2 * k, k))  # [(i,mu), j]
    dv_dq = -Winv @ Lvq  # [(i,mu), j]
    H = np.einsum("...mi,...im->...", p, v) - P.L
    qq = -P.qq + np.swapaxes(Lvq, -1, -2) @ Winv @ Lvq
    # re-index (i, mu) -> (mu, i)
    pp = Winv.reshape(shape + (k, 2, k, 2)).transpose(*range(len(shape)), *(len(shape) + np.array([1, 0, 3, 2])))
    qp = np.moveaxis(dv_dq.reshape(shape + (k, 2, k)), -1, -3)  # [j, i, mu]
    qp = np.swapaxes(qp, -1, -2)  # [j, mu, i]
    return HamiltonianPartials(
        H=H, dq=-P.dq, dp=np.swapaxes(v, -1, -2), qq=qq, qp=qp, pp=np.ascontiguousarray(pp)
    )


def legendre_forward(model: LagrangianModel, j: JetPoint) -> ExtendedDualPoint:
    P = eval_partials_L(model, j.x, j.q, j.qdot)
    p = P.momentum
    p_scalar = P.L - np.einsum("...im,...im->...", P.dqdot, np.broadcast_to(j.qdot, P.dqdot.shape))
    return ExtendedDualPoint(np.broadcast_to(j.x, P.dx.shape), np.broadcast_to(j.q, P.dq.shape), p, p_scalar)


def dw_hamiltonian_from_L(model: LagrangianModel) -> HamiltonianModel:
    return HamiltonianModel(name=f"{model.name}/legendre", k=model.k, source=model, params=dict(model.params))


def legendre_inverse(model: HamiltonianModel, z: LinearDualPoint) -> JetPoint:
    P = model.partials(z.x, z.q, z.p)
    return JetPoint(np.broadcast_to(z.x, P.dq.shape[:-1] + (2,)), np.broadcast_to(z.q, P.dq.shape),
                    np.swapaxes(P.dp, -1, -2))


def momentum_from_velocity(model: HamiltonianModel, x, q, qdot) -> np.ndarray:
    """Solve dH/dp^mu_i (x, q, p) = qdot[i, mu] for p[mu, i]."""
    k = model.k
    shape, x, q, qdot = _broadcast_inputs(k, x, q, qdot)
    target = np.swapaxes(qdot, -1, -2).reshape(shape + (2 * k,))

    def rj(u):
        P = model.partials(x, q, u.reshape(shape + (2, k)))
        return P.dp.reshape(shape + (2 * k,)) - target, P.pp.reshape(shape + (2 * k, 2 * k))

    u0 = (np.swapaxes(qdot, -1, -2) * MINKOWSKI[:, None]).reshape(shape + (2 * k,))
    return _newton(rj, u0, "Hamiltonian fiber derivative").reshape(shape + (2, k))


def lagrangian_from_H(model: HamiltonianModel, j: JetPoint) -> np.ndarray:
    p = momentum_from_velocity(model, j.x, j.q, j.qdot)
    P = model.partials(j.x, j.q, p)
    return np.einsum("...mi,...im->...", p, j.qdot) - P.H


# ---------------------------------------------------------------------------
# regularity and hyperbolicity


@dataclass(frozen=True)
class RegularityReport:
    min_abs_det: float
    threshold: float
    passed: bool


REGULARITY_THRESHOLD = 1e-8


def check_time_regularity(model: LagrangianModel, samples: JetPoint,
                          threshold: float = REGULARITY_THRESHOLD) -> RegularityReport:
    P = eval_partials_L(model, samples.x, samples.q, samples.qdot)
    det = np.linalg.det(P.vv[..., :, 0, :, 0])
    m = float(np.min(np.abs(det)))
    return RegularityReport(m, threshold, bool(m > threshold))


@dataclass(frozen=True)
class HyperbolicityReport:
    n_timelike: int
    n_spacelike: int
    timelike_margin: float   # min eigenvalue over timelike samples (must be > 0)
    spacelike_margin: float  # min of -max eigenvalue over spacelike samples (must be > 0)
    passed: bool


def check_regular_hyperbolicity(model: LagrangianModel, samples: JetPoint, covectors) -> HyperbolicityReport:
    """Definiteness of u^mu u^nu d2L/dq^i_mu dq^j_nu, one covector per sample point."""
    u = np.asarray(covectors, dtype=float)
    P = eval_partials_L(model, samples.x, samples.q, samples.qdot)
    Mm = np.einsum("...m,...n,...imjn->...ij", u, u, P.vv)
    eig = np.linalg.eigvalsh(Mm)
    norm = u[..., 0] ** 2 - u[..., 1] ** 2
    tl, sl = norm > 0, norm < 0
    t_margin = float(np.min(eig[tl][..., 0])) if np.any(tl) else np.inf
    s_margin = float(np.min(-eig[sl][..., -1])) if np.any(sl) else np.inf
    return HyperbolicityReport(int(tl.sum()), int(sl.sum()), t_margin, s_margin,
                               bool(t_margin > 0 and s_margin > 0))


# ---------------------------------------------------------------------------
# built-in models


def _kinetic(qdot_i):
    return 0.5 * (qdot_i[0] * qdot_i[0] - qdot_i[1] * qdot_i[1])


def klein_gordon(m: float = 1.0, k: int = 1) -> LagrangianModel:
    m2 = float(m) ** 2

    def density(x, q, qdot):
        out = 0.0
        for i in range(k):
            out = _kinetic(qdot[i]) - 0.5 * m2 * q[i] * q[i] + out
        return out

    def hamiltonian(x, q, p):
        out = 0.0
        for i in range(k):
            out = 0.5 * (p[0][i] * p[0][i] - p[1][i] * p[1][i]) + 0.5 * m2 * q[i] * q[i] + out
        return out

    return LagrangianModel("klein_gordon", k, density, {"m": float(m)}, hamiltonian)


def phi4(m: float = 1.0, lam: float = 1.0) -> LagrangianModel:
    m2, c = float(m) ** 2, float(lam) / 24.0

    def density(x, q, qdot):
        q2 = q[0] * q[0]
        return _kinetic(qdot[0]) - 0.5 * m2 * q2 - c * q2 * q2

    def hamiltonian(x, q, p):
        q2 = q[0] * q[0]
        return 0.5 * (p[0][0] * p[0][0] - p[1][0] * p[1][0]) + 0.5 * m2 * q2 + c * q2 * q2

    return LagrangianModel("phi4", 1, density, {"m": float(m), "lam": float(lam)}, hamiltonian)


def sigma_model(kappa: float = 0.0, k: int = 2) -> LagrangianModel:
    """Target metric h(q) = I + kappa q q^T on a flat 1+1 base."""
    kappa = float(kappa)
    if kappa < 0:
        raise ValueError("kappa must be non-negative for a positive-definite target metric")

    def density(x, q, qdot):
        flat = 0.0
        for i in range(k):
            flat = _kinetic(qdot[i]) + flat
        # kappa/2 ((q.v0)^2 - (q.v1)^2)
        s0 = sum((q[i] * qdot[i][0] for i in range(1, k)), q[0] * qdot[0][0])
        s1 = sum((q[i] * qdot[i][1] for i in range(1, k)), q[0] * qdot[0][1])
        return flat + 0.5 * kappa * (s0 * s0 - s1 * s1)

    def hamiltonian(x, q, p):
        # h^-1 = I - kappa q q^T / (1 + kappa |q|^2)
        qq = sum((q[i] * q[i] for i in range(1, k)), q[0] * q[0])
        c = kappa / (1.0 + kappa * qq)
        out = 0.0
        for mu, sgn in ((0, 0.5), (1, -0.5)):
            pp = sum((p[mu][i] * p[mu][i] for i in range(1, k)), p[mu][0] * p[mu][0])
            qp = sum((q[i] * p[mu][i] for i in range(1, k)), q[0] * p[mu][0])
            out = sgn * (pp - c * qp * qp) + out
        return out

    return LagrangianModel("sigma", k, density, {"kappa": kappa, "k": k}, hamiltonian)


def degenerate_model() -> LagrangianModel:
    """L = q_1^2 / 2: no time derivatives, so time-regularity fails."""

    def density(x, q, qdot):
        return 0.5 * qdot[0][1] * qdot[0][1] + 0.0 * q[0]

    return LagrangianModel("degenerate", 1, density, {})


def explicit_hamiltonian(model: LagrangianModel) -> HamiltonianModel:
    """The closed-form Hamiltonian of a built-in model (an oracle for the Legendre route)."""
    if model.hamiltonian is None:
        raise ValueError(f"model {model.name!r} has no closed-form Hamiltonian")
    return HamiltonianModel(name=f"{model.name}/explicit", k=model.k, density=model.hamiltonian,
                            params=dict(model.params))


BUILTINS = {
    "klein_gordon": klein_gordon,
    "phi4": phi4,
    "sigma": sigma_model,
    "degenerate": degenerate_model,
}


def get_model(name: str, params: dict | None = None) -> LagrangianModel:
    if name not in BUILTINS:
        raise KeyError(f"unknown model {name!r}; choose from {sorted(BUILTINS)}")
    return BUILTINS[name](**(params or {}))
