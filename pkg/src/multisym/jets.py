"""Coordinate jet calculus on a fiber bundle with base dimension n and fiber dimension k.

Index conventions (all arrays may carry extra leading batch axes):

* ``x``: base point, shape ``(n,)``; ``q``: fiber point, shape ``(k,)``
* ``qdot[i, mu]``: first jet coordinates q^i_mu
* ``p[mu, i]``: dual (momentum) coordinates p_i^mu
* ``qddot[i, mu, rho]``: second jet coordinates q^i_{mu rho}
* base Jacobian ``J[lam, mu] = d x'^lam / d x^mu``; its inverse ``X[mu, nu] = d x^mu / d x'^nu``
* fiber Jacobian ``Q[j, i] = d q'^j / d q^i``; ``D[j, mu] = d q'^j / d x^mu``
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable, Optional

import numpy as np

JACOBIAN_TOL = 1e-10
POINT_MATCH_TOL = 1e-12


# ---------------------------------------------------------------------------
# points


@dataclass(frozen=True)
class JetPoint:
    x: np.ndarray
    q: np.ndarray
    qdot: np.ndarray

    def __post_init__(self):
        for name in ("x", "q", "qdot"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        if not (np.all(np.isfinite(self.x)) and np.all(np.isfinite(self.q)) and np.all(np.isfinite(self.qdot))):
            raise ValueError("jet point has non-finite entries")

    def __sub__(self, other: "JetPoint") -> "LinearJetPoint":
        _check_same_point(self, other)
        return LinearJetPoint(self.x, self.q, self.qdot - other.qdot)


@dataclass(frozen=True)
class LinearJetPoint:
    x: np.ndarray
    q: np.ndarray
    vdot: np.ndarray

    def __post_init__(self):
        for name in ("x", "q", "vdot"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))


@dataclass(frozen=True)
class ExtendedDualPoint:
    x: np.ndarray
    q: np.ndarray
    p: np.ndarray
    p_scalar: np.ndarray

    def __post_init__(self):
        for name in ("x", "q", "p", "p_scalar"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))


@dataclass(frozen=True)
class LinearDualPoint:
    x: np.ndarray
    q: np.ndarray
    p: np.ndarray

    def __post_init__(self):
        for name in ("x", "q", "p"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))


@dataclass(frozen=True)
class SecondJetPoint:
    """Second jet; ``r`` is the extra first-order slot of the semiholonomic representative.

    When ``r`` is omitted it equals ``qdot`` (the semiholonomic condition).
    """

    x: np.ndarray
    q: np.ndarray
    qdot: np.ndarray
    qddot: np.ndarray
    r: Optional[np.ndarray] = None

    def __post_init__(self):
        for name in ("x", "q", "qdot", "qddot"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        r = self.qdot if self.r is None else np.asarray(self.r, dtype=float)
        object.__setattr__(self, "r", r)

    def symmetry_defect(self) -> float:
        return float(np.max(np.abs(self.qddot - np.swapaxes(self.qddot, -1, -2)), initial=0.0))


def _check_same_point(a, b):
    if np.max(np.abs(a.x - b.x), initial=0.0) > POINT_MATCH_TOL or np.max(
        np.abs(a.q - b.q), initial=0.0
    ) > POINT_MATCH_TOL:
        raise ValueError("points live over different base/fiber coordinates")


# ---------------------------------------------------------------------------
# chart maps


@dataclass(frozen=True)
class ChartMap:
    """A change of coordinates (x, q) -> (x'(x), q'(x, q)) with analytic derivatives.

    ``base_hessian[lam, rho, kap]`` is d^2 x'^lam / dx^rho dx^kap.
    ``fiber_dxdq[j, rho, i]``, ``fiber_dxdx[j, rho, mu]`` and ``fiber_dqdq[j, i, l]``
    are the second fiber derivatives; they are only needed for second jets.
    """

    n: int
    k: int
    base: Callable
    base_jacobian: Callable
    fiber: Callable
    fiber_dq: Callable
    fiber_dx: Callable
    base_hessian: Optional[Callable] = None
    fiber_dxdq: Optional[Callable] = None
    fiber_dxdx: Optional[Callable] = None
    fiber_dqdq: Optional[Callable] = None

    def inverse_base_jacobian(self, x) -> np.ndarray:
        J = np.asarray(self.base_jacobian(x), dtype=float)
        return _safe_inverse(J, "base Jacobian")

    def inverse_fiber_jacobian(self, x, q) -> np.ndarray:
        Q = np.asarray(self.fiber_dq(x, q), dtype=float)
        return _safe_inverse(Q, "fiber Jacobian")

    @property
    def has_second_derivatives(self) -> bool:
        return None not in (self.base_hessian, self.fiber_dxdq, self.fiber_dxdx, self.fiber_dqdq)


def _safe_inverse(M, what):
    det = np.linalg.det(M)
    if np.any(np.abs(det) < 1e-14):
        raise ValueError(f"singular {what}")
    inv = np.linalg.inv(M)
    eye = np.eye(M.shape[-1])
    if np.max(np.abs(M @ inv - eye)) > JACOBIAN_TOL:
        raise ValueError(f"{what} is too ill-conditioned to invert")
    return inv


def identity_chart(n: int = 2, k: int = 1) -> ChartMap:
    zn3 = lambda x: np.zeros(np.shape(x)[:-1] + (n, n, n))
    return ChartMap(
        n,
        k,
        base=lambda x: np.array(x, dtype=float),
        base_jacobian=lambda x: np.broadcast_to(np.eye(n), np.shape(x)[:-1] + (n, n)).copy(),
        fiber=lambda x, q: np.array(q, dtype=float),
        fiber_dq=lambda x, q: np.broadcast_to(np.eye(k), np.shape(q)[:-1] + (k, k)).copy(),
        fiber_dx=lambda x, q: np.zeros(np.shape(q)[:-1] + (k, n)),
        base_hessian=zn3,
        fiber_dxdq=lambda x, q: np.zeros(np.shape(q)[:-1] + (k, n, k)),
        fiber_dxdx=lambda x, q: np.zeros(np.shape(q)[:-1] + (k, n, n)),
        fiber_dqdq=lambda x, q: np.zeros(np.shape(q)[:-1] + (k, k, k)),
    )


def linear_chart(A, B=None, k: int = 1) -> ChartMap:
    """x' = A x, q' = B q with constant matrices."""
    A = np.asarray(A, dtype=float)
    n = A.shape[0]
    B = np.eye(k) if B is None else np.asarray(B, dtype=float)
    k = B.shape[0]
    base = identity_chart(n, k)
    return replace(
        base,
        base=lambda x: np.einsum("lm,...m->...l", A, x),
        base_jacobian=lambda x: np.broadcast_to(A, np.shape(x)[:-1] + (n, n)).copy(),
        fiber=lambda x, q: np.einsum("ji,...i->...j", B, q),
        fiber_dq=lambda x, q: np.broadcast_to(B, np.shape(q)[:-1] + (k, k)).copy(),
    )


def perturbed_chart(rng, n: int = 2, k: int = 1, eps: float = 0.1, modes: int = 2,
                    affine_fiber: bool = False) -> ChartMap:
    """Random smooth chart: identity plus small sinusoidal perturbations.

    x'^l = x^l + sum_m a[l,m] sin(W[m].x + c[m])
    q'^j = q^j + sum_m b[j,m] sin(U[m].q + V[m].x + d[m])          (general)
    q'^j = S(x)[j,i] q^i + t(x)[j]                                   (affine_fiber)
    with S(x) = I + sum_m s[m] sin(V[m].x + d[m]) and t(x) = sum_m b[:,m] sin(V[m].x + e[m]).
    """
    a = eps * rng.standard_normal((n, modes)) / modes
    W = rng.standard_normal((modes, n))
    c = rng.uniform(0, 2 * np.pi, modes)

    def base(x):
        return x + np.einsum("lm,...m->...l", a, np.sin(x @ W.T + c))

    def base_jacobian(x):
        cs = np.cos(x @ W.T + c)
        return np.eye(n) + np.einsum("lm,...m,mr->...lr", a, cs, W)

    def base_hessian(x):
        sn = np.sin(x @ W.T + c)
        return -np.einsum("lm,...m,mr,mk->...lrk", a, sn, W, W)

    V = rng.standard_normal((modes, n))
    d = rng.uniform(0, 2 * np.pi, modes)
    if not affine_fiber:
        b = eps * rng.standard_normal((k, modes)) / modes
        U = rng.standard_normal((modes, k))

        def arg(x, q):
            return q @ U.T + x @ V.T + d

        def fiber(x, q):
            return q + np.einsum("jm,...m->...j", b, np.sin(arg(x, q)))

        def fiber_dq(x, q):
            return np.eye(k) + np.einsum("jm,...m,mi->...ji", b, np.cos(arg(x, q)), U)

        def fiber_dx(x, q):
            return np.einsum("jm,...m,mr->...jr", b, np.cos(arg(x, q)), V)

        def fiber_dxdq(x, q):
            return -np.einsum("jm,...m,mr,mi->...jri", b, np.sin(arg(x, q)), V, U)

        def fiber_dxdx(x, q):
            return -np.einsum("jm,...m,mr,ms->...jrs", b, np.sin(arg(x, q)), V, V)

        def fiber_dqdq(x, q):
            return -np.einsum("jm,...m,mi,ml->...jil", b, np.sin(arg(x, q)), U, U)
    else:
        s = eps * rng.standard_normal((modes, k, k)) / modes
        b = eps * rng.standard_normal((k, modes)) / modes
        e = rng.uniform(0, 2 * np.pi, modes)

        def S(x):
            return np.eye(k) + np.einsum("mji,...m->...ji", s, np.sin(x @ V.T + d))

        def fiber(x, q):
            t = np.einsum("jm,...m->...j", b, np.sin(x @ V.T + e))
            return np.einsum("...ji,...i->...j", S(x), q) + t

        def fiber_dq(x, q):
            return S(x) + 0.0 * q[..., None, :]

        def fiber_dx(x, q):
            dS = np.einsum("mji,...m,mr->...jir", s, np.cos(x @ V.T + d), V)
            dt = np.einsum("jm,...m,mr->...jr", b, np.cos(x @ V.T + e), V)
            return np.einsum("...jir,...i->...jr", dS, q) + dt

        def fiber_dxdq(x, q):
            dS = np.einsum("mji,...m,mr->...jri", s, np.cos(x @ V.T + d), V)
            return dS + 0.0 * q[..., None, None, :]

        def fiber_dxdx(x, q):
            d2S = -np.einsum("mji,...m,mr,mu->...jiru", s, np.sin(x @ V.T + d), V, V)
            d2t = -np.einsum("jm,...m,mr,mu->...jru", b, np.sin(x @ V.T + e), V, V)
            return np.einsum("...jiru,...i->...jru", d2S, q) + d2t

        def fiber_dqdq(x, q):
            return np.zeros(np.shape(q)[:-1] + (k, k, k))

    return ChartMap(n, k, base, base_jacobian, fiber, fiber_dq, fiber_dx,
                    base_hessian, fiber_dxdq, fiber_dxdx, fiber_dqdq)


def compose_charts(T2: ChartMap, T1: ChartMap) -> ChartMap:
    """The chart T2 o T1, derivatives by the chain rule."""

    def base(x):
        return T2.base(T1.base(x))

    def base_jacobian(x):
        return np.einsum("...la,...am->...lm", T2.base_jacobian(T1.base(x)), T1.base_jacobian(x))

    def base_hessian(x):
        y, J1 = T1.base(x), T1.base_jacobian(x)
        return np.einsum("...lab,...ar,...bk->...lrk", T2.base_hessian(y), J1, J1) + np.einsum(
            "...la,...ark->...lrk", T2.base_jacobian(y), T1.base_hessian(x)
        )

    def fiber(x, q):
        return T2.fiber(T1.base(x), T1.fiber(x, q))

    def fiber_dq(x, q):
        y, p = T1.base(x), T1.fiber(x, q)
        return np.einsum("...ja,...ai->...ji", T2.fiber_dq(y, p), T1.fiber_dq(x, q))

    def fiber_dx(x, q):
        y, p = T1.base(x), T1.fiber(x, q)
        return np.einsum("...ja,...am->...jm", T2.fiber_dx(y, p), T1.base_jacobian(x)) + np.einsum(
            "...ja,...am->...jm", T2.fiber_dq(y, p), T1.fiber_dx(x, q)
        )

    def _second(x, q):
        y, p = T1.base(x), T1.fiber(x, q)
        J1, Q1, D1 = T1.base_jacobian(x), T1.fiber_dq(x, q), T1.fiber_dx(x, q)
        Q2, D2 = T2.fiber_dq(y, p), T2.fiber_dx(y, p)
        E2, F2, G2 = T2.fiber_dxdq(y, p), T2.fiber_dxdx(y, p), T2.fiber_dqdq(y, p)
        H1, E1, F1, G1 = T1.base_hessian(x), T1.fiber_dxdq(x, q), T1.fiber_dxdx(x, q), T1.fiber_dqdq(x, q)
        dxdq = (
            np.einsum("...jac,...ar,...ci->...jri", E2, J1, Q1)
            + np.einsum("...jcd,...dr,...ci->...jri", G2, D1, Q1)
            + np.einsum("...jc,...cri->...jri", Q2, E1)
        )
        mixed = np.einsum("...jac,...ar,...cs->...jrs", E2, J1, D1)
        dxdx = (
            np.einsum("...jab,...ar,...bs->...jrs", F2, J1, J1)
            + mixed
            + np.swapaxes(mixed, -1, -2)
            + np.einsum("...jcd,...cr,...ds->...jrs", G2, D1, D1)
            + np.einsum("...ja,...ars->...jrs", D2, H1)
            + np.einsum("...jc,...crs->...jrs", Q2, F1)
        )
        dqdq = np.einsum("...jab,...ai,...bl->...jil", G2, Q1, Q1) + np.einsum("...ja,...ail->...jil", Q2, G1)
        return dxdq, dxdx, dqdq

    return ChartMap(
        T1.n, T1.k, base, base_jacobian, fiber, fiber_dq, fiber_dx, base_hessian,
        fiber_dxdq=lambda x, q: _second(x, q)[0],
        fiber_dxdx=lambda x, q: _second(x, q)[1],
        fiber_dqdq=lambda x, q: _second(x, q)[2],
    )


# ---------------------------------------------------------------------------
# transformation laws


def _frame(T: ChartMap, x, q):
    J = np.asarray(T.base_jacobian(x), dtype=float)
    X = _safe_inverse(J, "base Jacobian")
    Q = np.asarray(T.fiber_dq(x, q), dtype=float)
    D = np.asarray(T.fiber_dx(x, q), dtype=float)
    return J, X, Q, D


def transform_jet(T: ChartMap, j: JetPoint) -> JetPoint:
    J, X, Q, D = _frame(T, j.x, j.q)
    qdot = np.einsum("...mn,...ji,...im->...jn", X, Q, j.qdot) + np.einsum("...mn,...jm->...jn", X, D)
    return JetPoint(T.base(j.x), T.fiber(j.x, j.q), qdot)


def transform_linear_jet(T: ChartMap, v: LinearJetPoint) -> LinearJetPoint:
    J, X, Q, D = _frame(T, v.x, v.q)
    vdot = np.einsum("...mn,...ji,...im->...jn", X, Q, v.vdot)
    return LinearJetPoint(T.base(v.x), T.fiber(v.x, v.q), vdot)


def transform_dual(T: ChartMap, z: ExtendedDualPoint, twisted: bool = False) -> ExtendedDualPoint:
    J, X, Q, D = _frame(T, z.x, z.q)
    Qinv = _safe_inverse(Q, "fiber Jacobian")
    p = np.einsum("...nm,...ij,...mi->...nj", J, Qinv, z.p)
    ps = z.p_scalar - np.einsum("...jm,...ij,...mi->...", D, Qinv, z.p)
    if twisted:
        det = np.linalg.det(X)
        p = p * det[..., None, None]
        ps = ps * det
    return ExtendedDualPoint(T.base(z.x), T.fiber(z.x, z.q), p, ps)


def transform_linear_dual(T: ChartMap, z: LinearDualPoint, twisted: bool = False) -> LinearDualPoint:
    J, X, Q, D = _frame(T, z.x, z.q)
    Qinv = _safe_inverse(Q, "fiber Jacobian")
    p = np.einsum("...nm,...ij,...mi->...nj", J, Qinv, z.p)
    if twisted:
        p = p * np.linalg.det(X)[..., None, None]
    return LinearDualPoint(T.base(z.x), T.fiber(z.x, z.q), p)


def jet_pairing(z, j, twisted: bool = False) -> np.ndarray:
    """Dual pairing p_i^mu q^i_mu (+ p for the affine case).

    The ``twisted`` flag does not change the number; it only records that the
    result is a density coefficient rather than a scalar.
    """
    _check_same_point(z, j)
    if isinstance(z, ExtendedDualPoint) and isinstance(j, JetPoint):
        return np.einsum("...mi,...im->...", z.p, j.qdot) + z.p_scalar
    if isinstance(z, LinearDualPoint) and isinstance(j, LinearJetPoint):
        return np.einsum("...mi,...im->...", z.p, j.vdot)
    raise TypeError("pair an extended dual with a jet, or a linear dual with a linear jet")


def eta_project(z: ExtendedDualPoint) -> LinearDualPoint:
    return LinearDualPoint(z.x, z.q, z.p)


def transform_second_jet(T: ChartMap, s: SecondJetPoint, semiholonomic: bool = False) -> SecondJetPoint:
    """Second-jet transformation law, derived from the chain rule.

    With ``semiholonomic=True`` the J^1 J^1 law is used, keeping the slot ``r``
    separate and the second derivatives unsymmetrized.  Otherwise ``r = qdot``
    is imposed and the coefficient of the mixed fiber term is symmetric in the
    two new indices, so symmetric input gives symmetric output.
    """
    if not T.has_second_derivatives:
        raise ValueError("chart lacks second-derivative providers")
    x, q = s.x, s.q
    J, X, Q, D = _frame(T, x, q)
    H = np.asarray(T.base_hessian(x), dtype=float)
    E = np.asarray(T.fiber_dxdq(x, q), dtype=float)
    F = np.asarray(T.fiber_dxdx(x, q), dtype=float)
    G = np.asarray(T.fiber_dqdq(x, q), dtype=float)
    qd = s.qdot
    r = s.r if semiholonomic else s.qdot

    # dX^mu_nu / dx^rho = -X^mu_lam H^lam_{rho kap} X^kap_nu
    dX = -np.einsum("...ml,...lrk,...kn->...mnr", X, H, X)
    first = np.einsum("...ji,...im->...jm", Q, qd) + D  # Q q_mu + dq'/dx^mu
    out = np.einsum("...rs,...mn,...ji,...imr->...jns", X, X, Q, s.qddot)
    out = out + np.einsum("...rs,...mnr,...jm->...jns", X, dX, first)
    if semiholonomic:
        inner = np.einsum("...jri,...im->...jmr", E, qd) + F  # d/dx^rho of (Q q_mu + D_mu), explicit x part
        out = out + np.einsum("...rs,...mn,...jmr->...jns", X, X, inner)
        dq_coef = np.einsum("...jil,...lm->...jmi", G, qd) + np.einsum("...jmi->...jmi", E)
        out = out + np.einsum("...rs,...mn,...jmi,...ir->...jns", X, X, dq_coef, r)
        r_new = np.einsum("...mn,...ji,...im->...jn", X, Q, s.r) + np.einsum("...mn,...jm->...jn", X, D)
    else:
        sym = np.einsum("...mn,...rs->...mrns", X, X)
        sym = sym + np.swapaxes(sym, -1, -2)  # X^mu_nu X^rho_sigma + X^mu_sigma X^rho_nu
        out = out + np.einsum("...mrns,...jri,...im->...jns", sym, E, qd)
        out = out + np.einsum("...rs,...mn,...jrm->...jns", X, X, F)
        out = out + np.einsum("...rs,...mn,...jil,...lm,...ir->...jns", X, X, G, qd, qd)
        r_new = None
    qdot_new = np.einsum("...mn,...ji,...im->...jn", X, Q, qd) + np.einsum("...mn,...jm->...jn", X, D)
    return SecondJetPoint(T.base(x), T.fiber(x, q), qdot_new, out, r_new)


# ---------------------------------------------------------------------------
# vector fields


@dataclass(frozen=True)
class ProjectableVectorField:
    """V = V^mu(x) d/dx^mu + V^i(x, q) d/dq^i.

    ``base_dx[kap, mu] = dV^kap/dx^mu``, ``fiber_dq[i, l] = dV^i/dq^l``,
    ``fiber_dx[i, mu] = dV^i/dx^mu``.
    """

    n: int
    k: int
    base: Callable
    base_dx: Callable
    fiber: Callable
    fiber_dq: Callable
    fiber_dx: Callable


@dataclass(frozen=True)
class JetVector:
    base: np.ndarray
    fiber: np.ndarray
    jet: np.ndarray  # [i, mu]


def prolong_vector_field(V: ProjectableVectorField, j: JetPoint) -> JetVector:
    x, q, qd = j.x, j.q, j.qdot
    jet = (
        np.einsum("...il,...lm->...im", V.fiber_dq(x, q), qd)
        - np.einsum("...km,...ik->...im", V.base_dx(x), qd)
        + V.fiber_dx(x, q)
    )
    return JetVector(np.asarray(V.base(x), dtype=float), np.asarray(V.fiber(x, q), dtype=float), jet)


def prolong_automorphism(T: ChartMap, j: JetPoint) -> JetPoint:
    """First prolongation of the bundle automorphism T (same law as a chart change)."""
    return transform_jet(T, j)


def prolongation_matrix(T: ChartMap, j: JetPoint) -> np.ndarray:
    """T Phi o gamma o (T phi)^-1 as an (n+k) x n matrix; the top block must be the identity."""
    J, X, Q, D = _frame(T, j.x, j.q)
    n, k = J.shape[-1], Q.shape[-1]
    TPhi = np.zeros(J.shape[:-2] + (n + k, n + k))
    TPhi[..., :n, :n] = J
    TPhi[..., n:, :n] = D
    TPhi[..., n:, n:] = Q
    gamma = np.concatenate([np.broadcast_to(np.eye(n), J.shape), j.qdot], axis=-2)
    return TPhi @ gamma @ X


def vertical_field(fiber, fiber_dq, fiber_dx, n: int = 2, k: int = 1) -> ProjectableVectorField:
    return ProjectableVectorField(
        n, k,
        base=lambda x: np.zeros(np.shape(x)),
        base_dx=lambda x: np.zeros(np.shape(x)[:-1] + (n, n)),
        fiber=fiber, fiber_dq=fiber_dq, fiber_dx=fiber_dx,
    )


def random_vertical_field(rng, n: int = 2, k: int = 1, scale: float = 1.0) -> ProjectableVectorField:
    """V^i = a_i + B_il q^l + c_i sin(w.x + e) q^i  (smooth, q- and x-dependent)."""
    a = scale * rng.standard_normal(k)
    B = scale * rng.standard_normal((k, k))
    c = scale * rng.standard_normal(k)
    w = rng.standard_normal(n)
    e = rng.uniform(0, 2 * np.pi)

    def fiber(x, q):
        s = np.sin(x @ w + e)[..., None]
        return a + q @ B.T + c * s * q

    def fiber_dq(x, q):
        s = np.sin(x @ w + e)[..., None, None]
        return B + s * np.diag(c)

    def fiber_dx(x, q):
        co = np.cos(x @ w + e)[..., None, None]
        return co * (c * q)[..., :, None] * w

    return vertical_field(fiber, fiber_dq, fiber_dx, n, k)
