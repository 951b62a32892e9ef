"""Named property suites run by ``multisym verify``.

Each check records a residual and the threshold it is held to.  Suites that
need a time-regular Lagrangian are skipped, with a reason, when the model
fails the regularity check.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import affine, jets
from .dynamics import (
    action,
    assemble_jacobi_blocks,
    contraction_H,
    contraction_L,
    dw_residual,
    el_residual,
    jacobi_apply_L,
    solve_cauchy_lagrangian,
)
from .green import green_advanced_apply, green_causal_apply, green_retarded_apply
from .lattice import Grid, pairing
from .models import (
    LagrangianModel,
    check_regular_hyperbolicity,
    check_time_regularity,
    dw_hamiltonian_from_L,
    explicit_hamiltonian,
    legendre_forward,
    legendre_inverse,
)
from .peierls import (
    OMEGA_SIGN,
    ConstantFunctional,
    binomial_window,
    extension_independence,
    jacobi_identity_check,
    leibniz_check,
    local_density,
    peierls_bracket,
    smeared_field,
    smeared_velocity,
)
from .symplectic import current_L, omega_slice, theta_action_variation_check


@dataclass
class Check:
    name: str
    residual: float
    threshold: float

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.residual) and self.residual <= self.threshold)

    def as_dict(self) -> dict:
        return {"name": self.name, "residual": float(self.residual),
                "threshold": float(self.threshold), "passed": self.passed}


@dataclass
class Suite:
    name: str
    checks: list = field(default_factory=list)
    skipped: str | None = None

    def add(self, name, residual, threshold):
        self.checks.append(Check(name, float(residual), float(threshold)))

    @property
    def status(self) -> str:
        if self.skipped:
            return "skipped"
        return "pass" if all(c.passed for c in self.checks) else "fail"

    def as_dict(self) -> dict:
        out = {"status": self.status, "checks": [c.as_dict() for c in self.checks]}
        if self.skipped:
            out["reason"] = self.skipped
        return out


def _rel(a, b) -> float:
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    scale = max(float(np.max(np.abs(a), initial=0.0)), float(np.max(np.abs(b), initial=0.0)), 1e-300)
    return float(np.max(np.abs(a - b), initial=0.0)) / scale


# ---------------------------------------------------------------------------
# algebra suites


def affine_suite(rng) -> Suite:
    s = Suite("affine_core")
    k = 4
    maps = [affine.AffineMap(rng.standard_normal((k, k)), rng.standard_normal(k)) for _ in range(3)]
    f, g, h = maps
    a = affine.AffinePoint(rng.standard_normal(k))
    lhs = h.compose(g).compose(f)(a).coords
    rhs = h.compose(g.compose(f))(a).coords
    s.add("composition associativity", _rel(lhs, rhs), 1e-12)
    b = affine.AffineDualElement(rng.standard_normal(k), rng.standard_normal())
    s.add("pullback evaluates through the map", abs(affine.affine_dual_map(f)(b)(a) - b(f(a))), 1e-12)
    pulled = affine.affine_dual_map(g.compose(f))(b).as_vector()
    chained = affine.affine_dual_map(f)(affine.affine_dual_map(g)(b)).as_vector()
    s.add("pullback reverses composition", _rel(pulled, chained), 1e-12)
    s.add("dual matrix matches pullback",
          _rel(affine.dual_map_matrix(f) @ b.as_vector(), affine.affine_dual_map(f)(b).as_vector()), 1e-12)
    # 0 -> constants -> affine dual -> linear dual -> 0
    proj = np.hstack([np.eye(k), np.zeros((k, 1))])
    sv = np.linalg.svd(proj, compute_uv=False)
    s.add("linear-part map is onto", abs(int(np.sum(sv > 1e-10)) - k), 0)
    s.add("kernel of linear part is the constants", float(np.max(np.abs(proj @ np.eye(k + 1)[:, k]))), 1e-15)
    V = rng.standard_normal((k, 1))
    W = np.hstack([f.linear @ V, rng.standard_normal((k, 1))])
    lhs = affine.quotient_project(f(a), W).coords
    rhs = affine.factor_map(f, V, W)(affine.quotient_project(a, V)).coords
    s.add("factor map commutes with projections", _rel(lhs, rhs), 1e-10)
    return s


def jet_suite(rng) -> Suite:
    s = Suite("jet_calculus")
    n, k = 2, 2
    T1 = jets.perturbed_chart(rng, n, k, 0.2)
    T2 = jets.perturbed_chart(rng, n, k, 0.2)
    x, q = rng.standard_normal((8, n)), rng.standard_normal((8, k))
    j = jets.JetPoint(x, q, rng.standard_normal((8, k, n)))
    direct = jets.transform_jet(jets.compose_charts(T2, T1), j).qdot
    chained = jets.transform_jet(T2, jets.transform_jet(T1, j)).qdot
    s.add("first-jet law composes", _rel(direct, chained), 1e-10)
    z = jets.ExtendedDualPoint(x, q, rng.standard_normal((8, n, k)), rng.standard_normal(8))
    before = jets.jet_pairing(z, j)
    after = jets.jet_pairing(jets.transform_dual(T1, z), jets.transform_jet(T1, j))
    s.add("affine pairing is chart invariant", _rel(before, after), 1e-10)
    qdd = rng.standard_normal((8, k, n, n))
    qdd = qdd + np.swapaxes(qdd, -1, -2)
    sj = jets.SecondJetPoint(x, q, j.qdot, qdd)
    out = jets.transform_second_jet(T1, sj)
    s.add("second-jet law preserves symmetry", out.symmetry_defect(), 1e-10)
    direct2 = jets.transform_second_jet(jets.compose_charts(T2, T1), sj).qddot
    chained2 = jets.transform_second_jet(T2, jets.transform_second_jet(T1, sj)).qddot
    s.add("second-jet law composes", _rel(direct2, chained2), 1e-10)
    top = jets.prolongation_matrix(T1, j)[..., :n, :]
    s.add("prolongation is a section over the base", float(np.max(np.abs(top - np.eye(n)))), 1e-10)
    return s


def model_suite(model: LagrangianModel, rng) -> tuple[Suite, bool]:
    s = Suite("models")
    k = model.k
    m = 200
    jp = jets.JetPoint(rng.uniform(0, 2 * math.pi, (m, 2)), 0.3 * rng.standard_normal((m, k)),
                       0.3 * rng.standard_normal((m, k, 2)))
    reg = check_time_regularity(model, jp)
    s.add("time regularity (min |det A00|, must exceed threshold)",
          0.0 if reg.passed else reg.threshold - reg.min_abs_det, 0.0)
    if not reg.passed:
        return s, False
    z = legendre_forward(model, jp)
    back = legendre_inverse(dw_hamiltonian_from_L(model), jets.eta_project(z))
    s.add("Legendre round trip", float(np.max(np.abs(back.qdot - jp.qdot))), 1e-10)
    if model.hamiltonian is not None:
        H_leg = dw_hamiltonian_from_L(model).partials(jp.x, jp.q, z.p).H
        H_exp = explicit_hamiltonian(model).partials(jp.x, jp.q, z.p).H
        s.add("Legendre Hamiltonian matches closed form", _rel(H_leg, H_exp), 1e-10)
    u = rng.standard_normal((m, 2))
    hyp = check_regular_hyperbolicity(model, jp, u)
    s.add("regular hyperbolicity (signed eigenvalue margin)",
          0.0 if hyp.passed else -min(hyp.timelike_margin, hyp.spacelike_margin), 0.0)
    return s, True


# ---------------------------------------------------------------------------
# lattice suites


def background(model: LagrangianModel, grid: Grid) -> np.ndarray:
    """A smooth discrete solution used as the default background."""
    x = grid.x
    phi0 = np.stack([0.3 * np.cos(x + 0.7 * i) for i in range(model.k)], axis=-1)
    phid = np.stack([0.2 * np.sin(2 * x + 0.4 * i) for i in range(model.k)], axis=-1)
    return solve_cauchy_lagrangian(model, grid, phi0, phid)


def _interior_source(grid, k, rng, lo=None, hi=None):
    f = np.zeros(grid.shape + (k,))
    lo = 2 if lo is None else lo
    hi = grid.Nt - 2 if hi is None else hi
    f[lo:hi] = rng.standard_normal((hi - lo, grid.Nx, k))
    return f


def dynamics_suite(model, grid, phi, rng) -> Suite:
    s = Suite("dynamics")
    S_L = action(model, phi, grid, mode="lagrangian")
    S_T = action(model, phi, grid, mode="theta_L")
    s.add("pullback identity theta_L vs L", abs(S_L - S_T) / max(abs(S_L), 1e-300), 1e-12)
    res = el_residual(model, phi, grid)
    worst = 0.0
    for _ in range(3):
        V = jets.random_vertical_field(rng, 2, model.k)
        X = grid.coords()
        lhs = contraction_L(model, phi, grid, V)
        rhs = np.einsum("abi,abi->ab", res, V.fiber(X, phi))
        worst = max(worst, _rel(lhs, rhs))
    s.add("contraction with prolonged field equals EL pairing", worst, 1e-10)
    if model.hamiltonian is not None:
        Hm = explicit_hamiltonian(model)
        pi = 0.3 * rng.standard_normal(grid.shape + (2, model.k))
        Vq = rng.standard_normal(grid.shape + (model.k,))
        Vp = rng.standard_normal(grid.shape + (2, model.k))
        r = dw_residual(Hm, phi, pi, grid)
        rhs = np.einsum("abi,abi->ab", Vq, r[..., : model.k]) + np.einsum(
            "abi,abi->ab", Vp.reshape(grid.shape + (-1,)), r[..., model.k:])
        s.add("Hamiltonian contraction equals DW pairing", _rel(contraction_H(Hm, phi, pi, grid, Vq, Vp), rhs), 1e-10)
    d = rng.standard_normal(phi.shape)
    eps = 1e-6
    fd = (el_residual(model, phi + eps * d, grid) - el_residual(model, phi - eps * d, grid)) / (2 * eps)
    s.add("Jacobi operator is the linearization", _rel(jacobi_apply_L(model, phi, d, grid), fd), 1e-5)
    return s


def green_suite(blocks, rng) -> Suite:
    s = Suite("green")
    g, k = blocks.grid, blocks.k
    f = _interior_source(g, k, rng)
    h = _interior_source(g, k, rng)
    ur, ua = green_retarded_apply(blocks, f), green_advanced_apply(blocks, f)
    scale = float(np.max(np.abs(f)))
    s.add("retarded solves J u = f", float(np.max(np.abs(blocks.apply(ur)[:-2] - f[:-2]))) / scale, 1e-10)
    s.add("advanced solves J u = f", float(np.max(np.abs(blocks.apply(ua)[2:] - f[2:]))) / scale, 1e-10)
    uc = green_causal_apply(blocks, f)
    s.add("causal response is homogeneous", float(np.max(np.abs(blocks.apply(uc)[2:-2]))) / scale, 1e-10)
    f_late = _interior_source(g, k, rng, lo=g.Nt // 2)
    early = green_retarded_apply(blocks, f_late)[: g.Nt // 2 + 2]
    late = green_advanced_apply(blocks, _interior_source(g, k, rng, hi=g.Nt // 2))[g.Nt // 2 - 2:]
    s.add("support zeros", float(np.max(np.abs(early)) + np.max(np.abs(late))), 0.0)
    rec = pairing(f, green_retarded_apply(blocks, h), g) - pairing(green_advanced_apply(blocks, f), h, g)
    s.add("reciprocity", abs(rec) / max(abs(pairing(f, green_retarded_apply(blocks, h), g)), 1e-300), 1e-9)
    anti = pairing(f, green_causal_apply(blocks, h), g) + pairing(h, uc, g)
    s.add("causal antisymmetry", abs(anti) / max(abs(pairing(h, uc, g)), 1e-300), 1e-9)
    return s


def _smooth_source(grid, k, start, order, phase):
    w = binomial_window(grid, start, order)
    prof = np.stack([np.cos(grid.x + phase + 0.5 * i) for i in range(k)], axis=-1)
    return w[:, None, None] * prof[None]


def _smooth_order(grid):
    return max(2, grid.Nt // 4)


def symplectic_suite(model, grid, phi, blocks, rng) -> Suite:
    s = Suite("symplectic")
    g, k = grid, blocks.k
    o = _smooth_order(g)
    c = g.Nt // 2 - o // 2
    u = green_causal_apply(blocks, _smooth_source(g, k, c, o, 0.0))
    v = green_causal_apply(blocks, _smooth_source(g, k, c - 1, o, 1.1))
    J = current_L(blocks, u, v)
    om = np.array([omega_slice(J, g, a) for a in range(2, g.Nt - 2)])
    h2 = max(g.dt, g.dx) ** 2
    s.add("Omega independent of the slice (second order)",
          float(om.max() - om.min()) / max(float(np.max(np.abs(om))), 1e-300), 0.1 * h2)
    T, X = g.mesh()
    d = np.stack([np.sin(X + 0.3 * (i + 1)) * np.cos(0.7 * T) for i in range(k)], axis=-1)
    rep = theta_action_variation_check(model, phi, d, g, g.Nt // 8, g.Nt // 2)
    s.add("Theta difference equals action derivative (second order)", rep["relative_mismatch"], 2.0 * h2)
    return s


def peierls_suite(model, grid, phi, blocks, rng) -> Suite:
    s = Suite("peierls")
    g, k = grid, blocks.k
    o = _smooth_order(g)
    c = g.Nt // 2 - o // 2
    wf = np.stack([np.cos(g.x + 0.5 * i) for i in range(k)], axis=-1)
    wg = np.stack([np.cos(g.x + 0.3 + 0.5 * i) + 0.4 for i in range(k)], axis=-1)
    F = smeared_field(g, wf, binomial_window(g, c, o))
    G = smeared_velocity(g, wg, binomial_window(g, c + 2, o))
    rep = peierls_bracket(model, phi, F, G, g, blocks)
    scale = max(rep.scale, 1e-300)
    s.add("bracket formulas agree", rep.formula_spread / scale, 1e-9)
    s.add("bracket antisymmetry", rep.antisymmetry_residual / scale, 1e-9)
    s.add(f"Omega(X_F, X_G) = {OMEGA_SIGN:+g} {{F,G}} (second order)",
          rep.omega_residual / max(abs(rep.value), 1e-300), 2.0 * max(g.dt, g.dx) ** 2)
    eta = np.zeros(g.shape + (k,))
    eta[4:-4] = rng.standard_normal((g.Nt - 8, g.Nx, k))
    s.add("extension independence of X_F", extension_independence(model, phi, F, eta, g), 1e-8)
    win = np.zeros(g.Nt)
    win[3:-3] = np.hanning(g.Nt - 4)[1:-1]
    Q1 = local_density(g, lambda x, q, v: 0.5 * q[0] * q[0], win, k)
    Q2 = local_density(g, lambda x, q, v: q[0] * v[0][0], win, k)
    s.add("Leibniz rule", leibniz_check(model, phi, Q1, F, G, g)["relative_residual"], 1e-6)
    s.add("Leibniz rule with a constant factor",
          leibniz_check(model, phi, ConstantFunctional(g, 2.5, k), Q1, G, g)["relative_residual"], 1e-9)
    if model.name == "klein_gordon":
        Q3 = local_density(g, lambda x, q, v: 0.5 * v[0][1] * v[0][1], win, k)
        s.add("Jacobi identity (quadratic functionals)",
              jacobi_identity_check(model, phi, Q1, Q2, Q3, g)["relative_residual"], 1e-4)
    return s


# ---------------------------------------------------------------------------
# refinement ladder


def theta_convergence(model, base: Grid, scales) -> dict:
    """Theta-difference mismatch over a ladder of refined grids, with observed orders."""
    rows = []
    for sc in scales:
        g = Grid(base.Nt * sc, base.Nx * sc, base.dt / sc, base.dx / sc)
        phi = background(model, g)
        T, X = g.mesh()
        d = np.stack([np.sin(X + 0.3 * (i + 1)) * np.cos(0.7 * T) for i in range(model.k)], axis=-1)
        rep = theta_action_variation_check(model, phi, d, g, g.Nt // 8, g.Nt // 2)
        rows.append({"scale": int(sc), "Nt": g.Nt, "Nx": g.Nx, "error": rep["relative_mismatch"]})
    for prev, cur in zip(rows, rows[1:]):
        ratio = prev["error"] / cur["error"] if cur["error"] > 0 else math.inf
        cur["ratio"] = ratio
        cur["order"] = math.log2(ratio) if ratio > 0 and math.isfinite(ratio) else math.inf
    return {"quantity": "theta_difference_mismatch", "rows": rows}


def run_verification(model: LagrangianModel, grid: Grid, seed: int = 0, refinement=None) -> dict:
    rng = np.random.default_rng(seed)
    suites = [affine_suite(rng), jet_suite(rng)]
    ms, regular = model_suite(model, rng)
    suites.append(ms)
    dependent = ["dynamics", "green", "symplectic", "peierls"]
    if not regular:
        reason = f"model {model.name!r} is not time-regular; lattice suites need an invertible time block"
        suites += [Suite(name, skipped=reason) for name in dependent]
    else:
        phi = background(model, grid)
        blocks = assemble_jacobi_blocks(model, phi, grid)
        suites.append(dynamics_suite(model, grid, phi, rng))
        suites.append(green_suite(blocks, rng))
        suites.append(symplectic_suite(model, grid, phi, blocks, rng))
        suites.append(peierls_suite(model, grid, phi, blocks, rng))
    report = {"model": model.name, "suites": {s.name: s.as_dict() for s in suites}}
    if regular and refinement:
        report["convergence"] = theta_convergence(model, grid, refinement)
    report["passed"] = all(s.status != "fail" for s in suites)
    return report
