"""The twelve acceptance criteria, each at its stated tolerance and time budget."""

import time

import numpy as np

from multisym.dynamics import (
    action,
    assemble_jacobi_blocks,
    contraction_H,
    contraction_L,
    dw_residual,
    el_residual,
    jacobi_apply_H,
    jacobi_apply_L,
    solve_cauchy_lagrangian,
)
from multisym.green import green_advanced_apply, green_causal_apply, green_retarded_apply
from multisym.jets import JetPoint, eta_project, random_vertical_field
from multisym.lattice import Grid, delta_source, gradient, pairing
from multisym.models import (
    check_regular_hyperbolicity,
    check_time_regularity,
    degenerate_model,
    dw_hamiltonian_from_L,
    explicit_hamiltonian,
    klein_gordon,
    legendre_forward,
    legendre_inverse,
    phi4,
    sigma_model,
)
from multisym.peierls import (
    binomial_window,
    extension_independence,
    jacobi_identity_check,
    leibniz_check,
    local_density,
    omega_duality_check,
    peierls_bracket,
    smeared_field,
    smeared_velocity,
)
from multisym.symplectic import current_divergence, current_L, omega_all_slices, omega_slice, theta_action_variation_check
from multisym.verification import affine_suite, jet_suite


def rel(a, b):
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-300))


def ratios(errors):
    e = np.asarray(errors, dtype=float)
    return e[:-1] / e[1:]


def kg_background(g, m=1.0):
    x = g.x
    return solve_cauchy_lagrangian(klein_gordon(m), g, 0.3 * np.cos(x), 0.2 * np.sin(2 * x))


def test_criterion_01_pullback_identity(criterion):
    rng = np.random.default_rng(1)
    g = Grid.periodic(32, 64)
    t0 = time.perf_counter()
    worst = 0.0
    for i in range(20):
        model = sigma_model(0.3) if i % 2 else klein_gordon(1.0)
        phi = 0.5 * rng.standard_normal(g.shape + (model.k,))
        S = action(model, phi, g)
        worst = max(worst, abs(action(model, phi, g, mode="theta_L") - S) / abs(S))
    dt = time.perf_counter() - t0
    criterion(1, worst <= 1e-12 and dt < 1.0, f"max |dS|/|S| = {worst:.2e} (<= 1e-12), {dt:.2f} s (< 1 s)")


def test_criterion_02_legendre_round_trips(criterion):
    rng = np.random.default_rng(2)
    t0 = time.perf_counter()
    worst = {}
    for label, model, amp in [("kg", klein_gordon(1.0), 1.0), ("phi4", phi4(1.0, 1.0), 0.2),
                              ("sigma0", sigma_model(0.0), 0.6), ("sigma0.3", sigma_model(0.3), 0.6)]:
        k = model.k
        j = JetPoint(rng.uniform(0, 6, (1000, 2)), amp * rng.standard_normal((1000, k)),
                     amp * rng.standard_normal((1000, k, 2)))
        back = legendre_inverse(dw_hamiltonian_from_L(model), eta_project(legendre_forward(model, j)))
        worst[label] = float(np.abs(back.qdot - j.qdot).max())
    dt = time.perf_counter() - t0
    err = max(worst.values())
    criterion(2, err <= 1e-10 and dt < 1.0, f"max round-trip error {err:.2e} (<= 1e-10), {dt:.2f} s (< 1 s)")


def test_criterion_03_contraction_cross_check(criterion):
    rng = np.random.default_rng(3)
    g = Grid.periodic(32, 64, cfl=0.5)
    model = sigma_model(0.3)
    T, X = g.mesh()
    phi = np.stack([0.4 * np.cos(X + 0.3 * T), 0.3 * np.sin(2 * X - T)], -1)
    t0 = time.perf_counter()
    res = el_residual(model, phi, g)
    worst_L = 0.0
    for _ in range(10):
        V = random_vertical_field(rng, 2, 2)
        rhs = np.einsum("abi,abi->ab", res, V.fiber(g.coords(), phi))
        worst_L = max(worst_L, rel(contraction_L(model, phi, g, V), rhs))
    Hm = explicit_hamiltonian(model)
    pi = legendre_forward(model, JetPoint(g.coords(), phi, gradient(phi, g))).p + 0.1 * rng.standard_normal(g.shape + (2, 2))
    r = dw_residual(Hm, phi, pi, g)
    worst_H = 0.0
    for _ in range(10):
        Vq, Vp = rng.standard_normal(phi.shape), rng.standard_normal(pi.shape)
        rhs = np.einsum("abi,abi->ab", Vq, r[..., :2]) + np.einsum("abi,abi->ab", Vp.reshape(g.shape + (-1,)), r[..., 2:])
        worst_H = max(worst_H, rel(contraction_H(Hm, phi, pi, g, Vq, Vp), rhs))
    dt = time.perf_counter() - t0
    ok = worst_L <= 1e-10 and worst_H <= 1e-10 and dt < 5.0
    criterion(3, ok, f"Lagrangian {worst_L:.2e}, Hamiltonian {worst_H:.2e} (<= 1e-10), {dt:.2f} s (< 5 s)")


def test_criterion_04_jacobi_linearization(criterion):
    rng = np.random.default_rng(4)
    g = Grid.periodic(64, 64, cfl=0.5)
    T, X = g.mesh()
    eps = 1e-6
    t0 = time.perf_counter()
    worst = 0.0
    for model in (sigma_model(0.3), phi4(1.0, 2.0)):
        k = model.k
        phi = np.stack([0.4 * np.cos(X + 0.5 * i) * np.cos(T) + 0.1 * np.sin(2 * X - T) for i in range(k)], -1)
        d = rng.standard_normal(phi.shape)
        fd = (el_residual(model, phi + eps * d, g) - el_residual(model, phi - eps * d, g)) / (2 * eps)
        worst = max(worst, rel(jacobi_apply_L(model, phi, d, g), fd))
        Hm = explicit_hamiltonian(model)
        pi = legendre_forward(model, JetPoint(g.coords(), phi, gradient(phi, g))).p
        dpi = rng.standard_normal(pi.shape)
        fd = (dw_residual(Hm, phi + eps * d, pi + eps * dpi, g) - dw_residual(Hm, phi - eps * d, pi - eps * dpi, g)) / (2 * eps)
        worst = max(worst, rel(jacobi_apply_H(Hm, phi, pi, d, dpi, g), fd))
    dt = time.perf_counter() - t0
    criterion(4, worst <= 1e-5 and dt < 10.0, f"max rel error {worst:.2e} (<= 1e-5), {dt:.2f} s (< 10 s)")


def test_criterion_05_green_defining_equations(criterion):
    rng = np.random.default_rng(5)
    g = Grid.periodic(64, 64)
    t0 = time.perf_counter()
    B = assemble_jacobi_blocks(klein_gordon(1.0), kg_background(g), g)

    def source(lo=2, hi=g.Nt - 2):
        f = np.zeros(g.shape + (1,))
        f[lo:hi] = rng.standard_normal((hi - lo, g.Nx, 1))
        return f

    f, h = source(), source()
    ur, ua = green_retarded_apply(B, f), green_advanced_apply(B, f)
    resid = max(np.abs(B.apply(ur)[:-2] - f[:-2]).max(), np.abs(B.apply(ua)[2:] - f[2:]).max()) / np.abs(f).max()
    late, early = source(lo=40), source(hi=24)
    zeros = bool(np.all(green_retarded_apply(B, late)[:42] == 0) and np.all(green_advanced_apply(B, early)[22:] == 0))
    a = pairing(f, green_retarded_apply(B, h), g)
    recip = abs(a - pairing(ua, h, g)) / abs(a)
    c = pairing(f, green_causal_apply(B, h), g)
    anti = abs(c + pairing(h, ur - ua, g)) / abs(c)
    dt = time.perf_counter() - t0
    ok = resid <= 1e-10 and zeros and recip <= 1e-9 and anti <= 1e-9 and dt < 30.0
    criterion(5, ok, f"residual {resid:.2e}, support zeros {zeros}, reciprocity {recip:.2e}, "
                     f"antisymmetry {anti:.2e}, {dt:.2f} s")


def dalembert_l1_error(n):
    """Mean |G_ret delta - theta(t - |x|)/2| over nodes inside the cone, before it wraps around."""
    g = Grid.periodic(n, n)
    B = assemble_jacobi_blocks(klein_gordon(0.0), np.zeros(g.shape + (1,)), g)
    a0, b0 = 2, n // 2
    u = green_retarded_apply(B, delta_source(g, (a0, b0)))[..., 0]
    T, X = g.mesh()
    t, x = T - a0 * g.dt, X - b0 * g.dx
    inside = (t > 0) & (np.abs(x) <= t) & (t < 0.5 * g.length)
    return float(np.mean(np.abs(u[inside] - 0.5))), u, inside


def test_criterion_06_dalembert_oracle(criterion):
    t0 = time.perf_counter()
    errs = [dalembert_l1_error(n)[0] for n in (64, 128)]
    dt = time.perf_counter() - t0
    ok = errs[0] <= 0.06 and errs[1] < errs[0] and dt < 10.0
    criterion(6, ok, f"pointwise L1 error {errs[0]:.3f} at 64x64 (<= 0.06), {errs[1]:.3f} at 128x128 "
                     f"(must decrease), {dt:.2f} s")


def test_criterion_06_diagnostic_block_averages():
    # not a criterion: the response lives on one of four interleaved sublattices with value 4;
    # 4x4 block means reproduce 1/2 everywhere well inside the cone
    _, u, inside = dalembert_l1_error(64)
    assert set(np.unique(np.round(u[inside], 9))) == {0.0, 4.0}
    block = u[6:30, 30:34].reshape(6, 4, 1, 4).mean(axis=(1, 3))
    np.testing.assert_allclose(block, 0.5, atol=1e-12)


def test_criterion_07_conservation_and_slice_independence(criterion):
    w, w2 = np.sqrt(2.0), np.sqrt(5.0)
    t0 = time.perf_counter()
    divs, devs = [], []
    for n in (32, 64, 128):
        g = Grid.periodic(n, n)
        T, X = g.mesh()
        B = assemble_jacobi_blocks(klein_gordon(1.0), kg_background(g), g)
        u = (np.cos(X) * np.cos(w * T) + 0.5 * np.sin(2 * X - w2 * T))[..., None]
        v = (np.cos(X) * np.sin(w * T) + 0.3 * np.cos(2 * X - w2 * T + 0.4))[..., None]
        div, _ = current_divergence(B, u, v)
        divs.append(float(np.abs(div[2:-2]).max()))
        om = omega_all_slices(current_L(B, u, v), g)
        devs.append(float(om.max() - om.min()))
    g = Grid.periodic(64, 128)
    T, X = g.mesh()
    B = assemble_jacobi_blocks(klein_gordon(1.0), np.zeros(g.shape + (1,)), g)
    om = omega_slice(current_L(B, (np.cos(X) * np.cos(w * T))[..., None], (np.cos(X) * np.sin(w * T))[..., None]),
                     g, g.Nt // 2)
    standing = abs(om / (np.pi * w) - 1)
    dt = time.perf_counter() - t0
    rd, rs = ratios(divs), ratios(devs)
    ok = (np.all((rd >= 3.2) & (rd <= 4.8)) and np.all((rs >= 3.2) & (rs <= 4.8))
          and standing <= 1e-3 and dt < 60.0)
    criterion(7, ok, f"div J ratios {np.round(rd, 3).tolist()}, slice deviation ratios {np.round(rs, 3).tolist()} "
                     f"(in [3.2, 4.8]), standing-mode rel {standing:.1e} (<= 1e-3), {dt:.2f} s")


def test_criterion_08_theta_difference(criterion):
    t0 = time.perf_counter()
    g = Grid.periodic(515, 1024)
    T, X = g.mesh()
    phi = solve_cauchy_lagrangian(klein_gordon(1.0), g, np.cos(g.x), np.zeros(g.Nx))
    dphi = (np.sin(X + 0.3) * np.cos(0.7 * T))[..., None]
    rep = theta_action_variation_check(klein_gordon(1.0), phi, dphi, g, 128, 512)
    dt = time.perf_counter() - t0
    mis = rep["relative_mismatch"]
    criterion(8, mis <= 1e-4 and dt < 10.0, f"rel mismatch {mis:.2e} (<= 1e-4) on 515x1024, {dt:.2f} s (< 10 s)")


def test_criterion_09_omega_duality(criterion):
    t0 = time.perf_counter()
    model = klein_gordon(1.0)
    res = []
    for nt, nx in ((32, 64), (64, 128), (128, 256)):
        g = Grid.periodic(nt, nx)
        T, X = g.mesh()
        F = smeared_field(g, np.cos(g.x + 0.3), binomial_window(g, nt // 2 - 1, 2))
        dphi = (np.cos(X) * np.cos(np.sqrt(2) * T))[..., None]
        res.append(omega_duality_check(model, np.zeros(g.shape + (1,)), F, dphi, g)["residual"])
    g = Grid.periodic(64, 128)
    F = smeared_field(g, np.cos(g.x + 0.3), binomial_window(g, 31, 2))
    eta = np.zeros(g.shape + (1,))
    eta[4:-4] = np.random.default_rng(9).standard_normal((g.Nt - 8, g.Nx, 1))
    ext = extension_independence(model, kg_background(g), F, eta, g)
    dt = time.perf_counter() - t0
    r = ratios(res)
    ok = res[1] <= 1e-2 and np.all((r >= 3.2) & (r <= 4.8)) and ext <= 1e-8 and dt < 30.0
    criterion(9, ok, f"residuals {[f'{v:.2e}' for v in res]} (64x128 <= 1e-2), ratios {np.round(r, 3).tolist()}, "
                     f"extension {ext:.1e} (<= 1e-8), {dt:.2f} s")


def gaussian_window(g, centre, width=6.0):
    T, X = g.mesh()
    w = np.exp(-(((T - centre * g.dt) / (width * g.dt)) ** 2)) * (1 + 0.3 * np.cos(X))
    w[:3] = 0
    w[-3:] = 0
    return w


def test_criterion_10_bracket_suite(criterion):
    t0 = time.perf_counter()
    model = klein_gordon(1.0)
    f_prof, g_prof = np.cos, lambda x: np.cos(x + 0.3) + 0.4
    canon, canon_err, spreads, equal_time, signs = [], [], [], [], []
    for nt, nx in ((32, 64), (64, 128), (128, 256)):
        g = Grid.periodic(nt, nx)
        phi = kg_background(g)
        B = assemble_jacobi_blocks(model, phi, g)
        win = binomial_window(g, nt // 2 - 1, 2)
        Phi_f = smeared_field(g, f_prof(g.x), win)
        Pi_g = smeared_velocity(g, g_prof(g.x), win)
        exact = float(np.sum(f_prof(g.x) * g_prof(g.x)) * g.dx)
        rep = peierls_bracket(model, phi, Phi_f, Pi_g, g, B)
        canon.append(rep.value)
        canon_err.append(abs(abs(rep.value) - exact) / exact)
        signs.append(np.sign(rep.value))
        spreads.append(rep.formula_spread / rep.scale)
        pp = peierls_bracket(model, phi, Phi_f, smeared_field(g, g_prof(g.x), win), g, B)
        equal_time.append(abs(pp.value) / pp.scale)
    # order 2: either the error is already at roundoff, or it falls by at least 3.2 per halving
    conv = all(e <= 1e-12 for e in canon_err[1:]) or bool(np.all(ratios(canon_err) >= 3.2))
    g = Grid.periodic(32, 64)
    phi = solve_cauchy_lagrangian(model, g, 0.7 * np.cos(g.x) + 0.2 * np.sin(2 * g.x), 0.3 * np.sin(g.x))
    F = local_density(g, lambda x, q, v: 0.5 * q[0] * q[0], gaussian_window(g, 10))
    G = local_density(g, lambda x, q, v: q[0] * v[0][0], gaussian_window(g, 16))
    H = local_density(g, lambda x, q, v: 0.5 * v[0][1] * v[0][1] + q[0] * v[0][1], gaussian_window(g, 20))
    jac = jacobi_identity_check(model, phi, F, G, H, g)["relative_residual"]
    leib = leibniz_check(model, phi, F, G, H, g)["relative_residual"]
    dt = time.perf_counter() - t0
    ok = (max(spreads) <= 1e-9 and canon_err[1] <= 2e-2 and conv and len(set(signs)) == 1
          and max(equal_time) <= 2e-2 and jac <= 1e-4 and leib <= 1e-6 and dt < 120.0)
    criterion(10, ok, f"formula spread {max(spreads):.1e}, canonical pair rel {canon_err[1]:.1e} at 64x128 "
                      f"(errors {[f'{e:.1e}' for e in canon_err]}, sign {int(signs[0]):+d}), equal-time "
                      f"{max(equal_time):.1e}, Jacobi {jac:.1e}, Leibniz {leib:.1e}, {dt:.2f} s")


def test_criterion_11_hyperbolicity_and_regularity(criterion):
    rng = np.random.default_rng(11)
    t0 = time.perf_counter()
    m = 100
    j = JetPoint(rng.uniform(0, 6, (m, 2)), 0.8 * rng.standard_normal((m, 2)), 0.8 * rng.standard_normal((m, 2, 2)))
    hyp = check_regular_hyperbolicity(sigma_model(0.3), j, rng.standard_normal((m, 2)))
    kg = check_time_regularity(klein_gordon(1.0), JetPoint(j.x, j.q[:, :1], j.qdot[:, :1]))
    kg_det_one = kg.passed and kg.min_abs_det == 1.0
    deg = check_time_regularity(degenerate_model(), JetPoint(j.x, j.q[:, :1], j.qdot[:, :1]))
    dt = time.perf_counter() - t0
    ok = hyp.passed and kg_det_one and not deg.passed and dt < 1.0
    criterion(11, ok, f"sigma {hyp.n_timelike} timelike / {hyp.n_spacelike} spacelike, margins "
                      f"{hyp.timelike_margin:.3f} / {hyp.spacelike_margin:.3f}; KG det {kg.min_abs_det}; "
                      f"degenerate flagged {not deg.passed}; {dt:.2f} s")


def test_criterion_12_jet_and_affine_suites(criterion):
    rng = np.random.default_rng(12)
    t0 = time.perf_counter()
    suites = [affine_suite(rng), jet_suite(rng)]
    dt = time.perf_counter() - t0
    bad = [f"{s.name}: {c.name}" for s in suites for c in s.checks if not c.passed]
    n = sum(len(s.checks) for s in suites)
    criterion(12, not bad and dt < 5.0, f"{n} checks, failures {bad or 'none'}, {dt:.2f} s (< 5 s)")
