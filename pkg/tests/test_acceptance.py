"""Acceptance suite: every criterion at its stated tolerance.

Each test prints one pass/fail line into the terminal summary (see
conftest.record_criterion) and asserts the criterion itself.
"""

import time

import numpy as np
import pytest

from conftest import record_criterion
from pell_lab import bellman as bl
from pell_lab import cutoff as co
from pell_lab import hess, pell
from pell_lab import semigroup as sg
from pell_lab.field import (
    CoefficientTuple,
    GridDomain,
    SubcriticalityCert,
    ellipticity_constants,
)


def const_tuple(A, b=None, c=None, V=0.0, n=8, bc="dirichlet", L=np.pi):
    dom = GridDomain.interval(0.0, L, n, bc=bc)
    return CoefficientTuple.constant(dom, A, b=b, c=c, V=V)


def field_tuple(V, n, bc="dirichlet", L=np.pi, A=None):
    dom = GridDomain.interval(0.0, L, n, bc=bc)
    base = CoefficientTuple.constant(dom, np.eye(1) if A is None else A, V=0.0)
    return dom, CoefficientTuple(domain=dom, A=base.A, b=base.b, c=base.c,
                                 V=np.asarray(V, dtype=float))


def test_criterion_01_delta_p_closed_forms():
    t0 = time.time()
    worst = 0.0
    for p in (1.25, 2.0, 3.0, 4.0, 8.0):
        r = abs(1.0 - 2.0 / p)
        worst = max(worst, abs(pell.delta_p(np.eye(1), p) - (1.0 - r)))
        for phi in (0.0, np.pi / 6, np.pi / 3):
            got = pell.delta_p(np.array([[np.exp(1j * phi)]]), p)
            worst = max(worst, abs(got - (np.cos(phi) - r)))
    elapsed = time.time() - t0
    ok = worst < 1e-8 and elapsed < 1.0
    record_criterion(1, ok, f"max err {worst:.2e}, {elapsed:.3f}s")
    assert worst < 1e-8
    assert elapsed < 1.0


def test_criterion_02_delta_2_equals_lambda():
    rng = np.random.default_rng(42)
    worst = 0.0
    for _ in range(100):
        A = rng.standard_normal((3, 3)) + 1j * rng.standard_normal((3, 3))
        A = A + 4.0 * np.eye(3)
        lam, _ = ellipticity_constants(A)
        worst = max(worst, abs(pell.delta_p(A, 2.0) - lam))
    record_criterion(2, worst < 1e-9, f"max |delta_2 - lambda| {worst:.2e}")
    assert worst < 1e-9


def test_criterion_03_power_function_identity():
    rng = np.random.default_rng(43)
    worst = 0.0
    for _ in range(10**4):
        d = int(rng.integers(1, 3))
        A = rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d)) \
            + 3.0 * d * np.eye(d)
        b = 0.5 * (rng.standard_normal(d) + 1j * rng.standard_normal(d))
        c = 0.5 * (rng.standard_normal(d) + 1j * rng.standard_normal(d))
        V = float(rng.uniform(0.0, 3.0))
        r = float(rng.uniform(1.2, 6.0))
        zeta = complex(*rng.standard_normal(2))
        if abs(zeta) < 1e-3:
            continue
        X = rng.standard_normal(d) + 1j * rng.standard_normal(d)
        worst = max(worst,
                    hess.power_hessian_identity_gap(A, b, c, V, r, zeta, X))
    record_criterion(3, worst < 1e-10, f"max rel gap {worst:.2e}")
    assert worst < 1e-10


def test_criterion_04_bellman_derivatives_vs_finite_differences():
    rng = np.random.default_rng(44)
    worst_g, worst_h = 0.0, 0.0
    for p in (2.0, 3.0, 4.0):
        params = bl.BellmanParams(p=p, delta=0.2)
        z, e = bl.sample_omegas(4 * 10**4, rng, mod_range=(0.2, 4.0))
        keep = ~bl.on_singular_set(z, e, params, eps=1e-3)
        z, e = z[keep][:10**4], e[keep][:10**4]
        h = 1e-6
        g = bl.q_grad_real(z, e, params)
        H = bl.q_hess(z, e, params, eps_upsilon=1e-5)
        fd_g = np.empty_like(g)
        fd_h = np.empty_like(H)
        steps = [(h, 0), (1j * h, 0), (0, h), (0, 1j * h)]
        for j, (dz, de) in enumerate(steps):
            fd_g[..., j] = (bl.q_eval(z + dz, e + de, params)
                            - bl.q_eval(z - dz, e - de, params)) / (2 * h)
            fd_h[..., j, :] = (bl.q_grad_real(z + dz, e + de, params)
                               - bl.q_grad_real(z - dz, e - de, params)) / (2 * h)
        worst_g = max(worst_g, float(np.max(
            np.abs(fd_g - g) / np.maximum(1.0, np.abs(g)))))
        worst_h = max(worst_h, float(np.max(
            np.abs(fd_h - H) / np.maximum(1.0, np.abs(H)))))
    ok = worst_g < 1e-6 and worst_h < 1e-5
    record_criterion(4, ok, f"grad rel {worst_g:.2e}, hess rel {worst_h:.2e}")
    assert worst_g < 1e-6
    assert worst_h < 1e-5


def test_criterion_05_plain_convexity_tau_bound():
    t0 = time.time()
    ca = const_tuple(np.eye(1), V=2.0)
    cb = const_tuple(np.eye(1), V=0.5)
    worst_ratio = np.inf
    for p in (2.0, 3.0, 4.0):
        delta, _ = hess.choose_delta(ca, cb, p, n_presample=20000, rng=p)
        params = bl.BellmanParams(p=p, delta=delta)
        rep = hess.verify_convexity(ca, cb, p, params, n_samples=10**5,
                                    rng=int(p))
        assert rep["passed"], rep
        worst_ratio = min(worst_ratio, rep["regions"]["combined"]["inf_ratio"])
    elapsed = time.time() - t0
    ok = worst_ratio > 0 and elapsed < 60.0
    record_criterion(5, ok,
                     f"min inf-ratio {worst_ratio:.3e}, {elapsed:.1f}s")
    assert worst_ratio > 0
    assert elapsed < 60.0


def test_criterion_06_perturbed_convexity_lower_bound():
    p = 3.0
    q = p / (p - 1.0)
    eps = 0.05
    lam1 = 1.0
    alpha = eps / lam1 * 1.05
    assert pell.delta_p(np.eye(1) - alpha * p * q / 4.0 * np.eye(1), p) > 0
    dom, ca = field_tuple(-eps * np.ones(64), 64)
    cb = const_tuple(np.eye(1), V=1.0)
    cert_a = SubcriticalityCert(alpha=alpha, sigma=0.0)
    cert_b = SubcriticalityCert(alpha=0.0, sigma=0.0)
    assert pell.check_subcritical(ca.V, cert_a, dom).ok
    delta, _ = hess.choose_delta(ca, cb, p, mode="perturbed", cert_a=cert_a,
                                 cert_b=cert_b, n_presample=20000, rng=6)
    params = bl.BellmanParams(p=p, delta=delta)
    rep = hess.verify_convexity(ca, cb, p, params, n_samples=10**5,
                                mode="perturbed", cert_a=cert_a,
                                cert_b=cert_b, rng=6)
    record_criterion(6, rep["passed"],
                     f"inf-ratio {rep['inf_ratio']:.3e}, delta {delta:g}")
    assert rep["passed"], rep


def test_criterion_07_cutoff_audit():
    ok_all = True
    detail = []

    # vanishing patterns within 1e-6
    params = co.CutoffParams(p=3.0, kappa=0.15)
    cut = co.MollifiedCutoff(params)
    rng = np.random.default_rng(7)
    m = 500
    z = rng.uniform(0, 2.2, m) * np.exp(1j * rng.uniform(0, 7, m))
    e = rng.uniform(0, 2.6, m) * np.exp(1j * rng.uniform(0, 7, m))
    labels = co.classify_region((z, e), params)
    _, grad, hs = cut.eval_all(z, e)
    off_z = ~np.isin(labels, ["R_zeta", "T"])
    off_e = ~np.isin(labels, ["R_eta", "T"])
    off_t = labels != "T"
    resid = max(
        float(np.max(np.abs(grad[off_z][:, :2]), initial=0)),
        float(np.max(np.abs(grad[off_e][:, 2:]), initial=0)),
        float(np.max(np.abs(hs[off_t][:, 0:2, 2:4]), initial=0)),
        float(np.max(np.abs(hs[off_z][:, 0:2, 0:2]), initial=0)),
        float(np.max(np.abs(hs[off_e][:, 2:4, 2:4]), initial=0)),
    )
    ok_all &= resid < 1e-6
    detail.append(f"vanish {resid:.1e}")

    # derivative bound constants stable over n
    dil = co.DilatedCutoff(params)
    consts = {"gz": [], "ge": [], "hzz": [], "hee": [], "hze": []}
    for n in (1, 10, 100, 1000):
        zn = z * n ** (1 / params.p)
        en = e * n ** (1 / params.q)
        _, g, H = dil.eval_all(n, zn, en)
        on_z = np.isin(labels, ["R_zeta", "T"])
        on_e = np.isin(labels, ["R_eta", "T"])
        on_t = labels == "T"
        consts["gz"].append(np.max(np.hypot(g[on_z, 0], g[on_z, 1]))
                            * n ** (1 / params.p))
        consts["ge"].append(np.max(np.hypot(g[on_e, 2], g[on_e, 3]))
                            * n ** (1 / params.q))
        consts["hzz"].append(
            np.max(np.linalg.norm(H[on_z][:, 0:2, 0:2], axis=(1, 2)))
            * n ** (2 / params.p))
        consts["hee"].append(
            np.max(np.linalg.norm(H[on_e][:, 2:4, 2:4], axis=(1, 2)))
            * n ** (2 / params.q))
        if np.any(on_t):
            consts["hze"].append(
                np.max(np.linalg.norm(H[on_t][:, 0:2, 2:4], axis=(1, 2))) * n)
    stable = all(max(v) <= min(v) * (1 + 1e-9) for v in consts.values() if v)
    ok_all &= stable
    detail.append(f"n-stable {stable}")

    # comparability band over kappa
    band_ok = True
    spreads = {}
    reps = {}
    for kappa in (0.2, 0.1, 0.05):
        prm = co.CutoffParams(p=3.0, kappa=kappa)
        rep = co.check_comparability(prm, n_samples=2000, rng=7)
        reps[kappa] = rep
        band_ok &= rep["passed"]
        spreads[kappa] = max(rep["ratio_max"], 1 / rep["ratio_min"])
    band_ok &= spreads[0.05] < spreads[0.1] < spreads[0.2]
    c_band = max(r["band_constant"] for r in reps.values())
    for kappa, rep in reps.items():
        lo = (1 + c_band * kappa) ** -3.0
        hi = (1 + c_band * kappa) ** 3.0
        band_ok &= lo - 1e-12 <= rep["ratio_min"] <= rep["ratio_max"] <= hi + 1e-12
    ok_all &= band_ok
    detail.append(f"band ok {band_ok}")

    record_criterion(7, bool(ok_all), "; ".join(detail))
    assert ok_all


def test_criterion_08_error_term_domination():
    params = bl.BellmanParams(p=3.0, delta=0.2)
    p, q = params.p, params.q
    cut = co.DilatedCutoff(co.CutoffParams(p=3.0, quad_order=8))
    V, W = 1.0, 0.5
    tup = [(np.eye(1), np.array([0.3]), np.array([0.1j]), V),
           (np.eye(1), np.array([0.1]), np.array([0.2]), W)]
    rng = np.random.default_rng(8)
    m = 10**4
    zb = rng.uniform(0, 1.8, m) * np.exp(1j * rng.uniform(0, 2 * np.pi, m))
    eb = rng.uniform(0, 1.8, m) * np.exp(1j * rng.uniform(0, 2 * np.pi, m))
    X = rng.standard_normal((m, 1)) + 1j * rng.standard_normal((m, 1))
    Y = rng.standard_normal((m, 1)) + 1j * rng.standard_normal((m, 1))

    ok = True
    sup_table = {}
    for nu in (0.2, 0.1):
        sups = []
        for n in (1, 10, 100):
            z, e = zb * n ** (1 / p), eb * n ** (1 / q)
            out = hess.et_term(n, nu, tup, (z, e), (X, Y), cut, params,
                               quad_order=8)
            F = hess.domination_shape(z, e, X, Y, V, W, p)
            sups.append(float(np.max(np.abs(out["direct"])
                                     / np.maximum(F, 1e-300))))
        sup_table[nu] = sups
        ok &= all(np.isfinite(s) for s in sups)
        for s1, s2 in zip(sups, sups[1:]):
            ok &= s2 <= 1.25 * s1 + 1e-6  # no growth along n

    # nu-uniform bound for the first-order part of the mollified Hessian
    bsup = []
    for nu in (0.2, 0.1, 0.05):
        mb = bl.MollifiedBellman(params, bl.MollifierParams(nu=nu,
                                                            quad_order=8))
        z, e = bl.sample_omegas(4000, rng, mod_range=(1e-2, 1e2))
        Xs = rng.standard_normal((4000, 1)) + 1j * rng.standard_normal((4000, 1))
        Ys = rng.standard_normal((4000, 1)) + 1j * rng.standard_normal((4000, 1))
        val, grad, hq = mb.eval_all(z, e)
        hbc = hess.firstorder_form(hq, grad, [tup[0][1], tup[1][1]],
                                   [tup[0][2], tup[1][2]], (z, e), (Xs, Ys))
        F = hess.domination_shape(z, e, Xs, Ys, V, W, p)
        bsup.append(float(np.max(np.abs(hbc) / np.maximum(F, 1e-300))))
    ok &= max(bsup) <= 3.0 * min(bsup)  # stable across nu

    record_criterion(
        8, bool(ok),
        f"sup ratios nu=0.2 {sup_table[0.2][0]:.1f}/{sup_table[0.2][-1]:.1f}, "
        f"first-order sups {['%.2f' % s for s in bsup]}")
    assert ok


def test_criterion_09_semigroup_decay_contractivity_contrapositive():
    # eigenfunction decay at the stated tolerance
    n = 256
    dom = GridDomain.interval(0, np.pi, n)
    cf = CoefficientTuple.constant(dom, np.eye(1))
    form = sg.assemble(cf)
    x = dom.centers()
    dt = 2e-3
    h2 = dom.h[0] ** 2
    states = sg.evolve(form, np.sin(x), [0.0, 0.3, 0.6], dt=dt)
    decay_ok = all(
        sg.lp_norm(st.u - np.exp(-st.t) * np.sin(x), 2.0, dom) <= 3 * (h2 + dt)
        for st in states[1:])

    # contractivity at n_cells = 512 with slack <= 1e-3
    dom5 = GridDomain.interval(0, np.pi, 512)
    cf5 = CoefficientTuple.constant(dom5, np.eye(1))
    slack = 0.0
    for p in (1.5, 2.0, 4.0):
        rep = sg.check_contractivity(cf5, p, dom5, t_grid=(0.0, 0.1, 0.5, 1.0),
                                     dt=0.02, require_class=False, rng=9)
        slack = max(slack, rep["max_growth"])
    contr_ok = slack <= 1e-3

    # contrapositive growth past the p-ellipticity angle
    growth_ok = True
    for p in (1.5, 4.0):
        phi = np.arccos(abs(1 - 2 / p)) + 0.2
        cfc = CoefficientTuple.constant(
            GridDomain.interval(0, np.pi, 128), np.array([[np.exp(1j * phi)]]))
        rep = sg.check_contractivity(cfc, p, GridDomain.interval(0, np.pi, 128),
                                     t_grid=(0.0, 0.02, 0.05, 0.1), dt=5e-3,
                                     require_class=True, rng=9)
        growth_ok &= (rep["dissipativity_margin"] < 0
                      and rep["max_growth"] > rep["eps_h"])

    ok = decay_ok and contr_ok and growth_ok
    record_criterion(9, ok, f"decay {decay_ok}, slack {slack:.2e}, "
                            f"growth detected {growth_ok}")
    assert ok


def test_criterion_10_flow_monotonicity_three_suites():
    n = 128
    dom = GridDomain.interval(0, np.pi, n)
    x = dom.centers()
    f = np.sin(x)
    g = np.sin(2 * x) + 0.25 * np.sin(3 * x)
    t_grid = [0.0, 0.05, 0.15, 0.4]
    suites = {
        "real": CoefficientTuple.constant(dom, np.eye(1), V=0.5),
        "complex": CoefficientTuple.constant(
            dom, np.array([[np.exp(0.3j)]]), V=0.5),
    }
    V_signed = -0.05 * np.ones(n)
    base = CoefficientTuple.constant(dom, np.eye(1), V=0.0)
    suites["signed"] = CoefficientTuple(domain=dom, A=base.A, b=base.b,
                                        c=base.c, V=V_signed)
    results = {}
    ok = True
    for name, cf in suites.items():
        for p in (2.0, 4.0):
            delta = 0.25 if p == 2.0 else 0.05
            rep = sg.flow_monotonicity(cf, cf, p, delta, f, g, (dom, dom),
                                       t_grid, dt=0.01)
            results[f"{name}_p{p:g}"] = rep.diagnostics["monotone"]
            ok &= rep.diagnostics["monotone"]
    record_criterion(10, ok, str(results))
    assert ok


def test_criterion_11_bilinear_identity_and_boundedness():
    # pi/4 within 2 percent at n_cells = 1024
    n = 1024
    dom = GridDomain.interval(0, np.pi, n)
    cf = CoefficientTuple.constant(dom, np.eye(1))
    f = np.sin(dom.centers())
    val, _ = sg.bilinear_functional(cf, cf, 2.0, f, f, T_max=20.0,
                                    domains=(dom, dom), n_time=200, dt=0.02)
    ident_ok = abs(val - np.pi / 4) <= 0.02 * np.pi / 4

    # boundedness over a 20-probe suite for a signed-V member tuple
    nb = 128
    domb = GridDomain.interval(0, np.pi, nb)
    Vb = -0.05 * np.ones(nb)
    baseb = CoefficientTuple.constant(domb, np.eye(1), V=0.0)
    cfb = CoefficientTuple(domain=domb, A=baseb.A, b=baseb.b, c=baseb.c, V=Vb)
    assert pell.check_perturbed_class(cfb, 3.0, domb, class_name="BP_p").member
    probes = sg.default_probes(domb, n_probes=20, rng=11)
    q = 1.5
    ratios = []
    for (_, fb), (_, gb) in zip(probes, reversed(probes)):
        vb, _ = sg.bilinear_functional(cfb, cfb, 3.0, fb, gb, T_max=30.0,
                                       domains=(domb, domb), n_time=120,
                                       dt=0.05)
        denom = sg.lp_norm(fb, 3.0, domb) * sg.lp_norm(gb, q, domb)
        ratios.append(vb / max(denom, 1e-300))
    bound_ok = np.all(np.isfinite(ratios)) and max(ratios) < 5.0

    ok = ident_ok and bound_ok
    record_criterion(11, ok, f"value {val:.5f} vs pi/4, "
                             f"max probe ratio {max(ratios):.3f}")
    assert ident_ok
    assert bound_ok


def test_criterion_12_truncation_convergence():
    n = 128
    dom = GridDomain.interval(0, np.pi, n)
    x = dom.centers()
    h = dom.h[0]
    x0 = np.pi / 2
    prof = np.minimum(1.0 / np.abs(x - x0) ** 1.5, 2.0 / h**1.5)
    _, cf = field_tuple(-0.2 * prof, n)
    vmax = float(np.max(cf.V_minus))
    rep = sg.check_truncation_convergence(cf, np.sin(x), 0.05,
                                          [1, 2, 4, 8, 16, 32, 64, 128, 256],
                                          domain=dom, dt=2e-3)
    ok = rep["passed"] and rep["exact_after_saturation"] and vmax < 256
    record_criterion(12, ok,
                     f"monotone {rep['monotone_grad']}/{rep['monotone_potential']}, "
                     f"max V_- {vmax:.1f}")
    assert ok, rep


def test_criterion_13_class_algebra_stability():
    dom = GridDomain.interval(0, np.pi, 32)
    p = 3.0
    q = p / (p - 1.0)
    rng = np.random.default_rng(13)

    def mk(A, b=None, c=None, V=0.0):
        return CoefficientTuple.constant(dom, A, b=b, c=c, V=V)

    suite = [
        mk(np.eye(1), V=1.0),
        mk(np.exp(0.2j) * np.eye(1), b=[0.1], c=[0.1], V=2.0),
        mk(2.0 * np.eye(1), b=[0.2j], c=[-0.2j], V=3.0),
        mk(np.eye(1), b=[0.05 + 0.05j], c=[0.05 - 0.05j], V=1.0),
        mk(np.exp(0.4j) * np.eye(1), V=0.5),
        mk(1.5 * np.eye(1), b=[0.3], c=[0.3], V=4.0),
        mk(np.exp(1j * (np.arccos(abs(1 - 2 / p)) + 0.15)) * np.eye(1)),
        mk(np.eye(1), b=[2.0], c=[0.1], V=0.25),
        mk(np.exp(0.1j) * np.eye(1), b=[0.1j], c=[0.1], V=1.5),
        mk(0.5 * np.eye(1), V=0.0),
    ]

    duality_ok = True
    for cf in suite:
        direct = pell.check_perturbed_class(cf, p, class_name="SP_p").member
        dual = pell.check_perturbed_class(pell.adjoint(cf), q,
                                          class_name="SP_p").member
        duality_ok &= direct == dual

    members = [cf for cf in suite
               if pell.check_perturbed_class(cf, p, class_name="BP_p").member]
    assert len(members) >= 4

    chain_ok = True
    for cf in members:
        for r in (2.0, 2.5, 3.0, p):
            chain_ok &= pell.check_perturbed_class(cf, r,
                                                   class_name="BP_p").member

    rotation_ok = True
    for cf in members:
        found = any(
            pell.check_perturbed_class(pell.rotate(cf, phi), p,
                                       class_name="SP_p").member
            for phi in (0.02, 0.05, 0.1))
        rotation_ok &= found

    ok = duality_ok and chain_ok and rotation_ok
    record_criterion(13, ok, f"duality {duality_ok}, chain {chain_ok}, "
                             f"rotation {rotation_ok}")
    assert ok
