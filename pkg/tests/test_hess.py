import numpy as np
import pytest

from pell_lab import bellman as bl
from pell_lab import hess
from pell_lab.field import CoefficientTuple, GridDomain, SubcriticalityCert


def const_tuple(A, b=None, c=None, V=0.0, n=4):
    dom = GridDomain.interval(0.0, np.pi, n)
    return CoefficientTuple.constant(dom, A, b=b, c=c, V=V)


def poly_eval(coeff, zeta, eta):
    """(value, grad, hess) of a quadratic test polynomial on C^2.

    coeff is a (c0, lin(4,), quad(4,4)) triple in the real coordinates.
    """
    c0, lin, quad = coeff
    x = np.array([zeta.real, zeta.imag, eta.real, eta.imag])
    val = c0 + lin @ x + 0.5 * x @ quad @ x
    grad = lin + quad @ x
    return val, grad, (quad + quad.T) / 2 + (quad - quad.T) * 0


def f2_eval(zeta):
    """(value, grad, hess) of |zeta|^2 as a function on C^1."""
    x = np.array([zeta.real, zeta.imag])
    return float(x @ x), 2 * x, 2 * np.eye(2)


# ---------------------------------------------------------------------------
# real form

def test_real_form_identity():
    assert np.allclose(hess.real_form(np.eye(3)), np.eye(6))


def test_real_form_imaginary_unit():
    assert np.allclose(hess.real_form(np.array([[1j]])),
                       np.array([[0.0, -1.0], [1.0, 0.0]]))


def test_real_form_reproduces_quadratic_form():
    rng = np.random.default_rng(0)
    for _ in range(50):
        d = rng.integers(1, 4)
        A = rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d))
        xi = rng.standard_normal(d) + 1j * rng.standard_normal(d)
        M = hess.real_form(A)
        w = np.concatenate([xi.real, xi.imag])
        assert np.real(np.vdot(xi, A @ xi)) == pytest.approx(w @ M @ w,
                                                             abs=1e-13)


# ---------------------------------------------------------------------------
# generalized Hessian

def test_f2_identity_matrix_gives_twice_norm():
    rng = np.random.default_rng(1)
    for _ in range(20):
        d = rng.integers(1, 4)
        zeta = complex(*rng.standard_normal(2))
        X = rng.standard_normal(d) + 1j * rng.standard_normal(d)
        dec = hess.generalized_hessian(
            f2_eval(zeta), [(np.eye(d), np.zeros(d), np.zeros(d), 0.0)],
            (zeta,), (X,))
        assert dec.total == pytest.approx(2 * np.sum(np.abs(X) ** 2), rel=1e-12)
        assert dec.h_firstorder == 0.0
        assert dec.g_potential == 0.0


def test_power_function_identity():
    rng = np.random.default_rng(2)
    worst = 0.0
    for _ in range(10**4):
        d = rng.integers(1, 3)
        A = rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d)) \
            + 3 * np.eye(d)
        b = 0.5 * (rng.standard_normal(d) + 1j * rng.standard_normal(d))
        c = 0.5 * (rng.standard_normal(d) + 1j * rng.standard_normal(d))
        V = float(rng.uniform(0, 3))
        r = float(rng.uniform(1.2, 6.0))
        zeta = complex(*rng.standard_normal(2))
        if abs(zeta) < 1e-3:
            continue
        X = rng.standard_normal(d) + 1j * rng.standard_normal(d)
        worst = max(worst, hess.power_hessian_identity_gap(A, b, c, V, r,
                                                           zeta, X))
    assert worst < 1e-10


def test_firstorder_sign_flip():
    rng = np.random.default_rng(3)
    params = bl.BellmanParams(p=3.0, delta=0.2)
    for _ in range(30):
        zeta, eta = complex(*rng.standard_normal(2)), complex(*rng.standard_normal(2))
        if bl.on_singular_set(zeta, eta, params, eps=1e-4):
            continue
        X = rng.standard_normal(2) + 1j * rng.standard_normal(2)
        Y = rng.standard_normal(2) + 1j * rng.standard_normal(2)
        grad = bl.q_grad_real(zeta, eta, params)
        hq = bl.q_hess(zeta, eta, params)
        bs = [rng.standard_normal(2) + 0j, rng.standard_normal(2) + 0j]
        cs = [rng.standard_normal(2) + 0j, rng.standard_normal(2) + 0j]
        plus = hess.firstorder_form(hq, grad, bs, cs, (zeta, eta), (X, Y))
        minus = hess.firstorder_form(hq, grad, bs, cs, (zeta, eta), (-X, -Y))
        assert plus == pytest.approx(-minus, rel=1e-12, abs=1e-12)


def test_trivial_size_bounds():
    rng = np.random.default_rng(4)
    params = bl.BellmanParams(p=3.0, delta=0.2)
    d = 2
    A = np.eye(d) * (1 + 0.3j)
    b = np.array([0.2, -0.1j])
    c = np.array([0.1j, 0.3])
    V, W = 1.5, 0.7
    consts = []
    for _ in range(200):
        z, e = bl.sample_omegas(1, rng, mod_range=(0.05, 20.0))
        z, e = complex(z[0]), complex(e[0])
        if bl.on_singular_set(z, e, params, eps=1e-4):
            continue
        X = rng.standard_normal(d) + 1j * rng.standard_normal(d)
        Y = rng.standard_normal(d) + 1j * rng.standard_normal(d)
        grad = bl.q_grad_real(z, e, params)
        hq = bl.q_hess(z, e, params)
        hm = hess.matrix_form(hq, [A, A], (X, Y))
        blocks = [np.linalg.norm(hq[:2, :2]), np.linalg.norm(hq[:2, 2:]),
                  np.linalg.norm(hq[2:, 2:])]
        nx, ny = np.linalg.norm(X), np.linalg.norm(Y)
        shape = (blocks[0] * nx**2 + 2 * blocks[1] * nx * ny
                 + blocks[2] * ny**2)
        consts.append(abs(hm) / max(shape, 1e-300))
    assert np.max(consts) < 10.0


def test_leibniz_reconstruction_trivial_psi():
    rng = np.random.default_rng(5)
    quad = rng.standard_normal((4, 4))
    phi = poly_eval((0.3, rng.standard_normal(4), quad), 0.4 + 0.2j, -0.7 + 1j)
    one = (1.0, np.zeros(4), np.zeros((4, 4)))
    tup = [(np.eye(1) * (2 + 1j), np.array([0.5j]), np.array([0.2]), 1.0)] * 2
    omega = (0.4 + 0.2j, -0.7 + 1j)
    dirs = (np.array([1.0 - 0.5j]), np.array([0.3 + 0.3j]))
    parts = hess.leibniz_split(one, phi, tup, omega, dirs)
    assert parts["L_matrix"] == pytest.approx(0.0, abs=1e-14)
    assert parts["T_firstorder"] == pytest.approx(0.0, abs=1e-14)
    direct = hess.generalized_hessian(phi, tup, omega, dirs)
    assert parts["psi_H_phi"].total == pytest.approx(direct.total, rel=1e-12)


def test_leibniz_reconstruction_f2_squared():
    # F_2 * F_2 = |zeta|^4, whose Hessian is known in closed form
    zeta = 0.8 - 0.6j
    X = np.array([0.5 + 1j])
    tup = [(np.array([[1.5 + 0.5j]]), np.zeros(1), np.zeros(1), 0.0)]
    f2 = f2_eval(zeta)
    parts = hess.leibniz_split(f2, f2, tup, (zeta,), (X,))
    total = (parts["psi_H_phi"].total + parts["phi_H_psi"].total
             + parts["L_matrix"] + parts["T_firstorder"])
    grad4, hess4 = hess._power_eval(4.0, zeta)
    direct = hess.generalized_hessian((None, grad4, hess4), tup, (zeta,), (X,))
    assert total == pytest.approx(direct.total, rel=1e-12)


def test_leibniz_reconstruction_random_polynomials():
    rng = np.random.default_rng(6)
    omega = (0.9 + 0.1j, -0.4 + 0.8j)
    dirs = (rng.standard_normal(2) + 1j * rng.standard_normal(2),
            rng.standard_normal(2) + 1j * rng.standard_normal(2))
    tup = [
        (np.eye(2) + 0.2j * np.ones((2, 2)), np.array([0.1, 0.2j]),
         np.array([0.3, 0.0]), 0.8),
        (2 * np.eye(2), np.array([0.0, 0.1]), np.array([0.2j, 0.1]), 0.3),
    ]
    for _ in range(20):
        cp = (rng.standard_normal(), rng.standard_normal(4),
              rng.standard_normal((4, 4)))
        cf = (rng.standard_normal(), rng.standard_normal(4),
              rng.standard_normal((4, 4)))
        psi = poly_eval(cp, *omega)
        phi = poly_eval(cf, *omega)
        prod = hess.product_eval(psi, phi)
        direct = hess.generalized_hessian(prod, tup, omega, dirs)
        parts = hess.leibniz_split(psi, phi, tup, omega, dirs)
        total = (parts["psi_H_phi"].total + parts["phi_H_psi"].total
                 + parts["L_matrix"] + parts["T_firstorder"])
        assert total == pytest.approx(direct.total, rel=1e-10, abs=1e-10)


# ---------------------------------------------------------------------------
# mollification interplay

def test_matrix_part_commutes_with_mollification():
    params = bl.BellmanParams(p=3.0, delta=0.2)
    nu = 0.2
    mp = bl.MollifierParams(nu=nu, quad_order=12)
    m = bl.Mollifier(mp)
    A, B = np.eye(1) * (1 + 0.4j), np.eye(1) * 2.0
    X, Y = np.array([0.7 - 0.2j]), np.array([0.1 + 0.9j])
    zeta, eta = 1.1 + 0.3j, 1.6 - 0.4j

    hess_m = m.hess_from_grad(lambda z, e: bl.q_grad_real(z, e, params),
                              zeta, eta)
    lhs = hess.matrix_form(hess_m, [A, B], (X, Y))

    def point(z, e):
        H = bl._q_hess_raw(z, e, params)
        H = np.where(np.isfinite(H), H, 0.0)
        return hess.matrix_form(H, [A, B], (X[None, None, :], Y[None, None, :]))

    rhs = m.value(point, np.array([zeta]), np.array([eta]))[0]
    assert lhs == pytest.approx(rhs, rel=5e-3)


def test_remainders_vanish_without_coefficients():
    params = bl.BellmanParams(p=3.0, delta=0.2)
    omega = (0.9 + 0.1j, 1.2 - 0.5j)
    dirs = (np.array([1.0 + 0j]), np.array([0.5j]))
    n_cg, n_vw = hess.remainder_forms(0.2, (np.zeros(1), np.zeros(1)),
                                      (1.0, 2.0), omega, dirs, params)
    assert n_cg == pytest.approx(0.0, abs=1e-12)
    n_cg, n_vw = hess.remainder_forms(0.2, (np.ones(1), np.ones(1)),
                                      (0.0, 0.0), omega, dirs, params)
    assert n_vw == pytest.approx(0.0, abs=1e-12)


def test_remainders_decrease_with_nu():
    params = bl.BellmanParams(p=3.0, delta=0.2)
    omega = (0.9 + 0.1j, 1.3 - 0.5j)
    dirs = (np.array([1.0 - 0.3j]), np.array([0.5j]))
    cg = (np.array([0.4 + 0.1j]), np.array([0.2]))
    VW = (1.5, 0.8)
    vals_cg, vals_vw = [], []
    for nu in (0.2, 0.1, 0.05, 0.025):
        n_cg, n_vw = hess.remainder_forms(nu, cg, VW, omega, dirs, params)
        vals_cg.append(abs(float(n_cg)))
        vals_vw.append(abs(float(n_vw)))
    assert vals_cg[-1] < vals_cg[0]
    assert vals_vw[-1] < vals_vw[0]
    assert vals_cg[-1] < 0.05 * max(vals_cg[0], 1e-12) + 1e-8
    assert vals_vw[-1] < 0.05 * max(vals_vw[0], 1e-12) + 1e-8


def test_perturbed_decomposition_identity():
    # H^(A+,B+) = H^(C,D) + pq/4 H^(a1 I, a2 I) + G^(s1 V+, s2 W+)
    from pell_lab.pell import perturb

    params = bl.BellmanParams(p=3.0, delta=0.2)
    p, q = params.p, params.q
    ca = const_tuple(2 * np.eye(1), b=[0.1], c=[0.1j], V=-0.4)
    cb = const_tuple(1.5 * np.eye(1), b=[0.05], c=[0.0], V=1.0)
    cert_a = SubcriticalityCert(alpha=0.2, sigma=0.25)
    cert_b = SubcriticalityCert(alpha=0.1, sigma=0.0)
    pa, pb = perturb(ca, p, cert_a), perturb(cb, p, cert_b)

    rng = np.random.default_rng(7)
    for _ in range(40):
        z, e = complex(*rng.standard_normal(2)), complex(*rng.standard_normal(2))
        if bl.on_singular_set(z, e, params, eps=1e-4):
            continue
        X = rng.standard_normal(1) + 1j * rng.standard_normal(1)
        Y = rng.standard_normal(1) + 1j * rng.standard_normal(1)
        grad = bl.q_grad_real(z, e, params)
        hq = bl.q_hess(z, e, params)
        ev = (None, grad, hq)

        def tup(cf, V=None):
            return (cf.A[0], cf.b[0], cf.c[0],
                    cf.V[0] if V is None else V)

        lhs = hess.generalized_hessian(
            ev, [tup(ca, max(ca.V[0], 0)), tup(cb, max(cb.V[0], 0))],
            (z, e), (X, Y)).total
        t1 = hess.generalized_hessian(ev, [tup(pa), tup(pb)], (z, e),
                                      (X, Y)).total
        t2 = hess.matrix_form(hq, [cert_a.alpha * np.eye(1),
                                   cert_b.alpha * np.eye(1)], (X, Y))
        t3 = hess.potential_form(grad,
                                 [cert_a.sigma * max(ca.V[0], 0),
                                  cert_b.sigma * max(cb.V[0], 0)], (z, e))
        rhs = t1 + p * q / 4.0 * t2 + t3
        assert lhs == pytest.approx(rhs, rel=1e-10, abs=1e-10)


# ---------------------------------------------------------------------------
# auxiliary h_p

def test_gp_collapses_at_p2():
    rng = np.random.default_rng(8)
    for _ in range(20):
        zeta = complex(*rng.standard_normal(2))
        X = rng.standard_normal(3) + 1j * rng.standard_normal(3)
        out = hess.auxiliary_hp(zeta, 0.1 * zeta, X, 0 * X, 2.0)
        assert out.branch == "g_p"
        assert out.value == pytest.approx(np.sum(np.abs(X) ** 2), rel=1e-12)


def test_hp_zero_directions():
    out = hess.auxiliary_hp(1.0, 5.0, np.zeros(2), np.zeros(2), 3.0)
    assert out.value == 0.0
    assert out.branch == "b_p"
    out = hess.auxiliary_hp(1.0, 0.0, np.zeros(2), np.zeros(2), 3.0)
    assert out.branch == "g_p"


def test_hp_nonnegative():
    rng = np.random.default_rng(9)
    z, e = bl.sample_omegas(2000, rng)
    X = rng.standard_normal((2000, 2)) + 1j * rng.standard_normal((2000, 2))
    Y = rng.standard_normal((2000, 2)) + 1j * rng.standard_normal((2000, 2))
    vals = hess.hp_form(z, e, X, Y, 3.0)
    assert np.all(vals >= -1e-12)


def test_hp_chain_rule_identity():
    # |grad Theta(u, v)|^2 = h_p branchwise for smooth curves (u(x), v(x))
    p = 3.0
    x = np.linspace(0.2, 1.0, 4001)
    h = x[1] - x[0]

    def check(u, v):
        theta = hess.theta_gp(u, v, p)
        dtheta = np.gradient(theta, h)
        du = np.gradient(u, h)
        dv = np.gradient(v, h)
        lhs = np.abs(dtheta) ** 2
        rhs = hess.hp_form(u, v, du[:, None], dv[:, None], p)
        interior = slice(10, -10)
        rel = np.abs(lhs - rhs)[interior] / np.maximum(rhs[interior], 1e-10)
        assert np.max(rel) < 2e-4

    # g_p branch: |u|^p > |v|^q everywhere on the curve
    u = (2.0 + x**2) * np.exp(1j * x)
    v = 0.1 * np.exp(-1j * x) * (1 + 0.3 * x)
    check(u, v)
    # b_p branch: |u|^p < |v|^q everywhere
    check(v, u * 3.0)


# ---------------------------------------------------------------------------
# sampled convexity

def test_convexity_plain_identity_p2():
    ca = const_tuple(np.eye(1), V=1.0)
    cb = const_tuple(np.eye(1), V=0.5)
    params = bl.BellmanParams(p=2.0, delta=0.25)
    rep = hess.verify_convexity(ca, cb, 2.0, params, n_samples=20000, rng=0)
    assert rep["passed"]
    assert rep["inf_ratio"] > 0
    # p = 2: the generalized Hessian is pointwise nonnegative
    assert rep["regions"]["combined"]["inf_ratio"] >= 0


def test_convexity_plain_p3():
    ca = const_tuple(np.eye(1), V=2.0)
    cb = const_tuple(np.eye(1), V=0.0)
    delta, _ = hess.choose_delta(ca, cb, 3.0, n_presample=5000)
    params = bl.BellmanParams(p=3.0, delta=delta)
    rep = hess.verify_convexity(ca, cb, 3.0, params, n_samples=20000, rng=1)
    assert rep["passed"]
    assert rep["regions"]["upper"]["inf_ratio"] >= rep["factor_region_upper"] * (1 - 1e-9)


def test_convexity_precondition_failure_raises():
    phi = np.arccos(abs(1 - 2 / 4.0)) + 0.2
    ca = const_tuple(np.array([[np.exp(1j * phi)]]))
    cb = const_tuple(np.eye(1))
    params = bl.BellmanParams(p=4.0, delta=0.1)
    with pytest.raises(ValueError):
        hess.verify_convexity(ca, cb, 4.0, params, n_samples=100)


def test_convexity_perturbed_mode():
    from pell_lab.pell import check_subcritical

    dom = GridDomain.interval(0, np.pi, 64)
    lam1 = 1.0  # first Dirichlet eigenvalue of (0, pi), up to grid error
    eps = 0.05
    V = -eps * np.ones(64)
    base = CoefficientTuple.constant(dom, np.eye(1), V=0.0)
    ca = CoefficientTuple(domain=dom, A=base.A, b=base.b, c=base.c, V=V)
    cb = const_tuple(np.eye(1), V=1.0)
    cert_a = SubcriticalityCert(alpha=eps / lam1 * 1.05, sigma=0.0)
    cert_b = SubcriticalityCert(alpha=0.0, sigma=0.0)
    assert check_subcritical(V, cert_a, dom).ok
    delta, _ = hess.choose_delta(ca, cb, 3.0, mode="perturbed", cert_a=cert_a,
                                 cert_b=cert_b, n_presample=5000)
    params = bl.BellmanParams(p=3.0, delta=delta)
    rep = hess.verify_convexity(ca, cb, 3.0, params, n_samples=20000,
                                mode="perturbed", cert_a=cert_a, cert_b=cert_b,
                                rng=2)
    assert rep["passed"]
    assert rep["inf_ratio"] > 0


# ---------------------------------------------------------------------------
# error term

def make_cutoff(p):
    from pell_lab.cutoff import CutoffParams, DilatedCutoff

    return DilatedCutoff(CutoffParams(p=p, quad_order=8))


def test_et_zero_when_plateau_and_no_first_order():
    params = bl.BellmanParams(p=3.0, delta=0.2)
    cut = make_cutoff(3.0)
    tup = [(np.eye(1), np.zeros(1), np.zeros(1), 0.0)] * 2
    omega = (np.array([0.2 + 0.1j]), np.array([0.3 - 0.1j]))  # deep inside
    dirs = (np.array([[1.0 + 0.5j]]), np.array([[0.2j]]))
    out = hess.et_term(4, 0.2, tup, omega, dirs, cut, params, quad_order=8)
    assert abs(out["direct"][0]) < 1e-10
    assert abs(out["via_split"][0]) < 1e-10


def test_et_reduces_to_first_order_part_on_plateau():
    params = bl.BellmanParams(p=3.0, delta=0.2)
    cut = make_cutoff(3.0)
    tup = [(np.eye(1), np.array([0.3]), np.array([0.1j]), 1.0),
           (np.eye(1), np.array([0.0]), np.array([0.2]), 0.5)]
    omega = (np.array([0.2 + 0.1j]), np.array([0.3 - 0.1j]))
    dirs = (np.array([[1.0 + 0.5j]]), np.array([[0.2j]]))
    out = hess.et_term(4, 0.2, tup, omega, dirs, cut, params, quad_order=8)
    comp = out["components"]
    assert abs(comp["q_H_psi"][0]) < 1e-12
    assert abs(comp["L_matrix"][0]) < 1e-12
    assert abs(comp["T_firstorder"][0]) < 1e-12
    assert out["direct"][0] == pytest.approx(comp["psi_H_bc"][0], rel=1e-10)


def test_et_direct_matches_split_generally():
    params = bl.BellmanParams(p=3.0, delta=0.2)
    cut = make_cutoff(3.0)
    tup = [(np.eye(1) * (1 + 0.2j), np.array([0.3]), np.array([0.1j]), 1.0),
           (np.eye(1), np.array([0.1]), np.array([0.2]), 0.5)]
    rng = np.random.default_rng(10)
    z, e = bl.sample_omegas(50, rng, mod_range=(0.3, 6.0))
    X = rng.standard_normal((50, 1)) + 1j * rng.standard_normal((50, 1))
    Y = rng.standard_normal((50, 1)) + 1j * rng.standard_normal((50, 1))
    out = hess.et_term(2, 0.2, tup, (z, e), (X, Y), cut, params, quad_order=8)
    scale = np.maximum(np.abs(out["direct"]), 1e-8)
    assert np.max(np.abs(out["direct"] - out["via_split"]) / scale) < 1e-10


def test_et_dominated_by_shape():
    # the empirical constant sup |E.T.| / F, measured on annulus-targeted
    # samples scaled to each n, must not grow with n
    params = bl.BellmanParams(p=3.0, delta=0.2)
    p, q = params.p, params.q
    cut = make_cutoff(3.0)
    V, W = 1.0, 0.5
    tup = [(np.eye(1), np.array([0.3]), np.array([0.1j]), V),
           (np.eye(1), np.array([0.1]), np.array([0.2]), W)]
    rng = np.random.default_rng(11)
    m = 400
    zb = rng.uniform(0, 1.8, m) * np.exp(1j * rng.uniform(0, 2 * np.pi, m))
    eb = rng.uniform(0, 1.8, m) * np.exp(1j * rng.uniform(0, 2 * np.pi, m))
    X = rng.standard_normal((m, 1)) + 1j * rng.standard_normal((m, 1))
    Y = rng.standard_normal((m, 1)) + 1j * rng.standard_normal((m, 1))
    for nu in (0.2, 0.1):
        sups = []
        for n in (1, 10, 100):
            z, e = zb * n ** (1 / p), eb * n ** (1 / q)
            out = hess.et_term(n, nu, tup, (z, e), (X, Y), cut, params,
                               quad_order=8)
            F = hess.domination_shape(z, e, X, Y, V, W, p)
            sups.append(float(np.max(np.abs(out["direct"])
                                     / np.maximum(F, 1e-300))))
        assert all(np.isfinite(s) for s in sups)
        for s1, s2 in zip(sups, sups[1:]):
            assert s2 <= 1.25 * s1 + 1e-6
