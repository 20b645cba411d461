"""The coefficient-class algebra behind generalized p-ellipticity.

Everything here is pointwise in the grid cell: p-ellipticity constants,
the inhomogeneous form Gamma_p, class membership (weak / strict / bilateral,
with or without the subcritical perturbation), rotations and adjoints.
Membership checks report witnesses; the subcriticality check is a falsifier
over a probe family, so a positive answer means "not refuted" rather than
proved.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import numpy as np
from scipy.optimize import minimize_scalar

from .field import (
    CoefficientTuple,
    GridDomain,
    SubcriticalityCert,
    tuple_fields,
)

MEMBERSHIP_MARGIN = 1e-7

PLAIN_CLASSES = ("A_p", "W_p", "S_p", "B_p")
PERTURBED_CLASSES = ("WP_p", "SP_p", "BP_p")
_BASE_OF = {"WP_p": "W_p", "SP_p": "S_p", "BP_p": "B_p"}


def conjugate_exponent(p):
    if p <= 1:
        raise ValueError("p must exceed 1")
    return p / (p - 1.0)


def jp_apply(xi, p):
    """Apply J_p(xi) = xi + (p - 2) * Re(xi) componentwise."""
    if p <= 1:
        raise ValueError("p must exceed 1")
    xi = np.asarray(xi, dtype=complex)
    return xi + (p - 2.0) * xi.real


def real_form(A):
    """Real 2d x 2d block form [[Re A, -Im A], [Im A, Re A]] of a complex matrix."""
    A = np.asarray(A, dtype=complex)
    top = np.hstack([A.real, -A.imag])
    bot = np.hstack([A.imag, A.real])
    return np.vstack([top, bot])


def _embed(z):
    """Identify C^d with R^2d: z -> (Re z, Im z)."""
    z = np.atleast_1d(np.asarray(z, dtype=complex))
    return np.concatenate([z.real, z.imag])


def _delta_p_cell(A, p):
    A = np.asarray(A, dtype=complex)
    d = A.shape[0]
    r = abs(1.0 - 2.0 / p)
    M = real_form(A)
    # conjugation xi -> conj(xi) is diag(I, -I) in real coordinates
    IR = np.diag(np.concatenate([np.ones(d), -np.ones(d)]))
    N = (np.eye(2 * d) + r * IR) @ M
    return float(np.linalg.eigvalsh((N + N.T) / 2.0)[0])


def delta_p(A, p):
    """p-ellipticity constant: min over cells of min_{|xi|=1} Re<A xi, xi + |1-2/p| conj(xi)>.

    ``A`` may be a single matrix or a cellwise field of shape
    ``grid_shape + (d, d)``.  The sphere minimum is computed exactly as the
    smallest eigenvalue of the symmetrized real-form reduction.
    """
    if p <= 1:
        raise ValueError("p must exceed 1")
    arr = np.asarray(getattr(A, "entries", A), dtype=complex)
    if arr.ndim == 2:
        return _delta_p_cell(arr, p)
    cells = arr.reshape(-1, arr.shape[-2], arr.shape[-1])
    return min(_delta_p_cell(Ai, p) for Ai in cells)


def delta_p_sampled(A, p, n_samples=10**5, rng=None, polish_rounds=40):
    """Brute-force sphere-sampling cross-check for delta_p (single matrix).

    Pure sampling with a derivative-free shrinking-neighborhood descent
    around the best directions; independent of the eigenvalue reduction.
    """
    rng = np.random.default_rng(rng)
    A = np.asarray(getattr(A, "entries", A), dtype=complex)
    d = A.shape[0]
    r = abs(1.0 - 2.0 / p)

    def form(xi):
        Axi = xi @ A.T
        return np.real(np.sum(Axi * (xi.conj() + r * xi), axis=1))

    xi = rng.standard_normal((n_samples, d)) + 1j * rng.standard_normal((n_samples, d))
    xi /= np.linalg.norm(xi, axis=1, keepdims=True)
    vals = form(xi)
    order = np.argsort(vals)[:8]
    best_val = float(vals[order[0]])
    seeds = xi[order]
    radius = 0.1
    for _ in range(polish_rounds):
        cloud = seeds[:, None, :] + radius * (
            rng.standard_normal((len(seeds), 64, d))
            + 1j * rng.standard_normal((len(seeds), 64, d))
        )
        cloud = cloud.reshape(-1, d)
        cloud /= np.linalg.norm(cloud, axis=1, keepdims=True)
        cvals = form(cloud)
        k = int(np.argmin(cvals))
        if cvals[k] < best_val:
            best_val = float(cvals[k])
            seeds = np.vstack([cloud[k][None], seeds[:-1]])
        radius *= 0.8
    return best_val


def gamma_p(coeffs, x, xi, p):
    """Inhomogeneous form Re<A xi, J_p xi> + Re<conj(b) + J_p c, xi> + V at cell x."""
    A, b, c, V = tuple_fields(coeffs, x)
    xi = np.atleast_1d(np.asarray(xi, dtype=complex))
    jp_xi = jp_apply(xi, p)
    quad = float(np.real(np.vdot(jp_xi, A @ xi)))
    lin = float(np.real(np.vdot(xi, np.conj(b) + jp_apply(c, p))))
    return quad + lin + float(V)


def _gamma_quadratic_matrix(A, p):
    """Symmetric real matrix S with Re<A xi, J_p xi> = w^T S w, w = embed(xi)."""
    d = A.shape[0]
    M = real_form(A)
    Jt = np.diag(np.concatenate([(p - 1.0) * np.ones(d), np.ones(d)]))
    N = Jt @ M
    return (N + N.T) / 2.0


def _ray_infimum(a, l, V):
    """inf over t in R of (a t^2 + l t + V) / (t^2 + V), for V >= 0.

    Returns -inf when the ratio is unbounded below (V = 0 with a linear
    term), which signals non-membership.
    """
    if V <= 0.0:
        if abs(l) > 0.0:
            return -np.inf
        return a
    cands = [a, 1.0]
    if abs(l) > 0.0:
        disc = (a - 1.0) ** 2 * V * V + l * l * V
        sq = np.sqrt(disc)
        for t in (((a - 1.0) * V + sq) / l, ((a - 1.0) * V - sq) / l):
            cands.append((a * t * t + l * t + V) / (t * t + V))
    return min(cands)


@dataclass(frozen=True)
class MuEstimate:
    value: float
    gap: float


def _mu_p_cell(A, b, c, V, p, n_dirs=720, rng=None):
    d = A.shape[0]
    S = _gamma_quadratic_matrix(A, p)
    lvec = _embed(np.conj(b) + jp_apply(c, p))

    if V < 0:
        raise ValueError("mu_p is defined for nonnegative potentials")

    if np.allclose(lvec, 0.0):
        lam_min = float(np.linalg.eigvalsh(S)[0])
        value = lam_min if V == 0.0 else min(lam_min, 1.0)
        return value, 0.0

    def ray_along(u):
        return _ray_infimum(float(u @ S @ u), float(lvec @ u), V)

    if d == 1:
        thetas = np.linspace(0.0, np.pi, n_dirs, endpoint=False)
        dirs = np.stack([np.cos(thetas), np.sin(thetas)], axis=1)
    else:
        rng = np.random.default_rng(rng)
        dirs = rng.standard_normal((max(n_dirs, 2048), 2 * d))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    vals = np.array([ray_along(u) for u in dirs])
    coarse = float(vals.min())
    if not np.isfinite(coarse):
        return -np.inf, 0.0

    # polish around the best directions
    best = coarse
    order = np.argsort(vals)[:4]
    if d == 1:
        for k in order:
            th0 = thetas[k]
            res = minimize_scalar(
                lambda th: ray_along(np.array([np.cos(th), np.sin(th)])),
                bounds=(th0 - 0.02, th0 + 0.02),
                method="bounded",
                options={"xatol": 1e-12},
            )
            best = min(best, float(res.fun))
    else:
        rng = np.random.default_rng(rng)
        for k in order:
            u0 = dirs[k]
            for _ in range(200):
                u = u0 + 0.02 * rng.standard_normal(2 * d)
                u /= np.linalg.norm(u)
                v = ray_along(u)
                if v < best:
                    best, u0 = v, u
    return best, abs(coarse - best)


def mu_p(coeffs, p, n_dirs=720, rng=0):
    """Largest mu with Gamma_p(x, xi) >= mu (|xi|^2 + V(x)) over all cells.

    Requires V >= 0.  The reported value is the best infimum found by the
    per-ray closed form over a direction scan with local polish; ``gap``
    estimates the scan resolution.
    """
    if p <= 1:
        raise ValueError("p must exceed 1")
    if np.any(coeffs.V < 0):
        raise ValueError("mu_p requires a nonnegative potential")
    worst, gap = np.inf, 0.0
    for _, (A, b, c, V) in coeffs.cells():
        v, g = _mu_p_cell(A, b, c, V, p, n_dirs=n_dirs, rng=rng)
        if v < worst:
            worst, gap = v, g
    return MuEstimate(value=float(worst), gap=float(gap))


def first_order_bound(coeffs):
    """Smallest M with |conj(b) - c| <= M sqrt(V) cellwise (inf if impossible)."""
    diff = np.linalg.norm(np.conj(coeffs.b) - coeffs.c, axis=-1)
    V = coeffs.V
    M = 0.0
    for dv, vv in zip(diff.reshape(-1), V.reshape(-1)):
        if dv <= 1e-14:
            continue
        if vv <= 0.0:
            return np.inf
        M = max(M, dv / np.sqrt(vv))
    return M


@dataclass(frozen=True)
class ClassReport:
    class_name: str
    member: bool
    witness: dict = dc_field(default_factory=dict)
    cert: SubcriticalityCert | None = None
    status: str = ""
    all_passing: tuple = ()

    def as_dict(self):
        doc = {
            "class": self.class_name,
            "member": bool(self.member),
            "witness": {k: _jsonable(v) for k, v in self.witness.items()},
            "status": self.status,
        }
        if self.cert is not None:
            doc["certificate"] = self.cert.as_dict()
        if self.all_passing:
            doc["all_passing"] = [c.as_dict() for c in self.all_passing]
        return doc


def _jsonable(v):
    if isinstance(v, (np.floating, np.integer)):
        return float(v)
    if isinstance(v, float) and not np.isfinite(v):
        return str(v)
    return v


def check_class(coeffs, p, class_name, margin=MEMBERSHIP_MARGIN):
    """Membership of (A, b, c, V) in one of the unperturbed classes.

    ``A_p`` looks only at the matrix field.  ``W_p`` additionally requires
    Gamma_p >= 0 and the first-order bound against sqrt(V); ``S_p``
    strengthens Gamma_p >= 0 to a strictly positive mu_p; ``B_p`` is S_p
    for both p and its conjugate exponent.  Strict inequalities must hold
    with the configured margin.
    """
    if class_name not in PLAIN_CLASSES:
        raise ValueError(f"unknown class {class_name!r}")
    if p <= 1:
        raise ValueError("p must exceed 1")
    q = conjugate_exponent(p)
    dp = delta_p(coeffs.A, p)
    witness = {"delta_p": dp}

    if class_name == "A_p":
        return ClassReport(class_name, member=dp >= margin, witness=witness)

    if np.any(coeffs.V < 0):
        return ClassReport(
            class_name, member=False, witness=witness, status="V has negative cells"
        )
    M = first_order_bound(coeffs)
    witness["M"] = M
    if not np.isfinite(M) or dp < margin:
        return ClassReport(class_name, member=False, witness=witness)

    mu_est = mu_p(coeffs, p)
    witness["mu_p"] = mu_est.value
    witness["mu_p_gap"] = mu_est.gap
    if class_name == "W_p":
        member = mu_est.value >= -1e-12
        return ClassReport(class_name, member=member, witness=witness)
    if class_name == "S_p":
        member = mu_est.value >= margin
        return ClassReport(class_name, member=member, witness=witness)

    # B_p = S_p intersected with S_q
    mu_q_est = mu_p(coeffs, q)
    dq = delta_p(coeffs.A, q)
    witness.update({"mu_q": mu_q_est.value, "delta_q": dq})
    member = (
        dp >= margin
        and dq >= margin
        and mu_est.value >= margin
        and mu_q_est.value >= margin
    )
    return ClassReport("B_p", member=member, witness=witness)


def perturb(coeffs, p, cert):
    """Perturbed tuple (A - alpha pq/4 I, b, c, (1 - sigma) V_plus)."""
    if p <= 1:
        raise ValueError("p must exceed 1")
    q = conjugate_exponent(p)
    d = coeffs.d
    shift = cert.alpha * p * q / 4.0
    A = coeffs.A - shift * np.eye(d)
    V = (1.0 - cert.sigma) * coeffs.V_plus
    return CoefficientTuple(domain=coeffs.domain, A=A, b=coeffs.b.copy(),
                            c=coeffs.c.copy(), V=V)


def rotate(coeffs, phi):
    """Rotated tuple (e^{i phi} A, e^{i phi} b, e^{i phi} c, cos(phi) V)."""
    if abs(phi) > np.pi / 2 + 1e-12:
        raise ValueError("|phi| must not exceed pi/2")
    z = np.exp(1j * phi)
    return CoefficientTuple(
        domain=coeffs.domain,
        A=z * coeffs.A,
        b=z * coeffs.b,
        c=z * coeffs.c,
        V=np.cos(phi) * coeffs.V,
    )


def adjoint(coeffs):
    """Adjoint tuple (A^*, conj(c), conj(b), V)."""
    A_star = np.conj(np.swapaxes(coeffs.A, -1, -2))
    return CoefficientTuple(
        domain=coeffs.domain,
        A=A_star,
        b=np.conj(coeffs.c),
        c=np.conj(coeffs.b),
        V=coeffs.V.copy(),
    )


# ---------------------------------------------------------------------------
# Strong subcriticality: a probe-based falsifier for
#   int V_- |v|^2 <= alpha int |grad v|^2 + sigma int V_+ |v|^2.

@dataclass(frozen=True)
class SubcritReport:
    ok: bool
    worst_ratio: float
    witness: str = ""

    def as_dict(self):
        return {
            "not_refuted": bool(self.ok),
            "worst_ratio": float(self.worst_ratio),
            "witness": self.witness,
        }


def _subcritical_probes(domain, V_minus, n_probes, rng):
    """Probe family: Laplacian eigenvectors, smooth bumps, adversarial bumps."""
    from .semigroup import laplacian_stiffness, mass_matrix

    S = laplacian_stiffness(domain).toarray()
    M = mass_matrix(domain).toarray()
    probes = []
    try:
        from scipy.linalg import eigh

        k = min(8, S.shape[0] - 1)
        _, vecs = eigh(S, M, subset_by_index=[0, k - 1])
        probes += [("laplacian eigenvector", vecs[:, j]) for j in range(vecs.shape[1])]
    except Exception:
        pass

    pts = np.stack([g.reshape(-1) for g in domain.meshgrid()], axis=1)
    lows = np.array([e[0] for e in domain.extents])
    his = np.array([e[1] for e in domain.extents])
    widths = his - lows

    def bump(center, w):
        r2 = np.sum(((pts - center) / w) ** 2, axis=1)
        v = np.where(r2 < 1.0, np.exp(-1.0 / np.maximum(1.0 - r2, 1e-300)), 0.0)
        return v

    n_bumps = max(4, n_probes - len(probes) - 4)
    for _ in range(n_bumps):
        center = lows + rng.uniform(0.1, 0.9, size=len(lows)) * widths
        w = rng.uniform(0.05, 0.4) * widths
        probes.append(("random bump", bump(center, w)))

    vflat = V_minus.reshape(-1)
    if vflat.max() > 0:
        center = pts[int(np.argmax(vflat))]
        for frac in (0.05, 0.1, 0.25, 0.5):
            probes.append(("adversarial bump", bump(center, frac * widths)))

    if domain.bc == "neumann":
        probes.append(("constant", np.ones(pts.shape[0])))
    return probes, S, M


def _rayleigh_probe(S, M, V_plus, V_minus, alpha, sigma):
    """Extremal probe from the generalized eigenproblem, when well posed."""
    from scipy.linalg import eigh

    num = M @ np.diag(V_minus.reshape(-1))
    den = alpha * S + sigma * (M @ np.diag(V_plus.reshape(-1)))
    den = (den + den.T) / 2.0
    try:
        np.linalg.cholesky(den + 1e-300 * np.eye(den.shape[0]))
    except np.linalg.LinAlgError:
        return None
    try:
        _, vecs = eigh((num + num.T) / 2.0, den, subset_by_index=[den.shape[0] - 1] * 2)
        return vecs[:, -1]
    except Exception:
        return None


def check_subcritical(V, cert, domain, bc=None, n_probes=32, rng=0):
    """Probe-based test of the strong subcriticality inequality.

    Returns a :class:`SubcritReport`; ``ok=True`` means no probe violated
    the inequality (the property is *not refuted*, not proved).  ``V`` is a
    cellwise field on ``domain``; gradients and integrals are the discrete
    ones of the grid Laplacian with the domain's boundary condition.
    """
    if cert.sigma >= 1.0 or cert.alpha < 0.0:
        raise ValueError("need alpha >= 0 and sigma < 1")
    if n_probes < 1:
        raise ValueError("n_probes must be >= 1")
    if bc is not None and bc != domain.bc:
        domain = GridDomain(extents=domain.extents, n_cells=domain.n_cells, bc=bc)
    V = np.asarray(V, dtype=float)
    V_plus = np.maximum(V, 0.0).reshape(-1)
    V_minus = np.maximum(-V, 0.0).reshape(-1)
    if V_minus.max() == 0.0:
        return SubcritReport(ok=True, worst_ratio=0.0)

    rng = np.random.default_rng(rng)
    probes, S, M = _subcritical_probes(domain, V_minus, n_probes, rng)
    ray = _rayleigh_probe(S, M, V_plus, V_minus, cert.alpha, cert.sigma)
    if ray is not None:
        probes.append(("rayleigh extremal", ray))

    worst, who = 0.0, ""
    for name, v in probes:
        nv = np.linalg.norm(v)
        if nv == 0.0:
            continue
        v = v / nv
        lhs = float(np.real(v.conj() @ (M @ (V_minus * v))))
        grad2 = float(np.real(v.conj() @ (S @ v)))
        vp = float(np.real(v.conj() @ (M @ (V_plus * v))))
        rhs = cert.alpha * grad2 + cert.sigma * vp
        if lhs <= 1e-14:
            continue
        ratio = np.inf if rhs <= 0.0 else lhs / rhs
        if ratio > worst:
            worst, who = ratio, name
    return SubcritReport(ok=worst <= 1.0 + 1e-12, worst_ratio=worst, witness=who)


def default_alpha_grid():
    return np.concatenate([[0.0], np.geomspace(1e-4, 10.0, 21)])


def default_sigma_grid():
    return np.arange(0.0, 1.0, 0.1)


def check_perturbed_class(coeffs, p, domain=None, class_name="BP_p",
                          alphas=None, sigmas=None, margin=MEMBERSHIP_MARGIN,
                          rng=0):
    """Search (alpha, sigma) certificates for the perturbed classes.

    Membership holds when some pair passes both the subcriticality falsifier
    for V and the base-class check of the perturbed tuple.  The report
    carries the best certificate found (largest base-class margin) plus all
    passing pairs.
    """
    if class_name not in PERTURBED_CLASSES:
        raise ValueError(f"unknown perturbed class {class_name!r}")
    base = _BASE_OF[class_name]
    domain = domain or coeffs.domain
    if alphas is None:
        alphas = default_alpha_grid()
    if sigmas is None:
        sigmas = default_sigma_grid()

    has_negative = bool(np.any(coeffs.V < 0))
    passing, best, best_score = [], None, -np.inf
    for alpha in alphas:
        for sigma in sigmas:
            cert = SubcriticalityCert(alpha=float(alpha), sigma=float(sigma))
            if has_negative:
                sub = check_subcritical(coeffs.V, cert, domain, rng=rng)
                if not sub.ok:
                    continue
            elif alpha > 0 or sigma > 0:
                # nonnegative V is subcritical with (0, 0); larger
                # certificates only weaken the perturbed tuple
                pass
            rep = check_class(perturb(coeffs, p, cert), p, base, margin=margin)
            if not rep.member:
                continue
            passing.append(cert)
            score = rep.witness.get("mu_p", rep.witness.get("delta_p", 0.0))
            if class_name == "BP_p":
                score = min(score, rep.witness.get("mu_q", score))
            if score > best_score:
                best_score, best = score, (cert, rep)
            if not has_negative:
                break
        if best is not None and not has_negative:
            break

    if best is None:
        return ClassReport(class_name, member=False,
                           status="no certificate found on search grid")
    cert, rep = best
    witness = dict(rep.witness)
    return ClassReport(
        class_name,
        member=True,
        witness=witness,
        cert=cert,
        status="not_refuted",
        all_passing=tuple(passing),
    )
