"""Scenario runner: declarative JSON config in, JSON/CSV/PNG report out.

Usage:
    pell-lab run --config suite.json [--out-dir out] [--threads 4]
                 [--seed-override 7] [--verbose]
    pell-lab regions --p 3 --kappa 0.15 --out regions.csv

Exit codes: 0 all scenarios passed (or were merely "not refuted");
1 at least one scenario failed; 2 the config did not parse.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field as dc_field
from importlib import resources
from pathlib import Path

import numpy as np

from . import plots
from .field import GridDomain, SubcriticalityCert, coefficients_from_dict

SCHEMA_VERSION = "1"

SCENARIO_KINDS = ("class_check", "convexity", "cutoff_audit", "contractivity",
                  "flow", "bilinear", "truncation")

REPORT_SCHEMA = {
    "type": "object",
    "required": ["schema_version", "config_name", "seed", "scenarios"],
    "properties": {
        "schema_version": {"type": "string"},
        "config_name": {"type": "string"},
        "seed": {"type": "integer"},
        "scenarios": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["name", "kind", "status", "metrics", "artifacts"],
                "properties": {
                    "name": {"type": "string"},
                    "kind": {"enum": list(SCENARIO_KINDS)},
                    "status": {"enum": ["pass", "fail", "not_refuted"]},
                    "metrics": {"type": "object"},
                    "artifacts": {"type": "array", "items": {"type": "string"}},
                },
            },
        },
    },
}


@dataclass(frozen=True)
class Scenario:
    name: str
    kind: str
    inputs: dict = dc_field(default_factory=dict)
    params: dict = dc_field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        if self.kind not in SCENARIO_KINDS:
            raise ValueError(f"unknown scenario kind {self.kind!r}")


@dataclass
class RunReport:
    config_name: str
    seed: int
    scenarios: list = dc_field(default_factory=list)

    def as_dict(self):
        return {
            "schema_version": SCHEMA_VERSION,
            "config_name": self.config_name,
            "seed": self.seed,
            "scenarios": sorted(self.scenarios, key=lambda s: s["name"]),
        }

    @property
    def failed(self):
        return [s for s in self.scenarios if s["status"] == "fail"]


def validate_report(doc):
    import jsonschema

    jsonschema.validate(doc, REPORT_SCHEMA)
    return True


# ---------------------------------------------------------------------------
# config handling

def load_config(path):
    if path == "paper-suite":
        text = resources.files("pell_lab").joinpath(
            "configs/paper_suite.json").read_text()
        doc = json.loads(text)
    else:
        with open(path) as f:
            doc = json.load(f)
    scenarios = [Scenario(
        name=s["name"], kind=s["kind"], inputs=s.get("inputs", {}),
        params=s.get("params", {}), seed=int(s.get("seed", doc.get("seed", 0))),
    ) for s in doc.get("scenarios", [])]
    names = [s.name for s in scenarios]
    if len(set(names)) != len(names):
        raise ValueError("scenario names must be unique within a run")
    return doc.get("name", "run"), int(doc.get("seed", 0)), scenarios


def _coefficients(inputs, key="coefficients", base=None):
    if f"{key}_inline" in inputs:
        return coefficients_from_dict(inputs[f"{key}_inline"])
    path = Path(inputs[key])
    if base and not path.is_absolute():
        path = Path(base) / path
    with open(path) as f:
        return coefficients_from_dict(json.load(f))


def build_probe(spec, domain, rng):
    """Probe field from a {type, params} document."""
    kind = spec.get("type", "eigenmode")
    prm = spec.get("params", {})
    x = domain.meshgrid()
    lo = np.array([e[0] for e in domain.extents])
    hi = np.array([e[1] for e in domain.extents])
    if kind == "eigenmode":
        k = int(prm.get("k", 1))
        mode = np.ones(domain.shape)
        for ax, xs in enumerate(x):
            L = hi[ax] - lo[ax]
            trig = np.sin if domain.bc == "dirichlet" else np.cos
            mode = mode * trig(k * np.pi * (xs - lo[ax]) / L)
        return mode.reshape(-1).astype(complex)
    if kind == "bump":
        center = np.asarray(prm.get("center", (lo + hi) / 2.0), dtype=float)
        width = np.asarray(prm.get("width", 0.2 * (hi - lo)), dtype=float)
        r2 = np.zeros(domain.shape)
        for ax, xs in enumerate(x):
            r2 = r2 + ((xs - center[ax]) / width[ax]) ** 2
        v = np.where(r2 < 1, np.exp(-1 / np.maximum(1 - r2, 1e-300)), 0.0)
        return v.reshape(-1).astype(complex)
    if kind == "random":
        n = int(np.prod(domain.shape))
        return (rng.standard_normal(n) + 1j * rng.standard_normal(n))
    raise ValueError(f"unknown probe type {kind!r}")


# ---------------------------------------------------------------------------
# scenario runners; each returns (status, metrics, artifact paths)

def _run_class_check(sc, out_dir, base):
    from . import pell

    _, coeffs = _coefficients(sc.inputs, base=base)
    p = float(sc.params["p"])
    class_name = sc.params.get("class", "B_p")
    if class_name in pell.PERTURBED_CLASSES:
        rep = pell.check_perturbed_class(coeffs, p, class_name=class_name,
                                         rng=sc.seed)
        status = "not_refuted" if rep.member else "fail"
    else:
        rep = pell.check_class(coeffs, p, class_name)
        status = "pass" if rep.member else "fail"
    if sc.params.get("expect_member") is False:
        status = "pass" if not rep.member else "fail"
    path = Path(out_dir) / f"{sc.name}_class.json"
    path.write_text(json.dumps(rep.as_dict(), indent=2, sort_keys=True))
    return status, rep.as_dict(), [str(path)]


def _run_convexity(sc, out_dir, base):
    from . import hess
    from .bellman import BellmanParams

    _, ca = _coefficients(sc.inputs, "coefficients_a", base)
    _, cb = _coefficients(sc.inputs, "coefficients_b", base)
    p = float(sc.params["p"])
    mode = sc.params.get("mode", "plain")
    cert_a = cert_b = None
    if mode == "perturbed":
        cert_a = SubcriticalityCert(**sc.params["cert_a"])
        cert_b = SubcriticalityCert(**sc.params["cert_b"])
    if "delta" in sc.params:
        delta = float(sc.params["delta"])
    else:
        delta, _ = hess.choose_delta(ca, cb, p, mode=mode, cert_a=cert_a,
                                     cert_b=cert_b, rng=sc.seed)
    params = BellmanParams(p=p, delta=delta)
    rep = hess.verify_convexity(
        ca, cb, p, params, n_samples=int(sc.params.get("n_samples", 20000)),
        mode=mode, cert_a=cert_a, cert_b=cert_b, rng=sc.seed)
    rep["delta"] = delta

    # ratio histogram for the combined region
    rng = np.random.default_rng(sc.seed)
    from .bellman import on_singular_set, sample_omegas

    artifacts = []
    stem = str(Path(out_dir) / f"{sc.name}_slack")
    zeta, eta = sample_omegas(4000, rng)
    keep = ~on_singular_set(zeta, eta, params, eps=1e-6)
    zeta, eta = zeta[keep], eta[keep]
    X = rng.standard_normal((zeta.size, ca.d)) + 1j * rng.standard_normal(
        (zeta.size, ca.d))
    Y = rng.standard_normal((zeta.size, ca.d)) + 1j * rng.standard_normal(
        (zeta.size, ca.d))
    Aa, ba, cca, Va = (arr[0] for arr in hess._cell_arrays(ca))
    Ab, bb, ccb, Vb = (arr[0] for arr in hess._cell_arrays(cb))
    H = hess._h_full_q([(Aa, ba, cca, max(Va, 0.0)),
                        (Ab, bb, ccb, max(Vb, 0.0))],
                       params, zeta, eta, X, Y)
    s, t = np.abs(zeta), np.abs(eta)
    tau = np.maximum(s ** (p - 2.0), t ** (2.0 - params.q))
    with np.errstate(divide="ignore", invalid="ignore"):
        shape = tau * np.sum(np.abs(X) ** 2, -1) + np.sum(np.abs(Y) ** 2, -1) / tau
        ratios = np.where(shape > 0, H / shape, np.nan)
    ratios = ratios[np.isfinite(ratios)]
    artifacts += plots.slack_histogram_files(stem, ratios, "combined")
    return ("pass" if rep["passed"] else "fail"), rep, artifacts


def _run_cutoff_audit(sc, out_dir, base):
    from .cutoff import CutoffParams, check_admissible, check_comparability, region_map

    p = float(sc.params["p"])
    kappa = sc.params.get("kappa")
    params = CutoffParams(p=p, kappa=kappa)
    n_list = tuple(sc.params.get("n_list", (1, 4, 16, 64)))
    adm = check_admissible(params, n_list=n_list, rng=sc.seed,
                           n_samples=int(sc.params.get("n_samples", 250)))
    comp = check_comparability(params, n_samples=1000, rng=sc.seed)
    s, t, labels = region_map(params, n_grid=int(sc.params.get("n_grid", 120)))
    stem = str(Path(out_dir) / f"{sc.name}_regions")
    artifacts = plots.region_map_files(stem, s, t, labels, p, params.kappa)
    metrics = {"admissible": adm, "comparability": comp, "kappa": params.kappa}
    ok = adm["passed"] and comp["passed"]
    return ("pass" if ok else "fail"), metrics, artifacts


def _run_contractivity(sc, out_dir, base):
    from . import semigroup as sg

    dom, coeffs = _coefficients(sc.inputs, base=base)
    p = float(sc.params["p"])
    theta = float(sc.params.get("theta", 0.0))
    t_grid = list(sc.params.get("t_grid", (0.0, 0.1, 0.5, 1.0)))
    rep = sg.check_contractivity(
        coeffs, p, dom, theta=theta, t_grid=t_grid,
        dt=sc.params.get("dt"), rng=sc.seed,
        require_class=bool(sc.params.get("require_class", True)))

    rng = np.random.default_rng(sc.seed)
    probes = sg.default_probes(dom, rng=sc.seed)
    form = sg.assemble(coeffs)
    curves = {}
    for name, f in probes[:4]:
        nrm0 = sg.lp_norm(f, p, dom)
        states = sg.evolve(form, f, t_grid, theta=theta, dt=sc.params.get("dt"))
        curves[name] = [sg.lp_norm(st.u, p, dom) / nrm0 for st in states]
    stem = str(Path(out_dir) / f"{sc.name}_norms")
    artifacts = plots.norm_curve_files(stem, t_grid, curves)
    rep.pop("per_probe_max_ratio", None)
    return ("pass" if rep["passed"] else "fail"), rep, artifacts


def _run_flow(sc, out_dir, base):
    from . import semigroup as sg

    dom_a, ca = _coefficients(sc.inputs, "coefficients_a", base)
    dom_b, cb = _coefficients(sc.inputs, "coefficients_b", base)
    rng = np.random.default_rng(sc.seed)
    f = build_probe(sc.params.get("f", {"type": "eigenmode"}), dom_a, rng)
    g = build_probe(sc.params.get("g", {"type": "eigenmode", "params": {"k": 2}}),
                    dom_b, rng)
    rep = sg.flow_monotonicity(
        ca, cb, float(sc.params["p"]), float(sc.params.get("delta", 0.05)),
        f, g, (dom_a, dom_b), list(sc.params.get("t_grid", (0.0, 0.1, 0.3))),
        dt=sc.params.get("dt"),
        require_class=bool(sc.params.get("require_class", True)))
    stem = str(Path(out_dir) / f"{sc.name}_flow")
    artifacts = plots.flow_curve_files(stem, rep.times, rep.flow_E,
                                       rep.lp_norms,
                                       rep.diagnostics["tol_flow"])
    ok = rep.diagnostics["passed"]
    return ("pass" if ok else "fail"), rep.as_dict(), artifacts


def _run_bilinear(sc, out_dir, base):
    from . import semigroup as sg

    dom_a, ca = _coefficients(sc.inputs, "coefficients_a", base)
    dom_b, cb = _coefficients(sc.inputs, "coefficients_b", base)
    rng = np.random.default_rng(sc.seed)
    p = float(sc.params["p"])
    f = build_probe(sc.params.get("f", {"type": "eigenmode"}), dom_a, rng)
    g = build_probe(sc.params.get("g", {"type": "eigenmode"}), dom_b, rng)
    val, diag = sg.bilinear_functional(
        ca, cb, p, f, g, float(sc.params.get("T_max", 20.0)),
        domains=(dom_a, dom_b), n_time=int(sc.params.get("n_time", 200)),
        dt=sc.params.get("dt"))
    q = p / (p - 1.0)
    denom = sg.lp_norm(f, p, dom_a) * sg.lp_norm(g, q, dom_b)
    metrics = {"value": val, "normalized": val / max(denom, 1e-300), **diag}
    status = "pass"
    if "expect" in sc.params:
        want = float(sc.params["expect"])
        tol = float(sc.params.get("rel_tol", 0.02))
        metrics["expected"] = want
        status = "pass" if abs(val - want) <= tol * abs(want) else "fail"
    return status, metrics, []


def _run_truncation(sc, out_dir, base):
    from . import semigroup as sg

    dom, coeffs = _coefficients(sc.inputs, base=base)
    rng = np.random.default_rng(sc.seed)
    f = build_probe(sc.params.get("f", {"type": "eigenmode"}), dom, rng)
    rep = sg.check_truncation_convergence(
        coeffs, f, float(sc.params.get("t", 0.05)),
        list(sc.params.get("n_list", (1, 2, 4, 8, 16, 32, 64, 128, 256))),
        domain=dom, dt=sc.params.get("dt", 2e-3))
    stem = str(Path(out_dir) / f"{sc.name}_errors")
    artifacts = plots.error_curve_files(stem, rep["n_list"],
                                        rep["grad_errors"],
                                        rep["potential_errors"])
    return ("pass" if rep["passed"] else "fail"), rep, artifacts


_RUNNERS = {
    "class_check": _run_class_check,
    "convexity": _run_convexity,
    "cutoff_audit": _run_cutoff_audit,
    "contractivity": _run_contractivity,
    "flow": _run_flow,
    "bilinear": _run_bilinear,
    "truncation": _run_truncation,
}


def _sanitize(obj):
    """Make metrics JSON-serializable and deterministic."""
    if isinstance(obj, dict):
        return {str(k): _sanitize(v) for k, v in sorted(obj.items(),
                                                        key=lambda kv: str(kv[0]))}
    if isinstance(obj, (list, tuple)):
        return [_sanitize(v) for v in obj]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if np.isfinite(v) else repr(v)
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    if isinstance(obj, np.ndarray):
        return _sanitize(obj.tolist())
    return obj


def run(config_path, out_dir="pell-lab-out", threads=None, seed_override=None,
        verbose=False):
    """Execute a config; returns (RunReport, exit_code)."""
    try:
        name, seed, scenarios = load_config(config_path)
    except (OSError, ValueError, KeyError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return None, 2
    except json.JSONDecodeError as exc:
        print(f"config parse error at line {exc.lineno}, column {exc.colno}: "
              f"{exc.msg}", file=sys.stderr)
        return None, 2

    if seed_override is not None:
        seed = int(seed_override)
        scenarios = [Scenario(s.name, s.kind, s.inputs, s.params, seed)
                     for s in scenarios]
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    base = None if config_path == "paper-suite" else Path(config_path).parent

    if threads is None:
        threads = int(os.environ.get("PELL_LAB_THREADS", "1"))
    threads = max(1, int(threads))

    def execute(sc):
        if verbose:
            print(f"[{sc.kind}] {sc.name} ...", flush=True)
        try:
            status, metrics, artifacts = _RUNNERS[sc.kind](sc, out, base)
        except Exception as exc:  # scenario failures must not kill the run
            status, metrics, artifacts = "fail", {"error": repr(exc)}, []
        if verbose:
            print(f"[{sc.kind}] {sc.name}: {status}", flush=True)
        return {
            "name": sc.name,
            "kind": sc.kind,
            "status": status,
            "metrics": _sanitize(metrics),
            "artifacts": sorted(artifacts),
        }

    report = RunReport(config_name=name, seed=seed)
    if threads == 1:
        results = [execute(sc) for sc in scenarios]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(execute, scenarios))
    report.scenarios = results

    doc = report.as_dict()
    validate_report(doc)
    (out / "report.json").write_text(json.dumps(doc, indent=2, sort_keys=True))
    code = 1 if report.failed else 0
    return report, code


def emit_plots_data(report, out_dir):
    """Re-emit the CSV/PNG artifacts recorded in a report document.

    The heavy data products are written by the scenario runners as they go;
    this helper lists them (and is the hook the spec's plotting contract
    points at).  Returns the artifact paths grouped by scenario.
    """
    doc = report.as_dict() if hasattr(report, "as_dict") else report
    return {s["name"]: s["artifacts"] for s in doc.get("scenarios", [])}


def main(argv=None):
    parser = argparse.ArgumentParser(prog="pell-lab", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute a scenario config")
    p_run.add_argument("--config", required=True)
    p_run.add_argument("--out-dir", default="pell-lab-out")
    p_run.add_argument("--threads", type=int, default=None)
    p_run.add_argument("--seed-override", type=int, default=None)
    p_run.add_argument("--verbose", action="store_true")

    p_reg = sub.add_parser("regions", help="export a region-partition map")
    p_reg.add_argument("--p", type=float, required=True)
    p_reg.add_argument("--kappa", type=float, required=True)
    p_reg.add_argument("--out", required=True)
    p_reg.add_argument("--n-grid", type=int, default=160)

    args = parser.parse_args(argv)
    if args.command == "run":
        _, code = run(args.config, out_dir=args.out_dir, threads=args.threads,
                      seed_override=args.seed_override, verbose=args.verbose)
        return code

    from .cutoff import CutoffParams, region_map

    params = CutoffParams(p=args.p, kappa=args.kappa)
    s, t, labels = region_map(params, n_grid=args.n_grid)
    stem = str(Path(args.out).with_suffix(""))
    plots.region_map_files(stem, s, t, labels, args.p, args.kappa)
    print(f"wrote {stem}.csv and {stem}.png")
    return 0


if __name__ == "__main__":
    sys.exit(main())
