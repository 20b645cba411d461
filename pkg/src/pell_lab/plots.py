"""Figure rendering for run reports.

Every figure has a CSV twin written next to it, so downstream tooling can
re-plot without parsing PNGs.  Rendering is headless (Agg).
"""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

REGION_COLORS = {
    "I": "#4878cf",
    "R_zeta": "#e8a0a0",
    "R_eta": "#f2b540",
    "T": "#d8d84b",
    "O": "#6bc26b",
}


def write_csv(path, header, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(header)
        w.writerows(rows)
    return str(path)


def region_map_files(stem, s, t, labels, p, kappa):
    csv_path = write_csv(f"{stem}.csv", ["abs_zeta", "abs_eta", "label"],
                         zip(s, t, labels))
    fig, ax = plt.subplots(figsize=(5.2, 4.2))
    for lab, color in REGION_COLORS.items():
        mask = labels == lab
        ax.scatter(s[mask], t[mask], s=4, c=color, label=lab, linewidths=0)
    ax.set_xlabel(r"$|\zeta|$")
    ax.set_ylabel(r"$|\eta|$")
    ax.set_title(f"region partition, p={p:g}, kappa={kappa:g}")
    ax.legend(loc="upper right", fontsize=8)
    fig.tight_layout()
    fig.savefig(f"{stem}.png", dpi=130)
    plt.close(fig)
    return [csv_path, f"{stem}.png"]


def flow_curve_files(stem, times, flow_E, lp_norms, tol_flow):
    rows = []
    keys = sorted(lp_norms)
    for k, t in enumerate(times):
        rows.append([t, flow_E[k]] + [lp_norms[key][k] for key in keys])
    csv_path = write_csv(f"{stem}.csv",
                         ["t", "flow_E"] + [f"lp_norm_p{key}" for key in keys],
                         rows)
    fig, ax = plt.subplots(figsize=(5.2, 3.6))
    ax.plot(times, flow_E, "o-", label="flow energy")
    ax.set_xlabel("t")
    ax.set_ylabel("E(t)")
    ax.set_title(f"Bellman flow (tolerance {tol_flow:.2e})")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(f"{stem}.png", dpi=130)
    plt.close(fig)
    return [csv_path, f"{stem}.png"]


def slack_histogram_files(stem, ratios, region_name):
    csv_path = write_csv(f"{stem}.csv", ["ratio"], [[r] for r in ratios])
    fig, ax = plt.subplots(figsize=(5.2, 3.6))
    ax.hist(ratios, bins=60, color="#4878cf")
    ax.set_xlabel("Hessian / bound shape")
    ax.set_ylabel("count")
    ax.set_title(f"convexity ratio histogram ({region_name})")
    fig.tight_layout()
    fig.savefig(f"{stem}.png", dpi=130)
    plt.close(fig)
    return [csv_path, f"{stem}.png"]


def norm_curve_files(stem, times, per_probe):
    names = sorted(per_probe)
    rows = [[t] + [per_probe[n][k] for n in names] for k, t in enumerate(times)]
    csv_path = write_csv(f"{stem}.csv", ["t"] + names, rows)
    fig, ax = plt.subplots(figsize=(5.2, 3.6))
    for n in names:
        ax.plot(times, per_probe[n], label=n, lw=1)
    ax.axhline(1.0, color="k", lw=0.6, ls="--")
    ax.set_xlabel("t")
    ax.set_ylabel("norm ratio")
    ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(f"{stem}.png", dpi=130)
    plt.close(fig)
    return [csv_path, f"{stem}.png"]


def error_curve_files(stem, n_list, grad_errors, potential_errors):
    csv_path = write_csv(f"{stem}.csv", ["n", "grad_error", "potential_error"],
                         zip(n_list, grad_errors, potential_errors))
    fig, ax = plt.subplots(figsize=(5.2, 3.6))
    ax.loglog(n_list, [max(e, 1e-17) for e in grad_errors], "o-",
              label="gradient error")
    ax.loglog(n_list, [max(e, 1e-17) for e in potential_errors], "s-",
              label="potential error")
    ax.set_xlabel("truncation level n")
    ax.set_ylabel("L2 error")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(f"{stem}.png", dpi=130)
    plt.close(fig)
    return [csv_path, f"{stem}.png"]
