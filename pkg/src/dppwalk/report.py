"""Run-directory digest: collect the JSON/CSV artifacts the subcommands
write, summarize every pass/fail flag in one place, and render companion
figures next to the delimited output.

Missing artifacts are listed rather than fatal, so a partial run still
yields a digest.
"""

from __future__ import annotations

import csv
import io
import json
import os

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

ARTIFACTS = {
    "walk_summary.json": "walks",
    "heatkernel.json": "heatkernel",
    "network.json": "network",
    "squeeze.json": "squeeze",
    "corrector.json": "corrector",
    "clt.json": "clt",
    "recurrence.json": "recurrence",
}


def _read_json(path):
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def _read_csv(path):
    with open(path, "r", encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    head, body = rows[0], rows[1:]
    cols = {name: [] for name in head}
    for r in body:
        for name, val in zip(head, r):
            try:
                cols[name].append(float(val))
            except ValueError:
                cols[name].append(val)
    return cols


def _checks_from(section: str, data: dict) -> list:
    """Flatten every boolean flag in an artifact into (name, ok) pairs."""
    out = []

    def walk(prefix, obj):
        if isinstance(obj, bool):
            out.append((prefix, obj))
        elif isinstance(obj, dict):
            for k, v in obj.items():
                walk(f"{prefix}.{k}" if prefix else k, v)

    walk(section, data)
    return [(name, ok) for name, ok in out
            if name.split(".")[-1] in ("passes", "plateau_ok",
                                       "entropy_bound_ok",
                                       "monotone", "boundary_identity",
                                       "fixpoint_stable", "subdivision_exact",
                                       "cauchy_tail_passes", "holds")]


def _fig_walks(run_dir, out):
    path = os.path.join(run_dir, "walks.csv")
    if not os.path.exists(path):
        return None
    cols = _read_csv(path)
    axes = [k for k in cols if k.startswith("x")]
    fig, ax = plt.subplots(1, len(axes), figsize=(4 * len(axes), 3.2),
                           squeeze=False)
    for i, name in enumerate(axes):
        ax[0][i].hist(cols[name], bins=60, color="steelblue")
        ax[0][i].set_xlabel(f"final {name}")
    fig.tight_layout()
    fig.savefig(out, dpi=120)
    plt.close(fig)
    return out


def _fig_heatkernel(run_dir, out):
    path = os.path.join(run_dir, "heatkernel.csv")
    if not os.path.exists(path):
        return None
    cols = _read_csv(path)
    fig, ax = plt.subplots(1, 2, figsize=(8, 3.2))
    ax[0].loglog(cols["n"][1:], cols["p00"][1:])
    ax[0].set_xlabel("n")
    ax[0].set_ylabel("p^n(0,0)")
    ax[1].plot(cols["n"][1:], cols["Q"][1:])
    ax[1].set_xlabel("n")
    ax[1].set_ylabel("entropy Q(n)")
    fig.tight_layout()
    fig.savefig(out, dpi=120)
    plt.close(fig)
    return out


def _fig_network(run_dir, out):
    path = os.path.join(run_dir, "cutsets.csv")
    if not os.path.exists(path):
        return None
    cols = _read_csv(path)
    fig, ax = plt.subplots(figsize=(4.5, 3.2))
    ax.plot(cols["n"], cols["nash_williams_partial"], marker="o", ms=3)
    ax.set_xlabel("box radius n")
    ax.set_ylabel("sum of 1 / C(cutset)")
    fig.tight_layout()
    fig.savefig(out, dpi=120)
    plt.close(fig)
    return out


def _fig_corrector(run_dir, out):
    path = os.path.join(run_dir, "corrector.json")
    if not os.path.exists(path):
        return None
    data = _read_json(path)
    series = data.get("eps_norm_series")
    schedule = data.get("schedule")
    if not series:
        return None
    fig, ax = plt.subplots(figsize=(4.5, 3.2))
    ax.loglog(schedule, series, marker="o", ms=3)
    ax.set_xlabel("eps")
    ax.set_ylabel("eps * mean |psi|^2")
    fig.tight_layout()
    fig.savefig(out, dpi=120)
    plt.close(fig)
    return out


FIGURES = {
    "fig_walks.png": _fig_walks,
    "fig_heatkernel.png": _fig_heatkernel,
    "fig_network.png": _fig_network,
    "fig_corrector.png": _fig_corrector,
}


def build_digest(run_dir: str, render: bool = True) -> dict:
    digest = {"run_dir": os.path.abspath(run_dir), "sections": {},
              "checks": [], "missing": [], "figures": []}
    for fname, section in ARTIFACTS.items():
        path = os.path.join(run_dir, fname)
        if not os.path.exists(path):
            digest["missing"].append(fname)
            continue
        data = _read_json(path)
        digest["sections"][section] = data
        for name, ok in _checks_from(section, data):
            digest["checks"].append({"check": name, "ok": ok, "source": fname})
    if render:
        for fname, fn in FIGURES.items():
            made = fn(run_dir, os.path.join(run_dir, fname))
            if made:
                digest["figures"].append(fname)
    digest["all_ok"] = all(c["ok"] for c in digest["checks"]) if digest["checks"] else None
    return digest


def digest_text(digest: dict) -> str:
    buf = io.StringIO()
    buf.write(f"run: {digest['run_dir']}\n")
    for c in digest["checks"]:
        mark = "PASS" if c["ok"] else "FAIL"
        buf.write(f"  [{mark}] {c['check']}  ({c['source']})\n")
    for m in digest["missing"]:
        buf.write(f"  [....] missing {m}\n")
    for f in digest["figures"]:
        buf.write(f"  figure {f}\n")
    if digest["all_ok"] is None:
        buf.write("no checks found\n")
    else:
        buf.write("all checks pass\n" if digest["all_ok"]
                  else "some checks FAILED\n")
    return buf.getvalue()


def write_digest(run_dir: str, render: bool = True) -> dict:
    digest = build_digest(run_dir, render=render)
    with open(os.path.join(run_dir, "digest.json"), "w", encoding="utf-8") as fh:
        json.dump(digest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(os.path.join(run_dir, "digest.txt"), "w", encoding="utf-8") as fh:
        fh.write(digest_text(digest))
    return digest
