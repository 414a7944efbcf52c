"""Command-line front end.

Subcommands map one-to-one onto the library modules; every run writes
its effective configuration next to its outputs so a rerun from that
file reproduces the artifacts byte for byte.  Exit codes: 0 success,
2 usage, 3 bad configuration, 4 file-format error, 5 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_CONFIG = 3
EXIT_FORMAT = 4
EXIT_RUNTIME = 5


class ConfigError(Exception):
    pass


def _thread_cap() -> int | None:
    """Honor DPP_THREADS by capping the numeric libraries' thread pools."""
    val = os.environ.get("DPP_THREADS")
    if not val:
        return None
    try:
        n = int(val)
        if n < 1:
            raise ValueError
    except ValueError:
        raise ConfigError(f"DPP_THREADS must be a positive integer, got {val!r}")
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(var, str(n))
    return n


def _parse_dims(text: str):
    from .env import LatticeWindow
    try:
        sides = tuple(int(tok) for tok in text.lower().split("x"))
        return LatticeWindow(sides)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"bad dims {text!r}: {exc}")


def _write(path: str, content: str):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(content)


def _write_json(path: str, obj):
    _write(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _echo_config(outdir: str, cmd: str, opts: dict, threads):
    cfg = {"command": cmd, "options": opts, "dpp_threads": threads}
    _write_json(os.path.join(outdir, "config.json"), cfg)
    return cfg


def _load_env(path: str, strict: bool = False):
    from . import env as envmod
    with open(path, "rb") as fh:
        return envmod.load(fh.read(), strict=strict)


def _outdir(path: str) -> str:
    os.makedirs(path, exist_ok=True)
    return path


# ---------------------------------------------------------------------------
# subcommand handlers

def cmd_gen_env(a) -> int:
    from . import env as envmod
    spec = envmod.ProcessSpec.parse(a.spec)
    window = _parse_dims(a.dims)
    env = envmod.sample(spec, window, a.seed,
                        condition_on_origin=not a.unconditioned,
                        strict=not a.lenient)
    with open(a.out, "wb") as fh:
        fh.write(envmod.save(env))
    print(json.dumps({"out": a.out, "spec": spec.spec_id,
                      "dims": list(window.sides), "seed": a.seed,
                      "occupied": int(env.occupancy.sum())}))
    return EXIT_OK


def cmd_walk(a, threads) -> int:
    from .stats import velocity_test
    from .walk import TransitionRule, run_ensemble_quenched
    env = _load_env(a.env)
    rule = TransitionRule(alpha=a.alpha)
    ens = run_ensemble_quenched(env, rule, a.steps, a.walkers, a.seed)
    out = _outdir(a.out)
    _write(os.path.join(out, "walks.csv"), ens.to_csv())
    vel = velocity_test(ens.final, a.steps)
    summary = ens.aggregate()
    summary["velocity_test"] = vel.as_json()
    _write_json(os.path.join(out, "walk_summary.json"), summary)
    _echo_config(out, "walk", {"env": a.env, "steps": a.steps,
                               "walkers": a.walkers, "seed": a.seed,
                               "alpha": a.alpha, "out": a.out}, threads)
    print(json.dumps({"out": out, "passes": vel.passes}))
    return EXIT_OK


def cmd_heatkernel(a, threads) -> int:
    from .heatkernel import (diagnostics, green_tail_slope, heat_kernel_bound,
                             propagate, site_index, usable_horizon)
    from .walk import TransitionRule
    env = _load_env(a.env)
    si = site_index(env)
    states = propagate(env, TransitionRule(), a.steps, si)
    diag = diagnostics(states, si)
    bound = heat_kernel_bound(states, env.d)
    out = _outdir(a.out)
    _write(os.path.join(out, "heatkernel.csv"), diag.to_csv())
    _write_json(os.path.join(out, "heatkernel.json"), {
        "steps": a.steps,
        "K00": diag.K00, "Kmax": diag.Kmax,
        "plateau_ok": bound.plateau_ok,
        "entropy_bound_ok": diag.entropy_bound_ok,
        "max_gauss_green_residual": float(diag.gauss_green_residual.max()),
        "green_partial_final": float(diag.green_partial[-1]),
        "green_tail_slope": green_tail_slope(diag.green_partial),
        "usable_horizon": usable_horizon(states, si),
    })
    _echo_config(out, "heatkernel", {"env": a.env, "steps": a.steps,
                                     "out": a.out}, threads)
    print(json.dumps({"out": out, "plateau_ok": bound.plateau_ok}))
    return EXIT_OK


def cmd_network(a, threads) -> int:
    from fractions import Fraction

    from . import network2d as net
    env = _load_env(a.env)
    network = net.build_network(env)
    groups = {}
    for e in network.edges:
        groups.setdefault(e.origin, []).append(e)
    subdivision_exact = all(net.series_conductance(g) == Fraction(1)
                            for g in groups.values())
    n_max = a.cutsets or min(min(env.window.sides) // 2 - 1, 64)
    cuts = net.cutsets(network, n_max)
    out = _outdir(a.out)
    _write(os.path.join(out, "cutsets.csv"), cuts.to_csv())
    info = {"edges": len(network.edges),
            "subdivision_exact": subdivision_exact,
            "nash_williams_partial_sum": float(cuts.nash_williams_partial[-1]),
            "nash_williams_log_coeff": cuts.log_growth_coefficient()}
    if a.spec:
        from .env import ProcessSpec
        spec = ProcessSpec.parse(a.spec)
        law = net.conductance_law(spec, env.window, a.law_samples, a.seed)
        _write(os.path.join(out, "conductance.csv"), law.to_csv())
        gaps = net.gap_samples(spec, env.window, a.law_samples, a.seed + 1)
        tail = net.cauchy_tail_from_samples(gaps)
        _write(os.path.join(out, "tail.csv"), tail.to_csv())
        info["conductance_tv"] = law.tv_distance
        info["cauchy_tail_passes"] = bool(tail.passes)
        info["cauchy_tail_C"] = tail.fitted_C
    _write_json(os.path.join(out, "network.json"), info)
    _echo_config(out, "network", {"env": a.env, "spec": a.spec,
                                  "cutsets": n_max,
                                  "law_samples": a.law_samples,
                                  "seed": a.seed, "out": a.out}, threads)
    print(json.dumps({"out": out, "subdivision_exact": subdivision_exact}))
    return EXIT_OK


def cmd_squeeze(a, threads) -> int:
    from . import isoperimetry as iso
    with open(a.set, "r", encoding="utf-8") as fh:
        A = iso.parse_set_file(fh.read())
    At = iso.squeeze_fixpoint(A)
    d = iso.set_dim(A)
    stable = all(iso.squeeze(At, j) == At for j in range(1, d + 1))
    proj = [len(iso.project(At, j)) for j in range(1, d + 1)]
    boundary = iso.boundary_edge_count(At)
    m, ratio = iso.isoperimetric_check(At)
    out = _outdir(a.out)
    _write(os.path.join(out, "squeezed.txt"), iso.format_set(At))
    _write_json(os.path.join(out, "squeeze.json"), {
        "size": len(A), "energy_before": iso.energy(A),
        "energy_after": iso.energy(At), "projections": proj,
        "boundary_edges": boundary,
        "boundary_identity": boundary == 2 * sum(proj),
        "fixpoint_stable": stable,
        "max_projection": m, "iso_ratio": ratio})
    _echo_config(out, "squeeze", {"set": a.set, "out": a.out}, threads)
    print(json.dumps({"out": out, "fixpoint_stable": stable}))
    return EXIT_OK


def cmd_corrector(a, threads) -> int:
    import numpy as np

    from .corrector import (assemble_corrector, martingale_check,
                            sublinearity_axis, sublinearity_box)
    env = _load_env(a.env)
    fld = assemble_corrector(env, tol=a.tol)
    ms = martingale_check(fld)
    out = _outdir(a.out)
    _write(os.path.join(out, "corrector.csv"), fld.to_csv())
    diag = fld.diagnostics()
    diag["monotone"] = bool((np.diff(fld.eps_norm_series) < 0).all())
    diag["D"] = ms.D.tolist()
    diag["max_conditional_mean"] = ms.max_conditional_mean
    ax = sublinearity_axis(fld.si, fld.chi)
    box = sublinearity_box(fld.si, fld.chi, n=min(env.window.sides) // 4)
    diag["sublinearity_axis_slope"] = ax.slope
    diag["sublinearity_box"] = {"n": box.n, "eps": box.eps_grid.tolist(),
                                "fractions": box.fractions.tolist()}
    _write_json(os.path.join(out, "corrector.json"), diag)
    _echo_config(out, "corrector", {"env": a.env, "tol": a.tol,
                                    "out": a.out}, threads)
    print(json.dumps({"out": out, "monotone": diag["monotone"]}))
    return EXIT_OK


def cmd_clt(a, threads) -> int:
    from .env import ProcessSpec
    from .stats import clt_1d, clt_hd
    spec = ProcessSpec.parse(a.spec)
    window = _parse_dims(a.dims)
    if a.d != window.d:
        raise ConfigError(f"--d {a.d} does not match dims {a.dims}")
    if a.d == 1:
        rep = clt_1d(spec, window, a.steps, a.walkers, a.seed)
    else:
        rep = clt_hd(spec, window, a.steps, a.walkers, a.seed,
                     use_corrector=not a.no_corrector)
    out = _outdir(a.out)
    _write(os.path.join(out, "clt.json"), rep.to_json() + "\n")
    _echo_config(out, "clt", {"d": a.d, "spec": a.spec, "dims": a.dims,
                              "steps": a.steps, "walkers": a.walkers,
                              "seed": a.seed,
                              "no_corrector": a.no_corrector,
                              "out": a.out}, threads)
    print(json.dumps({"out": out, "passes": rep.passes,
                      "target": rep.target.tolist()}))
    return EXIT_OK


def cmd_report(a) -> int:
    from .report import digest_text, write_digest
    if not os.path.isdir(a.dir):
        raise ConfigError(f"not a directory: {a.dir}")
    digest = write_digest(a.dir, render=not a.no_figures)
    sys.stdout.write(digest_text(digest))
    return EXIT_OK


def cmd_validate(a) -> int:
    env = _load_env(a.env, strict=True)
    print(json.dumps({"env": a.env, "dims": list(env.window.sides),
                      "occupied": int(env.occupancy.sum()), "valid": True}))
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="dpp",
        description="Random walks on discrete point processes: simulation "
                    "and numerical verification workbench.",
        epilog="Exit codes: 0 ok, 2 usage, 3 configuration, 4 file format, "
               "5 runtime. DPP_THREADS caps numeric thread pools.")
    p.add_argument("--config", help="JSON file with per-subcommand defaults")
    sub = p.add_subparsers(dest="cmd", required=True)

    g = sub.add_parser("gen-env", help="sample an environment to a file")
    g.add_argument("--spec", required=True, help="e.g. bernoulli:p=0.5")
    g.add_argument("--dims", required=True, help="e.g. 64x64")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.add_argument("--unconditioned", action="store_true",
                   help="do not condition on an occupied origin")
    g.add_argument("--lenient", action="store_true",
                   help="skip the strict two-points-per-line validation")

    w = sub.add_parser("walk", help="run a quenched walk ensemble")
    w.add_argument("--env", required=True)
    w.add_argument("--steps", type=int, required=True)
    w.add_argument("--walkers", type=int, default=100)
    w.add_argument("--seed", type=int, default=0)
    w.add_argument("--alpha", type=float, default=0.0,
                   help="gap-power transition weighting, 0 = uniform")
    w.add_argument("--out", default="run")

    h = sub.add_parser("heatkernel", help="exact n-step law diagnostics")
    h.add_argument("--env", required=True)
    h.add_argument("--steps", type=int, required=True)
    h.add_argument("--out", default="run")

    n = sub.add_parser("network", help="electrical-network diagnostics (d=2)")
    n.add_argument("--env", required=True)
    n.add_argument("--spec", help="process law for the conductance-law check")
    n.add_argument("--cutsets", type=int, default=0,
                   help="largest box radius (0 = auto)")
    n.add_argument("--law-samples", type=int, default=100000)
    n.add_argument("--seed", type=int, default=0)
    n.add_argument("--out", default="run")

    s = sub.add_parser("squeeze", help="squeeze a point set to its fixpoint")
    s.add_argument("--set", required=True, help="text file, one point per line")
    s.add_argument("--out", default="run")

    c = sub.add_parser("corrector", help="corrector assembly and diagnostics")
    c.add_argument("--env", required=True)
    c.add_argument("--tol", type=float, default=1e-9)
    c.add_argument("--out", default="run")

    t = sub.add_parser("clt", help="endpoint central-limit checks")
    t.add_argument("--d", type=int, required=True)
    t.add_argument("--spec", required=True)
    t.add_argument("--dims", required=True)
    t.add_argument("--steps", type=int, required=True)
    t.add_argument("--walkers", type=int, required=True)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--no-corrector", action="store_true",
                   help="test raw endpoints instead of embedded ones (d >= 2)")
    t.add_argument("--out", default="run")

    r = sub.add_parser("report", help="digest a run directory, with figures")
    r.add_argument("--dir", required=True)
    r.add_argument("--no-figures", action="store_true")

    v = sub.add_parser("validate", help="check an environment file")
    v.add_argument("--env", required=True)
    return p


def _merge_config(args: argparse.Namespace, argv: list[str]):
    """Config-file values fill in flags the command line left at default."""
    if not args.config:
        return args
    try:
        with open(args.config, "r", encoding="utf-8") as fh:
            cfg = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {args.config!r}: {exc}")
    section = cfg.get(args.cmd, {})
    if not isinstance(section, dict):
        raise ConfigError(f"config section {args.cmd!r} must be an object")
    given = {tok.split("=")[0].lstrip("-").replace("-", "_")
             for tok in argv if tok.startswith("--")}
    for key, val in section.items():
        attr = key.replace("-", "_")
        if not hasattr(args, attr):
            raise ConfigError(f"unknown config key {key!r} for {args.cmd!r}")
        if attr not in given:
            setattr(args, attr, val)
    return args


def _error_record(code: int, exc: Exception) -> int:
    rec = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
    print(json.dumps(rec), file=sys.stderr)
    return code


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    from . import corrector, env, heatkernel, network2d, walk
    try:
        threads = _thread_cap()
        args = _merge_config(args, argv)
        if args.cmd == "gen-env":
            return cmd_gen_env(args)
        if args.cmd == "walk":
            return cmd_walk(args, threads)
        if args.cmd == "heatkernel":
            return cmd_heatkernel(args, threads)
        if args.cmd == "network":
            return cmd_network(args, threads)
        if args.cmd == "squeeze":
            return cmd_squeeze(args, threads)
        if args.cmd == "corrector":
            return cmd_corrector(args, threads)
        if args.cmd == "clt":
            return cmd_clt(args, threads)
        if args.cmd == "report":
            return cmd_report(args)
        if args.cmd == "validate":
            return cmd_validate(args)
        raise ConfigError(f"unknown command {args.cmd!r}")
    except env.FormatError as exc:
        return _error_record(EXIT_FORMAT, exc)
    except (ConfigError, ValueError, KeyError) as exc:
        return _error_record(EXIT_CONFIG, exc)
    except FileNotFoundError as exc:
        return _error_record(EXIT_CONFIG, exc)
    except (env.EnvironmentError_, corrector.SolverError,
            heatkernel.MassDriftError, heatkernel.IdentityViolationError,
            network2d.WindowLimitError, network2d.UnsupportedDimensionError,
            walk.CouplingError, RuntimeError) as exc:
        return _error_record(EXIT_RUNTIME, exc)


if __name__ == "__main__":
    sys.exit(main())
