"""Command-line entry point: ``dynsbm <subcommand> ...``.

Exit codes are shared by every subcommand: 0 success or verdict satisfied,
1 verdict not satisfied, 2 usage or I/O error.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .core import SCENARIOS, LabelPermutation, ModelParams, load_params, scenario_preset
from .identify import (
    RANK_REL_TOL,
    best_permutation,
    build_conditional_matrix,
    check_conditions,
    joint_consecutive_edge_distribution,
    kron_power,
    minimal_m_search,
    recover_static_params,
    recover_transitions_via_hmm,
    recover_transitions_via_phi,
)
from .inference import FitConfig, align_labels, estimate_rows, fit, write_estimates_csv
from .simulate import load_network, sample_network, save_sim
from .svg import box_stats, write_boxplot

logger = logging.getLogger("dynsbm")

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2
THEOREMS = {"T1": "theorem1", "T2": "theorem2", "T3": "theorem3", "corollary": "corollary"}


class UsageError(Exception):
    pass


# --------------------------------------------------------------------------
# helpers


def _write_json(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _params_from_args(args) -> ModelParams:
    if getattr(args, "params", None):
        return load_params(args.params)
    if getattr(args, "scenario", None):
        return scenario_preset(args.scenario)
    raise UsageError("give --scenario or --params")


def _child_seed(seed: int, *key: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(seed, spawn_key=tuple(key))


def _fit_seed(ss: np.random.SeedSequence) -> int:
    return int(ss.generate_state(1, dtype=np.uint32)[0])


def _fit_config(args, Q: int, homogeneous: bool, seed: int) -> FitConfig:
    return FitConfig(
        Q=Q,
        homogeneous=homogeneous,
        n_restarts=args.restarts,
        max_outer_iterations=args.max_iter,
        elbo_rel_tol=args.tol,
        init_strategy=args.init,
        seed=seed,
    )


def _out_dir(args) -> Path:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


# --------------------------------------------------------------------------
# subcommands


def cmd_simulate(args) -> int:
    params = _params_from_args(args)
    if args.T is not None:
        params = params.truncate(args.T)
    if args.n < 2:
        raise UsageError("--n must be at least 2")
    if args.replicates < 1:
        raise UsageError("--replicates must be positive")
    out = _out_dir(args)
    for r in range(args.replicates):
        sim = sample_network(params, args.n, _child_seed(args.seed, r))
        path = out / f"sim_{r:03d}.json"
        save_sim(sim, path, include_latent=not args.no_latent)
        print(f"wrote {path}")
    return EXIT_OK


def cmd_fit(args) -> int:
    network, _ = load_network(args.input)
    config = _fit_config(args, args.Q, not args.inhomogeneous, args.seed)
    result = fit(network, config, jobs=args.jobs)
    out = _out_dir(args)
    stem = Path(args.input).stem
    _write_json(out / f"{stem}_fit.json", result.to_dict())
    write_estimates_csv(estimate_rows(result.params_hat), out / f"{stem}_estimates.csv")
    print(f"elbo {result.elbo:.6f} after {result.n_iterations} iterations, converged={result.converged}")
    print(f"wrote {out / f'{stem}_fit.json'} and {out / f'{stem}_estimates.csv'}")
    return EXIT_OK


def _rank_cell(args):
    Q, kappa, trials, m_max, rel_tol, seed = args
    return minimal_m_search(Q, kappa, trials, m_max=m_max, rel_tol=rel_tol, seed=_child_seed(seed, Q, kappa))


def cmd_rank_table(args) -> int:
    if args.trials < 1:
        raise UsageError("--trials must be positive")
    cells = [(Q, k) for Q in args.Q for k in args.kappa]
    jobs = [(Q, k, args.trials, args.m_max, args.rel_tol, args.seed) for Q, k in cells]
    if args.jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            found = list(pool.map(_rank_cell, jobs))
    else:
        found = [_rank_cell(j) for j in jobs]
    table = dict(zip(cells, found))

    out = _out_dir(args)
    path = out / "rank_table.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["Q", "kappa", "minimal_m", "trials", "rel_tol"])
        for (Q, k), m in table.items():
            w.writerow([Q, k, "--" if m is None else m, args.trials, repr(args.rel_tol)])

    print("Q\\kappa " + " ".join(f"{k:>3}" for k in args.kappa))
    for Q in args.Q:
        print(f"{Q:>7} " + " ".join(f"{'--' if table[(Q, k)] is None else table[(Q, k)]:>3}" for k in args.kappa))
    print(f"wrote {path}")
    return EXIT_OK


def cmd_identify(args) -> int:
    params = _params_from_args(args)
    report = check_conditions(params, args.n, args.m)
    out = _out_dir(args)
    path = out / "ident_report.json"
    _write_json(path, report.to_dict())
    verdicts = report.verdicts
    for th, v in verdicts.items():
        print(f"{th:<10} {'n/a' if v is None else ('satisfied' if v else 'not satisfied')}")
    for h in report.hypotheses:
        if not h.satisfied:
            print(f"  failed: {h.name} ({', '.join(h.theorems)})")
    print(f"wrote {path}")
    if args.theorem == "any":
        ok = any(v for v in verdicts.values())
    else:
        ok = bool(verdicts[THEOREMS[args.theorem]])
    return EXIT_OK if ok else EXIT_FAIL


def _replicate_job(payload):
    params, Q, homogeneous, n, seed, r, fit_kw = payload
    ss = _child_seed(seed, r)
    sim_ss, fit_ss = ss.spawn(2)
    sim = sample_network(params, n, sim_ss)
    config = FitConfig(Q=Q, homogeneous=homogeneous, seed=_fit_seed(fit_ss), **fit_kw)
    return fit(sim.network, config)


def _group_series(rows_by_rep):
    """Collect per-entry estimates across replicates, keyed by output group."""
    groups: dict[str, dict] = {}
    for rows in rows_by_rep:
        for row in rows:
            if row["group"] == "alignment":
                continue
            if row["group"] == "pi":
                g = "pi"
                label = f"pi{row['q']}"
            elif row["group"] == "rho":
                g = "rho" if row["t"] == "" else f"rho_t{row['t']}"
                label = f"rho{row['q']}{row['l']}"
            else:
                g = f"bp_t{row['t']}"
                label = f"bp{row['q']}{row['l']}({row['x']})"
            entry = groups.setdefault(g, {}).setdefault(label, {"estimates": [], "truth": None})
            entry["estimates"].append(float(row["estimate"]))
            if row["truth"] != "":
                entry["truth"] = float(row["truth"])
    return groups


def cmd_experiment(args) -> int:
    truth = _params_from_args(args)
    if args.T is not None:
        truth = truth.truncate(args.T)
    if args.n < 2:
        raise UsageError("--n must be at least 2")
    if args.replicates < 1:
        raise UsageError("--replicates must be positive")
    Q = truth.Q if args.Q is None else args.Q
    if Q != truth.Q:
        raise UsageError("alignment against the truth needs --Q equal to the true number of states")
    homogeneous = truth.homogeneous and not args.inhomogeneous
    fit_kw = {
        "n_restarts": args.restarts,
        "max_outer_iterations": args.max_iter,
        "elbo_rel_tol": args.tol,
        "init_strategy": args.init,
    }
    start = time.perf_counter()
    payloads = [(truth, Q, homogeneous, args.n, args.seed, r, fit_kw) for r in range(args.replicates)]
    if args.jobs > 1 and args.replicates > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_replicate_job, payloads))
    else:
        results = [_replicate_job(p) for p in payloads]

    rows_by_rep, replicates = [], []
    for r, res in enumerate(results):
        aligned, sigma = align_labels(res.params_hat, truth)
        total = res.alignment.then(sigma)
        rows = estimate_rows(aligned, truth, replicate=r)
        for q, s in enumerate(total.one_based()):
            rows.append(
                {"replicate": r, "group": "alignment", "t": "", "q": q + 1, "l": "", "x": "", "estimate": s, "truth": ""}
            )
        rows_by_rep.append(rows)
        replicates.append(
            {
                "replicate": r,
                "elbo": res.elbo,
                "n_iterations": res.n_iterations,
                "converged": res.converged,
                "permutation": total.one_based(),
                "empty_cells": [list(c) for c in res.empty_cells],
            }
        )

    out = _out_dir(args)
    write_estimates_csv([row for rows in rows_by_rep for row in rows], out / "estimates.csv")
    groups = _group_series(rows_by_rep)
    summary = {
        "config": {
            "scenario": args.scenario,
            "params": str(args.params) if args.params else None,
            "n": args.n,
            "T": truth.T,
            "Q": Q,
            "n_replicates": args.replicates,
            "homogeneous": homogeneous,
            "seed": args.seed,
            "fit": fit_kw,
        },
        "replicates": replicates,
        "converged": sum(r["converged"] for r in replicates),
        "groups": {},
    }
    for g, entries in groups.items():
        labels = list(entries)
        series = [entries[k]["estimates"] for k in labels]
        truths = [entries[k]["truth"] for k in labels]
        doc = {}
        for label, s, tv in zip(labels, series, truths):
            st = box_stats(s)
            doc[label] = {
                "estimates": s,
                "truth": tv,
                "quartiles": [st.q1, st.median, st.q3],
                "median_abs_error": None if tv is None else float(np.median(np.abs(np.asarray(s) - tv))),
            }
        summary["groups"][g] = doc
        write_boxplot(out / f"{g}.svg", series, labels, truths, title=f"{g} (n={args.n}, {args.replicates} networks)")
    _write_json(out / "summary.json", summary)
    _write_json(out / "timing.json", {"elapsed_seconds": time.perf_counter() - start})

    for g, doc in summary["groups"].items():
        errs = [v["median_abs_error"] for v in doc.values() if v["median_abs_error"] is not None]
        if errs:
            print(f"{g:<8} max median abs error {max(errs):.4f}")
    print(f"converged {summary['converged']}/{args.replicates}; wrote {out}")
    return EXIT_OK


def cmd_recover_demo(args) -> int:
    params = _params_from_args(args)
    try:
        return _recover(params, args)
    except ValueError as exc:
        print(f"recovery failed: {exc}")
        return EXIT_FAIL


def _recover(params, args) -> int:
    sigma = LabelPermutation.identity(params.Q)
    if args.method == "phi":
        t0 = 1 if args.t0 is None else args.t0
        joint = joint_consecutive_edge_distribution(params, t0)
        rec = recover_transitions_via_phi(joint, params.edge_probs[t0 - 1], params.edge_probs[t0], params.state_law(t0))
        err = float(np.max(np.abs(rec.rho - params.transition(t0 + 1))))
        print(f"recovered rho^{t0 + 1} from the consecutive edge law at t0={t0}; residual {rec.residual:.3g}")
    elif args.method == "hmm":
        t0 = 2 if args.t0 is None else args.t0
        rec = recover_transitions_via_hmm(params, args.m, t0)
        err = float(np.max(np.abs(rec.rho - params.transition(t0 + 1))))
        print(f"recovered rho^{t0 + 1} with m={args.m}; Kronecker residual {rec.residual:.3g}")
    else:
        t = 1 if args.t0 is None else args.t0
        cmat = build_conditional_matrix(params.edge_probs[t - 1], args.m)
        lam = kron_power(params.state_law(t), args.m)
        order = np.random.default_rng(args.seed).permutation(lam.size)
        shuffled = type(cmat)(cmat.m, cmat.Q, cmat.kappa, cmat.data[order])
        rec = recover_static_params(shuffled, lam[order], args.m)
        sigma, err = best_permutation(rec.pi, rec.edge_probs, params.state_law(t), params.edge_probs[t - 1])
        print(f"recovered pi and edge laws at t={t} from a row-shuffled conditional matrix, m={args.m}")
    print(f"max abs error {err:.3e}")
    print("label permutation " + " ".join(str(s) for s in sigma.one_based()))
    return EXIT_OK if err < args.tol else EXIT_FAIL


# --------------------------------------------------------------------------
# parser


def _add_params_source(p):
    src = p.add_mutually_exclusive_group()
    src.add_argument("--scenario", choices=SCENARIOS)
    src.add_argument("--params", type=Path, help="model parameter JSON file")


def _add_fit_options(p):
    p.add_argument("--restarts", type=int, default=25)
    p.add_argument("--max-iter", type=int, default=100)
    p.add_argument("--tol", type=float, default=1e-6, help="relative ELBO change for convergence")
    p.add_argument("--init", choices=("random", "spectral"), default="spectral")


def build_parser() -> argparse.ArgumentParser:
    shared = argparse.ArgumentParser(add_help=False)
    shared.add_argument("--seed", type=int, default=0)
    shared.add_argument("--jobs", type=int, default=os.cpu_count() or 1)
    shared.add_argument("--out-dir", default=".")
    shared.add_argument("--config", type=Path, help="JSON file of option defaults; command-line flags win")
    shared.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="dynsbm", description="Dynamic stochastic block model toolkit.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[shared], help="simulate networks from a parameter set")
    _add_params_source(p)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--T", type=int, help="keep only the first T time points")
    p.add_argument("--replicates", type=int, default=1)
    p.add_argument("--no-latent", action="store_true", help="omit latent states from the output")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit", parents=[shared], help="variational EM on a network file")
    p.add_argument("input", type=Path)
    p.add_argument("--Q", type=int, required=True)
    p.add_argument("--inhomogeneous", action="store_true", help="one transition matrix per time step")
    _add_fit_options(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("rank-table", parents=[shared], help="minimal m for full row rank of C")
    p.add_argument("--Q", type=int, nargs="+", default=[2, 3, 4, 5])
    p.add_argument("--kappa", type=int, nargs="+", default=list(range(2, 11)))
    p.add_argument("--trials", type=int, default=20)
    p.add_argument("--m-max", type=int, default=None)
    p.add_argument("--rel-tol", type=float, default=RANK_REL_TOL)
    p.set_defaults(func=cmd_rank_table)

    p = sub.add_parser("identify", parents=[shared], help="check identification hypotheses")
    _add_params_source(p)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--m", type=int, default=3)
    p.add_argument("--theorem", choices=("any", *THEOREMS), default="any")
    p.set_defaults(func=cmd_identify)

    p = sub.add_parser("experiment", parents=[shared], help="simulate, fit and summarize replicates")
    _add_params_source(p)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--T", type=int)
    p.add_argument("--replicates", type=int, default=10)
    p.add_argument("--Q", type=int)
    p.add_argument("--inhomogeneous", action="store_true")
    _add_fit_options(p)
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("recover-demo", parents=[shared], help="exact parameter recovery round trips")
    _add_params_source(p)
    p.add_argument("--method", choices=("phi", "hmm", "static"), required=True)
    p.add_argument("--m", type=int, default=3)
    p.add_argument("--t0", type=int, help="time point (phi, hmm: first of the pair; static: snapshot)")
    p.add_argument("--tol", type=float, default=1e-8, help="error below which the demo passes")
    p.set_defaults(func=cmd_recover_demo)
    return parser


def _subparsers(parser) -> dict:
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            return action.choices
    return {}


def _apply_config(parser, argv):
    """Parse ``argv`` with defaults taken from ``--config``; explicit flags still win."""
    argv = list(sys.argv[1:] if argv is None else argv)
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config", type=Path)
    known, _ = pre.parse_known_args(argv)
    subs = _subparsers(parser)
    command = next((a for a in argv if a in subs), None)
    if known.config is not None and command is not None:
        doc = json.loads(Path(known.config).read_text())
        if not isinstance(doc, dict):
            raise UsageError("config file must hold a JSON object")
        sub = subs[command]
        actions = {a.dest: a for a in sub._actions}
        defaults = {}
        for key, value in doc.items():
            dest = key.replace("-", "_")
            if dest not in actions or dest in ("config", "help"):
                raise UsageError(f"unknown config option {key!r} for {command}")
            if isinstance(value, str) and actions[dest].type is not None:
                value = actions[dest].type(value)
            defaults[dest] = value
            actions[dest].required = False
        sub.set_defaults(**defaults)
    return parser.parse_args(argv)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = _apply_config(parser, argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
        return args.func(args)
    except SystemExit as exc:
        return int(exc.code) if isinstance(exc.code, int) else EXIT_USAGE
    except (UsageError, OSError, ValueError, MemoryError) as exc:
        print(f"dynsbm: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
