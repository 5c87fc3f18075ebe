"""Command-line interface.

Commands: ``ate``, ``vim``, ``rank``, ``simulate``, ``oracle`` and ``fd-check``.
Results go to ``--out`` (written atomically) or to stdout; diagnostics and
error objects go to stderr. Exit codes: 0 success, 2 usage or validation
error (including an invalid setting), 3 unreadable or malformed input, 4
computation failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys

from . import config as cfgmod
from .errors import ComputeError, ConfigError, InputError, YearsLostError
from .survdata import load_dataset

EXIT_OK, EXIT_USAGE, EXIT_INPUT, EXIT_COMPUTE = 0, 2, 3, 4
THREADS_ENV = "YEARSLOST_THREADS"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _ints(text):
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _names(text):
    return [v.strip() for v in text.split(",") if v.strip()]


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="yearslost", description="Causal effects on cause-specific years of "
                "life lost under competing risks.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp):
        sp.add_argument("--config", help="TOML configuration file")
        sp.add_argument("--seed", type=int, help="master seed")
        sp.add_argument("--out", help="output file (default: stdout)")
        sp.add_argument("--format", choices=("json", "csv"), default="json")
        sp.add_argument("--threads", type=int, help=f"worker cap (env {THREADS_ENV})")

    def estimation(sp):
        sp.add_argument("--data", required=True, help="CSV data file")
        sp.add_argument("--K", type=int, help="number of cross-fitting folds")
        sp.add_argument("--tstar", type=float, help="time horizon")
        sp.add_argument("--j", type=int, choices=(1, 2), help="cause of interest")
        sp.add_argument("--flavor", choices=("cor", "RF"), help="learner flavor")
        sp.add_argument("--eta", type=float, help="positivity floor")

    for name, text in (("ate", "average years-lost contrast"),
                       ("vim", "projection coefficient and test for one covariate"),
                       ("rank", "rank all covariates by the heterogeneity test")):
        sp = sub.add_parser(name, help=text)
        common(sp)
        estimation(sp)
        if name == "vim":
            sp.add_argument("--l", type=int, required=True, help="covariate, 1-based")

    sp = sub.add_parser("simulate", help="Monte Carlo study")
    common(sp)
    sp.add_argument("--methods", type=_names, help="comma list from cor,corCF,RF,RFCF")
    sp.add_argument("--n", type=_ints, help="comma list of sample sizes")
    sp.add_argument("--reps", type=int, help="replications per sample size")
    sp.add_argument("--coords", type=_ints, help="covariates to test, 1-based")
    sp.add_argument("--tstar", type=float)
    sp.add_argument("--j", type=int, choices=(1, 2))
    sp.add_argument("--mc-draws", type=int, help="oracle draws for the true value")
    sp.add_argument("--checkpoint", help="JSONL file for resuming")

    sp = sub.add_parser("oracle", help="true values under the simulation design")
    common(sp)
    sp.add_argument("--tstar", type=float)
    sp.add_argument("--j", type=int, choices=(1, 2))
    sp.add_argument("--mc-draws", type=int)

    sp = sub.add_parser("fd-check", help="finite-difference check of the influence function")
    common(sp)
    sp.add_argument("--data", required=True)
    sp.add_argument("--index", type=int, required=True, help="row, 0-based")
    sp.add_argument("--eps", type=float, default=1e-4)
    sp.add_argument("--tstar", type=float)
    sp.add_argument("--j", type=int, choices=(1, 2), default=1)
    return p


def _threads(args) -> int:
    raw = args.threads if args.threads is not None else os.environ.get(THREADS_ENV, 1)
    try:
        k = int(raw)
    except ValueError:
        raise UsageError(f"{THREADS_ENV} must be an integer") from None
    if k < 1:
        raise UsageError("threads must be at least 1")
    return k


def _emit(args, text: str) -> None:
    if args.out:
        tmp = f"{args.out}.tmp"
        with open(tmp, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, args.out)
    else:
        sys.stdout.write(text)


def _json(obj) -> str:
    def clean(v):
        if isinstance(v, float) and not math.isfinite(v):
            return None
        if isinstance(v, dict):
            return {k: clean(x) for k, x in v.items()}
        if isinstance(v, list):
            return [clean(x) for x in v]
        return v
    return json.dumps(clean(obj), indent=2) + "\n"


def _provenance_columns(prov) -> dict:
    return {"seed": prov["seed"], "config": json.dumps(prov, sort_keys=True)}


def _csv(header, rows, prov) -> str:
    """CSV text; the seed and the full provenance as JSON are appended to every row."""
    extra = _provenance_columns(prov)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(list(header) + list(extra))
    w.writerows(list(r) + list(extra.values()) for r in rows)
    return buf.getvalue()


REPORT_COLUMNS = ("estimand", "cause", "tstar", "point", "se", "ci_lower", "ci_upper",
                  "test_stat", "p_value")


def _crossfit(args, tree):
    return cfgmod.crossfit_config(tree, K=args.K, tstar=args.tstar, cause=args.j,
                                  eta=args.eta, seed=args.seed, flavor=args.flavor)


def _provenance(args, cfg_obj, threads):
    return {"command": args.command, "config": cfgmod.to_plain(cfg_obj),
            "seed": getattr(cfg_obj, "seed", args.seed), "threads": threads}


def cmd_estimate(args, tree, threads) -> str:
    from .estimators import estimate_ate, estimate_vim, rank_covariates

    cfg = _crossfit(args, tree)
    data = load_dataset(args.data, cfgmod.schema(tree))
    prov = _provenance(args, cfg, threads)
    if args.command == "ate":
        rep = estimate_ate(data, cfg)
        if args.format == "csv":
            d = rep.to_dict()
            return _csv(REPORT_COLUMNS, [[d[c] for c in REPORT_COLUMNS]], prov)
        return _json(dict(rep.to_dict(), provenance=prov))
    if args.command == "vim":
        if not 1 <= args.l <= data.d:
            raise UsageError(f"--l must lie in 1..{data.d}")
        rep = estimate_vim(data, cfg, args.l - 1)
        if args.format == "csv":
            d = rep.to_dict()
            cols = REPORT_COLUMNS + ("covariate", "gamma", "chi")
            return _csv(cols, [[d[c] for c in cols]], prov)
        return _json(dict(rep.to_dict(), provenance=prov))
    ranked, ate = rank_covariates(data, cfg, with_ate=True)
    if args.format == "csv":
        header = ("rank", "l", "covariate", "omega", "se", "tst", "p_value", "degenerate")
        rows = [[i + 1, r.l + 1, r.covariate, r.point, r.se, r.test_stat, r.p_value,
                 r.degenerate] for i, r in enumerate(ranked)]
        return _csv(header, rows, prov)
    return _json({"ate": ate.to_dict(), "ranking": [r.to_dict() for r in ranked],
                  "provenance": prov})


def cmd_oracle(args, tree, threads) -> str:
    from .simlab import true_values_oracle

    sim = cfgmod.sim_config(tree, args.tstar)
    draws = args.mc_draws or tree.get("oracle", {}).get("mc_draws", 100_000)
    seed = args.seed if args.seed is not None else tree.get("seed", 0)
    res = true_values_oracle(sim, sim.tstar, draws, seed, cause=args.j or 1)
    d = res.to_dict()
    d.pop("seconds")
    prov = {"command": "oracle", "config": cfgmod.to_plain(sim), "seed": seed,
            "threads": threads}
    if args.format == "csv":
        header = ["psi1", "psi1_se", "psi2", "psi2_se"] + [f"omega{l + 1}" for l in range(sim.d)]
        return _csv(header, [[d["psi"][0], d["psi_se"][0], d["psi"][1], d["psi_se"][1]]
                             + d["omega"]], prov)
    return _json(dict(d, provenance=prov))


def cmd_simulate(args, tree, threads) -> str:
    from .simlab import run_monte_carlo, standard_method, true_values_oracle

    sim = cfgmod.sim_config(tree, args.tstar)
    spec = tree.get("simulate", {})
    methods = args.methods or spec.get("methods", ["corCF"])
    ns = args.n or spec.get("n", [500])
    reps = args.reps or spec.get("reps", 100)
    coords = [c - 1 for c in (args.coords or spec.get("coords", []))]
    if any(not 0 <= c < sim.d for c in coords):
        raise UsageError(f"--coords must lie in 1..{sim.d}")
    cause = args.j or 1
    learners = cfgmod.learner_config(tree)
    seed = args.seed if args.seed is not None else tree.get("seed", 0)
    draws = args.mc_draws or tree.get("oracle", {}).get("mc_draws", 100_000)
    truth = true_values_oracle(sim, sim.tstar, draws, seed, cause=cause)
    ms = [standard_method(m, tstar=sim.tstar, cause=cause, coords=coords,
                          forest=learners.forest, eta=learners.eta) for m in methods]
    summary = run_monte_carlo(sim, ms, ns, reps, seed, truth=truth, checkpoint=args.checkpoint,
                              progress=lambda n, r: print(f"n={n} rep={r}", file=sys.stderr))
    prov = {"command": "simulate", "config": cfgmod.to_plain(sim), "seed": seed,
            "methods": [cfgmod.to_plain(m) for m in ms], "threads": threads}
    if args.format == "csv":
        return summary.csv_text(_provenance_columns(prov))
    return _json(dict(summary.to_dict(), provenance=prov))


def cmd_fd_check(args, tree, threads) -> str:
    from .eif import gateaux_fd_check

    data = load_dataset(args.data, cfgmod.schema(tree))
    if not 0 <= args.index < data.n:
        raise UsageError(f"--index must lie in 0..{data.n - 1}")
    tstar = args.tstar if args.tstar is not None else float(data.time.max())
    fd, eif, gap = gateaux_fd_check(data, args.index, args.eps, cause=args.j, tstar=tstar)
    prov = {"command": "fd-check", "config": {"eps": args.eps, "cause": args.j, "tstar": tstar,
                                              "index": args.index},
            "seed": None, "threads": threads}
    if args.format == "csv":
        return _csv(("index", "eps", "fd", "eif", "gap"), [[args.index, args.eps, fd, eif, gap]],
                    prov)
    return _json({"index": args.index, "eps": args.eps, "cause": args.j, "tstar": tstar,
                  "fd": fd, "eif": eif, "gap": gap, "provenance": prov})


COMMANDS = {"ate": cmd_estimate, "vim": cmd_estimate, "rank": cmd_estimate,
            "simulate": cmd_simulate, "oracle": cmd_oracle, "fd-check": cmd_fd_check}


def _fail(exc, code) -> int:
    err = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
    sys.stderr.write(json.dumps(err) + "\n")
    return code


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        threads = _threads(args)
        tree = cfgmod.load_config(args.config)
        text = COMMANDS[args.command](args, tree, threads)
        _emit(args, text)
        return EXIT_OK
    except (UsageError, ConfigError, ValueError) as exc:
        return _fail(exc, EXIT_USAGE)
    except (InputError, OSError) as exc:
        return _fail(exc, EXIT_INPUT)
    except (ComputeError, YearsLostError) as exc:
        return _fail(exc, EXIT_COMPUTE)


if __name__ == "__main__":
    sys.exit(main())
