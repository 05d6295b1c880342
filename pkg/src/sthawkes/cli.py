"""Command line front end.

Subcommands: simulate, fit, eval, bound, tune, reproduce.  Every command
is deterministic given its config and seeds, writes outputs atomically
(temp file then rename), and reports failures as a single JSON line on
stderr with exit code 2 for usage or config problems and 3 for numerical
failures.
"""

import argparse
import concurrent.futures
import dataclasses
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import estimate as es
from . import pipeline as pl
from . import simulate as sm
from . import theory as th
from .errors import NumericalError
from .model import BinCounts, FeasibleSet, HawkesParams

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3

# operating points for synthetic and real-event data
SYNTH_RHO_TNN = 0.0065
SYNTH_RHO_MLE = 0.001
SYNTH_TAU = 0.5
REAL_RHO = 0.003
REAL_TAU = 1.5

SIM_DEFAULTS = {
    "delta": 0.01,
    "alpha": 1.0,
    "stability_target": 0.9,
    "mean_bin_rate": 0.5,
}
DEFAULT_MAX_OUTER = 5000
DEFAULT_TOL = 1e-3


class CliError(Exception):
    """Usage or configuration problem with an exit code attached."""

    def __init__(self, code, message):
        super().__init__(message)
        self.code = code


def _notice(message):
    print(f"notice: {message}", file=sys.stderr)


def _atomic_write_text(path, text):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + f".tmp{os.getpid()}")
    tmp.write_text(text)
    os.replace(tmp, path)


def _atomic_write_via(path, writer):
    """Run a path-taking writer against a temp file, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + f".tmp{os.getpid()}")
    writer(tmp)
    os.replace(tmp, path)


@dataclasses.dataclass(frozen=True)
class RunConfig:
    """Parsed config file: the three sections plus run bookkeeping."""

    sim: dict
    admm: dict
    discretization: dict
    out: str | None = None
    seeds: tuple = (0,)

    @classmethod
    def from_path(cls, path):
        if path is None:
            return cls(sim={}, admm={}, discretization={})
        p = Path(path)
        if not p.exists():
            raise CliError(EXIT_CONFIG, f"config file not found: {path}")
        try:
            raw = json.loads(p.read_text())
        except json.JSONDecodeError as exc:
            raise CliError(EXIT_CONFIG, f"config is not valid JSON: {exc}")
        if not isinstance(raw, dict):
            raise CliError(EXIT_CONFIG, "config root must be a JSON object")
        known = {"sim", "admm", "discretization", "out", "seeds"}
        for key in raw:
            if key not in known:
                raise CliError(EXIT_CONFIG, f"unknown config section: {key}")
        seeds = raw.get("seeds", [0])
        if not isinstance(seeds, list) or not seeds:
            raise CliError(EXIT_CONFIG, "seeds must be a nonempty list")
        return cls(
            sim=raw.get("sim", {}),
            admm=raw.get("admm", {}),
            discretization=raw.get("discretization", {}),
            out=raw.get("out"),
            seeds=tuple(int(s) for s in seeds),
        )


def _build_sim_config(section, seed):
    merged = dict(SIM_DEFAULTS)
    known = {"n1", "n2", "p", "K", "delta", "alpha", "stability_target",
             "mean_bin_rate", "seed"}
    for key, val in section.items():
        if key not in known:
            raise CliError(EXIT_CONFIG, f"unknown sim config field: {key}")
        merged[key] = val
    for req in ("n1", "n2", "p", "K"):
        if req not in merged:
            raise CliError(EXIT_CONFIG, f"sim config missing required field: {req}")
    if seed is not None:
        merged["seed"] = seed
    merged.setdefault("seed", 0)
    try:
        return sm.SimConfig(**merged)
    except (TypeError, ValueError) as exc:
        raise CliError(EXIT_CONFIG, f"invalid sim config: {exc}")


def _build_feasible_set(section):
    if not isinstance(section, dict) or not section:
        raise CliError(
            EXIT_CONFIG, "admm config needs an fs section with a1, b1, a2, b2, gamma"
        )
    known = {"a1", "b1", "a2", "b2", "gamma"}
    for key in section:
        if key not in known:
            raise CliError(EXIT_CONFIG, f"unknown fs config field: {key}")
    try:
        return FeasibleSet(**section)
    except (TypeError, ValueError) as exc:
        raise CliError(EXIT_CONFIG, f"invalid fs config: {exc}")


def _build_admm_config(section, mode, real_data):
    known = {"rho", "tau", "max_outer", "max_inner_mm", "tol_primal",
             "tol_dual", "fs"}
    for key in section:
        if key not in known:
            raise CliError(EXIT_CONFIG, f"unknown admm config field: {key}")
    fs = _build_feasible_set(section.get("fs"))
    if mode == "MLE" and "tau" in section:
        _notice("--mode mle ignores tau")
    if real_data:
        rho = section.get("rho", REAL_RHO)
        tau = section.get("tau", REAL_TAU)
    else:
        rho = section.get("rho", SYNTH_RHO_TNN if mode == "TNN" else SYNTH_RHO_MLE)
        tau = section.get("tau", SYNTH_TAU)
    if mode == "MLE":
        tau = 0.0
    try:
        return es.AdmmConfig(
            rho=float(rho),
            tau=float(tau),
            fs=fs,
            max_outer=int(section.get("max_outer", DEFAULT_MAX_OUTER)),
            max_inner_mm=int(section.get("max_inner_mm", 30)),
            tol_primal=float(section.get("tol_primal", DEFAULT_TOL)),
            tol_dual=float(section.get("tol_dual", DEFAULT_TOL)),
            mode=mode,
        )
    except (TypeError, ValueError) as exc:
        raise CliError(EXIT_CONFIG, f"invalid admm config: {exc}")


def _build_discretization(section):
    known = {"x0", "y0", "t0", "dx", "dy", "dt", "n1", "n2", "K", "p"}
    for key in section:
        if key not in known:
            raise CliError(EXIT_CONFIG, f"unknown discretization field: {key}")
    missing = known - set(section)
    if missing:
        raise CliError(
            EXIT_CONFIG,
            f"discretization missing fields: {', '.join(sorted(missing))}",
        )
    try:
        return pl.DiscretizationSpec(**section)
    except (TypeError, ValueError) as exc:
        raise CliError(EXIT_CONFIG, f"invalid discretization config: {exc}")


def _load_counts(args, cfg):
    """BinCounts from --data, or from --events via the discretization
    section.  Returns (counts, came_from_events)."""
    if args.data is not None and args.events is not None:
        raise CliError(EXIT_CONFIG, "give either --data or --events, not both")
    if args.data is not None:
        path = Path(args.data)
        if not path.exists():
            raise CliError(EXIT_CONFIG, f"data file not found: {args.data}")
        try:
            return BinCounts.load(path), False
        except ValueError as exc:
            raise CliError(EXIT_CONFIG, f"bad counts file: {exc}")
    if args.events is not None:
        path = Path(args.events)
        if not path.exists():
            raise CliError(EXIT_CONFIG, f"events file not found: {args.events}")
        spec = _build_discretization(cfg.discretization)
        try:
            records, malformed = pl.load_events(path)
        except ValueError as exc:
            raise CliError(EXIT_CONFIG, f"bad events file: {exc}")
        if malformed:
            _notice(f"skipped {malformed} malformed event rows")
        counts, dropped = pl.discretize(records, spec)
        if dropped:
            _notice(f"dropped {dropped} events outside the grid")
        return counts, True
    raise CliError(EXIT_CONFIG, "a --data or --events input is required")


def _out_dir(args, cfg):
    out = args.out or cfg.out
    if out is None:
        raise CliError(EXIT_CONFIG, "an --out directory is required")
    return Path(out)


def _fmt(v) -> str:
    return repr(float(v))


def cmd_simulate(args):
    cfg = RunConfig.from_path(args.config)
    out = _out_dir(args, cfg)
    scfg = _build_sim_config(cfg.sim, args.seed)
    truth, provenance = sm.generate_truth(scfg)
    Z = sm.simulate(truth, scfg)
    _atomic_write_via(out / "truth.json", truth.save)
    _atomic_write_via(out / "counts.txt", Z.save)
    _atomic_write_text(
        out / "provenance.json", json.dumps(provenance, sort_keys=True) + "\n"
    )
    print(json.dumps({
        "truth": str(out / "truth.json"),
        "counts": str(out / "counts.txt"),
        "provenance": str(out / "provenance.json"),
    }, sort_keys=True))
    return EXIT_OK


def cmd_fit(args):
    cfg = RunConfig.from_path(args.config)
    out = _out_dir(args, cfg)
    Z, real_data = _load_counts(args, cfg)
    mode = args.mode.upper()
    acfg = _build_admm_config(cfg.admm, mode, real_data)
    state = None
    if args.resume is not None:
        if not Path(args.resume).exists():
            raise CliError(EXIT_CONFIG, f"checkpoint not found: {args.resume}")
        state, _ = es.load_checkpoint(args.resume)
    ckpt_path = args.checkpoint
    est, rep = es.fit(
        Z, acfg, state=state,
        checkpoint_path=ckpt_path,
        checkpoint_every=args.checkpoint_every if ckpt_path else 0,
    )
    _atomic_write_via(out / "model.json", est.save)
    _atomic_write_via(out / "report.csv", rep.save_csv)
    meta = {
        "mode": mode,
        "converged": rep.converged,
        "iterations": rep.iterations,
        "start_iter": rep.start_iter,
        "tnn_value": rep.tnn_value,
        "tnn_radius": rep.tnn_radius,
        "wall_time": rep.wall_time,
    }
    _atomic_write_text(out / "meta.json", json.dumps(meta, sort_keys=True) + "\n")
    print(json.dumps({
        "model": str(out / "model.json"),
        "report": str(out / "report.csv"),
        "converged": rep.converged,
        "iterations": rep.iterations,
    }, sort_keys=True))
    return EXIT_OK


METRICS_HEADER = "method,Merr,Gerr,FRQ1,FRQ_avg,NLR"


def cmd_eval(args):
    cfg = RunConfig.from_path(args.config)
    out = _out_dir(args, cfg)
    if not Path(args.model).exists():
        raise CliError(EXIT_CONFIG, f"model file not found: {args.model}")
    params = HawkesParams.load(args.model)
    if args.truth is None and args.test is None:
        raise CliError(EXIT_CONFIG, "eval needs --truth and/or --test")
    merr_s = gerr_s = frq1_s = frqa_s = nlr_s = ""
    if args.truth is not None:
        if not Path(args.truth).exists():
            raise CliError(EXIT_CONFIG, f"truth file not found: {args.truth}")
        truth = HawkesParams.load(args.truth)
        merr_s = _fmt(pl.merr(truth.mu, params.mu))
        gerr_s = _fmt(pl.gerr(truth.G, params.G))
    if args.test is not None:
        if not Path(args.test).exists():
            raise CliError(EXIT_CONFIG, f"test file not found: {args.test}")
        test = BinCounts.load(args.test)
        history = test.history
        seed = args.seed if args.seed is not None else 0
        pred1 = pl.predict_counts(params, history, test.K, 1, seed, test.delta)
        preda = pl.predict_counts(params, history, test.K, args.nsim, seed,
                                  test.delta)
        frq1_s = _fmt(pl.frq(pred1, test))
        frqa_s = _fmt(pl.frq(preda, test))
        nlr_s = _fmt(pl.nlr(params, test))
    row = ",".join([args.method, merr_s, gerr_s, frq1_s, frqa_s, nlr_s])
    _atomic_write_text(out / "metrics.csv", METRICS_HEADER + "\n" + row + "\n")
    print(json.dumps({"metrics": str(out / "metrics.csv")}, sort_keys=True))
    return EXIT_OK


def cmd_bound(args):
    cfg = RunConfig.from_path(args.config)
    out = _out_dir(args, cfg)
    Z, _ = _load_counts(args, cfg)
    fs = _build_feasible_set(cfg.admm.get("fs"))
    try:
        inp = th.BoundInputs(fs=fs, Z=Z, alpha1=args.alpha1, alpha2=args.alpha2)
    except ValueError as exc:
        raise CliError(EXIT_CONFIG, f"invalid bound inputs: {exc}")
    if args.variant == "theorem3":
        rep = th.bound_theorem3(inp)
        _atomic_write_text(out / "bound.json", rep.to_json() + "\n")
        value = rep.bound_value
    elif args.variant == "corollary1":
        value = th.bound_corollary1(inp)
        payload = {"variant": "corollary1", "value": value,
                   "confidence": 1.0 - args.alpha1 - args.alpha2}
        _atomic_write_text(
            out / "bound.json", json.dumps(payload, indent=2, sort_keys=True) + "\n"
        )
    else:
        if args.c1 is None or args.c2 is None:
            raise CliError(EXIT_CONFIG, "remark2 needs --c1 and --c2")
        value = th.bound_remark2(args.c1, args.c2, inp)
        payload = {"variant": "remark2", "value": value,
                   "c1": args.c1, "c2": args.c2}
        _atomic_write_text(
            out / "bound.json", json.dumps(payload, indent=2, sort_keys=True) + "\n"
        )
    print(json.dumps({"bound": str(out / "bound.json"), "value": value},
                     sort_keys=True))
    return EXIT_OK


def cmd_tune(args):
    cfg = RunConfig.from_path(args.config)
    out = _out_dir(args, cfg)
    Z, real_data = _load_counts(args, cfg)
    acfg = _build_admm_config(cfg.admm, "TNN", real_data)
    try:
        grid = [float(x) for x in args.grid.split(",") if x.strip() != ""]
    except ValueError:
        raise CliError(EXIT_CONFIG, f"bad tau grid: {args.grid}")
    if not grid:
        raise CliError(EXIT_CONFIG, "tau grid is empty")
    if not 0.0 < args.holdout < 1.0:
        raise CliError(EXIT_CONFIG, "holdout must lie in (0, 1)")
    best = es.tune_tau(Z, acfg, grid, args.holdout)
    payload = {"tau": best, "grid": grid, "holdout": args.holdout}
    _atomic_write_text(
        out / "tuned.json", json.dumps(payload, sort_keys=True) + "\n"
    )
    print(json.dumps({"tau": best}, sort_keys=True))
    return EXIT_OK


def _run_seed(base_seed, n1, n2, p, K, run):
    seq = np.random.SeedSequence([int(base_seed), n1, n2, p, K, run])
    return int(seq.generate_state(1)[0])


def _reproduce_one(case, K, run, base_seed, sim_over, admm_over):
    """One (case, K, run) cell: simulate, fit both ways, measure errors."""
    n1, n2, p = case
    merged = dict(SIM_DEFAULTS)
    merged.update(sim_over)
    scfg = sm.SimConfig(n1=n1, n2=n2, p=p, K=K,
                        seed=_run_seed(base_seed, n1, n2, p, K, run), **merged)
    truth, _ = sm.generate_truth(scfg)
    Z = sm.simulate(truth, scfg)
    fs = sm.truth_feasible_set(truth)
    shared = dict(
        fs=fs,
        max_outer=int(admm_over.get("max_outer", DEFAULT_MAX_OUTER)),
        tol_primal=float(admm_over.get("tol_primal", DEFAULT_TOL)),
        tol_dual=float(admm_over.get("tol_dual", DEFAULT_TOL)),
    )
    result = {}
    for method, rho, tau, mode in (
        ("TNN", float(admm_over.get("rho_tnn", SYNTH_RHO_TNN)),
         float(admm_over.get("tau", SYNTH_TAU)), "TNN"),
        ("MLE", float(admm_over.get("rho_mle", SYNTH_RHO_MLE)), 0.0, "MLE"),
    ):
        acfg = es.AdmmConfig(rho=rho, tau=tau, mode=mode, **shared)
        est, _ = es.fit(Z, acfg)
        result[method] = (pl.gerr(truth.G, est.G), pl.merr(truth.mu, est.mu))
    return result


SUPPORTED_CASES = ((4, 4, 5), (4, 4, 7), (5, 5, 5), (5, 5, 7))


def _parse_case(text):
    try:
        parts = [int(x) for x in text.split(",")]
    except ValueError:
        raise CliError(EXIT_CONFIG, f"bad case (want n1,n2,p): {text}")
    if len(parts) != 3 or any(v < 1 for v in parts):
        raise CliError(EXIT_CONFIG, f"bad case (want n1,n2,p): {text}")
    case = tuple(parts)
    if case not in SUPPORTED_CASES:
        names = " ".join("{},{},{}".format(*c) for c in SUPPORTED_CASES)
        raise CliError(EXIT_CONFIG, f"unsupported case {text}; supported: {names}")
    return case


def _read_table(path):
    rows = {}
    lines = Path(path).read_text().splitlines()
    for line in lines[1:]:
        case, method, K, g, m = line.split(",")
        rows[(case, int(K), method)] = (g, m)
    return rows


REPRODUCE_HEADER = "case,method,K,Gerr,Merr"


def cmd_reproduce(args):
    cfg = RunConfig.from_path(args.config)
    out = _out_dir(args, cfg)
    cases = [_parse_case(c) for c in args.case]
    try:
        K_list = [int(x) for x in args.K_list.split(",") if x.strip() != ""]
    except ValueError:
        raise CliError(EXIT_CONFIG, f"bad K list: {args.K_list}")
    if not K_list or any(not 1000 <= K <= 10000 for K in K_list):
        raise CliError(
            EXIT_CONFIG, f"K values must lie in [1000, 10000]: {args.K_list}"
        )
    if args.runs < 1:
        raise CliError(EXIT_CONFIG, "runs must be >= 1")
    base_seed = args.seed if args.seed is not None else 0
    sim_over = {k: v for k, v in cfg.sim.items()
                if k in ("delta", "alpha", "stability_target", "mean_bin_rate")}
    admm_known = {"rho_tnn", "rho_mle", "tau", "max_outer", "tol_primal",
                  "tol_dual"}
    admm_over = {k: v for k, v in cfg.admm.items() if k in admm_known}

    tasks = [(case, K, run) for case in cases for K in K_list
             for run in range(args.runs)]
    results = {}
    failures = {}
    workers = max(1, args.threads)
    with concurrent.futures.ThreadPoolExecutor(max_workers=workers) as pool:
        futs = {
            pool.submit(_reproduce_one, case, K, run, base_seed, sim_over,
                        admm_over): (case, K, run)
            for case, K, run in tasks
        }
        for fut in concurrent.futures.as_completed(futs):
            case, K, run = futs[fut]
            label = f"{case[0]}x{case[1]}x{case[2]}"
            try:
                results[(label, K, run)] = fut.result()
            except Exception as exc:
                failures.setdefault((label, K), []).append(f"run {run}: {exc}")

    table = {}
    path = out / "table.csv"
    if path.exists():
        try:
            table = _read_table(path)
        except Exception:
            _notice("existing table.csv is unreadable; rewriting it")
            table = {}
    done = 0
    for case in cases:
        label = f"{case[0]}x{case[1]}x{case[2]}"
        for K in K_list:
            if (label, K) in failures:
                for why in failures[(label, K)]:
                    _notice(f"cell {label} K={K} aborted: {why}")
                continue
            for method in ("MLE", "TNN"):
                vals = [results[(label, K, run)][method]
                        for run in range(args.runs)]
                g = float(np.mean([v[0] for v in vals]))
                m = float(np.mean([v[1] for v in vals]))
                table[(label, K, method)] = (_fmt(g), _fmt(m))
            done += 1
    lines = [REPRODUCE_HEADER]
    for (label, K, method) in sorted(table):
        g, m = table[(label, K, method)]
        lines.append(f"{label},{method},{K},{g},{m}")
    _atomic_write_text(path, "\n".join(lines) + "\n")
    print(json.dumps({"table": str(path), "cells": done}, sort_keys=True))
    if done == 0:
        raise NumericalError("every reproduce cell failed")
    return EXIT_OK


def _add_common(sub):
    sub.add_argument("--config", default=None, help="JSON config file")
    sub.add_argument("--seed", type=int, default=None, help="seed override")
    sub.add_argument("--out", default=None, help="output directory")
    sub.add_argument("--threads", type=int, default=1,
                     help="parallel worker slots")


def _add_input(sub):
    sub.add_argument("--data", default=None, help="bin-counts text file")
    sub.add_argument("--events", default=None,
                     help="events CSV (x,y,t), discretized via the config")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="sthawkes",
        description="Grid-binned self-exciting count models: simulation, "
                    "penalized fitting, metrics, and error certificates.",
    )
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("simulate", help="draw truth parameters and a count path")
    _add_common(p)
    p.set_defaults(func=cmd_simulate)

    p = subs.add_parser("fit", help="fit a model to observed counts")
    _add_common(p)
    _add_input(p)
    p.add_argument("--mode", choices=["tnn", "mle"], default="tnn")
    p.add_argument("--resume", default=None, help="checkpoint file to resume")
    p.add_argument("--checkpoint", default=None, help="checkpoint file to write")
    p.add_argument("--checkpoint-every", type=int, default=50)
    p.set_defaults(func=cmd_fit)

    p = subs.add_parser("eval", help="score a model against truth or a test split")
    _add_common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--truth", default=None, help="true parameters file")
    p.add_argument("--test", default=None, help="test bin-counts file")
    p.add_argument("--method", default="TNN", help="label for the CSV row")
    p.add_argument("--nsim", type=int, default=60,
                   help="simulations behind FRQ_avg")
    p.set_defaults(func=cmd_eval)

    p = subs.add_parser("bound", help="evaluate an error certificate on data")
    _add_common(p)
    _add_input(p)
    p.add_argument("--alpha1", type=float, default=0.1)
    p.add_argument("--alpha2", type=float, default=0.1)
    p.add_argument("--variant", choices=["theorem3", "corollary1", "remark2"],
                   default="theorem3")
    p.add_argument("--c1", type=float, default=None)
    p.add_argument("--c2", type=float, default=None)
    p.set_defaults(func=cmd_bound)

    p = subs.add_parser("tune", help="pick tau on a holdout split")
    _add_common(p)
    _add_input(p)
    p.add_argument("--grid", required=True, help="comma-separated tau values")
    p.add_argument("--holdout", type=float, default=0.2)
    p.set_defaults(func=cmd_tune)

    p = subs.add_parser("reproduce", help="error table over (case, K) cells")
    _add_common(p)
    p.add_argument("--case", action="append", default=None,
                   help="n1,n2,p (repeatable)")
    p.add_argument("--K-list", dest="K_list", default="1000,3000,10000")
    p.add_argument("--runs", type=int, default=5)
    p.set_defaults(func=cmd_reproduce)

    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage errors already; normalize the code
        return EXIT_CONFIG if exc.code not in (0, None) else 0
    if getattr(args, "case", "missing") is None:
        args.case = ["4,4,5"]
    try:
        return args.func(args)
    except CliError as exc:
        print(json.dumps({"error": str(exc), "code": exc.code}), file=sys.stderr)
        return exc.code
    except NumericalError as exc:
        print(json.dumps({"error": str(exc), "code": EXIT_NUMERIC}),
              file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, ValueError) as exc:
        print(json.dumps({"error": str(exc), "code": EXIT_CONFIG}),
              file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
