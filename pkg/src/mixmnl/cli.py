"""Batch command-line interface: simulate, fit, eval, bench.

Each command resolves its settings from built-in defaults, an optional
JSON config file (``--config``), and command-line flags, in increasing
precedence. The resolved configuration (seeds included) is embedded in
every artifact so any run can be reproduced from its outputs alone.

Exit codes: 0 success; 1 invalid input (the message names the offending
field); 2 fit did not converge within its iteration cap (artifacts are
still written, flagged ``converged: false``).
"""

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import io
from .evaluate import benchmark_scenario
from .model import PopulationParams
from .optimize import OptimizeSettings
from .simulate import ScenarioConfig, simulate_dataset
from .vb import fit_vb
from .veb import fit_veb

SIMULATE_DEFAULTS = {
    "scenario_j": 3, "scenario_k": 3, "agents": 250, "het": "low",
    "events": 25, "x_sd": 0.5, "seed": 0, "out": "out",
}
FIT_DEFAULTS = {
    "data": "out/dataset.jsonl", "method": "veb", "approx": "d1",
    "rel_tol": 1e-4, "max_iters": 500, "grad_tol": 1e-6, "threads": 1,
    "out": "out",
}
EVAL_DEFAULTS = {
    "fit": ["out/variational_state.json"], "truth": "out/ground_truth.json",
    "ndraws": 200_000, "n_designs": 25, "x_sd": 0.5, "seed": 0, "out": "out",
}
BENCH_DEFAULTS = {
    "scenario_j": 3, "scenario_k": "3,10", "agents": "250,1000",
    "het": "low,high", "events": 25, "x_sd": 0.5, "seed": 0,
    "approx": "d1", "rel_tol": 1e-4, "max_iters": 500, "grad_tol": 1e-6,
    "ndraws": 200_000, "n_designs": 25, "threads": 1, "out": "bench",
}


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="mixmnl",
        description="Simulate, fit, and evaluate mixed multinomial logit models.")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(sub_parser, *args, **kwargs):
        kwargs.setdefault("default", argparse.SUPPRESS)
        sub_parser.add_argument(*args, **kwargs)

    p = sub.add_parser("simulate", help="generate a synthetic dataset")
    add(p, "--scenario-J", dest="scenario_j", type=int)
    add(p, "--scenario-K", dest="scenario_k", type=int)
    add(p, "--agents", type=int)
    add(p, "--het", choices=["low", "high"])
    add(p, "--events", type=int)
    add(p, "--x-sd", dest="x_sd", type=float)
    add(p, "--seed", type=int)
    add(p, "--out", type=str)
    add(p, "--config", type=str)

    p = sub.add_parser("fit", help="fit a dataset by VEB or VB")
    add(p, "--data", type=str)
    add(p, "--method", choices=["veb", "vb"])
    add(p, "--approx", choices=["d0", "d1"])
    add(p, "--rel-tol", dest="rel_tol", type=float)
    add(p, "--max-iters", dest="max_iters", type=int)
    add(p, "--grad-tol", dest="grad_tol", type=float)
    add(p, "--threads", type=int)
    add(p, "--out", type=str)
    add(p, "--config", type=str)

    p = sub.add_parser("eval", help="benchmark fits against ground truth")
    add(p, "--fit", action="append", type=str)
    add(p, "--truth", type=str)
    add(p, "--ndraws", type=int)
    add(p, "--n-designs", dest="n_designs", type=int)
    add(p, "--x-sd", dest="x_sd", type=float)
    add(p, "--seed", type=int)
    add(p, "--out", type=str)
    add(p, "--config", type=str)

    p = sub.add_parser("bench", help="run simulate/fit/eval over a scenario grid")
    add(p, "--scenario-J", dest="scenario_j", type=int)
    add(p, "--scenario-K", dest="scenario_k", type=str)
    add(p, "--agents", type=str)
    add(p, "--het", type=str)
    add(p, "--events", type=int)
    add(p, "--x-sd", dest="x_sd", type=float)
    add(p, "--seed", type=int)
    add(p, "--approx", choices=["d0", "d1"])
    add(p, "--rel-tol", dest="rel_tol", type=float)
    add(p, "--max-iters", dest="max_iters", type=int)
    add(p, "--grad-tol", dest="grad_tol", type=float)
    add(p, "--ndraws", type=int)
    add(p, "--n-designs", dest="n_designs", type=int)
    add(p, "--threads", type=int)
    add(p, "--out", type=str)
    add(p, "--config", type=str)
    return parser


def _resolve(args, defaults):
    provided = {k: v for k, v in vars(args).items() if k != "command"}
    config_path = provided.pop("config", None)
    from_file = {}
    if config_path:
        with open(config_path) as fh:
            from_file = json.load(fh)
        unknown = set(from_file) - set(defaults)
        if unknown:
            raise ValueError(f"config file has unknown fields: {sorted(unknown)}")
    return {**defaults, **from_file, **provided}


def _int_list(value, field):
    try:
        if isinstance(value, (list, tuple)):
            return [int(v) for v in value]
        return [int(v) for v in str(value).split(",") if v != ""]
    except ValueError:
        raise ValueError(f"{field} must be a comma-separated list of integers")


def _str_list(value, field, allowed):
    items = list(value) if isinstance(value, (list, tuple)) else \
        [v for v in str(value).split(",") if v != ""]
    for item in items:
        if item not in allowed:
            raise ValueError(f"{field} entries must be among {allowed}, got {item!r}")
    return items


def cmd_simulate(cfg):
    scenario = ScenarioConfig(J=cfg["scenario_j"], K=cfg["scenario_k"],
                              H=cfg["agents"], heterogeneity=cfg["het"],
                              T=cfg["events"], x_sd=cfg["x_sd"], seed=cfg["seed"])
    dataset, truth = simulate_dataset(scenario)
    out = Path(cfg["out"])
    io.write_dataset(out / "dataset.jsonl", dataset, config=cfg)
    io.write_betas_csv(out / "betas.csv", truth)
    io.write_ground_truth(out / "ground_truth.json", truth, betas_path="betas.csv",
                          config=cfg)
    print(f"wrote {out / 'dataset.jsonl'} ({dataset.H} agents, J={dataset.J}, "
          f"K={dataset.K})")
    return 0


def _run_fit(dataset, cfg):
    settings = OptimizeSettings(grad_tol=cfg["grad_tol"])
    start = time.perf_counter()
    if cfg["method"] == "veb":
        result = fit_veb(dataset, approx=cfg["approx"], rel_tol=cfg["rel_tol"],
                         max_em_iters=cfg["max_iters"], settings=settings,
                         threads=cfg["threads"])
        fitted = {"zeta": result.zeta_hat.tolist(),
                  "omega": result.omega_hat.tolist()}
        estimate_args = {"params": PopulationParams(result.zeta_hat,
                                                    result.omega_hat,
                                                    allow_degenerate=True)}
        iterations = result.em_iterations
    else:
        result = fit_vb(dataset, approx=cfg["approx"], rel_tol=cfg["rel_tol"],
                        max_iters=cfg["max_iters"], settings=settings,
                        threads=cfg["threads"])
        g = result.global_var
        fitted = {"global": {"mu_zeta": g.mu_zeta.tolist(),
                             "sigma_zeta": g.sigma_zeta.tolist(),
                             "upsilon": g.upsilon.tolist(),
                             "omega_dof": g.omega_dof}}
        estimate_args = {"global_var": g}
        iterations = result.iterations
    elapsed = time.perf_counter() - start
    return result, fitted, estimate_args, iterations, elapsed


def cmd_fit(cfg):
    dataset = io.read_dataset(cfg["data"])
    cfg = dict(cfg, J=dataset.J, K=dataset.K,
               data_config=io.read_dataset_config(cfg["data"]))
    result, fitted, estimate_args, iterations, elapsed = _run_fit(dataset, cfg)
    out = Path(cfg["out"])
    report = {
        "command": "fit", "config": cfg, "method": cfg["method"],
        "approx": cfg["approx"], "converged": result.converged,
        "iterations": iterations, "elbo_trace": result.elbo_trace,
        "timing": {"fit_seconds": elapsed},
    }
    report.update(fitted)
    io.write_fit_report(out / "fit_report.json", report)
    io.write_variational_state(out / "variational_state.json", cfg["method"],
                               cfg["approx"], result.agents_var,
                               config=cfg, **estimate_args)
    status = "converged" if result.converged else "did NOT converge"
    print(f"{cfg['method']} fit {status} after {iterations} iterations "
          f"({elapsed:.1f}s); artifacts in {out}")
    return 0 if result.converged else 2


def cmd_eval(cfg):
    truth = io.read_ground_truth(cfg["truth"])
    estimates = {}
    J = None
    for fit_path in cfg["fit"]:
        method, estimate, _, fit_cfg = io.read_variational_state(fit_path)
        if method in estimates:
            raise ValueError(f"fit: multiple {method!r} states given")
        estimates[method] = estimate
        if fit_cfg and "J" in fit_cfg:
            J = int(fit_cfg["J"])
    if J is None:
        raise ValueError("fit: state files carry no item count J")
    result = benchmark_scenario(estimates, truth, J, n_designs=cfg["n_designs"],
                                x_sd=cfg["x_sd"], ndraws=cfg["ndraws"],
                                seed=cfg["seed"])
    out = Path(cfg["out"])
    report = dict(result.to_dict(), command="eval", config=cfg)
    io.write_fit_report(out / "predictive_report.json", report)
    io.write_tv_csv(out / "tv_errors.csv", result)
    median = result.median_tv()
    print("median TV error (pp): "
          + ", ".join(f"{m}={v:.3f}" for m, v in sorted(median.items())))
    return 0


def cmd_bench(cfg):
    agents_list = _int_list(cfg["agents"], "agents")
    k_list = _int_list(cfg["scenario_k"], "scenario_k")
    het_list = _str_list(cfg["het"], "het", ("low", "high"))
    methods = ["veb", "vb"]
    out = Path(cfg["out"])
    rows = []
    any_unconverged = False
    cell_index = 0
    for agents in agents_list:
        for het in het_list:
            for K in k_list:
                cell_seed = int(np.random.SeedSequence(
                    entropy=cfg["seed"], spawn_key=(cell_index,)).generate_state(1)[0])
                cell_cfg = dict(cfg, agents=agents, het=het, scenario_k=K,
                                cell_seed=cell_seed, cell=cell_index)
                cell_dir = out / "cells" / f"H{agents}_K{K}_{het}"
                scenario = ScenarioConfig(J=cfg["scenario_j"], K=K, H=agents,
                                          heterogeneity=het, T=cfg["events"],
                                          x_sd=cfg["x_sd"], seed=cell_seed)
                dataset, truth = simulate_dataset(scenario)
                io.write_dataset(cell_dir / "dataset.jsonl", dataset,
                                 config=cell_cfg)
                io.write_ground_truth(cell_dir / "ground_truth.json", truth,
                                      config=cell_cfg)
                estimates, converged = {}, {}
                for method in methods:
                    fit_cfg = dict(cell_cfg, method=method, J=dataset.J,
                                   K=dataset.K)
                    result, fitted, estimate_args, iterations, elapsed = \
                        _run_fit(dataset, fit_cfg)
                    report = {
                        "command": "bench-fit", "config": fit_cfg,
                        "method": method, "approx": cfg["approx"],
                        "converged": result.converged, "iterations": iterations,
                        "elbo_trace": result.elbo_trace,
                        "timing": {"fit_seconds": elapsed},
                    }
                    report.update(fitted)
                    io.write_fit_report(cell_dir / f"fit_report_{method}.json",
                                        report)
                    io.write_variational_state(
                        cell_dir / f"variational_state_{method}.json", method,
                        cfg["approx"], result.agents_var, config=fit_cfg,
                        **estimate_args)
                    estimates[method] = (estimate_args.get("params")
                                         or estimate_args.get("global_var"))
                    converged[method] = result.converged
                    any_unconverged |= not result.converged
                eval_seed = int(np.random.SeedSequence(
                    entropy=cfg["seed"],
                    spawn_key=(cell_index, 0xE)).generate_state(1)[0])
                bench = benchmark_scenario(estimates, truth.params,
                                           J=cfg["scenario_j"],
                                           n_designs=cfg["n_designs"],
                                           x_sd=cfg["x_sd"], ndraws=cfg["ndraws"],
                                           seed=eval_seed)
                io.write_fit_report(cell_dir / "predictive_report.json",
                                    dict(bench.to_dict(), command="bench-eval",
                                         config=dict(cell_cfg,
                                                     eval_seed=eval_seed)))
                io.write_tv_csv(cell_dir / "tv_errors.csv", bench)
                tv = bench.median_tv()
                rows.append({"agents": agents, "heterogeneity": het,
                             "J": cfg["scenario_j"], "K": K, "tv_pp": tv,
                             "converged": converged})
                print(f"cell H={agents} K={K} {het}: "
                      + ", ".join(f"{m}={tv[m]:.3f}pp" for m in methods))
                cell_index += 1
    io.write_bench_csv(out / "bench.csv", rows, methods)
    print(f"wrote {out / 'bench.csv'} ({len(rows)} cells)")
    return 2 if any_unconverged else 0


def main(argv=None):
    parser = _build_parser()
    args = parser.parse_args(argv)
    defaults = {"simulate": SIMULATE_DEFAULTS, "fit": FIT_DEFAULTS,
                "eval": EVAL_DEFAULTS, "bench": BENCH_DEFAULTS}[args.command]
    command = {"simulate": cmd_simulate, "fit": cmd_fit, "eval": cmd_eval,
               "bench": cmd_bench}[args.command]
    try:
        cfg = _resolve(args, defaults)
        return command(cfg)
    except (ValueError, TypeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
