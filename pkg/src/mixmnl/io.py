"""File formats for datasets, ground truth, and fit artifacts.

Datasets travel as JSON lines: a header record carrying {"J", "K"}
followed by one record per agent, {"agent": h, "events": [{"x": [[J x K
rows]], "y": item}]} with 1-based item indices (in-memory indices are
0-based). Ground truth is a JSON object {"zeta", "omega",
"betas_path"}. Fit artifacts are JSON: a report (fitted parameters,
objective trace, convergence flag, timings) and a variational-state
file holding every factor, from which an evaluation can be rerun
without refitting. Writers emit keys in sorted order so artifacts are
byte-reproducible; timing values live under the single top-level key
"timing" so determinism checks can drop them.
"""

import csv
import json
from pathlib import Path

import numpy as np

from .elbo import VariationalAgent, VariationalGlobal
from .model import AgentData, ChoiceDataset, PopulationParams


def _dump(obj, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(obj, fh, sort_keys=True, indent=2)
        fh.write("\n")


def write_dataset(path, dataset, config=None):
    """Write a dataset as JSON lines; ``config`` is embedded in the header."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        header = {"J": dataset.J, "K": dataset.K}
        if config is not None:
            header["config"] = config
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for h, agent in enumerate(dataset.agents):
            events = [{"x": agent.x[t].tolist(), "y": int(agent.y[t]) + 1}
                      for t in range(agent.T)]
            fh.write(json.dumps({"agent": h, "events": events}, sort_keys=True) + "\n")


def read_dataset_config(path):
    """The generating configuration embedded in a dataset header, if any."""
    with open(path) as fh:
        return json.loads(fh.readline()).get("config")


def read_dataset(path):
    with open(path) as fh:
        header = json.loads(fh.readline())
        if "J" not in header or "K" not in header:
            raise ValueError(f"{path}: header record must carry J and K")
        J, K = int(header["J"]), int(header["K"])
        agents = []
        for line in fh:
            line = line.strip()
            if not line:
                continue
            record = json.loads(line)
            events = record["events"]
            if events:
                x = np.array([e["x"] for e in events], dtype=float)
                y = np.array([int(e["y"]) - 1 for e in events], dtype=np.int64)
            else:
                x = np.zeros((0, J, K))
                y = np.zeros(0, dtype=np.int64)
            agents.append(AgentData(x, y))
    return ChoiceDataset(agents, J, K)


def write_ground_truth(path, truth, betas_path=None, config=None):
    obj = {"zeta": truth.params.zeta.tolist(),
           "omega": truth.params.omega_mat.tolist()}
    if betas_path is not None:
        obj["betas_path"] = str(betas_path)
    if config is not None:
        obj["config"] = config
    _dump(obj, path)


def read_ground_truth(path):
    """Read the population parameters from a ground-truth JSON file."""
    with open(path) as fh:
        obj = json.load(fh)
    return PopulationParams(np.array(obj["zeta"]), np.array(obj["omega"]),
                            allow_degenerate=True)


def write_betas_csv(path, truth):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["agent"] + [f"beta_{k}" for k in range(truth.betas.shape[1])])
        for h, row in enumerate(truth.betas):
            writer.writerow([h] + [repr(v) for v in row])


def _agents_state(agents_var):
    state = {"mu": [v.mu.tolist() for v in agents_var]}
    if agents_var[0].cov_factor is not None:
        state["cov_factor"] = [v.cov_factor.tolist() for v in agents_var]
    else:
        state["log_var"] = [v.log_var.tolist() for v in agents_var]
    return state


def write_variational_state(path, method, approx, agents_var, params=None,
                            global_var=None, config=None):
    """Persist a fit's full variational state for later evaluation."""
    state = {"method": method, "approx": approx}
    state.update(_agents_state(agents_var))
    if method == "veb":
        state["zeta"] = params.zeta.tolist()
        state["omega"] = params.omega_mat.tolist()
    elif method == "vb":
        state["global"] = {
            "mu_zeta": global_var.mu_zeta.tolist(),
            "sigma_zeta": global_var.sigma_zeta.tolist(),
            "upsilon": global_var.upsilon.tolist(),
            "omega_dof": global_var.omega_dof,
        }
    else:
        raise ValueError(f"unknown method {method!r}")
    if config is not None:
        state["config"] = config
    _dump(state, path)


def read_variational_state(path):
    """Load a variational-state file.

    Returns (method, estimate, agents_var, config) where the estimate is
    a PopulationParams for "veb" or a VariationalGlobal for "vb".
    """
    with open(path) as fh:
        state = json.load(fh)
    method = state["method"]
    mus = state["mu"]
    if "cov_factor" in state:
        agents = [VariationalAgent(np.array(m), cov_factor=np.array(f))
                  for m, f in zip(mus, state["cov_factor"])]
    else:
        agents = [VariationalAgent(np.array(m), log_var=np.array(s))
                  for m, s in zip(mus, state["log_var"])]
    if method == "veb":
        estimate = PopulationParams(np.array(state["zeta"]),
                                    np.array(state["omega"]),
                                    allow_degenerate=True)
    elif method == "vb":
        g = state["global"]
        estimate = VariationalGlobal(np.array(g["mu_zeta"]),
                                     np.array(g["sigma_zeta"]),
                                     np.array(g["upsilon"]), g["omega_dof"])
    else:
        raise ValueError(f"{path}: unknown method {method!r}")
    return method, estimate, agents, state.get("config")


def write_fit_report(path, report):
    _dump(report, path)


def write_tv_csv(path, result):
    """Per-design TV errors of a benchmark, one row per (design, method)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    methods = list(result.reports[0].tv_errors)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["design", "is_median_design"] + [f"tv_pp_{m}" for m in methods])
        for i, rep in enumerate(result.reports):
            writer.writerow([i, int(i == result.median_index)]
                            + [repr(rep.tv_errors[m]) for m in methods])


def write_bench_csv(path, rows, methods):
    """Accuracy table: one row per scenario cell, one TV column per method."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["agents", "heterogeneity", "J", "K"]
                        + [f"tv_pp_{m}" for m in methods]
                        + [f"converged_{m}" for m in methods])
        for row in rows:
            writer.writerow(
                [row["agents"], row["heterogeneity"], row["J"], row["K"]]
                + [repr(row["tv_pp"][m]) for m in methods]
                + [int(row["converged"][m]) for m in methods])
