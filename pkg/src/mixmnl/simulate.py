"""Synthetic choice-data generation with retained ground truth.

A scenario fixes the item count J, attribute count K, agent count H,
and the population heterogeneity level. The population mean is K evenly
spaced values from -2 to 2 (a single value sits at -2 when K = 1) and
the covariance is 0.25 I ("low") or I ("high"). Each agent draws a
preference vector from the population normal, then T attribute matrices
with iid N(0, x_sd^2) entries, and one multinomial logit outcome per
matrix.

Randomness is derived from a splittable generator: agent h consumes the
stream seeded by SeedSequence(entropy=seed, spawn_key=(h,)), drawing
its preference vector, then its attribute matrices, then its outcome
uniforms. Per-agent simulation is therefore order-independent and
reproducible in parallel.
"""

from dataclasses import dataclass

import numpy as np

from .model import AgentData, ChoiceDataset, PopulationParams
from .validation import psd_factor

HETEROGENEITY_LEVELS = ("low", "high")


@dataclass(frozen=True)
class ScenarioConfig:
    """Scenario settings for one simulated dataset."""

    J: int
    K: int
    H: int
    heterogeneity: str
    T: int = 25
    x_sd: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.J < 2:
            raise ValueError(f"J must be >= 2, got {self.J}")
        if self.K < 1:
            raise ValueError(f"K must be >= 1, got {self.K}")
        if self.H < 1:
            raise ValueError(f"H must be >= 1, got {self.H}")
        if self.T < 1:
            raise ValueError(f"T must be >= 1, got {self.T}")
        if self.x_sd <= 0:
            raise ValueError(f"x_sd must be positive, got {self.x_sd}")
        if self.heterogeneity not in HETEROGENEITY_LEVELS:
            raise ValueError(f"heterogeneity must be one of {HETEROGENEITY_LEVELS}, "
                             f"got {self.heterogeneity!r}")
        if self.seed < 0:
            raise ValueError("seed must be a nonnegative integer")


@dataclass(frozen=True)
class GroundTruth:
    """True population parameters and the drawn per-agent preference vectors."""

    params: PopulationParams
    betas: np.ndarray


def scenario_params(K, heterogeneity):
    """Population parameters for a scenario: evenly spaced mean, scaled identity covariance."""
    if K < 1:
        raise ValueError(f"K must be >= 1, got {K}")
    if heterogeneity not in HETEROGENEITY_LEVELS:
        raise ValueError(f"heterogeneity must be one of {HETEROGENEITY_LEVELS}, "
                         f"got {heterogeneity!r}")
    zeta = np.linspace(-2.0, 2.0, K)
    scale = 0.25 if heterogeneity == "low" else 1.0
    return PopulationParams(zeta, scale * np.eye(K))


def _agent_rng(seed, h):
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(h,)))


def simulate_agent(rng, beta, J, K, T, x_sd):
    """Draw T attribute matrices and outcomes for a fixed preference vector."""
    xs = rng.normal(0.0, x_sd, size=(T, J, K))
    u = xs @ beta
    u -= u.max(axis=1, keepdims=True)
    p = np.exp(u)
    p /= p.sum(axis=1, keepdims=True)
    cum = np.cumsum(p, axis=1)
    r = rng.random((T, 1))
    y = np.minimum((cum < r).sum(axis=1), J - 1)
    return AgentData(xs, y)


def simulate_dataset(config, params=None):
    """Simulate a dataset under ``config``; returns (dataset, ground truth).

    ``params`` overrides the scenario's population parameters, which is
    how tests inject a degenerate (zero-covariance) population.
    Identical configs produce bit-identical output.
    """
    if params is None:
        params = scenario_params(config.K, config.heterogeneity)
    if params.K != config.K:
        raise ValueError(f"params has K={params.K}, config has K={config.K}")
    factor = psd_factor(params.omega_mat, name="omega_mat")
    betas = np.empty((config.H, config.K))
    agents = []
    for h in range(config.H):
        rng = _agent_rng(config.seed, h)
        beta = params.zeta + factor @ rng.standard_normal(config.K)
        betas[h] = beta
        agents.append(simulate_agent(rng, beta, config.J, config.K, config.T,
                                     config.x_sd))
    dataset = ChoiceDataset(agents, config.J, config.K)
    return dataset, GroundTruth(params, betas)
