"""Core data types and the multinomial logit likelihood.

A choice dataset holds H agents; agent h faces T_h choice events. At
event t she sees a J x K attribute matrix x_ht (one row per item, one
column per attribute) and selects item y_ht. Selection follows the
multinomial logit: item j is chosen with probability proportional to
exp(beta_h' x_htj), where beta_h is the agent's preference vector.
Across the population the beta_h are iid K-variate normal with mean
``zeta`` and covariance ``omega_mat``.

Outcomes are stored as 0-based integer indices; the JSON-lines file
format (see :mod:`mixmnl.io`) uses 1-based indices.
"""

import numpy as np
from scipy.special import logsumexp

from .validation import as_matrix, as_vector, check_symmetric, spd_cholesky


def mnl_choice_prob(x, beta):
    """Multinomial logit choice probabilities for one attribute matrix.

    Parameters
    ----------
    x : (J, K) array
        Item attribute matrix, one row per item.
    beta : (K,) array
        Preference vector.

    Returns
    -------
    (J,) array on the probability simplex, component j proportional to
    exp(beta' x_j). Computed with max-subtraction so utilities up to
    +-700 do not overflow.
    """
    x = as_matrix(x, name="x")
    beta = as_vector(beta, k=x.shape[1], name="beta")
    u = x @ beta
    u -= u.max()
    e = np.exp(u)
    return e / e.sum()


def log_likelihood_agent(agent, beta):
    """Log likelihood of one agent's observed choices at preference vector beta.

    Returns sum_t [beta' x_{t,y_t} - log sum_j exp(beta' x_tj)], which is
    <= 0, and 0 for an agent with no events.
    """
    beta = as_vector(beta, k=agent.K, name="beta")
    if agent.T == 0:
        return 0.0
    u = agent.x @ beta
    chosen = u[np.arange(agent.T), agent.y]
    return float(chosen.sum() - logsumexp(u, axis=1).sum())


class AgentData:
    """Observed choice events for a single agent.

    Parameters
    ----------
    x : (T, J, K) array
        Attribute matrices, one per event. T may be 0.
    y : (T,) integer array
        Chosen item index per event, 0-based.
    """

    def __init__(self, x, y):
        x = np.ascontiguousarray(x, dtype=np.float64)
        if x.ndim != 3:
            raise ValueError(f"x must have shape (T, J, K), got {x.shape}")
        if x.size and not np.all(np.isfinite(x)):
            raise ValueError("x contains non-finite entries")
        y = np.asarray(y, dtype=np.int64)
        if y.ndim != 1 or y.shape[0] != x.shape[0]:
            raise ValueError("y must be a 1-D index array with one entry per event")
        if y.size and (y.min() < 0 or y.max() >= x.shape[1]):
            raise ValueError(f"y indices must lie in [0, {x.shape[1]})")
        x.flags.writeable = False
        y.flags.writeable = False
        self.x = x
        self.y = y

    @property
    def T(self):
        return self.x.shape[0]

    @property
    def J(self):
        return self.x.shape[1]

    @property
    def K(self):
        return self.x.shape[2]

    def __repr__(self):
        return f"AgentData(T={self.T}, J={self.J}, K={self.K})"


class ChoiceDataset:
    """A collection of agents sharing the same item count J and attribute count K."""

    def __init__(self, agents, J, K):
        agents = list(agents)
        if not agents:
            raise ValueError("dataset must contain at least one agent")
        if J < 2:
            raise ValueError(f"J must be >= 2, got {J}")
        if K < 1:
            raise ValueError(f"K must be >= 1, got {K}")
        for h, agent in enumerate(agents):
            if agent.J != J or agent.K != K:
                raise ValueError(
                    f"agent {h} has shape (J={agent.J}, K={agent.K}), expected ({J}, {K})"
                )
        self.agents = agents
        self.J = int(J)
        self.K = int(K)

    @property
    def H(self):
        return len(self.agents)

    @property
    def n_events(self):
        return sum(a.T for a in self.agents)

    def __iter__(self):
        return iter(self.agents)

    def __len__(self):
        return len(self.agents)

    def __repr__(self):
        return f"ChoiceDataset(H={self.H}, J={self.J}, K={self.K}, events={self.n_events})"


class PopulationParams:
    """Population mean and covariance of the agent preference vectors.

    ``omega_mat`` must be symmetric positive definite. Tests exercising
    degenerate populations (zero covariance) may pass
    ``allow_degenerate=True`` to relax the check to positive
    semidefinite.
    """

    def __init__(self, zeta, omega_mat, allow_degenerate=False):
        zeta = as_vector(zeta, name="zeta")
        omega_mat = as_matrix(omega_mat, rows=zeta.shape[0], cols=zeta.shape[0],
                              name="omega_mat")
        check_symmetric(omega_mat, name="omega_mat")
        if allow_degenerate:
            eigvals = np.linalg.eigvalsh(omega_mat)
            if eigvals.min() < -1e-12 * max(1.0, eigvals.max(initial=0.0)):
                raise ValueError("omega_mat must be positive semidefinite")
        else:
            spd_cholesky(omega_mat, name="omega_mat")
        zeta.flags.writeable = False
        omega_mat.flags.writeable = False
        self.zeta = zeta
        self.omega_mat = omega_mat

    @property
    def K(self):
        return self.zeta.shape[0]

    def __repr__(self):
        return f"PopulationParams(K={self.K})"


class Hyperpriors:
    """Conjugate hyperprior settings for the fully Bayesian model.

    The population mean gets a K-variate normal prior with mean ``beta0``
    and covariance ``omega0``; the population covariance gets an inverse
    Wishart prior with scale built from the SPD matrix ``s_mat`` and
    ``nu`` degrees of freedom (nu > K - 1).
    """

    def __init__(self, beta0, omega0, s_mat, nu):
        beta0 = as_vector(beta0, name="beta0")
        K = beta0.shape[0]
        omega0 = as_matrix(omega0, rows=K, cols=K, name="omega0")
        s_mat = as_matrix(s_mat, rows=K, cols=K, name="s_mat")
        spd_cholesky(omega0, name="omega0")
        spd_cholesky(s_mat, name="s_mat")
        nu = float(nu)
        if not nu > K - 1:
            raise ValueError(f"nu must exceed K - 1 = {K - 1}, got {nu}")
        for arr in (beta0, omega0, s_mat):
            arr.flags.writeable = False
        self.beta0 = beta0
        self.omega0 = omega0
        self.s_mat = s_mat
        self.nu = nu

    @property
    def K(self):
        return self.beta0.shape[0]

    @classmethod
    def diffuse(cls, K):
        """Weakly informative defaults: zero mean, 100 I mean-covariance,
        nu = K + 3 degrees of freedom, and scale nu * I."""
        nu = K + 3.0
        return cls(np.zeros(K), 100.0 * np.eye(K), nu * np.eye(K), nu)

    def __repr__(self):
        return f"Hyperpriors(K={self.K}, nu={self.nu})"
