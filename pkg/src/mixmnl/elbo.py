"""Variational objective functions for the mixed multinomial logit model.

``elbo_eb`` is the empirical Bayes objective: Gaussian entropies of the
per-agent factors, minus their cross entropies against the population
normal, plus the surrogate expected log likelihood. ``elbo_hb`` extends
it for the fully Bayesian model, with a normal factor on the population
mean and a Wishart factor on the population precision; the Wishart
entropy and normalizer use the expected-log-determinant function
``wishart_elogdet`` and the log normalization constant
``wishart_lognorm``.

All additive constants (the 2 pi terms and prior normalizers) are kept
so values are comparable against independently computed oracles.
"""

import numpy as np
from scipy.linalg import cho_solve
from scipy.special import digamma, multigammaln

from . import agent_terms
from .approx import check_approx
from .validation import as_matrix, as_vector, spd_cholesky

LOG_2PI = float(np.log(2.0 * np.pi))


class VariationalAgent:
    """Gaussian variational factor N(mu, Sigma) for one agent.

    The covariance is carried either as a lower-triangular factor with
    strictly positive diagonal (``cov_factor``, full covariance,
    Sigma = L L') or as elementwise log variances (``log_var``, diagonal
    covariance). Exactly one of the two must be given; the choice must
    match the surrogate used by the objective ("d0" needs a factor,
    "d1" needs log variances).
    """

    __slots__ = ("mu", "cov_factor", "log_var")

    def __init__(self, mu, cov_factor=None, log_var=None):
        mu = as_vector(mu, name="mu")
        K = mu.shape[0]
        if (cov_factor is None) == (log_var is None):
            raise ValueError("exactly one of cov_factor and log_var must be given")
        if cov_factor is not None:
            cov_factor = as_matrix(cov_factor, rows=K, cols=K, name="cov_factor")
            if np.any(np.triu(cov_factor, 1) != 0.0):
                raise ValueError("cov_factor must be lower triangular")
            if np.any(np.diagonal(cov_factor) <= 0.0):
                raise ValueError("cov_factor must have strictly positive diagonal")
            cov_factor.flags.writeable = False
        else:
            log_var = as_vector(log_var, k=K, name="log_var")
            log_var.flags.writeable = False
        mu.flags.writeable = False
        self.mu = mu
        self.cov_factor = cov_factor
        self.log_var = log_var

    @property
    def K(self):
        return self.mu.shape[0]

    @property
    def kind(self):
        return "d0" if self.cov_factor is not None else "d1"

    def cov(self):
        if self.cov_factor is not None:
            return self.cov_factor @ self.cov_factor.T
        return np.diag(np.exp(self.log_var))

    def logdet_cov(self):
        if self.cov_factor is not None:
            return 2.0 * float(np.log(np.diagonal(self.cov_factor)).sum())
        return float(self.log_var.sum())

    @classmethod
    def isotropic(cls, mu, var, kind):
        """Factor with covariance var * I in the representation for ``kind``."""
        check_approx(kind)
        K = len(mu)
        if kind == "d0":
            return cls(mu, cov_factor=np.sqrt(var) * np.eye(K))
        return cls(mu, log_var=np.full(K, np.log(var)))

    def __repr__(self):
        return f"VariationalAgent(K={self.K}, kind={self.kind!r})"


class VariationalGlobal:
    """Variational factors for the population parameters.

    The population mean gets N(mu_zeta, sigma_zeta); the population
    precision gets a Wishart with scale ``upsilon`` and ``omega_dof``
    degrees of freedom (> K - 1).
    """

    __slots__ = ("mu_zeta", "sigma_zeta", "upsilon", "omega_dof")

    def __init__(self, mu_zeta, sigma_zeta, upsilon, omega_dof):
        mu_zeta = as_vector(mu_zeta, name="mu_zeta")
        K = mu_zeta.shape[0]
        sigma_zeta = as_matrix(sigma_zeta, rows=K, cols=K, name="sigma_zeta")
        upsilon = as_matrix(upsilon, rows=K, cols=K, name="upsilon")
        spd_cholesky(sigma_zeta, name="sigma_zeta")
        spd_cholesky(upsilon, name="upsilon")
        omega_dof = float(omega_dof)
        if not omega_dof > K - 1:
            raise ValueError(f"omega_dof must exceed K - 1 = {K - 1}, got {omega_dof}")
        for arr in (mu_zeta, sigma_zeta, upsilon):
            arr.flags.writeable = False
        self.mu_zeta = mu_zeta
        self.sigma_zeta = sigma_zeta
        self.upsilon = upsilon
        self.omega_dof = omega_dof

    @property
    def K(self):
        return self.mu_zeta.shape[0]

    def mean_precision(self):
        """Expected population precision, omega_dof * upsilon."""
        return self.omega_dof * self.upsilon

    def __repr__(self):
        return f"VariationalGlobal(K={self.K}, omega_dof={self.omega_dof})"


def _spd_logdet_inv(mat, name):
    chol = spd_cholesky(mat, name=name)
    logdet = 2.0 * float(np.log(np.diagonal(chol)).sum())
    inv = cho_solve((chol, True), np.eye(mat.shape[0]))
    return logdet, 0.5 * (inv + inv.T)


def wishart_elogdet(omega_dof, upsilon):
    """E[log |C|] for C ~ Wishart(upsilon, omega_dof).

    Equals log(2^K |upsilon|) + sum_i digamma((omega_dof + 1 - i) / 2).
    """
    upsilon = as_matrix(upsilon, name="upsilon")
    K = upsilon.shape[0]
    if not omega_dof > K - 1:
        raise ValueError(f"omega_dof must exceed K - 1 = {K - 1}, got {omega_dof}")
    chol = spd_cholesky(upsilon, name="upsilon")
    logdet = 2.0 * float(np.log(np.diagonal(chol)).sum())
    i = np.arange(1, K + 1)
    return K * np.log(2.0) + logdet + float(digamma((omega_dof + 1 - i) / 2.0).sum())


def wishart_lognorm(omega_dof, upsilon):
    """Log normalization constant of the Wishart(upsilon, omega_dof) density.

    Equals log[2^(omega K / 2) Gamma_K(omega / 2)] + (omega / 2) log |upsilon|,
    with Gamma_K the multivariate gamma function.
    """
    upsilon = as_matrix(upsilon, name="upsilon")
    K = upsilon.shape[0]
    if not omega_dof > K - 1:
        raise ValueError(f"omega_dof must exceed K - 1 = {K - 1}, got {omega_dof}")
    chol = spd_cholesky(upsilon, name="upsilon")
    logdet = 2.0 * float(np.log(np.diagonal(chol)).sum())
    return (0.5 * omega_dof * K * np.log(2.0) + multigammaln(0.5 * omega_dof, K)
            + 0.5 * omega_dof * logdet)


def agent_term(var, aux, prior_mean, prior_prec):
    """One agent's parameter-dependent objective contribution.

    Dispatches on the factor representation; excludes the additive
    constants shared by every agent (added by the callers below).
    """
    if var.cov_factor is not None:
        return agent_terms.d0_value(var.mu, var.cov_factor, aux, prior_mean, prior_prec)
    return agent_terms.d1_value(var.mu, var.log_var, aux, prior_mean, prior_prec)


def _check_agents(agents_var, data, approx):
    check_approx(approx)
    if len(agents_var) != data.H:
        raise ValueError(f"got {len(agents_var)} variational factors for {data.H} agents")
    for h, var in enumerate(agents_var):
        if var.kind != approx:
            raise ValueError(f"agent {h} factor kind {var.kind!r} does not match "
                             f"approx {approx!r}")
        if var.K != data.K:
            raise ValueError(f"agent {h} factor has K={var.K}, dataset has K={data.K}")


def elbo_eb(agents_var, params, data, approx="d1"):
    """Empirical Bayes variational objective at the given state.

    Sums, over agents, the Gaussian entropy of the factor, minus the
    cross entropy against N(zeta, omega_mat), plus the surrogate
    expected log likelihood of the agent's events.
    """
    _check_agents(agents_var, data, approx)
    logdet_omega, prec = _spd_logdet_inv(params.omega_mat, "omega_mat")
    const = 0.5 * data.K - 0.5 * logdet_omega
    total = data.H * const
    for var, agent in zip(agents_var, data.agents):
        total += agent_term(var, agent_terms.AgentAux(agent), params.zeta, prec)
    if not np.isfinite(total):
        raise ValueError("objective is not finite at the given state")
    return float(total)


def elbo_hb(agents_var, global_var, hyper, data, approx="d1"):
    """Fully Bayesian variational objective at the given state.

    The per-agent terms match ``elbo_eb`` with the population parameters
    replaced by their variational expectations (mean mu_zeta, precision
    omega_dof * upsilon). The remaining terms are the entropies of the
    population-mean and population-precision factors and their cross
    entropies against the hyperpriors.
    """
    _check_agents(agents_var, data, approx)
    K, H = data.K, data.H
    omega_dof, upsilon = global_var.omega_dof, global_var.upsilon
    elogdet = wishart_elogdet(omega_dof, upsilon)
    prec = global_var.mean_precision()

    # Per-agent entropy, expected cross entropy, surrogate likelihood.
    total = H * (0.5 * K + 0.5 * elogdet)
    for var, agent in zip(agents_var, data.agents):
        total += agent_term(var, agent_terms.AgentAux(agent), global_var.mu_zeta, prec)
    total -= 0.5 * H * omega_dof * np.sum(upsilon * global_var.sigma_zeta)

    # Entropies of the population-mean and population-precision factors.
    logdet_sz = 2.0 * float(np.log(np.diagonal(
        spd_cholesky(global_var.sigma_zeta, "sigma_zeta"))).sum())
    total += 0.5 * (K * (LOG_2PI + 1.0) + logdet_sz)
    total += (-0.5 * (omega_dof - K - 1) * elogdet + 0.5 * omega_dof * K
              + wishart_lognorm(omega_dof, upsilon))

    # Cross entropies against the hyperpriors.
    logdet_o0, o0_inv = _spd_logdet_inv(hyper.omega0, "omega0")
    delta = global_var.mu_zeta - hyper.beta0
    total -= 0.5 * (K * LOG_2PI + logdet_o0
                    + np.sum(o0_inv * global_var.sigma_zeta)
                    + delta @ o0_inv @ delta)
    _, s_inv = _spd_logdet_inv(hyper.s_mat, "s_mat")
    total += (-wishart_lognorm(hyper.nu, s_inv)
              + 0.5 * (hyper.nu - K - 1) * elogdet
              - 0.5 * omega_dof * np.sum(s_inv * upsilon))
    if not np.isfinite(total):
        raise ValueError("objective is not finite at the given state")
    return float(total)
