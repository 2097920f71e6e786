"""Variational empirical Bayes estimation for the mixed logit model.

The fit alternates a variational E-step, which maximizes each agent's
objective contribution over its Gaussian factor, with a closed-form
M-step for the population parameters (mean of the factor means;
mean factor covariance plus the empirical covariance of the means,
denominator H). Each agent subproblem is a smooth concave maximization
solved by BFGS, jointly over the factor mean and either the covariance
factor's lower triangle ("d0") or the log variances ("d1"). Agents are
initialized at the pooled homogeneous maximum likelihood estimate.

Convergence is declared when one E+M iteration changes the joint vector
of all variational parameters together with the population estimates by
less than ``rel_tol`` times its norm at the start of the iteration.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve

from . import agent_terms
from .agent_terms import AgentAux
from .approx import check_approx
from .elbo import VariationalAgent
from .model import PopulationParams
from .optimize import OptimizeSettings, maximize
from .validation import ConvergenceError, spd_cholesky

_TRIL_CACHE = {}


def _tril_indices(K):
    if K not in _TRIL_CACHE:
        _TRIL_CACHE[K] = np.tril_indices(K)
    return _TRIL_CACHE[K]


def _prior_precision(params):
    chol = spd_cholesky(params.omega_mat, name="omega_mat")
    prec = cho_solve((chol, True), np.eye(params.K))
    return 0.5 * (prec + prec.T)


def _agent_objective(aux, prior_mean, prior_prec, approx):
    """Objective closure over packed parameters [mu, vech(L)] or [mu, log_var]."""
    K = aux.K
    if approx == "d1":
        def objective(theta):
            value, grad_mu, grad_sig = agent_terms.d1_value_grads(
                theta[:K], theta[K:], aux, prior_mean, prior_prec)
            return value, np.concatenate([grad_mu, grad_sig])
        return objective

    rows, cols = _tril_indices(K)

    def objective(theta):
        factor = np.zeros((K, K))
        factor[rows, cols] = theta[K:]
        value, grad_mu, grad_factor = agent_terms.d0_value_grads(
            theta[:K], factor, aux, prior_mean, prior_prec)
        if not np.isfinite(value):
            return value, np.zeros_like(theta)
        return value, np.concatenate([grad_mu, grad_factor[rows, cols]])

    return objective


def _pack_agent(var):
    if var.cov_factor is not None:
        rows, cols = _tril_indices(var.K)
        return np.concatenate([var.mu, var.cov_factor[rows, cols]])
    return np.concatenate([var.mu, var.log_var])


def _unpack_agent(theta, K, approx):
    if approx == "d1":
        return VariationalAgent(theta[:K], log_var=theta[K:])
    factor = np.zeros((K, K))
    rows, cols = _tril_indices(K)
    factor[rows, cols] = theta[K:]
    return VariationalAgent(theta[:K], cov_factor=factor)


def _solve_agent(aux, prior_mean, prior_prec, current, approx, settings):
    """Maximize one agent's objective contribution from a warm start.

    Returns the updated factor and its objective value. A line-search
    stall (improvement below float resolution) keeps the best point.
    """
    objective = _agent_objective(aux, prior_mean, prior_prec, approx)
    result = maximize(objective, _pack_agent(current), settings, on_stall="return")
    return _unpack_agent(result.x, aux.K, approx), result.value


def _prior_part(var, prior_mean, prior_prec):
    """The terms of an agent's objective contribution that involve the prior."""
    dm = var.mu - prior_mean
    if var.cov_factor is not None:
        trace = np.sum((prior_prec @ var.cov_factor) * var.cov_factor)
    else:
        trace = np.diagonal(prior_prec) @ np.exp(var.log_var)
    return -0.5 * (dm @ prior_prec @ dm + trace)


@dataclass
class EBFit:
    """Result of a variational empirical Bayes fit."""

    zeta_hat: np.ndarray
    omega_hat: np.ndarray
    agents_var: list
    elbo_trace: list
    em_iterations: int
    converged: bool

    def params(self):
        return PopulationParams(self.zeta_hat, self.omega_hat)


def init_homogeneous(data, settings=None):
    """Pooled multinomial logit MLE: one shared preference vector for all events.

    Solved by Newton ascent with the analytic gradient and Hessian. If
    the solve hits the iteration cap (the signature of a separable or
    quasi-separable design), it is retried with a tiny ridge penalty
    (1e-4), whose influence on a well-posed problem is negligible.
    """
    settings = settings or OptimizeSettings()
    xs_all = np.concatenate([a.x for a in data.agents if a.T], axis=0)
    if xs_all.shape[0] == 0:
        raise ValueError("dataset has no choice events")
    chosen = np.concatenate(
        [a.x[np.arange(a.T), a.y] for a in data.agents if a.T], axis=0).sum(axis=0)

    def objective(beta, ridge=0.0):
        return agent_terms.pooled_loglik(beta, xs_all, chosen, ridge=ridge)

    result = maximize(objective, np.zeros(data.K), settings, on_stall="return")
    if result.status == "max_iters":
        result = maximize(lambda b: objective(b, ridge=1e-4), np.zeros(data.K),
                          settings, on_stall="return")
        if result.status == "max_iters":
            raise ConvergenceError("homogeneous MLE did not converge, even with ridge")
    return result.x


def estep_agent(agent, params, current, approx="d1", settings=None):
    """Update one agent's variational factor at fixed population parameters.

    Solves the agent's concave subproblem jointly over the factor mean
    and covariance parameterization; the agent's objective contribution
    never decreases (warm-started monotone ascent).
    """
    check_approx(approx)
    if current.kind != approx:
        raise ValueError(f"current factor kind {current.kind!r} does not match "
                         f"approx {approx!r}")
    settings = settings or OptimizeSettings()
    var, _ = _solve_agent(AgentAux(agent), params.zeta, _prior_precision(params),
                          current, approx, settings)
    return var


def estep_mu_gradient(agent, params, var):
    """Analytic gradient of the agent objective with respect to the factor mean."""
    aux = AgentAux(agent)
    prec = _prior_precision(params)
    if var.cov_factor is not None:
        _, grad_mu, _ = agent_terms.d0_value_grads(var.mu, var.cov_factor, aux,
                                                   params.zeta, prec)
    else:
        _, grad_mu, _ = agent_terms.d1_value_grads(var.mu, var.log_var, aux,
                                                   params.zeta, prec)
    return grad_mu


def estep_mu_hessian(agent, params, var):
    """Analytic Hessian with respect to the factor mean, at fixed covariance."""
    if var.cov_factor is None:
        raise ValueError("mu Hessian is defined for the full-covariance (d0) form")
    return agent_terms.d0_mu_hessian(var.mu, var.cov_factor, AgentAux(agent),
                                     _prior_precision(params))


def estep_factor_gradient(agent, params, var):
    """Analytic gradient with respect to the covariance factor's lower triangle."""
    if var.cov_factor is None:
        raise ValueError("factor gradient is defined for the full-covariance (d0) form")
    _, _, grad_factor = agent_terms.d0_value_grads(
        var.mu, var.cov_factor, AgentAux(agent), params.zeta,
        _prior_precision(params))
    return grad_factor


def estep_logvar_gradient(agent, params, var):
    """Analytic gradient with respect to the log variances (d1 form)."""
    if var.log_var is None:
        raise ValueError("log-variance gradient is defined for the diagonal (d1) form")
    _, _, grad_sig = agent_terms.d1_value_grads(
        var.mu, var.log_var, AgentAux(agent), params.zeta,
        _prior_precision(params))
    return grad_sig


def mstep(agents_var):
    """Closed-form population update given the variational factors.

    Returns the mean of the factor means and the mean factor covariance
    plus the empirical covariance of the means (maximum likelihood
    convention, denominator H).
    """
    H = len(agents_var)
    if H < 2:
        raise ValueError(f"M-step needs at least 2 agents, got {H}")
    mus = np.stack([v.mu for v in agents_var])
    zeta = mus.mean(axis=0)
    K = mus.shape[1]
    omega = np.zeros((K, K))
    for var in agents_var:
        if var.cov_factor is not None:
            omega += var.cov_factor @ var.cov_factor.T
        else:
            omega[np.diag_indices(K)] += np.exp(var.log_var)
    dev = mus - zeta
    omega = (omega + dev.T @ dev) / H
    return PopulationParams(zeta, 0.5 * (omega + omega.T), allow_degenerate=True)


def _pack_state(params, agents_var):
    rows, cols = _tril_indices(params.K)
    parts = [params.zeta, params.omega_mat[rows, cols]]
    parts.extend(_pack_agent(v) for v in agents_var)
    return np.concatenate(parts)


def _run_sweep(solve_one, H, threads):
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(solve_one, range(H)))
    return [solve_one(h) for h in range(H)]


def fit_veb(data, approx="d1", rel_tol=1e-4, max_em_iters=500, settings=None,
            threads=1):
    """Fit the mixed logit model by variational EM.

    Records the objective after every E-step and every M-step; the trace
    is nondecreasing. Returns an EBFit with ``converged=False`` (and the
    partial state) when the iteration cap is reached. Results are
    independent of ``threads``: agents are solved on isolated inputs and
    reduced in a fixed order.
    """
    check_approx(approx)
    if rel_tol <= 0:
        raise ValueError("rel_tol must be positive")
    settings = settings or OptimizeSettings()
    K, H = data.K, data.H

    beta_init = init_homogeneous(data, settings)
    agents_var = [VariationalAgent.isotropic(beta_init, 0.01, approx)] * H
    params = PopulationParams(beta_init, np.eye(K))
    auxes = [AgentAux(a) for a in data.agents]

    def elbo_const(logdet_omega):
        return 0.5 * K - 0.5 * logdet_omega

    chol = spd_cholesky(params.omega_mat, name="omega_mat")
    logdet = 2.0 * float(np.log(np.diagonal(chol)).sum())
    prec = cho_solve((chol, True), np.eye(K))
    prec = 0.5 * (prec + prec.T)
    values = [agent_terms.d1_value(v.mu, v.log_var, aux, params.zeta, prec)
              if approx == "d1" else
              agent_terms.d0_value(v.mu, v.cov_factor, aux, params.zeta, prec)
              for v, aux in zip(agents_var, auxes)]
    elbo_trace = [float(sum(values) + H * elbo_const(logdet))]

    converged = False
    iteration = 0
    for iteration in range(1, max_em_iters + 1):
        start_state = _pack_state(params, agents_var)
        start_norm = float(np.linalg.norm(start_state))

        zeta, current_prec = params.zeta, prec

        def solve_one(h):
            try:
                return _solve_agent(auxes[h], zeta, current_prec, agents_var[h],
                                    approx, settings)
            except Exception as exc:
                raise ConvergenceError(f"agent {h} subproblem failed: {exc}") from exc

        results = _run_sweep(solve_one, H, threads)
        agents_var = [var for var, _ in results]
        values = [value for _, value in results]
        elbo_trace.append(float(sum(values) + H * elbo_const(logdet)))

        old_prior = [_prior_part(v, params.zeta, prec) for v in agents_var]
        params = mstep(agents_var)
        chol = spd_cholesky(params.omega_mat, name="omega_mat")
        logdet = 2.0 * float(np.log(np.diagonal(chol)).sum())
        prec = cho_solve((chol, True), np.eye(K))
        prec = 0.5 * (prec + prec.T)
        new_prior = [_prior_part(v, params.zeta, prec) for v in agents_var]
        values = [v - o + n for v, o, n in zip(values, old_prior, new_prior)]
        elbo_trace.append(float(sum(values) + H * elbo_const(logdet)))

        delta = float(np.linalg.norm(_pack_state(params, agents_var) - start_state))
        if delta < rel_tol * start_norm:
            converged = True
            break

    return EBFit(params.zeta, params.omega_mat, agents_var, elbo_trace,
                 iteration, converged)
