"""Mean-field variational inference for the fully Bayesian mixed logit model.

Coordinate ascent cycles through the per-agent Gaussian factors and the
three global factors. The global updates are closed forms:

* population-mean mean: precision-weighted combination of the prior
  mean and the sum of the agent factor means,
  (omega0^-1 + H w U)^-1 (omega0^-1 beta0 + w U sum_h mu_h);
* population-mean covariance: (omega0^-1 + H w U)^-1;
* precision-factor scale: (s_mat^-1 + sum_h [Sigma_h +
  (mu_zeta - mu_h)(mu_zeta - mu_h)'] + H sigma_zeta)^-1;
* precision-factor degrees of freedom: nu + H, fixed up front.

Here w U abbreviates omega_dof * upsilon, the expected population
precision. Agent subproblems reuse the empirical Bayes machinery with
the population mean and precision replaced by these expectations.
"""

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve

from . import agent_terms
from .agent_terms import AgentAux
from .approx import check_approx
from .elbo import (LOG_2PI, VariationalAgent, VariationalGlobal, wishart_elogdet,
                   wishart_lognorm)
from .model import Hyperpriors
from .optimize import OptimizeSettings
from .validation import ConvergenceError, spd_cholesky
from .veb import (_pack_agent, _prior_part, _run_sweep, _solve_agent,
                  _tril_indices, init_homogeneous)


@dataclass
class HBFit:
    """Result of a mean-field hierarchical Bayes fit."""

    global_var: VariationalGlobal
    agents_var: list
    elbo_trace: list
    iterations: int
    converged: bool


def compute_omega(nu, H):
    """Degrees of freedom of the population-precision factor: nu + H.

    Depends only on constants, so it is computed once and never updated.
    """
    return float(nu) + H


def _spd_inv(mat, name):
    chol = spd_cholesky(mat, name=name)
    inv = cho_solve((chol, True), np.eye(mat.shape[0]))
    return 0.5 * (inv + inv.T)


def _mu_zeta_update(omega0_inv, beta0, mean_prec, mu_sum, H):
    lhs = omega0_inv + H * mean_prec
    rhs = omega0_inv @ beta0 + mean_prec @ mu_sum
    chol = np.linalg.cholesky(lhs)
    return cho_solve((chol, True), rhs)


def _sigma_zeta_update(omega0_inv, mean_prec, H):
    return _spd_inv(omega0_inv + H * mean_prec, "sigma_zeta update")


def _upsilon_update(s_inv, sigma_zeta, mus, cov_sum, mu_zeta, H):
    dev = mus - mu_zeta
    return _spd_inv(s_inv + cov_sum + dev.T @ dev + H * sigma_zeta, "upsilon update")


def update_mu_zeta(hyper, global_var, mu_list):
    """Closed-form update of the population-mean factor's mean."""
    mus = np.stack(list(mu_list))
    return _mu_zeta_update(_spd_inv(hyper.omega0, "omega0"), hyper.beta0,
                           global_var.mean_precision(), mus.sum(axis=0),
                           mus.shape[0])


def update_sigma_zeta(hyper, global_var, H):
    """Closed-form update of the population-mean factor's covariance."""
    return _sigma_zeta_update(_spd_inv(hyper.omega0, "omega0"),
                              global_var.mean_precision(), H)


def update_upsilon(hyper, global_var, agents_var):
    """Closed-form update of the precision factor's scale matrix."""
    K = hyper.K
    if agents_var:
        mus = np.stack([v.mu for v in agents_var])
        cov_sum = sum((v.cov() for v in agents_var), np.zeros((K, K)))
        sigma_zeta = global_var.sigma_zeta
    else:
        mus = np.zeros((0, K))
        cov_sum = np.zeros((K, K))
        sigma_zeta = np.zeros((K, K))
    return _upsilon_update(_spd_inv(hyper.s_mat, "s_mat"), sigma_zeta, mus,
                           cov_sum, global_var.mu_zeta, len(agents_var))


def estep_agent_hb(agent, global_var, current, approx="d1", settings=None):
    """Update one agent's factor under the expected population parameters.

    Identical to the empirical Bayes agent update with the population
    mean replaced by mu_zeta and the precision by omega_dof * upsilon.
    """
    check_approx(approx)
    if current.kind != approx:
        raise ValueError(f"current factor kind {current.kind!r} does not match "
                         f"approx {approx!r}")
    settings = settings or OptimizeSettings()
    var, _ = _solve_agent(AgentAux(agent), global_var.mu_zeta,
                          global_var.mean_precision(), current, approx, settings)
    return var


def _bookkeeping(global_var, hyper, H, o0_inv, logdet_o0, s_inv):
    """All objective terms that do not involve the agent factors."""
    K = hyper.K
    omega_dof, upsilon = global_var.omega_dof, global_var.upsilon
    elogdet = wishart_elogdet(omega_dof, upsilon)
    logdet_sz = 2.0 * float(np.log(np.diagonal(
        spd_cholesky(global_var.sigma_zeta, "sigma_zeta"))).sum())
    delta = global_var.mu_zeta - hyper.beta0
    total = H * (0.5 * K + 0.5 * elogdet)
    total -= 0.5 * H * omega_dof * np.sum(upsilon * global_var.sigma_zeta)
    total += 0.5 * (K * (LOG_2PI + 1.0) + logdet_sz)
    total += (-0.5 * (omega_dof - K - 1) * elogdet + 0.5 * omega_dof * K
              + wishart_lognorm(omega_dof, upsilon))
    total -= 0.5 * (K * LOG_2PI + logdet_o0
                    + np.sum(o0_inv * global_var.sigma_zeta)
                    + delta @ o0_inv @ delta)
    total += (-wishart_lognorm(hyper.nu, s_inv)
              + 0.5 * (hyper.nu - K - 1) * elogdet
              - 0.5 * omega_dof * np.sum(s_inv * upsilon))
    return float(total)


def _pack_vb_state(global_var, agents_var):
    rows, cols = _tril_indices(global_var.K)
    parts = [global_var.mu_zeta, global_var.sigma_zeta[rows, cols],
             global_var.upsilon[rows, cols]]
    parts.extend(_pack_agent(v) for v in agents_var)
    return np.concatenate(parts)


def fit_vb(data, hyper=None, approx="d1", rel_tol=1e-4, max_iters=500,
           settings=None, threads=1):
    """Fit the fully Bayesian mixed logit model by mean-field coordinate ascent.

    ``hyper`` defaults to the diffuse settings of
    :meth:`mixmnl.model.Hyperpriors.diffuse`. The objective is recorded
    after the agent sweep and after each global update; the trace is
    nondecreasing. Convergence is the joint relative change of all
    variational parameters falling below ``rel_tol``.
    """
    check_approx(approx)
    if rel_tol <= 0:
        raise ValueError("rel_tol must be positive")
    settings = settings or OptimizeSettings()
    K, H = data.K, data.H
    if hyper is None:
        hyper = Hyperpriors.diffuse(K)
    if hyper.K != K:
        raise ValueError(f"hyperpriors have K={hyper.K}, dataset has K={K}")

    o0_chol = spd_cholesky(hyper.omega0, name="omega0")
    logdet_o0 = 2.0 * float(np.log(np.diagonal(o0_chol)).sum())
    o0_inv = cho_solve((o0_chol, True), np.eye(K))
    o0_inv = 0.5 * (o0_inv + o0_inv.T)
    s_inv = _spd_inv(hyper.s_mat, "s_mat")

    omega_dof = compute_omega(hyper.nu, H)
    beta_init = init_homogeneous(data, settings)
    agents_var = [VariationalAgent.isotropic(beta_init, 0.01, approx)] * H
    # Scale the initial precision factor so its mean omega_dof * upsilon is
    # the identity.
    global_var = VariationalGlobal(beta_init, np.eye(K),
                                   hyper.s_mat / (hyper.nu * omega_dof), omega_dof)
    auxes = [AgentAux(a) for a in data.agents]

    def prior_sum(mus, cov_sum, mu_zeta, mean_prec):
        dev = mus - mu_zeta
        return -0.5 * (np.sum(mean_prec * (cov_sum + dev.T @ dev)))

    def factor_moments():
        mus = np.stack([v.mu for v in agents_var])
        cov_sum = np.zeros((K, K))
        for v in agents_var:
            if v.cov_factor is not None:
                cov_sum += v.cov_factor @ v.cov_factor.T
            else:
                cov_sum[np.diag_indices(K)] += np.exp(v.log_var)
        return mus, cov_sum

    mus, cov_sum = factor_moments()
    entlik = [agent_terms.d1_value(v.mu, v.log_var, aux, global_var.mu_zeta,
                                   global_var.mean_precision())
              if approx == "d1" else
              agent_terms.d0_value(v.mu, v.cov_factor, aux, global_var.mu_zeta,
                                   global_var.mean_precision())
              for v, aux in zip(agents_var, auxes)]
    entlik = [value - _prior_part(v, global_var.mu_zeta, global_var.mean_precision())
              for value, v in zip(entlik, agents_var)]

    def current_elbo():
        return (sum(entlik)
                + prior_sum(mus, cov_sum, global_var.mu_zeta,
                            global_var.mean_precision())
                + _bookkeeping(global_var, hyper, H, o0_inv, logdet_o0, s_inv))

    elbo_trace = [current_elbo()]
    converged = False
    iteration = 0
    for iteration in range(1, max_iters + 1):
        start_state = _pack_vb_state(global_var, agents_var)
        start_norm = float(np.linalg.norm(start_state))

        mu_zeta, mean_prec = global_var.mu_zeta, global_var.mean_precision()

        def solve_one(h):
            try:
                return _solve_agent(auxes[h], mu_zeta, mean_prec, agents_var[h],
                                    approx, settings)
            except Exception as exc:
                raise ConvergenceError(f"agent {h} subproblem failed: {exc}") from exc

        results = _run_sweep(solve_one, H, threads)
        agents_var = [var for var, _ in results]
        entlik = [value - _prior_part(var, mu_zeta, mean_prec)
                  for var, value in results]
        mus, cov_sum = factor_moments()
        elbo_trace.append(current_elbo())

        new_mu_zeta = _mu_zeta_update(o0_inv, hyper.beta0, mean_prec,
                                      mus.sum(axis=0), H)
        global_var = VariationalGlobal(new_mu_zeta, global_var.sigma_zeta,
                                       global_var.upsilon, omega_dof)
        elbo_trace.append(current_elbo())

        new_sigma_zeta = _sigma_zeta_update(o0_inv, global_var.mean_precision(), H)
        global_var = VariationalGlobal(global_var.mu_zeta, new_sigma_zeta,
                                       global_var.upsilon, omega_dof)
        elbo_trace.append(current_elbo())

        new_upsilon = _upsilon_update(s_inv, global_var.sigma_zeta, mus, cov_sum,
                                      global_var.mu_zeta, H)
        global_var = VariationalGlobal(global_var.mu_zeta, global_var.sigma_zeta,
                                       new_upsilon, omega_dof)
        elbo_trace.append(current_elbo())

        delta = float(np.linalg.norm(_pack_vb_state(global_var, agents_var)
                                     - start_state))
        if delta < rel_tol * start_norm:
            converged = True
            break

    return HBFit(global_var, agents_var, elbo_trace, iteration, converged)
