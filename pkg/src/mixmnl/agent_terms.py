"""Per-agent variational objective terms and their derivatives.

One agent contributes three pieces to the variational objective: the
Gaussian entropy of its factor, the expected log prior density of its
preference vector under that factor, and the expected choice log
likelihood with the log-sum-exp replaced by the d0 or d1 surrogate.
This module evaluates that contribution and its gradients for a single
agent, batched over the agent's events, parameterized either by
(mu, L) with full covariance L L' (d0) or by (mu, log_var) with
diagonal covariance exp(log_var) (d1).

Additive constants that do not involve the agent's parameters —
(K/2) log(2 pi e) from the entropy and the prior's normalizer — are
excluded here and added by the objective assembly in :mod:`mixmnl.elbo`.

The prior enters only through its mean and precision matrix, so the
same code serves the empirical Bayes subproblem (precision = inverse of
the population covariance) and the hierarchical one (precision =
omega_dof * upsilon, mean = mu_zeta).
"""

import numpy as np


class AgentAux:
    """Precomputed per-agent arrays reused across objective evaluations."""

    __slots__ = ("xs", "x2s", "chosen_sum", "T", "J", "K")

    def __init__(self, agent):
        self.xs = agent.x
        self.x2s = agent.x * agent.x
        self.T = agent.T
        self.J = agent.J
        self.K = agent.K
        if agent.T:
            self.chosen_sum = agent.x[np.arange(agent.T), agent.y].sum(axis=0)
        else:
            self.chosen_sum = np.zeros(agent.K)


def _softmax_rows(u):
    u = u - u.max(axis=1, keepdims=True)
    e = np.exp(u)
    return e / e.sum(axis=1, keepdims=True)


def _softmax_lse_rows(u):
    """Row softmax and the summed row log-sum-exps, sharing one stabilization."""
    umax = u.max(axis=1, keepdims=True)
    e = np.exp(u - umax)
    s = e.sum(axis=1, keepdims=True)
    return e / s, float((umax + np.log(s)).sum())


def d0_value(mu, factor, aux, prior_mean, prior_prec):
    """Objective value in (mu, L) form. Returns -inf off the positive-diagonal cone."""
    diag = np.diagonal(factor)
    if np.any(diag <= 0.0):
        return -np.inf
    dm = mu - prior_mean
    pl = prior_prec @ factor
    value = (np.log(diag).sum()
             - 0.5 * (dm @ prior_prec @ dm + np.sum(pl * factor)))
    if aux.T:
        g = aux.xs @ factor
        z = aux.xs @ mu + 0.5 * np.einsum("tjk,tjk->tj", g, g)
        _, lse_sum = _softmax_lse_rows(z)
        value += aux.chosen_sum @ mu - lse_sum
    return float(value)


def d0_value_grads(mu, factor, aux, prior_mean, prior_prec):
    """Value plus gradients wrt mu and the lower triangle of L."""
    diag = np.diagonal(factor)
    if np.any(diag <= 0.0):
        return -np.inf, None, None
    dm = mu - prior_mean
    pdm = prior_prec @ dm
    value = np.log(diag).sum() - 0.5 * (dm @ pdm + np.sum((prior_prec @ factor) * factor))
    if aux.T:
        g = aux.xs @ factor
        z = aux.xs @ mu + 0.5 * np.einsum("tjl,tjl->tj", g, g)
        w, lse_sum = _softmax_lse_rows(z)
        value += aux.chosen_sum @ mu - lse_sum
        grad_mu = -pdm + aux.chosen_sum - np.einsum("tjk,tj->k", aux.xs, w)
        xw = (aux.xs * w[:, :, None]).reshape(-1, aux.K)
        quad = xw.T @ aux.xs.reshape(-1, aux.K)
    else:
        grad_mu = -pdm
        quad = np.zeros_like(prior_prec)
    grad_factor = -(prior_prec + quad) @ factor
    idx = np.arange(aux.K)
    grad_factor[idx, idx] += 1.0 / diag
    return float(value), grad_mu, np.tril(grad_factor)


def d0_mu_hessian(mu, factor, aux, prior_prec):
    """Hessian of the (mu, L) objective with respect to mu, at fixed L.

    Equals -(prior precision) - sum_t [x_t' diag(w_t) x_t - (x_t'w_t)(x_t'w_t)'],
    with w_t the variance-adjusted softmax weights.
    """
    hess = -np.array(prior_prec, dtype=float, copy=True)
    if aux.T:
        g = aux.xs @ factor
        z = aux.xs @ mu + 0.5 * np.einsum("tjl,tjl->tj", g, g)
        w = _softmax_rows(z)
        xw = (aux.xs * w[:, :, None]).reshape(-1, aux.K)
        b = np.einsum("tjk,tj->tk", aux.xs, w)
        hess -= xw.T @ aux.xs.reshape(-1, aux.K) - b.T @ b
    return hess


def d1_value(mu, log_var, aux, prior_mean, prior_prec):
    dm = mu - prior_mean
    var = np.exp(log_var)
    value = 0.5 * log_var.sum() - 0.5 * (dm @ prior_prec @ dm
                                         + np.diagonal(prior_prec) @ var)
    if aux.T:
        p, lse_sum = _softmax_lse_rows(aux.xs @ mu)
        b = np.einsum("tjk,tj->tk", aux.xs, p)
        s_theta = np.einsum("tjk,tj->k", aux.x2s, p) - (b * b).sum(axis=0)
        value += aux.chosen_sum @ mu - lse_sum - 0.5 * s_theta @ var
    return float(value)


def d1_value_grads(mu, log_var, aux, prior_mean, prior_prec):
    """Value plus gradients wrt mu and log_var."""
    dm = mu - prior_mean
    var = np.exp(log_var)
    pdm = prior_prec @ dm
    prior_diag = np.diagonal(prior_prec)
    value = 0.5 * log_var.sum() - 0.5 * (dm @ pdm + prior_diag @ var)
    if aux.T:
        p, lse_sum = _softmax_lse_rows(aux.xs @ mu)
        b = np.einsum("tjk,tj->tk", aux.xs, p)
        theta_cols = np.einsum("tjk,tj->tk", aux.x2s, p) - b * b
        s_theta = theta_cols.sum(axis=0)
        value += aux.chosen_sum @ mu - lse_sum - 0.5 * s_theta @ var
        # mu-derivative of sum_t [lse_t + theta_t'var / 2]
        x2v = aux.x2s @ var
        m = (p * x2v
             - p * np.einsum("tj,tj->t", p, x2v)[:, None]
             + 2.0 * p * ((b * b) @ var)[:, None]
             - 2.0 * p * np.einsum("tjk,tk->tj", aux.xs, b * var))
        lse_grad = b.sum(axis=0) + 0.5 * np.einsum("tjk,tj->k", aux.xs, m)
        grad_mu = -pdm + aux.chosen_sum - lse_grad
        grad_sig = 0.5 * (1.0 - (prior_diag + s_theta) * var)
    else:
        grad_mu = -pdm
        grad_sig = 0.5 * (1.0 - prior_diag * var)
    return float(value), grad_mu, grad_sig


def pooled_loglik(beta, xs_all, chosen_sum, ridge=0.0):
    """Pooled multinomial logit log likelihood with optional ridge penalty.

    Returns (value, gradient, hessian) for a single shared preference
    vector over the stacked events of every agent. The ridge term
    -ridge * ||beta||^2 / 2 stabilizes separable designs.
    """
    p, lse_sum = _softmax_lse_rows(xs_all @ beta)
    k = xs_all.shape[2]
    value = chosen_sum @ beta - lse_sum
    xp = (xs_all * p[:, :, None]).reshape(-1, k)
    b = np.einsum("tjk,tj->tk", xs_all, p)
    grad = chosen_sum - b.sum(axis=0)
    hess = -(xp.T @ xs_all.reshape(-1, k) - b.T @ b)
    if ridge:
        value -= 0.5 * ridge * beta @ beta
        grad -= ridge * beta
        hess -= ridge * np.eye(k)
    return float(value), grad, hess
