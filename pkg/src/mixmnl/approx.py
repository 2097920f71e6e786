"""Approximations to E[log sum_j exp(x_j' beta)] under beta ~ N(mu, Sigma).

The expected log-sum-exp has no closed form, so the variational
objectives replace it with one of two surrogates:

* ``d0`` (zeroth order): log sum_j exp(x_j'mu + x_j'Sigma x_j / 2).
  By Jensen's inequality this upper-bounds the expectation, so the
  resulting objective remains a lower bound on the marginal likelihood.
  Works with a full covariance, carried as a lower-triangular factor L
  with Sigma = L L'.

* ``d1`` (first order): lse(x mu) + theta(mu)' exp(sigma) / 2, a
  delta-method expansion restricted to diagonal Sigma = diag(exp(sigma)).
  theta(mu) is the diagonal of the Hessian of v -> lse(x v) at mu. Not a
  bound, but typically tighter for small variances.

Passing ``log_var=None`` to the d1 functions selects the exact
zero-variance code path (used by tests in place of a -inf input).

All functions are pure and re-entrant.
"""

import numpy as np
from scipy.special import logsumexp

from .validation import NotSPDError, as_matrix, as_vector, check_symmetric

APPROX_KINDS = ("d0", "d1")


def check_approx(approx):
    if approx not in APPROX_KINDS:
        raise ValueError(f"approx must be one of {APPROX_KINDS}, got {approx!r}")
    return approx


def _softmax(u):
    u = u - u.max(axis=-1, keepdims=True)
    e = np.exp(u)
    return e / e.sum(axis=-1, keepdims=True)


def _check_psd(sigma_mat, name="sigma_mat"):
    check_symmetric(sigma_mat, name=name)
    jitter = 1e-12 * max(1.0, float(np.trace(sigma_mat)) / sigma_mat.shape[0])
    try:
        np.linalg.cholesky(sigma_mat + jitter * np.eye(sigma_mat.shape[0]))
    except np.linalg.LinAlgError as exc:
        raise NotSPDError(f"{name} is not positive semidefinite") from exc


def _variance_shifted_utilities(mu, sigma_mat, x):
    return x @ mu + 0.5 * np.einsum("jk,jk->j", x @ sigma_mat, x)


def softmax_weights(mu, sigma_mat, x):
    """Variance-adjusted softmax weights w(mu, Sigma, x).

    Component j is proportional to exp(x_j'mu + x_j'Sigma x_j / 2),
    normalized to sum to one. With Sigma = 0 this reduces to the plain
    multinomial logit probabilities.
    """
    x = as_matrix(x, name="x")
    mu = as_vector(mu, k=x.shape[1], name="mu")
    sigma_mat = as_matrix(sigma_mat, rows=x.shape[1], cols=x.shape[1], name="sigma_mat")
    _check_psd(sigma_mat)
    return _softmax(_variance_shifted_utilities(mu, sigma_mat, x))


def expected_lse_d0(mu, sigma_mat, x):
    """Zeroth-order surrogate: log sum_j exp(x_j'mu + x_j'Sigma x_j / 2)."""
    x = as_matrix(x, name="x")
    mu = as_vector(mu, k=x.shape[1], name="mu")
    sigma_mat = as_matrix(sigma_mat, rows=x.shape[1], cols=x.shape[1], name="sigma_mat")
    _check_psd(sigma_mat)
    return float(logsumexp(_variance_shifted_utilities(mu, sigma_mat, x)))


def theta_diag(mu, x):
    """Diagonal of the Hessian of v -> log sum_j exp(x_j'v), at v = mu.

    With p = softmax(x mu), component k equals the variance of column k
    of x under p: sum_j p_j x_jk^2 - (sum_j p_j x_jk)^2. The softmax is
    computed with max subtraction; the common scale factor cancels in
    both terms.
    """
    x = as_matrix(x, name="x")
    mu = as_vector(mu, k=x.shape[1], name="mu")
    p = _softmax(x @ mu)
    xp = x.T @ p
    return (x * x).T @ p - xp * xp


def expected_lse_d1(mu, log_var, x):
    """First-order surrogate: lse(x mu) + theta(mu)' exp(log_var) / 2.

    ``log_var=None`` selects the exact zero-variance path and returns
    lse(x mu).
    """
    x = as_matrix(x, name="x")
    mu = as_vector(mu, k=x.shape[1], name="mu")
    base = float(logsumexp(x @ mu))
    if log_var is None:
        return base
    log_var = as_vector(log_var, k=x.shape[1], name="log_var")
    return base + 0.5 * float(theta_diag(mu, x) @ np.exp(log_var))


def _d1_mu_correction(p, x, var):
    """Gradient wrt mu of theta(mu)'var / 2, for one attribute matrix.

    p are the softmax weights at x mu and var = exp(log_var). Uses the
    row-space form: with b = x'p, the correction is x' m / 2 where
    m = p.(x.x var) - p (p'(x.x) var) + 2 p (b.b)'var - 2 p.(x (b.var)).
    """
    x2v = (x * x) @ var
    b = x.T @ p
    m = (p * x2v
         - p * (p @ x2v)
         + 2.0 * p * ((b * b) @ var)
         - 2.0 * p * (x @ (b * var)))
    return 0.5 * (x.T @ m)


def grad_expected_lse_d1_mu(mu, log_var, x):
    """Gradient of the first-order surrogate with respect to mu.

    Equals x' softmax(x mu) plus the mu-derivative of the variance
    correction. With ``log_var=None`` only the softmax term remains.
    """
    x = as_matrix(x, name="x")
    mu = as_vector(mu, k=x.shape[1], name="mu")
    p = _softmax(x @ mu)
    grad = x.T @ p
    if log_var is None:
        return grad
    log_var = as_vector(log_var, k=x.shape[1], name="log_var")
    return grad + _d1_mu_correction(p, x, np.exp(log_var))


def grad_expected_lse_d1_sigma(mu, log_var, x):
    """Gradient of the first-order surrogate with respect to log_var.

    The surrogate depends on log_var only through exp(log_var)'theta/2,
    so the gradient is theta(mu) * exp(log_var) / 2.
    """
    x = as_matrix(x, name="x")
    mu = as_vector(mu, k=x.shape[1], name="mu")
    log_var = as_vector(log_var, k=x.shape[1], name="log_var")
    return 0.5 * theta_diag(mu, x) * np.exp(log_var)
