"""Scikit-learn style estimator wrappers around the fitting routines.

Both estimators follow the sklearn contract: hyperparameters are stored
verbatim in ``__init__`` (so ``get_params``/``set_params``/``clone``
work), ``fit`` consumes a :class:`mixmnl.model.ChoiceDataset` and
returns ``self``, and fitted state lives in trailing-underscore
attributes. ``predict_proba`` returns the predictive choice
distribution at a new attribute matrix.
"""

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .elbo import elbo_eb, elbo_hb
from .evaluate import posterior_predictive_choice, predictive_choice
from .model import ChoiceDataset, Hyperpriors, PopulationParams
from .optimize import OptimizeSettings
from .vb import fit_vb
from .veb import fit_veb


def _check_dataset(X):
    if not isinstance(X, ChoiceDataset):
        raise TypeError(f"X must be a ChoiceDataset, got {type(X).__name__}")
    return X


class MixedLogitVEB(BaseEstimator):
    """Mixed multinomial logit fit by variational empirical Bayes.

    Parameters
    ----------
    approx : {"d1", "d0"}
        Surrogate for the expected log-sum-exp. "d1" (diagonal factor
        covariances, first-order correction) is the default; "d0" keeps
        full factor covariances and preserves the lower-bound property.
    rel_tol : float
        Relative joint-parameter change declaring EM convergence.
    max_em_iters, grad_tol, max_inner_iters : numeric
        Outer iteration cap and inner (per-agent) solver settings.
    threads : int
        Worker threads for the agent sweep; results are identical for
        any thread count.

    Attributes
    ----------
    zeta_, omega_ : fitted population mean and covariance.
    agents_var_ : per-agent variational factors.
    elbo_trace_ : objective values after each half-step (nondecreasing).
    n_iter_, converged_ : outer iteration count and convergence flag.
    """

    def __init__(self, approx="d1", rel_tol=1e-4, max_em_iters=500,
                 grad_tol=1e-6, max_inner_iters=200, threads=1):
        self.approx = approx
        self.rel_tol = rel_tol
        self.max_em_iters = max_em_iters
        self.grad_tol = grad_tol
        self.max_inner_iters = max_inner_iters
        self.threads = threads

    def _settings(self):
        return OptimizeSettings(grad_tol=self.grad_tol,
                                max_iters=self.max_inner_iters)

    def fit(self, X, y=None):
        X = _check_dataset(X)
        result = fit_veb(X, approx=self.approx, rel_tol=self.rel_tol,
                         max_em_iters=self.max_em_iters,
                         settings=self._settings(), threads=self.threads)
        self.result_ = result
        self.zeta_ = result.zeta_hat
        self.omega_ = result.omega_hat
        self.agents_var_ = result.agents_var
        self.elbo_trace_ = result.elbo_trace
        self.n_iter_ = result.em_iterations
        self.converged_ = result.converged
        return self

    def _check_fitted(self):
        if not hasattr(self, "zeta_"):
            raise NotFittedError("this MixedLogitVEB instance is not fitted yet")

    def population_params(self):
        self._check_fitted()
        return PopulationParams(self.zeta_, self.omega_)

    def predict_proba(self, x_new, ndraws=200_000, seed=0):
        """Predictive choice distribution at a J x K attribute matrix."""
        self._check_fitted()
        return predictive_choice(self.population_params(), x_new,
                                 ndraws=ndraws, seed=seed).probs

    def score(self, X, y=None):
        """Final objective value on ``X`` at the fitted state."""
        self._check_fitted()
        X = _check_dataset(X)
        return elbo_eb(self.agents_var_, self.population_params(), X,
                       approx=self.approx)


class MixedLogitVB(BaseEstimator):
    """Mixed multinomial logit fit by mean-field hierarchical Bayes.

    Accepts the same solver settings as :class:`MixedLogitVEB` plus
    optional hyperprior overrides; any override left as None falls back
    to the diffuse default (zero prior mean, 100 I mean-covariance,
    nu = K + 3, scale nu * I).

    Attributes
    ----------
    global_var_ : fitted population-mean and precision factors.
    agents_var_, elbo_trace_, n_iter_, converged_ : as for the EB fit.
    """

    def __init__(self, approx="d1", rel_tol=1e-4, max_iters=500,
                 grad_tol=1e-6, max_inner_iters=200, threads=1,
                 beta0=None, omega0=None, s_mat=None, nu=None):
        self.approx = approx
        self.rel_tol = rel_tol
        self.max_iters = max_iters
        self.grad_tol = grad_tol
        self.max_inner_iters = max_inner_iters
        self.threads = threads
        self.beta0 = beta0
        self.omega0 = omega0
        self.s_mat = s_mat
        self.nu = nu

    def _settings(self):
        return OptimizeSettings(grad_tol=self.grad_tol,
                                max_iters=self.max_inner_iters)

    def _hyperpriors(self, K):
        default = Hyperpriors.diffuse(K)
        nu = default.nu if self.nu is None else float(self.nu)
        s_mat = nu * np.eye(K) if (self.s_mat is None and self.nu is not None) \
            else default.s_mat
        return Hyperpriors(
            default.beta0 if self.beta0 is None else self.beta0,
            default.omega0 if self.omega0 is None else self.omega0,
            s_mat if self.s_mat is None else self.s_mat,
            nu,
        )

    def fit(self, X, y=None):
        X = _check_dataset(X)
        hyper = self._hyperpriors(X.K)
        result = fit_vb(X, hyper=hyper, approx=self.approx, rel_tol=self.rel_tol,
                        max_iters=self.max_iters, settings=self._settings(),
                        threads=self.threads)
        self.result_ = result
        self.hyperpriors_ = hyper
        self.global_var_ = result.global_var
        self.agents_var_ = result.agents_var
        self.elbo_trace_ = result.elbo_trace
        self.n_iter_ = result.iterations
        self.converged_ = result.converged
        return self

    def _check_fitted(self):
        if not hasattr(self, "global_var_"):
            raise NotFittedError("this MixedLogitVB instance is not fitted yet")

    def predict_proba(self, x_new, ndraws=200_000, seed=0):
        """Posterior-averaged predictive choice distribution at a J x K matrix."""
        self._check_fitted()
        return posterior_predictive_choice(self.global_var_, x_new,
                                           ndraws=ndraws, seed=seed).probs

    def score(self, X, y=None):
        """Final objective value on ``X`` at the fitted state."""
        self._check_fitted()
        X = _check_dataset(X)
        return elbo_hb(self.agents_var_, self.global_var_, self.hyperpriors_, X,
                       approx=self.approx)
