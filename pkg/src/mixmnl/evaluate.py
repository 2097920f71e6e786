"""Predictive choice distributions, total-variation error, and benchmarking.

The predictive choice distribution at a new attribute matrix is the
population average of the multinomial logit probabilities,
E[mnl(x_new, beta)] with beta drawn from the population normal. For a
point estimate (truth, or an empirical Bayes fit) the average is a
plain Monte Carlo integral; for a posterior fit it additionally
averages over the fitted population-mean and population-precision
factors, one population draw per preference draw.

Accuracy is summarized by the total variation distance between the
estimated and true predictive distributions, reported in percentage
points: tv = 100 * sum_j |p_j - q_j| / 2, which for discrete
distributions equals the largest probability discrepancy over item
subsets.

``benchmark_scenario`` draws a panel of random attribute matrices,
evaluates every method on each, and reports all methods at the design
where the reference method attains its median error. Evaluations are
seeded by the design index together with a digest of the parameters
being integrated, so runs are reproducible, distinct estimates use
independent streams, and identical estimates share draws (an estimate
equal to the truth scores exactly zero).
"""

import hashlib
from dataclasses import dataclass

import numpy as np
from scipy.stats import wishart

from .elbo import VariationalGlobal
from .model import PopulationParams, mnl_choice_prob
from .validation import as_matrix, check_simplex, psd_factor, spd_cholesky


@dataclass(frozen=True)
class PredictiveEstimate:
    """Monte Carlo estimate of a predictive choice distribution.

    ``se`` holds the per-component Monte Carlo standard error, so users
    can check that the draw count does not limit their conclusions.
    """

    probs: np.ndarray
    se: np.ndarray


def _mc_average(prob_draws):
    n = prob_draws.shape[0]
    probs = prob_draws.mean(axis=0)
    se = prob_draws.std(axis=0, ddof=1) / np.sqrt(n) if n > 1 else np.zeros_like(probs)
    return PredictiveEstimate(probs, se)


def _softmax_rows(u):
    u = u - u.max(axis=1, keepdims=True)
    e = np.exp(u)
    return e / e.sum(axis=1, keepdims=True)


def predictive_choice(params, x_new, ndraws=200_000, seed=0):
    """Predictive choice distribution under known population parameters.

    Averages mnl(x_new, beta) over ``ndraws`` draws beta ~ N(zeta,
    omega_mat). Deterministic given ``seed``. A population with exactly
    zero covariance short-circuits to the closed form mnl(x_new, zeta).
    """
    if ndraws < 1:
        raise ValueError("ndraws must be >= 1")
    x_new = as_matrix(x_new, cols=params.K, name="x_new")
    if not params.omega_mat.any():
        probs = mnl_choice_prob(x_new, params.zeta)
        return PredictiveEstimate(probs, np.zeros_like(probs))
    rng = np.random.default_rng(seed)
    factor = psd_factor(params.omega_mat, name="omega_mat")
    betas = params.zeta + rng.standard_normal((ndraws, params.K)) @ factor.T
    return _mc_average(_softmax_rows(betas @ x_new.T))


def posterior_predictive_choice(global_var, x_new, ndraws=200_000, seed=0):
    """Predictive choice distribution under the fitted posterior factors.

    Per draw: a population mean from N(mu_zeta, sigma_zeta), a
    population precision from Wishart(upsilon, omega_dof), then one
    preference vector and its choice probabilities. The nested
    integrals collapse into this single chain of ``ndraws`` draws.
    """
    if ndraws < 1:
        raise ValueError("ndraws must be >= 1")
    K = global_var.K
    x_new = as_matrix(x_new, cols=K, name="x_new")
    rng = np.random.default_rng(seed)
    zeta_factor = spd_cholesky(global_var.sigma_zeta, name="sigma_zeta")
    zetas = global_var.mu_zeta + rng.standard_normal((ndraws, K)) @ zeta_factor.T
    precisions = wishart.rvs(df=global_var.omega_dof, scale=global_var.upsilon,
                             size=ndraws, random_state=rng)
    precisions = np.asarray(precisions).reshape(ndraws, K, K)
    cov_factors = np.linalg.cholesky(np.linalg.inv(precisions))
    noise = rng.standard_normal((ndraws, K))
    betas = zetas + np.einsum("nkl,nl->nk", cov_factors, noise)
    return _mc_average(_softmax_rows(betas @ x_new.T))


def tv_error(p, q):
    """Total variation distance between two choice distributions, in percentage points."""
    p = check_simplex(p, name="p")
    q = check_simplex(q, name="q")
    if p.shape != q.shape:
        raise ValueError(f"distributions have different lengths {p.shape} vs {q.shape}")
    return 100.0 * 0.5 * float(np.abs(p - q).sum())


def ternary_coordinates(p):
    """Planar coordinates of a 3-outcome distribution in the unit triangle."""
    p = check_simplex(p, name="p")
    if p.shape[0] != 3:
        raise ValueError("ternary coordinates require exactly 3 outcomes")
    return np.array([p[1] + 0.5 * p[2], 0.5 * np.sqrt(3.0) * p[2]])


@dataclass
class PredictiveReport:
    """Truth and estimates of the predictive distribution at one design."""

    x_new: np.ndarray
    truth: PredictiveEstimate
    estimates: dict
    tv_errors: dict


@dataclass
class BenchmarkResult:
    """Per-design reports plus the median-design summary."""

    reports: list
    reference: str
    median_index: int

    @property
    def median_report(self):
        return self.reports[self.median_index]

    def median_tv(self):
        return dict(self.median_report.tv_errors)

    def to_dict(self):
        """JSON-ready form: per-design errors, the median design, and, for
        three-item problems, triangle-plot coordinates of each distribution."""
        designs = []
        for i, rep in enumerate(self.reports):
            designs.append({
                "design": i,
                "x_new": rep.x_new.tolist(),
                "truth": rep.truth.probs.tolist(),
                "truth_mc_se": rep.truth.se.tolist(),
                "estimates": {m: e.probs.tolist() for m, e in rep.estimates.items()},
                "estimate_mc_se": {m: e.se.tolist() for m, e in rep.estimates.items()},
                "tv_pp": rep.tv_errors,
            })
        out = {
            "reference": self.reference,
            "median_design": self.median_index,
            "median_tv_pp": self.median_tv(),
            "designs": designs,
        }
        med = self.median_report
        if med.truth.probs.shape[0] == 3:
            coords = {"truth": ternary_coordinates(med.truth.probs).tolist()}
            for m, e in med.estimates.items():
                coords[m] = ternary_coordinates(e.probs).tolist()
            out["median_simplex_xy"] = coords
        return out


def _estimate_digest(est):
    h = hashlib.sha256()
    if isinstance(est, PopulationParams):
        h.update(b"population")
        h.update(est.zeta.tobytes())
        h.update(est.omega_mat.tobytes())
    elif isinstance(est, VariationalGlobal):
        h.update(b"posterior")
        h.update(est.mu_zeta.tobytes())
        h.update(est.sigma_zeta.tobytes())
        h.update(est.upsilon.tobytes())
        h.update(np.float64(est.omega_dof).tobytes())
    else:
        raise TypeError(f"cannot evaluate estimate of type {type(est).__name__}")
    return int.from_bytes(h.digest()[:8], "big")


def _evaluate_estimate(est, x_new, ndraws, seed, design):
    stream = np.random.SeedSequence(entropy=seed,
                                    spawn_key=(design, _estimate_digest(est)))
    if isinstance(est, PopulationParams):
        return predictive_choice(est, x_new, ndraws=ndraws, seed=stream)
    return posterior_predictive_choice(est, x_new, ndraws=ndraws, seed=stream)


def benchmark_scenario(estimates, truth, J, n_designs=25, x_sd=0.5,
                       ndraws=200_000, seed=0, reference=None):
    """Evaluate fitted estimates against the truth over random designs.

    Parameters
    ----------
    estimates : dict
        Method name -> PopulationParams (plug-in) or VariationalGlobal
        (posterior average).
    truth : PopulationParams
    J : int
        Item count of the new attribute matrices.
    reference : str, optional
        Method whose errors define the median design; defaults to "veb"
        when present, else the first method.

    Returns
    -------
    BenchmarkResult. The median design is the ceil(n/2)-th order
    statistic of the reference errors (ties broken by design index).
    """
    if not estimates:
        raise ValueError("estimates must contain at least one method")
    if n_designs < 1:
        raise ValueError("n_designs must be >= 1")
    for name, est in estimates.items():
        if est.K != truth.K:
            raise ValueError(f"estimate {name!r} has K={est.K}, truth has K={truth.K}")
    if reference is None:
        reference = "veb" if "veb" in estimates else next(iter(estimates))
    if reference not in estimates:
        raise ValueError(f"reference {reference!r} is not among the estimates")

    reports = []
    for d in range(n_designs):
        rng = np.random.default_rng(np.random.SeedSequence(entropy=seed,
                                                           spawn_key=(d,)))
        x_new = rng.normal(0.0, x_sd, size=(J, truth.K))
        cache = {}

        def evaluate(est):
            key = _estimate_digest(est)
            if key not in cache:
                cache[key] = _evaluate_estimate(est, x_new, ndraws, seed, d)
            return cache[key]

        truth_est = evaluate(truth)
        method_ests = {name: evaluate(est) for name, est in estimates.items()}
        tv = {name: tv_error(est.probs, truth_est.probs)
              for name, est in method_ests.items()}
        reports.append(PredictiveReport(x_new, truth_est, method_ests, tv))

    order = sorted(range(n_designs),
                   key=lambda i: (reports[i].tv_errors[reference], i))
    median_index = order[(n_designs - 1) // 2]
    return BenchmarkResult(reports, reference, median_index)
