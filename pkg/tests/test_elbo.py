"""Objective assembly: Gaussian/Wishart term oracles and structure checks."""

import numpy as np
import pytest
from scipy.special import digamma, gammaln

from mixmnl.elbo import (VariationalAgent, VariationalGlobal, elbo_eb, elbo_hb,
                         wishart_elogdet, wishart_lognorm)
from mixmnl.model import ChoiceDataset, Hyperpriors, log_likelihood_agent
from mixmnl.validation import NotSPDError

from conftest import (random_agent, random_dataset, random_lower,
                      random_population, random_spd)

EULER_GAMMA = 0.57721566490153286


def gaussian_kl(mu0, cov0, mu1, cov1):
    """Closed-form KL divergence between two multivariate normals."""
    K = len(mu0)
    cov1_inv = np.linalg.inv(cov1)
    d = mu1 - mu0
    return 0.5 * (np.trace(cov1_inv @ cov0) + d @ cov1_inv @ d - K
                  + np.log(np.linalg.det(cov1) / np.linalg.det(cov0)))


def _empty_dataset(rng, K, J=3):
    agent = random_agent(rng, J, K, 0)
    return ChoiceDataset([agent], J, K)


class TestVariationalTypes:
    def test_exactly_one_parameterization(self):
        with pytest.raises(ValueError):
            VariationalAgent(np.zeros(2))
        with pytest.raises(ValueError):
            VariationalAgent(np.zeros(2), cov_factor=np.eye(2), log_var=np.zeros(2))

    def test_factor_must_be_lower_with_positive_diagonal(self):
        with pytest.raises(ValueError):
            VariationalAgent(np.zeros(2), cov_factor=np.array([[1.0, 0.5], [0.0, 1.0]]))
        with pytest.raises(ValueError):
            VariationalAgent(np.zeros(2), cov_factor=np.diag([1.0, -1.0]))

    def test_cov_and_logdet(self, rng):
        L = random_lower(rng, 3)
        var = VariationalAgent(np.zeros(3), cov_factor=L)
        np.testing.assert_allclose(var.cov(), L @ L.T)
        assert var.logdet_cov() == pytest.approx(np.log(np.linalg.det(L @ L.T)))
        sig = rng.normal(0, 1, 3)
        var = VariationalAgent(np.zeros(3), log_var=sig)
        np.testing.assert_allclose(var.cov(), np.diag(np.exp(sig)))
        assert var.logdet_cov() == pytest.approx(sig.sum())

    def test_global_validation(self):
        with pytest.raises(NotSPDError):
            VariationalGlobal(np.zeros(2), -np.eye(2), np.eye(2), 5.0)
        with pytest.raises(ValueError):
            VariationalGlobal(np.zeros(2), np.eye(2), np.eye(2), 0.5)


class TestElboEB:
    def test_zero_kl_at_matching_factor(self, rng):
        # One agent, no events, factor equal to the population normal.
        K = 3
        params = random_population(rng, K)
        data = _empty_dataset(rng, K)
        L = np.linalg.cholesky(params.omega_mat)
        var = VariationalAgent(params.zeta, cov_factor=L)
        assert elbo_eb([var], params, data, "d0") == pytest.approx(0.0, abs=1e-12)

    def test_equals_negative_gaussian_kl(self, rng):
        # With no events the objective is minus the KL divergence between
        # the factor and the population normal, for both representations.
        for _ in range(10):
            K = int(rng.integers(1, 5))
            params = random_population(rng, K)
            data = _empty_dataset(rng, K)
            mu = rng.normal(0.0, 1.0, K)
            L = random_lower(rng, K)
            var = VariationalAgent(mu, cov_factor=L)
            expected = -gaussian_kl(mu, L @ L.T, params.zeta, params.omega_mat)
            assert elbo_eb([var], params, data, "d0") == pytest.approx(expected,
                                                                       abs=1e-10)
            sig = rng.normal(-1.0, 0.5, K)
            var = VariationalAgent(mu, log_var=sig)
            expected = -gaussian_kl(mu, np.diag(np.exp(sig)), params.zeta,
                                    params.omega_mat)
            assert elbo_eb([var], params, data, "d1") == pytest.approx(expected,
                                                                       abs=1e-10)

    def test_degenerate_variance_recovers_exact_likelihood(self, rng):
        # With a nearly-zero covariance the surrogate likelihood term is the
        # exact choice log likelihood at the factor mean; subtracting the
        # analytic entropy and prior terms isolates it.
        K, J = 2, 3
        agent = random_agent(rng, J, K, 1)
        data = ChoiceDataset([agent], J, K)
        params = random_population(rng, K)
        mu = rng.normal(0.0, 1.0, K)
        eps = 1e-8
        var = VariationalAgent(mu, cov_factor=eps * np.eye(K))
        total = elbo_eb([var], params, data, "d0")
        entropy = 0.5 * (K * np.log(2 * np.e * np.pi) + 2 * K * np.log(eps))
        omega_inv = np.linalg.inv(params.omega_mat)
        d = mu - params.zeta
        cross = -0.5 * (K * np.log(2 * np.pi)
                        + np.log(np.linalg.det(params.omega_mat))
                        + np.trace(omega_inv @ (eps**2 * np.eye(K)))
                        + d @ omega_inv @ d)
        assert total - entropy - cross == pytest.approx(
            log_likelihood_agent(agent, mu), abs=1e-9)

    def test_depends_on_factor_only_through_covariance(self, rng):
        # Right-rotating the factor and re-canonicalizing leaves the
        # objective unchanged: it is a function of L L' alone.
        K = 3
        params = random_population(rng, K)
        data = random_dataset(rng, 2, 3, K, 4)
        L = random_lower(rng, K)
        q, _ = np.linalg.qr(rng.normal(0.0, 1.0, (K, K)))
        recanonical = np.linalg.cholesky((L @ q) @ (L @ q).T)
        vars_a = [VariationalAgent(np.zeros(K), cov_factor=L)] * 2
        vars_b = [VariationalAgent(np.zeros(K), cov_factor=recanonical)] * 2
        assert elbo_eb(vars_a, params, data, "d0") == pytest.approx(
            elbo_eb(vars_b, params, data, "d0"), abs=1e-10)

    def test_kind_mismatch_raises(self, rng):
        K = 2
        params = random_population(rng, K)
        data = _empty_dataset(rng, K)
        var = VariationalAgent(np.zeros(K), log_var=np.zeros(K))
        with pytest.raises(ValueError):
            elbo_eb([var], params, data, "d0")


class TestWishartHelpers:
    def test_elogdet_scalar_oracle(self):
        # K = 1, scale 1/2, dof 2: log(2 * 1/2) + digamma(1) = -Euler gamma.
        assert wishart_elogdet(2.0, np.array([[0.5]])) == pytest.approx(
            -EULER_GAMMA, abs=1e-12)

    def test_elogdet_scaling_identity(self, rng):
        for _ in range(10):
            K = int(rng.integers(1, 5))
            ups = random_spd(rng, K)
            dof = K + rng.uniform(0.5, 4.0)
            c = rng.uniform(0.2, 5.0)
            assert wishart_elogdet(dof, c * ups) == pytest.approx(
                wishart_elogdet(dof, ups) + K * np.log(c), abs=1e-10)

    def test_elogdet_k2_digamma_oracle(self):
        expected = np.log(4.0) + digamma(2.5) + digamma(2.0)
        assert wishart_elogdet(5.0, np.eye(2)) == pytest.approx(expected, abs=1e-12)

    def test_lognorm_scalar_oracle(self):
        # K = 1, dof 1, scale 1: log[2^(1/2) Gamma(1/2)].
        expected = 0.5 * np.log(2.0) + 0.5 * np.log(np.pi)
        assert wishart_lognorm(1.0, np.array([[1.0]])) == pytest.approx(expected,
                                                                        abs=1e-12)

    def test_lognorm_scaling_identity(self, rng):
        for _ in range(10):
            K = int(rng.integers(1, 5))
            ups = random_spd(rng, K)
            dof = K + rng.uniform(0.5, 4.0)
            c = rng.uniform(0.2, 5.0)
            assert wishart_lognorm(dof, c * ups) == pytest.approx(
                wishart_lognorm(dof, ups) + 0.5 * dof * K * np.log(c), abs=1e-10)

    def test_lognorm_k2_gamma_oracle(self):
        expected = (4.0 * np.log(2.0) + 0.5 * np.log(np.pi)
                    + gammaln(2.0) + gammaln(1.5))
        assert wishart_lognorm(4.0, np.eye(2)) == pytest.approx(expected, abs=1e-12)

    def test_domain_violations(self):
        with pytest.raises(ValueError):
            wishart_elogdet(0.5, np.eye(2))
        with pytest.raises(ValueError):
            wishart_lognorm(1.0, np.eye(2))


def reference_elbo_hb(agents_var, global_var, hyper, data, approx):
    """Independent summation of the objective, term by term, with plain
    dense linear algebra and explicit special-function formulas."""
    K, H = data.K, data.H
    mu_z, sig_z = global_var.mu_zeta, global_var.sigma_zeta
    ups, w = global_var.upsilon, global_var.omega_dof

    def wish_elogdet(dof, scale):
        val = K * np.log(2.0) + np.log(np.linalg.det(scale))
        return val + sum(digamma((dof + 1 - i) / 2.0) for i in range(1, K + 1))

    def wish_lognorm(dof, scale):
        val = 0.5 * dof * K * np.log(2.0) + 0.25 * K * (K - 1) * np.log(np.pi)
        val += sum(gammaln((dof + 1 - i) / 2.0) for i in range(1, K + 1))
        return val + 0.5 * dof * np.log(np.linalg.det(scale))

    dvu = wish_elogdet(w, ups)
    total = 0.0
    # Per-agent entropies.
    for var in agents_var:
        total += 0.5 * np.log((2 * np.pi * np.e) ** K * np.linalg.det(var.cov()))
    # Entropies of the population factors.
    total += 0.5 * np.log((2 * np.pi * np.e) ** K * np.linalg.det(sig_z))
    total += -0.5 * (w - K - 1) * dvu + 0.5 * w * K + wish_lognorm(w, ups)
    # Cross entropies against the hyperpriors.
    o0_inv = np.linalg.inv(hyper.omega0)
    d = mu_z - hyper.beta0
    total -= 0.5 * (np.log((2 * np.pi) ** K * np.linalg.det(hyper.omega0))
                    + np.trace(o0_inv @ (sig_z + np.outer(d, d))))
    s_inv = np.linalg.inv(hyper.s_mat)
    total += (-wish_lognorm(hyper.nu, s_inv) + 0.5 * (hyper.nu - K - 1) * dvu
              - 0.5 * w * np.trace(s_inv @ ups))
    # Expected population cross entropy for the agents.
    scatter = H * sig_z.copy()
    for var in agents_var:
        dd = mu_z - var.mu
        scatter += var.cov() + np.outer(dd, dd)
    total += -0.5 * H * (K * np.log(2 * np.pi) - dvu) - 0.5 * w * np.trace(ups @ scatter)
    # Surrogate expected log likelihood.
    from mixmnl.approx import expected_lse_d0, expected_lse_d1
    for var, agent in zip(agents_var, data.agents):
        for t in range(agent.T):
            total += agent.x[t, agent.y[t]] @ var.mu
            if approx == "d0":
                total -= expected_lse_d0(var.mu, var.cov(), agent.x[t])
            else:
                total -= expected_lse_d1(var.mu, var.log_var, agent.x[t])
    return total


def _random_hb_state(rng, K, H, approx):
    agents = []
    for _ in range(H):
        mu = rng.normal(0.0, 1.0, K)
        if approx == "d0":
            agents.append(VariationalAgent(mu, cov_factor=random_lower(rng, K)))
        else:
            agents.append(VariationalAgent(mu, log_var=rng.normal(-1.0, 0.5, K)))
    global_var = VariationalGlobal(rng.normal(0.0, 1.0, K), random_spd(rng, K, 0.5),
                                   random_spd(rng, K, 0.3), K + rng.uniform(1.0, 5.0) + H)
    hyper = Hyperpriors(rng.normal(0.0, 1.0, K), random_spd(rng, K),
                        random_spd(rng, K), K + rng.uniform(1.0, 3.0))
    return agents, global_var, hyper


class TestElboHB:
    def test_matches_independent_summation(self, rng):
        for approx in ("d0", "d1"):
            for _ in range(5):
                K, H, T = int(rng.integers(1, 4)), int(rng.integers(1, 4)), 3
                data = random_dataset(rng, H, 3, K, T)
                agents, global_var, hyper = _random_hb_state(rng, K, H, approx)
                ours = elbo_hb(agents, global_var, hyper, data, approx)
                ref = reference_elbo_hb(agents, global_var, hyper, data, approx)
                assert ours == pytest.approx(ref, rel=1e-10, abs=1e-9)

    def test_duplicating_agent_adds_its_share(self, rng):
        # The objective is a sum of per-agent contributions plus global
        # bookkeeping; duplicating one agent adds exactly its contribution.
        K, T = 2, 3
        data = random_dataset(rng, 2, 3, K, T)
        agents, global_var, hyper = _random_hb_state(rng, K, 2, "d1")
        base = elbo_hb(agents, global_var, hyper, data, "d1")
        data_dup = ChoiceDataset(data.agents + [data.agents[1]], 3, K)
        dup = elbo_hb(agents + [agents[1]], global_var, hyper, data_dup, "d1")
        delta_ref = (reference_elbo_hb(agents + [agents[1]], global_var, hyper,
                                       data_dup, "d1")
                     - reference_elbo_hb(agents, global_var, hyper, data, "d1"))
        assert dup - base == pytest.approx(delta_ref, abs=1e-9)

    def test_bookkeeping_when_quadratics_vanish(self, rng):
        # Means pinned to the prior mean and vanishing covariances: the value
        # reduces to entropy/normalizer bookkeeping plus the likelihood term,
        # summed by hand.
        K, H = 2, 3
        data = _empty_dataset(rng, K)
        data = ChoiceDataset([data.agents[0]] * H, 3, K)
        beta0 = rng.normal(0.0, 1.0, K)
        hyper = Hyperpriors(beta0, random_spd(rng, K), random_spd(rng, K), K + 2.0)
        eps = 1e-12
        agents = [VariationalAgent(beta0, log_var=np.full(K, np.log(eps)))] * H
        global_var = VariationalGlobal(beta0, eps * np.eye(K),
                                       random_spd(rng, K, 0.3), hyper.nu + H)
        ours = elbo_hb(agents, global_var, hyper, data, "d1")
        ref = reference_elbo_hb(agents, global_var, hyper, data, "d1")
        assert ours == pytest.approx(ref, rel=1e-9)
