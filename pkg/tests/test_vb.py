"""Hierarchical Bayes: closed-form updates, reductions, coordinate ascent."""

import numpy as np
import pytest

from mixmnl.elbo import VariationalAgent, VariationalGlobal, elbo_hb
from mixmnl.model import AgentData, Hyperpriors, PopulationParams
from mixmnl.simulate import ScenarioConfig, simulate_dataset
from mixmnl.vb import (_mu_zeta_update, compute_omega, estep_agent_hb, fit_vb,
                       update_mu_zeta, update_sigma_zeta, update_upsilon)
from mixmnl.veb import _prior_precision, estep_agent

from conftest import random_dataset, random_population, random_spd


def _hyper(K, rng=None, omega0=None, s_mat=None, nu=None, beta0=None):
    rng = rng or np.random.default_rng(0)
    return Hyperpriors(
        np.zeros(K) if beta0 is None else beta0,
        np.eye(K) if omega0 is None else omega0,
        (K + 3.0) * np.eye(K) if s_mat is None else s_mat,
        K + 3.0 if nu is None else nu,
    )


class TestComputeOmega:
    def test_values(self):
        assert compute_omega(6.0, 250) == 256.0
        assert compute_omega(5.5, 0) == 5.5
        assert compute_omega(3.25, 17) == 20.25


class TestUpdateMuZeta:
    def test_fixed_point_at_prior_mean(self, rng):
        K = 3
        hyper = _hyper(K, beta0=rng.normal(0, 1, K))
        global_var = VariationalGlobal(np.zeros(K), np.eye(K),
                                       random_spd(rng, K, 0.3), K + 9.0)
        mus = [hyper.beta0 + d for d in (np.array([0.5, 0, -0.25]),
                                         np.array([-0.5, 0, 0.25]))]
        np.testing.assert_allclose(update_mu_zeta(hyper, global_var, mus),
                                   hyper.beta0, atol=1e-12)

    def test_flat_prior_limit_returns_mean(self, rng):
        # Zero prior precision (test hook): the update is the plain average
        # of the factor means.
        K = 2
        mus = rng.normal(0.0, 1.0, (5, K))
        mean_prec = random_spd(rng, K)
        out = _mu_zeta_update(np.zeros((K, K)), np.zeros(K), mean_prec,
                              mus.sum(axis=0), 5)
        np.testing.assert_allclose(out, mus.mean(axis=0), atol=1e-12)

    def test_scalar_oracle(self):
        # Unit prior precision, one agent with unit expected precision and
        # factor mean 2: (1 + 1)^-1 (0 + 2) = 1.
        hyper = _hyper(1, omega0=np.array([[1.0]]), nu=2.0, s_mat=np.array([[2.0]]))
        global_var = VariationalGlobal(np.zeros(1), np.eye(1),
                                       np.array([[0.25]]), 4.0)
        out = update_mu_zeta(hyper, global_var, [np.array([2.0])])
        np.testing.assert_allclose(out, [1.0], atol=1e-14)


class TestUpdateSigmaZeta:
    def test_unit_case(self):
        hyper = _hyper(2, omega0=np.eye(2))
        global_var = VariationalGlobal(np.zeros(2), np.eye(2), np.eye(2) / 8.0, 8.0)
        np.testing.assert_allclose(update_sigma_zeta(hyper, global_var, 1),
                                   0.5 * np.eye(2), atol=1e-14)

    def test_shrinks_with_agent_count(self, rng):
        hyper = _hyper(2, omega0=random_spd(rng, 2))
        global_var = VariationalGlobal(np.zeros(2), np.eye(2),
                                       random_spd(rng, 2, 0.2), 10.0)
        norms = [np.linalg.norm(update_sigma_zeta(hyper, global_var, H), ord=2)
                 for H in (1, 4, 16, 64, 256)]
        assert all(a > b for a, b in zip(norms, norms[1:]))

    def test_matches_explicit_2x2_inversion(self, rng):
        for _ in range(10):
            o0 = random_spd(rng, 2)
            ups = random_spd(rng, 2, 0.4)
            dof = 2 + rng.uniform(1, 6)
            H = int(rng.integers(1, 9))
            hyper = _hyper(2, omega0=o0)
            global_var = VariationalGlobal(np.zeros(2), np.eye(2), ups, dof)
            m = np.linalg.inv(o0) + H * dof * ups
            det = m[0, 0] * m[1, 1] - m[0, 1] * m[1, 0]
            explicit = np.array([[m[1, 1], -m[0, 1]], [-m[1, 0], m[0, 0]]]) / det
            np.testing.assert_allclose(update_sigma_zeta(hyper, global_var, H),
                                       explicit, atol=1e-10)


class TestUpdateUpsilon:
    def test_no_agents_returns_scale(self, rng):
        s = random_spd(rng, 2)
        hyper = _hyper(2, s_mat=s)
        global_var = VariationalGlobal(np.zeros(2), np.eye(2), np.eye(2), 6.0)
        np.testing.assert_allclose(update_upsilon(hyper, global_var, []), s,
                                   atol=1e-10)

    def test_vanishing_scatter_returns_scale(self, rng):
        s = random_spd(rng, 2)
        hyper = _hyper(2, s_mat=s)
        mu = rng.normal(0, 1, 2)
        global_var = VariationalGlobal(mu, 1e-300 * np.eye(2), np.eye(2), 6.0)
        agents = [VariationalAgent(mu, log_var=np.full(2, -700.0))] * 3
        np.testing.assert_allclose(update_upsilon(hyper, global_var, agents), s,
                                   atol=1e-10)

    def test_scalar_oracle(self):
        # 1/2 + 1 + 0.25 + 0.25 = 2, inverted: 0.5.
        hyper = _hyper(1, s_mat=np.array([[2.0]]), nu=2.0)
        global_var = VariationalGlobal(np.array([0.5]), np.array([[0.25]]),
                                       np.eye(1), 3.0)
        agents = [VariationalAgent(np.array([0.0]), log_var=np.array([0.0]))]
        np.testing.assert_allclose(update_upsilon(hyper, global_var, agents),
                                   [[0.5]], atol=1e-14)


class TestEstepAgentHB:
    def test_no_events_fixed_point(self, rng):
        # Without data the factor matches the expected population normal:
        # mean mu_zeta, covariance the inverse of omega_dof * upsilon.
        K = 2
        ups = random_spd(rng, K, 0.3)
        global_var = VariationalGlobal(rng.normal(0, 1, K), np.eye(K), ups, K + 7.0)
        agent = AgentData(np.zeros((0, 3, K)), np.zeros(0, dtype=int))
        current = VariationalAgent.isotropic(np.zeros(K), 0.04, "d0")
        var = estep_agent_hb(agent, global_var, current, approx="d0")
        np.testing.assert_allclose(var.mu, global_var.mu_zeta, atol=1e-5)
        np.testing.assert_allclose(var.cov(),
                                   np.linalg.inv(global_var.mean_precision()),
                                   atol=1e-4)

    def test_reduces_to_eb_update_exactly(self, rng):
        # With upsilon = population precision / omega_dof (omega_dof a power
        # of two) and mu_zeta = zeta, the two update paths see identical
        # inputs and must agree bitwise.
        K = 2
        params = random_population(rng, K)
        prec = _prior_precision(params)
        omega_dof = 256.0
        global_var = VariationalGlobal(params.zeta, np.eye(K), prec / omega_dof,
                                       omega_dof)
        x = rng.normal(0, 1, (6, 3, K))
        agent = AgentData(x, rng.integers(0, 3, 6))
        current = VariationalAgent(rng.normal(0, 1, K),
                                   log_var=rng.normal(-2, 0.3, K))
        out_eb = estep_agent(agent, params, current, approx="d1")
        out_hb = estep_agent_hb(agent, global_var, current, approx="d1")
        np.testing.assert_array_equal(out_eb.mu, out_hb.mu)
        np.testing.assert_array_equal(out_eb.log_var, out_hb.log_var)


class TestCoordinateAscent:
    def _partial_state(self, rng, H=6, iters=2):
        data = random_dataset(rng, H, 3, 2, 5)
        hyper = _hyper(2)
        fit = fit_vb(data, hyper=hyper, approx="d1", rel_tol=1e-12,
                     max_iters=iters)
        return data, hyper, fit

    def test_each_update_weakly_increases_objective(self, rng):
        data, hyper, fit = self._partial_state(rng)
        agents, g = fit.agents_var, fit.global_var
        base = elbo_hb(agents, g, hyper, data, "d1")

        g1 = VariationalGlobal(update_mu_zeta(hyper, g, [v.mu for v in agents]),
                               g.sigma_zeta, g.upsilon, g.omega_dof)
        e1 = elbo_hb(agents, g1, hyper, data, "d1")
        assert e1 >= base - 1e-10

        g2 = VariationalGlobal(g1.mu_zeta,
                               update_sigma_zeta(hyper, g1, data.H),
                               g1.upsilon, g1.omega_dof)
        e2 = elbo_hb(agents, g2, hyper, data, "d1")
        assert e2 >= e1 - 1e-10

        g3 = VariationalGlobal(g2.mu_zeta, g2.sigma_zeta,
                               update_upsilon(hyper, g2, agents), g2.omega_dof)
        e3 = elbo_hb(agents, g3, hyper, data, "d1")
        assert e3 >= e2 - 1e-10

    def test_global_updates_reach_a_stable_fixed_point(self, rng):
        # Cycling the three closed forms at frozen agent factors converges;
        # re-applying any single update then moves its block negligibly.
        data, hyper, fit = self._partial_state(rng)
        agents, g = fit.agents_var, fit.global_var
        for _ in range(300):
            g = VariationalGlobal(update_mu_zeta(hyper, g, [v.mu for v in agents]),
                                  g.sigma_zeta, g.upsilon, g.omega_dof)
            g = VariationalGlobal(g.mu_zeta, update_sigma_zeta(hyper, g, data.H),
                                  g.upsilon, g.omega_dof)
            g = VariationalGlobal(g.mu_zeta, g.sigma_zeta,
                                  update_upsilon(hyper, g, agents), g.omega_dof)
        new_mu = update_mu_zeta(hyper, g, [v.mu for v in agents])
        assert np.linalg.norm(new_mu - g.mu_zeta) <= 1e-8 * np.linalg.norm(g.mu_zeta)
        new_sz = update_sigma_zeta(hyper, g, data.H)
        assert np.linalg.norm(new_sz - g.sigma_zeta) <= 1e-8 * np.linalg.norm(g.sigma_zeta)
        new_up = update_upsilon(hyper, g, agents)
        assert np.linalg.norm(new_up - g.upsilon) <= 1e-8 * np.linalg.norm(g.upsilon)

    def test_omega_dof_fixed_at_nu_plus_h(self, rng):
        data = random_dataset(rng, 5, 3, 2, 4)
        hyper = _hyper(2)
        fit = fit_vb(data, hyper=hyper, approx="d1", rel_tol=1e-3, max_iters=50)
        assert fit.global_var.omega_dof == hyper.nu + data.H

    def test_trace_nondecreasing_and_matches_direct_objective(self, rng):
        data = random_dataset(rng, 6, 3, 2, 5)
        hyper = _hyper(2)
        fit = fit_vb(data, hyper=hyper, approx="d1", rel_tol=1e-3)
        trace = np.asarray(fit.elbo_trace)
        assert np.all(np.diff(trace) >= -1e-8 * np.abs(trace[:-1]))
        direct = elbo_hb(fit.agents_var, fit.global_var, hyper, data, "d1")
        assert direct == pytest.approx(fit.elbo_trace[-1], rel=1e-10, abs=1e-8)

    def test_thread_count_does_not_change_results(self, rng):
        data = random_dataset(rng, 6, 3, 2, 5)
        fit1 = fit_vb(data, approx="d1", rel_tol=1e-3, threads=1)
        fit4 = fit_vb(data, approx="d1", rel_tol=1e-3, threads=4)
        np.testing.assert_array_equal(fit1.global_var.mu_zeta,
                                      fit4.global_var.mu_zeta)
        np.testing.assert_array_equal(fit1.global_var.upsilon,
                                      fit4.global_var.upsilon)
        for v1, v4 in zip(fit1.agents_var, fit4.agents_var):
            np.testing.assert_array_equal(v1.mu, v4.mu)


class TestPriorDominance:
    def test_tight_prior_matches_fixed_mean_eb_fit(self):
        # Pinning the population mean at the truth through a near-degenerate
        # hyperprior: the posterior predictive must agree with an EB fit
        # whose population mean is held at the truth (only the covariance
        # re-estimated), within half a percentage point.
        from mixmnl.evaluate import posterior_predictive_choice, predictive_choice, tv_error
        from mixmnl.veb import init_homogeneous

        cfg = ScenarioConfig(J=3, K=3, H=100, heterogeneity="low", T=25, seed=9)
        data, truth = simulate_dataset(cfg)
        zeta_true = truth.params.zeta
        K = cfg.K

        hyper = Hyperpriors(zeta_true, 1e-10 * np.eye(K), (K + 3.0) * np.eye(K),
                            K + 3.0)
        vb = fit_vb(data, hyper=hyper, approx="d1", rel_tol=1e-3, threads=2)
        np.testing.assert_allclose(vb.global_var.mu_zeta, zeta_true, atol=1e-5)

        # EB oracle with the population mean frozen at the truth.
        beta_init = init_homogeneous(data)
        agents = [VariationalAgent.isotropic(beta_init, 0.01, "d1")] * data.H
        omega = np.eye(K)
        for _ in range(60):
            params = PopulationParams(zeta_true, omega)
            agents = [estep_agent(a, params, v, approx="d1")
                      for a, v in zip(data.agents, agents)]
            scatter = np.zeros((K, K))
            for v in agents:
                d = v.mu - zeta_true
                scatter += np.diag(np.exp(v.log_var)) + np.outer(d, d)
            omega_new = scatter / data.H
            if np.linalg.norm(omega_new - omega) < 1e-5 * np.linalg.norm(omega):
                omega = omega_new
                break
            omega = omega_new

        rng = np.random.default_rng(77)
        tvs = []
        for _ in range(5):
            x_new = rng.normal(0.0, 0.5, (3, K))
            post = posterior_predictive_choice(vb.global_var, x_new,
                                               ndraws=200_000, seed=3)
            plug = predictive_choice(PopulationParams(zeta_true, omega), x_new,
                                     ndraws=200_000, seed=4)
            tvs.append(tv_error(post.probs, plug.probs))
        assert np.median(tvs) <= 0.5
