"""VEM engine tests.

Oracles used here:
  * central finite differences of the public elbo (exact for its polynomial
    part) to verify the fixed-point scores,
  * hand-solved M-step instances with closed-form optima,
  * a from-scratch reference VEM for a single network,
  * the exact likelihood enumerator at Q=1 where the bound is tight.
"""
import numpy as np
import pytest
from sklearn.metrics import adjusted_rand_score

from jointsbm import vem
from jointsbm.likelihood import elbo, entropy, exact_loglik_oracle, sufficient_stats
from jointsbm.model import (
    ColSbmParams,
    Network,
    NetworkCollection,
    SufficientStats,
    VariationalState,
    full_support,
    validate_params,
    validate_state,
)
from jointsbm.vem import Fit, VemConfig, m_step, run_vem, split_merge_candidates, ve_step

from helpers import rand_instance, rand_params, rand_state

CFG = VemConfig()


def _softmax_rows(L):
    L = L - L.max(axis=1, keepdims=True)
    E = np.exp(L)
    return E / E.sum(axis=1, keepdims=True)


def _planted_network(rng, z, alpha, directed=True, scale=1.0):
    n = len(z)
    P = scale * alpha[np.ix_(z, z)]
    X = (rng.random((n, n)) < P).astype(float)
    if not directed:
        X = np.triu(X, 1)
        X = X + X.T
    np.fill_diagonal(X, 0.0)
    return Network(adjacency=X, directed=directed)


class TestVeStep:
    def test_one_sweep_matches_elbo_gradient(self):
        # one fixed-point sweep must be softmax of the gradient of the
        # non-entropy elbo part; central differences are exact there
        rng = np.random.default_rng(5)
        for emission in ("bernoulli", "poisson"):
            for directed in (True, False):
                n, Q = 6, 2
                params = rand_params(rng, 1, Q, emission, variant="pi",
                                     S=np.ones((1, Q), bool))
                if not directed:
                    sym = (params.alpha + params.alpha.T) / 2
                    params = ColSbmParams(variant="pi", pi=params.pi, alpha=sym,
                                          delta=params.delta, support=params.support)
                net = _planted_network(rng, rng.integers(Q, size=n),
                                       np.full((Q, Q), 0.4), directed=directed)
                if emission == "poisson":
                    X = rng.poisson(1.5, size=(n, n)).astype(float)
                    if not directed:
                        X = np.triu(X, 1)
                        X = X + X.T
                    np.fill_diagonal(X, 0.0)
                    net = Network(adjacency=X, directed=directed)
                coll = NetworkCollection(networks=(net,), emission=emission)
                tau0 = rng.dirichlet(np.ones(Q), size=n)

                h = 1e-5
                grad = np.zeros_like(tau0)
                for i in range(n):
                    for q in range(Q):
                        up, dn = tau0.copy(), tau0.copy()
                        up[i, q] += h
                        dn[i, q] -= h
                        f_up = elbo(coll, VariationalState(tau=(up,)), params) \
                            - entropy(VariationalState(tau=(up,)))
                        f_dn = elbo(coll, VariationalState(tau=(dn,)), params) \
                            - entropy(VariationalState(tau=(dn,)))
                        grad[i, q] = (f_up - f_dn) / (2 * h)
                expected = _softmax_rows(grad)

                out = ve_step(net, params, tau0,
                              VemConfig(fixed_point_max_iter=1, fixed_point_tol=1e-12),
                              emission=emission)
                assert np.allclose(out, expected, atol=1e-6), (emission, directed)

    def test_rows_normalized_and_off_support_zero(self):
        rng = np.random.default_rng(11)
        S = np.array([[True, True, False]])
        params = rand_params(rng, 1, 3, "bernoulli", variant="pi", S=S)
        net = _planted_network(rng, rng.integers(2, size=8), np.full((3, 3), 0.3))
        tau0 = rng.dirichlet(np.ones(3), size=8)
        out = ve_step(net, params, tau0, CFG, emission="bernoulli")
        assert np.allclose(out.sum(axis=1), 1.0)
        assert np.all(out[:, 2] == 0.0)

    def test_never_decreases_local_elbo(self):
        rng = np.random.default_rng(17)
        for _ in range(20):
            coll, state, params = rand_instance(rng, M=1)
            out = ve_step(coll.networks[0], params, state.tau[0], CFG,
                          emission=coll.emission)
            before = elbo(coll, state, params)
            after = elbo(coll, VariationalState(tau=(out,)), params)
            assert after >= before - 1e-9


class TestMStep:
    def test_hand_counted_bernoulli_iid(self):
        # z = (0, 0, 1): e/n per block pair counted by hand
        X = np.array([[0, 1, 1], [0, 0, 0], [1, 0, 0]], dtype=float)
        net = Network(adjacency=X, directed=True)
        coll = NetworkCollection(networks=(net,), emission="bernoulli")
        tau = np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
        state = VariationalState(tau=(tau,))
        prev = ColSbmParams(variant="iid", pi=np.full((1, 2), 0.5),
                            alpha=np.full((2, 2), 0.25), delta=np.ones(1),
                            support=full_support(1, 2))
        got = m_step(coll, state, "iid", full_support(1, 2), prev)
        assert np.allclose(got.alpha[0, 0], 0.5)   # 1 edge over 2 dyads
        assert np.allclose(got.alpha[0, 1], 0.5)
        assert np.allclose(got.alpha[1, 0], 0.5)
        assert np.allclose(got.alpha[1, 1], 0.25)  # empty block keeps previous
        expected_pi = np.array([2 / 3, 1 / 3])
        assert np.allclose(got.pi[0], expected_pi, atol=1e-3)

    def test_poisson_scale_closed_form(self):
        # Q=1, M=2 decouples: alpha = e1/n1 and delta2 = (e2/n2)/(e1/n1)
        stats = SufficientStats(
            e=np.array([[[3.0]], [[8.0]]]),
            n=np.array([[[10.0]], [[20.0]]]),
            nq=np.array([[10.0], [20.0]]),
        )
        prev = ColSbmParams(variant="delta", pi=np.ones((2, 1)),
                            alpha=np.array([[0.5]]), delta=np.ones(2),
                            support=full_support(2, 1))
        alpha, delta = vem._alternating_scale_update(
            stats, full_support(2, 1), prev, "poisson")
        assert np.allclose(alpha[0, 0], 0.3, atol=1e-6)
        assert np.allclose(delta, [1.0, (8 / 20) / 0.3], atol=1e-6)

    def test_bernoulli_scale_closed_form(self):
        # Q=1, M=2: products decouple, so alpha = 0.3 and delta2*alpha = 0.8
        stats = SufficientStats(
            e=np.array([[[3.0]], [[16.0]]]),
            n=np.array([[[10.0]], [[20.0]]]),
            nq=np.array([[10.0], [20.0]]),
        )
        prev = ColSbmParams(variant="delta", pi=np.ones((2, 1)),
                            alpha=np.array([[0.5]]), delta=np.ones(2),
                            support=full_support(2, 1))
        alpha, delta = vem._alternating_scale_update(
            stats, full_support(2, 1), prev, "bernoulli")
        assert np.allclose(alpha[0, 0], 0.3, atol=1e-5)
        assert np.allclose(delta[1] * alpha[0, 0], 0.8, atol=1e-5)
        # strict refinement may not leave the optimum
        a2, d2 = vem._refine_scale_bernoulli(stats, full_support(2, 1), alpha, delta)
        obj = vem._emission_part(stats, a2, d2, "bernoulli")
        best = 3 * np.log(0.3) + 7 * np.log(0.7) + 16 * np.log(0.8) + 4 * np.log(0.2)
        assert obj >= best - 1e-6
        assert obj <= best + 1e-9

    @pytest.mark.parametrize("variant", ["iid", "pi", "delta", "deltapi"])
    def test_never_decreases_elbo(self, variant):
        rng = np.random.default_rng(29)
        for _ in range(12):
            coll, state, params = rand_instance(rng, variant=variant)
            new = m_step(coll, state, variant, params.support, params)
            before = elbo(coll, state, params)
            after = elbo(coll, state, new)
            assert after >= before - 1e-9, variant
            validate_params(new, coll.emission)


class TestRunVem:
    def test_elbo_trace_monotone_and_consistent(self):
        rng = np.random.default_rng(41)
        for k in range(24):
            coll, state, params = rand_instance(rng)
            fit = run_vem(coll, params.variant, params.Q, params.support, state,
                          VemConfig(seed=k))
            trace = np.array(fit.elbo_trace)
            assert np.all(np.diff(trace) >= -1e-8)
            assert fit.elbo == trace[-1]
            recomputed = elbo(coll, fit.state, fit.params)
            assert abs(recomputed - fit.elbo) <= 1e-7 * max(1.0, abs(fit.elbo))
            validate_params(fit.params, coll.emission)
            validate_state(fit.state, fit.params.support)
        assert vem.MONOTONICITY_VIOLATIONS == []

    def test_q1_equals_exact_loglik(self):
        rng = np.random.default_rng(43)
        for emission in ("bernoulli", "poisson"):
            for directed in (True, False):
                coll, _, _ = rand_instance(rng, M=2, n_max=7, q_max=1,
                                           emission=emission, directed=directed)
                ones = VariationalState(tau=tuple(np.ones((net.n, 1))
                                                  for net in coll.networks))
                fit = run_vem(coll, "iid", 1, full_support(2, 1), ones, CFG)
                exact = exact_loglik_oracle(coll, fit.params)
                assert abs(fit.elbo - exact) < 1e-9

    def test_recovers_planted_blocks(self):
        rng = np.random.default_rng(47)
        alpha = np.array([[0.85, 0.10], [0.15, 0.80]])
        z = [rng.integers(2, size=60) for _ in range(2)]
        nets = tuple(_planted_network(rng, zm, alpha) for zm in z)
        coll = NetworkCollection(networks=nets, emission="bernoulli")
        init = VariationalState(tau=tuple(
            vem.spectral_tau(net, 2, seed=3) for net in nets))
        fit = run_vem(coll, "iid", 2, full_support(2, 2), init, CFG)
        for m in range(2):
            labels = fit.state.tau[m].argmax(axis=1)
            assert adjusted_rand_score(z[m], labels) == 1.0
        perm = [0, 1] if fit.params.alpha[0, 0] > fit.params.alpha[0, 1] else [1, 0]
        assert np.allclose(fit.params.alpha[np.ix_(perm, perm)], alpha, atol=0.06)
        assert np.allclose(fit.params.delta, 1.0)

    def test_recovers_density_ratio(self):
        rng = np.random.default_rng(53)
        alpha = np.array([[0.9, 0.2], [0.2, 0.6]])
        z = [rng.integers(2, size=80) for _ in range(2)]
        nets = (
            _planted_network(rng, z[0], alpha, directed=False),
            _planted_network(rng, z[1], alpha, directed=False, scale=0.5),
        )
        coll = NetworkCollection(networks=nets, emission="bernoulli")
        init = VariationalState(tau=tuple(
            vem.spectral_tau(net, 2, seed=1) for net in nets))
        fit = run_vem(coll, "delta", 2, full_support(2, 2), init, CFG)
        assert abs(fit.params.delta[1] - 0.5) < 0.08
        assert fit.params.delta[0] == 1.0

    def test_matches_reference_single_network_vem(self):
        rng = np.random.default_rng(59)
        alpha = np.array([[0.8, 0.15], [0.1, 0.7]])
        z = rng.integers(2, size=40)
        net = _planted_network(rng, z, alpha)
        coll = NetworkCollection(networks=(net,), emission="bernoulli")
        tau0 = vem.spectral_tau(net, 2, seed=7)
        fit = run_vem(coll, "iid", 2, full_support(1, 2), VariationalState(tau=(tau0,)),
                      VemConfig(tol=1e-10, max_iter=300))
        ref_tau, ref_pi, ref_alpha = _reference_sbm_vem(net.adjacency, 2, tau0.copy())
        ref_params = ColSbmParams(variant="iid", pi=ref_pi[None, :], alpha=ref_alpha,
                                  delta=np.ones(1), support=full_support(1, 2))
        ref_elbo = elbo(coll, VariationalState(tau=(ref_tau,)), ref_params)
        assert fit.elbo >= ref_elbo - 1e-6
        assert abs(fit.elbo - ref_elbo) <= 1e-3 * max(1.0, abs(ref_elbo))

    def test_bitwise_deterministic(self):
        rng = np.random.default_rng(61)
        coll, state, params = rand_instance(rng, M=3)
        cfg = VemConfig(seed=9)
        a = run_vem(coll, params.variant, params.Q, params.support, state, cfg)
        b = run_vem(coll, params.variant, params.Q, params.support, state, cfg)
        assert a.elbo == b.elbo
        for ta, tb in zip(a.state.tau, b.state.tau):
            assert ta.tobytes() == tb.tobytes()

    def test_input_validation(self):
        rng = np.random.default_rng(67)
        coll, state, params = rand_instance(rng, M=2, q_max=2)
        with pytest.raises(ValueError):
            run_vem(coll, "sep", params.Q, params.support, state, CFG)
        with pytest.raises(ValueError):
            run_vem(coll, "iid", params.Q + 1, params.support, state, CFG)
        S = full_support(2, 2).copy()
        S[0, 0] = False
        coll2, state2, _ = rand_instance(rng, M=2, q_max=2)
        Q2 = state2.Q
        if Q2 == 2:
            with pytest.raises(ValueError):
                run_vem(coll2, "iid", 2, S, state2, CFG)


def _reference_sbm_vem(X, Q, tau, n_outer=120):
    """From-scratch single-network SBM VEM used only as a test oracle."""
    n = X.shape[0]
    off = (~np.eye(n, dtype=bool)).astype(float)
    Xo = X * off
    for _ in range(n_outer):
        pi = np.maximum(tau.mean(axis=0), 1e-3 / n)
        pi = pi / pi.sum()
        num = tau.T @ Xo @ tau
        den = tau.T @ off @ tau
        alpha = np.clip(num / np.maximum(den, 1e-12), 1e-9, 1 - 1e-9)
        la, lb = np.log(alpha), np.log1p(-alpha)
        for _ in range(200):
            S = Xo @ tau @ la.T + (off - Xo) @ tau @ lb.T \
                + Xo.T @ tau @ la + (off - Xo).T @ tau @ lb
            new = _softmax_rows(np.log(pi)[None, :] + S)
            step = np.max(np.abs(new - tau))
            tau = new
            if step < 1e-10:
                break
    return tau, pi, alpha


class TestInitializers:
    def _fake_sep_fits(self, rng, sizes, Q):
        fits = []
        for n in sizes:
            tau = rng.dirichlet(np.ones(Q), size=n)
            params = rand_params(rng, 1, Q, "bernoulli", variant="pi",
                                 S=np.ones((1, Q), bool))
            fits.append(Fit(params=params, state=VariationalState(tau=(tau,)),
                            elbo=0.0, n_iterations=1, converged=True))
        return fits

    def test_init_candidates_structure(self):
        rng = np.random.default_rng(71)
        sizes = (5, 7, 6)
        Q = 3
        fits = self._fake_sep_fits(rng, sizes, Q)
        coll, _, _ = rand_instance(rng, M=3)
        states = vem.init_candidates(coll, "iid", Q, fits, n_perm=6, seed=2)
        assert len(states) == 6
        base = [f.state.tau[0] for f in fits]
        for m in range(3):
            assert np.array_equal(states[0].tau[m], base[m])
        for st in states[1:]:
            for m in range(3):
                got = st.tau[m]
                cols_got = sorted(map(tuple, got.T))
                cols_base = sorted(map(tuple, base[m].T))
                assert cols_got == cols_base  # a column permutation
        again = vem.init_candidates(coll, "iid", Q, fits, n_perm=6, seed=2)
        for a, b in zip(states, again):
            for ta, tb in zip(a.tau, b.tau):
                assert np.array_equal(ta, tb)

    def _small_fit(self, rng):
        while True:
            coll, state, params = rand_instance(rng, M=2, n_max=8, q_max=2,
                                                emission="bernoulli", variant="pi")
            if params.Q == 2:
                break
        fit = run_vem(coll, "pi", params.Q, params.support, state, CFG)
        return coll, fit

    def test_split_conserves_mass(self):
        rng = np.random.default_rng(73)
        coll, fit = self._small_fit(rng)
        Q = fit.params.Q
        if Q < 2:
            pytest.skip("degenerate draw")
        states = split_merge_candidates(fit, "split", collection=coll)
        assert len(states) == Q
        for q, st in enumerate(states):
            assert st.Q == Q + 1
            for m, t in enumerate(st.tau):
                old = fit.state.tau[m]
                assert np.allclose(t.sum(axis=1), 1.0)
                assert np.allclose(t[:, q] + t[:, Q], old[:, q])
                others = [c for c in range(Q) if c != q]
                assert np.allclose(t[:, others], old[:, others])

    def test_merge_conserves_mass(self):
        rng = np.random.default_rng(79)
        coll, fit = self._small_fit(rng)
        Q = fit.params.Q
        if Q < 2:
            pytest.skip("degenerate draw")
        states = split_merge_candidates(fit, "merge")
        assert len(states) == Q * (Q - 1) // 2
        for st in states:
            assert st.Q == Q - 1
            for m, t in enumerate(st.tau):
                assert np.allclose(t.sum(axis=1), 1.0)
                assert np.allclose(t.sum(), fit.state.tau[m].sum())

    def test_split_merge_support_bookkeeping(self):
        rng = np.random.default_rng(83)
        coll, fit = self._small_fit(rng)
        Q = fit.params.Q
        if Q < 2:
            pytest.skip("degenerate draw")
        splits = vem._split_merge_with_support(fit, "split", coll)
        for q, (_, S_new) in enumerate(splits):
            assert np.array_equal(S_new[:, Q], fit.params.support[:, q])
            assert np.array_equal(S_new[:, :Q], fit.params.support)
        merges = vem._split_merge_with_support(fit, "merge")
        (_, S_first) = merges[0]
        expect = fit.params.support[:, 0] | fit.params.support[:, 1]
        assert np.array_equal(S_first[:, 0], expect)

    def test_split_needs_collection(self):
        rng = np.random.default_rng(89)
        _, fit = self._small_fit(rng)
        with pytest.raises(ValueError):
            split_merge_candidates(fit, "split")
        with pytest.raises(ValueError):
            split_merge_candidates(fit, "sideways")
