import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dynsbm.core import (
    LabelPermutation,
    LatentStates,
    ModelParams,
    ObservedNetwork,
    edge_index,
    permute_labels,
    validate,
)
from dynsbm.inference import (
    FitConfig,
    VariationalState,
    align_labels,
    brute_force_log_likelihood,
    e_step,
    elbo,
    estimate_rows,
    fit,
    initial_state,
    m_step,
    run_restart,
    write_estimates_csv,
)
from dynsbm.simulate import sample_network

from conftest import random_params


def random_network(rng, n, T, kappa):
    return ObservedNetwork(n, kappa, rng.integers(0, kappa, size=(T, n * (n - 1) // 2)))


def random_vstate(rng, n, T, Q):
    return VariationalState(rng.dirichlet(np.ones(Q), size=n), rng.dirichlet(np.ones(Q), size=(T - 1, n, Q)))


def complete_loglik(params, network, latent):
    Z = latent.states
    iu, ju = edge_index(network.n)
    ll = np.log(params.pi[Z[0]]).sum()
    for t in range(1, network.T):
        ll += np.log(params.transition(t + 1)[Z[t - 1], Z[t]]).sum()
    for t in range(network.T):
        ll += np.log(params.edge_probs[t][Z[t, iu], Z[t, ju], network.edges[t]]).sum()
    return ll


# ELBO


def test_elbo_single_state_is_loglik(rng):
    net = random_network(rng, 6, 2, 3)
    bp = rng.dirichlet(np.ones(3), size=(2, 1, 1))
    p = ModelParams([1.0], [[1.0]], bp)
    vs = VariationalState(np.ones((6, 1)), np.ones((1, 6, 1, 1)))
    expected = sum(np.log(bp[t, 0, 0, net.edges[t]]).sum() for t in range(2))
    assert elbo(p, net, vs) == pytest.approx(expected, abs=1e-10)
    assert brute_force_log_likelihood(p, net) == pytest.approx(expected, abs=1e-10)


def test_elbo_hard_assignment_is_complete_loglik(s2):
    sim = sample_network(s2, 12, seed=3)
    vs = VariationalState.from_latent(sim.latent, 3)
    assert elbo(s2, sim.network, vs) == pytest.approx(complete_loglik(s2, sim.network, sim.latent), abs=1e-9)


def test_elbo_minus_infinity_on_impossible_edge():
    bp = np.zeros((1, 1, 1, 2))
    bp[..., 0] = 1
    p = ModelParams([1.0], [[1.0]], bp)
    net = ObservedNetwork(3, 2, np.array([[0, 1, 0]]))
    vs = VariationalState(np.ones((3, 1)), np.zeros((0, 3, 1, 1)))
    assert elbo(p, net, vs) == -np.inf


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(3, 4))
def test_elbo_lower_bounds_loglik(seed, n):
    rng = np.random.default_rng(seed)
    p = random_params(rng, Q=2, T=2, kappa=3)
    net = random_network(rng, n, 2, 3)
    bound = brute_force_log_likelihood(p, net)
    vs = random_vstate(rng, n, 2, 2)
    assert elbo(p, net, vs) <= bound + 1e-12
    vs = e_step(p, net, vs, max_iters=100, tol=1e-12)
    assert elbo(p, net, vs) <= bound + 1e-12


# E-step


def test_e_step_single_state(rng):
    net = random_network(rng, 5, 3, 2)
    p = ModelParams([1.0], [[1.0]], np.full((3, 1, 1, 2), 0.5))
    vs = e_step(p, net, VariationalState(np.ones((5, 1)), np.ones((2, 5, 1, 1))))
    assert np.all(vs.delta == 1)


def test_e_step_uninformative_data_gives_uniform(rng):
    net = random_network(rng, 6, 3, 3)
    Q = 3
    p = ModelParams(np.full(Q, 1 / Q), np.full((Q, Q), 1 / Q), np.full((3, Q, Q, 3), 1 / 3))
    vs = e_step(p, net, random_vstate(rng, 6, 3, Q), max_iters=5)
    np.testing.assert_allclose(vs.delta, 1 / Q, atol=1e-12)
    np.testing.assert_allclose(vs.lam, 1 / Q, atol=1e-12)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_e_step_does_not_decrease_elbo(seed):
    rng = np.random.default_rng(seed)
    p = random_params(rng, Q=2, T=2, kappa=3)
    net = random_network(rng, 3, 2, 3)
    vs = random_vstate(rng, 3, 2, 2)
    before = elbo(p, net, vs)
    after = e_step(p, net, vs)
    assert elbo(p, net, after) >= before - 1e-10
    assert after.check() == []


# M-step


def test_m_step_point_mass_pi(rng):
    net = random_network(rng, 5, 2, 2)
    marg = np.zeros((2, 5, 3))
    marg[..., 0] = 1
    p = m_step(VariationalState.from_marginals(marg), net)
    np.testing.assert_allclose(p.pi, [1, 0, 0])


def test_m_step_rejects_single_node():
    net = ObservedNetwork(1, 2, np.zeros((2, 0), dtype=int))
    with pytest.raises(ValueError):
        m_step(VariationalState(np.ones((1, 2)) / 2, np.full((1, 1, 2, 2), 0.5)), net)


def test_m_step_transition_hand_calculation():
    # two nodes, T=2
    net = ObservedNetwork(2, 2, np.array([[1], [0]]))
    lambda1 = np.array([[0.7, 0.3], [0.2, 0.8]])
    lam = np.array([[[[0.9, 0.1], [0.4, 0.6]], [[0.5, 0.5], [0.3, 0.7]]]])
    vs = VariationalState(lambda1, lam)
    p = m_step(vs, net, homogeneous=False)
    num = np.zeros((2, 2))
    for i in range(2):
        num += lambda1[i][:, None] * lam[0, i]
    np.testing.assert_allclose(p.transition(2), num / num.sum(1, keepdims=True), atol=1e-15)
    np.testing.assert_allclose(p.pi, [0.45, 0.55])


def test_m_step_hard_assignment_gives_empirical_frequencies(rng):
    Q, kappa, n, T = 2, 3, 4, 3
    for _ in range(10):
        Z = rng.integers(0, Q, size=(T, n))
        net = random_network(rng, n, T, kappa)
        vs = VariationalState.from_latent(LatentStates(Z), Q)
        p, flags = m_step(vs, net, homogeneous=False, return_flags=True)
        counts = np.bincount(Z[0], minlength=Q)
        np.testing.assert_allclose(p.pi, counts / n, atol=1e-15)
        for t in range(1, T):
            trans = np.zeros((Q, Q))
            np.add.at(trans, (Z[t - 1], Z[t]), 1)
            rows = trans.sum(1) > 0
            np.testing.assert_allclose(p.transition(t + 1)[rows], trans[rows] / trans[rows].sum(1, keepdims=True), atol=1e-15)
        iu, ju = edge_index(n)
        for t in range(T):
            for q in range(Q):
                for l in range(q, Q):
                    sel = ((Z[t, iu] == q) & (Z[t, ju] == l)) | ((Z[t, iu] == l) & (Z[t, ju] == q))
                    if not sel.any():
                        np.testing.assert_allclose(p.edge_probs[t, q, l], 1 / kappa)
                        assert flags
                        continue
                    freq = np.bincount(net.edges[t][sel], minlength=kappa) / sel.sum()
                    expected = np.maximum(freq, 1e-10)
                    np.testing.assert_allclose(p.edge_probs[t, q, l], expected / expected.sum(), atol=1e-14)


def test_homogeneous_is_weighted_average_of_inhomogeneous(rng):
    n, T, Q = 6, 4, 3
    net = random_network(rng, n, T, 2)
    vs = random_vstate(rng, n, T, Q)
    hom = m_step(vs, net, homogeneous=True)
    inhom = m_step(vs, net, homogeneous=False)
    weights = np.stack([vs.delta[t - 1].sum(0) for t in range(1, T)])  # (T-1, Q)
    avg = np.einsum("sq,sql->ql", weights, inhom.rho) / weights.sum(0)[:, None]
    np.testing.assert_allclose(hom.rho[0], avg, atol=1e-12)
    np.testing.assert_allclose(hom.edge_probs, inhom.edge_probs, atol=1e-15)


# fitting


def test_fit_single_state(rng):
    net = random_network(rng, 8, 2, 3)
    res = fit(net, FitConfig(Q=1))
    assert res.n_restarts == 1 and res.n_iterations == 1
    freq = [np.bincount(net.edges[t], minlength=3) / net.edges.shape[1] for t in range(2)]
    np.testing.assert_allclose(res.params_hat.edge_probs[:, 0, 0], freq, atol=1e-9)
    expected = sum(np.log(res.params_hat.edge_probs[t, 0, 0, net.edges[t]]).sum() for t in range(2))
    assert res.elbo == pytest.approx(expected, abs=1e-9)


def test_fit_errors(rng):
    net = random_network(rng, 3, 2, 2)
    with pytest.raises(ValueError):
        fit(net, FitConfig(Q=4))
    with pytest.raises(ValueError):
        FitConfig(Q=0)
    with pytest.raises(ValueError):
        FitConfig(Q=2, elbo_rel_tol=2.0)
    with pytest.raises(ValueError):
        FitConfig(Q=2, init_strategy="bogus")


def test_fit_elbo_monotone_and_valid(s2):
    sim = sample_network(s2, 60, seed=2)
    for strategy in ("random", "spectral"):
        res = fit(sim.network, FitConfig(Q=3, n_restarts=4, init_strategy=strategy, seed=1))
        assert validate(res.params_hat) == []
        assert res.elbo == max(res.restart_elbos)
        for trace in res.restart_traces:
            assert np.all(np.diff(trace) >= -1e-8)
        assert res.vstate.check() == []


def test_fit_is_deterministic(s2):
    sim = sample_network(s2, 40, seed=2)
    a = fit(sim.network, FitConfig(Q=3, n_restarts=3, seed=5))
    b = fit(sim.network, FitConfig(Q=3, n_restarts=3, seed=5))
    assert a.params_hat == b.params_hat and a.elbo == b.elbo


def test_fit_upper_bounded_by_exact_likelihood(rng):
    for _ in range(5):
        p = random_params(rng, Q=2, T=2, kappa=3)
        net = random_network(rng, 4, 2, 3)
        res = fit(net, FitConfig(Q=2, n_restarts=3, init_strategy="random", seed=0))
        assert res.elbo <= brute_force_log_likelihood(res.params_hat, net) + 1e-12
        assert brute_force_log_likelihood(p, net) <= 0


def test_permutation_equivariance(s2):
    sim = sample_network(s2, 40, seed=9)
    config = FitConfig(Q=3, max_outer_iterations=20)
    init = initial_state(sim.network, 3, "random", np.random.default_rng(4))
    base, *_ = run_restart(sim.network, config, init)
    for sigma in (LabelPermutation((1, 0, 2)), LabelPermutation((2, 0, 1))):
        other, *_ = run_restart(sim.network, config, init.permuted(sigma))
        expected = permute_labels(base, sigma)
        np.testing.assert_allclose(other.pi, expected.pi, atol=1e-10)
        np.testing.assert_allclose(other.rho, expected.rho, atol=1e-10)
        np.testing.assert_allclose(other.edge_probs, expected.edge_probs, atol=1e-10)


def test_inhomogeneous_fit_shapes(s1_inhom):
    sim = sample_network(s1_inhom, 30, seed=0)
    res = fit(sim.network, FitConfig(Q=3, homogeneous=False, n_restarts=2))
    assert not res.params_hat.homogeneous
    assert res.params_hat.rho.shape == (3, 3, 3)


def test_initial_states_are_valid(s2):
    sim = sample_network(s2, 20, seed=0)
    for strategy in ("random", "spectral"):
        vs = initial_state(sim.network, 3, strategy, np.random.default_rng(0))
        assert vs.check() == []


# alignment


def test_align_round_trip(s2):
    sigma = LabelPermutation((2, 0, 1))
    aligned, found = align_labels(permute_labels(s2, sigma), s2)
    assert found == sigma.inverse()
    assert aligned == s2


def test_align_noisy_swap(s2, rng):
    noisy = np.asarray(s2.edge_probs) + rng.uniform(0, 0.01, size=s2.edge_probs.shape)
    noisy = (noisy + noisy.transpose(0, 2, 1, 3)) / 2
    noisy /= noisy.sum(-1, keepdims=True)
    sigma = LabelPermutation.from_one_based([3, 2, 1])
    hat = permute_labels(s2.with_edge_probs(noisy), sigma)
    _, found = align_labels(hat, s2)
    assert found.one_based() == [3, 2, 1]


def test_align_single_state():
    p = ModelParams([1.0], [[1.0]], np.full((1, 1, 1, 2), 0.5))
    assert align_labels(p)[1] == LabelPermutation.identity(1)


def test_align_canonical_order(s2):
    shuffled = permute_labels(s2, LabelPermutation((2, 0, 1)))
    aligned, _ = align_labels(shuffled)
    first = aligned.edge_probs[0, [0, 1, 2], [0, 1, 2], 0]
    assert np.all(np.diff(first) > 0)


def test_align_rejects_large_q():
    Q = 9
    bp = np.full((1, Q, Q, 2), 0.5)
    p = ModelParams(np.full(Q, 1 / Q), np.full((Q, Q), 1 / Q), bp)
    with pytest.raises(ValueError):
        align_labels(p)


def test_estimate_csv(tmp_path, s2):
    rows = estimate_rows(s2, s2, replicate=3)
    path = tmp_path / "est.csv"
    write_estimates_csv(rows, path)
    with open(path) as fh:
        read = list(csv.DictReader(fh))
    assert list(read[0]) == ["replicate", "group", "t", "q", "l", "x", "estimate", "truth"]
    assert len(read) == 3 + 9 + 3 * 6 * 3
    assert all(r["estimate"] == r["truth"] for r in read)
