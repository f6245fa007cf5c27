import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dynsbm.core import (
    LabelPermutation,
    LatentStates,
    ModelParams,
    ObservedNetwork,
    all_permutations,
    from_one_based,
    is_ergodic,
    load_params,
    params_from_dict,
    params_to_dict,
    permute_labels,
    save_params,
    scenario_preset,
    spectral_gap,
    stationary_distribution,
    to_one_based,
    validate,
)
from dynsbm.inference import brute_force_log_likelihood

from conftest import random_params


def test_scenario1_preset_values(s1):
    assert validate(s1) == []
    assert (s1.Q, s1.T, s1.kappa) == (3, 2, 6)
    np.testing.assert_array_equal(s1.pi, [0.2, 0.33, 0.47])
    np.testing.assert_array_equal(s1.transition(2)[0], [0.6, 0.2, 0.2])
    np.testing.assert_array_equal(s1.edge_probs[0, 0, 0], [0.2, 0.1, 0.1, 0.1, 0.1, 0.4])


def test_scenario1_inhomogeneous_preset(s1_inhom):
    assert validate(s1_inhom) == []
    assert s1_inhom.T == 4 and not s1_inhom.homogeneous
    np.testing.assert_array_equal(s1_inhom.transition(3)[0], [0.15, 0.15, 0.7])
    np.testing.assert_allclose(s1_inhom.transition(4), np.full((3, 3), 1 / 3), atol=1e-15)


def test_scenario2_preset(s2):
    assert validate(s2) == []
    assert (s2.Q, s2.T, s2.kappa) == (3, 3, 3)
    np.testing.assert_array_equal(s2.edge_probs[0, 1, 2], [0.6, 0.05, 0.35])
    np.testing.assert_allclose(s2.pi, [1 / 3] * 3)


def test_unknown_preset():
    with pytest.raises(ValueError, match="unknown scenario"):
        scenario_preset("scenario9")


def test_validate_pi_not_normalized(s2):
    bad = ModelParams([0.5, 0.6], [[0.5, 0.5], [0.5, 0.5]], np.full((1, 2, 2, 2), 0.5))
    assert "pi not normalized" in validate(bad)


def test_validate_symmetry(s2):
    bp = np.array(s2.edge_probs)
    bp[0, 0, 1] = [0.2, 0.45, 0.35]
    problems = validate(s2.with_edge_probs(bp))
    assert any("symmetry" in p for p in problems)


def test_validate_rows_and_counts():
    bp = np.full((2, 2, 2, 2), 0.5)
    assert any("rho rows" in p for p in validate(ModelParams([0.5, 0.5], [[0.5, 0.6], [0.5, 0.5]], bp)))
    assert any("expected 1 transition" in p for p in validate(ModelParams([0.5, 0.5], np.full((2, 2, 2), 0.5), bp)))


def test_validate_does_not_mutate(s1):
    before = params_to_dict(s1)
    validate(s1)
    assert params_to_dict(s1) == before


def test_params_are_read_only(s1):
    with pytest.raises(ValueError):
        s1.pi[0] = 1.0


def test_state_law_and_transitions(s1_inhom):
    law = s1_inhom.state_law(3)
    np.testing.assert_allclose(law, s1_inhom.pi @ s1_inhom.transition(2) @ s1_inhom.transition(3))
    assert s1_inhom.transitions().shape == (3, 3, 3)
    with pytest.raises(IndexError):
        s1_inhom.transition(1)


def test_sparsity_view(s2):
    np.testing.assert_allclose(s2.sparsity()[0, 0, 0], 0.9)
    cond = s2.conditional_nonzero_law()
    np.testing.assert_allclose(cond.sum(-1), 1.0)


# stationary distribution


def test_stationary_doubly_stochastic(s1):
    np.testing.assert_allclose(stationary_distribution(s1.transition(2)), [1 / 3] * 3, atol=1e-14)


def test_stationary_hand_instance():
    np.testing.assert_allclose(stationary_distribution([[0.9, 0.1], [0.5, 0.5]]), [5 / 6, 1 / 6], atol=1e-14)


def test_stationary_rejects_identity():
    with pytest.raises(ValueError, match="not ergodic"):
        stationary_distribution(np.eye(3))


def test_ergodicity_checks():
    assert not is_ergodic(np.eye(2))
    assert not is_ergodic([[0, 1], [1, 0]])  # periodic
    assert is_ergodic([[0, 1], [0.5, 0.5]])
    assert spectral_gap([[0, 1], [1, 0]]) == pytest.approx(0.0)


@settings(max_examples=50, deadline=None)
@given(st.integers(2, 5), st.integers(0, 2**32 - 1))
def test_stationary_is_fixed_point(Q, seed):
    rho = np.random.default_rng(seed).dirichlet(np.ones(Q), size=Q)
    pi = stationary_distribution(rho)
    np.testing.assert_allclose(pi @ rho, pi, atol=1e-12)
    assert abs(pi.sum() - 1) < 1e-12


# permutations


def test_permute_identity(s2):
    assert permute_labels(s2, LabelPermutation.identity(3)) == s2


def test_permute_swap_scenario2(s2):
    sw = LabelPermutation.from_one_based([2, 1, 3])
    out = permute_labels(s2, sw)
    np.testing.assert_array_equal(out.edge_probs[0, 0, 0], s2.edge_probs[0, 1, 1])
    np.testing.assert_array_equal(out.edge_probs[0, 1, 1], s2.edge_probs[0, 0, 0])
    np.testing.assert_array_equal(out.pi, s2.pi)
    assert permute_labels(out, sw) == s2


def test_label_permutation_algebra():
    a = LabelPermutation((1, 2, 0))
    b = LabelPermutation((0, 2, 1))
    assert a.then(a.inverse()) == LabelPermutation.identity(3)
    assert a.one_based() == [2, 3, 1]
    with pytest.raises(ValueError):
        LabelPermutation((0, 0, 1))
    p = scenario_preset("scenario1")
    assert permute_labels(permute_labels(p, a), b) == permute_labels(p, a.then(b))


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 4), st.integers(0, 2**32 - 1), st.booleans())
def test_permutation_preserves_validity(Q, seed, valid):
    rng = np.random.default_rng(seed)
    p = random_params(rng, Q=Q, T=2, kappa=3)
    if not valid:
        p = ModelParams(np.asarray(p.pi) * 1.1, p.rho, p.edge_probs)
    for sigma in all_permutations(Q):
        assert (validate(permute_labels(p, sigma)) == []) == (validate(p) == [])


def test_likelihood_permutation_invariance(rng):
    for _ in range(5):
        p = random_params(rng, Q=2, T=2, kappa=3)
        net = ObservedNetwork(4, 3, rng.integers(0, 3, size=(2, 6)))
        base = brute_force_log_likelihood(p, net)
        swapped = brute_force_log_likelihood(permute_labels(p, LabelPermutation((1, 0))), net)
        assert abs(base - swapped) < 1e-12


# containers and codecs


def test_one_based_codec():
    z = np.array([[0, 2], [1, 1]])
    np.testing.assert_array_equal(from_one_based(to_one_based(z)), z)
    with pytest.raises(ValueError):
        LatentStates(np.array([[-1, 0]]))


def test_network_dense_round_trip(rng):
    edges = rng.integers(0, 4, size=(2, 10))
    net = ObservedNetwork(5, 4, edges)
    X = net.dense()
    assert X.shape == (2, 5, 5)
    np.testing.assert_array_equal(X, X.transpose(0, 2, 1))
    np.testing.assert_array_equal(ObservedNetwork.from_dense(X, 4).edges, edges)
    assert X[0, 0, 1] == edges[0, 0] and X[0, 1, 2] == edges[0, 4]


def test_network_rejects_bad_values():
    with pytest.raises(ValueError):
        ObservedNetwork(3, 2, np.array([[0, 1, 2]]))
    with pytest.raises(ValueError):
        ObservedNetwork(3, 2, np.array([[0, 1]]))


@pytest.mark.parametrize("name", ["scenario1", "scenario1_inhomogeneous", "scenario2"])
def test_params_json_round_trip(name, tmp_path):
    p = scenario_preset(name)
    path = tmp_path / "p.json"
    save_params(p, path)
    assert load_params(path) == p
    doc = json.loads(path.read_text())
    assert len(doc["rho"]) == (1 if p.homogeneous else p.T - 1)


def test_params_json_rejects_unknown_fields(s2):
    doc = params_to_dict(s2)
    doc["extra"] = 1
    with pytest.raises(ValueError, match="unknown fields"):
        params_from_dict(doc)
    doc = params_to_dict(s2)
    doc["edge_probs"][0][0]["w"] = 2
    with pytest.raises(ValueError, match="unknown fields"):
        params_from_dict(doc)
