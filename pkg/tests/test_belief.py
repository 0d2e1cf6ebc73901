import math
from fractions import Fraction as F

import numpy as np
import pytest
from hypothesis import given, strategies as st

from aput.belief import (Belief, entropy, marginal_secret, marginal_useful, max_confidence_secret,
                         max_confidence_useful, update)
from aput.errors import ZeroLikelihoodError

from _util import random_joint, random_model, table_model

# q[a][s][u][z] for a single action, written out by hand
HAND_Q = [[[[F(9, 10), F(1, 10)], [F(1, 2), F(1, 2)]],
           [[F(1, 5), F(4, 5)], [F(3, 10), F(7, 10)]]]]


def test_uninformative_observation_leaves_belief():
    m = table_model(np.full((1, 2, 2, 2), 0.5))
    b = Belief([[0.1, 0.2], [0.3, 0.4]])
    assert np.allclose(update(b, m, 0, 1).joint, b.joint, atol=1e-15)


def test_fully_informative_observation_gives_point_mass():
    p = np.zeros((1, 2, 2, 3))
    p[..., 0] = 1.0
    p[0, 1, 0] = [0.0, 0.0, 1.0]
    b = update(Belief.uniform(2, 2), table_model(p), 0, 2)
    assert np.array_equal(b.joint, [[0, 0], [1, 0]])


def test_hand_computed_posterior():
    # uniform prior, z = 0: products 9/40, 5/40, 2/40, 3/40 over total 19/40
    b = update(Belief.uniform(2, 2), table_model([[[[float(x) for x in r] for r in s]
                                                   for s in HAND_Q[0]]]), 0, 0)
    expected = [[F(9, 19), F(5, 19)], [F(2, 19), F(3, 19)]]
    assert np.allclose(b.joint, np.array(expected, dtype=float), atol=1e-15)


def test_update_does_not_modify_input_and_beliefs_are_immutable():
    b = Belief.uniform(2, 2)
    update(b, table_model(np.full((1, 2, 2, 2), 0.5)), 0, 0)
    assert np.all(b.joint == 0.25)
    with pytest.raises(ValueError):
        b.joint[0, 0] = 1.0
    with pytest.raises(AttributeError):
        b.joint = np.eye(2)


def test_zero_likelihood_raises():
    p = np.zeros((1, 2, 2, 2))
    p[..., 0] = 1.0
    with pytest.raises(ZeroLikelihoodError):
        update(Belief.uniform(2, 2), table_model(p), 0, 1)


def test_invalid_indices():
    m = table_model(np.full((1, 2, 2, 2), 0.5))
    with pytest.raises(IndexError):
        update(Belief.uniform(2, 2), m, 1, 0)
    with pytest.raises(IndexError):
        update(Belief.uniform(2, 2), m, 0, 2)


def test_marginals_and_confidence_examples():
    b = Belief([[0.1, 0.2], [0.3, 0.4]])
    assert np.allclose(marginal_secret(b), [0.3, 0.7], atol=1e-15)
    assert np.allclose(marginal_useful(b), [0.4, 0.6], atol=1e-15)
    s, v = max_confidence_secret(b)
    assert s == 1 and v == pytest.approx(0.7, abs=1e-15)
    assert max_confidence_useful(b)[0] == 1
    u = Belief.uniform(3, 2)
    assert max_confidence_secret(u) == (0, pytest.approx(1 / 3))
    assert max_confidence_useful(u)[0] == 0
    pm = Belief([[0, 0], [0, 1]])
    assert max_confidence_secret(pm) == (1, 1.0)
    assert max_confidence_useful(pm) == (1, 1.0)


def test_entropy_examples():
    assert entropy([1.0, 0.0]) == 0.0
    assert entropy(np.full(5, 0.2)) == pytest.approx(math.log(5), abs=1e-15)
    # mpmath reference for -(0.25 ln 0.25 + 0.75 ln 0.75)
    assert entropy([0.25, 0.75]) == pytest.approx(0.562335144618808350, abs=1e-15)


@st.composite
def model_and_prior(draw):
    seed = draw(st.integers(0, 2 ** 32 - 1))
    rng = np.random.default_rng(seed)
    n, m = draw(st.integers(2, 3)), draw(st.integers(2, 3))
    model = random_model(rng, draw(st.integers(1, 3)), n, m, draw(st.integers(2, 5)))
    return model, random_joint(rng, n, m), rng


@given(model_and_prior())
def test_update_equals_enumerated_product(args):
    model, prior, rng = args
    a = int(rng.integers(model.n_actions))
    z = int(rng.integers(model.n_obs))
    got = update(Belief(prior), model, a, z).joint
    expected = np.empty_like(prior)
    for s in range(prior.shape[0]):
        for u in range(prior.shape[1]):
            expected[s, u] = model.probs[a, s, u, z] * prior[s, u]
    assert np.allclose(got, expected / expected.sum(), rtol=0, atol=1e-12)


@given(model_and_prior(), st.integers(1, 6))
def test_sequential_updates_equal_one_joint_normalization(args, length):
    model, prior, rng = args
    b = Belief(prior)
    lik = np.ones_like(prior)
    for _ in range(length):
        a = int(rng.integers(model.n_actions))
        z = int(rng.integers(model.n_obs))
        b = update(b, model, a, z)
        lik = lik * model.probs[a, :, :, z]
    post = lik * prior
    assert np.allclose(b.joint, post / post.sum(), rtol=0, atol=1e-10)


@given(st.integers(0, 2 ** 32 - 1), st.floats(1e-3, 1e3))
def test_argmax_invariant_to_scaling(seed, c):
    joint = random_joint(np.random.default_rng(seed), 3, 3)
    a = Belief(joint)
    b = Belief(joint * c, normalize=True)
    assert max_confidence_secret(a)[0] == max_confidence_secret(b)[0]
    assert max_confidence_useful(a)[0] == max_confidence_useful(b)[0]


@given(st.integers(0, 2 ** 32 - 1), st.integers(1, 8))
def test_entropy_bounds(seed, k):
    d = np.random.default_rng(seed).dirichlet(np.ones(k) * 0.3)
    assert 0.0 <= entropy(d) <= math.log(k) + 1e-12


def test_belief_validation():
    with pytest.raises(ValueError):
        Belief([[0.5, 0.6], [0.0, 0.0]])
    with pytest.raises(ValueError):
        Belief([0.5, 0.5])
    assert Belief([[1, 1], [1, 1]], normalize=True).joint[0, 0] == 0.25
