import json
import math

import numpy as np
import pytest

from aput.a2c import (TERMINAL, A2CConfig, A2CPolicy, RandomPolicy, StopPolicy, TrainingLog,
                      evaluate, td_error, train)
from aput.env import BeliefThreshold, CostParams, MIBudget, PrivacyEnv
from aput.errors import TrainingDivergedError
from aput.model import DESK_COSTS, Prior, build_synthetic, desk_instance
from aput.nn import DenseNet


def desk_env(**overrides):
    costs = dict(DESK_COSTS, **overrides)
    return PrivacyEnv(desk_instance(), Prior.uniform(2, 2), CostParams(**costs),
                      BeliefThreshold(0.75))


def synth_env(privacy=None, **cost_kw):
    return PrivacyEnv(build_synthetic(7, 3, 3, 3, 10), Prior.uniform(3, 3), CostParams(**cost_kw),
                      privacy or BeliefThreshold(0.9))


# -- TD error ------------------------------------------------------------------------

def test_td_error_with_zero_critic():
    critic = DenseNet([5, 4, 1], seed=0, zero_last=True)
    x = np.ones(5)
    assert td_error(critic, x, x, cost=1.0, gamma=0.9) == -1.0
    assert td_error(critic, x, TERMINAL, cost=0.0, gamma=0.9) == 0.0


def test_td_error_with_hand_set_critic():
    critic = DenseNet([2, 1])
    critic.weights[0][:] = [[2.0, -1.0]]
    critic.biases[0][:] = [0.5]
    x, x_next = np.array([1.0, 1.0]), np.array([0.0, 2.0])
    # V(x) = 1.5, V(x') = -1.5; delta = -2 + 0.5 * -1.5 - 1.5
    assert td_error(critic, x, x_next, cost=2.0, gamma=0.5) == pytest.approx(-4.25)
    # terminal successor contributes nothing
    assert td_error(critic, x, TERMINAL, cost=2.0, gamma=0.5) == pytest.approx(-3.5)


# -- training behaviour ----------------------------------------------------------------

def test_free_stopping_teaches_immediate_stop():
    env = desk_env(lam=0.0)
    policy, _ = train(env, A2CConfig(episodes=3000, hidden_sizes=(16,), lr_actor=0.05,
                                     lr_critic=0.05, eval_every=500, cost_scale=0.1, seed=0))
    state = env.reset(0)
    assert policy.action_distribution(state)[env.stop_action] > 0.95


def test_heavy_entropy_bonus_keeps_policy_near_uniform():
    env = desk_env()
    policy, _ = train(env, A2CConfig(episodes=1000, hidden_sizes=(16,), entropy_coef=50.0,
                                     lr_actor=0.01, cost_scale=0.02, seed=1))
    dist = policy.action_distribution(env.reset(0))
    assert np.abs(dist - 1 / 3).max() < 0.1


def test_training_is_deterministic():
    cfg = A2CConfig(episodes=300, hidden_sizes=(8,), eval_every=100, seed=4, cost_scale=0.02)
    a, log_a = train(synth_env(), cfg)
    b, log_b = train(synth_env(), cfg)
    assert json.dumps(a.to_dict()) == json.dumps(b.to_dict())
    assert log_a.to_csv() == log_b.to_csv()


def test_log_has_one_record_per_checkpoint():
    _, log = train(synth_env(), A2CConfig(episodes=250, eval_every=100, hidden_sizes=(8,)))
    assert len(log.records) == math.ceil(250 / 100)
    assert [r["checkpoint"] for r in log.records] == [0, 1, 2]
    assert log.to_csv(metadata="config_hash=x seed=0").endswith("# config_hash=x seed=0\n")


def test_actor_outputs_are_distributions():
    env = synth_env(MIBudget(0.5))
    policy, _ = train(env, A2CConfig(episodes=200, hidden_sizes=(8,), seed=2, cost_scale=0.02))
    rng = np.random.default_rng(0)
    for seed in range(20):
        state = env.reset(seed)
        while True:
            d = policy.action_distribution(state)
            assert d.shape == (4,) and (d >= 0).all() and d.sum() == pytest.approx(1.0)
            state, out = env.step(state, int(rng.choice(4, p=d)), d)
            if out.done:
                break


def test_divergence_detector_raises_with_diagnostics():
    with pytest.raises(TrainingDivergedError) as err:
        train(synth_env(), A2CConfig(episodes=200, eval_every=50, hidden_sizes=(8,),
                                     divergence_factor=1e-3))
    diag = err.value.diagnostics
    assert diag["episode"] == 50 and len(diag["log"]) == 1
    assert math.isfinite(diag["baseline_cost"])


def test_config_rejects_nonsense():
    with pytest.raises(ValueError):
        A2CConfig(lr_actor=0.0)
    with pytest.raises(ValueError):
        A2CConfig(episodes=0)


def test_checkpoint_round_trip(tmp_path):
    env = synth_env(MIBudget(0.5, budget_feature=False))
    policy, _ = train(env, A2CConfig(episodes=100, hidden_sizes=(8,), seed=3))
    path = tmp_path / "p.json"
    policy.save(path)
    back = A2CPolicy.load(path)
    state = env.reset(11)
    assert np.array_equal(back.action_distribution(state), policy.action_distribution(state))
    assert back.value(state) == policy.value(state)
    assert back.privacy == policy.privacy


# -- evaluation -------------------------------------------------------------------------

def test_always_stop_metrics():
    env = synth_env()
    m = evaluate(StopPolicy(3), env, 3000, seed=0)
    assert m.mean_tau == 0 and m.sd_tau == 0 and m.violation_rate == 0
    assert m.mean_conf_u == pytest.approx(1 / 3)
    assert m.mean_cost == pytest.approx(50 * 2 / 3)
    # argmax of a uniform marginal declares class 0, right one time in three
    assert abs(m.acc_u - 1 / 3) < 4 * math.sqrt(2 / 9 / 3000)
    assert m.acc_u_by_class == pytest.approx([1.0, 0.0, 0.0])


def test_evaluation_is_seeded():
    env = synth_env()
    a = evaluate(RandomPolicy(3), env, 200, seed=5)
    b = evaluate(RandomPolicy(3), env, 200, seed=5)
    assert a == b
    assert evaluate(RandomPolicy(3), env, 200, seed=6) != a
    with pytest.raises(ValueError):
        evaluate(RandomPolicy(3), env, 0)


def test_training_log_csv_columns():
    log = TrainingLog([{"checkpoint": 0, "mean_cost": 1, "mean_tau": 2, "mean_conf_u": 0.5,
                        "acc_u": 0.4, "acc_s": 0.3, "violation_rate": 0, "mean_mi": 0.1}])
    lines = log.to_csv().splitlines()
    assert lines[0].split(",")[0] == "checkpoint" and lines[1].startswith("0,1.0,2.0")
