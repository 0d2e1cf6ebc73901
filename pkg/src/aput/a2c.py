"""Online advantage actor-critic for release policies, plus policy evaluation.

Costs are turned into rewards ``r = -cost`` so that the usual A2C signs
apply: the critic descends on ``delta**2`` (semi-gradient, target held fixed)
and the actor descends on ``-log pi(a|x) * delta - c * H(pi(.|x))``.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, List, Optional, Sequence

import numpy as np

from .belief import max_confidence_secret, max_confidence_useful
from .env import MIBudget, PrivacyEnv, encode_state, make_privacy
from .errors import TrainingDivergedError
from .nn import DenseNet, sgd_step

TERMINAL = None
LOG_COLUMNS = ("checkpoint", "mean_cost", "mean_tau", "mean_conf_u", "acc_u", "acc_s",
               "violation_rate", "mean_mi")


# ---------------------------------------------------------------------------
# Policies: anything with ``action_distribution(state) -> array`` over A + STOP

class RandomPolicy:
    """Uniform over every release mechanism and STOP."""

    def __init__(self, n_actions: int):
        self.dist = np.full(n_actions + 1, 1.0 / (n_actions + 1))

    def action_distribution(self, state):
        return self.dist


class StopPolicy:
    def __init__(self, n_actions: int):
        self.dist = np.eye(n_actions + 1)[n_actions]

    def action_distribution(self, state):
        return self.dist


class A2CPolicy:
    """Actor (softmax over A + STOP) and critic (scalar) over encoded states."""

    def __init__(self, actor: DenseNet, critic: DenseNet, privacy, t_max: int):
        self.actor = actor
        self.critic = critic
        self.privacy = privacy
        self.t_max = t_max

    def features(self, state):
        return encode_state(state, self.privacy, self.t_max)

    def action_distribution(self, state):
        return self.actor.forward(self.features(state))

    def value(self, state) -> float:
        return float(self.critic.forward(self.features(state))[0])

    def to_dict(self):
        p = self.privacy
        spec = {"kind": p.kind, "threshold": p.threshold, "t_max": self.t_max}
        if isinstance(p, MIBudget):
            spec["budget_feature"] = p.budget_feature
        return {"features": spec, "actor": self.actor.to_dict(), "critic": self.critic.to_dict()}

    @classmethod
    def from_dict(cls, d) -> "A2CPolicy":
        spec = d["features"]
        extra = {"budget_feature": spec["budget_feature"]} if spec["kind"] == "mi" else {}
        privacy = make_privacy(spec["kind"], spec["threshold"], **extra)
        return cls(DenseNet.from_dict(d["actor"]), DenseNet.from_dict(d["critic"]), privacy,
                   spec["t_max"])

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path) -> "A2CPolicy":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _sample(dist, rng) -> int:
    i = int(np.searchsorted(np.cumsum(dist), rng.random() * dist.sum(), side="right"))
    return min(i, len(dist) - 1)


# ---------------------------------------------------------------------------
# Evaluation

@dataclass
class EvalMetrics:
    n_episodes: int
    mean_cost: float
    sd_cost: float
    mean_tau: float
    sd_tau: float
    mean_conf_u: float
    sd_conf_u: float
    acc_u: float
    acc_s: float
    violation_rate: float
    mean_mi: float
    acc_u_by_class: List[float] = field(default_factory=list)
    acc_s_by_class: List[float] = field(default_factory=list)

    def se(self, name: str) -> float:
        """Standard error of a mean field (``cost``, ``tau`` or ``conf_u``)."""
        return getattr(self, f"sd_{name}") / math.sqrt(self.n_episodes)


@dataclass
class EpisodeResult:
    cost: float
    tau: int
    conf_u: float
    declared_u: int
    guessed_s: int
    hidden: tuple
    violation: bool
    mi: float


def run_episode(env: PrivacyEnv, policy, seed, rng, trace=None, episode: int = 0) -> EpisodeResult:
    """Roll out one episode with a frozen policy.

    The declared useful value is the STOP declaration, or the useful argmax if
    the episode ended on a violation; the adversary's secret guess is the
    argmax of the final secret marginal.
    """
    state = env.reset(seed)
    total = 0.0
    violation = False
    declared = None
    while True:
        dist = policy.action_distribution(state)
        a = _sample(dist, rng)
        state, out = env.step(state, a, dist)
        if trace is not None:
            trace.write(episode, state, a, out)
        total += out.cost
        violation = violation or out.violation
        if out.done:
            declared = out.declared_useful
            break
    if declared is None:
        declared = max_confidence_useful(state.belief)[0]
    return EpisodeResult(total, state.step, max_confidence_useful(state.belief)[1], declared,
                         max_confidence_secret(state.belief)[0], state.hidden, violation,
                         state.cumulative_mi)


def summarize(results: Sequence[EpisodeResult], n_secret: int, n_useful: int) -> EvalMetrics:
    cost = np.array([r.cost for r in results])
    tau = np.array([r.tau for r in results], dtype=float)
    conf = np.array([r.conf_u for r in results])
    hs = np.array([r.hidden[0] for r in results])
    hu = np.array([r.hidden[1] for r in results])
    ok_u = np.array([r.declared_u for r in results]) == hu
    ok_s = np.array([r.guessed_s for r in results]) == hs

    def by_class(ok, labels, k):
        return [float(ok[labels == c].mean()) if np.any(labels == c) else float("nan")
                for c in range(k)]

    def sd(x):
        return float(x.std(ddof=1)) if len(x) > 1 else 0.0

    return EvalMetrics(
        n_episodes=len(results),
        mean_cost=float(cost.mean()), sd_cost=sd(cost),
        mean_tau=float(tau.mean()), sd_tau=sd(tau),
        mean_conf_u=float(conf.mean()), sd_conf_u=sd(conf),
        acc_u=float(ok_u.mean()), acc_s=float(ok_s.mean()),
        violation_rate=float(np.mean([r.violation for r in results])),
        mean_mi=float(np.mean([r.mi for r in results])),
        acc_u_by_class=by_class(ok_u, hu, n_useful),
        acc_s_by_class=by_class(ok_s, hs, n_secret),
    )


def _as_env(env_factory) -> PrivacyEnv:
    return env_factory if isinstance(env_factory, PrivacyEnv) else env_factory()


def evaluate(policy, env_factory, n_episodes: int, seed: int = 0, trace=None) -> EvalMetrics:
    """Run a frozen policy for ``n_episodes``; episode ``i`` uses hidden-state seed ``(seed, i)``."""
    if n_episodes < 1:
        raise ValueError("n_episodes must be positive")
    env = _as_env(env_factory)
    rng = np.random.default_rng([seed, 1])
    results = [run_episode(env, policy, [seed, i], rng, trace, i) for i in range(n_episodes)]
    return summarize(results, env.model.n_secret, env.model.n_useful)


# ---------------------------------------------------------------------------
# Training

@dataclass
class A2CConfig:
    lr_actor: float = 0.01
    lr_critic: float = 0.01
    gamma: float = 0.99
    episodes: int = 20000
    entropy_coef: float = 0.01
    hidden_sizes: tuple = (256, 256)
    eval_every: int = 1000
    seed: int = 0
    clip: Optional[float] = 5.0
    cost_scale: float = 1.0
    slope: float = 0.01
    divergence_factor: float = 10.0

    def __post_init__(self):
        if self.lr_actor <= 0 or self.lr_critic <= 0:
            raise ValueError("learning rates must be positive")
        if self.episodes < 1 or self.eval_every < 1:
            raise ValueError("episodes and eval_every must be positive")
        self.hidden_sizes = tuple(int(h) for h in self.hidden_sizes)


@dataclass
class TrainingLog:
    records: list = field(default_factory=list)
    baseline_cost: float = float("nan")

    def to_csv(self, fh=None, metadata: Optional[str] = None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(LOG_COLUMNS)
        for rec in self.records:
            w.writerow([rec["checkpoint"]] + [repr(float(rec[c])) for c in LOG_COLUMNS[1:]])
        if metadata:
            buf.write(f"# {metadata}\n")
        text = buf.getvalue()
        if fh is not None:
            fh.write(text)
        return text


def td_error(critic: DenseNet, x, x_next, cost: float, gamma: float) -> float:
    """``delta = -cost + gamma * V(x') - V(x)``, with ``V(TERMINAL) = 0``."""
    v = float(critic.forward(x)[0])
    v_next = 0.0 if x_next is TERMINAL else float(critic.forward(x_next)[0])
    return -cost + gamma * v_next - v


def train(env_factory, config: A2CConfig, log_fn: Optional[Callable] = None):
    """Train actor and critic online, one update per environment step.

    Returns ``(A2CPolicy, TrainingLog)``. Each log record summarizes the
    training episodes since the previous checkpoint. Raises
    :class:`TrainingDivergedError` when a window's mean cost exceeds
    ``divergence_factor`` times the uniform-random policy's cost.
    """
    env = _as_env(env_factory)
    cfg = config
    n_out = env.n_actions + 1
    n_in = env.feature_size
    actor = DenseNet([n_in, *cfg.hidden_sizes, n_out], head="softmax", slope=cfg.slope,
                     seed=[cfg.seed, 0], zero_last=True)
    critic = DenseNet([n_in, *cfg.hidden_sizes, 1], head="linear", slope=cfg.slope,
                      seed=[cfg.seed, 1], zero_last=True)
    policy = A2CPolicy(actor, critic, env.privacy, env.costs.t_max)
    log = TrainingLog()
    baseline = evaluate(RandomPolicy(env.n_actions), env, 200, seed=cfg.seed)
    log.baseline_cost = baseline.mean_cost
    limit = cfg.divergence_factor * max(baseline.mean_cost, env.costs.time_cost)

    rng = np.random.default_rng([cfg.seed, 2])
    eye = np.eye(n_out)
    window = []
    t_max = env.costs.t_max
    for ep in range(cfg.episodes):
        state = env.reset([cfg.seed, 3, ep])
        x = encode_state(state, env.privacy, t_max)
        total, violation, declared = 0.0, False, None
        while True:
            p = actor.forward(x)
            a = _sample(p, rng)
            state, out = env.step(state, a, p)
            total += out.cost
            violation = violation or out.violation
            x_next = TERMINAL if out.done else encode_state(state, env.privacy, t_max)
            delta = td_error(critic, x, x_next, out.cost * cfg.cost_scale, cfg.gamma)
            sgd_step(critic, critic.backward(x, np.array([-2.0 * delta])), cfg.lr_critic, cfg.clip)
            logp = np.log(p)
            ent = -float(np.dot(p, logp))
            g = (p - eye[a]) * delta + cfg.entropy_coef * p * (logp + ent)
            sgd_step(actor, actor.backward(x, g, wrt="logits"), cfg.lr_actor, cfg.clip)
            if not np.all(np.isfinite(p)) or not math.isfinite(delta):
                raise TrainingDivergedError("non-finite actor output or TD error",
                                            {"episode": ep, "log": log.records})
            if out.done:
                declared = out.declared_useful
                break
            x = x_next
        if declared is None:
            declared = max_confidence_useful(state.belief)[0]
        window.append(EpisodeResult(total, state.step, max_confidence_useful(state.belief)[1],
                                    declared, max_confidence_secret(state.belief)[0],
                                    state.hidden, violation, state.cumulative_mi))
        if (ep + 1) % cfg.eval_every == 0 or ep + 1 == cfg.episodes:
            m = summarize(window, env.model.n_secret, env.model.n_useful)
            rec = {"checkpoint": len(log.records), "mean_cost": m.mean_cost, "mean_tau": m.mean_tau,
                   "mean_conf_u": m.mean_conf_u, "acc_u": m.acc_u, "acc_s": m.acc_s,
                   "violation_rate": m.violation_rate, "mean_mi": m.mean_mi}
            log.records.append(rec)
            if log_fn is not None:
                log_fn(ep + 1, rec)
            window = []
            if m.mean_cost > limit:
                raise TrainingDivergedError(
                    f"mean episodic cost {m.mean_cost:.3f} exceeds {cfg.divergence_factor:g}x the "
                    f"random-policy cost {baseline.mean_cost:.3f}",
                    {"episode": ep + 1, "baseline_cost": baseline.mean_cost, "log": log.records,
                     "config": asdict(cfg)})
    return policy, log
