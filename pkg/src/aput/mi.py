"""Mutual-information leakage about the secret.

Exact per-step leakage under a known model, a brute-force trajectory oracle,
and a Barber-Agakov style variational estimator backed by a small network.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .belief import Belief, entropy, marginal_secret, update
from .errors import SizeError
from .nn import DenseNet, sgd_step

MAX_LEAVES = 10 ** 6


def release_distribution(policy_dist, n_actions: int) -> np.ndarray:
    """Restrict an action distribution to release mechanisms and renormalize.

    Accepts either ``n_actions`` entries or ``n_actions + 1`` with STOP last.
    """
    p = np.asarray(policy_dist, dtype=float)
    if p.shape == (n_actions + 1,):
        p = p[:-1]
    elif p.shape != (n_actions,):
        raise ValueError(f"policy distribution has shape {p.shape}, expected ({n_actions},) "
                         f"or ({n_actions + 1},)")
    total = p.sum()
    if total <= 0:
        raise ValueError("policy puts no mass on any release mechanism")
    return p / total


def mutual_information(joint) -> float:
    """MI in nats between the row and column variables of a 2-D joint table."""
    p = np.asarray(joint, dtype=float)
    p = p / p.sum()
    rows = p.sum(axis=1, keepdims=True)
    cols = p.sum(axis=0, keepdims=True)
    mask = p > 0
    return max(float(np.sum(p[mask] * np.log(p[mask] / (rows * cols)[mask]))), 0.0)


def instantaneous_mi(belief: Belief, policy_dist, model) -> float:
    """Leakage ``I(S; Z_t, A_t | beta)`` of one release step, in nats.

    ``A_t`` is drawn from ``policy_dist`` (STOP mass dropped, see
    :func:`release_distribution`) and ``Z_t`` from the model.
    """
    pi = release_distribution(policy_dist, model.n_actions)
    beta = belief.joint
    # p(a, s, z) = pi(a) * sum_u beta(s, u) q(z | a, s, u)
    p_asz = pi[:, None, None] * np.einsum("su,asuz->asz", beta, model.probs)
    p_az = p_asz.sum(axis=1)
    p_s = beta.sum(axis=1)
    denom = p_s[None, :, None] * p_az[:, None, :]
    mask = p_asz > 0
    val = float(np.sum(p_asz[mask] * np.log(p_asz[mask] / denom[mask])))
    if val < 0:
        if val < -1e-10:
            raise ArithmeticError(f"negative instantaneous MI {val}")
        val = 0.0
    return val


@dataclass
class MITrace:
    per_step: list = field(default_factory=list)

    def append(self, value: float):
        if value < -1e-10:
            raise ValueError(f"negative per-step MI {value}")
        self.per_step.append(max(float(value), 0.0))

    @property
    def cumulative(self):
        return list(np.cumsum(self.per_step)) if self.per_step else []

    @property
    def total(self) -> float:
        return float(sum(self.per_step))


# ---------------------------------------------------------------------------
# Exact enumeration over trajectories

def _enumerate(model, prior_joint, policy, horizon, visit, max_leaves):
    """Depth-first walk of every (action, observation) history up to ``horizon``.

    ``visit(t, weights, pi)`` is called at each internal node with the
    unnormalized joint ``P(s, u, history)`` and the release distribution used
    there; leaves are passed to ``visit(horizon, weights, None)``.
    """
    n_branch = model.n_actions * model.n_obs
    if n_branch ** horizon > max_leaves:
        raise SizeError(f"{n_branch}^{horizon} histories exceed the enumeration bound {max_leaves}")

    def walk(t, w):
        mass = w.sum()
        if mass <= 0:
            return
        if t == horizon:
            visit(t, w, None)
            return
        pi = release_distribution(policy(Belief(w / mass)), model.n_actions)
        visit(t, w, pi)
        for a in range(model.n_actions):
            if pi[a] == 0:
                continue
            for z in range(model.n_obs):
                walk(t + 1, w * pi[a] * model.probs[a, :, :, z])

    walk(0, np.asarray(prior_joint, dtype=float))


def brute_force_trajectory_mi(model, prior, policy: Callable, horizon: int,
                              max_leaves: int = MAX_LEAVES) -> float:
    """``I(S; Z^T, A^T)`` from the fully enumerated joint over histories.

    ``policy`` maps a :class:`Belief` to a distribution over release actions
    (a trailing STOP entry is ignored).
    """
    prior_joint = getattr(prior, "joint", prior)
    if horizon == 0:
        return 0.0
    columns = []

    def visit(t, w, pi):
        if pi is None:
            columns.append(w.sum(axis=1))

    _enumerate(model, prior_joint, policy, horizon, visit, max_leaves)
    return mutual_information(np.stack(columns, axis=1))


def enumerated_chain_mi(model, prior, policy: Callable, horizon: int,
                        max_leaves: int = MAX_LEAVES) -> float:
    """Expected sum of per-step leakage over the same enumeration.

    Equals :func:`brute_force_trajectory_mi` by the chain rule; the two are
    computed independently so each can check the other.
    """
    prior_joint = getattr(prior, "joint", prior)
    total = 0.0

    def visit(t, w, pi):
        nonlocal total
        if pi is not None:
            mass = w.sum()
            total += mass * instantaneous_mi(Belief(w / mass), pi, model)

    _enumerate(model, prior_joint, policy, horizon, visit, max_leaves)
    return total


# ---------------------------------------------------------------------------
# Variational estimator

class QNet:
    """Posterior model ``Q(s | z, a, beta)`` over secrets.

    Input is ``onehot(z) ++ onehot(a) ++ flatten(beta)``; output is a softmax
    over the ``n_secret`` values.
    """

    def __init__(self, n_obs: int, n_actions: int, n_secret: int, n_useful: int,
                 hidden_sizes: Sequence[int] = (32, 32), seed: Optional[int] = None,
                 zero_last: bool = False, slope: float = 0.01, net: Optional[DenseNet] = None):
        self.n_obs = n_obs
        self.n_actions = n_actions
        self.n_secret = n_secret
        self.n_useful = n_useful
        n_in = n_obs + n_actions + n_secret * n_useful
        self.net = net or DenseNet([n_in, *hidden_sizes, n_secret], head="softmax",
                                   slope=slope, seed=seed, zero_last=zero_last)
        self.final_loss = None

    @classmethod
    def for_model(cls, model, **kwargs) -> "QNet":
        return cls(model.n_obs, model.n_actions, model.n_secret, model.n_useful, **kwargs)

    def features(self, z, a, belief_flat) -> np.ndarray:
        z = np.atleast_1d(z)
        a = np.atleast_1d(a)
        b = np.atleast_2d(belief_flat)
        x = np.zeros((len(z), self.net.n_in))
        x[np.arange(len(z)), z] = 1.0
        x[np.arange(len(z)), self.n_obs + a] = 1.0
        x[:, self.n_obs + self.n_actions:] = b
        return x

    def predict(self, z, a, belief) -> np.ndarray:
        flat = belief.flat() if isinstance(belief, Belief) else belief
        out = self.net.forward(self.features(z, a, flat))
        return out[0] if np.ndim(z) == 0 else out

    def cross_entropy(self, x, s) -> float:
        p = self.net.forward(x)
        return float(-np.mean(np.log(p[np.arange(len(s)), s])))

    def to_dict(self):
        return {"n_obs": self.n_obs, "n_actions": self.n_actions, "n_secret": self.n_secret,
                "n_useful": self.n_useful, "net": self.net.to_dict()}

    @classmethod
    def from_dict(cls, d) -> "QNet":
        return cls(d["n_obs"], d["n_actions"], d["n_secret"], d["n_useful"],
                   net=DenseNet.from_dict(d["net"]))


class BayesPosteriorQ:
    """Exact ``P(s | z, a, beta)`` from a known model, with the :class:`QNet` predict interface.

    With this as ``Q`` the variational bound is tight.
    """

    def __init__(self, model):
        self.model = model

    def predict(self, z, a, belief) -> np.ndarray:
        joint = belief.joint if isinstance(belief, Belief) else np.reshape(
            belief, (self.model.n_secret, self.model.n_useful))
        z1, a1 = np.atleast_1d(z), np.atleast_1d(a)
        # (batch, N): sum_u q(z | a, s, u) beta(s, u)
        lik = np.einsum("bsu,su->bs", self.model.probs[a1, :, :, z1], joint)
        tot = lik.sum(axis=1, keepdims=True)
        # impossible (z, a) pairs never get sampled; give them a harmless uniform row
        out = np.where(tot > 0, lik / np.where(tot > 0, tot, 1.0), 1.0 / lik.shape[1])
        return out[0] if np.ndim(z) == 0 else out


@dataclass
class QNetConfig:
    hidden_sizes: tuple = (32, 32)
    lr: float = 0.1
    batch_size: int = 64
    epochs: int = 20
    horizon: int = 3
    lr_decay: float = 0.9
    clip: Optional[float] = 5.0


def uniform_release(n_actions: int):
    pi = np.full(n_actions, 1.0 / n_actions)
    return lambda belief: pi


def sample_qnet_data(model, prior, policy: Callable, n_samples: int, horizon: int, rng):
    """Tuples ``(z, a, beta, s)`` from beliefs reached by rolling out ``policy``.

    For each sample a rollout length is drawn uniformly from ``0..horizon``,
    the belief after that many releases is taken, and then ``(s, u) ~ beta``,
    ``a ~ policy(beta)``, ``z ~ q(. | a, s, u)``.
    """
    n, m = model.n_secret, model.n_useful
    prior_joint = getattr(prior, "joint", prior)
    zs = np.empty(n_samples, dtype=int)
    acts = np.empty(n_samples, dtype=int)
    secrets = np.empty(n_samples, dtype=int)
    beliefs = np.empty((n_samples, n * m))
    flat_prior = np.asarray(prior_joint).ravel()
    for i in range(n_samples):
        belief = Belief(prior_joint)
        cell = rng.choice(n * m, p=flat_prior)
        hs, hu = divmod(cell, m)
        for _ in range(rng.integers(0, horizon + 1)):
            pi = release_distribution(policy(belief), model.n_actions)
            a = rng.choice(model.n_actions, p=pi)
            z = rng.choice(model.n_obs, p=model.probs[a, hs, hu])
            belief = update(belief, model, a, z)
        cell = rng.choice(n * m, p=belief.flat())
        s, u = divmod(cell, m)
        pi = release_distribution(policy(belief), model.n_actions)
        a = rng.choice(model.n_actions, p=pi)
        zs[i] = rng.choice(model.n_obs, p=model.probs[a, s, u])
        acts[i] = a
        secrets[i] = s
        beliefs[i] = belief.flat()
    return zs, acts, beliefs, secrets


def train_qnet(model, prior, policy: Optional[Callable] = None, n_samples: int = 4096,
               net_config: Optional[QNetConfig] = None, seed: int = 0) -> QNet:
    """Fit ``Q(s | z, a, beta)`` by minibatch SGD on cross-entropy against sampled secrets.

    The returned net carries its final full-data loss in ``final_loss``.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be positive")
    cfg = net_config or QNetConfig()
    policy = policy or uniform_release(model.n_actions)
    rng = np.random.default_rng(seed)
    zs, acts, beliefs, secrets = sample_qnet_data(model, prior, policy, n_samples, cfg.horizon, rng)
    qnet = QNet.for_model(model, hidden_sizes=cfg.hidden_sizes, seed=seed, zero_last=True)
    x_all = qnet.features(zs, acts, beliefs)
    lr = cfg.lr
    for _ in range(cfg.epochs):
        order = rng.permutation(n_samples)
        for start in range(0, n_samples, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            x, s = x_all[idx], secrets[idx]
            p = qnet.net.forward(x)
            grad = p.copy()
            grad[np.arange(len(idx)), s] -= 1.0
            grads = qnet.net.backward(x, grad / len(idx), wrt="logits")
            sgd_step(qnet.net, grads, lr, clip=cfg.clip)
        lr *= cfg.lr_decay
    qnet.final_loss = qnet.cross_entropy(x_all, secrets)
    return qnet


def variational_estimate_stats(qnet: QNet, belief: Belief, policy_dist, model, k: int, n: int,
                               seed: int = 0):
    """Variational leakage estimate and its Monte-Carlo standard error.

    Draws ``n`` hidden pairs ``(s_j, u_j) ~ beta``; for each, ``k`` releases
    ``a ~ pi``, ``z ~ q(. | a, s_j, u_j)``. The estimate is
    ``H(beta(S)) + mean_j mean_i log Q(s_j | z_i, a_i, beta)``.
    """
    if k < 1 or n < 1:
        raise ValueError("k and n must be positive")
    rng = np.random.default_rng(seed)
    pi = release_distribution(policy_dist, model.n_actions)
    n_s, n_u = belief.shape
    n_a, n_z = model.n_actions, model.n_obs
    a_grid, z_grid = np.meshgrid(np.arange(n_a), np.arange(n_z), indexing="ij")
    q_all = qnet.predict(z_grid.ravel(), a_grid.ravel(), belief)  # (A*Z, N)
    log_q = np.log(q_all)
    cells = rng.multinomial(n, belief.flat())
    per_j = []
    for cell, count in enumerate(cells):
        if count == 0:
            continue
        s, u = divmod(cell, n_u)
        p_az = (pi[:, None] * model.probs[:, s, u, :]).ravel()
        draws = rng.multinomial(k, p_az / p_az.sum(), size=count)
        per_j.append(draws @ log_q[:, s] / k)
    per_j = np.concatenate(per_j)
    est = entropy(marginal_secret(belief)) + float(per_j.mean())
    se = float(per_j.std(ddof=1) / np.sqrt(n)) if n > 1 else float("nan")
    return est, se


def variational_estimate(qnet: QNet, belief: Belief, policy_dist, model, k: int, n: int,
                         seed: int = 0) -> float:
    return variational_estimate_stats(qnet, belief, policy_dist, model, k, n, seed)[0]
