"""Joint belief over (secret, useful) and exact Bayesian filtering."""
from __future__ import annotations

import numpy as np

from .errors import ZeroLikelihoodError

NORM_TOL = 1e-10
DENOM_FLOOR = 1e-300


class Belief:
    """Immutable joint posterior ``beta[s, u]``."""

    __slots__ = ("joint",)

    def __init__(self, joint, normalize: bool = False):
        arr = np.array(joint, dtype=float)
        if arr.ndim != 2:
            raise ValueError(f"belief must be 2-dimensional, got shape {arr.shape}")
        if normalize:
            total = arr.sum()
            if total <= 0:
                raise ValueError("cannot normalize a belief with no mass")
            arr /= total
        if arr.min() < 0 or abs(arr.sum() - 1.0) > NORM_TOL:
            raise ValueError("belief must be nonnegative and sum to 1")
        arr.setflags(write=False)
        object.__setattr__(self, "joint", arr)

    def __setattr__(self, name, value):
        raise AttributeError("Belief is immutable")

    @classmethod
    def uniform(cls, n_secret: int, n_useful: int) -> "Belief":
        return cls(np.full((n_secret, n_useful), 1.0 / (n_secret * n_useful)))

    @classmethod
    def from_prior(cls, prior) -> "Belief":
        return cls(getattr(prior, "joint", prior))

    @property
    def shape(self):
        return self.joint.shape

    def flat(self) -> np.ndarray:
        return self.joint.ravel()

    def __repr__(self):
        return f"Belief({self.joint.tolist()})"


def update(belief: Belief, model, action: int, obs: int) -> Belief:
    """Posterior after observing ``obs`` released through mechanism ``action``."""
    if not 0 <= action < model.n_actions:
        raise IndexError(f"action {action} out of range")
    if not 0 <= obs < model.n_obs:
        raise IndexError(f"observation {obs} out of range")
    post = model.probs[action, :, :, obs] * belief.joint
    total = post.sum()
    if total < DENOM_FLOOR:
        raise ZeroLikelihoodError(
            f"observation {obs} under action {action} has zero probability for this belief")
    return Belief(post / total)


def marginal_secret(belief: Belief) -> np.ndarray:
    return belief.joint.sum(axis=1)


def marginal_useful(belief: Belief) -> np.ndarray:
    return belief.joint.sum(axis=0)


def _argmax_first(dist):
    i = int(np.argmax(dist))  # numpy returns the first maximal index
    return i, float(dist[i])


def max_confidence_secret(belief: Belief):
    """``(s*, beta(s*))`` for the most likely secret; ties go to the smallest index."""
    return _argmax_first(marginal_secret(belief))


def max_confidence_useful(belief: Belief):
    return _argmax_first(marginal_useful(belief))


def entropy(dist) -> float:
    """Shannon entropy in nats."""
    p = np.asarray(dist, dtype=float).ravel()
    p = p[p > 0]
    return max(float(-np.sum(p * np.log(p))), 0.0)
