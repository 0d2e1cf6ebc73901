"""Episodic release environment with belief- or MI-based privacy constraints.

Actions are indices ``0 .. n_actions - 1`` for the release mechanisms and
``n_actions`` for STOP (declare the most likely useful hypothesis and end).
"""
from __future__ import annotations

import csv
import enum
import math
import warnings
from dataclasses import dataclass, replace
from typing import Optional, Tuple, Union

import numpy as np

from .belief import Belief, max_confidence_secret, max_confidence_useful, update
from .errors import ConfigurationError, UsageError
from .mi import instantaneous_mi
from .model import check_identifiability

FORBIDDEN_MODES = ("terminate", "penalize-continue")


@dataclass(frozen=True)
class CostParams:
    lam: float = 50.0
    time_cost: float = 0.5
    forbidden_cost: float = 500.0
    gamma: float = 0.99
    t_max: int = 50
    scale_stop_cost_by_time_cost: bool = False
    forbidden_mode: str = "terminate"

    def __post_init__(self):
        if self.lam < 0:
            raise ConfigurationError("lambda must be nonnegative")
        if self.time_cost <= 0:
            raise ConfigurationError("time_cost must be positive")
        if not self.forbidden_cost > self.lam:
            raise ConfigurationError("forbidden_cost must exceed lambda")
        if not 0 < self.gamma <= 1:
            raise ConfigurationError("gamma must lie in (0, 1]")
        if int(self.t_max) < 1:
            raise ConfigurationError("t_max must be at least 1")
        if self.forbidden_mode not in FORBIDDEN_MODES:
            raise ConfigurationError(f"forbidden_mode must be one of {FORBIDDEN_MODES}")

    def stop_cost(self, belief: Belief) -> float:
        cost = self.lam * (1.0 - max_confidence_useful(belief)[1])
        return cost * self.time_cost if self.scale_stop_cost_by_time_cost else cost


@dataclass(frozen=True)
class BeliefThreshold:
    """Keep the adversary's top secret confidence strictly below ``l_b``."""
    l_b: float

    kind = "belief"

    @property
    def threshold(self):
        return self.l_b

    def validate(self, prior_joint):
        n = prior_joint.shape[0]
        if not (1.0 / n < self.l_b <= 1.0):
            raise ConfigurationError(f"L_B must lie in (1/N, 1], got {self.l_b}")
        top = float(np.max(prior_joint.sum(axis=1)))
        if not self.l_b > top:
            raise ConfigurationError(
                f"L_B={self.l_b} is already violated by the prior (max secret marginal {top:.4g})")


@dataclass(frozen=True)
class MIBudget:
    """Keep cumulative leakage ``I(S; Z^t, A^t)`` strictly below ``l_mi`` nats.

    ``budget_feature`` adds the remaining-budget fraction to the policy input;
    turning it off gives the belief-only ablation.
    """
    l_mi: float
    budget_feature: bool = True

    kind = "mi"

    @property
    def threshold(self):
        return self.l_mi

    def validate(self, prior_joint):
        if not self.l_mi > 0:
            raise ConfigurationError("L_MI must be positive")
        n = prior_joint.shape[0]
        if self.l_mi > math.log(n):
            warnings.warn(f"L_MI={self.l_mi} exceeds log N={math.log(n):.4f}; "
                          "the constraint is close to vacuous", stacklevel=3)


PrivacySpec = Union[BeliefThreshold, MIBudget]


def make_privacy(kind: str, threshold: float, **kwargs) -> PrivacySpec:
    if kind == "belief":
        return BeliefThreshold(threshold)
    if kind == "mi":
        return MIBudget(threshold, **kwargs)
    raise ConfigurationError(f"unknown privacy kind {kind!r}")


class Phase(enum.Enum):
    ACTIVE = "active"
    FORBIDDEN = "forbidden"
    TERMINAL = "terminal"


@dataclass(frozen=True)
class EnvState:
    belief: Belief
    cumulative_mi: float
    step: int
    phase: Phase
    hidden: Tuple[int, int]
    violated: bool = False
    declared_useful: Optional[int] = None


@dataclass(frozen=True)
class StepOutcome:
    cost: float
    observation: Optional[int]
    done: bool
    violation: bool
    declared_useful: Optional[int] = None
    step_mi: float = 0.0


class PrivacyEnv:
    """Simulator for one user releasing data to a Bayesian adversary.

    The environment object holds the shared, read-only problem definition and
    the episode's random generator; the evolving state is an :class:`EnvState`.
    """

    def __init__(self, model, prior, costs: CostParams, privacy: PrivacySpec):
        self.model = model
        self.prior_joint = np.asarray(getattr(prior, "joint", prior), dtype=float)
        if self.prior_joint.shape != (model.n_secret, model.n_useful):
            raise ConfigurationError("prior shape does not match the model")
        self.costs = costs
        self.privacy = privacy
        privacy.validate(self.prior_joint)
        if not check_identifiability(model).ok:
            warnings.warn("observation model is not identifiable for the useful hypothesis",
                          stacklevel=2)
        self.rng = np.random.default_rng()

    @property
    def n_actions(self) -> int:
        return self.model.n_actions

    @property
    def stop_action(self) -> int:
        return self.model.n_actions

    @property
    def feature_size(self) -> int:
        extra = 1 if isinstance(self.privacy, MIBudget) and self.privacy.budget_feature else 0
        return self.model.n_secret * self.model.n_useful + extra + 1

    def reset(self, seed=None) -> EnvState:
        self.rng = np.random.default_rng(seed)
        m = self.model.n_useful
        cell = int(self.rng.choice(self.prior_joint.size, p=self.prior_joint.ravel()))
        return EnvState(Belief(self.prior_joint), 0.0, 0, Phase.ACTIVE, divmod(cell, m))

    def _violated(self, state: EnvState) -> bool:
        if isinstance(self.privacy, BeliefThreshold):
            return max_confidence_secret(state.belief)[1] >= self.privacy.l_b
        return state.cumulative_mi >= self.privacy.l_mi

    def _stop(self, state: EnvState, cost: float, violation: bool, obs=None, step_mi=0.0):
        declared = max_confidence_useful(state.belief)[0]
        cost += self.costs.stop_cost(state.belief)
        new = replace(state, phase=Phase.TERMINAL, declared_useful=declared)
        return new, StepOutcome(cost, obs, True, violation, declared, step_mi)

    def step(self, state: EnvState, action: int, policy_dist=None) -> Tuple[EnvState, StepOutcome]:
        """Apply one release or STOP.

        ``policy_dist`` is the acting policy's full action distribution at this
        state; it enters the leakage accumulator. When omitted the action is
        treated as chosen deterministically.
        """
        if state.phase is not Phase.ACTIVE:
            raise UsageError("episode is finished; call reset()")
        if action == self.stop_action:
            return self._stop(state, 0.0, False)
        if not 0 <= action < self.n_actions:
            raise IndexError(f"action {action} out of range")
        if policy_dist is None:
            policy_dist = np.eye(self.n_actions)[action]

        s, u = state.hidden
        z = int(self.rng.choice(self.model.n_obs, p=self.model.probs[action, s, u]))
        step_mi = instantaneous_mi(state.belief, policy_dist, self.model)
        new = replace(state, belief=update(state.belief, self.model, action, z),
                      cumulative_mi=state.cumulative_mi + step_mi, step=state.step + 1)
        violation = self._violated(new)
        cost = self.costs.time_cost
        if violation:
            cost = self.costs.forbidden_cost
            new = replace(new, violated=True)
            if self.costs.forbidden_mode == "terminate":
                new = replace(new, phase=Phase.FORBIDDEN)
                return new, StepOutcome(cost, z, True, True, None, step_mi)
        if new.step >= self.costs.t_max:
            return self._stop(new, cost, violation, z, step_mi)
        return new, StepOutcome(cost, z, False, violation, None, step_mi)


def encode_state(state: EnvState, privacy: PrivacySpec, t_max: int) -> np.ndarray:
    """Policy input: flattened belief, remaining-budget fraction (MI only), then ``step / t_max``."""
    parts = [state.belief.flat()]
    if isinstance(privacy, MIBudget) and privacy.budget_feature:
        parts.append([max(0.0, (privacy.l_mi - state.cumulative_mi) / privacy.l_mi)])
    parts.append([state.step / t_max])
    return np.concatenate(parts)


TRACE_COLUMNS = ("episode", "step", "action", "observation", "cost", "max_conf_secret",
                 "max_conf_useful", "cumulative_mi", "phase")


class TraceWriter:
    """Appends per-step rows in the trace CSV format."""

    def __init__(self, fh):
        self.writer = csv.writer(fh, lineterminator="\n")
        self.writer.writerow(TRACE_COLUMNS)

    def write(self, episode: int, state: EnvState, action: int, outcome: StepOutcome):
        self.writer.writerow([
            episode, state.step, action,
            "" if outcome.observation is None else outcome.observation,
            repr(float(outcome.cost)),
            repr(max_confidence_secret(state.belief)[1]),
            repr(max_confidence_useful(state.belief)[1]),
            repr(float(state.cumulative_mi)),
            state.phase.value,
        ])
