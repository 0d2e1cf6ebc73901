"""Value iteration on a simplex lattice of beliefs.

Only meant for tiny instances: it gives reference values and policies that
the learned policies are compared against. Transitions mirror the
environment's accounting exactly: a release that lands in the forbidden region
costs ``forbidden_cost`` instead of ``time_cost`` and, in terminate mode,
ends the episode.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .belief import Belief, marginal_secret, update
from .env import BeliefThreshold, CostParams, MIBudget
from .errors import ConvergenceError, SizeError
from .mi import instantaneous_mi

MAX_CELLS = 6
MAX_RESOLUTION = 20
MI_LEVELS = 16


def compositions(total: int, parts: int):
    """All tuples of ``parts`` nonnegative integers summing to ``total``, lexicographic."""
    if parts == 1:
        yield (total,)
        return
    for first in range(total, -1, -1):
        for rest in compositions(total - first, parts - 1):
            yield (first,) + rest


class BeliefGrid:
    """Points ``k / r`` for every composition ``k`` of ``r`` into ``n_secret * n_useful`` parts."""

    def __init__(self, n_secret: int, n_useful: int, resolution: int):
        if resolution < 1:
            raise ValueError("resolution must be positive")
        self.n_secret = n_secret
        self.n_useful = n_useful
        self.resolution = resolution
        counts = np.array(list(compositions(resolution, n_secret * n_useful)), dtype=int)
        self.counts = counts
        self.points = counts / resolution
        self.index = {tuple(c): i for i, c in enumerate(counts)}

    def __len__(self):
        return len(self.points)

    def belief(self, i: int) -> Belief:
        return Belief(self.points[i].reshape(self.n_secret, self.n_useful))

    def project_counts(self, flat) -> tuple:
        x = np.asarray(flat, dtype=float) * self.resolution
        k = np.floor(x).astype(int)
        short = self.resolution - int(k.sum())
        if short > 0:
            order = np.argsort(-(x - k), kind="stable")
            k[order[:short]] += 1
        return tuple(k)

    def project(self, belief) -> int:
        """Index of the l1-nearest lattice point (largest-remainder rounding)."""
        flat = belief.flat() if isinstance(belief, Belief) else np.ravel(belief)
        return self.index[self.project_counts(flat)]

    def projection_distance(self, belief) -> float:
        flat = belief.flat() if isinstance(belief, Belief) else np.ravel(belief)
        return float(np.abs(self.points[self.project(flat)] - flat).sum())


@dataclass
class ValueTable:
    grid: BeliefGrid
    values: np.ndarray          # (points, levels)
    greedy_action: np.ndarray   # (points, levels); n_actions means STOP
    n_actions: int
    privacy: object
    residual: float = 0.0
    iterations: int = 0
    residuals: list = field(default_factory=list)
    max_projection_distance: float = 0.0

    @property
    def stop_action(self):
        return self.n_actions

    @property
    def n_levels(self):
        return self.values.shape[1]

    def level_of(self, cumulative_mi: float) -> int:
        if not isinstance(self.privacy, MIBudget):
            return 0
        return _budget_level(self.privacy.l_mi - cumulative_mi, self.privacy.l_mi)

    def value(self, belief, cumulative_mi: float = 0.0) -> float:
        return float(self.values[self.grid.project(belief), self.level_of(cumulative_mi)])

    def action(self, belief, cumulative_mi: float = 0.0) -> int:
        return int(self.greedy_action[self.grid.project(belief), self.level_of(cumulative_mi)])

    def to_dict(self):
        p = self.privacy
        return {
            "n_secret": self.grid.n_secret,
            "n_useful": self.grid.n_useful,
            "resolution": self.grid.resolution,
            "n_actions": self.n_actions,
            "privacy": {"kind": p.kind, "threshold": p.threshold},
            "residual": self.residual,
            "iterations": self.iterations,
            "values": self.values.tolist(),
            "greedy_action": self.greedy_action.tolist(),
        }

    @classmethod
    def from_dict(cls, d) -> "ValueTable":
        grid = BeliefGrid(d["n_secret"], d["n_useful"], d["resolution"])
        kind, thr = d["privacy"]["kind"], d["privacy"]["threshold"]
        privacy = BeliefThreshold(thr) if kind == "belief" else MIBudget(thr)
        return cls(grid, np.array(d["values"], dtype=float), np.array(d["greedy_action"], dtype=int),
                   d["n_actions"], privacy, d.get("residual", 0.0), d.get("iterations", 0))

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path) -> "ValueTable":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _budget_level(remaining: float, l_mi: float) -> int:
    """Level 1..MI_LEVELS for a positive remaining budget; 0 once exhausted."""
    if remaining <= 0:
        return 0
    return int(min(MI_LEVELS, max(1, round(remaining / l_mi * MI_LEVELS))))


@dataclass
class _Transitions:
    prob: np.ndarray      # (P, A, Z)
    succ: np.ndarray      # (P, L, A, Z) successor flat index point * L + level
    cost: np.ndarray      # (P, L, A, Z)
    cont: np.ndarray      # (P, L, A, Z) bool, False when the episode ends on arrival
    stop: np.ndarray      # (P,)
    frozen: np.ndarray    # (P, L) bool, points whose value is pinned to forbidden_cost
    max_projection_distance: float


def _build(model, grid: BeliefGrid, costs: CostParams, privacy) -> _Transitions:
    n_pts, n_a, n_z = len(grid), model.n_actions, model.n_obs
    is_mi = isinstance(privacy, MIBudget)
    n_lv = MI_LEVELS + 1 if is_mi else 1
    terminate = costs.forbidden_mode == "terminate"

    prob = np.zeros((n_pts, n_a, n_z))
    nxt = np.zeros((n_pts, n_a, n_z), dtype=int)
    arrive_bad = np.zeros((n_pts, n_a, n_z), dtype=bool)
    step_mi = np.zeros((n_pts, n_a))
    max_dist = 0.0
    pts = grid.points.reshape(n_pts, grid.n_secret, grid.n_useful)
    for i in range(n_pts):
        beta = pts[i]
        for a in range(n_a):
            lik = model.probs[a] * beta[:, :, None]  # (s, u, z)
            pz = lik.sum(axis=(0, 1))
            prob[i, a] = pz
            for z in range(n_z):
                if pz[z] <= 0:
                    nxt[i, a, z] = i
                    continue
                post = (lik[:, :, z] / pz[z]).ravel()
                nxt[i, a, z] = grid.project(post)
                if not is_mi:
                    # violation is judged on the exact posterior, as in the environment
                    secret = post.reshape(grid.n_secret, grid.n_useful).sum(axis=1)
                    arrive_bad[i, a, z] = secret.max() >= privacy.l_b
                max_dist = max(max_dist, float(np.abs(grid.points[nxt[i, a, z]] - post).sum()))
            if is_mi:
                step_mi[i, a] = instantaneous_mi(Belief(beta), np.eye(n_a)[a], model)

    stop = np.array([costs.stop_cost(Belief(p)) for p in pts])
    succ = np.zeros((n_pts, n_lv, n_a, n_z), dtype=int)
    cost = np.zeros((n_pts, n_lv, n_a, n_z))
    cont = np.zeros((n_pts, n_lv, n_a, n_z), dtype=bool)
    frozen = np.zeros((n_pts, n_lv), dtype=bool)
    if not is_mi:
        forbidden = pts.sum(axis=2).max(axis=1) >= privacy.l_b
        succ[:, 0] = nxt
        cost[:, 0] = np.where(arrive_bad, costs.forbidden_cost, costs.time_cost)
        cont[:, 0] = ~(arrive_bad & terminate)
        frozen[:, 0] = forbidden if terminate else False
    else:
        budgets = privacy.l_mi * np.arange(n_lv) / MI_LEVELS
        for lv in range(n_lv):
            for a in range(n_a):
                if lv == 0:
                    bad = np.ones(n_pts, dtype=bool)
                    new_lv = np.zeros(n_pts, dtype=int)
                else:
                    rem = budgets[lv] - step_mi[:, a]
                    bad = rem <= 0
                    new_lv = np.array([_budget_level(r, privacy.l_mi) for r in rem])
                succ[:, lv, a, :] = nxt[:, a, :] * n_lv + new_lv[:, None]
                cost[:, lv, a, :] = np.where(bad, costs.forbidden_cost, costs.time_cost)[:, None]
                cont[:, lv, a, :] = ~(bad & terminate)[:, None]
        if terminate:
            frozen[:, 0] = True
    if not is_mi:
        succ = succ * n_lv  # flat index with a single level
    return _Transitions(prob, succ, cost, cont, stop, frozen, max_dist)


def _q_values(tr: _Transitions, flat_v: np.ndarray, gamma: float) -> np.ndarray:
    """Expected cost of each release action, shape (P, L, A)."""
    future = np.where(tr.cont, flat_v[tr.succ], 0.0)
    return np.einsum("paz,plaz->pla", tr.prob, tr.cost + gamma * future)


def value_iteration(model, costs: CostParams, privacy, resolution: int = 12,
                    tol: float = 1e-6, max_iter: int = 100_000) -> ValueTable:
    """Solve the discretized Bellman fixed point by synchronous value iteration.

    Iterates ``V = min(stop_cost, min_a Q_a(V))`` on the lattice, with the
    post-update belief projected to its nearest lattice point. Stops when the
    sup-norm change drops below ``tol``.
    """
    n_cells = model.n_secret * model.n_useful
    if n_cells > MAX_CELLS or resolution > MAX_RESOLUTION:
        raise SizeError(f"value iteration limited to N*M <= {MAX_CELLS} and r <= {MAX_RESOLUTION}"
                        f" (got {n_cells}, {resolution})")
    if not costs.gamma < 1:
        raise SizeError("value iteration needs gamma < 1 to contract")
    grid = BeliefGrid(model.n_secret, model.n_useful, resolution)
    tr = _build(model, grid, costs, privacy)
    n_pts, n_lv = tr.frozen.shape
    stop = np.broadcast_to(tr.stop[:, None], (n_pts, n_lv))
    v = np.where(tr.frozen, costs.forbidden_cost, stop).astype(float)
    residuals = []
    for it in range(1, max_iter + 1):
        q = _q_values(tr, v.ravel(), costs.gamma)
        new = np.minimum(stop, q.min(axis=2))
        new = np.where(tr.frozen, costs.forbidden_cost, new)
        res = float(np.abs(new - v).max())
        residuals.append(res)
        v = new
        if res < tol:
            break
    else:
        raise ConvergenceError(f"value iteration did not converge in {max_iter} iterations",
                               residuals[-1])
    q = _q_values(tr, v.ravel(), costs.gamma)
    best = q.argmin(axis=2)
    release_better = q.min(axis=2) < stop - 1e-12
    greedy = np.where(release_better & ~tr.frozen, best, model.n_actions)
    return ValueTable(grid, v, greedy, model.n_actions, privacy, residuals[-1], it, residuals,
                      tr.max_projection_distance)


@dataclass
class CertificateReport:
    ok: bool
    max_violation: float
    projection_slack: float
    tolerance: float
    worst_point: Optional[int]
    lower_bound_factor: float  # V*(beta) >= V(beta) * lower_bound_factor

    def format(self):
        return (f"certificate {'holds' if self.ok else 'FAILS'}: max violation "
                f"{self.max_violation:.3e} (tolerance {self.tolerance:.3e}, projection slack "
                f"{self.projection_slack:.3e}); implies V*(beta) >= {self.lower_bound_factor:.4g} * V(beta)")


def verify_value_certificate(table: ValueTable, model, costs: CostParams, privacy,
                             tol: float = 1e-6) -> CertificateReport:
    """Check ``V <= min(C_T + min_a T^a V, lambda * C_T * (1 - max_u beta(u)))`` pointwise.

    ``C_T`` is the time cost. The Markov operator is applied on the lattice
    (projected successors, undiscounted). ``projection_slack`` bounds how far
    the stop term can move under one projection and is reported alongside;
    the check passes when the worst violation is within ``10 * tol`` plus that
    slack. Points pinned to the forbidden cost are skipped.
    """
    ct = costs.time_cost
    tr = _build(model, table.grid, costs, privacy)
    flat_v = table.values.ravel()
    future = np.where(tr.cont, flat_v[tr.succ], 0.0)
    # rows of prob sum to one, so this is C_T + (T^a V) with forbidden arrivals priced in
    release = np.einsum("paz,plaz->pla", tr.prob, tr.cost + future)
    pts = table.grid.points.reshape(len(table.grid), table.grid.n_secret, table.grid.n_useful)
    stop_term = costs.lam * ct * (1.0 - pts.sum(axis=1).max(axis=1))
    bound = np.minimum(release.min(axis=2), stop_term[:, None])
    viol = np.where(tr.frozen, -np.inf, table.values - bound)
    worst = float(viol.max()) if np.isfinite(viol.max()) else 0.0
    slack = costs.lam * ct * tr.max_projection_distance
    allowed = 10 * tol + slack
    worst_point = int(np.unravel_index(np.argmax(viol), viol.shape)[0]) if worst > 0 else None
    return CertificateReport(worst <= allowed, max(worst, 0.0), slack, 10 * tol, worst_point,
                             1.0 / ct)


class GreedyPolicy:
    """Deterministic policy reading the greedy action off a value table."""

    def __init__(self, table: ValueTable):
        self.table = table

    def action(self, state) -> int:
        return self.table.action(state.belief, state.cumulative_mi)

    def action_distribution(self, state) -> np.ndarray:
        d = np.zeros(self.table.n_actions + 1)
        d[self.action(state)] = 1.0
        return d


def greedy_policy(table: ValueTable, grid: Optional[BeliefGrid] = None) -> GreedyPolicy:
    return GreedyPolicy(table)


def expectimax(model, costs: CostParams, privacy, belief: Belief, depth: int,
               cumulative_mi: float = 0.0):
    """Exact depth-limited optimal cost on the continuous belief, no lattice.

    Returns ``(value, action)``. At depth 0 only STOP is available. The cost
    accounting follows the environment (violation replaces the step cost).
    """
    is_mi = isinstance(privacy, MIBudget)
    terminate = costs.forbidden_mode == "terminate"
    stop_action = model.n_actions

    def violated(b, cum):
        if is_mi:
            return cum >= privacy.l_mi
        return marginal_secret(b).max() >= privacy.l_b

    def solve(b, cum, d):
        best, best_a = costs.stop_cost(b), stop_action
        if d == 0:
            return best, best_a
        for a in range(model.n_actions):
            step = instantaneous_mi(b, np.eye(model.n_actions)[a], model) if is_mi else 0.0
            pz = np.einsum("su,suz->z", b.joint, model.probs[a])
            total = 0.0
            for z in range(model.n_obs):
                if pz[z] <= 0:
                    continue
                nb = update(b, model, a, z)
                bad = violated(nb, cum + step)
                c = costs.forbidden_cost if bad else costs.time_cost
                if bad and terminate:
                    total += pz[z] * c
                else:
                    total += pz[z] * (c + costs.gamma * solve(nb, cum + step, d - 1)[0])
            if total < best - 1e-12:
                best, best_a = total, a
        return best, best_a

    return solve(belief, cumulative_mi, depth)
