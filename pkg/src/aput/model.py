"""Hypothesis spaces, observation models and priors.

An observation model is a dense table ``probs[a, s, u, z]`` giving the
probability of releasing observation ``z`` through mechanism ``a`` when the
hidden secret is ``s`` and the hidden useful hypothesis is ``u``.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from itertools import combinations
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import ConfigurationError, IngestionError

ROW_TOL = 1e-12


@dataclass(frozen=True)
class HypothesisSpace:
    n_secret: int
    n_useful: int
    secret_labels: Optional[tuple] = None
    useful_labels: Optional[tuple] = None

    def __post_init__(self):
        if int(self.n_secret) < 2 or int(self.n_useful) < 2:
            raise ConfigurationError(
                f"need at least 2 secret and 2 useful hypotheses, got "
                f"N={self.n_secret}, M={self.n_useful}")
        if self.secret_labels is not None:
            object.__setattr__(self, "secret_labels", tuple(str(l) for l in self.secret_labels))
            if len(self.secret_labels) != self.n_secret:
                raise ConfigurationError("secret_labels must have n_secret entries")
        if self.useful_labels is not None:
            object.__setattr__(self, "useful_labels", tuple(str(l) for l in self.useful_labels))
            if len(self.useful_labels) != self.n_useful:
                raise ConfigurationError("useful_labels must have n_useful entries")

    @property
    def shape(self):
        return (self.n_secret, self.n_useful)

    def to_dict(self):
        d = {"n_secret": self.n_secret, "n_useful": self.n_useful}
        if self.secret_labels is not None:
            d["secret_labels"] = list(self.secret_labels)
        if self.useful_labels is not None:
            d["useful_labels"] = list(self.useful_labels)
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(int(d["n_secret"]), int(d["n_useful"]),
                   d.get("secret_labels"), d.get("useful_labels"))


def _readonly(arr):
    arr = np.array(arr, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class ObservationModel:
    """Conditional observation law ``q(z | a, s, u)``.

    Attributes:
        spaces: the secret/useful hypothesis spaces.
        probs: array of shape ``(n_actions, n_secret, n_useful, n_obs)``.
            Rows over ``z`` sum to one.
    """

    spaces: HypothesisSpace
    probs: np.ndarray

    def __post_init__(self):
        probs = _readonly(self.probs)
        if probs.ndim != 4:
            raise ConfigurationError(f"probs must be 4-dimensional, got shape {probs.shape}")
        n_actions, n, m, n_obs = probs.shape
        if (n, m) != self.spaces.shape:
            raise ConfigurationError(
                f"probs shape {probs.shape} does not match hypothesis space {self.spaces.shape}")
        if n_actions < 1 or n_obs < 1:
            raise ConfigurationError("need at least one action and one observation")
        if not np.all(np.isfinite(probs)) or probs.min() < 0.0 or probs.max() > 1.0:
            raise ConfigurationError("observation probabilities must lie in [0, 1]")
        err = np.abs(probs.sum(axis=-1) - 1.0).max()
        if err > ROW_TOL:
            raise ConfigurationError(f"observation rows must sum to 1 (max error {err:.3e})")
        object.__setattr__(self, "probs", probs)

    @property
    def n_actions(self) -> int:
        return self.probs.shape[0]

    @property
    def n_secret(self) -> int:
        return self.probs.shape[1]

    @property
    def n_useful(self) -> int:
        return self.probs.shape[2]

    @property
    def n_obs(self) -> int:
        return self.probs.shape[3]

    def to_dict(self):
        return {
            "spaces": self.spaces.to_dict(),
            "n_actions": self.n_actions,
            "n_obs": self.n_obs,
            "probs": self.probs.tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        try:
            spaces = HypothesisSpace.from_dict(d["spaces"])
            probs = np.array(d["probs"], dtype=float)
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigurationError(f"malformed model document: {exc}") from exc
        if probs.ndim != 4 or probs.shape[0] != d.get("n_actions", probs.shape[0]) \
                or probs.shape[3] != d.get("n_obs", probs.shape[3]):
            raise ConfigurationError("model document sizes disagree with probs array")
        return cls(spaces, probs)

    def to_json(self) -> str:
        # float repr is shortest round-trip, so the decimal text reloads bit-exactly
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "ObservationModel":
        return cls.from_dict(json.loads(text))

    def save(self, path):
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path) -> "ObservationModel":
        return cls.from_json(Path(path).read_text())


@dataclass(frozen=True, eq=False)
class Prior:
    joint: np.ndarray

    def __post_init__(self):
        joint = _readonly(self.joint)
        if joint.ndim != 2:
            raise ConfigurationError("prior must be an N x M array")
        if joint.min() < 0.0 or abs(joint.sum() - 1.0) > ROW_TOL:
            raise ConfigurationError("prior must be nonnegative and sum to 1")
        object.__setattr__(self, "joint", joint)

    @classmethod
    def uniform(cls, n_secret: int, n_useful: int) -> "Prior":
        return cls(np.full((n_secret, n_useful), 1.0 / (n_secret * n_useful)))

    @property
    def shape(self):
        return self.joint.shape


# ---------------------------------------------------------------------------
# Synthetic models

def disclosed_secret(action: int, n_secret: int) -> int:
    """Secret value whose cells action ``action`` separates.

    Action 0 discloses the last secret, action 1 the one before it, and so on,
    cycling modulo ``n_secret``: for N=3 the map is 0->2, 1->1, 2->0.
    """
    return n_secret - 1 - (action % n_secret)


def synthetic_means(n_actions: int, n_secret: int, n_useful: int) -> np.ndarray:
    """Gaussian mean (in value units) for every ``(a, s, u)`` cell.

    The disclosed secret's cells get means ``1, 2, ..., M`` by useful index;
    every other cell gets mean 0.
    """
    means = np.zeros((n_actions, n_secret, n_useful))
    for a in range(n_actions):
        s = disclosed_secret(a, n_secret)
        means[a, s, :] = np.arange(1, n_useful + 1)
    return means


def gaussian_row(mean: float, sigma: float, n_obs: int, n_useful: int) -> np.ndarray:
    """Discretized Gaussian over ``n_obs`` bins spanning values ``[0, M + 1)``.

    Bin ``z`` sits at value ``z * (M + 1) / n_obs``; the density is evaluated
    there and the row renormalized.
    """
    x = np.arange(n_obs) * ((n_useful + 1) / n_obs)
    dens = np.exp(-0.5 * ((x - mean) / sigma) ** 2)
    return dens / dens.sum()


def build_synthetic(seed: int, n_actions: int = 3, n_secret: int = 3, n_useful: int = 3,
                    n_obs: int = 50, sigma_lo: float = 0.5, sigma_hi: float = 1.5) -> ObservationModel:
    """Random Gaussian-bin observation model in which each action separates one secret.

    Standard deviations are drawn uniformly from ``[sigma_lo, sigma_hi]`` per
    ``(a, s, u)`` cell, in C order, from ``numpy.random.default_rng(seed)``.
    """
    if n_actions < 1 or n_obs < 2:
        raise ConfigurationError(f"need n_actions >= 1 and n_obs >= 2 (got {n_actions}, {n_obs})")
    if not (0.0 < sigma_lo <= sigma_hi):
        raise ConfigurationError(f"need 0 < sigma_lo <= sigma_hi (got {sigma_lo}, {sigma_hi})")
    spaces = HypothesisSpace(n_secret, n_useful)
    rng = np.random.default_rng(seed)
    sigmas = rng.uniform(sigma_lo, sigma_hi, size=(n_actions, n_secret, n_useful))
    means = synthetic_means(n_actions, n_secret, n_useful)
    probs = np.empty((n_actions, n_secret, n_useful, n_obs))
    for idx in np.ndindex(n_actions, n_secret, n_useful):
        probs[idx] = gaussian_row(means[idx], sigmas[idx], n_obs, n_useful)
    return ObservationModel(spaces, probs)


def desk_instance() -> ObservationModel:
    """Small 2x2 instance with two complementary mechanisms and binary output.

    Mechanism ``a`` reports ``u`` exactly when ``s = a`` and reports it
    correctly with probability 2/3 otherwise. One release already leaves the
    useful marginal at 5/6 without moving the secret marginal; repeating
    releases starts to separate the secrets. Every reachable posterior within
    one step lies on the twelfth-lattice, which keeps the DP check exact.
    """
    q = np.empty((2, 2, 2, 2))
    for a in range(2):
        for s in range(2):
            p = 1.0 if s == a else 2.0 / 3.0
            for u in range(2):
                q[a, s, u, u] = p
                q[a, s, u, 1 - u] = 1.0 - p
    return ObservationModel(HypothesisSpace(2, 2), q)


DESK_COSTS = dict(lam=50.0, time_cost=1.0, forbidden_cost=500.0, gamma=0.99, t_max=50)


# ---------------------------------------------------------------------------
# Divergences and identifiability

def kl_divergence(p, q) -> float:
    """KL divergence ``D(p || q)`` in nats; ``inf`` when p puts mass where q has none."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape != q.shape:
        raise ValueError(f"length mismatch: {p.shape} vs {q.shape}")
    mask = p > 0
    if np.any(q[mask] <= 0):
        return math.inf
    return max(float(np.sum(p[mask] * np.log(p[mask] / q[mask]))), 0.0)


@dataclass
class IdentifiabilityReport:
    ok: bool
    witnesses: dict = field(default_factory=dict)  # (u, u') -> action or None

    @property
    def failing_pairs(self):
        return [pair for pair, a in self.witnesses.items() if a is None]

    def format(self) -> str:
        lines = [f"identifiable: {'yes' if self.ok else 'no'}"]
        for (u, v), a in self.witnesses.items():
            lines.append(f"  u={u} vs u={v}: " + (f"action {a}" if a is not None else "NO WITNESS"))
        return "\n".join(lines)


def check_identifiability(model: ObservationModel, tol: float = 1e-12) -> IdentifiabilityReport:
    """Find, for every pair of useful hypotheses, an action separating them under every secret."""
    witnesses = {}
    for u, v in combinations(range(model.n_useful), 2):
        witnesses[(u, v)] = None
        for a in range(model.n_actions):
            if all(kl_divergence(model.probs[a, s, u], model.probs[a, s, v]) > tol
                   for s in range(model.n_secret)):
                witnesses[(u, v)] = a
                break
    return IdentifiabilityReport(all(a is not None for a in witnesses.values()), witnesses)


# ---------------------------------------------------------------------------
# Empirical fitting from labeled readings

CSV_COLUMNS = ("action", "reading", "secret", "useful")


@dataclass(frozen=True)
class Record:
    action: int
    reading: float
    secret: str
    useful: str


def read_records(source) -> list:
    """Parse the ``action,reading,secret,useful`` CSV schema.

    ``source`` is a path or an open text stream. Row numbers in errors count
    the header as row 1.
    """
    if isinstance(source, (str, Path)):
        with open(source, newline="", encoding="utf-8") as fh:
            return read_records(fh)
    reader = csv.reader(source)
    try:
        header = next(reader)
    except StopIteration:
        raise IngestionError("empty input", row=1) from None
    if tuple(h.strip() for h in header) != CSV_COLUMNS:
        raise IngestionError(f"expected header {','.join(CSV_COLUMNS)}, got {','.join(header)}", row=1)
    records = []
    for row_no, row in enumerate(reader, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != 4:
            raise IngestionError(f"expected 4 fields, got {len(row)}", row=row_no)
        action, reading, secret, useful = (c.strip() for c in row)
        try:
            a = int(action)
        except ValueError:
            raise IngestionError(f"action id {action!r} is not an integer", row=row_no) from None
        if a < 0:
            raise IngestionError(f"negative action id {a}", row=row_no)
        try:
            x = float(reading)
        except ValueError:
            raise IngestionError(f"non-numeric reading {reading!r}", row=row_no) from None
        if not math.isfinite(x):
            raise IngestionError(f"non-finite reading {reading!r}", row=row_no)
        records.append((row_no, Record(a, x, secret, useful)))
    if not records:
        raise IngestionError("no data rows", row=2)
    return records


def equal_frequency_edges(values, n_bins: int) -> np.ndarray:
    """Interior bin edges splitting ``values`` into ``n_bins`` equal-frequency bins.

    A value ``x`` falls in bin ``searchsorted(edges, x, side='right')``. With
    no ties, bin occupancies differ by at most one.
    """
    v = np.sort(np.asarray(values, dtype=float))
    n = len(v)
    if n == 0:
        raise ValueError("cannot bin an empty sample")
    ranks = [min(math.ceil(k * n / n_bins), n - 1) for k in range(1, n_bins)]
    return v[ranks] if ranks else np.empty(0)


def quantize(values, edges) -> np.ndarray:
    return np.searchsorted(edges, np.asarray(values, dtype=float), side="right")


def _label_index(labels, value, row_no, kind):
    if labels is None:
        return value
    if value in labels:
        return labels.index(value)
    raise IngestionError(f"unknown {kind} label {value!r}", row=row_no)


def fit_from_csv(records, n_obs: int, smoothing: float = 1.0,
                 spaces: Optional[HypothesisSpace] = None,
                 n_actions: Optional[int] = None) -> ObservationModel:
    """Empirical observation model from labeled readings.

    ``records`` is a CSV path/stream or the output of :func:`read_records`.
    Readings are quantized per action into ``n_obs`` equal-frequency bins and
    the table is ``(count + smoothing) / (total + smoothing * n_obs)``.

    Without ``spaces`` the label sets are taken from the data (sorted); with
    ``spaces`` carrying labels, any other label is rejected.
    """
    if n_obs < 1:
        raise ConfigurationError("n_obs must be positive")
    if smoothing < 0:
        raise ConfigurationError("smoothing must be nonnegative")
    if isinstance(records, (str, Path, io.IOBase)):
        records = read_records(records)
    records = list(records)
    if not records:
        raise IngestionError("empty input")
    if not isinstance(records[0], tuple):
        records = list(enumerate(records, start=2))

    if spaces is None:
        secret_labels = tuple(sorted({r.secret for _, r in records}))
        useful_labels = tuple(sorted({r.useful for _, r in records}))
        spaces = HypothesisSpace(len(secret_labels), len(useful_labels), secret_labels, useful_labels)
    sl = list(spaces.secret_labels) if spaces.secret_labels is not None else None
    ul = list(spaces.useful_labels) if spaces.useful_labels is not None else None

    rows = []
    for row_no, r in records:
        s = _label_index(sl, r.secret, row_no, "secret")
        u = _label_index(ul, r.useful, row_no, "useful")
        if sl is None:
            try:
                s = int(s)
            except ValueError:
                raise IngestionError(f"unknown secret label {r.secret!r}", row=row_no) from None
        if ul is None:
            try:
                u = int(u)
            except ValueError:
                raise IngestionError(f"unknown useful label {r.useful!r}", row=row_no) from None
        if not (0 <= s < spaces.n_secret):
            raise IngestionError(f"unknown secret label {r.secret!r}", row=row_no)
        if not (0 <= u < spaces.n_useful):
            raise IngestionError(f"unknown useful label {r.useful!r}", row=row_no)
        if n_actions is not None and r.action >= n_actions:
            raise IngestionError(f"action id {r.action} out of range", row=row_no)
        rows.append((r.action, r.reading, s, u))

    n_act = n_actions if n_actions is not None else 1 + max(a for a, *_ in rows)
    counts = np.zeros((n_act, spaces.n_secret, spaces.n_useful, n_obs))
    for a in range(n_act):
        mine = [(x, s, u) for aa, x, s, u in rows if aa == a]
        if not mine:
            if smoothing == 0:
                raise IngestionError(f"action {a} has no readings and smoothing is 0")
            continue
        edges = equal_frequency_edges([x for x, _, _ in mine], n_obs)
        bins = quantize([x for x, _, _ in mine], edges)
        for (x, s, u), z in zip(mine, bins):
            counts[a, s, u, z] += 1
    totals = counts.sum(axis=-1, keepdims=True)
    if smoothing == 0 and np.any(totals == 0):
        a, s, u, _ = np.argwhere(totals == 0)[0]
        raise IngestionError(f"no readings for (action={a}, secret={s}, useful={u}) and smoothing is 0")
    probs = (counts + smoothing) / (totals + smoothing * n_obs)
    return ObservationModel(spaces, probs)
