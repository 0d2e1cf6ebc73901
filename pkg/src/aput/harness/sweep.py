"""Privacy-utility sweeps: train and evaluate one policy per threshold.

Outputs land in ``out_dir``:

* ``put_curve.csv``  one row per (threshold, policy), learned and random
* ``breakdown.csv``  per-class accuracies for every row of the curve
* ``training_log_<i>.csv``  checkpoint records for the i-th threshold
* ``put_curve.svg``  stopping time / confidence and accuracies vs threshold

Every CSV ends with a ``# config_hash=... seed=...`` comment line.
"""
from __future__ import annotations

import csv
import io
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, List, Optional

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from ..a2c import EvalMetrics, RandomPolicy, evaluate, train  # noqa: E402
from ..env import PrivacyEnv  # noqa: E402
from ..errors import TrainingDivergedError  # noqa: E402
from .config import ExperimentConfig  # noqa: E402

log = logging.getLogger(__name__)

CURVE_COLUMNS = ("threshold", "policy", "mean_tau", "sd_tau", "mean_conf_u", "acc_u", "acc_s",
                 "violation_rate", "mean_mi")
LEARNED = "a2c"
BASELINE = "random"


@dataclass
class CurvePoint:
    threshold: float
    policy: str
    metrics: EvalMetrics


@dataclass
class PutCurve:
    points: List[CurvePoint] = field(default_factory=list)
    logs: list = field(default_factory=list)
    complete: bool = True

    def series(self, policy: str) -> List[CurvePoint]:
        return [p for p in self.points if p.policy == policy]

    def best_gap(self):
        """Threshold where the learned policy's ``acc_u - acc_s`` is largest, with both gaps."""
        best = None
        for learned, base in zip(self.series(LEARNED), self.series(BASELINE)):
            gap = learned.metrics.acc_u - learned.metrics.acc_s
            if best is None or gap > best[1]:
                best = (learned.threshold, gap, base.metrics.acc_u - base.metrics.acc_s)
        return best


def sweep_seed(master_seed: int, index: int) -> int:
    return int(master_seed) ^ int(index)


def _fmt(x) -> str:
    return repr(float(x))


def curve_csv(curve: PutCurve, metadata: str) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CURVE_COLUMNS)
    for p in curve.points:
        m = p.metrics
        w.writerow([_fmt(p.threshold), p.policy, _fmt(m.mean_tau), _fmt(m.sd_tau),
                    _fmt(m.mean_conf_u), _fmt(m.acc_u), _fmt(m.acc_s), _fmt(m.violation_rate),
                    _fmt(m.mean_mi)])
    buf.write(f"# {metadata}\n")
    return buf.getvalue()


def breakdown_csv(curve: PutCurve, n_secret: int, n_useful: int, metadata: str) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["policy", "constraint", "tau", "conf_u", "acc_u"]
               + [f"acc_u_{k}" for k in range(n_useful)] + ["acc_s"]
               + [f"acc_s_{k}" for k in range(n_secret)])
    for p in curve.points:
        m = p.metrics
        w.writerow([p.policy, _fmt(p.threshold), _fmt(m.mean_tau), _fmt(m.mean_conf_u),
                    _fmt(m.acc_u)] + [_fmt(v) for v in m.acc_u_by_class] + [_fmt(m.acc_s)]
                   + [_fmt(v) for v in m.acc_s_by_class])
    buf.write(f"# {metadata}\n")
    return buf.getvalue()


def plot_curve(curve: PutCurve, path, xlabel: str):
    """Two panels: stopping time and stop-time confidence; useful and secret accuracy."""
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(800 / 72, 500 / 72), dpi=72)
    ax1c = ax1.twinx()
    styles = {LEARNED: "-", BASELINE: "--"}
    handles = []
    for policy, ls in styles.items():
        pts = curve.series(policy)
        if not pts:
            continue
        x = [p.threshold for p in pts]
        handles += ax1.plot(x, [p.metrics.mean_tau for p in pts], ls, marker="o", color="C0",
                            label=f"tau ({policy})")
        handles += ax1c.plot(x, [p.metrics.mean_conf_u for p in pts], ls, marker="s",
                             color="C1", label=f"max belief u ({policy})")
        ax2.plot(x, [p.metrics.acc_u for p in pts], ls, marker="o", color="C2",
                 label=f"useful acc ({policy})")
        ax2.plot(x, [p.metrics.acc_s for p in pts], ls, marker="s", color="C3",
                 label=f"secret acc ({policy})")
    ax1.set_xlabel(xlabel)
    ax1.set_ylabel("mean stopping time")
    ax1c.set_ylabel("mean stop-time max belief on u")
    ax1.legend(handles=handles, loc="upper left", fontsize=8)
    ax2.set_xlabel(xlabel)
    ax2.set_ylabel("accuracy")
    ax2.set_ylim(0, 1.02)
    ax2.legend(loc="lower right", fontsize=8)
    for ax in (ax1, ax2):
        ax.grid(alpha=0.3)
    fig.tight_layout()
    buf = io.StringIO()
    with plt.rc_context({"svg.hashsalt": "aput", "svg.fonttype": "path"}):
        fig.savefig(buf, format="svg",
                    metadata={"Date": None, "Creator": None, "Format": None, "Type": None})
    plt.close(fig)
    # drop the DTD reference so the file is self-contained
    text = re.sub(r"<!DOCTYPE[^>]*>\n?", "", buf.getvalue())
    Path(path).write_text(text)


def write_outputs(curve: PutCurve, cfg: ExperimentConfig, out_dir, n_secret: int, n_useful: int):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    meta = cfg.metadata()
    (out / "put_curve.csv").write_text(curve_csv(curve, meta))
    (out / "breakdown.csv").write_text(breakdown_csv(curve, n_secret, n_useful, meta))
    for i, tlog in enumerate(curve.logs):
        (out / f"training_log_{i}.csv").write_text(tlog.to_csv(metadata=meta))
    if curve.points:
        xlabel = "belief threshold L_B" if cfg.privacy == "belief" else "MI budget L_MI (nats)"
        plot_curve(curve, out / "put_curve.svg", xlabel)
    return out


def run_put_sweep(cfg: ExperimentConfig, out_dir=None,
                  progress: Optional[Callable[[str], None]] = None) -> PutCurve:
    """Train, evaluate and write the curve files for every threshold in ``cfg``.

    If training diverges at some threshold, everything finished so far is
    written and the :class:`TrainingDivergedError` is re-raised.
    """
    out_dir = cfg.out_dir if out_dir is None else out_dir
    say = progress or log.info
    model = cfg.build_model()
    prior = cfg.build_prior(model)
    costs = cfg.build_costs()
    curve = PutCurve()
    try:
        for i, th in enumerate(cfg.thresholds):
            seed = sweep_seed(cfg.seed, i)
            env = PrivacyEnv(model, prior, costs, cfg.build_privacy(th))
            say(f"threshold {th:g}: training {cfg.episodes} episodes (seed {seed})")
            policy, tlog = train(env, cfg.a2c_config(seed))
            curve.logs.append(tlog)
            learned = evaluate(policy, env, cfg.eval_episodes, seed=seed)
            base = evaluate(RandomPolicy(env.n_actions), env, cfg.eval_episodes, seed=seed)
            curve.points.append(CurvePoint(th, LEARNED, learned))
            curve.points.append(CurvePoint(th, BASELINE, base))
            say(f"threshold {th:g}: tau={learned.mean_tau:.3f} conf_u={learned.mean_conf_u:.3f} "
                f"acc_u={learned.acc_u:.3f} acc_s={learned.acc_s:.3f} "
                f"violations={learned.violation_rate:.3f}")
    except TrainingDivergedError:
        curve.complete = False
        write_outputs(curve, cfg, out_dir, model.n_secret, model.n_useful)
        raise
    write_outputs(curve, cfg, out_dir, model.n_secret, model.n_useful)
    return curve
