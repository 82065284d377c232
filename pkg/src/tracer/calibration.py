"""Fitting (alpha, beta, gamma, k, w) to labeled trajectories.

The objective is the pairwise logistic loss between failure and success
scores. Search is a coarse grid over (alpha, beta, gamma, k) at a pilot w,
a few rounds of local refinement around the incumbent, then a line search
over w. Step signals are computed once per trajectory; each candidate only
redoes the max-composite and the tail aggregation.
"""

from __future__ import annotations

import itertools
import json
import math
import os
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .embeddings import Embedder, default_embedder
from .errors import CalibrationError, ConfigError, EvaluationError
from .evaluation import auroc
from .risk import TracerParams, ragged_scores
from .signals import SignalConfig, compute_step_signals
from .trajectory import Actor, TrajectoryRecord, require_labels

_PARAM_NAMES = ("alpha", "beta", "gamma", "k")


@dataclass(frozen=True)
class GridSpec:
    alpha: tuple[float, ...] = (0.0, 0.5, 1.0, 2.0, 4.0)
    beta: tuple[float, ...] = (0.0, 0.5, 1.0, 2.0, 4.0)
    gamma: tuple[float, ...] = (0.0, 0.5, 1.0, 2.0, 4.0)
    k: tuple[float, ...] = (0.1, 0.2, 0.3, 0.5, 1.0)
    levels: int = 2
    shrink: float = 0.5
    tau: float = 0.1
    pilot_w: float = 0.25
    w_values: tuple[float, ...] = tuple(i / 20 for i in range(21))

    def __post_init__(self):
        for name in ("alpha", "beta", "gamma", "k", "w_values"):
            vals = tuple(float(v) for v in getattr(self, name))
            if not vals:
                raise ConfigError(f"grid list {name!r} is empty")
            object.__setattr__(self, name, tuple(sorted(set(vals))))
        for name in ("alpha", "beta", "gamma"):
            if min(getattr(self, name)) < 0:
                raise ConfigError(f"grid values for {name} must be >= 0")
        if not all(0.0 < v <= 1.0 for v in self.k):
            raise ConfigError("grid values for k must lie in (0, 1]")
        if not all(0.0 <= v <= 1.0 for v in self.w_values) or not 0.0 <= self.pilot_w <= 1.0:
            raise ConfigError("w values must lie in [0, 1]")
        if self.levels < 1:
            raise ConfigError("refinement levels must be >= 1")
        if not 0.0 < self.shrink < 1.0:
            raise ConfigError("refinement shrink factor must lie in (0, 1)")
        if not self.tau > 0.0:
            raise ConfigError("loss temperature tau must be > 0")

    @classmethod
    def single(cls, params: TracerParams, **kw) -> "GridSpec":
        return cls(alpha=(params.alpha,), beta=(params.beta,), gamma=(params.gamma,), k=(params.k,),
                   pilot_w=params.w, w_values=(params.w,), **kw)


def pairwise_logistic_loss(scores_fail: Sequence[float], scores_succ: Sequence[float], tau: float) -> float:
    """Mean over all (failure, success) pairs of log(1 + exp(-(s_f - s_s) / tau))."""
    f = np.asarray(scores_fail, dtype=np.float64)
    s = np.asarray(scores_succ, dtype=np.float64)
    if f.size == 0:
        raise CalibrationError("pairwise loss needs at least one failure episode")
    if s.size == 0:
        raise CalibrationError("pairwise loss needs at least one success episode")
    if not tau > 0:
        raise CalibrationError("tau must be > 0")
    margins = (f[:, None] - s[None, :]) / tau
    return float(np.logaddexp(0.0, -margins).mean())


class SignalMatrix:
    """Per-step signals of a dataset, padded into (episodes x max length) arrays."""

    def __init__(self, trajectories: Sequence[TrajectoryRecord], config: SignalConfig | None = None,
                 embedder: Embedder | None = None):
        embedder = embedder or default_embedder()
        n = len(trajectories)
        width = max((len(t) for t in trajectories), default=1)
        self.lengths = np.array([len(t) for t in trajectories], dtype=np.int64)
        self.u = np.zeros((n, width))
        self.rep = np.zeros((n, width))
        self.gap_agent = np.zeros((n, width))
        self.gap_user = np.zeros((n, width))
        self.pad = np.ones((n, width), dtype=bool)
        for i, traj in enumerate(trajectories):
            for j, (step, sig) in enumerate(zip(traj.steps, compute_step_signals(traj, config, embedder))):
                self.pad[i, j] = False
                self.u[i, j] = sig.u if sig.u_available else 0.0
                self.rep[i, j] = sig.d_rep
                if step.actor == Actor.AGENT:
                    self.gap_agent[i, j] = sig.d_o_agent
                else:
                    self.gap_user[i, j] = sig.d_o_user

    def step_risks(self, alpha: float, beta: float, gamma: float) -> np.ndarray:
        r = np.maximum(np.maximum(self.u, alpha * self.rep), np.maximum(beta * self.gap_agent, gamma * self.gap_user))
        r[self.pad] = -np.inf
        return r

    def scores(self, params: TracerParams) -> np.ndarray:
        return ragged_scores(self.step_risks(params.alpha, params.beta, params.gamma), self.lengths,
                             params.k, params.w)


@dataclass
class CalibrationReport:
    params: TracerParams
    loss: float
    surface: list[tuple[tuple[float, float, float, float, float], float]] = field(default_factory=list)
    validation_auroc: float | None = None
    auroc_split: str = "validation"
    n_train: int = 0
    n_validation: int = 0

    def to_record(self) -> dict:
        return {
            "record": "calibration_report",
            "params": self.params.to_dict(),
            "loss": self.loss,
            "validation_auroc": self.validation_auroc,
            "auroc_split": self.auroc_split,
            "n_train": self.n_train,
            "n_validation": self.n_validation,
            "surface": [{"alpha": th[0], "beta": th[1], "gamma": th[2], "k": th[3], "w": th[4], "loss": loss}
                        for th, loss in self.surface],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_record(), sort_keys=True, separators=(",", ":"))

    def write(self, path: str | os.PathLike) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(self.to_json() + "\n")

    @classmethod
    def from_record(cls, rec: dict) -> "CalibrationReport":
        if rec.get("record") != "calibration_report":
            raise ConfigError("not a calibration report record")
        surface = [((d["alpha"], d["beta"], d["gamma"], d["k"], d["w"]), d["loss"]) for d in rec.get("surface", [])]
        return cls(TracerParams.from_dict(rec["params"]), rec["loss"], surface, rec.get("validation_auroc"),
                   rec.get("auroc_split", "validation"), rec.get("n_train", 0), rec.get("n_validation", 0))

    @classmethod
    def read(cls, path: str | os.PathLike) -> "CalibrationReport":
        with open(path, encoding="utf-8") as fh:
            line = fh.readline()
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: malformed calibration report: {exc.msg}") from None
        return cls.from_record(rec)


def _split_by_label(scores: np.ndarray, labels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    return scores[labels == 1], scores[labels == 0]


def _refined_values(name: str, center: float, step: float) -> list[float]:
    vals = {center}
    for cand in (center - step, center + step):
        cand = round(cand, 12)
        if name == "k":
            if 0.0 < cand <= 1.0:
                vals.add(cand)
        else:
            vals.add(max(0.0, cand))
    return sorted(vals)


def _coarse_step(values: tuple[float, ...], center: float) -> float:
    idx = values.index(center)
    gaps = [abs(values[j] - center) for j in (idx - 1, idx + 1) if 0 <= j < len(values)]
    return min(gaps) if gaps else 0.0


def fit(dataset: Sequence[TrajectoryRecord], grid: GridSpec | None = None,
        config: SignalConfig | None = None, embedder: Embedder | None = None,
        validation: Sequence[TrajectoryRecord] | None = None) -> CalibrationReport:
    """Grid-search the parameters minimizing the pairwise logistic loss on ``dataset``.

    Candidates are visited in lexicographic order and the incumbent changes
    only on a strict improvement, so ties go to the lexicographically first
    candidate and repeated runs agree exactly.
    """
    grid = grid or GridSpec()
    embedder = embedder or default_embedder()
    labels = np.array(require_labels(dataset), dtype=np.int64)
    if not np.any(labels == 1):
        raise CalibrationError("calibration needs at least one failure episode (label 1)")
    if not np.any(labels == 0):
        raise CalibrationError("calibration needs at least one success episode (label 0)")

    mat = SignalMatrix(dataset, config, embedder)
    evaluated: dict[tuple[float, ...], float] = {}
    surface: list[tuple[tuple[float, float, float, float, float], float]] = []

    def loss_at(theta: tuple[float, float, float, float, float]) -> float:
        if theta not in evaluated:
            scores = mat.scores(TracerParams(*theta))
            f, s = _split_by_label(scores, labels)
            evaluated[theta] = pairwise_logistic_loss(f, s, grid.tau)
            surface.append((theta, evaluated[theta]))
        return evaluated[theta]

    best: tuple[float, ...] | None = None
    best_loss = math.inf

    def consider(theta):
        nonlocal best, best_loss
        loss = loss_at(theta)
        if loss < best_loss - 1e-12 * max(1.0, abs(best_loss) if math.isfinite(best_loss) else 1.0):
            best, best_loss = theta, loss

    for a, b, g, k in itertools.product(grid.alpha, grid.beta, grid.gamma, grid.k):
        consider((a, b, g, k, grid.pilot_w))

    coarse_lists = dict(zip(_PARAM_NAMES, (grid.alpha, grid.beta, grid.gamma, grid.k)))
    steps = {name: _coarse_step(coarse_lists[name], best[i]) for i, name in enumerate(_PARAM_NAMES)}
    for _ in range(grid.levels):
        steps = {name: h * grid.shrink for name, h in steps.items()}
        center = best
        axes = [_refined_values(name, center[i], steps[name]) for i, name in enumerate(_PARAM_NAMES)]
        for a, b, g, k in itertools.product(*axes):
            consider((a, b, g, k, grid.pilot_w))

    a, b, g, k, _ = best
    w_best, w_loss = None, math.inf
    for w in grid.w_values:
        loss = loss_at((a, b, g, k, w))
        if loss < w_loss - 1e-12 * max(1.0, abs(w_loss) if math.isfinite(w_loss) else 1.0):
            w_best, w_loss = w, loss
    params = TracerParams(a, b, g, k, w_best)

    if validation is not None:
        val_labels = np.array(require_labels(validation), dtype=np.int64)
        val_scores = SignalMatrix(validation, config, embedder).scores(params)
        split = "validation"
    else:
        val_labels, val_scores, split = labels, mat.scores(params), "train"
    try:
        val_auc = auroc(val_scores, val_labels)
    except EvaluationError:
        val_auc = None

    return CalibrationReport(params, w_loss, surface, val_auc, split, len(dataset),
                             0 if validation is None else len(validation))


def select_threshold(scores: Sequence[float], labels: Sequence[int]) -> float:
    """Operating threshold maximizing Youden's J for the rule "flag if score >= threshold".

    Candidates are the lowest score and the midpoints between consecutive
    distinct scores, so a separating threshold sits in the middle of the gap.
    Ties in J go to the lower threshold.
    """
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels)
    n_pos = int(np.sum(y == 1))
    n_neg = int(np.sum(y == 0))
    if n_pos == 0 or n_neg == 0:
        raise CalibrationError("threshold selection needs both failures and successes")
    distinct = np.unique(s)
    candidates = [float(distinct[0])] + [float((lo + hi) / 2.0) for lo, hi in zip(distinct[:-1], distinct[1:])]
    best_thr, best_j = None, -math.inf
    for thr in candidates:
        flagged = s >= thr
        j = np.sum(flagged & (y == 1)) / n_pos - np.sum(flagged & (y == 0)) / n_neg
        if j > best_j + 1e-15:
            best_thr, best_j = thr, j
    return best_thr
