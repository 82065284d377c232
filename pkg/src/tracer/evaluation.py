"""Failure-prediction metrics: AUROC, accuracy-rejection curves, early warning.

Label convention throughout: 1 = failed episode (the positive class), 0 = success.
Higher scores mean "more likely to fail".
"""

from __future__ import annotations

import csv
import math
import os
import statistics
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.stats import rankdata

from .errors import EvaluationError

PROGRESS_GRID = tuple(i / 20 for i in range(1, 21))
EARLY_PROGRESS = 0.2


def _check_binary(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels)
    if s.shape != y.shape or s.ndim != 1:
        raise EvaluationError("scores and labels must be 1-D and of equal length")
    if not np.all((y == 0) | (y == 1)):
        raise EvaluationError("labels must be 0 (success) or 1 (failure)")
    return s, y.astype(np.int64)


def auroc(scores: Sequence[float], labels: Sequence[int]) -> float:
    """Mann-Whitney AUROC with midranks; ties between classes count one half."""
    s, y = _check_binary(scores, labels)
    n_pos = int(y.sum())
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise EvaluationError("AUROC needs both failures and successes")
    ranks = rankdata(s, method="average")
    u = float(ranks[y == 1].sum()) - n_pos * (n_pos + 1) / 2.0
    return u / (n_pos * n_neg)


def roc_curve(scores: Sequence[float], labels: Sequence[int]) -> list[tuple[float, float, float]]:
    """(fpr, tpr, threshold) points for the rule "flag if score >= threshold", starting at +inf."""
    s, y = _check_binary(scores, labels)
    n_pos = int(y.sum())
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise EvaluationError("ROC needs both failures and successes")
    pts = [(0.0, 0.0, math.inf)]
    for thr in np.unique(s)[::-1]:
        flagged = s >= thr
        pts.append((float(np.sum(flagged & (y == 0)) / n_neg), float(np.sum(flagged & (y == 1)) / n_pos),
                    float(thr)))
    return pts


def auarc(scores: Sequence[float], labels: Sequence[int]) -> tuple[float, list[tuple[float, float]]]:
    """Area under the accuracy-rejection curve and the curve itself.

    Episodes are rejected most-uncertain first, tied scores as one block. Each
    achievable cut that keeps at least one episode gives a point
    (rejected fraction, success rate of the retained episodes). The area is
    the trapezoid integral divided by the covered rejection range, i.e. the
    mean accuracy along the curve, so it lies in [0, 1].
    """
    s, y = _check_binary(scores, labels)
    m = len(s)
    if m == 0:
        raise EvaluationError("AUARC needs at least one episode")
    order = np.argsort(-s, kind="stable")
    s_sorted, ok_sorted = s[order], (1 - y[order])
    # Boundaries between tie blocks, as counts of rejected episodes.
    cuts = [0] + [i for i in range(1, m) if s_sorted[i] != s_sorted[i - 1]]
    suffix_ok = np.concatenate([np.cumsum(ok_sorted[::-1])[::-1], [0]])
    curve = [(c / m, float(suffix_ok[c]) / (m - c)) for c in cuts]
    if len(curve) == 1:
        return curve[0][1], curve
    xs = np.array([p[0] for p in curve])
    ys = np.array([p[1] for p in curve])
    area = float(np.sum((xs[1:] - xs[:-1]) * (ys[1:] + ys[:-1]) / 2.0)) / xs[-1]
    return min(1.0, max(0.0, area)), curve


@dataclass(frozen=True)
class EarlyWarningStats:
    threshold: float
    detection_times: tuple[float | None, ...]
    curve: tuple[tuple[float, float], ...]
    mean_time: float | None
    median_time: float | None
    detected_by_early: float
    n_episodes: int
    n_detected: int


def first_crossing(prefix: Sequence[float], threshold: float) -> int | None:
    for t, v in enumerate(prefix, start=1):
        if v >= threshold:
            return t
    return None


def early_warning(prefix_scores: Sequence[Sequence[float]], threshold: float) -> EarlyWarningStats:
    """Detection statistics over failed episodes' prefix-score sequences.

    An episode is detected at the first step whose prefix score reaches the
    threshold; its time is that step over the episode length. Undetected
    episodes stay in the curve's denominator but not in the mean/median.
    """
    if not math.isfinite(threshold):
        raise EvaluationError("early-warning threshold must be finite")
    steps: list[tuple[int, int] | None] = []
    for prefix in prefix_scores:
        n = len(prefix)
        if n < 1:
            raise EvaluationError("every episode needs at least one prefix score")
        t = first_crossing(prefix, threshold)
        steps.append(None if t is None else (t, n))
    times = tuple(None if st is None else st[0] / st[1] for st in steps)
    total = len(steps)
    curve = []
    if total:
        for i in range(1, 21):
            # t/N <= i/20, in integers to keep grid points exact.
            hit = sum(1 for st in steps if st is not None and 20 * st[0] <= i * st[1])
            curve.append((PROGRESS_GRID[i - 1], hit / total))
    detected = [x for x in times if x is not None]
    early = sum(1 for st in steps if st is not None and 5 * st[0] <= st[1])
    return EarlyWarningStats(
        threshold=threshold,
        detection_times=times,
        curve=tuple(curve),
        mean_time=statistics.fmean(detected) if detected else None,
        median_time=statistics.median(detected) if detected else None,
        detected_by_early=early / total if total else 0.0,
        n_episodes=total,
        n_detected=len(detected),
    )


def prefix_auroc(prefix_scores: Sequence[Sequence[float]], labels: Sequence[int]) -> float:
    """AUROC over all (prefix score, episode label) pairs pooled across steps."""
    s = [v for prefix in prefix_scores for v in prefix]
    y = [lab for prefix, lab in zip(prefix_scores, labels) for _ in prefix]
    return auroc(s, y)


@dataclass
class EvalReport:
    auroc: float
    auarc: float
    roc_curve: list[tuple[float, float, float]]
    accuracy_rejection_curve: list[tuple[float, float]]
    early_warning: EarlyWarningStats | None
    n_failures: int
    n_successes: int
    prefix_auroc: float | None = None
    extra: dict[str, float | str] = field(default_factory=dict)

    @property
    def early_warning_curve(self) -> list[tuple[float, float]]:
        return list(self.early_warning.curve) if self.early_warning else []


def evaluate(scores: Sequence[float], labels: Sequence[int],
             prefix_scores: Sequence[Sequence[float]] | None = None,
             threshold: float | None = None) -> EvalReport:
    """Episode-level metrics, plus prefix AUROC and early warning when prefixes are given.

    Without an explicit threshold the early-warning threshold is chosen on the
    episode scores by Youden's J.
    """
    from .calibration import select_threshold

    s, y = _check_binary(scores, labels)
    area, curve = auarc(s, y)
    report = EvalReport(
        auroc=auroc(s, y),
        auarc=area,
        roc_curve=roc_curve(s, y),
        accuracy_rejection_curve=curve,
        early_warning=None,
        n_failures=int(y.sum()),
        n_successes=int(len(y) - y.sum()),
    )
    if prefix_scores is not None:
        if len(prefix_scores) != len(y):
            raise EvaluationError("need one prefix-score sequence per episode")
        report.prefix_auroc = prefix_auroc(prefix_scores, y)
        thr = select_threshold(s, y) if threshold is None else threshold
        failed = [p for p, lab in zip(prefix_scores, y) if lab == 1]
        report.early_warning = early_warning(failed, thr)
    return report


def permutation_auroc(scores: Sequence[float], labels: Sequence[int], n_perm: int = 200,
                      seed: int = 0) -> tuple[float, float]:
    """Mean and standard deviation of AUROC under shuffled labels."""
    rng = np.random.default_rng(seed)
    y = np.asarray(labels)
    vals = [auroc(scores, rng.permutation(y)) for _ in range(n_perm)]
    return float(np.mean(vals)), float(np.std(vals))


# --- report files -------------------------------------------------------------

def _fmt(x: float | None) -> str:
    return "n/a" if x is None else f"{x:.3f}"


def summary_lines(report: EvalReport) -> list[str]:
    lines = [
        f"AUROC/AUARC: {report.auroc:.3f} / {report.auarc:.3f}",
        f"episodes: {report.n_failures + report.n_successes} "
        f"(failures {report.n_failures}, successes {report.n_successes})",
    ]
    if report.prefix_auroc is not None:
        lines.append(f"prefix AUROC: {report.prefix_auroc:.3f}")
    ew = report.early_warning
    if ew is not None:
        lines.append(f"early-warning threshold: {ew.threshold:.6g}")
        lines.append(f"failures detected: {ew.n_detected}/{ew.n_episodes}; "
                     f"by 20% progress: {ew.detected_by_early:.3f}")
        lines.append(f"normalized detection time mean/median: {_fmt(ew.mean_time)} / {_fmt(ew.median_time)}")
    for key, val in report.extra.items():
        lines.append(f"{key}: {val:.3f}" if isinstance(val, float) else f"{key}: {val}")
    return lines


def _write_csv(path: Path, header: Sequence[str], rows) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([repr(float(v)) for v in row])


def emit_report(report: EvalReport, path: str | os.PathLike) -> None:
    """Write summary.txt, roc.csv, arc.csv and early_warning.csv into directory ``path``."""
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    (out / "summary.txt").write_text("\n".join(summary_lines(report)) + "\n", encoding="utf-8")
    _write_csv(out / "roc.csv", ["fpr", "tpr", "threshold"], report.roc_curve)
    _write_csv(out / "arc.csv", ["rejection", "accuracy"], report.accuracy_rejection_curve)
    _write_csv(out / "early_warning.csv", ["progress", "detection_rate"], report.early_warning_curve)


def read_curve_csv(path: str | os.PathLike) -> list[tuple[float, ...]]:
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    return [tuple(float(v) for v in row) for row in rows[1:]]
