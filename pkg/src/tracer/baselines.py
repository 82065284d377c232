"""Normalized-entropy reference baseline: mean token negative log-likelihood.

Uses every token with a log-probability, no content filtering and no
situational signals. Steps without log-probabilities are skipped.
"""

from __future__ import annotations

import math

from .trajectory import TrajectoryRecord


def normalized_entropy_prefix_scores(traj: TrajectoryRecord) -> list[float]:
    """Running mean NLL over all tokens seen up to each step (0 before the first token)."""
    total, count = 0.0, 0
    out = []
    for step in traj.steps:
        if step.token_logprobs:
            total += math.fsum(-tl.logprob for tl in step.token_logprobs)
            count += len(step.token_logprobs)
        out.append(total / count if count else 0.0)
    return out


def normalized_entropy_score(traj: TrajectoryRecord) -> float:
    """Mean NLL over the whole episode; NaN when the episode carries no log-probabilities."""
    nll = [-tl.logprob for step in traj.steps if step.token_logprobs for tl in step.token_logprobs]
    return math.fsum(nll) / len(nll) if nll else math.nan
