"""Step risks, tail aggregation and trajectory scores.

A step's risk is the largest of its four weighted components (surprisal,
repetition, agent coherence gap, user coherence gap). A trajectory's score
mixes the mean of its K largest step risks with the single largest one::

    score = (1 - w) * mean(top K of r) + w * max(r),   K = max(1, floor(k N))
"""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field
from typing import IO, Iterable, Sequence

import numpy as np

from .embeddings import Embedder
from .errors import ConfigError
from .signals import SignalConfig, StepSignals, compute_step_signals
from .trajectory import Actor, TrajectoryRecord

# Guards floor(k * N) against representation error, e.g. 0.29 * 100 = 28.999999999999996.
_K_FLOOR_SLACK = 1e-9


@dataclass(frozen=True)
class TracerParams:
    alpha: float = 1.0
    beta: float = 1.0
    gamma: float = 1.0
    k: float = 0.2
    w: float = 0.25

    def __post_init__(self):
        for name in ("alpha", "beta", "gamma"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0.0):
                raise ConfigError(f"{name} must be a finite value >= 0, got {v}")
        if not 0.0 < self.k <= 1.0:
            raise ConfigError(f"k must lie in (0, 1], got {self.k}")
        if not 0.0 <= self.w <= 1.0:
            raise ConfigError(f"w must lie in [0, 1], got {self.w}")

    def as_tuple(self) -> tuple[float, float, float, float, float]:
        return (self.alpha, self.beta, self.gamma, self.k, self.w)

    def to_dict(self) -> dict[str, float]:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TracerParams":
        unknown = set(d) - {"alpha", "beta", "gamma", "k", "w"}
        if unknown:
            raise ConfigError(f"unknown parameter(s): {', '.join(sorted(unknown))}")
        return cls(**{key: float(v) for key, v in d.items()})

    @classmethod
    def parse(cls, text: str) -> "TracerParams":
        """Parse ``"alpha=1,beta=2,k=0.3"``; unspecified entries keep their defaults."""
        items = {}
        for part in text.replace(";", ",").split(","):
            part = part.strip()
            if not part:
                continue
            if "=" not in part:
                raise ConfigError(f"expected name=value in parameter string, got {part!r}")
            key, val = part.split("=", 1)
            try:
                items[key.strip()] = float(val)
            except ValueError:
                raise ConfigError(f"parameter {key.strip()!r} is not a number: {val!r}") from None
        return cls.from_dict(items)


@dataclass(frozen=True)
class StepRisk:
    components: tuple[float, float, float, float]
    r: float
    actor: Actor
    r_agent_part: float
    r_user_part: float


@dataclass(frozen=True)
class RiskVector:
    risks: tuple[StepRisk, ...]
    values: np.ndarray = field(repr=False, compare=False)

    @classmethod
    def from_risks(cls, risks: Iterable[StepRisk]) -> "RiskVector":
        risks = tuple(risks)
        vals = np.array([s.r for s in risks], dtype=np.float64)
        vals.setflags(write=False)
        return cls(risks, vals)

    def __len__(self) -> int:
        return len(self.risks)

    @property
    def sorted_desc(self) -> np.ndarray:
        return -np.sort(-self.values, kind="stable")


def step_components(s: StepSignals, actor: Actor, params: TracerParams) -> tuple[float, float, float, float]:
    r_u = s.u if s.u_available else 0.0
    r_rep = params.alpha * s.d_rep
    r_a = params.beta * s.d_o_agent if actor == Actor.AGENT else 0.0
    r_uo = params.gamma * s.d_o_user if actor == Actor.USER else 0.0
    return (r_u, r_rep, r_a, r_uo)


def step_risk(components: Sequence[float]) -> float:
    return float(max(components))


def build_risk_vector(traj: TrajectoryRecord, signals: Sequence[StepSignals], params: TracerParams) -> RiskVector:
    if len(signals) != len(traj.steps):
        raise ValueError("need one StepSignals per step")
    risks = []
    for step, sig in zip(traj.steps, signals):
        comps = step_components(sig, step.actor, params)
        r = step_risk(comps)
        agent_part = r if step.actor == Actor.AGENT else 0.0
        risks.append(StepRisk(comps, r, step.actor, agent_part, r - agent_part))
    return RiskVector.from_risks(risks)


def tail_k_count(k: float, n: int) -> int:
    return max(1, math.floor(k * n + _K_FLOOR_SLACK))


def _as_array(r) -> np.ndarray:
    if isinstance(r, RiskVector):
        return r.values
    return np.asarray(r, dtype=np.float64)


def tail_mean(r, k: float) -> np.ndarray | float:
    """Mean of the K largest entries along the last axis."""
    a = _as_array(r)
    n = a.shape[-1]
    if n < 1:
        raise ValueError("tail_mean needs at least one step")
    top = -np.sort(-a, axis=-1)[..., : tail_k_count(k, n)]
    out = top.mean(axis=-1)
    return float(out) if out.ndim == 0 else out


def rho(r, k: float, w: float) -> np.ndarray | float:
    """Tail-mean / max mixture along the last axis; accepts a single vector or a batch."""
    a = _as_array(r)
    tm = np.asarray(tail_mean(a, k))
    # tm + w (max - tm) equals (1 - w) tm + w max and is exact when tm == max.
    out = tm + w * (a.max(axis=-1) - tm)
    return float(out) if out.ndim == 0 else out


def tracer_score(r, params: TracerParams) -> float:
    return float(rho(r, params.k, params.w))


def actor_decomposition(rv: RiskVector, params: TracerParams | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Agent-only and user-only step-risk vectors; they sum to the original elementwise.

    At an agent step the agent part is max(U, alpha D_rep, beta D_o^A), which
    equals r there because the user-gap component is gated off.
    """
    agent = np.array([max(s.components[:3]) if s.actor == Actor.AGENT else 0.0 for s in rv.risks])
    user = np.array([max(s.components[0], s.components[3]) if s.actor == Actor.USER else 0.0
                     for s in rv.risks])
    return agent, user


def prefix_scores(rv: RiskVector, params: TracerParams, freeze_k: bool = False) -> list[float]:
    """Score of every prefix 1..t, reusing precomputed step risks.

    K is recomputed per prefix as max(1, floor(k t)). With ``freeze_k`` it is
    held at the full-length value, capped by the prefix length.
    """
    vals = rv.values
    n = len(vals)
    k_full = tail_k_count(params.k, n)
    out = []
    for t in range(1, n + 1):
        top = -np.sort(-vals[:t])
        kt = min(k_full, t) if freeze_k else tail_k_count(params.k, t)
        tm = top[:kt].mean()
        out.append(float(tm + params.w * (top[0] - tm)))
    return out


def ragged_scores(padded: np.ndarray, lengths: np.ndarray, k: float, w: float) -> np.ndarray:
    """Scores for a batch of variable-length risk vectors padded with -inf on the right."""
    s = -np.sort(-padded, axis=1)
    kk = np.maximum(1, np.floor(k * lengths + _K_FLOOR_SLACK).astype(np.int64))
    csum = np.cumsum(s, axis=1)
    tm = csum[np.arange(len(lengths)), kk - 1] / kk
    return tm + w * (s[:, 0] - tm)


@dataclass(frozen=True)
class TrajectoryScore:
    episode_id: str
    score: float
    score_agent: float
    score_user: float
    n_steps: int
    argmax_step: int
    prefix: tuple[float, ...] | None = None


def score_trajectory(traj: TrajectoryRecord, params: TracerParams,
                     signals: Sequence[StepSignals] | None = None,
                     config: SignalConfig | None = None, embedder: Embedder | None = None,
                     with_prefix: bool = False, freeze_k: bool = False) -> TrajectoryScore:
    if signals is None:
        signals = compute_step_signals(traj, config, embedder)
    rv = build_risk_vector(traj, signals, params)
    agent, user = actor_decomposition(rv, params)
    return TrajectoryScore(
        episode_id=traj.episode_id,
        score=tracer_score(rv, params),
        score_agent=tracer_score(agent, params),
        score_user=tracer_score(user, params),
        n_steps=len(rv),
        argmax_step=int(np.argmax(rv.values)) + 1,
        prefix=tuple(prefix_scores(rv, params, freeze_k)) if with_prefix else None,
    )


SCORE_CSV_HEADER = ["episode_id", "score", "score_agent", "score_user", "n_steps", "argmax_step"]
PREFIX_CSV_HEADER = ["episode_id", "step", "score"]


def write_score_csv(scores: Iterable[TrajectoryScore], out: IO[str]) -> None:
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(SCORE_CSV_HEADER)
    for s in scores:
        writer.writerow([s.episode_id, repr(s.score), repr(s.score_agent), repr(s.score_user),
                         s.n_steps, s.argmax_step])


def write_prefix_csv(scores: Iterable[TrajectoryScore], out: IO[str]) -> None:
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(PREFIX_CSV_HEADER)
    for s in scores:
        for t, v in enumerate(s.prefix or (), start=1):
            writer.writerow([s.episode_id, t, repr(v)])


def read_score_csv(src: IO[str]) -> list[TrajectoryScore]:
    rows = list(csv.DictReader(src))
    return [TrajectoryScore(r["episode_id"], float(r["score"]), float(r["score_agent"]),
                            float(r["score_user"]), int(r["n_steps"]), int(r["argmax_step"]))
            for r in rows]


def read_prefix_csv(src: IO[str]) -> dict[str, list[float]]:
    out: dict[str, list[float]] = {}
    for r in csv.DictReader(src):
        out.setdefault(r["episode_id"], []).append(float(r["score"]))
    return out
