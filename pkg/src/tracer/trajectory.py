"""Dual-control trajectory records and the line-delimited JSON log format.

One trajectory per line::

    {"episode_id": "e1", "outcome": 1,
     "steps": [{"actor": "user", "text": "...", "observation_text": null,
                "is_tool_call": false, "token_logprobs": [["tok", -0.3], ...]}]}

Log-probabilities are natural logs. Step indices in a file (``index``) are
advisory; canonical indices are positional, 1..N.
"""

from __future__ import annotations

import enum
import io
import json
import math
import os
from dataclasses import dataclass
from typing import IO, Iterable, Iterator

from .errors import DataError, InvariantError, SchemaError, TrajectoryParseError


class Actor(str, enum.Enum):
    AGENT = "agent"
    USER = "user"


@dataclass(frozen=True)
class TokenLogProb:
    token: str
    logprob: float

    @property
    def prob(self) -> float:
        return math.exp(self.logprob)


@dataclass(frozen=True)
class StepRecord:
    index: int
    actor: Actor
    text: str
    observation_text: str | None = None
    is_tool_call: bool = False
    token_logprobs: tuple[TokenLogProb, ...] | None = None
    timestamp: float | None = None


@dataclass(frozen=True)
class TrajectoryRecord:
    episode_id: str
    steps: tuple[StepRecord, ...]
    outcome: int | None = None

    def __len__(self) -> int:
        return len(self.steps)

    @property
    def n_steps(self) -> int:
        return len(self.steps)

    def prefix(self, t: int) -> "TrajectoryRecord":
        """The first ``t`` steps as a trajectory (same id and outcome)."""
        return TrajectoryRecord(self.episode_id, self.steps[:t], self.outcome)

    def step(self, t: int) -> StepRecord:
        """Step by 1-based index."""
        if not 1 <= t <= len(self.steps):
            raise IndexError(f"step {t} outside 1..{len(self.steps)}")
        return self.steps[t - 1]


def make_trajectory(episode_id: str, steps: Iterable[dict | StepRecord], outcome: int | None = None) -> TrajectoryRecord:
    """Build a trajectory from step dicts (log-file keys) or records, indexing positionally."""
    built = []
    for i, s in enumerate(steps, start=1):
        if isinstance(s, StepRecord):
            built.append(StepRecord(i, s.actor, s.text, s.observation_text, s.is_tool_call,
                                    s.token_logprobs, s.timestamp))
        else:
            built.append(_step_from_obj(s, i, line=None))
    traj = TrajectoryRecord(episode_id, tuple(built), outcome)
    problems = validate_trajectory(traj)
    if problems:
        raise InvariantError(problems[0])
    return traj


def validate_trajectory(t: TrajectoryRecord) -> list[str]:
    """Return one description per violated invariant; empty when the record is valid."""
    violations: list[str] = []
    if not t.episode_id:
        violations.append("episode_id must be non-empty")
    if len(t.steps) < 1:
        violations.append("trajectory must have N >= 1 steps")
    if t.outcome not in (None, 0, 1) or isinstance(t.outcome, bool):
        violations.append(f"outcome must be 0, 1 or null, got {t.outcome!r}")
    seen: set[int] = set()
    for pos, s in enumerate(t.steps, start=1):
        if s.index in seen:
            violations.append(f"step {s.index}: duplicate step index")
        elif s.index != pos:
            violations.append(f"step {s.index}: index must equal position {pos} (strictly increasing by 1)")
        seen.add(s.index)
        if not isinstance(s.actor, Actor):
            violations.append(f"step {s.index}: actor must be agent or user")
        if s.is_tool_call and s.actor != Actor.AGENT:
            violations.append(f"step {s.index}: is_tool_call requires actor = agent")
        if s.token_logprobs is not None:
            if len(s.token_logprobs) == 0:
                violations.append(f"step {s.index}: token_logprobs, when present, must be non-empty")
            for j, tl in enumerate(s.token_logprobs, start=1):
                if not (math.isfinite(tl.logprob) and tl.logprob <= 0.0):
                    violations.append(
                        f"step {s.index}: token {j} violates logprob <= 0 with exp(logprob) in (0, 1] "
                        f"(got {tl.logprob!r})"
                    )
    return violations


# --- parsing -----------------------------------------------------------------

_ACTORS = {"agent": Actor.AGENT, "user": Actor.USER}


def _step_from_obj(obj: dict, position: int, line: int | None) -> StepRecord:
    if not isinstance(obj, dict):
        raise SchemaError(f"step {position}: expected an object", line)
    actor_raw = obj.get("actor")
    if actor_raw not in _ACTORS:
        raise SchemaError(f"step {position}: actor must be one of 'agent', 'user' (got {actor_raw!r})", line)
    actor = _ACTORS[actor_raw]
    text = obj.get("text")
    if not isinstance(text, str):
        raise SchemaError(f"step {position}: text must be a string", line)
    obs = obj.get("observation_text")
    if obs is not None and not isinstance(obs, str):
        raise SchemaError(f"step {position}: observation_text must be a string or null", line)
    is_tool = obj.get("is_tool_call", False)
    if not isinstance(is_tool, bool):
        raise SchemaError(f"step {position}: is_tool_call must be a boolean", line)
    if is_tool and actor != Actor.AGENT:
        raise InvariantError(f"step {position}: is_tool_call requires actor = agent", line)

    raw_lp = obj.get("token_logprobs")
    logprobs = None
    if raw_lp is not None:
        if not isinstance(raw_lp, list):
            raise SchemaError(f"step {position}: token_logprobs must be an array or null", line)
        if not raw_lp:
            raise InvariantError(f"step {position}: token_logprobs, when present, must be non-empty", line)
        items = []
        for j, pair in enumerate(raw_lp, start=1):
            if (not isinstance(pair, list) or len(pair) != 2 or not isinstance(pair[0], str)
                    or isinstance(pair[1], bool) or not isinstance(pair[1], (int, float))):
                raise SchemaError(f"step {position}: token_logprobs[{j}] must be a [token, logprob] pair", line)
            lp = float(pair[1])
            if not (math.isfinite(lp) and lp <= 0.0):
                raise InvariantError(
                    f"step {position}: token {j} violates logprob <= 0 (got {pair[1]!r}); "
                    "natural-log probabilities only", line)
            items.append(TokenLogProb(pair[0], lp))
        logprobs = tuple(items)

    ts = obj.get("timestamp")
    if ts is not None and (isinstance(ts, bool) or not isinstance(ts, (int, float))):
        raise SchemaError(f"step {position}: timestamp must be a number or null", line)
    return StepRecord(position, actor, text, obs, is_tool, logprobs, ts)


def parse_record(obj: dict, line: int | None = None) -> TrajectoryRecord:
    if not isinstance(obj, dict):
        raise SchemaError("record must be a JSON object", line)
    eid = obj.get("episode_id")
    if not isinstance(eid, str) or not eid:
        raise SchemaError("episode_id must be a non-empty string", line)
    outcome = obj.get("outcome")
    if outcome is not None and (isinstance(outcome, bool) or outcome not in (0, 1)):
        raise SchemaError(f"outcome must be 0, 1 or null (got {outcome!r})", line)
    steps = obj.get("steps")
    if not isinstance(steps, list) or not steps:
        raise SchemaError("steps must be a non-empty array", line)

    given = [s.get("index") for s in steps if isinstance(s, dict)]
    if any(g is not None for g in given):
        if (len(given) != len(steps) or any(isinstance(g, bool) or not isinstance(g, int) for g in given)
                or any(b - a != 1 for a, b in zip(given, given[1:]))):
            raise InvariantError("step indices must be integers strictly increasing by 1", line)

    parsed = tuple(_step_from_obj(s, i, line) for i, s in enumerate(steps, start=1))
    return TrajectoryRecord(eid, parsed, None if outcome is None else int(outcome))


def iter_trajectory_log(source: str | os.PathLike | IO) -> Iterator[TrajectoryRecord]:
    """Stream trajectories from a path or an open text/binary stream, validating each line."""
    if isinstance(source, (str, os.PathLike)):
        with open(source, "rb") as fh:
            yield from iter_trajectory_log(fh)
        return
    stream = source
    if isinstance(stream, (io.RawIOBase, io.BufferedIOBase)) or "b" in getattr(stream, "mode", ""):
        stream = io.TextIOWrapper(stream, encoding="utf-8")
    seen: set[str] = set()
    for lineno, raw in enumerate(stream, start=1):
        if not raw.strip():
            continue
        try:
            obj = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise TrajectoryParseError(f"malformed JSON: {exc.msg}", lineno) from None
        rec = parse_record(obj, lineno)
        if rec.episode_id in seen:
            raise InvariantError(f"duplicate episode_id {rec.episode_id!r}", lineno)
        seen.add(rec.episode_id)
        yield rec


def parse_trajectory_log(source: str | os.PathLike | IO) -> list[TrajectoryRecord]:
    return list(iter_trajectory_log(source))


# --- serialization -----------------------------------------------------------

def record_to_obj(t: TrajectoryRecord) -> dict:
    steps = []
    for s in t.steps:
        d = {
            "actor": s.actor.value,
            "text": s.text,
            "observation_text": s.observation_text,
            "is_tool_call": s.is_tool_call,
            "token_logprobs": None if s.token_logprobs is None
            else [[tl.token, tl.logprob] for tl in s.token_logprobs],
        }
        if s.timestamp is not None:
            d["timestamp"] = s.timestamp
        steps.append(d)
    return {"episode_id": t.episode_id, "outcome": t.outcome, "steps": steps}


def serialize_record(t: TrajectoryRecord) -> str:
    return json.dumps(record_to_obj(t), ensure_ascii=False, separators=(",", ":"))


def write_trajectory_log(trajectories: Iterable[TrajectoryRecord], path: str | os.PathLike | IO) -> None:
    if isinstance(path, (str, os.PathLike)):
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            write_trajectory_log(trajectories, fh)
        return
    for t in trajectories:
        path.write(serialize_record(t))
        path.write("\n")


def require_labels(trajectories: Iterable[TrajectoryRecord]) -> list[int]:
    """Outcome labels, raising if any episode is unlabeled."""
    labels = []
    for t in trajectories:
        if t.outcome is None:
            raise DataError(f"episode {t.episode_id!r} has no outcome label")
        labels.append(t.outcome)
    return labels
