"""Per-step signals: content-aware surprisal, hybrid repetition, coherence gaps.

Everything computed for step t reads only steps 1..t. ``SignalTracker`` makes
this structural: it consumes steps one at a time and emits the signals of a
step before it has seen the next one.
"""

from __future__ import annotations

import csv
import math
import os
from collections import deque
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from typing import IO, Iterable, Sequence

import numpy as np

from .embeddings import Embedder, cosine_similarity, default_embedder, tokenize
from .errors import ConfigError, ContractError
from .trajectory import Actor, StepRecord, TokenLogProb, TrajectoryRecord

# Markers some tokenizers attach to word-initial pieces.
_SPACE_MARKERS = " \t\r\n▁Ġ"


def read_stopword_file(path: str | os.PathLike) -> frozenset[str]:
    with open(path, encoding="utf-8") as fh:
        return _parse_stopwords(fh.read())


def _parse_stopwords(text: str) -> frozenset[str]:
    words = set()
    for line in text.splitlines():
        line = line.split("#", 1)[0].strip().lower()
        if line:
            words.add(line)
    return frozenset(words)


@lru_cache(maxsize=1)
def default_stopwords() -> frozenset[str]:
    return _parse_stopwords(resources.files("tracer").joinpath("data/stopwords.txt").read_text("utf-8"))


@dataclass(frozen=True)
class ContentFilterConfig:
    stopwords: frozenset[str] = field(default_factory=default_stopwords)
    pi0: float = 0.9
    epsilon: float = 1e-3

    def __post_init__(self):
        if not 0.0 < self.pi0 < 1.0:
            raise ConfigError(f"pi0 must lie in (0, 1), got {self.pi0}")
        if not self.epsilon > 0.0:
            raise ConfigError("epsilon must be > 0")
        if not self.stopwords:
            raise ConfigError("stop-word set must be non-empty")


@dataclass(frozen=True)
class RepetitionConfig:
    # Number of most recent prior agent turns compared against. With
    # window_unit="steps" the window is the raw step range [t - m, t).
    window: int = 6
    window_unit: str = "agent_turns"
    clamp_negative: bool = True

    def __post_init__(self):
        if self.window < 1:
            raise ConfigError("repetition window must be >= 1")
        if self.window_unit not in ("agent_turns", "steps"):
            raise ConfigError(f"window_unit must be 'agent_turns' or 'steps', got {self.window_unit!r}")
        if not self.clamp_negative:
            raise ConfigError("clamp_negative is fixed to true")


@dataclass(frozen=True)
class SignalConfig:
    content: ContentFilterConfig = field(default_factory=ContentFilterConfig)
    repetition: RepetitionConfig = field(default_factory=RepetitionConfig)


@dataclass(frozen=True)
class StepSignals:
    u: float
    u_available: bool
    d_rep: float
    d_o_agent: float
    d_o_user: float
    d_o_agent_available: bool = False
    d_o_user_available: bool = False


# --- content filtering and surprisal -------------------------------------------

def is_numeric_token(token: str) -> bool:
    """Numeric up to punctuation: no letters at all. Mixed tokens such as "A123" are not numeric."""
    return not any(ch.isalpha() for ch in token)


def _normalize_token(token: str) -> str:
    return token.strip(_SPACE_MARKERS).lower()


def is_content_token(tok: TokenLogProb, cfg: ContentFilterConfig) -> bool:
    # Compare in log space so a token stored as log(pi0) is included exactly.
    if tok.logprob > math.log(cfg.pi0):
        return False
    norm = _normalize_token(tok.token)
    return norm not in cfg.stopwords and not is_numeric_token(norm)


def content_token_indices(tokens: Sequence[TokenLogProb], cfg: ContentFilterConfig | None = None) -> set[int]:
    """1-based positions of content-bearing tokens."""
    cfg = cfg or ContentFilterConfig()
    return {j for j, tok in enumerate(tokens, start=1) if is_content_token(tok, cfg)}


def normalized_surprisal(tokens: Sequence[TokenLogProb], cfg: ContentFilterConfig | None = None) -> float:
    """Mean negative log-probability over content-bearing tokens, or epsilon if there are none."""
    cfg = cfg or ContentFilterConfig()
    nll = [-tok.logprob for tok in tokens if is_content_token(tok, cfg)]
    if not nll:
        return cfg.epsilon
    return math.fsum(nll) / len(nll)


def content_tokens(text: str, cfg: ContentFilterConfig | None = None) -> frozenset[str]:
    cfg = cfg or ContentFilterConfig()
    return frozenset(t for t in tokenize(text) if t not in cfg.stopwords and not is_numeric_token(t))


def _jaccard(a: frozenset[str], b: frozenset[str]) -> float:
    union = len(a | b)
    return len(a & b) / union if union else 0.0


def lexical_jaccard(u: str, v: str, cfg: ContentFilterConfig | None = None) -> float:
    cfg = cfg or ContentFilterConfig()
    return _jaccard(content_tokens(u, cfg), content_tokens(v, cfg))


# --- situational signals ---------------------------------------------------------

def _window(t: int, traj: TrajectoryRecord, cfg: RepetitionConfig) -> list[StepRecord]:
    prior = [s for s in traj.steps[: t - 1] if s.actor == Actor.AGENT]
    if cfg.window_unit == "steps":
        return [s for s in prior if s.index >= t - cfg.window]
    return prior[-cfg.window:]


def hybrid_repetition(t: int, traj: TrajectoryRecord, cfg: RepetitionConfig | None = None,
                      emb: Embedder | None = None,
                      content_cfg: ContentFilterConfig | None = None) -> float:
    """Max over the recent agent-turn window of semantic x lexical similarity to turn t."""
    cfg = cfg or RepetitionConfig()
    emb = emb or default_embedder()
    content_cfg = content_cfg or ContentFilterConfig()
    cur = traj.step(t)
    if cur.actor != Actor.AGENT:
        raise ContractError(f"hybrid_repetition needs an agent step; step {t} is {cur.actor.value}")
    cur_vec = emb.embed(cur.text)
    cur_tok = content_tokens(cur.text, content_cfg)
    best = 0.0
    for prev in _window(t, traj, cfg):
        score = cosine_similarity(cur_vec, emb.embed(prev.text)) * _jaccard(cur_tok, content_tokens(prev.text, content_cfg))
        best = max(best, score)
    return min(1.0, best)


def coherence_gap_agent(t: int, traj: TrajectoryRecord, emb: Embedder | None = None) -> tuple[float, bool]:
    """Semantic distance between a tool action and its observation, with an availability flag."""
    emb = emb or default_embedder()
    step = traj.step(t)
    if not step.is_tool_call:
        raise ContractError(f"coherence_gap_agent needs a tool-call step; step {t} is not one")
    if step.observation_text is None:
        return 0.0, False
    return 1.0 - cosine_similarity(emb.embed(step.text), emb.embed(step.observation_text)), True


def coherence_gap_user(t: int, traj: TrajectoryRecord, emb: Embedder | None = None) -> tuple[float, bool]:
    """Semantic distance between a user reply and the agent turn right before it."""
    emb = emb or default_embedder()
    step = traj.step(t)
    if step.actor != Actor.USER:
        raise ContractError(f"coherence_gap_user needs a user step; step {t} is {step.actor.value}")
    if t < 2 or traj.step(t - 1).actor != Actor.AGENT:
        return 0.0, False
    return 1.0 - cosine_similarity(emb.embed(traj.step(t - 1).text), emb.embed(step.text)), True


class SignalTracker:
    """Incremental signal computation over one trajectory, one step per ``push``.

    Holds only what later steps need: the recent agent-turn window and the
    previous step's embedding. Each text is embedded once.
    """

    def __init__(self, config: SignalConfig | None = None, embedder: Embedder | None = None):
        self.config = config or SignalConfig()
        self.embedder = embedder or default_embedder()
        rep = self.config.repetition
        # In step units at most m agent turns fit inside [t - m, t).
        self._agents: deque[tuple[int, np.ndarray, frozenset[str]]] = deque(maxlen=rep.window)
        self._prev: tuple[Actor, np.ndarray] | None = None
        self._t = 0

    def push(self, step: StepRecord) -> StepSignals:
        self._t += 1
        t = self._t
        ccfg = self.config.content
        vec = self.embedder.embed(step.text)

        if step.token_logprobs:
            u, u_ok = normalized_surprisal(step.token_logprobs, ccfg), True
        else:
            u, u_ok = 0.0, False

        d_rep = 0.0
        d_oa, d_oa_ok = 0.0, False
        d_ou, d_ou_ok = 0.0, False
        if step.actor == Actor.AGENT:
            toks = content_tokens(step.text, ccfg)
            lo = t - self.config.repetition.window if self.config.repetition.window_unit == "steps" else -math.inf
            for idx, pvec, ptoks in self._agents:
                if idx >= lo:
                    d_rep = max(d_rep, cosine_similarity(vec, pvec) * _jaccard(toks, ptoks))
            d_rep = min(1.0, d_rep)
            if step.is_tool_call and step.observation_text is not None:
                d_oa = 1.0 - cosine_similarity(vec, self.embedder.embed(step.observation_text))
                d_oa_ok = True
            self._agents.append((t, vec, toks))
        else:
            if self._prev is not None and self._prev[0] == Actor.AGENT:
                d_ou = 1.0 - cosine_similarity(self._prev[1], vec)
                d_ou_ok = True
        self._prev = (step.actor, vec)
        return StepSignals(u, u_ok, d_rep, d_oa, d_ou, d_oa_ok, d_ou_ok)


def iter_step_signals(steps: Iterable[StepRecord], config: SignalConfig | None = None,
                      embedder: Embedder | None = None):
    tracker = SignalTracker(config, embedder)
    for step in steps:
        yield tracker.push(step)


def compute_step_signals(traj: TrajectoryRecord, config: SignalConfig | None = None,
                         embedder: Embedder | None = None) -> list[StepSignals]:
    return list(iter_step_signals(traj.steps, config, embedder))


SIGNAL_CSV_HEADER = ["step", "actor", "u", "u_available", "d_rep", "d_o_agent", "d_o_user"]


def write_signal_csv(traj: TrajectoryRecord, signals: Sequence[StepSignals], out: IO[str],
                     header: bool = True) -> None:
    writer = csv.writer(out, lineterminator="\n")
    if header:
        writer.writerow(SIGNAL_CSV_HEADER)
    for step, sig in zip(traj.steps, signals):
        writer.writerow([step.index, step.actor.value, repr(sig.u), int(sig.u_available),
                         repr(sig.d_rep), repr(sig.d_o_agent), repr(sig.d_o_user)])
