"""Synthetic dual-control trajectories with planted hazards.

Each episode is a templated airline/retail-style exchange between a user and
a tool-using agent. Hazards are planted step by step:

* ``loop``: an agent message repeats an earlier agent message.
* ``tool_mismatch``: a tool observation is drawn from a vocabulary disjoint
  from every template, so it shares no tokens with the action.
* ``coordination_gap``: a user reply drawn from an unrelated vocabulary.

A planted step carries a condition C_t in (0, 1]; an episode fails iff some
C_t > 0. Token log-probabilities come from per-position distribution pairs
(true Q, model P): the token's symbol is drawn from Q and scored under P.

All randomness flows from ``numpy.random.default_rng([seed, episode_index])``
so episodes can be generated in any order, or in parallel, with the same result.
"""

from __future__ import annotations

import csv
import math
import re
from dataclasses import dataclass, field, replace
from typing import IO, Sequence

import numpy as np

from .embeddings import Embedder, default_embedder
from .errors import ConfigError, ScenarioSpecError
from .risk import TracerParams, build_risk_vector, tail_k_count
from .signals import SignalConfig, compute_step_signals, default_stopwords
from .trajectory import Actor, StepRecord, TokenLogProb, TrajectoryRecord

HAZARD_KINDS = ("loop", "tool_mismatch", "coordination_gap")

INTENTS = ("cancel", "change", "upgrade", "refund", "rebook", "verify", "update", "confirm")
OBJECTS = ("reservation", "booking", "order", "flight", "ticket", "subscription", "payment", "seat")
CITIES = ("paris", "rome", "tokyo", "denver", "lisbon", "oslo", "cairo", "lima", "seoul", "boston",
          "madrid", "vienna", "dublin", "austin", "nairobi", "quito")
DAYS = ("monday", "tuesday", "wednesday", "thursday", "friday", "saturday", "sunday")
STATUSES = ("confirmed", "pending", "shipped", "delayed", "active", "cancelled", "processing", "refunded")
NAMES = ("alice", "bruno", "chen", "dana", "emeka", "farah", "gustav", "hana", "ivan", "julia", "kofi",
         "lena")
TOOL_VERBS = ("get", "search", "lookup", "fetch")
# Disjoint from the templates above and from the stop-word list.
GARBLED = ("zorvath", "quillex", "brindle", "maplor", "tessary", "vuncle", "ostrim", "parvex", "glimmet",
           "yarrowk", "droskel", "fennimar", "hovaque", "junthro", "kelvane", "lurmish", "mordaxe",
           "nophrit", "pellwick", "qorvanth", "rustiva", "sclemor", "thandrel", "ulvexi", "vorpane",
           "wixtrel", "xandori", "ymbrelt", "zelquist", "brakkon")
OFFTOPIC = ("banana", "guitar", "weather", "garden", "painting", "recipe", "violin", "puppy", "sunset",
            "marathon", "pancakes", "telescope", "origami", "volcano", "jazz", "kayak", "lemonade",
            "dinosaur", "knitting", "meteor", "cactus", "harmonica", "snowman", "pottery")


@dataclass(frozen=True)
class ScenarioSpec:
    n_episodes: int = 1000
    min_steps: int = 8
    max_steps: int = 16
    # "tool_chain": user, [tool call], agent message, user, ...; "alternating": user, agent, user, ...
    pattern: str = "tool_chain"
    hazard_kinds: tuple[str, ...] = HAZARD_KINDS
    # Per-step probability that an eligible step starts a breakdown. With
    # onset_decay < 1 the log-survival is spread geometrically toward early
    # steps, rate_t = 1 - (1 - density)**w_t with mean(w) = 1, so the chance of
    # no breakdown over the planned length is unchanged. 1.0 is a flat rate.
    density: float = 0.05
    onset_decay: float = 0.6
    # After the first hazard: per-step hazard probability, and growth of the
    # remaining length as a fraction of the planned length.
    cascade_density: float = 0.25
    failure_extension: float = 2.0
    tool_rate: float = 0.5
    distractor_rate: float = 0.15
    with_logprobs: bool = True
    vocab_size: int = 6
    # Dirichlet concentration of the per-token sampling law Q; smaller is sharper.
    q_concentration: float = 0.3
    base_mismatch: float = 0.2
    failure_mismatch: float = 0.45
    vocabulary: str = "default"
    seed: int = 7

    def __post_init__(self):
        kinds = tuple(self.hazard_kinds)
        object.__setattr__(self, "hazard_kinds", kinds)
        if self.n_episodes < 0:
            raise ScenarioSpecError("n_episodes must be >= 0")
        if not 1 <= self.min_steps <= self.max_steps:
            raise ScenarioSpecError("need 1 <= min_steps <= max_steps")
        if self.pattern not in ("tool_chain", "alternating"):
            raise ScenarioSpecError(f"unknown actor pattern {self.pattern!r}")
        if not 0.0 <= self.density <= 1.0:
            raise ScenarioSpecError("hazard density must lie in [0, 1]")
        unknown = [k for k in kinds if k not in HAZARD_KINDS + ("none",)]
        if unknown:
            raise ScenarioSpecError(f"unknown hazard kind(s): {', '.join(unknown)}")
        real = [k for k in kinds if k != "none"]
        if self.density > 0 and not real:
            raise ScenarioSpecError("hazard density > 0 requires at least one hazard kind other than 'none'")
        if "none" in kinds and real:
            raise ScenarioSpecError("hazard kind 'none' cannot be combined with other kinds")
        if not 0.0 < self.onset_decay <= 1.0:
            raise ScenarioSpecError("onset_decay must lie in (0, 1]")
        if self.failure_extension < 0:
            raise ScenarioSpecError("failure_extension must be >= 0")
        for name in ("tool_rate", "distractor_rate", "base_mismatch", "failure_mismatch", "cascade_density"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ScenarioSpecError(f"{name} must lie in [0, 1]")
        if not self.q_concentration > 0:
            raise ScenarioSpecError("q_concentration must be > 0")
        if self.vocab_size < 2:
            raise ScenarioSpecError("vocab_size must be >= 2")
        if self.vocabulary != "default":
            raise ScenarioSpecError(f"unknown vocabulary {self.vocabulary!r}")

    @property
    def active_kinds(self) -> tuple[str, ...]:
        return tuple(k for k in self.hazard_kinds if k != "none")


@dataclass(frozen=True)
class HazardAnnotation:
    episode_id: str
    step: int
    hazard_kind: str
    c_t: float


@dataclass
class SyntheticDataset:
    trajectories: list[TrajectoryRecord]
    annotations: list[HazardAnnotation]
    conditions: dict[str, np.ndarray] = field(default_factory=dict)

    def hazards_of(self, episode_id: str) -> list[HazardAnnotation]:
        return [a for a in self.annotations if a.episode_id == episode_id]


# --- surprisal oracle ----------------------------------------------------------

@dataclass(frozen=True)
class SurprisalOracle:
    """Per-position true (q) and model (p) distributions over a small symbol set."""

    q: np.ndarray
    p: np.ndarray
    symbols: tuple[str, ...]

    def __post_init__(self):
        q = np.atleast_2d(np.asarray(self.q, dtype=np.float64))
        p = np.atleast_2d(np.asarray(self.p, dtype=np.float64))
        if q.shape != p.shape or q.shape[1] != len(self.symbols):
            raise ScenarioSpecError("q, p and symbols must agree in shape")
        if np.any(q < 0) or np.any(p < 0):
            raise ScenarioSpecError("distributions must be nonnegative")
        if np.any(np.abs(q.sum(axis=1) - 1) > 1e-12) or np.any(np.abs(p.sum(axis=1) - 1) > 1e-12):
            raise ScenarioSpecError("each distribution must sum to 1 within 1e-12")
        if np.any((q > 0) & (p == 0)):
            raise ScenarioSpecError("q must be absolutely continuous w.r.t. p (q-mass where p = 0)")
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "p", p)

    @property
    def n_positions(self) -> int:
        return self.q.shape[0]

    def sample_steps(self, rng: np.random.Generator, n: int) -> np.ndarray:
        """Symbol indices, shape (n, positions), each position drawn from its q."""
        cdf = np.cumsum(self.q, axis=1)
        u = rng.random((n, self.n_positions))
        idx = np.empty((n, self.n_positions), dtype=np.int64)
        for j in range(self.n_positions):
            idx[:, j] = np.minimum(np.searchsorted(cdf[j], u[:, j], side="right"), len(self.symbols) - 1)
        return idx

    def tokens_for(self, idx_row: Sequence[int]) -> list[TokenLogProb]:
        return [TokenLogProb(self.symbols[s], math.log(self.p[j, s])) for j, s in enumerate(idx_row)]


def surprisal_oracle_expectation(o: SurprisalOracle) -> tuple[float, float, float]:
    """(mean entropy of q, mean KL(q || p), their sum) over positions, by direct summation."""
    ent, kl = [], []
    for q, p in zip(o.q, o.p):
        if np.any((q > 0) & (p == 0)):
            raise ScenarioSpecError("q must be absolutely continuous w.r.t. p")
        m = q > 0
        ent.append(-math.fsum(q[m] * np.log(q[m])))
        kl.append(math.fsum(q[m] * (np.log(q[m]) - np.log(p[m]))))
    h = math.fsum(ent) / len(ent)
    d = math.fsum(kl) / len(kl)
    return h, d, h + d


def random_oracle(rng: np.random.Generator, positions: int, vocab_size: int = 6, mismatch: float = 0.3,
                  max_prob: float = 0.85, symbols: Sequence[str] | None = None) -> SurprisalOracle:
    """Random (q, p) pair. Every model probability is at most ``max_prob``."""
    if symbols is None:
        symbols = tuple(f"sym{chr(97 + i % 26)}{chr(97 + i // 26)}" for i in range(vocab_size))
    v = len(symbols)
    q = rng.dirichlet(np.full(v, 0.7), size=positions)
    noise = rng.dirichlet(np.ones(v), size=positions)
    p = (1 - mismatch) * q + mismatch * noise
    # Cap peak model mass by mixing with uniform; keeps every token under the predictability filter.
    peak = p.max(axis=1, keepdims=True)
    lam = np.clip((peak - max_prob) / (peak - 1.0 / v), 0.0, 1.0)
    p = (1 - lam) * p + lam / v
    q = q / q.sum(axis=1, keepdims=True)
    p = p / p.sum(axis=1, keepdims=True)
    return SurprisalOracle(q, p, tuple(symbols))


# --- hazard model ----------------------------------------------------------------

@dataclass(frozen=True)
class HazardModel:
    """Per-step hazard lambda_t = min(1, c r_t) and the induced breakdown event."""

    c: float
    eta: float = 0.0

    def __post_init__(self):
        if not self.c > 0:
            raise ConfigError(f"dominance constant c must be > 0, got {self.c}")
        if self.eta < 0:
            raise ConfigError("tail slack eta must be >= 0")

    def hazards(self, risks) -> np.ndarray:
        return np.minimum(1.0, self.c * np.asarray(risks, dtype=np.float64))

    def sample_conditions(self, risks, rng: np.random.Generator) -> np.ndarray:
        """C_t in [0, 1]; positive with probability lambda_t, then a uniform severity in (0, 1]."""
        lam = self.hazards(risks)
        hit = rng.random(lam.shape) < lam
        severity = 1.0 - rng.random(lam.shape)
        return np.where(hit, severity, 0.0)

    @staticmethod
    def breakdown(conditions) -> bool:
        return bool(np.any(np.asarray(conditions) > 0))


# --- text generation ------------------------------------------------------------

_STOP = None
_WORD_RE = re.compile(r"\w+|[^\w\s]")


def _stopwords() -> frozenset[str]:
    global _STOP
    if _STOP is None:
        _STOP = default_stopwords()
    return _STOP


def _pick(rng: np.random.Generator, seq: Sequence[str]) -> str:
    return seq[int(rng.integers(len(seq)))]


def _entity_id(rng: np.random.Generator) -> str:
    letters = "ABCDEFGHJKLMNPQRSTUVWXYZ"
    return f"{_pick(rng, letters)}{_pick(rng, letters)}{int(rng.integers(100, 1000))}"


class _Context:
    """Topic state of one conversation."""

    def __init__(self, rng: np.random.Generator):
        self.rng = rng
        self.intent = _pick(rng, INTENTS)
        self.obj = _pick(rng, OBJECTS)
        self.eid = _entity_id(rng)
        self.city = _pick(rng, CITIES)
        self.name = _pick(rng, NAMES)
        self.status = _pick(rng, STATUSES)
        self.option = 0
        self._agent_order: list[int] = []

    def user_opening(self) -> str:
        r = self.rng
        return _pick(r, (
            f"Hi, I need to {self.intent} my {self.obj} {self.eid} to {self.city}.",
            f"Hello, can you help me {self.intent} the {self.obj} {self.eid}? It is for {self.city}.",
            f"I want to {self.intent} my {self.obj}, the number is {self.eid}.",
        ))

    def agent_message(self, distract: bool) -> str:
        r = self.rng
        if distract:
            # Benign enumeration: same template, new entities.
            self.option += 1
            return (f"Option {self.option}: {self.obj} to {_pick(r, CITIES)} on {_pick(r, DAYS)} "
                    f"for {int(r.integers(80, 900))} dollars.")
        self.status = _pick(r, STATUSES)
        templates = (
            f"I found your {self.obj} {self.eid} to {self.city}. It is currently {self.status}.",
            f"To {self.intent} the {self.obj} I need the passenger name on {self.eid}.",
            f"Your {self.obj} {self.eid} was updated, the new status is {self.status}.",
            f"I can {self.intent} the {self.obj} {self.eid} for {self.city}. Shall I proceed?",
            f"Thanks {self.name}. The {self.obj} {self.eid} for {self.city} is {self.status} now.",
            f"Before I {self.intent} the {self.obj}, please confirm the {self.city} itinerary.",
        )
        # Phrasings cycle without replacement so normal turns do not repeat verbatim.
        if not self._agent_order:
            self._agent_order = [int(i) for i in r.permutation(len(templates))]
        return templates[self._agent_order.pop()]

    def tool_call(self) -> tuple[str, str]:
        verb = _pick(self.rng, TOOL_VERBS)
        return f"{verb}_{self.obj}_details {self.obj} {self.eid}", verb

    def tool_observation(self, verb: str, distract: bool) -> str:
        if distract:
            return f"error: {self.obj} {self.eid} lookup timed out, retry later"
        return (f"{verb} {self.obj} details result: {self.obj} {self.eid} status {self.status} "
                f"destination {self.city} holder {self.name}")

    def user_reply(self, agent_text: str, distract: bool) -> str:
        r = self.rng
        if distract:
            return f"Hmm, I am not sure the {self.obj} {self.eid} to {self.city} is right."
        return _pick(r, (
            f"Yes, please {self.intent} my {self.obj} {self.eid}.",
            f"My name is {self.name} and the {self.obj} is {self.eid}.",
            f"Okay, the {self.obj} to {self.city} sounds right, go ahead.",
            f"Please {self.intent} the {self.obj} {self.eid} for {self.city}.",
        ))


def _garbled(rng: np.random.Generator, n: int) -> str:
    return " ".join(_pick(rng, GARBLED) for _ in range(n))


def _offtopic(rng: np.random.Generator, n: int) -> str:
    return " ".join(_pick(rng, OFFTOPIC) for _ in range(n))


def _token_logprobs(text: str, rng: np.random.Generator, spec: ScenarioSpec, mismatch: float) -> tuple[TokenLogProb, ...]:
    stop = _stopwords()
    out = []
    for tok in _WORD_RE.findall(text):
        low = tok.lower()
        if low in stop or not any(ch.isalpha() for ch in low):
            out.append(TokenLogProb(tok, math.log(rng.uniform(0.92, 0.999))))
            continue
        v = spec.vocab_size
        q = rng.dirichlet(np.full(v, spec.q_concentration))
        p = (1 - mismatch) * q + mismatch * rng.dirichlet(np.ones(v))
        sym = min(int(np.searchsorted(np.cumsum(q), rng.random(), side="right")), v - 1)
        out.append(TokenLogProb(tok, math.log(max(p[sym], 1e-300))))
    return tuple(out) if out else (TokenLogProb("", math.log(0.99)),)


def _onset_weights(n: int, decay: float) -> np.ndarray:
    """Geometric per-step weights with mean 1 over the planned length n."""
    g = decay ** np.arange(n, dtype=np.float64)
    return g / g.mean()


def _next_actor(spec: ScenarioSpec, rng: np.random.Generator, prev: tuple[Actor, bool]) -> tuple[Actor, bool]:
    actor, was_tool = prev
    if spec.pattern == "alternating":
        if actor == Actor.USER:
            return Actor.AGENT, bool(rng.random() < spec.tool_rate)
        return Actor.USER, False
    if actor == Actor.USER:
        return (Actor.AGENT, True) if rng.random() < spec.tool_rate else (Actor.AGENT, False)
    if was_tool:
        return Actor.AGENT, False
    return Actor.USER, False


def _episode(spec: ScenarioSpec, index: int) -> tuple[TrajectoryRecord, list[HazardAnnotation]]:
    rng = np.random.default_rng([spec.seed, index])
    eid = f"ep{index:05d}"
    n = int(rng.integers(spec.min_steps, spec.max_steps + 1))
    ctx = _Context(rng)
    kinds = set(spec.active_kinds)
    onset_weights = _onset_weights(n, spec.onset_decay)

    steps: list[StepRecord] = []
    notes: list[HazardAnnotation] = []
    agent_messages: list[str] = []
    failed_from: int | None = None
    slot: tuple[Actor, bool] = (Actor.USER, False)
    t = 0
    while t < n:
        t += 1
        if t > 1:
            slot = _next_actor(spec, rng, slot)
        actor, is_tool = slot
        if failed_from is None:
            rate = 1.0 - (1.0 - spec.density) ** onset_weights[t - 1]
        else:
            rate = spec.cascade_density
        distract = bool(rng.random() < spec.distractor_rate)
        hazard = None
        obs = None
        if actor == Actor.USER:
            prev_agent = t > 1 and steps[-1].actor == Actor.AGENT
            if prev_agent and "coordination_gap" in kinds and rng.random() < rate:
                hazard = "coordination_gap"
                text = _offtopic(rng, int(rng.integers(4, 8)))
            elif t == 1:
                text = ctx.user_opening()
            else:
                text = ctx.user_reply(steps[-1].text, distract)
        elif is_tool:
            text, verb = ctx.tool_call()
            if "tool_mismatch" in kinds and rng.random() < rate:
                hazard = "tool_mismatch"
                obs = _garbled(rng, int(rng.integers(5, 9)))
            else:
                obs = ctx.tool_observation(verb, distract)
        else:
            if agent_messages and "loop" in kinds and rng.random() < rate:
                hazard = "loop"
                text = agent_messages[-1]
                if rng.random() < 0.5:
                    text = _pick(rng, ("Again, ", "So, ", "Once again, ")) + text
            else:
                text = ctx.agent_message(distract)
            agent_messages.append(text)

        if hazard is not None:
            notes.append(HazardAnnotation(eid, t, hazard, float(rng.uniform(0.5, 1.0))))
            if failed_from is None:
                failed_from = t
                # A breakdown drags the conversation on.
                n += int(round(rng.uniform(0.5, 1.0) * spec.failure_extension * n))
        mismatch = spec.failure_mismatch if failed_from is not None and t > failed_from else spec.base_mismatch
        lps = _token_logprobs(text, rng, spec, mismatch) if spec.with_logprobs else None
        steps.append(StepRecord(t, actor, text, obs, is_tool, lps))

    outcome = 1 if notes else 0
    return TrajectoryRecord(eid, tuple(steps), outcome), notes


def generate(spec: ScenarioSpec) -> SyntheticDataset:
    trajectories, annotations = [], []
    conditions = {}
    for i in range(spec.n_episodes):
        traj, notes = _episode(spec, i)
        c = np.zeros(len(traj))
        for a in notes:
            c[a.step - 1] = a.c_t
        conditions[traj.episode_id] = c
        trajectories.append(traj)
        annotations.extend(notes)
    return SyntheticDataset(trajectories, annotations, conditions)


ANNOTATION_HEADER = ["episode_id", "step", "hazard_kind", "C_t"]


def write_annotations_csv(annotations: Sequence[HazardAnnotation], out: IO[str]) -> None:
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(ANNOTATION_HEADER)
    for a in annotations:
        writer.writerow([a.episode_id, a.step, a.hazard_kind, repr(a.c_t)])


def read_annotations_csv(src: IO[str]) -> list[HazardAnnotation]:
    return [HazardAnnotation(r["episode_id"], int(r["step"]), r["hazard_kind"], float(r["C_t"]))
            for r in csv.DictReader(src)]


# --- breakdown bound ----------------------------------------------------------------

@dataclass(frozen=True)
class BoundCheckResult:
    trials: int
    p_breakdown: float
    std_error: float
    bound: float
    holds: bool
    mean_tail_mean: float
    mean_k_tail_mean: float
    eta_hat: float
    union_bound: float
    c: float

    @property
    def slack(self) -> float:
        return self.bound - self.p_breakdown


def breakdown_bound_check(spec: ScenarioSpec, params: TracerParams, c: float, trials: int,
                          config: SignalConfig | None = None,
                          embedder: Embedder | None = None) -> BoundCheckResult:
    """Monte-Carlo check that P(breakdown) <= c (E[K TM_k] + eta).

    Every trial generates one episode from ``spec``, scores its step risks
    under ``params`` and draws the latent conditions from hazard
    min(1, c r_t). eta is the largest below-tail risk mass observed. With a
    fixed episode length E[K TM_k] = K E[TM_k].
    """
    if not c > 0:
        raise ConfigError(f"dominance constant c must be > 0, got {c}")
    if trials < 1000:
        raise ConfigError("breakdown_bound_check needs at least 1000 trials")
    model = HazardModel(c)
    embedder = embedder or default_embedder()
    spec = replace(spec, n_episodes=trials)

    breakdowns = np.zeros(trials, dtype=bool)
    tms = np.zeros(trials)
    k_tms = np.zeros(trials)
    below = np.zeros(trials)
    hazard_mass = np.zeros(trials)
    for i in range(trials):
        traj, _ = _episode(spec, i)
        rv = build_risk_vector(traj, compute_step_signals(traj, config, embedder), params)
        r = rv.values
        lam = model.hazards(r)
        assert np.all(lam <= c * r + 1e-15), "hazard must be dominated by c r_t"
        conds = model.sample_conditions(r, np.random.default_rng([spec.seed, i, 1]))
        breakdowns[i] = model.breakdown(conds)
        srt = rv.sorted_desc
        k = tail_k_count(params.k, len(r))
        tms[i] = srt[:k].mean()
        k_tms[i] = srt[:k].sum()
        below[i] = srt[k:].sum()
        hazard_mass[i] = lam.sum()

    eta_hat = float(below.max())
    assert np.all(below <= eta_hat)
    p_hat = float(breakdowns.mean())
    se = math.sqrt(p_hat * (1 - p_hat) / trials)
    bound = c * float(k_tms.mean()) + c * eta_hat
    return BoundCheckResult(
        trials=trials,
        p_breakdown=p_hat,
        std_error=se,
        bound=bound,
        holds=p_hat <= bound + 3 * se,
        mean_tail_mean=float(tms.mean()),
        mean_k_tail_mean=float(k_tms.mean()),
        eta_hat=eta_hat,
        union_bound=float(hazard_mass.mean()),
        c=c,
    )


def dataset_statistics(ds: SyntheticDataset) -> dict[str, float]:
    n = len(ds.trajectories)
    lengths = [len(t) for t in ds.trajectories]
    kinds = {k: sum(1 for a in ds.annotations if a.hazard_kind == k) for k in HAZARD_KINDS}
    return {
        "episodes": n,
        "failures": sum(t.outcome == 1 for t in ds.trajectories),
        "mean_steps": float(np.mean(lengths)) if lengths else 0.0,
        "hazard_steps": len(ds.annotations),
        **{f"hazard_{k}": v for k, v in kinds.items()},
    }
