import io
import math
from decimal import Decimal, getcontext

import pytest
from hypothesis import given, strategies as st

from tracer.errors import ConfigError, ContractError
from tracer.signals import (ContentFilterConfig, RepetitionConfig, SignalConfig, coherence_gap_agent,
                            coherence_gap_user, compute_step_signals, content_token_indices, content_tokens,
                            hybrid_repetition, is_numeric_token, iter_step_signals, lexical_jaccard,
                            normalized_surprisal, write_signal_csv)
from tracer.trajectory import Actor, TokenLogProb, make_trajectory

from conftest import step

getcontext().prec = 40


def tl(tok, p):
    return TokenLogProb(tok, math.log(p))


def test_content_indices_examples():
    assert content_token_indices([tl("the", 0.99), tl("refund", 0.30)]) == {2}
    assert content_token_indices([tl("42", 0.10)]) == set()
    assert content_token_indices([tl("cancel", 0.95)]) == set()


def test_numeric_predicate():
    assert is_numeric_token("42") and is_numeric_token("3.50") and is_numeric_token("$1,000")
    assert not is_numeric_token("A123")


def test_subword_markers_stripped():
    assert content_token_indices([tl("▁The", 0.5), tl("Ġrefund", 0.5)]) == {2}


def test_normalized_surprisal_two_tokens():
    oracle = (Decimal(2).ln() + Decimal(4).ln()) / 2
    got = normalized_surprisal([tl("refund", 0.5), tl("booking", 0.25)])
    assert got == pytest.approx(float(oracle), abs=1e-9)
    assert got == pytest.approx(1.0397207708399179, abs=1e-12)


def test_normalized_surprisal_empty_content_is_epsilon():
    assert normalized_surprisal([tl("the", 0.99), tl("7", 0.1)]) == 1e-3


def test_normalized_surprisal_at_threshold_boundary():
    cfg = ContentFilterConfig(pi0=0.9)
    oracle = -Decimal("0.9").ln()
    assert normalized_surprisal([tl("refund", 0.9)], cfg) == pytest.approx(float(oracle), abs=1e-9)


def test_jaccard_examples():
    assert lexical_jaccard("book flight paris", "book flight rome") == 0.5
    assert lexical_jaccard("refund booking", "refund booking") == 1.0
    assert lexical_jaccard("the a of", "is it the") == 0.0
    assert content_tokens("I will book 2 flights") == frozenset({"book", "flights"})


def _agents(*texts):
    return make_trajectory("e", [step("agent", t) for t in texts])


def test_repetition_examples():
    assert hybrid_repetition(1, _agents("check order A123 status")) == 0.0
    same = _agents("check order A123 status", "check order A123 status")
    assert hybrid_repetition(2, same) == pytest.approx(1.0, abs=1e-9)
    swapped = _agents("check order A123 status", "check order B456 status")
    assert hybrid_repetition(2, swapped) < hybrid_repetition(2, same)


def test_repetition_on_user_step_is_contract_error():
    traj = make_trajectory("e", [step("user", "hi")])
    with pytest.raises(ContractError):
        hybrid_repetition(1, traj)


def test_agent_gap_examples():
    traj = make_trajectory("e", [
        step("agent", "lookup booking A123", obs="lookup booking A123", tool=True),
        step("agent", "alpha beta", obs="gamma delta", tool=True),
        step("agent", "lookup booking", obs="", tool=True),
        step("agent", "lookup booking", tool=True),
    ])
    assert coherence_gap_agent(1, traj)[0] == pytest.approx(0.0, abs=1e-9)
    assert coherence_gap_agent(2, traj) == (1.0, True)
    assert coherence_gap_agent(3, traj) == (1.0, True)
    assert coherence_gap_agent(4, traj) == (0.0, False)


def test_user_gap_examples():
    traj = make_trajectory("e", [
        step("user", "hello"),
        step("agent", "your booking is confirmed"),
        step("user", "your booking is confirmed"),
        step("agent", "anything else"),
        step("user", "?!"),
    ])
    assert coherence_gap_user(1, traj) == (0.0, False)
    assert coherence_gap_user(3, traj)[0] == pytest.approx(0.0, abs=1e-9)
    assert coherence_gap_user(5, traj) == (1.0, True)
    with pytest.raises(ContractError):
        coherence_gap_user(2, traj)


def test_no_logprobs_anywhere():
    traj = make_trajectory("e", [step("user", "cancel A123"), step("agent", "cancel A123"),
                                 step("user", "weather tomorrow")])
    sigs = compute_step_signals(traj)
    assert not any(s.u_available for s in sigs)
    assert sigs[2].d_o_user > 0.9


def test_single_step_agent():
    traj = make_trajectory("e", [step("agent", "hello there", probs=[("hello", 0.5)])])
    (s,) = compute_step_signals(traj)
    assert (s.u, s.d_rep, s.d_o_agent, s.d_o_user) == (pytest.approx(math.log(2)), 0.0, 0.0, 0.0)


def test_identical_consecutive_agent_turns():
    sigs = compute_step_signals(_agents("refund the booking A123", "refund the booking A123"))
    assert sigs[1].d_rep == pytest.approx(1.0, abs=1e-9)


def test_config_validation():
    with pytest.raises(ConfigError):
        ContentFilterConfig(pi0=1.0)
    with pytest.raises(ConfigError):
        ContentFilterConfig(epsilon=0)
    with pytest.raises(ConfigError):
        RepetitionConfig(window=0)
    with pytest.raises(ConfigError):
        RepetitionConfig(window_unit="tokens")


def test_signal_csv_header(small_traj):
    buf = io.StringIO()
    write_signal_csv(small_traj, compute_step_signals(small_traj), buf)
    lines = buf.getvalue().splitlines()
    assert lines[0] == "step,actor,u,u_available,d_rep,d_o_agent,d_o_user"
    assert len(lines) == 1 + small_traj.n_steps


# --- properties over random trajectories ---------------------------------------

_WORDS = ["book", "flight", "paris", "rome", "refund", "the", "a", "A123", "B456", "status", "42", "is"]
_utter = st.lists(st.sampled_from(_WORDS), max_size=6).map(" ".join)


@st.composite
def trajectories(draw):
    n = draw(st.integers(1, 10))
    steps = []
    for _ in range(n):
        actor = draw(st.sampled_from(["user", "agent"]))
        tool = actor == "agent" and draw(st.booleans())
        obs = draw(st.one_of(st.none(), _utter)) if tool else None
        probs = draw(st.one_of(st.none(), st.lists(
            st.tuples(st.sampled_from(_WORDS), st.floats(0.01, 1.0)), min_size=1, max_size=4)))
        steps.append(step(actor, draw(_utter), obs=obs, tool=tool, probs=probs))
    return make_trajectory("h", steps)


@given(trajectories())
def test_ranges_and_gating(traj):
    for s, sig in zip(traj.steps, compute_step_signals(traj)):
        assert 0.0 <= sig.d_rep <= 1.0
        assert 0.0 <= sig.d_o_agent <= 2.0 and 0.0 <= sig.d_o_user <= 2.0
        if sig.u_available:
            assert sig.u >= 0.0
        if s.actor == Actor.USER:
            assert sig.d_rep == 0.0 and sig.d_o_agent == 0.0
        else:
            assert sig.d_o_user == 0.0
        if not s.is_tool_call:
            assert sig.d_o_agent == 0.0


@given(trajectories())
def test_incremental_tracker_matches_direct_definitions(traj):
    for t, (s, sig) in enumerate(zip(traj.steps, compute_step_signals(traj)), start=1):
        if s.actor == Actor.AGENT:
            assert sig.d_rep == pytest.approx(hybrid_repetition(t, traj), abs=1e-12)
            if s.is_tool_call:
                assert (sig.d_o_agent, sig.d_o_agent_available) == pytest.approx(coherence_gap_agent(t, traj))
        else:
            assert (sig.d_o_user, sig.d_o_user_available) == pytest.approx(coherence_gap_user(t, traj))


@given(trajectories())
def test_prefix_stability(traj):
    full = compute_step_signals(traj)
    for t in range(1, traj.n_steps + 1):
        assert compute_step_signals(traj.prefix(t)) == full[:t]


@given(trajectories())
def test_causality_instrumented(traj):
    consumed = 0

    def feed():
        nonlocal consumed
        for s in traj.steps:
            consumed += 1
            yield s

    for t, _ in enumerate(iter_step_signals(feed()), start=1):
        # The signals of step t are emitted before step t+1 is pulled.
        assert consumed == t


@given(trajectories(), st.integers(1, 5), st.integers(0, 5), st.sampled_from(["agent_turns", "steps"]))
def test_window_monotone(traj, m, extra, unit):
    small = compute_step_signals(traj, SignalConfig(repetition=RepetitionConfig(m, unit)))
    large = compute_step_signals(traj, SignalConfig(repetition=RepetitionConfig(m + extra, unit)))
    for a, b in zip(small, large):
        assert b.d_rep >= a.d_rep
