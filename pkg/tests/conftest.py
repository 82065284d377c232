import math

import pytest
from hypothesis import HealthCheck, settings

from tracer.trajectory import make_trajectory

settings.register_profile("default", max_examples=200, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def step(actor, text, *, obs=None, tool=False, probs=None):
    """Compact step builder; ``probs`` is a list of (token, probability)."""
    lps = None if probs is None else [[tok, math.log(p)] for tok, p in probs]
    return {"actor": actor, "text": text, "observation_text": obs, "is_tool_call": tool, "token_logprobs": lps}


@pytest.fixture
def small_traj():
    return make_trajectory("ep1", [
        step("user", "I need to cancel my booking A123 to Paris.", probs=[("cancel", 0.4), ("booking", 0.3)]),
        step("agent", "get_booking A123", obs="booking A123 status confirmed destination Paris", tool=True,
             probs=[("get", 0.8), ("booking", 0.6)]),
        step("agent", "Your booking A123 to Paris is confirmed. Shall I cancel it?",
             probs=[("Your", 0.95), ("booking", 0.5), ("cancel", 0.2)]),
        step("user", "Yes please cancel booking A123.", probs=[("Yes", 0.9), ("cancel", 0.7)]),
    ], outcome=0)


_ACCEPTANCE: dict[int, str] = {}


@pytest.fixture
def acceptance():
    """Record one result line per acceptance criterion; printed in the terminal summary."""

    def record(number: int, name: str, ok: bool, detail: str = "") -> bool:
        _ACCEPTANCE[number] = f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {name}" + (
            f" ({detail})" if detail else "")
        print(_ACCEPTANCE[number])
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for number in sorted(_ACCEPTANCE):
            terminalreporter.write_line(_ACCEPTANCE[number])
