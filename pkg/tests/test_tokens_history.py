"""Token counting rule and budgeted history trimming."""

from __future__ import annotations

import math
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from discourse.moderator_engine import ConversationHistory, HistoryEntry, Role, count_tokens


def oracle_count(text: str) -> int:
    return max(1, math.ceil(len(text) / 4))


def system_entry(tokens: int = 5) -> HistoryEntry:
    return HistoryEntry.make(Role.SYSTEM, "system", "x" * (tokens * 4), -1, 0.0)


def entry(tokens: int, seq: int) -> HistoryEntry:
    return HistoryEntry.make(Role.STUDENT, "S", "x" * (tokens * 4), seq, float(seq))


class TestCountTokens:
    def test_empty_string_floors_to_one(self):
        assert count_tokens("") == 1

    def test_exact_division(self):
        assert count_tokens("abcdefgh") == 2

    def test_rounding_up(self):
        assert count_tokens("abcde") == 2
        assert count_tokens("abc") == 1

    def test_matches_oracle_on_random_strings(self):
        rng = random.Random(99)
        alphabet = "abcdefghij klmnop\nqrstuvwxyz0123456789"
        for _ in range(10_000):
            s = "".join(
                rng.choice(alphabet) for _ in range(rng.randrange(0, 300))
            )
            assert count_tokens(s) == oracle_count(s)

    @given(st.text(max_size=2000))
    @settings(max_examples=300, deadline=None)
    def test_property_matches_oracle(self, s):
        assert count_tokens(s) == oracle_count(s)


def simulate_trim(system_tokens: int, existing: list[int], new: int, budget: int):
    """Integer oracle for the trim rule: returns (survivors, over_budget)."""
    entries = existing + [new]
    total = system_tokens + sum(entries)
    while total > budget and len(entries) > 1:
        total -= entries.pop(0)
    return entries, total > budget


class TestAppendAndTrim:
    def test_under_budget_noop(self):
        history = ConversationHistory(system_entry(5), budget=10_000)
        for i in range(3):
            result = history.append_and_trim(entry(3, i))
            assert result.dropped == [] and not result.over_budget
        assert history.token_total == 5 + 9

    def test_worked_example_cascading_drop(self):
        # Start from system 20 with entries 30/30/30 already present (built
        # under a loose budget), tighten the budget to 100, then append 30:
        # the two oldest must go, survivors total 20+30+30 = 80.
        history = ConversationHistory(system_entry(20), budget=1000)
        for i in range(3):
            history.append_and_trim(entry(30, i))
        history.budget = 100
        result = history.append_and_trim(entry(30, 3))
        assert [e.token_len for e in result.dropped] == [30, 30]
        assert [e.seq for e in result.dropped] == [0, 1]
        assert [e.seq for e in history.entries] == [2, 3]
        assert history.token_total == 80
        assert not result.over_budget

    def test_forced_retention_flags_over_budget(self):
        history = ConversationHistory(system_entry(20), budget=25)
        result = history.append_and_trim(entry(40, 0))
        assert result.over_budget
        assert [e.seq for e in history.entries] == [0]
        assert history.token_total == 20 + 40

    def test_system_entry_never_removed(self):
        history = ConversationHistory(system_entry(50), budget=60)
        for i in range(20):
            history.append_and_trim(entry(9, i))
        assert history.system_entry.token_len == 50
        assert history.token_total <= 60

    def test_seq_must_increase(self):
        history = ConversationHistory(system_entry(5), budget=100)
        history.append_and_trim(entry(3, 4))
        with pytest.raises(ValueError):
            history.append_and_trim(entry(3, 4))

    def test_token_len_must_match_rule(self):
        history = ConversationHistory(system_entry(5), budget=100)
        bad = HistoryEntry(Role.STUDENT, "S", "hello", token_len=99, seq=0, ts=0.0)
        with pytest.raises(ValueError):
            history.append_and_trim(bad)

    def test_projection_mirrors_entries(self):
        history = ConversationHistory(system_entry(5), budget=1000)
        history.append_and_trim(
            HistoryEntry.make(Role.STUDENT, "Ana", "hi there", 0, 0.0)
        )
        history.append_and_trim(
            HistoryEntry.make(Role.MODERATOR, "Moderator", "welcome", 1, 1.0)
        )
        projection = history.projection()
        assert [(m.role, m.name, m.text) for m in projection] == [
            ("student", "Ana", "hi there"),
            ("moderator", "Moderator", "welcome"),
        ]

    def test_random_histories_match_integer_oracle(self):
        rng = random.Random(4242)
        for _ in range(10_000):
            budget = rng.randrange(50, 10_001)
            system_tokens = rng.randrange(1, 40)
            history = ConversationHistory(system_entry(system_tokens), budget)
            sizes: list[int] = []
            for seq in range(rng.randrange(1, 12)):
                size = rng.randrange(1, 501)
                expected, expected_over = simulate_trim(
                    system_tokens, sizes, size, budget
                )
                before = [e.token_len for e in history.entries]
                result = history.append_and_trim(entry(size, seq))
                sizes = [e.token_len for e in history.entries]
                assert sizes == expected
                assert result.over_budget == expected_over
                # survivors are a suffix of the pre-append order plus the new entry
                assert before[len(before) - (len(sizes) - 1) :] == sizes[:-1]
                assert history.token_total == system_tokens + sum(sizes)
                if len(history.entries) > 1 or not expected_over:
                    assert history.token_total <= budget

    @given(
        budget=st.integers(min_value=50, max_value=10_000),
        system_tokens=st.integers(min_value=1, max_value=50),
        sizes=st.lists(st.integers(min_value=1, max_value=500), min_size=1, max_size=30),
    )
    @settings(max_examples=300, deadline=None)
    def test_property_trim_safety(self, budget, system_tokens, sizes):
        history = ConversationHistory(system_entry(system_tokens), budget)
        for seq, size in enumerate(sizes):
            history.append_and_trim(entry(size, seq))
            seqs = [e.seq for e in history.entries]
            assert seqs == sorted(seqs)
            if len(history.entries) > 1:
                assert history.token_total <= budget
        assert history.system_entry.token_len == system_tokens
