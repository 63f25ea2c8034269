"""Chunk planning laws and the summarize/merge call pattern."""

from __future__ import annotations

import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pentagent.errors import ConfigError
from pentagent.llm import AgentRole
from pentagent.summarize import Summarizer, plan_chunks

from conftest import make_gateway


def test_plan_chunks_stride_arithmetic():
    plan = plan_chunks(13000, 6000, 500)
    assert plan.spans == ((0, 6000), (5500, 11500), (11000, 13000))


def test_plan_chunks_single_span_below_one_chunk():
    assert plan_chunks(4000).spans == ((0, 4000),)


def test_plan_chunks_empty_input():
    assert plan_chunks(0).spans == ()


def test_plan_chunks_rejects_overlap_ge_chunk_size():
    with pytest.raises(ConfigError):
        plan_chunks(100, 500, 500)


def test_plan_chunks_contained_trailing_span_not_emitted():
    # 11500 would start a span at 11000 ending at 11500, inside (5500, 11500)
    plan = plan_chunks(11500, 6000, 500)
    assert plan.spans == ((0, 6000), (5500, 11500))


@given(st.integers(min_value=0, max_value=100_000))
@settings(max_examples=300)
def test_plan_chunks_coverage_and_overlap_properties(text_len):
    plan = plan_chunks(text_len, 6000, 500)
    spans = plan.spans
    if text_len == 0:
        assert spans == ()
        return
    assert spans[0][0] == 0
    assert spans[-1][1] == text_len
    for (s1, e1), (s2, e2) in zip(spans, spans[1:]):
        assert s2 < s1 + 6000  # no gap
        assert e1 - s2 == 500  # exact overlap
        assert s2 > s1
    assert all(e - s <= 6000 for s, e in spans)


def _summarizer_with(replies):
    gateway, backend = make_gateway([(AgentRole.SUMMARIZER, match, reply) for match, reply in replies])
    return Summarizer(gateway), backend


def test_summarize_multi_chunk_merges():
    text = "x" * 13000
    summarizer, backend = _summarizer_with(
        [
            ("Summarize this tool output chunk", "s1"),
            ("Summarize this tool output chunk", "s2"),
            ("Summarize this tool output chunk", "s3"),
            ("Merge these partial summaries", "M"),
        ]
    )
    summary = summarizer.summarize(text)
    assert summary.text == "M"
    assert summary.chunk_count == 3
    assert summary.source_len == 13000
    chunk_calls = [m for _, m in backend.requests if m.startswith("Summarize this tool output chunk")]
    merge_calls = [m for _, m in backend.requests if m.startswith("Merge these partial summaries")]
    assert len(chunk_calls) == 3
    assert len(merge_calls) == 1


def test_summarize_single_chunk_skips_merge():
    summarizer, backend = _summarizer_with([("Summarize", "s")])
    summary = summarizer.summarize("short output")
    assert summary.text == "s"
    assert summary.chunk_count == 1
    assert all(not m.startswith("Merge") for _, m in backend.requests)


def test_summarize_empty_output_makes_no_calls():
    summarizer, backend = _summarizer_with([])
    summary = summarizer.summarize("")
    assert summary.text == "" and summary.chunk_count == 0
    assert backend.requests == []


def test_summarize_call_count_equals_chunk_count_random_lengths():
    rng = random.Random(7)
    for _ in range(20):
        text_len = rng.randrange(1, 40_000)
        expected_chunks = len(plan_chunks(text_len).spans)
        replies = [("Summarize", f"s{i}") for i in range(expected_chunks)]
        if expected_chunks > 1:
            replies.append(("Merge", "M"))
        summarizer, backend = _summarizer_with(replies)
        summary = summarizer.summarize("y" * text_len)
        chunk_calls = sum(1 for _, m in backend.requests if m.startswith("Summarize"))
        assert chunk_calls == expected_chunks == summary.chunk_count


def test_summarize_recursive_merge_when_partials_exceed_chunk():
    # two chunks whose summaries are each 4000 chars: combined 8001 > 6000,
    # so the merge pass re-chunks (2 spans) before the final merge call
    text = "z" * 7000
    big = "a" * 4000
    summarizer, backend = _summarizer_with(
        [
            ("Summarize", big),
            ("Summarize", big),
            ("Summarize", "r1"),
            ("Summarize", "r2"),
            ("Merge", "final"),
        ]
    )
    summary = summarizer.summarize(text)
    assert summary.text == "final"
    assert summary.chunk_count == 2
    assert sum(1 for _, m in backend.requests if m.startswith("Merge")) == 1
    assert sum(1 for _, m in backend.requests if m.startswith("Summarize")) == 4


def test_summarize_binary_input_is_escaped():
    summarizer, backend = _summarizer_with([("Summarize", "ok")])
    summary = summarizer.summarize(b"\xff\xfebinary")
    assert summary.chunk_count == 1
    assert "\\xff" in backend.requests[0][1]
