from __future__ import annotations

from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sqlbench.datasets import DifficultyLabel
from sqlbench.metrics import EvalRecord
from sqlbench.reporting import (
    CSV,
    PLAIN,
    STRUCTURED,
    BucketCounts,
    RunSummary,
    compare,
    format_rate,
    parse_summary_csv,
    render_delta,
    render_summary,
    summarize,
)

SPIDER = ("easy", "medium", "hard", "extra")


def synthetic_records(bucket_counts: dict[str, tuple[int, int]]) -> list[EvalRecord]:
    """bucket -> (n, correct): records with ex = em = correctness."""
    records = []
    index = 0
    for label, (n, correct) in bucket_counts.items():
        for i in range(n):
            verdict = i < correct
            records.append(
                EvalRecord(index, verdict, verdict, None,
                           DifficultyLabel("spider4", label), None)
            )
            index += 1
    return records


def graded_bucket_records() -> list[EvalRecord]:
    return synthetic_records(
        {"easy": (10, 9), "medium": (10, 7), "hard": (10, 5), "extra": (10, 3)}
    )


def test_bucket_rates_and_overall():
    summary = summarize(graded_bucket_records(), "run-a", "cafe")
    rates = [summary.buckets[label].ex_rate() for label in SPIDER]
    assert rates == [Fraction(9, 10), Fraction(7, 10), Fraction(5, 10), Fraction(3, 10)]
    assert summary.overall.ex_rate() == Fraction(24, 40) == Fraction(3, 5)
    assert [format_rate(r) for r in rates] == ["0.900", "0.700", "0.500", "0.300"]
    assert format_rate(summary.overall.ex_rate()) == "0.600"


def test_aggregation_consistency():
    summary = summarize(graded_bucket_records(), "run-a", "cafe")
    assert sum(c.n for c in summary.buckets.values()) == summary.overall.n
    assert sum(c.ex_correct for c in summary.buckets.values()) == summary.overall.ex_correct
    assert sum(c.em_correct for c in summary.buckets.values()) == summary.overall.em_correct


def test_all_correct_rates_one():
    records = synthetic_records({label: (5, 5) for label in SPIDER})
    summary = summarize(records, "r", "f")
    for label in SPIDER:
        assert format_rate(summary.buckets[label].ex_rate()) == "1.000"


def test_zero_records_no_division_error():
    summary = summarize([], "empty", "f")
    assert summary.overall.n == 0
    assert summary.overall.ex_rate() is None
    rendered = render_summary(summary, PLAIN)
    assert "n/a" in rendered


def test_unlabeled_record_rejected():
    record = EvalRecord(0, True, True, None, None, None)
    with pytest.raises(ValueError, match="difficulty"):
        summarize([record], "r", "f")


def test_plain_table_layout():
    rendered = render_summary(summarize(graded_bucket_records(), "run-a", "cafe"), PLAIN)
    lines = rendered.splitlines()
    header = lines[2].split()
    assert header == ["metric", "Easy", "Medium", "Hard", "Extra", "Overall"]
    ex_line = [l for l in lines if l.startswith("ex")][0]
    assert ex_line.split()[1:] == ["0.900", "0.700", "0.500", "0.300", "0.600"]


def test_csv_roundtrip_exact():
    summary = summarize(graded_bucket_records(), "run-a", "cafe")
    summary.ves_mean = 1.2345678901234567
    parsed = parse_summary_csv(render_summary(summary, CSV))
    assert parsed == summary


@settings(max_examples=60, deadline=None)
@given(
    st.lists(
        st.tuples(st.integers(0, 30), st.integers(0, 30), st.integers(0, 30)),
        min_size=4, max_size=4,
    )
)
def test_csv_roundtrip_randomized(cells):
    buckets = {}
    overall = BucketCounts()
    for label, (n_extra, em_c, ex_c) in zip(SPIDER, cells):
        n = n_extra + max(em_c, ex_c)  # keep correct <= scored
        counts = BucketCounts(n=n, em_scored=n, em_correct=em_c, ex_scored=n, ex_correct=ex_c)
        buckets[label] = counts
        overall.merge(counts)
    summary = RunSummary(
        run_id="rand", scheme="spider4", buckets=buckets, overall=overall,
        ves_mean=None, config_fingerprint="fp",
    )
    assert parse_summary_csv(render_summary(summary, CSV)) == summary


def test_compare_zero_on_identical():
    summary = summarize(graded_bucket_records(), "run-a", "cafe")
    report = compare(summary, summary)
    assert all(delta == 0 for delta in report.ex_deltas.values())
    assert all(delta == 0 for delta in report.em_deltas.values())


def test_compare_base_vs_tuned_delta():
    """Base overall EX 0.000 vs tuned 0.626 reproduces +0.626 exactly."""
    base = summarize(
        synthetic_records({label: (250, 0) for label in SPIDER}), "base", "f"
    )
    target = summarize(
        synthetic_records(
            {"easy": (250, 222), "medium": (250, 160), "hard": (250, 122), "extra": (250, 122)}
        ),
        "lora", "f",
    )
    report = compare(base, target)
    assert report.ex_deltas["overall"] == Fraction(626, 1000)
    assert format_rate(report.ex_deltas["overall"], signed=True) == "+0.626"


def test_compare_antisymmetric():
    a = summarize(graded_bucket_records(), "a", "f")
    b = summarize(
        synthetic_records({"easy": (10, 5), "medium": (10, 5), "hard": (10, 5), "extra": (10, 5)}),
        "b", "f",
    )
    forward, backward = compare(a, b), compare(b, a)
    for label in list(SPIDER) + ["overall"]:
        assert forward.ex_deltas[label] == -backward.ex_deltas[label]


def test_compare_scheme_mismatch():
    spider = summarize(graded_bucket_records(), "a", "f")
    bird = RunSummary(
        run_id="b", scheme="bird3",
        buckets={l: BucketCounts() for l in ("simple", "moderate", "challenge")},
        overall=BucketCounts(), ves_mean=None, config_fingerprint="f",
    )
    with pytest.raises(ValueError, match="scheme"):
        compare(spider, bird)


def test_render_delta_plain():
    a = summarize(graded_bucket_records(), "a", "f")
    report = compare(a, a)
    rendered = render_delta(report, PLAIN)
    assert "+0.000" in rendered
    assert rendered.splitlines()[2].split()[-1] == "Overall"


def test_rounding_half_up():
    assert format_rate(Fraction(1, 8)) == "0.125"
    assert format_rate(Fraction(5, 10000)) == "0.001"  # 0.0005 rounds up
    assert format_rate(Fraction(25, 10000)) == "0.003"  # 0.0025 rounds up
    assert format_rate(None) == "n/a"


def test_structured_render_includes_fingerprint():
    rendered = render_summary(summarize(graded_bucket_records(), "run-a", "deadbeef"), STRUCTURED)
    assert '"config_fingerprint": "deadbeef"' in rendered


def test_ves_mean_over_scored_records():
    records = [
        EvalRecord(0, True, True, 1.5, DifficultyLabel("spider4", "easy"), None),
        EvalRecord(1, True, False, None, DifficultyLabel("spider4", "easy"), None),
    ]
    summary = summarize(records, "r", "f")
    assert summary.ves_mean == pytest.approx(0.75)  # incorrect counts as zero


def test_render_delta_csv():
    a = summarize(graded_bucket_records(), "a", "f")
    rendered = render_delta(compare(a, a), CSV)
    lines = rendered.splitlines()
    assert lines[0].startswith("base_run,target_run,scheme,bucket")
    assert lines[-1].endswith("overall,+0.000,+0.000")
