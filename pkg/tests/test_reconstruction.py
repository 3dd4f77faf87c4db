import pytest
from hypothesis import given, settings as hypothesis_settings, strategies as st

from classes.exceptions import CascadeError
from datasets.cascade import (Cascade, CascadeRecord, RawCascade, RawObservedEvent, tile, total_count,
                              validate)
from datasets.reconstruction import (downsample, drop_missing_counts, events_to_intervals, reconstruct_groups,
                                     reconstruct_missing_counts, truncate)

event_times = st.lists(st.floats(min_value=0.0, max_value=9.9, allow_nan=False), min_size=1, max_size=25,
                       unique=True).map(sorted)


def test_reconstruct_missing_counts():
    raw = [RawObservedEvent(0.0, 1), RawObservedEvent(1.0, 4), RawObservedEvent(3.0, 5)]
    cascade, warnings = reconstruct_missing_counts(raw, horizon=5.0, cascade_id='c')

    assert warnings == []
    assert cascade.records == (CascadeRecord.event(0.0), CascadeRecord.interval(0.0, 1.0, 2),
                               CascadeRecord.event(1.0), CascadeRecord.interval(1.0, 2.0, 0),
                               CascadeRecord.event(3.0), CascadeRecord.interval(3.0, 2.0, 0))
    assert total_count(cascade) == raw[-1].cumulative_count
    assert validate(cascade) == []


def test_reconstruct_missing_before_first_event():
    cascade, _ = reconstruct_missing_counts([RawObservedEvent(1.0, 3)], horizon=2.0)
    assert cascade.records[0] == CascadeRecord.interval(0.0, 1.0, 2)
    assert total_count(cascade) == 3


def test_reconstruct_decreasing_count_is_clamped():
    raw = [RawObservedEvent(0.0, 1), RawObservedEvent(1.0, 5), RawObservedEvent(2.0, 3)]
    cascade, warnings = reconstruct_missing_counts(raw, horizon=3.0)

    assert len(warnings) == 1
    assert all(r.count >= 0 for r in cascade.records if r.is_interval)
    assert total_count(cascade) == 3 + 3


@pytest.mark.parametrize(
    "name,raw,horizon",
    [
        ["empty", [], 1.0],
        ["unsorted", [RawObservedEvent(1.0, 1), RawObservedEvent(0.5, 2)], 2.0],
        ["after horizon", [RawObservedEvent(3.0, 1)], 2.0],
    ],
)
def test_reconstruct_invalid(name, raw, horizon):
    with pytest.raises(CascadeError):
        reconstruct_missing_counts(raw, horizon)


def test_reconstruct_groups():
    raw = [RawCascade('a', (RawObservedEvent(0.0, 1),), 1.0, group_id='g', label='x'),
           RawCascade('b', (RawObservedEvent(0.0, 1),), 1.0),
           RawCascade('c', (RawObservedEvent(0.0, 1),), 1.0, group_id='g', tags=frozenset({'t'}))]
    groups = reconstruct_groups(raw)

    assert [g.group_id for g in groups] == ['g', 'b']
    assert [c.id for c in groups[0].cascades] == ['a', 'c']
    assert groups[0].label == 'x'
    assert groups[0].tags == frozenset({'t'})


def test_reconstruct_groups_conflicting_labels():
    raw = [RawCascade('a', (RawObservedEvent(0.0, 1),), 1.0, group_id='g', label='x'),
           RawCascade('b', (RawObservedEvent(0.0, 1),), 1.0, group_id='g', label='y')]
    with pytest.raises(CascadeError):
        reconstruct_groups(raw)


def test_downsample_without_removal(mixed_cascade, event_cascade):
    assert downsample(mixed_cascade, 0.0, seed=1) == mixed_cascade
    assert downsample(event_cascade, 0.0, seed=1) == tile(event_cascade)


def test_downsample_everything(event_cascade):
    sampled = downsample(event_cascade, 1.0, seed=1)
    assert sampled.records == (CascadeRecord.interval(0.0, 5.0, 5),)


def test_downsample_invalid_probability(event_cascade):
    with pytest.raises(ValueError):
        downsample(event_cascade, 1.5, seed=0)


@hypothesis_settings(max_examples=60, deadline=None)
@given(times=event_times, p_missing=st.floats(min_value=0.0, max_value=1.0), seed=st.integers(0, 2 ** 32 - 1))
def test_downsample_conserves_total_count(times, p_missing, seed):
    cascade = Cascade.from_event_times(times, horizon=10.0)
    sampled = downsample(cascade, p_missing, seed)

    assert total_count(sampled) == len(times)
    assert validate(sampled) == []
    assert set(sampled.event_times) <= set(times)


@hypothesis_settings(max_examples=40, deadline=None)
@given(times=event_times, low=st.floats(0.0, 1.0), high=st.floats(0.0, 1.0), seed=st.integers(0, 2 ** 32 - 1))
def test_downsample_removal_sets_are_nested(times, low, high, seed):
    low, high = min(low, high), max(low, high)
    cascade = Cascade.from_event_times(times, horizon=10.0)
    assert set(downsample(cascade, high, seed).event_times) <= set(downsample(cascade, low, seed).event_times)


@hypothesis_settings(max_examples=40, deadline=None)
@given(p_missing=st.floats(min_value=0.0, max_value=1.0), seed=st.integers(0, 2 ** 32 - 1))
def test_downsample_mixed_cascade(p_missing, seed):
    cascade = Cascade((CascadeRecord.event(0.0), CascadeRecord.interval(0.0, 2.0, 3), CascadeRecord.event(2.0),
                       CascadeRecord.interval(2.0, 3.0, 0), CascadeRecord.event(5.0),
                       CascadeRecord.interval(5.0, 5.0, 2)), horizon=10.0)
    sampled = downsample(cascade, p_missing, seed)
    assert total_count(sampled) == 8
    assert validate(sampled) == []


def test_drop_missing_counts(mixed_cascade):
    dropped = drop_missing_counts(mixed_cascade)
    assert dropped.is_event_only
    assert dropped.event_times == [0.0, 2.0, 5.0]


def test_events_to_intervals(mixed_cascade):
    intervals = events_to_intervals(mixed_cascade)

    assert intervals.is_interval_only
    assert validate(intervals) == []
    assert intervals.records == (CascadeRecord.interval(0.0, 2.0, 5), CascadeRecord.interval(2.0, 3.0, 1),
                                 CascadeRecord.interval(5.0, 5.0, 2))
    assert total_count(intervals) == total_count(mixed_cascade)


@pytest.mark.parametrize(
    "t_obs,expected_last,expected_total",
    [
        [3.5, CascadeRecord.interval(2.0, 1.5, 0), 5],
        [7.5, CascadeRecord.interval(5.0, 2.5, 1), 7],
        [10.0, CascadeRecord.interval(5.0, 5.0, 2), 8],
    ],
)
def test_truncate(mixed_cascade, t_obs, expected_last, expected_total):
    observed = truncate(mixed_cascade, t_obs)
    assert observed.horizon == t_obs
    assert observed.records[-1] == expected_last
    assert total_count(observed) == expected_total
    assert validate(observed) == []


def test_truncate_invalid(mixed_cascade):
    with pytest.raises(ValueError):
        truncate(mixed_cascade, 0.0)
