"""
Transformations between raw observations and interval-censored cascades: reconstruction of the missing counts from
cumulative counts, synthetic down-sampling and the conversions used by the baselines and the popularity protocol.
"""
import math
from collections import OrderedDict
from typing import List, NamedTuple, Sequence

import numpy as np

from classes.data_structures import ReconstructionWarning
from classes.exceptions import CascadeError
from datasets.cascade import Cascade, CascadeGroup, CascadeRecord, RawCascade, RawObservedEvent, tile, times_close
from utils.logger import logger


class Reconstruction(NamedTuple):
    cascade: Cascade
    warnings: List[ReconstructionWarning]


def reconstruct_missing_counts(raw: Sequence[RawObservedEvent], horizon: float, cascade_id: str = '') \
        -> Reconstruction:
    """
    Build a fully tiled cascade from observed events carrying the cumulative count of the cascade.
    Between two observed events i and i+1, max(0, rtc[i+1] - rtc[i] - 1) events are missing. Before the first
    observed event, rtc[0] - 1 events are missing over [0, t0].
    A decreasing or stalling cumulative count (deleted events) is clamped to 0 missing events and reported.

    :param raw: The observed events sorted by time.
    :param horizon: The end of the observation window.
    :param cascade_id: The identifier of the produced cascade.
    :return: The tiled cascade and the clamping warnings.
    """
    if len(raw) == 0:
        raise CascadeError(f'Cascade "{cascade_id}" has no observed event to reconstruct from')
    times = [e.time for e in raw]
    if any(t2 < t1 for t1, t2 in zip(times, times[1:])):
        raise CascadeError(f'Observed event times of cascade "{cascade_id}" are not sorted')
    if times[0] < 0 or times[-1] > horizon:
        raise CascadeError(f'Observed event times of cascade "{cascade_id}" should be within [0, {horizon}]')
    if any(e.cumulative_count < 0 for e in raw):
        raise CascadeError(f'Cumulative counts of cascade "{cascade_id}" should be non-negative')

    warnings = []
    records = []
    # Missing events that can't be placed in a zero-length gap are carried to the next interval
    carried = max(0, raw[0].cumulative_count - 1)
    if carried > 0 and times[0] > 0:
        records.append(CascadeRecord.interval(0.0, times[0], carried))
        carried = 0

    for i, (current, following) in enumerate(zip(raw, raw[1:])):
        records.append(CascadeRecord.event(current.time))
        missing = following.cumulative_count - current.cumulative_count - 1
        if missing < 0:
            warning = ReconstructionWarning(i, current.cumulative_count, following.cumulative_count, -missing)
            logger.warning(f'Cascade "{cascade_id}" {warning}')
            warnings.append(warning)
            missing = 0
        carried += missing
        if following.time > current.time:
            records.append(CascadeRecord.interval(current.time, following.time - current.time, carried))
            carried = 0

    records.append(CascadeRecord.event(raw[-1].time))
    if raw[-1].time < horizon:
        records.append(CascadeRecord.interval(raw[-1].time, horizon - raw[-1].time, carried))
    elif carried > 0:
        last_interval = next((i for i in reversed(range(len(records))) if records[i].is_interval), None)
        if last_interval is None:
            raise CascadeError(f'Cascade "{cascade_id}": {carried} missing event(s) with no interval to hold them')
        r = records[last_interval]
        records[last_interval] = CascadeRecord.interval(r.time, r.duration, r.count + carried)

    return Reconstruction(Cascade(tuple(records), horizon, cascade_id), warnings)


def reconstruct_groups(raw_cascades: Sequence[RawCascade]) -> List[CascadeGroup]:
    """
    Reconstruct every raw cascade and group them by group_id (the cascade id when the group is not set).
    Groups keep the order of their first appearance.
    """
    grouped = OrderedDict()
    for raw in raw_cascades:
        cascade = reconstruct_missing_counts(raw.events, raw.horizon, raw.cascade_id).cascade
        group_id = raw.group_id or raw.cascade_id
        entry = grouped.setdefault(group_id, {'cascades': [], 'label': raw.label, 'tags': set()})
        entry['cascades'].append(cascade)
        if raw.tags:
            entry['tags'].update(raw.tags)
        if raw.label is not None and entry['label'] is not None and raw.label != entry['label']:
            raise CascadeError(f'Group "{group_id}" has conflicting labels "{entry["label"]}" and "{raw.label}"')
        entry['label'] = entry['label'] or raw.label

    return [CascadeGroup(group_id, tuple(entry['cascades']), entry['label'], frozenset(entry['tags']) or None)
            for group_id, entry in grouped.items()]


def downsample(cascade: Cascade, p_missing: float, seed: int) -> Cascade:
    """
    Remove each point event independently with probability p_missing. The count of a removed event is absorbed by
    the censored interval covering its position, adjacent intervals are merged.
    The removal draws one uniform number per event in order, so the same seed gives nested removal sets for
    increasing probabilities.

    :param cascade: The cascade (tiled first if needed).
    :param p_missing: The removal probability.
    :param seed: The seed of the removal draws.
    :return: The down-sampled cascade, with the same total count.
    """
    if not 0 <= p_missing <= 1:
        raise ValueError(f'The removal probability should be in [0, 1] (got {p_missing})')

    tiled = tile(cascade)
    draws = np.random.default_rng(seed).random(tiled.nb_events)
    removed = iter(draws < p_missing)

    # Mutable [start, end, count] for intervals, float time for kept events
    out: List = []
    pending: List[float] = []  # Times of removed events not yet absorbed

    def absorb_pending_into(interval: list) -> None:
        interval[2] += len(pending)
        pending.clear()

    for record in tiled.records:
        if record.is_interval:
            interval = [record.time, record.end, record.count]
            if pending:
                absorb_pending_into(interval)
            if out and isinstance(out[-1], list) and times_close(out[-1][1], interval[0]):
                out[-1][1] = interval[1]
                out[-1][2] += interval[2]
            else:
                out.append(interval)
        elif next(removed):
            if out and isinstance(out[-1], list) and times_close(out[-1][1], record.time):
                out[-1][2] += 1
            else:
                pending.append(record.time)
        else:
            if pending:
                out.append(_isolated_interval(pending, out, tiled.horizon, record.time))
                pending.clear()
            out.append(record.time)

    if pending:
        out.append(_isolated_interval(pending, out, tiled.horizon, None))

    records = [CascadeRecord.interval(r[0], r[1] - r[0], r[2]) if isinstance(r, list) else CascadeRecord.event(r)
               for r in out]
    return tiled.with_records(_merge_adjacent_intervals(records))


def _isolated_interval(pending: List[float], out: list, horizon: float, next_time) -> list:
    """
    Interval for removed events with no adjacent interval: they sit in a zero-length gap between kept records,
    so the interval spans from the previous record end (or 0) up to them, or from them up to the next record
    (or the horizon).
    """
    t = pending[-1]
    previous_end = 0.0 if not out else (out[-1][1] if isinstance(out[-1], list) else out[-1])
    if previous_end < pending[0]:
        return [previous_end, t, len(pending)]
    end = horizon if next_time is None else next_time
    if end > t:
        return [pending[0], end, len(pending)]
    raise CascadeError('Removed events have no room for a censored interval')


def _merge_adjacent_intervals(records: List[CascadeRecord]) -> List[CascadeRecord]:
    merged = []
    for record in records:
        if merged and record.is_interval and merged[-1].is_interval and times_close(merged[-1].end, record.time):
            previous = merged.pop()
            record = CascadeRecord.interval(previous.time, record.end - previous.time, previous.count + record.count)
        merged.append(record)
    return merged


def drop_missing_counts(cascade: Cascade) -> Cascade:
    """
    Keep the observed events only (ablation of the missing counts).
    """
    return cascade.with_records(r for r in cascade.records if r.is_event)


def events_to_intervals(cascade: Cascade) -> Cascade:
    """
    Convert a cascade into censored intervals only: observed event times become observation times, each period
    ending with an event counts the censored events it covers plus that event.

    :param cascade: A canonical cascade.
    :return: An interval-only cascade tiling [0, horizon] with the same total count.
    """
    records = []
    start = 0.0
    count = 0

    for record in cascade.records:
        count += record.implied_count
        if record.is_event and record.time > start:
            records.append(CascadeRecord.interval(start, record.time - start, count))
            start, count = record.time, 0

    if cascade.horizon > start:
        records.append(CascadeRecord.interval(start, cascade.horizon - start, count))
    elif count > 0:
        if not records:
            raise CascadeError(f'Cascade "{cascade.id}" has no period to hold its events')
        last = records.pop()
        records.append(CascadeRecord.interval(last.time, last.duration, last.count + count))

    return cascade.with_records(records)


def truncate(cascade: Cascade, t_obs: float) -> Cascade:
    """
    Cut a cascade at an observation time. An interval straddling t_obs is shortened and keeps a count prorated by
    its observed length (floored).

    :param cascade: The cascade to cut.
    :param t_obs: The observation time, the new horizon.
    :return: The observed part of the cascade.
    """
    if t_obs <= 0:
        raise ValueError(f'The observation time should be > 0 (got {t_obs})')
    if t_obs >= cascade.horizon:
        return cascade

    records = []
    for record in cascade.records:
        if record.is_event and record.time <= t_obs:
            records.append(record)
        elif record.is_interval and (record.end <= t_obs or times_close(record.end, t_obs)):
            records.append(record)
        elif record.is_interval and record.time < t_obs:
            observed = t_obs - record.time
            records.append(CascadeRecord.interval(record.time, observed,
                                                  math.floor(record.count * observed / record.duration)))

    return cascade.with_records(records, horizon=t_obs)
