"""
Cascade data model: observed events and censored event counts over a finite observation window.
"""
import math
from dataclasses import dataclass
from typing import FrozenSet, Iterable, Iterator, List, Optional, Tuple

from classes.data_structures import RecordKind, Violation, ViolationKind
from classes.exceptions import CascadeError


@dataclass(frozen=True)
class CascadeRecord:
    """
    One record of a cascade.
    A point event is observed at `time`. A censored interval starts at `time`, lasts `duration` and contains
    `count` events whose timestamps are unknown.
    """
    kind: RecordKind
    time: float
    duration: float = 0.0
    count: int = 0

    def __post_init__(self):
        if not math.isfinite(self.time) or self.time < 0:
            raise CascadeError(f'Record time should be finite and >= 0 (got {self.time})')
        if self.kind == RecordKind.POINT_EVENT:
            if self.duration != 0 or self.count != 0:
                raise CascadeError('A point event has no duration or count')
        else:
            if not math.isfinite(self.duration) or self.duration <= 0:
                raise CascadeError(f'Censored interval duration should be finite and > 0 (got {self.duration})')
            if int(self.count) != self.count or self.count < 0:
                raise CascadeError(f'Censored interval count should be an integer >= 0 (got {self.count})')
            object.__setattr__(self, 'count', int(self.count))
        object.__setattr__(self, 'time', float(self.time))
        object.__setattr__(self, 'duration', float(self.duration))

    @classmethod
    def event(cls, time: float) -> 'CascadeRecord':
        return cls(RecordKind.POINT_EVENT, time)

    @classmethod
    def interval(cls, start: float, duration: float, count: int) -> 'CascadeRecord':
        return cls(RecordKind.CENSORED_INTERVAL, start, duration, count)

    @property
    def is_event(self) -> bool:
        return self.kind == RecordKind.POINT_EVENT

    @property
    def is_interval(self) -> bool:
        return self.kind == RecordKind.CENSORED_INTERVAL

    @property
    def end(self) -> float:
        return self.time + self.duration

    @property
    def implied_count(self) -> int:
        """ Number of events this record stands for. """
        return 1 if self.is_event else self.count

    def __repr__(self):
        if self.is_event:
            return f'event({self.time:g})'
        return f'censored({self.time:g}, {self.duration:g}, {self.count})'


@dataclass(frozen=True)
class Cascade:
    """ Ordered records observed over [0, horizon]. """
    records: Tuple[CascadeRecord, ...]
    horizon: float
    id: str = ''

    def __post_init__(self):
        if not math.isfinite(self.horizon) or self.horizon <= 0:
            raise CascadeError(f'Cascade horizon should be finite and > 0 (got {self.horizon})')
        object.__setattr__(self, 'records', tuple(self.records))
        object.__setattr__(self, 'horizon', float(self.horizon))

    @classmethod
    def from_event_times(cls, times: Iterable[float], horizon: float, cascade_id: str = '') -> 'Cascade':
        return cls(tuple(CascadeRecord.event(t) for t in times), horizon, cascade_id)

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self) -> Iterator[CascadeRecord]:
        return iter(self.records)

    def __getitem__(self, i) -> CascadeRecord:
        return self.records[i]

    @property
    def event_times(self) -> List[float]:
        return [r.time for r in self.records if r.is_event]

    @property
    def nb_events(self) -> int:
        return sum(1 for r in self.records if r.is_event)

    @property
    def nb_intervals(self) -> int:
        return sum(1 for r in self.records if r.is_interval)

    @property
    def is_event_only(self) -> bool:
        return all(r.is_event for r in self.records)

    @property
    def is_interval_only(self) -> bool:
        return all(r.is_interval for r in self.records)

    def with_records(self, records: Iterable[CascadeRecord], horizon: Optional[float] = None) -> 'Cascade':
        return Cascade(tuple(records), self.horizon if horizon is None else horizon, self.id)


@dataclass(frozen=True)
class CascadeGroup:
    """ The cascades sharing one item or user identity. """
    group_id: str
    cascades: Tuple[Cascade, ...]
    label: Optional[str] = None
    tags: Optional[FrozenSet[str]] = None

    def __post_init__(self):
        object.__setattr__(self, 'cascades', tuple(self.cascades))
        if len(self.cascades) == 0:
            raise CascadeError(f'Group "{self.group_id}" should contain at least one cascade')
        if self.tags is not None:
            object.__setattr__(self, 'tags', frozenset(self.tags))

    def __len__(self) -> int:
        return len(self.cascades)

    def with_cascades(self, cascades: Iterable[Cascade]) -> 'CascadeGroup':
        return CascadeGroup(self.group_id, tuple(cascades), self.label, self.tags)


@dataclass(frozen=True)
class RawObservedEvent:
    """ An observed event carrying the cumulative count of the cascade at that time (retweet count). """
    time: float
    cumulative_count: int


@dataclass(frozen=True)
class RawCascade:
    """ One line of a raw-event file. """
    cascade_id: str
    events: Tuple[RawObservedEvent, ...]
    horizon: float
    group_id: Optional[str] = None
    label: Optional[str] = None
    tags: Optional[FrozenSet[str]] = None

    def __post_init__(self):
        object.__setattr__(self, 'events', tuple(self.events))


# Relative tolerance of the time comparisons, the end of an interval is start + duration after rounding
TIME_TOLERANCE = 1e-9


def times_close(a: float, b: float) -> bool:
    return abs(a - b) <= TIME_TOLERANCE * max(1.0, abs(a), abs(b))


def total_count(cascade: Cascade) -> int:
    """
    :param cascade: The cascade.
    :return: The number of point events plus every censored count.
    """
    return sum(r.implied_count for r in cascade.records)


def _order_key(record: CascadeRecord) -> Tuple[float, float]:
    # An event at the start of an interval comes first
    return record.time, record.end


def validate(cascade: Cascade) -> List[Violation]:
    """
    List every invariant violation of a cascade. An empty list means the cascade is canonical:
    records sorted, no overlap between records, no record beyond the horizon and, as soon as the cascade holds one
    censored interval, no untiled gap between consecutive records.
    Event-only cascades are canonical without tiling.

    :param cascade: The cascade to check.
    :return: The violations, at most one per consecutive pair plus one per record beyond the horizon.
    """
    violations = []
    records = cascade.records
    has_interval = any(r.is_interval for r in records)

    for i, (previous, current) in enumerate(zip(records, records[1:]), start=1):
        if _order_key(current) < _order_key(previous):
            violations.append(Violation(ViolationKind.UNSORTED, i,
                                        f'{current!r} is placed after {previous!r}'))
        elif current.time < previous.end and not times_close(current.time, previous.end):
            violations.append(Violation(ViolationKind.OVERLAP, i,
                                        f'{current!r} starts before the end of {previous!r}'))
        elif has_interval and current.time > previous.end and not times_close(current.time, previous.end):
            violations.append(Violation(ViolationKind.UNTILED_GAP, i,
                                        f'gap [{previous.end:g}, {current.time:g}] has no censored interval'))

    for i, record in enumerate(records):
        if record.end > cascade.horizon and not times_close(record.end, cascade.horizon):
            violations.append(Violation(ViolationKind.HORIZON, i,
                                        f'{record!r} ends after the horizon {cascade.horizon:g}'))

    return violations


def check_canonical(cascade: Cascade) -> None:
    """
    :raise CascadeError: If the cascade has at least one violation.
    """
    violations = validate(cascade)
    if violations:
        raise CascadeError(f'Cascade "{cascade.id}" is not canonical: ' + '; '.join(map(str, violations)))


def tile(cascade: Cascade) -> Cascade:
    """
    Insert a zero-count censored interval in every gap between consecutive records and a trailing one up to the
    horizon. The time before the first record stays unobserved. Tiling a tiled cascade returns it unchanged.

    :param cascade: A cascade with sorted, non-overlapping records inside the horizon.
    :return: The fully tiled cascade, with the same total count.
    """
    blocking = [v for v in validate(cascade) if v.kind != ViolationKind.UNTILED_GAP]
    if blocking:
        raise CascadeError(f'Cascade "{cascade.id}" can\'t be tiled: ' + '; '.join(map(str, blocking)))

    records = []
    for previous, current in zip(cascade.records, cascade.records[1:]):
        records.append(previous)
        if current.time > previous.end and not times_close(current.time, previous.end):
            records.append(CascadeRecord.interval(previous.end, current.time - previous.end, 0))

    if cascade.records:
        last = cascade.records[-1]
        records.append(last)
        if last.end < cascade.horizon and not times_close(last.end, cascade.horizon):
            records.append(CascadeRecord.interval(last.end, cascade.horizon - last.end, 0))

    return cascade.with_records(records)
