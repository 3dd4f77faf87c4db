"""
JSON-lines serialization of cascade groups and raw observed event streams.
One JSON object per line. Floats are written with their shortest round-trip representation (at most 17 significant
digits), so reading back a written file reproduces every value bit for bit.
"""
import json
from pathlib import Path
from typing import Any, Dict, Iterable, Iterator, List, Tuple, Union

from classes.exceptions import CascadeError, CascadeFormatError, DuplicateGroupError
from datasets.cascade import Cascade, CascadeGroup, CascadeRecord, RawCascade, RawObservedEvent
from utils.logger import logger
from utils.output import atomic_write


def record_to_dict(record: CascadeRecord) -> Dict[str, Any]:
    if record.is_event:
        return {'t': record.time}
    return {'o': record.time, 'd': record.duration, 'c': record.count}


def record_from_dict(item: Dict[str, Any]) -> CascadeRecord:
    if not isinstance(item, dict):
        raise CascadeError(f'A record should be an object (got {item!r})')
    keys = set(item)
    if keys == {'t'}:
        return CascadeRecord.event(_number(item['t'], 't'))
    if keys == {'o', 'd', 'c'}:
        count = item['c']
        if isinstance(count, bool) or not isinstance(count, int):
            raise CascadeError(f'Field "c" should be an integer (got {count!r})')
        return CascadeRecord.interval(_number(item['o'], 'o'), _number(item['d'], 'd'), count)
    raise CascadeError(f'A record should have the fields {{"t"}} or {{"o", "d", "c"}} (got {sorted(keys)})')


def cascade_to_dict(cascade: Cascade) -> Dict[str, Any]:
    return {'id': cascade.id, 'horizon': cascade.horizon, 'records': [record_to_dict(r) for r in cascade.records]}


def cascade_from_dict(item: Dict[str, Any]) -> Cascade:
    _require(item, ('id', 'horizon', 'records'), 'cascade')
    if not isinstance(item['records'], list):
        raise CascadeError('Field "records" should be a list')
    return Cascade(tuple(record_from_dict(r) for r in item['records']), _number(item['horizon'], 'horizon'),
                   str(item['id']))


def group_to_dict(group: CascadeGroup) -> Dict[str, Any]:
    return {
        'group_id': group.group_id,
        'label': group.label,
        'tags': None if group.tags is None else sorted(group.tags),
        'cascades': [cascade_to_dict(c) for c in group.cascades],
    }


def group_from_dict(item: Dict[str, Any]) -> CascadeGroup:
    _require(item, ('group_id', 'cascades'), 'group')
    if not isinstance(item['cascades'], list):
        raise CascadeError('Field "cascades" should be a list')
    label = item.get('label')
    tags = item.get('tags')
    return CascadeGroup(group_id=str(item['group_id']),
                        cascades=tuple(cascade_from_dict(c) for c in item['cascades']),
                        label=None if label is None else str(label),
                        tags=None if tags is None else frozenset(map(str, tags)))


def raw_cascade_to_dict(raw: RawCascade) -> Dict[str, Any]:
    item = {'cascade_id': raw.cascade_id,
            'events': [{'t': e.time, 'rtc': e.cumulative_count} for e in raw.events],
            'horizon': raw.horizon}
    if raw.group_id is not None:
        item['group_id'] = raw.group_id
    if raw.label is not None:
        item['label'] = raw.label
    if raw.tags is not None:
        item['tags'] = sorted(raw.tags)
    return item


def raw_cascade_from_dict(item: Dict[str, Any]) -> RawCascade:
    _require(item, ('cascade_id', 'events', 'horizon'), 'raw cascade')
    events = []
    for event in item['events']:
        _require(event, ('t', 'rtc'), 'raw event')
        events.append(RawObservedEvent(_number(event['t'], 't'), _count(event['rtc'], 'rtc')))
    tags = item.get('tags')
    return RawCascade(cascade_id=str(item['cascade_id']), events=tuple(events),
                      horizon=_number(item['horizon'], 'horizon'),
                      group_id=item.get('group_id'), label=item.get('label'),
                      tags=None if tags is None else frozenset(map(str, tags)))


def write_groups(groups: Iterable[CascadeGroup], file_path: Union[str, Path]) -> None:
    """
    Write cascade groups as JSON lines (one group per line), atomically.

    :param groups: The groups to write.
    :param file_path: The output file.
    """
    _write_lines((group_to_dict(g) for g in groups), file_path, 'group')


def read_groups(file_path: Union[str, Path]) -> List[CascadeGroup]:
    """
    Read cascade groups from a JSON-lines file. Blank lines are ignored.

    :param file_path: The input file.
    :return: The groups in file order.
    :raise CascadeFormatError: If a line is not a valid group, with its line number.
    :raise DuplicateGroupError: If two groups share the same identifier.
    """
    groups = []
    seen = {}
    for line_number, item in _read_lines(file_path):
        try:
            group = group_from_dict(item)
        except (CascadeError, KeyError, TypeError, ValueError) as err:
            raise CascadeFormatError(line_number, str(err), str(file_path)) from err
        if group.group_id in seen:
            raise DuplicateGroupError(line_number, group.group_id, str(file_path))
        seen[group.group_id] = line_number
        groups.append(group)

    logger.debug(f'{len(groups)} group(s) loaded from {file_path}')
    return groups


def write_raw_cascades(raw_cascades: Iterable[RawCascade], file_path: Union[str, Path]) -> None:
    _write_lines((raw_cascade_to_dict(r) for r in raw_cascades), file_path, 'raw cascade')


def read_raw_cascades(file_path: Union[str, Path]) -> List[RawCascade]:
    """
    Read raw observed event streams from a JSON-lines file (one cascade per line).

    :param file_path: The input file.
    :return: The raw cascades in file order.
    :raise CascadeFormatError: If a line is not a valid raw cascade, with its line number.
    """
    raw_cascades = []
    for line_number, item in _read_lines(file_path):
        try:
            raw_cascades.append(raw_cascade_from_dict(item))
        except (CascadeError, KeyError, TypeError, ValueError) as err:
            raise CascadeFormatError(line_number, str(err), str(file_path)) from err

    logger.debug(f'{len(raw_cascades)} raw cascade(s) loaded from {file_path}')
    return raw_cascades


def _read_lines(file_path: Union[str, Path]) -> Iterator[Tuple[int, Dict[str, Any]]]:
    with open(file_path, 'r', encoding='utf-8') as f:
        for line_number, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                item = json.loads(line)
            except json.JSONDecodeError as err:
                raise CascadeFormatError(line_number, f'invalid JSON ({err.msg})', str(file_path)) from err
            if not isinstance(item, dict):
                raise CascadeFormatError(line_number, 'a line should contain one JSON object', str(file_path))
            yield line_number, item


def _write_lines(items: Iterable[Dict[str, Any]], file_path: Union[str, Path], item_name: str) -> None:
    nb_items = 0
    with atomic_write(file_path) as f:
        for item in items:
            f.write(json.dumps(item, allow_nan=False, ensure_ascii=False) + '\n')
            nb_items += 1
    logger.debug(f'{nb_items} {item_name}(s) written in {file_path}')


def _require(item: Any, names: Tuple[str, ...], item_name: str) -> None:
    if not isinstance(item, dict):
        raise CascadeError(f'A {item_name} should be an object')
    missing = [n for n in names if n not in item]
    if missing:
        raise CascadeError(f'Missing field(s) in {item_name}: ' + ', '.join(f'"{n}"' for n in missing))


def _number(value: Any, name: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise CascadeError(f'Field "{name}" should be a number (got {value!r})')
    return float(value)


def _count(value: Any, name: str) -> int:
    # 5.0 is accepted, 4.9 is not
    if isinstance(value, bool) or not isinstance(value, (int, float)) or not float(value).is_integer() or value < 0:
        raise CascadeError(f'Field "{name}" should be an integer >= 0 (got {value!r})')
    return int(value)
