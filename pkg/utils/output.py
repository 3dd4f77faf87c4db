import os
import re
import shutil
from contextlib import contextmanager
from pathlib import Path
from tempfile import NamedTemporaryFile
from typing import IO, Any, Iterator, Optional, Sequence, Union

import numpy as np
import pandas as pd
import yaml
from codetiming import Timer

from utils.logger import logger
from utils.misc import yaml_preprocess
from utils.settings import settings

OUT_DIR = './out'
OUT_FILES = {
    'settings': 'settings.yaml',
    'results': 'results.yaml',
    'timers': 'timers.yaml',
    'metrics': 'metrics.jsonl',
}


@contextmanager
def atomic_write(file_path: Union[str, Path], binary: bool = False) -> Iterator[IO]:
    """
    Open a temporary file next to the target and move it to the target path only if the block succeeds.
    An interrupted write never leaves a partial file at the target path.

    :param file_path: The final path of the file.
    :param binary: If True, the file is opened in binary mode.
    :return: The open temporary file.
    """
    file_path = Path(file_path)
    file_path.parent.mkdir(parents=True, exist_ok=True)
    tmp_file = NamedTemporaryFile(mode='wb' if binary else 'w', dir=file_path.parent, prefix=f'.{file_path.name}.',
                                  suffix='.tmp', delete=False)
    try:
        with tmp_file:
            yield tmp_file
        os.replace(tmp_file.name, file_path)
    except BaseException:
        Path(tmp_file.name).unlink(missing_ok=True)
        raise

    logger.debug(f'File written: {file_path}')


def run_directory() -> Optional[Path]:
    """ :return: The directory of the current run, None if the run is unnamed. """
    return None if settings.is_unnamed_run() else Path(OUT_DIR, settings.run_name)


def metrics_file() -> Optional[Path]:
    """ :return: The JSON-lines metrics file of the current run, None if the run is unnamed. """
    run_dir = run_directory()
    return None if run_dir is None else run_dir / OUT_FILES['metrics']


def init_out_directory() -> None:
    """
    Prepare the output directory of a named run (log file and resolved settings).
    """
    if settings.is_unnamed_run():
        logger.debug('Nothing will be saved in the out directory because the name of the run is not set.')
        return

    run_dir = run_directory()

    # If the keyword 'tmp' is used as run name, then remove the previous files
    if settings.is_temporary_run() and run_dir.exists():
        logger.warning(f'Previous temporary files removed: {run_dir}')
        shutil.rmtree(run_dir)

    try:
        run_dir.mkdir(parents=True)
    except FileExistsError as err:
        raise ExistingRunName(settings.run_name, run_dir) from err

    logger.debug(f'Output directory created: {run_dir}')

    if settings.logger_file_enable:
        logger.enable_log_file(file_path=(run_dir / 'run.log'), file_log_level=settings.logger_file_level)

    parameter_file = run_dir / OUT_FILES['settings']
    with open(parameter_file, 'w') as f:
        yaml.dump(yaml_preprocess(settings.to_dict()), f)

    logger.debug(f'Parameters saved in {parameter_file}')


def save_results(**results: Any) -> None:
    """
    Append new entries in the result file of the run.

    :param results: Dictionary of labels and values.
    """
    if settings.is_unnamed_run():
        return

    results_path = run_directory() / OUT_FILES['results']
    with open(results_path, 'a') as f:
        yaml.dump(yaml_preprocess(results), f)

    logger.debug(f'{len(results)} result(s) saved in {results_path}')


def save_timers() -> None:
    """
    Save the named timers in a file in the output directory.
    """
    if settings.is_unnamed_run() or len(Timer.timers.data) == 0:
        return

    timers_file = run_directory() / OUT_FILES['timers']
    with open(timers_file, 'w') as f:
        f.write('# Values in seconds\n')
        yaml.dump({re.sub(r'\s+', '_', n.strip()): v for n, v in Timer.timers.data.items()}, f)

    logger.debug(f'{len(Timer.timers.data)} timer(s) saved in {timers_file}')


def export_embeddings(embeddings: np.ndarray, group_ids: Sequence[str], labels: Sequence[Optional[str]],
                      file_path: Union[str, Path]) -> None:
    """
    Write embeddings as tab-separated values: group_id, label, then one column per dimension, with a header row.
    Values are written with 17 significant digits.

    :param embeddings: The embedding matrix (one row per group).
    :param group_ids: The group identifiers, one per row.
    :param labels: The group labels (None for unlabeled groups), one per row.
    :param file_path: The output file.
    """
    embeddings = np.asarray(embeddings, dtype=float)
    if embeddings.ndim != 2:
        embeddings = embeddings.reshape(len(group_ids), -1) if len(group_ids) > 0 else np.zeros((0, 0))
    if not (len(group_ids) == len(labels) == embeddings.shape[0]):
        raise ValueError('One group id and one label are required per embedding row')

    table = pd.DataFrame(embeddings, columns=[f'dim_{i}' for i in range(embeddings.shape[1])])
    table.insert(0, 'label', ['' if label is None else label for label in labels])
    table.insert(0, 'group_id', list(group_ids))

    with atomic_write(file_path) as f:
        table.to_csv(f, sep='\t', index=False, float_format='%.17g', lineterminator='\n')

    logger.info(f'{len(table)} embedding(s) exported in {file_path}')


def read_embeddings(file_path: Union[str, Path]) -> pd.DataFrame:
    """ Read back an embeddings file written by export_embeddings. """
    return pd.read_csv(file_path, sep='\t', dtype={'group_id': str, 'label': str}, keep_default_na=False,
                       float_precision='round_trip')


class ExistingRunName(Exception):
    """ Exception raised when the user try to start a run with the same name as a previous one. """

    def __init__(self, run_name: str, path: Path):
        super().__init__(f'The run name "{run_name}" is already used in the out directory "{path}". '
                         f'Change the name in the run settings to a new one or "tmp" or empty.')
