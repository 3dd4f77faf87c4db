import os
import random
from copy import copy
from dataclasses import asdict, is_dataclass
from enum import Enum
from typing import Any, Dict, List, Union

import numpy as np
import torch

from utils.settings import settings


def fix_seed(seed: int = None) -> None:
    """
    Set random number generator seeds for reproducibility.
    Library code draws from explicit numpy generators, this only covers the global states (torch weights init).

    :param seed: The seed to use, the seed setting if not set.
    """
    seed = settings.seed if seed is None else seed
    random.seed(seed)
    np.random.seed(seed)
    torch.manual_seed(seed)
    torch.use_deterministic_algorithms(True)


def configure_threads(nb_threads: int = None) -> None:
    """
    Cap the number of threads used by torch (ICTH_THREADS).

    :param nb_threads: The number of threads, the threads setting if not set.
    """
    nb_threads = settings.threads if nb_threads is None else nb_threads
    torch.set_num_threads(nb_threads)
    os.environ['OMP_NUM_THREADS'] = str(nb_threads)


def torch_dtype(name: str = None) -> torch.dtype:
    """
    :param name: 'float64' or 'float32', the dtype setting if not set.
    :return: The matching torch floating point type.
    """
    return {'float64': torch.float64, 'float32': torch.float32}[name or settings.dtype]


def yaml_preprocess(item: Any) -> Union[str, int, float, List, Dict, None]:
    """
    Convert complex object to datatype accepted by yaml and json formats.

    :param item: The item to process.
    :return: The converted item.
    """
    if item is None or isinstance(item, (str, bool, int, float)):
        return item

    if isinstance(item, np.generic):
        return item.item()

    if isinstance(item, Enum):
        return item.value

    if isinstance(item, (np.ndarray, torch.Tensor)):
        return item.tolist()

    if is_dataclass(item) and not isinstance(item, type):
        item = asdict(item)

    if isinstance(item, dict):
        return {str(name): yaml_preprocess(value) for name, value in item.items()}

    if isinstance(item, (set, frozenset)):
        item = sorted(item)

    try:
        return [yaml_preprocess(value) for value in copy(list(item))]
    except TypeError:
        # Not iterable, then convert to string
        return str(item)
