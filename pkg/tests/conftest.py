import pytest
import torch

from datasets.cascade import Cascade, CascadeGroup, CascadeRecord
from models.icth import ICTH, ICTHConfig
from utils.settings import settings


@pytest.fixture(autouse=True)
def default_settings():
    """ Every test starts from the default settings, with an unnamed run (nothing written in ./out). """
    settings.reset()
    yield settings
    settings.reset()


@pytest.fixture
def mixed_cascade() -> Cascade:
    return Cascade((CascadeRecord.event(0.0),
                    CascadeRecord.interval(0.0, 2.0, 3),
                    CascadeRecord.event(2.0),
                    CascadeRecord.interval(2.0, 3.0, 0),
                    CascadeRecord.event(5.0),
                    CascadeRecord.interval(5.0, 5.0, 2)), horizon=10.0, id='mixed')


@pytest.fixture
def event_cascade() -> Cascade:
    return Cascade.from_event_times([0.0, 0.5, 1.25, 3.0, 3.5], horizon=5.0, cascade_id='events')


@pytest.fixture
def tiny_model() -> ICTH:
    torch.manual_seed(0)
    return ICTH(ICTHConfig.tiny(), torch.float64)


@pytest.fixture
def small_model() -> ICTH:
    torch.manual_seed(0)
    return ICTH(ICTHConfig(d_model=8, nb_heads=2, d_key=4, d_value=4, nb_layers=1, d_inner=16, max_seq_len=64,
                           linformer_k=16), torch.float64)


def make_group(group_id: str, nb_cascades: int, shift: float = 0.0, label=None) -> CascadeGroup:
    """ A group of event-only cascades with a group-specific event spacing. """
    cascades = tuple(Cascade.from_event_times([0.0] + [shift + 0.3 * (k + 1) * (1 + i % 3) for k in range(3)],
                                              horizon=10.0, cascade_id=f'{group_id}-{i}')
                     for i in range(nb_cascades))
    return CascadeGroup(group_id, cascades, label)
