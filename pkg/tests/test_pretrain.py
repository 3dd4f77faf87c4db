import math

import pytest
import torch

from classes.exceptions import TrainingDivergenceError
from models.icth import ICTH
from runs.pretrain import ContrastiveConfig, contrastive_batches, make_pairs, ntxent_loss, pretrain
from tests.conftest import make_group


@pytest.fixture
def groups():
    return [make_group(f'g{i}', 6 + i % 2, shift=1.5 * i) for i in range(4)]


def test_make_pairs(groups):
    pairs = make_pairs(groups, seed=5)

    assert [p.group_id for p in pairs] == [g.group_id for g in groups]
    for pair, group in zip(pairs, groups):
        assert len(pair.first) == math.ceil(len(group) / 2)
        assert sorted(c.id for c in pair.first + pair.second) == sorted(c.id for c in group.cascades)
        assert not {c.id for c in pair.first} & {c.id for c in pair.second}


def test_make_pairs_is_seeded(groups):
    assert make_pairs(groups, seed=5, epoch=2) == make_pairs(groups, seed=5, epoch=2)
    assert make_pairs(groups, seed=5, epoch=1) != make_pairs(groups, seed=5, epoch=2)


def test_single_cascade_groups_are_excluded(groups):
    pairs = make_pairs(groups + [make_group('single', 1)], seed=0)
    assert 'single' not in [p.group_id for p in pairs]


def test_ntxent_of_identical_views():
    views = torch.ones(2, 3, dtype=torch.float64)
    assert ntxent_loss(views, views, temperature=0.5).item() == pytest.approx(math.log(3))


def test_ntxent_of_perfectly_separated_pairs():
    views = torch.eye(4, dtype=torch.float64)
    assert ntxent_loss(views, views, temperature=0.05).item() < 1e-6


def test_ntxent_is_symmetric():
    torch.manual_seed(0)
    first, second = torch.randn(5, 3, dtype=torch.float64), torch.randn(5, 3, dtype=torch.float64)
    assert ntxent_loss(first, second, 0.5).item() == pytest.approx(ntxent_loss(second, first, 0.5).item())


@pytest.mark.parametrize(
    "name,first,second,temperature",
    [
        ["zero norm", torch.zeros(2, 3), torch.ones(2, 3), 0.5],
        ["single pair", torch.ones(1, 3), torch.ones(1, 3), 0.5],
        ["shape mismatch", torch.ones(2, 3), torch.ones(3, 3), 0.5],
        ["zero temperature", torch.ones(2, 3), torch.ones(2, 3), 0.0],
    ],
)
def test_ntxent_invalid(name, first, second, temperature):
    with pytest.raises(ValueError):
        ntxent_loss(first, second, temperature)


def test_contrastive_batches(groups):
    pairs = make_pairs(groups * 2 + groups[:1], seed=0)
    assert [len(b) for b in contrastive_batches(pairs, 4)] == [4, 5]
    assert [len(b) for b in contrastive_batches(pairs[:8], 3)] == [3, 3, 2]


@pytest.mark.parametrize("kwargs", [{'temperature': 0.0}, {'batch_groups': 1}, {'gradient_clip': 0.0}])
def test_invalid_contrastive_config(kwargs):
    with pytest.raises(ValueError):
        ContrastiveConfig(**kwargs)


def test_zero_learning_rate_keeps_the_weights(small_model, groups):
    initial = {n: t.clone() for n, t in small_model.state_dict().items()}
    result = pretrain(small_model, groups, ContrastiveConfig(epochs=2, learning_rate=0.0, batch_groups=2))

    for name, tensor in small_model.state_dict().items():
        assert torch.equal(tensor, initial[name]), name
    assert result.best_epoch == 0
    assert len(result.evaluation_losses) == 3
    assert len(result.train_losses) == 2


def test_pretrain_is_deterministic(small_model, groups):
    config = ContrastiveConfig(epochs=3, learning_rate=1e-2, batch_groups=2, seed=3)
    twin = ICTH(small_model.config, torch.float64)
    twin.load_state_dict(small_model.state_dict())

    first, second = pretrain(small_model, groups, config), pretrain(twin, groups, config)
    assert first.evaluation_losses == second.evaluation_losses
    assert first.best_loss <= first.initial_loss
    for name, tensor in small_model.state_dict().items():
        assert torch.equal(tensor, twin.state_dict()[name]), name


def test_pretrain_needs_two_pairs(small_model):
    with pytest.raises(ValueError):
        pretrain(small_model, [make_group('a', 4), make_group('b', 1)], ContrastiveConfig(epochs=1))


def test_divergence_is_reported(small_model, groups, monkeypatch):
    monkeypatch.setattr('runs.pretrain.ntxent_loss', lambda first, second, temperature: first.sum() * float('nan'))
    with pytest.raises(TrainingDivergenceError) as error:
        pretrain(small_model, groups, ContrastiveConfig(epochs=1, batch_groups=2))
    assert (error.value.epoch, error.value.batch) == (1, 0)
