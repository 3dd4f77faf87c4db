"""
Contrastive pre-training: every group is split in two random halves, the pooled embeddings of the two halves of the
same group are pulled together against the halves of the other groups of the batch.
"""
from copy import deepcopy
from dataclasses import dataclass, field
from math import ceil, isfinite
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn, optim

from classes.exceptions import TrainingDivergenceError
from datasets.cascade import Cascade, CascadeGroup
from models.heads import ProjectionHead
from models.icth import ICTH
from utils.logger import logger
from utils.metrics import network_metrics
from utils.output import metrics_file, save_results
from utils.settings import settings
from utils.timer import SectionTimer


@dataclass(frozen=True)
class ContrastiveConfig:
    temperature: float = 0.5
    batch_groups: int = 8
    # 0 means d_model / 2
    projection_dim: int = 0
    epochs: int = 20
    learning_rate: float = 1e-3
    gradient_clip: float = 5.0
    seed: int = 42

    def __post_init__(self):
        if not self.temperature > 0:
            raise ValueError(f'The temperature should be > 0 (got {self.temperature})')
        if self.batch_groups < 2:
            raise ValueError(f'A contrastive batch needs at least 2 groups (got {self.batch_groups})')
        if self.epochs < 0 or self.learning_rate < 0 or not self.gradient_clip > 0:
            raise ValueError('Invalid optimization settings (epochs >= 0, learning rate >= 0, clipping norm > 0)')

    @classmethod
    def from_settings(cls) -> 'ContrastiveConfig':
        return cls(temperature=settings.temperature,
                   batch_groups=settings.batch_groups,
                   projection_dim=settings.projection_dim,
                   epochs=settings.pretrain_epochs,
                   learning_rate=settings.learning_rate,
                   gradient_clip=settings.gradient_clip,
                   seed=settings.seed)


class GroupPair(NamedTuple):
    """ The two disjoint halves of one group, their union is the group. """
    group_id: str
    first: Tuple[Cascade, ...]
    second: Tuple[Cascade, ...]


@dataclass
class PretrainResult:
    """
    Outcome of a pre-training. The evaluation loss is computed on the epoch 0 pairs, before the first update
    (index 0) and after each epoch. The weights of the best evaluation loss are restored.
    """
    evaluation_losses: List[float]
    train_losses: List[float]
    best_epoch: int
    projection_head: ProjectionHead
    nb_pairs: int = 0
    timings: Dict[str, float] = field(default_factory=dict)

    @property
    def initial_loss(self) -> float:
        return self.evaluation_losses[0]

    @property
    def best_loss(self) -> float:
        return self.evaluation_losses[self.best_epoch]


def make_pairs(groups: Sequence[CascadeGroup], seed: int, epoch: int = 0) -> List[GroupPair]:
    """
    Split the cascades of each group in two random halves. The first half gets the extra cascade of odd groups.
    The partition only depends on the seed and the epoch index.

    :param groups: The groups to split.
    :param seed: The seed of the split.
    :param epoch: The epoch index, a new partition per epoch.
    :return: One pair per group with at least 2 cascades, in the group order.
    """
    pairs = []
    excluded = []
    for group_index, group in enumerate(groups):
        if len(group) < 2:
            excluded.append(group.group_id)
            continue
        rng = np.random.default_rng([seed, epoch, group_index])
        permutation = rng.permutation(len(group))
        half = ceil(len(group) / 2)
        pairs.append(GroupPair(group.group_id,
                               tuple(group.cascades[i] for i in sorted(permutation[:half])),
                               tuple(group.cascades[i] for i in sorted(permutation[half:]))))

    if excluded:
        logger.warning(f'{len(excluded)} group(s) with a single cascade excluded from the pairs: '
                       f'{", ".join(excluded[:5])}{", ..." if len(excluded) > 5 else ""}')
    return pairs


def ntxent_loss(first: torch.Tensor, second: torch.Tensor, temperature: float) -> torch.Tensor:
    """
    Normalized temperature-scaled cross entropy over the 2N views of N pairs. For each anchor, the positive term is
    its partner, the denominator sums every other view of the batch (the anchor itself excluded).

    :param first: The projected embeddings of the first halves (N, p).
    :param second: The projected embeddings of the second halves (N, p), row i is the partner of first[i].
    :param temperature: The temperature τ > 0.
    :return: The mean loss over the 2N anchors.
    """
    if first.shape != second.shape or first.ndim != 2:
        raise ValueError(f'Both views should have the same (N, p) shape (got {tuple(first.shape)} and '
                         f'{tuple(second.shape)})')
    if len(first) < 2:
        raise ValueError('The contrastive loss needs at least 2 pairs')
    if not temperature > 0:
        raise ValueError(f'The temperature should be > 0 (got {temperature})')

    views = torch.cat([first, second], dim=0)
    norms = torch.linalg.vector_norm(views, dim=1, keepdim=True)
    if torch.any(norms == 0):
        raise ValueError('The cosine similarity is undefined for a zero-norm embedding')

    normalized = views / norms
    logits = normalized @ normalized.T / temperature
    nb_views = len(views)
    self_mask = torch.eye(nb_views, dtype=torch.bool, device=views.device)
    logits = logits.masked_fill(self_mask, float('-inf'))

    nb_pairs = len(first)
    partners = torch.cat([torch.arange(nb_pairs, nb_views), torch.arange(nb_pairs)]).to(views.device)
    return F.cross_entropy(logits, partners)


def half_embeddings(model: ICTH, pairs: Sequence[GroupPair]) -> Tuple[torch.Tensor, torch.Tensor]:
    """
    :return: The pooled embeddings of the first and second halves (N, d_model) each, differentiable.
    """
    embeddings = model.group_embeddings([p.first for p in pairs] + [p.second for p in pairs])
    return embeddings[:len(pairs)], embeddings[len(pairs):]


def contrastive_batches(pairs: Sequence[GroupPair], batch_groups: int) -> List[List[GroupPair]]:
    """ Consecutive batches of batch_groups pairs, a last batch with a single pair is merged in the previous one. """
    batches = [list(pairs[i:i + batch_groups]) for i in range(0, len(pairs), batch_groups)]
    if len(batches) > 1 and len(batches[-1]) == 1:
        batches[-2].extend(batches.pop())
    return batches


def pretrain(model: ICTH, groups: Sequence[CascadeGroup], config: Optional[ContrastiveConfig] = None,
             projection_head: Optional[ProjectionHead] = None) -> PretrainResult:
    """
    Train the backbone and a projection head with the contrastive loss. Each epoch draws new group halves and
    visits the pairs in a new order.

    :param model: The backbone, trained in place.
    :param groups: The training groups (unlabeled).
    :param config: The contrastive configuration, from the settings if not set.
    :param projection_head: The projection head to train, a new one seeded with the config seed if not set.
    :return: The loss curves and the projection head. The best evaluation state is restored in place.
    :raise TrainingDivergenceError: If a batch loss is not finite.
    """
    config = config or ContrastiveConfig.from_settings()
    if projection_head is None:
        torch.manual_seed(config.seed)
        projection_head = ProjectionHead(model.config.d_model, config.projection_dim).to(model.dtype)

    evaluation_pairs = make_pairs(groups, config.seed, epoch=0)
    if len(evaluation_pairs) < 2:
        raise ValueError(f'The contrastive pre-training needs at least 2 groups with 2 cascades or more '
                         f'(got {len(evaluation_pairs)})')

    parameters = list(model.parameters()) + list(projection_head.parameters())
    optimizer = optim.Adam(parameters, lr=config.learning_rate)

    def evaluate() -> float:
        with torch.no_grad():
            losses = [float(_batch_loss(model, projection_head, batch, config.temperature))
                      for batch in contrastive_batches(evaluation_pairs, config.batch_groups)]
        return float(np.mean(losses))

    evaluation_losses = [evaluate()]
    train_losses: List[float] = []
    best_epoch = 0
    best_state = _snapshot(model, projection_head)
    logger.info(f'Contrastive pre-training on {len(evaluation_pairs)} groups for {config.epochs} epochs '
                f'(initial loss {evaluation_losses[0]:.5f})')
    network_metrics(model)
    logger.log_metrics(metrics_file(), epoch=0, loss=evaluation_losses[0], val_metric=evaluation_losses[0])

    model.train()
    projection_head.train()
    with SectionTimer('contrastive pre-training') as timer:
        for epoch in range(1, config.epochs + 1):
            pairs = make_pairs(groups, config.seed, epoch)
            order = np.random.default_rng([config.seed, epoch]).permutation(len(pairs))
            pairs = [pairs[i] for i in order]

            epoch_losses = []
            for batch_index, batch in enumerate(contrastive_batches(pairs, config.batch_groups)):
                optimizer.zero_grad()
                loss = _batch_loss(model, projection_head, batch, config.temperature)
                if not torch.isfinite(loss):
                    last_finite = epoch_losses[-1] if epoch_losses else (train_losses[-1] if train_losses else None)
                    raise TrainingDivergenceError(epoch, batch_index, last_finite)
                loss.backward()
                nn.utils.clip_grad_norm_(parameters, config.gradient_clip)
                optimizer.step()
                epoch_losses.append(float(loss))

            train_losses.append(float(np.mean(epoch_losses)))
            evaluation_losses.append(evaluate())
            if not isfinite(evaluation_losses[-1]):
                raise TrainingDivergenceError(epoch, None, train_losses[-1])

            improved = evaluation_losses[-1] < evaluation_losses[best_epoch]
            if improved:
                best_epoch = epoch
                best_state = _snapshot(model, projection_head)

            logger.debug(f'Epoch {epoch:3}/{config.epochs} | train loss: {train_losses[-1]:.5f} | '
                         f'evaluation loss: {evaluation_losses[-1]:.5f}{" (best)" if improved else ""}')
            logger.log_metrics(metrics_file(), epoch=epoch, loss=train_losses[-1], val_metric=evaluation_losses[-1])

    if best_epoch != config.epochs:
        logger.info(f'Restoring the weights of epoch {best_epoch}/{config.epochs} '
                    f'(evaluation loss {evaluation_losses[best_epoch]:.5f})')
    model.load_state_dict(best_state[0])
    projection_head.load_state_dict(best_state[1])
    model.eval()
    projection_head.eval()

    save_results(pretrain_initial_loss=evaluation_losses[0], pretrain_best_loss=evaluation_losses[best_epoch],
                 pretrain_best_epoch=best_epoch)
    return PretrainResult(evaluation_losses, train_losses, best_epoch, projection_head, len(evaluation_pairs),
                          {'pretrain': timer.last})


def _batch_loss(model: ICTH, projection_head: ProjectionHead, batch: Sequence[GroupPair],
                temperature: float) -> torch.Tensor:
    first, second = half_embeddings(model, batch)
    return ntxent_loss(projection_head(first), projection_head(second), temperature)


def _snapshot(*modules: nn.Module) -> Tuple[Dict[str, torch.Tensor], ...]:
    return tuple(deepcopy(m.state_dict()) for m in modules)
