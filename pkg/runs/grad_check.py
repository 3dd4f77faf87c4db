"""
Comparison of the automatic gradients of the trained losses with central finite differences.
"""
from typing import Callable, Dict, Optional, Tuple

import numpy as np
import torch
from torch import nn

from classes.data_structures import GradCheckReport
from datasets.cascade import Cascade, CascadeRecord
from datasets.reconstruction import truncate
from models.heads import ClassifierHead, PopularityHead, ProjectionHead
from models.icth import ICTH, ICTHConfig
from runs.pretrain import ntxent_loss
from utils.logger import logger

DEFAULT_STEP = 1e-5
TOLERANCE = 1e-4

LossBuilder = Callable[[ICTH, Cascade, np.random.Generator], Tuple[Callable[[], torch.Tensor], Dict[str, nn.Parameter]]]


def example_cascade() -> Cascade:
    """ A small canonical cascade mixing point events and censored intervals (one of them empty). """
    return Cascade((CascadeRecord.event(0.0),
                    CascadeRecord.interval(0.0, 1.5, 2),
                    CascadeRecord.event(1.5),
                    CascadeRecord.interval(1.5, 1.0, 0),
                    CascadeRecord.event(2.5),
                    CascadeRecord.interval(2.5, 1.5, 3)), horizon=4.0, id='gradcheck')


def relative_error(analytic: torch.Tensor, numeric: torch.Tensor) -> float:
    """ ||a - n|| / max(||a||, ||n||, 1e-8): 0 when both gradients vanish. """
    scale = max(float(torch.linalg.vector_norm(analytic)), float(torch.linalg.vector_norm(numeric)), 1e-8)
    return float(torch.linalg.vector_norm(analytic - numeric)) / scale


def gradient_errors(loss_fn: Callable[[], torch.Tensor], parameters: Dict[str, nn.Parameter],
                    step: float = DEFAULT_STEP) -> Dict[str, float]:
    """
    :param loss_fn: Computes the scalar loss from the current parameter values.
    :param parameters: The named weight tensors to check.
    :param step: The finite difference step.
    :return: The relative error of each weight tensor.
    """
    loss = loss_fn()
    analytic = torch.autograd.grad(loss, list(parameters.values()), allow_unused=True)

    errors = {}
    with torch.no_grad():
        for (name, parameter), gradient in zip(parameters.items(), analytic):
            if gradient is None:
                gradient = torch.zeros_like(parameter)
            numeric = torch.zeros_like(parameter)
            flat, flat_numeric = parameter.view(-1), numeric.view(-1)
            for i in range(flat.numel()):
                original = flat[i].item()
                flat[i] = original + step
                plus = float(loss_fn())
                flat[i] = original - step
                minus = float(loss_fn())
                flat[i] = original
                flat_numeric[i] = (plus - minus) / (2 * step)
            errors[name] = relative_error(gradient, numeric)
    return errors


def _icth_loglik(model: ICTH, cascade: Cascade, rng: np.random.Generator):
    return (lambda: -model.log_likelihood([cascade]).sum()), dict(model.named_parameters())


def _ntxent(model: ICTH, cascade: Cascade, rng: np.random.Generator):
    head = ProjectionHead(model.config.d_model).to(model.dtype)
    embeddings = torch.tensor(rng.normal(size=(4, model.config.d_model)), dtype=model.dtype)
    return (lambda: ntxent_loss(head(embeddings[:2]), head(embeddings[2:]), 0.5)), dict(head.named_parameters())


def _classifier(model: ICTH, cascade: Cascade, rng: np.random.Generator):
    head = ClassifierHead(model.config.d_model, 2).to(model.dtype)
    groups = [[cascade], [truncate(cascade, 2.0), truncate(cascade, 3.0)], [truncate(cascade, 1.0)]]
    labels = torch.tensor([0, 1, 0])
    parameters = {f'head.{n}': p for n, p in head.named_parameters()}
    parameters.update({f'backbone.{n}': p for n, p in model.named_parameters()})
    return (lambda: head.loss(model.group_embeddings(groups), labels)), parameters


def _popularity(model: ICTH, cascade: Cascade, rng: np.random.Generator):
    head = PopularityHead(model.config.d_model).to(model.dtype)
    observed = [truncate(cascade, 1.0), truncate(cascade, 2.0), truncate(cascade, 3.0)]
    targets = torch.log1p(torch.tensor([5.0, 3.0, 1.0], dtype=model.dtype))
    parameters = {f'head.{n}': p for n, p in head.named_parameters()}
    parameters.update({f'backbone.{n}': p for n, p in model.named_parameters()})
    return (lambda: head.loss(model.cascade_embeddings(observed), targets)), parameters


GRAD_CHECK_LOSSES: Dict[str, LossBuilder] = {
    'icth_loglik': _icth_loglik,
    'ntxent': _ntxent,
    'classifier': _classifier,
    'popularity': _popularity,
}


def grad_check(model: Optional[ICTH] = None, cascade: Optional[Cascade] = None, loss: str = 'icth_loglik',
               step: float = DEFAULT_STEP, seed: int = 42) -> GradCheckReport:
    """
    Check the gradient of one of the trained losses for every weight tensor involved.

    :param model: A double precision backbone, a tiny seeded one if not set.
    :param cascade: The cascade used by the loss, the example cascade if not set.
    :param loss: The loss selector, a key of GRAD_CHECK_LOSSES.
    :param step: The central finite difference step.
    :param seed: The seed of the tiny model, the heads and the random embeddings.
    :return: The relative error per weight tensor.
    """
    if loss not in GRAD_CHECK_LOSSES:
        raise ValueError(f'Unknown loss "{loss}", choose one of: {", ".join(GRAD_CHECK_LOSSES)}')
    torch.manual_seed(seed)
    if model is None:
        model = ICTH(ICTHConfig.tiny(), torch.float64)
    if model.dtype != torch.float64:
        raise ValueError('The gradient check needs a double precision model')

    loss_fn, parameters = GRAD_CHECK_LOSSES[loss](model, cascade or example_cascade(), np.random.default_rng(seed))
    report = GradCheckReport(loss, step, gradient_errors(loss_fn, parameters, step))
    logger.info(f'Gradient check "{loss}": max relative error {report.max_relative_error:.3e} '
                f'({report.worst_tensor})')
    return report
