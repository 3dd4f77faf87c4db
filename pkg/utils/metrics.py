from collections import Counter
from typing import Dict, Sequence, Union

import numpy as np
import torch
from sklearn.metrics import pairwise_distances, silhouette_score
from sklearn.metrics.pairwise import cosine_similarity
from torch.nn import Module
from torchmetrics.functional.classification import multiclass_confusion_matrix

from classes.data_structures import ClassMetrics, ClassificationMetrics
from utils.logger import logger
from utils.output import save_results

ArrayLike = Union[np.ndarray, torch.Tensor, Sequence]


def confusion_matrix(labels: ArrayLike, predictions: ArrayLike, nb_classes: int) -> np.ndarray:
    """
    :param labels: The true class indexes.
    :param predictions: The predicted class indexes.
    :param nb_classes: The number of classes.
    :return: The confusion matrix, rows are labels and columns are predictions.
    """
    matrix = multiclass_confusion_matrix(torch.as_tensor(predictions, dtype=torch.long),
                                         torch.as_tensor(labels, dtype=torch.long), num_classes=nb_classes)
    return matrix.cpu().numpy()


def classification_metrics(confusion_matrix: np.ndarray) -> ClassificationMetrics:
    """
    Compute different metrics to quantify a classification quality.
    Everything is computed for each class and the overall score (macro average).
    Metrics: accuracy, precision, recall, f1.

    Example:
    - Input confusion matrix: [[9, 1], [4, 36]]

             |  9 |  1 |
      Labels -----------
             |  4 | 36 |
            Predictions

    - Output:
      'classes': 'f1': [0.7826086956521738, 0.935064935064935]
                 'nb': [10, 40]
                 'precisions': [0.6923076923076923, 0.972972972972973]
                 'recall': [0.9, 0.9]
      'overall': 'accuracy': 0.9
                 'f1': 0.8588368153585544
                 'nb': 50
                 'precisions': 0.8326403326403327
                 'recall': 0.9

    :param confusion_matrix: The confusion matrix that contains the number of couple (label, predictions).
    :return: The different classification result metrics (see ClassificationMetrics dataclass).
    """
    confusion_matrix = np.asarray(confusion_matrix)
    nb_labels = confusion_matrix.sum()
    nb_good_class = confusion_matrix.trace()

    classes_nb_labels = confusion_matrix.sum(1)
    classes_nb_predictions = confusion_matrix.sum(0)
    classes_nb_good_predictions = confusion_matrix.diagonal()

    # Division by 0 give 0
    # Precision
    classes_precision = np.zeros(classes_nb_labels.shape, dtype=float)
    np.divide(classes_nb_good_predictions, classes_nb_predictions,
              out=classes_precision, where=classes_nb_predictions != 0)
    # Recall
    classes_recall = np.zeros(classes_nb_labels.shape, dtype=float)
    np.divide(classes_nb_good_predictions, classes_nb_labels,
              out=classes_recall, where=classes_nb_labels != 0)
    # F1
    classes_f1 = np.zeros(classes_nb_labels.shape, dtype=float)
    denominator = (classes_precision + classes_recall)
    np.divide((classes_precision * classes_recall), denominator, out=classes_f1, where=denominator != 0)
    classes_f1 *= 2

    return ClassificationMetrics(
        nb=int(nb_labels),
        accuracy=float(nb_good_class / nb_labels) if nb_labels > 0 else 0,
        precision=float(classes_precision.mean()),
        recall=float(classes_recall.mean()),
        f1=float(classes_f1.mean()),
        classes=[ClassMetrics(
            nb=int(classes_nb_labels[i]),
            precision=float(classes_precision[i]),
            recall=float(classes_recall[i]),
            f1=float(classes_f1[i])
        ) for i in range(len(confusion_matrix))]
    )


def macro_f1(labels: ArrayLike, predictions: ArrayLike, nb_classes: int) -> float:
    return classification_metrics(confusion_matrix(labels, predictions, nb_classes)).f1


def ape(predicted: ArrayLike, actual: ArrayLike) -> np.ndarray:
    """
    Absolute percentage error |predicted - actual| / actual.

    :param predicted: The predicted final counts.
    :param actual: The actual final counts (> 0).
    :return: The error of each prediction.
    """
    predicted, actual = np.asarray(predicted, dtype=float), np.asarray(actual, dtype=float)
    if np.any(actual <= 0):
        raise ValueError('The absolute percentage error is undefined for a final count of 0')
    return np.abs(predicted - actual) / actual


def pair_retrieval(first_halves: ArrayLike, second_halves: ArrayLike) -> float:
    """
    For each half embedding, retrieve the nearest other half (cosine similarity) and check it is its partner.
    Row i of both arrays are the two halves of the same group.

    :param first_halves: Embeddings of the first halves (N, d).
    :param second_halves: Embeddings of the second halves (N, d).
    :return: The fraction of the 2N halves whose nearest neighbour is their partner.
    """
    first_halves, second_halves = _as_array(first_halves), _as_array(second_halves)
    if first_halves.shape != second_halves.shape or first_halves.ndim != 2:
        raise ValueError(f'Each group should contribute exactly two halves (got shapes {first_halves.shape} and '
                         f'{second_halves.shape})')
    nb_groups = len(first_halves)
    if nb_groups < 2:
        raise ValueError('At least 2 groups are required for the retrieval')

    similarities = cosine_similarity(np.concatenate([first_halves, second_halves]))
    np.fill_diagonal(similarities, -np.inf)
    partners = np.concatenate([np.arange(nb_groups, 2 * nb_groups), np.arange(nb_groups)])
    return float(np.mean(np.argmax(similarities, axis=1) == partners))


def knn_accuracy(embeddings: ArrayLike, labels: Sequence, k: int) -> float:
    """
    Leave-one-out k nearest neighbours vote (Euclidean distance). Ties between labels are broken by the label of the
    nearest neighbour among the tied ones.

    :param embeddings: The embeddings (n, d).
    :param labels: The label of each embedding.
    :param k: The number of neighbours, < n.
    :return: The fraction of embeddings whose vote gives their own label.
    """
    embeddings = _as_array(embeddings)
    labels = np.asarray(labels)
    nb_items = len(embeddings)
    if len(labels) != nb_items:
        raise ValueError('One label per embedding is required')
    if not 1 <= k < nb_items:
        raise ValueError(f'The number of neighbours should be in [1, {nb_items - 1}] (got {k})')

    distances = pairwise_distances(embeddings, metric='euclidean')
    np.fill_diagonal(distances, np.inf)
    neighbours = np.argsort(distances, axis=1, kind='stable')[:, :k]

    correct = 0
    for i in range(nb_items):
        neighbour_labels = labels[neighbours[i]]
        votes = Counter(neighbour_labels.tolist())
        top = max(votes.values())
        # Neighbours are sorted by distance, the first tied label wins
        vote = next(label for label in neighbour_labels.tolist() if votes[label] == top)
        correct += vote == labels[i]
    return correct / nb_items


def silhouette(embeddings: ArrayLike, labels: Sequence) -> float:
    """
    :param embeddings: The embeddings (n, d).
    :param labels: The label of each embedding, at least 2 distinct labels.
    :return: The mean silhouette coefficient with Euclidean distance, in [-1, 1].
    """
    labels = np.asarray(labels)
    nb_labels = len(np.unique(labels))
    if nb_labels < 2:
        raise ValueError('The silhouette score needs at least 2 distinct labels')
    if nb_labels >= len(labels):
        raise ValueError('The silhouette score needs fewer labels than embeddings')
    return float(silhouette_score(_as_array(embeddings), labels, metric='euclidean'))


def network_metrics(network: Module, save_output: bool = True) -> Dict:
    """
    Extract useful information from the network.

    :param network: The network to analyse
    :param save_output: If true the metrics will be saved in the result file of the run
    :return: A dictionary of metrics with their values
    """
    total_params = sum(p.numel() for p in network.parameters())
    trainable_params = sum(p.numel() for p in network.parameters() if p.requires_grad)

    metrics = {
        'name': type(network).__name__,
        'total_params': total_params,
        'trainable_params': trainable_params,
        'non_trainable_params': total_params - trainable_params,
    }
    # Heads also know their criterion and optimizer
    if hasattr(network, 'get_loss_name'):
        metrics['loss_function'] = network.get_loss_name()
        metrics['optimizer_function'] = network.get_optimizer_name()
    logger.debug('Network info: ' + ', '.join(f'{name}: {value}' for name, value in metrics.items()))

    if save_output:
        save_results(**{f'network_{metrics["name"]}': metrics})

    return metrics


def _as_array(values: ArrayLike) -> np.ndarray:
    if isinstance(values, torch.Tensor):
        values = values.detach().cpu().numpy()
    return np.asarray(values, dtype=float)
