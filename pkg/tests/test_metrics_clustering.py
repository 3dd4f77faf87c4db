import math

import numpy as np
import pytest
import torch
import yaml
from hypothesis import given, settings as hypothesis_settings, strategies as st
from scipy.stats import ortho_group

from models.heads import ClassifierHead
from utils import output
from utils.clustering import jaccard, jaccard_matrix, kmeans
from utils.metrics import (ape, classification_metrics, confusion_matrix, knn_accuracy, macro_f1, network_metrics,
                           pair_retrieval, silhouette)
from utils.settings import settings


def test_classification_metrics():
    metrics = classification_metrics(np.array([[9, 1], [4, 36]]))

    assert metrics.nb == 50
    assert metrics.accuracy == pytest.approx(0.9)
    assert metrics.precision == pytest.approx(0.8326403326403327)
    assert metrics.recall == pytest.approx(0.9)
    assert metrics.f1 == pytest.approx(0.8588368153585544)
    assert [c.f1 for c in metrics] == pytest.approx([0.7826086956521738, 0.935064935064935])


def test_confusion_matrix_and_macro_f1():
    labels, predictions = [0, 0, 1, 2, 2], [0, 1, 1, 2, 0]
    assert confusion_matrix(labels, predictions, 3).tolist() == [[1, 1, 0], [0, 1, 0], [1, 0, 1]]
    assert macro_f1([0, 1, 1, 0], [0, 1, 1, 0], 2) == 1.0


def test_ape():
    assert ape([110.0], [100.0]).tolist() == pytest.approx([0.10])
    assert ape([0.0, 30.0], [10.0, 20.0]).tolist() == pytest.approx([1.0, 0.5])
    with pytest.raises(ValueError):
        ape([1.0], [0.0])


def test_pair_retrieval_of_duplicates():
    rng = np.random.default_rng(0)
    halves = rng.normal(size=(6, 4))
    assert pair_retrieval(halves, halves) == 1.0


def test_pair_retrieval_is_rotation_invariant():
    rng = np.random.default_rng(1)
    first, second = rng.normal(size=(8, 5)), rng.normal(size=(8, 5))
    rotation = ortho_group.rvs(5, random_state=2)
    assert pair_retrieval(first @ rotation, second @ rotation) == pair_retrieval(first, second)


def test_pair_retrieval_accepts_tensors():
    halves = torch.eye(3)
    assert pair_retrieval(halves, halves * 2) == 1.0


@pytest.mark.parametrize(
    "name,first,second",
    [
        ["shape mismatch", np.zeros((3, 2)), np.zeros((2, 2))],
        ["single group", np.ones((1, 2)), np.ones((1, 2))],
    ],
)
def test_pair_retrieval_invalid(name, first, second):
    with pytest.raises(ValueError):
        pair_retrieval(first, second)


def test_knn_accuracy():
    embeddings = [[0.0, 0.0], [0.1, 0.0], [0.0, 0.1], [5.0, 5.0], [5.1, 5.0], [5.0, 5.1]]
    labels = ['a', 'a', 'a', 'b', 'b', 'b']
    assert knn_accuracy(embeddings, labels, k=2) == 1.0
    assert knn_accuracy(embeddings, ['a', 'b', 'a', 'b', 'a', 'b'], k=1) < 1.0


def test_knn_tie_goes_to_the_nearest():
    embeddings = [[0.0], [1.0], [3.0], [10.0]]
    # Points 0 and 1 have one neighbour of each label, the nearest one wins
    assert knn_accuracy(embeddings, ['a', 'a', 'b', 'c'], k=2) == 0.5


@pytest.mark.parametrize("k", [0, 4])
def test_knn_invalid_k(k):
    with pytest.raises(ValueError):
        knn_accuracy(np.zeros((4, 2)), [0, 0, 1, 1], k)


def test_silhouette():
    embeddings = [[0.0, 0.0], [0.0, 0.1], [9.0, 9.0], [9.0, 9.1]]
    assert silhouette(embeddings, [0, 0, 1, 1]) > 0.9
    with pytest.raises(ValueError):
        silhouette(embeddings, [0, 0, 0, 0])
    with pytest.raises(ValueError):
        silhouette(embeddings, [0, 1, 2, 3])


def test_network_metrics():
    network = torch.nn.Linear(3, 2)
    network.bias.requires_grad_(False)
    metrics = network_metrics(network)
    assert (metrics['total_params'], metrics['trainable_params'], metrics['non_trainable_params']) == (8, 6, 2)
    assert 'loss_function' not in metrics


def test_head_network_metrics(tmp_path, monkeypatch):
    monkeypatch.setattr(output, 'OUT_DIR', str(tmp_path))
    settings.update(run_name='heads', logger_file_enable=False)
    output.init_out_directory()

    head = ClassifierHead(4, 3)
    head.configure_optimizer(1e-2)
    metrics = network_metrics(head)
    assert metrics['loss_function'] == 'CrossEntropyLoss'
    assert metrics['optimizer_function'] == 'Adam'
    assert metrics['total_params'] == 4 * 3 + 3

    results = yaml.safe_load((tmp_path / 'heads' / 'results.yaml').read_text())
    assert results['network_ClassifierHead']['loss_function'] == 'CrossEntropyLoss'


def test_kmeans_with_one_cluster_per_point():
    points = np.arange(12, dtype=float).reshape(6, 2) ** 2
    result = kmeans(points, k=6, seed=0)
    assert result.inertia == 0.0
    assert sorted(result.assignments.tolist()) == list(range(6))


def test_kmeans_finds_separated_blobs():
    rng = np.random.default_rng(3)
    points = np.concatenate([rng.normal(0, 0.1, (10, 2)), rng.normal(5, 0.1, (10, 2))])
    result = kmeans(points, k=2, seed=1)
    assert len(set(result.assignments[:10])) == 1
    assert len(set(result.assignments[10:])) == 1
    assert result.assignments[0] != result.assignments[-1]


@hypothesis_settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000), k=st.integers(1, 5))
def test_kmeans_inertia_never_increases(seed, k):
    points = np.random.default_rng(seed).normal(size=(20, 3))
    history = kmeans(points, k, seed).inertia_history
    assert all(b <= a + 1e-9 for a, b in zip(history, history[1:]))


def test_kmeans_is_deterministic():
    points = np.random.default_rng(4).normal(size=(30, 2))
    assert np.array_equal(kmeans(points, 3, seed=7).assignments, kmeans(points, 3, seed=7).assignments)


@pytest.mark.parametrize("k", [0, 4])
def test_kmeans_invalid_k(k):
    with pytest.raises(ValueError):
        kmeans(np.zeros((3, 2)), k, seed=0)


def test_jaccard():
    assert jaccard({'a', 'b'}, {'b', 'c'}) == pytest.approx(1 / 3)
    assert jaccard({'a'}, set()) == 0.0
    with pytest.raises(ValueError):
        jaccard(set(), set())


def test_jaccard_matrix():
    summary = jaccard_matrix([{'a', 'b'}, {'b', 'c'}, None, set()], [0, 0, 1, 1])

    assert np.allclose(summary.matrix, summary.matrix.T, equal_nan=True)
    assert summary.matrix[0, 0] == 1.0
    assert math.isnan(summary.matrix[2, 3])
    assert math.isnan(summary.matrix[2, 2])
    assert summary.nb_skipped == 1
    assert (summary.nb_intra, summary.nb_inter) == (1, 4)
    assert summary.intra_mean == pytest.approx(1 / 3)
    assert summary.inter_mean == 0.0
