"""
Clustering of group embeddings and tag-set similarity between clusters.
"""
from itertools import combinations
from typing import Optional, Sequence, Set

import numpy as np
from sklearn.cluster import kmeans_plusplus
from sklearn.metrics import pairwise_distances

from classes.data_structures import JaccardSummary, KMeansResult
from utils.logger import logger


def kmeans(embeddings: np.ndarray, k: int, seed: int, max_iterations: int = 300) -> KMeansResult:
    """
    Lloyd iterations from a seeded k-means++ initialization, until the assignments stop changing.
    An empty cluster keeps its previous centroid.

    :param embeddings: The points (n, d).
    :param k: The number of clusters, <= n.
    :param seed: The seed of the initialization.
    :param max_iterations: The maximum number of assignment steps.
    :return: The assignments, the centroids and the inertia after each assignment step (non-increasing).
    """
    embeddings = np.asarray(embeddings, dtype=float)
    nb_points = len(embeddings)
    if not 1 <= k <= nb_points:
        raise ValueError(f'The number of clusters should be in [1, {nb_points}] (got {k})')

    centroids, _ = kmeans_plusplus(embeddings, n_clusters=k, random_state=seed)
    assignments: Optional[np.ndarray] = None
    inertia_history = []

    for iteration in range(1, max_iterations + 1):
        squared = pairwise_distances(embeddings, centroids, metric='sqeuclidean')
        new_assignments = np.argmin(squared, axis=1)
        inertia_history.append(float(squared[np.arange(nb_points), new_assignments].sum()))

        if assignments is not None and np.array_equal(assignments, new_assignments):
            break
        assignments = new_assignments

        for cluster in range(k):
            members = embeddings[assignments == cluster]
            if len(members) > 0:
                centroids[cluster] = members.mean(axis=0)
    else:
        logger.warning(f'k-means stopped after {max_iterations} iterations without convergence')

    logger.debug(f'k-means with k={k} on {nb_points} points: inertia {inertia_history[-1]:.6g} after '
                 f'{len(inertia_history)} iteration(s)')
    return KMeansResult(new_assignments, centroids, inertia_history, len(inertia_history))


def jaccard(first: Set[str], second: Set[str]) -> float:
    """ |A ∩ B| / |A ∪ B|, undefined when both sets are empty. """
    union = first | second
    if not union:
        raise ValueError('The Jaccard similarity of two empty sets is undefined')
    return len(first & second) / len(union)


def jaccard_matrix(tag_sets: Sequence[Optional[Set[str]]], assignments: Sequence[int]) -> JaccardSummary:
    """
    Pairwise Jaccard similarity of the tag sets, summarized within clusters and across clusters.
    Pairs of two empty sets are skipped (NaN in the matrix), self-pairs are excluded from the summaries.

    :param tag_sets: The tags of each group (None is an empty set).
    :param assignments: The cluster of each group.
    :return: The symmetric similarity matrix and the intra / inter cluster mean and standard deviation.
    """
    if len(tag_sets) != len(assignments):
        raise ValueError('One cluster assignment per tag set is required')
    tag_sets = [set(tags or ()) for tags in tag_sets]
    nb_groups = len(tag_sets)

    matrix = np.full((nb_groups, nb_groups), np.nan)
    intra, inter = [], []
    nb_skipped = 0
    for i, j in combinations(range(nb_groups), 2):
        if not tag_sets[i] and not tag_sets[j]:
            nb_skipped += 1
            continue
        matrix[i, j] = matrix[j, i] = jaccard(tag_sets[i], tag_sets[j])
        (intra if assignments[i] == assignments[j] else inter).append(matrix[i, j])
    for i in range(nb_groups):
        if tag_sets[i]:
            matrix[i, i] = 1.0

    if nb_skipped > 0:
        logger.warning(f'{nb_skipped} pair(s) of groups without tags skipped in the Jaccard similarity')

    return JaccardSummary(matrix=matrix,
                          intra_mean=float(np.mean(intra)) if intra else float('nan'),
                          intra_std=float(np.std(intra)) if intra else float('nan'),
                          inter_mean=float(np.mean(inter)) if inter else float('nan'),
                          inter_std=float(np.std(inter)) if inter else float('nan'),
                          nb_intra=len(intra), nb_inter=len(inter), nb_skipped=nb_skipped)
