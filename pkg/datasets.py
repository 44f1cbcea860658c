"""
Synthetic data for tests, demos and the gradient checker.

Every generator takes a seed and returns 1-based ground-truth labels.
"""
import logging
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np
from sklearn.datasets import load_iris, make_blobs, make_moons

from dissim import euclidean_distances, phi_transform, sample_pairs
from errors import ValidationError
from focalsets import Frame, build_focal_sets
from losses import ConstraintSet, LabelSet, LossConfig, Objective, TrainingData
from network import NetworkParams, init_params

log = logging.getLogger(__name__)

FOURCLASS_CENTRES = np.array([[0.0, 0.0], [0.0, 5.0], [5.0, 0.0], [5.0, 5.0]])
FOURCLASS_DF = 3


def fourclass(n: int = 400, seed: int = 0) -> Tuple[np.ndarray, np.ndarray]:
    """Four bivariate Student-t clusters (3 degrees of freedom, unit scale)."""
    rng = np.random.default_rng(seed)
    sizes = [len(part) for part in np.array_split(np.arange(n), len(FOURCLASS_CENTRES))]
    X = np.vstack([
        centre + rng.standard_t(FOURCLASS_DF, size=(size, 2))
        for centre, size in zip(FOURCLASS_CENTRES, sizes)
    ])
    labels = np.repeat(np.arange(1, len(FOURCLASS_CENTRES) + 1), sizes)
    return X, labels


def blobs(
    n: int = 40,
    centers: int = 2,
    cluster_std: float = 0.5,
    seed: int = 0,
    n_features: int = 2,
    center_box: Tuple[float, float] = (-10.0, 10.0)
) -> Tuple[np.ndarray, np.ndarray]:
    X, y = make_blobs(
        n_samples=n, centers=centers, n_features=n_features,
        cluster_std=cluster_std, center_box=center_box, random_state=seed
    )
    return X, y + 1


def two_moons(n: int = 200, noise: float = 0.1, seed: int = 0) -> Tuple[np.ndarray, np.ndarray]:
    X, y = make_moons(n_samples=n, noise=noise, random_state=seed)
    return X, y + 1


def iris() -> Tuple[np.ndarray, np.ndarray]:
    data = load_iris()
    return np.asarray(data.data, dtype=np.float64), data.target + 1


def relational_clusters(
    n: int = 400,
    clusters: int = 3,
    dim: int = 5,
    separation: float = 6.0,
    asymmetry: float = 0.05,
    seed: int = 0
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Dissimilarity matrix of Gaussian clusters in `dim` dimensions with
    slightly asymmetric multiplicative noise. Objects are shuffled.
    """
    rng = np.random.default_rng(seed)
    centres = rng.normal(scale=separation, size=(clusters, dim))
    labels = rng.integers(0, clusters, size=n)
    X = centres[labels] + rng.normal(size=(n, dim))
    D = euclidean_distances(X)
    noise = 1.0 + asymmetry * rng.uniform(-1.0, 1.0, size=D.shape)
    D = D * noise
    np.fill_diagonal(D, 0.0)
    return D, labels + 1


# --- Side information ---

def draw_constraints(labels, n_pairs: int, rng: np.random.Generator) -> ConstraintSet:
    """Random distinct object pairs, must-link when the true labels agree."""
    labels = np.asarray(labels).ravel()
    n = labels.size
    if n < 2 or n_pairs > n * (n - 1) // 2:
        raise ValidationError(f"Cannot draw {n_pairs} distinct pairs from {n} objects")
    chosen = set()
    while len(chosen) < n_pairs:
        i, j = rng.choice(n, size=2, replace=False)
        chosen.add((int(min(i, j)), int(max(i, j))))
    pairs = sorted(chosen)
    ml = [p for p in pairs if labels[p[0]] == labels[p[1]]]
    cl = [p for p in pairs if labels[p[0]] != labels[p[1]]]
    return ConstraintSet(must_link=ml, cannot_link=cl)


def labels_to_constraints(labels: LabelSet) -> ConstraintSet:
    """All pairwise constraints implied by a set of labeled objects."""
    ml, cl = [], []
    idx, cls = labels.indices, labels.classes
    for a in range(idx.size):
        for b in range(a + 1, idx.size):
            (ml if cls[a] == cls[b] else cl).append((int(idx[a]), int(idx[b])))
    return ConstraintSet(must_link=ml, cannot_link=cl)


def draw_labels(labels, n_labeled: int, rng: np.random.Generator) -> LabelSet:
    labels = np.asarray(labels).ravel()
    chosen = np.sort(rng.choice(labels.size, size=n_labeled, replace=False))
    return LabelSet(indices=chosen, classes=labels[chosen])


# --- Gradient-check instances ---

@dataclass
class GradCheckInstance:
    objective: Objective
    params: NetworkParams


def gradcheck_instance(
    n: int = 6,
    d: int = 2,
    hidden_units: Sequence[int] = (3,),
    clusters: int = 2,
    scheme: str = "singletons_plus",
    gate: bool = True,
    constraints: bool = False,
    labels: bool = False,
    lam: float = 0.0,
    xi: float = 0.5,
    nu: float = 0.3,
    p: Optional[int] = None,
    seed: int = 0
) -> GradCheckInstance:
    """Small random problem with random weights, for finite-difference checks."""
    rng = np.random.default_rng(seed)
    fs = build_focal_sets(Frame(clusters), scheme)
    X = rng.normal(size=(n, d))
    truth = rng.integers(1, clusters + 1, size=n)

    neighbors = sample_pairs(n, p, seed) if p is not None else None
    view = phi_transform(euclidean_distances(X), 0.9, neighbors=neighbors)

    constraint_set = draw_constraints(truth, min(4, n * (n - 1) // 2), rng) if constraints else None
    label_set = draw_labels(truth, max(1, n // 3), rng) if labels else None
    scores = rng.normal(size=n) if gate else None

    data = TrainingData(X=X, fs=fs, svm_scores=scores, constraints=constraint_set, labels=label_set)
    cfg = LossConfig(
        lam=lam, xi=xi if constraints else 0.0, nu=nu if labels else 0.0,
        mode="sampled" if p is not None else "dense", p=p
    )
    params = init_params(d, list(hidden_units), fs.f, rng)
    if gate:
        params.beta0, params.beta1 = rng.normal(scale=0.5), 1.0 + rng.uniform()
    objective = Objective(data, view.rows, view.cols, view.delta_star, cfg)
    return GradCheckInstance(objective=objective, params=params)
