import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.linalg import eigh
from scipy.spatial.distance import pdist, squareform

from errors import ValidationError

log = logging.getLogger(__name__)

# phi(delta_0) = 1 - PHI_LEVEL
PHI_LEVEL = 0.05
ORTHONORMAL_TOLERANCE = 1e-8
# eigenvalues below RANK_TOLERANCE * largest are treated as zero
RANK_TOLERANCE = 1e-10

Seed = Union[int, Sequence[int], None]


# --- Raw dissimilarities ---

def euclidean_distances(X) -> np.ndarray:
    """n x n matrix of Euclidean distances between the rows of X."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 2 or X.shape[1] < 1:
        raise ValidationError(f"Attribute matrix must be n x d with n >= 2, d >= 1; got {X.shape}")
    if not np.all(np.isfinite(X)):
        raise ValidationError("Attribute matrix contains non-finite values")
    return squareform(pdist(X, metric="euclidean"))


def symmetrize(D) -> np.ndarray:
    """(D + D') / 2."""
    D = np.asarray(D, dtype=np.float64)
    if D.ndim != 2 or D.shape[0] != D.shape[1]:
        raise ValidationError(f"Dissimilarity matrix must be square, got shape {D.shape}")
    return (D + D.T) / 2.0


def check_square(D) -> np.ndarray:
    D = np.asarray(D, dtype=np.float64)
    if D.ndim != 2 or D.shape[0] != D.shape[1]:
        raise ValidationError(f"Dissimilarity matrix must be square, got shape {D.shape}")
    if D.shape[0] < 2:
        raise ValidationError("At least two objects are required")
    if not np.all(np.isfinite(D)):
        raise ValidationError("Dissimilarity matrix contains non-finite values")
    if np.any(D < 0):
        raise ValidationError("Dissimilarities must be nonnegative")
    if np.any(np.diag(D) != 0):
        raise ValidationError("Self-dissimilarities on the diagonal must be zero")
    return D


# --- phi transform ---

def phi(delta, gamma: float) -> np.ndarray:
    """1 - exp(-gamma * delta^2)."""
    delta = np.asarray(delta, dtype=np.float64)
    return -np.expm1(-gamma * delta ** 2)


def calibrate_gamma(values: np.ndarray, d0quantile: float) -> Tuple[float, float]:
    """
    Returns (delta_0, gamma) with delta_0 the d0quantile-quantile of the
    values (linear interpolation) and gamma = -log(0.05) / delta_0^2.
    """
    if not 0.0 < d0quantile <= 1.0:
        raise ValidationError(f"d0quantile must lie in (0, 1], got {d0quantile}")
    d0 = float(np.quantile(values, d0quantile, method="linear"))
    if d0 <= 0.0:
        raise ValidationError(
            f"delta_0 is {d0} at quantile {d0quantile}: dissimilarities are degenerate"
        )
    gamma = -math.log(PHI_LEVEL) / d0 ** 2
    return d0, gamma


@dataclass
class DissimilarityView:
    """
    Transformed dissimilarities over the retained pairs.

    In dense mode the retained pairs are all i < j; in sampled mode they are
    (i, j) for j in neighbors[i]. `matrix` holds the full transformed matrix
    when the view was built from a square matrix (minibatch training looks
    pairs up in it).
    """
    n: int
    mode: str
    gamma: float
    d0: float
    rows: np.ndarray
    cols: np.ndarray
    delta_star: np.ndarray
    neighbors: Optional[np.ndarray] = None
    matrix: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def n_pairs(self) -> int:
        return int(self.rows.shape[0])

    @property
    def p(self) -> Optional[int]:
        return None if self.neighbors is None else int(self.neighbors.shape[1])

    def lookup(self, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
        if self.matrix is None:
            raise ValidationError("This view does not keep the full transformed matrix")
        return self.matrix[rows, cols]


def phi_transform(
    D,
    d0quantile: float = 0.9,
    neighbors: Optional[np.ndarray] = None,
    keep_matrix: bool = True,
    calibration: Optional[Tuple[float, float]] = None
) -> DissimilarityView:
    """
    Applies the phi transform to a square dissimilarity matrix.

    delta_0 is calibrated on the off-diagonal pairs i < j so that
    phi(delta_0) = 0.95.

    Args:
        D: n x n nonnegative dissimilarity matrix.
        d0quantile: Quantile level of delta_0; 1.0 selects the maximum.
        neighbors: Optional n x p array of sampled indices J(i); when given
            the view is in sampled mode and retains only those pairs.
        keep_matrix: Keep the full n x n transformed matrix in the view.
        calibration: Fixed (delta_0, gamma), e.g. from a trained model;
            skips the quantile calibration.

    Returns:
        The DissimilarityView; its `gamma` and `d0` fields record the calibration.
    """
    D = check_square(D)
    n = D.shape[0]
    iu, ju = np.triu_indices(n, k=1)
    if calibration is None:
        d0, gamma = calibrate_gamma(D[iu, ju], d0quantile)
    else:
        d0, gamma = calibration
    log.info(f"phi calibration: delta_0={d0:.6g} (quantile {d0quantile}), gamma={gamma:.6g}")

    full = phi(D, gamma) if keep_matrix else None

    if neighbors is None:
        rows, cols = iu, ju
        mode = "dense"
    else:
        neighbors = np.asarray(neighbors, dtype=np.int64)
        if neighbors.ndim != 2 or neighbors.shape[0] != n:
            raise ValidationError(f"neighbors must be an n x p array, got {neighbors.shape}")
        rows = np.repeat(np.arange(n), neighbors.shape[1])
        cols = neighbors.ravel()
        mode = "sampled"

    delta_star = full[rows, cols] if full is not None else phi(D[rows, cols], gamma)
    return DissimilarityView(
        n=n, mode=mode, gamma=gamma, d0=d0,
        rows=rows, cols=cols, delta_star=delta_star,
        neighbors=neighbors, matrix=full
    )


# --- Pair supply ---

def sample_pairs(n: int, p: int, seed: Seed = 0) -> np.ndarray:
    """
    Draws J(i) for every object: p indices sampled uniformly without
    replacement from the other n - 1 objects.

    Returns:
        n x p integer array; row i is J(i).
    """
    if n < 2 or not 1 <= p <= n - 1:
        raise ValidationError(f"p must satisfy 1 <= p <= n - 1 (n={n}, p={p})")
    rng = np.random.default_rng(seed)
    J = np.empty((n, p), dtype=np.int64)
    for i in range(n):
        draw = rng.choice(n - 1, size=p, replace=False)
        J[i] = draw + (draw >= i)
    return J


def minibatch_blocks(n: int, s: int, seed: Seed = 0) -> List[Tuple[np.ndarray, np.ndarray]]:
    """
    Randomly permutes the objects, splits them in s groups whose sizes
    differ by at most one, and returns all within-group pairs of each group.

    s = 1 is accepted and yields a single block with every pair.

    Returns:
        List of s (rows, cols) index arrays.
    """
    if s < 1 or s > n // 2:
        raise ValidationError(f"Block count must satisfy 1 <= s <= n/2 (n={n}, s={s})")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    blocks = []
    for group in np.array_split(perm, s):
        a, b = np.triu_indices(len(group), k=1)
        blocks.append((group[a], group[b]))
    return blocks


# --- PCA embedding of relational data ---

@dataclass
class PcaEmbedding:
    """Mean dissimilarity row and orthonormal loadings (n x p)."""
    mean_row: np.ndarray
    projection: np.ndarray
    eigenvalues: np.ndarray

    @property
    def p(self) -> int:
        return int(self.projection.shape[1])

    @property
    def n(self) -> int:
        return int(self.mean_row.shape[0])


def pca_embed(D, p: int) -> Tuple[PcaEmbedding, np.ndarray]:
    """
    Treats each row of D as an attribute vector and projects the centered
    rows on their first p principal components (covariance PCA).

    The sign of each component makes its largest-magnitude loading positive.
    If fewer than p components have nonzero variance, only those are kept.

    Returns:
        (embedding, n x p_effective score matrix).
    """
    D = np.asarray(D, dtype=np.float64)
    if D.ndim != 2 or D.shape[0] != D.shape[1]:
        raise ValidationError(f"Dissimilarity matrix must be square, got shape {D.shape}")
    n = D.shape[0]
    if not 1 <= p <= n:
        raise ValidationError(f"PCA dimension must satisfy 1 <= p <= n (n={n}, p={p})")
    if not np.allclose(D, D.T):
        raise ValidationError("PCA embedding requires a symmetric dissimilarity matrix; symmetrize it first")

    mean_row = D.mean(axis=0)
    centered = D - mean_row
    cov = centered.T @ centered / max(n - 1, 1)
    values, vectors = eigh(cov, subset_by_index=[n - p, n - 1])
    order = np.argsort(values)[::-1]
    values, vectors = values[order], vectors[:, order]

    top = values[0] if values.size else 0.0
    keep = values > RANK_TOLERANCE * max(top, 0.0)
    if top <= 0.0:
        keep[:] = False
    if not np.all(keep):
        log.warning(f"Requested {p} components but only {int(keep.sum())} have nonzero variance")
    values, vectors = values[keep], vectors[:, keep]

    pivots = np.argmax(np.abs(vectors), axis=0)
    signs = np.sign(vectors[pivots, np.arange(vectors.shape[1])])
    signs[signs == 0] = 1.0
    vectors = vectors * signs

    emb = PcaEmbedding(mean_row=mean_row, projection=vectors, eigenvalues=values)
    scores = centered @ vectors
    log.info(f"PCA embedding: n={n}, p={emb.p}")
    return emb, scores


def pca_project(emb: PcaEmbedding, delta_new) -> np.ndarray:
    """Scores of new objects from their dissimilarities to the training objects."""
    delta_new = np.asarray(delta_new, dtype=np.float64)
    if delta_new.shape[-1] != emb.n:
        raise ValidationError(
            f"Dissimilarity vector has length {delta_new.shape[-1]}; expected {emb.n}"
        )
    return (delta_new - emb.mean_row) @ emb.projection
