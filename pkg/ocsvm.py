"""
One-class support vector machine with a Gaussian kernel.

The dual problem

    min_alpha 0.5 * alpha' K alpha
    subject to 0 <= alpha_i <= 1 / (nu * n),  sum_i alpha_i = 1

is solved by sequential minimal optimisation: each step moves mass between
a violating pair (i drawn at random under the seed among the indices that
violate the KKT conditions by at least `tol`, j chosen with second-order
information) until the maximal violation drops below `tol`.

Kernel convention: K(x, y) = exp(-sigma * ||x - y||^2), sigma being an
inverse width.
"""
import logging
import math
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np
from scipy.spatial.distance import cdist, pdist

from errors import ConvergenceError, ValidationError

log = logging.getLogger(__name__)

DEFAULT_NU = 0.2
KKT_TOLERANCE = 1e-4
MAX_ITERATIONS = 200_000
TAU = 1e-12


def gaussian_kernel(A: np.ndarray, B: np.ndarray, sigma: float) -> np.ndarray:
    return np.exp(-sigma * cdist(A, B, metric="sqeuclidean"))


def median_sigma(X: np.ndarray) -> float:
    """sigma = 1 / median squared pairwise distance."""
    sq = pdist(X, metric="sqeuclidean")
    med = float(np.median(sq)) if sq.size else 0.0
    if med <= 0.0:
        log.warning("Median squared distance is zero; falling back to sigma = 1")
        return 1.0
    return 1.0 / med


@dataclass
class OneClassSvm:
    """Fitted model: f(x) = sum_i alpha_i K(x, x_i) - offset."""
    support_vectors: np.ndarray
    alphas: np.ndarray
    offset: float
    sigma: float
    nu: float
    dual_objective: float = float("nan")
    iterations: int = 0

    @property
    def alpha0(self) -> float:
        """Constant term of f(x) = alpha0 + sum_i alpha_i K(x, x_i)."""
        return -self.offset

    def decision(self, X) -> Union[float, np.ndarray]:
        X = np.asarray(X, dtype=np.float64)
        single = X.ndim == 1
        X2 = X[None, :] if single else X
        if X2.shape[1] != self.support_vectors.shape[1]:
            raise ValidationError(
                f"Input has {X2.shape[1]} attributes; the SVM was fitted on {self.support_vectors.shape[1]}"
            )
        values = gaussian_kernel(X2, self.support_vectors, self.sigma) @ self.alphas - self.offset
        return float(values[0]) if single else values


def decision(svm: OneClassSvm, x) -> Union[float, np.ndarray]:
    return svm.decision(x)


def _offset(alpha: np.ndarray, G: np.ndarray, C: float) -> float:
    free = (alpha > 0.0) & (alpha < C)
    if np.any(free):
        return float(G[free].mean())
    at_upper = alpha >= C
    at_lower = alpha <= 0.0
    lb = float(G[at_upper].max()) if np.any(at_upper) else -np.inf
    ub = float(G[at_lower].min()) if np.any(at_lower) else np.inf
    if not np.isfinite(lb):
        return ub
    if not np.isfinite(ub):
        return lb
    return 0.5 * (lb + ub)


def fit_one_class_svm(
    X,
    nu: float = DEFAULT_NU,
    sigma: Optional[float] = None,
    seed: int = 0,
    tol: float = KKT_TOLERANCE,
    max_iter: int = MAX_ITERATIONS
) -> OneClassSvm:
    """
    Fits the nu-one-class SVM.

    Args:
        X: n x d training matrix.
        nu: Upper bound on the fraction of training outliers, in (0, 1).
        sigma: Inverse kernel width; median heuristic when None.
        seed: Seed of the initial feasible point and of the working-set draws.
        tol: KKT violation at which the solver stops.
        max_iter: Iteration cap; exceeding it raises ConvergenceError.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 2:
        raise ValidationError(f"One-class SVM needs an n x d matrix with n >= 2, got {X.shape}")
    if not np.all(np.isfinite(X)):
        raise ValidationError("One-class SVM input contains non-finite values")
    if not 0.0 < nu < 1.0:
        raise ValidationError(f"nu must lie in (0, 1), got {nu}")
    if sigma is None:
        sigma = median_sigma(X)
    if sigma <= 0.0:
        raise ValidationError(f"sigma must be positive, got {sigma}")

    n = X.shape[0]
    K = gaussian_kernel(X, X, sigma)
    diag = np.diag(K).copy()
    C = 1.0 / (nu * n)

    rng = np.random.default_rng(seed)
    order = rng.permutation(n)
    alpha = np.zeros(n)
    n_full = min(int(math.floor(nu * n)), n - 1)
    alpha[order[:n_full]] = C
    alpha[order[n_full]] = 1.0 - n_full * C

    G = K @ alpha
    violation = np.inf
    iteration = 0
    for iteration in range(1, max_iter + 1):
        minus_g = -G
        up = alpha < C
        low = alpha > 0.0
        g_max = float(np.max(np.where(up, minus_g, -np.inf)))
        g_min = float(np.min(np.where(low, minus_g, np.inf)))
        violation = g_max - g_min
        if violation < tol:
            break

        # the maximal violator is always a candidate
        i = int(rng.choice(np.flatnonzero(up & (minus_g - g_min >= tol))))
        b = minus_g[i] + G
        a = diag[i] + diag - 2.0 * K[i]
        a = np.where(a > 0.0, a, TAU)
        gain = np.where(low & (b > 0.0), -(b * b) / a, np.inf)
        j = int(np.argmin(gain))

        a_ij = max(diag[i] + diag[j] - 2.0 * K[i, j], TAU)
        old_i, old_j = alpha[i], alpha[j]
        total = old_i + old_j
        new_i = min(max(old_i + (G[j] - G[i]) / a_ij, 0.0), C)
        new_j = min(max(total - new_i, 0.0), C)
        new_i = total - new_j
        alpha[i], alpha[j] = new_i, new_j

        G += K[:, i] * (new_i - old_i) + K[:, j] * (new_j - old_j)
    else:
        raise ConvergenceError(f"One-class SVM did not converge in {max_iter} iterations", violation)

    offset = _offset(alpha, G, C)
    support = alpha > 0.0
    svm = OneClassSvm(
        support_vectors=X[support].copy(),
        alphas=alpha[support].copy(),
        offset=offset,
        sigma=float(sigma),
        nu=float(nu),
        dual_objective=float(0.5 * alpha @ G),
        iterations=iteration,
    )
    log.info(
        f"One-class SVM: {int(support.sum())} support vectors, offset={offset:.6g}, "
        f"{iteration} iterations, KKT violation {violation:.2e}"
    )
    return svm
