import logging
import math
from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import softmax

from dissim import PcaEmbedding, pca_project
from errors import NumericalError, ValidationError
from evidential import EvidentialPartition
from focalsets import FocalSetStructure
from ocsvm import OneClassSvm

log = logging.getLogger(__name__)

HIDDEN_UNITS_PER_FOCAL_SET = 1.5
INITIAL_BETA0 = 0.0
INITIAL_BETA1 = 1.0


def default_hidden_units(f: int) -> int:
    return int(math.ceil(HIDDEN_UNITS_PER_FOCAL_SET * f))


@dataclass
class NetworkParams:
    """
    Layer weights with the bias in column 0 (v_h0, w_q0).

    hidden[0] is V (n_H x (d+1)); further hidden layers are allowed.
    W is f x (n_H_last + 1). beta0, beta1 parametrise the gate.
    """
    hidden: List[np.ndarray]
    W: np.ndarray
    beta0: float = INITIAL_BETA0
    beta1: float = INITIAL_BETA1

    def __post_init__(self):
        if not self.hidden:
            raise ValidationError("At least one hidden layer is required")
        width = self.hidden[0].shape[1]
        for l, V in enumerate(self.hidden):
            if V.ndim != 2 or V.shape[1] != width:
                raise ValidationError(f"Hidden layer {l + 1} has inconsistent shape {V.shape}")
            width = V.shape[0] + 1
        if self.W.ndim != 2 or self.W.shape[1] != width:
            raise ValidationError(f"Output layer has shape {self.W.shape}; expected (f, {width})")

    @property
    def V(self) -> np.ndarray:
        return self.hidden[0]

    @property
    def d(self) -> int:
        return self.hidden[0].shape[1] - 1

    @property
    def f(self) -> int:
        return self.W.shape[0]

    @property
    def hidden_units(self) -> List[int]:
        return [V.shape[0] for V in self.hidden]

    def blocks(self) -> List[Tuple[str, np.ndarray]]:
        """Named weight blocks, in a fixed order."""
        named = [("V" if l == 0 else f"V{l + 1}", V) for l, V in enumerate(self.hidden)]
        named.append(("W", self.W))
        return named

    def to_vector(self) -> np.ndarray:
        parts = [V.ravel() for V in self.hidden] + [self.W.ravel(), np.array([self.beta0, self.beta1])]
        return np.concatenate(parts)

    def from_vector(self, vector: np.ndarray) -> "NetworkParams":
        """New params with the same shapes, filled from a flat vector."""
        offset = 0
        hidden = []
        for V in self.hidden:
            hidden.append(vector[offset:offset + V.size].reshape(V.shape).copy())
            offset += V.size
        W = vector[offset:offset + self.W.size].reshape(self.W.shape).copy()
        offset += self.W.size
        return NetworkParams(hidden, W, float(vector[offset]), float(vector[offset + 1]))

    def copy(self) -> "NetworkParams":
        return replace(self, hidden=[V.copy() for V in self.hidden], W=self.W.copy())

    def check_finite(self) -> None:
        for name, block in self.blocks():
            if not np.all(np.isfinite(block)):
                raise ValidationError(f"Parameter block {name} contains non-finite values")
        if not (math.isfinite(self.beta0) and math.isfinite(self.beta1)):
            raise ValidationError("Gate coefficients must be finite")


def init_params(
    d: int,
    hidden_units: Sequence[int],
    f: int,
    rng: np.random.Generator
) -> NetworkParams:
    """Uniform init in [-a, a] with a = sqrt(6 / (fan_in + fan_out)) per layer."""
    sizes = [d] + list(hidden_units) + [f]
    layers = []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        a = math.sqrt(6.0 / (fan_in + fan_out))
        layers.append(rng.uniform(-a, a, size=(fan_out, fan_in + 1)))
    return NetworkParams(hidden=layers[:-1], W=layers[-1])


@dataclass
class ForwardTrace:
    """Intermediate values of a forward pass over a batch of rows."""
    a: List[np.ndarray]
    z: List[np.ndarray]
    mu: np.ndarray
    m: np.ndarray
    gamma: np.ndarray
    m_star: np.ndarray
    t: Optional[np.ndarray] = None
    eta: Optional[np.ndarray] = None

    @property
    def gated(self) -> bool:
        return self.t is not None


def _require_finite(values: np.ndarray, layer: str) -> None:
    if not np.all(np.isfinite(values)):
        raise NumericalError(f"Non-finite values in {layer}", block=layer)


def forward(
    params: NetworkParams,
    X,
    fs: FocalSetStructure,
    svm_scores=None
) -> ForwardTrace:
    """
    Maps attribute rows to transformed mass vectors.

    Args:
        params: Network parameters.
        X: d-vector or n x d matrix.
        fs: Focal-set structure of the output layer.
        svm_scores: Optional one-class SVM decision values (scalar or n-vector);
            when absent the gate is off (gamma = 1).

    Returns:
        ForwardTrace with one row per input row.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != params.d:
        raise ValidationError(f"Input has shape {X.shape}; the network expects {params.d} attributes")
    if params.f != fs.f:
        raise ValidationError(f"Output layer has {params.f} units but there are {fs.f} focal sets")
    if not np.all(np.isfinite(X)):
        raise ValidationError("Input contains non-finite values")

    a_list: List[np.ndarray] = []
    z_list: List[np.ndarray] = []
    z = X
    for l, V in enumerate(params.hidden):
        a = z @ V[:, 1:].T + V[:, 0]
        _require_finite(a, f"hidden layer {l + 1}")
        z = np.maximum(a, 0.0)
        a_list.append(a)
        z_list.append(z)

    mu = z @ params.W[:, 1:].T + params.W[:, 0]
    _require_finite(mu, "output layer")
    m = softmax(mu, axis=1)

    n = X.shape[0]
    if svm_scores is None:
        return ForwardTrace(a=a_list, z=z_list, mu=mu, m=m, gamma=np.ones(n), m_star=m)

    if fs.empty_index is None:
        raise ValidationError("The outlier gate requires the empty set among the focal sets")
    scores = np.broadcast_to(np.asarray(svm_scores, dtype=np.float64), (n,))
    t = params.beta0 + params.beta1 * scores
    eta = np.logaddexp(0.0, t)
    gamma = eta / (1.0 + eta)
    _require_finite(gamma, "gate")
    m_star = gamma[:, None] * m
    m_star[:, fs.empty_index] += 1.0 - gamma
    return ForwardTrace(a=a_list, z=z_list, mu=mu, m=m, gamma=gamma, m_star=m_star, t=t, eta=eta)


# --- Trained model ---

@dataclass
class EvclusModel:
    """
    Everything needed to predict: focal sets, network, optional gate and,
    for relational data, the PCA embedding that turns dissimilarity rows
    into attributes.
    """
    fs: FocalSetStructure
    params: NetworkParams
    gamma_phi: float
    d0: float
    svm: Optional[OneClassSvm] = None
    pca: Optional[PcaEmbedding] = None
    mode: str = "attribute"
    metadata: dict = field(default_factory=dict)

    @property
    def d(self) -> int:
        return self.params.d

    @property
    def input_width(self) -> int:
        """Width of raw input rows: d, or n_train dissimilarities in relational mode."""
        return self.pca.n if self.pca is not None else self.d

    def attributes(self, raw) -> np.ndarray:
        """Raw input rows to network attributes (PCA projection in relational mode)."""
        raw = np.asarray(raw, dtype=np.float64)
        if raw.ndim == 1:
            raw = raw[None, :]
        if self.pca is None:
            return raw
        return pca_project(self.pca, raw)


def predict(model: EvclusModel, Xnew) -> EvidentialPartition:
    """Evidential partition of new objects given their attribute rows."""
    Xnew = np.asarray(Xnew, dtype=np.float64)
    if Xnew.ndim == 1:
        Xnew = Xnew[None, :]
    if Xnew.shape[0] == 0:
        return EvidentialPartition(model.fs, np.zeros((0, model.fs.f)))
    if Xnew.shape[1] != model.d:
        raise ValidationError(f"New data has {Xnew.shape[1]} columns; the model expects {model.d}")
    scores = model.svm.decision(Xnew) if model.svm is not None else None
    trace = forward(model.params, Xnew, model.fs, scores)
    return EvidentialPartition(model.fs, trace.m_star)
