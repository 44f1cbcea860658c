"""
Losses, side-information penalties and their analytic gradients.

The composite objective evaluated by `Objective` is

    total = (1 - nu) * (L + xi / (2 (|ML| + |CL|)) * (P_ML + P_CL))
            + nu * P_s
            + lambda / 2 * sum_blocks ||B||^2 / size(B)

where L is the mean of (kappa_ij - delta*_ij)^2 over the supplied pairs,
P_ML / P_CL are the must-link / cannot-link penalties written with the Q
matrix, and P_s is the label penalty on contour functions. nu is taken as
zero when no labels are given. Gradients are propagated from dtotal/dm*
through the gate (dm*/dm = gamma), the softmax and the ReLU layers.
"""
import logging
from dataclasses import dataclass, field, fields
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import expit

from errors import NumericalError, ValidationError
from focalsets import FocalSetStructure
from network import ForwardTrace, NetworkParams, forward

log = logging.getLogger(__name__)

PAIR_MODES = ("dense", "sampled", "minibatch")
FD_STEP = 1e-6
GRAD_TOLERANCE = 1e-5
# absolute floor of the relative-error denominator in gradient checks
GRAD_FLOOR = 1e-4


# --- Configuration and side information ---

@dataclass
class LossConfig:
    """Penalty weights and the active pair-supply mode."""
    lam: float = 0.0
    xi: float = 0.0
    nu: float = 0.0
    mode: str = "dense"
    p: Optional[int] = None
    s: Optional[int] = None

    def __post_init__(self):
        if self.lam < 0 or self.xi < 0:
            raise ValidationError(f"lambda and xi must be nonnegative (lambda={self.lam}, xi={self.xi})")
        if not 0.0 <= self.nu <= 1.0:
            raise ValidationError(f"nu must lie in [0, 1], got {self.nu}")
        if self.mode not in PAIR_MODES:
            raise ValidationError(f"Unknown pair mode {self.mode!r}; expected one of {PAIR_MODES}")
        if self.mode == "sampled" and self.p is None:
            raise ValidationError("Sampled mode requires p")
        if self.mode == "minibatch" and self.s is None:
            raise ValidationError("Minibatch mode requires s")
        if (self.mode != "sampled" and self.p is not None) or (self.mode != "minibatch" and self.s is not None):
            raise ValidationError("Exactly one pair-supply mode may be configured")


def _pairs_array(pairs) -> np.ndarray:
    arr = np.asarray(list(pairs) if not isinstance(pairs, np.ndarray) else pairs, dtype=np.int64)
    if arr.size == 0:
        return np.zeros((0, 2), dtype=np.int64)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ValidationError(f"Constraint pairs must be a k x 2 array, got shape {arr.shape}")
    return arr


@dataclass(frozen=True)
class ConstraintSet:
    """Must-link and cannot-link pairs, 0-based object indices."""
    must_link: np.ndarray = field(default_factory=lambda: np.zeros((0, 2), dtype=np.int64))
    cannot_link: np.ndarray = field(default_factory=lambda: np.zeros((0, 2), dtype=np.int64))

    def __post_init__(self):
        object.__setattr__(self, "must_link", _pairs_array(self.must_link))
        object.__setattr__(self, "cannot_link", _pairs_array(self.cannot_link))
        for name, arr in (("must-link", self.must_link), ("cannot-link", self.cannot_link)):
            if np.any(arr[:, 0] == arr[:, 1]):
                raise ValidationError(f"A {name} constraint links an object to itself")
        ml = {tuple(sorted(p)) for p in self.must_link.tolist()}
        cl = {tuple(sorted(p)) for p in self.cannot_link.tolist()}
        both = ml & cl
        if both:
            raise ValidationError(f"Pairs are both must-link and cannot-link: {sorted(both)[:5]}")

    @property
    def size(self) -> int:
        return int(self.must_link.shape[0] + self.cannot_link.shape[0])

    def validate(self, n: int) -> None:
        for arr in (self.must_link, self.cannot_link):
            if arr.size and (arr.min() < 0 or arr.max() >= n):
                raise ValidationError(f"Constraint references an object outside 0..{n - 1}")

    def objects(self) -> np.ndarray:
        return np.concatenate([self.must_link.ravel(), self.cannot_link.ravel()])


@dataclass(frozen=True)
class LabelSet:
    """Labeled objects: 0-based indices and 1-based class labels."""
    indices: np.ndarray
    classes: np.ndarray

    def __post_init__(self):
        indices = np.asarray(self.indices, dtype=np.int64).ravel()
        classes = np.asarray(self.classes, dtype=np.int64).ravel()
        if indices.shape != classes.shape:
            raise ValidationError("Label indices and classes must have the same length")
        if np.unique(indices).size != indices.size:
            raise ValidationError("Labeled object indices must be unique")
        object.__setattr__(self, "indices", indices)
        object.__setattr__(self, "classes", classes)

    @property
    def size(self) -> int:
        return int(self.indices.size)

    def validate(self, n: int, c: int) -> None:
        if self.size and (self.indices.min() < 0 or self.indices.max() >= n):
            raise ValidationError(f"Labeled object outside 0..{n - 1}")
        if self.size and (self.classes.min() < 1 or self.classes.max() > c):
            raise ValidationError(f"Label class outside 1..{c}")


@dataclass
class TrainingData:
    """Attributes, optional gate scores and side information for n objects."""
    X: np.ndarray
    fs: FocalSetStructure
    svm_scores: Optional[np.ndarray] = None
    constraints: Optional[ConstraintSet] = None
    labels: Optional[LabelSet] = None

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        if self.X.ndim != 2:
            raise ValidationError(f"Attributes must be an n x d matrix, got shape {self.X.shape}")
        if self.svm_scores is not None:
            self.svm_scores = np.asarray(self.svm_scores, dtype=np.float64).ravel()
            if self.svm_scores.shape[0] != self.n:
                raise ValidationError("One SVM score per object is required")
        if self.constraints is not None:
            self.constraints.validate(self.n)
        if self.labels is not None:
            self.labels.validate(self.n, self.fs.c)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]


# --- Results ---

@dataclass
class GradientBundle:
    """Gradient blocks matching NetworkParams."""
    hidden: List[np.ndarray]
    W: np.ndarray
    beta0: float = 0.0
    beta1: float = 0.0

    @property
    def dV(self) -> np.ndarray:
        return self.hidden[0]

    @property
    def dW(self) -> np.ndarray:
        return self.W

    def blocks(self) -> List[Tuple[str, np.ndarray]]:
        named = [("V" if l == 0 else f"V{l + 1}", g) for l, g in enumerate(self.hidden)]
        named.append(("W", self.W))
        named.append(("beta", np.array([self.beta0, self.beta1])))
        return named

    def to_vector(self) -> np.ndarray:
        parts = [g.ravel() for g in self.hidden] + [self.W.ravel(), np.array([self.beta0, self.beta1])]
        return np.concatenate(parts)


@dataclass
class LossBreakdown:
    base: float
    constraint: float = 0.0
    labels: float = 0.0
    regularization: float = 0.0
    total: float = 0.0
    p_ml: float = 0.0
    p_cl: float = 0.0

    def as_dict(self) -> Dict[str, float]:
        return {
            "total": self.total, "base": self.base, "constraint": self.constraint,
            "labels": self.labels, "regularization": self.regularization,
            "p_ml": self.p_ml, "p_cl": self.p_cl,
        }

    @classmethod
    def mean(cls, items: Sequence["LossBreakdown"]) -> "LossBreakdown":
        """Term-by-term average, e.g. over the blocks of one epoch."""
        return cls(**{f.name: float(np.mean([getattr(b, f.name) for b in items])) for f in fields(cls)})


# --- Elementary terms ---

def pair_loss(trace_i: ForwardTrace, trace_j: ForwardTrace, delta_star: float, fs: FocalSetStructure) -> float:
    """(m*_i' C m*_j - delta*_ij)^2 for one pair of single-row traces."""
    kappa = float(trace_i.m_star[0] @ fs.conflict @ trace_j.m_star[0])
    return (kappa - float(delta_star)) ** 2


def penalty_ml_cl(masses: np.ndarray, constraints: ConstraintSet, fs: FocalSetStructure) -> Tuple[float, float]:
    """P_ML = sum m_i' Q m_j over ML; P_CL = sum (2 - m_i' Q m_j) over CL."""
    masses = np.asarray(masses, dtype=np.float64)
    constraints.validate(masses.shape[0])
    Q = fs.penalty_q
    ml, cl = constraints.must_link, constraints.cannot_link
    p_ml = float(np.sum((masses[ml[:, 0]] @ Q) * masses[ml[:, 1]])) if ml.size else 0.0
    p_cl = float(np.sum(2.0 - np.sum((masses[cl[:, 0]] @ Q) * masses[cl[:, 1]], axis=1))) if cl.size else 0.0
    return p_ml, p_cl


def penalty_labels(masses: np.ndarray, labels: LabelSet, fs: FocalSetStructure) -> float:
    """Mean over labeled objects of sum_l (pl*_il - y_il)^2."""
    masses = np.asarray(masses, dtype=np.float64)
    labels.validate(masses.shape[0], fs.c)
    if labels.size == 0:
        return 0.0
    pl = masses[labels.indices] @ fs.membership
    y = np.eye(fs.c)[labels.classes - 1]
    return float(np.sum((pl - y) ** 2) / labels.size)


def _scatter_rows(index: np.ndarray, values: np.ndarray, k: int) -> np.ndarray:
    """Sums rows of values into k buckets, deterministic order."""
    return np.stack(
        [np.bincount(index, weights=values[:, q], minlength=k) for q in range(values.shape[1])],
        axis=1
    )


def regularization(params: NetworkParams, lam: float) -> float:
    if lam == 0.0:
        return 0.0
    return 0.5 * lam * sum(float(np.sum(B ** 2)) / B.size for _, B in params.blocks())


# --- Objective ---

class Objective:
    """
    The composite loss over a fixed set of pairs.

    Only the objects touched by the pairs, the constraints or the labels
    go through the network.
    """

    def __init__(
        self,
        data: TrainingData,
        rows: np.ndarray,
        cols: np.ndarray,
        delta_star: np.ndarray,
        cfg: LossConfig
    ):
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        delta_star = np.asarray(delta_star, dtype=np.float64)
        if not (rows.shape == cols.shape == delta_star.shape):
            raise ValidationError("rows, cols and delta_star must have the same length")
        if rows.size and (min(rows.min(), cols.min()) < 0 or max(rows.max(), cols.max()) >= data.n):
            raise ValidationError(f"Pair index outside 0..{data.n - 1}")

        self.data = data
        self.cfg = cfg
        self.fs = data.fs
        self.delta_star = delta_star

        constraints = data.constraints if data.constraints is not None and data.constraints.size else None
        labels = data.labels if data.labels is not None and data.labels.size else None
        self.nu = cfg.nu if labels is not None else 0.0

        touched = [rows, cols]
        if constraints is not None:
            touched.append(constraints.objects())
        if labels is not None:
            touched.append(labels.indices)
        objects = np.unique(np.concatenate(touched)) if any(t.size for t in touched) else np.zeros(0, np.int64)
        if objects.size == data.n:
            objects = np.arange(data.n)
        self.objects = objects
        self.X = data.X[objects]
        self.scores = data.svm_scores[objects] if data.svm_scores is not None else None

        local = lambda idx: np.searchsorted(objects, idx)
        self.rows = local(rows)
        self.cols = local(cols)
        self.ml = local(constraints.must_link) if constraints is not None else None
        self.cl = local(constraints.cannot_link) if constraints is not None else None
        self.n_constraints = constraints.size if constraints is not None else 0
        self.label_rows = local(labels.indices) if labels is not None else None
        self.label_targets = np.eye(self.fs.c)[labels.classes - 1] if labels is not None else None

    @property
    def n_pairs(self) -> int:
        return int(self.rows.size)

    def forward(self, params: NetworkParams) -> ForwardTrace:
        return forward(params, self.X, self.fs, self.scores)

    def evaluate(self, params: NetworkParams, with_grad: bool = True) -> Tuple[LossBreakdown, Optional[GradientBundle]]:
        trace = self.forward(params)
        Ms = trace.m_star
        k, f = Ms.shape
        C = self.fs.conflict
        w_main = 1.0 - self.nu
        G = np.zeros((k, f)) if with_grad else None

        # pairwise stress
        base = 0.0
        if self.n_pairs:
            Mi, Mj = Ms[self.rows], Ms[self.cols]
            CMj = Mj @ C
            resid = np.sum(Mi * CMj, axis=1) - self.delta_star
            base = float(resid @ resid) / self.n_pairs
            if with_grad:
                coef = (w_main * 2.0 / self.n_pairs) * resid[:, None]
                G += _scatter_rows(self.rows, coef * CMj, k)
                G += _scatter_rows(self.cols, coef * (Mi @ C), k)

        # pairwise constraints
        p_ml = p_cl = constraint_term = 0.0
        if self.n_constraints and self.cfg.xi > 0.0:
            Q = self.fs.penalty_q
            weight = w_main * self.cfg.xi / (2.0 * self.n_constraints)
            for pairs, sign in ((self.ml, 1.0), (self.cl, -1.0)):
                if pairs.size == 0:
                    continue
                Ma, Mb = Ms[pairs[:, 0]], Ms[pairs[:, 1]]
                QMb = Mb @ Q
                values = np.sum(Ma * QMb, axis=1)
                if sign > 0:
                    p_ml = float(values.sum())
                else:
                    p_cl = float(np.sum(2.0 - values))
                if with_grad:
                    G += _scatter_rows(pairs[:, 0], sign * weight * QMb, k)
                    G += _scatter_rows(pairs[:, 1], sign * weight * (Ma @ Q), k)
            constraint_term = weight * (p_ml + p_cl)

        # labeled objects
        label_penalty = 0.0
        if self.label_rows is not None and self.nu > 0.0:
            ns = self.label_rows.size
            diff = Ms[self.label_rows] @ self.fs.membership - self.label_targets
            label_penalty = float(np.sum(diff ** 2)) / ns
            if with_grad:
                G[self.label_rows] += (self.nu * 2.0 / ns) * (diff @ self.fs.membership.T)

        reg = regularization(params, self.cfg.lam)
        total = w_main * base + constraint_term + self.nu * label_penalty + reg
        breakdown = LossBreakdown(
            base=base, constraint=constraint_term, labels=label_penalty,
            regularization=reg, total=total, p_ml=p_ml, p_cl=p_cl
        )
        if not np.isfinite(total):
            raise NumericalError("Loss is not finite", block="loss")
        if not with_grad:
            return breakdown, None
        return breakdown, backward(params, trace, self.X, G, self.scores, self.fs, self.cfg.lam)


def backward(
    params: NetworkParams,
    trace: ForwardTrace,
    X: np.ndarray,
    g_mstar: np.ndarray,
    scores: Optional[np.ndarray],
    fs: FocalSetStructure,
    lam: float = 0.0
) -> GradientBundle:
    """Backpropagates d(loss)/d(m*) to every parameter block."""
    dbeta0 = dbeta1 = 0.0
    if trace.gated:
        g_m = trace.gamma[:, None] * g_mstar
        g_gamma = np.sum(g_mstar * trace.m, axis=1) - g_mstar[:, fs.empty_index]
        g_t = g_gamma * expit(trace.t) / (1.0 + trace.eta) ** 2
        dbeta0 = float(np.sum(g_t))
        dbeta1 = float(np.sum(g_t * scores))
    else:
        g_m = g_mstar

    m = trace.m
    g_mu = m * (g_m - np.sum(g_m * m, axis=1, keepdims=True))

    z_last = trace.z[-1]
    dW = np.empty_like(params.W)
    dW[:, 0] = g_mu.sum(axis=0)
    dW[:, 1:] = g_mu.T @ z_last

    d_hidden: List[np.ndarray] = [None] * len(params.hidden)
    g_z = g_mu @ params.W[:, 1:]
    for l in range(len(params.hidden) - 1, -1, -1):
        V = params.hidden[l]
        g_a = g_z * (trace.a[l] > 0.0)
        z_prev = X if l == 0 else trace.z[l - 1]
        dV = np.empty_like(V)
        dV[:, 0] = g_a.sum(axis=0)
        dV[:, 1:] = g_a.T @ z_prev
        d_hidden[l] = dV
        if l > 0:
            g_z = g_a @ V[:, 1:]

    if lam > 0.0:
        d_hidden = [g + lam * V / V.size for g, V in zip(d_hidden, params.hidden)]
        dW = dW + lam * params.W / params.W.size

    grads = GradientBundle(hidden=d_hidden, W=dW, beta0=dbeta0, beta1=dbeta1)
    for name, block in grads.blocks():
        if not np.all(np.isfinite(block)):
            raise NumericalError(f"Non-finite gradient in block {name}", block=name)
    return grads


# --- Functional entry points ---

def view_objective(data: TrainingData, view, cfg: LossConfig) -> Objective:
    return Objective(data, view.rows, view.cols, view.delta_star, cfg)


def total_loss(params: NetworkParams, data: TrainingData, view, cfg: LossConfig) -> LossBreakdown:
    """Composite loss over the retained pairs of a DissimilarityView."""
    breakdown, _ = view_objective(data, view, cfg).evaluate(params, with_grad=False)
    return breakdown


def gradients(
    params: NetworkParams,
    data: TrainingData,
    rows: np.ndarray,
    cols: np.ndarray,
    delta_star: np.ndarray,
    cfg: LossConfig
) -> GradientBundle:
    """Analytic gradient of the composite loss over one batch of pairs."""
    _, grads = Objective(data, rows, cols, delta_star, cfg).evaluate(params, with_grad=True)
    return grads


# --- Gradient check ---

@dataclass
class BlockReport:
    name: str
    max_relative_error: float
    worst_index: Tuple[int, ...]
    analytic: float
    numeric: float


@dataclass
class GradCheckReport:
    blocks: List[BlockReport]
    tolerance: float

    @property
    def max_error(self) -> float:
        return max((b.max_relative_error for b in self.blocks), default=0.0)

    @property
    def passed(self) -> bool:
        return self.max_error < self.tolerance

    def failing(self) -> List[str]:
        return [b.name for b in self.blocks if b.max_relative_error >= self.tolerance]

    def worst(self, k: int = 3) -> List[BlockReport]:
        return sorted(self.blocks, key=lambda b: b.max_relative_error, reverse=True)[:k]


def grad_check(
    objective: Objective,
    params: NetworkParams,
    step: float = FD_STEP,
    tolerance: float = GRAD_TOLERANCE,
    floor: float = GRAD_FLOOR,
    fault: Optional[str] = None
) -> GradCheckReport:
    """
    Compares analytic gradients with central finite differences.

    Args:
        objective: Loss to differentiate.
        params: Point of evaluation.
        step: Finite-difference step.
        tolerance: Relative error considered a failure.
        floor: Lower bound of the relative-error denominator.
        fault: Name of a block ('V', 'W', 'beta', ...) whose analytic
            gradient is deliberately corrupted; used to test the checker.
    """
    _, grads = objective.evaluate(params, with_grad=True)
    if fault is not None:
        named = dict(grads.blocks())
        if fault not in named:
            raise ValidationError(f"Unknown parameter block {fault!r}")
        if fault == "beta":
            grads.beta0 += 1.0
        else:
            named[fault] += 0.1 * (1.0 + np.abs(named[fault]))
    analytic = grads.to_vector()

    x0 = params.to_vector()
    numeric = np.zeros_like(x0)
    for k in range(x0.size):
        x = x0.copy()
        x[k] = x0[k] + step
        plus, _ = objective.evaluate(params.from_vector(x), with_grad=False)
        x[k] = x0[k] - step
        minus, _ = objective.evaluate(params.from_vector(x), with_grad=False)
        numeric[k] = (plus.total - minus.total) / (2.0 * step)

    reports = []
    offset = 0
    for name, block in grads.blocks():
        size = block.size
        a = analytic[offset:offset + size]
        num = numeric[offset:offset + size]
        rel = np.abs(a - num) / np.maximum(np.maximum(np.abs(a), np.abs(num)), floor)
        worst = int(np.argmax(rel))
        reports.append(BlockReport(
            name=name,
            max_relative_error=float(rel[worst]),
            worst_index=tuple(int(v) for v in np.unravel_index(worst, block.shape)),
            analytic=float(a[worst]),
            numeric=float(num[worst]),
        ))
        offset += size

    report = GradCheckReport(blocks=reports, tolerance=tolerance)
    log.info(f"Gradient check: max relative error {report.max_error:.3e} over {x0.size} parameters")
    return report
