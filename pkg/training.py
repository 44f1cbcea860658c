import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from dissim import DissimilarityView, minibatch_blocks, sample_pairs
from errors import NumericalError, ValidationError
from losses import GradientBundle, LossBreakdown, LossConfig, Objective, TrainingData
from network import NetworkParams, default_hidden_units, init_params

log = logging.getLogger(__name__)
report_log = logging.getLogger("training.report")

# n above which the CLI switches from batch to minibatch learning
BATCH_MAX_OBJECTS = 1000
MONITOR_PAIRS_PER_OBJECT = 100


@dataclass
class OptimizerConfig:
    """
    Settings of both optimizers.

    Batch mode uses per-parameter adaptive steps (grow by step_up while the
    gradient keeps its sign, shrink by step_down when it flips, reject and
    shrink by backtrack on a loss increase). Minibatch mode uses RMSprop.
    """
    max_epochs: int = 500
    restarts: int = 5
    seed: int = 0
    threads: int = 1
    # batch
    initial_step: float = 1e-2
    step_up: float = 1.2
    step_down: float = 0.8
    backtrack: float = 0.5
    min_step: float = 1e-12
    max_step: float = 10.0
    tol: float = 1e-9
    stall_epochs: int = 20
    # minibatch
    learning_rate: float = 1e-3
    rho: float = 0.9
    delta: float = 1e-8
    early_stopping: bool = False
    patience: int = 10
    validation_fraction: float = 0.1

    def __post_init__(self):
        if self.max_epochs < 0:
            raise ValidationError(f"max_epochs must be >= 0, got {self.max_epochs}")
        if self.restarts < 1:
            raise ValidationError(f"restarts must be >= 1, got {self.restarts}")
        if not (self.step_up > 1.0 and 0.0 < self.step_down < 1.0 and 0.0 < self.backtrack < 1.0):
            raise ValidationError("Adaptive step factors must satisfy step_up > 1 and 0 < step_down, backtrack < 1")
        if not 0.0 < self.rho < 1.0:
            raise ValidationError(f"rho must lie in (0, 1), got {self.rho}")
        if not 0.0 < self.validation_fraction < 1.0:
            raise ValidationError("validation_fraction must lie in (0, 1)")


@dataclass
class RestartResult:
    restart: int
    params: Optional[NetworkParams]
    breakdown: Optional[LossBreakdown]
    history: List[float] = field(default_factory=list)
    epochs: int = 0
    diverged: bool = False
    message: str = ""

    @property
    def final_loss(self) -> float:
        return self.breakdown.total if self.breakdown is not None else float("inf")


@dataclass
class FitResult:
    params: NetworkParams
    breakdown: LossBreakdown
    history: List[float]
    best_restart: int
    restarts: List[RestartResult]


# --- Helpers ---

def _emit(restart: int, epoch: int, breakdown: LossBreakdown, grad_norm: float, started: float) -> None:
    record = {"restart": restart, "epoch": epoch, "loss": breakdown.total,
              "terms": breakdown.as_dict(), "grad_norm": grad_norm,
              "wall_time": time.perf_counter() - started}
    report_log.debug(f"restart {restart} epoch {epoch} loss {breakdown.total:.6g}", extra={"report": record})


def _evaluate(objective: Objective, template: NetworkParams, x: np.ndarray) -> Tuple[LossBreakdown, np.ndarray]:
    breakdown, grads = objective.evaluate(template.from_vector(x), with_grad=True)
    return breakdown, grads.to_vector()


def _run_restarts(
    run_one: Callable[[int], RestartResult],
    opt: OptimizerConfig
) -> FitResult:
    if opt.threads > 1 and opt.restarts > 1:
        with ThreadPoolExecutor(max_workers=opt.threads) as pool:
            results = list(pool.map(run_one, range(opt.restarts)))
    else:
        results = [run_one(r) for r in range(opt.restarts)]

    finished = [r for r in results if not r.diverged]
    if not finished:
        raise NumericalError(f"All {opt.restarts} restarts diverged: {results[0].message}", block="loss")
    best = min(finished, key=lambda r: (r.final_loss, r.restart))
    log.info(f"Best restart {best.restart + 1}/{opt.restarts}: loss {best.final_loss:.6g}")
    return FitResult(
        params=best.params, breakdown=best.breakdown, history=best.history,
        best_restart=best.restart, restarts=results
    )


def _initial_params(data: TrainingData, hidden_units: Optional[Sequence[int]], rng) -> NetworkParams:
    units = list(hidden_units) if hidden_units else [default_hidden_units(data.fs.f)]
    return init_params(data.d, units, data.fs.f, rng)


# --- Batch training ---

def adaptive_descent(
    objective: Objective,
    params: NetworkParams,
    opt: OptimizerConfig,
    restart: int = 0
) -> Tuple[NetworkParams, LossBreakdown, List[float], int]:
    """Full-batch descent with per-parameter adaptive steps and loss backtracking."""
    started = time.perf_counter()
    x = params.to_vector()
    steps = np.full(x.size, opt.initial_step)
    breakdown, g = _evaluate(objective, params, x)
    prev_g = np.zeros_like(g)
    history = [breakdown.total]
    stalled = 0
    epoch = 0

    for epoch in range(1, opt.max_epochs + 1):
        agreement = g * prev_g
        steps = np.where(agreement > 0, steps * opt.step_up,
                         np.where(agreement < 0, steps * opt.step_down, steps))
        steps = np.clip(steps, opt.min_step, opt.max_step)
        trial = x - steps * g
        trial_breakdown, trial_g = _evaluate(objective, params, trial)

        if trial_breakdown.total > breakdown.total:
            steps *= opt.backtrack
            prev_g = np.zeros_like(g)
        else:
            improvement = breakdown.total - trial_breakdown.total
            stalled = stalled + 1 if improvement <= opt.tol * max(breakdown.total, 1e-300) else 0
            x, breakdown, prev_g, g = trial, trial_breakdown, g, trial_g

        history.append(breakdown.total)
        _emit(restart, epoch, breakdown, float(np.linalg.norm(g)), started)
        if stalled >= opt.stall_epochs or np.all(steps <= opt.min_step):
            log.debug(f"Restart {restart + 1}: converged after {epoch} epochs")
            break

    return params.from_vector(x), breakdown, history, epoch


def train_batch(
    data: TrainingData,
    view: DissimilarityView,
    loss_cfg: LossConfig,
    opt: OptimizerConfig,
    hidden_units: Optional[Sequence[int]] = None
) -> FitResult:
    """
    Multistart full-batch training over the retained pairs of the view;
    returns the restart with the lowest final loss.
    """
    objective = Objective(data, view.rows, view.cols, view.delta_star, loss_cfg)
    log.info(f"Batch training: n={data.n}, {objective.n_pairs} pairs, f={data.fs.f}, {opt.restarts} restarts")

    def run_one(restart: int) -> RestartResult:
        rng = np.random.default_rng([opt.seed, restart])
        params = _initial_params(data, hidden_units, rng)
        try:
            fitted, breakdown, history, epochs = adaptive_descent(objective, params, opt, restart)
        except NumericalError as e:
            log.warning(f"Restart {restart + 1} diverged: {e}")
            return RestartResult(restart, None, None, diverged=True, message=str(e))
        log.info(f"Restart {restart + 1}: loss {breakdown.total:.6g} after {epochs} epochs")
        return RestartResult(restart, fitted, breakdown, history, epochs)

    return _run_restarts(run_one, opt)


# --- Minibatch training ---

class RMSprop:
    """r <- rho r + (1 - rho) g^2;  x <- x - lr g / sqrt(delta + r)."""

    def __init__(self, size: int, learning_rate: float, rho: float, delta: float):
        self.lr = learning_rate
        self.rho = rho
        self.delta = delta
        self.r = np.zeros(size)

    def step(self, x: np.ndarray, g: np.ndarray) -> np.ndarray:
        self.r = self.rho * self.r + (1.0 - self.rho) * g * g
        return x - self.lr * g / np.sqrt(self.delta + self.r)


def _monitor_objective(data: TrainingData, view: DissimilarityView, loss_cfg: LossConfig, seed) -> Objective:
    """Fixed sampled pairs used to compare restarts in minibatch mode."""
    p = min(MONITOR_PAIRS_PER_OBJECT, data.n - 1)
    J = sample_pairs(data.n, p, seed)
    rows = np.repeat(np.arange(data.n), p)
    cols = J.ravel()
    return Objective(data, rows, cols, view.lookup(rows, cols), loss_cfg)


def _split_validation(n: int, fraction: float, seed) -> Tuple[np.ndarray, np.ndarray]:
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    n_val = max(2, int(round(fraction * n)))
    return np.sort(perm[n_val:]), np.sort(perm[:n_val])


def rmsprop_descent(
    data: TrainingData,
    view: DissimilarityView,
    loss_cfg: LossConfig,
    params: NetworkParams,
    opt: OptimizerConfig,
    restart: int = 0
) -> Tuple[NetworkParams, List[float], int]:
    """RMSprop over freshly drawn within-group blocks every epoch."""
    started = time.perf_counter()
    train_objects = np.arange(data.n)
    validation = None
    if opt.early_stopping:
        train_objects, val_objects = _split_validation(data.n, opt.validation_fraction, [opt.seed, restart, 1])
        a, b = np.triu_indices(val_objects.size, k=1)
        vr, vc = val_objects[a], val_objects[b]
        validation = Objective(data, vr, vc, view.lookup(vr, vc), loss_cfg)

    s = loss_cfg.s
    if s > train_objects.size // 2:
        raise ValidationError(f"Too many blocks (s={s}) for {train_objects.size} training objects")

    x = params.to_vector()
    optimizer = RMSprop(x.size, opt.learning_rate, opt.rho, opt.delta)
    history: List[float] = []
    best_val, best_x, waited = np.inf, x.copy(), 0
    epoch = 0

    for epoch in range(1, opt.max_epochs + 1):
        block_terms: List[LossBreakdown] = []
        grad_norm = 0.0
        for local_rows, local_cols in minibatch_blocks(train_objects.size, s, [opt.seed, restart, epoch]):
            rows, cols = train_objects[local_rows], train_objects[local_cols]
            objective = Objective(data, rows, cols, view.lookup(rows, cols), loss_cfg)
            breakdown, g = _evaluate(objective, params, x)
            block_terms.append(breakdown)
            grad_norm = float(np.linalg.norm(g))
            x = optimizer.step(x, g)

        epoch_terms = LossBreakdown.mean(block_terms)
        history.append(epoch_terms.total)
        _emit(restart, epoch, epoch_terms, grad_norm, started)

        if validation is not None:
            val_loss, _ = validation.evaluate(params.from_vector(x), with_grad=False)
            if val_loss.total < best_val:
                best_val, best_x, waited = val_loss.total, x.copy(), 0
            else:
                waited += 1
                if waited >= opt.patience:
                    log.debug(f"Restart {restart + 1}: early stop at epoch {epoch} (validation {best_val:.6g})")
                    x = best_x
                    break

    return params.from_vector(x), history, epoch


def train_minibatch(
    data: TrainingData,
    view: DissimilarityView,
    loss_cfg: LossConfig,
    opt: OptimizerConfig,
    hidden_units: Optional[Sequence[int]] = None
) -> FitResult:
    """
    Multistart minibatch RMSprop training. Restarts are compared on a fixed
    sampled pair set.
    """
    if loss_cfg.mode != "minibatch" or loss_cfg.s is None:
        raise ValidationError("Minibatch training requires a LossConfig in minibatch mode")
    if view.matrix is None:
        raise ValidationError("Minibatch training needs the full transformed dissimilarity matrix")
    monitor = _monitor_objective(data, view, loss_cfg, [opt.seed, 7])
    log.info(f"Minibatch training: n={data.n}, s={loss_cfg.s}, f={data.fs.f}, {opt.restarts} restarts")

    def run_one(restart: int) -> RestartResult:
        rng = np.random.default_rng([opt.seed, restart])
        params = _initial_params(data, hidden_units, rng)
        try:
            fitted, history, epochs = rmsprop_descent(data, view, loss_cfg, params, opt, restart)
            breakdown, _ = monitor.evaluate(fitted, with_grad=False)
        except NumericalError as e:
            log.warning(f"Restart {restart + 1} diverged: {e}")
            return RestartResult(restart, None, None, diverged=True, message=str(e))
        log.info(f"Restart {restart + 1}: monitored loss {breakdown.total:.6g} after {epochs} epochs")
        return RestartResult(restart, fitted, breakdown, history, epochs)

    return _run_restarts(run_one, opt)


def train(
    data: TrainingData,
    view: DissimilarityView,
    loss_cfg: LossConfig,
    opt: OptimizerConfig,
    hidden_units: Optional[Sequence[int]] = None
) -> FitResult:
    if loss_cfg.mode == "minibatch":
        return train_minibatch(data, view, loss_cfg, opt, hidden_units)
    return train_batch(data, view, loss_cfg, opt, hidden_units)
