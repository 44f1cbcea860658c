import json
import logging
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional

import numpy as np
import pandas as pd
from scipy.special import comb
from sklearn.metrics.cluster import contingency_matrix

from dissim import DissimilarityView, check_square, phi
from errors import ValidationError
from evidential import EvidentialPartition, hard_partition, outlier_flags
from focalsets import pairwise_conflict
from network import EvclusModel, predict

log = logging.getLogger(__name__)


def adjusted_rand_index(labels_a, labels_b) -> float:
    """
    Hubert-Arabie adjusted Rand index from the contingency table.

    Labels are categorical codes of any type. When both partitions are the
    same trivial partition the index is defined as 1.
    """
    labels_a = np.asarray(labels_a).ravel()
    labels_b = np.asarray(labels_b).ravel()
    if labels_a.shape != labels_b.shape:
        raise ValidationError(f"Label vectors differ in length ({labels_a.size} vs {labels_b.size})")
    n = labels_a.size
    if n == 0:
        raise ValidationError("Adjusted Rand index of zero objects is undefined")

    table = contingency_matrix(labels_a, labels_b)
    index = float(comb(table, 2).sum())
    sum_a = float(comb(table.sum(axis=1), 2).sum())
    sum_b = float(comb(table.sum(axis=0), 2).sum())
    total = float(comb(n, 2))

    expected = sum_a * sum_b / total if total > 0 else 0.0
    maximum = 0.5 * (sum_a + sum_b)
    if maximum == expected:
        return 1.0
    return (index - expected) / (maximum - expected)


def shepard_data(ep: EvidentialPartition, view: DissimilarityView) -> np.ndarray:
    """(delta*, kappa) for every retained pair of the view, as a k x 2 array."""
    if ep.n != view.n:
        raise ValidationError(f"Partition has {ep.n} objects but the view covers {view.n}")
    kappa = pairwise_conflict(ep.masses[view.rows], ep.masses[view.cols], ep.fs)
    return np.column_stack([view.delta_star, kappa])


def shepard_table(ep: EvidentialPartition, view: DissimilarityView) -> pd.DataFrame:
    return pd.DataFrame(shepard_data(ep, view), columns=["delta_star", "kappa"])


def stress(shepard: np.ndarray) -> float:
    """Mean squared vertical deviation of a Shepard diagram."""
    if shepard.shape[0] == 0:
        return 0.0
    resid = shepard[:, 1] - shepard[:, 0]
    return float(resid @ resid) / shepard.shape[0]


def holdout_loss(model: EvclusModel, raw_inputs, D_new) -> float:
    """
    Base loss of a trained model on new objects, using the dissimilarities
    among those objects and the model's own phi calibration.

    Args:
        model: Trained model.
        raw_inputs: Attribute rows (or dissimilarity rows to the training
            objects in relational mode) of the new objects.
        D_new: Square dissimilarity matrix among the new objects.
    """
    D_new = check_square(D_new)
    ep = predict(model, model.attributes(raw_inputs))
    if ep.n != D_new.shape[0]:
        raise ValidationError(f"{ep.n} new objects but a {D_new.shape[0]}-object dissimilarity matrix")
    iu, ju = np.triu_indices(ep.n, k=1)
    kappa = pairwise_conflict(ep.masses[iu], ep.masses[ju], ep.fs)
    resid = kappa - phi(D_new[iu, ju], model.gamma_phi)
    return float(resid @ resid) / iu.size


@dataclass
class EvalReport:
    ari: Optional[float]
    final_loss: Optional[float]
    outlier_count: int
    n_objects: int
    shepard_pairs: int = 0
    shepard_path: Optional[str] = None
    holdout_loss: Optional[float] = None

    def to_dict(self) -> dict:
        return asdict(self)

    def save(self, path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.to_dict(), f, indent=2)
        log.info(f"Evaluation report written to {path}")


def evaluate_partition(
    ep: EvidentialPartition,
    truth=None,
    view: Optional[DissimilarityView] = None
) -> EvalReport:
    """
    ARI of the max-plausibility labels against ground truth (outlier flags
    are ignored), outlier count, and the Shepard stress when a view is given.
    """
    ari = None
    if truth is not None:
        ari = adjusted_rand_index(hard_partition(ep), truth)
        log.info(f"ARI against ground truth: {ari:.4f}")
    final_loss = None
    pairs = 0
    if view is not None:
        shepard = shepard_data(ep, view)
        final_loss = stress(shepard)
        pairs = int(shepard.shape[0])
    outliers = int(outlier_flags(ep).sum()) if ep.n else 0
    return EvalReport(ari=ari, final_loss=final_loss, outlier_count=outliers, n_objects=ep.n, shepard_pairs=pairs)
