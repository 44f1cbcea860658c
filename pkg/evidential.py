import logging
from dataclasses import dataclass, field
from typing import List

import numpy as np
import pandas as pd

from errors import ValidationError
from focalsets import FocalSetStructure, check_masses

log = logging.getLogger(__name__)

# Masses closer than this to the row maximum compete in the max-mass tie-break
TIE_TOLERANCE = 1e-12


@dataclass(frozen=True)
class EvidentialPartition:
    """One mass vector per object, all over the same focal sets."""
    fs: FocalSetStructure
    masses: np.ndarray

    def __post_init__(self):
        masses = np.asarray(self.masses, dtype=np.float64)
        if masses.ndim == 1:
            masses = masses[None, :]
        masses = check_masses(masses, self.fs, "evidential partition")
        masses = masses.copy()
        masses.setflags(write=False)
        object.__setattr__(self, "masses", masses)

    @property
    def n(self) -> int:
        return self.masses.shape[0]

    def contours(self) -> np.ndarray:
        """n x c matrix of singleton plausibilities."""
        return self.masses @ self.fs.membership

    def __len__(self) -> int:
        return self.n


@dataclass
class RoughPartition:
    """Lower/upper approximations of each cluster; object indices are 0-based."""
    lower: List[List[int]] = field(default_factory=list)
    upper: List[List[int]] = field(default_factory=list)
    outliers: List[int] = field(default_factory=list)

    def to_dict(self, one_based: bool = True) -> dict:
        shift = 1 if one_based else 0
        return {
            "lower": {f"cluster_{k + 1}": [i + shift for i in idx] for k, idx in enumerate(self.lower)},
            "upper": {f"cluster_{k + 1}": [i + shift for i in idx] for k, idx in enumerate(self.upper)},
            "outliers": [i + shift for i in self.outliers],
        }


def hard_partition(ep: EvidentialPartition) -> np.ndarray:
    """
    Assigns each object to the cluster with the highest plausibility.
    Labels are 1-based; ties go to the lowest cluster index.
    """
    if ep.n < 1:
        raise ValidationError("Cannot derive a hard partition of zero objects")
    return np.argmax(ep.contours(), axis=1) + 1


def max_mass_focal_sets(ep: EvidentialPartition) -> np.ndarray:
    """
    Index of the focal set with the largest mass for each object. Ties
    prefer the smaller focal set, then the lower focal index.
    """
    masses = ep.masses
    best = masses.max(axis=1, keepdims=True)
    candidates = masses >= best - TIE_TOLERANCE
    # rank = cardinality * f + index, so the smallest rank among candidates wins
    f = ep.fs.f
    rank = ep.fs.cardinality[None, :] * f + np.arange(f)[None, :]
    rank = np.where(candidates, rank, np.iinfo(np.int64).max)
    return np.argmin(rank, axis=1)


def rough_partition(ep: EvidentialPartition) -> RoughPartition:
    """Lower and upper approximations from the maximum-mass focal set of each object."""
    if ep.n < 1:
        raise ValidationError("Cannot derive a rough partition of zero objects")
    fs = ep.fs
    chosen = max_mass_focal_sets(ep)
    lower: List[List[int]] = [[] for _ in range(fs.c)]
    upper: List[List[int]] = [[] for _ in range(fs.c)]
    outliers: List[int] = []

    for i, r in enumerate(chosen):
        subset = fs.subsets[r]
        if subset == 0:
            outliers.append(i)
            continue
        members = [l for l in range(fs.c) if subset >> l & 1]
        for l in members:
            upper[l].append(i)
        if len(members) == 1:
            lower[members[0]].append(i)

    log.debug(f"Rough partition: {len(outliers)} outliers, lower sizes {[len(x) for x in lower]}")
    return RoughPartition(lower=lower, upper=upper, outliers=outliers)


def outlier_flags(ep: EvidentialPartition) -> np.ndarray:
    """True for objects whose maximum-mass focal set is the empty set."""
    chosen = max_mass_focal_sets(ep)
    return np.array([ep.fs.subsets[r] == 0 for r in chosen], dtype=bool)


def partition_table(ep: EvidentialPartition) -> pd.DataFrame:
    """
    Export layout: one row per object, one 'm_<set>' column per focal set,
    then the hard label and the outlier flag.
    """
    columns = [f"m_{label}" if label.startswith("{") else f"m_{{{label}}}" for label in ep.fs.labels]
    table = pd.DataFrame(ep.masses, columns=columns)
    if ep.n:
        table["label"] = hard_partition(ep)
        table["outlier"] = outlier_flags(ep).astype(int)
    else:
        table["label"] = pd.Series(dtype=int)
        table["outlier"] = pd.Series(dtype=int)
    return table


def empty_partition(fs: FocalSetStructure) -> EvidentialPartition:
    return EvidentialPartition(fs, np.zeros((0, fs.f)))
