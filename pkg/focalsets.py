import logging
from dataclasses import dataclass
from itertools import combinations
from typing import List, Optional, Sequence, Tuple

import numpy as np

from errors import ValidationError

log = logging.getLogger(__name__)

# --- Constants ---
SCHEMES = ("full", "singletons_plus", "pairs_plus", "auto")
MAX_FULL_CLUSTERS = 5
MASS_TOLERANCE = 1e-9


@dataclass(frozen=True)
class Frame:
    """The frame of discernment: c clusters, encoded as bits 0..c-1."""
    c: int

    def __post_init__(self):
        if not isinstance(self.c, (int, np.integer)) or self.c < 1:
            raise ValidationError(f"Cluster count must be a positive integer, got {self.c!r}")

    @property
    def omega(self) -> int:
        return (1 << self.c) - 1


def subset_label(mask: int, frame: Frame) -> str:
    """Printable name of a subset: '{}', '{1}', '{1,2}' or 'Omega'."""
    if mask == frame.omega and frame.c > 1:
        return "Omega"
    members = [str(l + 1) for l in range(frame.c) if mask >> l & 1]
    return "{" + ",".join(members) + "}"


class FocalSetStructure:
    """
    Ordered focal sets of a frame plus the matrices used by the conflict
    and penalty formulas.

    Ordering: empty set first, then singletons, then pairs (lexicographic),
    then larger subsets by cardinality, and Omega last. All arrays are
    read-only after construction.
    """

    def __init__(self, frame: Frame, subsets: Sequence[int], scheme: str = "custom"):
        subsets = tuple(int(s) for s in subsets)
        if len(subsets) < 2:
            raise ValidationError(f"At least two focal sets are required, got {len(subsets)}")
        if len(set(subsets)) != len(subsets):
            raise ValidationError("Focal sets must be distinct")
        if any(s < 0 or s > frame.omega for s in subsets):
            raise ValidationError(f"Focal set outside the frame of {frame.c} clusters")
        if 0 in subsets and subsets[0] != 0:
            raise ValidationError("The empty set must be stored at index 0")

        self.frame = frame
        self.subsets = subsets
        self.scheme = scheme

        f = len(subsets)
        masks = np.array(subsets, dtype=np.int64)
        self.cardinality = np.array([bin(s).count("1") for s in subsets], dtype=np.int64)

        self.conflict = ((masks[:, None] & masks[None, :]) == 0).astype(np.int64)

        self.pairwise_e = np.zeros((f, f), dtype=np.int64)
        if self.empty_index is not None:
            self.pairwise_e[0, :] = 1
            self.pairwise_e[:, 0] = 1

        self.singleton_s = np.diag((self.cardinality == 1).astype(np.int64))
        self.penalty_q = 1 + self.conflict - self.pairwise_e - self.singleton_s

        # membership[r, l] = 1 iff cluster l belongs to focal set r
        self.membership = np.array(
            [[(s >> l) & 1 for l in range(frame.c)] for s in subsets], dtype=np.float64
        )

        for arr in (self.cardinality, self.conflict, self.pairwise_e,
                    self.singleton_s, self.penalty_q, self.membership):
            arr.setflags(write=False)

    @property
    def f(self) -> int:
        return len(self.subsets)

    @property
    def c(self) -> int:
        return self.frame.c

    @property
    def empty_index(self) -> Optional[int]:
        return 0 if self.subsets[0] == 0 else None

    @property
    def omega_index(self) -> Optional[int]:
        try:
            return self.subsets.index(self.frame.omega)
        except ValueError:
            return None

    @property
    def labels(self) -> List[str]:
        return [subset_label(s, self.frame) for s in self.subsets]

    def __repr__(self) -> str:
        return f"FocalSetStructure(c={self.c}, scheme={self.scheme!r}, f={self.f})"


def resolve_scheme(scheme: str, c: int) -> str:
    """Maps 'auto' to a concrete scheme: pairs when c <= 4, singletons otherwise."""
    if scheme == "auto":
        return "pairs_plus" if c <= 4 else "singletons_plus"
    return scheme


def build_focal_sets(frame: Frame, scheme: str = "pairs_plus") -> FocalSetStructure:
    """
    Builds the focal-set structure for one of the built-in schemes.

    Args:
        frame: The frame of discernment.
        scheme: 'full' (all 2^c subsets, c <= 5), 'singletons_plus'
            (empty set, singletons, Omega), 'pairs_plus' (empty set,
            singletons, pairs, Omega) or 'auto'.

    Returns:
        The focal-set structure with C, E, S and Q precomputed.
    """
    if isinstance(frame, (int, np.integer)):
        frame = Frame(int(frame))
    if scheme not in SCHEMES:
        raise ValidationError(f"Unknown focal scheme {scheme!r}; expected one of {SCHEMES}")
    scheme = resolve_scheme(scheme, frame.c)
    if scheme == "full" and frame.c > MAX_FULL_CLUSTERS:
        raise ValidationError(
            f"Scheme 'full' is limited to c <= {MAX_FULL_CLUSTERS} (got c={frame.c}); "
            "use 'pairs_plus' or 'singletons_plus'"
        )

    max_size = {"singletons_plus": 1, "pairs_plus": 2, "full": frame.c}[scheme]
    ordered: List[int] = [0]
    for size in range(1, max_size + 1):
        for combo in combinations(range(frame.c), size):
            mask = sum(1 << l for l in combo)
            if mask != frame.omega:
                ordered.append(mask)
    ordered.append(frame.omega)

    fs = FocalSetStructure(frame, ordered, scheme=scheme)
    log.debug(f"Built {fs!r}")
    return fs


# --- Mass-vector operations ---

def check_masses(m, fs: FocalSetStructure, name: str = "mass vector") -> np.ndarray:
    """Validates one mass vector (or a matrix of row vectors) against fs."""
    m = np.asarray(m, dtype=np.float64)
    if m.ndim not in (1, 2) or m.shape[-1] != fs.f:
        raise ValidationError(f"{name} has shape {m.shape}; expected trailing dimension {fs.f}")
    if not np.all(np.isfinite(m)):
        raise ValidationError(f"{name} contains non-finite values")
    if np.any(m < -MASS_TOLERANCE):
        raise ValidationError(f"{name} has negative masses")
    if np.any(np.abs(m.sum(axis=-1) - 1.0) > MASS_TOLERANCE):
        raise ValidationError(f"{name} does not sum to 1 within {MASS_TOLERANCE}")
    return m


def degree_of_conflict(m1, m2, fs: FocalSetStructure) -> float:
    """Mass given to the empty set by the conjunctive sum of m1 and m2 (m1' C m2)."""
    m1 = check_masses(m1, fs, "m1")
    m2 = check_masses(m2, fs, "m2")
    if m1.ndim != 1 or m2.ndim != 1:
        raise ValidationError("degree_of_conflict expects two single mass vectors")
    return float(m1 @ fs.conflict @ m2)


def pairwise_conflict(M1: np.ndarray, M2: np.ndarray, fs: FocalSetStructure) -> np.ndarray:
    """Row-wise degrees of conflict between matching rows of two mass matrices."""
    return np.sum((M1 @ fs.conflict) * M2, axis=1)


def plausibility_same(m1, m2, fs: FocalSetStructure) -> Tuple[float, float]:
    """
    Plausibilities that two objects are (Pl(S)) and are not (Pl(not S)) in
    the same cluster.
    """
    m1 = check_masses(m1, fs, "m1")
    m2 = check_masses(m2, fs, "m2")
    ones = np.ones((fs.f, fs.f))
    pl_same = float(m1 @ (ones - fs.conflict) @ m2)
    pl_not_same = float(m1 @ (ones - fs.pairwise_e - fs.singleton_s) @ m2)
    return pl_same, pl_not_same


def contour(m, fs: FocalSetStructure) -> np.ndarray:
    """Plausibility of each singleton; works on one vector or a matrix of rows."""
    m = check_masses(m, fs)
    return m @ fs.membership


def belief(m, subset: int, fs: FocalSetStructure) -> float:
    """Bel(A): total mass of the nonempty focal sets included in A."""
    m = check_masses(m, fs)
    keep = [r for r, s in enumerate(fs.subsets) if s != 0 and (s & ~subset) == 0]
    return float(m[keep].sum())


def plausibility(m, subset: int, fs: FocalSetStructure) -> float:
    """Pl(A): total mass of the focal sets intersecting A."""
    m = check_masses(m, fs)
    keep = [r for r, s in enumerate(fs.subsets) if s & subset]
    return float(m[keep].sum())
