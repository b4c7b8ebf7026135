"""Training-set balancing: SMOTE oversampling plus Tomek-link cleaning.

Operates on flattened window vectors with Euclidean distances computed
by brute force; at the window sizes this pipeline produces (a few
hundred rows of ~27k samples) the O(n^2 d) cost is the documented
hotspot and still cheap. All randomness flows through one seeded
generator consumed in a fixed serial order.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)


class ResampleError(Exception):
    pass


class NotEnoughPoints(ResampleError):
    pass


class NotEnoughMinority(ResampleError):
    pass


@dataclass(frozen=True)
class ResampleConfig:
    k_neighbors: int = 5
    link_removal: str = "both"  # or "majority-only"
    seed: int = 0

    def validate(self) -> None:
        if self.k_neighbors < 1:
            raise ResampleError("k_neighbors must be >= 1")
        if self.link_removal not in ("both", "majority-only"):
            raise ResampleError(f"unknown link_removal policy {self.link_removal!r}")


@dataclass
class ResampleReport:
    n_synthetic: int
    n_links_removed: int
    counts_before: dict[int, int]
    counts_after: dict[int, int]
    removed_indices: list[int] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "n_synthetic": self.n_synthetic,
            "n_links_removed": self.n_links_removed,
            "counts_before": {str(k): v for k, v in self.counts_before.items()},
            "counts_after": {str(k): v for k, v in self.counts_after.items()},
            "removed_indices": list(self.removed_indices),
        }


def _pairwise_sq_dists(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    aa = np.sum(a * a, axis=1)[:, None]
    bb = np.sum(b * b, axis=1)[None, :]
    d = aa + bb - 2.0 * (a @ b.T)
    np.maximum(d, 0.0, out=d)
    return d


def knn(
    points: np.ndarray,
    query_index: int,
    k: int,
    labels: np.ndarray | None = None,
    same_class_only: bool = False,
) -> np.ndarray:
    """Indices of the k nearest points to points[query_index].

    The query itself is excluded; with same_class_only, so is every
    point of a different class. Distance ties break toward the lower
    index.
    """
    points = np.asarray(points, dtype=np.float64)
    n = len(points)
    eligible = np.arange(n) != query_index
    if same_class_only:
        if labels is None:
            raise ResampleError("same_class_only requires labels")
        eligible &= np.asarray(labels) == labels[query_index]
    candidates = np.flatnonzero(eligible)
    if k > len(candidates):
        raise NotEnoughPoints(f"k={k} but only {len(candidates)} eligible points")
    d = _pairwise_sq_dists(points[query_index : query_index + 1], points[candidates])[0]
    order = np.argsort(d, kind="stable")  # stable sort breaks ties by lower index
    return candidates[order[:k]]


def smote(
    minority_points: np.ndarray,
    k: int,
    n_synthetic: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """Interpolated synthetic minority samples.

    Each sample is x + lambda*(nn - x) for a uniformly chosen minority
    point x, one of its k nearest same-class neighbors nn, and lambda
    uniform in [0, 1].
    """
    minority_points = np.asarray(minority_points, dtype=np.float64)
    m = len(minority_points)
    if m <= k:
        raise NotEnoughMinority(f"need more than k={k} minority points, have {m}")
    if n_synthetic == 0:
        return np.zeros((0, minority_points.shape[1]), dtype=minority_points.dtype)

    d = _pairwise_sq_dists(minority_points, minority_points)
    np.fill_diagonal(d, np.inf)
    neighbor_ids = np.argsort(d, axis=1, kind="stable")[:, :k]

    out = np.empty((n_synthetic, minority_points.shape[1]), dtype=minority_points.dtype)
    for i in range(n_synthetic):
        base = int(rng.integers(m))
        nn = int(neighbor_ids[base, int(rng.integers(k))])
        lam = rng.random()
        out[i] = minority_points[base] + lam * (minority_points[nn] - minority_points[base])
    return out


def tomek_links(points: np.ndarray, labels: np.ndarray) -> set[tuple[int, int]]:
    """Mutual nearest-neighbor pairs with differing labels.

    Nearest neighbors are computed over the whole set once; a pair
    (i, j) is a link when each is the other's single nearest neighbor
    and their labels differ. Returned with i < j.
    """
    points = np.asarray(points, dtype=np.float64)
    labels = np.asarray(labels)
    n = len(points)
    if n < 2:
        return set()
    d = _pairwise_sq_dists(points, points)
    np.fill_diagonal(d, np.inf)
    nearest = np.argmin(d, axis=1)  # argmin takes the lowest index on ties
    links = set()
    for i in range(n):
        j = int(nearest[i])
        if labels[i] != labels[j] and int(nearest[j]) == i:
            links.add((min(i, j), max(i, j)))
    return links


def smote_tomek(
    windows: np.ndarray,
    labels: np.ndarray,
    config: ResampleConfig,
) -> tuple[np.ndarray, np.ndarray, ResampleReport]:
    """SMOTE the minority class to parity, then drop Tomek-link members.

    Synthetic rows are appended after the originals before link removal,
    so report.removed_indices refers to that combined ordering.
    """
    config.validate()
    windows = np.asarray(windows)
    labels = np.asarray(labels, dtype=np.int64)
    classes = np.unique(labels)
    if len(classes) != 2:
        raise ResampleError(f"need exactly 2 classes, got {classes.tolist()}")

    counts_before = {int(c): int(np.sum(labels == c)) for c in classes}
    minority = min(classes, key=lambda c: (counts_before[int(c)], c))
    majority = classes[classes != minority][0]
    deficit = counts_before[int(majority)] - counts_before[int(minority)]

    rng = np.random.default_rng(config.seed)
    if deficit > 0:
        synthetic = smote(windows[labels == minority], config.k_neighbors, deficit, rng)
        combined = np.concatenate([windows, synthetic.astype(windows.dtype)])
        combined_labels = np.concatenate(
            [labels, np.full(deficit, minority, dtype=labels.dtype)]
        )
    else:
        combined = windows.copy()
        combined_labels = labels.copy()

    links = tomek_links(combined, combined_labels)
    removed: set[int] = set()
    for i, j in links:
        if config.link_removal == "both":
            removed.update((i, j))
        else:
            removed.add(i if combined_labels[i] == majority else j)

    keep = np.array([i for i in range(len(combined)) if i not in removed], dtype=np.int64)
    out = combined[keep]
    out_labels = combined_labels[keep]
    report = ResampleReport(
        n_synthetic=int(deficit) if deficit > 0 else 0,
        n_links_removed=len(links),
        counts_before=counts_before,
        counts_after={int(c): int(np.sum(out_labels == c)) for c in classes},
        removed_indices=sorted(removed),
    )
    log.info(
        "smote_tomek: +%d synthetic, %d links, %d rows removed",
        report.n_synthetic,
        report.n_links_removed,
        len(removed),
    )
    return out, out_labels, report
