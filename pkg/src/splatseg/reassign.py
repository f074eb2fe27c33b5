"""Prior-guided label reassignment and point-prompted object queries.

After feature training, every splat gets a final label by majority
voting over its blended mass under each mask label across all views,
with a regularization term: the classifier's confidence in the splat's
current label is added (scaled by gamma_p) to that label's vote row
before the argmax. Point prompts map a 3D point to an object ID by the
mode of the K nearest splat labels.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EmptySceneError, ShapeError
from .rasterizer import ContributionMatrix
from .scene import NUM_LABELS, Scene
from .training import LinearClassifier, _softmax

DEFAULT_K = 16


@dataclass
class PriorScores:
    """Per-splat class probabilities from the trained classifier."""

    probs: np.ndarray  # (N, 256), rows sum to 1

    def __post_init__(self):
        self.probs = np.ascontiguousarray(self.probs, dtype=np.float64)
        if self.probs.ndim != 2 or self.probs.shape[1] != NUM_LABELS:
            raise ShapeError(f"prior scores must be (N, {NUM_LABELS}), got {self.probs.shape}")

    def __len__(self) -> int:
        return len(self.probs)

    @property
    def argmax_labels(self) -> np.ndarray:
        """Each splat's most probable class (ties to the smaller label)."""
        return np.argmax(self.probs, axis=1).astype(np.uint8)


@dataclass
class SegmentationMatrix:
    """One-hot class assignment over splats, stored as a label vector."""

    labels: np.ndarray  # (N,) uint8

    def __post_init__(self):
        self.labels = np.ascontiguousarray(self.labels, dtype=np.uint8).reshape(-1)

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def n(self) -> int:
        return len(self.labels)

    def matrix(self) -> np.ndarray:
        """Dense (256, N) one-hot view; each column has exactly one 1."""
        out = np.zeros((NUM_LABELS, len(self.labels)), dtype=np.uint8)
        out[self.labels, np.arange(len(self.labels))] = 1
        return out

    def mask(self, k: int) -> np.ndarray:
        return self.labels == k

    @classmethod
    def from_labels(cls, labels) -> "SegmentationMatrix":
        return cls(np.asarray(labels, dtype=np.uint8))


def compute_priors(scene: Scene, clf: LinearClassifier) -> PriorScores:
    """Classifier probabilities for each splat's own feature vector."""
    if len(scene) == 0:
        return PriorScores(np.zeros((0, NUM_LABELS)))
    return PriorScores(_softmax(clf.logits(scene.obj_features)))


def reassign_labels(
    contribs: ContributionMatrix,
    priors: PriorScores,
    current_labels,
    gamma_p: float,
) -> SegmentationMatrix:
    """Vote each splat's label from its mask contributions plus a prior bonus.

    The bonus gamma_p * p_i(current label) lands on the current label's
    row only; the winner is the argmax row (ties to the smaller label).
    Splats with zero contribution everywhere keep their current label.
    """
    current = np.asarray(current_labels, dtype=np.int64).reshape(-1)
    n = contribs.n_gaussians
    if len(priors) != n or len(current) != n:
        raise ShapeError(
            f"sizes disagree: contributions {n}, priors {len(priors)}, labels {len(current)}"
        )
    if n == 0:
        return SegmentationMatrix(np.zeros(0, dtype=np.uint8))

    row_labels = sorted(set(contribs.labels()) | set(current.tolist()))
    scores = contribs.stacked(row_labels)  # (L, N) ascending by label
    unrendered = contribs.total_mass() == 0.0

    row_of = {lab: r for r, lab in enumerate(row_labels)}
    current_rows = np.array([row_of[l] for l in current.tolist()])
    bonus = gamma_p * priors.probs[np.arange(n), current]
    scores[current_rows, np.arange(n)] += bonus

    winners = np.asarray(row_labels, dtype=np.uint8)[np.argmax(scores, axis=0)]
    winners[unrendered] = current[unrendered].astype(np.uint8)
    return SegmentationMatrix(winners)


def query_point(scene: Scene, seg: SegmentationMatrix, p, k: int = DEFAULT_K) -> int:
    """Object ID at a 3D point: mode of the K nearest splat labels.

    Neighbors order by (distance, index); the mode breaks ties toward
    the smaller label.
    """
    if len(scene) == 0:
        raise EmptySceneError("cannot query an empty scene")
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if len(seg) != len(scene):
        raise ShapeError(f"segmentation size {len(seg)} != scene size {len(scene)}")
    k = min(k, len(scene))

    target = np.asarray(p, dtype=np.float64).reshape(3)
    d2 = np.sum((scene.positions.astype(np.float64) - target) ** 2, axis=1)
    if k < len(d2):
        part = np.argpartition(d2, k - 1)[:k]
        # Pull in every splat tied with the current k-th distance so the
        # (distance, index) rule decides membership deterministically.
        kth = d2[part].max()
        candidates = np.nonzero(d2 <= kth)[0]
    else:
        candidates = np.arange(len(d2))
    order = np.lexsort((candidates, d2[candidates]))
    nearest = candidates[order][:k]

    counts = np.bincount(seg.labels[nearest].astype(np.int64), minlength=NUM_LABELS)
    return int(np.argmax(counts))


def object_mask(seg: SegmentationMatrix, k: int) -> np.ndarray:
    """Boolean splat mask for one object ID."""
    if not 0 <= k <= 255:
        raise ValueError(f"object id must lie in [0, 255], got {k}")
    return seg.mask(k)
