"""Axis-aligned boxes and the typed spatial graph built over them.

Each ordered pair of boxes gets exactly one relation label. The rules,
applied in priority order:

  1. containment (non-strict on all four edges) -> contains / inside
  2. intersection-over-union >= 0.5             -> overlap
  3. centroid distance <= half the image diagonal -> one of eight
     45-degree direction bins, measured clockwise from +x in image
     coordinates (y grows downward), lower edge inclusive: dir-1 covers
     [0, 45) starting due right, dir-3 starts due below
  4. otherwise no edge.

The label set is closed under edge reversal: contains <-> inside,
overlap and self are their own inverses, and dir-k pairs with the bin
180 degrees away.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import IntEnum

import numpy as np


class RelationType(IntEnum):
    SELF = 0
    CONTAINS = 1
    INSIDE = 2
    OVERLAP = 3
    DIR_1 = 4
    DIR_2 = 5
    DIR_3 = 6
    DIR_4 = 7
    DIR_5 = 8
    DIR_6 = 9
    DIR_7 = 10
    DIR_8 = 11
    NO_EDGE = 12
    IMPLICIT = 13


# The 12 concrete edge labels; NO_EDGE and IMPLICIT are bookkeeping values
# (absence of an edge, and the everything-attends pseudo-relation used when
# assigning relation subsets to attention heads).
N_SPATIAL_TYPES = 12

RELATION_NAMES = (
    "self", "contains", "inside", "overlap",
    "dir-1", "dir-2", "dir-3", "dir-4", "dir-5", "dir-6", "dir-7", "dir-8",
    "no-edge", "implicit",
)

# INVERSE[r] is the label of the reversed edge.
INVERSE = np.array([
    RelationType.SELF, RelationType.INSIDE, RelationType.CONTAINS, RelationType.OVERLAP,
    RelationType.DIR_5, RelationType.DIR_6, RelationType.DIR_7, RelationType.DIR_8,
    RelationType.DIR_1, RelationType.DIR_2, RelationType.DIR_3, RelationType.DIR_4,
    RelationType.NO_EDGE, RelationType.IMPLICIT,
], dtype=np.int64)


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned box, (x_min, y_min) top-left and (x_max, y_max) bottom-right."""

    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self):
        if not (self.x_max > self.x_min and self.y_max > self.y_min):
            raise ValueError(
                f"degenerate box: ({self.x_min}, {self.y_min}, {self.x_max}, {self.y_max})")

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def height(self) -> float:
        return self.y_max - self.y_min

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def centroid(self) -> tuple[float, float]:
        return (0.5 * (self.x_min + self.x_max), 0.5 * (self.y_min + self.y_max))

    def contains(self, other: "BoundingBox") -> bool:
        return (self.x_min <= other.x_min and self.y_min <= other.y_min
                and self.x_max >= other.x_max and self.y_max >= other.y_max)

    def iou(self, other: "BoundingBox") -> float:
        ix = min(self.x_max, other.x_max) - max(self.x_min, other.x_min)
        iy = min(self.y_max, other.y_max) - max(self.y_min, other.y_min)
        if ix <= 0.0 or iy <= 0.0:
            return 0.0
        inter = ix * iy
        return inter / (self.area + other.area - inter)

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x_min, self.y_min, self.x_max, self.y_max)


def classify_pair(a: BoundingBox, b: BoundingBox, diag: float, *,
                  iou_threshold: float = 0.5,
                  distance_fraction: float = 0.5) -> RelationType:
    """Relation label for the ordered pair (a, b), i.e. the edge a -> b.

    `diag` is the image diagonal length. When a and b coincide exactly both
    containment tests pass and the a-contains-b branch wins for either
    argument order; build_graph sidesteps the asymmetry by classifying each
    unordered pair once and mirroring through INVERSE.
    """
    if a.contains(b):
        return RelationType.CONTAINS
    if b.contains(a):
        return RelationType.INSIDE
    if a.iou(b) >= iou_threshold:
        return RelationType.OVERLAP
    ax, ay = a.centroid
    bx, by = b.centroid
    dx, dy = bx - ax, by - ay
    if np.hypot(dx, dy) <= distance_fraction * diag:
        theta = np.degrees(np.arctan2(dy, dx)) % 360.0
        return RelationType(RelationType.DIR_1 + min(int(theta // 45.0), 7))
    return RelationType.NO_EDGE


@dataclass
class SpatialGraph:
    """Dense label matrix over n boxes; relation[i, j] labels edge i -> j."""

    relation: np.ndarray

    def __post_init__(self):
        self.relation = np.asarray(self.relation, dtype=np.int64)
        if self.relation.ndim != 2 or self.relation.shape[0] != self.relation.shape[1]:
            raise ValueError(f"relation matrix must be square, got {self.relation.shape}")

    @property
    def n(self) -> int:
        return self.relation.shape[0]

    def validate(self) -> None:
        r = self.relation
        if r.size == 0:
            return
        if r.min() < 0 or r.max() > RelationType.NO_EDGE:
            raise ValueError("relation matrix contains out-of-range labels")
        if not np.all(np.diag(r) == RelationType.SELF):
            raise ValueError("diagonal must be the self relation")
        if np.any((r == RelationType.SELF) & ~np.eye(self.n, dtype=bool)):
            raise ValueError("self relation off the diagonal")
        if not np.array_equal(INVERSE[r], r.T):
            raise ValueError("relation matrix is not consistent under edge reversal")

    def type_planes(self) -> np.ndarray:
        """(12, n, n) boolean stack, one adjacency plane per relation type."""
        return np.stack([self.relation == t for t in range(N_SPATIAL_TYPES)])

    def to_json(self) -> str:
        names = [[RELATION_NAMES[r] for r in row] for row in self.relation]
        planes = self.type_planes().astype(int).tolist()
        return json.dumps({"n": self.n, "relations": names, "planes": planes},
                          sort_keys=True)

    def counts(self) -> dict[str, int]:
        values, freq = np.unique(self.relation, return_counts=True)
        return {RELATION_NAMES[v]: int(c) for v, c in zip(values, freq)}


def build_graph(boxes, image_width: float, image_height: float, *,
                iou_threshold: float = 0.5,
                distance_fraction: float = 0.5) -> SpatialGraph:
    """Classify every unordered pair and mirror through INVERSE."""
    n = len(boxes)
    diag = float(np.hypot(image_width, image_height))
    rel = np.full((n, n), RelationType.NO_EDGE, dtype=np.int64)
    np.fill_diagonal(rel, RelationType.SELF)
    for i in range(n):
        for j in range(i + 1, n):
            r = classify_pair(boxes[i], boxes[j], diag,
                              iou_threshold=iou_threshold,
                              distance_fraction=distance_fraction)
            rel[i, j] = r
            rel[j, i] = INVERSE[r]
    return SpatialGraph(rel)


def reverse_graph(g: SpatialGraph) -> SpatialGraph:
    """Swap every edge for its inverse label (an involution)."""
    return SpatialGraph(INVERSE[g.relation])


def randomize_graph(n: int, seed) -> SpatialGraph:
    """Replace structure with noise: each unordered pair gets a label drawn
    uniformly from the 11 non-self types plus no-edge, mirrored to keep the
    matrix consistent under reversal. Deterministic per seed."""
    rng = np.random.default_rng(seed)
    choices = np.arange(RelationType.CONTAINS, RelationType.NO_EDGE + 1, dtype=np.int64)
    rel = np.full((n, n), RelationType.NO_EDGE, dtype=np.int64)
    np.fill_diagonal(rel, RelationType.SELF)
    iu, ju = np.triu_indices(n, k=1)
    draws = rng.choice(choices, size=iu.size)
    rel[iu, ju] = draws
    rel[ju, iu] = INVERSE[draws]
    return SpatialGraph(rel)
