"""Scene-graph data model, validation, and synthetic spatial-relation graphs.

A scene graph is a set of object nodes (label ids into a vocabulary) plus
directed relationship triplets (subject_index, relation_id, object_index).
Images use row-major HxWxC float arrays in [0, 1]; the y axis grows downward,
so "above" means a smaller y coordinate.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import DataError

# Predicates understood by synth_spatial_graph, in tie-break priority order.
SPATIAL_RELATIONS = ("left of", "right of", "above", "below", "inside", "surrounding")


@dataclass(frozen=True)
class Vocabulary:
    """Ordered object-label and relation-label sets with dense ids."""

    object_labels: tuple[str, ...]
    relation_labels: tuple[str, ...]
    _object_index: dict = field(init=False, repr=False, compare=False)
    _relation_index: dict = field(init=False, repr=False, compare=False)

    def __init__(self, object_labels: Sequence[str], relation_labels: Sequence[str]):
        object.__setattr__(self, "object_labels", tuple(object_labels))
        object.__setattr__(self, "relation_labels", tuple(relation_labels))
        for kind, labels in (("object", self.object_labels), ("relation", self.relation_labels)):
            if len(set(labels)) != len(labels):
                raise DataError(f"duplicate {kind} labels in vocabulary")
        object.__setattr__(self, "_object_index", {l: i for i, l in enumerate(self.object_labels)})
        object.__setattr__(self, "_relation_index", {l: i for i, l in enumerate(self.relation_labels)})

    @property
    def n_objects(self) -> int:
        return len(self.object_labels)

    @property
    def n_relations(self) -> int:
        return len(self.relation_labels)

    def object_id(self, label: str) -> int:
        try:
            return self._object_index[label]
        except KeyError:
            raise DataError(f"unknown object label {label!r}") from None

    def relation_id(self, label: str) -> int:
        try:
            return self._relation_index[label]
        except KeyError:
            raise DataError(f"unknown relation label {label!r}") from None

    def object_label(self, idx: int) -> str:
        if not 0 <= idx < len(self.object_labels):
            raise DataError(f"object id {idx} out of range")
        return self.object_labels[idx]

    def relation_label(self, idx: int) -> str:
        if not 0 <= idx < len(self.relation_labels):
            raise DataError(f"relation id {idx} out of range")
        return self.relation_labels[idx]


@dataclass(frozen=True)
class SceneGraph:
    """Objects (label ids) plus directed (subject_idx, relation_id, object_idx) triplets."""

    object_ids: tuple[int, ...]
    triplets: tuple[tuple[int, int, int], ...]

    def __init__(self, object_ids: Sequence[int], triplets: Sequence[Sequence[int]] = ()):
        object.__setattr__(self, "object_ids", tuple(int(i) for i in object_ids))
        object.__setattr__(
            self, "triplets", tuple((int(s), int(r), int(o)) for s, r, o in triplets)
        )

    @property
    def n_objects(self) -> int:
        return len(self.object_ids)

    @property
    def n_triplets(self) -> int:
        return len(self.triplets)

    def labels(self, vocab: Vocabulary) -> list[str]:
        """Object labels in node order."""
        return [vocab.object_label(i) for i in self.object_ids]


@dataclass(frozen=True)
class ImageGraphPair:
    """One image together with the scene graph that describes it."""

    pair_id: str
    image: np.ndarray  # HxWxC float in [0, 1]
    graph: SceneGraph
    ground_truth_objects: Optional[tuple[int, ...]] = None

    def __post_init__(self):
        img = np.asarray(self.image)
        if img.ndim != 3 or min(img.shape) < 1:
            raise DataError(f"pair {self.pair_id!r}: image must be HxWxC with positive dims")
        if self.ground_truth_objects is not None:
            object.__setattr__(
                self, "ground_truth_objects", tuple(int(i) for i in self.ground_truth_objects)
            )


@dataclass(frozen=True)
class BoxLayout:
    """Axis-aligned boxes (object_id, x0, y0, x1, y1) in normalized [0,1] coordinates."""

    boxes: tuple[tuple[int, float, float, float, float], ...]

    def __init__(self, boxes: Sequence[Sequence[float]]):
        parsed = tuple(
            (int(oid), float(x0), float(y0), float(x1), float(y1))
            for oid, x0, y0, x1, y1 in boxes
        )
        if not parsed:
            raise DataError("layout has no boxes")
        for oid, x0, y0, x1, y1 in parsed:
            if not (x0 < x1 and y0 < y1):
                raise DataError(f"box for object {oid} has non-positive extent")
        object.__setattr__(self, "boxes", parsed)


def validate(graph: SceneGraph, vocab: Vocabulary) -> list[str]:
    """Check every SceneGraph invariant against a vocabulary.

    Returns a list of human-readable violations; an empty list means the
    graph is valid. Violations are data, not exceptions.
    """
    violations = []
    n = graph.n_objects
    if n < 1:
        violations.append("graph has no objects")
    for i, oid in enumerate(graph.object_ids):
        if not 0 <= oid < vocab.n_objects:
            violations.append(f"object {i}: unknown label id {oid}")
    seen = set()
    for k, (s, r, o) in enumerate(graph.triplets):
        if not 0 <= s < n:
            violations.append(f"triplet {k}: subject index {s} out of range")
        if not 0 <= o < n:
            violations.append(f"triplet {k}: object index {o} out of range")
        if s == o:
            violations.append(f"triplet {k}: self-relation on node {s}")
        if not 0 <= r < vocab.n_relations:
            violations.append(f"triplet {k}: unknown relation id {r}")
        if (s, r, o) in seen:
            violations.append(f"triplet {k}: duplicate triplet {(s, r, o)}")
        seen.add((s, r, o))
    return violations


def _center(box):
    _, x0, y0, x1, y1 = box
    return (x0 + x1) / 2.0, (y0 + y1) / 2.0


def _strictly_inside(a, b) -> bool:
    # all four edge inequalities strict; touching boxes fall to the center rule
    _, ax0, ay0, ax1, ay1 = a
    _, bx0, by0, bx1, by1 = b
    return ax0 > bx0 and ay0 > by0 and ax1 < bx1 and ay1 < by1


def spatial_predicate(box_a, box_b) -> str:
    """Predicate for the ordered box pair (A, B) under the geometric rule.

    Containment wins; otherwise the dominant axis of the center-to-center
    vector decides, with ties resolved by the fixed priority
    left of > right of > above > below.
    """
    if _strictly_inside(box_a, box_b):
        return "inside"
    if _strictly_inside(box_b, box_a):
        return "surrounding"
    acx, acy = _center(box_a)
    bcx, bcy = _center(box_b)
    dx, dy = bcx - acx, bcy - acy
    if abs(dx) > abs(dy):
        return "left of" if dx > 0 else "right of"
    if abs(dy) > abs(dx):
        return "above" if dy > 0 else "below"
    # |dx| == |dy|: fixed priority order
    if dx > 0:
        return "left of"
    if dx < 0:
        return "right of"
    if dy > 0:
        return "above"
    if dy < 0:
        return "below"
    return "left of"


def synth_spatial_graph(
    layout: BoxLayout,
    relation_vocab: Vocabulary,
    pairing: str = "chain",
    seed: int = 0,
) -> SceneGraph:
    """Build a SceneGraph from a box layout using spatial relationship edges.

    ``pairing="chain"`` links adjacent boxes of a seeded random permutation
    (one triplet per adjacent pair, keeping graphs sparse); ``"all"`` emits
    one triplet per unordered pair, oriented by box index.
    """
    for name in SPATIAL_RELATIONS:
        relation_vocab.relation_id(name)  # raises DataError when missing
    boxes = layout.boxes
    if len(boxes) < 2:
        raise DataError("degenerate layout: need at least 2 boxes")
    if pairing == "chain":
        order = list(range(len(boxes)))
        random.Random(seed).shuffle(order)
        pairs = list(zip(order[:-1], order[1:]))
    elif pairing == "all":
        pairs = [(i, j) for i in range(len(boxes)) for j in range(i + 1, len(boxes))]
    else:
        raise DataError(f"unknown pairing mode {pairing!r}")
    triplets = []
    for i, j in pairs:
        pred = spatial_predicate(boxes[i], boxes[j])
        triplets.append((i, relation_vocab.relation_id(pred), j))
    return SceneGraph([b[0] for b in boxes], triplets)
