"""Input validation helpers shared by the estimators and the CLI."""

from __future__ import annotations

import numpy as np

from .errors import DataError
from .scenegraph import ImageGraphPair, SceneGraph, Vocabulary, validate


def check_image(image, name: str = "image") -> np.ndarray:
    arr = np.asarray(image)
    if arr.ndim != 3:
        raise DataError(f"{name} must be HxWxC, got shape {arr.shape}")
    if arr.min() < -1e-6 or arr.max() > 1.0 + 1e-6:
        raise DataError(f"{name} values must lie in [0, 1]")
    return arr


def check_graph(graph: SceneGraph, vocab: Vocabulary, name: str = "graph") -> SceneGraph:
    violations = validate(graph, vocab)
    if violations:
        raise DataError(f"{name} invalid: {violations}")
    return graph


def check_pairs(pairs, vocab: Vocabulary, require_triplets: bool = True) -> list[ImageGraphPair]:
    """Validate a corpus: graphs against the vocab, images in range, one shape."""
    pairs = list(pairs)
    if not pairs:
        raise DataError("empty corpus")
    shapes = set()
    for p in pairs:
        check_graph(p.graph, vocab, name=f"pair {p.pair_id!r}")
        if require_triplets and p.graph.n_triplets == 0:
            raise DataError(f"pair {p.pair_id!r}: graph has no relationships")
        check_image(p.image, name=f"pair {p.pair_id!r} image")
        shapes.add(np.asarray(p.image).shape)
    if len(shapes) != 1:
        raise DataError(f"images disagree on shape: {sorted(shapes)}")
    return pairs


def check_graphs(graphs, vocab: Vocabulary, n_max=None) -> list[SceneGraph]:
    graphs = list(graphs)
    if not graphs:
        raise DataError("no graphs given")
    for i, g in enumerate(graphs):
        check_graph(g, vocab, name=f"graph {i}")
        if g.n_triplets == 0:
            raise DataError(f"graph {i} has no relationships")
        if n_max is not None and g.n_objects > n_max:
            raise DataError(f"graph {i} exceeds capacity: {g.n_objects} > n_max={n_max}")
    return graphs
