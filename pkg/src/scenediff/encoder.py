"""Multi-layer graph convolution network mapping a scene graph to a fixed-width
global embedding.

Label embeddings feed a stack of message-passing layers; each layer runs a
shared trunk over every (subject, relation, object) triplet concat and three
parallel heads emit a subject candidate, the relation update, and an object
candidate. A node's new embedding is the average of all candidate vectors it
participates in; isolated nodes fall back to a per-node MLP. The global
embedding pools mapped object and triplet embeddings in parallel and projects
the concatenation.

All set aggregations sum in a canonical (lexicographically sorted) order, so
reordering triplets or relabeling nodes leaves outputs bitwise unchanged.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
import torch
from torch import nn

from .errors import DataError
from .scenegraph import SceneGraph


@dataclass
class NodeEdgeState:
    """Per-node and per-triplet embeddings aligned with a graph's ordering."""

    object_embs: torch.Tensor  # (N_O, d_obj)
    relation_embs: torch.Tensor  # (N_T, d_rel)


def _lex_order(rows: torch.Tensor) -> torch.Tensor:
    """Indices sorting rows lexicographically (column 0 is the primary key)."""
    a = rows.detach().cpu().numpy()
    if a.ndim != 2 or a.shape[0] <= 1:
        return torch.arange(a.shape[0])
    return torch.as_tensor(np.ascontiguousarray(np.lexsort(a.T[::-1])), dtype=torch.long)


def set_mean(rows: torch.Tensor) -> torch.Tensor:
    """Order-independent mean of a set of row vectors."""
    return rows.index_select(0, _lex_order(rows)).mean(dim=0)


def _mlp(d_in: int, d_hidden: int, d_out: int) -> nn.Sequential:
    return nn.Sequential(nn.Linear(d_in, d_hidden), nn.ReLU(), nn.Linear(d_hidden, d_out))


def _reset_linear(m: nn.Module, generator) -> None:
    for mod in m.modules():
        if isinstance(mod, nn.Linear):
            bound = 1.0 / mod.in_features**0.5
            mod.weight.data.uniform_(-bound, bound, generator=generator)
            mod.bias.data.zero_()


class GraphConvLayer(nn.Module):
    """One message-passing layer over (subject, relation, object) triplets."""

    def __init__(self, d_obj: int = 512, d_rel: int = 512, hidden: int = 512):
        super().__init__()
        self.d_obj, self.d_rel, self.hidden = d_obj, d_rel, hidden
        self.object_net = nn.Sequential(
            nn.Linear(d_obj, d_obj), nn.ReLU(), nn.Linear(d_obj, d_obj), nn.ReLU()
        )
        self.trunk = nn.Sequential(
            nn.Linear(2 * d_obj + d_rel, hidden), nn.ReLU(), nn.Linear(hidden, hidden), nn.ReLU()
        )
        self.head_subject = nn.Sequential(nn.Linear(hidden, d_obj), nn.ReLU())
        self.head_relation = nn.Sequential(nn.Linear(hidden, d_rel), nn.ReLU())
        self.head_object = nn.Sequential(nn.Linear(hidden, d_obj), nn.ReLU())

    def forward(self, state: NodeEdgeState, graph: SceneGraph) -> NodeEdgeState:
        obj, rel = state.object_embs, state.relation_embs
        if obj.shape[0] != graph.n_objects or rel.shape[0] != graph.n_triplets:
            raise DataError("state shapes do not match graph")
        if graph.n_triplets == 0:
            return NodeEdgeState(self.object_net(obj), rel)
        subj = torch.tensor([t[0] for t in graph.triplets])
        objx = torch.tensor([t[2] for t in graph.triplets])
        h = self.trunk(torch.cat([obj[subj], rel, obj[objx]], dim=1))  # (N_T, hidden)
        cand_s = self.head_subject(h)
        cand_r = self.head_relation(h)
        cand_o = self.head_object(h)
        new_obj = []
        for n in range(graph.n_objects):
            parts = [cand_s[subj == n], cand_o[objx == n]]
            cands = torch.cat(parts, dim=0)
            if cands.shape[0] == 0:
                new_obj.append(self.object_net(obj[n : n + 1])[0])
            else:
                new_obj.append(set_mean(cands))
        return NodeEdgeState(torch.stack(new_obj), cand_r)


class GraphEncoder(nn.Module):
    """Scene graph -> d_global embedding (label embeddings, L conv layers,
    parallel pooled object/triplet projections)."""

    def __init__(
        self,
        n_object_labels: int,
        n_relation_labels: int,
        d_obj: int = 512,
        d_rel: int = 512,
        hidden: int = 512,
        d_global: int = 512,
        n_layers: int = 5,
        seed: Optional[int] = None,
    ):
        super().__init__()
        if n_layers < 1:
            raise DataError("need at least one graph conv layer")
        self.d_obj, self.d_rel, self.d_global = d_obj, d_rel, d_global
        self.object_embedding = nn.Embedding(n_object_labels, d_obj)
        self.relation_embedding = nn.Embedding(n_relation_labels, d_rel)
        self.layers = nn.ModuleList(
            GraphConvLayer(d_obj, d_rel, hidden) for _ in range(n_layers)
        )
        self.map_obj = _mlp(d_obj, d_global, d_global)
        self.map_rel = _mlp(d_rel, d_global, d_global)
        self.projection = nn.Linear(2 * d_global, d_global)
        self.reset_parameters(seed)

    def reset_parameters(self, seed: Optional[int] = None) -> None:
        g = None
        if seed is not None:
            g = torch.Generator()
            g.manual_seed(seed)
        _reset_linear(self, g)
        self.object_embedding.weight.data.normal_(0.0, 0.02, generator=g)
        self.relation_embedding.weight.data.normal_(0.0, 0.02, generator=g)

    def embed_labels(self, graph: SceneGraph) -> NodeEdgeState:
        """Look up label embeddings; rows follow the graph's node/triplet order."""
        for i in graph.object_ids:
            if not 0 <= i < self.object_embedding.num_embeddings:
                raise DataError(f"object id {i} out of embedding-table range")
        for _, r, _ in graph.triplets:
            if not 0 <= r < self.relation_embedding.num_embeddings:
                raise DataError(f"relation id {r} out of embedding-table range")
        obj = self.object_embedding(torch.tensor(graph.object_ids, dtype=torch.long))
        if graph.n_triplets:
            rel = self.relation_embedding(
                torch.tensor([t[1] for t in graph.triplets], dtype=torch.long)
            )
        else:
            rel = self.relation_embedding.weight[:0]
        return NodeEdgeState(obj, rel)

    def triplet_embeddings(self, state: NodeEdgeState, graph: SceneGraph) -> torch.Tensor:
        """Per-triplet embeddings map_obj(s) + map_rel(r) + map_obj(o), shape (N_T, d_global)."""
        subj = torch.tensor([t[0] for t in graph.triplets])
        objx = torch.tensor([t[2] for t in graph.triplets])
        return (
            self.map_obj(state.object_embs[subj])
            + self.map_rel(state.relation_embs)
            + self.map_obj(state.object_embs[objx])
        )

    def triplet_embedding(
        self, state: NodeEdgeState, triplet_index: int, graph: SceneGraph
    ) -> torch.Tensor:
        if not 0 <= triplet_index < graph.n_triplets:
            raise DataError(f"triplet index {triplet_index} out of range")
        return self.triplet_embeddings(state, graph)[triplet_index]

    def forward(self, graph: SceneGraph) -> torch.Tensor:
        if graph.n_triplets == 0:
            raise DataError("graph has no relationships")
        state = self.embed_labels(graph)
        for layer in self.layers:
            state = layer(state, graph)
        pooled_obj = set_mean(self.map_obj(state.object_embs))
        pooled_tri = set_mean(self.triplet_embeddings(state, graph))
        return self.projection(torch.cat([pooled_obj, pooled_tri]))

    def encode(self, graph: SceneGraph) -> torch.Tensor:
        """Alias for forward; returns the global d_global embedding."""
        return self(graph)

    def encode_batch(self, graphs) -> torch.Tensor:
        return torch.stack([self(g) for g in graphs])
