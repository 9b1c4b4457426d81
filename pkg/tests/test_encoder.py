import numpy as np
import pytest
import torch

from scenediff.encoder import GraphConvLayer, GraphEncoder, NodeEdgeState, set_mean
from scenediff.errors import DataError
from scenediff.scenegraph import SceneGraph

from gradcheck import grad_rel_err


def small_encoder(seed=0, **kw):
    args = dict(d_obj=6, d_rel=6, hidden=5, d_global=4, n_layers=2, seed=seed)
    args.update(kw)
    return GraphEncoder(5, 3, **args)


def set_identity_layer(layer: GraphConvLayer) -> None:
    """Identity configuration: the trunk selects the relation slice, every other
    map is the identity, all biases zero. On nonnegative inputs the relation
    update then reproduces its input slice exactly."""
    d = layer.d_obj
    with torch.no_grad():
        w = torch.zeros(layer.hidden, 3 * d)
        w[:, d : 2 * d] = torch.eye(d)
        layer.trunk[0].weight.copy_(w)
        layer.trunk[0].bias.zero_()
        layer.trunk[2].weight.copy_(torch.eye(d))
        layer.trunk[2].bias.zero_()
        for head in (layer.head_subject, layer.head_relation, layer.head_object):
            head[0].weight.copy_(torch.eye(d))
            head[0].bias.zero_()
        for lin in (layer.object_net[0], layer.object_net[2]):
            lin.weight.copy_(torch.eye(d))
            lin.bias.zero_()


def test_embed_labels_rows(small_vocab):
    enc = small_encoder()
    with torch.no_grad():
        enc.object_embedding.weight[0] = 1.0
    graph = SceneGraph([3, 3], [(0, 1, 1)])
    state = enc.embed_labels(graph)
    assert torch.equal(state.object_embs[0], state.object_embs[1])
    assert torch.equal(state.object_embs[0], enc.object_embedding.weight[3])
    ones = enc.embed_labels(SceneGraph([0], []))
    assert torch.equal(ones.object_embs[0], torch.ones(6))
    assert ones.relation_embs.shape == (0, 6)


def test_embed_labels_out_of_range():
    enc = small_encoder()
    with pytest.raises(DataError, match="out of embedding-table range"):
        enc.embed_labels(SceneGraph([7], []))


def test_identity_configuration_relation_update():
    layer = GraphConvLayer(d_obj=4, d_rel=4, hidden=4)
    set_identity_layer(layer)
    graph = SceneGraph([0, 1], [(0, 0, 1)])
    state = NodeEdgeState(
        object_embs=torch.tensor([[1.0, 0.0, 2.0, 0.5], [0.0, 1.0, 0.0, 3.0]]),
        relation_embs=torch.tensor([[0.5, 0.25, 1.0, 0.0]]),
    )
    out = layer(state, graph)
    assert torch.equal(out.relation_embs[0], state.relation_embs[0])


def test_isolated_node_identity_object_net():
    layer = GraphConvLayer(d_obj=4, d_rel=4, hidden=4)
    set_identity_layer(layer)
    graph = SceneGraph([0, 1, 2], [(0, 0, 1)])  # node 2 isolated
    embs = torch.tensor(
        [[1.0, 0.0, 2.0, 0.5], [0.0, 1.0, 0.0, 3.0], [0.25, 0.75, 1.5, 0.0]]
    )
    out = layer(NodeEdgeState(embs, torch.rand(1, 4)), graph)
    assert torch.equal(out.object_embs[2], embs[2])


def test_node_update_matches_bruteforce_oracle():
    torch.manual_seed(0)
    layer = GraphConvLayer(d_obj=6, d_rel=6, hidden=5)
    graph = SceneGraph([0, 1, 2], [(1, 0, 0), (2, 1, 1)])  # node 1 in 2 triplets
    state = NodeEdgeState(torch.randn(3, 6).abs(), torch.randn(2, 6).abs())
    out = layer(state, graph)
    # recompute candidates triplet by triplet
    cands = []
    for k, (s, r, o) in enumerate(graph.triplets):
        h = layer.trunk(
            torch.cat([state.object_embs[s], state.relation_embs[k], state.object_embs[o]])
        )
        cands.append(
            (layer.head_subject(h), layer.head_relation(h), layer.head_object(h))
        )
    assert torch.allclose(out.relation_embs[0], cands[0][1], atol=1e-12)
    assert torch.allclose(out.relation_embs[1], cands[1][1], atol=1e-12)
    # node 1 is subject of triplet 0 and object of triplet 1
    expected = (cands[0][0] + cands[1][2]) / 2.0
    assert torch.allclose(out.object_embs[1], expected, atol=1e-6)


def test_triplet_embedding_matches_per_term_oracle(small_vocab):
    torch.manual_seed(1)
    enc = small_encoder(seed=3)
    graph = SceneGraph([0, 1, 2], [(0, 0, 1), (1, 1, 2)])
    state = enc.embed_labels(graph)
    for k, (s, r, o) in enumerate(graph.triplets):
        expected = (
            enc.map_obj(state.object_embs[s])
            + enc.map_rel(state.relation_embs[k])
            + enc.map_obj(state.object_embs[o])
        )
        assert torch.allclose(enc.triplet_embedding(state, k, graph), expected, atol=1e-12)
    with pytest.raises(DataError):
        enc.triplet_embedding(state, 5, graph)


def test_triplet_embedding_identity_sum():
    enc = small_encoder(d_obj=2, d_rel=2, hidden=2, d_global=2, n_layers=1)
    with torch.no_grad():
        for mlp in (enc.map_obj, enc.map_rel):
            mlp[0].weight.copy_(torch.eye(2))
            mlp[0].bias.zero_()
            mlp[2].weight.copy_(torch.eye(2))
            mlp[2].bias.zero_()
    state = NodeEdgeState(
        object_embs=torch.tensor([[1.0, 0.0], [1.0, 1.0]]),
        relation_embs=torch.tensor([[0.0, 1.0]]),
    )
    graph = SceneGraph([0, 1], [(0, 0, 1)])
    assert torch.equal(enc.triplet_embedding(state, 0, graph), torch.tensor([2.0, 2.0]))
    zero = NodeEdgeState(torch.zeros(2, 2), torch.zeros(1, 2))
    assert torch.equal(enc.triplet_embedding(zero, 0, graph), torch.zeros(2))


def test_encode_default_width_is_512(small_vocab):
    enc = GraphEncoder(small_vocab.n_objects, small_vocab.n_relations, seed=0)
    out = enc(SceneGraph([0, 1], [(0, 0, 1)]))
    assert out.shape == (512,)


def test_encode_rejects_graph_without_triplets():
    enc = small_encoder()
    with pytest.raises(DataError, match="no relationships"):
        enc(SceneGraph([0, 1], []))


def test_encode_deterministic(chain_graph):
    enc = small_encoder(seed=4)
    a, b = enc(chain_graph), enc(chain_graph)
    assert torch.equal(a, b)


def test_encode_triplet_permutation_invariance():
    enc = small_encoder(seed=5)
    triplets = [(0, 0, 1), (1, 1, 2), (2, 2, 0), (0, 1, 2)]
    g1 = SceneGraph([0, 1, 2], triplets)
    g2 = SceneGraph([0, 1, 2], [triplets[i] for i in (2, 0, 3, 1)])
    assert torch.equal(enc(g1), enc(g2))


def test_encode_node_relabeling_invariance():
    enc = small_encoder(seed=6)
    g1 = SceneGraph([0, 1, 2], [(0, 0, 1), (1, 1, 2)])
    # relabel nodes via permutation (2, 0, 1): new index of old node i
    perm = {0: 2, 1: 0, 2: 1}
    new_objects = [0, 0, 0]
    for old, new in perm.items():
        new_objects[new] = g1.object_ids[old]
    g2 = SceneGraph(new_objects, [(perm[s], r, perm[o]) for s, r, o in g1.triplets])
    assert torch.equal(enc(g1), enc(g2))


def test_encode_relabeling_with_duplicate_labels():
    enc = small_encoder(seed=7)
    g1 = SceneGraph([2, 2, 4], [(0, 0, 1), (1, 1, 2)])
    perm = {0: 1, 1: 0, 2: 2}
    new_objects = [0, 0, 0]
    for old, new in perm.items():
        new_objects[new] = g1.object_ids[old]
    g2 = SceneGraph(new_objects, [(perm[s], r, perm[o]) for s, r, o in g1.triplets])
    assert torch.equal(enc(g1), enc(g2))


def test_shape_stability():
    enc = small_encoder(seed=8)
    small = enc(SceneGraph([0, 1], [(0, 0, 1)]))
    big = enc(SceneGraph([0, 1, 2, 3, 4], [(0, 0, 1), (1, 1, 2), (2, 2, 3), (3, 0, 4)]))
    assert small.shape == big.shape == (4,)


def test_set_mean_order_invariant():
    rows = torch.randn(5, 3, dtype=torch.float64)
    shuffled = rows[torch.tensor([3, 1, 4, 0, 2])]
    assert torch.equal(set_mean(rows), set_mean(shuffled))


def test_encoder_gradients_match_finite_differences(chain_graph):
    torch.manual_seed(2)
    enc = small_encoder(seed=9).double()
    w = torch.randn(4, dtype=torch.float64)
    params = [p for p in enc.parameters() if p.requires_grad]
    loss_fn = lambda: (enc(chain_graph) * w).sum()
    assert grad_rel_err(loss_fn, params) < 1e-4
