"""Small hand-checkable cases for each module."""

import math
from collections import deque

import networkx as nx
import numpy as np
import pytest

import gradcheck
from conftest import random_graph
from crowdaml import autodiff as ad
from crowdaml import experiment as ex
from crowdaml.autodiff import Adam, Tensor
from crowdaml.encoder import (
    EncoderParams,
    aggregate_neighbor_messages,
    encode,
    fuse_transaction_embedding,
    gather_endpoint_embeddings,
    perceptron_params,
    update_account_embedding,
    update_attribute_embedding,
)
from crowdaml.graph import (
    GroupPartition,
    GroupVector,
    LabelSet,
    TransactionGraph,
    build_group_vector,
    load_graph,
    sample_subgraph_batches,
    split_labels,
    weakly_connected_components,
)
from crowdaml.metrics import auc, f1_score
from crowdaml.multitask import (
    ModelParams,
    TrainConfig,
    classify,
    group_loss,
    laundering_loss,
    predict,
    total_loss,
    train,
)
from crowdaml.synth import (
    HackerConfig,
    SynthConfig,
    _undirected_weights,
    filter_groups,
    gen_crowdsourcing,
    gen_hacker,
    louvain,
)


def _graph(src, dst, n=None, feats=None):
    n = n or max(max(src), max(dst)) + 1
    return TransactionGraph.from_arrays(np.zeros((n, 1)) if feats is None else feats, src, dst,
                                        np.zeros((len(src), 1)))


# --- graph core ------------------------------------------------------------

def test_three_account_fixture(tmp_path):
    (tmp_path / "nodes.csv").write_text("account_id,f0\na,1\nb,2\nc,3\n")
    (tmp_path / "edges.csv").write_text("tx_id,src,dst,amount,timestamp,fee,token\n"
                                        "t1,a,b,10,100,0,0\nt2,b,c,20,200,0,0\n")
    g = load_graph(tmp_path / "nodes.csv", tmp_path / "edges.csv")
    assert g.num_transactions == 2 and g.check_incidence()
    assert [(g.account_ids[s], g.account_ids[d]) for s, d in zip(g.src, g.dst)] == [("a", "b"), ("b", "c")]
    # fee is constant, so it standardizes to zero
    assert np.all(g.attributes[:, 2] == 0)


def test_component_cases(rng):
    assert set(weakly_connected_components([("a", "b"), ("c", "d")]).groups) == {frozenset("ab"), frozenset("cd")}
    assert len(weakly_connected_components([])) == 0
    edges = [tuple(map(int, rng.integers(0, 100, 2))) for _ in range(200)]
    adj = {}
    for a, b in edges:
        adj.setdefault(a, set()).add(b)
        adj.setdefault(b, set()).add(a)
    seen, comps = set(), set()
    for start in adj:
        if start in seen:
            continue
        comp, queue = {start}, deque([start])
        while queue:
            for v in adj[queue.popleft()]:
                if v not in comp:
                    comp.add(v)
                    queue.append(v)
        seen |= comp
        if len(comp) >= 2:
            comps.add(frozenset(comp))
    assert set(weakly_connected_components(edges).groups) == comps


def test_group_vector_cases(rng):
    g = _graph([0, 1], [1, 2])
    vec = build_group_vector(g, GroupPartition((frozenset({0, 1}),)))
    assert vec.bits.tolist() == [1, 0] and not vec.degenerate
    assert build_group_vector(g, GroupPartition((frozenset({0, 1, 2}),))).degenerate
    g = random_graph(rng, n=15, m=50)
    groups = [frozenset(range(0, 4)), frozenset(range(4, 9)), frozenset(range(9, 12))]
    bits = build_group_vector(g, GroupPartition(tuple(groups))).bits
    for i, (s, d) in enumerate(zip(g.src, g.dst)):
        assert bits[i] == int(any(s in grp and d in grp for grp in groups))


def test_split_cases():
    y = np.array([0] * 90 + [1] * 10)
    assert split_labels(LabelSet.unsplit(y), 0.1, 0).train_mask.sum() == 10
    a = split_labels(LabelSet.unsplit(y), 0.9, 4)
    assert np.array_equal(a.train_mask, split_labels(LabelSet.unsplit(y), 0.9, 4).train_mask)
    half = split_labels(LabelSet.unsplit(y), 0.5, 1)
    assert abs(half.train_mask[y == 0].sum() - 45) <= 1 and abs(half.train_mask[y == 1].sum() - 5) <= 1


def test_batch_cases(rng):
    g = random_graph(rng, n=40, m=100)
    one = sample_subgraph_batches(g, 1, 0)
    assert len(one) == 1 and len(one[0].targets) == 100
    first = sample_subgraph_batches(g, 4, 5)
    again = sample_subgraph_batches(g, 4, 5)
    assert all(np.array_equal(a.tx_index, b.tx_index) for a, b in zip(first, again))
    counts = np.bincount(np.concatenate([v.tx_index[v.targets] for v in first]), minlength=100)
    assert np.all(counts == 1)


# --- numeric core ----------------------------------------------------------

def test_op_cases():
    assert ad.concat([Tensor([1.0, 2.0]), Tensor([3.0])]).data.tolist() == [1, 2, 3]
    assert ad.softmax(Tensor([[0.0, 0.0]])).data.tolist() == [[0.5, 0.5]]
    assert ad.scatter_mean(Tensor([[1.0, 3.0], [3.0, 5.0]]), [0, 0], 1).data.tolist() == [[2, 4]]
    x = Tensor(np.array([3.0]), requires_grad=True)
    ad.total(ad.mul(x, x)).backward()
    assert x.grad.tolist() == [6.0]
    w = Tensor(np.ones(3), requires_grad=True)
    assert np.all(ad.gradients(ad.add(ad.mul(ad.total(w), Tensor(0.0)), Tensor(5.0)), {"w": w})["w"] == 0)


def test_small_perceptron_with_coarse_step(rng):
    # 1 -> 3 -> 1 perceptron: 10 parameters, h = 1e-4
    p = perceptron_params("p", 1, 3, 1, 3)
    for k in ("p.b1", "p.b2"):
        p[k].data = rng.normal(size=p[k].shape)
    x = Tensor(rng.normal(size=(5, 1)))
    from crowdaml.encoder import perceptron
    build = lambda: ad.total(perceptron(x, p, "p", out_relu=False))  # noqa: E731
    assert sum(t.data.size for t in p.values()) == 10
    analytic = ad.gradients(build(), p)
    for k, t in p.items():
        num = gradcheck.numeric_gradient(build, t, h=1e-4)
        assert gradcheck.scale_relative_error(analytic[k], num) < 1e-4


def test_init_cases():
    assert np.array_equal(ad.init_params((64, 64), 7).data, ad.init_params((64, 64), 7).data)
    assert np.all(np.abs(ad.init_params((4, 4), 1).data) <= math.sqrt(6 / 8))


def test_adam_cases():
    p = Tensor(np.zeros(1), requires_grad=True)
    opt = Adam({"p": p})
    p.grad = np.ones(1)
    opt.step()
    assert abs(p.data[0] + 0.006) < 1e-6
    q = Tensor(np.array([1.5]), requires_grad=True)
    opt = Adam({"q": q})
    q.grad = np.zeros(1)
    opt.step()
    assert q.data[0] == 1.5


# --- encoder ---------------------------------------------------------------

def _identity_perceptron(prefix, d):
    return {f"{prefix}.w1": Tensor(np.eye(d)), f"{prefix}.b1": Tensor(np.zeros(d)),
            f"{prefix}.w2": Tensor(np.eye(d)), f"{prefix}.b2": Tensor(np.zeros(d))}


def test_aggregation_cases():
    g = _graph([0, 0], [1, 2], n=4)
    a = Tensor(np.array([[0.0, 0.0], [1.0, 3.0], [3.0, 5.0], [9.0, 9.0]]))
    m = aggregate_neighbor_messages(a, g, None).data
    assert m[0].tolist() == [2, 4] and m[3].tolist() == [0, 0]
    # a parallel transaction to a known neighbor adds nothing
    g_par = _graph([0, 0, 1], [1, 2, 0], n=4)
    assert aggregate_neighbor_messages(a, g_par, None).data[0].tolist() == [2, 4]
    # twinning every neighbor with an identical embedding keeps the mean
    twins = Tensor(np.array([[0.0, 0.0], [1.0, 3.0], [3.0, 5.0], [1.0, 3.0], [3.0, 5.0]]))
    g_twin = _graph([0, 0, 0, 0], [1, 2, 3, 4], n=5)
    assert aggregate_neighbor_messages(twins, g_twin, None).data[0].tolist() == [2, 4]


def test_update_cases():
    p = _identity_perceptron("u", 2)
    eps = Tensor(np.zeros(1))
    out = update_account_embedding(Tensor([[1.0, 0.0]]), Tensor([[2.0, 4.0]]), p, "u", eps)
    assert out.data.tolist() == [[3, 4]]
    a = Tensor([[0.5, 2.0]])
    assert update_account_embedding(a, Tensor(np.zeros((1, 2))), p, "u", eps).data.tolist() == [[0.5, 2.0]]
    pw = perceptron_params("w", 8, 4, 4, 0)
    assert update_attribute_embedding(Tensor(np.zeros((3, 4))), Tensor(np.zeros((3, 4))), pw, "w").data.shape == (3, 4)
    assert np.all(update_attribute_embedding(Tensor(np.zeros((3, 4))), Tensor(np.zeros((3, 4))), pw, "w").data == 0)
    pf = perceptron_params("f", 16, 4, 4, 0)
    fused = fuse_transaction_embedding(Tensor(np.zeros((3, 4))), Tensor(np.zeros((3, 4))),
                                       Tensor(np.zeros((3, 8))), pf, "f")
    assert fused.shape == (3, 4) and np.all(fused.data == 0)


def test_endpoint_cases():
    a = Tensor(np.array([[1.0], [2.0]]))
    assert gather_endpoint_embeddings(a, _graph([0], [1])).data.tolist() == [[1, 2]]
    assert gather_endpoint_embeddings(a, _graph([1], [1])).data.tolist() == [[2, 2]]


def test_encoder_default_shape_determinism_and_locality(rng):
    g = random_graph(rng, n=30, m=40)
    params = EncoderParams.init(3, 4, seed=1)
    t = encode(g, params).data
    assert t.shape == (40, 64)
    assert np.array_equal(t, encode(g, EncoderParams.init(3, 4, seed=1)).data)
    dist = dict(nx.all_pairs_shortest_path_length(nx.Graph(list(zip(g.src.tolist(), g.dst.tolist())))))
    feats = g.account_features.copy()
    far = [v for v in range(30) if all(dist.get(int(e), {}).get(v, 99) > 2 for e in (g.src[0], g.dst[0]))]
    feats[far] += 10.0
    h = TransactionGraph.from_arrays(feats, g.src, g.dst, g.attributes)
    assert np.array_equal(encode(h, params).data[0], t[0])


# --- multitask -------------------------------------------------------------

def test_classifier_cases(rng):
    p = ModelParams.init(3, 4, seed=0).classifier
    assert classify(Tensor(rng.normal(size=(5, 64))), p).shape == (5, 4)
    zero = {k: Tensor(np.zeros_like(v.data)) for k, v in p.items()}
    from crowdaml.multitask import DetectionMatrix
    m = DetectionMatrix(classify(Tensor(rng.normal(size=(5, 64))), zero))
    assert np.all(m.laundering_proba == 0.5) and np.all(m.group_proba == 0.5)


def test_loss_cases():
    labels = LabelSet(np.array([1]), np.array([True]), np.array([False]))
    z = Tensor(np.zeros((1, 4)))
    assert float(laundering_loss(z, labels, (1, 1)).data) == pytest.approx(math.log(2))
    assert float(laundering_loss(z, labels, (1, 2)).data) == pytest.approx(2 * math.log(2))
    assert float(group_loss(z, GroupVector(np.array([1]), False)).data) == pytest.approx(math.log(2))
    sure = Tensor(np.array([[-800.0, 800.0, -800.0, 800.0]]))
    assert float(laundering_loss(sure, labels).data) == 0.0
    assert float(group_loss(sure, GroupVector(np.array([1]), False)).data) == 0.0
    assert float(total_loss(Tensor(1.0), Tensor(0.4), 0.5).data) == pytest.approx(1.2)
    assert float(total_loss(Tensor(1.0), Tensor(0.4), 0.0).data) == 1.0
    assert float(total_loss(Tensor(1.0), Tensor(0.0), 1.0).data) == 1.0


def test_loss_properties(rng):
    z = Tensor(rng.normal(size=(20, 4)))
    y = rng.integers(0, 2, 20)
    mask = rng.random(20) < 0.6
    labels = LabelSet(y, mask, ~mask)
    base = float(laundering_loss(z, labels, (0.5, 3.0)).data)
    assert float(laundering_loss(z, labels, (1.5, 9.0)).data) == pytest.approx(3 * base, rel=1e-12)
    bits = rng.integers(0, 2, 20)
    lg = group_loss(z, GroupVector(bits, False))
    assert base >= 0 and float(lg.data) >= 0
    assert float(total_loss(laundering_loss(z, labels, (0.5, 3.0)), lg, 0.7).data) >= base


def test_prediction_cases(rng):
    pred, _ = predict(np.array([[2.0, 1.0, 0, 0], [1.0, 1.0, 0, 0]]))
    assert pred.tolist() == [0, 0]
    z = rng.normal(size=(30, 4))
    shifted = z + rng.normal(size=(30, 1))
    assert all(np.array_equal(a, b) for a, b in zip(predict(z), predict(shifted)))


def test_training_dynamics_on_benchmark():
    ds = gen_crowdsourcing(SynthConfig(seed=0))
    labels = split_labels(ds.labels, 0.7, 0)
    g = ds.graph.standardized(labels.train_mask)
    cfg = TrainConfig(epochs=50, seed=0)
    hist = train(g, labels, build_group_vector(g, ds.partition), cfg).history
    assert hist[49]["loss_total"] < hist[0]["loss_total"]


def test_group_embeddings_cluster_after_joint_training():
    ds = gen_crowdsourcing(SynthConfig(seed=1, background_account_count=300, benign_cluster_count=15))
    labels = split_labels(ds.labels, 0.7, 1)
    g = ds.graph.standardized(labels.train_mask)
    res = train(g, labels, build_group_vector(g, ds.partition), TrainConfig(epochs=60, seed=1))
    t = encode(g, res.params.encoder).data
    member = ds.partition.membership()
    gid = np.array([member.get(g.account_ids[s], -1) if member.get(g.account_ids[s], -1) ==
                    member.get(g.account_ids[d], -2) else -1 for s, d in zip(g.src, g.dst)])
    inside = gid >= 0
    u = t[inside] / np.maximum(np.linalg.norm(t[inside], axis=1, keepdims=True), 1e-12)
    sim = u @ u.T
    same = gid[inside][:, None] == gid[inside][None, :]
    np.fill_diagonal(same, False)
    other = gid[inside][:, None] != gid[inside][None, :]
    assert sim[same].mean() > sim[other].mean()


# --- generator -----------------------------------------------------------

def test_unshared_gangs_form_separate_laundering_components():
    ds = gen_crowdsourcing(SynthConfig(cross_gang_sharing=0.0, background_account_count=200))
    lab = ds.truth == 1
    g = nx.Graph(list(zip(ds.graph.src[lab].tolist(), ds.graph.dst[lab].tolist())))
    assert nx.number_connected_components(g) == 3


def test_hacker_shapes():
    ds = gen_hacker(HackerConfig(layer_count=3, width=2, background_account_count=100))
    lab = ds.truth == 1
    dag = nx.DiGraph(list(zip(ds.graph.src[lab].tolist(), ds.graph.dst[lab].tolist())))
    assert nx.dag_longest_path_length(dag) == 3
    path = gen_hacker(HackerConfig(layer_count=4, width=1, background_account_count=100))
    lab = path.truth == 1
    chain = nx.DiGraph(list(zip(path.graph.src[lab].tolist(), path.graph.dst[lab].tolist())))
    assert chain.number_of_edges() == 4 and max(d for _, d in chain.degree()) <= 2
    again = gen_hacker(HackerConfig(layer_count=4, width=1, background_account_count=100))
    assert np.array_equal(path.graph.src, again.graph.src)


def test_louvain_two_cliques_and_determinism():
    src, dst = [], []
    for block in (range(5), range(5, 10)):
        for i in block:
            for j in block:
                if i < j:
                    src.append(i)
                    dst.append(j)
    src.append(4)
    dst.append(5)
    adj = _undirected_weights(10, src, dst)
    labels = louvain(adj, seed=3)
    assert len(set(labels)) == 2 and labels == louvain(adj, seed=3)


def test_filter_cases():
    part = GroupPartition((frozenset({0}), frozenset(range(1, 6)), frozenset(range(6, 20006))))
    assert filter_groups(part).sizes() == [5]
    threes = GroupPartition((frozenset({0, 1, 2}), frozenset({3, 4, 5})))
    assert filter_groups(threes) == threes
    assert len(filter_groups(GroupPartition(()))) == 0


# --- metrics ---------------------------------------------------------------

def test_metric_cases():
    assert f1_score([1, 1, 1, 0], [1, 1, 0, 1]) == pytest.approx(2 / 3)
    assert f1_score([1, 0, 1], [1, 0, 1]) == 1.0
    assert f1_score([0, 0, 0], [1, 0, 1]) == 0.0
    assert auc([0.9, 0.8, 0.1], [1, 1, 0]) == 1.0
    assert auc([0.4, 0.4, 0.4], [1, 0, 1]) == 0.5
    assert auc([0.9, 0.8, 0.3], [1, 0, 1]) == 0.5


# --- experiment --------------------------------------------------------------

SMALL = {"synth.background_account_count": "200", "synth.benign_cluster_count": "10",
         "embed_dim": "8", "epochs": "3"}


def test_report_fields_and_repeatability(tmp_path):
    cfg = ex.build_config({**SMALL, "out_dir": str(tmp_path)})
    a = ex.run_experiment(cfg)
    b = ex.run_experiment(cfg, write=False)
    assert a.to_dict() == b.to_dict()
    assert a.metadata["mode"] == "multi-task" and a.metadata["lam"] == 0.5
    none = ex.run_experiment(ex.build_config({**SMALL, "group_source": "none"}), write=False)
    assert none.metadata["mode"] == "single-task"


def test_ratio_sweep_reports():
    reports = ex.label_ratio_sweep(ex.build_config(SMALL), [0.1, 0.5, 0.9], write=False)
    assert len(reports) == 3


def test_hacker_ablation_skips_missing_groups(tmp_path):
    small = {k: v for k, v in SMALL.items() if k != "synth.benign_cluster_count"}
    cfg = ex.build_config({**small, "scenario": "hacker", "out_dir": str(tmp_path)})
    reports = ex.ablation_group_source(cfg)
    assert "native" not in reports and "none" in reports
    assert {r.metadata["seed"] for r in reports.values()} == {0}
