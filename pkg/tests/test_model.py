import math
from dataclasses import replace

import numpy as np
import pytest

from hgtraj.autodiff import NumericError, Tensor, grad_check, no_grad, step_lr
from hgtraj.gradsuite import micro_graph
from hgtraj.heterograph import AGENT_KINDS, EdgeSet, GraphConfig, HeteroGraph, NodeTable, collate
from hgtraj.model.autoencoder import (AEConfig, MapAutoencoder, load_autoencoder, pretrain_autoencoder,
                                      reconstruction_mse, save_autoencoder)
from hgtraj.model.layers import EGCN, GATv2, time_encoding
from hgtraj.model.loss import compute_loss, select_winner, step_headings, yaw_term
from hgtraj.model.network import HGNet, ModelConfig, Output, slot_assignment
from hgtraj.model.train import TrainConfig, load_model, prepare_samples, save_model, train
from hgtraj.scene import GeneratorSpec, generate_synthetic_scenes
from hgtraj.templates import build_template

SMALL = ModelConfig(hidden_dim=16, num_heads=4, num_modes=2, latent_dim=4, edge_hidden=8,
                    decoder_hidden=16)


def small_model(seed=0, **kw):
    return HGNet(replace(SMALL, **kw), seed)


def zmap(hg, dim=4, rng=None):
    rng = rng or np.random.default_rng(0)
    return {k: rng.normal(size=(len(hg.agents[k]), dim)) for k in AGENT_KINDS}


def micro_edges(rng, n_src=5, n_dst=4, e=7, dim=8, edge_dim=3):
    return (Tensor(rng.normal(size=(n_src, dim))), Tensor(rng.normal(size=(n_dst, dim))),
            rng.integers(0, n_src, e), rng.integers(0, n_dst - 1, e), Tensor(rng.normal(size=(e, edge_dim))))


# -- eGCN -----------------------------------------------------------------------------------
def test_egcn_without_edges_is_identity():
    rng = np.random.default_rng(0)
    layer = EGCN(8, 3, rng)
    h = Tensor(rng.normal(size=(4, 8)))
    out = layer(h, h, np.zeros(0, int), np.zeros(0, int), Tensor(np.zeros((0, 3))))
    np.testing.assert_array_equal(out.data, h.data)


def test_egcn_duplicated_edge_matches_single():
    rng = np.random.default_rng(1)
    layer = EGCN(8, 3, rng)
    hs, hd = Tensor(rng.normal(size=(3, 8))), Tensor(rng.normal(size=(2, 8)))
    e = rng.normal(size=(1, 3))
    once = layer(hs, hd, np.array([2]), np.array([0]), Tensor(e))
    twice = layer(hs, hd, np.array([2, 2]), np.array([0, 0]), Tensor(np.repeat(e, 2, axis=0)))
    np.testing.assert_allclose(once.data, twice.data, atol=1e-14)
    np.testing.assert_array_equal(once.data[1], hd.data[1])  # isolated node


def test_egcn_gradcheck():
    rng = np.random.default_rng(2)
    layer = EGCN(8, 3, rng)
    hs, hd, s, d, e = micro_edges(rng)
    w = rng.normal(size=(4, 8))
    assert grad_check(lambda: (layer(hs, hd, s, d, e) * w).sum(), [hs, hd, e] + layer.parameters()) < 1e-4


# -- GATv2 --------------------------------------------------------------------------------
def test_gat_single_edge_has_unit_attention():
    rng = np.random.default_rng(3)
    layer = GATv2(8, 3, 2, rng)
    hs, hd = Tensor(rng.normal(size=(3, 8))), Tensor(rng.normal(size=(2, 8)))
    layer(hs, hd, np.array([1]), np.array([0]), Tensor(rng.normal(size=(1, 3))))
    np.testing.assert_array_equal(layer.last_attention, np.ones((1, 2)))


def test_gat_identical_edges_split_evenly_and_isolated_unchanged():
    rng = np.random.default_rng(4)
    layer = GATv2(8, 3, 2, rng)
    hs, hd = Tensor(rng.normal(size=(3, 8))), Tensor(rng.normal(size=(2, 8)))
    e = np.repeat(rng.normal(size=(1, 3)), 2, axis=0)
    out = layer(hs, hd, np.array([1, 1]), np.array([0, 0]), Tensor(e))
    np.testing.assert_allclose(layer.last_attention, 0.5, atol=1e-15)
    np.testing.assert_array_equal(out.data[1], hd.data[1])


def test_gat_output_is_residual_plus_head_concat():
    rng = np.random.default_rng(5)
    layer = GATv2(8, 3, 2, rng)
    hs, hd = Tensor(rng.normal(size=(3, 8))), Tensor(rng.normal(size=(2, 8)))
    out = layer(hs, hd, np.array([2]), np.array([1]), Tensor(rng.normal(size=(1, 3))))
    # a single edge passes its full message W_src h_j
    np.testing.assert_allclose(out.data[1], hd.data[1] + hs.data[2] @ layer.w_src.data, atol=1e-12)


def test_gat_gradcheck():
    rng = np.random.default_rng(6)
    layer = GATv2(8, 3, 4, rng)
    hs, hd, s, d, e = micro_edges(rng)
    w = rng.normal(size=(4, 8))
    assert grad_check(lambda: (layer(hs, hd, s, d, e) * w).sum(), [hs, hd, e] + layer.parameters()) < 1e-4


def test_config_rejects_indivisible_heads():
    with pytest.raises(ValueError):
        ModelConfig(hidden_dim=130, num_heads=4)


# -- embeddings -------------------------------------------------------------------------------
def test_time_encoding_distinguishes_timesteps():
    enc = time_encoding(np.array([-4, -3, 0, 0]), 16)
    assert not np.allclose(enc[0], enc[1])
    np.testing.assert_array_equal(enc[2], enc[3])


def test_embedding_depends_on_time_for_agents_only():
    hg, _ = micro_graph()
    model = small_model()
    base = model.embed_nodes(hg)
    rb = hg.nodes["rb"]
    same = NodeTable(np.repeat(rb.feat[-1:], len(rb), 0), rb.t, np.ones(len(rb), bool), rb.agent)
    shifted = NodeTable(same.feat, rb.t - 3, same.valid, same.agent)
    e1 = model.embed_nodes(replace(hg, nodes={**hg.nodes, "rb": same}))
    e2 = model.embed_nodes(replace(hg, nodes={**hg.nodes, "rb": shifted}))
    # identical features at different timesteps differ; identical (feature, t) pairs agree
    assert not np.allclose(e1["rb"].data[0], e1["rb"].data[1])
    assert not np.allclose(e1["rb"].data, e2["rb"].data)
    np.testing.assert_array_equal(e1["m"].data, e2["m"].data)
    np.testing.assert_array_equal(e1["m"].data, base["m"].data)


# -- stages -------------------------------------------------------------------------------------
def test_single_step_history_gets_defined_embedding():
    hg, _ = micro_graph()
    ped_latest = hg.agents["nrb"].latest[0]
    assert hg.nodes["nrb"].valid.sum() == 3  # pedestrian observed from t=-2 only
    z_agent, _, _ = small_model().run_stages(hg, zmap(hg))
    assert np.isfinite(z_agent["nrb"].data).all() and ped_latest == 4


def test_cyclic_anchor_padding():
    np.testing.assert_array_equal(slot_assignment([2, 3, 0], 5),
                                  [[0, 1, 0, 1, 0], [0, 1, 2, 0, 1], [-1] * 5])


def test_padded_anchor_embeddings_repeat_and_zero():
    scenes = generate_synthetic_scenes(GeneratorSpec("y_fork", n_rb=2, n_nrb=1), 0)
    (s,) = prepare_samples(scenes, {"y_fork": build_template("y_fork")})
    model = small_model(num_modes=10)
    _, z_anchor, slots = model.run_stages(s.graph, zmap(s.graph))
    for a, aps in enumerate(s.graph.agents["rb"].anchors):
        n = len(aps)
        for k in range(10):
            if n == 0:
                assert not z_anchor.data[k, a].any()
            else:
                np.testing.assert_array_equal(z_anchor.data[k, a], z_anchor.data[k % n, a])


def test_agent_without_anchors_gets_zero_anchor_embedding():
    hg, _ = micro_graph()
    rb = hg.agents["rb"]
    bare = replace(hg, agents={**hg.agents, "rb": replace(rb, anchors=[[]])},
                   edges={k: (EdgeSet(v.src[:0], v.dst[:0], v.feat[:0]) if k.rel.startswith("anchor") else v)
                          for k, v in hg.edges.items()})
    _, z_anchor, slots = small_model().run_stages(bare, zmap(bare))
    assert (slots == -1).all() and not z_anchor.data.any()


def permuted(hg: HeteroGraph, rng) -> HeteroGraph:
    """Relabel the nodes of every kind and shuffle every edge list."""
    perm = {k: rng.permutation(hg.num_nodes(k)) for k in hg.nodes}
    inv = {k: np.argsort(p) for k, p in perm.items()}
    nodes = {}
    for k, nt in hg.nodes.items():
        p = perm[k]
        nodes[k] = NodeTable(nt.feat[p], *(None if a is None else a[p] for a in (nt.t, nt.valid, nt.agent)))
    edges = {}
    for kind, es in hg.edges.items():
        o = rng.permutation(len(es))
        edges[kind] = EdgeSet(inv[kind.src][es.src[o]], inv[kind.dst][es.dst[o]], es.feat[o])
    agents = {k: replace(a, latest=inv[k][a.latest]) for k, a in hg.agents.items()}
    return replace(hg, nodes=nodes, edges=edges, agents=agents)


def test_permutation_invariance():
    scenes = generate_synthetic_scenes(GeneratorSpec("lane_change", n_rb=3, n_nrb=2), 4)
    (s,) = prepare_samples(scenes, {"lane_change": build_template("lane_change")})
    model = small_model(num_modes=10)
    z = zmap(s.graph)
    a = model(s.graph, z)
    b = model(permuted(s.graph, np.random.default_rng(0)), z)
    for k in AGENT_KINDS:
        np.testing.assert_allclose(a.z_agent[k].data, b.z_agent[k].data, atol=1e-9)
        np.testing.assert_allclose(a.traj[k].data, b.traj[k].data, atol=1e-9)
    np.testing.assert_allclose(a.z_anchor.data, b.z_anchor.data, atol=1e-9)


def test_anchor_readout_does_not_write_back():
    hg, _ = micro_graph()
    model = small_model()
    z = zmap(hg)
    full = model.run_stages(hg, z)[0]
    no_anchor_edges = replace(hg, edges={k: (EdgeSet(v.src[:0], v.dst[:0], v.feat[:0])
                                             if k.rel.startswith("anchor") else v)
                                         for k, v in hg.edges.items()})
    stripped = model.run_stages(no_anchor_edges, z)[0]
    np.testing.assert_array_equal(full["rb"].data, stripped["rb"].data)


# -- map-latent fusion ---------------------------------------------------------------------------
def test_fuse_map_latent_modes():
    hg, _ = micro_graph()
    model = small_model()
    h = model.embed_nodes(hg)
    z = zmap(hg)
    e1 = model.fuse_map_latent(h, hg, z, False, None)["rb"].data
    e2 = model.fuse_map_latent(h, hg, z, False, None)["rb"].data
    np.testing.assert_array_equal(e1, e2)
    t1 = model.fuse_map_latent(h, hg, z, True, np.random.default_rng(1))["rb"].data
    t2 = model.fuse_map_latent(h, hg, z, True, np.random.default_rng(2))["rb"].data
    assert not np.allclose(t1, t2)
    zero = {k: np.zeros_like(v) for k, v in z.items()}
    assert np.isfinite(model.fuse_map_latent(h, hg, zero, True, np.random.default_rng(3))["rb"].data).all()
    with pytest.raises(ValueError):
        model.fuse_map_latent(h, hg, {k: np.zeros((len(v), 5)) for k, v in z.items()}, False, None)
    with pytest.raises(ValueError):
        model.fuse_map_latent(h, hg, z, True, None)


# -- decoder ----------------------------------------------------------------------------------------
def test_decoder_shapes_and_anchor_conditioning():
    hg, _ = micro_graph(num_anchors=3)
    model = small_model(num_modes=3)
    rng = np.random.default_rng(0)
    z_agent = {k: Tensor(rng.normal(size=(len(hg.agents[k]), 16))) for k in AGENT_KINDS}
    z_anchor = rng.normal(size=(3, 1, 16))
    traj, score = model.decode(z_agent, Tensor(z_anchor), hg)
    assert traj["rb"].shape == (1, 3, 12, 2) and traj["nrb"].shape == (1, 3, 12, 2)
    assert score["rb"].shape == (1, 3)
    for k in range(3):
        bumped = z_anchor.copy()
        bumped[k] += 1.0
        t2, s2 = model.decode(z_agent, Tensor(bumped), hg)
        for j in range(3):
            same = np.array_equal(t2["rb"].data[0, j], traj["rb"].data[0, j])
            assert same == (j != k)
        np.testing.assert_array_equal(t2["nrb"].data, traj["nrb"].data)
        np.testing.assert_array_equal(s2["nrb"].data, score["nrb"].data)


def test_distinct_anchors_give_distinct_modes():
    hg, _ = micro_graph()
    model = small_model()
    rng = np.random.default_rng(1)
    z_agent = {k: Tensor(rng.normal(size=(len(hg.agents[k]), 16))) for k in AGENT_KINDS}
    shared = rng.normal(size=(1, 1, 16))
    traj, _ = model.decode(z_agent, Tensor(np.concatenate([shared, shared + 0.5])), hg)
    assert not np.allclose(traj["rb"].data[0, 0], traj["rb"].data[0, 1])


# -- loss -------------------------------------------------------------------------------------------
@pytest.mark.parametrize("dtheta,expected", [(0.0, 0.0), (math.pi / 2, 1.0), (math.pi, 2.0)])
def test_yaw_term_analytic(dtheta, expected):
    theta = np.linspace(-3, 3, 12)
    val = yaw_term(theta + dtheta, Tensor(theta)).data
    np.testing.assert_allclose(val, expected, atol=1e-12)
    np.testing.assert_allclose(yaw_term(theta + dtheta + 2 * math.pi, Tensor(theta)).data, val, atol=1e-12)
    assert ((val >= 0) & (val <= 2)).all()


def aligned_output(hg):
    """Perfect prediction: mode 0 equals a ground truth that runs along the
    car's anchor; other modes are off; the winner's score leads by 1."""
    rb, nrb = hg.agents["rb"], hg.agents["nrb"]
    steps = np.arange(1, 13)[:, None] * np.array([1.5, 0.0])
    rb = replace(rb, future=(rb.position[0] + steps)[None])
    hg = replace(hg, agents={"rb": rb, "nrb": nrb})
    traj, score = {}, {}
    for k, ag in hg.agents.items():
        t = np.repeat(ag.future[:, None], 2, axis=1).copy()
        t[:, 1] += 5.0
        traj[k] = Tensor(t, requires_grad=True)
        score[k] = Tensor(np.tile([1.0, 0.0], (len(ag), 1)), requires_grad=True)
    return hg, Output(traj, score, slot_assignment([len(a) for a in rb.anchors], 2), {}, None)


def test_zero_loss_fixpoint():
    hg, out = aligned_output(micro_graph()[0])
    res = compute_loss(out, hg, SMALL)
    assert res.total.item() == 0.0
    assert res.breakdown() == {"loss": 0.0, "reg": 0.0, "score": 0.0, "yaw": 0.0}


def test_score_margin_and_reversed_heading():
    hg, out = aligned_output(micro_graph()[0])
    out.score["rb"].data[0] = [0.0, 0.1]      # loser scores 0.1 above the winner
    rev = out.traj["rb"].data[0, 0][::-1].copy()
    res = compute_loss(out, hg, SMALL)
    assert res.score.item() == pytest.approx(0.3 / 2, abs=1e-12)  # one of two agents violates by 0.3
    # a trajectory driven backwards along the anchor maximises the heading term
    hg2 = replace(hg, agents={**hg.agents, "rb": replace(hg.agents["rb"], future=rev[None],
                                                         position=rev[:1] + np.array([1.5, 0.0]))})
    out.traj["rb"].data[0, 0] = rev
    assert compute_loss(out, hg2, SMALL).yaw.item() == pytest.approx(2.0, abs=1e-12)


def test_step_headings_degenerate_fallback():
    pts = Tensor(np.array([[[1.0, 0.0], [1.0, 0.0], [1.0, 1.0], [1.0, 1.0]]]))
    theta = step_headings(pts, np.zeros(2), np.array([0.7])).data[0]
    np.testing.assert_allclose(theta, [0.0, 0.0, math.pi / 2, math.pi / 2], atol=1e-15)
    still = Tensor(np.zeros((1, 3, 2)))
    np.testing.assert_allclose(step_headings(still, np.zeros(2), np.array([0.7])).data, 0.7)


def test_winner_is_least_final_displacement_with_stable_ties():
    gt = np.zeros((1, 12, 2))
    traj = np.zeros((1, 3, 12, 2))
    traj[0, 0, -1] = [3.0, 0.0]
    traj[0, 1, -1] = [0.0, 1.0]
    traj[0, 2, -1] = [1.0, 0.0]
    assert select_winner(traj, gt)[0] == 1


def test_winner_takes_all_isolation():
    for trial in range(100):
        rng = np.random.default_rng(trial)
        hg, _ = micro_graph(num_anchors=3)
        model = small_model(seed=trial, num_modes=3)
        out = model(hg, zmap(hg, rng=rng))
        res = compute_loss(out, hg, model.cfg)
        model.zero_grad()
        res.reg.backward()
        for kind, head in (("rb", model.rb_traj), ("nrb", model.nrb_traj)):
            win = set(res.winners[kind].tolist())
            for k in range(3):
                grads = [p.grad[k] for p in (head.w1, head.b1, head.w2, head.b2)]
                if k in win:
                    assert any(np.abs(g).max() > 0 for g in grads)
                else:
                    assert all(not g.any() for g in grads), (trial, kind, k)


def test_loss_averages_over_agents():
    hg, out = aligned_output(micro_graph()[0])
    out.traj["nrb"].data[0, 0] += np.array([0.5, 0.0])   # off by 0.5 m everywhere (quadratic zone)
    res = compute_loss(out, hg, SMALL)
    # smooth-L1 mean over 24 coordinates: half are 0.125, half are 0 -> 0.0625; two agents
    assert res.reg.item() == pytest.approx(0.0625 / 2, abs=1e-15)


# -- training ---------------------------------------------------------------------------------
@pytest.fixture(scope="module")
def tiny_samples():
    scenes = generate_synthetic_scenes(GeneratorSpec("straight", n_rb=2, n_nrb=1, n_scenes=2), 3)
    return prepare_samples(scenes, {"straight": build_template("straight")}, GraphConfig(num_anchors=2), latent_dim=4)


def test_training_is_deterministic(tiny_samples, tmp_path):
    cfg = TrainConfig(epochs=2, scenes_per_pass=1, batch_agents=3, seed=5)
    a = train(tiny_samples, SMALL, cfg, tmp_path / "a")
    b = train(tiny_samples, SMALL, cfg, tmp_path / "b")
    assert a.history[0]["loss"] == b.history[0]["loss"]
    assert (tmp_path / "a" / "train_log.csv").read_text().splitlines()[0].startswith("epoch,lr,loss")
    assert len((tmp_path / "a" / "train_log.csv").read_text().splitlines()) == 3
    model, meta = load_model(tmp_path / "a" / "model.ckpt")
    for (n1, p1), (n2, p2) in zip(model.named_parameters(), a.model.named_parameters()):
        assert n1 == n2 and np.array_equal(p1.data, p2.data)
    assert meta["epoch"] == 2


def test_learning_rate_schedule():
    assert step_lr(1e-3, 11) == pytest.approx(0.25e-3)
    assert step_lr(1e-3, 5) == 1e-3 and step_lr(1e-3, 6) == 0.5e-3


def test_nan_loss_aborts(tiny_samples, monkeypatch):
    import hgtraj.model.train as tr
    orig = tr.HGNet.__init__

    def poisoned(self, *a, **kw):
        orig(self, *a, **kw)
        self.rb_traj.b2.data[:] = np.nan

    monkeypatch.setattr(tr.HGNet, "__init__", poisoned)
    with pytest.raises(NumericError):
        train(tiny_samples, SMALL, TrainConfig(epochs=1))


def test_model_checkpoint_roundtrip(tmp_path):
    model = small_model(seed=3)
    save_model(model, tmp_path / "m.ckpt")
    back, _ = load_model(tmp_path / "m.ckpt")
    hg, _ = micro_graph()
    z = zmap(hg)
    with no_grad():
        np.testing.assert_array_equal(model(hg, z).traj["rb"].data, back(hg, z).traj["rb"].data)


def test_collated_batch_matches_individual_scenes(tiny_samples):
    model = small_model()
    hg = collate([s.graph for s in tiny_samples])
    z = {k: np.concatenate([zmap(s.graph, rng=np.random.default_rng(i))[k] for i, s in enumerate(tiny_samples)])
         for k in AGENT_KINDS}
    joint = model(hg, z).traj["rb"].data
    parts = [model(s.graph, zmap(s.graph, rng=np.random.default_rng(i))).traj["rb"].data
             for i, s in enumerate(tiny_samples)]
    np.testing.assert_allclose(joint, np.concatenate(parts), atol=1e-10)


# -- autoencoder ------------------------------------------------------------------------------------
def test_autoencoder_shapes_and_errors():
    ae = MapAutoencoder(AEConfig(channels=(10, 4, 4, 4, 4, 4, 128))).eval()
    z, rec = ae(np.zeros((2, 10, 128, 128)))
    assert z.shape == (2, 128) and rec.shape == (2, 10, 128, 128)
    assert (np.abs(rec.data) <= 1).all()
    with pytest.raises(ValueError):
        ae(np.zeros((1, 9, 128, 128)))
    with pytest.raises(ValueError):
        AEConfig(channels=(10, 16, 32))


def test_autoencoder_learns_empty_patches(tmp_path):
    zeros = np.zeros((4, 10, 128, 128))
    model, curve = pretrain_autoencoder(zeros, AEConfig(channels=(10, 4, 4, 8, 8, 8, 128), lr=3e-3,
                                                        epochs=40, batch_size=2), seed=0)
    assert reconstruction_mse(model, zeros) < 0.05
    assert curve[-1] < curve[0]
    save_autoencoder(model, tmp_path / "ae.ckpt")
    back = load_autoencoder(tmp_path / "ae.ckpt")
    state, back_state = model.state_dict(), back.state_dict()
    assert set(state) == set(back_state) and any("running_var" in k for k in state)
    for k in state:
        np.testing.assert_array_equal(state[k], back_state[k])
