"""Finite-difference checks for the tape ops, the graph layers, the map
autoencoder, the decoder heads and the full pipeline on a micro scene."""
from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .autodiff import Tensor, grad_check
from .autodiff import ops as T
from .heterograph import GraphConfig, build_graph
from .lanegraph import Lane, LaneGraph, discretize_map, enumerate_anchor_paths, project_agent
from .scene import AgentState, AgentTrack, AgentType, Scene
from .ssg import RelationType, SsgEdge

OP_TOL = 1e-4
E2E_TOL = 1e-3


@dataclass
class CheckResult:
    name: str
    error: float
    tol: float
    seconds: float

    @property
    def ok(self) -> bool:
        return bool(np.isfinite(self.error) and self.error < self.tol)


def _rand(rng, *shape, away=False):
    x = rng.normal(size=shape)
    if away:  # keep clear of kinks
        x = np.where(np.abs(x) < 0.1, 0.3 * np.sign(x + 1e-12), x)
    return Tensor(x, requires_grad=True)


def _weighted(fn, rng, *inputs):
    w = rng.normal(size=fn(*[Tensor(t.data) for t in inputs]).shape)
    return lambda *ts: (fn(*ts) * w).sum()


def op_checks() -> dict[str, Callable[[], float]]:
    def unary(fn, away=False, shape=(3, 4)):
        def run():
            rng = np.random.default_rng(0)
            x = _rand(rng, *shape, away=away)
            return grad_check(_weighted(fn, rng, x), x)
        return run

    def multi(fn, *shapes, away=False):
        def run():
            rng = np.random.default_rng(1)
            xs = [_rand(rng, *s, away=away) for s in shapes]
            return grad_check(_weighted(fn, rng, *xs), xs, call_with_inputs=True)
        return run

    idx = np.array([0, 1, 1, 3, 3, 3, 0])
    checks = {
        "add/mul/div": multi(lambda a, b: (a + b) * b / (b * b + 1.0), (3, 4), (1, 4)),
        "sub/neg/pow": multi(lambda a, b: -(a - b) ** 2, (3, 4), (3, 4)),
        "exp/log/sqrt": unary(lambda a: T.log(T.exp(a) + 1.0) + T.sqrt(a * a + 1.0)),
        "relu": unary(T.relu, away=True),
        "leaky_relu": unary(lambda a: T.leaky_relu(a, 0.2), away=True),
        "tanh": unary(T.tanh),
        "sin/cos": unary(lambda a: T.sin(a) * T.cos(a)),
        "atan2": multi(T.atan2, (6,), (6,), away=True),
        "matmul": multi(T.matmul, (2, 3, 4), (2, 4, 5)),
        "sum/mean": unary(lambda a: a.sum(axis=0) + a.mean(axis=1, keepdims=True)),
        "reshape/transpose": unary(lambda a: a.reshape(4, 3).T),
        "getitem": unary(lambda a: a[np.array([0, 2, 2]), 1:]),
        "concat/stack": multi(lambda a, b: T.stack([T.concat([a, b], 0)] * 2, 1), (2, 3), (4, 3)),
        "softmax": unary(lambda a: T.softmax(a, axis=1)),
        "gather_rows": unary(lambda a: T.gather_rows(a, np.array([2, 2, 0])), shape=(7, 3)),
        "scatter_sum": unary(lambda a: T.scatter_sum(a, idx, 4), shape=(7, 3)),
        "scatter_mean": unary(lambda a: T.scatter_mean(a, idx, 4), shape=(7, 3)),
        "scatter_softmax": unary(lambda a: T.scatter_softmax(a, idx, 4), shape=(7, 3)),
        "smooth_l1": multi(lambda a, b: T.smooth_l1(a * 2.0, b, 1.0, "none"), (5, 2), (5, 2)),
        "conv2d": multi(lambda x, w, b: T.conv2d(x, w, b, 2, 1), (2, 2, 6, 6), (3, 2, 4, 4), (3,)),
        "deconv2d": multi(lambda x, w, b: T.deconv2d(x, w, b, 2, 1), (2, 3, 3, 3), (3, 2, 4, 4), (2,)),
        "batchnorm2d": multi(lambda x, g, b: T.batchnorm2d(x, g, b, np.zeros(2), np.ones(2), True),
                             (3, 2, 3, 3), (2,), (2,)),
    }
    return checks


def micro_graph(num_anchors: int = 2):
    """A 25 m lane (6 map nodes at 5 m spacing), one car and one pedestrian."""
    g = LaneGraph({"A": Lane("A", np.array([[-12.5, 0.0], [12.5, 0.0]]), 3.5)})
    car = tuple(AgentState(t, -10.0 + 1.5 * (t + 4), 0.2, 3.0, 0.0, 0.0) for t in range(-4, 1))
    car_future = tuple(AgentState(t, -10.0 + 1.5 * (t + 4) + 0.1 * t, 0.2 + 0.05 * t, 3.0, 0.0, 0.0)
                       for t in range(1, 13))
    ped = tuple(AgentState(t, 2.0 + 0.4 * t, 3.0 + 0.3 * t, 0.8, 0.6, math.atan2(0.6, 0.8))
                for t in range(-2, 13))
    scene = Scene("micro", (AgentTrack("car", AgentType.RoadBound, car + car_future),
                            AgentTrack("ped", AgentType.NonRoadBound, ped)), "micro", origin=np.zeros(2))
    nodes = discretize_map(g, (0.0, 0.0))
    proj = project_agent(g, car[-1].position, car[-1].yaw, agent_id="car")
    anchors = enumerate_anchor_paths(g, proj[0], max_k=num_anchors) if proj else []
    ssg = [SsgEdge("car", "ped", RelationType.Lateral, 4.0), SsgEdge("ped", "car", RelationType.Lateral, 4.0)]
    cfg = GraphConfig(num_anchors=num_anchors)
    return build_graph(scene, g, nodes, ssg, {"car": anchors}, cfg), len(nodes)


def layer_checks() -> dict[str, Callable[[], float]]:
    from .model.layers import EGCN, GATv2, StackedMLP

    def graph(rng, n_src=5, n_dst=4, e=9, dim=8):
        src = rng.integers(0, n_src, e)
        dst = rng.integers(0, n_dst - 1, e)  # keep the last node isolated
        return (_rand(rng, n_src, dim), _rand(rng, n_dst, dim), src, dst, _rand(rng, e, 6))

    def egcn():
        rng = np.random.default_rng(2)
        layer = EGCN(8, 6, rng)
        hs, hd, s, d, e = graph(rng)
        w = rng.normal(size=(4, 8))
        return grad_check(lambda: (layer(hs, hd, s, d, e) * w).sum(),
                          [hs, hd, e] + layer.parameters())

    def gat():
        rng = np.random.default_rng(3)
        layer = GATv2(8, 6, 2, rng)
        hs, hd, s, d, e = graph(rng)
        w = rng.normal(size=(4, 8))
        return grad_check(lambda: (layer(hs, hd, s, d, e) * w).sum(),
                          [hs, hd, e] + layer.parameters())

    def heads():
        rng = np.random.default_rng(4)
        mlp = StackedMLP(3, 6, 5, 4, rng)
        x = _rand(rng, 3, 2, 6)
        w = rng.normal(size=(3, 2, 4))
        return grad_check(lambda: (mlp(x) * w).sum(), [x] + mlp.parameters())

    def autoencoder():
        from .model.autoencoder import AEConfig, MapAutoencoder, reconstruction_loss
        rng = np.random.default_rng(5)
        model = MapAutoencoder(AEConfig(channels=(10, 3, 3, 3, 3, 3, 4)), seed=5).train()
        masks = (rng.random((2, 10, 128, 128)) < 0.3).astype(np.float64)
        return grad_check(lambda: reconstruction_loss(model(masks)[1], masks), model.parameters(),
                          max_coords=150, rng=rng)

    return {"egcn": egcn, "gatv2": gat, "decoder_heads": heads, "autoencoder": autoencoder}


def end_to_end_check() -> float:
    from .model.loss import compute_loss
    from .model.network import HGNet, ModelConfig
    hg, _ = micro_graph()
    cfg = ModelConfig(hidden_dim=8, num_heads=2, num_modes=2, latent_dim=4, edge_hidden=4,
                      decoder_hidden=8)
    model = HGNet(cfg, seed=7).eval()
    rng = np.random.default_rng(7)
    z = {k: rng.normal(size=(len(hg.agents[k]), 4)) for k in ("rb", "nrb")}
    return grad_check(lambda: compute_loss(model(hg, z), hg, cfg).total, model.parameters(),
                      max_coords=400, rng=rng)


def run_suite(log: Callable[[CheckResult], None] | None = None) -> list[CheckResult]:
    jobs = [(f"op:{k}", f, OP_TOL) for k, f in op_checks().items()]
    jobs += [(f"layer:{k}", f, OP_TOL) for k, f in layer_checks().items()]
    jobs.append(("end_to_end", end_to_end_check, E2E_TOL))
    out = []
    for name, fn, tol in jobs:
        t0 = time.perf_counter()
        res = CheckResult(name, float(fn()), tol, time.perf_counter() - t0)
        out.append(res)
        if log:
            log(res)
    return out
