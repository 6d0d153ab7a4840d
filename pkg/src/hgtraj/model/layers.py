"""Graph layers (edge-enhanced convolution, GATv2) and small building blocks."""
from __future__ import annotations

import numpy as np

from ..autodiff import Linear, Module, Tensor, param
from ..autodiff import ops as T


def _has_incoming(dst: np.ndarray, n: int) -> np.ndarray:
    mask = np.zeros((n, 1))
    mask[dst] = 1.0
    return mask


class EGCN(Module):
    """Edge-enhanced graph convolution.

    m_ji = ReLU(W_h h_j + W_e e_ji + b)      (one-layer MLP on concat(h_j, e))
    a_i  = mean_j m_ji
    h_i' = h_i + ReLU(U concat(h_i, a_i) + c)

    Nodes without incoming edges are returned unchanged. :meth:`delta`
    gives the residual term alone so several relations can be summed.
    """

    def __init__(self, dim: int, edge_dim: int, rng: np.random.Generator):
        self.w_h = param((dim, dim), rng, fan_in=dim + edge_dim)
        self.w_e = param((edge_dim, dim), rng, fan_in=dim + edge_dim)
        self.b = param((dim,), rng, fan_in=dim + edge_dim)
        self.update = Linear(2 * dim, dim, rng)

    def delta(self, h_src: Tensor, h_dst: Tensor, src: np.ndarray, dst: np.ndarray, e: Tensor) -> Tensor:
        n = h_dst.shape[0]
        if len(src) == 0:
            return Tensor(np.zeros(h_dst.shape))
        msg = T.relu(T.gather_rows(h_src @ self.w_h, src) + e @ self.w_e + self.b)
        agg = T.scatter_mean(msg, dst, n)
        upd = T.relu(self.update(T.concat([h_dst, agg], axis=1)))
        return upd * _has_incoming(dst, n)

    def __call__(self, h_src, h_dst, src, dst, e) -> Tensor:
        return h_dst + self.delta(h_src, h_dst, src, dst, e)


class GATv2(Module):
    """Multi-head GATv2 attention over incoming edges.

    score_ji = a_head . LeakyReLU(W_dst h_i + W_src h_j + W_e e_ji)   (per head)
    alpha    = softmax of the scores over the incoming edges of i
    out_i    = concat_heads(sum_j alpha_ji W_src h_j)

    With ``residual`` the layer returns h_i + out_i; isolated nodes keep h_i.
    """

    def __init__(self, dim: int, edge_dim: int, heads: int, rng: np.random.Generator,
                 residual: bool = True, negative_slope: float = 0.2):
        if dim % heads:
            raise ValueError(f"hidden dim {dim} not divisible by {heads} heads")
        self.heads, self.dh = heads, dim // heads
        self.w_src = param((dim, dim), rng)
        self.w_dst = param((dim, dim), rng)
        self.w_e = param((edge_dim, dim), rng)
        self.att = param((heads, dim // heads), rng, fan_in=dim // heads)
        self.residual = residual
        self.slope = negative_slope
        self.last_attention: np.ndarray | None = None

    def aggregate(self, h_src: Tensor, h_dst: Tensor, src: np.ndarray, dst: np.ndarray, e: Tensor) -> Tensor:
        n, dim = h_dst.shape
        if len(src) == 0:
            self.last_attention = np.zeros((0, self.heads))
            return Tensor(np.zeros((n, dim)))
        xs = h_src @ self.w_src
        xd = h_dst @ self.w_dst
        xs_e = T.gather_rows(xs, src)
        z = T.leaky_relu(xs_e + T.gather_rows(xd, dst) + e @ self.w_e, self.slope)
        z = z.reshape(len(src), self.heads, self.dh)
        score = (z * self.att).sum(axis=2)                       # (E, heads)
        alpha = T.scatter_softmax(score, dst, n)
        self.last_attention = alpha.data
        msg = xs_e.reshape(len(src), self.heads, self.dh) * alpha.reshape(len(src), self.heads, 1)
        return T.scatter_sum(msg, dst, n).reshape(n, dim)

    def __call__(self, h_src, h_dst, src, dst, e) -> Tensor:
        out = self.aggregate(h_src, h_dst, src, dst, e)
        return h_dst + out if self.residual else out


def time_encoding(t: np.ndarray, dim: int) -> np.ndarray:
    """Sinusoidal encoding of (relative, possibly negative) timestep indices."""
    t = np.asarray(t, dtype=np.float64).reshape(-1, 1)
    i = np.arange(dim // 2, dtype=np.float64)
    freq = 1.0 / (10000.0 ** (2 * i / dim))
    enc = np.zeros((len(t), dim))
    enc[:, 0::2] = np.sin(t * freq)
    enc[:, 1::2] = np.cos(t * freq)
    return enc


class StackedMLP(Module):
    """K independent two-layer MLPs evaluated together with batched matmuls.

    Input (K, A, d_in) -> output (K, A, d_out).
    """

    def __init__(self, k: int, d_in: int, hidden: int, d_out: int, rng: np.random.Generator):
        self.w1 = param((k, d_in, hidden), rng, fan_in=d_in)
        self.b1 = param((k, 1, hidden), rng, fan_in=d_in)
        self.w2 = param((k, hidden, d_out), rng, fan_in=hidden)
        self.b2 = param((k, 1, d_out), rng, fan_in=hidden)

    def __call__(self, x: Tensor) -> Tensor:
        return T.relu(x @ self.w1 + self.b1) @ self.w2 + self.b2


class BatchNorm2d(Module):
    buffer_names = ("running_mean", "running_var")

    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5):
        self.gamma = Tensor(np.ones(channels), requires_grad=True)
        self.beta = Tensor(np.zeros(channels), requires_grad=True)
        self.running_mean = np.zeros(channels)
        self.running_var = np.ones(channels)
        self.momentum, self.eps = momentum, eps

    def __call__(self, x: Tensor) -> Tensor:
        return T.batchnorm2d(x, self.gamma, self.beta, self.running_mean, self.running_var,
                             self.training, self.momentum, self.eps)
