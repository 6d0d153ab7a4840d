"""Convolutional map autoencoder over 10-channel raster patches."""
from __future__ import annotations

from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from ..autodiff import Adam, Module, NumericError, Tensor, load_checkpoint, no_grad, save_checkpoint
from ..autodiff import ops as T
from ..autodiff.nn import param
from ..lanegraph import CHANNELS
from ..raster import PATCH_PX, rasterize
from ..scene import GeneratorSpec, generate_synthetic_scenes
from ..templates import TEMPLATES, build_template
from .layers import BatchNorm2d

KERNEL = 4


@dataclass(frozen=True)
class AEConfig:
    channels: tuple[int, ...] = (len(CHANNELS), 16, 32, 64, 128, 128, 128)
    leaky_slope: float = 0.2
    lr: float = 2e-4
    epochs: int = 100
    batch_size: int = 16
    weight_decay: float = 0.0

    def __post_init__(self):
        if len(self.channels) != 7:
            raise ValueError("the autoencoder has six layers: give seven channel widths")
        if self.channels[0] != len(CHANNELS):
            raise ValueError(f"first channel width must be {len(CHANNELS)}")

    @property
    def latent_dim(self) -> int:
        return self.channels[-1]


def _padding(i: int) -> int:
    # 128 -> 64 -> 32 -> 16 -> 8 -> 4 with padding 1, then 4 -> 1 without
    return 0 if i == 5 else 1


class _ConvBlock(Module):
    def __init__(self, c_in, c_out, rng, transposed: bool, norm: bool = True):
        shape = (c_in, c_out, KERNEL, KERNEL) if transposed else (c_out, c_in, KERNEL, KERNEL)
        self.w = param(shape, rng, fan_in=c_in * KERNEL * KERNEL)
        self.b = param((c_out,), rng, fan_in=c_in * KERNEL * KERNEL)
        self.bn = BatchNorm2d(c_out) if norm else None
        self.transposed = transposed

    def __call__(self, x: Tensor, padding: int) -> Tensor:
        op = T.deconv2d if self.transposed else T.conv2d
        y = op(x, self.w, self.b, stride=2, padding=padding)
        return self.bn(y) if self.bn is not None else y


class MapAutoencoder(Module):
    """Encoder: six [conv k4 s2, batch norm, LeakyReLU] blocks taking a
    10x128x128 patch to a 128-vector. Decoder: the mirror image with
    transposed convolutions and ReLU, ending in tanh."""

    def __init__(self, cfg: AEConfig = AEConfig(), seed: int = 0):
        self.cfg = cfg
        rng = np.random.default_rng(seed)
        ch = cfg.channels
        self.enc = [_ConvBlock(ch[i], ch[i + 1], rng, transposed=False) for i in range(6)]
        rev = ch[::-1]
        self.dec = [_ConvBlock(rev[i], rev[i + 1], rng, transposed=True, norm=i < 5) for i in range(6)]

    def _check(self, x: np.ndarray | Tensor) -> Tensor:
        x = x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))
        if x.ndim == 3:
            x = x.reshape(1, *x.shape)
        if x.ndim != 4 or x.shape[1] != self.cfg.channels[0] or x.shape[2:] != (PATCH_PX, PATCH_PX):
            raise ValueError(f"expected patches of shape (N, {self.cfg.channels[0]}, {PATCH_PX}, {PATCH_PX}), "
                             f"got {x.shape}")
        return x

    def encode(self, x) -> Tensor:
        h = self._check(x)
        for i, blk in enumerate(self.enc):
            h = T.leaky_relu(blk(h, _padding(i)), self.cfg.leaky_slope)
        return h.reshape(h.shape[0], self.cfg.latent_dim)

    def decode(self, z: Tensor) -> Tensor:
        h = z.reshape(z.shape[0], self.cfg.latent_dim, 1, 1)
        for i, blk in enumerate(self.dec):
            h = blk(h, _padding(5 - i))
            h = T.relu(h) if i < 5 else T.tanh(h)
        return h

    def __call__(self, x) -> tuple[Tensor, Tensor]:
        z = self.encode(x)
        return z, self.decode(z)


def to_target(masks: np.ndarray) -> np.ndarray:
    """Binary masks -> {-1, +1}, matching the tanh output range."""
    return 2.0 * np.asarray(masks, dtype=np.float64) - 1.0


def reconstruction_loss(recon: Tensor, masks: np.ndarray) -> Tensor:
    return ((recon - to_target(masks)) ** 2).mean()


def mean_baseline_mse(masks: np.ndarray) -> float:
    """MSE of predicting each channel's mean value (in target space)."""
    tgt = to_target(masks)
    mu = tgt.mean(axis=(0, 2, 3), keepdims=True)
    return float(((tgt - mu) ** 2).mean())


def reconstruction_mse(model: MapAutoencoder, masks: np.ndarray, batch_size: int = 16) -> float:
    model.eval()
    total = 0.0
    with no_grad():
        for i in range(0, len(masks), batch_size):
            _, rec = model(masks[i:i + batch_size])
            total += float(((rec.data - to_target(masks[i:i + batch_size])) ** 2).sum())
    return total / masks.size


def sample_patches(n: int, seed: int, templates=TEMPLATES) -> np.ndarray:
    """Raster patches at the poses of generated agents. Templates are used
    round-robin; each patch takes the current pose of one agent."""
    rng = np.random.default_rng(seed)
    out = np.zeros((n, len(CHANNELS), PATCH_PX, PATCH_PX))
    graphs = {t: build_template(t) for t in templates}
    for i in range(n):
        name = templates[i % len(templates)]
        (scene,) = generate_synthetic_scenes(GeneratorSpec(name, n_rb=2, n_nrb=1),
                                             int(rng.integers(2 ** 31)))
        tr = scene.tracks[int(rng.integers(len(scene.tracks)))]
        st = tr.states[int(rng.integers(len(tr.states)))]
        out[i] = rasterize(graphs[name], st.position, st.yaw).channels
    return out


def pretrain_autoencoder(patches: np.ndarray, cfg: AEConfig = AEConfig(), seed: int = 0,
                         log: Callable[[int, float], None] | None = None) -> tuple[MapAutoencoder, list[float]]:
    """Train on ``patches`` (N, 10, 128, 128); returns the model and the
    mean training loss per epoch."""
    if len(patches) == 0:
        raise ValueError("no patches to train on")
    model = MapAutoencoder(cfg, seed)
    opt = Adam(model.parameters(), lr=cfg.lr, weight_decay=cfg.weight_decay)
    rng = np.random.default_rng(seed + 1)
    curve = []
    for epoch in range(1, cfg.epochs + 1):
        model.train()
        order = rng.permutation(len(patches))
        total = 0.0
        for i in range(0, len(order), cfg.batch_size):
            idx = np.sort(order[i:i + cfg.batch_size])
            if len(idx) < 2:   # batch statistics need more than one sample
                continue
            _, rec = model(patches[idx])
            loss = reconstruction_loss(rec, patches[idx])
            if not np.isfinite(loss.item()):
                raise NumericError(f"autoencoder loss became {loss.item()} in epoch {epoch}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += loss.item() * len(idx)
        curve.append(total / len(order))
        if log:
            log(epoch, curve[-1])
    model.eval()
    return model, curve


def save_autoencoder(model: MapAutoencoder, path: str | Path) -> None:
    meta = {"kind": "map_autoencoder", "config": asdict(model.cfg)}
    save_checkpoint(path, model.state_dict(), meta)


def load_autoencoder(path: str | Path) -> MapAutoencoder:
    state, meta = load_checkpoint(path)
    if meta.get("kind") != "map_autoencoder":
        raise ValueError(f"{path} is not a map autoencoder checkpoint")
    cfg = meta["config"]
    model = MapAutoencoder(AEConfig(**{**cfg, "channels": tuple(cfg["channels"])}))
    model.load_state_dict(state)
    return model.eval()
