"""Fourier-feature residual MLP surrogate ``(x, y, t) -> (xi, uh, vh)``.

Parameters live in one flat float64 vector (the ``ParamVector``); the network
object only carries the frozen pieces: configuration, Fourier matrix and input
normaliser.
"""
from __future__ import annotations

import io
import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import jax.numpy as jnp
import numpy as np

from ._io import atomic_write_bytes
from .autodiff import softplus

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class NetworkConfig:
    width: int = 64
    depth: int = 5
    n_fourier: int = 32
    sigma: float = 2.0
    residual: bool = False
    activation: str = "tanh"
    head_scale: float = 1.0  # multiplies the Xavier draw of the output layer

    def __post_init__(self):
        if self.width < 1 or self.depth < 1 or self.n_fourier < 1 or self.sigma < 0:
            raise ValueError("width, depth and n_fourier must be positive and sigma non-negative")
        if not self.head_scale > 0:
            raise ValueError("head_scale must be positive")
        if self.activation != "tanh":
            raise ValueError("only tanh activation is supported")


@dataclass(frozen=True)
class Normalizer:
    mean: tuple
    std: tuple

    @classmethod
    def for_domain(cls, centroids, t0: float, T: float) -> "Normalizer":
        """Centroid mean/std for x, y; moments of U[t0, T] for t."""
        c = np.asarray(centroids, dtype=float)
        sx, sy = c.std(axis=0)
        return cls(
            (float(c[:, 0].mean()), float(c[:, 1].mean()), 0.5 * (t0 + T)),
            (float(sx) if sx > 0 else 1.0, float(sy) if sy > 0 else 1.0, (T - t0) / math.sqrt(12.0)),
        )

    def normalize(self, xyt):
        return (xyt - jnp.asarray(self.mean)) / jnp.asarray(self.std)

    def denormalize(self, z):
        return z * jnp.asarray(self.std) + jnp.asarray(self.mean)


@dataclass(frozen=True, eq=False)
class SurrogateNetwork:
    config: NetworkConfig
    B: np.ndarray  # (m, 3)
    normalizer: Normalizer

    @property
    def shapes(self) -> list[tuple[int, int]]:
        c = self.config
        dims = [2 * c.n_fourier] + [c.width] * c.depth + [3]
        return list(zip(dims[:-1], dims[1:]))

    @property
    def n_params(self) -> int:
        return sum(i * o + o for i, o in self.shapes)

    def unflatten(self, params):
        out, k = [], 0
        for i, o in self.shapes:
            W = params[k : k + i * o].reshape(i, o)
            k += i * o
            b = params[k : k + o]
            k += o
            out.append((W, b))
        return out

    def embed(self, z):
        return embed(self.B, z)

    def raw(self, params, xyt):
        """Head output ``(eta_raw, uh, vh)`` at physical points ``xyt`` (..., 3)."""
        z = self.normalizer.normalize(jnp.asarray(xyt))
        a = self.embed(z)
        layers = self.unflatten(params)
        for W, b in layers[:-1]:
            nxt = jnp.tanh(a @ W + b)
            a = a + nxt if (self.config.residual and W.shape[0] == W.shape[1]) else nxt
        W, b = layers[-1]
        return a @ W + b

    def predict(self, params, xyt, h_s):
        """Perturbation state ``(xi, uh, vh)``; recovered depth is ``softplus(eta_raw + h_s)``."""
        r = self.raw(params, xyt)
        h_s = jnp.asarray(h_s)
        h = softplus(r[..., 0] + h_s)
        return jnp.stack([h - h_s, r[..., 1], r[..., 2]], axis=-1)

    __call__ = predict


def embed(B, z):
    """``[cos(B z), sin(B z)]`` for normalised inputs ``z`` (..., 3)."""
    proj = jnp.asarray(z) @ jnp.asarray(B).T
    return jnp.concatenate([jnp.cos(proj), jnp.sin(proj)], axis=-1)


def init_network(config: NetworkConfig, seed: int, normalizer: Normalizer | None = None):
    """Build a network and its initial flat parameter vector.

    Fourier rows are drawn from N(0, sigma^2), weights Xavier-uniform, biases zero.
    The output layer's weights are additionally multiplied by ``config.head_scale``.
    """
    rng = np.random.default_rng(seed)
    B = rng.normal(0.0, 1.0, size=(config.n_fourier, 3)) * config.sigma
    normalizer = normalizer or Normalizer((0.0, 0.0, 0.0), (1.0, 1.0, 1.0))
    net = SurrogateNetwork(config, B, normalizer)
    chunks = []
    shapes = net.shapes
    for k, (i, o) in enumerate(shapes):
        lim = math.sqrt(6.0 / (i + o))
        w = rng.uniform(-lim, lim, size=i * o)
        chunks.append(w * config.head_scale if k == len(shapes) - 1 else w)
        chunks.append(np.zeros(o))
    return net, np.concatenate(chunks)


# --------------------------------------------------------------------------- checkpoints


def save_checkpoint(path, net: SurrogateNetwork, params, extra: dict | None = None) -> None:
    """Write ``(config, normaliser, B, params)`` as a versioned ``.npz``.

    ``params`` may be a single vector or a list of vectors (one per time window).
    """
    plist = params if isinstance(params, (list, tuple)) else [params]
    meta = {
        "version": CHECKPOINT_VERSION,
        "config": asdict(net.config),
        "normalizer": {"mean": list(net.normalizer.mean), "std": list(net.normalizer.std)},
        "n_windows": len(plist),
        "extra": extra or {},
    }
    arrays = {"meta": np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8), "B": np.asarray(net.B)}
    for k, p in enumerate(plist):
        arrays[f"params_{k}"] = np.asarray(p, dtype=np.float64)
    buf = io.BytesIO()
    np.savez(buf, **arrays)
    atomic_write_bytes(path, buf.getvalue())


def load_checkpoint(path):
    """Return ``(net, params_list, meta)``."""
    path = Path(path)
    with np.load(path) as z:
        meta = json.loads(bytes(z["meta"]).decode())
        if meta.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {meta.get('version')}")
        B = np.array(z["B"])
        params = [np.array(z[f"params_{k}"]) for k in range(meta["n_windows"])]
    norm = Normalizer(tuple(meta["normalizer"]["mean"]), tuple(meta["normalizer"]["std"]))
    net = SurrogateNetwork(NetworkConfig(**meta["config"]), B, norm)
    return net, params, meta
