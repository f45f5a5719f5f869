"""Minimal dual-stream Q-network with exact-gradient backprop.

Architecture (all float64, no pooling so the map stays translation
sensitive):

    image (3, Y, Z) -> conv 5x5 stride 1 -> ReLU -> flatten
                    -> dense -> ReLU (x3)          [image branch]
    history (P*C)   -> pass-through                [history branch]
    concat -> dense -> ReLU -> linear -> Q-values (P*C)

Training minimizes the mean Huber loss (transition point 1) between the
Q-value of each batch row's taken action and its target, with RMSprop

    a <- rho * a + (1 - rho) * g^2
    p <- p - lr * g / sqrt(a + eps)

Parameters are a flat name -> array dict; initialization is fan-in-scaled
uniform, U(-1/sqrt(fan_in), +1/sqrt(fan_in)), from a caller-provided seed.
Checkpoints serialize to a single binary file with a JSON meta header and a
named-tensor index.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field, asdict
from functools import lru_cache
from pathlib import Path
from typing import Mapping

import numpy as np

KERNEL = 5
_CKPT_MAGIC = b"TLCK"
_CKPT_VERSION = 1


@dataclass(frozen=True)
class QNetworkSpec:
    image_shape: tuple[int, int, int]          # (channels, Y, Z)
    history_width: int
    n_actions: int
    conv_filters: int = 8
    dense_image: tuple[int, ...] = (128, 64, 32)
    head_width: int = 64

    def __post_init__(self) -> None:
        c, y, z = self.image_shape
        if y < KERNEL or z < KERNEL:
            raise ValueError(f"image {y}x{z} smaller than the {KERNEL}x{KERNEL} kernel")
        if len(self.dense_image) != 3:
            raise ValueError("image branch uses exactly three dense layers")
        if self.n_actions < 1 or self.history_width < 0:
            raise ValueError("bad output/history width")

    @property
    def conv_out(self) -> tuple[int, int, int]:
        c, y, z = self.image_shape
        return self.conv_filters, y - KERNEL + 1, z - KERNEL + 1

    @property
    def flat_width(self) -> int:
        f, oy, oz = self.conv_out
        return f * oy * oz

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: Mapping) -> "QNetworkSpec":
        return cls(image_shape=tuple(d["image_shape"]), history_width=d["history_width"],
                   n_actions=d["n_actions"], conv_filters=d["conv_filters"],
                   dense_image=tuple(d["dense_image"]), head_width=d["head_width"])


def init_params(spec: QNetworkSpec, seed: int) -> dict[str, np.ndarray]:
    """Fan-in-scaled uniform weights, zero biases; deterministic in seed."""
    rng = np.random.default_rng(seed)
    c = spec.image_shape[0]

    def u(fan_in: int, shape) -> np.ndarray:
        bound = 1.0 / np.sqrt(fan_in)
        return rng.uniform(-bound, bound, size=shape)

    params: dict[str, np.ndarray] = {}
    params["conv_w"] = u(c * KERNEL * KERNEL, (spec.conv_filters, c, KERNEL, KERNEL))
    params["conv_b"] = np.zeros(spec.conv_filters)
    widths = [spec.flat_width, *spec.dense_image]
    for i in range(3):
        params[f"img{i}_w"] = u(widths[i], (widths[i], widths[i + 1]))
        params[f"img{i}_b"] = np.zeros(widths[i + 1])
    concat = spec.dense_image[-1] + spec.history_width
    params["head_w"] = u(concat, (concat, spec.head_width))
    params["head_b"] = np.zeros(spec.head_width)
    params["out_w"] = u(spec.head_width, (spec.head_width, spec.n_actions))
    params["out_b"] = np.zeros(spec.n_actions)
    return params


def _check_finite(name: str, arr: np.ndarray) -> None:
    if not np.all(np.isfinite(arr)):
        bad = np.argwhere(~np.isfinite(arr))[0]
        raise FloatingPointError(f"non-finite value in {name} at index {tuple(bad)}")


@lru_cache(maxsize=8)
def _patch_index(c: int, y: int, z: int) -> np.ndarray:
    """Flat gather index realizing im2col as one fancy-indexing pass."""
    oy, oz = y - KERNEL + 1, z - KERNEL + 1
    offs = (np.arange(c)[:, None, None] * y * z
            + np.arange(KERNEL)[None, :, None] * z
            + np.arange(KERNEL)[None, None, :]).ravel()
    tops = (np.arange(oy)[:, None] * z + np.arange(oz)[None, :]).ravel()
    return tops[:, None] + offs[None, :]            # (OY*OZ, C*K*K)


def _im2col(x: np.ndarray) -> np.ndarray:
    """(B, C, Y, Z) -> (B, OY, OZ, C*K*K) patch matrix."""
    b, c, y, z = x.shape
    oy, oz = y - KERNEL + 1, z - KERNEL + 1
    cols = np.ascontiguousarray(x).reshape(b, -1)[:, _patch_index(c, y, z)]
    return cols.reshape(b, oy, oz, -1)


def _forward(spec: QNetworkSpec, params: Mapping[str, np.ndarray], images: np.ndarray,
             histories: np.ndarray, keep_cache: bool) -> tuple[np.ndarray, dict]:
    if images.ndim != 4 or images.shape[1:] != spec.image_shape:
        raise ValueError(f"image batch shape {images.shape} != (B, {spec.image_shape})")
    if histories.ndim != 2 or histories.shape[1] != spec.history_width:
        raise ValueError(f"history batch shape {histories.shape} != (B, {spec.history_width})")
    b = images.shape[0]
    f, oy, oz = spec.conv_out
    cache: dict = {}

    cols = _im2col(images).reshape(b * oy * oz, -1)
    wc = params["conv_w"].reshape(spec.conv_filters, -1).T
    conv = cols @ wc + params["conv_b"]
    conv_act = np.maximum(conv, 0.0)
    h = conv_act.reshape(b, oy, oz, f).reshape(b, -1)   # flatten per sample
    if keep_cache:
        cache["cols"], cache["conv_pre"] = cols, conv
    acts = []
    for i in range(3):
        pre = h @ params[f"img{i}_w"] + params[f"img{i}_b"]
        out = np.maximum(pre, 0.0)
        if keep_cache:
            acts.append((h, pre))
        h = out
    concat = np.concatenate([h, histories], axis=1)
    head_pre = concat @ params["head_w"] + params["head_b"]
    head = np.maximum(head_pre, 0.0)
    q = head @ params["out_w"] + params["out_b"]
    _check_finite("q", q)
    if keep_cache:
        cache.update(dense=acts, concat=concat, head_pre=head_pre, head=head, b=b)
    return q, cache


def forward(spec: QNetworkSpec, params: Mapping[str, np.ndarray], images: np.ndarray,
            histories: np.ndarray) -> np.ndarray:
    """Batched Q-values (B, n_actions)."""
    q, _ = _forward(spec, params, np.asarray(images, dtype=np.float64),
                    np.asarray(histories, dtype=np.float64), keep_cache=False)
    return q


def forward_observation(spec: QNetworkSpec, params: Mapping[str, np.ndarray], obs) -> np.ndarray:
    """Q-values (n_actions,) of one environment observation."""
    q = forward(spec, params, obs.image()[None], obs.history[None])
    return q[0]


def huber(residual: np.ndarray, delta: float = 1.0) -> np.ndarray:
    a = np.abs(residual)
    return np.where(a <= delta, 0.5 * residual ** 2, delta * (a - 0.5 * delta))


def huber_grad(residual: np.ndarray, delta: float = 1.0) -> np.ndarray:
    return np.clip(residual, -delta, delta)


def loss_on_batch(spec: QNetworkSpec, params: Mapping[str, np.ndarray], images: np.ndarray,
                  histories: np.ndarray, actions: np.ndarray, targets: np.ndarray) -> float:
    """Mean Huber loss of taken-action Q-values against targets."""
    q = forward(spec, params, images, histories)
    sel = q[np.arange(len(actions)), np.asarray(actions, dtype=np.int64)]
    return float(np.mean(huber(sel - np.asarray(targets, dtype=np.float64))))


def backward(spec: QNetworkSpec, params: Mapping[str, np.ndarray], images: np.ndarray,
             histories: np.ndarray, actions: np.ndarray,
             targets: np.ndarray) -> tuple[float, dict[str, np.ndarray]]:
    """Mean Huber loss and its exact gradients for every parameter."""
    images = np.asarray(images, dtype=np.float64)
    histories = np.asarray(histories, dtype=np.float64)
    actions = np.asarray(actions, dtype=np.int64)
    targets = np.asarray(targets, dtype=np.float64)
    q, cache = _forward(spec, params, images, histories, keep_cache=True)
    b = cache["b"]
    rows = np.arange(b)
    residual = q[rows, actions] - targets
    loss = float(np.mean(huber(residual)))
    if not np.isfinite(loss):
        bad = int(np.argwhere(~np.isfinite(huber(residual)))[0][0])
        raise FloatingPointError(f"non-finite loss at batch index {bad}")

    grads: dict[str, np.ndarray] = {}
    dq = np.zeros_like(q)
    dq[rows, actions] = huber_grad(residual) / b

    grads["out_w"] = cache["head"].T @ dq
    grads["out_b"] = dq.sum(axis=0)
    dhead = (dq @ params["out_w"].T) * (cache["head_pre"] > 0)
    grads["head_w"] = cache["concat"].T @ dhead
    grads["head_b"] = dhead.sum(axis=0)
    dconcat = dhead @ params["head_w"].T
    img_w = spec.dense_image[-1]
    dh = dconcat[:, :img_w]
    for i in (2, 1, 0):
        inp, pre = cache["dense"][i]
        dpre = dh * (pre > 0)
        grads[f"img{i}_w"] = inp.T @ dpre
        grads[f"img{i}_b"] = dpre.sum(axis=0)
        dh = dpre @ params[f"img{i}_w"].T
    f, oy, oz = spec.conv_out
    dconv_act = dh.reshape(b, oy, oz, f).reshape(b * oy * oz, f)
    dconv = dconv_act * (cache["conv_pre"] > 0)
    wc = params["conv_w"].reshape(spec.conv_filters, -1).T
    grads["conv_w"] = (cache["cols"].T @ dconv).T.reshape(params["conv_w"].shape)
    grads["conv_b"] = dconv.sum(axis=0)
    for name, g in grads.items():
        _check_finite(f"grad[{name}]", g)
    return loss, grads


@dataclass
class OptimizerState:
    """RMSprop with Table-style defaults and zero momentum."""

    learning_rate: float = 2.5e-4
    rho: float = 0.95
    momentum: float = 0.0
    eps: float = 1e-7
    acc: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.momentum != 0.0:
            raise ValueError("momentum is fixed at 0 in this optimizer")


def apply_rmsprop(state: OptimizerState, params: dict[str, np.ndarray],
                  grads: Mapping[str, np.ndarray]) -> dict[str, np.ndarray]:
    """One in-place RMSprop step; returns the updated params dict."""
    for name, g in grads.items():
        a = state.acc.get(name)
        if a is None:
            a = state.acc[name] = np.zeros_like(params[name])
        a *= state.rho
        a += (1.0 - state.rho) * g * g
        params[name] -= state.learning_rate * g / np.sqrt(a + state.eps)
    return params


def save_checkpoint(params: Mapping[str, np.ndarray], spec: QNetworkSpec,
                    path: str | Path, extra: Mapping | None = None) -> None:
    """Binary checkpoint: JSON meta header + named-tensor index + payload."""
    meta = {"spec": spec.to_dict(), "extra": dict(extra or {})}
    meta_bytes = json.dumps(meta, sort_keys=True).encode()
    names = sorted(params)
    with open(path, "wb") as fh:
        fh.write(_CKPT_MAGIC)
        fh.write(struct.pack("<II", _CKPT_VERSION, len(meta_bytes)))
        fh.write(meta_bytes)
        fh.write(struct.pack("<I", len(names)))
        for name in names:
            nb = name.encode()
            arr = params[name]
            fh.write(struct.pack("<H", len(nb)))
            fh.write(nb)
            fh.write(struct.pack("<B", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        for name in names:
            fh.write(np.ascontiguousarray(params[name], dtype="<f8").tobytes())


def load_checkpoint(path: str | Path) -> tuple[dict[str, np.ndarray], QNetworkSpec, dict]:
    with open(path, "rb") as fh:
        if fh.read(4) != _CKPT_MAGIC:
            raise ValueError("not a checkpoint file")
        version, meta_len = struct.unpack("<II", fh.read(8))
        if version != _CKPT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        meta = json.loads(fh.read(meta_len))
        (count,) = struct.unpack("<I", fh.read(4))
        index = []
        for _ in range(count):
            (nlen,) = struct.unpack("<H", fh.read(2))
            name = fh.read(nlen).decode()
            (ndim,) = struct.unpack("<B", fh.read(1))
            shape = struct.unpack(f"<{ndim}I", fh.read(4 * ndim))
            index.append((name, shape))
        params = {}
        for name, shape in index:
            n = int(np.prod(shape)) if shape else 1
            params[name] = np.frombuffer(fh.read(8 * n), dtype="<f8").reshape(shape).copy()
    return params, QNetworkSpec.from_dict(meta["spec"]), meta.get("extra", {})
