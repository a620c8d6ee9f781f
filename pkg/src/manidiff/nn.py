"""Minimal MLP stack: sine activations, sinusoidal time embedding, manual
reverse-mode gradients, Adam. Two architectures:

  * plain — depth affine+sin layers followed by a linear head;
  * skip  — input affine, then k residual blocks h <- h + W sin(LN(h)) + b
    with parameter-free layer normalization, then a linear head.

Inputs are feature vectors (batch, in_dim); the diffusion time enters as a
sinusoidal embedding [sin(w_k t), cos(w_k t)] with w_k geometric from 1 to
1e4, concatenated to the features (time_embed_dim 0 disables it). Parameters
flatten to a single float64 vector with stable ordering (weights then bias,
layer by layer), which is also the checkpoint and optimizer layout.
"""

from __future__ import annotations

import base64
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError

LN_EPS = 1e-5
CHECKPOINT_MAGIC = "MANIDIFF-CKPT-v1"


@dataclass
class MlpConfig:
    in_dim: int                 # feature dimension, excluding the time embedding
    hidden: int
    out_dim: int
    depth: int = 4              # hidden layers (plain) or residual blocks (skip)
    arch: str = "plain"         # "plain" | "skip"
    time_embed_dim: int = 64    # even; 0 disables time conditioning

    def __post_init__(self):
        if self.arch not in ("plain", "skip"):
            raise ContractError(f"unknown arch {self.arch!r}")
        if self.time_embed_dim % 2 != 0:
            raise ContractError("time_embed_dim must be even")
        if self.depth < 1 or self.hidden < 1 or self.in_dim < 1 or self.out_dim < 1:
            raise ContractError("bad mlp dimensions")

    @property
    def first_dim(self) -> int:
        return self.in_dim + self.time_embed_dim


@dataclass
class MlpParams:
    cfg: MlpConfig
    weights: list = field(default_factory=list)   # (fan_in, fan_out) matrices
    biases: list = field(default_factory=list)


def layer_dims(cfg: MlpConfig) -> list[tuple[int, int]]:
    if cfg.arch == "plain":
        dims = [(cfg.first_dim, cfg.hidden)]
        dims += [(cfg.hidden, cfg.hidden)] * (cfg.depth - 1)
        dims.append((cfg.hidden, cfg.out_dim))
    else:
        dims = [(cfg.first_dim, cfg.hidden)]
        dims += [(cfg.hidden, cfg.hidden)] * cfg.depth
        dims.append((cfg.hidden, cfg.out_dim))
    return dims


def init_params(cfg: MlpConfig, rng: np.random.Generator) -> MlpParams:
    params = MlpParams(cfg=cfg)
    for fan_in, fan_out in layer_dims(cfg):
        bound = 1.0 / np.sqrt(fan_in)
        params.weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        params.biases.append(rng.uniform(-bound, bound, size=fan_out))
    return params


def time_embedding(t, dim: int, batch: int) -> np.ndarray:
    if dim == 0:
        return np.zeros((batch, 0))
    t = np.broadcast_to(np.asarray(t, dtype=float), (batch,))
    half = dim // 2
    if half == 1:
        omega = np.ones(1)
    else:
        omega = 10.0 ** (4.0 * np.arange(half) / (half - 1))
    phase = t[:, None] * omega[None, :]
    return np.concatenate([np.sin(phase), np.cos(phase)], axis=1)


def _first_layer_input(cfg: MlpConfig, x: np.ndarray, t) -> np.ndarray:
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if x.shape[1] != cfg.in_dim:
        raise ContractError(f"input dim {x.shape[1]} != {cfg.in_dim}")
    emb = time_embedding(t, cfg.time_embed_dim, x.shape[0])
    return np.concatenate([x, emb], axis=1)


def _layer_norm(h: np.ndarray):
    mu = h.mean(axis=1, keepdims=True)
    centered = h - mu
    sigma = np.sqrt(np.mean(centered**2, axis=1, keepdims=True) + LN_EPS)
    return centered / sigma, sigma


def forward_cache(params: MlpParams, x: np.ndarray, t):
    """Forward pass keeping the intermediates backward() needs."""
    cfg = params.cfg
    a = _first_layer_input(cfg, x, t)
    cache = {"a0": a}
    if cfg.arch == "plain":
        acts, preacts = [a], []
        for l in range(cfg.depth):
            z = a @ params.weights[l] + params.biases[l]
            preacts.append(z)
            a = np.sin(z)
            acts.append(a)
        out = a @ params.weights[-1] + params.biases[-1]
        cache.update(acts=acts, preacts=preacts)
        return out, cache
    h = a @ params.weights[0] + params.biases[0]
    hs, ys, sigmas = [h], [], []
    for l in range(cfg.depth):
        y, sigma = _layer_norm(h)
        ys.append(y)
        sigmas.append(sigma)
        h = h + np.sin(y) @ params.weights[l + 1] + params.biases[l + 1]
        hs.append(h)
    out = h @ params.weights[-1] + params.biases[-1]
    cache.update(hs=hs, ys=ys, sigmas=sigmas)
    return out, cache


def forward(params: MlpParams, x: np.ndarray, t) -> np.ndarray:
    out, _ = forward_cache(params, x, t)
    return out if np.asarray(x).ndim > 1 else out[0]


def backward(params: MlpParams, cache: dict, dout: np.ndarray) -> np.ndarray:
    """Gradient of sum(dout * out) wrt params, as a flat vector."""
    cfg = params.cfg
    gw = [None] * len(params.weights)
    gb = [None] * len(params.biases)
    if cfg.arch == "plain":
        acts, preacts = cache["acts"], cache["preacts"]
        gw[-1] = acts[-1].T @ dout
        gb[-1] = dout.sum(axis=0)
        da = dout @ params.weights[-1].T
        for l in range(cfg.depth - 1, -1, -1):
            dz = da * np.cos(preacts[l])
            gw[l] = acts[l].T @ dz
            gb[l] = dz.sum(axis=0)
            da = dz @ params.weights[l].T
        return flatten_grads(gw, gb)
    hs, ys, sigmas = cache["hs"], cache["ys"], cache["sigmas"]
    gw[-1] = hs[-1].T @ dout
    gb[-1] = dout.sum(axis=0)
    dh = dout @ params.weights[-1].T
    for l in range(cfg.depth - 1, -1, -1):
        s = np.sin(ys[l])
        gw[l + 1] = s.T @ dh
        gb[l + 1] = dh.sum(axis=0)
        dy = (dh @ params.weights[l + 1].T) * np.cos(ys[l])
        # layer-norm backward: dh += (dy - mean(dy) - y mean(dy*y)) / sigma
        dln = (dy - dy.mean(axis=1, keepdims=True)
               - ys[l] * (dy * ys[l]).mean(axis=1, keepdims=True)) / sigmas[l]
        dh = dh + dln
    gw[0] = cache["a0"].T @ dh
    gb[0] = dh.sum(axis=0)
    return flatten_grads(gw, gb)


def loss_grad(params: MlpParams, x: np.ndarray, t, target: np.ndarray, weights=None):
    """Mean weighted squared error and its exact gradient.

    loss = (1/B) sum_j w_j ||f(x_j, t_j) - target_j||^2, default w = 1.
    Single-sample inputs give ||f - target||^2 itself.
    """
    x2 = np.atleast_2d(np.asarray(x, dtype=float))
    tgt = np.atleast_2d(np.asarray(target, dtype=float))
    out, cache = forward_cache(params, x2, t)
    res = out - tgt
    b = x2.shape[0]
    if weights is None:
        w = np.ones(b)
    else:
        w = np.asarray(weights, dtype=float)
    loss = float(np.sum(w[:, None] * res**2) / b)
    dout = (2.0 / b) * w[:, None] * res
    return loss, backward(params, cache, dout)


# -- flat parameter vector ----------------------------------------------------

def flatten_params(params: MlpParams) -> np.ndarray:
    parts = []
    for w, b in zip(params.weights, params.biases):
        parts.append(np.ravel(w))
        parts.append(np.ravel(b))
    return np.concatenate(parts)


def flatten_grads(gw: list, gb: list) -> np.ndarray:
    parts = []
    for w, b in zip(gw, gb):
        parts.append(np.ravel(w))
        parts.append(np.ravel(b))
    return np.concatenate(parts)


def unflatten_params(cfg: MlpConfig, flat: np.ndarray) -> MlpParams:
    params = MlpParams(cfg=cfg)
    pos = 0
    for fan_in, fan_out in layer_dims(cfg):
        params.weights.append(flat[pos:pos + fan_in * fan_out].reshape(fan_in, fan_out).copy())
        pos += fan_in * fan_out
        params.biases.append(flat[pos:pos + fan_out].copy())
        pos += fan_out
    if pos != flat.size:
        raise ContractError("flat parameter vector has wrong length")
    return params


def param_count(cfg: MlpConfig) -> int:
    return sum(fi * fo + fo for fi, fo in layer_dims(cfg))


# -- optimizers ----------------------------------------------------------------

@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def fresh(cls, n: int, lr: float = 1e-3, beta2: float = 0.999) -> "AdamState":
        return cls(m=np.zeros(n), v=np.zeros(n), lr=lr, beta2=beta2)


def adam_step(flat: np.ndarray, state: AdamState, grad: np.ndarray) -> np.ndarray:
    state.step += 1
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * grad
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * grad**2
    mhat = state.m / (1.0 - state.beta1**state.step)
    vhat = state.v / (1.0 - state.beta2**state.step)
    return flat - state.lr * mhat / (np.sqrt(vhat) + state.eps)


def sgd_step(flat: np.ndarray, lr: float, grad: np.ndarray) -> np.ndarray:
    return flat - lr * grad


# -- checkpoint serialization ---------------------------------------------------

def _b64(arr: np.ndarray) -> str:
    return base64.b64encode(np.ascontiguousarray(arr, dtype="<f8").tobytes()).decode("ascii")


def _unb64(text: str) -> np.ndarray:
    return np.frombuffer(base64.b64decode(text.encode("ascii")), dtype="<f8").copy()


def params_to_doc(params: MlpParams) -> dict:
    cfg = params.cfg
    return {
        "arch": cfg.arch,
        "in_dim": cfg.in_dim,
        "hidden": cfg.hidden,
        "out_dim": cfg.out_dim,
        "depth": cfg.depth,
        "time_embed_dim": cfg.time_embed_dim,
        "params_b64": _b64(flatten_params(params)),
    }


def doc_to_params(doc: dict) -> MlpParams:
    cfg = MlpConfig(
        in_dim=doc["in_dim"], hidden=doc["hidden"], out_dim=doc["out_dim"],
        depth=doc["depth"], arch=doc["arch"], time_embed_dim=doc["time_embed_dim"],
    )
    return unflatten_params(cfg, _unb64(doc["params_b64"]))


def adam_to_doc(state: AdamState) -> dict:
    return {
        "m_b64": _b64(state.m), "v_b64": _b64(state.v), "step": state.step,
        "lr": state.lr, "beta1": state.beta1, "beta2": state.beta2, "eps": state.eps,
    }


def doc_to_adam(doc: dict) -> AdamState:
    return AdamState(
        m=_unb64(doc["m_b64"]), v=_unb64(doc["v_b64"]), step=doc["step"],
        lr=doc["lr"], beta1=doc["beta1"], beta2=doc["beta2"], eps=doc["eps"],
    )


def save_checkpoint(path: str, payload: dict) -> None:
    """Write a checkpoint document; payload must not contain 'magic'."""
    doc = {"magic": CHECKPOINT_MAGIC}
    doc.update(payload)
    with open(path, "w") as fh:
        json.dump(doc, fh)


def load_checkpoint(path: str) -> dict:
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("magic") != CHECKPOINT_MAGIC:
        raise ContractError(f"not a recognized checkpoint: {path}")
    return doc
