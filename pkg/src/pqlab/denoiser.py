"""Conditional 1-D U-Net predicting the diffusion target (eps, x0, or v).

Layout per resolution level: the level input is concatenated with the
time and condition embeddings (broadcast along the length axis), passed
through a 3-wide fusion conv, then a residual block

    ResBlock(x) = x + Conv(ReLU(BN(Conv(x)))).

The encoder downsamples by max-pool 2, the decoder upsamples by
nearest-neighbor doubling and concatenates the matching encoder skip.
The output head is a 1-wide conv initialized to zero, so a freshly
initialized network predicts zeros.  Embedding fusion happens at the
input of every level, the bottleneck included.

Parameters live in a plain dict keyed by layer path; ``param_spec``
fixes the canonical ordering used to flatten them into one vector (the
checkpoint format and the optimizer rely on that order being stable).
Batch-norm running statistics are state, not parameters, and are kept
in a separate dict.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import nn
from .errors import ConfigError, NumericError

DEFAULT_TIME_EMBED_DIM = 16


@dataclass(frozen=True)
class DenoiserConfig:
    input_length: int
    base_channels: int = 16
    depth: int = 2
    time_embed_dim: int = DEFAULT_TIME_EMBED_DIM
    cond_embed_dim: int = 16
    cond_hidden_dim: int = 32
    in_channels: int = 1
    cond_dim: int = 5

    def __post_init__(self) -> None:
        if self.depth < 1:
            raise ConfigError("depth must be at least 1")
        if self.input_length < 2**self.depth or self.input_length % 2**self.depth:
            raise ConfigError(
                f"input_length must be a positive multiple of {2 ** self.depth}"
            )
        if self.time_embed_dim % 2 or self.time_embed_dim < 2:
            raise ConfigError("time_embed_dim must be a positive even number")
        for name in ("base_channels", "cond_embed_dim", "cond_hidden_dim",
                     "in_channels", "cond_dim"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")

    @property
    def embed_channels(self) -> int:
        return self.time_embed_dim + self.cond_embed_dim

    def level_channels(self, i: int) -> int:
        return self.base_channels * 2**i

    @property
    def mid_channels(self) -> int:
        return self.base_channels * 2**self.depth


def time_embed(t, d: int) -> np.ndarray:
    """Sinusoidal step embedding, interleaved [sin, cos] pairs.

    Frequencies omega_i = 10000^(-2i/d) for i = 0..d/2-1, so the first
    pair oscillates at unit frequency and later pairs are slower.
    """
    if d % 2 or d < 2:
        raise ConfigError("embedding dimension must be a positive even number")
    t = np.atleast_1d(np.asarray(t, dtype=float))
    i = np.arange(d // 2, dtype=float)
    omega = 10000.0 ** (-2.0 * i / d)
    angles = t[:, None] * omega[None, :]
    out = np.empty((len(t), d))
    out[:, 0::2] = np.sin(angles)
    out[:, 1::2] = np.cos(angles)
    return out


def _resblock_spec(prefix: str, ch: int):
    return [
        (f"{prefix}.conv1.w", (ch, ch, 3)),
        (f"{prefix}.conv1.b", (ch,)),
        (f"{prefix}.bn.gamma", (ch,)),
        (f"{prefix}.bn.beta", (ch,)),
        (f"{prefix}.conv2.w", (ch, ch, 3)),
        (f"{prefix}.conv2.b", (ch,)),
    ]


def param_spec(config: DenoiserConfig):
    """Canonical (name, shape) list; flattening order and checkpoints use it."""
    spec = [
        ("cond.w1", (config.cond_hidden_dim, config.cond_dim)),
        ("cond.b1", (config.cond_hidden_dim,)),
        ("cond.w2", (config.cond_embed_dim, config.cond_hidden_dim)),
        ("cond.b2", (config.cond_embed_dim,)),
    ]
    e = config.embed_channels
    prev = config.in_channels
    for i in range(config.depth):
        ch = config.level_channels(i)
        spec.append((f"enc{i}.in.w", (ch, prev + e, 3)))
        spec.append((f"enc{i}.in.b", (ch,)))
        spec.extend(_resblock_spec(f"enc{i}.res", ch))
        prev = ch
    mid = config.mid_channels
    spec.append(("mid.in.w", (mid, prev + e, 3)))
    spec.append(("mid.in.b", (mid,)))
    spec.extend(_resblock_spec("mid.res", mid))
    above = mid
    for i in reversed(range(config.depth)):
        ch = config.level_channels(i)
        spec.append((f"dec{i}.in.w", (ch, above + ch + e, 3)))
        spec.append((f"dec{i}.in.b", (ch,)))
        spec.extend(_resblock_spec(f"dec{i}.res", ch))
        above = ch
    spec.append(("head.w", (config.in_channels, config.base_channels, 1)))
    spec.append(("head.b", (config.in_channels,)))
    return spec


def param_count(config: DenoiserConfig) -> int:
    return sum(int(np.prod(shape)) for _, shape in param_spec(config))


def init_params(config: DenoiserConfig, seed: int) -> dict:
    """He-normal weights, zero biases, unit norm scales, zero output head."""
    rng = np.random.default_rng([int(seed), 0x1217])
    params = {}
    for name, shape in param_spec(config):
        if name.endswith(".b") or name.endswith(".beta") or name.startswith("cond.b"):
            params[name] = np.zeros(shape)
        elif name.endswith(".gamma"):
            params[name] = np.ones(shape)
        elif name.startswith("head."):
            params[name] = np.zeros(shape)
        else:
            fan_in = int(np.prod(shape[1:]))
            params[name] = rng.normal(0.0, math.sqrt(2.0 / fan_in), size=shape)
    return params


def init_bn_state(config: DenoiserConfig) -> dict:
    state = {}
    for name, shape in param_spec(config):
        if name.endswith(".gamma"):
            prefix = name[: -len(".gamma")]
            state[f"{prefix}.running_mean"] = np.zeros(shape)
            state[f"{prefix}.running_var"] = np.ones(shape)
    return state


def flatten_params(params: dict, config: DenoiserConfig) -> np.ndarray:
    return np.concatenate(
        [np.asarray(params[name], dtype=float).ravel() for name, _ in param_spec(config)]
    )


def unflatten_params(vector: np.ndarray, config: DenoiserConfig) -> dict:
    spec = param_spec(config)
    total = sum(int(np.prod(s)) for _, s in spec)
    vector = np.asarray(vector, dtype=float)
    if vector.shape != (total,):
        raise ConfigError(f"parameter vector must have length {total}")
    params = {}
    offset = 0
    for name, shape in spec:
        size = int(np.prod(shape))
        params[name] = vector[offset : offset + size].reshape(shape).copy()
        offset += size
    return params


def cond_embed(c: np.ndarray, params: dict) -> np.ndarray:
    """Two-layer MLP embedding of the condition vector: W2 ReLU(W1 c + b1) + b2."""
    out, _ = _cond_embed_fwd(np.atleast_2d(np.asarray(c, dtype=float)), params)
    return out


def _cond_embed_fwd(c: np.ndarray, params: dict):
    h, cache1 = nn.linear(c, params["cond.w1"], params["cond.b1"])
    a, mask = nn.relu(h)
    out, cache2 = nn.linear(a, params["cond.w2"], params["cond.b2"])
    return out, (cache1, mask, cache2)


def _cond_embed_bwd(g: np.ndarray, cache, grads: dict) -> None:
    cache1, mask, cache2 = cache
    ga, gw2, gb2 = nn.linear_backward(g, cache2)
    grads["cond.w2"] += gw2
    grads["cond.b2"] += gb2
    gh = nn.relu_backward(ga, mask)
    _, gw1, gb1 = nn.linear_backward(gh, cache1)
    grads["cond.w1"] += gw1
    grads["cond.b1"] += gb1


def _tile(emb: np.ndarray, length: int) -> np.ndarray:
    return np.broadcast_to(emb[:, :, None], emb.shape + (length,))


def _fuse(h: np.ndarray, emb: np.ndarray) -> np.ndarray:
    return np.concatenate([h, _tile(emb, h.shape[2])], axis=1)


def _resblock_fwd(x, params, bn_state, prefix, training):
    y, c1 = nn.conv1d(x, params[f"{prefix}.conv1.w"], params[f"{prefix}.conv1.b"])
    y, cbn, new_mean, new_var = nn.batchnorm(
        y,
        params[f"{prefix}.bn.gamma"],
        params[f"{prefix}.bn.beta"],
        bn_state[f"{prefix}.bn.running_mean"],
        bn_state[f"{prefix}.bn.running_var"],
        training,
    )
    y, mask = nn.relu(y)
    y, c2 = nn.conv1d(y, params[f"{prefix}.conv2.w"], params[f"{prefix}.conv2.b"])
    out = x + y
    updates = {
        f"{prefix}.bn.running_mean": new_mean,
        f"{prefix}.bn.running_var": new_var,
    }
    return out, (c1, cbn, mask, c2), updates


def _resblock_bwd(g, cache, prefix, grads):
    c1, cbn, mask, c2 = cache
    gy, gw2, gb2 = nn.conv1d_backward(g, c2)
    grads[f"{prefix}.conv2.w"] += gw2
    grads[f"{prefix}.conv2.b"] += gb2
    gy = nn.relu_backward(gy, mask)
    gy, ggamma, gbeta = nn.batchnorm_backward(gy, cbn)
    grads[f"{prefix}.bn.gamma"] += ggamma
    grads[f"{prefix}.bn.beta"] += gbeta
    gx, gw1, gb1 = nn.conv1d_backward(gy, c1)
    grads[f"{prefix}.conv1.w"] += gw1
    grads[f"{prefix}.conv1.b"] += gb1
    return g + gx  # residual join


def forward(
    params: dict,
    bn_state: dict,
    x: np.ndarray,
    t,
    c: np.ndarray,
    config: DenoiserConfig,
    training: bool = False,
    want_cache: bool = False,
):
    """Run the network.

    Returns (out, cache, bn_updates); cache is None unless requested,
    bn_updates is an empty dict in inference mode.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim != 3 or x.shape[1] != config.in_channels or x.shape[2] != config.input_length:
        raise ConfigError(
            f"input must have shape (B, {config.in_channels}, {config.input_length})"
        )
    if not np.all(np.isfinite(x)):
        raise NumericError("non-finite values in network input")
    c = np.atleast_2d(np.asarray(c, dtype=float))
    if c.shape != (x.shape[0], config.cond_dim):
        raise ConfigError(f"condition must have shape (B, {config.cond_dim})")

    te = time_embed(t, config.time_embed_dim)
    if te.shape[0] == 1 and x.shape[0] > 1:
        te = np.broadcast_to(te, (x.shape[0], te.shape[1])).copy()
    ce, ce_cache = _cond_embed_fwd(c, params)
    emb = np.concatenate([te, ce], axis=1)

    bn_updates: dict = {}
    enc_caches = []
    skips = []
    h = x
    for i in range(config.depth):
        z = _fuse(h, emb)
        y, c_in = nn.conv1d(z, params[f"enc{i}.in.w"], params[f"enc{i}.in.b"])
        y, c_res, upd = _resblock_fwd(y, params, bn_state, f"enc{i}.res", training)
        bn_updates.update(upd)
        skips.append(y)
        y, c_pool = nn.maxpool2(y)
        enc_caches.append((h.shape[1], c_in, c_res, c_pool))
        h = y

    z = _fuse(h, emb)
    y, c_in = nn.conv1d(z, params["mid.in.w"], params["mid.in.b"])
    h, c_res, upd = _resblock_fwd(y, params, bn_state, "mid.res", training)
    bn_updates.update(upd)
    mid_cache = (z.shape[1] - config.embed_channels, c_in, c_res)

    dec_caches = []
    for i in reversed(range(config.depth)):
        up = nn.upsample2(h)
        z = np.concatenate([up, skips[i], _tile(emb, up.shape[2])], axis=1)
        y, c_in = nn.conv1d(z, params[f"dec{i}.in.w"], params[f"dec{i}.in.b"])
        h, c_res, upd = _resblock_fwd(y, params, bn_state, f"dec{i}.res", training)
        bn_updates.update(upd)
        dec_caches.append((i, up.shape[1], skips[i].shape[1], c_in, c_res))

    out, head_cache = nn.conv1d(h, params["head.w"], params["head.b"])

    cache = None
    if want_cache:
        cache = {
            "config": config,
            "ce": ce_cache,
            "enc": enc_caches,
            "mid": mid_cache,
            "dec": dec_caches,
            "head": head_cache,
            "time_dim": config.time_embed_dim,
        }
    if not training:
        bn_updates = {}
    return out, cache, bn_updates


def backward(g_out: np.ndarray, cache: dict, params: dict) -> dict:
    """Gradient of a scalar loss w.r.t. every parameter, given dL/d(out)."""
    config: DenoiserConfig = cache["config"]
    grads = {name: np.zeros(shape) for name, shape in param_spec(config)}
    g_emb = 0.0

    g, gw, gb = nn.conv1d_backward(g_out, cache["head"])
    grads["head.w"] += gw
    grads["head.b"] += gb

    g_skip = {}
    for i, up_ch, skip_ch, c_in, c_res in reversed(cache["dec"]):
        g = _resblock_bwd(g, c_res, f"dec{i}.res", grads)
        gz, gw, gb = nn.conv1d_backward(g, c_in)
        grads[f"dec{i}.in.w"] += gw
        grads[f"dec{i}.in.b"] += gb
        g_up = gz[:, :up_ch]
        g_skip[i] = gz[:, up_ch : up_ch + skip_ch]
        g_emb = g_emb + gz[:, up_ch + skip_ch :].sum(axis=2)
        g = nn.upsample2_backward(g_up)

    in_ch, c_in, c_res = cache["mid"]
    g = _resblock_bwd(g, c_res, "mid.res", grads)
    gz, gw, gb = nn.conv1d_backward(g, c_in)
    grads["mid.in.w"] += gw
    grads["mid.in.b"] += gb
    g = gz[:, :in_ch]
    g_emb = g_emb + gz[:, in_ch:].sum(axis=2)

    for i in reversed(range(config.depth)):
        h_ch, c_in, c_res, c_pool = cache["enc"][i]
        g = nn.maxpool2_backward(g, c_pool)
        g = g + g_skip[i]
        g = _resblock_bwd(g, c_res, f"enc{i}.res", grads)
        gz, gw, gb = nn.conv1d_backward(g, c_in)
        grads[f"enc{i}.in.w"] += gw
        grads[f"enc{i}.in.b"] += gb
        g = gz[:, :h_ch]
        g_emb = g_emb + gz[:, h_ch:].sum(axis=2)

    g_ce = g_emb[:, cache["time_dim"] :]  # time embedding has no parameters
    _cond_embed_bwd(g_ce, cache["ce"], grads)
    return grads


def gradient(params: dict, bn_state: dict, batch, loss_fn, config: DenoiserConfig):
    """Training-mode forward/backward for one batch.

    batch is (x_t, t, c); loss_fn maps the prediction to (value, dL/dpred).
    Returns (loss, grads, bn_updates).  Raises NumericError on a
    non-finite loss so divergence surfaces with context.
    """
    x_t, t, c = batch
    pred, cache, bn_updates = forward(
        params, bn_state, x_t, t, c, config, training=True, want_cache=True
    )
    loss, g_pred = loss_fn(pred)
    if not math.isfinite(loss):
        raise NumericError(f"non-finite training loss: {loss!r}")
    grads = backward(g_pred, cache, params)
    return loss, grads, bn_updates
