"""Optimization loop: batch assembly, Adam with gradient clipping, checkpoints.

Each step draws everything it needs (slice indices, diffusion steps, noise)
from its own stream seeded by (run seed, step index), so training 100 steps,
checkpointing, and training 100 more is bitwise identical to training 200
steps in one process.  The optimizer state therefore lives in the checkpoint
alongside the parameters.

Checkpoint format "PQLAB-CKPT v1" (npz archive):

    version       format tag
    step          completed optimizer steps (int64)
    net_config    denoiser config as sorted-key JSON
    mode          prediction parameterization (eps | x0 | v)
    return_scale  global train-set return std used to scale the data
    beta          noise-schedule betas (float64, length T)
    param_names   canonical parameter order (consistency check)
    params        all parameters flattened in param_spec order
    adam_m/adam_v Adam first/second moments, same layout as params
    bn_names      batch-norm state entries, schedule order
    bn_values     running statistics concatenated in bn_names order

All float payloads are float64, so save/load round-trips exactly.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import denoiser, diffusion, objectives
from .denoiser import DenoiserConfig
from .diffusion import MODES, NoiseSchedule
from .errors import ConfigError, DataError, NumericError
from .objectives import LossBreakdown, LossWeights
from .sampler import GeneratorModel

CHECKPOINT_VERSION = "PQLAB-CKPT v1"

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8
DEFAULT_LR = 1e-3
DEFAULT_CLIP_NORM = 1.0
DEFAULT_BATCH_SIZE = 32


@dataclass(frozen=True)
class TrainConfig:
    """Settings for one training run; ``steps`` is the run's total budget.

    The auxiliary-loss warmup is expressed as a fraction of ``steps``, so a
    resumed run must keep the same total for the schedules to line up.
    """

    steps: int
    batch_size: int = DEFAULT_BATCH_SIZE
    lr: float = DEFAULT_LR
    clip_norm: float = DEFAULT_CLIP_NORM
    seed: int = 0
    mode: str = "v"
    weights: LossWeights = field(default_factory=LossWeights)
    vol_window: int = objectives.DEFAULT_VOL_WINDOW
    vol_stride: int = objectives.DEFAULT_VOL_STRIDE
    checkpoint_every: int = 0  # 0 = final checkpoint only

    def __post_init__(self) -> None:
        if self.steps < 0:
            raise ConfigError(f"steps must be >= 0, got {self.steps}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if not (math.isfinite(self.lr) and self.lr > 0.0):
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if not (math.isfinite(self.clip_norm) and self.clip_norm > 0.0):
            raise ConfigError(f"clip_norm must be positive, got {self.clip_norm}")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.checkpoint_every < 0:
            raise ConfigError("checkpoint_every must be >= 0")


@dataclass
class TrainState:
    """Everything the loop mutates, plus the fixed model/schedule context."""

    params: dict
    bn_state: dict
    adam_m: dict
    adam_v: dict
    step: int
    net: DenoiserConfig
    sched: NoiseSchedule
    mode: str
    return_scale: float

    def model(self) -> GeneratorModel:
        return GeneratorModel(
            params=self.params,
            bn_state=self.bn_state,
            net=self.net,
            mode=self.mode,
            return_scale=self.return_scale,
        )


def compute_return_scale(slices) -> float:
    """Population std of all valid train-set log returns pooled together."""
    if not slices:
        raise DataError("return scale needs at least one slice")
    pooled = np.concatenate([np.asarray(s.log_returns, dtype=float) for s in slices])
    if pooled.size < 2:
        raise DataError("return scale needs at least two returns")
    scale = float(np.std(pooled))
    if not math.isfinite(scale) or scale <= 0.0:
        raise DataError("train returns have no spread; cannot scale")
    return scale


def init_state(
    net: DenoiserConfig,
    sched: NoiseSchedule,
    mode: str,
    return_scale: float,
    seed: int,
) -> TrainState:
    if mode not in MODES:
        raise ConfigError(f"mode must be one of {MODES}, got {mode!r}")
    params = denoiser.init_params(net, seed)
    return TrainState(
        params=params,
        bn_state=denoiser.init_bn_state(net),
        adam_m={k: np.zeros_like(p) for k, p in params.items()},
        adam_v={k: np.zeros_like(p) for k, p in params.items()},
        step=0,
        net=net,
        sched=sched,
        mode=mode,
        return_scale=float(return_scale),
    )


def make_batch(slices, length: int, rng, batch_size: int, return_scale: float):
    """Sample slices with replacement into padded (x0, mask, cond) arrays.

    x0 is scaled to the network's working space; padding beyond each
    slice's valid prefix is zero and masked out.
    """
    idx = rng.integers(0, len(slices), size=batch_size)
    x0 = np.zeros((batch_size, length))
    mask = np.zeros((batch_size, length), dtype=bool)
    cond = np.zeros((batch_size, len(slices[0].condition.as_array())))
    for row, i in enumerate(idx):
        s = slices[int(i)]
        n = s.condition.n_trading
        if n > length:
            raise ConfigError(
                f"slice has {n} returns but the network length is {length}"
            )
        x0[row, :n] = s.log_returns / return_scale
        mask[row, :n] = True
        cond[row] = s.condition.as_array()
    return x0, mask, cond


def clip_global_norm(grads: dict, max_norm: float) -> tuple[dict, float]:
    """Scale the whole gradient dict so its global L2 norm is <= max_norm."""
    sq = math.fsum(float(np.sum(g * g)) for g in grads.values())
    norm = math.sqrt(sq)
    if norm > max_norm:
        factor = max_norm / norm
        grads = {k: g * factor for k, g in grads.items()}
    return grads, norm


def adam_update(state: TrainState, grads: dict, lr: float, step: int) -> None:
    """One Adam step with bias correction; sets state.step = step."""
    b1c = 1.0 - ADAM_BETA1**step
    b2c = 1.0 - ADAM_BETA2**step
    for k, p in state.params.items():
        g = grads[k]
        state.adam_m[k] = ADAM_BETA1 * state.adam_m[k] + (1.0 - ADAM_BETA1) * g
        state.adam_v[k] = ADAM_BETA2 * state.adam_v[k] + (1.0 - ADAM_BETA2) * g * g
        m_hat = state.adam_m[k] / b1c
        v_hat = state.adam_v[k] / b2c
        state.params[k] = p - lr * m_hat / (np.sqrt(v_hat) + ADAM_EPS)
    state.step = step


def train_step(slices, state: TrainState, config: TrainConfig, step: int) -> LossBreakdown:
    """One optimizer step; all randomness comes from (seed, step)."""
    rng = np.random.default_rng([config.seed, step])
    length = state.net.input_length
    x0, mask, cond = make_batch(
        slices, length, rng, config.batch_size, state.return_scale
    )
    t = rng.integers(1, state.sched.T + 1, size=config.batch_size)
    eps = rng.standard_normal((config.batch_size, length))

    x_t = diffusion.forward_diffuse(x0, t, eps, state.sched)
    target = diffusion.training_target(state.mode, x0, eps, t, state.sched)

    pred3, cache, bn_updates = denoiser.forward(
        state.params, state.bn_state, x_t[:, None, :], t, cond, state.net,
        training=True, want_cache=True,
    )
    pred = pred3[:, 0, :]
    x0_pred = diffusion.recover_x0(x_t, pred, state.mode, t, state.sched)

    breakdown, g_pred, g_x0 = objectives.total_loss(
        pred, target, x0_pred, x0, mask, step, config.steps,
        weights=config.weights, window=config.vol_window,
        stride=config.vol_stride, with_grads=True,
    )
    if not math.isfinite(breakdown.total):
        raise NumericError(f"non-finite loss at step {step}: {breakdown.total!r}")

    # chain the data-space half through d(x0_hat)/d(prediction)
    scale = diffusion.x0_coefficients(state.mode, t, state.sched)
    g_out = g_pred + g_x0 * scale[:, None]
    grads = denoiser.backward(g_out[:, None, :], cache, state.params)
    grads, _ = clip_global_norm(grads, config.clip_norm)
    adam_update(state, grads, config.lr, step)
    state.bn_state.update(bn_updates)
    return breakdown


def train(slices, state: TrainState, config: TrainConfig,
          log_fh=None, checkpoint_fn=None, stop_step=None) -> TrainState:
    """Run steps state.step+1 .. config.steps, mutating state in place.

    log_fh, when given, receives one CSV row per step (no header).
    checkpoint_fn(state) fires every config.checkpoint_every steps.
    stop_step pauses the run early; config.steps stays the schedule total,
    so resuming from the paused state reproduces the uninterrupted run.
    """
    if not slices:
        raise DataError("training needs at least one slice")
    last = config.steps if stop_step is None else min(stop_step, config.steps)
    for step in range(state.step + 1, last + 1):
        breakdown = train_step(slices, state, config, step)
        if log_fh is not None:
            log_fh.write(objectives.format_loss_row(step, breakdown) + "\n")
        if (
            checkpoint_fn is not None
            and config.checkpoint_every
            and step % config.checkpoint_every == 0
        ):
            checkpoint_fn(state)
    return state


# ---------------------------------------------------------------------------
# checkpoints


def _bn_spec(config: DenoiserConfig):
    """(name, shape) list for batch-norm state, in schedule order."""
    spec = []
    for name, shape in denoiser.param_spec(config):
        if name.endswith(".gamma"):
            prefix = name[: -len(".gamma")]
            spec.append((f"{prefix}.running_mean", shape))
            spec.append((f"{prefix}.running_var", shape))
    return spec


def _flatten_by_spec(values: dict, spec) -> np.ndarray:
    return np.concatenate(
        [np.asarray(values[name], dtype=np.float64).ravel() for name, _ in spec]
    )


def _unflatten_by_spec(vector: np.ndarray, spec) -> dict:
    out = {}
    offset = 0
    for name, shape in spec:
        size = int(np.prod(shape))
        out[name] = vector[offset : offset + size].reshape(shape).copy()
        offset += size
    if offset != len(vector):
        raise DataError("flat state length does not match the layout")
    return out


def save_checkpoint(path, state: TrainState) -> None:
    """Write the versioned npz checkpoint; see the module docstring."""
    pspec = denoiser.param_spec(state.net)
    bnspec = _bn_spec(state.net)
    np.savez(
        path,
        version=np.array(CHECKPOINT_VERSION),
        step=np.array(state.step, dtype=np.int64),
        net_config=np.array(json.dumps(asdict(state.net), sort_keys=True)),
        mode=np.array(state.mode),
        return_scale=np.array(state.return_scale, dtype=np.float64),
        beta=np.asarray(state.sched.beta, dtype=np.float64),
        param_names=np.array([name for name, _ in pspec]),
        params=_flatten_by_spec(state.params, pspec),
        adam_m=_flatten_by_spec(state.adam_m, pspec),
        adam_v=_flatten_by_spec(state.adam_v, pspec),
        bn_names=np.array([name for name, _ in bnspec]),
        bn_values=_flatten_by_spec(state.bn_state, bnspec),
    )


def load_checkpoint(path) -> TrainState:
    """Load and validate a PQLAB-CKPT v1 archive back into a TrainState."""
    try:
        archive = np.load(path)
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read checkpoint {path}: {exc}") from exc
    with archive:
        if str(archive["version"]) != CHECKPOINT_VERSION:
            raise DataError(
                f"unsupported checkpoint version {archive['version']!r}"
            )
        net = DenoiserConfig(**json.loads(str(archive["net_config"])))
        pspec = denoiser.param_spec(net)
        names = [str(n) for n in archive["param_names"]]
        if names != [name for name, _ in pspec]:
            raise DataError("checkpoint parameter layout does not match config")
        bnspec = _bn_spec(net)
        bn_names = [str(n) for n in archive["bn_names"]]
        if bn_names != [name for name, _ in bnspec]:
            raise DataError("checkpoint batch-norm layout does not match config")
        return TrainState(
            params=_unflatten_by_spec(archive["params"], pspec),
            bn_state=_unflatten_by_spec(archive["bn_values"], bnspec),
            adam_m=_unflatten_by_spec(archive["adam_m"], pspec),
            adam_v=_unflatten_by_spec(archive["adam_v"], pspec),
            step=int(archive["step"]),
            net=net,
            sched=NoiseSchedule(np.asarray(archive["beta"], dtype=np.float64)),
            mode=str(archive["mode"]),
            return_scale=float(archive["return_scale"]),
        )
