"""Reverse-process sampling: deterministic or stochastic DDIM with step skipping.

The update at step t -> t_prev is

    x_prev = sqrt(abar_prev) * x0_hat + sqrt(1 - abar_prev - sigma^2) * eps_hat
             + sigma * z

with x0_hat recovered from the noise estimate.  sigma follows the usual
eta-scaled schedule, so eta=0 is fully deterministic and eta=1 matches the
ancestral process variance.  Each path draws from its own seeded stream
derived from (seed, path index); paths are processed in fixed-size chunks so
repeated runs are bitwise identical.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from . import denoiser, diffusion
from .denoiser import DenoiserConfig
from .diffusion import MODES, NoiseSchedule
from .errors import ConfigError, DataError, NumericError
from .market_paths import (  # noqa: F401  (to_prices is part of this module's API)
    ConditionVector,
    read_manifest,
    to_prices,
    write_manifest,
)

DEFAULT_NUM_STEPS = 50
DEFAULT_ETA = 0.0
SAMPLE_CHUNK = 256

BUNDLE_CSV_HEADER = "path_id,step,log_return"


@dataclass(frozen=True)
class SamplerConfig:
    """Knobs for one sampling run."""

    num_steps: int = DEFAULT_NUM_STEPS
    eta: float = DEFAULT_ETA
    seed: int = 0
    n_paths: int = 1

    def __post_init__(self) -> None:
        if self.num_steps < 1:
            raise ConfigError(f"num_steps must be >= 1, got {self.num_steps}")
        if not 0.0 <= self.eta <= 1.0:
            raise ConfigError(f"eta must be in [0, 1], got {self.eta}")
        if self.n_paths < 0:
            raise ConfigError(f"n_paths must be >= 0, got {self.n_paths}")


@dataclass(frozen=True)
class GeneratorModel:
    """A trained denoiser bundled with everything sampling needs.

    return_scale converts the network's unit-variance working space back to
    log-return space; it is the global training-set std recorded at fit time.
    """

    params: dict
    bn_state: dict
    net: DenoiserConfig
    mode: str = "v"
    return_scale: float = 1.0

    def __post_init__(self) -> None:
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if not np.isfinite(self.return_scale) or self.return_scale <= 0.0:
            raise ConfigError(
                f"return_scale must be finite and > 0, got {self.return_scale}"
            )


def step_subsequence(total_steps: int, k: int) -> np.ndarray:
    """k step indices, uniformly spaced over 1..T, descending, both endpoints.

    Uniform spacing keeps consecutive gaps >= 1, so the rounded grid never
    collides and the result always has exactly k entries.
    """
    if total_steps < 1:
        raise ConfigError(f"total_steps must be >= 1, got {total_steps}")
    if not 1 <= k <= total_steps:
        raise ConfigError(f"num_steps must be in 1..{total_steps}, got {k}")
    grid = np.linspace(total_steps, 1, k)
    steps = np.unique(np.rint(grid).astype(np.int64))[::-1]
    return steps


def ddim_sigma(sched: NoiseSchedule, t: int, t_prev: int, eta: float) -> float:
    """Noise scale for the t -> t_prev jump; 0 at eta=0 or when abar_prev=1."""
    if not 0.0 <= eta <= 1.0:
        raise ConfigError(f"eta must be in [0, 1], got {eta}")
    if not t_prev < t:
        raise DataError(f"t_prev must be < t, got {t_prev} >= {t}")
    if eta == 0.0:
        return 0.0
    ab_t = float(sched.alpha_bar_at(t))
    ab_p = float(sched.alpha_bar_at(t_prev))
    ratio = max(0.0, 1.0 - ab_t / ab_p)
    return eta * np.sqrt((1.0 - ab_p) / (1.0 - ab_t)) * np.sqrt(ratio)


def ddim_step(x_t, eps_hat, t: int, t_prev: int, sched: NoiseSchedule,
              sigma: float, noise=None) -> np.ndarray:
    """One reverse jump t -> t_prev given the noise estimate at t.

    noise is required only when sigma > 0; with sigma = 0 the step is
    deterministic and t_prev = 0 returns the x0 reconstruction exactly.
    """
    if not t_prev < t:
        raise DataError(f"t_prev must be < t, got {t_prev} >= {t}")
    if sigma < 0.0:
        raise ConfigError(f"sigma must be >= 0, got {sigma}")
    ab_p = float(sched.alpha_bar_at(t_prev))
    if sigma * sigma > 1.0 - ab_p + 1e-15:
        raise ConfigError(
            f"sigma^2 = {sigma * sigma} exceeds 1 - alpha_bar_prev = {1.0 - ab_p}"
        )
    x0_hat = diffusion.recover_x0(x_t, eps_hat, "eps", t, sched)
    direction = np.sqrt(max(0.0, 1.0 - ab_p - sigma * sigma))
    out = np.sqrt(ab_p) * x0_hat + direction * np.asarray(eps_hat, dtype=float)
    if sigma > 0.0:
        if noise is None:
            raise ConfigError("sigma > 0 requires a noise array")
        out = out + sigma * np.asarray(noise, dtype=float)
    return out


def ddim_trajectory(eps_fn, x_start, sched: NoiseSchedule, steps,
                    eta: float = 0.0, noise_fn=None) -> np.ndarray:
    """Run the full reverse chain from x_T to the data-space output.

    eps_fn(x_t, t) supplies the noise estimate; noise_fn(shape) supplies
    fresh Gaussians and is consulted only when the step is stochastic.
    """
    steps = np.asarray(steps, dtype=np.int64)
    if steps.size == 0:
        raise ConfigError("empty step subsequence")
    x = np.asarray(x_start, dtype=float)
    for i, t in enumerate(steps):
        t_prev = int(steps[i + 1]) if i + 1 < steps.size else 0
        eps_hat = eps_fn(x, int(t))
        sigma = ddim_sigma(sched, int(t), t_prev, eta)
        noise = None
        if sigma > 0.0:
            if noise_fn is None:
                raise ConfigError("eta > 0 requires a noise source")
            noise = noise_fn(x.shape)
        x = ddim_step(x, eps_hat, int(t), t_prev, sched, sigma, noise)
    return x


def sample_paths(model: GeneratorModel, config: SamplerConfig,
                 condition: ConditionVector, sched: NoiseSchedule) -> np.ndarray:
    """Draw n_paths log-return sequences for one condition.

    Returns an (n_paths, n_trading) array: the network output truncated to
    the condition's valid length and rescaled to log-return space.
    """
    if config.num_steps > sched.T:
        raise ConfigError(
            f"num_steps {config.num_steps} exceeds schedule length {sched.T}"
        )
    length = model.net.input_length
    n_valid = condition.n_trading
    if n_valid > length:
        raise ConfigError(
            f"condition needs {n_valid} steps but the network length is {length}"
        )
    steps = step_subsequence(sched.T, config.num_steps)
    cond_row = condition.as_array()
    out = np.empty((config.n_paths, n_valid), dtype=np.float64)
    if config.n_paths == 0:
        return out

    for start in range(0, config.n_paths, SAMPLE_CHUNK):
        stop = min(start + SAMPLE_CHUNK, config.n_paths)
        streams = [np.random.default_rng([config.seed, i]) for i in range(start, stop)]
        x = np.stack([rng.standard_normal((1, length)) for rng in streams])
        cond = np.repeat(cond_row[None, :], stop - start, axis=0)
        for i, t in enumerate(steps):
            t_prev = int(steps[i + 1]) if i + 1 < steps.size else 0
            pred, _, _ = denoiser.forward(
                model.params, model.bn_state, x, int(t), cond, model.net,
                training=False,
            )
            eps_hat = diffusion.recover_eps(x, pred, model.mode, int(t), sched)
            sigma = ddim_sigma(sched, int(t), t_prev, config.eta)
            noise = None
            if sigma > 0.0:
                noise = np.stack([rng.standard_normal((1, length)) for rng in streams])
            x = ddim_step(x, eps_hat, int(t), t_prev, sched, sigma, noise)
        chunk = x[:, 0, :n_valid] * model.return_scale
        if not np.all(np.isfinite(chunk)):
            raise NumericError("sampler produced non-finite log returns")
        out[start:stop] = chunk
    return out


# ---------------------------------------------------------------------------
# path bundle files


def write_path_bundle(csv_path, paths: np.ndarray, condition: ConditionVector,
                      config: SamplerConfig, extra: dict | None = None) -> None:
    """Write generated paths as path_id,step,log_return rows plus a sidecar.

    step is 1-based so it matches cash-flow day indexing.  The sidecar
    manifest (csv_path + '.manifest') records the condition, seed and
    sampler settings; repr() keeps floats lossless.
    """
    paths = np.asarray(paths, dtype=np.float64)
    if paths.ndim != 2:
        raise DataError("paths must be a 2-D array")
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(BUNDLE_CSV_HEADER.split(","))
        for pid in range(paths.shape[0]):
            for step in range(paths.shape[1]):
                writer.writerow([pid, step + 1, repr(float(paths[pid, step]))])
    entries = {
        "n_paths": paths.shape[0],
        "n_steps": paths.shape[1],
        "seed": config.seed,
        "eta": repr(float(config.eta)),
        "num_steps": config.num_steps,
        "sigma_hist": repr(float(condition.sigma_hist)),
        "r": repr(float(condition.r)),
        "t_calendar": repr(float(condition.t_calendar)),
        "t_trading": repr(float(condition.t_trading)),
        "n_trading": condition.n_trading,
    }
    if extra:
        entries.update(extra)
    write_manifest(f"{csv_path}.manifest", entries)


def read_path_bundle(csv_path) -> tuple[np.ndarray, dict]:
    """Load a path bundle written by write_path_bundle."""
    manifest = read_manifest(f"{csv_path}.manifest")
    n_paths = int(manifest["n_paths"])
    n_steps = int(manifest["n_steps"])
    paths = np.full((n_paths, n_steps), np.nan)
    with open(csv_path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != BUNDLE_CSV_HEADER.split(","):
            raise DataError(f"{csv_path}: unexpected header {header}")
        for row in reader:
            if len(row) != 3:
                raise DataError(f"{csv_path}: bad row {row}")
            pid, step = int(row[0]), int(row[1])
            if not (0 <= pid < n_paths and 1 <= step <= n_steps):
                raise DataError(f"{csv_path}: out-of-range indices in {row}")
            paths[pid, step - 1] = float(row[2])
    if n_paths and not np.all(np.isfinite(paths)):
        raise DataError(f"{csv_path}: incomplete path grid")
    return paths, manifest
