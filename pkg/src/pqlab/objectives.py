"""Composite training loss: masked core error plus finance-aware regularizers.

The core term is a masked mean squared error on the model's training target.
Seven auxiliary terms (jump, volatility clustering, global volatility, tail,
drift, pinball, spectral) are computed on reconstructed data-space sequences
and blended in with linearly warmed-up weights.

All sequence statistics use population (biased) moments so that the
small-sequence identities asserted in the tests are exact.  Standard
deviations carry a 1e-12 variance floor: constant windows then contribute
zero gradient instead of dividing by zero.
"""

from __future__ import annotations

import warnings
from collections import Counter
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError, NumericError

SMOOTH_L1_DELTA = 1.0
VAR_FLOOR = 1e-12
KURT_MIN_VAR = 1e-24
PINBALL_Q_LOW = 0.01
PINBALL_Q_HIGH = 0.99
DEFAULT_VOL_WINDOW = 5
DEFAULT_VOL_STRIDE = 1

# column order is the on-disk contract for per-step loss logs
LOSS_CSV_HEADER = "step,core,jump,vol,gvol,kurt,drift,pinball,spectral,total"

_TERMS = ("jump", "vol", "gvol", "kurt", "drift", "pinball", "spectral")


def lambda_scale(step: int, total_steps: int, warmup_fraction: float) -> float:
    """Linear warmup multiplier: 0 at step 0, 1 from warmup end onwards."""
    if total_steps < 1:
        raise ConfigError(f"total_steps must be >= 1, got {total_steps}")
    if step < 0:
        raise ConfigError(f"step must be >= 0, got {step}")
    if not 0.0 < warmup_fraction <= 1.0:
        raise ConfigError(f"warmup_fraction must be in (0, 1], got {warmup_fraction}")
    return min(1.0, step / (warmup_fraction * total_steps))


@dataclass(frozen=True)
class LossWeights:
    """Maximum weights for the auxiliary terms plus the warmup horizon.

    Each lambda is the saturated weight reached after ``warmup_fraction`` of
    the total training steps; before that the weight ramps linearly from 0.
    """

    lambda_jump: float = 0.1
    lambda_vol: float = 0.1
    lambda_gvol: float = 0.1
    lambda_kurt: float = 0.05
    lambda_drift: float = 0.1
    lambda_pinball: float = 0.05
    lambda_spectral: float = 0.05
    warmup_fraction: float = 0.1

    def __post_init__(self) -> None:
        for term in _TERMS:
            value = getattr(self, f"lambda_{term}")
            if not np.isfinite(value) or value < 0.0:
                raise ConfigError(f"lambda_{term} must be finite and >= 0, got {value}")
        if not 0.0 < self.warmup_fraction <= 1.0:
            raise ConfigError(
                f"warmup_fraction must be in (0, 1], got {self.warmup_fraction}"
            )

    def annealed(self, step: int, total_steps: int) -> dict[str, float]:
        """Per-term weights at a given step."""
        scale = lambda_scale(step, total_steps, self.warmup_fraction)
        return {term: getattr(self, f"lambda_{term}") * scale for term in _TERMS}


@dataclass(frozen=True)
class LossBreakdown:
    """Raw per-term values plus the weighted total for one batch.

    Term fields are unweighted; ``total`` folds in the annealed weights, so
    total == core + sum(lambda_k(step) * term_k).  ``skipped`` lists
    (term, count) pairs for sequences whose term was undefined and
    contributed zero.
    """

    core: float
    jump: float
    vol: float
    gvol: float
    kurt: float
    drift: float
    pinball: float
    spectral: float
    total: float
    skipped: tuple[tuple[str, int], ...] = ()


def format_loss_row(step: int, breakdown: LossBreakdown) -> str:
    """One CSV row matching LOSS_CSV_HEADER; repr() keeps floats lossless."""
    values = (
        breakdown.core,
        breakdown.jump,
        breakdown.vol,
        breakdown.gvol,
        breakdown.kurt,
        breakdown.drift,
        breakdown.pinball,
        breakdown.spectral,
        breakdown.total,
    )
    return ",".join([str(int(step))] + [repr(float(v)) for v in values])


def _warn(message: str) -> None:
    warnings.warn(message, RuntimeWarning, stacklevel=3)


def _pair(pred, true) -> tuple[np.ndarray, np.ndarray]:
    p = np.asarray(pred, dtype=np.float64)
    t = np.asarray(true, dtype=np.float64)
    if p.ndim != 1 or t.ndim != 1:
        raise DataError("expected 1-D sequences")
    if p.shape != t.shape:
        raise DataError(f"pred and true shapes differ: {p.shape} vs {t.shape}")
    return p, t


def _prefix_len(mask) -> int:
    m = np.asarray(mask, dtype=bool)
    if m.ndim != 1:
        raise DataError("mask must be 1-D")
    n = int(m.sum())
    if n and not m[:n].all():
        raise DataError("mask must be a contiguous prefix of valid positions")
    return n


def _smooth_l1(d: np.ndarray) -> np.ndarray:
    a = np.abs(d)
    return np.where(a < SMOOTH_L1_DELTA, 0.5 * d * d, a - 0.5 * SMOOTH_L1_DELTA)


def _smooth_l1_grad(d: np.ndarray) -> np.ndarray:
    return np.where(np.abs(d) < SMOOTH_L1_DELTA, d, np.sign(d))


def _guarded_std(x: np.ndarray) -> tuple[float, float]:
    mu = float(x.mean())
    return mu, float(np.sqrt(x.var() + VAR_FLOOR))


# ---------------------------------------------------------------------------
# per-term value + gradient on 1-D valid prefixes (gradient is wrt pred)


def _masked_mse_vg(y: np.ndarray, y_hat: np.ndarray, mask) -> tuple[float, np.ndarray]:
    m = np.asarray(mask, dtype=bool)
    if m.shape != y.shape or y.shape != y_hat.shape:
        raise DataError("y, y_hat and mask shapes must all match")
    count = int(m.sum())
    if count == 0:
        raise DataError("mask selects no positions")
    d = np.where(m, y_hat - y, 0.0)
    value = float(np.sum(d * d) / count)
    return value, 2.0 * d / count


def _jump_vg(p: np.ndarray, t: np.ndarray) -> tuple[float, np.ndarray]:
    if p.size < 2:
        _warn("jump loss needs >= 2 valid positions; returning 0")
        return 0.0, np.zeros_like(p)
    e = np.diff(p) - np.diff(t)
    value = float(np.mean(np.abs(e)))
    s = np.sign(e) / e.size
    g = np.zeros_like(p)
    g[1:] += s
    g[:-1] -= s
    return value, g


def _vol_clustering_vg(
    p: np.ndarray, t: np.ndarray, window: int, stride: int
) -> tuple[float, np.ndarray]:
    if window < 1 or stride < 1:
        raise ConfigError(f"window and stride must be >= 1, got {window}, {stride}")
    if window > p.size:
        _warn("vol clustering window exceeds valid length; returning 0")
        return 0.0, np.zeros_like(p)
    starts = range(0, p.size - window + 1, stride)
    sig_p = np.empty(len(starts))
    mu_p = np.empty(len(starts))
    sig_t = np.empty(len(starts))
    for i, s in enumerate(starts):
        mu_p[i], sig_p[i] = _guarded_std(p[s : s + window])
        _, sig_t[i] = _guarded_std(t[s : s + window])
    d = sig_p - sig_t
    value = float(np.mean(_smooth_l1(d)))
    gd = _smooth_l1_grad(d) / len(starts)
    g = np.zeros_like(p)
    for i, s in enumerate(starts):
        seg = p[s : s + window]
        g[s : s + window] += gd[i] * (seg - mu_p[i]) / (window * sig_p[i])
    return value, g


def _global_vol_vg(p: np.ndarray, t: np.ndarray) -> tuple[float, np.ndarray]:
    if p.size < 2:
        _warn("global vol needs >= 2 valid positions; returning 0")
        return 0.0, np.zeros_like(p)
    mu, sig_p = _guarded_std(p)
    _, sig_t = _guarded_std(t)
    sgn = float(np.sign(sig_p - sig_t))
    g = sgn * (p - mu) / (p.size * sig_p)
    return abs(sig_p - sig_t), g


def _kurtosis_vg(x: np.ndarray) -> tuple[float, np.ndarray]:
    n = x.size
    c = x - x.mean()
    m2 = float(np.mean(c * c))
    if m2 < KURT_MIN_VAR:
        raise NumericError("kurtosis undefined for a zero-variance sequence")
    m3 = float(np.mean(c**3))
    m4 = float(np.mean(c**4))
    value = m4 / m2**2 - 3.0
    dm4 = 4.0 / n * (c**3 - m3)
    dm2 = 2.0 / n * c
    g = dm4 / m2**2 - 2.0 * m4 * dm2 / m2**3
    return value, g


def _tail_vg(p: np.ndarray, t: np.ndarray) -> tuple[float, np.ndarray]:
    k_pred, gk = _kurtosis_vg(p)
    k_true, _ = _kurtosis_vg(t)
    e = k_pred - k_true
    return e * e, 2.0 * e * gk


def _drift_vg(p: np.ndarray, t: np.ndarray) -> tuple[float, np.ndarray]:
    e = (p[-1] - p[0]) - (t[-1] - t[0])
    g = np.zeros_like(p)
    g[-1] += 2.0 * e
    g[0] -= 2.0 * e
    return e * e, g


def _pinball_vg(y: np.ndarray, y_hat: np.ndarray, q: float) -> tuple[float, np.ndarray]:
    d = y - y_hat
    over = d >= 0.0
    per = np.where(over, q * d, (1.0 - q) * (-d))
    g = np.where(over, -q, 1.0 - q) / d.size
    return float(np.mean(per)), g


def _pinball_pair_vg(p: np.ndarray, t: np.ndarray) -> tuple[float, np.ndarray]:
    v_lo, g_lo = _pinball_vg(t, p, PINBALL_Q_LOW)
    v_hi, g_hi = _pinball_vg(t, p, PINBALL_Q_HIGH)
    return 0.5 * (v_lo + v_hi), 0.5 * (g_lo + g_hi)


def _spectrum(x: np.ndarray) -> tuple[np.ndarray, np.ndarray, float, int]:
    ft = np.fft.fft(x)
    mag = np.abs(ft)
    peak = float(mag.max())
    if peak <= 0.0:
        raise NumericError("spectral loss undefined for an all-zero sequence")
    return ft, mag, peak, int(np.argmax(mag))


def _spectral_vg(p: np.ndarray, t: np.ndarray) -> tuple[float, np.ndarray]:
    if p.size < 2:
        _warn("spectral loss needs >= 2 valid positions; returning 0")
        return 0.0, np.zeros_like(p)
    ft_p, mag_p, peak_p, peak_idx = _spectrum(p)
    _, mag_t, peak_t, _ = _spectrum(t)
    d = mag_p / peak_p - mag_t / peak_t
    value = float(np.mean(_smooth_l1(d)))

    g_norm = _smooth_l1_grad(d) / d.size
    g_mag = g_norm / peak_p
    g_mag[peak_idx] -= float(np.dot(g_norm, mag_p)) / peak_p**2
    # d|X_k|/dx_m = Re(conj(X_k)/|X_k| * exp(-2pi i k m / n)), so the chain
    # collapses to one forward transform; bins with zero magnitude get a
    # zero subgradient
    safe = mag_p > peak_p * 1e-15
    ratio = np.where(safe, g_mag * np.conj(ft_p) / np.where(safe, mag_p, 1.0), 0.0)
    return value, np.real(np.fft.fft(ratio))


# ---------------------------------------------------------------------------
# public single-term views


def masked_mse(y, y_hat, mask) -> float:
    """Mean squared error over valid positions only: (1/|M|) sum M*(y-yhat)^2."""
    y = np.asarray(y, dtype=np.float64)
    y_hat = np.asarray(y_hat, dtype=np.float64)
    value, _ = _masked_mse_vg(y, y_hat, mask)
    return value


def jump_loss(pred, true, mask=None) -> float:
    """Mean absolute difference of first differences over valid adjacent pairs."""
    p, t = _pair(pred, true)
    n = p.size if mask is None else _prefix_len(mask)
    if mask is not None and np.asarray(mask).shape != p.shape:
        raise DataError("mask shape must match the sequences")
    value, _ = _jump_vg(p[:n], t[:n])
    return value


def vol_clustering_loss(
    pred, true, window: int = DEFAULT_VOL_WINDOW, stride: int = DEFAULT_VOL_STRIDE
) -> float:
    """SmoothL1 distance between rolling-window standard deviation vectors."""
    p, t = _pair(pred, true)
    value, _ = _vol_clustering_vg(p, t, window, stride)
    return value


def global_vol_loss(pred, true) -> float:
    """Absolute difference of the global standard deviations."""
    p, t = _pair(pred, true)
    value, _ = _global_vol_vg(p, t)
    return value


def kurtosis(x) -> float:
    """Excess kurtosis E[z^4] - 3 with population moments."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 1:
        raise DataError("expected a 1-D sequence")
    value, _ = _kurtosis_vg(arr)
    return value


def tail_loss(pred, true) -> float:
    """Squared difference of excess kurtosis."""
    p, t = _pair(pred, true)
    value, _ = _tail_vg(p, t)
    return value


def drift_loss(pred, true) -> float:
    """Squared difference of the telescoped total change (last - first)."""
    p, t = _pair(pred, true)
    value, _ = _drift_vg(p, t)
    return value


def pinball_loss(y, y_hat, q: float) -> float:
    """Quantile loss: q*(y-yhat) when y >= yhat, else (1-q)*(yhat-y)."""
    if not 0.0 < q < 1.0:
        raise ConfigError(f"quantile must be in (0, 1), got {q}")
    ya = np.asarray(y, dtype=np.float64)
    yh = np.asarray(y_hat, dtype=np.float64)
    if ya.shape != yh.shape:
        raise DataError(f"y and y_hat shapes differ: {ya.shape} vs {yh.shape}")
    value, _ = _pinball_vg(ya, yh, q)
    return value


def magnitude_spectrum(x) -> np.ndarray:
    """Max-normalized magnitude spectrum |X_k| / max|X| of a 1-D sequence."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 1 or arr.size < 1:
        raise DataError("expected a non-empty 1-D sequence")
    _, mag, peak, _ = _spectrum(arr)
    return mag / peak


def spectral_loss(pred, true) -> float:
    """SmoothL1 distance between max-normalized magnitude spectra."""
    p, t = _pair(pred, true)
    value, _ = _spectral_vg(p, t)
    return value


# ---------------------------------------------------------------------------
# composite


def total_loss(
    pred,
    target,
    x0_pred,
    x0_true,
    mask,
    step: int,
    total_steps: int,
    weights: LossWeights | None = None,
    window: int = DEFAULT_VOL_WINDOW,
    stride: int = DEFAULT_VOL_STRIDE,
    with_grads: bool = False,
):
    """Evaluate the full training loss on one batch.

    pred/target are (B, L) arrays in the training parameterization; x0_pred
    and x0_true are the matching data-space reconstructions the auxiliary
    terms are measured on.  mask is a (B, L) boolean array whose rows are
    contiguous validity prefixes.

    Returns a LossBreakdown, or with with_grads=True a tuple
    (breakdown, d_total/d_pred, d_total/d_x0_pred); the two gradients are
    disjoint halves of the chain, so callers combine them through the
    Jacobian of their x0 reconstruction.
    """
    if weights is None:
        weights = LossWeights()
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    x0_pred = np.asarray(x0_pred, dtype=np.float64)
    x0_true = np.asarray(x0_true, dtype=np.float64)
    mask_arr = np.asarray(mask, dtype=bool)
    if pred.ndim != 2:
        raise DataError("expected (batch, length) arrays")
    for name, arr in (("target", target), ("x0_pred", x0_pred),
                      ("x0_true", x0_true), ("mask", mask_arr)):
        if arr.shape != pred.shape:
            raise DataError(f"{name} shape {arr.shape} != pred shape {pred.shape}")

    lam = weights.annealed(step, total_steps)
    core, g_pred = _masked_mse_vg(target, pred, mask_arr)

    batch = pred.shape[0]
    sums = dict.fromkeys(_TERMS, 0.0)
    skipped: Counter[str] = Counter()
    g_x0 = np.zeros_like(x0_pred)

    for b in range(batch):
        n = _prefix_len(mask_arr[b])
        if n == 0:
            raise DataError(f"batch row {b} has an empty mask")
        p = x0_pred[b, :n]
        t = x0_true[b, :n]

        evaluated: list[tuple[str, float, np.ndarray]] = []
        evaluated.append(("jump", *_jump_vg(p, t)))
        evaluated.append(("vol", *_vol_clustering_vg(p, t, window, stride)))
        evaluated.append(("gvol", *_global_vol_vg(p, t)))
        try:
            evaluated.append(("kurt", *_tail_vg(p, t)))
        except NumericError:
            skipped["kurt"] += 1
        evaluated.append(("drift", *_drift_vg(p, t)))
        evaluated.append(("pinball", *_pinball_pair_vg(p, t)))
        try:
            evaluated.append(("spectral", *_spectral_vg(p, t)))
        except NumericError:
            skipped["spectral"] += 1

        for term, value, grad in evaluated:
            sums[term] += value
            g_x0[b, :n] += (lam[term] / batch) * grad

    for term, count in sorted(skipped.items()):
        _warn(f"{term} term undefined for {count} sequence(s); contributed 0")

    means = {term: sums[term] / batch for term in _TERMS}
    total = core + sum(lam[term] * means[term] for term in _TERMS)
    breakdown = LossBreakdown(
        core=core,
        jump=means["jump"],
        vol=means["vol"],
        gvol=means["gvol"],
        kurt=means["kurt"],
        drift=means["drift"],
        pinball=means["pinball"],
        spectral=means["spectral"],
        total=total,
        skipped=tuple(sorted(skipped.items())),
    )
    if with_grads:
        return breakdown, g_pred, g_x0
    return breakdown
