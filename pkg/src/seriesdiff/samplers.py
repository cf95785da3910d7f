"""Reverse-process samplers: ancestral, deterministic-skip, and annealed Langevin.

All samplers share the epsilon-parameterized network through
``guided_eps``, which blends conditional and unconditional predictions as
omega * eps(x, t, c) + (1 - omega) * eps(x, t, NULL).  omega = 1 is exactly
the conditional model and omega = 0 exactly the unconditional one; both
endpoints skip the second network evaluation entirely so they are bitwise
identical to the single-model calls.

The ancestral sampler walks every step t = T..1 with the forward-posterior
variance; its final step has zero variance by the alpha_bar_0 = 1 convention,
so the last update is deterministic.  The skip sampler jumps along a
subsequence of steps through the predicted clean window; with sigma = 0 it is
fully deterministic, and with sigma^2 equal to the posterior variance it
reproduces the ancestral per-step mean exactly.  Between denoising steps the
high-level ``sample`` loop optionally applies the smoothing and spectral
corrections from ``regularizers``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import NumericError, ParameterError
from .regularizers import AntvConfig, BandSpec, antv_step, bp_grad_step
from .schedules import NoiseSchedule, SigmaLadder, forward_perturb
from .scorenet import ConditionVector, ScoreNetworkParams, predict_eps

__all__ = [
    "SamplerConfig",
    "SampleResult",
    "guided_eps",
    "ddpm_mean",
    "ddpm_step",
    "make_subsequence",
    "jump_variance",
    "ddim_mean",
    "ddim_step",
    "langevin_sample",
    "perturb_to_level",
    "sample_one",
    "sample",
]


def guided_eps(
    params: ScoreNetworkParams,
    x_t: np.ndarray,
    t: int,
    cond: ConditionVector | None,
    omega: float,
) -> np.ndarray:
    """Classifier-free guided noise prediction.

    Returns omega * eps(x, t, cond) + (1 - omega) * eps(x, t, NULL).  The
    omega = 0 and omega = 1 endpoints evaluate the network once and return
    that result unchanged.  A NULL condition with omega != 0 is rejected:
    there is nothing to guide toward.
    """
    if not math.isfinite(omega):
        raise ParameterError(f"omega must be finite, got {omega}")
    is_null = cond is None or cond.is_null
    if omega == 0.0:
        return predict_eps(params, x_t, t, None)
    if is_null:
        raise ParameterError("guidance weight is nonzero but the condition is NULL")
    if omega == 1.0:
        return predict_eps(params, x_t, t, cond)
    eps_cond = predict_eps(params, x_t, t, cond)
    eps_uncond = predict_eps(params, x_t, t, None)
    return omega * eps_cond + (1.0 - omega) * eps_uncond


def ddpm_mean(
    x_t: np.ndarray, t: int, eps_hat: np.ndarray, schedule: NoiseSchedule
) -> np.ndarray:
    """Posterior mean of one ancestral step:
    (x_t - beta_t / sqrt(1 - alpha_bar_t) * eps_hat) / sqrt(alpha_t)."""
    if not 1 <= t <= schedule.T:
        raise ParameterError(f"t={t} outside [1, {schedule.T}]")
    x_t = np.asarray(x_t, dtype=np.float64)
    eps_hat = np.asarray(eps_hat, dtype=np.float64)
    if x_t.shape != eps_hat.shape:
        raise ParameterError(f"shape mismatch: x {x_t.shape} vs eps {eps_hat.shape}")
    beta = schedule.beta[t - 1]
    ab = schedule.alpha_bar[t - 1]
    return (x_t - beta / math.sqrt(1.0 - ab) * eps_hat) / math.sqrt(schedule.alpha[t - 1])


def ddpm_step(
    x_t: np.ndarray,
    t: int,
    eps_hat: np.ndarray,
    schedule: NoiseSchedule,
    rng: np.random.Generator,
) -> np.ndarray:
    """One ancestral reverse step t -> t-1.

    Adds posterior-variance noise except at t = 1, where the variance is
    exactly zero and no noise is drawn, so the final step is deterministic.
    """
    mean = ddpm_mean(x_t, t, eps_hat, schedule)
    var = schedule.posterior_var[t - 1]
    if var == 0.0:
        return mean
    return mean + math.sqrt(var) * rng.standard_normal(x_t.shape)


def make_subsequence(T: int, n_steps: int, strategy: str = "uniform") -> np.ndarray:
    """Increasing step subsequence of length ``n_steps`` ending exactly at T.

    The uniform strategy uses stride floor(T / n_steps) counted back from T:
    T=400, n_steps=50 gives 8, 16, ..., 400.  n_steps = T returns 1..T.
    """
    if strategy != "uniform":
        raise ParameterError(f"unknown subsequence strategy {strategy!r}")
    if not 1 <= n_steps <= T:
        raise ParameterError(f"n_steps={n_steps} outside [1, {T}]")
    stride = T // n_steps
    taus = T - stride * np.arange(n_steps - 1, -1, -1, dtype=np.int64)
    return taus


def jump_variance(schedule: NoiseSchedule, t_cur: int, t_prev: int) -> float:
    """Forward-posterior variance of the jump t_cur -> t_prev (t_prev may be 0).

    (1 - alpha_bar_prev) / (1 - alpha_bar_cur) * (1 - alpha_bar_cur / alpha_bar_prev).
    For adjacent steps this is exactly the stored per-step posterior variance;
    for t_prev = 0 it is 0.
    """
    if not 0 <= t_prev < t_cur <= schedule.T:
        raise ParameterError(
            f"need 0 <= t_prev < t_cur <= T, got ({t_prev}, {t_cur}) with T={schedule.T}"
        )
    ab_cur = schedule.alpha_bar_at(t_cur)
    ab_prev = schedule.alpha_bar_at(t_prev)
    return (1.0 - ab_prev) / (1.0 - ab_cur) * (1.0 - ab_cur / ab_prev)


def ddim_mean(
    x_t: np.ndarray,
    t_cur: int,
    t_prev: int,
    eps_hat: np.ndarray,
    schedule: NoiseSchedule,
    sigma: float = 0.0,
) -> np.ndarray:
    """Deterministic part of one skip step t_cur -> t_prev.

    Reconstructs the clean-window estimate
    x0_hat = (x_t - sqrt(1 - alpha_bar_cur) * eps_hat) / sqrt(alpha_bar_cur)
    and re-corrupts it to the target level, keeping sqrt(1 - alpha_bar_prev -
    sigma^2) of the predicted noise direction.  sigma^2 may not exceed
    1 - alpha_bar_prev (the noise budget of the target level).
    """
    if not 0 <= t_prev < t_cur <= schedule.T:
        raise ParameterError(
            f"need 0 <= t_prev < t_cur <= T, got ({t_prev}, {t_cur}) with T={schedule.T}"
        )
    if sigma < 0.0 or not math.isfinite(sigma):
        raise ParameterError(f"sigma must be finite and >= 0, got {sigma}")
    x_t = np.asarray(x_t, dtype=np.float64)
    eps_hat = np.asarray(eps_hat, dtype=np.float64)
    if x_t.shape != eps_hat.shape:
        raise ParameterError(f"shape mismatch: x {x_t.shape} vs eps {eps_hat.shape}")
    ab_cur = schedule.alpha_bar_at(t_cur)
    ab_prev = schedule.alpha_bar_at(t_prev)
    budget = 1.0 - ab_prev - sigma * sigma
    if budget < -1e-15:
        raise ParameterError(
            f"sigma^2={sigma * sigma} exceeds the noise budget {1.0 - ab_prev} at t_prev={t_prev}"
        )
    x0_hat = (x_t - math.sqrt(1.0 - ab_cur) * eps_hat) / math.sqrt(ab_cur)
    return math.sqrt(ab_prev) * x0_hat + math.sqrt(max(budget, 0.0)) * eps_hat


def ddim_step(
    x_t: np.ndarray,
    t_cur: int,
    t_prev: int,
    eps_hat: np.ndarray,
    schedule: NoiseSchedule,
    sigma: float = 0.0,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """One skip step; adds sigma * z on top of ``ddim_mean`` when sigma > 0."""
    mean = ddim_mean(x_t, t_cur, t_prev, eps_hat, schedule, sigma)
    if sigma == 0.0:
        return mean
    if rng is None:
        raise ParameterError("sigma > 0 requires an rng for the noise draw")
    return mean + sigma * rng.standard_normal(np.asarray(x_t).shape)


def langevin_sample(
    score_fn: Callable[[np.ndarray, float], np.ndarray],
    ladder: SigmaLadder,
    step_sizes: np.ndarray | float,
    n_steps: int,
    shape: tuple[int, ...],
    rng: np.random.Generator,
) -> np.ndarray:
    """Annealed Langevin dynamics over a decreasing noise ladder.

    Starts from N(0, sigma_max^2) and, for each level i from the top of the
    ladder down, runs ``n_steps`` updates

        x <- x + eps_i * score_fn(x, sigma_i) + sqrt(2 eps_i) * z,

    carrying the final state of one level into the next.  ``step_sizes``
    aligns with ``ladder.sigma`` (index 0 = smallest scale) and may be a
    scalar.  Draw order: the initial state, then one z per update.
    """
    sizes = np.broadcast_to(
        np.asarray(step_sizes, dtype=np.float64), (ladder.levels,)
    ).copy()
    if np.any(sizes <= 0.0) or not np.all(np.isfinite(sizes)):
        raise ParameterError("step sizes must be finite and positive")
    if n_steps < 1:
        raise ParameterError(f"n_steps must be >= 1, got {n_steps}")
    sigma_max = float(ladder.sigma[-1])
    x = sigma_max * rng.standard_normal(shape)
    for level in range(ladder.levels - 1, -1, -1):
        sigma = float(ladder.sigma[level])
        eps_i = float(sizes[level])
        root = math.sqrt(2.0 * eps_i)
        for _ in range(n_steps):
            s = np.asarray(score_fn(x, sigma), dtype=np.float64)
            if s.shape != x.shape:
                raise ParameterError("score_fn must preserve the state shape")
            if not np.all(np.isfinite(s)):
                raise NumericError(f"score function returned non-finite values at sigma={sigma}")
            x = x + eps_i * s + root * rng.standard_normal(shape)
    return x


def perturb_to_level(
    x0: np.ndarray, t: int, schedule: NoiseSchedule, rng: np.random.Generator
) -> np.ndarray:
    """Corrupt a clean window to level t with a fresh noise draw (transfer entry point)."""
    x0 = np.asarray(x0, dtype=np.float64)
    return forward_perturb(x0, t, rng.standard_normal(x0.shape), schedule)


@dataclass(frozen=True, eq=False)
class SamplerConfig:
    """Settings of the high-level sampling loop.

    mode : "ddim" (skip sampler) or "ddpm" (full ancestral walk).
    steps : subsequence length for ddim; None means the full T.  ddpm always
        walks every step.
    eta : noise scale factor; per-jump sigma = eta * sqrt(jump_variance).
        0 is deterministic, 1 matches the ancestral noise level.
    guidance : classifier-free guidance weight omega.
    num_samples : how many windows to draw.
    lambda_antv : smoothing step size applied after each denoising step;
        0 disables.
    lambda_bp : spectral-anchor step size, used only when ``source`` is set;
        0 disables.
    antv_window/antv_alpha/antv_sigma : smoothing shape parameters.
    band : (low, high) frequency band of the spectral anchor.
    source : optional clean window; when set, sampling starts from a partial
        corruption of it instead of pure noise, and the spectral anchor pulls
        toward its band-limited spectrum.
    seed : base seed; sample i runs on the i-th spawned child stream.
    """

    mode: str = "ddim"
    steps: int | None = None
    eta: float = 0.0
    guidance: float = 7.5
    num_samples: int = 1
    lambda_antv: float = 0.0
    lambda_bp: float = 0.0
    antv_window: int = 3
    antv_alpha: float = 1.0
    antv_sigma: float = 1.0
    band: tuple[int, int] = (1, 10)
    source: np.ndarray | None = None
    seed: int = 0

    def __post_init__(self) -> None:
        if self.mode not in ("ddim", "ddpm"):
            raise ParameterError(f"unknown sampler mode {self.mode!r}")
        if self.steps is not None and self.steps < 1:
            raise ParameterError(f"steps must be >= 1, got {self.steps}")
        if self.eta < 0.0 or not math.isfinite(self.eta):
            raise ParameterError(f"eta must be finite and >= 0, got {self.eta}")
        if not math.isfinite(self.guidance):
            raise ParameterError(f"guidance must be finite, got {self.guidance}")
        if self.num_samples < 1:
            raise ParameterError(f"num_samples must be >= 1, got {self.num_samples}")
        if self.lambda_antv < 0.0 or self.lambda_bp < 0.0:
            raise ParameterError("correction step sizes must be >= 0")
        if self.source is not None:
            src = np.asarray(self.source, dtype=np.float64)
            if src.ndim != 1 or src.size == 0 or not np.all(np.isfinite(src)):
                raise ParameterError("source must be a finite non-empty 1-D window")
            object.__setattr__(self, "source", src)


@dataclass(frozen=True)
class SampleResult:
    """Generated windows (num_samples, L) and their pointwise mean (L,)."""

    mean: np.ndarray
    samples: np.ndarray


def _step_pairs(schedule: NoiseSchedule, cfg: SamplerConfig) -> list[tuple[int, int]]:
    T = schedule.T
    if cfg.mode == "ddpm":
        if cfg.steps is not None and cfg.steps != T:
            raise ParameterError(
                f"ddpm walks all {T} steps; steps={cfg.steps} is only valid for ddim"
            )
        taus = np.arange(1, T + 1, dtype=np.int64)
    else:
        taus = make_subsequence(T, cfg.steps if cfg.steps is not None else T)
    prev = np.concatenate(([0], taus[:-1]))
    return list(zip(taus[::-1].tolist(), prev[::-1].tolist()))


def sample_one(
    params: ScoreNetworkParams,
    schedule: NoiseSchedule,
    cfg: SamplerConfig,
    condition: ConditionVector | None,
    rng: np.random.Generator,
) -> np.ndarray:
    """Generate a single window with an externally supplied generator.

    The denoising loop interleaves, in order per step: the guided noise
    prediction, the reverse update, the smoothing sweep (if enabled), and the
    spectral-anchor step (if a source window is set).  Raises NumericError
    with the offending step index if the state ever leaves the finite range.
    """
    L = params.config.input_len
    pairs = _step_pairs(schedule, cfg)
    if cfg.source is not None and cfg.source.shape != (L,):
        raise ParameterError(
            f"source window has shape {cfg.source.shape}, expected ({L},)"
        )
    if cfg.source is not None:
        x = perturb_to_level(cfg.source, pairs[0][0], schedule, rng)
    else:
        x = rng.standard_normal(L)
    antv_cfg = None
    if cfg.lambda_antv > 0.0:
        antv_cfg = AntvConfig(
            window=cfg.antv_window,
            alpha=cfg.antv_alpha,
            sigma=cfg.antv_sigma,
            rate=cfg.lambda_antv,
        )
    band = BandSpec(int(cfg.band[0]), int(cfg.band[1])) if cfg.source is not None else None
    for t_cur, t_prev in pairs:
        eps_hat = guided_eps(params, x, t_cur, condition, cfg.guidance)
        if cfg.mode == "ddpm":
            x = ddpm_step(x, t_cur, eps_hat, schedule, rng)
        else:
            sigma = cfg.eta * math.sqrt(jump_variance(schedule, t_cur, t_prev))
            x = ddim_step(x, t_cur, t_prev, eps_hat, schedule, sigma, rng)
        if antv_cfg is not None:
            x = antv_step(x, antv_cfg)
        if band is not None and cfg.lambda_bp > 0.0:
            x = bp_grad_step(x, cfg.source, band, cfg.lambda_bp)
        if not np.all(np.isfinite(x)):
            raise NumericError(f"sampler state became non-finite after step t={t_cur}")
    return x


def sample(
    params: ScoreNetworkParams,
    schedule: NoiseSchedule,
    cfg: SamplerConfig,
    condition: ConditionVector | None = None,
) -> SampleResult:
    """Generate ``cfg.num_samples`` windows and their pointwise mean.

    Each sample runs on an independent child stream spawned from
    ``cfg.seed``, so the result is reproducible and individual samples are
    unchanged when num_samples grows.
    """
    streams = np.random.SeedSequence(cfg.seed).spawn(cfg.num_samples)
    out = np.empty((cfg.num_samples, params.config.input_len), dtype=np.float64)
    for i, stream in enumerate(streams):
        out[i] = sample_one(params, schedule, cfg, condition, np.random.default_rng(stream))
    return SampleResult(mean=out.mean(axis=0), samples=out)
