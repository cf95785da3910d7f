"""Conditional noise-prediction network, hand-differentiated, with its trainer.

The network maps a corrupted window x_t, a discrete step t, and an optional
(industry, board) condition to a prediction of the noise that produced x_t.
Architecture: the window is projected to a hidden width, then passed through
residual blocks; each block adds linear projections of a sinusoidal time
embedding and of the condition encoding to its input before a two-layer
bottleneck, and a final linear head maps back to window length.  The
condition encoding concatenates a learned industry embedding refined by a
three-layer MLP with a fixed board one-hot; the NULL condition is the
all-zero vector, which is what classifier-free guidance trains against.

Everything is plain float64 numpy.  Parameters live in one flat vector with a
named layout so the whole model can be checkpointed, finite-difference
checked, and updated by a vector optimizer without any framework.  Forward
and backward passes are written out explicitly; the backward pass is verified
against central differences in the test suite.  Evaluation is
single-threaded with a fixed reduction order, so every result is bitwise
reproducible for a given parameter vector and rng seed.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DataError, NumericError, ParameterError
from .schedules import NoiseSchedule

__all__ = [
    "ScoreNetConfig",
    "ConditionVector",
    "ScoreNetworkParams",
    "TrainConfig",
    "TrainResult",
    "time_embedding",
    "encode_condition",
    "init_params",
    "predict_eps",
    "predict_eps_vjp",
    "condition_dropout",
    "dsm_residual_loss",
    "dsm_loss",
    "train",
    "save_checkpoint",
    "load_checkpoint",
    "read_checkpoint_meta",
]

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT_VERSION = 1

_TIME_FREQ_BASE = 10000.0


@dataclass(frozen=True)
class ScoreNetConfig:
    """Shapes and activation of the noise-prediction network.

    input_len : window length L.
    width : hidden width of the residual trunk.
    blocks : number of residual blocks.
    time_dim : sinusoidal time-embedding dimension (even).
    embed_dim : industry embedding dimension E; the condition vector has
        length E + n_boards.
    cond_hidden : hidden width of the condition MLP.
    activation : "silu" (default; smooth, so gradient checks are exact to
        finite-difference accuracy) or "relu".
    """

    input_len: int
    width: int = 64
    blocks: int = 4
    time_dim: int = 32
    embed_dim: int = 16
    cond_hidden: int = 128
    n_industries: int = 124
    n_boards: int = 5
    activation: str = "silu"

    def __post_init__(self) -> None:
        for name in ("input_len", "width", "blocks", "time_dim", "embed_dim",
                     "cond_hidden", "n_industries", "n_boards"):
            v = getattr(self, name)
            if not isinstance(v, int) or v < 1:
                raise ParameterError(f"{name} must be a positive integer, got {v!r}")
        if self.time_dim % 2 != 0:
            raise ParameterError(f"time_dim must be even, got {self.time_dim}")
        if self.activation not in ("silu", "relu"):
            raise ParameterError(f"unknown activation {self.activation!r}")

    @property
    def cond_dim(self) -> int:
        return self.embed_dim + self.n_boards


@dataclass(frozen=True)
class ConditionVector:
    """An encoded (industry, board) condition; ids None on the NULL condition."""

    industry_id: int | None
    board_id: int | None
    encoded: np.ndarray

    @property
    def is_null(self) -> bool:
        return self.industry_id is None


def _param_layout(cfg: ScoreNetConfig) -> list[tuple[str, tuple[int, ...]]]:
    layout: list[tuple[str, tuple[int, ...]]] = [
        ("embed", (cfg.n_industries, cfg.embed_dim)),
        ("cond_w1", (cfg.cond_hidden, cfg.embed_dim)),
        ("cond_b1", (cfg.cond_hidden,)),
        ("cond_w2", (cfg.cond_hidden, cfg.cond_hidden)),
        ("cond_b2", (cfg.cond_hidden,)),
        ("cond_w3", (cfg.embed_dim, cfg.cond_hidden)),
        ("cond_b3", (cfg.embed_dim,)),
        ("in_w", (cfg.width, cfg.input_len)),
        ("in_b", (cfg.width,)),
    ]
    for i in range(cfg.blocks):
        layout += [
            (f"blk{i}_time_w", (cfg.width, cfg.time_dim)),
            (f"blk{i}_cond_w", (cfg.width, cfg.cond_dim)),
            (f"blk{i}_w1", (cfg.width, cfg.width)),
            (f"blk{i}_b1", (cfg.width,)),
            (f"blk{i}_w2", (cfg.width, cfg.width)),
            (f"blk{i}_b2", (cfg.width,)),
        ]
    layout += [
        ("out_w", (cfg.input_len, cfg.width)),
        ("out_b", (cfg.input_len,)),
    ]
    return layout


@dataclass
class ScoreNetworkParams:
    """Flat float64 parameter vector plus named views defined by the config."""

    config: ScoreNetConfig
    values: np.ndarray

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=np.float64)
        layout = _param_layout(self.config)
        total = sum(int(np.prod(shape)) for _, shape in layout)
        if values.ndim != 1 or values.shape[0] != total:
            raise ParameterError(
                f"parameter vector has {values.shape} entries, layout needs {total}"
            )
        self.values = values
        offsets: dict[str, tuple[int, int, tuple[int, ...]]] = {}
        pos = 0
        for name, shape in layout:
            size = int(np.prod(shape))
            offsets[name] = (pos, pos + size, shape)
            pos += size
        self._offsets = offsets

    @property
    def n_params(self) -> int:
        return int(self.values.shape[0])

    def view(self, name: str) -> np.ndarray:
        """Named slice of the flat vector, reshaped; shares memory."""
        try:
            lo, hi, shape = self._offsets[name]
        except KeyError:
            raise ParameterError(f"unknown parameter name {name!r}") from None
        return self.values[lo:hi].reshape(shape)

    def names(self) -> list[str]:
        return list(self._offsets)

    def copy(self) -> "ScoreNetworkParams":
        return ScoreNetworkParams(config=self.config, values=self.values.copy())

    def with_values(self, values: np.ndarray) -> "ScoreNetworkParams":
        return ScoreNetworkParams(config=self.config, values=values)


def init_params(cfg: ScoreNetConfig, rng: np.random.Generator) -> ScoreNetworkParams:
    """Random initialization: 1/sqrt(fan_in) weights, zero biases.

    The second matrix of every residual block and the output head start at
    zero, so a fresh network is the identity-to-zero map and early training
    cannot blow up the residual trunk.  Draw order follows the parameter
    layout, making initialization a pure function of the rng state.
    """
    chunks: list[np.ndarray] = []
    for name, shape in _param_layout(cfg):
        size = int(np.prod(shape))
        if name == "embed":
            chunks.append(0.1 * rng.standard_normal(size))
        elif name.endswith(("_b1", "_b2", "_b3", "in_b", "out_b")) or len(shape) == 1:
            chunks.append(np.zeros(size))
        elif name == "out_w" or name.endswith("_w2") and name.startswith("blk"):
            chunks.append(np.zeros(size))
        else:
            fan_in = shape[-1]
            chunks.append(rng.standard_normal(size) / math.sqrt(fan_in))
    return ScoreNetworkParams(config=cfg, values=np.concatenate(chunks))


def _act(z: np.ndarray, kind: str) -> np.ndarray:
    if kind == "silu":
        sig = 0.5 * (1.0 + np.tanh(0.5 * z))
        return z * sig
    return np.maximum(z, 0.0)


def _act_grad(z: np.ndarray, kind: str) -> np.ndarray:
    if kind == "silu":
        sig = 0.5 * (1.0 + np.tanh(0.5 * z))
        return sig * (1.0 + z * (1.0 - sig))
    return (z > 0.0).astype(np.float64)


def time_embedding(t: int | np.ndarray, dim: int) -> np.ndarray:
    """Sinusoidal embedding of the step index.

    Frequencies fall geometrically from 1 to 1/10000, interleaved as
    [sin(t f_0), cos(t f_0), sin(t f_1), cos(t f_1), ...].  At t = 0 every
    sine entry is 0 and every cosine entry is 1.  Accepts a scalar (returns
    shape (dim,)) or a vector of steps (returns (len(t), dim)).
    """
    if dim < 2 or dim % 2 != 0:
        raise ParameterError(f"embedding dim must be even and >= 2, got {dim}")
    t_arr = np.atleast_1d(np.asarray(t, dtype=np.float64))
    if t_arr.ndim != 1:
        raise ParameterError("t must be a scalar or 1-D array")
    half = dim // 2
    freqs = _TIME_FREQ_BASE ** (-np.arange(half, dtype=np.float64) / half)
    ang = t_arr[:, None] * freqs[None, :]
    out = np.empty((t_arr.shape[0], dim), dtype=np.float64)
    out[:, 0::2] = np.sin(ang)
    out[:, 1::2] = np.cos(ang)
    return out[0] if np.isscalar(t) or np.asarray(t).ndim == 0 else out


def encode_condition(
    industry_id: int | None, board_id: int | None, params: ScoreNetworkParams
) -> ConditionVector:
    """Encode an (industry, board) pair, or the NULL condition if both are None.

    The encoding concatenates the MLP-refined industry embedding with a board
    one-hot.  NULL encodes as the all-zero vector; a partially-None pair is
    rejected because the network was never trained on one.
    """
    cfg = params.config
    if (industry_id is None) != (board_id is None):
        raise ParameterError("industry_id and board_id must be both set or both None")
    if industry_id is None:
        return ConditionVector(None, None, np.zeros(cfg.cond_dim, dtype=np.float64))
    if not 0 <= industry_id < cfg.n_industries:
        raise ParameterError(
            f"industry_id {industry_id} outside [0, {cfg.n_industries})"
        )
    if not 0 <= board_id < cfg.n_boards:
        raise ParameterError(f"board_id {board_id} outside [0, {cfg.n_boards})")
    iid = np.array([industry_id])
    bid = np.array([board_id])
    enc, _ = _encode_batch(params, iid, bid, want_cache=False)
    return ConditionVector(industry_id, board_id, enc[0])


def _encode_batch(
    params: ScoreNetworkParams,
    iid: np.ndarray,
    bid: np.ndarray,
    want_cache: bool,
) -> tuple[np.ndarray, dict | None]:
    """Condition encodings for a batch; iid/bid use -1 for the NULL condition."""
    cfg = params.config
    kind = cfg.activation
    B = iid.shape[0]
    cenc = np.zeros((B, cfg.cond_dim), dtype=np.float64)
    mask = iid >= 0
    cache: dict | None = None
    if np.any(mask):
        rows = iid[mask]
        e = params.view("embed")[rows]
        a1 = e @ params.view("cond_w1").T + params.view("cond_b1")
        h1 = _act(a1, kind)
        a2 = h1 @ params.view("cond_w2").T + params.view("cond_b2")
        h2 = _act(a2, kind)
        h3 = h2 @ params.view("cond_w3").T + params.view("cond_b3")
        cenc[mask, : cfg.embed_dim] = h3
        cenc[mask, cfg.embed_dim + bid[mask]] = 1.0
        if want_cache:
            cache = {"rows": rows, "e": e, "a1": a1, "h1": h1, "a2": a2, "h2": h2}
    if want_cache:
        return cenc, {"mask": mask, "mlp": cache}
    return cenc, None


def _forward(
    params: ScoreNetworkParams,
    x: np.ndarray,
    t: np.ndarray,
    iid: np.ndarray,
    bid: np.ndarray,
    want_cache: bool = False,
) -> tuple[np.ndarray, dict | None]:
    """Batched forward pass; x (B, L), t (B,), iid/bid (B,) with -1 for NULL."""
    cfg = params.config
    kind = cfg.activation
    temb = time_embedding(t, cfg.time_dim)
    cenc, cond_cache = _encode_batch(params, iid, bid, want_cache)
    h = x @ params.view("in_w").T + params.view("in_b")
    hs = [h]
    zs, a1s, vs = [], [], []
    for i in range(cfg.blocks):
        z = h + temb @ params.view(f"blk{i}_time_w").T + cenc @ params.view(f"blk{i}_cond_w").T
        a1 = z @ params.view(f"blk{i}_w1").T + params.view(f"blk{i}_b1")
        v = _act(a1, kind)
        h = h + v @ params.view(f"blk{i}_w2").T + params.view(f"blk{i}_b2")
        if want_cache:
            zs.append(z)
            a1s.append(a1)
            vs.append(v)
            hs.append(h)
    out = h @ params.view("out_w").T + params.view("out_b")
    if not want_cache:
        return out, None
    cache = {
        "x": x,
        "temb": temb,
        "cenc": cenc,
        "cond": cond_cache,
        "zs": zs,
        "a1s": a1s,
        "vs": vs,
        "hs": hs,
    }
    return out, cache


def _backward(params: ScoreNetworkParams, cache: dict, dout: np.ndarray) -> np.ndarray:
    """Reverse-mode gradient of <dout, output> with respect to the flat vector."""
    cfg = params.config
    kind = cfg.activation
    grad = np.zeros_like(params.values)

    def g(name: str) -> np.ndarray:
        lo, hi, shape = params._offsets[name]
        return grad[lo:hi].reshape(shape)

    hs, zs, a1s, vs = cache["hs"], cache["zs"], cache["a1s"], cache["vs"]
    temb, cenc = cache["temb"], cache["cenc"]

    g("out_w")[...] += dout.T @ hs[-1]
    g("out_b")[...] += dout.sum(axis=0)
    dh = dout @ params.view("out_w")
    dcenc = np.zeros_like(cenc)
    for i in reversed(range(cfg.blocks)):
        g(f"blk{i}_w2")[...] += dh.T @ vs[i]
        g(f"blk{i}_b2")[...] += dh.sum(axis=0)
        dv = dh @ params.view(f"blk{i}_w2")
        da1 = dv * _act_grad(a1s[i], kind)
        g(f"blk{i}_w1")[...] += da1.T @ zs[i]
        g(f"blk{i}_b1")[...] += da1.sum(axis=0)
        dz = da1 @ params.view(f"blk{i}_w1")
        g(f"blk{i}_time_w")[...] += dz.T @ temb
        g(f"blk{i}_cond_w")[...] += dz.T @ cenc
        dcenc += dz @ params.view(f"blk{i}_cond_w")
        dh = dh + dz
    g("in_w")[...] += dh.T @ cache["x"]
    g("in_b")[...] += dh.sum(axis=0)

    cond = cache["cond"]
    if cond is not None and cond["mlp"] is not None:
        mask, mlp = cond["mask"], cond["mlp"]
        dh3 = dcenc[mask, : cfg.embed_dim]
        g("cond_w3")[...] += dh3.T @ mlp["h2"]
        g("cond_b3")[...] += dh3.sum(axis=0)
        da2 = (dh3 @ params.view("cond_w3")) * _act_grad(mlp["a2"], kind)
        g("cond_w2")[...] += da2.T @ mlp["h1"]
        g("cond_b2")[...] += da2.sum(axis=0)
        da1 = (da2 @ params.view("cond_w2")) * _act_grad(mlp["a1"], kind)
        g("cond_w1")[...] += da1.T @ mlp["e"]
        g("cond_b1")[...] += da1.sum(axis=0)
        de = da1 @ params.view("cond_w1")
        np.add.at(g("embed"), mlp["rows"], de)
    return grad


def _ids_from_condition(cond: ConditionVector | None) -> tuple[int, int]:
    if cond is None or cond.is_null:
        return -1, -1
    return cond.industry_id, cond.board_id


def predict_eps(
    params: ScoreNetworkParams,
    x_t: np.ndarray,
    t: int,
    cond: ConditionVector | None = None,
) -> np.ndarray:
    """Predicted noise for one corrupted window at step t (None = NULL condition).

    The implied score is -predict_eps(...) / sqrt(1 - alpha_bar_t).
    """
    cfg = params.config
    x_t = np.asarray(x_t, dtype=np.float64)
    if x_t.shape != (cfg.input_len,):
        raise ParameterError(
            f"window shape {x_t.shape} does not match input_len {cfg.input_len}"
        )
    if t < 1:
        raise ParameterError(f"t must be >= 1, got {t}")
    iid, bid = _ids_from_condition(cond)
    out, _ = _forward(
        params, x_t[None, :], np.array([t]), np.array([iid]), np.array([bid])
    )
    out = out[0]
    if not np.all(np.isfinite(out)):
        raise NumericError(f"network produced non-finite output at t={t}")
    return out


def predict_eps_vjp(
    params: ScoreNetworkParams,
    x_t: np.ndarray,
    t: int,
    cond: ConditionVector | None,
    cotangent: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    """Prediction plus gradient of <cotangent, prediction> w.r.t. the flat vector.

    This is the building block the finite-difference tests drive directly.
    """
    cfg = params.config
    x_t = np.asarray(x_t, dtype=np.float64)
    cotangent = np.asarray(cotangent, dtype=np.float64)
    if x_t.shape != (cfg.input_len,) or cotangent.shape != (cfg.input_len,):
        raise ParameterError("window and cotangent must both have shape (input_len,)")
    if t < 1:
        raise ParameterError(f"t must be >= 1, got {t}")
    iid, bid = _ids_from_condition(cond)
    out, cache = _forward(
        params, x_t[None, :], np.array([t]), np.array([iid]), np.array([bid]),
        want_cache=True,
    )
    grad = _backward(params, cache, cotangent[None, :])
    return out[0], grad


def condition_dropout(
    iid: np.ndarray, bid: np.ndarray, p_uncond: float, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """Replace each condition by NULL (-1) independently with probability p_uncond.

    One uniform is drawn per batch element in order, so the rng stream
    consumed here is a pure function of the batch size.
    """
    if not 0.0 <= p_uncond < 1.0:
        raise ParameterError(f"p_uncond must lie in [0, 1), got {p_uncond}")
    u = rng.random(iid.shape[0])
    drop = u < p_uncond
    iid = np.where(drop, -1, iid)
    bid = np.where(drop, -1, bid)
    return iid, bid


def dsm_residual_loss(
    pred_eps: np.ndarray, true_eps: np.ndarray, weights: np.ndarray
) -> float:
    """Weighted squared-residual loss, mean over the batch of w * ||pred - true||^2.

    Zero exactly when the prediction equals the drawn noise.
    """
    pred_eps = np.asarray(pred_eps, dtype=np.float64)
    true_eps = np.asarray(true_eps, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    if pred_eps.shape != true_eps.shape or weights.shape[0] != pred_eps.shape[0]:
        raise ParameterError("batch shapes disagree")
    r = pred_eps - true_eps
    per_sample = (r * r).sum(axis=-1)
    return float(np.mean(weights * per_sample))


def _condition_arrays(
    conditions: Sequence[tuple[int, int] | None], cfg: ScoreNetConfig
) -> tuple[np.ndarray, np.ndarray]:
    iid = np.empty(len(conditions), dtype=np.int64)
    bid = np.empty(len(conditions), dtype=np.int64)
    for n, c in enumerate(conditions):
        if c is None:
            iid[n], bid[n] = -1, -1
            continue
        industry, board = c
        if not 0 <= industry < cfg.n_industries:
            raise ParameterError(
                f"industry_id {industry} outside [0, {cfg.n_industries}) at position {n}"
            )
        if not 0 <= board < cfg.n_boards:
            raise ParameterError(
                f"board_id {board} outside [0, {cfg.n_boards}) at position {n}"
            )
        iid[n], bid[n] = industry, board
    return iid, bid


def dsm_loss(
    params: ScoreNetworkParams,
    windows: np.ndarray,
    conditions: Sequence[tuple[int, int] | None],
    schedule: NoiseSchedule,
    rng: np.random.Generator,
    weighting: str = "elbo",
    p_uncond: float = 0.0,
) -> tuple[float, np.ndarray]:
    """Denoising score-matching loss and its parameter gradient on one batch.

    Per element: draw t uniform on [1, T], corrupt the clean window with fresh
    noise, and penalize w_t * ||predicted noise - drawn noise||^2, averaged
    over the batch.  ``weighting`` "elbo" uses w_t = 1 - alpha_bar_t, "unit"
    uses 1.  Conditions are dropped to NULL with probability ``p_uncond``.
    The rng stream is consumed in a fixed order (steps, noise, dropout), so
    the loss is a deterministic function of (params, batch, rng state); the
    finite-difference tests rely on that.
    """
    if weighting not in ("elbo", "unit"):
        raise ParameterError(f"unknown weighting {weighting!r}")
    windows = np.asarray(windows, dtype=np.float64)
    if windows.ndim != 2:
        raise ParameterError("windows must be a (batch, length) array")
    B, L = windows.shape
    if L != params.config.input_len:
        raise ParameterError(
            f"window length {L} does not match input_len {params.config.input_len}"
        )
    if len(conditions) != B:
        raise ParameterError("conditions must match the batch size")
    iid, bid = _condition_arrays(conditions, params.config)

    t = rng.integers(1, schedule.T + 1, size=B)
    eps = rng.standard_normal((B, L))
    iid, bid = condition_dropout(iid, bid, p_uncond, rng)

    ab = schedule.alpha_bar[t - 1]
    x_t = np.sqrt(ab)[:, None] * windows + np.sqrt(1.0 - ab)[:, None] * eps
    pred, cache = _forward(params, x_t, t, iid, bid, want_cache=True)
    w = (1.0 - ab) if weighting == "elbo" else np.ones(B)
    loss = dsm_residual_loss(pred, eps, w)
    dout = (2.0 / B) * w[:, None] * (pred - eps)
    grad = _backward(params, cache, dout)
    return loss, grad


@dataclass(frozen=True)
class TrainConfig:
    """Optimization settings for the denoising trainer."""

    epochs: int
    batch_size: int = 64
    learning_rate: float = 1e-3
    p_uncond: float = 0.1
    weighting: str = "elbo"
    seed: int = 0

    def __post_init__(self) -> None:
        if self.epochs < 0:
            raise ParameterError(f"epochs must be >= 0, got {self.epochs}")
        if self.batch_size < 1:
            raise ParameterError(f"batch_size must be >= 1, got {self.batch_size}")
        if not (self.learning_rate > 0.0 and math.isfinite(self.learning_rate)):
            raise ParameterError(f"learning_rate must be positive, got {self.learning_rate}")
        if not 0.0 <= self.p_uncond < 1.0:
            raise ParameterError(f"p_uncond must lie in [0, 1), got {self.p_uncond}")
        if self.weighting not in ("elbo", "unit"):
            raise ParameterError(f"unknown weighting {self.weighting!r}")


@dataclass(frozen=True)
class TrainResult:
    params: ScoreNetworkParams
    epoch_losses: list[float]


def train(
    windows: np.ndarray,
    conditions: Sequence[tuple[int, int] | None],
    schedule: NoiseSchedule,
    config: TrainConfig,
    net_config: ScoreNetConfig | None = None,
) -> TrainResult:
    """Fit the network by minibatch Adam on the denoising loss.

    Deterministic for a given config: one generator seeded with
    ``config.seed`` drives initialization, epoch shuffles, and every batch
    draw in a fixed order.  Zero epochs returns the untouched random
    initialization.  Divergence (non-finite loss) raises NumericError.
    """
    windows = np.asarray(windows, dtype=np.float64)
    if windows.ndim != 2 or windows.shape[0] < 1:
        raise ParameterError("windows must be a non-empty (n, length) array")
    N, L = windows.shape
    if len(conditions) != N:
        raise ParameterError("conditions must match the number of windows")
    if net_config is None:
        net_config = ScoreNetConfig(input_len=L)
    elif net_config.input_len != L:
        raise ParameterError(
            f"net input_len {net_config.input_len} does not match window length {L}"
        )

    rng = np.random.default_rng(config.seed)
    params = init_params(net_config, rng)
    values = params.values.copy()

    # Hand-rolled Adam; the parameter set is one flat vector so the state is too.
    m = np.zeros_like(values)
    v = np.zeros_like(values)
    beta1, beta2, adam_eps = 0.9, 0.999, 1e-8
    step = 0

    epoch_losses: list[float] = []
    for epoch in range(config.epochs):
        perm = rng.permutation(N)
        seen = 0
        weighted = 0.0
        for start in range(0, N, config.batch_size):
            batch_idx = perm[start : start + config.batch_size]
            batch_conditions = [conditions[i] for i in batch_idx]
            loss, grad = dsm_loss(
                params.with_values(values),
                windows[batch_idx],
                batch_conditions,
                schedule,
                rng,
                weighting=config.weighting,
                p_uncond=config.p_uncond,
            )
            if not (math.isfinite(loss) and np.all(np.isfinite(grad))):
                raise NumericError(
                    f"training diverged at epoch {epoch}, batch {start // config.batch_size}"
                )
            step += 1
            m = beta1 * m + (1.0 - beta1) * grad
            v = beta2 * v + (1.0 - beta2) * grad * grad
            m_hat = m / (1.0 - beta1**step)
            v_hat = v / (1.0 - beta2**step)
            values = values - config.learning_rate * m_hat / (np.sqrt(v_hat) + adam_eps)
            weighted += loss * batch_idx.shape[0]
            seen += batch_idx.shape[0]
        epoch_loss = weighted / seen
        epoch_losses.append(epoch_loss)
        logger.info("epoch %d/%d dsm loss %.6f", epoch + 1, config.epochs, epoch_loss)
    return TrainResult(params=params.with_values(values), epoch_losses=epoch_losses)


def save_checkpoint(
    params: ScoreNetworkParams, path: str | Path, meta: dict | None = None
) -> None:
    """Write the parameter vector as versioned JSON with per-array shape headers."""
    arrays = {}
    for name in params.names():
        arr = params.view(name)
        arrays[name] = {"shape": list(arr.shape), "data": arr.ravel().tolist()}
    payload = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "kind": "scorenet",
        "config": asdict(params.config),
        "arrays": arrays,
        "meta": meta or {},
    }
    Path(path).write_text(json.dumps(payload, sort_keys=True) + "\n")


def _read_checkpoint(path: str | Path) -> dict:
    try:
        payload = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read checkpoint {path}: {exc}") from exc
    version = payload.get("format_version")
    if version != CHECKPOINT_FORMAT_VERSION:
        raise DataError(
            f"checkpoint {path} has format_version {version!r}, "
            f"expected {CHECKPOINT_FORMAT_VERSION}"
        )
    return payload


def load_checkpoint(path: str | Path) -> ScoreNetworkParams:
    """Rebuild parameters from ``save_checkpoint`` output, verifying every shape."""
    payload = _read_checkpoint(path)
    try:
        cfg = ScoreNetConfig(**payload["config"])
    except (KeyError, TypeError) as exc:
        raise DataError(f"checkpoint {path} has a malformed config: {exc}") from exc
    arrays = payload.get("arrays", {})
    layout = _param_layout(cfg)
    expected = {name for name, _ in layout}
    if set(arrays) != expected:
        missing = sorted(expected - set(arrays))
        extra = sorted(set(arrays) - expected)
        raise DataError(
            f"checkpoint {path} arrays do not match the layout "
            f"(missing {missing}, unexpected {extra})"
        )
    chunks = []
    for name, shape in layout:
        entry = arrays[name]
        if tuple(entry.get("shape", ())) != shape:
            raise DataError(
                f"checkpoint {path} array {name!r} has shape {entry.get('shape')}, "
                f"expected {list(shape)}"
            )
        data = np.asarray(entry["data"], dtype=np.float64)
        if data.size != int(np.prod(shape)):
            raise DataError(f"checkpoint {path} array {name!r} has wrong length")
        chunks.append(data.ravel())
    return ScoreNetworkParams(config=cfg, values=np.concatenate(chunks))


def read_checkpoint_meta(path: str | Path) -> dict:
    """The free-form metadata blob stored alongside the arrays."""
    return dict(_read_checkpoint(path).get("meta", {}))
