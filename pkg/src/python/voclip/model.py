"""
Divided Space-Time Transformer
==============================

A toy-scale video transformer that regresses the ``N_f - 1`` relative
motions of a clip:

1. pixels are standardized per channel and cut into ``P x P`` patches;
2. patches are embedded linearly and a learned embedding is added per
   (space, time) slot;
3. ``depth`` encoder blocks apply temporal attention (tokens sharing a
   spatial index), spatial attention (tokens of one frame) and an MLP, each
   with pre-LayerNorm and a residual connection;
4. a final LayerNorm, a mean over all tokens and a linear head produce
   ``6 * (N_f - 1)`` numbers reshaped to ``(N_f - 1, 6)``.

Token grids are laid out ``(batch, time, space, embed)``. Parameters live in a
flat ``Dict[str, Parameter]`` keyed by stable dotted names.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import numpy.typing as npt

from .errors import InvalidArgumentError, ShapeError
from .losses import LossBreakdown, LossConfig, closed_form_terms, default_pairs, total_loss
from .optim import AdamState, OptimizerConfig, adam_step
from .tensor import (
    Parameter,
    Tape,
    Tensor,
    add,
    gelu,
    layer_norm,
    linear,
    matmul,
    mean,
    mul,
    reshape,
    scale,
    slice_,
    softmax,
    sub,
    sum_,
    swapaxes,
    transpose,
)

logger = logging.getLogger(__name__)

ModelParams = Dict[str, Parameter]
FrameArray = npt.NDArray[np.floating]

BLOCK_NORMS = ("temporal_norm", "spatial_norm", "mlp_norm")


@dataclass(frozen=True)
class ModelConfig:
    n_frames: int = 3
    channels: int = 3
    height: int = 32
    width: int = 64
    patch: int = 16
    embed_dim: int = 32
    depth: int = 2
    heads: int = 2
    mlp_ratio: int = 4
    pixel_mean: Tuple[float, ...] = (0.5,)
    pixel_std: Tuple[float, ...] = (0.25,)

    def __post_init__(self) -> None:
        for name in ("n_frames", "channels", "height", "width", "patch", "embed_dim", "heads", "mlp_ratio"):
            if getattr(self, name) < 1:
                msg = f"{name} must be >= 1, got {getattr(self, name)}"
                raise InvalidArgumentError(msg)
        if self.depth < 0:
            msg = f"depth must be >= 0, got {self.depth}"
            raise InvalidArgumentError(msg)
        if self.height % self.patch or self.width % self.patch:
            msg = f"frame size {self.height}x{self.width} is not divisible by patch {self.patch}"
            raise InvalidArgumentError(msg)
        if self.embed_dim % self.heads:
            msg = f"embed_dim {self.embed_dim} is not divisible by heads {self.heads}"
            raise InvalidArgumentError(msg)
        for name in ("pixel_mean", "pixel_std"):
            values = tuple(float(x) for x in getattr(self, name))
            if len(set(values)) == 1:
                values = values[:1] * self.channels
            object.__setattr__(self, name, values)
        if len(self.pixel_mean) != self.channels or len(self.pixel_std) != self.channels:
            msg = f"pixel_mean/pixel_std need {self.channels} entries"
            raise InvalidArgumentError(msg)
        if any(s <= 0.0 for s in self.pixel_std):
            msg = f"pixel_std entries must be positive, got {self.pixel_std}"
            raise InvalidArgumentError(msg)

    @classmethod
    def toy(cls) -> ModelConfig:
        return cls()

    @classmethod
    def full_size(cls) -> ModelConfig:
        """192x640 frames, 16-pixel patches, 12 blocks of width 384 with 6 heads."""
        return cls(height=192, width=640, patch=16, embed_dim=384, depth=12, heads=6)

    @property
    def n_patches(self) -> int:
        return (self.height // self.patch) * (self.width // self.patch)

    @property
    def patch_dim(self) -> int:
        return self.channels * self.patch * self.patch

    @property
    def head_dim(self) -> int:
        return self.embed_dim // self.heads

    @property
    def mlp_dim(self) -> int:
        return self.embed_dim * self.mlp_ratio

    @property
    def n_outputs(self) -> int:
        return 6 * (self.n_frames - 1)


def param_shapes(cfg: ModelConfig) -> Dict[str, Tuple[int, ...]]:
    """Name and shape of every parameter, in creation order."""
    e = cfg.embed_dim
    shapes: Dict[str, Tuple[int, ...]] = {
        "patch_embed.weight": (cfg.patch_dim, e),
        "patch_embed.bias": (e,),
        "pos_embed": (cfg.n_frames, cfg.n_patches, e),
    }
    for i in range(cfg.depth):
        p = f"blocks.{i}"
        for norm in BLOCK_NORMS:
            shapes[f"{p}.{norm}.weight"] = (e,)
            shapes[f"{p}.{norm}.bias"] = (e,)
        for attn in ("temporal_attn", "spatial_attn"):
            shapes[f"{p}.{attn}.qkv.weight"] = (e, 3 * e)
            shapes[f"{p}.{attn}.qkv.bias"] = (3 * e,)
            shapes[f"{p}.{attn}.proj.weight"] = (e, e)
            shapes[f"{p}.{attn}.proj.bias"] = (e,)
        shapes[f"{p}.temporal_fc.weight"] = (e, e)
        shapes[f"{p}.temporal_fc.bias"] = (e,)
        shapes[f"{p}.mlp.fc1.weight"] = (e, cfg.mlp_dim)
        shapes[f"{p}.mlp.fc1.bias"] = (cfg.mlp_dim,)
        shapes[f"{p}.mlp.fc2.weight"] = (cfg.mlp_dim, e)
        shapes[f"{p}.mlp.fc2.bias"] = (e,)
    shapes["norm.weight"] = (e,)
    shapes["norm.bias"] = (e,)
    shapes["head.weight"] = (e, cfg.n_outputs)
    shapes["head.bias"] = (cfg.n_outputs,)
    return shapes


def parameter_count(cfg: ModelConfig) -> int:
    return sum(int(np.prod(shape)) for shape in param_shapes(cfg).values())


def init_params(cfg: ModelConfig, seed: int = 0, dtype: str = "float32") -> ModelParams:
    """Xavier-uniform weights, zero biases, unit LayerNorm gains and a small
    normal positional embedding, all drawn from one seeded PCG64 stream."""
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    params: ModelParams = {}
    for name, shape in param_shapes(cfg).items():
        if name == "pos_embed":
            value = rng.normal(0.0, 0.02, size=shape)
        elif name.endswith(".bias"):
            value = np.zeros(shape)
        elif name.endswith("norm.weight"):
            value = np.ones(shape)
        else:
            fan_in, fan_out = shape
            limit = math.sqrt(6.0 / (fan_in + fan_out))
            value = rng.uniform(-limit, limit, size=shape)
        params[name] = Parameter(value, name, dtype=dtype)
    return params


def zero_output_projections(params: Mapping[str, Parameter]) -> ModelParams:
    """Copy of ``params`` whose attention output projections, temporal FC and
    MLP second layers are zero, turning every block into the identity."""
    suffixes = (".proj.weight", ".proj.bias", "temporal_fc.weight", "temporal_fc.bias", ".fc2.weight", ".fc2.bias")
    out: ModelParams = {}
    for name, p in params.items():
        value = np.zeros_like(p.data) if name.startswith("blocks.") and name.endswith(suffixes) else p.data
        out[name] = Parameter(value, name, dtype=p.dtype)
    return out


def param_arrays(params: Mapping[str, Parameter]) -> Dict[str, np.ndarray]:
    return {name: p.numpy() for name, p in params.items()}


def params_from_arrays(arrays: Mapping[str, np.ndarray], cfg: ModelConfig) -> ModelParams:
    expected = param_shapes(cfg)
    if set(arrays) != set(expected):
        missing = sorted(set(expected) - set(arrays))
        extra = sorted(set(arrays) - set(expected))
        msg = f"parameter names do not match config (missing={missing}, unexpected={extra})"
        raise InvalidArgumentError(msg)
    params: ModelParams = {}
    for name, shape in expected.items():
        arr = np.asarray(arrays[name])
        if arr.shape != shape:
            raise ShapeError(f"params[{name}]", arr.shape, shape)
        params[name] = Parameter(arr, name)
    return params


def patchify(frames: npt.ArrayLike, patch: int) -> FrameArray:
    """``(..., N_f, C, H, W)`` to ``(..., N_f, N, C * P * P)``; patches are
    enumerated row-major over the grid and flattened as ``(C, P, P)``."""
    x = np.asarray(frames)
    if x.ndim < 4:
        msg = f"frames need shape (..., N_f, C, H, W), got {x.shape}"
        raise InvalidArgumentError(msg)
    *lead, t, c, h, w = x.shape
    if h % patch or w % patch:
        msg = f"frame size {h}x{w} is not divisible by patch {patch}"
        raise InvalidArgumentError(msg)
    gh, gw = h // patch, w // patch
    k = len(lead)
    x = x.reshape((*lead, t, c, gh, patch, gw, patch))
    perm = (*range(k), k, k + 2, k + 4, k + 1, k + 3, k + 5)
    x = x.transpose(perm)
    return x.reshape((*lead, t, gh * gw, c * patch * patch))


def unpatchify(patches: npt.ArrayLike, patch: int, channels: int, height: int, width: int) -> FrameArray:
    x = np.asarray(patches)
    gh, gw = height // patch, width // patch
    if x.ndim < 3 or x.shape[-2:] != (gh * gw, channels * patch * patch):
        raise ShapeError("unpatchify", x.shape, (gh * gw, channels * patch * patch))
    *lead, t, _, _ = x.shape
    k = len(lead)
    x = x.reshape((*lead, t, gh, gw, channels, patch, patch))
    perm = (*range(k), k, k + 3, k + 1, k + 4, k + 2, k + 5)
    return x.transpose(perm).reshape((*lead, t, channels, height, width))


def normalize_frames(frames: npt.ArrayLike, cfg: ModelConfig) -> FrameArray:
    x = np.asarray(frames, dtype=np.float64)
    shape = (cfg.channels, 1, 1)
    return (x - np.reshape(cfg.pixel_mean, shape)) / np.reshape(cfg.pixel_std, shape)


def embed(patches: Union[Tensor, npt.ArrayLike], params: Mapping[str, Parameter]) -> Tensor:
    """Linear patch embedding plus one learned vector per (time, space) slot."""
    weight = params["patch_embed.weight"]
    x = patches if isinstance(patches, Tensor) else Tensor(patches, dtype=weight.dtype)
    pos = params["pos_embed"]
    if x.ndim < 3 or x.shape[-3:-1] != pos.shape[:2] or x.shape[-1] != weight.shape[0]:
        raise ShapeError("embed", x.shape, (*pos.shape[:2], weight.shape[0]))
    return add(linear(x, weight, params["patch_embed.bias"]), pos)


def attention(q: Tensor, k: Tensor, v: Tensor) -> Tensor:
    """``softmax(Q K^T / sqrt(d)) V`` over the last two axes."""
    return attention_with_weights(q, k, v)[0]


def attention_with_weights(q: Tensor, k: Tensor, v: Tensor) -> Tuple[Tensor, Tensor]:
    d = q.shape[-1]
    if k.shape[-1] != d or k.shape[-2] != v.shape[-2] or q.ndim != k.ndim or k.ndim != v.ndim:
        raise ShapeError("attention", q.shape, k.shape, v.shape)
    scores = scale(matmul(q, swapaxes(k, -1, -2)), 1.0 / math.sqrt(d))
    weights = softmax(scores, axis=-1)
    return matmul(weights, v), weights


def mhsa(x: Tensor, params: Mapping[str, Parameter], prefix: str, heads: int) -> Tensor:
    """Multi-head self-attention over axis -2 of ``x`` (``(..., L, E)``)."""
    *lead, length, width = x.shape
    if width % heads:
        raise ShapeError(f"{prefix}: heads", x.shape, (heads,))
    head_dim = width // heads
    k = len(lead)
    qkv = linear(x, params[f"{prefix}.qkv.weight"], params[f"{prefix}.qkv.bias"])
    qkv = reshape(qkv, (*lead, length, 3, heads, head_dim))
    qkv = transpose(qkv, (k + 1, *range(k), k + 2, k, k + 3))
    out = attention(slice_(qkv, 0), slice_(qkv, 1), slice_(qkv, 2))
    out = transpose(out, (*range(k), k + 1, k, k + 2))
    out = reshape(out, (*lead, length, width))
    return linear(out, params[f"{prefix}.proj.weight"], params[f"{prefix}.proj.bias"])


def _norm(x: Tensor, params: Mapping[str, Parameter], prefix: str) -> Tensor:
    return layer_norm(x, params[f"{prefix}.weight"], params[f"{prefix}.bias"])


def _as_grid(z: Tensor) -> Tuple[Tensor, bool]:
    if z.ndim == 3:
        return reshape(z, (1, *z.shape)), True
    if z.ndim != 4:
        msg = f"token grid must be (N_f, N, E) or (B, N_f, N, E), got {z.shape}"
        raise InvalidArgumentError(msg)
    return z, False


def temporal_sublayer(z: Tensor, params: Mapping[str, Parameter], index: int, heads: int) -> Tensor:
    """``z + FC(MHSA_t(LN(z)))`` with one attention per spatial index."""
    grid, squeeze = _as_grid(z)
    p = f"blocks.{index}"
    by_space = swapaxes(grid, 1, 2)
    h = mhsa(_norm(by_space, params, f"{p}.temporal_norm"), params, f"{p}.temporal_attn", heads)
    h = linear(h, params[f"{p}.temporal_fc.weight"], params[f"{p}.temporal_fc.bias"])
    out = add(grid, swapaxes(h, 1, 2))
    return reshape(out, z.shape) if squeeze else out


def spatial_sublayer(z: Tensor, params: Mapping[str, Parameter], index: int, heads: int) -> Tensor:
    """``z + MHSA_s(LN(z))`` with one attention per frame."""
    p = f"blocks.{index}"
    return add(z, mhsa(_norm(z, params, f"{p}.spatial_norm"), params, f"{p}.spatial_attn", heads))


def mlp_sublayer(z: Tensor, params: Mapping[str, Parameter], index: int) -> Tensor:
    p = f"blocks.{index}"
    h = linear(_norm(z, params, f"{p}.mlp_norm"), params[f"{p}.mlp.fc1.weight"], params[f"{p}.mlp.fc1.bias"])
    h = linear(gelu(h), params[f"{p}.mlp.fc2.weight"], params[f"{p}.mlp.fc2.bias"])
    return add(z, h)


def divided_space_time_block(
    z: Tensor, params: Mapping[str, Parameter], index: int, heads: int
) -> Tensor:
    grid, squeeze = _as_grid(z)
    out = temporal_sublayer(grid, params, index, heads)
    out = spatial_sublayer(out, params, index, heads)
    out = mlp_sublayer(out, params, index)
    return reshape(out, z.shape) if squeeze else out


def forward_batch(frames: npt.ArrayLike, params: Mapping[str, Parameter], cfg: ModelConfig) -> Tensor:
    """``(B, N_f, C, H, W)`` pixels in ``[0, 1]`` to ``(B, N_f - 1, 6)``."""
    x = np.asarray(frames)
    expected = (cfg.n_frames, cfg.channels, cfg.height, cfg.width)
    if x.ndim != 5 or x.shape[1:] != expected:
        raise ShapeError("forward", x.shape, ("B", *expected))
    dtype = params["head.weight"].dtype
    patches = Tensor(patchify(normalize_frames(x, cfg), cfg.patch), dtype=dtype)
    z = embed(patches, params)
    for i in range(cfg.depth):
        z = divided_space_time_block(z, params, i, cfg.heads)
    z = layer_norm(z, params["norm.weight"], params["norm.bias"])
    pooled = mean(z, axis=(1, 2))
    out = linear(pooled, params["head.weight"], params["head.bias"])
    return reshape(out, (x.shape[0], cfg.n_frames - 1, 6))


def forward(frames: npt.ArrayLike, params: Mapping[str, Parameter], cfg: ModelConfig) -> Tensor:
    """Single clip ``(N_f, C, H, W)`` to ``(N_f - 1, 6)``."""
    x = np.asarray(frames)
    out = forward_batch(x[np.newaxis], params, cfg)
    return reshape(out, out.shape[1:])


def loss_tensor(
    preds: Tensor,
    targets: npt.ArrayLike,
    loss_cfg: LossConfig,
    pairs: Optional[Sequence[Tuple[int, int]]] = None,
) -> Tensor:
    """Differentiable version of :func:`voclip.losses.total_loss`."""
    t = Tensor(targets, dtype=preds.dtype)
    if t.shape != preds.shape:
        raise ShapeError("loss", preds.shape, t.shape)
    diff = sub(preds, t)
    total = mean(sum_(mul(diff, diff), axis=-1))
    n_clips, n_motions, _ = preds.shape
    pairs = default_pairs(n_clips) if pairs is None else list(pairs)
    if loss_cfg.alpha == 0.0 or n_motions < 2 or not pairs:
        return total
    rows_a: List[Tuple[int, int]] = []
    rows_b: List[Tuple[int, int]] = []
    for a, b in pairs:
        for _, m, n, w_m, w_n in closed_form_terms(n_motions + 1, 2):
            rows_a.append((b if m == 0 else a, w_m))
            rows_b.append((b if n == 0 else a, w_n))
    ia = tuple(np.array(idx) for idx in zip(*rows_a))
    ib = tuple(np.array(idx) for idx in zip(*rows_b))
    gap = sub(slice_(preds, ia), slice_(preds, ib))
    mc = sum_(mul(gap, gap))
    if loss_cfg.mc_reduction == "mean":
        mc = scale(mc, 1.0 / len(pairs))
    return add(total, scale(mc, loss_cfg.alpha))


@dataclass
class TrainState:
    params: ModelParams
    optimizer: AdamState = field(default_factory=AdamState)


def train_step(
    state: TrainState,
    frames: npt.ArrayLike,
    targets: npt.ArrayLike,
    cfg: ModelConfig,
    loss_cfg: LossConfig,
    opt_cfg: OptimizerConfig,
    pairs: Optional[Sequence[Tuple[int, int]]] = None,
) -> Tuple[TrainState, LossBreakdown]:
    """Forward every clip of the batch, backpropagate the total loss and
    apply one Adam update. The breakdown is measured before the update."""
    params = state.params
    with Tape() as tape:
        preds = forward_batch(frames, params, cfg)
        loss = loss_tensor(preds, targets, loss_cfg, pairs)
        grads = tape.backward(loss, params.values())
    breakdown = total_loss(preds.numpy(), targets, loss_cfg, pairs)
    arrays, optimizer = adam_step(
        {name: p.data for name, p in params.items()},
        grads,
        state.optimizer,
        opt_cfg.lr,
        (opt_cfg.beta1, opt_cfg.beta2),
        opt_cfg.eps,
    )
    new_params = {name: Parameter(arrays[name], name) for name in params}
    return TrainState(new_params, optimizer), breakdown

