"""Multi-view hashing network: per-view projection, gated fusion, tanh hash head.

The forward pass caches every intermediate in a BatchTape so the backward
pass can produce analytic gradients without an autograd framework. Training
keeps the continuous tanh codes; sign-thresholding happens only when codes
are emitted for retrieval (`binarize`), since sgn has zero gradient almost
everywhere and the quantization loss already pushes |h| toward 1.
"""

from dataclasses import dataclass, field

import numpy as np

from .linalg import ShapeError, sigmoid

__all__ = [
    "NetConfig",
    "ModelParams",
    "Gradients",
    "BatchTape",
    "init_params",
    "normalize_view",
    "context_gating",
    "hash_head",
    "forward_batch",
    "backward_batch",
    "binarize",
]


@dataclass(frozen=True)
class NetConfig:
    """Static architecture: per-view input dims, shared projection dim, code bits."""

    view_dims: tuple
    proj_dim: int
    code_bits: int

    def __post_init__(self):
        object.__setattr__(self, "view_dims", tuple(int(d) for d in self.view_dims))
        if len(self.view_dims) < 1 or any(d < 1 for d in self.view_dims):
            raise ValueError("need at least one view with positive dimension")
        if self.proj_dim < 1 or self.code_bits < 1:
            raise ValueError("proj_dim and code_bits must be positive")

    @property
    def num_views(self) -> int:
        return len(self.view_dims)

    @property
    def fused_dim(self) -> int:
        return self.num_views * self.proj_dim


@dataclass
class ModelParams:
    """All trainable weights; replaced wholesale by the optimizer each step."""

    norm_w: list  # per view, (proj_dim, d_view)
    norm_b: list  # per view, (proj_dim,)
    fusion_w: np.ndarray  # (n, n), n = num_views * proj_dim
    fusion_b: np.ndarray  # (n,)
    hash_w: np.ndarray  # (K, n)
    hash_b: np.ndarray  # (K,)

    def tensors(self):
        """Named tensors in a fixed order (checkpointing, optimizer, gradcheck)."""
        for v, (w, b) in enumerate(zip(self.norm_w, self.norm_b)):
            yield f"norm_w.{v}", w
            yield f"norm_b.{v}", b
        yield "fusion_w", self.fusion_w
        yield "fusion_b", self.fusion_b
        yield "hash_w", self.hash_w
        yield "hash_b", self.hash_b

    def copy(self) -> "ModelParams":
        return ModelParams(
            norm_w=[w.copy() for w in self.norm_w],
            norm_b=[b.copy() for b in self.norm_b],
            fusion_w=self.fusion_w.copy(),
            fusion_b=self.fusion_b.copy(),
            hash_w=self.hash_w.copy(),
            hash_b=self.hash_b.copy(),
        )

    def map(self, fn, *others) -> "ModelParams":
        """Apply fn over corresponding tensors of self and *others."""
        def z(get):
            return fn(*(get(p) for p in (self, *others)))

        return ModelParams(
            norm_w=[fn(*(p.norm_w[v] for p in (self, *others)))
                    for v in range(len(self.norm_w))],
            norm_b=[fn(*(p.norm_b[v] for p in (self, *others)))
                    for v in range(len(self.norm_b))],
            fusion_w=z(lambda p: p.fusion_w),
            fusion_b=z(lambda p: p.fusion_b),
            hash_w=z(lambda p: p.hash_w),
            hash_b=z(lambda p: p.hash_b),
        )


# Gradients mirror ModelParams shape-for-shape; the same container works.
Gradients = ModelParams


def zeros_like_params(params: ModelParams) -> Gradients:
    return params.map(np.zeros_like)


def init_params(cfg: NetConfig, seed: int) -> ModelParams:
    """Uniform init in [-1/sqrt(fan_in), +1/sqrt(fan_in)] per layer, seeded."""
    rng = np.random.default_rng(seed)
    n = cfg.fused_dim

    def layer(out_dim, in_dim):
        bound = 1.0 / np.sqrt(in_dim)
        w = rng.uniform(-bound, bound, size=(out_dim, in_dim))
        b = rng.uniform(-bound, bound, size=out_dim)
        return w, b

    norm_w, norm_b = [], []
    for d in cfg.view_dims:
        w, b = layer(cfg.proj_dim, d)
        norm_w.append(w)
        norm_b.append(b)
    fusion_w, fusion_b = layer(n, n)
    hash_w, hash_b = layer(cfg.code_bits, n)
    return ModelParams(norm_w, norm_b, fusion_w, fusion_b, hash_w, hash_b)


def normalize_view(x: np.ndarray, params: ModelParams, view_index: int) -> np.ndarray:
    """Project one view into the shared dimension, bounded to (-1, 1) by tanh."""
    w = params.norm_w[view_index]
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != w.shape[1]:
        raise ShapeError(f"view {view_index}: expected dim {w.shape[1]}, got {x.shape[-1]}")
    return np.tanh(x @ w.T + params.norm_b[view_index])


def context_gating(x_concat: np.ndarray, params: ModelParams):
    """Sigmoid gate over the concatenated features; returns (fused, gate)."""
    x = np.asarray(x_concat, dtype=np.float64)
    if x.shape[-1] != params.fusion_w.shape[1]:
        raise ShapeError(f"expected fused dim {params.fusion_w.shape[1]}, got {x.shape[-1]}")
    gate = sigmoid(x @ params.fusion_w.T + params.fusion_b)
    return gate * x, gate


def hash_head(x_fusion: np.ndarray, params: ModelParams) -> np.ndarray:
    """Linear layer + tanh producing continuous codes in (-1, 1)."""
    x = np.asarray(x_fusion, dtype=np.float64)
    if x.shape[-1] != params.hash_w.shape[1]:
        raise ShapeError(f"expected fused dim {params.hash_w.shape[1]}, got {x.shape[-1]}")
    return np.tanh(x @ params.hash_w.T + params.hash_b)


@dataclass
class BatchTape:
    """Forward-pass intermediates needed by the analytic backward pass."""

    raw_views: list  # per view, (b, d_view)
    normalized: list  # per view, (b, proj_dim)
    mask: np.ndarray  # inverted-dropout mask, entries in {0, 1/(1-p)}
    dropped: np.ndarray  # concat after dropout, (b, n)
    gate: np.ndarray  # (b, n); all-ones when gating disabled
    fused: np.ndarray  # (b, n)
    codes: np.ndarray  # continuous codes H, (b, K)
    gated: bool = True


def forward_batch(
    views: list,
    params: ModelParams,
    dropout_p: float = 0.0,
    train_mode: bool = False,
    rng_seed: int = 0,
    view_mask=None,
    use_gating: bool = True,
):
    """Run the network on a batch.

    views: list with one (b, d_view) array per view. view_mask optionally
    zeroes whole views before normalization (single-view ablations);
    use_gating=False makes fusion the identity (concatenation ablation).
    Returns (H, tape) with H of shape (b, K).
    """
    if not views or views[0].shape[0] == 0:
        raise ValueError("empty batch")
    b = views[0].shape[0]
    if any(v.shape[0] != b for v in views):
        raise ShapeError("views disagree on batch size")
    if not 0.0 <= dropout_p < 1.0:
        raise ValueError(f"dropout_p must be in [0, 1), got {dropout_p}")

    raw = [np.asarray(v, dtype=np.float64) for v in views]
    if view_mask is not None:
        raw = [v if keep else np.zeros_like(v) for v, keep in zip(raw, view_mask)]

    normalized = [normalize_view(raw[v], params, v) for v in range(len(raw))]
    concat = np.concatenate(normalized, axis=1)

    if train_mode and dropout_p > 0.0:
        rng = np.random.default_rng(rng_seed)
        keep = rng.random(concat.shape) >= dropout_p
        mask = keep / (1.0 - dropout_p)
    else:
        mask = np.ones_like(concat)
    dropped = concat * mask

    if use_gating:
        fused, gate = context_gating(dropped, params)
    else:
        gate = np.ones_like(dropped)
        fused = dropped

    codes = hash_head(fused, params)
    tape = BatchTape(raw, normalized, mask, dropped, gate, fused, codes, gated=use_gating)
    return codes, tape


def backward_batch(tape: BatchTape, params: ModelParams, dH: np.ndarray) -> Gradients:
    """Analytic gradients of a scalar loss given dL/dH."""
    dH = np.asarray(dH, dtype=np.float64)
    if dH.shape != tape.codes.shape:
        raise ShapeError(f"dH shape {dH.shape} != codes shape {tape.codes.shape}")

    # hash head: H = tanh(fused @ hash_w.T + hash_b)
    dA = dH * (1.0 - tape.codes ** 2)
    d_hash_w = dA.T @ tape.fused
    d_hash_b = dA.sum(axis=0)
    d_fused = dA @ params.hash_w

    # gating: fused = gate * dropped, gate = sigmoid(dropped @ fusion_w.T + fusion_b).
    # Both the gate branch and the identity branch carry gradient.
    if tape.gated:
        d_gate = d_fused * tape.dropped
        d_dropped = d_fused * tape.gate
        dZ = d_gate * tape.gate * (1.0 - tape.gate)
        d_fusion_w = dZ.T @ tape.dropped
        d_fusion_b = dZ.sum(axis=0)
        d_dropped = d_dropped + dZ @ params.fusion_w
    else:
        d_dropped = d_fused
        d_fusion_w = np.zeros_like(params.fusion_w)
        d_fusion_b = np.zeros_like(params.fusion_b)

    d_concat = d_dropped * tape.mask

    proj = tape.normalized[0].shape[1]
    d_norm_w, d_norm_b = [], []
    for v, (x_raw, t) in enumerate(zip(tape.raw_views, tape.normalized)):
        dT = d_concat[:, v * proj:(v + 1) * proj]
        dP = dT * (1.0 - t ** 2)
        d_norm_w.append(dP.T @ x_raw)
        d_norm_b.append(dP.sum(axis=0))

    return Gradients(d_norm_w, d_norm_b, d_fusion_w, d_fusion_b, d_hash_w, d_hash_b)


def binarize(h: np.ndarray) -> np.ndarray:
    """Sign-threshold continuous codes to {-1, +1}; the tie h == 0 maps to +1."""
    h = np.asarray(h, dtype=np.float64)
    return np.where(h >= 0.0, 1, -1).astype(np.int8)
