"""Training loop: data -> network -> loss -> optimizer, plus checkpoints.

Ablation modes reshape the pipeline at runtime: metric-only drops the
quantization term (mu=0), quant-only zeroes the metric term, image-only /
text-only blank the other view before normalization, and concat-only
replaces the learned gate with the identity.
"""

import csv
import json
import struct
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import net as netmod
from .data import DatasetSplit, batches, stack_labels, stack_views
from .loss import LossConfig, total_loss
from .net import ModelParams, NetConfig, binarize, forward_batch, init_params
from .optim import OptimState, adamw_step, cosine_lr, init_optim
from .retrieval import build_index, evaluate

__all__ = [
    "TrainConfig",
    "EpochRecord",
    "TrainResult",
    "train",
    "export_curves",
    "codes_for",
    "save_checkpoint",
    "load_checkpoint",
    "Checkpoint",
]

ABLATIONS = ("full", "metric-only", "quant-only", "image-only", "text-only", "concat-only")


@dataclass(frozen=True)
class TrainConfig:
    bits: int = 16
    proj_dim: int = 16
    epochs: int = 500
    batch_size: int = 128
    lr: float = 1e-5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    dropout_p: float = 0.1
    lam: float = 0.5
    mu: float = 0.5
    w_d: float = 1.5
    seed: int = 0
    eval_every: int = 20
    ablation: str = "full"
    lr_schedule: str = "constant"  # or "cosine"

    def __post_init__(self):
        if self.ablation not in ABLATIONS:
            raise ValueError(f"unknown ablation {self.ablation!r}; pick one of {ABLATIONS}")
        if self.lr_schedule not in ("constant", "cosine"):
            raise ValueError(f"unknown lr schedule {self.lr_schedule!r}")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        LossConfig(lam=self.lam, mu=self.mu, w_d=self.w_d)  # validates ranges

    def pipeline(self, num_views: int):
        """(loss_cfg, metric_weight, view_mask, use_gating) for this ablation."""
        mu = 0.0 if self.ablation == "metric-only" else self.mu
        loss_cfg = LossConfig(lam=self.lam, mu=mu, w_d=self.w_d)
        metric_weight = 0.0 if self.ablation == "quant-only" else 1.0
        view_mask = None
        if self.ablation == "image-only":
            view_mask = [v == 0 for v in range(num_views)]
        elif self.ablation == "text-only":
            if num_views < 2:
                raise ValueError("text-only ablation needs at least two views")
            view_mask = [v == 1 for v in range(num_views)]
        use_gating = self.ablation != "concat-only"
        return loss_cfg, metric_weight, view_mask, use_gating


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    test_map: float = None
    wall_ms: float = 0.0


@dataclass
class TrainResult:
    params: ModelParams
    optim_state: OptimState
    records: list
    net_cfg: NetConfig
    best_params: ModelParams
    best_epoch: int
    best_map: float


def codes_for(records, params: ModelParams, view_mask=None, use_gating=True,
              chunk: int = 512) -> np.ndarray:
    """Continuous codes in eval mode (dropout off), chunked over the split."""
    out = []
    for start in range(0, len(records), chunk):
        views = stack_views(records[start:start + chunk])
        h, _ = forward_batch(views, params, dropout_p=0.0, train_mode=False,
                             view_mask=view_mask, use_gating=use_gating)
        out.append(h)
    return np.concatenate(out, axis=0)


def _test_map(dataset: DatasetSplit, params, view_mask, use_gating) -> float:
    q_codes = binarize(codes_for(dataset.query, params, view_mask, use_gating))
    db_codes = binarize(codes_for(dataset.retrieval, params, view_mask, use_gating))
    index = build_index(db_codes, [r.id for r in dataset.retrieval],
                        stack_labels(dataset.retrieval))
    report = evaluate(q_codes, [r.id for r in dataset.query],
                      stack_labels(dataset.query), index)
    return report.map


def train(dataset: DatasetSplit, cfg: TrainConfig) -> TrainResult:
    """Run the full training loop; deterministic under (cfg, dataset)."""
    net_cfg = NetConfig(dataset.view_dims, cfg.proj_dim, cfg.bits)
    loss_cfg, metric_weight, view_mask, use_gating = cfg.pipeline(net_cfg.num_views)

    params = init_params(net_cfg, cfg.seed)
    state = init_optim(params, lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2,
                       eps=cfg.eps, weight_decay=cfg.weight_decay)
    steps_per_epoch = max(1, len(dataset.train) // cfg.batch_size)
    total_steps = cfg.epochs * steps_per_epoch

    records = []
    best_params, best_epoch, best_map = params.copy(), 0, -1.0
    for epoch in range(1, cfg.epochs + 1):
        t0 = time.perf_counter()
        losses = []
        for bi, batch in enumerate(batches(dataset.train, cfg.batch_size,
                                           cfg.seed, epoch)):
            views = stack_views(batch)
            h, tape = forward_batch(
                views, params, dropout_p=cfg.dropout_p, train_mode=True,
                rng_seed=(cfg.seed, epoch, bi), view_mask=view_mask,
                use_gating=use_gating,
            )
            loss, dH = total_loss(h, stack_labels(batch), loss_cfg,
                                  metric_weight=metric_weight)
            if not np.isfinite(loss):
                raise RuntimeError(
                    f"non-finite loss {loss} at epoch {epoch}, batch {bi}"
                )
            grads = netmod.backward_batch(tape, params, dH)
            lr = (cosine_lr(cfg.lr, state.step, total_steps)
                  if cfg.lr_schedule == "cosine" else None)
            params, state = adamw_step(params, grads, state, lr=lr)
            losses.append(loss)

        test_map = None
        if cfg.eval_every > 0 and (epoch % cfg.eval_every == 0 or epoch == cfg.epochs):
            test_map = _test_map(dataset, params, view_mask, use_gating)
            if test_map > best_map:
                best_params, best_epoch, best_map = params.copy(), epoch, test_map
        wall_ms = (time.perf_counter() - t0) * 1e3
        records.append(EpochRecord(epoch, float(np.mean(losses)), test_map, wall_ms))

    if best_map < 0:
        best_params, best_epoch, best_map = params.copy(), cfg.epochs, float("nan")
    return TrainResult(params, state, records, net_cfg, best_params, best_epoch, best_map)


def export_curves(records, path) -> None:
    """CSV of per-epoch loss / test mAP; blank mAP on non-eval epochs."""
    if not records:
        raise ValueError("no epoch records to export")
    with open(Path(path), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "loss", "map", "wall_ms"])
        for r in records:
            writer.writerow([
                r.epoch,
                repr(r.loss),
                "" if r.test_map is None else repr(r.test_map),
                f"{r.wall_ms:.3f}",
            ])


# --- checkpoint container: JSON header + raw float64 tensors ---------------

_MAGIC = b"MVHCKPT1"


@dataclass
class Checkpoint:
    params: ModelParams
    net_cfg: NetConfig
    config: dict = field(default_factory=dict)
    optim: OptimState = None


def _tensor_entries(params: ModelParams):
    return [{"name": n, "shape": list(t.shape)} for n, t in params.tensors()]


def save_checkpoint(path, params: ModelParams, net_cfg: NetConfig,
                    config: dict = None, optim: OptimState = None) -> None:
    """Bit-exact, self-describing container; byte-identical for equal inputs."""
    header = {
        "net": {"view_dims": list(net_cfg.view_dims),
                "proj_dim": net_cfg.proj_dim,
                "code_bits": net_cfg.code_bits},
        "config": config or {},
        "tensors": _tensor_entries(params),
        "optim": None,
    }
    blobs = [np.ascontiguousarray(t, dtype="<f8").tobytes() for _, t in params.tensors()]
    if optim is not None:
        header["optim"] = {"step": optim.step, "lr": optim.lr,
                           "beta1": optim.beta1, "beta2": optim.beta2,
                           "eps": optim.eps, "weight_decay": optim.weight_decay}
        for moments in (optim.m, optim.v):
            blobs.extend(np.ascontiguousarray(t, dtype="<f8").tobytes()
                         for _, t in moments.tensors())
    head = json.dumps(header, sort_keys=True).encode()
    with open(Path(path), "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<Q", len(head)))
        fh.write(head)
        for blob in blobs:
            fh.write(blob)


def _read_params(fh, net_cfg: NetConfig, entries) -> ModelParams:
    tensors = {}
    for e in entries:
        shape = tuple(e["shape"])
        n = int(np.prod(shape)) if shape else 1
        buf = fh.read(n * 8)
        tensors[e["name"]] = np.frombuffer(buf, dtype="<f8").reshape(shape).copy()
    nv = net_cfg.num_views
    return ModelParams(
        norm_w=[tensors[f"norm_w.{v}"] for v in range(nv)],
        norm_b=[tensors[f"norm_b.{v}"] for v in range(nv)],
        fusion_w=tensors["fusion_w"],
        fusion_b=tensors["fusion_b"],
        hash_w=tensors["hash_w"],
        hash_b=tensors["hash_b"],
    )


def load_checkpoint(path) -> Checkpoint:
    with open(Path(path), "rb") as fh:
        if fh.read(len(_MAGIC)) != _MAGIC:
            raise ValueError(f"{path}: not a checkpoint file")
        (head_len,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(head_len))
        net_cfg = NetConfig(tuple(header["net"]["view_dims"]),
                            header["net"]["proj_dim"], header["net"]["code_bits"])
        params = _read_params(fh, net_cfg, header["tensors"])
        optim = None
        if header["optim"] is not None:
            m = _read_params(fh, net_cfg, header["tensors"])
            v = _read_params(fh, net_cfg, header["tensors"])
            o = header["optim"]
            optim = OptimState(step=o["step"], m=m, v=v, lr=o["lr"],
                               beta1=o["beta1"], beta2=o["beta2"], eps=o["eps"],
                               weight_decay=o["weight_decay"])
    return Checkpoint(params=params, net_cfg=net_cfg, config=header["config"],
                      optim=optim)
