"""Compressed / reconstructive token distillation and the training loop."""
from __future__ import annotations

import csv
import logging
import math
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from litetok.compression import BlockPartition, FeatureMap, partition_blocks, wap_compress
from litetok.encoder import (
    ModelParams, attention_block, encode_teacher, save_checkpoint, student_forward,
)
from litetok.errors import ConfigError, DimensionError, NumericError, SamplingError
from litetok.numerics import Tape, Tensor, backward, clamp_abs, no_tape, sqrt, take

log = logging.getLogger(__name__)

BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8


@dataclass
class TrainConfig:
    peak_lr: float = 1e-3
    warmup_steps: int = 50
    total_steps: int = 300
    batch_size: int = 8
    weight_decay: float = 0.05
    grad_clip_norm: float = 1.0
    outlier_sigma: float = 3.0
    seed: int = 0
    objective: str = "ctd"
    clip_frames: int = 4
    fps_range: tuple[float, float] = (1.0, 4.0)
    checkpoint_every: int = 0

    def __post_init__(self):
        self.fps_range = tuple(float(v) for v in self.fps_range)
        if self.objective not in ("ctd", "rtd"):
            raise ConfigError(f"objective must be ctd or rtd, got {self.objective!r}")
        if self.total_steps < 0 or self.warmup_steps < 0 or self.warmup_steps > self.total_steps:
            raise ConfigError("need 0 <= warmup_steps <= total_steps")
        if self.batch_size < 1 or self.clip_frames < 1:
            raise ConfigError("batch_size and clip_frames must be positive")
        if self.peak_lr < 0 or self.weight_decay < 0 or self.grad_clip_norm <= 0 or self.outlier_sigma <= 0:
            raise ConfigError("learning rate, decay, clip norm and sigma must be non-negative")
        lo, hi = self.fps_range
        if not 0 < lo <= hi:
            raise ConfigError(f"bad fps_range {self.fps_range}")

    def to_lines(self) -> list[str]:
        out = []
        for k, v in asdict(self).items():
            if k == "fps_range":
                v = f"{v[0]},{v[1]}"
            out.append(f"{k} = {v}")
        return out


@dataclass
class Corpus:
    videos: list[np.ndarray]
    native_fps: float = 4.0


# clip sampling

def sample_clip(video: np.ndarray, native_fps: float, cfg: TrainConfig,
                rng: np.random.Generator) -> np.ndarray:
    """Draw a clip at a rate uniform in ``cfg.fps_range`` from a uniformly
    placed start frame."""
    n, frames = cfg.clip_frames, video.shape[0]
    lo, hi = cfg.fps_range
    if round((n - 1) * native_fps / lo) >= frames:
        raise SamplingError(f"{frames}-frame video too short for {n} frames at {lo} fps")
    rate = rng.uniform(lo, hi)
    offsets = np.rint(np.arange(n) * native_fps / rate).astype(int)
    start = int(rng.integers(0, frames - offsets[-1]))
    return video[start + offsets]


# losses

def ctd_target(teacher_dense: FeatureMap, part: BlockPartition) -> np.ndarray:
    """Compressed teacher features ``[(N/r), D]`` in (u, v, s) order."""
    y = wap_compress(teacher_dense, part).tokens
    return y.reshape(-1, y.shape[-1])


def clipped_mse(pred: Tensor, target: np.ndarray, sigma: float) -> Tensor:
    """Mean squared residual with residuals saturated at ``sigma`` standard
    deviations of the residuals themselves; no clipping when they are all equal."""
    if pred.shape != target.shape:
        raise DimensionError(f"prediction {pred.shape} vs target {target.shape}")
    diff = pred - target
    centred = diff - diff.mean()
    std = sqrt((centred * centred).mean())
    if std.item() > 0:
        diff = clamp_abs(diff, std * sigma)
    return (diff * diff).mean()


def ctd_loss(student_out: Tensor, teacher_dense: FeatureMap | Sequence[FeatureMap],
             part: BlockPartition, sigma: float = 3.0) -> Tensor:
    """Outlier-clipped MSE between student tokens and WAP-compressed teacher
    features. Accepts one item ``[(N/r), D]`` or a batch ``[B, (N/r), D]``; the
    clipping scale is estimated per item and item losses are averaged."""
    if isinstance(teacher_dense, FeatureMap):
        return clipped_mse(student_out, ctd_target(teacher_dense, part), sigma)
    if student_out.shape[0] != len(teacher_dense):
        raise DimensionError("batch size mismatch between student output and teacher maps")
    losses = [clipped_mse(student_out[b], ctd_target(fm, part), sigma)
              for b, fm in enumerate(teacher_dense)]
    total = losses[0]
    for item in losses[1:]:
        total = total + item
    return total * (1.0 / len(losses))


def rtd_loss(reconstruction: Tensor, teacher_dense) -> Tensor:
    """Mean squared error against the dense teacher patch tokens."""
    target = teacher_dense.tokens if isinstance(teacher_dense, FeatureMap) else np.asarray(teacher_dense)
    target = target.reshape(reconstruction.shape) if target.size == reconstruction.size else target
    if target.shape != reconstruction.shape:
        raise DimensionError(f"reconstruction {reconstruction.shape} vs target {target.shape}")
    d = reconstruction - target
    return (d * d).mean()


# reconstruction decoder

def init_decoder(dim: int, ratio: int, num_blocks: int = 2, heads: int = 4, mlp_ratio: int = 4,
                 seed: int = 0) -> dict[str, Tensor]:
    if dim % heads:
        raise ConfigError(f"decoder dim {dim} not divisible by heads {heads}")
    rng = np.random.default_rng(seed)
    m = mlp_ratio * dim
    scale = 1.0 / math.sqrt(dim)
    p = {"offset": Tensor(rng.normal(0, 0.02, size=(ratio, dim)))}
    for i in range(num_blocks):
        pre = f"blocks.{i}."
        p[pre + "ln1.g"], p[pre + "ln1.b"] = Tensor(np.ones(dim)), Tensor(np.zeros(dim))
        p[pre + "ln2.g"], p[pre + "ln2.b"] = Tensor(np.ones(dim)), Tensor(np.zeros(dim))
        for w in "qkvo":
            p[pre + f"attn.w{w}"] = Tensor(rng.normal(0, scale, size=(dim, dim)))
            p[pre + f"attn.b{w}"] = Tensor(np.zeros(dim))
        p[pre + "mlp.w1"] = Tensor(rng.normal(0, scale, size=(dim, m)))
        p[pre + "mlp.b1"] = Tensor(np.zeros(m))
        p[pre + "mlp.w2"] = Tensor(rng.normal(0, 1.0 / math.sqrt(m), size=(m, dim)))
        p[pre + "mlp.b2"] = Tensor(np.zeros(dim))
    p["_heads"] = heads  # type: ignore[assignment]
    return p


def decoder_tensors(decoder: dict) -> list[Tensor]:
    return [v for k, v in decoder.items() if isinstance(v, Tensor)]


def unpool_indices(part: BlockPartition) -> tuple[np.ndarray, np.ndarray]:
    """For every dense position (row-major T,H,W): its block and intra-block offset."""
    T, H, W = part.source
    bt, bh, bw = part.block
    _, h, w = part.target
    tau, i, j = np.meshgrid(np.arange(T), np.arange(H), np.arange(W), indexing="ij")
    block = (tau // bt) * h * w + (i // bh) * w + (j // bw)
    offset = (tau % bt) * bh * bw + (i % bh) * bw + (j % bw)
    return block.reshape(-1), offset.reshape(-1)


def rtd_decoder_forward(student_out: Tensor, decoder: dict, part: BlockPartition) -> Tensor:
    """Nearest-neighbour unpooling plus offset embedding, then transformer
    blocks over all dense positions. ``[(B,) N/r, D] -> [(B,) N, D]``."""
    single = student_out.ndim == 2
    x = student_out.reshape((1,) + student_out.shape) if single else student_out
    n_out = math.prod(part.target)
    if x.shape[1] != n_out or decoder["offset"].shape != (part.ratio, x.shape[2]):
        raise DimensionError(f"decoder input {student_out.shape} inconsistent with partition")
    block, offset = unpool_indices(part)
    x = take(x, block, axis=1) + take(decoder["offset"], offset, axis=0)
    heads = decoder.get("_heads", 4)
    i = 0
    while f"blocks.{i}.ln1.g" in decoder:
        x = attention_block(x, decoder, f"blocks.{i}.", heads)
        i += 1
    return x.reshape(x.shape[1:]) if single else x


# optimisation

@dataclass
class OptimizerState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int = 0

    @classmethod
    def for_params(cls, params: Sequence[Tensor]) -> "OptimizerState":
        return cls([np.zeros(p.shape) for p in params], [np.zeros(p.shape) for p in params])


def adamw_step(params: Sequence[Tensor], grads: Sequence[np.ndarray], state: OptimizerState,
               lr: float, weight_decay: float) -> None:
    if lr < 0:
        raise ValueError("learning rate must be non-negative")
    for g in grads:
        if not np.isfinite(g).all():
            raise NumericError("non-finite gradient; optimizer step aborted")
    state.step += 1
    b1, b2 = BETAS
    c1, c2 = 1 - b1 ** state.step, 1 - b2 ** state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape:
            raise DimensionError(f"gradient shape {g.shape} != parameter shape {p.shape}")
        g = g.astype(np.float64)
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        theta = p.data.astype(np.float64)
        theta -= lr * weight_decay * theta
        theta -= lr * (m / c1) / (np.sqrt(v / c2) + ADAM_EPS)
        p.data[...] = theta


def lr_schedule(step: int, cfg: TrainConfig) -> float:
    """Linear warmup to the peak rate, then cosine decay to zero."""
    if not 0 <= step <= cfg.total_steps:
        raise ValueError(f"step {step} outside [0, {cfg.total_steps}]")
    if step < cfg.warmup_steps:
        return cfg.peak_lr * step / cfg.warmup_steps
    span = cfg.total_steps - cfg.warmup_steps
    if span == 0:
        return cfg.peak_lr
    return cfg.peak_lr * 0.5 * (1 + math.cos(math.pi * (step - cfg.warmup_steps) / span))


def global_norm(grads: Sequence[np.ndarray]) -> float:
    return math.sqrt(sum(float(np.sum(g.astype(np.float64) ** 2)) for g in grads))


def clip_gradients(grads: list[np.ndarray], max_norm: float) -> tuple[list[np.ndarray], float, float]:
    """Scale gradients so their global norm is at most ``max_norm``.
    Returns the clipped gradients with the norms before and after."""
    norm = global_norm(grads)
    if norm > max_norm:
        scale = max_norm / norm
        grads = [g * scale for g in grads]
        return grads, norm, global_norm(grads)
    return grads, norm, norm


# training loop

@dataclass
class StepRecord:
    step: int
    lr: float
    loss: float
    grad_norm: float
    clipped_norm: float


@dataclass
class TrainLog:
    records: list[StepRecord] = field(default_factory=list)

    def losses(self) -> np.ndarray:
        return np.array([r.loss for r in self.records])

    def write_csv(self, path: str | os.PathLike) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["step", "lr", "loss", "grad_norm"])
            for r in self.records:
                w.writerow([r.step, repr(r.lr), repr(r.loss), repr(r.grad_norm)])


class TrainingAborted(NumericError):
    def __init__(self, message: str, log: TrainLog, step: int):
        super().__init__(message)
        self.log = log
        self.step = step


def smoothed(values: np.ndarray, window: int = 10) -> tuple[float, float]:
    """Mean of the first and last ``window`` entries."""
    return float(np.mean(values[:window])), float(np.mean(values[-window:]))


def _sample_batch(corpus: Corpus, cfg: TrainConfig, rng: np.random.Generator) -> np.ndarray:
    clips = []
    for _ in range(cfg.batch_size):
        video = corpus.videos[int(rng.integers(len(corpus.videos)))]
        clips.append(sample_clip(video, corpus.native_fps, cfg, rng))
    return np.stack(clips)


def train(student: ModelParams, teacher: ModelParams, dataset: Corpus, cfg: TrainConfig,
          decoder: dict | None = None, checkpoint_dir: str | os.PathLike | None = None) -> TrainLog:
    """Distil ``teacher`` into ``student`` in place and return the per-step log.

    For the ``rtd`` objective a reconstruction decoder (created when not
    supplied) is trained jointly.
    """
    s_spec = student.spec
    if not s_spec.distill_proj_dim or s_spec.distill_proj_dim != teacher.spec.dim:
        raise ConfigError("student distillation width must equal the teacher width")
    frames = cfg.clip_frames
    grid = s_spec.output_grid(frames)
    part = partition_blocks((frames, s_spec.grid, s_spec.grid), grid)
    if cfg.objective == "rtd" and decoder is None:
        decoder = init_decoder(teacher.spec.dim, part.ratio, seed=cfg.seed)

    teacher.set_trainable(False)
    student.set_trainable(True)
    trainable = list(student)
    if cfg.objective == "rtd":
        for t in decoder_tensors(decoder):
            t.requires_grad = True
        trainable += decoder_tensors(decoder)
    state = OptimizerState.for_params(trainable)
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed))
    out = TrainLog()

    for step in range(cfg.total_steps):
        clips = _sample_batch(dataset, cfg, rng)
        with no_tape():
            t_tokens, t_cls = encode_teacher(clips, teacher.spec, teacher)
        maps = [FeatureMap(t_tokens.data[b], t_cls.data[b]) for b in range(cfg.batch_size)]
        for t in trainable:
            t.grad = None
        try:
            with Tape() as tape:
                pred = student_forward(clips, s_spec, student).distill
                if cfg.objective == "ctd":
                    loss = ctd_loss(pred, maps, part, cfg.outlier_sigma)
                else:
                    recon = rtd_decoder_forward(pred, decoder, part)
                    dense = t_tokens.data.reshape(recon.shape)
                    loss = rtd_loss(recon, dense)
        except NumericError as e:
            raise TrainingAborted(f"step {step}: {e}", out, step) from e
        if not math.isfinite(loss.item()):
            raise TrainingAborted(f"step {step}: non-finite loss", out, step)
        backward(loss, tape)
        grads = [t.grad if t.grad is not None else np.zeros(t.shape) for t in trainable]
        grads, norm, clipped = clip_gradients(grads, cfg.grad_clip_norm)
        lr = lr_schedule(step + 1, cfg)
        try:
            adamw_step(trainable, grads, state, lr, cfg.weight_decay)
        except NumericError as e:
            raise TrainingAborted(f"step {step}: {e}", out, step) from e
        out.records.append(StepRecord(step, lr, loss.item(), norm, clipped))
        if step % 50 == 0:
            log.info("step %d loss %.5f lr %.2e grad %.3f", step, loss.item(), lr, norm)
        if checkpoint_dir is not None and cfg.checkpoint_every and (step + 1) % cfg.checkpoint_every == 0:
            save_checkpoint(Path(checkpoint_dir) / f"step_{step + 1:06d}", student)
    return out
