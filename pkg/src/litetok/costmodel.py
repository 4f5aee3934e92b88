"""Analytic FLOPs/parameter counts for encoders and LLM prefill, plus a timing harness.

Convention: one multiply-accumulate is two FLOPs. Layer norms, softmax, bias
adds and the patch embedding are not counted. Parameter counts cover the
transformer layers, temporal mixing and downsampling, not the embeddings.
"""
from __future__ import annotations

import math
import statistics
import time
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable

from litetok.encoder import EncoderSpec
from litetok.errors import ConfigError

FAMILIES = ("frame_wise_vit", "temp_attn", "spatio_temp_attn", "temp_conv", "dw_temp_conv")
STRATEGIES = ("none", "posthoc", "internal")


@dataclass(frozen=True)
class ArchSpec:
    family: str
    layers: int
    dim: int
    heads: int
    tokens_per_frame: int  # includes the cls token
    mlp_ratio: int = 4
    temporal_kernel: int = 3
    stride_schedule: tuple = ()
    clip_frames: int = 4

    def __post_init__(self):
        object.__setattr__(self, "stride_schedule",
                           tuple((int(l), tuple(int(v) for v in s)) for l, s in self.stride_schedule))
        self.validate()

    @property
    def clip_wise(self) -> bool:
        return self.family != "frame_wise_vit"

    @property
    def frames_per_pass(self) -> int:
        return self.clip_frames if self.clip_wise else 1

    def validate(self) -> None:
        if self.family not in FAMILIES:
            raise ConfigError(f"family must be one of {FAMILIES}, got {self.family!r}")
        if min(self.layers, self.dim, self.heads, self.mlp_ratio, self.temporal_kernel, self.clip_frames) < 1:
            raise ConfigError("architecture extents must be positive")
        if self.dim % self.heads:
            raise ConfigError(f"dim {self.dim} not divisible by heads {self.heads}")
        side = math.isqrt(self.tokens_per_frame - 1) if self.tokens_per_frame > 1 else 0
        if side < 1 or side * side != self.tokens_per_frame - 1:
            raise ConfigError(f"tokens_per_frame {self.tokens_per_frame} is not 1 + a square grid")
        last = 0
        for layer, _ in self.stride_schedule:
            if not last < layer <= self.layers:
                raise ConfigError("stride schedule layers must be increasing and within depth")
            last = layer
        self.token_schedule()

    def token_schedule(self) -> list[tuple[int, int, int]]:
        """(t, h, w) entering each layer, for one pass."""
        t, h = self.frames_per_pass, math.isqrt(self.tokens_per_frame - 1)
        w = h
        strides = dict(self.stride_schedule)
        out = []
        for layer in range(1, self.layers + 1):
            out.append((t, h, w))
            if layer in strides:
                st, sh, sw = strides[layer]
                if min(st, sh, sw) < 1 or t % st or h % sh or w % sw:
                    raise ConfigError(f"stride {strides[layer]} does not divide grid {(t, h, w)} at layer {layer}")
                t, h, w = t // st, h // sh, w // sw
        return out

    @property
    def compression_ratio(self) -> int:
        """Patch tokens in over patch tokens out for one pass."""
        t = self.frames_per_pass
        h = w = math.isqrt(self.tokens_per_frame - 1)
        for _, (st, sh, sw) in self.stride_schedule:
            t, h, w = t // st, h // sh, w // sw
        return self.frames_per_pass * (self.tokens_per_frame - 1) // (t * h * w)

    @classmethod
    def from_encoder_spec(cls, spec: EncoderSpec, clip_frames: int = 4) -> "ArchSpec":
        temporal = any(s[0] > 1 for _, s in spec.stride_schedule)
        mixes = spec.role == "student" and spec.temporal_conv
        family = "dw_temp_conv" if temporal or mixes else "frame_wise_vit"
        return cls(family, spec.num_layers, spec.dim, spec.heads, 1 + spec.grid ** 2, spec.mlp_ratio,
                   spec.temporal_kernel, spec.stride_schedule, clip_frames)


@dataclass(frozen=True)
class LLMSpec:
    layers: int
    dim: int
    mlp_ratio: Fraction | float = 4
    query_heads: int = 1
    kv_heads: int = 1

    def __post_init__(self):
        if min(self.layers, self.dim, self.query_heads, self.kv_heads) < 1 or self.mlp_ratio <= 0:
            raise ConfigError("LLM extents must be positive")
        if self.query_heads % self.kv_heads:
            raise ConfigError("query heads must be a multiple of kv heads")


@dataclass
class CostReport:
    frames: int
    strategy: str
    tokens_into_llm: int
    flops_vision: int
    flops_auxiliary: int
    flops_llm_prefill: int
    params_vision: int
    measured_latency_ms: dict[str, float] = field(default_factory=dict)

    @property
    def flops_total(self) -> int:
        return self.flops_vision + self.flops_auxiliary + self.flops_llm_prefill

    @property
    def dominant(self) -> str:
        return "vision" if self.flops_vision + self.flops_auxiliary > self.flops_llm_prefill else "llm"


def _layer_flops(spec: ArchSpec, t: int, h: int, w: int) -> tuple[int, int]:
    d, s = spec.dim, 1 + h * w
    n = t * s
    attn_group = n if spec.family == "spatio_temp_attn" else s
    attn = 2 * 4 * n * d * d + 2 * 2 * (n // attn_group) * attn_group ** 2 * d
    mlp = 2 * 2 * spec.mlp_ratio * n * d * d
    mix = 0
    if t > 1:
        if spec.family == "temp_attn":
            mix = 2 * 4 * n * d * d + 2 * 2 * s * t * t * d
        elif spec.family == "temp_conv":
            mix = 2 * n * d * d * spec.temporal_kernel
        elif spec.family == "dw_temp_conv":
            mix = 2 * n * d * spec.temporal_kernel
    return attn + mlp, mix


def _mix_params(spec: ArchSpec) -> int:
    d, k = spec.dim, spec.temporal_kernel
    return {"temp_attn": 4 * d * d + 6 * d, "temp_conv": k * d * d + d, "dw_temp_conv": k * d}.get(spec.family, 0)


def _downsample_flops(d: int, k: int, t: int, h: int, w: int, stride) -> int:
    # separable depthwise passes of kernel k; each output reads k inputs per channel
    st, sh, sw = stride
    total = 0
    if st > 1:
        t //= st
        total += 2 * t * (1 + h * w) * d * k
    if sh > 1:
        h //= sh
        total += 2 * t * h * w * d * k
    if sw > 1:
        w //= sw
        total += 2 * t * h * w * d * k
    return total


def vit_flops(spec: ArchSpec, frames: int) -> tuple[int, int]:
    """FLOPs to encode ``frames`` frames and the parameter count.

    Clip-wise families are pro-rated per frame, so a trailing partial clip
    costs its share of a full clip.
    """
    if frames < 1:
        raise ConfigError("frames must be >= 1")
    d, m = spec.dim, spec.mlp_ratio * spec.dim
    strides = dict(spec.stride_schedule)
    per_pass = params = 0
    for layer, (t, h, w) in enumerate(spec.token_schedule(), start=1):
        core, mix = _layer_flops(spec, t, h, w)
        per_pass += core + mix
        params += 4 * d * d + 4 * d + 2 * m * d + m + d + 4 * d
        if t > 1:
            params += _mix_params(spec)
        if layer in strides:
            per_pass += _downsample_flops(d, spec.temporal_kernel, t, h, w, strides[layer])
            params += d * spec.temporal_kernel * sum(1 for s in strides[layer] if s > 1)
    return per_pass * frames // spec.frames_per_pass, params


def llm_prefill_flops(spec: LLMSpec, n_tokens: int) -> int:
    if n_tokens < 1:
        raise ConfigError("n_tokens must be >= 1")
    n, d = n_tokens, spec.dim
    g = Fraction(spec.kv_heads, spec.query_heads)
    proj = 2 * n * d * d * (2 + 2 * g)  # q and o full width, k and v shrink with grouped queries
    attn = 2 * 2 * n * n * d
    mlp = 2 * 2 * Fraction(spec.mlp_ratio) * n * d * d
    return int(spec.layers * (proj + attn + mlp))


def parse_strategy(strategy: str) -> tuple[str, int]:
    """``none``, ``posthoc(16)``, ``internal(16)`` -> (kind, r)."""
    s = strategy.strip().replace(" ", "")
    if s == "none":
        return "none", 1
    for kind in ("posthoc", "internal"):
        if s.startswith(kind + "(") and s.endswith(")"):
            try:
                r = int(s[len(kind) + 1:-1])
            except ValueError:
                break
            if r < 1:
                raise ConfigError(f"compression ratio must be >= 1 in {strategy!r}")
            return kind, r
    raise ConfigError(f"unknown strategy {strategy!r}; expected none, posthoc(r) or internal(r)")


def bottleneck_report(vision: ArchSpec, llm: LLMSpec, strategy: str, frames: int,
                      tokens_per_frame: int, student: ArchSpec | None = None) -> CostReport:
    """Cost of encoding ``frames`` frames and prefilling the LLM.

    ``tokens_per_frame`` is what the LLM would see per frame without
    compression. ``student`` is the compressive encoder used by ``internal``.
    """
    kind, r = parse_strategy(strategy)
    if frames < 1 or tokens_per_frame < 1:
        raise ConfigError("frames and tokens_per_frame must be positive")
    dense = frames * tokens_per_frame
    tokens = -(-dense // r)
    aux = 0
    if kind == "internal":
        if student is None:
            student = full_student()
        if student.compression_ratio != r:
            raise ConfigError(f"internal({r}) needs a student compressing {r}x, got {student.compression_ratio}x")
        flops_v, params = vit_flops(student, frames)
    else:
        flops_v, params = vit_flops(vision, frames)
        if kind == "posthoc" and r > 1:
            # WAP: one dot product and one weighted sum per token
            aux = 2 * 2 * dense * vision.dim
    return CostReport(frames, strategy, tokens, flops_v, aux, llm_prefill_flops(llm, tokens), params)


def wallclock_profile(component: Callable[[], object], warmup: int = 40,
                      iters: int = 100) -> tuple[float, list[float]]:
    """Median latency in ms over ``iters`` timed calls after ``warmup`` discarded ones."""
    if warmup < 0 or iters < 1:
        raise ValueError("need warmup >= 0 and iters >= 1")
    for _ in range(warmup):
        component()
    samples = []
    for _ in range(iters):
        t0 = time.perf_counter()
        component()
        samples.append((time.perf_counter() - t0) * 1e3)
    return statistics.median(samples), samples


# full-scale reference configurations (448 px frames at patch 14: 32x32 + cls)

FULL_TOKENS_PER_FRAME = 1025
LLM_TOKENS_PER_FRAME = 256
FULL_STUDENT_STRIDES = ((4, (2, 2, 2)), (8, (2, 1, 1)))


def full_teacher() -> ArchSpec:
    return ArchSpec("frame_wise_vit", 24, 1024, 16, FULL_TOKENS_PER_FRAME)


def full_base() -> ArchSpec:
    return ArchSpec("frame_wise_vit", 12, 768, 12, FULL_TOKENS_PER_FRAME)


def full_student(family: str = "dw_temp_conv") -> ArchSpec:
    return ArchSpec(family, 12, 768, 12, FULL_TOKENS_PER_FRAME, stride_schedule=FULL_STUDENT_STRIDES)


def full_llm() -> LLMSpec:
    # 7B-class decoder: 28 layers, width 3584, MLP 18944, 28 query / 4 kv heads
    return LLMSpec(28, 3584, Fraction(18944, 3584), 28, 4)
