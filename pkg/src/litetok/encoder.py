"""Frame-wise ViT teacher and token-compressive student encoder.

Activations are carried as ``[B, T, S, C]`` tensors where ``S = 1 + H*W``;
position 0 of every time slice is that slice's class token.
"""
from __future__ import annotations

import math
import os
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from litetok.compression import FeatureMap
from litetok.errors import ConfigError, ShapeError
from litetok.numerics import (
    Tensor, concat, depthwise_conv1d, gelu, layer_norm, linear, ltf, softmax_last_axis,
)

Stride = tuple[int, int, int]


@dataclass(frozen=True)
class EncoderSpec:
    role: str
    num_layers: int
    dim: int
    heads: int
    patch: int = 4
    input_px: int = 32
    temporal_kernel: int = 3
    stride_schedule: tuple[tuple[int, Stride], ...] = ()
    distill_proj_dim: int | None = None
    mlp_ratio: int = 4
    temporal_conv: bool = True

    def __post_init__(self):
        object.__setattr__(self, "stride_schedule",
                           tuple((int(a), tuple(int(v) for v in s)) for a, s in self.stride_schedule))
        self.validate()

    def validate(self) -> None:
        if self.role not in ("teacher", "student"):
            raise ConfigError(f"role must be teacher or student, got {self.role!r}")
        if min(self.num_layers, self.dim, self.heads, self.patch, self.input_px, self.mlp_ratio) < 1:
            raise ConfigError("encoder extents must be positive")
        if self.dim % self.heads:
            raise ConfigError(f"dim {self.dim} not divisible by heads {self.heads}")
        if self.input_px % self.patch:
            raise ConfigError(f"patch {self.patch} does not divide input {self.input_px}")
        if self.temporal_kernel < 1 or self.temporal_kernel % 2 == 0:
            raise ConfigError("temporal_kernel must be a positive odd integer")
        prev = 0
        for after, stride in self.stride_schedule:
            if after <= prev or after >= self.num_layers:
                raise ConfigError("stride schedule must be strictly increasing within [1, num_layers)")
            if len(stride) != 3 or min(stride) < 1:
                raise ConfigError(f"bad stride {stride}")
            prev = after
        if self.role == "teacher" and (self.stride_schedule or self.distill_proj_dim):
            raise ConfigError("a teacher has no stride schedule or distillation projection")

    @property
    def grid(self) -> int:
        return self.input_px // self.patch

    @property
    def total_stride(self) -> Stride:
        st = [1, 1, 1]
        for _, s in self.stride_schedule:
            st = [a * b for a, b in zip(st, s)]
        return tuple(st)

    def output_grid(self, frames: int) -> Stride:
        st = self.total_stride
        shape = (frames, self.grid, self.grid)
        if any(n % s for n, s in zip(shape, st)):
            raise ShapeError(f"clip grid {shape} not divisible by cumulative stride {st}")
        return tuple(n // s for n, s in zip(shape, st))

    def ratio(self) -> int:
        return math.prod(self.total_stride)


def desk_teacher() -> EncoderSpec:
    return EncoderSpec("teacher", num_layers=8, dim=48, heads=4, patch=4, input_px=32)


def desk_student() -> EncoderSpec:
    return EncoderSpec("student", num_layers=6, dim=32, heads=4, patch=4, input_px=32,
                       temporal_kernel=3, stride_schedule=((2, (2, 2, 2)), (4, (2, 1, 1))),
                       distill_proj_dim=48)


def spatial_only_student(base: EncoderSpec | None = None) -> EncoderSpec:
    base = base or desk_student()
    return replace(base, stride_schedule=((2, (1, 2, 2)), (4, (1, 2, 2))), temporal_conv=False)


# parameters

@dataclass
class ModelParams:
    spec: EncoderSpec
    tensors: dict[str, Tensor] = field(default_factory=dict)

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def __iter__(self):
        return iter(self.tensors.values())

    def names(self) -> list[str]:
        return list(self.tensors)

    def count(self) -> int:
        return sum(t.size for t in self.tensors.values())

    def set_trainable(self, flag: bool) -> None:
        for t in self.tensors.values():
            t.requires_grad = flag

    def zero_grad(self) -> None:
        for t in self.tensors.values():
            t.grad = None

    def copy(self) -> "ModelParams":
        return ModelParams(self.spec, {k: Tensor(v.data.copy(), v.requires_grad, dtype=v.data.dtype)
                                       for k, v in self.tensors.items()})


def _down_axes(stride: Stride) -> list[str]:
    return [ax for ax, s in zip("thw", stride) if s > 1]


def param_shapes(spec: EncoderSpec) -> dict[str, tuple[int, ...]]:
    d, m, k = spec.dim, spec.mlp_ratio * spec.dim, spec.temporal_kernel
    shapes: dict[str, tuple[int, ...]] = {
        "patch.w": (3 * spec.patch ** 2, d),
        "patch.b": (d,),
        "cls": (d,),
        "pos": (spec.grid ** 2, d),
    }
    for i in range(spec.num_layers):
        p = f"layers.{i}."
        shapes.update({
            p + "ln1.g": (d,), p + "ln1.b": (d,),
            p + "attn.wq": (d, d), p + "attn.bq": (d,),
            p + "attn.wk": (d, d), p + "attn.bk": (d,),
            p + "attn.wv": (d, d), p + "attn.bv": (d,),
            p + "attn.wo": (d, d), p + "attn.bo": (d,),
            p + "ln2.g": (d,), p + "ln2.b": (d,),
            p + "mlp.w1": (d, m), p + "mlp.b1": (m,),
            p + "mlp.w2": (m, d), p + "mlp.b2": (d,),
        })
        if spec.role == "student" and spec.temporal_conv:
            shapes[p + "tconv"] = (k, d)
    for j, (_, stride) in enumerate(spec.stride_schedule):
        for ax in _down_axes(stride):
            shapes[f"down.{j}.{ax}"] = (k, d)
    if spec.distill_proj_dim:
        shapes["proj"] = (d, spec.distill_proj_dim)
    return shapes


def _orthogonal(rng: np.random.Generator, n_in: int, n_out: int) -> np.ndarray:
    a = rng.normal(size=(max(n_in, n_out), min(n_in, n_out)))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    w = q if n_in >= n_out else q.T
    return w * math.sqrt(max(1.0, n_out / n_in))


def identity_taps(k: int, d: int) -> np.ndarray:
    taps = np.zeros((k, d))
    taps[k // 2] = 1.0
    return taps


def init_params(spec: EncoderSpec, seed: int = 0) -> ModelParams:
    """Orthogonal-style random initialisation with unit-variance embeddings.

    Residual output projections are scaled by ``1/sqrt(2 L)`` to keep the
    residual stream near unit variance through depth.
    """
    rng = np.random.default_rng(seed)
    res_scale = 1.0 / math.sqrt(2 * spec.num_layers)
    out: dict[str, Tensor] = {}
    for name, shape in param_shapes(spec).items():
        leaf = name.rsplit(".", 1)[-1]
        if name in ("cls", "pos"):
            arr = rng.normal(size=shape)
        elif name == "patch.w":
            arr = _orthogonal(rng, *shape)
        elif leaf in ("wq", "wk", "wv", "w1"):
            arr = _orthogonal(rng, *shape)
        elif leaf in ("wo", "w2"):
            arr = _orthogonal(rng, *shape) * res_scale
        elif leaf == "g":
            arr = np.ones(shape)
        elif leaf in ("tconv", "t", "h", "w") and name != "patch.w":
            arr = identity_taps(*shape)
        elif name == "proj":
            arr = np.eye(*shape)
        else:
            arr = np.zeros(shape)
        out[name] = Tensor(arr)
    return ModelParams(spec, out)


def init_student_from_teacher(teacher: ModelParams, student_spec: EncoderSpec) -> ModelParams:
    """Seed a student from a teacher by leading-index slicing.

    Student layer ``l`` copies teacher layer ``round(l * L_T / L_S)``; temporal
    and downsampling kernels start as identity taps and the distillation
    projection as a leading identity.
    """
    ts = teacher.spec
    if student_spec.dim > ts.dim or student_spec.num_layers > ts.num_layers:
        raise ConfigError("student may not be wider or deeper than the teacher")
    if student_spec.patch != ts.patch or student_spec.input_px != ts.input_px:
        raise ConfigError("student and teacher must share patch size and input resolution")
    if student_spec.mlp_ratio != ts.mlp_ratio:
        raise ConfigError("student and teacher must share the MLP ratio")
    fresh = init_params(student_spec)
    out: dict[str, Tensor] = {}
    for name, shape in param_shapes(student_spec).items():
        src = None
        if name.startswith("layers.") and not name.endswith("tconv"):
            _, idx, rest = name.split(".", 2)
            t_layer = round(int(idx) * ts.num_layers / student_spec.num_layers)
            src = teacher[f"layers.{t_layer}.{rest}"]
        elif name in ("patch.w", "patch.b", "cls", "pos"):
            src = teacher[name]
        if src is None:
            out[name] = fresh[name]
        else:
            out[name] = Tensor(src.data[tuple(slice(0, n) for n in shape)].copy(), dtype=src.data.dtype)
    return ModelParams(student_spec, out)


# forward pieces

def _as_batch(clip) -> np.ndarray:
    arr = clip.data if isinstance(clip, Tensor) else np.asarray(clip)
    if arr.ndim == 4:
        arr = arr[None]
    if arr.ndim != 5 or arr.shape[-1] != 3:
        raise ShapeError(f"clip must be [B,] T x px x px x 3, got {arr.shape}")
    return arr


def patch_embed(clip, spec: EncoderSpec, params: ModelParams) -> Tensor:
    """Linear patch projection plus shared spatial position embedding, with the
    learned class token prepended to every frame: ``[B, T, 1 + G*G, dim]``."""
    x = _as_batch(clip)
    B, T, hp, wp, _ = x.shape
    if hp != spec.input_px or wp != spec.input_px:
        raise ShapeError(f"expected {spec.input_px}px frames, got {hp}x{wp}")
    p, g = spec.patch, spec.grid
    patches = x.reshape(B, T, g, p, g, p, 3).transpose(0, 1, 2, 4, 3, 5, 6).reshape(B, T, g * g, 3 * p * p)
    tokens = linear(Tensor(patches), params["patch.w"], params["patch.b"]) + params["pos"]
    cls = params["cls"] + Tensor(np.zeros((B, T, 1, spec.dim)))
    return concat([cls, tokens], axis=2)


def attention_block(x: Tensor, params: ModelParams, prefix: str, heads: int) -> Tensor:
    """Pre-norm multi-head self-attention and MLP over axis -2 of ``x``."""
    *lead, S, d = x.shape
    dh = d // heads
    h = layer_norm(x, params[prefix + "ln1.g"], params[prefix + "ln1.b"])

    def split(w, b):
        y = linear(h, params[prefix + w], params[prefix + b]).reshape(tuple(lead) + (S, heads, dh))
        n = len(lead)
        return y.transpose(tuple(range(n)) + (n + 1, n, n + 2))

    q, k, v = split("attn.wq", "attn.bq"), split("attn.wk", "attn.bk"), split("attn.wv", "attn.bv")
    n = len(lead)
    kt = k.transpose(tuple(range(n + 1)) + (n + 2, n + 1))
    att = softmax_last_axis((q @ kt) * (1.0 / math.sqrt(dh)))
    o = (att @ v).transpose(tuple(range(n)) + (n + 1, n, n + 2)).reshape(tuple(lead) + (S, d))
    x = x + linear(o, params[prefix + "attn.wo"], params[prefix + "attn.bo"])
    h = layer_norm(x, params[prefix + "ln2.g"], params[prefix + "ln2.b"])
    h = linear(gelu(linear(h, params[prefix + "mlp.w1"], params[prefix + "mlp.b1"])),
               params[prefix + "mlp.w2"], params[prefix + "mlp.b2"])
    return x + h


def spatial_attention_block(x: Tensor, params: ModelParams, layer: int) -> Tensor:
    """Attention within each time slice (cls + patch tokens); slices never mix."""
    return attention_block(x, params, f"layers.{layer}.", params.spec.heads)


def downsample(x: Tensor, params: ModelParams, entry: int, grid: tuple[int, int]) -> tuple[Tensor, tuple[int, int]]:
    """Separable depthwise strided convolution over (t, h, w).

    The temporal pass also runs over the class-token position; spatial passes
    touch patch tokens only.
    """
    _, stride = params.spec.stride_schedule[entry]
    st, sh, sw = stride
    B, T, S, d = x.shape
    H, W = grid
    if T % st or H % sh or W % sw:
        raise ShapeError(f"grid {(T, H, W)} not divisible by stride {stride}")
    if st > 1:
        x = depthwise_conv1d(x, params[f"down.{entry}.t"], st, "valid-strided", axis=1)
    if sh == 1 and sw == 1:
        return x, grid
    T = x.shape[1]
    cls, pt = x[:, :, :1], x[:, :, 1:].reshape(B, T, H, W, d)
    if sh > 1:
        pt = depthwise_conv1d(pt, params[f"down.{entry}.h"], sh, "valid-strided", axis=2)
    if sw > 1:
        pt = depthwise_conv1d(pt, params[f"down.{entry}.w"], sw, "valid-strided", axis=3)
    H, W = H // sh, W // sw
    return concat([cls, pt.reshape(B, T, H * W, d)], axis=2), (H, W)


def _split(x: Tensor, grid: tuple[int, int]) -> tuple[Tensor, Tensor]:
    B, T, _, d = x.shape
    return x[:, :, 1:].reshape(B, T, grid[0], grid[1], d), x[:, :, 0]


def encode_teacher(clip, spec: EncoderSpec, params: ModelParams) -> tuple[Tensor, Tensor]:
    """Batched teacher pass; returns patch tokens ``[B,T,H,W,C]`` and cls ``[B,T,C]``."""
    if spec.role != "teacher" or params.spec != spec:
        raise ConfigError("teacher_forward needs a teacher spec matching its parameters")
    x = patch_embed(clip, spec, params)
    for i in range(spec.num_layers):
        x = spatial_attention_block(x, params, i)
    return _split(x, (spec.grid, spec.grid))


def teacher_forward(clip, spec: EncoderSpec, params: ModelParams) -> FeatureMap:
    tokens, cls = encode_teacher(clip, spec, params)
    if tokens.shape[0] != 1:
        raise ShapeError("teacher_forward takes one clip; use encode_teacher for batches")
    return FeatureMap(tokens.data[0], cls.data[0])


@dataclass
class StudentOutput:
    tokens: Tensor  # [B, t, h, w, dim]
    cls: Tensor  # [B, t, dim]
    distill: Tensor | None  # [B, t*h*w, D]

    @property
    def grid(self) -> Stride:
        return tuple(self.tokens.shape[1:4])


def student_forward(clip, spec: EncoderSpec, params: ModelParams) -> StudentOutput:
    """Spatial attention interleaved with depthwise temporal convolutions and
    scheduled strided downsampling; the batch axis is always kept."""
    if spec.role != "student" or params.spec != spec:
        raise ConfigError("student_forward needs a student spec matching its parameters")
    frames = _as_batch(clip).shape[1]
    spec.output_grid(frames)
    x = patch_embed(clip, spec, params)
    grid = (spec.grid, spec.grid)
    after = {a: j for j, (a, _) in enumerate(spec.stride_schedule)}
    for i in range(spec.num_layers):
        x = spatial_attention_block(x, params, i)
        if spec.temporal_conv and x.shape[1] > 1:
            x = depthwise_conv1d(x, params[f"layers.{i}.tconv"], 1, "same", axis=1)
        if i + 1 in after:
            x, grid = downsample(x, params, after[i + 1], grid)
    tokens, cls = _split(x, grid)
    distill = None
    if spec.distill_proj_dim:
        B, t, h, w, d = tokens.shape
        distill = tokens.reshape(B, t * h * w, d) @ params["proj"]
    return StudentOutput(tokens, cls, distill)


# checkpoints

_SPEC_FIELDS = [f.name for f in fields(EncoderSpec)]


def _fmt_schedule(schedule) -> str:
    return ",".join(f"{a}:{'x'.join(map(str, s))}" for a, s in schedule)


def parse_schedule(text: str) -> tuple[tuple[int, Stride], ...]:
    text = text.strip()
    if not text or text == "none":
        return ()
    out = []
    try:
        for item in text.split(","):
            after, stride = item.split(":")
            out.append((int(after), tuple(int(v) for v in stride.lower().split("x"))))
    except ValueError:
        raise ConfigError(f"bad stride schedule {text!r}; expected e.g. 2:2x2x2,4:2x1x1") from None
    return tuple(out)


def spec_to_lines(spec: EncoderSpec) -> list[str]:
    lines = []
    for name in _SPEC_FIELDS:
        v = getattr(spec, name)
        if name == "stride_schedule":
            v = _fmt_schedule(v) or "none"
        elif v is None:
            v = "none"
        elif isinstance(v, bool):
            v = str(v).lower()
        lines.append(f"{name} = {v}")
    return lines


def spec_from_mapping(values: dict[str, str], base: EncoderSpec | None = None) -> EncoderSpec:
    kwargs = {}
    for key, raw in values.items():
        if key not in _SPEC_FIELDS:
            raise ConfigError(f"unknown encoder key {key!r}")
        raw = raw.strip()
        if key == "role":
            kwargs[key] = raw
        elif key == "stride_schedule":
            kwargs[key] = parse_schedule(raw)
        elif key == "distill_proj_dim":
            kwargs[key] = None if raw in ("none", "") else int(raw)
        elif key == "temporal_conv":
            if raw.lower() not in ("true", "false"):
                raise ConfigError(f"temporal_conv must be true or false, got {raw!r}")
            kwargs[key] = raw.lower() == "true"
        else:
            try:
                kwargs[key] = int(raw)
            except ValueError:
                raise ConfigError(f"{key} must be an integer, got {raw!r}") from None
    if base is not None:
        return replace(base, **kwargs)
    return EncoderSpec(**kwargs)


def save_checkpoint(directory: str | os.PathLike, params: ModelParams) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    lines = spec_to_lines(params.spec)
    for name, t in params.tensors.items():
        fname = name + ".ltf"
        ltf.save(d / fname, t.data)
        lines.append(f"param.{name} = {fname}")
    (d / "spec.cfg").write_text("\n".join(lines) + "\n")


def load_checkpoint(directory: str | os.PathLike) -> ModelParams:
    d = Path(directory)
    values, files = {}, {}
    for line in (d / "spec.cfg").read_text().splitlines():
        if not line.strip():
            continue
        key, _, val = line.partition("=")
        key, val = key.strip(), val.strip()
        if key.startswith("param."):
            files[key[len("param."):]] = val
        else:
            values[key] = val
    spec = spec_from_mapping(values)
    expected = param_shapes(spec)
    if set(files) != set(expected):
        raise ConfigError("checkpoint parameter set does not match its spec")
    tensors = {}
    for name, shape in expected.items():
        arr = ltf.load(d / files[name])
        if arr.shape != shape:
            raise ConfigError(f"checkpoint tensor {name} has shape {arr.shape}, expected {shape}")
        tensors[name] = Tensor(arr)
    return ModelParams(spec, tensors)
