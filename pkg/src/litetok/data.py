"""Seeded synthetic video corpora with controllable temporal redundancy."""
from __future__ import annotations

import math
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from litetok.distill import Corpus
from litetok.errors import ConfigError
from litetok.numerics import ltf

MOTIFS = ("moving_square", "translating_gradient", "blinking_noise")


@dataclass(frozen=True)
class SyntheticVideoSpec:
    num_videos: int = 16
    frames: int = 32
    px: int = 32
    motif: str = "moving_square"
    motion_px_per_frame: float = 2.0
    seed: int = 0
    native_fps: float = 4.0

    def __post_init__(self):
        if min(self.num_videos, self.frames, self.px) < 1 or self.native_fps <= 0:
            raise ConfigError("synthetic video extents must be positive")
        if self.motion_px_per_frame < 0:
            raise ConfigError("motion must be non-negative")
        if self.motif not in MOTIFS:
            raise ConfigError(f"motif must be one of {MOTIFS}, got {self.motif!r}")


def _background(rng: np.random.Generator, px: int) -> np.ndarray:
    yy, xx = np.mgrid[0:px, 0:px] / px
    base = rng.uniform(0.2, 0.4, size=3)
    slope = rng.uniform(-0.4, 0.4, size=(2, 3))
    texture = rng.uniform(0.0, 0.25, size=(px, px, 1))
    return base + yy[..., None] * slope[0] + xx[..., None] * slope[1] + texture


def _moving_square(rng, spec: SyntheticVideoSpec) -> np.ndarray:
    px, side = spec.px, max(1, spec.px // 6)
    bg = _background(rng, px)
    color = rng.uniform(0.6, 1.0, size=3)
    start = rng.uniform(0, px, size=2)
    angle = rng.integers(8) * math.pi / 4
    step = spec.motion_px_per_frame * np.array([math.sin(angle), math.cos(angle)])
    yy, xx = np.mgrid[0:px, 0:px]
    out = np.empty((spec.frames, px, px, 3))
    for f in range(spec.frames):
        y, x = np.rint(start + f * step).astype(int) % px
        mask = ((yy - y) % px < side) & ((xx - x) % px < side)
        frame = bg.copy()
        frame[mask] = color
        out[f] = frame
    return out


def _translating_gradient(rng, spec: SyntheticVideoSpec) -> np.ndarray:
    px = spec.px
    period = rng.uniform(px / 2, 2 * px)
    phase = rng.uniform(0, 2 * math.pi, size=3)
    tilt = rng.uniform(-0.5, 0.5)
    yy, xx = np.mgrid[0:px, 0:px]
    out = np.empty((spec.frames, px, px, 3))
    for f in range(spec.frames):
        pos = (xx + tilt * yy - spec.motion_px_per_frame * f)[..., None]
        out[f] = 0.5 + 0.4 * np.sin(2 * math.pi * pos / period + phase)
    return out


def _blinking_noise(rng, spec: SyntheticVideoSpec) -> np.ndarray:
    # motion is read as blink frequency in toggles per frame
    noise = rng.uniform(0, 1, size=(spec.px, spec.px, 3))
    bg = _background(rng, spec.px)
    out = np.empty((spec.frames, spec.px, spec.px, 3))
    for f in range(spec.frames):
        on = int(math.floor(f * spec.motion_px_per_frame)) % 2 == 0
        out[f] = bg + (0.4 if on else 0.1) * noise
    return out


_GENERATORS = {
    "moving_square": _moving_square,
    "translating_gradient": _translating_gradient,
    "blinking_noise": _blinking_noise,
}


def generate_videos(spec: SyntheticVideoSpec) -> list[np.ndarray]:
    """One independent child generator per video, split from ``spec.seed``."""
    children = np.random.SeedSequence(spec.seed).spawn(spec.num_videos)
    gen = _GENERATORS[spec.motif]
    return [np.clip(gen(np.random.default_rng(c), spec), 0.0, 1.0).astype(np.float32) for c in children]


def generate_synthetic_video(spec: SyntheticVideoSpec, out_dir: str | os.PathLike) -> Path:
    """Write the corpus as LTF1 files plus ``manifest.txt``; returns the manifest path."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise OSError(f"cannot create corpus directory {out}: {e}") from e
    lines = [f"{k} = {getattr(spec, k)}" for k in spec.__dataclass_fields__]
    for i, video in enumerate(generate_videos(spec)):
        name = f"video_{i:04d}.ltf"
        ltf.save(out / name, video)
        lines.append(f"file = {name} {'x'.join(map(str, video.shape))}")
    manifest = out / "manifest.txt"
    manifest.write_text("\n".join(lines) + "\n")
    return manifest


def load_corpus(directory: str | os.PathLike) -> Corpus:
    d = Path(directory)
    files, fps = [], 4.0
    for line in (d / "manifest.txt").read_text().splitlines():
        key, _, val = line.partition("=")
        key, val = key.strip(), val.strip()
        if key == "file":
            files.append(val.split()[0])
        elif key == "native_fps":
            fps = float(val)
    return Corpus([ltf.load(d / f) for f in files], fps)


def adjacent_frame_correlation(video: np.ndarray) -> float:
    """Mean Pearson correlation between consecutive frames."""
    flat = video.reshape(video.shape[0], -1).astype(np.float64)
    vals = [np.corrcoef(flat[f], flat[f + 1])[0, 1] for f in range(len(flat) - 1)]
    return float(np.mean(vals))
