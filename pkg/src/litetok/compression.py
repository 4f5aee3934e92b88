"""Post-hoc token reduction on dense spatio-temporal feature maps.

All primitives are pure numpy functions. Feature maps are ``T x H x W x C``
patch tokens plus a ``T x C`` array holding one class token per frame.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from litetok.errors import ContractError, DimensionError, PartitionError, TilingError

METHODS = ("wap", "avg", "max", "sub", "tome")


@dataclass(frozen=True)
class FeatureMap:
    tokens: np.ndarray  # [T, H, W, C]
    cls: np.ndarray  # [T, C]

    def __post_init__(self):
        if self.tokens.ndim != 4 or min(self.tokens.shape) < 1:
            raise DimensionError(f"tokens must be T x H x W x C, got {self.tokens.shape}")
        T, _, _, C = self.tokens.shape
        if self.cls.shape != (T, C):
            raise DimensionError(f"cls must be {(T, C)}, got {self.cls.shape}")

    @property
    def grid(self) -> tuple[int, int, int]:
        return self.tokens.shape[:3]

    @property
    def channels(self) -> int:
        return self.tokens.shape[3]


@dataclass(frozen=True)
class BlockPartition:
    source: tuple[int, int, int]
    target: tuple[int, int, int]

    @property
    def block(self) -> tuple[int, int, int]:
        return tuple(S // s for S, s in zip(self.source, self.target))

    @property
    def ratio(self) -> int:
        return math.prod(self.block)

    def block_coords(self, u: int, v: int, s: int) -> list[tuple[int, int, int]]:
        bt, bh, bw = self.block
        return [(u * bt + a, v * bh + b, s * bw + c)
                for a, b, c in itertools.product(range(bt), range(bh), range(bw))]

    def block_of(self, tau: int, i: int, j: int) -> tuple[int, int, int]:
        bt, bh, bw = self.block
        return tau // bt, i // bh, j // bw

    def source_index(self) -> np.ndarray:
        """``[t*h*w, r]`` table of flat source indices (row-major over T,H,W),
        one row per block in (u, v, s) order, offsets in (dt, di, dj) order."""
        T, H, W = self.source
        ids = np.arange(T * H * W).reshape(T, H, W)
        return _blocked(ids[..., None], self).reshape(-1, self.ratio)


@dataclass(frozen=True)
class CompressedMap:
    tokens: np.ndarray
    method: str
    partition: BlockPartition | None

    def provenance(self, source_channels: int) -> str:
        part = self.partition
        T, H, W = part.source
        t, h, w = part.target
        return f"method={self.method} source={T}x{H}x{W}x{source_channels} target={t}x{h}x{w} r={part.ratio}"


def partition_blocks(source, target) -> BlockPartition:
    source, target = tuple(int(v) for v in source), tuple(int(v) for v in target)
    if len(source) != 3 or len(target) != 3:
        raise PartitionError("partition extents must be (T, H, W) and (t, h, w)")
    for S, s in zip(source, target):
        if S < 1 or s < 1 or S % s:
            raise PartitionError(f"target {target} does not divide source {source}")
    return BlockPartition(source, target)


def _blocked(x: np.ndarray, part: BlockPartition) -> np.ndarray:
    """``[T,H,W,...]`` -> ``[t,h,w,r,...]`` with block members in row-major order."""
    t, h, w = part.target
    bt, bh, bw = part.block
    rest = x.shape[3:]
    y = x.reshape((t, bt, h, bh, w, bw) + rest)
    nrest = len(rest)
    y = y.transpose((0, 2, 4, 1, 3, 5) + tuple(range(6, 6 + nrest)))
    return y.reshape((t, h, w, bt * bh * bw) + rest)


def _check(fm: FeatureMap, part: BlockPartition) -> None:
    if fm.grid != part.source:
        raise DimensionError(f"feature map grid {fm.grid} != partition source {part.source}")


def wap_weights(fm: FeatureMap, part: BlockPartition) -> np.ndarray:
    """Softmax weights ``[t, h, w, r]`` of every token within its block."""
    _check(fm, part)
    x = fm.tokens.astype(np.float64)
    logits = np.einsum("thwc,tc->thw", x, fm.cls.astype(np.float64)) / math.sqrt(fm.channels)
    z = _blocked(logits, part)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def wap_compress(fm: FeatureMap, part: BlockPartition) -> CompressedMap:
    """Weighted average pooling: per block, a softmax over the class-token
    affinity of each member (using the class token of the member's own frame)
    weights a convex combination of the members."""
    w = wap_weights(fm, part)
    xb = _blocked(fm.tokens.astype(np.float64), part)
    y = np.einsum("thwr,thwrc->thwc", w, xb)
    return CompressedMap(y.astype(fm.tokens.dtype), "wap", part)


def pool_compress(fm: FeatureMap, part: BlockPartition, mode: str) -> CompressedMap:
    _check(fm, part)
    xb = _blocked(fm.tokens, part)
    if mode in ("average", "avg"):
        y = xb.astype(np.float64).mean(axis=3).astype(fm.tokens.dtype)
        tag = "avg"
    elif mode == "max":
        y = xb.max(axis=3)
        tag = "max"
    elif mode in ("subsample", "sub"):
        y = xb[:, :, :, 0].copy()
        tag = "sub"
    else:
        raise ValueError(f"unknown pooling mode {mode!r}")
    return CompressedMap(y, tag, part)


def _unit(x: np.ndarray) -> np.ndarray:
    norm = np.linalg.norm(x, axis=-1, keepdims=True)
    return x / np.where(norm == 0, 1.0, norm)


def tome_merge(tokens: np.ndarray, target_count: int) -> np.ndarray:
    """Bipartite soft matching on raw-feature cosine similarity.

    Each round splits the current tokens into even (A) and odd (B) positions,
    matches every A token to its most similar B token and merges the most
    similar pairs into their B partner by arithmetic mean. Rounds repeat until
    ``target_count`` tokens remain. Survivors keep their relative order.
    """
    x = np.asarray(tokens, dtype=np.float64)
    if x.ndim != 2:
        raise DimensionError("tome_merge expects an N x C token matrix")
    n = x.shape[0]
    if not 1 <= target_count <= n:
        raise ContractError(f"target_count must lie in [1, {n}], got {target_count}")
    while x.shape[0] > target_count:
        a, b = x[0::2], x[1::2]
        r = min(a.shape[0], x.shape[0] - target_count)
        scores = _unit(a) @ _unit(b).T
        best = scores.argmax(axis=1)
        node_max = scores[np.arange(a.shape[0]), best]
        # stable sort so ties resolve by A index
        merged_a = np.argsort(-node_max, kind="stable")[:r]
        total = b.copy()
        count = np.ones(b.shape[0])
        for ai in merged_a:
            total[best[ai]] += a[ai]
            count[best[ai]] += 1
        x = x.copy()
        x[1::2] = total / count[:, None]
        keep = np.ones(x.shape[0], dtype=bool)
        keep[2 * merged_a] = False
        x = x[keep]
    return x.astype(np.asarray(tokens).dtype)


def compress(fm: FeatureMap, part: BlockPartition, method: str) -> CompressedMap:
    """Dispatch by method tag (``wap``, ``avg``, ``max``, ``sub``, ``tome``)."""
    if method == "wap":
        return wap_compress(fm, part)
    if method in ("avg", "max", "sub"):
        return pool_compress(fm, part, method)
    if method == "tome":
        _check(fm, part)
        flat = fm.tokens.reshape(-1, fm.channels)
        n_out = math.prod(part.target)
        return CompressedMap(tome_merge(flat, n_out), "tome", part)
    raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")


def tile_frames(frames: np.ndarray, base: int) -> list[np.ndarray]:
    """Split ``T x Hpx x Wpx x 3`` frames into ``base``-pixel square tile clips,
    row-major over the tile grid."""
    if frames.ndim != 4:
        raise DimensionError("frames must be T x Hpx x Wpx x 3")
    _, hp, wp, _ = frames.shape
    if base < 1 or hp % base or wp % base:
        raise TilingError(f"base {base} does not divide resolution {hp}x{wp}")
    return [frames[:, i * base:(i + 1) * base, j * base:(j + 1) * base].copy()
            for i in range(hp // base) for j in range(wp // base)]


def untile_frames(tiles: list[np.ndarray], rows: int, cols: int) -> np.ndarray:
    if len(tiles) != rows * cols:
        raise TilingError(f"expected {rows * cols} tiles, got {len(tiles)}")
    return np.concatenate([np.concatenate(tiles[r * cols:(r + 1) * cols], axis=2)
                           for r in range(rows)], axis=1)
