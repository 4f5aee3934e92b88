"""Post-hoc reduction of desk teacher features at 16x, compared by how well the
compressed tokens, unpooled back to the dense grid, reconstruct the teacher map.

This is a desk proxy only; it says nothing about downstream accuracy.
"""
import numpy as np

from litetok.compression import METHODS, compress, partition_blocks
from litetok.data import SyntheticVideoSpec, generate_videos
from litetok.distill import unpool_indices
from litetok.encoder import desk_teacher, init_params, teacher_forward


def main():
    spec = desk_teacher()
    teacher = init_params(spec, 0)
    videos = generate_videos(SyntheticVideoSpec(num_videos=8))
    part = partition_blocks((4, 8, 8), (1, 4, 4))
    block, _ = unpool_indices(part)
    errors = {m: [] for m in METHODS if m != "tome"}
    for video in videos:
        fm = teacher_forward(video[:4], spec, teacher)
        dense = fm.tokens.reshape(-1, fm.channels)
        for m in errors:
            pooled = compress(fm, part, m).tokens.reshape(-1, fm.channels)
            errors[m].append(float(np.mean((pooled[block] - dense) ** 2)))
    for m, e in errors.items():
        print(f"{m:>4}: unpooled reconstruction MSE {np.mean(e):.4f}")


if __name__ == "__main__":
    main()
