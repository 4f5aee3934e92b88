"""Desk CTD and RTD runs on the default synthetic corpus; writes loss curves as CSV."""
import argparse
import logging
from pathlib import Path

from litetok.data import SyntheticVideoSpec, generate_videos
from litetok.distill import Corpus, TrainConfig, smoothed, train
from litetok.encoder import desk_student, desk_teacher, init_params, init_student_from_teacher


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="runs/desk")
    ap.add_argument("--steps", type=int, default=300)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--objectives", default="ctd,rtd")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    corpus = Corpus(generate_videos(SyntheticVideoSpec(seed=args.seed)), 4.0)
    for objective in args.objectives.split(","):
        teacher = init_params(desk_teacher(), args.seed)
        student = init_student_from_teacher(teacher, desk_student())
        cfg = TrainConfig(objective=objective, total_steps=args.steps, warmup_steps=min(50, args.steps),
                          seed=args.seed)
        log = train(student, teacher, corpus, cfg)
        log.write_csv(out / f"{objective}_log.csv")
        first, last = smoothed(log.losses())
        print(f"{objective}: smoothed loss {first:.4f} -> {last:.4f} (ratio {last / first:.3f})")


if __name__ == "__main__":
    main()
