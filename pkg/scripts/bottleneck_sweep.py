"""Full-scale FLOPs sweep over frame counts for the three strategies."""
import argparse

from litetok import costmodel


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--frames", default="8,16,32,64,128,256,512")
    ap.add_argument("--ratio", type=int, default=16)
    args = ap.parse_args()
    vision, llm = costmodel.full_teacher(), costmodel.full_llm()
    print(f"{'frames':>6} {'strategy':>13} {'vision TF':>10} {'llm TF':>10} {'tokens':>7}  dominant")
    for frames in map(int, args.frames.split(",")):
        for strategy in ("none", f"posthoc({args.ratio})", f"internal({args.ratio})"):
            r = costmodel.bottleneck_report(vision, llm, strategy, frames, costmodel.LLM_TOKENS_PER_FRAME)
            print(f"{frames:>6} {strategy:>13} {(r.flops_vision + r.flops_auxiliary) / 1e12:>10.2f} "
                  f"{r.flops_llm_prefill / 1e12:>10.2f} {r.tokens_into_llm:>7}  {r.dominant}")
    print("\nencoder variants at 256 frames:")
    for family in costmodel.FAMILIES[1:]:
        flops, params = costmodel.vit_flops(costmodel.full_student(family), 256)
        print(f"  {family:<17} {flops / 1e12:7.2f} TFLOPs {params / 1e6:8.2f} M params")
    for name, spec in (("teacher", costmodel.full_teacher()), ("base (no comp.)", costmodel.full_base())):
        flops, params = costmodel.vit_flops(spec, 256)
        print(f"  {name:<17} {flops / 1e12:7.2f} TFLOPs {params / 1e6:8.2f} M params")


if __name__ == "__main__":
    main()
