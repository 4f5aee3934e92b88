"""The nine acceptance criteria, each at its stated tolerance.

Every test records one PASS/FAIL line; the lines are printed in the pytest
terminal summary (see conftest.py) and also when this file is run directly.
"""
import time

import numpy as np
import pytest

from litetok import costmodel
from litetok.cli import main as cli_main
from litetok.compression import (
    METHODS, FeatureMap, compress, partition_blocks, pool_compress, wap_compress, wap_weights,
)
from litetok.data import SyntheticVideoSpec, generate_videos
from litetok.distill import Corpus, TrainConfig, clipped_mse, ctd_loss, smoothed, train
from litetok.encoder import (
    EncoderSpec, desk_student, desk_teacher, init_params, init_student_from_teacher,
    spatial_only_student, student_forward, teacher_forward,
)
from litetok.numerics import Tensor, finite_difference_check, ltf, precision

from test_compression import direct_wap

RESULTS: dict[int, str] = {}


def report(n: int, title: str, ok: bool, detail: str) -> None:
    line = f"{'PASS' if ok else 'FAIL'} criterion {n}: {title} ({detail})"
    RESULTS[n] = line
    print(line)
    assert ok, line


# 1

def test_criterion_1_wap_oracle():
    rng = np.random.default_rng(2024)
    blocks = [(1, 1, 1), (2, 2, 2), (4, 2, 2), (2, 1, 1), (1, 2, 2), (8, 4, 4)]
    start = time.perf_counter()
    worst = worst_sum = 0.0
    for i in range(100):
        b = blocks[i % len(blocks)]
        shape = tuple(b[k] * int(rng.integers(1, 8 // b[k] + 1)) for k in range(3))
        C = int(rng.integers(1, 33))
        fm = FeatureMap(rng.normal(size=shape + (C,)).astype(np.float32),
                        rng.normal(size=(shape[0], C)).astype(np.float32))
        target = tuple(s // k for s, k in zip(shape, b))
        part = partition_blocks(shape, target)
        got = wap_compress(fm, part).tokens
        worst = max(worst, float(np.max(np.abs(got - direct_wap(fm.tokens, fm.cls, target)))))
        worst_sum = max(worst_sum, float(np.max(np.abs(wap_weights(fm, part).sum(-1) - 1))))
    elapsed = time.perf_counter() - start
    report(1, "WAP equals direct oracle", worst < 1e-6 and worst_sum < 1e-6 and elapsed < 10,
           f"max|diff|={worst:.2e}, max|sum-1|={worst_sum:.2e}, {elapsed:.2f}s")


# 2

def test_criterion_2_baseline_degeneracies():
    rng = np.random.default_rng(7)
    part = partition_blocks((4, 4, 4), (1, 2, 2))
    per_block = rng.normal(size=(1, 2, 2, 16))
    tokens = np.repeat(np.repeat(np.repeat(per_block, 4, 0), 2, 1), 2, 2).astype(np.float32)
    fm = FeatureMap(tokens, rng.normal(size=(4, 16)).astype(np.float32))
    outs = {m: compress(fm, part, m).tokens for m in ("wap", "avg", "max", "sub")}
    const_gap = max(float(np.max(np.abs(outs[m] - outs["wap"]))) for m in outs)

    tokens = rng.normal(size=(4, 4, 4, 16)).astype(np.float32)
    tokens[..., -1] = 0
    cls = np.zeros((4, 16), np.float32)
    cls[:, -1] = rng.normal(size=4) * 10
    fm = FeatureMap(tokens, cls)
    orth_gap = float(np.max(np.abs(wap_compress(fm, part).tokens - pool_compress(fm, part, "avg").tokens)))
    report(2, "baseline degeneracies", const_gap <= 1e-6 and orth_gap <= 1e-6,
           f"block-constant gap={const_gap:.2e}, orthogonal-cls gap={orth_gap:.2e}")


# 3

def test_criterion_3_token_accounting():
    spec = desk_student()
    params = init_params(spec, 1)
    clip = np.random.default_rng(3).random((4, 32, 32, 3)).astype(np.float32)
    out = student_forward(clip, spec, params)
    n_tokens = out.distill.shape[1]

    so = spatial_only_student()
    p2 = init_params(so, 2)
    base = student_forward(clip, so, p2).tokens.data
    independent = True
    for tau in range(4):
        moved = clip.copy()
        moved[tau] = np.random.default_rng(10 + tau).random((32, 32, 3))
        other = student_forward(moved, so, p2).tokens.data
        keep = [k for k in range(4) if k != tau]
        independent &= other[0, keep].tobytes() == base[0, keep].tobytes()
        independent &= not np.array_equal(other[0, tau], base[0, tau])
    report(3, "token accounting", n_tokens == 16 and spec.ratio() == 16 and independent,
           f"4x8x8=256 -> {n_tokens} tokens, spatial-only frame-independent={independent}")


# 4

def test_criterion_4_gradient_integrity():
    start = time.perf_counter()
    with precision(np.float64):
        t_spec = EncoderSpec("teacher", 2, 8, 2, patch=4, input_px=16)
        s_spec = EncoderSpec("student", 2, 8, 2, patch=4, input_px=16,
                             stride_schedule=((1, (2, 2, 2)),), distill_proj_dim=8)
        teacher = init_params(t_spec, 4)
        student = init_params(s_spec, 5)
        rng = np.random.default_rng(6)
        for name in student.names():
            if "tconv" in name or "down" in name:
                student[name].data[...] = rng.normal(0.3, 0.3, size=student[name].shape)
        clip = rng.random((4, 16, 16, 3))
        fm = teacher_forward(clip, t_spec, teacher)
        part = partition_blocks((4, 4, 4), s_spec.output_grid(4))
        params = list(student)
        total = sum(p.size for p in params)
        n = min(300, total)

        def f():
            return ctd_loss(student_forward(clip, s_spec, student).distill, [fm], part)

        err = finite_difference_check(f, params, h=1e-3, max_coords=n, seed=0)
    elapsed = time.perf_counter() - start
    report(4, "gradient integrity", err < 1e-3 and n >= 200 and elapsed < 60,
           f"max rel err={err:.2e} over {n} coords, {elapsed:.1f}s")


# 5

@pytest.fixture(scope="module")
def desk_runs():
    corpus = Corpus(generate_videos(SyntheticVideoSpec()), 4.0)
    runs = {}
    for objective in ("ctd", "rtd"):
        teacher = init_params(desk_teacher(), 0)
        frozen = {k: v.data.tobytes() for k, v in teacher.tensors.items()}
        student = init_student_from_teacher(teacher, desk_student())
        start = time.perf_counter()
        log = train(student, teacher, corpus, TrainConfig(objective=objective, seed=0))
        unchanged = all(teacher[k].data.tobytes() == v for k, v in frozen.items())
        runs[objective] = (log, unchanged, time.perf_counter() - start)
    return runs


def test_criterion_5_distillation_regression(desk_runs):
    ctd_log, ctd_frozen, t_ctd = desk_runs["ctd"]
    rtd_log, rtd_frozen, t_rtd = desk_runs["rtd"]
    first, last = smoothed(ctd_log.losses())
    r_first, r_last = smoothed(rtd_log.losses())
    max_clip = max(r.clipped_norm for r in ctd_log.records + rtd_log.records)
    ok = (len(ctd_log.records) == 300 and last < 0.5 * first and ctd_frozen and rtd_frozen
          and max_clip <= 1.0 + 1e-6 and r_last < r_first and t_ctd + t_rtd < 600)
    report(5, "distillation regression", ok,
           f"CTD {first:.4f}->{last:.4f} ratio {last / first:.3f}; RTD {r_first:.4f}->{r_last:.4f}; "
           f"max clipped norm {max_clip:.4f}; teacher frozen={ctd_frozen and rtd_frozen}; "
           f"{t_ctd + t_rtd:.0f}s")


# 6

def test_criterion_6_clipping_property():
    rng = np.random.default_rng(66)
    violations = 0
    for _ in range(1000):
        shape = (int(rng.integers(2, 17)), int(rng.integers(1, 33)))
        pred = rng.normal(size=shape).astype(np.float32)
        target = rng.normal(size=shape).astype(np.float32)
        for _ in range(int(rng.integers(1, 4))):
            idx = tuple(int(rng.integers(s)) for s in shape)
            pred[idx] += rng.choice([-1, 1]) * rng.uniform(10, 1000)
        clipped = clipped_mse(Tensor(pred), target, 3.0).item()
        plain = float(np.mean((pred.astype(np.float64) - target) ** 2))
        violations += clipped > plain * (1 + 1e-6)
    report(6, "clipped loss <= unclipped", violations == 0, f"{violations}/1000 violations")


# 7

def test_criterion_7_cost_model():
    t, _ = costmodel.vit_flops(costmodel.full_teacher(), 256)
    b, _ = costmodel.vit_flops(costmodel.full_base(), 256)
    ratio, target = t / b, 158.80 / 44.81
    ok_a = abs(ratio - target) / target <= 0.15
    dw = costmodel.vit_flops(costmodel.full_student("dw_temp_conv"), 256)[0]
    tc = costmodel.vit_flops(costmodel.full_student("temp_conv"), 256)[0]
    ok_b = dw < tc < b
    llm, crossing, internal_below = costmodel.full_llm(), None, True
    for frames in (8, 16, 32, 64, 128, 256, 512):
        post = costmodel.bottleneck_report(costmodel.full_teacher(), llm, "posthoc(16)", frames, 256)
        inner = costmodel.bottleneck_report(costmodel.full_teacher(), llm, "internal(16)", frames, 256)
        if crossing is None and post.flops_vision > post.flops_llm_prefill:
            crossing = frames
        internal_below &= inner.flops_vision < post.flops_vision
    ok_c = crossing is not None and internal_below
    report(7, "cost-model fidelity", ok_a and ok_b and ok_c,
           f"(a) ratio {ratio:.2f} vs {target:.2f}; (b) DW {dw / 1e12:.1f}T < TempConv {tc / 1e12:.1f}T "
           f"< frame-wise {b / 1e12:.1f}T; (c) crossing at {crossing} frames, internal below={internal_below}")


# 8

def test_criterion_8_wallclock_ordering():
    rng = np.random.default_rng(8)
    clip = rng.random((64, 32, 32, 3)).astype(np.float32)
    t_spec, s_spec = desk_teacher(), desk_student()
    teacher, student = init_params(t_spec, 0), init_params(s_spec, 0)
    s_med, _ = costmodel.wallclock_profile(lambda: student_forward(clip, s_spec, student), 40, 100)
    t_med, _ = costmodel.wallclock_profile(lambda: teacher_forward(clip, t_spec, teacher), 40, 100)
    report(8, "wall-clock ordering at T=64", s_med < t_med,
           f"student median {s_med:.2f} ms vs teacher {t_med:.2f} ms")


# 9

def test_criterion_9_determinism(tmp_path, capsys):
    spec = SyntheticVideoSpec(num_videos=4, seed=9)
    corpora = all(a.tobytes() == b.tobytes() for a, b in zip(generate_videos(spec), generate_videos(spec)))

    logs = []
    for _ in range(2):
        teacher = init_params(desk_teacher(), 1)
        student = init_student_from_teacher(teacher, desk_student())
        cfg = TrainConfig(total_steps=4, warmup_steps=1, batch_size=2, seed=3)
        logs.append([(r.loss, r.lr, r.grad_norm) for r in
                     train(student, teacher, Corpus(generate_videos(spec), 4.0), cfg).records])
    training = logs[0] == logs[1]

    rng = np.random.default_rng(99)
    fm = FeatureMap(rng.normal(size=(4, 4, 4, 8)).astype(np.float32), rng.normal(size=(4, 8)).astype(np.float32))
    part = partition_blocks((4, 4, 4), (1, 2, 2))
    compression = all(compress(fm, part, m).tokens.tobytes() == compress(fm, part, m).tokens.tobytes()
                      for m in METHODS)

    arrays = [np.array([0.0, -0.0, np.inf, -np.inf, 1e-45, 3.4e38], np.float32),
              rng.normal(size=(2, 3, 4)).astype(np.float32), np.zeros((0, 5), np.float32)]
    roundtrip = all(ltf.decode(ltf.encode(a)).tobytes() == a.tobytes()
                    and ltf.decode(ltf.encode(a)).shape == a.shape for a in arrays)

    ltf.save(tmp_path / "tok.ltf", fm.tokens)
    ltf.save(tmp_path / "cls.ltf", fm.cls)
    cli_same = True
    for m in METHODS:
        out = tmp_path / f"{m}.ltf"
        code = cli_main(["compress", "--method", m, "--target", "1,2,2",
                         str(tmp_path / "tok.ltf"), str(tmp_path / "cls.ltf"), str(out)])
        cli_same &= code == 0 and ltf.load(out).tobytes() == compress(fm, part, m).tokens.tobytes()
    capsys.readouterr()
    ok = corpora and training and compression and roundtrip and cli_same
    report(9, "determinism and round-trips", ok,
           f"corpora={corpora}, training logs={training}, compression={compression}, "
           f"LTF1={roundtrip}, CLI==library={cli_same}")


if __name__ == "__main__":
    import sys
    sys.exit(pytest.main([__file__, "-q"]))
