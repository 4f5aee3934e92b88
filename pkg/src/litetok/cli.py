"""``litetok`` command line: gen-data, distill, compress, profile.

Exit codes: 0 success, 2 configuration or input error, 3 numeric abort,
4 non-divisible partition. Diagnostics are a single line on stderr.
"""
from __future__ import annotations

import argparse
import configparser
import csv
import logging
import os
import re
import sys
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from litetok import costmodel
from litetok.compression import METHODS, FeatureMap, compress, partition_blocks
from litetok.data import SyntheticVideoSpec, generate_synthetic_video, generate_videos, load_corpus
from litetok.distill import Corpus, TrainConfig, TrainingAborted, train
from litetok.encoder import (
    EncoderSpec, attention_block, desk_student, desk_teacher, init_params, init_student_from_teacher,
    load_checkpoint, save_checkpoint, spec_from_mapping, spec_to_lines, student_forward,
    teacher_forward,
)
from litetok.errors import ConfigError, LitetokError, NumericError, PartitionError
from litetok.numerics import Tensor, ltf

EXIT_CONFIG, EXIT_NUMERIC, EXIT_PARTITION = 2, 3, 4
SECTIONS = ("data", "teacher", "student", "train", "profile")
SEED_ENV = "LITETOK_SEED"


class CliError(Exception):
    def __init__(self, message: str, code: int = EXIT_CONFIG):
        super().__init__(message)
        self.code = code


# config files

@dataclass
class RawConfig:
    path: Path
    sections: dict[str, dict[str, str]]
    lines: list[str]

    def where(self, section: str, key: str) -> str:
        """``file:line`` of a key, for diagnostics."""
        current = None
        for n, line in enumerate(self.lines, start=1):
            s = line.strip()
            if s.startswith("[") and s.endswith("]"):
                current = s[1:-1].strip()
            elif current == section and s.partition("=")[0].strip() == key:
                return f"{self.path}:{n}"
        return str(self.path)

    def section(self, name: str, allowed) -> dict[str, str]:
        values = self.sections.get(name, {})
        for key in values:
            if key not in allowed:
                raise CliError(f"{self.where(name, key)}: unknown key {key!r} in [{name}]")
        return values


def read_config(path: str | os.PathLike) -> RawConfig:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as e:
        raise CliError(f"cannot read config {p}: {e.strerror or e}") from None
    parser = configparser.ConfigParser(interpolation=None, delimiters=("=",), comment_prefixes=("#", ";"),
                                       inline_comment_prefixes=("#",), strict=True,
                                       empty_lines_in_values=False)
    parser.optionxform = str
    try:
        parser.read_string(text, source=str(p))
    except configparser.MissingSectionHeaderError as e:
        raise CliError(f"{p}:{e.lineno}: key outside a [section]: {e.line.strip()!r}") from None
    except configparser.ParsingError as e:
        lineno = e.errors[0][0]
        line = text.splitlines()[lineno - 1].strip()
        raise CliError(f"{p}:{lineno}: expected 'key = value', got {line!r}") from None
    except (configparser.DuplicateOptionError, configparser.DuplicateSectionError) as e:
        raise CliError(f"{p}:{e.lineno}: {e.message.splitlines()[0] if hasattr(e, 'message') else e}") from None
    except configparser.Error as e:
        raise CliError(f"{p}: {str(e).splitlines()[0]}") from None
    lines = text.splitlines()
    for name in parser.sections():
        if name not in SECTIONS:
            n = next(i for i, l in enumerate(lines, 1) if l.strip() == f"[{name}]")
            raise CliError(f"{p}:{n}: unknown section [{name}]; expected one of {', '.join(SECTIONS)}")
    return RawConfig(p, {s: dict(parser[s]) for s in parser.sections()}, lines)


def _env_seed() -> int | None:
    raw = os.environ.get(SEED_ENV)
    if raw is None or raw == "":
        return None
    try:
        return int(raw)
    except ValueError:
        raise CliError(f"{SEED_ENV} must be an integer, got {raw!r}") from None


def _convert(cfg: RawConfig, section: str, key: str, raw: str, kind):
    try:
        if kind is bool:
            if raw.lower() not in ("true", "false"):
                raise ValueError
            return raw.lower() == "true"
        if kind is tuple:
            return tuple(float(v) for v in raw.split(","))
        return kind(raw)
    except ValueError:
        raise CliError(f"{cfg.where(section, key)}: cannot parse {key} = {raw!r}") from None


def data_spec(cfg: RawConfig) -> tuple[SyntheticVideoSpec, str | None]:
    kinds = {f.name: f.type for f in fields(SyntheticVideoSpec)}
    types = {"int": int, "float": float, "str": str}
    values = cfg.section("data", set(kinds) | {"corpus"})
    kwargs = {k: _convert(cfg, "data", k, v, types[kinds[k]]) for k, v in values.items() if k != "corpus"}
    seed = _env_seed()
    if seed is not None:
        kwargs["seed"] = seed
    try:
        spec = SyntheticVideoSpec(**kwargs)
    except ConfigError as e:
        raise CliError(f"{cfg.path}: [data] {e}") from None
    corpus = values.get("corpus")
    if corpus is not None:
        corpus = str((cfg.path.parent / corpus))
    return spec, corpus


def _encoder(cfg: RawConfig, section: str, base: EncoderSpec) -> tuple[EncoderSpec, dict[str, str]]:
    enc_keys = {f.name for f in fields(EncoderSpec)}
    extra = {"seed", "checkpoint", "init"}
    values = cfg.section(section, enc_keys | extra)
    try:
        spec = spec_from_mapping({k: v for k, v in values.items() if k in enc_keys}, base)
    except (ConfigError, ValueError) as e:
        raise CliError(f"{cfg.path}: [{section}] {e}") from None
    return spec, {k: v for k, v in values.items() if k in extra}


def train_config(cfg: RawConfig) -> tuple[TrainConfig, Path]:
    types = {"int": int, "float": float, "str": str, "tuple[float, float]": tuple}
    kinds = {f.name: types[f.type] for f in fields(TrainConfig)}
    values = cfg.section("train", set(kinds) | {"run_dir"})
    kwargs = {k: _convert(cfg, "train", k, v, kinds[k]) for k, v in values.items() if k != "run_dir"}
    seed = _env_seed()
    if seed is not None:
        kwargs["seed"] = seed
    try:
        tc = TrainConfig(**kwargs)
    except (ConfigError, TypeError) as e:
        raise CliError(f"{cfg.path}: [train] {e}") from None
    return tc, cfg.path.parent / values.get("run_dir", "run")


# commands

def cmd_gen_data(args) -> int:
    cfg = read_config(args.config)
    spec, _ = data_spec(cfg)
    try:
        manifest = generate_synthetic_video(spec, args.out)
    except OSError as e:
        raise CliError(f"cannot write corpus: {e}") from None
    print(manifest)
    return 0


def _models(cfg: RawConfig):
    t_spec, t_extra = _encoder(cfg, "teacher", desk_teacher())
    s_spec, s_extra = _encoder(cfg, "student", desk_student())
    env = _env_seed()
    try:
        if "checkpoint" in t_extra:
            teacher = load_checkpoint(cfg.path.parent / t_extra["checkpoint"])
            if teacher.spec != t_spec:
                raise ConfigError("teacher checkpoint spec differs from [teacher]")
        else:
            seed = env if env is not None else _convert(cfg, "teacher", "seed", t_extra.get("seed", "0"), int)
            teacher = init_params(t_spec, seed)
        init = s_extra.get("init", "teacher")
        if init == "teacher":
            student = init_student_from_teacher(teacher, s_spec)
        elif init == "random":
            seed = env if env is not None else _convert(cfg, "student", "seed", s_extra.get("seed", "0"), int)
            student = init_params(s_spec, seed)
        else:
            raise ConfigError(f"student init must be teacher or random, got {init!r}")
    except (ConfigError, OSError, ValueError) as e:
        raise CliError(f"{cfg.path}: {e}") from None
    return teacher, student


def cmd_distill(args) -> int:
    cfg = read_config(args.config)
    data, corpus_dir = data_spec(cfg)
    tc, run_dir = train_config(cfg)
    teacher, student = _models(cfg)
    cfg.section("profile", set())
    try:
        corpus = load_corpus(corpus_dir) if corpus_dir else Corpus(generate_videos(data), data.native_fps)
    except (OSError, LitetokError) as e:
        raise CliError(f"cannot load corpus {corpus_dir}: {e}") from None
    run_dir.mkdir(parents=True, exist_ok=True)
    resolved = ["[data]"] + [f"{k} = {getattr(data, k)}" for k in data.__dataclass_fields__]
    if corpus_dir:
        resolved.append(f"corpus = {corpus_dir}")
    resolved += ["", "[teacher]"] + spec_to_lines(teacher.spec)
    resolved += ["", "[student]"] + spec_to_lines(student.spec)
    resolved += ["", "[train]"] + tc.to_lines() + [f"run_dir = {run_dir}"]
    (run_dir / "run.cfg").write_text("\n".join(resolved) + "\n")
    ckpt = run_dir / "checkpoints"
    try:
        log = train(student, teacher, corpus, tc, checkpoint_dir=ckpt)
    except TrainingAborted as e:
        e.log.write_csv(run_dir / "log.csv")
        raise CliError(f"training aborted: {e}", EXIT_NUMERIC) from None
    except NumericError as e:
        raise CliError(f"training aborted: {e}", EXIT_NUMERIC) from None
    except LitetokError as e:
        raise CliError(f"{cfg.path}: {e}") from None
    log.write_csv(run_dir / "log.csv")
    save_checkpoint(ckpt / "final", student)
    print(run_dir)
    return 0


def _parse_target(text: str) -> tuple[int, int, int]:
    try:
        t = tuple(int(v) for v in text.split(","))
    except ValueError:
        t = ()
    if len(t) != 3:
        raise CliError(f"--target must be t,h,w, got {text!r}")
    return t


def cmd_compress(args) -> int:
    target = _parse_target(args.target)
    try:
        tokens, cls = ltf.load(args.tokens), ltf.load(args.cls)
        fm = FeatureMap(tokens, cls)
    except (OSError, LitetokError) as e:
        raise CliError(f"cannot read feature map: {e}") from None
    try:
        part = partition_blocks(fm.grid, target)
        out = compress(fm, part, args.method)
    except PartitionError as e:
        raise CliError(str(e), EXIT_PARTITION) from None
    except LitetokError as e:
        raise CliError(str(e)) from None
    try:
        ltf.save(args.out, out.tokens)
        Path(str(args.out) + ".prov").write_text(out.provenance(fm.channels) + "\n")
    except OSError as e:
        raise CliError(f"cannot write {args.out}: {e.strerror or e}") from None
    return 0


@dataclass
class ProfileConfig:
    frames: tuple[int, ...] = (8, 16, 32, 64, 128, 256, 512)
    strategies: tuple[str, ...] = ("none", "posthoc(16)", "internal(16)")
    scale: str = "full"
    tokens_per_frame: int | None = None
    llm_layers: int | None = None
    llm_dim: int | None = None
    llm_mlp_ratio: float | None = None
    llm_query_heads: int | None = None
    llm_kv_heads: int | None = None
    measure: bool = False
    component: str = "stub"
    warmup: int = 40
    iters: int = 100
    out: str | None = None


def profile_config(cfg: RawConfig) -> ProfileConfig:
    values = cfg.section("profile", {f.name for f in fields(ProfileConfig)})
    pc = ProfileConfig()
    for key, raw in values.items():
        if key == "frames":
            val = tuple(_convert(cfg, "profile", key, v.strip(), int) for v in raw.split(","))
        elif key == "strategies":
            val = tuple(s.strip() for s in re.split(r",(?![^()]*\))", raw) if s.strip())
        elif key == "measure":
            val = _convert(cfg, "profile", key, raw, bool)
        elif key in ("scale", "component", "out"):
            val = raw
        elif key == "llm_mlp_ratio":
            val = _convert(cfg, "profile", key, raw, float)
        else:
            val = _convert(cfg, "profile", key, raw, int)
        setattr(pc, key, val)
    if pc.scale not in ("full", "desk"):
        raise CliError(f"{cfg.where('profile', 'scale')}: scale must be full or desk")
    if pc.component not in ("stub", "desk"):
        raise CliError(f"{cfg.where('profile', 'component')}: component must be stub or desk")
    if not pc.frames or min(pc.frames) < 1:
        raise CliError(f"{cfg.where('profile', 'frames')}: frames must be positive")
    try:
        for s in pc.strategies:
            costmodel.parse_strategy(s)
    except ConfigError as e:
        raise CliError(f"{cfg.where('profile', 'strategies')}: {e}") from None
    return pc


def _desk_llm(pc: ProfileConfig) -> costmodel.LLMSpec:
    return costmodel.LLMSpec(pc.llm_layers or 4, pc.llm_dim or 64, pc.llm_mlp_ratio or 4,
                             pc.llm_query_heads or 4, pc.llm_kv_heads or 4)


def _specs(pc: ProfileConfig):
    if pc.scale == "full":
        base = costmodel.full_llm()
        llm = costmodel.LLMSpec(pc.llm_layers or base.layers, pc.llm_dim or base.dim,
                                pc.llm_mlp_ratio or base.mlp_ratio, pc.llm_query_heads or base.query_heads,
                                pc.llm_kv_heads or base.kv_heads)
        return (costmodel.full_teacher(), costmodel.full_student(), llm,
                pc.tokens_per_frame or costmodel.LLM_TOKENS_PER_FRAME)
    teacher, student = desk_teacher(), desk_student()
    return (costmodel.ArchSpec.from_encoder_spec(teacher), costmodel.ArchSpec.from_encoder_spec(student),
            _desk_llm(pc), pc.tokens_per_frame or teacher.grid ** 2)


def _block_for_ratio(r: int, grid: tuple[int, int, int]) -> tuple[int, int, int]:
    """A (bt, bh, bw) block of ``r`` members dividing ``grid``; time first, up to 4."""
    T, H, W = grid
    options = [(bt, bh, r // (bt * bh)) for bt in range(1, r + 1) for bh in range(1, r + 1)
               if r % (bt * bh) == 0]
    options = [b for b in options if T % b[0] == 0 and H % b[1] == 0 and W % b[2] == 0]
    if not options:
        raise CliError(f"no block of {r} tokens divides grid {grid}", EXIT_PARTITION)
    return max(options, key=lambda b: (min(b[0], 4), -abs(b[1] - b[2]), b[1]))


def _attention_stack(layers: int, d: int, m: int, rng) -> dict[str, Tensor]:
    blocks = {}
    for i in range(layers):
        p = f"blocks.{i}."
        blocks[p + "ln1.g"], blocks[p + "ln1.b"] = Tensor(np.ones(d)), Tensor(np.zeros(d))
        blocks[p + "ln2.g"], blocks[p + "ln2.b"] = Tensor(np.ones(d)), Tensor(np.zeros(d))
        for w in "qkvo":
            blocks[p + f"attn.w{w}"] = Tensor(rng.normal(0, d ** -0.5, (d, d)))
            blocks[p + f"attn.b{w}"] = Tensor(np.zeros(d))
        blocks[p + "mlp.w1"], blocks[p + "mlp.b1"] = Tensor(rng.normal(0, d ** -0.5, (d, m))), Tensor(np.zeros(m))
        blocks[p + "mlp.w2"], blocks[p + "mlp.b2"] = Tensor(rng.normal(0, m ** -0.5, (m, d))), Tensor(np.zeros(d))
    return blocks


def desk_components(pc: ProfileConfig, strategy: str, frames: int, n_tokens: int):
    """Runnable vision and LLM-prefill forwards at desk scale for one sweep point."""
    kind, r = costmodel.parse_strategy(strategy)
    rng = np.random.default_rng(0)
    t_spec, s_spec = desk_teacher(), desk_student()
    clip = rng.random((frames, t_spec.input_px, t_spec.input_px, 3)).astype(np.float32)
    if kind == "internal":
        student = init_params(s_spec, 0)

        def vision():
            return student_forward(clip, s_spec, student)
    else:
        teacher = init_params(t_spec, 0)
        grid = (frames, t_spec.grid, t_spec.grid)
        part = None
        if kind == "posthoc" and r > 1:
            block = _block_for_ratio(r, grid)
            part = partition_blocks(grid, tuple(g // b for g, b in zip(grid, block)))

        def vision():
            fm = teacher_forward(clip, t_spec, teacher)
            return compress(fm, part, "wap") if part is not None else fm

    llm = _desk_llm(pc)
    m = int(round(float(llm.mlp_ratio) * llm.dim))
    blocks = _attention_stack(llm.layers, llm.dim, m, rng)
    x0 = Tensor(rng.normal(size=(1, n_tokens, llm.dim)))

    def prefill():
        x = x0
        for i in range(llm.layers):
            x = attention_block(x, blocks, f"blocks.{i}.", llm.query_heads)
        return x

    return vision, prefill


PROFILE_COLUMNS = ["frames", "strategy", "flops_vision", "flops_llm", "flops_total", "tokens_llm"]


def profile_rows(pc: ProfileConfig) -> list[list]:
    vision, student, llm, tpf = _specs(pc)
    rows = []
    for frames in pc.frames:
        for strategy in pc.strategies:
            try:
                rep = costmodel.bottleneck_report(vision, llm, strategy, frames, tpf, student)
            except ConfigError as e:
                raise CliError(f"profile {strategy} at {frames} frames: {e}") from None
            row = [frames, strategy, rep.flops_vision + rep.flops_auxiliary, rep.flops_llm_prefill,
                   rep.flops_total, rep.tokens_into_llm]
            if pc.measure:
                if pc.component == "stub":
                    run_vision = run_llm = _stub
                else:
                    try:
                        run_vision, run_llm = desk_components(pc, strategy, frames, rep.tokens_into_llm)
                    except LitetokError as e:
                        raise CliError(f"desk component at {frames} frames: {e}") from None
                lat_v, _ = costmodel.wallclock_profile(run_vision, pc.warmup, pc.iters)
                lat_l, _ = costmodel.wallclock_profile(run_llm, pc.warmup, pc.iters)
                row += [f"{lat_v:.4f}", f"{lat_v + lat_l:.4f}"]
            rows.append(row)
    return rows


def _stub() -> None:
    return None


def cmd_profile(args) -> int:
    cfg = read_config(args.config)
    pc = profile_config(cfg)
    header = PROFILE_COLUMNS + (["lat_vision_ms", "lat_total_ms"] if pc.measure else [])
    rows = profile_rows(pc)
    if pc.out:
        target = cfg.path.parent / pc.out
        try:
            fh = open(target, "w", newline="")
        except OSError as e:
            raise CliError(f"cannot write {target}: {e.strerror or e}") from None
    else:
        fh = sys.stdout
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    finally:
        if fh is not sys.stdout:
            fh.close()
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="litetok", description="Compressive video token toolkit.")
    ap.add_argument("-v", "--verbose", action="store_true", help="log training progress")
    sub = ap.add_subparsers(dest="command", required=True)
    g = sub.add_parser("gen-data", help="write a synthetic video corpus")
    g.add_argument("config")
    g.add_argument("out")
    g.set_defaults(func=cmd_gen_data)
    d = sub.add_parser("distill", help="distil the teacher into the compressive student")
    d.add_argument("config")
    d.set_defaults(func=cmd_distill)
    c = sub.add_parser("compress", help="compress a stored feature map")
    c.add_argument("--method", required=True, choices=METHODS)
    c.add_argument("--target", required=True, help="t,h,w")
    c.add_argument("tokens")
    c.add_argument("cls")
    c.add_argument("out")
    c.set_defaults(func=cmd_compress)
    p = sub.add_parser("profile", help="analytic cost sweep as CSV")
    p.add_argument("config")
    p.set_defaults(func=cmd_profile)
    return ap


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except CliError as e:
        print(f"litetok: {e}", file=sys.stderr)
        return e.code


if __name__ == "__main__":
    sys.exit(main())
