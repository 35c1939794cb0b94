"""Command-line surface: data generation, training, synthesis, evaluation, K-sweep.

Every artifact lands under ``--out``::

    <out>/dataset/{single,context}/   corpora (gen-data)
    <out>/train/                      checkpoints + loss logs (train)
    <out>/synth/<id>.mel.arr          synthesized current-sentence mels
    <out>/eval/report.txt             per-sample GPE/FFE + MEAN row
    <out>/ksweep/ksweep_report.txt    per-K summary

Configuration is line-oriented ``key = value`` INI text with sections
``[run] [data] [model] [train]``; command-line flags override config values,
which override preset defaults. Exit codes: 0 success, 2 configuration
error, 3 numeric divergence during training, 4 incompatible checkpoint.
"""

from __future__ import annotations

import argparse
import configparser
import os
import sys
from dataclasses import dataclass

from .arrayio import Corpus, build_dataset, load_corpus, save_array
from .data import ContextConfig, select_context
from .errors import (ConfigError, CtxDubError, DivergenceDetected,
                     IncompatibleCheckpoint)
from .evaluation import evaluate_corpus, write_eval_report
from .frames import derive_frame_ratio
from .model import Ablation, DubbingModel, ModelConfig, synthesize_current
from .synth import ShapeConfig
from .training import (TrainConfig, build_model_from_checkpoint, k_sweep,
                       load_checkpoint, run_training)

PRESETS = {
    "toy": dict(
        sr=16000, hs=320, fps=25,
        vocab=24, d_lip=12, d_face=10, n_mels=20,
        min_phonemes=3, max_phonemes=8,
        min_frames_per_phoneme=1, max_frames_per_phoneme=2,
        count_single=8, count_context=4, val_count=1,
        d_model=32, n_blocks=1, fft_heads=2, aligner_heads=2, ffn_dim=64,
        ffn_kernel=9, dropout=0.1, dab_descriptors=8, postnet_hidden=32,
        postnet_kernel=5, predictor_kernel=3, predictor_dropout=0.5,
        lr=2e-4, beta1=0.9, beta2=0.98, eps=1e-9, batch_size=8,
        steps_stage1=300, steps_stage2=500, save_interval=100, grad_clip=1.0,
        k=50,
    ),
    "paper": dict(
        sr=16000, hs=160, fps=25,
        vocab=72, d_lip=64, d_face=64, n_mels=80,
        min_phonemes=8, max_phonemes=60,
        min_frames_per_phoneme=1, max_frames_per_phoneme=3,
        count_single=64, count_context=16, val_count=4,
        d_model=256, n_blocks=6, fft_heads=2, aligner_heads=8, ffn_dim=1024,
        ffn_kernel=9, dropout=0.1, dab_descriptors=32, postnet_hidden=256,
        postnet_kernel=5, predictor_kernel=3, predictor_dropout=0.5,
        lr=2e-4, beta1=0.9, beta2=0.98, eps=1e-9, batch_size=8,
        steps_stage1=2000, steps_stage2=2000, save_interval=500, grad_clip=1.0,
        k=50,
    ),
}

_SECTION_KEYS = {
    "run": {"seed", "out", "preset", "k", "split", "no_prev", "no_fol", "no_cpp",
            "no_cda_context", "no_cad_context", "no_two_stage", "checkpoint"},
    "data": {"root", "sr", "hs", "fps", "vocab", "d_lip", "d_face", "n_mels",
             "min_phonemes", "max_phonemes", "min_frames_per_phoneme",
             "max_frames_per_phoneme", "count_single", "count_context",
             "val_count"},
    "model": {"d_model", "n_blocks", "fft_heads", "aligner_heads", "ffn_dim",
              "ffn_kernel", "dropout", "dab_descriptors", "postnet_hidden",
              "postnet_kernel", "predictor_kernel", "predictor_dropout"},
    "train": {"lr", "beta1", "beta2", "eps", "batch_size", "steps_stage1",
              "steps_stage2", "save_interval", "grad_clip"},
}

_INT_KEYS = {"seed", "k", "sr", "hs", "fps", "vocab", "d_lip", "d_face", "n_mels",
             "min_phonemes", "max_phonemes", "min_frames_per_phoneme",
             "max_frames_per_phoneme", "count_single", "count_context",
             "val_count", "d_model", "n_blocks", "fft_heads", "aligner_heads",
             "ffn_dim", "ffn_kernel", "dab_descriptors", "postnet_hidden",
             "postnet_kernel", "predictor_kernel", "batch_size",
             "steps_stage1", "steps_stage2", "save_interval"}
_FLOAT_KEYS = {"dropout", "predictor_dropout", "lr", "beta1", "beta2", "eps",
               "grad_clip"}
_BOOL_KEYS = {"no_prev", "no_fol", "no_cpp", "no_cda_context", "no_cad_context",
              "no_two_stage"}


@dataclass
class RunConfig:
    """Fully resolved settings for one command invocation."""

    command: str
    out: str
    seed: int = 0
    preset: str = "toy"
    k: int = 50
    split: str = "train"
    checkpoint: str | None = None
    ids: list[int] | None = None
    k_list: list[int] | None = None
    no_prev: bool = False
    no_fol: bool = False
    no_cpp: bool = False
    no_cda_context: bool = False
    no_cad_context: bool = False
    no_two_stage: bool = False
    values: dict = None  # type: ignore[assignment]

    def context_cfg(self) -> ContextConfig:
        return ContextConfig(k=self.k, use_prev=not self.no_prev,
                             use_fol=not self.no_fol)

    def ablation(self) -> Ablation:
        return Ablation(no_cda_context=self.no_cda_context, no_cpp=self.no_cpp,
                        no_cad_context=self.no_cad_context)

    def data_root(self) -> str:
        return self.values.get("root") or os.path.join(self.out, "dataset")


def _parse_config_file(path: str) -> dict[str, dict[str, str]]:
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    parser = configparser.ConfigParser()
    try:
        parser.read(path)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config file {path}: {exc}") from exc
    result: dict[str, dict[str, str]] = {}
    for section in parser.sections():
        if section not in _SECTION_KEYS:
            raise ConfigError(f"unknown config section [{section}]")
        for key in parser[section]:
            if key not in _SECTION_KEYS[section]:
                raise ConfigError(f"unknown key {key!r} in section [{section}]")
        result[section] = dict(parser[section])
    return result


def _coerce(key: str, raw: str):
    try:
        if key in _INT_KEYS:
            return int(raw)
        if key in _FLOAT_KEYS:
            return float(raw)
        if key in _BOOL_KEYS:
            lowered = raw.strip().lower()
            if lowered in ("1", "true", "yes", "on"):
                return True
            if lowered in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {raw!r}") from exc
    return raw


def resolve_config(args: argparse.Namespace) -> RunConfig:
    """Merge preset defaults, config file values, and CLI flags (flags win)."""
    file_values: dict[str, dict[str, str]] = {}
    if args.config:
        file_values = _parse_config_file(args.config)

    preset = args.preset or file_values.get("run", {}).get("preset") or "toy"
    if preset not in PRESETS:
        raise ConfigError(f"unknown preset {preset!r}")
    values = dict(PRESETS[preset])
    for section, pairs in file_values.items():
        for key, raw in pairs.items():
            values[key] = _coerce(key, raw)

    out = args.out or values.get("out")
    if not out:
        raise ConfigError("--out (or [run] out) is required")

    cfg = RunConfig(command=args.command, out=os.fspath(out), values=values)
    cfg.preset = preset
    cfg.seed = int(values.get("seed", 0))
    cfg.k = int(values.get("k", 50))
    cfg.split = str(values.get("split", "train"))
    cfg.checkpoint = values.get("checkpoint")
    for flag in _BOOL_KEYS:
        setattr(cfg, flag, bool(values.get(flag, False)))

    if args.seed is not None:
        cfg.seed = args.seed
    if getattr(args, "k", None):
        try:
            ks = [int(p) for p in str(args.k).split(",") if p]
        except ValueError as exc:
            raise ConfigError(f"bad --k value: {args.k!r}") from exc
        if not ks:
            raise ConfigError("--k must name at least one value")
        cfg.k = ks[0]
        cfg.k_list = ks
    if cfg.k < 1 or (cfg.k_list and any(k < 1 for k in cfg.k_list)):
        raise ConfigError("K must be >= 1")
    if getattr(args, "split", None):
        cfg.split = args.split
    if getattr(args, "checkpoint", None):
        cfg.checkpoint = args.checkpoint
    if getattr(args, "ids", None):
        cfg.ids = [int(p) for p in args.ids.split(",") if p]
    for flag in _BOOL_KEYS:
        if getattr(args, flag, False):
            setattr(cfg, flag, True)
    return cfg


def _shape_cfg(cfg: RunConfig) -> ShapeConfig:
    v = cfg.values
    return ShapeConfig(
        vocab=v["vocab"], d_lip=v["d_lip"], d_face=v["d_face"], n_mels=v["n_mels"],
        min_phonemes=v["min_phonemes"], max_phonemes=v["max_phonemes"],
        min_frames_per_phoneme=v["min_frames_per_phoneme"],
        max_frames_per_phoneme=v["max_frames_per_phoneme"],
    )


def _model_cfg(cfg: RunConfig, corpus: Corpus) -> ModelConfig:
    v = cfg.values
    sc = corpus.shape_cfg
    return ModelConfig(
        vocab=sc.vocab, d_lip=sc.d_lip, d_face=sc.d_face, n_mels=sc.n_mels,
        n=corpus.frame_cfg.n,
        d_model=v["d_model"], n_blocks=v["n_blocks"], fft_heads=v["fft_heads"],
        aligner_heads=v["aligner_heads"], ffn_dim=v["ffn_dim"],
        ffn_kernel=v["ffn_kernel"], dropout=v["dropout"],
        dab_descriptors=v["dab_descriptors"], postnet_hidden=v["postnet_hidden"],
        postnet_kernel=v["postnet_kernel"], predictor_kernel=v["predictor_kernel"],
        predictor_dropout=v["predictor_dropout"],
    )


def _train_cfg(cfg: RunConfig) -> TrainConfig:
    v = cfg.values
    return TrainConfig(
        lr=v["lr"], beta1=v["beta1"], beta2=v["beta2"], eps=v["eps"],
        batch_size=v["batch_size"], steps_stage1=v["steps_stage1"],
        steps_stage2=v["steps_stage2"], seed=cfg.seed, k=cfg.k,
        use_prev=not cfg.no_prev, use_fol=not cfg.no_fol,
        no_two_stage=cfg.no_two_stage, ablation=cfg.ablation(),
        grad_clip=v["grad_clip"], save_interval=v["save_interval"],
    )


def _load_corpora(cfg: RunConfig) -> tuple[Corpus, Corpus]:
    root = cfg.data_root()
    single_dir = os.path.join(root, "single")
    context_dir = os.path.join(root, "context")
    for d in (single_dir, context_dir):
        if not os.path.exists(os.path.join(d, "manifest.txt")):
            raise ConfigError(f"no corpus at {d}; run gen-data first")
    return load_corpus(single_dir), load_corpus(context_dir)


def _checked_model(cfg: RunConfig, corpus: Corpus) -> DubbingModel:
    if not cfg.checkpoint:
        raise ConfigError("--checkpoint is required")
    ckpt = load_checkpoint(cfg.checkpoint)
    mc = ckpt.model_config
    sc = corpus.shape_cfg
    expected = (sc.vocab, sc.d_lip, sc.d_face, sc.n_mels, corpus.frame_cfg.n)
    actual = (mc.vocab, mc.d_lip, mc.d_face, mc.n_mels, mc.n)
    if expected != actual:
        raise IncompatibleCheckpoint(
            f"checkpoint dims {actual} do not match corpus dims {expected}"
        )
    return build_model_from_checkpoint(ckpt)


def cmd_gen_data(cfg: RunConfig) -> int:
    v = cfg.values
    frame_cfg = derive_frame_ratio(v["sr"], v["hs"], v["fps"])
    build_dataset(cfg.data_root(), cfg.seed, v["count_single"], v["count_context"],
                  frame_cfg, _shape_cfg(cfg), val_count=v["val_count"])
    print(f"dataset written to {cfg.data_root()}")
    return 0


def cmd_train(cfg: RunConfig) -> int:
    single, context = _load_corpora(cfg)
    model_cfg = _model_cfg(cfg, context)
    result = run_training(single, context, model_cfg, _train_cfg(cfg),
                          os.path.join(cfg.out, "train"),
                          resume_path=cfg.checkpoint)
    print(f"final checkpoint: {result.checkpoint_path} "
          f"(step {result.final_step}, l_sum {result.final_loss:.6f})")
    return 0


def cmd_synthesize(cfg: RunConfig) -> int:
    _, context = _load_corpora(cfg)
    model = _checked_model(cfg, context)
    out_dir = os.path.join(cfg.out, "synth")
    os.makedirs(out_dir, exist_ok=True)
    indices = cfg.ids if cfg.ids is not None else context.split_indices(cfg.split)
    ctx_cfg = cfg.context_cfg()
    for index in indices:
        if not (0 <= index < len(context.samples)):
            raise ConfigError(f"sample id {index} out of range")
        sel = select_context(context.samples[index], ctx_cfg)
        mel = synthesize_current(model, sel, context.stats, cfg.ablation())
        save_array(os.path.join(out_dir, f"{index:06d}.mel.arr"), mel)
    print(f"wrote {len(indices)} mel files to {out_dir}")
    return 0


def cmd_evaluate(cfg: RunConfig) -> int:
    _, context = _load_corpora(cfg)
    model = None if cfg.checkpoint == "gt" else _checked_model(cfg, context)
    report = evaluate_corpus(model, context, cfg.context_cfg(), split=cfg.split,
                             ablation=cfg.ablation())
    out_dir = os.path.join(cfg.out, "eval")
    os.makedirs(out_dir, exist_ok=True)
    write_eval_report(os.path.join(out_dir, "report.txt"), report)
    print(f"split={cfg.split} n={report.n} "
          f"gpe_mean={report.mean_gpe:.4f} ffe_mean={report.mean_ffe:.4f}")
    return 0


def cmd_k_sweep(cfg: RunConfig) -> int:
    if not cfg.k_list:
        raise ConfigError("k-sweep needs --k with a comma-separated list")
    single, context = _load_corpora(cfg)
    model_cfg = _model_cfg(cfg, context)
    rows = k_sweep(single, context, model_cfg, _train_cfg(cfg), cfg.k_list,
                   os.path.join(cfg.out, "ksweep"), split=cfg.split)
    for row in rows:
        print(f"k={row['k']} gpe_mean={row['gpe_mean']:.4f} "
              f"ffe_mean={row['ffe_mean']:.4f} n_eval={row['n_eval']}")
    return 0


_COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "synthesize": cmd_synthesize,
    "evaluate": cmd_evaluate,
    "k-sweep": cmd_k_sweep,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ctxdub",
        description="Context-aware dubbing pipeline on synthetic multimodal data",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="INI config file")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", help="output directory for all artifacts")
        p.add_argument("--k", help="context length (k-sweep: comma-separated list)")
        p.add_argument("--preset", choices=sorted(PRESETS), default=None)
        p.add_argument("--no-prev", dest="no_prev", action="store_true")
        p.add_argument("--no-fol", dest="no_fol", action="store_true")
        p.add_argument("--no-cpp", dest="no_cpp", action="store_true")
        p.add_argument("--no-cda-context", dest="no_cda_context", action="store_true")
        p.add_argument("--no-cad-context", dest="no_cad_context", action="store_true")
        p.add_argument("--no-two-stage", dest="no_two_stage", action="store_true")
        p.add_argument("--checkpoint", default=None,
                       help="checkpoint path ('gt' in evaluate scores ground truth)")
        p.add_argument("--split", default=None, choices=("train", "val"))
        p.add_argument("--ids", default=None,
                       help="comma-separated sample indices (synthesize)")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args)
        return _COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DivergenceDetected as exc:
        print(f"training diverged: {exc} "
              f"(last good checkpoint: {exc.checkpoint_path})", file=sys.stderr)
        return 3
    except IncompatibleCheckpoint as exc:
        print(f"incompatible checkpoint: {exc}", file=sys.stderr)
        return 4
    except CtxDubError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
