"""Training: loss loop, Adam schedule, two-stage strategy, checkpoints, K-sweep.

Stage 1 trains the full model on single-sentence samples (contexts absent,
masked context mel all fill). Stage 2 initializes from the stage-1 checkpoint
(strict parameter-name match) and continues on context samples. Runs are
deterministic given the seed on one platform: model init, dropout, and data
order all derive from it, and the checkpoint stores the RNG state so resumed
runs continue the same trajectory.

Checkpoint container (single file)::

    line 1: b"CTXDUB-CKPT 1\\n"      magic + format version
    line 2: JSON header: format_version, stage, step, config_digest,
            model_config, norm_stats scalars, ordered array index
            (name, dtype, shape)
    rest:   raw little-endian array payloads, concatenated in index order

Array names: ``model.<param>``, ``optim.<param>.{step,exp_avg,exp_avg_sq}``,
``stats.mel_mean``, ``stats.mel_std``, ``rng.torch``.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import asdict, dataclass, field, replace

import numpy as np
import torch

from .arrayio import Corpus
from .data import ContextConfig, NormStats, select_context
from .errors import (ConfigError, DivergenceDetected, IncompatibleCheckpoint,
                     InvariantViolation)
from .evaluation import evaluate_corpus, write_report
from .losses import LossBreakdown, compute_losses
from .model import Ablation, DubbingModel, ModelConfig, ModelInputs, prepare_inputs

_CKPT_MAGIC = b"CTXDUB-CKPT 1\n"
_CKPT_DTYPES = {"float64": "<f8", "int64": "<i8", "uint8": "u1"}


@dataclass(frozen=True)
class TrainConfig:
    """Optimizer hyperparameters, budgets, and run flags."""

    lr: float = 2e-4
    beta1: float = 0.9
    beta2: float = 0.98
    eps: float = 1e-9
    batch_size: int = 8
    steps_stage1: int = 300
    steps_stage2: int = 500
    seed: int = 0
    k: int = 50
    use_prev: bool = True
    use_fol: bool = True
    no_two_stage: bool = False
    ablation: Ablation = field(default_factory=Ablation)
    grad_clip: float = 1.0
    save_interval: int = 100
    loss_weights: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        if self.lr <= 0 or self.eps <= 0 or not (0 <= self.beta1 < 1) \
                or not (0 <= self.beta2 < 1):
            raise ConfigError("invalid optimizer hyperparameters")
        if self.batch_size < 1 or self.steps_stage1 < 0 or self.steps_stage2 < 1:
            raise ConfigError("invalid budgets")
        if self.k < 1:
            raise ConfigError("K must be >= 1")

    def context_cfg(self) -> ContextConfig:
        return ContextConfig(k=self.k, use_prev=self.use_prev, use_fol=self.use_fol)


def make_optimizer(model: DubbingModel, cfg: TrainConfig) -> torch.optim.Adam:
    return torch.optim.Adam(model.parameters(), lr=cfg.lr,
                            betas=(cfg.beta1, cfg.beta2), eps=cfg.eps)


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

@dataclass
class CheckpointData:
    format_version: int
    stage: int
    step: int
    config_digest: str
    model_config: ModelConfig
    stats: NormStats
    arrays: dict[str, np.ndarray]

    def model_arrays(self) -> dict[str, np.ndarray]:
        return {k[len("model."):]: v for k, v in self.arrays.items()
                if k.startswith("model.")}


def save_checkpoint(path: str | os.PathLike, model: DubbingModel,
                    optimizer: torch.optim.Adam | None, stage: int, step: int,
                    stats: NormStats) -> str:
    arrays: dict[str, np.ndarray] = {}
    for name, param in model.named_parameters():
        arrays[f"model.{name}"] = param.detach().cpu().numpy()
    if optimizer is not None:
        for name, param in model.named_parameters():
            state = optimizer.state.get(param)
            if not state:
                continue
            arrays[f"optim.{name}.step"] = np.asarray(float(state["step"]))
            arrays[f"optim.{name}.exp_avg"] = state["exp_avg"].detach().cpu().numpy()
            arrays[f"optim.{name}.exp_avg_sq"] = state["exp_avg_sq"].detach().cpu().numpy()
    arrays["stats.mel_mean"] = np.asarray(stats.mel_mean, dtype=np.float64)
    arrays["stats.mel_std"] = np.asarray(stats.mel_std, dtype=np.float64)
    arrays["rng.torch"] = torch.get_rng_state().numpy()

    index = []
    blobs = []
    for name in sorted(arrays):
        arr = np.ascontiguousarray(arrays[name])
        if arr.dtype.name not in _CKPT_DTYPES:
            arr = arr.astype(np.float64)
        index.append({"name": name, "dtype": arr.dtype.name,
                      "shape": list(arr.shape)})
        blobs.append(arr.astype(_CKPT_DTYPES[arr.dtype.name]).tobytes())
    header = {
        "format_version": 1,
        "stage": stage,
        "step": step,
        "config_digest": model.cfg.digest(),
        "model_config": asdict(model.cfg),
        "norm_stats": {
            "energy_mean": stats.energy_mean, "energy_std": stats.energy_std,
            "pitch_log_mean": stats.pitch_log_mean,
            "pitch_log_std": stats.pitch_log_std,
        },
        "arrays": index,
    }
    path = os.fspath(path)
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(_CKPT_MAGIC)
        fh.write(json.dumps(header, sort_keys=True).encode("ascii") + b"\n")
        for blob in blobs:
            fh.write(blob)
    return path


def load_checkpoint(path: str | os.PathLike) -> CheckpointData:
    try:
        with open(path, "rb") as fh:
            magic = fh.readline()
            if magic != _CKPT_MAGIC:
                raise IncompatibleCheckpoint(f"{path}: bad magic {magic!r}")
            header = json.loads(fh.readline().decode("ascii"))
            arrays = {}
            for entry in header["arrays"]:
                dtype = np.dtype(_CKPT_DTYPES[entry["dtype"]])
                count = int(np.prod(entry["shape"])) if entry["shape"] else 1
                payload = fh.read(count * dtype.itemsize)
                if len(payload) != count * dtype.itemsize:
                    raise IncompatibleCheckpoint(f"{path}: truncated payload")
                arrays[entry["name"]] = np.frombuffer(payload, dtype=dtype).astype(
                    entry["dtype"]).reshape(entry["shape"])
    except OSError as exc:
        raise IncompatibleCheckpoint(f"cannot read checkpoint {path}: {exc}") from exc
    ns = header["norm_stats"]
    stats = NormStats(
        mel_mean=arrays["stats.mel_mean"], mel_std=arrays["stats.mel_std"],
        energy_mean=ns["energy_mean"], energy_std=ns["energy_std"],
        pitch_log_mean=ns["pitch_log_mean"], pitch_log_std=ns["pitch_log_std"],
    )
    model_cfg = ModelConfig(**header["model_config"])
    if model_cfg.digest() != header["config_digest"]:
        raise IncompatibleCheckpoint(f"{path}: config digest mismatch")
    return CheckpointData(format_version=header["format_version"],
                          stage=header["stage"], step=header["step"],
                          config_digest=header["config_digest"],
                          model_config=model_cfg, stats=stats, arrays=arrays)


def check_compatibility(model: DubbingModel, ckpt: CheckpointData
                        ) -> tuple[list[str], list[str]]:
    """(missing, unexpected) parameter names between model and checkpoint."""
    model_names = {name: tuple(p.shape) for name, p in model.named_parameters()}
    ckpt_arrays = ckpt.model_arrays()
    missing = sorted(set(model_names) - set(ckpt_arrays))
    unexpected = sorted(set(ckpt_arrays) - set(model_names))
    mismatched = [name for name in set(model_names) & set(ckpt_arrays)
                  if model_names[name] != tuple(ckpt_arrays[name].shape)]
    return missing, unexpected + mismatched


def load_model_weights(model: DubbingModel, ckpt: CheckpointData) -> None:
    """Strict load: every parameter present exactly once, shapes equal."""
    missing, unexpected = check_compatibility(model, ckpt)
    if missing or unexpected:
        raise IncompatibleCheckpoint(
            f"missing={missing} unexpected_or_mismatched={unexpected}"
        )
    arrays = ckpt.model_arrays()
    with torch.no_grad():
        for name, param in model.named_parameters():
            param.copy_(torch.from_numpy(arrays[name].copy()))


def build_model_from_checkpoint(ckpt: CheckpointData) -> DubbingModel:
    model = DubbingModel(ckpt.model_config)
    load_model_weights(model, ckpt)
    return model


def restore_optimizer(optimizer: torch.optim.Adam, model: DubbingModel,
                      ckpt: CheckpointData) -> None:
    for name, param in model.named_parameters():
        key = f"optim.{name}.step"
        if key not in ckpt.arrays:
            continue
        optimizer.state[param] = {
            "step": torch.tensor(float(ckpt.arrays[key].reshape(-1)[0]),
                                 dtype=torch.float32),
            "exp_avg": torch.from_numpy(ckpt.arrays[f"optim.{name}.exp_avg"].copy()),
            "exp_avg_sq": torch.from_numpy(
                ckpt.arrays[f"optim.{name}.exp_avg_sq"].copy()),
        }


def restore_rng(ckpt: CheckpointData) -> None:
    if "rng.torch" in ckpt.arrays:
        torch.set_rng_state(torch.from_numpy(ckpt.arrays["rng.torch"].copy()))


# ---------------------------------------------------------------------------
# Loops
# ---------------------------------------------------------------------------

def _prepare_all(corpus: Corpus, cfg: TrainConfig, split: str = "train"
                 ) -> list[ModelInputs]:
    ctx = cfg.context_cfg()
    prepared = []
    for sample in corpus.split(split):
        sel = select_context(sample, ctx)
        prepared.append(prepare_inputs(sel, corpus.stats, cfg.ablation))
    if not prepared:
        raise InvariantViolation(f"no samples in split {split!r}")
    return prepared


def _batch_indices(n: int, cfg: TrainConfig, stage: int, step: int) -> np.ndarray:
    if n <= cfg.batch_size:
        return np.arange(n)
    rng = np.random.default_rng((cfg.seed, stage, step))
    return rng.choice(n, size=cfg.batch_size, replace=False)


def _forward_loss(model: DubbingModel, inputs: ModelInputs, cfg: TrainConfig
                  ) -> LossBreakdown:
    out = model(inputs, cfg.ablation)
    return compute_losses(out.energy, out.pitch, out.mel_refined,
                          inputs.energy_target, inputs.pitch_target,
                          inputs.mel_target, inputs.voiced,
                          weights=cfg.loss_weights)


@dataclass
class StageResult:
    checkpoint_path: str
    final_step: int
    first_loss: float
    final_loss: float
    losses: list[float]


def _log_line(fh, stage: int, step: int, mean: tuple[float, float, float, float]):
    l_energy, l_pitch, l_mel, l_sum = mean
    fh.write(f"step={step} stage={stage} l_energy={l_energy:.10g} "
             f"l_pitch={l_pitch:.10g} l_mel={l_mel:.10g} l_sum={l_sum:.10g}\n")
    fh.flush()


def _train_loop(model: DubbingModel, optimizer: torch.optim.Adam, corpus: Corpus,
                cfg: TrainConfig, stage: int, start_step: int, end_step: int,
                out_dir: str, tag: str) -> StageResult:
    os.makedirs(out_dir, exist_ok=True)
    prepared = _prepare_all(corpus, cfg)
    log_path = os.path.join(out_dir, f"loss_{tag}.log")
    ckpt_path = os.path.join(out_dir, f"{tag}.ckpt")
    model.train()
    losses: list[float] = []
    step = start_step
    # Append when resuming mid-stage so the log stays a single run record;
    # fresh runs truncate so re-runs are byte-identical.
    log_mode = "a" if start_step > 0 else "w"
    with open(log_path, log_mode, encoding="ascii") as log:
        while step < end_step:
            step += 1
            batch = _batch_indices(len(prepared), cfg, stage, step)
            optimizer.zero_grad()
            acc = None
            mean_terms = np.zeros(4)
            for idx in batch:
                lb = _forward_loss(model, prepared[idx], cfg)
                acc = lb.l_sum if acc is None else acc + lb.l_sum
                mean_terms += np.array(lb.floats())
            loss = acc / len(batch)
            mean_terms /= len(batch)
            if not math.isfinite(float(loss.detach())):
                last_good = save_checkpoint(
                    os.path.join(out_dir, f"{tag}_last_good.ckpt"),
                    model, optimizer, stage, step - 1, corpus.stats)
                raise DivergenceDetected(
                    f"non-finite loss at stage {stage} step {step}",
                    checkpoint_path=last_good)
            loss.backward()
            if cfg.grad_clip > 0:
                torch.nn.utils.clip_grad_norm_(model.parameters(), cfg.grad_clip)
            optimizer.step()
            losses.append(float(loss.detach()))
            _log_line(log, stage, step, tuple(mean_terms))
            if cfg.save_interval > 0 and step % cfg.save_interval == 0:
                save_checkpoint(ckpt_path, model, optimizer, stage, step, corpus.stats)
    save_checkpoint(ckpt_path, model, optimizer, stage, step, corpus.stats)
    return StageResult(checkpoint_path=ckpt_path, final_step=step,
                       first_loss=losses[0] if losses else math.nan,
                       final_loss=losses[-1] if losses else math.nan,
                       losses=losses)


def evaluate_loss(model: DubbingModel, corpus: Corpus, cfg: TrainConfig,
                  split: str = "train") -> float:
    """Mean per-sample l_sum in eval mode (no dropout, no grad)."""
    prepared = _prepare_all(corpus, cfg, split)
    was_training = model.training
    model.eval()
    try:
        with torch.no_grad():
            total = 0.0
            for inputs in prepared:
                total += float(_forward_loss(model, inputs, cfg).l_sum)
    finally:
        model.train(was_training)
    return total / len(prepared)


def train_stage1(corpus_single: Corpus, model_cfg: ModelConfig, cfg: TrainConfig,
                 out_dir: str, resume: CheckpointData | None = None) -> StageResult:
    """Train from scratch on single-sentence samples (contexts absent)."""
    torch.manual_seed(cfg.seed)
    model = DubbingModel(model_cfg)
    optimizer = make_optimizer(model, cfg)
    start = 0
    if resume is not None:
        if resume.stage != 1:
            raise IncompatibleCheckpoint(f"expected stage 1, got {resume.stage}")
        load_model_weights(model, resume)
        restore_optimizer(optimizer, model, resume)
        restore_rng(resume)
        start = resume.step
    return _train_loop(model, optimizer, corpus_single, cfg, stage=1,
                       start_step=start, end_step=cfg.steps_stage1,
                       out_dir=out_dir, tag="stage1")


def train_stage2(corpus_context: Corpus, init: CheckpointData | None,
                 model_cfg: ModelConfig, cfg: TrainConfig, out_dir: str,
                 resume: CheckpointData | None = None) -> StageResult:
    """Fine-tune on context samples, starting from a stage-1 checkpoint.

    init None (no-two-stage ablation) trains from random init instead.
    """
    torch.manual_seed(cfg.seed + 1)
    if resume is not None:
        if resume.stage != 2:
            raise IncompatibleCheckpoint(f"expected stage 2, got {resume.stage}")
        model = DubbingModel(resume.model_config)
        optimizer = make_optimizer(model, cfg)
        load_model_weights(model, resume)
        restore_optimizer(optimizer, model, resume)
        restore_rng(resume)
        start = resume.step
    else:
        if init is not None:
            if init.stage != 1:
                raise IncompatibleCheckpoint(
                    f"stage-2 init requires a stage-1 checkpoint, got stage {init.stage}"
                )
            model = DubbingModel(init.model_config)
            load_model_weights(model, init)
        else:
            model = DubbingModel(model_cfg)
        optimizer = make_optimizer(model, cfg)
        start = 0
    return _train_loop(model, optimizer, corpus_context, cfg, stage=2,
                       start_step=start, end_step=cfg.steps_stage2,
                       out_dir=out_dir, tag="stage2")


def run_training(corpus_single: Corpus, corpus_context: Corpus,
                 model_cfg: ModelConfig, cfg: TrainConfig, out_dir: str,
                 resume_path: str | None = None) -> StageResult:
    """Full strategy: stage 1 then stage 2, honoring no_two_stage and resume."""
    resume = load_checkpoint(resume_path) if resume_path else None
    if cfg.no_two_stage:
        return train_stage2(corpus_context, None, model_cfg, cfg, out_dir,
                            resume=resume)
    if resume is not None and resume.stage == 2:
        return train_stage2(corpus_context, None, model_cfg, cfg, out_dir,
                            resume=resume)
    stage1 = train_stage1(corpus_single, model_cfg, cfg, out_dir,
                          resume=resume if resume and resume.stage == 1 else None)
    init = load_checkpoint(stage1.checkpoint_path)
    return train_stage2(corpus_context, init, model_cfg, cfg, out_dir)


# ---------------------------------------------------------------------------
# K-sweep
# ---------------------------------------------------------------------------

KSWEEP_COLUMNS = ["k", "gpe_mean", "ffe_mean", "n_eval"]


def k_sweep(corpus_single: Corpus, corpus_context: Corpus, model_cfg: ModelConfig,
            cfg: TrainConfig, k_list: list[int], out_dir: str,
            split: str = "train") -> list[dict]:
    """Train and evaluate once per K; returns and writes the summary rows."""
    if not k_list:
        raise ConfigError("K list must be non-empty")
    rows = []
    for k in k_list:
        cfg_k = replace(cfg, k=k)
        run_dir = os.path.join(out_dir, f"k{k}")
        result = run_training(corpus_single, corpus_context, model_cfg, cfg_k, run_dir)
        model = build_model_from_checkpoint(load_checkpoint(result.checkpoint_path))
        report = evaluate_corpus(model, corpus_context, cfg_k.context_cfg(),
                                 split=split, ablation=cfg_k.ablation)
        rows.append(dict(k=k, gpe_mean=report.mean_gpe, ffe_mean=report.mean_ffe,
                         n_eval=report.n))
    os.makedirs(out_dir, exist_ok=True)
    write_report(os.path.join(out_dir, "ksweep_report.txt"), KSWEEP_COLUMNS, rows)
    return rows
