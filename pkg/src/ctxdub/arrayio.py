"""On-disk formats: array container, corpus manifest, corpus save/load.

Array container (one numeric array per file, extension ``.arr``)::

    line 1: b"NDARRAY 1\\n"                      magic + format version
    line 2: b"dtype=<name> shape=<d0,d1,...>\\n"  header
    rest:   raw little-endian C-order payload

Supported dtypes: float64, float32, int64, int32, uint8, bool (bool is
stored as one byte per element, 0 or 1).

Corpus manifest (``manifest.txt``) is line-oriented ``key=value`` text:
header lines first, then one ``sample ...`` line per sample carrying
``id``, ``split``, phoneme lengths ``t_pre``/``t_cur``/``t_fol`` and the
sample directory ``path``. Each sample directory holds one container per
field, named ``<region>.<field>.arr`` with region in {prev, cur, fol}.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .data import ContextSample, NormStats, SentenceBundle, compute_norm_stats
from .errors import InvariantViolation, MissingPitchMap
from .frames import FrameRateConfig
from .synth import PitchMap, ShapeConfig, generate_synthetic_corpus

_MAGIC = b"NDARRAY 1\n"
_DTYPES = {
    "float64": np.dtype("<f8"),
    "float32": np.dtype("<f4"),
    "int64": np.dtype("<i8"),
    "int32": np.dtype("<i4"),
    "uint8": np.dtype("u1"),
}


def save_array(path: str | os.PathLike, arr: np.ndarray) -> None:
    arr = np.asarray(arr)
    if arr.dtype == np.bool_:
        name, payload = "bool", arr.astype("u1")
    else:
        name = arr.dtype.name
        if name not in _DTYPES:
            raise InvariantViolation(f"unsupported array dtype {name}")
        payload = arr.astype(_DTYPES[name])
    shape = ",".join(str(d) for d in arr.shape)
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(f"dtype={name} shape={shape}\n".encode("ascii"))
        fh.write(np.ascontiguousarray(payload).tobytes())


def load_array(path: str | os.PathLike) -> np.ndarray:
    with open(path, "rb") as fh:
        magic = fh.readline()
        if magic != _MAGIC:
            raise InvariantViolation(f"{path}: bad magic {magic!r}")
        header = fh.readline().decode("ascii").strip()
        fields = dict(part.split("=", 1) for part in header.split())
        name = fields["dtype"]
        shape = tuple(int(d) for d in fields["shape"].split(",")) if fields["shape"] else ()
        payload = fh.read()
    if name == "bool":
        arr = np.frombuffer(payload, dtype="u1").astype(bool)
    elif name in _DTYPES:
        arr = np.frombuffer(payload, dtype=_DTYPES[name]).astype(name)
    else:
        raise InvariantViolation(f"{path}: unsupported dtype {name}")
    return arr.reshape(shape)


_BUNDLE_FIELDS = ("phonemes", "lip_feats", "face_feats", "mel", "voiced", "pitch", "energy")
_REGIONS = {"prev": "previous", "cur": "current", "fol": "following"}


@dataclass
class Corpus:
    """An in-memory corpus plus everything needed to train and evaluate on it."""

    samples: list[ContextSample]
    splits: list[str]
    frame_cfg: FrameRateConfig
    shape_cfg: ShapeConfig
    stats: NormStats
    kind: str = "context"
    seed: int = 0

    @property
    def pitch_map(self) -> PitchMap:
        if self.shape_cfg is None:
            raise MissingPitchMap("corpus has no shape config")
        return self.shape_cfg.pitch_map

    def split(self, name: str) -> list[ContextSample]:
        return [s for s, sp in zip(self.samples, self.splits) if sp == name]

    def split_indices(self, name: str) -> list[int]:
        return [i for i, sp in enumerate(self.splits) if sp == name]


def assign_splits(count: int, val_count: int) -> list[str]:
    if val_count >= count:
        raise InvariantViolation("val_count must leave at least one training sample")
    return ["train"] * (count - val_count) + ["val"] * val_count


def save_corpus(root: str | os.PathLike, corpus: Corpus) -> None:
    root = os.fspath(root)
    samples_dir = os.path.join(root, "samples")
    stats_dir = os.path.join(root, "stats")
    os.makedirs(samples_dir, exist_ok=True)
    os.makedirs(stats_dir, exist_ok=True)

    save_array(os.path.join(stats_dir, "mel_mean.arr"), corpus.stats.mel_mean)
    save_array(os.path.join(stats_dir, "mel_std.arr"), corpus.stats.mel_std)

    fc, sc, pm = corpus.frame_cfg, corpus.shape_cfg, corpus.pitch_map
    lines = [
        "# corpus manifest",
        "format_version=1",
        f"kind={corpus.kind}",
        f"seed={corpus.seed}",
        f"sr={fc.sr}", f"hs={fc.hs}", f"fps={fc.fps}", f"n={fc.n}",
        f"vocab={sc.vocab}", f"d_lip={sc.d_lip}", f"d_face={sc.d_face}", f"n_mels={sc.n_mels}",
        f"min_phonemes={sc.min_phonemes}", f"max_phonemes={sc.max_phonemes}",
        f"min_frames_per_phoneme={sc.min_frames_per_phoneme}",
        f"max_frames_per_phoneme={sc.max_frames_per_phoneme}",
        f"voiced_prob={sc.voiced_prob!r}",
        f"feature_noise={sc.feature_noise!r}",
        f"mel_noise={sc.mel_noise!r}",
        f"pitch_bin={pm.pitch_bin}", f"voicing_bin={pm.voicing_bin}",
        f"pitch_divisor={pm.divisor!r}", f"voicing_threshold={pm.threshold!r}",
        f"energy_mean={corpus.stats.energy_mean!r}",
        f"energy_std={corpus.stats.energy_std!r}",
        f"pitch_log_mean={corpus.stats.pitch_log_mean!r}",
        f"pitch_log_std={corpus.stats.pitch_log_std!r}",
        "mel_mean_path=stats/mel_mean.arr",
        "mel_std_path=stats/mel_std.arr",
    ]
    for i, (sample, split) in enumerate(zip(corpus.samples, corpus.splits)):
        sid = f"{i:06d}"
        sdir = os.path.join(samples_dir, sid)
        os.makedirs(sdir, exist_ok=True)
        for region, attr in _REGIONS.items():
            bundle: Optional[SentenceBundle] = getattr(sample, attr)
            if bundle is None:
                continue
            for f in _BUNDLE_FIELDS:
                save_array(os.path.join(sdir, f"{region}.{f}.arr"), getattr(bundle, f))
        t_pre = sample.previous.t_p if sample.previous is not None else 0
        t_fol = sample.following.t_p if sample.following is not None else 0
        lines.append(
            f"sample id={sid} split={split} t_pre={t_pre} t_cur={sample.current.t_p} "
            f"t_fol={t_fol} path=samples/{sid}"
        )
    with open(os.path.join(root, "manifest.txt"), "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")


def _parse_kv(line: str) -> tuple[str, str]:
    key, _, value = line.partition("=")
    return key.strip(), value.strip()


def load_corpus(root: str | os.PathLike) -> Corpus:
    root = os.fspath(root)
    header: dict[str, str] = {}
    sample_lines = []
    with open(os.path.join(root, "manifest.txt"), "r", encoding="ascii") as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if line.startswith("sample "):
                sample_lines.append(dict(_parse_kv(p) for p in line.split()[1:]))
            else:
                key, value = _parse_kv(line)
                header[key] = value

    frame_cfg = FrameRateConfig(sr=int(header["sr"]), hs=int(header["hs"]),
                                fps=int(header["fps"]), n=int(header["n"]))
    shape_cfg = ShapeConfig(
        vocab=int(header["vocab"]), d_lip=int(header["d_lip"]),
        d_face=int(header["d_face"]), n_mels=int(header["n_mels"]),
        min_phonemes=int(header["min_phonemes"]), max_phonemes=int(header["max_phonemes"]),
        min_frames_per_phoneme=int(header["min_frames_per_phoneme"]),
        max_frames_per_phoneme=int(header["max_frames_per_phoneme"]),
        voiced_prob=float(header["voiced_prob"]),
        feature_noise=float(header["feature_noise"]),
        mel_noise=float(header["mel_noise"]),
    )
    if "pitch_bin" not in header or "voicing_bin" not in header:
        raise MissingPitchMap(f"{root}: manifest lacks the pitch map")
    stats = NormStats(
        mel_mean=load_array(os.path.join(root, header["mel_mean_path"])),
        mel_std=load_array(os.path.join(root, header["mel_std_path"])),
        energy_mean=float(header["energy_mean"]),
        energy_std=float(header["energy_std"]),
        pitch_log_mean=float(header["pitch_log_mean"]),
        pitch_log_std=float(header["pitch_log_std"]),
    )

    samples, splits = [], []
    for rec in sample_lines:
        sdir = os.path.join(root, rec["path"])
        bundles: dict[str, Optional[SentenceBundle]] = {}
        for region, attr in _REGIONS.items():
            probe = os.path.join(sdir, f"{region}.phonemes.arr")
            if not os.path.exists(probe):
                bundles[attr] = None
                continue
            fields = {f: load_array(os.path.join(sdir, f"{region}.{f}.arr"))
                      for f in _BUNDLE_FIELDS}
            bundles[attr] = SentenceBundle(**fields)
        sample = ContextSample(current=bundles["current"], previous=bundles["previous"],
                               following=bundles["following"], frame_cfg=frame_cfg)
        sample.validate(vocab=shape_cfg.vocab)
        samples.append(sample)
        splits.append(rec.get("split", "train"))

    return Corpus(samples=samples, splits=splits, frame_cfg=frame_cfg,
                  shape_cfg=shape_cfg, stats=stats,
                  kind=header.get("kind", "context"), seed=int(header.get("seed", 0)))


def build_corpus(seed: int, count: int, frame_cfg: FrameRateConfig,
                 shape_cfg: ShapeConfig, with_context: bool,
                 val_count: int = 0, stats: Optional[NormStats] = None,
                 kind: Optional[str] = None) -> Corpus:
    samples = generate_synthetic_corpus(seed, count, frame_cfg, shape_cfg,
                                        with_context=with_context)
    return Corpus(
        samples=samples,
        splits=assign_splits(count, val_count),
        frame_cfg=frame_cfg,
        shape_cfg=shape_cfg,
        stats=stats if stats is not None else compute_norm_stats(samples),
        kind=kind or ("context" if with_context else "single"),
        seed=seed,
    )


def build_dataset(root: str | os.PathLike, seed: int, count_single: int,
                  count_context: int, frame_cfg: FrameRateConfig,
                  shape_cfg: ShapeConfig, val_count: int = 0,
                  include_context_sentences: bool = True) -> tuple[Corpus, Corpus]:
    """Generate and persist the two-stage dataset: single/ and context/ corpora.

    The single corpus holds ``count_single`` independent sentences plus, by
    default, every sentence of the context corpus's train split as its own
    single-sentence sample (the context set is re-collected from the same
    material the first stage trains on). Normalization statistics are computed
    over the union of both corpora and written identically to both manifests,
    so the two training stages share one mel/prosody scale.
    """
    context_samples = generate_synthetic_corpus(seed + 1, count_context, frame_cfg,
                                                shape_cfg, with_context=True)
    context_splits = assign_splits(count_context, val_count)
    single_samples: list[ContextSample] = []
    if include_context_sentences:
        for sample, split in zip(context_samples, context_splits):
            if split != "train":
                continue
            for bundle in (sample.previous, sample.current, sample.following):
                if bundle is not None:
                    single_samples.append(ContextSample(current=bundle,
                                                        frame_cfg=frame_cfg))
    single_samples += generate_synthetic_corpus(seed, count_single, frame_cfg,
                                                shape_cfg, with_context=False)
    stats = compute_norm_stats(single_samples + context_samples)
    single = Corpus(samples=single_samples,
                    splits=assign_splits(len(single_samples), 0),
                    frame_cfg=frame_cfg, shape_cfg=shape_cfg, stats=stats,
                    kind="single", seed=seed)
    context = Corpus(samples=context_samples, splits=context_splits,
                     frame_cfg=frame_cfg, shape_cfg=shape_cfg, stats=stats,
                     kind="context", seed=seed + 1)
    save_corpus(os.path.join(os.fspath(root), "single"), single)
    save_corpus(os.path.join(os.fspath(root), "context"), context)
    return single, context
