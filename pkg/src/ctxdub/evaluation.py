"""Corpus-level evaluation: synthesize, decode pitch, score GPE/FFE, report.

Reports are plain tabular text: one ``# columns: ...`` header line naming the
fields, then one whitespace-separated row per record. The same format is used
by the per-sample evaluation report and the K-sweep summary.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass

from .arrayio import Corpus
from .data import ContextConfig, ProsodyTrack, select_context
from .decoder import extract_current
from .errors import NoVoicedOverlap
from .metrics import ffe, gpe, pitch_from_mel
from .model import Ablation, DubbingModel, synthesize_current


@dataclass
class EvalRow:
    sample_id: str
    gpe: float  # NaN when no both-voiced overlap exists
    ffe: float


@dataclass
class EvalReport:
    rows: list[EvalRow]
    mean_gpe: float
    mean_ffe: float

    @property
    def n(self) -> int:
        return len(self.rows)


def _current_reference(corpus: Corpus, index: int) -> ProsodyTrack:
    cur = corpus.samples[index].current
    return ProsodyTrack(values=cur.pitch, voiced=cur.voiced)


def evaluate_corpus(model: DubbingModel | None, corpus: Corpus,
                    ctx_cfg: ContextConfig, split: str = "train",
                    ablation: Ablation = Ablation()) -> EvalReport:
    """Score every sample of a split; model None scores ground truth against itself."""
    pitch_map = corpus.pitch_map
    rows = []
    for index in corpus.split_indices(split):
        sample = corpus.samples[index]
        sel = select_context(sample, ctx_cfg)
        if model is None:
            hyp_mel = extract_current(sel.mel_gt, sel.bounds.mel_current())
        else:
            hyp_mel = synthesize_current(model, sel, corpus.stats, ablation)
        hyp = pitch_from_mel(hyp_mel, pitch_map)
        ref = _current_reference(corpus, index)
        try:
            g = gpe(ref, hyp)
        except NoVoicedOverlap:
            g = math.nan
        rows.append(EvalRow(sample_id=f"{index:06d}", gpe=g, ffe=ffe(ref, hyp)))

    valid_gpe = [r.gpe for r in rows if not math.isnan(r.gpe)]
    mean_gpe = sum(valid_gpe) / len(valid_gpe) if valid_gpe else math.nan
    mean_ffe = sum(r.ffe for r in rows) / len(rows) if rows else math.nan
    return EvalReport(rows=rows, mean_gpe=mean_gpe, mean_ffe=mean_ffe)


def write_report(path: str | os.PathLike, columns: list[str],
                 rows: list[dict]) -> None:
    lines = ["# columns: " + " ".join(columns)]
    for row in rows:
        lines.append(" ".join(_format(row[c]) for c in columns))
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")


def parse_report(path: str | os.PathLike) -> tuple[list[str], list[dict]]:
    columns: list[str] = []
    rows: list[dict] = []
    with open(path, "r", encoding="ascii") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("# columns:"):
                columns = line.split(":", 1)[1].split()
            elif not line.startswith("#"):
                rows.append(dict(zip(columns, line.split())))
    return columns, rows


def _format(value) -> str:
    if isinstance(value, float):
        return f"{value:.6f}"
    return str(value)


EVAL_COLUMNS = ["id", "gpe", "ffe"]


def write_eval_report(path: str | os.PathLike, report: EvalReport) -> None:
    rows = [dict(id=r.sample_id, gpe=r.gpe, ffe=r.ffe) for r in report.rows]
    rows.append(dict(id="MEAN", gpe=report.mean_gpe, ffe=report.mean_ffe))
    write_report(path, EVAL_COLUMNS, rows)


def context_length_stats(corpus: Corpus) -> dict[str, dict[str, float]]:
    """Phoneme-length statistics of the previous/following sentences.

    Useful for choosing the K sweep range: K values near the mean context
    length are the interesting region.
    """
    import numpy as np

    out: dict[str, dict[str, float]] = {}
    for side, attr in (("previous", "previous"), ("following", "following")):
        lengths = [getattr(s, attr).t_p for s in corpus.samples
                   if getattr(s, attr) is not None]
        if lengths:
            arr = np.array(lengths)
            out[side] = dict(mean=float(arr.mean()), median=float(np.median(arr)),
                             min=int(arr.min()), max=int(arr.max()))
        else:
            out[side] = dict(mean=math.nan, median=math.nan, min=0, max=0)
    return out
