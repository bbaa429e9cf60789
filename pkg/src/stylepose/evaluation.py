"""Batch evaluation: score pose transfers against held-out targets.

The image metric is single-scale SSIM on the luma channel with the usual
11x11 Gaussian window. An optional frozen feature extractor adds a
perceptual distance column; without one that column is absent.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import fftconvolve

from .atlas import build_part_layout, extract_texture
from .data import resize_image, resize_iuv
from .errors import IngestionError, InputError
from .inference import NoisePolicy, TrainedModel, pose_transfer
from .networks import image_batch
from .pngio import load_image, load_iuv

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03
SSIM_L = 1.0

LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114], dtype=np.float64)


def _luma(image: np.ndarray) -> np.ndarray:
    arr = np.asarray(image, dtype=np.float64)
    if arr.ndim == 2:
        return arr
    if arr.ndim == 3 and arr.shape[2] == 3:
        return arr @ LUMA_WEIGHTS
    raise InputError(f"expected (H, W) or (H, W, 3) image, got {arr.shape}")


def _gaussian_window() -> np.ndarray:
    half = SSIM_WINDOW // 2
    coords = np.arange(SSIM_WINDOW, dtype=np.float64) - half
    g = np.exp(-(coords ** 2) / (2.0 * SSIM_SIGMA ** 2))
    window = np.outer(g, g)
    return window / window.sum()


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    """Mean structural similarity over all fully covered window positions."""
    x = _luma(a)
    y = _luma(b)
    if x.shape != y.shape:
        raise InputError(f"shape mismatch: {x.shape} vs {y.shape}")
    if min(x.shape) < SSIM_WINDOW:
        raise InputError(
            f"images must be at least {SSIM_WINDOW} pixels per side, "
            f"got {x.shape}"
        )
    w = _gaussian_window()
    mu_x = fftconvolve(x, w, mode="valid")
    mu_y = fftconvolve(y, w, mode="valid")
    var_x = fftconvolve(x * x, w, mode="valid") - mu_x * mu_x
    var_y = fftconvolve(y * y, w, mode="valid") - mu_y * mu_y
    cov = fftconvolve(x * y, w, mode="valid") - mu_x * mu_y
    c1 = (SSIM_K1 * SSIM_L) ** 2
    c2 = (SSIM_K2 * SSIM_L) ** 2
    numerator = (2.0 * mu_x * mu_y + c1) * (2.0 * cov + c2)
    denominator = (mu_x * mu_x + mu_y * mu_y + c1) * (var_x + var_y + c2)
    return float((numerator / denominator).mean())


def perceptual_distance(extractor, a: np.ndarray, b: np.ndarray) -> float:
    """Summed mean absolute feature gaps between two images."""
    import torch

    ta = image_batch([np.asarray(a, dtype=np.float32)])
    tb = image_batch([np.asarray(b, dtype=np.float32)])
    with torch.no_grad():
        total = 0.0
        for fa, fb in zip(extractor(ta), extractor(tb)):
            total += float((fa - fb).abs().mean())
    return total


@dataclass(frozen=True)
class EvalPair:
    pair_id: str
    source_image: str
    source_iuv: str
    target_image: str
    target_iuv: str


def load_eval_pairs(path) -> list:
    """Read a pair list TSV; paths are resolved against the file's folder."""
    root = os.path.dirname(os.path.abspath(path))
    pairs = []
    seen = set()
    try:
        with open(path) as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise IngestionError(f"cannot read pair list {path}: {exc}")
    for lineno, line in enumerate(lines, start=1):
        line = line.rstrip("\n")
        if not line.strip():
            continue
        fields = line.split("\t")
        if len(fields) != 5:
            raise IngestionError(
                f"{path}:{lineno}: expected 5 tab-separated fields, "
                f"got {len(fields)}"
            )
        pair_id = fields[0]
        if pair_id in seen:
            raise IngestionError(f"{path}:{lineno}: duplicate pair id {pair_id!r}")
        seen.add(pair_id)
        resolved = [
            p if os.path.isabs(p) else os.path.join(root, p)
            for p in fields[1:]
        ]
        pairs.append(EvalPair(pair_id, *resolved))
    return pairs


@dataclass
class PairResult:
    pair_id: str
    skipped: bool = False
    reason: str = ""
    ssim: float = None
    perceptual: float = None
    output_path: str = None


@dataclass
class EvalReport:
    results: list = field(default_factory=list)
    aggregates: dict = field(default_factory=dict)

    @property
    def scored(self):
        return [r for r in self.results if not r.skipped]

    @property
    def skipped(self):
        return [r for r in self.results if r.skipped]


def _score_pair(model: TrainedModel, pair: EvalPair, out_dir, noise,
                extractor) -> PairResult:
    for path in (pair.source_image, pair.source_iuv, pair.target_image,
                 pair.target_iuv):
        if not os.path.exists(path):
            return PairResult(pair.pair_id, skipped=True,
                              reason=f"missing {path}")
    try:
        src_image = load_image(pair.source_image)
        src_iuv = load_iuv(pair.source_iuv)
        tgt_image = load_image(pair.target_image)
        tgt_iuv = load_iuv(pair.target_iuv)
    except (IngestionError, InputError) as exc:
        return PairResult(pair.pair_id, skipped=True, reason=str(exc))

    size = model.arch.image_size
    tsize = model.arch.texture_size
    src_image = resize_image(src_image, size)
    src_iuv = resize_iuv(src_iuv, size)
    tgt_image = resize_image(tgt_image, size)
    tgt_iuv = resize_iuv(tgt_iuv, size)
    appearance = extract_texture(src_image, src_iuv,
                                 build_part_layout(tsize, tsize))
    result = pose_transfer(model, appearance, tgt_iuv, noise)
    output_path = os.path.join(out_dir, f"{pair.pair_id}.png")
    result.save(output_path)
    record = PairResult(pair.pair_id, ssim=ssim(result.image, tgt_image),
                        output_path=output_path)
    if extractor is not None:
        record.perceptual = perceptual_distance(extractor, result.image,
                                                tgt_image)
    return record


def _mean(values) -> float:
    return math.fsum(values) / len(values)


def _format_number(value) -> str:
    return "" if value is None else repr(value)


def write_report_files(report: EvalReport, out_dir) -> None:
    tsv_path = os.path.join(out_dir, "eval_report.tsv")
    with open(tsv_path, "w") as fh:
        fh.write("pair_id\tstatus\tssim\tperceptual\toutput\treason\n")
        for r in report.results:
            status = "skipped" if r.skipped else "ok"
            # record outputs by name so the report does not depend on
            # where the evaluation folder lives
            output = os.path.basename(r.output_path) if r.output_path else ""
            fh.write("\t".join([
                r.pair_id, status, _format_number(r.ssim),
                _format_number(r.perceptual), output, r.reason,
            ]) + "\n")

    txt_path = os.path.join(out_dir, "eval_report.txt")
    with open(txt_path, "w") as fh:
        if not report.results:
            fh.write("no pairs evaluated\n")
            return
        for r in report.results:
            if r.skipped:
                fh.write(f"pair {r.pair_id}: skipped ({r.reason})\n")
            elif r.perceptual is None:
                fh.write(f"pair {r.pair_id}: ssim={r.ssim!r}\n")
            else:
                fh.write(f"pair {r.pair_id}: ssim={r.ssim!r} "
                         f"perceptual={r.perceptual!r}\n")
        scored = report.scored
        fh.write(f"scored {len(scored)} of {len(report.results)} pairs, "
                 f"skipped {len(report.skipped)}\n")
        for key, value in report.aggregates.items():
            fh.write(f"mean {key} over {len(scored)} pairs: {value!r}\n")


def evaluate(model: TrainedModel, pairs, out_dir,
             noise: NoisePolicy = NoisePolicy("fixed", seed=0),
             extractor=None) -> EvalReport:
    """Run pose transfer over every pair and score against the targets.

    ``pairs`` is a list of EvalPair or a path to a pair list TSV. Writes
    one PNG per scored pair plus eval_report.txt and eval_report.tsv.
    Pairs with unreadable assets are skipped and reported as such.
    """
    if not isinstance(pairs, list):
        pairs = load_eval_pairs(pairs)
    os.makedirs(out_dir, exist_ok=True)
    report = EvalReport()
    for pair in pairs:
        report.results.append(
            _score_pair(model, pair, out_dir, noise, extractor))
    scored = report.scored
    if scored:
        report.aggregates["ssim"] = _mean([r.ssim for r in scored])
        if extractor is not None:
            report.aggregates["perceptual"] = _mean(
                [r.perceptual for r in scored])
    write_report_files(report, out_dir)
    return report
