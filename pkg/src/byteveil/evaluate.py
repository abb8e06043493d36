"""Evaluation harness: stratified splits, detection metrics, evasion
curves, gradient-norm position profiles, injected-byte histograms, and
deterministic CSV/SVG emission.

Attack runs are parallelizable across samples; every attack derives its
seed from (seed, split, sample, budget, mode), and results are merged in
sample order, so outputs do not depend on scheduling.
"""

from __future__ import annotations

import csv
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .attack import (
    GRADIENT,
    RANDOM,
    AttackConfig,
    AttackResult,
    attack,
    random_attack,
)
from .encoding import to_input_vector
from .model import ModelParams, classify, forward, grad_wrt_embedding
from .pe import RawBinary

log = logging.getLogger(__name__)

DETECTION_THRESHOLD = 0.5


class EmptyManifest(ValueError):
    """No samples to work with."""


class DegenerateSplit(ValueError):
    """A class has too few samples to split in half."""


class NoBytes(ValueError):
    """Histogram requested for an attack that injected nothing."""


@dataclass(frozen=True)
class EvalRecord:
    split_id: int
    metric: str  # one of: precision, recall, accuracy, evasion_rate,
                 # grad_norm_mean, byte_count
    value: float
    extra: dict = field(default_factory=dict)


def split_corpus(entries: list[dict], n_repeats: int, seed: int):
    """Stratified 50/50 train/test splits, one per repeat.

    Returns a list of (train_entries, test_entries). Odd class counts put
    the extra sample in the training half. Deterministic in (entries order,
    seed)."""
    if not entries:
        raise EmptyManifest("no manifest entries")
    by_label: dict[str, list[dict]] = {}
    for entry in entries:
        by_label.setdefault(entry["label"], []).append(entry)
    for label, group in by_label.items():
        if len(group) < 2:
            raise DegenerateSplit(f"class {label!r} has {len(group)} sample(s)")
    splits = []
    for r in range(n_repeats):
        rng = np.random.default_rng([seed, r])
        train: list[dict] = []
        test: list[dict] = []
        for label in sorted(by_label):
            group = by_label[label]
            order = rng.permutation(len(group))
            cut = (len(group) + 1) // 2
            train.extend(group[i] for i in order[:cut])
            test.extend(group[i] for i in order[cut:])
        splits.append((train, test))
    return splits


def confusion_metrics(y_true, y_pred):
    """(precision, recall, accuracy) with malware = positive.

    Undefined ratios (zero denominator) are signaled as NaN."""
    y_true = np.asarray(y_true)
    y_pred = np.asarray(y_pred)
    tp = int(((y_true == 1) & (y_pred == 1)).sum())
    fp = int(((y_true == 0) & (y_pred == 1)).sum())
    fn = int(((y_true == 1) & (y_pred == 0)).sum())
    precision = tp / (tp + fp) if tp + fp else math.nan
    recall = tp / (tp + fn) if tp + fn else math.nan
    accuracy = float((y_true == y_pred).mean()) if y_true.size else math.nan
    return precision, recall, accuracy


def precision_recall(params: ModelParams, labeled: list[tuple[RawBinary, int]]):
    """Classify each binary and score against its label."""
    if not labeled:
        raise EmptyManifest("empty test set")
    y_true = [y for _, y in labeled]
    y_pred = [1 if classify(params, b)[0] == "malware" else 0 for b, _ in labeled]
    return confusion_metrics(y_true, y_pred)


def _derived_seed(seed: int, split_id: int, sample_idx: int, budget: int,
                  mode: str) -> int:
    mode_code = 0 if mode == GRADIENT else 1
    ss = np.random.SeedSequence([seed, split_id, sample_idx, budget, mode_code])
    return int(ss.generate_state(1)[0])


def evasion_curve(
    params: ModelParams,
    samples: list[tuple[str, RawBinary]],
    budgets: list[int],
    iterations: int = 20,
    seed: int = 0,
    refresh: str = "per-iteration",
    split_id: int = 0,
    workers: int = 1,
):
    """Evasion rate per (mode, budget) over the initially detected samples.

    Samples whose informative length cannot absorb the largest budget
    (k + max(budgets) > d) are excluded up front, as are samples the model
    already misclassifies as benign; exclusion counts are logged. Budget 0
    attacks nothing and scores as not evaded. Returns (records, results)
    where results maps (mode, budget) to [(sample_id, AttackResult)] for
    the attacked samples.
    """
    if not budgets:
        raise ValueError("budgets must be non-empty")
    if sorted(budgets) != list(budgets):
        raise ValueError("budgets must be ascending")
    d = params.hyper.d
    max_budget = max(budgets)

    eligible = []
    n_nobudget = 0
    n_undetected = 0
    for idx, (sample_id, binary) in enumerate(samples):
        vec = to_input_vector(binary, d)
        if vec.informative_len + max_budget > d:
            n_nobudget += 1
            continue
        f0, _ = forward(params, vec)
        if f0 < DETECTION_THRESHOLD:
            n_undetected += 1
            continue
        eligible.append((idx, sample_id, vec))
    if n_nobudget:
        log.info("split %d: excluded %d sample(s) with no padding budget",
                 split_id, n_nobudget)
    if n_undetected:
        log.info("split %d: excluded %d sample(s) not detected as malware",
                 split_id, n_undetected)

    records: list[EvalRecord] = []
    results: dict[tuple[str, int], list[tuple[str, AttackResult]]] = {}
    for mode in (GRADIENT, RANDOM):
        run = attack if mode == GRADIENT else random_attack
        for budget in budgets:
            if budget == 0:
                n_evaded = 0
                results[(mode, budget)] = []
            else:
                def run_one(item, _mode=mode, _budget=budget, _run=run):
                    idx, sample_id, vec = item
                    cfg = AttackConfig(
                        q_max=_budget,
                        iterations=iterations,
                        seed=_derived_seed(seed, split_id, idx, _budget, _mode),
                        refresh=refresh,
                    )
                    return sample_id, _run(params, vec, cfg)

                if workers > 1 and len(eligible) > 1:
                    with ThreadPoolExecutor(max_workers=workers) as pool:
                        pairs = list(pool.map(run_one, eligible))
                else:
                    pairs = [run_one(item) for item in eligible]
                results[(mode, budget)] = pairs
                n_evaded = sum(1 for _, res in pairs if res.evaded)
            n_samples = len(eligible)
            rate = n_evaded / n_samples if n_samples else math.nan
            records.append(
                EvalRecord(
                    split_id=split_id,
                    metric="evasion_rate",
                    value=rate,
                    extra={
                        "mode": mode,
                        "budget": budget,
                        "n_samples": n_samples,
                        "n_evaded": n_evaded,
                    },
                )
            )
    return records, results


def gradient_norm_profile(
    params: ModelParams,
    samples: list[tuple[str, RawBinary]],
    n_buckets: int = 10,
    split_id: int = 0,
):
    """Mean gradient norm per position, averaged over samples, then
    aggregated into n_buckets equal-width position buckets."""
    if not samples:
        raise EmptyManifest("no samples for the gradient profile")
    d = params.hyper.d
    if not 1 <= n_buckets <= d:
        raise ValueError(f"n_buckets must be in [1, {d}]")
    total = np.zeros(d)
    for _, binary in samples:
        vec = to_input_vector(binary, d)
        _, trace = forward(params, vec)
        G = grad_wrt_embedding(params, trace)
        total += np.linalg.norm(G, axis=1)
    profile = total / len(samples)
    edges = [round(b * d / n_buckets) for b in range(n_buckets + 1)]
    records = []
    for b in range(n_buckets):
        lo, hi = edges[b], edges[b + 1]
        records.append(
            EvalRecord(
                split_id=split_id,
                metric="grad_norm_mean",
                value=float(profile[lo:hi].mean()),
                extra={"bucket_index": b, "bucket_start": lo, "bucket_end": hi},
            )
        )
    return records


def byte_histogram(result: AttackResult) -> np.ndarray:
    """Counts of the injected byte values, shape (256,); sums to result.q."""
    if result.q == 0:
        raise NoBytes("attack injected no bytes")
    values = np.frombuffer(result.injected_bytes, dtype=np.uint8)
    return np.bincount(values, minlength=256)


def shannon_entropy(counts: np.ndarray) -> float:
    """Natural-log entropy of normalized counts."""
    counts = np.asarray(counts, dtype=np.float64)
    total = counts.sum()
    if total <= 0:
        raise ValueError("entropy of an empty histogram is undefined")
    p = counts[counts > 0] / total
    return float(-(p * np.log(p)).sum())


# --- CSV emission -----------------------------------------------------------
# All writers emit a header row, RFC-4180 quoting, LF line endings, and a
# deterministic row order, so identical inputs give bit-identical files.


def _write_rows(path: str | Path, header: list[str], rows: list[list]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def write_evasion_csv(path: str | Path, records: list[EvalRecord]) -> None:
    rows = [
        [r.split_id, r.extra["mode"], r.extra["budget"], r.extra["n_samples"],
         r.extra["n_evaded"], r.value]
        for r in records
        if r.metric == "evasion_rate"
    ]
    rows.sort(key=lambda row: (row[0], row[1], row[2]))
    _write_rows(path, ["split_id", "mode", "budget", "n_samples", "n_evaded",
                       "evasion_rate"], rows)


def write_grad_profile_csv(path: str | Path, records: list[EvalRecord]) -> None:
    rows = [
        [r.split_id, r.extra["bucket_index"], r.extra["bucket_start"],
         r.extra["bucket_end"], r.value]
        for r in records
        if r.metric == "grad_norm_mean"
    ]
    rows.sort(key=lambda row: (row[0], row[1]))
    _write_rows(path, ["split_id", "bucket_index", "bucket_start", "bucket_end",
                       "mean_norm"], rows)


def write_byte_hist_csv(path: str | Path,
                        hists: list[tuple[str, str, np.ndarray]]) -> None:
    """hists: (sample_id, mode, counts) triples; one row per byte value."""
    rows = []
    for sample_id, mode, counts in sorted(hists, key=lambda t: (t[0], t[1])):
        for byte_value in range(256):
            rows.append([sample_id, mode, byte_value, int(counts[byte_value])])
    _write_rows(path, ["sample_id", "mode", "byte_value", "count"], rows)


def write_metrics_csv(path: str | Path, rows: list[tuple]) -> None:
    """rows: (split_id, metric, value) triples, written in the given order."""
    _write_rows(path, ["split_id", "metric", "value"], [list(r) for r in rows])


# --- minimal SVG line charts ------------------------------------------------

_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def svg_line_chart(
    path: str | Path,
    series: list[tuple[str, list[float], list[float]]],
    title: str = "",
    x_label: str = "",
    y_label: str = "",
) -> None:
    """Write a small static SVG line chart; a convenience view of the CSVs."""
    width, height, margin = 640, 400, 60
    xs_all = [x for _, xs, _ in series for x in xs]
    ys_all = [y for _, _, ys in series for y in ys]
    if not xs_all:
        raise ValueError("nothing to plot")
    x_lo, x_hi = min(xs_all), max(xs_all)
    y_lo, y_hi = min(ys_all), max(ys_all)
    if x_hi == x_lo:
        x_hi = x_lo + 1.0
    if y_hi == y_lo:
        y_hi = y_lo + 1.0

    def px(x):
        return margin + (x - x_lo) / (x_hi - x_lo) * (width - 2 * margin)

    def py(y):
        return height - margin - (y - y_lo) / (y_hi - y_lo) * (height - 2 * margin)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2:.2f}" y="24" text-anchor="middle" '
        f'font-family="sans-serif" font-size="14">{title}</text>',
        f'<line x1="{margin}" y1="{height - margin}" x2="{width - margin}" '
        f'y2="{height - margin}" stroke="black"/>',
        f'<line x1="{margin}" y1="{margin}" x2="{margin}" '
        f'y2="{height - margin}" stroke="black"/>',
        f'<text x="{width / 2:.2f}" y="{height - 16}" text-anchor="middle" '
        f'font-family="sans-serif" font-size="12">{x_label}</text>',
        f'<text x="18" y="{height / 2:.2f}" text-anchor="middle" '
        f'font-family="sans-serif" font-size="12" '
        f'transform="rotate(-90 18 {height / 2:.2f})">{y_label}</text>',
        f'<text x="{margin}" y="{height - margin + 16}" font-family="sans-serif" '
        f'font-size="10">{x_lo:g}</text>',
        f'<text x="{width - margin}" y="{height - margin + 16}" text-anchor="end" '
        f'font-family="sans-serif" font-size="10">{x_hi:g}</text>',
        f'<text x="{margin - 6}" y="{height - margin}" text-anchor="end" '
        f'font-family="sans-serif" font-size="10">{y_lo:g}</text>',
        f'<text x="{margin - 6}" y="{margin + 4}" text-anchor="end" '
        f'font-family="sans-serif" font-size="10">{y_hi:g}</text>',
    ]
    for i, (label, xs, ys) in enumerate(series):
        color = _PALETTE[i % len(_PALETTE)]
        points = " ".join(f"{px(x):.2f},{py(y):.2f}" for x, y in zip(xs, ys))
        parts.append(
            f'<polyline points="{points}" fill="none" stroke="{color}" '
            f'stroke-width="1.5"/>'
        )
        parts.append(
            f'<text x="{width - margin + 4}" y="{margin + 14 * i + 10}" '
            f'font-family="sans-serif" font-size="10" fill="{color}">{label}</text>'
        )
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts) + "\n", encoding="utf-8")
