"""Command-line interface: gen-corpus, train, classify, attack, evaluate.

Logs go to stderr; each command finishes by printing a single JSON line
on stdout. Exit codes: 0 success, 1 runtime or data error, 2 usage error,
3 attack infeasible (no padding budget). BYTEVEIL_THREADS caps the worker
pool used for per-sample attack runs.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt
from . import corpus as corpus_mod
from . import evaluate as ev
from .attack import (
    GRADIENT,
    RANDOM,
    AttackConfig,
    NoBudget,
    attack,
    build_adversarial_binary,
    random_attack,
)
from .config import PROFILE_DESK, resolve_config
from .encoding import to_input_vector
from .model import classify
from .pe import PeFormatError, RawBinary, read_binary, write_binary
from .training import train

log = logging.getLogger("byteveil")


def _workers() -> int:
    env = os.environ.get("BYTEVEIL_THREADS")
    if env is not None:
        return max(1, int(env))
    return min(4, os.cpu_count() or 1)


def _emit(payload: dict) -> None:
    print(json.dumps(payload, sort_keys=True))


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file (RunConfig fields)")
    p.add_argument("--profile", default=PROFILE_DESK, choices=["desk", "paper"],
                   help="constant set to start from (default: desk)")
    p.add_argument("--seed", type=int, default=None)


def _parse_budgets(text: str) -> list[int]:
    try:
        values = [int(part) for part in text.split(",") if part.strip() != ""]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad budget list {text!r}") from exc
    return values


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="byteveil",
        description="Byte-level detector, padding-byte evasion attack, "
                    "and evaluation pipeline",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-corpus", help="generate a synthetic PE corpus")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--malware", type=int, default=200)
    p.add_argument("--benign", type=int, default=200)
    p.add_argument("--min-len", type=int, default=1024)
    p.add_argument("--max-len", type=int, default=4096)
    p.add_argument("--motif", default=None, help="hex string (default built-in)")
    p.add_argument("--motif-region", default=corpus_mod.EARLY,
                   choices=[corpus_mod.EARLY, corpus_mod.UNIFORM])
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gen_corpus)

    p = sub.add_parser("train", help="train detector(s) on a corpus")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--splits", type=int, default=1,
                   help="stratified 50/50 splits; >1 appends .{i} to --out")
    p.add_argument("--metrics", default=None,
                   help="metrics.csv path (default: next to --out)")
    _add_config_flags(p)
    p.add_argument("--d", type=int, default=None)
    p.add_argument("--window", type=int, default=None)
    p.add_argument("--stride", type=int, default=None)
    p.add_argument("--n-filters", type=int, default=None)
    p.add_argument("--h", type=int, default=None)
    p.add_argument("--decov-weight", type=float, default=None)
    p.add_argument("--learning-rate", type=float, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("classify", help="score one binary with a checkpoint")
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True)
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("attack", help="rewrite one malware binary to evade")
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True, help="adversarial output file")
    p.add_argument("--mode", default=GRADIENT, choices=[GRADIENT, RANDOM])
    p.add_argument("--q-max", "--qmax", type=int, default=None)
    p.add_argument("--iterations", "--iters", type=int, default=None,
                   help="outer iteration cap (config key: T)")
    p.add_argument("--refresh", default=None,
                   choices=["per-iteration", "per-byte"])
    _add_config_flags(p)
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("evaluate", help="full evaluation: metrics, evasion "
                                        "curves, gradient profile, histograms")
    p.add_argument("--model", required=True,
                   help="checkpoint path (with --splits N>1: path + '.{i}')")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True, help="output directory for CSVs")
    p.add_argument("--budgets", type=_parse_budgets, default=None,
                   help="comma-separated byte budgets")
    p.add_argument("--samples", type=int, default=50,
                   help="attack samples per split (default 50)")
    p.add_argument("--splits", type=int, default=1)
    p.add_argument("--buckets", type=int, default=10,
                   help="gradient profile position buckets")
    p.add_argument("--svg", action="store_true", help="also write SVG charts")
    p.add_argument("--d", type=int, default=None)
    p.add_argument("--q-max", "--qmax", type=int, default=None)
    p.add_argument("--iterations", "--iters", type=int, default=None)
    p.add_argument("--refresh", default=None,
                   choices=["per-iteration", "per-byte"])
    _add_config_flags(p)
    p.set_defaults(func=cmd_evaluate)

    return parser


def cmd_gen_corpus(args) -> int:
    motif = bytes.fromhex(args.motif) if args.motif else corpus_mod.DEFAULT_MOTIF
    spec = corpus_mod.CorpusSpec(
        n_malware=args.malware,
        n_benign=args.benign,
        min_len=args.min_len,
        max_len=args.max_len,
        motif=motif,
        motif_region=args.motif_region,
        seed=args.seed,
    )
    entries = corpus_mod.generate_corpus(spec, args.out)
    _emit({
        "command": "gen-corpus",
        "out": str(args.out),
        "n_malware": spec.n_malware,
        "n_benign": spec.n_benign,
        "n_files": len(entries),
        "manifest": str(Path(args.out) / "manifest.json"),
    })
    return 0


def _flag_overrides(args, names) -> dict:
    return {name: getattr(args, name, None) for name in names}


def cmd_train(args) -> int:
    cfg = resolve_config(args.profile, args.config, _flag_overrides(args, [
        "d", "window", "stride", "n_filters", "h", "decov_weight",
        "learning_rate", "epochs", "batch_size", "seed",
    ]))
    entries = corpus_mod.load_manifest(args.corpus)
    splits = ev.split_corpus(entries, args.splits, cfg.seed)
    metrics_rows = []
    ckpt_paths = []
    per_split = {"precision": [], "recall": [], "accuracy": []}
    for split_id, (train_entries, test_entries) in enumerate(splits):
        log.info("split %d: training on %d files", split_id, len(train_entries))
        labeled_train = corpus_mod.load_labeled(args.corpus, train_entries)
        params = train(labeled_train, cfg.train_config())
        path = args.out if args.splits == 1 else f"{args.out}.{split_id}"
        ckpt.save_checkpoint(params, path)
        ckpt_paths.append(str(path))
        labeled_test = corpus_mod.load_labeled(args.corpus, test_entries)
        precision, recall, accuracy = ev.precision_recall(params, labeled_test)
        for name, value in (("precision", precision), ("recall", recall),
                            ("accuracy", accuracy)):
            metrics_rows.append((split_id, name, value))
            per_split[name].append(value)
    for name in ("precision", "recall", "accuracy"):
        metrics_rows.append(("mean", name, float(np.mean(per_split[name]))))
    metrics_path = args.metrics or str(Path(args.out).parent / "metrics.csv")
    ev.write_metrics_csv(metrics_path, metrics_rows)
    _emit({
        "command": "train",
        "checkpoints": ckpt_paths,
        "metrics_csv": metrics_path,
        "splits": args.splits,
        "mean_accuracy": float(np.mean(per_split["accuracy"])),
    })
    return 0


def cmd_classify(args) -> int:
    params = ckpt.load_checkpoint(args.model)
    binary = read_binary(args.input)
    label, f = classify(params, binary)
    _emit({"command": "classify", "input": str(args.input), "label": label,
           "f": f})
    return 0


def cmd_attack(args) -> int:
    cfg = resolve_config(args.profile, args.config, _flag_overrides(args, [
        "q_max", "iterations", "refresh", "seed",
    ]))
    params = ckpt.load_checkpoint(args.model)
    binary = read_binary(args.input)
    vec = to_input_vector(binary, params.hyper.d)
    attack_cfg = AttackConfig(
        q_max=cfg.q_max,
        iterations=cfg.iterations,
        seed=cfg.seed,
        refresh=cfg.refresh,
    )
    run = attack if args.mode == GRADIENT else random_attack
    result = run(params, vec, attack_cfg)
    adv = build_adversarial_binary(binary, result)
    write_binary(args.out, adv)
    _emit({
        "command": "attack",
        "mode": args.mode,
        "out": str(args.out),
        "f_initial": result.f_initial,
        "f_final": result.f_final,
        "evaded": result.evaded,
        "q": result.q,
        "iterations_used": result.iterations_used,
    })
    return 0


def cmd_evaluate(args) -> int:
    explicit = _flag_overrides(args, ["d", "q_max", "iterations", "refresh",
                                      "seed"])
    if args.budgets is not None:
        if not args.budgets:
            raise UsageError("--budgets must list at least one budget")
        explicit["budgets"] = tuple(args.budgets)
    cfg = resolve_config(args.profile, args.config, explicit)

    first_model = args.model if args.splits == 1 else f"{args.model}.0"
    probe = ckpt.load_checkpoint(first_model)
    explicit_d = explicit.get("d")
    if args.config:
        from .config import load_config_file

        explicit_d = load_config_file(args.config).get("d", explicit_d)
    if explicit_d is not None and explicit_d != probe.hyper.d:
        log.error("model d=%d does not match requested d=%d",
                  probe.hyper.d, explicit_d)
        return 1

    entries = corpus_mod.load_manifest(args.corpus)
    splits = ev.split_corpus(entries, args.splits, cfg.seed)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    workers = _workers()

    evasion_records = []
    profile_records = []
    hists = []
    metrics_rows = []
    per_split = {"precision": [], "recall": [], "accuracy": []}
    max_budget = max(cfg.budgets)
    for split_id, (_, test_entries) in enumerate(splits):
        path = args.model if args.splits == 1 else f"{args.model}.{split_id}"
        params = ckpt.load_checkpoint(path)
        labeled_test = corpus_mod.load_labeled(args.corpus, test_entries)
        precision, recall, accuracy = ev.precision_recall(params, labeled_test)
        for name, value in (("precision", precision), ("recall", recall),
                            ("accuracy", accuracy)):
            metrics_rows.append((split_id, name, value))
            per_split[name].append(value)

        malware_entries = [e for e in test_entries
                           if e["label"] == corpus_mod.MALWARE_LABEL]
        rng = np.random.default_rng([cfg.seed, split_id, 0xA77AC])
        n_pick = min(args.samples, len(malware_entries))
        picked = [malware_entries[i] for i in
                  sorted(rng.choice(len(malware_entries), n_pick, replace=False))]
        samples = [
            (f"s{split_id}:{e['file']}",
             RawBinary((Path(args.corpus) / e["file"]).read_bytes()))
            for e in picked
        ]
        log.info("split %d: attacking %d samples at budgets %s",
                 split_id, len(samples), list(cfg.budgets))
        records, results = ev.evasion_curve(
            params,
            samples,
            list(cfg.budgets),
            iterations=cfg.iterations,
            seed=cfg.seed,
            refresh=cfg.refresh,
            split_id=split_id,
            workers=workers,
        )
        evasion_records.extend(records)
        profile_records.extend(
            ev.gradient_norm_profile(params, samples, args.buckets, split_id)
        )
        for mode in (GRADIENT, RANDOM):
            for sample_id, result in results.get((mode, max_budget), []):
                if result.q > 0:
                    hists.append((sample_id, mode, ev.byte_histogram(result)))

    for name in ("precision", "recall", "accuracy"):
        metrics_rows.append(("mean", name, float(np.mean(per_split[name]))))

    ev.write_evasion_csv(out_dir / "evasion_curve.csv", evasion_records)
    ev.write_grad_profile_csv(out_dir / "grad_profile.csv", profile_records)
    ev.write_byte_hist_csv(out_dir / "byte_hist.csv", hists)
    ev.write_metrics_csv(out_dir / "metrics.csv", metrics_rows)
    if args.svg:
        _write_svgs(out_dir, evasion_records, profile_records)
    _emit({
        "command": "evaluate",
        "out": str(out_dir),
        "csv": ["evasion_curve.csv", "grad_profile.csv", "byte_hist.csv",
                "metrics.csv"],
        "splits": args.splits,
        "mean_accuracy": float(np.mean(per_split["accuracy"])),
    })
    return 0


def _write_svgs(out_dir: Path, evasion_records, profile_records) -> None:
    by_mode: dict[str, dict[int, list[float]]] = {}
    for r in evasion_records:
        by_mode.setdefault(r.extra["mode"], {}).setdefault(
            r.extra["budget"], []).append(r.value)
    series = []
    for mode in sorted(by_mode):
        budgets = sorted(by_mode[mode])
        ys = [float(np.mean(by_mode[mode][b])) for b in budgets]
        series.append((mode, [float(b) for b in budgets], ys))
    ev.svg_line_chart(out_dir / "evasion_curve.svg", series,
                      title="evasion rate vs budget", x_label="budget (bytes)",
                      y_label="evasion rate")

    by_bucket: dict[int, list[float]] = {}
    for r in profile_records:
        by_bucket.setdefault(r.extra["bucket_index"], []).append(r.value)
    buckets = sorted(by_bucket)
    ev.svg_line_chart(
        out_dir / "grad_profile.svg",
        [("mean gradient norm", [float(b) for b in buckets],
          [float(np.mean(by_bucket[b])) for b in buckets])],
        title="gradient norm by position bucket", x_label="position bucket",
        y_label="mean norm",
    )


class UsageError(Exception):
    """Command-level usage problem (exit code 2)."""


def main(argv=None) -> int:
    logging.basicConfig(
        stream=sys.stderr,
        level=logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except NoBudget as exc:
        log.error("attack infeasible: %s", exc)
        return 3
    except UsageError as exc:
        log.error("usage: %s", exc)
        return 2
    except (PeFormatError, ckpt.CheckpointError, ev.EmptyManifest,
            ev.DegenerateSplit, ValueError, RuntimeError, OSError,
            json.JSONDecodeError) as exc:
        log.error("%s", exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
