"""Package-level acceptance checks.

Each test prints one `[acceptance] <name>: PASS/FAIL (...)` line with the
measured numbers before asserting, so a full run reads as a checklist.
The heavyweight fixture (synthetic corpus -> three trained splits ->
evasion curves) is shared by all attack-quality checks and is timed
against its runtime budget.
"""

import dataclasses
import json
import os
import time

import numpy as np
import pytest

from byteveil.attack import (
    GRADIENT,
    RANDOM,
    AttackConfig,
    NoBudget,
    attack,
    compute_budget,
    select_byte,
)
from byteveil.checkpoint import load_checkpoint, params_equal, save_checkpoint
from byteveil.cli import main as cli_main
from byteveil.corpus import CorpusSpec, build_pe_bytes, generate_corpus, load_labeled
from byteveil.encoding import InputVector, to_input_vector
from byteveil.evaluate import (
    byte_histogram,
    evasion_curve,
    gradient_norm_profile,
    precision_recall,
    shannon_entropy,
    split_corpus,
)
from byteveil.model import (
    Hyper,
    decov_penalty,
    forward,
    grad_wrt_embedding,
    init_params,
)
from byteveil.pe import RawBinary, append_overlay, parse_pe
from byteveil.training import TrainConfig, train

from reference import brute_decov, brute_select_byte, central_difference_grad

FULL_D = 16384
BUDGETS = (256, 512, 1024, 2048)
PIPELINE_SECONDS = 15 * 60


def report(name: str, ok: bool, detail: str) -> None:
    print(f"[acceptance] {name}: {'PASS' if ok else 'FAIL'} ({detail})")


def _workers() -> int:
    env = os.environ.get("BYTEVEIL_THREADS")
    if env:
        return max(1, int(env))
    return min(8, os.cpu_count() or 1)


# --- gradient correctness ----------------------------------------------------


def test_gradient_matches_finite_differences():
    """20 small random models, analytic d f/d Z vs central differences.

    Inputs are either full content or leave exactly one all-padding
    window, so the pooled maximum is unique and the finite-difference
    probe never lands on a tie of the max."""
    hyper = Hyper(d=1024, window=64, stride=64, n_filters=4, h=8)
    rng = np.random.default_rng(101)
    t0 = time.perf_counter()
    worst_rel = 0.0
    worst_abs = 0.0
    n_checked = 0
    for trial in range(20):
        params = init_params(hyper, rng)
        if trial % 2 == 0:
            k = hyper.d
        else:
            lo = hyper.d - 2 * hyper.window + 1
            k = int(rng.integers(lo, hyper.d - hyper.window + 1))
        values = np.zeros(hyper.d, dtype=np.uint8)
        values[:k] = rng.integers(0, 256, k, dtype=np.uint8)
        values[k - 1] = max(1, int(values[k - 1]))
        vec = InputVector(values=values, informative_len=k)
        _, trace = forward(params, vec)

        rows = set((trace.argmax * hyper.stride).tolist()) | {0, k - 1}
        if k < hyper.d:
            rows |= {hyper.d - hyper.window, hyper.d - hyper.window + 7}
        entries = [(j, c) for j in sorted(rows) for c in range(hyper.e)][:48]
        fd = central_difference_grad(params, trace.Z, entries)
        G = grad_wrt_embedding(params, trace)
        for (j, c), want in zip(entries, fd):
            got = float(G[j, c])
            n_checked += 1
            if abs(got) < 1e-8:
                worst_abs = max(worst_abs, abs(got - want))
            else:
                worst_rel = max(worst_rel,
                                abs(got - want) / max(abs(got), abs(want)))
    elapsed = time.perf_counter() - t0
    ok = worst_rel <= 1e-3 and worst_abs <= 1e-6 and elapsed < 60.0
    report("gradient vs finite differences", ok,
           f"{n_checked} entries over 20 models, worst rel {worst_rel:.2e}, "
           f"worst abs {worst_abs:.2e}, {elapsed:.1f}s")
    assert worst_rel <= 1e-3
    assert worst_abs <= 1e-6
    assert elapsed < 60.0


# --- shared detector/attack pipeline -----------------------------------------


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """Corpus of 200 + 200 files, three stratified splits, each trained and
    attacked at every budget in both modes. Wall-clock time is recorded."""
    t0 = time.perf_counter()
    root = tmp_path_factory.mktemp("pipeline_corpus")
    spec = CorpusSpec(n_malware=200, n_benign=200, seed=11)
    manifest = generate_corpus(spec, root)
    hyper = Hyper(d=FULL_D)
    workers = _workers()

    splits = []
    for split_id, (train_entries, test_entries) in enumerate(
            split_corpus(manifest, 3, seed=11)):
        labeled_train = load_labeled(root, train_entries)
        labeled_test = load_labeled(root, test_entries)
        params = train(labeled_train, TrainConfig(hyper=hyper, seed=split_id))
        precision, recall, accuracy = precision_recall(params, labeled_test)
        samples = [(f"s{split_id}:{i}", rb)
                   for i, (rb, y) in enumerate(labeled_test) if y == 1]
        records, results = evasion_curve(
            params, samples, list(BUDGETS), seed=11, split_id=split_id,
            workers=workers,
        )
        rates = {(r.extra["mode"], r.extra["budget"]): r.value for r in records}
        profile = [r.value for r in gradient_norm_profile(
            params, samples[:40], n_buckets=10, split_id=split_id)]
        splits.append({
            "params": params,
            "accuracy": accuracy,
            "rates": rates,
            "results": results,
            "samples": dict(samples),
            "profile": profile,
        })
    return {"splits": splits, "elapsed": time.perf_counter() - t0}


def test_trained_attack_dominates_random_baseline(pipeline):
    accs = [s["accuracy"] for s in pipeline["splits"]]
    mean_rate = {
        (mode, b): float(np.mean([s["rates"][(mode, b)]
                                  for s in pipeline["splits"]]))
        for mode in (GRADIENT, RANDOM)
        for b in BUDGETS
    }
    margin = mean_rate[(GRADIENT, 2048)] - mean_rate[(RANDOM, 2048)]
    dominated = [b for b in BUDGETS
                 if mean_rate[(GRADIENT, b)] < mean_rate[(RANDOM, b)]]
    elapsed = pipeline["elapsed"]
    ok = (min(accs) >= 0.90 and margin >= 0.20 and not dominated
          and elapsed < PIPELINE_SECONDS)
    report("attack dominance", ok,
           f"accuracies {[round(a, 3) for a in accs]}, "
           f"margin at 2048 {margin:+.3f}, "
           f"gradient >= random at all of {list(BUDGETS)}: {not dominated}, "
           f"pipeline {elapsed:.0f}s")
    assert min(accs) >= 0.90
    assert margin >= 0.20
    assert not dominated
    assert elapsed < PIPELINE_SECONDS


def test_attack_score_never_exceeds_original(pipeline):
    total = 0
    violations = 0
    for split in pipeline["splits"]:
        for pairs in split["results"].values():
            for _, res in pairs:
                total += 1
                violations += res.f_final > res.f_initial
    ok = total > 0 and violations == 0
    report("score never increases", ok,
           f"{total} attack results, {violations} violations")
    assert total > 0
    assert violations == 0


def test_attack_respects_padding_constraints(pipeline):
    checked = 0
    for split in pipeline["splits"]:
        samples = split["samples"]
        for (mode, budget), pairs in split["results"].items():
            for sample_id, res in pairs:
                data = samples[sample_id].data
                k = min(len(data), FULL_D)
                assert len(res.injected_bytes) == res.q
                assert res.q <= min(k + budget, FULL_D) - k
                adv = to_input_vector(
                    RawBinary(data + res.injected_bytes), FULL_D)
                orig = to_input_vector(RawBinary(data), FULL_D)
                assert (adv.values[:k] == orig.values[:k]).all()
                checked += 1

    params = pipeline["splits"][0]["params"]
    oversized = build_pe_bytes(FULL_D + 512, np.random.default_rng(5))
    vec = to_input_vector(RawBinary(oversized), FULL_D)
    with pytest.raises(NoBudget):
        attack(params, vec, AttackConfig(q_max=2048))
    with pytest.raises(NoBudget):
        compute_budget(FULL_D, 2048, FULL_D)

    report("padding constraints", True,
           f"{checked} results: prefix intact, injected count within "
           f"budget; oversized input rejected")
    assert checked > 0


# --- overlay integrity --------------------------------------------------------


def test_overlay_preserves_every_parsed_field():
    rng = np.random.default_rng(55)
    failures = 0
    for i in range(1000):
        if i % 3 == 0:
            data = build_pe_bytes(int(rng.integers(512, 4097)), rng)
        elif i % 3 == 1:
            data = build_pe_bytes(int(rng.integers(512, 4097)), rng,
                                  motif=bytes(range(0xD0, 0xF0)))
        else:
            data = build_pe_bytes(int(rng.integers(600, 4097)), rng,
                                  motif=b"\xAA\xBB\xCC", motif_region="uniform")
        before = RawBinary(data)
        meta_before = parse_pe(before)
        overlay = rng.integers(0, 256, int(rng.integers(0, 2049)),
                               dtype=np.uint8).tobytes()
        after = append_overlay(before, overlay)
        meta_after = parse_pe(after)
        same_prefix = after.data[: before.length] == before.data
        same_fields = all(
            getattr(meta_before, f.name) == getattr(meta_after, f.name)
            for f in dataclasses.fields(meta_before)
        )
        if not (same_prefix and same_fields and meta_before == meta_after):
            failures += 1
    report("overlay integrity", failures == 0,
           f"1000 files with random overlays, {failures} failures")
    assert failures == 0


# --- byte selection oracle -----------------------------------------------------


def test_byte_selection_matches_dense_line_search():
    rng = np.random.default_rng(77)
    n_exact = 0
    n_tie = 0
    mismatches = []
    for i in range(10000):
        e = 8
        M = rng.normal(0.0, 1.0, (256, e))
        z = M[int(rng.integers(256))] if i % 3 else rng.normal(0.0, 1.0, e)
        if i % 97 == 0:
            w = np.zeros(e)
        else:
            w = rng.normal(0.0, 10.0 ** rng.uniform(-3.0, 2.0), e)
        current = int(rng.integers(256))
        got = select_byte(z, w, M, current)
        want = brute_select_byte(z, w, M, current)
        if got == want:
            n_exact += 1
            continue
        # Only an exact distance tie may separate the two (both sides then
        # take the lowest byte their arithmetic saw first).
        norm = np.linalg.norm(w)
        n = w / norm
        dist = {}
        for byte in (got, want):
            a = M[byte] - z
            s = float(a @ n)
            dist[byte] = (s, float(np.linalg.norm(a - s * n)))
        if (dist[got][0] > 0 and dist[want][0] > 0
                and abs(dist[got][1] - dist[want][1]) <= 1e-9):
            n_tie += 1
        else:
            mismatches.append((i, got, want, dist))
    ok = not mismatches
    report("byte selection vs dense line search", ok,
           f"10000 tuples: {n_exact} exact, {n_tie} distance ties, "
           f"{len(mismatches)} mismatches")
    assert not mismatches, mismatches[:3]


# --- decov penalty --------------------------------------------------------------


def test_decov_matches_brute_force_covariance():
    rng = np.random.default_rng(88)
    worst = 0.0
    for _ in range(1000):
        n = int(rng.integers(2, 11))
        h = int(rng.integers(2, 13))
        X = rng.normal(0.0, 10.0 ** rng.uniform(-2.0, 2.0), (n, h))
        a = decov_penalty(X)
        b = brute_decov(X)
        worst = max(worst, abs(a - b) / max(b, 1e-12))
    identical_ok = True
    for trial in range(50):
        row = rng.normal(0.0, 1.0, int(rng.integers(2, 13)))
        X = np.tile(row, (int(rng.integers(2, 9)), 1))
        identical_ok &= decov_penalty(X) == 0.0
    ok = worst <= 1e-6 and identical_ok
    report("decov vs brute force", ok,
           f"1000 batches, worst rel err {worst:.2e}; "
           f"identical-row batches exactly zero: {identical_ok}")
    assert worst <= 1e-6
    assert identical_ok


# --- attacked-byte statistics ----------------------------------------------------


def test_gradient_attack_concentrates_byte_values(pipeline):
    grad_entropy = []
    rand_entropy = []
    for split in pipeline["splits"]:
        grad = dict(split["results"][(GRADIENT, max(BUDGETS))])
        rand = dict(split["results"][(RANDOM, max(BUDGETS))])
        for sample_id, gres in grad.items():
            rres = rand.get(sample_id)
            if rres is None or gres.q == 0 or rres.q == 0:
                continue
            grad_entropy.append(shannon_entropy(byte_histogram(gres)))
            rand_entropy.append(shannon_entropy(byte_histogram(rres)))
    n = len(grad_entropy)
    mean_g = float(np.mean(grad_entropy))
    mean_r = float(np.mean(rand_entropy))
    lower = sum(g < r for g, r in zip(grad_entropy, rand_entropy))
    ok = n >= 30 and mean_g < mean_r and lower >= 0.8 * n
    report("byte-value concentration", ok,
           f"{n} pairs, mean entropy {mean_g:.3f} vs {mean_r:.3f}, "
           f"gradient lower in {lower}/{n}")
    assert n >= 30
    assert mean_g < mean_r
    assert lower >= 0.8 * n


def test_gradient_norm_highest_for_early_positions(pipeline):
    firsts = [s["profile"][0] for s in pipeline["splits"]]
    lasts = [s["profile"][-1] for s in pipeline["splits"]]
    ok = all(f > l for f, l in zip(firsts, lasts))
    report("positional gradient profile", ok,
           f"first decile {[f'{v:.2e}' for v in firsts]} vs "
           f"last {[f'{v:.2e}' for v in lasts]} per split")
    for f, l in zip(firsts, lasts):
        assert f > l


# --- determinism ------------------------------------------------------------------


def test_end_to_end_runs_are_bit_identical(tmp_path, capsys):
    config = {
        "d": 2048, "window": 256, "stride": 256, "n_filters": 8, "h": 16,
        "learning_rate": 0.05, "epochs": 8, "batch_size": 8, "seed": 6,
        "q_max": 64, "T": 5, "budgets": [32, 64],
    }
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps(config))

    def one_run(tag: str):
        run = tmp_path / tag
        corpus = run / "corpus"
        assert cli_main(["gen-corpus", "--out", str(corpus), "--malware", "12",
                         "--benign", "12", "--min-len", "1024", "--max-len",
                         "1600", "--seed", "4"]) == 0
        assert cli_main(["train", "--corpus", str(corpus), "--out",
                         str(run / "model.ckpt"), "--config", str(cfg_path),
                         "--metrics", str(run / "train_metrics.csv")]) == 0
        assert cli_main(["evaluate", "--model", str(run / "model.ckpt"),
                         "--corpus", str(corpus), "--out", str(run / "eval"),
                         "--config", str(cfg_path), "--samples", "4",
                         "--buckets", "5"]) == 0
        return run

    run_a = one_run("a")
    run_b = one_run("b")
    capsys.readouterr()  # drop the per-command JSON lines
    targets = ["model.ckpt", "train_metrics.csv", "eval/evasion_curve.csv",
               "eval/grad_profile.csv", "eval/byte_hist.csv",
               "eval/metrics.csv"]
    differing = [t for t in targets
                 if (run_a / t).read_bytes() != (run_b / t).read_bytes()]
    report("end-to-end determinism", not differing,
           f"{len(targets)} artifacts compared across two runs, "
           f"differing: {differing or 'none'}")
    assert not differing


def test_checkpoint_round_trip_is_bit_exact(tmp_path):
    rng = np.random.default_rng(99)
    failures = 0
    for i in range(50):
        stride = int(rng.integers(2, 10))
        window = stride * int(rng.integers(1, 4))
        d = window + stride * int(rng.integers(0, 21))
        hyper = Hyper(
            d=d,
            e=int(rng.integers(3, 10)),
            window=window,
            stride=stride,
            n_filters=int(rng.integers(1, 10)),
            h=int(rng.integers(1, 18)),
            decov_weight=float(rng.choice([0.0, 0.1, 0.5])),
        )
        params = init_params(hyper, rng)
        path = tmp_path / f"m{i}.ckpt"
        save_checkpoint(params, path)
        loaded = load_checkpoint(path)
        if not params_equal(params, loaded):
            failures += 1
    report("checkpoint round trip", failures == 0,
           f"50 random parameter sets saved and reloaded, {failures} not "
           f"bit-equal")
    assert failures == 0
