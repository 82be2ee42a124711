"""Acceptance suite: one test per criterion, each ending in a printed
PASS line (run with ``pytest tests/test_acceptance.py -v -s``).

The heavyweight fixture trains, for three seeds, an undersized single-layer
LSTM (32 hidden units) on a synthetic hidden-class bigram corpus and then a
gate on top of the frozen base with the standard recipe. Criteria 3, 4, 6,
8, and 9 all consume those artifacts.
"""

import hashlib
import json
import math
import time

import numpy as np
import pytest

import helpers
from ioglm import checkpoint, cli, corpus, evaluate, gate, model, synthdata, training

SEEDS = (11, 12, 13)
N_CLASSES = 8
WORDS_PER_CLASS = 50


def _sha(arr):
    return hashlib.sha256(np.ascontiguousarray(arr).tobytes()).hexdigest()


def _hash_params(params):
    return {k: _sha(v) for k, v in params.named_arrays().items()}


@pytest.fixture(scope="module")
def synth_runs(tmp_path_factory):
    """Three-seed synthetic experiment; returns per-seed artifacts plus the
    wall time of the whole training phase."""
    workdir = tmp_path_factory.mktemp("synth")
    started = time.perf_counter()
    runs = []
    for seed in SEEDS:
        data = synthdata.generate_class_bigram_corpus(
            seed=1000 + seed, n_classes=N_CLASSES, words_per_class=WORDS_PER_CLASS,
            train_tokens=40000, valid_tokens=3000, test_tokens=3000,
            noise=0.15, zipf_exponent=1.5,
        )
        vocab = corpus.build_vocab(data.train_lines)
        streams = {
            "train": corpus.encode(data.train_lines, vocab),
            "valid": corpus.encode(data.valid_lines, vocab),
            "test": corpus.encode(data.test_lines, vocab),
        }
        base = model.init_params(len(vocab), 32, 32, layers=1, cell_kind="lstm", seed=seed)
        base_cfg = training.TrainConfig(
            phase="base", batch_size=16, bptt_length=20, max_epochs=5,
            optimizer="adam", initial_lr=0.002, lr_schedule="constant",
            dropout_rate=0.0, grad_clip_norm=5.0, seed=seed,
        )
        base_best, _ = training.train_base(base_cfg, streams["train"], streams["valid"], base)
        base_ppl = evaluate.perplexity(base_best, streams["valid"]).perplexity

        hashes_before = _hash_params(base_best)
        g = gate.init_gate(len(vocab), d_g=300, variant="input_only", seed=seed + 50)
        iog_cfg = training.iog_config(batch_size=16, bptt_length=20, seed=seed + 100)
        gate_best, _ = training.train_iog(
            iog_cfg, streams["train"], streams["valid"], base_best, g
        )
        hashes_after = _hash_params(base_best)
        gated_ppl = evaluate.perplexity(base_best, streams["valid"], gate=gate_best).perplexity

        runs.append({
            "seed": seed,
            "data": data,
            "vocab": vocab,
            "streams": streams,
            "base": base_best,
            "gate": gate_best,
            "base_valid_ppl": base_ppl,
            "gated_valid_ppl": gated_ppl,
            "base_hashes_before": hashes_before,
            "base_hashes_after": hashes_after,
        })
    elapsed = time.perf_counter() - started

    # seed-11 artifacts on disk for the CLI-driven criteria
    first = runs[0]
    paths = synthdata.write_corpus(first["data"], workdir)
    base_ckpt = workdir / "base.ckpt"
    checkpoint.save_checkpoint(base_ckpt, first["vocab"], first["base"],
                               config={"command": "fixture"})
    return {"runs": runs, "elapsed": elapsed, "paths": paths,
            "base_ckpt": str(base_ckpt), "workdir": workdir}


def test_criterion_01_gradient_oracle_suite():
    """Analytic gradients match central differences across the full
    {cell} x {tying} x {gate variant} matrix at 64-bit."""
    started = time.perf_counter()
    rng = np.random.default_rng(2024)
    configs = []
    for cell_kind in ("elman", "lstm"):
        for tied in (False, True):
            for variant in ("input_only", "with_hidden", "lstm_gate"):
                configs.append((cell_kind, tied, variant))
    assert len(configs) >= 12

    worst_base = worst_gate = 0.0
    for index, (cell_kind, tied, variant) in enumerate(configs):
        vocab_size = int(rng.integers(7, 21))
        d_h = int(rng.integers(5, 17))
        d_e = d_h if tied else int(rng.integers(5, 17))
        layers = int(rng.integers(1, 3))
        d_g = int(rng.integers(4, 9))
        base = helpers.params64(vocab_size, d_e, d_h, layers=layers, cell_kind=cell_kind,
                                tie_weights=tied, seed=300 + index)
        g = helpers.gate64(vocab_size, d_g, variant=variant,
                           d_h=d_h if variant == "with_hidden" else None, seed=400 + index)
        inputs, targets = helpers.random_inputs(rng, vocab_size, 2, 3)

        base_err = helpers.lm_gradient_error(base, inputs, targets, max_coords=120, rng=rng)
        gate_err = helpers.gate_gradient_error(base, g, inputs, targets, max_coords=120,
                                               rng=rng)
        assert base_err < 1e-3, f"{cell_kind}/tied={tied}: base gradient error {base_err}"
        assert gate_err < 1e-3, f"{variant}: gate gradient error {gate_err}"
        worst_base = max(worst_base, base_err)
        worst_gate = max(worst_gate, gate_err)

    elapsed = time.perf_counter() - started
    assert elapsed < 120.0
    print(f"CRITERION 1 PASS: {len(configs)} configs, worst base rel-err "
          f"{worst_base:.2e}, worst gate rel-err {worst_gate:.2e}, {elapsed:.1f}s")


def test_criterion_02_identity_gate_equivalence(synth_runs):
    """All-ones gate reproduces the ungated perplexity on a 10k-token stream."""
    run = synth_runs["runs"][0]
    stream = run["streams"]["train"][:10001]
    assert stream.shape[0] == 10001
    started = time.perf_counter()
    forced = evaluate.perplexity(run["base"], stream, gate=run["gate"], identity_gate=True)
    plain = evaluate.perplexity(run["base"], stream)
    elapsed = time.perf_counter() - started
    diff = abs(forced.perplexity - plain.perplexity)
    assert diff < 1e-9
    assert elapsed < 10.0
    print(f"CRITERION 2 PASS: |gated(1) - ungated| = {diff:.3e} on "
          f"{forced.tokens} tokens, {elapsed:.2f}s")


def test_criterion_03_frozen_base_contract(synth_runs):
    """Every base array is bit-identical across the whole gate training run."""
    for run in synth_runs["runs"]:
        assert run["base_hashes_before"] == run["base_hashes_after"], (
            f"seed {run['seed']}: base parameters changed during gate training"
        )
    arrays = len(synth_runs["runs"][0]["base_hashes_before"])
    print(f"CRITERION 3 PASS: {arrays} base arrays checksum-identical "
          f"across {len(SEEDS)} gate-training runs")


def test_criterion_04_synthetic_corpus_improvement(synth_runs):
    """The gated model beats the frozen base by >= 1% validation perplexity
    on the hidden-class corpus, for every seed."""
    gains = []
    for run in synth_runs["runs"]:
        rel = (run["base_valid_ppl"] - run["gated_valid_ppl"]) / run["base_valid_ppl"]
        gains.append(rel)
        assert rel >= 0.01, (
            f"seed {run['seed']}: base {run['base_valid_ppl']:.2f} -> "
            f"gated {run['gated_valid_ppl']:.2f} ({rel * 100:.2f}% < 1%)"
        )
    assert synth_runs["elapsed"] < 600.0
    summary = ", ".join(
        f"seed {r['seed']}: {r['base_valid_ppl']:.1f}->{r['gated_valid_ppl']:.1f} "
        f"({g * 100:.1f}%)"
        for r, g in zip(synth_runs["runs"], gains)
    )
    print(f"CRITERION 4 PASS: {summary}; training took {synth_runs['elapsed']:.0f}s")


def test_criterion_05_ensemble_jensen_bound():
    """Averaged-ensemble NLL never exceeds the mean member NLL."""
    rng = np.random.default_rng(77)
    checks = 0
    for m_count in (2, 5):
        members = [model.init_params(23, 8, 8, seed=500 + m_count * 10 + i)
                   for i in range(m_count)]
        shared = gate.init_gate(23, d_g=6, seed=600 + m_count,
                                weight_scale=0.3, bias_init=0.5)
        for trial in range(2):
            stream = rng.integers(0, 23, size=1200)
            for g in (None, shared):
                report = evaluate.ensemble_perplexity(members, stream, gate=g)
                mean_nll = sum(r["nll"] for r in report.members) / m_count
                assert report.nll <= mean_nll + 1e-9
                checks += 1
    print(f"CRITERION 5 PASS: Jensen bound held in {checks} ensemble evaluations "
          f"(M in {{2, 5}}, plain and gated)")


def test_criterion_06_shared_gate_ensemble_contract(synth_runs):
    """Instrumented evaluation sees the identical gate vector applied to
    every member at every timestep."""
    run = synth_runs["runs"][0]
    members = [run["base"], model.init_params(len(run["vocab"]), 32, 32, seed=777)]
    stream = run["streams"]["valid"][:2001]
    for g in (run["gate"],
              gate.init_gate(len(run["vocab"]), d_g=12, variant="lstm_gate", seed=778,
                             weight_scale=0.3, bias_init=0.5)):
        digests = {}
        counts = {}
        def probe(t, member_index, vec):
            digests.setdefault(t, set()).add(_sha(vec))
            counts[t] = counts.get(t, 0) + 1
        evaluate.ensemble_perplexity(members, stream, gate=g, chunk=64, gate_probe=probe)
        assert len(digests) == stream.shape[0] - 1
        assert all(len(d) == 1 for d in digests.values()), "gate vectors differed"
        assert all(c == len(members) for c in counts.values())
    print(f"CRITERION 6 PASS: one shared gate vector per timestep across "
          f"{len(members)} members, {stream.shape[0] - 1} timesteps, both gate kinds")


def test_criterion_07_recipe_fidelity(tmp_path, capsys):
    """A default gate-training run emits exactly 5 epochs with the
    0.001/sqrt(epoch) schedule and echoes the 50% dropout rate."""
    data = synthdata.generate_class_bigram_corpus(
        seed=42, n_classes=4, words_per_class=20, train_tokens=2400, valid_tokens=400,
        test_tokens=200,
    )
    paths = synthdata.write_corpus(data, tmp_path, prefix="tiny")
    vocab = corpus.build_vocab(data.train_lines)
    base = model.init_params(len(vocab), 16, 16, seed=1)
    base_ckpt = tmp_path / "base.ckpt"
    checkpoint.save_checkpoint(base_ckpt, vocab, base, config=None)

    gated_ckpt = tmp_path / "gated.ckpt"
    metrics_path = tmp_path / "metrics.jsonl"
    code = cli.main([
        "train-iog", "--base-checkpoint", str(base_ckpt), "--train", paths["train"],
        "--valid", paths["valid"], "--checkpoint-out", str(gated_ckpt),
        "--metrics-out", str(metrics_path),
    ])
    capsys.readouterr()
    assert code == 0

    records = [json.loads(line) for line in metrics_path.read_text().splitlines()]
    assert [r["epoch"] for r in records] == [1, 2, 3, 4, 5]
    for record in records:
        expected = 0.001 / math.sqrt(record["epoch"])
        assert abs(record["lr"] - expected) < 1e-12
    echo = checkpoint.load_checkpoint(gated_ckpt).config
    assert echo["dropout_rate"] == 0.5
    assert echo["max_epochs"] == 5
    assert echo["d_g"] == 300
    lr_seq = ", ".join(f"{r['lr']:.6f}" for r in records)
    print(f"CRITERION 7 PASS: 5 epochs, lr sequence [{lr_seq}], dropout 0.5 echoed")


def test_criterion_08_variant_comparison_harness(synth_runs, capsys):
    """variant-compare produces a three-row table whose parameter deltas
    match shape arithmetic exactly; the full-scale ordering is reported
    without being gated."""
    paths = synth_runs["paths"]
    d_g = 48
    code = cli.main([
        "variant-compare", "--base-checkpoint", synth_runs["base_ckpt"],
        "--train", paths["train"], "--valid", paths["valid"], "--test", paths["test"],
        "--d-g", str(d_g), "--max-epochs", "1", "--batch-size", "16",
        "--bptt-length", "20", "--json",
    ])
    out = capsys.readouterr().out
    assert code == 0
    rows = json.loads(out.strip().splitlines()[-1])
    assert [r["variant"] for r in rows] == ["input_only", "with_hidden", "lstm_gate"]

    vocab_size = len(synth_runs["runs"][0]["vocab"])
    d_h = synth_runs["runs"][0]["base"].d_h
    assert rows[0]["delta_vs_input_only"] == 0
    assert rows[1]["delta_vs_input_only"] == vocab_size * d_h
    assert rows[2]["delta_vs_input_only"] == 8 * d_g * d_g + 4 * d_g
    ranking = sorted(rows, key=lambda r: r["valid_ppl"])
    directional = "replicated" if ranking[0]["variant"] == "input_only" else "not replicated"
    print(
        "CRITERION 8 PASS: 3 rows, deltas "
        f"+{rows[1]['delta_vs_input_only']} / +{rows[2]['delta_vs_input_only']} exact; "
        f"directional ordering (input_only best) {directional}: "
        + ", ".join(f"{r['variant']}={r['valid_ppl']:.1f}" for r in rows)
    )


def test_criterion_09_analysis_sanity(synth_runs):
    """For each class representative, the top-5 gate-weighted words fall in
    the planted successor class (>= 4 of 5), for a majority of seeds."""
    per_class_passes = [0] * N_CLASSES
    for run in synth_runs["runs"]:
        data = run["data"]
        freq = corpus.count_frequencies(run["streams"]["train"], len(run["vocab"]))
        for cls in range(N_CLASSES):
            rep = data.words[cls * WORDS_PER_CLASS]
            successor = int(data.successor_class[cls * WORDS_PER_CLASS])
            members = set(data.class_members(successor))
            top = gate.top_weighted_words(
                run["gate"], rep, run["vocab"], k=5, min_freq=10, frequencies=freq
            )
            in_class = sum(1 for word, _ in top if word in members)
            if in_class >= 4:
                per_class_passes[cls] += 1
    majority = (len(SEEDS) // 2) + 1
    assert all(p >= majority for p in per_class_passes), per_class_passes
    print(f"CRITERION 9 PASS: per-class seed passes {per_class_passes} "
          f"(majority needed: {majority}/{len(SEEDS)})")


def test_criterion_10_determinism(tmp_path, capsys):
    """Reruns with identical seed/config/data give byte-identical checkpoints
    and identical metrics (modulo the wall-clock field)."""
    data = synthdata.generate_class_bigram_corpus(
        seed=9, n_classes=4, words_per_class=20, train_tokens=2400, valid_tokens=400,
        test_tokens=200,
    )
    paths = synthdata.write_corpus(data, tmp_path, prefix="det")
    vocab_path = tmp_path / "vocab.txt"
    assert cli.main(["build-vocab", "--train", paths["train"],
                     "--output", str(vocab_path)]) == 0

    base_ckpt = tmp_path / "base.ckpt"
    base_metrics = tmp_path / "base.jsonl"
    gated_ckpt = tmp_path / "gated.ckpt"
    gated_metrics = tmp_path / "gated.jsonl"

    def one_round():
        # identical arguments each time: reruns must reproduce the outputs
        assert cli.main([
            "train", "--train", paths["train"], "--valid", paths["valid"],
            "--vocab", str(vocab_path), "--checkpoint-out", str(base_ckpt),
            "--metrics-out", str(base_metrics), "--d-e", "16", "--d-h", "16",
            "--batch-size", "8", "--bptt-length", "10", "--max-epochs", "2",
            "--optimizer", "adam", "--initial-lr", "0.005", "--lr-schedule", "constant",
            "--seed", "3",
        ]) == 0
        assert cli.main([
            "train-iog", "--base-checkpoint", str(base_ckpt), "--train", paths["train"],
            "--valid", paths["valid"], "--checkpoint-out", str(gated_ckpt),
            "--metrics-out", str(gated_metrics), "--batch-size", "8",
            "--bptt-length", "10", "--max-epochs", "2", "--d-g", "24", "--seed", "3",
        ]) == 0
        capsys.readouterr()
        assert cli.main(["eval", "--checkpoint", str(gated_ckpt),
                         "--data", paths["test"]]) == 0
        eval_out = capsys.readouterr().out

        def stripped(metrics_path):
            records = [json.loads(line) for line in metrics_path.read_text().splitlines()]
            for r in records:
                r.pop("wall_seconds")  # wall time legitimately differs between runs
            return records

        return (base_ckpt.read_bytes(), stripped(base_metrics),
                gated_ckpt.read_bytes(), stripped(gated_metrics), eval_out)

    a = one_round()
    b = one_round()
    assert a[0] == b[0], "base checkpoints differ"
    assert a[2] == b[2], "gated checkpoints differ"
    assert a[1] == b[1]
    assert a[3] == b[3]
    assert a[4] == b[4], "evaluation reports differ"
    print("CRITERION 10 PASS: byte-identical checkpoints, identical metrics "
          "and eval reports across reruns")
