"""Acceptance suite: one test per criterion, at the stated tolerances.

Criteria 3-6 evaluate trained checkpoints produced by
scripts/reproduce_training.sh (committed under artifacts/); they fail with
instructions when the artifacts are missing. Everything else runs live.
Each test prints one ACCEPTANCE line; run with -s to see them.
"""

import json
import time
from pathlib import Path

import numpy as np
import pytest

from schemakit import nn
from schemakit.datagen import GenConfig, gen_pair, random_grammar
from schemakit.engine import ModelBackend, OracleBackend, run_inference
from schemakit.extract import ClonedHMM, CscgSchemaExtractor, EnumerativeRuleMiner
from schemakit.grammar import evaluate as eval_tree
from schemakit.grammar import parse_tree, validate_grammar
from schemakit.model import SingleStepDecomposer
from schemakit.nn import AdamConfig, AdamState, ModelConfig
from schemakit.scan import (
    SPLIT_IDS,
    ablate_boundary_noise,
    atomic_demo_pairs,
    demo_lines,
    evaluate_backend,
    make_split,
    one_step_demo_pairs,
    scan_grammar,
    subsample_examples,
)
from schemakit.tokens import VocabConfig

ARTIFACTS = Path(__file__).resolve().parent.parent / "artifacts"
MISSING = (
    "trained checkpoint missing: run scripts/reproduce_training.sh first "
    "(criteria 3-6 evaluate committed desk-scale training artifacts)"
)

PAPER_BAND = {"full": 99.59, "simple": 99.50, "length": 99.35, "prim_jump": 99.65, "temp_or": 99.55}


def announce(criterion: int, ok: bool, detail: str) -> None:
    print(f"\nACCEPTANCE {criterion}: {'PASS' if ok else 'FAIL'} - {detail}")
    assert ok, detail


def checkpoint(name: str) -> Path:
    path = ARTIFACTS / name
    if not path.exists():
        pytest.fail(MISSING + f" (missing {path.name})")
    return path


@pytest.fixture(scope="module")
def fixture():
    g, amap = scan_grammar()
    return g, amap


def test_criterion_1_oracle_grounding(fixture):
    g, amap = fixture
    t0 = time.time()
    accuracies = {}
    for split_id in SPLIT_IDS:
        _, test = make_split(split_id)
        report = evaluate_backend(OracleBackend(g), g, amap, test, split=split_id, seed=0)
        accuracies[split_id] = report.accuracy
    elapsed = time.time() - t0
    ok = all(a == 1.0 for a in accuracies.values()) and elapsed < 300
    announce(
        1,
        ok,
        f"oracle pipeline exact match {accuracies} on full test sets in {elapsed:.0f}s (<300s)",
    )


def test_criterion_2_random_grammar_soundness():
    # primitive space sized so deep trees keep enough placeholder headroom
    cfg = GenConfig(
        vocab=VocabConfig(n_primitives=192, n_modifiers=10, max_args_side=2, n_schemas=16),
        depth_mode=6,
        seed=2024,
    )
    rng = np.random.default_rng(2024)
    n = 10_000
    mismatches = 0
    bound_violations = 0
    for _ in range(n):
        g = random_grammar(cfg, rng)
        x, _ = gen_pair(g, cfg, rng)
        result = run_inference(OracleBackend(g), g, x, n_primitives=cfg.vocab.n_primitives)
        expected = eval_tree(g, parse_tree(g, x))
        if not result.ok or tuple(result.output) != expected:
            mismatches += 1
            continue
        depth = parse_tree(g, x).depth()
        if result.iterations > depth + 1:
            bound_violations += 1

    # logarithmic-bound clause on balanced binary-arity instances
    from schemakit.grammar import ArgRef, Grammar, GrammarBounds, Literal, Schema, Slot
    from schemakit.tokens import mod, out, prim

    log_ok = True
    log_points = []
    for depth in range(0, 7):
        schemas = [
            Schema(i, (Slot(), Literal(mod(i)), Slot()), priority=i,
                   eval_template=(ArgRef(0), ArgRef(1)))
            for i in range(depth + 1)
        ]
        bounds = GrammarBounds(200, 8, 2, 8)
        g = Grammar(schemas, {prim(i): (out(i),) for i in range(200)}, bounds)

        counter = [0]

        def build(level):
            if level > depth:
                counter[0] += 1
                return [prim((counter[0] - 1) % 8)]  # few leaf prims: deep pool
            return build(level + 1) + [mod(level)] + build(level + 1)

        x = build(0)
        result = run_inference(OracleBackend(g), g, x, n_primitives=200)
        limit = int(np.ceil(np.log2(len(x)))) + 2 if len(x) > 1 else 2
        log_points.append((len(x), result.iterations))
        if not result.ok or result.iterations > limit:
            log_ok = False
    ok = mismatches == 0 and bound_violations == 0 and log_ok
    announce(
        2,
        ok,
        f"{n} random pairs depth<=6: {n - mismatches} exact, "
        f"{bound_violations} depth-bound violations; balanced binary (N, iters) {log_points}",
    )


def _eval_model(est, g, amap, split_id, subsample=1000, seed=0, include_priorities=None):
    _, test = make_split(split_id)
    backend = ModelBackend(est, g, include_priorities=include_priorities)
    return evaluate_backend(
        backend, g, amap, test, split=split_id, seed=seed, subsample=subsample
    )


def test_criterion_3_desk_scale_neural(fixture):
    g, amap = fixture
    est = SingleStepDecomposer.from_checkpoint(checkpoint("scan_model.ckpt"))
    manifest = json.loads((ARTIFACTS / "scan_model_manifest.json").read_text())
    assert manifest["train_hours"] <= 8.0, "training exceeded the 8 CPU-hour budget"
    results = {}
    for split_id in SPLIT_IDS:
        report = _eval_model(est, g, amap, split_id)
        results[split_id] = report.accuracy
    floor = 0.90  # compute-limited desk-scale threshold; budget recorded in manifest
    ok = all(acc >= floor for acc in results.values())
    shown = {k: f"{v:.2%} (paper {PAPER_BAND[k]}%)" for k, v in results.items()}
    announce(
        3,
        ok,
        f"trained model on 1000-example subsamples {shown}; "
        f"budget {manifest['train_hours']:.2f}h/{manifest['steps']} steps (floor {floor:.0%})",
    )


def test_criterion_4_boundary_noise(fixture):
    g, amap = fixture
    est = SingleStepDecomposer.from_checkpoint(checkpoint("scan_model.ckpt"))
    rng = np.random.default_rng(7)
    bad = ablate_boundary_noise(g, 1, rng)
    assert validate_grammar(bad).ok
    _, test = make_split("full")
    backend = ModelBackend(est, bad)
    report = evaluate_backend(backend, bad, amap, test, split="full", seed=0, subsample=1000)
    ok = report.accuracy < 0.01
    announce(
        4,
        ok,
        f"magnitude-1 boundary noise: accuracy {report.accuracy:.3%} (<1%; paper 0.065 +/-ated 0.021%)",
    )


def test_criterion_5_priority_tokens(fixture):
    g, amap = fixture
    base = SingleStepDecomposer.from_checkpoint(checkpoint("twin_priority.ckpt"))
    twin = SingleStepDecomposer.from_checkpoint(checkpoint("twin_nopriority.ckpt"))
    assert base.gen_config_.include_priorities
    assert not twin.gen_config_.include_priorities
    assert base.state_.step == twin.state_.step, "twins must train at matched budget"
    base_acc = _eval_model(base, g, amap, "full").accuracy
    twin_acc = _eval_model(twin, g, amap, "full", include_priorities=False).accuracy
    drop = base_acc - twin_acc
    ok = drop >= 0.15
    announce(
        5,
        ok,
        f"priority ablation: {base_acc:.2%} -> {twin_acc:.2%}, drop {drop:.1%} "
        f"(>=15 points; paper 99.59 -> 71.92)",
    )


def test_criterion_6_unbounded_depth(fixture):
    g, amap = fixture
    base = SingleStepDecomposer.from_checkpoint(checkpoint("twin_priority.ckpt"))
    twin = SingleStepDecomposer.from_checkpoint(checkpoint("twin_unbounded.ckpt"))
    assert twin.gen_config_.depth_mode != "two_deep"
    assert base.state_.step == twin.state_.step, "twins must train at matched budget"
    base_acc = _eval_model(base, g, amap, "full").accuracy
    twin_acc = _eval_model(twin, g, amap, "full").accuracy
    ok = twin_acc < base_acc
    announce(
        6,
        ok,
        f"unbounded-depth ablation: 2-deep {base_acc:.2%} vs unbounded {twin_acc:.2%}, "
        f"gap {base_acc - twin_acc:.1%} (direction required; paper peak <50%)",
    )


def test_criterion_7_extractors(fixture):
    gold, gold_map = fixture
    atomic = demo_lines(atomic_demo_pairs()).splitlines()
    one_step = demo_lines(one_step_demo_pairs()).splitlines()
    cscg = CscgSchemaExtractor(min_support=2, n_clones=5, em_iters=5, seed=0).fit(atomic, one_step)
    miner = EnumerativeRuleMiner().fit(atomic, one_step)
    ok_validators = validate_grammar(cscg.grammar_).ok and validate_grammar(miner.grammar_).ok

    _, test = make_split("simple")
    held_out = subsample_examples(test, 500, seed=77)
    accs = {}
    outputs = {}
    for name, (g, amap) in {
        "cscg": (cscg.grammar_, cscg.anon_map_),
        "miner": (miner.grammar_, miner.anon_map_),
    }.items():
        correct = 0
        outs = []
        for ex in held_out:
            result = run_inference(OracleBackend(g), g, amap.encode_command(list(ex.command)))
            words = amap.decode_output(result.output) if result.ok else None
            outs.append(words)
            correct += words == list(ex.actions)
        accs[name] = correct / len(held_out)
        outputs[name] = outs
    agree = np.mean([a == b for a, b in zip(outputs["cscg"], outputs["miner"])])

    # Copeland ranks: directional/compound above twice/thrice above and/after
    idx = {str(r): i for i, r in enumerate(cscg.rules_)}
    score = lambda s: cscg.scores_[idx[s]]
    tiers_ok = (
        min(score("<V0> left => LTURN <V0>"), score("<V0> right => RTURN <V0>"),
            score("turn <V0> => <V0>"))
        > max(score("<V0> twice => <V0> <V0>"), score("<V0> thrice => <V0> <V0> <V0>"))
        > max(score("<V0> and <V1> => <V0> <V1>"), score("<V0> after <V1> => <V1> <V0>"))
    )
    ok = ok_validators and accs["cscg"] >= 0.99 and accs["miner"] >= 0.99 and agree >= 0.99 and tiers_ok
    announce(
        7,
        ok,
        f"extractors on 500 held-out: cscg {accs['cscg']:.2%}, miner {accs['miner']:.2%}, "
        f"agreement {agree:.2%}, Copeland tiers ordered {tiers_ok}",
    )


def test_criterion_8_numeric_kernel():
    micro = ModelConfig(context_len=12, d_model=16, n_layers=2, n_heads=2, d_ff=24, vocab_size=11)
    params = nn.init_params(micro, seed=0, dtype=np.float64)
    rng = np.random.default_rng(1)
    ids = rng.integers(0, 11, size=(2, 9))
    targets = rng.integers(0, 11, size=(2, 9))
    mask = np.zeros((2, 9))
    mask[:, 3:8] = 1.0
    _, grads = nn.loss_and_grads(params, ids, targets, mask, micro)
    h = 1e-5
    worst = 0.0
    for name, p in params.items():
        flat = p.reshape(-1)
        for idx in rng.choice(flat.size, size=min(3, flat.size), replace=False):
            orig = flat[idx]
            flat[idx] = orig + h
            lp, _ = nn.loss_and_grads(params, ids, targets, mask, micro)
            flat[idx] = orig - h
            lm, _ = nn.loss_and_grads(params, ids, targets, mask, micro)
            flat[idx] = orig
            fd = (lp - lm) / (2 * h)
            g = grads[name].reshape(-1)[idx]
            worst = max(worst, abs(fd - g) / max(abs(fd), abs(g), 1e-8))
    grad_ok = worst <= 1e-4

    seqs = [f"IN: {c} <SEP> {a} <EOS>".split() for c, a in atomic_demo_pairs()[:40]]
    model = ClonedHMM(n_clones=8, n_iter=50, seed=0).fit(seqs)
    hist = model.loglik_history_
    em_ok = all(b - a >= -1e-9 for a, b in zip(hist, hist[1:]))
    announce(
        8,
        grad_ok and em_ok,
        f"finite-difference worst relative error {worst:.2e} (<=1e-4) across all weight "
        f"families; EM log-likelihood monotone over {len(hist)} iterations ({em_ok})",
    )


def test_criterion_9_determinism(fixture):
    g, amap = fixture
    _, test = make_split("simple")
    r1 = evaluate_backend(OracleBackend(g), g, amap, test, split="simple", seed=5, subsample=200)
    r2 = evaluate_backend(OracleBackend(g), g, amap, test, split="simple", seed=5, subsample=200)
    eval_ok = r1 == r2

    cfg = GenConfig(
        vocab=VocabConfig(n_primitives=48, n_modifiers=10, max_args_side=2, n_schemas=16),
        depth_mode=6,
        seed=99,
    )

    def soundness_run():
        rng = np.random.default_rng(99)
        outs = []
        for _ in range(200):
            gg = random_grammar(cfg, rng)
            x, _ = gen_pair(gg, cfg, rng)
            result = run_inference(OracleBackend(gg), gg, x, n_primitives=48)
            outs.append(tuple(result.output or ()))
        return outs

    sound_ok = soundness_run() == soundness_run()

    def short_training():
        from schemakit.datagen import bucketed_stream
        from schemakit.model import TrainState, train_step

        vocab = VocabConfig()
        gen = GenConfig(vocab=vocab, seed=3, batch_size=16, context_len=256)
        state = TrainState.fresh(ModelConfig(vocab_size=vocab.size), gen, AdamConfig(), seed=3)
        batches = bucketed_stream(gen, group=2)
        return [train_step(state, next(batches)) for _ in range(20)]

    train_ok = short_training() == short_training()

    ok = eval_ok and sound_ok and train_ok
    announce(
        9,
        ok,
        f"bit-identical reruns: eval report {eval_ok}, oracle soundness traces {sound_ok}, "
        f"training losses {train_ok}",
    )
