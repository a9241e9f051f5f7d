"""Command-line entry point: gen, train, extract, infer, eval, ablate, inspect.

Every artifact-producing run writes a manifest.json (arguments, seed, package
version, input digests) next to its outputs so it can be re-executed exactly.
Exit codes: 0 success, 1 expected failure (e.g. --require unmet), 2 usage.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .codec import dump_anonymization, load_anonymization
from .datagen import GenConfig, stream
from .engine import ModelBackend, OracleBackend, run_inference, trace_lines
from .errors import SchemakitError
from .grammar import dump_grammar, load_grammar, validate_grammar
from .model import SingleStepDecomposer, load_checkpoint, training_curve_csv
from .nn import param_count
from .scan import (
    SPLIT_IDS,
    ablate_boundary_noise,
    atomic_demo_pairs,
    demo_lines,
    evaluate_backend,
    load_split,
    make_split,
    one_step_demo_pairs,
    report_csv,
    scan_grammar,
    write_splits,
)
from .tokens import VocabConfig


def _digest(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()[:16]


def _write_manifest(out_dir: Path, args: argparse.Namespace, inputs: list[Path]) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = {
        "command": " ".join(sys.argv),
        "args": {k: str(v) for k, v in vars(args).items() if k != "func"},
        "version": __version__,
        "time": time.strftime("%Y-%m-%dT%H:%M:%S"),
        "inputs": {str(p): _digest(p) for p in inputs if p and p.exists()},
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")


def _add_vocab_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--P", type=int, default=16, help="primitive count")
    p.add_argument("--M", type=int, default=12, help="modifier count")
    p.add_argument("--A-max", type=int, default=2, dest="a_max", help="max args per side")
    p.add_argument("--S", type=int, default=20, help="schema count")


def _vocab_from(args) -> VocabConfig:
    return VocabConfig(args.P, args.M, args.a_max, args.S)


def _load_backend(spec: str, grammar, amap):
    if spec == "oracle":
        return OracleBackend(grammar)
    if spec.startswith("model:"):
        est = SingleStepDecomposer.from_checkpoint(spec[len("model:") :])
        return ModelBackend(est, grammar)
    raise SchemakitError(f"unknown backend {spec!r}; use 'oracle' or 'model:PATH'")


def _fixture_or_file(args):
    if args.grammar:
        g = load_grammar(Path(args.grammar).read_text())
        amap = load_anonymization(Path(args.anon).read_text()) if args.anon else None
        if amap is None:
            _, amap = scan_grammar()  # SCAN surfaces by default
        return g, amap
    return scan_grammar()


# --- subcommands ---------------------------------------------------------------


def cmd_gen(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.what == "scan":
        write_splits(out, seed=args.seed)
        print(f"wrote SCAN split files to {out}")
    elif args.what == "demos":
        (out / "atomic_demos.txt").write_text(demo_lines(atomic_demo_pairs()))
        (out / "one_step_demos.txt").write_text(demo_lines(one_step_demo_pairs()))
        print(f"wrote demonstration corpora to {out}")
    elif args.what == "stream":
        cfg = GenConfig(
            vocab=_vocab_from(args),
            seed=args.seed,
            new_grammar_interval=args.interval,
            smoothing=args.smoothing,
            batch_size=args.batch_size,
            context_len=args.context_len,
            depth_mode=args.depth_mode if args.depth_mode == "two_deep" else int(args.depth_mode),
            include_priorities=not args.no_priorities,
        )
        it = stream(cfg)
        with open(out / "samples.txt", "w") as fh:
            for _ in range(args.steps):
                for sample in next(it):
                    fh.write(" ".join(str(i) for i in cfg.vocab.encode_ids(sample.tokens)) + "\n")
        print(f"wrote {args.steps} batches of token-id lines to {out}/samples.txt")
    _write_manifest(out, args, [])
    return 0


def cmd_train(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    est = SingleStepDecomposer(
        steps=args.steps,
        batch_size=args.batch_size,
        lr=args.lr,
        warmup_steps=args.warmup,
        seed=args.seed,
        context_len=args.context_len,
        d_model=args.d_model,
        n_layers=args.n_layers,
        n_heads=args.n_heads,
        d_ff=args.d_ff,
        n_primitives=args.P,
        n_modifiers=args.M,
        max_args_side=args.a_max,
        n_schemas=args.S,
        new_grammar_interval=args.interval,
        smoothing=args.smoothing,
        depth_mode=args.depth_mode if args.depth_mode == "two_deep" else int(args.depth_mode),
        include_priorities=not args.no_priorities,
        eval_interval=args.eval_interval,
        eval_samples=args.eval_samples,
        verbose=True,
    )
    print(f"model parameters: {est.param_count():,}")
    est.fit(checkpoint_path=out / "model.ckpt", checkpoint_every=args.checkpoint_every)
    (out / "curve.csv").write_text(training_curve_csv(est.curve_))
    _write_manifest(out, args, [])
    print(f"checkpoint and training curve written to {out}")
    return 0


def cmd_extract(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    demos = Path(args.demos).read_text().splitlines()
    one_step = Path(args.one_step).read_text().splitlines() if args.one_step else None
    if args.method == "cscg":
        from .extract import CscgSchemaExtractor

        extractor = CscgSchemaExtractor(
            min_support=args.min_support, n_clones=args.n_clones,
            em_iters=args.em_iters, seed=args.seed,
        )
        extractor.fit(demos, one_step)
        if extractor.skipped_:
            print(f"skipped undecodable demos on lines: {extractor.skipped_}")
        np.savetxt(out / "win_matrix.csv", extractor.win_matrix_, fmt="%d", delimiter=",")
    else:
        from .extract import EnumerativeRuleMiner

        extractor = EnumerativeRuleMiner(max_candidates=args.max_candidates)
        extractor.fit(demos, one_step)
        (out / "provenance.log").write_text("\n".join(extractor.provenance_log_) + "\n")
        print(f"miner corpus accuracy: {extractor.accuracy_:.2%}")
    (out / "grammar.txt").write_text(dump_grammar(extractor.grammar_))
    (out / "anonymization.txt").write_text(dump_anonymization(extractor.anon_map_))
    (out / "export.log").write_text("\n".join(extractor.export_log_) + "\n")
    report = validate_grammar(extractor.grammar_)
    print(f"extracted {len(extractor.grammar_.schemas)} schemas; validator: {report}")
    _write_manifest(out, args, [Path(args.demos), Path(args.one_step) if args.one_step else None])
    return 0 if report.ok else 1


def cmd_infer(args) -> int:
    g, amap = _fixture_or_file(args)
    backend = _load_backend(args.backend, g, amap)
    tokens = amap.encode_command(args.input.split())
    result = run_inference(backend, g, tokens, max_iterations=args.max_iterations)
    if args.trace:
        for line in trace_lines(result):
            print(line)
    if result.ok:
        print(" ".join(amap.decode_output(result.output)))
        return 0
    print(f"inference failed: {result.failure}", file=sys.stderr)
    return 1


def cmd_eval(args) -> int:
    g, amap = _fixture_or_file(args)
    backend = _load_backend(args.backend, g, amap)
    splits = SPLIT_IDS if args.split == "all" else [args.split]
    reports = []
    for split_id in splits:
        if args.data:
            train, test = load_split(args.data, split_id)
        else:
            train, test = make_split(split_id, seed=args.data_seed)
        report = evaluate_backend(
            backend, g, amap, test, split=split_id, seed=args.seed,
            subsample=args.subsample, progress=args.progress,
        )
        reports.append(report)
        print(report)
    if args.report:
        out = Path(args.report)
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(report_csv(reports))
        _write_manifest(out.parent, args, [Path(args.data)] if args.data else [])
    worst = min(r.accuracy for r in reports)
    if args.require is not None and worst < args.require:
        print(f"accuracy {worst:.4f} below required {args.require}", file=sys.stderr)
        return 1
    return 0


def cmd_ablate(args) -> int:
    g, amap = _fixture_or_file(args)
    if args.kind == "boundary":
        rng = np.random.default_rng(args.seed)
        bad = ablate_boundary_noise(g, args.magnitude, rng)
        if args.out:
            Path(args.out).parent.mkdir(parents=True, exist_ok=True)
            Path(args.out).write_text(dump_grammar(bad))
            print(f"perturbed grammar written to {args.out}")
            return 0
        backend = _load_backend(args.backend, bad, amap)
        _, test = make_split(args.split, seed=args.data_seed)
        report = evaluate_backend(
            backend, bad, amap, test, split=args.split, seed=args.seed,
            subsample=args.subsample, progress=args.progress,
        )
        print(report)
        return 0
    # paired-model comparisons (no-priority / unbounded-depth twins)
    base = SingleStepDecomposer.from_checkpoint(args.model)
    twin = SingleStepDecomposer.from_checkpoint(args.twin)
    _, test = make_split(args.split, seed=args.data_seed)
    reports = []
    for name, est in (("base", base), ("twin", twin)):
        include = est.gen_config_.include_priorities
        backend = ModelBackend(est, g, include_priorities=include)
        report = evaluate_backend(
            backend, g, amap, test, split=f"{args.split}/{name}", seed=args.seed,
            subsample=args.subsample, progress=args.progress,
        )
        reports.append(report)
        print(report)
    drop = reports[0].accuracy - reports[1].accuracy
    print(f"accuracy drop vs twin: {drop:.2%}")
    return 0


def cmd_inspect(args) -> int:
    path = Path(args.path)
    if not path.exists():
        print(f"no such file: {path}", file=sys.stderr)
        return 1
    head = path.open("rb").read(4)
    if head == b"SKDC":
        state = load_checkpoint(path)
        print(f"checkpoint step {state.step}, seed {state.seed}")
        print(f"model config: {state.model_config}")
        print(f"gen config: {state.gen_config}")
        print(f"parameters: {param_count(state.model_config):,}")
        if state.loss_history:
            print(f"last loss: {state.loss_history[-1]:.4f} over {len(state.loss_history)} steps")
        return 0
    text = path.read_text()
    if any(line.startswith(("SCHEMA ", "PRIM ")) for line in text.splitlines()):
        g = load_grammar(text)
        print(f"{len(g.schemas)} schemas, {len(g.prim_eval)} primitive evaluations")
        for s in sorted(g.schemas, key=lambda s: -s.priority):
            pat = " ".join("_" if not hasattr(el, "token") else el.token.spell() for el in s.pattern)
            print(f"  schema {s.name_index:2d} priority {s.priority:3d}: {pat}")
        print(validate_grammar(g))
        return 0
    print(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="schemakit", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("gen", help="generate data: training stream, SCAN splits, demo corpora")
    p.add_argument("--what", choices=("stream", "scan", "demos"), required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--steps", type=int, default=10)
    p.add_argument("--interval", type=int, default=100)
    p.add_argument("--smoothing", type=float, default=1.0)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--context-len", type=int, default=256)
    p.add_argument("--depth-mode", default="two_deep")
    p.add_argument("--no-priorities", action="store_true")
    _add_vocab_flags(p)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train", help="meta-train the single-step decomposer")
    p.add_argument("--out", required=True)
    p.add_argument("--steps", type=int, default=20000)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--lr", type=float, default=3e-4)
    p.add_argument("--warmup", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--context-len", type=int, default=256)
    p.add_argument("--d-model", type=int, default=128)
    p.add_argument("--n-layers", type=int, default=6)
    p.add_argument("--n-heads", type=int, default=4)
    p.add_argument("--d-ff", type=int, default=512)
    p.add_argument("--interval", type=int, default=100)
    p.add_argument("--smoothing", type=float, default=1.0)
    p.add_argument("--depth-mode", default="two_deep")
    p.add_argument("--no-priorities", action="store_true")
    p.add_argument("--eval-interval", type=int, default=1000)
    p.add_argument("--eval-samples", type=int, default=200)
    p.add_argument("--checkpoint-every", type=int, default=500)
    _add_vocab_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("extract", help="induce a grammar from demonstrations")
    p.add_argument("--method", choices=("cscg", "miner"), required=True)
    p.add_argument("--demos", required=True)
    p.add_argument("--one-step", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--min-support", type=int, default=2)
    p.add_argument("--n-clones", type=int, default=10)
    p.add_argument("--em-iters", type=int, default=20)
    p.add_argument("--max-candidates", type=int, default=2000)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("infer", help="run iterative inference on one command")
    p.add_argument("--backend", default="oracle")
    p.add_argument("--grammar", default=None, help="grammar file (default: SCAN fixture)")
    p.add_argument("--anon", default=None, help="anonymization map file")
    p.add_argument("--input", required=True)
    p.add_argument("--trace", action="store_true")
    p.add_argument("--max-iterations", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("eval", help="evaluate a backend over SCAN splits")
    p.add_argument("--backend", default="oracle")
    p.add_argument("--grammar", default=None)
    p.add_argument("--anon", default=None)
    p.add_argument("--split", default="all", choices=SPLIT_IDS + ("all",))
    p.add_argument("--data", default=None, help="directory of split files (default: regenerate)")
    p.add_argument("--data-seed", type=int, default=1)
    p.add_argument("--subsample", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--require", type=float, default=None)
    p.add_argument("--report", default=None)
    p.add_argument("--progress", type=int, default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="boundary noise or paired-twin comparisons")
    p.add_argument("--kind", choices=("boundary", "no-priority", "unbounded"), required=True)
    p.add_argument("--magnitude", type=int, default=1)
    p.add_argument("--backend", default="oracle")
    p.add_argument("--model", default=None, help="base checkpoint (paired kinds)")
    p.add_argument("--twin", default=None, help="twin checkpoint (paired kinds)")
    p.add_argument("--grammar", default=None)
    p.add_argument("--anon", default=None)
    p.add_argument("--split", default="full", choices=SPLIT_IDS)
    p.add_argument("--data-seed", type=int, default=1)
    p.add_argument("--subsample", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None, help="write the perturbed grammar here instead")
    p.add_argument("--progress", type=int, default=None)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("inspect", help="pretty-print grammars, checkpoints, traces")
    p.add_argument("path")
    p.set_defaults(func=cmd_inspect)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except SchemakitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
