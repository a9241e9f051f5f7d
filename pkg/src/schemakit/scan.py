"""SCAN dataset generation, splits, the hand-built grammar, and evaluation.

The full 20,910-command corpus is regenerated from the published phrase
grammar with a direct recursive interpreter; that interpreter is the ground
truth everything else is checked against and is deliberately independent of
the schema formalism. Splits follow the standard definitions: simple (seeded
80/20), length (action sequences up to 22 train), prim_jump (jump appears
only bare in training), temp_or (read as the template-around-right split),
and full (everything on both sides).
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

import numpy as np

from .codec import AnonymizationMap
from .errors import ParseError
from .grammar import (
    ArgRef,
    Emit,
    Grammar,
    GrammarBounds,
    Literal,
    Schema,
    Slot,
    match_instances,
    evaluate as eval_tree,
    parse_tree,
)
from .tokens import Token, mod, out, prim

PRIMS = ("walk", "look", "run", "jump")
ACTION_OF = {"walk": "WALK", "look": "LOOK", "run": "RUN", "jump": "JUMP"}
TURNS = {"left": "LTURN", "right": "RTURN"}

MODIFIER_SURFACES = (
    "left",
    "right",
    "opposite left",
    "opposite right",
    "around left",
    "around right",
    "twice",
    "thrice",
    "and",
    "after",
)

SPLIT_IDS = ("simple", "length", "prim_jump", "temp_or", "full")


def _verb_phrases() -> list[tuple[str, list[str]]]:
    """All 34 V-level phrases with their interpretations."""
    phrases = []
    for u in PRIMS:
        phrases.append((u, [ACTION_OF[u]]))
    for d, t in TURNS.items():
        phrases.append((f"turn {d}", [t]))
        phrases.append((f"turn opposite {d}", [t, t]))
        phrases.append((f"turn around {d}", [t] * 4))
        for u in PRIMS:
            phrases.append((f"{u} {d}", [t, ACTION_OF[u]]))
            phrases.append((f"{u} opposite {d}", [t, t, ACTION_OF[u]]))
            phrases.append((f"{u} around {d}", [t, ACTION_OF[u]] * 4))
    return phrases


def generate_corpus() -> list[tuple[str, str]]:
    """Every SCAN (command, actions) pair, deterministic order."""
    verbs = _verb_phrases()
    clauses = []
    for cmd, acts in verbs:
        clauses.append((cmd, acts))
        clauses.append((f"{cmd} twice", acts * 2))
        clauses.append((f"{cmd} thrice", acts * 3))
    corpus = []
    for cmd, acts in clauses:
        corpus.append((cmd, " ".join(acts)))
    for c1, a1 in clauses:
        for c2, a2 in clauses:
            corpus.append((f"{c1} and {c2}", " ".join(a1 + a2)))
            corpus.append((f"{c1} after {c2}", " ".join(a2 + a1)))
    return corpus


@dataclass(frozen=True)
class ScanExample:
    command: tuple[str, ...]
    actions: tuple[str, ...]


def _as_examples(pairs) -> list[ScanExample]:
    return [ScanExample(tuple(c.split()), tuple(a.split())) for c, a in pairs]


def make_split(split_id: str, seed: int = 1) -> tuple[list[ScanExample], list[ScanExample]]:
    corpus = generate_corpus()
    if split_id == "simple":
        rng = np.random.default_rng(seed)
        order = rng.permutation(len(corpus))
        cut = int(0.8 * len(corpus))
        train = [corpus[i] for i in order[:cut]]
        test = [corpus[i] for i in order[cut:]]
    elif split_id == "length":
        train = [p for p in corpus if len(p[1].split()) <= 22]
        test = [p for p in corpus if len(p[1].split()) > 22]
    elif split_id == "prim_jump":
        train = [p for p in corpus if "jump" not in p[0].split() or p[0] == "jump"]
        test = [p for p in corpus if "jump" in p[0].split() and p[0] != "jump"]
    elif split_id == "temp_or":
        train = [p for p in corpus if "around right" not in p[0]]
        test = [p for p in corpus if "around right" in p[0]]
    elif split_id == "full":
        train = list(corpus)
        test = list(corpus)
    else:
        raise ValueError(f"unknown split {split_id!r}; expected one of {SPLIT_IDS}")
    return _as_examples(train), _as_examples(test)


_LINE_RE = re.compile(r"^IN:\s*(.+?)\s+OUT:\s*(.+?)\s*$")


def dump_examples(examples: list[ScanExample]) -> str:
    return "".join(f"IN: {' '.join(e.command)} OUT: {' '.join(e.actions)}\n" for e in examples)


def parse_examples(text: str) -> list[ScanExample]:
    examples = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        if not raw.strip():
            continue
        m = _LINE_RE.match(raw)
        if not m:
            raise ParseError(f"line {lineno}: expected 'IN: ... OUT: ...', got {raw!r}")
        examples.append(ScanExample(tuple(m.group(1).split()), tuple(m.group(2).split())))
    return examples


def load_split(path, split_id: str) -> tuple[list[ScanExample], list[ScanExample]]:
    """Read tasks_<split>_{train,test}.txt from a directory of split files."""
    from pathlib import Path

    base = Path(path)
    if split_id not in SPLIT_IDS:
        raise ValueError(f"unknown split {split_id!r}; expected one of {SPLIT_IDS}")
    train = parse_examples((base / f"tasks_{split_id}_train.txt").read_text())
    test = parse_examples((base / f"tasks_{split_id}_test.txt").read_text())
    return train, test


def write_splits(path, seed: int = 1) -> None:
    from pathlib import Path

    base = Path(path)
    base.mkdir(parents=True, exist_ok=True)
    for split_id in SPLIT_IDS:
        train, test = make_split(split_id, seed)
        (base / f"tasks_{split_id}_train.txt").write_text(dump_examples(train))
        (base / f"tasks_{split_id}_test.txt").write_text(dump_examples(test))


# --- the hand-built SCAN grammar ---------------------------------------------


def scan_anonymization() -> AnonymizationMap:
    amap = AnonymizationMap()
    for i, w in enumerate(PRIMS + ("turn",)):
        amap.prim_by_surface[w] = prim(i)
    for i, surf in enumerate(MODIFIER_SURFACES):
        amap.mod_by_surface[surf] = mod(i)
    for i, w in enumerate(("WALK", "LOOK", "RUN", "JUMP", "LTURN", "RTURN")):
        amap.out_by_surface[w] = out(i)
    return amap


def scan_grammar() -> tuple[Grammar, AnonymizationMap]:
    """10 atomic schemas + 6 turn compounds, priorities in four tiers.

    Priorities are distinct integers ordered compounds > directional family >
    twice/thrice > and/after; within a tier the order is arbitrary because
    same-tier schemas never share a modifier.
    """
    amap = scan_anonymization()
    P = amap.prim_by_surface
    M = amap.mod_by_surface
    O = amap.out_by_surface
    turn, slot = Literal(P["turn"]), Slot()
    lt, rt = Emit(O["LTURN"]), Emit(O["RTURN"])
    a0, a1 = ArgRef(0), ArgRef(1)

    schemas = [
        # turn compounds (tier 3)
        Schema(0, (turn, Literal(M["left"])), 15, (lt,)),
        Schema(1, (turn, Literal(M["right"])), 14, (rt,)),
        Schema(2, (turn, Literal(M["opposite left"])), 13, (lt, lt)),
        Schema(3, (turn, Literal(M["opposite right"])), 12, (rt, rt)),
        Schema(4, (turn, Literal(M["around left"])), 11, (lt, lt, lt, lt)),
        Schema(5, (turn, Literal(M["around right"])), 10, (rt, rt, rt, rt)),
        # directional family (tier 2)
        Schema(6, (slot, Literal(M["left"])), 9, (lt, a0)),
        Schema(7, (slot, Literal(M["right"])), 8, (rt, a0)),
        Schema(8, (slot, Literal(M["opposite left"])), 7, (lt, lt, a0)),
        Schema(9, (slot, Literal(M["opposite right"])), 6, (rt, rt, a0)),
        Schema(10, (slot, Literal(M["around left"])), 5, (lt, a0, lt, a0, lt, a0, lt, a0)),
        Schema(11, (slot, Literal(M["around right"])), 4, (rt, a0, rt, a0, rt, a0, rt, a0)),
        # repetition (tier 1)
        Schema(12, (slot, Literal(M["twice"])), 3, (a0, a0)),
        Schema(13, (slot, Literal(M["thrice"])), 2, (a0, a0, a0)),
        # connectives (tier 0)
        Schema(14, (slot, Literal(M["and"]), slot), 1, (a0, a1)),
        Schema(15, (slot, Literal(M["after"]), slot), 0, (a1, a0)),
    ]
    prim_eval = {P[w]: (O[ACTION_OF[w]],) for w in PRIMS}
    g = Grammar(schemas, prim_eval, GrammarBounds())
    return g, amap


# --- demonstration corpora for the extractors --------------------------------


def atomic_demo_pairs() -> list[tuple[str, str]]:
    """Depth-<=1 demonstrations with duplication weighted so compound forms
    out-support their variable-binding generalizations."""
    demos: list[tuple[str, str]] = []
    corpus = dict(generate_corpus())
    for u in PRIMS:
        demos += [(u, corpus[u])] * 2
    for d in TURNS:
        for form in (f"turn {d}", f"turn opposite {d}", f"turn around {d}"):
            demos += [(form, corpus[form])] * 6
        for u in PRIMS:
            for form in (f"{u} {d}", f"{u} opposite {d}", f"{u} around {d}"):
                demos.append((form, corpus[form]))
    for u in PRIMS:
        demos.append((f"{u} twice", corpus[f"{u} twice"]))
        demos.append((f"{u} thrice", corpus[f"{u} thrice"]))
    for u1, u2 in (("jump", "walk"), ("run", "look"), ("walk", "run"), ("look", "jump")):
        demos.append((f"{u1} and {u2}", corpus[f"{u1} and {u2}"]))
        demos.append((f"{u1} after {u2}", corpus[f"{u1} after {u2}"]))
    return demos


def one_step_surface(g: Grammar, amap: AnonymizationMap, command: str) -> str:
    """Rewrite the single highest-priority instance to its evaluated output."""
    words = command.split()
    tokens = amap.encode_command(words)
    matches = match_instances(g, tokens)
    if not matches:
        raise ParseError(f"no schema instance in {command!r}")
    m = matches[0]
    schema = g.schemas[m.schema_index]
    values: list[str] = []
    args = [eval_tree(g, parse_tree(g, [a])) for a in m.args]
    for item in schema.eval_template:
        toks = args[item.arg_index] if isinstance(item, ArgRef) else (item.token,)
        values.extend(amap.decode_output(toks))
    # m.start/m.end index tokens; multi-word modifiers widen the word span
    widths = {t: len(s.split()) for s, t in amap.mod_by_surface.items()}
    word_pos = [0]
    for t in tokens:
        word_pos.append(word_pos[-1] + widths.get(t, 1))
    return " ".join(words[: word_pos[m.start]] + values + words[word_pos[m.end] :])


def one_step_demo_pairs() -> list[tuple[str, str]]:
    """Comparative demonstrations that force schema-pair conflicts."""
    g, amap = scan_grammar()
    dirs = ("left", "right", "opposite left", "opposite right", "around left", "around right")
    cmds = []
    for conn in ("and", "after"):
        for d in dirs:
            cmds.append(f"jump {conn} walk {d}")
            cmds.append(f"look {conn} run {d}")
        for rep in ("twice", "thrice"):
            cmds.append(f"jump {conn} walk {rep}")
            cmds.append(f"run {conn} look {rep}")
    for d in dirs:
        for rep in ("twice", "thrice"):
            cmds.append(f"turn {d} and jump {rep}")
            cmds.append(f"turn {d} and walk {rep}")
    return [(c, one_step_surface(g, amap, c)) for c in cmds]


def demo_lines(pairs: list[tuple[str, str]]) -> str:
    return "".join(f"IN: {c} <SEP> {a} <EOS>\n" for c, a in pairs)


# --- evaluation ---------------------------------------------------------------


@dataclass
class EvalReport:
    split: str
    n: int
    correct: int
    malformed: int
    iteration_cap: int
    wrong_output: int
    mean_iterations: float
    max_iterations: int
    seed: int
    subsample: int | None = None
    note: str = "temp_or read as the template-around-right split"

    @property
    def accuracy(self) -> float:
        return self.correct / self.n if self.n else 0.0

    def check(self) -> bool:
        return self.correct + self.malformed + self.iteration_cap + self.wrong_output == self.n

    def __str__(self) -> str:
        return (
            f"[{self.split}] n={self.n} exact={self.accuracy:.4%} "
            f"(malformed={self.malformed} cap={self.iteration_cap} "
            f"wrong={self.wrong_output}) iters mean={self.mean_iterations:.2f} "
            f"max={self.max_iterations} seed={self.seed}"
        )


def subsample_examples(examples: list[ScanExample], size: int | None, seed: int):
    if size is None or size >= len(examples):
        return list(examples)
    rng = np.random.default_rng(seed)
    idx = rng.choice(len(examples), size=size, replace=False)
    return [examples[i] for i in sorted(idx)]


def evaluate_backend(
    backend,
    grammar: Grammar,
    amap: AnonymizationMap,
    examples: list[ScanExample],
    split: str = "?",
    seed: int = 0,
    subsample: int | None = None,
    max_iterations: int = 32,
    progress=None,
) -> EvalReport:
    """Exact-match evaluation of the full pipeline over SCAN examples."""
    from .engine import run_inference

    chosen = subsample_examples(examples, subsample, seed)
    correct = malformed = capped = wrong = 0
    iteration_counts = []
    for i, ex in enumerate(chosen):
        tokens = amap.encode_command(list(ex.command))
        result = run_inference(backend, grammar, tokens, max_iterations=max_iterations)
        iteration_counts.append(result.iterations)
        if result.failure and "IterationCap" in result.failure:
            capped += 1
        elif result.failure:
            malformed += 1
        elif amap.decode_output(result.output) == list(ex.actions):
            correct += 1
        else:
            wrong += 1
        if progress and (i + 1) % progress == 0:
            print(f"  {split}: {i + 1}/{len(chosen)} examples", flush=True)
    return EvalReport(
        split=split,
        n=len(chosen),
        correct=correct,
        malformed=malformed,
        iteration_cap=capped,
        wrong_output=wrong,
        mean_iterations=float(np.mean(iteration_counts)) if iteration_counts else 0.0,
        max_iterations=max(iteration_counts, default=0),
        seed=seed,
        subsample=subsample,
    )


def report_csv(reports: list[EvalReport]) -> str:
    lines = ["split,n,correct,malformed,iteration_cap,wrong_output,accuracy,mean_iters,max_iters,seed"]
    for r in reports:
        lines.append(
            f"{r.split},{r.n},{r.correct},{r.malformed},{r.iteration_cap},"
            f"{r.wrong_output},{r.accuracy:.6f},{r.mean_iterations:.3f},{r.max_iterations},{r.seed}"
        )
    return "\n".join(lines) + "\n"


def mean_sem(values: list[float]) -> tuple[float, float]:
    arr = np.asarray(values, dtype=float)
    if len(arr) < 2:
        return float(arr.mean()) if len(arr) else 0.0, 0.0
    return float(arr.mean()), float(arr.std(ddof=1) / np.sqrt(len(arr)))


# --- ablations ----------------------------------------------------------------


def ablate_boundary_noise(grammar: Grammar, magnitude: int, rng) -> Grammar:
    """Corrupt every schema's argument boundaries by +/-magnitude.

    Each side's slot count shifts by magnitude in a direction drawn uniformly
    among the directions that survive clamping to [0, A_max], so every schema
    actually changes. Dangling ArgRefs are dropped to keep the grammar
    syntactically valid (semantics are the point of the damage).
    """
    if magnitude not in (1, 2):
        raise ValueError("magnitude must be 1 or 2")
    a_max = grammar.bounds.max_args_side

    def shifted(value: int) -> int:
        clamp = lambda v: max(0, min(a_max, v))
        options = sorted({clamp(value - magnitude), clamp(value + magnitude)} - {value})
        if not options:
            return value
        return int(options[int(rng.integers(0, len(options)))])

    new_schemas = []
    for s in grammar.schemas:
        core = [el for el in s.pattern if isinstance(el, Literal)]
        before, after = shifted(s.args_before), shifted(s.args_after)
        pattern = tuple([Slot()] * before + core + [Slot()] * after)
        arity = before + after
        template = tuple(
            it for it in s.eval_template if isinstance(it, Emit) or it.arg_index < arity
        )
        new_schemas.append(Schema(s.name_index, pattern, s.priority, template))
    return Grammar(new_schemas, dict(grammar.prim_eval), grammar.bounds)


def ablation_gap_report(priority_report: EvalReport, twin_report: EvalReport) -> str:
    drop = priority_report.accuracy - twin_report.accuracy
    return (
        f"priority-trained {priority_report.accuracy:.4%} vs twin "
        f"{twin_report.accuracy:.4%}: drop {drop:.2%}"
    )
