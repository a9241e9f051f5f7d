"""Surface rewrite rules and the bridge into the schema formalism.

Both extractors produce SurfaceRules: templates over literal words and
variables. A variable may carry a binding dictionary (x-word -> y-words,
learned from support) or be untyped; at application time a variable matches
either a single word from its dictionary or a contiguous run of
already-evaluated output words, longest run first - that is what lets outer
rules fire over the results of inner ones mid-derivation.

export_grammar resolves word roles. Literal runs of variable-bearing rules
become modifier surfaces (multi-word runs become one modifier token). A rule
whose variable binds words that are modifier surfaces elsewhere (SCAN's
"turn <V>" binding left/right) cannot be expressed with one-token slots, so
it is instantiated over its finite dictionary into literal compound rules;
their leftover literal words (turn) become primitive pattern literals.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

from ..codec import AnonymizationMap
from ..errors import InexpressibleSchema, VocabOverflow
from ..grammar import ArgRef, Emit, Grammar, GrammarBounds, Literal, Schema, Slot
from ..grammar import validate_grammar
from ..tokens import Token, mod, out, prim


@dataclass(frozen=True)
class Lit:
    word: str

    def __repr__(self):
        return self.word


@dataclass(frozen=True)
class Var:
    index: int
    token: bool = False  # True: exactly one output word; False: span/dict

    def __repr__(self):
        return f"<u{self.index}>" if self.token else f"<V{self.index}>"


RuleItem = "Lit | Var"


@dataclass
class SurfaceRule:
    lhs: tuple
    rhs: tuple
    bindings: dict[int, dict[str, tuple[str, ...]] | None] = field(default_factory=dict)
    support: int = 0

    def __str__(self):
        return (
            " ".join(map(repr, self.lhs)) + " => " + " ".join(map(repr, self.rhs))
        )

    @property
    def lhs_vars(self) -> list[int]:
        return [it.index for it in self.lhs if isinstance(it, Var)]

    @property
    def lhs_words(self) -> list[str]:
        return [it.word for it in self.lhs if isinstance(it, Lit)]

    @property
    def is_prim_rule(self) -> bool:
        return (
            len(self.lhs) == 1
            and isinstance(self.lhs[0], Lit)
            and all(isinstance(it, Lit) for it in self.rhs)
        )

    @property
    def literal_multiset(self) -> tuple:
        return tuple(sorted(self.lhs_words + [it.word for it in self.rhs if isinstance(it, Lit)]))

    def lit_runs(self) -> list[list[str]]:
        runs, current = [], []
        for it in self.lhs:
            if isinstance(it, Lit):
                current.append(it.word)
            elif current:
                runs.append(current)
                current = []
        if current:
            runs.append(current)
        return runs


MAX_SPAN = 8


def _var_matches(rule: SurfaceRule, v: Var, words, start, output_vocab):
    """Candidate (end, x_form) for a variable starting at `start`, longest first."""
    options = []
    run_end = start
    while (
        run_end < len(words)
        and run_end - start < MAX_SPAN
        and words[run_end] in output_vocab
    ):
        run_end += 1
        options.append((run_end, tuple(words[start:run_end])))
    options.reverse()  # longest output-run first
    if v.token:
        options = [(e, f) for e, f in options if e - start == 1]
    binding = rule.bindings.get(v.index)
    if (
        binding is not None
        and start < len(words)
        and words[start] in binding
        and words[start] not in output_vocab
    ):
        options.append((start + 1, (words[start],)))
    return options


def match_rule(rule: SurfaceRule, words: list[str], at: int, output_vocab) -> list[tuple[int, dict]]:
    """All (end, assignment) matches of the LHS starting at `at`, longest first."""

    results = []

    def go(item_idx: int, pos: int, assign: dict):
        if item_idx == len(rule.lhs):
            results.append((pos, dict(assign)))
            return
        it = rule.lhs[item_idx]
        if isinstance(it, Lit):
            if pos < len(words) and words[pos] == it.word:
                go(item_idx + 1, pos + 1, assign)
            return
        if it.index in assign:
            form = assign[it.index]
            if tuple(words[pos : pos + len(form)]) == form:
                go(item_idx + 1, pos + len(form), assign)
            return
        for end, form in _var_matches(rule, it, words, pos, output_vocab):
            assign[it.index] = form
            go(item_idx + 1, end, assign)
            del assign[it.index]

    go(0, at, {})
    results.sort(key=lambda r: -r[0])
    return results


def realize_rhs(rule: SurfaceRule, assign: dict, output_vocab) -> list[str] | None:
    """RHS words under an assignment; None if a binding cannot resolve."""
    out_words: list[str] = []
    for it in rule.rhs:
        if isinstance(it, Lit):
            out_words.append(it.word)
            continue
        form = assign.get(it.index)
        if form is None:
            return None
        binding = rule.bindings.get(it.index)
        if binding is not None and len(form) == 1 and form[0] in binding:
            out_words.extend(binding[form[0]])
        elif all(w in output_vocab for w in form):
            out_words.extend(form)
        else:
            return None
    return out_words


def best_match(rule: SurfaceRule, words: list[str], output_vocab):
    """Longest-span leftmost match: (start, end, assignment) or None."""
    best = None
    for start in range(len(words)):
        for end, assign in match_rule(rule, words, start, output_vocab):
            if realize_rhs(rule, assign, output_vocab) is None:
                continue
            if best is None or (end - start) > (best[1] - best[0]):
                best = (start, end, assign)
            break  # matches at this start are longest-first
    return best


def apply_rule(rule: SurfaceRule, words: list[str], at: int, end: int, assign, output_vocab):
    replacement = realize_rhs(rule, assign, output_vocab)
    return words[:at] + replacement + words[end:]


def interpret(
    rules: list[SurfaceRule],
    precedence: dict[int, int],
    words: list[str],
    output_vocab,
    max_passes: int = 32,
):
    """Greedy pass-based rewriting; (final words, steps, resolved flag).

    Each pass applies the highest-precedence longest-span leftmost match.
    A derivation succeeds when only output-vocabulary words remain.
    """
    state = list(words)
    steps: list[tuple[int, int, int]] = []  # (rule index, start, end)
    worst = max(precedence.values(), default=0) + 1
    for _ in range(max_passes):
        best = None
        for ri, rule in enumerate(rules):
            m = best_match(rule, state, output_vocab)
            if m is None:
                continue
            start, end, assign = m
            key = (precedence.get(ri, worst), -(end - start), start)
            if best is None or key < best[0]:
                best = (key, ri, start, end, assign)
        if best is None:
            break
        _, ri, start, end, assign = best
        state = apply_rule(rules[ri], state, start, end, assign, output_vocab)
        steps.append((ri, start, end))
    resolved = all(w in output_vocab for w in state)
    return state, steps, resolved


# --- export -------------------------------------------------------------------


def _trigger_surface(words: list[str], surfaces: set[str]) -> str | None:
    """Longest known modifier surface occurring contiguously in words."""
    best = None
    for surf in surfaces:
        parts = surf.split()
        for i in range(len(words) - len(parts) + 1):
            if words[i : i + len(parts)] == parts:
                if best is None or len(parts) > len(best.split()):
                    best = surf
    return best


def export_grammar(
    rules: list[SurfaceRule],
    ranks: dict[int, int],
    output_vocab: list[str],
    bounds: GrammarBounds | None = None,
) -> tuple[Grammar, AnonymizationMap, list[str]]:
    """Bridge surface rules to a validator-clean Grammar.

    ranks maps rule positions (indices into `rules`) to precedence ranks,
    rank 0 resolving first; rules absent from ranks share the worst rank.
    Returns (grammar, anonymization map, log lines).
    """
    bounds = bounds or GrammarBounds()
    log: list[str] = []
    out_set = set(output_vocab)

    prim_rules = [r for r in rules if r.is_prim_rule]
    schema_rules = [(i, r) for i, r in enumerate(rules) if not r.is_prim_rule]
    prim_map: dict[str, tuple[str, ...]] = {}
    for r in prim_rules:
        word = r.lhs[0].word
        prim_map.setdefault(word, tuple(it.word for it in r.rhs))

    # modifier surfaces from variable-bearing rules, dropping rules whose
    # variables bind modifier words (they get instantiated below)
    def longest_run(r: SurfaceRule) -> list[str]:
        runs = r.lit_runs()
        if not runs:
            raise InexpressibleSchema(f"rule without literal anchor: {r}")
        return max(runs, key=len)

    # a variable is conflicted when its dictionary words serve as modifier
    # surfaces elsewhere; such variables get instantiated over their (finite)
    # dictionaries, the rest stay symbolic slots
    var_rules = [(i, r) for i, r in schema_rules if r.lhs_vars]
    conflicted: dict[int, set[int]] = {}
    while True:
        surfaces = set()
        for i, r in var_rules:
            keep_vars = [v for v in r.lhs_vars if v not in conflicted.get(i, set())]
            if keep_vars:
                surfaces.add(" ".join(longest_run(r)))
        surface_words = {w for s in surfaces for w in s.split()}
        grew = False
        for i, r in var_rules:
            for v in r.lhs_vars:
                if v in conflicted.get(i, set()):
                    continue
                binding = r.bindings.get(v)
                if binding and any(w in surface_words for w in binding):
                    conflicted.setdefault(i, set()).add(v)
                    grew = True
        if not grew:
            break

    expanded: list[tuple[SurfaceRule, int]] = []  # (rule, rank)
    worst = max(ranks.values(), default=0) + 1
    for i, r in schema_rules:
        rank = ranks.get(i, worst)
        bad_vars = conflicted.get(i, set())
        if not bad_vars:
            expanded.append((r, rank))
            continue
        if any(r.bindings.get(v) is None for v in bad_vars):
            raise InexpressibleSchema(f"cannot instantiate untyped variable in {r}")
        combos: list[dict[int, str]] = [{}]
        for v in sorted(bad_vars):
            combos = [{**c, v: w} for c in combos for w in sorted(r.bindings[v])]
        for combo in combos:
            lhs = tuple(
                Lit(combo[it.index])
                if isinstance(it, Var) and it.index in combo
                else it
                for it in r.lhs
            )
            rhs_items: list = []
            for it in r.rhs:
                if isinstance(it, Var) and it.index in combo:
                    rhs_items.extend(Lit(w) for w in r.bindings[it.index][combo[it.index]])
                else:
                    rhs_items.append(it)
            bindings = {
                v: dict(b) if b is not None else None
                for v, b in r.bindings.items()
                if v not in combo
            }
            expanded.append(
                (SurfaceRule(lhs, tuple(rhs_items), bindings, r.support), rank)
            )
        log.append(f"instantiated over its dictionary: {r}")

    surfaces = {
        " ".join(longest_run(r)) for r, _ in expanded if r.lhs_vars
    }

    # assign tokens: modifiers, primitives (slot words + literal words), outputs
    amap = AnonymizationMap()
    for surf in sorted(surfaces, key=lambda s: (-len(s.split()), s)):
        amap.mod_by_surface[surf] = mod(len(amap.mod_by_surface))

    def prim_token(word: str) -> Token:
        if word not in amap.prim_by_surface:
            if len(amap.prim_by_surface) >= bounds.n_primitives:
                raise VocabOverflow("too many distinct primitives for the bounds")
            amap.prim_by_surface[word] = prim(len(amap.prim_by_surface))
        return amap.prim_by_surface[word]

    for word in prim_map:
        prim_token(word)
    for w in output_vocab:
        amap.out_by_surface.setdefault(w, out(len(amap.out_by_surface)))

    # deterministic priority total order: rank, then specificity, then spelling
    def specificity(r: SurfaceRule) -> tuple:
        return (len(r.lhs_words), len(r.lhs))

    expanded.sort(key=lambda pair: (pair[1], tuple(-s for s in specificity(pair[0])), str(pair[0])))
    seen_patterns: dict[tuple, SurfaceRule] = {}
    schemas: list[Schema] = []
    n = len(expanded)
    for pos, (r, rank) in enumerate(expanded):
        if len(schemas) >= bounds.n_schemas:
            raise VocabOverflow("too many schemas for the bounds")
        trigger = _trigger_surface(r.lhs_words, set(amap.mod_by_surface))
        if trigger is None:
            # no known modifier inside: mint one from the words lacking
            # primitive evaluations (standalone literal rule corpora)
            candidates = [w for w in longest_run(r) if w not in prim_map]
            if not candidates:
                raise InexpressibleSchema(f"no modifier word available in {r}")
            trigger = " ".join(candidates)
            if trigger not in amap.mod_by_surface:
                amap.mod_by_surface[trigger] = mod(len(amap.mod_by_surface))
            log.append(f"minted modifier surface {trigger!r} for {r}")
        trig_parts = trigger.split()

        for v in r.lhs_vars:
            binding = r.bindings.get(v)
            if binding and any(len(k.split()) > 1 for k in binding):
                raise InexpressibleSchema(
                    f"variable with multi-word realization cannot fill one slot: {r}"
                )

        pattern: list = []
        var_order: list[int] = []
        i = 0
        lhs = list(r.lhs)
        consumed_trigger = False
        while i < len(lhs):
            it = lhs[i]
            if isinstance(it, Var):
                pattern.append(Slot())
                var_order.append(it.index)
                i += 1
                continue
            words_here = [x.word for x in lhs[i:] if isinstance(x, Lit)]
            if (
                not consumed_trigger
                and [x.word for x in lhs[i : i + len(trig_parts)] if isinstance(x, Lit)]
                == trig_parts
            ):
                pattern.append(Literal(amap.mod_by_surface[trigger]))
                consumed_trigger = True
                i += len(trig_parts)
                continue
            pattern.append(Literal(prim_token(it.word)))
            i += 1
        if not consumed_trigger:
            raise InexpressibleSchema(f"trigger {trigger!r} not contiguous in {r}")

        template: list = []
        for it in r.rhs:
            if isinstance(it, Var):
                if it.index not in var_order:
                    raise InexpressibleSchema(f"rhs variable not bound on lhs: {r}")
                template.append(ArgRef(var_order.index(it.index)))
            else:
                if it.word not in amap.out_by_surface:
                    raise InexpressibleSchema(
                        f"rhs literal {it.word!r} is not an output word: {r}"
                    )
                template.append(Emit(amap.out_by_surface[it.word]))

        key = (tuple(pattern), tuple(template))
        if key in seen_patterns:
            log.append(f"dropped duplicate pattern: {r}")
            continue
        seen_patterns[key] = r
        schemas.append(Schema(len(schemas), tuple(pattern), n - pos, tuple(template)))

    prim_eval = {
        amap.prim_by_surface[w]: tuple(amap.out_by_surface[o] for o in outs)
        for w, outs in prim_map.items()
    }
    g = Grammar(schemas, prim_eval, bounds)
    report = validate_grammar(g)
    if not report.ok:
        raise InexpressibleSchema(f"exported grammar invalid: {report}")
    return g, amap, log
