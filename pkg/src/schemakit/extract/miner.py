"""Enumerative rule miner: description-length-ordered template search.

Templates are proposed from residual (state, target) pairs - the literal
rewrite itself plus abstractions that turn shared output-word runs into span
or token variables (replacements, wrapper insertions, and splices all arise
this way). A candidate enters the library only if it repairs its matches
consistently: no previously-derivable demonstration regresses and corpus
exact accuracy strictly increases. Replay uses a bounded derivation search;
successful derivations and the one-step demonstrations contribute
fires-before edges whose topological order becomes the precedence map.
"""

from __future__ import annotations

import heapq
import itertools
from dataclasses import dataclass, field

from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from ..errors import BudgetExhausted
from ..grammar import GrammarBounds
from .corpus import parse_demo_line
from .export import (
    Lit,
    SurfaceRule,
    Var,
    apply_rule,
    export_grammar,
    interpret,
    match_rule,
    realize_rhs,
)


def description_length(rule: SurfaceRule) -> int:
    """Literals cost 1, span variables 2, token variables 1 (per occurrence
    on the LHS; RHS occurrences are free, they reuse the binding)."""
    cost = 0
    for it in rule.lhs:
        if isinstance(it, Lit):
            cost += 1
        else:
            cost += 1 if it.token else 2
    cost += sum(1 for it in rule.rhs if isinstance(it, Lit))
    return cost


MAX_SPAN_VARS = 2
MAX_VAR_LEN = 8


def _runs_in(words: list[str], output_vocab) -> list[tuple[str, ...]]:
    """Maximal output-word runs and their prefixes, longest first."""
    runs = []
    i = 0
    while i < len(words):
        if words[i] in output_vocab:
            j = i
            while j < len(words) and words[j] in output_vocab:
                j += 1
            for length in range(min(j - i, MAX_VAR_LEN), 0, -1):
                for start in range(i, j - length + 1):
                    runs.append(tuple(words[start : start + length]))
            i = j
        else:
            i += 1
    seen = []
    for r in sorted(set(runs), key=lambda r: (-len(r), r)):
        seen.append(r)
    return seen


def _abstract_items(items, run, var):
    """Replace every non-overlapping literal occurrence of run by the variable."""
    out = []
    i = 0
    hit = False
    n = len(run)
    while i < len(items):
        window = items[i : i + n]
        if len(window) == n and all(
            isinstance(w, Lit) and w.word == r for w, r in zip(window, run)
        ):
            out.append(var)
            i += n
            hit = True
        else:
            out.append(items[i])
            i += 1
    return out, hit


def propose_templates(state: list[str], target: list[str], output_vocab) -> list[SurfaceRule]:
    """Candidate rewrites for one residual pair, deduplicated."""
    if state == target:
        return []
    proposals = [
        SurfaceRule(tuple(Lit(w) for w in state), tuple(Lit(w) for w in target), {})
    ]
    runs = _runs_in(state, output_vocab)[:8]
    for n_vars in (1, 2):
        for combo in itertools.combinations(runs, n_vars):
            lhs = [Lit(w) for w in state]
            rhs = [Lit(w) for w in target]
            ok = True
            for vi, run in enumerate(combo):
                var = Var(vi, token=len(run) == 1)
                lhs, hit_l = _abstract_items(lhs, run, var)
                rhs, hit_r = _abstract_items(rhs, run, var)
                if not (hit_l and hit_r):
                    ok = False
                    break
            if not ok or not any(isinstance(it, Lit) for it in lhs):
                continue
            bindings = {it.index: None for it in lhs if isinstance(it, Var)}
            proposals.append(SurfaceRule(tuple(lhs), tuple(rhs), bindings))
    unique = {}
    for rule in proposals:
        unique.setdefault((rule.lhs, rule.rhs), rule)
    return list(unique.values())


@dataclass
class MinerState:
    accepted: list[SurfaceRule] = field(default_factory=list)
    queue: list = field(default_factory=list)  # heap of (dl, counter, rule)
    queued_keys: set = field(default_factory=set)
    edges: set[tuple[int, int]] = field(default_factory=set)  # fires-before
    rejected_edges: list[tuple[int, int]] = field(default_factory=list)
    accuracy: float = 0.0
    tested: int = 0
    log: list[str] = field(default_factory=list)
    _counter: int = 0

    def push(self, rule: SurfaceRule) -> None:
        key = (rule.lhs, rule.rhs)
        if key in self.queued_keys:
            return
        if any((r.lhs, r.rhs) == key for r in self.accepted):
            return
        self.queued_keys.add(key)
        heapq.heappush(self.queue, (description_length(rule), self._counter, rule))
        self._counter += 1


SEARCH_BUDGET = 300


def derive(
    rules: list[SurfaceRule], x: list[str], y: list[str], output_vocab,
    order: list[int] | None = None,
) -> list[tuple[int, list[str]]] | None:
    """Bounded DFS for a derivation x ->* y; returns [(rule idx, state)] or None.

    Rules are tried in `order` (defaults to list order), positions leftmost
    first, spans longest first; the first derivation found wins, which keeps
    replay deterministic.
    """
    order = order if order is not None else list(range(len(rules)))
    visited: set[tuple] = set()
    budget = [SEARCH_BUDGET]
    target = tuple(y)

    def dfs(state: tuple) -> list | None:
        if state == target:
            return []
        if state in visited or budget[0] <= 0:
            return None
        visited.add(state)
        budget[0] -= 1
        if len(state) > 3 * len(target) + 4:
            return None
        for ri in order:
            rule = rules[ri]
            for start in range(len(state)):
                for end, assign in match_rule(rule, list(state), start, output_vocab):
                    replacement = realize_rhs(rule, assign, output_vocab)
                    if replacement is None:
                        continue
                    nxt = tuple(state[:start]) + tuple(replacement) + tuple(state[end:])
                    tail = dfs(nxt)
                    if tail is not None:
                        return [(ri, list(nxt))] + tail
                    break  # longest match per start only
        return None

    return dfs(tuple(x))


def repair_test(
    accepted: list[SurfaceRule],
    candidate: SurfaceRule,
    demos: list[tuple[list[str], list[str]]],
    output_vocab,
    solved_before: set[int],
) -> tuple[bool, set[int]]:
    """Accept iff no solved demo regresses and exact accuracy strictly rises."""
    rules = accepted + [candidate]
    solved_after: set[int] = set()
    for di, (x, y) in enumerate(demos):
        if derive(rules, x, y, output_vocab) is not None:
            solved_after.add(di)
    ok = solved_before <= solved_after and len(solved_after) > len(solved_before)
    return ok, solved_after


def enumerate_templates(
    demos: list[tuple[list[str], list[str]]],
    state: MinerState,
    output_vocab,
    cap: int = 5000,
):
    """Refill the queue from residuals; yields candidates cheapest-first.

    The residual of an unsolved demonstration is its input rewritten as far
    as the accepted library reaches (greedy replay), so e.g. accepted
    primitive rules expose the output-word runs the abstraction step turns
    into variables. Raises BudgetExhausted past `cap` queued candidates.
    """
    precedence = {i: i for i in range(len(state.accepted))}
    for x, y in demos:
        if derive(state.accepted, x, y, output_vocab) is not None:
            continue
        residual, _, _ = interpret(state.accepted, precedence, list(x), output_vocab)
        if residual == list(y):
            continue
        for rule in propose_templates(list(residual), list(y), output_vocab):
            state.push(rule)
            if state._counter > cap:
                raise BudgetExhausted(f"more than {cap} candidates enumerated")
    while state.queue:
        yield heapq.heappop(state.queue)[2]


def _topo_ranks(n: int, edges: set[tuple[int, int]], rejected: list) -> dict[int, int]:
    """Kahn layering; cycle-creating edges are dropped and recorded."""
    kept: set[tuple[int, int]] = set()
    adj: dict[int, set[int]] = {i: set() for i in range(n)}

    def reaches(a: int, b: int) -> bool:
        stack = [a]
        seen = set()
        while stack:
            u = stack.pop()
            if u == b:
                return True
            if u in seen:
                continue
            seen.add(u)
            stack.extend(adj[u])
        return False

    for w, l in sorted(edges):
        if reaches(l, w):
            rejected.append((w, l))
            continue
        kept.add((w, l))
        adj[w].add(l)
    indeg = {i: 0 for i in range(n)}
    for w, l in kept:
        indeg[l] += 1
    ranks: dict[int, int] = {}
    frontier = sorted(i for i in range(n) if indeg[i] == 0)
    layer = 0
    while frontier:
        nxt = []
        for u in frontier:
            ranks[u] = layer
            for v in sorted(adj[u]):
                indeg[v] -= 1
                if indeg[v] == 0:
                    nxt.append(v)
        frontier = sorted(set(nxt))
        layer += 1
    for i in range(n):
        ranks.setdefault(i, layer)
    return ranks


@dataclass
class MinerResult:
    rules: list[SurfaceRule]
    ranks: dict[int, int]
    accuracy: float
    primitives: set[str]
    modifiers: set[str]
    outputs: set[str]
    log: list[str]


def mine(
    demos: list[tuple[list[str], list[str]]],
    one_step_demos: list[tuple[list[str], list[str]]] | None = None,
    max_candidates: int = 2000,
    plateau_rounds: int = 3,
) -> MinerResult:
    """The replay loop: propose, repair-test, accept, re-derive, repeat."""
    output_vocab = {w for _, y in demos for w in y}
    state = MinerState()
    solved: set[int] = {
        di for di, (x, y) in enumerate(demos) if list(x) == list(y)
    }
    stale_rounds = 0
    while stale_rounds < plateau_rounds:
        accepted_this_round = False
        try:
            gen = enumerate_templates(demos, state, output_vocab, cap=max_candidates)
            for candidate in gen:
                if state.tested >= max_candidates:
                    state.log.append("candidate budget exhausted; best-so-far returned")
                    stale_rounds = plateau_rounds
                    break
                state.tested += 1
                ok, solved_after = repair_test(
                    state.accepted, candidate, demos, output_vocab, solved
                )
                if not ok:
                    continue
                gain = len(solved_after) - len(solved)
                state.accepted.append(candidate)
                solved = solved_after
                state.log.append(
                    f"accepted (dl={description_length(candidate)}, +{gain} demos): {candidate}"
                )
                accepted_this_round = True
                break  # re-derive residuals and re-propose
        except BudgetExhausted:
            state.log.append("enumeration budget exhausted; best-so-far returned")
            break
        if accepted_this_round:
            stale_rounds = 0
            state.queue.clear()
            state.queued_keys = {(r.lhs, r.rhs) for r in state.accepted}
        else:
            stale_rounds += 1
    state.accuracy = len(solved) / len(demos) if demos else 1.0

    # type the variables with the accepted primitive lexicon: one-step
    # demonstrations rewrite single instances over raw input words, which an
    # output-run variable alone can never match
    rules = state.accepted
    prim_map = {
        r.lhs[0].word: tuple(it.word for it in r.rhs) for r in rules if r.is_prim_rule
    }
    for rule in rules:
        for v in list(rule.bindings):
            if rule.bindings[v] is None and prim_map:
                rule.bindings[v] = dict(prim_map)
    for x, y in demos:
        path = derive(rules, x, y, output_vocab)
        if not path:
            continue
        current = list(x)
        for ri, nxt in path:
            present = [
                pi
                for pi, rule in enumerate(rules)
                if any(
                    realize_rhs(rule, a, output_vocab) is not None
                    for s in range(len(current))
                    for _, a in match_rule(rule, current, s, output_vocab)
                )
            ]
            for loser in present:
                if loser != ri:
                    state.edges.add((ri, loser))
            current = nxt
    for x, y in one_step_demos or []:
        present, fired = [], []
        for ri, rule in enumerate(rules):
            matches = [
                (s, e, a)
                for s in range(len(x))
                for e, a in match_rule(rule, x, s, output_vocab)
                if realize_rhs(rule, a, output_vocab) is not None
            ]
            if not matches:
                continue
            present.append(ri)
            if any(apply_rule(rule, x, s, e, a, output_vocab) == y for s, e, a in matches):
                fired.append(ri)
        for w in fired:
            for loser in present:
                if loser not in fired:
                    state.edges.add((w, loser))

    ranks = _topo_ranks(len(rules), state.edges, state.rejected_edges)
    for edge in state.rejected_edges:
        state.log.append(f"rejected cycle-creating fires-before edge {edge}")
    primitives = {r.lhs[0].word for r in rules if r.is_prim_rule}
    modifiers = {
        w for r in rules if not r.is_prim_rule for w in r.lhs_words if w not in primitives
    }
    return MinerResult(
        rules, ranks, state.accuracy, primitives, modifiers, set(output_vocab), state.log
    )


class EnumerativeRuleMiner(BaseEstimator):
    """fit(demo_lines, one_step_lines) -> grammar_ via the shared bridge."""

    def __init__(self, max_candidates=2000, plateau_rounds=3,
                 bounds: GrammarBounds | None = None):
        self.max_candidates = max_candidates
        self.plateau_rounds = plateau_rounds
        self.bounds = bounds

    def fit(self, demo_lines: list[str], one_step_lines: list[str] | None = None):
        demos = [parse_demo_line(l) for l in demo_lines if l.strip()]
        one_step = [parse_demo_line(l) for l in one_step_lines or [] if l.strip()]
        result = mine(
            demos,
            one_step,
            max_candidates=self.max_candidates,
            plateau_rounds=self.plateau_rounds,
        )
        self.result_ = result
        self.rules_ = result.rules
        self.accuracy_ = result.accuracy
        self.provenance_log_ = result.log
        ranks = {
            i: result.ranks[i]
            for i, r in enumerate(result.rules)
            if not r.is_prim_rule
        }
        self.grammar_, self.anon_map_, self.export_log_ = export_grammar(
            result.rules, ranks, sorted(result.outputs), self.bounds
        )
        return self

    def _check_fitted(self):
        if not hasattr(self, "grammar_"):
            raise NotFittedError("fit the miner first")

    def predict(self, X: list[list[str]]) -> list[list[str] | None]:
        """Best-effort surface replay with the mined library."""
        self._check_fitted()
        vocab = set(self.result_.outputs)
        out = []
        order = sorted(range(len(self.rules_)), key=lambda i: self.result_.ranks.get(i, 0))
        precedence = {ri: pos for pos, ri in enumerate(order)}
        for words in X:
            final, _, resolved = interpret(self.rules_, precedence, list(words), vocab)
            out.append(final if resolved else None)
        return out
