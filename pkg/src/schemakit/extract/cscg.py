"""Episode-alignment schema discovery with typed variables.

Candidates come from pairwise LCS alignment of episodes: matched tokens stay
literal anchors, mismatched segments become variables typed by the pair of
forms they bound. A variable's x-side unit is one word; repeated identical
units inside one segment express duplication rules. Variable x<->y linking
uses a global primitive-pair dictionary accumulated from literal and
single-variable candidates, falling back to the unique bijection.

Discovery then validates candidates on the whole corpus (support = episodes
the rule rewrites end-to-end), filters by min_support, deduplicates by
literal multisets, and prunes rules compositionally subsumed by
higher-support survivors. Precedence over the surviving schemas is learned
from one-step demonstrations via Copeland scores on pairwise win counts.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from ..errors import SchemakitError
from ..grammar import GrammarBounds
from .chmm import ClonedHMM, decode_episodes
from .corpus import Episode, parse_demo_line
from .export import (
    Lit,
    SurfaceRule,
    Var,
    apply_rule,
    best_match,
    export_grammar,
    interpret,
    match_rule,
    realize_rhs,
)


def _lcs_events(a: tuple[str, ...], b: tuple[str, ...]):
    """Alignment events: ('match', word) or ('gap', seg_a, seg_b)."""
    la, lb = len(a), len(b)
    L = np.zeros((la + 1, lb + 1), dtype=np.int32)
    for i in range(la - 1, -1, -1):
        for j in range(lb - 1, -1, -1):
            if a[i] == b[j]:
                L[i, j] = L[i + 1, j + 1] + 1
            else:
                L[i, j] = max(L[i + 1, j], L[i, j + 1])
    events = []
    ga: list[str] = []
    gb: list[str] = []
    i = j = 0
    while i < la and j < lb:
        if a[i] == b[j] and L[i, j] == L[i + 1, j + 1] + 1:
            if ga or gb:
                events.append(("gap", tuple(ga), tuple(gb)))
                ga, gb = [], []
            events.append(("match", a[i]))
            i += 1
            j += 1
        elif L[i + 1, j] >= L[i, j + 1]:
            ga.append(a[i])
            i += 1
        else:
            gb.append(b[j])
            j += 1
    ga.extend(a[i:])
    gb.extend(b[j:])
    if ga or gb:
        events.append(("gap", tuple(ga), tuple(gb)))
    return events


def _repeat_units(seg_a: tuple, seg_b: tuple, single_word: bool):
    """Decompose a gap into k repetitions of per-episode units.

    Returns (unit_a, unit_b, k) with the largest k such that each side is k
    identical copies of its unit; None if no decomposition exists.
    """
    if not seg_a or not seg_b:
        return None
    for k in range(max(len(seg_a), len(seg_b)), 0, -1):
        if len(seg_a) % k or len(seg_b) % k:
            continue
        ua = seg_a[: len(seg_a) // k]
        ub = seg_b[: len(seg_b) // k]
        if single_word and (len(ua) != 1 or len(ub) != 1):
            continue
        if seg_a == ua * k and seg_b == ub * k:
            return ua, ub, k
    return None


@dataclass
class AlignedSide:
    items: list  # Lit | class id placeholder (int)
    classes: list  # list of (unit_a, unit_b) in first-occurrence order


def _align_x(x_a, x_b) -> AlignedSide | None:
    events = _lcs_events(tuple(x_a), tuple(x_b))
    items: list = []
    classes: list[tuple] = []
    for ev in events:
        if ev[0] == "match":
            items.append(Lit(ev[1]))
            continue
        decomp = _repeat_units(ev[1], ev[2], single_word=True)
        if decomp is None:
            return None
        ua, ub, k = decomp
        key = (ua, ub)
        if key not in classes:
            classes.append(key)
        items.extend([classes.index(key)] * k)
    return AlignedSide(items, classes)


def _align_y(y_a, y_b, expectations: list) -> AlignedSide | None:
    """y-side items: anchors plus class references.

    A gap is consumed either by the expected realizations of x-side classes
    (which handles adjacent distinct variables, e.g. argument swaps) or, as a
    fallback, by k repetitions of one fresh unit pair (duplication rules and
    yet-unknown realizations). Fresh units get negative ids, linked later.
    """
    events = _lcs_events(tuple(y_a), tuple(y_b))
    items: list = []
    fresh: list[tuple] = []

    def consume_gap(ga: tuple, gb: tuple) -> bool:
        pa = pb = 0
        while pa < len(ga) or pb < len(gb):
            for xi, exp in enumerate(expectations):
                ea, eb = exp
                if ea is None or eb is None:
                    continue
                if ga[pa : pa + len(ea)] == ea and gb[pb : pb + len(eb)] == eb:
                    items.append(xi)
                    pa += len(ea)
                    pb += len(eb)
                    break
            else:
                decomp = _repeat_units(ga[pa:], gb[pb:], single_word=False)
                if decomp is None:
                    return False
                ua, ub, k = decomp
                key = (ua, ub)
                if key not in fresh:
                    fresh.append(key)
                items.extend([-1 - fresh.index(key)] * k)
                return True
        return True

    for ev in events:
        if ev[0] == "match":
            items.append(Lit(ev[1]))
        elif not consume_gap(ev[1], ev[2]):
            return None
    return AlignedSide(items, fresh)


def align(
    e_i: Episode, e_j: Episode, prim_pairs: dict[str, tuple[str, ...]] | None = None
) -> SurfaceRule | None:
    """Template generalizing two episodes, or None when no consistent one exists."""
    prim_pairs = prim_pairs or {}
    if e_i.x == e_j.x:
        if e_i.y != e_j.y:
            return None  # contradictory demonstrations
        lhs = tuple(Lit(w) for w in e_i.x)
        rhs = tuple(Lit(w) for w in e_i.y)
        return SurfaceRule(lhs, rhs, {}, 0)
    xs = _align_x(e_i.x, e_j.x)
    if xs is None or not xs.classes:
        return None
    if not any(isinstance(it, Lit) for it in xs.items):
        return None  # anchor-free templates over-generalize
    expectations = [
        (prim_pairs.get(xa[0]), prim_pairs.get(xb[0])) for xa, xb in xs.classes
    ]
    ys = _align_y(e_i.y, e_j.y, expectations)
    if ys is None:
        return None

    # link fresh y-side unit classes to x-side classes
    def forms_match(xi: int, yc) -> bool | None:
        ya, yb = yc
        known_a, known_b = expectations[xi]
        if known_a is not None and known_b is not None:
            return known_a == ya and known_b == yb
        if known_a is not None and known_a != ya:
            return False
        if known_b is not None and known_b != yb:
            return False
        return None  # unknown: possible

    direct_refs = {it for it in ys.items if isinstance(it, int) and it >= 0}
    link: dict[int, int] = {}
    used: set[int] = set(direct_refs)
    for fi, yc in enumerate(ys.classes):
        verdicts = [forms_match(xi, yc) for xi in range(len(xs.classes))]
        forced = [xi for xi, v in enumerate(verdicts) if v is True and xi not in used]
        possible = [xi for xi, v in enumerate(verdicts) if v is not False and xi not in used]
        if len(forced) == 1:
            pick = forced[0]
        elif len(possible) == 1:
            pick = possible[0]
        else:
            return None
        used.add(pick)
        link[-1 - fi] = pick

    bindings: dict[int, dict[str, tuple[str, ...]] | None] = {}
    for ref, xi in link.items():
        (xa, xb) = xs.classes[xi]
        (ya, yb) = ys.classes[-1 - ref]
        if xa == xb and ya != yb:
            return None  # same surface cannot realize two outputs
        bindings[xi] = {xa[0]: ya, xb[0]: yb}
    for xi in direct_refs:
        xa, xb = xs.classes[xi]
        ea, eb = expectations[xi]
        bindings[xi] = {xa[0]: ea, xb[0]: eb}
    for xi, (xa, xb) in enumerate(xs.classes):
        if xi not in bindings:
            bindings[xi] = {xa[0]: (), xb[0]: ()}  # argument unused by the evaluator

    lhs = tuple(it if isinstance(it, Lit) else Var(it) for it in xs.items)
    rhs = tuple(
        it
        if isinstance(it, Lit)
        else Var(it if it >= 0 else link[it])
        for it in ys.items
    )
    return SurfaceRule(lhs, rhs, bindings, 0)


def _canonical(rule: SurfaceRule) -> SurfaceRule:
    """Renumber variables by first occurrence so identical templates merge."""
    order: dict[int, int] = {}
    for it in rule.lhs + rule.rhs:
        if isinstance(it, Var) and it.index not in order:
            order[it.index] = len(order)
    lhs = tuple(Var(order[it.index], it.token) if isinstance(it, Var) else it for it in rule.lhs)
    rhs = tuple(Var(order[it.index], it.token) if isinstance(it, Var) else it for it in rule.rhs)
    bindings = {order[k]: (dict(v) if v is not None else None) for k, v in rule.bindings.items()}
    return SurfaceRule(lhs, rhs, bindings, rule.support)


def validate_on(rule: SurfaceRule, episode: Episode, output_vocab) -> bool:
    """Does the rule alone rewrite the episode end to end?"""
    for end, assign in match_rule(rule, list(episode.x), 0, output_vocab):
        if end != len(episode.x):
            continue
        got = realize_rhs(rule, assign, output_vocab)
        if got is not None and tuple(got) == episode.y:
            return True
    return False


def discover(
    episodes: list[Episode], min_support: int = 2
) -> tuple[list[SurfaceRule], dict[str, tuple[str, ...]]]:
    """Alignment over all episode pairs, validation, dedup, pruning."""
    output_vocab = {w for e in episodes for w in e.y}

    # pass 1: literal rules and unambiguous single-variable alignments feed
    # the global primitive-pair dictionary used to link multi-variable rules
    prim_pairs: dict[str, tuple[str, ...]] = {}
    for e in episodes:
        if len(e.x) == 1:
            prim_pairs.setdefault(e.x[0], e.y)
    for e_i, e_j in itertools.combinations(episodes, 2):
        rule = align(e_i, e_j)
        if rule is None:
            continue
        for binding in rule.bindings.values():
            if binding and len(binding) == 2:
                for xw, yw in binding.items():
                    if yw:
                        prim_pairs.setdefault(xw, yw)

    # pass 2: full alignment with linking knowledge
    candidates: dict[tuple, SurfaceRule] = {}
    for e_i, e_j in itertools.combinations(episodes, 2):
        rule = align(e_i, e_j, prim_pairs)
        if rule is None:
            continue
        rule = _canonical(rule)
        key = (rule.lhs, rule.rhs)
        if key in candidates:
            merged = candidates[key]
            ok = True
            for v, binding in rule.bindings.items():
                if binding is None:
                    continue
                target = merged.bindings.setdefault(v, {})
                for xw, yw in binding.items():
                    if target.get(xw, yw) != yw:
                        ok = False  # contradictory binding: keep first
                        break
                    if yw or xw not in target:
                        target.setdefault(xw, yw)
            _ = ok
        else:
            candidates[key] = rule

    # validation and support
    supported: list[SurfaceRule] = []
    for rule in candidates.values():
        support = sum(validate_on(rule, e, output_vocab) for e in episodes)
        if support >= min_support:
            supported.append(
                SurfaceRule(rule.lhs, rule.rhs, rule.bindings, support)
            )

    # deduplicate by literal multisets: keep higher support, then shorter lhs
    by_multiset: dict[tuple, SurfaceRule] = {}
    for rule in supported:
        key = rule.literal_multiset
        old = by_multiset.get(key)
        if old is None or (-rule.support, len(rule.lhs), str(rule)) < (
            -old.support,
            len(old.lhs),
            str(old),
        ):
            by_multiset[key] = rule
    deduped = sorted(by_multiset.values(), key=lambda r: (-r.support, str(r)))

    # prune rules compositionally subsumed by higher-support survivors
    keep = list(deduped)
    for rule in sorted(deduped, key=lambda r: r.support):
        others = [r for r in keep if r is not rule and r.support > rule.support]
        if not others:
            continue
        precedence = {i: i for i in range(len(others))}  # support-descending order
        reproduced = True
        for e in episodes:
            if not validate_on(rule, e, output_vocab):
                continue
            final, _, resolved = interpret(others, precedence, list(e.x), output_vocab)
            if not resolved or tuple(final) != e.y:
                reproduced = False
                break
        if reproduced:
            keep.remove(rule)
    return keep, prim_pairs


def learn_precedence(
    rules: list[SurfaceRule],
    one_step_demos: list[tuple[list[str], list[str]]],
    output_vocab,
) -> tuple[np.ndarray, dict[int, int], dict[int, int]]:
    """Copeland scores and dense ranks from one-step demonstrations.

    For each demo, P holds the rules whose pattern occurs in the command and
    F those whose single application reproduces the one-step result; every
    winner beats every loser once in the win matrix.
    """
    n = len(rules)
    C = np.zeros((n, n), dtype=np.int64)
    for cmd, result in one_step_demos:
        present = []
        fired = []
        for ri, rule in enumerate(rules):
            matches = [
                (s, e, a)
                for s in range(len(cmd))
                for e, a in match_rule(rule, cmd, s, output_vocab)
                if realize_rhs(rule, a, output_vocab) is not None
            ]
            if not matches:
                continue
            present.append(ri)
            if any(
                apply_rule(rule, cmd, s, e, a, output_vocab) == result
                for s, e, a in matches
            ):
                fired.append(ri)
        for w in fired:
            for loser in present:
                if loser not in fired:
                    C[w, loser] += 1
    scores = copeland_scores(C)
    distinct = sorted(set(scores.tolist()), reverse=True)
    rank_of = {s: r for r, s in enumerate(distinct)}
    ranks = {i: rank_of[int(scores[i])] for i in range(n)}
    return C, {i: int(scores[i]) for i in range(n)}, ranks


def copeland_scores(C: np.ndarray) -> np.ndarray:
    wins = (C > 0).astype(np.int64)
    return (wins - wins.T).sum(axis=1)


class CscgSchemaExtractor(BaseEstimator):
    """fit(demo_lines, one_step_lines) -> validator-clean grammar_.

    Stage 1 trains a cloned HMM on the raw demonstration streams and decodes
    episodes (latent traces kept for diagnostics). Stage 2 aligns episode
    pairs, validates and prunes candidates, learns precedence from one-step
    demonstrations, and exports through the shared grammar bridge.
    """

    def __init__(self, min_support=2, n_clones=10, em_iters=20, seed=0,
                 bounds: GrammarBounds | None = None):
        self.min_support = min_support
        self.n_clones = n_clones
        self.em_iters = em_iters
        self.seed = seed
        self.bounds = bounds

    def fit(self, demo_lines: list[str], one_step_lines: list[str] | None = None):
        self.chmm_ = ClonedHMM(
            n_clones=self.n_clones, n_iter=self.em_iters, seed=self.seed
        )
        streams = []
        for line in demo_lines:
            x, y = parse_demo_line(line)
            streams.append(["IN:", *x, "<SEP>", *y, "<EOS>"])
        self.chmm_.fit(streams)
        self.episodes_, self.skipped_ = decode_episodes(self.chmm_, demo_lines)
        self.output_vocab_ = sorted({w for e in self.episodes_ for w in e.y})
        self.rules_, self.prim_pairs_ = discover(self.episodes_, self.min_support)
        schema_idx = [i for i, r in enumerate(self.rules_) if not r.is_prim_rule]
        if one_step_lines:
            demos = [parse_demo_line(line) for line in one_step_lines if line.strip()]
            sub_rules = [self.rules_[i] for i in schema_idx]
            self.win_matrix_, scores, sub_ranks = learn_precedence(
                sub_rules, demos, set(self.output_vocab_)
            )
            self.scores_ = {schema_idx[i]: s for i, s in scores.items()}
            ranks = {schema_idx[i]: r for i, r in sub_ranks.items()}
        else:
            self.win_matrix_ = np.zeros((len(schema_idx),) * 2, dtype=np.int64)
            self.scores_ = {i: 0 for i in schema_idx}
            ranks = {i: 0 for i in schema_idx}
        self.ranks_ = ranks
        self.grammar_, self.anon_map_, self.export_log_ = export_grammar(
            self.rules_, ranks, self.output_vocab_, self.bounds
        )
        return self

    def _check_fitted(self):
        if not hasattr(self, "grammar_"):
            raise NotFittedError("fit the extractor first")

    def predict(self, X: list[list[str]]) -> list[list[str] | None]:
        """Greedy surface interpretation (diagnostic path, not the engine)."""
        self._check_fitted()
        order = sorted(
            range(len(self.rules_)),
            key=lambda i: self.ranks_.get(i, len(self.rules_)),
        )
        precedence = {ri: pos for pos, ri in enumerate(order)}
        out = []
        for words in X:
            final, _, resolved = interpret(
                self.rules_, precedence, list(words), set(self.output_vocab_)
            )
            out.append(final if resolved else None)
        return out
