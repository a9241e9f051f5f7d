import pytest

from schemakit.errors import MissingPrimEval, ParseError
from schemakit.grammar import (
    Apply,
    ArgRef,
    CompositionTree,
    Emit,
    Grammar,
    GrammarBounds,
    Leaf,
    Literal,
    Schema,
    Slot,
    dump_grammar,
    evaluate,
    load_grammar,
    match_instances,
    oracle_decompose_step,
    parse_tree,
    surface,
    validate_grammar,
)
from schemakit.scan import scan_grammar
from schemakit.tokens import mod, out, prim, schema_name


def toy_grammar():
    """sigma_1 = [_ MOD_1] resolving before sigma_0 = [_ MOD_0 _]."""
    s1 = Schema(1, (Slot(), Literal(mod(1))), priority=5, eval_template=(ArgRef(0),))
    s0 = Schema(0, (Slot(), Literal(mod(0)), Slot()), priority=1,
                eval_template=(ArgRef(0), ArgRef(1)))
    prim_eval = {prim(i): (out(i),) for i in range(8)}
    return Grammar([s0, s1], prim_eval, GrammarBounds(8, 4, 2, 8))


def scan_tokens(amap, text):
    return amap.encode_command(text.split())


class TestValidate:
    def test_scan_fixture_is_clean(self):
        g, _ = scan_grammar()
        assert validate_grammar(g).ok

    def test_toy_grammar_is_clean(self):
        assert validate_grammar(toy_grammar()).ok

    def test_modifier_without_schema(self):
        g = toy_grammar()
        g.schemas[0] = Schema(
            0, (Slot(), Literal(mod(0)), Literal(mod(2))), 1, (ArgRef(0),)
        )
        report = validate_grammar(g)
        assert any("without atomic schema" in v for v in report.violations)

    def test_shared_priority_same_modifier(self):
        g = toy_grammar()
        g.schemas.append(Schema(2, (Literal(prim(0)), Literal(mod(1))), 5, ()))
        report = validate_grammar(g)
        assert any("ambiguous priority" in v for v in report.violations)

    def test_bad_argref(self):
        g = toy_grammar()
        g.schemas[1] = Schema(1, (Slot(), Literal(mod(1))), 5, (ArgRef(3),))
        assert not validate_grammar(g).ok


class TestMatch:
    def test_scan_walk_left_twice(self):
        g, amap = scan_grammar()
        matches = match_instances(g, scan_tokens(amap, "walk left twice"))
        # "left twice" is not a match: slots bind primitives, left is a modifier
        assert len(matches) == 1
        m = matches[0]
        assert g.schemas[m.schema_index].name_index == 6
        assert (m.start, m.end) == (0, 2)
        assert m.args == (amap.prim_by_surface["walk"],)

    def test_compound_empty_adjacent(self):
        g, amap = scan_grammar()
        compound_only = Grammar([g.schemas[0]], g.prim_eval, g.bounds)
        matches = match_instances(compound_only, scan_tokens(amap, "turn left"))
        assert len(matches) == 1
        assert matches[0].args == ()

    def test_compound_ranks_before_atomic(self):
        g, amap = scan_grammar()
        matches = match_instances(g, scan_tokens(amap, "turn left"))
        # the atomic left-schema also matches (turn is a primitive) but the
        # compound comes first by priority
        assert [g.schemas[m.schema_index].name_index for m in matches] == [0, 6]

    def test_primitives_only(self):
        g, amap = scan_grammar()
        assert match_instances(g, scan_tokens(amap, "walk")) == []


class TestParse:
    def test_figure_command(self):
        g, amap = scan_grammar()
        tree = parse_tree(g, scan_tokens(amap, "walk right twice after turn left"))
        by_name = {s.name_index: i for i, s in enumerate(g.schemas)}
        walk = amap.prim_by_surface["walk"]
        expected = CompositionTree(
            Apply(
                by_name[15],
                (
                    Apply(by_name[12], (Apply(by_name[7], (Leaf(walk),)),)),
                    Apply(by_name[0], ()),
                ),
            )
        )
        assert tree == expected
        assert tree.depth() == 2

    def test_single_primitive(self):
        g, amap = scan_grammar()
        tree = parse_tree(g, scan_tokens(amap, "walk"))
        assert tree == CompositionTree(Leaf(amap.prim_by_surface["walk"]))
        assert tree.depth() == 0

    def test_malformed(self):
        g, amap = scan_grammar()
        with pytest.raises(ParseError):
            parse_tree(g, scan_tokens(amap, "walk and and"))

    def test_surface_round_trip(self):
        g, amap = scan_grammar()
        for text in ("jump", "turn around right", "walk left twice and jump thrice"):
            toks = scan_tokens(amap, text)
            assert surface(g, parse_tree(g, toks)) == toks


class TestEvaluate:
    def run(self, text):
        g, amap = scan_grammar()
        result = evaluate(g, parse_tree(g, scan_tokens(amap, text)))
        return " ".join(amap.decode_output(result))

    def test_jump_twice(self):
        assert self.run("jump twice") == "JUMP JUMP"

    def test_figure_command(self):
        assert self.run("walk right twice after turn left") == "LTURN RTURN WALK RTURN WALK"

    def test_leaf(self):
        assert self.run("walk") == "WALK"

    def test_around(self):
        assert self.run("jump around left") == "LTURN JUMP LTURN JUMP LTURN JUMP LTURN JUMP"

    def test_missing_prim_eval(self):
        g, amap = scan_grammar()
        del g.prim_eval[amap.prim_by_surface["walk"]]
        with pytest.raises(MissingPrimEval):
            evaluate(g, parse_tree(g, scan_tokens(amap, "walk")))


class TestOracleStep:
    def test_two_deep(self):
        g = toy_grammar()
        seq = [prim(2), mod(1), mod(0), prim(3)]
        assert oracle_decompose_step(g, seq) == [prim(2), schema_name(1), mod(0), prim(3)]

    def test_one_deep_marks_root(self):
        g = toy_grammar()
        seq = [prim(0), mod(0), prim(1)]
        assert oracle_decompose_step(g, seq) == [prim(0), schema_name(0), prim(1)]

    def test_primitives_unchanged(self):
        g = toy_grammar()
        assert oracle_decompose_step(g, [prim(0), prim(1)]) == [prim(0), prim(1)]

    def test_scan_eager_marks_all_frontier(self):
        g, amap = scan_grammar()
        toks = scan_tokens(amap, "walk right twice after turn left")
        stepped = oracle_decompose_step(g, toks)
        # both depth-frontier instances marked: walk right -> SC_7, turn left -> SC_0
        spell = [t.spell() for t in stepped]
        assert spell == ["PRIM_0", "SC_7", "MOD_6", "MOD_9", "PRIM_4", "SC_0"]


class TestFileFormat:
    def test_round_trip(self):
        g, _ = scan_grammar()
        text = dump_grammar(g)
        g2 = load_grammar(text)
        assert sorted(g2.schemas, key=lambda s: s.name_index) == sorted(
            g.schemas, key=lambda s: s.name_index
        )
        assert g2.prim_eval == g.prim_eval

    def test_comments_and_errors(self):
        g = load_grammar("# empty\n")
        assert g.schemas == []
        with pytest.raises(ParseError):
            load_grammar("SCHEMA zero PRIORITY 1 PATTERN _ EVAL\n")
