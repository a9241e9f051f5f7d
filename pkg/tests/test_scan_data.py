import pytest

from schemakit.errors import ParseError
from schemakit.grammar import evaluate, parse_tree, validate_grammar
from schemakit.scan import (
    SPLIT_IDS,
    ScanExample,
    atomic_demo_pairs,
    generate_corpus,
    load_split,
    make_split,
    one_step_demo_pairs,
    parse_examples,
    scan_grammar,
    write_splits,
)


class TestCorpus:
    def test_size(self):
        corpus = generate_corpus()
        assert len(corpus) == 20910
        assert len({c for c, _ in corpus}) == 20910

    def test_known_pairs(self):
        lookup = dict(generate_corpus())
        assert lookup["jump"] == "JUMP"
        assert lookup["jump twice"] == "JUMP JUMP"
        assert lookup["turn left"] == "LTURN"
        assert lookup["walk right twice after turn left"] == "LTURN RTURN WALK RTURN WALK"
        assert lookup["jump around left"] == "LTURN JUMP LTURN JUMP LTURN JUMP LTURN JUMP"
        assert lookup["walk after run"] == "RUN WALK"

    def test_output_lengths(self):
        lengths = [len(a.split()) for _, a in generate_corpus()]
        assert max(lengths) == 48


class TestSplits:
    def test_simple_sizes(self):
        train, test = make_split("simple")
        assert len(train) == 16728 and len(test) == 4182

    def test_length_split(self):
        train, test = make_split("length")
        assert all(len(e.actions) <= 22 for e in train)
        assert all(len(e.actions) > 22 for e in test)
        assert len(train) + len(test) == 20910

    def test_prim_jump(self):
        train, test = make_split("prim_jump")
        assert ScanExample(("jump",), ("JUMP",)) in train
        assert all("jump" not in e.command for e in train if e.command != ("jump",))
        assert all("jump" in e.command for e in test)

    def test_temp_or_is_around_right(self):
        train, test = make_split("temp_or")
        assert all("around right" not in " ".join(e.command) for e in train)
        assert all("around right" in " ".join(e.command) for e in test)

    def test_file_round_trip(self, tmp_path):
        write_splits(tmp_path)
        for split_id in SPLIT_IDS:
            train, test = load_split(tmp_path, split_id)
            t2, s2 = make_split(split_id)
            assert train == t2 and test == s2

    def test_line_parsing(self):
        assert parse_examples("IN: jump OUT: JUMP\n") == [
            ScanExample(("jump",), ("JUMP",))
        ]
        with pytest.raises(ParseError):
            parse_examples("IN jump OUT JUMP\n")


class TestFixtureAgainstInterpreter:
    def test_validator_clean(self):
        g, _ = scan_grammar()
        assert validate_grammar(g).ok

    def test_full_corpus_exact_match(self):
        g, amap = scan_grammar()
        for cmd, actions in generate_corpus():
            toks = amap.encode_command(cmd.split())
            got = amap.decode_output(evaluate(g, parse_tree(g, toks)))
            assert got == actions.split(), cmd

    def test_turn_left_uses_compound(self):
        g, amap = scan_grammar()
        tree = parse_tree(g, amap.encode_command(["turn", "left"]))
        assert g.schemas[tree.root.schema_index].name_index == 0
        assert tree.root.children == ()


class TestDemoCorpora:
    def test_atomic_demos_are_correct(self):
        lookup = dict(generate_corpus())
        for cmd, actions in atomic_demo_pairs():
            assert lookup[cmd] == actions

    def test_one_step_examples(self):
        pairs = dict(one_step_demo_pairs())
        assert pairs["jump and walk twice"] == "jump and WALK WALK"
        assert pairs["jump and walk left"] == "jump and LTURN WALK"
        assert pairs["turn left and jump twice"] == "LTURN and jump twice"
        assert pairs["jump after walk thrice"] == "jump after WALK WALK WALK"
