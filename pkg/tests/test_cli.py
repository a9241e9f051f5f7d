import json

import pytest

from schemakit.cli import main


class TestInfer:
    def test_oracle_infer(self, capsys):
        assert main(["infer", "--input", "jump around left twice"]) == 0
        out = capsys.readouterr().out.strip()
        assert out == " ".join(["LTURN JUMP"] * 8)

    def test_trace(self, capsys):
        assert main(["infer", "--input", "jump twice", "--trace"]) == 0
        out = capsys.readouterr().out
        assert "STEP 0: PRIM_3 MOD_6" in out
        assert "BIND" in out

    def test_failure_exit_code(self, capsys):
        assert main(["infer", "--input", "jump and and"]) == 1


class TestEval:
    def test_oracle_simple(self, capsys):
        rc = main([
            "eval", "--backend", "oracle", "--split", "simple",
            "--subsample", "60", "--require", "0.99",
        ])
        assert rc == 0
        assert "exact=100.0000%" in capsys.readouterr().out

    def test_require_threshold_failure(self, tmp_path, capsys):
        import numpy as np

        from schemakit.cli import cmd_ablate  # noqa: F401  (exercised below)
        from schemakit.grammar import dump_grammar
        from schemakit.scan import ablate_boundary_noise, scan_grammar

        g, _ = scan_grammar()
        bad = ablate_boundary_noise(g, 1, np.random.default_rng(0))
        gf = tmp_path / "bad.txt"
        gf.write_text(dump_grammar(bad))
        rc = main([
            "eval", "--backend", "oracle", "--grammar", str(gf),
            "--split", "simple", "--subsample", "50", "--require", "0.99",
        ])
        assert rc == 1

    def test_unknown_flag_exits_2(self):
        with pytest.raises(SystemExit) as exc:
            main(["eval", "--no-such-flag"])
        assert exc.value.code == 2

    def test_report_and_manifest(self, tmp_path):
        report = tmp_path / "runs" / "report.csv"
        rc = main([
            "eval", "--backend", "oracle", "--split", "length",
            "--subsample", "40", "--report", str(report),
        ])
        assert rc == 0
        assert report.exists()
        manifest = json.loads((report.parent / "manifest.json").read_text())
        assert manifest["args"]["split"] == "length"
        assert "version" in manifest


class TestGenAndInspect:
    def test_gen_scan_and_demos(self, tmp_path):
        assert main(["gen", "--what", "scan", "--out", str(tmp_path / "scan")]) == 0
        assert (tmp_path / "scan" / "tasks_simple_train.txt").exists()
        assert main(["gen", "--what", "demos", "--out", str(tmp_path / "demos")]) == 0
        text = (tmp_path / "demos" / "atomic_demos.txt").read_text()
        assert "IN: jump <SEP> JUMP <EOS>" in text

    def test_gen_stream(self, tmp_path):
        rc = main([
            "gen", "--what", "stream", "--out", str(tmp_path), "--steps", "2",
            "--batch-size", "4",
        ])
        assert rc == 0
        lines = (tmp_path / "samples.txt").read_text().splitlines()
        assert len(lines) == 8
        assert all(tok.isdigit() for tok in lines[0].split())

    def test_inspect_grammar(self, tmp_path, capsys):
        from schemakit.grammar import dump_grammar
        from schemakit.scan import scan_grammar

        g, _ = scan_grammar()
        gf = tmp_path / "g.txt"
        gf.write_text(dump_grammar(g))
        assert main(["inspect", str(gf)]) == 0
        out = capsys.readouterr().out
        assert "16 schemas" in out and "valid grammar" in out

    def test_ablate_boundary_writes_grammar(self, tmp_path):
        out = tmp_path / "perturbed.txt"
        rc = main([
            "ablate", "--kind", "boundary", "--magnitude", "1",
            "--seed", "3", "--out", str(out),
        ])
        assert rc == 0
        from schemakit.grammar import load_grammar, validate_grammar

        assert validate_grammar(load_grammar(out.read_text())).ok
