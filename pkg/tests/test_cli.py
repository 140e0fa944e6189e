import json

import numpy as np
import pytest

from bncover import formats
from bncover.cli import main
from bncover.fixtures import concolic_fixture
from bncover.model import Dataset


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    model, seeds = concolic_fixture(seed=0)
    formats.save_model(model, d / "m.bnm")
    formats.save_dataset(seeds, d / "x.bnd")
    rc = main(["abstract", "--model", str(d / "m.bnm"), "--dataset", str(d / "x.bnd"),
               "--layers", "1,2", "--bins", "3", "--extended",
               "--epsilon", "1e-8", "--out", str(d / "a.bna")])
    assert rc == 0
    return d


class TestAbstract:
    def test_round_trip_inspect_matches_tables(self, workspace, capsys):
        """abstract then inspect reproduces the stored structure."""
        rc = main(["inspect", str(workspace / "a.bna"), "--json"])
        assert rc == 0
        payload = json.loads(capsys.readouterr().out)
        assert payload["nodes"] == 4 and payload["edges"] == 4
        assert payload["table_shapes"]["L2.f0"] == [25, 5]
        assert {"model_sha256", "dataset_sha256", "config_sha256"} <= set(
            payload["provenance"])
        bn = formats.load_abstraction(workspace / "a.bna")
        assert payload["sample_count"] == bn.tables.sample_count

    def test_missing_layer_flag(self, workspace):
        rc = main(["abstract", "--model", str(workspace / "m.bnm"),
                   "--dataset", str(workspace / "x.bnd"),
                   "--out", str(workspace / "zz.bna")])
        assert rc == 2


class TestCoverage:
    def test_report_totals_match_tables(self, workspace, capsys):
        report = workspace / "cov.csv"
        rc = main(["coverage", "--bn", str(workspace / "a.bna"),
                   "--epsilon", "1e-8", "--report", str(report), "--json"])
        assert rc == 0
        payload = json.loads(capsys.readouterr().out)
        lines = [l for l in report.read_text().splitlines() if not l.startswith("#")]
        rows = [l.split(",") for l in lines[1:]]
        feature_rows = [r for r in rows if r[1] == "feature"]
        covered = sum(int(r[2]) for r in feature_rows)
        total = sum(int(r[3]) for r in feature_rows)
        bn = formats.load_abstraction(workspace / "a.bna")
        assert total == sum(bn.structure.partition_of(n).size for n in bn.nodes())
        from fractions import Fraction
        from bncover.coverage import bfcov
        assert Fraction(payload["bfcov"]) == bfcov(bn, 1e-8)

    def test_provenance_comments_embedded(self, workspace):
        report = workspace / "cov2.csv"
        main(["coverage", "--bn", str(workspace / "a.bna"),
              "--report", str(report)])
        text = report.read_text()
        assert "# model_sha256=" in text and "# dataset_sha256=" in text


class TestInfer:
    def test_map_and_evidential(self, workspace, capsys):
        rc = main(["infer", "--bn", str(workspace / "a.bna"), "--mode", "map",
                   "--query", "2:0", "--evidence", "1:0=2", "--json"])
        assert rc == 0
        payload = json.loads(capsys.readouterr().out)
        assert 1 <= payload["interval"] <= 5
        rc = main(["infer", "--bn", str(workspace / "a.bna"),
                   "--mode", "evidential", "--evidence", "2:0=2", "--json"])
        assert rc == 0
        payload = json.loads(capsys.readouterr().out)
        for vec in payload["posteriors"].values():
            assert abs(sum(vec) - 1.0) < 1e-9

    def test_unsupported_evidence_is_domain_error(self, workspace):
        rc = main(["infer", "--bn", str(workspace / "a.bna"), "--mode", "map",
                   "--query", "2:0", "--evidence", "1:0=9"])
        assert rc == 1


class TestMonitor:
    def test_shift_identity_zero(self, workspace, capsys):
        rc = main(["monitor", "--bn", str(workspace / "a.bna"),
                   "--model", str(workspace / "m.bnm"),
                   "--dataset", str(workspace / "x.bnd"),
                   "--mode", "shift", "--json"])
        assert rc == 0
        payload = json.loads(capsys.readouterr().out)
        assert payload["global_distance"] == 0.0

    def test_outlier_scan(self, workspace, capsys):
        model, seeds = concolic_fixture(seed=0)
        weird = np.zeros((2,) + model.input_shape)
        weird[1] = 1.0
        formats.save_dataset(Dataset(inputs=weird), workspace / "weird.bnd")
        rc = main(["monitor", "--bn", str(workspace / "a.bna"),
                   "--model", str(workspace / "m.bnm"),
                   "--dataset", str(workspace / "weird.bnd"),
                   "--mode", "outlier", "--json"])
        assert rc == 0
        payload = json.loads(capsys.readouterr().out)
        assert payload["checked"] == 2
        assert payload["outliers"]  # extreme patterns fall outside the fit


class TestConcolic:
    def test_full_run_artifacts(self, workspace, capsys):
        out = workspace / "gen"
        rc = main(["concolic", "--model", str(workspace / "m.bnm"),
                   "--bn", str(workspace / "a.bna"),
                   "--seed-set", str(workspace / "x.bnd"),
                   "--criterion", "bfc", "--epsilon", "1e-8",
                   "--iters", "100", "--out", str(out), "--json"])
        assert rc == 0
        payload = json.loads(capsys.readouterr().out)
        assert payload["criterion_satisfied"] is True
        assert (out / "iterations.csv").exists()
        assert (out / "coverage.csv").exists()
        assert (out / "adversarial.csv").exists()
        if payload["retained"]:
            gen = formats.load_dataset(out / "generated.bnd")
            assert len(gen) == payload["retained"]
        lines = (out / "iterations.csv").read_text().splitlines()
        data = [l for l in lines if not l.startswith("#")]
        assert len(data) - 1 == payload["iterations"]

    def test_lp_dump(self, workspace):
        out = workspace / "gen2"
        rc = main(["concolic", "--model", str(workspace / "m.bnm"),
                   "--bn", str(workspace / "a.bna"),
                   "--seed-set", str(workspace / "x.bnd"),
                   "--criterion", "bfc", "--epsilon", "1e-8", "--iters", "2",
                   "--dump-lp", str(out / "lps"), "--out", str(out)])
        assert rc == 0
        dumps = list((out / "lps").glob("*.lp"))
        assert dumps and dumps[0].read_text().startswith("Minimize")


class TestConfigPrecedence:
    def test_flags_beat_config_beat_defaults(self, workspace, capsys):
        cfg = workspace / "cfg.json"
        cfg.write_text(json.dumps({"epsilon": 0.25}))
        # config epsilon applies when the flag is absent
        rc = main(["coverage", "--bn", str(workspace / "a.bna"),
                   "--config", str(cfg), "--json"])
        assert rc == 0
        assert json.loads(capsys.readouterr().out)["epsilon"] == 0.25
        # explicit flag wins
        rc = main(["coverage", "--bn", str(workspace / "a.bna"),
                   "--config", str(cfg), "--epsilon", "0.5", "--json"])
        assert rc == 0
        assert json.loads(capsys.readouterr().out)["epsilon"] == 0.5

    def test_malformed_config_is_usage_error(self, workspace):
        bad = workspace / "bad.json"
        bad.write_text("{not json")
        rc = main(["coverage", "--bn", str(workspace / "a.bna"),
                   "--config", str(bad)])
        assert rc == 2


class TestExitCodes:
    def test_missing_file_is_two(self, capsys):
        assert main(["inspect", "no-such-file.bna"]) == 2
        assert main(["coverage", "--bn", "missing.bna"]) == 2

    def test_malformed_container_is_two(self, tmp_path):
        junk = tmp_path / "x.bna"
        junk.write_bytes(b"garbage")
        assert main(["inspect", str(junk)]) == 2

    def test_inspect_model_and_dataset(self, workspace, capsys):
        assert main(["inspect", str(workspace / "m.bnm")]) == 0
        out = capsys.readouterr().out
        assert "dense" in out
        assert main(["inspect", str(workspace / "x.bnd"), "--json"]) == 0
        payload = json.loads(capsys.readouterr().out)
        assert payload["count"] == 100
