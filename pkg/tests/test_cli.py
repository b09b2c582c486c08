"""End-to-end exercises of the command-line surface."""

import json

import numpy as np
import pytest

from curllab.cli import main
from curllab.fields import FourierField, MetricField


def read_jsonl(path):
    return [json.loads(line) for line in path.read_text().splitlines() if line]


class TestSpectrumCommand:
    def test_flat_window(self, tmp_path):
        out = tmp_path / "spectrum.jsonl"
        rc = main([
            "spectrum", "--metric", "flat", "--truncation", "2",
            "--window", "0.7,1.2", "--out", str(out),
        ])
        assert rc == 0
        records = read_jsonl(out)
        assert len(records) == 6
        for rec in records:
            assert rec["eigenvalue"] == pytest.approx(1.0, abs=1e-10)
            assert "form" not in rec

    def test_sidecar_fields_round_trip(self, tmp_path):
        out = tmp_path / "spectrum.jsonl"
        fields_dir = tmp_path / "forms"
        rc = main([
            "spectrum", "--metric", "flat", "--truncation", "2",
            "--count", "2", "--out", str(out), "--fields-dir", str(fields_dir),
        ])
        assert rc == 0
        rec = read_jsonl(out)[0]
        form = FourierField.load(rec["form_file"])
        assert form.rank == "one_form"

    def test_named_random_metric(self, tmp_path):
        out = tmp_path / "s.jsonl"
        rc = main([
            "spectrum", "--metric", "random_cr(2, 0.01, 5)",
            "--truncation", "2", "--window", "0.7,1.2", "--out", str(out),
        ])
        assert rc == 0
        assert len(read_jsonl(out)) == 6


class TestDynamicsCommands:
    def test_fixed_points_abc(self, tmp_path):
        out = tmp_path / "fp.jsonl"
        rc = main(["fixed-points", "--field", "abc:1,1,1", "--out", str(out)])
        assert rc == 0
        records = read_jsonl(out)
        assert len(records) == 8
        assert all(r["classification"] == "saddle" for r in records)

    def test_orbits_with_csv(self, tmp_path):
        out = tmp_path / "orbits.jsonl"
        csv = tmp_path / "orbits.csv"
        rc = main([
            "orbits", "--field", "xi:1", "--t-max", "8", "--seeds", "4",
            "--section", "z,0.0", "--out", str(out), "--csv", str(csv),
        ])
        assert rc == 0
        records = read_jsonl(out)
        assert records and all(r["orbit_type"] == "degenerate" for r in records)
        lines = csv.read_text().splitlines()
        assert lines[0].startswith("seed_x,")
        assert len(lines) == 1 + len(records)

    def test_eigenform_file_input(self, tmp_path):
        # spectrum -> sidecar eigenform -> fixed-points consumes the file
        fields_dir = tmp_path / "forms"
        spect = tmp_path / "s.jsonl"
        main([
            "spectrum", "--metric", "flat", "--truncation", "1",
            "--count", "1", "--out", str(spect), "--fields-dir",
            str(fields_dir),
        ])
        form_file = read_jsonl(spect)[0]["form_file"]
        out = tmp_path / "fp.jsonl"
        rc = main(["fixed-points", "--field", form_file, "--out", str(out)])
        assert rc == 0


class TestContactCommands:
    def test_adapted_metric_unit_form_is_flat(self, tmp_path, capsys):
        out = tmp_path / "metric.json"
        rc = main(["adapted-metric", "--k", "1", "--out", str(out)])
        assert rc == 0
        summary = json.loads(capsys.readouterr().out.strip())
        assert summary["eigenvalue"] == pytest.approx(1.0, abs=1e-8)
        assert MetricField.load(out).is_flat

    def test_reeb_of_saved_form(self, tmp_path):
        from curllab.contact import tight_form

        form_path = tmp_path / "form.json"
        tight_form(2).form.save(form_path)
        out = tmp_path / "reeb.json"
        rc = main(["reeb", "--form", str(form_path), "--out", str(out)])
        assert rc == 0
        X = FourierField.load(out)
        np.testing.assert_allclose(
            X.eval((0, 0, 0.3)), [np.sin(0.6), np.cos(0.6), 0], atol=1e-10
        )


class TestCertificationCommands:
    def test_instability_document(self, tmp_path):
        out = tmp_path / "cert.json"
        rc = main([
            "instability", "--metric", "flat", "--truncation", "1",
            "--eigen-index", "0", "--budget", "fast", "--out", str(out),
        ])
        assert rc == 0
        doc = json.loads(out.read_text())
        assert doc["mechanism"] in (
            "saddle_fixed_point", "hyperbolic_orbit",
            "positive_wkb_exponent", "inconclusive",
        )
        assert "tolerances" in doc

    def test_certify_all_exit_zero_on_inconclusive(self, tmp_path):
        out = tmp_path / "certs.jsonl"
        rc = main([
            "certify-all", "--metric", "flat", "--truncation", "1",
            "--window", "0.9,1.1", "--budget",
            '{"T_max": 4.0, "orbit_seeds": 2, "n_seeds": 1, "wkb_T": 10.0}',
            "--out", str(out),
        ])
        assert rc == 0  # inconclusive certificates are not errors
        assert read_jsonl(out)


class TestSweepCommand:
    def test_sweep_runs_and_exits_zero(self, tmp_path):
        config = {
            "samples": 2, "truncation": 2, "seed": 4, "amplitude": 0.01,
        }
        cfg_path = tmp_path / "sweep.json"
        cfg_path.write_text(json.dumps(config))
        out = tmp_path / "sweep.jsonl"
        csv = tmp_path / "sweep.csv"
        rc = main([
            "genericity-sweep", "--config", str(cfg_path),
            "--out-jsonl", str(out), "--out-csv", str(csv), "--threads", "2",
        ])
        assert rc == 0
        header = read_jsonl(out)[0]
        assert "config_hash" in header
        assert csv.read_text().splitlines()[0].startswith("# config_hash=")

    def test_sweep_failure_exit_code(self, tmp_path):
        config = {"samples": 1, "amplitude": 50.0, "seed": 1}
        cfg_path = tmp_path / "sweep.json"
        cfg_path.write_text(json.dumps(config))
        rc = main(["genericity-sweep", "--config", str(cfg_path)])
        assert rc == 1
