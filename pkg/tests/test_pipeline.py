import csv
from pathlib import Path

import numpy as np
import pytest

from hybridens.cli import main
from hybridens.config import load_config
from hybridens.pipeline import (
    ABLATION_SCHEMES,
    Forecaster,
    PrerequisiteError,
    load_network,
    run_pipeline,
    save_network,
)
from hybridens.varnet import forward, init_dense

TINY = Path(__file__).parent / "data" / "tiny.yaml"


@pytest.fixture(scope="module")
def full_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("tiny")
    assert main(["all", "--config", str(TINY), "--out", str(out)]) == 0
    return out


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


class TestCLI:
    def test_metrics_without_ensembles(self, tmp_path, capsys):
        assert main(["metrics", "--config", str(TINY), "--out", str(tmp_path)]) == 3
        assert "ensemble" in capsys.readouterr().err

    def test_pretrain_without_data(self, tmp_path):
        assert main(["pretrain", "--config", str(TINY), "--out", str(tmp_path)]) == 3

    def test_bad_config(self, tmp_path, capsys):
        bad = tmp_path / "bad.yaml"
        bad.write_text("spectrum: {tau: -1}\n")
        assert main(["gen-data", "--config", str(bad), "--out", str(tmp_path)]) == 2
        assert "spectrum.tau" in capsys.readouterr().err

    def test_missing_config(self, tmp_path):
        assert main(["gen-data", "--config", str(tmp_path / "none.yaml")]) == 2

    def test_seed_out_of_range(self, tmp_path):
        assert main(["gen-data", "--config", str(TINY), "--out", str(tmp_path), "--seed", str(2**64)]) == 2

    def test_unknown_stage(self):
        with pytest.raises(SystemExit):
            main(["bake"])

    def test_prerequisite_error_type(self, tmp_path):
        cfg = load_config(TINY)
        cfg.output.dir = str(tmp_path)
        with pytest.raises(PrerequisiteError):
            run_pipeline(cfg, "posttrain")


class TestFullRun:
    def test_artifacts(self, full_run):
        for rel in ("config.yaml", "data/train.field", "data/test.field", "checkpoints/pretrained.npz",
                    "checkpoints/posterior.npz", "ensembles/hybrid.npz", "seeds/hybrid.json",
                    "metrics/metrics.csv", "metrics/metrics.json", "ablation/ablation.csv"):
            assert (full_run / rel).is_file(), rel

    def test_ablation_table(self, full_run):
        rows = _rows(full_run / "ablation" / "ablation.csv")
        assert len(rows) == 2 * len(ABLATION_SCHEMES)
        for lead in ("6.0", "48.0"):
            assert sorted(r["scheme"] for r in rows if float(r["lead_hours"]) == float(lead)) == sorted(ABLATION_SCHEMES)
        assert all(float(r["ssr"]) > 0 and int(r["n_members"]) == 6 for r in rows)

    def test_written_config_reloads(self, full_run):
        cfg = load_config(full_run / "config.yaml")
        assert cfg.output.dir == str(full_run) and cfg.seeds.master == 7

    def test_checkpoint_roundtrip(self, tmp_path):
        rng = np.random.default_rng(0)
        fc = Forecaster(init_dense([8, 16, 4], rng, "persistence", 0.1), np.full(2, 1.5), np.full(2, 2.0))
        save_network(tmp_path / "n.npz", fc)
        back = load_network(tmp_path / "n.npz")
        x = rng.standard_normal((3, 8))
        np.testing.assert_array_equal(forward(back.net, x), forward(fc.net, x))
        np.testing.assert_array_equal(back.mean, fc.mean)
