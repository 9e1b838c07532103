import json
import subprocess
import sys
from pathlib import Path

import pytest

from segdesicnet.cli import main

GOLDEN = json.loads((Path(__file__).parent / "fixtures" / "encode_median_golden.json").read_text())

SMOKE = [
    "--set", "world.patch_size=32",
    "--set", "world.num_source=12",
    "--set", "world.num_target=4",
    "--set", "world.num_target_test=4",
    "--set", "train.batch_size=4",
    "--set", "train.crop_size=16",
    "--set", "train.max_epochs=2",
    "--set", "train.patience=2",
    "--set", 'model.encoder_channels=[8,8]',
    "--set", 'model.segdesic_hidden=[16,16,16,16,16]',
]


def run(capsys, *args):
    code = main(list(args))
    out = capsys.readouterr()
    return code, out.out, out.err


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("corpus")
    assert main(["gen", "--out", str(root), *SMOKE]) == 0
    return root


class TestEncode:
    def test_median_point_matches_golden(self, capsys):
        code, out, _ = run(capsys, "encode", "--lon", "489353.59", "--lat", "6587552.20")
        assert code == 0
        got = json.loads(out)
        assert len(got) == 64
        assert max(abs(a - b) for a, b in zip(got, GOLDEN["encoding"])) < 1e-9

    def test_malformed_number(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["encode", "--lon", "12x", "--lat", "0"])
        assert exc.value.code == 2
        assert "invalid float value" in capsys.readouterr().err

    def test_config_error_exit(self, capsys):
        code, _, err = run(capsys, "encode", "--lon", "0", "--lat", "0", "--set", "grid.num_scales=1")
        assert code == 2 and "config error" in err

    def test_missing_config_file(self, capsys, tmp_path):
        code, _, _ = run(capsys, "encode", "--lon", "0", "--lat", "0", "--config", str(tmp_path / "none.json"))
        assert code == 3

    def test_resolved_config_written(self, capsys, tmp_path):
        code, _, _ = run(capsys, "encode", "--lon", "5e5", "--lat", "6.6e6", "--out", str(tmp_path), "--set", "grid.num_scales=4")
        assert code == 0
        resolved = json.loads((tmp_path / "resolved_config.json").read_text())
        assert resolved["grid"]["num_scales"] == 4 and resolved["model"]["encoding_dim"] == 16

    def test_bad_thread_setting(self, capsys, monkeypatch):
        monkeypatch.setenv("SEGDESIC_THREADS", "many")
        code, _, _ = run(capsys, "encode", "--lon", "0", "--lat", "0")
        assert code == 2


def test_help_via_entry_point():
    res = subprocess.run([sys.executable, "-m", "segdesicnet.cli", "--help"], capture_output=True, text=True)
    assert res.returncode == 0 and "usage: segdesic" in res.stdout


class TestPipeline:
    def test_gen_layout(self, corpus):
        manifest = json.loads((corpus / "manifest.json").read_text())
        assert len(manifest["files"]) == 20
        assert (corpus / "resolved_config.json").is_file()

    def test_train_eval(self, capsys, corpus, tmp_path):
        run_dir = tmp_path / "run"
        code, out, _ = run(capsys, "train", "--data", str(corpus), "--out", str(run_dir), *SMOKE)
        assert code == 0 and "best epoch" in out
        for name in ("model.ckpt", "model.manifest.json", "train_log.csv", "resolved_config.json"):
            assert (run_dir / name).is_file()
        assert len((run_dir / "train_log.csv").read_text().splitlines()) == 3
        code, out, _ = run(capsys, "eval", "--checkpoint", str(run_dir / "model.ckpt"), "--data", str(corpus), "--split", "target")
        assert code == 0 and "mIoU" in out
        res = json.loads((run_dir / "results_target.json").read_text())
        assert set(res) == {"per_class_iou", "miou", "num_pixels"} and res["num_pixels"] == 4 * 32 * 32
        assert (run_dir / "results_target.csv").read_text().startswith("class,iou\n")

    def test_eval_missing_checkpoint(self, capsys, corpus, tmp_path):
        out_dir = tmp_path / "results"
        code, _, err = run(capsys, "eval", "--checkpoint", str(tmp_path / "nope.ckpt"), "--data", str(corpus), "--out", str(out_dir))
        assert code == 3 and "does not exist" in err
        assert not out_dir.exists()

    def test_eval_corrupt_checkpoint(self, capsys, corpus, tmp_path):
        run_dir = tmp_path / "run"
        assert main(["train", "--data", str(corpus), "--out", str(run_dir), *SMOKE]) == 0
        (run_dir / "model.ckpt").write_bytes(b"garbage!")
        code, _, _ = run(capsys, "eval", "--checkpoint", str(run_dir / "model.ckpt"), "--data", str(corpus))
        assert code == 3

    def test_train_missing_data(self, capsys, tmp_path):
        code, _, _ = run(capsys, "train", "--data", str(tmp_path / "nodata"), "--out", str(tmp_path / "o"))
        assert code == 3

    def test_single_alpha_ablation_matches_train_eval(self, capsys, corpus, tmp_path):
        direct = tmp_path / "direct"
        assert main(["train", "--data", str(corpus), "--out", str(direct), *SMOKE]) == 0
        assert main(["eval", "--checkpoint", str(direct / "model.ckpt"), "--data", str(corpus)]) == 0
        sweep = tmp_path / "sweep"
        assert main(["ablate", "--data", str(corpus), "--out", str(sweep), "--alphas", "0.5", *SMOKE]) == 0
        runs = [p for p in sweep.iterdir() if p.is_dir()]
        assert len(runs) == 1
        for name in ("model.ckpt", "model.manifest.json", "train_log.csv", "resolved_config.json", "results_target.json", "results_target.csv"):
            assert (runs[0] / name).read_bytes() == (direct / name).read_bytes(), name
        table = (sweep / "ablation.csv").read_text().splitlines()
        assert table[0] == "lambda_min,lambda_max,S,alpha,miou,run" and len(table) == 2
        capsys.readouterr()

    def test_ablation_grid(self, capsys, corpus, tmp_path):
        sweep = tmp_path / "sweep"
        code, out, _ = run(capsys, "ablate", "--data", str(corpus), "--out", str(sweep), "--alphas", "0,1", "--scales", "4", *SMOKE)
        assert code == 0
        rows = json.loads((sweep / "ablation.json").read_text())
        assert [(r["alpha"], r["S"]) for r in rows] == [(0.0, 4), (1.0, 4)]
