import json

import numpy as np
import pytest

from deepifsac.cli import main
from deepifsac.config import ConfigError, load_config, validate
from deepifsac.data import CSVFormatError, load_csv, read_mask_csv, synthetic_dataset, write_csv


def write(path, text):
    path.write_text(text)
    return path


# ------------------------------------------------------------------- loading

def test_load_plain_matrix(tmp_path):
    d = load_csv(write(tmp_path / "a.csv", "1,2\n3,4\n5,6\n"))
    assert d.values.tolist() == [[1, 2], [3, 4], [5, 6]] and d.mask.all()
    assert d.columns == ["x0", "x1"]


def test_na_tokens_become_missing(tmp_path):
    d = load_csv(write(tmp_path / "a.csv", "1,NA\n,4\nnan,?\n"))
    assert d.mask.tolist() == [[1, 0], [0, 1], [0, 0]]
    assert d.values[0, 0] == 1.0 and d.values[1, 1] == 4.0


def test_header_detected_and_label_dropped(tmp_path):
    d = load_csv(write(tmp_path / "a.csv", "age,bmi,class\n30,22.5,1\n41,NA,0\n"), label_column="class")
    assert d.columns == ["age", "bmi"] and d.shape == (2, 2)
    assert d.mask.tolist() == [[1, 1], [1, 0]]


def test_bad_cells_report_location(tmp_path):
    with pytest.raises(CSVFormatError, match="line 2, column 2"):
        load_csv(write(tmp_path / "a.csv", "1,2\n3,abc\n"))
    with pytest.raises(CSVFormatError, match="line 2 has 3 fields"):
        load_csv(write(tmp_path / "b.csv", "1,2\n3,4,5\n"))


def test_csv_round_trip_is_exact(tmp_path):
    d = synthetic_dataset(20, 3, seed=4)
    d = d.with_mask((np.arange(60).reshape(20, 3) % 7 != 0).astype(np.uint8))
    write_csv(tmp_path / "d.csv", d)
    back = load_csv(tmp_path / "d.csv")
    assert np.array_equal(back.mask, d.mask)
    assert np.array_equal(back.values[d.mask == 1], d.values[d.mask == 1])


# ----------------------------------------------------------------- commands

@pytest.fixture
def dataset(tmp_path):
    path = tmp_path / "data.csv"
    write_csv(path, synthetic_dataset(60, 4, seed=1))
    return path


def test_simulate_twice_gives_identical_files(tmp_path, dataset):
    outs = []
    for run in ("a", "b"):
        out = tmp_path / run
        assert main(["simulate", "--data", str(dataset), "--kind", "mnar", "--rate", "0.3", "--seed", "4",
                     "--out-dir", str(out)]) == 0
        outs.append(((out / "mask.csv").read_bytes(), (out / "masked.csv").read_bytes()))
    assert outs[0] == outs[1]
    mask = read_mask_csv(tmp_path / "a" / "mask.csv")
    assert mask.shape == (60, 4) and abs((1 - mask.mean()) - 0.3) < 0.1
    manifest = json.loads((tmp_path / "a" / "manifest.json").read_text())
    assert manifest["seed"] == 4 and set(manifest["outputs_sha256"]) == {"mask.csv", "masked.csv"}
    assert {"numpy", "python", "deepifsac"} <= set(manifest["versions"])


def test_output_dir_environment_override(tmp_path, dataset, monkeypatch):
    monkeypatch.setenv("DEEPIFSAC_OUTPUT_DIR", str(tmp_path / "env"))
    assert main(["simulate", "--data", str(dataset)]) == 0
    assert (tmp_path / "env" / "mask.csv").exists()


def test_train_then_impute_without_missing_cells_reproduces_input(tmp_path, dataset):
    ckpt = tmp_path / "m.npz"
    assert main(["train", "--data", str(dataset), "--checkpoint", str(ckpt), "--epochs", "2", "--dim", "8",
                 "--heads", "2", "--layers", "1"]) == 0
    history = (tmp_path / "m.history.csv").read_text().splitlines()
    assert history[0] == "epoch,loss,recon,contrastive" and len(history) == 3
    out = tmp_path / "imputed.csv"
    assert main(["impute", "--data", str(dataset), "--checkpoint", str(ckpt), "--out", str(out)]) == 0
    assert np.array_equal(load_csv(out).values, load_csv(dataset).values)


def test_impute_fills_missing_cells(tmp_path, dataset):
    ckpt = tmp_path / "m.npz"
    sim = tmp_path / "sim"
    main(["simulate", "--data", str(dataset), "--rate", "0.3", "--out-dir", str(sim)])
    main(["train", "--data", str(sim / "masked.csv"), "--checkpoint", str(ckpt), "--epochs", "1", "--dim", "8",
          "--heads", "2", "--layers", "1"])
    out = tmp_path / "imputed.csv"
    assert main(["impute", "--data", str(sim / "masked.csv"), "--checkpoint", str(ckpt), "--out", str(out)]) == 0
    filled = load_csv(out)
    assert filled.mask.all() and np.isfinite(filled.values).all()


def test_impute_feature_mismatch_exits_nonzero(tmp_path, dataset, capsys):
    ckpt = tmp_path / "m.npz"
    main(["train", "--data", str(dataset), "--checkpoint", str(ckpt), "--epochs", "1", "--dim", "8", "--heads",
          "2", "--layers", "1"])
    other = write(tmp_path / "o.csv", "1,2\n3,4\n")
    assert main(["impute", "--data", str(other), "--checkpoint", str(ckpt), "--out", str(tmp_path / "x")]) == 2
    assert "expects 4 features" in capsys.readouterr().err


def test_invalid_config_reports_field(tmp_path, capsys):
    cfg = write(tmp_path / "c.json", json.dumps({"datasets": [{"id": "s", "synthetic": {}}], "rates": [1.2]}))
    assert main(["bench", "--config", str(cfg)]) == 2
    assert "rates[0]" in capsys.readouterr().err


def test_malformed_json_reports_line_and_column(tmp_path):
    cfg = write(tmp_path / "c.json", '{\n  "datasets": [\n  }\n')
    with pytest.raises(ConfigError, match=r"c\.json:3:3"):
        load_config(cfg)


@pytest.mark.parametrize("raw,fragment", [
    ({"datasets": []}, "datasets"),
    ({"datasets": [{"id": "x"}]}, "exactly one of"),
    ({"datasets": [{"id": "x", "synthetic": {}}], "model": {"depth": 2}}, "model: unknown key"),
    ({"datasets": [{"id": "x", "synthetic": {}}], "methods": ["gain"]}, "unknown method"),
    ({"datasets": [{"id": "x", "synthetic": {}}], "model": {"dim": 10, "heads": 4}}, "divisible"),
    ({"datasets": [{"id": "x", "synthetic": {}}], "surprise": 1}, "unknown key"),
])
def test_validation_messages(raw, fragment):
    with pytest.raises(ConfigError, match=fragment):
        validate(raw)


def test_bench_small_is_byte_deterministic(tmp_path):
    cfg = {"datasets": [{"id": "syn", "synthetic": {"rows": 40, "features": 4}}],
           "methods": ["median", "knn", {"name": "tiny", "type": "deepifsac",
                                         "model": {"dim": 8, "heads": 2, "layers": 1, "epochs": 1}}],
           "kinds": ["MCAR", "MAR"], "rates": [0.3]}
    path = write(tmp_path / "c.json", json.dumps(cfg))
    blobs = []
    for run in ("a", "b"):
        assert main(["bench", "--config", str(path), "--out-dir", str(tmp_path / run)]) == 0
        blobs.append({p.name: p.read_bytes() for p in sorted((tmp_path / run).iterdir())
                      if p.name != "timings.json"})
    assert blobs[0] == blobs[1]
    assert set(blobs[0]) == {"folds.csv", "summary.json", "rank_table.txt", "nrmse_tables.txt", "manifest.json"}


def test_bench_failure_sets_exit_code(tmp_path):
    cfg = {"datasets": [{"id": "syn", "synthetic": {"rows": 20, "features": 3}}],
           "methods": ["median", {"name": "big-k", "type": "knn", "k": 50}]}
    path = write(tmp_path / "c.json", json.dumps(cfg))
    assert main(["bench", "--config", str(path), "--out-dir", str(tmp_path / "o")]) == 1
    assert "failed" in (tmp_path / "o" / "nrmse_tables.txt").read_text()


def test_verify_quick_passes(capsys):
    assert main(["verify", "--quick"]) == 0
    assert "checks passed" in capsys.readouterr().out


def test_synth_writes_dataset(tmp_path):
    out = tmp_path / "s.csv"
    assert main(["synth", "--rows", "30", "--features", "5", "--out", str(out)]) == 0
    assert load_csv(out).shape == (30, 5)


@pytest.mark.slow
def test_bench_on_small_synthetic_ranks_deepifsac_first(tmp_path):
    cfg = {"datasets": [{"id": "synthetic", "synthetic": {"rows": 200, "features": 8}}],
           "methods": ["median", "knn", "deepifsac"], "kinds": ["MCAR"], "rates": [0.3],
           "model": {"epochs": 200}}
    path = write(tmp_path / "c.json", json.dumps(cfg))
    assert main(["bench", "--config", str(path), "--out-dir", str(tmp_path / "o")]) == 0
    summary = json.loads((tmp_path / "o" / "summary.json").read_text())
    means = {r["method"]: round(r["mean"], 4) for r in summary["reports"]}
    assert summary["ranks"]["MCAR"]["deepifsac"]["mean"] == 1.0, means
