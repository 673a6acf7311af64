import json
from pathlib import Path

import numpy as np
import pytest

from hashcomb.cli import EXIT_CONFIG, EXIT_DIVERGED, EXIT_OK, main
from hashcomb.config import DATASETS, PRESETS, ConfigError, LevelPolicy, RunConfig, preset
from hashcomb.data import DataError, ingest_csv, read_column, write_csv, write_synthetic_csv
from hashcomb.experiment import run, write_outputs


@pytest.fixture(scope="module")
def toy_csv(tmp_path_factory):
    path = tmp_path_factory.mktemp("data") / "toy.csv"
    write_synthetic_csv(path, 240, 4, seed=0)
    return path


def small_run(toy_csv, out, *extra):
    return main(
        ["run", "--dataset", str(toy_csv), "--epochs", "300", "--epochs-per-round", "60", "--rounds", "3",
         "--out", str(out), *extra]
    )


# -- ingestion ----------------------------------------------------------------


def test_minmax_endpoints(tmp_path):
    path = tmp_path / "two.csv"
    write_csv(path, ["a", "b", "label"], [[0, 5, 0], [10, 5, 1]])
    data, norm = ingest_csv(path)
    assert data.features[:, 0].tolist() == [0.0, 1.0]
    assert data.features[:, 1].tolist() == [0.0, 0.0]
    assert data.feature_names == ["a", "b"]
    assert norm.to_dict() == {"min": [0.0, 5.0], "max": [10.0, 5.0]}


def test_label_by_name_and_positive_value(tmp_path):
    path = tmp_path / "named.csv"
    write_csv(path, ["label", "x"], [["Malicious", 1], ["Benign", 2], ["Malicious", 3]])
    data, _ = ingest_csv(path, "label", positive_label="Malicious")
    assert data.labels.tolist() == [1, 0, 1]
    assert data.features[:, 0].tolist() == [0.0, 0.5, 1.0]


@pytest.mark.parametrize(
    "rows,kwargs",
    [
        ([[1, "x", 0], [2, 3, 1]], {}),
        ([[1, 2, 0], [2, 3, 0]], {}),
        ([[1, 2, 0], [2, 3, 7]], {}),
        ([[1, 2, 0], [2, 3, 1]], {"label_column": "nope"}),
        ([[1, "", 0], [2, 3, 1]], {}),
        ([], {}),
    ],
)
def test_ingest_errors(tmp_path, rows, kwargs):
    path = tmp_path / "bad.csv"
    write_csv(path, ["a", "b", "label"], rows)
    with pytest.raises(DataError):
        ingest_csv(path, **kwargs)


def test_read_column(tmp_path):
    path = tmp_path / "c.csv"
    write_csv(path, ["a", "b"], [[1, 2], [3, 4]])
    assert read_column(path, "b").tolist() == [2.0, 4.0]
    assert read_column(path, "0").tolist() == [1.0, 3.0]
    with pytest.raises(DataError):
        read_column(path, "zzz")


SPAMBASE = Path.home() / ".cache" / "hashcomb" / "spambase.csv"


@pytest.mark.skipif(not SPAMBASE.exists(), reason="Spambase not downloaded")
def test_spambase_shape():
    data, _ = ingest_csv(SPAMBASE, "spam")
    # the checksum-pinned KEEL copy has four fewer rows than the UCI original
    assert len(data) == 4597
    assert data.dim == 57
    assert data.features.min() == 0.0 and data.features.max() == 1.0


# -- configuration ------------------------------------------------------------


def test_level_policy_parse():
    assert LevelPolicy.parse("fixed:8") == LevelPolicy(fixed=8)
    assert LevelPolicy.parse("sampled") == LevelPolicy()
    assert LevelPolicy.parse("sampled:0.2,12") == LevelPolicy(p=0.2, max_level=12)
    for bad in ("fixed", "fixed:x", "random", "sampled:0.2"):
        with pytest.raises(ConfigError):
            LevelPolicy.parse(bad)


@pytest.mark.parametrize(
    "changes",
    [
        {"mode": "nope"},
        {"dataset": None},
        {"rounds": 0},
        {"eta": 0},
        {"fraction": 1.5},
        {"mode": "fedavg_hc", "level": "fixed:17"},
        {"mode": "fedavg_hc", "nodes": 4, "threshold": 2},
        {"mode": "fedavg_dp"},
        {"weight_range": (1, -1)},
    ],
)
def test_config_validation(changes):
    with pytest.raises(ConfigError):
        RunConfig(**{"dataset": "x.csv", **changes}).validate()


def test_config_unknown_keys():
    with pytest.raises(ConfigError):
        RunConfig.from_dict({"dataset": "x", "colour": "red"})


def test_presets_cover_every_experiment():
    for ds in DATASETS:
        names = {n for n in PRESETS if f"/{ds}" in n}
        assert f"monolithic/{ds}" in names
        assert {f"bounded/{ds}/{v}" for v in ("nohc", "hc4", "hc6", "hc8", "hc10")} <= names
        assert {f"incremental/{ds}/{v}" for v in ("nohc", "hc6", "hc8", "hc10")} <= names
        assert {f"dp-compare/{ds}/{v}" for v in ("nohc", "dp", "hc8")} <= names
    for name in PRESETS:
        RunConfig.from_dict({**preset(name), "dataset": "x.csv"}).validate()


def test_spam_presets_match_reported_budgets():
    assert preset("monolithic/spam")["epochs"] == 25_000
    assert (preset("bounded/spam/hc4")["epochs_per_round"], preset("bounded/spam/hc4")["rounds"]) == (6000, 4)
    inc = preset("incremental/spam/hc8")
    assert (inc["epochs_per_round"], inc["rounds"], inc["level"]) == (1000, 40, "fixed:8")


# -- command line -------------------------------------------------------------


def test_solve_bias_command(capsys):
    assert main(["solve-bias", "--target", "8", "--L", "16"]) == EXIT_OK
    assert capsys.readouterr().out.startswith("0.087826")


def test_solve_bias_unreachable(capsys):
    assert main(["solve-bias", "--target", "16", "--L", "16"]) == EXIT_CONFIG


def test_hash_comb_run_writes_one_row_per_round(toy_csv, tmp_path):
    out = tmp_path / "hc"
    code = main(
        ["run", "--dataset", str(toy_csv), "--mode", "fedavg_hc", "--level", "fixed:8", "--nodes", "4",
         "--rounds", "40", "--epochs-per-round", "20", "--out", str(out)]
    )
    assert code == EXIT_OK
    lines = (out / "metrics.csv").read_text().splitlines()
    assert lines[0] == "round,mode,accuracy,f1,wall_ms"
    assert len(lines) == 41
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["config"]["mode"] == "fedavg_hc"
    assert manifest["digest"] == "sha256"
    assert len(manifest["scheme"]["fingerprint"]) == 64
    assert (out / "transcript.jsonl").exists()


@pytest.mark.parametrize("mode", ["monolithic", "fedavg", "fedavg_hc", "fedavg_dp"])
def test_metrics_byte_identical_for_same_seed(toy_csv, tmp_path, mode):
    a, b = tmp_path / "a", tmp_path / "b"
    for out in (a, b):
        assert small_run(toy_csv, out, "--mode", mode, "--seed", "4", "--no-timing") == EXIT_OK
    assert (a / "metrics.csv").read_bytes() == (b / "metrics.csv").read_bytes()
    manifests = [json.loads((d / "manifest.json").read_text()) for d in (a, b)]
    for m in manifests:
        m["config"].pop("out")
    assert manifests[0] == manifests[1]


def test_manifest_never_contains_salt(toy_csv, tmp_path):
    config = RunConfig(dataset=str(toy_csv), mode="fedavg_hc", rounds=2, epochs_per_round=20, out=str(tmp_path))
    outcome = run(config)
    salt = outcome.scheme.salt
    assert salt != bytes(16)
    write_outputs(outcome, tmp_path)
    text = (tmp_path / "manifest.json").read_bytes()
    assert salt not in text
    assert salt.hex().encode() not in text
    assert salt.hex().upper().encode() not in text
    assert str(int.from_bytes(salt, "big")).encode() not in text
    for i in range(0, 16, 4):
        assert str(int.from_bytes(salt[i : i + 4], "big")).encode() not in text


def test_config_file_and_flag_precedence(toy_csv, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"dataset": str(toy_csv), "mode": "fedavg", "rounds": 5, "epochs_per_round": 10}))
    out = tmp_path / "o"
    assert main(["run", "--config", str(cfg), "--rounds", "2", "--out", str(out)]) == EXIT_OK
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["config"]["rounds"] == 2
    assert manifest["config"]["mode"] == "fedavg"


def test_preset_with_overrides(toy_csv, tmp_path):
    out = tmp_path / "p"
    code = main(["run", "--preset", "dp-compare/spam/dp", "--dataset", str(toy_csv), "--label", "-1",
                 "--rounds", "2", "--epochs-per-round", "10", "--out", str(out)])
    assert code == EXIT_OK
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["config"]["dp"]["epsilon"] == 2.0
    assert manifest["results"]["dp_sigma2"] == pytest.approx(0.18421, abs=1e-5)


def test_exit_codes(toy_csv, tmp_path, capsys):
    assert main(["run", "--dataset", str(tmp_path / "missing.csv"), "--out", str(tmp_path)]) == EXIT_CONFIG
    assert main(["run", "--dataset", str(toy_csv), "--rounds", "0", "--mode", "fedavg"]) == EXIT_CONFIG
    with pytest.raises(SystemExit) as exc:
        main(["run", "--mode", "bogus"])
    assert exc.value.code == EXIT_CONFIG
    code = main(["run", "--dataset", str(toy_csv), "--eta", "1e6", "--epochs", "400", "--out", str(tmp_path / "d")])
    assert code == EXIT_DIVERGED


def test_negotiate_command(tmp_path, capsys):
    transcript = tmp_path / "t.jsonl"
    code = main(["negotiate", "--range", "0,1", "--range=-2,0.5", "--range", "0,3", "--seed", "1",
                 "--transcript", str(transcript)])
    assert code == EXIT_OK
    summary = json.loads(capsys.readouterr().out)
    assert summary["coordinator"] == 3
    assert (summary["c_min"], summary["c_max"]) == (-4.5, 5.5)
    phases = [json.loads(line)["phase"] for line in transcript.read_text().splitlines()]
    assert list(dict.fromkeys(phases)) == ["coordinator_election", "range_sharing", "quantization_setup", "param_sharing"]


def test_privacy_report_command(tmp_path, capsys):
    path = tmp_path / "s.csv"
    values = np.random.default_rng(0).uniform(-1, 1, 300)
    write_csv(path, ["w"], [[v] for v in values])
    out = tmp_path / "r.json"
    code = main(["privacy-report", "--csv", str(path), "--column", "w", "--index", "2", "--replacement", "0.9",
                 "--range=-1,1", "--delta", "0", "--level", "5", "--out", str(out)])
    assert code == EXIT_OK
    report = json.loads(out.read_text())
    assert report["bins"] == 32 and len(report["records"]) == 6


def test_presets_command(capsys):
    assert main(["presets"]) == EXIT_OK
    assert "incremental/spam/hc8" in capsys.readouterr().out.split()


def test_privacy_report_in_run(toy_csv, tmp_path):
    out = tmp_path / "pr"
    assert small_run(toy_csv, out, "--mode", "fedavg_hc", "--privacy-report") == EXIT_OK
    report = json.loads((out / "privacy.json").read_text())
    assert report["level"] == 8
