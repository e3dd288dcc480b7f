import csv
import io
import json
import time
from pathlib import Path

import pytest

from fedmes import cli
from fedmes.cli import ConfigError, RunConfig, compare, config_from_dict, config_from_json, parse_config
from fedmes.tasks import load_csv_stream

SMOKE = Path(__file__).resolve().parents[1] / "scripts" / "configs" / "smoke.json"


def smoke_cfg(**kw):
    data = json.loads(SMOKE.read_text())
    data.update(kw)
    return config_from_dict(data)


def test_minimal_config_fills_documented_defaults():
    cfg = config_from_dict({"methods": ["fedmes"], "seeds": [0]})
    assert cfg.inference.theta == 0.5 and cfg.inference.K == 9
    assert cfg.memory_size == 150 and cfg.rounds_per_task == 10
    assert cfg.trainer.batch_size == 40 and cfg.trainer.local_epochs == 10


@pytest.mark.parametrize("data, where", [
    ({"methods": ["fedmes"], "seeds": [0], "colour": 1}, "colour"),
    ({"methods": ["fedmes"], "seeds": [0], "trainer": {"eta": 0.1}}, "trainer.eta"),
    ({"methods": ["fedmes"]}, "seeds"),
    ({"methods": ["fedmes"], "seeds": ["0"]}, "seeds.0"),
    ({"methods": [], "seeds": [0]}, "methods"),
    ({"methods": ["sgd"], "seeds": [0]}, "methods.0"),
    ({"methods": ["fedmes"], "seeds": []}, "seeds"),
    ({"methods": ["fedmes"], "seeds": [0], "inference": {"theta": 1.5}}, "inference"),
])
def test_bad_configs_name_the_key(data, where):
    with pytest.raises(ConfigError, match=where.replace(".", r"\.")):
        config_from_dict(data)


def test_config_round_trip():
    cfg = smoke_cfg()
    assert config_from_json(cfg.to_json()) == cfg


def test_parse_config_missing_file(tmp_path):
    with pytest.raises(ConfigError, match="cannot read"):
        parse_config(tmp_path / "nope.json")


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def test_smoke_run_outputs_and_determinism(tmp_path):
    cfg = smoke_cfg(emit_curves=True)
    start = time.perf_counter()
    assert cli.run(cfg, str(tmp_path / "a")) == 0
    assert time.perf_counter() - start < 60
    assert cli.run(cfg, str(tmp_path / "b")) == 0

    for method in cfg.methods:
        for seed in cfg.seeds:
            cell = Path(method) / f"seed{seed}"
            a, b = tmp_path / "a" / cell, tmp_path / "b" / cell
            assert (a / "metrics.json").read_bytes() == (b / "metrics.json").read_bytes()
            metrics = json.loads((a / "metrics.json").read_text())
            assert {"acc_all", "fr", "acc_client", "acc_task", "forgetting", "fr_task"} <= set(metrics)
            tensor = read_rows(a / "accuracy_tensor.csv")
            assert tensor[0] == ["t", "i", "client", "accuracy"]
            assert len(tensor) - 1 == 3 * 6  # n clients x T(T+1)/2 entries
            assert all(0 <= float(r[3]) <= 1 for r in tensor[1:])
            long = read_rows(a / "metrics_long.csv")
            assert long[0] == ["seed", "client", "task", "metric", "value"]
            assert read_rows(a / "round_curve.csv")[0] == ["task", "round", "acc"]
        curves = read_rows(tmp_path / "a" / method / "curves.csv")
        assert len(curves) == 1 + 3

    table = cli.read_summary(tmp_path / "a" / "summary.csv")
    assert set(table) == {(m, k) for m in cfg.methods for k in ("acc_all", "fr")}


def test_compare_identical_summaries_shows_zero_deltas(tmp_path):
    assert cli.run(smoke_cfg(seeds=[0]), str(tmp_path)) == 0
    out = io.StringIO()
    text = compare([tmp_path / "summary.csv", tmp_path / "summary.csv"], stream=out)
    assert out.getvalue() == text
    assert "(+0.000)" in text and "fedmes" in text
    with pytest.raises(OSError):
        compare([tmp_path / "summary.csv", tmp_path / "missing.csv"])


def test_compare_rejects_wrong_schema(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("a,b\n1,2\n")
    with pytest.raises(ValueError, match="not a summary"):
        compare([bad, bad])


def test_main_exit_codes(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"methods": [], "seeds": [0]}))
    assert cli.main(["run", "--config", str(bad)]) == 1
    assert "methods" in capsys.readouterr().err
    assert cli.main(["compare", str(tmp_path / "x.csv"), str(tmp_path / "y.csv")]) == 2


def test_failed_cell_keeps_partial_results(tmp_path):
    cfg = smoke_cfg(methods=["fedavg"], seeds=[0])
    cfg.trainer.eta1 = 1e300
    good = smoke_cfg(methods=["fedmes"], seeds=[0])
    assert cli.run(good, str(tmp_path)) == 0
    with pytest.warns(RuntimeWarning):
        assert cli.run(cfg, str(tmp_path)) == 2
    assert (tmp_path / "fedmes" / "seed0" / "metrics.json").exists()


def test_gen_data_and_csv_source_run(tmp_path):
    spec = tmp_path / "stream.json"
    spec.write_text(json.dumps({"n_clients": 2, "T": 2, "classes_per_task": [2, 2], "num_classes": 4,
                                "input_dim": 3, "samples_per_class_train": 5, "samples_per_class_test": 3,
                                "seed": 3}))
    out = tmp_path / "stream.csv"
    assert cli.main(["gen-data", "--spec", str(spec), "--out", str(out)]) == 0
    streams = load_csv_stream(out)
    assert len(streams) == 2 and streams[0].T == 2

    cfg = config_from_dict({"methods": ["fedmes"], "seeds": [0], "rounds_per_task": 1,
                            "stream": {"generator": "csv_source", "csv_path": str(out), "num_classes": 4,
                                       "input_dim": 3, "classes_per_task": [2, 2]},
                            "trainer": {"local_epochs": 1}})
    assert cli.run(cfg, str(tmp_path / "runs")) == 0
    metrics = json.loads((tmp_path / "runs" / "fedmes" / "seed0" / "metrics.json").read_text())
    assert len(metrics["acc_client"]) == 2


def test_run_config_is_a_dataclass_with_required_lists():
    with pytest.raises(TypeError):
        RunConfig()
