from unittest.mock import MagicMock, patch

import pandas as pd
import pytest

import iob
from src.models.node import read_nodes


@pytest.fixture(autouse=True)
def no_log_files():
    with patch("iob.log_setup"):
        yield


def _nodes_file(tmp_path, locations=120):
    checkins = tmp_path / "checkins.tsv"
    nodes = tmp_path / "nodes.csv"
    assert iob.main(["synth", "--out", str(checkins), "--locations", str(locations), "--seed", "1"]) == 0
    assert iob.main(["ingest", "--input", str(checkins), "--out", str(nodes), "--seed", "1"]) == 0
    return nodes


def test_synth_then_ingest(tmp_path):
    nodes = read_nodes(_nodes_file(tmp_path))
    assert len(nodes) == 120
    assert all(1.0 <= n.capability <= 10.0 for n in nodes)


def test_cluster_to_file(tmp_path):
    nodes = _nodes_file(tmp_path)
    out = tmp_path / "clusters.csv"
    assert iob.main(["cluster", "--nodes", str(nodes), "--eps1", "20000", "--eps2", "4", "--minpts", "3",
                     "--out", str(out)]) == 0
    df = pd.read_csv(out)
    assert list(df.columns) == ["node_id", "cluster_id", "role"]
    assert len(df) == 120


def test_cluster_to_stdout(tmp_path, capsys):
    nodes = _nodes_file(tmp_path, locations=30)
    assert iob.main(["cluster", "--nodes", str(nodes), "--eps1", "400000", "--eps2", "10", "--minpts", "1",
                     "--metric", "planar"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[0] == "node_id,cluster_id,role"
    assert len(lines) == 31


def test_ingest_empty_file_fails(tmp_path):
    empty = tmp_path / "empty.tsv"
    empty.write_text("", encoding="utf-8")
    assert iob.main(["ingest", "--input", str(empty), "--out", str(tmp_path / "nodes.csv")]) == 1
    assert not (tmp_path / "nodes.csv").exists()


@patch("iob.write_result")
@patch("iob.run_experiment")
def test_exp_passes_overrides(mock_run, mock_write, tmp_path):
    result = MagicMock()
    mock_run.return_value = result
    assert iob.main(["exp", "auth", "--seed", "7", "--out", str(tmp_path)]) == 0
    cfg = mock_run.call_args.args[0]
    assert cfg.experiment == "auth"
    assert cfg.seed == 7
    assert cfg.output_dir == tmp_path
    mock_write.assert_called_once_with(result, cfg)


@patch("iob.run_experiment")
def test_exp_bad_config_fails(mock_run, tmp_path):
    config = tmp_path / "exp.env"
    config.write_text("sim.speed=3\n", encoding="utf-8")
    assert iob.main(["exp", "consensus", "--config", str(config)]) == 1
    mock_run.assert_not_called()


def test_unknown_experiment_is_a_usage_error():
    with pytest.raises(SystemExit):
        iob.main(["exp", "latency"])
