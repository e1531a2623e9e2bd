import json

import pytest

from sync_dmpc.cli import main


def write_cfg(tmp_path, **kw):
    base = {"n_agents": 2, "seed": 0, "max_steps": 6}
    base.update(kw)
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(base))
    return str(path)


def test_missing_config_exits_1(tmp_path, capsys):
    code = main(["run", str(tmp_path / "nope.json"), "--out", str(tmp_path / "o")])
    assert code == 1
    assert "nope.json" in capsys.readouterr().err


def test_invalid_json_exits_1(tmp_path, capsys):
    path = tmp_path / "bad.json"
    path.write_text("{not json")
    assert main(["run", str(path), "--out", str(tmp_path / "o")]) == 1
    assert "JSON" in capsys.readouterr().err


def test_run_writes_csv_outputs(tmp_path):
    cfg = write_cfg(tmp_path)
    out = tmp_path / "out"
    code = main(["run", cfg, "--controller", "scdmpc", "--seed", "3", "--out", str(out)])
    assert code == 0
    assert (out / "metrics.csv").exists()
    assert (out / "trajectory.csv").exists()
    assert (out / "timing.csv").exists()
    header = (out / "trajectory.csv").read_text().splitlines()[0]
    assert header.startswith("step,agent,x,y,psi,v,a,delta")


def test_run_trace_flag(tmp_path):
    cfg = write_cfg(tmp_path)
    out = tmp_path / "out"
    assert main(["run", cfg, "--out", str(out), "--trace"]) == 0
    trace = (out / "trace.csv").read_text().splitlines()
    assert trace[0] == "round,sender,receiver,kind,payload_bytes"
    assert len(trace) > 1


def test_placement_failure_exits_1(tmp_path, capsys):
    cfg = write_cfg(
        tmp_path, n_agents=8, arena_width=4.5, arena_height=0.05, margin=0.0
    )
    assert main(["run", cfg, "--out", str(tmp_path / "o")]) == 1
    assert "config error" in capsys.readouterr().err


def test_degenerate_arena_exits_1(tmp_path, capsys):
    cfg = write_cfg(tmp_path, n_agents=4, arena_width=0.1, arena_height=0.1)
    assert main(["run", cfg, "--out", str(tmp_path / "o")]) == 1


def test_compare_emits_tables(tmp_path):
    cfg = write_cfg(tmp_path, max_steps=5)
    out = tmp_path / "cmp"
    code = main(["compare", cfg, "--agents", "1,2", "--seeds", "1", "--out", str(out)])
    assert code == 0
    table = (out / "compare.csv").read_text().splitlines()
    assert len(table) == 1 + 2 * 2  # header + one row per (controller, count)
    assert (out / "compare_timing.csv").exists()
    assert (out / "plotdata.csv").exists()
    assert (out / "plotdata_timing.csv").exists()


def test_compare_bad_agent_list(tmp_path, capsys):
    cfg = write_cfg(tmp_path)
    assert main(["compare", cfg, "--agents", "0", "--out", str(tmp_path / "o")]) == 1


def test_validate_graph_connected(tmp_path, capsys):
    cfg = write_cfg(
        tmp_path,
        n_agents=4,
        topology="custom",
        edges=[[1, 2], [1, 3], [2, 3], [2, 4]],
    )
    assert main(["validate-graph", cfg]) == 0
    out = capsys.readouterr().out
    assert out.count("spanning tree = true") == 4


def test_validate_graph_disconnected_exits_3(tmp_path, capsys):
    cfg = write_cfg(tmp_path, n_agents=4, topology="custom", edges=[[1, 2], [3, 4]])
    assert main(["validate-graph", cfg]) == 3


def test_validate_graph_ring(tmp_path, capsys):
    cfg = write_cfg(tmp_path, n_agents=5, topology="ring")
    assert main(["validate-graph", cfg]) == 0


def test_thread_cap_env(tmp_path, monkeypatch):
    cfg = write_cfg(tmp_path, max_steps=3)
    monkeypatch.setenv("SYNC_DMPC_THREADS", "1")
    assert main(["run", cfg, "--out", str(tmp_path / "o")]) == 0
    monkeypatch.setenv("SYNC_DMPC_THREADS", "zebra")
    with pytest.raises(SystemExit):
        main(["run", cfg, "--out", str(tmp_path / "o2")])


def test_repo_example_config_is_valid():
    import pathlib

    cfg_path = pathlib.Path(__file__).resolve().parents[1] / "configs" / "formation.json"
    from sync_dmpc.experiment import ScenarioConfig

    cfg = ScenarioConfig.from_dict(json.loads(cfg_path.read_text()))
    assert cfg.n_agents == 4
