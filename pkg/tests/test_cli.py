import json
import os
import re

import numpy as np
import pytest

from blanket_lab.cli import main, replay
from blanket_lab.config import Option, parse_config
from blanket_lab.errors import ConfigError, SeedCollision, UnknownKey
from blanket_lab.outputs import (plot_ecdf, read_csv, read_jsonl, read_manifest, write_csv, write_jsonl,
                                 write_manifest)
from blanket_lab.rng import SeedRegistry, derive_seed

SCHEMA = {"epsilon": Option(float, 0.3, "fraction"), "replicates": Option(int, 100, "walks"),
          "start": Option(int, 0, "start vertex")}

TYPOS = [("epsilin", "epsilon"), ("replicate", "replicates"), ("strat", "start"), ("sed", "seed"),
         ("thread", "threads"), ("formt", "format"), ("ou", "out")]


def test_defaults_echoed_from_empty_args(tmp_path):
    cfg = parse_config("blanket", SCHEMA, {}, file={"seed": 4})
    assert cfg["epsilon"] == 0.3 and cfg["replicates"] == 100 and cfg.master_seed == 4
    assert cfg.seed_source == "file"


@pytest.mark.parametrize("typo,expected", TYPOS)
def test_misspelled_key_names_nearest(typo, expected):
    with pytest.raises(UnknownKey) as exc:
        parse_config("blanket", SCHEMA, {typo: 1})
    assert exc.value.suggestion == expected
    assert expected in str(exc.value)


def test_flag_beats_file_and_is_recorded(tmp_path):
    f = tmp_path / "c.json"
    f.write_text(json.dumps({"epsilon": 0.2, "replicates": 7}))
    cfg = parse_config("blanket", SCHEMA, {"epsilon": 0.5}, file=str(f))
    assert cfg["epsilon"] == 0.5 and cfg["replicates"] == 7
    assert cfg.to_json()["overridden_by_flags"] == ["epsilon"]


def test_type_errors_name_the_key():
    with pytest.raises(ConfigError, match="replicates"):
        parse_config("blanket", SCHEMA, {"replicates": "many"})


def test_entropy_seed_is_recorded():
    cfg = parse_config("blanket", SCHEMA, {})
    assert cfg.seed_source == "entropy" and cfg["seed"] == cfg.master_seed


def test_derive_seed():
    assert derive_seed(7, "a", 1) == derive_seed(7, "a", 1)
    assert derive_seed(7, "a") != derive_seed(7, "b")
    assert derive_seed(7, "a") != derive_seed(8, "a")
    assert 0 <= derive_seed(1) < 2 ** 64


def test_million_seeds_without_collision():
    reg = SeedRegistry(2024)
    for i in range(10 ** 6):
        reg("replicate", i)
    assert reg.collisions == 0 and len(reg) == 10 ** 6


def test_registry_detects_collision(monkeypatch):
    import blanket_lab.rng as rng
    monkeypatch.setattr(rng, "derive_seed", lambda m, *labels: 1)
    reg = rng.SeedRegistry(0)
    reg("a")
    with pytest.raises(SeedCollision):
        reg("b")


def test_empty_csv_has_header(tmp_path):
    p = tmp_path / "r.csv"
    write_csv([], ["size", "tau"], p, "blanket-lab/records/v1")
    schema, rows = read_csv(p)
    assert schema == "blanket-lab/records/v1" and rows == []
    assert p.read_text().splitlines() == ["# schema: blanket-lab/records/v1", "size,tau"]


def test_jsonl_line_count(tmp_path):
    p = tmp_path / "r.jsonl"
    write_jsonl(({"i": i, "x": float(i) / 3} for i in range(10 ** 5)), p)
    with open(p) as fh:
        assert sum(1 for _ in fh) == 10 ** 5
    assert read_jsonl(p)[-1]["i"] == 10 ** 5 - 1


def test_two_point_ecdf_has_two_steps(tmp_path):
    p = tmp_path / "e.svg"
    plot_ecdf({"x": np.array([1.0, 2.0])}, p)
    text = p.read_text()
    assert len(re.findall(r'<g id="ecdf-step-', text)) == 2


def test_manifest_is_written_atomically(tmp_path):
    write_jsonl([{"a": 1}], tmp_path / "r.jsonl")
    write_manifest(tmp_path, {"k": 1}, ["r.jsonl"])
    m = read_manifest(tmp_path)
    assert m["files"]["r.jsonl"]["byte_identical"] and m["seed_scheme"]
    assert not [f for f in os.listdir(tmp_path) if f.endswith(".tmp")]


def run(argv, capsys):
    code = main(argv)
    out = capsys.readouterr()
    return code, out.out, out.err


def test_cli_tree_and_graph_commands(tmp_path, capsys):
    code, out, _ = run(["tree", "sample", "--n", "30", "--seed", "3"], capsys)
    assert code == 0 and json.loads(out)["n_edges"] == 30
    code, _, _ = run(["gen", "er", "--n", "200", "--seed", "1", "--out", str(tmp_path / "er")], capsys)
    assert code == 0
    graph = str(tmp_path / "er" / "graph.txt")
    assert read_manifest(tmp_path / "er")["config"]["values"]["n"] == 200
    code, out, err = run(["graph", "stats", graph], capsys)
    # critical ER graphs are almost never connected; invalid input is a runtime error
    assert code == 3 and "Disconnected" in err
    code, out, _ = run(["walk", graph, "--horizon", "5", "--seed", "2", "--format", "csv"], capsys)
    assert code == 0 and out.splitlines()[1] == "t,vertex" and len(out.splitlines()) == 8


def test_cli_blanket_and_timeouts(tmp_path, capsys):
    g = tmp_path / "path.txt"
    g.write_text("21 20\n" + "".join(f"{i} {i + 1}\n" for i in range(20)))
    code, out, _ = run(["blanket", str(g), "--replicates", "3", "--seed", "1"], capsys)
    assert code == 0 and len(out.splitlines()) == 3
    code, _, err = run(["blanket", str(g), "--replicates", "3", "--seed", "1", "--t-max", "5"], capsys)
    assert code == 4 and "timed out" in err


def test_cli_config_errors(tmp_path, capsys):
    c = tmp_path / "c.json"
    c.write_text(json.dumps({"zetta": 2.0}))
    code, _, err = run(["excursion", "sample", "--config", str(c)], capsys)
    assert code == 2 and "zeta" in err
    code, out, _ = run(["excursion", "sample", "--n", "64", "--seed", "1"], capsys)
    assert code == 0 and json.loads(out)["N"] == 64


def test_experiment_run_and_replay(tmp_path, capsys):
    plan = tmp_path / "plan.json"
    plan.write_text(json.dumps({"model": "gw-tree", "sizes": [16, 32], "replicates": 30,
                                "master_seed": 9, "epsilon": 0.3}))
    out = tmp_path / "run"
    code, _, _ = run(["experiment", "run", str(plan), "--out", str(out), "--format", "csv"], capsys)
    assert code == 0
    files = sorted(os.listdir(out))
    assert {"records.csv", "summary.csv", "timings.jsonl", "ecdf.svg", "loglog.svg", "manifest.json"} <= set(files)
    man = read_manifest(out)
    assert man["config"]["master_seed"] == 9 and man["plan"]["sizes"] == [16, 32]
    ok, bad = replay(out / "manifest.json", str(tmp_path / "again"), threads=2)
    assert ok and bad == []
    (out / "records.csv").write_text("tampered\n")
    code, _, _ = run(["experiment", "replay", str(out / "manifest.json"), "--out", str(tmp_path / "x")], capsys)
    assert code == 0


def test_replay_flags_mismatch(tmp_path):
    plan = tmp_path / "plan.json"
    plan.write_text(json.dumps({"model": "gw-tree", "sizes": [16], "replicates": 5, "master_seed": 1}))
    out = tmp_path / "run"
    assert main(["experiment", "run", str(plan), "--out", str(out)]) == 0
    man = json.loads((out / "manifest.json").read_text())
    man["files"]["records.jsonl"]["sha256"] = "0" * 64
    (out / "manifest.json").write_text(json.dumps(man))
    ok, bad = replay(out / "manifest.json", str(tmp_path / "again"))
    assert not ok and bad == ["records.jsonl"]


def test_experiment_plan_errors(tmp_path, capsys):
    plan = tmp_path / "plan.json"
    plan.write_text(json.dumps({"model": "gw-tree", "sizes": [16], "replicats": 5}))
    code, _, err = run(["experiment", "run", str(plan)], capsys)
    assert code == 2 and "replicates" in err
