import json

import pytest

from polargraph.cli import main
from polargraph.config import EngineConfig, load_config
from polargraph.errors import ConfigError

RECORDS = [
    {"id": "ep1", "uri": "img/1.png", "truth": ["dog", "leash"], "decoys": ["wolf"]},
    {"id": "ep2", "uri": "img/2.png", "truth": ["wolf", "snow"], "decoys": ["leash"]},
    {"type": "text", "content": "Dogs on a leash are walked daily.", "entities": ["dog", "leash"]},
]


@pytest.fixture
def store(tmp_path):
    inp = tmp_path / "in.jsonl"
    inp.write_text("".join(json.dumps(r) + "\n" for r in RECORDS))
    g, i = tmp_path / "g.jsonl", tmp_path / "v.bin"
    assert main(["ingest", str(inp), "--graph", str(g), "--index", str(i)]) == 0
    return tmp_path, g, i


def test_config_defaults_and_file(tmp_path):
    assert load_config(None) == EngineConfig()
    p = tmp_path / "c.ini"
    p.write_text("[engine]\ndim = 32\nkappa = 0.25\nstrict = false\n\n[backend]\nkind = http\nmodel_name = m\n"
                 "max_retries = 5\n")
    cfg = load_config(p)
    assert (cfg.dim, cfg.kappa, cfg.strict, cfg.backend) == (32, 0.25, False, "http")
    assert cfg.client.model_name == "m" and cfg.client.max_retries == 5


@pytest.mark.parametrize("text", [
    "[engine]\nbogus = 1\n",
    "[engine]\ndim = lots\n",
    "[engine]\nalpha = 2\n",
    "[other]\nx = 1\n",
    "[backend]\nkind = carrier-pigeon\n",
    "[backend]\ntimeout = 0\n",
    "not an ini file",
])
def test_config_errors(tmp_path, text):
    p = tmp_path / "c.ini"
    p.write_text(text)
    with pytest.raises(ConfigError):
        load_config(p)


def test_stats_json(store, capsys):
    _, g, _ = store
    capsys.readouterr()
    assert main(["stats", "--graph", str(g), "--format", "json"]) == 0
    stats = json.loads(capsys.readouterr().out)
    assert stats["visual_nodes"] == 2 and stats["total_align"] == 2 and stats["verifiable_coverage"] == 1.0


def test_query_strict_and_relaxed(store, capsys):
    _, g, i = store
    capsys.readouterr()
    assert main(["query", "a dog but not wolf", "--graph", str(g), "--index", str(i), "--format", "json"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["positive"] == ["dog"] and out["negative"] == ["wolf"]
    nodes = [r["node"] for r in out["results"]]
    assert "visual:ep2" not in nodes and out["results"][0]["evidence"].startswith("[Fact Check: VERIFIED_PRESENT]")
    assert main(["query", "a dog but not wolf", "--graph", str(g), "--index", str(i), "--format", "json",
                 "--no-strict"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["results"][-1]["node"] == "visual:ep2" and out["results"][-1]["s_log"] == -1


def test_build_reproduces_index(store):
    tmp, g, i = store
    assert main(["build", "--graph", str(g), "--index", str(tmp / "v2.bin")]) == 0
    assert i.read_bytes() == (tmp / "v2.bin").read_bytes()


def test_ingest_appends(store, tmp_path):
    _, g, _ = store
    more = tmp_path / "more.jsonl"
    more.write_text(json.dumps({"id": "ep3", "truth": ["cat"]}) + "\n")
    assert main(["ingest", str(more), "--graph", str(g)]) == 0
    assert '"key":"ep3"' in g.read_text()


def test_exit_code_corrupt(store):
    tmp, g, _ = store
    bad = tmp / "bad.jsonl"
    bad.write_bytes(g.read_bytes()[:-10])
    assert main(["stats", "--graph", str(bad)]) == 4
    i = tmp / "bad.bin"
    i.write_bytes(b"garbage")
    assert main(["query", "dog", "--graph", str(g), "--index", str(i)]) == 4


def test_exit_code_config(store, tmp_path):
    _, g, _ = store
    bad = tmp_path / "bad.ini"
    bad.write_text("[engine]\nkappa = -1\n")
    assert main(["stats", "--graph", str(g), "--config", str(bad)]) == 2
    assert main(["stats", "--graph", str(tmp_path / "missing.jsonl")]) == 2
    assert main(["query", "dog", "--graph", str(g), "--index", str(store[2]),
                 "--config", str(_ini(tmp_path, "[engine]\ndim = 8\n"))]) == 2


def _ini(tmp_path, text):
    p = tmp_path / "x.ini"
    p.write_text(text)
    return p


def test_exit_code_backend(store, tmp_path):
    tmp, _, _ = store
    cfg = _ini(tmp_path, "[backend]\nkind = http\nendpoint_url = http://127.0.0.1:9/v1\n"
                         "max_retries = 0\ntimeout = 0.5\nretry_backoff = 0\n")
    inp = tmp / "in.jsonl"
    assert main(["ingest", str(inp), "--graph", str(tmp / "h.jsonl"), "--config", str(cfg)]) == 3


def test_eval(tmp_path, capsys):
    out = tmp_path / "r.json"
    assert main(["eval", "--episodes", "30", "--out", str(out), "--seed", "2"]) == 0
    data = json.loads(out.read_text())
    assert data["spec"]["seed"] == 2 and len(data["results"]) == 4
    assert out.with_suffix(".txt").exists()
    capsys.readouterr()
    assert main(["eval", "--episodes", "30", "--seeds", "2", "--format", "json"]) == 0
    assert json.loads(capsys.readouterr().out)["seeds"] == [0, 1]
