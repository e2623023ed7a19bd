import json
from fractions import Fraction

import numpy as np
import pytest

from wildflow.field import Field, Grid
from wildflow.io import (
    ConfigError,
    Manifest,
    Option,
    load_snapshot,
    parse_options,
    read_config,
    read_jsonl,
    save_snapshot,
    write_csv,
    write_jsonl,
)

SCHEMA = [
    Option("n", int, 64, check=lambda v: v >= 8),
    Option("beta", float, 0.2),
    Option("eps", Fraction, Fraction(3, 16)),
    Option("snapshots", bool, True),
]


def test_config_sections_flatten(tmp_path):
    p = tmp_path / "c.ini"
    p.write_text("[run]\nn = 32  # grid\n[schedule]\nbeta = 0.25\n")
    raw = read_config(p)
    assert raw == {"run.n": "32", "n": "32", "schedule.beta": "0.25"}


def test_missing_config_file():
    with pytest.raises(ConfigError, match="does not exist"):
        read_config("/nonexistent/x.ini")


def test_parse_options_types_and_defaults():
    out = parse_options({"n": "16", "eps": "1/8", "snapshots": "no"}, SCHEMA)
    assert out == {"n": 16, "beta": 0.2, "eps": Fraction(1, 8), "snapshots": False}


@pytest.mark.parametrize(
    "raw,key",
    [({"n": "4"}, "n"), ({"n": "x"}, "n"), ({"beta": "high"}, "beta"), ({"snapshots": "maybe"}, "snapshots"), ({"bogus": "1"}, "bogus")],
)
def test_parse_options_errors_name_key(raw, key):
    with pytest.raises(ConfigError) as exc:
        parse_options(raw, SCHEMA)
    assert exc.value.key == key


def test_required_option():
    with pytest.raises(ConfigError, match="required"):
        parse_options({}, [Option("gamma", float, required=True)])


def test_csv_keeps_full_precision(tmp_path):
    x = 0.1 + 0.2
    p = write_csv([{"a": x, "b": np.int64(3)}, {"a": 1.0}], tmp_path / "t.csv")
    lines = p.read_text().splitlines()
    assert lines[0] == "a,b"
    assert float(lines[1].split(",")[0]) == x
    assert lines[2] == "1.0,"


def test_jsonl_round_trip(tmp_path):
    recs = [{"q": 1, "v": np.float64(2.5), "r": Fraction(1, 3)}, {"arr": np.arange(3)}]
    p = write_jsonl(recs, tmp_path / "s.jsonl")
    assert read_jsonl(p) == [{"q": 1, "v": 2.5, "r": "1/3"}, {"arr": [0, 1, 2]}]


def test_snapshot_round_trip(tmp_path):
    g = Grid(3, 8)
    f = Field(g, "tensor2", np.random.default_rng(0).normal(size=(3, 3) + g.shape), t=0.25)
    p = save_snapshot(f, tmp_path / "snap", q=1)
    assert p.suffix == ".npz"
    back, head = load_snapshot(p)
    assert np.array_equal(back.values, f.values)
    assert back.rank == "tensor2" and back.t == 0.25 and head["q"] == 1


def test_snapshot_version_checked(tmp_path):
    p = tmp_path / "bad.npz"
    np.savez(p, values=np.zeros((8, 8, 8)), header=np.array(json.dumps({"version": 99})))
    with pytest.raises(ValueError, match="version"):
        load_snapshot(p)


def test_manifest_hashes_outputs(tmp_path):
    (tmp_path / "a.csv").write_text("x\n1\n")
    m = Manifest("ledger", {"beta": 0.2}, seed=0, files=["a.csv", "missing.csv"])
    doc = json.loads(m.write(tmp_path).read_text())
    assert [e["path"] for e in doc["files"]] == ["a.csv"]
    assert len(doc["files"][0]["sha256"]) == 64
    assert doc["options"] == {"beta": 0.2}
