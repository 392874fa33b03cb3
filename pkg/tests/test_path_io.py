import json

import numpy as np
import pytest

from lattice_core import PathGrid, WeightSequence
from path_io import load_path, read_table, save_path, sidecar_path, write_json, write_jsonl, write_table


def _random_path(rng, K=7, n=3, angular=True):
    q = rng.uniform(0, 2 * np.pi, size=(K + 1, n))
    p = rng.normal(size=(K + 1, n))
    return PathGrid(0.0, 1.3, q, p, angular)


def test_saved_path_reloads_identically(tmp_path):
    rng = np.random.default_rng(0)
    path = _random_path(rng)
    weights = WeightSequence.box((3,), decay=0.5)
    csv_path, side = save_path(path, weights, str(tmp_path / "run" / "path.csv"))

    assert side == sidecar_path(csv_path)
    loaded, loaded_w = load_path(csv_path)
    assert np.array_equal(loaded.q, path.q)
    assert np.array_equal(loaded.p, path.p)
    assert (loaded.t0, loaded.t1, loaded.angular) == (path.t0, path.t1, path.angular)
    assert loaded_w.sites == weights.sites
    assert np.array_equal(loaded_w.rho, weights.rho)


def test_path_csv_layout(tmp_path):
    path = PathGrid(0.0, 1.0, np.zeros((3, 2)), np.ones((3, 2)), angular=False)
    csv_path, side = save_path(path, WeightSequence.chain([1.0, 2.0]), str(tmp_path / "p.csv"))
    rows = read_table(csv_path)
    assert len(rows) == 6
    assert list(rows[0]) == ["t", "site", "q", "p"]
    assert rows[3]["site"] == "1" and float(rows[3]["t"]) == 0.5
    with open(side) as f:
        meta = json.load(f)
    assert meta["K"] == 2 and meta["dt"] == 0.5 and meta["angular"] is False


def test_truncated_csv_is_rejected(tmp_path):
    path = PathGrid(0.0, 1.0, np.zeros((3, 1)), np.zeros((3, 1)), angular=False)
    csv_path, _ = save_path(path, WeightSequence.chain([1.0]), str(tmp_path / "p.csv"))
    with open(csv_path) as f:
        lines = f.readlines()
    with open(csv_path, "w") as f:
        f.writelines(lines[:-1])
    with pytest.raises(ValueError):
        load_path(csv_path)


def test_json_writers_are_byte_stable(tmp_path):
    record = {"b": np.float64(0.1), "a": np.arange(3), "inf": float("inf"), "flag": np.bool_(True)}
    first = tmp_path / "a.json"
    second = tmp_path / "b.json"
    write_json(record, str(first))
    write_json(dict(reversed(list(record.items()))), str(second))
    assert first.read_bytes() == second.read_bytes()
    assert json.loads(first.read_text())["inf"] == "inf"

    count = write_jsonl([{"eps": 0.1}, {"eps": 0.05}], str(tmp_path / "x.jsonl"))
    assert count == 2
    assert (tmp_path / "x.jsonl").read_text().splitlines()[1] == '{"eps": 0.05}'


def test_write_table_keeps_floats_exact(tmp_path):
    value = 1.0 / 3.0
    write_table([(1, value)], ["j", "v"], str(tmp_path / "t.csv"))
    assert float(read_table(str(tmp_path / "t.csv"))[0]["v"]) == value
