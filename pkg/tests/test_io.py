import json

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from mvtreat import io
from mvtreat.dgp import builtin, simulate
from mvtreat.smoother import Grid


@settings(max_examples=40)
@given(xs=st.lists(st.floats(allow_nan=False, allow_infinity=False), min_size=1, max_size=20),
       ks=st.lists(st.integers(-10**12, 10**12), min_size=1, max_size=20))
def test_table_round_trip_is_exact(xs, ks, tmp_path_factory):
    n = min(len(xs), len(ks))
    path = tmp_path_factory.mktemp("t") / "t.csv"
    x, k = np.array(xs[:n]), np.array(ks[:n], dtype=np.int64)
    io.write_table(path, {"x": x, "k": k}, {"note": "a", "n": n})
    cols, meta = io.read_table(path)
    assert np.array_equal(cols["x"], x)
    assert cols["k"].dtype == np.int64 and np.array_equal(cols["k"], k)
    assert meta == {"note": "a", "n": n}


def test_sample_round_trip(tmp_path):
    s = simulate(builtin("two_way_flows"), 500, 1)
    io.save_sample(tmp_path / "a.csv", s)
    back = io.load_sample(tmp_path / "a.csv")
    for f in ("Y", "D", "Z", "V", "Y_all", "Q"):
        assert np.array_equal(getattr(back, f), getattr(s, f))
    assert back.meta == s.meta
    io.save_sample(tmp_path / "b.csv", s, latent=False)
    obs = io.load_sample(tmp_path / "b.csv")
    assert not obs.has_latent and obs.V is None
    assert np.array_equal(obs.Q, s.Q)


def test_surface_table(tmp_path):
    grid = Grid.uniform(2, 4, 0.2, 0.8)
    f = np.arange(16.0).reshape(4, 4)
    io.save_surface_table(tmp_path / "s.csv", grid, {"f": f, "ok": f > 3})
    cols, _ = io.read_table(tmp_path / "s.csv")
    assert np.array_equal(cols["q1"], grid.nodes()[:, 0])
    assert np.array_equal(cols["f"], f.ravel())
    assert cols["ok"].tolist() == (f.ravel() > 3).astype(int).tolist()


def test_json_is_plain_and_sorted():
    text = io.dumps({"b": np.float64(np.nan), "a": np.arange(2), "c": np.bool_(True)})
    assert json.loads(text) == {"a": [0, 1], "b": None, "c": True}
    assert text.index('"a"') < text.index('"b"')


def test_manifest_detects_changes(tmp_path):
    (tmp_path / "x.txt").write_text("one")
    (tmp_path / "sub").mkdir()
    (tmp_path / "sub" / "y.txt").write_text("two")
    io.write_manifest(tmp_path, {"seed": 0}, {"run": 1.5}, "0.1.0")
    assert io.verify_manifest(tmp_path) == []
    man = io.read_json(tmp_path / io.MANIFEST)
    assert set(man["files"]) == {"x.txt", "sub/y.txt"}
    assert man["config_hash"] == io.config_hash({"seed": 0})
    (tmp_path / "x.txt").write_text("changed")
    (tmp_path / "z.txt").write_text("new")
    assert io.verify_manifest(tmp_path) == ["z.txt", "x.txt"]
