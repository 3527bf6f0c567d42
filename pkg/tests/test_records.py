import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from torusot import records
from torusot.config import load_config, parse_config
from torusot.errors import ConfigError, NumericalError
from torusot.torus import make_grid

finite = st.floats(-1e6, 1e6, allow_nan=False, allow_infinity=False)


@given(arrays(float, st.tuples(st.integers(1, 6), st.integers(1, 3)), elements=finite), st.data())
def test_measure_roundtrip(tmp_path_factory, pts, data):
    w = data.draw(arrays(float, pts.shape[0], elements=st.floats(1e-3, 10)))
    path = tmp_path_factory.mktemp("m") / "m.csv"
    records.write_measure(path, pts, w)
    p2, w2 = records.read_measure(path)
    np.testing.assert_array_equal(p2, pts)
    np.testing.assert_array_equal(w2, w)


@given(arrays(float, (3, 5, 2), elements=finite))
def test_orbits_roundtrip(tmp_path_factory, orbits):
    times = np.linspace(0, 1, 5)
    w = np.array([0.2, 0.3, 0.5])
    path = tmp_path_factory.mktemp("o") / "o.csv"
    records.write_orbits(path, times, orbits, w)
    t2, o2, w2 = records.read_orbits(path)
    np.testing.assert_array_equal(t2, times)
    np.testing.assert_array_equal(o2, orbits)
    np.testing.assert_array_equal(w2, w)


@given(arrays(float, (3, 16), elements=finite))
def test_slices_roundtrip(tmp_path_factory, values):
    grid = make_grid(2, 4, 1.0, 2)
    path = tmp_path_factory.mktemp("s") / "s.csv"
    records.write_slices(path, grid, values)
    np.testing.assert_array_equal(records.read_slices(path, grid), values)


def test_read_errors(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("x0,weight\n0.1,abc\n")
    with pytest.raises(ConfigError):
        records.read_measure(bad)
    bad.write_text("x0,weight\n")
    with pytest.raises(ConfigError):
        records.read_measure(bad)
    with pytest.raises(ConfigError):
        records.read_csv(tmp_path / "missing.csv")


def test_json_rejects_nonfinite():
    with pytest.raises(NumericalError):
        records.dumps({"a": [1.0, float("nan")]})
    assert records.dumps({"b": np.float64(1.5), "a": np.arange(2)}) == '{\n  "a": [\n    0,\n    1\n  ],\n  "b": 1.5\n}\n'


def test_config_defaults_and_digest():
    a = parse_config({})
    assert (a.n, a.m, a.K, a.T) == (1, 512, 8, 1.0)
    assert a.digest() == parse_config({}).digest()
    assert a.digest() != parse_config({"seed": 1}).digest()


def test_config_pressure_parsing(tmp_path):
    cfg = tmp_path / "c.toml"
    cfg.write_text(
        "[grid]\nm = 64\n[pressure]\nmodes = [{k = [1], a = {kind = \"cos\", amp = 0.1, omega = 3.14159}}]\n"
    )
    rc = load_config(str(cfg))
    assert rc.pressure.value(np.array([[0.0]]), 0.0)[0] == pytest.approx(0.1)


@pytest.mark.parametrize(
    "raw",
    [
        {"grid": {"m": 2}},
        {"grid": {"n": 1.5}},
        {"pressure": {"dimension": 2}},
        {"pressure": {"modes": [{"k": [1], "a": {"kind": "spline"}}]}},
        {"norm": {"psi_eps": -1.0}},
        {"hj": {"direction": "sideways"}},
        {"measures": {"source": {"atoms": [[0.1]], "weights": [1.0, 2.0]}}},
        {"seed": -1},
    ],
)
def test_config_validation(raw):
    with pytest.raises(ConfigError):
        parse_config(raw)
