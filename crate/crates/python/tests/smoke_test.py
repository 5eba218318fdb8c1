"""Smoke test of the Python bindings.

Build first:  cargo build --release -p deqn-py --features extension-module
Then run:     python3 crates/python/tests/smoke_test.py   (or pytest)
If `deqn_py` is not importable, the freshly built shared library under
target/release is loaded directly.
"""

import importlib.util
import json
import math
import pathlib
import sys


def _load():
    try:
        import deqn_py  # noqa: F401

        return deqn_py
    except ImportError:
        root = pathlib.Path(__file__).resolve().parents[3]
        lib = root / "target" / "release" / "libdeqn_py.so"
        spec = importlib.util.spec_from_file_location("deqn_py", lib)
        if spec is None or not lib.exists():
            raise
        module = importlib.util.module_from_spec(spec)
        spec.loader.exec_module(module)
        sys.modules["deqn_py"] = module
        return module


deqn_py = _load()


def test_cqi_lookup():
    table = deqn_py.cqi_table()
    assert len(table) == 16
    assert table[7] == (7, 4.694, "16QAM", 378, 1.4766)
    assert deqn_py.sinr_to_efficiency(5.0) == (7, 1.4766)
    assert deqn_py.sinr_to_efficiency(-7.0) == (0, 0.0)
    assert math.isclose(deqn_py.throughput(1.4766, 5e6), 7.383e6)


def test_reward_tiers():
    assert deqn_py.reward(False, None, 0.0) == -1
    assert deqn_py.reward(True, 1.49, 5.0) == -2
    assert deqn_py.reward(True, 2.0, 2.5) == 2
    assert deqn_py.reward(True, None, 3.0) == 3


def test_value_iteration():
    q = deqn_py.value_iteration([[[(0, 1.0)]]], [[1.0]], 0.9)
    assert abs(q[0][0] - 10.0) < 1e-8
    try:
        deqn_py.value_iteration([[[(0, 1.0)]]], [[1.0]], 1.0)
    except ValueError as e:
        assert "gamma" in str(e)
    else:
        raise AssertionError("gamma = 1 must be rejected")


def test_network():
    net = deqn_py.EchoStateNetwork(5, 8, layers=2, seed=3)
    assert all(abs(r - 0.9) < 1e-6 for r in net.spectral_radii())
    h = net.zero_state()
    assert [len(layer) for layer in h] == [32, 32]
    h = net.advance(h, [1.0, 0.0, 0.0, 1.0, 0.0])
    assert net.readout([1.0, 0.0, 0.0, 1.0, 0.0], h) == [0.0] * 8
    assert net.feature_dim == 5 + 64
    again = deqn_py.EchoStateNetwork.from_json(net.to_json())
    assert again.advance(net.zero_state(), [0.5] * 5) == net.advance(net.zero_state(), [0.5] * 5)


def test_small_runs():
    cfg = "total_samples = 600\nnum_sus = 2\n"
    m = deqn_py.run_experiment(cfg, seed=3, agent="deqn1")
    assert len(m["mean_reward"]) == 2
    assert len(m["warning_frequency"][0]) == 4
    again = deqn_py.run_experiment(cfg, seed=3, agent="deqn1")
    assert again["mean_reward"] == m["mean_reward"]
    base = deqn_py.pu_baseline(cfg, seed=3)
    assert len(base) == 2 and all(t > 0 for t in base)
    try:
        deqn_py.run_experiment("total_samples = 1000\n")
    except ValueError as e:
        assert "total_samples" in str(e)
    else:
        raise AssertionError("bad config must raise")


def test_oracle():
    r = deqn_py.oracle_test(seed=1)
    assert r["oracle_policy"] == [1, 1, 1, 0]
    assert r["matches"]
    json.dumps(r)


if __name__ == "__main__":
    for name, fn in sorted(globals().items()):
        if name.startswith("test_") and callable(fn):
            fn()
            print(f"ok {name}")
