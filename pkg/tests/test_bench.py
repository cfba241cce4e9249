import numpy as np
import pytest

from rtmemu import bench, lut, oracle
from rtmemu.oracle import OracleConfig
from rtmemu.sampling import StateRanges, sample_states


@pytest.fixture(scope="module")
def queries(small_emulator):
    X = sample_states(StateRanges(), 1000, small_emulator.k, seed=9)
    return X[:, :4], X[:, 4:]


def test_oracle_against_itself_is_exact(small_emulator, queries):
    grid = small_emulator.grid
    engines, ref = bench.standard_engines(grid, OracleConfig(), quadrature_depth=4)
    rep = bench.run_bench(*queries, engines, ref)
    e = rep.engines["oracle(N=4)"]
    assert e["nmae_vs_oracle"] == 0.0 and e["mae_vs_oracle"] == 0.0
    assert not rep.partial


def test_report_fields_and_ordering(small_emulator, queries):
    table = lut.build_lut(StateRanges(), 3, small_emulator.grid)
    engines, ref = bench.standard_engines(small_emulator.grid, OracleConfig(), small_emulator, table,
                                          quadrature_depth=2)
    rep = bench.run_bench(*queries, engines, ref, repeats=3, config={"seed": 0})
    assert set(rep.engines) == {"oracle(N=2)", "emulator", "lut(3x3x3x3x3)"}
    for e in rep.engines.values():
        assert e["wall_seconds_min"] <= e["wall_seconds_median"] <= e["wall_seconds_max"]
        assert e["queries_per_sec"] == pytest.approx(1000 / e["wall_seconds_median"])
    assert rep.engines["lut(3x3x3x3x3)"]["memory_bytes"] == 3**5 * 3 * 8
    assert rep.engines["emulator"]["nmae_vs_oracle"] > 0
    lines = rep.to_csv().splitlines()
    assert lines[0] == "engine,metric,value"
    assert any(line.startswith("emulator,queries_per_sec,") for line in lines)
    assert '"partial": false' in rep.to_json()


def test_outputs_are_bitwise_stable(small_emulator, queries):
    engines, ref = bench.standard_engines(small_emulator.grid, OracleConfig(), small_emulator,
                                          quadrature_depth=1)
    a = bench.run_bench(*queries, engines, ref, seed=3)
    b = bench.run_bench(*queries, engines, ref, seed=3)
    for name in a.engines:
        assert a.engines[name]["output_sha256"] == b.engines[name]["output_sha256"]
        assert a.engines[name]["nmae_vs_oracle"] == b.engines[name]["nmae_vs_oracle"]


def test_failing_engine_gives_partial_report(small_emulator, queries):
    def boom(s, r):
        raise RuntimeError("out of memory")

    engines, ref = bench.standard_engines(small_emulator.grid, OracleConfig(), small_emulator,
                                          quadrature_depth=1)
    rep = bench.run_bench(*queries, [bench.Engine("broken", boom), *engines], ref)
    assert rep.partial
    assert "out of memory" in rep.engines["broken"]["error"]
    assert rep.engines["emulator"]["queries_per_sec"] > 0


def test_input_validation(small_emulator, queries):
    engines, ref = bench.standard_engines(small_emulator.grid, OracleConfig(), quadrature_depth=1)
    s, r = queries
    with pytest.raises(ValueError, match="1000"):
        bench.run_bench(s[:999], r[:999], engines, ref)
    with pytest.raises(ValueError, match="repeats"):
        bench.run_bench(s, r, engines, ref, repeats=2)


def test_accuracy_metric():
    ref = np.array([[1.0, 2.0], [3.0, 2.0]])
    nmae, mae = bench.accuracy(ref + np.array([0.2, 0.1]), ref)
    assert mae == pytest.approx(0.15)
    assert nmae == pytest.approx(0.5 * (0.2 / 2.0 + 0.1 / 2.0))


def test_reference_is_plain_oracle(small_emulator):
    _, ref = bench.standard_engines(small_emulator.grid, OracleConfig(quadrature_depth=7))
    assert ref.name == "oracle(N=0)"
    s = np.array([[0.5, 0.1, 1.0, 1.0]])
    r = np.full((1, 3), 0.2)
    np.testing.assert_array_equal(ref.run(s, r), oracle.spectra(s, r, small_emulator.grid))
