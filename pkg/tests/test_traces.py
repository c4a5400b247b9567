import numpy as np
import pytest
from hypothesis import given, strategies as st

from edgeslam import traces as T


def write(tmp_path, text, name="t.csv"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_load_two_samples(tmp_path):
    p = write(tmp_path, "t,throughput_bps,latency_s\n0,1e6,0.05\n1,2e6,0.04\n")
    tr = T.load_network_trace(p)
    assert len(tr) == 2
    assert list(tr.throughput) == [1e6, 2e6]
    assert list(tr.latency) == [0.05, 0.04]


def test_load_rejects_non_monotone(tmp_path):
    p = write(tmp_path, "t,throughput_bps,latency_s\n5,1e6,0.05\n3,2e6,0.04\n")
    with pytest.raises(T.TraceValidationError):
        T.load_network_trace(p)


def test_load_rejects_zero_throughput(tmp_path):
    p = write(tmp_path, "t,throughput_bps,latency_s\n0,0,0.05\n1,2e6,0.04\n")
    with pytest.raises(T.TraceValidationError):
        T.load_network_trace(p)


def test_load_format_error_names_line(tmp_path):
    p = write(tmp_path, "t,throughput_bps,latency_s\n0,1e6,0.05\n1,abc,0.04\n")
    with pytest.raises(T.TraceFormatError, match="line 3"):
        T.load_network_trace(p)


def test_save_load_roundtrip(tmp_path):
    tr = T.gen_congestion_trace(50, seed=2)
    T.save_network_trace(tr, tmp_path / "x.csv")
    back = T.load_network_trace(tmp_path / "x.csv")
    np.testing.assert_array_equal(back.throughput, tr.throughput)
    np.testing.assert_array_equal(back.latency, tr.latency)


def test_frame_trace_roundtrip(tmp_path):
    ft = T.gen_frame_trace(20, seed=1)
    T.save_frame_trace(ft, tmp_path / "f.csv")
    back = T.load_frame_trace(tmp_path / "f.csv", fps=30.0)
    np.testing.assert_array_equal(back.raw_size, ft.raw_size)


@pytest.mark.parametrize("n,parts,sizes", [(9000, 16, {562, 563}), (3000, 12, {250}), (10, 1, {10})])
def test_partition_sizes(n, parts, sizes):
    tr = T.gen_link_trace(T.LinkModel(), n)
    out = T.partition_trace(tr, parts)
    assert len(out) == parts
    assert {len(p) for p in out} == sizes


def test_partition_too_many_parts():
    with pytest.raises(ValueError):
        T.partition_trace(T.gen_link_trace(T.LinkModel(), 3), 4)


@given(st.integers(1, 400), st.integers(1, 40))
def test_partition_concat_roundtrip(n, parts):
    if parts > n:
        return
    tr = T.gen_congestion_trace(n, seed=n)
    out = T.partition_trace(tr, parts)
    back = T.concat(out)
    np.testing.assert_array_equal(back.t, tr.t)
    np.testing.assert_array_equal(back.throughput, tr.throughput)
    assert max(map(len, out)) - min(map(len, out)) <= 1


def test_fixed_link_constant():
    tr = T.gen_link_trace(T.LinkModel("fixed", 1e6, 0.02), 3)
    assert np.all(tr.throughput == 1e6) and np.all(tr.latency == 0.02)


def test_degenerate_gaussian_equals_fixed():
    g = T.gen_link_trace(T.LinkModel("gaussian", 1e6, 0.02, 0.0, 0.0, seed=3), 5)
    f = T.gen_link_trace(T.LinkModel("fixed", 1e6, 0.02), 5)
    np.testing.assert_array_equal(g.throughput, f.throughput)
    np.testing.assert_array_equal(g.latency, f.latency)


def test_gaussian_deterministic_per_seed():
    m = T.LinkModel("gaussian", 1e6, 0.02, 2e5, 0.005, seed=7)
    a, b = T.gen_link_trace(m, 100), T.gen_link_trace(m, 100)
    np.testing.assert_array_equal(a.throughput, b.throughput)
    np.testing.assert_array_equal(a.latency, b.latency)


def test_gaussian_mean_within_three_se():
    m = T.LinkModel("gaussian", 1e6, 0.02, 1e5, 0.002, seed=11)
    tr = T.gen_link_trace(m, 20000)
    assert abs(tr.throughput.mean() - 1e6) < 3 * 1e5 / np.sqrt(20000)
    assert abs(tr.latency.mean() - 0.02) < 3 * 0.002 / np.sqrt(20000)


def test_gaussian_clamped_at_floor():
    tr = T.gen_link_trace(T.LinkModel("gaussian", 1e4, 0.001, 1e5, 0.01, seed=0), 1000)
    assert tr.throughput.min() >= T.THROUGHPUT_FLOOR
    assert tr.latency.min() >= 0.0


def test_fixed_kind_rejects_std():
    with pytest.raises(ValueError):
        T.LinkModel("fixed", 1e6, 0.02, std_throughput=1.0)


def test_congestion_trace_two_regimes():
    tr = T.gen_congestion_trace(5000, seed=0)
    lo = np.mean(tr.throughput < 1e6)
    assert 0.2 < lo < 0.8


def test_frame_trace_invariants():
    with pytest.raises(T.TraceValidationError):
        T.FrameTrace("x", 0.0, [1.0])
    with pytest.raises(T.TraceValidationError):
        T.FrameTrace("x", 30.0, [1.0, -1.0])
