import numpy as np
import pytest

from sorel import bench, kernels


def test_instance_shapes():
    B, index = bench.make_instance(10, 3, 2, seed=1)
    assert B.shape == (2, 10, 3, 10)
    assert len(index) == 2
    np.testing.assert_array_equal(index.head.sum(1), [2, 2])
    np.testing.assert_array_equal(index.ctx.sum(1), [6, 6])


def test_variants_agree():
    B, index = bench.make_instance(12, 3, 2, seed=4)
    run = bench.runners()
    ref = run["efficient"](B, index)
    for name, fn in run.items():
        np.testing.assert_allclose(fn(B, index), ref, rtol=0, atol=1e-10, err_msg=name)


def test_records_and_filters():
    seen = []
    recs = bench.run_benchmark([8, 16], ("naive", "efficient", "loop-python"), repeats=2, naive_max_n=8,
                               loop_python_max_n=8, on_record=seen.append)
    assert recs == seen
    assert [(r["N"], r["variant"]) for r in recs[::2]] == [(8, "naive"), (8, "efficient"), (8, "loop-python"),
                                                          (16, "efficient")]
    assert all(r["wall_time_ns"] > 0 and r["peak_aux_bytes"] >= 0 for r in recs)


def test_measure_peak_sees_allocation():
    assert bench.measure_peak(lambda: np.ones(1_000_000)) >= 8_000_000


def test_loglog_slope():
    recs = [{"variant": "v", "N": n, "peak_aux_bytes": 3 * n ** 2} for n in (16, 32, 64)]
    assert bench.loglog_slope(recs, "v") == pytest.approx(2.0)
    with pytest.raises(ValueError):
        bench.loglog_slope(recs, "v", sizes={16})


@pytest.mark.skipif("compiled" not in kernels.backends(), reason="extension not built")
def test_compiled_loop_faster_than_python():
    recs = bench.run_benchmark([24], ("loop-compiled", "loop-python"), repeats=1)
    fast = bench.median_field(recs, "loop-compiled", 24)
    slow = bench.median_field(recs, "loop-python", 24)
    assert slow > 5 * fast
