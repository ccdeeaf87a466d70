import threading

import pytest

from worker_pool import WorkerPool, run_dispatched


def test_results_keep_item_order():
    assert run_dispatched(range(50), lambda x: x * x, 8) == [x * x for x in range(50)]


def test_work_spreads_over_threads():
    seen = set()
    barrier = threading.Barrier(2, timeout=5)

    def job(_):
        seen.add(threading.current_thread().name)
        try:
            barrier.wait()
        except threading.BrokenBarrierError:
            pass

    run_dispatched(range(4), job, 2)
    assert len(seen) == 2


def test_first_failure_is_raised():
    def job(x):
        if x in (3, 7):
            raise KeyError(x)
        return x

    with pytest.raises(KeyError) as info:
        run_dispatched(range(10), job, 4)
    assert info.value.args[0] in (3, 7)


def test_single_worker_runs_inline():
    assert WorkerPool(1).map(str, [1, 2]) == ["1", "2"]
    assert WorkerPool(3).map(str, []) == []


def test_needs_a_worker():
    with pytest.raises(ValueError):
        WorkerPool(0)
