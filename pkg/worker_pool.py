import logging
import queue
import threading

logger = logging.getLogger(__name__)

_STOP = object()


class WorkerPool:
    """
    A dispatcher thread handing work items to N worker threads.

    Items are fed through a bounded queue so the dispatcher only runs ahead of
    the workers by one item per worker. Results come back in item order.
    """

    def __init__(self, workers):
        if workers < 1:
            raise ValueError(f"workers must be >= 1, got {workers}")
        self.workers = workers

    def map(self, fn, items):
        items = list(items)
        if not items:
            return []
        if self.workers == 1:
            return [fn(item) for item in items]

        results = [None] * len(items)
        errors = []
        work = queue.Queue(maxsize=self.workers)
        lock = threading.Lock()

        def dispatcher():
            for index, item in enumerate(items):
                work.put((index, item))
            for _ in range(self.workers):
                work.put(_STOP)

        def worker():
            while True:
                job = work.get()
                if job is _STOP:
                    return
                index, item = job
                if errors:
                    continue
                try:
                    results[index] = fn(item)
                except Exception as e:
                    with lock:
                        errors.append((index, e))

        threads = [threading.Thread(target=dispatcher, name="dispatcher", daemon=True)]
        threads += [threading.Thread(target=worker, name=f"worker-{i}", daemon=True)
                    for i in range(self.workers)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()

        if errors:
            index, exc = min(errors, key=lambda e: e[0])
            logger.debug("work item %d failed: %s", index, exc)
            raise exc
        return results


def run_dispatched(items, fn, workers):
    """Apply fn to every item on a dispatcher + workers pool, keeping item order."""
    return WorkerPool(workers).map(fn, items)
