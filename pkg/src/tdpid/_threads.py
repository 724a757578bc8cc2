"""Order-preserving parallel map over independent evaluations.

Worker count is capped by the TDPID_THREADS environment variable; spectrum
evaluations spend their time in LAPACK which releases the GIL, so threads
give real speedup on grid scans.
"""
import os
from concurrent.futures import ThreadPoolExecutor


def worker_count():
    env = os.environ.get("TDPID_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return min(8, os.cpu_count() or 1)


def parallel_map(fn, items):
    items = list(items)
    workers = min(worker_count(), max(len(items), 1))
    if workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))
