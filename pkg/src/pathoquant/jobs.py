"""Bounded inference job pool with explicit backpressure.

Admission control is counter-based: a request is admitted while
``queued + running < pool_size + queue_capacity`` and rejected with
PoolSaturated otherwise, so a single node sheds load deterministically
instead of queuing without bound. Metrics counters are read atomically
for the autoscaling endpoint.
"""

from __future__ import annotations

import threading
import time
from contextlib import contextmanager
from dataclasses import dataclass

from .errors import PoolSaturated


@dataclass(frozen=True)
class PoolMetrics:
    queue_depth: int
    jobs_running: int
    jobs_completed: int


class JobPool:
    def __init__(self, pool_size: int, queue_capacity: int):
        if pool_size < 1 or queue_capacity < 0:
            raise ValueError("need pool_size >= 1 and queue_capacity >= 0")
        self.pool_size = pool_size
        self.queue_capacity = queue_capacity
        self._lock = threading.Lock()
        self._workers = threading.Semaphore(pool_size)
        self._queued = 0
        self._running = 0
        self._completed = 0

    @contextmanager
    def slot(self):
        """Hold a worker slot for the duration of one job.

        Raises PoolSaturated when pool and queue are both full.
        """
        with self._lock:
            if self._queued + self._running >= self.pool_size + self.queue_capacity:
                raise PoolSaturated(
                    f"{self._running} running and {self._queued} queued jobs; "
                    f"capacity is {self.pool_size}+{self.queue_capacity}")
            self._queued += 1
        self._workers.acquire()
        with self._lock:
            self._queued -= 1
            self._running += 1
        try:
            yield
        finally:
            with self._lock:
                self._running -= 1
                self._completed += 1
            self._workers.release()

    def metrics(self) -> PoolMetrics:
        with self._lock:
            return PoolMetrics(queue_depth=self._queued, jobs_running=self._running,
                               jobs_completed=self._completed)

    def drain(self, timeout: float = 30.0) -> bool:
        """Wait until no job is queued or running; True when fully drained."""
        deadline = time.monotonic() + timeout
        while time.monotonic() < deadline:
            with self._lock:
                if self._queued == 0 and self._running == 0:
                    return True
            time.sleep(0.02)
        with self._lock:
            return self._queued == 0 and self._running == 0
