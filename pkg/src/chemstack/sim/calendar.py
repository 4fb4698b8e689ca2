"""Time-ordered event queue."""

from __future__ import annotations

import heapq
import itertools
import math

from ..errors import InternalError


class EventCalendar:
    """Min-time event queue; ties run in insertion order.

    Events are plain callbacks ``fn(*args)`` invoked with the clock set to
    their time. Scheduling in the past is an internal error.
    """

    def __init__(self, start: float = 0.0):
        self.now = float(start)
        self._heap = []
        self._seq = itertools.count()
        self.processed = 0

    def schedule(self, t: float, fn, *args) -> None:
        if t < self.now - 1e-12 or math.isnan(t):
            raise InternalError(f"event scheduled at {t} before clock {self.now}")
        heapq.heappush(self._heap, (max(t, self.now), next(self._seq), fn, args))

    def schedule_in(self, delay: float, fn, *args) -> None:
        self.schedule(self.now + delay, fn, *args)

    def peek(self) -> float:
        return self._heap[0][0] if self._heap else math.inf

    def __len__(self) -> int:
        return len(self._heap)

    def step(self) -> bool:
        if not self._heap:
            return False
        t, _, fn, args = heapq.heappop(self._heap)
        self.now = t
        self.processed += 1
        fn(*args)
        return True

    def run_until(self, t_end: float) -> None:
        """Process every event with time < ``t_end``, then set the clock to it."""
        heap = self._heap
        while heap and heap[0][0] < t_end:
            t, _, fn, args = heapq.heappop(heap)
            self.now = t
            self.processed += 1
            fn(*args)
        self.now = max(self.now, t_end)
