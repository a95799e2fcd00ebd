"""Sliding-window rate limiter for outbound service calls.

The guarantee callers rely on: no more than max_per_window acquisitions
complete within any window_seconds interval. A plain token bucket with burst
capacity would break that guarantee at refill boundaries, so timestamps of
recent acquisitions are tracked explicitly.
"""

from __future__ import annotations

import threading
import time
from collections import deque


class SlidingWindowLimiter:
    """Blocks callers until admitting one more request keeps the window legal."""

    def __init__(
        self,
        max_per_window: int,
        window_seconds: float = 1.0,
        clock=time.monotonic,
        sleep=time.sleep,
        guard_seconds: float = 0.0,
    ):
        if max_per_window < 1:
            raise ValueError("max_per_window must be >= 1")
        if window_seconds <= 0:
            raise ValueError("window_seconds must be > 0")
        if guard_seconds < 0:
            raise ValueError("guard_seconds must be >= 0")
        self.max_per_window = max_per_window
        self.window_seconds = window_seconds
        # extra spacing so the WINDOW also holds for an observer that
        # timestamps on arrival (transport jitter shifts each request)
        self.guard_seconds = guard_seconds
        self._clock = clock
        self._sleep = sleep
        self._lock = threading.Lock()
        self._stamps: deque[float] = deque()

    def acquire(self) -> None:
        """Delay as needed, never drop."""
        while True:
            with self._lock:
                now = self._clock()
                horizon = now - self.window_seconds
                while self._stamps and self._stamps[0] <= horizon:
                    self._stamps.popleft()
                if len(self._stamps) < self.max_per_window:
                    self._stamps.append(now)
                    return
                wait = (self._stamps[0] + self.window_seconds
                        + self.guard_seconds - now)
            self._sleep(max(wait, 0.0))
