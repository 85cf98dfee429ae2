"""Sliding windowed-max filter over a monotonically increasing key
(time or round count). O(1) amortized via a monotonic deque."""

from __future__ import annotations

from collections import deque


class WindowedMax:
    """Maximum of all values whose key lies in (current_key - window, current_key]."""

    def __init__(self, window):
        self.window = window
        self._entries: deque = deque()  # (key, value), values strictly decreasing

    def update(self, key, value):
        entries = self._entries
        while entries and entries[-1][1] <= value:
            entries.pop()
        entries.append((key, value))
        expire = key - self.window
        while entries and entries[0][0] <= expire:
            entries.popleft()
        return entries[0][1]

    def current(self, default=0.0):
        return self._entries[0][1] if self._entries else default

    def __bool__(self):
        return bool(self._entries)
