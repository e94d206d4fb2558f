"""Monotonic microsecond clock used for every runtime timestamp."""

import time


def now_us() -> int:
    return time.monotonic_ns() // 1000
