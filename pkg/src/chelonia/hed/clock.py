"""Clocks and schedulers.

``Simulator`` is a single-threaded discrete-event loop over virtual time.
While an event runs, work done on its behalf (network delays, processing
cost) moves ``now`` forward with :meth:`Simulator.advance`; the next event
resets ``now`` to its own timestamp.  An event therefore executes atomically
at its start time and reports its duration by how far it advanced the clock,
which is how concurrent activities overlap in virtual time.

``RealtimeScheduler`` has the same surface over wall-clock time and a
background thread, for long-running deployments.
"""

from __future__ import annotations

import heapq
import itertools
import logging
import threading
import time as _time
from dataclasses import dataclass, field
from typing import Callable

log = logging.getLogger(__name__)


@dataclass(order=True)
class _Event:
    time: float
    seq: int
    fn: Callable = field(compare=False)
    args: tuple = field(compare=False, default=())
    cancelled: bool = field(compare=False, default=False)

    def cancel(self) -> None:
        self.cancelled = True


class Periodic:
    """Handle for a repeating task; ``cancel()`` stops future runs."""

    def __init__(self):
        self.cancelled = False
        self._pending: _Event | None = None

    def cancel(self) -> None:
        self.cancelled = True
        if self._pending is not None:
            self._pending.cancel()


class Simulator:
    simulated = True

    def __init__(self, start: float = 0.0):
        self.now = start
        self._queue: list[_Event] = []
        self._seq = itertools.count()
        self.events_run = 0

    def time(self) -> float:
        return self.now

    def advance(self, seconds: float) -> None:
        if seconds > 0:
            self.now += seconds

    def at(self, when: float, fn: Callable, *args) -> _Event:
        ev = _Event(when, next(self._seq), fn, args)
        heapq.heappush(self._queue, ev)
        return ev

    def schedule(self, delay: float, fn: Callable, *args) -> _Event:
        return self.at(self.now + max(delay, 0.0), fn, *args)

    def every(self, period: float, fn: Callable, offset: float = 0.0) -> Periodic:
        if period <= 0:
            raise ValueError("period must be positive")
        handle = Periodic()
        start = self.now + offset

        def tick(n: int):
            if handle.cancelled:
                return
            # next run is anchored to the grid, not to when this run finished
            handle._pending = self.at(start + (n + 1) * period, tick, n + 1)
            fn()

        handle._pending = self.at(start, tick, 0)
        return handle

    def pending(self) -> int:
        return sum(1 for ev in self._queue if not ev.cancelled)

    def step(self) -> bool:
        while self._queue:
            ev = heapq.heappop(self._queue)
            if ev.cancelled:
                continue
            self.now = ev.time
            self.events_run += 1
            ev.fn(*ev.args)
            return True
        return False

    def run_until(self, until: float) -> None:
        while self._queue:
            head = self._queue[0]
            if head.cancelled:
                heapq.heappop(self._queue)
                continue
            if head.time > until:
                break
            self.step()
        self.now = max(self.now, until)

    def run(self, max_events: int | None = None) -> None:
        n = 0
        while self.step():
            n += 1
            if max_events is not None and n >= max_events:
                break


class RealtimeScheduler:
    simulated = False

    def __init__(self):
        self._queue: list[_Event] = []
        self._seq = itertools.count()
        self._cond = threading.Condition()
        self._thread: threading.Thread | None = None
        self._stopping = False

    def time(self) -> float:
        return _time.time()

    def advance(self, seconds: float) -> None:
        # real time passes on its own
        pass

    def at(self, when: float, fn: Callable, *args) -> _Event:
        ev = _Event(when, next(self._seq), fn, args)
        with self._cond:
            heapq.heappush(self._queue, ev)
            self._cond.notify()
        return ev

    def schedule(self, delay: float, fn: Callable, *args) -> _Event:
        return self.at(self.time() + max(delay, 0.0), fn, *args)

    def every(self, period: float, fn: Callable, offset: float = 0.0) -> Periodic:
        handle = Periodic()
        start = self.time() + offset

        def tick(n: int):
            if handle.cancelled:
                return
            handle._pending = self.at(start + (n + 1) * period, tick, n + 1)
            fn()

        handle._pending = self.at(start, tick, 0)
        return handle

    def start(self) -> None:
        if self._thread is None:
            self._stopping = False
            self._thread = threading.Thread(target=self._loop, name="scheduler", daemon=True)
            self._thread.start()

    def stop(self) -> None:
        with self._cond:
            self._stopping = True
            self._cond.notify()
        if self._thread is not None:
            self._thread.join(timeout=5)
            self._thread = None

    def _loop(self) -> None:
        while True:
            with self._cond:
                while not self._stopping:
                    if self._queue and self._queue[0].time <= self.time():
                        break
                    timeout = self._queue[0].time - self.time() if self._queue else None
                    self._cond.wait(timeout)
                if self._stopping:
                    return
                ev = heapq.heappop(self._queue)
            if ev.cancelled:
                continue
            try:
                ev.fn(*ev.args)
            except Exception:
                log.exception("scheduled task %r failed", ev.fn)
