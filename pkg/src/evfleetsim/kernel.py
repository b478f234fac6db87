"""Deterministic process-based discrete-event kernel.

Time is simulated minutes (float). Events at equal timestamps fire in the
order they were scheduled. Processes are plain generators that ``yield``
handles obtained from :meth:`Kernel.timeout` or :meth:`Kernel.passivate`.
"""

from __future__ import annotations

import enum
import heapq
import math
from dataclasses import dataclass
from typing import Callable, Generator, Optional

from .errors import ConfigError, SimulationError


class HandleStatus(enum.Enum):
    PENDING = "pending"
    COMPLETED = "completed"
    INTERRUPTED = "interrupted"


class InterruptOutcome(enum.Enum):
    INTERRUPTED = "interrupted"
    ALREADY_COMPLETED = "already_completed"


class Interrupt(Exception):
    """Thrown into a process generator when its pending wait is interrupted."""

    def __init__(self, handle: "ProcessHandle", cause=None):
        super().__init__(cause)
        self.handle = handle
        self.cause = cause

    @property
    def elapsed(self) -> float:
        return self.handle.elapsed


class ProcessHandle:
    """A scheduled, interruptible wait.

    ``wake_time`` is ``inf`` for passive waits that only end when another
    process activates them.
    """

    __slots__ = (
        "id", "kernel", "start_time", "wake_time", "status",
        "continuation", "on_interrupt",
    )

    def __init__(self, kernel, hid, start_time, wake_time, continuation, on_interrupt):
        self.kernel = kernel
        self.id = hid
        self.start_time = start_time
        self.wake_time = wake_time
        self.status = HandleStatus.PENDING
        self.continuation = continuation
        self.on_interrupt = on_interrupt

    @property
    def pending(self) -> bool:
        return self.status is HandleStatus.PENDING

    @property
    def duration(self) -> float:
        return self.wake_time - self.start_time

    @property
    def elapsed(self) -> float:
        return self.kernel.now - self.start_time

    def __repr__(self):
        return (f"ProcessHandle(id={self.id}, wake_time={self.wake_time}, "
                f"status={self.status.value})")


@dataclass(frozen=True)
class KernelStats:
    events_processed: int
    final_time: float


class Process:
    """Drives a generator: each yielded handle suspends it until the handle fires."""

    __slots__ = ("kernel", "gen", "waiting_on", "finished", "name")

    def __init__(self, kernel: "Kernel", gen: Generator, name: str = ""):
        self.kernel = kernel
        self.gen = gen
        self.name = name
        self.waiting_on: Optional[ProcessHandle] = None
        self.finished = False

    def _step(self, send=None, throw=None):
        try:
            if throw is not None:
                handle = self.gen.throw(throw)
            else:
                handle = self.gen.send(send)
        except StopIteration:
            self.waiting_on = None
            self.finished = True
            return
        if not isinstance(handle, ProcessHandle) or handle.kernel is not self.kernel:
            raise SimulationError(f"process {self.name!r} yielded {handle!r}")
        handle.continuation = self._resume
        handle.on_interrupt = self._throw
        self.waiting_on = handle

    def _resume(self, handle):
        self._step(send=handle)

    def _throw(self, handle, cause):
        self._step(throw=Interrupt(handle, cause))

    def interrupt(self, cause=None) -> InterruptOutcome:
        if self.waiting_on is None:
            return InterruptOutcome.ALREADY_COMPLETED
        return self.kernel.interrupt(self.waiting_on, cause)

    @property
    def passive(self) -> bool:
        h = self.waiting_on
        return h is not None and h.pending and math.isinf(h.wake_time)


class Kernel:
    def __init__(self, trace: bool = False):
        self.now = 0.0
        self._queue: list = []
        self._seq = 0
        self._next_id = 0
        self.events_processed = 0
        self.trace: Optional[list] = [] if trace else None
        self.after_event: Optional[Callable[["Kernel"], None]] = None

    def _new_handle(self, wake_time, continuation, on_interrupt):
        h = ProcessHandle(self, self._next_id, self.now, wake_time, continuation, on_interrupt)
        self._next_id += 1
        return h

    def schedule_timeout(self, duration: float, continuation=None, on_interrupt=None) -> ProcessHandle:
        """Schedule ``continuation(handle)`` to run ``duration`` minutes from now.

        ``on_interrupt(handle, cause)`` runs synchronously if the handle is
        interrupted while pending.
        """
        duration = float(duration)
        if not math.isfinite(duration) or duration < 0:
            raise ConfigError(f"timeout duration must be finite and >= 0, got {duration}")
        h = self._new_handle(self.now + duration, continuation, on_interrupt)
        heapq.heappush(self._queue, (h.wake_time, self._seq, h))
        self._seq += 1
        return h

    # generator-facing alias
    timeout = schedule_timeout

    def passivate(self) -> ProcessHandle:
        """A wait with no wake time; ended by :meth:`activate` or :meth:`interrupt`."""
        return self._new_handle(math.inf, None, None)

    def activate(self, handle: ProcessHandle) -> None:
        """Complete a passive wait immediately, running its continuation synchronously."""
        if handle.kernel is not self or not handle.pending or not math.isinf(handle.wake_time):
            raise SimulationError(f"cannot activate {handle!r}")
        handle.status = HandleStatus.COMPLETED
        handle.wake_time = self.now
        if handle.continuation is not None:
            handle.continuation(handle)

    def interrupt(self, handle: ProcessHandle, cause=None) -> InterruptOutcome:
        if handle.kernel is not self or not 0 <= handle.id < self._next_id:
            raise SimulationError(f"unknown handle {handle!r}")
        if handle.status is not HandleStatus.PENDING:
            return InterruptOutcome.ALREADY_COMPLETED
        handle.status = HandleStatus.INTERRUPTED
        # stale heap entry is skipped on dequeue
        if handle.on_interrupt is not None:
            handle.on_interrupt(handle, cause)
        return InterruptOutcome.INTERRUPTED

    def process(self, gen: Generator, name: str = "") -> Process:
        """Start ``gen`` now; it runs synchronously up to its first yield."""
        p = Process(self, gen, name)
        p._step()
        return p

    def peek(self) -> float:
        while self._queue and self._queue[0][2].status is not HandleStatus.PENDING:
            heapq.heappop(self._queue)
        return self._queue[0][0] if self._queue else math.inf

    def step(self) -> None:
        wake, _, h = heapq.heappop(self._queue)
        if wake < self.now:
            raise SimulationError(f"clock would move backwards: {wake} < {self.now}")
        self.now = wake
        h.status = HandleStatus.COMPLETED
        self.events_processed += 1
        if self.trace is not None:
            self.trace.append((wake, h.id))
        if h.continuation is not None:
            h.continuation(h)
        if self.after_event is not None:
            self.after_event(self)

    def run_until(self, end_time: float) -> KernelStats:
        start = self.events_processed
        while True:
            t = self.peek()
            if not self._queue or t > end_time:
                break
            self.step()
        return KernelStats(self.events_processed - start, self.now)
