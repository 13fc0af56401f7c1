"""Deterministic discrete-event simulation kernel.

Virtual time is integer nanoseconds; events are totally ordered by
(fire_at, seq) where seq is a monotone counter issued at schedule time, so
simultaneous events replay in schedule order on every platform.

Random numbers come from named streams backed by Philox (counter-based).
Each stream's 128-bit key is SHA-256(master_seed ":" label), which makes any
(master_seed, label) pair reproduce the same sequence regardless of how many
other streams exist or in what order they were created.
"""

from __future__ import annotations

import hashlib
import heapq
from dataclasses import dataclass, field
from typing import Any, Callable, Optional

import numpy as np

NS_PER_MS = 1_000_000
NS_PER_SEC = 1_000_000_000


def seconds_to_ns(s: float) -> int:
    return int(round(s * NS_PER_SEC))


def ns_to_seconds(t: int) -> float:
    return t / NS_PER_SEC


def ms_to_ns(ms: float) -> int:
    return int(round(ms * NS_PER_MS))


class HandlerError(RuntimeError):
    """A handler raised; carries the event context that was being processed."""

    def __init__(self, message: str, fire_at: int, seq: int, target: str):
        super().__init__(f"{message} (event target={target!r} t={fire_at}ns seq={seq})")
        self.fire_at = fire_at
        self.seq = seq
        self.target = target


@dataclass(order=True)
class _Event:
    fire_at: int
    seq: int
    target: str = field(compare=False)
    handler: Callable[[Any], None] = field(compare=False)
    payload: Any = field(compare=False)
    cancelled: bool = field(default=False, compare=False)


def derive_stream_seed(master_seed: int, label: str) -> int:
    """128-bit Philox key for a named stream, stable across runs and platforms."""
    digest = hashlib.sha256(f"{master_seed}:{label}".encode()).digest()
    return int.from_bytes(digest[:16], "little")


class Engine:
    """Single-threaded event loop with a virtual integer-nanosecond clock."""

    def __init__(self, master_seed: int = 0):
        self.master_seed = master_seed
        self._clock: int = 0
        self._seq: int = 0
        self._heap: list[_Event] = []
        self._streams: dict[str, np.random.Generator] = {}
        self.scheduled_count: int = 0
        self.processed_count: int = 0
        # optional (t, seq, target) trace used by replay-determinism checks
        self.trace: Optional[list[tuple[int, int, str]]] = None

    def now(self) -> int:
        return self._clock

    @property
    def pending_count(self) -> int:
        return sum(1 for ev in self._heap if not ev.cancelled)

    def schedule(self, delay: int, handler: Callable[[Any], None],
                 payload: Any = None, target: str = "") -> _Event:
        """Enqueue `handler(payload)` at now()+delay. delay in ns, >= 0."""
        if delay < 0:
            raise ValueError(f"negative delay {delay}")
        ev = _Event(self._clock + int(delay), self._seq,
                    target or getattr(handler, "__qualname__", "handler"),
                    handler, payload)
        self._seq += 1
        self.scheduled_count += 1
        heapq.heappush(self._heap, ev)
        return ev

    def schedule_at(self, fire_at: int, handler: Callable[[Any], None],
                    payload: Any = None, target: str = "") -> _Event:
        """Enqueue at an absolute time, which must not precede the clock."""
        return self.schedule(fire_at - self._clock, handler, payload, target)

    def run_until(self, t_end: int) -> int:
        """Process every event with fire_at <= t_end in total order.

        Returns the number of events processed. The clock ends at the last
        processed event's time (never beyond t_end, never moved by an empty
        queue).
        """
        processed = 0
        while self._heap and self._heap[0].fire_at <= t_end:
            ev = heapq.heappop(self._heap)
            if ev.cancelled:
                continue
            self._clock = ev.fire_at
            if self.trace is not None:
                self.trace.append((ev.fire_at, ev.seq, ev.target))
            try:
                ev.handler(ev.payload)
            except HandlerError:
                raise
            except Exception as exc:
                raise HandlerError(str(exc), ev.fire_at, ev.seq, ev.target) from exc
            processed += 1
            self.processed_count += 1
        return processed

    def rng_stream(self, label: str) -> np.random.Generator:
        """Named independent stream; same label returns the same handle."""
        gen = self._streams.get(label)
        if gen is None:
            gen = np.random.Generator(np.random.Philox(key=derive_stream_seed(self.master_seed, label)))
            self._streams[label] = gen
        return gen
