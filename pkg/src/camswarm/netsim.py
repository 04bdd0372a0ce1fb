"""Deterministic discrete-event simulation of a lossy local network.

Devices register with a per-device clock offset (constant for the whole
run; oscillator drift over a 5 s window is far below a millisecond and is
not modeled).  Every packet is dropped with `loss_prob` per recipient and
otherwise delayed by an independent latency sample, so a broadcast reaches
each member through its own coin flips.

One `random.Random(seed)` drives all sampling and events pop in (time,
insertion sequence) order, which makes the full trace a pure function of
(scenario, seed).  Trace lines render as `time_ms device event detail`.
"""

from __future__ import annotations

import heapq
import random
from dataclasses import dataclass, field
from typing import Callable, Union


class SimError(Exception):
    pass


# --- latency distributions --------------------------------------------------


@dataclass(frozen=True)
class Constant:
    ms: float

    def __post_init__(self):
        if self.ms < 0:
            raise SimError(f"negative latency {self.ms}")

    def sample(self, rng: random.Random) -> float:
        return self.ms

    def spec(self) -> str:
        return f"constant:{self.ms:g}"


@dataclass(frozen=True)
class Uniform:
    lo_ms: float
    hi_ms: float

    def __post_init__(self):
        if not 0 <= self.lo_ms <= self.hi_ms:
            raise SimError(f"bad uniform bounds [{self.lo_ms}, {self.hi_ms}]")

    def sample(self, rng: random.Random) -> float:
        return rng.uniform(self.lo_ms, self.hi_ms)

    def spec(self) -> str:
        return f"uniform:{self.lo_ms:g}:{self.hi_ms:g}"


@dataclass(frozen=True)
class Exponential:
    mean_ms: float
    cap_ms: float

    def __post_init__(self):
        if self.mean_ms <= 0 or self.cap_ms < 0:
            raise SimError(f"bad exponential parameters ({self.mean_ms}, {self.cap_ms})")

    def sample(self, rng: random.Random) -> float:
        return min(rng.expovariate(1.0 / self.mean_ms), self.cap_ms)

    def spec(self) -> str:
        return f"exponential:{self.mean_ms:g}:{self.cap_ms:g}"


LatencyDist = Union[Constant, Uniform, Exponential]

# Latency samples snap to a dyadic grid (2**-30 ms, about a nanosecond) so
# that event timestamps stay sums of exactly representable doubles: a
# measured latency survives the send-time addition and fire-time subtraction
# bit-intact instead of picking up rounding noise from the time magnitude.
_TICK_MS = 2.0 ** -30


def _snap_latency(ms: float) -> float:
    return round(ms / _TICK_MS) * _TICK_MS


def parse_latency(text: str) -> LatencyDist:
    """Parse a CLI-style latency spec: constant:50, uniform:30:200, exponential:80:1000."""
    parts = text.split(":")
    try:
        if parts[0] == "constant" and len(parts) == 2:
            return Constant(float(parts[1]))
        if parts[0] == "uniform" and len(parts) == 3:
            return Uniform(float(parts[1]), float(parts[2]))
        if parts[0] == "exponential" and len(parts) == 3:
            return Exponential(float(parts[1]), float(parts[2]))
    except (ValueError, SimError) as exc:
        raise SimError(f"bad latency spec {text!r}: {exc}") from exc
    raise SimError(f"bad latency spec {text!r} (want constant:MS | uniform:LO:HI | exponential:MEAN:CAP)")


@dataclass(frozen=True)
class NetworkModel:
    loss_prob: float
    latency: LatencyDist
    seed: int

    def __post_init__(self):
        if not 0 <= self.loss_prob <= 1:
            raise SimError(f"loss_prob {self.loss_prob} outside [0, 1]")


# --- trace ------------------------------------------------------------------


@dataclass(frozen=True)
class TraceRecord:
    time_ms: float
    device: str
    event: str
    detail: str

    def render(self) -> str:
        return f"{self.time_ms:.3f} {self.device} {self.event} {self.detail}"


@dataclass(frozen=True)
class Delivery:
    """A packet arriving at a device, with ground-truth link facts."""

    src: str
    dst: str
    payload: object
    sent_at_ms: float
    latency_ms: float


BROADCAST = "*"


# --- event queue and simulator ----------------------------------------------


_DELIVER, _TIMER, _SEND = 0, 1, 2


@dataclass
class TimerHandle:
    fire_at_ms: float
    cancelled: bool = False

    def cancel(self) -> None:
        self.cancelled = True


@dataclass
class _Node:
    name: str
    clock_offset_ms: float
    handler: Callable | None


class NodeContext:
    """A device's view of the simulator: local clock plus bound I/O."""

    def __init__(self, sim: "Simulator", node: _Node):
        self._sim = sim
        self._node = node

    @property
    def name(self) -> str:
        return self._node.name

    @property
    def time_ms(self) -> float:
        """Global simulation time (test instrumentation; nodes should not peek)."""
        return self._sim.time_ms

    @property
    def local_time_ms(self) -> float:
        return self._sim.time_ms + self._node.clock_offset_ms

    def send(self, dst: str, payload) -> None:
        self._sim.send(self._node.name, dst, payload)

    def broadcast(self, payload) -> None:
        self._sim.send(self._node.name, BROADCAST, payload)

    def call_after(self, delay_ms: float, callback: Callable[[], None]) -> TimerHandle:
        if delay_ms < 0:
            raise SimError(f"negative delay {delay_ms}")
        return self._sim.set_timer(self._node.name, self._sim.time_ms + delay_ms, callback)

    def call_at_local(self, local_ms: float, callback: Callable[[], None]) -> TimerHandle:
        """Schedule at a LOCAL clock reading (converted via this node's offset)."""
        return self._sim.set_timer(self._node.name,
                                   local_ms - self._node.clock_offset_ms, callback)

    def log(self, event: str, detail: str = "") -> None:
        self._sim.log(self._node.name, event, detail)


class Simulator:
    """Single-threaded event loop; runs share nothing and may go in parallel.

    record_trace=False skips trace bookkeeping for bulk Monte Carlo runs;
    handlers and determinism are unaffected.
    """

    def __init__(self, model: NetworkModel, *, record_trace: bool = True):
        self.model = model
        self.rng = random.Random(model.seed)
        self.time_ms = 0.0
        self.trace: list[TraceRecord] = []
        self._record = record_trace
        self._nodes: dict[str, _Node] = {}
        self._contexts: dict[str, NodeContext] = {}
        self._heap: list = []
        self._seq = 0

    # -- setup

    def register(self, name: str, handler: Callable | None = None,
                 *, clock_offset_ms: float = 0.0) -> NodeContext:
        """Add a device. handler(ctx, delivery) runs on each arriving packet."""
        if name in self._nodes or name == BROADCAST:
            raise SimError(f"device {name!r} already registered or reserved")
        node = _Node(str(name), float(clock_offset_ms), handler)
        self._nodes[node.name] = node
        ctx = NodeContext(self, node)
        self._contexts[node.name] = ctx
        return ctx

    def context(self, name: str) -> NodeContext:
        try:
            return self._contexts[name]
        except KeyError:
            raise SimError(f"unknown device {name!r}") from None

    def set_handler(self, name: str, handler: Callable) -> None:
        self._require(name).handler = handler

    def _require(self, name: str) -> _Node:
        try:
            return self._nodes[name]
        except KeyError:
            raise SimError(f"unknown device {name!r}") from None

    # -- I/O

    def send(self, src: str, dst: str, payload, *, at: float | None = None) -> None:
        """Queue a packet; dst may be BROADCAST (everyone but the sender)."""
        self._require(src)
        if dst != BROADCAST:
            self._require(dst)
        when = self.time_ms if at is None else at
        if when < self.time_ms:
            raise SimError(f"send scheduled in the past ({when} < {self.time_ms})")
        if when > self.time_ms:
            self._push(when, _SEND, (src, dst, payload))
        else:
            self._dispatch_send(src, dst, payload)

    def set_timer(self, device: str, fire_at_ms: float,
                  callback: Callable[[], None]) -> TimerHandle:
        self._require(device)
        if fire_at_ms < self.time_ms:
            raise SimError(f"timer in the past ({fire_at_ms} < {self.time_ms})")
        handle = TimerHandle(fire_at_ms)
        self._push(fire_at_ms, _TIMER, (device, callback, handle))
        return handle

    def log(self, device: str, event: str, detail: str = "") -> None:
        if self._record:
            self.trace.append(TraceRecord(self.time_ms, str(device), event, detail))

    # -- loop

    def run_until(self, t_end_ms: float) -> list[TraceRecord]:
        """Process all events with time <= t_end_ms; returns the trace so far."""
        while self._heap and self._heap[0][0] <= t_end_ms:
            time_ms, _, kind, data = heapq.heappop(self._heap)
            self.time_ms = time_ms
            if kind == _DELIVER:
                self._dispatch_deliver(data)
            elif kind == _TIMER:
                device, callback, handle = data
                if not handle.cancelled:
                    if self._record:
                        self.trace.append(TraceRecord(time_ms, device, "timer", ""))
                    callback()
            else:
                self._dispatch_send(*data)
        self.time_ms = max(self.time_ms, t_end_ms)
        return self.trace

    def pending(self) -> bool:
        return bool(self._heap)

    # -- internals

    def _push(self, time_ms: float, kind: int, data) -> None:
        self._seq += 1
        heapq.heappush(self._heap, (time_ms, self._seq, kind, data))

    def _dispatch_send(self, src: str, dst: str, payload) -> None:
        size = len(payload) if isinstance(payload, (bytes, bytearray)) else ""
        if self._record:
            self.trace.append(TraceRecord(self.time_ms, src, "send",
                                          f"to={dst} bytes={size}"))
        targets = ([n for n in self._nodes if n != src] if dst == BROADCAST else [dst])
        for name in targets:
            if self.rng.random() < self.model.loss_prob:
                if self._record:
                    self.trace.append(TraceRecord(self.time_ms, name, "drop",
                                                  f"from={src}"))
                continue
            latency = _snap_latency(self.model.latency.sample(self.rng))
            delivery = Delivery(src, name, payload, self.time_ms, latency)
            self._push(self.time_ms + latency, _DELIVER, delivery)

    def _dispatch_deliver(self, d: Delivery) -> None:
        node = self._nodes.get(d.dst)
        if node is None:
            return
        if self._record:
            self.trace.append(TraceRecord(self.time_ms, d.dst, "deliver",
                                          f"from={d.src} latency_ms={d.latency_ms:.3f}"))
        if node.handler is not None:
            node.handler(self._contexts[d.dst], d)


def render_trace(trace) -> str:
    """One record per line, newline-terminated; stable for diff-based tests."""
    return "".join(rec.render() + "\n" for rec in trace)
