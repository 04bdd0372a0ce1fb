"""Loss-tolerant synchronized capture via a repeated countdown broadcast.

The host never shares an absolute clock.  It broadcasts countdown signals
for the 5 s window before the scheduled instant, each carrying only the
remaining waiting time; a client schedules its shutter at
`receive_time + remaining` and keeps the minimum over everything it hears.
Any single received packet suffices, and the fire-time error equals the
minimum one-way latency among the received packets, regardless of clock
offsets (each candidate is t_fire + that packet's latency, shifted by the
receiver's constant offset).

Signals after the scheduled instant cannot improve a schedule: a packet
sent at or before t_fire that arrives after a device fired necessarily
rode a slower link than the one that set the fire time.

remaining_ms is a whole millisecond on the wire, so at broadcast rates
whose period does not divide the window the last-sent values quantize by
up to 0.5 ms; the stock rates (1, 5, 20 Hz) are exact.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .netsim import (
    Constant,
    Delivery,
    Exponential,
    LatencyDist,
    NetworkModel,
    NodeContext,
    Simulator,
    TimerHandle,
    Uniform,
)
from .protocol import CaptureMode, CountdownPayload, MessageKind, decode_message, encode_message, message

COUNTDOWN_WINDOW_MS = 5000.0
DEFAULT_RATE_HZ = 20.0


class SyncError(Exception):
    pass


class StateError(SyncError):
    """Operation not valid in the current phase or capture state."""


def countdown_plan(rate_hz: float, window_ms: float = COUNTDOWN_WINDOW_MS):
    """(offset_from_window_start_ms, remaining_ms) per signal.

    floor(window*rate/1000) signals on the rate grid plus one pinned at the
    fire instant with remaining 0, so the broadcasts span exactly
    [t_fire - window, t_fire].
    """
    if rate_hz <= 0:
        raise SyncError(f"rate must be positive, got {rate_hz}")
    count = math.floor(window_ms * rate_hz / 1000.0) + 1
    interval = 1000.0 / rate_hz
    plan = [(k * interval, round(window_ms - k * interval)) for k in range(count - 1)]
    plan.append((window_ms, 0))
    return plan


# --- client side -------------------------------------------------------------


@dataclass
class CaptureSchedule:
    """A client's evolving estimate of when to fire, in its local clock."""

    capture_id: int
    fire_at_local: float | None = None
    packets_received: int = 0
    heard_local_ms: list = field(default_factory=list)  # receive instants
    fired: bool = False
    fired_at_local: float | None = None

    def effective_latency_ms(self, t_fire_global: float, clock_offset_ms: float) -> float:
        if not self.fired:
            raise SyncError("device never fired")
        return (self.fired_at_local - clock_offset_ms) - t_fire_global


def on_countdown(schedule: CaptureSchedule, recv_local_ms: float,
                 payload: CountdownPayload) -> CaptureSchedule:
    """Fold one countdown packet into the schedule (min rule; late => fire now).

    Packets for a different capture_id are ignored; superseding an old
    capture with a new id is the caller's decision.
    """
    if schedule.capture_id != payload.capture_id:
        return schedule
    schedule.packets_received += 1
    schedule.heard_local_ms.append(recv_local_ms)
    candidate = recv_local_ms + payload.remaining_ms
    if schedule.fire_at_local is None or candidate < schedule.fire_at_local:
        schedule.fire_at_local = candidate
    if candidate <= recv_local_ms and not schedule.fired:
        _mark_fired(schedule, recv_local_ms)
    return schedule


def _mark_fired(schedule: CaptureSchedule, local_ms: float) -> None:
    schedule.fired = True
    schedule.fired_at_local = local_ms


class CaptureClient:
    """Event-driven countdown follower for one device.

    Owns the timer for the pending shutter and guarantees exactly-once
    firing per capture_id.  A countdown with a higher capture_id supersedes
    the tracked one (late joiners adopt in-flight captures the same way);
    lower ids are stale and ignored.
    """

    def __init__(self, ctx: NodeContext, on_fire=None):
        self._ctx = ctx
        self._on_fire = on_fire
        self.schedule: CaptureSchedule | None = None
        self.mode: CaptureMode = CaptureMode.PHOTO
        self.video_duration_ms: int = 0
        self._timer: TimerHandle | None = None

    def handle_countdown(self, payload: CountdownPayload) -> None:
        now = self._ctx.local_time_ms
        if self.schedule is None or payload.capture_id > self.schedule.capture_id:
            self.schedule = CaptureSchedule(payload.capture_id)
            self.mode = CaptureMode(payload.mode)
            self.video_duration_ms = payload.video_duration_ms
            if self._timer is not None:
                self._timer.cancel()
                self._timer = None
        elif payload.capture_id < self.schedule.capture_id:
            self._ctx.log("stale_countdown", f"capture_id={payload.capture_id}")
            return
        before = self.schedule.fire_at_local
        was_fired = self.schedule.fired
        on_countdown(self.schedule, now, payload)
        if self.schedule.fired and not was_fired:
            self._fired_now()
        elif not self.schedule.fired and self.schedule.fire_at_local != before:
            if self._timer is not None:
                self._timer.cancel()
            self._timer = self._ctx.call_at_local(self.schedule.fire_at_local,
                                                  self._timer_fired)

    def _timer_fired(self) -> None:
        if self.schedule is None or self.schedule.fired:
            return
        _mark_fired(self.schedule, self._ctx.local_time_ms)
        self._fired_now()

    def _fired_now(self) -> None:
        sched = self.schedule
        self._ctx.log("fire", f"capture_id={sched.capture_id} mode={self.mode.name}")
        if self._on_fire is not None:
            self._on_fire(sched.capture_id, sched.fired_at_local)


# --- host side ----------------------------------------------------------------


@dataclass
class CaptureSession:
    capture_id: int
    mode: CaptureMode
    t_fire_host: float  # host-local ms
    rate_hz: float
    window_ms: float = COUNTDOWN_WINDOW_MS
    video_duration_ms: int = 0
    single_shot: bool = False
    host_fired_at_local: float | None = field(default=None, init=False)
    cancelled: bool = field(default=False, init=False)


class CaptureHost:
    """Schedules the countdown broadcasts and the host's own shutter."""

    def __init__(self, ctx: NodeContext, sender_id: int, *, on_fire=None):
        self._ctx = ctx
        self._sender_id = sender_id
        self._on_fire = on_fire
        self._next_id = 1
        self.session: CaptureSession | None = None
        self._handles: list[TimerHandle] = []

    def pending(self) -> bool:
        return (self.session is not None and not self.session.cancelled
                and self._ctx.local_time_ms < self.session.t_fire_host)

    def cancel(self) -> CaptureSession:
        """Host-side abort: stop future broadcasts and the host's shutter.

        There is no cancel message on the wire; devices that already heard
        a countdown signal will still fire.
        """
        if not self.pending():
            raise StateError("no pending capture to cancel")
        for handle in self._handles:
            handle.cancel()
        self._handles.clear()
        self.session.cancelled = True
        return self.session

    def start_capture(self, mode: CaptureMode = CaptureMode.PHOTO, *,
                      rate_hz: float = DEFAULT_RATE_HZ,
                      t_fire_local: float | None = None,
                      video_duration_ms: int = 0,
                      single_shot: bool = False) -> CaptureSession:
        now = self._ctx.local_time_ms
        if self.pending():
            raise StateError(f"capture {self.session.capture_id} still pending")
        window = COUNTDOWN_WINDOW_MS
        if t_fire_local is None:
            t_fire_local = now + window
        if t_fire_local < now + window and not single_shot:
            raise StateError(f"fire instant {t_fire_local} inside the broadcast window")
        session = CaptureSession(self._next_id, mode, t_fire_local, rate_hz,
                                 window, video_duration_ms, single_shot)
        self._next_id += 1
        self.session = session
        self._handles.clear()
        plan = [(window, 0)] if single_shot else countdown_plan(rate_hz, window)
        start_local = t_fire_local - window
        for offset, remaining in plan:
            self._handles.append(self._ctx.call_at_local(
                start_local + offset,
                lambda r=remaining: self._broadcast(session, r)))
        self._handles.append(
            self._ctx.call_at_local(t_fire_local, lambda: self._host_fire(session)))
        return session

    def _broadcast(self, session: CaptureSession, remaining_ms: int) -> None:
        payload = CountdownPayload(session.capture_id, remaining_ms,
                                   int(session.mode), session.video_duration_ms)
        self._ctx.broadcast(encode_message(message(self._sender_id, payload)))

    def _host_fire(self, session: CaptureSession) -> None:
        session.host_fired_at_local = self._ctx.local_time_ms
        self._ctx.log("fire", f"capture_id={session.capture_id} mode={session.mode.name}")
        if self._on_fire is not None:
            self._on_fire(session.capture_id, session.host_fired_at_local)


# --- Monte-Carlo harness ------------------------------------------------------


@dataclass(frozen=True)
class DeviceOutcome:
    fired: bool
    packets_received: int
    fire_global_ms: float | None
    effective_latency_ms: float | None
    min_gt_latency_ms: float | None  # ground truth from the simulator


@dataclass(frozen=True)
class TrialResult:
    seed: int
    loss: float
    rate_hz: float
    single_shot: bool
    t_fire_global: float
    outcomes: dict  # client name -> DeviceOutcome

    @property
    def miss_count(self) -> int:
        return sum(1 for o in self.outcomes.values() if not o.fired)

    @property
    def mean_latency_ms(self) -> float | None:
        fired = [o.effective_latency_ms for o in self.outcomes.values() if o.fired]
        return sum(fired) / len(fired) if fired else None

    @property
    def max_skew_ms(self) -> float | None:
        times = [o.fire_global_ms for o in self.outcomes.values() if o.fired]
        return max(times) - min(times) if times else None


def _latency_cap_ms(dist: LatencyDist) -> float:
    if isinstance(dist, Constant):
        return dist.ms
    if isinstance(dist, Uniform):
        return dist.hi_ms
    if isinstance(dist, Exponential):
        return dist.cap_ms
    raise SyncError(f"unknown latency distribution {dist!r}")


def run_trial(seed: int, *, loss: float = 0.5, rate_hz: float = DEFAULT_RATE_HZ,
              n_clients: int = 1, latency: LatencyDist = Uniform(30, 200),
              clock_offsets: dict | None = None, single_shot: bool = False,
              mode: CaptureMode = CaptureMode.PHOTO, video_duration_ms: int = 0,
              record_trace: bool = False) -> tuple[TrialResult, Simulator]:
    """One countdown over a dedicated host + n clients; returns result and sim.

    Effective latencies are computed in global time, so arbitrary client
    clock offsets must not change them.
    """
    offsets = clock_offsets or {}
    sim = Simulator(NetworkModel(loss, latency, seed), record_trace=record_trace)
    host_ctx = sim.register("host", clock_offset_ms=offsets.get("host", 0.0))
    host = CaptureHost(host_ctx, sender_id=0)

    clients: dict[str, CaptureClient] = {}
    gt_latencies: dict[str, list[float]] = {}

    def make_handler(name: str):
        def handle(ctx: NodeContext, d: Delivery):
            msg = decode_message(d.payload)
            if msg.kind is MessageKind.COUNTDOWN_SIGNAL:
                gt_latencies[name].append(d.latency_ms)
                clients[name].handle_countdown(msg.payload)
        return handle

    for i in range(n_clients):
        name = f"c{i}"
        ctx = sim.register(name, make_handler(name),
                           clock_offset_ms=offsets.get(name, 0.0))
        clients[name] = CaptureClient(ctx)
        gt_latencies[name] = []

    session = host.start_capture(mode, rate_hz=rate_hz,
                                 video_duration_ms=video_duration_ms,
                                 single_shot=single_shot)
    t_fire_global = session.t_fire_host - offsets.get("host", 0.0)
    sim.run_until(t_fire_global + _latency_cap_ms(latency) + 1000.0)

    outcomes = {}
    for name, client in clients.items():
        sched = client.schedule
        off = offsets.get(name, 0.0)
        if sched is not None and sched.fired:
            fire_global = sched.fired_at_local - off
            outcomes[name] = DeviceOutcome(
                True, sched.packets_received, fire_global,
                fire_global - t_fire_global, min(gt_latencies[name]))
        else:
            received = sched.packets_received if sched is not None else 0
            outcomes[name] = DeviceOutcome(False, received, None, None,
                                           min(gt_latencies[name], default=None))
    return TrialResult(seed, loss, rate_hz, single_shot, t_fire_global, outcomes), sim


@dataclass(frozen=True)
class StudyRow:
    seed: int
    miss_count: int
    mean_latency_ms: float | None
    max_skew_ms: float | None


@dataclass(frozen=True)
class StudyResult:
    trials: int
    n_clients: int
    loss: float
    rate_hz: float
    single_shot: bool
    rows: tuple[StudyRow, ...]

    @property
    def total_missed(self) -> int:
        return sum(r.miss_count for r in self.rows)

    @property
    def miss_rate(self) -> float:
        return self.total_missed / (self.trials * self.n_clients)

    @property
    def mean_latency_ms(self) -> float | None:
        vals = [r.mean_latency_ms for r in self.rows if r.mean_latency_ms is not None]
        return sum(vals) / len(vals) if vals else None


def run_study(trials: int, *, seed0: int = 0, loss: float = 0.5,
              rate_hz: float = DEFAULT_RATE_HZ, n_clients: int = 1,
              latency: LatencyDist = Uniform(30, 200),
              single_shot: bool = False) -> StudyResult:
    """Repeat run_trial over consecutive seeds without trace bookkeeping."""
    rows = []
    for k in range(trials):
        result, _ = run_trial(seed0 + k, loss=loss, rate_hz=rate_hz,
                              n_clients=n_clients, latency=latency,
                              single_shot=single_shot)
        rows.append(StudyRow(result.seed, result.miss_count,
                             result.mean_latency_ms, result.max_skew_ms))
    return StudyResult(trials, n_clients, loss, rate_hz, single_shot, tuple(rows))
