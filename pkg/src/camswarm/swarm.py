"""Per-device swarm node: hosting, QR joining, membership, orientation loop.

Topology is a star around the host ("server program" on one of the
phones).  Members report their compass yaw to the host at 10 Hz; the host
derives each device's relative yaw against its own, negates it for
display, and broadcasts the table back (chunked to fit the frame cap),
together with the member list and the current guide box, if any.  Losing
any one frame therefore costs at most one refresh period, never a piece
of state.  Heartbeats run at 1 Hz and a member silent for 3 s is
evicted.  All of these rates are package conventions, not wire
requirements.

Display yaws live as wire milli-degrees in every table here, so compass
bearings come out of integer arithmetic and any two devices' readings of
each other sum to exactly 360000 (mod 360000).  Conversion to float
degrees happens only at presentation edges.

Join handshake: JoinRequest is retransmitted every 500 ms up to 5
attempts.  The ack completes the join, but so does any member-list
broadcast naming the joiner, since the host only lists devices it has
admitted; with the roster refreshing at 10 Hz, a join fails outright only
when all 5 requests are lost (p^5) or every return frame inside the retry
window drops.

Simulated addressing: device id n listens at 10.0.(n>>8).(n&255):7000,
which keeps QR payloads resolvable without a name service.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from enum import Enum

from .geometry import GuideBox
from .netsim import Delivery, NodeContext, Simulator
from .protocol import (
    CaptureAck,
    CaptureMode,
    CountdownPayload,
    GuideBoxUpdate,
    Heartbeat,
    JoinAck,
    JoinRequest,
    JoinStatus,
    MAX_ENTRIES_PER_BROADCAST,
    MAX_MEMBERS_PER_UPDATE,
    MemberUpdate,
    Message,
    MessageKind,
    OrientationBroadcast,
    OrientationReport,
    ProtocolError,
    QrPayload,
    decode_message,
    encode_message,
    message,
    to_millideg,
)
from .sync import (CaptureClient, CaptureHost, CaptureSchedule, CaptureSession,
                   StateError)

ORIENTATION_PERIOD_MS = 100.0  # 10 Hz
HEARTBEAT_PERIOD_MS = 1000.0  # 1 Hz
EVICTION_SILENCE_MS = 3000.0
JOIN_RETRY_MS = 500.0
JOIN_ATTEMPTS = 5
SWARM_PORT = 7000
MAX_SWARM_SIZE = MAX_MEMBERS_PER_UPDATE


class SwarmError(Exception):
    pass


class JoinFailed(SwarmError):
    pass


class Role(Enum):
    HOST = "host"
    MEMBER = "member"


class Phase(Enum):
    IDLE = "idle"
    JOINING = "joining"
    POSITIONING = "positioning"
    ARMED = "armed"
    CAPTURING = "capturing"
    DONE = "done"


def device_address(device_id: int) -> tuple[str, int]:
    if not 0 < device_id < 65536:
        raise SwarmError(f"simulated device id {device_id} outside 1..65535")
    return f"10.0.{(device_id >> 8) & 0xFF}.{device_id & 0xFF}", SWARM_PORT


def address_to_device(host_ip: str, port: int) -> int:
    parts = host_ip.split(".")
    if len(parts) != 4 or parts[:2] != ["10", "0"] or port != SWARM_PORT:
        raise SwarmError(f"unresolvable simulated address {host_ip}:{port}")
    return (int(parts[2]) << 8) | int(parts[3])


def wrap_mdeg(x: int) -> int:
    """Wrap integer milli-degrees to (-180000, 180000]."""
    r = x % 360_000
    return r - 360_000 if r > 180_000 else r


def bearing_mdeg(display_table: dict, self_id: int, other_id: int) -> int:
    """Compass bearing of `other` on `self`'s screen, in [0, 360000).

    Self is pinned at the south end (180 deg); integer arithmetic keeps
    bearing(i of j) + bearing(j of i) = 0 (mod 360000) exact.
    """
    return (180_000 + display_table[other_id] - display_table[self_id]) % 360_000


@dataclass
class MemberInfo:
    device: int
    last_seen_ms: float
    yaw_mdeg: int | None = None  # host-side: last reported sensor yaw


@dataclass
class DeviceState:
    device_id: int
    role: Role | None = None
    phase: Phase = Phase.IDLE
    swarm_id: int | None = None
    host_id: int | None = None
    qr: QrPayload | None = None
    members: dict = field(default_factory=dict)  # device_id -> MemberInfo
    display_mdeg: dict = field(default_factory=dict)  # device_id -> display yaw
    guide: GuideBox | None = None
    join_error: str | None = None
    fired_at_local_ms: float | None = None
    capture_acks: dict = field(default_factory=dict)  # host-side: id -> local ms

    def member_ids(self) -> frozenset:
        return frozenset(self.members)


class SwarmNode:
    """One simulated phone. Registers itself on the simulator as str(id)."""

    def __init__(self, sim: Simulator, device_id: int, *, sensor=None,
                 clock_offset_ms: float = 0.0, rng: random.Random | None = None):
        self.state = DeviceState(device_id)
        self._sensor = sensor if sensor is not None else lambda: 0.0
        self._rng = rng if rng is not None else random.Random(device_id)
        self.ctx: NodeContext = sim.register(str(device_id), self._on_delivery,
                                             clock_offset_ms=clock_offset_ms)
        self._capture_host: CaptureHost | None = None
        self._capture_client = CaptureClient(self.ctx, on_fire=self._member_fired)
        self._join_attempts = 0
        self._join_target: QrPayload | None = None

    # -- formation

    def host_swarm(self) -> QrPayload:
        st = self.state
        if st.phase is not Phase.IDLE:
            raise StateError(f"cannot host while {st.phase.value}")
        # Device id in the top half, random nonce below: two devices can
        # never mint the same swarm id even from identical rng streams.
        swarm_id = ((st.device_id & 0xFFFFFFFF) << 32) | self._rng.getrandbits(32)
        ip, port = device_address(st.device_id)
        st.role = Role.HOST
        st.phase = Phase.POSITIONING
        st.swarm_id = swarm_id
        st.host_id = st.device_id
        st.qr = QrPayload(ip, port, swarm_id)
        st.members = {st.device_id: MemberInfo(st.device_id, self.ctx.time_ms,
                                               to_millideg(self._sensor()) % 360_000)}
        st.display_mdeg = {st.device_id: 0}
        self._capture_host = CaptureHost(self.ctx, st.device_id,
                                         on_fire=self._host_fired)
        self.ctx.log("host_swarm", f"swarm_id={swarm_id:016x}")
        self._schedule_tick()
        return st.qr

    def join_swarm(self, qr: QrPayload) -> None:
        st = self.state
        if st.phase is not Phase.IDLE:
            raise StateError(f"cannot join while {st.phase.value}")
        host_id = address_to_device(qr.host_ip, qr.port)
        st.host_id = host_id
        st.phase = Phase.JOINING
        st.join_error = None
        self._join_target = qr
        self._join_attempts = 0
        self._send_join()

    def _send_join(self) -> None:
        st = self.state
        if st.phase is not Phase.JOINING:
            return
        if self._join_attempts >= JOIN_ATTEMPTS:
            st.phase = Phase.IDLE
            st.join_error = "timeout"
            self.ctx.log("join_failed", f"attempts={JOIN_ATTEMPTS}")
            return
        self._join_attempts += 1
        self.ctx.log("join_attempt", f"n={self._join_attempts}")
        self._unicast(st.host_id, JoinRequest(self._join_target.swarm_id))
        self.ctx.call_after(JOIN_RETRY_MS, self._send_join)

    # -- guidance

    def set_guide_box(self, box: GuideBox) -> None:
        st = self.state
        if st.phase is not Phase.POSITIONING:
            raise StateError(f"cannot set guide box while {st.phase.value}")
        update = GuideBoxUpdate.from_unit(box.cx, box.cy, box.w, box.h)
        if st.role is Role.HOST:
            self._adopt_and_publish_guide(update)
        else:
            self._unicast(st.host_id, update)

    def _adopt_and_publish_guide(self, update: GuideBoxUpdate) -> None:
        self.state.guide = GuideBox(*update.to_unit())
        self.ctx.log("guide_box", f"cx={update.cx_u} cy={update.cy_u}")
        self._broadcast_guide()

    def _broadcast_guide(self) -> None:
        st = self.state
        update = GuideBoxUpdate.from_unit(st.guide.cx, st.guide.cy,
                                          st.guide.w, st.guide.h)
        self.ctx.broadcast(encode_message(message(st.device_id, update)))

    # -- capture

    def arm_capture(self, mode: CaptureMode = CaptureMode.PHOTO, *,
                    rate_hz: float = 20.0, video_duration_ms: int = 0,
                    single_shot: bool = False) -> CaptureSession:
        st = self.state
        if st.role is not Role.HOST:
            raise StateError("only the host can arm a capture")
        if st.phase not in (Phase.POSITIONING, Phase.ARMED):
            raise StateError(f"cannot arm while {st.phase.value}")
        self._evict_stale()
        session = self._capture_host.start_capture(
            mode, rate_hz=rate_hz, video_duration_ms=video_duration_ms,
            single_shot=single_shot)
        st.phase = Phase.ARMED
        return session

    def cancel_capture(self) -> None:
        st = self.state
        if st.role is not Role.HOST or st.phase is not Phase.ARMED:
            raise StateError("no armed capture to cancel")
        self._capture_host.cancel()
        st.phase = Phase.POSITIONING
        self.ctx.log("capture_cancelled", "")

    def capture_schedule(self) -> CaptureSchedule | None:
        """This member's countdown bookkeeping (None on the host, which
        sends the packets rather than hearing them)."""
        return self._capture_client.schedule

    def _host_fired(self, capture_id: int, fired_at_local: float) -> None:
        st = self.state
        st.fired_at_local_ms = fired_at_local
        st.capture_acks[st.device_id] = round(fired_at_local)
        self._finish_capture(self._capture_host.session.mode,
                             self._capture_host.session.video_duration_ms)

    def _member_fired(self, capture_id: int, fired_at_local: float) -> None:
        st = self.state
        st.fired_at_local_ms = fired_at_local
        self._unicast(st.host_id, CaptureAck(capture_id, round(fired_at_local)))
        self._finish_capture(self._capture_client.mode,
                             self._capture_client.video_duration_ms)

    def _finish_capture(self, mode: CaptureMode, video_duration_ms: int) -> None:
        st = self.state
        st.phase = Phase.CAPTURING
        if mode is CaptureMode.VIDEO and video_duration_ms > 0:
            self.ctx.call_after(video_duration_ms, self._capture_done)
        else:
            self._capture_done()

    def _capture_done(self) -> None:
        self.state.phase = Phase.DONE
        self.ctx.log("capture_done", "")

    # -- presentation

    def compass(self) -> dict:
        """Screen bearings in degrees for every device on the table."""
        table = self.state.display_mdeg
        me = self.state.device_id
        if me not in table:
            return {}
        return {dev: bearing_mdeg(table, me, dev) / 1000.0 for dev in table}

    def rel_yaw_deg(self) -> float | None:
        mine = self.state.display_mdeg.get(self.state.device_id)
        return None if mine is None else -mine / 1000.0

    # -- periodic work

    def _schedule_tick(self) -> None:
        self.ctx.call_after(ORIENTATION_PERIOD_MS, self._tick)
        self._hb_countdown = 0

    def _tick(self) -> None:
        st = self.state
        if st.phase in (Phase.CAPTURING, Phase.DONE, Phase.IDLE):
            return
        if st.phase in (Phase.POSITIONING, Phase.ARMED):
            if st.role is Role.HOST:
                self._host_tick()
            else:
                self._member_tick()
        self.ctx.call_after(ORIENTATION_PERIOD_MS, self._tick)

    def _host_tick(self) -> None:
        st = self.state
        me = st.members[st.device_id]
        me.yaw_mdeg = to_millideg(self._sensor()) % 360_000
        me.last_seen_ms = self.ctx.local_time_ms
        self._evict_stale()
        self._broadcast_members()
        self._broadcast_orientation()
        # The guide box rides the same refresh loop as membership and
        # orientation: a member that misses the frame announcing it (or that
        # joins afterwards) picks it up on the next tick instead of never.
        if self.state.guide is not None:
            self._broadcast_guide()

    def _member_tick(self) -> None:
        st = self.state
        yaw = to_millideg(self._sensor()) % 360_000
        self._unicast(st.host_id, OrientationReport(yaw))
        self._hb_countdown -= 1
        if self._hb_countdown <= 0:
            self._unicast(st.host_id, Heartbeat())
            self._hb_countdown = round(HEARTBEAT_PERIOD_MS / ORIENTATION_PERIOD_MS)

    def _evict_stale(self) -> None:
        st = self.state
        now = self.ctx.local_time_ms
        for dev in [d for d, m in st.members.items()
                    if d != st.device_id
                    and now - m.last_seen_ms > EVICTION_SILENCE_MS]:
            del st.members[dev]
            st.display_mdeg.pop(dev, None)
            self.ctx.log("evict", f"device={dev}")

    def _broadcast_members(self) -> None:
        st = self.state
        ids = tuple(sorted(st.members))
        self.ctx.broadcast(encode_message(message(st.device_id, MemberUpdate(ids))))

    def _broadcast_orientation(self) -> None:
        st = self.state
        host_yaw = st.members[st.device_id].yaw_mdeg
        entries = []
        for dev in sorted(st.members):
            yaw = st.members[dev].yaw_mdeg
            if yaw is None:
                continue
            rel = wrap_mdeg(yaw - host_yaw)
            entries.append((dev, wrap_mdeg(-rel)))
        st.display_mdeg = dict(entries)
        for i in range(0, len(entries), MAX_ENTRIES_PER_BROADCAST):
            chunk = tuple(entries[i:i + MAX_ENTRIES_PER_BROADCAST])
            self.ctx.broadcast(encode_message(
                message(st.device_id, OrientationBroadcast(chunk))))

    # -- inbound

    def _unicast(self, device_id: int, payload) -> None:
        self.ctx.send(str(device_id), encode_message(
            message(self.state.device_id, payload)))

    def _on_delivery(self, ctx: NodeContext, d: Delivery) -> None:
        msg = decode_message(d.payload)
        handler = {
            MessageKind.JOIN_REQUEST: self._on_join_request,
            MessageKind.JOIN_ACK: self._on_join_ack,
            MessageKind.MEMBER_UPDATE: self._on_member_update,
            MessageKind.ORIENTATION_REPORT: self._on_orientation_report,
            MessageKind.ORIENTATION_BROADCAST: self._on_orientation_broadcast,
            MessageKind.GUIDE_BOX_UPDATE: self._on_guide_box,
            MessageKind.COUNTDOWN_SIGNAL: self._on_countdown,
            MessageKind.CAPTURE_ACK: self._on_capture_ack,
            MessageKind.HEARTBEAT: self._on_heartbeat,
        }[msg.kind]
        handler(msg)

    def _on_join_request(self, msg: Message) -> None:
        st = self.state
        if st.role is not Role.HOST or st.phase in (Phase.IDLE, Phase.DONE):
            return
        if msg.payload.swarm_id != st.swarm_id:
            self._unicast(msg.sender, JoinAck(st.swarm_id, JoinStatus.WRONG_SWARM))
            return
        if msg.sender not in st.members and len(st.members) >= MAX_SWARM_SIZE:
            self._unicast(msg.sender, JoinAck(st.swarm_id, JoinStatus.SWARM_FULL))
            return
        known = msg.sender in st.members
        st.members.setdefault(msg.sender, MemberInfo(msg.sender, self.ctx.local_time_ms))
        st.members[msg.sender].last_seen_ms = self.ctx.local_time_ms
        self._unicast(msg.sender, JoinAck(st.swarm_id, JoinStatus.OK))
        if not known:
            self.ctx.log("member_joined", f"device={msg.sender}")
            self._broadcast_members()

    def _on_join_ack(self, msg: Message) -> None:
        st = self.state
        if st.phase is not Phase.JOINING:
            return  # duplicate ack after a retransmitted request
        ack: JoinAck = msg.payload
        if ack.status is not JoinStatus.OK:
            st.phase = Phase.IDLE
            st.join_error = ack.status.name.lower()
            self.ctx.log("join_failed", f"status={ack.status.name}")
            return
        if ack.swarm_id != self._join_target.swarm_id:
            raise ProtocolError(
                f"ack for swarm {ack.swarm_id:016x}, "
                f"requested {self._join_target.swarm_id:016x}")
        self._complete_join()

    def _complete_join(self) -> None:
        st = self.state
        st.role = Role.MEMBER
        st.phase = Phase.POSITIONING
        st.swarm_id = self._join_target.swarm_id
        st.qr = self._join_target  # propagated: the joiner shows the same code
        st.members = {
            st.device_id: MemberInfo(st.device_id, self.ctx.local_time_ms),
            st.host_id: MemberInfo(st.host_id, self.ctx.local_time_ms),
        }
        self.ctx.log("joined", f"swarm_id={st.swarm_id:016x}")
        self._schedule_tick()

    def _on_member_update(self, msg: Message) -> None:
        st = self.state
        if (st.phase is Phase.JOINING and msg.sender == st.host_id
                and st.device_id in msg.payload.members):
            # The roster is host-authored admission state: the host only
            # lists a device after accepting its request, so seeing yourself
            # in it settles the join even when every ack was lost.
            self._complete_join()
        if st.role is not Role.MEMBER or st.phase in (Phase.IDLE, Phase.JOINING):
            return
        if msg.sender != st.host_id:
            return
        now = self.ctx.local_time_ms
        fresh = {}
        for dev in msg.payload.members:
            info = st.members.get(dev) or MemberInfo(dev, now)
            info.last_seen_ms = now
            fresh[dev] = info
        fresh.setdefault(st.device_id,
                         st.members.get(st.device_id) or MemberInfo(st.device_id, now))
        st.members = fresh
        for dev in list(st.display_mdeg):
            if dev not in fresh:
                del st.display_mdeg[dev]

    def _on_orientation_report(self, msg: Message) -> None:
        st = self.state
        if st.role is not Role.HOST or st.phase not in (Phase.POSITIONING, Phase.ARMED):
            return
        if msg.sender not in st.members:
            return  # not joined (or evicted): reports do not re-admit
        info = st.members[msg.sender]
        info.yaw_mdeg = msg.payload.yaw_mdeg
        info.last_seen_ms = self.ctx.local_time_ms
        self._broadcast_orientation()

    def _on_orientation_broadcast(self, msg: Message) -> None:
        st = self.state
        if st.role is not Role.MEMBER or msg.sender != st.host_id:
            return
        for dev, display in msg.payload.entries:
            st.display_mdeg[dev] = display

    def _on_guide_box(self, msg: Message) -> None:
        st = self.state
        if st.role is Role.HOST:
            # Any member may propose; receipt order at the host decides.
            self._adopt_and_publish_guide(msg.payload)
        elif msg.sender == st.host_id:
            st.guide = GuideBox(*msg.payload.to_unit())

    def _on_countdown(self, msg: Message) -> None:
        st = self.state
        if st.role is not Role.MEMBER or st.phase not in (Phase.POSITIONING,
                                                          Phase.ARMED):
            return
        payload: CountdownPayload = msg.payload
        if st.phase is Phase.POSITIONING:
            st.phase = Phase.ARMED
        self._capture_client.handle_countdown(payload)

    def _on_capture_ack(self, msg: Message) -> None:
        st = self.state
        if st.role is Role.HOST:
            st.capture_acks[msg.sender] = msg.payload.fired_at_local

    def _on_heartbeat(self, msg: Message) -> None:
        st = self.state
        if st.role is Role.HOST and msg.sender in st.members:
            st.members[msg.sender].last_seen_ms = self.ctx.local_time_ms
