"""Wire protocol: message types, binary codec, and the QR join-payload codec.

Every datagram exchanged between devices is a single frame:

    | Offset | Size | Field                                  |
    |--------|------|----------------------------------------|
    | 0      | 4    | magic ``43 53 57 4D`` ("CSWM")         |
    | 4      | 1    | version, currently 0x01                |
    | 5      | 1    | kind (MessageKind, 1..9)               |
    | 6      | 2    | payload_len, u16                       |
    | 8      | 4    | sender device id, u32                  |
    | 12     | N    | kind-specific payload (N = payload_len)|

All multi-byte integers are big-endian.  Angles travel as i32
milli-degrees; guide-box coordinates as u32 millionths of the viewport.
Every frame fits in 64 bytes so any message survives as one datagram.

Kind-specific payload layouts:

    JoinRequest            swarm_id u64
    JoinAck                swarm_id u64 | status u8
    MemberUpdate           count u8 | count * (device u32)
    OrientationReport      yaw_vs_north i32 (milli-degrees, [0, 360000))
    OrientationBroadcast   count u8 | count * (device u32, display_yaw i32)
    GuideBoxUpdate         cx u32 | cy u32 | w u32 | h u32 (millionths)
    CountdownSignal        capture_id u32 | remaining_ms i32 | mode u8
                           | video_duration_ms u32
    CaptureAck             capture_id u32 | fired_at_local i64 (ms)
    Heartbeat              (empty)

The QR join payload is text, not a frame:

    camswarm://v1?host=<a.b.c.d>:<port>&swarm=<16 hex chars>

All functions here are pure and safe to call from any context.
"""

from __future__ import annotations

import ipaddress
import struct
from dataclasses import dataclass
from enum import IntEnum
from urllib.parse import parse_qsl, urlsplit

MAGIC = b"CSWM"
VERSION = 0x01
HEADER = struct.Struct("!4sBBHI")  # magic, version, kind, payload_len, sender
MAX_FRAME_BYTES = 64

# Countdown signals carry at most the full broadcast window.
COUNTDOWN_WINDOW_MS = 5000

# Entry caps keep the largest frames inside MAX_FRAME_BYTES.
MAX_MEMBERS_PER_UPDATE = 12
MAX_ENTRIES_PER_BROADCAST = 6

_U32_MAX = 0xFFFFFFFF
_U64_MAX = 0xFFFFFFFFFFFFFFFF
_UNIT = 1_000_000  # guide-box coordinate scale


class ProtocolError(Exception):
    """Base for every codec failure."""


class EncodeError(ProtocolError):
    """A field is outside its declared wire range."""


class DecodeError(ProtocolError):
    """Base for failures while decoding a frame."""


class FrameError(DecodeError):
    """Bad magic, bad version, or malformed field content."""


class UnknownKind(DecodeError):
    """The kind byte names no known message."""


class Truncated(DecodeError):
    """The frame ends before its declared payload does."""


class ParseError(ProtocolError):
    """QR payload text rejected; ``reason`` is one of
    "scheme", "version", "address", "swarm"."""

    def __init__(self, reason: str, detail: str = ""):
        self.reason = reason
        super().__init__(f"{reason}: {detail}" if detail else reason)


class MessageKind(IntEnum):
    JOIN_REQUEST = 1
    JOIN_ACK = 2
    MEMBER_UPDATE = 3
    ORIENTATION_REPORT = 4
    ORIENTATION_BROADCAST = 5
    GUIDE_BOX_UPDATE = 6
    COUNTDOWN_SIGNAL = 7
    CAPTURE_ACK = 8
    HEARTBEAT = 9


class CaptureMode(IntEnum):
    PHOTO = 0
    VIDEO = 1


class JoinStatus(IntEnum):
    OK = 0
    SWARM_FULL = 1
    WRONG_SWARM = 2


def to_millideg(degrees: float) -> int:
    """Quantize an angle for the wire (0.001 deg steps)."""
    return round(degrees * 1000)


def from_millideg(mdeg: int) -> float:
    return mdeg / 1000.0


@dataclass(frozen=True)
class JoinRequest:
    swarm_id: int


@dataclass(frozen=True)
class JoinAck:
    swarm_id: int
    status: JoinStatus = JoinStatus.OK


@dataclass(frozen=True)
class MemberUpdate:
    members: tuple[int, ...]


@dataclass(frozen=True)
class OrientationReport:
    yaw_mdeg: int  # yaw vs magnetic north, milli-degrees in [0, 360000)


@dataclass(frozen=True)
class OrientationBroadcast:
    # (device id, display yaw in milli-degrees); display yaw is the
    # negated relative yaw, in (-180000, 180000].
    entries: tuple[tuple[int, int], ...]


@dataclass(frozen=True)
class GuideBoxUpdate:
    cx_u: int
    cy_u: int
    w_u: int
    h_u: int

    @classmethod
    def from_unit(cls, cx: float, cy: float, w: float, h: float) -> "GuideBoxUpdate":
        """Quantize normalized viewport coordinates to wire units."""
        return cls(round(cx * _UNIT), round(cy * _UNIT), round(w * _UNIT), round(h * _UNIT))

    def to_unit(self) -> tuple[float, float, float, float]:
        return (self.cx_u / _UNIT, self.cy_u / _UNIT, self.w_u / _UNIT, self.h_u / _UNIT)


@dataclass(frozen=True)
class CountdownPayload:
    capture_id: int
    remaining_ms: int  # ms until the scheduled fire, at send instant
    mode: CaptureMode = CaptureMode.PHOTO
    video_duration_ms: int = 0


@dataclass(frozen=True)
class CaptureAck:
    capture_id: int
    fired_at_local: int  # device-local ms


@dataclass(frozen=True)
class Heartbeat:
    pass


Payload = (
    JoinRequest
    | JoinAck
    | MemberUpdate
    | OrientationReport
    | OrientationBroadcast
    | GuideBoxUpdate
    | CountdownPayload
    | CaptureAck
    | Heartbeat
)

_KIND_OF_PAYLOAD = {
    JoinRequest: MessageKind.JOIN_REQUEST,
    JoinAck: MessageKind.JOIN_ACK,
    MemberUpdate: MessageKind.MEMBER_UPDATE,
    OrientationReport: MessageKind.ORIENTATION_REPORT,
    OrientationBroadcast: MessageKind.ORIENTATION_BROADCAST,
    GuideBoxUpdate: MessageKind.GUIDE_BOX_UPDATE,
    CountdownPayload: MessageKind.COUNTDOWN_SIGNAL,
    CaptureAck: MessageKind.CAPTURE_ACK,
    Heartbeat: MessageKind.HEARTBEAT,
}


@dataclass(frozen=True)
class Message:
    kind: MessageKind
    sender: int  # device id, u32
    payload: Payload


def message(sender: int, payload: Payload) -> Message:
    """Build a Message with the kind implied by the payload type."""
    return Message(_KIND_OF_PAYLOAD[type(payload)], sender, payload)


def _check(cond: bool, what: str) -> None:
    if not cond:
        raise EncodeError(what)


def _check_u32(value: int, what: str) -> None:
    _check(0 <= value <= _U32_MAX, f"{what} out of u32 range: {value}")


def _encode_payload(msg: Message) -> bytes:
    p = msg.payload
    if isinstance(p, JoinRequest):
        _check(0 < p.swarm_id <= _U64_MAX, f"swarm_id out of range: {p.swarm_id}")
        return struct.pack("!Q", p.swarm_id)
    if isinstance(p, JoinAck):
        _check(0 < p.swarm_id <= _U64_MAX, f"swarm_id out of range: {p.swarm_id}")
        return struct.pack("!QB", p.swarm_id, JoinStatus(p.status))
    if isinstance(p, MemberUpdate):
        _check(len(p.members) <= MAX_MEMBERS_PER_UPDATE,
               f"too many members for one frame: {len(p.members)}")
        for m in p.members:
            _check_u32(m, "member id")
        return struct.pack(f"!B{len(p.members)}I", len(p.members), *p.members)
    if isinstance(p, OrientationReport):
        _check(0 <= p.yaw_mdeg < 360_000, f"yaw_mdeg out of range: {p.yaw_mdeg}")
        return struct.pack("!i", p.yaw_mdeg)
    if isinstance(p, OrientationBroadcast):
        _check(len(p.entries) <= MAX_ENTRIES_PER_BROADCAST,
               f"too many entries for one frame: {len(p.entries)}")
        out = [struct.pack("!B", len(p.entries))]
        for device, display_mdeg in p.entries:
            _check_u32(device, "device id")
            _check(-180_000 < display_mdeg <= 180_000,
                   f"display yaw out of range: {display_mdeg}")
            out.append(struct.pack("!Ii", device, display_mdeg))
        return b"".join(out)
    if isinstance(p, GuideBoxUpdate):
        for v, name in ((p.cx_u, "cx"), (p.cy_u, "cy"), (p.w_u, "w"), (p.h_u, "h")):
            _check(0 <= v <= _UNIT, f"guide box {name} out of range: {v}")
        _check(p.w_u > 0 and p.h_u > 0, "guide box has empty extent")
        _check(2 * p.cx_u - p.w_u >= 0 and 2 * p.cx_u + p.w_u <= 2 * _UNIT
               and 2 * p.cy_u - p.h_u >= 0 and 2 * p.cy_u + p.h_u <= 2 * _UNIT,
               "guide box exceeds the unit viewport")
        return struct.pack("!4I", p.cx_u, p.cy_u, p.w_u, p.h_u)
    if isinstance(p, CountdownPayload):
        _check_u32(p.capture_id, "capture_id")
        _check(0 <= p.remaining_ms <= COUNTDOWN_WINDOW_MS,
               f"remaining_ms out of range: {p.remaining_ms}")
        _check_u32(p.video_duration_ms, "video_duration_ms")
        mode = CaptureMode(p.mode)
        _check(mode is not CaptureMode.PHOTO or p.video_duration_ms == 0,
               "photo capture with nonzero video duration")
        return struct.pack("!IiBI", p.capture_id, p.remaining_ms, mode, p.video_duration_ms)
    if isinstance(p, CaptureAck):
        _check_u32(p.capture_id, "capture_id")
        return struct.pack("!Iq", p.capture_id, p.fired_at_local)
    if isinstance(p, Heartbeat):
        return b""
    raise EncodeError(f"unsupported payload type: {type(p).__name__}")


def encode_message(msg: Message) -> bytes:
    """Encode a message as one wire frame (at most MAX_FRAME_BYTES)."""
    kind = MessageKind(msg.kind)
    if kind is not _KIND_OF_PAYLOAD[type(msg.payload)]:
        raise EncodeError(f"kind {kind.name} does not match payload "
                          f"{type(msg.payload).__name__}")
    _check_u32(msg.sender, "sender")
    payload = _encode_payload(msg)
    frame = HEADER.pack(MAGIC, VERSION, kind, len(payload), msg.sender) + payload
    assert len(frame) <= MAX_FRAME_BYTES
    return frame


class _Reader:
    """Cursor over a payload; raises Truncated instead of running off the end."""

    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, fmt: str) -> tuple:
        s = struct.Struct(fmt)
        if self.pos + s.size > len(self.data):
            raise Truncated("payload ends mid-field")
        out = s.unpack_from(self.data, self.pos)
        self.pos += s.size
        return out

    def done(self) -> None:
        if self.pos != len(self.data):
            raise FrameError("trailing bytes after payload")


def _decode_payload(kind: MessageKind, r: _Reader) -> Payload:
    if kind is MessageKind.JOIN_REQUEST:
        (swarm_id,) = r.take("!Q")
        if swarm_id == 0:
            raise FrameError("zero swarm_id")
        return JoinRequest(swarm_id)
    if kind is MessageKind.JOIN_ACK:
        swarm_id, status = r.take("!QB")
        if swarm_id == 0:
            raise FrameError("zero swarm_id")
        try:
            return JoinAck(swarm_id, JoinStatus(status))
        except ValueError:
            raise FrameError(f"unknown join status {status}") from None
    if kind is MessageKind.MEMBER_UPDATE:
        (count,) = r.take("!B")
        if count > MAX_MEMBERS_PER_UPDATE:
            raise FrameError(f"member count {count} exceeds frame cap")
        return MemberUpdate(r.take(f"!{count}I"))
    if kind is MessageKind.ORIENTATION_REPORT:
        (yaw,) = r.take("!i")
        if not 0 <= yaw < 360_000:
            raise FrameError(f"yaw_mdeg out of range: {yaw}")
        return OrientationReport(yaw)
    if kind is MessageKind.ORIENTATION_BROADCAST:
        (count,) = r.take("!B")
        if count > MAX_ENTRIES_PER_BROADCAST:
            raise FrameError(f"entry count {count} exceeds frame cap")
        entries = []
        for _ in range(count):
            device, display = r.take("!Ii")
            if not -180_000 < display <= 180_000:
                raise FrameError(f"display yaw out of range: {display}")
            entries.append((device, display))
        return OrientationBroadcast(tuple(entries))
    if kind is MessageKind.GUIDE_BOX_UPDATE:
        cx, cy, w, h = r.take("!4I")
        box = GuideBoxUpdate(cx, cy, w, h)
        if not (w > 0 and h > 0 and 2 * cx - w >= 0 and 2 * cx + w <= 2 * _UNIT
                and 2 * cy - h >= 0 and 2 * cy + h <= 2 * _UNIT):
            raise FrameError("guide box outside the unit viewport")
        return box
    if kind is MessageKind.COUNTDOWN_SIGNAL:
        capture_id, remaining, mode, duration = r.take("!IiBI")
        if not 0 <= remaining <= COUNTDOWN_WINDOW_MS:
            raise FrameError(f"remaining_ms out of range: {remaining}")
        try:
            mode = CaptureMode(mode)
        except ValueError:
            raise FrameError(f"unknown capture mode {mode}") from None
        if mode is CaptureMode.PHOTO and duration != 0:
            raise FrameError("photo capture with nonzero video duration")
        return CountdownPayload(capture_id, remaining, mode, duration)
    if kind is MessageKind.CAPTURE_ACK:
        capture_id, fired_at = r.take("!Iq")
        return CaptureAck(capture_id, fired_at)
    if kind is MessageKind.HEARTBEAT:
        return Heartbeat()
    raise UnknownKind(f"kind {int(kind)}")


def decode_message(data: bytes) -> Message:
    """Decode one wire frame; inverse of encode_message on valid frames."""
    if len(data) < HEADER.size:
        raise Truncated(f"frame shorter than header: {len(data)} bytes")
    magic, version, kind_byte, payload_len, sender = HEADER.unpack_from(data)
    if magic != MAGIC:
        raise FrameError(f"bad magic {magic!r}")
    if version != VERSION:
        raise FrameError(f"unsupported version {version:#04x}")
    try:
        kind = MessageKind(kind_byte)
    except ValueError:
        raise UnknownKind(f"kind byte {kind_byte:#04x}") from None
    if len(data) < HEADER.size + payload_len:
        raise Truncated(f"payload declares {payload_len} bytes, "
                        f"frame carries {len(data) - HEADER.size}")
    if len(data) > HEADER.size + payload_len:
        raise FrameError("frame longer than declared")
    reader = _Reader(data[HEADER.size:])
    payload = _decode_payload(kind, reader)
    reader.done()
    return Message(kind, sender, payload)


# --- QR join payload -------------------------------------------------------

QR_SCHEME = "camswarm"
QR_VERSION = "v1"


@dataclass(frozen=True)
class QrPayload:
    host_ip: str  # dotted-quad IPv4
    port: int
    swarm_id: int  # nonzero, u64


def _validate_qr(payload: QrPayload) -> None:
    try:
        ipaddress.IPv4Address(payload.host_ip)
    except (ValueError, TypeError):
        raise ParseError("address", f"not an IPv4 address: {payload.host_ip!r}") from None
    if not 1 <= payload.port <= 65535:
        raise ParseError("address", f"port out of range: {payload.port}")
    if not 0 < payload.swarm_id <= _U64_MAX:
        raise ParseError("swarm", f"swarm id out of range: {payload.swarm_id:#x}")


def encode_qr(payload: QrPayload) -> str:
    """Render the QR payload text shown on screen for others to scan."""
    _validate_qr(payload)
    return (f"{QR_SCHEME}://{QR_VERSION}"
            f"?host={payload.host_ip}:{payload.port}&swarm={payload.swarm_id:016x}")


def decode_qr(text: str) -> QrPayload:
    """Parse scanned QR text; rejects foreign schemes and malformed fields."""
    parts = urlsplit(text)
    if parts.scheme != QR_SCHEME:
        raise ParseError("scheme", parts.scheme or "missing")
    if parts.netloc != QR_VERSION:
        raise ParseError("version", parts.netloc or "missing")
    params = dict(parse_qsl(parts.query, keep_blank_values=True))
    host = params.get("host")
    if host is None or ":" not in host:
        raise ParseError("address", "missing host=<ip>:<port>")
    ip, _, port_text = host.rpartition(":")
    try:
        ipaddress.IPv4Address(ip)
        port = int(port_text)
    except ValueError:
        raise ParseError("address", host) from None
    if not 1 <= port <= 65535:
        raise ParseError("address", f"port out of range: {port}")
    swarm_text = params.get("swarm")
    if swarm_text is None:
        raise ParseError("swarm", "missing swarm parameter")
    if len(swarm_text) != 16:
        raise ParseError("swarm", f"need 16 hex chars, got {len(swarm_text)}")
    try:
        swarm_id = int(swarm_text, 16)
    except ValueError:
        raise ParseError("swarm", swarm_text) from None
    if swarm_id == 0:
        raise ParseError("swarm", "zero swarm id")
    return QrPayload(ip, port, swarm_id)
