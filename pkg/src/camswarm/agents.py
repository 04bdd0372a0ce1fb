"""Simulated users holding the phones.

A virtual device sits on a circle around the target at a position bearing
(0 = due north of the target) and points its camera straight back at the
center, so yaw = position + 180 and the angular gaps between devices equal
the gaps between their relative yaws.  The compass sensor adds zero-mean
uniform noise per read (default +-2 deg).

The guided policy is a plain proportional controller standing in for a
human following the on-screen guidance: it equalizes the two adjacent
angular gaps it sees on its own compass (gain 0.5, step-capped, with a
stop tolerance so it does not chase sensor noise) and walks its radius
toward size_ratio 1 against the shared guide box.  Devices at the ends of
the arc have only one adjacent gap and hold position, which keeps the
array from migrating behind the target.  The unguided baseline is placed
once at random and never reads the compass.

The control period is deliberately slower than the orientation round trip
(report up, broadcast down).  A device's own table entry lags its true
pose by that round trip, and stepping faster than the table refreshes
feeds the lag back as velocity (measured both-side gaps shift with the
stale self-entry), which random-walks the formation apart.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass

from .geometry import CameraModel, PlanarTarget, ProjectedTarget, guide_fit, project_target, wrap_angle
from .swarm import Phase, SwarmNode

AGENT_PERIOD_MS = 600.0  # slower than the report/broadcast round trip
GUIDED_GAIN = 0.5
MAX_STEP_DEG = 5.0  # per control tick
GAP_TOLERANCE_DEG = 3.0  # hold position when gaps differ by less
RADIUS_FACTOR_BAND = (0.95, 1.05)  # per control tick
RADIUS_LIMITS_M = (0.5, 20.0)
DEFAULT_NOISE_DEG = 2.0
UNGUIDED_ARC_DEG = 120.0


@dataclass
class VirtualDevice:
    """True pose plus the camera and sensor models hanging off it."""

    device_id: int
    angle_deg: float  # position bearing seen from the target
    radius_m: float
    target: PlanarTarget
    focal_px: float
    width: int
    height: int
    noise_deg: float
    rng: random.Random

    @property
    def true_yaw(self) -> float:
        return (self.angle_deg + 180.0) % 360.0

    def sensor_yaw(self) -> float:
        noise = self.rng.uniform(-self.noise_deg, self.noise_deg)
        return (self.true_yaw + noise) % 360.0

    def camera(self) -> CameraModel:
        a = math.radians(self.angle_deg)
        cx, cy, cz = self.target.center
        pos = (cx + self.radius_m * math.sin(a),
               cy + self.radius_m * math.cos(a), cz)
        return CameraModel(pos, self.true_yaw, self.focal_px, self.width, self.height)

    def observation(self) -> ProjectedTarget:
        return project_target(self.camera(), self.target)


class GuidedPolicy:
    """Follow the compass and guide box; mutates only its own device."""

    kind = "guided"

    def __init__(self, gain: float = GUIDED_GAIN, max_step_deg: float = MAX_STEP_DEG,
                 gap_tolerance_deg: float = GAP_TOLERANCE_DEG):
        self.gain = gain
        self.max_step_deg = max_step_deg
        self.gap_tolerance_deg = gap_tolerance_deg

    def step(self, device: VirtualDevice, node: SwarmNode) -> None:
        if node.state.phase is not Phase.POSITIONING:
            return
        self._step_angle(device, node)
        self._step_radius(device, node)

    def _step_angle(self, device: VirtualDevice, node: SwarmNode) -> None:
        table = node.state.display_mdeg
        me = node.state.device_id
        if me not in table or len(table) < 3:
            return
        rels = sorted((-mdeg / 1000.0, dev) for dev, mdeg in table.items())
        idx = next(i for i, (_, dev) in enumerate(rels) if dev == me)
        if idx == 0 or idx == len(rels) - 1:
            return  # arc end: single adjacent gap, nothing to equalize
        gap_prev = rels[idx][0] - rels[idx - 1][0]
        gap_next = rels[idx + 1][0] - rels[idx][0]
        if abs(gap_next - gap_prev) <= self.gap_tolerance_deg:
            return  # within tolerance: stop, do not chase sensor noise
        delta = self.gain * (gap_next - gap_prev) / 2.0
        delta = max(-self.max_step_deg, min(self.max_step_deg, delta))
        device.angle_deg = wrap_angle(device.angle_deg + delta)

    def _step_radius(self, device: VirtualDevice, node: SwarmNode) -> None:
        guide = node.state.guide
        if guide is None:
            return
        fit = guide_fit(device.observation().norm_box, guide)
        factor = 1.0 + self.gain * (fit.size_ratio - 1.0)
        factor = max(RADIUS_FACTOR_BAND[0], min(RADIUS_FACTOR_BAND[1], factor))
        device.radius_m = max(RADIUS_LIMITS_M[0],
                              min(RADIUS_LIMITS_M[1], device.radius_m * factor))


class UnguidedPolicy:
    """One-time random placement; no feedback afterwards."""

    kind = "unguided"

    def step(self, device: VirtualDevice, node: SwarmNode) -> None:
        return


class StaticPolicy:
    """Holds the scripted pose (protocol-focused scenarios)."""

    kind = "static"

    def step(self, device: VirtualDevice, node: SwarmNode) -> None:
        return


POLICIES = {"guided": GuidedPolicy, "unguided": UnguidedPolicy, "static": StaticPolicy}


def make_policy(kind: str):
    try:
        return POLICIES[kind]()
    except KeyError:
        raise ValueError(f"unknown policy {kind!r} (one of {sorted(POLICIES)})") from None


def step_agent(policy, device: VirtualDevice, node: SwarmNode) -> None:
    policy.step(device, node)


def arc_placement(rng: random.Random, n: int, *, arc_deg: float = UNGUIDED_ARC_DEG,
                  radius_band: tuple[float, float] = (2.5, 3.2)):
    """Initial (angle, radius) per device: each uniform over its own slice
    of the arc around north, in random order.

    One slice per person rather than i.i.d. over the whole arc: separate
    people fan out, and fully independent draws bunch the array often
    enough (mean gap under the compass noise floor in ~8% of draws) that
    no controller could equalize what the sensor cannot resolve.
    """
    slice_deg = arc_deg / n
    slots = list(range(n))
    rng.shuffle(slots)
    return [(-arc_deg / 2.0 + slice_deg * slot + rng.uniform(0.0, slice_deg),
             rng.uniform(*radius_band)) for slot in slots]
