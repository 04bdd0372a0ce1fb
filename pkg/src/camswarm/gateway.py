"""Live gateway between a paced scenario run and UI clients.

State flows out as JSON documents: a full snapshot on request (or as the
first frame on a stream connection), then numbered deltas that replace
whole top-level sections.  Replaying deltas over any snapshot therefore
reproduces every later snapshot exactly; clients never merge fields.

Commands flow in over the same socket (or POST /command) and are applied
between simulation steps on the single event loop, so tick order stays
deterministic given command arrival order; each application is logged to
the simulation trace.  The first stream client holds command authority;
later clients observe.

Error codes: `bad_command` (unknown name), `bad_phase` (not legal now),
`bad_args` (malformed values), `not_controller` (observer sent a command).

Pacing: `pace` scales simulated-vs-wall time; pace 0 disables the
background loop so tests (or a patient operator) drive time explicitly
via POST /step {"dt_ms": ...}.
"""

from __future__ import annotations

import asyncio
import json
from contextlib import asynccontextmanager
from typing import Any

from fastapi import FastAPI, WebSocket, WebSocketDisconnect
from fastapi.responses import JSONResponse

from .geometry import GuideBox, ProjectionError, ValidationError, guide_fit
from .playback import (EditTimeline, PlaybackError, View, build_view_graph,
                       export_edl, select_view, serialize_edl)
from .playback import add_transition as timeline_add_transition
from .protocol import CaptureMode
from .scenario import Scenario, ScenarioRun
from .swarm import Phase
from .sync import StateError

PACE_TICK_MS = 50.0  # wall-clock granularity of the paced loop
DEFAULT_VIDEO_MS = 4000


def _round(x: float) -> float:
    return round(float(x), 6)


class Gateway:
    """Owns one ScenarioRun plus the derived UI state (views, timeline)."""

    def __init__(self, scenario: Scenario, *, pace: float = 1.0,
                 seed: int | None = None):
        if pace < 0:
            raise ValueError("pace must be >= 0")
        self.run = ScenarioRun(scenario, seed=seed)
        self.pace = pace
        self.host_id = scenario.host_device()
        self.seq = 0
        self.tilt_deg = 0.0
        self.selected: str | None = None
        self.view_set = None
        self.timeline: EditTimeline | None = None
        self._composed_capture: int | None = None
        self.sections = self._build_sections()
        self._queues: list[asyncio.Queue] = []
        self.controller: asyncio.Queue | None = None

    # -- state documents

    def _host_state(self):
        return self.run.nodes[self.host_id].state

    def _device_doc(self, did: int) -> dict:
        node = self.run.nodes[did]
        dev = self.run.devices[did]
        nst = node.state
        host_members = self._host_state().members
        try:
            # A device dragged (almost) into the target sees corners behind
            # its image plane: no view, rather than a crashed snapshot.
            box = dev.observation().norm_box
        except ProjectionError:
            box = None
        fit = None
        if nst.guide is not None and box is not None:
            f = guide_fit(box, nst.guide)
            fit = {"size_ratio": _round(f.size_ratio),
                   "center_offset": _round(f.center_offset),
                   "satisfied": f.satisfied}
        sched = node.capture_schedule()
        ticks = None
        offset = self.run.offsets[did]
        if sched is not None:
            ticks = {"capture_id": sched.capture_id,
                     "heard_ms": [_round(t - offset) for t in sched.heard_local_ms]}
        display = nst.display_mdeg.get(did)
        fired = nst.fired_at_local_ms
        return {
            "device": did,
            "phase": nst.phase.value,
            "joined": did in host_members,
            "angle_deg": _round(dev.angle_deg),
            "radius_m": _round(dev.radius_m),
            "display_yaw_deg": None if display is None else _round(display / 1000.0),
            "compass": {str(k): _round(v) for k, v in sorted(node.compass().items())},
            "target_box": None if box is None else {
                "cx": _round(box[0]), "cy": _round(box[1]),
                "w": _round(box[2]), "h": _round(box[3])},
            "guide_fit": fit,
            "ticks": ticks,
            "fired_at_ms": None if fired is None else _round(fired - offset),
        }

    def _countdown_doc(self):
        host = self.run.nodes[self.host_id]
        session = self.run.session
        if session is None or self._host_state().phase is not Phase.ARMED:
            return None
        t_fire = session.t_fire_host - self.run.offsets[self.host_id]
        return {
            "capture_id": session.capture_id,
            "mode": "video" if session.mode is CaptureMode.VIDEO else "photo",
            "t_fire_ms": _round(t_fire),
            "remaining_ms": _round(max(0.0, t_fire - self.run.sim.time_ms)),
            "rate_hz": _round(session.rate_hz),
        }

    def _capture_doc(self):
        session = self.run.session
        if session is None or session.host_fired_at_local is None:
            return None
        out = self.run.capture_outcome()
        doc = {
            "mode": out.mode,
            "t_fire_ms": _round(out.t_fire_global_ms),
            "fired": {str(k): _round(v) for k, v in sorted(out.fired_global_ms.items())},
            "missed": [str(d) for d in out.missed],
        }
        if out.fired_global_ms:
            doc["mean_latency_ms"] = _round(out.mean_latency_ms)
            doc["max_skew_ms"] = _round(out.max_skew_ms)
        return doc

    def _browse_doc(self):
        if self.view_set is None:
            return {"views": [], "selected": None, "tilt_deg": _round(self.tilt_deg)}
        views = [{"view": v.view_id, "rel_yaw_deg": _round(v.rel_yaw),
                  "centered_yaw_deg": _round(c), "media": v.media}
                 for v, c in zip(self.view_set.views, self.view_set.centered_yaws)]
        return {"views": views, "selected": self.selected,
                "tilt_deg": _round(self.tilt_deg)}

    def _timeline_doc(self):
        if self.timeline is None:
            return None
        return {
            "duration_ms": _round(self.timeline.duration_ms),
            "initial_view": self.timeline.initial_view,
            "current_view": self.timeline.current_view,
            "transitions": [{"t_ms": _round(t.t_ms), "from": t.from_view,
                             "to": t.to_view}
                            for t in self.timeline.transitions],
        }

    def _size_rsd(self):
        # Undefined while any member has no view of the target: size
        # uniformity over a roster with a blind camera means nothing.
        try:
            return self.run.size_rsd()
        except ProjectionError:
            return None

    def _build_sections(self) -> dict:
        st = self._host_state()
        guide = st.guide
        return {
            "time": {"time_ms": _round(self.run.sim.time_ms),
                     "duration_ms": _round(self.run.scenario.duration_ms)},
            "phase": st.phase.value,
            "membership": {
                "host": self.host_id,
                "swarm_id": None if st.swarm_id is None else f"{st.swarm_id:016x}",
                "members": sorted(st.members),
            },
            "devices": {str(d): self._device_doc(d) for d in sorted(self.run.nodes)},
            "guide_box": None if guide is None else {
                "cx": _round(guide.cx), "cy": _round(guide.cy),
                "w": _round(guide.w), "h": _round(guide.h)},
            "countdown": self._countdown_doc(),
            "capture": self._capture_doc(),
            "browse": self._browse_doc(),
            "timeline": self._timeline_doc(),
            "metrics": {
                "angle_rsd": None if (v := self.run.angle_rsd()) is None else _round(v),
                "size_rsd": None if (v := self._size_rsd()) is None else _round(v),
            },
        }

    def snapshot(self) -> dict:
        return {"type": "snapshot", "seq": self.seq, **self.sections}

    def _refresh(self) -> dict | None:
        """Recompute sections; emit a replacement delta when any changed."""
        self._compose_views_if_done()
        new = self._build_sections()
        changed = {k: v for k, v in new.items() if v != self.sections[k]}
        self.sections = new
        if not changed:
            return None
        self.seq += 1
        return {"type": "delta", "seq": self.seq, "changed": changed}

    def _compose_views_if_done(self) -> None:
        """After a completed capture, build the view set (and, for video,
        the editable timeline) from the host's compass table."""
        session = self.run.session
        if session is None or session.host_fired_at_local is None:
            return
        if self._composed_capture == session.capture_id:
            return
        st = self._host_state()
        if st.phase is not Phase.DONE:
            return
        views = []
        for did in sorted(st.members):
            display = st.display_mdeg.get(did)
            if display is None:
                continue
            views.append(View(str(did), -display / 1000.0, f"view_{did}.mp4"))
        if len(views) < 2:
            return
        self.view_set = build_view_graph(views)
        self.selected = None
        self._composed_capture = session.capture_id
        if session.mode is CaptureMode.VIDEO and session.video_duration_ms > 0:
            # The straight-ahead view opens the cut list.
            initial = select_view(self.view_set, 0.0)
            self.timeline = EditTimeline(float(session.video_duration_ms),
                                         initial, self.view_set.views)

    # -- driving

    def step(self, dt_ms: float) -> dict | None:
        if dt_ms < 0:
            raise ValueError("dt_ms must be >= 0")
        target = min(self.run.sim.time_ms + dt_ms, self.run.scenario.duration_ms)
        self.run.run_to(target)
        return self._refresh()

    # -- commands

    def apply_command(self, cmd: dict) -> tuple[dict, dict | None]:
        """Apply one command; returns (ack, delta or None)."""
        name = cmd.get("cmd")
        args = cmd.get("args", {})
        if not isinstance(args, dict):
            return self._ack(cmd, "bad_args", "args must be an object"), None
        handler = getattr(self, f"_cmd_{name}", None)
        if not isinstance(name, str) or handler is None:
            return self._ack(cmd, "bad_command", f"unknown command {name!r}"), None
        try:
            extra = handler(args) or {}
        except StateError as exc:
            return self._ack(cmd, "bad_phase", str(exc)), None
        except (ValidationError, PlaybackError, KeyError, TypeError, ValueError) as exc:
            return self._ack(cmd, "bad_args", str(exc)), None
        self.run.sim.log("gateway", "command", f"cmd={name} seq={self.seq}")
        delta = self._refresh()
        return self._ack(cmd, "ok", "", **extra), delta

    def _ack(self, cmd: dict, code: str, detail: str, **extra) -> dict:
        ack = {"type": "ack", "id": cmd.get("id"), "code": code,
               "phase": self._host_state().phase.value}
        if detail:
            ack["detail"] = detail
        ack.update(extra)
        return ack

    def _cmd_place_device(self, args: dict):
        did = int(args["device"])
        if did not in self.run.devices:
            raise ValueError(f"unknown device {did}")
        node = self.run.nodes[did]
        if node.state.phase not in (Phase.IDLE, Phase.JOINING, Phase.POSITIONING):
            raise StateError(f"cannot move a device while {node.state.phase.value}")
        dev = self.run.devices[did]
        angle = float(args["angle_deg"])
        radius = float(args["radius_m"])
        if not radius > 0:
            raise ValueError("radius_m must be positive")
        dev.angle_deg = angle
        dev.radius_m = radius

    def _cmd_set_guide_box(self, args: dict):
        box = GuideBox(float(args["cx"]), float(args["cy"]),
                       float(args["w"]), float(args["h"]))
        self.run.nodes[self.host_id].set_guide_box(box)

    def _cmd_arm_capture(self, args: dict):
        mode_name = args.get("mode", "photo")
        if mode_name not in ("photo", "video"):
            raise ValueError(f"mode must be photo or video, got {mode_name!r}")
        mode = CaptureMode.VIDEO if mode_name == "video" else CaptureMode.PHOTO
        video_ms = int(args.get("video_ms", DEFAULT_VIDEO_MS if mode is CaptureMode.VIDEO else 0))
        if mode is CaptureMode.PHOTO and video_ms != 0:
            raise ValueError("photo capture cannot carry a video duration")
        if mode is CaptureMode.VIDEO and video_ms <= 0:
            raise ValueError("video capture needs a positive video_ms")
        session = self.run.nodes[self.host_id].arm_capture(
            mode, rate_hz=float(args.get("rate_hz", 20.0)),
            video_duration_ms=video_ms)
        self.run.session = session

    def _cmd_cancel_capture(self, args: dict):
        self.run.nodes[self.host_id].cancel_capture()

    def _cmd_select_view(self, args: dict):
        if self.view_set is None:
            raise StateError("no captured views to browse yet")
        self.tilt_deg = float(args["tilt_deg"])
        self.selected = select_view(self.view_set, self.tilt_deg)
        return {"selected": self.selected}

    def _cmd_add_transition(self, args: dict):
        if self.timeline is None:
            raise StateError("no editable timeline (complete a video capture first)")
        self.timeline = timeline_add_transition(
            self.timeline, float(args["t_ms"]), str(args["view"]))

    def _cmd_export_edl(self, args: dict):
        if self.timeline is None:
            raise StateError("no editable timeline (complete a video capture first)")
        return {"edl": serialize_edl(export_edl(self.timeline))}

    # -- fan-out

    def attach(self) -> asyncio.Queue:
        q: asyncio.Queue = asyncio.Queue()
        self._queues.append(q)
        if self.controller is None:
            self.controller = q
        return q

    def detach(self, q: asyncio.Queue) -> None:
        if q in self._queues:
            self._queues.remove(q)
        if self.controller is q:
            self.controller = self._queues[0] if self._queues else None

    def broadcast(self, doc: dict) -> None:
        for q in self._queues:
            q.put_nowait(doc)


def create_app(scenario: Scenario, *, pace: float = 1.0,
               seed: int | None = None) -> FastAPI:
    gw = Gateway(scenario, pace=pace, seed=seed)

    async def paced_loop():
        while gw.run.sim.time_ms < gw.run.scenario.duration_ms:
            await asyncio.sleep(PACE_TICK_MS / 1000.0)
            delta = gw.step(PACE_TICK_MS * gw.pace)
            if delta is not None:
                gw.broadcast(delta)

    @asynccontextmanager
    async def lifespan(app: FastAPI):
        pacer = asyncio.create_task(paced_loop()) if gw.pace > 0 else None
        yield
        if pacer is not None:
            pacer.cancel()

    app = FastAPI(title="camswarm gateway", lifespan=lifespan)
    app.state.gateway = gw

    @app.get("/snapshot")
    async def snapshot():
        return JSONResponse(gw.snapshot())

    @app.post("/command")
    async def command(cmd: dict):
        ack, delta = gw.apply_command(cmd)
        if delta is not None:
            gw.broadcast(delta)
        return JSONResponse(ack)

    @app.post("/step")
    async def step(body: dict):
        try:
            dt = float(body.get("dt_ms", PACE_TICK_MS))
            delta = gw.step(dt)
        except (TypeError, ValueError) as exc:
            return JSONResponse({"code": "bad_args", "detail": str(exc)},
                                status_code=400)
        if delta is not None:
            gw.broadcast(delta)
        return JSONResponse({"code": "ok",
                             "time_ms": _round(gw.run.sim.time_ms),
                             "seq": gw.seq})

    @app.websocket("/ws")
    async def ws(sock: WebSocket):
        await sock.accept()
        queue = gw.attach()
        await sock.send_text(json.dumps(gw.snapshot()))

        async def pump():
            while True:
                doc = await queue.get()
                await sock.send_text(json.dumps(doc))

        pump_task = asyncio.create_task(pump())
        try:
            while True:
                raw = await sock.receive_text()
                try:
                    cmd: Any = json.loads(raw)
                except json.JSONDecodeError as exc:
                    await sock.send_text(json.dumps(
                        {"type": "ack", "id": None, "code": "bad_args",
                         "phase": gw.sections["phase"], "detail": str(exc)}))
                    continue
                if not isinstance(cmd, dict):
                    cmd = {}
                if gw.controller is not queue:
                    await sock.send_text(json.dumps(gw._ack(
                        cmd, "not_controller", "another client holds control")))
                    continue
                ack, delta = gw.apply_command(cmd)
                if delta is not None:
                    gw.broadcast(delta)
                await sock.send_text(json.dumps(ack))
        except WebSocketDisconnect:
            pass
        finally:
            pump_task.cancel()
            gw.detach(queue)

    return app
