"""Post-capture browsing and bullet-time composition.

Views are the per-device clips of one synchronized capture.  Browsing
centers the relative yaws at zero (circular mean, so wrap-around arrays
behave), sorts them, and partitions the tilt axis at midpoints between
adjacent views; tilting the phone then selects the view whose cell
contains the tilt delta.  Composition is a single shared timeline over
the synchronized clips: an ordered chain of view transitions exported as
a render plan (EDL) for an external interpolation backend.

EDL text format (normative for the UI and renderer):

    duration <ms>
    view <id> <rel_yaw> <media ref, may contain spaces>
    <view_id> <t_start> <t_end>          one line per segment
    transition <t> <from> <to> interpolated

View ids must not contain whitespace or collide with the keywords
`duration`, `view`, `transition`.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

from .geometry import circular_mean, wrap_angle


class PlaybackError(Exception):
    pass


class InsufficientViews(PlaybackError):
    pass


class DuplicateView(PlaybackError):
    pass


class OrderError(PlaybackError):
    """Transition time not strictly after the previous one, or outside (0, duration)."""


class NoopError(PlaybackError):
    """Transition to the view that is already current."""


class UnknownView(PlaybackError):
    pass


class EdlError(PlaybackError):
    """Malformed or inconsistent render plan / EDL text."""


_KEYWORDS = frozenset({"duration", "view", "transition"})


def _check_view_id(view_id: str) -> str:
    if not view_id or any(c.isspace() for c in view_id) or view_id in _KEYWORDS:
        raise EdlError(f"view id {view_id!r} unusable in the EDL format")
    return view_id


# --- browsing ---------------------------------------------------------------


@dataclass(frozen=True)
class View:
    view_id: str
    rel_yaw: float
    media: str

    def __post_init__(self):
        _check_view_id(self.view_id)


@dataclass(frozen=True)
class ViewSet:
    """Views sorted by centered yaw, plus the Voronoi cell boundaries."""

    views: tuple[View, ...]
    centered_yaws: tuple[float, ...]
    boundaries: tuple[float, ...]  # n-1 midpoints; outer cells unbounded

    def ids(self) -> tuple[str, ...]:
        return tuple(v.view_id for v in self.views)


def build_view_graph(views) -> ViewSet:
    """Center yaws at 0 (circular mean), sort, cut cells at midpoints."""
    vs = [v if isinstance(v, View) else View(*v) for v in views]
    if len(vs) < 2:
        raise InsufficientViews(f"need at least 2 views, got {len(vs)}")
    ids = [v.view_id for v in vs]
    if len(set(ids)) != len(ids):
        raise DuplicateView("view ids must be unique")
    wrapped = [wrap_angle(v.rel_yaw) for v in vs]
    if len(set(wrapped)) != len(wrapped):
        raise DuplicateView("duplicate relative yaws")
    mean = circular_mean(wrapped)
    centered = [wrap_angle(y - mean) for y in wrapped]
    order = sorted(range(len(vs)), key=lambda i: centered[i])
    sorted_views = tuple(vs[i] for i in order)
    sorted_yaws = tuple(centered[i] for i in order)
    bounds = tuple((a + b) / 2 for a, b in zip(sorted_yaws, sorted_yaws[1:]))
    return ViewSet(sorted_views, sorted_yaws, bounds)


def select_view(vs: ViewSet, tilt_delta: float) -> str:
    """View minimizing |wrap(tilt - centered_yaw)|; ties go to the smaller yaw.

    Scanning in ascending yaw order with a strict comparison realizes the
    tie rule: the first minimizer is the smallest centered yaw.
    """
    tilt = wrap_angle(tilt_delta)
    best_id, best_d = None, None
    for view, cy in zip(vs.views, vs.centered_yaws):
        d = abs(wrap_angle(tilt - cy))
        if best_d is None or d < best_d:
            best_id, best_d = view.view_id, d
    return best_id


# --- edit timeline ----------------------------------------------------------


@dataclass(frozen=True)
class Transition:
    t_ms: float
    from_view: str
    to_view: str


@dataclass(frozen=True)
class EditTimeline:
    """One shared timeline over synchronized clips; edits only append."""

    duration_ms: float
    initial_view: str
    views: tuple[View, ...]
    transitions: tuple[Transition, ...] = ()
    _ids: frozenset = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.duration_ms <= 0:
            raise EdlError(f"duration must be positive, got {self.duration_ms}")
        ids = frozenset(v.view_id for v in self.views)
        if len(ids) != len(self.views):
            raise DuplicateView("view ids must be unique")
        if self.initial_view not in ids:
            raise UnknownView(f"initial view {self.initial_view!r} not in view table")
        object.__setattr__(self, "_ids", ids)

    @property
    def current_view(self) -> str:
        return self.transitions[-1].to_view if self.transitions else self.initial_view


def add_transition(tl: EditTimeline, t_ms: float, to_view: str) -> EditTimeline:
    """Append a cut at t_ms from the current view; returns the new timeline."""
    if to_view not in tl._ids:
        raise UnknownView(f"no view {to_view!r} in this session")
    if to_view == tl.current_view:
        raise NoopError(f"already on view {to_view!r}")
    last = tl.transitions[-1].t_ms if tl.transitions else 0.0
    if not last < t_ms < tl.duration_ms:
        raise OrderError(
            f"transition at {t_ms} must lie in ({last}, {tl.duration_ms})")
    cut = Transition(float(t_ms), tl.current_view, to_view)
    return replace(tl, transitions=tl.transitions + (cut,))


# --- render plan (EDL) ------------------------------------------------------


@dataclass(frozen=True)
class Segment:
    view: str
    t_start: float
    t_end: float


@dataclass(frozen=True)
class Marker:
    t_ms: float
    from_view: str
    to_view: str
    kind: str = "interpolated"


@dataclass(frozen=True)
class RenderPlan:
    duration_ms: float
    views: tuple[View, ...]
    segments: tuple[Segment, ...]
    markers: tuple[Marker, ...]


def export_edl(tl: EditTimeline) -> RenderPlan:
    """Tile [0, duration] with one segment per dwell, markers at each cut."""
    cuts = [0.0] + [t.t_ms for t in tl.transitions] + [tl.duration_ms]
    holders = [tl.initial_view] + [t.to_view for t in tl.transitions]
    segments = tuple(Segment(v, a, b) for v, a, b in zip(holders, cuts, cuts[1:]))
    markers = tuple(Marker(t.t_ms, t.from_view, t.to_view) for t in tl.transitions)
    return RenderPlan(tl.duration_ms, tl.views, segments, markers)


def validate_plan(plan: RenderPlan) -> None:
    """Check the tiling and chain invariants; raises EdlError if violated."""
    ids = {v.view_id for v in plan.views}
    if not plan.segments:
        raise EdlError("plan has no segments")
    if plan.segments[0].t_start != 0:
        raise EdlError("first segment does not start at 0")
    if plan.segments[-1].t_end != plan.duration_ms:
        raise EdlError("last segment does not end at the duration")
    for seg in plan.segments:
        if seg.view not in ids:
            raise EdlError(f"segment references unknown view {seg.view!r}")
        if not seg.t_start < seg.t_end:
            raise EdlError(f"empty or inverted segment at {seg.t_start}")
    for a, b in zip(plan.segments, plan.segments[1:]):
        if a.t_end != b.t_start:
            raise EdlError(f"gap or overlap at {a.t_end} vs {b.t_start}")
    if len(plan.markers) != len(plan.segments) - 1:
        raise EdlError("marker count must be segment count - 1")
    for marker, a, b in zip(plan.markers, plan.segments, plan.segments[1:]):
        if (marker.t_ms != a.t_end or marker.from_view != a.view
                or marker.to_view != b.view):
            raise EdlError(f"marker at {marker.t_ms} inconsistent with segments")
        if marker.kind != "interpolated":
            raise EdlError(f"unknown marker kind {marker.kind!r}")


def timeline_from_plan(plan: RenderPlan) -> EditTimeline:
    """Reconstruct the editable timeline a plan was exported from."""
    validate_plan(plan)
    transitions = tuple(Transition(m.t_ms, m.from_view, m.to_view) for m in plan.markers)
    return EditTimeline(plan.duration_ms, plan.segments[0].view, plan.views, transitions)


def _fmt(x: float) -> str:
    return str(int(x)) if float(x) == int(x) else repr(float(x))


def serialize_edl(plan: RenderPlan) -> str:
    lines = [f"duration {_fmt(plan.duration_ms)}"]
    for v in plan.views:
        lines.append(f"view {v.view_id} {_fmt(v.rel_yaw)} {v.media}")
    for s in plan.segments:
        lines.append(f"{s.view} {_fmt(s.t_start)} {_fmt(s.t_end)}")
    for m in plan.markers:
        lines.append(f"transition {_fmt(m.t_ms)} {m.from_view} {m.to_view} {m.kind}")
    return "\n".join(lines) + "\n"


def parse_edl(text: str) -> RenderPlan:
    duration = None
    views: list[View] = []
    segments: list[Segment] = []
    markers: list[Marker] = []
    try:
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.strip()
            if not line:
                continue
            head = line.split(maxsplit=1)[0]
            if head == "duration":
                duration = float(line.split()[1])
            elif head == "view":
                _, vid, yaw, media = line.split(maxsplit=3)
                views.append(View(vid, float(yaw), media))
            elif head == "transition":
                _, t, frm, to, kind = line.split()
                markers.append(Marker(float(t), frm, to, kind))
            else:
                vid, start, end = line.split()
                segments.append(Segment(vid, float(start), float(end)))
    except (ValueError, IndexError) as exc:
        raise EdlError(f"malformed EDL line {lineno}: {raw!r}") from exc
    if duration is None:
        raise EdlError("missing duration header")
    plan = RenderPlan(duration, tuple(views), tuple(segments), tuple(markers))
    validate_plan(plan)
    return plan
