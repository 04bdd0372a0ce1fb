"""Browsing and composition tests: Voronoi selection, timeline edits, EDL."""

import random

import pytest
from hypothesis import given
from hypothesis import strategies as st

from camswarm.geometry import circular_mean, wrap_angle
from camswarm.playback import (
    DuplicateView,
    EditTimeline,
    EdlError,
    InsufficientViews,
    NoopError,
    OrderError,
    RenderPlan,
    Segment,
    UnknownView,
    View,
    add_transition,
    build_view_graph,
    export_edl,
    parse_edl,
    select_view,
    serialize_edl,
    timeline_from_plan,
    validate_plan,
)


def mk_views(yaws):
    return [View(f"v{i}", y, f"clip{i}.mp4") for i, y in enumerate(yaws)]


def brute_force_select(vs, tilt):
    """Independent oracle: min wrap-distance, ties resolved by smallest yaw."""
    pairs = [(abs(wrap_angle(wrap_angle(tilt) - cy)), cy, v.view_id)
             for v, cy in zip(vs.views, vs.centered_yaws)]
    best = min(d for d, _, _ in pairs)
    ties = [(cy, vid) for d, cy, vid in pairs if d == best]
    return min(ties)[1]


class TestViewGraph:
    def test_hand_example(self):
        vs = build_view_graph(mk_views([10, 20, 30]))
        assert vs.centered_yaws == pytest.approx((-10, 0, 10))
        assert vs.boundaries == pytest.approx((-5, 5))

    def test_already_centered(self):
        vs = build_view_graph(mk_views([-30, 0, 30]))
        assert vs.centered_yaws == pytest.approx((-30, 0, 30))

    def test_single_view(self):
        with pytest.raises(InsufficientViews):
            build_view_graph(mk_views([10]))

    def test_duplicate_yaw(self):
        with pytest.raises(DuplicateView):
            build_view_graph(mk_views([10, 10, 30]))

    def test_duplicate_id(self):
        with pytest.raises(DuplicateView):
            build_view_graph([View("a", 1, "x"), View("a", 2, "y")])

    def test_centered_mean_invariant(self):
        rng = random.Random(5)
        for _ in range(50):
            yaws = rng.sample(range(-170, 171), rng.randint(2, 9))
            vs = build_view_graph(mk_views(yaws))
            assert abs(circular_mean(vs.centered_yaws)) < 1e-9

    def test_sorted_and_aligned(self):
        vs = build_view_graph(mk_views([25, -40, 5]))
        assert list(vs.centered_yaws) == sorted(vs.centered_yaws)
        by_id = {v.view_id: v.rel_yaw for v in vs.views}
        assert set(by_id) == {"v0", "v1", "v2"}


class TestSelectView:
    def setup_method(self):
        self.vs = build_view_graph(mk_views([-30, 0, 30]))
        self.at = {cy: v.view_id for v, cy in zip(self.vs.views, self.vs.centered_yaws)}

    def test_interior(self):
        assert select_view(self.vs, -14) == self.at[0]

    def test_boundary_tie_smaller_yaw(self):
        assert select_view(self.vs, -15) == self.at[-30]

    def test_extreme(self):
        assert select_view(self.vs, 100) == self.at[30]

    def test_antipodal_tie(self):
        vs = build_view_graph(mk_views([-170, 170]))
        assert select_view(vs, 180) == brute_force_select(vs, 180)

    @given(st.lists(st.integers(min_value=-1790, max_value=1800), min_size=2,
                    max_size=9, unique=True),
           st.floats(min_value=-720, max_value=720, allow_nan=False))
    def test_matches_brute_force(self, deci_yaws, tilt):
        yaws = [y / 10 for y in deci_yaws]
        try:
            vs = build_view_graph(mk_views(yaws))
        except DuplicateView:  # distinct inputs may collide after wrapping
            return
        assert select_view(vs, tilt) == brute_force_select(vs, tilt)


class TestTimeline:
    def mk(self, duration=4000):
        return EditTimeline(duration, "A",
                            (View("A", -30, "a.mp4"), View("B", 0, "b.mp4"),
                             View("C", 30, "c.mp4")))

    def test_append(self):
        tl = add_transition(self.mk(), 1000, "B")
        assert tl.current_view == "B"
        assert [(t.t_ms, t.from_view, t.to_view) for t in tl.transitions] == \
            [(1000, "A", "B")]

    def test_order_error(self):
        tl = add_transition(self.mk(), 1000, "B")
        with pytest.raises(OrderError):
            add_transition(tl, 500, "C")
        with pytest.raises(OrderError):
            add_transition(tl, 1000, "C")
        with pytest.raises(OrderError):
            add_transition(tl, 4000, "C")  # at duration: excluded

    def test_noop_error(self):
        tl = add_transition(self.mk(), 1000, "B")
        with pytest.raises(NoopError):
            add_transition(tl, 1500, "B")

    def test_unknown_view(self):
        with pytest.raises(UnknownView):
            add_transition(self.mk(), 1000, "Z")

    def test_original_unchanged(self):
        tl = self.mk()
        add_transition(tl, 1000, "B")
        assert tl.transitions == ()


class TestExport:
    def mk_chain(self):
        tl = EditTimeline(4000, "A",
                          (View("A", -30, "a.mp4"), View("B", 0, "b.mp4"),
                           View("C", 30, "c.mp4")))
        tl = add_transition(tl, 1000, "B")
        return add_transition(tl, 2500, "C")

    def test_no_transitions(self):
        tl = EditTimeline(4000, "A", (View("A", 0, "a.mp4"), View("B", 1, "b")))
        plan = export_edl(tl)
        assert [(s.view, s.t_start, s.t_end) for s in plan.segments] == [("A", 0, 4000)]
        assert plan.markers == ()
        validate_plan(plan)

    def test_chain(self):
        plan = export_edl(self.mk_chain())
        assert [(s.view, s.t_start, s.t_end) for s in plan.segments] == \
            [("A", 0, 1000), ("B", 1000, 2500), ("C", 2500, 4000)]
        assert [(m.t_ms, m.from_view, m.to_view, m.kind) for m in plan.markers] == \
            [(1000, "A", "B", "interpolated"), (2500, "B", "C", "interpolated")]
        validate_plan(plan)

    def test_validate_rejects_gap(self):
        plan = export_edl(self.mk_chain())
        broken = RenderPlan(plan.duration_ms, plan.views,
                            (plan.segments[0],
                             Segment("B", 1100, 2500), plan.segments[2]),
                            plan.markers)
        with pytest.raises(EdlError):
            validate_plan(broken)

    def test_text_round_trip(self):
        plan = export_edl(self.mk_chain())
        text = serialize_edl(plan)
        assert parse_edl(text) == plan
        assert serialize_edl(parse_edl(text)) == text

    def test_text_shape(self):
        lines = serialize_edl(export_edl(self.mk_chain())).splitlines()
        assert lines[0] == "duration 4000"
        assert lines[1] == "view A -30 a.mp4"
        assert lines[4] == "A 0 1000"
        assert lines[-1] == "transition 2500 B C interpolated"

    def test_reimport_reconstructs(self):
        tl = self.mk_chain()
        assert timeline_from_plan(export_edl(tl)) == tl

    def test_parse_rejects_garbage(self):
        with pytest.raises(EdlError):
            parse_edl("duration 100\nA zero 100\n")
        with pytest.raises(EdlError):
            parse_edl("A 0 100\n")  # no duration header

    def test_random_sessions_tile(self):
        rng = random.Random(99)
        for _ in range(100):
            views = tuple(View(f"v{i}", i * 10.0, f"m{i}") for i in range(rng.randint(2, 6)))
            duration = rng.randint(2, 50) * 500.0
            tl = EditTimeline(duration, views[0].view_id, views)
            t = 0.0
            while True:
                t += rng.randint(1, 20) * 100.0
                if t >= duration:
                    break
                choices = [v.view_id for v in views if v.view_id != tl.current_view]
                tl = add_transition(tl, t, rng.choice(choices))
            plan = export_edl(tl)
            validate_plan(plan)
            assert sum(s.t_end - s.t_start for s in plan.segments) == duration
            assert timeline_from_plan(plan) == tl
            assert parse_edl(serialize_edl(plan)) == plan
