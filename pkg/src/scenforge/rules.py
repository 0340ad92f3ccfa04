"""Trace-level evaluation of California Vehicle Code rule oracles.

Thirteen CVC sections are evaluable.  The statutes name the checks; the
quantitative thresholds are fixed here and documented in docs/rules.md:

 - 22349/22350  speed: above limit + 0.5 m/s sustained >= 1.0 s
                (22349 uses the 65 mph absolute maximum); a same-lane
                time headway below 2.0 s sustained >= 1.0 s is reported
                under 22350 with headway evidence
 - 22450        stop sign: minimum speed above 0.1 m/s anywhere in the
                5 m zone before the stop line, judged at the crossing
 - 21453        red light: front edge crosses the stop line on red
 - 21460/21461  a footprint corner crosses the direction divider into
                opposing traffic; solid markers violate 21460, broken
                markers violate 21461 when oncoming traffic is within
                30 m (the broken marker exempts 21460)
 - 22107/22108  lane change between parallel same-direction lanes with
                a vehicle inside 2.0 s time headway (22107) or initiated
                within 2 m of a junction conflict region (22108)
 - 21800-21804  entering the conflict region while an actor with
                priority reaches it within 2.0 s; the section is chosen
                by approach control: signalized 21800, stop-controlled
                21802, uncontrolled left turns 21801, otherwise 21800.
                21803 (yield signs) and 21804 (driveway entries) are
                registered but cannot trigger on the built topologies.

Stop signs and signals control the non-ego approaches; the ego leg is
the priority road (matching the adversary-violates design of the
scenario fixtures).
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Any, Iterable

from .digests import canonical_json
from .dsl import KNOWN_RULE_IDS, OracleEntry
from .sim import (
    CollisionEvent,
    RoadGeometry,
    Trace,
    VEHICLE_DIMS,
    detect_collisions,
    normalize_heading,
    rect_corners,
    rects_overlap,
)

SPEED_TOLERANCE = 0.5          # m/s over the limit before a violation
SPEED_SUSTAIN_S = 1.0
ABSOLUTE_MAX_SPEED = 29.0576   # 65 mph, CVC 22349
STOP_ZONE_M = 5.0
STOP_SPEED_MAX = 0.1           # m/s counted as "stopped"
HEADWAY_S = 2.0
HEADWAY_SUSTAIN_S = 1.0
ONCOMING_RANGE_M = 30.0        # 21461 passing window
PRIORITY_WINDOW_S = 2.0
JUNCTION_CHANGE_M = 2.0        # 22108 proxy distance

_EPS = 1e-9


@dataclass(frozen=True)
class RuleSpec:
    rule_id: str
    category: str
    parameters: dict[str, float]


@dataclass(frozen=True)
class Violation:
    rule_id: str
    actor_id: str
    t_start: float
    t_end: float
    evidence: dict[str, Any]


@dataclass(frozen=True)
class ViolationReport:
    scenario_id: str
    instance_seed: int
    violations: tuple[Violation, ...]
    collisions: tuple[CollisionEvent, ...]
    outcome: str
    targeted_hit: bool

    def distinct_rules(self) -> tuple[str, ...]:
        return tuple(sorted({v.rule_id for v in self.violations}))

    def to_dict(self) -> dict[str, Any]:
        return {
            "scenario_id": self.scenario_id,
            "instance_seed": self.instance_seed,
            "outcome": self.outcome,
            "targeted_hit": self.targeted_hit,
            "violations": [
                {"rule_id": v.rule_id, "actor_id": v.actor_id,
                 "t_start": v.t_start, "t_end": v.t_end, "evidence": v.evidence}
                for v in self.violations
            ],
            "collisions": [
                {"t": c.t, "actor_a": c.actor_a, "actor_b": c.actor_b}
                for c in self.collisions
            ],
        }

    def to_json(self) -> str:
        return canonical_json(self.to_dict())


REGISTRY: dict[str, RuleSpec] = {
    "21453": RuleSpec("21453", "signal", {}),
    "21460": RuleSpec("21460", "overtaking", {}),
    "21461": RuleSpec("21461", "overtaking", {"oncoming_range_m": ONCOMING_RANGE_M}),
    "21800": RuleSpec("21800", "right_of_way", {"window_s": PRIORITY_WINDOW_S}),
    "21801": RuleSpec("21801", "right_of_way", {"window_s": PRIORITY_WINDOW_S}),
    "21802": RuleSpec("21802", "right_of_way", {"window_s": PRIORITY_WINDOW_S}),
    "21803": RuleSpec("21803", "right_of_way", {"window_s": PRIORITY_WINDOW_S}),
    "21804": RuleSpec("21804", "right_of_way", {"window_s": PRIORITY_WINDOW_S}),
    "22107": RuleSpec("22107", "lane_maneuver", {"headway_s": HEADWAY_S}),
    "22108": RuleSpec("22108", "lane_maneuver", {"junction_margin_m": JUNCTION_CHANGE_M}),
    "22349": RuleSpec("22349", "speed", {"limit_mps": ABSOLUTE_MAX_SPEED}),
    "22350": RuleSpec("22350", "speed", {"tolerance_mps": SPEED_TOLERANCE}),
    "22450": RuleSpec("22450", "stop_sign", {"zone_m": STOP_ZONE_M, "max_speed_mps": STOP_SPEED_MAX}),
}

assert tuple(sorted(REGISTRY)) == tuple(sorted(KNOWN_RULE_IDS))


def _intervals(flags: list[bool], times: list[float]) -> list[tuple[float, float]]:
    """Maximal runs of consecutive true flags as (t_start, t_end)."""
    out: list[tuple[float, float]] = []
    start: float | None = None
    for flag, t in zip(flags, times):
        if flag and start is None:
            start = t
        elif not flag and start is not None:
            out.append((start, prev))
            start = None
        prev = t
    if start is not None:
        out.append((start, times[-1]))
    return out


def _merge(violations: list[Violation], gap: float) -> list[Violation]:
    """Merge adjacent/overlapping violations of the same (rule, actor)."""
    merged: dict[tuple[str, str], list[Violation]] = {}
    for v in sorted(violations, key=lambda v: (v.rule_id, v.actor_id, v.t_start)):
        bucket = merged.setdefault((v.rule_id, v.actor_id), [])
        if bucket and v.t_start <= bucket[-1].t_end + gap + _EPS:
            last = bucket[-1]
            bucket[-1] = Violation(last.rule_id, last.actor_id, last.t_start,
                                   max(last.t_end, v.t_end), last.evidence)
        else:
            bucket.append(v)
    out = [v for bucket in merged.values() for v in bucket]
    return sorted(out, key=lambda v: (v.t_start, v.rule_id, v.actor_id))


def _front_point(state, length: float) -> tuple[float, float]:
    half = length / 2.0
    return state.x + half * math.cos(state.heading), state.y + half * math.sin(state.heading)


def _actor_series(trace: Trace, actor_id: str):
    return [next(a for a in frame.actors if a.actor_id == actor_id) for frame in trace.frames]


def _approach_of_state(state) -> str:
    hx, hy = math.cos(state.heading), math.sin(state.heading)
    if abs(hx) >= abs(hy):
        return "west" if hx > 0 else "east"
    return "south" if hy > 0 else "north"


def _line_crossing_frame(trace: Trace, actor_id: str, stop_line) -> int | None:
    """Frame index where the actor's front edge first crosses the line inbound."""
    length, _ = VEHICLE_DIMS[trace.actor_types[actor_id]]
    series = _actor_series(trace, actor_id)
    prev_delta = None
    for k, state in enumerate(series):
        fx, fy = _front_point(state, length)
        c = fx if stop_line.axis == "x" else fy
        other = fy if stop_line.axis == "x" else fx
        delta = (c - stop_line.coord) * stop_line.inbound
        if prev_delta is not None and prev_delta < 0 <= delta:
            if stop_line.lo - 2.0 <= other <= stop_line.hi + 2.0:
                return k
        prev_delta = delta
    return None


def _zone_min_speed(trace: Trace, actor_id: str, stop_line, crossing_frame: int) -> float:
    length, _ = VEHICLE_DIMS[trace.actor_types[actor_id]]
    series = _actor_series(trace, actor_id)
    speeds = []
    for state in series[:crossing_frame + 1]:
        fx, fy = _front_point(state, length)
        c = fx if stop_line.axis == "x" else fy
        dist = (stop_line.coord - c) * stop_line.inbound
        if 0.0 <= dist <= STOP_ZONE_M:
            speeds.append(state.speed)
    if not speeds:
        return series[crossing_frame].speed
    return min(speeds)


# ---------------------------------------------------------------------------
# individual checks


def _check_speed(trace: Trace, geometry: RoadGeometry, absolute: bool) -> list[Violation]:
    rule_id = "22349" if absolute else "22350"
    limit = ABSOLUTE_MAX_SPEED if absolute else geometry.speed_limit
    times = [f.t for f in trace.frames]
    out: list[Violation] = []
    for actor_id in sorted(trace.actor_types):
        series = _actor_series(trace, actor_id)
        flags = [s.speed > limit + SPEED_TOLERANCE for s in series]
        for t0, t1 in _intervals(flags, times):
            if t1 - t0 + _EPS >= SPEED_SUSTAIN_S:
                peak = max(s.speed for s in series)
                out.append(Violation(rule_id, actor_id, t0, t1,
                                     {"max_speed_mps": peak, "limit_mps": limit}))
    if not absolute:
        out.extend(_check_headway(trace))
    return out


def _check_headway(trace: Trace) -> list[Violation]:
    """Same-lane, same-direction following below 2 s headway (as 22350 evidence)."""
    times = [f.t for f in trace.frames]
    ids = sorted(trace.actor_types)
    out: list[Violation] = []
    for follower in ids:
        f_series = _actor_series(trace, follower)
        for lead in ids:
            if lead == follower:
                continue
            l_series = _actor_series(trace, lead)
            flags = []
            for fs, ls in zip(f_series, l_series):
                same_lane = fs.lane_id == ls.lane_id
                aligned = math.cos(fs.heading - ls.heading) > 0.5
                dx, dy = ls.x - fs.x, ls.y - fs.y
                ahead = dx * math.cos(fs.heading) + dy * math.sin(fs.heading) > 0
                gap = math.hypot(dx, dy)
                flags.append(same_lane and aligned and ahead and fs.speed > 0
                             and gap < HEADWAY_S * fs.speed)
            for t0, t1 in _intervals(flags, times):
                if t1 - t0 + _EPS >= HEADWAY_SUSTAIN_S:
                    out.append(Violation("22350", follower, t0, t1,
                                         {"kind": "headway", "lead": lead,
                                          "headway_limit_s": HEADWAY_S}))
    return out


def _controlled_approaches(geometry: RoadGeometry) -> tuple[str, ...]:
    """Approaches governed by a stop sign: every leg except the ego's."""
    if "stop_sign" not in geometry.scenario.signs:
        return ()
    ego_leg = "south" if geometry.topology == "intersection" else "west"
    return tuple(sl.approach for sl in geometry.stop_lines if sl.approach != ego_leg)


def _check_stop_sign(trace: Trace, geometry: RoadGeometry) -> list[Violation]:
    controlled = _controlled_approaches(geometry)
    if not controlled:
        return []
    out: list[Violation] = []
    for actor_id in sorted(trace.actor_types):
        approach = _approach_of_state(_actor_series(trace, actor_id)[0])
        if approach not in controlled:
            continue
        stop_line = next((sl for sl in geometry.stop_lines if sl.approach == approach), None)
        if stop_line is None:
            continue
        k = _line_crossing_frame(trace, actor_id, stop_line)
        if k is None:
            continue
        min_speed = _zone_min_speed(trace, actor_id, stop_line, k)
        if min_speed > STOP_SPEED_MAX:
            t = trace.frames[k].t
            out.append(Violation("22450", actor_id, t, t,
                                 {"min_zone_speed_mps": min_speed, "approach": approach}))
    return out


def _check_red_light(trace: Trace, geometry: RoadGeometry) -> list[Violation]:
    if not geometry.signal_heads:
        return []
    out: list[Violation] = []
    for actor_id in sorted(trace.actor_types):
        approach = _approach_of_state(_actor_series(trace, actor_id)[0])
        if geometry.signal_for(approach) is None:
            continue
        stop_line = next((sl for sl in geometry.stop_lines if sl.approach == approach), None)
        if stop_line is None:
            continue
        k = _line_crossing_frame(trace, actor_id, stop_line)
        if k is None:
            continue
        states = dict(trace.frames[k].signals)
        if states.get(approach) == "red":
            t = trace.frames[k].t
            out.append(Violation("21453", actor_id, t, t,
                                 {"signal_state": "red", "approach": approach}))
    return out


def _travel_direction(trace: Trace, geometry: RoadGeometry, actor_id: str) -> int:
    """+1 with the road axis, -1 against it (taken from the first frame)."""
    state = _actor_series(trace, actor_id)[0]
    _, _, axis_heading = geometry.axis.point(geometry.axis.locate(state.x, state.y)[0], 0.0)
    return 1 if math.cos(state.heading - axis_heading) >= 0 else -1


def _crossing_flags(trace: Trace, geometry: RoadGeometry, actor_id: str) -> list[bool]:
    """Per frame: any footprint corner across the divider into opposing traffic."""
    direction = _travel_direction(trace, geometry, actor_id)
    dims = VEHICLE_DIMS[trace.actor_types[actor_id]]
    flags = []
    for state in _actor_series(trace, actor_id):
        crossed = False
        for cx, cy in rect_corners(state.x, state.y, state.heading, *dims):
            lat = geometry.axis.locate(cx, cy)[1]
            if (direction == 1 and lat > 0) or (direction == -1 and lat < 0):
                crossed = True
                break
        flags.append(crossed)
    return flags


def _max_abs_lateral(trace: Trace, geometry: RoadGeometry, actor_id: str) -> float:
    return max(abs(geometry.axis.locate(s.x, s.y)[1]) for s in _actor_series(trace, actor_id))


def _check_divider(trace: Trace, geometry: RoadGeometry, rule_id: str) -> list[Violation]:
    if geometry.axis is None or geometry.scenario.number_of_ways != 2:
        return []
    marker = geometry.scenario.marker
    if rule_id == "21460" and marker != "solid_line":
        return []
    if rule_id == "21461" and marker != "broken_line":
        return []
    times = [f.t for f in trace.frames]
    out: list[Violation] = []
    for actor_id in sorted(trace.actor_types):
        flags = _crossing_flags(trace, geometry, actor_id)
        if rule_id == "21461":
            flags = [flag and _oncoming_within(trace, actor_id, k, ONCOMING_RANGE_M)
                     for k, flag in enumerate(flags)]
        for t0, t1 in _intervals(flags, times):
            out.append(Violation(rule_id, actor_id, t0, t1,
                                 {"marker": marker,
                                  "max_lateral_m": _max_abs_lateral(trace, geometry, actor_id)}))
    return out


def _oncoming_within(trace: Trace, actor_id: str, frame_index: int, range_m: float) -> bool:
    frame = trace.frames[frame_index]
    me = next(a for a in frame.actors if a.actor_id == actor_id)
    for other in frame.actors:
        if other.actor_id == actor_id:
            continue
        if math.cos(me.heading - other.heading) < -0.5:
            if math.hypot(other.x - me.x, other.y - me.y) <= range_m:
                return True
    return False


def _parallel_lanes(geometry: RoadGeometry, lane_a: str, lane_b: str) -> bool:
    la = next((l for l in geometry.lanes if l.lane_id == lane_a), None)
    lb = next((l for l in geometry.lanes if l.lane_id == lane_b), None)
    if la is None or lb is None or lane_a == lane_b:
        return False
    if la.approach is not None or lb.approach is not None:
        return la.approach == lb.approach
    return la.direction == lb.direction


def _region_distance(geometry: RoadGeometry, x: float, y: float) -> float:
    xs = [p[0] for p in geometry.conflict_region]
    ys = [p[1] for p in geometry.conflict_region]
    dx = max(min(xs) - x, 0.0, x - max(xs))
    dy = max(min(ys) - y, 0.0, y - max(ys))
    return math.hypot(dx, dy)


def _check_lane_change(trace: Trace, geometry: RoadGeometry, rule_id: str) -> list[Violation]:
    out: list[Violation] = []
    for actor_id in sorted(trace.actor_types):
        series = _actor_series(trace, actor_id)
        for k in range(1, len(series)):
            prev, cur = series[k - 1], series[k]
            if prev.lane_id == cur.lane_id:
                continue
            if not _parallel_lanes(geometry, prev.lane_id, cur.lane_id):
                continue
            t = trace.frames[k].t
            if rule_id == "22107":
                frame = trace.frames[k]
                for other in frame.actors:
                    if other.actor_id == actor_id:
                        continue
                    gap = math.hypot(other.x - cur.x, other.y - cur.y)
                    if cur.speed > 0 and gap < HEADWAY_S * cur.speed:
                        out.append(Violation("22107", actor_id, t, t,
                                             {"gap_m": gap, "nearby": other.actor_id}))
                        break
            else:
                if geometry.conflict_region is not None:
                    dist = _region_distance(geometry, cur.x, cur.y)
                    if dist <= JUNCTION_CHANGE_M:
                        out.append(Violation("22108", actor_id, t, t,
                                             {"region_distance_m": dist}))
    return out


def _region_entries(trace: Trace, geometry: RoadGeometry) -> dict[str, int]:
    """First frame index where each actor's footprint reaches the region."""
    entries: dict[str, int] = {}
    for k, frame in enumerate(trace.frames):
        for state in frame.actors:
            if state.actor_id in entries:
                continue
            dims = VEHICLE_DIMS[trace.actor_types[state.actor_id]]
            corners = rect_corners(state.x, state.y, state.heading, *dims)
            if rects_overlap(corners, geometry.conflict_region):
                entries[state.actor_id] = k
    return entries


def _turns_left(trace: Trace, actor_id: str, entry_frame: int) -> bool:
    series = _actor_series(trace, actor_id)
    delta = normalize_heading(series[-1].heading - series[entry_frame].heading)
    return delta > math.pi / 4


def _has_priority(trace: Trace, geometry: RoadGeometry, b_id: str, b_entry: int,
                  a_id: str, a_entry: int) -> bool:
    """Does actor B hold priority over actor A for a region entry conflict."""
    a_approach = _approach_of_state(_actor_series(trace, a_id)[0])
    b_approach = _approach_of_state(_actor_series(trace, b_id)[0])
    if geometry.signal_heads:
        a_state = dict(trace.frames[a_entry].signals).get(a_approach)
        b_state = dict(trace.frames[b_entry].signals).get(b_approach)
        return b_state == "green" and a_state == "red"
    controlled = _controlled_approaches(geometry)
    if controlled:
        return a_approach in controlled and b_approach not in controlled
    # uncontrolled: a left turner yields to straight-through traffic, then
    # first arrival, then the on-the-right tie-break
    a_turns = _turns_left(trace, a_id, a_entry)
    b_turns = _turns_left(trace, b_id, b_entry)
    if b_turns and not a_turns:
        return False
    if a_turns and not b_turns:
        return True
    t_a = trace.frames[a_entry].t
    t_b = trace.frames[b_entry].t
    if t_b < t_a - PRIORITY_WINDOW_S:
        return True
    if abs(t_b - t_a) <= PRIORITY_WINDOW_S:
        ha = _LEG_VECTORS[a_approach]
        hb = _LEG_VECTORS[b_approach]
        return ha[0] * hb[1] - ha[1] * hb[0] > 0  # B comes from A's right
    return False


_LEG_VECTORS = {"south": (0.0, 1.0), "west": (1.0, 0.0), "north": (0.0, -1.0), "east": (-1.0, 0.0)}


def _right_of_way_section(trace: Trace, geometry: RoadGeometry, actor_id: str, entry: int) -> str:
    approach = _approach_of_state(_actor_series(trace, actor_id)[0])
    if geometry.signal_for(approach) is not None:
        return "21800"
    if approach in _controlled_approaches(geometry):
        return "21802"
    if _turns_left(trace, actor_id, entry):
        return "21801"
    return "21800"


def _check_right_of_way(trace: Trace, geometry: RoadGeometry, rule_id: str) -> list[Violation]:
    if geometry.conflict_region is None:
        return []
    entries = _region_entries(trace, geometry)
    out: list[Violation] = []
    for a_id, a_entry in sorted(entries.items()):
        t_a = trace.frames[a_entry].t
        for b_id, b_entry in sorted(entries.items()):
            if b_id == a_id:
                continue
            t_b = trace.frames[b_entry].t
            if t_b > t_a + PRIORITY_WINDOW_S:
                continue
            if not _has_priority(trace, geometry, b_id, b_entry, a_id, a_entry):
                continue
            section = _right_of_way_section(trace, geometry, a_id, a_entry)
            if section == rule_id:
                out.append(Violation(rule_id, a_id, t_a, t_a,
                                     {"priority_actor": b_id, "gap_s": abs(t_b - t_a)}))
            break
    return out


_CHECKS = {
    "21453": lambda trace, geo: _check_red_light(trace, geo),
    "21460": lambda trace, geo: _check_divider(trace, geo, "21460"),
    "21461": lambda trace, geo: _check_divider(trace, geo, "21461"),
    "21800": lambda trace, geo: _check_right_of_way(trace, geo, "21800"),
    "21801": lambda trace, geo: _check_right_of_way(trace, geo, "21801"),
    "21802": lambda trace, geo: _check_right_of_way(trace, geo, "21802"),
    "21803": lambda trace, geo: [],  # no yield signs in the sign vocabulary
    "21804": lambda trace, geo: [],  # no driveway legs in the built topologies
    "22107": lambda trace, geo: _check_lane_change(trace, geo, "22107"),
    "22108": lambda trace, geo: _check_lane_change(trace, geo, "22108"),
    "22349": lambda trace, geo: _check_speed(trace, geo, absolute=True),
    "22350": lambda trace, geo: _check_speed(trace, geo, absolute=False),
    "22450": lambda trace, geo: _check_stop_sign(trace, geo),
}


def evaluate_rule(rule: RuleSpec | str, trace: Trace, geometry: RoadGeometry) -> list[Violation]:
    """Run one registry rule over a trace, merging adjacent intervals."""
    rule_id = rule if isinstance(rule, str) else rule.rule_id
    if rule_id not in REGISTRY:
        raise KeyError(f"rule {rule_id!r} is not in the registry")
    if trace.geometry_ref != geometry.digest():
        raise ValueError("trace was produced on a different geometry")
    return _merge(_CHECKS[rule_id](trace, geometry), trace.timestep_s)


def monitor(trace: Trace, oracle: Iterable[OracleEntry], geometry: RoadGeometry) -> ViolationReport:
    """Evaluate every registry rule plus collisions and classify the outcome."""
    oracle = tuple(oracle)
    if not oracle:
        raise ValueError("oracle must not be empty")
    violations: list[Violation] = []
    for rule_id in sorted(REGISTRY):
        violations.extend(evaluate_rule(rule_id, trace, geometry))
    violations = _merge(violations, trace.timestep_s)
    collisions = detect_collisions(trace)

    if violations and collisions:
        outcome = "both"
    elif violations:
        outcome = "rule_violation"
    elif collisions:
        outcome = "collision"
    else:
        outcome = "clean"

    targeted = all(
        any(v.rule_id == entry.rule_id and v.actor_id == entry.violating_actor
            for v in violations)
        for entry in oracle
    )
    return ViolationReport(
        scenario_id=trace.scenario_id,
        instance_seed=trace.instance_seed,
        violations=tuple(violations),
        collisions=tuple(collisions),
        outcome=outcome,
        targeted_hit=targeted,
    )


SUMMARY_COLUMNS = ["scenario_id", "seed", "outcome", "targeted_hit"] + [
    f"cvc_{rule_id}" for rule_id in sorted(REGISTRY)
]


def summary_csv(reports: Iterable[ViolationReport]) -> str:
    """Batch summary, one row per instance, ordered by (scenario, seed)."""
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(SUMMARY_COLUMNS)
    for report in sorted(reports, key=lambda r: (r.scenario_id, r.instance_seed)):
        counts = {rule_id: 0 for rule_id in REGISTRY}
        for v in report.violations:
            counts[v.rule_id] += 1
        writer.writerow(
            [report.scenario_id, report.instance_seed, report.outcome,
             str(report.targeted_hit).lower()]
            + [counts[rule_id] for rule_id in sorted(REGISTRY)]
        )
    return buffer.getvalue()
