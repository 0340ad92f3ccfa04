"""Parametric 2D road geometry and scripted kinematic simulation.

Towns are symbolic labels realized here as exact analytic geometry: lines
and circular arcs, lane width 3.5 m.  Actors follow precomputed paths at
scripted speeds; the configured adversary maneuver (oncoming incursion,
lead vehicle, timed junction crossing) is layered on top.  A simulation
is a pure function of (instance, geometry), so traces serialize
byte-identically across runs.

Conventions:
 - right-hand traffic; the innermost forward lane sits 1.75 m right of
   the road axis
 - lateral offsets are positive to the LEFT of the travel direction
 - junction "left"/"right" adversary variants are exact reflections of
   each other about the ego approach line, so mirrored scenarios produce
   mirrored traces (the crossing corridor is shared; see docs)
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Any

from .digests import canonical_json, digest64_json
from .sampling import ScenarioInstance
from .synth import ScenarioTemplate, TemplateParams

TIMESTEP_S = 0.1
HORIZON_S = 60.0
LANE_WIDTH = 3.5
ROAD_LENGTH = 300.0          # straight roads
CURVE_RADIUS = 100.0         # road-axis radius of the curve
CURVE_SWEEP = math.pi / 3.0  # 60 degrees of heading change (>= 30 required)
LEG_EXTENT = 130.0           # junction legs, distance from center
STOP_LINE_SETBACK = 1.0      # meters before the conflict region
DEFAULT_SPEED_LIMIT = 13.89  # m/s (50 km/h) when no limit is posted
BRAKE_DECEL = 4.0            # m/s^2 for the stop behavior
RAMP_DURATION_S = 2.0        # head-on lateral incursion time
ARRIVAL_LEAD_S = 0.1         # junction adversary reaches the cell this long before the ego
EGO_RUNUP_M = 20.0           # added to EGO_INIT_DIST for junction approaches

# Signal schedule: ego approach green at t=0, crossing approaches red.
SIGNAL_CYCLE_S = 30.0
SIGNAL_GREEN_S = 12.0
SIGNAL_YELLOW_S = 3.0
CROSS_OFFSET_S = SIGNAL_GREEN_S + SIGNAL_YELLOW_S

VEHICLE_DIMS = {"car": (4.5, 2.0), "truck": (8.0, 2.5)}  # length, width

TWO_PI = 2.0 * math.pi


def normalize_heading(h: float) -> float:
    """Wrap to (-pi, pi]."""
    h = math.remainder(h, TWO_PI)
    if h <= -math.pi:
        h += TWO_PI
    return h


# ---------------------------------------------------------------------------
# analytic path segments


@dataclass(frozen=True)
class LineSeg:
    x0: float
    y0: float
    dx: float  # unit direction
    dy: float
    length: float

    def point(self, s: float, lat: float) -> tuple[float, float, float]:
        # left normal of (dx, dy) is (-dy, dx)
        return (
            self.x0 + self.dx * s - self.dy * lat,
            self.y0 + self.dy * s + self.dx * lat,
            math.atan2(self.dy, self.dx),
        )

    def locate(self, x: float, y: float) -> tuple[float, float]:
        px, py = x - self.x0, y - self.y0
        return px * self.dx + py * self.dy, -px * self.dy + py * self.dx

    def to_dict(self) -> dict[str, Any]:
        return {"kind": "line", "x0": self.x0, "y0": self.y0,
                "dx": self.dx, "dy": self.dy, "length": self.length}


@dataclass(frozen=True)
class ArcSeg:
    cx: float
    cy: float
    radius: float
    a0: float     # start angle
    sweep: float  # signed; positive = counterclockwise
    length: float

    @property
    def sign(self) -> float:
        return 1.0 if self.sweep >= 0 else -1.0

    def point(self, s: float, lat: float) -> tuple[float, float, float]:
        ang = self.a0 + self.sign * s / self.radius
        r = self.radius - self.sign * lat
        return (
            self.cx + r * math.cos(ang),
            self.cy + r * math.sin(ang),
            normalize_heading(ang + self.sign * math.pi / 2.0),
        )

    def locate(self, x: float, y: float) -> tuple[float, float]:
        ang = math.atan2(y - self.cy, x - self.cx)
        delta = math.remainder(ang - self.a0, TWO_PI) * self.sign
        dist = math.hypot(x - self.cx, y - self.cy)
        return delta * self.radius, self.sign * (self.radius - dist)

    def to_dict(self) -> dict[str, Any]:
        return {"kind": "arc", "cx": self.cx, "cy": self.cy, "radius": self.radius,
                "a0": self.a0, "sweep": self.sweep, "length": self.length}


Segment = LineSeg | ArcSeg


def _line(p0: tuple[float, float], p1: tuple[float, float]) -> LineSeg:
    dx, dy = p1[0] - p0[0], p1[1] - p0[1]
    length = math.hypot(dx, dy)
    return LineSeg(p0[0], p0[1], dx / length, dy / length, length)


def path_length(path: tuple[Segment, ...]) -> float:
    return sum(seg.length for seg in path)


def path_point(path: tuple[Segment, ...], s: float, lat: float = 0.0) -> tuple[float, float, float]:
    """Position and heading at arc length s; extrapolates beyond both ends."""
    remaining = s
    for i, seg in enumerate(path):
        last = i == len(path) - 1
        if remaining <= seg.length or last:
            return seg.point(remaining, lat)
        remaining -= seg.length
    raise ValueError("empty path")


def mirror_path_x(path: tuple[Segment, ...], axis_x: float) -> tuple[Segment, ...]:
    """Reflect about the vertical line x = axis_x."""
    out: list[Segment] = []
    for seg in path:
        if isinstance(seg, LineSeg):
            out.append(LineSeg(2 * axis_x - seg.x0, seg.y0, -seg.dx, seg.dy, seg.length))
        else:
            out.append(ArcSeg(2 * axis_x - seg.cx, seg.cy, seg.radius,
                              normalize_heading(math.pi - seg.a0), -seg.sweep, seg.length))
    return tuple(out)


def mirror_path_y(path: tuple[Segment, ...], axis_y: float) -> tuple[Segment, ...]:
    """Reflect about the horizontal line y = axis_y."""
    out: list[Segment] = []
    for seg in path:
        if isinstance(seg, LineSeg):
            out.append(LineSeg(seg.x0, 2 * axis_y - seg.y0, seg.dx, -seg.dy, seg.length))
        else:
            out.append(ArcSeg(seg.cx, 2 * axis_y - seg.cy, seg.radius,
                              normalize_heading(-seg.a0), -seg.sweep, seg.length))
    return tuple(out)


def path_intersection(path_a: tuple[Segment, ...], path_b: tuple[Segment, ...]
                      ) -> tuple[float, float] | None:
    """First crossing of two centerlines as (s_a, s_b); None if disjoint."""
    best: tuple[float, float] | None = None
    offset_a = 0.0
    for seg_a in path_a:
        offset_b = 0.0
        for seg_b in path_b:
            for sa, sb in _segment_intersections(seg_a, seg_b):
                if -1e-9 <= sa <= seg_a.length + 1e-9 and -1e-9 <= sb <= seg_b.length + 1e-9:
                    cand = (offset_a + sa, offset_b + sb)
                    if best is None or cand[0] < best[0]:
                        best = cand
            offset_b += seg_b.length
        offset_a += seg_a.length
    return best


def _segment_intersections(a: Segment, b: Segment) -> list[tuple[float, float]]:
    if isinstance(a, LineSeg) and isinstance(b, LineSeg):
        denom = a.dx * b.dy - a.dy * b.dx
        if abs(denom) < 1e-12:
            return []
        rx, ry = b.x0 - a.x0, b.y0 - a.y0
        sa = (rx * b.dy - ry * b.dx) / denom
        sb = (rx * a.dy - ry * a.dx) / denom
        return [(sa, sb)]
    if isinstance(a, LineSeg) and isinstance(b, ArcSeg):
        return [(sa, sb) for sb, sa in _arc_line_hits(b, a)]
    if isinstance(a, ArcSeg) and isinstance(b, LineSeg):
        return _arc_line_hits(a, b)
    return []  # arc/arc crossings are not needed by any built topology


def _arc_line_hits(arc: ArcSeg, line: LineSeg) -> list[tuple[float, float]]:
    """Intersections as (s_arc, s_line)."""
    # project the center onto the line
    px, py = arc.cx - line.x0, arc.cy - line.y0
    along = px * line.dx + py * line.dy
    perp = -px * line.dy + py * line.dx
    if abs(perp) > arc.radius:
        return []
    half = math.sqrt(max(arc.radius * arc.radius - perp * perp, 0.0))
    hits = []
    for s_line in (along - half, along + half):
        x = line.x0 + line.dx * s_line
        y = line.y0 + line.dy * s_line
        ang = math.atan2(y - arc.cy, x - arc.cx)
        delta = math.remainder(ang - arc.a0, TWO_PI) * arc.sign
        if delta < 0:
            delta += TWO_PI
        s_arc = delta * arc.radius
        hits.append((s_arc, s_line))
    return hits


# ---------------------------------------------------------------------------
# road geometry


@dataclass(frozen=True)
class SignalSchedule:
    cycle_s: float = SIGNAL_CYCLE_S
    green_s: float = SIGNAL_GREEN_S
    yellow_s: float = SIGNAL_YELLOW_S
    offset_s: float = 0.0

    def state(self, t: float) -> str:
        phase = (t - self.offset_s) % self.cycle_s
        if phase < self.green_s:
            return "green"
        if phase < self.green_s + self.yellow_s:
            return "yellow"
        return "red"

    def to_dict(self) -> dict[str, Any]:
        return {"cycle_s": self.cycle_s, "green_s": self.green_s,
                "yellow_s": self.yellow_s, "offset_s": self.offset_s}


@dataclass(frozen=True)
class Lane:
    lane_id: str
    path: tuple[Segment, ...]
    direction: int          # +1 with the road axis, -1 against it
    marker: str
    width: float = LANE_WIDTH
    approach: str | None = None

    def to_dict(self) -> dict[str, Any]:
        return {"lane_id": self.lane_id, "direction": self.direction,
                "marker": self.marker, "width": self.width, "approach": self.approach,
                "path": [seg.to_dict() for seg in self.path]}


@dataclass(frozen=True)
class StopLine:
    approach: str
    axis: str        # "x": the line is x = coord; "y": the line is y = coord
    coord: float
    lo: float        # segment extent on the other axis
    hi: float
    inbound: int     # travel sign along `axis` that counts as crossing inward

    def to_dict(self) -> dict[str, Any]:
        return {"approach": self.approach, "axis": self.axis, "coord": self.coord,
                "lo": self.lo, "hi": self.hi, "inbound": self.inbound}


@dataclass(frozen=True)
class RoadGeometry:
    town: str
    topology: str
    lanes: tuple[Lane, ...]
    stop_lines: tuple[StopLine, ...]
    signal_heads: tuple[tuple[str, SignalSchedule], ...]
    conflict_region: tuple[tuple[float, float], ...] | None
    speed_limit: float
    axis: Segment | None          # direction divider for straight/curve roads
    template_digest: str
    scenario: TemplateParams

    def to_dict(self) -> dict[str, Any]:
        return {
            "town": self.town,
            "topology": self.topology,
            "lanes": [lane.to_dict() for lane in self.lanes],
            "stop_lines": [sl.to_dict() for sl in self.stop_lines],
            "signal_heads": [[a, s.to_dict()] for a, s in self.signal_heads],
            "conflict_region": [list(p) for p in self.conflict_region] if self.conflict_region else None,
            "speed_limit": self.speed_limit,
            "axis": self.axis.to_dict() if self.axis else None,
            "template_digest": self.template_digest,
        }

    def digest(self) -> str:
        cached = self.__dict__.get("_digest")
        if cached is None:
            cached = digest64_json(self.to_dict())
            object.__setattr__(self, "_digest", cached)
        return cached

    def approaches(self) -> tuple[str, ...]:
        return tuple(sorted({sl.approach for sl in self.stop_lines}))

    def signal_for(self, approach: str) -> SignalSchedule | None:
        for name, schedule in self.signal_heads:
            if name == approach:
                return schedule
        return None


def _straight_lanes(ways: int, lanes_per_dir: int, marker: str) -> list[Lane]:
    out = []
    for i in range(lanes_per_dir):
        y = -(LANE_WIDTH / 2 + LANE_WIDTH * i)
        out.append(Lane(f"f{i}", ( _line((0.0, y), (ROAD_LENGTH, y)), ), 1, marker))
    if ways == 2:
        for i in range(lanes_per_dir):
            y = LANE_WIDTH / 2 + LANE_WIDTH * i
            out.append(Lane(f"r{i}", ( _line((ROAD_LENGTH, y), (0.0, y)), ), -1, marker))
    return out


def _curve_lanes(ways: int, lanes_per_dir: int, marker: str) -> list[Lane]:
    cx, cy = 0.0, CURVE_RADIUS
    a0 = -math.pi / 2.0
    out = []
    for i in range(lanes_per_dir):
        r = CURVE_RADIUS + LANE_WIDTH / 2 + LANE_WIDTH * i  # right of ccw travel = outside
        seg = ArcSeg(cx, cy, r, a0, CURVE_SWEEP, r * CURVE_SWEEP)
        out.append(Lane(f"f{i}", (seg,), 1, marker))
    if ways == 2:
        for i in range(lanes_per_dir):
            r = CURVE_RADIUS - (LANE_WIDTH / 2 + LANE_WIDTH * i)
            seg = ArcSeg(cx, cy, r, a0 + CURVE_SWEEP, -CURVE_SWEEP, r * CURVE_SWEEP)
            out.append(Lane(f"r{i}", (seg,), -1, marker))
    return out


_LEG_HEADINGS = {"south": (0.0, 1.0), "west": (1.0, 0.0), "north": (0.0, -1.0), "east": (-1.0, 0.0)}


def _junction_lanes(legs: tuple[str, ...], half: float, lanes_per_dir: int, marker: str) -> list[Lane]:
    """Incoming corridor lanes for each leg (proper right-hand placement)."""
    out = []
    for leg in legs:
        hx, hy = _LEG_HEADINGS[leg]
        for i in range(lanes_per_dir):
            off = LANE_WIDTH / 2 + LANE_WIDTH * i
            # lane center sits `off` to the right of the inbound heading
            rx, ry = hy, -hx
            sx = -hx * LEG_EXTENT + rx * off
            sy = -hy * LEG_EXTENT + ry * off
            ex = hx * LEG_EXTENT + rx * off
            ey = hy * LEG_EXTENT + ry * off
            out.append(Lane(f"{leg}_in{i}", (_line((sx, sy), (ex, ey)),), 1, marker, approach=leg))
    return out


def build_geometry(template: ScenarioTemplate) -> RoadGeometry:
    """Realize the template's symbolic town as analytic road geometry."""
    p = template.params
    marker = p.marker
    limit = p.speed_limit_mps if p.speed_limit_mps is not None else DEFAULT_SPEED_LIMIT

    lanes: list[Lane]
    stop_lines: list[StopLine] = []
    signal_heads: list[tuple[str, SignalSchedule]] = []
    region = None
    axis: Segment | None = None

    if p.topology == "straight":
        lanes = _straight_lanes(p.number_of_ways, p.lanes, marker)
        axis = _line((0.0, 0.0), (ROAD_LENGTH, 0.0))
    elif p.topology == "curve":
        lanes = _curve_lanes(p.number_of_ways, p.lanes, marker)
        axis = ArcSeg(0.0, CURVE_RADIUS, CURVE_RADIUS, -math.pi / 2.0, CURVE_SWEEP,
                      CURVE_RADIUS * CURVE_SWEEP)
    else:
        half = LANE_WIDTH * p.lanes
        if p.topology == "intersection":
            legs: tuple[str, ...] = ("south", "west", "north", "east")
        else:
            # T junction: through road west-east plus a stem; the stem sits on
            # the side the adversary comes from (south for "right", north for
            # "left" -- the ego runs west to east).
            stem = "north" if p.approach == "left" else "south"
            legs = ("west", "east", stem)
        lanes = _junction_lanes(legs, half, p.lanes, marker)
        region = ((-half, -half), (half, -half), (half, half), (-half, half))
        line_coord = half + STOP_LINE_SETBACK
        for leg in legs:
            hx, hy = _LEG_HEADINGS[leg]
            if leg in ("south", "north"):
                coord = -line_coord if leg == "south" else line_coord
                stop_lines.append(StopLine(leg, "y", coord, -half, half, int(hy)))
            else:
                coord = -line_coord if leg == "west" else line_coord
                stop_lines.append(StopLine(leg, "x", coord, -half, half, int(hx)))
        if "traffic_light" in p.signs:
            ego_leg = "south" if p.topology == "intersection" else "west"
            opposite = {"south": "north", "north": "south", "west": "east", "east": "west"}[ego_leg]
            for leg in legs:
                offset = 0.0 if leg in (ego_leg, opposite) else CROSS_OFFSET_S
                signal_heads.append((leg, SignalSchedule(offset_s=offset)))

    return RoadGeometry(
        town=p.town,
        topology=p.topology,
        lanes=tuple(lanes),
        stop_lines=tuple(stop_lines),
        signal_heads=tuple(signal_heads),
        conflict_region=region,
        speed_limit=limit,
        axis=axis,
        template_digest=template.digest(),
        scenario=p,
    )


# ---------------------------------------------------------------------------
# trace model


@dataclass(frozen=True)
class ActorState:
    actor_id: str
    x: float
    y: float
    heading: float
    speed: float
    lane_id: str
    lateral: float


@dataclass(frozen=True)
class Frame:
    t: float
    actors: tuple[ActorState, ...]
    signals: tuple[tuple[str, str], ...]


@dataclass(frozen=True)
class Trace:
    scenario_id: str
    instance_seed: int
    timestep_s: float
    horizon_s: float
    geometry_ref: str
    actor_types: dict[str, str]
    frames: tuple[Frame, ...]


@dataclass(frozen=True)
class CollisionEvent:
    t: float
    actor_a: str
    actor_b: str


def _sig6(x: float) -> float:
    return float(f"{x:.6g}")


def trace_to_jsonl(trace: Trace) -> str:
    """Header line then one frame object per line, 6 significant digits."""
    header = {
        "actor_types": trace.actor_types,
        "geometry_ref": trace.geometry_ref,
        "horizon_s": trace.horizon_s,
        "instance_seed": trace.instance_seed,
        "scenario_id": trace.scenario_id,
        "timestep_s": trace.timestep_s,
    }
    lines = [canonical_json(header)]
    for frame in trace.frames:
        lines.append(canonical_json({
            "t": _sig6(frame.t),
            "actors": [
                {"id": a.actor_id, "x": _sig6(a.x), "y": _sig6(a.y),
                 "heading": _sig6(a.heading), "speed": _sig6(a.speed),
                 "lane": a.lane_id, "lat": _sig6(a.lateral)}
                for a in frame.actors
            ],
            "signals": [{"approach": ap, "state": st} for ap, st in frame.signals],
        }))
    return "\n".join(lines) + "\n"


def trace_from_jsonl(text: str) -> Trace:
    lines = [line for line in text.splitlines() if line.strip()]
    header = json.loads(lines[0])
    frames = []
    for line in lines[1:]:
        raw = json.loads(line)
        frames.append(Frame(
            t=raw["t"],
            actors=tuple(
                ActorState(a["id"], a["x"], a["y"], a["heading"], a["speed"], a["lane"], a["lat"])
                for a in raw["actors"]
            ),
            signals=tuple((s["approach"], s["state"]) for s in raw["signals"]),
        ))
    return Trace(
        scenario_id=header["scenario_id"],
        instance_seed=header["instance_seed"],
        timestep_s=header["timestep_s"],
        horizon_s=header["horizon_s"],
        geometry_ref=header["geometry_ref"],
        actor_types=dict(header["actor_types"]),
        frames=tuple(frames),
    )


# ---------------------------------------------------------------------------
# oriented-rectangle overlap (separating axis)


def rect_corners(x: float, y: float, heading: float, length: float, width: float
                 ) -> tuple[tuple[float, float], ...]:
    c, s = math.cos(heading), math.sin(heading)
    hl, hw = length / 2.0, width / 2.0
    return tuple(
        (x + c * dx - s * dy, y + s * dx + c * dy)
        for dx, dy in ((hl, hw), (hl, -hw), (-hl, -hw), (-hl, hw))
    )


def rects_overlap(a: tuple[tuple[float, float], ...], b: tuple[tuple[float, float], ...]) -> bool:
    """Separating-axis test for convex quadrilaterals."""
    for poly, other in ((a, b), (b, a)):
        for i in range(len(poly)):
            x0, y0 = poly[i]
            x1, y1 = poly[(i + 1) % len(poly)]
            ax, ay = y1 - y0, x0 - x1  # edge normal
            min_a = min(ax * px + ay * py for px, py in poly)
            max_a = max(ax * px + ay * py for px, py in poly)
            min_b = min(ax * px + ay * py for px, py in other)
            max_b = max(ax * px + ay * py for px, py in other)
            if max_a < min_b or max_b < min_a:
                return False
    return True


# ---------------------------------------------------------------------------
# simulation


class DigestMismatchError(ValueError):
    pass


@dataclass
class _Mover:
    actor_id: str
    actor_type: str
    behavior: str
    path: tuple[Segment, ...]
    s: float
    speed: float
    lateral: float = 0.0
    # head-on incursion bookkeeping
    incursion: bool = False
    trigger_gap: float | None = None
    trigger_t: float | None = None
    ramp_target: float = LANE_WIDTH
    # stop behavior
    stop_s: float | None = None

    def state(self) -> tuple[float, float, float]:
        return path_point(self.path, self.s, self.lateral)


def _ego_path(geometry: RoadGeometry) -> tuple[Segment, ...]:
    if geometry.topology in ("straight", "curve"):
        return geometry.lanes[0].path  # innermost forward lane
    if geometry.topology == "intersection":
        off = LANE_WIDTH / 2.0
        return (_line((off, -LEG_EXTENT), (off, LEG_EXTENT)),)
    return (_line((-LEG_EXTENT, -LANE_WIDTH / 2.0), (LEG_EXTENT, -LANE_WIDTH / 2.0)),)


def _junction_adversary_path(geometry: RoadGeometry, behavior: str) -> tuple[Segment, ...]:
    """Adversary path for the configured junction approach.

    Canonical construction: 4-way conflicts cross from the west on the
    proper eastbound lane; T conflicts turn from the south stem.  The
    other side is the exact reflection about the ego approach line.
    """
    p = geometry.scenario
    half = LANE_WIDTH * p.lanes
    off = LANE_WIDTH / 2.0
    if p.topology == "intersection":
        if behavior == "go_forward":
            canonical: tuple[Segment, ...] = (_line((-LEG_EXTENT, -off), (LEG_EXTENT, -off)),)
        elif behavior == "turn_left":
            # west inbound, exit north
            radius = half + off
            arc = ArcSeg(-half, -off + radius, radius, -math.pi / 2.0, math.pi / 2.0,
                         radius * math.pi / 2.0)
            canonical = (
                _line((-LEG_EXTENT, -off), (-half, -off)),
                arc,
                _line((-half + radius, -off + radius), (-half + radius, LEG_EXTENT)),
            )
        elif behavior == "turn_right":
            # west inbound, exit south
            radius = half - off
            arc = ArcSeg(-half, -off - radius, radius, math.pi / 2.0, -math.pi / 2.0,
                         radius * math.pi / 2.0)
            canonical = (
                _line((-LEG_EXTENT, -off), (-half, -off)),
                arc,
                _line((-half + radius, -off - radius), (-half + radius, -LEG_EXTENT)),
            )
        else:  # static / stop keep the crossing corridor
            canonical = (_line((-LEG_EXTENT, -off), (LEG_EXTENT, -off)),)
        if p.approach == "right":
            return mirror_path_x(canonical, off)
        return canonical

    # T junction: stem at the south, ego west->east on y = -off.
    if behavior == "turn_right":
        radius = half - off
        arc = ArcSeg(off + radius, -half, radius, math.pi, -math.pi / 2.0, radius * math.pi / 2.0)
        canonical = (
            _line((off, -LEG_EXTENT), (off, -half)),
            arc,
            _line((off + radius, -half + radius), (LEG_EXTENT, -half + radius)),
        )
    else:  # turn_left (default for the stem) or go_forward fallback
        radius = half + off
        arc = ArcSeg(off - radius, -half, radius, 0.0, math.pi / 2.0, radius * math.pi / 2.0)
        canonical = (
            _line((off, -LEG_EXTENT), (off, -half)),
            arc,
            _line((off - radius, -half + radius), (-LEG_EXTENT, -half + radius)),
        )
    if p.approach == "left":
        return mirror_path_y(canonical, -off)
    return canonical


def _locate_lane(geometry: RoadGeometry, x: float, y: float) -> tuple[str, float]:
    best_id, best_lat = "", math.inf
    for lane in geometry.lanes:
        s, lat = lane.path[0].locate(x, y) if len(lane.path) == 1 else _locate_multi(lane.path, x, y)
        if -5.0 <= s <= path_length(lane.path) + 5.0 and abs(lat) < abs(best_lat):
            best_id, best_lat = lane.lane_id, lat
    if best_id == "":
        best_id, best_lat = geometry.lanes[0].lane_id, 0.0
    return best_id, best_lat


def _locate_multi(path: tuple[Segment, ...], x: float, y: float) -> tuple[float, float]:
    offset, best = 0.0, (0.0, math.inf)
    for seg in path:
        s, lat = seg.locate(x, y)
        if -1.0 <= s <= seg.length + 1.0 and abs(lat) < abs(best[1]):
            best = (offset + s, lat)
        offset += seg.length
    return best


def _build_movers(instance: ScenarioInstance, geometry: RoadGeometry) -> list[_Mover]:
    p = geometry.scenario
    b = instance.bindings
    ego_speed = b["ego_speed"]
    npc_speed = b["npc_speed"]
    ego_init = b["EGO_INIT_DIST"]
    npc_init = b["NPC_INIT_DIST"]

    ego_path = _ego_path(geometry)
    movers: list[_Mover] = []

    adversary = next((n for n in p.npcs if n.adversary), None)
    junction = p.topology in ("intersection", "t_intersection")

    if junction:
        adv_path = _junction_adversary_path(geometry, adversary.behavior if adversary else "go_forward")
        cross = path_intersection(ego_path, adv_path)
        if cross is None:
            raise ValueError("adversary path never crosses the ego path")
        s_cell_ego, s_cell_adv = cross
        ego_s0 = s_cell_ego - (EGO_RUNUP_M + ego_init)
        movers.append(_Mover(p.ego_id, "truck" if p.ego_model.endswith("european_hgv") else "car",
                             p.ego_behavior, ego_path, ego_s0, ego_speed))
        if adversary is not None:
            t_cell = (EGO_RUNUP_M + ego_init) / ego_speed
            lead = npc_speed * max(t_cell - ARRIVAL_LEAD_S, 0.0)
            adv_s0 = s_cell_adv - max(lead, npc_init)
            speed = 0.0 if adversary.behavior == "static" else npc_speed
            movers.append(_Mover(adversary.actor_id, adversary.actor_type, adversary.behavior,
                                 adv_path, adv_s0, speed))
    else:
        half_len = path_length(ego_path) / 2.0
        if p.configuration == "head_on":
            ego_s0 = half_len - ego_init
        else:
            ego_s0 = ego_init
        movers.append(_Mover(p.ego_id, "truck" if p.ego_model.endswith("european_hgv") else "car",
                             p.ego_behavior, ego_path, ego_s0, ego_speed))
        if adversary is not None:
            if p.configuration == "head_on":
                reverse = next(lane for lane in geometry.lanes if lane.direction == -1)
                adv_s0 = path_length(reverse.path) / 2.0 - npc_init
                mover = _Mover(adversary.actor_id, adversary.actor_type, adversary.behavior,
                               reverse.path, adv_s0,
                               0.0 if adversary.behavior == "static" else npc_speed)
                if adversary.behavior == "go_forward":
                    mover.incursion = True
                    mover.trigger_gap = npc_init
                movers.append(mover)
            else:  # car_following: the adversary leads the ego in its lane
                adv_s0 = ego_s0 + npc_init
                movers.append(_Mover(adversary.actor_id, adversary.actor_type, adversary.behavior,
                                     ego_path, adv_s0,
                                     0.0 if adversary.behavior == "static" else npc_speed))

    # Background npcs: fixed 25 m placement along the ego lane (front/behind)
    # or the neighbouring corridor (left/right), fixed speed from the template.
    for npc in p.npcs:
        if adversary is not None and npc.actor_id == adversary.actor_id:
            continue
        speed = instance.fixed.get(f"{npc.actor_id}_speed", npc.speed_mps)
        ego_s0 = movers[0].s
        offset = 25.0 if npc.spatial_relation == "front" else -25.0
        mover = _Mover(npc.actor_id, npc.actor_type, npc.behavior, movers[0].path,
                       ego_s0 + offset, 0.0 if npc.behavior == "static" else speed)
        if npc.spatial_relation in ("left", "right"):
            mover.s = ego_s0
            mover.lateral = LANE_WIDTH if npc.spatial_relation == "left" else -LANE_WIDTH
        movers.append(mover)

    # stop behavior: brake to rest ahead of the stop line (junctions) or
    # after the comfortable braking distance (open road)
    for mover in movers:
        if mover.behavior == "stop":
            brake_dist = mover.speed * mover.speed / (2.0 * BRAKE_DECEL)
            target = mover.s + brake_dist
            line_s = _stop_line_s(geometry, mover)
            if line_s is not None:
                length, _ = VEHICLE_DIMS[mover.actor_type]
                target = min(target, line_s - length / 2.0 - 0.2)
            mover.stop_s = target
    return movers


def _stop_line_s(geometry: RoadGeometry, mover: _Mover) -> float | None:
    """Arc length at which the mover's path crosses its approach stop line."""
    x0, y0, h0 = path_point(mover.path, mover.s, mover.lateral)
    approach = _approach_of(x0, y0, h0)
    for sl in geometry.stop_lines:
        if sl.approach != approach:
            continue
        seg = (_line((sl.coord, sl.lo - 50), (sl.coord, sl.hi + 50)) if sl.axis == "x"
               else _line((sl.lo - 50, sl.coord), (sl.hi + 50, sl.coord)))
        cross = path_intersection(mover.path, (seg,))
        if cross is not None:
            return cross[0]
    return None


def _approach_of(x: float, y: float, heading: float) -> str:
    hx, hy = math.cos(heading), math.sin(heading)
    if abs(hx) >= abs(hy):
        return "west" if hx > 0 else "east"
    return "south" if hy > 0 else "north"


def simulate(instance: ScenarioInstance, geometry: RoadGeometry) -> Trace:
    """Fixed-timestep scripted simulation.

    Ends at the horizon or one second after the first collision frame.
    """
    if instance.template_digest != geometry.template_digest:
        raise DigestMismatchError(
            f"instance was sampled from template {instance.template_digest}, "
            f"geometry was built from {geometry.template_digest}")

    p = geometry.scenario
    movers = _build_movers(instance, geometry)
    dims = {m.actor_id: VEHICLE_DIMS[m.actor_type] for m in movers}
    actor_types = {m.actor_id: m.actor_type for m in movers}

    frames: list[Frame] = []
    total_frames = int(HORIZON_S / TIMESTEP_S) + 1
    end_frame = total_frames - 1
    collided = False

    ego = movers[0]
    for k in range(total_frames):
        # snap to the decimal grid so serialized times reload identically
        t = round(k * TIMESTEP_S, 9)

        # head-on incursion trigger and lateral ramp
        for m in movers[1:]:
            if m.incursion:
                if m.trigger_t is None:
                    ex, ey, _ = ego.state()
                    mx, my, _ = m.state()
                    if math.hypot(ex - mx, ey - my) <= m.trigger_gap:
                        m.trigger_t = t
                if m.trigger_t is not None:
                    progress = min((t - m.trigger_t) / RAMP_DURATION_S, 1.0)
                    m.lateral = m.ramp_target * progress

        states = []
        for m in movers:
            x, y, heading = m.state()
            lane_id, lateral = _locate_lane(geometry, x, y)
            states.append(ActorState(m.actor_id, x, y, heading, m.speed, lane_id, lateral))
        signals = tuple((leg, sched.state(t)) for leg, sched in geometry.signal_heads)
        frames.append(Frame(t=t, actors=tuple(states), signals=signals))

        if not collided and len(movers) > 1:
            corners = {
                st.actor_id: rect_corners(st.x, st.y, st.heading, *dims[st.actor_id])
                for st in states
            }
            ids = [m.actor_id for m in movers]
            for i in range(len(ids)):
                for j in range(i + 1, len(ids)):
                    if rects_overlap(corners[ids[i]], corners[ids[j]]):
                        collided = True
                        end_frame = min(end_frame, k + int(1.0 / TIMESTEP_S))
                        break
                if collided:
                    break

        if k >= end_frame:
            break

        # advance one step
        for m in movers:
            if m.behavior == "static":
                continue
            if m.behavior == "stop" and m.stop_s is not None:
                remaining = m.stop_s - m.s
                if remaining <= m.speed * m.speed / (2.0 * BRAKE_DECEL):
                    m.speed = max(0.0, m.speed - BRAKE_DECEL * TIMESTEP_S)
            m.s += m.speed * TIMESTEP_S
            if m.stop_s is not None and m.s > m.stop_s:
                m.s = m.stop_s
                m.speed = 0.0

    return Trace(
        scenario_id=p.scenario_id,
        instance_seed=instance.instance_seed,
        timestep_s=TIMESTEP_S,
        horizon_s=HORIZON_S,
        geometry_ref=geometry.digest(),
        actor_types=actor_types,
        frames=tuple(frames),
    )


def detect_collisions(trace: Trace) -> list[CollisionEvent]:
    """First overlapping frame per actor pair (separating-axis test)."""
    events: list[CollisionEvent] = []
    seen: set[tuple[str, str]] = set()
    for frame in trace.frames:
        corners = {
            a.actor_id: rect_corners(a.x, a.y, a.heading, *VEHICLE_DIMS[trace.actor_types[a.actor_id]])
            for a in frame.actors
        }
        ids = sorted(corners)
        for i in range(len(ids)):
            for j in range(i + 1, len(ids)):
                pair = (ids[i], ids[j])
                if pair in seen:
                    continue
                if rects_overlap(corners[pair[0]], corners[pair[1]]):
                    seen.add(pair)
                    events.append(CollisionEvent(t=frame.t, actor_a=pair[0], actor_b=pair[1]))
    return events
