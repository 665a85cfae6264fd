"""Nine-image capture geometry over a pile footprint.

The pile surface is the plane z = 0. The camera flies at a fixed heading along
+y; ``camera_tilt`` is the depression angle of the optical axis below the
horizon, so 90 degrees looks straight down. Footprints are the four corner
rays of the view frustum intersected with the ground plane.
"""

from __future__ import annotations

import csv
import io
import itertools
import json
import math
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np
from shapely.geometry import Polygon
from shapely.ops import unary_union

from .errors import CoverageInfeasible, DomainError, ParseError, PolygonDegenerate, TiltExceedsLimit

Point = Tuple[float, float]
Quad = Tuple[Point, Point, Point, Point]

DEFAULT_ALTITUDE_M = 0.5
DEFAULT_TILT_DEG = 83.0
DEFAULT_OVERLAP_BUDGET = 0.10
# below this share of the pile seen by the union of footprints, nine images do not describe it
DEFAULT_MIN_COVERAGE = 0.25


@dataclass(frozen=True)
class CameraModel:
    h_fov: float = 56.0  # degrees
    v_fov: float = 43.0
    width: int = 856  # px
    height: int = 480
    max_tilt: float = 83.0  # degrees

    def __post_init__(self):
        for name in ("h_fov", "v_fov"):
            v = getattr(self, name)
            if not 0.0 < v < 180.0:
                raise ValueError(f"{name} must lie in (0, 180), got {v}")
        if self.width < 1 or self.height < 1:
            raise ValueError("image size must be positive")
        if not self.max_tilt <= 90.0:
            raise ValueError(f"max_tilt must be <= 90, got {self.max_tilt}")


@dataclass(frozen=True)
class Waypoint:
    position: Tuple[float, float, float]  # m; z above the pile surface
    camera_tilt: float  # degrees below the horizon

    def __post_init__(self):
        if not self.position[2] > 0:
            raise ValueError(f"waypoint altitude must be positive, got {self.position[2]}")


@dataclass(frozen=True)
class FlightPlan:
    waypoints: Tuple[Waypoint, ...]
    pile_polygon: Tuple[Point, ...]
    footprints: Tuple[Quad, ...] = ()
    overlap_budget: float = DEFAULT_OVERLAP_BUDGET

    def max_overlap(self) -> float:
        return max_pairwise_overlap(self.footprints)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["idx", "x_m", "y_m", "z_m", "tilt_deg"])
        for i, wp in enumerate(self.waypoints):
            x, y, z = wp.position
            w.writerow([i, _fmt(x), _fmt(y), _fmt(z), _fmt(wp.camera_tilt)])
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {
            "pile_polygon": [list(p) for p in self.pile_polygon],
            "overlap_budget": self.overlap_budget,
            "max_overlap": self.max_overlap(),
            "waypoints": [
                {"idx": i, "position": list(wp.position), "tilt_deg": wp.camera_tilt, "footprint": [list(p) for p in fp]}
                for i, (wp, fp) in enumerate(zip(self.waypoints, self.footprints))
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def _fmt(v: float) -> str:
    return format(float(v), ".6f")


# --- geometry -----------------------------------------------------------------

def camera_axes(tilt_deg: float) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(forward, right, up) unit vectors for a camera heading +y, pitched ``tilt_deg`` below the horizon."""
    t = math.radians(tilt_deg)
    forward = np.array([0.0, math.cos(t), -math.sin(t)])
    right = np.array([1.0, 0.0, 0.0])
    up = np.cross(right, forward)
    return forward, right, up


def footprint(cam: CameraModel, wp: Waypoint) -> Quad:
    """Ground quadrilateral seen by the camera, counter-clockwise from the near-left corner."""
    forward, right, up = camera_axes(wp.camera_tilt)
    th = math.tan(math.radians(cam.h_fov) / 2.0)
    tv = math.tan(math.radians(cam.v_fov) / 2.0)
    origin = np.asarray(wp.position, dtype=float)
    corners = []
    for u, v in ((-1, -1), (1, -1), (1, 1), (-1, 1)):
        d = forward + u * th * right + v * tv * up
        if not d[2] < 0:
            raise DomainError(f"frustum ray ({u}, {v}) never reaches the ground at tilt {wp.camera_tilt} deg")
        s = -origin[2] / d[2]
        p = origin + s * d
        corners.append((float(p[0]), float(p[1])))
    return tuple(corners)


def polygon_area(pts: Sequence[Point]) -> float:
    return Polygon(pts).area


def overlap_fraction(a: Sequence[Point], b: Sequence[Point]) -> float:
    """area(a & b) / min(area(a), area(b)); 0 when either polygon has no area."""
    pa, pb = Polygon(a), Polygon(b)
    smaller = min(pa.area, pb.area)
    if smaller <= 0:
        return 0.0
    return min(1.0, pa.intersection(pb).area / smaller)


def max_pairwise_overlap(quads: Sequence[Sequence[Point]]) -> float:
    return max((overlap_fraction(a, b) for a, b in itertools.combinations(quads, 2)), default=0.0)


def ground_sample_distance(cam: CameraModel, distance: float) -> float:
    """Ground size of one pixel (mm) across the image width at ``distance`` m."""
    if not distance > 0:
        raise DomainError(f"distance must be positive, got {distance}")
    return 2.0 * distance * math.tan(math.radians(cam.h_fov) / 2.0) / cam.width * 1000.0


# --- planning -----------------------------------------------------------------

def _pile(points: Sequence[Point]) -> Polygon:
    pts = [tuple(map(float, p)) for p in points]
    if len(pts) < 3:
        raise PolygonDegenerate(f"pile polygon needs at least 3 vertices, got {len(pts)}")
    poly = Polygon(pts)
    if not poly.is_valid or poly.area <= 1e-12:
        raise PolygonDegenerate("pile polygon is self-intersecting or has no area")
    return poly


def _translated(q: Quad, dx: float, dy: float) -> Quad:
    return tuple((x + dx, y + dy) for x, y in q)


def _min_spacing(q: Quad, axis: int, budget: float) -> float:
    """Smallest shift along ``axis`` that keeps two copies of ``q`` within the overlap budget."""
    xs = [p[axis] for p in q]
    hi = max(xs) - min(xs)
    lo = 0.0
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        shift = (mid, 0.0) if axis == 0 else (0.0, mid)
        if overlap_fraction(q, _translated(q, *shift)) <= budget:
            hi = mid
        else:
            lo = mid
    return hi


def plan_flight(
    pile_polygon: Sequence[Point],
    altitude: float = DEFAULT_ALTITUDE_M,
    tilt: float = DEFAULT_TILT_DEG,
    cam: CameraModel = CameraModel(),
    overlap_budget: float = DEFAULT_OVERLAP_BUDGET,
    grid: Tuple[int, int] = (3, 3),
    min_coverage: float = DEFAULT_MIN_COVERAGE,
) -> FlightPlan:
    """Lay a grid of waypoints over the pile's bounding box.

    Footprint centroids sit on the grid cell centres. When cells are smaller than
    the footprint allows, the grid is spread around the box centre until the
    overlap budget holds.
    """
    if tilt > cam.max_tilt:
        raise TiltExceedsLimit(f"tilt {tilt} deg exceeds the camera limit of {cam.max_tilt} deg")
    if not altitude > 0:
        raise ValueError(f"altitude must be positive, got {altitude}")
    pile = _pile(pile_polygon)
    nx, ny = grid

    template = footprint(cam, Waypoint((0.0, 0.0, altitude), tilt))
    c = Polygon(template).centroid
    minx, miny, maxx, maxy = pile.bounds
    sx = max((maxx - minx) / nx, _min_spacing(template, 0, overlap_budget))
    sy = max((maxy - miny) / ny, _min_spacing(template, 1, overlap_budget))
    mx, my = 0.5 * (minx + maxx), 0.5 * (miny + maxy)

    waypoints, quads = [], []
    for j in range(ny):  # rows from the near edge, each row left to right
        for i in range(nx):
            cx = mx + (i - (nx - 1) / 2.0) * sx
            cy = my + (j - (ny - 1) / 2.0) * sy
            wp = Waypoint((cx - c.x, cy - c.y, float(altitude)), float(tilt))
            waypoints.append(wp)
            quads.append(_translated(template, wp.position[0], wp.position[1]))

    for k, q in enumerate(quads):
        if Polygon(q).intersection(pile).area <= 0:
            raise CoverageInfeasible(f"footprint {k} misses the pile; the pile is too small for a {nx}x{ny} grid")
    covered = unary_union([Polygon(q) for q in quads]).intersection(pile).area / pile.area
    if covered < min_coverage:
        raise CoverageInfeasible(
            f"{nx * ny} footprints at {altitude} m cover {covered:.1%} of the pile, below {min_coverage:.0%}"
        )
    plan = FlightPlan(tuple(waypoints), tuple(tuple(map(float, p)) for p in pile_polygon), tuple(quads), overlap_budget)
    worst = plan.max_overlap()
    if worst > overlap_budget + 1e-9:
        raise CoverageInfeasible(f"pairwise overlap {worst:.3f} exceeds the budget {overlap_budget}")
    return plan


def read_polygon(text: str) -> List[Point]:
    """Pile polygon from JSON (list of [x, y] or {"polygon": [...]}) or CSV lines of x,y."""
    stripped = text.strip()
    if stripped.startswith("[") or stripped.startswith("{"):
        try:
            data = json.loads(stripped)
        except json.JSONDecodeError as exc:
            raise ParseError(f"invalid polygon JSON: {exc}") from None
        if isinstance(data, dict):
            data = data.get("polygon", data.get("pile_polygon"))
        try:
            return [(float(p[0]), float(p[1])) for p in data]
        except (TypeError, ValueError, IndexError):
            raise ParseError("polygon JSON must be a list of [x, y] pairs") from None
    pts = []
    for lineno, row in enumerate(csv.reader(io.StringIO(text)), start=1):
        if not row or not "".join(row).strip() or row[0].lstrip().startswith("#"):
            continue
        try:
            pts.append((float(row[0]), float(row[1])))
        except (ValueError, IndexError):
            if lineno == 1:
                continue  # header
            raise ParseError(f"expected x,y got {row!r}", line=lineno) from None
    return pts
