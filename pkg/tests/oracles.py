"""Independent geometry used to check the planner: no shapely, no shared helpers."""
import math

import numpy as np


def pitch_matrix(tilt_deg):
    # camera frame: x right, y optical axis at the horizon, z up; pitch down about x
    t = math.radians(tilt_deg)
    return np.array([[1.0, 0.0, 0.0], [0.0, math.cos(t), math.sin(t)], [0.0, -math.sin(t), math.cos(t)]])


def ray_ground_hit(origin, tilt_deg, h_fov, v_fov, xn, yn):
    """Ground point seen at normalised image coords (xn right, yn up, both in [-1, 1])."""
    d_cam = np.array([xn * math.tan(math.radians(h_fov) / 2), 1.0, yn * math.tan(math.radians(v_fov) / 2)])
    d = pitch_matrix(tilt_deg) @ d_cam
    # origin + s*d = (gx, gy, 0)  ->  [d | -ex | -ey] @ (s, gx, gy) = -origin
    a = np.column_stack([d, [-1.0, 0.0, 0.0], [0.0, -1.0, 0.0]])
    s, gx, gy = np.linalg.solve(a, -np.asarray(origin, dtype=float))
    assert s > 0
    return gx, gy


def shoelace(poly):
    x = np.array([p[0] for p in poly])
    y = np.array([p[1] for p in poly])
    return 0.5 * abs(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def clip_convex(subject, clipper):
    """Sutherland-Hodgman; both polygons convex and counter-clockwise."""
    out = list(subject)
    n = len(clipper)
    for i in range(n):
        a, b = clipper[i], clipper[(i + 1) % n]

        def inside(p):
            return (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]) >= 0

        def cross(p, q):
            x1, y1, x2, y2 = p[0], p[1], q[0], q[1]
            x3, y3, x4, y4 = a[0], a[1], b[0], b[1]
            den = (x1 - x2) * (y3 - y4) - (y1 - y2) * (x3 - x4)
            t = ((x1 - x3) * (y3 - y4) - (y1 - y3) * (x3 - x4)) / den
            return (x1 + t * (x2 - x1), y1 + t * (y2 - y1))

        inp, out = out, []
        if not inp:
            break
        prev = inp[-1]
        for cur in inp:
            if inside(cur):
                if not inside(prev):
                    out.append(cross(prev, cur))
                out.append(cur)
            elif inside(prev):
                out.append(cross(prev, cur))
            prev = cur
    return out


def overlap_oracle(a, b):
    inter = clip_convex(a, b)
    if len(inter) < 3:
        return 0.0
    return shoelace(inter) / min(shoelace(a), shoelace(b))


def point_in_polygon(pt, poly):
    x, y = pt
    inside = False
    n = len(poly)
    for i in range(n):
        (x1, y1), (x2, y2) = poly[i], poly[(i + 1) % n]
        if (y1 > y) != (y2 > y) and x < x1 + (y - y1) * (x2 - x1) / (y2 - y1):
            inside = not inside
    return inside
