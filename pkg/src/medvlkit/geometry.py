"""Exact geometric primitives on the shared 0-1000 coordinate grid.

All annotations live on a square grid of integer units in [0, 1000],
regardless of the source image resolution. Orientation conventions follow
image coordinates (y axis pointing down): a clockwise boundary has
non-positive signed area under :func:`signed_area`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

GRID_MAX = 1000
POLYGON_POINTS = 25


class GeometryError(ValueError):
    pass


class InvalidExtentError(GeometryError):
    pass


class PointOutOfImageError(GeometryError):
    pass


class DegeneratePolygonError(GeometryError):
    pass


def _round_half_up(v: float) -> int:
    # symmetric, reproducible rounding (0.5 always goes up)
    return int(math.floor(v + 0.5))


@dataclass(frozen=True, order=True)
class GridPoint2:
    x: int
    y: int

    def __post_init__(self):
        for name in ("x", "y"):
            v = getattr(self, name)
            if not isinstance(v, int):
                raise GeometryError(f"{name} must be an integer grid unit, got {v!r}")
            if not 0 <= v <= GRID_MAX:
                raise GeometryError(f"{name}={v} outside grid range [0, {GRID_MAX}]")


@dataclass(frozen=True, order=True)
class NormalizedBox2D:
    """Axis-aligned corner box on the grid with a class index."""

    cls_id: int
    x1: int
    y1: int
    x2: int
    y2: int

    def __post_init__(self):
        if not isinstance(self.cls_id, int) or self.cls_id < 0:
            raise GeometryError(f"cls_id must be a non-negative integer, got {self.cls_id!r}")
        for name in ("x1", "y1", "x2", "y2"):
            v = getattr(self, name)
            if not isinstance(v, int) or not 0 <= v <= GRID_MAX:
                raise GeometryError(f"{name}={v!r} outside grid range [0, {GRID_MAX}]")
        if self.x1 > self.x2 or self.y1 > self.y2:
            raise GeometryError(
                f"box corners not ordered: ({self.x1},{self.y1})..({self.x2},{self.y2})"
            )

    @property
    def area(self) -> int:
        return (self.x2 - self.x1) * (self.y2 - self.y1)

    def contains(self, p: GridPoint2) -> bool:
        return self.x1 <= p.x <= self.x2 and self.y1 <= p.y <= self.y2


@dataclass(frozen=True)
class Box3D:
    """Center/edge-length box on the 3D grid.

    Centers must lie on the grid; the half-extent may spill outside
    [0, 1000]. Spilling is reported through :attr:`spills_grid` rather than
    silently clamped.
    """

    center: tuple[int, int, int]
    lengths: tuple[int, int, int]

    def __post_init__(self):
        if len(self.center) != 3 or len(self.lengths) != 3:
            raise GeometryError("center and lengths must be triples")
        for c in self.center:
            if not isinstance(c, int) or not 0 <= c <= GRID_MAX:
                raise GeometryError(f"center coordinate {c!r} outside [0, {GRID_MAX}]")
        for l in self.lengths:
            if not isinstance(l, int) or l < 0:
                raise GeometryError(f"length {l!r} must be a non-negative integer")

    @property
    def spills_grid(self) -> bool:
        return any(2 * c - l < 0 or 2 * c + l > 2 * GRID_MAX
                   for c, l in zip(self.center, self.lengths))

    @property
    def volume(self) -> float:
        a, b, c = self.lengths
        return float(a) * b * c


@dataclass(frozen=True)
class RawPolygon:
    """Pre-canonical polygon in pixel space, implicitly closed."""

    points: tuple[tuple[float, float], ...]
    extent: tuple[int, int]

    def __post_init__(self):
        w, h = self.extent
        if w <= 0 or h <= 0:
            raise InvalidExtentError(f"extent must be positive, got {self.extent}")
        if len(self.points) < 3:
            raise GeometryError(f"polygon needs >= 3 points, got {len(self.points)}")
        if len(set(self.points)) < 3:
            raise GeometryError("polygon needs >= 3 distinct points")
        for x, y in self.points:
            if not (0 <= x <= w and 0 <= y <= h):
                raise PointOutOfImageError(f"point ({x}, {y}) outside extent {self.extent}")


@dataclass(frozen=True)
class CanonicalPolygon:
    """Exactly 25 grid points; produced clockwise starting nearest origin.

    Only structural invariants (point count, grid range) are enforced here;
    orientation and start-point are guaranteed by :func:`canonicalize_polygon`
    and checkable via :func:`canonical_violations` so that codec parsing can
    represent non-canonical model output with warnings.
    """

    points: tuple[GridPoint2, ...]

    def __post_init__(self):
        if len(self.points) != POLYGON_POINTS:
            raise GeometryError(
                f"canonical polygon must have {POLYGON_POINTS} points, got {len(self.points)}"
            )


def normalize_point(p: tuple[float, float], extent: tuple[int, int]) -> GridPoint2:
    """Map a pixel-space point onto the [0, 1000] grid (round half up)."""
    w, h = extent
    if w <= 0 or h <= 0:
        raise InvalidExtentError(f"extent must be positive, got {extent}")
    x, y = p
    if not (0 <= x <= w and 0 <= y <= h):
        raise PointOutOfImageError(f"point ({x}, {y}) outside extent {extent}")
    gx = min(GRID_MAX, max(0, _round_half_up(x / w * GRID_MAX)))
    gy = min(GRID_MAX, max(0, _round_half_up(y / h * GRID_MAX)))
    return GridPoint2(gx, gy)


def denormalize_point(g: GridPoint2, extent: tuple[int, int]) -> tuple[float, float]:
    """Inverse of :func:`normalize_point`, returning float pixel coordinates."""
    w, h = extent
    if w <= 0 or h <= 0:
        raise InvalidExtentError(f"extent must be positive, got {extent}")
    return (g.x / GRID_MAX * w, g.y / GRID_MAX * h)


def iou_box2d(a: NormalizedBox2D, b: NormalizedBox2D) -> float:
    """Intersection over union of two grid boxes (class ids ignored).

    Zero-area union is defined as 1.0 when the boxes are identical
    (degenerate but equal), else 0.0.
    """
    ix = min(a.x2, b.x2) - max(a.x1, b.x1)
    iy = min(a.y2, b.y2) - max(a.y1, b.y1)
    inter = max(0, ix) * max(0, iy)
    union = a.area + b.area - inter
    if union == 0:
        same = (a.x1, a.y1, a.x2, a.y2) == (b.x1, b.y1, b.x2, b.y2)
        return 1.0 if same else 0.0
    return inter / union


def iou_box3d(a: Box3D, b: Box3D) -> float:
    """Axis-aligned volume IoU via doubled integer corners (exact)."""
    inter2 = 1
    for axis in range(3):
        lo = max(2 * a.center[axis] - a.lengths[axis], 2 * b.center[axis] - b.lengths[axis])
        hi = min(2 * a.center[axis] + a.lengths[axis], 2 * b.center[axis] + b.lengths[axis])
        inter2 *= max(0, hi - lo)
    vol_a = 8 * a.lengths[0] * a.lengths[1] * a.lengths[2]
    vol_b = 8 * b.lengths[0] * b.lengths[1] * b.lengths[2]
    union2 = vol_a + vol_b - inter2
    if union2 == 0:
        return 1.0 if (a.center, a.lengths) == (b.center, b.lengths) else 0.0
    return inter2 / union2


def signed_area(points) -> float:
    """Shoelace area in image coordinates: clockwise on screen gives <= 0."""
    n = len(points)
    total = 0.0
    for i in range(n):
        x1, y1 = _xy(points[i])
        x2, y2 = _xy(points[(i + 1) % n])
        total += x2 * y1 - x1 * y2
    return total / 2.0


def perimeter(points) -> float:
    n = len(points)
    total = 0.0
    for i in range(n):
        x1, y1 = _xy(points[i])
        x2, y2 = _xy(points[(i + 1) % n])
        total += math.hypot(x2 - x1, y2 - y1)
    return total


def _xy(p):
    if isinstance(p, GridPoint2):
        return float(p.x), float(p.y)
    return float(p[0]), float(p[1])


def _nearest_boundary_point_to_origin(ring):
    """Closest boundary point to (0,0); edge interiors count.

    Returns (edge_index, param_t, (x, y)). Distance ties break on smaller y,
    then smaller x.
    """
    best = None
    n = len(ring)
    for i in range(n):
        ax, ay = ring[i]
        bx, by = ring[(i + 1) % n]
        dx, dy = bx - ax, by - ay
        seg2 = dx * dx + dy * dy
        if seg2 == 0:
            t = 0.0
        else:
            t = min(1.0, max(0.0, -(ax * dx + ay * dy) / seg2))
        px, py = ax + t * dx, ay + t * dy
        key = (px * px + py * py, py, px)
        if best is None or key < best[0]:
            best = (key, i, t, (px, py))
    _, i, t, point = best
    return i, t, point


def resample_boundary(raw: RawPolygon, n_samples: int = POLYGON_POINTS) -> list[tuple[float, float]]:
    """Arc-equidistant pixel-space samples of the boundary.

    The perimeter is split into `n_samples` equal arcs; the walk starts at
    the boundary point nearest the pixel origin and proceeds clockwise in
    image coordinates (degenerate zero-area rings keep their input
    direction). Returned samples are floats, prior to grid normalization.
    """
    ring = [(float(x), float(y)) for x, y in raw.points]
    total = perimeter(ring)
    if total <= 0.0:
        raise DegeneratePolygonError("polygon has zero perimeter")
    if signed_area(ring) > 0:
        ring.reverse()

    edge_idx, t, start = _nearest_boundary_point_to_origin(ring)
    n = len(ring)
    # unrolled vertex walk beginning at the start point
    walk = [start]
    if t < 1.0:
        walk.append(ring[(edge_idx + 1) % n])
    for k in range(2, n + 1):
        walk.append(ring[(edge_idx + k) % n])
    walk.append(start)  # close the loop

    seg_lens = [math.hypot(walk[i + 1][0] - walk[i][0], walk[i + 1][1] - walk[i][1])
                for i in range(len(walk) - 1)]
    spacing = total / n_samples

    samples = []
    seg = 0
    consumed = 0.0
    for k in range(n_samples):
        target = k * spacing
        while seg < len(seg_lens) - 1 and consumed + seg_lens[seg] <= target:
            consumed += seg_lens[seg]
            seg += 1
        (x1, y1), (x2, y2) = walk[seg], walk[seg + 1]
        frac = 0.0 if seg_lens[seg] == 0 else (target - consumed) / seg_lens[seg]
        frac = min(1.0, frac)
        samples.append((x1 + frac * (x2 - x1), y1 + frac * (y2 - y1)))
    return samples


def canonicalize_polygon(raw: RawPolygon) -> CanonicalPolygon:
    """Resample a pixel-space boundary to the 25-point canonical form.

    Combines :func:`resample_boundary` with grid normalization of every
    sampled point.
    """
    samples = resample_boundary(raw)
    grid_points = tuple(normalize_point(p, raw.extent) for p in samples)
    return CanonicalPolygon(grid_points)


def canonical_violations(poly: CanonicalPolygon) -> list[str]:
    """Check the soft canonical-form invariants, returning violation notes.

    Grid rounding can perturb orientation and start-point distances by a
    fraction of a unit, so both checks carry a small jitter allowance.
    """
    violations = []
    pts = [(float(p.x), float(p.y)) for p in poly.points]
    area = signed_area(pts)
    if area > 0 and area > perimeter(pts):
        violations.append(f"orientation not clockwise (signed area {area:.1f} > 0)")
    d2 = [x * x + y * y for x, y in pts]
    first = math.sqrt(d2[0])
    nearest = math.sqrt(min(d2))
    if first > nearest + 1.5:
        violations.append(
            f"start point not nearest origin (dist {first:.2f} vs {nearest:.2f})"
        )
    return violations


def is_self_intersecting(points) -> bool:
    """True if any two non-adjacent boundary edges properly cross."""
    pts = [_xy(p) for p in points]
    n = len(pts)

    def orient(p, q, r):
        v = (q[0] - p[0]) * (r[1] - p[1]) - (q[1] - p[1]) * (r[0] - p[0])
        return (v > 0) - (v < 0)

    for i in range(n):
        a1, a2 = pts[i], pts[(i + 1) % n]
        for j in range(i + 1, n):
            if j == i or (j + 1) % n == i or (i + 1) % n == j:
                continue
            b1, b2 = pts[j], pts[(j + 1) % n]
            o1, o2 = orient(a1, a2, b1), orient(a1, a2, b2)
            o3, o4 = orient(b1, b2, a1), orient(b1, b2, a2)
            if o1 != o2 and o3 != o4 and 0 not in (o1, o2, o3, o4):
                return True
    return False


def rasterize_polygon(poly: CanonicalPolygon, raster: int) -> np.ndarray:
    """Even-odd scanline fill of the polygon on a raster x raster grid.

    Cells sample the polygon at their centers over the [0, 1000] square.
    Self-intersecting boundaries are accepted; even-odd parity decides
    membership.
    """
    if raster < 64:
        raise GeometryError(f"raster resolution must be >= 64, got {raster}")
    xs = np.array([p.x for p in poly.points], dtype=np.float64)
    ys = np.array([p.y for p in poly.points], dtype=np.float64)
    x2 = np.roll(xs, -1)
    y2 = np.roll(ys, -1)

    centers = (np.arange(raster, dtype=np.float64) + 0.5) * (GRID_MAX / raster)
    # crossings[e, r]: x where edge e crosses scan row r (inf when it doesn't)
    cy = centers[None, :]
    y_lo = np.minimum(ys, y2)[:, None]
    y_hi = np.maximum(ys, y2)[:, None]
    nonhoriz = (ys != y2)[:, None]
    crosses = nonhoriz & (y_lo <= cy) & (cy < y_hi)
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (cy - ys[:, None]) / (y2 - ys)[:, None]
        cross_x = xs[:, None] + t * (x2 - xs)[:, None]
    cross_x = np.where(crosses, cross_x, np.inf)
    cross_x.sort(axis=0)

    mask = np.zeros((raster, raster), dtype=bool)
    cx = centers[None, :]
    for k in range(0, cross_x.shape[0] - 1, 2):
        lo = cross_x[k][:, None]
        hi = cross_x[k + 1][:, None]
        if not np.isfinite(lo).any():
            break
        mask |= (cx >= lo) & (cx < hi)
    return mask


def _degenerate_pair_score(a: CanonicalPolygon, b: CanonicalPolygon) -> float:
    return 1.0 if set(a.points) == set(b.points) else 0.0


def polygon_dice(a: CanonicalPolygon, b: CanonicalPolygon, raster: int = 512) -> float:
    """Dice overlap 2|A&B| / (|A| + |B|) via rasterization.

    When both polygons rasterize to empty masks the result is 1.0 for equal
    point sets, otherwise 0.0.
    """
    ma = rasterize_polygon(a, raster)
    mb = rasterize_polygon(b, raster)
    sa = int(ma.sum())
    sb = int(mb.sum())
    if sa + sb == 0:
        return _degenerate_pair_score(a, b)
    inter = int((ma & mb).sum())
    return 2.0 * inter / (sa + sb)


def polygon_iou(a: CanonicalPolygon, b: CanonicalPolygon, raster: int = 512) -> float:
    """Rasterized region IoU between two polygons (degenerate rule as Dice)."""
    ma = rasterize_polygon(a, raster)
    mb = rasterize_polygon(b, raster)
    union = int((ma | mb).sum())
    if union == 0:
        return _degenerate_pair_score(a, b)
    inter = int((ma & mb).sum())
    return inter / union
