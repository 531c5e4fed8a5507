from dataclasses import dataclass, field
from decimal import Decimal, ROUND_HALF_UP
from enum import Enum
import math

import numpy as np

from WSExceptions import GeometryException, GridMismatchException, WeightException, DegeneracyException

DEFAULT_SAMPLES = 256
WEIGHT_TOLERANCE = 1e-12

class ShapeKind(Enum):
    """
    Wound shape families. The three basic ones are sampled for training,
    `Convex` blends them pointwise for the generalisation test set.
    """

    Rectangle = 'rectangle'
    Rhombus = 'rhombus'
    Ellipse = 'ellipse'
    Convex = 'convex'

BASIC_SHAPES = (ShapeKind.Rectangle, ShapeKind.Rhombus, ShapeKind.Ellipse)

def round1(value) -> float:
    """Round to one decimal, halves away from zero, on the decimal representation of `value`."""
    return float(Decimal(repr(float(value))).quantize(Decimal('0.1'), rounding=ROUND_HALF_UP))

def domain_extent(x_cut: float, y_cut: float) -> tuple[float, float]:
    if x_cut <= 0 or y_cut <= 0:
        raise GeometryException(argument=(x_cut, y_cut), message="cut points must be positive")
    factor = Decimal('2.5')
    x_l = (factor * Decimal(repr(float(x_cut)))).quantize(Decimal('0.1'), rounding=ROUND_HALF_UP)
    y_l = (factor * Decimal(repr(float(y_cut)))).quantize(Decimal('0.1'), rounding=ROUND_HALF_UP)
    return float(x_l), float(y_l)

def _basic_points(kind: ShapeKind, x_cut: float, y_cut: float, s: np.ndarray) -> np.ndarray:
    if kind == ShapeKind.Rectangle:
        x = np.where(s <= 0.5, x_cut, (2.0 - 2.0 * s) * x_cut)
        y = np.where(s <= 0.5, 2.0 * s * y_cut, y_cut)
    elif kind == ShapeKind.Rhombus:
        x = (1.0 - s) * x_cut
        y = s * y_cut
    elif kind == ShapeKind.Ellipse:
        x = x_cut * np.cos(np.pi * s / 2.0)
        y = y_cut * np.sin(np.pi * s / 2.0)
    else:
        raise GeometryException(argument=kind, message="not a basic shape")
    points = np.column_stack([x, y]).astype(float)
    # endpoints lie exactly on the symmetry axes
    points[s == 0.0, 1] = 0.0
    points[s == 1.0, 0] = 0.0
    return points

def _validate_weights(weights) -> tuple[float, float, float]:
    if weights is None or len(weights) != 3:
        raise WeightException(argument=weights, message="three convex weights are required")
    w = tuple(float(a) for a in weights)
    if any(not math.isfinite(a) or a < 0 for a in w):
        raise WeightException(argument=w, message="convex weights must be non-negative")
    if abs(sum(w) - 1.0) > WEIGHT_TOLERANCE:
        raise WeightException(argument=w, message="convex weights must sum to one")
    return w

def _combine(points: list[np.ndarray], weights) -> np.ndarray:
    return weights[0] * points[0] + weights[1] * points[1] + weights[2] * points[2]

@dataclass(frozen=True, eq=False)
class BoundaryCurve:
    """
    Wound rim sampled on a parameter grid s in [0, 1], starting on the
    x-axis and ending on the y-axis. Together with the two axis segments it
    closes the quarter wound.
    """

    s: np.ndarray
    points: np.ndarray
    closed_with_axes: bool = True

    def __len__(self):
        return len(self.s)

    def closed_polygon(self) -> np.ndarray:
        return np.vstack([[0.0, 0.0], self.points])

    def to_csv(self, path):
        table = np.column_stack([self.s, self.points])
        np.savetxt(path, table, delimiter=',', header='s,x,y', comments='', fmt='%.17g')

@dataclass(frozen=True)
class WoundGeometry:
    kind: ShapeKind
    x_cut: float
    y_cut: float
    weights: tuple | None = field(default=None)

    def __post_init__(self):
        if not isinstance(self.kind, ShapeKind):
            object.__setattr__(self, 'kind', ShapeKind(self.kind))
        if not (math.isfinite(self.x_cut) and math.isfinite(self.y_cut)) or self.x_cut <= 0 or self.y_cut <= 0:
            raise GeometryException(argument=(self.x_cut, self.y_cut), message="cut points must be positive")
        if self.kind == ShapeKind.Convex:
            object.__setattr__(self, 'weights', _validate_weights(self.weights))
        elif self.weights is not None:
            raise WeightException(argument=self.weights, message=f"weights only apply to convex shapes, not {self.kind.value}")
        x_l, y_l = domain_extent(self.x_cut, self.y_cut)
        if x_l <= self.x_cut or y_l <= self.y_cut:
            raise GeometryException(argument=(x_l, y_l), message="rounded domain extent does not contain the wound")

    @property
    def extent(self) -> tuple[float, float]:
        return domain_extent(self.x_cut, self.y_cut)

    @property
    def quadruple(self) -> tuple[float, float, float, float]:
        return shape_quadruple(self)

    def evaluate(self, s) -> np.ndarray:
        """Analytic rim position for arbitrary parameter values."""
        s = np.atleast_1d(np.asarray(s, dtype=float))
        if self.kind == ShapeKind.Convex:
            parts = [_basic_points(kind, self.x_cut, self.y_cut, s) for kind in BASIC_SHAPES]
            return _combine(parts, self.weights)
        return _basic_points(self.kind, self.x_cut, self.y_cut, s)

    def boundary(self, n_samples: int = DEFAULT_SAMPLES) -> BoundaryCurve:
        if self.kind == ShapeKind.Convex:
            curves = [parametrize_shape(kind, self.x_cut, self.y_cut, n_samples) for kind in BASIC_SHAPES]
            return convex_combine(curves, self.weights)
        return parametrize_shape(self.kind, self.x_cut, self.y_cut, n_samples)

    def rim_points(self, h: float, table_size: int = 4001) -> np.ndarray:
        """
        Rim resampled with arclength spacing of at most `h`. The two halves
        s in [0, 1/2] and [1/2, 1] are resampled separately so the midpoint
        (a corner for the rectangle and the rhombus apex blend) is always a node.
        """
        if h <= 0:
            raise GeometryException(argument=h, message="element size must be positive")
        pieces = []
        for lo, hi in ((0.0, 0.5), (0.5, 1.0)):
            s_dense = np.linspace(lo, hi, table_size)
            dense = self.evaluate(s_dense)
            arclength = np.concatenate([[0.0], np.cumsum(np.hypot(*np.diff(dense, axis=0).T))])
            n_seg = max(1, math.ceil(arclength[-1] / h))
            s_nodes = np.interp(np.linspace(0.0, arclength[-1], n_seg + 1), arclength, s_dense)
            s_nodes[0], s_nodes[-1] = lo, hi
            pieces.append(s_nodes if lo == 0.0 else s_nodes[1:])
        return self.evaluate(np.concatenate(pieces))

    def describe(self) -> str:
        weights = '' if self.weights is None else ',' + ','.join(repr(float(w)) for w in self.weights)
        return f"{self.kind.value},{float(self.x_cut)!r},{float(self.y_cut)!r}{weights}"

    @classmethod
    def parse(cls, text: str) -> 'WoundGeometry':
        parts = [p.strip() for p in text.split(',')]
        kind = ShapeKind(parts[0])
        weights = tuple(float(p) for p in parts[3:]) if kind == ShapeKind.Convex else None
        return cls(kind, float(parts[1]), float(parts[2]), weights)

def parametrize_shape(kind, x_cut: float, y_cut: float, n_samples: int = DEFAULT_SAMPLES) -> BoundaryCurve:
    kind = ShapeKind(kind)
    if x_cut <= 0 or y_cut <= 0:
        raise GeometryException(argument=(x_cut, y_cut), message="cut points must be positive")
    if n_samples < 3:
        raise GeometryException(argument=n_samples, message="at least three samples are required")
    s = np.arange(n_samples) / (n_samples - 1)
    return BoundaryCurve(s=s, points=_basic_points(kind, x_cut, y_cut, s))

def convex_combine(curves: list[BoundaryCurve], weights) -> BoundaryCurve:
    if len(curves) != 3:
        raise GridMismatchException(argument=len(curves), message="exactly three curves are combined")
    reference = curves[0].s
    for curve in curves[1:]:
        if len(curve.s) != len(reference) or not np.array_equal(curve.s, reference):
            raise GridMismatchException(argument=(len(reference), len(curve.s)))
    w = _validate_weights(weights)
    return BoundaryCurve(s=reference.copy(), points=_combine([c.points for c in curves], w))

def shape_quadruple(geometry: WoundGeometry) -> tuple[float, float, float, float]:
    x_m, y_m = geometry.evaluate(0.5)[0]
    return (geometry.y_cut, float(x_m), float(y_m), geometry.x_cut)

def polygon_area(vertices) -> float:
    vertices = np.asarray(vertices, dtype=float)
    if vertices.ndim != 2 or len(vertices) < 3:
        raise DegeneracyException(argument=len(vertices), message="a polygon needs at least three vertices")
    x, y = vertices[:, 0], vertices[:, 1]
    return float(abs(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))) / 2.0)

def _as_polygon(boundary) -> np.ndarray:
    if isinstance(boundary, BoundaryCurve):
        return boundary.closed_polygon()
    return np.asarray(boundary, dtype=float)

def rsaw(initial_boundary, displaced_boundary) -> float:
    """Relative surface area of the wound; accepts closed polygons or rim curves (closed with the axes)."""
    initial = polygon_area(_as_polygon(initial_boundary))
    if initial == 0.0:
        raise GeometryException(argument=initial, message="division by zero initial wound area")
    return polygon_area(_as_polygon(displaced_boundary)) / initial

def distance_to_polyline(points, polyline) -> np.ndarray:
    points = np.atleast_2d(np.asarray(points, dtype=float))
    polyline = np.asarray(polyline, dtype=float)
    a, b = polyline[:-1], polyline[1:]
    ab = b - a
    length2 = np.einsum('ij,ij->i', ab, ab)
    length2 = np.where(length2 > 0, length2, 1.0)
    best = np.full(len(points), np.inf)
    # chunked so large node sets do not allocate points x segments at once
    for start in range(0, len(points), 2048):
        p = points[start:start + 2048, None, :]
        t = np.clip(np.einsum('pij,ij->pi', p - a, ab) / length2, 0.0, 1.0)
        closest = a + t[..., None] * ab
        best[start:start + 2048] = np.min(np.linalg.norm(p - closest, axis=2), axis=1)
    return best

def points_inside(points, rim) -> np.ndarray:
    """
    Even-odd ray casting against the rim mirrored into all four quadrants,
    which keeps points on the symmetry axes (and the origin) strictly interior.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    rim = np.asarray(rim, dtype=float)
    q1 = rim
    q2 = rim[::-1] * [-1.0, 1.0]
    q3 = rim * [-1.0, -1.0]
    q4 = rim[::-1] * [1.0, -1.0]
    polygon = np.vstack([q1, q2[1:], q3[1:], q4[1:-1]])
    xi, yi = polygon[:, 0], polygon[:, 1]
    xj, yj = np.roll(xi, 1), np.roll(yi, 1)
    inside = np.zeros(len(points), dtype=bool)
    for start in range(0, len(points), 2048):
        px = points[start:start + 2048, 0][:, None]
        py = points[start:start + 2048, 1][:, None]
        crosses = (yi > py) != (yj > py)
        with np.errstate(divide='ignore', invalid='ignore'):
            x_hit = (xj - xi) * (py - yi) / (yj - yi) + xi
        inside[start:start + 2048] = np.logical_xor.reduce(crosses & (px < x_hit), axis=1)
    return inside

def wound_distance(point, boundary) -> tuple[bool, float]:
    rim = boundary.points if isinstance(boundary, BoundaryCurve) else np.asarray(boundary, dtype=float)
    point = np.asarray(point, dtype=float).reshape(1, 2)
    return bool(points_inside(point, rim)[0]), float(distance_to_polyline(point, rim)[0])

def sample_geometry(rng: np.random.Generator, cut_range=(0.0, 5.0), kind=None) -> WoundGeometry:
    """Uniform shape family (unless given) and uniform cuts on the open interval `cut_range`."""
    if kind is None:
        kind = BASIC_SHAPES[int(rng.integers(len(BASIC_SHAPES)))]
    kind = ShapeKind(kind)
    lo, hi = cut_range
    weights = None
    if kind == ShapeKind.Convex:
        w = rng.uniform(size=3)
        weights = tuple(float(a) for a in w / w.sum())
    # cuts too small for a one-decimal domain extent are redrawn
    while True:
        cuts = rng.uniform(lo, hi, size=2)
        if np.any(cuts <= lo):
            continue
        try:
            return WoundGeometry(kind, float(cuts[0]), float(cuts[1]), weights)
        except GeometryException:
            continue
