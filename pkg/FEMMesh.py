from dataclasses import dataclass, replace
from enum import IntEnum
import math

import numpy as np
from scipy import sparse
from scipy.spatial import Delaunay, cKDTree

from WSExceptions import MeshException
from WoundGeometry import WoundGeometry, distance_to_polyline
from CustomLogger import logger

LATTICE_CLEARANCE = 0.6
SMOOTHING_ITERATIONS = 4
LOCATE_CANDIDATES = 12
BARYCENTRIC_SLACK = 1e-10

class BoundaryTag(IntEnum):
    """
    Node classification of the quarter domain. `Origin` is the corner shared
    by both symmetry axes and has both velocity components fixed.
    """

    Interior = 0
    Outer = 1
    Horizontal = 2
    Vertical = 3
    Origin = 4

@dataclass(eq=False)
class Mesh:
    """
    Linear triangulation of [0, x_l] x [0, y_l]. Triangles are stored counter
    clockwise, `rim` lists the wound-rim nodes from the x-axis to the y-axis.
    """

    nodes: np.ndarray
    triangles: np.ndarray
    tags: np.ndarray
    rim: np.ndarray
    extent: tuple
    h: float

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    def with_nodes(self, nodes: np.ndarray) -> 'Mesh':
        return replace(self, nodes=np.asarray(nodes, dtype=float))

    def signed_areas(self) -> np.ndarray:
        return signed_areas(self.nodes, self.triangles)

    def shape_gradients(self) -> tuple[np.ndarray, np.ndarray]:
        """Element areas (m,) and gradients of the three P1 basis functions (m, 3, 2)."""
        p = self.nodes[self.triangles]
        x, y = p[..., 0], p[..., 1]
        twice_area = (x[:, 1] - x[:, 0]) * (y[:, 2] - y[:, 0]) - (x[:, 2] - x[:, 0]) * (y[:, 1] - y[:, 0])
        grads = np.empty(self.triangles.shape + (2,))
        grads[:, 0, 0] = y[:, 1] - y[:, 2]
        grads[:, 0, 1] = x[:, 2] - x[:, 1]
        grads[:, 1, 0] = y[:, 2] - y[:, 0]
        grads[:, 1, 1] = x[:, 0] - x[:, 2]
        grads[:, 2, 0] = y[:, 0] - y[:, 1]
        grads[:, 2, 1] = x[:, 1] - x[:, 0]
        grads /= twice_area[:, None, None]
        return twice_area / 2.0, grads

    def lumped_mass(self, areas: np.ndarray | None = None) -> np.ndarray:
        if areas is None:
            areas = np.abs(self.signed_areas())
        mass = np.zeros(self.n_nodes)
        np.add.at(mass, self.triangles.ravel(), np.repeat(areas / 3.0, 3))
        return mass

    def edges(self) -> np.ndarray:
        return mesh_edges(self.triangles)

    def rim_polyline(self) -> np.ndarray:
        return self.nodes[self.rim]

    def min_angle_degrees(self) -> float:
        p = self.nodes[self.triangles]
        angles = []
        for a in range(3):
            u = p[:, (a + 1) % 3] - p[:, a]
            w = p[:, (a + 2) % 3] - p[:, a]
            cos = np.einsum('ij,ij->i', u, w) / (np.linalg.norm(u, axis=1) * np.linalg.norm(w, axis=1))
            angles.append(np.degrees(np.arccos(np.clip(cos, -1.0, 1.0))))
        return float(np.min(angles))

def signed_areas(nodes: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    p = nodes[triangles]
    return 0.5 * ((p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1])
                  - (p[:, 2, 0] - p[:, 0, 0]) * (p[:, 1, 1] - p[:, 0, 1]))

def mesh_edges(triangles: np.ndarray) -> np.ndarray:
    pairs = np.concatenate([triangles[:, [0, 1]], triangles[:, [1, 2]], triangles[:, [2, 0]]])
    return np.unique(np.sort(pairs, axis=1), axis=0)

def classify_nodes(nodes: np.ndarray, extent) -> np.ndarray:
    x_l, y_l = extent
    x, y = nodes[:, 0], nodes[:, 1]
    tags = np.full(len(nodes), BoundaryTag.Interior, dtype=int)
    tags[y == 0.0] = BoundaryTag.Horizontal
    tags[x == 0.0] = BoundaryTag.Vertical
    tags[(x == 0.0) & (y == 0.0)] = BoundaryTag.Origin
    tags[(x == x_l) | (y == y_l)] = BoundaryTag.Outer
    return tags

def mesh_quality(mesh: Mesh) -> float:
    jacobians = 2.0 * np.abs(mesh.signed_areas())
    return float(jacobians.min() / jacobians.max())

def needs_remesh(mesh: Mesh, threshold: float, baseline: float = 1.0) -> bool:
    """
    Quality below `threshold` relative to `baseline`, or any inverted element.
    The threshold is a ratio against the quality of the freshly generated mesh,
    not an absolute quality floor.
    """
    if np.any(mesh.signed_areas() <= 0.0):
        return True
    return mesh_quality(mesh) < threshold * baseline

def _segment_points(a: np.ndarray, b: np.ndarray, h: float) -> np.ndarray:
    n = max(1, math.ceil(np.hypot(*(b - a)) / h))
    t = np.linspace(0.0, 1.0, n + 1)[:, None]
    pts = a + t * (b - a)
    pts[-1] = b
    return pts

def domain_boundary_points(extent, rim_start: np.ndarray, rim_end: np.ndarray, h: float) -> np.ndarray:
    """
    Nodes on the four sides of the quarter domain, spaced at most `h`, the two
    rim endpoints excluded (they belong to the rim).
    """
    x_l, y_l = extent
    corners = np.array([[0.0, 0.0], [x_l, 0.0], [x_l, y_l], [0.0, y_l]])
    bottom = np.vstack([_segment_points(corners[0], rim_start, h)[:-1],
                        _segment_points(rim_start, corners[1], h)[1:]])
    right = _segment_points(corners[1], corners[2], h)[1:]
    top = _segment_points(corners[2], corners[3], h)[1:]
    left = np.vstack([_segment_points(corners[3], rim_end, h)[1:-1],
                      _segment_points(rim_end, corners[0], h)[1:-1]])
    return np.vstack([bottom, right, top, left])

def _hex_lattice(extent, h: float) -> np.ndarray:
    x_l, y_l = extent
    dy = h * math.sqrt(3.0) / 2.0
    rows = []
    for k in range(int(math.floor(y_l / dy)) + 1):
        offset = 0.5 * h if k % 2 else 0.0
        xs = np.arange(offset, x_l + 1e-12, h)
        rows.append(np.column_stack([xs, np.full(len(xs), k * dy)]))
    return np.vstack(rows)

def _encroached(points: np.ndarray, rim: np.ndarray) -> np.ndarray:
    """Points strictly inside the diametral circle of any rim segment."""
    if len(points) == 0:
        return np.zeros(0, dtype=bool)
    centers = 0.5 * (rim[1:] + rim[:-1])
    radii2 = 0.25 * np.sum((rim[1:] - rim[:-1]) ** 2, axis=1)
    hit = np.zeros(len(points), dtype=bool)
    for start in range(0, len(points), 2048):
        d2 = np.sum((points[start:start + 2048, None, :] - centers[None]) ** 2, axis=2)
        hit[start:start + 2048] = np.any(d2 < radii2 * (1.0 - 1e-9), axis=1)
    return hit

def _distance_to_segments(points: np.ndarray, polyline: np.ndarray) -> np.ndarray:
    if len(points) == 0:
        return np.zeros(0)
    return distance_to_polyline(points, polyline)

def _smooth(nodes: np.ndarray, triangles: np.ndarray, free: np.ndarray, iterations: int) -> np.ndarray:
    edges = mesh_edges(triangles)
    n = len(nodes)
    adjacency = sparse.coo_matrix((np.ones(2 * len(edges)), (np.r_[edges[:, 0], edges[:, 1]], np.r_[edges[:, 1], edges[:, 0]])), shape=(n, n)).tocsr()
    degree = np.asarray(adjacency.sum(axis=1)).ravel()
    for _ in range(iterations):
        candidate = nodes.copy()
        candidate[free] = (adjacency @ nodes)[free] / degree[free, None]
        if np.any(signed_areas(candidate, triangles) <= 0.0):
            logger.debug("smoothing stopped, it would invert an element")
            break
        nodes = candidate
    return nodes

def triangulate_domain(extent, boundary_points: np.ndarray, rim_points: np.ndarray, h: float,
                       smooth_iterations: int = SMOOTHING_ITERATIONS) -> Mesh:
    """
    Delaunay triangulation of the rectangle with the rim resolved as element
    edges. Interior nodes come from a hexagonal lattice of spacing `h` kept
    clear of the sides, of the rim, and of every rim segment's diametral
    circle, which makes each rim segment a Delaunay edge.
    """
    x_l, y_l = extent
    rim_points = np.asarray(rim_points, dtype=float)
    boundary_points = np.asarray(boundary_points, dtype=float)
    if len(rim_points) < 2:
        raise MeshException(argument=len(rim_points), message="the wound rim needs at least two nodes")

    corner = ((boundary_points[:, 0] == 0.0) | (boundary_points[:, 0] == x_l)) & \
             ((boundary_points[:, 1] == 0.0) | (boundary_points[:, 1] == y_l))
    axis = ((boundary_points[:, 0] == 0.0) | (boundary_points[:, 1] == 0.0)) & ~corner
    drop = axis & _encroached(boundary_points, rim_points)
    if np.any(drop):
        logger.debug(f"dropping {int(drop.sum())} axis nodes encroaching the rim")
    boundary_points = boundary_points[~drop]

    lattice = _hex_lattice(extent, h)
    margin = LATTICE_CLEARANCE * h
    inside = (lattice[:, 0] > margin) & (lattice[:, 0] < x_l - margin) & \
             (lattice[:, 1] > margin) & (lattice[:, 1] < y_l - margin)
    lattice = lattice[inside]
    lattice = lattice[_distance_to_segments(lattice, rim_points) > margin]
    lattice = lattice[~_encroached(lattice, rim_points)]

    points = np.vstack([boundary_points, rim_points, lattice])
    n_boundary, n_rim = len(boundary_points), len(rim_points)
    if len(np.unique(points, axis=0)) != len(points):
        raise MeshException(argument=len(points), message="duplicate mesh nodes")

    order = np.lexsort((points[:, 1], points[:, 0]))
    position = np.empty(len(points), dtype=int)
    position[order] = np.arange(len(points))
    points = points[order]
    rim = position[n_boundary:n_boundary + n_rim]
    free = np.zeros(len(points), dtype=bool)
    free[position[n_boundary + n_rim:]] = True

    triangulation = Delaunay(points)
    if len(triangulation.coplanar):
        raise MeshException(argument=len(triangulation.coplanar), message="nodes left out of the triangulation")
    triangles = triangulation.simplices.astype(int)
    area = signed_areas(points, triangles)
    flip = area < 0
    triangles[flip] = triangles[flip][:, [0, 2, 1]]
    triangles = triangles[np.abs(area) > 1e-12 * h * h]
    if len(np.unique(triangles)) != len(points):
        raise MeshException(argument=len(points), message="isolated nodes after removing degenerate elements")

    edge_set = {tuple(e) for e in mesh_edges(triangles)}
    missing = [k for k in range(len(rim) - 1) if tuple(sorted((rim[k], rim[k + 1]))) not in edge_set]
    if missing:
        raise MeshException(argument=missing, message="wound rim segments are not element edges")

    points = _smooth(points, triangles, free, smooth_iterations)
    tags = classify_nodes(points, extent)
    mesh = Mesh(nodes=points, triangles=triangles, tags=tags, rim=rim, extent=(x_l, y_l), h=h)
    logger.debug(f"mesh with {mesh.n_nodes} nodes, {len(triangles)} elements, {len(rim)} rim nodes")
    return mesh

def generate_mesh(geometry: WoundGeometry, h: float) -> Mesh:
    if not 0.0 < h < min(geometry.x_cut, geometry.y_cut):
        raise MeshException(argument=h, message="element size must lie in (0, min(x_cut, y_cut))")
    rim = geometry.rim_points(h)
    boundary = domain_boundary_points(geometry.extent, rim[0], rim[-1], h)
    return triangulate_domain(geometry.extent, boundary, rim, h)

def _barycentric(points: np.ndarray, corners: np.ndarray) -> np.ndarray:
    """points (..., 2), corners (..., 3, 2) -> barycentric coordinates (..., 3)."""
    a, b, c = corners[..., 0, :], corners[..., 1, :], corners[..., 2, :]
    v0, v1, v2 = b - a, c - a, points - a
    det = v0[..., 0] * v1[..., 1] - v1[..., 0] * v0[..., 1]
    with np.errstate(divide="ignore", invalid="ignore"):
        l1 = (v2[..., 0] * v1[..., 1] - v1[..., 0] * v2[..., 1]) / det
        l2 = (v0[..., 0] * v2[..., 1] - v2[..., 0] * v0[..., 1]) / det
    return np.stack([1.0 - l1 - l2, l1, l2], axis=-1)

def locate_points(mesh: Mesh, points: np.ndarray, nodes: np.ndarray | None = None):
    """
    Containing element and barycentric weights for every query point. Points
    outside the triangulation fall back to the nearest element (weights
    clipped to it) and are flagged.
    """
    nodes = mesh.nodes if nodes is None else nodes
    points = np.atleast_2d(np.asarray(points, dtype=float))
    corners = nodes[mesh.triangles]
    tree = cKDTree(corners.mean(axis=1))
    k = min(LOCATE_CANDIDATES, len(mesh.triangles))
    _, candidates = tree.query(points, k=k)
    candidates = candidates.reshape(len(points), k)
    weights = _barycentric(points[:, None, :], corners[candidates])
    ok = weights.min(axis=2) >= -BARYCENTRIC_SLACK
    first = np.argmax(ok, axis=1)
    rows = np.arange(len(points))
    elements = candidates[rows, first]
    lam = weights[rows, first]
    fallback = ~ok.any(axis=1)
    for i in np.flatnonzero(fallback):
        full = _barycentric(points[i], corners)
        score = full.min(axis=1)
        best = int(np.argmax(score))
        elements[i] = best
        lam[i] = full[best]
        fallback[i] = score[best] < -BARYCENTRIC_SLACK
    if np.any(fallback):
        clipped = np.clip(lam[fallback], 0.0, None)
        lam[fallback] = clipped / clipped.sum(axis=1, keepdims=True)
    return elements, lam, fallback

def interpolate(mesh: Mesh, values: np.ndarray, points: np.ndarray, nodes: np.ndarray | None = None) -> np.ndarray:
    """
    Piecewise-linear interpolation of nodal `values` (n, ...) at `points`.
    Points that coincide with a mesh node copy its value exactly.
    """
    nodes = mesh.nodes if nodes is None else nodes
    values = np.asarray(values, dtype=float)
    points = np.atleast_2d(np.asarray(points, dtype=float))
    lookup = {(x, y): i for i, (x, y) in enumerate(map(tuple, nodes))}
    exact = np.array([lookup.get((x, y), -1) for x, y in map(tuple, points)], dtype=int)
    out = np.empty((len(points),) + values.shape[1:])
    hit = exact >= 0
    out[hit] = values[exact[hit]]
    if np.any(~hit):
        elements, lam, fallback = locate_points(mesh, points[~hit], nodes)
        if np.any(fallback):
            logger.warning(f"{int(fallback.sum())} points outside the mesh, using the nearest element")
        corner_values = values[mesh.triangles[elements]]
        lam = lam.reshape(lam.shape + (1,) * (values.ndim - 1))
        out[~hit] = np.sum(lam * corner_values, axis=1)
    return out
