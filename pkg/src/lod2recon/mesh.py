"""Triangle meshes: parametric building solids, direct DSM meshes and simplification."""
from __future__ import annotations

import heapq
import math
from dataclasses import dataclass

import numpy as np

from .errors import EmptyFootprint, EmptyInputs, InvalidModel, InvalidParams
from .geodata_io import GeoTransform
from .polygon import polygon_mask
from .roofs import RoofModel, validate_params


@dataclass
class TriMesh:
    vertices: np.ndarray  # (n, 3) float
    faces: np.ndarray  # (m, 3) int, 0-based

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=float).reshape(-1, 3)
        self.faces = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)

    @property
    def face_count(self) -> int:
        return len(self.faces)

    def edge_incidence(self) -> dict:
        """Undirected edge -> number of incident faces."""
        counts: dict = {}
        for a, b, c in self.faces.tolist():
            for u, v in ((a, b), (b, c), (c, a)):
                key = (u, v) if u < v else (v, u)
                counts[key] = counts.get(key, 0) + 1
        return counts

    def is_watertight(self) -> bool:
        if not len(self.faces):
            return False
        directed = set()
        for a, b, c in self.faces.tolist():
            for e in ((a, b), (b, c), (c, a)):
                if e in directed:
                    return False  # same directed edge twice: inconsistent winding
                directed.add(e)
        return all(n == 2 for n in self.edge_incidence().values())

    def signed_volume(self) -> float:
        v = self.vertices - self.vertices.mean(axis=0)
        a, b, c = v[self.faces[:, 0]], v[self.faces[:, 1]], v[self.faces[:, 2]]
        return float(np.einsum("ij,ij->i", a, np.cross(b, c)).sum() / 6.0)

    def face_areas(self) -> np.ndarray:
        v = self.vertices
        a, b, c = v[self.faces[:, 0]], v[self.faces[:, 1]], v[self.faces[:, 2]]
        return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)

    def bbox(self):
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    def flipped(self) -> "TriMesh":
        return TriMesh(self.vertices.copy(), self.faces[:, ::-1].copy())


def merge_meshes(meshes) -> TriMesh:
    verts, faces, base = [], [], 0
    for m in meshes:
        verts.append(m.vertices)
        faces.append(m.faces + base)
        base += len(m.vertices)
    if not verts:
        return TriMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))
    return TriMesh(np.vstack(verts), np.vstack(faces))


def to_output_frame(mesh: TriMesh, geo: GeoTransform | None) -> TriMesh:
    """Map a mesh with pixel (col, row) planimetry to world coordinates.

    Winding is reversed when the mapping mirrors the plane so outward faces stay
    counter-clockwise.  Without a transform the mesh is returned in pixel units.
    """
    if geo is None:
        return mesh
    x, y = geo.pixel_to_world(mesh.vertices[:, 0], mesh.vertices[:, 1])
    out = TriMesh(np.column_stack([x, y, mesh.vertices[:, 2]]), mesh.faces.copy())
    return out.flipped() if geo.determinant < 0 else out


# --------------------------------------------------------------------------
# regularity gate
# --------------------------------------------------------------------------

def iou_rects_vs_mask(rects, segment_mask) -> float:
    """Pixel IoU between the union of rasterized rectangles and a segment mask."""
    mask = np.asarray(segment_mask, dtype=bool)
    union = np.zeros(mask.shape, dtype=bool)
    for r in rects:
        union |= r.rasterize(mask.shape)
    denom = int((union | mask).sum())
    if denom == 0:
        raise EmptyInputs("both the rectangles and the mask are empty")
    return int((union & mask).sum()) / denom


def irregular_decision(iou: float, area_px: float, iou_thresh: float = 0.65,
                       area_thresh: float = 5000) -> str:
    """Large buildings poorly explained by their rectangles are meshed from the DSM."""
    return "Irregular" if iou < iou_thresh and area_px > area_thresh else "Regular"


# --------------------------------------------------------------------------
# polygon helpers
# --------------------------------------------------------------------------

def _newell(points):
    p = np.asarray(points, dtype=float)
    q = np.roll(p, -1, axis=0)
    return np.array([
        ((p[:, 1] - q[:, 1]) * (p[:, 2] + q[:, 2])).sum(),
        ((p[:, 2] - q[:, 2]) * (p[:, 0] + q[:, 0])).sum(),
        ((p[:, 0] - q[:, 0]) * (p[:, 1] + q[:, 1])).sum(),
    ])


class _MeshBuilder:
    def __init__(self, tol=1e-9):
        self.tol = tol
        self.index: dict = {}
        self.vertices: list = []
        self.faces: list = []

    def vid(self, p):
        key = tuple(round(float(c) / self.tol) for c in p)
        if key not in self.index:
            self.index[key] = len(self.vertices)
            self.vertices.append(tuple(float(c) for c in p))
        return self.index[key]

    def polygon(self, points, outward, skip_edge_on=False):
        """Add a planar convex polygon, oriented so its normal points along ``outward``.

        With ``skip_edge_on`` a polygon perpendicular to ``outward`` is dropped.
        """
        ids = [self.vid(p) for p in points]
        ids = [v for i, v in enumerate(ids) if v != ids[i - 1]]
        if len(ids) < 3:
            return
        pts = np.array([self.vertices[i] for i in ids])
        normal = _newell(pts)
        norm = np.linalg.norm(normal)
        if norm < self.tol:
            return
        if skip_edge_on and abs(np.dot(normal, outward)) < 1e-9 * norm:
            return
        if np.dot(normal, outward) < 0:
            ids = ids[::-1]
            pts = pts[::-1]
        n = len(ids)
        # fan from a vertex that yields no zero-area triangle
        for apex in range(n):
            tris = [(ids[apex], ids[(apex + k) % n], ids[(apex + k + 1) % n]) for k in range(1, n - 1)]
            ok = True
            for a, b, c in tris:
                pa, pb, pc = (np.array(self.vertices[i]) for i in (a, b, c))
                if np.linalg.norm(np.cross(pb - pa, pc - pa)) < self.tol:
                    ok = False
                    break
            if ok:
                self.faces.extend(tris)
                return
        raise InvalidModel("could not triangulate a roof or wall polygon")

    def mesh(self):
        return TriMesh(np.array(self.vertices), np.array(self.faces))


def roof_facets(kind, length, width, hipl, hipw, z_eave, z_ridge):
    """Planar roof polygons in the local frame (x along length, y across, z up)."""
    A, B = (0.0, 0.0, z_eave), (length, 0.0, z_eave)
    C, D = (length, width, z_eave), (0.0, width, z_eave)
    if kind == "Flat":
        return [[A, B, C, D]]
    if kind in ("Gable", "Hip", "Pyramid"):
        h = {"Gable": 0.0, "Pyramid": length / 2}.get(kind, hipl)
        r0, r1 = (h, width / 2, z_ridge), (length - h, width / 2, z_ridge)
        return [[A, B, r1, r0], [r0, r1, C, D], [B, C, r1], [D, A, r0]]
    if kind == "Mansard":
        t0, t1 = (hipl, hipw, z_ridge), (length - hipl, hipw, z_ridge)
        t2, t3 = (length - hipl, width - hipw, z_ridge), (hipl, width - hipw, z_ridge)
        return [[t0, t1, t2, t3], [A, B, t1, t0], [B, C, t2, t1], [C, D, t3, t2], [D, A, t0, t3]]
    raise InvalidModel(f"unknown roof kind {kind!r}")


def local_solid(kind, length, width, hipl, hipw, z_eave, z_ridge, z_ground) -> TriMesh:
    """Closed solid of one roof over a ``length`` x ``width`` box in its local frame."""
    if not z_eave > z_ground:
        raise InvalidModel(f"eave height {z_eave} must lie above the ground {z_ground}")
    b = _MeshBuilder()
    facets = roof_facets(kind, length, width, hipl, hipw, z_eave, z_ridge)
    for poly in facets:
        # vertical facets (gable ends) are rebuilt as part of the walls
        b.polygon(poly, (0.0, 0.0, 1.0), skip_edge_on=True)
    roof_pts = {tuple(p) for poly in facets for p in poly}
    sides = [  # (start corner, end corner, outward normal)
        ((0.0, 0.0), (length, 0.0), (0.0, -1.0, 0.0)),
        ((length, 0.0), (length, width), (1.0, 0.0, 0.0)),
        ((length, width), (0.0, width), (0.0, 1.0, 0.0)),
        ((0.0, width), (0.0, 0.0), (-1.0, 0.0, 0.0)),
    ]
    for (x0, y0), (x1, y1), outward in sides:
        dx, dy = x1 - x0, y1 - y0
        span = math.hypot(dx, dy)
        on_side = []
        for p in roof_pts:
            t = ((p[0] - x0) * dx + (p[1] - y0) * dy) / span
            off = abs((p[0] - x0) * dy - (p[1] - y0) * dx) / span
            if off < 1e-9 and -1e-9 <= t <= span + 1e-9:
                on_side.append((t, p))
        on_side.sort(reverse=True)
        wall = [(x0, y0, z_ground), (x1, y1, z_ground)] + [p for _, p in on_side]
        b.polygon(wall, outward)
    b.polygon([(0.0, 0.0, z_ground), (length, 0.0, z_ground), (length, width, z_ground),
               (0.0, width, z_ground)], (0.0, 0.0, -1.0))
    return b.mesh()


def model_to_mesh(model: RoofModel, geo: GeoTransform | None = None) -> TriMesh:
    """Watertight solid of a fitted roof in world coordinates (pixel units without ``geo``)."""
    rect, p, g = model.rect, model.params, model.gsd_m
    try:
        validate_params(model.kind, p, rect.length * g, rect.width * g)
    except InvalidParams as exc:
        raise InvalidModel(str(exc)) from exc
    if not (rect.length > 0 and rect.width > 0 and g > 0):
        raise InvalidModel("rectangle sides and ground sampling distance must be positive")
    solid = local_solid(model.kind, rect.length, rect.width, p.hipl / g, p.hipw / g,
                        p.z_eave, p.z_ridge, model.z_ground)
    xs, ys = rect.to_scene(solid.vertices[:, 0], solid.vertices[:, 1])
    placed = TriMesh(np.column_stack([xs, ys, solid.vertices[:, 2]]), solid.faces)
    return to_output_frame(placed, geo)


# --------------------------------------------------------------------------
# direct DSM meshing
# --------------------------------------------------------------------------

def dsm_to_mesh(dsm, polygon, z_ground: float, geo: GeoTransform | None = None,
                simplify_to: int | None = None) -> TriMesh:
    """Closed mesh of the DSM surface over grid cells inside ``polygon``.

    A cell spans four neighbouring pixel centres and is kept when all four lie
    in the polygon with finite heights; it contributes two top triangles, a
    mirrored pair on the bottom plane at ``z_ground``, and walls on open edges.

    With ``simplify_to`` the mesh is decimated to fewer faces than that.  If
    edge collapses alone cannot reach the budget, the DSM is re-meshed on every
    second, fourth, ... pixel until they can.
    """
    dsm = np.asarray(dsm, dtype=float)
    ring = np.asarray(polygon, dtype=float)
    c0 = max(int(math.floor(ring[:, 0].min())), 0)
    r0 = max(int(math.floor(ring[:, 1].min())), 0)
    c1 = min(int(math.ceil(ring[:, 0].max())) + 1, dsm.shape[1])
    r1 = min(int(math.ceil(ring[:, 1].max())) + 1, dsm.shape[0])
    if r1 - r0 < 2 or c1 - c0 < 2:
        raise EmptyFootprint("polygon covers no grid cell")
    inside = polygon_mask(ring, (r1 - r0, c1 - c0), (r0, c0))
    heights = dsm[r0:r1, c0:c1]
    inside &= np.isfinite(heights)
    mesh = to_output_frame(_grid_solid(heights, inside, (r0, c0), 1, z_ground), geo)
    if simplify_to is None:
        return mesh
    stride = 1
    while True:
        mesh = simplify_mesh(mesh, simplify_to)
        if mesh.face_count < simplify_to:
            return mesh
        stride *= 2
        try:
            coarse = _grid_solid(heights, inside, (r0, c0), stride, z_ground)
        except EmptyFootprint:
            return mesh
        mesh = to_output_frame(coarse, geo)


def _grid_solid(heights, inside, origin, stride, z_ground) -> TriMesh:
    """Closed grid mesh over every ``stride``-th pixel centre (pixel frame)."""
    heights = heights[::stride, ::stride]
    inside = inside[::stride, ::stride]
    cells = inside[:-1, :-1] & inside[1:, :-1] & inside[:-1, 1:] & inside[1:, 1:]
    if not cells.any():
        raise EmptyFootprint("polygon covers no grid cell")
    used = np.zeros(inside.shape, dtype=bool)
    used[:-1, :-1] |= cells
    used[1:, :-1] |= cells
    used[:-1, 1:] |= cells
    used[1:, 1:] |= cells
    rr, cc = np.nonzero(used)
    n = len(rr)
    index = -np.ones(inside.shape, dtype=np.int64)
    index[rr, cc] = np.arange(n)
    zg = float(min(z_ground, np.nanmin(heights[used]) - 1e-3))
    top = np.column_stack([cc * stride + origin[1], rr * stride + origin[0],
                           heights[rr, cc]]).astype(float)
    bottom = top.copy()
    bottom[:, 2] = zg
    verts = np.vstack([top, bottom])
    faces = []
    cr, ccs = np.nonzero(cells)
    for r, c in zip(cr.tolist(), ccs.tolist()):
        a, b = index[r, c], index[r, c + 1]
        d, e = index[r + 1, c], index[r + 1, c + 1]
        # counter-clockwise in (col, row) means normal along +z
        faces.append((a, b, e))
        faces.append((a, e, d))
        faces.append((a + n, e + n, b + n))
        faces.append((a + n, d + n, e + n))
    # directed top edges that have no twin are the outline
    directed = set()
    top_faces = [f for i, f in enumerate(faces) if i % 4 < 2]
    for a, b, c in top_faces:
        directed.update(((a, b), (b, c), (c, a)))
    for u, v in sorted(directed):
        if (v, u) in directed:
            continue
        faces.append((v, u, u + n))
        faces.append((v, u + n, v + n))
    return TriMesh(verts, np.array(faces))


# --------------------------------------------------------------------------
# quadric error simplification
# --------------------------------------------------------------------------

def _plane_quadric(p0, p1, p2):
    """Fundamental error quadric of a triangle's plane as 10 upper-triangle terms."""
    ux, uy, uz = p1[0] - p0[0], p1[1] - p0[1], p1[2] - p0[2]
    vx, vy, vz = p2[0] - p0[0], p2[1] - p0[1], p2[2] - p0[2]
    a, b, c = uy * vz - uz * vy, uz * vx - ux * vz, ux * vy - uy * vx
    norm = math.sqrt(a * a + b * b + c * c)
    if norm == 0:
        return [0.0] * 10
    a, b, c = a / norm, b / norm, c / norm
    d = -(a * p0[0] + b * p0[1] + c * p0[2])
    return [a * a, a * b, a * c, a * d, b * b, b * c, b * d, c * c, c * d, d * d]


def _quadric_cost(q, x, y, z):
    return (q[0] * x * x + 2 * q[1] * x * y + 2 * q[2] * x * z + 2 * q[3] * x
            + q[4] * y * y + 2 * q[5] * y * z + 2 * q[6] * y
            + q[7] * z * z + 2 * q[8] * z + q[9])


def _quadric_minimizer(q):
    """Point minimising the quadric, or None when the system is near singular."""
    a11, a12, a13, a22, a23, a33 = q[0], q[1], q[2], q[4], q[5], q[7]
    b1, b2, b3 = -q[3], -q[6], -q[8]
    det = a11 * (a22 * a33 - a23 * a23) - a12 * (a12 * a33 - a23 * a13) + a13 * (a12 * a23 - a22 * a13)
    scale = max(abs(a11), abs(a22), abs(a33), 1e-300)
    if abs(det) <= 1e-9 * scale ** 3:
        return None
    x = (b1 * (a22 * a33 - a23 * a23) - a12 * (b2 * a33 - a23 * b3) + a13 * (b2 * a23 - a22 * b3)) / det
    y = (a11 * (b2 * a33 - a23 * b3) - b1 * (a12 * a33 - a23 * a13) + a13 * (a12 * b3 - b2 * a13)) / det
    z = (a11 * (a22 * b3 - b2 * a23) - a12 * (a12 * b3 - b2 * a13) + b1 * (a12 * a23 - a22 * a13)) / det
    return [x, y, z]


def _normal(p0, p1, p2):
    ux, uy, uz = p1[0] - p0[0], p1[1] - p0[1], p1[2] - p0[2]
    vx, vy, vz = p2[0] - p0[0], p2[1] - p0[1], p2[2] - p0[2]
    return uy * vz - uz * vy, uz * vx - ux * vz, ux * vy - uy * vx


def simplify_mesh(mesh: TriMesh, max_faces: int = 1000) -> TriMesh:
    """Greedy quadric-error edge collapse until fewer than ``max_faces`` faces remain.

    Edges are taken in order of quadric cost, shorter edges first among equal
    costs.  Collapses that would flip or flatten a face, or break the manifold
    link condition, are skipped.  Meshes already under budget come back unchanged.
    """
    if mesh.face_count < max_faces:
        return mesh
    origin = mesh.vertices.mean(axis=0)
    pos = (mesh.vertices - origin).tolist()
    faces = mesh.faces.tolist()
    alive = [True] * len(faces)
    vfaces = [set() for _ in pos]
    quad = [[0.0] * 10 for _ in pos]
    for fi, f in enumerate(faces):
        q = _plane_quadric(pos[f[0]], pos[f[1]], pos[f[2]])
        for v in f:
            vfaces[v].add(fi)
            acc = quad[v]
            for k in range(10):
                acc[k] += q[k]
    extent = float(np.ptp(mesh.vertices, axis=0).max()) or 1.0
    min_area2 = (1e-9 * extent * extent) ** 2
    version = [0] * len(pos)
    removed = [False] * len(pos)
    n_faces = len(faces)

    def neighbours(v):
        out = set()
        for fi in vfaces[v]:
            out.update(faces[fi])
        out.discard(v)
        return out

    def target(u, v):
        q = [a + b for a, b in zip(quad[u], quad[v])]
        pu, pv = pos[u], pos[v]
        mid = [(a + b) / 2 for a, b in zip(pu, pv)]
        cands = [pu, pv, mid]
        x = _quadric_minimizer(q)
        if x is not None:
            reach2 = sum((a - b) ** 2 for a, b in zip(pu, pv))
            if sum((a - b) ** 2 for a, b in zip(x, mid)) <= reach2:
                cands.insert(0, x)
        best_cost, best = None, None
        for c in cands:
            cost = max(_quadric_cost(q, *c), 0.0)
            if best_cost is None or cost < best_cost - 1e-15:
                best_cost, best = cost, c
        return best_cost, best

    heap = []

    def push(u, v):
        if u > v:
            u, v = v, u
        cost, _ = target(u, v)
        length2 = sum((a - b) ** 2 for a, b in zip(pos[u], pos[v]))
        heap.append((round(cost, 12), length2, u, v, version[u], version[v]))

    edges = set()
    for a, b, c in faces:
        for u, v in ((a, b), (b, c), (c, a)):
            edges.add((u, v) if u < v else (v, u))
    for u, v in sorted(edges):
        push(u, v)
    heapq.heapify(heap)

    def flips(w, shared, x):
        for fi in vfaces[w]:
            if fi in shared:
                continue
            f = faces[fi]
            p = [pos[i] for i in f]
            n_old = _normal(*p)
            p = [x if i == w else pos[i] for i in f]
            n_new = _normal(*p)
            if (n_new[0] ** 2 + n_new[1] ** 2 + n_new[2] ** 2) <= min_area2:
                return True
            if n_old[0] * n_new[0] + n_old[1] * n_new[1] + n_old[2] * n_new[2] <= 0:
                return True
        return False

    while heap and n_faces >= max_faces:
        _, _, u, v, vu, vv = heapq.heappop(heap)
        if removed[u] or removed[v] or version[u] != vu or version[v] != vv:
            continue
        shared = vfaces[u] & vfaces[v]
        if len(shared) != 2:
            continue
        if len(neighbours(u) & neighbours(v)) != 2:
            continue  # link condition
        _, x = target(u, v)
        if flips(u, shared, x) or flips(v, shared, x):
            continue
        for fi in shared:
            alive[fi] = False
            for w in faces[fi]:
                vfaces[w].discard(fi)
            n_faces -= 1
        for fi in vfaces[v]:
            faces[fi] = [u if i == v else i for i in faces[fi]]
            vfaces[u].add(fi)
        vfaces[v] = set()
        removed[v] = True
        pos[u] = list(x)
        quad[u] = [a + b for a, b in zip(quad[u], quad[v])]
        version[u] += 1
        for w in sorted(neighbours(u)):
            u2, w2 = (u, w) if u < w else (w, u)
            cost, _ = target(u2, w2)
            length2 = sum((a - b) ** 2 for a, b in zip(pos[u2], pos[w2]))
            heapq.heappush(heap, (round(cost, 12), length2, u2, w2, version[u2], version[w2]))
    keep = [i for i, r in enumerate(removed) if not r and vfaces[i]]
    remap = {old: new for new, old in enumerate(keep)}
    verts = np.array([pos[i] for i in keep]) + origin
    out_faces = np.array([[remap[i] for i in f] for f, a in zip(faces, alive) if a])
    return TriMesh(verts, out_faces)
