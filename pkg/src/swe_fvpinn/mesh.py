"""Unstructured polygonal meshes for the finite-volume residual.

A :class:`Mesh` is built once from nodes, counter-clockwise cell polygons and
boundary patches; every derived geometric quantity (areas, centroids, face
normals and lengths, face bed elevation and still-water depth) is computed at
construction and the object is treated as immutable afterwards.

Face convention: the stored unit normal points out of ``face_left``.  Boundary
faces have ``face_right == -1`` and a patch index in ``face_patch``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from ._io import atomic_write_text

WALL = "wall"
INLET = "inlet_discharge"
EXIT = "exit_wse"
PATCH_KINDS = (WALL, INLET, EXIT)


class MeshError(ValueError):
    """Raised for malformed mesh input (parse, topology or orientation)."""


@dataclass
class BoundaryPatch:
    name: str
    kind: str
    value: float = 0.0
    face_ids: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    def __post_init__(self):
        if self.kind not in PATCH_KINDS:
            raise MeshError(f"unknown patch kind {self.kind!r} for patch {self.name!r}")


@dataclass(frozen=True, eq=False)
class Mesh:
    node_xy: np.ndarray
    node_zb: np.ndarray
    cells: tuple  # tuple of int arrays, CCW vertex ids
    cell_zone: np.ndarray
    reference_ws: float
    patches: tuple
    # derived
    cell_area: np.ndarray
    cell_centroid: np.ndarray
    cell_zb: np.ndarray
    cell_hs: np.ndarray
    face_nodes: np.ndarray
    face_left: np.ndarray
    face_right: np.ndarray
    face_left_edge: np.ndarray
    face_patch: np.ndarray
    face_normal: np.ndarray
    face_length: np.ndarray
    face_mid: np.ndarray
    face_zb: np.ndarray
    face_hs: np.ndarray

    @property
    def n_cells(self) -> int:
        return len(self.cells)

    @property
    def n_faces(self) -> int:
        return len(self.face_left)

    @property
    def interior_faces(self) -> np.ndarray:
        return np.flatnonzero(self.face_right >= 0)

    @property
    def boundary_faces(self) -> np.ndarray:
        return np.flatnonzero(self.face_right < 0)

    def patch(self, name: str) -> BoundaryPatch:
        for p in self.patches:
            if p.name == name:
                return p
        raise KeyError(name)

    def patch_length(self, name: str) -> float:
        return float(self.face_length[self.patch(name).face_ids].sum())

    def with_patch_values(self, values: dict) -> "Mesh":
        """Copy of the mesh with new prescribed values (and optionally kinds) on patches.

        ``values`` maps patch name to a float or to a ``(kind, value)`` pair.
        """
        patches = []
        for p in self.patches:
            kind, value = p.kind, p.value
            if p.name in values:
                v = values[p.name]
                if isinstance(v, (tuple, list)):
                    kind, value = v[0], float(v[1])
                else:
                    value = float(v)
            patches.append(BoundaryPatch(p.name, kind, value, p.face_ids.copy()))
        cells = [c for c in self.cells]
        specs = _patch_specs_from_mesh(self, patches)
        return build_mesh(self.node_xy, self.node_zb, cells, self.cell_zone, specs, self.reference_ws)

    def with_reference_ws(self, reference_ws: float) -> "Mesh":
        specs = _patch_specs_from_mesh(self, self.patches)
        return build_mesh(self.node_xy, self.node_zb, list(self.cells), self.cell_zone, specs, reference_ws)

    def locate(self, xy: np.ndarray) -> np.ndarray:
        """Index of the cell containing each point (nearest centroid outside the mesh)."""
        xy = np.atleast_2d(np.asarray(xy, dtype=float))
        out = np.empty(len(xy), dtype=np.int64)
        d2 = ((xy[:, None, :] - self.cell_centroid[None, :, :]) ** 2).sum(-1)
        order = np.argsort(d2, axis=1, kind="stable")[:, : min(12, self.n_cells)]
        for k, p in enumerate(xy):
            out[k] = order[k, 0]
            for c in order[k]:
                if _point_in_polygon(p, self.node_xy[self.cells[c]]):
                    out[k] = c
                    break
        return out


def _point_in_polygon(p, poly) -> bool:
    x, y = p
    inside = False
    n = len(poly)
    for i in range(n):
        x1, y1 = poly[i]
        x2, y2 = poly[(i + 1) % n]
        if (y1 > y) != (y2 > y):
            xc = x1 + (y - y1) * (x2 - x1) / (y2 - y1)
            if xc >= x:
                inside = not inside
    return inside


def polygon_area_centroid(poly: np.ndarray) -> tuple[float, np.ndarray]:
    """Signed shoelace area and area-weighted centroid of a polygon."""
    x, y = poly[:, 0], poly[:, 1]
    xn, yn = np.roll(x, -1), np.roll(y, -1)
    cross = x * yn - xn * y
    a = 0.5 * cross.sum()
    if a == 0.0:
        return 0.0, poly.mean(axis=0)
    cx = ((x + xn) * cross).sum() / (6.0 * a)
    cy = ((y + yn) * cross).sum() / (6.0 * a)
    return float(a), np.array([cx, cy])


def _segments_intersect(p1, p2, p3, p4) -> bool:
    def orient(a, b, c):
        return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])

    d1, d2 = orient(p3, p4, p1), orient(p3, p4, p2)
    d3, d4 = orient(p1, p2, p3), orient(p1, p2, p4)
    return (d1 * d2 < 0) and (d3 * d4 < 0)


def _is_simple(poly: np.ndarray) -> bool:
    n = len(poly)
    if n <= 3:
        return True
    for i in range(n):
        for j in range(i + 2, n):
            if i == 0 and j == n - 1:
                continue
            if _segments_intersect(poly[i], poly[(i + 1) % n], poly[j], poly[(j + 1) % n]):
                return False
    return True


def build_mesh(
    node_xy,
    node_zb,
    cells: Sequence[Sequence[int]],
    cell_zone=None,
    patch_specs: Iterable = (),
    reference_ws: float = 0.0,
) -> Mesh:
    """Assemble a :class:`Mesh` and derive all geometry.

    ``patch_specs`` is an iterable of ``(name, kind, value, [(cell, local_edge), ...])``.
    Boundary edges not claimed by any patch go to an implicit ``default_wall`` patch.
    """
    node_xy = np.ascontiguousarray(node_xy, dtype=np.float64)
    node_zb = np.ascontiguousarray(node_zb, dtype=np.float64)
    if not np.all(np.isfinite(node_xy)) or not np.all(np.isfinite(node_zb)):
        raise MeshError("node coordinates must be finite")
    cells = tuple(np.asarray(c, dtype=np.int64) for c in cells)
    nc = len(cells)
    if nc == 0:
        raise MeshError("mesh has no cells")
    cell_zone = np.zeros(nc, dtype=np.int64) if cell_zone is None else np.asarray(cell_zone, dtype=np.int64)

    area = np.empty(nc)
    centroid = np.empty((nc, 2))
    cell_zb = np.empty(nc)
    for i, c in enumerate(cells):
        if len(c) < 3:
            raise MeshError(f"cell {i} has fewer than 3 vertices")
        if c.min() < 0 or c.max() >= len(node_xy):
            raise MeshError(f"cell {i} references an unknown node")
        poly = node_xy[c]
        a, cen = polygon_area_centroid(poly)
        if a <= 0.0:
            raise MeshError(f"cell {i} has non-positive area {a:g} (vertices must be counter-clockwise)")
        if not _is_simple(poly):
            raise MeshError(f"cell {i} polygon is self-intersecting")
        area[i] = a
        centroid[i] = cen
        cell_zb[i] = node_zb[c].mean()

    owners: dict[tuple[int, int], list[tuple[int, int]]] = {}
    for i, c in enumerate(cells):
        k = len(c)
        for e in range(k):
            a, b = int(c[e]), int(c[(e + 1) % k])
            owners.setdefault((min(a, b), max(a, b)), []).append((i, e))

    face_nodes, face_left, face_right, face_left_edge = [], [], [], []
    edge_to_face: dict[tuple[int, int], int] = {}
    for key, own in owners.items():
        if len(own) not in (1, 2):
            raise MeshError(f"edge {key} is shared by {len(own)} cells (expected 1 or 2)")
        own = sorted(own)
        ci, ei = own[0]
        c = cells[ci]
        a, b = int(c[ei]), int(c[(ei + 1) % len(c)])
        if len(own) == 2:
            cj, ej = own[1]
            c2 = cells[cj]
            a2, b2 = int(c2[ej]), int(c2[(ej + 1) % len(c2)])
            if (a2, b2) != (b, a):
                raise MeshError(f"cells {ci} and {cj} traverse edge {key} in the same direction")
        f = len(face_left)
        face_nodes.append((a, b))
        face_left.append(ci)
        face_right.append(own[1][0] if len(own) == 2 else -1)
        face_left_edge.append(ei)
        for o in own:
            edge_to_face[o] = f

    face_nodes = np.array(face_nodes, dtype=np.int64)
    face_left = np.array(face_left, dtype=np.int64)
    face_right = np.array(face_right, dtype=np.int64)
    face_left_edge = np.array(face_left_edge, dtype=np.int64)
    nf = len(face_left)

    d = node_xy[face_nodes[:, 1]] - node_xy[face_nodes[:, 0]]
    length = np.hypot(d[:, 0], d[:, 1])
    if np.any(length <= 0):
        raise MeshError("zero-length face")
    normal = np.stack([d[:, 1] / length, -d[:, 0] / length], axis=1)
    mid = 0.5 * (node_xy[face_nodes[:, 0]] + node_xy[face_nodes[:, 1]])
    face_zb = 0.5 * (node_zb[face_nodes[:, 0]] + node_zb[face_nodes[:, 1]])

    face_patch = np.full(nf, -1, dtype=np.int64)
    patches = []
    for name, kind, value, edges in patch_specs:
        ids = []
        for ce in edges:
            ce = (int(ce[0]), int(ce[1]))
            if ce not in edge_to_face:
                raise MeshError(f"patch {name!r} references unknown edge {ce}")
            f = edge_to_face[ce]
            if face_right[f] >= 0:
                raise MeshError(f"patch {name!r} references interior edge {ce}")
            if face_patch[f] >= 0:
                raise MeshError(f"boundary edge {ce} assigned to more than one patch")
            face_patch[f] = len(patches)
            ids.append(f)
        patches.append(BoundaryPatch(name, kind, float(value), np.array(ids, dtype=np.int64)))
    orphans = np.flatnonzero((face_right < 0) & (face_patch < 0))
    if len(orphans):
        face_patch[orphans] = len(patches)
        patches.append(BoundaryPatch("default_wall", WALL, 0.0, orphans))

    ref = float(reference_ws)
    cell_hs = np.maximum(0.0, ref - cell_zb)
    face_hs = np.maximum(0.0, ref - face_zb)
    return Mesh(
        node_xy=node_xy, node_zb=node_zb, cells=cells, cell_zone=cell_zone, reference_ws=ref,
        patches=tuple(patches), cell_area=area, cell_centroid=centroid, cell_zb=cell_zb,
        cell_hs=cell_hs, face_nodes=face_nodes, face_left=face_left, face_right=face_right,
        face_left_edge=face_left_edge, face_patch=face_patch, face_normal=normal,
        face_length=length, face_mid=mid, face_zb=face_zb, face_hs=face_hs,
    )


def _patch_specs_from_mesh(mesh: Mesh, patches) -> list:
    specs = []
    for p in patches:
        if p.name == "default_wall":
            continue
        edges = [(int(mesh.face_left[f]), int(mesh.face_left_edge[f])) for f in p.face_ids]
        specs.append((p.name, p.kind, p.value, edges))
    return specs


def bed_gradient(mesh: Mesh) -> np.ndarray:
    """Green-Gauss cell gradient of the bed from face bed elevations, shape (n_cells, 2)."""
    contrib = (mesh.face_zb * mesh.face_length)[:, None] * mesh.face_normal
    g = np.zeros((mesh.n_cells, 2))
    np.add.at(g, mesh.face_left, contrib)
    inner = mesh.face_right >= 0
    np.add.at(g, mesh.face_right[inner], -contrib[inner])
    return g / mesh.cell_area[:, None]


# --------------------------------------------------------------------------- generators


def generate_strip_mesh(
    length: float,
    n_cells: int,
    width: float,
    bed_profile: Callable | None = None,
    *,
    x0: float = 0.0,
    reference_ws: float = 0.0,
    west: tuple = (WALL, 0.0),
    east: tuple = (WALL, 0.0),
) -> Mesh:
    """Single row of ``n_cells`` rectangles on ``[x0, x0 + length] x [0, width]``.

    Patches: ``south`` and ``north`` walls, ``west``/``east`` ends with the
    given ``(kind, value)``.
    """
    if n_cells < 1 or length <= 0 or width <= 0:
        raise MeshError("strip mesh needs n_cells >= 1, length > 0 and width > 0")
    xs = x0 + length * np.arange(n_cells + 1) / n_cells
    xy = np.concatenate([np.stack([xs, np.zeros_like(xs)], 1), np.stack([xs, np.full_like(xs, width)], 1)])
    zb = np.zeros(len(xy)) if bed_profile is None else np.asarray([bed_profile(x) for x in xy[:, 0]], dtype=float)
    top = n_cells + 1
    cells = [(i, i + 1, top + i + 1, top + i) for i in range(n_cells)]
    specs = [
        ("south", WALL, 0.0, [(i, 0) for i in range(n_cells)]),
        ("north", WALL, 0.0, [(i, 2) for i in range(n_cells)]),
        ("west", west[0], west[1], [(0, 3)]),
        ("east", east[0], east[1], [(n_cells - 1, 1)]),
    ]
    return build_mesh(xy, zb, cells, None, specs, reference_ws)


def _graded_lines(a: float, b: float, breaks: Sequence[float], h: float) -> np.ndarray:
    pts = [a, *breaks, b]
    out = [a]
    for lo, hi in zip(pts[:-1], pts[1:]):
        n = max(1, math.ceil((hi - lo) / h - 1e-12))
        out.extend(lo + (hi - lo) * np.arange(1, n + 1) / n)
    return np.array(out)


def generate_channel_mesh(
    Lx: float,
    Ly: float,
    block: Sequence[float] | None = None,
    target_size: float = 0.5,
    *,
    bed_profile: Callable | None = None,
    reference_ws: float = 0.0,
    inlet: tuple = (INLET, 0.0),
    exit: tuple = (EXIT, 0.0),
) -> Mesh:
    """Quad mesh of the rectangle ``[0, Lx] x [0, Ly]`` minus an optional block.

    ``block`` is ``(xmin, xmax, ymin, ymax)``.  Grid lines pass through the block
    edges, so the removed cells tile it exactly.  Patches: ``inlet`` (x = 0),
    ``exit`` (x = Lx), ``walls`` (y = 0, y = Ly) and ``block``.
    """
    if Lx <= 0 or Ly <= 0 or target_size <= 0:
        raise MeshError("channel dimensions and target_size must be positive")
    if block is not None:
        bx0, bx1, by0, by1 = map(float, block)
        if not (0 < bx0 < bx1 < Lx and 0 < by0 < by1 < Ly):
            raise MeshError("block must lie strictly inside the channel")
        if target_size > min(bx1 - bx0, by1 - by0):
            raise MeshError("target_size is larger than the block")
        xl = _graded_lines(0.0, Lx, [bx0, bx1], target_size)
        yl = _graded_lines(0.0, Ly, [by0, by1], target_size)
    else:
        xl = _graded_lines(0.0, Lx, [], target_size)
        yl = _graded_lines(0.0, Ly, [], target_size)
    nx, ny = len(xl) - 1, len(yl) - 1
    X, Y = np.meshgrid(xl, yl, indexing="ij")
    xy = np.stack([X.ravel(), Y.ravel()], 1)
    zb = np.zeros(len(xy)) if bed_profile is None else np.asarray([bed_profile(x, y) for x, y in xy], dtype=float)

    def nid(i, j):
        return i * (ny + 1) + j

    cells, index = [], {}
    for i in range(nx):
        for j in range(ny):
            cx, cy = 0.5 * (xl[i] + xl[i + 1]), 0.5 * (yl[j] + yl[j + 1])
            if block is not None and bx0 < cx < bx1 and by0 < cy < by1:
                continue
            index[i, j] = len(cells)
            cells.append((nid(i, j), nid(i + 1, j), nid(i + 1, j + 1), nid(i, j + 1)))

    # local edges: 0 south, 1 east, 2 north, 3 west
    inlet_e, exit_e, wall_e, block_e = [], [], [], []
    for (i, j), c in index.items():
        if i == 0:
            inlet_e.append((c, 3))
        if i == nx - 1:
            exit_e.append((c, 1))
        if j == 0:
            wall_e.append((c, 0))
        if j == ny - 1:
            wall_e.append((c, 2))
        if block is not None:
            for e, (di, dj) in enumerate(((0, -1), (1, 0), (0, 1), (-1, 0))):
                ii, jj = i + di, j + dj
                if 0 <= ii < nx and 0 <= jj < ny and (ii, jj) not in index:
                    block_e.append((c, e))
    specs = [
        ("inlet", inlet[0], inlet[1], inlet_e),
        ("exit", exit[0], exit[1], exit_e),
        ("walls", WALL, 0.0, wall_e),
    ]
    if block is not None:
        specs.append(("block", WALL, 0.0, block_e))
    return build_mesh(xy, zb, cells, None, specs, reference_ws)


# --------------------------------------------------------------------------- audit


@dataclass
class AuditReport:
    max_closure_defect: float
    worst_cell: int
    min_area: float
    max_normal_defect: float
    area_sum: float
    passed: bool
    closure_tol: float = 1e-12
    normal_tol: float = 1e-14

    def __str__(self):
        status = "PASS" if self.passed else "FAIL"
        return (
            f"geometry audit {status}: closure {self.max_closure_defect:.3e} (cell {self.worst_cell}), "
            f"min area {self.min_area:.3e}, normal defect {self.max_normal_defect:.3e}"
        )


def cell_closure(mesh: Mesh) -> np.ndarray:
    """Per-cell sum of outward length-weighted normals, shape (n_cells, 2)."""
    ln = mesh.face_length[:, None] * mesh.face_normal
    s = np.zeros((mesh.n_cells, 2))
    np.add.at(s, mesh.face_left, ln)
    inner = mesh.face_right >= 0
    np.add.at(s, mesh.face_right[inner], -ln[inner])
    return s


def geometry_audit(mesh: Mesh, closure_tol: float = 1e-12, normal_tol: float = 1e-14) -> AuditReport:
    closure = np.abs(cell_closure(mesh)).max(axis=1)
    ndef = np.abs(np.hypot(mesh.face_normal[:, 0], mesh.face_normal[:, 1]) - 1.0)
    worst = int(np.argmax(closure))
    rep = AuditReport(
        max_closure_defect=float(closure[worst]),
        worst_cell=worst,
        min_area=float(mesh.cell_area.min()),
        max_normal_defect=float(ndef.max()),
        area_sum=float(mesh.cell_area.sum()),
        passed=False,
        closure_tol=closure_tol,
        normal_tol=normal_tol,
    )
    rep.passed = bool(rep.max_closure_defect <= closure_tol and rep.min_area > 0 and rep.max_normal_defect <= normal_tol)
    return rep


# --------------------------------------------------------------------------- text format


def load_mesh(path) -> Mesh:
    """Read a ``SWEMESH 1`` text file."""
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    toks = []
    for lineno, raw in enumerate(lines, 1):
        s = raw.split("#", 1)[0].strip()
        if s:
            toks.append((lineno, s.split()))
    it = iter(toks)

    def expect(keyword, nargs):
        try:
            lineno, t = next(it)
        except StopIteration:
            raise MeshError(f"unexpected end of file, expected {keyword}") from None
        if t[0] != keyword or len(t) != nargs + 1:
            raise MeshError(f"line {lineno}: expected '{keyword}' with {nargs} value(s)")
        return lineno, t[1:]

    def record(kind):
        try:
            return next(it)
        except StopIteration:
            raise MeshError(f"unexpected end of file inside {kind} block") from None

    lineno, v = expect("SWEMESH", 1)
    if v[0] != "1":
        raise MeshError(f"line {lineno}: unsupported format version {v[0]}")
    try:
        lineno, v = expect("REF_WS", 1)
        ref = float(v[0])
        lineno, v = expect("NODES", 1)
        nn = int(v[0])
        ids, xy, zb = {}, [], []
        for _ in range(nn):
            lineno, t = record("NODES")
            if len(t) != 4:
                raise MeshError(f"line {lineno}: node record needs 4 fields")
            ids[t[0]] = len(xy)
            xy.append((float(t[1]), float(t[2])))
            zb.append(float(t[3]))
        lineno, v = expect("CELLS", 1)
        m = int(v[0])
        cids, cells, zones = {}, [], []
        for _ in range(m):
            lineno, t = record("CELLS")
            k = int(t[1])
            if len(t) != k + 3:
                raise MeshError(f"line {lineno}: cell record needs {k + 3} fields")
            try:
                verts = [ids[s] for s in t[2 : 2 + k]]
            except KeyError as e:
                raise MeshError(f"line {lineno}: unknown node id {e.args[0]}") from None
            cids[t[0]] = len(cells)
            cells.append(verts)
            zones.append(int(t[2 + k]))
        lineno, v = expect("PATCHES", 1)
        p = int(v[0])
        specs = []
        for _ in range(p):
            lineno, t = record("PATCHES")
            name, kind, value, nf = t[0], t[1], float(t[2]), int(t[3])
            if kind not in PATCH_KINDS:
                raise MeshError(f"line {lineno}: unknown patch kind {kind!r}")
            if len(t) != 4 + nf:
                raise MeshError(f"line {lineno}: patch record needs {4 + nf} fields")
            edges = []
            for ce in t[4:]:
                c, e = ce.split(":")
                if c not in cids:
                    raise MeshError(f"line {lineno}: unknown cell id {c}")
                edges.append((cids[c], int(e)))
            specs.append((name, kind, value, edges))
    except (ValueError, IndexError) as e:
        if isinstance(e, MeshError):
            raise
        raise MeshError(f"line {lineno}: {e}") from None
    return build_mesh(np.array(xy), np.array(zb), cells, zones, specs, ref)


def format_mesh(mesh: Mesh) -> str:
    out = ["SWEMESH 1", f"REF_WS {float(mesh.reference_ws)!r}", f"NODES {len(mesh.node_xy)}"]
    for i, ((x, y), z) in enumerate(zip(mesh.node_xy, mesh.node_zb)):
        out.append(f"{i} {float(x)!r} {float(y)!r} {float(z)!r}")
    out.append(f"CELLS {mesh.n_cells}")
    for i, c in enumerate(mesh.cells):
        out.append(f"{i} {len(c)} " + " ".join(str(int(v)) for v in c) + f" {int(mesh.cell_zone[i])}")
    patches = [p for p in mesh.patches if p.name != "default_wall"]
    out.append(f"PATCHES {len(patches)}")
    for p in patches:
        edges = " ".join(f"{mesh.face_left[f]}:{mesh.face_left_edge[f]}" for f in p.face_ids)
        out.append(f"{p.name} {p.kind} {float(p.value)!r} {len(p.face_ids)} {edges}")
    return "\n".join(out) + "\n"


def save_mesh(mesh: Mesh, path) -> None:
    atomic_write_text(path, format_mesh(mesh))
