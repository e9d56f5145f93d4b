"""Polygonal meshes for the coupled poroelastic-acoustic solver.

Elements are simple polygons, star-shaped with respect to their centroid,
partitioned into a poroelastic and an acoustic region.  Faces (segments in
2d) are classified by the region tags of the elements they bound; the
contact faces between the two regions form the coupling interface.  Each
element carries a centroid-fan sub-triangulation used for quadrature and
for the mesh-regularity estimate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

# Region tags.
PORO = 0
ACOUSTIC = 1
REGION_CODES = {"p": PORO, "a": ACOUSTIC}
REGION_CHARS = {PORO: "p", ACOUSTIC: "a"}

# Face classes.
P_INTERIOR = 0
P_BOUNDARY = 1
A_INTERIOR = 2
A_BOUNDARY = 3
INTERFACE = 4

NO_NEIGHBOR = -1


class MeshError(Exception):
    """Base class for mesh construction failures."""


class MeshParseError(MeshError):
    """Malformed mesh file."""


class MeshTopologyError(MeshError):
    """Inconsistent element/face connectivity."""


class MeshGeometryError(MeshError):
    """Degenerate or non-star-shaped element geometry."""


@dataclass(frozen=True)
class Face:
    """Oriented mesh face (a segment for d=2).

    The unit normal points out of the owner element.  On interface faces
    the owner is always the poroelastic element, so ``normal`` equals the
    normal pointing from the poroelastic into the acoustic region.
    """

    vertices: tuple[int, int]
    owner: int
    neighbor: int  # NO_NEIGHBOR on boundary faces
    normal: np.ndarray
    measure: float
    fclass: int

    @property
    def is_boundary(self) -> bool:
        return self.neighbor == NO_NEIGHBOR


class PolyMesh:
    """Immutable polygonal mesh with classified faces.

    Parameters
    ----------
    vertices : (nv, 2) array
        Vertex coordinates.
    elements : list of int arrays
        Counter-clockwise vertex-index loops, one per element.
    element_region : (ne,) int array
        PORO or ACOUSTIC tag per element.
    """

    def __init__(self, vertices, elements, element_region):
        self.vertices = np.asarray(vertices, dtype=float)
        if self.vertices.ndim != 2 or self.vertices.shape[1] != 2:
            raise MeshGeometryError("vertices must be an (nv, 2) array")
        self.elements = [np.asarray(e, dtype=int) for e in elements]
        self.element_region = np.asarray(element_region, dtype=int)
        if len(self.elements) != self.element_region.size:
            raise MeshTopologyError("one region tag per element required")
        if not np.isin(self.element_region, (PORO, ACOUSTIC)).all():
            raise MeshTopologyError("region tags must be 'p' or 'a'")

        self._build_geometry()
        self._build_faces()
        self._validate()

    # ------------------------------------------------------------------
    # construction
    # ------------------------------------------------------------------
    def _build_geometry(self):
        ne = len(self.elements)
        self.element_area = np.empty(ne)
        self.element_centroid = np.empty((ne, 2))
        self.element_diameter = np.empty(ne)
        self.element_bbox = np.empty((ne, 4))  # x0, x1, y0, y1
        # centroid-fan sub-triangulation: one triangle per element edge
        self.fan_points = []  # (k, 3, 2) vertex coords per element
        self.fan_areas = []  # (k,) signed areas (must be positive)

        for k, loop in enumerate(self.elements):
            if loop.size < 3:
                raise MeshGeometryError(f"element {k} has fewer than 3 vertices")
            pts = self.vertices[loop]
            if np.unique(loop).size != loop.size:
                raise MeshGeometryError(f"element {k} repeats a vertex")
            d = np.linalg.norm(pts - np.roll(pts, -1, axis=0), axis=1)
            if (d <= 0.0).any():
                raise MeshGeometryError(f"element {k} has a zero-length edge")
            x, y = pts[:, 0], pts[:, 1]
            xn, yn = np.roll(x, -1), np.roll(y, -1)
            cross = x * yn - xn * y
            area = 0.5 * cross.sum()
            if area <= 0.0:
                raise MeshGeometryError(
                    f"element {k} is not counter-clockwise (signed area {area:g})"
                )
            cx = ((x + xn) * cross).sum() / (6.0 * area)
            cy = ((y + yn) * cross).sum() / (6.0 * area)
            centroid = np.array([cx, cy])

            tri = np.empty((loop.size, 3, 2))
            tri[:, 0] = centroid
            tri[:, 1] = pts
            tri[:, 2] = np.roll(pts, -1, axis=0)
            v1 = tri[:, 1] - tri[:, 0]
            v2 = tri[:, 2] - tri[:, 0]
            tareas = 0.5 * (v1[:, 0] * v2[:, 1] - v1[:, 1] * v2[:, 0])
            if (tareas <= 0.0).any():
                raise MeshGeometryError(
                    f"element {k} is not star-shaped with respect to its centroid"
                )
            if abs(tareas.sum() - area) > 1e-12 * abs(area):
                raise MeshGeometryError(f"element {k}: fan areas do not sum to area")

            diff = pts[:, None, :] - pts[None, :, :]
            diam = math.sqrt((diff ** 2).sum(axis=2).max())

            self.element_area[k] = area
            self.element_centroid[k] = centroid
            self.element_diameter[k] = diam
            self.element_bbox[k] = (x.min(), x.max(), y.min(), y.max())
            self.fan_points.append(tri)
            self.fan_areas.append(tareas)

    def _build_faces(self):
        # Map undirected edge -> list of (element, tail vertex, head vertex).
        incident: dict[tuple[int, int], list[tuple[int, int, int]]] = {}
        for k, loop in enumerate(self.elements):
            for a, b in zip(loop, np.roll(loop, -1)):
                key = (min(a, b), max(a, b))
                incident.setdefault(key, []).append((k, int(a), int(b)))

        faces: list[Face] = []
        # element -> face index in CCW edge order (parallel to fan triangles)
        self.element_faces = [np.empty(len(e), dtype=int) for e in self.elements]
        element_edge_pos = [
            {(int(a), int(b)): i for i, (a, b) in enumerate(zip(e, np.roll(e, -1)))}
            for e in self.elements
        ]

        for key in sorted(incident):
            inc = incident[key]
            if len(inc) > 2:
                raise MeshTopologyError(
                    f"face {key} is shared by {len(inc)} elements"
                )
            if len(inc) == 2:
                (k0, a0, b0), (k1, a1, b1) = inc
                if a0 == a1:
                    raise MeshTopologyError(
                        f"face {key} has the same orientation in elements {k0} and {k1}"
                    )
                r0, r1 = self.element_region[k0], self.element_region[k1]
                if r0 != r1:
                    fclass = INTERFACE
                    # store the poroelastic element as owner: normal = n_p
                    owner, nbr = (k0, k1) if r0 == PORO else (k1, k0)
                elif r0 == PORO:
                    fclass, owner, nbr = P_INTERIOR, min(k0, k1), max(k0, k1)
                else:
                    fclass, owner, nbr = A_INTERIOR, min(k0, k1), max(k0, k1)
            else:
                (owner, _, _), nbr = inc[0], NO_NEIGHBOR
                fclass = P_BOUNDARY if self.element_region[owner] == PORO else A_BOUNDARY

            # owner's directed edge determines the outward normal
            for k, a, b in inc:
                if k == owner:
                    ta, tb = a, b
                    break
            pa, pb = self.vertices[ta], self.vertices[tb]
            t = pb - pa
            length = float(np.linalg.norm(t))
            normal = np.array([t[1], -t[0]]) / length
            normal.setflags(write=False)

            fid = len(faces)
            faces.append(Face((ta, tb), owner, nbr, normal, length, fclass))
            for k, a, b in inc:
                self.element_faces[k][element_edge_pos[k][(a, b)]] = fid

        self.faces = faces
        self.face_class = np.array([f.fclass for f in faces], dtype=int)

    def _validate(self):
        # region tags must partition the element set (both may be empty on
        # single-physics meshes, which is allowed)
        for f in self.faces:
            if f.fclass == INTERFACE:
                if self.element_region[f.owner] != PORO:
                    raise MeshTopologyError("interface face not owned by a poroelastic element")
            if abs(np.linalg.norm(f.normal) - 1.0) > 1e-14:
                raise MeshGeometryError("face normal is not unit length")
        # closed-boundary identity: sum |F| n_F = 0 per element
        for k in range(self.n_elements):
            total = np.zeros(2)
            perim = 0.0
            for fid in self.element_faces[k]:
                f = self.faces[fid]
                sign = 1.0 if f.owner == k else -1.0
                total += sign * f.measure * f.normal
                perim += f.measure
            if np.linalg.norm(total) > 1e-12 * perim:
                raise MeshGeometryError(f"element {k} boundary normals do not close")

    # ------------------------------------------------------------------
    # queries
    # ------------------------------------------------------------------
    @property
    def n_elements(self) -> int:
        return len(self.elements)

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    def elements_of_region(self, region: int) -> np.ndarray:
        return np.flatnonzero(self.element_region == region)

    def faces_of_class(self, *classes: int) -> np.ndarray:
        return np.flatnonzero(np.isin(self.face_class, classes))

    def element_polygon(self, k: int) -> np.ndarray:
        return self.vertices[self.elements[k]]

    def interface_length(self) -> float:
        return sum(self.faces[f].measure for f in self.faces_of_class(INTERFACE))

    def find_elements(self, points) -> np.ndarray:
        """Locate the element containing each query point (-1 if outside).

        Points on shared edges are assigned to the lowest-index incident
        element.  Brute force with a bounding-box prefilter; adequate for
        snapshot rasters.
        """
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        out = np.full(pts.shape[0], -1, dtype=int)
        bb = self.element_bbox
        tol = 1e-12 * max(self.element_diameter.max(), 1.0)
        for i, (px, py) in enumerate(pts):
            cand = np.flatnonzero(
                (bb[:, 0] - tol <= px) & (px <= bb[:, 1] + tol)
                & (bb[:, 2] - tol <= py) & (py <= bb[:, 3] + tol)
            )
            for k in cand:
                pts_k = self.vertices[self.elements[k]]
                d = np.roll(pts_k, -1, axis=0) - pts_k
                s = d[:, 0] * (py - pts_k[:, 1]) - d[:, 1] * (px - pts_k[:, 0])
                if (s >= -tol * np.linalg.norm(d, axis=1)).all():
                    out[i] = k
                    break
        return out


# ----------------------------------------------------------------------
# constructors
# ----------------------------------------------------------------------
def load_mesh(path) -> PolyMesh:
    """Read a mesh from the plain-text format.

    Format: first data line ``NV NE``; then NV lines ``x y``; then NE lines
    ``region_char k v1 ... vk`` with 0-based vertex indices in CCW order.
    Lines starting with ``#`` are comments.  Coincident vertices are merged
    at a tolerance of 1e-10 times the domain diameter.
    """
    with open(path) as fh:
        rows = [ln.strip() for ln in fh]
    rows = [r for r in rows if r and not r.startswith("#")]
    if not rows:
        raise MeshParseError(f"{path}: empty mesh file")
    try:
        nv, ne = (int(tok) for tok in rows[0].split())
    except ValueError as exc:
        raise MeshParseError(f"{path}: malformed header line: {rows[0]!r}") from exc
    if len(rows) != 1 + nv + ne:
        raise MeshParseError(
            f"{path}: expected {1 + nv + ne} data lines, found {len(rows)}"
        )
    try:
        vertices = np.array(
            [[float(t) for t in rows[1 + i].split()] for i in range(nv)]
        )
    except ValueError as exc:
        raise MeshParseError(f"{path}: malformed vertex line") from exc
    if vertices.shape != (nv, 2):
        raise MeshParseError(f"{path}: vertex lines must hold two coordinates")

    elements = []
    regions = []
    for i in range(ne):
        toks = rows[1 + nv + i].split()
        if len(toks) < 2 or toks[0] not in REGION_CODES:
            raise MeshParseError(f"{path}: malformed element line: {rows[1 + nv + i]!r}")
        try:
            k = int(toks[1])
            idx = [int(t) for t in toks[2:]]
        except ValueError as exc:
            raise MeshParseError(f"{path}: malformed element line") from exc
        if len(idx) != k:
            raise MeshParseError(f"{path}: element {i} announces {k} vertices, lists {len(idx)}")
        if min(idx, default=0) < 0 or max(idx, default=0) >= nv:
            raise MeshParseError(f"{path}: element {i} references a missing vertex")
        elements.append(np.array(idx, dtype=int))
        regions.append(REGION_CODES[toks[0]])

    vertices, elements = _stitch_vertices(vertices, elements)
    for i, loop in enumerate(elements):
        dup = loop == np.roll(loop, -1)
        if dup.any():
            raise MeshGeometryError(f"element {i} lists a vertex twice consecutively")
    return PolyMesh(vertices, elements, np.array(regions))


def _stitch_vertices(vertices, elements):
    """Merge coincident vertices (tolerance 1e-10 * domain diameter)."""
    span = vertices.max(axis=0) - vertices.min(axis=0)
    diam = float(np.linalg.norm(span))
    tol = 1e-10 * max(diam, 1.0)
    order = np.lexsort((vertices[:, 1], vertices[:, 0]))
    remap = np.arange(vertices.shape[0])
    for prev, cur in zip(order, order[1:]):
        if np.linalg.norm(vertices[cur] - vertices[remap[prev]]) <= tol:
            remap[cur] = remap[prev]
    used = np.unique(remap)
    compact = np.full(vertices.shape[0], -1)
    compact[used] = np.arange(used.size)
    new_vertices = vertices[used]
    new_elements = [compact[remap[e]] for e in elements]
    return new_vertices, new_elements


def save_mesh(mesh: PolyMesh, path) -> None:
    """Write a mesh in the plain-text format accepted by :func:`load_mesh`."""
    with open(path, "w") as fh:
        fh.write(f"{mesh.n_vertices} {mesh.n_elements}\n")
        for x, y in mesh.vertices:
            fh.write(f"{x!r} {y!r}\n")
        for loop, region in zip(mesh.elements, mesh.element_region):
            idx = " ".join(str(int(v)) for v in loop)
            fh.write(f"{REGION_CHARS[int(region)]} {loop.size} {idx}\n")


def build_cartesian_mesh(domain, nx: int, ny: int, region_fn) -> PolyMesh:
    """Structured rectangular mesh on ``domain = (x0, x1, y0, y1)``.

    ``region_fn(x, y)`` is evaluated at each cell centroid and must return
    PORO/ACOUSTIC (or 'p'/'a').  Element diameters are the cell diagonals.
    """
    x0, x1, y0, y1 = (float(v) for v in domain)
    if not (x1 > x0 and y1 > y0):
        raise MeshGeometryError("degenerate domain")
    if nx < 1 or ny < 1:
        raise MeshGeometryError("nx and ny must be at least 1")
    xs = np.linspace(x0, x1, nx + 1)
    ys = np.linspace(y0, y1, ny + 1)

    def vid(i, j):
        return j * (nx + 1) + i

    vertices = np.array([[xs[i], ys[j]] for j in range(ny + 1) for i in range(nx + 1)])
    elements = []
    regions = []
    for j in range(ny):
        for i in range(nx):
            elements.append(
                np.array([vid(i, j), vid(i + 1, j), vid(i + 1, j + 1), vid(i, j + 1)])
            )
            cx = 0.5 * (xs[i] + xs[i + 1])
            cy = 0.5 * (ys[j] + ys[j + 1])
            tag = region_fn(cx, cy)
            regions.append(REGION_CODES[tag] if isinstance(tag, str) else int(tag))
    return PolyMesh(vertices, elements, np.array(regions))


# ----------------------------------------------------------------------
# quality measures
# ----------------------------------------------------------------------
def regularity_constant(mesh: PolyMesh) -> float:
    """Shape constant max over elements and faces of h * |F| / (d * |S_F|).

    |S_F| is the area of the centroid-fan triangle attached to face F.
    Smaller is better; the constant must stay bounded along a refinement
    sequence for the dG trace inequalities to be uniform.
    """
    worst = 0.0
    for k in range(mesh.n_elements):
        h = mesh.element_diameter[k]
        areas = mesh.fan_areas[k]
        for i, fid in enumerate(mesh.element_faces[k]):
            ratio = h * mesh.faces[fid].measure / (2.0 * areas[i])
            worst = max(worst, ratio)
    return worst


def bounded_variation_check(mesh: PolyMesh, degrees, threshold: float = 3.0):
    """Largest neighbor ratios of element size and polynomial degree.

    Returns ``(max_h_ratio, max_p_ratio, warnings)`` where warnings lists a
    message per quantity exceeding ``threshold``.
    """
    degrees = np.asarray(degrees, dtype=float)
    max_h = 1.0
    max_p = 1.0
    for f in mesh.faces:
        if f.neighbor == NO_NEIGHBOR:
            continue
        hp, hm = mesh.element_diameter[f.owner], mesh.element_diameter[f.neighbor]
        pp, pm = degrees[f.owner], degrees[f.neighbor]
        max_h = max(max_h, hp / hm, hm / hp)
        max_p = max(max_p, pp / pm, pm / pp)
    warnings = []
    if max_h > threshold:
        warnings.append(f"neighbor size ratio {max_h:.3g} exceeds {threshold:g}")
    if max_p > threshold:
        warnings.append(f"neighbor degree ratio {max_p:.3g} exceeds {threshold:g}")
    return max_h, max_p, warnings
