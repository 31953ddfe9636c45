"""Construction of the Schwarz P minimal surface and its quotients.

The surface is seeded as the zero level set of cos(2pi x/a) + cos(2pi y/a)
+ cos(2pi z/a) on a periodic grid, relaxed to a discrete minimal mesh by an
implicit mean-curvature step with order-96 symmetry snapping, pulled back
through the 8:1 torus covering, and divided by the freely acting screw
group to produce the twisted genus-3 surface in the projective orbifold.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.spatial import cKDTree

from twistedp.crystal import AffineIsometry, CrystalGroup, im3m, singular_set
from twistedp.mesh import (
    AMBIENT_ORBIFOLD,
    MeshWithBoundary,
    PeriodicMesh,
    minimal_image_shifts,
)


class ResolutionError(RuntimeError):
    """Grid too coarse: the extracted level set has the wrong topology."""


class UnmatchedVertexError(RuntimeError):
    """A group element failed to permute the vertex set within tolerance."""


class NonFreeActionError(RuntimeError):
    """A vertex orbit is smaller than the group order."""


def nodal_value(p, side: float, reg: float = 0.0):
    """cos(2*pi*x/a) + cos(2*pi*y/a) + cos(2*pi*z/a) at p (vectorized).

    ``reg`` adds reg * cos * cos * cos, which shares the full order-96
    symmetry of the main term (in particular it flips sign under the
    body-centered translation too) and vanishes on the planes that carry
    the surface's straight lines.  It is used to nudge the seed level set
    off grid sample points when exact cosine-sum zeros occur there.
    """
    q = 2.0 * np.pi * np.asarray(p, dtype=float) / side
    c = np.cos(q)
    out = c.sum(axis=-1)
    if reg:
        out = out + reg * np.prod(c, axis=-1)
    return out


def seed_p_surface(side: float = 0.5, n: int = 32) -> PeriodicMesh:
    """Triangulate the nodal approximation of the P surface in T^3(side).

    The level set is extracted by a periodic marching-cubes pass written to
    be exactly equivariant under the order-96 symmetry group: ambiguous
    faces are resolved by the sign of the field at the face center, cube
    polygons are fanned from their centroids (no diagonal choices), and
    vertices are welded combinatorially by grid-edge identity.  The sample
    grid is offset by half a cell, which both avoids field zeros at sample
    points and makes vertical grid edges pierce the surface exactly on its
    straight lines.  Raises ResolutionError unless the result is a closed
    genus-3 mesh.
    """
    if n < 16:
        raise ValueError("grid resolution must be at least 16")
    if side <= 0:
        raise ValueError("side must be positive")
    last_err = None
    points = faces = None
    for reg in (0.0, 0.05, 0.085):
        try:
            points, faces = periodic_isosurface(
                lambda p: nodal_value(p, side, reg), side, n
            )
        except ResolutionError as err:  # exact zero at a sample point
            last_err = err
            continue
        areas = _triangle_areas(points, faces, side)
        if areas.min() >= 1e-4 * areas.mean():
            break
        last_err = ResolutionError("seed has sliver triangles")
        points = faces = None
    if points is None:
        raise last_err
    shifts = minimal_image_shifts(points, faces, side)
    mesh = PeriodicMesh(points, faces, side, shifts)
    if not mesh.is_closed():
        raise ResolutionError("seed mesh is not closed after periodic welding")
    chi, genus, _ = mesh.topology()
    if genus != 3:
        raise ResolutionError(f"seed mesh has genus {genus}, expected 3")
    return mesh


# cube combinatorics for the periodic polygonal marching pass
_CORNER_OFFS = np.array(
    [[0, 0, 0], [1, 0, 0], [0, 1, 0], [1, 1, 0],
     [0, 0, 1], [1, 0, 1], [0, 1, 1], [1, 1, 1]]
)
# edge = (corner, corner, axis, base offset of the edge within the cube)
_CUBE_EDGES = [
    (0, 1, 0, (0, 0, 0)), (2, 3, 0, (0, 1, 0)), (4, 5, 0, (0, 0, 1)),
    (6, 7, 0, (0, 1, 1)), (0, 2, 1, (0, 0, 0)), (1, 3, 1, (1, 0, 0)),
    (4, 6, 1, (0, 0, 1)), (5, 7, 1, (1, 0, 1)), (0, 4, 2, (0, 0, 0)),
    (1, 5, 2, (1, 0, 0)), (2, 6, 2, (0, 1, 0)), (3, 7, 2, (1, 1, 0)),
]
# face = (4 corners in cyclic order, 4 edge ids in cyclic order, center offset)
_CUBE_FACES = [
    ((0, 1, 3, 2), (0, 5, 1, 4), (0.5, 0.5, 0.0)),
    ((4, 5, 7, 6), (2, 7, 3, 6), (0.5, 0.5, 1.0)),
    ((0, 1, 5, 4), (0, 9, 2, 8), (0.5, 0.0, 0.5)),
    ((2, 3, 7, 6), (1, 11, 3, 10), (0.5, 1.0, 0.5)),
    ((0, 2, 6, 4), (4, 10, 6, 8), (0.0, 0.5, 0.5)),
    ((1, 3, 7, 5), (5, 11, 7, 9), (1.0, 0.5, 0.5)),
]


def periodic_isosurface(field, side: float, n: int):
    """Zero level set of a periodic scalar field on an offset n^3 grid.

    Returns canonical vertex positions in [0, side)^3 and oriented triangle
    faces.  The construction commutes with every isometry preserving the
    grid and the field: all case decisions reduce to signs of exact field
    evaluations, and polygons are fanned from centroids.
    """
    h = side / n
    axis = (np.arange(n) + 0.5) * h
    grid = np.stack(np.meshgrid(axis, axis, axis, indexing="ij"), axis=-1)
    vals = np.asarray(field(grid))
    if np.min(np.abs(vals)) < 1e-9 * np.max(np.abs(vals)):
        raise ResolutionError("level set passes through a sample point")
    sign = vals > 0.0

    # cubes with mixed corner signs
    s = sign
    agree = np.ones((n, n, n), dtype=bool)
    first = s
    for off in _CORNER_OFFS[1:]:
        shifted = np.roll(s, shift=(-off[0], -off[1], -off[2]), axis=(0, 1, 2))
        agree &= shifted == first
    mixed = np.argwhere(~agree)

    edge_vertex: dict[tuple, int] = {}
    centroid_vertex: dict[tuple, int] = {}
    positions: list[np.ndarray] = []
    faces: list[tuple[int, int, int]] = []

    def corner_pos(ix, iy, iz):
        return np.array([(ix + 0.5) * h, (iy + 0.5) * h, (iz + 0.5) * h])

    def edge_key(axis_id, base):
        return (axis_id, base[0] % n, base[1] % n, base[2] % n)

    def edge_vertex_id(axis_id, base):
        key = edge_key(axis_id, base)
        vid = edge_vertex.get(key)
        if vid is not None:
            return vid
        bx, by, bz = key[1], key[2], key[3]
        p0 = corner_pos(bx, by, bz)
        p1 = p0.copy()
        p1[axis_id] += h
        f0 = float(vals[bx, by, bz])
        idx1 = [bx, by, bz]
        idx1[axis_id] = (idx1[axis_id] + 1) % n
        f1 = float(vals[tuple(idx1)])
        t = f0 / (f0 - f1)
        pos = np.mod(p0 + t * (p1 - p0), side)
        vid = len(positions)
        positions.append(pos)
        edge_vertex[key] = vid
        return vid

    for ix, iy, iz in mixed:
        base = np.array([ix, iy, iz])
        cvals = np.array(
            [vals[tuple((base + off) % n)] for off in _CORNER_OFFS]
        )
        csign = cvals > 0.0
        crossing = {}
        for e, (a, b, axis_id, eoff) in enumerate(_CUBE_EDGES):
            if csign[a] != csign[b]:
                crossing[e] = edge_vertex_id(axis_id, base + np.array(eoff))
        # per-face arcs: perfect matching of the face's crossing edges
        arcs: dict[int, list[int]] = {e: [] for e in crossing}
        for corners, edges, center_off in _CUBE_FACES:
            cross_edges = [e for e in edges if e in crossing]
            if not cross_edges:
                continue
            if len(cross_edges) == 2:
                a, b = cross_edges
                arcs[a].append(b)
                arcs[b].append(a)
            elif len(cross_edges) == 4:
                center = corner_pos(ix, iy, iz) + np.array(center_off) * h
                fc = float(np.asarray(field(center[None, :]))[0])
                if abs(fc) < 1e-12:
                    raise ResolutionError("ambiguous face with zero center value")
                # arcs cut off the corners whose sign differs from the center
                e0, e1, e2, e3 = edges
                c0 = corners[0]
                if (cvals[c0] > 0) == (fc > 0):
                    pairs = ((e1, e2), (e3, e0))
                else:
                    pairs = ((e0, e1), (e2, e3))
                for a, b in pairs:
                    arcs[a].append(b)
                    arcs[b].append(a)
            else:
                raise ResolutionError("odd crossing count on a cube face")
        # trace closed loops
        unvisited = set(crossing)
        while unvisited:
            start = min(unvisited)
            loop = [start]
            unvisited.discard(start)
            prev, here = None, start
            while True:
                nxt = arcs[here][0] if arcs[here][0] != prev else arcs[here][1]
                if nxt == start:
                    break
                loop.append(nxt)
                unvisited.discard(nxt)
                prev, here = here, nxt
            loop_ids = [crossing[e] for e in loop]
            # orient the polygon against the field gradient (outward +)
            pts = _local_lift(np.array([positions[v] for v in loop_ids]), corner_pos(ix, iy, iz), side)
            centroid = pts.mean(axis=0)
            normal = np.zeros(3)
            for i in range(len(pts)):
                normal += np.cross(pts[i], pts[(i + 1) % len(pts)])
            graddir = _field_gradient(field, centroid, h)
            if np.dot(normal, graddir) > 0:
                loop_ids = loop_ids[::-1]
                pts = pts[::-1]
            if len(loop_ids) == 3:
                faces.append(tuple(loop_ids))
            else:
                ckey = (int(ix), int(iy), int(iz), min(loop_ids))
                cid = centroid_vertex.get(ckey)
                if cid is None:
                    cid = len(positions)
                    positions.append(np.mod(centroid, side))
                    centroid_vertex[ckey] = cid
                for i in range(len(loop_ids)):
                    faces.append(
                        (cid, loop_ids[i], loop_ids[(i + 1) % len(loop_ids)])
                    )
    return np.asarray(positions), np.asarray(faces, dtype=np.int64)


def _local_lift(pts: np.ndarray, anchor: np.ndarray, side: float) -> np.ndarray:
    return anchor + _wrap_delta(pts - anchor, side)


def _triangle_areas(points: np.ndarray, faces: np.ndarray, side: float) -> np.ndarray:
    tri = points[faces]
    tri = tri[:, :1, :] + _wrap_delta(tri - tri[:, :1, :], side)
    cross = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
    return 0.5 * np.linalg.norm(cross, axis=1)


def _field_gradient(field, p: np.ndarray, h: float) -> np.ndarray:
    eps = 1e-5 * h
    g = np.zeros(3)
    for c in range(3):
        dp = np.zeros(3)
        dp[c] = eps
        g[c] = float(np.asarray(field((p + dp)[None, :]))[0]) - float(
            np.asarray(field((p - dp)[None, :]))[0]
        )
    return g


# ---------------------------------------------------------------------------
# Group actions on meshes
# ---------------------------------------------------------------------------


def _canonical_positions(mesh: PeriodicMesh) -> np.ndarray:
    pos = np.mod(mesh.vertices, mesh.side)
    pos[pos >= mesh.side] = 0.0
    return pos


def group_vertex_permutations(
    mesh: PeriodicMesh, elements, tol: float | None = None
) -> dict[AffineIsometry, np.ndarray]:
    """Vertex permutation realizing each isometry on the mesh.

    perm[i] is the index of the vertex matched to g(vertex i); raises
    UnmatchedVertexError if any image misses by more than ``tol`` or the
    match is not a bijection.
    """
    if tol is None:
        tol = 0.25 * mesh.mean_edge_length()
    pos = _canonical_positions(mesh)
    tree = cKDTree(pos, boxsize=mesh.side)
    perms = {}
    for g in elements:
        img = np.mod(g.apply(pos), mesh.side)
        img[img >= mesh.side] = 0.0
        dist, idx = tree.query(img)
        if dist.max() > tol:
            raise UnmatchedVertexError(
                f"element {g} moves a vertex off the mesh by {dist.max():.3g}"
            )
        if np.unique(idx).size != mesh.n_vertices:
            raise UnmatchedVertexError(f"element {g} does not permute vertices")
        perms[g] = idx
    return perms


def _wrap_delta(d: np.ndarray, side: float) -> np.ndarray:
    return d - side * np.rint(d / side)


def snap_positions(mesh: PeriodicMesh, perms: dict) -> np.ndarray:
    """Average each vertex over its symmetry orbit (Reynolds average of
    positions); the construction is equivariant, so the snapped vertex set
    is group-invariant to rounding error."""
    P = mesh.vertices
    acc = np.zeros_like(P)
    for g, idx in perms.items():
        img = g.apply(P)
        matched = P[idx]
        lifted = img + _wrap_delta(matched - img, mesh.side)
        back = g.inverse().apply(lifted)
        # g^-1(g(p)) returns p only modulo the lattice: re-anchor to p's lift
        acc += P + _wrap_delta(back - P, mesh.side)
    return acc / len(perms)


def _rebuild(mesh: PeriodicMesh, new_pos: np.ndarray) -> PeriodicMesh:
    """New mesh with moved vertices, re-canonicalized with shift bookkeeping."""
    side = mesh.side
    wrapped = np.mod(new_pos, side)
    wrapped[wrapped >= side] = 0.0
    delta = np.rint((new_pos - wrapped) / side).astype(np.int64)
    shifts = mesh.corner_shifts + delta[mesh.faces]
    return PeriodicMesh(wrapped, mesh.faces, side, shifts)


def verify_mesh_symmetry(mesh: PeriodicMesh, elements) -> dict[AffineIsometry, float]:
    """Per element, the largest distance from an image vertex to the mesh
    vertex set (periodic).  Deviations are reported; the caller judges."""
    if isinstance(elements, CrystalGroup):
        elements = list(elements)
    pos = _canonical_positions(mesh)
    tree = cKDTree(pos, boxsize=mesh.side)
    out = {}
    for g in elements:
        img = np.mod(g.apply(pos), mesh.side)
        img[img >= mesh.side] = 0.0
        dist, _ = tree.query(img)
        out[g] = float(dist.max())
    return out


# ---------------------------------------------------------------------------
# Area relaxation (implicit mean-curvature step + symmetry snapping)
# ---------------------------------------------------------------------------


@dataclass
class RelaxReport:
    iterations: int
    areas: list[float] = field(default_factory=list)
    criterion: float = np.inf
    tol: float = 0.0
    converged: bool = False


def _cotan_system(mesh: PeriodicMesh):
    """Cotangent stiffness S and the lattice correction c with
    grad Area = S p - c on the lifted geometry."""
    V = mesh.n_vertices
    faces = mesh.faces
    cot = mesh.corner_cotangents()
    rows, cols, vals = [], [], []
    corr = np.zeros((V, 3))
    side = mesh.side
    for c in range(3):
        i = faces[:, (c + 1) % 3]
        j = faces[:, (c + 2) % 3]
        w = 0.5 * cot[:, c]
        rows += [i, j, i, j]
        cols += [i, j, j, i]
        vals += [w, w, -w, -w]
        if mesh.corner_shifts is not None:
            s_ij = mesh.corner_shifts[:, (c + 2) % 3] - mesh.corner_shifts[:, (c + 1) % 3]
            np.add.at(corr, i, side * w[:, None] * s_ij)
            np.add.at(corr, j, -side * w[:, None] * s_ij)
    S = sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(V, V),
    )
    return S, corr


def mean_curvature_vectors(mesh: PeriodicMesh):
    """Discrete mean curvature vector per vertex: the component of the
    cotangent area gradient along the vertex normal, divided by twice the
    mixed Voronoi area.  (The raw cotangent vector also carries a spurious
    tangential part on irregular meshes; curvature is its normal part.)"""
    S, corr = _cotan_system(mesh)
    areas = mesh.mixed_voronoi_areas()
    grad = S @ mesh.vertices - corr
    normals = mesh.vertex_normals()
    hn = np.einsum("ij,ij->i", grad, normals) / (2.0 * areas)
    return hn[:, None] * normals


def relaxation_criterion(mesh: PeriodicMesh) -> float:
    h = mesh.mean_edge_length()
    hv = mean_curvature_vectors(mesh)
    return float(np.max(np.linalg.norm(hv, axis=1))) * h


def minimize_area(
    mesh: PeriodicMesh,
    tol: float = 1e-3,
    max_iter: int = 100,
    group: CrystalGroup | None = None,
    dt: float | None = None,
) -> PeriodicMesh:
    """Relax a closed periodic mesh toward the discrete minimal surface.

    Semi-implicit mean-curvature steps: the scalar normal speed u solves
    (M + dt S) u = -dt g.n with g the cotangent area gradient, and vertices
    move along their normals only, so triangles never slide tangentially.
    A backtracking line search keeps the total area strictly non-increasing
    and after every accepted step vertex positions are averaged over the
    symmetry-group orbit, keeping the mesh exactly in its symmetry class.

    Returns when max |H| * mean-edge-length <= tol; raises on
    non-convergence or on a degenerate triangle.
    """
    if not mesh.is_closed():
        raise ValueError("minimize_area expects a closed mesh")
    if group is None:
        group = im3m(mesh.side)
    perms = group_vertex_permutations(mesh, group.elements)
    current = _rebuild(mesh, snap_positions(mesh, perms))
    current.check_degenerate()
    report = RelaxReport(iterations=0, tol=tol)
    report.areas.append(current.area())
    h2 = current.mean_edge_length() ** 2
    if dt is None:
        dt = 200.0 * h2

    for it in range(max_iter):
        S, corr = _cotan_system(current)
        grad = S @ current.vertices - corr
        normals = current.vertex_normals()
        areas = current.mixed_voronoi_areas()
        gn = np.einsum("ij,ij->i", grad, normals)
        crit = float(np.max(np.abs(gn) / (2.0 * areas))) * current.mean_edge_length()
        report.criterion = crit
        if crit <= tol:
            report.converged = True
            break
        M = sp.diags(areas)
        u = spla.spsolve((M + dt * S).tocsc(), -dt * gn)
        slope = float(gn @ u)
        step = 1.0
        accepted = False
        for _ in range(30):
            moved = current.vertices + step * u[:, None] * normals
            candidate = _rebuild(current, snap_positions(_rebuild(current, moved), perms))
            candidate.check_degenerate()
            area = candidate.area()
            if area <= report.areas[-1] + 1e-4 * step * slope:
                accepted = True
                break
            step *= 0.5
        if not accepted:
            raise RuntimeError(
                f"relaxation stalled at criterion {crit:.3g} (tol {tol:.3g})"
            )
        current = candidate
        report.areas.append(area)
        report.iterations = it + 1
        dt = min(dt * 1.3, 3000.0 * h2) if step == 1.0 else max(dt * step, 10.0 * h2)
    else:
        raise RuntimeError(
            f"relaxation did not reach tol={tol} in {max_iter} iterations "
            f"(criterion {report.criterion:.3g})"
        )
    current.relax_report = report
    current.symmetry_perms = perms
    return current


# ---------------------------------------------------------------------------
# Covering and quotient
# ---------------------------------------------------------------------------


def pullback_mesh(mesh: PeriodicMesh) -> PeriodicMesh:
    """The 8-fold preimage under T^3(2a) -> T^3(a): one translated copy per
    half-lattice vector, glued by exact integer shift bookkeeping."""
    if not mesh.is_closed():
        raise ValueError("pullback expects a closed mesh")
    a = mesh.side
    big = 2.0 * a
    V, F = mesh.n_vertices, mesh.n_faces
    alphas = np.array(
        [[i, j, k] for i in (0, 1) for j in (0, 1) for k in (0, 1)], dtype=np.int64
    )  # in units of a
    new_verts = np.concatenate([mesh.vertices + a * al for al in alphas])
    faces_out = np.empty((8 * F, 3), dtype=np.int64)
    shifts_out = np.empty((8 * F, 3, 3), dtype=np.int64)
    for copy_idx, al in enumerate(alphas):
        total = al[None, None, :] + mesh.corner_shifts  # units of a
        block = np.mod(total, 2)          # which translated copy owns the corner
        new_shift = (total - block) // 2  # lattice shift in units of 2a
        block_id = block[..., 0] * 4 + block[..., 1] * 2 + block[..., 2]
        faces_out[copy_idx * F : (copy_idx + 1) * F] = block_id * V + mesh.faces
        shifts_out[copy_idx * F : (copy_idx + 1) * F] = new_shift
    return PeriodicMesh(new_verts, faces_out, big, shifts_out)


def _vertex_orbits(perms: dict, n: int):
    parent = np.arange(n)

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for idx in perms.values():
        for a in range(n):
            ra, rb = find(a), find(int(idx[a]))
            if ra != rb:
                parent[ra] = rb
    roots = np.array([find(v) for v in range(n)])
    uniq, orbit_id = np.unique(roots, return_inverse=True)
    return uniq, orbit_id


def quotient_mesh(
    mesh: PeriodicMesh,
    group: CrystalGroup,
    perms: dict | None = None,
    singular_margin_tol: float | None = None,
) -> PeriodicMesh:
    """Divide a group-invariant mesh by a freely acting crystallographic
    group.  Vertices and faces become orbits (exact index bookkeeping, each
    orbit of size exactly |G|); the result is tagged as an orbifold mesh and
    carries the measured distance margin to the singular set."""
    if perms is None:
        perms = group_vertex_permutations(mesh, group.elements)
    order = len(group)
    V, F = mesh.n_vertices, mesh.n_faces

    reps, orbit_id = _vertex_orbits(perms, V)
    counts = np.bincount(orbit_id)
    if not np.all(counts == order):
        raise NonFreeActionError(
            f"vertex orbits of size {sorted(set(counts.tolist()))}; "
            f"expected all equal to {order}"
        )

    margin = singular_distance(mesh, group)
    if singular_margin_tol is not None and margin < singular_margin_tol:
        raise NonFreeActionError(
            f"mesh approaches the singular set (distance {margin:.3g})"
        )

    # face orbits through the vertex permutations
    face_lookup = {}
    for f, tri in enumerate(mesh.faces):
        key = frozenset(int(v) for v in tri)
        if key in face_lookup:
            raise ValueError("two faces share a vertex set; mesh too coarse")
        face_lookup[key] = f
    fparent = np.arange(F)

    def ffind(x):
        while fparent[x] != x:
            fparent[x] = fparent[fparent[x]]
            x = fparent[x]
        return x

    for g, idx in perms.items():
        image = idx[mesh.faces]
        for f in range(F):
            key = frozenset(int(v) for v in image[f])
            f2 = face_lookup[key]
            ra, rb = ffind(f), ffind(f2)
            if ra != rb:
                fparent[ra] = rb
    face_roots = np.array([ffind(f) for f in range(F)])
    rep_faces = np.unique(face_roots)
    if len(rep_faces) * order != F:
        raise NonFreeActionError("face orbits are not free")

    new_faces = orbit_id[mesh.faces[rep_faces]]
    corner_positions = mesh.corner_positions[rep_faces]
    new_vertices = mesh.vertices[reps]
    out = PeriodicMesh(
        new_vertices,
        new_faces,
        mesh.side,
        corner_positions=corner_positions,
        ambient=AMBIENT_ORBIFOLD,
    )
    out.halfedges()  # validates manifoldness of the identification
    out.singular_margin = margin
    out.covering_orbit_id = orbit_id
    out.covering_rep_vertices = reps
    return out


def singular_distance(mesh: PeriodicMesh, group: CrystalGroup) -> float:
    """Min distance from mesh vertices to the fixed locus of the group."""
    ss = singular_set(group)
    side = mesh.side
    pos = _canonical_positions(mesh)
    best = np.inf
    offsets = np.array(
        [[i, j, k] for i in (-1, 0, 1) for j in (-1, 0, 1) for k in (-1, 0, 1)],
        dtype=float,
    ) * side
    for line in ss.lines:
        base = np.array([float(x) for x in line.base])
        d = np.array([float(x) for x in line.directions[0]])
        d = d / np.linalg.norm(d)
        diff = _wrap_delta(pos - base, side)
        # periodic point-line distance: minimize over nearby lattice images
        for off in offsets:
            v = diff + off
            perp = v - np.outer(v @ d, d)
            best = min(best, float(np.linalg.norm(perp, axis=1).min()))
    for q in ss.points:
        base = np.array([float(x) for x in q])
        v = _wrap_delta(pos - base, side)
        best = min(best, float(np.linalg.norm(v, axis=1).min()))
    return best


# ---------------------------------------------------------------------------
# Straight lines, Gauss map data, the square catenoid
# ---------------------------------------------------------------------------


@dataclass
class DetectedLine:
    vertex_ids: np.ndarray
    base: np.ndarray          # a point of the line (canonical coords)
    direction: np.ndarray     # unit, canonical sign
    axis: int                 # coordinate held constant (-1 if none)
    height: float             # value of that constant coordinate
    length: float             # loop length of the closed geodesic
    max_residual: float


def detect_lines(
    mesh: PeriodicMesh, tol: float | None = None, min_count: int = 8
) -> list[DetectedLine]:
    """Find closed straight lines as maximal collinear vertex chains.

    Chains are grown vertex-to-vertex along the direction of a seed edge;
    a chain counts when it closes up around the torus with every vertex
    within ``tol`` of the fitted line.
    """
    side = mesh.side
    if tol is None:
        tol = 1e-6 * side
    pos = _canonical_positions(mesh)
    tree = cKDTree(pos, boxsize=side)
    h = mesh.mean_edge_length()
    pairs = tree.query_pairs(r=1.9 * h, output_type="ndarray")

    found: list[DetectedLine] = []
    claimed: set[tuple[int, int]] = set()

    def grow(start: int, step: np.ndarray):
        chain = [start]
        lifted = [pos[start]]
        current = pos[start].copy()
        for _ in range(16 * min_count):
            target = current + step
            cands = tree.query_ball_point(np.mod(target, side), r=0.35 * np.linalg.norm(step))
            nxt = None
            for c in cands:
                delta = target - (current + _wrap_delta(pos[c] - current, side))
                if np.linalg.norm(delta) <= tol + 0.3 * np.linalg.norm(step):
                    lift = current + _wrap_delta(pos[c] - current, side)
                    perp = lift - lifted[0]
                    perp = perp - np.dot(perp, dhat) * dhat
                    if np.linalg.norm(perp) <= tol:
                        nxt = (c, lift)
                        break
            if nxt is None:
                return None
            c, lift = nxt
            if c == start:
                return chain, lifted
            if c in chain:
                return None
            chain.append(c)
            lifted.append(lift)
            current = lift
        return None

    for u, v in pairs:
        u, v = int(u), int(v)
        if (u, v) in claimed or (v, u) in claimed:
            continue
        step = _wrap_delta(pos[v] - pos[u], side)
        dhat = step / np.linalg.norm(step)
        res = grow(u, step)
        if res is None:
            continue
        chain, lifted = res
        if len(chain) < min_count:
            continue
        lifted = np.asarray(lifted)
        base = lifted[0]
        rel = lifted - base
        resid = rel - np.outer(rel @ dhat, dhat)
        max_res = float(np.linalg.norm(resid, axis=1).max())
        if max_res > tol:
            continue
        closing = lifted[-1] + _wrap_delta(pos[chain[0]] - lifted[-1], side)
        ring = np.vstack([lifted, closing])
        length = float(np.sum(np.linalg.norm(np.diff(ring, axis=0), axis=1)))
        d_can = dhat.copy()
        first = np.argmax(np.abs(d_can) > 1e-8)
        if d_can[first] < 0:
            d_can = -d_can
        const_axes = np.where(np.abs(d_can) < 1e-8)[0]
        axis = int(const_axes[0]) if len(const_axes) == 1 else -1
        height = float(np.mod(base[axis], side)) if axis >= 0 else float("nan")
        for i in range(len(chain)):
            claimed.add((chain[i], chain[(i + 1) % len(chain)]))
            claimed.add((chain[(i + 1) % len(chain)], chain[i]))
        found.append(
            DetectedLine(
                np.asarray(chain), np.mod(base, side), d_can, axis, height,
                length, max_res,
            )
        )
    return found


@dataclass
class GaussData:
    normals: np.ndarray
    angle_defects: np.ndarray
    total_curvature: float
    degree: float
    branch_min_angles: dict[tuple[int, int, int], float]


def gauss_data(mesh: PeriodicMesh, branch_tol: float = 0.12) -> GaussData:
    """Vertex normals, angle defects, total curvature and the Gauss-map
    degree (total curvature / -4pi on a minimal surface); flags how closely
    the normal field approaches the cube-diagonal branch directions."""
    normals = mesh.vertex_normals()
    defects = mesh.angle_defects()
    total = float(defects.sum())
    degree = total / (-4.0 * np.pi)
    branch = {}
    for sx in (1, -1):
        for sy in (1, -1):
            for sz in (1, -1):
                d = np.array([sx, sy, sz]) / np.sqrt(3.0)
                ang = np.arccos(np.clip(normals @ d, -1.0, 1.0))
                branch[(sx, sy, sz)] = float(ang.min())
    return GaussData(normals, defects, total, degree, branch)


# -- square catenoid extraction ---------------------------------------------


@dataclass
class BoundarySquare:
    loop_vertices: np.ndarray     # positions (lifted, ordered)
    height: float
    supporting_lines: list[tuple[np.ndarray, np.ndarray]]  # (point, direction)
    side_lengths: list[float]     # loop length carried by each supporting line
    corner_points: np.ndarray


@dataclass
class CatenoidExtraction:
    mesh: MeshWithBoundary
    squares: list[BoundarySquare]
    plane_heights: tuple[float, float]


def extract_catenoid(
    mesh: PeriodicMesh, lines: list[DetectedLine] | None = None
) -> CatenoidExtraction:
    """Slice the relaxed P surface along its straight lines.

    The four horizontal lines are exact edge paths of the snapped mesh, so
    the surface is cut combinatorially along them; the component between
    the two line heights is the square catenoid (the complementary band is
    its image under the quarter-diagonal translation).  Each boundary loop
    is analyzed into straight runs supported by exactly two closed lines;
    the reported side length per supporting line is the distance between
    consecutive corner intersections summed over that line's runs.
    """
    side = mesh.side
    if lines is None:
        lines = detect_lines(mesh)
    zlines = [l for l in lines if l.axis == 2]
    heights = sorted({round(l.height / side * 8) / 8 * side for l in zlines})
    if len(heights) != 2:
        raise ValueError(
            f"expected straight lines at two heights, found {heights}"
        )
    lo, hi = heights
    for l in zlines:
        if min(abs(l.height - lo), abs(l.height - hi)) > 1e-6 * side:
            raise ValueError("slicing plane misses the detected lines")

    band = _cut_band(mesh, [l.vertex_ids for l in zlines], lo, hi)
    loops = band.boundary_loops()
    squares = [
        _analyze_boundary_square(band, loop, (lo, hi)) for loop in loops
    ]
    return CatenoidExtraction(band, squares, (lo, hi))


def _cut_band(mesh: PeriodicMesh, chains, lo: float, hi: float) -> MeshWithBoundary:
    """Cut the closed mesh along the chain edge loops and keep the component
    between the two heights.  Chain vertices shared with the complement
    become boundary vertices; pinched stars are split into fans."""
    cut = set()
    for ch in chains:
        for i in range(len(ch)):
            a, b = int(ch[i]), int(ch[(i + 1) % len(ch)])
            cut.add((min(a, b), max(a, b)))
    he = mesh.halfedges()
    F = mesh.n_faces
    parent = np.arange(F)

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for h in range(3 * F):
        t = he.twin[h]
        if t < 0 or t < h:
            continue
        a, b = int(he.origin[h]), int(he.dest[h])
        if (min(a, b), max(a, b)) in cut:
            continue
        ra, rb = find(int(he.face[h])), find(int(he.face[t]))
        if ra != rb:
            parent[ra] = rb
    roots = np.array([find(f) for f in range(F)])
    centroid_z = mesh.corner_positions.mean(axis=1)[:, 2]
    target = None
    for c in np.unique(roots):
        zs = centroid_z[roots == c]
        if zs.min() > lo - 1e-9 and zs.max() < hi + 1e-9:
            target = c
            break
    if target is None:
        raise ValueError("cut did not isolate the band between the planes")
    faces = mesh.faces[roots == target]
    used = np.unique(faces)
    remap = -np.ones(mesh.n_vertices, dtype=np.int64)
    remap[used] = np.arange(len(used))
    pts = mesh.vertices[used]
    faces = remap[faces]
    pts, faces = _split_pinch_vertices(pts, faces, mesh.side)
    shifts = minimal_image_shifts(pts, faces, mesh.side)
    return MeshWithBoundary(pts, faces, mesh.side, shifts)



def _split_pinch_vertices(pts: np.ndarray, faces: np.ndarray, side: float):
    """Duplicate vertices whose face star splits into several fans."""
    star: dict[int, list[int]] = {}
    for f, tri in enumerate(faces):
        for v in tri:
            star.setdefault(int(v), []).append(f)
    edge_faces: dict[tuple[int, int], list[int]] = {}
    for f, tri in enumerate(faces):
        for c in range(3):
            key = (min(tri[c], tri[(c + 1) % 3]), max(tri[c], tri[(c + 1) % 3]))
            edge_faces.setdefault((int(key[0]), int(key[1])), []).append(f)
    new_pts = [p for p in pts]
    faces = faces.copy()
    for v, fs in star.items():
        if len(fs) < 2:
            continue
        parent = {f: f for f in fs}

        def find(x):
            while parent[x] != x:
                parent[x] = parent[parent[x]]
                x = parent[x]
            return x

        for f in fs:
            tri = faces[f]
            for c in range(3):
                if tri[c] != v:
                    continue
                for w in (tri[(c + 1) % 3], tri[(c + 2) % 3]):
                    key = (min(v, int(w)), max(v, int(w)))
                    for f2 in edge_faces.get(key, []):
                        if f2 in parent:
                            ra, rb = find(f), find(f2)
                            if ra != rb:
                                parent[ra] = rb
        fans: dict[int, list[int]] = {}
        for f in fs:
            fans.setdefault(find(f), []).append(f)
        if len(fans) <= 1:
            continue
        for root, members in list(fans.items())[1:]:
            new_id = len(new_pts)
            new_pts.append(pts[v])
            for f in members:
                tri = faces[f]
                faces[f] = [new_id if int(x) == v else int(x) for x in tri]
    return np.asarray(new_pts), faces




def _analyze_boundary_square(band, loop, heights):
    side = band.side
    pos = band.vertices[loop]
    z = float(np.median(pos[:, 2]))
    height = min(heights, key=lambda c: abs(c - z))

    # lift the loop to a continuous polyline; it closes up to a lattice vector
    lifted = [pos[0]]
    for p in pos[1:]:
        lifted.append(lifted[-1] + _wrap_delta(p - lifted[-1], side))
    lifted = np.asarray(lifted)
    closing_end = lifted[-1] + _wrap_delta(pos[0] - lifted[-1], side)
    winding = closing_end - lifted[0]  # lattice vector of the loop

    runs = _straight_runs(lifted, winding)
    merged = _merge_runs_by_line(runs, side)
    if len(merged) != 2:
        raise ValueError(
            f"boundary loop supported by {len(merged)} lines, expected 2"
        )
    corners, side_lengths = _corner_lengths(runs, merged, winding)
    supporting = [
        (np.mod(m["point"], side), m["direction"]) for m in merged
    ]
    return BoundarySquare(lifted, height, supporting, side_lengths, corners)


def _straight_runs(lifted: np.ndarray, winding: np.ndarray, angle_tol: float = 0.15, min_pts: int = 8):
    """Maximal straight runs of the lifted closed polyline, in cyclic order.

    Each run carries a fitted line (centroid + unit direction in the lift).
    Short runs (corner-rounding debris near the surface's saddle points)
    are dropped; the survivors keep their cyclic order.
    """
    n = len(lifted)
    ring = np.vstack([lifted, lifted[0] + winding])
    segs = np.diff(ring, axis=0)  # n segments, seg i: point i -> i+1
    breaks = []
    for i in range(n):
        a, b = segs[i - 1], segs[i]
        c = np.dot(a, b) / (np.linalg.norm(a) * np.linalg.norm(b) + 1e-300)
        if c <= np.cos(angle_tol):
            breaks.append(i)  # direction turns at vertex i
    if not breaks:
        return []
    runs = []
    for k in range(len(breaks)):
        start = breaks[k]
        stop = breaks[(k + 1) % len(breaks)] + (n if k == len(breaks) - 1 else 0)
        idx = list(range(start, stop + 1))  # inclusive of both corners
        pts = np.array([lifted[i % n] + (i // n) * winding for i in idx])
        if len(pts) < min_pts:
            continue
        center = pts.mean(axis=0)
        rel = pts - center
        _, _, vt = np.linalg.svd(rel, full_matrices=False)
        d = vt[0]
        first = int(np.argmax(np.abs(d) > 1e-8))
        if d[first] < 0:
            d = -d
        runs.append({"points": pts, "direction": d, "point": center})
    return runs


def _merge_runs_by_line(runs, side, dist_tol=None):
    """Group runs by supporting closed line modulo the lattice.

    The offset test minimizes the perpendicular distance over neighboring
    lattice images (offsets of exactly half a period occur here, where a
    single minimal-image wrap is ambiguous)."""
    if dist_tol is None:
        dist_tol = 2e-2 * side
    offsets = np.array(
        [[i, j, k] for i in (-1, 0, 1) for j in (-1, 0, 1) for k in (-1, 0, 1)],
        dtype=float,
    ) * side
    groups = []
    for k, run in enumerate(runs):
        placed = False
        for g in groups:
            if abs(np.dot(run["direction"], g["direction"])) > 0.999:
                delta = run["point"] - g["point"]
                best = np.inf
                for off in offsets:
                    d = delta + off
                    perp = d - np.dot(d, g["direction"]) * g["direction"]
                    best = min(best, float(np.linalg.norm(perp)))
                if best < dist_tol:
                    g["runs"].append(k)
                    placed = True
                    break
        if not placed:
            groups.append(
                {
                    "direction": run["direction"],
                    "point": run["point"],
                    "runs": [k],
                }
            )
    return groups


def _corner_lengths(runs, groups, winding):
    """Quadrilateral corners (intersections of consecutive supporting lines
    in the continuous lift) and the loop length carried by each group."""
    m = len(runs)
    corners = []
    for k in range(m):
        a = runs[k]
        b = dict(runs[(k + 1) % m])
        if k == m - 1:  # the wrap junction sees the next run one period on
            b["point"] = b["point"] + winding
        corners.append(_line_intersection_3d(a, b))
    corners = np.asarray(corners)
    lengths = [0.0 for _ in groups]
    for k in range(m):
        prev_corner = corners[(k - 1) % m] - (winding if k == 0 else 0.0)
        span = float(np.linalg.norm(corners[k] - prev_corner))
        for gi, g in enumerate(groups):
            if k in g["runs"]:
                lengths[gi] += span
                break
    return corners, lengths


def _line_intersection_3d(run_a, run_b):
    """Closest point between two fitted (near-coplanar) lines in the lift."""
    pa, da = run_a["point"], run_a["direction"]
    pb, db = run_b["point"], run_b["direction"]
    w = pa - pb
    aa = np.dot(da, da)
    bb = np.dot(db, db)
    ab = np.dot(da, db)
    aw = np.dot(da, w)
    bw = np.dot(db, w)
    den = aa * bb - ab * ab
    t = (ab * bw - bb * aw) / den
    s = (aa * bw - ab * aw) / den
    return 0.5 * (pa + t * da + pb + s * db)
