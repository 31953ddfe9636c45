"""Oriented triangle meshes in a flat torus (or its orbifold quotient).

A periodic mesh stores canonical vertex coordinates in [0, side)^3 together
with an integer lattice shift per face corner, so every face has an exact
lifted Euclidean triangle: ``lift[f, c] = vertices[faces[f, c]] + side *
corner_shifts[f, c]``.  Half-edge shift consistency (zero sum around faces,
opposite across twins) then holds by construction and is verified when the
connectivity is built.

Quotient meshes in the projective orbifold keep explicit lifted corner
positions instead of lattice shifts; all geometry below works off the lifted
corners, so both ambient kinds share one code path.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

AMBIENT_TORUS = "torus"
AMBIENT_ORBIFOLD = "orbifold"

DEGENERATE_AREA_FACTOR = 1e-12


class NonManifoldError(ValueError):
    pass


class DegenerateTriangleError(RuntimeError):
    pass


@dataclass
class HalfEdgeView:
    """Flat arrays describing the half-edge structure (3F half-edges).

    Half-edge ``3*f + c`` runs from corner ``c`` to corner ``(c+1) % 3`` of
    face ``f``.  ``twin`` is -1 on the boundary.  ``shift`` is the lattice
    shift of the head relative to the tail (integer, torus meshes only).
    """

    origin: np.ndarray
    dest: np.ndarray
    face: np.ndarray
    next: np.ndarray
    twin: np.ndarray
    shift: np.ndarray | None


class PeriodicMesh:
    """Immutable-by-convention triangle mesh in T^3(side) or its quotient."""

    def __init__(
        self,
        vertices: np.ndarray,
        faces: np.ndarray,
        side: float,
        corner_shifts: np.ndarray | None = None,
        corner_positions: np.ndarray | None = None,
        ambient: str = AMBIENT_TORUS,
    ):
        self.vertices = np.ascontiguousarray(vertices, dtype=float)
        self.faces = np.ascontiguousarray(faces, dtype=np.int64)
        self.side = float(side)
        self.ambient = ambient
        if ambient == AMBIENT_TORUS:
            if corner_shifts is None:
                raise ValueError("torus meshes need corner_shifts")
            self.corner_shifts = np.ascontiguousarray(corner_shifts, dtype=np.int64)
            self.corner_positions = (
                self.vertices[self.faces] + self.side * self.corner_shifts
            )
        else:
            if corner_positions is None:
                raise ValueError("orbifold meshes need corner_positions")
            self.corner_shifts = None
            self.corner_positions = np.ascontiguousarray(corner_positions, dtype=float)
        self._halfedges: HalfEdgeView | None = None

    # -- connectivity -------------------------------------------------------

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    def halfedges(self) -> HalfEdgeView:
        if self._halfedges is None:
            self._halfedges = self._build_halfedges()
        return self._halfedges

    def _build_halfedges(self) -> HalfEdgeView:
        F = self.n_faces
        he_origin = self.faces[:, [0, 1, 2]].reshape(-1)
        he_dest = self.faces[:, [1, 2, 0]].reshape(-1)
        he_face = np.repeat(np.arange(F), 3)
        he_next = (np.arange(3 * F).reshape(F, 3)[:, [1, 2, 0]]).reshape(-1)
        if self.corner_shifts is not None:
            s = self.corner_shifts
            he_shift = (s[:, [1, 2, 0], :] - s[:, [0, 1, 2], :]).reshape(-1, 3)
        else:
            he_shift = None

        lookup: dict[tuple[int, int], int] = {}
        twin = np.full(3 * F, -1, dtype=np.int64)
        for h in range(3 * F):
            key = (int(he_origin[h]), int(he_dest[h]))
            if key in lookup:
                raise NonManifoldError(
                    f"duplicate directed edge {key}; mesh is non-manifold "
                    "or inconsistently oriented"
                )
            lookup[key] = h
        for h in range(3 * F):
            opp = lookup.get((int(he_dest[h]), int(he_origin[h])), -1)
            twin[h] = opp
        # shift anti-symmetry across twins (exact integer check)
        if he_shift is not None:
            inner = twin >= 0
            if not np.array_equal(he_shift[inner], -he_shift[twin[inner]]):
                raise NonManifoldError("twin half-edges carry non-opposite shifts")
        return HalfEdgeView(he_origin, he_dest, he_face, he_next, twin, he_shift)

    def is_closed(self) -> bool:
        return bool(np.all(self.halfedges().twin >= 0))

    def edge_count(self) -> int:
        nb = int(np.sum(self.halfedges().twin < 0))
        return (3 * self.n_faces + nb) // 2

    def boundary_loops(self) -> list[np.ndarray]:
        """Ordered vertex loops along the boundary (empty if closed)."""
        he = self.halfedges()
        boundary = np.where(he.twin < 0)[0]
        succ = {}
        for h in boundary:
            succ.setdefault(int(he.origin[h]), []).append(int(h))
        loops = []
        unused = set(int(h) for h in boundary)
        while unused:
            h = min(unused)
            loop = []
            while h in unused:
                unused.remove(h)
                loop.append(int(he.origin[h]))
                cands = succ.get(int(he.dest[h]), [])
                nxt = next((c for c in cands if c in unused), None)
                if nxt is None:
                    break
                h = nxt
            loops.append(np.array(loop, dtype=np.int64))
        return loops

    def topology(self) -> tuple[int, int, bool]:
        """Euler characteristic, genus and orientability.

        Genus is reported for closed meshes ((2 - chi) / 2); meshes with
        boundary get the genus of the capped surface via chi + #loops.
        """
        V, F = self.n_vertices, self.n_faces
        E = self.edge_count()
        chi = V - E + F
        nloops = len(self.boundary_loops())
        genus = (2 - (chi + nloops)) // 2
        return chi, genus, True

    # -- geometry -----------------------------------------------------------

    def lifted_corners(self) -> np.ndarray:
        return self.corner_positions

    def face_areas(self) -> np.ndarray:
        p = self.corner_positions
        cross = np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
        return 0.5 * np.linalg.norm(cross, axis=1)

    def area(self) -> float:
        return float(np.sum(self.face_areas()))

    def face_normals(self) -> np.ndarray:
        p = self.corner_positions
        cross = np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
        norm = np.linalg.norm(cross, axis=1, keepdims=True)
        return cross / norm

    def check_degenerate(self):
        if self.face_areas().min() < DEGENERATE_AREA_FACTOR * self.side**2:
            raise DegenerateTriangleError(
                "triangle area fell below the degeneracy threshold"
            )

    def corner_angles(self) -> np.ndarray:
        """Interior angle at each face corner, shape (F, 3)."""
        p = self.corner_positions
        out = np.empty((self.n_faces, 3))
        for c in range(3):
            u = p[:, (c + 1) % 3] - p[:, c]
            v = p[:, (c + 2) % 3] - p[:, c]
            cu = np.linalg.norm(u, axis=1)
            cv = np.linalg.norm(v, axis=1)
            cosv = np.einsum("ij,ij->i", u, v) / (cu * cv)
            out[:, c] = np.arccos(np.clip(cosv, -1.0, 1.0))
        return out

    def corner_cotangents(self) -> np.ndarray:
        """cot of the angle at each corner (opposite its half-edge)."""
        p = self.corner_positions
        out = np.empty((self.n_faces, 3))
        for c in range(3):
            u = p[:, (c + 1) % 3] - p[:, c]
            v = p[:, (c + 2) % 3] - p[:, c]
            dot = np.einsum("ij,ij->i", u, v)
            crs = np.linalg.norm(np.cross(u, v), axis=1)
            out[:, c] = dot / crs
        return out

    def angle_sums(self) -> np.ndarray:
        sums = np.zeros(self.n_vertices)
        np.add.at(sums, self.faces.reshape(-1), self.corner_angles().reshape(-1))
        return sums

    def angle_defects(self) -> np.ndarray:
        """2*pi - angle sum per vertex (discrete Gaussian curvature measure).

        Only meaningful on closed meshes; boundary vertices of an open mesh
        are assigned pi - angle sum.
        """
        sums = self.angle_sums()
        defects = 2.0 * np.pi - sums
        he = self.halfedges()
        if np.any(he.twin < 0):
            bverts = np.unique(he.origin[he.twin < 0])
            defects[bverts] = np.pi - sums[bverts]
        return defects

    def mixed_voronoi_areas(self) -> np.ndarray:
        """Meyer-style mixed areas: Voronoi in non-obtuse triangles,
        area/2 at the obtuse corner and area/4 elsewhere otherwise."""
        p = self.corner_positions
        cot = self.corner_cotangents()
        areas = self.face_areas()
        sq = np.empty((self.n_faces, 3))
        for c in range(3):
            e = p[:, (c + 2) % 3] - p[:, (c + 1) % 3]
            sq[:, c] = np.einsum("ij,ij->i", e, e)  # |edge opposite c|^2
        obtuse = cot < 0.0
        any_obtuse = obtuse.any(axis=1)
        contrib = np.empty((self.n_faces, 3))
        # Voronoi formula: A_c = (|e_b|^2 cot_b + |e_a|^2 cot_a) / 8
        for c in range(3):
            a, b = (c + 1) % 3, (c + 2) % 3
            contrib[:, c] = (sq[:, a] * cot[:, a] + sq[:, b] * cot[:, b]) / 8.0
        for c in range(3):
            mask = any_obtuse
            contrib[mask, c] = areas[mask] / 4.0
            at_c = mask & obtuse[:, c]
            contrib[at_c, c] = areas[at_c] / 2.0
        out = np.zeros(self.n_vertices)
        np.add.at(out, self.faces.reshape(-1), contrib.reshape(-1))
        return out

    def mean_edge_length(self) -> float:
        p = self.corner_positions
        total = 0.0
        for c in range(3):
            e = p[:, (c + 1) % 3] - p[:, c]
            total += float(np.sum(np.linalg.norm(e, axis=1)))
        return total / (3 * self.n_faces)

    def vertex_normals(self) -> np.ndarray:
        """Angle-weighted average of incident face normals, unit length."""
        fn = self.face_normals()
        ang = self.corner_angles()
        out = np.zeros((self.n_vertices, 3))
        for c in range(3):
            np.add.at(out, self.faces[:, c], fn * ang[:, c][:, None])
        norms = np.linalg.norm(out, axis=1, keepdims=True)
        norms[norms == 0] = 1.0
        return out / norms

    # -- export / import ----------------------------------------------------

    def export_obj(self, path) -> None:
        """OBJ with full-precision lifted coordinates plus a JSON sidecar
        carrying the per-half-edge lattice shifts and the ambient tag."""
        if self.n_faces == 0 or self.n_vertices == 0:
            raise ValueError("refusing to export an empty mesh")
        path = Path(path)
        with open(path, "w") as f:
            f.write("# periodic triangle mesh (canonical lift)\n")
            for v in self.vertices:
                f.write(f"v {v[0]!r} {v[1]!r} {v[2]!r}\n")
            for tri in self.faces:
                f.write(f"f {tri[0]+1} {tri[1]+1} {tri[2]+1}\n")
        he = self.halfedges()
        sidecar = {
            "side": repr(self.side),
            "ambient": self.ambient,
            "half_edges": {
                "origin": he.origin.tolist(),
                "dest": he.dest.tolist(),
                "face": he.face.tolist(),
                "next": he.next.tolist(),
                "twin": he.twin.tolist(),
                "shift": he.shift.tolist() if he.shift is not None else None,
            },
        }
        if self.ambient == AMBIENT_ORBIFOLD:
            sidecar["corner_positions"] = [
                [repr(x) for x in corner]
                for tri in self.corner_positions
                for corner in tri
            ]
        with open(path.with_suffix(path.suffix + ".json"), "w") as f:
            json.dump(sidecar, f)

    @staticmethod
    def import_obj(path) -> "PeriodicMesh":
        path = Path(path)
        verts, faces = [], []
        with open(path) as f:
            for line in f:
                if line.startswith("v "):
                    verts.append([float(t) for t in line.split()[1:4]])
                elif line.startswith("f "):
                    faces.append([int(t.split("/")[0]) - 1 for t in line.split()[1:4]])
        with open(path.with_suffix(path.suffix + ".json")) as f:
            sidecar = json.load(f)
        side = float(sidecar["side"])
        faces = np.asarray(faces, dtype=np.int64)
        if sidecar["ambient"] == AMBIENT_TORUS:
            he_shift = np.asarray(sidecar["half_edges"]["shift"], dtype=np.int64)
            he_shift = he_shift.reshape(len(faces), 3, 3)
            corner_shifts = np.zeros((len(faces), 3, 3), dtype=np.int64)
            corner_shifts[:, 1] = he_shift[:, 0]
            corner_shifts[:, 2] = he_shift[:, 0] + he_shift[:, 1]
            return PeriodicMesh(np.asarray(verts), faces, side, corner_shifts)
        corners = np.asarray(
            [[float(x) for x in c] for c in sidecar["corner_positions"]], dtype=float
        ).reshape(len(faces), 3, 3)
        return PeriodicMesh(
            np.asarray(verts), faces, side,
            corner_positions=corners, ambient=AMBIENT_ORBIFOLD,
        )

    def export_ply(self, path) -> None:
        if self.n_faces == 0 or self.n_vertices == 0:
            raise ValueError("refusing to export an empty mesh")
        with open(path, "w") as f:
            f.write(
                "ply\nformat ascii 1.0\n"
                f"element vertex {self.n_vertices}\n"
                "property float x\nproperty float y\nproperty float z\n"
                f"element face {self.n_faces}\n"
                "property list uchar int vertex_indices\nend_header\n"
            )
            for v in self.vertices:
                f.write(f"{v[0]:.9g} {v[1]:.9g} {v[2]:.9g}\n")
            for tri in self.faces:
                f.write(f"3 {tri[0]} {tri[1]} {tri[2]}\n")


class MeshWithBoundary(PeriodicMesh):
    """A periodic mesh with ordered boundary loops (e.g. a catenoid slab)."""

    def __init__(self, *args, loops=None, **kwargs):
        super().__init__(*args, **kwargs)
        self._loops = [np.asarray(l, dtype=np.int64) for l in (loops or [])]

    def boundary_loops(self) -> list[np.ndarray]:
        if self._loops:
            return self._loops
        return super().boundary_loops()


def minimal_image_shifts(points: np.ndarray, faces: np.ndarray, side: float) -> np.ndarray:
    """Corner shifts making each face's lift contiguous (corner 0 anchored).

    Valid whenever triangle extents are below side/2 per coordinate, which
    holds for all grid-scale meshes here.
    """
    tri = points[faces]
    ref = tri[:, :1, :]
    shifts = np.rint((ref - tri) / side).astype(np.int64)
    shifts[:, 0, :] = 0
    return shifts


def weld_periodic(points: np.ndarray, faces: np.ndarray, side: float, tol: float):
    """Wrap raw triangle-soup coordinates into [0, side)^3 and weld duplicate
    vertices (tolerance ``tol``), returning canonical points and a face map."""
    wrapped = np.mod(points, side)
    # snap near-side coordinates onto 0 to make wrap-duplicates coincide
    wrapped[wrapped > side - tol] = 0.0
    keys = np.round(wrapped / tol).astype(np.int64)
    _, first, inverse = np.unique(
        keys, axis=0, return_index=True, return_inverse=True
    )
    new_points = wrapped[first]
    new_faces = inverse[faces]
    # drop faces that collapsed under welding
    good = (
        (new_faces[:, 0] != new_faces[:, 1])
        & (new_faces[:, 1] != new_faces[:, 2])
        & (new_faces[:, 2] != new_faces[:, 0])
    )
    return new_points, new_faces[good]
