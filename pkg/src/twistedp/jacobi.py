"""Discrete stability (Jacobi) operator of minimal meshes in flat ambients.

The second-variation form Q(u, v) = int grad(u).grad(v) - (Ric(N)+|A|^2) u v
is assembled as uT (S - P) v with S the cotangent stiffness, P the lumped
potential and M the lumped mass.  On a minimal surface in a flat space the
potential density |A|^2 equals -2K, so the lumped potential is exactly twice
the (negated) angle defect: P_ii = -2 * defect_i, which inherits the
combinatorial Gauss-Bonnet identity sum(defects) = 2 pi chi.

Index and nullity verdicts never rely on a fixed magic tolerance: the zero
band is max(3 * refinement_error, floor_rel * |lambda_0|), with the
refinement error measured from a resolution pair.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from twistedp.mesh import PeriodicMesh

DENSE_CUTOFF = 4000


@dataclass
class OperatorTriple:
    """Stiffness, potential and mass of the discrete Jacobi operator."""

    stiffness: sp.csr_matrix
    potential: sp.csr_matrix
    mass: sp.dia_matrix
    vertex_areas: np.ndarray

    @property
    def n(self) -> int:
        return self.stiffness.shape[0]

    def quadratic(self) -> sp.csr_matrix:
        return (self.stiffness - self.potential).tocsr()


def assemble(mesh: PeriodicMesh, ricci_normal: np.ndarray | None = None) -> OperatorTriple:
    """Assemble (S, P, M) on a relaxed minimal mesh.

    ``ricci_normal`` is the ambient Ricci curvature along the surface normal
    per vertex; it is identically zero in the flat torus and orbifold
    ambients and kept only so the operator form stays general.
    """
    V = mesh.n_vertices
    faces = mesh.faces
    cot = mesh.corner_cotangents()
    rows, cols, vals = [], [], []
    for c in range(3):
        i = faces[:, (c + 1) % 3]
        j = faces[:, (c + 2) % 3]
        w = 0.5 * cot[:, c]
        rows += [i, j, i, j]
        cols += [i, j, j, i]
        vals += [w, w, -w, -w]
    S = sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(V, V),
    )
    areas = mesh.mixed_voronoi_areas()
    defects = mesh.angle_defects()
    pot = -2.0 * defects
    if ricci_normal is not None:
        pot = pot + np.asarray(ricci_normal, dtype=float) * areas
    P = sp.diags(pot).tocsr()
    M = sp.diags(areas)
    for name, arr in (("stiffness", S.data), ("potential", P.data), ("mass", areas)):
        if not np.all(np.isfinite(arr)):
            raise FloatingPointError(f"non-finite entries in {name}")
    return OperatorTriple(S, P, M, areas)


def index_form(triple: OperatorTriple, u: np.ndarray, v: np.ndarray) -> float:
    """The bilinear second-variation form Q(u, v) = uT (S - P) v."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    if u.shape != (triple.n,) or v.shape != (triple.n,):
        raise ValueError("index form arguments must be vertex vectors")
    return float(u @ (triple.stiffness @ v) - u @ (triple.potential @ v))


@dataclass
class SpectrumReport:
    """Sorted eigenpairs with the index/nullity verdict and its provenance."""

    surface: str
    resolution: int
    kind: str  # "closed" | "dirichlet"
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray  # columns, M-orthonormal, zero on any boundary
    index: int | None = None
    nullity: int | None = None
    delta: float | None = None
    refinement_error: float | None = None
    ambiguous: list[int] = field(default_factory=list)
    kernel_match_angle: float | None = None
    lambda0_simple: bool = True
    phi0_sign_definite: bool = True

    def to_dict(self) -> dict:
        return {
            "surface": self.surface,
            "resolution": self.resolution,
            "kind": self.kind,
            "eigenvalues": [float(x) for x in self.eigenvalues],
            "index": self.index,
            "nullity": self.nullity,
            "delta": self.delta,
            "refinement_error": self.refinement_error,
            "ambiguous": list(map(int, self.ambiguous)),
            "kernel_match_angle": self.kernel_match_angle,
            "lambda0_simple": self.lambda0_simple,
            "phi0_sign_definite": self.phi0_sign_definite,
        }

    def write_json(self, path) -> None:
        with open(path, "w") as f:
            json.dump(self.to_dict(), f, indent=2, sort_keys=True)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["k", "eigenvalue"])
            for k, lam in enumerate(self.eigenvalues):
                writer.writerow([k, repr(float(lam))])


def _canonical_signs(vecs: np.ndarray) -> np.ndarray:
    out = vecs.copy()
    for j in range(out.shape[1]):
        i = int(np.argmax(np.abs(out[:, j])))
        if out[i, j] < 0:
            out[:, j] = -out[:, j]
    return out


def solve_lowest(
    A: sp.spmatrix,
    M: sp.spmatrix,
    k: int,
    dense_cutoff: int = DENSE_CUTOFF,
    lower_bound: float | None = None,
):
    """Lowest k eigenpairs of the symmetric pencil (A, M), M positive diag.

    Dense solve below ``dense_cutoff`` unknowns, shift-invert Lanczos above
    (the shift sits strictly below the smallest eigenvalue, so the nearest
    eigenvalues to it are exactly the lowest ones).
    """
    n = A.shape[0]
    k = min(k, n)
    if n <= dense_cutoff:
        w, v = sla.eigh(
            np.asarray(A.todense()),
            np.asarray(M.todense()),
            subset_by_index=[0, k - 1],
        )
        return w, _canonical_signs(v)
    if lower_bound is None:
        raise ValueError("sparse path needs a lower bound on the spectrum")
    sigma = 1.05 * lower_bound - 1.0
    v0 = np.ones(n) / np.sqrt(n)
    try:
        w, v = spla.eigsh(A.tocsc(), k=k, M=M.tocsc(), sigma=sigma, which="LM", v0=v0)
    except spla.ArpackNoConvergence as exc:
        raise RuntimeError("eigensolver failed to converge") from exc
    order = np.argsort(w)
    return w[order], _canonical_signs(v[:, order])


def spectrum(
    mesh: PeriodicMesh,
    k: int = 8,
    surface: str = "surface",
    resolution: int = 0,
    triple: OperatorTriple | None = None,
    dense_cutoff: int = DENSE_CUTOFF,
) -> SpectrumReport:
    """Lowest k eigenpairs of the closed-surface Jacobi operator."""
    if k < 5:
        raise ValueError("request at least 5 eigenpairs")
    if triple is None:
        triple = assemble(mesh)
    # S is positive semidefinite, so lambda >= -max(|A|^2 + Ric)
    bound = -float(np.max(triple.potential.diagonal() / triple.vertex_areas))
    w, v = solve_lowest(
        triple.quadratic(), triple.mass, k, dense_cutoff, lower_bound=min(0.0, bound)
    )
    report = SpectrumReport(surface, resolution, "closed", w, v)
    gap = (w[1] - w[0]) / max(abs(w[0]), 1e-300)
    report.lambda0_simple = bool(gap > 1e-6)
    phi0 = v[:, 0]
    report.phi0_sign_definite = bool(phi0.min() * phi0.max() > 0)
    return report


def dirichlet_spectrum(
    mesh: PeriodicMesh,
    k: int = 6,
    surface: str = "domain",
    resolution: int = 0,
    triple: OperatorTriple | None = None,
    dense_cutoff: int = DENSE_CUTOFF,
) -> SpectrumReport:
    """Fixed-boundary eigenvalues: rows and columns of boundary vertices are
    removed and eigenvectors are extended by zero across the boundary."""
    he = mesh.halfedges()
    boundary = np.unique(
        np.concatenate([he.origin[he.twin < 0], he.dest[he.twin < 0]])
    )
    interior = np.setdiff1d(np.arange(mesh.n_vertices), boundary)
    if interior.size == 0:
        raise ValueError("no interior vertices")
    if triple is None:
        triple = assemble(mesh)
    A = triple.quadratic()[interior][:, interior]
    M = sp.diags(triple.vertex_areas[interior])
    bound = -float(
        np.max(triple.potential.diagonal()[interior] / triple.vertex_areas[interior])
    )
    w, v = solve_lowest(
        A.tocsr(), M, min(k, interior.size - 1), dense_cutoff,
        lower_bound=min(0.0, bound),
    )
    full = np.zeros((mesh.n_vertices, v.shape[1]))
    full[interior] = v
    report = SpectrumReport(surface, resolution, "dirichlet", w, full)
    if v.shape[1] > 1:
        gap = (w[1] - w[0]) / max(abs(w[0]), 1e-300)
        report.lambda0_simple = bool(gap > 1e-6)
    phi1 = v[:, 0]
    report.phi0_sign_definite = bool(phi1.min() * phi1.max() > 0)
    return report


@dataclass
class TolerancePolicy:
    """Zero-band policy: delta = max(3 * refinement_error, floor_rel*|l0|)."""

    refinement_error: float
    floor_rel: float = 1e-6
    floor_abs: float = 0.0


def index_nullity(report: SpectrumReport, policy: TolerancePolicy) -> tuple[int, int]:
    """Classify eigenvalues as negative / zero / positive.

    An eigenvalue counts as zero iff |lambda| <= delta; negatives must clear
    the band.  Values in (delta, 3*delta] are flagged as ambiguous on the
    report rather than silently resolved.
    """
    w = report.eigenvalues
    floor = policy.floor_rel * abs(float(w[0])) + policy.floor_abs
    delta = max(3.0 * policy.refinement_error, floor)
    index = int(np.sum(w < -delta))
    nullity = int(np.sum(np.abs(w) <= delta))
    report.index = index
    report.nullity = nullity
    report.delta = delta
    report.refinement_error = policy.refinement_error
    report.ambiguous = [
        int(i) for i, lam in enumerate(w) if delta < abs(lam) <= 3.0 * delta
    ]
    return index, nullity


def kernel_match(
    report: SpectrumReport, mesh: PeriodicMesh, triple: OperatorTriple | None = None
) -> float:
    """Largest principal angle between the numerical null space and the span
    of the Gauss-map coordinate functions N_x, N_y, N_z (M-orthonormalized)."""
    if not report.nullity:
        raise ValueError("report has nullity 0: nothing to match")
    if triple is None:
        triple = assemble(mesh)
    w = report.eigenvalues
    null_cols = [
        i for i, lam in enumerate(w) if abs(lam) <= report.delta
    ]
    kernel = report.eigenvectors[:, null_cols]
    normals = mesh.vertex_normals()
    angle = subspace_angle_m(kernel, normals, triple.vertex_areas)
    report.kernel_match_angle = angle
    return angle


def subspace_angle_m(B1: np.ndarray, B2: np.ndarray, weights: np.ndarray) -> float:
    """Largest principal angle between column spans in the weighted inner
    product diag(weights)."""
    r = np.sqrt(weights)[:, None]
    angles = sla.subspace_angles(B1 * r, B2 * r)
    return float(angles.max())
