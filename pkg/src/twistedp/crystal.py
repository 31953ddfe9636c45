"""Exact arithmetic of flat cubic tori and their crystallographic groups.

Rigid motions of the torus T^3(a) = R^3 / a*Z^3 are stored as a signed
permutation matrix plus a rational translation, so group algebra (closure,
classification, fixed loci) is exact: no floating tolerances enter.

The groups needed downstream are provided as constructors: ``i222`` and
``immm`` acting on T^3(1), and the order-96 symmetry group ``im3m`` of the
Schwarz P surface acting on T^3(1/2).
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np

Vec3 = tuple[Fraction, Fraction, Fraction]
Mat3 = tuple[tuple[int, int, int], ...]

_IDENTITY: Mat3 = ((1, 0, 0), (0, 1, 0), (0, 0, 1))

MOTION_KINDS = (
    "identity",
    "translation",
    "screw",
    "axial_rotation",
    "reflection",
    "glide_reflection",
    "central_symmetry",
    "rotoreflection",
)


def _frac(x) -> Fraction:
    return x if isinstance(x, Fraction) else Fraction(x)


def _fracvec(v) -> Vec3:
    a, b, c = v
    return (_frac(a), _frac(b), _frac(c))


def _mod(x: Fraction, side: Fraction) -> Fraction:
    return x - (x // side) * side


def wrap_exact(p: Sequence, side) -> Vec3:
    side = _frac(side)
    return tuple(_mod(_frac(x), side) for x in _fracvec(p))


@dataclass(frozen=True)
class TorusPoint:
    """A point of the torus T^3(side), coordinates reduced to [0, side)."""

    coords: tuple[float, float, float]
    side: float

    def __post_init__(self):
        if not all(np.isfinite(self.coords)):
            raise ValueError(f"non-finite coordinates {self.coords}")


def wrap(p: Sequence[float], side: float) -> TorusPoint:
    """Canonical representative of a raw point in T^3(side)."""
    if side <= 0:
        raise ValueError("side must be positive")
    q = np.asarray(p, dtype=float)
    if not np.all(np.isfinite(q)):
        raise ValueError(f"non-finite coordinates {p}")
    return TorusPoint(tuple(np.mod(q, side)), float(side))


def covering_project(p: TorusPoint) -> TorusPoint:
    """Apply the 8:1 covering T^3(1) -> T^3(1/2) (reduction mod 1/2)."""
    if p.side != 1.0:
        raise ValueError("covering_project expects a point of T^3(1)")
    return wrap(p.coords, 0.5)


def covering_preimages(p: TorusPoint) -> list[TorusPoint]:
    """The 8 lifts of a point of T^3(1/2) to T^3(1)."""
    if p.side != 0.5:
        raise ValueError("expects a point of T^3(1/2)")
    shifts = itertools.product((0.0, 0.5), repeat=3)
    return [wrap(np.add(p.coords, s), 1.0) for s in shifts]


def _is_signed_permutation(m: Mat3) -> bool:
    rows = [sum(abs(e) for e in row) for row in m]
    cols = [sum(abs(m[i][j]) for i in range(3)) for j in range(3)]
    entries_ok = all(e in (-1, 0, 1) for row in m for e in row)
    return entries_ok and rows == [1, 1, 1] and cols == [1, 1, 1]


def _det3(m: Mat3) -> int:
    return (
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    )


@dataclass(frozen=True)
class AffineIsometry:
    """Rigid motion p -> linear @ p + shift of the torus T^3(side).

    ``linear`` is a signed permutation matrix (integer entries in {-1,0,1}),
    ``shift`` is reduced mod the lattice, so equality and hashing are exact.
    """

    linear: Mat3
    shift: Vec3
    side: Fraction

    @staticmethod
    def create(linear, shift, side) -> "AffineIsometry":
        m = tuple(tuple(int(e) for e in row) for row in linear)
        if not _is_signed_permutation(m):
            raise ValueError(f"linear part {m} is not a signed permutation")
        side = _frac(side)
        if side <= 0:
            raise ValueError("side must be positive")
        s = tuple(_mod(x, side) for x in _fracvec(shift))
        return AffineIsometry(m, s, side)

    @staticmethod
    def identity(side) -> "AffineIsometry":
        return AffineIsometry.create(_IDENTITY, (0, 0, 0), side)

    @property
    def det(self) -> int:
        return _det3(self.linear)

    def is_identity(self) -> bool:
        return self.linear == _IDENTITY and self.shift == (0, 0, 0)

    def apply_exact(self, p: Sequence) -> Vec3:
        p = _fracvec(p)
        q = [sum(Fraction(self.linear[i][j]) * p[j] for j in range(3)) + self.shift[i]
             for i in range(3)]
        return tuple(_mod(x, self.side) for x in q)

    def apply(self, pts: np.ndarray) -> np.ndarray:
        """Map float points (..., 3); the result is not wrapped."""
        lin = np.asarray(self.linear, dtype=float)
        sh = np.asarray([float(x) for x in self.shift])
        return np.asarray(pts, dtype=float) @ lin.T + sh

    def compose(self, other: "AffineIsometry") -> "AffineIsometry":
        """The motion p -> self(other(p))."""
        if self.side != other.side:
            raise ValueError("cannot compose isometries of different tori")
        a, b = self.linear, other.linear
        lin = tuple(
            tuple(sum(a[i][k] * b[k][j] for k in range(3)) for j in range(3))
            for i in range(3)
        )
        sh = tuple(
            sum(Fraction(a[i][k]) * other.shift[k] for k in range(3)) + self.shift[i]
            for i in range(3)
        )
        return AffineIsometry.create(lin, sh, self.side)

    def inverse(self) -> "AffineIsometry":
        inv = tuple(tuple(self.linear[j][i] for j in range(3)) for i in range(3))
        sh = tuple(
            -sum(Fraction(inv[i][k]) * self.shift[k] for k in range(3))
            for i in range(3)
        )
        return AffineIsometry.create(inv, sh, self.side)

    def __str__(self) -> str:
        return format_motion(self)


def format_motion(g: AffineIsometry) -> str:
    """Crystallographic coordinate notation, e.g. ``(-x+1/2, -y+1/2, z+1/2)``."""
    names = "xyz"
    parts = []
    for i in range(3):
        term = ""
        for j in range(3):
            e = g.linear[i][j]
            if e == 1:
                term += names[j]
            elif e == -1:
                term += "-" + names[j]
        s = g.shift[i]
        if s != 0:
            term += f"+{s}"
        parts.append(term)
    return "(" + ", ".join(parts) + ")"


def compose(g: AffineIsometry, h: AffineIsometry) -> AffineIsometry:
    return g.compose(h)


@dataclass(frozen=True)
class CrystalGroup:
    """A finite, composition-closed set of torus isometries."""

    elements: frozenset[AffineIsometry]
    side: Fraction

    def __len__(self) -> int:
        return len(self.elements)

    def __iter__(self):
        return iter(sorted(self.elements, key=format_motion))

    def __contains__(self, g: AffineIsometry) -> bool:
        return g in self.elements

    def identity(self) -> AffineIsometry:
        return AffineIsometry.identity(self.side)

    def orientation_preserving(self) -> "CrystalGroup":
        return CrystalGroup(
            frozenset(g for g in self.elements if g.det == 1), self.side
        )

    def orientation_reversing(self) -> frozenset[AffineIsometry]:
        """The odd coset (empty when the group preserves orientation)."""
        return frozenset(g for g in self.elements if g.det == -1)

    def is_subgroup_of(self, other: "CrystalGroup") -> bool:
        return self.elements <= other.elements

    def is_normal_in(self, other: "CrystalGroup") -> bool:
        if not self.is_subgroup_of(other):
            return False
        return all(
            g.compose(h).compose(g.inverse()) in self.elements
            for g in other.elements
            for h in self.elements
        )

    def report(self) -> dict:
        """Plain JSON-ready table of the group."""
        elems = sorted(self.elements, key=format_motion)
        return {
            "side": str(self.side),
            "order": len(elems),
            "orientation_preserving": sum(1 for g in elems if g.det == 1),
            "elements": [
                {"motion": format_motion(g), "det": g.det, "kind": classify(g)}
                for g in elems
            ],
        }


def generate(gens: Iterable[AffineIsometry], side=None, max_order: int = 4096) -> CrystalGroup:
    """Close a generating set under composition and inverse.

    Raises if closure exceeds ``max_order``, which signals input that does
    not generate a crystallographic group of the expected kind.
    """
    gens = list(gens)
    if side is None:
        if not gens:
            raise ValueError("need generators or an explicit side")
        side = gens[0].side
    side = _frac(side)
    if any(g.side != side for g in gens):
        raise ValueError("generators act on different tori")
    ident = AffineIsometry.identity(side)
    elements = {ident}
    frontier = [ident]
    gens_and_invs = gens + [g.inverse() for g in gens]
    while frontier:
        nxt = []
        for g in frontier:
            for h in gens_and_invs:
                gh = g.compose(h)
                if gh not in elements:
                    elements.add(gh)
                    nxt.append(gh)
                    if len(elements) > max_order:
                        raise ValueError(
                            f"group closure exceeded {max_order} elements"
                        )
        frontier = nxt
    return CrystalGroup(frozenset(elements), side)


def _linear_order_info(m: Mat3):
    """(is identity, is involution) for the linear part."""
    sq = tuple(
        tuple(sum(m[i][k] * m[k][j] for k in range(3)) for j in range(3))
        for i in range(3)
    )
    return m == _IDENTITY, sq == _IDENTITY


def classify(g: AffineIsometry) -> str:
    """Motion kind from determinant, linear conjugacy class and fixed points.

    Kinds: identity, translation, screw, axial_rotation, reflection,
    glide_reflection, central_symmetry, rotoreflection (improper rotation
    of order > 2; occurs in the order-96 cubic group, not in Immm).
    """
    is_id, is_invol = _linear_order_info(g.linear)
    has_fixed = fixed_locus(g).kind != "empty"
    if g.det == 1:
        if is_id:
            return "identity" if g.shift == (0, 0, 0) else "translation"
        return "axial_rotation" if has_fixed else "screw"
    minus_id = tuple(tuple(-e for e in row) for row in _IDENTITY)
    if g.linear == minus_id:
        return "central_symmetry"
    if is_invol:
        return "reflection" if has_fixed else "glide_reflection"
    return "rotoreflection"


@dataclass(frozen=True)
class FixedComponent:
    """One connected component of a fixed locus: base + direction span.

    Directions come from disjoint coordinate cycles of the underlying
    permutation, so membership tests decouple per cycle and stay exact.
    """

    base: Vec3
    directions: tuple[Vec3, ...]
    side: Fraction

    def contains(self, q: Sequence) -> bool:
        q = wrap_exact(q, self.side)
        diff = tuple(q[i] - self.base[i] for i in range(3))
        touched = [False, False, False]
        for d in self.directions:
            # parameter u for this direction, consistent across its support
            u = None
            for i in range(3):
                if d[i] == 0:
                    continue
                touched[i] = True
                ui = _mod(Fraction(d[i]) * diff[i], self.side)
                if u is None:
                    u = ui
                elif u != ui:
                    return False
        for i in range(3):
            if not touched[i] and _mod(diff[i], self.side) != 0:
                return False
        return True

    def sample(self, params: Sequence) -> Vec3:
        p = list(self.base)
        for d, u in zip(self.directions, params):
            u = _frac(u)
            for i in range(3):
                p[i] += u * d[i]
        return wrap_exact(p, self.side)


@dataclass(frozen=True)
class FixedLocus:
    """Fixed-point set of one isometry, solved exactly over the rationals."""

    kind: str  # empty | points | lines | planes | full
    components: tuple[FixedComponent, ...]


def fixed_locus(g: AffineIsometry) -> FixedLocus:
    """Solve g(p) = p mod the lattice, coordinate cycle by coordinate cycle.

    Each cycle of the underlying permutation closes to a relation
    ``t = S t + c`` with sign S: S = +1 yields a free parameter (a direction
    of the component) or no solution, S = -1 yields two discrete choices.
    """
    side = g.side
    perm = [next(j for j in range(3) if g.linear[i][j] != 0) for i in range(3)]
    sign = [g.linear[i][perm[i]] for i in range(3)]

    seen = [False, False, False]
    cycles = []  # (indices, slopes, consts, S, c) with p_i = slope*t + const
    for r in range(3):
        if seen[r]:
            continue
        idx, slope, const = [r], [1], [Fraction(0)]
        seen[r] = True
        i, sl, co = r, Fraction(1), Fraction(0)
        while True:
            # p_{perm[i]} = sign[i] * (p_i - shift_i)
            nxt = perm[i]
            sl, co = Fraction(sign[i]) * sl, Fraction(sign[i]) * (co - g.shift[i])
            if nxt == r:
                cycles.append((idx, slope, const, sl, co))
                break
            idx.append(nxt)
            slope.append(sl)
            const.append(co)
            seen[nxt] = True
            i = nxt

    per_cycle = []  # list of lists of (values dict, direction or None)
    for idx, slope, const, S, c in cycles:
        options = []
        if S == 1:
            if _mod(c, side) != 0:
                return FixedLocus("empty", ())
            # free parameter along this cycle
            direction = [0, 0, 0]
            base = [Fraction(0)] * 3
            for i, sl, co in zip(idx, slope, const):
                direction[i] = int(sl)
                base[i] = co
            options.append((base, idx, tuple(direction)))
        else:
            # 2 t = -c mod side  (t - c = S t + ... closes as t = -t + c)
            for extra in (Fraction(0), side / 2):
                t = _mod(c / 2 + extra, side)
                base = [Fraction(0)] * 3
                for i, sl, co in zip(idx, slope, const):
                    base[i] = sl * t + co
                options.append((base, idx, None))
        per_cycle.append(options)

    comps = []
    for combo in itertools.product(*per_cycle):
        base = [Fraction(0)] * 3
        dirs = []
        for cbase, idx, direction in combo:
            for i in idx:
                base[i] = cbase[i]
            if direction is not None:
                dirs.append(direction)
        comps.append(
            FixedComponent(wrap_exact(base, side), _canonical_dirs(dirs), side)
        )

    comps = _dedupe_components(comps)
    ndir = len(comps[0].directions)
    kind = {0: "points", 1: "lines", 2: "planes", 3: "full"}[ndir]
    return FixedLocus(kind, tuple(comps))


def _canonical_dirs(dirs) -> tuple[Vec3, ...]:
    out = []
    for d in dirs:
        first = next(e for e in d if e != 0)
        if first < 0:
            d = tuple(-e for e in d)
        out.append(tuple(Fraction(e) for e in d))
    return tuple(sorted(out))


def _dedupe_components(comps: list[FixedComponent]) -> list[FixedComponent]:
    out: list[FixedComponent] = []
    for c in comps:
        if not any(
            c.directions == o.directions and o.contains(c.base) for o in out
        ):
            out.append(c)
    return out


# ---------------------------------------------------------------------------
# Singular set of an orientation-preserving group and its quotient net
# ---------------------------------------------------------------------------


def _line_param(comp: FixedComponent, q: Vec3) -> Fraction:
    """Parameter u in [0, side) with q = base + u * direction mod lattice."""
    (d,) = comp.directions
    q = wrap_exact(q, comp.side)
    for i in range(3):
        if d[i] != 0:
            return _mod(Fraction(d[i]) * (q[i] - comp.base[i]), comp.side)
    raise ValueError("degenerate direction")


def _line_intersections(l1: FixedComponent, l2: FixedComponent) -> set[Vec3]:
    """Exact transversal intersection points of two closed lines."""
    side = l1.side
    (d1,), (d2,) = l1.directions, l2.directions
    if d1 == d2:
        return set()
    pts: set[Vec3] = set()
    b = tuple(l2.base[i] - l1.base[i] for i in range(3))
    rows = [(Fraction(d1[i]), Fraction(-d2[i])) for i in range(3)]
    for k in itertools.product((-2, -1, 0, 1, 2), repeat=3):
        rhs = [b[i] + side * k[i] for i in range(3)]
        uv = None
        for i, j in ((0, 1), (0, 2), (1, 2)):
            det = rows[i][0] * rows[j][1] - rows[i][1] * rows[j][0]
            if det != 0:
                u = (rhs[i] * rows[j][1] - rows[i][1] * rhs[j]) / det
                v = (rows[i][0] * rhs[j] - rhs[i] * rows[j][0]) / det
                uv = (u, v)
                break
        if uv is None:
            continue
        u, v = uv
        if all(rows[i][0] * u + rows[i][1] * v == rhs[i] for i in range(3)):
            pts.add(l1.sample((u,)))
    return pts


def _maps_line_to(g: AffineIsometry, line: FixedComponent):
    """Image direction sign if g maps ``line`` onto itself, else None."""
    (d,) = line.directions
    gd = tuple(
        sum(Fraction(g.linear[i][j]) * d[j] for j in range(3)) for i in range(3)
    )
    target = None
    if gd == d:
        target = 1
    elif gd == tuple(-x for x in d):
        target = -1
    if target is None:
        return None
    if not line.contains(g.apply_exact(line.base)):
        return None
    return target


def _reversal_fixed_points(g: AffineIsometry, line: FixedComponent) -> set[Vec3]:
    """Fixed points on ``line`` of a motion reversing it: 2u d = g(b) - b."""
    side = line.side
    (d,) = line.directions
    gb = g.apply_exact(line.base)
    diff = tuple(gb[i] - line.base[i] for i in range(3))
    sols = None
    for i in range(3):
        if d[i] == 0:
            if _mod(diff[i], side) != 0:
                return set()
            continue
        c = _mod(Fraction(d[i]) * diff[i], side)
        cand = {_mod(c / 2, side), _mod(c / 2 + side / 2, side)}
        sols = cand if sols is None else (sols & cand)
    if not sols:
        return set()
    return {line.sample((u,)) for u in sols}


@dataclass(frozen=True)
class SingularSet:
    """Fixed lines of a fixed-point group action with quotient combinatorics."""

    lines: tuple[FixedComponent, ...]
    points: tuple[Vec3, ...]
    quotient_vertices: int
    quotient_edges: int

    def report(self) -> dict:
        return {
            "line_count": len(self.lines),
            "lines": [
                {
                    "base": [str(x) for x in l.base],
                    "direction": [str(x) for x in l.directions[0]],
                }
                for l in self.lines
            ],
            "quotient_net": {
                "vertices": self.quotient_vertices,
                "edges": self.quotient_edges,
            },
        }


def singular_set(group: CrystalGroup) -> SingularSet:
    """Union of fixed loci of the non-identity elements, plus the net summary.

    Quotient combinatorics are obtained by marking crossing/reversal points
    on each fixed line and identifying points and arcs under the group orbit,
    all in exact rational arithmetic.
    """
    if any(g.det != 1 for g in group.elements):
        raise ValueError("singular_set expects an orientation-preserving group")
    side = group.side
    lines: list[FixedComponent] = []
    isolated: list[Vec3] = []
    for g in group.elements:
        if g.is_identity():
            continue
        loc = fixed_locus(g)
        if loc.kind == "lines":
            lines.extend(loc.components)
        elif loc.kind == "points":
            isolated.extend(c.base for c in loc.components)
    lines = _dedupe_components(lines)

    if not lines:
        return SingularSet((), tuple(set(isolated)), 0, 0)

    # Special points: pairwise crossings plus reversal fixed points.
    special: dict[int, set[Vec3]] = {i: set() for i in range(len(lines))}
    for i, j in itertools.combinations(range(len(lines)), 2):
        pts = _line_intersections(lines[i], lines[j])
        special[i] |= pts
        special[j] |= pts
    for g in group.elements:
        if g.is_identity():
            continue
        for i, line in enumerate(lines):
            if _maps_line_to(g, line) == -1:
                special[i] |= _reversal_fixed_points(g, line)

    def line_index_of(q: Vec3) -> int:
        for i, line in enumerate(lines):
            if line.contains(q):
                return i
        raise ValueError(f"point {q} not on any singular line")

    def orbit_count(points: set[Vec3]) -> int:
        remaining = set(points)
        count = 0
        while remaining:
            p = remaining.pop()
            count += 1
            for g in group.elements:
                remaining.discard(g.apply_exact(p))
        return count

    all_special = set().union(*special.values()) if lines else set()
    n_vertices = orbit_count(all_special)

    # Arc midpoints: arcs between cyclically consecutive special points.
    midpoints: set[Vec3] = set()
    whole_lines: set[int] = set()
    for i, line in enumerate(lines):
        pts = special[i]
        if not pts:
            whole_lines.add(i)
            continue
        us = sorted(_line_param(line, q) for q in pts)
        for a, b in zip(us, us[1:] + [us[0] + side]):
            midpoints.add(line.sample(((a + b) / 2,)))
    n_edges = orbit_count(midpoints)

    # Special-point-free lines descend to circle edges of the quotient graph.
    if whole_lines:
        reps = {lines[i].base for i in whole_lines}
        n_edges += orbit_count(reps)

    return SingularSet(tuple(lines), tuple(set(isolated)), n_vertices, n_edges)


# ---------------------------------------------------------------------------
# The concrete groups of the construction
# ---------------------------------------------------------------------------


def _diag(a: int, b: int, c: int) -> Mat3:
    return ((a, 0, 0), (0, b, 0), (0, 0, c))


def screw_generators(side=1) -> list[AffineIsometry]:
    """The three order-2 screw motions around the principal axes of C(1/2)."""
    h = Fraction(1, 2)
    return [
        AffineIsometry.create(_diag(-1, -1, 1), (h, h, h), side),
        AffineIsometry.create(_diag(-1, 1, -1), (h, h, h), side),
        AffineIsometry.create(_diag(1, -1, -1), (h, h, h), side),
    ]


def mirror_z(side=1) -> AffineIsometry:
    return AffineIsometry.create(_diag(1, 1, -1), (0, 0, 0), side)


def i222(side=1) -> CrystalGroup:
    """Order-8 orientation-preserving group generated by the three screws."""
    return generate(screw_generators(side))


def immm(side=1) -> CrystalGroup:
    """Order-16 group: the screws plus the mirror symmetry (x, y, -z)."""
    return generate(screw_generators(side) + [mirror_z(side)])


def immm_minus(side=1) -> frozenset[AffineIsometry]:
    """The orientation-reversing coset Immm - I222."""
    return immm(side).orientation_reversing()


def mirror_generators(side=1) -> list[AffineIsometry]:
    """Mirrors in the six faces of C(1/2) plus the central symmetry.

    On the torus the two mirrors per coordinate coincide, and together with
    the point symmetry at the cube center they generate the same order-16
    group as the screws-plus-mirror presentation.
    """
    h = Fraction(1, 2)
    mirrors = [
        AffineIsometry.create(_diag(-1, 1, 1), (0, 0, 0), side),
        AffineIsometry.create(_diag(-1, 1, 1), (1, 0, 0), side),  # = x -> 1 - x
        AffineIsometry.create(_diag(1, -1, 1), (0, 0, 0), side),
        AffineIsometry.create(_diag(1, -1, 1), (0, 1, 0), side),
        AffineIsometry.create(_diag(1, 1, -1), (0, 0, 0), side),
        AffineIsometry.create(_diag(1, 1, -1), (0, 0, 1), side),
    ]
    central = AffineIsometry.create(_diag(-1, -1, -1), (h, h, h), side)
    return mirrors + [central]


def cube_point_group(side) -> list[AffineIsometry]:
    """The 48 signed permutation matrices fixing the origin of T^3(side)."""
    out = []
    for perm in itertools.permutations(range(3)):
        for signs in itertools.product((1, -1), repeat=3):
            m = [[0, 0, 0] for _ in range(3)]
            for i in range(3):
                m[i][perm[i]] = signs[i]
            out.append(AffineIsometry.create(m, (0, 0, 0), side))
    return out


def im3m(side=Fraction(1, 2)) -> CrystalGroup:
    """Order-96 symmetry group of the Schwarz P surface in T^3(side).

    Composition of the cube point group (lattice translations being trivial
    on the torus) with the body-centered translation by side/2 per axis.
    """
    side = _frac(side)
    q = side / 2
    elems = set(cube_point_group(side))
    trans = AffineIsometry.create(_IDENTITY, (q, q, q), side)
    elems |= {trans.compose(g) for g in set(elems)}
    return CrystalGroup(frozenset(elems), side)


def group_report_json(group: CrystalGroup, singular: SingularSet | None = None) -> str:
    data = group.report()
    if singular is not None:
        data["singular_set"] = singular.report()
    return json.dumps(data, indent=2, sort_keys=True)
