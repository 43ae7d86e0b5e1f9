"""Balanced weights, weighted chord diagrams, and the Stasheff fan.

The polygon is always the regular (n+1)-gon inscribed in the unit circle
with vertex i at angle 2*pi*i/(n+1).  A balanced weight is a real function
on the vertices with zero sum and zero first moment; its upper-hull
subdivision (the creases of the smallest concave majorant of the lifted
points) stratifies the weight space into the normal fan of the Stasheff
polytope.  Chord weights are read off against a fixed generic reference
point ``P_DEFAULT``; chord supports do not depend on that choice.

Diagrams may carry "side chords" joining adjacent vertices (these arise
when the pole corridor of an admissible graph is contracted); they are
excluded from all triangulation and degeneracy predicates, which consider
diagonals only.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterable, Sequence

import numpy as np

P_DEFAULT = (0.23, 0.11)
EPS_WEIGHT = 1e-10      # LP interval below this counts as "no chord"
COPLANAR_TOL = 1e-9     # degeneracy tolerance on unit-circle liftings


class GeneralPositionViolated(ValueError):
    """Reference point p lies (numerically) on a line through two vertices."""


class InconsistentDiagram(ValueError):
    """Chord diagram admits no balanced weight reproducing it."""


class BudgetExceeded(ValueError):
    """Enumeration request beyond the supported size."""


class InvalidDiagonal(ValueError):
    """Flip requested on a diagonal absent from the triangulation."""


class UnbalancedWeight(ValueError):
    """Vertex values violate the zero-sum / zero-moment constraints."""


@lru_cache(maxsize=64)
def polygon_vertices(n_plus_1: int) -> np.ndarray:
    """Vertices of the canonical regular (n+1)-gon, shape (n+1, 2)."""
    ang = 2.0 * math.pi * np.arange(n_plus_1) / n_plus_1
    return np.stack([np.cos(ang), np.sin(ang)], axis=1)


def adjacent(a: int, c: int, n_plus_1: int) -> bool:
    d = (a - c) % n_plus_1
    return d == 1 or d == n_plus_1 - 1


def crosses(d1: tuple[int, int], d2: tuple[int, int]) -> bool:
    """Strict interior crossing of two chords, by cyclic interleaving."""
    i, j = sorted(d1)
    k, l = sorted(d2)
    return (i < k < j < l) or (k < i < l < j)


def balance(values: Sequence[float]) -> "BalancedWeight":
    """Project arbitrary vertex values onto the balanced subspace.

    Subtracts the unique affine function with the same sum and first
    moment; the induced subdivision is unchanged by this shift.
    """
    v = np.asarray(values, dtype=float)
    m = len(v)
    verts = polygon_vertices(m)
    alpha = v.sum() / m
    beta, gamma = 2.0 / m * (v[:, None] * verts).sum(axis=0)
    balanced = v - (alpha + beta * verts[:, 0] + gamma * verts[:, 1])
    return BalancedWeight(tuple(float(x) for x in balanced))


@dataclass(frozen=True)
class BalancedWeight:
    values: tuple[float, ...]

    def __post_init__(self):
        self.validate()

    @property
    def n_plus_1(self) -> int:
        return len(self.values)

    @property
    def n(self) -> int:
        return len(self.values) - 1

    def validate(self, tol: float = 1e-12) -> None:
        v = np.asarray(self.values)
        if len(v) < 3:
            raise UnbalancedWeight("need at least 3 polygon vertices")
        verts = polygon_vertices(len(v))
        if abs(v.sum()) > tol:
            raise UnbalancedWeight(f"sum {v.sum():.3e} exceeds tolerance")
        mom = (v[:, None] * verts).sum(axis=0)
        if np.max(np.abs(mom)) > tol:
            raise UnbalancedWeight(f"first moment {mom} exceeds tolerance")

    def to_json_dict(self) -> dict:
        return {"values": list(self.values)}


@dataclass(frozen=True)
class WeightedChordDiagram:
    n_plus_1: int
    chords: tuple[tuple[int, int, float], ...]

    def __post_init__(self):
        seen = set()
        for a, c, w in self.chords:
            if not (0 <= a < self.n_plus_1 and 0 <= c < self.n_plus_1) or a == c:
                raise ValueError(f"bad chord endpoints ({a},{c})")
            if w <= 0:
                raise ValueError(f"chord ({a},{c}) has non-positive weight {w}")
            key = (min(a, c), max(a, c))
            if key in seen and not adjacent(a, c, self.n_plus_1):
                raise ValueError(f"duplicate chord {key}")
            seen.add(key)
        keys = sorted(seen)
        for i in range(len(keys)):
            for j in range(i + 1, len(keys)):
                if crosses(keys[i], keys[j]):
                    raise ValueError(f"chords {keys[i]} and {keys[j]} cross")

    def diagonals(self) -> frozenset[tuple[int, int]]:
        """Chord supports between non-adjacent vertices (side chords dropped)."""
        return frozenset((min(a, c), max(a, c)) for a, c, _w in self.chords
                         if not adjacent(a, c, self.n_plus_1))

    def is_complete_triangulation(self) -> bool:
        return len(self.diagonals()) == self.n_plus_1 - 3

    def to_json_dict(self) -> dict:
        return {"n_plus_1": self.n_plus_1,
                "chords": [[a, c, w] for a, c, w in self.chords]}


@dataclass(frozen=True)
class Triangulation:
    n_plus_1: int
    diagonals: frozenset[tuple[int, int]]

    def __post_init__(self):
        m = self.n_plus_1
        if len(self.diagonals) != m - 3:
            raise ValueError(f"triangulation of a {m}-gon needs {m - 3} diagonals")
        ds = sorted(self.diagonals)
        for d in ds:
            if adjacent(*d, m) or d[0] == d[1]:
                raise ValueError(f"{d} is not a diagonal")
        for i in range(len(ds)):
            for j in range(i + 1, len(ds)):
                if crosses(ds[i], ds[j]):
                    raise ValueError(f"diagonals {ds[i]} and {ds[j]} cross")


@dataclass(frozen=True)
class FanFace:
    n_plus_1: int
    diagonal_set: frozenset[tuple[int, int]]
    codim: int = field(default=-1)

    def __post_init__(self):
        expected = (self.n_plus_1 - 3) - len(self.diagonal_set)
        if self.codim == -1:
            object.__setattr__(self, "codim", expected)
        elif self.codim != expected:
            raise ValueError("codim inconsistent with diagonal set")


# ---------------------------------------------------------------------------
# supporting-plane intervals (the closed form of the two LPs of the chord rule)
# ---------------------------------------------------------------------------

def _interval(values, verts, a: int, c: int):
    """Admissible supporting-plane pencil through vertices a, c.

    Affine functions with L(v_a)=f_a, L(v_c)=f_c form the pencil
    L_t = L0 + t*ell with ell vanishing on the line a-c.  Majorization at
    the remaining vertices bounds t to [t_lo, t_hi]; the chord rule's
    max/min LPs are exactly the endpoints of this interval.  Returns
    (t_lo, t_hi, ell) where ell is a callable affine form.
    """
    va, vc = verts[a], verts[c]
    ex, ey = vc[0] - va[0], vc[1] - va[1]
    seg2 = ex * ex + ey * ey

    def ell(x, y):
        return ex * (y - va[1]) - ey * (x - va[0])

    # base affine: linear interpolation along the edge direction
    def l0(x, y):
        s = ((x - va[0]) * ex + (y - va[1]) * ey) / seg2
        return values[a] + s * (values[c] - values[a])

    t_lo, t_hi = -math.inf, math.inf
    for i in range(len(values)):
        if i == a or i == c:
            continue
        li = ell(verts[i][0], verts[i][1])
        need = (values[i] - l0(verts[i][0], verts[i][1])) / li
        if li > 0:
            t_lo = max(t_lo, need)
        else:
            t_hi = min(t_hi, need)
    return t_lo, t_hi, ell


def _intervals_mp(values, n_plus_1: int, dps: int):
    """High-precision pencil intervals for all vertex pairs (mpmath).

    Polygon vertices are algebraic irrationals, so truly exact predicates
    would need algebraic arithmetic; ``dps`` working digits with a matching
    zero threshold serve as the near-exact mode for rational inputs.
    """
    from mpmath import mp, mpf, cos, sin, pi

    old = mp.dps
    mp.dps = dps
    try:
        verts = [(cos(2 * pi * i / n_plus_1), sin(2 * pi * i / n_plus_1))
                 for i in range(n_plus_1)]
        vals = [mpf(v) for v in values]
        out = {}
        for a in range(n_plus_1):
            for c in range(a + 1, n_plus_1):
                va, vc = verts[a], verts[c]
                ex, ey = vc[0] - va[0], vc[1] - va[1]
                seg2 = ex * ex + ey * ey
                t_lo, t_hi = None, None
                for i in range(n_plus_1):
                    if i in (a, c):
                        continue
                    x, y = verts[i]
                    li = ex * (y - va[1]) - ey * (x - va[0])
                    s = ((x - va[0]) * ex + (y - va[1]) * ey) / seg2
                    l0i = vals[a] + s * (vals[c] - vals[a])
                    need = (vals[i] - l0i) / li
                    if li > 0:
                        t_lo = need if t_lo is None else max(t_lo, need)
                    else:
                        t_hi = need if t_hi is None else min(t_hi, need)
                out[(a, c)] = (t_lo, t_hi)
        return out
    finally:
        mp.dps = old


def _require_general_position(p, n_plus_1: int, tol: float = 1e-9) -> None:
    verts = polygon_vertices(n_plus_1)
    px, py = p
    for a in range(n_plus_1):
        for c in range(a + 1, n_plus_1):
            va, vc = verts[a], verts[c]
            ex, ey = vc[0] - va[0], vc[1] - va[1]
            dist = abs(ex * (py - va[1]) - ey * (px - va[0])) / math.hypot(ex, ey)
            if dist < tol:
                raise GeneralPositionViolated(
                    f"p={p} lies on the line through vertices {a} and {c}")


def weight_to_diagram(f: BalancedWeight, p: tuple[float, float] = P_DEFAULT
                      ) -> WeightedChordDiagram:
    """Chord diagram of a balanced weight at reference point p.

    For every non-adjacent vertex pair the admissible supporting planes
    through the two lifted values sweep an interval at p; a positive
    interval length becomes a chord with that weight.
    """
    m = f.n_plus_1
    _require_general_position(p, m)
    verts = polygon_vertices(m)
    chords = []
    for a in range(m):
        for c in range(a + 1, m):
            if adjacent(a, c, m):
                continue
            t_lo, t_hi, ell = _interval(f.values, verts, a, c)
            w = (t_hi - t_lo) * abs(ell(p[0], p[1]))
            if w > EPS_WEIGHT:
                chords.append((a, c, float(w)))
    keys = [(a, c) for a, c, _ in chords]
    for i in range(len(keys)):
        for j in range(i + 1, len(keys)):
            assert not crosses(keys[i], keys[j]), "chord rule produced a crossing"
    return WeightedChordDiagram(m, tuple(chords))


def upper_hull_subdivision(f: BalancedWeight, tol: float = COPLANAR_TOL,
                           dps: int | None = None) -> FanFace:
    """Diagonal set of the subdivision induced by the lifted upper hull.

    A diagonal is a crease iff two distinct supporting planes touch it,
    i.e. the pencil interval has positive length.  ``dps`` switches to
    high-precision predicates.
    """
    m = f.n_plus_1
    diags = set()
    if dps is not None:
        iv = _intervals_mp(f.values, m, dps)
        thr = 10.0 ** (-(dps - 10))
        for (a, c), (t_lo, t_hi) in iv.items():
            if not adjacent(a, c, m) and float(t_hi - t_lo) > thr:
                diags.add((a, c))
    else:
        verts = polygon_vertices(m)
        for a in range(m):
            for c in range(a + 1, m):
                if adjacent(a, c, m):
                    continue
                t_lo, t_hi, _ell = _interval(f.values, verts, a, c)
                if t_hi - t_lo > tol:
                    diags.add((a, c))
    return FanFace(m, frozenset(diags))


def fan_face(f: BalancedWeight, tol: float = COPLANAR_TOL,
             dps: int | None = None) -> FanFace:
    """Face of the Stasheff fan containing f, labelled by its subdivision."""
    return upper_hull_subdivision(f, tol=tol, dps=dps)


def polygon_cells(n_plus_1: int, diagonals: Iterable[tuple[int, int]]
                  ) -> list[tuple[int, ...]]:
    """Cells of the polygon subdivision by a non-crossing diagonal set.

    Each cell is the tuple of its vertices in cyclic order.
    """
    cells = [tuple(range(n_plus_1))]
    for a, c in sorted((min(d), max(d)) for d in diagonals):
        for idx, cell in enumerate(cells):
            if a in cell and c in cell:
                ia, ic = cell.index(a), cell.index(c)
                if ia > ic:
                    ia, ic = ic, ia
                if ic - ia <= 1 or (ia == 0 and ic == len(cell) - 1):
                    continue  # chord is a side of this cell
                left = cell[ia:ic + 1]
                right = cell[ic:] + cell[:ia + 1]
                cells[idx:idx + 1] = [left, right]
                break
        else:
            raise ValueError(f"diagonal ({a},{c}) does not split any cell")
    return cells


def is_degenerate(f: BalancedWeight, tol: float = COPLANAR_TOL,
                  dps: int | None = None):
    """Whether some supporting plane touches the lifted weight at >= 4 vertices.

    Returns (flag, witness); the witness is ((alpha, beta, gamma), vertices)
    for the touching affine plane alpha + beta x + gamma y, or None.
    """
    face = upper_hull_subdivision(f, tol=tol, dps=dps)
    m = f.n_plus_1
    cells = polygon_cells(m, face.diagonal_set)
    big = [c for c in cells if len(c) >= 4]
    if not big:
        return False, None
    cell = max(big, key=len)
    verts = polygon_vertices(m)
    i0, i1, i2 = cell[0], cell[1], cell[2]
    a_mat = np.array([[1.0, verts[i][0], verts[i][1]] for i in (i0, i1, i2)])
    rhs = np.array([f.values[i] for i in (i0, i1, i2)])
    coef = np.linalg.solve(a_mat, rhs)
    plane = lambda x, y: coef[0] + coef[1] * x + coef[2] * y
    touching = [i for i in cell
                if abs(plane(verts[i][0], verts[i][1]) - f.values[i]) <= 100 * tol]
    return True, ((float(coef[0]), float(coef[1]), float(coef[2])), touching)


# ---------------------------------------------------------------------------
# triangulations, flips, Catalan numbers
# ---------------------------------------------------------------------------

def catalan(m: int) -> int:
    """Catalan number c_m = binom(2m, m) / (m + 1)."""
    if m < 1:
        raise ValueError("catalan defined here for m >= 1")
    if m > 30:
        raise BudgetExceeded("catalan guarded for m <= 30")
    return math.comb(2 * m, m) // (m + 1)


def enumerate_triangulations(n: int) -> list[Triangulation]:
    """All triangulations of the regular (n+1)-gon; count is catalan(n-1)."""
    if not (3 <= n <= 12):
        raise BudgetExceeded("enumeration supported for 3 <= n <= 12")
    m = n + 1

    def rec(lo: int, hi: int) -> list[frozenset]:
        # triangulations of the fan region on contiguous vertices lo..hi
        if hi - lo < 2:
            return [frozenset()]
        out = []
        for apex in range(lo + 1, hi):
            extra = set()
            if apex - lo > 1:
                extra.add((lo, apex))
            if hi - apex > 1:
                extra.add((apex, hi))
            for left in rec(lo, apex):
                for right in rec(apex, hi):
                    out.append(left | right | extra)
        return out

    seen = set()
    result = []
    for ds in rec(0, m - 1):
        if ds not in seen:
            seen.add(ds)
            result.append(Triangulation(m, ds))
    return result


def flip(t: Triangulation, diagonal: tuple[int, int]) -> Triangulation:
    """Replace one diagonal by the other diagonal of its surrounding quad."""
    d = (min(diagonal), max(diagonal))
    if d not in t.diagonals:
        raise InvalidDiagonal(f"{d} not in triangulation")
    rest = t.diagonals - {d}
    for cell in polygon_cells(t.n_plus_1, rest):
        if d[0] in cell and d[1] in cell and len(cell) == 4:
            others = [v for v in cell if v not in d]
            nd = (min(others), max(others))
            return Triangulation(t.n_plus_1, rest | {nd})
    raise InvalidDiagonal(f"no quadrilateral around {d}")


def flip_graph(n: int) -> tuple[list[Triangulation], list[tuple[int, int]]]:
    """Triangulations of the (n+1)-gon with flip adjacency edges."""
    tris = enumerate_triangulations(n)
    index = {t.diagonals: i for i, t in enumerate(tris)}
    edges = set()
    for i, t in enumerate(tris):
        for d in t.diagonals:
            j = index[flip(t, d).diagonals]
            edges.add((min(i, j), max(i, j)))
    return tris, sorted(edges)


# ---------------------------------------------------------------------------
# inverse construction: diagram -> balanced weight
# ---------------------------------------------------------------------------

def _lex_completion(n_plus_1: int, diagonals: set[tuple[int, int]]
                    ) -> list[tuple[int, int]]:
    chosen = set(diagonals)
    for a in range(n_plus_1):
        for c in range(a + 2, n_plus_1):
            if adjacent(a, c, n_plus_1):
                continue
            d = (a, c)
            if d in chosen:
                continue
            if all(not crosses(d, e) for e in chosen):
                chosen.add(d)
    assert len(chosen) == n_plus_1 - 3
    return sorted(chosen)


def _barycentric(p, tri_pts) -> np.ndarray:
    a = np.array([[tri_pts[0][0], tri_pts[1][0], tri_pts[2][0]],
                  [tri_pts[0][1], tri_pts[1][1], tri_pts[2][1]],
                  [1.0, 1.0, 1.0]])
    return np.linalg.solve(a, np.array([p[0], p[1], 1.0]))


def diagram_to_weight(d: WeightedChordDiagram,
                      p: tuple[float, float] = P_DEFAULT) -> BalancedWeight:
    """Balanced weight whose chord diagram at p reproduces d.

    The chord set is completed to a triangulation (lexicographically
    smallest extension); on the cone of weights subordinate to that
    triangulation the forward map is linear, with the crease value across
    each diagonal given by the two adjacent triangle planes evaluated at
    p.  Solving that square system with zero crease on the completion
    diagonals and the three balance constraints inverts the chord rule.
    """
    m = d.n_plus_1
    _require_general_position(p, m)
    want = {}
    for a, c, w in d.chords:
        if adjacent(a, c, m):
            raise InconsistentDiagram(
                "side chords (adjacent endpoints) have no balanced-weight realization")
        want[(min(a, c), max(a, c))] = w

    tri = _lex_completion(m, set(want))
    cells = polygon_cells(m, tri)
    verts = polygon_vertices(m)

    rows = [np.ones(m), verts[:, 0].copy(), verts[:, 1].copy()]
    rhs = [0.0, 0.0, 0.0]
    for a, c in tri:
        adj = [cell for cell in cells
               if a in cell and c in cell and len(cell) == 3]
        assert len(adj) == 2, "diagonal must bound two triangles"
        va, vc = verts[a], verts[c]
        ex, ey = vc[0] - va[0], vc[1] - va[1]
        side_p = ex * (p[1] - va[1]) - ey * (p[0] - va[0])
        row = np.zeros(m)
        for cell in adj:
            x = next(v for v in cell if v not in (a, c))
            side_x = ex * (verts[x][1] - va[1]) - ey * (verts[x][0] - va[0])
            lam = _barycentric(p, [verts[i] for i in cell])
            sign = -1.0 if side_x * side_p > 0 else 1.0  # near triangle enters negatively
            for i, v in enumerate(cell):
                row[v] += sign * lam[i]
        rows.append(row)
        rhs.append(want.get((a, c), 0.0))

    mat = np.stack(rows)
    try:
        sol = np.linalg.solve(mat, np.array(rhs))
    except np.linalg.LinAlgError as exc:
        raise InconsistentDiagram(f"singular inversion system: {exc}") from exc

    f = BalancedWeight(tuple(float(x) for x in sol))
    back = weight_to_diagram(f, p)
    got = {(min(a, c), max(a, c)): w for a, c, w in back.chords}
    if set(got) != set(want):
        raise InconsistentDiagram(
            f"diagram not realizable: wanted chords {sorted(want)}, got {sorted(got)}")
    for key, w in want.items():
        if abs(got[key] - w) > 1e-8 * max(1.0, abs(w)):
            raise InconsistentDiagram(f"weight mismatch on chord {key}")
    return f
