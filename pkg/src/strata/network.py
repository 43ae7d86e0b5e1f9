"""Admissible graphs, merging, the extended graph, and chord-diagram extraction.

A trajectory structure of the main family reduces to a weighted graph on
the regular polygon of principal directions: polygon sides stand for the
half-plane domains, a chord for each ordinary strip, and a two-edge
corridor from the center vertex O (the finite pole) to the strip that
carries the pole on its boundary.  Erasing O turns the graph into a
weighted chord diagram; the structure has a short trajectory exactly when
that diagram's triangulation is incomplete.

The center vertex is conceptually drawn inside the wedge of its support
side, so admissibility reduces to cyclic non-crossing of the chords plus
the two-O-edge rule; straight-segment drawings through the literal center
would degenerate on diameters.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from . import arrangement
from .combinat import WeightedChordDiagram, adjacent, crosses
from .tracer import TrajectoryStructure, Budget


class NotRepresentable(ValueError):
    """Structure cannot be rendered as an admissible graph."""


@dataclass(frozen=True)
class StripEdge:
    a: int
    b: int
    weight: float
    # side of the pole corridor for ends at a doubly-supported vertex:
    # -1 below (clockwise of the corridor), +1 above, 0 elsewhere
    a_side: int = 0
    b_side: int = 0

    def key(self):
        return (min(self.a, self.b), max(self.a, self.b))


@dataclass(frozen=True)
class AdmissibleGraph:
    n_outer: int
    orientation: str
    strip_edges: tuple[StripEdge, ...]
    o_edges: tuple[tuple[int, float], ...] = ()   # (outer vertex, weight)

    @property
    def has_pole(self) -> bool:
        return len(self.o_edges) > 0

    @property
    def pole_pair(self):
        if len(self.o_edges) != 2:
            return None
        return (self.o_edges[0][0], self.o_edges[1][0])

    @property
    def double_support(self) -> bool:
        p = self.pole_pair
        return p is not None and p[0] == p[1]

    def to_json_dict(self) -> dict:
        return {
            "n_outer": self.n_outer,
            "orientation": self.orientation,
            "strip_edges": [[e.a, e.b, e.weight, e.a_side, e.b_side]
                            for e in self.strip_edges],
            "o_edges": [[v, w] for v, w in self.o_edges],
            "double_support": self.double_support,
        }

    @staticmethod
    def from_json_dict(d: dict) -> "AdmissibleGraph":
        return AdmissibleGraph(
            d["n_outer"], d["orientation"],
            tuple(StripEdge(int(a), int(b), w, int(sa), int(sb))
                  for a, b, w, sa, sb in d["strip_edges"]),
            tuple((int(v), w) for v, w in d["o_edges"]))


def build_graph(s: TrajectoryStructure) -> AdmissibleGraph:
    """Admissible graph of a traced structure.

    Outer vertices are the principal directions; every ordinary strip
    becomes a chord carrying its width, the strip with the finite pole on
    its boundary becomes the two O-edges.  Requires a clean structure: no
    budget terminations and no collided zeros.
    """
    if s.has_budget:
        raise NotRepresentable("structure contains budget-terminated trajectories")
    if any(mu > 1 for _z, mu in s.qd.zeros):
        raise NotRepresentable("collided zeros: wall configuration, not a cell")
    n = s.qd.num_principal_directions

    pole_strips = [st for st in s.strips if st.pole_on_boundary]
    o_edges: tuple = ()
    if s.qd.has_pole:
        if len(pole_strips) != 1:
            raise NotRepresentable(
                f"expected exactly one strip with the pole on its boundary, got {len(pole_strips)}")
        ps = pole_strips[0]
        o_edges = ((ps.ends[0], float(ps.width)), (ps.ends[1], float(ps.width)))

    edges = []
    for st in s.strips:
        if st.pole_on_boundary and s.qd.has_pole:
            continue
        a, b = st.ends
        a_side = b_side = 0
        if o_edges and o_edges[0][0] == o_edges[1][0]:
            dv = o_edges[0][0]
            ps = pole_strips[0]
            lo = min(ps.end_positions)
            if a == dv:
                a_side = -1 if st.end_positions[0] < lo else 1
            if b == dv:
                b_side = -1 if st.end_positions[1] < lo else 1
        edges.append(StripEdge(a, b, float(st.width), a_side, b_side))
    edges.sort(key=lambda e: (e.key(), e.weight))
    g = AdmissibleGraph(n, s.orientation, tuple(edges), o_edges)
    if not check_admissible(g):
        raise NotRepresentable("traced structure produced a non-admissible graph")
    return g


def check_admissible(g: AdmissibleGraph) -> bool:
    """All admissible-graph invariants.

    Exactly two O-edges ending at adjacent (or coinciding) outer vertices,
    positive weights, and pairwise non-crossing chords in the cyclic order
    of the outer polygon.
    """
    n = g.n_outer
    if n < 3:
        return False
    if g.o_edges:
        if len(g.o_edges) != 2:
            return False
        (a, wa), (b, wb) = g.o_edges
        if not (0 <= a < n and 0 <= b < n) or wa <= 0 or wb <= 0:
            return False
        if a != b and not adjacent(a, b, n):
            return False
    for e in g.strip_edges:
        if not (0 <= e.a < n and 0 <= e.b < n) or e.a == e.b or e.weight <= 0:
            return False
    keys = [e.key() for e in g.strip_edges]
    for i in range(len(keys)):
        for j in range(i + 1, len(keys)):
            if crosses(keys[i], keys[j]):
                return False
    return True


def to_chord_diagram(g: AdmissibleGraph) -> WeightedChordDiagram:
    """Erase O and read the weighted chord diagram off the graph.

    The two O-edges collapse to a single chord joining their supports (one
    shared width); a doubly-supported vertex is disunited into two
    adjacent vertices, raising the polygon size by one, with the strip
    ends attached to the appropriate copy.
    """
    if not g.o_edges:
        chords = [(e.a, e.b, e.weight) for e in g.strip_edges]
        return WeightedChordDiagram(g.n_outer, tuple(sorted(chords)))

    (a, w_pole), (b, _wb) = g.o_edges
    if a != b:
        chords = [(e.a, e.b, e.weight) for e in g.strip_edges]
        chords.append((min(a, b), max(a, b), w_pole)
                      if abs(a - b) == 1 or {a, b} == {0, g.n_outer - 1}
                      else (a, b, w_pole))
        return WeightedChordDiagram(g.n_outer, tuple(sorted(chords)))

    # disunite the doubly-supported vertex: copies dv and dv+1
    dv = a
    m = g.n_outer + 1

    def remap(v: int, side: int) -> int:
        if v < dv:
            return v
        if v > dv:
            return v + 1
        return dv if side < 0 else dv + 1

    chords = [(remap(e.a, e.a_side), remap(e.b, e.b_side), e.weight)
              for e in g.strip_edges]
    chords.append((dv, dv + 1, w_pole))
    chords = [(min(x, y), max(x, y), w) for x, y, w in chords]
    return WeightedChordDiagram(m, tuple(sorted(chords)))


def has_short(g: AdmissibleGraph) -> bool:
    """Short trajectory joining two zeros <=> incomplete triangulation."""
    return not to_chord_diagram(g).is_complete_triangulation()


# ---------------------------------------------------------------------------
# merged graph G on the interlaced 2(k+1)-gon
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MergedGraph:
    n_outer: int                     # per color; the polygon has 2 n_outer vertices
    gh: AdmissibleGraph
    gv: AdmissibleGraph

    def vertex_angle(self, color: str, j: int) -> float:
        base = 0.0 if color == "h" else math.pi / self.n_outer
        return base + 2.0 * math.pi * j / self.n_outer

    def vertex_point(self, color: str, j: int) -> complex:
        a = self.vertex_angle(color, j)
        return complex(math.cos(a), math.sin(a))

    def polygon_points(self) -> list[tuple[complex, tuple]]:
        """The 2 n_outer interlaced vertices in cyclic order with labels."""
        out = []
        for j in range(self.n_outer):
            out.append((self.vertex_point("h", j), ("h", j)))
            out.append((self.vertex_point("v", j), ("v", j)))
        return out

    def colored_edges(self) -> list[tuple]:
        """(color, kind, endpoints..., weight) for every retained strip edge."""
        out = []
        for color, g in (("h", self.gh), ("v", self.gv)):
            for e in g.strip_edges:
                out.append((color, "chord", e.a, e.b, e.weight))
            if g.o_edges:
                (a, wa), (b, wb) = g.o_edges
                out.append((color, "o", a, wa))
                out.append((color, "o", b, wb))
        return out


def merge_graphs(gh: AdmissibleGraph, gv: AdmissibleGraph) -> MergedGraph:
    """Superpose the two colored graphs on the interlaced polygon."""
    if gh.n_outer != gv.n_outer:
        raise ValueError("graphs must share the outer vertex count")
    if gh.orientation == gv.orientation:
        raise ValueError("expected one horizontal and one vertical graph")
    h, v = (gh, gv) if gh.orientation == "horizontal" else (gv, gh)
    return MergedGraph(h.n_outer, h, v)


# ---------------------------------------------------------------------------
# extended graph G_ext
# ---------------------------------------------------------------------------

@dataclass
class FaceInfo:
    corners: list                 # logical corner node ids
    sides: list                   # (tag, weight or None) per side
    ftype: str                    # "a" | "b" | "c" | "d"
    metric: dict
    o_incident: bool
    polygon: list                 # closed point list for rendering


@dataclass
class ExtendedGraph:
    merged: MergedGraph
    drawing: list                 # (polyline, tag) of every drawn edge
    faces: list                   # FaceInfo
    pole_rectangle: dict


def _bow(p0: complex, p1: complex, amount: float, n: int = 10) -> list[complex]:
    """Quadratic bow between two points; amount > 0 bends left of p0->p1."""
    mid = 0.5 * (p0 + p1) + 1j * (p1 - p0) * amount
    return [(1 - t) ** 2 * p0 + 2 * t * (1 - t) * mid + t * t * p1
            for t in (i / n for i in range(n + 1))]


def _o_position(m: MergedGraph, shift: float) -> complex:
    """Drawing position of O, optionally pulled toward its corridor supports."""
    if shift == 0.0:
        return 0j
    acc = 0j
    for color, g in (("h", m.gh), ("v", m.gv)):
        pair = g.pole_pair
        if pair is not None:
            acc += 0.5 * (m.vertex_point(color, pair[0])
                          + m.vertex_point(color, pair[1]))
    if acc == 0:
        return 0j
    return shift * acc / abs(acc)


def _layout_edges(m: MergedGraph, bow_scale: float = 1.0,
                  o_shift: float = 0.0) -> list[tuple[list, tuple]]:
    """Planar drawing of Pi plus the colored edges of G.

    Chords that would cut the pole off from its corridor supports are
    bowed just past O on the correct side; parallel duplicates and double
    O-edges are spread apart.  O itself may be displaced toward its
    supports to decongest the center.
    """
    items: list[tuple[list, tuple]] = []
    poly = m.polygon_points()
    npts = len(poly)
    for i, (p, _lab) in enumerate(poly):
        q = poly[(i + 1) % npts][0]
        items.append(([p, q], ("pi", None)))

    o_point = _o_position(m, o_shift)
    for color, g in (("h", m.gh), ("v", m.gv)):
        pair = g.pole_pair
        support_mid = None
        if pair is not None:
            pa = m.vertex_point(color, pair[0])
            pb = m.vertex_point(color, pair[1])
            support_mid = 0.5 * (pa + pb)
        clearance = 0.06 * bow_scale
        for idx, e in enumerate(g.strip_edges):
            p0 = m.vertex_point(color, e.a)
            p1 = m.vertex_point(color, e.b)
            seg = p1 - p0
            # signed distance of O from the chord line; positive on the side
            # away from the pole corridor's support
            away = 1.0
            if support_mid is not None:
                cr = seg.real * (support_mid - p0).imag - seg.imag * (support_mid - p0).real
                away = -1.0 if cr > 0 else 1.0
            t = ((o_point - p0).real * seg.real + (o_point - p0).imag * seg.imag) / abs(seg) ** 2
            amount = 0.0
            if 0.0 < t < 1.0:
                cr_o = seg.real * (o_point - p0).imag - seg.imag * (o_point - p0).real
                d_away = away * cr_o / abs(seg)   # O's distance on the away side
                # the chord must pass O on the away side, leaving O toward
                # its support, with some clearance
                if d_away > -clearance:
                    # bow displacement at the midpoint is amount * |seg| / 2
                    amount = away * 2.0 * (d_away + clearance) / abs(seg)
            # spread parallel duplicates
            dup = sum(1 for f in g.strip_edges[:idx] if f.key() == e.key())
            if dup:
                amount += 0.1 * bow_scale * dup
            if amount:
                items.append((_bow(p0, p1, amount), (color + "chord", e.weight)))
            else:
                items.append(([p0, p1], (color + "chord", e.weight)))
        if pair is not None:
            (va, wa), (vb, wb) = g.o_edges
            pa = m.vertex_point(color, va)
            pb = m.vertex_point(color, vb)
            if va == vb:
                items.append((_bow(o_point, pa, 0.14 * bow_scale), (color + "o", wa)))
                items.append((_bow(o_point, pb, -0.14 * bow_scale), (color + "o", wb)))
            else:
                items.append(([o_point, pa], (color + "o", wa)))
                items.append(([o_point, pb], (color + "o", wb)))
    return items


def extend_graph(m: MergedGraph) -> ExtendedGraph:
    """Carry out the extended-graph construction and classify its faces.

    Component centers are placed inside every face of the arrangement of
    G, joined to the polygon vertices on their face boundary and to the
    centers of faces sharing a piece of a colored edge (through the piece
    midpoint); quadrilaterals at O bounded by same-colored pieces gain the
    diagonal from O.  Faces of the result are classified into the four
    domain types with their metric identifications.
    """
    last_err: Exception | None = None
    for bow_scale, o_shift in ((1.0, 0.0), (0.7, 0.3), (1.0, 0.5), (0.5, 0.15),
                               (1.4, 0.0), (0.8, 0.62)):
        try:
            return _extend_once(m, bow_scale, o_shift)
        except arrangement.ArrangementDegeneracy as exc:
            last_err = exc
    raise last_err


def _node_kind(m: MergedGraph, p: complex, o_point: complex = 0j) -> str:
    if abs(p - o_point) < 1e-7:
        return "o"
    for q, _lab in m.polygon_points():
        if abs(p - q) < 1e-7:
            return "pi"
    return "other"


def _extend_once(m: MergedGraph, bow_scale: float, o_shift: float = 0.0) -> ExtendedGraph:
    base = _layout_edges(m, bow_scale, o_shift)
    o_pt = _o_position(m, o_shift)
    arr = arrangement.PlanarSubdivision(base)

    # component centers
    centers = []
    aux: list[tuple[list, tuple]] = []
    for f_idx, face in enumerate(arr.faces()):
        verts = [n for n in face.corner_nodes
                 if _node_kind(m, arr.node_point(n), o_pt) == "pi"]
        targets = [arr.node_point(n) for n in verts]
        mids = [piece.midpoint for piece in face.pieces
                if piece.tag[0] in ("hchord", "vchord", "ho", "vo")]
        c = arr.interior_point(face, targets + mids)
        centers.append(c)
        for t in targets:
            aux.append((arr.route(face, c, t), ("aux", None)))

    face_list = arr.faces()
    for i in range(len(face_list)):
        for j in range(i + 1, len(face_list)):
            for piece in arrangement.shared_pieces(face_list[i], face_list[j]):
                if piece.tag[0] in ("hchord", "vchord", "ho", "vo"):
                    leg_i = arr.route(face_list[i], centers[i], piece.midpoint)
                    leg_j = arr.route(face_list[j], centers[j], piece.midpoint)
                    aux.append((leg_i + list(reversed(leg_j))[1:], ("aux", None)))

    arr2 = arrangement.PlanarSubdivision(base + aux)

    # O-diagonal rule for same-colored quadrilaterals at O
    extra: list[tuple[list, tuple]] = []
    for face in arr2.faces():
        corners = face.corner_nodes
        if len(corners) != 4:
            continue
        pts = [arr2.node_point(n) for n in corners]
        o_pos = [i for i, p in enumerate(pts) if _node_kind(m, p, o_pt) == "o"]
        if not o_pos:
            continue
        colors = {t[0][0] for t in face.piece_tags()
                  if t[0] in ("hchord", "vchord", "ho", "vo")}
        if len(colors) == 1:
            i = o_pos[0]
            opposite = pts[(i + 2) % 4]
            extra.append(([pts[i], opposite], ("aux", None)))

    arr3 = arrangement.PlanarSubdivision(base + aux + extra)

    faces_out: list[FaceInfo] = []
    pole_faces = []
    pole_width = None
    for face in arr3.faces():
        corners = face.corner_nodes
        pts = [arr3.node_point(n) for n in corners]
        kinds = [_node_kind(m, p, o_pt) for p in pts]
        tags = face.piece_tags()
        colored = [(t, w) for t, w in tags if t in ("hchord", "vchord", "ho", "vo")]
        col_set = {t[0] for t, _w in colored}
        n_corner = len(corners)
        o_inc = "o" in kinds
        ftype = None
        metric: dict = {}
        if n_corner == 3 and any(t == "pi" for t, _w in tags):
            ftype = "a"
            metric = {"identified_with": "quadrant"}
        elif n_corner == 3 and o_inc and colored:
            ftype = "d"
            metric = {"identified_with": "pole strip piece",
                      "width": colored[0][1]}
        elif n_corner == 3 and kinds.count("pi") == 1 and colored:
            ftype = "b"
            metric = {"identified_with": "strip quarter",
                      "width": colored[0][1]}
        elif n_corner == 4 and len(col_set) == 2:
            wh = next(w for t, w in colored if t.startswith("h"))
            wv = next(w for t, w in colored if t.startswith("v"))
            ftype = "c"
            metric = {"identified_with": "rectangle", "sides": [wh, wv]}
        if ftype is None:
            raise arrangement.ArrangementDegeneracy(
                f"face with {n_corner} corners, kinds {kinds}, tags {sorted(set(t for t, _ in tags))} not of type (a)-(d)")
        info = FaceInfo(list(corners), tags, ftype, metric, o_inc,
                        face.polygon_points())
        faces_out.append(info)
        if o_inc:
            pole_faces.append(info)
            for t, w in colored:
                if w is not None:
                    pole_width = w if pole_width is None else pole_width

    drawing = base + aux + extra
    return ExtendedGraph(m, drawing, faces_out,
                         {"width": pole_width,
                          "n_faces": len(pole_faces)})
