"""Planar subdivision of tagged polylines, with face extraction.

Input is a set of polylines tagged with (name, weight).  Pairwise
intersections are snapped (1e-9), the polylines are split there, and the
bounded faces of the resulting plane graph are traced.  Face boundaries
are reported as runs ("pieces") of a single logical polyline between
corner nodes, which is what the extended-graph construction consumes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

SNAP = 1e-9


class ArrangementDegeneracy(RuntimeError):
    """Coincidences beyond snapping tolerance (or unclassifiable output)."""


def _seg_intersections(p0, p1, q0, q1):
    """Intersection parameters (t, u) of two segments, or None."""
    d1 = p1 - p0
    d2 = q1 - q0
    den = d1.real * d2.imag - d1.imag * d2.real
    w = q0 - p0
    if abs(den) < 1e-14 * max(abs(d1), 1.0) * max(abs(d2), 1.0):
        return None  # parallel; overlaps must coincide with shared endpoints
    t = (w.real * d2.imag - w.imag * d2.real) / den
    u = (w.real * d1.imag - w.imag * d1.real) / den
    tol1 = SNAP / max(abs(d1), SNAP)
    tol2 = SNAP / max(abs(d2), SNAP)
    if -tol1 <= t <= 1 + tol1 and -tol2 <= u <= 1 + tol2:
        return min(1.0, max(0.0, t)), min(1.0, max(0.0, u))
    return None


@dataclass
class Piece:
    """A maximal run of one logical polyline between two corner nodes."""
    logical: int
    tag: tuple
    node_from: int
    node_to: int
    points: list

    @property
    def midpoint(self) -> complex:
        pts = self.points
        total = sum(abs(b - a) for a, b in zip(pts, pts[1:]))
        acc = 0.0
        for a, b in zip(pts, pts[1:]):
            step = abs(b - a)
            if acc + step >= 0.5 * total:
                f = (0.5 * total - acc) / step if step else 0.0
                return a + (b - a) * f
            acc += step
        return pts[-1]

    def key(self):
        return (self.logical, min(self.node_from, self.node_to),
                max(self.node_from, self.node_to),
                round(self.midpoint.real / (50 * SNAP)),
                round(self.midpoint.imag / (50 * SNAP)))


@dataclass
class Face:
    darts: list
    corner_nodes: list
    pieces: list
    area: float
    _points: list

    def piece_tags(self):
        return [(p.tag[0], p.tag[1]) for p in self.pieces]

    def polygon_points(self):
        return list(self._points)


def shared_pieces(f1: Face, f2: Face):
    keys = {p.key() for p in f2.pieces}
    return [p for p in f1.pieces if p.key() in keys]


class PlanarSubdivision:
    def __init__(self, items):
        self._build(items)

    def _snap_node(self, p: complex) -> int:
        key = (round(p.real / (20 * SNAP)), round(p.imag / (20 * SNAP)))
        for k in ((key[0] + dx, key[1] + dy) for dx in (-1, 0, 1) for dy in (-1, 0, 1)):
            if k in self._grid:
                for idx in self._grid[k]:
                    if abs(self._nodes[idx] - p) <= 40 * SNAP:
                        return idx
        self._nodes.append(p)
        idx = len(self._nodes) - 1
        self._grid.setdefault(key, []).append(idx)
        return idx

    def _build(self, items):
        self._nodes: list[complex] = []
        self._grid: dict = {}
        micro = []  # (p0, p1, logical, tag)
        for logical, (pts, tag) in enumerate(items):
            for a, b in zip(pts, pts[1:]):
                if abs(b - a) > 2 * SNAP:
                    micro.append((a, b, logical, tag))

        cuts: list[list[float]] = [[] for _ in micro]
        for i in range(len(micro)):
            for j in range(i + 1, len(micro)):
                if micro[i][2] == micro[j][2]:
                    continue
                hit = _seg_intersections(micro[i][0], micro[i][1],
                                         micro[j][0], micro[j][1])
                if hit is not None:
                    cuts[i].append(hit[0])
                    cuts[j].append(hit[1])

        edges = []  # (node_a, node_b, logical, tag)
        for (a, b, logical, tag), ts in zip(micro, cuts):
            params = sorted({0.0, 1.0, *ts})
            pts = [a + (b - a) * t for t in params]
            ids = [self._snap_node(p) for p in pts]
            for u, v in zip(ids, ids[1:]):
                if u != v:
                    edges.append((u, v, logical, tag))

        # merge exact duplicates (overlapping parallel input is disallowed)
        seen = {}
        self._edges = []
        for u, v, logical, tag in edges:
            k = (min(u, v), max(u, v))
            if k in seen:
                if seen[k][0] != logical:
                    raise ArrangementDegeneracy(
                        f"distinct polylines overlap along an edge {k}")
                continue
            seen[k] = (logical, tag)
            self._edges.append((u, v, logical, tag))

        # degeneracy: a node interior to three or more logical polylines
        interior_logicals: dict[int, set] = {}
        endpoints: dict[int, set] = {}
        for logical, (pts, _tag) in enumerate(items):
            for p in (pts[0], pts[-1]):
                endpoints.setdefault(self._snap_node(p), set()).add(logical)
        for u, v, logical, _tag in self._edges:
            for n in (u, v):
                if logical not in endpoints.get(n, set()):
                    interior_logicals.setdefault(n, set()).add(logical)
        for n, logs in interior_logicals.items():
            if len(logs) >= 3:
                raise ArrangementDegeneracy(
                    f"three polylines meet at a non-vertex point near {self._nodes[n]}")

        # half-edge rotations
        self._adj: dict[int, list] = {}
        for eid, (u, v, logical, tag) in enumerate(self._edges):
            self._adj.setdefault(u, []).append((eid, +1))
            self._adj.setdefault(v, []).append((eid, -1))

        def dart_angle(node, dart):
            eid, sign = dart
            u, v, _l, _t = self._edges[eid]
            other = self._nodes[v] if sign > 0 else self._nodes[u]
            d = other - self._nodes[node]
            return math.atan2(d.imag, d.real)

        for node, darts in self._adj.items():
            darts.sort(key=lambda d: dart_angle(node, d))

        self._faces_cache = None

    def node_point(self, n: int) -> complex:
        return self._nodes[n]

    def _edge_nodes(self, dart):
        eid, sign = dart
        u, v, _l, _t = self._edges[eid]
        return (u, v) if sign > 0 else (v, u)

    def faces(self):
        if self._faces_cache is not None:
            return self._faces_cache
        next_in_rot = {}
        for node, darts in self._adj.items():
            for i, d in enumerate(darts):
                next_in_rot[(node, d)] = darts[(i - 1) % len(darts)]

        seen = set()
        out = []
        all_darts = [(eid, s) for eid in range(len(self._edges)) for s in (+1, -1)]
        for d0 in all_darts:
            if d0 in seen:
                continue
            walk = []
            d = d0
            guard = 0
            while True:
                walk.append(d)
                seen.add(d)
                tail, head = self._edge_nodes(d)
                rev = (d[0], -d[1])
                d = next_in_rot[(head, rev)]
                guard += 1
                if d == d0 or guard > 4 * len(all_darts):
                    break
            if guard > 4 * len(all_darts):
                raise ArrangementDegeneracy("face walk did not close")
            pts = [self._nodes[self._edge_nodes(d)[0]] for d in walk]
            area = 0.0
            for a, b in zip(pts, pts[1:] + pts[:1]):
                area += a.real * b.imag - a.imag * b.real
            out.append((walk, 0.5 * area))

        inner = [w for w in out if w[1] > 4 * SNAP]
        faces = [self._summarize(walk, area) for walk, area in inner]
        self._faces_cache = faces
        return faces

    def _summarize(self, walk, area) -> Face:
        # group consecutive darts by logical polyline into pieces
        logicals = [self._edges[d[0]][2] for d in walk]
        tags = [self._edges[d[0]][3] for d in walk]
        n = len(walk)
        # rotate so the walk starts at a logical-run boundary
        start = 0
        for i in range(n):
            if logicals[i] != logicals[i - 1]:
                start = i
                break
        walk = walk[start:] + walk[:start]
        logicals = logicals[start:] + logicals[:start]
        tags = tags[start:] + tags[:start]

        pieces = []
        corners = []
        i = 0
        while i < n:
            j = i
            while j + 1 < n and logicals[j + 1] == logicals[i]:
                j += 1
            run = walk[i:j + 1]
            pts = [self._nodes[self._edge_nodes(d)[0]] for d in run]
            pts.append(self._nodes[self._edge_nodes(run[-1])[1]])
            pieces.append(Piece(logicals[i], tags[i],
                                self._edge_nodes(run[0])[0],
                                self._edge_nodes(run[-1])[1], pts))
            corners.append(self._edge_nodes(run[0])[0])
            i = j + 1
        poly = [self._nodes[self._edge_nodes(d)[0]] for d in walk]
        return Face(list(walk), corners, pieces, area, poly)

    # ---- interior point with visibility ------------------------------------

    def _inside(self, poly, p) -> bool:
        cnt = False
        n = len(poly)
        for i in range(n):
            a, b = poly[i], poly[(i + 1) % n]
            if ((a.imag > p.imag) != (b.imag > p.imag)):
                x = a.real + (p.imag - a.imag) * (b.real - a.real) / (b.imag - a.imag)
                if x > p.real:
                    cnt = not cnt
        return cnt

    def _sees(self, poly, p, target) -> bool:
        d = target - p
        for i in range(len(poly)):
            a, b = poly[i], poly[(i + 1) % len(poly)]
            hit = _seg_intersections(p, target, a, b)
            if hit is None:
                continue
            t, _u = hit
            if t * abs(d) < abs(d) - 1e-7:
                if abs(p + d * t - target) > 1e-7:
                    return False
        return True

    def _candidates(self, poly, targets):
        cands = []
        centroid = sum(poly, 0j) / len(poly)
        cands.append(centroid)
        for k in range(len(poly)):
            a, b, c = poly[k - 1], poly[k], poly[(k + 1) % len(poly)]
            cands.append((a + b + c) / 3.0)
        for t in targets:
            cands.append(0.7 * centroid + 0.3 * t)
        xs = [p.real for p in poly]
        ys = [p.imag for p in poly]
        for res in (9, 17, 33):
            for iy in range(1, res):
                for ix in range(1, res):
                    cands.append(complex(
                        min(xs) + (max(xs) - min(xs)) * ix / res,
                        min(ys) + (max(ys) - min(ys)) * iy / res))
        return [p for p in cands if self._inside(poly, p)]

    def interior_point(self, face: Face, targets) -> complex:
        """An interior point seeing as many targets as possible (kernel search)."""
        poly = face.polygon_points()
        cands = self._candidates(poly, targets)
        if not cands:
            raise ArrangementDegeneracy("no interior point found in face")
        best, best_score = None, -1
        for p in cands:
            score = sum(1 for t in targets if self._sees(poly, p, t))
            if score == len(targets):
                return p
            if score > best_score:
                best, best_score = p, score
        return best

    def route(self, face: Face, p: complex, target: complex) -> list:
        """Polyline from p to a boundary target staying inside the face."""
        poly = face.polygon_points()
        if self._sees(poly, p, target):
            return [p, target]
        for w in self._candidates(poly, [target]):
            if self._sees(poly, p, w) and self._sees(poly, w, target):
                return [p, w, target]
        raise ArrangementDegeneracy("no interior route to a required boundary target")
