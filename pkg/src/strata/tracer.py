"""Critical-trajectory tracing and trajectory-structure assembly.

Horizontal (q dz^2 > 0) and vertical (q dz^2 < 0) trajectories are traced
as solutions of  dz/dt = e^{i phi} / sqrt(q(z))  (phi = 0 or pi/2), which
moves at unit speed in the flat metric |q| |dz|^2, with the branch of
sqrt(q) continued along the way.  Each zero of multiplicity mu emits
mu + 2 critical trajectories, the simple pole exactly one.

A traced structure is reduced to an embedded graph on the sphere whose
vertices are the critical points plus the point at infinity (rays sorted
into principal-direction clusters, ordered inside a cluster by their
transversal height).  Faces of that graph are the domains: half-planes
(one per sector between consecutive principal directions) and strips,
whose widths are periods across their end gaps.  Direction classification
happens far out (r_escape) where the leading term dominates; metric data
is taken on a small circle just outside the critical points, where the
accumulated transversal drift of the integrator is negligible.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

from . import qdcore
from .qdcore import QuadDiff

HORIZONTAL = "horizontal"
VERTICAL = "vertical"


class StepFailure(RuntimeError):
    """Adaptive step control could not meet the local tolerance."""


class AmbiguousDirection(RuntimeError):
    """Escape angle too close to a sector boundary to classify."""


class StructureAmbiguous(RuntimeError):
    """Trace data does not assemble into a valid strip/half-plane structure."""


def phase_of(orientation: str) -> float:
    if orientation == HORIZONTAL:
        return 0.0
    if orientation == VERTICAL:
        return math.pi / 2.0
    raise ValueError(f"unknown orientation {orientation!r}")


@dataclass(frozen=True)
class TraceConfig:
    step_tol: float = 1e-9          # local error tolerance per step
    phase_tol: float = 1e-6         # chord-vs-foliation phase bound at midpoints
    max_steps: int = 1_000_000
    r_escape_factor: float = 1e3    # classification radius = factor * max(1, max |zero|)
    r_metric_factor: float = 3.0    # metric radius for widths and heights
    capture_factor: float = 1e-4    # capture radius = factor * scale
    start_offset_factor: float = 2e-3
    connect_factor: float = 1e-6    # confirmed-connection approach threshold * scale
    bisect_iters: int = 12
    direction_margin: float = 1e-3
    quad_tol: float = 1e-9
    short_tol: float = 1e-5         # |Im P| <= tol |P| for reported shorts

    def scaled(self, qd: QuadDiff) -> "_Scaled":
        s = qd.scale
        zmax = max((abs(z) for z, _ in qd.zeros), default=1.0)
        return _Scaled(
            r_escape=self.r_escape_factor * max(1.0, zmax),
            r_metric=self.r_metric_factor * max(1.0, zmax, 0.7 * s),
            capture=self.capture_factor * s,
            start_offset=self.start_offset_factor * s,
            connect=self.connect_factor * s,
            scale=s,
        )


@dataclass(frozen=True)
class _Scaled:
    r_escape: float
    r_metric: float
    capture: float
    start_offset: float
    connect: float
    scale: float


@dataclass(frozen=True)
class Escape:
    kind: str = field(default="escape", init=False)
    direction: int
    angle: float


@dataclass(frozen=True)
class HitsCritical:
    kind: str = field(default="hit", init=False)
    target: int
    approach_angle: float


@dataclass(frozen=True)
class Budget:
    kind: str = field(default="budget", init=False)


@dataclass
class Trajectory:
    orientation: str
    source: int                  # critical-point index (zeros first, pole last)
    slot: int                    # outgoing direction index at the source
    launch_angle: float
    points: list
    termination: object
    end_branch: complex = 0j     # sqrt(q) branch at the final point
    t_final: float = 0.0         # q-metric length traced

    def to_json_dict(self) -> dict:
        if isinstance(self.termination, Escape):
            term = {"kind": "escape", "direction": self.termination.direction,
                    "angle": self.termination.angle}
        elif isinstance(self.termination, HitsCritical):
            term = {"kind": "hit", "target": self.termination.target,
                    "approach_angle": self.termination.approach_angle}
        else:
            term = {"kind": "budget"}
        return {"source": self.source, "slot": self.slot,
                "launch_angle": self.launch_angle,
                "points": [[z.real, z.imag] for z in self.points],
                "termination": term}


# ---------------------------------------------------------------------------
# local data at critical points
# ---------------------------------------------------------------------------

def initial_directions(qd: QuadDiff, crit_id: int, orientation: str) -> list[complex]:
    """Unit outgoing directions of the critical trajectories at a critical point.

    A zero of multiplicity mu emits mu + 2 rays at equal angles solving
    arg(c) + (mu + 2) theta = target (mod 2 pi) with q ~ c (z - z0)^mu;
    the simple pole emits exactly one.
    """
    pts = qd.critical_points()
    if not (0 <= crit_id < len(pts)):
        raise ValueError(f"invalid critical point id {crit_id}")
    _z0, mu = pts[crit_id]
    c = qd.local_coefficient(crit_id)
    count = mu + 2
    target = 0.0 if orientation == HORIZONTAL else math.pi
    base = (target - cmath.phase(c)) / count
    return [cmath.exp(1j * (base + 2.0 * math.pi * j / count)) for j in range(count)]


def principal_direction_of(qd: QuadDiff, angle: float, orientation: str,
                           margin: float = 1e-3) -> int:
    """Principal-direction index whose sector contains the given angle."""
    n = qd.num_principal_directions
    base = 0.0 if orientation == HORIZONTAL else math.pi / n
    rel = (angle - base) * n / (2.0 * math.pi)
    j = round(rel)
    dist_to_boundary = (0.5 - abs(rel - j)) * 2.0 * math.pi / n
    if dist_to_boundary < margin:
        raise AmbiguousDirection(
            f"angle {angle} within {margin} of a sector boundary")
    return j % n


def direction_angle(qd: QuadDiff, j: int, orientation: str) -> float:
    n = qd.num_principal_directions
    base = 0.0 if orientation == HORIZONTAL else math.pi / n
    return base + 2.0 * math.pi * j / n


def _wrap(a: float) -> float:
    return (a + math.pi) % (2.0 * math.pi) - math.pi


# ---------------------------------------------------------------------------
# the integrator (Dormand-Prince 5(4) on the unit-speed field)
# ---------------------------------------------------------------------------

_A21 = 1 / 5
_A31, _A32 = 3 / 40, 9 / 40
_A41, _A42, _A43 = 44 / 45, -56 / 15, 32 / 9
_A51, _A52, _A53, _A54 = 19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729
_A61, _A62, _A63, _A64, _A65 = 9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656
_B1, _B3, _B4, _B5, _B6 = 35 / 384, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84
_E1, _E3, _E4, _E5, _E6, _E7 = (71 / 57600, -71 / 16695, 71 / 1920,
                                -17253 / 339200, 22 / 525, -1 / 40)


def trace(qd: QuadDiff, start_point: complex, direction: complex,
          orientation: str, config: TraceConfig = TraceConfig(),
          *, source: int | None = None, slot: int = -1,
          capture_radius: float | None = None,
          stop_near: tuple[complex, float] | None = None,
          enforce_phase: bool = True, pole_capture: bool = True) -> Trajectory:
    """Trace one critical trajectory from a critical point.

    The start is offset from the critical point along ``direction`` by a
    small multiple of the configuration scale; the trajectory ends by
    escaping past the classification radius, by entering the capture
    radius of another critical point, or by exhausting the step budget.
    With ``enforce_phase`` every accepted step satisfies the
    chord-versus-foliation bound |arg(q(mid) dz^2) - phase| <= phase_tol.
    ``stop_near`` = (point, closeness) ends the trace early once the
    trajectory has approached and then left the vicinity of a point
    (used by the connection refinement, which disables phase enforcement
    for its probes).
    """
    sc = config.scaled(qd)
    cap = sc.capture if capture_radius is None else capture_radius
    crit = qd.critical_points()
    if source is None:
        source = min(range(len(crit)), key=lambda i: abs(crit[i][0] - start_point))
    z0 = crit[source][0]
    direction /= abs(direction)
    launch_angle = cmath.phase(direction)

    zmu = list(qd.zeros)
    has_pole = qd.has_pole
    rot = cmath.exp(1j * phase_of(orientation))
    target_phase = 0.0 if orientation == HORIZONTAL else math.pi
    csqrt = cmath.sqrt
    cphase = cmath.phase

    def qval(z: complex) -> complex:
        acc = 1.0 + 0.0j
        for z0i, mu in zmu:
            acc *= (z - z0i) ** mu
        return acc / z if has_pole else acc

    z = z0 + sc.start_offset * direction
    r = csqrt(qval(z))
    if ((rot / r).real * direction.real + (rot / r).imag * direction.imag) < 0.0:
        r = -r
    ref = r
    k1 = rot / r

    crit_pts = [c for c, _m in crit]
    skip_capture = -1 if pole_capture or not has_pole else len(crit_pts) - 1
    pts = [z0, z]
    t = 0.0
    h = 0.05 * sc.start_offset
    r_escape = sc.r_escape
    escape_grow = 0
    min_h = 1e-16 * max(1.0, sc.scale)
    step_tol = config.step_tol
    phase_lim = 0.9 * config.phase_tol
    w_zone = 1.5 * sc.r_metric
    suppress_t = 20.0 * sc.start_offset

    dist = min(abs(z - c) for c in crit_pts)
    az = abs(z)
    stop_min = math.inf
    steps = 0
    while steps < config.max_steps:
        steps += 1
        rr = ref
        zi = z + h * (_A21 * k1)
        q = csqrt(qval(zi))
        if (q.real * rr.real + q.imag * rr.imag) < 0.0:
            q = -q
        rr = q
        k2 = rot / q
        zi = z + h * (_A31 * k1 + _A32 * k2)
        q = csqrt(qval(zi))
        if (q.real * rr.real + q.imag * rr.imag) < 0.0:
            q = -q
        rr = q
        k3 = rot / q
        zi = z + h * (_A41 * k1 + _A42 * k2 + _A43 * k3)
        q = csqrt(qval(zi))
        if (q.real * rr.real + q.imag * rr.imag) < 0.0:
            q = -q
        rr = q
        k4 = rot / q
        zi = z + h * (_A51 * k1 + _A52 * k2 + _A53 * k3 + _A54 * k4)
        q = csqrt(qval(zi))
        if (q.real * rr.real + q.imag * rr.imag) < 0.0:
            q = -q
        rr = q
        k5 = rot / q
        zi = z + h * (_A61 * k1 + _A62 * k2 + _A63 * k3 + _A64 * k4 + _A65 * k5)
        q = csqrt(qval(zi))
        if (q.real * rr.real + q.imag * rr.imag) < 0.0:
            q = -q
        rr = q
        k6 = rot / q
        z_new = z + h * (_B1 * k1 + _B3 * k3 + _B4 * k4 + _B5 * k5 + _B6 * k6)
        q = csqrt(qval(z_new))
        if (q.real * rr.real + q.imag * rr.imag) < 0.0:
            q = -q
        rr = q
        k7 = rot / q
        err = abs(h * (_E1 * k1 + _E3 * k3 + _E4 * k4 + _E5 * k5 + _E6 * k6 + _E7 * k7))

        if az > w_zone:
            tol = step_tol * az
        else:
            # absolute control of the flat-metric transversal error inside
            # the metric zone: |k1| = 1 / |sqrt(q)| converts w-error to z
            ak = abs(k1)
            tol = step_tol * (ak if ak < 1.0 else 1.0)
        ok = err <= tol and abs(z_new - z) <= 0.6 * max(dist, 4.0 * cap)
        h_phase = math.inf
        if ok and enforce_phase:
            zm = 0.5 * (z + z_new)
            fd = (z_new - z) / h
            ph = cphase(qval(zm) * fd * fd * cmath.exp(-1j * target_phase))
            aph = abs(ph)
            ok = aph <= phase_lim
            h_phase = h * max(0.3, min(3.0, 0.85 * math.sqrt(phase_lim / (aph + 0.02 * phase_lim))))
        if not ok:
            h *= 0.5
            if h < min_h:
                raise StepFailure(f"step size underflow at z={z}")
            continue

        t += h
        prev = z
        z = z_new
        ref = rr
        pts.append(z)
        k1 = k7  # FSAL
        fac = 5.0 if err == 0 else min(5.0, max(0.2, 0.9 * (tol / err) ** 0.2))
        h = min(h * fac, h_phase)

        az = abs(z)
        if az >= r_escape:
            angle = cphase(z)
            try:
                j = principal_direction_of(qd, angle, orientation,
                                           margin=config.direction_margin)
            except AmbiguousDirection:
                escape_grow += 1
                if escape_grow > 3:
                    raise
                r_escape *= 4.0
                continue
            return Trajectory(orientation, source, slot, launch_angle, pts,
                              Escape(j, angle), ref, t)

        seg = z - prev
        seg2 = (seg.real * seg.real + seg.imag * seg.imag) or 1e-300
        dist = math.inf
        for ci, cz in enumerate(crit_pts):
            w = cz - z
            dz_now = math.hypot(w.real, w.imag)
            if dz_now < dist:
                dist = dz_now
            if ci == skip_capture or (ci == source and t < suppress_t):
                continue
            v = cz - prev
            u = (v.real * seg.real + v.imag * seg.imag) / seg2
            if u < 0.0:
                u = 0.0
            elif u > 1.0:
                u = 1.0
            near = prev + u * seg
            d = abs(cz - near)
            if d < cap:
                if near != pts[-1]:
                    pts.append(near)
                approach = cphase(near - cz) if d > 0 else launch_angle
                return Trajectory(orientation, source, slot, launch_angle, pts,
                                  HitsCritical(ci, approach), ref, t)

        if stop_near is not None:
            d = abs(z - stop_near[0])
            stop_min = min(stop_min, d)
            if d > max(3.0 * stop_min, stop_near[1]) and stop_min < stop_near[1]:
                return Trajectory(orientation, source, slot, launch_angle, pts,
                                  Budget(), ref, t)

    return Trajectory(orientation, source, slot, launch_angle, pts,
                      Budget(), ref, t)


# ---------------------------------------------------------------------------
# connection refinement
# ---------------------------------------------------------------------------

def _closest_approach(points: Sequence[complex], target: complex) -> tuple[float, float]:
    """(min distance, side sign) of a polyline relative to a target point."""
    best = math.inf
    side = 0.0
    for a, b in zip(points, points[1:]):
        seg = b - a
        seg2 = (seg.real ** 2 + seg.imag ** 2) or 1e-300
        u = ((target - a).real * seg.real + (target - a).imag * seg.imag) / seg2
        u = min(1.0, max(0.0, u))
        near = a + u * seg
        d = abs(target - near)
        if d < best:
            best = d
            cr = seg.real * (target - near).imag - seg.imag * (target - near).real
            side = 1.0 if cr > 0 else -1.0
    return best, side


def refine_connection(qd: QuadDiff, source: int, slot: int, orientation: str,
                      target: int, config: TraceConfig = TraceConfig()
                      ) -> tuple[bool, Optional[Trajectory]]:
    """Pin a suspected connection by bisecting the launch angle.

    Launch angles around the separatrix direction are bisected on the side
    on which the trajectory passes the target; the connection is confirmed
    when the refined trajectory enters the connect radius of the target.
    """
    sc = config.scaled(qd)
    crit = qd.critical_points()
    tz = crit[target][0]
    mu = crit[source][1]
    dirs = initial_directions(qd, source, orientation)
    theta0 = cmath.phase(dirs[slot])
    window = 0.25 * 2.0 * math.pi / (mu + 2) if mu >= 1 else 0.3

    def probe(theta: float) -> tuple[float, float]:
        tr = trace(qd, crit[source][0], cmath.exp(1j * theta), orientation, config,
                   source=source, slot=slot,
                   capture_radius=sc.connect,
                   stop_near=(tz, 6.0 * sc.capture),
                   enforce_phase=False)
        if isinstance(tr.termination, HitsCritical) and tr.termination.target == target:
            return 0.0, 0.0
        d, s = _closest_approach(tr.points[1:], tz)
        return d, s

    def final(theta: float) -> tuple[bool, Optional[Trajectory]]:
        # phase-enforced re-trace at the refined angle for the stored polyline
        tr = trace(qd, crit[source][0], cmath.exp(1j * theta), orientation, config,
                   source=source, slot=slot, capture_radius=3.0 * sc.connect)
        ok = (isinstance(tr.termination, HitsCritical)
              and tr.termination.target == target)
        return ok, (tr if ok else None)

    d0, s0 = probe(theta0)
    if d0 == 0.0:
        return final(theta0)
    lo, hi = theta0 - window, theta0 + window
    d_lo, s_lo = probe(lo)
    d_hi, s_hi = probe(hi)
    if d_lo == 0.0 or d_hi == 0.0 or s_lo == s_hi:
        # no sign change: spurious unless the center probe already got close
        if d0 <= 3.0 * sc.connect:
            return final(theta0)
        return False, None
    best = (d0, theta0)
    a, sa, b = lo, s_lo, hi
    for _ in range(config.bisect_iters):
        mid = 0.5 * (a + b)
        d, s = probe(mid)
        if d == 0.0:
            return final(mid)
        if d < best[0]:
            best = (d, mid)
        if s == sa:
            a = mid
        else:
            b = mid
    if best[0] <= 3.0 * sc.connect:
        return final(best[1])
    return False, None


# ---------------------------------------------------------------------------
# structure assembly
# ---------------------------------------------------------------------------

@dataclass
class Connection:
    """A critical trajectory joining two critical points."""
    a: tuple[int, int]           # (critical point, slot)
    b: tuple[int, int]
    points: list
    period: complex = 0j


@dataclass
class Ray:
    """An escaping critical trajectory with its metric-circle data."""
    traj: int                    # index into the trajectory list
    source: int
    slot: int
    direction: int               # principal-direction index
    angle: float                 # asymptotic angle at the classification radius
    m_point: complex             # crossing of the metric circle
    m_branch: complex            # sqrt(q) branch there, continued from launch
    drift: float = 0.0           # transversal quadrature correction at m_point
    height: float = 0.0


@dataclass
class Strip:
    ends: tuple[int, int]        # principal directions of the two end gaps
    width: float
    pole_on_boundary: bool
    boundary_critical: tuple[int, ...]
    gaps: tuple[int, int]        # gap ids in the infinity rotation
    end_positions: tuple[int, int] = (0, 0)   # gap position inside each cluster
    width_mismatch: float = 0.0


@dataclass
class HalfPlane:
    sector: tuple[int, int]      # (j, j+1 mod n) principal directions
    boundary_critical: tuple[int, ...]
    gap: int


@dataclass
class TrajectoryStructure:
    qd: QuadDiff
    orientation: str
    trajectories: list
    connections: list
    rays: list
    half_planes: list
    strips: list
    shorts: list                 # (zero_i, zero_j, period)
    pole_connections: list       # (zero_i, period)

    @property
    def has_budget(self) -> bool:
        return any(isinstance(tr.termination, Budget) for tr in self.trajectories)

    def to_json_dict(self) -> dict:
        return {
            "qdiff": self.qd.to_json_dict(),
            "orientation": self.orientation,
            "principal_directions": self.qd.num_principal_directions,
            "trajectories": [tr.to_json_dict() for tr in self.trajectories],
            "connections": [{
                "a": list(c.a), "b": list(c.b),
                "points": [[z.real, z.imag] for z in c.points],
                "period": [c.period.real, c.period.imag]} for c in self.connections],
            "half_planes": [{"sector": list(h.sector),
                             "boundary_critical": list(h.boundary_critical)}
                            for h in self.half_planes],
            "strips": [{"ends": list(s.ends), "width": s.width,
                        "pole_on_boundary": s.pole_on_boundary,
                        "boundary_critical": list(s.boundary_critical)}
                       for s in self.strips],
            "shorts": [[i, j, [p.real, p.imag]] for i, j, p in self.shorts],
            "pole_connections": [[i, [p.real, p.imag]] for i, p in self.pole_connections],
        }


def _simplify_polyline(qd: QuadDiff, points: Sequence[complex]) -> list[complex]:
    """Subsample a traced polyline, keeping it inside the safety tube.

    Consecutive kept points stay closer together than half the distance of
    either to the nearest critical point, so the simplified path is
    homotopic to the original and its straight segments stay clear of
    singularities.  Near the endpoints this yields a geometric ladder.
    """
    pts = [p for i, p in enumerate(points) if i == 0 or p != points[i - 1]]
    if len(pts) <= 2:
        return pts
    cps = [c for c, _m in qd.critical_points()]

    def dist(p: complex) -> float:
        return min(abs(p - c) for c in cps)

    out = [pts[0]]
    i = 0
    di = dist(pts[0])
    while i < len(pts) - 1:
        j = i + 1
        dj = dist(pts[j])
        while j + 1 < len(pts):
            dn = dist(pts[j + 1])
            if abs(pts[j + 1] - pts[i]) > 0.45 * max(di, dn):
                break
            j += 1
            dj = dn
        out.append(pts[j])
        i = j
        di = dj
    return out


def _connection_period(qd: QuadDiff, conn: Connection,
                       config: TraceConfig) -> complex:
    """Period of sqrt(q) along a connection, in its own homotopy class."""
    path = _simplify_polyline(qd, conn.points)
    crit = qd.critical_points()
    za = crit[conn.a[0]][0]
    zb = crit[conn.b[0]][0]
    guard = 3.0 * qd.eps_crit
    interior = [p for p in path[1:-1]
                if abs(p - za) > guard and abs(p - zb) > guard]
    path = [za] + interior + [zb]
    path = [p for i, p in enumerate(path) if i == 0 or p != path[i - 1]]
    res = qdcore.period(qd, path, None, abs_tol=config.quad_tol,
                        min_clearance=1e-11 * qd.scale)
    return res.value


def _trace_all(qd: QuadDiff, orientation: str, config: TraceConfig
               ) -> tuple[list[Trajectory], list[Connection]]:
    """Trace every critical trajectory and resolve captures into connections."""
    sc = config.scaled(qd)
    crit = qd.critical_points()
    traces: dict[tuple[int, int], Trajectory] = {}
    for ci, (_z, _mu) in enumerate(crit):
        for slot, d in enumerate(initial_directions(qd, ci, orientation)):
            traces[(ci, slot)] = trace(qd, crit[ci][0], d, orientation, config,
                                       source=ci, slot=slot)

    connections: list[Connection] = []
    consumed: dict[tuple[int, int], int] = {}
    pole_idx = len(crit) - 1 if qd.has_pole else -1
    comp = (lambda p: p.imag) if orientation == HORIZONTAL else (lambda p: p.real)

    def target_slot(tr: Trajectory) -> tuple[int, int]:
        tgt = tr.termination.target
        dirs = initial_directions(qd, tgt, orientation)
        angles = [cmath.phase(d) for d in dirs]
        sl = min(range(len(angles)),
                 key=lambda j: abs(_wrap(angles[j] - tr.termination.approach_angle)))
        return tgt, sl

    def validated_period(key, other, pts):
        # transversal residual vetoes near-misses that slipped through the
        # capture ball (which is metrically magnified at the simple pole)
        conn = Connection(a=key, b=other, points=pts)
        conn.period = _connection_period(qd, conn, config)
        if abs(comp(conn.period)) > 1e-6 * max(1.0, abs(conn.period)):
            return None
        return conn

    def register(conn):
        idx = len(connections)
        connections.append(conn)
        consumed[conn.a] = idx
        consumed[conn.b] = idx

    for key in sorted(traces):
        tr = traces[key]
        if key in consumed or not isinstance(tr.termination, HitsCritical):
            continue
        tgt, sl = target_slot(tr)
        if (tgt, sl) in consumed:
            raise StructureAmbiguous(
                f"slot {(tgt, sl)} captured by two different trajectories")
        conn = None
        ok, refined = refine_connection(qd, key[0], key[1], orientation, tgt, config)
        if ok and refined is not None:
            pts = list(refined.points)
            pts.append(crit[tgt][0])
            conn = validated_period(key, (tgt, sl), pts)
        if conn is not None:
            register(conn)
            continue
        # spurious capture: re-trace past the false target
        retr = trace(qd, crit[key[0]][0],
                     cmath.exp(1j * tr.launch_angle), orientation, config,
                     source=key[0], slot=key[1],
                     capture_radius=3.0 * sc.connect,
                     pole_capture=(tgt != pole_idx))
        traces[key] = retr
        if isinstance(retr.termination, HitsCritical):
            tgt2, sl2 = target_slot(retr)
            if (tgt2, sl2) in consumed:
                raise StructureAmbiguous("conflicting captures after re-trace")
            pts = list(retr.points)
            pts.append(crit[tgt2][0])
            conn = validated_period(key, (tgt2, sl2), pts)
            if conn is None:
                raise StructureAmbiguous(
                    f"capture of {key} at {(tgt2, sl2)} fails the period veto")
            register(conn)

    ordered = []
    for key in sorted(traces):
        tr = traces[key]
        if key in consumed:
            conn = connections[consumed[key]]
            if conn.a == key:
                tr.points = conn.points
                tr.termination = HitsCritical(
                    conn.b[0],
                    tr.termination.approach_angle
                    if isinstance(tr.termination, HitsCritical) else 0.0)
            else:
                tr.points = list(reversed(conn.points))
                tr.termination = HitsCritical(conn.a[0], tr.launch_angle)
        ordered.append(tr)
    return ordered, connections


def _cut_at_radius(points: Sequence[complex], r: float) -> tuple[complex, int]:
    """Last crossing of |z| = r along the polyline; (point, segment index)."""
    for i in range(len(points) - 1, 0, -1):
        if abs(points[i]) >= r and abs(points[i - 1]) < r:
            a, b = points[i - 1], points[i]
            lo, hi = 0.0, 1.0
            for _ in range(60):
                mid = 0.5 * (lo + hi)
                if abs(a + (b - a) * mid) >= r:
                    hi = mid
                else:
                    lo = mid
            return a + (b - a) * hi, i
    return points[-1], len(points) - 1


def _branch_along(qd: QuadDiff, points: Sequence[complex], s0: complex) -> complex:
    """Continue a sqrt(q) branch along polyline samples to the last one."""
    s = s0
    for p in points:
        r = cmath.sqrt(qd.q(p))
        if (r.real * s.real + r.imag * s.imag) < 0.0:
            r = -r
        s = r
    return s


def _arc_period(qd: QuadDiff, a: complex, sa: complex, b: complex,
                config: TraceConfig) -> complex:
    """Period along the short-way circular arc from a to b."""
    ra, rb = abs(a), abs(b)
    tha, thb = cmath.phase(a), cmath.phase(b)
    dth = _wrap(thb - tha)
    n = max(6, int(abs(dth) / 0.05) + 2)
    path = [a]
    for i in range(1, n):
        f = i / n
        rr = ra + (rb - ra) * f
        path.append(rr * cmath.exp(1j * (tha + dth * f)))
    path.append(b)
    res = qdcore.period(qd, path, sa, abs_tol=config.quad_tol)
    return res.value


def _launch_branch(qd: QuadDiff, tr: Trajectory, orientation: str) -> complex:
    """The sqrt(q) branch at the first offset point of a trace."""
    z = tr.points[1]
    r = cmath.sqrt(qd.q(z))
    rot = cmath.exp(1j * phase_of(orientation))
    d = cmath.exp(1j * tr.launch_angle)
    f = rot / r
    if (f.real * d.real + f.imag * d.imag) < 0.0:
        r = -r
    return r


def build_structure(qd: QuadDiff, orientation: str,
                    config: TraceConfig = TraceConfig()) -> TrajectoryStructure:
    """Trace all critical trajectories and assemble the full structure.

    Raises StructureAmbiguous when any trajectory exhausts its budget or
    the face analysis does not produce pure strip/half-plane domains.
    """
    trajectories, connections = _trace_all(qd, orientation, config)
    for tr in trajectories:
        if isinstance(tr.termination, Budget):
            raise StructureAmbiguous(
                f"trajectory from ({tr.source},{tr.slot}) exhausted its budget")

    sc = config.scaled(qd)
    crit = qd.critical_points()
    n_dir = qd.num_principal_directions

    sign = 1.0 if orientation == HORIZONTAL else -1.0
    comp = (lambda p: p.imag) if orientation == HORIZONTAL else (lambda p: p.real)

    rays: list[Ray] = []
    for ti, tr in enumerate(trajectories):
        if not isinstance(tr.termination, Escape):
            continue
        mp, seg_idx = _cut_at_radius(tr.points, sc.r_metric)
        lb = _launch_branch(qd, tr, orientation)
        sb = _branch_along(qd, list(tr.points[1:seg_idx]) + [mp], lb)
        # transversal drift of the traced endpoint off the true leaf: the
        # period depends only on the endpoints, so the simplified polyline
        # gives Im w(m_point) - Im w(source zero) exactly
        dpath = _simplify_polyline(qd, list(tr.points[:seg_idx]) + [mp])
        dpath[0] = crit[tr.source][0]
        drift_p = qdcore.period(qd, dpath, lb, abs_tol=config.quad_tol,
                                min_clearance=1e-11 * qd.scale)
        rays.append(Ray(ti, tr.source, tr.slot, tr.termination.direction,
                        tr.termination.angle, mp, sb, comp(drift_p.value)))
    clusters: dict[int, list[Ray]] = {}
    for ray in rays:
        clusters.setdefault(ray.direction, []).append(ray)
    if set(clusters) != set(range(n_dir)):
        raise StructureAmbiguous(
            f"principal directions without rays: {sorted(set(range(n_dir)) - set(clusters))}")

    gap_widths: dict[tuple[int, int], float] = {}

    def order_cluster(j: int) -> None:
        cl = clusters[j]
        da = direction_angle(qd, j, orientation)
        cl.sort(key=lambda ray: _wrap(ray.angle - da))
        if len(cl) == 1:
            cl[0].height = 0.0
            return
        for attempt in range(2):
            heights = [0.0]
            ok = True
            for a, b in zip(cl, cl[1:]):
                p = _arc_period(qd, a.m_point, a.m_branch, b.m_point, config)
                step = sign * (comp(p) + a.drift - b.drift)
                heights.append(heights[-1] + step)
                if step <= 0:
                    ok = False
            for ray, hgt in zip(cl, heights):
                ray.height = hgt
            if ok:
                for i in range(len(cl) - 1):
                    gap_widths[(j, i)] = heights[i + 1] - heights[i]
                return
            if attempt == 0:
                cl.sort(key=lambda ray: ray.height)
        raise StructureAmbiguous(f"inconsistent ray heights in cluster {j}")

    for j in sorted(clusters):
        order_cluster(j)

    inf_rot: list[Ray] = []
    for j in range(n_dir):
        inf_rot.extend(clusters[j])
    m = len(inf_rot)
    gap_ids: dict[int, tuple] = {}
    for idx in range(m):
        a = inf_rot[idx]
        b = inf_rot[(idx + 1) % m]
        if a.direction == b.direction:
            gap_ids[idx] = ("pinch", a.direction, clusters[a.direction].index(a))
        else:
            gap_ids[idx] = ("sector", a.direction, b.direction)

    # half-edge structure: darts are ("c", ci, slot) or ("inf", ray index)
    reverse = {}
    for i, ray in enumerate(inf_rot):
        reverse[("c", ray.source, ray.slot)] = ("inf", i)
        reverse[("inf", i)] = ("c", ray.source, ray.slot)
    for conn in connections:
        reverse[("c", *conn.a)] = ("c", *conn.b)
        reverse[("c", *conn.b)] = ("c", *conn.a)

    rot_at: dict = {}
    for ci, (_z, _mu) in enumerate(crit):
        dirs = initial_directions(qd, ci, orientation)
        order = sorted(range(len(dirs)), key=lambda s: cmath.phase(dirs[s]))
        rot_at[("c", ci)] = [("c", ci, s) for s in order]
    rot_at[("inf",)] = [("inf", i) for i in range(m - 1, -1, -1)]

    def node_of(d):
        return ("inf",) if d[0] == "inf" else ("c", d[1])

    def next_dart(d):
        rd = reverse[d]
        rot = rot_at[node_of(rd)]
        i = rot.index(rd)
        return rot[(i + 1) % len(rot)]

    all_darts = list(reverse)
    seen = set()
    faces = []
    for d0 in all_darts:
        if d0 in seen:
            continue
        face = []
        d = d0
        guard = 0
        while True:
            face.append(d)
            seen.add(d)
            d = next_dart(d)
            guard += 1
            if d == d0 or guard > 10 * len(all_darts):
                break
        if guard > 10 * len(all_darts):
            raise StructureAmbiguous("face tracing did not close")
        faces.append(face)

    n_vertices = len(crit) + 1
    n_edges = len(all_darts) // 2
    if n_vertices - n_edges + len(faces) != 2:
        raise StructureAmbiguous(
            f"Euler check failed: V={n_vertices} E={n_edges} F={len(faces)}")

    half_planes: list[HalfPlane] = []
    strips: list[Strip] = []
    for face in faces:
        pinches = []
        sectors = []
        boundary_crit = sorted({d[1] for d in face if d[0] == "c"})
        for i, d in enumerate(face):
            if d[0] != "inf":
                continue
            # corner between arriving along edge(face[i-1]) and departing on d
            arr = reverse[face[i - 1]]
            if arr[0] != "inf":
                raise StructureAmbiguous("walk departs infinity without arriving")
            ia, ib = arr[1], d[1]
            if (ia - 1) % m == ib:
                gap_idx = ib
            elif (ib - 1) % m == ia:
                gap_idx = ia
            else:
                raise StructureAmbiguous("non-adjacent rays at an infinity corner")
            if gap_ids[gap_idx][0] == "pinch":
                pinches.append(gap_idx)
            else:
                sectors.append(gap_idx)
        if len(sectors) == 1 and not pinches:
            g = gap_ids[sectors[0]]
            half_planes.append(HalfPlane((g[1], g[2]), tuple(boundary_crit),
                                         sectors[0]))
        elif len(pinches) == 2 and not sectors:
            g1 = gap_ids[pinches[0]]
            g2 = gap_ids[pinches[1]]
            w1 = gap_widths[(g1[1], g1[2])]
            w2 = gap_widths[(g2[1], g2[2])]
            mism = abs(w1 - w2) / max(w1, w2)
            if mism > 1e-4:
                raise StructureAmbiguous(
                    f"strip width mismatch between its two ends: {w1} vs {w2}")
            pole_idx = len(crit) - 1 if qd.has_pole else -1
            strips.append(Strip((g1[1], g2[1]), 0.5 * (w1 + w2),
                                qd.has_pole and pole_idx in boundary_crit,
                                tuple(boundary_crit),
                                (pinches[0], pinches[1]),
                                (g1[2], g2[2]), mism))
        elif not pinches and not sectors:
            raise StructureAmbiguous("bounded face (ring-like domain) detected")
        else:
            raise StructureAmbiguous(
                f"face with {len(sectors)} sector and {len(pinches)} pinch corners")

    if len(half_planes) != n_dir:
        raise StructureAmbiguous(
            f"expected {n_dir} half-planes, found {len(half_planes)}")

    pole_idx = len(crit) - 1 if qd.has_pole else None
    shorts = []
    pole_conns = []
    for conn in connections:
        ia, ib = conn.a[0], conn.b[0]
        if pole_idx is not None and pole_idx in (ia, ib):
            z_side = ia if ib == pole_idx else ib
            pole_conns.append((z_side, conn.period))
        else:
            shorts.append((min(ia, ib), max(ia, ib), conn.period))

    return TrajectoryStructure(qd, orientation, trajectories, connections,
                               inf_rot, half_planes, strips, shorts, pole_conns)


def find_short_trajectories(qd: QuadDiff, orientation: str,
                            tol: float = 1e-5,
                            config: TraceConfig = TraceConfig()
                            ) -> list[tuple[int, int, complex]]:
    """Zero pairs joined by a trajectory of the given orientation.

    Captured traces are refined by launch-angle bisection; a pair is
    reported when the period P along the refined connection satisfies
    |Im P| <= tol |P| (horizontal) or |Re P| <= tol |P| (vertical).
    """
    _trajectories, connections = _trace_all(qd, orientation, config)
    pole_idx = len(qd.critical_points()) - 1 if qd.has_pole else None
    out = []
    for conn in connections:
        ia, ib = conn.a[0], conn.b[0]
        if pole_idx is not None and pole_idx in (ia, ib):
            continue
        p = conn.period
        comp = abs(p.imag) if orientation == HORIZONTAL else abs(p.real)
        if comp <= tol * abs(p):
            out.append((min(ia, ib), max(ia, ib), p))
    out.sort(key=lambda t: (t[0], t[1]))
    return out
