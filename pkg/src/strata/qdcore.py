"""Core arithmetic for rational quadratic differentials q(z) dz^2.

The differentials handled here have a monic polynomial numerator and either
a simple pole at the origin (q = N(z)/z, the main family) or no finite pole
at all (q = N(z), the polynomial subfamily).  This module provides root
finding for the numerator, evaluation of q, branch-tracked square roots of
q along piecewise-linear paths, and periods  int sqrt(q) dz  with proper
handling of the integrable endpoint singularities at simple zeros and at
the origin.

All values are immutable after construction; every function is pure.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np


class DegenerateInput(ValueError):
    """Input outside the family (a_0 = 0, bad degree, malformed coeffs)."""


class RootFindingFailure(RuntimeError):
    """Simultaneous root iteration did not converge within its budget."""


class PathThroughSingularity(RuntimeError):
    """A path sample came too close to a zero or the finite pole."""


class QuadratureFailure(RuntimeError):
    """Adaptive quadrature could not meet the requested error target."""


# ---------------------------------------------------------------------------
# polynomial helpers (monic, coefficients ascending: p = z^d + c[d-1] z^(d-1) + ... + c[0])
# ---------------------------------------------------------------------------

def polyval_monic(coeffs: Sequence[complex], z):
    """Evaluate the monic polynomial with ascending coefficients at z.

    Works for scalars and numpy arrays.
    """
    acc = np.ones_like(z) if isinstance(z, np.ndarray) else 1.0 + 0.0j
    for c in reversed(coeffs):
        acc = acc * z + c
    return acc


def _polyder_monic(coeffs: Sequence[complex]) -> tuple[list[complex], complex]:
    """Derivative of a monic polynomial; returns (ascending coeffs, leading)."""
    d = len(coeffs)
    der = [(i + 1) * coeffs[i + 1] for i in range(d - 1)]
    return der, complex(d)


def _eval_nonmonic(coeffs_asc: Sequence[complex], lead: complex, z: complex) -> complex:
    acc = lead
    for c in reversed(coeffs_asc):
        acc = acc * z + c
    return acc


def roots(coeffs: Sequence[complex], *, max_iter: int = 400,
          restarts: int = 4, seed: int = 0,
          cluster_tol: float = 1e-8) -> list[tuple[complex, int]]:
    """All roots of the monic polynomial z^d + coeffs[d-1] z^(d-1) + ... + coeffs[0].

    Uses Aberth-Ehrlich simultaneous iteration started on a Cauchy-bound
    circle, with seeded random-perturbation restarts if the iteration
    stalls.  Roots closer than ``cluster_tol`` are merged into a single
    root with summed multiplicity (the cluster mean, which for a genuine
    multiple root is second-order accurate).

    Returns a list of (root, multiplicity) sorted by (Re, Im).  Raises
    RootFindingFailure if the residual bound |p(r)| <= 1e-10 max(1, |r|^d)
    cannot be met.
    """
    d = len(coeffs)
    if d < 1:
        raise DegenerateInput("polynomial degree must be >= 1")
    cs = [complex(c) for c in coeffs]
    if d == 1:
        return [(-cs[0], 1)]

    der, der_lead = _polyder_monic(cs)
    rng = np.random.default_rng(seed)
    radius = 1.0 + max(abs(c) for c in cs)

    def run(z0: np.ndarray) -> np.ndarray:
        z = z0.copy()
        for _ in range(max_iter):
            pv = polyval_monic(cs, z)
            dv = np.array([_eval_nonmonic(der, der_lead, zi) for zi in z])
            w = np.zeros(d, dtype=complex)
            nz = dv != 0
            w[nz] = pv[nz] / dv[nz]
            diff = z[:, None] - z[None, :]
            np.fill_diagonal(diff, 1.0)
            inv = 1.0 / diff
            np.fill_diagonal(inv, 0.0)
            s = inv.sum(axis=1)
            denom = 1.0 - w * s
            denom[denom == 0] = 1.0
            delta = w / denom
            z = z - delta
            if np.max(np.abs(delta)) < 1e-14 * max(1.0, float(np.max(np.abs(z)))):
                break
        return z

    start = radius * np.exp(2j * math.pi * (np.arange(d) + 0.25) / d)
    z = run(start)
    for attempt in range(restarts):
        res = np.abs(polyval_monic(cs, z))
        bound = 1e-10 * np.maximum(1.0, np.abs(z) ** d)
        if np.all(res <= bound):
            break
        jitter = 0.2 * radius * (rng.random(d) + 1j * rng.random(d) - 0.5 - 0.5j)
        z = run(start * (1.0 + 0.1 * (attempt + 1)) + jitter)
    else:
        res = np.abs(polyval_monic(cs, z))
        bound = 1e-10 * np.maximum(1.0, np.abs(z) ** d)
        if not np.all(res <= bound):
            raise RootFindingFailure(
                f"Aberth iteration did not reach residual target (max residual {res.max():.3e})")

    # cluster for multiplicities
    pts = sorted(z.tolist(), key=lambda w: (w.real, w.imag))
    clusters: list[list[complex]] = []
    for p in pts:
        for cl in clusters:
            if any(abs(p - q) <= cluster_tol for q in cl):
                cl.append(p)
                break
        else:
            clusters.append([p])
    out = []
    for cl in clusters:
        r = sum(cl) / len(cl)
        out.append((r, len(cl)))
    out.sort(key=lambda t: (t[0].real, t[0].imag))

    for r, mult in out:
        if abs(polyval_monic(cs, r)) > 1e-10 * max(1.0, abs(r) ** d):
            raise RootFindingFailure(f"clustered root {r} fails residual bound")
    return out


# ---------------------------------------------------------------------------
# the differential
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class QuadDiff:
    """A quadratic differential (z^k + a_{k-1} z^{k-1} + ... + a_0) / z * dz^2.

    ``coeffs`` are (a_0, ..., a_{k-1}).  With ``has_pole`` False the
    denominator z is dropped and the object represents the polynomial
    differential N(z) dz^2 of the same monic numerator (the subfamily in
    which the simple pole is absent).
    """

    k: int
    coeffs: tuple[complex, ...]
    zeros: tuple[tuple[complex, int], ...]
    has_pole: bool = True

    @property
    def pole_infinity_order(self) -> int:
        return self.k + 3 if self.has_pole else self.k + 4

    @property
    def num_principal_directions(self) -> int:
        return self.pole_infinity_order - 2

    def q(self, z: complex) -> complex:
        """Evaluate q in factored form (cancellation-free near the zeros)."""
        n = 1.0 + 0.0j
        for z0, mu in self.zeros:
            n *= (z - z0) ** mu
        return n / z if self.has_pole else n

    def q_array(self, z: np.ndarray) -> np.ndarray:
        n = np.ones_like(z)
        for z0, mu in self.zeros:
            n = n * (z - z0) ** mu
        return n / z if self.has_pole else n

    def critical_points(self) -> list[tuple[complex, int]]:
        """Zeros as (location, multiplicity) plus the pole as (0, -1)."""
        pts = [(z, m) for z, m in self.zeros]
        if self.has_pole:
            pts.append((0.0 + 0.0j, -1))
        return pts

    def local_coefficient(self, idx: int) -> complex:
        """Leading coefficient c of q ~ c (z - z0)^mu at critical point idx.

        ``idx`` indexes :meth:`critical_points`; for the pole the expansion
        is q ~ c / z with c = a_0 (polynomial part evaluated at 0).
        """
        pts = self.critical_points()
        z0, mu = pts[idx]
        if mu == -1:
            return polyval_monic(self.coeffs, 0.0 + 0.0j)
        c = 1.0 + 0.0j
        for j, (zj, mj) in enumerate(self.zeros):
            if abs(zj - z0) > 1e-14 and (zj, mj) != (z0, mu):
                c *= (z0 - zj) ** mj
        if self.has_pole:
            c /= z0
        return c

    @property
    def scale(self) -> float:
        """Diameter of the zero set together with the origin."""
        pts = [0.0 + 0.0j] + [z for z, _ in self.zeros]
        return max((abs(a - b) for a in pts for b in pts), default=1.0) or 1.0

    @property
    def eps_crit(self) -> float:
        return 1e-6 * self.scale

    def min_critical_distance(self, z: complex) -> float:
        return min(abs(z - c) for c, _ in self.critical_points())

    def to_json_dict(self) -> dict:
        return {
            "k": self.k,
            "coeffs": [[c.real, c.imag] for c in self.coeffs],
            "has_pole": self.has_pole,
        }

    @staticmethod
    def from_json_dict(d: dict) -> "QuadDiff":
        coeffs = [complex(re, im) for re, im in d["coeffs"]]
        if d.get("has_pole", True):
            return make_qdiff(d["k"], coeffs)
        return make_polynomial_qdiff(coeffs)


def make_qdiff(k: int, coeffs: Sequence[complex], *, seed: int = 0) -> QuadDiff:
    """Build a member of the main family; rejects a_0 = 0 and k < 2."""
    if k < 2:
        raise DegenerateInput(f"k must be >= 2, got {k}")
    if len(coeffs) != k:
        raise DegenerateInput(f"expected {k} coefficients a_0..a_(k-1), got {len(coeffs)}")
    cs = tuple(complex(c) for c in coeffs)
    if cs[0] == 0:
        raise DegenerateInput("a_0 = 0 cancels the simple pole at the origin")
    zs = tuple(roots(cs, seed=seed))
    return QuadDiff(k=k, coeffs=cs, zeros=zs, has_pole=True)


def make_polynomial_qdiff(coeffs: Sequence[complex], *, seed: int = 0) -> QuadDiff:
    """Build the polynomial differential N(z) dz^2 (no finite pole)."""
    cs = tuple(complex(c) for c in coeffs)
    if len(cs) < 1:
        raise DegenerateInput("numerator degree must be >= 1")
    zs = tuple(roots(cs, seed=seed))
    return QuadDiff(k=len(cs), coeffs=cs, zeros=zs, has_pole=False)


# ---------------------------------------------------------------------------
# branch-tracked square root along a path
# ---------------------------------------------------------------------------

_MAX_SUBDIV_DEPTH = 48
_PHASE_JUMP = math.pi / 3  # subdivision threshold, margin below pi/2


def _pick_branch(value: complex, ref: complex) -> complex:
    """Square root of q closer in argument to ``ref`` (nearest-argument rule)."""
    if (value.real * ref.real + value.imag * ref.imag) < 0.0:
        return -value
    return value


def validate_path(qd: QuadDiff, path: Sequence[complex]) -> list[complex]:
    pts = [complex(p) for p in path]
    for a, b in zip(pts, pts[1:]):
        if a == b:
            raise ValueError("consecutive waypoints must be distinct")
    for i, p in enumerate(pts):
        if 0 < i < len(pts) - 1 and qd.min_critical_distance(p) < qd.eps_crit:
            raise PathThroughSingularity(f"waypoint {i} within eps_crit of a critical point")
    return pts


def _branch_segment(qd: QuadDiff, z0: complex, s0: complex, z1: complex,
                    depth: int = 0) -> list[tuple[complex, complex]]:
    """Branch samples (z, sqrt q) strictly after z0 up to and including z1."""
    r = cmath.sqrt(qd.q(z1))
    s1 = _pick_branch(r, s0)
    cross = s1.real * s0.imag - s1.imag * s0.real
    dot = s1.real * s0.real + s1.imag * s0.imag
    if abs(math.atan2(cross, dot)) <= _PHASE_JUMP:
        return [(z1, s1)]
    if depth >= _MAX_SUBDIV_DEPTH:
        raise PathThroughSingularity("branch continuation did not stabilize (path too close to a critical point)")
    zm = 0.5 * (z0 + z1)
    if qd.min_critical_distance(zm) < qd.eps_crit:
        raise PathThroughSingularity("adaptive subdivision reached eps_crit of a critical point")
    first = _branch_segment(qd, z0, s0, zm, depth + 1)
    second = _branch_segment(qd, first[-1][0], first[-1][1], z1, depth + 1)
    return first + second


def sqrt_q_along(qd: QuadDiff, path: Sequence[complex],
                 initial_branch: complex) -> list[complex]:
    """Continuous branch of sqrt(q) at each waypoint of the path.

    ``initial_branch`` must square to q at the first waypoint (1e-9
    relative).  Successive values follow the nearest-argument continuation
    rule, with adaptive mid-point subdivision whenever the phase of
    sqrt(q) would jump by more than pi/2 between samples.
    """
    pts = validate_path(qd, path)
    z0 = pts[0]
    if qd.min_critical_distance(z0) < qd.eps_crit or (len(pts) > 1 and qd.min_critical_distance(pts[-1]) < qd.eps_crit):
        raise PathThroughSingularity("sqrt_q_along endpoints must be regular points")
    q0 = qd.q(z0)
    s0 = complex(initial_branch)
    if abs(s0 * s0 - q0) > 1e-9 * max(abs(q0), 1e-300):
        raise ValueError("initial_branch does not square to q at the first waypoint")
    out = [s0]
    cur_z, cur_s = z0, s0
    for z1 in pts[1:]:
        samples = _branch_segment(qd, cur_z, cur_s, z1)
        cur_z, cur_s = samples[-1]
        out.append(cur_s)
    return out


# ---------------------------------------------------------------------------
# periods
# ---------------------------------------------------------------------------

class PeriodResult(NamedTuple):
    value: complex
    abs_error: float


# Gauss-Kronrod 15/7 nodes and weights on [-1, 1]
_GK_X = np.array([
    -0.991455371120813, -0.949107912342759, -0.864864423359769,
    -0.741531185599394, -0.586087235467691, -0.405845151377397,
    -0.207784955007898, 0.0, 0.207784955007898, 0.405845151377397,
    0.586087235467691, 0.741531185599394, 0.864864423359769,
    0.949107912342759, 0.991455371120813])
_GK_WK = np.array([
    0.022935322010529, 0.063092092629979, 0.104790010322250,
    0.140653259715525, 0.169004726639267, 0.190350578064785,
    0.204432940075298, 0.209482141084728, 0.204432940075298,
    0.190350578064785, 0.169004726639267, 0.140653259715525,
    0.104790010322250, 0.063092092629979, 0.022935322010529])
_GK_WG = np.array([
    0.129484966168870, 0.279705391489277, 0.381830050505119,
    0.417959183673469, 0.381830050505119, 0.279705391489277,
    0.129484966168870])


def _gk_panel(f, a: float, b: float) -> tuple[complex, float]:
    """One Gauss-Kronrod 15(7) panel; returns (integral, error estimate)."""
    mid = 0.5 * (a + b)
    half = 0.5 * (b - a)
    x = mid + half * _GK_X
    y = f(x)
    ik = half * np.sum(_GK_WK * y)
    ig = half * np.sum(_GK_WG * y[1::2])
    return ik, abs(ik - ig)


def _adaptive_gk(f, a: float, b: float, tol: float, max_panels: int = 4000) -> tuple[complex, float]:
    val, err = _gk_panel(f, a, b)
    stack = [(a, b, val, err)]
    for _ in range(max_panels):
        total_err = sum(e for *_r, e in stack)
        if total_err <= tol:
            break
        stack.sort(key=lambda t: t[3])
        a0, b0, _v, _e = stack.pop()
        m = 0.5 * (a0 + b0)
        stack.append((a0, m) + _gk_panel(f, a0, m))
        stack.append((m, b0) + _gk_panel(f, m, b0))
    else:
        raise QuadratureFailure("quadrature error target not met within the panel budget")
    total = sum(v for _a, _b, v, _e in stack)
    total_err = sum(e for *_r, e in stack)
    if total_err > tol:
        raise QuadratureFailure("quadrature error target not met")
    return total, total_err


class _BranchTable:
    """Branch reference samples along one straight segment.

    Samples are (fraction in [0,1], sqrt q); dense enough that the phase
    rotates at most ~pi/3 between neighbours, so the nearest-argument rule
    against the nearest sample recovers the branch at any point.
    """

    def __init__(self, qd: QuadDiff, z0: complex, z1: complex,
                 s0: complex, t1: float = 1.0):
        self.qd = qd
        self.z0 = z0
        self.z1 = z1
        ts = [0.0]
        ss = [s0]
        cur_t, cur_s = 0.0, s0
        step = t1 / 8.0
        guard = 0
        while t1 - cur_t > 1e-15 and guard < 100000:
            guard += 1
            nt = min(cur_t + step, t1)
            z = z0 + (z1 - z0) * nt
            r = cmath.sqrt(qd.q(z))
            s = _pick_branch(r, cur_s)
            cross = s.real * cur_s.imag - s.imag * cur_s.real
            dot = s.real * cur_s.real + s.imag * cur_s.imag
            if abs(math.atan2(cross, dot)) > _PHASE_JUMP:
                if step <= 1e-14:
                    raise PathThroughSingularity(
                        "branch continuation stalled; path passes through a critical point")
                step *= 0.5
                continue
            ts.append(nt)
            ss.append(s)
            cur_t, cur_s = nt, s
            step = min(step * 1.9, 0.25 * t1)
        if guard >= 100000:
            raise PathThroughSingularity("branch table did not converge along segment")
        self.ts = np.array(ts)
        self.ss = np.array(ss)

    def sqrt_q(self, t: np.ndarray) -> np.ndarray:
        z = self.z0 + (self.z1 - self.z0) * t
        r = np.sqrt(self.qd.q_array(z))
        idx = np.searchsorted(self.ts, t)
        idx = np.clip(idx, 1, len(self.ts) - 1)
        left = self.ts[idx - 1]
        right = self.ts[idx]
        ref = np.where(np.abs(t - left) <= np.abs(right - t),
                       self.ss[idx - 1], self.ss[idx])
        flip = (r.real * ref.real + r.imag * ref.imag) < 0
        return np.where(flip, -r, r)

    def end(self) -> tuple[float, complex]:
        return float(self.ts[-1]), complex(self.ss[-1])


def _critical_at(qd: QuadDiff, z: complex) -> tuple[complex, int] | None:
    for c, m in qd.critical_points():
        if abs(z - c) <= qd.eps_crit:
            return c, m
    return None


def period(qd: QuadDiff, path: Sequence[complex],
           initial_branch: complex | None = None,
           abs_tol: float = 1e-9,
           min_clearance: float | None = None) -> PeriodResult:
    """Integral of sqrt(q) dz along a piecewise-linear path.

    Endpoints may sit at critical points; the 1/sqrt singularity at the
    origin and the sqrt vanishing at zeros are removed exactly by the
    substitution u^2 = (z - z0) on the affected segment.  The branch is
    continued along the whole path; ``initial_branch`` refers to the
    first regular waypoint (principal square root there if omitted).
    ``min_clearance`` overrides the eps_crit guard on interior waypoints
    (paths that legitimately hug the pole pass a tighter clearance).

    Returns the value together with the accumulated error estimate of the
    adaptive Gauss-Kronrod quadrature (target ``abs_tol``).
    """
    pts = [complex(p) for p in path]
    if len(pts) <= 1:
        return PeriodResult(0.0 + 0.0j, 0.0)
    clearance = qd.eps_crit if min_clearance is None else min_clearance
    for a, b in zip(pts, pts[1:]):
        if a == b:
            raise ValueError("consecutive waypoints must be distinct")
    for i, p in enumerate(pts[1:-1], start=1):
        if qd.min_critical_distance(p) < clearance:
            raise PathThroughSingularity(f"interior waypoint {i} within eps_crit of a critical point")

    start_crit = _critical_at(qd, pts[0])
    end_crit = _critical_at(qd, pts[-1])
    if start_crit is not None:
        pts[0] = start_crit[0]
    if end_crit is not None:
        pts[-1] = end_crit[0]
    if start_crit is not None and len(pts) == 2 and end_crit is not None:
        raise PathThroughSingularity("a single segment cannot join two critical points; add a waypoint")

    first_regular = pts[1] if start_crit is not None else pts[0]
    q0 = qd.q(first_regular)
    if initial_branch is None:
        s = cmath.sqrt(q0)
    else:
        s = complex(initial_branch)
        if abs(s * s - q0) > 1e-9 * max(abs(q0), 1e-300):
            raise ValueError("initial_branch does not square to q at the first regular waypoint")

    nseg = len(pts) - 1
    seg_tol = abs_tol / max(nseg, 1)
    total = 0.0 + 0.0j
    total_err = 0.0

    for i in range(nseg):
        z0, z1 = pts[i], pts[i + 1]
        sing_start = (i == 0 and start_crit is not None)
        sing_end = (i == nseg - 1 and end_crit is not None)
        if not sing_start and not sing_end:
            table = _BranchTable(qd, z0, z1, s)
            val, err = _adaptive_gk(lambda t, tb=table, dz=(z1 - z0): tb.sqrt_q(t) * dz,
                                    0.0, 1.0, seg_tol)
            _t, s = table.end()
        else:
            # substitution u^2 = distance fraction from the critical endpoint;
            # the table runs from the regular end toward the singular one and
            # the integrand  sqrt(q(z(u))) * 2u * (z1 - z0)  is analytic at u=0
            # for simple zeros (sqrt q ~ u) and for the pole (sqrt q ~ 1/u).
            # The table stops where z - z_sing still carries ~8 accurate bits;
            # beyond that the phase is frozen at the last sample.
            z_reg, z_sing = (z1, z0) if sing_start else (z0, z1)
            noise = 256.0 * 2.3e-16 * max(1.0, abs(z_sing), abs(z_reg)) / abs(z_reg - z_sing)
            table = _BranchTable(qd, z_reg, z_sing, s, t1=1.0 - max(1e-13, noise))

            def f(u, tb=table, dz=(z1 - z0)):
                return tb.sqrt_q(1.0 - u * u) * dz * 2.0 * u

            val, err = _adaptive_gk(f, 0.0, 1.0, seg_tol)
            # continuation resumes at the regular end of this segment
            s = complex(table.ss[0])
        total += val
        total_err += err

    return PeriodResult(total, total_err)
