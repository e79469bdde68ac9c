"""Flow of the initial field via travel-time inversion; marked orbits and intervals.

Travel time T(x) = time for the flow to go from 1 down to x (T increasing as
x decreases, T(1) = 0, T(f0^t(x)) = T(x) + t).  On plateaus T is affine with
slope -1/speed, so flow queries there are exact translations.  Transition
segments are integrated once by adaptive Gauss-Legendre into a cached leaf
table supporting prefix queries; their numerically-flat ends (the profiles
are infinitely flat at plateau junctions) are carved off and treated as exact
constant-speed pieces, which keeps leaf counts small at high precision.

Two access patterns with different conditioning are kept apart on purpose:

* orbit anchoring uses the global cumulative T (the marked indices i(n), j(n)
  are ceilings of T at plateau edges; the precision policy guarantees those
  huge integers are exactly resolvable for every band a stage touches);
* local flow queries (|t| <= 2) never touch the global T.  They walk the
  piece decomposition with piece-local times, so the result keeps full
  absolute accuracy even in bands whose total crossing time overflows the
  mantissa.  The marked orbit a_l = f0^l(1) is never stepped: a_l = T^{-1}(l)
  directly, which is what makes indices like j(3) ~ 10^100 tractable.
"""

from __future__ import annotations

import bisect
from dataclasses import dataclass, field as dc_field

import gmpy2
from gmpy2 import mpfr

from .basefield import BaseField, CoeffTable
from .calculus import (
    Jet,
    bracketed_root,
    current_precision,
    gauss_legendre_nodes,
    jet_compose,
    real,
    real_pow2,
)
from .errors import (
    ContractViolation,
    DomainTruncationError,
    GeometryError,
    QuadratureBudgetError,
)

__all__ = [
    "TravelTimeChart", "OrbitTable", "MarkedIntervals", "NkFamily",
    "orbit_points", "marked_intervals",
]

_FLOW_T_LIMIT = 2  # public flow queries are local; the construction never needs more


class _Transition:
    """Cached integral structure for one transition segment [lo, hi].

    The ends [lo, carve_lo] and [carve_hi, hi] are numerically constant at
    the adjacent plateau speeds; the middle carries the Gauss-Legendre leaf
    table (ascending, with suffix sums for prefix queries).
    """

    __slots__ = ("lo", "hi", "c_lo", "c_hi", "carve_lo", "carve_hi",
                 "leaves", "leaf_los", "suffix", "middle_total", "total")

    def __init__(self, lo, hi, c_lo, c_hi, carve_lo, carve_hi, leaves):
        self.lo = lo
        self.hi = hi
        self.c_lo = c_lo
        self.c_hi = c_hi
        self.carve_lo = carve_lo
        self.carve_hi = carve_hi
        self.leaves = leaves
        self.leaf_los = [l[0] for l in leaves]
        suffix = [mpfr(0)] * (len(leaves) + 1)
        for i in range(len(leaves) - 1, -1, -1):
            suffix[i] = suffix[i + 1] + leaves[i][2]
        self.suffix = suffix
        self.middle_total = suffix[0]
        self.total = (hi - carve_hi) / c_hi + suffix[0] + (carve_lo - lo) / c_lo


class TravelTimeChart:
    """Travel times, flow maps and flow jets of the initial field."""

    def __init__(self, field: BaseField, quad_order: int | None = None):
        self.field = field
        segs = [s for s in field.segments() if s.kind != "tail"]
        segs.sort(key=lambda s: s.lo, reverse=True)  # from 1/2 downward
        self._segs = segs
        self._neg_lo = [-s.lo for s in segs]         # ascending keys for bisect
        self._T_hi: list = [None] * len(segs)        # cumulative T at seg.hi
        self._T_lo: list = [None] * len(segs)
        self._transitions: dict[int, _Transition] = {}
        self._u1 = field.coeffs.u_at(1)

    # -- internal machinery --------------------------------------------------

    def _quad_order(self) -> int:
        return max(32, min(256, current_precision() // 8))

    def _speed(self, x) -> mpfr:
        return -self.field.value(x)

    def _segment_index(self, x) -> int:
        # leftmost segment (from the top) whose lo <= x; shared endpoints
        # resolve to the upper segment
        i = bisect.bisect_left(self._neg_lo, -x)
        return min(i, len(self._segs) - 1)

    def _ensure_prefix(self, idx: int):
        """Cumulative T at segment boundaries, built top-down only as needed."""
        if self._T_hi[idx] is not None:
            return
        t = mpfr(1) / (2 * self._u1)  # T(1/2) from the tail formula
        for i, seg in enumerate(self._segs[: idx + 1]):
            if self._T_hi[i] is None:
                self._T_hi[i] = t
                if seg.kind == "plateau":
                    dt = (seg.hi - seg.lo) / (-seg.value)
                else:
                    dt = self._transition(i).total
                self._T_lo[i] = t + dt
            t = self._T_lo[i]

    def _transition(self, idx: int) -> _Transition:
        tr = self._transitions.get(idx)
        if tr is None:
            seg = self._segs[idx]
            tr = self._build_transition(seg.lo, seg.hi)
            self._transitions[idx] = tr
        return tr

    def _gl_quad(self, f, a, b) -> mpfr:
        nodes, weights = gauss_legendre_nodes(self._quad_order())
        c = (a + b) / 2
        h = (b - a) / 2
        s = mpfr(0)
        for xn, wn in zip(nodes, weights):
            s += wn * f(c + h * xn)
        return s * h

    def _build_transition(self, lo, hi) -> _Transition:
        bits = current_precision()
        c_lo = self._speed(lo)
        c_hi = self._speed(hi)
        thresh = real_pow2(-(bits - 8))
        carve_lo = self._carve(lo, hi, c_lo, thresh, from_lo=True)
        carve_hi = self._carve(lo, hi, c_hi, thresh, from_lo=False)
        if not carve_lo <= carve_hi:
            raise GeometryError("transition carve zones overlap; field is near-constant")
        g = lambda x: 1 / self._speed(x)
        target = real_pow2(-(bits // 2) - 4)
        rel_floor = real_pow2(-(bits - 24))
        width = carve_hi - carve_lo
        leaves = []
        budget = 65536
        stack = [(carve_lo, carve_hi, self._gl_quad(g, carve_lo, carve_hi))]
        while stack:
            a, b, coarse = stack.pop()
            mid = (a + b) / 2
            left = self._gl_quad(g, a, mid)
            right = self._gl_quad(g, mid, b)
            err = abs(left + right - coarse)
            done = (err <= target * ((b - a) / width)
                    or err <= (abs(left) + abs(right)) * rel_floor
                    or (b - a) <= width * real_pow2(-bits + 16))
            if done:
                leaves.append((a, mid, left))
                leaves.append((mid, b, right))
            else:
                stack.append((a, mid, left))
                stack.append((mid, b, right))
            if len(leaves) + 2 * len(stack) > budget:
                raise QuadratureBudgetError("transition leaf budget exhausted")
        leaves.sort(key=lambda t: t[0])
        return _Transition(lo, hi, c_lo, c_hi, carve_lo, carve_hi, leaves)

    def _carve(self, lo, hi, c_flat, rel_thresh, *, from_lo: bool):
        """Largest flat zone from one end where the speed equals the plateau value."""
        is_flat = lambda x: abs(self._speed(x) - c_flat) <= c_flat * rel_thresh
        a, b = (lo, hi) if from_lo else (hi, lo)
        if not is_flat(a):
            return a
        if is_flat(b):
            return b
        for _ in range(current_precision() + 16):
            mid = (a + b) / 2
            if is_flat(mid):
                a = mid
            else:
                b = mid
            if abs(b - a) <= abs(hi - lo) * real_pow2(-current_precision()):
                break
        return a

    def _prefix(self, idx: int, x) -> mpfr:
        """Integral of 1/speed over [x, seg.hi] (global-T support)."""
        tr = self._transition(idx)
        if x >= tr.carve_hi:
            return (tr.hi - x) / tr.c_hi
        head = (tr.hi - tr.carve_hi) / tr.c_hi
        if x <= tr.carve_lo:
            return head + tr.middle_total + (tr.carve_lo - x) / tr.c_lo
        i = max(bisect.bisect_right(tr.leaf_los, x) - 1, 0)
        a, b, _ = tr.leaves[i]
        part = self._gl_quad(lambda y: 1 / self._speed(y), x, b)
        return head + tr.suffix[i + 1] + part

    # -- global time surface (orbit anchoring, tile indexing) ----------------

    def time(self, x) -> mpfr:
        """T(x): travel time from 1 to x (negative above 1)."""
        x = self.field.check_domain(real(x))
        if gmpy2.is_zero(x):
            raise ContractViolation("travel time to the fixed point is infinite")
        if x >= real_pow2(-1):
            return (1 - x) / self._u1
        idx = self._segment_index(x)
        self._ensure_prefix(idx)
        seg = self._segs[idx]
        if seg.kind == "plateau":
            return self._T_hi[idx] + (seg.hi - x) / (-seg.value)
        return self._T_hi[idx] + self._prefix(idx, x)

    def point_at(self, target) -> mpfr:
        """T^{-1}(target); raises DomainTruncationError below the represented depth."""
        target = real(target)
        self._ensure_prefix(0)
        if target <= self._T_hi[0]:
            return 1 - self._u1 * target
        idx = 0
        while True:
            self._ensure_prefix(idx)
            if self._T_lo[idx] >= target:
                break
            idx += 1
            if idx >= len(self._segs):
                raise DomainTruncationError(f"time {target} is below the truncation depth")
        seg = self._segs[idx]
        t_hi = self._T_hi[idx]
        if seg.kind == "plateau":
            return seg.hi - (target - t_hi) * (-seg.value)
        tr = self._transition(idx)
        head = (tr.hi - tr.carve_hi) / tr.c_hi
        if target <= t_hi + head:
            return tr.hi - (target - t_hi) * tr.c_hi
        tail_start = self._T_lo[idx] - (tr.carve_lo - tr.lo) / tr.c_lo
        if target >= tail_start:
            return tr.carve_lo - (target - tail_start) * tr.c_lo
        f = lambda x: self.time(x) - target
        df = lambda x: -1 / self._speed(x)
        return bracketed_root(f, tr.carve_lo, tr.carve_hi,
                              real_pow2(-4 * current_precision()), df=df)

    # -- local flow (piece walker; no global-T cancellation) -----------------

    def _pieces(self, idx: int):
        """Descending sub-pieces of segment idx: (lo, hi, speed | None-for-middle)."""
        seg = self._segs[idx]
        if seg.kind == "plateau":
            return [(seg.lo, seg.hi, -seg.value)]
        tr = self._transition(idx)
        return [(tr.carve_hi, tr.hi, tr.c_hi),
                (tr.carve_lo, tr.carve_hi, None),
                (tr.lo, tr.carve_lo, tr.c_lo)]

    def _middle_time(self, idx: int, a, b) -> mpfr:
        """Time from b down to a inside the middle of transition idx (a <= b), locally.

        Computed as a fresh adaptive integral of the positive integrand, so
        the error is relative to the local time itself; this is what keeps
        walker flows fully accurate where the global T overflows the mantissa.
        The target matches the 2^-(bits/2) flow accuracy contract.
        """
        if a == b:
            return mpfr(0)
        rough = (b - a) / self._speed((a + b) / 2)
        target = rough * real_pow2(-(current_precision() // 2) - 24)
        from .calculus import adaptive_quadrature
        res = adaptive_quadrature(lambda y: 1 / self._speed(y), a, b, target,
                                  order=self._quad_order(), max_panels=16384)
        return res.value

    def _middle_newton(self, idx: int, x, t, *, down: bool) -> mpfr:
        """Solve for the flow endpoint inside a transition middle.

        Newton on G(z) = time(z <-> x) - t with dG/dz = -+1/speed(z); after the
        first adaptive integral, each iterate updates G incrementally with a
        single Gauss panel over the (rapidly shrinking) step interval.
        """
        tr = self._transition(idx)
        bound = tr.carve_lo if down else tr.carve_hi
        sgn = -1 if down else 1
        bits = current_precision()
        z = x + sgn * t * self._speed(x)
        z = max(z, bound) if down else min(z, bound)
        lo, hi = (z, x) if down else (x, z)
        G = self._middle_time(idx, lo, hi)  # current time between z and x
        g = lambda y: 1 / self._speed(y)
        tol = t * real_pow2(-(bits // 2) - 16)
        for _ in range(bits):
            resid = G - t
            if abs(resid) <= tol:
                return z
            # down: dG/dz = -1/c => z_new = z + resid*c; up: dG/dz = +1/c
            z_new = z - sgn * resid * self._speed(z)
            z_new = max(z_new, bound) if down else min(z_new, bound)
            if z_new == z:
                return z
            a, b = (min(z, z_new), max(z, z_new))
            inc = self._gl_quad(g, a, b)
            # moving away from x increases the travel time
            if (down and z_new < z) or (not down and z_new > z):
                G += inc
            else:
                G -= inc
            if abs(z_new - z) <= abs(x) * real_pow2(-bits + 8):
                return z_new
            z = z_new
        raise GeometryError("transition flow Newton failed to converge")

    def _middle_flow_down(self, idx: int, x, t) -> mpfr:
        """y < x inside the middle with local travel time(y -> x) = t."""
        return self._middle_newton(idx, x, t, down=True)

    def _middle_flow_up(self, idx: int, x, t) -> mpfr:
        """y > x inside the middle with local travel time(x -> y) = t (backwards flow)."""
        return self._middle_newton(idx, x, t, down=False)

    def _middle_cross_time(self, idx: int, a, b, t):
        """Time from b down to a in the middle, or None when it exceeds t.

        (x - lo)/max-speed is a cheap lower bound (speed is monotone on a
        transition, extremes at the carve boundaries); the full adaptive
        integral is only computed when the bound does not already decide,
        which keeps wide huge-dynamic-range integrals out of the walker.
        """
        tr = self._transition(idx)
        cmax = max(tr.c_lo, tr.c_hi)
        if t <= (b - a) / cmax:
            return None
        dt = self._middle_time(idx, a, b)
        return None if t <= dt else dt

    def _walk_down(self, x, t) -> mpfr:
        top = self._segs[0].hi
        if x > top:  # constant tail above 1/2
            dt = (x - top) / self._u1
            if t <= dt:
                return x - t * self._u1
            t -= dt
            x = top
        idx = self._segment_index(x)
        while True:
            for lo, hi, c in self._pieces(idx):
                if not (lo <= x <= hi) or x == lo:
                    continue
                if c is not None:
                    dt = (x - lo) / c
                    if t <= dt:
                        return x - t * c
                    t -= dt
                    x = lo
                else:
                    dt = self._middle_cross_time(idx, lo, x, t)
                    if dt is None:
                        return self._middle_flow_down(idx, x, t)
                    t -= dt
                    x = lo
            idx += 1
            if idx >= len(self._segs):
                raise DomainTruncationError("flow excursion below truncation depth")

    def _walk_up(self, x, t) -> mpfr:
        # t > 0 here, moving toward larger x; above 1/2 the speed is constant u_1
        if x >= self._segs[0].hi:
            return x + t * self._u1
        idx = self._segment_index(x)
        while True:
            for lo, hi, c in reversed(self._pieces(idx)):
                if not (lo <= x <= hi) or x == hi:
                    continue
                if c is not None:
                    dt = (hi - x) / c
                    if t <= dt:
                        return x + t * c
                    t -= dt
                    x = hi
                else:
                    dt = self._middle_cross_time(idx, x, hi, t)
                    if dt is None:
                        return self._middle_flow_up(idx, x, t)
                    t -= dt
                    x = hi
            idx -= 1
            if idx < 0:
                return x + t * self._u1  # constant tail above 1/2

    def flow(self, t, x) -> mpfr:
        """f0^t(x); t > 0 moves toward 0.  Exact translation on plateaus."""
        t = real(t)
        x = self.field.check_domain(real(x))
        if abs(t) > _FLOW_T_LIMIT:
            raise ContractViolation(f"|t|={t} exceeds the local flow range")
        if gmpy2.is_zero(x):
            return mpfr(0)
        if gmpy2.is_zero(t):
            return x
        p = self.field.plateau_at(x)
        if p is not None:
            y = x + t * p.value
            if max(p.lo, self.field.x_min) <= y <= p.hi:
                return y
            if y < self.field.x_min:
                raise DomainTruncationError("flow excursion below truncation depth")
        if x >= real_pow2(-1) and t < 0:
            return x - t * self._u1
        if t > 0:
            return self._walk_down(x, t)
        return self._walk_up(x, -t)

    def conjugacy_jet(self, x, y, order: int) -> Jet:
        """Jet at x of the flow map sending x to y (= f0^s with s = T(y)-T(x)).

        The invariance bootstrap D f0^s = nu o f0^s / nu never references s,
        so this works for arbitrarily long journeys given the two endpoints.
        """
        x = real(x)
        y = real(y)
        if order == 0:
            return Jet(x, (y,))
        px = self.field.plateau_at(x)
        py = self.field.plateau_at(y)
        if (px is not None and py is not None
                and px.lo < x < px.hi and py.lo < y < py.hi):
            d1 = py.value / px.value
            return Jet(x, (y, d1) + (mpfr(0),) * (order - 1))
        nu_x = self.field.jet(x, order)
        nu_y = self.field.jet(y, order)
        coeffs = [y, nu_y.value / nu_x.value]
        for m in range(1, order):
            F = Jet(x, tuple(coeffs[: m + 1]))
            rhs = jet_compose(nu_y.truncate(m), F) / nu_x.truncate(m)
            coeffs.append(rhs.coeffs[m])
        return Jet(x, tuple(coeffs[: order + 1]))

    def flow_jet(self, t, x, order: int) -> Jet:
        """Jet of f0^t at x from the flow invariance Df0^t = nu o f0^t / nu."""
        x = self.field.check_domain(real(x))
        if gmpy2.is_zero(x):
            raise ContractViolation("flow jets need x > 0")
        return self.conjugacy_jet(x, self.flow(t, x), order)


# ---------------------------------------------------------------------------
# marked orbit
# ---------------------------------------------------------------------------

@dataclass
class OrbitTable:
    """Anchored forward orbit a_l = f0^l(1) at the marked indices.

    Only indices the construction touches are materialised; arbitrary indices
    are served through point(), which inverts the travel time.
    """

    chart: TravelTimeChart
    n_max: int
    i: dict = dc_field(default_factory=dict)
    j: dict = dc_field(default_factory=dict)
    a: dict = dc_field(default_factory=dict)

    def point(self, l) -> mpfr:
        v = self.a.get(l)
        if v is None:
            v = self.chart.point_at(real(l))
            self.a[l] = v
        return v

    def speed_at(self, l) -> mpfr:
        return -self.chart.field.value(self.point(l))

    def b_point(self, t, n) -> mpfr:
        """b_n = f0^{-t}(a_n); exact plateau translation when the stretch allows."""
        a_n = self.point(n)
        p = self.chart.field.plateau_at(a_n)
        if p is not None:
            y = a_n - real(t) * p.value
            if p.lo <= y <= p.hi:
                return y
        return self.chart.flow(-real(t), a_n)


def _locate_pair(chart: TravelTimeChart, right_edge, left_edge, what: str):
    """Smallest integer m with a_{m-1} <= right_edge and a_{m+2} >= left_edge."""
    t_right = chart.time(right_edge)
    m = int(gmpy2.ceil(t_right)) + 1
    t_left = chart.time(left_edge)
    if not m + 2 <= t_left:
        raise GeometryError(
            f"{what}: sandwich window too short (m={m}, window end {t_left})")
    if not m - 2 < t_right:  # minimality: m-1 violates the right inequality
        raise GeometryError(f"{what}: minimality check failed")
    return m


def orbit_points(chart: TravelTimeChart, n_max: int) -> OrbitTable:
    """Locate i(n), j(n) for n <= n_max and anchor the nearby orbit points.

    i(n) is the smallest integer with a_{i(n)-1} <= 2^-n + 2^-n-3 and
    a_{i(n)+2} >= 2^-n - 2^-n-4 (shallow-plateau sandwich); j(n) likewise for
    the deep plateau [2^-n-1 + 2^-n-3, 2^-n - 2^-n-3].  The defining
    minimality is re-verified numerically.
    """
    field = chart.field
    if n_max > field.n_bands:
        raise DomainTruncationError(
            f"orbit to band {n_max} exceeds represented bands {field.n_bands}")
    table = OrbitTable(chart, n_max)
    for n in range(1, n_max + 1):
        sh_lo = real_pow2(-n) - real_pow2(-n - 4)
        sh_hi = real_pow2(-n) + real_pow2(-n - 3)
        table.i[n] = _locate_pair(chart, sh_hi, sh_lo, f"i({n})")
        dp_lo = real_pow2(-n - 1) + real_pow2(-n - 3)
        dp_hi = real_pow2(-n) - real_pow2(-n - 3)
        table.j[n] = _locate_pair(chart, dp_hi, dp_lo, f"j({n})")
        for d in range(-2, 3):
            table.point(table.i[n] + d)
            table.point(table.j[n] + d)
        if not (sh_lo <= table.point(table.i[n] + 2) < table.point(table.i[n] - 1) <= sh_hi):
            raise GeometryError(f"i({n}) sandwich failed after materialisation")
        if not (dp_lo <= table.point(table.j[n] + 2) < table.point(table.j[n] - 1) <= dp_hi):
            raise GeometryError(f"j({n}) sandwich failed after materialisation")
    return table


# ---------------------------------------------------------------------------
# marked intervals
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class NkFamily:
    """q_k disjoint gap components: center_p = base + (2p+1) step/2, halfwidth step/4."""

    base: mpfr    # a_{j(k)}
    step: mpfr    # v_k / q_k
    count: int    # q_k

    def center(self, p: int) -> mpfr:
        return self.base + (2 * p + 1) * self.step / 2

    def component(self, p: int):
        c = self.center(p)
        return (c - self.step / 4, c + self.step / 4)

    def contains(self, x) -> bool:
        p = int(gmpy2.floor((x - self.base) / self.step))
        if p < 0 or p >= self.count:
            return False
        lo, hi = self.component(p)
        return lo <= x <= hi


@dataclass(frozen=True)
class MarkedIntervals:
    k: int
    S: tuple
    J: tuple
    M: tuple
    N: NkFamily


def marked_intervals(k: int, table: OrbitTable, coeffs: CoeffTable) -> MarkedIntervals:
    """S_k, J_k, N_k, M_k anchored at a_{j(k)}; asserts the fundamental-interval geometry."""
    if k not in table.j:
        raise ContractViolation(f"orbit table lacks j({k})")
    a_j = table.point(table.j[k])
    v = coeffs.v_at(k)
    q = coeffs.q(k)
    w = v / (4 * q)
    S = (a_j - w, a_j + w)
    J = (a_j - w, a_j + 3 * w)
    M = (a_j - w, a_j + v - w)
    a_jm1 = table.point(table.j[k] - 1)
    a_jp1 = table.point(table.j[k] + 1)
    if not (a_jp1 <= J[0] and J[1] <= a_jm1):
        raise GeometryError(f"J_{k} not inside [a_j+1, a_j-1]")
    if not M[1] < a_jm1:
        raise GeometryError(f"M_{k} exceeds a_j-1")
    return MarkedIntervals(k, S, J, M, NkFamily(a_j, v / q, q))
