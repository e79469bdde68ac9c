"""Stagewise conjugating diffeomorphisms g_k and their compositions h_k.

Each g_k is determined by three rules: identity below its fundamental
interval J_k, id + gamma_k on J_k, and commutation with f0^{1/q_k} elsewhere,
which pins it on every tile f0^{-p/q_k}(J_k).  Tiles are located through the
travel time: with tau = T(x), the tile index is p = floor(q * (j_k + 1/(4q)
- tau)).  On a tile whose base point sits strictly inside a plateau of speed
c the conjugating flow map is exactly affine with slope v_k/c, so

    g_k(x)     = x + (c/v_k) gamma_k(z),        z = f0^{p/q}(x) in J_k,
    D^m g_k(x) = delta_{m,1} + (v_k/c)^{m-1} D^m gamma_k(z)   (m >= 1),

with no quadrature at all; the deep tiles (c = v_k) reduce to the paper's
translation shortcut.  Only transition points take the generic route through
flow-map jets.  This affine amplification (v_k/u_k)^{m-1} on the shallow
tiles is precisely where g_k grows in C^2; nothing here shortcuts that
growth away, the evaluation is exact either way.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import gmpy2
from gmpy2 import mpfr

from .basefield import BaseField
from .bumps import BumpKit
from .calculus import Jet, current_precision, jet_compose, jet_invert, real, real_pow2
from .errors import ContractViolation, GeometryError
from .flow import MarkedIntervals, OrbitTable, TravelTimeChart, marked_intervals

__all__ = ["Conjugator", "ConjugatorStack", "TileRef"]


@dataclass(frozen=True)
class TileRef:
    """Resolved tile of a point: index p, conjugated base z = f0^{p/q}(x) in J_k."""

    p: int
    z: mpfr
    mode: str      # "id" | "affine" | "generic"
    speed: mpfr    # plateau speed at x (affine mode)


class Conjugator:
    """One stage's diffeomorphism g_k with exact tile evaluation."""

    def __init__(self, k: int, chart: TravelTimeChart, orbit: OrbitTable,
                 intervals: MarkedIntervals):
        field = chart.field
        self.k = k
        self.chart = chart
        self.field = field
        self.kit: BumpKit = field.kit
        self.q = field.coeffs.q(k)
        self.v = field.coeffs.v_at(k)
        self.u = field.coeffs.u_at(k)
        self.j_index = orbit.j[k]
        self.a_j = orbit.point(self.j_index)
        self.intervals = intervals
        self.min_support = intervals.J[0]  # a_j - v/(4q)
        self._qv = mpfr(self.q) / self.v

    # -- scaled profile ------------------------------------------------------

    def gamma_jet(self, x, order: int) -> Jet:
        """Jet of gamma_k = u_k gamma((q/v)(x - a_j)); exact zeros off S_k."""
        x = real(x)
        arg = self._qv * (x - self.a_j)
        g = self.kit.gamma.jet(arg, order)
        coeffs = []
        p = self.u
        for m in range(order + 1):
            coeffs.append(g.coeffs[m] * p)
            p *= self._qv
        return Jet(x, tuple(coeffs))

    # -- tiles ----------------------------------------------------------------

    def tile_of(self, x) -> TileRef:
        x = real(x)
        if x < self.min_support:
            return TileRef(-1, x, "id", mpfr(0))
        tau = self.chart.time(x)
        s = self.q * (self.j_index + real(1) / (4 * self.q) - tau)
        p = int(gmpy2.floor(s))
        if p < 0:  # roundoff at the support edge
            return TileRef(-1, x, "id", mpfr(0))
        pl = self.field.plateau_at(x)
        if pl is not None and pl.lo < x < pl.hi:
            z = self.a_j - self.v * (tau + real(p) / self.q - self.j_index)
            return TileRef(p, z, "affine", -pl.value)
        z = self.chart.point_at(tau + real(p) / self.q)
        return TileRef(p, z, "generic", -self.field.value(x))

    def _check_tile_image(self, ref: TileRef):
        lo, hi = self.intervals.J
        slack = (hi - lo) * real_pow2(-(current_precision() // 2))
        if not (lo - slack <= ref.z <= hi + slack):
            raise GeometryError(
                f"tile image {ref.z} escaped J_{self.k} (tile {ref.p})")

    # -- evaluation -----------------------------------------------------------

    def __call__(self, x) -> mpfr:
        return self.eval(x)

    def eval(self, x) -> mpfr:
        ref = self.tile_of(x)
        if ref.mode == "id":
            return real(x)
        self._check_tile_image(ref)
        gz = self.gamma_jet(ref.z, 0).value
        if gmpy2.is_zero(gz):
            return real(x)  # N_k gap component, or the flat half of the tile
        if ref.mode == "affine":
            return real(x) + (ref.speed / self.v) * gz
        zp = ref.z + gz
        return self.chart.point_at(self.chart.time(zp) - real(ref.p) / self.q)

    def jet(self, x, order: int) -> Jet:
        x = real(x)
        ref = self.tile_of(x)
        if ref.mode == "id":
            return _identity(x, order)
        self._check_tile_image(ref)
        gj = self.gamma_jet(ref.z, order)
        if ref.mode == "affine":
            # g = A^{-1} o (id + gamma_k) o A with A affine of slope lam:
            # D g = 1 + Dgamma_k(z); D^m g = lam^{m-1} D^m gamma_k(z), m >= 2
            lam = self.v / ref.speed
            coeffs = [x + gj.coeffs[0] / lam]
            p = mpfr(1)
            for m in range(1, order + 1):
                c = gj.coeffs[m] * p
                if m == 1:
                    c += 1
                coeffs.append(c)
                p *= lam
            return Jet(x, tuple(coeffs))
        # generic conjugation through flow-map jets
        A = self.chart.conjugacy_jet(x, ref.z, order)
        perturbed = _identity(ref.z, order) + gj
        zp = perturbed.value
        xp = self.chart.point_at(self.chart.time(zp) - real(ref.p) / self.q)
        C = self.chart.conjugacy_jet(zp, xp, order)
        return jet_compose(C, jet_compose(perturbed, A))

    def inverse(self, y) -> mpfr:
        """x with g_k(x) = y; tiles are stable under g_k, so solve in J_k."""
        y = real(y)
        ref = self.tile_of(y)
        if ref.mode == "id":
            return y
        self._check_tile_image(ref)
        w = ref.z  # = f0^{p/q}(y); solve w0 + gamma_k(w0) = w
        w0 = w - self.gamma_jet(w, 0).value
        bits = current_precision()
        for _ in range(bits.bit_length() + 8):
            g0 = self.gamma_jet(w0, 1)
            resid = w0 + g0.coeffs[0] - w
            if gmpy2.is_zero(resid):
                break
            w0 = w0 - resid / (1 + g0.coeffs[1])
            if abs(resid) <= abs(w) * real_pow2(-bits + 4):
                break
        if ref.mode == "affine":
            return y - (ref.speed / self.v) * (w - w0)
        return self.chart.point_at(self.chart.time(w0) - real(ref.p) / self.q)

    def inverse_jet(self, y, order: int) -> Jet:
        x = self.inverse(y)
        inv = jet_invert(self.jet(x, order))
        # re-anchor at the requested y (the inversion lands at g(x) ~ y to ulps)
        return Jet(real(y), (x,) + inv.coeffs[1:])

    def glue_gap(self, x) -> bool:
        """True when x lies in an N_k-gap translate (gamma_k vanishes on its tile)."""
        ref = self.tile_of(x)
        if ref.mode == "id":
            return True
        s_lo, s_hi = self.intervals.S
        return not (s_lo < ref.z < s_hi)


def _identity(x, order):
    coeffs = [real(x)] + [mpfr(0)] * order
    if order >= 1:
        coeffs[1] = mpfr(1)
    return Jet(real(x), tuple(coeffs))


class ConjugatorStack:
    """h_k = g_k o ... o g_1 with jets, inverses, and marked-point memoisation."""

    def __init__(self, chart: TravelTimeChart, orbit: OrbitTable):
        self.chart = chart
        self.orbit = orbit
        self.stages: list[Conjugator] = []
        self._memo: dict = {}

    @property
    def depth(self) -> int:
        return len(self.stages)

    def push_stage(self, k: int) -> Conjugator:
        if k != self.depth + 1:
            raise ContractViolation(f"stages must be pushed in order; got {k}")
        mi = marked_intervals(k, self.orbit, self.chart.field.coeffs)
        g = Conjugator(k, self.chart, self.orbit, mi)
        self.stages.append(g)
        return g

    def stage(self, k: int) -> Conjugator:
        return self.stages[k - 1]

    # -- forward --------------------------------------------------------------

    def h_eval(self, x, upto: int | None = None) -> mpfr:
        v = real(x)
        for g in self.stages[: self._upto(upto)]:
            if v < g.min_support:
                continue
            v = g.eval(v)
        return v

    def h_jet(self, x, order: int, upto: int | None = None, memo_key=None) -> Jet:
        upto = self._upto(upto)
        if memo_key is not None:
            cached = self._memo.get((memo_key, order, upto))
            if cached is not None:
                return cached
        acc = None
        v = real(x)
        for g in self.stages[:upto]:
            if v < g.min_support:
                continue
            jl = g.jet(v, order)
            acc = jl if acc is None else jet_compose(jl, acc)
            v = jl.value
        if acc is None:
            acc = _identity(x, order)
        if memo_key is not None:
            self._memo[(memo_key, order, upto)] = acc
        return acc

    # -- inverse ---------------------------------------------------------------

    def h_inv_eval(self, y, upto: int | None = None) -> mpfr:
        v = real(y)
        for g in reversed(self.stages[: self._upto(upto)]):
            if v < g.min_support:
                continue
            v = g.inverse(v)
        return v

    def h_inv_jet(self, y, order: int, upto: int | None = None) -> Jet:
        acc = None
        v = real(y)
        for g in reversed(self.stages[: self._upto(upto)]):
            if v < g.min_support:
                continue
            jl = g.inverse_jet(v, order)
            acc = jl if acc is None else jet_compose(jl, acc)
            v = jl.value
        if acc is None:
            acc = _identity(y, order)
        return acc

    def _upto(self, upto) -> int:
        if upto is None:
            return self.depth
        if not 0 <= upto <= self.depth:
            raise ContractViolation(f"stage {upto} not built (depth {self.depth})")
        return upto


# -- spec-named functional surface ------------------------------------------

def gamma_k_jet(stack: ConjugatorStack, k: int, x, order: int) -> Jet:
    return stack.stage(k).gamma_jet(x, order)


def g_eval(stack: ConjugatorStack, k: int, x) -> mpfr:
    return stack.stage(k).eval(x)


def g_jet(stack: ConjugatorStack, k: int, x, order: int) -> Jet:
    return stack.stage(k).jet(x, order)


def g_inverse(stack: ConjugatorStack, k: int, y) -> mpfr:
    return stack.stage(k).inverse(y)


def h_jet(stack: ConjugatorStack, k: int, x, order: int) -> Jet:
    return stack.h_jet(x, order, upto=k)
