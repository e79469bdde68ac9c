"""Deformed fields nu_k = h_k* nu_0, their flows, and C^r norm estimation.

Norms here are sampled lower estimates under an explicit grid policy, stable
under refinement, never claimed to be rigorous upper bounds: the stage's
feature region (the fundamental interval and its marked tiles) is sampled at
32+ points per feature scale seeded with the profile's exact critical points,
plateaus elsewhere get a sparse sweep, and transitions a thin one.  Every
estimate records its grid and stability status.

Flow composites are evaluated through the pullback identity

    nu_k o f_k^t = (nu_0 * D(h_k^{-1})) o (f0^t o h_k),

which needs one h_k-jet per grid point (cached across the t-loop) and one
h_k^{-1}-jet per (t, x) pair.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import gmpy2
from gmpy2 import mpfr

from .basefield import BaseField
from .bumps import profile_critical_points
from .calculus import Jet, current_precision, jet_compose, real, real_pow2, to_hex
from .conjugate import Conjugator, ConjugatorStack, _identity
from .errors import ContractViolation
from .flow import OrbitTable, TravelTimeChart

__all__ = ["GridPolicy", "NormEstimate", "Tower"]


@dataclass(frozen=True)
class GridPolicy:
    """Sampling densities for the sup-norm grids (see module docstring)."""

    feature_points: int = 32          # per feature scale (v_k/q_k)/20 on S_k
    plateau_points: int = 4           # per plateau in the sparse sweep
    transition_points: int = 6        # per transition (thin t-subset only)
    gap_points: int = 8               # on the N_k half of the fundamental tile
    spot_tiles: tuple = (1, 2, 3, 5, 8, 13, 21, 34)
    spot_points: int = 9              # per spot tile
    shallow_spot_points: int = 9      # on the tile holding a_{i(k)}
    coarse_t_steps: int = 8           # t = 0, 1/8, ..., 1
    special_t_cap: int = 64           # p/q_k for p <= min(q_k, cap)
    refine_rounds: int = 3
    stability_rel_bits: int = 20

    def light(self) -> "GridPolicy":
        """Reduced densities for quick runs and unit tests."""
        return GridPolicy(feature_points=8, plateau_points=2, transition_points=3,
                          gap_points=4, spot_tiles=(1, 3), spot_points=5,
                          shallow_spot_points=5, coarse_t_steps=4,
                          special_t_cap=8, refine_rounds=2,
                          stability_rel_bits=self.stability_rel_bits)


@dataclass(frozen=True)
class NormEstimate:
    quantity: str
    k: int
    r: int
    value: mpfr
    t: object = None            # time or time-list summary
    grid_points: int = 0
    rounds: int = 1
    status: str = "stable"      # "stable" | "refining-exhausted"
    argmax: object = None       # (x, m) where the sup was attained

    def as_record(self) -> dict:
        return {
            "quantity": self.quantity, "k": self.k, "r": self.r,
            "t": None if self.t is None else str(self.t),
            "value_hex": to_hex(self.value), "value": float(self.value),
            "grid": {"points": self.grid_points, "rounds": self.rounds},
            "status": self.status,
        }


class Tower:
    """Stages 1..K over a fixed base field: conjugators, fields, flows, norms."""

    def __init__(self, field: BaseField, chart: TravelTimeChart, orbit: OrbitTable,
                 policy: GridPolicy | None = None):
        self.field = field
        self.chart = chart
        self.orbit = orbit
        self.stack = ConjugatorStack(chart, orbit)
        self.policy = policy or GridPolicy()
        self._pair_cache: dict = {}   # (k, r, hex(x)) -> (h_{k-1}, h_k) jets
        self._hjet_cache: dict = {}   # (k, r, hex(x)) -> h_k jet

    @property
    def depth(self) -> int:
        return self.stack.depth

    def build_stage(self, k: int) -> Conjugator:
        return self.stack.push_stage(k)

    def stage(self, k: int) -> Conjugator:
        return self.stack.stage(k)

    # -- fields and flows -----------------------------------------------------

    def nu_k_jet(self, k: int, x, order: int) -> Jet:
        """Jet of nu_k = (nu_0 o h_k) / Dh_k at x."""
        x = real(x)
        if k == 0:
            return self.field.jet(x, order)
        hj = self.stack.h_jet(x, order + 1, upto=k)
        nu_at = self.field.jet(hj.value, order)
        comp = jet_compose(nu_at, hj.truncate(order))
        dh = Jet(x, hj.coeffs[1:])
        return comp / dh

    def flow_k(self, k: int, t, x) -> mpfr:
        x = real(x)
        if gmpy2.is_zero(real(t)):
            return x
        if k == 0:
            return self.chart.flow(t, x)
        hx = self.stack.h_eval(x, upto=k)
        z = self.chart.flow(t, hx)
        return self.stack.h_inv_eval(z, upto=k)

    def flow_k_jet(self, k: int, t, x, order: int, h_jet: Jet | None = None) -> Jet:
        x = real(x)
        if gmpy2.is_zero(real(t)):
            return _identity(x, order)
        if k == 0:
            return self.chart.flow_jet(t, x, order)
        hj = h_jet if h_jet is not None else self.stack.h_jet(x, order, upto=k)
        fl = self.chart.flow_jet(t, hj.value, order)
        inner = jet_compose(fl, hj)
        hinv = self.stack.h_inv_jet(inner.value, order, upto=k)
        return jet_compose(hinv, inner)

    def phi_k_eval(self, k: int, t, x) -> mpfr:
        """phi_k^t = g_k^{-1} o f0^t o g_k (single-stage intermediate flow)."""
        g = self.stage(k)
        return g.inverse(self.chart.flow(t, g.eval(x)))

    def field_flow_jet(self, k: int, t, x, r: int, h_jet: Jet | None = None) -> Jet:
        """Jet of nu_k o f_k^t at x via the pullback identity (see module doc)."""
        x = real(x)
        if k == 0:
            fl = self.chart.flow_jet(t, x, r)
            nu_at = self.field.jet(fl.value, r)
            return jet_compose(nu_at, fl)
        hj = h_jet if h_jet is not None else self.stack.h_jet(x, r + 1, upto=k)
        fl = self.chart.flow_jet(t, hj.value, r + 1)
        inner = jet_compose(fl, hj)
        z = inner.value
        hinv = self.stack.h_inv_jet(z, r + 1, upto=k)
        outer = self.field.jet(z, r) * Jet(z, hinv.coeffs[1:])
        return jet_compose(outer, inner.truncate(r))

    def diff_jet(self, k: int, t, x, r: int, pair=None) -> Jet:
        """Jet of f_k^t - f_{k-1}^t at x (shared h_{k-1}-chain when pair given)."""
        x = real(x)
        if k < 1:
            raise ContractViolation("diff_jet needs k >= 1")
        if pair is None:
            pair = self.h_jet_pair(x, r, k)
        h_prev, h_cur = pair
        fk = self.flow_k_jet(k, t, x, r, h_jet=h_cur)
        fprev = self.flow_k_jet(k - 1, t, x, r, h_jet=h_prev) if k > 1 else \
            self.chart.flow_jet(t, x, r)
        return fk - fprev

    def h_jet_pair(self, x, order: int, k: int):
        """(h_{k-1}-jet, h_k-jet) at x with the common chain computed once."""
        h_prev = self.stack.h_jet(x, order, upto=k - 1) if k > 1 else _identity(x, order)
        g = self.stage(k)
        v = h_prev.value
        if v < g.min_support:
            return h_prev, h_prev
        return h_prev, jet_compose(g.jet(v, order), h_prev)

    # -- grids -----------------------------------------------------------------

    def _linspace(self, lo, hi, n, interior=True):
        if n <= 0:
            return []
        if interior:
            return [lo + (hi - lo) * (i + 1) / (n + 1) for i in range(n)]
        return [lo + (hi - lo) * i / (n - 1) for i in range(max(n, 2))]

    def fundamental_grid(self, k: int, mult: int = 1):
        """S_k-aligned fine grid: uniform + exact profile critical points."""
        g = self.stage(k)
        pol = self.policy
        a_j = g.a_j
        step = g.v / g.q
        xs = []
        n_fine = pol.feature_points * 10 * mult  # support spans 10 feature scales
        for i in range(n_fine + 1):
            xi = real(2 * i - n_fine) / (4 * n_fine)  # [-1/4, 1/4]
            xs.append(a_j + step * xi)
        for m in range(min(self.field.kit.r_max, 8) + 1):
            for c in profile_critical_points(self.field.kit, "gamma", m):
                if abs(c) <= real(1) / 4:
                    xs.append(a_j + step * c)
                    xs.append(a_j - step * c)
        xs.extend(a_j + step * xi for xi in
                  self._linspace(real(1) / 4, real(3) / 4, pol.gap_points * mult))
        return xs

    def spot_grid(self, k: int, mult: int = 1):
        """Coarse copies of the fundamental tile at marked deep and shallow tiles."""
        g = self.stage(k)
        pol = self.policy
        a_j = g.a_j
        step = g.v / g.q
        xs = []
        n = pol.spot_points * mult
        for p in pol.spot_tiles:
            if 1 <= p <= g.q - 1:
                base = a_j + p * step
                xs.extend(base + step * xi for xi in
                          self._linspace(real(-1) / 4, real(1) / 4, n))
                xs.append(base + step / 2)  # gap midpoint
        a_i = self.orbit.point(self.orbit.i[k])
        sh_step = g.u / g.q
        n = pol.shallow_spot_points * mult
        xs.extend(a_i + sh_step * xi for xi in self._linspace(real(-1) / 4, real(1) / 4, n))
        xs.append(a_i)
        return xs

    def sweep_grid(self, mult: int = 1, transitions: bool = False):
        """Sparse global sweep: plateau_points per plateau; transitions optional."""
        pol = self.policy
        fast, slow = [], []
        for seg in self.field.segments():
            if seg.hi == mpfr("inf"):
                fast.extend(self._linspace(seg.lo, seg.lo + 1, pol.plateau_points * mult))
                continue
            if seg.kind == "plateau":
                fast.extend(self._linspace(seg.lo, seg.hi, pol.plateau_points * mult))
            elif transitions:
                slow.extend(self._linspace(seg.lo, seg.hi, pol.transition_points))
        return fast, slow

    def stage_grid(self, k: int, mult: int = 1):
        """(fast points, slow transition points) for stage-k norm estimation."""
        if k == 0:
            fast, slow = self.sweep_grid(mult=2 * mult, transitions=True)
            return fast, slow
        fast, slow = self.sweep_grid(mult=mult, transitions=True)
        return self.fundamental_grid(k, mult) + self.spot_grid(k, mult) + fast, slow

    # -- norm estimation ---------------------------------------------------------

    def special_times(self, k: int):
        q = self.stage(k).q if k >= 1 else 1
        pol = self.policy
        ts = [real(i) / pol.coarse_t_steps for i in range(pol.coarse_t_steps + 1)]
        if k >= 1:
            ts.extend(real(p) / q for p in range(1, min(q, pol.special_t_cap) + 1))
        seen = set()
        out = []
        for t in ts:
            key = to_hex(t)
            if key not in seen:
                seen.add(key)
                out.append(t)
        return out

    def _cached_pair(self, k: int, r: int, x):
        key = (k, r, to_hex(x))
        pair = self._pair_cache.get(key)
        if pair is None:
            pair = self.h_jet_pair(x, r, k)
            self._pair_cache[key] = pair
        return pair

    def _cached_hjet(self, k: int, r: int, x):
        if k == 0:
            return None
        key = (k, r, to_hex(x))
        hj = self._hjet_cache.get(key)
        if hj is None:
            hj = self.stack.h_jet(x, r, upto=k)
            self._hjet_cache[key] = hj
        return hj

    def _sup_over_grid(self, jet_at, r: int, xs):
        best = mpfr(0)
        arg = None
        for x in xs:
            j = jet_at(x)
            for m in range(r + 1):
                v = abs(j.coeffs[m])
                if v > best:
                    best = v
                    arg = (x, m)
        return best, arg

    @staticmethod
    def _neighbor_gap(xs_sorted, x):
        import bisect as _b
        i = _b.bisect_left(xs_sorted, x)
        lo = xs_sorted[i - 1] if i > 0 else None
        hi = xs_sorted[i + 1] if i + 1 < len(xs_sorted) else None
        gaps = [abs(x - v) for v in (lo, hi) if v is not None]
        return max(gaps) if gaps else abs(x) * real_pow2(-20)

    def _polish_max(self, value_at, x0, delta, iters: int = 48):
        """Golden-section maximisation of value_at over [x0-delta, x0+delta]."""
        inv_phi = (gmpy2.sqrt(mpfr(5)) - 1) / 2
        a = x0 - delta
        b = x0 + delta
        c = b - inv_phi * (b - a)
        d = a + inv_phi * (b - a)
        fc = value_at(c)
        fd = value_at(d)
        for _ in range(iters):
            if fc > fd:
                b, d, fd = d, c, fc
                c = b - inv_phi * (b - a)
                fc = value_at(c)
            else:
                a, c, fc = c, d, fd
                d = a + inv_phi * (b - a)
                fd = value_at(d)
        return max(fc, fd)

    def norm_diff_maps(self, k: int, t, r: int, refine: bool = True,
                       transitions: bool | None = None) -> NormEstimate:
        """Sup-grid estimate of ||f_k^t - f_{k-1}^t||_r.

        Transition sweep points are orders of magnitude below the stage
        features for k >= 1 and cost real flow inversions, so by default they
        are only visited for k = 0 or on explicit request.
        """
        pol = self.policy
        t = real(t)
        if transitions is None:
            transitions = k == 0

        def jet_at(x):
            return self.diff_jet(k, t, x, r, pair=self._cached_pair(k, r, x))

        def measure(mult, with_slow):
            fast, slow = self.stage_grid(k, mult)
            xs = fast + (slow if with_slow else [])
            return self._sup_over_grid(jet_at, r, xs), xs

        (best, arg), xs1 = measure(1, transitions)
        rounds = 1
        status = "stable"
        if refine:
            tol = real_pow2(-pol.stability_rel_bits)
            for round_ in range(2, pol.refine_rounds + 1):
                (best2, arg2), _ = measure(2 ** (round_ - 1), False)
                rounds = round_
                new = max(best, best2)
                if abs(best2 - best) <= tol * max(new, real_pow2(-current_precision())):
                    best = new
                    break
                if best2 > best:
                    best, arg = best2, arg2
            else:
                status = "refining-exhausted"
            if arg is not None:
                x0, m0 = arg
                gap = self._neighbor_gap(sorted(xs1), x0)
                polished = self._polish_max(
                    lambda x: abs(jet_at(x).coeffs[m0]), x0, gap)
                if polished > best:
                    best = polished
                    status = "stable"
        return NormEstimate("diff_maps", k, r, best, t=t, grid_points=len(xs1),
                            rounds=rounds, status=status, argmax=arg)

    def norm_field_flow(self, k: int, r: int, ts=None) -> NormEstimate:
        """max over sampled t of the sup-grid norm ||nu_k o f_k^t||_r."""
        pol = self.policy
        if ts is None:
            ts = self.special_times(max(k, 1)) if k >= 1 else \
                [real(i) / pol.coarse_t_steps for i in range(pol.coarse_t_steps + 1)]
        fast, slow = self.stage_grid(k, 1)
        thin = {to_hex(ts[1 if len(ts) > 1 else 0]), to_hex(ts[-1])}
        best = mpfr(0)
        best_t = None
        arg = None
        arg_fast = True
        for t in ts:
            use_slow = to_hex(t) in thin
            for x in fast + (slow if use_slow else []):
                hj = self._cached_hjet(k, r + 1, x)
                j = self.field_flow_jet(k, t, x, r, h_jet=hj)
                for m in range(r + 1):
                    v = abs(j.coeffs[m])
                    if v > best:
                        best, best_t, arg = v, t, (x, m)
                        arg_fast = to_hex(x) not in {to_hex(s) for s in slow}
        status = "stable"
        rounds = 1
        if best_t is not None and pol.refine_rounds >= 2:
            fast2, _ = self.stage_grid(k, 2)
            best2 = mpfr(0)
            for x in fast2:
                hj = self._cached_hjet(k, r + 1, x)
                j = self.field_flow_jet(k, best_t, x, r, h_jet=hj)
                for m in range(r + 1):
                    best2 = max(best2, abs(j.coeffs[m]))
            rounds = 2
            tol = real_pow2(-pol.stability_rel_bits)
            if abs(best2 - best) > tol * max(best, best2):
                status = "refining-exhausted"
            best = max(best, best2)
        if arg is not None:
            x0, m0 = arg
            pool = sorted(fast + slow)
            gap = self._neighbor_gap(pool, x0)
            polished = self._polish_max(
                lambda x: abs(self.field_flow_jet(k, best_t, x, r).coeffs[m0]),
                x0, gap, iters=48 if arg_fast else 24)
            if polished >= best:
                best = polished
                status = "stable"
        return NormEstimate("field_flow", k, r, best, t=best_t,
                            grid_points=len(fast) + len(slow), rounds=rounds,
                            status=status, argmax=arg)
