"""Quantitative verification harness: every stage-wise estimate as a check.

Each check produces CheckResult records carrying the bound, the measured
value and enough metadata to replay the computation at the same precision.
Tolerances follow a fixed convention: identity-type checks (paper equalities)
use relative 2^-(bits/4); inequality-type checks use the stated constant with
multiplicative slack 1 +- 2^-10.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field as dc_field

import gmpy2
from gmpy2 import mpfr

from .calculus import current_precision, jet_L, real, real_pow2, to_hex
from .errors import ContractViolation
from .liouville import AlphaSpec, ApproxSeq, CantorCover, cover_H, cover_Kprime, pick_H_element
from .stack import Tower

__all__ = ["CheckResult", "VerificationReport", "Verifier", "CHECK_NAMES"]

CHECK_NAMES = ("ik", "lemma1", "blowup", "fixed_point", "alpha_time", "c1", "cantor")


@dataclass(frozen=True)
class CheckResult:
    name: str
    k: int
    params: dict
    bound: mpfr | None
    measured: mpfr | None
    passed: bool
    meta: dict = dc_field(default_factory=dict)

    def as_record(self) -> dict:
        def enc(v):
            return None if v is None else to_hex(v)

        meta = {}
        for key, val in self.meta.items():
            if isinstance(val, mpfr):
                meta[key] = {"hex": to_hex(val), "float": float(val)}
            else:
                meta[key] = val
        return {"name": self.name, "k": self.k, "params": self.params,
                "bound_hex": enc(self.bound),
                "bound": None if self.bound is None else float(self.bound),
                "measured_hex": enc(self.measured),
                "measured": None if self.measured is None else float(self.measured),
                "pass": self.passed, "meta": meta}


@dataclass
class VerificationReport:
    manifest_hash: str
    precision_bits: int
    checks: list = dc_field(default_factory=list)
    timing: dict = dc_field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def as_record(self) -> dict:
        return {"manifest_hash": self.manifest_hash,
                "precision_bits": self.precision_bits,
                "checks": [c.as_record() for c in self.checks],
                "pass": self.passed,
                "timing": self.timing}


_INEQ_SLACK_BITS = 10  # inequality checks allow the paper constant * (1 + 2^-10)


class Verifier:
    """Runs the check families against a built tower + certificate sequence."""

    def __init__(self, tower: Tower, alpha: AlphaSpec, seq: ApproxSeq):
        self.tower = tower
        self.alpha = alpha
        self.seq = seq
        self.field = tower.field
        self.orbit = tower.orbit

    # -- (i_k): stage difference norms ---------------------------------------

    def check_ik(self, k: int) -> CheckResult:
        """max over t in (1/q_k)Z cap [0,1] (p <= 64) of ||f_k^t - f_{k-1}^t||_k."""
        tower = self.tower
        q = tower.stage(k).q
        cap = min(q, tower.policy.special_t_cap)
        bound = real_pow2(-(k + 4))
        best = mpfr(0)
        best_t = None
        zero_ok = None
        for p in range(0, cap + 1):
            t = real(p) / q
            est = tower.norm_diff_maps(k, t, k, refine=False)
            if p == 0:
                zero_ok = est.value <= real_pow2(-(current_precision() // 2))
            if est.value > best:
                best, best_t = est.value, t
        est_one = tower.norm_diff_maps(k, 1, k, refine=False)
        if est_one.value > best:
            best, best_t = est_one.value, real(1)
        refined = tower.norm_diff_maps(k, best_t, k, refine=True, transitions=True)
        best = max(best, refined.value)
        eq = tower.norm_diff_maps(k, real(1) / q, k, refine=True) if best_t != real(1) / q \
            else refined
        eq_ratio = eq.value / bound
        passed = bool(best <= bound * (1 + real_pow2(-_INEQ_SLACK_BITS))
                      and bool(zero_ok)
                      and abs(eq_ratio - 1) <= mpfr("1e-4"))
        return CheckResult(
            "ik", k, {"t_count": cap + 2}, bound, best, passed,
            meta={"argmax_t": real(best_t), "t0_control_zero": bool(zero_ok),
                  "equality_ratio_at_1_over_q": eq_ratio,
                  "grid_status": refined.status})

    # -- Lemma-1-style tangency and L-jumps ------------------------------------

    def _sample_indices(self, k: int, lo_stage: int = 1):
        out = []
        for l in range(lo_stage, k + 1):
            out.extend([self.orbit.j[l], self.orbit.j[l] + 1, self.orbit.i[l],
                        self.orbit.i[l] + 1])
        seen = set()
        uniq = []
        for n in out:
            if n not in seen:
                seen.add(n)
                uniq.append(n)
        return uniq

    def check_lemma_phi(self, k: int, t=None, k0: int | None = None) -> list:
        """Tangency points 1-3 for the stage-k composition.

        Point 1 (infinite tangency at the b_n) needs a time t certified to lie
        in the H_{k0} cover; points 2-3 are time-free.
        """
        tower = self.tower
        bits = current_precision()
        tol = real_pow2(-(bits // 4))
        results = []
        # point 2: C1-tangency along the orbit
        worst = mpfr(0)
        for n in self._sample_indices(k):
            a_n = self.orbit.point(n)
            hj = tower.stack.h_jet(a_n, 2, upto=k, memo_key=("a", n))
            worst = max(worst, abs(hj.value - a_n) / a_n, abs(hj.coeffs[1] - 1))
        results.append(CheckResult(
            "lemma1_pt2", k, {"indices": len(self._sample_indices(k))},
            tol, worst, bool(worst <= tol)))
        # point 3: (Lh_k - Lh_{k-1})(a_n) = u_k q_k^2 / (v_k |nu0(a_n)|)
        co = self.field.coeffs
        worst = mpfr(0)
        for n in (self.orbit.j[k], self.orbit.j[k] - 1, self.orbit.i[k]):
            a_n = self.orbit.point(n)
            lhk = jet_L(tower.stack.h_jet(a_n, 3, upto=k)).value
            lhp = jet_L(tower.stack.h_jet(a_n, 3, upto=k - 1)).value if k > 1 else mpfr(0)
            jump = lhk - lhp
            # factored reference: u_k q_k^2 / v_k = 2^-(k+4) q_k^(2-k) v_k^(k-1) / ||g||_k
            ref = co.u_at(k) * co.q(k) ** 2 / (co.v_at(k) * abs(self.field.value(a_n)))
            worst = max(worst, abs(jump / ref - 1))
        zero_n = self.orbit.j[k] + 1
        a_n = self.orbit.point(zero_n)
        lhk = jet_L(tower.stack.h_jet(a_n, 3, upto=k)).value
        lhp = jet_L(tower.stack.h_jet(a_n, 3, upto=k - 1)).value if k > 1 else mpfr(0)
        zero_jump = abs(lhk - lhp)
        zero_scale = co.u_at(k) * co.q(k) ** 2 / co.v_at(k)
        results.append(CheckResult(
            "lemma1_pt3", k, {"indices": [str(self.orbit.j[k]), str(self.orbit.j[k] - 1),
                                          str(self.orbit.i[k])]},
            tol, worst,
            bool(worst <= tol and zero_jump <= zero_scale * tol),
            meta={"zero_jump_beyond_j": zero_jump}))
        # point 1: infinite tangency at the b_n for certified t
        if t is not None:
            if k0 is None:
                raise ContractViolation("point-1 check needs the certifying level k0")
            cov = cover_H(self.seq, k0, min(k, len(self.seq.entries)))
            if not cov.member(t):
                raise ContractViolation(f"t={t} is not certified in H_{k0}")
            order = min(k + 2, self.field.kit.r_max)
            worst = mpfr(0)
            count = 0
            for n in self._sample_indices(k, lo_stage=k0):
                if n < self.orbit.j[k0]:
                    continue
                b_n = self.orbit.b_point(t, n)
                hj = tower.stack.h_jet(b_n, order, upto=k)
                worst = max(worst, abs(hj.value - b_n) / b_n, abs(hj.coeffs[1] - 1))
                for m in range(2, order + 1):
                    worst = max(worst, abs(hj.coeffs[m]))
                count += 1
            results.append(CheckResult(
                "lemma1_pt1", k, {"t": float(t), "k0": k0, "orders": order,
                                  "points": count},
                tol, worst, bool(worst <= tol)))
        return results

    # -- blow-up of Lf^t at the b_{i(l)} ---------------------------------------

    def check_blowup(self, k: int, t, l_range, k0: int) -> list:
        """Lf_k^t(b_{i(l)}) <= -q_l^2/v_l and matches the truncated sum."""
        tower = self.tower
        cov = cover_H(self.seq, k0, min(k, len(self.seq.entries)))
        if not cov.member(t):
            raise ContractViolation(f"t={t} is not certified in H_{k0}")
        co = self.field.coeffs
        results = []
        prev_val = None
        for l in l_range:
            if not k0 + 1 <= l <= k:
                raise ContractViolation(f"blow-up needs k0+1 <= l <= k, got l={l}")
            b = self.orbit.b_point(t, self.orbit.i[l])
            fj = tower.flow_k_jet(k, t, b, 2)
            Lval = jet_L(fj).value
            truncated = -sum(co.u_at(n) * co.q(n) ** 2 / (co.v_at(n) * co.u_at(l))
                             for n in range(l, k + 1))
            bound = -mpfr(co.q(l)) ** 2 / co.v_at(l)
            match = abs(Lval / truncated - 1)
            # bound is negative; the 1e-6 slack relaxes it toward zero, which
            # absorbs rounding when the truncated sum reduces to -q_l^2/v_l
            passed = bool(Lval <= bound * (1 - mpfr("1e-6")) and match <= real_pow2(-20))
            tail = (co.u_at(k + 1) * co.q(k + 1) ** 2 / (co.v_at(k + 1) * co.u_at(l))
                    if co.n_max > k else mpfr(0))
            if prev_val is not None:
                passed = bool(passed and abs(Lval) > abs(prev_val))
            prev_val = Lval
            results.append(CheckResult(
                "blowup", k, {"l": l, "t": float(t)}, bound, Lval, passed,
                meta={"truncated_sum": mpfr(truncated), "match_rel": match,
                      "tail_next_term": mpfr(tail),
                      "b_point": mpfr(b)}))
        return results

    # -- fixed-point separation --------------------------------------------------

    def check_fixed_point(self, k: int) -> CheckResult:
        """min over the grid of |f_k(x) - x| / |f0(x) - x| >= (1/2)(1 - 2^-10),
        plus the per-stage stepstones |f_j - f_{j-1}|/|f0 - id| <= 2^-(j+2)."""
        tower = self.tower
        chart = tower.chart
        fast, slow = tower.sweep_grid(mult=1, transitions=True)
        grid = fast + slow[:: max(len(slow) // 6, 1)]
        for j in range(1, k + 1):
            g = tower.stage(j)
            grid += [g.a_j + g.v * real(i) / 16 - g.v / (8 * g.q) for i in range(17)]
        ratio_min = None
        arg = None
        from .errors import DomainTruncationError
        for x in grid:
            if x <= self.field.x_min:
                continue
            try:
                fx = tower.flow_k(k, 1, x)
                f0x = chart.flow(1, x)
            except DomainTruncationError:
                continue
            den = abs(f0x - x)
            if gmpy2.is_zero(den):
                continue
            ratio = abs(fx - x) / den
            if ratio_min is None or ratio < ratio_min:
                ratio_min, arg = ratio, x
        bound = real(1) / 2 * (1 - real_pow2(-_INEQ_SLACK_BITS))
        passed = bool(ratio_min is not None and ratio_min >= bound)
        steps = {}
        for j in range(1, k + 1):
            g = tower.stage(j)
            worst = mpfr(0)
            for i in range(33):
                x = g.intervals.M[0] + (g.intervals.M[1] - g.intervals.M[0]) * real(i) / 32
                num = abs(tower.flow_k(j, 1, x) - tower.flow_k(j - 1, 1, x))
                den = abs(chart.flow(1, x) - x)
                worst = max(worst, num / den)
            steps[f"stage_{j}"] = worst
            passed = bool(passed and worst <= real_pow2(-(j + 2)) * (1 + real_pow2(-_INEQ_SLACK_BITS)))
        return CheckResult("fixed_point", k, {"grid": len(grid)}, bound,
                           ratio_min, passed,
                           meta={"argmin_x": mpfr(arg), **steps})

    # -- Liouville-time estimate ---------------------------------------------------

    def check_alpha_time(self, k: int, kprime: CantorCover) -> CheckResult:
        """||f_k^tau - f_{k-1}^tau||_k <= 2^-k at tau = frac(alpha) and at two
        deterministic certified K' points; replays the triangle decomposition
        from the stored certificates."""
        tower = self.tower
        entry = self.seq.entry(k)
        alpha_val = self.alpha.value()
        tau = alpha_val - int(gmpy2.floor(alpha_val))
        taus = [("frac_alpha", tau)]
        # two deterministic extra K'-points: level-k centers adjacent to the
        # stage's own approximation (these inherit membership at all levels)
        lvl = kprime.levels[k - 1]
        for label, p_idx in (("kprime_prev", entry.p - 1), ("kprime_next", entry.p + 1)):
            if 0 <= p_idx <= lvl.count - 1:
                cand = lvl.center(p_idx)
                if kprime.member(cand):
                    taus.append((label, cand))
        bound = real_pow2(-k)
        best = mpfr(0)
        details = {}
        for label, t in taus:
            if not kprime.member(t):
                details[label] = "not-applicable (outside K')"
                continue
            est = tower.norm_diff_maps(k, t, k, refine=False)
            details[label] = est.value
            best = max(best, est.value)
        # triangle replay from stored certificate numbers
        r_over_q = mpfr(entry.p) / entry.q
        term_side = abs(tau - r_over_q) * entry.M
        term_mid = real_pow2(-(k + 4))
        replay_ok = bool(term_side <= real_pow2(-(k + 2))
                         and 2 * term_side + term_mid <= bound)
        passed = bool(best <= bound and replay_ok)
        return CheckResult("alpha_time", k, {"taus": [l for l, _ in taus]},
                           bound, best, passed,
                           meta={"triangle_side_term": term_side,
                                 "triangle_mid_term": term_mid,
                                 "replay_ok": replay_ok, **details})

    # -- C1 convergence diagnostic ---------------------------------------------------

    def check_c1_convergence(self, k: int) -> CheckResult:
        """Empirical stand-in for the cited continuity theorem: the grid norms
        d_j = ||nu_j - nu_{j-1}||_1 must decrease strictly with d_k <= d_{k-1}/2."""
        tower = self.tower
        ds = []
        argmaxes = []
        for j in range(1, k + 1):
            fast, _ = tower.stage_grid(j, 1)
            best = mpfr(0)
            arg = None
            for x in fast:
                a = tower.nu_k_jet(j, x, 1)
                b = tower.nu_k_jet(j - 1, x, 1)
                for m in (0, 1):
                    v = abs(a.coeffs[m] - b.coeffs[m])
                    if v > best:
                        best, arg = v, (x, m)
            ds.append(best)
            argmaxes.append(arg)
        ok = all(b < a for a, b in zip(ds, ds[1:]))
        if k >= 2:
            ok = ok and ds[-1] <= ds[-2] / 2
        meta = {f"d_{j + 1}": d for j, d in enumerate(ds)}
        for j, arg in enumerate(argmaxes):
            if arg is not None:
                meta[f"argmax_{j + 1}"] = {"x": float(arg[0]),
                                           "band": int(self.field.band_of(arg[0])),
                                           "order": arg[1]}
        return CheckResult("c1_convergence", k, {}, None,
                           ds[-1] if ds else None, bool(ok), meta=meta)

    # -- Cantor structure ---------------------------------------------------------

    def check_cantor(self, K: int, k0: int) -> list:
        results = []
        alpha_val = self.alpha.value()
        floor = int(gmpy2.floor(alpha_val))
        kp = cover_Kprime(self.seq, K, alpha_floor=floor)
        kp.assert_nested()
        children = kp.min_children()
        frac_in = kp.member(alpha_val)
        results.append(CheckResult(
            "cantor_Kprime", K, {"levels": K}, None,
            mpfr(min(children)) if children else None,
            bool(frac_in and all(c >= 2 for c in children)),
            meta={"min_children": children, "alpha_member": bool(frac_in),
                  "level1_count": kp.levels[0].count}))
        lvl_max = min(K, len(self.seq.entries))
        hc = cover_H(self.seq, k0, lvl_max)
        hc.assert_nested()
        hchildren = hc.min_children()
        t_star = pick_H_element(hc, len(hc.levels))
        results.append(CheckResult(
            "cantor_H", lvl_max, {"k0": k0}, None,
            mpfr(min(hchildren)) if hchildren else None,
            bool(hc.member(t_star) and all(c >= 1 for c in hchildren)),
            meta={"min_children": hchildren, "picked_t": mpfr(t_star),
                  "picked_member": bool(hc.member(t_star))}))
        return results

    # -- driver ---------------------------------------------------------------------

    def run(self, K: int, manifest_hash: str, names=None, k0: int | None = None) -> VerificationReport:
        names = set(names or CHECK_NAMES)
        unknown = names - set(CHECK_NAMES)
        if unknown:
            raise ContractViolation(f"unknown checks: {sorted(unknown)}")
        report = VerificationReport(manifest_hash, current_precision())
        timing = report.timing
        k0 = k0 if k0 is not None else min(2, K)
        floor = int(gmpy2.floor(self.alpha.value()))
        kprime = cover_Kprime(self.seq, K, alpha_floor=floor)
        hcov = cover_H(self.seq, k0, K) if K >= k0 else None
        t_star = pick_H_element(hcov, len(hcov.levels)) if hcov is not None else None

        def stamp(label, start):
            timing[label] = round(time.monotonic() - start, 3)

        for k in range(1, K + 1):
            if "ik" in names:
                t0 = time.monotonic()
                report.checks.append(self.check_ik(k))
                stamp(f"ik_{k}", t0)
            if "lemma1" in names:
                t0 = time.monotonic()
                use_t = t_star if (t_star is not None and k >= k0) else None
                report.checks.extend(self.check_lemma_phi(k, t=use_t, k0=k0 if use_t is not None else None))
                stamp(f"lemma1_{k}", t0)
            if "alpha_time" in names:
                t0 = time.monotonic()
                report.checks.append(self.check_alpha_time(k, kprime))
                stamp(f"alpha_time_{k}", t0)
        if "blowup" in names and t_star is not None and K >= k0 + 1:
            t0 = time.monotonic()
            report.checks.extend(
                self.check_blowup(K, t_star, range(k0 + 1, K + 1), k0))
            stamp("blowup", t0)
        if "fixed_point" in names:
            t0 = time.monotonic()
            report.checks.append(self.check_fixed_point(K))
            stamp("fixed_point", t0)
        if "c1" in names and K >= 1:
            t0 = time.monotonic()
            report.checks.append(self.check_c1_convergence(K))
            stamp("c1", t0)
        if "cantor" in names:
            t0 = time.monotonic()
            report.checks.extend(self.check_cantor(K, k0))
            stamp("cantor", t0)
        return report
