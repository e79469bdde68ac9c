"""Derivative-control records: fundamental-interval bounds, speed floors,
and the universal inverse-derivative envelope used to validate the jet engine.

Formula records reproduce exactly from the coefficient and norm tables;
measured records are grid suprema.  A formula record must dominate its
measured counterpart (bounds are upper bounds), and the margin is reported.
"""

from __future__ import annotations

from dataclasses import dataclass

import gmpy2
from gmpy2 import mpfr

from .basefield import BaseField
from .bumps import profile_norm
from .calculus import jet_invert, real, real_pow2, to_hex
from .errors import ContractViolation, GeometryError
from .stack import Tower

__all__ = ["BoundRecord", "jk_part_bound", "nu0_floor", "inverse_bound_check"]


@dataclass(frozen=True)
class BoundRecord:
    label: str
    k: int
    r: int
    value: mpfr
    provenance: str            # "formula" | "measured"
    margin: mpfr | None = None  # formula/measured ratio when both exist
    status: str = "ok"         # "ok" | "not-run"

    def as_record(self) -> dict:
        return {"label": self.label, "k": self.k, "r": self.r,
                "value_hex": to_hex(self.value), "value": float(self.value),
                "provenance": self.provenance,
                "margin": None if self.margin is None else float(self.margin),
                "status": self.status}


def jk_part_bound(tower: Tower, k: int, r: int, grid_points: int = 257) -> BoundRecord:
    """|D^r (g_k - id)| <= u_k (q_k/v_k)^r ||gamma||_r on [0, max J_k].

    The formula value is cross-checked against a measured sup on a J_k grid;
    domination failure signals a coefficient or jet bug.
    """
    g = tower.stage(k)
    kit = tower.field.kit
    formula = g.u * (mpfr(g.q) / g.v) ** r * profile_norm(kit, "gamma", r)
    lo, hi = g.intervals.J
    measured = mpfr(0)
    for i in range(grid_points):
        x = lo + (hi - lo) * i / (grid_points - 1)
        j = g.jet(x, max(r, 1))
        d = j.coeffs[r] - (1 if r == 1 else 0) - (x if r == 0 else 0)
        measured = max(measured, abs(d))
    if measured > formula * (1 + real_pow2(-20)):
        raise GeometryError(
            f"measured |D^{r}(g_{k}-id)| = {measured} exceeds formula bound {formula}")
    margin = formula / measured if measured > 0 else mpfr("inf")
    return BoundRecord(f"|D^{r}(g_{k}-id)| on J_{k}", k, r, formula, "formula",
                       margin=margin)


def nu0_floor(field: BaseField, lo, hi) -> BoundRecord:
    """Exact floor of |nu_0| over [lo, hi] from the plateau geometry.

    On every segment the speed is monotone (plateaus constant, transitions
    monotone in the profile argument), so the floor is the min of the segment
    speeds at the intersection endpoints.
    """
    lo = field.check_domain(real(lo))
    hi = real(hi)
    if not lo < hi:
        raise ContractViolation("need lo < hi")
    floor = None
    for seg in field.segments():
        a = max(seg.lo, lo)
        b = min(seg.hi, hi)
        if not a < b and not (a == b and lo <= a <= hi):
            continue
        if seg.kind in ("plateau", "tail"):
            cand = abs(seg.value)
        else:
            cand = min(abs(field.value(a)), abs(field.value(b)))
        floor = cand if floor is None else min(floor, cand)
    if hi > real_pow2(-1) and (floor is None or abs(field.coeffs.u_at(1)) < floor):
        floor = field.coeffs.u_at(1)
    if floor is None:
        raise ContractViolation(f"[{lo}, {hi}] intersects no represented segment")
    return BoundRecord(f"floor |nu0| on [{float(lo)}, {float(hi)}]", 0, 0,
                       floor, "formula")


# universal inverse-derivative polynomials P_r with absolute coefficients:
# (D^r g^{-1}) o g = P_r(Dg, ..., D^r g) / (Dg)^{2r+1}
def _envelope_P(r: int, s):
    x1, x2, x3, x4 = (s + [mpfr(0)] * 4)[:4]
    if r == 1:
        return x1 ** 2
    if r == 2:
        return x2 * x1 ** 2
    if r == 3:
        return 3 * x2 ** 2 * x1 ** 2 + x1 ** 3 * x3
    if r == 4:
        return 15 * x2 ** 3 * x1 ** 2 + 10 * x1 ** 3 * x2 * x3 + x1 ** 4 * x4
    raise ContractViolation("envelope polynomials expanded only to r = 4")


def inverse_bound_check(tower: Tower, k: int, r: int, xs=None) -> BoundRecord:
    """Verify D^r(g_k^{-1}) from jet_invert against the universal envelope
    P_r(||Dg||, ..., ||D^r g||) / (Dg floor)^{2r+1} with Dg floor >= 1/2.

    Beyond r = 4 the polynomials grow combinatorially and the check is
    skipped with status "not-run".
    """
    if r > 4:
        return BoundRecord(f"inverse envelope g_{k}", k, r, mpfr(0),
                           "formula", status="not-run")
    g = tower.stage(k)
    if xs is None:
        lo, hi = g.intervals.J
        xs = [lo + (hi - lo) * i / 64 for i in range(65)]
        a_i = tower.orbit.point(tower.orbit.i[k])
        xs += [a_i + g.u / g.q * (mpfr(i) / 32 - mpfr(1) / 4) for i in range(17)]
    sups = [mpfr(0)] * (r + 1)
    inv_sup = mpfr(0)
    for x in xs:
        j = g.jet(x, r)
        for m in range(1, r + 1):
            sups[m] = max(sups[m], abs(j.coeffs[m]))
        inv = jet_invert(j)
        inv_sup = max(inv_sup, abs(inv.coeffs[r]))
    envelope = _envelope_P(r, sups[1:]) / real_pow2(-1) ** (2 * r + 1)
    if inv_sup > envelope * (1 + real_pow2(-20)):
        raise GeometryError(
            f"inverse jet |D^{r}| = {inv_sup} escapes envelope {envelope}")
    margin = envelope / inv_sup if inv_sup > 0 else mpfr("inf")
    return BoundRecord(f"inverse envelope g_{k}", k, r, envelope, "formula",
                       margin=margin)
