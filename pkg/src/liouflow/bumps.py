"""The three fixed smooth profiles (alpha, beta, gamma) and their norm tables.

alpha is a smoothstep rising 0 -> 1 across [1/8, 1/4]; beta is a plateau bump
equal to 1 on [1/4, 3/4] and supported in [1/8, 7/8]; gamma is the quadratic
cap x^2/2 on |x| <= 1/20, cut off smoothly to vanish outside [-1/4, 1/4].
All transitions use the classical exp(-kappa/x) blend, so every derivative
has an exact closed-form jet; no finite differencing is involved anywhere.

Norm entries ||p||_r = sup_{m<=r, x} |D^m p(x)| are measured by a grid sweep
over the transition regions whose candidate set is polished with the exact
critical points of each derivative (roots of D^{m+1}); the polished suprema
are stable under grid refinement by construction, which is re-checked.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import gmpy2
from gmpy2 import mpfr

from .calculus import (
    Jet,
    affine_jet,
    current_precision,
    identity_jet,
    jet_exp,
    jet_recip,
    real,
    real_pow2,
)
from .errors import ConstructionError, ContractViolation, NormEstimationError

DEFAULT_R_MAX = 8

# sharpness ladder tried by make_bumps until the C^1 targets hold with margin
_KAPPA_LADDER = ("0.75", "0.625", "0.5", "0.875", "0.45", "1.0")

_NORM_MARGIN = mpfr("0.95")  # 5% margin on the C^1 bounds
_BASE_GRID = 128
_STABILITY_REL_BITS = 32
_POLISH_BITS = 48  # critical points located to width * 2^-48; suprema are
                   # second-order flat there, so values carry ~2x that accuracy


def _scaled_jet(inner_base, s_jet: Jet, slope) -> Jet:
    """Jet of s(a*x+b) at inner_base given the jet of s at a*inner_base+b."""
    out = [s_jet.coeffs[0]]
    p = mpfr(1)
    for m in range(1, s_jet.order + 1):
        p *= slope
        out.append(s_jet.coeffs[m] * p)
    return Jet(real(inner_base), tuple(out))


class SmoothStep:
    """s(t) = E(t) / (E(t) + E(1-t)) with E(t) = exp(-kappa/t); 0 -> 1 on [0,1]."""

    def __init__(self, kappa):
        self.kappa = real(kappa)

    def jet(self, t, order: int) -> Jet:
        t = real(t)
        if t <= 0:
            return Jet(t, (mpfr(0),) + (mpfr(0),) * order)
        if t >= 1:
            return Jet(t, (mpfr(1),) + (mpfr(0),) * order)
        jt = identity_jet(t, order)
        e1 = jet_exp(jet_recip(jt) * (-self.kappa))
        j1mt = affine_jet(-1, 1, t, order)
        e2 = jet_exp(jet_recip(j1mt) * (-self.kappa))
        return e1 / (e1 + e2)


@dataclass(frozen=True)
class Profile:
    """Piecewise-smooth profile with exact jets and explicit support."""

    name: str
    support: tuple  # closed interval outside of which the profile vanishes
    step: SmoothStep
    even: bool = False

    def jet(self, x, order: int) -> Jet:
        x = real(x)
        if self.even and x < 0:
            j = self.jet(-x, order)
            return Jet(x, tuple(c if m % 2 == 0 else -c for m, c in enumerate(j.coeffs)))
        return self._jet_pos(x, order)

    def _jet_pos(self, x, order: int) -> Jet:
        raise NotImplementedError


class _Alpha(Profile):
    def __init__(self, step):
        super().__init__("alpha", (real("0.125"), mpfr("inf")), step)

    def _jet_pos(self, x, order):
        eighth = real(1) / 8
        quarter = real(1) / 4
        if x <= eighth:
            return Jet(x, (mpfr(0),) * (order + 1))
        if x >= quarter:
            return Jet(x, (mpfr(1),) + (mpfr(0),) * order)
        u = 8 * (x - eighth)
        return _scaled_jet(x, self.step.jet(u, order), mpfr(8))


class _Beta(Profile):
    def __init__(self, step):
        super().__init__("beta", (real("0.125"), real("0.875")), step)

    def _jet_pos(self, x, order):
        eighth = real(1) / 8
        quarter = real(1) / 4
        if x <= eighth or x >= 1 - eighth:
            return Jet(x, (mpfr(0),) * (order + 1))
        if quarter <= x <= 1 - quarter:
            return Jet(x, (mpfr(1),) + (mpfr(0),) * order)
        if x < quarter:
            u = 8 * (x - eighth)
            return _scaled_jet(x, self.step.jet(u, order), mpfr(8))
        u = 8 * ((1 - eighth) - x)
        return _scaled_jet(x, self.step.jet(u, order), mpfr(-8))


class _Gamma(Profile):
    """gamma(x) = (x^2/2) * chi(x); chi = 1 on [-1/20, 1/20], 0 outside [-1/4, 1/4]."""

    def __init__(self, step):
        super().__init__("gamma", (real(-1) / 4, real(1) / 4), step, even=True)

    def _jet_pos(self, x, order):
        quarter = real(1) / 4
        cap = real(1) / 20
        if x >= quarter:
            return Jet(x, (mpfr(0),) * (order + 1))
        half_sq = [x * x / 2, x, mpfr(1)] + [mpfr(0)] * max(order - 2, 0)
        q = Jet(x, tuple(half_sq[: order + 1]))
        if x <= cap:
            return q
        # chi(x) = s((1/4 - x) * 5): equals 1 at x=1/20, 0 at x=1/4
        u = (quarter - x) * 5
        chi = _scaled_jet(x, self.step.jet(u, order), mpfr(-5))
        return q * chi


@dataclass(frozen=True)
class NormEntry:
    value: mpfr
    critical_points: tuple
    grid_points: int


@dataclass(frozen=True)
class BumpKit:
    alpha: Profile
    beta: Profile
    gamma: Profile
    r_max: int
    norm_table: dict = field(repr=False)   # (name, r) -> NormEntry, r <= r_max
    params: dict = field(repr=False)       # sharpness parameters actually used
    precision_bits: int = 0

    def profile(self, which: str) -> Profile:
        try:
            return {"alpha": self.alpha, "beta": self.beta, "gamma": self.gamma}[which]
        except KeyError:
            raise ContractViolation(f"unknown profile {which!r}") from None


def profile_jet(kit: BumpKit, which: str, x, order: int) -> Jet:
    if order > kit.r_max:
        raise ContractViolation(f"order {order} exceeds R_max={kit.r_max}")
    return kit.profile(which).jet(x, order)


def profile_norm(kit: BumpKit, which: str, r: int) -> mpfr:
    if r > kit.r_max:
        raise ContractViolation(f"r={r} exceeds R_max={kit.r_max}")
    return kit.norm_table[(which, r)].value


def profile_critical_points(kit: BumpKit, which: str, m: int) -> tuple:
    """Abscissae where |D^m| attains local maxima (used to seed norm grids)."""
    return kit.norm_table[(which, m)].critical_points


# ---------------------------------------------------------------------------
# norm measurement
# ---------------------------------------------------------------------------

def _regions(profile: Profile):
    eighth = real(1) / 8
    quarter = real(1) / 4
    if profile.name == "alpha":
        return [(eighth, quarter)]
    if profile.name == "beta":
        return [(eighth, quarter), (1 - quarter, 1 - eighth)]
    # gamma: quadratic cap plus cutoff transition (evenness covers x < 0)
    return [(mpfr(0), real(1) / 20), (real(1) / 20, quarter)]


def _sweep_region(profile: Profile, lo, hi, m_top: int, n_pts: int):
    """Per-derivative sup and critical points of profile on [lo, hi].

    Evaluates order-(m_top+1) jets on a uniform grid, then polishes each sign
    change of D^{m+1} with a bracketed root to catch interior extrema of D^m.
    """
    h = (hi - lo) / n_pts
    grid = [lo + i * h for i in range(n_pts + 1)]
    jets = [profile.jet(x, m_top + 1) for x in grid]
    sups = []
    crits = []
    xtol = (hi - lo) * real_pow2(-_POLISH_BITS)
    for m in range(m_top + 1):
        best = max(abs(j.coeffs[m]) for j in jets)
        pts = []
        for i in range(n_pts):
            a, b = jets[i].coeffs[m + 1], jets[i + 1].coeffs[m + 1]
            if gmpy2.is_zero(a) and gmpy2.is_zero(b):
                continue
            if (a > 0) != (b > 0):
                root = _refine_sign_change(profile, m, grid[i], grid[i + 1], xtol)
                val = abs(profile.jet(root, m).coeffs[m])
                if val > best:
                    best = val
                pts.append(root)
        sups.append(best)
        crits.append(tuple(pts))
    return sups, crits


def _refine_sign_change(profile: Profile, m: int, lo, hi, xtol):
    f = lambda x: profile.jet(x, m + 1).coeffs[m + 1]
    flo = f(lo)
    fhi = f(hi)
    if gmpy2.is_zero(flo):
        return lo
    if gmpy2.is_zero(fhi):
        return hi
    while hi - lo > xtol:
        mid = (lo + hi) / 2
        fm = f(mid)
        if gmpy2.is_zero(fm):
            return mid
        if (fm > 0) == (flo > 0):
            lo, flo = mid, fm
        else:
            hi, fhi = mid, fm
    return (lo + hi) / 2


def _measure_profile(profile: Profile, r_max: int, n_pts: int):
    sups = [mpfr(0)] * (r_max + 1)
    crits = [[] for _ in range(r_max + 1)]
    if profile.name in ("alpha", "beta"):
        sups[0] = mpfr(1)  # plateau value
    for lo, hi in _regions(profile):
        rs, rc = _sweep_region(profile, lo, hi, r_max, n_pts)
        for m in range(r_max + 1):
            if rs[m] > sups[m]:
                sups[m] = rs[m]
            crits[m].extend(rc[m])
    # ||.||_r is the sup over all orders m <= r
    table = []
    running = mpfr(0)
    for m in range(r_max + 1):
        running = max(running, sups[m])
        table.append(running)
    return table, [tuple(c) for c in crits], sups


def _build_tables(alpha, beta, gamma, r_max: int):
    out = {}
    per_order = {}
    for profile in (alpha, beta, gamma):
        t1, c1, s1 = _measure_profile(profile, r_max, _BASE_GRID)
        t2, c2, s2 = _measure_profile(profile, r_max, 2 * _BASE_GRID)
        for m in range(r_max + 1):
            a, b = t1[m], t2[m]
            if abs(a - b) > real_pow2(-_STABILITY_REL_BITS) * max(a, b, mpfr(1)):
                raise NormEstimationError(
                    f"norm of {profile.name} at order {m} unstable under refinement: {a} vs {b}")
            out[(profile.name, m)] = NormEntry(b, c2[m], 2 * _BASE_GRID)
        per_order[profile.name] = s2
    return out, per_order


def make_bumps(r_max: int = DEFAULT_R_MAX) -> BumpKit:
    """Construct the profile kit and verify every build-time invariant.

    The sharpness parameter of the exp blend is fixed by walking a small
    deterministic ladder until the C^1 targets hold with >= 5% margin:
    ||alpha||_1 < 16, ||beta||_1 < 16, ||gamma||_1 < 1.  Failure to find such
    a parameter aborts the construction.
    """
    last_fail = None
    for kappa_s in _KAPPA_LADDER:
        step = SmoothStep(real(kappa_s))
        alpha = _Alpha(step)
        beta = _Beta(step)
        gamma = _Gamma(step)
        try:
            table, per_order = _build_tables(alpha, beta, gamma, r_max)
        except NormEstimationError as exc:
            last_fail = f"kappa={kappa_s}: {exc}"
            continue
        a1 = table[("alpha", 1)].value
        b1 = table[("beta", 1)].value
        g1 = table[("gamma", 1)].value
        if a1 < 16 * _NORM_MARGIN and b1 < 16 * _NORM_MARGIN and g1 < _NORM_MARGIN:
            kit = BumpKit(
                alpha=alpha, beta=beta, gamma=gamma, r_max=r_max,
                norm_table=table,
                params={"kappa": kappa_s,
                        "per_order_sups": per_order,
                        "norm1": {"alpha": a1, "beta": b1, "gamma": g1}},
                precision_bits=current_precision(),
            )
            _verify_kit(kit)
            return kit
        last_fail = f"kappa={kappa_s}: norms alpha1={a1}, beta1={b1}, gamma1={g1}"
    raise ConstructionError(f"no sharpness parameter met the C^1 targets ({last_fail})")


def _verify_kit(kit: BumpKit):
    """Numeric spot checks of the defining invariants; raises on failure."""
    tol = real_pow2(-(current_precision() - 24))
    a = kit.alpha
    if not (a.jet(real(1) / 8, 2).value == 0 and a.jet(real(1) / 4, 2).value == 1):
        raise ConstructionError("alpha endpoint values wrong")
    b = kit.beta
    if not (b.jet(real(1) / 8, 0).value == 0 and b.jet(real(1) / 4, 0).value == 1
            and b.jet(real(3) / 4, 0).value == 1 and b.jet(real(7) / 8, 0).value == 0):
        raise ConstructionError("beta endpoint values wrong")
    g = kit.gamma
    j0 = g.jet(mpfr(0), 2)
    if not (gmpy2.is_zero(j0.coeffs[0]) and gmpy2.is_zero(j0.coeffs[1]) and j0.coeffs[2] == 1):
        raise ConstructionError("gamma germ at 0 is not x^2/2")
    x = real(1) / 40
    if abs(g.jet(x, 0).value - x * x / 2) > tol:
        raise ConstructionError("gamma quadratic cap violated at 1/40")
    if not profile_norm(kit, "gamma", 0) <= 1:
        raise ConstructionError("gamma range exceeds [0,1]")
    # the scaled-stage norm identity needs the gamma sup to sit at top order
    sups = kit.params["per_order_sups"]["gamma"]
    for m in range(1, kit.r_max):
        if not sups[m + 1] >= sups[m]:
            raise ConstructionError(
                f"gamma per-order sups must be nondecreasing (order {m})")
