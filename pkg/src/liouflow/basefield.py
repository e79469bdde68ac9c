"""Coefficient tables (v_n, u_n) and the piecewise initial vector field.

The initial field is negative on (0, oo), vanishes at 0, and alternates
between deep plateaus at -v_n and shallow plateaus at -u_n across the dyadic
bands [2^-n-1, 2^-n], with smooth transitions driven by the alpha/beta
profiles.  A run represents finitely many bands; evaluation below the
truncation depth raises, never silently extrapolates.

Band decomposition of [2^-n-1, 2^-n] (left to right, exact dyadic bounds):

    [2^-n-1,          2^-n-1 + 2^-n-4]  constant -u_{n+1}   (shallow, band n+1)
    [2^-n-1 + 2^-n-4, 2^-n-1 + 2^-n-3]  rising transition   -u_{n+1} -> -v_n
    [2^-n-1 + 2^-n-3, 2^-n   - 2^-n-3]  constant -v_n       (deep plateau)
    [2^-n   - 2^-n-3, 2^-n   - 2^-n-4]  falling transition  -v_n -> -u_n
    [2^-n   - 2^-n-4, 2^-n]             constant -u_n       (shallow, band n)

so the full shallow plateau of band n is [2^-n - 2^-n-4, 2^-n + 2^-n-3],
straddling the band edge, and the field equals -u_1 on all of [1/2, oo).
"""

from __future__ import annotations

from dataclasses import dataclass

import gmpy2
from gmpy2 import mpfr

from .bumps import BumpKit, profile_norm
from .calculus import Jet, real, real_pow2
from .errors import ContractViolation, DomainTruncationError

__all__ = [
    "CoeffTable", "BaseField", "Plateau", "Segment",
    "build_coeffs", "nu0_jet", "nu0_value", "plateau_of",
]


@dataclass(frozen=True)
class CoeffTable:
    """v_n = 2^-(n+3)^2 and u_n = 2^-n-4 q_n^-n v_n^n / ||gamma||_n for n <= n_max."""

    qs: tuple            # q_1 < q_2 < ... (ints)
    v: tuple             # v[0] unused; v[n] for n >= 1
    u: tuple
    gamma_norms: tuple   # ||gamma||_n actually used, same indexing

    @property
    def n_max(self) -> int:
        return len(self.qs)

    def q(self, n: int) -> int:
        return self.qs[n - 1]

    def v_at(self, n: int) -> mpfr:
        return self.v[n]

    def u_at(self, n: int) -> mpfr:
        return self.u[n]

    def u_factored(self, n: int):
        """(pow2, q, n, gamma_norm) with u_n = 2^pow2 * q^-n / gamma_norm.

        pow2 = -(n+4) - n*(n+3)^2 collects all dyadic factors exactly.
        """
        return (-(n + 4) - n * (n + 3) ** 2, self.q(n), n, self.gamma_norms[n])


def v_coeff(n: int) -> mpfr:
    return real_pow2(-((n + 3) ** 2))


def build_coeffs(q_prefix, kit: BumpKit) -> CoeffTable:
    """Populate v, u for n <= len(q_prefix); u consumes ||gamma||_n."""
    qs = list(q_prefix)
    if not qs:
        raise ContractViolation("need at least one q")
    prev = 0
    for q in qs:
        if not isinstance(q, int) or q <= prev:
            raise ContractViolation(f"q sequence must be strictly increasing positive ints, got {qs}")
        prev = q
    if len(qs) > kit.r_max:
        raise ContractViolation(
            f"need ||gamma||_n up to n={len(qs)} but R_max={kit.r_max}")
    v = [mpfr(0)]
    u = [mpfr(0)]
    norms = [mpfr(0)]
    for n, q in enumerate(qs, start=1):
        vn = v_coeff(n)
        gn = profile_norm(kit, "gamma", n)
        un = real_pow2(-(n + 4)) * (mpfr(q) ** (-n)) * vn ** n / gn
        if not (0 < un < vn):
            raise ContractViolation(f"u_{n}={un} violates 0 < u < v={vn}")
        if not (un / vn <= real_pow2(-(n + 2))):
            raise ContractViolation(f"u_{n}/v_{n} exceeds 2^-(n+2)")
        v.append(vn)
        u.append(un)
        norms.append(gn)
    return CoeffTable(tuple(qs), tuple(v), tuple(u), tuple(norms))


@dataclass(frozen=True)
class Segment:
    """One maximal piece of the band decomposition, [lo, hi]."""

    lo: mpfr
    hi: mpfr
    kind: str        # "plateau" | "transition" | "tail"
    band: int
    value: mpfr      # plateau/tail speed value (negative); transitions: left value
    label: str


@dataclass(frozen=True)
class Plateau:
    kind: str        # "deep" | "shallow" | "transition"
    band: int
    lo: mpfr
    hi: mpfr
    value: mpfr      # constant field value on plateaus; 0 sentinel on transitions


class BaseField:
    """The initial vector field on the represented domain [2^-(n_bands+1), oo) u {0}."""

    def __init__(self, coeffs: CoeffTable, kit: BumpKit):
        if coeffs.n_max < 2:
            raise ContractViolation("base field needs at least bands 1..1, so two u coefficients")
        self.coeffs = coeffs
        self.kit = kit
        self.n_bands = coeffs.n_max - 1   # band n needs u_{n+1}
        self.x_min = real_pow2(-(self.n_bands + 1))
        self._segments = self._build_segments()

    # -- geometry -----------------------------------------------------------

    def _build_segments(self):
        segs = []
        u = self.coeffs.u_at
        v = self.coeffs.v_at
        segs.append(Segment(real_pow2(-1), mpfr("inf"), "tail", 0, -u(1), "tail"))
        for n in range(1, self.n_bands + 1):
            lo = real_pow2(-n - 1)
            segs.extend([
                Segment(real_pow2(-n) - real_pow2(-n - 4), real_pow2(-n),
                        "plateau", n, -u(n), f"shallow_head_{n}"),
                Segment(real_pow2(-n) - real_pow2(-n - 3), real_pow2(-n) - real_pow2(-n - 4),
                        "transition", n, -v(n), f"trans_R_{n}"),
                Segment(lo + real_pow2(-n - 3), real_pow2(-n) - real_pow2(-n - 3),
                        "plateau", n, -v(n), f"deep_{n}"),
                Segment(lo + real_pow2(-n - 4), lo + real_pow2(-n - 3),
                        "transition", n, -u(n + 1), f"trans_L_{n}"),
                Segment(lo, lo + real_pow2(-n - 4),
                        "plateau", n + 1, -u(n + 1), f"shallow_tail_{n + 1}"),
            ])
        segs.sort(key=lambda s: s.lo)
        return segs

    def segments(self):
        return list(self._segments)

    def band_of(self, x) -> int:
        """Band n with 2^-n-1 <= x < 2^-n (exact mantissa/exponent arithmetic)."""
        m, e = mpfr(x).as_mantissa_exp()
        k = int(e) + int(m).bit_length() - 1  # x in [2^k, 2^k+1)
        return -k - 1

    def check_domain(self, x):
        x = real(x)
        if x < 0:
            raise ContractViolation(f"x={x} below the half-line")
        if x != 0 and x < self.x_min:
            raise DomainTruncationError(
                f"x={x} below truncation depth 2^-{self.n_bands + 1}")
        return x

    # -- evaluation ----------------------------------------------------------

    def band_formula_jet(self, n: int, x, order: int) -> Jet:
        """Jet of the band-n defining formula at x (no domain checks).

        nu0 = -u_{n+1} - (u_n - u_{n+1}) alpha(2^{n+1} x - 1)
                       - (v_n  - u_n  ) beta (2^{n+1} x - 1)
        """
        x = real(x)
        u_n = self.coeffs.u_at(n)
        u_n1 = self.coeffs.u_at(n + 1)
        v_n = self.coeffs.v_at(n)
        scale = real_pow2(n + 1)
        arg = scale * x - 1
        ja = self.kit.alpha.jet(arg, order)
        jb = self.kit.beta.jet(arg, order)
        coeffs = []
        p = mpfr(1)
        for m in range(order + 1):
            if m > 0:
                p *= scale
            c = -(u_n - u_n1) * ja.coeffs[m] - (v_n - u_n) * jb.coeffs[m]
            if m == 0:
                c -= u_n1
            coeffs.append(c * p if m > 0 else c)
        return Jet(x, tuple(coeffs))

    def plateau_at(self, x) -> Plateau | None:
        """Plateau descriptor when x sits on a constant piece, else None."""
        x = self.check_domain(x)
        if gmpy2.is_zero(x):
            return None
        u = self.coeffs.u_at
        v = self.coeffs.v_at
        if x >= real_pow2(-1) - real_pow2(-5):
            # the band-1 shallow plateau merges with the constant tail
            return Plateau("shallow", 1, real_pow2(-1) - real_pow2(-5), mpfr("inf"), -u(1))
        n = self.band_of(x)
        lo = real_pow2(-n - 1)
        hi = real_pow2(-n)
        # shallow plateaus straddle band edges: [2^-n - 2^-n-4, 2^-n + 2^-n-3]
        if x >= hi - real_pow2(-n - 4):
            return Plateau("shallow", n, hi - real_pow2(-n - 4), hi + real_pow2(-n - 3), -u(n))
        if x <= lo + real_pow2(-n - 4):
            return Plateau("shallow", n + 1, lo - real_pow2(-n - 5), lo + real_pow2(-n - 4), -u(n + 1))
        if lo + real_pow2(-n - 3) <= x <= hi - real_pow2(-n - 3):
            return Plateau("deep", n, lo + real_pow2(-n - 3), hi - real_pow2(-n - 3), -v(n))
        return None

    def jet(self, x, order: int) -> Jet:
        x = self.check_domain(x)
        if gmpy2.is_zero(x):
            return Jet(x, (mpfr(0),) * (order + 1))
        p = self.plateau_at(x)
        if p is not None:
            return Jet(x, (p.value,) + (mpfr(0),) * order)
        return self.band_formula_jet(self.band_of(x), x, order)

    def value(self, x) -> mpfr:
        return self.jet(x, 0).value


def nu0_jet(field: BaseField, x, order: int) -> Jet:
    return field.jet(x, order)


def nu0_value(field: BaseField, x) -> mpfr:
    return field.value(x)


def plateau_of(field: BaseField, x) -> Plateau:
    """Which constant plateau (if any) contains x; 'transition' otherwise."""
    p = field.plateau_at(field.check_domain(x))
    if p is not None:
        return p
    n = field.band_of(x)
    lo = real_pow2(-n - 1)
    hi = real_pow2(-n)
    if x < lo + real_pow2(-n - 3):
        return Plateau("transition", n, lo + real_pow2(-n - 4), lo + real_pow2(-n - 3), mpfr(0))
    return Plateau("transition", n, hi - real_pow2(-n - 3), hi - real_pow2(-n - 4), mpfr(0))
