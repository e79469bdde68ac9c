"""Extended-precision scalars and truncated Taylor-jet arithmetic.

This module is the numeric substrate for the whole construction: MPFR reals
at a run-wide precision, jets of raw derivatives (value, D^1, ..., D^R) at a
base point, composition by the Bell-polynomial form of Faa di Bruno's formula,
local inversion, the nonlinear operator Lf = D^2 f / Df, adaptive
Gauss-Legendre quadrature and safeguarded root bracketing.

Scalars are plain ``gmpy2.mpfr`` values; the ambient gmpy2 context precision
is managed by entry points through :func:`working_precision`.  All operations
here are pure and all jet objects immutable.
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Sequence

import gmpy2
from gmpy2 import mpfr

from .errors import (
    BracketError,
    ContractViolation,
    InsufficientOrderError,
    QuadratureBudgetError,
    SingularJetError,
)

PrecReal = mpfr


def current_precision() -> int:
    return gmpy2.get_context().precision


@contextlib.contextmanager
def working_precision(bits: int):
    """Set the ambient MPFR precision for a block; restores the old value."""
    if bits < 2:
        raise ContractViolation(f"precision must be >= 2 bits, got {bits}")
    ctx = gmpy2.get_context()
    old = ctx.precision
    ctx.precision = bits
    try:
        yield
    finally:
        ctx.precision = old


def real(x) -> mpfr:
    """Convert int/str/Fraction/float to mpfr at the ambient precision."""
    if isinstance(x, Fraction):
        return mpfr(x.numerator) / mpfr(x.denominator)
    return mpfr(x)


def real_pow2(e: int) -> mpfr:
    """Exact power of two 2**e as mpfr."""
    return gmpy2.exp2(mpfr(e))


def to_hex(x) -> str:
    """Exact, compact encoding of an mpfr as '<sign><hex mantissa>p<exp2>'."""
    x = mpfr(x)
    if gmpy2.is_zero(x):
        return "0x0p0"
    m, e = x.as_mantissa_exp()
    m = int(m)
    sign = "-" if m < 0 else ""
    return f"{sign}{hex(abs(m))}p{int(e)}"


def from_hex(s: str) -> mpfr:
    """Inverse of :func:`to_hex` (exact provided ambient precision suffices)."""
    body = s
    sign = 1
    if body.startswith("-"):
        sign = -1
        body = body[1:]
    mant_s, exp_s = body.split("p")
    m = int(mant_s, 16) * sign
    return gmpy2.mul_2exp(mpfr(m), int(exp_s)) if int(exp_s) >= 0 else gmpy2.div_2exp(mpfr(m), -int(exp_s))


# ---------------------------------------------------------------------------
# combinatorics shared by Leibniz / Faa di Bruno
# ---------------------------------------------------------------------------

_BINOM_CACHE: dict[int, list[list[int]]] = {}


def binomials(n: int) -> list[list[int]]:
    """Pascal triangle rows 0..n (ints)."""
    tab = _BINOM_CACHE.get(n)
    if tab is not None:
        return tab
    rows = [[1]]
    for i in range(1, n + 1):
        prev = rows[-1]
        rows.append([1] + [prev[j - 1] + prev[j] for j in range(1, i)] + [1])
    _BINOM_CACHE[n] = rows
    return rows


@dataclass(frozen=True)
class Jet:
    """Raw-derivative jet: coeffs = (f(x), Df(x), ..., D^R f(x)) at base x.

    Coefficients are raw derivatives, not Taylor coefficients (no factorial
    division).  ``coeffs[1] != 0`` is required wherever the jet stands for a
    diffeomorphism germ.
    """

    base: mpfr
    coeffs: tuple

    def __post_init__(self):
        if len(self.coeffs) < 1:
            raise ContractViolation("jet needs at least the value coefficient")

    @property
    def order(self) -> int:
        return len(self.coeffs) - 1

    @property
    def value(self) -> mpfr:
        return self.coeffs[0]

    def d(self, m: int) -> mpfr:
        """m-th raw derivative (0 beyond stored order)."""
        return self.coeffs[m] if m <= self.order else mpfr(0)

    def truncate(self, order: int) -> "Jet":
        if order > self.order:
            raise InsufficientOrderError(
                f"jet of order {self.order} cannot be truncated up to {order}")
        return Jet(self.base, self.coeffs[: order + 1])

    # -- pointwise ring operations (same base point) -----------------------

    def _check_base(self, other: "Jet"):
        if not (self.base == other.base):
            raise ContractViolation("jet arithmetic requires equal base points")

    def __add__(self, other):
        if isinstance(other, Jet):
            self._check_base(other)
            n = min(self.order, other.order)
            return Jet(self.base, tuple(self.coeffs[m] + other.coeffs[m] for m in range(n + 1)))
        c = list(self.coeffs)
        c[0] = c[0] + real(other)
        return Jet(self.base, tuple(c))

    __radd__ = __add__

    def __neg__(self):
        return Jet(self.base, tuple(-c for c in self.coeffs))

    def __sub__(self, other):
        if isinstance(other, Jet):
            return self + (-other)
        return self + (-real(other))

    def __rsub__(self, other):
        return (-self) + real(other)

    def __mul__(self, other):
        if isinstance(other, Jet):
            self._check_base(other)
            n = min(self.order, other.order)
            nok = binomials(n)
            out = []
            for m in range(n + 1):
                row = nok[m]
                s = mpfr(0)
                for i in range(m + 1):
                    s += row[i] * self.coeffs[i] * other.coeffs[m - i]
                out.append(s)
            return Jet(self.base, tuple(out))
        c = real(other)
        return Jet(self.base, tuple(cc * c for cc in self.coeffs))

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Jet):
            return self * jet_recip(other)
        return self * (1 / real(other))

    def __rtruediv__(self, other):
        return jet_recip(self) * real(other)

    def derivative(self) -> "Jet":
        """Jet of Df (order drops by one)."""
        if self.order < 1:
            raise InsufficientOrderError("cannot differentiate an order-0 jet")
        return Jet(self.base, self.coeffs[1:])


def const_jet(value, x, order: int) -> Jet:
    return Jet(real(x), (real(value),) + (mpfr(0),) * order)


def identity_jet(x, order: int) -> Jet:
    x = real(x)
    coeffs = [x] + [mpfr(0)] * order
    if order >= 1:
        coeffs[1] = mpfr(1)
    return Jet(x, tuple(coeffs))


def affine_jet(a, b, x, order: int) -> Jet:
    """Jet of t -> a*t + b at x."""
    x = real(x)
    a = real(a)
    coeffs = [a * x + real(b)] + [mpfr(0)] * order
    if order >= 1:
        coeffs[1] = a
    return Jet(x, tuple(coeffs))


def jet_from_taylor(base, taylor: Sequence, order: int) -> Jet:
    """Build a jet from Taylor coefficients c_m (f = sum c_m (t-x)^m)."""
    fact = 1
    coeffs = []
    for m in range(order + 1):
        if m > 0:
            fact *= m
        c = real(taylor[m]) if m < len(taylor) else mpfr(0)
        coeffs.append(c * fact)
    return Jet(real(base), tuple(coeffs))


def bell_polynomials(n: int, g: Sequence) -> dict:
    """Incomplete exponential Bell polynomials B(m,k) at g = (g1,...,gn).

    Standard recursion B(m,k) = sum_j C(m-1,j-1) g_j B(m-j,k-1); returns a
    dict keyed by (m,k) for 0 <= k <= m <= n.
    """
    B = {(0, 0): mpfr(1)}
    nok = binomials(max(n - 1, 0))
    for m in range(1, n + 1):
        for k in range(1, m + 1):
            s = mpfr(0)
            for j in range(1, m - k + 2):
                prev = B.get((m - j, k - 1))
                if prev is not None:
                    s += nok[m - 1][j - 1] * g[j - 1] * prev
            B[(m, k)] = s
    return B


def jet_compose(outer: Jet, inner: Jet) -> Jet:
    """Jet of outer o inner at inner.base (Faa di Bruno, Bell recursion).

    Requires equal orders and outer based at the value of inner.
    """
    if outer.order != inner.order:
        raise ContractViolation(
            f"jet_compose order mismatch: {outer.order} vs {inner.order}")
    if not (outer.base == inner.value):
        raise ContractViolation("outer jet must be based at inner jet's value")
    n = outer.order
    if n == 0:
        return Jet(inner.base, (outer.coeffs[0],))
    B = bell_polynomials(n, inner.coeffs[1:])
    out = [outer.coeffs[0]]
    for m in range(1, n + 1):
        s = mpfr(0)
        for k in range(1, m + 1):
            s += outer.coeffs[k] * B[(m, k)]
        out.append(s)
    return Jet(inner.base, tuple(out))


def jet_recip(j: Jet) -> Jet:
    """Jet of 1/f from the jet of f (f(x) != 0)."""
    f0 = j.coeffs[0]
    if gmpy2.is_zero(f0):
        raise SingularJetError("reciprocal of a jet with zero value")
    n = j.order
    inv = 1 / f0
    # derivatives of 1/u at u=f0: (-1)^m m! / f0^(m+1), composed with j
    outer = []
    fact = 1
    p = inv
    for m in range(n + 1):
        if m > 0:
            fact *= m
            p *= -inv
        outer.append(fact * p)
    return jet_compose(Jet(f0, tuple(outer)), j)


def jet_exp(j: Jet) -> Jet:
    """Jet of exp(f) via the recurrence D^{m+1}e^f = sum C(m,i) D^{i+1}f D^{m-i}e^f."""
    n = j.order
    out = [gmpy2.exp(j.coeffs[0])]
    nok = binomials(max(n - 1, 0))
    for m in range(n):
        s = mpfr(0)
        for i in range(m + 1):
            s += nok[m][i] * j.coeffs[i + 1] * out[m - i]
        out.append(s)
    return Jet(j.base, tuple(out))


_INVERT_CHECK_REL = 16  # bits of slack on the internal D g^-1 o g * Dg = 1 check


def jet_invert(j: Jet) -> Jet:
    """Jet of the local inverse at the image point j.value.

    Solves jet_compose(G, j) = identity order by order; refuses singular jets.
    The first-order identity D g^{-1}(g(x)) * Dg(x) = 1 is re-verified on the
    result as an internal sanity check.
    """
    if j.order < 1:
        raise InsufficientOrderError("inversion needs order >= 1")
    d1 = j.coeffs[1]
    if gmpy2.is_zero(d1):
        raise SingularJetError("cannot invert a jet with vanishing first derivative")
    n = j.order
    inv_d1 = 1 / d1
    G = [j.base, inv_d1]
    if n >= 2:
        B = bell_polynomials(n, j.coeffs[1:])
        for m in range(2, n + 1):
            s = mpfr(0)
            for k in range(1, m):
                s += G[k] * B[(m, k)]
            G.append(-s * inv_d1 ** m)
    result = Jet(j.value, tuple(G))
    # internal check: exact by construction up to rounding
    resid = abs(result.coeffs[1] * d1 - 1)
    tol = real_pow2(-(current_precision() - _INVERT_CHECK_REL))
    if resid > tol * max(mpfr(1), abs(result.coeffs[1] * d1)):
        raise SingularJetError(f"inverse-jet first-order check failed: resid={resid}")
    return result


def jet_L(j: Jet) -> Jet:
    """Jet of Lf = D^2 f / Df (order drops by two)."""
    if j.order < 2:
        raise InsufficientOrderError("L operator needs a jet of order >= 2")
    if gmpy2.is_zero(j.coeffs[1]):
        raise SingularJetError("L operator needs Df != 0")
    n = j.order - 2
    d2 = Jet(j.base, tuple(j.coeffs[2 + m] for m in range(n + 1)))
    d1 = Jet(j.base, tuple(j.coeffs[1 + m] for m in range(n + 1)))
    return d2 / d1


# ---------------------------------------------------------------------------
# quadrature
# ---------------------------------------------------------------------------

_GL_CACHE: dict[tuple[int, int], tuple[tuple, tuple]] = {}


def gauss_legendre_nodes(m: int) -> tuple[tuple, tuple]:
    """Nodes/weights of m-point Gauss-Legendre on [-1,1] at ambient precision.

    Newton iteration on P_m from float64 seeds; cached per (m, precision).
    """
    bits = current_precision()
    key = (m, bits)
    cached = _GL_CACHE.get(key)
    if cached is not None:
        return cached
    import math

    nodes = []
    weights = []
    half = (m + 1) // 2
    for i in range(1, half + 1):
        x = mpfr(math.cos(math.pi * (i - 0.25) / (m + 0.5)))
        for _ in range(64):
            p0, p1 = mpfr(1), x
            for k in range(2, m + 1):
                p0, p1 = p1, ((2 * k - 1) * x * p1 - (k - 1) * p0) / k
            dp = m * (x * p1 - p0) / (x * x - 1)
            dx = p1 / dp
            x = x - dx
            if abs(dx) < real_pow2(-bits):
                break
        p0, p1 = mpfr(1), x
        for k in range(2, m + 1):
            p0, p1 = p1, ((2 * k - 1) * x * p1 - (k - 1) * p0) / k
        dp = m * (x * p1 - p0) / (x * x - 1)
        w = 2 / ((1 - x * x) * dp * dp)
        nodes.append(x)
        weights.append(w)
    xs = [-x for x in nodes]
    ws = list(weights)
    if m % 2 == 1:
        xs = xs[:-1] + [mpfr(0)] + [x for x in reversed(nodes[:-1])]
        ws = ws[:-1] + [weights[-1]] + list(reversed(weights[:-1]))
    else:
        xs = xs + list(reversed(nodes))
        ws = ws + list(reversed(weights))
    result = (tuple(xs), tuple(ws))
    _GL_CACHE[key] = result
    return result


def default_panel_order() -> int:
    """Panel order scaled so bisection depth stays modest at high precision."""
    return max(16, min(256, current_precision() // 8))


@dataclass(frozen=True)
class QuadResult:
    value: mpfr
    error_estimate: mpfr
    panels: int


def _gl_panel(f, a, b, nodes, weights) -> mpfr:
    c = (a + b) / 2
    h = (b - a) / 2
    s = mpfr(0)
    for x, w in zip(nodes, weights):
        s += w * f(c + h * x)
    return s * h


def adaptive_quadrature(f: Callable, a, b, target_abs_err, *,
                        order: int | None = None,
                        max_panels: int = 4096) -> QuadResult:
    """Integrate f over [a,b] to an absolute error target.

    Adaptive panel bisection; each panel compares one Gauss-Legendre pass
    against its two-half refinement and splits until the difference fits in
    the per-panel share of the target.  Raises QuadratureBudgetError when the
    panel budget runs out.
    """
    a = real(a)
    b = real(b)
    target = real(target_abs_err)
    if not target > 0:
        raise ContractViolation("target_abs_err must be positive")
    if a == b:
        return QuadResult(mpfr(0), mpfr(0), 0)
    m = order if order is not None else default_panel_order()
    nodes, weights = gauss_legendre_nodes(m)
    total = mpfr(0)
    err_total = mpfr(0)
    panels = 0
    width = b - a
    rel_floor = real_pow2(-(current_precision() - 24))
    stack = [(a, b, _gl_panel(f, a, b, nodes, weights))]
    while stack:
        lo, hi, coarse = stack.pop()
        mid = (lo + hi) / 2
        left = _gl_panel(f, lo, mid, nodes, weights)
        right = _gl_panel(f, mid, hi, nodes, weights)
        fine = left + right
        err = abs(fine - coarse)
        share = target * ((hi - lo) / width)
        if (err <= share
                or err <= (abs(left) + abs(right)) * rel_floor
                or hi - lo <= abs(width) * real_pow2(-current_precision() + 8)):
            total += fine
            err_total += err
            panels += 2
            if panels > max_panels:
                raise QuadratureBudgetError(
                    f"quadrature exceeded {max_panels} panels on [{a},{b}]")
        else:
            panels += 2
            if panels > max_panels:
                raise QuadratureBudgetError(
                    f"quadrature exceeded {max_panels} panels on [{a},{b}]")
            stack.append((lo, mid, left))
            stack.append((mid, hi, right))
    return QuadResult(total, err_total, panels)


def bracketed_root(f: Callable, lo, hi, tol, df: Callable | None = None) -> mpfr:
    """Root of a monotone f on [lo,hi] with |f| resolved to tol.

    Bisection guarantees termination; when df is supplied, Newton steps are
    taken whenever they stay inside the current bracket.
    """
    lo = real(lo)
    hi = real(hi)
    tol = real(tol)
    flo = f(lo)
    fhi = f(hi)
    if gmpy2.is_zero(flo):
        return lo
    if gmpy2.is_zero(fhi):
        return hi
    if (flo > 0) == (fhi > 0):
        raise BracketError(f"no sign change on [{lo}, {hi}]: f={flo}, {fhi}")
    x = (lo + hi) / 2
    limit = 4 * current_precision()
    for _ in range(limit):
        fx = f(x)
        if abs(fx) <= tol:
            return x
        if (fx > 0) == (fhi > 0):
            hi, fhi = x, fx
        else:
            lo, flo = x, fx
        nxt = None
        if df is not None:
            d = df(x)
            if not gmpy2.is_zero(d):
                cand = x - fx / d
                if lo < cand < hi:
                    nxt = cand
        x = nxt if nxt is not None else (lo + hi) / 2
        if hi - lo <= abs(x) * real_pow2(-current_precision() + 4) + real_pow2(-current_precision() * 4):
            return x
    return x
