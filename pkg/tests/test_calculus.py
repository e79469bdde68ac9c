"""Jet engine and quadrature tests against independent exact oracles.

The oracles here deliberately avoid the code paths they check: polynomial
composition is expanded with exact Fraction arithmetic, series reversion is
solved by brute-force truncated-polynomial substitution, and integrals are
compared against midpoint Riemann sums at 10x resolution.
"""

import random
from fractions import Fraction

import gmpy2
import pytest
from gmpy2 import mpfr

from liouflow.calculus import (
    Jet,
    QuadResult,
    adaptive_quadrature,
    affine_jet,
    bracketed_root,
    const_jet,
    current_precision,
    from_hex,
    identity_jet,
    jet_compose,
    jet_exp,
    jet_from_taylor,
    jet_invert,
    jet_L,
    jet_recip,
    real,
    real_pow2,
    to_hex,
    working_precision,
)
from liouflow.errors import (
    BracketError,
    ContractViolation,
    InsufficientOrderError,
    QuadratureBudgetError,
    SingularJetError,
)

BITS = 256


# ---------------------------------------------------------------------------
# oracles
# ---------------------------------------------------------------------------

def poly_eval_derivs(coeffs, x, order):
    """Raw derivatives of sum c_i t^i at x, exact Fractions."""
    out = []
    cur = list(coeffs)
    for m in range(order + 1):
        out.append(sum(c * x ** i for i, c in enumerate(cur)))
        cur = [c * (i + 1) for i, c in enumerate(cur[1:])]
    return out


def poly_compose(outer, inner):
    """Coefficients of outer(inner(t)), exact Fractions."""
    result = [Fraction(0)]
    power = [Fraction(1)]
    for c in outer:
        result = [a + c * b for a, b in zip(result + [Fraction(0)] * len(power), power + [Fraction(0)] * len(result))]
        power = poly_mul(power, inner)
    return result


def poly_mul(p, q):
    out = [Fraction(0)] * (len(p) + len(q) - 1)
    for i, a in enumerate(p):
        for j, b in enumerate(q):
            out[i + j] += a * b
    return out


def series_revert(taylor, order):
    """Compositional inverse of t + c2 t^2 + ... by triangular substitution.

    taylor[0] must be 0 and taylor[1] nonzero.  Returns Taylor coefficients of
    the inverse up to 'order', exact Fractions.
    """
    assert taylor[0] == 0 and taylor[1] != 0
    inv = [Fraction(0), Fraction(1) / taylor[1]]
    for n in range(2, order + 1):
        # choose inv[n] so that [t^n] inv(f(t)) = 0
        cand = inv + [Fraction(0)]
        comp = poly_compose(cand, list(taylor[: n + 1]) + [Fraction(0)])
        inv.append(-comp[n] / (taylor[1] ** n))
    return inv


def fraction_jet(base, coeffs, order):
    derivs = poly_eval_derivs(coeffs, base, order)
    return Jet(real(base), tuple(real(d) for d in derivs))


def riemann_midpoint(f, a, b, n):
    h = (b - a) / n
    s = mpfr(0)
    for i in range(n):
        s += f(a + (i + real("0.5")) * h)
    return s * h


def rnd_fraction(rng, lo=-3, hi=3, den=8):
    return Fraction(rng.randint(lo * den, hi * den), den)


# ---------------------------------------------------------------------------
# jet composition (Faa di Bruno)
# ---------------------------------------------------------------------------

def test_compose_identity_left_and_right():
    with working_precision(BITS):
        j = Jet(mpfr(2), (mpfr("0.5"), mpfr(3), mpfr(-1), mpfr(7)))
        ident_outer = identity_jet(j.value, j.order)
        assert jet_compose(ident_outer, j).coeffs == j.coeffs
        ident_inner = identity_jet(j.base, j.order)
        out = jet_compose(Jet(j.base, j.coeffs), ident_inner)
        assert out.coeffs == j.coeffs


def test_compose_matches_symbolic_polynomial_expansion():
    rng = random.Random(20240811)
    with working_precision(BITS):
        for _ in range(100):
            deg = rng.randint(1, 3)
            inner = [rnd_fraction(rng) for _ in range(deg + 1)]
            outer = [rnd_fraction(rng) for _ in range(deg + 1)]
            x0 = rnd_fraction(rng, -2, 2)
            order = 4
            composed = poly_compose(outer, inner)
            expected = poly_eval_derivs(composed, x0, order)
            inner_jet = fraction_jet(x0, inner, order)
            y0 = poly_eval_derivs(inner, x0, 0)[0]
            outer_jet = fraction_jet(y0, outer, order)
            got = jet_compose(outer_jet, inner_jet)
            for m in range(order + 1):
                exp_m = real(expected[m])
                assert abs(got.coeffs[m] - exp_m) <= real_pow2(-BITS + 40) * max(mpfr(1), abs(exp_m))


def test_compose_contract_errors():
    with working_precision(BITS):
        a = identity_jet(0, 3)
        b = identity_jet(1, 3)
        with pytest.raises(ContractViolation):
            jet_compose(a, b)  # base mismatch: a.base=0 != b.value=1
        with pytest.raises(ContractViolation):
            jet_compose(identity_jet(0, 2), identity_jet(0, 3))


# ---------------------------------------------------------------------------
# jet inversion
# ---------------------------------------------------------------------------

def test_invert_linear_map():
    with working_precision(BITS):
        j = Jet(mpfr(0), (mpfr(0), mpfr(2), mpfr(0), mpfr(0)))
        inv = jet_invert(j)
        assert inv.base == 0 and inv.coeffs[0] == 0
        assert inv.coeffs[1] == mpfr("0.5")
        assert inv.coeffs[2] == 0 and inv.coeffs[3] == 0


def test_invert_identity():
    with working_precision(BITS):
        j = identity_jet(mpfr("0.75"), 5)
        inv = jet_invert(j)
        for m, c in enumerate(inv.coeffs):
            assert c == j.coeffs[m]


def test_invert_x_plus_x_squared_series():
    # inverse of t + t^2 is t - t^2 + 2 t^3 - ...; raw derivatives 1, -2, 12
    with working_precision(BITS):
        j = jet_from_taylor(0, [0, 1, 1], 3)
        inv = jet_invert(j)
        expected = jet_from_taylor(0, [0, 1, -1, 2], 3)
        for m in range(4):
            assert abs(inv.coeffs[m] - expected.coeffs[m]) <= real_pow2(-BITS + 16)


def test_invert_matches_reversion_oracle():
    rng = random.Random(77)
    with working_precision(BITS):
        for _ in range(100):
            order = rng.randint(2, 5)
            taylor = [Fraction(0), Fraction(rng.randint(1, 5), rng.choice([1, 2, 4]))]
            taylor += [rnd_fraction(rng, -2, 2, 4) for _ in range(order - 1)]
            expected = series_revert(taylor, order)
            j = jet_from_taylor(0, taylor, order)
            inv = jet_invert(j)
            fact = 1
            for m in range(order + 1):
                if m:
                    fact *= m
                exp_m = real(expected[m] * fact) if m < len(expected) else mpfr(0)
                assert abs(inv.coeffs[m] - exp_m) <= real_pow2(-BITS + 48) * max(mpfr(1), abs(exp_m))


def test_invert_two_sided_to_precision():
    rng = random.Random(123)
    with working_precision(BITS):
        for _ in range(50):
            coeffs = [mpfr(rng.randint(-8, 8)) / 4 for _ in range(6)]
            coeffs[1] = mpfr(rng.choice([1, 2, 3])) / 2
            j = Jet(mpfr(rng.randint(-4, 4)) / 4, tuple(coeffs))
            inv = jet_invert(j)
            round_trip = jet_compose(inv, j)
            ident = identity_jet(j.base, j.order)
            for m in range(j.order + 1):
                scale = max(mpfr(1), abs(ident.coeffs[m]))
                assert abs(round_trip.coeffs[m] - ident.coeffs[m]) <= real_pow2(-(BITS - 16)) * scale


def test_invert_singular_rejected():
    with working_precision(BITS):
        with pytest.raises(SingularJetError):
            jet_invert(Jet(mpfr(0), (mpfr(1), mpfr(0), mpfr(2))))


# ---------------------------------------------------------------------------
# L operator
# ---------------------------------------------------------------------------

def test_L_of_identity_and_affine_is_zero():
    with working_precision(BITS):
        assert all(c == 0 for c in jet_L(identity_jet(3, 4)).coeffs)
        assert all(c == 0 for c in jet_L(affine_jet(5, -2, mpfr("0.3"), 4)).coeffs)


def test_L_chain_rule_random():
    # L(h o g) = Lh o g * Dg + Lg
    rng = random.Random(4242)
    with working_precision(BITS):
        tol = real_pow2(-BITS // 2)
        for _ in range(100):
            order = rng.randint(3, 6)
            g = Jet(mpfr(rng.randint(-3, 3)) / 2,
                    tuple(mpfr(rng.randint(-12, 12)) / 8 for _ in range(order + 1)))
            if gmpy2.is_zero(g.coeffs[1]):
                g = Jet(g.base, (g.coeffs[0], mpfr(1)) + g.coeffs[2:])
            h = Jet(g.value,
                    tuple(mpfr(rng.randint(-12, 12)) / 8 for _ in range(order + 1)))
            if gmpy2.is_zero(h.coeffs[1]):
                h = Jet(h.base, (h.coeffs[0], mpfr(1)) + h.coeffs[2:])
            comp = jet_compose(h, g)
            lhs = jet_L(comp)
            Lh_at_g = jet_compose(jet_L(h), g.truncate(order - 2))
            Dg = g.derivative().truncate(order - 2)
            rhs = Lh_at_g * Dg + jet_L(g)
            for m in range(order - 1):
                scale = max(mpfr(1), abs(rhs.coeffs[m]))
                assert abs(lhs.coeffs[m] - rhs.coeffs[m]) <= tol * scale


def test_L_insufficient_order():
    with working_precision(BITS):
        with pytest.raises(InsufficientOrderError):
            jet_L(identity_jet(0, 1))


# ---------------------------------------------------------------------------
# elementary jet helpers
# ---------------------------------------------------------------------------

def test_jet_exp_against_closed_form():
    with working_precision(BITS):
        x = mpfr(1) / 3
        j = jet_exp(identity_jet(x, 5))
        e = gmpy2.exp(x)
        for m in range(6):
            assert abs(j.coeffs[m] - e) <= real_pow2(-BITS + 8) * e


def test_jet_recip_matches_division():
    with working_precision(BITS):
        j = Jet(mpfr(2), (mpfr(3), mpfr(1), mpfr(-2), mpfr(5)))
        r = jet_recip(j)
        prod = r * j
        assert abs(prod.coeffs[0] - 1) <= real_pow2(-BITS + 8)
        for m in range(1, 4):
            assert abs(prod.coeffs[m]) <= real_pow2(-BITS + 12)


# ---------------------------------------------------------------------------
# quadrature
# ---------------------------------------------------------------------------

def test_quadrature_constant_and_linear():
    with working_precision(BITS):
        r = adaptive_quadrature(lambda x: mpfr(1), 0, 1, real_pow2(-64))
        assert abs(r.value - 1) <= real_pow2(-60)
        r = adaptive_quadrature(lambda x: x, 0, 1, real_pow2(-64))
        assert abs(r.value - mpfr("0.5")) <= real_pow2(-60)


def _bump_speed(x):
    # smooth positive speed profile resembling a transition segment integrand
    if x <= 0 or x >= 1:
        return mpfr(1)
    s = gmpy2.exp(-1 / x) / (gmpy2.exp(-1 / x) + gmpy2.exp(-1 / (1 - x)))
    return 1 / (mpfr("1e-3") + s)


def test_quadrature_matches_riemann_oracle():
    with working_precision(BITS):
        target = real_pow2(-40)
        r = adaptive_quadrature(_bump_speed, 0, 1, target)
        oracle = riemann_midpoint(_bump_speed, mpfr(0), mpfr(1), 10 * 4096)
        # midpoint at n panels has error ~ |f''| / n^2; dominated by the oracle
        assert abs(r.value - oracle) <= mpfr("1e-4")


def test_quadrature_halving_target_never_worsens_oracle_gap():
    with working_precision(BITS):
        oracle = riemann_midpoint(_bump_speed, mpfr(0), mpfr(1), 10 * 2048)
        gaps = []
        target = real_pow2(-20)
        for _ in range(4):
            r = adaptive_quadrature(_bump_speed, 0, 1, target)
            gaps.append(abs(r.value - oracle))
            target /= 2
        for a, b in zip(gaps, gaps[1:]):
            assert b <= a * (1 + real_pow2(-12)) + real_pow2(-BITS + 32)


def test_quadrature_budget_error():
    with working_precision(BITS):
        with pytest.raises(QuadratureBudgetError):
            adaptive_quadrature(_bump_speed, 0, 1, real_pow2(-200), max_panels=4)


# ---------------------------------------------------------------------------
# root bracketing
# ---------------------------------------------------------------------------

def test_root_trivial_cases():
    with working_precision(BITS):
        assert abs(bracketed_root(lambda x: x - 1, 0, 2, real_pow2(-100)) - 1) <= real_pow2(-96)
        r = bracketed_root(lambda x: x ** 3 - 8, 0, 3, real_pow2(-100))
        assert abs(r - 2) <= real_pow2(-90)


def test_root_newton_agrees_with_pure_bisection():
    with working_precision(BITS):
        f = lambda x: gmpy2.exp(x) - 2
        df = lambda x: gmpy2.exp(x)
        tol = real_pow2(-120)
        a = bracketed_root(f, 0, 1, tol)
        b = bracketed_root(f, 0, 1, tol, df=df)
        assert abs(a - b) <= real_pow2(-110)


def test_root_bracket_error():
    with working_precision(BITS):
        with pytest.raises(BracketError):
            bracketed_root(lambda x: x + 10, 0, 1, real_pow2(-50))


# ---------------------------------------------------------------------------
# hex round trip
# ---------------------------------------------------------------------------

def test_hex_round_trip():
    with working_precision(BITS):
        vals = [mpfr(0), mpfr(1) / 3, -mpfr(7) / 11, real_pow2(-200), mpfr("1e40")]
        for v in vals:
            assert from_hex(to_hex(v)) == v
