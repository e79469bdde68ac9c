"""Coefficient table and initial-field geometry tests."""

import gmpy2
import pytest
from gmpy2 import mpfr

from liouflow.basefield import BaseField, build_coeffs, nu0_jet, plateau_of
from liouflow.bumps import make_bumps, profile_norm
from liouflow.calculus import real, real_pow2, working_precision
from liouflow.errors import ContractViolation, DomainTruncationError

BITS = 256
QS = [4, 8, 32, 64, 128]


@pytest.fixture(scope="module")
def field():
    with working_precision(BITS):
        kit = make_bumps(8)
        yield BaseField(build_coeffs(QS, kit), kit)


def test_v_values_exact(field):
    with working_precision(BITS):
        assert field.coeffs.v_at(1) == real_pow2(-16)
        assert field.coeffs.v_at(2) == real_pow2(-25)
        assert field.coeffs.v_at(3) == real_pow2(-36)


def test_u1_formula_cross_check(field):
    with working_precision(BITS):
        g1 = profile_norm(field.kit, "gamma", 1)
        expected = real_pow2(-5) / 4 * real_pow2(-16) / g1
        got = field.coeffs.u_at(1)
        assert abs(got - expected) <= real_pow2(-BITS + 8) * expected
        pow2, q, n, gnorm = field.coeffs.u_factored(1)
        assert (pow2, q, n) == (-21, 4, 1) and gnorm == g1


def test_u_over_v_bound(field):
    with working_precision(BITS):
        for n in range(1, field.coeffs.n_max + 1):
            ratio = field.coeffs.u_at(n) / field.coeffs.v_at(n)
            assert 0 < ratio <= real_pow2(-(n + 2))


def test_increasing_q_required(field):
    with working_precision(BITS):
        with pytest.raises(ContractViolation):
            build_coeffs([4, 4], field.kit)
        with pytest.raises(ContractViolation):
            build_coeffs([8, 2], field.kit)


def test_tail_and_plateau_jets(field):
    with working_precision(BITS):
        j = nu0_jet(field, real(3) / 4, 4)
        assert j.coeffs[0] == -field.coeffs.u_at(1)
        assert all(gmpy2.is_zero(c) for c in j.coeffs[1:])
        # x = 2^-n sits on the shallow plateau of band n
        for n in (2, 3):
            j = nu0_jet(field, real_pow2(-n), 4)
            assert j.coeffs[0] == -field.coeffs.u_at(n)
            assert all(gmpy2.is_zero(c) for c in j.coeffs[1:])
        # deep plateau midpoint of band n
        for n in (1, 2, 3):
            x = real_pow2(-n - 1) + real_pow2(-n - 2)
            j = nu0_jet(field, x, 4)
            assert j.coeffs[0] == -field.coeffs.v_at(n)
            assert all(gmpy2.is_zero(c) for c in j.coeffs[1:])


def test_plateau_descriptors(field):
    with working_precision(BITS):
        n = 2
        p = plateau_of(field, real_pow2(-n - 1) + real_pow2(-n - 2))
        assert p.kind == "deep" and p.band == n
        assert p.lo == real_pow2(-n - 1) + real_pow2(-n - 3)
        assert p.hi == real_pow2(-n) - real_pow2(-n - 3)
        p = plateau_of(field, real_pow2(-n))
        assert p.kind == "shallow" and p.band == n
        assert p.lo == real_pow2(-n) - real_pow2(-n - 4)
        assert p.hi == real_pow2(-n) + real_pow2(-n - 3)
        eps = real_pow2(-40)
        # just past the deep plateau's right edge, inside the falling transition
        p = plateau_of(field, real_pow2(-n) - real_pow2(-n - 3) + eps)
        assert p.kind == "transition"
        # the edge itself still belongs to the closed deep plateau
        assert plateau_of(field, real_pow2(-n) - real_pow2(-n - 3)).kind == "deep"


def test_band_boundary_continuity(field):
    with working_precision(BITS):
        for n in (1, 2, 3):
            x = real_pow2(-n - 1)  # boundary between band n and band n+1
            ja = field.band_formula_jet(n, x, 8)
            jb = field.band_formula_jet(n + 1, x, 8)
            for a, b in zip(ja.coeffs, jb.coeffs):
                assert abs(a - b) <= real_pow2(-BITS + 16) * max(mpfr(1), abs(a))


def test_transition_matches_finite_difference(field):
    with working_precision(BITS):
        # interior of trans_L of band 2: [0.140625, 0.15625]
        x = mpfr("0.148")
        h = real_pow2(-(BITS // 4))
        d1 = nu0_jet(field, x, 1).coeffs[1]
        fd = (field.value(x + h) - field.value(x - h)) / (2 * h)
        assert abs(d1 - fd) <= mpfr(10) ** 6 * h * h + real_pow2(-BITS + 32)


def test_sign_and_flatness(field):
    with working_precision(BITS):
        assert field.value(0) == 0
        xs = [mpfr("0.7"), mpfr("0.3"), mpfr("0.148"), mpfr("0.22"),
              real_pow2(-3), mpfr("0.06"), real_pow2(-5)]
        for x in xs:
            assert field.value(x) < 0
        # flatness proxy: |nu0| <= v_n on (0, 2^-n]
        for n in (1, 2, 3):
            for frac in ("1.0", "0.9", "0.65", "0.55"):
                x = real_pow2(-n) * mpfr(frac)
                assert abs(field.value(x)) <= field.coeffs.v_at(n) * (1 + real_pow2(-BITS + 8))


def test_global_c1_bound(field):
    with working_precision(BITS):
        # coarse sweep of |nu0| and |D nu0| across represented bands
        best = mpfr(0)
        for seg in field.segments():
            if seg.hi == mpfr("inf"):
                continue
            for i in range(9):
                x = seg.lo + (seg.hi - seg.lo) * i / 8
                if x == 0:
                    continue
                j = nu0_jet(field, x, 1)
                best = max(best, abs(j.coeffs[0]), abs(j.coeffs[1]))
        assert 0 < best < 1


def test_domain_truncation(field):
    with working_precision(BITS):
        with pytest.raises(DomainTruncationError):
            field.value(real_pow2(-10))
        with pytest.raises(ContractViolation):
            field.value(-1)
        assert field.value(field.x_min) < 0  # boundary itself is represented
