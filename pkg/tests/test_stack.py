"""Deformed fields, conjugated flows, difference formulas, norm machinery."""

import random

import gmpy2
import pytest
from gmpy2 import mpfr

from liouflow.basefield import BaseField, build_coeffs
from liouflow.bumps import make_bumps, profile_norm
from liouflow.calculus import jet_L, real, real_pow2, working_precision
from liouflow.flow import TravelTimeChart, orbit_points
from liouflow.stack import GridPolicy, Tower

BITS = 320
QS = [4, 8, 32, 64]
T_IN_H = "21/64"  # inside both gap families of stages 1 (q=4) and 2 (q=8)


@pytest.fixture(scope="module")
def world():
    with working_precision(BITS):
        kit = make_bumps(8)
        field = BaseField(build_coeffs(QS, kit), kit)
        chart = TravelTimeChart(field)
        orbit = orbit_points(chart, 3)
        tower = Tower(field, chart, orbit, policy=GridPolicy().light())
        tower.build_stage(1)
        tower.build_stage(2)
        yield field, chart, orbit, tower


def test_nu_k_below_supports_is_nu0(world):
    field, chart, orbit, tower = world
    with working_precision(BITS):
        x = real_pow2(-4) * mpfr("1.1")  # band 3, below both stage supports
        a = tower.nu_k_jet(2, x, 3)
        b = field.jet(x, 3)
        assert all(u == v for u, v in zip(a.coeffs, b.coeffs))


def test_Dnu_at_marked_points(world):
    field, chart, orbit, tower = world
    with working_precision(BITS):
        co = field.coeffs
        for l in (1, 2):
            a_i = orbit.point(orbit.i[l])
            d = tower.nu_k_jet(2, a_i, 1).coeffs[1]
            expect = sum(co.u_at(n) * co.q(n) ** 2 / co.v_at(n) for n in range(l, 3))
            assert abs(d / expect - 1) <= real_pow2(-(BITS // 4))
        # cross-check first derivative against the pullback-derivative formula
        a_i = orbit.point(orbit.i[1])
        hj = tower.stack.h_jet(a_i, 2, upto=2)
        lh = jet_L(tower.stack.h_jet(a_i, 3, upto=2)).value
        rhs = field.jet(hj.value, 1).coeffs[1] - field.value(hj.value) * lh / hj.coeffs[1]
        assert abs(tower.nu_k_jet(2, a_i, 1).coeffs[1] - rhs) <= abs(rhs) * real_pow2(-(BITS // 2))


def test_Dnu_zero_at_b_points(world):
    field, chart, orbit, tower = world
    with working_precision(BITS):
        t = real(21) / 64
        for l in (1, 2):
            b = orbit.b_point(t, orbit.i[l])
            j = tower.nu_k_jet(2, b, 1)
            # h is untouched at b (gap translate), nu0 flat on the shallow plateau
            assert gmpy2.is_zero(j.coeffs[1])


def test_flow_k_basics_and_group_law(world):
    field, chart, orbit, tower = world
    rng = random.Random(5)
    with working_precision(BITS):
        a_j2 = orbit.point(orbit.j[2])
        v2 = field.coeffs.v_at(2)
        tol = real_pow2(-(BITS // 2) + 8)
        for _ in range(20):
            x = a_j2 + rng.random() * v2 / 2
            assert tower.flow_k(2, 0, x) == x
            s = real(rng.randint(1, 8)) / 16
            t = real(rng.randint(1, 8)) / 16
            y1 = tower.flow_k(2, s, tower.flow_k(2, t, x))
            y2 = tower.flow_k(2, s + t, x)
            assert abs(y1 - y2) <= tol


def test_difference_formulas(world):
    field, chart, orbit, tower = world
    with working_precision(BITS):
        k = 2
        g = tower.stage(k)
        q = g.q
        t = real(1) / q
        a_j = g.a_j
        tol = real_pow2(-(BITS // 2))
        # on J_k: f_k^t - f_{k-1}^t = gamma_k
        for fs in ("-0.2", "0.0", "0.1", "0.24"):
            x = a_j + mpfr(fs) * g.v / q
            d = tower.flow_k(k, t, x) - tower.flow_k(k - 1, t, x)
            assert abs(d - g.gamma_jet(x, 0).value) <= tol
        # outside M_k: difference vanishes
        for x in (a_j - g.v / q, orbit.point(orbit.j[1]), mpfr("0.8")):
            d = tower.flow_k(k, t, x) - tower.flow_k(k - 1, t, x)
            assert abs(d) <= tol
        # phi_k^{1/q} - f0^{1/q} = gamma_k everywhere, including far tiles
        for fs in ("0.1", "1.5", "5.03125", "7.4"):
            x = a_j + mpfr(fs) * g.v / q
            d = tower.phi_k_eval(k, t, x) - chart.flow(t, x)
            assert abs(d - g.gamma_jet(x, 0).value) <= tol


def test_fixed_point_stepstone(world):
    field, chart, orbit, tower = world
    rng = random.Random(11)
    with working_precision(BITS):
        k = 2
        g = tower.stage(k)
        worst = mpfr(0)
        for _ in range(25):
            x = g.a_j + (rng.random() - mpfr(1) / (4 * g.q)) * g.v
            num = abs(tower.flow_k(k, 1, x) - tower.flow_k(k - 1, 1, x))
            den = abs(chart.flow(1, x) - x)
            worst = max(worst, num / den)
        assert worst <= real_pow2(-(k + 2)) * (1 + real_pow2(-10))


def test_L_formula_two_ways(world):
    field, chart, orbit, tower = world
    with working_precision(BITS):
        k, t = 2, real(21) / 64
        for x in (orbit.point(orbit.j[2]) + field.coeffs.v_at(2) / 64,
                  orbit.point(orbit.i[2]) + field.coeffs.u_at(2) / 64):
            fj = tower.flow_k_jet(k, t, x, 3)
            lhs = jet_L(fj).value
            y = fj.value
            dnu_y = tower.nu_k_jet(k, y, 1).coeffs[1]
            dnu_x = tower.nu_k_jet(k, x, 1).coeffs[1]
            nu_x = tower.nu_k_jet(k, x, 0).value
            rhs = (dnu_y - dnu_x) / nu_x
            scale = max(abs(lhs), abs(rhs), real_pow2(-40))
            assert abs(lhs - rhs) <= scale * real_pow2(-(BITS // 4))


def test_norm_diff_maps(world):
    field, chart, orbit, tower = world
    with working_precision(BITS):
        k = 2
        g = tower.stage(k)
        t = real(1) / g.q
        # t = 0 control: identically zero
        est0 = tower.norm_diff_maps(k, 0, k, refine=False)
        assert est0.value <= real_pow2(-(BITS // 2))
        # special time: equals ||gamma_k||_r computed from the profile table
        for r in (1, 2):
            est = tower.norm_diff_maps(k, t, r)
            expect = mpfr(0)
            for m in range(r + 1):
                expect = max(expect, g.u * (mpfr(g.q) / g.v) ** m
                             * profile_norm(field.kit, "gamma", m))
            assert abs(est.value / expect - 1) <= mpfr("1e-6")
            assert est.status == "stable"
        # ||gamma_k||_k = 2^-k-4 exactly by construction
        est = tower.norm_diff_maps(k, t, k)
        assert abs(est.value / real_pow2(-(k + 4)) - 1) <= mpfr("1e-6")


def test_norm_field_flow(world):
    field, chart, orbit, tower = world
    with working_precision(BITS):
        est = tower.norm_field_flow(0, 0)
        assert est.value < 1  # composition with a bijection preserves the sup
        est1 = tower.norm_field_flow(0, 1)
        assert est1.value < 1 and est1.status == "stable"
        est2 = tower.norm_field_flow(1, 1)
        assert est2.value > 0 and est2.status == "stable"
        rec = est2.as_record()
        assert rec["quantity"] == "field_flow" and rec["k"] == 1
