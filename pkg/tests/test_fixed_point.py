import math

import numpy as np
import pytest

from irglab.fixed_point import (IterationConfig, Status, negative_solution, phi_step, progeny_gf,
                                r_kappa, r_transformed, scalar_r_closed_form, survival_prob)
from irglab.kernel import TypeSpace, build_kernel, constant_kernel, operator_norm, tilt_measure

from oracles import (bisect, random_kernel_matrix, scalar_lower_root, scalar_survival,
                     scalar_upper_root)

BIS = 1e-9


def test_iteration_config_validation():
    with pytest.raises(ValueError):
        IterationConfig(tol=0)
    with pytest.raises(ValueError):
        IterationConfig(diverge_threshold=1.0)
    with pytest.raises(ValueError):
        IterationConfig(max_iter=0)


def test_phi_step():
    k = constant_kernel(0.5)
    assert phi_step(k, 1.7, [1.0]) == pytest.approx([1.7])
    assert phi_step(k, 1.2, [1.2]) == pytest.approx([1.2 * math.exp(0.1)], rel=1e-15)
    assert phi_step(k, 1.0, [1.0]) == pytest.approx([1.0])
    assert phi_step(k, 1.2, [1.2])[0] == pytest.approx(1.32621, abs=1e-5)


def test_progeny_gf_examples():
    k = constant_kernel(0.5)
    out = progeny_gf(k, 1.0)
    assert out.status is Status.CONVERGED and out.iterations == 1
    np.testing.assert_array_equal(out.h, [1.0])

    out = progeny_gf(k, 1.1)
    assert out.converged
    assert out.h[0] == pytest.approx(scalar_lower_root(0.5, 1.1), abs=1e-10)
    assert out.residual <= 1e-12

    assert progeny_gf(k, 1.3).status is Status.DIVERGED


def test_progeny_gf_undetermined_at_cap():
    out = progeny_gf(constant_kernel(0.5), 1.2, IterationConfig(max_iter=3))
    assert out.status is Status.UNDETERMINED and out.h is None


def test_progeny_gf_rejects_z_below_one():
    with pytest.raises(ValueError):
        progeny_gf(constant_kernel(0.5), 0.9)


def test_scalar_closed_form():
    assert scalar_r_closed_form(1.0) == 1.0
    assert scalar_r_closed_form(2.0) == 1.0
    assert scalar_r_closed_form(0.5) == pytest.approx(1.2130613, abs=1e-7)


@pytest.mark.parametrize("c", [0.2, 0.5])
def test_closed_form_is_tangency(c):
    # independent check: at z = r the fixed point g = 1/c is a double root
    r = scalar_r_closed_form(c)
    g = 1.0 / c
    assert g == pytest.approx(r * math.exp(c * (g - 1)), rel=1e-14)
    assert r * c * math.exp(c * (g - 1)) == pytest.approx(1.0, rel=1e-14)


@pytest.mark.parametrize("c", [0.1, 0.3, 0.5, 0.7, 0.9, 0.95])
def test_r_kappa_scalar(c):
    est = r_kappa(constant_kernel(c), bis_tol=BIS)
    assert est.lo <= est.hi and est.hi - est.lo <= BIS
    assert est.lo >= 1
    assert est.mid == pytest.approx(scalar_r_closed_form(c), abs=1e-7)


@pytest.mark.parametrize("c", [1.0, 1.5, 2.0])
def test_r_kappa_at_or_above_criticality(c):
    est = r_kappa(constant_kernel(c), bis_tol=BIS)
    assert est.lo == 1.0 and est.hi <= 1.0 + BIS


def test_r_kappa_supercritical_multitype():
    k = build_kernel({"builder": "rank1", "phi": [1, 2]}, TypeSpace([1, 2], [0.5, 0.5]))
    assert operator_norm(k) > 1
    est = r_kappa(k, bis_tol=BIS)
    assert est.lo == 1.0 and est.hi <= 1 + BIS


def test_r_kappa_saturates_for_tiny_kernel():
    est = r_kappa(constant_kernel(1e-4), bis_tol=1e-3)
    assert est.saturated and est.hi == 64.0


def test_r_kappa_lo_is_certified():
    k = random_kernel_matrix(np.random.default_rng(7), 3, target_norm=0.6)
    est = r_kappa(k, bis_tol=1e-6)
    assert progeny_gf(k, est.lo).converged
    assert not progeny_gf(k, est.hi + 1e-6).converged


def test_survival_examples():
    assert survival_prob(constant_kernel(0.5)).rho_aggregate == pytest.approx(0.0, abs=1e-12)
    assert survival_prob(constant_kernel(1.0)).rho_aggregate == 0.0
    res = survival_prob(constant_kernel(2.0))
    assert res.rho_aggregate == pytest.approx(scalar_survival(2.0), abs=1e-10)
    assert res.rho_aggregate == pytest.approx(0.7968121, abs=1e-7)
    assert res.residual <= 1e-12 and res.monotone


def test_survival_multitype_solves_equation():
    space = TypeSpace([1, 2], [0.5, 0.5])
    k = build_kernel({"builder": "rank1", "phi": [1, 2]}, space)
    res = survival_prob(k)
    f = res.rho
    assert np.all((0 <= f) & (f <= 1)) and np.all(f > 0)
    np.testing.assert_allclose(f, 1 - np.exp(-(k.matrix @ (f * space.weights))), atol=1e-12)
    assert res.rho_aggregate == pytest.approx(f @ space.weights)


def test_negative_solution_examples():
    sol = negative_solution(constant_kernel(0.5))
    assert sol is not None
    g_star = bisect(lambda g: g - math.exp(0.5 * (g - 1)), 3.5, 3.55)
    assert sol.f[0] == pytest.approx(1 - g_star, abs=1e-9)
    assert sol.f[0] == pytest.approx(-2.513, abs=1e-3)
    assert negative_solution(constant_kernel(1.0)) is None
    assert negative_solution(constant_kernel(2.0)) is None


@pytest.mark.parametrize("c", [1.0, 2.0])
def test_no_negative_root_by_sign_scan(c):
    # oracle for the absent cases: F(f) = f - 1 + exp(-c f) stays positive on f < 0
    fs = -np.logspace(-6, 2, 2000)
    assert np.all(fs - 1 + np.exp(-c * fs) > 0)


@pytest.mark.parametrize("c", [0.2, 0.5, 0.8])
def test_negative_solution_scalar_grid(c):
    sol = negative_solution(constant_kernel(c))
    assert sol.f[0] == pytest.approx(1 - scalar_upper_root(c), abs=1e-8)
    assert sol.residual <= 1e-10 and sol.f.max() <= -1e-6


def test_transformed_identity():
    k = random_kernel_matrix(np.random.default_rng(2), 3, target_norm=0.5)
    base = r_kappa(k, bis_tol=1e-8)
    t = r_transformed(k, {"kind": "tilt", "q": 0.0, "c": 1.0}, bis_tol=1e-8)
    d = r_transformed(k, {"kind": "truncate", "D": 3, "c": 1.0}, bis_tol=1e-8)
    assert (t.lo, t.hi) == (base.lo, base.hi)
    assert (d.lo, d.hi) == (base.lo, base.hi)


def test_transformed_scalar_tilt():
    est = r_transformed(constant_kernel(0.5), {"kind": "tilt", "q": 0.0, "c": 1.1}, bis_tol=1e-9)
    assert est.mid == pytest.approx(math.exp(-0.45) / 0.55, abs=1e-8)


def test_transformed_rejects_weak_tilt():
    k = random_kernel_matrix(np.random.default_rng(2), 3, target_norm=0.5)
    with pytest.raises(ValueError):
        r_transformed(k, {"kind": "tilt", "q": 0.5, "c": 1.0})


# -- properties ---------------------------------------------------------------

@pytest.mark.parametrize("seed", range(10))
def test_r_nonincreasing_in_scale(seed):
    rng = np.random.default_rng(seed)
    k = random_kernel_matrix(rng, int(rng.integers(1, 3)), target_norm=1.0)
    rs = [r_kappa(k.scaled(c), bis_tol=1e-8).mid for c in (0.3, 0.5, 0.7, 0.9)]
    assert all(b <= a + 1e-8 for a, b in zip(rs, rs[1:]))


@pytest.mark.parametrize("seed", range(5))
def test_truncation_radius_nonincreasing_in_D(seed):
    k = random_kernel_matrix(np.random.default_rng(seed), 4, target_norm=0.7)
    rs = []
    for D in k.space.labels:
        md = float(np.sum(k.space.weights[:D]))
        rs.append(r_transformed(k, {"kind": "truncate", "D": D, "c": md}, bis_tol=1e-8))
    base = r_kappa(k, bis_tol=1e-8)
    assert all(b.lo <= a.hi + 1e-8 for a, b in zip(rs, rs[1:]))
    assert (rs[-1].lo, rs[-1].hi) == (base.lo, base.hi)


@pytest.mark.parametrize("seed", range(10))
def test_duality_direction(seed):
    rng = np.random.default_rng(seed)
    k = random_kernel_matrix(rng, 3, target_norm=float(rng.uniform(0.2, 1.6)))
    sol = negative_solution(k)
    if sol is not None:
        assert r_kappa(k, bis_tol=BIS).lo > 1 + BIS


def test_tilt_sandwich(two_type_c3):
    k = two_type_c3
    base = r_kappa(k, bis_tol=BIS)
    for q in (0.05, 0.1):
        _, m = tilt_measure(k, q)
        t = r_transformed(k, {"kind": "tilt", "q": q, "c": 1 / m}, bis_tol=BIS)
        assert t.lo <= base.hi + BIS
        assert t.mid < base.mid
