import math

import numpy as np
import pytest

from boxgas.errors import PreconditionError
from boxgas.model import IntensitySequence, interaction_field
from boxgas.varfree import (
    MacroDistribution,
    MassSequence,
    alt_derivative_poisson,
    chi_bounds,
    el_fixed_point,
    el_functional,
    free_energy_record,
    free_gas_chi,
    poisson_exp_phi,
    product_ansatz_min,
    product_ansatz_phi,
    relative_entropy,
    second_differences,
)

from conftest import free_model, reference_model

REF = reference_model()
Q = REF.intensity


def test_relative_entropy_examples():
    assert relative_entropy(Q.array(40), Q) == pytest.approx(Q.tail_sum(40), abs=1e-15)
    assert relative_entropy([], Q) == pytest.approx(1.0)
    assert relative_entropy([1.0], Q) == pytest.approx(0.6931472, abs=1e-7)
    assert relative_entropy([1.0], Q) == pytest.approx(0.5 - 1 + math.log(2) + 0.5, abs=1e-15)


def test_relative_entropy_infinite_flag():
    q = IntensitySequence.explicit([0.5], tail_bound=0.0)
    assert relative_entropy([0.2], q) >= 0
    with pytest.raises(PreconditionError):
        relative_entropy([0.2, 0.1], q)


def test_mass_types():
    m = MassSequence([0.5, 0.25])
    assert m.K == 2 and m.rho_mi == 1.0
    with pytest.raises(PreconditionError):
        MassSequence([-0.1])
    psi = MacroDistribution({0: 0.25, 2: 0.75})
    assert psi.rho_ma == 1.5
    with pytest.raises(PreconditionError):
        MacroDistribution({0: 0.5})


def test_free_gas_examples():
    sol = free_gas_chi(2.0, Q)
    assert sol.chi == 0.0 and sol.alpha == 0.0
    sol = free_gas_chi(1.0, Q)
    assert sol.alpha == pytest.approx(-0.2692763, abs=1e-6)
    assert sol.chi == pytest.approx(0.1126897, abs=1e-6)
    ks = np.arange(1, sol.m.K + 1)
    assert ks @ sol.m.values + sol.tail_mass == pytest.approx(1.0, abs=1e-10)
    assert free_gas_chi(0.0, Q).chi == pytest.approx(1.0)
    assert free_gas_chi(1e-9, Q).chi == pytest.approx(1.0, abs=1e-7)


def test_free_gas_convex_decreasing():
    grid = np.linspace(0.05, 2.5, 50)
    chis = [free_gas_chi(r, Q).chi for r in grid]
    assert np.all(np.diff(chis) <= 1e-14)
    assert np.all(second_differences(chis) >= -1e-12)


def test_free_gas_slope_is_alpha():
    for rho in (0.2, 0.7, 1.5):
        h = 1e-5
        fd = (free_gas_chi(rho + h, Q).chi - free_gas_chi(rho - h, Q).chi) / (2 * h)
        assert fd == pytest.approx(free_gas_chi(rho, Q).alpha, abs=1e-6)


def test_free_gas_slope_diverges_logarithmically():
    # near zero the slope behaves like log(rho / q_1)
    for rho in (1e-4, 1e-6, 1e-8):
        alpha = free_gas_chi(rho, Q).alpha
        assert alpha == pytest.approx(math.log(rho / 0.5), abs=1e-3)


def test_bounds_examples():
    lo, hi, ok = chi_bounds(1.0, REF)
    assert ok and lo == pytest.approx(2.1126897, abs=1e-6) and hi == pytest.approx(4.1126897, abs=1e-6)
    lo, hi, _ = chi_bounds(0.7, free_model())
    assert lo == hi == free_gas_chi(0.7, Q).chi
    lo, hi, _ = chi_bounds(0.0, REF)
    assert lo == hi == pytest.approx(1.0)


def test_product_ansatz_examples():
    fg = free_gas_chi(1.0, Q, tol=0.0, kmax=200).m
    assert product_ansatz_phi(fg, 0, REF) == pytest.approx(3.4946557, abs=1e-6)
    m = [0.2, 0.1, 0.03]
    assert product_ansatz_phi(m, 0, free_model()) == pytest.approx(relative_entropy(m, Q), abs=1e-15)


def test_product_ansatz_min_is_minimum():
    res = product_ansatz_min(0.8, REF, K=40)
    assert res.m.rho_mi == pytest.approx(0.8, abs=1e-10)
    rng = np.random.default_rng(3)
    ks = np.arange(1, 41)
    for _ in range(50):
        z = rng.standard_normal(40)
        z -= (z @ (ks * res.m.values)) / ((ks * res.m.values) @ (ks * res.m.values)) * ks * res.m.values
        pert = res.m.values * (1 + 1e-3 * z / np.max(np.abs(z)))
        assert product_ansatz_phi(pert, 0, REF) >= res.value - 1e-14
    h = 1e-5
    fd = (product_ansatz_min(0.8 + h, REF, 40).value - product_ansatz_min(0.8 - h, REF, 40).value) / (2 * h)
    assert fd == pytest.approx(res.slope, abs=1e-5)


def test_poisson_exp_phi_trivial():
    assert poisson_exp_phi([], 3, REF, -2) == 1.0
    assert poisson_exp_phi([0.3, 0.2], 3, free_model(), +2) == 1.0
    with pytest.raises(PreconditionError):
        poisson_exp_phi([0.3], 1, REF, 1.0)


def test_poisson_exp_phi_monte_carlo():
    m = [0.3, 0.1, 0.05]
    k = 2
    exact = poisson_exp_phi(m, k, REF, -2)
    rng = np.random.default_rng(11)
    n = 400_000
    phi = np.zeros(n)
    for l, ml in enumerate(m, start=1):
        _, vals = interaction_field(k, l, REF)
        counts = rng.poisson(ml, size=(n, len(vals)))
        phi += counts @ vals
    mc = np.exp(-2 * phi).mean()
    assert abs(mc - exact) < 1e-3
    closed = math.exp(sum(ml * np.expm1(-2 * interaction_field(k, l, REF)[1]).sum() for l, ml in enumerate(m, 1)))
    assert exact == pytest.approx(closed, rel=1e-13)


def test_el_reduces_to_free_gas():
    sol = el_fixed_point(1.0, MacroDistribution.delta(0), 60, free_model())
    assert sol.residual < 1e-10
    fg = free_gas_chi(1.0, Q)
    assert sol.alpha == pytest.approx(fg.alpha, abs=1e-9)
    n = min(len(fg.m.values), 60)
    assert np.allclose(sol.m.values[:n], fg.m.values[:n], rtol=1e-8, atol=1e-15)


def test_el_zero_density_flag():
    sol = el_fixed_point(1.0, MacroDistribution.delta(1), 20, REF)
    assert sol.alpha == -math.inf and not sol.m.values.any()
    assert sol.to_json()["alpha"] is None
    with pytest.raises(PreconditionError):
        el_fixed_point(0.5, MacroDistribution.delta(1), 20, REF)


def test_el_interacting_positive_and_constrained():
    for psi in (MacroDistribution.delta(0), MacroDistribution({0: 0.5, 1: 0.5})):
        m, alpha, res = el_fixed_point(1.2, psi, 40, REF)
        assert res < 1e-10 and np.all(m.values > 0)
        assert m.rho_mi == pytest.approx(1.2 - psi.rho_ma, abs=1e-9)


def _perturb(m, count, eps, seed):
    rng = np.random.default_rng(seed)
    w = np.arange(1, len(m) + 1) * m
    for _ in range(count):
        z = rng.standard_normal(len(m))
        z -= (z @ w) / (w @ w) * w
        yield m * (1.0 + eps * z / np.max(np.abs(z)))


def test_el_point_is_stationary_for_el_functional():
    psi = MacroDistribution.delta(0)
    sol = el_fixed_point(0.5, psi, 40, REF, tol=1e-13)
    f0 = el_functional(sol.m.values, psi, REF)
    # first-order terms vanish: every perturbation changes F only at second order
    diffs = [el_functional(p, psi, REF) - f0 for p in _perturb(sol.m.values, 100, 1e-3, 5)]
    # F is convex here, so the stationary point is also not beaten by any perturbation
    assert all(-1e-13 < dv < 1e-6 * f0 for dv in diffs)
    # along a density-preserving direction the odd part of F vanishes
    step = next(_perturb(sol.m.values, 1, 1e-3, 9)) - sol.m.values
    odd = el_functional(sol.m.values + step, psi, REF) - el_functional(sol.m.values - step, psi, REF)
    assert abs(odd) < 1e-2 * min(diffs)


def test_alt_derivative():
    fg = free_gas_chi(1.0, Q, tol=0.0, kmax=30)
    psi = MacroDistribution.delta(0)
    for k in (1, 4, 9):
        r = alt_derivative_poisson(fg.m.values, psi, k, free_model())
        assert r.discrepancy == 0.0
        assert r.primary == pytest.approx(fg.alpha * k, abs=1e-12)
    m, _, _ = el_fixed_point(1.0, psi, 30, REF)
    r = alt_derivative_poisson(m.values, psi, 2, REF)
    assert abs(r.discrepancy) > 1e-3


def test_free_energy_record():
    rec = free_energy_record(1.0, REF, K=40)
    assert rec["chi_free"] == pytest.approx(0.1126897, abs=1e-6)
    assert rec["bounds"]["lower_valid"] and rec["el_solution"]["residual"] < 1e-10


def test_poisson_exp_phi_single_term():
    expect = math.exp(0.1 * ((math.exp(-2) - 1) + 2 * (math.exp(-1) - 1)))
    assert poisson_exp_phi([0.1], 1, REF, -2) == pytest.approx(expect, rel=1e-14)
