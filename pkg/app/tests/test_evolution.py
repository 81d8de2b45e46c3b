"""
Evolution lab: identities under refinement, quadratic optima, inequalities and the cutoff
"""

import numpy as np
import pytest

from app.lab.errors import BadWindow, ConfigError, UnknownCase
from app.lab.evolution import (
    CutoffSpec,
    HParams,
    build_cutoff,
    check_cutoff,
    check_H_functional,
    check_laplacian_comparison,
    check_optimized_w_inequality,
    check_pressure_evolution,
    check_product_rule,
    check_superflow_inequality,
    check_w_evolution,
    gamma_optimum,
    gamma_quadratic,
    identity_case,
    matrix_lemma_bruteforce,
    omega_optimum,
    omega_quadratic,
    optimum_lattice,
)


def test_pressure_evolution_converges():
    report = check_pressure_evolution(identity_case("decay-sine"))
    assert report.passed
    assert report.orders[-1] >= 1.9


def test_pressure_evolution_is_exact_for_constant_data():
    report = check_pressure_evolution(identity_case("constant"))
    assert report.extras["exact"]
    assert report.passed


def test_w_evolution_converges():
    report = check_w_evolution(identity_case("static-sine"))
    assert report.passed


def test_product_rule():
    assert check_product_rule(identity_case("product")).passed


def test_product_rule_needs_both_profiles():
    with pytest.raises(ConfigError):
        check_product_rule(identity_case("static-sine"))


def test_unknown_identity_case():
    with pytest.raises(UnknownCase):
        identity_case("no-such-case")


def test_gamma_quadratic_example():
    assert gamma_quadratic(-1.0, 0.0, 2.0, 3.0) == pytest.approx(5.0)


def test_gamma_optimum_closed_form():
    beta, eps, value = gamma_optimum(1.5, 3.0)
    assert beta == pytest.approx(-2.0)
    assert eps == pytest.approx(1.5)
    assert value == pytest.approx(2.0 * 0.25 - 1.0)
    assert gamma_quadratic(beta, eps, 1.5, 3.0) == pytest.approx(value)


def test_omega_optimum_closed_form():
    q, eps, value = omega_optimum(3.0, 1.5, 2.0)
    assert q == pytest.approx(-3.0 / 2.0)
    assert value == pytest.approx(-0.5 + 0.25)
    assert omega_quadratic(q, eps, 3.0, 1.5, 2.0) == pytest.approx(value)


def test_optimum_lattices_agree_with_minimisation():
    assert optimum_lattice("gamma", [(1.2, 2.0), (1.8, 4.0)]).passed
    assert optimum_lattice("omega", [(2.0, 1.5, 3.0), (4.0, 1.2, 2.0)]).passed


def test_h_optimum_mode():
    report = check_H_functional(None, mode="optimum", params=HParams(s=3.0), p=1.5, m=2.0)
    assert report.passed
    assert report.extras["omega_star"] == pytest.approx(-0.25)


def test_h_params_reject_small_s():
    with pytest.raises(ConfigError) as excinfo:
        HParams(s=1.5)
    assert "s-at-least-2" in str(excinfo.value)


def test_superflow_inequality_on_flat_torus():
    report = check_superflow_inequality(identity_case("static-sine"), kappa=0.0)
    assert report.passed


def test_optimal_w_inequality_on_flat_torus():
    report = check_optimized_w_inequality(identity_case("static-sine"), kappa=0.0)
    assert report.passed
    assert report.extras["gamma_star"] == pytest.approx(0.0)


def test_matrix_lemma_rank_one():
    empirical, closed = matrix_lemma_bruteforce(1.0, 0.0, 2, trials=1000)
    assert closed == 1.0
    assert empirical <= closed + 1e-9
    assert empirical == pytest.approx(closed, abs=1e-6)


def test_matrix_lemma_needs_enough_trials():
    with pytest.raises(ConfigError):
        matrix_lemma_bruteforce(1.0, 0.5, 3, trials=999)


def test_cutoff_properties():
    report = check_cutoff(build_cutoff(1.0, 1.0))
    assert report.passed, report.extras["properties"]
    assert report.extras["c"] > 0


def test_cutoff_window():
    with pytest.raises(BadWindow):
        CutoffSpec(R=1.0, T=1.0, t0=0.0, tau=0.5)
    with pytest.raises(ConfigError):
        CutoffSpec(R=1.0, T=1.0, t0=0.0, tau=-0.5, a=1.5)


def test_laplacian_comparison_on_flat_torus(torus_2d):
    report = check_laplacian_comparison(torus_2d, [np.pi, np.pi])
    assert report.passed
    assert report.extras["k"] == 0.0


def test_quintic_cutoff_loses_c_a_for_large_a():
    assert check_cutoff(build_cutoff(1.0, 1.0, profile="quintic", a=0.25)).passed
    report = check_cutoff(build_cutoff(1.0, 1.0, profile="quintic", a=0.75))
    assert not report.passed
    assert not report.extras["properties"]["c_a-finite"]
