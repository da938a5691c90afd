import numpy as np
import pytest

from rotinf import (DomainError, beta_potential, burg, conjugate_grad, entropy,
                    fermi_dirac, grad, hess_diag, lp_quasi, value)
from rotinf.regularizers import Regularizer, from_spec, in_conjugate_domain

ALL_KINDS = [entropy(), burg(), fermi_dirac(), beta_potential(0.5),
             beta_potential(0.25), lp_quasi(0.5), lp_quasi(0.75)]


def interior_points(reg, rng, size):
    # every kind is defined on (0, 1), which also keeps fermi_dirac interior
    return rng.uniform(0.05, 0.95, size=size)


def test_parameter_validation():
    for bad in (0.0, 1.0, -0.5, None):
        with pytest.raises(ValueError):
            beta_potential(bad)
        with pytest.raises(ValueError):
            lp_quasi(bad)
    with pytest.raises(ValueError):
        Regularizer("entropy", 0.5)
    with pytest.raises(ValueError):
        Regularizer("nope")


def test_from_spec():
    assert from_spec("entropy").kind == "entropy"
    assert from_spec("fermi").kind == "fermi_dirac"
    assert from_spec("beta:0.3").param == 0.3
    assert from_spec("lpq:0.7").param == 0.7
    with pytest.raises(ValueError):
        from_spec("what")


def test_entropy_values():
    ones = np.ones(4)
    assert value(entropy(), ones) == 0.0
    # a zero entry contributes 0*log0 - 0 + 1 = 1
    assert np.isclose(value(entropy(), [1.0, 0.0]), 1.0)


def test_burg_value_at_ones():
    assert value(burg(), np.ones(5)) == 0.0
    with pytest.raises(DomainError):
        value(burg(), [1.0, 0.0])


def test_entropy_grad_at_ones():
    assert np.allclose(grad(entropy(), np.ones(3)), 0.0)


def test_burg_grad_formula():
    x = np.array([0.5, 2.0, 1.0])
    assert np.allclose(grad(burg(), x), 1.0 - 1.0 / x)


def test_hess_examples():
    x = np.array([0.2, 0.5, 0.8])
    assert np.allclose(hess_diag(entropy(), x), 1.0 / x)
    assert np.allclose(hess_diag(beta_potential(0.5), np.ones(3)), 1.0)
    assert np.allclose(hess_diag(lp_quasi(0.5), np.ones(3)), 0.25)


def test_conjugate_examples():
    y = np.zeros(3)
    assert np.allclose(conjugate_grad(entropy(), y), 1.0)
    assert np.allclose(conjugate_grad(burg(), y), 1.0)
    y2 = np.array([-1.0, -0.3])
    assert np.allclose(conjugate_grad(burg(), y2), 1.0 / (1.0 - y2))


def test_conjugate_domain_errors():
    with pytest.raises(DomainError):
        conjugate_grad(burg(), [1.5])
    with pytest.raises(DomainError):
        conjugate_grad(lp_quasi(0.5), [0.0])
    with pytest.raises(DomainError):
        conjugate_grad(beta_potential(0.5), [2.5])


def test_grad_matches_finite_differences():
    rng = np.random.default_rng(10)
    h = 1e-6
    for reg in ALL_KINDS:
        for _ in range(100):
            x = interior_points(reg, rng, 4)
            g = grad(reg, x)
            for i in range(x.size):
                xp = x.copy(); xp[i] += h
                xm = x.copy(); xm[i] -= h
                fd = (value(reg, xp) - value(reg, xm)) / (2 * h)
                assert abs(fd - g[i]) <= 1e-5 * max(1.0, abs(g[i])), str(reg)


def test_hess_matches_finite_differences_of_grad():
    rng = np.random.default_rng(11)
    h = 1e-6
    for reg in ALL_KINDS:
        for _ in range(20):
            x = interior_points(reg, rng, 4)
            hd = hess_diag(reg, x)
            for i in range(x.size):
                xp = x.copy(); xp[i] += h
                xm = x.copy(); xm[i] -= h
                fd = (grad(reg, xp)[i] - grad(reg, xm)[i]) / (2 * h)
                assert abs(fd - hd[i]) <= 1e-4 * max(1.0, abs(hd[i])), str(reg)


def test_hess_positive_on_interior():
    rng = np.random.default_rng(12)
    for reg in ALL_KINDS:
        x = interior_points(reg, rng, 64)
        assert (hess_diag(reg, x) > 0).all()


def test_conjugate_grad_inverts_grad():
    rng = np.random.default_rng(13)
    for reg in ALL_KINDS:
        x = interior_points(reg, rng, 50)
        y = grad(reg, x)
        assert in_conjugate_domain(reg, y)
        back = conjugate_grad(reg, y)
        assert np.abs(back - x).max() < 1e-10, str(reg)


def test_grad_of_conjugate_grad_round_trip():
    rng = np.random.default_rng(14)
    for reg in ALL_KINDS:
        y = rng.uniform(-3.0, -0.1, size=50)  # strictly negative works for every kind
        x = conjugate_grad(reg, y)
        assert np.abs(grad(reg, x) - y).max() < 1e-10, str(reg)


def test_boundary_rejected_for_grad():
    for reg in ALL_KINDS:
        with pytest.raises(DomainError):
            grad(reg, [0.5, 0.0])
    with pytest.raises(DomainError):
        grad(fermi_dirac(), [0.5, 1.0])


def test_fermi_dirac_domain():
    assert np.isclose(value(fermi_dirac(), [0.0, 1.0]), 0.0)  # 0log0 convention twice
    with pytest.raises(DomainError):
        value(fermi_dirac(), [1.2])
