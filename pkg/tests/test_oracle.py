import numpy as np
import pytest

from dipolerg.model import ModelParams, ConfigError, SIGMA_Z
from dipolerg.fockspace import FockBasis, build_modes
from dipolerg.oracle import (build_fiber_hamiltonian, ground_energy, pt2_energy,
                             dispersion_sweep, effective_mass, sweep_to_csv)


@pytest.fixture()
def small_params():
    return ModelParams(lam0=0.02, j_max=6)


def test_hamiltonian_hermitian(small_params):
    H, basis = build_fiber_hamiltonian(small_params)
    Hd = H.toarray()
    np.testing.assert_allclose(Hd, Hd.conj().T, atol=1e-13)
    assert Hd.shape == (2 * len(basis), 2 * len(basis))


def test_decoupled_ground_energy_zero():
    assert ground_energy(ModelParams(lam0=0.0, j_max=4)) == pytest.approx(0.0,
                                                                          abs=1e-14)
    # with momentum the zero point p^2/2m is already subtracted
    assert ground_energy(ModelParams(lam0=0.0, p=0.2, j_max=4)) == \
        pytest.approx(0.0, abs=1e-14)


def test_ground_energy_negative_when_coupled(small_params):
    assert ground_energy(small_params) < 0.0


def test_pt2_closed_form_properties(small_params):
    assert pt2_energy(ModelParams(lam0=0.0)) == 0.0
    e = pt2_energy(small_params)
    assert e < 0.0
    # quadratic in the coupling by construction
    e2 = pt2_energy(small_params.with_updates(lam0=0.04))
    assert e2 == pytest.approx(4.0 * e, rel=1e-12)


def test_oracle_pt2_difference_is_quartic(small_params):
    d = {}
    for lam in (0.01, 0.02):
        pp = small_params.with_updates(lam0=lam)
        d[lam] = abs(ground_energy(pp) - pt2_energy(pp))
    assert 14.0 < d[0.02] / d[0.01] < 18.0


def test_pt2_quadrature_matches_hamiltonian(small_params):
    # one-photon truncation: diagonalization is second order plus an
    # O(lam^4) resummation of the same matrix elements; at lam = 5e-3 the
    # remainder sits below 1e-9
    pp = small_params.with_updates(lam0=0.005)
    basis = FockBasis(build_modes(pp), 1)
    e = ground_energy(pp, basis=basis)
    assert e == pytest.approx(pt2_energy(pp), abs=5e-9)


def test_diagonal_coupling_oracle(small_params):
    pp = small_params.with_updates(spin_coupling=SIGMA_Z)
    assert ground_energy(pp) < 0.0


def test_dispersion_sweep_and_csv(small_params):
    recs = dispersion_sweep(small_params, [-0.2, 0.0, 0.2], method="pt2")
    assert [r.p for r in recs] == [-0.2, 0.0, 0.2]
    assert recs[0].energy == pytest.approx(recs[2].energy, abs=1e-15)
    text = sweep_to_csv(recs)
    lines = text.strip().splitlines()
    assert lines[0] == "p,energy,method"
    assert len(lines) == 4
    with pytest.raises(ConfigError):
        dispersion_sweep(small_params, [0.0], method="bogus")


def test_effective_mass_exact_parabola():
    p = np.linspace(-0.4, 0.4, 9)
    c = 0.37
    e = c * p ** 2
    out = effective_mass(p, e, m=1.0)
    assert out["curvature_diff"] == pytest.approx(2 * c, rel=1e-10)
    assert out["curvature_fit"] == pytest.approx(2 * c, rel=1e-8)
    assert out["fit_residual"] < 1e-14
    assert out["m_eff_diff"] == pytest.approx(1.0 / (1.0 + 2 * c), rel=1e-10)


def test_effective_mass_requires_symmetric_sweep():
    with pytest.raises(ConfigError):
        effective_mass([0.0, 0.1, 0.3], [0.0, 0.1, 0.2], m=1.0)
