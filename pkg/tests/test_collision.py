import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import K_B, TORR, shift_per_density_trapezoid
from spinnoise.collision import (
    BetaDelta,
    DensityMode,
    GasState,
    Interaction,
    LennardJonesPair,
    ReferenceConditions,
    beta_delta,
    classify_interaction,
    collisional_shift,
    dispersion_tail,
    gas_state,
    lj_energy,
    shift_at,
    shift_per_density,
)
from spinnoise.constants import kelvin_to_mev, mev_to_kelvin
from spinnoise.errors import ConfigError

N2_LIKE = LennardJonesPair(88.19, 4.19, 592274.82, 5.81962)


def test_lj_energy_node_minimum_and_tail():
    assert lj_energy(3.0, 1.7, 3.0) == 0.0
    assert lj_energy(2 ** (1 / 6) * 3.0, 1.7, 3.0) == pytest.approx(-1.7, rel=1e-14)
    assert lj_energy(30.0, 1.7, 3.0) == pytest.approx(4 * 1.7 * (1e-12 - 1e-6), rel=1e-12)
    r = np.array([1.0, 2.0])
    assert lj_energy(r, 1.0, 1.0).shape == (2,)


def test_lj_energy_rejects_nonpositive():
    with pytest.raises(ConfigError):
        lj_energy(0.0, 1.0, 1.0)
    with pytest.raises(ConfigError):
        lj_energy(1.0, -1.0, 1.0)


def test_pair_validation():
    with pytest.raises(ConfigError):
        LennardJonesPair(-1.0, 4.0, 1e5, 5.0)
    with pytest.raises(ConfigError):
        LennardJonesPair(80.0, 25.0, 1e5, 5.0)
    with pytest.raises(ConfigError):
        LennardJonesPair(80.0, 4.0, -1.0, 5.0)
    assert N2_LIKE.replace(sigma2=6.0).sigma2 == 6.0


def test_gas_state_ideal_gas():
    g = gas_state(250.0, 337.0)
    assert g.number_density == pytest.approx(250 * TORR / (K_B * 337.0), rel=1e-12)
    with pytest.raises(ConfigError):
        gas_state(0.0, 337.0)
    with pytest.raises(ConfigError):
        gas_state(10.0, -1.0)


def test_reference_density_modes():
    sealed = ReferenceConditions(250.0, 337.0, "sealed-cell")
    const = ReferenceConditions(250.0, 337.0, DensityMode.CONSTANT_PRESSURE)
    n0 = gas_state(250.0, 337.0).number_density
    assert sealed.density(250.0, 360.0) == pytest.approx(n0, rel=1e-12)
    assert const.density(250.0, 360.0) == pytest.approx(gas_state(250.0, 360.0).number_density, rel=1e-12)
    with pytest.raises(ConfigError):
        ReferenceConditions(0.0, 337.0)


def test_zero_density_and_zero_perturbation():
    assert collisional_shift(N2_LIKE, GasState(0.0, 337.0, 0.0)) == 0.0
    assert collisional_shift(N2_LIKE.replace(epsilon2=0.0), gas_state(250.0, 337.0)) == 0.0


def test_dispersion_tail_formula():
    r_max = 100.0
    tail = dispersion_tail(N2_LIKE, r_max)
    assert tail == pytest.approx(-4 * N2_LIKE.epsilon2 * N2_LIKE.sigma2 ** 6 / (3 * r_max ** 3))
    assert tail < 0


@pytest.mark.parametrize("temperature", [300.0, 337.0, 400.0])
def test_quadrature_vs_trapezoid(temperature):
    p = N2_LIKE
    ref = shift_per_density_trapezoid(p.epsilon1, p.sigma1, p.epsilon2, p.sigma2, temperature)
    got, err = shift_per_density(p, temperature)
    assert abs(got - ref) <= 1e-6 * abs(ref)
    assert err >= 0


def test_calibrated_pair_reproduces_coefficients():
    bd = beta_delta(N2_LIKE, ReferenceConditions())
    assert bd.beta == pytest.approx(559.0, rel=1e-5)  # pair printed to 7 digits
    assert bd.delta == pytest.approx(0.570, rel=1e-4)
    assert bd.beta_err < 1e-3 and bd.delta_err < 1e-4


def test_paper_well_depth_units():
    assert kelvin_to_mev(N2_LIKE.epsilon1) == pytest.approx(7.6, abs=0.005)
    assert mev_to_kelvin(7.6) == pytest.approx(88.19, abs=0.01)


def test_shift_linear_in_density():
    ref = ReferenceConditions()
    a = shift_at(N2_LIKE, 100.0, 337.0, ref)
    b = shift_at(N2_LIKE, 300.0, 337.0, ref)
    assert b == pytest.approx(3 * a, rel=1e-12)


@given(scale=st.floats(1e-3, 1e3))
def test_shift_linear_in_epsilon2(scale):
    """The shift is linear in epsilon2, so scaling it scales the integral exactly."""
    gas = gas_state(250.0, 337.0)
    base = collisional_shift(N2_LIKE, gas)
    scaled = collisional_shift(N2_LIKE.replace(epsilon2=N2_LIKE.epsilon2 * scale), gas)
    assert scaled == pytest.approx(scale * base, rel=1e-8)


def test_sign_classification():
    gas = gas_state(250.0, 337.0)
    repulsive = LennardJonesPair(88.19, 4.19, 5e5, 6.5)
    attractive = LennardJonesPair(88.19, 4.19, 5e5, 3.0)
    s_rep, s_att = collisional_shift(repulsive, gas), collisional_shift(attractive, gas)
    assert s_rep > 0 > s_att
    assert classify_interaction(s_rep) is Interaction.PAULI_REPULSION
    assert classify_interaction(s_att) is Interaction.VAN_DER_WAALS
    assert classify_interaction(0.3) is Interaction.BALANCED


def test_beta_delta_error_fields():
    with pytest.raises(ConfigError):
        BetaDelta(1.0, 1.0, -1.0, 0.0)


def test_delta_matches_finite_difference_oracle():
    """delta from Richardson differences vs a direct trapezoid-oracle difference."""
    ref = ReferenceConditions()
    bd = beta_delta(N2_LIKE, ref)
    p = N2_LIKE
    n0 = 250.0 * TORR / (K_B * 337.0)
    h = 0.5
    up = shift_per_density_trapezoid(p.epsilon1, p.sigma1, p.epsilon2, p.sigma2, 337.0 + h)
    dn = shift_per_density_trapezoid(p.epsilon1, p.sigma1, p.epsilon2, p.sigma2, 337.0 - h)
    oracle = n0 * (up - dn) / (2 * h) / 250.0
    assert bd.delta == pytest.approx(oracle, rel=1e-4)
    assert math.isfinite(bd.beta)
