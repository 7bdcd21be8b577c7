"""Randomized invariants."""

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from ramanchd.chd import CHDCorrelator, noise_summary
from ramanchd.fock import ModeSpace
from ramanchd.model import SensorParams, SystemParams, build_liouvillian, trace_row, unvec, vec
from ramanchd.sensors import validate_sensors
from ramanchd.solver import steady_state
from ramanchd.tables import Table, csv_to_table, table_to_csv

settings.register_profile("ramanchd", max_examples=25, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("ramanchd")

params_st = st.builds(
    SystemParams,
    omega_m=st.floats(0.02, 0.3),
    delta=st.floats(-0.3, 0.3),
    g=st.floats(0.0, 0.05),
    omega_pump=st.floats(0.0, 0.2),
    kappa=st.floats(0.05, 0.5),
    gamma_m=st.floats(1e-3, 0.05),
    temperature=st.floats(0.0, 1000.0),
)


def random_matrix(rng, n):
    m = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    return m + m.conj().T


@given(params_st, st.booleans(), st.integers(0, 2**32 - 1))
def test_generator_preserves_trace_and_hermiticity(p, displaced, seed):
    space = ModeSpace.for_system(3, 3, displacement=p.omega_pump / (1j * p.delta + p.kappa / 2)
                                 if displaced else 0j)
    L = build_liouvillian(p, space)
    d = space.total_dim
    rho = random_matrix(np.random.default_rng(seed), d)
    out = unvec(L.apply(vec(rho)), d)
    scale = np.abs(L.matrix).max() * np.abs(rho).max()
    assert abs(trace_row(d) @ vec(out)) < 1e-12 * d * scale
    np.testing.assert_allclose(out, out.conj().T, atol=1e-12 * scale)


@given(params_st)
def test_steady_state_is_a_density_matrix(p):
    L = build_liouvillian(p, ModeSpace.for_system(4, 3))
    ss = steady_state(L)
    assert np.trace(ss.rho).real == pytest.approx(1.0, abs=1e-12)
    np.testing.assert_allclose(ss.rho, ss.rho.conj().T, atol=1e-14)
    assert np.linalg.eigvalsh(ss.rho).min() > -1e-9


@given(st.floats(0.02, 0.3), st.floats(1.0, 2000.0), st.floats(1e-3, 0.05))
def test_uncoupled_vibration_obeys_detailed_balance(omega_m, temperature, gamma_m):
    p = SystemParams(omega_m=omega_m, temperature=temperature, gamma_m=gamma_m, g=0.0)
    space = ModeSpace.for_system(2, 6)
    ss = steady_state(build_liouvillian(p, space), method="direct")
    rho = ss.rho.reshape(2, 6, 2, 6)
    pops = np.real(np.diag(np.einsum("ajak->jk", rho)))
    n_th = p.thermal_population
    ratio = n_th / (n_th + 1)
    np.testing.assert_allclose(pops[1:], pops[:-1] * ratio, atol=1e-12)


@given(st.floats(0.0, 2 * np.pi), st.floats(0.02, 0.15), st.floats(-0.1, 0.1))
def test_zero_delay_noise_terms_add_up(phi, omega_pump, delta):
    p = SystemParams(omega_pump=omega_pump, delta=delta, g=0.02)
    L = build_liouvillian(p, ModeSpace.for_system(4, 4))
    ss = steady_state(L)
    summary = noise_summary(ss, phi)
    scale = abs(summary.H2) + abs(summary.H3) + 1e-12
    assert summary.Hn == pytest.approx(summary.H2 + summary.H3, abs=1e-10 * scale)
    # shifting phi by pi flips every odd-order term and keeps the variance
    flipped = noise_summary(ss, phi + np.pi)
    assert flipped.variance_phi == pytest.approx(summary.variance_phi, rel=1e-10, abs=1e-14)
    assert flipped.H2 == pytest.approx(-summary.H2, rel=1e-10, abs=1e-14)


@settings(max_examples=8)
@given(st.floats(0.1, 1.4))
def test_components_match_traces(phi):
    p = SystemParams(omega_pump=0.1, delta=0.03, g=0.02, gamma_m=0.02)
    L = build_liouvillian(p, ModeSpace.for_system(4, 3))
    corr = CHDCorrelator(L, steady_state(L), np.linspace(0.0, 40.0, 9))
    comp = corr.components(phi)
    np.testing.assert_allclose(comp["h3"].values, corr.h3_direct(phi), atol=1e-8)
    # both branches share the zero-delay value
    assert corr.h_positive(phi).values[0] == pytest.approx(corr.h_negative(phi).values[0], rel=1e-9)


@given(st.floats(1e-4, 1.0), st.floats(1e-4, 1.0), st.floats(0.01, 1.0), st.floats(1e-6, 1.0))
def test_sensor_admissibility_threshold(gamma, gamma_q, margin, factor):
    bound = np.sqrt(gamma * gamma_q / 2)
    eps = factor * margin * bound
    check = validate_sensors(SensorParams(0.1, gamma, eps), gamma_q, margin=margin)
    assert check.ok
    assert check.bound == pytest.approx(bound)
    over = validate_sensors(SensorParams(0.1, gamma, margin * bound * 1.001), gamma_q, margin=margin)
    assert not over.ok


finite = st.floats(allow_nan=False, allow_infinity=False)


@given(st.lists(st.tuples(finite, finite, st.integers(-10**12, 10**12)), min_size=0, max_size=20))
def test_csv_round_trip_random(rows):
    table = Table("t", ["x", "y", "k"], [list(r) for r in rows], ["meta line"])
    text = table_to_csv(table)
    back = csv_to_table(text)
    assert table_to_csv(back) == text
    for got, want in zip(back.rows, table.rows):
        assert got[0] == want[0] and got[1] == want[1] and got[2] == want[2]
