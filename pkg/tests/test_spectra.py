import numpy as np
import pytest
from scipy.integrate import trapezoid

from ramanchd.chd import CHDCorrelator, CorrelationTrace
from ramanchd.errors import CutoffError
from ramanchd.fock import CAVITY, ModeSpace, dag, mode_ladder
from ramanchd.model import SystemParams, build_liouvillian, trace_row, vec
from ramanchd.solver import observable_row, steady_state
from ramanchd.spectra import (Spectrum, chd_spectra, cosine_transform, cosine_transform_dct,
                              default_omega_grid, emission_from_correlation, emission_spectrum,
                              fourier_transform, photon_flux, spectral_tau_grid, spectral_weight)

T0, W0 = 20.0, 0.1  # damped cosine used as an analytic oracle


def damped(tau):
    return np.exp(-tau / T0) * np.cos(W0 * tau)


def damped_cosine_transform(omega):
    """int_0^inf exp(-t/T0) cos(W0 t) cos(w t) dt."""
    lor = lambda x: T0 / (1 + (x * T0) ** 2)
    return 0.5 * (lor(omega - W0) + lor(omega + W0))


@pytest.fixture(scope="module")
def fast_system():
    # broad mechanical line so correlations decay within a short window
    p = SystemParams(gamma_m=0.02, omega_pump=0.1, delta=0.02, g=0.02)
    L = build_liouvillian(p, ModeSpace.for_system(5, 4))
    return p, L, steady_state(L)


def test_cosine_transform_against_analytic():
    tau = np.linspace(0, 40 * T0, 64001)
    omega = np.linspace(-0.3, 0.3, 61)
    np.testing.assert_allclose(cosine_transform(tau, damped(tau), omega),
                               damped_cosine_transform(omega), atol=1e-4)


def test_dct_route_matches_direct_sum():
    tau = np.linspace(0, 300.0, 3001)
    w, fast = cosine_transform_dct(tau, damped(tau))
    np.testing.assert_allclose(fast[:200], cosine_transform(tau, damped(tau), w[:200]),
                               atol=1e-10)
    with pytest.raises(ValueError):
        cosine_transform_dct(np.array([0.0, 1.0, 3.0]), np.ones(3))


def test_spectral_weight_recovers_zero_delay():
    tau = np.arange(0, 40 * T0 + 0.05, 0.05)
    trace = CorrelationTrace(tau, 1.0 + 0.3 * damped(tau), "positive", 0.0, 1.0)
    flux = 0.7
    # next tail order is 8F f'''(0) / (3 band^3), about 1e-4 relative at band = 2
    total = spectral_weight(trace, flux, offset=1.0, band=2.0)
    assert total == pytest.approx(4 * np.pi * flux * 0.3, rel=1e-4)
    # a window of a few W0 without the tail misses a visible part of the weight
    omega = default_omega_grid(W0)
    inner = 4 * flux * cosine_transform(tau, trace.values - 1.0, omega)
    assert abs(trapezoid(inner, omega) / total - 1) > 0.05


def test_emission_spectrum_matches_resolvent(fast_system):
    p, L, ss = fast_system
    tau = spectral_tau_grid(p.gamma_m, dtau=0.05, decay_times=25.0)
    omega = np.linspace(-0.25, 0.25, 41)
    spec = emission_spectrum(L, ss, omega, tau)
    a = mode_ladder(L.space, CAVITY)
    x = vec(a @ ss.rho - ss.expect(a) * ss.rho)
    row = observable_row(dag(a))
    lm = L.matrix.toarray()
    proj = np.outer(vec(ss.rho), trace_row(L.hilbert_dim))
    eye = np.eye(lm.shape[0])
    oracle = np.array([(row @ np.linalg.solve(1j * w * eye - lm + proj, x)).real for w in omega])
    np.testing.assert_allclose(spec.values, oracle, atol=1e-4 * np.abs(oracle).max())


def test_emission_vanishes_for_coherent_cavity():
    p = SystemParams(g=0.0, omega_pump=0.1, gamma_m=0.02)
    L = build_liouvillian(p, ModeSpace.for_system(12, 2))
    ss = steady_state(L)
    spec = emission_spectrum(L, ss, np.linspace(-0.2, 0.2, 21),
                             spectral_tau_grid(0.02, 0.25, 20.0))
    # residual set by the propagation atol (1e-10) integrated over the window
    assert np.max(np.abs(spec.values)) < 1e-7


def test_emission_cutoff_detected():
    tau = np.linspace(0, 10, 101)
    with pytest.raises(CutoffError):
        emission_from_correlation(tau, np.ones(101), [0.0])


def test_emission_peak_metadata():
    tau = np.linspace(0, 4000, 40001)
    corr = 3 * np.exp((-1e-2 + 0.1j) * tau) + np.exp((-1e-2 - 0.1j) * tau)
    spec = emission_from_correlation(tau, corr, np.linspace(-0.2, 0.2, 401))
    assert spec.metadata["stokes_omega"] == pytest.approx(0.1, abs=1e-3)
    assert spec.metadata["anti_stokes_omega"] == pytest.approx(-0.1, abs=1e-3)
    assert len(spec.metadata["peaks"]) == 2


def test_fourier_transform_of_exponential():
    tau = np.linspace(0, 400, 40001)
    out = fourier_transform(tau, np.exp(-tau / 20), [0.0, 0.05])
    np.testing.assert_allclose(out, 1 / (1 / 20 + 1j * np.array([0.0, 0.05])), rtol=1e-4)


@pytest.fixture(scope="module")
def chd_traces(fast_system):
    p, L, ss = fast_system
    tau = spectral_tau_grid(p.gamma_m, dtau=0.1, decay_times=25.0)
    corr = CHDCorrelator(L, ss, tau)
    phi = 1.0
    comp = corr.components(phi)
    return corr, (corr.h_positive(phi), corr.h_negative(phi), comp["h2"], comp["h3"])


def test_chd_spectra_additivity_and_identities(chd_traces):
    corr, traces = chd_traces
    omega = np.linspace(-0.3, 0.3, 121)
    flux_inputs = {"kappa": 0.25, "n_ss": corr.moments.n}
    pos, neg, s2, s3 = chd_spectra(*traces, flux_inputs, omega)
    np.testing.assert_allclose(pos.values, s2.values + s3.values, atol=1e-10)
    np.testing.assert_allclose(pos.values, pos.values[::-1], atol=1e-12)
    flux = photon_flux(0.25, corr.moments.n)
    assert pos.flux == pytest.approx(flux)
    for spec, trace, offset in zip((pos, neg, s2, s3), traces, (1.0, 1.0, 0.0, 0.0)):
        total = spectral_weight(trace, flux, offset=offset, band=4.0)
        expected = 4 * np.pi * flux * (trace.values[0] - offset)
        scale = 4 * np.pi * flux * np.max(np.abs(trace.values - offset))
        assert abs(total - expected) < 1e-2 * scale
        assert spec.metadata["zero_delay"] == pytest.approx(trace.values[0] - offset)


def test_flat_traces_give_zero_spectra():
    tau = np.linspace(0, 100, 201)
    one = CorrelationTrace(tau, np.ones_like(tau), "positive", 0.0, 1.0)
    zero = CorrelationTrace(tau, np.zeros_like(tau), "positive", 0.0, 1.0)
    neg = CorrelationTrace(tau, np.ones_like(tau), "negative", 0.0, 1.0)
    for spec in chd_spectra(one, neg, zero, zero, {"kappa": 0.25, "n_ss": 1.0}, [0.0, 0.1]):
        np.testing.assert_array_equal(spec.values, 0.0)


def test_undecayed_chd_trace_rejected():
    tau = np.linspace(0, 100, 201)
    slow = CorrelationTrace(tau, 1 + 0.1 * np.exp(-tau / 1e4), "positive", 0.0, 1.0)
    zero = CorrelationTrace(tau, np.zeros_like(tau), "positive", 0.0, 1.0)
    with pytest.raises(CutoffError):
        chd_spectra(slow, slow, zero, zero, {"kappa": 0.25, "n_ss": 1.0}, [0.0])


def test_spectrum_kind_validated():
    with pytest.raises(ValueError):
        Spectrum(np.zeros(2), np.zeros(2), "raman")
