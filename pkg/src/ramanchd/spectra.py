"""Emission spectrum and Fourier-cosine spectra of the CHD correlations.

Frequencies are in eV in the laser rotating frame. With the convention
``S(omega) = Re int_0^inf e^{-i omega tau} <da^dag(tau) da(0)> dtau`` a photon
emitted at lab frequency ``omega_l + w`` shows up at ``omega = w``, so the
Stokes line (phonon created, red-shifted) sits at ``omega = -omega_m``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.fft import dct
from scipy.integrate import trapezoid
from scipy.signal import find_peaks

from .chd import CHDCorrelator, CorrelationTrace
from .errors import CutoffError
from .solver import check_tau_grid

KINDS = ("emission", "chd_pos", "chd_neg", "chd_2", "chd_3")
EMISSION_CUTOFF = 1e-4
CHD_CUTOFF = 1e-4


@dataclass(frozen=True, eq=False)
class Spectrum:
    omega_grid: np.ndarray
    values: np.ndarray
    kind: str
    flux: float | None = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown spectrum kind {self.kind!r}")

    def integral(self) -> float:
        """Trapezoid integral over the frequency grid."""
        return float(trapezoid(self.values, self.omega_grid))


def default_omega_grid(omega_m: float = 0.1, points: int = 2001, span: float = 2.0) -> np.ndarray:
    """``points`` frequencies on ``[-span * omega_m, span * omega_m]``."""
    return np.linspace(-span * omega_m, span * omega_m, points)


def spectral_tau_grid(gamma_m: float = 1e-3, dtau: float = 0.25, decay_times: float = 20.0):
    """Uniform quadrature grid on ``[0, decay_times / gamma_m]``.

    ``dtau = 0.25`` resolves the fastest oscillation in the integrand
    (``|omega| + omega_m <= 0.3 eV``) with about 80 points per period.
    """
    t_max = decay_times / gamma_m
    n = int(np.ceil(t_max / dtau))
    return np.linspace(0.0, n * dtau, n + 1)


def _trapz_weights(tau: np.ndarray) -> np.ndarray:
    w = np.zeros_like(tau)
    d = np.diff(tau)
    w[:-1] += 0.5 * d
    w[1:] += 0.5 * d
    return w


def fourier_transform(tau, values, omega_grid, *, chunk: int = 32) -> np.ndarray:
    """Trapezoid ``int_0^T e^{-i omega tau} f(tau) dtau`` for every omega."""
    tau = check_tau_grid(tau)
    omega = np.asarray(omega_grid, dtype=float)
    fw = np.asarray(values) * _trapz_weights(tau)
    out = np.empty(omega.size, dtype=complex)
    for start in range(0, omega.size, chunk):
        w = omega[start:start + chunk]
        out[start:start + chunk] = np.exp(-1j * np.outer(w, tau)) @ fw
    return out


def cosine_transform(tau, values, omega_grid, *, chunk: int = 32) -> np.ndarray:
    """Trapezoid ``int_0^T f(tau) cos(omega tau) dtau`` for real ``f``."""
    tau = check_tau_grid(tau)
    omega = np.asarray(omega_grid, dtype=float)
    fw = np.asarray(values, dtype=float) * _trapz_weights(tau)
    out = np.empty(omega.size)
    for start in range(0, omega.size, chunk):
        w = omega[start:start + chunk]
        out[start:start + chunk] = np.cos(np.outer(w, tau)) @ fw
    return out


def cosine_transform_dct(tau, values):
    """Trapezoid cosine transform at ``omega_k = pi k / T`` via a type-I DCT.

    Needs a uniform grid starting at 0. Returns ``(omega_k, transform)``;
    the values agree with :func:`cosine_transform` at those frequencies.
    """
    tau = check_tau_grid(tau)
    step = np.diff(tau)
    if tau[0] != 0 or tau.size < 3 or not np.allclose(step, step[0], rtol=1e-9, atol=0):
        raise ValueError("DCT route needs a uniform grid starting at tau = 0")
    dtau = step[0]
    transform = 0.5 * dtau * dct(np.asarray(values, dtype=float), type=1)
    omega = np.pi * np.arange(tau.size) / tau[-1]
    return omega, transform


def spectral_weight(trace: CorrelationTrace, flux: float, *, offset: float = 0.0,
                    band: float = 1.0) -> float:
    """``int S d omega`` over the whole real line for ``S = 4F int [h - offset] cos``.

    The trapezoid rule runs over ``|omega| <= band`` on the DCT frequency
    grid; beyond it the exact large-omega asymptote
    ``S ~ -4F f'(0) / omega^2`` contributes ``-8F f'(0) / band``. The
    traces have a kink at tau = 0, so without the tail the integral over a
    window of a few omega_m misses a sizeable broadband part.
    """
    f = np.asarray(trace.values, dtype=float) - offset
    omega, transform = cosine_transform_dct(trace.tau_grid, f)
    keep = omega <= band * (1 + 1e-12)
    omega, transform = omega[keep], transform[keep]
    dtau = trace.tau_grid[1] - trace.tau_grid[0]
    slope = (-3.0 * f[0] + 4.0 * f[1] - f[2]) / (2.0 * dtau)
    inner = 2.0 * trapezoid(4.0 * flux * transform, omega)
    return float(inner - 8.0 * flux * slope / omega[-1])


def _peaks(omega, values, rel_prominence=1e-2):
    scale = np.max(np.abs(values)) if values.size else 0.0
    if scale == 0:
        return []
    idx, _ = find_peaks(values, prominence=rel_prominence * scale)
    return [(float(omega[i]), float(values[i])) for i in idx]


def emission_from_correlation(tau, corr, omega_grid, *, normalize: bool = False,
                              cutoff: float = EMISSION_CUTOFF) -> Spectrum:
    """Emission spectrum from a sampled ``<da^dag(tau) da(0)>``."""
    tau = check_tau_grid(tau)
    corr = np.asarray(corr)
    c0 = abs(corr[0])
    if abs(corr[-1]) > cutoff * c0:
        raise CutoffError(
            f"emission correlation has not decayed at tau={tau[-1]:.6g}: "
            f"|C(T)| = {abs(corr[-1]):.3e} > {cutoff:.0e} * |C(0)| = {cutoff * c0:.3e}")
    omega = np.asarray(omega_grid, dtype=float)
    values = np.real(fourier_transform(tau, corr, omega))
    if normalize and np.max(np.abs(values)) > 0:
        values = values / np.max(values)
    peaks = _peaks(omega, values)
    meta = {"units": "arbitrary", "normalized": bool(normalize), "peaks": peaks,
            "frame": "laser rotating frame; omega < 0 is red-shifted"}
    if peaks:
        stokes = max(peaks, key=lambda p: p[1])
        meta["stokes_omega"] = stokes[0]
        others = [p for p in peaks if p is not stokes]
        if others:
            meta["anti_stokes_omega"] = max(others, key=lambda p: p[1])[0]
    return Spectrum(omega, values, "emission", metadata=meta)


def emission_spectrum(L, rho_ss, omega_grid=None, tau_grid=None, *, normalize: bool = False,
                      correlator: CHDCorrelator | None = None, **propagation) -> Spectrum:
    """Stationary inelastic emission spectrum ``Re int e^{-i w t}<da^dag(t) da(0)>``.

    Pass ``correlator`` to reuse propagations already done for CHD quantities.
    """
    if correlator is None:
        space = getattr(L, "space", None)
        if tau_grid is None:
            gamma_m = L.metadata["params"]["gamma_m"] if hasattr(L, "metadata") else 1e-3
            tau_grid = spectral_tau_grid(gamma_m)
        correlator = CHDCorrelator(L, rho_ss, tau_grid, space=space, **propagation)
    if omega_grid is None:
        omega_m = correlator.L.metadata["params"]["omega_m"] if hasattr(correlator.L, "metadata") else 0.1
        omega_grid = default_omega_grid(omega_m)
    return emission_from_correlation(correlator.tau, correlator.emission_correlation(),
                                     omega_grid, normalize=normalize)


def photon_flux(kappa: float, n_ss: float) -> float:
    """``F = 2 kappa <a^dag a>_ss``."""
    return 2.0 * kappa * n_ss


def _check_decay(trace: CorrelationTrace, offset: float, cutoff: float):
    tail = abs(trace.values[-1] - offset)
    if tail >= cutoff:
        raise CutoffError(
            f"{trace.label} ({trace.branch} branch, phi={trace.phi:.6g}) has not decayed at "
            f"tau={trace.tau_grid[-1]:.6g}: residual {tail:.3e} >= {cutoff:.0e}")


def chd_spectra(pos: CorrelationTrace, neg: CorrelationTrace, h2: CorrelationTrace,
                h3: CorrelationTrace, flux_inputs: dict, omega_grid, *,
                cutoff: float = CHD_CUTOFF) -> list:
    """``4F int_0^T [.] cos(omega tau) dtau`` for each CHD trace.

    ``pos`` and ``neg`` enter as ``h - 1``; ``h2`` and ``h3`` are already
    fluctuation terms. ``flux_inputs`` needs ``kappa`` and ``n_ss``.
    Returns spectra of kind chd_pos, chd_neg, chd_2, chd_3 in that order.
    """
    flux = photon_flux(float(flux_inputs["kappa"]), float(flux_inputs["n_ss"]))
    omega = np.asarray(omega_grid, dtype=float)
    out = []
    for kind, trace, offset in (("chd_pos", pos, 1.0), ("chd_neg", neg, 1.0),
                                ("chd_2", h2, 0.0), ("chd_3", h3, 0.0)):
        _check_decay(trace, offset, cutoff)
        values = 4.0 * flux * cosine_transform(trace.tau_grid, trace.values - offset, omega)
        out.append(Spectrum(omega, values, kind, flux=flux,
                            metadata={"phi": trace.phi, "zero_delay": float(trace.values[0] - offset),
                                      "t_max": float(trace.tau_grid[-1])}))
    return out
