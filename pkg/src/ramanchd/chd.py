"""Conditional-homodyne (intensity-field) correlations.

Quadrature convention: ``a_phi = (a e^{-i phi} + a^dag e^{i phi}) / 2`` so that
``<a_phi> = Re(e^{-i phi} <a>)``.

Both branches are normalized by ``<a^dag a>_ss <a_phi>_ss``::

    h(tau >= 0) = Re Tr{a e^{-i phi} exp(L tau)[a rho a^dag]} / norm
    h(tau <= 0) = Re Tr{a^dag a exp(L |tau|)[a e^{-i phi} rho]} / norm

Propagation is done on the fluctuation parts (the stationary piece is known
exactly because ``exp(L tau) rho_ss = rho_ss``), so ``h - 1`` keeps full
relative precision even when it is tiny.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import ImaginaryResidueError, VanishingDenominatorError
from .fock import CAVITY, dag, mode_ladder
from .solver import (SteadyState, check_tau_grid, evolve_projections, expect,
                     observable_row)

GUARD = 1e-8
IMAG_DISCARD = 1e-10
IMAG_ABORT = 1e-8


@dataclass(frozen=True, eq=False)
class CorrelationTrace:
    tau_grid: np.ndarray
    values: np.ndarray
    branch: str
    phi: float
    normalization: float
    imag_residue: float = 0.0
    label: str = "h"

    def __post_init__(self):
        if self.branch not in ("positive", "negative"):
            raise ValueError(f"branch must be 'positive' or 'negative', got {self.branch!r}")

    @property
    def signed_tau(self) -> np.ndarray:
        """Grid as plotted: the negative branch sits at ``-tau``."""
        return -self.tau_grid if self.branch == "negative" else self.tau_grid

    @property
    def at_zero(self) -> float:
        return float(self.values[0])


@dataclass(frozen=True)
class Moments:
    a: complex
    n: float
    a2: complex
    ad_n: complex
    n_a: complex

    @property
    def ad(self) -> complex:
        return np.conj(self.a)

    @property
    def ad2(self) -> complex:
        return np.conj(self.a2)


@dataclass(frozen=True)
class NoiseSummary:
    phi: float
    variance_phi: float
    H2: float
    H3: float
    Hn: float
    moments: Moments


@dataclass(frozen=True)
class InequalityReport:
    lower_violations: list = field(default_factory=list)
    upper_violations: list = field(default_factory=list)
    tau_zero_violations: list = field(default_factory=list)
    max_excursion: float = 0.0
    tau_zero_bound_violated: bool = False

    @property
    def is_classical(self) -> bool:
        return not (self.lower_violations or self.upper_violations
                    or self.tau_zero_bound_violated)


def _rho(rho_ss):
    return rho_ss.rho if isinstance(rho_ss, SteadyState) else np.asarray(rho_ss)


def _space(L, rho_ss, space):
    if space is not None:
        return space
    if isinstance(rho_ss, SteadyState) and rho_ss.space is not None:
        return rho_ss.space
    if L is not None and hasattr(L, "space"):
        return L.space
    raise ValueError("mode space unknown: pass a Superoperator, a SteadyState or space=")


def quadrature(a, phi: float):
    return 0.5 * (a * np.exp(-1j * phi) + dag(a) * np.exp(1j * phi))


def steady_moments(rho, a) -> Moments:
    """Cavity moments <a>, <n>, <a^2>, <a^dag n>, <n a> from the density matrix."""
    ad = dag(a)
    n = ad @ a
    return Moments(a=expect(a, rho), n=expect(n, rho).real, a2=expect(a @ a, rho),
                   ad_n=expect(ad @ n, rho), n_a=expect(n @ a, rho))


def _normalization(mom: Moments, phi: float) -> float:
    mean_phi = float(np.real(np.exp(-1j * phi) * mom.a))
    if mom.n <= 0 or abs(mean_phi) <= GUARD * np.sqrt(max(mom.n, 0.0)):
        raise VanishingDenominatorError(
            f"<a_phi>_ss = {mean_phi:.3e} is below the guard "
            f"{GUARD:.0e}*sqrt(<n>_ss) at phi={phi:.6g} (<n>_ss = {mom.n:.3e})")
    return mom.n * mean_phi


class CHDCorrelator:
    """Shares the two regression propagations behind all CHD quantities.

    ``positive`` holds ``Tr{a Y}, Tr{a^dag Y}`` with
    ``Y = exp(L tau)[a rho a^dag - <n> rho]``; ``fluctuation`` holds
    ``Tr{a Z}, Tr{a^dag Z}, Tr{n Z}`` with ``Z = exp(L tau)[da rho]``.
    ``exp(L tau)[rho da^dag]`` is ``Z^dag`` because L preserves Hermiticity.
    """

    def __init__(self, L, rho_ss, tau_grid, *, space=None, **propagation):
        self.L = L
        self.rho = _rho(rho_ss)
        self.space = _space(L, rho_ss, space)
        self.tau = check_tau_grid(tau_grid)
        self.propagation = propagation
        self.a = mode_ladder(self.space, CAVITY)
        self.moments = steady_moments(self.rho, self.a)
        self._positive = None
        self._fluctuation = None

    def _rows(self, *ops):
        return np.array([observable_row(op) for op in ops])

    @property
    def positive(self) -> np.ndarray:
        if self._positive is None:
            a, ad = self.a, dag(self.a)
            x = (a @ self.rho) @ ad - self.moments.n * self.rho
            self._positive = evolve_projections(self.L, x, self._rows(a, ad), self.tau,
                                                **self.propagation)
        return self._positive

    @property
    def fluctuation(self) -> np.ndarray:
        if self._fluctuation is None:
            a, ad = self.a, dag(self.a)
            x = a @ self.rho - self.moments.a * self.rho
            self._fluctuation = evolve_projections(self.L, x, self._rows(a, ad, ad @ a),
                                                   self.tau, **self.propagation)
        return self._fluctuation

    def h_positive(self, phi: float) -> CorrelationTrace:
        norm = _normalization(self.moments, phi)
        ya, yad = self.positive[:, 0], self.positive[:, 1]
        numer = 0.5 * (np.exp(-1j * phi) * ya + np.exp(1j * phi) * yad)
        values = 1.0 + numer / norm
        residue = _imag_residue(values, "h_positive", phi)
        return CorrelationTrace(self.tau, values.real.copy(), "positive", phi, norm, residue)

    def h_negative(self, phi: float) -> CorrelationTrace:
        norm = _normalization(self.moments, phi)
        zn = self.fluctuation[:, 2]
        values = 1.0 + np.real(np.exp(-1j * phi) * zn) / norm
        return CorrelationTrace(self.tau, values, "negative", phi, norm)

    def fluctuation_quadrature(self, phi: float) -> np.ndarray:
        """``<da^dag(0) da_phi(tau)>_ss`` on the grid."""
        za, zad = self.fluctuation[:, 0], self.fluctuation[:, 1]
        return np.conj(0.5 * (np.exp(-1j * phi) * za + np.exp(1j * phi) * zad))

    def components(self, phi: float) -> dict:
        """Second/third-order split of the positive branch plus ``hn``."""
        norm = _normalization(self.moments, phi)
        pos = self.h_positive(phi)
        h2 = 2.0 * np.real(self.moments.a * self.fluctuation_quadrature(phi)) / norm
        h3 = pos.values - 1.0 - h2
        hn = self.h_negative(phi).values - 1.0
        return {
            "h2": CorrelationTrace(self.tau, h2, "positive", phi, norm, label="h2"),
            "h3": CorrelationTrace(self.tau, h3, "positive", phi, norm, label="h3"),
            "hn": CorrelationTrace(self.tau, hn, "negative", phi, norm, label="hn"),
        }

    def h3_direct(self, phi: float) -> np.ndarray:
        """Third-order term straight from ``<da^dag(0) da_phi(tau) da(0)>``."""
        norm = _normalization(self.moments, phi)
        a, ad = self.a, dag(self.a)
        da = a - self.moments.a * sp.identity(a.shape[0], dtype=complex, format="csr")
        x = (da @ self.rho) @ dag(da)
        y = evolve_projections(self.L, x, self._rows(a, ad), self.tau, **self.propagation)
        trace_x = np.trace(x)
        # da_phi = a_phi - <a_phi>; Tr{exp(L tau) x} = Tr x
        mean_phi = np.real(np.exp(-1j * phi) * self.moments.a)
        val = 0.5 * (np.exp(-1j * phi) * y[:, 0] + np.exp(1j * phi) * y[:, 1]) - mean_phi * trace_x
        return np.real(val) / norm

    def emission_correlation(self) -> np.ndarray:
        """``<da^dag(tau) da(0)>_ss`` on the grid."""
        return self.fluctuation[:, 1]


def _imag_residue(values, what, phi) -> float:
    residue = float(np.max(np.abs(np.imag(values)))) if values.size else 0.0
    if residue > IMAG_ABORT:
        worst = int(np.argmax(np.abs(np.imag(values))))
        raise ImaginaryResidueError(
            f"{what} at phi={phi:.6g} has imaginary residue {residue:.3e} > {IMAG_ABORT:.0e}; "
            "check the vectorization convention",
            diagnostics={"index": worst, "value": complex(values[worst]), "phi": phi})
    return residue


def h_positive(L, rho_ss, phi, tau_grid, **kwargs) -> CorrelationTrace:
    """Intensity-then-field branch (photon detected first)."""
    return CHDCorrelator(L, rho_ss, tau_grid, **kwargs).h_positive(phi)


def h_negative(L, rho_ss, phi, tau_grid, **kwargs) -> CorrelationTrace:
    """Field-then-intensity branch, reported at ``-tau``."""
    return CHDCorrelator(L, rho_ss, tau_grid, **kwargs).h_negative(phi)


def h_components(L, rho_ss, phi, tau_grid, **kwargs) -> dict:
    return CHDCorrelator(L, rho_ss, tau_grid, **kwargs).components(phi)


def noise_summary(rho_ss, phi: float, space=None) -> NoiseSummary:
    """Quadrature variance and zero-delay CHD noise terms.

    Everything is assembled from the steady-state moments
    ``<a>, <n>, <a^2>, <a^dag n>, <n a>``.
    """
    space = _space(None, rho_ss, space)
    rho = _rho(rho_ss)
    mom = steady_moments(rho, mode_ladder(space, CAVITY))
    a, ad, n = mom.a, mom.ad, mom.n
    e = np.exp(1j * phi)
    dad_da = n - abs(a) ** 2                      # <da^dag da>
    dad_dad = mom.ad2 - ad ** 2                   # <da^dag da^dag>
    dn_da = mom.n_a - n * a                       # <dn da>
    dad_dad_da = mom.ad_n - 2 * ad * n - a * (mom.ad2 - 2 * ad ** 2)
    dad_daphi = 0.5 * (dad_da / e + dad_dad * e)  # <da^dag da_phi>
    variance = np.real(e * dad_daphi)
    h2 = 2.0 * np.real(a * dad_daphi)
    h3 = np.real(e * dad_dad_da)
    hn = np.real(dn_da / e)
    return NoiseSummary(phi=phi, variance_phi=float(variance), H2=float(h2),
                        H3=float(h3), Hn=float(hn), moments=mom)


def h_zero(rho_ss, phi: float, space=None) -> float:
    """Zero-delay value ``Re(e^{-i phi} <a^dag a a>) / (<n> <a_phi>)``, shared by both branches."""
    space = _space(None, rho_ss, space)
    mom = steady_moments(_rho(rho_ss), mode_ladder(space, CAVITY))
    return float(np.real(np.exp(-1j * phi) * mom.n_a) / _normalization(mom, phi))


def g2_zero(rho_ss, space=None) -> float:
    """<a^dag a^dag a a> / <a^dag a>^2."""
    space = _space(None, rho_ss, space)
    rho = _rho(rho_ss)
    a = mode_ladder(space, CAVITY)
    ad = dag(a)
    n = expect(ad @ a, rho).real
    if n <= 0:
        raise VanishingDenominatorError("g2(0) undefined: <a^dag a>_ss is zero")
    return float(expect(ad @ ad @ a @ a, rho).real / n ** 2)


def _intervals(tau, mask) -> list:
    out = []
    idx = np.flatnonzero(mask)
    if idx.size == 0:
        return out
    breaks = np.flatnonzero(np.diff(idx) > 1)
    starts = np.concatenate(([idx[0]], idx[breaks + 1]))
    ends = np.concatenate((idx[breaks], [idx[-1]]))
    return [(float(tau[s]), float(tau[e])) for s, e in zip(starts, ends)]


def inequality_check(trace: CorrelationTrace, h0: float | None = None,
                     atol: float = 1e-9) -> InequalityReport:
    """Classical CHD bounds ``0 <= h - 1 <= 1`` and ``|h(tau)-1| <= |h(0)-1| <= 1``.

    ``h0`` overrides the zero-delay value (needed when the grid does not
    start at tau = 0). Excursions within ``atol`` of a bound are not flagged.
    """
    tau = np.asarray(trace.tau_grid)
    dev = np.asarray(trace.values) - 1.0
    if h0 is None:
        if tau[0] != 0:
            raise ValueError("trace does not start at tau = 0; pass h0")
        h0 = float(trace.values[0])
    dev0 = abs(h0 - 1.0)
    lower = _intervals(tau, dev < -atol)
    upper = _intervals(tau, dev > 1.0 + atol)
    second = _intervals(tau, np.abs(dev) > dev0 + atol)
    violated = bool(second) or dev0 > 1.0 + atol
    max_exc = float(dev[np.argmax(np.abs(dev))]) if dev.size else 0.0
    return InequalityReport(lower_violations=lower, upper_violations=upper,
                            tau_zero_violations=second, max_excursion=max_exc,
                            tau_zero_bound_violated=violated)
