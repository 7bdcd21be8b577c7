"""Frequency-filtered intensity-field correlations via two-level sensors.

Two sensors ``s_1`` (intensity port) and ``s_2`` (quadrature port) are coupled
to the cavity field with strength ``eps`` and decay at rate ``Gamma``. In the
weak-coupling limit their normally ordered moments report frequency-filtered
field correlations. The quadrature port uses

    s_{phi;2} = (s_2 e^{i phi} + s_2^dag e^{-i phi}) / 2,

which is the opposite phase convention to the cavity quadrature ``a_phi``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .chd import GUARD, CorrelationTrace
from .errors import SensorRejected, SolverError, VanishingDenominatorError
from .fock import CAVITY, ModeSpace, dag, embed_operator, ladder_operator, mode_ladder
from .model import (SensorParams, SystemParams, build_liouvillian, lindblad_dissipator,
                    spost, spre, trace_row, unvec, vec)
from .solver import (SteadyState, check_tau_grid, evolve_projections, expect,
                     observable_row, steady_state)

DEFAULT_MARGIN = 0.1


@dataclass(frozen=True)
class SensorCheck:
    """Outcome of the weak-coupling test ``eps <= margin * sqrt(Gamma gamma_q / 2)``."""

    ok: bool
    epsilon: float
    bound: float
    margin: float

    @property
    def threshold(self) -> float:
        return self.margin * self.bound

    @property
    def ratio(self) -> float:
        return self.epsilon / self.bound


def validate_sensors(cfg: SensorParams, gamma_q: float,
                     margin: float = DEFAULT_MARGIN) -> SensorCheck:
    """Check one sensor against the weak-coupling bound; never raises on failure."""
    if not gamma_q > 0:
        raise ValueError(f"gamma_q must be positive, got {gamma_q}")
    if not 0 < margin <= 1:
        raise ValueError(f"margin must lie in (0, 1], got {margin}")
    bound = float(np.sqrt(cfg.gamma * gamma_q / 2.0))
    return SensorCheck(ok=bool(cfg.epsilon <= margin * bound), epsilon=float(cfg.epsilon),
                       bound=bound, margin=float(margin))


def require_admissible(sensor: SensorParams, gamma_q: float, margin: float = DEFAULT_MARGIN,
                       index: int | None = None) -> SensorCheck:
    check = validate_sensors(sensor, gamma_q, margin)
    if not check.ok:
        name = "sensor" if index is None else f"sensor {index + 1}"
        raise SensorRejected(
            f"{name}: epsilon={check.epsilon:.3e} eV exceeds {check.margin:g} * "
            f"sqrt(Gamma gamma_q / 2) = {check.threshold:.3e} eV "
            f"(bound {check.bound:.3e} eV)", check=check)
    return check


@dataclass(frozen=True)
class FilteredSetup:
    """Intensity sensor ``sensor1``, quadrature sensor ``sensor2`` and truncations."""

    sensor1: SensorParams
    sensor2: SensorParams
    n_cavity: int = 8
    n_vib: int = 6
    gamma_q: float | None = None
    margin: float = DEFAULT_MARGIN
    displacement: complex = 0j

    @classmethod
    def stokes_pair(cls, params: SystemParams, epsilon: float = 1e-5,
                    gamma: float | None = None, **kwargs) -> "FilteredSetup":
        """Sensor 1 on the Stokes line (``-omega_m``), sensor 2 on anti-Stokes."""
        gamma = params.gamma_m if gamma is None else gamma
        return cls(SensorParams(-params.omega_m, gamma, epsilon),
                   SensorParams(params.omega_m, gamma, epsilon), **kwargs)

    @property
    def sensors(self) -> tuple:
        return (self.sensor1, self.sensor2)

    @property
    def space(self) -> ModeSpace:
        return ModeSpace.for_system(self.n_cavity, self.n_vib, n_sensors=2,
                                    displacement=self.displacement)

    @property
    def core_space(self) -> ModeSpace:
        return ModeSpace.for_system(self.n_cavity, self.n_vib, displacement=self.displacement)

    def scaled(self, factor: float) -> "FilteredSetup":
        """Same setup with both couplings multiplied by ``factor``."""
        s1, s2 = self.sensor1, self.sensor2
        return FilteredSetup(SensorParams(s1.omega, s1.gamma, s1.epsilon * factor),
                             SensorParams(s2.omega, s2.gamma, s2.epsilon * factor),
                             self.n_cavity, self.n_vib, self.gamma_q, self.margin,
                             self.displacement)

    def validate(self, params: SystemParams) -> tuple:
        gq = params.gamma_m if self.gamma_q is None else self.gamma_q
        return tuple(require_admissible(s, gq, self.margin, index=i)
                     for i, s in enumerate(self.sensors))


@dataclass(frozen=True, eq=False)
class FilteredZeroDelay:
    """Zero-delay filtered correlations for both port assignments.

    ``h_12`` puts the intensity on sensor 1 and the quadrature on sensor 2;
    ``h_21`` swaps them. With sensor 1 on the Stokes line these are the
    S/aS and aS/S event types.
    """

    phi: float
    h_12: float
    h_21: float
    populations: tuple
    coherences: tuple
    cavity_population: float
    metadata: dict = field(default_factory=dict)

    @property
    def h_SaS(self) -> float:
        return self.h_12

    @property
    def h_aSS(self) -> float:
        return self.h_21


def sensor_quadrature(s, phi: float):
    return 0.5 * (s * np.exp(1j * phi) + dag(s) * np.exp(-1j * phi))


def _guarded_mean(mean: complex, pop: float, phi: float, port: int) -> float:
    value = float(np.real(mean))
    if pop <= 0 or abs(value) <= GUARD * np.sqrt(max(pop, 0.0)):
        raise VanishingDenominatorError(
            f"<s_phi;{port}>_ss = {value:.3e} is below the guard {GUARD:.0e}*sqrt(<s^dag s>) "
            f"at phi={phi:.6g}")
    return value


def _sensor_generator(sensor: SensorParams) -> np.ndarray:
    """4x4 Liouvillian of one uncoupled sensor (column-stacked 2x2)."""
    s = ladder_operator(2)
    h = sensor.omega * (dag(s) @ s)
    return (1j * spost(h) - 1j * spre(h) + 0.5 * sensor.gamma * lindblad_dissipator(s)).toarray()


class _DecoupledInverse:
    """Applies the reduced inverse of the sensor-free generator ``L0``.

    ``L0 = L_core (+) L_s1 (+) L_s2`` is a Kronecker sum. Diagonalizing each
    4x4 sensor generator leaves 16 shifted core systems
    ``(L_core + lambda) y = c``; the singular ``lambda = 0`` block is solved on
    the traceless subspace, which is where every right-hand side lives.
    """

    def __init__(self, core: sp.csr_matrix, core_dim: int, sensors):
        self.dc = core_dim
        lams, self.w, self.w_inv = [], [], []
        for sensor in sensors:
            lam, w = np.linalg.eig(_sensor_generator(sensor))
            order = np.argsort(np.abs(lam))
            lam, w = lam[order], w[:, order]
            lam[0] = 0.0
            lams.append(lam)
            self.w.append(w)
            self.w_inv.append(np.linalg.inv(w))
        self.lam = lams[0][:, None] + lams[1][None, :]
        n = core.shape[0]
        eye = sp.identity(n, dtype=complex, format="csc")
        self.lu = {}
        for k1 in range(4):
            for k2 in range(4):
                if k1 == 0 and k2 == 0:
                    tr = sp.csr_matrix(trace_row(core_dim)[None, :])
                    mat = sp.vstack([tr, sp.csr_matrix(core)[1:]])
                else:
                    mat = core + self.lam[k1, k2] * eye
                self.lu[k1, k2] = spla.splu(sp.csc_matrix(mat), permc_spec="COLAMD")

    def to_blocks(self, x: np.ndarray) -> np.ndarray:
        """Full column-stacked vector -> ``(core vec, sensor1 vec, sensor2 vec)``."""
        dc = self.dc
        t = unvec(x, dc * 4).reshape(dc, 2, 2, dc, 2, 2)
        return t.transpose(3, 0, 4, 1, 5, 2).reshape(dc * dc, 4, 4)

    def from_blocks(self, y: np.ndarray) -> np.ndarray:
        dc = self.dc
        t = y.reshape(dc, dc, 2, 2, 2, 2).transpose(1, 3, 5, 0, 2, 4)
        return vec(t.reshape(dc * 4, dc * 4))

    def solve(self, x: np.ndarray) -> np.ndarray:
        y = self.to_blocks(x)
        y = np.einsum("ka,nab,lb->nkl", self.w_inv[0], y, self.w_inv[1])
        out = np.empty_like(y)
        for (k1, k2), lu in self.lu.items():
            rhs = y[:, k1, k2].copy()
            if k1 == 0 and k2 == 0:
                rhs[0] = 0.0
            out[:, k1, k2] = lu.solve(rhs)
        out = np.einsum("ak,nkl,bl->nab", self.w[0], out, self.w[1])
        return self.from_blocks(out)


def sensor_steady_state(params: SystemParams, setup: FilteredSetup, L=None, *,
                        tol: float = 1e-10) -> SteadyState:
    """Steady state of the sensor-extended system.

    Writes ``rho = rho_core (x) |gg><gg| + delta`` and solves
    ``(1 + L0^+ V) delta = -L0^+ V rho_0`` with GMRES, where ``V`` is the
    sensor-field coupling. The operator norm of ``L0^+ V`` scales with
    ``eps / Gamma`` so convergence takes a handful of iterations in the
    admissible regime. The result is checked against the full generator.
    """
    space = setup.space
    if L is None:
        L = build_liouvillian(params, space, setup.sensors, margin=setup.margin,
                              gamma_q=setup.gamma_q)
    core_space = setup.core_space
    core_L = build_liouvillian(params, core_space)
    core_ss = steady_state(core_L)
    dc = core_space.total_dim
    inv = _DecoupledInverse(core_L.matrix, dc, setup.sensors)

    a = mode_ladder(space, CAVITY)
    h_int = sp.csr_matrix((space.total_dim,) * 2, dtype=complex)
    for i, sensor in enumerate(setup.sensors):
        s = embed_operator(ladder_operator(2), space.sensor_slot(i), space)
        h_int = h_int + sensor.epsilon * (a @ dag(s) + dag(a) @ s)
    v = (1j * spost(h_int) - 1j * spre(h_int)).tocsr()

    ground = np.zeros((4, 4), dtype=complex)
    ground[0, 0] = 1.0
    rho0 = vec(np.kron(core_ss.rho, ground))
    n = rho0.size
    op = spla.LinearOperator((n, n), matvec=lambda d: d + inv.solve(v @ d), dtype=complex)
    rhs = -inv.solve(v @ rho0)
    delta, info = spla.gmres(op, rhs, rtol=1e-14, atol=0.0, restart=40, maxiter=50)
    if info != 0:
        raise SolverError(f"sensor steady-state GMRES did not converge (info={info})",
                          residual=float(np.linalg.norm(L.matrix @ (rho0 + delta))))
    rho = unvec(rho0 + delta, space.total_dim)
    rho = 0.5 * (rho + rho.conj().T)
    rho = rho / np.trace(rho).real
    residual = float(np.linalg.norm(L.matrix @ vec(rho)))
    lnorm = spla.norm(L.matrix)
    if residual > tol * max(1.0, lnorm):
        raise SolverError(f"sensor steady-state residual {residual:.3e} exceeds "
                          f"{tol:.1e} * ||L||", residual=residual)
    return SteadyState(rho=rho, residual=residual,
                       trace_error=float(abs(np.trace(rho) - 1.0)), space=space,
                       method="decoupled-gmres")


class FilteredCorrelator:
    """Builds the sensor-extended model once and evaluates filtered correlations."""

    def __init__(self, params: SystemParams, setup: FilteredSetup, *, method: str = "decoupled"):
        self.params = params
        self.setup = setup
        self.checks = setup.validate(params)
        self.space = setup.space
        gq = params.gamma_m if setup.gamma_q is None else setup.gamma_q
        self.L = build_liouvillian(params, self.space, setup.sensors, gamma_q=gq,
                                   margin=setup.margin)
        if method == "decoupled":
            self.steady = sensor_steady_state(params, setup, self.L)
        else:
            self.steady = steady_state(self.L, method=method)
        self.rho = self.steady.rho
        s = ladder_operator(2)
        self.s = tuple(embed_operator(s, self.space.sensor_slot(i), self.space) for i in (0, 1))
        self.pops = tuple(expect(dag(op) @ op, self.rho).real for op in self.s)
        self.means = tuple(expect(op, self.rho) for op in self.s)

    def _norm(self, phi, intensity, quadrature):
        mean_q = np.exp(1j * phi) * self.means[quadrature]
        q = _guarded_mean(mean_q, self.pops[quadrature], phi, quadrature + 1)
        if self.pops[intensity] <= 0:
            raise VanishingDenominatorError(f"sensor {intensity + 1} population is zero")
        return self.pops[intensity] * q

    def zero_delay(self, phi: float) -> FilteredZeroDelay:
        vals = []
        for i, j in ((0, 1), (1, 0)):
            si, sj = self.s[i], self.s[j]
            numer = expect(dag(si) @ sensor_quadrature(sj, phi) @ si, self.rho).real
            vals.append(numer / self._norm(phi, i, j))
        a = mode_ladder(self.space, CAVITY)
        return FilteredZeroDelay(
            phi=phi, h_12=float(vals[0]), h_21=float(vals[1]), populations=self.pops,
            coherences=self.means, cavity_population=expect(dag(a) @ a, self.rho).real,
            metadata={"sensor_frequencies": [s.omega for s in self.setup.sensors],
                      "frequency_frame": "laser rotating frame, fixed during sweeps",
                      "checks": [c.ratio for c in self.checks]})

    def trace(self, phi: float, tau_grid, *, intensity: int = 0, **propagation) -> CorrelationTrace:
        """``<s_i^dag(0) s_{phi;j}(tau) s_i(0)> / (<n_i><s_{phi;j}>)`` for ``tau >= 0``."""
        tau = check_tau_grid(tau_grid)
        j = 1 - intensity
        si, sj = self.s[intensity], self.s[j]
        norm = self._norm(phi, intensity, j)
        x = (si @ self.rho) @ dag(si) - self.pops[intensity] * self.rho
        rows = np.array([observable_row(sj), observable_row(dag(sj))])
        y = evolve_projections(self.L, x, rows, tau, **propagation)
        numer = 0.5 * (np.exp(1j * phi) * y[:, 0] + np.exp(-1j * phi) * y[:, 1])
        values = 1.0 + numer / norm
        residue = float(np.max(np.abs(values.imag)))
        return CorrelationTrace(tau, values.real.copy(), "positive", phi, norm, residue,
                                label=f"filtered_{intensity + 1}{j + 1}")


def filtered_correlation(params: SystemParams, setup: FilteredSetup, phi: float,
                         tau_grid=None, zero_delay_only: bool = False, **kwargs):
    """Filtered intensity-field correlation.

    Returns a :class:`FilteredZeroDelay` when ``zero_delay_only`` is set (or no
    grid is given), otherwise the time trace with the intensity on sensor 1.
    """
    corr = FilteredCorrelator(params, setup)
    if zero_delay_only or tau_grid is None:
        return corr.zero_delay(phi)
    return corr.trace(phi, tau_grid, **kwargs)


def back_action(params: SystemParams, setup: FilteredSetup) -> float:
    """Relative change of ``<a^dag a>_ss`` caused by attaching the sensors."""
    bare_space = setup.core_space
    bare = steady_state(build_liouvillian(params, bare_space))
    a = mode_ladder(bare_space, CAVITY)
    n0 = expect(dag(a) @ a, bare.rho).real
    n1 = FilteredCorrelator(params, setup).zero_delay(0.0).cavity_population
    return abs(n1 - n0) / n0
