"""Physical model: parameters, rotating-frame Hamiltonian and Liouvillian.

Units: hbar = 1, all energies and rates in eV, times in hbar/eV
(about 0.6582 fs). Density operators are vectorized by column stacking,
``vec(A X B) = (B^T kron A) vec(X)``.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import DimensionError, ParameterError
from .fock import (CAVITY, VIBRATION, ModeSpace, dag, embed_operator, identity,
                   ladder_operator, mode_ladder)

K_B = 8.617333262e-5  # eV/K
VECTORIZATION = "column-stacking"


def thermal_occupation(omega: float, temperature: float) -> float:
    """Bose-Einstein occupation ``1 / (exp(omega / k_B T) - 1)``."""
    if not omega > 0:
        raise ParameterError(f"frequency must be positive, got {omega}", field="omega")
    if temperature < 0:
        raise ParameterError(f"temperature must be >= 0, got {temperature}", field="temperature")
    # also catches subnormal temperatures where omega / (k_B T) overflows
    if K_B * temperature * 700 < omega:
        return 0.0
    x = omega / (K_B * temperature)
    if x > 700:
        return 0.0
    return float(1.0 / np.expm1(x))


def mean_field_amplitude(params: "SystemParams") -> complex:
    """Driven damped cavity amplitude ``Omega / (i Delta + kappa / 2)`` (exact at g = 0)."""
    return complex(params.omega_pump / (1j * params.delta + params.kappa / 2))


def cavity_decay_from_q(omega_c: float, quality: float) -> float:
    """kappa = omega_c / Q."""
    if omega_c <= 0 or quality <= 0:
        raise ParameterError("omega_c and Q must be positive", field="omega_c")
    return omega_c / quality


@dataclass(frozen=True)
class SystemParams:
    """Molecule-plasmon parameters (eV, K).

    Defaults are the stock SERS values: omega_m = 0.1 eV, gamma_m = 1 meV,
    kappa = 0.25 eV (omega_c = 2.5 eV, Q = 10), T = 300 K, g = 5 meV and the
    moderate pump Omega = 1.5 omega_m.

    ``n_th`` may be given instead of (or together with) ``temperature``; when
    both are given they must agree to 1e-10 relative.
    """

    omega_m: float = 0.1
    delta: float = 0.0
    g: float = 5e-3
    omega_pump: float = 0.15
    kappa: float = 0.25
    gamma_m: float = 1e-3
    temperature: float = 300.0
    n_th: float | None = None
    omega_c: float = 2.5

    def __post_init__(self):
        for name in ("omega_m", "delta", "g", "omega_pump", "kappa", "gamma_m",
                     "temperature", "omega_c"):
            value = getattr(self, name)
            if not np.isfinite(value):
                raise ParameterError(f"must be finite, got {value}", field=name)
        if self.omega_m <= 0:
            raise ParameterError(f"must be > 0, got {self.omega_m}", field="omega_m")
        if self.kappa <= 0:
            raise ParameterError(f"must be > 0, got {self.kappa}", field="kappa")
        if self.gamma_m <= 0:
            raise ParameterError(f"must be > 0, got {self.gamma_m}", field="gamma_m")
        if self.temperature < 0:
            raise ParameterError(f"must be >= 0, got {self.temperature}", field="temperature")
        if self.n_th is not None:
            if not np.isfinite(self.n_th) or self.n_th < 0:
                raise ParameterError(f"must be finite and >= 0, got {self.n_th}", field="n_th")
            implied = thermal_occupation(self.omega_m, self.temperature)
            scale = max(abs(implied), abs(self.n_th))
            if scale > 0 and abs(implied - self.n_th) > 1e-10 * scale:
                raise ParameterError(
                    f"n_th={self.n_th!r} inconsistent with T={self.temperature} K "
                    f"(implies {implied!r})", field="n_th")

    @classmethod
    def with_thermal_population(cls, n_th: float, **kwargs) -> "SystemParams":
        """Parameters fixed by ``n_th``; the temperature is back-computed."""
        omega_m = kwargs.get("omega_m", cls.omega_m)
        if n_th <= 0:
            temperature = 0.0
        else:
            temperature = omega_m / (K_B * np.log1p(1.0 / n_th))
        return cls(temperature=temperature, n_th=n_th, **kwargs)

    @property
    def thermal_population(self) -> float:
        if self.n_th is not None:
            return float(self.n_th)
        return thermal_occupation(self.omega_m, self.temperature)

    def replace(self, **changes) -> "SystemParams":
        return dataclasses.replace(self, **changes)

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass(frozen=True)
class SensorParams:
    """Two-level frequency-resolving sensor.

    ``omega`` is the transition frequency in the laser rotating frame, so a
    sensor at ``-omega_m`` sits on the Stokes line.
    """

    omega: float
    gamma: float
    epsilon: float

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ParameterError(f"must be > 0, got {self.epsilon}", field="epsilon")
        if not self.gamma > 0:
            raise ParameterError(f"must be > 0, got {self.gamma}", field="gamma")
        if not np.isfinite(self.omega):
            raise ParameterError(f"must be finite, got {self.omega}", field="omega")


@dataclass(frozen=True, eq=False)
class Superoperator:
    """Sparse Liouvillian acting on column-stacked density operators."""

    matrix: sp.csr_matrix
    space: ModeSpace
    convention: str = VECTORIZATION
    metadata: dict = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @property
    def hilbert_dim(self) -> int:
        return self.space.total_dim

    def apply(self, rho) -> np.ndarray:
        """``L[rho]`` as a dense ``D x D`` array."""
        return unvec(self.matrix @ vec(rho), self.hilbert_dim)

    def cavity(self) -> sp.csr_matrix:
        return mode_ladder(self.space, CAVITY)


def vec(op) -> np.ndarray:
    if sp.issparse(op):
        op = op.toarray()
    return np.asarray(op, dtype=complex).reshape(-1, order="F")


def unvec(v, dim: int) -> np.ndarray:
    return np.asarray(v).reshape((dim, dim), order="F")


def trace_row(dim: int) -> np.ndarray:
    """Row vector ``r`` with ``r @ vec(X) == Tr X``."""
    row = np.zeros(dim * dim, dtype=complex)
    row[:: dim + 1] = 1.0
    return row


def spre(op) -> sp.csr_matrix:
    """Superoperator of left multiplication, X -> op X."""
    return sp.kron(identity(op.shape[0]), op, format="csr")


def spost(op) -> sp.csr_matrix:
    """Superoperator of right multiplication, X -> X op."""
    return sp.kron(sp.csr_matrix(op).T, identity(op.shape[0]), format="csr")


def lindblad_dissipator(op) -> sp.csr_matrix:
    """``X -> 2 O X O^dag - O^dag O X - X O^dag O``."""
    op = sp.csr_matrix(op, dtype=complex)
    odo = (dag(op) @ op).tocsr()
    return (2.0 * sp.kron(op.conj(), op, format="csr")
            - spre(odo) - spost(odo)).tocsr()


def _check_space(space: ModeSpace, sensors) -> None:
    if space.n_modes < 2:
        raise DimensionError("space must hold at least cavity and vibration modes")
    if space.n_sensors != len(sensors):
        raise DimensionError(
            f"space has {space.n_sensors} sensor slots but {len(sensors)} sensors given")
    for i in range(len(sensors)):
        if space.dims[2 + i] != 2:
            raise DimensionError(f"sensor slot {2 + i} must be two-level")


def build_hamiltonian(params: SystemParams, space: ModeSpace, sensors=()) -> sp.csr_matrix:
    """Rotating-frame Hamiltonian with optional sensor terms.

    H = omega_m b^dag b + Delta a^dag a - g a^dag a (b^dag + b) + i Omega (a^dag - a)
        + sum_i [omega_i s_i^dag s_i + eps_i (a s_i^dag + a^dag s_i)]
    """
    sensors = tuple(sensors)
    _check_space(space, sensors)
    a = mode_ladder(space, CAVITY)
    b = mode_ladder(space, VIBRATION)
    ad, bd = dag(a), dag(b)
    n_a = ad @ a
    h = (params.omega_m * (bd @ b) + params.delta * n_a
         - params.g * (n_a @ (bd + b)) + 1j * params.omega_pump * (ad - a))
    for i, sensor in enumerate(sensors):
        s = embed_operator(ladder_operator(2), 2 + i, space)
        sd = dag(s)
        h = h + sensor.omega * (sd @ s) + sensor.epsilon * (a @ sd + ad @ s)
    return sp.csr_matrix(h)


def collapse_terms(params: SystemParams, space: ModeSpace, sensors=()):
    """(rate, operator) pairs; each contributes ``rate * D_O`` to L."""
    n_th = params.thermal_population
    a = mode_ladder(space, CAVITY)
    b = mode_ladder(space, VIBRATION)
    terms = [(params.kappa / 2, a),
             ((n_th + 1) * params.gamma_m / 2, b)]
    if n_th > 0:
        terms.append((n_th * params.gamma_m / 2, dag(b)))
    for i, sensor in enumerate(sensors):
        terms.append((sensor.gamma / 2, embed_operator(ladder_operator(2), 2 + i, space)))
    return terms


def build_liouvillian(params: SystemParams, space: ModeSpace, sensors=(),
                      *, gamma_q: float | None = None, margin: float = 0.1) -> Superoperator:
    """Full Lindblad generator in vectorized sparse form.

    L[rho] = i[rho, H] + (kappa/2) D_a + ((n_th+1) gamma_m/2) D_b
             + (n_th gamma_m/2) D_{b^dag} + sum_i (Gamma_i/2) D_{s_i}

    Sensors are checked against the weak-coupling bound with
    ``gamma_q`` (defaults to ``params.gamma_m``) before anything is built.
    """
    sensors = tuple(sensors)
    if sensors:
        from .sensors import require_admissible

        gq = params.gamma_m if gamma_q is None else gamma_q
        for i, sensor in enumerate(sensors):
            require_admissible(sensor, gq, margin=margin, index=i)
    h = build_hamiltonian(params, space, sensors)
    lmat = 1j * spost(h) - 1j * spre(h)
    for rate, op in collapse_terms(params, space, sensors):
        if rate != 0:
            lmat = lmat + rate * lindblad_dissipator(op)
    lmat = sp.csr_matrix(lmat)
    lmat.sum_duplicates()
    lmat.eliminate_zeros()
    meta = {"n_th": params.thermal_population, "params": params.as_dict(),
            "sensors": [dataclasses.asdict(s) for s in sensors]}
    return Superoperator(matrix=lmat, space=space, metadata=meta)
