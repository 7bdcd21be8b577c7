"""Truncated Fock-space operators and tensor-product embedding.

Composite operators are ``scipy.sparse`` CSR matrices. Kronecker order is
fixed: slot 0 is the leftmost (slowest-varying) factor, so for
``dims = (N_a, N_b, 2, 2)`` the basis index of ``|n_a, n_b, s_1, s_2>`` is
``((n_a * N_b + n_b) * 2 + s_1) * 2 + s_2``.

The cavity may be represented in a displaced number basis: with
``displacement = alpha0`` the cavity annihilator is ``alpha0 + c`` where ``c``
is the truncated ladder operator. This is a change of basis only (exact as
the truncation grows) but it needs far fewer levels for a strongly driven,
nearly coherent cavity.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import prod

import numpy as np
import scipy.sparse as sp

from .errors import DimensionError

CAVITY = 0
VIBRATION = 1
SENSOR_DIM = 2


@dataclass(frozen=True)
class ModeSpace:
    """Per-mode truncation dimensions.

    Mode 0 is the cavity, mode 1 the molecular vibration, and modes 2+ are
    two-level sensors. ``displacement`` is the coherent amplitude about which
    the cavity basis is centred (0 for the plain Fock basis).
    """

    dims: tuple[int, ...]
    displacement: complex = 0j

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        if not dims:
            raise DimensionError("ModeSpace needs at least one mode")
        for slot, d in enumerate(dims):
            if d < 2:
                raise DimensionError(f"mode {slot} has dimension {d} < 2")
        object.__setattr__(self, "dims", dims)
        disp = complex(self.displacement)
        if not np.isfinite(disp):
            raise DimensionError(f"displacement must be finite, got {disp}")
        object.__setattr__(self, "displacement", disp)

    @classmethod
    def for_system(cls, n_cavity: int, n_vib: int, n_sensors: int = 0,
                   displacement: complex = 0j) -> "ModeSpace":
        return cls((n_cavity, n_vib) + (SENSOR_DIM,) * n_sensors, displacement)

    def with_dims(self, n_cavity: int, n_vib: int) -> "ModeSpace":
        return ModeSpace((n_cavity, n_vib) + self.dims[2:], self.displacement)

    @property
    def total_dim(self) -> int:
        return prod(self.dims)

    @property
    def liouville_dim(self) -> int:
        return self.total_dim ** 2

    @property
    def n_modes(self) -> int:
        return len(self.dims)

    @property
    def n_sensors(self) -> int:
        return max(0, self.n_modes - 2)

    def sensor_slot(self, index: int) -> int:
        """Slot of the ``index``-th sensor (0-based)."""
        if not 0 <= index < self.n_sensors:
            raise DimensionError(f"no sensor {index} in a space with {self.n_sensors} sensors")
        return 2 + index


def ladder_operator(dim: int) -> sp.csr_matrix:
    """Annihilation operator truncated to ``dim`` levels.

    ``a|n> = sqrt(n)|n-1>``; the creation operator is the conjugate transpose.
    """
    if int(dim) != dim or dim < 2:
        raise DimensionError(f"ladder operator needs dim >= 2, got {dim}")
    dim = int(dim)
    return sp.diags(np.sqrt(np.arange(1, dim, dtype=float)), 1,
                    shape=(dim, dim), format="csr", dtype=complex)


def number_operator(dim: int) -> sp.csr_matrix:
    a = ladder_operator(dim)
    return (a.conj().T @ a).tocsr()


def identity(dim: int) -> sp.csr_matrix:
    return sp.identity(dim, dtype=complex, format="csr")


def dag(op):
    """Conjugate transpose, keeping sparse inputs sparse."""
    if sp.issparse(op):
        return op.conj().T.tocsr()
    return np.asarray(op).conj().T


def embed_operator(op, slot: int, space: ModeSpace) -> sp.csr_matrix:
    """Act with ``op`` on mode ``slot`` and as the identity on all others."""
    if not 0 <= slot < space.n_modes:
        raise DimensionError(f"slot {slot} out of range for {space.n_modes} modes")
    op = sp.csr_matrix(op, dtype=complex)
    if op.shape[0] != op.shape[1]:
        raise DimensionError(f"operator is not square: {op.shape}")
    if op.shape[0] != space.dims[slot]:
        raise DimensionError(
            f"operator dimension {op.shape[0]} does not match mode {slot} "
            f"dimension {space.dims[slot]}")
    left = prod(space.dims[:slot])
    right = prod(space.dims[slot + 1:])
    out = op
    if left > 1:
        out = sp.kron(identity(left), out, format="csr")
    if right > 1:
        out = sp.kron(out, identity(right), format="csr")
    return out.tocsr()


def mode_ladder(space: ModeSpace, slot: int) -> sp.csr_matrix:
    """Annihilation operator of mode ``slot`` embedded in ``space``.

    For the cavity this includes the basis displacement, ``alpha0 + c``.
    """
    op = embed_operator(ladder_operator(space.dims[slot]), slot, space)
    if slot == CAVITY and space.displacement != 0:
        op = (op + space.displacement * identity(space.total_dim)).tocsr()
    return op


def is_hermitian(op, atol: float = 0.0) -> bool:
    diff = op - dag(op)
    if sp.issparse(diff):
        return diff.nnz == 0 or abs(diff).max() <= atol
    return np.max(np.abs(diff)) <= atol
