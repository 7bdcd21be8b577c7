"""Fast steady state of the cavity-vibration generator.

In the displaced cavity basis ``a = c + alpha`` the generator splits as
``L = L0 + V`` with ``L0 = L_cav (+) L_vib`` a Kronecker sum and ``V`` the
commutator with the fluctuation coupling
``-g [(alpha^* c + alpha c^dag) + c^dag c](b + b^dag)``. The mean-field
force ``-g |alpha|^2 (b + b^dag)`` stays in ``L_vib``.

``L0 Y = Z`` is a Sylvester equation ``L_cav Y + Y L_vib^T = Z`` on the
reshaped vector, solved by Bartels-Stewart with precomputed Schur forms.
Its one-dimensional kernel is shifted out with a rank-one term and
corrected afterwards, which yields the traceless solution. The steady
state then follows from GMRES on ``(1 + L0^+ V) delta = -L0^+ V rho_0``.
Every step costs a few dense products of ``N_a^2 x N_b^2`` arrays, where a
sparse LU of the full generator fills in almost completely.
"""

from __future__ import annotations

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import SolverError
from .fock import CAVITY, VIBRATION, dag, identity, ladder_operator, mode_ladder
from .model import (Superoperator, SystemParams, lindblad_dissipator, spost, spre,
                    trace_row, unvec, vec)

SPLIT_CHECK = 1e-10


def _generator(h, collapse) -> np.ndarray:
    out = 1j * spost(h) - 1j * spre(h)
    for rate, op in collapse:
        if rate != 0:
            out = out + rate * lindblad_dissipator(op)
    return np.asarray(sp.csr_matrix(out).toarray())


def _kernel(gen: np.ndarray, dim: int) -> np.ndarray:
    a = gen.copy()
    a[0] = trace_row(dim)
    rhs = np.zeros(a.shape[0], dtype=complex)
    rhs[0] = 1.0
    return la.solve(a, rhs)


class SplitGenerator:
    """``L0^+`` and ``V`` for a two-mode :class:`Superoperator`."""

    def __init__(self, L: Superoperator):
        space = L.space
        if space is None or space.n_modes != 2 or space.n_sensors != 0:
            raise ValueError("split generator needs a cavity-vibration space without sensors")
        p = SystemParams(**L.metadata["params"])
        alpha = space.displacement
        na, nb = space.dims
        self.na, self.nb = na, nb

        c1 = ladder_operator(na)
        a1 = c1 + alpha * identity(na)
        h_cav = p.delta * (dag(a1) @ a1) + 1j * p.omega_pump * (dag(a1) - a1)
        self.l_cav = _generator(h_cav, [(p.kappa / 2, a1)])
        b1 = ladder_operator(nb)
        n_th = p.thermal_population
        h_vib = p.omega_m * (dag(b1) @ b1) - p.g * abs(alpha) ** 2 * (b1 + dag(b1))
        self.l_vib = _generator(h_vib, [((n_th + 1) * p.gamma_m / 2, b1),
                                        (n_th * p.gamma_m / 2, dag(b1))])

        dim = space.total_dim
        c = mode_ladder(space, CAVITY) - alpha * sp.identity(dim, format="csr")
        b = mode_ladder(space, VIBRATION)
        h_v = -p.g * ((np.conj(alpha) * c + alpha * dag(c)) + dag(c) @ c) @ (b + dag(b))
        self.V = sp.csr_matrix(1j * spost(h_v) - 1j * spre(h_v))
        self.L = L.matrix

        self.t_cav = trace_row(na)
        self.r_cav = _kernel(self.l_cav, na)
        self.r_vib = _kernel(self.l_vib, nb)
        # shift the cavity kernel to sigma so the Sylvester operator is regular
        self.sigma = -0.5 * p.kappa if p.kappa > 0 else -1.0
        shifted = self.l_cav + self.sigma * np.outer(self.r_cav, self.t_cav)
        self.t1, self.q1 = la.schur(shifted, output="complex")
        self.t2, self.q2 = la.schur(self.l_vib.T, output="complex")
        (self._trsyl,) = la.get_lapack_funcs(("trsyl",), (self.t1,))
        vib = self.l_vib.copy()
        vib[0] = trace_row(nb)
        self._vib_lu = la.lu_factor(vib)

    def to_blocks(self, x: np.ndarray) -> np.ndarray:
        na, nb = self.na, self.nb
        t = unvec(x, na * nb).reshape(na, nb, na, nb)
        return t.transpose(2, 0, 3, 1).reshape(na * na, nb * nb)

    def from_blocks(self, y: np.ndarray) -> np.ndarray:
        na, nb = self.na, self.nb
        t = y.reshape(na, na, nb, nb).transpose(1, 3, 0, 2)
        return vec(t.reshape(na * nb, na * nb))

    def apply_l0(self, x: np.ndarray) -> np.ndarray:
        y = self.to_blocks(x)
        return self.from_blocks(self.l_cav @ y + y @ self.l_vib.T)

    def split_error(self, seed: int = 0) -> float:
        """Relative mismatch of ``L0 + V`` against the full generator on a random vector."""
        rng = np.random.default_rng(seed)
        n = self.L.shape[0]
        x = rng.standard_normal(n) + 1j * rng.standard_normal(n)
        full = self.L @ x
        diff = full - self.V @ x - self.apply_l0(x)
        return float(np.linalg.norm(diff) / max(np.linalg.norm(full), 1e-300))

    def solve(self, z: np.ndarray) -> np.ndarray:
        """Traceless ``y`` with ``L0 y = z`` for traceless ``z``."""
        f = self.q1.conj().T @ self.to_blocks(z) @ self.q2
        y, scale, info = self._trsyl(self.t1, self.t2, f)
        if info < 0:
            raise SolverError(f"trsyl failed (info={info})")
        y = self.q1 @ (y / scale) @ self.q2.conj().T
        # undo the kernel shift: L0 (r_cav u) = r_cav L_vib u with L_vib u = sigma t_cav y
        rhs = self.sigma * (self.t_cav @ y)
        rhs[0] = 0.0
        u = la.lu_solve(self._vib_lu, rhs)
        return self.from_blocks(y + np.outer(self.r_cav, u))

    def product_state(self) -> np.ndarray:
        """Kernel of ``L0``: product of the uncoupled steady states."""
        return vec(np.kron(unvec(self.r_cav, self.na), unvec(self.r_vib, self.nb)))


def decoupled_steady_state(L: Superoperator, *, rtol: float = 1e-13, maxiter: int = 400):
    """Column-stacked steady state, or ``None`` if the split does not reproduce ``L``."""
    split = SplitGenerator(L)
    if split.split_error() > SPLIT_CHECK:
        return None
    rho0 = split.product_state()
    n = rho0.size
    op = spla.LinearOperator((n, n), matvec=lambda d: d + split.solve(split.V @ d),
                             dtype=complex)
    rhs = -split.solve(split.V @ rho0)
    delta, info = spla.gmres(op, rhs, rtol=rtol, atol=0.0, restart=100, maxiter=maxiter)
    if info != 0:
        raise SolverError(f"decoupled GMRES did not converge (info={info})",
                          residual=float(np.linalg.norm(L.matrix @ (rho0 + delta))))
    return rho0 + delta
