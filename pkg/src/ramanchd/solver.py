"""Steady states, propagation of ``exp(L tau) X`` and regression traces.

Propagation defaults to an adaptive Krylov (Arnoldi) exponential integrator
with error control in the style of Expokit. Inside every accepted step the
small projected exponential is reused to emit output at all grid points the
step covers, so fine output grids cost almost nothing. An explicit RK45
route (``method="rk45"``) and a dense ``expm`` route for tiny systems are
kept as independent cross-checks.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.integrate import RK45
from scipy.sparse.csgraph import reverse_cuthill_mckee

from .errors import DegenerateSteadyStateError, PropagationError, SolverError
from .fock import ModeSpace
from .model import Superoperator, trace_row, unvec, vec

logger = logging.getLogger(__name__)

DEFAULT_RTOL = 1e-8
DEFAULT_ATOL = 1e-10
DENSE_EXPM_MAX_DIM = 16


@dataclass(frozen=True, eq=False)
class SteadyState:
    rho: np.ndarray
    residual: float
    trace_error: float
    space: ModeSpace | None = None
    method: str = "direct"

    def expect(self, op) -> complex:
        return expect(op, self.rho)

    @property
    def min_eigenvalue(self) -> float:
        return float(np.linalg.eigvalsh(self.rho).min())


@dataclass(frozen=True, eq=False)
class RegressionTrace:
    tau_grid: np.ndarray
    values: np.ndarray


def expect(op, rho) -> complex:
    """``Tr(op rho)`` for sparse or dense ``op``."""
    rho = np.asarray(rho)
    if sp.issparse(op):
        return complex(sp.csr_matrix(op).multiply(rho.T).sum())
    return complex(np.sum(np.asarray(op) * rho.T))


def observable_row(op) -> np.ndarray:
    """Row vector ``r`` with ``r @ vec(X) == Tr(op X)``."""
    if sp.issparse(op):
        op = op.toarray()
    return np.asarray(op, dtype=complex).T.reshape(-1, order="F")


def _as_matrix(L):
    return L.matrix if isinstance(L, Superoperator) else sp.csr_matrix(L)


def _hilbert_dim(L) -> int:
    n = _as_matrix(L).shape[0]
    d = int(round(np.sqrt(n)))
    if d * d != n:
        raise ValueError(f"superoperator side {n} is not a perfect square")
    return d


def _trace_constrained(lmat: sp.csr_matrix, dim: int, replace_row: int) -> sp.csr_matrix:
    n = lmat.shape[0]
    if not 0 <= replace_row < n:
        raise ValueError(f"replace_row {replace_row} out of range")
    keep = np.ones(n)
    keep[replace_row] = 0.0
    tr = sp.csr_matrix(trace_row(dim)[None, :])
    e_r = sp.csr_matrix(([1.0], ([replace_row], [0])), shape=(n, 1))
    return (sp.diags(keep) @ lmat + e_r @ tr).tocsr()


def _splittable(L) -> bool:
    return (isinstance(L, Superoperator) and L.space is not None and L.space.n_modes == 2
            and L.space.n_sensors == 0 and "params" in L.metadata)


def steady_state(L: Superoperator, *, method: str = "auto", replace_row: int = 0,
                 x0=None, tol: float = 1e-10) -> SteadyState:
    """Solve ``L rho = 0`` with ``Tr rho = 1``.

    ``method="decoupled"`` treats the cavity-vibration coupling by GMRES
    around the exactly invertible uncoupled generator (see
    :mod:`ramanchd.decoupled`); it needs a two-mode :class:`Superoperator`.
    ``method="direct"`` replaces one row of ``L`` by the trace functional
    and uses SuperLU after a reverse Cuthill-McKee reordering;
    ``method="iterative"`` runs ILU-preconditioned GMRES from ``x0`` (an
    initial density operator, optional). ``"auto"`` picks ``decoupled``
    when possible and falls back to ``direct``.
    """
    lmat = _as_matrix(L)
    dim = _hilbert_dim(L)
    n = lmat.shape[0]
    lnorm = spla.norm(lmat)
    x = None

    if method == "auto":
        method = "direct"
        if _splittable(L):
            from .decoupled import decoupled_steady_state

            try:
                x = decoupled_steady_state(L)
            except SolverError as exc:
                logger.info("decoupled steady state failed (%s); using direct LU", exc)
            if x is not None:
                method = "decoupled"
    elif method == "decoupled":
        if not _splittable(L):
            raise ValueError("decoupled steady state needs a two-mode Superoperator")
        from .decoupled import decoupled_steady_state

        x = decoupled_steady_state(L)
        if x is None:
            raise SolverError("generator does not match the cavity-vibration split")

    a = _trace_constrained(lmat, dim, replace_row)
    rhs = np.zeros(n, dtype=complex)
    rhs[replace_row] = 1.0

    if method == "decoupled":
        pass
    elif method == "direct":
        perm = reverse_cuthill_mckee(a, symmetric_mode=False)
        ap = a[perm][:, perm].tocsc()
        try:
            lu = spla.splu(ap, permc_spec="COLAMD")
        except RuntimeError as exc:
            raise DegenerateSteadyStateError(
                f"trace-constrained Liouvillian is singular ({exc}); "
                "the kernel is not one-dimensional") from exc
        inv = np.empty_like(perm)
        inv[perm] = np.arange(n)

        def solve(b):
            return lu.solve(b[perm])[inv]

        x = solve(rhs)
        for _ in range(2):
            r = rhs - a @ x
            if np.linalg.norm(r) <= 1e-15 * max(1.0, np.linalg.norm(x)):
                break
            x = x + solve(r)
    elif method == "iterative":
        ilu = spla.spilu(a.tocsc(), drop_tol=1e-6, fill_factor=30)
        prec = spla.LinearOperator(a.shape, ilu.solve, dtype=complex)
        start = None if x0 is None else vec(x0)
        x, info = spla.gmres(a, rhs, x0=start, M=prec, rtol=1e-14, atol=0.0,
                             restart=60, maxiter=400)
        if info != 0:
            res = float(np.linalg.norm(lmat @ x))
            raise SolverError(f"GMRES did not converge (info={info})", residual=res)
    else:
        raise ValueError(f"unknown steady-state method {method!r}")

    if not np.all(np.isfinite(x)):
        raise DegenerateSteadyStateError("steady-state solve produced non-finite values")
    rho = unvec(x, dim)
    tr = np.trace(rho)
    if abs(tr) < 1e-12 or np.max(np.abs(rho)) > 1e8:
        raise DegenerateSteadyStateError(
            "trace-constrained solution blew up; the kernel is not one-dimensional")
    rho = 0.5 * (rho + rho.conj().T)
    rho = rho / np.trace(rho).real
    residual = float(np.linalg.norm(lmat @ vec(rho)))
    if residual > tol * max(1.0, lnorm):
        raise SolverError(
            f"steady-state residual {residual:.3e} exceeds {tol:.1e} * ||L||",
            residual=residual)
    space = L.space if isinstance(L, Superoperator) else None
    return SteadyState(rho=rho, residual=residual,
                       trace_error=float(abs(np.trace(rho) - 1.0)),
                       space=space, method=method)


# ---------------------------------------------------------------- propagation


def check_tau_grid(tau_grid) -> np.ndarray:
    tau = np.asarray(tau_grid, dtype=float).ravel()
    if tau.size == 0:
        raise ValueError("tau grid is empty")
    if not np.all(np.isfinite(tau)):
        raise ValueError("tau grid contains non-finite values")
    if tau[0] < 0:
        raise ValueError("tau grid must be non-negative")
    if np.any(np.diff(tau) < 0):
        raise ValueError("tau grid must be sorted")
    return tau


def _round_step(t):
    # Expokit's two-significant-digit rounding keeps step sizes reproducible.
    s = 10.0 ** (np.floor(np.log10(t)) - 1)
    return np.ceil(t / s) * s


def _krylov_sweep(A, v, tau, emit, *, m, rtol, atol, max_steps):
    """Advance ``v`` through ``tau`` with Krylov steps, calling
    ``emit(indices, basis, coeffs)`` where the state at ``tau[indices[j]]``
    is ``basis.T @ coeffs[:, j]``."""
    n = v.size
    m = int(min(m, n))
    anorm = float(abs(A).sum(axis=1).max())
    t_end = float(tau[-1])
    w = v.copy()
    beta = float(np.linalg.norm(w))
    t_now = 0.0
    k = 0  # next grid index to emit

    # grid points at tau == 0 are the initial state
    while k < tau.size and tau[k] == 0.0:
        emit(np.array([k]), w[None, :], np.ones((1, 1), dtype=complex))
        k += 1
    if k == tau.size:
        return {"steps": 0}
    if beta == 0.0:
        zeros = np.zeros((1, tau.size - k), dtype=complex)
        emit(np.arange(k, tau.size), w[None, :], zeros)
        return {"steps": 0}

    eps = np.finfo(float).eps
    xm = 1.0 / m
    fact = ((m + 1) / np.e) ** (m + 1) * np.sqrt(2 * np.pi * (m + 1))
    tol0 = atol + rtol * beta
    t_new = (1.0 / max(anorm, eps)) * ((fact * tol0) / (4.0 * beta * max(anorm, eps))) ** xm
    t_new = _round_step(t_new)
    steps = rejects = 0
    err_total = 0.0

    while t_now < t_end:
        steps += 1
        if steps > max_steps:
            raise PropagationError(
                f"Krylov propagation exceeded {max_steps} steps at tau={t_now:.6g}",
                diagnostics={"t_now": t_now, "steps": steps, "rejects": rejects,
                             "last_step": t_new, "anorm": anorm})
        t_step = min(t_end - t_now, t_new)
        V = np.empty((m + 1, n), dtype=complex)
        H = np.zeros((m + 2, m + 2), dtype=complex)
        V[0] = w / beta
        happy = False
        mb = m
        for j in range(m):
            p = A @ V[j]
            p_norm = np.linalg.norm(p)
            basis_j = V[: j + 1]
            h = (basis_j @ p.conj()).conj()
            p -= h @ basis_j
            s = float(np.linalg.norm(p))
            if s < 0.7 * p_norm:
                # DGKS reorthogonalization
                h2 = (basis_j @ p.conj()).conj()
                p -= h2 @ basis_j
                h += h2
                s = float(np.linalg.norm(p))
            H[: j + 1, j] = h
            if s <= 1e-13 * max(anorm, 1.0):
                happy = True
                mb = j + 1
                t_step = t_end - t_now
                break
            H[j + 1, j] = s
            V[j + 1] = p / s
        if happy:
            Hs = H[:mb, :mb]
            basis = V[:mb]
            err_loc = 0.0
        else:
            H[m + 1, m] = 1.0
            avnorm = float(np.linalg.norm(A @ V[m]))
            tol_loc = atol + rtol * beta
            for _ in range(30):
                F = la.expm(t_step * H)
                phi1 = abs(beta * F[m, 0])
                phi2 = abs(beta * F[m + 1, 0] * avnorm)
                if phi1 > 10 * phi2:
                    err_loc, xm = phi2, 1.0 / m
                elif phi1 > phi2:
                    err_loc, xm = (phi1 * phi2) / (phi1 - phi2), 1.0 / m
                else:
                    err_loc, xm = phi1, 1.0 / (m - 1)
                if err_loc <= 1.2 * tol_loc:
                    break
                rejects += 1
                t_step = _round_step(0.9 * t_step * (tol_loc / err_loc) ** xm)
            else:
                raise PropagationError(
                    "Krylov step size collapsed",
                    diagnostics={"t_now": t_now, "t_step": t_step, "err_loc": err_loc,
                                 "tol": tol_loc, "anorm": anorm, "rejects": rejects})
            Hs = H
            basis = V
        t_next = t_now + t_step
        if t_end - t_next <= 1e-12 * max(t_end, 1.0):
            t_next = t_end

        # dense output for every grid point in (t_now, t_next]
        stop = int(np.searchsorted(tau, t_next, side="right"))
        size = Hs.shape[0]
        nb = basis.shape[0]
        if stop > k:
            idx = np.arange(k, stop)
            coeffs = np.empty((nb, idx.size), dtype=complex)
            cache = {}
            y = np.zeros(size, dtype=complex)
            y[0] = beta
            t_prev = t_now
            for j, i in enumerate(idx):
                dt = float(tau[i]) - t_prev
                if dt > 0:
                    key = round(dt, 12)
                    E = cache.get(key)
                    if E is None:
                        E = la.expm(dt * Hs)
                        cache[key] = E
                    y = E @ y
                    t_prev = float(tau[i])
                coeffs[:, j] = y[:nb]
            emit(idx, basis, coeffs)
            k = stop

        y_end = la.expm((t_next - t_now) * Hs)[:, 0] * beta
        w = basis.T @ y_end[:nb]
        beta = float(np.linalg.norm(w))
        t_now = t_next
        err_total += max(err_loc, anorm * eps)
        if beta == 0.0:
            if k < tau.size:
                emit(np.arange(k, tau.size), w[None, :],
                     np.zeros((1, tau.size - k), dtype=complex))
            break
        if not happy:
            t_new = _round_step(0.9 * t_step * ((atol + rtol * beta) / max(err_loc, 1e-300)) ** xm)
            t_new = min(t_new, 10.0 * t_step)
    return {"steps": steps, "rejects": rejects, "error_estimate": err_total}


def _rk45_sweep(A, v, tau, emit, *, rtol, atol, max_steps):
    if tau[-1] == 0.0:
        emit(np.arange(tau.size), v[None, :], np.ones((1, tau.size), dtype=complex))
        return {"steps": 0}
    solver = RK45(lambda t, y: A @ y, 0.0, v.copy(), float(tau[-1]), rtol=rtol, atol=atol)
    k = 0
    while k < tau.size and tau[k] == 0.0:
        emit(np.array([k]), v[None, :], np.ones((1, 1), dtype=complex))
        k += 1
    steps = 0
    while k < tau.size:
        if solver.status != "running":
            raise PropagationError(f"RK45 stopped: {solver.status}",
                                   diagnostics={"t": solver.t, "message": solver.status})
        msg = solver.step()
        steps += 1
        if solver.status == "failed" or steps > max_steps:
            raise PropagationError(
                f"RK45 step-size failure at tau={solver.t:.6g}: {msg}",
                diagnostics={"t": solver.t, "step": solver.step_size, "steps": steps})
        stop = int(np.searchsorted(tau, solver.t, side="right"))
        if solver.status == "finished":
            stop = tau.size
        if stop > k:
            dense = solver.dense_output()
            for i in range(k, stop):
                y = dense(tau[i]) if tau[i] < solver.t else solver.y
                emit(np.array([i]), y[None, :], np.ones((1, 1), dtype=complex))
            k = stop
    return {"steps": steps}


def _expm_sweep(A, v, tau, emit):
    dense = A.toarray()
    d = int(round(np.sqrt(dense.shape[0])))
    if d > DENSE_EXPM_MAX_DIM:
        raise ValueError(
            f"dense expm is reserved for Hilbert dimension <= {DENSE_EXPM_MAX_DIM}, got {d}")
    for i, t in enumerate(tau):
        y = la.expm(t * dense) @ v
        emit(np.array([i]), y[None, :], np.ones((1, 1), dtype=complex))
    return {"steps": tau.size}


def _sweep(L, x0, tau, emit, method, rtol, atol, krylov_dim, max_steps):
    A = _as_matrix(L)
    v = np.asarray(x0, dtype=complex).ravel()
    if v.size != A.shape[0]:
        raise ValueError(f"vector length {v.size} does not match superoperator {A.shape[0]}")
    if method == "krylov":
        return _krylov_sweep(A, v, tau, emit, m=krylov_dim, rtol=rtol, atol=atol,
                             max_steps=max_steps)
    if method == "rk45":
        return _rk45_sweep(A, v, tau, emit, rtol=rtol, atol=atol, max_steps=max_steps)
    if method == "expm":
        return _expm_sweep(A, v, tau, emit)
    raise ValueError(f"unknown propagation method {method!r}")


def evolve_projections(L, X, rows, tau_grid, *, method="krylov", rtol=DEFAULT_RTOL,
                       atol=DEFAULT_ATOL, krylov_dim=40, max_steps=100_000):
    """Sample ``rows @ vec(exp(L tau) X)`` on ``tau_grid``.

    ``X`` is an operator (D x D) or an already vectorized state; ``rows`` is a
    ``(k, D^2)`` array of observable rows (see :func:`observable_row`).
    Returns a complex array of shape ``(len(tau_grid), k)``.
    """
    tau = check_tau_grid(tau_grid)
    x0 = vec(X) if np.ndim(X) == 2 or sp.issparse(X) else np.asarray(X, dtype=complex)
    rows = np.atleast_2d(np.asarray(rows, dtype=complex))
    out = np.empty((tau.size, rows.shape[0]), dtype=complex)

    def emit(idx, basis, coeffs):
        out[idx] = ((rows @ basis.T) @ coeffs).T

    info = _sweep(L, x0, tau, emit, method, rtol, atol, krylov_dim, max_steps)
    logger.debug("propagation %s: %s", method, info)
    return out


def propagate_action(L, X, tau_grid, *, method="krylov", rtol=DEFAULT_RTOL,
                     atol=DEFAULT_ATOL, krylov_dim=40, max_steps=100_000):
    """Return ``[exp(L tau_k) X for tau_k in tau_grid]`` as dense operators."""
    tau = check_tau_grid(tau_grid)
    dim = _hilbert_dim(L)
    x0 = vec(X)
    states = np.empty((tau.size, x0.size), dtype=complex)

    def emit(idx, basis, coeffs):
        states[idx] = (basis.T @ coeffs).T

    _sweep(L, x0, tau, emit, method, rtol, atol, krylov_dim, max_steps)
    out = [unvec(s, dim).copy() for s in states]
    for i in np.flatnonzero(tau == 0.0):
        out[i] = np.asarray(X.toarray() if sp.issparse(X) else X, dtype=complex).copy()
    return out


def regression_trace(L, M, X, tau_grid, **kwargs) -> RegressionTrace:
    """Quantum-regression trace ``Tr{M exp(L tau) X}`` on ``tau_grid``."""
    tau = check_tau_grid(tau_grid)
    values = evolve_projections(L, X, observable_row(M)[None, :], tau, **kwargs)[:, 0]
    return RegressionTrace(tau_grid=tau, values=values)
