import numpy as np
import pytest
import scipy.linalg as la
import scipy.sparse as sp

from ramanchd.errors import DegenerateSteadyStateError, PropagationError
from ramanchd.fock import CAVITY, VIBRATION, ModeSpace, dag, mode_ladder
from ramanchd.model import SystemParams, build_liouvillian, mean_field_amplitude, unvec, vec
from ramanchd.solver import (check_tau_grid, evolve_projections, observable_row,
                             propagate_action, regression_trace, steady_state)


@pytest.fixture
def tiny():
    p = SystemParams(delta=0.05, g=0.02, omega_pump=0.08)
    return build_liouvillian(p, ModeSpace.for_system(3, 2))


def _random_state(rng, dim):
    m = rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))
    rho = m @ m.conj().T
    return rho / np.trace(rho)


def test_action_matches_dense_expm(tiny, rng):
    x = _random_state(rng, 6)
    tau = np.array([0.0, 0.5, 3.0, 40.0, 400.0])
    dense = tiny.matrix.toarray()
    krylov = propagate_action(tiny, x, tau)
    for t, y in zip(tau, krylov):
        expected = unvec(la.expm(t * dense) @ vec(x), 6)
        np.testing.assert_allclose(y, expected, atol=1e-8, rtol=0)


def test_rk45_and_expm_agree_with_krylov(tiny, rng):
    x = _random_state(rng, 6)
    rows = np.array([observable_row(mode_ladder(tiny.space, CAVITY))])
    tau = np.linspace(0, 60, 31)
    kry = evolve_projections(tiny, x, rows, tau)
    rk = evolve_projections(tiny, x, rows, tau, method="rk45")
    ex = evolve_projections(tiny, x, rows, tau, method="expm")
    np.testing.assert_allclose(kry, ex, atol=1e-9)
    np.testing.assert_allclose(rk, ex, atol=1e-7)


def test_semigroup(small_system, rng):
    _, L, _ = small_system
    x = _random_state(rng, L.hilbert_dim)
    t1, t2 = 7.3, 21.9
    full = propagate_action(L, x, [t1 + t2])[0]
    step = propagate_action(L, propagate_action(L, x, [t1])[0], [t2])[0]
    np.testing.assert_allclose(full, step, atol=1e-8)


def test_fine_output_grid_costs_nothing_extra(small_system, rng):
    _, L, ss = small_system
    a = mode_ladder(L.space, CAVITY)
    coarse = np.linspace(0, 500, 6)
    fine = np.linspace(0, 500, 5001)
    r1 = regression_trace(L, dag(a), a @ ss.rho, coarse).values
    r2 = regression_trace(L, dag(a), a @ ss.rho, fine).values
    np.testing.assert_allclose(r2[::1000], r1, atol=1e-9)


def test_steady_state_properties(small_system):
    _, L, ss = small_system
    assert ss.residual < 1e-10
    assert ss.trace_error < 1e-12
    np.testing.assert_allclose(ss.rho, ss.rho.conj().T, atol=1e-14)
    assert ss.min_eigenvalue > -1e-10


@pytest.mark.parametrize("row", [0, 147, 399])
def test_replaced_row_does_not_matter(small_params, row):
    L = build_liouvillian(small_params, ModeSpace.for_system(5, 4))
    ref = steady_state(L, method="direct")
    alt = steady_state(L, method="direct", replace_row=row)
    np.testing.assert_allclose(alt.rho, ref.rho, atol=1e-12)


@pytest.mark.parametrize("kw", [{}, {"g": 0.0}, {"omega_pump": 0.0}, {"delta": 0.1},
                                {"delta": -0.1, "temperature": 0.0}])
def test_decoupled_matches_direct(kw):
    p = SystemParams(**kw)
    for disp in (0j, mean_field_amplitude(p)):
        L = build_liouvillian(p, ModeSpace.for_system(5, 4, displacement=disp))
        fast = steady_state(L)
        ref = steady_state(L, method="direct")
        assert fast.method == "decoupled"
        np.testing.assert_allclose(fast.rho, ref.rho, atol=1e-12)


def test_iterative_route(small_system):
    _, L, ss = small_system
    it = steady_state(L, method="iterative")
    np.testing.assert_allclose(it.rho, ss.rho, atol=1e-10)


def test_displaced_basis_is_a_change_of_basis():
    p = SystemParams(omega_pump=0.06)
    alpha = mean_field_amplitude(p)
    plain = ModeSpace.for_system(14, 5)
    shifted = ModeSpace.for_system(6, 5, displacement=alpha)
    obs = {}
    for name, space in (("plain", plain), ("shifted", shifted)):
        ss = steady_state(build_liouvillian(p, space))
        a, b = mode_ladder(space, CAVITY), mode_ladder(space, VIBRATION)
        obs[name] = np.array([ss.expect(a), ss.expect(dag(a) @ a), ss.expect(dag(b) @ b),
                              ss.expect(dag(a) @ a @ a)])
    np.testing.assert_allclose(obs["shifted"], obs["plain"], rtol=1e-7, atol=1e-10)


def test_degenerate_kernel_reported():
    # zero generator on a 2-level space: every state is stationary
    with pytest.raises(DegenerateSteadyStateError):
        steady_state(sp.csr_matrix((4, 4), dtype=complex), method="direct")


def test_tau_grid_validation():
    with pytest.raises(ValueError):
        check_tau_grid([])
    with pytest.raises(ValueError):
        check_tau_grid([0.0, 2.0, 1.0])
    with pytest.raises(ValueError):
        check_tau_grid([-1.0, 0.0])


def test_step_budget_reported(small_system, rng):
    _, L, _ = small_system
    with pytest.raises(PropagationError) as exc:
        propagate_action(L, _random_state(rng, L.hilbert_dim), [0.0, 5000.0], max_steps=2)
    assert "steps" in exc.value.diagnostics
