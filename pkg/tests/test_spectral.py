import numpy as np
import pytest
import scipy.sparse as sp

from fiberspec.fock import SparseOperator
from fiberspec.spectral import (
    DispersionRow,
    DispersionTable,
    IndefiniteShiftError,
    dispersion,
    fd_gradient,
    lowest_eigenpair,
    shifted_lowest,
    solve_ground,
    solve_shifted,
)

from conftest import make_model

XI = np.array([0.3, 0.0, 0.0])


def test_free_ground_state(free_model):
    _, gs = solve_ground(free_model, XI)
    assert gs.energy == pytest.approx(0.09, abs=1e-12)
    assert abs(gs.psi[0]) == pytest.approx(1.0, abs=1e-12)
    assert gs.cluster_size == 1


def test_free_ground_state_lanczos(free_model):
    _, gs = solve_ground(free_model, XI, method="lanczos")
    assert gs.energy == pytest.approx(0.09, abs=1e-10)
    assert gs.method == "lanczos"


def test_spin_degeneracy_at_zero_coupling():
    m = make_model(e=0.0, spin=True)
    for method in ("dense", "lanczos"):
        _, gs = solve_ground(m, XI, method=method)
        assert gs.cluster_size == 2
        assert gs.energy == pytest.approx(0.09, abs=1e-10)
        C = gs.cluster
        np.testing.assert_allclose(C.conj().T @ C, np.eye(2), atol=1e-10)


def test_record_invariants(weak_spin_model):
    fiber, gs = solve_ground(weak_spin_model, XI, method="lanczos", tol=1e-10)
    H = fiber.H.matrix
    assert np.linalg.norm(gs.psi) == pytest.approx(1.0, abs=1e-12)
    assert np.linalg.norm(H @ gs.psi - gs.energy * gs.psi) <= 1e-10 * max(1, abs(gs.energy))
    C = gs.cluster
    np.testing.assert_allclose(C.conj().T @ C, np.eye(gs.cluster_size), atol=1e-10)
    assert gs.gap > 0


def test_lanczos_matches_dense_on_model(weak_spin_model):
    H = weak_spin_model.hamiltonian([0.2, -0.1, 0.05]).H
    d = lowest_eigenpair(H, method="dense")
    lz = lowest_eigenpair(H, method="lanczos", tol=1e-11)
    assert lz.energy == pytest.approx(d.energy, rel=1e-9)
    assert lz.cluster_size == d.cluster_size
    assert lz.gap == pytest.approx(d.gap, rel=1e-6)


def test_rejects_non_hermitian():
    op = SparseOperator(sp.csr_matrix(np.array([[0, 1], [0, 0]])), hermitian=False)
    with pytest.raises(ValueError):
        lowest_eigenpair(op)


def test_determinism(weak_model):
    H = weak_model.hamiltonian([0.1, 0.2, 0.0]).H
    a = lowest_eigenpair(H, method="lanczos")
    b = lowest_eigenpair(H, method="lanczos")
    assert a.energy == b.energy and a.residual == b.residual
    assert np.array_equal(a.psi, b.psi)


@pytest.mark.parametrize("spin", [False, True])
def test_variational_monotonicity(spin):
    xi = [0.3, 0.1, 0.0]
    energies = []
    for n_max in (1, 2, 3):
        m = make_model(e=0.4, spin=spin, n_max=n_max, shells=1)
        energies.append(solve_ground(m, xi)[1].energy)
    tol = 1e-10
    assert energies[1] <= energies[0] + tol
    assert energies[2] <= energies[1] + tol


def test_free_dispersion(free_model):
    xis = [np.array([x, 0.0, 0.0]) for x in np.linspace(-0.45, 0.45, 7)]
    table = dispersion(free_model, xis)
    for r in table.rows:
        assert r.energy == pytest.approx(r.xi @ r.xi, abs=1e-12)
        assert r.t == pytest.approx(0.0, abs=1e-12)
        assert r.n_expect <= 1e-12


def test_parity(weak_model):
    xis = [np.array([0.2, 0.1, -0.15]), np.array([-0.2, -0.1, 0.15])]
    t = dispersion(weak_model, xis, tol=1e-10)
    assert abs(t.rows[0].energy - t.rows[1].energy) <= 2e-10


def test_dispersion_threaded_matches_serial(weak_model):
    xis = [np.array([x, 0.0, 0.0]) for x in (0.0, 0.1, 0.2)]
    a = dispersion(weak_model, xis)
    b = dispersion(weak_model, xis, workers=2)
    assert np.array_equal(a.energies(), b.energies())


def test_table_rejects_duplicate_xi():
    r = DispersionRow(np.zeros(3), 0.0, 0.0, np.zeros(3), 1.0, 1, 0.0)
    with pytest.raises(ValueError):
        DispersionTable([r, r])


def test_csv_layout(tmp_path, free_model):
    t = dispersion(free_model, [XI])
    t.write_csv(tmp_path / "d.csv", config_hash="abc")
    raw = (tmp_path / "d.csv").read_bytes()
    lines = raw.split(b"\r\n")
    assert lines[0] == b"xi_x,xi_y,xi_z,E,t,N_expect,gap,iters,residual,config_hash"
    assert lines[1].startswith(b"0.29999999999999999,0,0,0.089999999999999997,")


def test_fd_gradient_free(free_model):
    g = fd_gradient(free_model, XI, h=1e-3)
    np.testing.assert_allclose(g.grad, [0.6, 0, 0], atol=1e-8)
    g0 = fd_gradient(free_model, np.zeros(3), h=1e-3)
    np.testing.assert_allclose(g0.grad, 0, atol=1e-8)


def test_fd_gradient_parity_zero(weak_model):
    g = fd_gradient(weak_model, np.zeros(3), h=1e-3)
    np.testing.assert_allclose(g.grad, 0, atol=1e-8)


def test_fd_gradient_richardson(weak_model):
    g = fd_gradient(weak_model, XI, h=1e-3, richardson=True)
    # the step-halved extrapolation is the oracle; the raw O(h^2) estimate
    # must lie within a few error estimates of it
    np.testing.assert_allclose(g.grad, g.extrapolated, atol=max(4 * g.error, 1e-9))
    with pytest.raises(ValueError):
        fd_gradient(weak_model, XI, h=0.0)


def test_shifted_solve_free(free_model):
    eta = free_model.reference_vector()
    s = solve_shifted(free_model, XI, [0.0, 0.2, 0.0], 0.09, eta)
    expected = eta / 0.24
    np.testing.assert_allclose(s.x, expected, atol=1e-10)
    assert s.x[0].real == pytest.approx(4.16667, abs=1e-5)
    assert s.lowest_shifted == pytest.approx(0.24, abs=1e-12)


def test_shifted_solve_residual(weak_spin_model, rng):
    m = weak_spin_model
    _, gs = solve_ground(m, XI)
    eta = rng.standard_normal(m.dim) + 1j * rng.standard_normal(m.dim)
    k = np.array([0.0, 0.325, 0.0])
    s = solve_shifted(m, XI, k, gs.energy, eta, tol=1e-10)
    A = m.hamiltonian(XI - k).H.matrix + (0.325 - gs.energy) * sp.identity(m.dim)
    assert np.linalg.norm(A @ s.x - eta) / np.linalg.norm(eta) <= 1e-10


def test_shifted_solve_small_antiparallel_k(weak_model):
    _, gs = solve_ground(weak_model, XI)
    s = solve_shifted(weak_model, XI, [-0.01, 0, 0], gs.energy, weak_model.reference_vector())
    assert s.lowest_shifted > 0 and s.residual <= 1e-10


def test_indefinite_shift_detected(free_model):
    # beyond |grad E| = 1 the truncated model lets a photon parallel to the
    # gradient close the gap; scan |k| until it does
    xi = np.array([2.0, 0.0, 0.0])
    _, gs = solve_ground(free_model, xi)
    eta = free_model.reference_vector()
    found = None
    for kabs in np.arange(0.1, 2.0, 0.1):
        k = np.array([kabs, 0, 0])
        if shifted_lowest(free_model, xi, k, gs.energy) <= 0:
            found = k
            break
        solve_shifted(free_model, xi, k, gs.energy, eta)
    assert found is not None
    with pytest.raises(IndefiniteShiftError) as exc:
        solve_shifted(free_model, xi, found, gs.energy, eta)
    assert exc.value.lowest <= 0
