import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from fiberspec.field import (
    RHO0,
    CouplingParams,
    FieldDiscretization,
    Model,
    build_mode_set,
    direction_set,
    is_antipodal_closed,
    polarization_frame,
)

from conftest import make_model


def test_radial_nodes_linear():
    d = FieldDiscretization("linear", 2, "axes6")
    ms = build_mode_set(d, CouplingParams(0.0, 1.0, 0.1))
    np.testing.assert_allclose(sorted(set(np.round(ms.kabs, 14))), [0.325, 0.775])
    assert len(ms) == 12


def test_weights_against_quadrature_oracle():
    d = FieldDiscretization("linear", 2, "axes6")
    p = CouplingParams(0.0, 1.0, 0.1)
    ms = build_mode_set(d, p)
    edges = [0.1, 0.55, 1.0]
    for j in range(2):
        vol, _ = quad(lambda r: r * r, edges[j], edges[j + 1])
        sel = ms.shell == j
        np.testing.assert_allclose(ms.weights[sel], vol * 4 * math.pi / 6, rtol=1e-12)
    assert ms.weights.sum() == pytest.approx(4 * math.pi / 3 * (1 - 0.1 ** 3), abs=1e-10)


@pytest.mark.parametrize("angular", ["axes6", "icosa12", "product"])
@pytest.mark.parametrize("radial", ["linear", "logarithmic"])
def test_shell_volume_sum(angular, radial):
    d = FieldDiscretization(radial, 3, angular, n_theta=3, n_phi=6)
    p = CouplingParams(0.0, 1.3, 0.07)
    ms = build_mode_set(d, p)
    assert ms.weights.sum() == pytest.approx(4 * math.pi / 3 * (1.3 ** 3 - 0.07 ** 3), abs=1e-10)
    assert np.all((ms.kabs >= 0.07) & (ms.kabs <= 1.3))


def test_coupling_amplitude_formula():
    d = FieldDiscretization("linear", 2, "axes6")
    ms = build_mode_set(d, CouplingParams(0.0, 1.0, 0.1))
    for m in range(len(ms)):
        g = (2 * math.pi) ** -1.5 / math.sqrt(2 * ms.kabs[m]) * math.sqrt(ms.weights[m])
        assert ms.g[m] == pytest.approx(g, rel=1e-14)
    assert np.all(ms.g > 0)
    assert RHO0 == pytest.approx(0.0634936359342410, rel=1e-14)


def test_logarithmic_nodes_are_geometric_midpoints():
    d = FieldDiscretization("logarithmic", 2, "axes6")
    ms = build_mode_set(d, CouplingParams(0.0, 1.0, 0.01))
    np.testing.assert_allclose(sorted(set(np.round(ms.kabs, 14))),
                               [math.sqrt(0.01 * 0.1), math.sqrt(0.1 * 1.0)])


def test_shells_per_decade():
    d = FieldDiscretization("logarithmic", 1, "axes6", shells_per_decade=4)
    assert d.shell_count(1.0, 0.1) == 4
    assert d.shell_count(1.0, 0.00625) == 9
    assert d.shell_count(1.0, 0.05) == 6


def test_rejects_bad_cutoffs():
    with pytest.raises(ValueError):
        CouplingParams(0.1, 0.5, 0.6)
    with pytest.raises(ValueError):
        CouplingParams(0.1, 1.0, 0.0)
    with pytest.raises(ValueError):
        FieldDiscretization("cubic", 2, "axes6")
    with pytest.raises(ValueError):
        FieldDiscretization("linear", 2, "product", n_phi=5, antipodal_symmetric=True)


@pytest.mark.parametrize("angular", ["axes6", "icosa12", "product"])
def test_direction_sets(angular):
    dirs, w = direction_set(FieldDiscretization("linear", 1, angular, n_theta=4, n_phi=6))
    assert w.sum() == pytest.approx(4 * math.pi, abs=1e-12)
    np.testing.assert_allclose(np.linalg.norm(dirs, axis=1), 1, atol=1e-14)
    assert is_antipodal_closed(dirs)


def test_polarization_poles_and_axes():
    e1, e2 = polarization_frame([0, 0, 1.0])
    np.testing.assert_array_equal(e1, [1, 0, 0])
    np.testing.assert_array_equal(e2, [0, 1, 0])
    e1, e2 = polarization_frame([0, 0, -1.0])
    np.testing.assert_array_equal(e1, [1, 0, 0])
    np.testing.assert_array_equal(e2, [0, -1, 0])
    e1, e2 = polarization_frame([1.0, 0, 0])
    np.testing.assert_allclose(e1, [0, -1, 0], atol=1e-15)
    np.testing.assert_allclose(e2, [0, 0, -1], atol=1e-15)
    with pytest.raises(ValueError):
        polarization_frame([1.0, 1.0, 0])


def _check_frame(khat):
    e1, e2 = polarization_frame(khat)
    assert abs(khat @ e1) < 1e-12 and abs(khat @ e2) < 1e-12 and abs(e1 @ e2) < 1e-12
    assert abs(e1 @ e1 - 1) < 1e-12 and abs(e2 @ e2 - 1) < 1e-12
    assert np.linalg.det(np.column_stack([khat, e1, e2])) == pytest.approx(1.0, abs=1e-12)


def test_polarization_frame_sampled(rng):
    v = rng.standard_normal((1000, 3))
    for k in v / np.linalg.norm(v, axis=1)[:, None]:
        _check_frame(k)


@settings(max_examples=200, deadline=None)
@given(st.floats(-1, 1), st.floats(0, 2 * math.pi))
def test_polarization_frame_property(ct, phi):
    st_ = math.sqrt(max(0.0, 1 - ct * ct))
    k = np.array([st_ * math.cos(phi), st_ * math.sin(phi), ct])
    k /= np.linalg.norm(k)
    _check_frame(k)


def test_mode_set_transversality():
    ms = build_mode_set(FieldDiscretization("linear", 2, "icosa12"), CouplingParams(0.1, 1.0, 0.1))
    for lam in range(2):
        assert np.max(np.abs(np.einsum("mi,mi->m", ms.k, ms.eps[:, lam]))) < 1e-12


def test_mode_set_parity():
    ms = build_mode_set(FieldDiscretization("logarithmic", 3, "product", n_theta=3, n_phi=4),
                        CouplingParams(0.1, 1.0, 0.05))
    ks = {tuple(np.round(k, 12)) for k in ms.k}
    assert ks == {tuple(np.round(-k, 12)) + () for k in ms.k} or \
        all(tuple(np.round(-k, 12)) in ks for k in ms.k)


def test_mode_csv(tmp_path):
    ms = build_mode_set(FieldDiscretization("linear", 1, "axes6"), CouplingParams(0.1, 1.0, 0.1))
    ms.write_csv(tmp_path / "m.csv")
    lines = (tmp_path / "m.csv").read_text().splitlines()
    assert lines[0].startswith("m,kx,ky,kz,kabs,w,g,eps1_x")
    assert len(lines) == 7


def test_vacuum_field_correlator(weak_model):
    m = weak_model
    F = m.fields
    vac = m.reference_vector()
    eps = m.modes.channel_eps
    g = m.modes.channel_g
    for i in range(3):
        for j in range(3):
            val = np.vdot(F.A[i] @ vac, F.A[j] @ vac)
            oracle = sum(g[mu] ** 2 * eps[mu, i] * eps[mu, j] for mu in range(len(g)))
            assert val == pytest.approx(oracle, abs=1e-15)


def test_b_field_hermitian_and_zero_mean(weak_spin_model):
    F = weak_spin_model.fields
    vac = weak_spin_model.reference_vector()
    for b in F.B:
        assert b.hermitian and b.is_exactly_hermitian()
        assert abs(np.vdot(vac, b @ vac)) == 0


def test_free_hamiltonian_is_diagonal(free_model):
    m = free_model
    xi = np.array([0.3, -0.1, 0.05])
    H = m.hamiltonian(xi).H.toarray()
    assert np.count_nonzero(H - np.diag(np.diag(H))) == 0
    occ = m.basis.occupations.astype(float)
    k = m.modes.channel_k
    kabs = m.modes.channel_kabs
    for s in range(m.dim):
        p = xi - occ[s] @ k
        assert H[s, s].real == pytest.approx(p @ p + occ[s] @ kabs, abs=1e-14)


@pytest.mark.parametrize("spin", [False, True])
def test_vacuum_energy(spin):
    m = make_model(e=0.7, spin=spin)
    xi = np.array([0.2, 0.1, 0.0])
    vac = m.reference_vector()
    val = np.vdot(vac, m.hamiltonian(xi).H @ vac).real
    oracle = xi @ xi + 0.7 ** 2 * sum(2 * m.modes.g ** 2)
    assert val == pytest.approx(oracle, rel=1e-13)


def test_hamiltonian_hermitian_and_reproducible(weak_spin_model):
    m = weak_spin_model
    xi = np.array([0.1, 0.2, -0.3])
    f = m.hamiltonian(xi)
    assert f.H.hermitian and f.H.is_exactly_hermitian()
    parts = sum(v.matrix @ v.matrix for v in f.v) + m.fields.H_f.matrix
    from fiberspec.field import spin_zeeman
    parts = parts + spin_zeeman(m.fields, m.params.e) + m.params.e ** 2 * m.fields.a2_closure.matrix
    assert abs(parts - f.H.matrix).max() < 1e-15


@pytest.mark.parametrize("spin", [False, True])
def test_hamiltonian_is_compression_of_larger_truncation(spin):
    # the graded basis at n_max is a prefix of the one at n_max + 1, so H must
    # equal the leading block of the bigger matrix (per spin block)
    small = make_model(e=0.6, spin=spin, n_max=2, shells=1)
    big = make_model(e=0.6, spin=spin, n_max=3, shells=1)
    xi = [0.25, -0.1, 0.4]
    Hs = small.hamiltonian(xi).H.toarray()
    Hb = big.hamiltonian(xi).H.toarray()
    d, D = small.basis.dim, big.basis.dim
    blocks = [(0, 0)] if not spin else [(0, 0), (0, 1), (1, 0), (1, 1)]
    for a, b in blocks:
        np.testing.assert_allclose(Hs[a * d:(a + 1) * d, b * d:(b + 1) * d],
                                   Hb[a * D:a * D + d, b * D:b * D + d], atol=1e-14)


def test_a2_closure_lives_on_top_layer(weak_model):
    C = weak_model.fields.a2_closure.toarray()
    low = weak_model.fields.photon_layer_mask(weak_model.n_max - 1)
    assert np.abs(C[:, low]).max() < 1e-15
    assert np.abs(C[low, :]).max() < 1e-15
    assert np.abs(C[np.ix_(~low, ~low)]).max() > 0


def test_velocity_shift(weak_model):
    xi = np.array([0.3, 0.0, 0.1])
    k = np.array([0.05, -0.2, 0.1])
    v1 = weak_model.velocity(xi - k)
    v0 = weak_model.velocity(xi)
    for i in range(3):
        d = v1[i].matrix - v0[i].matrix
        np.testing.assert_allclose(d.diagonal(), -k[i], atol=1e-15)
        assert abs(d - d.multiply(np.eye(weak_model.dim))).max() == 0 or \
            abs(d.tocoo().data[d.tocoo().row != d.tocoo().col]).max() < 1e-16


def test_zero_coupling_ignores_fields():
    m = make_model(e=0.0, spin=True)
    assert any(a.nnz for a in m.fields.A)
    H = m.hamiltonian([0.1, 0, 0]).H.toarray()
    assert np.count_nonzero(H - np.diag(np.diag(H))) == 0


@pytest.mark.parametrize("spin", [False, True])
def test_pull_through_operator_exact_subspace(spin):
    m = make_model(e=0.5, spin=spin, n_max=3, shells=1)
    idx = np.flatnonzero(m.fields.photon_layer_mask(1))
    top = np.flatnonzero(~m.fields.photon_layer_mask(2))
    for mu in (0, 3, 7):
        P = m.pull_through_operator([0.2, -0.1, 0.05], mu)
        assert abs(P[:, idx]).max() < 1e-12
        # and it does not vanish on the top layer
        assert abs(P[:, top]).max() > 1e-6


def test_field_operators_dimension_mismatch():
    from fiberspec.field import assemble_field_operators
    from fiberspec.fock import enumerate_basis
    ms = build_mode_set(FieldDiscretization("linear", 1, "axes6"), CouplingParams(0.1, 1.0, 0.1))
    with pytest.raises(ValueError):
        assemble_field_operators(ms, enumerate_basis(5, 2), CouplingParams(0.1, 1.0, 0.1))
