"""Discretized transverse photon field and the fiber Hamiltonian H(xi).

The continuum field is replaced by a radial x angular quadrature grid on
the shell sigma <= |k| <= Lambda.  Each spatial mode m carries two
polarization channels; channel index ``mu = 2*m + lam``.  Quadrature
weights are folded into the coupling amplitude,

    g_m = rho(|k_m|) / sqrt(2 |k_m|) * sqrt(w_m),   rho = (2 pi)^(-3/2) chi_Lambda,

so that sums over channels of |a_mu psi|^2 approximate the continuum
integral over k.  The Hamiltonian keeps the normalization without a 1/2m
factor:

    H(xi) = (xi - P_f + e A)^2 + e sigma.B + H_f.
"""

from __future__ import annotations

import csv
import hashlib
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from .fock import (
    PAULI,
    FockBasis,
    SparseOperator,
    enumerate_basis,
    hermitian_part,
    identity,
    tensor_with_spin,
)

RHO0 = (2.0 * math.pi) ** -1.5
ANGULAR_SCHEMES = ("axes6", "icosa12", "product")
RADIAL_SCHEMES = ("linear", "logarithmic")


@dataclass(frozen=True)
class CouplingParams:
    e: float
    lambda_uv: float = 1.0
    sigma_ir: float = 0.05
    spin: bool = False

    def __post_init__(self):
        if not math.isfinite(self.e):
            raise ValueError("coupling e must be finite")
        if not self.lambda_uv > 0:
            raise ValueError(f"lambda_uv must be > 0, got {self.lambda_uv}")
        if not 0 < self.sigma_ir < self.lambda_uv:
            raise ValueError(
                f"need 0 < sigma_ir < lambda_uv, got sigma_ir={self.sigma_ir}, "
                f"lambda_uv={self.lambda_uv}")


@dataclass(frozen=True)
class FieldDiscretization:
    """Radial shells times a direction set.

    ``shells_per_decade``, when given, overrides ``radial_shells`` with
    ceil(shells_per_decade * log10(Lambda / sigma)) so that sweeps over
    sigma keep a fixed logarithmic resolution.
    """

    radial_scheme: str = "linear"
    radial_shells: int = 2
    angular_scheme: str = "axes6"
    n_theta: int = 4
    n_phi: int = 8
    antipodal_symmetric: bool = True
    shells_per_decade: float | None = None

    def __post_init__(self):
        if self.radial_scheme not in RADIAL_SCHEMES:
            raise ValueError(f"unknown radial scheme {self.radial_scheme!r}")
        if self.angular_scheme not in ANGULAR_SCHEMES:
            raise ValueError(f"unknown angular scheme {self.angular_scheme!r}")
        if self.radial_shells < 1:
            raise ValueError("radial_shells must be >= 1")
        if self.shells_per_decade is not None and self.shells_per_decade <= 0:
            raise ValueError("shells_per_decade must be > 0")
        if self.angular_scheme == "product":
            if self.n_theta < 1 or self.n_phi < 1:
                raise ValueError("product scheme needs n_theta, n_phi >= 1")
            if self.antipodal_symmetric and self.n_phi % 2:
                raise ValueError("antipodal product grid needs an even n_phi")

    def shell_count(self, lambda_uv: float, sigma_ir: float) -> int:
        if self.shells_per_decade is None:
            return self.radial_shells
        decades = math.log10(lambda_uv / sigma_ir)
        # guard against 4*1.0000000001 -> 5
        return max(1, math.ceil(round(self.shells_per_decade * decades, 9)))


def direction_set(d: FieldDiscretization) -> tuple[np.ndarray, np.ndarray]:
    """Unit directions (n, 3) and solid-angle weights summing to 4 pi."""
    if d.angular_scheme == "axes6":
        dirs = np.array([[1, 0, 0], [-1, 0, 0], [0, 1, 0],
                         [0, -1, 0], [0, 0, 1], [0, 0, -1]], dtype=float)
    elif d.angular_scheme == "icosa12":
        phi = (1 + math.sqrt(5)) / 2
        raw = []
        for a in (1, -1):
            for b in (phi, -phi):
                raw += [(0, a, b), (a, b, 0), (b, 0, a)]
        dirs = np.array(raw, dtype=float)
        dirs /= np.linalg.norm(dirs, axis=1)[:, None]
    else:
        x, wx = np.polynomial.legendre.leggauss(d.n_theta)
        phis = 2 * math.pi * (np.arange(d.n_phi) + 0.5) / d.n_phi
        rows, wts = [], []
        for ct, wt in zip(x, wx):
            st = math.sqrt(max(0.0, 1 - ct * ct))
            for ph in phis:
                rows.append((st * math.cos(ph), st * math.sin(ph), ct))
                wts.append(wt * 2 * math.pi / d.n_phi)
        dirs = np.array(rows)
        return dirs, np.array(wts)
    return dirs, np.full(len(dirs), 4 * math.pi / len(dirs))


def is_antipodal_closed(dirs: np.ndarray, atol: float = 1e-12) -> bool:
    for w in dirs:
        if not np.any(np.all(np.abs(dirs + w) <= atol, axis=1)):
            return False
    return True


def polarization_frame(khat) -> tuple[np.ndarray, np.ndarray]:
    """Right-handed transverse pair (eps1, eps2) for a unit direction.

    eps1 = khat x z / |khat x z|, eps2 = khat x eps1.  At the poles the
    frame is (x, y) for +z and (x, -y) for -z.
    """
    khat = np.asarray(khat, dtype=float)
    if abs(np.linalg.norm(khat) - 1.0) > 1e-12:
        raise ValueError(f"direction must be a unit vector, |khat| = {np.linalg.norm(khat)}")
    c = np.cross(khat, [0.0, 0.0, 1.0])
    nc = np.linalg.norm(c)
    if nc < 1e-8:
        if khat[2] > 0:
            return np.array([1.0, 0, 0]), np.array([0, 1.0, 0])
        return np.array([1.0, 0, 0]), np.array([0, -1.0, 0])
    e1 = c / nc
    return e1, np.cross(khat, e1)


@dataclass(frozen=True, eq=False)
class ModeSet:
    """Per spatial mode: wavevector, |k|, weight, two polarizations, g."""

    k: np.ndarray          # (n, 3)
    kabs: np.ndarray       # (n,)
    weights: np.ndarray    # (n,)
    eps: np.ndarray        # (n, 2, 3)
    g: np.ndarray          # (n,)
    shell: np.ndarray      # (n,) radial shell index, 0 = innermost
    provenance: str = ""

    def __len__(self):
        return len(self.kabs)

    @property
    def num_channels(self) -> int:
        return 2 * len(self)

    def channel(self, mu: int):
        """(k, eps, g) of channel mu."""
        m, lam = divmod(mu, 2)
        return self.k[m], self.eps[m, lam], self.g[m]

    @cached_property
    def channel_k(self) -> np.ndarray:
        return np.repeat(self.k, 2, axis=0)

    @cached_property
    def channel_kabs(self) -> np.ndarray:
        return np.repeat(self.kabs, 2)

    @cached_property
    def channel_eps(self) -> np.ndarray:
        return self.eps.reshape(-1, 3)

    @cached_property
    def channel_g(self) -> np.ndarray:
        return np.repeat(self.g, 2)

    @cached_property
    def channel_curl(self) -> np.ndarray:
        """k x eps per channel (real; B carries the extra factor i)."""
        return np.cross(self.channel_k, self.channel_eps)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["m", "kx", "ky", "kz", "kabs", "w", "g",
                        "eps1_x", "eps1_y", "eps1_z", "eps2_x", "eps2_y", "eps2_z"])
            for m in range(len(self)):
                vals = [*self.k[m], self.kabs[m], self.weights[m], self.g[m],
                        *self.eps[m, 0], *self.eps[m, 1]]
                w.writerow([m] + [f"{x:.17g}" for x in vals])


def radial_cells(d: FieldDiscretization, p: CouplingParams):
    """Shell edges and nodes (midpoints; geometric for logarithmic)."""
    R = d.shell_count(p.lambda_uv, p.sigma_ir)
    if d.radial_scheme == "linear":
        edges = np.linspace(p.sigma_ir, p.lambda_uv, R + 1)
        nodes = 0.5 * (edges[:-1] + edges[1:])
    else:
        edges = np.geomspace(p.sigma_ir, p.lambda_uv, R + 1)
        nodes = np.sqrt(edges[:-1] * edges[1:])
    edges[0], edges[-1] = p.sigma_ir, p.lambda_uv
    return edges, nodes


def _hash(*parts) -> str:
    return hashlib.sha256(repr(parts).encode()).hexdigest()[:16]


def build_mode_set(d: FieldDiscretization, p: CouplingParams) -> ModeSet:
    dirs, dw = direction_set(d)
    if d.antipodal_symmetric and not is_antipodal_closed(dirs):
        raise ValueError("direction set is not closed under w -> -w")
    edges, nodes = radial_cells(d, p)
    shell_vol = (edges[1:] ** 3 - edges[:-1] ** 3) / 3.0
    k, kabs, wts, eps, shell = [], [], [], [], []
    for j, r in enumerate(nodes):
        for w_hat, dOmega in zip(dirs, dw):
            k.append(r * w_hat)
            kabs.append(r)
            wts.append(shell_vol[j] * dOmega)
            eps.append(polarization_frame(w_hat))
            shell.append(j)
    kabs = np.array(kabs)
    wts = np.array(wts)
    g = RHO0 * (kabs <= p.lambda_uv) / np.sqrt(2 * kabs) * np.sqrt(wts)
    return ModeSet(np.array(k), kabs, wts, np.array(eps), g, np.array(shell),
                   provenance=_hash(d, p.lambda_uv, p.sigma_ir))


@dataclass(frozen=True, eq=False)
class FieldOperators:
    """A, B, H_f, P_f, N on the carrier (C^2 (x) Fock when spin, else Fock).

    ``fock_B`` keeps the Fock-space B components needed for sigma.B.
    """

    basis: FockBasis
    modes: ModeSet
    spin: bool
    A: tuple
    B: tuple
    H_f: SparseOperator
    P_f: tuple
    N: SparseOperator
    fock_B: tuple = field(repr=False)
    lowering: tuple = field(repr=False)  # (rows, cols, sqrt(n), channel)

    @property
    def dim(self) -> int:
        return self.N.dim

    def lift(self, op: SparseOperator) -> SparseOperator:
        if not self.spin:
            return op
        return tensor_with_spin(op, np.eye(2))

    @cached_property
    def _annihilators(self) -> list:
        rows, cols, vals, ch = self.lowering
        D = self.basis.dim
        out = []
        order = np.argsort(ch, kind="stable")
        bounds = np.searchsorted(ch[order], np.arange(self.basis.num_channels + 1))
        for mu in range(self.basis.num_channels):
            sel = order[bounds[mu]:bounds[mu + 1]]
            m = sp.csr_matrix((vals[sel].astype(complex), (rows[sel], cols[sel])), shape=(D, D))
            out.append(self.lift(SparseOperator(m)))
        return out

    def annihilator(self, mu: int) -> SparseOperator:
        """a_mu on the carrier."""
        if not 0 <= mu < self.basis.num_channels:
            raise IndexError(f"channel {mu} out of range")
        return self._annihilators[mu]

    @cached_property
    def a2_closure(self) -> SparseOperator:
        """sum_i P A_i Q A_i P, the part of A^2 that passes through states
        outside the truncated space (Q = 1 - P).

        With L_i the lowering half of A_i this equals
        sum_i (L_i^H L_i - L_i L_i^H + c_i), c_i = sum_mu g_mu^2 eps_{mu,i}^2,
        since P A_i^- A_i^+ P = L_i^H L_i + c_i by the exact commutator.  It
        vanishes wherever the truncated commutator is exact, so only the top
        layer (and capped occupations) pick up a contribution.
        """
        rows, cols, vals, ch = self.lowering
        D = self.basis.dim
        g = self.modes.channel_g
        eps = self.modes.channel_eps
        out = sp.csr_matrix((D, D), dtype=complex)
        for i in range(3):
            L = sp.csr_matrix((vals * (g * eps[:, i])[ch], (rows, cols)), shape=(D, D))
            out = out + L.T @ L - L @ L.T
        out = out + float(np.sum(g ** 2)) * sp.identity(D, format="csr")
        return self.lift(hermitian_part(out))

    def photon_layer_mask(self, max_total: int) -> np.ndarray:
        """Carrier-index mask of states with total photon number <= max_total."""
        m = self.basis.layer_mask(max_total)
        return np.tile(m, 2) if self.spin else m


def _lowering_coo(basis: FockBasis):
    occ = basis.occupations
    rows, cols, vals, ch = [], [], [], []
    for c in range(basis.dim):
        s = occ[c]
        for mu in np.flatnonzero(s):
            t = s.copy()
            t[mu] -= 1
            rows.append(basis.index[tuple(int(x) for x in t)])
            cols.append(c)
            vals.append(math.sqrt(s[mu]))
            ch.append(mu)
    return (np.array(rows, dtype=np.int64), np.array(cols, dtype=np.int64),
            np.array(vals, dtype=float), np.array(ch, dtype=np.int64))


def _field_component(lowering, coeff: np.ndarray, D: int) -> SparseOperator:
    # sum_mu coeff_mu a_mu + h.c.
    rows, cols, vals, ch = lowering
    L = sp.csr_matrix((vals * coeff[ch], (rows, cols)), shape=(D, D))
    return SparseOperator(L + L.conj().T, hermitian=True)


def assemble_field_operators(modes: ModeSet, basis: FockBasis, p: CouplingParams) -> FieldOperators:
    if basis.num_channels != modes.num_channels:
        raise ValueError(
            f"basis has {basis.num_channels} channels, mode set needs {modes.num_channels}")
    D = basis.dim
    low = _lowering_coo(basis)
    g = modes.channel_g
    eps = modes.channel_eps
    curl = modes.channel_curl
    A = [_field_component(low, (g * eps[:, i]).astype(complex), D) for i in range(3)]
    B = [_field_component(low, 1j * g * curl[:, i], D) for i in range(3)]
    occ = basis.occupations.astype(float)

    def diag(w):
        return SparseOperator(sp.diags((occ @ w).astype(complex), format="csr"), hermitian=True)

    H_f = diag(modes.channel_kabs)
    P_f = [diag(modes.channel_k[:, i]) for i in range(3)]
    N = diag(np.ones(basis.num_channels))
    lift = (lambda op: tensor_with_spin(op, np.eye(2))) if p.spin else (lambda op: op)
    return FieldOperators(
        basis=basis, modes=modes, spin=p.spin,
        A=tuple(lift(a) for a in A), B=tuple(lift(b) for b in B),
        H_f=lift(H_f), P_f=tuple(lift(q) for q in P_f), N=lift(N),
        fock_B=tuple(B), lowering=low,
    )


@dataclass(frozen=True, eq=False)
class FiberHamiltonian:
    xi: np.ndarray
    H: SparseOperator
    v: tuple
    params: CouplingParams
    provenance: str = ""

    @property
    def dim(self) -> int:
        return self.H.dim


def velocity_operators(F: FieldOperators, xi, e: float) -> tuple:
    """v_i(xi) = xi_i - (P_f)_i + e A_i."""
    xi = np.asarray(xi, dtype=float)
    I = identity(F.dim).matrix
    return tuple(
        SparseOperator(xi[i] * I - F.P_f[i].matrix + e * F.A[i].matrix, hermitian=True)
        for i in range(3))


def spin_zeeman(F: FieldOperators, e: float) -> sp.csr_matrix:
    """e sigma.B on the spin carrier (zero matrix for the spinless model)."""
    if not F.spin:
        return sp.csr_matrix((F.dim, F.dim), dtype=complex)
    out = sp.csr_matrix((F.dim, F.dim), dtype=complex)
    for s, b in zip(PAULI, F.fock_B):
        out = out + tensor_with_spin(b, s).matrix
    return e * out


def assemble_fiber_hamiltonian(F: FieldOperators, xi, p: CouplingParams,
                               spot_checks: int = 1000, seed: int = 0) -> FiberHamiltonian:
    xi = np.array(xi, dtype=float).reshape(3)
    v = velocity_operators(F, xi, p.e)
    m = F.H_f.matrix + spin_zeeman(F, p.e)
    for vi in v:
        m = m + vi.matrix @ vi.matrix
    if p.e != 0:
        # products of truncated v_i miss the A^2 path through the layer
        # above n_max; adding it back makes H the compression of the full
        # operator, so E can only decrease as n_max grows
        m = m + p.e ** 2 * F.a2_closure.matrix
    H = hermitian_part(m)
    _spot_check_hermitian(H, spot_checks, seed)
    return FiberHamiltonian(xi, H, v, p, provenance=F.modes.provenance)


def _spot_check_hermitian(H: SparseOperator, n: int, seed: int) -> None:
    if n <= 0 or H.nnz == 0:
        return
    coo = H.matrix.tocoo()
    rng = np.random.default_rng(seed)
    pick = rng.integers(0, coo.nnz, size=min(n, coo.nnz))
    for t in pick:
        r, c = coo.row[t], coo.col[t]
        if H.matrix[c, r] != np.conj(coo.data[t]):
            raise AssertionError(f"H not hermitian at ({r}, {c})")


class Model:
    """Field operators for one discretization, producing H(xi) on demand."""

    def __init__(self, discretization: FieldDiscretization, params: CouplingParams,
                 n_max: int, c_max: int | None = None):
        self.discretization = discretization
        self.params = params
        self.n_max = n_max
        self.modes = build_mode_set(discretization, params)
        self.basis = enumerate_basis(self.modes.num_channels, n_max, c_max)
        self.fields = assemble_field_operators(self.modes, self.basis, params)

    @property
    def dim(self) -> int:
        return self.fields.dim

    @property
    def spin(self) -> bool:
        return self.params.spin

    def __call__(self, xi) -> FiberHamiltonian:
        return self.hamiltonian(xi)

    def hamiltonian(self, xi) -> FiberHamiltonian:
        return assemble_fiber_hamiltonian(self.fields, xi, self.params)

    def velocity(self, xi) -> tuple:
        return velocity_operators(self.fields, xi, self.params.e)

    def reference_vector(self) -> np.ndarray:
        """Vacuum, tensored with spin-up on the spin carrier."""
        v = np.zeros(self.dim, dtype=complex)
        v[0] = 1.0
        return v

    def source_operator(self, xi, mu: int) -> sp.csr_matrix:
        """2 eps.v(xi) - i (k x eps).sigma for channel mu (no e g prefactor)."""
        k, eps, g = self.modes.channel(mu)
        v = self.velocity(xi)
        out = 2 * sum(eps[i] * v[i].matrix for i in range(3))
        if self.spin:
            curl = np.cross(k, eps)
            s = sum(curl[i] * PAULI[i] for i in range(3))
            out = out - 1j * sp.kron(sp.csr_matrix(s), sp.identity(self.basis.dim), format="csr")
        return sp.csr_matrix(out)

    def pull_through_operator(self, xi, mu: int) -> sp.csr_matrix:
        """a_mu H(xi) - (H(xi - k) + |k|) a_mu - e g (2 eps.v(xi) - i (k x eps).sigma).

        Vanishes on vectors with at most n_max - 2 photons.
        """
        xi = np.asarray(xi, dtype=float)
        k, eps, g = self.modes.channel(mu)
        a = self.fields.annihilator(mu).matrix
        Hx = self.hamiltonian(xi).H.matrix
        Hk = self.hamiltonian(xi - k).H.matrix
        I = sp.identity(self.dim, dtype=complex, format="csr")
        kabs = float(np.linalg.norm(k))
        return (a @ Hx - (Hk + kabs * I) @ a
                - self.params.e * g * self.source_operator(xi, mu)).tocsr()
