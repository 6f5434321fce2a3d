"""Ground states of H(xi), the sampled dispersion E(xi), gradients, and
shifted resolvent solves."""

from __future__ import annotations

import csv
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .fock import SparseOperator
from .krylov import ConvergenceError, lanczos_lowest, minres

log = logging.getLogger(__name__)

DENSE_THRESHOLD = 2000
DEFAULT_SEED = 42
MAX_CLUSTER = 16


class IndefiniteShiftError(ValueError):
    """The shifted operator H(xi - k) + |k| - E is not positive definite."""

    def __init__(self, lowest: float, k):
        super().__init__(
            f"shifted operator has lowest eigenvalue {lowest:.6g} <= 0 at k = {list(np.round(k, 12))}")
        self.lowest = lowest
        self.k = np.asarray(k)


def gap_tolerance(E: float) -> float:
    return 1e-8 * max(1.0, abs(E))


@dataclass(eq=False)
class GroundStateRecord:
    xi: np.ndarray
    energy: float
    psi: np.ndarray
    cluster: np.ndarray          # (dim, d) orthonormal columns
    gap: float                   # distance to the first level above the cluster
    energies: np.ndarray         # all computed levels, ascending
    iterations: int
    residual: float
    method: str

    @property
    def cluster_size(self) -> int:
        return self.cluster.shape[1]

    def projector_compress(self, op) -> np.ndarray:
        """d x d compression P0 op P0 in the cluster basis."""
        m = op.matrix if isinstance(op, SparseOperator) else op
        C = self.cluster
        return C.conj().T @ (m @ C)


def _fix_phase(v: np.ndarray) -> np.ndarray:
    i = int(np.argmax(np.abs(v)))
    return v * (abs(v[i]) / v[i])


def start_vector(dim: int, seed: int = DEFAULT_SEED, noise: float = 1e-3) -> np.ndarray:
    """Vacuum (spin up on the spin carrier) plus seeded complex noise."""
    rng = np.random.default_rng(seed)
    v = noise * (rng.standard_normal(dim) + 1j * rng.standard_normal(dim))
    v[0] += 1.0
    return v / np.linalg.norm(v)


def lowest_eigenpair(H, tol=1e-10, max_iter=5000, n_wanted=1, *, xi=None,
                     seed=DEFAULT_SEED, dense_threshold=DENSE_THRESHOLD,
                     method=None) -> GroundStateRecord:
    """Lowest eigenpairs of a hermitian sparse operator.

    Dense diagonalization when ``dim <= dense_threshold`` (or
    ``method="dense"``), otherwise Lanczos with full reorthogonalization,
    run repeatedly with deflation until the near-degenerate ground cluster
    and the first level above it are resolved.

    Parameters
    ----------
    H : SparseOperator
        Must carry ``hermitian=True``.
    tol : float
        Residual tolerance relative to max(1, |E|).
    n_wanted : int
        Minimum number of levels to resolve.
    method : {"dense", "lanczos"}, optional
        Forces a path regardless of the dimension.
    """
    if isinstance(H, SparseOperator):
        if not H.hermitian:
            raise ValueError("lowest_eigenpair requires a hermitian operator")
        m = H.matrix
    else:
        raise TypeError("expected a SparseOperator")
    dim = m.shape[0]
    if dim < 1:
        raise ValueError("empty operator")
    xi = np.zeros(3) if xi is None else np.asarray(xi, dtype=float)
    if method is None:
        method = "dense" if dim <= dense_threshold else "lanczos"
    if method == "dense":
        return _dense(m, n_wanted, xi)
    if method != "lanczos":
        raise ValueError(f"unknown method {method!r}")
    return _lanczos(m, tol, max_iter, n_wanted, xi, seed)


def _dense(m, n_wanted, xi) -> GroundStateRecord:
    w, U = np.linalg.eigh(m.toarray())
    E = float(w[0])
    d = int(np.count_nonzero(w <= E + gap_tolerance(E)))
    gap = float(w[d] - E) if d < len(w) else np.inf
    C = np.column_stack([_fix_phase(U[:, j]) for j in range(d)])
    psi = C[:, 0]
    res = float(np.linalg.norm(m @ psi - E * psi))
    return GroundStateRecord(xi, E, psi, C, gap, w[:max(n_wanted, d + 1)].copy(),
                             0, res, "dense")


def _lanczos(m, tol, max_iter, n_wanted, xi, seed) -> GroundStateRecord:
    dim = m.shape[0]
    matvec = m.dot
    v0 = start_vector(dim, seed)
    found = []
    iters = 0
    while True:
        locked = np.column_stack([f.vector for f in found]) if found else None
        r = lanczos_lowest(matvec, v0, tol=tol, max_iter=max_iter - iters, locked=locked)
        iters += r.iterations
        found.append(r)
        values = sorted(f.value for f in found)
        E = values[0]
        above = [x for x in values if x > E + gap_tolerance(E)]
        if len(found) >= n_wanted and above:
            break
        if len(found) >= min(dim, MAX_CLUSTER):
            break
    # Rayleigh-Ritz over everything found: orthonormal, ordered, consistent
    Q, _ = np.linalg.qr(np.column_stack([f.vector for f in found]))
    w, S = np.linalg.eigh(Q.conj().T @ (m @ Q))
    X = Q @ S
    E = float(w[0])
    d = int(np.count_nonzero(w <= E + gap_tolerance(E)))
    gap = float(w[d] - E) if d < len(w) else np.inf
    C = np.column_stack([_fix_phase(X[:, j]) for j in range(d)])
    psi = C[:, 0]
    res = float(np.linalg.norm(m @ psi - E * psi))
    if res > tol * max(1.0, abs(E)):
        raise ConvergenceError("ground cluster failed the residual check", res)
    return GroundStateRecord(xi, E, psi, C, gap, w.copy(), iters, res, "lanczos")


def expectation(op, psi) -> float:
    m = op.matrix if isinstance(op, SparseOperator) else op
    return float(np.vdot(psi, m @ psi).real / np.vdot(psi, psi).real)


def solve_ground(model, xi, tol=1e-10, **kw) -> tuple:
    """(FiberHamiltonian, GroundStateRecord) at total momentum xi."""
    fiber = model.hamiltonian(xi)
    return fiber, lowest_eigenpair(fiber.H, tol=tol, xi=fiber.xi, **kw)


@dataclass
class DispersionRow:
    xi: np.ndarray
    energy: float
    n_expect: float
    v_expect: np.ndarray
    gap: float
    iterations: int
    residual: float
    error: str | None = None

    @property
    def t(self) -> float:
        return self.energy - float(self.xi @ self.xi)


CSV_COLUMNS = ["xi_x", "xi_y", "xi_z", "E", "t", "N_expect", "gap", "iters", "residual"]


def fmt(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return f"{float(x):.17g}"


@dataclass
class DispersionTable:
    rows: list
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        keys = [tuple(np.round(r.xi, 15)) for r in self.rows]
        if len(set(keys)) != len(keys):
            raise ValueError("dispersion rows must be keyed uniquely by xi")

    def xis(self) -> np.ndarray:
        return np.array([r.xi for r in self.rows])

    def energies(self) -> np.ndarray:
        return np.array([r.energy for r in self.rows])

    def write_csv(self, path, config_hash: str | None = None) -> None:
        cols = CSV_COLUMNS + (["config_hash"] if config_hash else [])
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\r\n")
            w.writerow(cols)
            for r in self.rows:
                vals = [*r.xi, r.energy, r.t, r.n_expect, r.gap, r.iterations, r.residual]
                line = [fmt(v) for v in vals]
                if config_hash:
                    line.append(config_hash)
                w.writerow(line)


def dispersion_row(model, xi, tol=1e-10, **kw) -> DispersionRow:
    xi = np.asarray(xi, dtype=float)
    try:
        fiber, gs = solve_ground(model, xi, tol=tol, **kw)
    except ConvergenceError as exc:
        log.warning("solver failure at xi=%s: %s", xi, exc)
        return DispersionRow(xi, np.nan, np.nan, np.full(3, np.nan), np.nan, 0,
                             exc.best_residual, error=str(exc))
    return row_from_record(model, fiber, gs)


def row_from_record(model, fiber, gs) -> DispersionRow:
    n = expectation(model.fields.N, gs.psi)
    v = np.array([expectation(vi, gs.psi) for vi in fiber.v])
    return DispersionRow(gs.xi, gs.energy, n, v, gs.gap, gs.iterations, gs.residual)


def dispersion(model, xi_list, tol=1e-10, workers: int = 1, **kw) -> DispersionTable:
    """Sample E(xi) on ``xi_list``; rows are independent solves."""
    xi_list = [np.asarray(x, dtype=float) for x in xi_list]
    if not xi_list:
        raise ValueError("xi_list is empty")
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            rows = list(pool.map(lambda x: dispersion_row(model, x, tol, **kw), xi_list))
    else:
        rows = [dispersion_row(model, x, tol, **kw) for x in xi_list]
    return DispersionTable(rows, {"provenance": model.modes.provenance, "dim": model.dim})


@dataclass
class FDGradient:
    grad: np.ndarray
    h: float
    error: float          # |D(h) - D(h/2)| / 3 when Richardson is requested, else nan
    extrapolated: np.ndarray | None = None


def default_fd_step(xi) -> float:
    return 1e-3 * max(1.0, float(np.linalg.norm(xi)))


def _central(model, xi, h, tol, kw):
    g = np.empty(3)
    for i in range(3):
        e = np.zeros(3)
        e[i] = h
        Ep = lowest_eigenpair(model.hamiltonian(xi + e).H, tol=tol, **kw).energy
        Em = lowest_eigenpair(model.hamiltonian(xi - e).H, tol=tol, **kw).energy
        g[i] = (Ep - Em) / (2 * h)
    return g


def fd_gradient(model, xi, h=None, tol=1e-10, richardson=False, **kw) -> FDGradient:
    """Central-difference gradient of E at xi, O(h^2) accurate."""
    xi = np.asarray(xi, dtype=float)
    h = default_fd_step(xi) if h is None else float(h)
    if h <= 0:
        raise ValueError("FD step must be positive")
    g = _central(model, xi, h, tol, kw)
    if not richardson:
        return FDGradient(g, h, np.nan)
    g2 = _central(model, xi, h / 2, tol, kw)
    extrap = (4 * g2 - g) / 3
    return FDGradient(g, h, float(np.max(np.abs(g - g2))) / 3, extrap)


@dataclass
class ShiftedSolve:
    x: np.ndarray
    residual: float
    iterations: int
    lowest_shifted: float   # lowest eigenvalue of H(xi - k) + |k| - E


def shifted_lowest(model, xi, k, E, tol=1e-10, **kw) -> float:
    """Lowest eigenvalue of H(xi - k) + |k| - E."""
    xi = np.asarray(xi, dtype=float)
    k = np.asarray(k, dtype=float)
    Ek = lowest_eigenpair(model.hamiltonian(xi - k).H, tol=tol, **kw).energy
    return Ek + float(np.linalg.norm(k)) - E


def solve_shifted(model, xi, k, E, eta, tol=1e-10, lowest_shifted=None,
                  max_iter=20000, **kw) -> ShiftedSolve:
    """Solve (H(xi - k) + |k| - E) x = eta with diagonally preconditioned MINRES.

    Raises IndefiniteShiftError when the shifted operator is not positive
    definite.  ``lowest_shifted`` may be supplied to skip the eigen-solve.
    """
    xi = np.asarray(xi, dtype=float)
    k = np.asarray(k, dtype=float)
    if lowest_shifted is None:
        lowest_shifted = shifted_lowest(model, xi, k, E, tol=tol, **kw)
    if lowest_shifted <= 0:
        raise IndefiniteShiftError(lowest_shifted, k)
    Hk = model.hamiltonian(xi - k).H.matrix
    A = (Hk + (float(np.linalg.norm(k)) - E) * sp.identity(Hk.shape[0], format="csr")).tocsr()
    diag = np.maximum(A.diagonal().real, lowest_shifted)
    r = minres(A.dot, eta, precond_diag=diag, tol=tol, max_iter=max_iter)
    return ShiftedSolve(r.x, r.residual, r.iterations, lowest_shifted)
