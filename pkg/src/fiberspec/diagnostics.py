"""Numerical checks of the ground-state identities and the infrared sweep.

Every check returns an :class:`IdentityReport` (or a table for the
per-mode and sweep outputs) with a nonnegative residual and a pass flag.
"""

from __future__ import annotations

import itertools
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from scipy import stats

from .field import FieldDiscretization, Model
from .krylov import ConvergenceError
from .spectral import (
    IndefiniteShiftError,
    expectation,
    shifted_lowest,
    solve_ground,
    solve_shifted,
)

log = logging.getLogger(__name__)

DEFAULT_EPS = 0.5


class FitRefused(ValueError):
    pass


@dataclass
class IdentityReport:
    name: str
    value: float
    tolerance: float
    passed: bool
    provenance: dict = field(default_factory=dict)
    details: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.value >= 0 and not math.isnan(self.value):
            raise ValueError(f"residual must be >= 0, got {self.value}")

    def to_json(self, config_hash: str | None = None) -> dict:
        return {
            "name": self.name,
            "value": float(self.value),
            "tolerance": float(self.tolerance),
            "pass": bool(self.passed),
            "config_hash": config_hash,
            "provenance": self.provenance,
        }


def provenance(model: Model, xi) -> dict:
    return {"xi": [float(x) for x in np.asarray(xi, float)],
            "e": float(model.params.e),
            "grid": model.modes.provenance}


# -- cones -----------------------------------------------------------------

@dataclass(frozen=True)
class ConeSpec:
    grad: np.ndarray
    eps: float = DEFAULT_EPS

    def __post_init__(self):
        if not 0 < self.eps < 1:
            raise ValueError(f"eps must lie in (0, 1), got {self.eps}")


def cone_membership(omega, spec: ConeSpec, atol: float = 0.0) -> tuple[bool, bool]:
    """(omega in S_eps, omega in K) for a unit direction omega.

    ``atol`` widens both boundaries, for gradients carrying
    finite-difference noise.
    """
    omega = np.asarray(omega, dtype=float)
    if abs(np.linalg.norm(omega) - 1) > 1e-10:
        raise ValueError("omega must be a unit vector")
    g = np.asarray(spec.grad, dtype=float)
    c = float(omega @ g)
    in_s = c <= 1 - spec.eps + atol
    in_k = -0.5 * np.linalg.norm(g) - atol <= c <= atol
    assert in_s or not in_k, "K must be contained in S_eps"
    return in_s, in_k


# -- Feynman-Hellmann --------------------------------------------------------

def feynman_hellmann_check(gs, fiber, grad_fd, tolerance=1e-4) -> IdentityReport:
    """max_i || 2 P0 v_i P0 - (grad E)_i P0 || / max(1, |grad E|) on the cluster."""
    if gs.cluster_size == 0:
        raise ValueError("empty ground cluster")
    grad = np.asarray(grad_fd, dtype=float)
    d = gs.cluster_size
    devs = []
    for i in range(3):
        M = 2 * gs.projector_compress(fiber.v[i])
        devs.append(np.linalg.norm(M - grad[i] * np.eye(d), 2))
    r = max(devs) / max(1.0, float(np.linalg.norm(grad)))
    return IdentityReport("feynman_hellmann", r, tolerance, r <= tolerance,
                          {"xi": gs.xi.tolist(), "e": fiber.params.e, "grid": fiber.provenance},
                          {"grad_fd": grad.tolist(), "cluster_size": d,
                           "per_axis": [float(x) for x in devs]})


# -- pull-through -------------------------------------------------------------

def photon_topweight(model: Model, psi) -> float:
    """Norm of the components of psi with photon number >= n_max - 1."""
    mask = ~model.fields.photon_layer_mask(model.n_max - 2)
    return float(np.linalg.norm(psi[mask]))


def pull_through_residual(gs, model: Model, mu: int, solver_tol=1e-10,
                          check_shift=True) -> IdentityReport:
    """Residual of the ground-state pull-through relation in channel mu.

        r = ||(H(xi-k)+|k|-E) a psi + e g (2 eps.v - i (k x eps).sigma) psi||
            / (e g ||psi|| + ||a psi||)

    The relation is exact below the top two photon layers, so the report
    passes when r <= 10 * topweight + 10 * solver_tol.
    """
    xi = gs.xi
    k, eps, g = model.modes.channel(mu)
    kabs = float(np.linalg.norm(k))
    E = gs.energy
    if check_shift:
        low = shifted_lowest(model, xi, k, E, tol=solver_tol)
        if low <= 0:
            raise IndefiniteShiftError(low, k)
    psi = gs.psi
    a_psi = model.fields.annihilator(mu) @ psi
    Hk = model.hamiltonian(xi - k).H.matrix
    src = model.source_operator(xi, mu) @ psi
    eg = model.params.e * g
    num = np.linalg.norm(Hk @ a_psi + (kabs - E) * a_psi + eg * src)
    den = abs(eg) * np.linalg.norm(psi) + np.linalg.norm(a_psi)
    r = 0.0 if num == 0 else float(num / den)
    top = photon_topweight(model, psi)
    tol = 10 * top + 10 * solver_tol
    return IdentityReport(f"pull_through[{mu}]", r, tol, r <= tol, provenance(model, xi),
                          {"topweight": top, "channel": mu, "a_psi_norm": float(np.linalg.norm(a_psi))})


def pull_through_pairing(gs, model: Model, mu: int, eta, tol=1e-10) -> tuple[complex, complex]:
    """<eta, a_mu psi> directly and via e g <x, (-2 eps.v + i (k x eps).sigma) psi>,
    where x solves the shifted system with right-hand side eta."""
    k, eps, g = model.modes.channel(mu)
    direct = np.vdot(eta, model.fields.annihilator(mu) @ gs.psi)
    x = solve_shifted(model, gs.xi, k, gs.energy, eta, tol=tol).x
    src = model.source_operator(gs.xi, mu) @ gs.psi
    via = model.params.e * g * np.vdot(x, -src)
    return complex(direct), complex(via)


def pull_through_operator_residual(model: Model, xi, mu: int, n_vectors=None, seed=0) -> float:
    """Largest column norm of the pull-through operator on a random basis of
    the <= n_max - 2 photon layer."""
    P = model.pull_through_operator(xi, mu)
    idx = np.flatnonzero(model.fields.photon_layer_mask(model.n_max - 2))
    if idx.size == 0:
        raise ValueError("n_max must be >= 2 for the exact subspace to be nonempty")
    rng = np.random.default_rng(seed)
    n = idx.size if n_vectors is None else min(n_vectors, idx.size)
    X = rng.standard_normal((idx.size, n)) + 1j * rng.standard_normal((idx.size, n))
    X, _ = np.linalg.qr(X)
    res = P[:, idx] @ X
    return float(np.max(np.linalg.norm(res, axis=0)))


# -- resolvent limit --------------------------------------------------------

@dataclass
class ResolventRow:
    kabs: float
    q: complex
    target: complex
    deviation: float
    gap_ratio: float


def default_probes(dim: int, seed: int = 7):
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(2):
        v = 0.1 * (rng.standard_normal(dim) + 1j * rng.standard_normal(dim)) / math.sqrt(dim)
        v[0] += 1.0
        out.append(v / np.linalg.norm(v))
    return out


def resolvent_limit_check(model: Model, xi, omega, kabs_list, grad, gs=None,
                          eps=DEFAULT_EPS, probes=None, tol=1e-10) -> IdentityReport:
    """Q(k) = |k| (H(xi-k)+|k|-E)^{-1} along k = |k| omega, compared with
    (1 - omega.grad)^{-1} P0 on a probe pair, plus the gap ratio
    (E(xi-k) + |k| - E(xi)) / |k|.

    Passes when the deviations decrease along the (decreasing) |k| list and
    every gap ratio is at least eps - 0.1.
    """
    xi = np.asarray(xi, dtype=float)
    omega = np.asarray(omega, dtype=float)
    grad = np.asarray(grad, dtype=float)
    in_s, _ = cone_membership(omega, ConeSpec(grad, eps))
    if not in_s:
        raise ValueError("direction lies outside S_eps")
    if gs is None:
        _, gs = solve_ground(model, xi, tol=tol)
    eta1, eta2 = default_probes(model.dim) if probes is None else probes
    C = gs.cluster
    p0 = np.vdot(eta1, C @ (C.conj().T @ eta2))
    target = p0 / (1 - omega @ grad)
    rows = []
    violation = None
    for kabs in kabs_list:
        k = kabs * omega
        low = shifted_lowest(model, xi, k, gs.energy, tol=tol)
        ratio = low / kabs
        if low <= 0:
            violation = kabs
            rows.append(ResolventRow(kabs, np.nan, target, np.nan, ratio))
            continue
        x = solve_shifted(model, xi, k, gs.energy, eta2, tol=tol, lowest_shifted=low).x
        q = kabs * np.vdot(eta1, x)
        rows.append(ResolventRow(kabs, q, target, float(abs(q - target)), ratio))
    devs = [r.deviation for r in rows]
    monotone = violation is None and all(b < a for a, b in zip(devs, devs[1:]))
    gaps_ok = all(r.gap_ratio >= eps - 0.1 for r in rows)
    return IdentityReport(
        "resolvent_limit", float(devs[-1]) if violation is None else float("nan"),
        float(devs[0]) if violation is None else 0.0, monotone and gaps_ok,
        provenance(model, xi),
        {"rows": [{"kabs": r.kabs, "q": [r.q.real, r.q.imag], "deviation": r.deviation,
                   "gap_ratio": r.gap_ratio} for r in rows],
         "target": [target.real, target.imag], "cone_violation": violation})


# -- per-mode amplitudes -----------------------------------------------------

@dataclass
class ModeAmplitude:
    mu: int
    shell: int
    kabs: float
    khat: np.ndarray
    eps_dot_grad: float
    in_k: bool
    measured: float
    predicted: float

    predicted_zero: bool

    @property
    def ratio(self) -> float:
        if self.predicted_zero or not self.predicted > 0:
            return float("nan")
        return self.measured / self.predicted


def mode_amplitude_report(gs, model: Model, grad, atol=1e-8) -> list[ModeAmplitude]:
    """|a_mu psi| against the leading soft-photon amplitude
    e g |eps.grad| / (|k| (1 - khat.grad)).

    Projections onto the gradient below ``atol * max(1, |grad|)`` count as
    zero (the gradient usually comes from finite differences).
    """
    grad = np.asarray(grad, dtype=float)
    gnorm = float(np.linalg.norm(grad))
    cut = atol * max(1.0, gnorm)
    modes = model.modes
    e = model.params.e
    out = []
    for mu in range(modes.num_channels):
        k, eps, g = modes.channel(mu)
        kabs = float(np.linalg.norm(k))
        khat = k / kabs
        c = float(khat @ grad)
        ed = float(eps @ grad)
        denom = 1 - c
        pred = abs(e * g * ed) / (kabs * denom) if denom > 0 else float("nan")
        zero = abs(ed) <= cut
        if zero:
            pred = 0.0
        in_k = gnorm > cut and -0.5 * gnorm - cut <= c <= cut
        meas = float(np.linalg.norm(model.fields.annihilator(mu) @ gs.psi))
        out.append(ModeAmplitude(mu, int(modes.shell[mu // 2]), kabs, khat, ed,
                                 bool(in_k), meas, pred, zero))
    return out


# -- photon number, concavity ----------------------------------------------

def photon_number_two_ways(model: Model, psi) -> tuple[float, float]:
    diag = expectation(model.fields.N, psi)
    nrm = np.vdot(psi, psi).real
    ladder = sum(np.linalg.norm(model.fields.annihilator(mu) @ psi) ** 2
                 for mu in range(model.basis.num_channels)) / nrm
    return diag, float(ladder)


def _collinear_triples(xis, atol=1e-12):
    n = len(xis)
    for i, j in itertools.permutations(range(n), 2):
        d = xis[j] - xis[i]
        L = np.linalg.norm(d)
        if L == 0:
            continue
        for m in range(n):
            if m in (i, j):
                continue
            u = xis[m] - xis[i]
            s = float(u @ d) / L ** 2
            if 0 < s < 1 and np.linalg.norm(u - s * d) <= atol * max(1.0, L):
                if i < j:
                    yield i, m, j, s


def concavity_probe(table, tol=1e-10) -> IdentityReport:
    """Largest violation of t(mid) >= interpolation over collinear triples,
    t(xi) = E(xi) - |xi|^2.  Passes when <= 2 tol."""
    rows = [r for r in table.rows if np.isfinite(r.energy)]
    xis = np.array([r.xi for r in rows])
    t = np.array([r.t for r in rows])
    worst = None
    count = 0
    for i, m, j, s in _collinear_triples(xis):
        count += 1
        v = (1 - s) * t[i] + s * t[j] - t[m]
        worst = v if worst is None else max(worst, v)
    if worst is None:
        raise ValueError("no collinear triples in the table")
    val = max(0.0, float(worst))
    return IdentityReport("concavity", val, 2 * tol, val <= 2 * tol,
                          {"xi": xis.tolist(), "grid": table.meta.get("provenance")},
                          {"triples": count})


# -- infrared sweep -----------------------------------------------------------

@dataclass
class SweepRow:
    sigma: float
    energy: float
    n_expect: float
    kmin: float
    n_max: int
    dim: int
    error: str | None = None


@dataclass
class IRSweepReport:
    xi: np.ndarray
    rows: list
    slope: float | None = None
    intercept: float | None = None
    r2: float | None = None
    refused: str | None = None

    def fit(self):
        valid = [r for r in self.rows if r.error is None]
        if len(valid) < 4:
            raise FitRefused(f"need ≥ 4 points, have {len(valid)}")
        x = np.log(1 / np.array([r.sigma for r in valid]))
        y = np.array([r.n_expect for r in valid])
        lr = stats.linregress(x, y)
        self.slope, self.intercept, self.r2 = float(lr.slope), float(lr.intercept), float(lr.rvalue ** 2)
        return self.slope, self.intercept, self.r2


def ir_sweep(xi, sigma_list, discretization: FieldDiscretization, params, n_max=2,
             tol=1e-10, workers=1, **kw) -> IRSweepReport:
    """Ground-state photon number as the infrared cutoff is lowered, with an
    OLS fit of <N> against log(1/sigma)."""
    sig = [float(s) for s in sigma_list]
    if any(s <= 0 for s in sig) or any(b >= a for a, b in zip(sig, sig[1:])):
        raise ValueError("sigma list must be positive and strictly decreasing")
    if discretization.radial_scheme != "logarithmic":
        raise ValueError("infrared sweeps need the logarithmic radial scheme")
    xi = np.asarray(xi, dtype=float)

    def point(s):
        model = Model(discretization, replace(params, sigma_ir=s), n_max)
        try:
            _, gs = solve_ground(model, xi, tol=tol, **kw)
        except ConvergenceError as exc:
            log.warning("sweep point sigma=%g failed: %s", s, exc)
            return SweepRow(s, np.nan, np.nan, float(model.modes.kabs.min()), n_max,
                            model.dim, str(exc))
        return SweepRow(s, gs.energy, expectation(model.fields.N, gs.psi),
                        float(model.modes.kabs.min()), n_max, model.dim)

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            rows = list(pool.map(point, sig))
    else:
        rows = [point(s) for s in sig]
    rep = IRSweepReport(xi, rows)
    try:
        rep.fit()
    except FitRefused as exc:
        rep.refused = str(exc)
    return rep


def sweep_row_dict(r: SweepRow) -> dict:
    return asdict(r)
