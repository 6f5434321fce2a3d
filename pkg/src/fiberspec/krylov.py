"""Krylov kernels: Lanczos with full reorthogonalization and preconditioned MINRES."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import eigh_tridiagonal


class ConvergenceError(RuntimeError):
    def __init__(self, message, best_residual=np.inf):
        super().__init__(f"{message} (best residual {best_residual:.3e})")
        self.best_residual = best_residual


@dataclass
class LanczosResult:
    value: float
    vector: np.ndarray
    residual: float
    iterations: int


def _orthogonalize(w, basis, locked):
    # classical Gram-Schmidt, applied twice
    for _ in range(2):
        for Q in (locked, basis):
            if Q is not None and Q.shape[1]:
                w -= Q @ (Q.conj().T @ w)
    return w


def lanczos_lowest(matvec, v0, tol=1e-10, max_iter=5000, locked=None,
                   max_krylov=300, check_every=5):
    """Lowest eigenpair of a hermitian operator orthogonal to ``locked``.

    Full reorthogonalization of every new Lanczos vector against the
    current Krylov basis and the locked vectors; explicit restart from the
    best Ritz vector when the basis reaches ``max_krylov``.  Convergence is
    declared on the true residual ||H x - theta x|| <= tol * max(1, |theta|).
    """
    n = v0.shape[0]
    if locked is not None and locked.shape[1] == 0:
        locked = None
    x = _orthogonalize(np.array(v0, dtype=complex), np.empty((n, 0), complex), locked)
    nx = np.linalg.norm(x)
    if nx == 0:
        raise ConvergenceError("start vector lies in the locked subspace")
    x /= nx
    best = np.inf
    total = 0
    max_krylov = min(max_krylov, n - (0 if locked is None else locked.shape[1]))
    max_krylov = max(max_krylov, 1)
    while total < max_iter:
        V = np.empty((n, max_krylov), dtype=complex)
        alpha = np.empty(max_krylov)
        beta = np.empty(max_krylov)
        V[:, 0] = x
        j = 0
        theta, s = None, None
        while True:
            w = matvec(V[:, j])
            total += 1
            alpha[j] = np.vdot(V[:, j], w).real
            w = _orthogonalize(w, V[:, :j + 1], locked)
            beta[j] = np.linalg.norm(w)
            m = j + 1
            last = (m == max_krylov) or total >= max_iter
            breakdown = beta[j] <= 1e-14 * max(1.0, abs(alpha[j]))
            if breakdown or last or m % check_every == 0:
                if m == 1:
                    theta, s = alpha[:1].copy(), np.ones((1, 1))
                else:
                    theta, s = eigh_tridiagonal(alpha[:m], beta[:m - 1],
                                                select="i", select_range=(0, 0))
                est = abs(beta[j] * s[-1, 0])
                if breakdown or last or est <= 0.1 * tol * max(1.0, abs(theta[0])):
                    break
            V[:, j + 1] = w / beta[j]
            j += 1
        x = V[:, :m] @ s[:, 0]
        x /= np.linalg.norm(x)
        hx = matvec(x)
        total += 1
        rq = np.vdot(x, hx).real
        res = np.linalg.norm(hx - rq * x)
        best = min(best, res)
        if res <= tol * max(1.0, abs(rq)):
            return LanczosResult(rq, x, res, total)
    raise ConvergenceError(f"Lanczos did not converge in {max_iter} iterations", best)


@dataclass
class MinresResult:
    x: np.ndarray
    residual: float   # relative, ||b - A x|| / ||b||
    iterations: int


def minres(matvec, b, precond_diag=None, tol=1e-10, max_iter=5000, x0=None):
    """Preconditioned MINRES for a hermitian operator.

    ``precond_diag`` holds the (positive) diagonal of the preconditioner M;
    the solve applies M^{-1}.  Returns once the true relative residual is
    at most ``tol``.
    """
    b = np.asarray(b, dtype=complex)
    n = b.shape[0]
    bnorm = np.linalg.norm(b)
    if bnorm == 0:
        return MinresResult(np.zeros(n, complex), 0.0, 0)
    minv = np.ones(n) if precond_diag is None else 1.0 / np.asarray(precond_diag, float)
    x = np.zeros(n, complex) if x0 is None else np.array(x0, dtype=complex)
    itn = 0
    best = np.inf
    while itn < max_iter:
        r1 = b - matvec(x) if np.any(x) else b.copy()
        y = minv * r1
        beta1 = np.sqrt(np.vdot(r1, y).real)
        if beta1 == 0:
            return MinresResult(x, 0.0, itn)
        oldb, beta, dbar, epsln = 0.0, beta1, 0.0, 0.0
        phibar, cs, sn = beta1, -1.0, 0.0
        w = np.zeros(n, complex)
        w2 = np.zeros(n, complex)
        r2 = r1.copy()
        for k in range(1, max_iter - itn + 1):
            s = 1.0 / beta
            v = s * y
            y = matvec(v)
            if k >= 2:
                y = y - (beta / oldb) * r1
            alfa = np.vdot(v, y).real
            y = y - (alfa / beta) * r2
            r1, r2 = r2, y
            y = minv * r2
            oldb, beta = beta, np.sqrt(max(np.vdot(r2, y).real, 0.0))
            oldeps = epsln
            delta = cs * dbar + sn * alfa
            gbar = sn * dbar - cs * alfa
            epsln = sn * beta
            dbar = -cs * beta
            gamma = max(np.hypot(gbar, beta), np.finfo(float).eps)
            cs, sn = gbar / gamma, beta / gamma
            phi, phibar = cs * phibar, sn * phibar
            w1, w2 = w2, w
            w = (v - oldeps * w1 - delta * w2) / gamma
            x = x + phi * w
            itn += 1
            if phibar <= 0.5 * tol * beta1 or beta == 0 or k % 50 == 0:
                res = np.linalg.norm(b - matvec(x)) / bnorm
                best = min(best, res)
                if res <= tol:
                    return MinresResult(x, res, itn)
                if phibar <= 0.5 * tol * beta1 or beta == 0:
                    break  # estimate drifted from the true residual: restart
    raise ConvergenceError(f"MINRES did not converge in {max_iter} iterations", best)
