"""Matrix-free power iteration for the largest singular value."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

logger = logging.getLogger(__name__)

MAX_ITER = 10_000
# Operators this narrow are iterated on a block spanning the whole input space.
FULL_BLOCK = 64


class ConvergenceError(RuntimeError):
    def __init__(self, message, vector, residual):
        super().__init__(message)
        self.vector = vector
        self.residual = residual


@dataclass
class PowerResult:
    sigma: float
    vector: np.ndarray
    iterations: int
    residual: float
    restarts: int = 0

    @property
    def sigma_sq(self):
        return self.sigma * self.sigma


def _run(matvec, rmatvec, Q, tol, max_iter):
    """Subspace iteration on A^T A with a Rayleigh-Ritz step per sweep."""
    Q, _ = np.linalg.qr(Q)
    prev = None
    for it in range(1, max_iter + 1):
        W = np.column_stack([rmatvec(matvec(q)) for q in Q.T])
        H = Q.conj().T @ W
        theta, U = np.linalg.eigh(0.5 * (H + H.conj().T))
        lam, v = float(theta[-1]), Q @ U[:, -1]
        if lam <= 0.0 and np.linalg.norm(W) == 0.0:
            return 0.0, v / np.linalg.norm(v), it, 0.0, True
        if prev is not None and abs(lam - prev) <= tol * abs(lam):
            v = v / np.linalg.norm(v)
            residual = float(np.linalg.norm(rmatvec(matvec(v)) - lam * v))
            return lam, v, it, residual, True
        prev = lam
        Q, _ = np.linalg.qr(W)
    v = v / np.linalg.norm(v)
    residual = float(np.linalg.norm(rmatvec(matvec(v)) - prev * v))
    return prev, v, max_iter, residual, False


def power_iteration(matvec, rmatvec, n, tol=1e-12, max_iter=MAX_ITER, seed=0, dtype=float, block=8):
    """Largest singular value of A from products v -> A v and u -> A^T u.

    Block power iteration on A^T A from a seeded random start: each sweep
    multiplies ``block`` orthonormal vectors and takes the top Ritz pair, so
    a cluster of nearly equal leading singular values does not stall it.
    Stops when successive Ritz values agree to ``tol`` relative.  On
    stagnation it restarts once from a fresh seed with an eight times larger
    block, then gives up with :class:`ConvergenceError`.  When ``n`` is at
    most ``FULL_BLOCK`` the block spans the whole space and the Ritz step is
    exact.  The reported value is ||A v|| for the final unit vector ``v``.
    """
    if n == 0:
        return PowerResult(0.0, np.zeros(0), 0, 0.0)
    if n <= FULL_BLOCK:
        block = n
    for restart in range(2):
        b = max(1, min(block * 8 ** restart, n))
        rng = np.random.default_rng([seed, restart])
        Q = rng.standard_normal((n, b))
        if np.dtype(dtype).kind == "c":
            Q = Q + 1j * rng.standard_normal((n, b))
        lam, v, its, residual, ok = _run(matvec, rmatvec, Q, tol, max_iter)
        if ok:
            sigma = float(np.linalg.norm(matvec(v))) if lam > 0 else 0.0
            return PowerResult(sigma, v, its, residual, restart)
        logger.warning("power iteration stagnated after %d steps (residual %.3g); restarting", its, residual)
    raise ConvergenceError(f"power iteration did not converge in {max_iter} steps", v, residual)
