"""Lipschitz bounds from per-layer Bessel triples.

The bound is the optimum of a small linear program over nonnegative
y_0..y_{M-1}, z_1..z_M with y_0 = 1:

    maximize   z_1 + ... + z_M
    subject to y_m + z_m <= b1_m y_{m-1}    (m <= M-1)
               y_m       <= b2_m y_{m-1}    (m <= M-1)
               z_m       <= b3_m y_{m-1}    (m <= M)

Every right-hand side is nonnegative once y_0 is substituted, so the origin
is a feasible basis and a single simplex phase suffices.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

FEAS_TOL = 1e-10
OPT_TOL = 1e-9
# Bases worse conditioned than this are re-solved in exact arithmetic.
COND_LIMIT = 1e8


class LPError(ValueError):
    pass


@dataclass
class SimplexResult:
    value: float
    x: np.ndarray
    dual: np.ndarray
    iterations: int
    basis: tuple
    arithmetic: str = "float"


def _pivot_loop(tab, basis, m, tol, max_iter):
    """Bland-rule primal simplex on a tableau whose last row holds -c; ``tol = 0`` for exact entries."""
    for it in range(max_iter):
        reduced = tab[m, :-1]
        candidates = [j for j in range(len(reduced)) if reduced[j] < -tol]
        if not candidates:
            return it
        col = candidates[0]
        rows = [i for i in range(m) if tab[i, col] > tol]
        if not rows:
            raise LPError("linear program is unbounded")
        ratios = {i: tab[i, -1] / tab[i, col] for i in rows}
        best = min(ratios.values())
        slack = tol * max(1.0, abs(best)) if tol else 0
        row = min((i for i in rows if ratios[i] <= best + slack), key=lambda i: basis[i])
        tab[row] = tab[row] / tab[row, col]
        for i in range(m + 1):
            if i != row and tab[i, col] != 0:
                tab[i] = tab[i] - tab[i, col] * tab[row]
        basis[row] = col
    raise LPError(f"simplex did not terminate in {max_iter} pivots")


def _tableau(c, A, b, exact):
    m, n = A.shape
    if exact:
        conv = np.vectorize(Fraction, otypes=[object])
        tab = np.full((m + 1, n + m + 1), Fraction(0), dtype=object)
        tab[:m, :n] = conv(A)
        tab[m, :n] = conv(-c)
        tab[:m, -1] = conv(np.maximum(b, 0.0))
        for i in range(m):
            tab[i, n + i] = Fraction(1)
    else:
        tab = np.zeros((m + 1, n + m + 1))
        tab[:m, :n] = A
        tab[:m, n:n + m] = np.eye(m)
        tab[:m, -1] = np.maximum(b, 0.0)
        tab[m, :n] = -c
    return tab


def _certified(c, A, b, basis):
    """Re-derive the basic solution and duals of ``basis`` from the data and check both are feasible."""
    m, n = A.shape
    full = np.hstack([A, np.eye(m)])
    B = full[:, basis]
    if np.linalg.cond(B) > COND_LIMIT:
        return None
    xb = np.linalg.solve(B, b)
    cost = np.concatenate([c, np.zeros(m)])
    dual = np.linalg.solve(B.T, cost[list(basis)])
    scale = max(1.0, float(np.abs(b).max(initial=0.0)))
    if xb.min(initial=0.0) < -FEAS_TOL * scale or (full.T @ dual - cost).min() < -OPT_TOL:
        return None
    x = np.zeros(n + m)
    x[list(basis)] = np.maximum(xb, 0.0)
    return x[:n], dual


def simplex(c, A, b, tol=OPT_TOL, max_iter=10_000):
    """Maximize c.x subject to A x <= b, x >= 0, for b >= 0.

    Dense tableau with Bland's rule for both entering and leaving variables.
    The float solve is accepted only if its final basis is well conditioned
    and the solution and duals recomputed from the original data are
    feasible; otherwise the same pivots run in exact rational arithmetic,
    where Bland's rule terminates at a true optimum.
    """
    c = np.asarray(c, dtype=float)
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    m, n = A.shape
    if np.any(b < -FEAS_TOL):
        raise LPError("origin is infeasible; this solver needs b >= 0")
    try:
        tab = _tableau(c, A, b, exact=False)
        basis = list(range(n, n + m))
        it = _pivot_loop(tab, basis, m, tol, max_iter)
        checked = _certified(c, A, b, basis)
    except LPError:
        checked = None
    if checked is not None:
        x, dual = checked
        return SimplexResult(float(c @ x), x, dual, it, tuple(basis))
    tab = _tableau(c, A, b, exact=True)
    basis = list(range(n, n + m))
    it = _pivot_loop(tab, basis, m, 0, max_iter)
    x = np.zeros(n + m)
    x[basis] = [float(v) for v in tab[:m, -1]]
    dual = np.array([float(v) for v in tab[m, n:n + m]])
    return SimplexResult(float(tab[m, -1]), x[:n], dual, it, tuple(basis), "exact")


@dataclass
class LPInstance:
    """Constraint data for M layers; columns are y_1..y_{M-1} then z_1..z_M."""

    triples: tuple
    A: np.ndarray = field(repr=False)
    b: np.ndarray = field(repr=False)
    c: np.ndarray = field(repr=False)

    @property
    def M(self):
        return len(self.triples)

    @classmethod
    def from_triples(cls, triples):
        triples = tuple(_as_triple(t) for t in triples)
        M = len(triples)
        if M == 0:
            raise LPError("need at least one layer")
        ny = M - 1
        nvar = ny + M
        rows, rhs = [], []

        def y(m):
            return m - 1

        def z(m):
            return ny + m - 1

        for m in range(1, M + 1):
            b1, b2, b3 = triples[m - 1]
            kinds = [("b3", b3)] if m == M else [("b1", b1), ("b2", b2), ("b3", b3)]
            for kind, bound in kinds:
                row = np.zeros(nvar)
                if kind in ("b1", "b2"):
                    row[y(m)] = 1.0
                if kind in ("b1", "b3"):
                    row[z(m)] = 1.0
                if m == 1:
                    rhs.append(bound)
                else:
                    row[y(m - 1)] -= bound
                    rhs.append(0.0)
                rows.append(row)
        c = np.zeros(nvar)
        c[ny:] = 1.0
        return cls(triples, np.array(rows), np.array(rhs), c)

    def split(self, x):
        """(y_0..y_{M-1}, z_1..z_M) from a solution vector."""
        ny = self.M - 1
        return np.concatenate([[1.0], x[:ny]]), x[ny:]


@dataclass
class LipschitzReport:
    lp_bound: float
    lipschitz_constant: float
    corollary_product: float
    corollary_sumprod: float
    optimal_y: np.ndarray
    optimal_z: np.ndarray
    diagnostics: dict

    def as_dict(self):
        return {
            "lp_bound": self.lp_bound,
            "lipschitz_constant": self.lipschitz_constant,
            "corollary_product": self.corollary_product,
            "corollary_sumprod": self.corollary_sumprod,
            "optimal_y": self.optimal_y.tolist() if self.optimal_y is not None else None,
            "optimal_z": self.optimal_z.tolist() if self.optimal_z is not None else None,
            "diagnostics": self.diagnostics,
        }


def _as_triple(t):
    vals = tuple(float(v) for v in (t if not hasattr(t, "b1") else (t.b1, t.b2, t.b3)))
    if len(vals) != 3 or not all(math.isfinite(v) and v >= 0 for v in vals):
        raise LPError(f"Bessel triple must be three finite nonnegative numbers, got {vals}")
    return vals


def corollary_product(triples):
    """prod_m max(1, b1_m)."""
    return float(np.prod([max(1.0, t[0]) for t in map(_as_triple, triples)]))


def corollary_sumprod(triples):
    """b3_1 + sum_{m>=2} b3_m prod_{m'<m} b2_{m'}."""
    total, running = 0.0, 1.0
    for b1, b2, b3 in map(_as_triple, triples):
        total += b3 * running
        running *= b2
    return total


def solve_lipschitz_lp(triples):
    """Optimal LP bound with its certificate and both corollary bounds."""
    inst = LPInstance.from_triples(triples)
    res = simplex(inst.c, inst.A, inst.b)
    x = np.maximum(res.x, 0.0)
    y, z = inst.split(x)
    value = float(z.sum())
    residual = float(np.max(inst.A @ x - inst.b, initial=0.0))
    dual = np.maximum(res.dual, 0.0)
    dual_value = float(inst.b @ dual)
    dual_slack = float(np.min(inst.A.T @ dual - inst.c, initial=0.0))
    diagnostics = {
        "solver": "dense simplex, Bland rule",
        "pivots": res.iterations,
        "arithmetic": res.arithmetic,
        "primal_residual": residual,
        "dual_infeasibility": -dual_slack,
        "duality_gap": dual_value - value,
        "feasibility_tol": FEAS_TOL,
        "optimality_tol": OPT_TOL,
    }
    return LipschitzReport(
        lp_bound=value,
        lipschitz_constant=math.sqrt(max(value, 0.0)),
        corollary_product=corollary_product(inst.triples),
        corollary_sumprod=corollary_sumprod(inst.triples),
        optimal_y=y,
        optimal_z=z,
        diagnostics=diagnostics,
    )


def corollary_report(triples):
    """Report with only the closed-form corollaries (the LP is skipped)."""
    triples = [_as_triple(t) for t in triples]
    prod, sp = corollary_product(triples), corollary_sumprod(triples)
    best = min(prod, sp)
    return LipschitzReport(best, math.sqrt(best), prod, sp, None, None, {"solver": "corollaries only"})


def certify(net, samples=None):
    """Bessel triples of every layer of ``net`` and the resulting report."""
    from .spectral import DEFAULT_SAMPLES, network_bessel

    triples = network_bessel(net, samples or DEFAULT_SAMPLES)
    return triples, solve_lipschitz_lp(triples)
