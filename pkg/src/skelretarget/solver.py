"""Levenberg-Marquardt least squares on top of forward-mode Jacobians."""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
import scipy.linalg
import scipy.sparse
import scipy.sparse.linalg

from .autodiff import DualArray

log = logging.getLogger(__name__)

DUAL_WIDTH = 16
DAMPING_MIN = 1e-12
DAMPING_MAX = 1e8
MAX_REJECTIONS = 10


class RejectStep(Exception):
    """Raised by a residual function for a trial point outside its domain.

    The solver treats it as a rejected step and increases damping.
    """


class ConvergenceWarning(UserWarning):
    """A solve stopped on its iteration budget; the best iterate is returned."""


class NonFiniteError(FloatingPointError):
    def __init__(self, index: int, context: str = "residual"):
        self.index = index
        super().__init__(f"non-finite {context} at residual index {index}")


@dataclass
class ResidualProblem:
    """A residual function ``x -> r(x)`` and its structure.

    ``evaluate`` must accept both float arrays and :class:`DualArray`
    inputs.  When ``pattern`` (a sparse boolean matrix, residuals x
    variables, a superset of the true Jacobian sparsity) and ``colors``
    (a structurally orthogonal column grouping) are given, Jacobians are
    built by compressed seeding and returned as CSR matrices.
    """

    dimension: int
    residual_count: int
    evaluate: Callable
    pattern: Optional[scipy.sparse.spmatrix] = None
    colors: Optional[np.ndarray] = None

    @property
    def sparse(self) -> bool:
        return self.pattern is not None

    def __post_init__(self):
        if self.pattern is not None:
            if self.colors is None:
                raise ValueError("a sparsity pattern needs a column coloring")
            self.pattern = scipy.sparse.coo_matrix(self.pattern)
            if self.pattern.shape != (self.residual_count, self.dimension):
                raise ValueError("pattern shape does not match problem size")
            self.colors = np.asarray(self.colors, dtype=np.int64)
            _check_coloring(self.pattern, self.colors)


def _check_coloring(pattern, colors):
    csr = scipy.sparse.csr_matrix(pattern)
    for r in range(csr.shape[0]):
        cols = csr.indices[csr.indptr[r] : csr.indptr[r + 1]]
        c = colors[cols]
        if len(np.unique(c)) != len(c):
            raise ValueError(f"coloring is not structurally orthogonal at residual {r}")


@dataclass
class SolveReport:
    iterations: int
    initial_cost: float
    final_cost: float
    status: str  # "converged" | "max_iters" | "stalled"
    damping_final: float
    cost_history: list

    @property
    def converged(self) -> bool:
        return self.status == "converged"

    def as_dict(self) -> dict:
        return {
            "iterations": self.iterations,
            "initial_cost": self.initial_cost,
            "final_cost": self.final_cost,
            "status": self.status,
            "damping_final": self.damping_final,
        }


def residual(problem: ResidualProblem, x: np.ndarray) -> np.ndarray:
    r = np.asarray(problem.evaluate(np.asarray(x, dtype=float)), dtype=float)
    if r.shape != (problem.residual_count,):
        raise ValueError(f"residual has shape {r.shape}, expected ({problem.residual_count},)")
    bad = np.flatnonzero(~np.isfinite(r))
    if bad.size:
        raise NonFiniteError(int(bad[0]))
    return r


def jacobian(problem: ResidualProblem, x: np.ndarray, width: int = DUAL_WIDTH):
    """Exact Jacobian by forward-mode AD, ``width`` seed directions per pass.

    Dense ndarray for unstructured problems, CSR matrix when the problem
    carries a sparsity pattern.
    """
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise ValueError("jacobian evaluated at non-finite point")
    n = problem.dimension
    colors = problem.colors if problem.sparse else np.arange(n)
    ncolors = int(colors.max()) + 1 if n else 0
    compressed = np.empty((problem.residual_count, ncolors))
    for start in range(0, ncolors, width):
        stop = min(start + width, ncolors)
        seeds = np.zeros((stop - start, n))
        cols = np.flatnonzero((colors >= start) & (colors < stop))
        seeds[colors[cols] - start, cols] = 1.0
        out = problem.evaluate(DualArray(x, seeds))
        if not isinstance(out, DualArray):
            # residual independent of x
            compressed[:, start:stop] = 0.0
            continue
        bad = np.flatnonzero(~np.isfinite(out.val))
        if bad.size:
            raise NonFiniteError(int(bad[0]))
        bad = np.flatnonzero(~np.all(np.isfinite(out.der), axis=0))
        if bad.size:
            raise NonFiniteError(int(bad[0]), "derivative")
        compressed[:, start:stop] = out.der.T
    if not problem.sparse:
        return compressed
    p = problem.pattern
    data = compressed[p.row, colors[p.col]]
    return scipy.sparse.csr_matrix((data, (p.row, p.col)), shape=p.shape)


def _solve_damped(A, g, mu):
    """Solve ``(A + mu I) d = -g``; None when the system is numerically singular."""
    n = g.shape[0]
    if scipy.sparse.issparse(A):
        M = (A + mu * scipy.sparse.identity(n, format="csr")).tocsc()
        with warnings.catch_warnings():
            warnings.simplefilter("error", scipy.sparse.linalg.MatrixRankWarning)
            try:
                d = scipy.sparse.linalg.spsolve(M, -g)
            except (RuntimeError, scipy.sparse.linalg.MatrixRankWarning):
                return None
    else:
        M = A + mu * np.eye(n)
        try:
            c = scipy.linalg.cho_factor(M, check_finite=False)
            d = scipy.linalg.cho_solve(c, -g, check_finite=False)
        except (np.linalg.LinAlgError, ValueError):
            return None
    return d if np.all(np.isfinite(d)) else None


def solve_nlsq(
    problem: ResidualProblem,
    x0,
    max_iters: int = 100,
    tol: float = 1e-10,
    damping_init: float = 1e-8,
):
    """Minimise ``||r(x)||^2`` from ``x0`` by Levenberg-Marquardt.

    Steps are accepted only if they decrease the cost.  Damping starts at
    ``damping_init * max(diag(J^T J))`` and adapts with the gain ratio
    (Nielsen's rule).  Stops when the relative cost decrease, the gradient,
    or the step falls below ``tol``, or after ``max_iters`` accepted steps.

    Returns ``(x, SolveReport)``; ``x`` is always the best iterate seen.
    """
    x = np.array(x0, dtype=float)
    if x.shape != (problem.dimension,):
        raise ValueError(f"x0 has shape {x.shape}, expected ({problem.dimension},)")
    if not np.all(np.isfinite(x)):
        raise ValueError("x0 must be finite")

    r = residual(problem, x)
    cost = float(r @ r)
    history = [cost]
    initial = cost

    def report(status, it, mu):
        return SolveReport(it, initial, cost, status, float(mu), history)

    if cost == 0.0 or problem.dimension == 0:
        return x, report("converged", 0, 0.0)

    J = jacobian(problem, x)
    A = J.T @ J
    g = J.T @ r
    diag = A.diagonal()
    mu = float(np.clip(damping_init * max(float(diag.max()), 1.0), DAMPING_MIN, DAMPING_MAX))
    nu = 2.0
    rejections = 0
    it = 0

    while True:
        if np.max(np.abs(g)) < tol:
            return x, report("converged", it, mu)
        if it >= max_iters:
            return x, report("max_iters", it, mu)

        d = _solve_damped(A, g, mu)
        accepted = False
        if d is not None:
            x_new = x + d
            try:
                r_new = residual(problem, x_new)
                cost_new = float(r_new @ r_new)
            except RejectStep:
                cost_new = np.inf
            # predicted decrease of the quadratic model
            predicted = float(-(d @ g) * 2.0 - d @ (A @ d))
            actual = cost - cost_new
            if actual > 0.0 and np.isfinite(cost_new):
                accepted = True
            elif predicted <= tol * cost:
                # model already flat: we are at a (numerical) minimum.  The
                # cost can no longer resolve the step, so take it when it
                # does not increase the cost beyond rounding and shrinks the
                # gradient.
                if np.isfinite(cost_new) and cost_new <= cost * (1.0 + 8 * np.finfo(float).eps):
                    g_new = jacobian(problem, x_new).T @ r_new
                    if np.max(np.abs(g_new)) < np.max(np.abs(g)):
                        x, cost = x_new, min(cost, cost_new)
                        history.append(cost)
                        it += 1
                return x, report("converged", it, mu)

        if not accepted:
            rejections += 1
            mu *= nu
            nu *= 2.0
            if rejections >= MAX_REJECTIONS or mu > DAMPING_MAX:
                log.debug("LM stalled after %d rejections, mu=%g", rejections, mu)
                return x, report("stalled", it, min(mu, DAMPING_MAX))
            continue

        it += 1
        rejections = 0
        rho = actual / predicted if predicted > 0 else 0.0
        step_small = np.linalg.norm(d) <= tol * (np.linalg.norm(x) + tol)
        x, r, cost_old, cost = x_new, r_new, cost, cost_new
        history.append(cost)
        mu = max(mu * max(1.0 / 3.0, 1.0 - (2.0 * rho - 1.0) ** 3), DAMPING_MIN)
        nu = 2.0

        if cost == 0.0 or (cost_old - cost) <= tol * cost_old or step_small:
            return x, report("converged", it, mu)

        J = jacobian(problem, x)
        A = J.T @ J
        g = J.T @ r
