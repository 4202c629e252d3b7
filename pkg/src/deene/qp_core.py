"""Dense convex QP engine with explicit active sets and multipliers.

Problems have the form::

    minimize    0.5 * x' H x + f' x
    subject to  G x <= h

with ``H`` symmetric positive definite. The solver is a primal active-set
method (feasible start, one constraint added or dropped per iteration) on a
range-space factorization: ``H`` is Cholesky-factorized once per solve and
each working-set change only refactors the small Schur complement
``A H^-1 A'``. Multipliers follow the convention ``H x + f + G' mu = 0``,
``mu >= 0``.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg as sla
from scipy.optimize import linprog

from .errors import (
    InfeasibleError,
    InvalidArgumentError,
    NonConvergenceError,
    NotPositiveDefiniteError,
    SingularKKTError,
)

logger = logging.getLogger(__name__)

ACTIVITY_TOL = 1e-7
SYMMETRY_RTOL = 1e-12
DEGENERACY_RTOL = 1e-12
CONSTRAINT_RANK_RTOL = 1e-10
MULTIPLIER_TOL = 1e-10


def _as_matrix(a, n_cols: int, name: str) -> np.ndarray:
    if a is None:
        return np.zeros((0, n_cols))
    arr = np.asarray(a, dtype=float)
    if arr.ndim == 1:
        arr = arr.reshape(-1, n_cols) if arr.size else np.zeros((0, n_cols))
    if arr.ndim != 2 or arr.shape[1] != n_cols:
        raise InvalidArgumentError(f"{name} must have {n_cols} columns, got shape {arr.shape}")
    return arr


@dataclass(frozen=True)
class QuadraticProgram:
    """``min 0.5 x'Hx + f'x  s.t.  G x <= h``."""

    H: np.ndarray
    f: np.ndarray
    G: np.ndarray | None = None
    h: np.ndarray | None = None

    def __post_init__(self):
        H = np.asarray(self.H, dtype=float)
        if H.ndim != 2 or H.shape[0] != H.shape[1]:
            raise InvalidArgumentError(f"H must be square, got shape {H.shape}")
        n = H.shape[0]
        scale = max(np.abs(H).max(initial=0.0), np.finfo(float).tiny)
        if np.abs(H - H.T).max(initial=0.0) > SYMMETRY_RTOL * scale:
            raise InvalidArgumentError("H is not symmetric")
        f = np.asarray(self.f, dtype=float).reshape(-1)
        if f.shape != (n,):
            raise InvalidArgumentError(f"f must have length {n}, got {f.shape}")
        G = _as_matrix(self.G, n, "G")
        h = np.zeros(0) if self.h is None else np.asarray(self.h, dtype=float).reshape(-1)
        if h.shape != (G.shape[0],):
            raise InvalidArgumentError(f"h must have length {G.shape[0]}, got {h.shape}")
        for name, val in (("H", H), ("f", f), ("G", G), ("h", h)):
            val.setflags(write=False)
            object.__setattr__(self, name, val)

    @property
    def n_vars(self) -> int:
        return self.H.shape[0]

    @property
    def n_constraints(self) -> int:
        return self.G.shape[0]

    def objective(self, x) -> float:
        x = np.asarray(x, dtype=float)
        return float(0.5 * x @ self.H @ x + self.f @ x)

    def to_dict(self) -> dict:
        return {"H": self.H.tolist(), "f": self.f.tolist(), "G": self.G.tolist(), "h": self.h.tolist()}

    @classmethod
    def from_dict(cls, doc: dict) -> "QuadraticProgram":
        n = len(doc["f"])
        G = np.asarray(doc.get("G") or np.zeros((0, n)), dtype=float).reshape(-1, n)
        return cls(np.asarray(doc["H"], float), np.asarray(doc["f"], float), G, np.asarray(doc.get("h") or [], float))

    def dump_json(self, path) -> None:
        """Write the problem data to a JSON file (for bug reports)."""
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load_json(cls, path) -> "QuadraticProgram":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class QPSolution:
    """Result of :func:`solve_qp`.

    ``active_set`` holds every row with slack at most ``activity_tol``.
    ``working_set`` is the linearly independent subset the solver carried to
    termination; it is the set whose multipliers may be nonzero and the one to
    hand to sensitivity analysis. The two coincide unless the optimum is
    degenerate.
    """

    x: np.ndarray
    mu: np.ndarray
    active_set: tuple[int, ...]
    working_set: tuple[int, ...]
    objective: float
    iterations: int
    kkt_residual: float
    objective_history: tuple[float, ...] = field(default=(), repr=False)


def cholesky(H: np.ndarray):
    """Cholesky factor of ``H`` as returned by :func:`scipy.linalg.cho_factor`.

    Raises :class:`NotPositiveDefiniteError` if the factorization fails or the
    matrix is numerically degenerate (squared pivot ratio below 1e-12).
    """
    try:
        c, lower = sla.cho_factor(H, lower=True, check_finite=False)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefiniteError(f"Hessian is not positive definite: {exc}") from exc
    d = np.abs(np.diag(c))
    if d.size and (d.min() ** 2) < DEGENERACY_RTOL * np.abs(np.diag(H)).max():
        raise NotPositiveDefiniteError(
            f"Hessian is numerically singular (pivot ratio {(d.min() / d.max()) ** 2:.3e})"
        )
    return c, lower


def constraint_rank(A: np.ndarray, rtol: float = CONSTRAINT_RANK_RTOL) -> int:
    if A.shape[0] == 0:
        return 0
    s = np.linalg.svd(A, compute_uv=False)
    if s[0] == 0.0:
        return 0
    return int(np.sum(s > rtol * s[0]))


def solve_equality_kkt(H, f, A=None, b=None):
    """Stationary point of ``0.5 x'Hx + f'x`` subject to ``A x = b``.

    Solves the saddle-point system ``[H A'; A 0] [x; nu] = [-f; b]`` with a
    symmetric indefinite (Bunch-Kaufman) factorization, so that
    ``H x + f + A' nu = 0``.

    Returns:
        ``(x, nu)``.

    Raises:
        SingularKKTError: ``A`` is row-rank deficient.
    """
    H = np.asarray(H, dtype=float)
    n = H.shape[0]
    f = np.asarray(f, dtype=float).reshape(n)
    A = _as_matrix(A, n, "A")
    n_a = A.shape[0]
    b = np.zeros(0) if b is None else np.asarray(b, dtype=float).reshape(-1)
    if b.shape != (n_a,):
        raise InvalidArgumentError(f"b must have length {n_a}, got {b.shape}")
    if n_a == 0:
        x = sla.cho_solve(cholesky(H), -f, check_finite=False)
        return x, np.zeros(0)
    rank = constraint_rank(A)
    if rank < n_a:
        raise SingularKKTError(
            f"equality constraints are rank deficient (rank {rank} < {n_a} rows)", rank, n_a
        )
    K = np.block([[H, A.T], [A, np.zeros((n_a, n_a))]])
    rhs = np.concatenate([-f, b])
    try:
        sol = sla.solve(K, rhs, assume_a="sym", check_finite=False)
    except (np.linalg.LinAlgError, sla.LinAlgWarning) as exc:
        raise SingularKKTError(f"KKT matrix is singular: {exc}", rank, n_a) from exc
    return sol[:n], sol[n:]


class RangeSpaceKKT:
    """Factorization of ``[H A'; A 0]`` by block elimination.

    Reuses a Cholesky factor of ``H`` and factorizes the Schur complement
    ``S = A H^-1 A'``. Valid whenever ``H`` is positive definite and ``A`` has
    full row rank.
    """

    def __init__(self, H_factor, A: np.ndarray, HinvAT: np.ndarray | None = None):
        self.H_factor = H_factor
        self.A = np.asarray(A, dtype=float)
        n_a = self.A.shape[0]
        if HinvAT is None:
            HinvAT = sla.cho_solve(H_factor, self.A.T, check_finite=False) if n_a else np.zeros((H_factor[0].shape[0], 0))
        self.W = HinvAT
        self.S_factor = None
        if n_a:
            S = self.A @ self.W
            S = 0.5 * (S + S.T)
            try:
                self.S_factor = sla.cho_factor(S, lower=True, check_finite=False)
                d = np.abs(np.diag(self.S_factor[0]))
                ok = d.min() ** 2 > DEGENERACY_RTOL * np.abs(np.diag(S)).max()
            except np.linalg.LinAlgError:
                ok = False
            if not ok:
                rank = constraint_rank(self.A)
                raise SingularKKTError(
                    f"active constraint rows are rank deficient (rank {rank} < {n_a})", rank, n_a
                )

    @property
    def n_active(self) -> int:
        return self.A.shape[0]

    def solve(self, r1: np.ndarray, r2: np.ndarray | None = None):
        """Solve ``[H A'; A 0] [x; y] = [r1; r2]``; ``r1`` may have several columns."""
        x1 = sla.cho_solve(self.H_factor, r1, check_finite=False)
        if self.n_active == 0:
            return x1, np.zeros((0,) + np.shape(r1)[1:])
        t = self.A @ x1
        if r2 is not None:
            t = t - r2
        y = sla.cho_solve(self.S_factor, t, check_finite=False)
        return x1 - self.W @ y, y

    def reduced_inverse(self) -> np.ndarray:
        """Top-left block of the inverse KKT matrix, ``H^-1 - W S^-1 W'``."""
        n = self.W.shape[0]
        Hinv = sla.cho_solve(self.H_factor, np.eye(n), check_finite=False)
        if self.n_active == 0:
            return Hinv
        return Hinv - self.W @ sla.cho_solve(self.S_factor, self.W.T, check_finite=False)


def _phase_one(qp: QuadraticProgram, activity_tol: float) -> np.ndarray:
    """Point maximizing the normalized constraint margin (capped at 1)."""
    G, h = qp.G, qp.h
    n = qp.n_vars
    norms = np.linalg.norm(G, axis=1)
    norms[norms == 0.0] = 1.0
    c = np.zeros(n + 1)
    c[-1] = -1.0
    A_ub = np.hstack([G, norms[:, None]])
    bounds = [(None, None)] * n + [(None, 1.0)]
    res = linprog(c, A_ub=A_ub, b_ub=h, bounds=bounds, method="highs")
    if res.status != 0:
        raise InfeasibleError(f"phase-1 linear program failed: {res.message}")
    margin = res.x[-1]
    if margin < -activity_tol:
        raise InfeasibleError(f"constraints are infeasible (best normalized margin {margin:.3e})")
    return res.x[:n]


def _feasible(qp: QuadraticProgram, x: np.ndarray, tol: float) -> bool:
    return qp.n_constraints == 0 or bool(np.all(qp.G @ x - qp.h <= tol))


def solve_qp(
    qp: QuadraticProgram,
    x0=None,
    max_iter: int | None = None,
    working_set=None,
    activity_tol: float = ACTIVITY_TOL,
    tol: float = 1e-8,
) -> QPSolution:
    """Solve a convex QP with the primal active-set method.

    Args:
        qp: problem data; ``H`` must be positive definite.
        x0: optional feasible starting point.
        max_iter: iteration cap (default ``5 * (n_vars + n_constraints) + 50``).
        working_set: optional initial guess of the active rows (warm start).
        activity_tol: slack below which a row is reported active.
        tol: stationarity tolerance reported against ``kkt_residual``; a
            solution whose relative residual exceeds it is logged.

    Raises:
        NotPositiveDefiniteError, InfeasibleError, NonConvergenceError
    """
    n, n_c = qp.n_vars, qp.n_constraints
    if max_iter is None:
        max_iter = 5 * (n + n_c) + 50
    H_factor = cholesky(qp.H)
    G, h, f = qp.G, qp.h, qp.f
    scale_f = 1.0 + np.abs(f).max(initial=0.0)
    row_norms = np.linalg.norm(G, axis=1)
    feas_tol = activity_tol * (1.0 + np.abs(h).max(initial=0.0))
    hinv_cols: dict[int, np.ndarray] = {}

    def hinv_col(i: int) -> np.ndarray:
        col = hinv_cols.get(i)
        if col is None:
            col = sla.cho_solve(H_factor, G[i], check_finite=False)
            hinv_cols[i] = col
        return col

    def eqp(W: list[int]):
        if not W:
            return RangeSpaceKKT(H_factor, np.zeros((0, n))), None
        A = G[W]
        kkt = RangeSpaceKKT(H_factor, A, np.column_stack([hinv_col(i) for i in W]))
        return kkt, h[W]

    # -- starting point ----------------------------------------------------
    W: list[int] = []
    x = None
    if working_set is not None and len(working_set) and n_c:
        guess = sorted({int(i) for i in working_set if 0 <= int(i) < n_c})
        try:
            kkt, b = eqp(guess)
            cand, _ = kkt.solve(-f, b)
            if _feasible(qp, cand, feas_tol):
                x, W = cand, guess
        except SingularKKTError:
            logger.debug("warm-start working set is rank deficient; ignored")
    if x is None:
        x_unc = sla.cho_solve(H_factor, -f, check_finite=False)
        for cand in (x0, x_unc, np.zeros(n)):
            if cand is not None and _feasible(qp, np.asarray(cand, float).reshape(n), feas_tol):
                x = np.array(cand, dtype=float).reshape(n)
                break
    if x is None:
        x = _phase_one(qp, activity_tol)

    history = [qp.objective(x)]
    mu_w = np.zeros(0)
    for it in range(1, max_iter + 1):
        kkt, b = eqp(W)
        x_eq, nu = kkt.solve(-f, b)
        p = x_eq - x
        if np.abs(p).max(initial=0.0) <= 1e-12 * (1.0 + np.abs(x).max(initial=0.0)):
            mu_w = nu
            if len(W) == 0 or nu.min() >= -MULTIPLIER_TOL * scale_f:
                x = x_eq if _feasible(qp, x_eq, feas_tol) else x
                sol = _finish(qp, x, W, mu_w, it, history, activity_tol)
                if sol.kkt_residual > tol:
                    logger.warning("QP stationarity residual %.3e exceeds %.1e", sol.kkt_residual, tol)
                return sol
            # drop most negative multiplier; lowest index on exact ties
            worst = nu.min()
            candidates = [W[j] for j in range(len(W)) if nu[j] == worst]
            W.remove(min(candidates))
            continue
        Gp = G @ p if n_c else np.zeros(0)
        alpha, blocking = 1.0, None
        if n_c:
            slack = h - G @ x
            in_w = np.zeros(n_c, dtype=bool)
            in_w[W] = True
            moving = (~in_w) & (Gp > 1e-13 * row_norms * np.linalg.norm(p))
            if moving.any():
                idx = np.flatnonzero(moving)
                ratios = np.maximum(slack[idx], 0.0) / Gp[idx]
                rmin = ratios.min()
                if rmin < 1.0:
                    alpha = rmin
                    blocking = int(idx[ratios == rmin].min())
        x = x_eq if blocking is None else x + alpha * p
        history.append(qp.objective(x))
        if blocking is not None:
            W.append(blocking)
    resid = float(np.abs(qp.H @ x + f).max())
    raise NonConvergenceError(
        f"active-set iteration did not converge in {max_iter} iterations", x, resid, sorted(W)
    )


def _finish(qp, x, W, mu_w, iterations, history, activity_tol) -> QPSolution:
    n_c = qp.n_constraints
    mu = np.zeros(n_c)
    if W:
        mu[W] = mu_w
    if n_c:
        slack = qp.h - qp.G @ x
        active = tuple(int(i) for i in np.flatnonzero(slack <= activity_tol))
    else:
        active = ()
    grad = qp.H @ x + qp.f + (qp.G.T @ mu if n_c else 0.0)
    resid = float(np.abs(grad).max(initial=0.0) / (1.0 + np.abs(qp.f).max(initial=0.0)))
    return QPSolution(
        x=x,
        mu=mu,
        active_set=active,
        working_set=tuple(sorted(int(i) for i in W)),
        objective=qp.objective(x),
        iterations=iterations,
        kkt_residual=resid,
        objective_history=tuple(history),
    )
