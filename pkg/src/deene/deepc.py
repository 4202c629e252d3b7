"""DeePC: the receding-horizon program in the Hankel weight vector ``g``.

With ``y = Y_F g``, ``u = U_F g``, ``sigma_y = Y_P g - y_ini`` and
``sigma_u = U_P g - u_ini`` the cost

    J(g) = ||y - r||_Q^2 + ||u||_R^2 + lambda_y ||sigma_y||^2
           + lambda_u ||sigma_u||^2 + lambda_g ||g||^2

is a strictly convex quadratic in ``g`` whenever ``lambda_g > 0``. Affine
input/output limits and extra halfspaces become rows ``G g <= h``.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.linalg as sla

from .errors import DeePCError, DeeneError, InvalidArgumentError
from .qp_core import QuadraticProgram, QPSolution, cholesky, solve_qp
from .signal_data import HankelPartition


def _weight_matrix(w, size: int, name: str, channels: int | None = None) -> np.ndarray:
    arr = np.asarray(w, dtype=float)
    if arr.ndim == 0:
        return float(arr) * np.eye(size)
    if arr.ndim == 1:
        if arr.size == size:
            return np.diag(arr)
        if channels is not None and arr.size == channels:
            # per-channel weights repeated over the horizon
            return np.diag(np.tile(arr, size // channels))
        raise InvalidArgumentError(f"{name} diagonal must have length {size} or {channels}, got {arr.size}")
    if arr.shape != (size, size):
        raise InvalidArgumentError(f"{name} must be {size}x{size}, got {arr.shape}")
    return arr


@dataclass(frozen=True)
class Halfspace:
    """``a_y . y + a_u . u <= b`` over the stacked predicted outputs and inputs."""

    a_y: np.ndarray
    a_u: np.ndarray
    b: float


@dataclass(frozen=True)
class DeePCConfig:
    """Cost weights, horizons and constraints of the DeePC program.

    ``Q`` and ``R`` accept a scalar (scaled identity), a per-channel vector
    (length ``p`` / ``m``), a full diagonal vector, or a full matrix of size
    ``p*N`` / ``m*N``. Bounds are per channel
    ``(lo, hi)`` pairs; ``None`` (for the whole list or one entry) or an
    infinite limit means unbounded.
    """

    T_ini: int
    N: int
    Q: float | np.ndarray = 1.0
    R: float | np.ndarray = 1.0
    lambda_y: float = 1.0
    lambda_u: float = 1.0
    lambda_g: float = 1.0
    input_bounds: Sequence | None = None
    output_bounds: Sequence | None = None
    extra_halfspaces: Sequence[Halfspace] = ()

    def __post_init__(self):
        if self.T_ini < 1 or self.N < 1:
            raise InvalidArgumentError(f"T_ini and N must be positive, got {self.T_ini}, {self.N}")
        if not self.lambda_g > 0:
            raise InvalidArgumentError(f"lambda_g must be positive, got {self.lambda_g}")
        if self.lambda_y < 0 or self.lambda_u < 0:
            raise InvalidArgumentError("slack weights must be non-negative")
        for name in ("input_bounds", "output_bounds"):
            for ch, pair in enumerate(getattr(self, name) or ()):
                if pair is None:
                    continue
                lo, hi = _bound_pair(pair)
                if lo > hi:
                    raise InvalidArgumentError(f"{name}[{ch}] has lo={lo} > hi={hi}")
        object.__setattr__(self, "extra_halfspaces", tuple(self.extra_halfspaces))

    def Q_matrix(self, p: int) -> np.ndarray:
        return _weight_matrix(self.Q, p * self.N, "Q", p)

    def R_matrix(self, m: int) -> np.ndarray:
        return _weight_matrix(self.R, m * self.N, "R", m)


def _bound_pair(pair) -> tuple[float, float]:
    lo, hi = pair
    lo = -np.inf if lo is None else float(lo)
    hi = np.inf if hi is None else float(hi)
    return lo, hi


@dataclass(frozen=True)
class InitialWindow:
    """The most recent ``T_ini`` input/output samples, oldest first."""

    u_ini: np.ndarray
    y_ini: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "u_ini", np.asarray(self.u_ini, dtype=float).reshape(-1))
        object.__setattr__(self, "y_ini", np.asarray(self.y_ini, dtype=float).reshape(-1))

    @classmethod
    def from_samples(cls, u_samples, y_samples) -> "InitialWindow":
        """Build from ``(T_ini, m)`` and ``(T_ini, p)`` sample arrays."""
        return cls(np.asarray(u_samples, float).ravel(), np.asarray(y_samples, float).ravel())

    @classmethod
    def from_vector(cls, w_ini, m: int, p: int, T_ini: int) -> "InitialWindow":
        w = np.asarray(w_ini, dtype=float).reshape(-1)
        if w.size != (m + p) * T_ini:
            raise InvalidArgumentError(f"w_ini must have length {(m + p) * T_ini}, got {w.size}")
        return cls(w[: m * T_ini], w[m * T_ini :])

    @property
    def w_ini(self) -> np.ndarray:
        return np.concatenate([self.u_ini, self.y_ini])

    def shifted(self, u_new, y_new) -> "InitialWindow":
        """Drop the oldest sample and append ``(u_new, y_new)``."""
        u_new = np.asarray(u_new, float).reshape(-1)
        y_new = np.asarray(y_new, float).reshape(-1)
        return InitialWindow(
            np.concatenate([self.u_ini[u_new.size :], u_new]),
            np.concatenate([self.y_ini[y_new.size :], y_new]),
        )


@dataclass(frozen=True)
class CostTerms:
    """``J(g) = 0.5 g' hessian g + gradient' g + constant``."""

    hessian: np.ndarray
    gradient: np.ndarray
    constant: float

    def value(self, g) -> float:
        g = np.asarray(g, dtype=float)
        return float(0.5 * g @ self.hessian @ g + self.gradient @ g + self.constant)


@dataclass(frozen=True)
class DeePCSolution:
    """Optimizer of one DeePC solve and the trajectories it implies.

    ``mu`` holds the multipliers of the rows listed in ``active_set`` (the
    solver's linearly independent working set).
    """

    g: np.ndarray
    u: np.ndarray
    y: np.ndarray
    sigma_u: np.ndarray
    sigma_y: np.ndarray
    mu: np.ndarray
    active_set: tuple[int, ...]
    objective: float
    solve_time: float
    iterations: int = 0
    tight_set: tuple[int, ...] = field(default=(), repr=False)

    def to_dict(self) -> dict:
        return {
            "g": self.g.tolist(),
            "u": self.u.tolist(),
            "y": self.y.tolist(),
            "sigma_u": self.sigma_u.tolist(),
            "sigma_y": self.sigma_y.tolist(),
            "mu": self.mu.tolist(),
            "active_set": list(self.active_set),
            "objective": self.objective,
            "solve_time": self.solve_time,
            "iterations": self.iterations,
        }


def _check_dims(partition: HankelPartition, config: DeePCConfig) -> None:
    if partition.T_ini != config.T_ini:
        raise InvalidArgumentError(f"U_P/Y_P depth T_ini={partition.T_ini} != config T_ini={config.T_ini}")
    if partition.N != config.N:
        raise InvalidArgumentError(f"U_F/Y_F depth N={partition.N} != config N={config.N}")


def cross_derivatives(partition: HankelPartition, config: DeePCConfig):
    """Mixed second derivatives ``(J_{g w_ini}, J_{g r})`` of the cost.

    ``J_{g w_ini}`` is ``L x (m+p)T_ini`` with columns ordered like
    ``w_ini = [u_ini; y_ini]``; ``J_{g r}`` is ``L x pN``.
    """
    _check_dims(partition, config)
    Q = config.Q_matrix(partition.p)
    J_gw = -2.0 * np.hstack([config.lambda_u * partition.U_P.T, config.lambda_y * partition.Y_P.T])
    J_gr = -2.0 * partition.Y_F.T @ Q
    return J_gw, J_gr


def cost_hessian(partition: HankelPartition, config: DeePCConfig) -> np.ndarray:
    _check_dims(partition, config)
    Q = config.Q_matrix(partition.p)
    R = config.R_matrix(partition.m)
    U_P, Y_P, U_F, Y_F = partition.U_P, partition.Y_P, partition.U_F, partition.Y_F
    Hs = (
        Y_F.T @ Q @ Y_F
        + U_F.T @ R @ U_F
        + config.lambda_y * (Y_P.T @ Y_P)
        + config.lambda_u * (U_P.T @ U_P)
    )
    Hs = Hs + Hs.T
    Hs[np.diag_indices_from(Hs)] += 2.0 * config.lambda_g
    return Hs


def _split_window(partition: HankelPartition, w_ini) -> InitialWindow:
    if isinstance(w_ini, InitialWindow):
        win = w_ini
    else:
        win = InitialWindow.from_vector(w_ini, partition.m, partition.p, partition.T_ini)
    if win.u_ini.size != partition.m * partition.T_ini:
        raise InvalidArgumentError(f"u_ini must have length {partition.m * partition.T_ini}, got {win.u_ini.size}")
    if win.y_ini.size != partition.p * partition.T_ini:
        raise InvalidArgumentError(f"y_ini must have length {partition.p * partition.T_ini}, got {win.y_ini.size}")
    return win


def _check_reference(partition: HankelPartition, r) -> np.ndarray:
    r = np.asarray(r, dtype=float).reshape(-1)
    if r.size != partition.p * partition.N:
        raise InvalidArgumentError(f"reference must have length {partition.p * partition.N}, got {r.size}")
    return r


def assemble_cost(partition: HankelPartition, config: DeePCConfig, w_ini, r) -> CostTerms:
    """Quadratic form of the cost in ``g``: Hessian, gradient at ``g = 0``, constant."""
    win = _split_window(partition, w_ini)
    r = _check_reference(partition, r)
    J_gw, J_gr = cross_derivatives(partition, config)
    Q = config.Q_matrix(partition.p)
    const = float(
        r @ Q @ r + config.lambda_y * win.y_ini @ win.y_ini + config.lambda_u * win.u_ini @ win.u_ini
    )
    return CostTerms(cost_hessian(partition, config), J_gw @ win.w_ini + J_gr @ r, const)


def cost_value(partition: HankelPartition, config: DeePCConfig, g, w_ini, r) -> float:
    """The scalar cost evaluated term by term from the reconstructed signals."""
    win = _split_window(partition, w_ini)
    r = _check_reference(partition, r)
    g = np.asarray(g, dtype=float)
    Q = config.Q_matrix(partition.p)
    R = config.R_matrix(partition.m)
    e = partition.Y_F @ g - r
    u = partition.U_F @ g
    sy = partition.Y_P @ g - win.y_ini
    su = partition.U_P @ g - win.u_ini
    return float(
        e @ Q @ e + u @ R @ u + config.lambda_y * sy @ sy + config.lambda_u * su @ su
        + config.lambda_g * g @ g
    )


def cost_gradient(partition: HankelPartition, config: DeePCConfig, g, w_ini, r) -> np.ndarray:
    """``J_g`` at ``g`` (a column vector, i.e. the transpose of the row gradient)."""
    win = _split_window(partition, w_ini)
    r = _check_reference(partition, r)
    g = np.asarray(g, dtype=float)
    Q = config.Q_matrix(partition.p)
    R = config.R_matrix(partition.m)
    return 2.0 * (
        partition.Y_F.T @ (Q @ (partition.Y_F @ g - r))
        + partition.U_F.T @ (R @ (partition.U_F @ g))
        + config.lambda_y * partition.Y_P.T @ (partition.Y_P @ g - win.y_ini)
        + config.lambda_u * partition.U_P.T @ (partition.U_P @ g - win.u_ini)
        + config.lambda_g * g
    )


def assemble_constraints(partition: HankelPartition, config: DeePCConfig):
    """Affine constraint rows ``G g <= h``.

    Row order: input upper limits, input lower limits, output upper limits,
    output lower limits (each time-major, channel-minor, skipping unbounded
    entries), then the extra halfspaces in declaration order.
    """
    _check_dims(partition, config)
    m, p, N, L = partition.m, partition.p, partition.N, partition.L
    rows: list[np.ndarray] = []
    rhs: list[float] = []

    def add_bounds(bounds, block, n_ch, name):
        if bounds is None:
            return
        if len(bounds) != n_ch:
            raise InvalidArgumentError(f"{name} must list {n_ch} channels, got {len(bounds)}")
        pairs = [(-np.inf, np.inf) if b is None else _bound_pair(b) for b in bounds]
        for side in (1.0, -1.0):
            for j in range(N):
                for c, (lo, hi) in enumerate(pairs):
                    lim = hi if side > 0 else -lo
                    if np.isfinite(lim):
                        rows.append(side * block[j * n_ch + c])
                        rhs.append(lim)

    add_bounds(config.input_bounds, partition.U_F, m, "input_bounds")
    add_bounds(config.output_bounds, partition.Y_F, p, "output_bounds")
    for k, hs in enumerate(config.extra_halfspaces):
        a_y = np.asarray(hs.a_y, float).reshape(-1)
        a_u = np.asarray(hs.a_u, float).reshape(-1)
        if a_y.size != p * N or a_u.size != m * N:
            raise InvalidArgumentError(
                f"extra_halfspaces[{k}] must have a_y of length {p * N} and a_u of length {m * N}"
            )
        rows.append(a_y @ partition.Y_F + a_u @ partition.U_F)
        rhs.append(float(hs.b))
    if not rows:
        return np.zeros((0, L)), np.zeros(0)
    return np.vstack(rows), np.asarray(rhs)


class DeePCProblem:
    """A partition plus configuration with the ``(w_ini, r)``-independent parts cached.

    The Hessian, mixed derivatives and constraint rows do not depend on the
    initial window or reference, so they are assembled once.
    """

    def __init__(self, partition: HankelPartition, config: DeePCConfig):
        _check_dims(partition, config)
        self.partition = partition
        self.config = config
        self.hessian = cost_hessian(partition, config)
        self.J_gw, self.J_gr = cross_derivatives(partition, config)
        self.G, self.h = assemble_constraints(partition, config)
        self.Q = config.Q_matrix(partition.p)
        self._factor = None

    @property
    def L(self) -> int:
        return self.partition.L

    @property
    def hessian_factor(self):
        """Cholesky factor of the Hessian (computed on first use)."""
        if self._factor is None:
            self._factor = cholesky(self.hessian)
        return self._factor

    def linear_term(self, w_ini, r) -> np.ndarray:
        win = _split_window(self.partition, w_ini)
        return self.J_gw @ win.w_ini + self.J_gr @ _check_reference(self.partition, r)

    def gradient(self, g, w_ini, r) -> np.ndarray:
        return self.hessian @ np.asarray(g, float) + self.linear_term(w_ini, r)

    def constant(self, w_ini, r) -> float:
        win = _split_window(self.partition, w_ini)
        r = _check_reference(self.partition, r)
        c = self.config
        return float(r @ self.Q @ r + c.lambda_y * win.y_ini @ win.y_ini + c.lambda_u * win.u_ini @ win.u_ini)

    def objective(self, g, w_ini, r) -> float:
        g = np.asarray(g, float)
        return float(0.5 * g @ self.hessian @ g + self.linear_term(w_ini, r) @ g + self.constant(w_ini, r))

    def qp(self, w_ini, r) -> QuadraticProgram:
        return QuadraticProgram(self.hessian, self.linear_term(w_ini, r), self.G, self.h)

    def reconstruct(
        self, g, w_ini, qp_sol: QPSolution | None = None, solve_time: float = 0.0, objective: float = float("nan")
    ) -> DeePCSolution:
        win = _split_window(self.partition, w_ini)
        P = self.partition
        g = np.asarray(g, float)
        if qp_sol is None:
            ws, mu, iters, tight = (), np.zeros(0), 0, ()
        else:
            ws = qp_sol.working_set
            mu = qp_sol.mu[list(ws)] if ws else np.zeros(0)
            iters, tight = qp_sol.iterations, qp_sol.active_set
        return DeePCSolution(
            g=g,
            u=P.U_F @ g,
            y=P.Y_F @ g,
            sigma_u=P.U_P @ g - win.u_ini,
            sigma_y=P.Y_P @ g - win.y_ini,
            mu=mu,
            active_set=tuple(ws),
            objective=float(objective),
            solve_time=solve_time,
            iterations=iters,
            tight_set=tuple(tight),
        )

    def solve(self, w_ini, r, working_set=None, max_iter: int | None = None) -> DeePCSolution:
        """Solve the program for one ``(w_ini, r)`` with a fresh QP solve."""
        win = _split_window(self.partition, w_ini)
        r = _check_reference(self.partition, r)
        t0 = time.perf_counter()
        try:
            sol = solve_qp(self.qp(win, r), working_set=working_set, max_iter=max_iter)
        except DeeneError as exc:
            raise DeePCError(
                f"DeePC solve failed (L={self.L}, T_ini={self.config.T_ini}, N={self.config.N}, "
                f"{self.G.shape[0]} constraint rows): {exc}"
            ) from exc
        elapsed = time.perf_counter() - t0
        return self.reconstruct(sol.x, win, sol, elapsed, sol.objective + self.constant(win, r))


def solve_deepc(partition: HankelPartition, config: DeePCConfig, w_ini, r, working_set=None) -> DeePCSolution:
    """Assemble and solve DeePC for one initial window and reference window."""
    return DeePCProblem(partition, config).solve(w_ini, r, working_set=working_set)


def unconstrained_gains(partition: HankelPartition, config: DeePCConfig):
    """Closed-form gains of the constraint-free program.

    Returns:
        ``(K_d_r, K_d_ini)`` with ``u = K_d_r r + K_d_ini w_ini``.
    """
    problem = DeePCProblem(partition, config)
    factor = problem.hessian_factor
    g_r = -sla.cho_solve(factor, problem.J_gr, check_finite=False)
    g_w = -sla.cho_solve(factor, problem.J_gw, check_finite=False)
    return partition.U_F @ g_r, partition.U_F @ g_w


def reference_window(reference, k: int, N: int) -> np.ndarray:
    """Stacked ``r(k), ..., r(k+N-1)``; indices past the end hold the last point."""
    ref = np.asarray(reference, dtype=float)
    if ref.ndim == 1:
        ref = ref[:, None]
    if ref.shape[0] == 0:
        raise InvalidArgumentError("reference is empty")
    idx = np.clip(np.arange(k, k + N), 0, ref.shape[0] - 1)
    return ref[idx].ravel()


def dump_problem_json(path, problem: DeePCProblem, w_ini, r, solution: DeePCSolution | None = None) -> None:
    """Write the QP of one DeePC instance (and optionally its solution) as JSON."""
    doc = {
        "T_ini": problem.config.T_ini,
        "N": problem.config.N,
        "m": problem.partition.m,
        "p": problem.partition.p,
        "L": problem.L,
        "w_ini": np.asarray(_split_window(problem.partition, w_ini).w_ini).tolist(),
        "r": np.asarray(r, float).reshape(-1).tolist(),
        "qp": problem.qp(w_ini, r).to_dict(),
    }
    if solution is not None:
        doc["solution"] = solution.to_dict()
    Path(path).write_text(json.dumps(doc))
