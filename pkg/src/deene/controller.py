"""Closed-loop DeePC and DeeNE runs.

Timeline: samples ``0 .. T_ini-1`` are a bootstrap with random inputs that
fill the first initial window; control step ``j`` happens at sample
``T_ini + j`` and tracks ``reference[j]``.

Each macro-step computes an input plan and applies its first ``block`` inputs
(``block = min(s + 1, N)``). In ``deepc`` mode every macro-step re-solves the
QP. In ``deene`` mode only the first macro-step solves the QP; later ones
apply the neighboring-extremal correction to the previous solution, with a
safeguard that falls back to a full solve whenever the corrected point is
infeasible or a recovered multiplier turns negative (an active-set change).

Two DeeNE schedules exist. ``macro`` corrects once per macro-step, exactly
like DeePC but with corrections instead of solves. ``per_step`` applies the
first block open loop and then corrects at every sample.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg as sla

from .deepc import DeePCConfig, DeePCProblem, InitialWindow, reference_window
from .errors import DeeneError, InvalidArgumentError
from .neighboring import (
    CorrectionGains,
    NominalPoint,
    augmented_gradient,
    build_correction,
    correct_nonoptimal,
    fingerprint,
    recover_multipliers,
)
from .signal_data import HankelPartition

logger = logging.getLogger(__name__)

MODES = ("deepc", "deene")
SCHEDULES = ("per_step", "macro")
SAFEGUARD_TOL = 1e-6


@dataclass
class ClosedLoopTrace:
    """Signals and bookkeeping of one closed-loop run.

    Per-sample arrays cover bootstrap and control samples alike
    (``T_ini + T_c`` rows once complete); ``r`` is NaN during the bootstrap.
    ``loop_seconds`` holds the compute time of every macro-step after the
    first (warm-up) one.
    """

    mode: str
    s: int
    T_ini: int
    m: int
    p: int
    sample_period: float = 1.0
    u: list = field(default_factory=list)
    y: list = field(default_factory=list)
    y_true: list = field(default_factory=list)
    r: list = field(default_factory=list)
    step_compute_seconds: list = field(default_factory=list)
    fallback: list = field(default_factory=list)
    saturated: list = field(default_factory=list)
    loop_seconds: list = field(default_factory=list)
    windows: list = field(default_factory=list)
    n_solves: int = 0
    n_corrections: int = 0
    n_fallbacks: int = 0
    n_gain_builds: int = 0
    aborted: bool = False
    error: str | None = None

    def record(self, u, y, y_true, r, compute, fallback, saturated):
        self.u.append(np.asarray(u, float))
        self.y.append(np.asarray(y, float))
        self.y_true.append(np.asarray(y_true, float))
        self.r.append(np.full(self.p, np.nan) if r is None else np.asarray(r, float))
        self.step_compute_seconds.append(float(compute))
        self.fallback.append(bool(fallback))
        self.saturated.append(bool(saturated))

    def arrays(self):
        U = np.asarray(self.u).reshape(-1, self.m)
        Y = np.asarray(self.y).reshape(-1, self.p)
        Yt = np.asarray(self.y_true).reshape(-1, self.p)
        R = np.asarray(self.r).reshape(-1, self.p)
        return U, Y, Yt, R

    @property
    def n_control_steps(self) -> int:
        return max(len(self.u) - self.T_ini, 0)

    def tracking_errors(self, channels=None, use_true: bool = True) -> np.ndarray:
        _, Y, Yt, R = self.arrays()
        out = (Yt if use_true else Y)[self.T_ini :]
        ref = R[self.T_ini :]
        if channels is not None:
            out, ref = out[:, list(channels)], ref[:, list(channels)]
        return np.linalg.norm(out - ref, axis=1)

    def rmse(self, channels=None, use_true: bool = True) -> float:
        """Root-mean-square of the per-step Euclidean tracking error over the control samples."""
        e = self.tracking_errors(channels, use_true)
        return float(np.sqrt(np.mean(e**2))) if e.size else float("nan")

    def summary(self, position_channels=None) -> dict:
        loops = np.asarray(self.loop_seconds)
        doc = {
            "mode": self.mode,
            "s": self.s,
            "control_steps": self.n_control_steps,
            "rmse_all": self.rmse(),
            "mean_loop_seconds": float(loops.mean()) if loops.size else float("nan"),
            "median_loop_seconds": float(np.median(loops)) if loops.size else float("nan"),
            "fallback_count": self.n_fallbacks,
            "solves": self.n_solves,
            "corrections": self.n_corrections,
            "gain_builds": self.n_gain_builds,
            "aborted": self.aborted,
            "error": self.error,
        }
        if position_channels is not None:
            doc["rmse_position"] = self.rmse(position_channels)
        return doc

    def to_csv(self, path) -> None:
        """Columns: t, u_*, y_*, r_*, step_compute_seconds, mode, fallback_flag, ytrue_*."""
        U, Y, Yt, R = self.arrays()
        header = (
            ["t"]
            + [f"u_{i + 1}" for i in range(self.m)]
            + [f"y_{i + 1}" for i in range(self.p)]
            + [f"r_{i + 1}" for i in range(self.p)]
            + ["step_compute_seconds", "mode", "fallback_flag"]
            + [f"ytrue_{i + 1}" for i in range(self.p)]
        )
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            for k in range(U.shape[0]):
                writer.writerow(
                    [repr(k * self.sample_period)]
                    + [repr(float(v)) for v in U[k]]
                    + [repr(float(v)) for v in Y[k]]
                    + [repr(float(v)) for v in R[k]]
                    + [repr(self.step_compute_seconds[k]), self.mode, int(self.fallback[k])]
                    + [repr(float(v)) for v in Yt[k]]
                )

    def save_summary_json(self, path, position_channels=None) -> None:
        Path(path).write_text(json.dumps(self.summary(position_channels), indent=2))


def read_trace_csv(path) -> dict:
    """Load a trace CSV back into arrays keyed by column group."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [row for row in reader if row]

    def cols(prefix):
        idx = [i for i, h in enumerate(header) if h.startswith(prefix) and h[len(prefix):].isdigit()]
        return np.asarray([[float(row[i]) for i in idx] for row in rows]).reshape(len(rows), len(idx))

    i_mode = header.index("mode")
    return {
        "t": np.asarray([float(row[0]) for row in rows]),
        "u": cols("u_"),
        "y": cols("y_"),
        "r": cols("r_"),
        "y_true": cols("ytrue_"),
        "step_compute_seconds": np.asarray([float(row[header.index("step_compute_seconds")]) for row in rows]),
        "mode": rows[0][i_mode] if rows else "",
        "fallback_flag": np.asarray([int(row[header.index("fallback_flag")]) for row in rows], dtype=bool),
    }


def _bootstrap_bounds(config: DeePCConfig, plant, m: int) -> np.ndarray:
    limits = np.asarray(plant.input_limits(), float).reshape(m, 2)
    if config.input_bounds is not None:
        for c, pair in enumerate(config.input_bounds):
            if pair is None:
                continue
            lo, hi = pair
            if lo is not None:
                limits[c, 0] = max(limits[c, 0], lo)
            if hi is not None:
                limits[c, 1] = min(limits[c, 1], hi)
    limits = np.where(np.isfinite(limits), limits, np.sign(limits))
    return limits


class _DeeneState:
    """Nominal point, gains cache and safeguard for the ``deene`` mode."""

    def __init__(self, problem: DeePCProblem, safeguard_tol: float, trust_radius: float):
        self.problem = problem
        self.safeguard_tol = safeguard_tol
        self.trust_radius = trust_radius
        self.nominal: NominalPoint | None = None
        self.gains: CorrectionGains | None = None
        self.n_gain_builds = 0
        self._Hinv = None

    def _hessian_inverse(self):
        if self._Hinv is None:
            L = self.problem.L
            self._Hinv = sla.cho_solve(self.problem.hessian_factor, np.eye(L), check_finite=False)
        return self._Hinv

    def ensure_gains(self, active_set) -> CorrectionGains:
        fp = fingerprint(active_set)
        if self.gains is None or self.gains.built_from != fp:
            pb = self.problem
            self.gains = build_correction(
                pb.hessian,
                pb.G[list(fp)],
                pb.J_gw,
                pb.J_gr,
                active_set=fp,
                hessian_factor=pb.hessian_factor,
                hessian_inverse=self._hessian_inverse(),
            )
            self.n_gain_builds += 1
        return self.gains

    def adopt_solution(self, sol, w_ini, r):
        fp = fingerprint(sol.active_set)
        order = np.argsort(sol.active_set, kind="stable")
        mu = np.asarray(sol.mu)[order] if len(fp) else np.zeros(0)
        gains = self.ensure_gains(fp)
        self.nominal = NominalPoint(sol.g, np.asarray(w_ini, float), np.asarray(r, float), mu, fp, gains.kkt, True)

    def correct(self, w_ini, r):
        """Corrected ``g`` and its multipliers, or ``None`` if the safeguard trips."""
        pb, nom = self.problem, self.nominal
        gains = self.ensure_gains(nom.active_set)
        dw = w_ini - nom.w_ini0
        dr = r - nom.r0
        if math.isfinite(self.trust_radius) and np.linalg.norm(dw) + np.linalg.norm(dr) > self.trust_radius:
            return None
        C = pb.G[list(nom.active_set)]
        J_g0 = pb.hessian @ nom.g0 + pb.J_gw @ nom.w_ini0 + pb.J_gr @ nom.r0
        Jbar = augmented_gradient(J_g0, C, nom.mu0)
        g = nom.g0 + correct_nonoptimal(nom, gains, dw, dr, Jbar)
        if pb.G.shape[0]:
            viol = pb.G @ g - pb.h
            if viol.max() > self.safeguard_tol * (1.0 + np.abs(pb.h).max()):
                return None
        mu = np.zeros(0)
        if len(nom.active_set):
            J_g = pb.hessian @ g + pb.J_gw @ w_ini + pb.J_gr @ r
            mu = recover_multipliers(J_g, C)
            if mu.min() < -self.safeguard_tol * (1.0 + np.abs(J_g).max()):
                return None
        return g, mu

    def adopt_correction(self, g, mu, w_ini, r):
        self.nominal = NominalPoint(g, np.asarray(w_ini, float), np.asarray(r, float), mu,
                                    self.nominal.active_set, self.gains.kkt, False)


def run_controller(
    plant,
    partition: HankelPartition | DeePCProblem,
    config: DeePCConfig | None = None,
    reference=None,
    s: int = 0,
    T_c: int | None = None,
    mode: str = "deene",
    schedule: str = "per_step",
    seed: int | None = 0,
    bootstrap_scale: float = 1.0,
    bootstrap_inputs=None,
    safeguard_tol: float = SAFEGUARD_TOL,
    trust_radius: float = math.inf,
) -> ClosedLoopTrace:
    """Run DeePC or DeeNE in closed loop on ``plant``.

    Args:
        plant: object with ``m``, ``p``, ``step(u)``, ``input_limits()`` and
            ``last_true_output``.
        partition: Hankel data, or a prebuilt :class:`DeePCProblem`.
        config: DeePC configuration (ignored when a problem is given).
        reference: ``(len, p)`` reference; windows past its end hold the last point.
        s: open-loop length; each macro-step applies ``min(s + 1, N)`` inputs.
        T_c: number of control samples (default: reference length).
        mode: ``"deepc"`` (solve every macro-step) or ``"deene"``.
        schedule: DeeNE correction schedule, ``"per_step"`` or ``"macro"``.
        seed: seeds the bootstrap inputs.
        bootstrap_scale: fraction of the input range used by bootstrap inputs.
        bootstrap_inputs: explicit ``(T_ini, m)`` bootstrap inputs (overrides the RNG).
        safeguard_tol: relative tolerance of the DeeNE feasibility/multiplier checks.
        trust_radius: corrections with ``|dw| + |dr|`` above this re-solve instead.

    A solver or factorization failure ends the run early with
    ``trace.aborted`` set; the partial trace is returned.
    """
    if mode not in MODES:
        raise InvalidArgumentError(f"mode must be one of {MODES}, got {mode!r}")
    if schedule not in SCHEDULES:
        raise InvalidArgumentError(f"schedule must be one of {SCHEDULES}, got {schedule!r}")
    problem = partition if isinstance(partition, DeePCProblem) else DeePCProblem(partition, config)
    part, cfg = problem.partition, problem.config
    m, p, T_ini, N = part.m, part.p, part.T_ini, part.N
    if plant.m != m or plant.p != p:
        raise InvalidArgumentError(f"plant has (m, p)=({plant.m}, {plant.p}), data has ({m}, {p})")
    if not 0 <= s <= N:
        raise InvalidArgumentError(f"s must lie in [0, N={N}], got {s}")
    ref = np.asarray(reference, dtype=float)
    if ref.ndim == 1:
        ref = ref[:, None]
    if ref.shape[1] != p:
        raise InvalidArgumentError(f"reference has {ref.shape[1]} channels, plant has {p}")
    T_c = ref.shape[0] if T_c is None else int(T_c)
    block = min(s + 1, N)

    trace = ClosedLoopTrace(mode, s, T_ini, m, p, getattr(plant, "sample_period", 1.0))

    if bootstrap_inputs is None:
        rng = np.random.default_rng(seed)
        lim = _bootstrap_bounds(cfg, plant, m)
        mid, half = lim.mean(axis=1), 0.5 * (lim[:, 1] - lim[:, 0]) * bootstrap_scale
        boot = rng.uniform(mid - half, mid + half, size=(T_ini, m))
    else:
        boot = np.asarray(bootstrap_inputs, float).reshape(T_ini, m)
    u_hist, y_hist = [], []
    for k in range(T_ini):
        y = plant.step(boot[k])
        u_app = getattr(plant, "last_input", boot[k])
        trace.record(u_app, y, plant.last_true_output, None, 0.0, False, plant.last_saturated)
        u_hist.append(u_app)
        y_hist.append(y)
    win = InitialWindow.from_samples(u_hist, y_hist)

    state = _DeeneState(problem, safeguard_tol, trust_radius) if mode == "deene" else None
    working_set = None
    j = 0
    first = True
    try:
        while j < T_c:
            r_win = reference_window(ref, j, N)
            w = win.w_ini
            trace.windows.append((T_ini + j, w.copy()))
            fallback = False
            t0 = time.perf_counter()
            if state is None or state.nominal is None:
                sol = problem.solve(win, r_win, working_set=working_set)
                trace.n_solves += 1
                working_set = sol.active_set
                g = sol.g
                if state is not None:
                    state.adopt_solution(sol, w, r_win)
            else:
                res = state.correct(w, r_win)
                if res is None:
                    fallback = True
                    trace.n_fallbacks += 1
                    sol = problem.solve(win, r_win, working_set=state.nominal.active_set)
                    trace.n_solves += 1
                    g = sol.g
                    state.adopt_solution(sol, w, r_win)
                else:
                    g, mu = res
                    trace.n_corrections += 1
                    state.adopt_correction(g, mu, w, r_win)
            elapsed = time.perf_counter() - t0
            if not first:
                trace.loop_seconds.append(elapsed)

            if mode == "deene" and schedule == "per_step" and not first:
                n_apply = 1
            else:
                n_apply = block
            n_apply = min(n_apply, T_c - j)
            u_plan = (part.U_F @ g).reshape(N, m)
            for i in range(n_apply):
                y = plant.step(u_plan[i])
                u_app = getattr(plant, "last_input", u_plan[i])
                trace.record(
                    u_app, y, plant.last_true_output, ref[min(j + i, ref.shape[0] - 1)],
                    elapsed if i == 0 else 0.0, fallback and i == 0, plant.last_saturated,
                )
                win = win.shifted(u_app, y)
            j += n_apply
            first = False
    except DeeneError as exc:
        logger.error("controller aborted at control step %d: %s", j, exc)
        trace.aborted = True
        trace.error = str(exc)
    if state is not None:
        trace.n_gain_builds = state.n_gain_builds
    return trace
