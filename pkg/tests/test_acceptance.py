"""Acceptance criteria, one test each; every test prints a PASS/FAIL line."""

import time
from pathlib import Path

import numpy as np
import pytest

from conftest import lti_trajectory, make_problem, record
from deene.deepc import DeePCConfig, cost_gradient, cost_value, cross_derivatives
from deene.harness import ExperimentConfig, prepare, run_benchmark
from deene.neighboring import NominalPoint, build_correction, correct_nonoptimal, correct_optimal, recover_multipliers
from deene.plants import LTIPlant
from deene.qp_core import QuadraticProgram, solve_qp
from deene.signal_data import build_mosaic_hankel, check_persistency, span_residual

pytestmark = pytest.mark.acceptance

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def lagrangian(part, cfg, C, h, mu, g, w, r):
    return cost_value(part, cfg, g, w, r) + mu @ (C @ g - h)


def test_criterion_01_derivatives_match_finite_differences():
    t0 = time.perf_counter()
    rng = np.random.default_rng(101)
    plant = LTIPlant.random_stable(3, 2, 2, rng, radius=0.8)
    T_ini, N = 4, 5
    part = build_mosaic_hankel([lti_trajectory(plant, 100 + T_ini + N - 1, rng)], T_ini, N)
    assert part.L == 100
    cfg = DeePCConfig(T_ini, N, Q=[3.0, 1.0], R=0.5, lambda_y=20.0, lambda_u=10.0, lambda_g=0.7)
    H_an = None
    J_gw, J_gr = cross_derivatives(part, cfg)
    C = rng.normal(size=(3, part.L))
    h_c = rng.normal(size=3)
    worst = 0.0
    for _ in range(10):
        g = rng.normal(size=part.L)
        w = rng.normal(size=(2 + 2) * T_ini)
        r = rng.normal(size=2 * N)
        mu = rng.uniform(0.0, 2.0, 3)
        F = lambda gg, ww=w, rr=r: lagrangian(part, cfg, C, h_c, mu, gg, ww, rr)  # noqa: E731
        # Jbar_g: full central-difference gradient
        hstep = 1e-3
        fd = np.array([(F(g + hstep * e) - F(g - hstep * e)) / (2 * hstep) for e in np.eye(part.L)])
        an = cost_gradient(part, cfg, g, w, r) + C.T @ mu
        worst = max(worst, np.linalg.norm(fd - an) / np.linalg.norm(an))
        if H_an is None:
            from deene.deepc import cost_hessian

            H_an = cost_hessian(part, cfg)
        # second derivatives along random direction pairs
        for _ in range(3):
            v = rng.normal(size=part.L)
            for M, size, which in ((H_an, part.L, "g"), (J_gw, w.size, "w"), (J_gr, r.size, "r")):
                d = rng.normal(size=size)
                s = 1e-2

                def shifted(a, b):
                    gg = g + a * v
                    if which == "g":
                        return F(gg + b * d)
                    if which == "w":
                        return F(gg, w + b * d, r)
                    return F(gg, w, r + b * d)

                fd2 = (shifted(s, s) - shifted(s, -s) - shifted(-s, s) + shifted(-s, -s)) / (4 * s * s)
                an2 = v @ M @ d
                worst = max(worst, abs(fd2 - an2) / abs(an2))
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-6 and elapsed < 1.0
    record(1, ok, f"max relative error {worst:.2e} (<= 1e-6), runtime {elapsed:.2f} s (< 1 s) at L={part.L}")
    assert ok


def test_criterion_02_fresh_trajectories_lie_in_hankel_span():
    t0 = time.perf_counter()
    rng = np.random.default_rng(202)
    plant = LTIPlant.random_stable(4, 2, 2, rng, radius=0.9, x0=rng.normal(size=4))
    data = lti_trajectory(plant, 400, rng)
    T_ini, N = 8, 6
    pe = check_persistency(data.inputs, T_ini + N + 4)
    part = build_mosaic_hankel([data], T_ini, N)
    worst = 0.0
    for _ in range(20):
        fresh = LTIPlant(plant.A, plant.B, plant.C, plant.D, x0=rng.normal(size=4))
        traj = lti_trajectory(fresh, T_ini + N, rng)
        worst = max(worst, span_residual(part, traj.inputs, traj.outputs))
    elapsed = time.perf_counter() - t0
    ok = pe.is_persistent and worst <= 1e-8 and elapsed < 5.0
    record(2, ok, f"PE order {T_ini + N + 4}: {pe.is_persistent}, max span residual {worst:.2e} (<= 1e-8), "
                  f"runtime {elapsed:.2f} s (< 5 s)")
    assert ok


def test_criterion_03_correction_matches_resolve_on_fixed_active_set():
    prob, w, rng = make_problem(seed=303, n=3, m=2, p=2, T_ini=4, N=6, T=80, output_bound=0.4, input_bound=1.5)
    r = 0.8 * np.ones(2 * prob.config.N)
    sol = prob.solve(w, r)
    assert len(sol.active_set) > 0
    C = prob.G[list(sol.active_set)]
    gains = build_correction(prob.hessian, C, prob.J_gw, prob.J_gr, sol.active_set)
    nominal = NominalPoint(sol.g, w, r, sol.mu, sol.active_set, is_optimal=True)
    errs, tries = [], 0
    while len(errs) < 50 and tries < 1000:
        tries += 1
        dw = 1e-2 * rng.normal(size=w.size)
        dr = 1e-2 * rng.normal(size=r.size)
        exact = prob.solve(w + dw, r + dr)
        if exact.active_set != sol.active_set:
            continue  # active set changed; the correction is only exact on a fixed set
        g = sol.g + correct_optimal(nominal, gains, dw, dr)
        errs.append(np.abs(g - exact.g).max())
    worst = max(errs) if errs else np.inf
    ok = len(errs) == 50 and worst <= 1e-8
    record(3, ok, f"{len(errs)} perturbations with unchanged active set ({len(sol.active_set)} rows), "
                  f"max |g0 + dg - g_exact| {worst:.2e} (<= 1e-8)")
    assert ok


def test_criterion_04_nonoptimal_form_equals_optimal_form():
    prob, w, rng = make_problem(seed=404, n=3, m=2, p=2, T_ini=4, N=6, T=80, output_bound=0.4, input_bound=1.5)
    r = 0.8 * np.ones(2 * prob.config.N)
    sol = prob.solve(w, r)
    C = prob.G[list(sol.active_set)]
    gains = build_correction(prob.hessian, C, prob.J_gw, prob.J_gr, sol.active_set)
    nominal = NominalPoint(sol.g, w, r, sol.mu, sol.active_set, is_optimal=True)
    J_g = prob.gradient(sol.g, w, r)
    worst = 0.0
    for _ in range(10):
        dw, dr = 0.1 * rng.normal(size=w.size), 0.1 * rng.normal(size=r.size)
        a = correct_optimal(nominal, gains, dw, dr)
        b = correct_nonoptimal(nominal, gains, dw, dr, J_g)
        worst = max(worst, np.abs(a - b).max())
    ok = worst <= 1e-10
    record(4, ok, f"max |dg_nonoptimal - dg_optimal| {worst:.2e} (<= 1e-10) over 10 perturbations")
    assert ok


def test_criterion_05_recovered_multipliers_match_qp_duals():
    rng = np.random.default_rng(505)
    worst, n_active = 0.0, []
    for k in range(20):
        prob, w, _ = make_problem(seed=500 + k, n=3, m=2, p=2, T_ini=4, N=6, T=80,
                                  output_bound=rng.uniform(0.3, 0.6), input_bound=1.5)
        r = rng.uniform(0.6, 1.0) * np.ones(2 * prob.config.N)
        qp = QuadraticProgram(prob.hessian, prob.linear_term(w, r), prob.G, prob.h)
        sol = solve_qp(qp)
        ws = list(sol.working_set)
        assert ws
        mu = recover_multipliers(prob.gradient(sol.x, w, r), prob.G[ws])
        worst = max(worst, np.abs(mu - sol.mu[ws]).max() / np.abs(sol.mu[ws]).max())
        n_active.append(len(ws))
    ok = worst <= 1e-6
    record(5, ok, f"20 instances ({min(n_active)}-{max(n_active)} active rows), "
                  f"max relative multiplier error {worst:.2e} (<= 1e-6)")
    assert ok


@pytest.fixture(scope="module")
def arm_benchmark():
    cfg = ExperimentConfig.load(CONFIGS / "arm_quick.json")
    t0 = time.perf_counter()
    exp = prepare(cfg)
    t_prep = time.perf_counter() - t0
    times = {}
    reports = {}
    for s in (0, 20):
        t1 = time.perf_counter()
        reports[s] = run_benchmark(cfg, [s], experiment=exp)
        times[s] = t_prep + time.perf_counter() - t1
    return cfg, exp, reports, times


def test_criterion_06_closed_loop_parity_at_s0(arm_benchmark):
    cfg, exp, reports, times = arm_benchmark
    rep = reports[0]
    a, b = rep.row("deepc", 0), rep.row("deene", 0)
    gap = abs(b.rmse - a.rmse) / a.rmse
    ok = not (a.failed or b.failed) and gap <= 0.05 and times[0] < 120.0
    record(6, ok, f"L={exp.partition.L}, T_c={a.control_steps}: RMSE deepc {100 * a.rmse:.3f} cm, "
                  f"deene {100 * b.rmse:.3f} cm, gap {100 * gap:.2f}% (<= 5%), runtime {times[0]:.1f} s (< 120 s)")
    assert ok


def test_criterion_07_open_loop_degradation_ordering(arm_benchmark):
    cfg, exp, reports, times = arm_benchmark
    rep = reports[20]
    a, b = rep.row("deepc", 20), rep.row("deene", 20)
    ratio = a.rmse / b.rmse
    ok = not (a.failed or b.failed) and a.rmse > b.rmse and ratio >= 1.2
    record(7, ok, f"s=20: RMSE deepc {100 * a.rmse:.3f} cm > deene {100 * b.rmse:.3f} cm, ratio {ratio:.2f} (>= 1.2)")
    assert ok


def test_criterion_08_speedup(arm_benchmark):
    cfg, exp, reports, times = arm_benchmark
    rep = reports[0]
    a, b = rep.row("deepc", 0), rep.row("deene", 0)
    ratio = a.median_loop_seconds / b.median_loop_seconds
    ok = exp.partition.L >= 500 and exp.problem.config.N == 20 and ratio >= 2.0 and times[0] < 300.0
    record(8, ok, f"L={exp.partition.L}, N={exp.problem.config.N}, s=0: median loop deepc "
                  f"{1e3 * a.median_loop_seconds:.3f} ms, deene {1e3 * b.median_loop_seconds:.3f} ms, "
                  f"ratio {ratio:.1f} (>= 2), timing run {times[0]:.1f} s (< 300 s)")
    assert ok


def test_criterion_09_unsafe_box(tmp_path):
    cfg = ExperimentConfig.load(CONFIGS / "arm_safety.json")
    exp = prepare(cfg)
    traces = {}
    rep = run_benchmark(cfg, [0], experiment=exp, keep_traces=traces)
    face = exp.face
    details, ok = [], True
    for mode in ("deepc", "deene"):
        row = rep.row(mode, 0)
        _, _, Yt, _ = traces[(mode, 0)].arrays()
        # pointwise scan of every true output against the emitted halfspace
        viol = int(np.sum(face.sign * Yt[:, face.channel] - face.bound > 1e-7))
        worst = float((face.sign * Yt[:, face.channel] - face.bound).max())
        ok &= not row.failed and viol == 0
        details.append(f"{mode}: {viol} violations (closest {1e3 * -worst:.2f} mm clear), "
                       f"RMSE {100 * row.rmse:.3f} cm, {row.fallback_count} fallbacks")
    a, b = rep.row("deepc", 0).rmse, rep.row("deene", 0).rmse
    gap = abs(a - b) / a
    ok &= gap <= 0.05
    record(9, ok, "; ".join(details) + f"; RMSE gap {100 * gap:.2f}% (<= 5%)")
    assert ok


def test_criterion_10_determinism():
    cfg = ExperimentConfig.load(CONFIGS / "arm_quick.json")
    runs = [run_benchmark(cfg, [0, 20]) for _ in range(2)]
    first = [(r.controller, r.s, r.rmse, r.rmse_all, r.fallback_count) for r in runs[0].rows]
    second = [(r.controller, r.s, r.rmse, r.rmse_all, r.fallback_count) for r in runs[1].rows]
    ok = first == second
    record(10, ok, f"two seeded end-to-end runs ({len(first)} rows) give identical RMSE values: {ok}")
    assert ok
