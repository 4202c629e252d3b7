import numpy as np
import pytest

from deene.deepc import DeePCConfig, DeePCProblem
from deene.plants import LTIPlant
from deene.signal_data import IOTrajectory, build_mosaic_hankel

ACCEPTANCE_LINES: list[str] = []


def record(criterion: int, ok: bool, detail: str) -> None:
    """Log one acceptance verdict; printed again in the terminal summary."""
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {criterion}: {detail}"
    print(line)
    ACCEPTANCE_LINES.append(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)


def lti_trajectory(plant, T, rng, scale=1.0):
    U = rng.uniform(-scale, scale, size=(T, plant.m))
    Y = np.array([plant.step(u) for u in U])
    return IOTrajectory(U, Y)


def random_plant(rng, n=2, m=1, p=1, radius=0.8):
    return LTIPlant.random_stable(n, m, p, rng, radius=radius, x0=rng.normal(size=n))


def make_problem(seed=0, n=2, m=1, p=1, T_ini=3, N=4, T=60, output_bound=None, input_bound=None, **weights):
    """Small DeePC problem on noiseless LTI data plus a consistent window."""
    rng = np.random.default_rng(seed)
    plant = random_plant(rng, n, m, p)
    traj = lti_trajectory(plant, T, rng)
    part = build_mosaic_hankel([traj], T_ini, N)
    cfg = DeePCConfig(
        T_ini=T_ini,
        N=N,
        Q=weights.get("Q", 10.0),
        R=weights.get("R", 0.1),
        lambda_y=weights.get("lambda_y", 100.0),
        lambda_u=weights.get("lambda_u", 100.0),
        lambda_g=weights.get("lambda_g", 0.5),
        input_bounds=None if input_bound is None else [(-input_bound, input_bound)] * m,
        output_bounds=None if output_bound is None else [(-output_bound, output_bound)] * p,
    )
    tail = lti_trajectory(plant, T_ini, rng)
    w_ini = np.concatenate([tail.inputs.ravel(), tail.outputs.ravel()])
    return DeePCProblem(part, cfg), w_ini, rng


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
