import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from conftest import lti_trajectory, random_plant
from deene.errors import InvalidArgumentError
from deene.signal_data import (
    IOTrajectory,
    build_hankel,
    build_mosaic_hankel,
    check_persistency,
    hankel_rank,
    load_trajectories,
    load_trajectories_json,
    load_trajectory_csv,
    save_trajectories_json,
    save_trajectory_csv,
    span_residual,
)


def loop_hankel(w, depth):
    T, d = w.shape
    H = np.zeros((depth * d, T - depth + 1))
    for j in range(T - depth + 1):
        for i in range(depth):
            for c in range(d):
                H[i * d + c, j] = w[i + j, c]
    return H


def test_scalar_hankel_columns_are_sliding_windows():
    H = build_hankel(np.arange(1.0, 7.0), 3)
    np.testing.assert_array_equal(H, [[1, 2, 3, 4], [2, 3, 4, 5], [3, 4, 5, 6]])


@settings(max_examples=40, deadline=None)
@given(
    w=arrays(np.float64, st.tuples(st.integers(1, 12), st.integers(1, 3)), elements=st.floats(-5, 5)),
    depth=st.integers(1, 6),
)
def test_hankel_matches_loop_construction(w, depth):
    if w.shape[0] < depth:
        with pytest.raises(InvalidArgumentError, match="at least"):
            build_hankel(w, depth)
        return
    np.testing.assert_array_equal(build_hankel(w, depth), loop_hankel(w, depth))


def test_short_sequence_error_names_minimum():
    with pytest.raises(InvalidArgumentError, match="need at least 5"):
        build_hankel(np.zeros((4, 2)), 5)


def test_mosaic_partition_blocks():
    rng = np.random.default_rng(0)
    trajs = [IOTrajectory(rng.normal(size=(T, 2)), rng.normal(size=(T, 1))) for T in (12, 15)]
    part = build_mosaic_hankel(trajs, T_ini=2, N=3)
    assert part.L == (12 - 5 + 1) + (15 - 5 + 1)
    Hu = np.hstack([loop_hankel(t.inputs, 5) for t in trajs])
    Hy = np.hstack([loop_hankel(t.outputs, 5) for t in trajs])
    np.testing.assert_array_equal(part.U_P, Hu[:4])
    np.testing.assert_array_equal(part.U_F, Hu[4:])
    np.testing.assert_array_equal(part.Y_P, Hy[:2])
    np.testing.assert_array_equal(part.Y_F, Hy[2:])
    np.testing.assert_array_equal(part.column_sources, [0] * 8 + [1] * 11)


def test_mosaic_column_count_for_fifty_trajectories():
    rng = np.random.default_rng(1)
    trajs = [IOTrajectory(rng.normal(size=(100, 3)), rng.normal(size=(100, 3))) for _ in range(50)]
    assert build_mosaic_hankel(trajs, 35, 20).L == 2300


def test_minimal_dataset_has_two_columns():
    traj = IOTrajectory(np.ones((8, 1)), np.ones((8, 1)))
    assert build_mosaic_hankel([traj], 3, 4).L == 2


def test_mosaic_error_names_short_trajectory():
    trajs = [IOTrajectory(np.ones((10, 1)), np.ones((10, 1))), IOTrajectory(np.ones((7, 1)), np.ones((7, 1)))]
    with pytest.raises(InvalidArgumentError, match="trajectory 1"):
        build_mosaic_hankel(trajs, 3, 4)
    single = build_mosaic_hankel(trajs, 3, 4, allow_single_window=True)
    assert single.L == 4 + 1


def test_partition_blocks_are_read_only():
    traj = IOTrajectory(np.ones((10, 1)), np.ones((10, 1)))
    part = build_mosaic_hankel([traj], 2, 2)
    with pytest.raises(ValueError):
        part.U_P[0, 0] = 3.0


def test_persistency_of_random_and_constant_inputs():
    rng = np.random.default_rng(2)
    res = check_persistency(rng.uniform(-1, 1, size=(60, 2)), 10)
    assert res.is_persistent and res.rank == res.required_rank == 20
    const = check_persistency(np.ones((60, 1)), 3)
    assert not const.is_persistent and const.rank == 1
    # a sinusoid spans only two directions
    sine = np.sin(0.3 * np.arange(80))
    assert check_persistency(sine, 5).rank == 2


def test_mosaic_persistency_combines_segments():
    rng = np.random.default_rng(3)
    # each segment alone has too few columns for order 8
    segs = [rng.normal(size=(10, 1)) for _ in range(4)]
    assert not check_persistency(segs[0], 8).is_persistent
    assert check_persistency(segs, 8).is_persistent


def test_hankel_rank_of_zero_matrix():
    assert hankel_rank(np.zeros((3, 4))) == 0


def test_fresh_lti_trajectory_lies_in_data_span():
    rng = np.random.default_rng(4)
    plant = random_plant(rng, n=3, m=1, p=2)
    part = build_mosaic_hankel([lti_trajectory(plant, 150, rng)], 4, 5)
    fresh = lti_trajectory(plant, 9, rng)
    assert span_residual(part, fresh.inputs, fresh.outputs) < 1e-9
    fake = IOTrajectory(fresh.inputs, rng.normal(size=fresh.outputs.shape))
    assert span_residual(part, fake.inputs, fake.outputs) > 1e-3


def test_span_residual_rejects_wrong_window():
    traj = IOTrajectory(np.ones((20, 1)), np.ones((20, 1)))
    part = build_mosaic_hankel([traj], 2, 3)
    with pytest.raises(InvalidArgumentError, match="5 samples"):
        span_residual(part, np.ones((4, 1)), np.ones((4, 1)))


def test_trajectory_validation():
    with pytest.raises(InvalidArgumentError):
        IOTrajectory(np.ones((5, 1)), np.ones((4, 1)))
    with pytest.raises(InvalidArgumentError):
        IOTrajectory(np.array([[np.nan]]), np.ones((1, 1)))


def test_json_and_csv_round_trip(tmp_path):
    rng = np.random.default_rng(5)
    trajs = [IOTrajectory(rng.normal(size=(6, 2)), rng.normal(size=(6, 3)), 0.1) for _ in range(3)]
    save_trajectories_json(tmp_path / "d.json", trajs)
    back = load_trajectories_json(tmp_path / "d.json")
    assert len(back) == 3
    for a, b in zip(trajs, back):
        np.testing.assert_array_equal(a.inputs, b.inputs)
        np.testing.assert_array_equal(a.outputs, b.outputs)
        assert b.sample_period == 0.1
    assert len(load_trajectories(tmp_path / "d.json")) == 3

    csv_dir = tmp_path / "csv"
    csv_dir.mkdir()
    for i, t in enumerate(trajs):
        save_trajectory_csv(csv_dir / f"t{i}.csv", t)
    again = load_trajectories(csv_dir)
    np.testing.assert_array_equal(again[2].outputs, trajs[2].outputs)
    single = load_trajectory_csv(csv_dir / "t0.csv")
    assert (single.m, single.p) == (2, 3)


def test_json_header_mismatch(tmp_path):
    doc = {"m": 1, "p": 1, "trajectories": [{"u": [[1.0, 2.0]], "y": [[0.0]]}]}
    (tmp_path / "bad.json").write_text(json.dumps(doc))
    with pytest.raises(InvalidArgumentError, match="trajectory 0"):
        load_trajectories_json(tmp_path / "bad.json")
