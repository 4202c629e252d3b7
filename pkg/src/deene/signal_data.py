"""Input/output data records and (mosaic-)Hankel matrices.

Samples are stored time-major: an ``(T, d)`` array holds ``T`` samples of a
``d``-channel signal. A depth-``k`` Hankel matrix stacks ``k`` consecutive
samples per column, channels of one sample contiguous, oldest sample on top.
The stacked initial window used by the controller follows the same layout.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import InvalidArgumentError

#: Relative singular-value cutoff used when estimating Hankel rank.
PE_RTOL = 1e-10


def _as_samples(samples, name: str = "samples") -> np.ndarray:
    arr = np.asarray(samples, dtype=float)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2:
        raise InvalidArgumentError(f"{name} must be a sequence of vectors, got shape {arr.shape}")
    return arr


@dataclass(frozen=True)
class IOTrajectory:
    """One experiment: ``T`` paired input and output samples.

    ``inputs[k]`` is the input applied at step ``k`` and ``outputs[k]`` the
    output measured at the same step (before the input takes effect for a
    strictly proper plant).
    """

    inputs: np.ndarray
    outputs: np.ndarray
    sample_period: float = 1.0

    def __post_init__(self):
        u = _as_samples(self.inputs, "inputs")
        y = _as_samples(self.outputs, "outputs")
        if u.shape[0] != y.shape[0]:
            raise InvalidArgumentError(
                f"inputs and outputs must have equal length, got {u.shape[0]} and {y.shape[0]}"
            )
        if u.shape[0] < 1:
            raise InvalidArgumentError("trajectory must contain at least one sample")
        if not (np.all(np.isfinite(u)) and np.all(np.isfinite(y))):
            raise InvalidArgumentError("trajectory contains non-finite samples")
        if not self.sample_period > 0:
            raise InvalidArgumentError(f"sample_period must be positive, got {self.sample_period}")
        u.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "inputs", u)
        object.__setattr__(self, "outputs", y)

    @property
    def length(self) -> int:
        return self.inputs.shape[0]

    @property
    def m(self) -> int:
        return self.inputs.shape[1]

    @property
    def p(self) -> int:
        return self.outputs.shape[1]


@dataclass(frozen=True)
class HankelPartition:
    """Past/future blocks of the input and output Hankel matrices.

    Attributes:
        U_P: ``(m*T_ini, L)`` past inputs.
        Y_P: ``(p*T_ini, L)`` past outputs.
        U_F: ``(m*N, L)`` future inputs.
        Y_F: ``(p*N, L)`` future outputs.
    """

    U_P: np.ndarray
    Y_P: np.ndarray
    U_F: np.ndarray
    Y_F: np.ndarray
    m: int
    p: int
    T_ini: int
    N: int
    column_sources: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        L = self.U_P.shape[1]
        expected = {
            "U_P": (self.m * self.T_ini, L),
            "Y_P": (self.p * self.T_ini, L),
            "U_F": (self.m * self.N, L),
            "Y_F": (self.p * self.N, L),
        }
        for name, shape in expected.items():
            block = getattr(self, name)
            if block.shape != shape:
                raise InvalidArgumentError(f"{name} has shape {block.shape}, expected {shape}")
            block.setflags(write=False)
        if self.column_sources is None:
            object.__setattr__(self, "column_sources", np.zeros(L, dtype=int))

    @property
    def L(self) -> int:
        return self.U_P.shape[1]

    @property
    def stacked(self) -> np.ndarray:
        """``[U_P; Y_P; U_F; Y_F]`` as one matrix."""
        return np.vstack([self.U_P, self.Y_P, self.U_F, self.Y_F])


def build_hankel(samples, depth: int) -> np.ndarray:
    """Depth-``depth`` block Hankel matrix of a ``(T, d)`` sample sequence.

    Block ``(i, j)`` equals ``samples[i + j]``; the result has ``T - depth + 1``
    columns.

    >>> build_hankel([1, 2, 3, 4], 2)
    array([[1., 2., 3.],
           [2., 3., 4.]])
    """
    X = _as_samples(samples)
    T, d = X.shape
    if depth < 1:
        raise InvalidArgumentError(f"depth must be positive, got {depth}")
    if T < depth:
        raise InvalidArgumentError(
            f"sequence of length {T} is too short for depth {depth}; need at least {depth} samples"
        )
    # windows: (T-depth+1, d, depth) -> columns of depth*d, time-major
    windows = sliding_window_view(X, depth, axis=0)
    return np.ascontiguousarray(windows.transpose(2, 1, 0).reshape(depth * d, T - depth + 1))


def build_mosaic_hankel(
    trajectories: Sequence[IOTrajectory],
    T_ini: int,
    N: int,
    allow_single_window: bool = False,
) -> HankelPartition:
    """Concatenate per-trajectory Hankel matrices and split them into past/future.

    Each trajectory must be strictly longer than ``T_ini + N``. Setting
    ``allow_single_window`` also admits trajectories of length exactly
    ``T_ini + N`` (one column each); this is off by default.
    """
    if not trajectories:
        raise InvalidArgumentError("at least one trajectory is required")
    if T_ini < 1 or N < 1:
        raise InvalidArgumentError(f"T_ini and N must be positive, got T_ini={T_ini}, N={N}")
    depth = T_ini + N
    m, p = trajectories[0].m, trajectories[0].p
    hu, hy, sources = [], [], []
    for idx, traj in enumerate(trajectories):
        if (traj.m, traj.p) != (m, p):
            raise InvalidArgumentError(
                f"trajectory {idx} has (m, p)=({traj.m}, {traj.p}), expected ({m}, {p})"
            )
        too_short = traj.length < depth if allow_single_window else traj.length <= depth
        if too_short:
            raise InvalidArgumentError(
                f"trajectory {idx} has {traj.length} samples; need more than T_ini + N = {depth}"
            )
        hu.append(build_hankel(traj.inputs, depth))
        hy.append(build_hankel(traj.outputs, depth))
        sources.append(np.full(hu[-1].shape[1], idx, dtype=int))
    Hu = np.hstack(hu)
    Hy = np.hstack(hy)
    return HankelPartition(
        U_P=Hu[: m * T_ini].copy(),
        Y_P=Hy[: p * T_ini].copy(),
        U_F=Hu[m * T_ini :].copy(),
        Y_F=Hy[p * T_ini :].copy(),
        m=m,
        p=p,
        T_ini=T_ini,
        N=N,
        column_sources=np.concatenate(sources),
    )


class PersistencyResult(NamedTuple):
    is_persistent: bool
    rank: int
    required_rank: int


def hankel_rank(H: np.ndarray, rtol: float = PE_RTOL) -> int:
    """Number of singular values above ``rtol * sigma_max``."""
    s = np.linalg.svd(H, compute_uv=False)
    if s.size == 0 or s[0] == 0.0:
        return 0
    return int(np.sum(s > rtol * s[0]))


def check_persistency(inputs, order: int, rtol: float = PE_RTOL) -> PersistencyResult:
    """Check whether an input sequence is persistently exciting of ``order``.

    ``inputs`` is either one ``(T, m)`` sequence or a list of them; a list is
    treated as mosaic data (per-sequence Hankel matrices side by side).
    The sequence is persistently exciting when the depth-``order`` Hankel
    matrix has full row rank ``m * order``.
    """
    if isinstance(inputs, (list, tuple)) and inputs and np.ndim(inputs[0]) == 2:
        blocks = [build_hankel(seq, order) for seq in inputs]
        H = np.hstack(blocks)
    else:
        H = build_hankel(inputs, order)
    required = H.shape[0]
    rank = hankel_rank(H, rtol)
    return PersistencyResult(rank == required, rank, required)


def span_residual(partition: HankelPartition, u_window, y_window) -> float:
    """Least-squares residual of a length-``T_ini + N`` trajectory against the data span.

    Returns ``min_g ||H g - w|| / max(||w||, tiny)`` with ``H`` the stacked
    partition and ``w`` the window stacked in the same layout.
    """
    T_ini, N, m, p = partition.T_ini, partition.N, partition.m, partition.p
    u = _as_samples(u_window, "u_window")
    y = _as_samples(y_window, "y_window")
    if u.shape != (T_ini + N, m) or y.shape != (T_ini + N, p):
        raise InvalidArgumentError(
            f"window must have {T_ini + N} samples of (m, p)=({m}, {p}); got {u.shape}, {y.shape}"
        )
    w = np.concatenate([
        u[:T_ini].ravel(), y[:T_ini].ravel(), u[T_ini:].ravel(), y[T_ini:].ravel()
    ])
    H = partition.stacked
    g, *_ = np.linalg.lstsq(H, w, rcond=None)
    return float(np.linalg.norm(H @ g - w) / max(np.linalg.norm(w), np.finfo(float).tiny))


# -- file formats ---------------------------------------------------------------


def save_trajectories_json(path, trajectories: Sequence[IOTrajectory]) -> None:
    if not trajectories:
        raise InvalidArgumentError("nothing to save")
    doc = {
        "m": trajectories[0].m,
        "p": trajectories[0].p,
        "sample_period": trajectories[0].sample_period,
        "trajectories": [
            {"u": t.inputs.tolist(), "y": t.outputs.tolist()} for t in trajectories
        ],
    }
    Path(path).write_text(json.dumps(doc))


def load_trajectories_json(path) -> list[IOTrajectory]:
    doc = json.loads(Path(path).read_text())
    m, p = int(doc["m"]), int(doc["p"])
    ts = float(doc.get("sample_period", 1.0))
    out = []
    for idx, item in enumerate(doc["trajectories"]):
        traj = IOTrajectory(np.asarray(item["u"], float), np.asarray(item["y"], float), ts)
        if (traj.m, traj.p) != (m, p):
            raise InvalidArgumentError(
                f"trajectory {idx} in {path} has (m, p)=({traj.m}, {traj.p}), header says ({m}, {p})"
            )
        out.append(traj)
    return out


def save_trajectory_csv(path, trajectory: IOTrajectory) -> None:
    header = [f"u_{i + 1}" for i in range(trajectory.m)] + [f"y_{i + 1}" for i in range(trajectory.p)]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for u, y in zip(trajectory.inputs, trajectory.outputs):
            writer.writerow([repr(float(v)) for v in np.concatenate([u, y])])


def load_trajectory_csv(path, sample_period: float = 1.0) -> IOTrajectory:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [[float(v) for v in row] for row in reader if row]
    u_cols = [i for i, name in enumerate(header) if name.startswith("u_")]
    y_cols = [i for i, name in enumerate(header) if name.startswith("y_")]
    if not u_cols or not y_cols:
        raise InvalidArgumentError(f"{path}: header needs u_* and y_* columns, got {header}")
    data = np.asarray(rows, dtype=float).reshape(len(rows), len(header))
    return IOTrajectory(data[:, u_cols], data[:, y_cols], sample_period)


def load_trajectories(path, sample_period: float = 1.0) -> list[IOTrajectory]:
    """Load a dataset from a JSON document, a CSV file, or a directory of CSV files."""
    path = Path(path)
    if path.is_dir():
        files = sorted(path.glob("*.csv"))
        if not files:
            json_files = sorted(path.glob("*.json"))
            if len(json_files) == 1:
                return load_trajectories_json(json_files[0])
            raise InvalidArgumentError(f"no trajectory files found in {path}")
        return [load_trajectory_csv(f, sample_period) for f in files]
    if path.suffix.lower() == ".csv":
        return [load_trajectory_csv(path, sample_period)]
    return load_trajectories_json(path)
