"""Experiment orchestration: configuration, data collection, benchmarks, plot data.

Defaults describe the planar-arm benchmark: a 3-link arm (joint-velocity
inputs, pose outputs), 0.1 s sampling, joint rates within +-pi/6 rad/s,
position limits of +-0.9 m, ``T_ini = 35``, ``N = 20`` and the weights
``Q = 5e4 I``, ``R = 1e2 I``, ``lambda_y = lambda_u = 5e5``, ``lambda_g = 5e2``.
Fifty 100-sample trajectories give ``L = 2300`` Hankel columns; eleven
(``L = 506``) are enough for quick runs.
"""

from __future__ import annotations

import copy
import json
import logging
import os
import platform
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .controller import ClosedLoopTrace, read_trace_csv, run_controller
from .deepc import DeePCConfig, DeePCProblem
from .errors import ConfigurationError, DeeneError, InvalidArgumentError
from .plants import (
    Box,
    LTIPlant,
    PlanarArm,
    SeparatingFace,
    choose_face,
    letter_waypoints,
    make_reference,
    stack_references,
    unsafe_box_constraint,
)
from .signal_data import IOTrajectory, build_mosaic_hankel, check_persistency, save_trajectories_json

logger = logging.getLogger(__name__)

OUTPUT_DIR_ENV = "DEENE_OUTPUT_DIR"
RATE_LIMIT = float(np.pi / 6)

DEFAULT_CONFIG: dict[str, Any] = {
    "plant": {
        "kind": "planar_arm",
        "link_lengths": [0.5, 0.4, 0.3],
        "nominal_angles": [0.3, 0.9, 0.8],
        "sample_period": 0.1,
        "joint_rate_limits": [-RATE_LIMIT, RATE_LIMIT],
        "noise_std": 1e-3,
        "workspace": 0.9,
    },
    "deepc": {
        "T_ini": 35,
        "N": 20,
        "Q": 5e4,
        "R": 1e2,
        "lambda_y": 5e5,
        "lambda_u": 5e5,
        "lambda_g": 5e2,
        "input_bounds": "plant",
        "output_bounds": "workspace",
    },
    "data": {
        "n_trajectories": 50,
        "T_i": 100,
        "input_bounds": [[-0.3 * RATE_LIMIT, 0.3 * RATE_LIMIT]] * 3,
        "initial_spread": 0.05,
        "seed": 0,
        "max_rejection_rate": 0.9,
        "pe_extra_order": 10,
    },
    "controller": {
        "mode": "deene",
        "s": 0,
        "T_c": 300,
        "seed": 1,
        "schedule": "per_step",
        "bootstrap_scale": 0.3,
        "safeguard_tol": 1e-6,
        "trust_radius": None,
    },
    "reference": {"kind": "sinusoid", "amplitude": [0.05, 0.05], "frequency": [1.0, 2.0], "length": 300},
    "unsafe_box": None,
    "rmse_channels": [0, 1],
    "output_dir": "out",
}


def _merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for key, val in override.items():
        if isinstance(val, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], val)
        else:
            out[key] = copy.deepcopy(val)
    return out


@dataclass
class ExperimentConfig:
    """All settings of one experiment; see ``DEFAULT_CONFIG`` for the schema."""

    plant: dict = field(default_factory=lambda: copy.deepcopy(DEFAULT_CONFIG["plant"]))
    deepc: dict = field(default_factory=lambda: copy.deepcopy(DEFAULT_CONFIG["deepc"]))
    data: dict = field(default_factory=lambda: copy.deepcopy(DEFAULT_CONFIG["data"]))
    controller: dict = field(default_factory=lambda: copy.deepcopy(DEFAULT_CONFIG["controller"]))
    reference: dict = field(default_factory=lambda: copy.deepcopy(DEFAULT_CONFIG["reference"]))
    unsafe_box: dict | None = None
    rmse_channels: list | None = field(default_factory=lambda: [0, 1])
    output_dir: str = "out"

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        unknown = set(doc) - set(DEFAULT_CONFIG)
        if unknown:
            raise ConfigurationError(f"unknown configuration keys: {sorted(unknown)}")
        plant_kind = doc.get("plant", {}).get("kind", "planar_arm")
        base = copy.deepcopy(DEFAULT_CONFIG)
        if plant_kind != "planar_arm":
            # arm-specific defaults do not carry over to other plants
            base["plant"] = {"kind": plant_kind, "noise_std": 0.0, "sample_period": 1.0}
            base["data"]["input_bounds"] = None
            base["deepc"]["output_bounds"] = None
            base["deepc"]["input_bounds"] = None
            base["rmse_channels"] = None
            base["controller"]["bootstrap_scale"] = 1.0
        merged = _merge(base, doc)
        cfg = cls(**merged)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            doc = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigurationError(f"cannot read configuration {path}: {exc}") from exc
        return cls.from_dict(doc)

    def to_dict(self) -> dict:
        return asdict(self)

    def with_overrides(self, **sections) -> "ExperimentConfig":
        """Copy with sections merged, e.g. ``cfg.with_overrides(controller={"s": 20})``."""
        return ExperimentConfig.from_dict(_merge(self.to_dict(), sections))

    # -- derived objects ---------------------------------------------------

    def make_plant(self, seed=None, initial=None):
        spec = self.plant
        kind = spec.get("kind", "planar_arm")
        if kind == "planar_arm":
            return PlanarArm(
                spec["link_lengths"],
                spec["nominal_angles"] if initial is None else initial,
                spec.get("sample_period", 0.1),
                spec.get("joint_rate_limits", (-RATE_LIMIT, RATE_LIMIT)),
                spec.get("noise_std", 0.0),
                seed,
            )
        if kind == "lti":
            A, B, C, D = self._lti_matrices()
            x0 = spec.get("x0") if initial is None else initial
            return LTIPlant(A, B, C, D, x0=x0, noise_std=spec.get("noise_std", 0.0), seed=seed,
                            sample_period=spec.get("sample_period", 1.0), input_bounds=spec.get("input_limits"))
        raise ConfigurationError(f"unknown plant kind {kind!r}")

    def _lti_matrices(self):
        spec = self.plant
        if "random" in spec:
            r = spec["random"]
            plant = LTIPlant.random_stable(r["n"], r["m"], r["p"], np.random.default_rng(r.get("seed", 0)),
                                           radius=r.get("radius", 0.9))
            return plant.A, plant.B, plant.C, plant.D
        return spec["A"], spec["B"], spec["C"], spec.get("D")

    @property
    def dims(self) -> tuple[int, int]:
        plant = self.make_plant()
        return plant.m, plant.p

    def nominal_output(self) -> np.ndarray:
        return self.make_plant().output()

    def deepc_config(self, extra_halfspaces=()) -> DeePCConfig:
        d = self.deepc
        m, p = self.dims
        in_b = d.get("input_bounds")
        if in_b == "plant":
            in_b = self.make_plant().input_limits().tolist()
        out_b = d.get("output_bounds")
        if out_b == "workspace":
            ws = self.plant.get("workspace")
            out_b = None if ws is None else [[-ws, ws], [-ws, ws]] + [None] * (p - 2)
        return DeePCConfig(
            T_ini=int(d["T_ini"]),
            N=int(d["N"]),
            Q=np.asarray(d.get("Q", 1.0), float),
            R=np.asarray(d.get("R", 1.0), float),
            lambda_y=float(d.get("lambda_y", 1.0)),
            lambda_u=float(d.get("lambda_u", 1.0)),
            lambda_g=float(d.get("lambda_g", 1.0)),
            input_bounds=in_b,
            output_bounds=out_b,
            extra_halfspaces=tuple(extra_halfspaces),
        )

    def make_reference(self) -> np.ndarray:
        """Reference as a ``(length, p)`` array."""
        spec = dict(self.reference)
        kind = spec.pop("kind")
        length = int(spec.pop("length", self.controller.get("T_c", 300)))
        m, p = self.dims
        if self.plant.get("kind", "planar_arm") != "planar_arm":
            return make_reference(kind, spec, length).points
        y0 = self.nominal_output()
        heading = spec.pop("heading", None)
        heading = y0[2] if heading is None else float(heading)
        workspace = float(np.sum(self.plant["link_lengths"]))
        if kind == "sinusoid":
            spec.setdefault("offset", y0[:2].tolist())
            pos = make_reference("sinusoid", spec, length, workspace=workspace)
        elif kind == "polyline":
            if "text" in spec:
                wp = letter_waypoints(spec["text"], (0.0, 0.0), spec.get("height", 0.05), spec.get("spacing", 0.3))
                wp = wp - wp.mean(axis=0)
            else:
                wp = np.asarray(spec["waypoints"], float)
            if spec.get("relative", True):
                wp = wp + y0[:2]
            pos = make_reference("polyline", {"waypoints": wp}, length, workspace=workspace)
        elif kind == "setpoint":
            value = np.asarray(spec.get("value", y0[:2]), float)
            pos = make_reference("setpoint", {"value": value[:2]}, length)
            if value.size > 2:
                heading = float(value[2])
        else:
            raise ConfigurationError(f"unknown reference kind {kind!r}")
        hd = make_reference("setpoint", {"value": [heading]}, length)
        return stack_references(pos, hd).points

    def box(self) -> Box | None:
        if not self.unsafe_box:
            return None
        b = self.unsafe_box
        return Box(b["lo"], b["hi"], b.get("channels", (0, 1)))

    def safety_face(self, reference) -> SeparatingFace | None:
        box = self.box()
        if box is None:
            return None
        if "face" in self.unsafe_box:
            f = self.unsafe_box["face"]
            return SeparatingFace(int(f["channel"]), float(f["sign"]), float(f["bound"]))
        return choose_face(box, reference)

    # -- validation --------------------------------------------------------

    def validate(self) -> None:
        """Cross-field dimension checks; raises :class:`ConfigurationError`."""
        try:
            m, p = self.dims
            d = self.deepc
            T_ini, N = int(d["T_ini"]), int(d["N"])
            if T_ini < 1 or N < 1:
                raise ConfigurationError("T_ini and N must be positive")
            T_i = int(self.data["T_i"])
            if T_i <= T_ini + N and not self.data.get("allow_single_window", False):
                raise ConfigurationError(f"data.T_i={T_i} must exceed T_ini + N = {T_ini + N}")
            if int(self.data["n_trajectories"]) < 1:
                raise ConfigurationError("data.n_trajectories must be positive")
            bounds = self.data.get("input_bounds")
            if bounds is not None and np.asarray(bounds, float).shape != (m, 2):
                raise ConfigurationError(f"data.input_bounds must be {m} [lo, hi] pairs")
            cfg = self.deepc_config()
            cfg.Q_matrix(p)
            cfg.R_matrix(m)
            for name, bnds, n_ch in (("input_bounds", cfg.input_bounds, m), ("output_bounds", cfg.output_bounds, p)):
                if bnds is not None and len(bnds) != n_ch:
                    raise ConfigurationError(f"deepc.{name} must list {n_ch} channels, got {len(bnds)}")
            c = self.controller
            if c.get("mode", "deene") not in ("deepc", "deene"):
                raise ConfigurationError(f"controller.mode must be deepc or deene, got {c.get('mode')!r}")
            if not 0 <= int(c.get("s", 0)) <= N:
                raise ConfigurationError(f"controller.s must lie in [0, N={N}]")
            ref = self.make_reference()
            if ref.shape[1] != p:
                raise ConfigurationError(f"reference has {ref.shape[1]} channels, plant has {p}")
            if self.rmse_channels is not None and max(self.rmse_channels, default=-1) >= p:
                raise ConfigurationError("rmse_channels index out of range")
            box = self.box()
            if box is not None and max(box.channels) >= p:
                raise ConfigurationError("unsafe_box channel index out of range")
        except ConfigurationError:
            raise
        except (InvalidArgumentError, KeyError, TypeError, ValueError) as exc:
            raise ConfigurationError(f"invalid configuration: {exc}") from exc


# -- data collection ------------------------------------------------------------


def collect_data(config: ExperimentConfig) -> list[IOTrajectory]:
    """Run the data-collection campaign.

    Every trajectory starts from a random initial condition and is driven by
    i.i.d. uniform inputs within ``data.input_bounds``. For the arm, a
    trajectory whose end effector leaves the position workspace is discarded
    and redrawn.
    """
    spec = config.data
    rng = np.random.default_rng(spec.get("seed", 0))
    n_traj, T_i = int(spec["n_trajectories"]), int(spec["T_i"])
    m, p = config.dims
    bounds = spec.get("input_bounds")
    if bounds is None:
        bounds = config.make_plant().input_limits()
        bounds = np.where(np.isfinite(bounds), bounds, np.sign(bounds))
    bounds = np.asarray(bounds, float).reshape(m, 2)
    is_arm = config.plant.get("kind", "planar_arm") == "planar_arm"
    workspace = config.plant.get("workspace") if is_arm else None
    max_reject = float(spec.get("max_rejection_rate", 0.9))
    out: list[IOTrajectory] = []
    attempts = 0
    while len(out) < n_traj:
        attempts += 1
        if attempts > 20 and (attempts - len(out)) / attempts > max_reject:
            raise ConfigurationError(
                f"rejected {attempts - len(out)} of {attempts} trajectories; input bounds do not fit the workspace"
            )
        if is_arm:
            nominal = np.asarray(config.plant["nominal_angles"], float)
            spread = float(spec.get("initial_spread", 0.05))
            init = nominal + rng.uniform(-spread, spread, m)
        else:
            n = config.make_plant().n
            init = rng.uniform(-1.0, 1.0, n) * float(spec.get("initial_state_scale", 1.0))
        plant = config.make_plant(seed=int(rng.integers(2**31)), initial=init)
        U = rng.uniform(bounds[:, 0], bounds[:, 1], size=(T_i, m))
        Y = np.empty((T_i, p))
        left = False
        for k in range(T_i):
            Y[k] = plant.step(U[k])
            if workspace is not None and np.any(np.abs(plant.last_true_output[:2]) > workspace):
                left = True
                break
        if left:
            continue
        out.append(IOTrajectory(U, Y, config.plant.get("sample_period", 1.0)))
    logger.info("collected %d trajectories (%d attempts)", n_traj, attempts)
    return out


@dataclass
class Experiment:
    """Data, Hankel partition and assembled DeePC problem of one configuration."""

    config: ExperimentConfig
    trajectories: list
    reference: np.ndarray
    problem: DeePCProblem
    face: SeparatingFace | None = None

    @property
    def partition(self):
        return self.problem.partition


def prepare(config: ExperimentConfig, trajectories=None) -> Experiment:
    """Collect (or reuse) data and assemble the DeePC problem, safety rows included."""
    config.validate()
    if trajectories is None:
        trajectories = collect_data(config)
    d = config.deepc
    partition = build_mosaic_hankel(
        trajectories, int(d["T_ini"]), int(d["N"]), allow_single_window=config.data.get("allow_single_window", False)
    )
    order = int(d["T_ini"]) + int(d["N"]) + int(config.data.get("pe_extra_order", 10))
    try:
        pe = check_persistency([t.inputs for t in trajectories], order)
        if not pe.is_persistent:
            logger.warning("input data not persistently exciting of order %d (rank %d < %d)", order, pe.rank, pe.required_rank)
    except InvalidArgumentError:
        logger.warning("trajectories too short to test persistency of excitation of order %d", order)
    reference = config.make_reference()
    face = config.safety_face(reference)
    halfspaces = ()
    if face is not None:
        m, p = config.dims
        margin = float(config.unsafe_box.get("margin", 0.0))
        halfspaces = unsafe_box_constraint(config.box(), int(d["N"]), p, m, face=face, margin=margin)
    problem = DeePCProblem(partition, config.deepc_config(halfspaces))
    return Experiment(config, trajectories, reference, problem, face)


def run_experiment(exp: Experiment, mode: str | None = None, s: int | None = None) -> ClosedLoopTrace:
    c = exp.config.controller
    mode = c.get("mode", "deene") if mode is None else mode
    s = int(c.get("s", 0)) if s is None else int(s)
    tr = c.get("trust_radius")
    plant = exp.config.make_plant(seed=int(c.get("seed", 1)) + 7919)
    box = exp.config.box()
    if box is not None and box.contains(plant.last_true_output):
        raise ConfigurationError("initial output lies inside the unsafe box")
    return run_controller(
        plant,
        exp.problem,
        reference=exp.reference,
        s=s,
        T_c=int(c.get("T_c", exp.reference.shape[0])),
        mode=mode,
        schedule=c.get("schedule", "per_step"),
        seed=int(c.get("seed", 1)),
        bootstrap_scale=float(c.get("bootstrap_scale", 1.0)),
        safeguard_tol=float(c.get("safeguard_tol", 1e-6)),
        trust_radius=float("inf") if tr is None else float(tr),
    )


def safety_violations(trace: ClosedLoopTrace, face: SeparatingFace, tol: float = 1e-7) -> int:
    """Number of true outputs on the unsafe side of ``face`` by more than ``tol``."""
    _, _, Yt, _ = trace.arrays()
    return int(np.sum(face.value(Yt) > tol))


# -- benchmark ------------------------------------------------------------------


@dataclass
class BenchmarkRow:
    controller: str
    s: int
    rmse: float
    rmse_all: float
    mean_loop_seconds: float
    median_loop_seconds: float
    fallback_count: int
    control_steps: int
    failed: bool = False
    error: str | None = None
    safety_violations: int | None = None


@dataclass
class BenchmarkReport:
    """Comparison table; ``rmse`` uses ``rmse_channels`` (position only for the arm)."""

    rows: list
    rmse_channels: list | None
    environment: dict

    def row(self, controller: str, s: int) -> BenchmarkRow:
        for r in self.rows:
            if r.controller == controller and r.s == s:
                return r
        raise KeyError((controller, s))

    def to_dict(self) -> dict:
        return {
            "rmse_channels": self.rmse_channels,
            "environment": self.environment,
            "rows": [asdict(r) for r in self.rows],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "BenchmarkReport":
        return cls([BenchmarkRow(**r) for r in doc["rows"]], doc.get("rmse_channels"), doc.get("environment", {}))

    def save_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    def to_markdown(self) -> str:
        label = "RMSE (position)" if self.rmse_channels is not None else "RMSE"
        lines = [
            f"| Controller | {label} | RMSE (all channels) | Time per loop (median) | Time per loop (mean) | Fallbacks |",
            "|---|---|---|---|---|---|",
        ]
        for r in self.rows:
            name = f"{'DeePC' if r.controller == 'deepc' else 'DeeNE'} (s = {r.s})"
            if r.failed:
                lines.append(f"| {name} | failed | - | - | - | - |")
                continue
            lines.append(
                f"| {name} | {r.rmse:.4g} | {r.rmse_all:.4g} | {1e3 * r.median_loop_seconds:.3f} ms | "
                f"{1e3 * r.mean_loop_seconds:.3f} ms | {r.fallback_count} |"
            )
        return "\n".join(lines) + "\n"


def environment_fingerprint() -> dict:
    import scipy

    return {
        "machine": platform.machine(),
        "platform": platform.platform(),
        "processor": platform.processor(),
        "cpu_count": os.cpu_count(),
        "python": sys.version.split()[0],
        "numpy": np.__version__,
        "scipy": scipy.__version__,
    }


def run_benchmark(
    config: ExperimentConfig,
    s_values: Sequence[int],
    modes: Sequence[str] = ("deepc", "deene"),
    trajectories=None,
    experiment: Experiment | None = None,
    keep_traces: dict | None = None,
) -> BenchmarkReport:
    """Run every ``(mode, s)`` pair on the same data, reference and seeds.

    Rows are ordered by mode, then ``s``. A controller abort marks its row
    failed; the report is still produced. ``keep_traces``, if given, receives
    the traces keyed by ``(mode, s)``.
    """
    s_values = [int(s) for s in s_values]
    if not s_values:
        raise ConfigurationError("at least one s value is required")
    exp = experiment if experiment is not None else prepare(config, trajectories)
    channels = config.rmse_channels
    rows = []
    for mode in modes:
        for s in s_values:
            try:
                trace = run_experiment(exp, mode, s)
            except DeeneError as exc:
                rows.append(BenchmarkRow(mode, s, *([float("nan")] * 4), 0, 0, True, str(exc)))
                continue
            if keep_traces is not None:
                keep_traces[(mode, s)] = trace
            sm = trace.summary(channels)
            rows.append(
                BenchmarkRow(
                    controller=mode,
                    s=s,
                    rmse=sm.get("rmse_position", sm["rmse_all"]),
                    rmse_all=sm["rmse_all"],
                    mean_loop_seconds=sm["mean_loop_seconds"],
                    median_loop_seconds=sm["median_loop_seconds"],
                    fallback_count=sm["fallback_count"],
                    control_steps=sm["control_steps"],
                    failed=trace.aborted,
                    error=trace.error,
                    safety_violations=None if exp.face is None else safety_violations(trace, exp.face),
                )
            )
    return BenchmarkReport(rows, channels, environment_fingerprint())


# -- plot data ------------------------------------------------------------------


def _write_csv(path: Path, header, rows) -> None:
    import csv

    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) for v in row])


def emit_plot_data(source, path, box: Box | None = None, face: SeparatingFace | None = None) -> list[Path]:
    """Write the data series behind tracking and timing figures.

    ``source`` is a :class:`ClosedLoopTrace`, a trace CSV path, or a
    :class:`BenchmarkReport`. Traces produce ``inputs.csv`` (one column per
    input channel over the control samples), ``outputs.csv`` (outputs and
    references vs time), ``path.csv`` (planar path vs reference) and, for
    three or more outputs, ``orientation.csv``; a ``box`` adds ``box.json``.
    Reports produce ``report.md``.
    """
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create plot-data directory {out}: {exc}") from exc
    written: list[Path] = []
    if isinstance(source, BenchmarkReport):
        f = out / "report.md"
        f.write_text(source.to_markdown())
        return [f]
    if isinstance(source, ClosedLoopTrace):
        U, Y, Yt, R = source.arrays()
        dt = source.sample_period
        t = np.arange(U.shape[0]) * dt
    else:
        data = read_trace_csv(source)
        t, U, Y, R = data["t"], data["u"], data["y"], data["r"]
        Yt = data["y_true"] if data["y_true"].size else Y
    ctrl = ~np.isnan(R).any(axis=1)
    t, U, Y, Yt, R = t[ctrl], U[ctrl], Y[ctrl], Yt[ctrl], R[ctrl]
    m, p = U.shape[1], Y.shape[1]
    f = out / "inputs.csv"
    _write_csv(f, ["t"] + [f"u_{i + 1}" for i in range(m)], np.column_stack([t, U]))
    written.append(f)
    f = out / "outputs.csv"
    _write_csv(f, ["t"] + [f"y_{i + 1}" for i in range(p)] + [f"r_{i + 1}" for i in range(p)],
               np.column_stack([t, Yt, R]))
    written.append(f)
    if p >= 2:
        f = out / "path.csv"
        _write_csv(f, ["x", "y", "r_x", "r_y"], np.column_stack([Yt[:, :2], R[:, :2]]))
        written.append(f)
    if p >= 3:
        f = out / "orientation.csv"
        _write_csv(f, ["t"] + [f"heading_{i}" for i in range(1, p - 1)] + [f"r_heading_{i}" for i in range(1, p - 1)],
                   np.column_stack([t, Yt[:, 2:], R[:, 2:]]))
        written.append(f)
    if box is not None:
        f = out / "box.json"
        doc = {"lo": list(map(float, box.lo)), "hi": list(map(float, box.hi)), "channels": list(box.channels)}
        if face is not None:
            doc["face"] = {"channel": face.channel, "sign": face.sign, "bound": face.bound}
        f.write_text(json.dumps(doc, indent=2))
        written.append(f)
    return written


def output_path(path, is_dir: bool = False) -> Path:
    """Resolve an output path, honouring the output-directory environment override.

    With ``DEENE_OUTPUT_DIR`` set, a directory output becomes that directory
    and a file output keeps its name but moves into it.
    """
    override = os.environ.get(OUTPUT_DIR_ENV)
    p = Path(path)
    if not override:
        return p
    return Path(override) if is_dir else Path(override) / p.name


def save_dataset(path, trajectories) -> Path:
    path = Path(path)
    if path.suffix.lower() != ".json":
        path.mkdir(parents=True, exist_ok=True)
        path = path / "dataset.json"
    else:
        path.parent.mkdir(parents=True, exist_ok=True)
    save_trajectories_json(path, trajectories)
    return path
