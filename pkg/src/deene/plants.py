"""Simulation plants, reference generators and unsafe-region constraints.

Two plants are provided: a discrete LTI system, used where the data
representation must be exact, and a velocity-controlled planar arm whose
output is the end-effector pose ``(x, y, heading)``. Both follow the same
stepping convention: ``step(u)`` returns the output at the current sample,
then advances the state with ``u``.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass
from typing import Protocol, Sequence

import numpy as np

from .deepc import Halfspace
from .errors import InvalidArgumentError

logger = logging.getLogger(__name__)


class Plant(Protocol):
    m: int
    p: int
    sample_period: float
    last_true_output: np.ndarray
    last_saturated: bool

    def step(self, u) -> np.ndarray: ...

    def input_limits(self) -> np.ndarray: ...


class LTIPlant:
    """``x+ = A x + B u``, ``y = C x + D u`` with optional output noise."""

    def __init__(self, A, B, C, D=None, x0=None, noise_std=0.0, seed=None, sample_period: float = 1.0,
                 stable: bool = False, input_bounds=None):
        self.A = np.atleast_2d(np.asarray(A, dtype=float))
        self.B = np.asarray(B, dtype=float).reshape(self.A.shape[0], -1)
        self.C = np.asarray(C, dtype=float).reshape(-1, self.A.shape[0])
        n, m, p = self.A.shape[0], self.B.shape[1], self.C.shape[0]
        if self.A.shape != (n, n):
            raise InvalidArgumentError(f"A must be square, got {self.A.shape}")
        self.D = np.zeros((p, m)) if D is None else np.asarray(D, dtype=float).reshape(p, m)
        self.n, self.m, self.p = n, m, p
        self.x = np.zeros(n) if x0 is None else np.asarray(x0, dtype=float).reshape(n).copy()
        self.noise_std = np.broadcast_to(np.asarray(noise_std, dtype=float), (p,)).copy()
        self.rng = np.random.default_rng(seed)
        self.sample_period = sample_period
        if stable and self.spectral_radius() >= 1.0:
            raise InvalidArgumentError(f"plant tagged stable has spectral radius {self.spectral_radius():.4f}")
        self._input_bounds = (
            np.tile([-np.inf, np.inf], (m, 1)) if input_bounds is None else np.asarray(input_bounds, float).reshape(m, 2)
        )
        self.last_true_output = self.C @ self.x
        self.last_saturated = False

    @classmethod
    def random_stable(cls, n: int, m: int, p: int, rng: np.random.Generator, radius: float = 0.9, **kwargs):
        """Random plant with spectral radius ``radius`` (dense ``A``, ``D = 0``)."""
        A = rng.normal(size=(n, n))
        A *= radius / max(np.abs(np.linalg.eigvals(A)))
        B = rng.normal(size=(n, m))
        C = rng.normal(size=(p, n))
        return cls(A, B, C, np.zeros((p, m)), stable=True, **kwargs)

    def spectral_radius(self) -> float:
        return float(np.abs(np.linalg.eigvals(self.A)).max(initial=0.0))

    def input_limits(self) -> np.ndarray:
        return self._input_bounds.copy()

    def output(self, u=None) -> np.ndarray:
        u = np.zeros(self.m) if u is None else np.asarray(u, float).reshape(self.m)
        return self.C @ self.x + self.D @ u

    def step(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=float).reshape(self.m)
        lo, hi = self._input_bounds[:, 0], self._input_bounds[:, 1]
        u_applied = np.clip(u, lo, hi)
        self.last_saturated = bool(np.any(u_applied != u))
        self.last_input = u_applied
        y = self.output(u_applied)
        self.last_true_output = y
        self.x = self.A @ self.x + self.B @ u_applied
        if np.any(self.noise_std > 0):
            y = y + self.noise_std * self.rng.standard_normal(self.p)
        return y


class PlanarArm:
    """Planar serial arm driven by joint velocities.

    ``theta(k+1) = theta(k) + T_s * u(k)``; the output is the end-effector
    pose ``(x, y, heading)`` with ``heading = sum(theta)``. Inputs outside the
    joint rate limits are clipped and the step is flagged.
    """

    p = 3

    def __init__(self, link_lengths=(0.5, 0.4, 0.3), joint_angles=None, sample_period: float = 0.1,
                 joint_rate_limits=(-np.pi / 6, np.pi / 6), noise_std=0.0, seed=None):
        self.link_lengths = np.asarray(link_lengths, dtype=float).reshape(-1)
        if np.any(self.link_lengths <= 0):
            raise InvalidArgumentError("link lengths must be positive")
        self.m = self.link_lengths.size
        self.theta = (
            np.zeros(self.m) if joint_angles is None else np.asarray(joint_angles, float).reshape(self.m).copy()
        )
        self.sample_period = float(sample_period)
        self.joint_rate_limits = tuple(float(v) for v in joint_rate_limits)
        if self.joint_rate_limits[0] > self.joint_rate_limits[1]:
            raise InvalidArgumentError(f"invalid joint rate limits {joint_rate_limits}")
        self.noise_std = np.broadcast_to(np.asarray(noise_std, dtype=float), (self.p,)).copy()
        self.rng = np.random.default_rng(seed)
        self.last_true_output = self.forward_kinematics(self.theta)
        self.last_saturated = False

    @property
    def reach(self) -> float:
        return float(self.link_lengths.sum())

    def forward_kinematics(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        phi = np.cumsum(theta)
        return np.array([
            np.sum(self.link_lengths * np.cos(phi)),
            np.sum(self.link_lengths * np.sin(phi)),
            phi[-1],
        ])

    def input_limits(self) -> np.ndarray:
        return np.tile(self.joint_rate_limits, (self.m, 1))

    def output(self) -> np.ndarray:
        return self.forward_kinematics(self.theta)

    def step(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=float).reshape(self.m)
        u_applied = np.clip(u, *self.joint_rate_limits)
        self.last_saturated = bool(np.any(u_applied != u))
        self.last_input = u_applied
        y = self.forward_kinematics(self.theta)
        self.last_true_output = y
        self.theta = self.theta + self.sample_period * u_applied
        if np.any(self.noise_std > 0):
            y = y + self.noise_std * self.rng.standard_normal(self.p)
        return y


def step(plant: Plant, u) -> np.ndarray:
    """Advance ``plant`` one sample with input ``u`` and return the output."""
    return plant.step(u)


@dataclass(frozen=True)
class ReferenceTrack:
    points: np.ndarray
    kind: str

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        object.__setattr__(self, "points", pts)

    def __len__(self) -> int:
        return self.points.shape[0]


def _polyline(waypoints: np.ndarray, length: int) -> np.ndarray:
    seg = np.linalg.norm(np.diff(waypoints, axis=0), axis=1)
    arc = np.concatenate([[0.0], np.cumsum(seg)])
    if arc[-1] == 0.0:
        return np.repeat(waypoints[:1], length, axis=0)
    s = np.linspace(0.0, arc[-1], length)
    return np.column_stack([np.interp(s, arc, waypoints[:, c]) for c in range(waypoints.shape[1])])


def make_reference(kind: str, params: dict, length: int, workspace: float | None = None) -> ReferenceTrack:
    """Build a reference of ``length`` samples.

    kinds and their params:

    * ``sinusoid``: ``offset``, ``amplitude``, ``frequency`` (cycles per
      track), optional ``phase`` (rad); all per channel.
    * ``polyline``: ``waypoints`` (sequence of points), visited at constant
      speed with exact endpoints.
    * ``setpoint``: ``value``.

    Points farther than ``workspace`` from the origin only trigger a warning.
    """
    if length < 1:
        raise InvalidArgumentError(f"length must be positive, got {length}")
    if kind == "sinusoid":
        offset = np.atleast_1d(np.asarray(params.get("offset", 0.0), float))
        amp = np.atleast_1d(np.asarray(params["amplitude"], float))
        freq = np.atleast_1d(np.asarray(params.get("frequency", 1.0), float))
        phase = np.atleast_1d(np.asarray(params.get("phase", 0.0), float))
        offset, amp, freq, phase = np.broadcast_arrays(offset, amp, freq, phase)
        k = np.arange(length)[:, None] / length
        pts = offset + amp * np.sin(2.0 * np.pi * freq * k + phase)
    elif kind == "polyline":
        wp = np.asarray(params["waypoints"], float)
        if wp.ndim != 2 or wp.shape[0] < 1:
            raise InvalidArgumentError("polyline needs a sequence of waypoints")
        pts = _polyline(wp, length)
    elif kind == "setpoint":
        value = np.atleast_1d(np.asarray(params["value"], float))
        pts = np.tile(value, (length, 1))
    else:
        raise InvalidArgumentError(f"unknown reference kind {kind!r}")
    if workspace is not None:
        dist = np.linalg.norm(pts[:, : min(2, pts.shape[1])], axis=1)
        if np.any(dist > workspace):
            warnings.warn(
                f"reference leaves the reachable workspace (max radius {dist.max():.3f} > {workspace:.3f})",
                stacklevel=2,
            )
    return ReferenceTrack(pts, kind)


def stack_references(*tracks: ReferenceTrack) -> ReferenceTrack:
    """Concatenate tracks channel-wise (all must have equal length)."""
    lengths = {len(t) for t in tracks}
    if len(lengths) != 1:
        raise InvalidArgumentError(f"tracks have different lengths {sorted(lengths)}")
    return ReferenceTrack(np.hstack([t.points for t in tracks]), "+".join(t.kind for t in tracks))


_LETTERS = {
    # unit-height strokes, origin at bottom-left, width 0.6
    "M": [(0.0, 0.0), (0.0, 1.0), (0.3, 0.5), (0.6, 1.0), (0.6, 0.0)],
    "S": [(0.6, 1.0), (0.0, 1.0), (0.0, 0.5), (0.6, 0.5), (0.6, 0.0), (0.0, 0.0)],
    "U": [(0.0, 1.0), (0.0, 0.0), (0.6, 0.0), (0.6, 1.0)],
}


def letter_waypoints(text: str, origin=(0.0, 0.0), height: float = 0.1, spacing: float = 0.3) -> np.ndarray:
    """Waypoints of block letters drawn as one continuous stroke."""
    pts = []
    x0, y0 = origin
    for i, ch in enumerate(text.upper()):
        if ch not in _LETTERS:
            raise InvalidArgumentError(f"no strokes defined for letter {ch!r}")
        dx = x0 + i * (0.6 + spacing) * height
        pts.extend((dx + height * a, y0 + height * b) for a, b in _LETTERS[ch])
    return np.asarray(pts)


@dataclass(frozen=True)
class Box:
    """Axis-aligned box on the output channels listed in ``channels``."""

    lo: Sequence[float]
    hi: Sequence[float]
    channels: Sequence[int] = (0, 1)

    def __post_init__(self):
        lo = np.asarray(self.lo, float).reshape(-1)
        hi = np.asarray(self.hi, float).reshape(-1)
        ch = tuple(int(c) for c in self.channels)
        if not (lo.size == hi.size == len(ch)):
            raise InvalidArgumentError("box lo/hi/channels must have equal length")
        if np.any(hi - lo <= 0):
            raise InvalidArgumentError(f"box has zero or negative extent: lo={lo}, hi={hi}")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)
        object.__setattr__(self, "channels", ch)

    def contains(self, y) -> bool:
        y = np.asarray(y, float)
        v = y[list(self.channels)]
        return bool(np.all(v > self.lo) and np.all(v < self.hi))

    def faces(self):
        """Yield ``(channel, sign, bound)``: the outside of a face is ``sign * y_c <= bound``."""
        for c, lo, hi in zip(self.channels, self.lo, self.hi):
            yield c, 1.0, lo
            yield c, -1.0, -hi


@dataclass(frozen=True)
class SeparatingFace:
    """``sign * y[channel] <= bound`` keeps a point outside the box."""

    channel: int
    sign: float
    bound: float

    def value(self, y) -> np.ndarray:
        """Signed violation ``sign * y_c - bound`` (positive means inside)."""
        y = np.asarray(y, float)
        return self.sign * y[..., self.channel] - self.bound


def choose_face(box: Box, reference) -> SeparatingFace:
    """Face whose outer halfspace the reference violates least (lowest index on ties)."""
    ref = np.asarray(reference, float)
    best, best_cost = None, np.inf
    for c, sign, bound in box.faces():
        cost = np.maximum(sign * ref[:, c] - bound, 0.0).sum()
        if cost < best_cost - 1e-15:
            best, best_cost = SeparatingFace(c, sign, bound), cost
    return best


def unsafe_box_constraint(box: Box, N: int, p: int, m: int, reference=None, face: SeparatingFace | None = None,
                          margin: float = 0.0) -> list[Halfspace]:
    """Halfspace rows keeping every predicted output on the safe side of one box face.

    One row per prediction step: ``sign * y_c(j) <= bound - margin``. The face
    is ``face`` if given, otherwise the one chosen by :func:`choose_face` from
    ``reference``.
    """
    if face is None:
        if reference is None:
            raise InvalidArgumentError("either a face or a reference is required")
        face = choose_face(box, reference)
    rows = []
    for j in range(N):
        a_y = np.zeros(p * N)
        a_y[j * p + face.channel] = face.sign
        rows.append(Halfspace(a_y, np.zeros(m * N), face.bound - margin))
    return rows
