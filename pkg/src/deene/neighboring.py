"""Neighboring-extremal corrections of a nominal DeePC solution.

Given a nominal optimizer ``g0`` for ``(w_ini0, r0)`` with active constraint
rows ``C`` (``C g0 = h_C``), a new window and reference are absorbed by the
linear update

    dg = K1 dw_ini + K2 dr + K3 Jbar_g(g0)

where ``[K1 | K2 | K3] = -[I 0] Ko [J_gw | J_gr | I ; 0 | 0 | 0]`` and
``Ko = [J_gg C'; C 0]^-1``. The last term vanishes at an optimal nominal
point. Because the DeePC cost is quadratic and the constraints affine, the
update is exact as long as the active set does not change.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .errors import InvalidArgumentError, SingularKKTError, StaleGainsError
from .qp_core import RangeSpaceKKT, cholesky

#: Relative singular-value floor for the active constraint Jacobian.
ACTIVE_RANK_RTOL = 1e-10

_REMEDY = (
    "active constraint rows are not linearly independent; a constraint "
    "back-propagation step would be needed to proceed (not implemented)"
)


def fingerprint(active_set) -> tuple[int, ...]:
    return tuple(sorted(int(i) for i in active_set))


def _check_rank(C: np.ndarray) -> None:
    s = np.linalg.svd(C, compute_uv=False)
    if s.size and (s[0] == 0.0 or s[-1] < ACTIVE_RANK_RTOL * s[0] or s.size < C.shape[0]):
        rank = int(np.sum(s > ACTIVE_RANK_RTOL * s[0])) if s[0] > 0 else 0
        raise SingularKKTError(f"{_REMEDY} (rank {rank} < {C.shape[0]})", rank, C.shape[0])


def recover_multipliers(J_g, C_g_active) -> np.ndarray:
    """Least-squares multipliers ``mu = -(C C')^-1 C J_g`` of the active rows.

    Reproduces the stationarity multipliers whenever ``J_g`` lies in the row
    space of ``C``. An empty active set returns an empty vector.
    """
    J_g = np.asarray(J_g, dtype=float).reshape(-1)
    C = np.asarray(C_g_active, dtype=float)
    if C.size == 0:
        return np.zeros(0)
    C = C.reshape(-1, J_g.size)
    _check_rank(C)
    CCt = C @ C.T
    return -sla.solve(CCt, C @ J_g, assume_a="pos", check_finite=False)


@dataclass(frozen=True)
class CorrectionGains:
    """Feedback gains for one active set.

    ``K3`` multiplies the (augmented) cost gradient at the nominal point.
    ``kkt`` is the factorization of the saddle-point block the gains came from.
    """

    K1: np.ndarray
    K2: np.ndarray
    K3: np.ndarray
    built_from: tuple[int, ...]
    kkt: RangeSpaceKKT | None = None


@dataclass(frozen=True)
class NominalPoint:
    """State carried from one correction to the next."""

    g0: np.ndarray
    w_ini0: np.ndarray
    r0: np.ndarray
    mu0: np.ndarray
    active_set: tuple[int, ...]
    kkt_factorization: RangeSpaceKKT | None = None
    is_optimal: bool = False

    @property
    def fingerprint(self) -> tuple[int, ...]:
        return fingerprint(self.active_set)


def build_correction(
    hessian,
    C_g_active,
    J_gw_ini,
    J_gr,
    active_set=None,
    hessian_factor=None,
    hessian_inverse: np.ndarray | None = None,
) -> CorrectionGains:
    """Factorize the saddle-point block and form ``K1``, ``K2``, ``K3``.

    Args:
        hessian: ``J_gg``, symmetric positive definite.
        C_g_active: ``(n_a, L)`` Jacobian of the active constraints.
        J_gw_ini, J_gr: mixed second derivatives of the cost.
        active_set: constraint indices of the rows of ``C_g_active``; used as
            the gains' fingerprint (defaults to ``range(n_a)``).
        hessian_factor, hessian_inverse: optional cached Cholesky factor and
            inverse of ``hessian``.

    Raises:
        SingularKKTError: the active rows are rank deficient.
    """
    H = np.asarray(hessian, dtype=float)
    L = H.shape[0]
    C = np.asarray(C_g_active, dtype=float).reshape(-1, L)
    if active_set is None:
        active_set = range(C.shape[0])
    active_set = tuple(int(i) for i in active_set)
    if len(active_set) != C.shape[0]:
        raise InvalidArgumentError(f"active_set lists {len(active_set)} rows, C has {C.shape[0]}")
    if C.shape[0]:
        _check_rank(C)
    factor = hessian_factor if hessian_factor is not None else cholesky(H)
    kkt = RangeSpaceKKT(factor, C)
    if hessian_inverse is None:
        P = kkt.reduced_inverse()
    elif C.shape[0]:
        P = hessian_inverse - kkt.W @ sla.cho_solve(kkt.S_factor, kkt.W.T, check_finite=False)
    else:
        P = hessian_inverse
    K3 = -P
    order = np.argsort(active_set, kind="stable")
    return CorrectionGains(
        K1=K3 @ np.asarray(J_gw_ini, dtype=float),
        K2=K3 @ np.asarray(J_gr, dtype=float),
        K3=K3,
        built_from=tuple(active_set[i] for i in order),
        kkt=kkt,
    )


def _check_fresh(nominal: NominalPoint, gains: CorrectionGains) -> None:
    if nominal.fingerprint != gains.built_from:
        raise StaleGainsError(
            f"gains built for active set {gains.built_from}, nominal has {nominal.fingerprint}"
        )


def correct_optimal(nominal: NominalPoint, gains: CorrectionGains, delta_w_ini, delta_r) -> np.ndarray:
    """``dg = K1 dw_ini + K2 dr`` around an optimal nominal point."""
    if not nominal.is_optimal:
        raise InvalidArgumentError("nominal point is not flagged optimal; use correct_nonoptimal")
    _check_fresh(nominal, gains)
    return gains.K1 @ np.asarray(delta_w_ini, float) + gains.K2 @ np.asarray(delta_r, float)


def correct_nonoptimal(
    nominal: NominalPoint, gains: CorrectionGains, delta_w_ini, delta_r, J_g_at_nominal
) -> np.ndarray:
    """``dg = K1 dw_ini + K2 dr + K3 Jbar_g`` around a feasible, possibly non-optimal point.

    ``J_g_at_nominal`` may be the plain cost gradient or the augmented one
    (``J_g + C' mu0``); the multiplier part lies in the range of ``C'`` and
    is annihilated by ``K3``, so both give the same step.
    """
    _check_fresh(nominal, gains)
    return (
        gains.K1 @ np.asarray(delta_w_ini, float)
        + gains.K2 @ np.asarray(delta_r, float)
        + gains.K3 @ np.asarray(J_g_at_nominal, float)
    )


def augmented_gradient(J_g, C_g_active, mu) -> np.ndarray:
    """``Jbar_g = J_g + C' mu``."""
    J_g = np.asarray(J_g, float)
    C = np.asarray(C_g_active, float)
    if C.size == 0:
        return J_g.copy()
    return J_g + C.reshape(-1, J_g.size).T @ np.asarray(mu, float)


def kkt_residual(hessian, C_g_active, J_gw_ini, J_gr, delta_g, delta_mu, delta_w_ini, delta_r, J_g=None):
    """Residual of the linearized KKT system satisfied by ``(dg, dmu)``.

    Returns the max-abs residual of both block rows.
    """
    H = np.asarray(hessian, float)
    C = np.asarray(C_g_active, float).reshape(-1, H.shape[0])
    top = H @ delta_g + J_gw_ini @ delta_w_ini + J_gr @ delta_r
    if C.shape[0]:
        top = top + C.T @ delta_mu
    if J_g is not None:
        top = top + J_g
    bottom = C @ delta_g
    return float(max(np.abs(top).max(initial=0.0), np.abs(bottom).max(initial=0.0)))
