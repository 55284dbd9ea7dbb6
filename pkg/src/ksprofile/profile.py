"""Weighted monitors, blow-up profile extraction and decay fits."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import (
    DegenerateDenominator,
    EmptyAnnulus,
    NonpositiveProfile,
    NotCauchy,
    RangeViolation,
    WrongVerdict,
)
from .exponents import ModelParams, critical_alpha, lower_bound_alpha
from .grid import RadialGrid, interior_gradient
from .report import RunReport, Snapshot, Verdict


def _u(state):
    return np.asarray(getattr(state, "u", state), dtype=float)


def _v(state):
    return np.asarray(getattr(state, "v", state), dtype=float)


def weighted_sup(grid: RadialGrid, state, alpha: float) -> float:
    """max_k r_k^alpha u_k."""
    if alpha < 0:
        raise RangeViolation(f"alpha must be >= 0, got {alpha!r}")
    u = _u(state)
    if alpha == 0:
        return float(u.max())
    return float(np.max(grid.centers**alpha * u))


def cell_gradient(grid: RadialGrid, field) -> np.ndarray:
    """Radial derivative at cell centres: mean of the two adjacent face
    gradients.  The origin face contributes its symmetry value 0; the outer
    cell uses its interior face alone."""
    G = interior_gradient(grid, field)
    out = np.empty(grid.N)
    out[0] = 0.5 * G[0]
    out[1:-1] = 0.5 * (G[:-1] + G[1:])
    out[-1] = G[-1]
    return out


def weighted_gradient_norm(grid: RadialGrid, state, theta: float, beta: float) -> float:
    """Quadrature of int_0^R r^(theta beta) |dv/dr|^theta r^(n-1) dr."""
    if not theta > 1:
        raise RangeViolation(f"theta must exceed 1, got {theta!r}")
    if not beta > 0:
        raise RangeViolation(f"beta must be positive, got {beta!r}")
    grad = np.abs(cell_gradient(grid, _v(state)))
    return float(np.dot(grid.volumes, grid.centers ** (theta * beta) * grad**theta))


def v_gradient_sup(grid: RadialGrid, state, beta: float) -> float:
    """max_k r_k^beta |dv/dr|_k."""
    grad = np.abs(cell_gradient(grid, _v(state)))
    return float(np.max(grid.centers**beta * grad))


@dataclass(frozen=True)
class CauchyCheck:
    """Relative sup distances between two snapshots on r >= r_cut, for the
    fields and their first and second differences."""

    distances: dict
    tol: float

    @property
    def worst(self) -> float:
        return max(self.distances.values())

    @property
    def passed(self) -> bool:
        return self.worst <= self.tol


def _scales(field):
    d1 = np.diff(field)
    d2 = np.diff(d1)
    return [np.abs(field).max(), np.abs(d1).max(), np.abs(d2).max()]


def snapshot_distance(grid: RadialGrid, a: Snapshot, b: Snapshot, r_cut: float, reference=None) -> dict:
    """Sup distances between ``a`` and ``b`` on the annulus r >= r_cut.

    Distances are normalised by the magnitudes of ``reference`` (default
    ``b``) so that, for a fixed reference, each entry is a metric.
    """
    mask = grid.centers >= r_cut
    if mask.sum() < 3:
        raise EmptyAnnulus(f"fewer than 3 cells with r >= {r_cut!r}")
    reference = b if reference is None else reference
    out = {}
    for name in ("u", "v"):
        fa = getattr(a, name)[mask]
        fb = getattr(b, name)[mask]
        ref = getattr(reference, name)[mask]
        diffs = [fa - fb, np.diff(fa - fb), np.diff(fa - fb, 2)]
        for order, (d, scale) in enumerate(zip(diffs, _scales(ref))):
            out[f"{name}_d{order}"] = float(np.abs(d).max() / scale) if scale > 0 else float(np.abs(d).max())
    return out


def cauchy_check(grid, a, b, r_cut, tol, reference=None) -> CauchyCheck:
    return CauchyCheck(snapshot_distance(grid, a, b, r_cut, reference), tol)


def extract_profile(report: RunReport, *, r_cut: float | None = None, profile_tol: float = 1e-3):
    """Profile (U, V, t_profile) from the last snapshot of a blown-up run.

    The last two snapshots must agree on r >= r_cut (default 0.2 R) within
    ``profile_tol``, relative, in value and in first and second differences.
    """
    if report.verdict is not Verdict.BLOWN_UP:
        raise WrongVerdict(f"profile extraction needs verdict BlownUp, got {report.verdict}")
    if len(report.snapshots) < 3:
        raise NotCauchy(f"need at least 3 snapshots, have {len(report.snapshots)}")
    grid = report.grid
    if r_cut is None:
        r_cut = 0.2 * grid.R
    last, prev = report.snapshots[-1], report.snapshots[-2]
    check = cauchy_check(grid, prev, last, r_cut, profile_tol)
    if not check.passed:
        raise NotCauchy(
            f"snapshots at t={prev.t!r} and t={last.t!r} differ by {check.worst:.3e} "
            f"(> {profile_tol:.1e}) on r >= {r_cut!r}"
        )
    return last.u.copy(), last.v.copy(), last.t


@dataclass(frozen=True)
class ProfileFit:
    annulus: tuple[float, float]
    slope: float
    intercept: float
    residual: float
    alpha: float | None
    C_alpha: float | None
    cells: int


def fit_decay_exponent(grid: RadialGrid, U, annulus=None, alpha: float | None = None) -> ProfileFit:
    """Least-squares power law U ~ exp(intercept) r^(-slope) on the annulus.

    ``C_alpha`` is max_k U_k r_k^alpha over the whole grid.
    """
    U = np.asarray(U, dtype=float)
    if annulus is None:
        annulus = (0.05 * grid.R, 0.3 * grid.R)
    r_in, r_out = annulus
    if not 0 < r_in < r_out <= grid.R:
        raise EmptyAnnulus(f"invalid annulus {annulus!r}")
    mask = (grid.centers >= r_in) & (grid.centers <= r_out)
    cells = int(mask.sum())
    if cells < 8:
        raise EmptyAnnulus(f"annulus {annulus!r} holds {cells} cells, need >= 8")
    if np.any(U[mask] <= 0):
        raise NonpositiveProfile("profile must be positive on the fitting annulus")
    x = np.log(grid.centers[mask])
    y = np.log(U[mask])
    A = np.column_stack([x, np.ones_like(x)])
    (b, c), *_ = np.linalg.lstsq(A, y, rcond=None)
    residual = float(np.abs(y - (b * x + c)).max())
    C = None
    if alpha is not None:
        C = weighted_sup(grid, U, alpha)
    return ProfileFit(annulus=(float(r_in), float(r_out)), slope=float(-b), intercept=float(c),
                      residual=residual, alpha=alpha, C_alpha=C, cells=cells)


@dataclass(frozen=True)
class BoundsVerdict:
    slope: float
    critical_alpha: float | None
    lower_bound_alpha: float
    margin: float
    upper_consistent: bool
    lower_consistent: bool

    @property
    def suspicious(self) -> bool:
        """Fitted decay steeper than the critical exponent plus margin."""
        return not self.upper_consistent


def check_profile_bounds(fit: ProfileFit, params: ModelParams, margin: float = 0.5) -> BoundsVerdict:
    try:
        crit = critical_alpha(params)
    except DegenerateDenominator:
        crit = None
    lower = lower_bound_alpha(params.m, params.q)
    upper_ok = True if crit is None else fit.slope <= crit + margin
    lower_ok = (not math.isinf(lower)) and fit.slope >= lower - margin
    return BoundsVerdict(slope=fit.slope, critical_alpha=crit, lower_bound_alpha=lower,
                         margin=margin, upper_consistent=upper_ok, lower_consistent=lower_ok)
