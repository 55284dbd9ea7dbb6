"""Graded radial finite-volume mesh on the ball B_R(0) in n dimensions.

Cells are ``[f_{k-1}, f_k]`` with ``f_0 = 0`` and ``f_N = R``; values live at
cell midpoints.  The surface measure of the unit sphere is dropped
throughout, so the measure of a cell is ``(f_k^n - f_{k-1}^n)/n`` and the
reduced mass of a field is ``sum(omega * u)``, the quadrature of
``int_0^R u r^(n-1) dr``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import NonzeroBoundaryFlux, RangeViolation, ShapeMismatch

MAX_GRADING = 1.2


@dataclass(frozen=True, eq=False)
class RadialGrid:
    n: int
    R: float
    faces: np.ndarray
    centers: np.ndarray
    volumes: np.ndarray

    def __post_init__(self):
        for arr in (self.faces, self.centers, self.volumes):
            arr.setflags(write=False)

    @property
    def N(self) -> int:
        return self.centers.size

    @cached_property
    def widths(self) -> np.ndarray:
        return np.diff(self.faces)

    @cached_property
    def center_spacing(self) -> np.ndarray:
        """r_{k+1} - r_k at the N-1 interior faces."""
        return np.diff(self.centers)

    @cached_property
    def face_areas(self) -> np.ndarray:
        """f^(n-1) at all N+1 faces."""
        return self.faces ** (self.n - 1)

    def mass(self, field) -> float:
        """Reduced integral sum(omega_k * field_k)."""
        return float(np.dot(self.volumes, field))

    def ball_measure(self) -> float:
        return self.R**self.n / self.n


def make_grid(n: int, R: float, faces) -> RadialGrid:
    faces = np.asarray(faces, dtype=float)
    if faces[0] != 0.0 or not np.all(np.diff(faces) > 0):
        raise RangeViolation("faces must start at 0 and increase strictly")
    centers = 0.5 * (faces[1:] + faces[:-1])
    volumes = np.diff(faces**n) / n
    return RadialGrid(n=int(n), R=float(R), faces=faces, centers=centers, volumes=volumes)


def build_graded_grid(R: float, N: int, grading: float = 1.0, n: int = 3, *, min_cells: int = 8) -> RadialGrid:
    """Geometric mesh with the finest cell at the origin.

    Adjacent widths grow by the factor ``grading`` outward; ``grading = 1``
    gives the uniform mesh.
    """
    if N < min_cells:
        raise RangeViolation(f"N={N} below the minimum of {min_cells} cells")
    if not 1.0 <= grading <= MAX_GRADING:
        raise RangeViolation(f"grading={grading} outside [1, {MAX_GRADING}]")
    if not R > 0:
        raise RangeViolation(f"R must be positive, got {R}")
    if n < 2:
        raise RangeViolation(f"n must be >= 2, got {n}")
    if grading == 1.0:
        faces = R * np.arange(N + 1) / N
    else:
        widths = grading ** np.arange(N)
        faces = np.concatenate(([0.0], np.cumsum(widths)))
        faces *= R / faces[-1]
    faces[-1] = R
    return make_grid(n, R, faces)


def _check(grid: RadialGrid, values, size, what):
    values = np.asarray(values, dtype=float)
    if values.shape != (size,):
        raise ShapeMismatch(f"{what} has shape {values.shape}, expected ({size},)")
    return values


def interior_gradient(grid: RadialGrid, field) -> np.ndarray:
    """Two-point differences at the N-1 interior faces."""
    field = _check(grid, field, grid.N, "field")
    return np.diff(field) / grid.center_spacing


def face_gradient(grid: RadialGrid, field) -> np.ndarray:
    """Radial derivative at all N+1 faces; zero at the origin (symmetry)
    and at r = R (no flux)."""
    out = np.zeros(grid.N + 1)
    out[1:-1] = interior_gradient(grid, field)
    return out


def divergence_of_flux(grid: RadialGrid, face_flux, *, no_flux: bool = False) -> np.ndarray:
    """Finite-volume divergence (f_k^(n-1) F_k - f_(k-1)^(n-1) F_(k-1)) / omega_k.

    ``sum(omega * div)`` telescopes to ``R^(n-1) F_N`` exactly.
    """
    face_flux = _check(grid, face_flux, grid.N + 1, "face_flux")
    if no_flux and (face_flux[0] != 0.0 or face_flux[-1] != 0.0):
        raise NonzeroBoundaryFlux(
            f"boundary fluxes ({face_flux[0]!r}, {face_flux[-1]!r}) must vanish"
        )
    weighted = grid.face_areas * face_flux
    return np.diff(weighted) / grid.volumes


def radial_laplacian(grid: RadialGrid, field) -> np.ndarray:
    return divergence_of_flux(grid, face_gradient(grid, field))


def laplacian_coefficients(grid: RadialGrid, face_coeff=None):
    """Tridiagonal stencil of u -> div(c grad u) with no-flux boundaries.

    Returns ``(lower, diag, upper)`` of length N, where ``lower[k]``
    multiplies ``u[k-1]`` and ``upper[k]`` multiplies ``u[k+1]`` in row k.
    ``face_coeff`` holds the coefficient at the N-1 interior faces.
    """
    trans = grid.face_areas[1:-1] / grid.center_spacing
    if face_coeff is not None:
        trans = trans * face_coeff
    lower = np.zeros(grid.N)
    upper = np.zeros(grid.N)
    lower[1:] = trans / grid.volumes[1:]
    upper[:-1] = trans / grid.volumes[:-1]
    diag = -(lower + upper)
    return lower, diag, upper


def laplacian_matrix(grid: RadialGrid) -> np.ndarray:
    """Dense matrix of :func:`radial_laplacian`, for small-grid checks."""
    lower, diag, upper = laplacian_coefficients(grid)
    return np.diag(diag) + np.diag(upper[:-1], 1) + np.diag(lower[1:], -1)
