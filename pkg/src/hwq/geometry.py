"""Geometry maps from the unit parametric cube to physical domains.

A map is the composition of an affine scaling of ``[0, 1]^d`` onto a
parametric box and a forward map ``F`` defined on that box. The mass-matrix
coefficient is ``c = |det J|`` of the composition.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

KINDS = ("identity", "affine", "polar2d", "polar3d")


@dataclass(frozen=True)
class GeometryMap:
    """Map from ``[0, 1]^d`` to a physical domain.

    Attributes:
        kind: One of ``identity``, ``affine``, ``polar2d``, ``polar3d``.
        dim: Dimension.
        lower: Lower corner of the parametric box.
        upper: Upper corner of the parametric box.
        matrix: Linear part of an affine map (``affine`` only).
        shift: Translation of an affine map (``affine`` only).
    """

    kind: str
    dim: int
    lower: tuple[float, ...]
    upper: tuple[float, ...]
    matrix: tuple[tuple[float, ...], ...] | None = field(default=None)
    shift: tuple[float, ...] | None = field(default=None)

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ValueError(f"unknown geometry kind {self.kind!r}")
        if self.kind == "polar2d" and self.dim != 2:
            raise ValueError("polar2d is two-dimensional")
        if self.kind == "polar3d" and self.dim != 3:
            raise ValueError("polar3d is three-dimensional")

    @property
    def scale(self) -> np.ndarray:
        return np.asarray(self.upper) - np.asarray(self.lower)

    def to_box(self, xhat: np.ndarray) -> np.ndarray:
        """Affine image of unit-cube points in the parametric box."""
        xhat = np.asarray(xhat, dtype=np.float64).reshape(-1, self.dim)
        return np.asarray(self.lower) + self.scale * xhat

    def forward(self, xhat: np.ndarray) -> np.ndarray:
        """Physical coordinates of unit-cube points, shape ``(M, d)``."""
        y = self.to_box(xhat)
        if self.kind == "identity":
            return y
        if self.kind == "affine":
            return y @ np.asarray(self.matrix).T + np.asarray(self.shift)
        if self.kind == "polar2d":
            rho, th = y[:, 0], y[:, 1]
            return np.stack([rho * np.cos(th), rho * np.sin(th)], axis=1)
        rho, th, ph = y[:, 0], y[:, 1], y[:, 2]
        return np.stack(
            [rho * np.cos(th), rho * np.sin(th) * np.cos(ph), rho * np.sin(th) * np.sin(ph)],
            axis=1,
        )

    def jacobian_det(self, xhat: np.ndarray) -> np.ndarray:
        """``|det J|`` of the composed map at unit-cube points.

        Raises:
            ValueError: If a determinant is not finite.
        """
        y = self.to_box(xhat)
        vol = float(np.prod(self.scale))
        if self.kind == "identity":
            det = np.full(y.shape[0], vol)
        elif self.kind == "affine":
            det = np.full(y.shape[0], vol * abs(np.linalg.det(np.asarray(self.matrix))))
        elif self.kind == "polar2d":
            det = vol * np.abs(y[:, 0])
        else:
            det = vol * np.abs(y[:, 0] ** 2 * np.sin(y[:, 1]))
        if not np.all(np.isfinite(det)):
            raise ValueError("non-finite Jacobian determinant")
        return det


def identity_map(d: int) -> GeometryMap:
    """Identity on the unit cube."""
    return GeometryMap("identity", d, (0.0,) * d, (1.0,) * d)


def affine_map(d: int, matrix: Sequence[Sequence[float]] | None = None,
               shift: Sequence[float] | None = None) -> GeometryMap:
    """Affine map ``x -> A x + b`` of the unit cube.

    The default matrix is upper triangular with diagonal ``2, 1.5, 1.25``
    and off-diagonal entries ``0.5``.
    """
    if matrix is None:
        diag = [2.0, 1.5, 1.25][:d]
        matrix = [[diag[i] if i == j else (0.5 if j > i else 0.0) for j in range(d)]
                  for i in range(d)]
    a = tuple(tuple(float(v) for v in row) for row in matrix)
    if abs(np.linalg.det(np.asarray(a))) == 0.0:
        raise ValueError("affine matrix is singular")
    b = tuple(float(v) for v in (shift if shift is not None else [0.0] * d))
    return GeometryMap("affine", d, (0.0,) * d, (1.0,) * d, a, b)


def polar2d_map() -> GeometryMap:
    """Annular sector ``(rho, theta) -> (rho cos theta, rho sin theta)``.

    The parametric box is ``[1, 2] x [pi/4, 3 pi/4]``.
    """
    return GeometryMap("polar2d", 2, (1.0, np.pi / 4), (2.0, 3 * np.pi / 4))


def polar3d_map() -> GeometryMap:
    """Spherical shell sector.

    ``(rho, theta, phi) -> (rho cos theta, rho sin theta cos phi,
    rho sin theta sin phi)`` on ``[1, 2] x [pi/4, 3 pi/4] x [0, pi/2]``.
    """
    return GeometryMap("polar3d", 3, (1.0, np.pi / 4, 0.0), (2.0, 3 * np.pi / 4, np.pi / 2))


def make_geometry(kind: str, d: int) -> GeometryMap:
    """Geometry map by name.

    Raises:
        ValueError: For unknown kinds or a dimension the kind does not support.
    """
    if kind == "identity":
        return identity_map(d)
    if kind == "affine":
        return affine_map(d)
    if kind == "polar2d":
        if d != 2:
            raise ValueError("polar2d requires --dim 2")
        return polar2d_map()
    if kind == "polar3d":
        if d != 3:
            raise ValueError("polar3d requires --dim 3")
        return polar3d_map()
    raise ValueError(f"unknown geometry kind {kind!r}")
