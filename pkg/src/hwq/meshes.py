"""Deterministic and random admissible hierarchical meshes for tests and benchmarks."""

from __future__ import annotations

from typing import Iterator

import numpy as np

from .hierarchy import (
    HierarchicalBasis,
    HierarchicalMesh,
    SpaceHierarchy,
    admissible_refine,
    build_hierarchy,
    compute_active_basis,
)


def _centers(mesh: HierarchicalMesh, level: int) -> np.ndarray:
    m = mesh.active_multi(level)
    return (m + 0.5) / np.asarray(mesh.element_dims(level), dtype=np.float64)


def sphere_band_sequence(
    degree: int,
    dim: int,
    base: int,
    r: int,
    n_steps: int,
    center: float = 0.3,
    radius: float = 0.6,
    width: float = 1.5,
) -> Iterator[HierarchicalBasis]:
    """Meshes refined towards the sphere ``|x - center| = radius`` one level per step.

    Step ``k`` refines every finest-level element whose center lies within
    ``width`` element diagonals of the sphere, then restores admissibility.
    The first basis yielded is the uniform level-0 one.
    """
    h = build_hierarchy(degree, dim, base, n_steps)
    mesh = HierarchicalMesh.uniform(h.base, r)
    c = np.full(dim, center)
    yield compute_active_basis(mesh, h)
    for lev in range(n_steps):
        top = mesh.n_levels - 1
        x = _centers(mesh, top)
        diag = np.sqrt(dim) / (base << top)
        dist = np.abs(np.linalg.norm(x - c, axis=1) - radius)
        sel = np.nonzero(dist <= width * diag)[0]
        m = mesh.active_multi(top)
        mesh = admissible_refine(mesh, [(top, tuple(m[i])) for i in sel], r, h)
        yield compute_active_basis(mesh, h)


def random_admissible_mesh(
    rng: np.random.Generator,
    hierarchy: SpaceHierarchy,
    r: int,
    n_steps: int,
    marks_per_step: int = 3,
    max_functions: int | None = None,
) -> HierarchicalBasis:
    """Admissible mesh from random markings of active elements below the finest level.

    Marking stops early once the basis would exceed ``max_functions``.
    """
    mesh = HierarchicalMesh.uniform(hierarchy.base, r)
    basis = compute_active_basis(mesh, hierarchy)
    for _ in range(n_steps):
        lev = mesh.element_levels
        cand = np.nonzero(lev < hierarchy.max_level)[0]
        if cand.size == 0:
            break
        pick = rng.choice(cand, size=min(marks_per_step, cand.size), replace=False)
        marked = [(int(lev[i]), tuple(int(v) for v in mesh.element_multi[i])) for i in pick]
        new_mesh = admissible_refine(mesh, marked, r, hierarchy)
        new_basis = compute_active_basis(new_mesh, hierarchy)
        if max_functions is not None and new_basis.size > max_functions:
            break
        mesh, basis = new_mesh, new_basis
    return basis
